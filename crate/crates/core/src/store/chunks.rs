use super::{Episode, NormStats};
use crate::error::{Error, Result};

/// One training sample: the observation at step `t` and the normalized actions `t..t+n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkSample {
    pub episode: usize,
    pub step: usize,
    pub observation: Vec<f64>,
    /// `n` rows of normalized actions; rows past the episode end repeat the last action.
    pub actions: Vec<Vec<f64>>,
    /// False for padded rows.
    pub mask: Vec<bool>,
}

/// Every step of every episode as a chunk sample.
pub fn load_chunks(dataset: &[Episode], n: usize, stats: &NormStats, with_ft: bool) -> Result<Vec<ChunkSample>> {
    if n == 0 {
        return Err(Error::config("chunk size must be at least 1"));
    }
    let obs_stats = stats.observation_stats(with_ft);
    let mut out = Vec::new();
    for (ei, ep) in dataset.iter().enumerate() {
        let actions: Vec<Vec<f64>> = ep
            .steps
            .iter()
            .map(|s| stats.action.normalize(&s.action()))
            .collect();
        let len = actions.len();
        for (t, step) in ep.steps.iter().enumerate() {
            let mut rows = Vec::with_capacity(n);
            let mut mask = Vec::with_capacity(n);
            for k in 0..n {
                let idx = t + k;
                mask.push(idx < len);
                rows.push(actions[idx.min(len - 1)].clone());
            }
            out.push(ChunkSample {
                episode: ei,
                step: t,
                observation: obs_stats.normalize(&step.observation(with_ft)),
                actions: rows,
                mask,
            });
        }
    }
    Ok(out)
}
