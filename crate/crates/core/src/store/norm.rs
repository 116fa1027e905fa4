use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Episode, OBS_FEATURES, WRENCH_FEATURES};
use crate::error::{Error, Result};

/// Mean and floored standard deviation per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl DimStats {
    /// Population statistics over `rows`; every std is at least `floor`.
    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>, floor: f64) -> Result<Self> {
        let mut count = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut rows_vec = Vec::new();
        for r in rows {
            if count == 0 {
                sum = vec![0.0; r.len()];
            } else if r.len() != sum.len() {
                return Err(Error::config("rows of different lengths"));
            }
            for (s, v) in sum.iter_mut().zip(r) {
                *s += v;
            }
            rows_vec.push(r);
            count += 1;
        }
        if count == 0 {
            return Err(Error::config("cannot compute statistics of an empty dataset"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        sq.resize(mean.len(), 0.0);
        // Second pass on centred values keeps the variance accurate for large offsets.
        for r in rows_vec {
            for ((q, v), m) in sq.iter_mut().zip(r).zip(&mean) {
                *q += (v - m) * (v - m);
            }
        }
        let std = sq
            .iter()
            .map(|q| (q / count as f64).sqrt().max(floor))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn unnormalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| x * s + m)
            .collect()
    }

    fn select(&self, keep: impl Fn(usize) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.dim()).filter(|&i| keep(i)).collect();
        Self {
            mean: idx.iter().map(|&i| self.mean[i]).collect(),
            std: idx.iter().map(|&i| self.std[i]).collect(),
        }
    }
}

/// Dataset-level normalization for policy observations (with wrench) and actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub observation: DimStats,
    pub action: DimStats,
}

impl NormStats {
    /// Observation statistics matching `StepRecord::observation(with_ft)`.
    pub fn observation_stats(&self, with_ft: bool) -> DimStats {
        if with_ft {
            return self.observation.clone();
        }
        self.observation
            .select(|i| i % OBS_FEATURES < OBS_FEATURES - WRENCH_FEATURES)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Per-dimension statistics over every step of every episode.
pub fn compute_norm_stats(dataset: &[Episode], std_floor: f64) -> Result<NormStats> {
    if dataset.is_empty() {
        return Err(Error::config("cannot compute statistics of an empty dataset"));
    }
    let obs: Vec<Vec<f64>> = dataset
        .iter()
        .flat_map(|e| e.steps.iter().map(|s| s.observation(true)))
        .collect();
    let act: Vec<Vec<f64>> = dataset
        .iter()
        .flat_map(|e| e.steps.iter().map(|s| s.action()))
        .collect();
    Ok(NormStats {
        observation: DimStats::from_rows(obs.iter().map(|r| r.as_slice()), std_floor)?,
        action: DimStats::from_rows(act.iter().map(|r| r.as_slice()), std_floor)?,
    })
}
