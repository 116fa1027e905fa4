//! Training loop: per-epoch timestep sampling, Adam with decoupled weight decay,
//! gradient clipping, periodic checkpoints and a loss curve.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::info;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, Policy};
use super::model::{image_patches, CompactModel, LossTerms, ModelDims, ModelInput, TrainExample};
use super::tape::ParamStore;
use super::PolicyConfig;
use crate::error::{Error, Result};
use crate::store::{Episode, NormStats};

pub const CHECKPOINT_FILE: &str = "checkpoint.cpck";
pub const CURVE_FILE: &str = "curve.csv";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub loss: LossTerms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub curve: Vec<CurvePoint>,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

impl TrainReport {
    /// Columns: epoch, total, l1, kl.
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("epoch,total,l1,kl\n");
        for p in &self.curve {
            let _ = writeln!(s, "{},{:.9},{:.9},{:.9}", p.epoch, p.loss.total, p.loss.l1, p.loss.kl);
        }
        s
    }
}

struct Adam {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    decay: Vec<bool>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &ParamStore) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            decay: params.names.iter().map(|n| n.ends_with(".w")).collect(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ParamStore, grads: &[Array2<f64>], lr: f64, weight_decay: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (i, g) in grads.iter().enumerate() {
            let wd = if self.decay[i] { weight_decay } else { 0.0 };
            ndarray::Zip::from(&mut params.values[i])
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = Self::B1 * *m + (1.0 - Self::B1) * g;
                    *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
                    let update = (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
                    *p -= lr * (update + wd * *p);
                });
        }
    }
}

/// Normalized per-step tensors of one episode, built once before training.
pub(crate) struct PreparedEpisode<'a> {
    episode: &'a Episode,
    observations: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
}

pub(crate) fn prepare<'a>(dataset: &'a [Episode], norm: &NormStats, with_ft: bool) -> Vec<PreparedEpisode<'a>> {
    let obs_stats = norm.observation_stats(with_ft);
    dataset
        .iter()
        .map(|ep| PreparedEpisode {
            episode: ep,
            observations: ep.steps.iter().map(|s| obs_stats.normalize(&s.observation(with_ft))).collect(),
            actions: ep.steps.iter().map(|s| norm.action.normalize(&s.action())).collect(),
        })
        .collect()
}

/// Training example at `step`: normalized observation, camera patches and the next
/// `chunk` normalized actions, padded with the last action and masked.
pub(crate) fn example(p: &PreparedEpisode, step: usize, dims: &ModelDims) -> Result<TrainExample> {
    let len = p.actions.len();
    let a = dims.action_dim();
    let mut actions = Array2::zeros((dims.chunk, a));
    let mut mask = Vec::with_capacity(dims.chunk);
    for k in 0..dims.chunk {
        let idx = step + k;
        mask.push(idx < len);
        let row = &p.actions[idx.min(len - 1)];
        actions.row_mut(k).assign(&ndarray::ArrayView1::from(row.as_slice()));
    }
    let rec = &p.episode.steps[step];
    let images = (0..dims.cameras)
        .map(|c| {
            let img = p.episode.images.image(c, rec.frames[c])?;
            image_patches(&img, dims.image_pool, dims.patch)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainExample {
        input: ModelInput {
            observation: p.observations[step].clone(),
            images,
        },
        actions,
        mask,
    })
}

fn check_dataset(dataset: &[Episode]) -> Result<()> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::config("training needs at least one episode"))?;
    let h = &first.header;
    for ep in dataset {
        let g = &ep.header;
        if g.task != h.task || g.arms != h.arms || g.cameras.len() != h.cameras.len() || g.image_width != h.image_width || g.image_height != h.image_height {
            return Err(Error::config("episodes differ in task, arm count or camera setup"));
        }
        if ep.steps.is_empty() {
            return Err(Error::config("episode without steps"));
        }
    }
    Ok(())
}

fn grad_norm(grads: &[Array2<f64>]) -> f64 {
    grads.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
}

/// Trains a policy on `dataset`. Deterministic for a fixed `config.seed`. With `out`,
/// a checkpoint is written every `checkpoint_every` epochs and at the end, along with
/// the loss curve. A non-finite loss stops training with an error after writing the
/// last good parameters.
pub fn train(dataset: &[Episode], norm: &NormStats, config: &PolicyConfig, out: Option<&Path>) -> Result<(Policy, TrainReport)> {
    config.validate()?;
    check_dataset(dataset)?;
    let h = &dataset[0].header;
    let dims = ModelDims::new(config, h.arms, h.cameras.len(), h.image_width, h.image_height)?;
    if norm.action.dim() != dims.action_dim() || norm.observation.dim() != dims.arms * crate::store::OBS_FEATURES {
        return Err(Error::config("normalization statistics do not match the dataset"));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut model = CompactModel::new(dims.clone(), &mut init_rng)?;
    info!(
        "training {} parameters on {} episodes for up to {} epochs",
        model.params.scalar_count(),
        dataset.len(),
        config.epochs
    );
    let prepared = prepare(dataset, norm, dims.with_ft);
    let mut adam = Adam::new(&model.params);
    let mut report = TrainReport {
        curve: Vec::with_capacity(config.epochs),
        epochs_run: 0,
        stopped_early: false,
    };
    let mut last_good = model.params.clone();
    let mut last_loss = LossTerms::default();
    let snapshot = |params: &ParamStore, epoch: usize, loss: LossTerms| Checkpoint {
        policy: Policy {
            task: h.task.clone(),
            model: CompactModel::from_params(dims.clone(), params.clone()).expect("same layout"),
            norm: norm.clone(),
            config: config.clone(),
        },
        epoch,
        loss,
    };

    for epoch in 0..config.epochs {
        let mut picks: Vec<(usize, usize)> = Vec::with_capacity(prepared.len() * config.samples_per_episode);
        for (e, p) in prepared.iter().enumerate() {
            for _ in 0..config.samples_per_episode {
                picks.push((e, rng.random_range(0..p.actions.len())));
            }
        }
        picks.shuffle(&mut rng);
        let mut sum = LossTerms::default();
        let mut seen = 0usize;
        for batch in picks.chunks(config.batch_size) {
            let examples = batch
                .iter()
                .map(|&(e, s)| example(&prepared[e], s, &dims))
                .collect::<Result<Vec<_>>>()?;
            let eps: Vec<Array2<f64>> = examples.iter().map(|_| model.sample_eps(&mut rng)).collect();
            let (terms, mut grads) = model.loss_and_grad(&examples, &eps, config.kl_weight)?;
            if !terms.total.is_finite() {
                if let Some(dir) = out {
                    snapshot(&last_good, epoch, last_loss).write(&dir.join(CHECKPOINT_FILE))?;
                    fs::write(dir.join(CURVE_FILE), report.curve_csv())?;
                }
                return Err(Error::Numerical(format!("training loss became non-finite at epoch {epoch}")));
            }
            if config.grad_clip > 0.0 {
                let n = grad_norm(&grads);
                if n > config.grad_clip {
                    let s = config.grad_clip / n;
                    for g in &mut grads {
                        *g *= s;
                    }
                }
            }
            adam.step(&mut model.params, &grads, config.learning_rate, config.weight_decay);
            let b = batch.len() as f64;
            sum.total += terms.total * b;
            sum.l1 += terms.l1 * b;
            sum.kl += terms.kl * b;
            seen += batch.len();
        }
        let n = seen as f64;
        let loss = LossTerms {
            total: sum.total / n,
            l1: sum.l1 / n,
            kl: sum.kl / n,
        };
        report.curve.push(CurvePoint { epoch, loss });
        report.epochs_run = epoch + 1;
        last_good.clone_from(&model.params);
        last_loss = loss;
        if epoch % 100 == 0 || epoch + 1 == config.epochs {
            info!("epoch {epoch}: loss {:.4} (l1 {:.4}, kl {:.4})", loss.total, loss.l1, loss.kl);
        }
        if let Some(dir) = out {
            if (epoch + 1) % config.checkpoint_every == 0 {
                snapshot(&model.params, epoch + 1, loss).write(&dir.join(CHECKPOINT_FILE))?;
                fs::write(dir.join(CURVE_FILE), report.curve_csv())?;
            }
        }
        if config.early_stop_l1 > 0.0 && loss.l1 < config.early_stop_l1 {
            report.stopped_early = true;
            break;
        }
    }
    let done = snapshot(&model.params, report.epochs_run, last_loss);
    if let Some(dir) = out {
        done.write(&dir.join(CHECKPOINT_FILE))?;
        fs::write(dir.join(CURVE_FILE), report.curve_csv())?;
    }
    Ok((done.policy, report))
}
