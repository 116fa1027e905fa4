//! Chunked CVAE imitation policy: hand-written reverse-mode autodiff, the model,
//! training with Adam, checkpoints, temporal ensembling and the rollout agent.

pub mod agent;
pub mod checkpoint;
pub mod ensemble;
pub mod model;
pub mod tape;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use agent::PolicyAgent;
pub use checkpoint::{Checkpoint, CheckpointHeader, Policy};
pub use ensemble::TemporalEnsemble;
pub use model::{image_patches, CompactModel, LossTerms, ModelDims, ModelInput, TrainExample};
pub use tape::{gaussian_kl, ParamStore, Tape};
pub use train::{train, CurvePoint, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// Actions predicted per query.
    pub chunk_size: usize,
    pub latent_dim: usize,
    /// Weight of the KL term.
    pub kl_weight: f64,
    /// Temporal ensembling decay.
    pub ensemble_m: f64,
    pub width: usize,
    pub heads: usize,
    pub ffn_width: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// Feed the measured wrench to the policy.
    pub use_ft: bool,
    /// Image patch side after pooling (px).
    pub patch: usize,
    /// Average-pooling factor applied to camera images.
    pub image_pool: usize,
    pub learning_rate: f64,
    /// Decoupled weight decay on weight matrices.
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Timesteps drawn from every episode per epoch.
    pub samples_per_episode: usize,
    /// Stop once an epoch's mean L1 falls below this; 0 disables early stopping.
    pub early_stop_l1: f64,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            chunk_size: 20,
            latent_dim: 32,
            kl_weight: 10.0,
            ensemble_m: 0.01,
            width: 32,
            heads: 4,
            ffn_width: 64,
            encoder_layers: 1,
            decoder_layers: 1,
            use_ft: true,
            patch: 8,
            image_pool: 2,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            grad_clip: 10.0,
            epochs: 2000,
            batch_size: 8,
            samples_per_episode: 8,
            early_stop_l1: 0.0,
            checkpoint_every: 500,
            seed: 0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_size == 0 || self.latent_dim == 0 || self.width == 0 || self.heads == 0 || self.ffn_width == 0 {
            return Err(Error::config("policy: chunk_size, latent_dim, width, heads and ffn_width must be at least 1"));
        }
        if self.width % self.heads != 0 {
            return Err(Error::config("policy: width must be divisible by heads"));
        }
        if !(self.kl_weight > 0.0) {
            return Err(Error::config("policy: kl_weight must be positive"));
        }
        if !(self.ensemble_m >= 0.0) {
            return Err(Error::config("policy: ensemble_m must be non-negative"));
        }
        if self.patch == 0 || self.image_pool == 0 {
            return Err(Error::config("policy: patch and image_pool must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) || !(self.grad_clip >= 0.0) {
            return Err(Error::config("policy: learning_rate must be positive, weight_decay and grad_clip non-negative"));
        }
        if self.batch_size == 0 || self.samples_per_episode == 0 || self.checkpoint_every == 0 {
            return Err(Error::config("policy: batch_size, samples_per_episode and checkpoint_every must be at least 1"));
        }
        if !(self.early_stop_l1 >= 0.0) {
            return Err(Error::config("policy: early_stop_l1 must be non-negative"));
        }
        Ok(())
    }
}
