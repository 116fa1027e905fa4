use super::checkpoint::Policy;
use super::ensemble::TemporalEnsemble;
use super::model::{image_patches, ModelInput};
use crate::control::ControllerTarget;
use crate::error::{Error, Result};
use crate::eval::runner::{Agent, AgentContext};
use crate::store::{observation_features, target_from_action, ACTION_DIM, OBS_FEATURES, WRENCH_FEATURES};

/// Runs a trained policy at the recording rate: observe, predict a chunk at `z = 0`,
/// blend overlapping chunks and hand the decoded targets to the controllers.
pub struct PolicyAgent<'p> {
    policy: &'p Policy,
    ensemble: TemporalEnsemble,
    /// Control periods per policy step.
    every: usize,
    /// Replace the wrench inputs with their dataset mean (ablation of an F/T-trained model).
    mask_ft: bool,
    step: usize,
}

impl<'p> PolicyAgent<'p> {
    pub fn new(policy: &'p Policy, control_period: f64, policy_rate: f64, mask_ft: bool) -> Result<Self> {
        let ratio = 1.0 / (policy_rate * control_period);
        let every = ratio.round() as usize;
        if every == 0 || (ratio - every as f64).abs() > 1e-6 {
            return Err(Error::config(format!(
                "policy rate {policy_rate} Hz must divide the control rate {} Hz",
                1.0 / control_period
            )));
        }
        Ok(Self {
            policy,
            ensemble: TemporalEnsemble::new(policy.config.ensemble_m, policy.model.dims.arms)?,
            every,
            mask_ft,
            step: 0,
        })
    }

    /// Model input for the current observation.
    pub fn input(&self, ctx: &AgentContext) -> Result<ModelInput> {
        let dims = &self.policy.model.dims;
        let with_ft = dims.with_ft;
        let raw = observation_features(ctx.observation, ctx.wrenches, with_ft)?;
        let mut observation = self.policy.norm.observation_stats(with_ft).normalize(&raw);
        if with_ft && self.mask_ft {
            for (i, v) in observation.iter_mut().enumerate() {
                if i % OBS_FEATURES >= OBS_FEATURES - WRENCH_FEATURES {
                    *v = 0.0;
                }
            }
        }
        if ctx.observation.images.len() != dims.cameras {
            return Err(Error::config(format!(
                "policy expects {} camera images, observation has {}",
                dims.cameras,
                ctx.observation.images.len()
            )));
        }
        let images = ctx
            .observation
            .images
            .iter()
            .map(|img| image_patches(img, dims.image_pool, dims.patch))
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelInput { observation, images })
    }
}

impl Agent for PolicyAgent<'_> {
    fn act(&mut self, ctx: &AgentContext) -> Result<Vec<Option<ControllerTarget>>> {
        let arms = self.policy.model.dims.arms;
        if ctx.tick % self.every != 0 {
            return Ok(vec![None; arms]);
        }
        let input = self.input(ctx)?;
        let chunk = self.policy.model.predict_chunk(&input)?;
        let rows: Vec<Vec<f64>> = chunk
            .rows()
            .into_iter()
            .map(|r| self.policy.norm.action.unnormalize(r.as_slice().expect("contiguous")))
            .collect();
        self.ensemble.push(self.step, rows)?;
        let action = self.ensemble.action(self.step)?;
        self.step += 1;
        (0..arms)
            .map(|i| target_from_action(&action[i * ACTION_DIM..(i + 1) * ACTION_DIM]).map(Some))
            .collect()
    }

    fn wants_images(&self, tick: usize) -> bool {
        tick % self.every == 0
    }
}
