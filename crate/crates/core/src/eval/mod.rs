//! Scripted demonstrations, dataset generation, policy rollouts, force-profile
//! comparison and report emission.

pub mod compare;
pub mod dataset;
pub mod demo;
pub mod report;
pub mod runner;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use compare::{compare_force_profiles, ForceBand, ForceComparison, PairedPeak};
pub use dataset::generate_demos;
pub use demo::{InjectedError, Jitter, ScriptedDemonstrator, Waypoint};
pub use report::{evaluate, paired_table, EpisodeRow, PairedRow, ReportSummary, RolloutReport};
pub use runner::{header_for, run_episode, Agent, AgentContext, ArmTrace, EpisodeOutcome, LiveRecorder, RunOptions, Trace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Rollouts per evaluation batch.
    pub episodes: usize,
    pub jitter: Jitter,
    /// Regeneration attempts for a failed scripted demo.
    pub demo_retries: usize,
    /// Reference offset applied in the force comparison.
    pub injected_error: InjectedError,
    /// Force above which a sample counts as contact (N).
    pub contact_force: f64,
    /// Stiffness bound for the low-stiffness contact fraction (N/m).
    pub stiffness_limit: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 10,
            jitter: Jitter::default(),
            demo_retries: 3,
            injected_error: InjectedError {
                amplitude: 0.002,
                frequency: 0.5,
                phase: 0.0,
                axis: [0.0, 0.0, 1.0],
            },
            contact_force: 0.5,
            stiffness_limit: 300.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::config("eval: episodes must be at least 1"));
        }
        if !(self.jitter.waypoint >= 0.0) || !(0.0..1.0).contains(&self.jitter.timing) {
            return Err(Error::config("eval: jitter must be non-negative with timing below 1"));
        }
        let e = &self.injected_error;
        if !(e.amplitude >= 0.0) || !(e.frequency >= 0.0) || !e.phase.is_finite() {
            return Err(Error::config("eval: injected error must have non-negative amplitude and frequency"));
        }
        if !(self.contact_force >= 0.0) || !(self.stiffness_limit > 0.0) {
            return Err(Error::config("eval: contact_force and stiffness_limit must be positive"));
        }
        Ok(())
    }
}

/// Independent seed streams, so demos, evaluation rollouts and retries never share a scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStream {
    Demo,
    Eval,
}

/// World seed for episode `index`, attempt `attempt`, drawn from `base`.
pub fn episode_seed(base: u64, stream: SeedStream, index: usize, attempt: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    let s = match stream {
        SeedStream::Demo => 0,
        SeedStream::Eval => 1u64 << 32,
    };
    rng.set_stream(s + index as u64);
    let mut seed = rng.next_u64();
    for _ in 0..attempt {
        seed = rng.next_u64();
    }
    seed
}
