use std::fs;
use std::path::Path;

use log::{info, warn};

use super::demo::ScriptedDemonstrator;
use super::runner::{run_episode, RunOptions};
use super::{episode_seed, SeedStream};
use crate::config::WorkbenchConfig;
use crate::error::{Error, Result};
use crate::rig::Rig;
use crate::sim::{reset, TaskKind};
use crate::store::{compute_norm_stats, Episode};

pub const NORM_STATS_FILE: &str = "norm_stats.json";

pub fn episode_file_name(index: usize) -> String {
    format!("episode_{index:03}.cpak")
}

/// Records `count` successful scripted demonstrations. A failed demo is regenerated
/// with a fresh scene up to `eval.demo_retries` times. With `out`, episodes and the
/// dataset normalization statistics are written there.
pub fn generate_demos(
    task: TaskKind,
    count: usize,
    seed: u64,
    config: &WorkbenchConfig,
    out: Option<&Path>,
) -> Result<Vec<Episode>> {
    config.validate()?;
    if count == 0 {
        return Err(Error::config("demo count must be at least 1"));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    let mut episodes = Vec::with_capacity(count);
    for i in 0..count {
        let mut recorded = None;
        for attempt in 0..=config.eval.demo_retries {
            let s = episode_seed(seed, SeedStream::Demo, i, attempt);
            let world = reset(task, s, &config.sim)?;
            let mut demo = ScriptedDemonstrator::new(&world, s, &config.eval.jitter)?;
            let rig = Rig::new(world, config.controller.clone())?;
            let opts = RunOptions {
                record: true,
                ..RunOptions::default()
            };
            let (outcome, _) = run_episode(rig, &mut demo, &config.store, &opts)?;
            if outcome.report.success {
                recorded = outcome.episode;
                break;
            }
            warn!("demo {i} attempt {attempt} (seed {s}) failed: metric {:.3}", outcome.report.metric);
        }
        let episode = recorded.ok_or_else(|| {
            Error::Failed(format!(
                "scripted demo {i} failed {} times",
                config.eval.demo_retries + 1
            ))
        })?;
        if let Some(dir) = out {
            episode.write(&dir.join(episode_file_name(i)))?;
        }
        info!("demo {i}: {} steps", episode.steps.len());
        episodes.push(episode);
    }
    if let Some(dir) = out {
        compute_norm_stats(&episodes, config.store.std_floor)?.save(&dir.join(NORM_STATS_FILE))?;
    }
    Ok(episodes)
}
