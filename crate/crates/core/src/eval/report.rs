//! Rollout reports: per-episode rows, aggregates recomputable from them and the
//! paired with/without F/T success table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};

use super::compare::{csv_error, into_string, ForceBand};
use super::runner::{run_episode, Agent, RunOptions, Trace};
use super::{episode_seed, SeedStream};
use crate::config::WorkbenchConfig;
use crate::error::{Error, Result};
use crate::rig::Rig;
use crate::sim::{reset, TaskKind, World};

pub const LABEL_FT: &str = "F/T";
pub const LABEL_NO_FT: &str = "w/o F/T";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub index: usize,
    pub seed: u64,
    pub success: bool,
    /// The rollout stopped on an error; counted as a failure.
    pub aborted: bool,
    pub metric: f64,
    pub peak_force: f64,
    pub mean_force: f64,
    pub duration: f64,
    /// Samples with force above the contact threshold.
    pub contact_steps: usize,
    /// Contact samples whose executed stiffness stayed within the limit.
    pub low_stiffness_steps: usize,
}

impl EpisodeRow {
    fn from_trace(index: usize, seed: u64, success: bool, metric: f64, trace: &Trace, config: &WorkbenchConfig) -> Self {
        let (low, contact) = trace.low_stiffness_counts(config.eval.contact_force, config.eval.stiffness_limit);
        let n = trace.time.len();
        let mean_force = if n == 0 {
            0.0
        } else {
            (0..n)
                .map(|k| trace.arms.iter().map(|a| a.force[k]).fold(0.0, f64::max))
                .sum::<f64>()
                / n as f64
        };
        Self {
            index,
            seed,
            success,
            aborted: false,
            metric,
            peak_force: trace.peak_force(),
            mean_force,
            duration: trace.time.last().copied().unwrap_or(0.0),
            contact_steps: contact,
            low_stiffness_steps: low,
        }
    }

    fn aborted(index: usize, seed: u64) -> Self {
        Self {
            index,
            seed,
            success: false,
            aborted: true,
            metric: 0.0,
            peak_force: 0.0,
            mean_force: 0.0,
            duration: 0.0,
            contact_steps: 0,
            low_stiffness_steps: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub peak_force_mean: f64,
    pub peak_force_std: f64,
    pub mean_force_mean: f64,
    pub mean_force_std: f64,
    /// Low-stiffness contact samples over all contact samples.
    pub low_stiffness_fraction: f64,
}

fn mean_std(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = v.clone().sum::<f64>() / n as f64;
    let var = v.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

impl ReportSummary {
    pub fn from_rows(rows: &[EpisodeRow]) -> Self {
        let successes = rows.iter().filter(|r| r.success).count();
        let (peak_force_mean, peak_force_std) = mean_std(rows.iter().map(|r| r.peak_force));
        let (mean_force_mean, mean_force_std) = mean_std(rows.iter().map(|r| r.mean_force));
        let contact: usize = rows.iter().map(|r| r.contact_steps).sum();
        let low: usize = rows.iter().map(|r| r.low_stiffness_steps).sum();
        Self {
            episodes: rows.len(),
            successes,
            success_rate: if rows.is_empty() { 0.0 } else { successes as f64 / rows.len() as f64 },
            peak_force_mean,
            peak_force_std,
            mean_force_mean,
            mean_force_std,
            low_stiffness_fraction: if contact == 0 { 0.0 } else { low as f64 / contact as f64 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutReport {
    pub task: String,
    /// Column label, `F/T` or `w/o F/T` for policy rollouts.
    pub label: String,
    pub rows: Vec<EpisodeRow>,
    pub summary: ReportSummary,
    /// Contact force band over completed episodes.
    pub band: ForceBand,
}

impl RolloutReport {
    pub fn new(task: TaskKind, label: &str, rows: Vec<EpisodeRow>, traces: &[Trace]) -> Result<Self> {
        let full: Vec<Trace> = traces
            .iter()
            .filter(|t| !t.time.is_empty())
            .cloned()
            .collect();
        let len = full.iter().map(|t| t.time.len()).max().unwrap_or(0);
        let full: Vec<Trace> = full.into_iter().filter(|t| t.time.len() == len).collect();
        let band = if full.is_empty() {
            ForceBand::default()
        } else {
            ForceBand::from_traces(&full)?
        };
        Ok(Self {
            task: task.name().to_string(),
            label: label.to_string(),
            summary: ReportSummary::from_rows(&rows),
            rows,
            band,
        })
    }

    /// Recomputes the aggregates from the rows and checks they match exactly.
    pub fn verify(&self) -> Result<()> {
        let again = ReportSummary::from_rows(&self.rows);
        if again != self.summary {
            return Err(Error::format(format!(
                "report '{}' aggregates differ from its rows: stored {:?}, recomputed {:?}",
                self.label, self.summary, again
            )));
        }
        if self.summary.episodes != self.rows.len() {
            return Err(Error::format("report totals differ from the row count"));
        }
        Ok(())
    }

    /// Documented columns: index, seed, success, aborted, metric, peak_force (N),
    /// mean_force (N), duration (s), contact_steps, low_stiffness_steps.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "index",
            "seed",
            "success",
            "aborted",
            "metric",
            "peak_force",
            "mean_force",
            "duration",
            "contact_steps",
            "low_stiffness_steps",
        ])
        .map_err(csv_error)?;
        for r in &self.rows {
            w.write_record([
                r.index.to_string(),
                r.seed.to_string(),
                r.success.to_string(),
                r.aborted.to_string(),
                format!("{:.6}", r.metric),
                format!("{:.6}", r.peak_force),
                format!("{:.6}", r.mean_force),
                format!("{:.3}", r.duration),
                r.contact_steps.to_string(),
                r.low_stiffness_steps.to_string(),
            ])
            .map_err(csv_error)?;
        }
        into_string(w)
    }

    pub fn summary_line(&self) -> String {
        let s = &self.summary;
        format!(
            "{} [{}]: {}/{} success, peak force {:.2} ± {:.2} N, low-stiffness contact fraction {:.2}",
            self.task, self.label, s.successes, s.episodes, s.peak_force_mean, s.peak_force_std, s.low_stiffness_fraction
        )
    }
}

/// Rolls out agents built by `make_agent` on `episodes` fresh scenes. An agent error
/// aborts that episode and counts as a failure.
pub fn evaluate<'a>(
    task: TaskKind,
    episodes: usize,
    seed: u64,
    label: &str,
    config: &WorkbenchConfig,
    make_agent: &mut dyn FnMut(&World, u64) -> Result<Box<dyn Agent + 'a>>,
) -> Result<(RolloutReport, Vec<Trace>)> {
    config.validate()?;
    if episodes == 0 {
        return Err(Error::config("evaluation needs at least one episode"));
    }
    let mut rows = Vec::with_capacity(episodes);
    let mut traces = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let s = episode_seed(seed, SeedStream::Eval, i, 0);
        let world = reset(task, s, &config.sim)?;
        let mut agent = make_agent(&world, s)?;
        let rig = Rig::new(world, config.controller.clone())?;
        match run_episode(rig, agent.as_mut(), &config.store, &RunOptions::default()) {
            Ok((out, _)) => {
                rows.push(EpisodeRow::from_trace(i, s, out.report.success, out.report.metric, &out.trace, config));
                traces.push(out.trace);
            }
            Err(e) if !e.is_config() => {
                warn!("episode {i} aborted: {e}");
                rows.push(EpisodeRow::aborted(i, s));
                traces.push(Trace::default());
            }
            Err(e) => return Err(e),
        }
    }
    Ok((RolloutReport::new(task, label, rows, &traces)?, traces))
}

/// One task's success counts with and without the F/T observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRow {
    pub task: String,
    pub ft_successes: usize,
    pub ft_episodes: usize,
    pub no_ft_successes: usize,
    pub no_ft_episodes: usize,
}

/// Pairs `F/T` and `w/o F/T` reports by task. Every task needs both columns.
pub fn paired_table(reports: &[RolloutReport]) -> Result<Vec<PairedRow>> {
    let mut by_task: BTreeMap<&str, (Option<&RolloutReport>, Option<&RolloutReport>)> = BTreeMap::new();
    for r in reports {
        r.verify()?;
        let e = by_task.entry(&r.task).or_default();
        let slot = match r.label.as_str() {
            LABEL_FT => &mut e.0,
            LABEL_NO_FT => &mut e.1,
            other => return Err(Error::config(format!("report label '{other}' is neither '{LABEL_FT}' nor '{LABEL_NO_FT}'"))),
        };
        if slot.replace(r).is_some() {
            return Err(Error::config(format!("two '{}' reports for task {}", r.label, r.task)));
        }
    }
    by_task
        .into_iter()
        .map(|(task, pair)| match pair {
            (Some(a), Some(b)) => Ok(PairedRow {
                task: task.to_string(),
                ft_successes: a.summary.successes,
                ft_episodes: a.summary.episodes,
                no_ft_successes: b.summary.successes,
                no_ft_episodes: b.summary.episodes,
            }),
            _ => Err(Error::config(format!("task {task} lacks a paired '{LABEL_FT}' / '{LABEL_NO_FT}' report"))),
        })
        .collect()
}

pub fn render_paired_table(rows: &[PairedRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<14} | {:>9} | {:>9}", "task", LABEL_FT, LABEL_NO_FT);
    let _ = writeln!(s, "{:-<14}-+-{:->9}-+-{:->9}", "", "", "");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<14} | {:>9} | {:>9}",
            r.task,
            format!("{}/{}", r.ft_successes, r.ft_episodes),
            format!("{}/{}", r.no_ft_successes, r.no_ft_episodes)
        );
    }
    s
}
