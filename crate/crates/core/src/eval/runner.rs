//! Closed-loop episode execution: an agent publishes controller targets each
//! control period while the rig advances, optionally recording an episode.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::compare::{csv_error, into_string};
use crate::control::{ControllerTarget, StiffnessMode};
use crate::error::{Error, Result};
use crate::geometry::{pose_error, Wrench};
use crate::rig::Rig;
use crate::sim::{check_success, Observation, SuccessReport, World};
use crate::store::{Episode, EpisodeHeader, EpisodeRecorder, StoreConfig, WrenchFilter, FORMAT_VERSION};

/// What an agent sees each control period.
pub struct AgentContext<'a> {
    pub tick: usize,
    pub time: f64,
    /// Carries camera images on ticks where the agent asked for them.
    pub observation: &'a Observation,
    /// Low-pass filtered flange-frame wrenches.
    pub wrenches: &'a [Wrench],
    pub world: &'a World,
}

pub trait Agent {
    /// New targets per arm for this period; `None` keeps the current one.
    fn act(&mut self, ctx: &AgentContext) -> Result<Vec<Option<ControllerTarget>>>;

    fn wants_images(&self, _tick: usize) -> bool {
        false
    }

    /// Commanded stiffness modes, for recording.
    fn modes(&self, targets: &[ControllerTarget]) -> Vec<StiffnessMode> {
        targets.iter().map(|t| nearest_mode(t.stiffness.max_translational_diagonal())).collect()
    }
}

pub fn nearest_mode(k: f64) -> StiffnessMode {
    [StiffnessMode::Low, StiffnessMode::Mid, StiffnessMode::High]
        .into_iter()
        .min_by(|a, b| (a.value() - k).abs().total_cmp(&(b.value() - k).abs()))
        .expect("three modes")
}

/// Per-control-period samples of one arm, for force and stiffness profiles.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArmTrace {
    /// Magnitude of the sensed contact force (N).
    pub force: Vec<f64>,
    /// Largest translational diagonal of the executed stiffness.
    pub stiffness: Vec<f64>,
    /// Distance from the commanded to the actual tool position (m).
    pub pose_error: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub time: Vec<f64>,
    pub arms: Vec<ArmTrace>,
}

impl Trace {
    pub fn peak_force(&self) -> f64 {
        self.arms
            .iter()
            .flat_map(|a| a.force.iter().copied())
            .fold(0.0, f64::max)
    }

    /// Samples with force above `threshold` whose executed stiffness is at most `limit`,
    /// and the number of samples above `threshold`.
    pub fn low_stiffness_counts(&self, threshold: f64, limit: f64) -> (usize, usize) {
        let mut contact = 0;
        let mut low = 0;
        for a in &self.arms {
            for (f, k) in a.force.iter().zip(&a.stiffness) {
                if *f > threshold {
                    contact += 1;
                    if *k <= limit {
                        low += 1;
                    }
                }
            }
        }
        (low, contact)
    }

    /// Fraction of contact samples with low stiffness, with the contact sample count.
    pub fn low_stiffness_fraction(&self, threshold: f64, limit: f64) -> (f64, usize) {
        let (low, contact) = self.low_stiffness_counts(threshold, limit);
        if contact == 0 {
            (0.0, 0)
        } else {
            (low as f64 / contact as f64, contact)
        }
    }

    /// Columns: time, then force, stiffness and pose_error per arm (suffixed by arm index).
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut head = vec!["time".to_string()];
        for i in 0..self.arms.len() {
            head.extend([format!("force_{i}"), format!("stiffness_{i}"), format!("pose_error_{i}")]);
        }
        w.write_record(&head).map_err(csv_error)?;
        for (k, t) in self.time.iter().enumerate() {
            let mut row = vec![format!("{t:.3}")];
            for a in &self.arms {
                row.extend([
                    format!("{:.6}", a.force[k]),
                    format!("{:.3}", a.stiffness[k]),
                    format!("{:.6}", a.pose_error[k]),
                ]);
            }
            w.write_record(&row).map_err(csv_error)?;
        }
        into_string(w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub record: bool,
    /// Recorded episode source label.
    pub source: String,
    /// Overrides the task duration (s).
    pub duration: Option<f64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            record: false,
            source: "scripted".into(),
            duration: None,
        }
    }
}

pub struct EpisodeOutcome {
    pub report: SuccessReport,
    pub episode: Option<Episode>,
    pub trace: Trace,
}

pub fn header_for(rig: &Rig, store: &StoreConfig, source: &str, duration: f64) -> EpisodeHeader {
    let w = &rig.world;
    let task = w.task.as_ref();
    EpisodeHeader {
        format_version: FORMAT_VERSION,
        task: task.map_or("none".into(), |t| t.kind.name().to_string()),
        seed: w.seed,
        arms: w.arms.len(),
        arm_labels: w.arms.iter().map(|a| a.label.clone()).collect(),
        cameras: w.cameras.iter().map(|c| c.name.clone()).collect(),
        image_width: w.config.image_width,
        image_height: w.config.image_height,
        record_rate: store.record_rate,
        control_rate: 1.0 / rig.period(),
        physics_rate: 1.0 / w.config.physics_dt,
        mode_pairs: task.map_or_else(Vec::new, |t| t.mode_pairs.clone()),
        duration,
        source: source.to_string(),
        success: false,
        aborted: false,
        metric: 0.0,
        peak_force: 0.0,
    }
}

/// Runs `agent` on `rig` for the task duration.
pub fn run_episode(mut rig: Rig, agent: &mut dyn Agent, store: &StoreConfig, opts: &RunOptions) -> Result<(EpisodeOutcome, Rig)> {
    store.validate()?;
    let duration = opts
        .duration
        .or(rig.world.task.as_ref().map(|t| t.duration))
        .ok_or_else(|| Error::config("episode duration unknown: world has no task"))?;
    let period = rig.period();
    let ticks = (duration / period).round() as usize;
    let ratio = 1.0 / (store.record_rate * period);
    let record_every = ratio.round() as usize;
    if record_every == 0 || (ratio - record_every as f64).abs() > 1e-6 {
        return Err(Error::config(format!(
            "record rate {} Hz must divide the control rate {} Hz",
            store.record_rate,
            1.0 / period
        )));
    }
    let arms = rig.world.arms.len();
    let mut recorder = if opts.record {
        Some(EpisodeRecorder::new(header_for(&rig, store, &opts.source, duration))?)
    } else {
        None
    };
    let mut filters: Vec<WrenchFilter> = (0..arms)
        .map(|_| WrenchFilter::new(store.wrench_cutoff, period))
        .collect();
    let mut current: Vec<ControllerTarget> = rig.controllers.iter().map(|c| *c.target()).collect();
    let mut trace = Trace {
        time: Vec::with_capacity(ticks),
        arms: vec![ArmTrace::default(); arms],
    };
    let mut obs = rig.observation().clone();
    let has_cameras = !rig.world.cameras.is_empty();

    for tick in 0..ticks {
        let wrenches: Vec<Wrench> = filters
            .iter_mut()
            .zip(&obs.arms)
            .map(|(f, a)| f.update(&a.wrench))
            .collect();
        let record_tick = tick % record_every == 0;
        let need_images = has_cameras && ((recorder.is_some() && record_tick) || agent.wants_images(tick));
        let view: Cow<Observation> = if need_images {
            Cow::Owned(rig.observe_with_images())
        } else {
            Cow::Borrowed(&obs)
        };
        let ctx = AgentContext {
            tick,
            time: obs.time,
            observation: &view,
            wrenches: &wrenches,
            world: &rig.world,
        };
        let targets = agent.act(&ctx)?;
        if targets.len() != arms {
            return Err(Error::config(format!(
                "agent returned {} targets for {arms} arms",
                targets.len()
            )));
        }
        for (i, t) in targets.into_iter().enumerate() {
            if let Some(t) = t {
                rig.set_target(i, t)?;
                current[i] = t;
            }
        }
        if record_tick {
            if let Some(rec) = recorder.as_mut() {
                let modes = agent.modes(&current);
                rec.record_step(&view, &wrenches, &current, &modes, 0.0)?;
            }
        }
        drop(view);
        obs = rig.tick()?.clone();
        trace.time.push(obs.time);
        for (i, a) in obs.arms.iter().enumerate() {
            let t = &mut trace.arms[i];
            t.force.push(a.wrench_world.force.norm());
            t.stiffness.push(a.stiffness.map_or(0.0, |k| k.max_translational_diagonal()));
            t.pose_error.push(pose_error(&current[i].pose, &a.ee_pose).linear.norm());
        }
    }
    let report = check_success(&rig.world);
    let episode = recorder.map(|r| r.finish(report.success, false, report.metric, report.peak_force));
    Ok((
        EpisodeOutcome {
            report,
            episode,
            trace,
        },
        rig,
    ))
}

/// Records a rig driven by someone else (the teleop server) from its tick hook. Each
/// step pairs the observation after a control period with the targets that were in
/// force during it.
pub struct LiveRecorder {
    recorder: EpisodeRecorder,
    filters: Vec<WrenchFilter>,
    every: usize,
    tick: usize,
    aborted: bool,
}

impl LiveRecorder {
    pub fn new(rig: &Rig, store: &StoreConfig, source: &str) -> Result<Self> {
        store.validate()?;
        let period = rig.period();
        let ratio = 1.0 / (store.record_rate * period);
        let every = ratio.round() as usize;
        if every == 0 || (ratio - every as f64).abs() > 1e-6 {
            return Err(Error::config(format!(
                "record rate {} Hz must divide the control rate {} Hz",
                store.record_rate,
                1.0 / period
            )));
        }
        Ok(Self {
            recorder: EpisodeRecorder::new(header_for(rig, store, source, 0.0))?,
            filters: (0..rig.world.arms.len())
                .map(|_| WrenchFilter::new(store.wrench_cutoff, period))
                .collect(),
            every,
            tick: 0,
            aborted: false,
        })
    }

    pub fn on_tick(&mut self, rig: &Rig, aborted: bool) -> Result<()> {
        self.aborted |= aborted;
        let obs = rig.observation();
        let wrenches: Vec<Wrench> = self
            .filters
            .iter_mut()
            .zip(&obs.arms)
            .map(|(f, a)| f.update(&a.wrench))
            .collect();
        if self.tick % self.every == 0 {
            let view = if rig.world.cameras.is_empty() {
                obs.clone()
            } else {
                rig.observe_with_images()
            };
            let targets: Vec<ControllerTarget> = rig.controllers.iter().map(|c| *c.target()).collect();
            let modes: Vec<StiffnessMode> = targets
                .iter()
                .map(|t| nearest_mode(t.stiffness.max_translational_diagonal()))
                .collect();
            self.recorder.record_step(&view, &wrenches, &targets, &modes, 0.0)?;
        }
        self.tick += 1;
        Ok(())
    }

    /// Closes the episode with the task's success check on the final world.
    pub fn finish(self, rig: &Rig) -> Episode {
        let report = check_success(&rig.world);
        let mut ep = self
            .recorder
            .finish(report.success, self.aborted, report.metric, report.peak_force);
        ep.header.duration = rig.world.time;
        ep
    }
}
