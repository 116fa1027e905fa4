//! Contact-force profiles of compliant execution against stiff joint-position
//! tracking of the same demonstration, both subject to the same reference error.

use nalgebra::{DVector, Vector6};
use serde::{Deserialize, Serialize};

use super::demo::{InjectedError, ScriptedDemonstrator};
use super::runner::{run_episode, Agent, AgentContext, ArmTrace, RunOptions, Trace};
use super::{episode_seed, SeedStream};
use crate::config::WorkbenchConfig;
use crate::control::{ControllerTarget, StiffnessMode};
use crate::error::{Error, Result};
use crate::geometry::pose_error;
use crate::rig::Rig;
use crate::sim::task::planar_weights;
use crate::sim::{reset, TaskKind, World};

/// Mean and standard deviation of the contact force across episodes, per control period.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ForceBand {
    pub time: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ForceBand {
    /// Aligns traces by control period; the force of a sample is the largest over arms.
    pub fn from_traces(traces: &[Trace]) -> Result<Self> {
        let first = traces
            .first()
            .ok_or_else(|| Error::config("force band needs at least one trace"))?;
        let len = first.time.len();
        if traces.iter().any(|t| t.time.len() != len) {
            return Err(Error::config("traces differ in length"));
        }
        let n = traces.len() as f64;
        let mut band = ForceBand {
            time: first.time.clone(),
            mean: Vec::with_capacity(len),
            std: Vec::with_capacity(len),
        };
        for k in 0..len {
            let f: Vec<f64> = traces.iter().map(|t| sample_force(t, k)).collect();
            let mean = f.iter().sum::<f64>() / n;
            let var = f.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            band.mean.push(mean);
            band.std.push(var.sqrt());
        }
        Ok(band)
    }
}

fn sample_force(t: &Trace, k: usize) -> f64 {
    t.arms.iter().map(|a| a.force[k]).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedPeak {
    pub seed: u64,
    pub compliant_peak: f64,
    pub position_peak: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceComparison {
    pub task: String,
    pub injected_error: InjectedError,
    pub pairs: Vec<PairedPeak>,
    pub compliant: ForceBand,
    pub position: ForceBand,
    pub compliant_peak_mean: f64,
    pub position_peak_mean: f64,
    /// Mean position-tracking peak over mean compliant peak.
    pub peak_ratio: f64,
    /// Smallest per-episode ratio.
    pub min_ratio: f64,
}

impl ForceComparison {
    pub fn from_traces(
        task: TaskKind,
        injected_error: InjectedError,
        seeds: &[u64],
        compliant: &[Trace],
        position: &[Trace],
    ) -> Result<Self> {
        if compliant.len() != position.len() || compliant.len() != seeds.len() {
            return Err(Error::config(format!(
                "mismatched episode counts: {} seeds, {} compliant, {} position",
                seeds.len(),
                compliant.len(),
                position.len()
            )));
        }
        let pairs: Vec<PairedPeak> = seeds
            .iter()
            .zip(compliant.iter().zip(position))
            .map(|(&seed, (c, p))| {
                let (cp, pp) = (c.peak_force(), p.peak_force());
                PairedPeak {
                    seed,
                    compliant_peak: cp,
                    position_peak: pp,
                    ratio: pp / cp,
                }
            })
            .collect();
        let n = pairs.len() as f64;
        let compliant_peak_mean = pairs.iter().map(|p| p.compliant_peak).sum::<f64>() / n;
        let position_peak_mean = pairs.iter().map(|p| p.position_peak).sum::<f64>() / n;
        Ok(Self {
            task: task.name().to_string(),
            injected_error,
            min_ratio: pairs.iter().map(|p| p.ratio).fold(f64::INFINITY, f64::min),
            pairs,
            compliant: ForceBand::from_traces(compliant)?,
            position: ForceBand::from_traces(position)?,
            compliant_peak_mean,
            position_peak_mean,
            peak_ratio: position_peak_mean / compliant_peak_mean,
        })
    }

    /// One row per control period: time, then mean and std of each executor.
    pub fn profile_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["time", "compliant_mean", "compliant_std", "position_mean", "position_std"])
            .map_err(csv_error)?;
        for k in 0..self.compliant.time.len() {
            w.write_record(
                [
                    self.compliant.time[k],
                    self.compliant.mean[k],
                    self.compliant.std[k],
                    self.position.mean[k],
                    self.position.std[k],
                ]
                .iter()
                .map(|v| format!("{v:.6}")),
            )
            .map_err(csv_error)?;
        }
        into_string(w)
    }
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub(crate) fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::format(e.to_string()))
}

/// Delegates to the demonstrator and keeps the joint positions seen each period.
struct JointRecorder<'a> {
    inner: &'a mut ScriptedDemonstrator,
    joints: Vec<Vec<DVector<f64>>>,
}

impl Agent for JointRecorder<'_> {
    fn act(&mut self, ctx: &AgentContext) -> Result<Vec<Option<ControllerTarget>>> {
        for (track, arm) in self.joints.iter_mut().zip(&ctx.observation.arms) {
            track.push(arm.joints.q.clone());
        }
        self.inner.act(ctx)
    }

    fn modes(&self, targets: &[ControllerTarget]) -> Vec<StiffnessMode> {
        self.inner.modes(targets)
    }
}

fn ik_weights(world: &World, arm: usize) -> Vector6<f64> {
    if world.arms[arm].chain.dof() < 6 {
        planar_weights()
    } else {
        Vector6::repeat(1.0)
    }
}

/// Drives the stiff joint servo directly along `reference` (one joint vector per
/// control period), displaced in Cartesian space by `error`.
pub fn run_position_tracking(
    mut world: World,
    reference: &[Vec<DVector<f64>>],
    error: Option<&InjectedError>,
    period: f64,
) -> Result<Trace> {
    let dt = world.config.physics_dt;
    let steps = (period / dt).round().max(1.0) as usize;
    let ticks = reference.first().map_or(0, |r| r.len());
    let arms = world.arms.len();
    if reference.len() != arms {
        return Err(Error::config("joint reference must have one track per arm"));
    }
    let mut commands: Vec<DVector<f64>> = world.arms.iter().map(|a| a.joints.q.clone()).collect();
    let mut trace = Trace {
        time: Vec::with_capacity(ticks),
        arms: vec![ArmTrace::default(); arms],
    };
    for tick in 0..ticks {
        let t = world.time;
        let mut goals = Vec::with_capacity(arms);
        for i in 0..arms {
            let track = &reference[i];
            let q_ref = &track[(tick + 1).min(track.len() - 1)];
            let chain = &world.arms[i].chain;
            let mut goal = chain.forward_kinematics(q_ref);
            if let Some(e) = error {
                goal.position += e.offset(t);
                commands[i] = chain.inverse_kinematics(&goal, &commands[i], &ik_weights(&world, i))?;
            } else {
                commands[i] = q_ref.clone();
            }
            goals.push(goal);
        }
        let mut obs = None;
        for _ in 0..steps {
            obs = Some(world.step(&commands, dt)?);
        }
        let obs = obs.expect("at least one physics step");
        trace.time.push(obs.time);
        for (i, a) in obs.arms.iter().enumerate() {
            let at = &mut trace.arms[i];
            at.force.push(a.wrench_world.force.norm());
            at.stiffness.push(0.0);
            at.pose_error.push(pose_error(&goals[i], &a.ee_pose).linear.norm());
        }
    }
    Ok(trace)
}

/// Paired comparison over `episodes` seeded scenes. Each pair shares the scene, the
/// demonstrator program and the injected error schedule; the position-tracking run
/// replays the joint trajectory measured on the nominal compliant run.
pub fn compare_force_profiles(
    task: TaskKind,
    episodes: usize,
    seed: u64,
    config: &WorkbenchConfig,
) -> Result<ForceComparison> {
    config.validate()?;
    if episodes == 0 {
        return Err(Error::config("force comparison needs at least one episode"));
    }
    let error = config.eval.injected_error;
    let mut seeds = Vec::with_capacity(episodes);
    let mut compliant = Vec::with_capacity(episodes);
    let mut position = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let s = episode_seed(seed, SeedStream::Eval, i, 0);
        let world = reset(task, s, &config.sim)?;
        let opts = RunOptions::default();

        let mut nominal = ScriptedDemonstrator::new(&world, s, &config.eval.jitter)?;
        let mut rec = JointRecorder {
            inner: &mut nominal,
            joints: vec![Vec::new(); world.arms.len()],
        };
        let rig = Rig::new(world.clone(), config.controller.clone())?;
        run_episode(rig, &mut rec, &config.store, &opts)?;
        let reference = rec.joints;

        let mut perturbed = ScriptedDemonstrator::new(&world, s, &config.eval.jitter)?.with_injected_error(error);
        let rig = Rig::new(world.clone(), config.controller.clone())?;
        let (out, _) = run_episode(rig, &mut perturbed, &config.store, &opts)?;
        compliant.push(out.trace);

        position.push(run_position_tracking(world, &reference, Some(&error), config.controller.period)?);
        seeds.push(s);
    }
    ForceComparison::from_traces(task, error, &seeds, &compliant, &position)
}
