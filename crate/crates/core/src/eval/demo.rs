//! Scripted demonstrators: waypoint programs replayed through teleoperation
//! sessions, standing in for a human operator.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::runner::{Agent, AgentContext};
use crate::control::{ControllerTarget, StiffnessMode};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::sim::task::{peg_approach_pose, planar_tool_down};
use crate::sim::{BodyKind, TaskKind, World};
use crate::teleop::{Buttons, TeleopSession, WireMessage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub time: f64,
    pub pose: Pose,
    pub gripper: f64,
    /// Mode commanded from this waypoint on.
    pub mode: StiffnessMode,
}

/// Per-episode randomization of the scripted programs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Jitter {
    /// Waypoint perturbation on free-space coordinates (m).
    pub waypoint: f64,
    /// Relative perturbation of segment durations.
    pub timing: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Self {
            waypoint: 0.01,
            timing: 0.1,
        }
    }
}

/// Low-frequency sinusoidal offset added to the reference position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectedError {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    pub axis: [f64; 3],
}

impl InjectedError {
    pub fn offset(&self, t: f64) -> Vector3<f64> {
        Vector3::from(self.axis) * self.amplitude * (2.0 * PI * self.frequency * t + self.phase).sin()
    }
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Pose, gripper and mode of a program at time `t`.
pub fn sample_program(program: &[Waypoint], t: f64) -> (Pose, f64, StiffnessMode) {
    let first = &program[0];
    if t <= first.time {
        return (first.pose, first.gripper, first.mode);
    }
    for w in program.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if t < b.time {
            let s = smoothstep((t - a.time) / (b.time - a.time));
            let pose = Pose::new(
                a.pose.position.lerp(&b.pose.position, s),
                a.pose.orientation.slerp(&b.pose.orientation, s),
            );
            return (pose, a.gripper + (b.gripper - a.gripper) * s, a.mode);
        }
    }
    let last = program.last().expect("non-empty program");
    (last.pose, last.gripper, last.mode)
}

struct ProgramBuilder {
    points: Vec<Waypoint>,
    rng: ChaCha8Rng,
    timing: f64,
}

impl ProgramBuilder {
    fn new(start: Waypoint, rng: ChaCha8Rng, timing: f64) -> Self {
        Self {
            points: vec![start],
            rng,
            timing,
        }
    }

    fn last(&self) -> Waypoint {
        *self.points.last().expect("non-empty")
    }

    /// Appends a waypoint reached after `dt` seconds (jittered).
    fn to(&mut self, dt: f64, pose: Pose, gripper: f64, mode: StiffnessMode) {
        let scale = if self.timing > 0.0 {
            1.0 + self.rng.random_range(-self.timing..=self.timing)
        } else {
            1.0
        };
        let time = self.last().time + dt * scale;
        self.points.push(Waypoint {
            time,
            pose,
            gripper,
            mode,
        });
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi > lo {
            self.rng.random_range(lo..=hi)
        } else {
            lo
        }
    }
}

/// Builds the per-arm waypoint programs for the task in `world`.
pub fn build_programs(world: &World, seed: u64, jitter: &Jitter) -> Result<Vec<Vec<Waypoint>>> {
    let task = world
        .task
        .as_ref()
        .ok_or_else(|| Error::config("scripted demonstrator needs a task world"))?;
    let rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_de30);
    let j = jitter.waypoint;
    let start = |i: usize| Waypoint {
        time: 0.0,
        pose: world.arms[i].ee_pose(),
        gripper: world.arms[i].gripper_command,
        mode: task.mode_pairs[i].0,
    };
    use StiffnessMode::*;
    match task.kind {
        TaskKind::Wiping => {
            let marks = world
                .marks
                .as_ref()
                .ok_or_else(|| Error::config("wiping world has no marks"))?;
            let half_cell = marks.cell_size / 2.0;
            let lo = marks.cells.iter().map(|c| c.x).fold(f64::INFINITY, f64::min) - half_cell;
            let hi = marks.cells.iter().map(|c| c.x).fold(f64::NEG_INFINITY, f64::max) + half_cell;
            let down = planar_tool_down(&world.arms[0].chain);
            let mut b = ProgramBuilder::new(start(0), rng, jitter.timing);
            let g = b.last().gripper;
            let xs = lo - b.uniform(0.01, 0.01 + j);
            let xe = hi + b.uniform(0.01, 0.01 + j);
            let hover = 0.02 + b.uniform(0.0, j);
            let depth = b.uniform(0.010, 0.014);
            let at = |x: f64, z: f64| Pose::new(Vector3::new(x, 0.0, z), down);
            // Touch down slowly: the impact force scales with the approach speed.
            b.to(1.0, at(xs, hover), g, Low);
            b.to(0.5, at(xs, 0.002), g, Low);
            b.to(1.6, at(xs, -0.002), g, Low);
            b.to(0.5, at(xs, -depth), g, Low);
            b.to(1.8, at(xe, -depth), g, Low);
            b.to(1.2, at(xs, -depth), g, Low);
            b.to(0.7, at(xs, 0.03), g, Low);
            b.to(0.3, at(xs, 0.03), g, Mid);
            Ok(vec![b.points])
        }
        TaskKind::PickInsert => {
            let peg = world
                .find_body(|k| matches!(k, BodyKind::Peg { .. }))
                .ok_or_else(|| Error::config("pick_insert world has no peg"))?;
            let fix = world
                .find_body(|k| matches!(k, BodyKind::Fixture(_)))
                .ok_or_else(|| Error::config("pick_insert world has no fixture"))?;
            let BodyKind::Fixture(geom) = world.bodies[fix].kind else {
                unreachable!("found by kind")
            };
            let grasp = world.bodies[peg]
                .grasp
                .as_ref()
                .map(|g| world.bodies[peg].pose.transform_point(&g.point))
                .ok_or_else(|| Error::config("peg has no grasp point"))?;
            let tip_below_grasp = grasp.z - world.bodies[peg].pose.position.z;
            let entrance = world.body_world_pose(fix).position;
            let down = planar_tool_down(&world.arms[0].chain);
            let at = |x: f64, z: f64| Pose::new(Vector3::new(x, 0.0, z), down);
            let mut b = ProgramBuilder::new(start(0), rng, jitter.timing);
            let lift = 0.11 + b.uniform(0.0, j);
            let above = grasp.z + 0.04 + b.uniform(0.0, j);
            b.to(1.0, at(grasp.x, above), 1.0, Mid);
            b.to(0.8, at(grasp.x, grasp.z), 1.0, Mid);
            b.to(0.6, at(grasp.x, grasp.z), 0.0, Mid);
            b.to(1.0, at(grasp.x, lift), 0.0, Mid);
            b.to(1.5, at(entrance.x, lift), 0.0, Mid);
            let tip_at = |h: f64| at(entrance.x, entrance.z + tip_below_grasp + h);
            b.to(0.8, tip_at(0.005), 0.0, Low);
            b.to(1.2, tip_at(-0.004), 0.0, Low);
            b.to(1.0, tip_at(-geom.hole_depth - 0.002), 0.0, Low);
            Ok(vec![b.points])
        }
        TaskKind::PegCylinder | TaskKind::PegCuboid => {
            let fix = world
                .find_body(|k| matches!(k, BodyKind::Fixture(_)))
                .ok_or_else(|| Error::config("peg world has no fixture"))?;
            let BodyKind::Fixture(geom) = world.bodies[fix].kind else {
                unreachable!("found by kind")
            };
            let entrance = world.body_world_pose(fix);
            let mut right = ProgramBuilder::new(start(1), rng, jitter.timing);
            let standoff = right.uniform(0.015, 0.015 + j);
            right.to(1.5, peg_approach_pose(&entrance, standoff), 0.2, Mid);
            right.to(0.5, peg_approach_pose(&entrance, standoff), 0.2, Low);
            right.to(1.0, peg_approach_pose(&entrance, 0.003), 0.2, Low);
            right.to(2.0, peg_approach_pose(&entrance, -0.004), 0.2, Low);
            right.to(1.5, peg_approach_pose(&entrance, -(geom.hole_depth + 0.003)), 0.2, Low);
            let switch = right.points[1].time;
            // Left switches to high stiffness as the right arm goes compliant.
            let l0 = start(0);
            let left = vec![
                l0,
                Waypoint {
                    time: switch,
                    mode: High,
                    ..l0
                },
            ];
            Ok(vec![left, right.points])
        }
    }
}

/// Replays waypoint programs through per-arm teleoperation sessions, as a human
/// operator's controller would: clutch press at the start, trigger for the gripper
/// and grip-button edges for mode changes.
pub struct ScriptedDemonstrator {
    pub programs: Vec<Vec<Waypoint>>,
    pub sessions: Vec<TeleopSession>,
    pub injected: Option<InjectedError>,
    /// Control periods between input messages.
    pub input_every: usize,
    seq: u64,
    grip_down: Vec<bool>,
    engaged: bool,
}

impl ScriptedDemonstrator {
    pub fn new(world: &World, seed: u64, jitter: &Jitter) -> Result<Self> {
        let programs = build_programs(world, seed, jitter)?;
        let task = world.task.as_ref().expect("checked by build_programs");
        let sessions = task
            .mode_pairs
            .iter()
            .enumerate()
            .map(|(i, m)| TeleopSession::new(i, *m, 1.0))
            .collect::<Result<Vec<_>>>()?;
        let arms = programs.len();
        Ok(Self {
            programs,
            sessions,
            injected: None,
            input_every: 2,
            seq: 0,
            grip_down: vec![false; arms],
            engaged: false,
        })
    }

    pub fn with_injected_error(mut self, e: InjectedError) -> Self {
        self.injected = Some(e);
        self
    }

    /// Nominal reference pose of `arm` at time `t`, including any injected error.
    pub fn reference(&self, arm: usize, t: f64) -> (Pose, f64, StiffnessMode) {
        let (mut pose, g, m) = sample_program(&self.programs[arm], t);
        if let Some(e) = &self.injected {
            pose.position += e.offset(t);
        }
        (pose, g, m)
    }
}

impl Agent for ScriptedDemonstrator {
    fn act(&mut self, ctx: &AgentContext) -> Result<Vec<Option<ControllerTarget>>> {
        let mut out = vec![None; self.programs.len()];
        if ctx.tick % self.input_every != 0 {
            return Ok(out);
        }
        let first = !self.engaged;
        self.engaged = true;
        for (i, slot) in out.iter_mut().enumerate() {
            let (pose, gripper, mode) = self.reference(i, ctx.time);
            let session = &mut self.sessions[i];
            let grip = mode != session.mode() && !self.grip_down[i];
            self.grip_down[i] = grip;
            self.seq += 1;
            let q = pose.orientation;
            let msg = WireMessage::Input {
                seq: self.seq,
                t_ms: (ctx.time * 1000.0).round() as u64,
                pos: [pose.position.x, pose.position.y, pose.position.z],
                quat: [q.w, q.i, q.j, q.k],
                trigger: gripper,
                buttons: Buttons { menu: first, grip },
            };
            *slot = session.apply(&msg, ctx.observation.arms[i].ee_pose)?;
        }
        Ok(out)
    }

    fn modes(&self, _targets: &[ControllerTarget]) -> Vec<StiffnessMode> {
        self.sessions.iter().map(|s| s.mode()).collect()
    }
}
