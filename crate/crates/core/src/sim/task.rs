//! Desk-scale task scenes: wiping, pick-and-insert, bimanual peg-in-hole.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DVector, UnitQuaternion, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::render::{look_at, Camera};
use super::{Arm, Body, BodyKind, Grasp, HalfSpace, HoleFixture, KinematicChain, Marks, PegShape, SimConfig, World};
use crate::control::StiffnessMode;
use crate::error::{Error, Result};
use crate::geometry::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Wiping,
    PickInsert,
    PegCylinder,
    PegCuboid,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::Wiping,
        TaskKind::PickInsert,
        TaskKind::PegCylinder,
        TaskKind::PegCuboid,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Wiping => "wiping",
            TaskKind::PickInsert => "pick_insert",
            TaskKind::PegCylinder => "peg_cylinder",
            TaskKind::PegCuboid => "peg_cuboid",
        }
    }

    pub fn arm_count(&self) -> usize {
        match self {
            TaskKind::Wiping | TaskKind::PickInsert => 1,
            TaskKind::PegCylinder | TaskKind::PegCuboid => 2,
        }
    }

    /// Stiffness mode pair per arm; the first entry is the starting mode.
    pub fn mode_pairs(&self) -> Vec<(StiffnessMode, StiffnessMode)> {
        use StiffnessMode::*;
        match self {
            TaskKind::Wiping | TaskKind::PickInsert => vec![(Mid, Low)],
            TaskKind::PegCylinder | TaskKind::PegCuboid => vec![(Mid, High), (Mid, Low)],
        }
    }

    pub fn is_peg(&self) -> bool {
        matches!(self, TaskKind::PegCylinder | TaskKind::PegCuboid)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .iter()
            .find(|t| t.name() == s)
            .copied()
            .ok_or_else(|| {
                let names: Vec<&str> = TaskKind::ALL.iter().map(|t| t.name()).collect();
                Error::config(format!(
                    "unknown task '{s}' (choices: {})",
                    names.join(", ")
                ))
            })
    }
}

/// Randomization ranges and geometry shared by the task scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskParams {
    /// Half-range of object yaw randomization (deg).
    pub yaw_range_deg: f64,
    /// Half-range of mark/target placement randomization (m).
    pub position_range: f64,
    pub mark_length: f64,
    pub mark_cell: f64,
    pub pad_half_width: f64,
    pub peg_half_width: f64,
    pub peg_length: f64,
    pub hole_half_width: f64,
    pub hole_depth: f64,
    pub chamfer: f64,
    pub fixture_half_width: f64,
    pub fixture_depth: f64,
    pub wiping_duration: f64,
    pub pick_insert_duration: f64,
    pub peg_duration: f64,
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            yaw_range_deg: 15.0,
            position_range: 0.05,
            mark_length: 0.04,
            mark_cell: 0.005,
            pad_half_width: 0.01,
            peg_half_width: 0.010,
            peg_length: 0.06,
            hole_half_width: 0.011,
            hole_depth: 0.025,
            chamfer: 0.003,
            fixture_half_width: 0.03,
            fixture_depth: 0.04,
            wiping_duration: 8.0,
            pick_insert_duration: 10.0,
            peg_duration: 10.0,
        }
    }
}

impl TaskParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.mark_length,
            self.mark_cell,
            self.pad_half_width,
            self.peg_half_width,
            self.peg_length,
            self.hole_depth,
            self.fixture_depth,
            self.wiping_duration,
            self.pick_insert_duration,
            self.peg_duration,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::config("tasks: sizes and durations must be positive"));
        }
        if !(self.yaw_range_deg >= 0.0 && self.position_range >= 0.0) {
            return Err(Error::config("tasks: randomization ranges must be non-negative"));
        }
        if !(self.hole_half_width > self.peg_half_width) {
            return Err(Error::config("tasks: hole must be wider than the peg"));
        }
        if !(self.fixture_half_width > self.hole_half_width + self.chamfer)
            || !(self.fixture_depth > self.hole_depth)
        {
            return Err(Error::config("tasks: fixture must enclose the hole"));
        }
        Ok(())
    }

    pub fn duration(&self, kind: TaskKind) -> f64 {
        match kind {
            TaskKind::Wiping => self.wiping_duration,
            TaskKind::PickInsert => self.pick_insert_duration,
            TaskKind::PegCylinder | TaskKind::PegCuboid => self.peg_duration,
        }
    }

    fn fixture(&self, shape: PegShape) -> HoleFixture {
        HoleFixture {
            shape,
            hole_half_width: self.hole_half_width,
            outer_half_width: self.fixture_half_width,
            hole_depth: self.hole_depth,
            block_depth: self.fixture_depth,
            chamfer: self.chamfer,
        }
    }
}

/// What was sampled at reset, kept for demonstrators and reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub kind: TaskKind,
    pub seed: u64,
    pub duration: f64,
    pub mode_pairs: Vec<(StiffnessMode, StiffnessMode)>,
    /// Sampled object yaw (rad).
    pub yaw: f64,
    /// Sampled placement offset (m).
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessReport {
    pub success: bool,
    pub peak_force: f64,
    pub mean_force: f64,
    /// Fraction of marks wiped, or insertion depth over hole depth.
    pub metric: f64,
}

/// Planar-arm tool orientation pointing straight down.
pub fn planar_tool_down(chain: &KinematicChain) -> UnitQuaternion<f64> {
    chain.base.orientation * UnitQuaternion::from_axis_angle(&Vector3::z_axis(), -FRAC_PI_2)
}

/// IK weights for the planar arm: x, z and rotation about y.
pub fn planar_weights() -> Vector6<f64> {
    Vector6::new(1.0, 0.0, 1.0, 0.0, 1.0, 0.0)
}

pub fn planar_home(chain: &KinematicChain, tip: Vector3<f64>) -> Result<DVector<f64>> {
    let seed = DVector::from_vec(vec![0.6, -1.2, -0.9]);
    chain.inverse_kinematics(&Pose::new(tip, planar_tool_down(chain)), &seed, &planar_weights())
}

/// Tool orientation for the bimanual arms: tool z along `dir` (horizontal), x up.
pub fn horizontal_tool(dir: Vector3<f64>, roll: f64) -> UnitQuaternion<f64> {
    let base = look_at(Vector3::zeros(), dir, Vector3::z()).orientation;
    base * UnitQuaternion::from_axis_angle(&Vector3::z_axis(), roll)
}

/// Shared meeting point of the bimanual peg tasks.
pub const PEG_MEETING_POINT: [f64; 3] = [0.28, 0.0, 0.20];
pub const PEG_BASE_Y: f64 = 0.40;
/// Fixture entrance offset along the left tool axis, and peg tip offset along the right one.
pub const FIXTURE_OFFSET: f64 = 0.04;
pub const PEG_TIP_OFFSET: f64 = 0.06;
/// Standoff of the peg tip from the entrance at reset.
pub const PEG_STANDOFF: f64 = 0.05;

fn six_dof_chain(config: &SimConfig, name: &str, base: Pose) -> KinematicChain {
    match &config.six_dof_chain {
        Some(c) => KinematicChain {
            name: name.to_string(),
            base,
            ..c.clone()
        },
        None => KinematicChain::default_six_dof(name, base),
    }
}

pub fn six_dof_seed() -> DVector<f64> {
    DVector::from_vec(vec![0.0, -1.0, 1.6, -0.6, 1.57, 0.0])
}

/// IK from a fan of base-yaw seeds, keeping the solution with the largest smallest
/// singular value of the Jacobian.
pub fn well_conditioned_ik(chain: &KinematicChain, target: &Pose) -> Result<DVector<f64>> {
    let full = Vector6::repeat(1.0);
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut last_err = None;
    for k in 0..8 {
        let mut seed = six_dof_seed();
        seed[0] = -PI + k as f64 * PI / 4.0;
        for elbow in [1.0, -1.0] {
            seed[1] = -1.0 * elbow;
            seed[2] = 1.6 * elbow;
            match chain.inverse_kinematics(target, &seed, &full) {
                Ok(q) => {
                    let smin = chain.jacobian(&q).svd(false, false).singular_values.min();
                    if best.as_ref().is_none_or(|(b, _)| smin > *b + 1e-9) {
                        best = Some((smin, q));
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
    }
    match best {
        Some((_, q)) => Ok(q),
        None => Err(last_err.unwrap_or_else(|| Error::domain("no IK solution"))),
    }
}

/// Right-arm tool pose that puts the peg tip `standoff` before the fixture entrance.
pub fn peg_approach_pose(entrance: &Pose, standoff: f64) -> Pose {
    // Entrance +z points toward the peg arm; the peg arm's tool z points back into the hole.
    let axis = entrance.orientation * Vector3::z();
    let rot = entrance.orientation * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), PI);
    Pose::new(entrance.position + axis * (standoff + PEG_TIP_OFFSET), rot)
}

fn cameras(config: &SimConfig, arms: &[Arm], target: Vector3<f64>) -> Vec<Camera> {
    let w = config.image_width;
    // Single-arm scenes are viewed from the front and above, framing the work area;
    // the bimanual scene from the side.
    let (eye, field) = if arms.len() == 1 {
        (Vector3::new(0.0, -0.3, 0.4), 0.32)
    } else {
        (Vector3::new(0.6, -0.4, 0.5), 0.6)
    };
    let mut cams = vec![Camera::fixed("static", target + eye, target, field, w)];
    for (i, arm) in arms.iter().enumerate() {
        // Look along the tool axis from slightly behind the tool point.
        let in_tool = if arm.chain.dof() <= 3 {
            Pose::new(
                Vector3::new(-0.06, 0.0, 0.0),
                UnitQuaternion::from_axis_angle(&Vector3::y_axis(), FRAC_PI_2),
            )
        } else {
            Pose::from_position(Vector3::new(0.0, 0.0, -0.06))
        };
        cams.push(Camera::wrist(&format!("wrist_{}", arm.label), i, in_tool, 0.2, w));
    }
    cams
}

/// Builds a freshly randomized world for `kind`; identical seeds give identical worlds.
pub fn reset(kind: TaskKind, seed: u64, config: &SimConfig) -> Result<World> {
    config.validate()?;
    let p = &config.tasks;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let yaw_range = p.yaw_range_deg.to_radians();
    let yaw = if yaw_range > 0.0 {
        rng.random_range(-yaw_range..=yaw_range)
    } else {
        0.0
    };
    let offset = if p.position_range > 0.0 {
        rng.random_range(-p.position_range..=p.position_range)
    } else {
        0.0
    };
    let descriptor = TaskDescriptor {
        kind,
        seed,
        duration: p.duration(kind),
        mode_pairs: kind.mode_pairs(),
        yaw,
        offset,
    };

    let mut world = match kind {
        TaskKind::Wiping => {
            let chain = config.planar_chain();
            let q = planar_home(&chain, Vector3::new(-0.10, 0.0, 0.05))?;
            let arm = Arm::new("arm", chain, q);
            let mut world = World::new(config.clone(), vec![arm], vec![HalfSpace::table()]);
            let n = (p.mark_length / p.mark_cell).round().max(1.0) as usize;
            let start = offset - p.mark_length / 2.0 + p.mark_cell / 2.0;
            let cells: Vec<Vector3<f64>> = (0..n)
                .map(|i| Vector3::new(start + i as f64 * p.mark_cell, 0.0, 0.0))
                .collect();
            world.marks = Some(Marks {
                cleaned: vec![false; cells.len()],
                cells,
                cell_size: p.mark_cell,
                pad_half_width: p.pad_half_width,
            });
            world.bodies.push(Body {
                name: "eraser".into(),
                kind: BodyKind::Eraser {
                    half_extents: [0.015, p.pad_half_width, p.pad_half_width],
                },
                pose: Pose::identity(),
                attached: Some((0, Pose::from_position(Vector3::new(-0.015, 0.0, 0.0)))),
                grasp: None,
            });
            world
        }
        TaskKind::PickInsert => {
            let chain = config.planar_chain();
            let q = planar_home(&chain, Vector3::new(-0.10, 0.0, 0.12))?;
            let arm = Arm::new("arm", chain, q);
            let mut world = World::new(config.clone(), vec![arm], vec![HalfSpace::table()]);
            let z_rot = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw);
            world.bodies.push(Body {
                name: "peg".into(),
                kind: BodyKind::Peg {
                    shape: PegShape::Cylinder,
                    half_width: p.peg_half_width,
                    length: p.peg_length,
                },
                pose: Pose::new(Vector3::new(-0.10, 0.0, 0.0), z_rot),
                attached: None,
                grasp: Some(Grasp {
                    point: Vector3::new(0.0, 0.0, p.peg_length - 0.015),
                    width: 2.0 * p.peg_half_width,
                }),
            });
            world.bodies.push(Body {
                name: "fixture".into(),
                kind: BodyKind::Fixture(p.fixture(PegShape::Cylinder)),
                pose: Pose::from_position(Vector3::new(0.10 + offset, 0.0, p.fixture_depth)),
                attached: None,
                grasp: None,
            });
            world
        }
        TaskKind::PegCylinder | TaskKind::PegCuboid => {
            let shape = if kind == TaskKind::PegCylinder {
                PegShape::Cylinder
            } else {
                PegShape::Cuboid
            };
            let meet = Vector3::from(PEG_MEETING_POINT) + Vector3::new(0.0, 0.0, offset * 0.4);
            // Bases face each other across the meeting point so each tool points
            // along its own arm plane, away from the wrist singularity.
            let left_base = Pose::new(
                Vector3::new(meet.x, PEG_BASE_Y, 0.0),
                UnitQuaternion::identity(),
            );
            let right_base = Pose::new(
                Vector3::new(meet.x, -PEG_BASE_Y, 0.0),
                UnitQuaternion::identity(),
            );
            let left_chain = six_dof_chain(config, "left", left_base);
            let right_chain = six_dof_chain(config, "right", right_base);

            // Left tool points toward -y and carries the fixture with its entrance facing the peg.
            let left_tool = Pose::new(
                meet + Vector3::new(0.0, FIXTURE_OFFSET, 0.0),
                horizontal_tool(-Vector3::y(), 0.0),
            );
            let ql = well_conditioned_ik(&left_chain, &left_tool)?;
            // Grasp yaw: rotation of the fixture about the insertion axis.
            let fixture_in_tool = Pose::new(
                Vector3::new(0.0, 0.0, FIXTURE_OFFSET),
                UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
            );
            let entrance = left_tool.compose(&fixture_in_tool);
            // The peg starts aligned with the unrotated entrance; matching the yaw is the task.
            let nominal = left_tool.compose(&Pose::from_position(Vector3::new(0.0, 0.0, FIXTURE_OFFSET)));
            let right_tool = peg_approach_pose(&nominal, PEG_STANDOFF + 0.03);
            let qr = well_conditioned_ik(&right_chain, &right_tool)?;

            let mut left = Arm::new("left", left_chain, ql);
            let mut right = Arm::new("right", right_chain, qr);
            left.gripper = 0.5;
            left.gripper_command = 0.5;
            right.gripper = 0.2;
            right.gripper_command = 0.2;
            left.held = Some(1);
            right.held = Some(0);
            let mut world = World::new(config.clone(), vec![left, right], Vec::new());
            let peg_in_tool = Pose::new(
                Vector3::new(0.0, 0.0, PEG_TIP_OFFSET),
                UnitQuaternion::from_axis_angle(&Vector3::x_axis(), PI),
            );
            world.bodies.push(Body {
                name: "peg".into(),
                kind: BodyKind::Peg {
                    shape,
                    half_width: p.peg_half_width,
                    length: p.peg_length,
                },
                pose: right_tool.compose(&peg_in_tool),
                attached: Some((1, peg_in_tool)),
                grasp: Some(Grasp {
                    point: Vector3::new(0.0, 0.0, PEG_TIP_OFFSET),
                    width: 2.0 * p.peg_half_width,
                }),
            });
            world.bodies.push(Body {
                name: "fixture".into(),
                kind: BodyKind::Fixture(p.fixture(shape)),
                pose: entrance,
                attached: Some((0, fixture_in_tool)),
                grasp: Some(Grasp {
                    point: Vector3::new(0.0, 0.0, FIXTURE_OFFSET),
                    width: 0.5 * config.gripper_max_width,
                }),
            });
            world
        }
    };
    let target = match kind {
        TaskKind::Wiping | TaskKind::PickInsert => Vector3::new(0.0, 0.0, 0.02),
        _ => Vector3::from(PEG_MEETING_POINT),
    };
    world.cameras = cameras(config, &world.arms, target);
    world.seed = seed;
    world.task = Some(descriptor);
    Ok(world)
}

/// Peg tip depth below the fixture entrance and lateral offset from the hole axis.
pub fn insertion_state(world: &World) -> Option<(f64, f64, HoleFixture)> {
    let peg = world.find_body(|k| matches!(k, BodyKind::Peg { .. }))?;
    let fix = world.find_body(|k| matches!(k, BodyKind::Fixture(_)))?;
    let BodyKind::Fixture(geom) = world.bodies[fix].kind else {
        return None;
    };
    let tip = world.body_world_pose(peg).position;
    let local = world.body_world_pose(fix).inverse_transform_point(&tip);
    let (depth, lateral) = geom.insertion_metrics(&local);
    Some((depth, lateral, geom))
}

/// Success flag plus contact-force statistics for the active task.
pub fn check_success(world: &World) -> SuccessReport {
    let steps = world.metrics.steps.max(1) as f64;
    let peak_force = world.metrics.peak.iter().copied().fold(0.0, f64::max);
    let mean_force = world
        .metrics
        .sum
        .iter()
        .map(|s| s / steps)
        .fold(0.0, f64::max);
    let (success, metric) = match world.task.as_ref().map(|t| t.kind) {
        Some(TaskKind::Wiping) => {
            let frac = world.marks.as_ref().map_or(0.0, |m| m.fraction_cleaned());
            (frac >= 0.9, frac)
        }
        Some(_) => match insertion_state(world) {
            Some((depth, lateral, geom)) => {
                let ratio = depth / geom.hole_depth;
                (ratio >= 0.9 && lateral < geom.clearance(), ratio)
            }
            None => (false, 0.0),
        },
        None => (false, 0.0),
    };
    SuccessReport {
        success,
        peak_force,
        mean_force,
        metric,
    }
}
