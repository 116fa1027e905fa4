//! Fixed-step simulation of position-servoed arms with penalty contact.
//!
//! The arms are "rigid robots": each joint tracks a position command through a
//! stiff PD servo (integrated implicitly), and the environment only enters
//! through penalty contact forces mapped by the contact point Jacobians.

pub mod chain;
pub mod contact;
pub mod render;
pub mod task;

use nalgebra::{DVector, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, StiffnessSpec, Twist, Wrench};

pub use chain::{DhRow, JointLimit, JointState, KinematicChain};
pub use contact::{HalfSpace, HoleFixture, PegShape};
pub use render::{Camera, CameraAnchor, Image};
pub use task::{check_success, reset, SuccessReport, TaskDescriptor, TaskKind, TaskParams};

/// Physics and scene parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub physics_dt: f64,
    pub servo_kp: f64,
    /// Defaults to `2·√kp` when absent.
    pub servo_kd: Option<f64>,
    pub wall_stiffness: f64,
    pub wall_damping: f64,
    pub gravity: bool,
    /// Opening fraction per second.
    pub gripper_speed: f64,
    pub gripper_max_width: f64,
    pub grasp_distance: f64,
    pub image_width: usize,
    pub image_height: usize,
    /// Minimum normal force for a mark cell to count as wiped (N).
    pub wipe_force_threshold: f64,
    pub planar_chain: Option<KinematicChain>,
    pub six_dof_chain: Option<KinematicChain>,
    pub tasks: TaskParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            physics_dt: 1e-3,
            servo_kp: 1e4,
            servo_kd: None,
            wall_stiffness: 1e5,
            wall_damping: 100.0,
            gravity: false,
            gripper_speed: 2.0,
            gripper_max_width: 0.08,
            grasp_distance: 0.01,
            image_width: 64,
            image_height: 64,
            wipe_force_threshold: 1.0,
            planar_chain: None,
            six_dof_chain: None,
            tasks: TaskParams::default(),
        }
    }
}

impl SimConfig {
    pub fn servo_kd(&self) -> f64 {
        self.servo_kd.unwrap_or(2.0 * self.servo_kp.sqrt())
    }

    pub fn planar_chain(&self) -> KinematicChain {
        self.planar_chain
            .clone()
            .unwrap_or_else(KinematicChain::default_planar3)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.physics_dt > 0.0) || !(self.servo_kp > 0.0) || !(self.wall_stiffness > 0.0) {
            return Err(Error::config(
                "sim: physics_dt, servo_kp and wall_stiffness must be positive",
            ));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::config("sim: image size must be non-zero"));
        }
        if let Some(c) = &self.planar_chain {
            c.validate()?;
        }
        if let Some(c) = &self.six_dof_chain {
            c.validate()?;
        }
        self.tasks.validate()
    }
}

#[derive(Debug, Clone)]
pub struct Arm {
    pub label: String,
    pub chain: KinematicChain,
    pub joints: JointState,
    pub command: DVector<f64>,
    /// Actual opening fraction in [0, 1].
    pub gripper: f64,
    pub gripper_command: f64,
    /// Contact probe points in the tool frame.
    pub tool_probes: Vec<Vector3<f64>>,
    pub held: Option<usize>,
    /// Stiffness currently applied by the compliance layer, for observations only.
    pub active_stiffness: Option<StiffnessSpec>,
}

impl Arm {
    pub fn new(label: &str, chain: KinematicChain, q: DVector<f64>) -> Self {
        Self {
            label: label.to_string(),
            command: q.clone(),
            joints: JointState::at_rest(q),
            chain,
            gripper: 1.0,
            gripper_command: 1.0,
            tool_probes: vec![Vector3::zeros()],
            held: None,
            active_stiffness: None,
        }
    }

    pub fn ee_pose(&self) -> Pose {
        self.chain.forward_kinematics(&self.joints.q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BodyKind {
    /// Local frame origin at the insertion tip, `+z` toward the held end.
    Peg {
        shape: PegShape,
        half_width: f64,
        length: f64,
    },
    Fixture(HoleFixture),
    Eraser {
        half_extents: [f64; 3],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grasp {
    /// Grasp point in the body frame.
    pub point: Vector3<f64>,
    /// Object width across the fingers (m).
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    pub name: String,
    pub kind: BodyKind,
    pub pose: Pose,
    /// Arm index and body pose in that arm's tool frame.
    pub attached: Option<(usize, Pose)>,
    pub grasp: Option<Grasp>,
}

impl Body {
    /// Contact probe points in the body frame.
    pub fn probes(&self) -> Vec<Vector3<f64>> {
        match self.kind {
            BodyKind::Peg {
                shape, half_width, ..
            } => {
                let ring: Vec<(f64, f64)> = match shape {
                    PegShape::Cylinder => (0..8)
                        .map(|k| {
                            let a = k as f64 * std::f64::consts::FRAC_PI_4;
                            (half_width * a.cos(), half_width * a.sin())
                        })
                        .collect(),
                    PegShape::Cuboid => {
                        let h = half_width;
                        vec![
                            (h, h),
                            (-h, h),
                            (-h, -h),
                            (h, -h),
                            (h, 0.0),
                            (0.0, h),
                            (-h, 0.0),
                            (0.0, -h),
                        ]
                    }
                };
                let mut pts = vec![Vector3::zeros()];
                for z in [0.0, 0.015] {
                    pts.extend(ring.iter().map(|(x, y)| Vector3::new(*x, *y, z)));
                }
                pts
            }
            _ => Vec::new(),
        }
    }
}

/// Dirt cells on the table that get wiped under sufficient contact force.
#[derive(Debug, Clone, PartialEq)]
pub struct Marks {
    pub cells: Vec<Vector3<f64>>,
    pub cleaned: Vec<bool>,
    pub cell_size: f64,
    pub pad_half_width: f64,
}

impl Marks {
    pub fn fraction_cleaned(&self) -> f64 {
        if self.cells.is_empty() {
            return 0.0;
        }
        self.cleaned.iter().filter(|c| **c).count() as f64 / self.cells.len() as f64
    }
}

/// Running contact-force statistics per arm (norm of the sensed force).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContactMetrics {
    pub peak: Vec<f64>,
    pub sum: Vec<f64>,
    pub steps: u64,
}

/// One resolved penalty contact.
#[derive(Debug, Clone, Copy)]
pub struct ContactForce {
    pub point: Vector3<f64>,
    /// Force applied to the probe side (world frame).
    pub force: Vector3<f64>,
    pub probe_arm: Option<usize>,
    pub surface_arm: Option<usize>,
    /// True when the probe is a tool point (not a held object).
    pub tool: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmObservation {
    pub ee_pose: Pose,
    pub ee_twist: Twist,
    /// Wrench the arm exerts on its environment, in the wrist sensor frame.
    pub wrench: Wrench,
    /// Same wrench in the world frame, referred to the tool center point.
    pub wrench_world: Wrench,
    pub gripper: f64,
    pub stiffness: Option<StiffnessSpec>,
    pub joints: JointState,
}

/// Immutable snapshot of the world after a step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observation {
    pub arms: Vec<ArmObservation>,
    #[serde(skip)]
    pub images: Vec<Image>,
    pub time: f64,
}

#[derive(Debug, Clone)]
pub struct World {
    pub config: SimConfig,
    pub arms: Vec<Arm>,
    pub surfaces: Vec<HalfSpace>,
    pub bodies: Vec<Body>,
    pub marks: Option<Marks>,
    pub task: Option<TaskDescriptor>,
    pub cameras: Vec<Camera>,
    pub seed: u64,
    pub time: f64,
    pub metrics: ContactMetrics,
    tool_normal_force: Vec<f64>,
}

struct ArmKinematics {
    frames: chain::ChainFrames,
    ee: Pose,
    twist: Vector6<f64>,
}

impl World {
    pub fn new(config: SimConfig, arms: Vec<Arm>, surfaces: Vec<HalfSpace>) -> Self {
        let n = arms.len();
        Self {
            config,
            arms,
            surfaces,
            bodies: Vec::new(),
            marks: None,
            task: None,
            cameras: Vec::new(),
            seed: 0,
            time: 0.0,
            metrics: ContactMetrics {
                peak: vec![0.0; n],
                sum: vec![0.0; n],
                steps: 0,
            },
            tool_normal_force: vec![0.0; n],
        }
    }

    fn kinematics(&self) -> Vec<ArmKinematics> {
        self.arms
            .iter()
            .map(|arm| {
                let frames = arm.chain.frames(&arm.joints.q);
                let ee = Pose::from_isometry(&frames.ee);
                let j = arm.chain.jacobian_at(&frames, &frames.ee.translation.vector);
                let twist = j * &arm.joints.qdot;
                ArmKinematics { frames, ee, twist }
            })
            .collect()
    }

    fn point_velocity(kin: &ArmKinematics, p: &Vector3<f64>) -> Vector3<f64> {
        let v: Vector3<f64> = kin.twist.fixed_rows::<3>(0).into();
        let w: Vector3<f64> = kin.twist.fixed_rows::<3>(3).into();
        v + w.cross(&(p - kin.ee.position))
    }

    fn body_pose(&self, body: &Body, kin: &[ArmKinematics]) -> Pose {
        match body.attached {
            Some((arm, offset)) => kin[arm].ee.compose(&offset),
            None => body.pose,
        }
    }

    fn resolve_contacts(&self, kin: &[ArmKinematics]) -> Vec<ContactForce> {
        let k = self.config.wall_stiffness;
        let d = self.config.wall_damping;
        let mut out = Vec::new();
        let body_poses: Vec<Pose> = self.bodies.iter().map(|b| self.body_pose(b, kin)).collect();

        for (ai, arm) in self.arms.iter().enumerate() {
            let kin_a = &kin[ai];
            for probe in &arm.tool_probes {
                let p = kin_a.ee.transform_point(probe);
                for s in &self.surfaces {
                    if let Some((depth, n)) = s.penetration(&p) {
                        let rate = -Self::point_velocity(kin_a, &p).dot(&n);
                        let f = contact::penalty_force(k, d, depth, rate);
                        out.push(ContactForce {
                            point: p,
                            force: n * f,
                            probe_arm: Some(ai),
                            surface_arm: None,
                            tool: true,
                        });
                    }
                }
            }
        }

        // Held pegs against half-spaces and fixtures.
        for (bi, body) in self.bodies.iter().enumerate() {
            let Some((ai, _)) = body.attached else { continue };
            if !matches!(body.kind, BodyKind::Peg { .. }) {
                continue;
            }
            let kin_a = &kin[ai];
            for probe in body.probes() {
                let p = body_poses[bi].transform_point(&probe);
                let vp = Self::point_velocity(kin_a, &p);
                for s in &self.surfaces {
                    if let Some((depth, n)) = s.penetration(&p) {
                        let f = contact::penalty_force(k, d, depth, -vp.dot(&n));
                        out.push(ContactForce {
                            point: p,
                            force: n * f,
                            probe_arm: Some(ai),
                            surface_arm: None,
                            tool: false,
                        });
                    }
                }
                for (fi, fixture) in self.bodies.iter().enumerate() {
                    let BodyKind::Fixture(geom) = fixture.kind else { continue };
                    let fpose = body_poses[fi];
                    let local = fpose.inverse_transform_point(&p);
                    if let Some((depth, n_local)) = geom.penetration_local(&local) {
                        let n = fpose.orientation * n_local;
                        let vs = match fixture.attached {
                            Some((fa, _)) => Self::point_velocity(&kin[fa], &p),
                            None => Vector3::zeros(),
                        };
                        let f = contact::penalty_force(k, d, depth, -(vp - vs).dot(&n));
                        out.push(ContactForce {
                            point: p,
                            force: n * f,
                            probe_arm: Some(ai),
                            surface_arm: fixture.attached.map(|(fa, _)| fa),
                            tool: false,
                        });
                    }
                }
            }
        }
        out
    }

    /// Forces acting on each arm: list of (point, force) in world.
    fn arm_loads(&self, contacts: &[ContactForce]) -> Vec<Vec<(Vector3<f64>, Vector3<f64>)>> {
        let mut loads = vec![Vec::new(); self.arms.len()];
        for c in contacts {
            if let Some(a) = c.probe_arm {
                loads[a].push((c.point, c.force));
            }
            if let Some(b) = c.surface_arm {
                loads[b].push((c.point, -c.force));
            }
        }
        loads
    }

    fn sensed_wrenches(
        &self,
        kin: &[ArmKinematics],
        loads: &[Vec<(Vector3<f64>, Vector3<f64>)>],
    ) -> Vec<(Wrench, Wrench)> {
        kin.iter()
            .zip(loads)
            .map(|(k, load)| {
                let sensor = k.frames.flange.translation.vector;
                // The sensor reports what the arm applies to the world: minus the contact load.
                let mut at_sensor = Wrench::zero();
                for (p, f) in load {
                    at_sensor.force -= f;
                    at_sensor.torque -= (p - sensor).cross(f);
                }
                let world_tcp = at_sensor.shift(&sensor, &k.ee.position);
                let local = at_sensor.rotate(&k.frames.flange.rotation.inverse());
                (local, world_tcp)
            })
            .collect()
    }

    /// Sum of contact wrenches on `arm` in its wrist sensor frame (zero when free).
    pub fn contact_wrench(&self, arm: usize) -> Result<Wrench> {
        if arm >= self.arms.len() {
            return Err(Error::domain(format!("no arm with index {arm}")));
        }
        let kin = self.kinematics();
        let contacts = self.resolve_contacts(&kin);
        let loads = self.arm_loads(&contacts);
        Ok(self.sensed_wrenches(&kin, &loads)[arm].0)
    }

    pub fn contacts(&self) -> Vec<ContactForce> {
        let kin = self.kinematics();
        self.resolve_contacts(&kin)
    }

    /// Advances one physics step with per-arm joint position commands.
    pub fn step(&mut self, commands: &[DVector<f64>], dt: f64) -> Result<Observation> {
        if (dt - self.config.physics_dt).abs() > 1e-12 {
            return Err(Error::config(format!(
                "step dt {dt} differs from configured physics step {}",
                self.config.physics_dt
            )));
        }
        if commands.len() != self.arms.len() {
            return Err(Error::config(format!(
                "expected {} command vectors, got {}",
                self.arms.len(),
                commands.len()
            )));
        }
        for (arm, cmd) in self.arms.iter_mut().zip(commands) {
            if cmd.len() != arm.chain.dof() || cmd.iter().any(|v| !v.is_finite()) {
                return Err(Error::domain(format!(
                    "invalid joint command for arm '{}'",
                    arm.label
                )));
            }
            arm.command = arm.chain.clamp(cmd);
        }

        let kin = self.kinematics();
        let contacts = self.resolve_contacts(&kin);
        let loads = self.arm_loads(&contacts);
        let sensed = self.sensed_wrenches(&kin, &loads);

        for (i, (w, _)) in sensed.iter().enumerate() {
            let f = w.force.norm();
            self.metrics.peak[i] = self.metrics.peak[i].max(f);
            self.metrics.sum[i] += f;
        }
        self.metrics.steps += 1;
        self.tool_normal_force = vec![0.0; self.arms.len()];
        for c in contacts.iter().filter(|c| c.tool) {
            if let Some(a) = c.probe_arm {
                self.tool_normal_force[a] += c.force.norm();
            }
        }
        self.update_marks(&kin);

        let kp = self.config.servo_kp;
        let kd = self.config.servo_kd();
        let gravity = self.config.gravity;
        for (ai, arm) in self.arms.iter_mut().enumerate() {
            let n = arm.chain.dof();
            let mut tau_ext = DVector::zeros(n);
            for (p, f) in &loads[ai] {
                let j = arm.chain.jacobian_at(&kin[ai].frames, p);
                let mut w = Vector6::zeros();
                w.fixed_rows_mut::<3>(0).copy_from(f);
                tau_ext += j.transpose() * w;
            }
            if gravity {
                let g = Vector3::new(0.0, 0.0, -9.81);
                for (k, m) in arm.chain.link_masses.iter().enumerate() {
                    let jl = arm.chain.link_point_jacobian(&kin[ai].frames, k);
                    tau_ext += jl.transpose() * (g * *m);
                }
            }
            for i in 0..n {
                let inertia = arm.chain.joint_inertia[i];
                let q = arm.joints.q[i];
                let v = arm.joints.qdot[i];
                // Backward-Euler in the servo terms, explicit in external torque.
                let num = inertia * v + dt * (kp * (arm.command[i] - q) + tau_ext[i]);
                let den = inertia + dt * kd + dt * dt * kp;
                let v_new = num / den;
                let q_new = q + dt * v_new;
                let lim = arm.chain.limits[i];
                if q_new < lim.lower || q_new > lim.upper {
                    arm.joints.q[i] = lim.clamp(q_new);
                    arm.joints.qdot[i] = 0.0;
                } else {
                    arm.joints.q[i] = q_new;
                    arm.joints.qdot[i] = v_new;
                }
            }
            let dg = arm.gripper_command - arm.gripper;
            let max_step = self.config.gripper_speed * dt;
            arm.gripper = (arm.gripper + dg.clamp(-max_step, max_step)).clamp(0.0, 1.0);
        }

        self.time += dt;
        self.update_grasps();
        self.check_finite()?;
        Ok(self.observe_with(&sensed_after(self), false))
    }

    fn update_marks(&mut self, kin: &[ArmKinematics]) {
        let threshold = self.config.wipe_force_threshold;
        let Some(marks) = self.marks.as_mut() else { return };
        for (ai, k) in kin.iter().enumerate() {
            if self.tool_normal_force[ai] < threshold {
                continue;
            }
            let tip = k.ee.position;
            for (cell, cleaned) in marks.cells.iter().zip(marks.cleaned.iter_mut()) {
                if (tip.x - cell.x).abs() <= marks.pad_half_width
                    && (tip.y - cell.y).abs() <= marks.pad_half_width
                {
                    *cleaned = true;
                }
            }
        }
    }

    fn update_grasps(&mut self) {
        let max_width = self.config.gripper_max_width;
        let reach = self.config.grasp_distance;
        let ee: Vec<Pose> = self.arms.iter().map(|a| a.ee_pose()).collect();
        for body in self.bodies.iter_mut() {
            if let Some((ai, offset)) = body.attached {
                body.pose = ee[ai].compose(&offset);
            }
        }
        for (ai, arm) in self.arms.iter_mut().enumerate() {
            match arm.held {
                Some(bi) => {
                    let body = &mut self.bodies[bi];
                    let width = body.grasp.as_ref().map(|g| g.width).unwrap_or(0.0);
                    if arm.gripper > width / max_width + 0.05 {
                        body.attached = None;
                        arm.held = None;
                    }
                }
                None => {
                    for (bi, body) in self.bodies.iter_mut().enumerate() {
                        if body.attached.is_some() {
                            continue;
                        }
                        let Some(g) = &body.grasp else { continue };
                        let gp = body.pose.transform_point(&g.point);
                        if arm.gripper < g.width / max_width
                            && (gp - ee[ai].position).norm() <= reach
                        {
                            body.attached = Some((ai, ee[ai].inverse().compose(&body.pose)));
                            arm.held = Some(bi);
                            break;
                        }
                    }
                }
            }
        }
    }

    fn check_finite(&self) -> Result<()> {
        for arm in &self.arms {
            if !arm.joints.is_finite() {
                return Err(Error::Diverged {
                    time: self.time,
                    snapshot: format!(
                        "arm '{}' q={:?} qdot={:?} cmd={:?}",
                        arm.label,
                        arm.joints.q.as_slice(),
                        arm.joints.qdot.as_slice(),
                        arm.command.as_slice()
                    ),
                });
            }
        }
        Ok(())
    }

    /// Snapshot of the current state; renders images when `with_images` is set.
    pub fn observe(&self, with_images: bool) -> Observation {
        self.observe_with(&sensed_after(self), with_images)
    }

    fn observe_with(&self, sensed: &[(Wrench, Wrench)], with_images: bool) -> Observation {
        let kin = self.kinematics();
        let arms = self
            .arms
            .iter()
            .zip(kin.iter())
            .zip(sensed)
            .map(|((arm, k), (local, world))| ArmObservation {
                ee_pose: k.ee,
                ee_twist: Twist::from_vector(&k.twist),
                wrench: *local,
                wrench_world: *world,
                gripper: arm.gripper,
                stiffness: arm.active_stiffness,
                joints: arm.joints.clone(),
            })
            .collect();
        let images = if with_images {
            (0..self.cameras.len())
                .map(|c| render::render(self, c))
                .collect()
        } else {
            Vec::new()
        };
        Observation {
            arms,
            images,
            time: self.time,
        }
    }

    /// Current pose of body `i` (following its holder when attached).
    pub fn body_world_pose(&self, i: usize) -> Pose {
        let b = &self.bodies[i];
        match b.attached {
            Some((a, offset)) => self.arms[a].ee_pose().compose(&offset),
            None => b.pose,
        }
    }

    pub fn find_body(&self, pred: impl Fn(&BodyKind) -> bool) -> Option<usize> {
        self.bodies.iter().position(|b| pred(&b.kind))
    }

    /// Sum of kinetic energy and servo spring energy (J), for dissipation checks.
    pub fn mechanical_energy(&self) -> f64 {
        let kp = self.config.servo_kp;
        self.arms
            .iter()
            .map(|a| {
                (0..a.chain.dof())
                    .map(|i| {
                        let v = a.joints.qdot[i];
                        let e = a.joints.q[i] - a.command[i];
                        0.5 * a.chain.joint_inertia[i] * v * v + 0.5 * kp * e * e
                    })
                    .sum::<f64>()
            })
            .sum()
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.arms
            .iter()
            .map(|a| {
                (0..a.chain.dof())
                    .map(|i| 0.5 * a.chain.joint_inertia[i] * a.joints.qdot[i].powi(2))
                    .sum::<f64>()
            })
            .sum()
    }
}

fn sensed_after(world: &World) -> Vec<(Wrench, Wrench)> {
    let kin = world.kinematics();
    let contacts = world.resolve_contacts(&kin);
    let loads = world.arm_loads(&contacts);
    world.sensed_wrenches(&kin, &loads)
}

/// Rotation about world z by `yaw` applied to a pose's orientation.
pub fn yawed(orientation: UnitQuaternion<f64>, yaw: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw) * orientation
}

#[cfg(test)]
mod tests;
