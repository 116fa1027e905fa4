//! Cartesian compliance control by forward dynamics of a virtual model.
//!
//! Each period the controller forms a virtual Cartesian wrench from the pose
//! error, the virtual velocity and the measured contact wrench, maps it to joint
//! torques with `Jᵀ`, and integrates a virtual joint-space model. The integrated
//! joint positions are the position command sent to the stiff inner servo.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pose_error, Pose, StiffnessSpec, Wrench};
use crate::sim::{JointState, KinematicChain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StiffnessMode {
    Low,
    Mid,
    High,
}

impl StiffnessMode {
    pub fn value(&self) -> f64 {
        match self {
            StiffnessMode::Low => 250.0,
            StiffnessMode::Mid => 500.0,
            StiffnessMode::High => 750.0,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            StiffnessMode::Low => "low",
            StiffnessMode::Mid => "mid",
            StiffnessMode::High => "high",
        }
    }

    pub fn spec(&self) -> StiffnessSpec {
        StiffnessSpec::diagonal(self.value())
    }
}

impl fmt::Display for StiffnessMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for StiffnessMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(StiffnessMode::Low),
            "mid" => Ok(StiffnessMode::Mid),
            "high" => Ok(StiffnessMode::High),
            other => Err(Error::config(format!(
                "unknown stiffness mode '{other}' (choices: low, mid, high)"
            ))),
        }
    }
}

/// Diagonal stiffness with the mode's value on all six entries.
pub fn set_stiffness_mode(mode: StiffnessMode) -> StiffnessSpec {
    mode.spec()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ControllerTarget {
    pub pose: Pose,
    pub stiffness: StiffnessSpec,
    pub goal_wrench: Wrench,
    pub gripper: f64,
}

impl ControllerTarget {
    pub fn new(pose: Pose, stiffness: StiffnessSpec, gripper: f64) -> Self {
        Self {
            pose,
            stiffness,
            goal_wrench: Wrench::zero(),
            gripper,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pose.validate()?;
        if !self.stiffness.is_positive_definite() {
            return Err(Error::domain("target stiffness is not positive-definite"));
        }
        if !(0.0..=1.0).contains(&self.gripper) {
            return Err(Error::domain(format!(
                "gripper fraction {} outside [0, 1]",
                self.gripper
            )));
        }
        if !self.goal_wrench.is_finite() {
            return Err(Error::domain("goal wrench is not finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    /// Control period (s).
    pub period: f64,
    /// Virtual joint-space inertia, applied as `m·I`.
    pub virtual_inertia: f64,
    /// Virtual Cartesian mass used to derive damping `D = 2·√(K·m)`.
    pub damping_mass: f64,
    /// Integration substeps of the virtual model per period.
    pub substeps: usize,
    /// Largest stiffness change per period (N/m or N·m/rad).
    pub max_stiffness_slew: f64,
    /// Seconds without a target update before the stale flag is raised.
    pub watchdog_timeout: f64,
    pub singular_threshold: f64,
    /// Extra translational damping along the measured contact force direction (N·s/m).
    pub contact_damping: f64,
    /// Force magnitude above which the arm counts as in contact (N).
    pub contact_threshold: f64,
    /// Decay time of the contact damping after the force vanishes (s).
    pub contact_memory: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            period: 0.01,
            virtual_inertia: 0.05,
            damping_mass: 1.0,
            substeps: 10,
            max_stiffness_slew: 50.0,
            watchdog_timeout: 0.5,
            singular_threshold: 1e-4,
            contact_damping: 1000.0,
            contact_threshold: 0.05,
            contact_memory: 0.2,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0)
            || !(self.virtual_inertia > 0.0)
            || !(self.damping_mass > 0.0)
            || self.substeps == 0
            || !(self.max_stiffness_slew > 0.0)
            || !(self.watchdog_timeout > 0.0)
            || !(self.contact_damping >= 0.0)
            || !(self.contact_memory > 0.0)
        {
            return Err(Error::config(
                "controller: period, inertia, damping mass, substeps, slew and watchdog must be positive",
            ));
        }
        Ok(())
    }

    /// Per-axis damping from the current stiffness diagonal.
    pub fn damping(&self, k: &StiffnessSpec) -> Matrix6<f64> {
        let d = k.diagonal_entries();
        Matrix6::from_diagonal(&nalgebra::Vector6::from_iterator(
            d.iter().map(|v| 2.0 * (v.max(0.0) * self.damping_mass).sqrt()),
        ))
    }
}

/// Latest-wins, tear-free target slot shared between producers and the control loop.
#[derive(Debug, Clone, Default)]
pub struct TargetSlot {
    inner: Arc<Mutex<Option<ControllerTarget>>>,
}

impl TargetSlot {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replaces any pending target; stale targets are dropped, never queued.
    pub fn update(&self, target: ControllerTarget) -> Result<()> {
        target.validate()?;
        *self.inner.lock().unwrap_or_else(|e| e.into_inner()) = Some(target);
        Ok(())
    }

    pub fn take(&self) -> Option<ControllerTarget> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).take()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ControllerFlags {
    /// The Jacobian was near-singular during the last step.
    pub singular: bool,
    /// No target update arrived within the watchdog timeout.
    pub stale: bool,
}

/// Move `from` toward `to` by at most `slew` in any entry, along the straight line
/// between them (a convex combination, so positive-definiteness is preserved).
pub fn slew_stiffness(from: &StiffnessSpec, to: &StiffnessSpec, slew: f64) -> StiffnessSpec {
    let diff = to.to_matrix6() - from.to_matrix6();
    let max = diff.amax();
    if max <= slew {
        return *to;
    }
    let a = slew / max;
    let blend = |x: &Matrix3<f64>, y: &Matrix3<f64>| x + (y - x) * a;
    StiffnessSpec {
        translational: blend(&from.translational, &to.translational),
        rotational: blend(&from.rotational, &to.rotational),
    }
}

pub struct ComplianceController {
    pub config: ControllerConfig,
    chain: KinematicChain,
    q: DVector<f64>,
    qdot: DVector<f64>,
    target: ControllerTarget,
    stiffness: StiffnessSpec,
    time: f64,
    last_update: f64,
    flags: ControllerFlags,
    /// Last contact normal and its weight in [0, 1].
    contact_normal: Vector3<f64>,
    contact_weight: f64,
    diagnostics: Option<Box<dyn Write + Send>>,
}

impl fmt::Debug for ComplianceController {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ComplianceController")
            .field("chain", &self.chain.name)
            .field("q", &self.q.as_slice())
            .field("time", &self.time)
            .field("flags", &self.flags)
            .finish()
    }
}

impl ComplianceController {
    /// Starts at the measured joint state, holding the current pose with `stiffness`.
    pub fn new(
        chain: KinematicChain,
        config: ControllerConfig,
        state: &JointState,
        stiffness: StiffnessSpec,
    ) -> Result<Self> {
        config.validate()?;
        if state.q.len() != chain.dof() {
            return Err(Error::config("joint state size does not match the chain"));
        }
        let pose = chain.forward_kinematics(&state.q);
        Ok(Self {
            config,
            q: state.q.clone(),
            qdot: DVector::zeros(chain.dof()),
            target: ControllerTarget::new(pose, stiffness, 1.0),
            stiffness,
            chain,
            time: 0.0,
            last_update: 0.0,
            flags: ControllerFlags::default(),
            contact_normal: Vector3::zeros(),
            contact_weight: 0.0,
            diagnostics: None,
        })
    }

    /// Streams per-step CSV rows (time, pose error, K diagonal, measured force/torque).
    pub fn enable_diagnostics(&mut self, mut out: Box<dyn Write + Send>) -> Result<()> {
        writeln!(
            out,
            "t,ex,ey,ez,erx,ery,erz,kx,ky,kz,krx,kry,krz,fx,fy,fz,tx,ty,tz"
        )?;
        self.diagnostics = Some(out);
        Ok(())
    }

    pub fn update_target(&mut self, target: ControllerTarget) -> Result<()> {
        target.validate()?;
        self.target = target;
        self.last_update = self.time;
        self.flags.stale = false;
        Ok(())
    }

    pub fn target(&self) -> &ControllerTarget {
        &self.target
    }

    /// Stiffness actually applied (after slew limiting).
    pub fn active_stiffness(&self) -> &StiffnessSpec {
        &self.stiffness
    }

    pub fn flags(&self) -> ControllerFlags {
        self.flags
    }

    pub fn virtual_state(&self) -> JointState {
        JointState {
            q: self.q.clone(),
            qdot: self.qdot.clone(),
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// One control period: returns the joint position command.
    ///
    /// `f_meas` is the wrench the arm exerts on its environment, world frame, at the
    /// tool center point.
    pub fn control_step(&mut self, f_meas: &Wrench, dt: f64) -> Result<DVector<f64>> {
        if (dt - self.config.period).abs() > 1e-12 {
            return Err(Error::config(format!(
                "control step {dt} differs from configured period {}",
                self.config.period
            )));
        }
        if !f_meas.is_finite() {
            return Err(Error::domain("measured wrench is not finite"));
        }
        self.stiffness = slew_stiffness(
            &self.stiffness,
            &self.target.stiffness,
            self.config.max_stiffness_slew,
        );
        let k = self.stiffness.to_matrix6();
        let mut d = self.config.damping(&self.stiffness);
        let fm = f_meas.force.norm();
        if fm > self.config.contact_threshold {
            self.contact_normal = f_meas.force / fm;
            self.contact_weight = 1.0;
        } else {
            self.contact_weight *= (-dt / self.config.contact_memory).exp();
        }
        if self.contact_weight > 0.0 {
            // Stiff contact is only sampled at the control rate; damping along the
            // normal keeps the force loop stable without slowing tangential motion.
            let n = self.contact_normal;
            let extra = n * n.transpose() * (self.config.contact_damping * self.contact_weight);
            let mut block = d.fixed_view_mut::<3, 3>(0, 0);
            block += extra;
        }
        let external = (self.target.goal_wrench - *f_meas).to_vector();
        let n = self.chain.dof();
        let h = dt / self.config.substeps as f64;
        let m = self.config.virtual_inertia;
        self.flags.singular = false;
        let mut last_error = nalgebra::Vector6::zeros();

        for _ in 0..self.config.substeps {
            let frames = self.chain.frames(&self.q);
            let x = Pose::from_isometry(&frames.ee);
            let j = self
                .chain
                .jacobian_at(&frames, &frames.ee.translation.vector);
            let e = pose_error(&self.target.pose, &x).to_vector();
            last_error = e;
            let jd = DMatrix::from_column_slice(6, n, j.as_slice());
            let sigma_min = jd.clone().singular_values().min();
            let mut a = DMatrix::identity(n, n) * m
                + jd.transpose() * DMatrix::from_column_slice(6, 6, d.as_slice()) * &jd * h;
            if sigma_min < self.config.singular_threshold {
                // Extra joint damping near singularities slows the update instead of letting it blow up.
                self.flags.singular = true;
                a += DMatrix::identity(n, n) * (m * 10.0);
            }
            let f = k * e + external;
            let tau = jd.transpose() * DVector::from_column_slice(f.as_slice());
            // Semi-implicit Euler with the damping term treated implicitly.
            let rhs = &self.qdot * m + tau * h;
            let qdot = a
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Numerical("virtual model solve failed".into()))?;
            let q_new = &self.q + &qdot * h;
            let clamped = self.chain.clamp(&q_new);
            for i in 0..n {
                self.qdot[i] = if clamped[i] != q_new[i] { 0.0 } else { qdot[i] };
            }
            self.q = clamped;
        }
        if !self.q.iter().chain(self.qdot.iter()).all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!(
                "virtual model diverged at t={:.3}",
                self.time
            )));
        }
        self.time += dt;
        if self.time - self.last_update > self.config.watchdog_timeout + 1e-9 {
            self.flags.stale = true;
        }
        if let Some(out) = self.diagnostics.as_mut() {
            let kd = self.stiffness.diagonal_entries();
            let fm = f_meas.to_array();
            let mut row = format!("{:.4}", self.time);
            for v in last_error.iter().chain(kd.iter()).chain(fm.iter()) {
                row.push_str(&format!(",{v:.6}"));
            }
            writeln!(out, "{row}")?;
        }
        Ok(self.q.clone())
    }
}
