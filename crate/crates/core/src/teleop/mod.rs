//! Teleoperation: relative pose mapping with clutching, gripper trigger,
//! stiffness-mode toggling and haptic intensity.

pub mod protocol;
pub mod server;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::control::{ControllerTarget, StiffnessMode};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Wrench};
pub use protocol::{Buttons, WireMessage, PROTOCOL_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeleopConfig {
    /// Controller-to-robot translation scale.
    pub motion_scale: f64,
    /// Force at which haptic intensity saturates (N).
    pub haptic_max_force: f64,
    /// Inputs older than this are ignored (ms).
    pub stale_input_ms: u64,
    /// State broadcast rate (Hz).
    pub state_rate: f64,
}

impl Default for TeleopConfig {
    fn default() -> Self {
        Self {
            motion_scale: 1.0,
            haptic_max_force: 20.0,
            stale_input_ms: 200,
            state_rate: 30.0,
        }
    }
}

impl TeleopConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.motion_scale > 0.0) || !(self.haptic_max_force > 0.0) || !(self.state_rate > 0.0) {
            return Err(Error::config(
                "teleop: motion_scale, haptic_max_force and state_rate must be positive",
            ));
        }
        Ok(())
    }
}

/// Desired gripper opening fraction from the trigger, clamped to [0, 1].
pub fn trigger_to_gripper(t: f64) -> f64 {
    if t.is_nan() {
        return 0.0;
    }
    t.clamp(0.0, 1.0)
}

/// Vibration intensity in [0, 1], linear in the force magnitude up to `max_force`.
pub fn haptic_intensity(wrench: &Wrench, max_force: f64) -> f64 {
    let f = wrench.force.norm();
    if !f.is_finite() {
        return 1.0;
    }
    (f / max_force).clamp(0.0, 1.0)
}

#[derive(Debug, Clone)]
pub struct TeleopSession {
    pub arm: usize,
    pub clutch: bool,
    pub controller_start: Pose,
    pub ee_start: Pose,
    pub modes: (StiffnessMode, StiffnessMode),
    pub mode_index: usize,
    pub scale: f64,
    pub gripper: f64,
    last_target: Option<Pose>,
    last_buttons: Buttons,
    last_seq: Option<u64>,
}

impl TeleopSession {
    /// A session toggling between `modes`; one of them must be `Mid`.
    pub fn new(arm: usize, modes: (StiffnessMode, StiffnessMode), scale: f64) -> Result<Self> {
        if modes.0 != StiffnessMode::Mid && modes.1 != StiffnessMode::Mid {
            return Err(Error::config(format!(
                "mode pair ({}, {}) must contain mid",
                modes.0, modes.1
            )));
        }
        if modes.0 == modes.1 {
            return Err(Error::config("mode pair must hold two different modes"));
        }
        Ok(Self {
            arm,
            clutch: false,
            controller_start: Pose::identity(),
            ee_start: Pose::identity(),
            modes,
            mode_index: 0,
            scale,
            gripper: 1.0,
            last_target: None,
            last_buttons: Buttons {
                menu: false,
                grip: false,
            },
            last_seq: None,
        })
    }

    pub fn mode(&self) -> StiffnessMode {
        if self.mode_index == 0 {
            self.modes.0
        } else {
            self.modes.1
        }
    }

    /// Stores the reference poses. The robot reference is the last emitted target when
    /// there is one, so re-engaging never makes the target jump.
    pub fn engage_clutch(&mut self, controller_pose: Pose, current_ee: Pose) {
        if self.clutch {
            return;
        }
        self.clutch = true;
        self.controller_start = controller_pose;
        self.ee_start = self.last_target.unwrap_or(current_ee);
    }

    pub fn disengage_clutch(&mut self) {
        self.clutch = false;
    }

    /// Robot target from the controller pose; returns the last target when disengaged.
    pub fn map_controller_to_target(&mut self, controller: &Pose) -> Option<Pose> {
        if !self.clutch {
            return self.last_target;
        }
        let dp = (controller.position - self.controller_start.position) * self.scale;
        let dq = controller.orientation * self.controller_start.orientation.inverse();
        let target = Pose::new(self.ee_start.position + dp, dq * self.ee_start.orientation);
        self.last_target = Some(target);
        Some(target)
    }

    pub fn toggle_stiffness(&mut self) -> StiffnessMode {
        self.mode_index = 1 - self.mode_index;
        self.mode()
    }

    pub fn last_target(&self) -> Option<Pose> {
        self.last_target
    }

    /// Seeds the hold target (e.g. the current EE) before any input arrived.
    pub fn hold(&mut self, pose: Pose) {
        if self.last_target.is_none() {
            self.last_target = Some(pose);
        }
    }

    pub fn controller_target(&self) -> Option<ControllerTarget> {
        self.last_target
            .map(|p| ControllerTarget::new(p, self.mode().spec(), self.gripper))
    }

    /// Checks that sequence numbers strictly increase.
    pub fn check_seq(&mut self, seq: u64) -> Result<()> {
        if let Some(last) = self.last_seq {
            if seq <= last {
                return Err(Error::protocol(
                    "sequence",
                    format!("sequence number {seq} does not follow {last}"),
                ));
            }
        }
        self.last_seq = Some(seq);
        Ok(())
    }

    /// Applies one client message. Button edges toggle the clutch (menu) and mode (grip).
    /// Returns the controller target to publish, if any.
    pub fn apply(&mut self, msg: &WireMessage, current_ee: Pose) -> Result<Option<ControllerTarget>> {
        match msg {
            WireMessage::Input {
                pos,
                quat,
                trigger,
                buttons,
                ..
            } => {
                let controller = Pose::new(
                    Vector3::from(*pos),
                    UnitQuaternion::from_quaternion(Quaternion::new(quat[0], quat[1], quat[2], quat[3])),
                );
                if buttons.menu && !self.last_buttons.menu {
                    if self.clutch {
                        self.disengage_clutch();
                    } else {
                        self.engage_clutch(controller, current_ee);
                    }
                }
                if buttons.grip && !self.last_buttons.grip {
                    self.toggle_stiffness();
                }
                self.last_buttons = *buttons;
                self.gripper = trigger_to_gripper(*trigger);
                self.map_controller_to_target(&controller);
            }
            WireMessage::Clutch { engaged, .. } => {
                if !*engaged {
                    self.disengage_clutch();
                } else if !self.clutch {
                    // Without a fresh controller pose, keep the current reference.
                    let reference = self.controller_start;
                    self.engage_clutch(reference, current_ee);
                }
            }
            WireMessage::ModeToggle { .. } => {
                self.toggle_stiffness();
            }
            other => {
                return Err(Error::protocol(
                    "unexpected",
                    format!("server-only message {:?} sent by client", type_name(other)),
                ))
            }
        }
        self.hold(current_ee);
        Ok(self.controller_target())
    }
}

fn type_name(msg: &WireMessage) -> &'static str {
    match msg {
        WireMessage::Hello { .. } => "hello",
        WireMessage::Input { .. } => "input",
        WireMessage::Clutch { .. } => "clutch",
        WireMessage::ModeToggle { .. } => "mode_toggle",
        WireMessage::State { .. } => "state",
        WireMessage::Haptic { .. } => "haptic",
        WireMessage::Error { .. } => "error",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_6;

    fn session() -> TeleopSession {
        TeleopSession::new(0, (StiffnessMode::Mid, StiffnessMode::Low), 1.0).unwrap()
    }

    fn ee() -> Pose {
        Pose::new(
            Vector3::new(0.1, 0.2, 0.3),
            UnitQuaternion::from_euler_angles(0.1, -0.2, 0.3),
        )
    }

    #[test]
    fn engage_without_motion_returns_ee_start() {
        let mut s = session();
        let c = Pose::new(Vector3::new(1.0, -2.0, 0.5), UnitQuaternion::from_euler_angles(0.3, 0.2, 0.1));
        s.engage_clutch(c, ee());
        let t = s.map_controller_to_target(&c).unwrap();
        assert_eq!(t.position, ee().position);
        assert_relative_eq!(t.orientation, ee().orientation, epsilon = 1e-12);
        s.engage_clutch(Pose::identity(), Pose::identity());
        assert_eq!(s.map_controller_to_target(&c).unwrap().position, ee().position);
    }

    #[test]
    fn translation_scales() {
        for (scale, expect) in [(1.0, 0.10), (0.5, 0.05)] {
            let mut s = TeleopSession::new(0, (StiffnessMode::Mid, StiffnessMode::Low), scale).unwrap();
            s.engage_clutch(Pose::identity(), ee());
            let t = s
                .map_controller_to_target(&Pose::from_position(Vector3::new(0.10, 0.0, 0.0)))
                .unwrap();
            assert_relative_eq!(t.position - ee().position, Vector3::new(expect, 0.0, 0.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn rotation_applies_in_world_frame() {
        let mut s = session();
        s.engage_clutch(Pose::identity(), ee());
        let rz = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_6);
        let t = s.map_controller_to_target(&Pose::new(Vector3::zeros(), rz)).unwrap();
        assert_eq!(t.position, ee().position);
        assert_relative_eq!(t.orientation, rz * ee().orientation, epsilon = 1e-12);
    }

    #[test]
    fn reclutch_has_no_jump() {
        let mut s = session();
        s.engage_clutch(Pose::identity(), ee());
        let before = s
            .map_controller_to_target(&Pose::from_position(Vector3::new(0.05, 0.0, 0.0)))
            .unwrap();
        s.disengage_clutch();
        let far = Pose::from_position(Vector3::new(1.05, 0.0, 0.0));
        assert_eq!(s.map_controller_to_target(&far), Some(before));
        s.engage_clutch(far, Pose::identity());
        let after = s.map_controller_to_target(&far).unwrap();
        assert!((after.position - before.position).norm() <= 1e-9);
    }

    #[test]
    fn toggles_between_pair() {
        let mut s = session();
        assert_eq!(s.toggle_stiffness(), StiffnessMode::Low);
        assert_eq!(s.toggle_stiffness(), StiffnessMode::Mid);
        let mut h = TeleopSession::new(0, (StiffnessMode::Mid, StiffnessMode::High), 1.0).unwrap();
        assert_eq!(h.toggle_stiffness(), StiffnessMode::High);
        assert!(TeleopSession::new(0, (StiffnessMode::Low, StiffnessMode::High), 1.0).is_err());
    }

    #[test]
    fn trigger_and_haptics() {
        assert_eq!(trigger_to_gripper(0.0), 0.0);
        assert_eq!(trigger_to_gripper(1.0), 1.0);
        assert_eq!(trigger_to_gripper(1.3), 1.0);
        let w = |f: f64| Wrench::new(Vector3::new(0.0, f, 0.0), Vector3::zeros());
        assert_eq!(haptic_intensity(&Wrench::zero(), 20.0), 0.0);
        assert_eq!(haptic_intensity(&w(20.0), 20.0), 1.0);
        assert_eq!(haptic_intensity(&w(10.0), 20.0), 0.5);
    }

    #[test]
    fn button_edges_not_levels() {
        let mut s = session();
        let input = |seq: u64, menu: bool, grip: bool| WireMessage::Input {
            seq,
            t_ms: seq,
            pos: [0.0; 3],
            quat: [1.0, 0.0, 0.0, 0.0],
            trigger: 0.4,
            buttons: Buttons { menu, grip },
        };
        s.apply(&input(1, true, false), ee()).unwrap();
        assert!(s.clutch);
        s.apply(&input(2, true, true), ee()).unwrap();
        assert!(s.clutch);
        assert_eq!(s.mode(), StiffnessMode::Low);
        let t = s.apply(&input(3, true, true), ee()).unwrap().unwrap();
        assert_eq!(s.mode(), StiffnessMode::Low);
        assert_eq!(t.stiffness, StiffnessMode::Low.spec());
        assert_eq!(t.gripper, 0.4);
        s.apply(&input(4, false, false), ee()).unwrap();
        s.apply(&input(5, true, false), ee()).unwrap();
        assert!(!s.clutch);
    }

    #[test]
    fn sequence_must_increase() {
        let mut s = session();
        s.check_seq(1).unwrap();
        s.check_seq(5).unwrap();
        assert!(s.check_seq(5).is_err());
        assert!(s.check_seq(2).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vec3() -> impl Strategy<Value = Vector3<f64>> {
            (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| Vector3::new(x, y, z))
        }

        proptest! {
            #[test]
            fn relative_mapping_ignores_common_offset(a in vec3(), b in vec3(), off in vec3()) {
                let mut s1 = session();
                let mut s2 = session();
                s1.engage_clutch(Pose::from_position(a), ee());
                s2.engage_clutch(Pose::from_position(a + off), ee());
                let t1 = s1.map_controller_to_target(&Pose::from_position(b)).unwrap();
                let t2 = s2.map_controller_to_target(&Pose::from_position(b + off)).unwrap();
                prop_assert!((t1.position - t2.position).norm() < 1e-9);
            }

            #[test]
            fn haptics_monotone(f1 in 0.0..100.0f64, f2 in 0.0..100.0f64) {
                let w = |f: f64| Wrench::new(Vector3::new(f, 0.0, 0.0), Vector3::zeros());
                let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
                let (a, b) = (haptic_intensity(&w(lo), 20.0), haptic_intensity(&w(hi), 20.0));
                prop_assert!(a <= b && b <= 1.0);
            }

            #[test]
            fn clutch_cycles_are_continuous(steps in proptest::collection::vec((vec3(), any::<bool>()), 1..40)) {
                let mut s = session();
                let mut prev: Option<Pose> = None;
                let mut controller = Vector3::zeros();
                for (delta, toggle) in steps {
                    let step = delta * 0.01;
                    controller += step;
                    let pose = Pose::from_position(controller);
                    if toggle {
                        if s.clutch { s.disengage_clutch() } else { s.engage_clutch(pose, ee()) }
                    }
                    if let Some(t) = s.map_controller_to_target(&pose) {
                        if let Some(p) = prev {
                            prop_assert!((t.position - p.position).norm() <= step.norm() + 1e-9);
                        }
                        prev = Some(t);
                    }
                    prop_assert!(s.mode() == StiffnessMode::Mid || s.mode() == StiffnessMode::Low);
                }
            }
        }
    }
}
