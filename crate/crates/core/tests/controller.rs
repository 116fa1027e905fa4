use compact_core::control::slew_stiffness;
use compact_core::sim::task::{six_dof_seed, well_conditioned_ik};
use compact_core::sim::{JointState, KinematicChain};
use compact_core::{ComplianceController, ControllerConfig, ControllerTarget, Pose, StiffnessMode, StiffnessSpec, TargetSlot, Wrench};
use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use proptest::prelude::*;

fn spd(entries: &[f64], scale: f64) -> Matrix3<f64> {
    let l = Matrix3::from_row_slice(entries);
    l * l.transpose() * scale + Matrix3::identity() * 5.0
}

fn arm() -> (KinematicChain, ComplianceController, Pose) {
    let chain = KinematicChain::default_six_dof("arm", Pose::identity());
    let start = chain.forward_kinematics(&six_dof_seed());
    let q = well_conditioned_ik(&chain, &start).unwrap();
    let pose = chain.forward_kinematics(&q);
    let c = ComplianceController::new(
        chain.clone(),
        ControllerConfig::default(),
        &JointState::at_rest(q),
        StiffnessMode::Mid.spec(),
    )
    .unwrap();
    (chain, c, pose)
}

fn mode(i: usize) -> StiffnessMode {
    [StiffnessMode::Low, StiffnessMode::Mid, StiffnessMode::High][i]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn slew_stays_positive_definite_and_bounded(
        a in prop::collection::vec(-1.0f64..1.0, 9),
        b in prop::collection::vec(-1.0f64..1.0, 9),
        slew in 1.0f64..100.0,
    ) {
        let from = StiffnessSpec::new(spd(&a, 400.0), spd(&b, 20.0)).unwrap();
        let to = StiffnessSpec::new(spd(&b, 700.0), spd(&a, 10.0)).unwrap();
        let mut k = from;
        let gap = (to.to_matrix6() - from.to_matrix6()).amax();
        let steps = (gap / slew).ceil() as usize;
        for _ in 0..steps {
            let next = slew_stiffness(&k, &to, slew);
            prop_assert!((next.to_matrix6() - k.to_matrix6()).amax() <= slew + 1e-9);
            let eig = SymmetricEigen::new(next.to_matrix6()).eigenvalues.min();
            prop_assert!(eig > 0.0, "lost definiteness: {eig}");
            k = next;
        }
        prop_assert_eq!(k, to);
    }

    #[test]
    fn slot_keeps_only_the_latest_target(zs in prop::collection::vec(0.0f64..0.5, 1..20)) {
        let slot = TargetSlot::new();
        for &z in &zs {
            let t = ControllerTarget::new(Pose::new(Vector3::new(0.3, 0.0, z), Default::default()), StiffnessMode::Low.spec(), 0.5);
            slot.update(t).unwrap();
        }
        let got = slot.take().unwrap();
        prop_assert_eq!(got.pose.position.z, *zs.last().unwrap());
        prop_assert!(slot.take().is_none());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// With a steady measured wrench the virtual model settles where `K e = F`.
    #[test]
    fn static_deflection_is_force_over_stiffness(
        m in 0usize..3,
        f in prop::array::uniform3(-3.0f64..3.0),
    ) {
        let (chain, mut c, pose) = arm();
        let k = mode(m).spec();
        c.update_target(ControllerTarget::new(pose, k, 1.0)).unwrap();
        let force = Vector3::from(f);
        let w = Wrench::new(force, Vector3::zeros());
        // Contact damping along the force makes this slow at low stiffness.
        for _ in 0..3000 {
            c.control_step(&w, 0.01).unwrap();
        }
        let x = chain.forward_kinematics(&c.virtual_state().q);
        let e = pose.position - x.position;
        let expect = force / mode(m).value();
        prop_assert!((e - expect).norm() <= 0.02 * expect.norm() + 1e-6, "e {e:?} expected {expect:?}");
    }

    /// Without contact the virtual model converges to any nearby target.
    #[test]
    fn free_space_converges_to_target(
        m in 0usize..3,
        d in prop::array::uniform3(-0.03f64..0.03),
    ) {
        let (chain, mut c, pose) = arm();
        let target = Pose::new(pose.position + Vector3::from(d), pose.orientation);
        c.update_target(ControllerTarget::new(target, mode(m).spec(), 1.0)).unwrap();
        for _ in 0..300 {
            c.control_step(&Wrench::zero(), 0.01).unwrap();
        }
        let x = chain.forward_kinematics(&c.virtual_state().q);
        prop_assert!((x.position - target.position).norm() < 1e-4);
        prop_assert!(x.orientation.angle_to(&target.orientation) < 1e-3);
    }
}
