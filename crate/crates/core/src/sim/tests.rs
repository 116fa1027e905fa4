use approx::assert_relative_eq;
use nalgebra::{DVector, Vector3};

use super::task::{planar_home, planar_tool_down};
use super::*;

fn planar_world(tip: Vector3<f64>) -> World {
    let chain = KinematicChain::default_planar3();
    let q = planar_home(&chain, tip).unwrap();
    World::new(SimConfig::default(), vec![Arm::new("arm", chain, q)], vec![HalfSpace::table()])
}

fn hold(world: &World) -> Vec<DVector<f64>> {
    world.arms.iter().map(|a| a.command.clone()).collect()
}

#[test]
fn free_space_wrench_is_zero() {
    let mut w = planar_world(Vector3::new(0.0, 0.0, 0.05));
    let cmd = hold(&w);
    for _ in 0..100 {
        let obs = w.step(&cmd, 1e-3).unwrap();
        assert!(obs.arms[0].wrench.force.norm() < 1e-6);
    }
    assert_eq!(w.contact_wrench(0).unwrap(), crate::geometry::Wrench::zero());
    assert!(w.contact_wrench(3).is_err());
}

#[test]
fn rejects_wrong_dt() {
    let mut w = planar_world(Vector3::new(0.0, 0.0, 0.05));
    let cmd = hold(&w);
    assert!(w.step(&cmd, 2e-3).is_err());
}

#[test]
fn penetration_gives_penalty_force() {
    // Place the tool exactly 0.5 mm into the table and read the sensor at rest.
    let chain = KinematicChain::default_planar3();
    let q = planar_home(&chain, Vector3::new(0.0, 0.0, -0.0005)).unwrap();
    let w = World::new(SimConfig::default(), vec![Arm::new("arm", chain, q)], vec![HalfSpace::table()]);
    let wr = w.observe(false).arms[0].wrench_world;
    assert_relative_eq!(wr.force.z, -50.0, epsilon = 1e-6);
    assert_relative_eq!(wr.force.x, 0.0, epsilon = 1e-9);
    let local = w.contact_wrench(0).unwrap();
    assert_relative_eq!(local.force.norm(), 50.0, epsilon = 1e-6);
}

#[test]
fn commanded_penetration_balances_servo_and_wall() {
    // With a very stiff servo the tool sits at the commanded 1 mm and the wall pushes ~100 N.
    let chain = KinematicChain::default_planar3();
    let target = Pose::new(Vector3::new(0.0, 0.0, -0.001), planar_tool_down(&chain));
    let q_cmd = chain
        .inverse_kinematics(&target, &DVector::from_vec(vec![0.6, -1.2, -0.9]), &task::planar_weights())
        .unwrap();
    let q0 = planar_home(&chain, Vector3::new(0.0, 0.0, 0.0)).unwrap();
    let config = SimConfig {
        servo_kp: 1e8,
        ..SimConfig::default()
    };
    let mut w = World::new(config, vec![Arm::new("arm", chain, q0)], vec![HalfSpace::table()]);
    let mut obs = w.observe(false);
    for _ in 0..2000 {
        obs = w.step(&[q_cmd.clone()], 1e-3).unwrap();
    }
    let f = -obs.arms[0].wrench_world.force.z;
    assert!((f - 100.0).abs() < 2.0, "force {f}");
}

#[test]
fn torque_flips_with_mirrored_contact() {
    let chain = KinematicChain::default_planar3();
    let q = planar_home(&chain, Vector3::new(0.0, 0.0, -0.001)).unwrap();
    let mut arm = Arm::new("arm", chain, q);
    arm.tool_probes = vec![Vector3::new(0.0, 0.0, 0.02)];
    let w1 = World::new(SimConfig::default(), vec![arm.clone()], vec![HalfSpace::table()]);
    arm.tool_probes = vec![Vector3::new(0.0, 0.0, -0.02)];
    let w2 = World::new(SimConfig::default(), vec![arm], vec![HalfSpace::table()]);
    let t1 = w1.contact_wrench(0).unwrap();
    let t2 = w2.contact_wrench(0).unwrap();
    assert!(t1.force.norm() > 1.0);
    assert_relative_eq!(t1.force, t2.force, epsilon = 1e-9);
    // The tool axis lies along the sensor x axis, so the mirrored lever flips the bending torque.
    assert!(t1.torque.y.abs() > 1e-3);
    assert_relative_eq!(t1.torque.y, -t2.torque.y, epsilon = 1e-9);
}

#[test]
fn kinetic_energy_never_increases_when_holding() {
    let mut w = planar_world(Vector3::new(0.05, 0.0, 0.15));
    w.arms[0].joints.qdot = DVector::from_vec(vec![1.5, -2.0, 3.0]);
    let cmd = hold(&w);
    let mut prev = w.mechanical_energy();
    for _ in 0..10_000 {
        w.step(&cmd, 1e-3).unwrap();
        let e = w.mechanical_energy();
        assert!(e <= prev + 1e-12, "energy grew from {prev} to {e}");
        prev = e;
    }
    assert!(w.kinetic_energy() < 1e-12);
}

#[test]
fn identical_seeds_give_identical_streams() {
    let run = || {
        let mut w = reset(TaskKind::Wiping, 11, &SimConfig::default()).unwrap();
        let mut cmd = hold(&w);
        let mut out = Vec::new();
        for k in 0..300 {
            cmd[0][1] -= 2e-4 * (k % 3) as f64;
            let obs = w.step(&cmd, 1e-3).unwrap();
            out.push(serde_json::to_string(&obs).unwrap());
        }
        out
    };
    assert_eq!(run(), run());
}

#[test]
fn nan_state_reports_divergence() {
    let mut w = planar_world(Vector3::new(0.0, 0.0, 0.05));
    w.arms[0].joints.qdot[0] = f64::NAN;
    let cmd = hold(&w);
    match w.step(&cmd, 1e-3) {
        Err(crate::error::Error::Diverged { snapshot, .. }) => assert!(snapshot.contains("arm")),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn reset_is_deterministic_and_validates_names() {
    let c = SimConfig::default();
    for kind in TaskKind::ALL {
        let a = reset(kind, 5, &c).unwrap();
        let b = reset(kind, 5, &c).unwrap();
        assert_eq!(a.task, b.task);
        assert_eq!(
            serde_json::to_string(&a.observe(false)).unwrap(),
            serde_json::to_string(&b.observe(false)).unwrap()
        );
        assert_eq!(a.bodies, b.bodies);
        assert_eq!(a.observe(true).images, b.observe(true).images);
        assert!(!check_success(&a).success);
    }
    let err = "drawing".parse::<TaskKind>().unwrap_err().to_string();
    assert!(err.contains("wiping") && err.contains("peg_cuboid"));
}

/// Kolmogorov-Smirnov p-value approximation for a one-sample test.
fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut sum = 0.0;
    for j in 1..100 {
        let j = j as f64;
        sum += 2.0 * (-1f64).powf(j - 1.0) * (-2.0 * j * j * lambda * lambda).exp();
    }
    sum.clamp(0.0, 1.0)
}

#[test]
fn pick_insert_yaw_is_uniform_within_range() {
    let c = SimConfig::default();
    let range = 15f64.to_radians();
    let mut yaws: Vec<f64> = (0..10_000u64)
        .map(|s| reset(TaskKind::PickInsert, s, &c).unwrap().task.unwrap().yaw)
        .collect();
    assert!(yaws.iter().all(|y| y.abs() <= range + 1e-12));
    yaws.sort_by(f64::total_cmp);
    let n = yaws.len();
    let d = yaws
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let cdf = (y + range) / (2.0 * range);
            (cdf - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - cdf).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks_pvalue(d, n) > 0.01, "KS statistic {d}");
}

#[test]
fn peg_tasks_have_two_millimetre_clearance() {
    for kind in [TaskKind::PegCylinder, TaskKind::PegCuboid, TaskKind::PickInsert] {
        let w = reset(kind, 3, &SimConfig::default()).unwrap();
        let peg = w.find_body(|k| matches!(k, BodyKind::Peg { .. })).unwrap();
        let fix = w.find_body(|k| matches!(k, BodyKind::Fixture(_))).unwrap();
        let (BodyKind::Peg { half_width, .. }, BodyKind::Fixture(f)) =
            (w.bodies[peg].kind, w.bodies[fix].kind)
        else {
            unreachable!()
        };
        assert_relative_eq!(2.0 * (f.hole_half_width - half_width), 0.002, epsilon = 1e-12);
    }
}

#[test]
fn bimanual_reset_places_peg_before_entrance() {
    let w = reset(TaskKind::PegCuboid, 9, &SimConfig::default()).unwrap();
    let (depth, lateral, _) = task::insertion_state(&w).unwrap();
    assert!(depth < -0.05 && depth > -0.1, "depth {depth}");
    assert!(lateral < 1e-6, "lateral {lateral}");
    assert!(w.contacts().is_empty());
}

#[test]
fn wiping_without_contact_fails_even_when_covering_marks() {
    let mut w = reset(TaskKind::Wiping, 1, &SimConfig::default()).unwrap();
    let chain = w.arms[0].chain.clone();
    let mut q = w.arms[0].joints.q.clone();
    // Sweep 2 cm above the table over the whole stroke.
    for k in 0..=400 {
        let x = -0.10 + 0.2 * k as f64 / 400.0;
        let target = Pose::new(Vector3::new(x, 0.0, 0.02), planar_tool_down(&chain));
        q = chain.inverse_kinematics(&target, &q, &task::planar_weights()).unwrap();
        for _ in 0..5 {
            w.step(&[q.clone()], 1e-3).unwrap();
        }
    }
    let r = check_success(&w);
    assert!(!r.success);
    assert_eq!(r.metric, 0.0);
    assert_eq!(r.peak_force, 0.0);
}

#[test]
fn empty_world_renders_background() {
    let mut w = World::new(SimConfig::default(), Vec::new(), Vec::new());
    w.cameras.push(Camera::fixed(
        "static",
        Vector3::new(0.5, 0.0, 0.5),
        Vector3::zeros(),
        0.5,
        64,
    ));
    let img = render::render(&w, 0);
    assert_eq!((img.width, img.height, img.data.len()), (64, 64, 64 * 64 * 3));
    assert!(img.data.chunks(3).all(|p| p == render::BACKGROUND));
}

#[test]
fn moved_peg_changes_pixels_along_its_path() {
    let mut w = reset(TaskKind::PickInsert, 2, &SimConfig::default()).unwrap();
    let peg = w.find_body(|k| matches!(k, BodyKind::Peg { .. })).unwrap();
    let before = render::render(&w, 0);
    let b0 = render::project_body_bounds(&w, 0, peg);
    w.bodies[peg].pose.position.x += 0.05;
    let after = render::render(&w, 0);
    let b1 = render::project_body_bounds(&w, 0, peg);
    let (x0, y0) = (b0.0.min(b1.0) - 1.0, b0.1.min(b1.1) - 1.0);
    let (x1, y1) = (b0.2.max(b1.2) + 1.0, b0.3.max(b1.3) + 1.0);
    let mut changed = 0;
    for y in 0..after.height {
        for x in 0..after.width {
            if before.pixel(x, y) != after.pixel(x, y) {
                changed += 1;
                let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                assert!(fx >= x0 && fx <= x1 && fy >= y0 && fy <= y1, "pixel ({x},{y}) outside path");
            }
        }
    }
    assert!(changed > 0);
}
