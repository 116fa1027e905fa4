use super::*;
use crate::control::StiffnessMode;
use proptest::prelude::*;

fn header(arms: usize, cameras: usize) -> EpisodeHeader {
    EpisodeHeader {
        format_version: FORMAT_VERSION,
        task: "wiping".into(),
        seed: 3,
        arms,
        arm_labels: (0..arms).map(|i| format!("arm{i}")).collect(),
        cameras: (0..cameras).map(|i| format!("cam{i}")).collect(),
        image_width: 2,
        image_height: 2,
        record_rate: 20.0,
        control_rate: 100.0,
        physics_rate: 1000.0,
        mode_pairs: vec![(StiffnessMode::Mid, StiffnessMode::Low); arms],
        duration: 1.0,
        source: "scripted".into(),
        success: true,
        aborted: false,
        metric: 1.0,
        peak_force: 2.5,
    }
}

fn arm_record(seed: f32, mode: StiffnessMode) -> ArmRecord {
    let mut r = ArmRecord {
        ee_position: [seed, -seed, 0.5],
        ee_rotvec: [0.1, 0.2, seed],
        wrench: [1.0, 2.0, 3.0, 0.1, 0.2, seed],
        gripper: 0.5,
        stiffness: [0.0; 12],
        action: [0.0; ACTION_DIM],
        mode,
    };
    for (i, v) in r.action.iter_mut().enumerate() {
        *v = seed * i as f32 + 0.125;
    }
    r
}

fn episode(steps: usize, values: &[f32]) -> Episode {
    let h = header(1, 1);
    let mut images = ImageTrack::new(1, 2, 2);
    let mut recs = Vec::new();
    for i in 0..steps {
        let v = values[i % values.len()];
        let img = Image {
            width: 2,
            height: 2,
            data: vec![i as u8; 12],
        };
        let frames = images.push(&[img]).unwrap();
        recs.push(StepRecord {
            t: i as f32 * 0.05,
            flags: 0,
            arms: vec![arm_record(v, StiffnessMode::Mid)],
            frames,
        });
    }
    Episode {
        header: h,
        steps: recs,
        images,
    }
}

#[test]
fn write_then_read_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ep.cpak");
    let ep = episode(7, &[0.1, f32::MIN_POSITIVE, -3.5e7, 1.0 / 3.0]);
    ep.write(&path).unwrap();
    let back = Episode::read(&path).unwrap();
    assert_eq!(back, ep);
    for (a, b) in back.steps.iter().zip(&ep.steps) {
        let (mut fa, mut fb) = (Vec::new(), Vec::new());
        a.write_floats(&mut fa);
        b.write_floats(&mut fb);
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&fa), bits(&fb));
    }
    assert_eq!(std::fs::read(&path).unwrap(), ep.to_bytes().unwrap());
}

#[test]
fn corruption_is_detected() {
    let ep = episode(3, &[0.5]);
    let mut bytes = ep.to_bytes().unwrap();
    assert_eq!(&bytes[..4], b"CPAK");
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    assert!(matches!(
        Episode::from_bytes(&bytes, ImageTrack::default()),
        Err(Error::Format(_))
    ));
    let good = ep.to_bytes().unwrap();
    assert!(Episode::from_bytes(&good[..good.len() - 9], ImageTrack::default()).is_err());
}

#[test]
fn layout_stride() {
    assert_eq!(record_stride(1, 2), 2 + 45 + 2);
    assert_eq!(record_stride(2, 3), 2 + 90 + 3);
    let ep = episode(1, &[0.0]);
    assert_eq!(ep.steps[0].action().len(), 19);
    assert_eq!(ep.steps[0].observation(true).len(), 13);
    assert_eq!(ep.steps[0].observation(false).len(), 7);
}

#[test]
fn mid_mode_action_has_root_diagonal() {
    let target = ControllerTarget::new(Pose::identity(), StiffnessMode::Mid.spec(), 1.0);
    let a = action_from_target(&target).unwrap();
    let root = 500f64.sqrt();
    for block in [7, 13] {
        let c = &a[block..block + 6];
        for (i, v) in c.iter().enumerate() {
            let expect = if [0, 3, 5].contains(&i) { root } else { 0.0 };
            assert!((v - expect).abs() < 1e-12, "{c:?}");
        }
    }
    let back = target_from_action(&a).unwrap();
    assert!((back.stiffness.to_matrix6() - target.stiffness.to_matrix6()).norm() < 1e-9);
}

#[test]
fn constant_dimension_gets_floor() {
    let rows = [vec![2.0, 0.0], vec![2.0, 2.0]];
    let s = DimStats::from_rows(rows.iter().map(|r| r.as_slice()), 1e-2).unwrap();
    assert_eq!(s.mean, vec![2.0, 1.0]);
    assert_eq!(s.std[0], 1e-2);
    assert!((s.std[1] - 1.0).abs() < 1e-12);
    assert!(DimStats::from_rows(std::iter::empty(), 1e-2).is_err());
    assert!(compute_norm_stats(&[], 1e-2).is_err());
}

#[test]
fn two_episode_mean() {
    let a = episode(4, &[0.0]);
    let b = episode(4, &[2.0]);
    let s = compute_norm_stats(&[a, b], 1e-2).unwrap();
    assert!((s.observation.mean[0] - 1.0).abs() < 1e-7);
}

#[test]
fn normalized_dataset_has_unit_statistics() {
    let ep = episode(40, &[0.3, -1.0, 2.5, 0.7, 4.0]);
    let stats = compute_norm_stats(std::slice::from_ref(&ep), 1e-2).unwrap();
    let normed: Vec<Vec<f64>> = ep
        .steps
        .iter()
        .map(|s| stats.action.normalize(&s.action()))
        .collect();
    let again = DimStats::from_rows(normed.iter().map(|r| r.as_slice()), 1e-12).unwrap();
    for d in 0..stats.action.dim() {
        assert!(again.mean[d].abs() < 1e-9);
        if stats.action.std[d] > 1e-2 {
            assert!((again.std[d] - 1.0).abs() < 1e-9, "dim {d}: {}", again.std[d]);
        }
    }
}

#[test]
fn chunks_pad_with_last_action() {
    let ep = episode(200, &[0.1, 0.2, 0.3]);
    let stats = compute_norm_stats(std::slice::from_ref(&ep), 1e-2).unwrap();
    let samples = load_chunks(std::slice::from_ref(&ep), 20, &stats, true).unwrap();
    assert_eq!(samples.len(), 200);
    let padded = samples.iter().filter(|s| s.mask.iter().any(|m| !m)).count();
    assert_eq!(padded, 19);
    let last = samples.last().unwrap();
    assert_eq!(last.mask.iter().filter(|m| **m).count(), 1);
    assert!(last.actions.iter().all(|r| r == &last.actions[0]));

    // Honoring masks reconstructs the exact action stream.
    let stream: Vec<Vec<f64>> = ep.steps.iter().map(|s| s.action()).collect();
    for s in &samples {
        for (k, (row, m)) in s.actions.iter().zip(&s.mask).enumerate() {
            if *m {
                let back = stats.action.unnormalize(row);
                for (x, y) in back.iter().zip(&stream[s.step + k]) {
                    assert!((x - y).abs() < 1e-9);
                }
            }
        }
    }

    let single = load_chunks(std::slice::from_ref(&ep), 1, &stats, false).unwrap();
    assert!(single.iter().all(|s| s.actions.len() == 1 && s.mask == vec![true]));
    assert_eq!(single[0].observation.len(), 7);
    assert!(load_chunks(&[ep], 0, &stats, true).is_err());
}

#[test]
fn wrench_filter_converges() {
    let mut f = WrenchFilter::new(10.0, 0.01);
    let w = Wrench::new(nalgebra::Vector3::new(0.0, 0.0, 5.0), nalgebra::Vector3::zeros());
    f.update(&Wrench::zero());
    for _ in 0..100 {
        f.update(&w);
    }
    assert!((f.value().force.z - 5.0).abs() < 1e-6);
}

proptest! {
    #[test]
    fn normalize_round_trip(v in proptest::collection::vec(-1e3f64..1e3, 5), m in proptest::collection::vec(-10f64..10.0, 5), s in proptest::collection::vec(1e-2f64..50.0, 5)) {
        let st = DimStats { mean: m, std: s };
        let back = st.unnormalize(&st.normalize(&v));
        for (a, b) in back.iter().zip(&v) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn any_action_decodes_to_pd(v in proptest::collection::vec(-100f64..100.0, 19)) {
        let t = target_from_action(&v).unwrap();
        prop_assert!(t.stiffness.is_positive_definite());
        prop_assert!((0.0..=1.0).contains(&t.gripper));
    }

    #[test]
    fn record_round_trip(vals in proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 45)) {
        let mut rec = arm_record(0.0, StiffnessMode::High);
        rec.ee_position.copy_from_slice(&vals[..3]);
        rec.wrench.copy_from_slice(&vals[3..9]);
        rec.stiffness.copy_from_slice(&vals[9..21]);
        rec.action.copy_from_slice(&vals[21..40]);
        let step = StepRecord { t: vals[40], flags: 1, arms: vec![rec], frames: vec![] };
        let mut f = Vec::new();
        step.write_floats(&mut f);
        let back = StepRecord::from_floats(&f, 1, 0).unwrap();
        prop_assert_eq!(back, step);
    }
}
