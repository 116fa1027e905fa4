use std::fs;
use std::sync::OnceLock;

use compact_core::eval::generate_demos;
use compact_core::policy::train::{CHECKPOINT_FILE, CURVE_FILE};
use compact_core::policy::{image_patches, train, Checkpoint, ModelInput, Policy, Tape, TrainExample};
use compact_core::store::{compute_norm_stats, Episode, NormStats};
use compact_core::{Error, PolicyConfig, TaskKind, WorkbenchConfig};
use ndarray::Array2;

fn demos() -> &'static (Vec<Episode>, NormStats) {
    static DEMOS: OnceLock<(Vec<Episode>, NormStats)> = OnceLock::new();
    DEMOS.get_or_init(|| {
        let config = WorkbenchConfig::default();
        let eps = generate_demos(TaskKind::Wiping, 2, 11, &config, None).unwrap();
        let norm = compute_norm_stats(&eps, config.store.std_floor).unwrap();
        (eps, norm)
    })
}

fn config(epochs: usize) -> PolicyConfig {
    PolicyConfig {
        epochs,
        ..PolicyConfig::default()
    }
}

/// The training example at `step`, built from the public episode API.
fn example(policy: &Policy, ep: &Episode, step: usize) -> TrainExample {
    let d = &policy.model.dims;
    let norm = &policy.norm;
    let s = &ep.steps[step];
    let mut actions = Array2::zeros((d.chunk, d.action_dim()));
    let mut mask = Vec::new();
    for k in 0..d.chunk {
        let idx = (step + k).min(ep.steps.len() - 1);
        mask.push(step + k < ep.steps.len());
        let row = norm.action.normalize(&ep.steps[idx].action());
        actions.row_mut(k).assign(&ndarray::ArrayView1::from(row.as_slice()));
    }
    let images = (0..d.cameras)
        .map(|c| image_patches(&ep.images.image(c, s.frames[c]).unwrap(), d.image_pool, d.patch).unwrap())
        .collect();
    TrainExample {
        input: ModelInput {
            observation: norm.observation_stats(d.with_ft).normalize(&s.observation(d.with_ft)),
            images,
        },
        actions,
        mask,
    }
}

#[test]
fn overfits_a_single_episode() {
    let (eps, norm) = demos();
    let (_, report) = train(&eps[..1], norm, &config(800), None).unwrap();
    let first = report.curve[0].loss.l1;
    let last = report.curve.iter().rev().take(10).map(|p| p.loss.l1).sum::<f64>() / 10.0;
    assert!(last < 0.25 * first, "l1 went from {first} to {last}");
    assert!(last < 0.15, "final l1 {last}");
}

#[test]
fn huge_kl_weight_collapses_the_posterior() {
    let (eps, norm) = demos();
    let cfg = PolicyConfig {
        kl_weight: 1e6,
        ..config(60)
    };
    let (policy, _) = train(&eps[..1], norm, &cfg, None).unwrap();
    let ep = &eps[0];
    let mut total = 0.0;
    let mut n = 0;
    for step in (0..ep.steps.len()).step_by(10) {
        let ex = example(&policy, ep, step);
        let mut t = Tape::new(&policy.model.params);
        let (mu, _) = policy
            .model
            .encode_posterior(&mut t, &ex.input.observation, &ex.actions, &ex.mask)
            .unwrap();
        let v = t.value(mu);
        total += v.iter().map(|x| x.abs()).sum::<f64>();
        n += v.len();
    }
    let mean = total / n as f64;
    assert!(mean < 0.05, "mean |mu| {mean}");
}

#[test]
fn same_seed_gives_identical_training() {
    let (eps, norm) = demos();
    let (pa, ra) = train(eps, norm, &config(3), None).unwrap();
    let (pb, rb) = train(eps, norm, &config(3), None).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(pa, pb);
    let (_, rc) = train(eps, norm, &PolicyConfig { seed: 1, ..config(3) }, None).unwrap();
    assert_ne!(ra.curve, rc.curve);
}

#[test]
fn checkpoints_round_trip_and_detect_corruption() {
    let (eps, norm) = demos();
    let dir = tempfile::tempdir().unwrap();
    let cfg = PolicyConfig {
        checkpoint_every: 2,
        ..config(3)
    };
    let (policy, report) = train(eps, norm, &cfg, Some(dir.path())).unwrap();
    let path = dir.path().join(CHECKPOINT_FILE);
    let ck = Checkpoint::read(&path).unwrap();
    assert_eq!(ck.policy, policy);
    assert_eq!(ck.epoch, 3);
    let ex = example(&policy, &eps[0], 0);
    assert_eq!(ck.policy.model.predict_chunk(&ex.input).unwrap(), policy.model.predict_chunk(&ex.input).unwrap());

    let curve = fs::read_to_string(dir.path().join(CURVE_FILE)).unwrap();
    assert_eq!(curve, report.curve_csv());
    assert_eq!(curve.lines().count(), 4);

    let mut bytes = fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format(_))));
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 9]).is_err());
}

#[test]
fn training_without_ft_drops_the_wrench_inputs() {
    let (eps, norm) = demos();
    let cfg = PolicyConfig {
        use_ft: false,
        ..config(1)
    };
    let (policy, _) = train(eps, norm, &cfg, None).unwrap();
    assert!(!policy.with_ft());
    assert_eq!(policy.model.dims.obs_dim(), 7);
    let ex = example(&policy, &eps[0], 5);
    assert_eq!(ex.input.observation.len(), 7);
    assert_eq!(policy.model.predict_chunk(&ex.input).unwrap().dim(), (20, 19));
}
