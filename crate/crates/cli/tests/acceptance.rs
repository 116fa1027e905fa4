//! Acceptance checks for the workbench. Runs without the libtest harness so that
//! every criterion prints one PASS/FAIL line in `cargo test` output; any failure
//! makes the target exit non-zero.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use compact_core::eval::dataset::episode_file_name;
use compact_core::eval::{generate_demos, ForceComparison};
use compact_core::geometry::CholeskyVector;
use compact_core::policy::{gaussian_kl, image_patches, train, CompactModel, ModelDims, ModelInput, TrainExample};
use compact_core::sim::task::planar_tool_down;
use compact_core::sim::task::planar_home;
use compact_core::sim::{Arm, HalfSpace, KinematicChain, SimConfig};
use compact_core::store::compute_norm_stats;
use compact_core::{
    ControllerConfig, ControllerTarget, Pose, PolicyConfig, Rig, RolloutReport, StiffnessMode, StiffnessSpec, TaskKind,
    WorkbenchConfig, World,
};
use nalgebra::{DVector, Matrix3, SymmetricEigen, Vector3};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn compact(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_compact"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run compact");
    if !out.status.success() {
        panic!(
            "compact {} exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        );
    }
    out
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn wall_statics() -> Outcome {
    let started = Instant::now();
    let k_wall = SimConfig::default().wall_stiffness;
    let mut worst: f64 = 0.0;
    for mode in [StiffnessMode::Low, StiffnessMode::Mid, StiffnessMode::High] {
        for d in [0.002, 0.005, 0.010] {
            let chain = KinematicChain::default_planar3();
            let q0 = planar_home(&chain, Vector3::new(0.0, 0.0, 0.0)).expect("home");
            let down = planar_tool_down(&chain);
            let world = World::new(SimConfig::default(), vec![Arm::new("arm", chain, q0)], vec![HalfSpace::table()]);
            let mut rig = Rig::new(world, ControllerConfig::default()).expect("rig");
            let k = mode.value();
            rig.set_target(0, ControllerTarget::new(Pose::new(Vector3::new(0.0, 0.0, -d), down), mode.spec(), 1.0))
                .expect("target");
            let mut force = 0.0;
            while rig.world.time < 2.0 - 1e-9 {
                force = -rig.tick().expect("tick").arms[0].wrench_world.force.z;
            }
            let expect = k * k_wall * d / (k + k_wall);
            worst = worst.max((force - expect).abs() / expect);
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        worst <= 0.05 && secs < 60.0,
        format!("9 cases, worst relative error {:.2}%, {secs:.1} s", worst * 100.0),
    )
}

fn force_safety(dir: &Path) -> Outcome {
    let started = Instant::now();
    let out = dir.join("compare");
    compact(&["compare-force", "--task", "wiping", "--episodes", "10", "--seed", "1", "--out", p(&out)]);
    let c: ForceComparison =
        serde_json::from_str(&fs::read_to_string(out.join("comparison.json")).expect("comparison")).expect("json");
    let secs = started.elapsed().as_secs_f64();
    let verdict = if c.peak_ratio < 3.0 { " (hard fail)" } else { "" };
    outcome(
        c.peak_ratio >= 5.0 && c.pairs.len() == 10 && secs < 300.0,
        format!(
            "peak ratio {:.2} (min pair {:.2}) over {} paired episodes, {:.2} N vs {:.2} N, {secs:.1} s{verdict}",
            c.peak_ratio,
            c.min_ratio,
            c.pairs.len(),
            c.position_peak_mean,
            c.compliant_peak_mean
        ),
    )
}

fn cholesky_codec() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut decode_ok = 0;
    for _ in 0..10_000 {
        let v: Vec<f64> = (0..12).map(|_| rng.random_range(-40.0..40.0)).collect();
        let k = CholeskyVector::from_slice(&v).expect("12 values").decode();
        let ok = [k.translational, k.rotational].iter().all(|m| {
            m == &m.transpose() && SymmetricEigen::new(*m).eigenvalues.min() > 0.0
        });
        decode_ok += ok as usize;
    }
    let mut worst: f64 = 0.0;
    for _ in 0..1_000 {
        let mut block = || {
            let a = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            a * a.transpose() * rng.random_range(10.0..800.0) + Matrix3::identity() * rng.random_range(1.0..50.0)
        };
        let k = StiffnessSpec::new(block(), block()).expect("spd");
        let back = k.encode().expect("encode").decode();
        let err = (back.to_matrix6() - k.to_matrix6()).amax() / k.to_matrix6().amax();
        worst = worst.max(err);
    }
    outcome(
        decode_ok == 10_000 && worst <= 1e-9,
        format!("{decode_ok}/10000 decodes symmetric PD, worst SPD round-trip error {worst:.1e}"),
    )
}

fn jacobian_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let chains = [
        KinematicChain::default_planar3(),
        KinematicChain::default_six_dof("arm", Pose::identity()),
    ];
    for chain in &chains {
        for _ in 0..1_000 {
            let q = DVector::from_fn(chain.dof(), |_, _| rng.random_range(-2.5..2.5));
            let j = chain.jacobian(&q);
            let mut fd = j.clone() * 0.0;
            for i in 0..chain.dof() {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[i] += h;
                qm[i] -= h;
                let (a, b) = (chain.forward_kinematics(&qp), chain.forward_kinematics(&qm));
                let v = (a.position - b.position) / (2.0 * h);
                let w = (a.orientation * b.orientation.inverse()).scaled_axis() / (2.0 * h);
                fd.fixed_view_mut::<3, 1>(0, i).copy_from(&v);
                fd.fixed_view_mut::<3, 1>(3, i).copy_from(&w);
            }
            worst = worst.max((&j - &fd).norm() / j.norm().max(1e-12));
        }
    }
    outcome(worst <= 1e-5, format!("2000 configurations, worst relative error {worst:.1e}"))
}

fn action_dimensions() -> Outcome {
    let config = WorkbenchConfig::default();
    let mut notes = Vec::new();
    let mut pass = true;
    for (task, expect) in [(TaskKind::Wiping, 19), (TaskKind::PegCylinder, 38)] {
        let eps = generate_demos(task, 1, 5, &config, None).expect("demo");
        let norm = compute_norm_stats(&eps, config.store.std_floor).expect("norm");
        let recorded = eps[0].action_dim();
        let step = eps[0].steps[0].action().len();
        let cfg = PolicyConfig {
            epochs: 1,
            ..PolicyConfig::default()
        };
        let (policy, _) = train(&eps, &norm, &cfg, None).expect("train");
        let d = &policy.model.dims;
        let s = &eps[0].steps[0];
        let input = ModelInput {
            observation: norm.observation_stats(true).normalize(&s.observation(true)),
            images: (0..d.cameras)
                .map(|c| image_patches(&eps[0].images.image(c, s.frames[c]).expect("frame"), d.image_pool, d.patch).expect("patches"))
                .collect(),
        };
        let predicted = policy.model.predict_chunk(&input).expect("predict").ncols();
        pass &= recorded == expect && step == expect && predicted == expect;
        notes.push(format!("{}: recorded {recorded}, predicted {predicted}", task.name()));
    }
    outcome(pass, notes.join("; "))
}

/// Scripted demos, training and both evaluations through the CLI. Returns the
/// learning outcome and the F/T ablation outcome.
fn learning_and_ablation(dir: &Path) -> (Outcome, Outcome) {
    let started = Instant::now();
    let demos = dir.join("demos");
    let run = dir.join("run");
    let ft = dir.join("eval_ft");
    let no_ft = dir.join("eval_no_ft");
    compact(&["demo-gen", "--task", "wiping", "--count", "20", "--seed", "7", "--out", p(&demos)]);
    compact(&["train", "--task", "wiping", "--data", p(&demos), "--epochs", "2000", "--out", p(&run)]);
    let trained = started.elapsed().as_secs_f64();
    let ck = run.join("checkpoint.cpck");
    compact(&["eval", "--checkpoint", p(&ck), "--episodes", "10", "--seed", "3", "--out", p(&ft)]);
    compact(&["eval", "--checkpoint", p(&ck), "--episodes", "10", "--seed", "3", "--no-ft", "--out", p(&no_ft)]);
    let read = |d: &PathBuf| -> RolloutReport {
        serde_json::from_str(&fs::read_to_string(d.join("report.json")).expect("report")).expect("json")
    };
    let (a, b) = (read(&ft), read(&no_ft));
    let s = &a.summary;
    let learning = outcome(
        s.successes >= 7 && s.low_stiffness_fraction >= 0.8 && trained < 7200.0,
        format!(
            "{}/{} success, stiffness <= 300 in {:.0}% of contact steps, 2000 epochs in {trained:.0} s",
            s.successes,
            s.episodes,
            s.low_stiffness_fraction * 100.0
        ),
    );
    let table = compact(&["report", p(&ft.join("report.json")), p(&no_ft.join("report.json"))]);
    let text = String::from_utf8_lossy(&table.stdout);
    let header = text.lines().any(|l| {
        let cols: Vec<&str> = l.split('|').map(str::trim).collect();
        cols.len() == 3 && cols[1] == "F/T" && cols[2] == "w/o F/T"
    });
    let row = text.lines().any(|l| l.starts_with("wiping ") && l.contains('|'));
    let ablation = outcome(
        header && row && a.label == "F/T" && b.label == "w/o F/T",
        format!(
            "paired table wiping F/T {}/{} | w/o F/T {}/{}",
            a.summary.successes, a.summary.episodes, b.summary.successes, b.summary.episodes
        ),
    );
    (learning, ablation)
}

fn tiny_dims(arms: usize) -> ModelDims {
    let config = PolicyConfig {
        chunk_size: 4,
        latent_dim: 3,
        width: 8,
        heads: 2,
        ffn_width: 16,
        encoder_layers: 1,
        decoder_layers: 1,
        patch: 4,
        image_pool: 2,
        ..PolicyConfig::default()
    };
    ModelDims::new(&config, arms, 1, 16, 8).expect("dims")
}

fn random_example(d: &ModelDims, rng: &mut ChaCha8Rng) -> TrainExample {
    let mut n = || -> f64 { StandardNormal.sample(rng) };
    TrainExample {
        input: ModelInput {
            observation: (0..d.obs_dim()).map(|_| n()).collect(),
            images: (0..d.cameras)
                .map(|_| Array2::from_shape_fn((d.patches_per_camera(), d.patch_dim()), |_| 0.3 * n()))
                .collect(),
        },
        actions: Array2::from_shape_fn((d.chunk, d.action_dim()), |_| n()),
        mask: (0..d.chunk).map(|k| k + 1 < d.chunk).collect(),
    }
}

fn cvae_checks() -> Outcome {
    // KL: closed form against a Monte-Carlo estimate of E_q[log q - log p].
    let mu = [0.7, -0.4, 1.2, 0.1, -1.0];
    let logvar = [-0.3, 0.5, -1.0, 0.8, 0.0];
    let closed = gaussian_kl(&mu, &logvar);
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let n = 100_000;
    let mut sum = 0.0;
    for _ in 0..n {
        for (m, lv) in mu.iter().zip(&logvar) {
            let e: f64 = StandardNormal.sample(&mut rng);
            let z = m + (0.5 * lv).exp() * e;
            sum += -0.5 * e * e - 0.5 * lv + 0.5 * z * z;
        }
    }
    let kl_err = (sum / n as f64 - closed).abs() / closed;

    // Gradient check on a width-8 model.
    let d = tiny_dims(1);
    let model = CompactModel::new(d.clone(), &mut rng).expect("model");
    let batch: Vec<TrainExample> = (0..2).map(|_| random_example(&d, &mut rng)).collect();
    let eps: Vec<_> = batch.iter().map(|_| model.sample_eps(&mut rng)).collect();
    let (_, grads) = model.loss_and_grad(&batch, &eps, 10.0).expect("grad");
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let pi = rng.random_range(0..model.params.len());
        let i = rng.random_range(0..model.params.values[pi].len());
        let at = |delta: f64| {
            let mut m = model.clone();
            m.params.values[pi].as_slice_mut().expect("contiguous")[i] += delta;
            m.loss(&batch, &eps, 10.0).expect("loss").total
        };
        let numeric = (at(h) - at(-h)) / (2.0 * h);
        let analytic = grads[pi].as_slice().expect("contiguous")[i];
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6));
    }

    // β = 0 leaves the masked L1 alone.
    let t = model.loss(&batch, &eps, 0.0).expect("loss");
    let pure = t.total == t.l1 && t.kl > 0.0;
    outcome(
        kl_err <= 0.02 && worst <= 1e-4 && pure,
        format!(
            "KL Monte-Carlo error {:.2}%, worst gradient error {worst:.1e}, beta=0 total == L1: {pure}",
            kl_err * 100.0
        ),
    )
}

fn determinism(dir: &Path, episode: &Path) -> Outcome {
    let mut checked = Vec::new();
    let mut differing = Vec::new();
    let mut twice = |name: &str, args: &dyn Fn(&Path) -> Vec<String>, files: &[&str]| {
        let outs: Vec<(Vec<u8>, Vec<Vec<u8>>)> = ["a", "b"]
            .iter()
            .map(|run| {
                let out = dir.join(format!("{name}_{run}"));
                let argv = args(&out);
                let argv: Vec<&str> = argv.iter().map(String::as_str).collect();
                // Output paths differ between the two runs; everything else must not.
                let stdout = String::from_utf8_lossy(&compact(&argv).stdout).replace(p(&out), "<out>");
                let contents = files.iter().map(|f| fs::read(out.join(f)).expect("output file")).collect();
                (stdout.into_bytes(), contents)
            })
            .collect();
        checked.push(name.to_string());
        if outs[0] != outs[1] {
            differing.push(name.to_string());
        }
    };
    let demos = dir.join("det_demos_a");
    twice(
        "det_demos",
        &|o| strings(&["demo-gen", "--task", "pick_insert", "--count", "2", "--seed", "5", "--out", p(o)]),
        &[&episode_file_name(0), &episode_file_name(1), "norm_stats.json"],
    );
    twice(
        "det_train",
        &|o| strings(&["train", "--task", "pick_insert", "--data", p(&demos), "--epochs", "3", "--seed", "2", "--out", p(o)]),
        &["checkpoint.cpck", "curve.csv"],
    );
    let ck = dir.join("det_train_a").join("checkpoint.cpck");
    twice(
        "det_eval",
        &|o| strings(&["eval", "--checkpoint", p(&ck), "--episodes", "2", "--seed", "4", "--out", p(o)]),
        &["report.csv", "report.json", "traces/episode_000.csv"],
    );
    twice(
        "det_eval_no_ft",
        &|o| strings(&["eval", "--checkpoint", p(&ck), "--episodes", "2", "--seed", "4", "--no-ft", "--out", p(o)]),
        &["report.csv", "report.json"],
    );
    twice(
        "det_compare",
        &|o| strings(&["compare-force", "--episodes", "2", "--seed", "6", "--out", p(o)]),
        &["force_profile.csv", "comparison.json"],
    );
    twice(
        "det_serve",
        &|o| strings(&["sim-serve", "--bind", "127.0.0.1:38765", "--duration", "1", "--no-realtime", "--record", "--seed", "8", "--out", p(o)]),
        &[&episode_file_name(0)],
    );
    let a = dir.join("det_eval_a").join("report.json");
    let b = dir.join("det_eval_no_ft_a").join("report.json");
    twice("det_report", &|_| strings(&["report", p(&a), p(&b)]), &[]);
    twice("det_dump", &|_| strings(&["dump-episode", p(episode)]), &[]);
    outcome(
        differing.is_empty(),
        format!("{} subcommands run twice, differing: {:?}", checked.len(), differing),
    )
}

fn strings(args: &[&str]) -> Vec<String> {
    args.iter().map(|s| s.to_string()).collect()
}

fn main() {
    let dir = tempfile::tempdir().expect("tempdir");
    let root = dir.path();
    let mut results: Vec<(&str, bool)> = Vec::new();
    let mut record = |name: &'static str, o: Outcome| {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o.pass));
    };
    record("wall statics", wall_statics());
    record("force-safety ratio", force_safety(root));
    record("cholesky codec", cholesky_codec());
    record("jacobian vs finite differences", jacobian_check());
    record("action dimensions", action_dimensions());
    let (learning, ablation) = learning_and_ablation(root);
    record("learning smoke test", learning);
    record("F/T ablation report", ablation);
    record("CVAE objective", cvae_checks());
    let episode = root.join("demos").join(episode_file_name(0));
    record("determinism", determinism(root, &episode));

    let failed = results.iter().filter(|(_, pass)| !pass).count();
    println!("acceptance: {}/{} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
