//! `compact`: command-line entry point for the workbench.
//!
//! Exit codes: 0 on success, 2 on configuration or usage errors, 3 on runtime failures.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;

use compact_core::eval::dataset::{episode_file_name, NORM_STATS_FILE};
use compact_core::eval::report::{render_paired_table, LABEL_FT, LABEL_NO_FT};
use compact_core::eval::{compare_force_profiles, evaluate, generate_demos, paired_table, LiveRecorder, ScriptedDemonstrator};
use compact_core::policy::train::{CHECKPOINT_FILE, CURVE_FILE};
use compact_core::policy::{train, Checkpoint, PolicyAgent};
use compact_core::sim::reset;
use compact_core::store::{compute_norm_stats, load_dataset, Episode};
use compact_core::teleop::server::{serve, ServeOptions};
use compact_core::{Error, Rig, RolloutReport, TaskKind, WorkbenchConfig};

const REPORT_CSV: &str = "report.csv";
const REPORT_JSON: &str = "report.json";
const PROFILE_CSV: &str = "force_profile.csv";
const COMPARISON_JSON: &str = "comparison.json";

#[derive(Parser)]
#[command(name = "compact", version, about = "Compliant teleoperation and imitation learning workbench")]
struct Cli {
    /// TOML configuration file; missing sections keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed for scene randomization, demonstrations and training.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the simulator, controllers and the teleoperation WebSocket service.
    SimServe(SimServeArgs),
    /// Record scripted demonstrations.
    DemoGen(DemoGenArgs),
    /// Train a policy on recorded demonstrations.
    Train(TrainArgs),
    /// Roll out a trained policy (or the scripted demonstrator) and write a report.
    Eval(EvalArgs),
    /// Paired force comparison of compliant and position-tracking execution.
    CompareForce(CompareArgs),
    /// Print an episode file as text.
    DumpEpisode(DumpArgs),
    /// Verify report aggregates and print the paired F/T table.
    Report(ReportArgs),
}

#[derive(Args)]
struct SimServeArgs {
    #[arg(long, value_parser = parse_task, default_value = "wiping")]
    task: TaskKind,
    #[arg(long, default_value = "127.0.0.1:8765")]
    bind: String,
    /// Directory of static client assets served over plain HTTP.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
    /// Stop after this much simulated time (s).
    #[arg(long)]
    duration: Option<f64>,
    /// Run as fast as possible instead of in real time.
    #[arg(long)]
    no_realtime: bool,
    /// Record the session to `<out>/episode_000.cpak`; needs --duration.
    #[arg(long)]
    record: bool,
}

#[derive(Args)]
struct DemoGenArgs {
    #[arg(long, value_parser = parse_task)]
    task: TaskKind,
    #[arg(long, default_value_t = 20)]
    count: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_parser = parse_task)]
    task: TaskKind,
    /// Dataset directory from demo-gen. Without it, `--count` demos are generated in memory.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[arg(long)]
    epochs: Option<usize>,
    /// Train without the wrench among the policy inputs.
    #[arg(long)]
    no_ft: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to roll out.
    #[arg(long, required_unless_present = "scripted")]
    checkpoint: Option<PathBuf>,
    /// Roll out the scripted demonstrator instead of a policy.
    #[arg(long, conflicts_with_all = ["checkpoint", "no_ft"])]
    scripted: bool,
    /// Task for --scripted; policies use their training task.
    #[arg(long, value_parser = parse_task)]
    task: Option<TaskKind>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Hide the wrench from an F/T-trained policy (set to the dataset mean).
    #[arg(long)]
    no_ft: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, value_parser = parse_task, default_value = "wiping")]
    task: TaskKind,
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Args)]
struct DumpArgs {
    episode: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// `report.json` files written by eval.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    TaskKind::ALL
        .into_iter()
        .find(|t| t.name() == s)
        .ok_or_else(|| {
            let names: Vec<&str> = TaskKind::ALL.iter().map(|t| t.name()).collect();
            format!("unknown task '{s}', expected one of {}", names.join(", "))
        })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Wrapped core errors repeat their source's text; print each new part once.
            let mut msg = String::new();
            for cause in e.chain() {
                let part = cause.to_string();
                if !msg.contains(&part) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&part);
                }
            }
            eprintln!("error: {msg}");
            let config = e.downcast_ref::<Error>().is_some_and(Error::is_config);
            ExitCode::from(if config { 2 } else { 3 })
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let config = match &cli.config {
        Some(p) => WorkbenchConfig::load(p)?,
        None => WorkbenchConfig::default(),
    };
    match &cli.command {
        Command::SimServe(a) => sim_serve(cli, config, a),
        Command::DemoGen(a) => demo_gen(cli, &config, a),
        Command::Train(a) => train_cmd(cli, config, a),
        Command::Eval(a) => eval_cmd(cli, &config, a),
        Command::CompareForce(a) => compare_cmd(cli, &config, a),
        Command::DumpEpisode(a) => dump_cmd(cli, a),
        Command::Report(a) => report_cmd(cli, a),
    }
}

fn out_dir(cli: &Cli, default: &str) -> anyhow::Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(default));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn sim_serve(cli: &Cli, config: WorkbenchConfig, a: &SimServeArgs) -> anyhow::Result<()> {
    if a.record && a.duration.is_none() {
        return Err(Error::config("--record needs --duration").into());
    }
    let world = reset(a.task, cli.seed, &config.sim)?;
    let rig = Rig::new(world, config.controller.clone())?;
    let recorder = if a.record {
        Some(Arc::new(Mutex::new(LiveRecorder::new(&rig, &config.store, "teleop")?)))
    } else {
        None
    };
    let hook = recorder.clone().map(|r| {
        Box::new(move |rig: &Rig, aborted: bool| {
            r.lock().expect("recorder lock").on_tick(rig, aborted)
        }) as compact_core::teleop::server::TickHook
    });
    let options = ServeOptions {
        bind: a.bind.clone(),
        static_dir: a.static_dir.clone(),
        duration: a.duration,
        realtime: !a.no_realtime,
    };
    let handle = serve(rig, options, config.teleop.clone(), hook)?;
    println!("listening on ws://{}", handle.addr);
    while !handle.is_finished() {
        thread::sleep(Duration::from_millis(50));
    }
    let rig = handle.shutdown()?;
    if let Some(r) = recorder {
        let r = Arc::try_unwrap(r)
            .map_err(|_| anyhow::anyhow!("recorder still in use"))?
            .into_inner()
            .expect("recorder lock");
        let episode = r.finish(&rig);
        let path = out_dir(cli, "teleop")?.join(episode_file_name(0));
        episode.write(&path)?;
        println!("recorded {} steps to {}", episode.steps.len(), path.display());
    }
    Ok(())
}

fn demo_gen(cli: &Cli, config: &WorkbenchConfig, a: &DemoGenArgs) -> anyhow::Result<()> {
    let dir = out_dir(cli, "demos")?;
    let episodes = generate_demos(a.task, a.count, cli.seed, config, Some(&dir))?;
    if cli.json {
        let headers: Vec<_> = episodes.iter().map(|e| &e.header).collect();
        println!("{}", serde_json::to_string_pretty(&headers)?);
    } else {
        println!("wrote {} {} episodes to {}", episodes.len(), a.task.name(), dir.display());
    }
    Ok(())
}

fn train_cmd(cli: &Cli, mut config: WorkbenchConfig, a: &TrainArgs) -> anyhow::Result<()> {
    if let Some(e) = a.epochs {
        config.policy.epochs = e;
    }
    if a.no_ft {
        config.policy.use_ft = false;
    }
    config.policy.seed = cli.seed;
    config.validate()?;
    let dataset: Vec<Episode> = match &a.data {
        Some(dir) => load_dataset(dir)?,
        None => generate_demos(a.task, a.count, cli.seed, &config, None)?,
    };
    if let Some(ep) = dataset.iter().find(|e| e.header.task != a.task.name()) {
        return Err(Error::config(format!("dataset holds '{}' episodes, not '{}'", ep.header.task, a.task.name())).into());
    }
    let norm = match &a.data {
        Some(dir) if dir.join(NORM_STATS_FILE).exists() => compact_core::store::NormStats::load(&dir.join(NORM_STATS_FILE))?,
        _ => compute_norm_stats(&dataset, config.store.std_floor)?,
    };
    let dir = out_dir(cli, "run")?;
    let (_, report) = train(&dataset, &norm, &config.policy, Some(&dir))?;
    let last = report.curve.last().map(|p| p.loss).unwrap_or_default();
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!(
            "trained {} epochs: loss {:.4} (l1 {:.4}, kl {:.4}); wrote {} and {}",
            report.epochs_run,
            last.total,
            last.l1,
            last.kl,
            dir.join(CHECKPOINT_FILE).display(),
            dir.join(CURVE_FILE).display()
        );
    }
    Ok(())
}

fn eval_cmd(cli: &Cli, config: &WorkbenchConfig, a: &EvalArgs) -> anyhow::Result<()> {
    let episodes = a.episodes.unwrap_or(config.eval.episodes);
    let (report, traces) = if a.scripted {
        let Some(task) = a.task else {
            return Err(Error::config("--scripted needs --task").into());
        };
        let jitter = &config.eval.jitter;
        evaluate(task, episodes, cli.seed, "scripted", config, &mut |world, s| {
            Ok(Box::new(ScriptedDemonstrator::new(world, s, jitter)?))
        })?
    } else {
        let path = a.checkpoint.as_ref().expect("clap requires a checkpoint");
        let policy = Checkpoint::read(path)
            .with_context(|| format!("loading {}", path.display()))?
            .policy;
        let task = parse_task(&policy.task).map_err(Error::config)?;
        if a.task.is_some_and(|t| t != task) {
            return Err(Error::config(format!("checkpoint was trained on '{}'", policy.task)).into());
        }
        let label = if a.no_ft || !policy.with_ft() { LABEL_NO_FT } else { LABEL_FT };
        let (period, rate) = (config.controller.period, config.store.record_rate);
        let policy = &policy;
        evaluate(task, episodes, cli.seed, label, config, &mut |_, _| {
            Ok(Box::new(PolicyAgent::new(policy, period, rate, a.no_ft)?))
        })?
    };
    let dir = out_dir(cli, "eval")?;
    write(&dir.join(REPORT_CSV), report.to_csv()?)?;
    write(&dir.join(REPORT_JSON), serde_json::to_string_pretty(&report)?)?;
    let traces_dir = dir.join("traces");
    fs::create_dir_all(&traces_dir)?;
    for (i, t) in traces.iter().enumerate() {
        write(&traces_dir.join(format!("episode_{i:03}.csv")), t.to_csv()?)?;
    }
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("{}", report.summary_line());
    }
    info!("report written to {}", dir.display());
    Ok(())
}

fn compare_cmd(cli: &Cli, config: &WorkbenchConfig, a: &CompareArgs) -> anyhow::Result<()> {
    let episodes = a.episodes.unwrap_or(config.eval.episodes);
    let c = compare_force_profiles(a.task, episodes, cli.seed, config)?;
    let dir = out_dir(cli, "compare")?;
    write(&dir.join(PROFILE_CSV), c.profile_csv()?)?;
    write(&dir.join(COMPARISON_JSON), serde_json::to_string_pretty(&c)?)?;
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&c)?);
    } else {
        for p in &c.pairs {
            println!(
                "seed {:>20}: compliant peak {:7.2} N, position peak {:7.2} N, ratio {:6.2}",
                p.seed, p.compliant_peak, p.position_peak, p.ratio
            );
        }
        println!(
            "{} with {:.1} mm injected error: mean peaks {:.2} N vs {:.2} N, ratio {:.2} (min {:.2})",
            c.task,
            c.injected_error.amplitude * 1e3,
            c.compliant_peak_mean,
            c.position_peak_mean,
            c.peak_ratio,
            c.min_ratio
        );
    }
    Ok(())
}

fn dump_cmd(cli: &Cli, a: &DumpArgs) -> anyhow::Result<()> {
    let ep = Episode::read(&a.episode).with_context(|| format!("reading {}", a.episode.display()))?;
    let text = if cli.json {
        serde_json::to_string_pretty(&ep.header)? + "\n"
    } else {
        ep.dump()
    };
    // A closed pipe (`| head`) is not a failure.
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn report_cmd(cli: &Cli, a: &ReportArgs) -> anyhow::Result<()> {
    let mut reports = Vec::with_capacity(a.reports.len());
    for p in &a.reports {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let r: RolloutReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        r.verify().with_context(|| format!("checking {}", p.display()))?;
        reports.push(r);
    }
    let paired: Vec<RolloutReport> = reports
        .iter()
        .filter(|r| r.label == LABEL_FT || r.label == LABEL_NO_FT)
        .cloned()
        .collect();
    let has_pair = paired.iter().any(|r| r.label == LABEL_FT) && paired.iter().any(|r| r.label == LABEL_NO_FT);
    let table = if has_pair { Some(paired_table(&paired)?) } else { None };
    if cli.json {
        let out = serde_json::json!({
            "reports": reports.iter().map(|r| serde_json::json!({
                "task": r.task,
                "label": r.label,
                "summary": r.summary,
            })).collect::<Vec<_>>(),
            "paired": table,
        });
        println!("{}", serde_json::to_string_pretty(&out)?);
    } else {
        for r in &reports {
            println!("{} (verified)", r.summary_line());
        }
        if let Some(t) = &table {
            print!("\n{}", render_paired_table(t));
        }
    }
    if reports.is_empty() {
        bail!("no reports");
    }
    Ok(())
}
