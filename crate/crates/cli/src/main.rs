//! `rlad` command-line tool.
//!
//! Exit codes: 0 success, 2 usage, 3 config, 4 data, 5 runtime.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rlad::bench::{compare_reports, run_benchmark, BenchmarkReport, EpisodeSettings, Suite};
use rlad::trainer::{evaluate, train, RunConfig, Variant};
use rlad::{checkpoint, plot, ErrorKind};

#[derive(Parser)]
#[command(
    name = "rlad",
    version,
    about = "Pixel-based SAC driving agent: training, evaluation and benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per seed.
    Train(TrainArgs),
    /// Evaluate a checkpoint with the deterministic policy.
    Evaluate(EvalArgs),
    /// Run a route suite and write a report.
    Benchmark(BenchArgs),
    /// Train every variant for every seed, then plot and compare.
    Ablate(AblateArgs),
    /// Plot evaluation returns of run directories.
    Plot(PlotArgs),
}

#[derive(Args)]
struct Common {
    /// Run config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated seeds; overrides the config seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Component switch applied on top of the config.
    #[arg(long, default_value = "full")]
    variant: String,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Run config providing the evaluation scenario, action repeat and controller.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    episodes: usize,
}

#[derive(Args)]
struct SuiteArgs {
    /// Suite definition (TOML); the standard suite when absent.
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Routes per task of the standard suite.
    #[arg(long, default_value_t = 25)]
    routes: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    suite: SuiteArgs,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated variants.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "full,no-wayconv1d,no-aux-loss,no-alix"
    )]
    variant: Vec<String>,
    /// Concurrent training runs.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[command(flatten)]
    suite: SuiteArgs,
    /// Skip the benchmark of the final checkpoints.
    #[arg(long)]
    no_benchmark: bool,
}

#[derive(Args)]
struct PlotArgs {
    /// Output PNG.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "evaluation return")]
    title: String,
    /// Run directories, optionally as `label=dir`. Without a label, runs in
    /// `<label>/seed_<n>` directories are grouped by `<label>`.
    #[arg(required = true)]
    runs: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("RLAD_LOG", "info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Benchmark(a) => cmd_benchmark(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Plot(a) => cmd_plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e
        .chain()
        .find_map(|c| c.downcast_ref::<rlad::Error>())
        .map(|e| e.kind())
    {
        Some(ErrorKind::Config) => 3,
        Some(ErrorKind::Data) => 4,
        Some(ErrorKind::Runtime) | None => 5,
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn seed_list(common: &Common, config: &RunConfig) -> Vec<u64> {
    if common.seeds.is_empty() {
        vec![config.seed]
    } else {
        common.seeds.clone()
    }
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let mut config = load_config(a.common.config.as_deref())?;
    Variant::parse(&a.variant)?.apply(&mut config);
    let seeds = seed_list(&a.common, &config);
    for &seed in &seeds {
        let mut c = config.clone();
        c.seed = seed;
        let dir = if seeds.len() == 1 && a.common.seeds.is_empty() {
            a.common.out.clone()
        } else {
            a.common.out.join(format!("seed_{seed}"))
        };
        let summary = train(c, &dir).with_context(|| format!("training seed {seed}"))?;
        println!(
            "seed {seed}: {} steps, {} updates, {} episodes, {:.0} s -> {}",
            summary.steps,
            summary.updates,
            summary.episodes,
            summary.wall_clock_s,
            dir.display()
        );
        for (step, ret) in &summary.evals {
            println!("  eval @ {step}: {ret:.2}");
        }
    }
    Ok(())
}

fn cmd_evaluate(a: EvalArgs) -> anyhow::Result<()> {
    let agent = checkpoint::load(&a.checkpoint)
        .with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let config = match a.config.as_deref() {
        Some(p) => RunConfig::load(p)?,
        // Default scenario rendered at the checkpoint's resolution.
        None => {
            let mut c = RunConfig::default();
            c.env.resolution = agent.config.resolution;
            c.agent = agent.config.clone();
            c
        }
    };
    let seeds: Vec<u64> = (0..a.episodes as u64)
        .map(|i| config.eval_seed + i)
        .collect();
    let summary = evaluate(
        &agent,
        config.eval_scenario(),
        &seeds,
        config.action_repeat,
        config.pid,
    )?;
    println!(
        "average return over {} episodes: {:.3}",
        summary.episodes.len(),
        summary.mean_return
    );
    for e in &summary.episodes {
        println!(
            "  seed {}: return {:.2}, {} steps, {:.3} km, termination {}",
            e.seed,
            e.episode_return,
            e.steps,
            e.distance_km,
            e.termination.as_deref().unwrap_or("none")
        );
    }
    if let Some(out) = a.out {
        let json =
            serde_json::json!({"mean_return": summary.mean_return, "episodes": summary.episodes});
        write_file(&out, &serde_json::to_string_pretty(&json)?)?;
    }
    Ok(())
}

fn load_suite(s: &SuiteArgs) -> anyhow::Result<Suite> {
    Ok(match &s.suite {
        Some(p) => Suite::load(p)?,
        None => Suite::standard(s.routes),
    })
}

fn bench_checkpoint(
    path: &Path,
    config: &RunConfig,
    suite: &Suite,
) -> anyhow::Result<BenchmarkReport> {
    let agent = checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    let settings = EpisodeSettings {
        action_repeat: config.action_repeat,
        pid: config.pid,
        stop_at_target: true,
    };
    // Only consumed when A-LIX stays on at evaluation.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Ok(run_benchmark(&agent, suite, settings, &mut rng)?)
}

fn write_report(dir: &Path, report: &BenchmarkReport) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    write_file(
        &dir.join("report.json"),
        &serde_json::to_string_pretty(report)?,
    )?;
    write_file(&dir.join("report.txt"), &report.to_table())?;
    Ok(())
}

fn cmd_benchmark(a: BenchArgs) -> anyhow::Result<()> {
    let config = load_config(a.config.as_deref())?;
    let suite = load_suite(&a.suite)?;
    let report = bench_checkpoint(&a.checkpoint, &config, &suite)?;
    write_report(&a.out, &report)?;
    print!("{}", report.to_table());
    if !report.complete {
        bail!(rlad::Error::Data(format!(
            "suite did not finish: {}",
            report.error.as_deref().unwrap_or("unknown")
        )));
    }
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> anyhow::Result<()> {
    let base = load_config(a.common.config.as_deref())?;
    let variants = a
        .variant
        .iter()
        .map(|v| Variant::parse(v))
        .collect::<Result<Vec<_>, _>>()?;
    let seeds = seed_list(&a.common, &base);
    let mut jobs = Vec::new();
    for &v in &variants {
        for &seed in &seeds {
            let mut c = base.clone();
            v.apply(&mut c);
            c.seed = seed;
            jobs.push((
                v,
                seed,
                c,
                a.common.out.join(v.name()).join(format!("seed_{seed}")),
            ));
        }
    }
    log::info!(
        "{} runs ({} variants x {} seeds)",
        jobs.len(),
        variants.len(),
        seeds.len()
    );
    let parallel = a.parallel.max(1);
    for chunk in jobs.chunks(parallel) {
        let results: Vec<anyhow::Result<()>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|(v, seed, c, dir)| {
                    s.spawn(move || {
                        train(c.clone(), dir)
                            .map(|_| ())
                            .with_context(|| format!("variant {} seed {seed}", v.name()))
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(anyhow::anyhow!("training thread panicked")))
                })
                .collect()
        });
        for r in results {
            r?;
        }
    }

    let runs: Vec<(String, PathBuf)> = jobs
        .iter()
        .map(|(v, _, _, d)| (v.name().to_string(), d.clone()))
        .collect();
    let curves = plot::curves(&runs)?;
    plot::render_png(
        &curves,
        "evaluation return by variant",
        a.common.out.join("returns.png"),
    )?;
    write_file(
        &a.common.out.join("returns.json"),
        &serde_json::to_string_pretty(&curves)?,
    )?;

    if !a.no_benchmark {
        let suite = load_suite(&a.suite)?;
        let mut reports = Vec::new();
        for (v, seed, c, dir) in &jobs {
            let report = bench_checkpoint(&dir.join("best.ckpt"), c, &suite)?;
            write_report(&dir.join("benchmark"), &report)?;
            reports.push((format!("{}/seed_{seed}", v.name()), report));
        }
        let cmp = compare_reports(&reports)?;
        write_file(
            &a.common.out.join("comparison.json"),
            &serde_json::to_string_pretty(&cmp)?,
        )?;
        write_file(&a.common.out.join("comparison.txt"), &cmp.to_table())?;
        print!("{}", cmp.to_table());
    }
    Ok(())
}

fn cmd_plot(a: PlotArgs) -> anyhow::Result<()> {
    let runs: Vec<(String, PathBuf)> = a
        .runs
        .iter()
        .map(|r| match r.split_once('=') {
            Some((label, dir)) => (label.to_string(), PathBuf::from(dir)),
            None => {
                let dir = PathBuf::from(r);
                (default_label(&dir), dir)
            }
        })
        .collect();
    let curves = plot::curves(&runs)?;
    plot::render_png(&curves, &a.title, &a.out)?;
    for c in &curves {
        println!("{}: {} points", c.label, c.points.len());
    }
    Ok(())
}

fn default_label(dir: &Path) -> String {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_default();
    if name.starts_with("seed_") {
        if let Some(parent) = dir.parent().and_then(|p| p.file_name()) {
            return parent.to_string_lossy().to_string();
        }
    }
    name
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
