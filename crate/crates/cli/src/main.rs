//! Command-line front end: scenario generation, training, evaluation, sweeps,
//! staleness-gap tables and duplicate audits.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fleetsim::baselines::{allocate, learned_setup, train_learned, Method};
use fleetsim::env::Env;
use fleetsim::harness::{
    audit_log, emit_plot_data, gap_analysis, read_log, rerun_manifest, run_experiment, run_episode, summarize, training_rows,
    write_csv, write_log, ExperimentConfig, MetricsRow, MetricsTable, PolicyDriver, RunResult, TRAINING_HEADERS,
};
use fleetsim::sac::Learner;
use fleetsim::scenario::{generate_scenario, load_config, ScenarioConfig};

#[derive(Parser, Debug)]
#[command(name = "fleetsim", version, about = "Multi-station UAV data-collection simulator and learners")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Profile {
    /// 4 UAVs, 2 stations, 30 tasks, 300 training episodes.
    Desk,
    /// 16 UAVs, 4 stations, 110 tasks, 400 training episodes.
    Paper,
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario configuration (JSON). Replaces the profile's scenario.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Profile::Desk)]
    profile: Profile,
    /// Number of tasks.
    #[arg(long, global = true)]
    tasks: Option<i64>,
    /// Periodic synchronization interval in steps.
    #[arg(long, global = true)]
    t0: Option<u64>,
    /// Proximity-exchange distance in metres (0 disables it).
    #[arg(long = "d-threshold", global = true)]
    d_threshold: Option<f64>,
    /// Disable all information sharing between stations.
    #[arg(long = "no-sharing", global = true)]
    no_sharing: bool,
    /// Training episodes for learned methods.
    #[arg(long, global = true)]
    episodes: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "FLEETSIM_OUT", default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a scenario and write it as JSON.
    GenerateScenario {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a learned method and save its checkpoint and training curve.
    Train {
        #[arg(long, default_value = "couav")]
        method: Method,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run (train or allocate) and evaluate one method over seeds.
    Evaluate {
        #[arg(long, default_value = "couav")]
        method: Method,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_values_t = [0u64])]
        seeds: Vec<u64>,
        /// Evaluate a checkpoint written by `train` instead of retraining
        /// (single seed, learned methods only).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate several methods over seeds and task scales, with plot data.
    Sweep {
        /// Comma-separated methods (default: all).
        #[arg(long = "method", value_delimiter = ',')]
        methods: Vec<Method>,
        #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3, 4, 5])]
        seeds: Vec<u64>,
        /// Comma-separated task scales (default: the configured task count).
        #[arg(long, value_delimiter = ',')]
        scales: Vec<i64>,
        /// Rerun the experiment recorded in a manifest instead.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Tabulate worst-case and expected staleness gaps over a grid.
    GapAnalysis {
        #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1, 0.2, 0.5])]
        lambdas: Vec<f64>,
        /// Synchronization intervals (defaults to --t0 or 1,5,10,20).
        #[arg(long, value_delimiter = ',')]
        t0s: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.1, 0.3, 0.5])]
        ps: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [2u32, 4])]
        ks: Vec<u32>,
    },
    /// Audit trajectory logs for duplicates and safety violations.
    AuditDuplicates {
        /// A `.jsonl` log or a directory searched recursively for them.
        path: PathBuf,
    },
}

fn experiment_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match c.profile {
        Profile::Desk => ExperimentConfig::desk(),
        Profile::Paper => {
            ExperimentConfig { scenario: ScenarioConfig::paper(110), train_episodes: 400, ..ExperimentConfig::desk() }
        }
    };
    if let Some(path) = &c.config {
        cfg.scenario = load_config(path).with_context(|| format!("loading {}", path.display()))?;
    }
    if let Some(tasks) = c.tasks {
        cfg.scenario.tasks = tasks;
    }
    if let Some(t0) = c.t0 {
        cfg.scenario.learn.t0_sync = t0;
    }
    if let Some(d) = c.d_threshold {
        cfg.scenario.learn.d_threshold_m = d;
    }
    if c.no_sharing {
        cfg.scenario.learn.sharing = false;
    }
    if let Some(e) = c.episodes {
        cfg.train_episodes = e;
    }
    cfg.scenario.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn print_summary(rows: &[MetricsRow]) {
    for s in summarize(rows) {
        println!(
            "{:<12} {:>4} tasks  {:<24} n={} mean={:.4} std={:.4} median={:.4}",
            s.method.name(),
            s.task_scale,
            s.metric,
            s.n,
            s.mean,
            s.std,
            s.median
        );
    }
}

fn evaluate_checkpoint(cfg: &ExperimentConfig, method: Method, seed: u64, dir: &Path) -> Result<RunResult> {
    if !method.is_learned() {
        bail!("--checkpoint only applies to learned methods, not {method}");
    }
    let scenario = generate_scenario(&cfg.scenario, seed)?;
    let (sc, mode) = learned_setup(method, &scenario)?;
    let mut env = Env::new(&sc, mode)?;
    let mut learner = Learner::load(&env, dir)?;
    let mut driver = PolicyDriver { learner: &mut learner, greedy: false };
    let log = run_episode(&mut env, seed, None, &mut driver)?;
    let metrics = fleetsim::harness::compute_metrics(&log)?;
    let audit = audit_log(&log)?;
    Ok(RunResult { method, task_scale: sc.tasks.len(), seed, metrics, training: Vec::new(), log, audit })
}

fn collect_logs(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<_> = std::fs::read_dir(path)?.collect::<std::io::Result<_>>()?;
        entries.sort_by_key(|e| e.path());
        for e in entries {
            collect_logs(&e.path(), out)?;
        }
    } else if path.extension().is_some_and(|e| e == "jsonl") {
        out.push(path.to_path_buf());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let out = cli.common.out.clone();
    match cli.command {
        Command::GenerateScenario { seed } => {
            let cfg = experiment_config(&cli.common)?;
            let scenario = generate_scenario(&cfg.scenario, seed)?;
            let path = out.join(format!("scenario_{}_{seed}.json", scenario.tasks.len()));
            write_json(&path, &scenario)?;
            println!("{}", path.display());
        }
        Command::Train { method, seed } => {
            if !method.is_learned() {
                bail!("{method} is not a learned method; use `evaluate` for baselines");
            }
            let cfg = experiment_config(&cli.common)?;
            let scenario = generate_scenario(&cfg.scenario, seed)?;
            let trained = train_learned(method, &scenario, cfg.train_episodes, seed)?;
            let dir = out.join(format!("{method}_{}_{seed}", scenario.tasks.len()));
            trained.learner.save(&trained.env, dir.join("checkpoint"))?;
            let run = RunResult {
                method,
                task_scale: scenario.tasks.len(),
                seed,
                metrics: Default::default(),
                training: trained.history,
                log: Vec::new(),
                audit: Default::default(),
            };
            write_csv(&training_rows(&run), &TRAINING_HEADERS, dir.join("training.csv"))?;
            write_json(&dir.join("config.json"), &cfg)?;
            if let Some(last) = run.training.last() {
                println!("trained {method} for {} episodes; last return {:.4}", run.training.len(), last.agent_returns.iter().sum::<f64>());
            }
            println!("{}", dir.display());
        }
        Command::Evaluate { method, seeds, checkpoint } => {
            let cfg = experiment_config(&cli.common)?;
            let table = match checkpoint {
                Some(dir) => {
                    let [seed] = seeds[..] else { bail!("--checkpoint evaluates exactly one seed") };
                    let run = evaluate_checkpoint(&cfg, method, seed, &dir)?;
                    std::fs::create_dir_all(out.join("logs"))?;
                    write_log(&run.log, out.join("logs").join(format!("{method}_{}_{seed}.jsonl", run.task_scale)))?;
                    let mut table = MetricsTable::default();
                    table.extend(&run);
                    fleetsim::harness::write_outputs(&table, &out)?;
                    table
                }
                None => run_experiment(&cfg, &[method], &seeds, Some(&out))?,
            };
            if !method.is_learned() {
                for &seed in &seeds {
                    let scenario = generate_scenario(&cfg.scenario, seed)?;
                    let assignment = allocate(method, &scenario, seed, &cfg.ga)?;
                    write_json(&out.join("assignments").join(format!("{method}_{}_{seed}.json", scenario.tasks.len())), &assignment)?;
                }
            }
            print_summary(&table.rows);
        }
        Command::Sweep { methods, seeds, scales, manifest } => {
            let mut tables = Vec::new();
            if let Some(path) = manifest {
                tables.push(rerun_manifest(&path, &out)?);
            } else {
                let cfg = experiment_config(&cli.common)?;
                let methods = if methods.is_empty() { Method::ALL.to_vec() } else { methods };
                let scales = if scales.is_empty() { vec![cfg.scenario.tasks] } else { scales };
                for scale in scales {
                    let mut c = cfg.clone();
                    c.scenario.tasks = scale;
                    tables.push(run_experiment(&c, &methods, &seeds, Some(&out.join(format!("tasks_{scale}"))))?);
                }
            }
            let files = emit_plot_data(&tables, &out.join("plots"))?;
            let rows: Vec<MetricsRow> = tables.iter().flat_map(|t| t.rows.iter().cloned()).collect();
            print_summary(&rows);
            println!("{}\n{}", files.convergence.display(), files.bars.display());
        }
        Command::GapAnalysis { lambdas, t0s, ps, ks } => {
            let t0s = match (t0s.is_empty(), cli.common.t0) {
                (false, _) => t0s,
                (true, Some(t0)) => vec![t0],
                (true, None) => vec![1, 5, 10, 20],
            };
            let rows = gap_analysis(&lambdas, &t0s, &ps, &ks)?;
            std::fs::create_dir_all(&out)?;
            let path = out.join("gaps.csv");
            write_csv(&rows, &["lambda", "t0", "p", "k", "worst_case", "expected"], &path)?;
            println!("{}", path.display());
        }
        Command::AuditDuplicates { path } => {
            let mut files = Vec::new();
            collect_logs(&path, &mut files)?;
            if files.is_empty() {
                bail!("no .jsonl trajectory logs under {}", path.display());
            }
            let mut failed = 0;
            for file in &files {
                let log = read_log(file).with_context(|| format!("reading {}", file.display()))?;
                let metrics = fleetsim::harness::compute_metrics(&log)?;
                let report = audit_log(&log)?;
                println!(
                    "{}: duplicates {}, post-sync duplicate plans {} over {} syncs, {}",
                    file.display(),
                    metrics.duplicate_collections,
                    report.max_post_sync_duplicates,
                    report.periodic_syncs,
                    if report.ok() { "ok".to_string() } else { format!("PROBLEMS {:?}", report.problems) }
                );
                if !report.ok() {
                    failed += 1;
                }
            }
            if failed > 0 {
                bail!("{failed} of {} logs failed the audit", files.len());
            }
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    run(Cli::parse())
}
