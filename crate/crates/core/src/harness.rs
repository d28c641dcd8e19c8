//! Experiment orchestration: episode drivers, trajectory logs, metrics
//! computed from logs only, safety audits, seeded runs with CSV/JSON
//! outputs, summaries and long-format plot data.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{allocate, train_learned, GaConfig, Method};
use crate::coordination::{expected_gap, worst_case_gap, ShareKind};
use crate::env::{AgentAction, AgentMode, Env, Event, LogHeader, LogRecord, StepRecord, NOOP};
use crate::error::{Error, Result};
use crate::routing::CostModel;
use crate::sac::{random_action, EpisodeStats, Learner};
use crate::scenario::{generate_scenario, Scenario, ScenarioConfig, TaskId, UavId};

/// Evaluation metrics of one episode, all derived from its log.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Sum of per-collection rewards (ground-truth collection rate) over the
    /// number of tasks.
    pub avg_reward: f64,
    pub task_collection_rate: f64,
    pub task_completion_rate: f64,
    /// First launch to last landing.
    pub avg_processing_time_s: f64,
    /// Mean total energy spent per UAV (flight and processing).
    pub avg_energy_j: f64,
    pub uav_utilization_rate: f64,
    /// Arrivals at tasks another UAV had already collected.
    pub duplicate_collections: usize,
    pub wall_clock_s: f64,
}

/// Something that picks every agent's action.
pub trait Driver {
    fn actions(&mut self, env: &Env) -> Result<Vec<AgentAction>>;
}

/// Always idles; used to fly preloaded offline plans.
pub struct NoopDriver;

impl Driver for NoopDriver {
    fn actions(&mut self, env: &Env) -> Result<Vec<AgentAction>> {
        Ok((0..env.n_agents())
            .map(|a| AgentAction { per_uav_choice: vec![NOOP; env.agent_uavs(a).len()] })
            .collect())
    }
}

/// Uniform choice among admissible actions.
pub struct RandomDriver(pub ChaCha8Rng);

impl RandomDriver {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl Driver for RandomDriver {
    fn actions(&mut self, env: &Env) -> Result<Vec<AgentAction>> {
        (0..env.n_agents())
            .map(|a| Ok(AgentAction { per_uav_choice: random_action(&env.action_mask(a)?, &mut self.0) }))
            .collect()
    }
}

/// A trained learner acting greedily (mode of each categorical) or by
/// sampling.
pub struct PolicyDriver<'a> {
    pub learner: &'a mut Learner,
    pub greedy: bool,
}

impl Driver for PolicyDriver<'_> {
    fn actions(&mut self, env: &Env) -> Result<Vec<AgentAction>> {
        self.learner.act(env, self.greedy)
    }
}

/// Runs one episode from a reset and returns its complete log.
pub fn run_episode(env: &mut Env, seed: u64, plans: Option<&BTreeMap<UavId, Vec<TaskId>>>, driver: &mut dyn Driver) -> Result<Vec<LogRecord>> {
    env.reset(seed);
    if let Some(plans) = plans {
        env.load_plans(plans)?;
    }
    let mut log = vec![LogRecord::Header(Box::new(env.header()))];
    while !env.state().done {
        let actions = driver.actions(env)?;
        log.push(LogRecord::Step(env.step(&actions)?.record));
    }
    Ok(log)
}

fn split_log(log: &[LogRecord]) -> Result<(&LogHeader, Vec<&StepRecord>)> {
    let header = match log.first() {
        Some(LogRecord::Header(h)) => h.as_ref(),
        _ => return Err(Error::TruncatedLog("missing header".into())),
    };
    let mut steps = Vec::new();
    for r in &log[1..] {
        match r {
            LogRecord::Step(s) => steps.push(s),
            LogRecord::Header(_) => return Err(Error::TruncatedLog("second header inside the log".into())),
        }
    }
    if !steps.last().is_some_and(|s| s.done) {
        return Err(Error::TruncatedLog("no terminal step".into()));
    }
    Ok((header, steps))
}

/// Evaluation metrics from a complete episode log.
pub fn compute_metrics(log: &[LogRecord]) -> Result<EpisodeMetrics> {
    let (header, steps) = split_log(log)?;
    let n_tasks = header.n_tasks.max(1) as f64;
    let n_uavs = header.n_uavs.max(1) as f64;
    let mut collected = BTreeSet::new();
    let mut completed = BTreeSet::new();
    let mut reward = 0.0;
    let mut energy = vec![0.0; header.n_uavs];
    let mut assigned = BTreeSet::new();
    let mut first_launch: Option<f64> = None;
    let mut last_land: Option<f64> = None;
    let mut duplicates = 0;
    for e in steps.iter().flat_map(|s| &s.events) {
        match e {
            Event::Assign { uav, .. } => {
                assigned.insert(*uav);
            }
            Event::Launch { time_s, .. } => first_launch = Some(first_launch.map_or(*time_s, |t: f64| t.min(*time_s))),
            Event::Land { time_s, .. } => last_land = Some(last_land.map_or(*time_s, |t: f64| t.max(*time_s))),
            Event::Leg { uav, energy_j, .. } => energy[uav.0] += energy_j,
            Event::LegRefund { uav, energy_j, .. } => energy[uav.0] -= energy_j,
            Event::Collect { uav, task, task_energy_j, process_energy_j, reward: r, .. } => {
                collected.insert(*task);
                energy[uav.0] += task_energy_j + process_energy_j;
                reward += r;
            }
            Event::Processed { task, beta, .. } if *beta >= 1.0 - 1e-9 => {
                completed.insert(*task);
            }
            Event::Duplicate { .. } => duplicates += 1,
            _ => {}
        }
    }
    let processing_time = match (first_launch, last_land) {
        (Some(a), Some(b)) => (b - a).max(0.0),
        _ => 0.0,
    };
    Ok(EpisodeMetrics {
        avg_reward: reward / n_tasks,
        task_collection_rate: collected.len() as f64 / n_tasks,
        task_completion_rate: completed.len() as f64 / n_tasks,
        avg_processing_time_s: processing_time,
        avg_energy_j: energy.iter().sum::<f64>() / n_uavs,
        uav_utilization_rate: assigned.len() as f64 / n_uavs,
        duplicate_collections: duplicates,
        wall_clock_s: 0.0,
    })
}

/// Outcome of the safety audit of one log.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AuditReport {
    pub steps: usize,
    pub problems: Vec<String>,
    /// Largest duplicate-planned count observed right after a periodic sync.
    pub max_post_sync_duplicates: usize,
    pub periodic_syncs: usize,
}

impl AuditReport {
    pub fn ok(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Checks battery and storage signs at every step, that each task is
/// collected at most once, and that every executed route passes the
/// feasibility checker from a full battery.
pub fn audit_log(log: &[LogRecord]) -> Result<AuditReport> {
    let (header, steps) = split_log(log)?;
    let mut report = AuditReport { steps: steps.len(), ..AuditReport::default() };
    let mut collector: BTreeMap<TaskId, UavId> = BTreeMap::new();
    let mut executed: BTreeMap<UavId, Vec<TaskId>> = BTreeMap::new();
    for s in &steps {
        for (i, u) in s.uavs.iter().enumerate() {
            if u.flight_battery_j < 0.0 || u.process_battery_j < 0.0 {
                report.problems.push(format!("step {}: uav{i} battery below zero", s.step));
            }
            if u.storage_free_bytes < 0.0 {
                report.problems.push(format!("step {}: uav{i} storage overflow", s.step));
            }
        }
        let mut synced = false;
        for e in &s.events {
            match e {
                Event::Collect { uav, task, .. } => {
                    if let Some(prev) = collector.insert(*task, *uav) {
                        report.problems.push(format!("{task} collected by {prev} and again by {uav}"));
                    }
                    executed.entry(*uav).or_default().push(*task);
                }
                Event::Share { share } if share.kind == ShareKind::Periodic => synced = true,
                _ => {}
            }
        }
        if synced {
            report.periodic_syncs += 1;
            report.max_post_sync_duplicates = report.max_post_sync_duplicates.max(s.duplicate_planned);
        }
    }
    let model = CostModel::new(&header.scenario)?;
    let assignment = model.assignment(&executed)?;
    let feas = model.check(&assignment)?;
    if !feas.is_feasible() {
        report.problems.push(format!("executed routes infeasible: {feas}"));
    }
    Ok(report)
}

pub fn write_log(log: &[LogRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in log {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<LogRecord>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::TruncatedLog(e.to_string()))?);
    }
    Ok(out)
}

/// Everything needed to rerun an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub train_episodes: usize,
    #[serde(default)]
    pub ga: GaConfig,
}

impl ExperimentConfig {
    pub fn desk() -> Self {
        Self { scenario: ScenarioConfig::desk(), train_episodes: 300, ga: GaConfig::default() }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        let text = serde_json::to_string(self)?;
        Ok(Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// One evaluated (method, seed) run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub method: Method,
    pub task_scale: usize,
    pub seed: u64,
    pub metrics: EpisodeMetrics,
    pub training: Vec<EpisodeStats>,
    pub log: Vec<LogRecord>,
    pub audit: AuditReport,
}

/// Trains (learned methods) or allocates (offline methods) on the
/// scenario generated from `seed`, then evaluates one greedy episode.
pub fn run_single(cfg: &ExperimentConfig, method: Method, seed: u64) -> Result<RunResult> {
    let scenario = generate_scenario(&cfg.scenario, seed)?;
    run_on_scenario(&scenario, cfg, method, seed)
}

pub fn run_on_scenario(scenario: &Scenario, cfg: &ExperimentConfig, method: Method, seed: u64) -> Result<RunResult> {
    let clock = Instant::now();
    let (log, training) = if method.is_learned() {
        let mut trained = train_learned(method, scenario, cfg.train_episodes, seed)?;
        let mut driver = PolicyDriver { learner: &mut trained.learner, greedy: false };
        (run_episode(&mut trained.env, seed, None, &mut driver)?, trained.history)
    } else {
        let assignment = allocate(method, scenario, seed, &cfg.ga)?;
        let mut env = Env::new(scenario, AgentMode::Distributed)?;
        let plans = assignment.stops();
        (run_episode(&mut env, seed, Some(&plans), &mut NoopDriver)?, Vec::new())
    };
    let mut metrics = compute_metrics(&log)?;
    metrics.wall_clock_s = clock.elapsed().as_secs_f64();
    let audit = audit_log(&log)?;
    Ok(RunResult { method, task_scale: scenario.tasks.len(), seed, metrics, training, log, audit })
}

/// Row of the per-run metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: Method,
    pub task_scale: usize,
    pub seed: u64,
    pub avg_reward: f64,
    pub task_collection_rate: f64,
    pub task_completion_rate: f64,
    pub avg_processing_time_s: f64,
    pub avg_energy_j: f64,
    pub uav_utilization_rate: f64,
    pub duplicate_collections: usize,
    pub wall_clock_s: f64,
}

impl MetricsRow {
    pub fn from_run(r: &RunResult) -> Self {
        let m = &r.metrics;
        Self {
            method: r.method,
            task_scale: r.task_scale,
            seed: r.seed,
            avg_reward: m.avg_reward,
            task_collection_rate: m.task_collection_rate,
            task_completion_rate: m.task_completion_rate,
            avg_processing_time_s: m.avg_processing_time_s,
            avg_energy_j: m.avg_energy_j,
            uav_utilization_rate: m.uav_utilization_rate,
            duplicate_collections: m.duplicate_collections,
            wall_clock_s: m.wall_clock_s,
        }
    }

    /// Deterministic metric columns (wall clock excluded).
    pub fn metric_values(&self) -> [(&'static str, f64); 7] {
        [
            ("avg_reward", self.avg_reward),
            ("task_collection_rate", self.task_collection_rate),
            ("task_completion_rate", self.task_completion_rate),
            ("avg_processing_time_s", self.avg_processing_time_s),
            ("avg_energy_j", self.avg_energy_j),
            ("uav_utilization_rate", self.uav_utilization_rate),
            ("duplicate_collections", self.duplicate_collections as f64),
        ]
    }
}

/// Row of the per-episode training CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub method: Method,
    pub task_scale: usize,
    pub seed: u64,
    pub episode: usize,
    /// Mean over agents of the episode return.
    pub reward: f64,
    pub steps: u64,
    pub critic_loss: f64,
    pub actor_loss: f64,
}

pub fn training_rows(r: &RunResult) -> Vec<TrainingRow> {
    r.training
        .iter()
        .enumerate()
        .map(|(episode, s)| TrainingRow {
            method: r.method,
            task_scale: r.task_scale,
            seed: r.seed,
            episode,
            reward: s.agent_returns.iter().sum::<f64>() / s.agent_returns.len().max(1) as f64,
            steps: s.steps,
            critic_loss: s.mean_critic_loss,
            actor_loss: s.mean_actor_loss,
        })
        .collect()
}

/// Mean, sample standard deviation and median of one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub task_scale: usize,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n - 1); 0 for fewer than two values.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Aggregates rows per (method, task scale, metric).
pub fn summarize(rows: &[MetricsRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Method, usize, usize), (&'static str, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        for (i, (name, value)) in r.metric_values().into_iter().enumerate() {
            groups.entry((r.method, r.task_scale, i)).or_insert((name, Vec::new())).1.push(value);
        }
    }
    groups
        .into_iter()
        .map(|((method, task_scale, _), (metric, v))| SummaryRow {
            method,
            task_scale,
            metric: metric.to_string(),
            n: v.len(),
            mean: mean(&v),
            std: std_dev(&v),
            median: median(&v),
        })
        .collect()
}

pub fn write_csv<T: Serialize>(rows: &[T], headers: &[&str], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(headers)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub const METRICS_HEADERS: [&str; 11] = [
    "method",
    "task_scale",
    "seed",
    "avg_reward",
    "task_collection_rate",
    "task_completion_rate",
    "avg_processing_time_s",
    "avg_energy_j",
    "uav_utilization_rate",
    "duplicate_collections",
    "wall_clock_s",
];
pub const TRAINING_HEADERS: [&str; 8] = ["method", "task_scale", "seed", "episode", "reward", "steps", "critic_loss", "actor_loss"];
pub const SUMMARY_HEADERS: [&str; 7] = ["method", "task_scale", "metric", "n", "mean", "std", "median"];

/// Reproducibility record written next to the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub crate_version: String,
}

/// Results of an experiment across methods and seeds.
#[derive(Debug, Clone, Default)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
    pub training: Vec<TrainingRow>,
    pub audits: Vec<(Method, u64, AuditReport)>,
}

impl MetricsTable {
    pub fn extend(&mut self, run: &RunResult) {
        self.rows.push(MetricsRow::from_run(run));
        self.training.extend(training_rows(run));
        self.audits.push((run.method, run.seed, run.audit.clone()));
    }

    pub fn merge(&mut self, other: MetricsTable) {
        self.rows.extend(other.rows);
        self.training.extend(other.training);
        self.audits.extend(other.audits);
    }
}

/// Runs every (method, seed) pair and, if `out` is given, writes
/// `metrics.csv`, `training.csv`, `summary.csv`, `manifest.json` and one
/// trajectory log per run under `out/logs`.
pub fn run_experiment(cfg: &ExperimentConfig, methods: &[Method], seeds: &[u64], out: Option<&Path>) -> Result<MetricsTable> {
    let mut table = MetricsTable::default();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir.join("logs"))?;
    }
    for &method in methods {
        for &seed in seeds {
            log::info!("running {method} seed {seed} ({} tasks)", cfg.scenario.n_tasks());
            let run = run_single(cfg, method, seed)?;
            if let Some(dir) = out {
                write_log(&run.log, dir.join("logs").join(format!("{method}_{}_{seed}.jsonl", run.task_scale)))?;
            }
            table.extend(&run);
        }
    }
    if let Some(dir) = out {
        write_outputs(&table, dir)?;
        let manifest = Manifest {
            config_hash: cfg.hash()?,
            config: cfg.clone(),
            methods: methods.to_vec(),
            seeds: seeds.to_vec(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    }
    Ok(table)
}

/// Writes the metrics, training and summary CSVs of `table` into `dir`.
pub fn write_outputs(table: &MetricsTable, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_csv(&table.rows, &METRICS_HEADERS, dir.join("metrics.csv"))?;
    write_csv(&table.training, &TRAINING_HEADERS, dir.join("training.csv"))?;
    write_csv(&summarize(&table.rows), &SUMMARY_HEADERS, dir.join("summary.csv"))?;
    Ok(())
}

/// Reruns an experiment from its manifest alone.
pub fn rerun_manifest(path: impl AsRef<Path>, out: &Path) -> Result<MetricsTable> {
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    run_experiment(&manifest.config, &manifest.methods, &manifest.seeds, Some(out))
}

/// Long-format plot row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub method: Method,
    pub task_scale: usize,
    pub seed: Option<u64>,
    pub episode: Option<usize>,
    pub metric: String,
    pub value: f64,
}

pub const PLOT_HEADERS: [&str; 6] = ["method", "task_scale", "seed", "episode", "metric", "value"];

/// Paths written by [`emit_plot_data`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlotFiles {
    pub convergence: PathBuf,
    pub bars: PathBuf,
}

/// Writes `convergence.csv` (one training reward row per method, seed and
/// episode) and `bars.csv` (mean and std over seeds of every metric).
pub fn emit_plot_data(tables: &[MetricsTable], dir: &Path) -> Result<PlotFiles> {
    std::fs::create_dir_all(dir)?;
    let mut convergence = Vec::new();
    let mut rows = Vec::new();
    for t in tables {
        for r in &t.training {
            convergence.push(PlotRow {
                method: r.method,
                task_scale: r.task_scale,
                seed: Some(r.seed),
                episode: Some(r.episode),
                metric: "reward".into(),
                value: r.reward,
            });
        }
        rows.extend(t.rows.iter().cloned());
    }
    let mut bars = Vec::new();
    for s in summarize(&rows) {
        for (suffix, value) in [("mean", s.mean), ("std", s.std)] {
            bars.push(PlotRow {
                method: s.method,
                task_scale: s.task_scale,
                seed: None,
                episode: None,
                metric: format!("{}_{suffix}", s.metric),
                value,
            });
        }
    }
    let files = PlotFiles { convergence: dir.join("convergence.csv"), bars: dir.join("bars.csv") };
    write_csv(&convergence, &PLOT_HEADERS, &files.convergence)?;
    write_csv(&bars, &PLOT_HEADERS, &files.bars)?;
    Ok(files)
}

/// Row of the staleness-gap table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub lambda: f64,
    pub t0: u64,
    pub p: f64,
    pub k: u32,
    pub worst_case: f64,
    pub expected: f64,
}

/// Worst-case and expected gaps over a parameter grid, unit initial value.
pub fn gap_analysis(lambdas: &[f64], t0s: &[u64], ps: &[f64], ks: &[u32]) -> Result<Vec<GapRow>> {
    let mut rows = Vec::new();
    for &lambda in lambdas {
        for &t0 in t0s {
            for &p in ps {
                for &k in ks {
                    rows.push(GapRow {
                        lambda,
                        t0,
                        p,
                        k,
                        worst_case: worst_case_gap(1.0, lambda, t0),
                        expected: expected_gap(1.0, lambda, t0, p, k)?,
                    });
                }
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Phase, UavDigest};
    use crate::geom::Point3;

    fn scenario(tasks: usize) -> Scenario {
        let mut cfg = ScenarioConfig::desk();
        cfg.tasks = tasks as i64;
        generate_scenario(&cfg, 5).unwrap()
    }

    fn digest() -> UavDigest {
        UavDigest {
            position: Point3 { x: 0.0, y: 0.0, z: 0.0 },
            flight_battery_j: 1.0,
            process_battery_j: 1.0,
            storage_free_bytes: 1.0,
            phase: Phase::AtStation,
        }
    }

    fn step(step: u64, events: Vec<Event>, done: bool, n_uavs: usize) -> LogRecord {
        LogRecord::Step(StepRecord {
            step,
            time_s: step as f64 * 30.0,
            actions: vec![],
            rewards: vec![],
            events,
            uavs: vec![digest(); n_uavs],
            duplicate_planned: 0,
            done,
        })
    }

    fn collect(uav: usize, task: usize, t: f64, reward: f64, beta: f64) -> Event {
        Event::Collect {
            uav: UavId(uav),
            task: TaskId(task),
            time_s: t,
            task_energy_j: 100.0,
            beta,
            process_energy_j: 10.0,
            residual_bytes: 0.0,
            flops: 0.0,
            priority: 1,
            collection_rate: 0.0,
            reward,
        }
    }

    #[test]
    fn hand_constructed_log() {
        let sc = scenario(3);
        let env = Env::new(&sc, AgentMode::Distributed).unwrap();
        let n = sc.uavs.len();
        let log = vec![
            LogRecord::Header(Box::new(env.header())),
            step(
                1,
                vec![
                    Event::Assign { uav: UavId(0), task: TaskId(0), index: 0 },
                    Event::Assign { uav: UavId(1), task: TaskId(1), index: 0 },
                    Event::Launch { uav: UavId(0), time_s: 0.0 },
                    Event::Launch { uav: UavId(1), time_s: 0.0 },
                    Event::Leg { uav: UavId(0), to_task: Some(TaskId(0)), energy_j: 1000.0, time_s: 0.0 },
                    Event::Leg { uav: UavId(1), to_task: Some(TaskId(1)), energy_j: 500.0, time_s: 0.0 },
                ],
                false,
                n,
            ),
            step(
                2,
                vec![
                    collect(0, 0, 40.0, 0.6, 1.0),
                    collect(1, 1, 45.0, 0.3, 0.5),
                    Event::Processed { uav: UavId(0), task: TaskId(0), beta: 1.0, time_s: 50.0 },
                    Event::Processed { uav: UavId(1), task: TaskId(1), beta: 0.5, time_s: 55.0 },
                    Event::Leg { uav: UavId(0), to_task: None, energy_j: 1000.0, time_s: 40.0 },
                    Event::LegRefund { uav: UavId(1), energy_j: 200.0, time_s: 60.0 },
                    Event::Land { uav: UavId(0), time_s: 80.0 },
                    Event::Land { uav: UavId(1), time_s: 90.0 },
                ],
                true,
                n,
            ),
        ];
        let m = compute_metrics(&log).unwrap();
        assert!((m.avg_reward - 0.9 / 3.0).abs() < 1e-12);
        assert!((m.task_collection_rate - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.task_completion_rate - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.avg_processing_time_s, 90.0);
        // (1000 + 1000 + 110) + (500 - 200 + 110) over 4 UAVs
        assert!((m.avg_energy_j - 2520.0 / 4.0).abs() < 1e-9);
        assert_eq!(m.uav_utilization_rate, 0.5);
        assert_eq!(m.duplicate_collections, 0);
    }

    #[test]
    fn idle_episode_metrics() {
        let sc = scenario(5);
        let mut env = Env::new(&sc, AgentMode::Distributed).unwrap();
        let log = run_episode(&mut env, 0, None, &mut NoopDriver).unwrap();
        let m = compute_metrics(&log).unwrap();
        assert_eq!(m.uav_utilization_rate, 0.0);
        assert_eq!(m.avg_processing_time_s, 0.0);
        assert_eq!(m.task_collection_rate, 0.0);
        assert!(audit_log(&log).unwrap().ok());
    }

    #[test]
    fn complete_collection_gives_unit_rates() {
        let sc = scenario(2);
        let env = Env::new(&sc, AgentMode::Distributed).unwrap();
        let n = sc.uavs.len();
        let log = vec![
            LogRecord::Header(Box::new(env.header())),
            step(1, vec![collect(0, 0, 1.0, 0.1, 1.0), collect(1, 1, 1.0, 0.1, 1.0),
                Event::Processed { uav: UavId(0), task: TaskId(0), beta: 1.0, time_s: 2.0 },
                Event::Processed { uav: UavId(1), task: TaskId(1), beta: 1.0, time_s: 2.0 }], true, n),
        ];
        let m = compute_metrics(&log).unwrap();
        assert_eq!((m.task_collection_rate, m.task_completion_rate), (1.0, 1.0));
    }

    #[test]
    fn truncated_logs_are_rejected() {
        let sc = scenario(2);
        let env = Env::new(&sc, AgentMode::Distributed).unwrap();
        let header = LogRecord::Header(Box::new(env.header()));
        assert!(matches!(compute_metrics(&[]), Err(Error::TruncatedLog(_))));
        assert!(matches!(compute_metrics(std::slice::from_ref(&header)), Err(Error::TruncatedLog(_))));
        let partial = vec![header, step(1, vec![], false, sc.uavs.len())];
        assert!(matches!(compute_metrics(&partial), Err(Error::TruncatedLog(_))));
    }

    #[test]
    fn log_round_trip() {
        let sc = scenario(6);
        let mut env = Env::new(&sc, AgentMode::Distributed).unwrap();
        let log = run_episode(&mut env, 3, None, &mut RandomDriver::new(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ep.jsonl");
        write_log(&log, &path).unwrap();
        assert_eq!(read_log(&path).unwrap(), log);
    }

    #[test]
    fn summary_matches_recomputation() {
        let rows: Vec<MetricsRow> = (0..5)
            .map(|i| MetricsRow {
                method: Method::Rnd,
                task_scale: 10,
                seed: i,
                avg_reward: [0.3, 0.1, 0.4, 0.15, 0.9][i as usize],
                task_collection_rate: 0.5,
                task_completion_rate: 0.25,
                avg_processing_time_s: 100.0,
                avg_energy_j: 1.0,
                uav_utilization_rate: 1.0,
                duplicate_collections: i as usize,
                wall_clock_s: 0.0,
            })
            .collect();
        let s = summarize(&rows);
        let r = s.iter().find(|s| s.metric == "avg_reward").unwrap();
        assert!((r.mean - 0.37).abs() < 1e-12);
        assert_eq!(r.median, 0.3);
        let var = [0.3f64, 0.1, 0.4, 0.15, 0.9].iter().map(|x| (x - 0.37).powi(2)).sum::<f64>() / 4.0;
        assert!((r.std - var.sqrt()).abs() < 1e-12);
        let d = s.iter().find(|s| s.metric == "duplicate_collections").unwrap();
        assert_eq!((d.mean, d.median), (2.0, 2.0));
    }

    #[test]
    fn empty_plot_data_has_headers_only() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_plot_data(&[], dir.path()).unwrap();
        for f in [files.convergence, files.bars] {
            let text = std::fs::read_to_string(f).unwrap();
            assert_eq!(text.trim(), PLOT_HEADERS.join(","));
        }
    }

    #[test]
    fn gap_grid_rows() {
        let rows = gap_analysis(&[0.0, 0.1], &[10], &[0.0, 0.5], &[2]).unwrap();
        assert_eq!(rows.len(), 4);
        let r = rows.iter().find(|r| r.lambda == 0.1 && r.p == 0.0).unwrap();
        assert_eq!(r.worst_case, r.expected);
    }
}
