//! Comparison allocators. The offline ones (random, genetic, greedy) return
//! a feasible [`Assignment`] that the environment flies verbatim; the
//! learned ones (shared-belief distributed, no-sharing ablation,
//! centralized) are trained soft actor-critic agents.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{AgentMode, Env};
use crate::error::{Error, Result};
use crate::routing::{Assignment, CostModel};
use crate::sac::{EpisodeStats, Learner};
use crate::scenario::{Scenario, TaskId, UavId};

/// Every allocation method the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Distributed agents with proximity and periodic sharing.
    Couav,
    Centralized,
    NoSharing,
    Rnd,
    Ga,
    Greedy,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Couav, Method::Centralized, Method::NoSharing, Method::Rnd, Method::Ga, Method::Greedy];

    pub fn is_learned(self) -> bool {
        matches!(self, Method::Couav | Method::Centralized | Method::NoSharing)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Couav => "couav",
            Method::Centralized => "centralized",
            Method::NoSharing => "no-sharing",
            Method::Rnd => "rnd",
            Method::Ga => "ga",
            Method::Greedy => "greedy",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}

/// Random allocation: tasks in random order, each offered to a uniformly
/// random UAV and appended to its route if the route stays feasible.
pub fn rnd_allocate(scenario: &Scenario, seed: u64) -> Result<Assignment> {
    let model = CostModel::new(scenario)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<TaskId> = scenario.tasks.iter().map(|t| t.id).collect();
    order.shuffle(&mut rng);
    let mut stops: BTreeMap<UavId, Vec<TaskId>> = BTreeMap::new();
    let n_uavs = scenario.uavs.len();
    if n_uavs == 0 {
        return model.assignment(&stops);
    }
    for task in order {
        let uav = UavId(rng.random_range(0..n_uavs));
        let route = stops.entry(uav).or_default();
        route.push(task);
        if !model.route_feasible(uav, route) {
            route.pop();
        }
    }
    model.assignment(&stops)
}

/// Repeatedly commits the feasible (UAV, task, position) insertion with the
/// largest positive marginal objective.
pub fn greedy_allocate(scenario: &Scenario) -> Result<Assignment> {
    let model = CostModel::new(scenario)?;
    let n_uavs = scenario.uavs.len();
    let mut routes: Vec<Vec<TaskId>> = vec![Vec::new(); n_uavs];
    let mut free: Vec<TaskId> = scenario.tasks.iter().map(|t| t.id).collect();
    loop {
        let mut best: Option<(f64, usize, usize, usize)> = None;
        for (u, route) in routes.iter().enumerate() {
            let uav = UavId(u);
            for (fi, &task) in free.iter().enumerate() {
                let (at, delta) = model.cheapest_insertion(uav, None, route, task);
                let gain = model.value_weight * model.values[task.0] - model.length_cost * delta;
                if gain <= 0.0 || best.is_some_and(|(g, ..)| gain <= g) {
                    continue;
                }
                let mut trial = route.clone();
                trial.insert(at, task);
                if model.route_feasible(uav, &trial) {
                    best = Some((gain, u, fi, at));
                }
            }
        }
        match best {
            Some((_, u, fi, at)) => {
                let task = free.remove(fi);
                routes[u].insert(at, task);
            }
            None => break,
        }
    }
    let stops = routes.into_iter().enumerate().filter(|(_, r)| !r.is_empty()).map(|(u, r)| (UavId(u), r)).collect();
    model.assignment(&stops)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub elitism: usize,
    pub tournament: usize,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self { population: 50, generations: 200, crossover_rate: 0.8, mutation_rate: 0.05, elitism: 2, tournament: 3, seed: 0 }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::config("ga.population", "must be at least 2"));
        }
        for (name, v) in [("ga.crossover_rate", self.crossover_rate), ("ga.mutation_rate", self.mutation_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(name, "must lie in [0, 1]"));
            }
        }
        if self.elitism > self.population {
            return Err(Error::config("ga.elitism", "must not exceed the population"));
        }
        if self.tournament == 0 {
            return Err(Error::config("ga.tournament", "must be positive"));
        }
        Ok(())
    }
}

/// A gene per task: `0` leaves it unassigned, `k` gives it to UAV `k - 1`.
pub type Genome = Vec<usize>;

/// Result of a GA run, with the best fitness after every generation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaOutcome {
    pub assignment: Assignment,
    pub best_genome: Genome,
    pub best_fitness: f64,
    pub history: Vec<f64>,
}

/// Nearest-neighbour route over `tasks` from the depot, improved by 2-opt
/// under the curved metric.
pub fn order_route(model: &CostModel, uav: UavId, tasks: &[TaskId]) -> Vec<TaskId> {
    let mut left: Vec<TaskId> = tasks.to_vec();
    left.sort();
    let mut route = Vec::with_capacity(left.len());
    let mut prev: Option<TaskId> = None;
    while !left.is_empty() {
        let (i, _) = left
            .iter()
            .enumerate()
            .map(|(i, &t)| (i, model.hop(uav, prev, Some(t))))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        let t = left.remove(i);
        route.push(t);
        prev = Some(t);
    }
    let mut best_len = model.path_length(uav, None, &route);
    let mut improved = true;
    while improved {
        improved = false;
        for i in 0..route.len() {
            for j in i + 1..route.len() {
                let mut trial = route.clone();
                trial[i..=j].reverse();
                let len = model.path_length(uav, None, &trial);
                if len < best_len - 1e-9 {
                    route = trial;
                    best_len = len;
                    improved = true;
                }
            }
        }
    }
    route
}

/// Turns a genome into feasible routes: order each UAV's tasks, then drop
/// the lowest-value task until the route is feasible.
pub fn decode(model: &CostModel, genome: &[usize]) -> BTreeMap<UavId, Vec<TaskId>> {
    let mut stops = BTreeMap::new();
    for u in 0..model.n_uavs() {
        let uav = UavId(u);
        let mut mine: Vec<TaskId> = genome.iter().enumerate().filter(|(_, g)| **g == u + 1).map(|(t, _)| TaskId(t)).collect();
        let mut route = order_route(model, uav, &mine);
        while !route.is_empty() && !model.route_feasible(uav, &route) {
            let (idx, _) = mine
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (i, t)| if model.values[t.0] < acc.1 { (i, model.values[t.0]) } else { acc });
            mine.remove(idx);
            route = order_route(model, uav, &mine);
        }
        if !route.is_empty() {
            stops.insert(uav, route);
        }
    }
    stops
}

fn fitness(model: &CostModel, genome: &[usize]) -> f64 {
    decode(model, genome).iter().map(|(&u, r)| model.route_objective(u, r)).sum()
}

/// Genetic allocation: tournament selection, uniform crossover, per-gene
/// mutation and elitism over task-to-UAV genomes.
pub fn ga_allocate(scenario: &Scenario, cfg: &GaConfig) -> Result<Assignment> {
    Ok(ga_run(scenario, cfg, None)?.assignment)
}

/// Full GA run; `initial` seeds the population (the rest is random).
pub fn ga_run(scenario: &Scenario, cfg: &GaConfig, initial: Option<Vec<Genome>>) -> Result<GaOutcome> {
    cfg.validate()?;
    let model = CostModel::new(scenario)?;
    let n = model.n_tasks();
    let genes = model.n_uavs() + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut population: Vec<Genome> = initial.unwrap_or_default();
    if population.iter().any(|g| g.len() != n || g.iter().any(|v| *v >= genes)) {
        return Err(Error::Shape("initial genome does not match the scenario".into()));
    }
    while population.len() < cfg.population {
        population.push((0..n).map(|_| rng.random_range(0..genes)).collect());
    }
    population.truncate(cfg.population);
    let mut scores: Vec<f64> = population.iter().map(|g| fitness(&model, g)).collect();
    let mut best = best_of(&population, &scores);
    let mut history = Vec::with_capacity(cfg.generations);
    for _ in 0..cfg.generations {
        let mut ranked: Vec<usize> = (0..population.len()).collect();
        ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(population[a].cmp(&population[b])));
        let mut next: Vec<Genome> = ranked.iter().take(cfg.elitism).map(|&i| population[i].clone()).collect();
        while next.len() < cfg.population {
            let a = tournament(&scores, cfg.tournament, &mut rng);
            let b = tournament(&scores, cfg.tournament, &mut rng);
            let mut child = population[a].clone();
            if rng.random_bool(cfg.crossover_rate) {
                for (c, g) in child.iter_mut().zip(&population[b]) {
                    if rng.random_bool(0.5) {
                        *c = *g;
                    }
                }
            }
            for c in child.iter_mut() {
                if rng.random_bool(cfg.mutation_rate) {
                    *c = rng.random_range(0..genes);
                }
            }
            next.push(child);
        }
        population = next;
        scores = population.iter().map(|g| fitness(&model, g)).collect();
        let gen_best = best_of(&population, &scores);
        if gen_best.1 > best.1 || (gen_best.1 == best.1 && gen_best.0 < best.0) {
            best = gen_best;
        }
        history.push(best.1);
    }
    let assignment = model.assignment(&decode(&model, &best.0))?;
    Ok(GaOutcome { assignment, best_genome: best.0, best_fitness: best.1, history })
}

fn best_of(population: &[Genome], scores: &[f64]) -> (Genome, f64) {
    let mut best = 0;
    for i in 1..population.len() {
        if scores[i] > scores[best] || (scores[i] == scores[best] && population[i] < population[best]) {
            best = i;
        }
    }
    (population[best].clone(), scores[best])
}

fn tournament(scores: &[f64], size: usize, rng: &mut impl Rng) -> usize {
    let mut best = rng.random_range(0..scores.len());
    for _ in 1..size {
        let c = rng.random_range(0..scores.len());
        if scores[c] > scores[best] {
            best = c;
        }
    }
    best
}

/// Offline allocation for the non-learned methods.
pub fn allocate(method: Method, scenario: &Scenario, seed: u64, ga: &GaConfig) -> Result<Assignment> {
    match method {
        Method::Rnd => rnd_allocate(scenario, seed),
        Method::Ga => ga_allocate(scenario, &GaConfig { seed, ..ga.clone() }),
        Method::Greedy => greedy_allocate(scenario),
        other => Err(Error::Contract(format!("{other} is a learned method"))),
    }
}

/// Scenario and agent layout used by a learned method.
pub fn learned_setup(method: Method, scenario: &Scenario) -> Result<(Scenario, AgentMode)> {
    let mut sc = scenario.clone();
    let mode = match method {
        Method::Couav => AgentMode::Distributed,
        Method::NoSharing => {
            sc.learn.sharing = false;
            AgentMode::Distributed
        }
        Method::Centralized => AgentMode::Centralized,
        other => return Err(Error::Contract(format!("{other} is not a learned method"))),
    };
    Ok((sc, mode))
}

/// A trained learned method together with its environment.
pub struct Trained {
    pub env: Env,
    pub learner: Learner,
    pub history: Vec<EpisodeStats>,
}

/// Trains `method` for `episodes` episodes.
pub fn train_learned(method: Method, scenario: &Scenario, episodes: usize, seed: u64) -> Result<Trained> {
    let (sc, mode) = learned_setup(method, scenario)?;
    let mut env = Env::new(&sc, mode)?;
    let mut learner = Learner::new(&env, &sc.learn, seed)?;
    let mut history = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        env.reset(seed.wrapping_mul(1_000_003).wrapping_add(episode as u64));
        history.push(learner.train_episode(&mut env)?);
    }
    Ok(Trained { env, learner, history })
}

/// Single agent controlling every UAV with ground-truth observations.
pub fn centralized_agent(scenario: &Scenario, episodes: usize, seed: u64) -> Result<Trained> {
    train_learned(Method::Centralized, scenario, episodes, seed)
}

/// Distributed agents with proximity exchange and periodic sync disabled.
pub fn no_sharing_ablation(scenario: &Scenario, episodes: usize, seed: u64) -> Result<Trained> {
    train_learned(Method::NoSharing, scenario, episodes, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::routing::solve_exact;
    use crate::scenario::{generate_scenario, ScenarioConfig};

    fn small(tasks: usize, seed: u64) -> Scenario {
        let mut cfg = ScenarioConfig::desk();
        cfg.tasks = tasks as i64;
        cfg.uavs = 2;
        generate_scenario(&cfg, seed).unwrap()
    }

    fn obj(sc: &Scenario, a: &Assignment) -> f64 {
        CostModel::new(sc).unwrap().objective(a).unwrap()
    }

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!(matches!("dqn".parse::<Method>(), Err(Error::UnknownMethod(_))));
    }

    #[test]
    fn zero_tasks_give_empty_assignments() {
        let sc = small(0, 1);
        for a in [rnd_allocate(&sc, 1).unwrap(), greedy_allocate(&sc).unwrap(), ga_allocate(&sc, &GaConfig::default()).unwrap()] {
            assert!(a.routes.is_empty() && a.unassigned.is_empty());
        }
    }

    #[test]
    fn outputs_are_feasible() {
        for seed in 0..5 {
            let sc = small(12, seed);
            let model = CostModel::new(&sc).unwrap();
            let cfg = GaConfig { generations: 30, seed, ..GaConfig::default() };
            for a in [rnd_allocate(&sc, seed).unwrap(), greedy_allocate(&sc).unwrap(), ga_allocate(&sc, &cfg).unwrap()] {
                assert!(model.check(&a).unwrap().is_feasible());
            }
        }
    }

    #[test]
    fn greedy_single_task_and_determinism() {
        let sc = small(1, 4);
        let a = greedy_allocate(&sc).unwrap();
        assert_eq!(a.assigned_tasks().count(), 1);
        let sc = small(10, 2);
        assert_eq!(greedy_allocate(&sc).unwrap(), greedy_allocate(&sc).unwrap());
    }

    #[test]
    fn ga_clones_without_mutation_return_the_clone() {
        let sc = small(6, 3);
        let clone: Genome = vec![1, 0, 2, 1, 0, 2];
        let cfg = GaConfig { mutation_rate: 0.0, generations: 20, ..GaConfig::default() };
        let out = ga_run(&sc, &cfg, Some(vec![clone.clone(); cfg.population])).unwrap();
        assert_eq!(out.best_genome, clone);
        assert!(cfg.validate().is_ok());
        assert!(GaConfig { population: 1, ..GaConfig::default() }.validate().is_err());
        assert!(GaConfig { mutation_rate: 1.5, ..GaConfig::default() }.validate().is_err());
    }

    #[test]
    fn ga_best_is_monotone() {
        let sc = small(15, 6);
        let out = ga_run(&sc, &GaConfig { generations: 60, ..GaConfig::default() }, None).unwrap();
        assert!(out.history.windows(2).all(|w| w[1] >= w[0]));
        let model = CostModel::new(&sc).unwrap();
        assert!((model.objective(&out.assignment).unwrap() - out.best_fitness).abs() < 1e-9);
    }

    #[test]
    fn ordering_against_exact_on_small_instances() {
        let mut exact = Vec::new();
        let mut ga = Vec::new();
        let mut greedy = Vec::new();
        let mut rnd = Vec::new();
        let mut ratio = Vec::new();
        for seed in 0..10 {
            let sc = small(6, 100 + seed);
            let e = obj(&sc, &solve_exact(&sc, 6).unwrap());
            let g = obj(&sc, &ga_allocate(&sc, &GaConfig { seed, ..GaConfig::default() }).unwrap());
            let gr = obj(&sc, &greedy_allocate(&sc).unwrap());
            let r = obj(&sc, &rnd_allocate(&sc, seed).unwrap());
            assert!(e >= g - 1e-9 && e >= gr - 1e-9 && e >= r - 1e-9);
            ratio.push(g / e);
            exact.push(e);
            ga.push(g);
            greedy.push(gr);
            rnd.push(r);
        }
        assert!(median(ratio) >= 0.95);
        assert!(median(ga.clone()) >= median(rnd.clone()));
        assert!(median(greedy) >= median(rnd));
    }

    #[test]
    fn rnd_is_worse_than_ga_by_sign_test() {
        let sc = small(20, 77);
        let g = obj(&sc, &ga_allocate(&sc, &GaConfig { generations: 100, ..GaConfig::default() }).unwrap());
        let below = (0..100).filter(|&s| obj(&sc, &rnd_allocate(&sc, s).unwrap()) < g).count();
        // one-sided sign test at 5%: at least 59 of 100
        assert!(below >= 59, "{below}");
    }
}
