//! The multi-agent decision process.
//!
//! Agents act every `decision_epoch_s` of world time. Between decisions the
//! environment runs a small discrete-event simulation: legs are billed to the
//! flight battery when a UAV departs, collection energy and processing when a
//! UAV reaches a task, and the earliest arrival at a task collects it. Later
//! arrivals earn nothing and have wasted the trip.
//!
//! Each UAV's action space is `[Noop, Return, candidate_0 .. candidate_{k-1}]`.
//! Candidates are the `k` nearest tasks that the acting agent believes are
//! free and that keep the UAV's whole remaining route feasible, so every
//! unmasked action is safe to take.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::coordination::{
    dedupe_on_refresh, decay_estimate, periodic_sync, proximity_exchange, refresh_own, truth_entry, Release,
    ShareEvent, StationBeliefs,
};
use crate::error::{Error, Result};
use crate::geom::Point3;
use crate::routing::{Anchor, CostModel, RouteStart};
use crate::scenario::{LearnParams, Scenario, StationId, TaskClass, TaskId, TaskStatus, UavId};

pub const NOOP: usize = 0;
pub const RETURN: usize = 1;
/// Index of the first candidate slot in a UAV's action vector.
pub const FIRST_CANDIDATE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    AtStation,
    Transit,
    Collecting,
    Returning,
    Landed,
}

impl Phase {
    pub const ALL: [Phase; 5] = [Phase::AtStation, Phase::Transit, Phase::Collecting, Phase::Returning, Phase::Landed];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Leg {
    pub from: Point3,
    pub to: Point3,
    pub start_s: f64,
    pub end_s: f64,
    pub energy_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UavState {
    pub id: UavId,
    pub station: StationId,
    pub position: Point3,
    pub flight_capacity_j: f64,
    pub flight_battery_j: f64,
    pub process_battery_j: f64,
    pub storage_free_bytes: f64,
    pub flops_left: f64,
    pub phase: Phase,
    /// Task being flown to (leg paid) or being collected.
    pub target: Option<TaskId>,
    /// Queued stops after the target.
    pub pending: Vec<TaskId>,
    pub leg: Option<Leg>,
    /// Time the current leg or collection ends.
    pub busy_until_s: f64,
    pub processing_free_s: f64,
    /// Queued processing: (finish time, task, fraction).
    pub processing: Vec<(f64, TaskId, f64)>,
    pub collected: Vec<TaskId>,
    pub return_requested: bool,
    pub launched_at_s: Option<f64>,
    pub landed_at_s: Option<f64>,
}

impl UavState {
    pub fn accepts_tasks(&self) -> bool {
        matches!(self.phase, Phase::AtStation | Phase::Transit | Phase::Collecting) && !self.return_requested
    }

    pub fn is_airborne(&self) -> bool {
        matches!(self.phase, Phase::Transit | Phase::Collecting | Phase::Returning)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub time_step: u64,
    pub uavs: Vec<UavState>,
    pub tasks: Vec<crate::scenario::Task>,
    pub stations: Vec<StationBeliefs>,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentMode {
    /// One agent per station with its own beliefs.
    Distributed,
    /// A single agent controlling every UAV with ground-truth knowledge.
    Centralized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentAction {
    /// One action index per UAV the agent controls, in [`Env::agent_uavs`] order.
    pub per_uav_choice: Vec<usize>,
}

/// A candidate task offered to a UAV, with its insertion point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub task: TaskId,
    pub insert_at: usize,
    pub added_length_m: f64,
}

/// One task's contribution to the reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub priority: u32,
    /// Fraction processed onboard.
    pub cr: f64,
    pub e_process_j: f64,
}

/// Sum over progressed tasks of `C_t (mu (e^{omega CR} - 1) / 3 Pr - eps E) Phi`.
pub fn reward_fn(progressed: &[Progress], collection_rate: f64, learn: &LearnParams) -> f64 {
    progressed
        .iter()
        .map(|p| {
            collection_rate
                * (learn.reward_mu * ((learn.reward_omega * p.cr).exp() - 1.0) / 3.0 * p.priority as f64
                    - learn.reward_epsilon * p.e_process_j)
                * learn.reward_phi
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Assign { uav: UavId, task: TaskId, index: usize },
    ReturnOrder { uav: UavId },
    Launch { uav: UavId, time_s: f64 },
    Leg { uav: UavId, to_task: Option<TaskId>, energy_j: f64, time_s: f64 },
    LegRefund { uav: UavId, energy_j: f64, time_s: f64 },
    Collect {
        uav: UavId,
        task: TaskId,
        time_s: f64,
        task_energy_j: f64,
        beta: f64,
        process_energy_j: f64,
        residual_bytes: f64,
        flops: f64,
        priority: u32,
        /// Ground-truth collection rate including this task.
        collection_rate: f64,
        /// Reward of this collection under the ground-truth rate.
        reward: f64,
    },
    Duplicate { uav: UavId, task: TaskId, time_s: f64, first_collector: UavId },
    Processed { uav: UavId, task: TaskId, beta: f64, time_s: f64 },
    Land { uav: UavId, time_s: f64 },
    Share { share: ShareEvent },
    Release { release: Release },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UavDigest {
    pub position: Point3,
    pub flight_battery_j: f64,
    pub process_battery_j: f64,
    pub storage_free_bytes: f64,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub time_s: f64,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<f64>,
    pub events: Vec<Event>,
    pub uavs: Vec<UavDigest>,
    /// Tasks queued by UAVs of two or more stations (excluding tasks that
    /// several UAVs are already committed to).
    pub duplicate_planned: usize,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub seed: u64,
    pub n_tasks: usize,
    pub n_uavs: usize,
    pub n_stations: usize,
    pub mode: AgentMode,
    pub sharing: bool,
    pub flight_capacity_j: Vec<f64>,
    pub process_capacity_j: Vec<f64>,
    pub storage_bytes: Vec<f64>,
    pub scenario: Scenario,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Header(Box<LogHeader>),
    Step(StepRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub rewards: Vec<f64>,
    pub done: bool,
    pub record: StepRecord,
}

pub struct Env {
    model: CostModel,
    mode: AgentMode,
    sharing: bool,
    agents: Vec<Vec<UavId>>,
    state: EnvState,
    candidates: Vec<Vec<Candidate>>,
    seed: u64,
    pending_events: Vec<Event>,
    value_norm: f64,
    size_norm: f64,
}

impl Env {
    pub fn new(scenario: &Scenario, mode: AgentMode) -> Result<Self> {
        scenario.validate()?;
        let model = CostModel::new(scenario)?;
        let agents = match mode {
            AgentMode::Distributed => (0..scenario.n_stations()).map(|s| scenario.uavs_of(StationId(s))).collect(),
            AgentMode::Centralized => vec![(0..scenario.uavs.len()).map(UavId).collect()],
        };
        let value_norm = model.values.iter().cloned().fold(1e-12, f64::max);
        let size_norm = scenario.tasks.iter().map(|t| t.data_size_bytes).fold(1.0, f64::max);
        let mut env = Self {
            model,
            mode,
            sharing: scenario.learn.sharing,
            agents,
            state: EnvState { time_step: 0, uavs: Vec::new(), tasks: Vec::new(), stations: Vec::new(), done: false },
            candidates: Vec::new(),
            seed: scenario.seed,
            pending_events: Vec::new(),
            value_norm,
            size_norm,
        };
        env.reset(scenario.seed);
        Ok(env)
    }

    pub fn scenario(&self) -> &Scenario {
        self.model.scenario()
    }

    pub fn model(&self) -> &CostModel {
        &self.model
    }

    pub fn mode(&self) -> AgentMode {
        self.mode
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn agent_uavs(&self, agent: usize) -> &[UavId] {
        &self.agents[agent]
    }

    pub fn actions_per_uav(&self) -> usize {
        FIRST_CANDIDATE + self.scenario().sim.candidates_k
    }

    pub fn candidates(&self, uav: UavId) -> &[Candidate] {
        &self.candidates[uav.0]
    }

    /// Restores the initial state. The environment itself is deterministic;
    /// the seed is recorded in the trajectory header.
    pub fn reset(&mut self, seed: u64) -> &EnvState {
        self.seed = seed;
        let sc = self.model.scenario();
        let uavs: Vec<UavState> = sc
            .uavs
            .iter()
            .enumerate()
            .map(|(i, spec)| UavState {
                id: UavId(i),
                station: spec.home_station,
                position: sc.station_position(spec.home_station),
                flight_capacity_j: spec.battery_flight_j,
                flight_battery_j: spec.battery_flight_j,
                process_battery_j: spec.battery_process_j,
                storage_free_bytes: spec.storage_bytes,
                flops_left: self.model.flop_budget[i],
                phase: Phase::AtStation,
                target: None,
                pending: Vec::new(),
                leg: None,
                busy_until_s: 0.0,
                processing_free_s: 0.0,
                processing: Vec::new(),
                collected: Vec::new(),
                return_requested: false,
                launched_at_s: None,
                landed_at_s: None,
            })
            .collect();
        let mut tasks = sc.tasks.clone();
        for t in &mut tasks {
            t.status = TaskStatus::Unassigned;
        }
        let n_stations = sc.n_stations();
        self.state = EnvState { time_step: 0, uavs, tasks, stations: Vec::new(), done: false };
        let truth: Vec<_> = (0..n_stations).map(|s| truth_entry(&self.state, StationId(s), 0)).collect();
        self.state.stations = (0..n_stations)
            .map(|s| StationBeliefs { owner: StationId(s), entries: truth.clone(), discovered: BTreeSet::new() })
            .collect();
        self.pending_events.clear();
        self.refresh_candidates();
        &self.state
    }

    /// Injects precomputed routes (offline allocators). Routes must be
    /// feasible from a full battery; they are flown verbatim.
    pub fn load_plans(&mut self, plans: &BTreeMap<UavId, Vec<TaskId>>) -> Result<()> {
        if self.state.time_step != 0 {
            return Err(Error::Contract("plans can only be loaded right after reset".into()));
        }
        for (&uav, stops) in plans {
            if uav.0 >= self.state.uavs.len() {
                return Err(Error::Structural(format!("unknown {uav}")));
            }
            if !self.model.route_feasible(uav, stops) {
                return Err(Error::Contract(format!("route for {uav} is infeasible")));
            }
            for (index, &task) in stops.iter().enumerate() {
                self.pending_events.push(Event::Assign { uav, task, index });
                self.state.tasks[task.0].status = TaskStatus::Assigned { uav };
            }
            self.state.uavs[uav.0].pending = stops.clone();
        }
        refresh_own(&mut self.state, 0);
        self.refresh_candidates();
        Ok(())
    }

    pub fn header(&self) -> LogHeader {
        let sc = self.scenario();
        LogHeader {
            seed: self.seed,
            n_tasks: sc.tasks.len(),
            n_uavs: sc.uavs.len(),
            n_stations: sc.n_stations(),
            mode: self.mode,
            sharing: self.sharing,
            flight_capacity_j: sc.uavs.iter().map(|u| u.battery_flight_j).collect(),
            process_capacity_j: sc.uavs.iter().map(|u| u.battery_process_j).collect(),
            storage_bytes: sc.uavs.iter().map(|u| u.storage_bytes).collect(),
            scenario: sc.clone(),
        }
    }

    fn station_of_agent(&self, agent: usize) -> Option<StationId> {
        match self.mode {
            AgentMode::Distributed => Some(StationId(agent)),
            AgentMode::Centralized => None,
        }
    }

    fn agent_of_uav(&self, uav: UavId) -> usize {
        match self.mode {
            AgentMode::Distributed => self.state.uavs[uav.0].station.0,
            AgentMode::Centralized => 0,
        }
    }

    /// Budgets from which the UAV's remaining route is planned, or `None`
    /// if it takes no more tasks.
    pub fn route_start(&self, uav: UavId) -> Option<RouteStart> {
        let u = &self.state.uavs[uav.0];
        if !u.accepts_tasks() {
            return None;
        }
        let anchor = match (u.phase, u.target) {
            (Phase::AtStation, _) => Anchor::Station,
            (Phase::Transit, Some(id)) => Anchor::Task { id, due: true },
            (Phase::Collecting, Some(id)) => Anchor::Task { id, due: false },
            _ => return None,
        };
        Some(RouteStart {
            anchor,
            flight_left_j: u.flight_battery_j,
            process_left_j: u.process_battery_j,
            storage_free_bytes: u.storage_free_bytes,
            flops_left: u.flops_left,
        })
    }

    /// Tasks the controlling agent regards as taken (collected or planned).
    fn taken_for(&self, uav: UavId) -> BTreeSet<TaskId> {
        match self.mode {
            AgentMode::Centralized => {
                let mut out = BTreeSet::new();
                for u in &self.state.uavs {
                    out.extend(u.target.iter().copied());
                    out.extend(u.pending.iter().copied());
                }
                for t in &self.state.tasks {
                    if t.status.is_collected() {
                        out.insert(t.id);
                    }
                }
                out
            }
            AgentMode::Distributed => {
                let s = self.state.uavs[uav.0].station;
                let beliefs = &self.state.stations[s.0];
                let mut out = beliefs.known_collected();
                out.extend(beliefs.peer_planned());
                for u in self.state.uavs.iter().filter(|u| u.station == s) {
                    out.extend(u.target.iter().copied());
                    out.extend(u.pending.iter().copied());
                    out.extend(u.collected.iter().copied());
                }
                out
            }
        }
    }

    fn refresh_candidates(&mut self) {
        let k = self.scenario().sim.candidates_k;
        let mut all = Vec::with_capacity(self.state.uavs.len());
        for ui in 0..self.state.uavs.len() {
            let uav = UavId(ui);
            let Some(start) = self.route_start(uav) else {
                all.push(Vec::new());
                continue;
            };
            let taken = self.taken_for(uav);
            let u = &self.state.uavs[ui];
            let here = u.position;
            let anchor_task = match start.anchor {
                Anchor::Task { id, .. } => Some(id),
                Anchor::Station => None,
            };
            let mut options: Vec<(f64, Candidate)> = Vec::new();
            let mut stops = u.pending.clone();
            for task in &self.state.tasks {
                if taken.contains(&task.id) {
                    continue;
                }
                let (insert_at, added) = self.model.cheapest_insertion(uav, anchor_task, &u.pending, task.id);
                stops.insert(insert_at, task.id);
                let ok = self.model.simulate(uav, &start, &stops).feasible();
                stops.remove(insert_at);
                if ok {
                    let d = here.horizontal_distance(&task.position);
                    options.push((d, Candidate { task: task.id, insert_at, added_length_m: added }));
                }
            }
            options.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.task.cmp(&b.1.task)));
            all.push(options.into_iter().take(k).map(|(_, c)| c).collect());
        }
        self.candidates = all;
    }

    /// Per-UAV action masks for `agent`, in [`Env::agent_uavs`] order.
    pub fn action_mask(&self, agent: usize) -> Result<Vec<Vec<bool>>> {
        let uavs = self.agents.get(agent).ok_or_else(|| Error::Contract(format!("unknown agent {agent}")))?;
        let a = self.actions_per_uav();
        Ok(uavs
            .iter()
            .map(|&uav| {
                let u = &self.state.uavs[uav.0];
                let mut m = vec![false; a];
                m[NOOP] = true;
                m[RETURN] = u.accepts_tasks() && u.phase != Phase::AtStation;
                if !self.state.done {
                    for j in 0..self.candidates[uav.0].len() {
                        m[FIRST_CANDIDATE + j] = true;
                    }
                }
                m
            })
            .collect())
    }

    pub fn observation_dim(&self, agent: usize) -> usize {
        match self.station_of_agent(agent) {
            Some(s) => self.station_dim(s),
            None => (0..self.scenario().n_stations()).map(|s| self.station_dim(StationId(s))).sum(),
        }
    }

    fn station_dim(&self, s: StationId) -> usize {
        let k = self.scenario().sim.candidates_k;
        let sc = self.scenario();
        let own = sc.uavs_of(s).len();
        let peers: usize = (0..sc.n_stations())
            .filter(|&p| p != s.0)
            .map(|p| 3 + 4 * sc.uavs_of(StationId(p)).len())
            .sum();
        3 + own * (6 + Phase::ALL.len() + 9 * k) + peers
    }

    /// Observation of `agent`, every feature in [-1, 1]. Distributed agents
    /// see their own UAVs exactly and peers through decayed beliefs; the
    /// centralized agent sees every station's features built from truth.
    pub fn observe(&self, agent: usize) -> Result<Vec<f64>> {
        if agent >= self.agents.len() {
            return Err(Error::Contract(format!("unknown agent {agent}")));
        }
        match self.station_of_agent(agent) {
            Some(s) => self.station_features(s, false),
            None => {
                let mut out = Vec::new();
                for s in 0..self.scenario().n_stations() {
                    out.extend(self.station_features(StationId(s), true)?);
                }
                Ok(out)
            }
        }
    }

    fn station_features(&self, s: StationId, truth: bool) -> Result<Vec<f64>> {
        let sc = self.scenario();
        let side = sc.region.side_length_m;
        let n_tasks = sc.tasks.len().max(1) as f64;
        let k = sc.sim.candidates_k;
        let t = self.state.time_step;
        let lambda = sc.learn.lambda_decay;
        let scale = |v: f64| (2.0 * v / side - 1.0).clamp(-1.0, 1.0);
        let unit = |v: f64| v.clamp(-1.0, 1.0);
        let beliefs = &self.state.stations[s.0];

        let known = if truth {
            self.state.tasks.iter().filter(|t| t.status.is_collected()).count()
        } else {
            beliefs.known_collected().len()
        };
        let own_collected: usize = self.state.uavs.iter().filter(|u| u.station == s).map(|u| u.collected.len()).sum();
        let mut f = vec![
            t as f64 / sc.sim.horizon_steps.max(1) as f64,
            known as f64 / n_tasks,
            own_collected as f64 / n_tasks,
        ];
        for uav in sc.uavs_of(s) {
            let u = &self.state.uavs[uav.0];
            let spec = &sc.uavs[uav.0];
            f.push(u.flight_battery_j / spec.battery_flight_j);
            f.push(u.process_battery_j / spec.battery_process_j);
            f.push(u.storage_free_bytes / spec.storage_bytes);
            f.push(scale(u.position.x));
            f.push(scale(u.position.y));
            f.push(unit(u.pending.len() as f64 / k.max(1) as f64));
            for p in Phase::ALL {
                f.push(if u.phase == p { 1.0 } else { 0.0 });
            }
            let cands = &self.candidates[uav.0];
            for j in 0..k {
                match cands.get(j) {
                    Some(c) => {
                        let task = &self.state.tasks[c.task.0];
                        f.push(1.0);
                        f.push(unit((task.position.x - u.position.x) / side));
                        f.push(unit((task.position.y - u.position.y) / side));
                        for class in TaskClass::ALL {
                            f.push(if task.class == class { 1.0 } else { 0.0 });
                        }
                        f.push(task.data_size_bytes / self.size_norm);
                        f.push(self.model.values[c.task.0] / self.value_norm);
                        f.push(unit(c.added_length_m / (2.0 * side)));
                    }
                    None => f.extend(std::iter::repeat_n(0.0, 9)),
                }
            }
        }
        for p in 0..sc.n_stations() {
            if p == s.0 {
                continue;
            }
            let (entry, age) = if truth {
                (truth_entry(&self.state, StationId(p), t), 0)
            } else {
                let e = beliefs.entries[p].clone();
                let age = t.checked_sub(e.last_update_step).ok_or(Error::Clock { now: t, last: e.last_update_step })?;
                (e, age)
            };
            f.push(unit(entry.planned.len() as f64 / n_tasks));
            f.push(unit(entry.collected.len() as f64 / n_tasks));
            f.push((-lambda * age as f64).exp());
            for summary in &entry.uavs {
                let last = entry.last_update_step;
                let now = if truth { last } else { t };
                f.push(decay_estimate(summary.battery_frac, last, now, lambda)?);
                f.push(decay_estimate(summary.availability, last, now, lambda)?);
                f.push(scale(summary.position.x));
                f.push(scale(summary.position.y));
            }
        }
        debug_assert_eq!(f.len(), self.station_dim(s));
        Ok(f)
    }

    /// Applies one decision per agent and advances one epoch.
    pub fn step(&mut self, actions: &[AgentAction]) -> Result<StepOutcome> {
        if self.state.done {
            return Err(Error::Contract("step called on a finished episode".into()));
        }
        if actions.len() != self.agents.len() {
            return Err(Error::Contract(format!("expected {} agent actions, got {}", self.agents.len(), actions.len())));
        }
        let mut events = std::mem::take(&mut self.pending_events);
        let epoch = self.scenario().sim.decision_epoch_s;
        let t_start = self.state.time_step as f64 * epoch;
        let t_end = t_start + epoch;

        // validate every action before mutating anything
        for (agent, action) in actions.iter().enumerate() {
            let mask = self.action_mask(agent)?;
            if action.per_uav_choice.len() != mask.len() {
                return Err(Error::Contract(format!("agent {agent} must choose for {} UAVs", mask.len())));
            }
            for (i, &c) in action.per_uav_choice.iter().enumerate() {
                if !mask[i].get(c).copied().unwrap_or(false) {
                    return Err(Error::Contract(format!(
                        "agent {agent} chose masked action {c} for {}",
                        self.agents[agent][i]
                    )));
                }
            }
        }
        for (agent, action) in actions.iter().enumerate() {
            let uavs = self.agents[agent].clone();
            let mut chosen: BTreeSet<TaskId> = BTreeSet::new();
            for (i, &c) in action.per_uav_choice.iter().enumerate() {
                let uav = uavs[i];
                if c == RETURN {
                    let u = &mut self.state.uavs[uav.0];
                    u.pending.clear();
                    u.return_requested = true;
                    events.push(Event::ReturnOrder { uav });
                } else if c >= FIRST_CANDIDATE {
                    let cand = self.candidates[uav.0][c - FIRST_CANDIDATE];
                    // a sibling already took this task in the same decision
                    if !chosen.insert(cand.task) {
                        continue;
                    }
                    self.state.uavs[uav.0].pending.insert(cand.insert_at, cand.task);
                    if !self.state.tasks[cand.task.0].status.is_collected() {
                        self.state.tasks[cand.task.0].status = TaskStatus::Assigned { uav };
                    }
                    events.push(Event::Assign { uav, task: cand.task, index: cand.insert_at });
                }
            }
        }

        // launches
        for ui in 0..self.state.uavs.len() {
            let u = &self.state.uavs[ui];
            if u.phase == Phase::AtStation && !u.pending.is_empty() {
                self.state.uavs[ui].launched_at_s = Some(t_start);
                events.push(Event::Launch { uav: UavId(ui), time_s: t_start });
                self.depart(ui, t_start, &mut events);
            }
        }

        let mut progress: Vec<Vec<Progress>> = vec![Vec::new(); self.agents.len()];
        self.run_until(t_end, &mut events, &mut progress)?;
        self.state.time_step += 1;
        let step = self.state.time_step;

        let horizon = step >= self.scenario().sim.horizon_steps;
        if horizon {
            self.force_return(t_end, &mut events);
        }

        refresh_own(&mut self.state, step);
        match self.mode {
            AgentMode::Centralized => {
                periodic_sync(&mut self.state, step, 1);
            }
            AgentMode::Distributed if self.sharing => {
                let learn = &self.scenario().learn;
                let (d, t0) = (learn.d_threshold_m, learn.t0_sync);
                let (share_events, mut pairs) = proximity_exchange(&mut self.state, d, step);
                events.extend(share_events.into_iter().map(|share| Event::Share { share }));
                if let Some(share) = periodic_sync(&mut self.state, step, t0) {
                    events.push(Event::Share { share });
                    let n = self.state.stations.len();
                    pairs = (0..n)
                        .flat_map(|a| (a + 1..n).map(move |b| (StationId(a), StationId(b))))
                        .collect();
                }
                if !pairs.is_empty() {
                    let released = dedupe_on_refresh(&mut self.state, &self.model, &pairs);
                    for r in released {
                        if !r.collected && self.state.tasks[r.task.0].status == (TaskStatus::Assigned { uav: r.uav }) {
                            self.state.tasks[r.task.0].status = TaskStatus::Unassigned;
                        }
                        events.push(Event::Release { release: r });
                    }
                    refresh_own(&mut self.state, step);
                }
            }
            AgentMode::Distributed => {}
        }

        self.refresh_candidates();
        let idle = self.state.uavs.iter().all(|u| matches!(u.phase, Phase::AtStation | Phase::Landed));
        let no_options = self.candidates.iter().all(|c| c.is_empty());
        let done = horizon || (idle && no_options);
        if done {
            self.finish(&mut events);
        }
        self.state.done = done;

        let rewards = self.rewards(&progress);
        self.check_invariants()?;
        let record = StepRecord {
            step,
            time_s: t_end,
            actions: actions.iter().map(|a| a.per_uav_choice.clone()).collect(),
            rewards: rewards.clone(),
            events,
            uavs: self
                .state
                .uavs
                .iter()
                .map(|u| UavDigest {
                    position: u.position,
                    flight_battery_j: u.flight_battery_j,
                    process_battery_j: u.process_battery_j,
                    storage_free_bytes: u.storage_free_bytes,
                    phase: u.phase,
                })
                .collect(),
            duplicate_planned: self.duplicate_planned(),
            done,
        };
        Ok(StepOutcome { rewards, done, record })
    }

    fn rewards(&self, progress: &[Vec<Progress>]) -> Vec<f64> {
        let learn = &self.scenario().learn;
        let n_tasks = self.state.tasks.len().max(1) as f64;
        let true_rate = self.state.tasks.iter().filter(|t| t.status.is_collected()).count() as f64 / n_tasks;
        if learn.shared_reward || self.mode == AgentMode::Centralized {
            let all: Vec<Progress> = progress.iter().flatten().copied().collect();
            let r = reward_fn(&all, true_rate, learn);
            return vec![r; self.agents.len()];
        }
        (0..self.agents.len())
            .map(|a| {
                let rate = self.state.stations[a].known_collected().len() as f64 / n_tasks;
                reward_fn(&progress[a], rate, learn)
            })
            .collect()
    }

    /// Tasks queued by UAVs of two or more stations, ignoring tasks that
    /// every claimant is already flying to.
    pub fn duplicate_planned(&self) -> usize {
        let mut claims: BTreeMap<TaskId, Vec<(StationId, bool)>> = BTreeMap::new();
        for u in &self.state.uavs {
            if let Some(t) = u.target {
                claims.entry(t).or_default().push((u.station, true));
            }
            for &t in &u.pending {
                claims.entry(t).or_default().push((u.station, false));
            }
        }
        claims
            .values()
            .filter(|c| {
                let stations: BTreeSet<StationId> = c.iter().map(|x| x.0).collect();
                stations.len() > 1 && c.iter().any(|x| !x.1)
            })
            .count()
    }

    fn depart(&mut self, ui: usize, now: f64, events: &mut Vec<Event>) {
        let uav = UavId(ui);
        let from = self.state.uavs[ui].position;
        let next = {
            let u = &mut self.state.uavs[ui];
            if u.return_requested || u.pending.is_empty() {
                None
            } else {
                Some(u.pending.remove(0))
            }
        };
        let to = match next {
            Some(t) => self.model.waypoint(uav, t),
            None => self.model.home_point(uav),
        };
        let energy = self.model.leg_energy(uav, &from, &to);
        let duration = self.model.leg_time(uav, &from, &to);
        let u = &mut self.state.uavs[ui];
        u.flight_battery_j -= energy;
        u.leg = Some(Leg { from, to, start_s: now, end_s: now + duration, energy_j: energy });
        u.busy_until_s = now + duration;
        u.target = next;
        u.phase = if next.is_some() { Phase::Transit } else { Phase::Returning };
        events.push(Event::Leg { uav, to_task: next, energy_j: energy, time_s: now });
    }

    fn run_until(&mut self, t_end: f64, events: &mut Vec<Event>, progress: &mut [Vec<Progress>]) -> Result<()> {
        loop {
            let next = self
                .state
                .uavs
                .iter()
                .enumerate()
                .filter(|(_, u)| u.is_airborne() && u.busy_until_s <= t_end)
                .min_by(|a, b| a.1.busy_until_s.total_cmp(&b.1.busy_until_s).then(a.0.cmp(&b.0)))
                .map(|(i, _)| i);
            let Some(ui) = next else { break };
            let now = self.state.uavs[ui].busy_until_s;
            match self.state.uavs[ui].phase {
                Phase::Transit => self.arrive(ui, now, events, progress),
                Phase::Collecting => self.depart(ui, now, events),
                Phase::Returning => {
                    let u = &mut self.state.uavs[ui];
                    u.position = self.model.home_point(UavId(ui));
                    u.phase = Phase::Landed;
                    u.leg = None;
                    u.landed_at_s = Some(now);
                    events.push(Event::Land { uav: UavId(ui), time_s: now });
                }
                Phase::AtStation | Phase::Landed => unreachable!("grounded UAVs have no events"),
            }
        }
        // positions of UAVs still in flight, processing completions
        for ui in 0..self.state.uavs.len() {
            let u = &mut self.state.uavs[ui];
            if let (Some(leg), Phase::Transit | Phase::Returning) = (u.leg, u.phase) {
                let frac = ((t_end - leg.start_s) / (leg.end_s - leg.start_s)).clamp(0.0, 1.0);
                u.position = leg.from.lerp(&leg.to, frac);
            }
        }
        self.complete_processing(Some(t_end), events);
        Ok(())
    }

    fn arrive(&mut self, ui: usize, now: f64, events: &mut Vec<Event>, progress: &mut [Vec<Progress>]) {
        let uav = UavId(ui);
        let task = self.state.uavs[ui].target.expect("transit has a target");
        {
            let u = &mut self.state.uavs[ui];
            u.position = u.leg.map(|l| l.to).unwrap_or(u.position);
            u.leg = None;
        }
        if let Some(first) = self.state.tasks[task.0].status.collector() {
            // someone got here first: nothing to collect
            events.push(Event::Duplicate { uav, task, time_s: now, first_collector: first });
            let s = self.state.uavs[ui].station;
            self.state.stations[s.0].discovered.insert(task);
            self.state.uavs[ui].target = None;
            self.depart(ui, now, events);
            return;
        }
        let mut budgets = RouteStart {
            anchor: Anchor::Station,
            flight_left_j: self.state.uavs[ui].flight_battery_j,
            process_left_j: self.state.uavs[ui].process_battery_j,
            storage_free_bytes: self.state.uavs[ui].storage_free_bytes,
            flops_left: self.state.uavs[ui].flops_left,
        };
        let (task_energy, plan) = self.model.collect(uav, task, &mut budgets);
        let collect_s = self.model.collect_s[ui][task.0];
        let u = &mut self.state.uavs[ui];
        u.flight_battery_j = budgets.flight_left_j;
        u.process_battery_j = budgets.process_left_j;
        u.storage_free_bytes = budgets.storage_free_bytes;
        u.flops_left = budgets.flops_left;
        u.phase = Phase::Collecting;
        u.busy_until_s = now + collect_s;
        u.collected.push(task);
        let start = u.processing_free_s.max(now + collect_s);
        let finish = start + plan.delay_s;
        if plan.beta_onboard > 0.0 {
            u.processing_free_s = finish;
        }
        u.processing.push((finish, task, plan.beta_onboard));
        self.state.tasks[task.0].status = TaskStatus::Collected { uav };

        let n_tasks = self.state.tasks.len() as f64;
        let rate = self.state.tasks.iter().filter(|t| t.status.is_collected()).count() as f64 / n_tasks;
        let p = Progress {
            priority: self.state.tasks[task.0].priority,
            cr: plan.beta_onboard,
            e_process_j: plan.energy_j,
        };
        let agent = self.agent_of_uav(uav);
        progress[agent].push(p);
        events.push(Event::Collect {
            uav,
            task,
            time_s: now,
            task_energy_j: task_energy,
            beta: plan.beta_onboard,
            process_energy_j: plan.energy_j,
            residual_bytes: plan.residual_bytes,
            flops: plan.flops_required,
            priority: p.priority,
            collection_rate: rate,
            reward: reward_fn(&[p], rate, &self.scenario().learn),
        });
    }

    fn complete_processing(&mut self, until: Option<f64>, events: &mut Vec<Event>) {
        for ui in 0..self.state.uavs.len() {
            let mut done = Vec::new();
            self.state.uavs[ui].processing.retain(|&(finish, task, beta)| {
                if until.is_none_or(|t| finish <= t) {
                    done.push((finish, task, beta));
                    false
                } else {
                    true
                }
            });
            for (finish, task, beta) in done {
                let uav = UavId(ui);
                self.state.tasks[task.0].status = if beta >= 1.0 {
                    TaskStatus::Completed { uav }
                } else {
                    TaskStatus::PartiallyProcessed { uav, fraction: beta }
                };
                events.push(Event::Processed { uav, task, beta, time_s: finish });
            }
        }
    }

    /// Horizon reached: every UAV heads home now. A UAV mid-leg turns
    /// around and is refunded the unflown share of the leg.
    fn force_return(&mut self, now: f64, events: &mut Vec<Event>) {
        for ui in 0..self.state.uavs.len() {
            let uav = UavId(ui);
            let phase = self.state.uavs[ui].phase;
            match phase {
                Phase::Transit => {
                    let u = &mut self.state.uavs[ui];
                    let leg = u.leg.expect("transit has a leg");
                    let frac = ((now - leg.start_s) / (leg.end_s - leg.start_s)).clamp(0.0, 1.0);
                    let refund = (1.0 - frac) * leg.energy_j;
                    u.flight_battery_j += refund;
                    u.position = leg.from.lerp(&leg.to, frac);
                    u.pending.clear();
                    u.target = None;
                    u.return_requested = true;
                    events.push(Event::LegRefund { uav, energy_j: refund, time_s: now });
                    self.depart(ui, now, events);
                }
                Phase::Collecting => {
                    let u = &mut self.state.uavs[ui];
                    u.pending.clear();
                    u.return_requested = true;
                    let end = u.busy_until_s;
                    self.depart(ui, end, events);
                }
                _ => {}
            }
            let u = &mut self.state.uavs[ui];
            if u.phase == Phase::Returning {
                let end = u.busy_until_s;
                u.position = self.model.home_point(uav);
                u.phase = Phase::Landed;
                u.leg = None;
                u.landed_at_s = Some(end);
                events.push(Event::Land { uav, time_s: end });
            }
        }
    }

    fn finish(&mut self, events: &mut Vec<Event>) {
        self.complete_processing(None, events);
    }

    fn check_invariants(&self) -> Result<()> {
        for u in &self.state.uavs {
            if u.flight_battery_j < 0.0 || u.process_battery_j < 0.0 || u.storage_free_bytes < 0.0 {
                return Err(Error::Contract(format!(
                    "{} budget went negative: flight {} J, process {} J, storage {} B",
                    u.id, u.flight_battery_j, u.process_battery_j, u.storage_free_bytes
                )));
            }
        }
        Ok(())
    }
}
