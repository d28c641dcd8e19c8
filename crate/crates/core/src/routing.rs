//! Route objects for the selective multi-depot multi-salesman formulation:
//! the load-aware curved metric, feasibility checking, the objective and an
//! exhaustive solver for small instances.
//!
//! All route evaluation goes through [`CostModel::simulate`], which debits
//! batteries in the same order and with the same operations as the
//! environment does, so a route that is feasible here can be flown without
//! any battery going negative.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Once;

use serde::{Deserialize, Serialize};

use crate::channel::rate_u2g;
use crate::compute::{mission_flop_budget, plan_processing, ProcessingPlan};
use crate::error::{Error, Result};
use crate::geom::Point3;
use crate::physics::{collection_duration, leg_duration, leg_flight_energy, task_energy, PowerProfile};
use crate::scenario::{task_value, Scenario, StationId, Task, TaskClass, TaskId, UavId};

/// Largest bend angle used by the curved metric, just below pi.
pub const THETA_CAP: f64 = 3.0;

static THETA_WARNING: Once = Once::new();

/// Bend angle for travelling from a task with load `load_from` (FLOPs x
/// bytes) to one with load `load_to`.
pub fn curve_angle(load_from: f64, load_to: f64) -> Result<f64> {
    if !(load_from > 0.0 && load_to > 0.0) {
        return Err(Error::Domain(format!(
            "curved metric needs positive loads, got {load_from} and {load_to}"
        )));
    }
    let theta = ((load_from / load_to).ln() - 1.0).max(0.0);
    if theta > THETA_CAP {
        THETA_WARNING.call_once(|| {
            log::warn!("curve angle {theta:.3} clamped to {THETA_CAP}; task loads differ by more than e^4");
        });
        return Ok(THETA_CAP);
    }
    Ok(theta)
}

/// Arc length over chord length for bend angle `theta`.
pub fn arc_factor(theta: f64) -> f64 {
    if theta == 0.0 {
        1.0
    } else {
        theta / (2.0 * (theta / 2.0).sin())
    }
}

/// Full-processing load used by the curved metric: FLOPs times bytes.
pub fn task_load(task: &Task, scenario: &Scenario) -> f64 {
    scenario.compute.gamma_per_class[task.class.index()] * task.data_size_bytes * task.data_size_bytes
}

/// Load-aware distance from `task_n` to `task_m`. Not symmetric.
pub fn curved_distance(task_n: &Task, task_m: &Task, scenario: &Scenario) -> Result<f64> {
    let theta = curve_angle(task_load(task_n, scenario), task_load(task_m, scenario))?;
    Ok(task_n.position.distance(&task_m.position) * arc_factor(theta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub uav_id: UavId,
    pub stops: Vec<TaskId>,
    pub depot: StationId,
    /// Curved-metric length, depot to depot.
    pub total_distance_m: f64,
    /// Straight-line length of the same legs.
    pub euclidean_distance_m: f64,
    pub flight_energy_j: f64,
    pub process_energy_j: f64,
    /// Residual bytes left on board after onboard processing.
    pub storage_used_bytes: f64,
    pub flops_used: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Assignment {
    pub routes: BTreeMap<UavId, Route>,
    pub unassigned: BTreeSet<TaskId>,
}

impl Assignment {
    /// Builds an assignment from per-UAV stop lists; every task not listed is
    /// unassigned. Cached route totals are computed from the stops.
    pub fn from_stops(scenario: &Scenario, stops: &BTreeMap<UavId, Vec<TaskId>>) -> Result<Self> {
        let model = CostModel::new(scenario)?;
        model.assignment(stops)
    }

    pub fn empty(scenario: &Scenario) -> Self {
        Self {
            routes: BTreeMap::new(),
            unassigned: scenario.tasks.iter().map(|t| t.id).collect(),
        }
    }

    pub fn assigned_tasks(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.routes.values().flat_map(|r| r.stops.iter().copied())
    }

    pub fn stops(&self) -> BTreeMap<UavId, Vec<TaskId>> {
        self.routes.iter().map(|(u, r)| (*u, r.stops.clone())).collect()
    }

    /// Canonical encoding used for deterministic tie-breaking.
    pub fn encoding(&self, n_uavs: usize) -> Vec<Vec<usize>> {
        (0..n_uavs)
            .map(|u| {
                self.routes
                    .get(&UavId(u))
                    .map(|r| r.stops.iter().map(|t| t.0).collect())
                    .unwrap_or_default()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "constraint", rename_all = "snake_case")]
pub enum Violation {
    FlightEnergy { uav: UavId, required_j: f64, capacity_j: f64 },
    ProcessEnergy { uav: UavId, required_j: f64, capacity_j: f64 },
    Storage { uav: UavId, required_bytes: f64, capacity_bytes: f64 },
    ProcessingCapacity { uav: UavId, required_flops: f64, capacity_flops: f64 },
    Uniqueness { task: TaskId, uavs: Vec<UavId> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::FlightEnergy { uav, required_j, capacity_j } => {
                write!(f, "flight energy (c): {uav} needs {required_j:.1} J of {capacity_j:.1} J")
            }
            Violation::ProcessEnergy { uav, required_j, capacity_j } => {
                write!(f, "processing energy (f): {uav} needs {required_j:.1} J of {capacity_j:.1} J")
            }
            Violation::Storage { uav, required_bytes, capacity_bytes } => {
                write!(f, "storage (d): {uav} needs {required_bytes:.0} B of {capacity_bytes:.0} B")
            }
            Violation::ProcessingCapacity { uav, required_flops, capacity_flops } => write!(
                f,
                "processing capacity (e): {uav} needs {required_flops:.3e} FLOPs of {capacity_flops:.3e}"
            ),
            Violation::Uniqueness { task, uavs } => {
                let names: Vec<String> = uavs.iter().map(|u| u.to_string()).collect();
                write!(f, "uniqueness (b): {task} visited by {}", names.join(", "))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub violations: Vec<Violation>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for FeasibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "feasible");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Where a (partial) route starts from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Anchor {
    Station,
    /// Positioned at this task's waypoint. When `due` the task itself has not
    /// been collected yet (its inbound leg is already paid).
    Task { id: TaskId, due: bool },
}

/// Remaining budgets at the anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteStart {
    pub anchor: Anchor,
    pub flight_left_j: f64,
    pub process_left_j: f64,
    pub storage_free_bytes: f64,
    pub flops_left: f64,
}

/// Outcome of simulating a route from a [`RouteStart`].
#[derive(Debug, Clone, PartialEq)]
pub struct RouteEval {
    pub flight_left_j: f64,
    pub process_left_j: f64,
    pub storage_free_bytes: f64,
    pub flops_left: f64,
    pub flight_energy_j: f64,
    pub process_energy_j: f64,
    pub storage_used_bytes: f64,
    pub flops_used: f64,
    pub curved_length_m: f64,
    pub euclidean_length_m: f64,
    pub value: f64,
    pub duration_s: f64,
    pub plans: Vec<ProcessingPlan>,
}

impl RouteEval {
    pub fn feasible(&self) -> bool {
        self.flight_left_j >= 0.0
            && self.process_left_j >= 0.0
            && self.storage_free_bytes >= 0.0
            && self.flops_left >= 0.0
    }
}

/// Precomputed per-UAV and per-task costs for one scenario.
#[derive(Debug, Clone)]
pub struct CostModel {
    pub profiles: Vec<PowerProfile>,
    /// `[uav][task]` collection energy (flight battery).
    pub task_energy_j: Vec<Vec<f64>>,
    /// `[uav][task]` seconds on site.
    pub collect_s: Vec<Vec<f64>>,
    /// `[from][to]` curved distance between tasks.
    pub curved: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub flop_budget: Vec<f64>,
    /// Weight on collected value in the objective.
    pub value_weight: f64,
    /// Objective cost per metre of curved route: the length weight times
    /// the movement-energy scale.
    pub length_cost: f64,
    scenario: Scenario,
}

impl CostModel {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        let mut profiles = Vec::with_capacity(scenario.uavs.len());
        let mut energy = Vec::with_capacity(scenario.uavs.len());
        let mut collect = Vec::with_capacity(scenario.uavs.len());
        for uav in &scenario.uavs {
            let profile = PowerProfile::for_uav(uav)?;
            let mut e_row = Vec::with_capacity(scenario.tasks.len());
            let mut c_row = Vec::with_capacity(scenario.tasks.len());
            for task in &scenario.tasks {
                let rate = match task.class {
                    // hovering at the bottom of the band, directly above the node
                    TaskClass::EdgeVideo => {
                        let above = task.position.with_z(task.position.z + uav.z_min_m);
                        rate_u2g(uav, &above, &task.position, &scenario.channel)?
                    }
                    _ => 1.0,
                };
                e_row.push(task_energy(task, uav, &profile, rate)?);
                c_row.push(collection_duration(task, &profile, rate)?);
            }
            profiles.push(profile);
            energy.push(e_row);
            collect.push(c_row);
        }
        let loads: Vec<f64> = scenario.tasks.iter().map(|t| task_load(t, scenario)).collect();
        let mut curved = vec![vec![0.0; scenario.tasks.len()]; scenario.tasks.len()];
        for (n, tn) in scenario.tasks.iter().enumerate() {
            for (m, tm) in scenario.tasks.iter().enumerate() {
                if n != m {
                    let theta = curve_angle(loads[n], loads[m])?;
                    curved[n][m] = tn.position.distance(&tm.position) * arc_factor(theta);
                }
            }
        }
        Ok(Self {
            profiles,
            task_energy_j: energy,
            collect_s: collect,
            curved,
            values: scenario.tasks.iter().map(task_value).collect(),
            flop_budget: scenario
                .uavs
                .iter()
                .map(|u| mission_flop_budget(u, scenario.sim.horizon_s()))
                .collect(),
            value_weight: scenario.learn.alpha_weight,
            length_cost: scenario.learn.beta_weight * scenario.learn.move_energy_scale,
            scenario: scenario.clone(),
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn n_tasks(&self) -> usize {
        self.scenario.tasks.len()
    }

    pub fn n_uavs(&self) -> usize {
        self.scenario.uavs.len()
    }

    pub fn home_point(&self, uav: UavId) -> Point3 {
        self.scenario.station_position(self.scenario.home_of(uav))
    }

    /// Cruise-altitude point above a task, where legs start and end.
    pub fn waypoint(&self, uav: UavId, task: TaskId) -> Point3 {
        let p = self.scenario.tasks[task.0].position;
        p.with_z(self.scenario.uavs[uav.0].z_max_m)
    }

    pub fn anchor_point(&self, uav: UavId, anchor: Anchor) -> Point3 {
        match anchor {
            Anchor::Station => self.home_point(uav),
            Anchor::Task { id, .. } => self.waypoint(uav, id),
        }
    }

    pub fn leg_energy(&self, uav: UavId, from: &Point3, to: &Point3) -> f64 {
        leg_flight_energy(from, to, &self.scenario.uavs[uav.0], &self.profiles[uav.0])
    }

    pub fn leg_time(&self, uav: UavId, from: &Point3, to: &Point3) -> f64 {
        leg_duration(from, to, &self.scenario.uavs[uav.0])
    }

    /// Objective-metric hop length: curved between tasks, straight to and
    /// from the depot.
    pub fn hop(&self, uav: UavId, from: Option<TaskId>, to: Option<TaskId>) -> f64 {
        let station = self.home_point(uav);
        match (from, to) {
            (Some(a), Some(b)) => self.curved[a.0][b.0],
            (Some(a), None) => self.scenario.tasks[a.0].position.distance(&station),
            (None, Some(b)) => station.distance(&self.scenario.tasks[b.0].position),
            (None, None) => 0.0,
        }
    }

    fn euclid_hop(&self, uav: UavId, from: Option<TaskId>, to: Option<TaskId>) -> f64 {
        let pos = |t: Option<TaskId>| match t {
            Some(id) => self.scenario.tasks[id.0].position,
            None => self.home_point(uav),
        };
        pos(from).distance(&pos(to))
    }

    /// Curved length of `stops` starting at `anchor` and ending at the depot.
    pub fn path_length(&self, uav: UavId, anchor: Option<TaskId>, stops: &[TaskId]) -> f64 {
        let mut prev = anchor;
        let mut total = 0.0;
        for &s in stops {
            total += self.hop(uav, prev, Some(s));
            prev = Some(s);
        }
        total + self.hop(uav, prev, None)
    }

    pub fn fresh_start(&self, uav: UavId) -> RouteStart {
        let spec = &self.scenario.uavs[uav.0];
        RouteStart {
            anchor: Anchor::Station,
            flight_left_j: spec.battery_flight_j,
            process_left_j: spec.battery_process_j,
            storage_free_bytes: spec.storage_bytes,
            flops_left: self.flop_budget[uav.0],
        }
    }

    /// Collects one task: debits collection energy, plans processing and
    /// updates every budget. Shared with the environment so both debit in
    /// identical order.
    pub fn collect(&self, uav: UavId, task: TaskId, budgets: &mut RouteStart) -> (f64, ProcessingPlan) {
        let e = self.task_energy_j[uav.0][task.0];
        budgets.flight_left_j -= e;
        let plan = plan_processing(
            &self.scenario.tasks[task.0],
            &self.scenario.uavs[uav.0],
            &self.scenario.compute,
            &self.scenario.learn,
            budgets.process_left_j,
            budgets.flops_left,
        );
        budgets.process_left_j -= plan.energy_j;
        budgets.flops_left -= plan.flops_required;
        budgets.storage_free_bytes -= plan.residual_bytes;
        (e, plan)
    }

    /// Flies `stops` from `start`, then returns to the depot.
    pub fn simulate(&self, uav: UavId, start: &RouteStart, stops: &[TaskId]) -> RouteEval {
        let mut b = *start;
        let mut eval = RouteEval {
            flight_left_j: 0.0,
            process_left_j: 0.0,
            storage_free_bytes: 0.0,
            flops_left: 0.0,
            flight_energy_j: 0.0,
            process_energy_j: 0.0,
            storage_used_bytes: 0.0,
            flops_used: 0.0,
            curved_length_m: 0.0,
            euclidean_length_m: 0.0,
            value: 0.0,
            duration_s: 0.0,
            plans: Vec::with_capacity(stops.len() + 1),
        };
        let mut pos = self.anchor_point(uav, start.anchor);
        let mut prev = None;
        if let Anchor::Task { id, due } = start.anchor {
            prev = Some(id);
            if due {
                self.visit(uav, id, &mut b, &mut eval);
            }
        }
        for &s in stops {
            let wp = self.waypoint(uav, s);
            let leg = self.leg_energy(uav, &pos, &wp);
            b.flight_left_j -= leg;
            eval.flight_energy_j += leg;
            eval.duration_s += self.leg_time(uav, &pos, &wp);
            eval.curved_length_m += self.hop(uav, prev, Some(s));
            eval.euclidean_length_m += self.euclid_hop(uav, prev, Some(s));
            self.visit(uav, s, &mut b, &mut eval);
            pos = wp;
            prev = Some(s);
        }
        let home = self.home_point(uav);
        let leg = self.leg_energy(uav, &pos, &home);
        b.flight_left_j -= leg;
        eval.flight_energy_j += leg;
        eval.duration_s += self.leg_time(uav, &pos, &home);
        eval.curved_length_m += self.hop(uav, prev, None);
        eval.euclidean_length_m += self.euclid_hop(uav, prev, None);
        eval.flight_left_j = b.flight_left_j;
        eval.process_left_j = b.process_left_j;
        eval.storage_free_bytes = b.storage_free_bytes;
        eval.flops_left = b.flops_left;
        eval
    }

    fn visit(&self, uav: UavId, task: TaskId, b: &mut RouteStart, eval: &mut RouteEval) {
        let (e, plan) = self.collect(uav, task, b);
        eval.flight_energy_j += e;
        eval.process_energy_j += plan.energy_j;
        eval.flops_used += plan.flops_required;
        eval.storage_used_bytes += plan.residual_bytes;
        eval.duration_s += self.collect_s[uav.0][task.0];
        eval.value += self.values[task.0];
        eval.plans.push(plan);
    }

    /// Whether a depot-to-depot route over `stops` is feasible for `uav`.
    pub fn route_feasible(&self, uav: UavId, stops: &[TaskId]) -> bool {
        self.simulate(uav, &self.fresh_start(uav), stops).feasible()
    }

    /// Objective contribution of one route: weighted values minus weighted,
    /// scaled curved length.
    pub fn route_objective(&self, uav: UavId, stops: &[TaskId]) -> f64 {
        let value: f64 = stops.iter().map(|t| self.values[t.0]).sum();
        self.value_weight * value - self.length_cost * self.path_length(uav, None, stops)
    }

    /// Cheapest position (curved metric) to insert `task` into `stops`
    /// following `anchor`; returns the index and the added length.
    pub fn cheapest_insertion(&self, uav: UavId, anchor: Option<TaskId>, stops: &[TaskId], task: TaskId) -> (usize, f64) {
        let mut best = (stops.len(), f64::INFINITY);
        let mut prev = anchor;
        for i in 0..=stops.len() {
            let next = stops.get(i).copied();
            let delta = self.hop(uav, prev, Some(task)) + self.hop(uav, Some(task), next) - self.hop(uav, prev, next);
            if delta < best.1 {
                best = (i, delta);
            }
            prev = next;
        }
        best
    }

    fn build_route(&self, uav: UavId, stops: Vec<TaskId>) -> Route {
        let eval = self.simulate(uav, &self.fresh_start(uav), &stops);
        Route {
            uav_id: uav,
            depot: self.scenario.home_of(uav),
            stops,
            total_distance_m: eval.curved_length_m,
            euclidean_distance_m: eval.euclidean_length_m,
            flight_energy_j: eval.flight_energy_j,
            process_energy_j: eval.process_energy_j,
            storage_used_bytes: eval.storage_used_bytes,
            flops_used: eval.flops_used,
        }
    }

    pub fn assignment(&self, stops: &BTreeMap<UavId, Vec<TaskId>>) -> Result<Assignment> {
        let mut routes = BTreeMap::new();
        let mut assigned = BTreeSet::new();
        for (&uav, list) in stops {
            if uav.0 >= self.n_uavs() {
                return Err(Error::Structural(format!("unknown {uav}")));
            }
            if let Some(t) = list.iter().find(|t| t.0 >= self.n_tasks()) {
                return Err(Error::Structural(format!("unknown {t}")));
            }
            assigned.extend(list.iter().copied());
            if !list.is_empty() {
                routes.insert(uav, self.build_route(uav, list.clone()));
            }
        }
        let unassigned = (0..self.n_tasks()).map(TaskId).filter(|t| !assigned.contains(t)).collect();
        Ok(Assignment { routes, unassigned })
    }

    pub fn check(&self, assignment: &Assignment) -> Result<FeasibilityReport> {
        let mut visitors: BTreeMap<TaskId, Vec<UavId>> = BTreeMap::new();
        let mut report = FeasibilityReport::default();
        for (&key, route) in &assignment.routes {
            if route.uav_id != key {
                return Err(Error::Structural(format!("route keyed by {key} belongs to {}", route.uav_id)));
            }
            if key.0 >= self.n_uavs() {
                return Err(Error::Structural(format!("unknown {key}")));
            }
            if route.depot != self.scenario.home_of(key) {
                return Err(Error::Structural(format!("{key} must start and end at its home station")));
            }
            let mut seen = BTreeSet::new();
            for &t in &route.stops {
                if t.0 >= self.n_tasks() {
                    return Err(Error::Structural(format!("unknown {t}")));
                }
                if !seen.insert(t) {
                    return Err(Error::Structural(format!("{t} repeated within the route of {key}")));
                }
                visitors.entry(t).or_default().push(key);
            }
            let spec = &self.scenario.uavs[key.0];
            let eval = self.simulate(key, &self.fresh_start(key), &route.stops);
            if eval.flight_left_j < 0.0 {
                report.violations.push(Violation::FlightEnergy {
                    uav: key,
                    required_j: eval.flight_energy_j,
                    capacity_j: spec.battery_flight_j,
                });
            }
            if eval.process_left_j < 0.0 {
                report.violations.push(Violation::ProcessEnergy {
                    uav: key,
                    required_j: eval.process_energy_j,
                    capacity_j: spec.battery_process_j,
                });
            }
            if eval.storage_free_bytes < 0.0 {
                report.violations.push(Violation::Storage {
                    uav: key,
                    required_bytes: eval.storage_used_bytes,
                    capacity_bytes: spec.storage_bytes,
                });
            }
            if eval.flops_left < 0.0 {
                report.violations.push(Violation::ProcessingCapacity {
                    uav: key,
                    required_flops: eval.flops_used,
                    capacity_flops: self.flop_budget[key.0],
                });
            }
        }
        for &t in &assignment.unassigned {
            if t.0 >= self.n_tasks() {
                return Err(Error::Structural(format!("unknown {t}")));
            }
            if visitors.contains_key(&t) {
                return Err(Error::Structural(format!("{t} is both assigned and unassigned")));
            }
        }
        if visitors.len() + assignment.unassigned.len() != self.n_tasks() {
            return Err(Error::Structural("assigned and unassigned tasks do not cover the task set".into()));
        }
        for (task, uavs) in visitors {
            if uavs.len() > 1 {
                report.violations.push(Violation::Uniqueness { task, uavs });
            }
        }
        Ok(report)
    }

    pub fn objective(&self, assignment: &Assignment) -> Result<f64> {
        let report = self.check(assignment)?;
        if !report.is_feasible() {
            return Err(Error::Infeasible(Box::new(report)));
        }
        Ok(assignment
            .routes
            .iter()
            .map(|(&u, r)| self.route_objective(u, &r.stops))
            .sum())
    }
}

pub fn check_feasible(assignment: &Assignment, scenario: &Scenario) -> Result<FeasibilityReport> {
    CostModel::new(scenario)?.check(assignment)
}

pub fn objective(assignment: &Assignment, scenario: &Scenario) -> Result<f64> {
    CostModel::new(scenario)?.objective(assignment)
}

pub const DEFAULT_MAX_EXACT_TASKS: usize = 8;

/// Globally optimal assignment by exhaustive enumeration.
pub fn solve_exact(scenario: &Scenario, max_tasks: usize) -> Result<Assignment> {
    let n = scenario.tasks.len();
    if n > max_tasks {
        return Err(Error::TooLarge { tasks: n, max: max_tasks });
    }
    let model = CostModel::new(scenario)?;
    let n_uavs = scenario.uavs.len();
    // best feasible ordering for every (uav, subset)
    let mut best: HashMap<(usize, u32), Option<(f64, Vec<TaskId>)>> = HashMap::new();
    for u in 0..n_uavs {
        for mask in 0u32..(1 << n) {
            let subset: Vec<TaskId> = (0..n).filter(|i| mask & (1 << i) != 0).map(TaskId).collect();
            best.insert((u, mask), best_order(&model, UavId(u), subset));
        }
    }

    let mut choice = vec![0usize; n]; // 0 = unassigned, k = uav k-1
    let mut best_total: Option<(f64, Vec<Vec<usize>>)> = None;
    loop {
        let mut masks = vec![0u32; n_uavs];
        for (i, &c) in choice.iter().enumerate() {
            if c > 0 {
                masks[c - 1] |= 1 << i;
            }
        }
        let mut total = 0.0;
        let mut encoding = Vec::with_capacity(n_uavs);
        let mut ok = true;
        for (u, &mask) in masks.iter().enumerate() {
            match &best[&(u, mask)] {
                Some((obj, order)) => {
                    total += obj;
                    encoding.push(order.iter().map(|t| t.0).collect::<Vec<_>>());
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            let better = match &best_total {
                None => true,
                Some((v, enc)) => total > *v || (total == *v && encoding < *enc),
            };
            if better {
                best_total = Some((total, encoding));
            }
        }
        // next assignment vector in base (n_uavs + 1)
        let mut i = 0;
        loop {
            if i == n {
                let (_, encoding) = best_total.expect("the empty assignment is always feasible");
                let stops = encoding
                    .into_iter()
                    .enumerate()
                    .filter(|(_, s)| !s.is_empty())
                    .map(|(u, s)| (UavId(u), s.into_iter().map(TaskId).collect()))
                    .collect();
                return model.assignment(&stops);
            }
            choice[i] += 1;
            if choice[i] <= n_uavs {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
    }
}

/// Shortest feasible ordering of `subset` (ties: lexicographically smallest).
fn best_order(model: &CostModel, uav: UavId, subset: Vec<TaskId>) -> Option<(f64, Vec<TaskId>)> {
    let mut perm = subset;
    let mut best: Option<(f64, Vec<TaskId>)> = None;
    loop {
        if model.route_feasible(uav, &perm) {
            let obj = model.route_objective(uav, &perm);
            if best.as_ref().is_none_or(|(b, _)| obj > *b) {
                best = Some((obj, perm.clone()));
            }
        }
        if !next_permutation(&mut perm) {
            return best;
        }
    }
}

/// Advances to the next lexicographic permutation; false after the last.
pub fn next_permutation<T: Ord>(items: &mut [T]) -> bool {
    if items.len() < 2 {
        return false;
    }
    let mut i = items.len() - 1;
    while i > 0 && items[i - 1] >= items[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = items.len() - 1;
    while items[j] <= items[i - 1] {
        j -= 1;
    }
    items.swap(i - 1, j);
    items[i..].reverse();
    true
}
