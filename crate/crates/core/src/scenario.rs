//! World description: region, stations, UAV fleet, tasks and constants.
//!
//! A [`Scenario`] is built from a [`ScenarioConfig`] and a seed by
//! [`generate_scenario`] and never changes afterwards. Configuration files are
//! JSON documents; every field except `tasks` has a default (see
//! `docs/config.md` in the repository root).

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::compute::ComputeParams;
use crate::error::{Error, Result};
use crate::geom::Point3;

const MB: f64 = 1.0e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UavId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StationId(pub usize);

impl std::fmt::Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "task#{}", self.0)
    }
}

impl std::fmt::Display for UavId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "uav#{}", self.0)
    }
}

impl std::fmt::Display for StationId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "station#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskClass {
    UavVideo = 1,
    EdgeVideo = 2,
    SensorData = 3,
}

impl TaskClass {
    pub const ALL: [TaskClass; 3] = [TaskClass::UavVideo, TaskClass::EdgeVideo, TaskClass::SensorData];

    /// Zero-based index, handy for per-class arrays.
    pub fn index(self) -> usize {
        self as usize - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum TaskStatus {
    Unassigned,
    Assigned { uav: UavId },
    Collected { uav: UavId },
    PartiallyProcessed { uav: UavId, fraction: f64 },
    Completed { uav: UavId },
}

impl TaskStatus {
    /// Position in the monotone lifecycle.
    pub fn rank(&self) -> u8 {
        match self {
            TaskStatus::Unassigned => 0,
            TaskStatus::Assigned { .. } => 1,
            TaskStatus::Collected { .. } => 2,
            TaskStatus::PartiallyProcessed { .. } => 3,
            TaskStatus::Completed { .. } => 4,
        }
    }

    pub fn is_collected(&self) -> bool {
        self.rank() >= 2
    }

    pub fn collector(&self) -> Option<UavId> {
        match *self {
            TaskStatus::Collected { uav }
            | TaskStatus::PartiallyProcessed { uav, .. }
            | TaskStatus::Completed { uav } => Some(uav),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskValueParams {
    pub k_m: f64,
    pub r_m: f64,
    pub tau_exp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub position: Point3,
    pub class: TaskClass,
    pub priority: u32,
    pub data_size_bytes: f64,
    /// Recording or sensing time on site; zero for edge video, whose on-site
    /// time is set by the link rate.
    pub dwell_time_s: f64,
    pub value_params: TaskValueParams,
    pub status: TaskStatus,
}

/// `k_m (1 + r_m^tau)`. The assignment indicator is applied by the caller.
pub fn task_value(task: &Task) -> f64 {
    let v = &task.value_params;
    v.k_m * (1.0 + v.r_m.powf(v.tau_exp))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub side_length_m: f64,
    pub station_positions: Vec<Point3>,
    pub grid_resolution_m: f64,
}

impl RegionSpec {
    pub fn contains_horizontal(&self, p: &Point3) -> bool {
        (0.0..=self.side_length_m).contains(&p.x) && (0.0..=self.side_length_m).contains(&p.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RotorParams {
    pub weight_n: f64,
    pub n_rotors: f64,
    pub air_density: f64,
    pub rotor_disk_area_m2: f64,
    pub thrust_coeff: f64,
    pub profile_drag_coeff: f64,
    pub rotor_solidity: f64,
    pub induced_power_factor: f64,
    pub hover_induced_velocity_mps: f64,
    pub flat_plate_area_horiz_m2: f64,
    pub flat_plate_area_vert_m2: f64,
}

impl Default for RotorParams {
    fn default() -> Self {
        let weight_n = 20.0;
        let n_rotors = 4.0;
        let air_density = 1.225;
        let rotor_disk_area_m2 = 0.05;
        Self {
            weight_n,
            n_rotors,
            air_density,
            rotor_disk_area_m2,
            thrust_coeff: 0.1,
            profile_drag_coeff: 0.01,
            rotor_solidity: 0.05,
            induced_power_factor: 0.1,
            // momentum-theory hover induced velocity sqrt(W / (2 n rho A))
            hover_induced_velocity_mps: (weight_n / (2.0 * n_rotors * air_density * rotor_disk_area_m2)).sqrt(),
            flat_plate_area_horiz_m2: 0.01,
            flat_plate_area_vert_m2: 0.02,
        }
    }
}

/// Fleet-wide UAV template; `home_station` is filled in at generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UavSpec {
    pub home_station: StationId,
    pub battery_flight_j: f64,
    pub battery_process_j: f64,
    pub storage_bytes: f64,
    pub n_cores: f64,
    pub cpu_hz: f64,
    pub flops_per_cycle: f64,
    pub transmit_power_w: f64,
    pub cruise_speed_mps: f64,
    pub cruise_low_speed_mps: f64,
    pub ascend_speed_mps: f64,
    pub descend_speed_mps: f64,
    pub z_min_m: f64,
    pub z_max_m: f64,
    pub rotor: RotorParams,
}

impl Default for UavSpec {
    fn default() -> Self {
        Self {
            home_station: StationId(0),
            battery_flight_j: 110_000.0,
            battery_process_j: 3_000.0,
            storage_bytes: 1.0e9,
            n_cores: 4.0,
            cpu_hz: 1.8e9,
            flops_per_cycle: 4.0,
            transmit_power_w: 5.0,
            cruise_speed_mps: 15.0,
            cruise_low_speed_mps: 5.0,
            ascend_speed_mps: 3.0,
            descend_speed_mps: 3.0,
            z_min_m: 50.0,
            z_max_m: 100.0,
            rotor: RotorParams::default(),
        }
    }
}

impl UavSpec {
    fn validate(&self, prefix: &str) -> Result<()> {
        let positive = [
            ("battery_flight_j", self.battery_flight_j),
            ("battery_process_j", self.battery_process_j),
            ("storage_bytes", self.storage_bytes),
            ("n_cores", self.n_cores),
            ("cpu_hz", self.cpu_hz),
            ("flops_per_cycle", self.flops_per_cycle),
            ("transmit_power_w", self.transmit_power_w),
            ("cruise_speed_mps", self.cruise_speed_mps),
            ("cruise_low_speed_mps", self.cruise_low_speed_mps),
            ("ascend_speed_mps", self.ascend_speed_mps),
            ("descend_speed_mps", self.descend_speed_mps),
            ("z_min_m", self.z_min_m),
            ("z_max_m", self.z_max_m),
            ("rotor.weight_n", self.rotor.weight_n),
            ("rotor.n_rotors", self.rotor.n_rotors),
            ("rotor.air_density", self.rotor.air_density),
            ("rotor.rotor_disk_area_m2", self.rotor.rotor_disk_area_m2),
            ("rotor.thrust_coeff", self.rotor.thrust_coeff),
            ("rotor.profile_drag_coeff", self.rotor.profile_drag_coeff),
            ("rotor.rotor_solidity", self.rotor.rotor_solidity),
            ("rotor.induced_power_factor", self.rotor.induced_power_factor),
            ("rotor.hover_induced_velocity_mps", self.rotor.hover_induced_velocity_mps),
            ("rotor.flat_plate_area_horiz_m2", self.rotor.flat_plate_area_horiz_m2),
            ("rotor.flat_plate_area_vert_m2", self.rotor.flat_plate_area_vert_m2),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::config(format!("{prefix}{name}"), "must be positive and finite"));
            }
        }
        if self.z_min_m >= self.z_max_m {
            return Err(Error::config(format!("{prefix}z_min_m"), "must be below z_max_m"));
        }
        if self.cruise_low_speed_mps >= self.cruise_speed_mps {
            return Err(Error::config(
                format!("{prefix}cruise_low_speed_mps"),
                "must be below cruise_speed_mps",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    pub bandwidth_u2g_hz: f64,
    pub bandwidth_u2u_hz: f64,
    /// W/Hz. The default spreads -100 dBm of noise power over the U2G band.
    pub noise_psd_u2g: f64,
    /// W/Hz. The default spreads -100 dBm of noise power over the U2U band.
    pub noise_psd_u2u: f64,
    pub carrier_hz: f64,
    pub light_speed_mps: f64,
    pub los_a: f64,
    pub los_b: f64,
    pub gain_los: f64,
    pub gain_nlos: f64,
    /// Transmit/receive antenna gains for U2U links.
    pub antenna_gain_tx: f64,
    pub antenna_gain_rx: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        let noise_w = 1.0e-13; // -100 dBm
        Self {
            bandwidth_u2g_hz: 10.0e6,
            bandwidth_u2u_hz: 40.0e6,
            noise_psd_u2g: noise_w / 10.0e6,
            noise_psd_u2u: noise_w / 40.0e6,
            carrier_hz: 2.0e9,
            light_speed_mps: 299_792_458.0,
            los_a: 9.61,
            los_b: 0.16,
            gain_los: 1.0,
            gain_nlos: 0.2,
            antenna_gain_tx: 1.0,
            antenna_gain_rx: 1.0,
        }
    }
}

impl ChannelParams {
    fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("channel.bandwidth_u2g_hz", self.bandwidth_u2g_hz),
            ("channel.bandwidth_u2u_hz", self.bandwidth_u2u_hz),
            ("channel.noise_psd_u2g", self.noise_psd_u2g),
            ("channel.noise_psd_u2u", self.noise_psd_u2u),
            ("channel.carrier_hz", self.carrier_hz),
            ("channel.light_speed_mps", self.light_speed_mps),
            ("channel.gain_nlos", self.gain_nlos),
            ("channel.antenna_gain_tx", self.antenna_gain_tx),
            ("channel.antenna_gain_rx", self.antenna_gain_rx),
        ] {
            if !(value > 0.0) {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if self.gain_nlos > self.gain_los {
            return Err(Error::config("channel.gain_nlos", "must not exceed gain_los"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnParams {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub tau_soft: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub entropy_alpha: f64,
    pub replay_capacity: usize,
    pub hidden_sizes: Vec<usize>,
    /// Gradient updates per environment step.
    pub updates_per_step: usize,
    /// Updates start once a buffer holds this many transitions.
    pub warmup_transitions: usize,
    /// Proximity exchange and periodic synchronization on/off.
    pub sharing: bool,
    pub t0_sync: u64,
    pub d_threshold_m: f64,
    pub lambda_decay: f64,
    pub reward_mu: f64,
    pub reward_omega: f64,
    pub reward_epsilon: f64,
    pub reward_phi: f64,
    /// Every agent receives the global reward instead of its own share.
    pub shared_reward: bool,
    pub alpha_weight: f64,
    pub beta_weight: f64,
    /// Converts curved route length into objective units.
    pub move_energy_scale: f64,
    pub process_energy_per_byte: f64,
}

impl Default for LearnParams {
    fn default() -> Self {
        Self {
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            tau_soft: 0.005,
            gamma: 0.99,
            batch_size: 64,
            entropy_alpha: 0.2,
            replay_capacity: 100_000,
            hidden_sizes: vec![128, 128],
            updates_per_step: 1,
            warmup_transitions: 64,
            sharing: true,
            t0_sync: 10,
            d_threshold_m: 200.0,
            lambda_decay: 0.1,
            reward_mu: 1.0,
            reward_omega: 1.0,
            reward_epsilon: 1e-5,
            reward_phi: 1.0,
            shared_reward: false,
            alpha_weight: 1.0,
            beta_weight: 1.0,
            move_energy_scale: 1e-3,
            // 6 W board draw over the calibrated per-byte video delay
            process_energy_per_byte: 2.88e-6,
        }
    }
}

impl LearnParams {
    fn validate(&self) -> Result<()> {
        if !(self.tau_soft > 0.0 && self.tau_soft <= 1.0) {
            return Err(Error::config("learn.tau_soft", "must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("learn.gamma", "must lie in [0, 1)"));
        }
        if self.t0_sync < 1 {
            return Err(Error::config("learn.t0_sync", "must be at least 1"));
        }
        if !(self.lambda_decay >= 0.0) {
            return Err(Error::config("learn.lambda_decay", "must be nonnegative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("learn.batch_size", "must be positive"));
        }
        if self.replay_capacity == 0 {
            return Err(Error::config("learn.replay_capacity", "must be positive"));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::config("learn.hidden_sizes", "layers must be nonempty"));
        }
        for (name, value) in [
            ("learn.actor_lr", self.actor_lr),
            ("learn.critic_lr", self.critic_lr),
            ("learn.entropy_alpha", self.entropy_alpha),
            ("learn.d_threshold_m", self.d_threshold_m),
            ("learn.reward_epsilon", self.reward_epsilon),
            ("learn.move_energy_scale", self.move_energy_scale),
            ("learn.alpha_weight", self.alpha_weight),
            ("learn.beta_weight", self.beta_weight),
            ("learn.process_energy_per_byte", self.process_energy_per_byte),
        ] {
            if !(value >= 0.0) {
                return Err(Error::config(name, "must be nonnegative"));
            }
        }
        Ok(())
    }
}

/// Simulation clock and action-space shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    /// World seconds between agent decisions.
    pub decision_epoch_s: f64,
    pub horizon_steps: u64,
    /// Candidate tasks offered per UAV each decision.
    pub candidates_k: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            decision_epoch_s: 30.0,
            horizon_steps: 80,
            candidates_k: 8,
        }
    }
}

impl SimParams {
    pub fn horizon_s(&self) -> f64 {
        self.decision_epoch_s * self.horizon_steps as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    /// Number of Gaussian hot spots.
    pub clusters: usize,
    /// Share of tasks drawn from hot spots rather than uniformly.
    pub cluster_fraction: f64,
    pub cluster_std_m: f64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            clusters: 3,
            cluster_fraction: 0.5,
            cluster_std_m: 150.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValueConfig {
    /// `k_m = k_scale * priority`
    pub k_scale: f64,
    pub r_m: f64,
    pub tau_exp: f64,
}

impl Default for ValueConfig {
    fn default() -> Self {
        Self {
            k_scale: 1.0,
            r_m: 0.5,
            tau_exp: 1.0,
        }
    }
}

/// On-disk scenario configuration. Counts are signed so that negative values
/// surface as validation errors naming the field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub tasks: i64,
    #[serde(default = "defaults::uavs")]
    pub uavs: i64,
    #[serde(default = "defaults::stations")]
    pub stations: i64,
    #[serde(default = "defaults::side_length_m")]
    pub side_length_m: f64,
    #[serde(default = "defaults::grid_resolution_m")]
    pub grid_resolution_m: f64,
    /// Relative weights of classes 1, 2, 3.
    #[serde(default = "defaults::task_mix")]
    pub task_mix: [f64; 3],
    #[serde(default = "defaults::class1_size_mb")]
    pub class1_size_mb: [f64; 2],
    #[serde(default = "defaults::class2_size_mb")]
    pub class2_size_mb: [f64; 2],
    #[serde(default = "defaults::class3_size_mb")]
    pub class3_size_mb: [f64; 2],
    #[serde(default = "defaults::class1_dwell_s")]
    pub class1_dwell_s: [f64; 2],
    #[serde(default = "defaults::class3_dwell_s")]
    pub class3_dwell_s: f64,
    #[serde(default = "defaults::priorities")]
    pub priorities: [u32; 3],
    #[serde(default = "defaults::task_altitude_m")]
    pub task_altitude_m: [f64; 2],
    #[serde(default)]
    pub value: ValueConfig,
    #[serde(default)]
    pub density: DensityConfig,
    #[serde(default)]
    pub uav: UavSpec,
    #[serde(default)]
    pub channel: ChannelParams,
    #[serde(default)]
    pub compute: ComputeParams,
    #[serde(default)]
    pub learn: LearnParams,
    #[serde(default)]
    pub sim: SimParams,
}

mod defaults {
    pub fn uavs() -> i64 {
        16
    }
    pub fn stations() -> i64 {
        4
    }
    pub fn side_length_m() -> f64 {
        1500.0
    }
    pub fn grid_resolution_m() -> f64 {
        10.0
    }
    pub fn task_mix() -> [f64; 3] {
        [0.35, 0.25, 0.40]
    }
    pub fn class1_size_mb() -> [f64; 2] {
        [100.0, 200.0]
    }
    pub fn class2_size_mb() -> [f64; 2] {
        [300.0, 500.0]
    }
    pub fn class3_size_mb() -> [f64; 2] {
        [1.0, 10.0]
    }
    pub fn class1_dwell_s() -> [f64; 2] {
        [60.0, 120.0]
    }
    pub fn class3_dwell_s() -> f64 {
        5.0
    }
    pub fn priorities() -> [u32; 3] {
        [3, 2, 1]
    }
    pub fn task_altitude_m() -> [f64; 2] {
        [0.0, 0.0]
    }
}

impl ScenarioConfig {
    /// Table I profile: 16 UAVs, 4 corner stations, 1500 m square.
    pub fn paper(tasks: usize) -> Self {
        Self {
            tasks: tasks as i64,
            uavs: defaults::uavs(),
            stations: defaults::stations(),
            side_length_m: defaults::side_length_m(),
            grid_resolution_m: defaults::grid_resolution_m(),
            task_mix: defaults::task_mix(),
            class1_size_mb: defaults::class1_size_mb(),
            class2_size_mb: defaults::class2_size_mb(),
            class3_size_mb: defaults::class3_size_mb(),
            class1_dwell_s: defaults::class1_dwell_s(),
            class3_dwell_s: defaults::class3_dwell_s(),
            priorities: defaults::priorities(),
            task_altitude_m: defaults::task_altitude_m(),
            value: ValueConfig::default(),
            density: DensityConfig::default(),
            uav: UavSpec::default(),
            channel: ChannelParams::default(),
            compute: ComputeParams::default(),
            learn: LearnParams::default(),
            sim: SimParams::default(),
        }
    }

    /// Laptop-sized profile: 4 UAVs, 2 stations, 30 tasks, smaller networks.
    pub fn desk() -> Self {
        let mut cfg = Self::paper(30);
        cfg.uavs = 4;
        cfg.stations = 2;
        cfg.sim.candidates_k = 4;
        cfg.sim.horizon_steps = 60;
        cfg.learn.hidden_sizes = vec![64, 64];
        cfg.learn.replay_capacity = 20_000;
        cfg
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.max(0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks < 0 {
            return Err(Error::config("tasks", "must be nonnegative"));
        }
        if self.uavs < 1 {
            return Err(Error::config("uavs", "must be at least 1"));
        }
        if !(1..=4).contains(&self.stations) {
            return Err(Error::config("stations", "must be between 1 and 4 (one per corner)"));
        }
        if self.uavs < self.stations {
            return Err(Error::config("uavs", "must be at least the number of stations"));
        }
        if !(self.side_length_m > 0.0) {
            return Err(Error::config("side_length_m", "must be positive"));
        }
        if !(self.grid_resolution_m > 0.0) {
            return Err(Error::config("grid_resolution_m", "must be positive"));
        }
        let cells = self.side_length_m / self.grid_resolution_m;
        if (cells - cells.round()).abs() > 1e-9 * cells.max(1.0) {
            return Err(Error::config("grid_resolution_m", "must divide side_length_m"));
        }
        if self.task_mix.iter().any(|w| !(*w >= 0.0)) || self.task_mix.iter().sum::<f64>() <= 0.0 {
            return Err(Error::config("task_mix", "weights must be nonnegative with positive sum"));
        }
        for (name, range) in [
            ("class1_size_mb", self.class1_size_mb),
            ("class2_size_mb", self.class2_size_mb),
            ("class3_size_mb", self.class3_size_mb),
            ("class1_dwell_s", self.class1_dwell_s),
        ] {
            if !(range[0] > 0.0 && range[0] <= range[1]) {
                return Err(Error::config(name, "must be an ordered positive range"));
            }
        }
        if !(self.class3_dwell_s >= 0.0) {
            return Err(Error::config("class3_dwell_s", "must be nonnegative"));
        }
        let [p1, p2, p3] = self.priorities;
        if !(p1 > p2 && p2 > p3 && p3 > 0) {
            return Err(Error::config("priorities", "must be positive and strictly decreasing by class"));
        }
        if !(self.task_altitude_m[0] >= 0.0 && self.task_altitude_m[0] <= self.task_altitude_m[1]) {
            return Err(Error::config("task_altitude_m", "must be an ordered nonnegative range"));
        }
        if self.task_altitude_m[1] >= self.uav.z_min_m {
            return Err(Error::config("task_altitude_m", "must stay below uav.z_min_m"));
        }
        if !(self.value.k_scale >= 0.0 && self.value.r_m >= 0.0) {
            return Err(Error::config("value", "k_scale and r_m must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.density.cluster_fraction) {
            return Err(Error::config("density.cluster_fraction", "must lie in [0, 1]"));
        }
        if self.density.cluster_fraction > 0.0 && self.density.clusters == 0 {
            return Err(Error::config("density.clusters", "must be positive when cluster_fraction > 0"));
        }
        if !(self.density.cluster_std_m >= 0.0) {
            return Err(Error::config("density.cluster_std_m", "must be nonnegative"));
        }
        if !(self.sim.decision_epoch_s > 0.0) {
            return Err(Error::config("sim.decision_epoch_s", "must be positive"));
        }
        if self.sim.horizon_steps == 0 {
            return Err(Error::config("sim.horizon_steps", "must be positive"));
        }
        if self.sim.candidates_k == 0 {
            return Err(Error::config("sim.candidates_k", "must be positive"));
        }
        self.uav.validate("uav.")?;
        self.channel.validate()?;
        self.compute.validate()?;
        self.learn.validate()?;
        Ok(())
    }
}

/// Reads and validates a JSON configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_config(&text).map_err(|err| match err {
        Error::ConfigParse { line, column, message, .. } => Error::ConfigParse {
            path: path.to_path_buf(),
            line,
            column,
            message,
        },
        other => other,
    })
}

/// Parses and validates configuration text.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| Error::ConfigParse {
        path: "<inline>".into(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub region: RegionSpec,
    pub uavs: Vec<UavSpec>,
    pub tasks: Vec<Task>,
    pub channel: ChannelParams,
    pub compute: ComputeParams,
    pub learn: LearnParams,
    pub sim: SimParams,
    pub seed: u64,
}

impl Scenario {
    pub fn n_stations(&self) -> usize {
        self.region.station_positions.len()
    }

    pub fn station_position(&self, station: StationId) -> Point3 {
        self.region.station_positions[station.0]
    }

    pub fn home_of(&self, uav: UavId) -> StationId {
        self.uavs[uav.0].home_station
    }

    pub fn uavs_of(&self, station: StationId) -> Vec<UavId> {
        (0..self.uavs.len())
            .filter(|&i| self.uavs[i].home_station == station)
            .map(UavId)
            .collect()
    }

    pub fn task(&self, id: TaskId) -> &Task {
        &self.tasks[id.0]
    }

    /// Checks cross-field invariants of a hand-built or deserialized scenario.
    pub fn validate(&self) -> Result<()> {
        if self.region.station_positions.is_empty() {
            return Err(Error::config("region.station_positions", "needs at least one station"));
        }
        for (i, uav) in self.uavs.iter().enumerate() {
            if uav.home_station.0 >= self.n_stations() {
                return Err(Error::config(format!("uavs[{i}].home_station"), "unknown station"));
            }
            uav.validate(&format!("uavs[{i}]."))?;
        }
        for (i, task) in self.tasks.iter().enumerate() {
            if task.id != TaskId(i) {
                return Err(Error::config(format!("tasks[{i}].id"), "ids must equal positions"));
            }
            if !self.region.contains_horizontal(&task.position) {
                return Err(Error::config(format!("tasks[{i}].position"), "outside the region"));
            }
            if !(task.data_size_bytes > 0.0) {
                return Err(Error::config(format!("tasks[{i}].data_size_bytes"), "must be positive"));
            }
        }
        self.channel.validate()?;
        self.compute.validate()?;
        self.learn.validate()?;
        Ok(())
    }
}

/// Corner order: two-station layouts use opposite corners.
fn corner_positions(side: f64, n: usize) -> Vec<Point3> {
    [
        Point3::new(0.0, 0.0, 0.0),
        Point3::new(side, side, 0.0),
        Point3::new(side, 0.0, 0.0),
        Point3::new(0.0, side, 0.0),
    ]
    .into_iter()
    .take(n)
    .collect()
}

fn snap(value: f64, resolution: f64, side: f64) -> f64 {
    ((value / resolution).round() * resolution).clamp(0.0, side)
}

/// Builds a scenario. Deterministic in `(config, seed)`.
pub fn generate_scenario(config: &ScenarioConfig, seed: u64) -> Result<Scenario> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = config.side_length_m;
    let n_stations = config.stations as usize;
    let stations = corner_positions(side, n_stations);

    let uavs = (0..config.uavs as usize)
        .map(|i| UavSpec {
            home_station: StationId(i % n_stations),
            ..config.uav.clone()
        })
        .collect();

    let centers: Vec<(f64, f64)> = (0..config.density.clusters)
        .map(|_| (rng.random_range(0.0..=side), rng.random_range(0.0..=side)))
        .collect();
    let spread = Normal::new(0.0, config.density.cluster_std_m.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::config("density.cluster_std_m", e.to_string()))?;
    let mix = WeightedIndex::new(config.task_mix).map_err(|e| Error::config("task_mix", e.to_string()))?;

    let mut tasks = Vec::with_capacity(config.n_tasks());
    for i in 0..config.n_tasks() {
        let class = TaskClass::ALL[mix.sample(&mut rng)];
        let (x, y) = if !centers.is_empty() && rng.random_bool(config.density.cluster_fraction) {
            let (cx, cy) = *centers.choose(&mut rng).expect("nonempty");
            (cx + spread.sample(&mut rng), cy + spread.sample(&mut rng))
        } else {
            (rng.random_range(0.0..=side), rng.random_range(0.0..=side))
        };
        let [z_lo, z_hi] = config.task_altitude_m;
        let z = if z_hi > z_lo { rng.random_range(z_lo..=z_hi) } else { z_lo };
        let position = Point3::new(
            snap(x, config.grid_resolution_m, side),
            snap(y, config.grid_resolution_m, side),
            z,
        );
        let size_range = match class {
            TaskClass::UavVideo => config.class1_size_mb,
            TaskClass::EdgeVideo => config.class2_size_mb,
            TaskClass::SensorData => config.class3_size_mb,
        };
        let data_size_bytes = rng.random_range(size_range[0]..=size_range[1]) * MB;
        let dwell_time_s = match class {
            TaskClass::UavVideo => rng.random_range(config.class1_dwell_s[0]..=config.class1_dwell_s[1]),
            TaskClass::EdgeVideo => 0.0,
            TaskClass::SensorData => config.class3_dwell_s,
        };
        let priority = config.priorities[class.index()];
        tasks.push(Task {
            id: TaskId(i),
            position,
            class,
            priority,
            data_size_bytes,
            dwell_time_s,
            value_params: TaskValueParams {
                k_m: config.value.k_scale * priority as f64,
                r_m: config.value.r_m,
                tau_exp: config.value.tau_exp,
            },
            status: TaskStatus::Unassigned,
        });
    }

    Ok(Scenario {
        region: RegionSpec {
            side_length_m: side,
            station_positions: stations,
            grid_resolution_m: config.grid_resolution_m,
        },
        uavs,
        tasks,
        channel: config.channel.clone(),
        compute: config.compute.clone(),
        learn: config.learn.clone(),
        sim: config.sim.clone(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn task_with(k: f64, r: f64, tau: f64) -> Task {
        Task {
            id: TaskId(0),
            position: Point3::default(),
            class: TaskClass::SensorData,
            priority: 1,
            data_size_bytes: 1.0,
            dwell_time_s: 0.0,
            value_params: TaskValueParams { k_m: k, r_m: r, tau_exp: tau },
            status: TaskStatus::Unassigned,
        }
    }

    #[test]
    fn table_one_profile_shape() {
        let scn = generate_scenario(&ScenarioConfig::paper(110), 7).unwrap();
        assert_eq!(scn.tasks.len(), 110);
        assert_eq!(scn.uavs.len(), 16);
        assert_eq!(scn.n_stations(), 4);
        for s in 0..4 {
            assert_eq!(scn.uavs_of(StationId(s)).len(), 4);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = ScenarioConfig::paper(50);
        let a = serde_json::to_string(&generate_scenario(&cfg, 11).unwrap()).unwrap();
        let b = serde_json::to_string(&generate_scenario(&cfg, 11).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = serde_json::to_string(&generate_scenario(&cfg, 12).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_tasks_is_valid() {
        let scn = generate_scenario(&ScenarioConfig::paper(0), 1).unwrap();
        assert!(scn.tasks.is_empty());
        scn.validate().unwrap();
    }

    #[test]
    fn stations_sit_on_corners() {
        let scn = generate_scenario(&ScenarioConfig::paper(1), 1).unwrap();
        let side = scn.region.side_length_m;
        for p in &scn.region.station_positions {
            assert!(p.x == 0.0 || p.x == side);
            assert!(p.y == 0.0 || p.y == side);
        }
    }

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg = parse_config(r#"{"tasks": 110}"#).unwrap();
        assert_eq!(cfg, ScenarioConfig::paper(110));
        assert_eq!(cfg.uavs, 16);
        assert_eq!(cfg.learn.batch_size, 64);
        assert_eq!(cfg.learn.t0_sync, 10);
        assert_eq!(cfg.learn.tau_soft, 0.005);
        assert_eq!(cfg.learn.gamma, 0.99);
        assert_eq!(cfg.channel.bandwidth_u2g_hz, 10.0e6);
        assert_eq!(cfg.channel.bandwidth_u2u_hz, 40.0e6);
        assert_eq!(cfg.uav.transmit_power_w, 5.0);
        assert_eq!((cfg.uav.z_min_m, cfg.uav.z_max_m), (50.0, 100.0));
    }

    #[test]
    fn negative_count_is_a_validation_error() {
        let err = parse_config(r#"{"tasks": 10, "uavs": -1}"#).unwrap_err();
        match err {
            Error::Config { field, .. } => assert_eq!(field, "uavs"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = parse_config(r#"{"tasks": 10, "foo": 1}"#).unwrap_err();
        assert!(matches!(err, Error::ConfigParse { .. }));
        assert!(err.to_string().contains("foo"), "{err}");
    }

    #[test]
    fn missing_required_key_is_named() {
        let err = parse_config(r#"{"uavs": 4}"#).unwrap_err();
        assert!(err.to_string().contains("tasks"), "{err}");
    }

    #[test]
    fn parse_error_carries_line() {
        let err = parse_config("{\n  \"tasks\": 10,\n  \"uavs\": \n}").unwrap_err();
        match err {
            Error::ConfigParse { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn load_config_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{\"tasks\": }").unwrap();
        let err = load_config(&path).unwrap_err();
        assert!(err.to_string().contains("bad.json"), "{err}");
    }

    #[test]
    fn task_value_examples() {
        assert_eq!(task_value(&task_with(1.0, 0.0, 2.0)), 1.0);
        assert_eq!(task_value(&task_with(2.0, 1.0, 5.0)), 4.0);
        assert!((task_value(&task_with(1.5, 0.5, 2.0)) - 1.875).abs() < 1e-12);
    }

    #[test]
    fn priorities_must_decrease() {
        let mut cfg = ScenarioConfig::paper(5);
        cfg.priorities = [1, 2, 3];
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "priorities"));
    }

    proptest! {
        #[test]
        fn generated_tasks_respect_region_and_classes(seed in any::<u64>(), n in 0usize..60) {
            let cfg = ScenarioConfig::paper(n);
            let scn = generate_scenario(&cfg, seed).unwrap();
            prop_assert_eq!(scn.tasks.len(), n);
            for t in &scn.tasks {
                prop_assert!(scn.region.contains_horizontal(&t.position));
                prop_assert!(t.position.z >= cfg.task_altitude_m[0] && t.position.z <= cfg.task_altitude_m[1]);
                let range = match t.class {
                    TaskClass::UavVideo => cfg.class1_size_mb,
                    TaskClass::EdgeVideo => cfg.class2_size_mb,
                    TaskClass::SensorData => cfg.class3_size_mb,
                };
                prop_assert!(t.data_size_bytes >= range[0] * MB && t.data_size_bytes <= range[1] * MB);
                prop_assert_eq!(t.priority, cfg.priorities[t.class.index()]);
            }
            prop_assert!(cfg.priorities[0] > cfg.priorities[1] && cfg.priorities[1] > cfg.priorities[2]);
        }

        #[test]
        fn task_value_monotone(k in 0.0f64..10.0, dk in 0.0f64..5.0, r in 0.0f64..3.0, dr in 0.0f64..2.0, tau in 0.0f64..4.0) {
            let base = task_value(&task_with(k, r, tau));
            prop_assert!(task_value(&task_with(k + dk, r, tau)) >= base);
            prop_assert!(task_value(&task_with(k, r + dr, tau)) >= base - 1e-12 * base.abs());
        }
    }
}
