//! Onboard processing: FLOP load, capacity, delay, energy and storage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{LearnParams, Task, TaskId, UavSpec};

/// Reference video timing table shipped with the crate.
pub const VIDEO_TIMING_FIXTURE: &str = include_str!("../fixtures/video_timing.csv");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComputeParams {
    /// FLOPs per byte for classes 1, 2, 3.
    pub gamma_per_class: [f64; 3],
    pub overhead_s: f64,
    /// Byte rate of recorded video, used to calibrate the video classes.
    pub video_bytes_per_s: f64,
}

impl Default for ComputeParams {
    fn default() -> Self {
        // fitted from VIDEO_TIMING_FIXTURE on a 4 x 1.8 GHz x 4 board
        let video_gamma = 13_824.0;
        Self {
            gamma_per_class: [video_gamma, video_gamma, 1.0e3],
            overhead_s: 0.5,
            video_bytes_per_s: 150.0e6 / 90.0,
        }
    }
}

impl ComputeParams {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.gamma_per_class.iter().any(|g| !(*g > 0.0)) {
            return Err(Error::config("compute.gamma_per_class", "must be positive"));
        }
        if !(self.overhead_s >= 0.0) {
            return Err(Error::config("compute.overhead_s", "must be nonnegative"));
        }
        if !(self.video_bytes_per_s > 0.0) {
            return Err(Error::config("compute.video_bytes_per_s", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessingPlan {
    pub task_id: TaskId,
    pub beta_onboard: f64,
    pub flops_required: f64,
    pub delay_s: f64,
    pub energy_j: f64,
    pub residual_bytes: f64,
}

fn check_fraction(name: &str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must lie in [0, 1], got {value}")))
    }
}

pub fn task_flops(task: &Task, beta: f64, params: &ComputeParams) -> Result<f64> {
    check_fraction("beta", beta)?;
    Ok(beta * params.gamma_per_class[task.class.index()] * task.data_size_bytes)
}

/// `N_cores * f_CPU * eta_f`, FLOPs per second.
pub fn uav_capacity(uav: &UavSpec) -> f64 {
    uav.n_cores * uav.cpu_hz * uav.flops_per_cycle
}

pub fn processing_delay(flops: f64, uav: &UavSpec, params: &ComputeParams) -> Result<f64> {
    if !(flops >= 0.0) {
        return Err(Error::Domain(format!("negative FLOP count {flops}")));
    }
    let capacity = uav_capacity(uav);
    if !(capacity > 0.0) {
        return Err(Error::Domain("UAV has zero processing capacity".into()));
    }
    Ok(flops / capacity + params.overhead_s)
}

pub fn processing_energy(task: &Task, p_fraction: f64, learn: &LearnParams) -> Result<f64> {
    check_fraction("p_fraction", p_fraction)?;
    Ok(task.data_size_bytes * p_fraction * learn.process_energy_per_byte)
}

pub fn residual_storage(task: &Task, p_fraction: f64) -> Result<f64> {
    check_fraction("p_fraction", p_fraction)?;
    Ok(task.data_size_bytes * (1.0 - p_fraction))
}

/// Total FLOPs a UAV can execute over a mission of `horizon_s` seconds.
pub fn mission_flop_budget(uav: &UavSpec, horizon_s: f64) -> f64 {
    uav_capacity(uav) * horizon_s
}

/// Greedy onboard fraction: process as much of the task as the remaining
/// processing energy and FLOP budgets allow.
pub fn plan_processing(
    task: &Task,
    uav: &UavSpec,
    compute: &ComputeParams,
    learn: &LearnParams,
    energy_left_j: f64,
    flops_left: f64,
) -> ProcessingPlan {
    let full_energy = task.data_size_bytes * learn.process_energy_per_byte;
    let full_flops = compute.gamma_per_class[task.class.index()] * task.data_size_bytes;
    let mut beta: f64 = 1.0;
    if full_energy > 0.0 {
        beta = beta.min(energy_left_j.max(0.0) / full_energy);
    }
    if full_flops > 0.0 {
        beta = beta.min(flops_left.max(0.0) / full_flops);
    }
    let beta = beta.clamp(0.0, 1.0);
    // clamp so rounding in `beta` can never overdraw a budget
    let flops_required = (beta * full_flops).min(flops_left.max(0.0));
    ProcessingPlan {
        task_id: task.id,
        beta_onboard: beta,
        flops_required,
        delay_s: if beta > 0.0 { flops_required / uav_capacity(uav) + compute.overhead_s } else { 0.0 },
        energy_j: (full_energy * beta).min(energy_left_j.max(0.0)),
        residual_bytes: task.data_size_bytes * (1.0 - beta),
    }
}

/// Parses a `video_length_s,measured_delay_s` table.
pub fn parse_timing_table(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.deserialize::<(f64, f64)>() {
        rows.push(record?);
    }
    Ok(rows)
}

/// Least-squares fit `delay = slope * length + overhead`, converted to
/// FLOPs per byte for a board of the given capacity. Returns `(gamma, overhead_s)`.
pub fn calibrate_video_gamma(table: &[(f64, f64)], video_bytes_per_s: f64, capacity_flops: f64) -> Result<(f64, f64)> {
    if table.len() < 2 {
        return Err(Error::Domain("calibration needs at least two rows".into()));
    }
    let n = table.len() as f64;
    let mean_x = table.iter().map(|r| r.0).sum::<f64>() / n;
    let mean_y = table.iter().map(|r| r.1).sum::<f64>() / n;
    let sxx: f64 = table.iter().map(|r| (r.0 - mean_x).powi(2)).sum();
    let sxy: f64 = table.iter().map(|r| (r.0 - mean_x) * (r.1 - mean_y)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("calibration lengths are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    Ok((slope * capacity_flops / video_bytes_per_s, intercept))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point3;
    use crate::scenario::{TaskClass, TaskStatus, TaskValueParams};
    use proptest::prelude::*;

    fn task(class: TaskClass, size: f64) -> Task {
        Task {
            id: TaskId(3),
            position: Point3::default(),
            class,
            priority: 1,
            data_size_bytes: size,
            dwell_time_s: 0.0,
            value_params: TaskValueParams { k_m: 1.0, r_m: 0.0, tau_exp: 1.0 },
            status: TaskStatus::Unassigned,
        }
    }

    fn gamma_params(g: f64) -> ComputeParams {
        ComputeParams { gamma_per_class: [g; 3], overhead_s: 0.0, ..ComputeParams::default() }
    }

    #[test]
    fn flops_examples() {
        let t = task(TaskClass::UavVideo, 100.0);
        assert_eq!(task_flops(&t, 0.0, &gamma_params(10.0)).unwrap(), 0.0);
        assert_eq!(task_flops(&t, 0.5, &gamma_params(10.0)).unwrap(), 500.0);
        let big = task(TaskClass::EdgeVideo, 400.0e6);
        let p = ComputeParams::default();
        assert_eq!(task_flops(&big, 1.0, &p).unwrap(), 400.0e6 * 13_824.0);
        assert!(task_flops(&t, 1.5, &p).is_err());
        assert!(task_flops(&t, -0.1, &p).is_err());
    }

    #[test]
    fn capacity_examples() {
        let mut u = UavSpec { n_cores: 4.0, cpu_hz: 1.5e9, flops_per_cycle: 1.0, ..UavSpec::default() };
        assert_eq!(uav_capacity(&u), 6.0e9);
        u.n_cores = 1.0;
        u.cpu_hz = 1.0;
        assert_eq!(uav_capacity(&u), 1.0);
        assert_eq!(uav_capacity(&UavSpec::default()), 2.88e10);
    }

    #[test]
    fn delay_examples() {
        let p = ComputeParams { overhead_s: 0.1, ..ComputeParams::default() };
        assert_eq!(processing_delay(0.0, &UavSpec::default(), &p).unwrap(), 0.1);
        let u = UavSpec { n_cores: 4.0, cpu_hz: 1.5e9, flops_per_cycle: 1.0, ..UavSpec::default() };
        assert_eq!(processing_delay(6.0e9, &u, &gamma_params(1.0)).unwrap(), 1.0);
        let dead = UavSpec { n_cores: 0.0, ..UavSpec::default() };
        assert!(processing_delay(1.0, &dead, &p).is_err());
    }

    #[test]
    fn calibrated_delay_reproduces_fixture() {
        let table = parse_timing_table(VIDEO_TIMING_FIXTURE).unwrap();
        let p = ComputeParams::default();
        let u = UavSpec::default();
        for (len, measured) in table {
            let t = task(TaskClass::UavVideo, len * p.video_bytes_per_s);
            let d = processing_delay(task_flops(&t, 1.0, &p).unwrap(), &u, &p).unwrap();
            assert!((d - measured).abs() < 0.5, "{len}s video: model {d} vs table {measured}");
        }
    }

    #[test]
    fn default_gamma_matches_fit() {
        let table = parse_timing_table(VIDEO_TIMING_FIXTURE).unwrap();
        let p = ComputeParams::default();
        let (gamma, overhead) = calibrate_video_gamma(&table, p.video_bytes_per_s, uav_capacity(&UavSpec::default())).unwrap();
        assert!((gamma - p.gamma_per_class[0]).abs() / gamma < 1e-9, "{gamma}");
        assert!((overhead - p.overhead_s).abs() < 1e-9, "{overhead}");
    }

    #[test]
    fn energy_and_storage_examples() {
        let learn = LearnParams { process_energy_per_byte: 1e-6, ..LearnParams::default() };
        let t = task(TaskClass::SensorData, 1.0e6);
        assert_eq!(processing_energy(&t, 0.0, &learn).unwrap(), 0.0);
        assert!((processing_energy(&t, 1.0, &learn).unwrap() - 1.0).abs() < 1e-12);
        let video = task(TaskClass::UavVideo, 150.0e6);
        let d = LearnParams::default();
        assert!((processing_energy(&video, 1.0, &d).unwrap() - 150.0e6 * 2.88e-6).abs() < 1e-9);

        let big = task(TaskClass::EdgeVideo, 400.0e6);
        assert_eq!(residual_storage(&big, 1.0).unwrap(), 0.0);
        assert_eq!(residual_storage(&big, 0.0).unwrap(), 400.0e6);
        assert_eq!(residual_storage(&big, 0.25).unwrap(), 300.0e6);
    }

    #[test]
    fn greedy_plan_respects_budget() {
        let learn = LearnParams::default();
        let u = UavSpec::default();
        let p = ComputeParams::default();
        let t = task(TaskClass::EdgeVideo, 400.0e6);
        let full = 400.0e6 * learn.process_energy_per_byte;
        let plan = plan_processing(&t, &u, &p, &learn, full / 4.0, f64::INFINITY);
        assert!((plan.beta_onboard - 0.25).abs() < 1e-12);
        assert!((plan.energy_j - full / 4.0).abs() < 1e-9);
        assert!((plan.residual_bytes - 300.0e6).abs() < 1e-3);
        let plan = plan_processing(&t, &u, &p, &learn, 10.0 * full, f64::INFINITY);
        assert_eq!(plan.beta_onboard, 1.0);
        assert_eq!(plan.residual_bytes, 0.0);
        let none = plan_processing(&t, &u, &p, &learn, 0.0, f64::INFINITY);
        assert_eq!(none.beta_onboard, 0.0);
        assert_eq!(none.delay_s, 0.0);
    }

    proptest! {
        #[test]
        fn flops_linear(b1 in 0.0f64..0.5, b2 in 0.0f64..0.5, s1 in 1.0f64..1e9, s2 in 1.0f64..1e9) {
            let p = ComputeParams::default();
            let f = |beta: f64, s: f64| task_flops(&task(TaskClass::UavVideo, s), beta, &p).unwrap();
            let sum = f(b1 + b2, s1);
            prop_assert!((sum - (f(b1, s1) + f(b2, s1))).abs() <= 1e-9 * sum.abs().max(1.0));
            let sum = f(b1, s1 + s2);
            prop_assert!((sum - (f(b1, s1) + f(b1, s2))).abs() <= 1e-9 * sum.abs().max(1.0));
        }

        #[test]
        fn delay_at_least_overhead(flops in 0.0f64..1e13, overhead in 0.0f64..5.0) {
            let p = ComputeParams { overhead_s: overhead, ..ComputeParams::default() };
            let d = processing_delay(flops, &UavSpec::default(), &p).unwrap();
            prop_assert!(d >= overhead);
            prop_assert_eq!(d == overhead, flops == 0.0 || flops / 2.88e10 + overhead == overhead);
        }
    }
}
