//! Rotary-wing power models and per-task collection energy.
//!
//! Acceleration and deceleration are not modelled: every manoeuvre is billed
//! at the steady-state power of its phase.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point3;
use crate::scenario::{RotorParams, Task, TaskClass, UavSpec};

/// Steady-state powers and altitude-change times of one UAV type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerProfile {
    pub p_hover_w: f64,
    pub p_cruise_w: f64,
    pub p_cruise_low_w: f64,
    pub p_ascent_w: f64,
    pub p_descent_w: f64,
    /// z_min -> z_max at ascend speed.
    pub t_ascend_s: f64,
    /// z_max -> z_min at descend speed.
    pub t_descend_s: f64,
    /// ground -> z_max, used by edge-video collection.
    pub t_ground_ascend_s: f64,
    /// z_max -> ground.
    pub t_ground_descend_s: f64,
}

impl PowerProfile {
    pub fn for_uav(uav: &UavSpec) -> Result<Self> {
        let r = &uav.rotor;
        let band = (uav.z_max_m - uav.z_min_m).abs();
        let profile = Self {
            p_hover_w: hover_power(r)?,
            p_cruise_w: cruise_power(r, uav.cruise_speed_mps)?,
            p_cruise_low_w: cruise_power(r, uav.cruise_low_speed_mps)?,
            p_ascent_w: ascent_power(r, uav.ascend_speed_mps)?,
            p_descent_w: descent_power(r, uav.descend_speed_mps)?,
            t_ascend_s: band / uav.ascend_speed_mps,
            t_descend_s: band / uav.descend_speed_mps,
            t_ground_ascend_s: uav.z_max_m / uav.ascend_speed_mps,
            t_ground_descend_s: uav.z_max_m / uav.descend_speed_mps,
        };
        if profile.p_descent_w < 0.0 {
            return Err(Error::Domain(format!(
                "descent power is negative ({} W) at {} m/s",
                profile.p_descent_w, uav.descend_speed_mps
            )));
        }
        Ok(profile)
    }
}

/// Horizontal plus vertical separation, summed.
pub fn distance_u2t(uav_pos: &Point3, task_pos: &Point3) -> f64 {
    uav_pos.horizontal_distance(task_pos) + (task_pos.z - uav_pos.z).abs()
}

fn check_rotor(r: &RotorParams) -> Result<()> {
    let fields = [
        r.weight_n,
        r.n_rotors,
        r.air_density,
        r.rotor_disk_area_m2,
        r.thrust_coeff,
        r.profile_drag_coeff,
        r.rotor_solidity,
        r.induced_power_factor,
        r.hover_induced_velocity_mps,
        r.flat_plate_area_horiz_m2,
        r.flat_plate_area_vert_m2,
    ];
    if fields.iter().all(|v| *v > 0.0 && v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain("rotor parameters must be strictly positive".into()))
    }
}

fn blade_profile_power(r: &RotorParams) -> f64 {
    r.weight_n.powf(1.5) / (r.n_rotors * r.air_density * r.rotor_disk_area_m2).sqrt()
        * r.thrust_coeff.powf(-1.5)
        * (r.profile_drag_coeff / 8.0)
        * r.rotor_solidity
}

fn induced_hover_power(r: &RotorParams) -> f64 {
    r.weight_n.powf(1.5) / (2.0 * r.n_rotors * r.air_density * r.rotor_disk_area_m2).sqrt()
        * (1.0 + r.induced_power_factor)
}

pub fn hover_power(r: &RotorParams) -> Result<f64> {
    check_rotor(r)?;
    Ok(blade_profile_power(r) + induced_hover_power(r))
}

pub fn cruise_power(r: &RotorParams, v: f64) -> Result<f64> {
    check_rotor(r)?;
    if !(v >= 0.0) {
        return Err(Error::Domain(format!("cruise speed must be nonnegative, got {v}")));
    }
    let v0 = r.hover_induced_velocity_mps;
    let v2 = v * v;
    let v4 = v2 * v2;
    let blade_speed_term = 3.0 / 8.0
        * r.profile_drag_coeff
        * (r.weight_n * r.n_rotors * r.air_density * r.rotor_disk_area_m2 / r.thrust_coeff).sqrt()
        * r.rotor_solidity
        * v2;
    let induced_factor = ((1.0 + v4 / (4.0 * v0.powi(4))).sqrt() - v2 / (2.0 * v0 * v0)).sqrt();
    let parasite = r.n_rotors / 2.0 * r.flat_plate_area_horiz_m2 * r.air_density * v2 * v;
    Ok(blade_profile_power(r) + blade_speed_term + induced_hover_power(r) * induced_factor + parasite)
}

fn vertical_power(r: &RotorParams, v: f64, sign: f64) -> Result<f64> {
    check_rotor(r)?;
    if !(v >= 0.0) {
        return Err(Error::Domain(format!("vertical speed must be nonnegative, got {v}")));
    }
    let w = r.weight_n;
    let drag = r.n_rotors / 4.0 * r.flat_plate_area_vert_m2 * r.air_density;
    let radicand = (1.0 + sign * r.flat_plate_area_vert_m2 / r.rotor_disk_area_m2) * v * v
        + 2.0 * w / (r.n_rotors * r.air_density * r.rotor_disk_area_m2);
    if radicand < 0.0 {
        return Err(Error::Domain(format!("vertical power radicand is negative at {v} m/s")));
    }
    Ok(0.5 * w * v + sign * drag * v.powi(3) + (w / 2.0 + sign * drag * v * v) * radicand.sqrt())
}

pub fn ascent_power(r: &RotorParams, v: f64) -> Result<f64> {
    vertical_power(r, v, 1.0)
}

pub fn descent_power(r: &RotorParams, v: f64) -> Result<f64> {
    vertical_power(r, v, -1.0)
}

/// Seconds the UAV spends on site, from leaving cruise altitude to regaining it.
pub fn collection_duration(task: &Task, profile: &PowerProfile, link_rate_bps: f64) -> Result<f64> {
    Ok(match task.class {
        TaskClass::UavVideo | TaskClass::SensorData => profile.t_descend_s + task.dwell_time_s + profile.t_ascend_s,
        TaskClass::EdgeVideo => {
            profile.t_ground_descend_s + edge_transfer_time(task, link_rate_bps)? + profile.t_ground_ascend_s
        }
    })
}

fn edge_transfer_time(task: &Task, link_rate_bps: f64) -> Result<f64> {
    if !(link_rate_bps > 0.0) {
        return Err(Error::Domain(format!("{} needs a positive link rate", task.id)));
    }
    Ok(task.data_size_bytes * 8.0 / link_rate_bps)
}

/// Energy of the collection manoeuvre for one task (flight battery).
pub fn task_energy(task: &Task, uav: &UavSpec, profile: &PowerProfile, link_rate_bps: f64) -> Result<f64> {
    let _ = uav;
    Ok(match task.class {
        TaskClass::UavVideo => {
            profile.p_descent_w * profile.t_descend_s
                + profile.p_cruise_low_w * task.dwell_time_s
                + profile.p_ascent_w * profile.t_ascend_s
        }
        TaskClass::EdgeVideo => {
            profile.p_descent_w * profile.t_ground_descend_s
                + profile.p_hover_w * edge_transfer_time(task, link_rate_bps)?
                + profile.p_ascent_w * profile.t_ground_ascend_s
        }
        TaskClass::SensorData => {
            profile.p_descent_w * profile.t_descend_s
                + profile.p_cruise_w * task.dwell_time_s
                + profile.p_ascent_w * profile.t_ascend_s
        }
    })
}

/// Energy to fly a straight leg: horizontal part at cruise power, vertical
/// part at ascent or descent power.
pub fn leg_flight_energy(from: &Point3, to: &Point3, uav: &UavSpec, profile: &PowerProfile) -> f64 {
    let horizontal = from.horizontal_distance(to) / uav.cruise_speed_mps * profile.p_cruise_w;
    let dz = to.z - from.z;
    let vertical = if dz > 0.0 {
        dz / uav.ascend_speed_mps * profile.p_ascent_w
    } else {
        -dz / uav.descend_speed_mps * profile.p_descent_w
    };
    horizontal + vertical
}

pub fn leg_duration(from: &Point3, to: &Point3, uav: &UavSpec) -> f64 {
    let dz = to.z - from.z;
    let vertical = if dz > 0.0 { dz / uav.ascend_speed_mps } else { -dz / uav.descend_speed_mps };
    from.horizontal_distance(to) / uav.cruise_speed_mps + vertical
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{TaskId, TaskStatus, TaskValueParams};
    use proptest::prelude::*;

    fn example_rotor() -> RotorParams {
        RotorParams {
            weight_n: 20.0,
            n_rotors: 4.0,
            air_density: 1.225,
            rotor_disk_area_m2: 0.05,
            thrust_coeff: 0.1,
            profile_drag_coeff: 0.01,
            rotor_solidity: 0.05,
            induced_power_factor: 0.1,
            hover_induced_velocity_mps: (20.0f64 / (2.0 * 4.0 * 1.225 * 0.05)).sqrt(),
            flat_plate_area_horiz_m2: 0.01,
            flat_plate_area_vert_m2: 0.02,
        }
    }

    fn task(class: TaskClass, size: f64, dwell: f64) -> Task {
        Task {
            id: TaskId(0),
            position: Point3::default(),
            class,
            priority: 1,
            data_size_bytes: size,
            dwell_time_s: dwell,
            value_params: TaskValueParams { k_m: 1.0, r_m: 0.0, tau_exp: 1.0 },
            status: TaskStatus::Unassigned,
        }
    }

    fn unit_profile(t_alt: f64) -> PowerProfile {
        PowerProfile {
            p_hover_w: 1.0,
            p_cruise_w: 1.0,
            p_cruise_low_w: 1.0,
            p_ascent_w: 1.0,
            p_descent_w: 1.0,
            t_ascend_s: t_alt,
            t_descend_s: t_alt,
            t_ground_ascend_s: t_alt,
            t_ground_descend_s: t_alt,
        }
    }

    // Values below were evaluated independently with Python's `math`
    // module term by term from the closed forms.
    const HOVER_REF: f64 = 140.909_987_157_129_65;
    const CRUISE15_REF: f64 = 142.271_579_810_209_15;
    const ASCENT2_REF: f64 = 151.417_676_542_577_74;
    const DESCENT2_REF: f64 = 147.253_667_170_396_7;

    #[test]
    fn distance_examples() {
        let o = Point3::new(1.0, 2.0, 3.0);
        assert_eq!(distance_u2t(&o, &o), 0.0);
        assert_eq!(distance_u2t(&Point3::default(), &Point3::new(3.0, 4.0, 0.0)), 5.0);
        assert_eq!(distance_u2t(&Point3::default(), &Point3::new(3.0, 4.0, 2.0)), 7.0);
    }

    #[test]
    fn hover_reference_and_scaling() {
        let r = example_rotor();
        let h = hover_power(&r).unwrap();
        assert!((h - HOVER_REF).abs() / HOVER_REF < 1e-9, "{h}");
        let bigger = RotorParams { rotor_disk_area_m2: 0.1, ..r };
        assert!((hover_power(&bigger).unwrap() * 2f64.sqrt() - h).abs() / h < 1e-12);
        let more_k = RotorParams { induced_power_factor: 0.2, ..r };
        assert!(hover_power(&more_k).unwrap() > h);
        let bad = RotorParams { air_density: 0.0, ..r };
        assert!(hover_power(&bad).is_err());
    }

    #[test]
    fn cruise_reference_and_limits() {
        let r = example_rotor();
        let h = hover_power(&r).unwrap();
        let c0 = cruise_power(&r, 0.0).unwrap();
        assert!((c0 - h).abs() < 1e-9 * h);
        let c15 = cruise_power(&r, 15.0).unwrap();
        assert!((c15 - CRUISE15_REF).abs() / CRUISE15_REF < 1e-9, "{c15}");
        // parasite term alone: (4/2) 0.01 1.225 10^3
        let parasite = r.n_rotors / 2.0 * r.flat_plate_area_horiz_m2 * r.air_density * 1000.0;
        assert!((parasite - 24.5).abs() < 1e-12);
        assert!(cruise_power(&r, -1.0).is_err());
    }

    #[test]
    fn vertical_reference_values() {
        let r = example_rotor();
        let a = ascent_power(&r, 2.0).unwrap();
        let d = descent_power(&r, 2.0).unwrap();
        assert!((a - ASCENT2_REF).abs() / ASCENT2_REF < 1e-9, "{a}");
        assert!((d - DESCENT2_REF).abs() / DESCENT2_REF < 1e-9, "{d}");
        let still = r.weight_n / 2.0 * (2.0 * r.weight_n / (r.n_rotors * r.air_density * r.rotor_disk_area_m2)).sqrt();
        assert!((ascent_power(&r, 0.0).unwrap() - still).abs() < 1e-12);
        assert!((descent_power(&r, 0.0).unwrap() - still).abs() < 1e-12);
    }

    #[test]
    fn descent_rejects_negative_radicand() {
        // S_FP_perp > A makes the descent radicand negative for large speeds
        let r = RotorParams { flat_plate_area_vert_m2: 0.5, ..example_rotor() };
        let err = descent_power(&r, 50.0).unwrap_err();
        assert!(err.to_string().contains("50"), "{err}");
        assert!(descent_power(&r, 1.0).is_ok());
    }

    #[test]
    fn task_energy_examples() {
        let u = UavSpec::default();
        let t1 = task(TaskClass::UavVideo, 1.0, 60.0);
        assert_eq!(task_energy(&t1, &u, &unit_profile(10.0), 1.0).unwrap(), 80.0);

        let mut p = unit_profile(0.0);
        p.p_hover_w = 100.0;
        let t2 = task(TaskClass::EdgeVideo, 1.0e6, 0.0);
        assert_eq!(task_energy(&t2, &u, &p, 8.0e6).unwrap(), 100.0);
        assert!(task_energy(&t2, &u, &p, 0.0).is_err());
    }

    #[test]
    fn sensor_task_energy_composed() {
        // Composition with the default fleet: 50 m band at 3 m/s, 5 s dwell.
        let u = UavSpec::default();
        let prof = PowerProfile::for_uav(&u).unwrap();
        let t3 = task(TaskClass::SensorData, 5.0e6, 5.0);
        let e = task_energy(&t3, &u, &prof, 1.0).unwrap();
        let t_alt = 50.0 / 3.0;
        let expected = DESCENT_3_REF * t_alt + CRUISE15_REF * 5.0 + ASCENT_3_REF * t_alt;
        assert!((e - expected).abs() / expected < 1e-9, "{e} vs {expected}");
    }

    const ASCENT_3_REF: f64 = 166.199_860_722_693_16;
    const DESCENT_3_REF: f64 = 156.346_047_656_014_92;

    #[test]
    fn leg_energy_examples() {
        let u = UavSpec { cruise_speed_mps: 15.0, ..UavSpec::default() };
        let mut p = PowerProfile::for_uav(&u).unwrap();
        let a = Point3::new(0.0, 0.0, 100.0);
        assert_eq!(leg_flight_energy(&a, &a, &u, &p), 0.0);
        p.p_cruise_w = 300.0;
        let b = Point3::new(1500.0, 0.0, 100.0);
        assert!((leg_flight_energy(&a, &b, &u, &p) - 30_000.0).abs() < 1e-9);
        // 300 m east plus 50 m climb: 20 s cruise, 50/3 s ascent
        let c = Point3::new(300.0, 0.0, 150.0);
        let expected = 20.0 * 300.0 + 50.0 / u.ascend_speed_mps * p.p_ascent_w;
        assert!((leg_flight_energy(&a, &c, &u, &p) - expected).abs() < 1e-9);
        assert!((leg_duration(&a, &c, &u) - (20.0 + 50.0 / 3.0)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn ascent_exceeds_descent(v in 0.01f64..10.0) {
            let r = example_rotor();
            prop_assert!(ascent_power(&r, v).unwrap() > descent_power(&r, v).unwrap());
        }

        #[test]
        fn task_energy_floor(size in 1.0e6f64..5e8, dwell in 0.0f64..120.0, class in 0usize..3) {
            let u = UavSpec::default();
            let p = PowerProfile::for_uav(&u).unwrap();
            let t = task(TaskClass::ALL[class], size, dwell);
            let e = task_energy(&t, &u, &p, 1.0e8).unwrap();
            let floor = match t.class {
                TaskClass::EdgeVideo => p.p_descent_w * p.t_ground_descend_s + p.p_ascent_w * p.t_ground_ascend_s,
                _ => p.p_descent_w * p.t_descend_s + p.p_ascent_w * p.t_ascend_s,
            };
            prop_assert!(e >= floor);
        }
    }

    #[test]
    fn powers_are_continuous() {
        let r = example_rotor();
        let step = 1e-4;
        let mut v = 0.0;
        while v < 20.0 {
            for f in [cruise_power, ascent_power, descent_power] {
                let jump = (f(&r, v + step).unwrap() - f(&r, v).unwrap()).abs();
                assert!(jump < 0.05, "jump {jump} at {v}");
            }
            v += 0.01;
        }
    }
}
