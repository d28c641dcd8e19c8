//! UAV-to-ground and UAV-to-UAV link rates.
//!
//! Air-to-ground links mix LoS and NLoS gains weighted by an elevation-driven
//! LoS probability over free-space path loss; UAV-to-UAV links are pure
//! free space. Rates are Shannon capacities in bits per second.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point3;
use crate::scenario::{ChannelParams, UavSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub distance_m: f64,
    pub elevation_deg: f64,
    pub path_loss: f64,
    pub p_los: f64,
    pub gain: f64,
    pub snr: f64,
    pub rate_bps: f64,
}

/// Free-space path loss `(4 pi f_c d / c)^2`.
pub fn path_loss_u2g(distance_m: f64, params: &ChannelParams) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::Domain(format!("path loss needs a positive distance, got {distance_m}")));
    }
    let ratio = 4.0 * std::f64::consts::PI * params.carrier_hz * distance_m / params.light_speed_mps;
    Ok(ratio * ratio)
}

/// Sigmoid LoS probability in the elevation angle (degrees).
pub fn p_los(elevation_deg: f64, params: &ChannelParams) -> f64 {
    let (a, b) = (params.los_a, params.los_b);
    1.0 / (1.0 + a * (-b * (elevation_deg - a)).exp())
}

/// Elevation of `uav` seen from `node`, degrees in [0, 90].
pub fn elevation_deg(uav_pos: &Point3, node_pos: &Point3) -> f64 {
    let dz = (uav_pos.z - node_pos.z).abs();
    dz.atan2(uav_pos.horizontal_distance(node_pos)).to_degrees()
}

fn distinct(a: &Point3, b: &Point3) -> Result<f64> {
    let d = a.distance(b);
    if d > 0.0 {
        Ok(d)
    } else {
        Err(Error::Domain("link endpoints coincide".into()))
    }
}

pub fn channel_gain_u2g(uav_pos: &Point3, node_pos: &Point3, params: &ChannelParams) -> Result<f64> {
    Ok(link_geometry(uav_pos, node_pos, params)?.2)
}

fn link_geometry(uav_pos: &Point3, node_pos: &Point3, params: &ChannelParams) -> Result<(f64, f64, f64, f64, f64)> {
    let d = distinct(uav_pos, node_pos)?;
    let theta = elevation_deg(uav_pos, node_pos);
    let loss = path_loss_u2g(d, params)?;
    let plos = p_los(theta, params);
    let gain = (plos * params.gain_los + (1.0 - plos) * params.gain_nlos) / loss;
    Ok((d, theta, gain, loss, plos))
}

fn shannon(bandwidth_hz: f64, snr: f64) -> f64 {
    bandwidth_hz * (1.0 + snr).log2()
}

/// Full U2G budget between a UAV and a ground node.
pub fn link_budget_u2g(uav: &UavSpec, uav_pos: &Point3, node_pos: &Point3, params: &ChannelParams) -> Result<LinkBudget> {
    if !(params.bandwidth_u2g_hz > 0.0) {
        return Err(Error::Domain("U2G bandwidth must be positive".into()));
    }
    let (distance_m, elevation_deg, gain, path_loss, p_los) = link_geometry(uav_pos, node_pos, params)?;
    let snr = uav.transmit_power_w * gain / (params.noise_psd_u2g * params.bandwidth_u2g_hz);
    Ok(LinkBudget {
        distance_m,
        elevation_deg,
        path_loss,
        p_los,
        gain,
        snr,
        rate_bps: shannon(params.bandwidth_u2g_hz, snr),
    })
}

pub fn rate_u2g(uav: &UavSpec, uav_pos: &Point3, node_pos: &Point3, params: &ChannelParams) -> Result<f64> {
    Ok(link_budget_u2g(uav, uav_pos, node_pos, params)?.rate_bps)
}

/// Free-space U2U rate with the configured antenna gains (unit by default).
pub fn rate_u2u(uav_i: &UavSpec, pos_i: &Point3, pos_j: &Point3, params: &ChannelParams) -> Result<f64> {
    let d = distinct(pos_i, pos_j)?;
    let gain = params.antenna_gain_tx * params.antenna_gain_rx / path_loss_u2g(d, params)?;
    let snr = uav_i.transmit_power_w * gain / (params.noise_psd_u2u * params.bandwidth_u2u_hz);
    Ok(shannon(params.bandwidth_u2u_hz, snr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> ChannelParams {
        ChannelParams::default()
    }

    // Independent evaluation: dB-domain composition of the same link chain.
    fn oracle_rate_db(power_w: f64, d: f64, elev_deg: f64, bw: f64, noise_total_w: f64, p: &ChannelParams) -> f64 {
        let fspl_db = 20.0 * (4.0 * std::f64::consts::PI * p.carrier_hz * d / p.light_speed_mps).log10();
        let pl = 1.0 / (1.0 + p.los_a * (p.los_b * (p.los_a - elev_deg)).exp());
        let mix_db = 10.0 * (pl * p.gain_los + (1.0 - pl) * p.gain_nlos).log10();
        let snr_db = 10.0 * power_w.log10() + mix_db - fspl_db - 10.0 * noise_total_w.log10();
        bw * (1.0 + 10f64.powf(snr_db / 10.0)).ln() / std::f64::consts::LN_2
    }

    #[test]
    fn unit_argument_path_loss() {
        let p = params();
        let d = p.light_speed_mps / (4.0 * std::f64::consts::PI * p.carrier_hz);
        assert!((path_loss_u2g(d, &p).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn path_loss_quadratic_and_reference_value() {
        let p = ChannelParams {
            light_speed_mps: 3.0e8,
            ..params()
        };
        let l100 = path_loss_u2g(100.0, &p).unwrap();
        assert!((path_loss_u2g(200.0, &p).unwrap() / l100 - 4.0).abs() < 1e-12);
        // (4 pi 2e9 100 / 3e8)^2 = 8377.580409572781^2
        let expected = 70_183_853.518_857_66_f64;
        assert!((l100 - expected).abs() / expected < 1e-9, "{l100}");
        assert!(path_loss_u2g(0.0, &p).is_err());
        assert!(path_loss_u2g(-1.0, &p).is_err());
    }

    #[test]
    fn los_probability_examples() {
        let p = params();
        assert!((p_los(p.los_a, &p) - 1.0 / (1.0 + p.los_a)).abs() < 1e-15);
        let steep = ChannelParams { los_b: 5.0, ..params() };
        assert!(p_los(90.0, &steep) > 1.0 - 1e-12);
        // 1 / (1 + 9.61 exp(-0.16 * 35.39))
        let v = p_los(45.0, &p);
        assert!((v - 0.967_691_899_947_242_3).abs() < 1e-12, "{v}");
    }

    #[test]
    fn gain_examples() {
        let uav = Point3::new(0.0, 0.0, 100.0);
        let node = Point3::new(30.0, 40.0, 0.0);
        let equal = ChannelParams { gain_los: 0.5, gain_nlos: 0.5, ..params() };
        let l = path_loss_u2g(uav.distance(&node), &equal).unwrap();
        assert!((channel_gain_u2g(&uav, &node, &equal).unwrap() - 0.5 / l).abs() < 1e-24);

        // P_LoS = 1 when a = 0 is not allowed by the sigmoid form, so push b up at 90 deg.
        let pure = ChannelParams { los_b: 50.0, ..params() };
        let above = Point3::new(0.0, 0.0, 0.0);
        let l = path_loss_u2g(100.0, &pure).unwrap();
        let g = channel_gain_u2g(&uav, &above, &pure).unwrap();
        assert!((g - pure.gain_los / l).abs() / g < 1e-12);

        assert!(channel_gain_u2g(&uav, &uav, &params()).is_err());
    }

    #[test]
    fn shannon_examples() {
        let spec = UavSpec { transmit_power_w: 0.0, ..UavSpec::default() };
        let p = params();
        let a = Point3::new(0.0, 0.0, 100.0);
        let b = Point3::new(10.0, 0.0, 0.0);
        assert_eq!(rate_u2g(&spec, &a, &b, &p).unwrap(), 0.0);
        assert_eq!(rate_u2u(&spec, &a, &b, &p).unwrap(), 0.0);
        assert_eq!(shannon(1.0, 3.0), 2.0);
    }

    #[test]
    fn u2g_rate_matches_db_oracle() {
        let p = params();
        let spec = UavSpec::default();
        for (h, horiz) in [(100.0, 0.0), (60.0, 80.0), (100.0, 500.0)] {
            let uav = Point3::new(horiz, 0.0, h);
            let node = Point3::new(0.0, 0.0, 0.0);
            let d = uav.distance(&node);
            let elev = (h / horiz).atan().to_degrees();
            let expected = oracle_rate_db(5.0, d, elev, 10.0e6, 1.0e-13, &p);
            let got = rate_u2g(&spec, &uav, &node, &p).unwrap();
            assert!(got.is_finite() && got > 0.0);
            assert!((got - expected).abs() / expected < 1e-6, "{got} vs {expected}");
        }
    }

    #[test]
    fn u2u_rate_matches_oracle() {
        let p = params();
        let spec = UavSpec::default();
        let a = Point3::new(0.0, 0.0, 100.0);
        let b = Point3::new(200.0, 0.0, 100.0);
        let fspl_db = 20.0 * (4.0 * std::f64::consts::PI * p.carrier_hz * 200.0 / p.light_speed_mps).log10();
        let snr = 10f64.powf((10.0 * 5.0f64.log10() - fspl_db + 130.0) / 10.0);
        let expected = 40.0e6 * (1.0 + snr).log2();
        let got = rate_u2u(&spec, &a, &b, &p).unwrap();
        assert!((got - expected).abs() / expected < 1e-6, "{got} vs {expected}");
        assert!(rate_u2u(&spec, &a, &a, &p).is_err());
    }

    proptest! {
        #[test]
        fn rates_decrease_with_distance(d in 1.0f64..2000.0, extra in 1.0f64..500.0) {
            let p = params();
            let spec = UavSpec::default();
            let node = Point3::new(0.0, 0.0, 0.0);
            let near = Point3::new(d, 0.0, 100.0);
            let far = Point3::new(d + extra, 0.0, 100.0);
            let r_near = rate_u2g(&spec, &near, &node, &p).unwrap();
            let r_far = rate_u2g(&spec, &far, &node, &p).unwrap();
            prop_assert!(r_near > r_far && r_far >= 0.0 && r_near.is_finite());
            let a = Point3::new(0.0, 0.0, 100.0);
            prop_assert!(rate_u2u(&spec, &a, &near, &p).unwrap() > rate_u2u(&spec, &a, &far, &p).unwrap());
        }

        #[test]
        fn los_probability_bounded_increasing(t in 0.0f64..89.0, dt in 0.01f64..1.0) {
            let p = params();
            let lo = p_los(t, &p);
            let hi = p_los(t + dt, &p);
            prop_assert!(lo > 0.0 && hi < 1.0 + 1e-15 && hi > lo);
        }

        #[test]
        fn gain_between_nlos_and_los(x in 0.0f64..1500.0, h in 1.0f64..150.0) {
            let p = params();
            let uav = Point3::new(x, 0.0, h);
            let node = Point3::new(0.0, 0.0, 0.0);
            let l = path_loss_u2g(uav.distance(&node), &p).unwrap();
            let g = channel_gain_u2g(&uav, &node, &p).unwrap();
            prop_assert!(g >= p.gain_nlos / l * (1.0 - 1e-12) && g <= p.gain_los / l * (1.0 + 1e-12));
        }

        #[test]
        fn doubling_distance_quarters_gain(d in 0.5f64..5000.0) {
            let p = params();
            let r = path_loss_u2g(2.0 * d, &p).unwrap() / path_loss_u2g(d, &p).unwrap();
            prop_assert!((r - 4.0).abs() < 1e-12);
        }
    }
}
