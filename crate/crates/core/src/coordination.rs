//! Information sharing between stations: proximity exchange between UAVs of
//! different stations, periodic all-station synchronization, exponential
//! decay of stale peer information, conflict release after a refresh, and
//! closed-form staleness-gap diagnostics.

use std::collections::BTreeSet;
use std::hash::{DefaultHasher, Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::env::{EnvState, Phase};
use crate::error::{Error, Result};
use crate::geom::Point3;
use crate::routing::CostModel;
use crate::scenario::{StationId, TaskId, UavId};

/// What one station last heard about one UAV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UavSummary {
    pub uav: UavId,
    /// Remaining flight battery as a fraction of capacity.
    pub battery_frac: f64,
    /// Battery fraction if the UAV can still take tasks, else 0.
    pub availability: f64,
    pub position: Point3,
    pub phase: Phase,
}

/// A station's record of one station (possibly itself).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerEntry {
    pub station: StationId,
    pub last_update_step: u64,
    pub uavs: Vec<UavSummary>,
    /// Tasks that station's UAVs are heading to or have queued.
    pub planned: BTreeSet<TaskId>,
    /// Tasks that station's UAVs have collected.
    pub collected: BTreeSet<TaskId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationBeliefs {
    pub owner: StationId,
    /// Indexed by station id; the owner's entry is kept current.
    pub entries: Vec<PeerEntry>,
    /// Tasks found already collected when one of the owner's UAVs arrived.
    pub discovered: BTreeSet<TaskId>,
}

impl StationBeliefs {
    /// Every task the owner believes collected.
    pub fn known_collected(&self) -> BTreeSet<TaskId> {
        let mut out = self.discovered.clone();
        for e in &self.entries {
            out.extend(e.collected.iter().copied());
        }
        out
    }

    /// Tasks the owner believes other stations have planned.
    pub fn peer_planned(&self) -> BTreeSet<TaskId> {
        self.entries
            .iter()
            .filter(|e| e.station != self.owner)
            .flat_map(|e| e.planned.iter().copied())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ShareKind {
    Proximity { uav_i: UavId, uav_j: UavId },
    Periodic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareEvent {
    pub kind: ShareKind,
    pub step: u64,
    pub digest: String,
}

/// Decayed estimate of a magnitude last known at `last_update_step`.
///
/// The exponent uses the full age since the last update and is applied to
/// the last known value, so ages compose multiplicatively.
pub fn decay_estimate(last_known: f64, last_update_step: u64, t: u64, lambda: f64) -> Result<f64> {
    if t < last_update_step {
        return Err(Error::Clock { now: t, last: last_update_step });
    }
    Ok(last_known * (-lambda * (t - last_update_step) as f64).exp())
}

pub fn worst_case_gap(i0: f64, lambda: f64, t0: u64) -> f64 {
    i0 * (-lambda * t0 as f64).exp()
}

/// Binomial expectation of the decayed magnitude over `t0` steps where each
/// step is refreshed with probability `(1-p)^(k-1)`, normalized by the
/// total probability mass accumulated in the same loop.
pub fn expected_gap(i0: f64, lambda: f64, t0: u64, p: f64, k: u32) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("p must lie in [0, 1], got {p}")));
    }
    if k < 2 {
        return Err(Error::Domain(format!("needs at least two stations, got {k}")));
    }
    let q = (1.0 - p).powi(k as i32 - 1);
    let mut weighted = 0.0;
    let mut mass = 0.0;
    let mut ln_binom = 0.0; // ln C(t0, n)
    for n in 0..=t0 {
        if n > 0 {
            ln_binom += ((t0 - n + 1) as f64).ln() - (n as f64).ln();
        }
        let pmf = if q == 0.0 {
            if n == 0 { 1.0 } else { 0.0 }
        } else if q == 1.0 {
            if n == t0 { 1.0 } else { 0.0 }
        } else {
            (ln_binom + n as f64 * q.ln() + (t0 - n) as f64 * (1.0 - q).ln()).exp()
        };
        weighted += pmf * (-lambda * n as f64).exp();
        mass += pmf;
    }
    Ok(i0 * (weighted / mass))
}

/// Current truth about `station`, as it would be shared.
pub fn truth_entry(state: &EnvState, station: StationId, step: u64) -> PeerEntry {
    let mut entry = PeerEntry {
        station,
        last_update_step: step,
        uavs: Vec::new(),
        planned: BTreeSet::new(),
        collected: BTreeSet::new(),
    };
    for u in state.uavs.iter().filter(|u| u.station == station) {
        entry.uavs.push(UavSummary {
            uav: u.id,
            battery_frac: u.flight_battery_j / u.flight_capacity_j,
            availability: if u.accepts_tasks() { u.flight_battery_j / u.flight_capacity_j } else { 0.0 },
            position: u.position,
            phase: u.phase,
        });
        entry.planned.extend(u.target.iter().copied());
        entry.planned.extend(u.pending.iter().copied());
        entry.collected.extend(u.collected.iter().copied());
    }
    entry
}

fn digest(entries: &[&PeerEntry], step: u64) -> String {
    let mut h = DefaultHasher::new();
    step.hash(&mut h);
    for e in entries {
        e.station.hash(&mut h);
        e.planned.hash(&mut h);
        e.collected.hash(&mut h);
    }
    format!("{:016x}", h.finish())
}

/// Refreshes the owner's own entry; called whenever state changes.
pub fn refresh_own(state: &mut EnvState, step: u64) {
    for s in 0..state.stations.len() {
        let entry = truth_entry(state, StationId(s), step);
        state.stations[s].entries[s] = entry;
    }
}

fn refresh_pair(state: &mut EnvState, a: StationId, b: StationId, step: u64) -> String {
    let ea = truth_entry(state, a, step);
    let eb = truth_entry(state, b, step);
    let d = digest(&[&ea, &eb], step);
    state.stations[a.0].entries[b.0] = eb;
    state.stations[b.0].entries[a.0] = ea;
    d
}

/// Exchanges beliefs for every cross-station UAV pair within `d_threshold_m`
/// (inclusive). A nonpositive threshold disables the exchange. Returns the
/// events and the refreshed station pairs.
pub fn proximity_exchange(
    state: &mut EnvState,
    d_threshold_m: f64,
    step: u64,
) -> (Vec<ShareEvent>, Vec<(StationId, StationId)>) {
    let mut events = Vec::new();
    let mut pairs: Vec<(StationId, StationId)> = Vec::new();
    if d_threshold_m <= 0.0 {
        return (events, pairs);
    }
    let airborne: Vec<(UavId, StationId, Point3)> = state
        .uavs
        .iter()
        .filter(|u| u.is_airborne())
        .map(|u| (u.id, u.station, u.position))
        .collect();
    for (i, &(ui, si, pi)) in airborne.iter().enumerate() {
        for &(uj, sj, pj) in &airborne[i + 1..] {
            if si != sj && pi.distance(&pj) <= d_threshold_m {
                let d = refresh_pair(state, si, sj, step);
                events.push(ShareEvent { kind: ShareKind::Proximity { uav_i: ui, uav_j: uj }, step, digest: d });
                let key = if si < sj { (si, sj) } else { (sj, si) };
                if !pairs.contains(&key) {
                    pairs.push(key);
                }
            }
        }
    }
    (events, pairs)
}

/// Full refresh of every station's beliefs when `t` is a multiple of `t0`.
pub fn periodic_sync(state: &mut EnvState, t: u64, t0: u64) -> Option<ShareEvent> {
    if t0 == 0 || t % t0 != 0 {
        return None;
    }
    let n = state.stations.len();
    let truth: Vec<PeerEntry> = (0..n).map(|s| truth_entry(state, StationId(s), t)).collect();
    for beliefs in &mut state.stations {
        beliefs.entries = truth.clone();
    }
    let refs: Vec<&PeerEntry> = truth.iter().collect();
    Some(ShareEvent { kind: ShareKind::Periodic, step: t, digest: digest(&refs, t) })
}

/// A task released from a UAV's queued stops after a refresh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Release {
    pub task: TaskId,
    pub uav: UavId,
    pub station: StationId,
    /// True when released because the task was already collected.
    pub collected: bool,
}

/// Resolves conflicting plans between each refreshed station pair.
///
/// Queued tasks known to be collected are dropped. A task queued by UAVs of
/// both stations is kept by the UAV whose route it lengthens least (ties:
/// lower station id keeps). A task one UAV is already flying to is never
/// released; the other side releases it instead.
pub fn dedupe_on_refresh(state: &mut EnvState, model: &CostModel, pairs: &[(StationId, StationId)]) -> Vec<Release> {
    let mut released = Vec::new();
    let mut touched: BTreeSet<StationId> = BTreeSet::new();
    for &(a, b) in pairs {
        touched.insert(a);
        touched.insert(b);
    }
    // drop queued stops known collected
    for &s in &touched {
        let known = state.stations[s.0].known_collected();
        for u in state.uavs.iter_mut().filter(|u| u.station == s) {
            let id = u.id;
            u.pending.retain(|t| {
                let keep = !known.contains(t);
                if !keep {
                    released.push(Release { task: *t, uav: id, station: s, collected: true });
                }
                keep
            });
        }
    }
    for &(a, b) in pairs {
        let plans = |st: &EnvState, s: StationId| -> Vec<(UavId, TaskId, bool)> {
            st.uavs
                .iter()
                .filter(|u| u.station == s)
                .flat_map(|u| {
                    u.target
                        .iter()
                        .map(move |t| (u.id, *t, true))
                        .chain(u.pending.iter().map(move |t| (u.id, *t, false)))
                })
                .collect()
        };
        let pa = plans(state, a);
        let pb = plans(state, b);
        for &(ua, task, committed_a) in &pa {
            let Some(&(ub, _, committed_b)) = pb.iter().find(|(_, t, _)| *t == task) else {
                continue;
            };
            let loser = match (committed_a, committed_b) {
                (true, true) => continue,
                (true, false) => ub,
                (false, true) => ua,
                (false, false) => {
                    let ca = removal_saving(state, model, ua, task);
                    let cb = removal_saving(state, model, ub, task);
                    // ties: lower station id keeps
                    if ca > cb || (ca == cb && a > b) { ua } else { ub }
                }
            };
            let uav = &mut state.uavs[loser.0];
            if let Some(pos) = uav.pending.iter().position(|t| *t == task) {
                uav.pending.remove(pos);
                released.push(Release { task, uav: loser, station: uav.station, collected: false });
            }
        }
    }
    released
}

/// Curved length saved by removing `task` from the UAV's queued stops.
fn removal_saving(state: &EnvState, model: &CostModel, uav: UavId, task: TaskId) -> f64 {
    let u = &state.uavs[uav.0];
    let Some(i) = u.pending.iter().position(|t| *t == task) else {
        return 0.0;
    };
    let prev = if i == 0 { u.target } else { Some(u.pending[i - 1]) };
    let next = u.pending.get(i + 1).copied();
    model.hop(uav, prev, Some(task)) + model.hop(uav, Some(task), next) - model.hop(uav, prev, next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decay_examples() {
        assert_eq!(decay_estimate(7.0, 3, 1000, 0.0).unwrap(), 7.0);
        assert_eq!(decay_estimate(7.0, 3, 3, 0.4).unwrap(), 7.0);
        let v = decay_estimate(10.0, 0, 10, 0.1).unwrap();
        assert!((v - 3.678_794_411_714_423_3).abs() < 1e-12);
        assert!(matches!(decay_estimate(1.0, 5, 4, 0.1), Err(Error::Clock { now: 4, last: 5 })));
    }

    #[test]
    fn worst_case_examples() {
        assert_eq!(worst_case_gap(2.5, 0.0, 10), 2.5);
        assert_eq!(worst_case_gap(2.5, 0.3, 0), 2.5);
        assert!((worst_case_gap(1.0, 0.1, 10) - 0.367_879_441_171_442_3).abs() < 1e-15);
    }

    #[test]
    fn expected_gap_examples() {
        // hand expansion: 0.25 (1 + 2 e^-0.1 + e^-0.2)
        let hand = 0.25 * (1.0 + 2.0 * (-0.1f64).exp() + (-0.2f64).exp());
        let v = expected_gap(1.0, 0.1, 2, 0.5, 2).unwrap();
        assert!((v - hand).abs() < 1e-12, "{v} vs {hand}");
        assert!((v - 0.9071).abs() < 1e-4);
        assert_eq!(expected_gap(3.0, 0.2, 10, 0.0, 2).unwrap(), worst_case_gap(3.0, 0.2, 10));
        for p in [0.0, 0.1, 0.5, 0.9, 1.0] {
            assert_eq!(expected_gap(3.0, 0.0, 25, p, 4).unwrap(), 3.0);
        }
        assert!(expected_gap(1.0, 0.1, 2, 1.5, 2).is_err());
        assert!(expected_gap(1.0, 0.1, 2, 0.5, 1).is_err());
    }

    #[test]
    fn expected_gap_long_horizon_is_finite() {
        let v = expected_gap(1.0, 0.05, 5000, 0.3, 4).unwrap();
        assert!(v.is_finite() && v > 0.0 && v <= 1.0);
    }

    proptest! {
        #[test]
        fn decay_composes(v in 0.0f64..100.0, a in 0u64..500, b in 0u64..500, lambda in 0.0f64..1.0) {
            let once = decay_estimate(v, 0, a + b, lambda).unwrap();
            let twice = decay_estimate(decay_estimate(v, 0, a, lambda).unwrap(), 0, b, lambda).unwrap();
            prop_assert!((once - twice).abs() <= 1e-12 * once.abs().max(1e-300));
        }

        #[test]
        fn decay_nonincreasing(v in 0.0f64..100.0, age in 0u64..100, lambda in 0.0f64..2.0) {
            let now = decay_estimate(v, 0, age, lambda).unwrap();
            let later = decay_estimate(v, 0, age + 1, lambda).unwrap();
            prop_assert!(later <= now);
        }

        #[test]
        fn expected_gap_between_worst_and_initial(p in 0.0f64..1.0, lambda in 0.0f64..1.0, t0 in 0u64..60, k in 2u32..6) {
            let e = expected_gap(1.0, lambda, t0, p, k).unwrap();
            prop_assert!(e >= worst_case_gap(1.0, lambda, t0) - 1e-12);
            prop_assert!(e <= 1.0 + 1e-12);
        }
    }
}
