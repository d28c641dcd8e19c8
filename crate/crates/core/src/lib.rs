//! Multi-UAV task collection and processing simulator.
//!
//! The crate models a square region served by ground stations at its corners.
//! Each station owns a subset of UAVs and acts as an independent agent that
//! assigns tasks (UAV video, edge video, sensor data) to its UAVs. Stations
//! learn allocation policies with a discrete soft actor-critic and keep
//! possibly stale beliefs about each other, refreshed by proximity exchange
//! between UAVs and by periodic all-station synchronization.
//!
//! Module map:
//!
//! * [`scenario`] world description, configuration and generation
//! * [`channel`] air-to-ground and air-to-air link rates
//! * [`compute`] onboard processing load, delay, energy and storage
//! * [`physics`] rotary-wing power models and per-task energy
//! * [`routing`] curved metric, feasibility, objective and exact solver
//! * [`env`] the multi-agent decision process
//! * [`coordination`] belief sharing, decay and staleness analytics
//! * [`neural`] dense networks with analytic gradients
//! * [`sac`] per-agent discrete soft actor-critic
//! * [`baselines`] random, genetic, greedy and learned comparison methods
//! * [`harness`] experiments, metrics, logs and plot data

pub mod baselines;
pub mod channel;
pub mod compute;
pub mod coordination;
pub mod env;
pub mod error;
pub mod geom;
pub mod harness;
pub mod neural;
pub mod physics;
pub mod routing;
pub mod sac;
pub mod scenario;

pub use error::{Error, Result};
pub use geom::Point3;
