//! Photomultiplier hit simulation for high-energy neutrino telescopes.
//!
//! The pipeline for one event is:
//!
//! 1. parse the event from a text file ([`eventio`]),
//! 2. propagate muons in fixed steps with continuous energy loss and
//!    stochastic electromagnetic showers ([`propagation`]),
//! 3. rotate every optical module into each track's frame, where the track
//!    runs along +z ([`geometry`]),
//! 4. compute expected photoelectrons for every source / PMT / light class
//!    pair, sample Poisson counts and arrival times from tabulated CDFs
//!    ([`hitgen`], [`photonics`]),
//! 5. merge hits and write the result file ([`hitgen::merge_hits`],
//!    [`eventio`]).
//!
//! Steps 3 and 4 run over optical modules on a pool of worker lanes
//! ([`schedule`]). Every optical module draws from its own random stream
//! ([`rng`]), so results are bit-identical for every worker count and
//! scheduling mode.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod config;
pub mod engine;
mod error;
pub mod eventio;
pub mod geometry;
pub mod hitgen;
pub mod photonics;
pub mod propagation;
pub mod rng;
pub mod schedule;

pub use config::{Scheduling, SimConfig};
pub use engine::{Engine, EventResult, PhaseTiming, TimingReport};
pub use error::{Error, Result};
pub use geometry::{DetectorGeometry, FrameTransform, OpticalModule, Pmt, Vec3};
pub use hitgen::{Hit, HitExpectation};
pub use photonics::{CdfSet, CdfTable, LightClass, PdfSet, PdfTable};
pub use propagation::{Event, Segment, ShowerSource, Track, TrackKind};
pub use rng::RngStream;

/// Speed of light in vacuum, m/ns.
pub const C_LIGHT_M_PER_NS: f64 = 0.299_792_458;
