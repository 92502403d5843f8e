//! Muon stepping with continuous energy loss and stochastic showers.
//!
//! Everything here lives in the track frame: the muon starts at the origin
//! and moves along +z. Each fixed-length step emits one light-producing
//! [`Segment`]. After the continuous loss, a step may also convert a random
//! fraction of the remaining energy into a [`ShowerSource`] at the step
//! midpoint.
//!
//! Random draws happen in a fixed order, shower flag first and then the
//! fraction. No draws happen at all when `shower_prob` is 0.

use std::fmt;
use std::str::FromStr;

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::rng::Uniforms;
use crate::C_LIGHT_M_PER_NS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrackKind {
    Muon,
    EmShower,
}

impl fmt::Display for TrackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrackKind::Muon => "muon",
            TrackKind::EmShower => "em_shower",
        })
    }
}

impl FromStr for TrackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "muon" => Ok(TrackKind::Muon),
            "em_shower" => Ok(TrackKind::EmShower),
            other => Err(Error::InvalidInput(format!("unknown track kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub kind: TrackKind,
    pub position: Vec3,
    pub direction: Vec3,
    /// GeV
    pub energy: f64,
    /// ns
    pub time: f64,
}

impl Track {
    pub fn validate(&self) -> Result<()> {
        if !(self.energy > 0.0) || !self.energy.is_finite() {
            return Err(Error::InvalidInput(format!("track energy {} must be > 0", self.energy)));
        }
        if !self.direction.is_finite() || !self.direction.is_unit() {
            return Err(Error::InvalidInput(format!(
                "track direction norm {} is not 1",
                self.direction.norm()
            )));
        }
        if !self.position.is_finite() || !self.time.is_finite() {
            return Err(Error::InvalidInput("track position and time must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub event_id: u64,
    pub tracks: Vec<Track>,
}

/// A step of muon path in the track frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub z_start: f64,
    pub z_end: f64,
    pub energy_start: f64,
    pub time_start: f64,
}

impl Segment {
    pub fn length(&self) -> f64 {
        self.z_end - self.z_start
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.z_start + self.z_end)
    }
}

/// A point-like electromagnetic shower on the track axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShowerSource {
    pub z: f64,
    pub energy: f64,
    pub time: f64,
}

/// Output of [`propagate_muon`], with the energy bookkeeping kept alongside.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Propagation {
    pub segments: Vec<Segment>,
    pub showers: Vec<ShowerSource>,
    pub final_energy: f64,
    pub continuous_loss: f64,
    /// Energy converted to showers, including showers below threshold.
    pub shower_loss: f64,
}

/// Continuous loss `(a + b·E)·dx`, never more than `E`.
pub fn energy_loss(energy: f64, dx: f64, a: f64, b: f64) -> Result<f64> {
    if !(energy > 0.0) || !(dx > 0.0) {
        return Err(Error::InvalidInput(format!(
            "energy_loss needs E > 0 and dx > 0 (got E = {energy}, dx = {dx})"
        )));
    }
    Ok(((a + b * energy) * dx).min(energy))
}

pub fn propagate_muon(
    track: &Track,
    config: &SimConfig,
    rng: &mut impl Uniforms,
) -> Result<Propagation> {
    if track.kind != TrackKind::Muon {
        return Err(Error::InvalidInput(format!(
            "propagate_muon called on a {} track",
            track.kind
        )));
    }
    let step = config.step_m;
    let dt = step / C_LIGHT_M_PER_NS;
    let mut out = Propagation {
        final_energy: track.energy,
        ..Propagation::default()
    };
    let mut energy = track.energy;
    let mut z = 0.0;
    let mut time = track.time;
    for _ in 0..config.max_steps {
        if energy <= config.e_min_gev {
            break;
        }
        out.segments.push(Segment {
            z_start: z,
            z_end: z + step,
            energy_start: energy,
            time_start: time,
        });
        let loss = energy_loss(energy, step, config.a_gevm, config.b_perm)?;
        energy -= loss;
        out.continuous_loss += loss;
        if config.shower_prob > 0.0 && rng.next_uniform() < config.shower_prob {
            let u = rng.next_uniform();
            let fraction =
                config.shower_frac_min + (config.shower_frac_max - config.shower_frac_min) * u;
            let shower = fraction * energy;
            energy -= shower;
            out.shower_loss += shower;
            if shower >= config.shower_threshold_gev && shower > 0.0 {
                out.showers.push(ShowerSource {
                    z: z + 0.5 * step,
                    energy: shower,
                    time: time + 0.5 * dt,
                });
            }
        }
        z += step;
        time += dt;
    }
    out.final_energy = energy;
    Ok(out)
}

/// One source at the origin of its own frame per shower track, in input
/// order. Muon tracks are skipped.
pub fn shower_track_sources(event: &Event) -> Vec<ShowerSource> {
    event
        .tracks
        .iter()
        .filter(|t| t.kind == TrackKind::EmShower)
        .map(|t| ShowerSource {
            z: 0.0,
            energy: t.energy,
            time: t.time,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    struct Scripted(Vec<f64>, usize);

    impl Uniforms for Scripted {
        fn next_uniform(&mut self) -> f64 {
            let u = self.0[self.1 % self.0.len()];
            self.1 += 1;
            u
        }
    }

    fn muon(energy: f64) -> Track {
        Track {
            kind: TrackKind::Muon,
            position: Vec3::ZERO,
            direction: Vec3::Z,
            energy,
            time: 0.0,
        }
    }

    #[test]
    fn energy_loss_examples() {
        assert!((energy_loss(1000.0, 10.0, 0.24, 3.4e-4).unwrap() - 5.8).abs() < 1e-12);
        assert_eq!(energy_loss(0.001, 10.0, 0.24, 3.4e-4).unwrap(), 0.001);
        assert_eq!(energy_loss(5.0, 1.0, 0.24, 0.0).unwrap(), 0.24);
        assert_eq!(energy_loss(500.0, 1.0, 0.24, 0.0).unwrap(), 0.24);
        assert!(energy_loss(0.0, 1.0, 0.24, 0.0).is_err());
        assert!(energy_loss(1.0, -1.0, 0.24, 0.0).is_err());
    }

    #[test]
    fn deterministic_ladder_without_showers() {
        let config = SimConfig {
            shower_prob: 0.0,
            ..SimConfig::default()
        };
        let mut rng = Scripted(vec![0.5], 0);
        let out = propagate_muon(&muon(1000.0), &config, &mut rng).unwrap();
        assert_eq!(rng.1, 0, "no draws when shower_prob = 0");
        assert!(out.showers.is_empty());
        let mut e = 1000.0;
        for seg in out.segments.iter().take(3) {
            assert!((seg.energy_start - e).abs() < 1e-9);
            e -= (0.24 + 3.4e-4 * e) * 10.0;
        }
        // hand-iterated: 1000 → 994.2 → 988.41972 → 982.6590…
        assert!((out.segments[1].energy_start - 994.2).abs() < 1e-9);
        assert!((out.segments[2].energy_start - 988.41972).abs() < 1e-9);
        assert_eq!(out.segments[1].z_start, 10.0);
        assert!((out.segments[1].time_start - 10.0 / C_LIGHT_M_PER_NS).abs() < 1e-12);
    }

    #[test]
    fn stops_immediately_below_threshold() {
        let config = SimConfig::default();
        let mut rng = RngStream::new(1);
        let out = propagate_muon(&muon(config.e_min_gev), &config, &mut rng).unwrap();
        assert!(out.segments.is_empty() && out.showers.is_empty());
    }

    #[test]
    fn every_step_showers_half_the_energy() {
        let config = SimConfig {
            shower_prob: 1.0,
            shower_frac_min: 0.5,
            shower_frac_max: 0.5,
            shower_threshold_gev: 1.0,
            ..SimConfig::default()
        };
        let mut rng = Scripted(vec![0.3, 0.9], 0);
        let out = propagate_muon(&muon(100.0), &config, &mut rng).unwrap();
        // step 1: 100 − 2.74 = 97.26, shower 48.63
        assert!((out.showers[0].energy - 48.63).abs() < 1e-9);
        assert_eq!(out.showers[0].z, 5.0);
        let mut e = 100.0;
        for (seg, shower) in out.segments.iter().zip(&out.showers) {
            assert!((seg.energy_start - e).abs() < 1e-9);
            let after = e - (0.24 + 3.4e-4 * e) * 10.0;
            assert!((shower.energy - after / 2.0).abs() < 1e-9);
            e = after / 2.0;
        }
        // two draws per step
        assert_eq!(rng.1, 2 * out.segments.len());
    }

    #[test]
    fn rejects_shower_tracks() {
        let mut t = muon(10.0);
        t.kind = TrackKind::EmShower;
        assert!(propagate_muon(&t, &SimConfig::default(), &mut RngStream::new(0)).is_err());
    }

    #[test]
    fn shower_sources_follow_input_order() {
        let shower = |e: f64| Track {
            kind: TrackKind::EmShower,
            energy: e,
            time: 3.0,
            ..muon(1.0)
        };
        let only_muons = Event {
            event_id: 0,
            tracks: vec![muon(10.0)],
        };
        assert!(shower_track_sources(&only_muons).is_empty());
        let one = Event {
            event_id: 1,
            tracks: vec![shower(50.0)],
        };
        assert_eq!(
            shower_track_sources(&one),
            vec![ShowerSource { z: 0.0, energy: 50.0, time: 3.0 }]
        );
        let mixed = Event {
            event_id: 2,
            tracks: vec![shower(5.0), muon(10.0), shower(7.0)],
        };
        let energies: Vec<f64> = shower_track_sources(&mixed).iter().map(|s| s.energy).collect();
        assert_eq!(energies, vec![5.0, 7.0]);
    }

    proptest! {
        #[test]
        fn bookkeeping_and_monotonicity(
            seed in any::<u64>(),
            log_e in 0.5..8.0f64,
            prob in 0.0..1.0f64,
            max_steps in 1usize..4000,
        ) {
            let config = SimConfig {
                shower_prob: prob,
                shower_frac_min: 0.01,
                shower_frac_max: 0.4,
                shower_threshold_gev: 5.0,
                max_steps,
                ..SimConfig::default()
            };
            let e0 = 10f64.powf(log_e);
            let out = propagate_muon(&muon(e0), &config, &mut RngStream::new(seed)).unwrap();
            let lost = out.continuous_loss + out.shower_loss;
            prop_assert!(((e0 - out.final_energy) - lost).abs() <= 1e-9 * e0);
            prop_assert!(out.segments.windows(2).all(|w| w[1].energy_start < w[0].energy_start));
            prop_assert!(out.showers.iter().all(|s| s.energy >= config.shower_threshold_gev));
            prop_assert!(out.segments.len() <= max_steps);
            prop_assert!(out.final_energy <= config.e_min_gev || out.segments.len() == max_steps);
        }
    }
}
