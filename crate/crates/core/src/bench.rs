//! Scaling-study harness: energy slices, benchmark events and timed runs
//! over worker counts.

use std::fmt;
use std::str::FromStr;

use crate::config::{Scheduling, SimConfig};
use crate::engine::{Engine, TimingReport};
use crate::error::{Error, Result};
use crate::eventio::{event_range, events_to_text, EventReader, ResultWriter, RunSummary};
use crate::geometry::{DetectorGeometry, Vec3};
use crate::photonics::CdfSet;
use crate::propagation::{Event, Track, TrackKind};
use crate::rng::RngStream;

pub const SPECTRUM_MIN_GEV: f64 = 100.0;
pub const LOW_MID_GEV: f64 = 1e4;
pub const MID_HIGH_GEV: f64 = 1e6;
/// Upper end of generated high-slice energies.
pub const HIGH_CAP_GEV: f64 = 1e8;
/// Margin added around the detector box for track starting points.
pub const BOX_MARGIN_M: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnergySlice {
    Low,
    Mid,
    High,
    All,
}

impl EnergySlice {
    pub const BINS: [EnergySlice; 3] = [EnergySlice::Low, EnergySlice::Mid, EnergySlice::High];

    pub fn label(self) -> &'static str {
        match self {
            EnergySlice::Low => "low",
            EnergySlice::Mid => "mid",
            EnergySlice::High => "high",
            EnergySlice::All => "all",
        }
    }

    /// `[lo, hi)` in GeV; `None` for `All`. High is unbounded.
    pub fn bounds(self) -> Option<(f64, f64)> {
        match self {
            EnergySlice::Low => Some((SPECTRUM_MIN_GEV, LOW_MID_GEV)),
            EnergySlice::Mid => Some((LOW_MID_GEV, MID_HIGH_GEV)),
            EnergySlice::High => Some((MID_HIGH_GEV, f64::INFINITY)),
            EnergySlice::All => None,
        }
    }
}

impl fmt::Display for EnergySlice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for EnergySlice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(EnergySlice::Low),
            "mid" => Ok(EnergySlice::Mid),
            "high" => Ok(EnergySlice::High),
            "all" => Ok(EnergySlice::All),
            other => Err(Error::InvalidInput(format!(
                "unknown energy slice '{other}' (expected low, mid, high or all)"
            ))),
        }
    }
}

/// Slice of an energy in GeV. Boundaries belong to the upper slice.
pub fn classify_energy(energy: f64) -> Result<EnergySlice> {
    if energy.is_nan() || energy < SPECTRUM_MIN_GEV {
        return Err(Error::BelowSpectrum(energy));
    }
    Ok(if energy < LOW_MID_GEV {
        EnergySlice::Low
    } else if energy < MID_HIGH_GEV {
        EnergySlice::Mid
    } else {
        EnergySlice::High
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchPlan {
    pub worker_counts: Vec<usize>,
    pub events_per_slice: usize,
    /// Low / mid / high proportions of the `all` slice.
    pub mix: [f64; 3],
    pub repetitions: usize,
    pub warmup: usize,
    pub scheduling: Scheduling,
    pub seed: u64,
}

impl Default for BenchPlan {
    fn default() -> Self {
        BenchPlan {
            worker_counts: vec![1, 2, 4],
            events_per_slice: 100,
            mix: [0.8, 0.15, 0.05],
            repetitions: 3,
            warmup: 2,
            scheduling: Scheduling::Dynamic,
            seed: 1,
        }
    }
}

impl BenchPlan {
    pub fn validate(&self) -> Result<()> {
        if !self.worker_counts.contains(&1) {
            return Err(Error::Config("worker_counts must include 1 (the baseline)".into()));
        }
        if self.worker_counts.contains(&0) {
            return Err(Error::Config("worker counts must be >= 1".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be >= 1".into()));
        }
        if self.mix.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) || self.mix.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("slice mix weights must be >= 0 with a positive sum".into()));
        }
        Ok(())
    }
}

fn log_uniform(lo: f64, hi: f64, u: f64) -> f64 {
    let e = (lo.ln() + (hi.ln() - lo.ln()) * u).exp();
    // rounding at the top must not leak into the next slice
    if e >= hi {
        lo.max(hi * (1.0 - f64::EPSILON))
    } else {
        e.max(lo)
    }
}

/// Draws the slice for one `all` event from the mix.
fn pick_slice(mix: &[f64; 3], u: f64) -> EnergySlice {
    let total: f64 = mix.iter().sum();
    let mut acc = 0.0;
    for (slice, w) in EnergySlice::BINS.into_iter().zip(mix) {
        acc += w / total;
        if u < acc {
            return slice;
        }
    }
    EnergySlice::BINS.into_iter().zip(mix).rev().find(|(_, w)| **w > 0.0).unwrap().0
}

/// Single-muon events with log-uniform energies in `slice`, downgoing
/// isotropic directions, and starting points in the detector box grown by
/// [`BOX_MARGIN_M`]. Deterministic in `seed`.
pub fn generate_bench_events(
    plan: &BenchPlan,
    slice: EnergySlice,
    seed: u64,
    geometry: &DetectorGeometry,
) -> Vec<Event> {
    let mut rng = RngStream::new(crate::rng::mix(seed ^ 0xB3AC_4E11_0000_0000));
    let (lo, hi) = geometry.bounding_box();
    let margin = Vec3::new(BOX_MARGIN_M, BOX_MARGIN_M, BOX_MARGIN_M);
    let (lo, hi) = (lo - margin, hi + margin);
    (0..plan.events_per_slice)
        .map(|i| {
            let bin = match slice {
                EnergySlice::All => pick_slice(&plan.mix, rng.next_uniform()),
                s => s,
            };
            let (e_lo, e_hi) = bin.bounds().expect("binned slice");
            let energy = log_uniform(e_lo, e_hi.min(HIGH_CAP_GEV), rng.next_uniform());
            // cos(zenith) in [-1, 0): pointing down
            let cos_z = -1.0 + rng.next_uniform();
            let sin_z = (1.0 - cos_z * cos_z).sqrt();
            let phi = 2.0 * std::f64::consts::PI * rng.next_uniform();
            let direction = Vec3::new(sin_z * phi.cos(), sin_z * phi.sin(), cos_z);
            let mut coord = |a: f64, b: f64| a + (b - a) * rng.next_uniform();
            let position = Vec3::new(coord(lo.x, hi.x), coord(lo.y, hi.y), coord(lo.z, hi.z));
            Event {
                event_id: i as u64,
                tracks: vec![Track {
                    kind: TrackKind::Muon,
                    position,
                    direction,
                    energy,
                    time: 0.0,
                }],
            }
        })
        .collect()
}

/// Median-of-repetitions timing for one (slice, worker count) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub summary: RunSummary,
    /// hit_detect share of the summed total over all timed repetitions.
    pub hit_detect_fraction: f64,
    pub failed_events: usize,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// One full pass over the serialized events: parse, simulate and write to
/// memory.
fn timed_run(
    engine: &Engine,
    text: &str,
    geometry: &DetectorGeometry,
    cdfs: &CdfSet,
) -> Result<(TimingReport, Vec<u8>)> {
    let events = event_range(EventReader::new(text.as_bytes(), "<bench events>"), 0, None);
    let mut writer = ResultWriter::new(Vec::new(), "<bench results>")?;
    let report = engine.run_pipeline(events, geometry, cdfs, |r| writer.write(r))?;
    Ok((report, writer.finish()?))
}

/// Timings collected for one worker count.
#[derive(Default)]
struct Samples {
    hit_detect_ms: Vec<f64>,
    total_ms: Vec<f64>,
    sum_hit_detect: u64,
    sum_total: u64,
    failed_events: usize,
}

/// Times every worker count of the plan on every slice.
///
/// Runs never overlap. Repetitions go round-robin over the worker counts so
/// that slow drift of the machine hits every count alike. The same event
/// file and seed are used for all worker counts, and the result bytes must
/// match the first run; a mismatch is a [`Error::Determinism`].
pub fn run_bench(
    plan: &BenchPlan,
    slices: &[EnergySlice],
    geometry: &DetectorGeometry,
    cdfs: &CdfSet,
    config: &SimConfig,
) -> Result<Vec<BenchRecord>> {
    plan.validate()?;
    let engines = plan
        .worker_counts
        .iter()
        .map(|&workers| {
            Engine::new(SimConfig {
                workers,
                scheduling: plan.scheduling,
                ..config.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut records = Vec::new();
    for &slice in slices {
        let events = generate_bench_events(plan, slice, plan.seed, geometry);
        let text = events_to_text(&events);
        for engine in &engines {
            for _ in 0..plan.warmup {
                timed_run(engine, &text, geometry, cdfs)?;
            }
        }
        let mut reference: Option<(usize, Vec<u8>)> = None;
        let mut samples: Vec<Samples> = engines.iter().map(|_| Samples::default()).collect();
        for _ in 0..plan.repetitions {
            for (engine, s) in engines.iter().zip(&mut samples) {
                let workers = engine.config().workers;
                let (report, bytes) = timed_run(engine, &text, geometry, cdfs)?;
                match &reference {
                    None => reference = Some((workers, bytes)),
                    Some((ref_workers, ref_bytes)) if *ref_bytes != bytes => {
                        return Err(Error::Determinism(format!(
                            "{slice} slice: results with {workers} workers differ from {ref_workers} workers"
                        )));
                    }
                    Some(_) => {}
                }
                s.hit_detect_ms.push(report.mean_hit_detect_ns() / 1e6);
                s.total_ms.push(report.mean_total_ns() / 1e6);
                s.sum_hit_detect += report.aggregate.hit_detect;
                s.sum_total += report.aggregate.total;
                s.failed_events = report.failures.len();
            }
        }
        for (engine, mut s) in engines.iter().zip(samples) {
            records.push(BenchRecord {
                summary: RunSummary {
                    energy_slice: slice.label().to_string(),
                    workers: engine.config().workers,
                    scheduling: plan.scheduling,
                    mean_hit_detect_ms: median(&mut s.hit_detect_ms),
                    mean_total_ms: median(&mut s.total_ms),
                },
                hit_detect_fraction: if s.sum_total == 0 {
                    0.0
                } else {
                    s.sum_hit_detect as f64 / s.sum_total as f64
                },
                failed_events: s.failed_events,
            });
        }
    }
    Ok(records)
}

/// Logical CPUs available to this process.
pub fn available_cores() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}
