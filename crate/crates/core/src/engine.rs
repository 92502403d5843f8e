//! Per-event pipeline, worker scheduling over optical modules, and phase
//! timing.
//!
//! An event is processed in four timed phases:
//!
//! * `propagate`: muons are stepped on the event's propagation stream, and
//!   every track gets its frame.
//! * `rotate`: every optical module is moved into every track frame. This
//!   runs in parallel over modules.
//! * `hit_detect`: each module walks the tracks in event order with its own
//!   stream. This runs in parallel over modules, and each module's hits land
//!   in a slot indexed by `om_id`.
//! * `merge`: the slots are concatenated in `om_id` order and the hits are
//!   merged.
//!
//! Parse and write phases are timed by [`run_pipeline`], which drives
//! reading and writing around the engine.

use std::time::{Duration, Instant};

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::geometry::{track_frame, transform_om, DetectorGeometry, FrameTransform, OpticalModule};
use crate::hitgen::{merge_hits, process_om_with_stream, Hit};
use crate::photonics::CdfSet;
use crate::propagation::{propagate_muon, Event, Segment, ShowerSource, TrackKind};
use crate::rng::{derive_stream, PROPAGATION_STREAM_ID};
use crate::schedule::WorkerPool;

/// Wall-clock nanoseconds per phase of one event.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PhaseTiming {
    pub parse: u64,
    pub propagate: u64,
    pub rotate: u64,
    pub hit_detect: u64,
    pub merge: u64,
    pub write: u64,
    /// From the start of parsing to the end of writing.
    pub total: u64,
}

impl PhaseTiming {
    pub fn add(&mut self, other: &PhaseTiming) {
        self.parse += other.parse;
        self.propagate += other.propagate;
        self.rotate += other.rotate;
        self.hit_detect += other.hit_detect;
        self.merge += other.merge;
        self.write += other.write;
        self.total += other.total;
    }

    /// Sum of the individually measured phases.
    pub fn phase_sum(&self) -> u64 {
        self.parse + self.propagate + self.rotate + self.hit_detect + self.merge + self.write
    }
}

fn nanos(d: Duration) -> u64 {
    d.as_nanos().min(u64::MAX as u128) as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventResult {
    pub event_id: u64,
    /// Merged hits sorted by (om_id, pmt_id, time).
    pub hits: Vec<Hit>,
    pub n_raw_hits: usize,
    pub timing: PhaseTiming,
}

impl EventResult {
    /// Equality on everything except timing.
    pub fn same_physics(&self, other: &EventResult) -> bool {
        self.event_id == other.event_id
            && self.n_raw_hits == other.n_raw_hits
            && self.hits.len() == other.hits.len()
            && self.hits.iter().zip(&other.hits).all(|(a, b)| {
                (a.om_id, a.pmt_id, a.npe, a.light_class) == (b.om_id, b.pmt_id, b.npe, b.light_class)
                    && a.time.to_bits() == b.time.to_bits()
            })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimingReport {
    pub workers: usize,
    pub slice: Option<String>,
    pub per_event: Vec<PhaseTiming>,
    pub aggregate: PhaseTiming,
    /// Events that failed, with the reason; processing went on past them.
    pub failures: Vec<(u64, String)>,
}

impl TimingReport {
    pub fn events(&self) -> usize {
        self.per_event.len()
    }

    fn mean(&self, total: u64) -> f64 {
        if self.per_event.is_empty() {
            0.0
        } else {
            total as f64 / self.per_event.len() as f64
        }
    }

    pub fn mean_hit_detect_ns(&self) -> f64 {
        self.mean(self.aggregate.hit_detect)
    }

    pub fn mean_total_ns(&self) -> f64 {
        self.mean(self.aggregate.total)
    }

    /// Share of the measured total spent detecting hits.
    pub fn hit_detect_fraction(&self) -> f64 {
        if self.aggregate.total == 0 {
            0.0
        } else {
            self.aggregate.hit_detect as f64 / self.aggregate.total as f64
        }
    }

    fn record(&mut self, timing: PhaseTiming) {
        self.aggregate.add(&timing);
        self.per_event.push(timing);
    }
}

/// Light sources of one track, in that track's frame.
struct TrackWork {
    frame: FrameTransform,
    segments: Vec<Segment>,
    showers: Vec<ShowerSource>,
}

/// A configured engine with its worker pool.
pub struct Engine {
    config: SimConfig,
    pool: WorkerPool,
}

impl Engine {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let pool = WorkerPool::new(config.workers, config.scheduling, config.chunk)?;
        Ok(Engine { config, pool })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn simulate_event(
        &self,
        event: &Event,
        geometry: &DetectorGeometry,
        cdfs: &CdfSet,
    ) -> Result<EventResult> {
        let config = &self.config;
        let mut timing = PhaseTiming::default();

        let clock = Instant::now();
        let mut prop_rng = derive_stream(config.seed, event.event_id, PROPAGATION_STREAM_ID);
        let mut work = Vec::with_capacity(event.tracks.len());
        for track in &event.tracks {
            track.validate()?;
            let frame = track_frame(track)?;
            match track.kind {
                TrackKind::Muon => {
                    let out = propagate_muon(track, config, &mut prop_rng)?;
                    work.push(TrackWork {
                        frame,
                        segments: out.segments,
                        showers: out.showers,
                    });
                }
                TrackKind::EmShower => work.push(TrackWork {
                    frame,
                    segments: Vec::new(),
                    showers: vec![ShowerSource {
                        z: 0.0,
                        energy: track.energy,
                        time: track.time,
                    }],
                }),
            }
        }
        timing.propagate = nanos(clock.elapsed());

        let clock = Instant::now();
        let n_oms = geometry.oms.len();
        let rotated: Vec<Vec<OpticalModule>> = if work.is_empty() {
            Vec::new()
        } else {
            self.pool.map(n_oms, |i| {
                work.iter()
                    .map(|w| transform_om(&geometry.oms[i], &w.frame))
                    .collect()
            })
        };
        timing.rotate = nanos(clock.elapsed());

        let clock = Instant::now();
        let per_om: Vec<Result<Vec<Hit>>> = if work.is_empty() {
            Vec::new()
        } else {
            self.pool.map(n_oms, |i| {
                let om_id = geometry.oms[i].om_id;
                let mut rng = derive_stream(config.seed, event.event_id, om_id as u64);
                let mut hits = Vec::new();
                for (w, om) in work.iter().zip(&rotated[i]) {
                    hits.extend(process_om_with_stream(
                        om,
                        &w.segments,
                        &w.showers,
                        cdfs,
                        config,
                        &mut rng,
                    )?);
                }
                Ok(hits)
            })
        };
        timing.hit_detect = nanos(clock.elapsed());

        let clock = Instant::now();
        let mut raw = Vec::new();
        for hits in per_om {
            raw.extend(hits?);
        }
        let hits = merge_hits(&raw, config.merge_window_ns)?;
        timing.merge = nanos(clock.elapsed());

        Ok(EventResult {
            event_id: event.event_id,
            n_raw_hits: raw.len(),
            hits,
            timing,
        })
    }

    /// Simulates `events` in order; failures are recorded and skipped.
    pub fn run_batch(
        &self,
        events: &[Event],
        geometry: &DetectorGeometry,
        cdfs: &CdfSet,
    ) -> (Vec<EventResult>, TimingReport) {
        let mut results = Vec::with_capacity(events.len());
        let report = self
            .run_pipeline(
                events.iter().cloned().map(Ok),
                geometry,
                cdfs,
                |r| {
                    results.push(r.clone());
                    Ok(())
                },
            )
            .expect("in-memory sink cannot fail");
        (results, report)
    }

    /// Pulls events from `events`, simulates them and hands every result to
    /// `sink`. Time spent in `next()` is the parse phase and time spent in
    /// `sink` the write phase. A failing event is recorded in the report and
    /// skipped. Errors from `sink` abort the run.
    pub fn run_pipeline<I, F>(
        &self,
        events: I,
        geometry: &DetectorGeometry,
        cdfs: &CdfSet,
        mut sink: F,
    ) -> Result<TimingReport>
    where
        I: IntoIterator<Item = Result<Event>>,
        F: FnMut(&EventResult) -> Result<()>,
    {
        let mut report = TimingReport {
            workers: self.config.workers,
            ..TimingReport::default()
        };
        let mut events = events.into_iter();
        loop {
            let start = Instant::now();
            let Some(next) = events.next() else {
                break;
            };
            let parse = nanos(start.elapsed());
            // the reader cannot resynchronize after a parse error
            let event = next?;
            match self.simulate_event(&event, geometry, cdfs) {
                Ok(mut result) => {
                    result.timing.parse = parse;
                    let clock = Instant::now();
                    sink(&result)?;
                    result.timing.write = nanos(clock.elapsed());
                    result.timing.total = nanos(start.elapsed());
                    report.record(result.timing);
                }
                Err(e) => report.failures.push((event.event_id, e.to_string())),
            }
        }
        Ok(report)
    }
}

/// One-shot convenience around [`Engine::simulate_event`].
pub fn simulate_event(
    event: &Event,
    geometry: &DetectorGeometry,
    cdfs: &CdfSet,
    config: &SimConfig,
) -> Result<EventResult> {
    Engine::new(config.clone())?.simulate_event(event, geometry, cdfs)
}

/// One-shot convenience around [`Engine::run_batch`].
pub fn run_batch(
    events: &[Event],
    geometry: &DetectorGeometry,
    cdfs: &CdfSet,
    config: &SimConfig,
) -> Result<(Vec<EventResult>, TimingReport)> {
    Ok(Engine::new(config.clone())?.run_batch(events, geometry, cdfs))
}

/// Compares two result lists, ignoring timing.
pub fn check_same_physics(a: &[EventResult], b: &[EventResult]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Determinism(format!("{} vs {} results", a.len(), b.len())));
    }
    for (x, y) in a.iter().zip(b) {
        if !x.same_physics(y) {
            return Err(Error::Determinism(format!("event {} differs", x.event_id)));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Scheduling;
    use crate::geometry::Vec3;
    use crate::photonics::{build_cdf_set, synthetic_pdf_set, SynthParams};
    use crate::propagation::Track;
    use std::sync::OnceLock;

    fn tables() -> &'static CdfSet {
        static TABLES: OnceLock<CdfSet> = OnceLock::new();
        TABLES.get_or_init(|| {
            let params = SynthParams {
                n_r: 10,
                n_cos: 5,
                n_t: 80,
                ..SynthParams::default()
            };
            build_cdf_set(&synthetic_pdf_set(&params).unwrap(), 1).unwrap()
        })
    }

    fn event(id: u64) -> Event {
        Event {
            event_id: id,
            tracks: vec![
                Track {
                    kind: TrackKind::Muon,
                    position: Vec3::new(-10.0, 5.0, 200.0),
                    direction: Vec3::new(0.3, 0.0, -(1.0f64 - 0.09).sqrt()),
                    energy: 5e4,
                    time: 0.0,
                },
                Track {
                    kind: TrackKind::EmShower,
                    position: Vec3::new(3.0, 2.0, 60.0),
                    direction: Vec3::new(0.0, 0.0, -1.0),
                    energy: 300.0,
                    time: 100.0,
                },
            ],
        }
    }

    fn config(workers: usize, scheduling: Scheduling) -> SimConfig {
        SimConfig {
            workers,
            scheduling,
            seed: 77,
            ..SimConfig::default()
        }
    }

    #[test]
    fn empty_event_has_no_hits() {
        let g = DetectorGeometry::default_detector();
        let e = Event {
            event_id: 3,
            tracks: vec![],
        };
        let r = simulate_event(&e, &g, tables(), &SimConfig::default()).unwrap();
        assert!(r.hits.is_empty());
        assert_eq!(r.n_raw_hits, 0);
        assert_eq!(r.event_id, 3);
    }

    #[test]
    fn worker_count_and_scheduling_do_not_change_hits() {
        let g = DetectorGeometry::default_detector();
        let e = event(5);
        let base = simulate_event(&e, &g, tables(), &config(1, Scheduling::Dynamic)).unwrap();
        assert!(!base.hits.is_empty());
        assert!(base.n_raw_hits >= base.hits.len());
        for workers in [2, 4] {
            for scheduling in [Scheduling::StaticBlock, Scheduling::Dynamic] {
                let other = simulate_event(&e, &g, tables(), &config(workers, scheduling)).unwrap();
                assert!(base.same_physics(&other), "{workers} {scheduling}");
            }
        }
    }

    #[test]
    fn hits_are_sorted_and_seed_sensitive() {
        let g = DetectorGeometry::default_detector();
        let e = event(1);
        let a = simulate_event(&e, &g, tables(), &config(1, Scheduling::Dynamic)).unwrap();
        assert!(a.hits.windows(2).all(|w| {
            (w[0].om_id, w[0].pmt_id) < (w[1].om_id, w[1].pmt_id)
                || ((w[0].om_id, w[0].pmt_id) == (w[1].om_id, w[1].pmt_id) && w[0].time <= w[1].time)
        }));
        let mut c = config(1, Scheduling::Dynamic);
        c.seed += 1;
        let b = simulate_event(&e, &g, tables(), &c).unwrap();
        assert!(!a.same_physics(&b));
    }

    #[test]
    fn removing_a_module_leaves_others_untouched() {
        let g = DetectorGeometry::default_detector();
        let e = event(9);
        let full = simulate_event(&e, &g, tables(), &config(1, Scheduling::Dynamic)).unwrap();
        // drop the last module; ids stay dense
        let mut oms = g.oms.clone();
        let dropped = oms.pop().unwrap().om_id;
        let smaller = DetectorGeometry::new(oms).unwrap();
        let part = simulate_event(&e, &smaller, tables(), &config(1, Scheduling::Dynamic)).unwrap();
        let kept: Vec<Hit> = full.hits.iter().copied().filter(|h| h.om_id != dropped).collect();
        assert_eq!(kept, part.hits);
    }

    #[test]
    fn batch_results_and_report() {
        let g = DetectorGeometry::default_detector();
        let events: Vec<Event> = (0..4).map(event).collect();
        let (one, report) = run_batch(&events, &g, tables(), &config(1, Scheduling::Dynamic)).unwrap();
        let (four, _) = run_batch(&events, &g, tables(), &config(4, Scheduling::StaticBlock)).unwrap();
        check_same_physics(&one, &four).unwrap();
        assert_eq!(report.events(), 4);
        let sum: u64 = report.per_event.iter().map(|t| t.total).sum();
        assert_eq!(report.aggregate.total, sum);
        assert_eq!(report.mean_total_ns(), sum as f64 / 4.0);

        let (none, empty) = run_batch(&[], &g, tables(), &SimConfig::default()).unwrap();
        assert!(none.is_empty());
        assert_eq!(empty.aggregate, PhaseTiming::default());
        assert_eq!(empty.mean_total_ns(), 0.0);
    }

    #[test]
    fn failing_events_are_recorded_and_skipped() {
        let g = DetectorGeometry::default_detector();
        let mut bad = event(1);
        bad.tracks[0].direction = Vec3::new(0.0, 0.0, 2.0);
        let events = vec![event(0), bad, event(2)];
        let (results, report) = run_batch(&events, &g, tables(), &SimConfig::default()).unwrap();
        assert_eq!(results.iter().map(|r| r.event_id).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].0, 1);
    }
}
