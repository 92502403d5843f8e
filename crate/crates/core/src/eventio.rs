//! Text formats for events, results and benchmark timings.
//!
//! Event file:
//!
//! ```text
//! EVENT <id> <n_tracks>
//! TRACK <muon|em_shower> <x> <y> <z> <dx> <dy> <dz> <E_GeV> <t_ns>
//! ```
//!
//! Result file:
//!
//! ```text
//! EVENT <id> <n_hits> <n_raw_hits>
//! HIT <om_id> <pmt_id> <t_ns> <npe> <light_class>
//! ```
//!
//! Reals are written with 12 significant digits so that equal values always
//! produce equal bytes. Lines starting with `#` are comments.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::config::Scheduling;
use crate::engine::{EventResult, PhaseTiming, TimingReport};
use crate::error::{Error, Result};
use crate::geometry::{parse_real, real, Vec3};
use crate::hitgen::Hit;
use crate::propagation::{Event, Track, TrackKind};

pub const RESULT_HEADER: &str =
    "# EVENT <id> <n_hits> <n_raw_hits> / HIT <om_id> <pmt_id> <t_ns> <npe> <light_class>";
pub const EVENT_HEADER: &str =
    "# EVENT <id> <n_tracks> / TRACK <kind> <x> <y> <z> <dx> <dy> <dz> <E_GeV> <t_ns>";

/// Streaming parser over an event file.
pub struct EventReader<R> {
    lines: std::io::Lines<R>,
    source_name: String,
    line_no: usize,
    last_id: Option<u64>,
    failed: bool,
}

impl<R: BufRead> EventReader<R> {
    pub fn new(reader: R, source_name: impl Into<String>) -> Self {
        EventReader {
            lines: reader.lines(),
            source_name: source_name.into(),
            line_no: 0,
            last_id: None,
            failed: false,
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.source_name.clone(), self.line_no, msg)
    }

    /// Next non-comment line, split into fields.
    fn next_record(&mut self) -> Option<Result<Vec<String>>> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(Error::io(self.source_name.clone(), e))),
            };
            self.line_no += 1;
            let content = line.split('#').next().unwrap_or("").trim();
            if !content.is_empty() {
                return Some(Ok(content.split_whitespace().map(str::to_owned).collect()));
            }
        }
    }

    fn parse_track(&self, f: &[String]) -> Result<Track> {
        if f.len() != 10 || f[0] != "TRACK" {
            return Err(self.err("expected 'TRACK <kind> <x> <y> <z> <dx> <dy> <dz> <E_GeV> <t_ns>'"));
        }
        let kind: TrackKind = f[1].parse().map_err(|e: Error| self.err(e.to_string()))?;
        let names = ["x", "y", "z", "dx", "dy", "dz", "energy", "time"];
        let mut v = [0.0; 8];
        for (slot, (field, name)) in v.iter_mut().zip(f[2..].iter().zip(names)) {
            *slot = parse_real(field, name).map_err(|m| self.err(m))?;
        }
        let track = Track {
            kind,
            position: Vec3::new(v[0], v[1], v[2]),
            direction: Vec3::new(v[3], v[4], v[5]),
            energy: v[6],
            time: v[7],
        };
        track.validate().map_err(|e| self.err(e.to_string()))?;
        Ok(track)
    }

    fn read_event(&mut self, header: Vec<String>) -> Result<Event> {
        if header.len() != 3 || header[0] != "EVENT" {
            return Err(self.err("expected 'EVENT <id> <n_tracks>'"));
        }
        let event_id: u64 = header[1]
            .parse()
            .map_err(|_| self.err(format!("invalid event id '{}'", header[1])))?;
        let n_tracks: usize = header[2]
            .parse()
            .map_err(|_| self.err(format!("invalid track count '{}'", header[2])))?;
        if let Some(last) = self.last_id {
            if event_id <= last {
                return Err(self.err(format!("event id {event_id} does not increase (previous {last})")));
            }
        }
        self.last_id = Some(event_id);
        let mut tracks = Vec::with_capacity(n_tracks);
        for _ in 0..n_tracks {
            match self.next_record() {
                Some(Ok(fields)) => tracks.push(self.parse_track(&fields)?),
                Some(Err(e)) => return Err(e),
                None => return Err(self.err(format!("event {event_id} ends after {} of {n_tracks} tracks", tracks.len()))),
            }
        }
        Ok(Event { event_id, tracks })
    }
}

impl<R: BufRead> Iterator for EventReader<R> {
    type Item = Result<Event>;

    fn next(&mut self) -> Option<Result<Event>> {
        if self.failed {
            return None;
        }
        let item = match self.next_record()? {
            Ok(header) => self.read_event(header),
            Err(e) => Err(e),
        };
        self.failed = item.is_err();
        Some(item)
    }
}

/// Events `[first, first + count)` of a reader; skipped events are still
/// parsed so that errors in them surface.
pub struct EventRange<R> {
    reader: EventReader<R>,
    to_skip: usize,
    remaining: Option<usize>,
}

impl<R: BufRead> Iterator for EventRange<R> {
    type Item = Result<Event>;

    fn next(&mut self) -> Option<Result<Event>> {
        while self.to_skip > 0 {
            self.to_skip -= 1;
            if let Err(e) = self.reader.next()? {
                return Some(Err(e));
            }
        }
        match &mut self.remaining {
            Some(0) => None,
            Some(n) => {
                *n -= 1;
                self.reader.next()
            }
            None => self.reader.next(),
        }
    }
}

pub fn event_range<R: BufRead>(reader: EventReader<R>, first: usize, count: Option<usize>) -> EventRange<R> {
    EventRange {
        reader,
        to_skip: first,
        remaining: count,
    }
}

/// Streams events `[first, first + count)` from `path`; `None` reads to the
/// end. Ranges past the end of the file yield fewer events.
pub fn read_events(
    path: impl AsRef<Path>,
    first: usize,
    count: Option<usize>,
) -> Result<EventRange<BufReader<File>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(event_range(
        EventReader::new(BufReader::new(file), path.display().to_string()),
        first,
        count,
    ))
}

pub fn parse_events(text: &str, source_name: &str) -> Result<Vec<Event>> {
    EventReader::new(text.as_bytes(), source_name).collect()
}

pub fn format_event(out: &mut String, event: &Event) {
    use std::fmt::Write as _;
    let _ = writeln!(out, "EVENT {} {}", event.event_id, event.tracks.len());
    for t in &event.tracks {
        let _ = writeln!(
            out,
            "TRACK {} {} {} {} {} {} {} {} {}",
            t.kind,
            real(t.position.x),
            real(t.position.y),
            real(t.position.z),
            real(t.direction.x),
            real(t.direction.y),
            real(t.direction.z),
            real(t.energy),
            real(t.time)
        );
    }
}

pub fn events_to_text(events: &[Event]) -> String {
    let mut out = format!("{EVENT_HEADER}\n");
    for e in events {
        format_event(&mut out, e);
    }
    out
}

pub fn write_events(path: impl AsRef<Path>, events: &[Event]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, events_to_text(events)).map_err(|e| Error::io(path, e))
}

/// Writes result records one event at a time.
pub struct ResultWriter<W: Write> {
    out: W,
    name: String,
}

impl<W: Write> ResultWriter<W> {
    pub fn new(mut out: W, name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        writeln!(out, "{RESULT_HEADER}").map_err(|e| Error::io(name.clone(), e))?;
        Ok(ResultWriter { out, name })
    }

    pub fn write(&mut self, result: &EventResult) -> Result<()> {
        let io = |e| Error::io(self.name.clone(), e);
        writeln!(
            self.out,
            "EVENT {} {} {}",
            result.event_id,
            result.hits.len(),
            result.n_raw_hits
        )
        .map_err(io)?;
        for h in &result.hits {
            writeln!(
                self.out,
                "HIT {} {} {} {} {}",
                h.om_id,
                h.pmt_id,
                real(h.time),
                h.npe,
                h.light_class
            )
            .map_err(io)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush().map_err(|e| Error::io(self.name.clone(), e))?;
        Ok(self.out)
    }
}

pub fn results_to_bytes(results: &[EventResult]) -> Vec<u8> {
    let mut w = ResultWriter::new(Vec::new(), "<memory>").expect("writing to memory");
    for r in results {
        w.write(r).expect("writing to memory");
    }
    w.finish().expect("writing to memory")
}

pub fn write_results(path: impl AsRef<Path>, results: &[EventResult]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = ResultWriter::new(BufWriter::new(file), path.display().to_string())?;
    for r in results {
        w.write(r)?;
    }
    w.finish()?;
    Ok(())
}

/// Parses a result file back; timings are zero.
pub fn parse_results(text: &str, source_name: &str) -> Result<Vec<EventResult>> {
    let mut results: Vec<EventResult> = Vec::new();
    let mut expected_hits = 0usize;
    for (index, raw) in text.lines().enumerate() {
        let line_no = index + 1;
        let err = |msg: String| Error::parse(source_name, line_no, msg);
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        match (f[0], f.len()) {
            ("EVENT", 4) => {
                if expected_hits != 0 {
                    return Err(err(format!("{expected_hits} HIT lines missing before this EVENT")));
                }
                let num = |s: &str| s.parse::<u64>().map_err(|_| err(format!("invalid integer '{s}'")));
                let event_id = num(f[1])?;
                expected_hits = num(f[2])? as usize;
                results.push(EventResult {
                    event_id,
                    hits: Vec::with_capacity(expected_hits),
                    n_raw_hits: num(f[3])? as usize,
                    timing: PhaseTiming::default(),
                });
            }
            ("HIT", 6) => {
                let Some(current) = results.last_mut().filter(|_| expected_hits > 0) else {
                    return Err(err("unexpected HIT line".into()));
                };
                let int = |s: &str| s.parse::<u32>().map_err(|_| err(format!("invalid integer '{s}'")));
                current.hits.push(Hit {
                    om_id: int(f[1])?,
                    pmt_id: int(f[2])?,
                    time: parse_real(f[3], "time").map_err(err)?,
                    npe: int(f[4])?,
                    light_class: f[5].parse().map_err(|e: Error| err(e.to_string()))?,
                });
                expected_hits -= 1;
            }
            _ => return Err(err(format!("unrecognized line '{line}'"))),
        }
    }
    if expected_hits != 0 {
        return Err(Error::parse(source_name, 0, "file ends inside an event"));
    }
    Ok(results)
}

/// Timing summary of one benchmark configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub energy_slice: String,
    pub workers: usize,
    pub scheduling: Scheduling,
    pub mean_hit_detect_ms: f64,
    pub mean_total_ms: f64,
}

impl RunSummary {
    pub fn from_report(energy_slice: &str, scheduling: Scheduling, report: &TimingReport) -> Self {
        RunSummary {
            energy_slice: energy_slice.to_string(),
            workers: report.workers,
            scheduling,
            mean_hit_detect_ms: report.mean_hit_detect_ns() / 1e6,
            mean_total_ms: report.mean_total_ns() / 1e6,
        }
    }
}

pub const TIMING_CSV_HEADER: &str =
    "energy_slice,workers,scheduling,mean_hit_detect_ms,mean_total_ms,speedup_hit_detect,speedup_total";

/// `(speedup_hit_detect, speedup_total)` of each run against the
/// single-worker run of the same slice (same scheduling preferred).
pub fn speedups(runs: &[RunSummary]) -> Vec<Option<(f64, f64)>> {
    runs.iter()
        .map(|run| {
            let same_slice = |r: &&RunSummary| r.energy_slice == run.energy_slice && r.workers == 1;
            let base = runs
                .iter()
                .filter(same_slice)
                .find(|r| r.scheduling == run.scheduling)
                .or_else(|| runs.iter().find(same_slice))?;
            Some((
                base.mean_hit_detect_ms / run.mean_hit_detect_ms,
                base.mean_total_ms / run.mean_total_ms,
            ))
        })
        .collect()
}

pub fn timing_csv(runs: &[RunSummary]) -> String {
    let mut out = format!("{TIMING_CSV_HEADER}\n");
    for (run, speedup) in runs.iter().zip(speedups(runs)) {
        let (hit, total) = match speedup {
            Some((h, t)) => (h.to_string(), t.to_string()),
            None => (String::new(), String::new()),
        };
        // shortest round-trip formatting keeps the speedups reproducible from the columns
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            run.energy_slice,
            run.workers,
            run.scheduling,
            run.mean_hit_detect_ms,
            run.mean_total_ms,
            hit,
            total
        ));
    }
    out
}

pub fn write_timing_csv(path: impl AsRef<Path>, runs: &[RunSummary]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, timing_csv(runs)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::photonics::LightClass;
    use proptest::prelude::*;

    fn track(kind: TrackKind, energy: f64) -> Track {
        Track {
            kind,
            position: Vec3::new(1.5, -2.25, 100.0),
            direction: Vec3::new(0.6, 0.0, -0.8),
            energy,
            time: 12.5,
        }
    }

    fn three_events() -> Vec<Event> {
        vec![
            Event {
                event_id: 0,
                tracks: vec![track(TrackKind::Muon, 1e3)],
            },
            Event {
                event_id: 4,
                tracks: vec![track(TrackKind::Muon, 2e4), track(TrackKind::EmShower, 30.0)],
            },
            Event {
                event_id: 9,
                tracks: vec![],
            },
        ]
    }

    #[test]
    fn ranges_select_events() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.txt");
        write_events(&path, &three_events()).unwrap();
        let second: Vec<Event> = read_events(&path, 1, Some(1)).unwrap().collect::<Result<_>>().unwrap();
        assert_eq!(second, vec![three_events()[1].clone()]);
        let all: Vec<Event> = read_events(&path, 0, None).unwrap().collect::<Result<_>>().unwrap();
        assert_eq!(all, three_events());
        let past: Vec<Event> = read_events(&path, 2, Some(10)).unwrap().collect::<Result<_>>().unwrap();
        assert_eq!(past.len(), 1);
        assert_eq!(read_events(&path, 5, None).unwrap().count(), 0);
    }

    #[test]
    fn malformed_energy_names_line() {
        let text = "EVENT 0 1\n# comment\nTRACK muon 0 0 0 0 0 1 abc 0\n";
        let err = parse_events(text, "ev.txt").unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("ev.txt:3:") && msg.contains("energy"), "{msg}");
        let err = parse_events("EVENT 0 1\nTRACK muon 0 0 0 0 0 1 -5 0\n", "ev.txt").unwrap_err();
        assert!(err.to_string().starts_with("ev.txt:2:"));
    }

    #[test]
    fn structural_errors() {
        assert!(parse_events("EVENT 3 0\nEVENT 3 0\n", "e").is_err());
        assert!(parse_events("EVENT 0 2\nTRACK muon 0 0 0 0 0 1 5 0\n", "e").is_err());
        assert!(parse_events("TRACK muon 0 0 0 0 0 1 5 0\n", "e").is_err());
        assert!(parse_events("EVENT 0 1\nTRACK tau 0 0 0 0 0 1 5 0\n", "e").is_err());
        // the reader stops after the first error
        let mut reader = EventReader::new("EVENT x 0\nEVENT 1 0\n".as_bytes(), "e");
        assert!(reader.next().unwrap().is_err());
        assert!(reader.next().is_none());
    }

    fn result_with_hits() -> EventResult {
        let hit = |pmt_id, time| Hit {
            om_id: 2,
            pmt_id,
            time,
            npe: 1,
            light_class: LightClass::MuonScattered,
        };
        EventResult {
            event_id: 7,
            hits: vec![hit(0, 10.25), hit(3, 1.0)],
            n_raw_hits: 5,
            timing: PhaseTiming::default(),
        }
    }

    #[test]
    fn result_format() {
        assert_eq!(results_to_bytes(&[]), format!("{RESULT_HEADER}\n").into_bytes());
        let text = String::from_utf8(results_to_bytes(&[result_with_hits()])).unwrap();
        let expected = format!(
            "{RESULT_HEADER}\nEVENT 7 2 5\nHIT 2 0 1.02500000000e1 1 muon_scattered\nHIT 2 3 1.00000000000e0 1 muon_scattered\n"
        );
        assert_eq!(text, expected);
        assert_eq!(parse_results(&text, "r").unwrap(), vec![result_with_hits()]);
    }

    #[test]
    fn writing_twice_gives_identical_files() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        let mut r = result_with_hits();
        write_results(&a, &[r.clone()]).unwrap();
        r.timing.hit_detect = 12345;
        write_results(&b, &[r]).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    fn run(slice: &str, workers: usize, hit: f64, total: f64) -> RunSummary {
        RunSummary {
            energy_slice: slice.into(),
            workers,
            scheduling: Scheduling::Dynamic,
            mean_hit_detect_ms: hit,
            mean_total_ms: total,
        }
    }

    #[test]
    fn timing_csv_speedups() {
        let runs = [run("mid", 1, 10.0, 11.0), run("mid", 4, 4.0, 5.5)];
        let csv = timing_csv(&runs);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], TIMING_CSV_HEADER);
        assert_eq!(lines[1], "mid,1,dynamic,10,11,1,1");
        assert_eq!(lines[2], "mid,4,dynamic,4,5.5,2.5,2");
    }

    proptest! {
        #[test]
        fn event_text_round_trip(
            energies in prop::collection::vec(1.0..1e8f64, 1..5),
            theta in 0.0..std::f64::consts::PI,
            pos in prop::array::uniform3(-1e3..1e3f64),
        ) {
            let dir = Vec3::new(theta.sin(), 0.0, theta.cos());
            let events: Vec<Event> = energies.iter().enumerate().map(|(i, &e)| Event {
                event_id: 2 * i as u64,
                tracks: vec![Track {
                    kind: if i % 2 == 0 { TrackKind::Muon } else { TrackKind::EmShower },
                    position: Vec3::new(pos[0], pos[1], pos[2]),
                    direction: dir,
                    energy: e,
                    time: e / 7.0,
                }],
            }).collect();
            let text = events_to_text(&events);
            let back = parse_events(&text, "mem").unwrap();
            prop_assert_eq!(&events_to_text(&back), &text);
            for (a, b) in events.iter().zip(&back) {
                let (ta, tb) = (&a.tracks[0], &b.tracks[0]);
                prop_assert!((ta.energy - tb.energy).abs() <= 1e-11 * ta.energy);
                prop_assert!((ta.direction - tb.direction).norm() <= 1e-11);
            }
            // sharded reads compose
            let k = back.len() / 2;
            let head: Vec<Event> = event_range(EventReader::new(text.as_bytes(), "m"), 0, Some(k)).collect::<Result<_>>().unwrap();
            let tail: Vec<Event> = event_range(EventReader::new(text.as_bytes(), "m"), k, None).collect::<Result<_>>().unwrap();
            prop_assert_eq!([head, tail].concat(), back);
        }
    }
}
