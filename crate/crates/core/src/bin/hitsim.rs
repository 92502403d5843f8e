//! `hitsim` command-line driver.
//!
//! Exit codes: 0 success, 1 usage, 2 input error, 3 determinism regression.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hitsim::bench::{available_cores, generate_bench_events, run_bench, BenchPlan, EnergySlice};
use hitsim::eventio::{read_events, write_events, write_timing_csv, ResultWriter, RunSummary};
use hitsim::geometry::load_geometry;
use hitsim::photonics::{build_cdf_set, generate_synthetic_pdf_set, load_pdf_set, SynthParams};
use hitsim::{CdfSet, DetectorGeometry, Engine, Error, Result, Scheduling, SimConfig};

#[derive(Parser)]
#[command(name = "hitsim", version, about = "Photomultiplier hit simulation for neutrino telescopes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Engine settings shared by `simulate` and `bench`.
#[derive(clap::Args)]
struct EngineArgs {
    /// Detector geometry file
    #[arg(long)]
    geometry: PathBuf,
    /// Directory holding the four `<class>.pdf.txt` tables
    #[arg(long)]
    tables: PathBuf,
    /// `key = value` configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scheduling: Option<Scheduling>,
    /// OMs per dispatch under dynamic scheduling
    #[arg(long)]
    chunk: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate hits for an event file
    Simulate {
        #[command(flatten)]
        engine: EngineArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        /// Index of the first event to simulate
        #[arg(long, default_value_t = 0)]
        first: usize,
        /// Number of events to simulate (default: to the end of the file)
        #[arg(long)]
        count: Option<usize>,
        /// Write a one-row timing CSV here
        #[arg(long)]
        timing_csv: Option<PathBuf>,
    },
    /// Time the engine over worker counts and write a speedup CSV
    Bench {
        #[command(flatten)]
        engine: EngineArgs,
        /// One or more of low, mid, high, all
        #[arg(long, value_delimiter = ',', default_value = "mid")]
        slice: Vec<EnergySlice>,
        /// Events per slice
        #[arg(long, default_value_t = 100)]
        events: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        workers: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the synthetic photon arrival-time tables
    GenTables {
        #[arg(long)]
        out: PathBuf,
        /// Only `default` exists
        #[arg(long, default_value = "default")]
        preset: String,
    },
    /// Write the built-in 115-module detector
    GenGeometry {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write single-muon benchmark events
    GenEvents {
        /// Geometry whose bounding box places the tracks (default: built-in detector)
        #[arg(long)]
        geometry: Option<PathBuf>,
        #[arg(long, default_value = "mid")]
        slice: EnergySlice,
        #[arg(long, default_value_t = 100)]
        events: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

impl EngineArgs {
    fn load(&self, workers: Option<usize>) -> Result<(SimConfig, DetectorGeometry, CdfSet)> {
        let mut config = match &self.config {
            Some(path) => SimConfig::load(path)?,
            None => SimConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(s) = self.scheduling {
            config.scheduling = s;
        }
        if let Some(c) = self.chunk {
            config.chunk = c;
        }
        if let Some(w) = workers {
            config.workers = w;
        }
        config.validate()?;
        let geometry = load_geometry(&self.geometry)?;
        let cdfs = build_cdf_set(&load_pdf_set(&self.tables)?, config.workers)?;
        Ok((config, geometry, cdfs))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            engine,
            input,
            output,
            workers,
            first,
            count,
            timing_csv,
        } => {
            let (config, geometry, cdfs) = engine.load(workers)?;
            let scheduling = config.scheduling;
            let engine = Engine::new(config)?;
            let events = read_events(&input, first, count)?;
            let file = File::create(&output).map_err(|e| io_error(&output, e))?;
            let mut writer = ResultWriter::new(BufWriter::new(file), output.display().to_string())?;
            let report = engine.run_pipeline(events, &geometry, &cdfs, |r| writer.write(r))?;
            writer.finish()?;
            eprintln!(
                "{} events, mean {:.3} ms/event, hit_detect {:.1}% of total",
                report.events(),
                report.mean_total_ns() / 1e6,
                100.0 * report.hit_detect_fraction()
            );
            if let Some(path) = timing_csv {
                write_timing_csv(path, &[RunSummary::from_report("input", scheduling, &report)])?;
            }
            if !report.failures.is_empty() {
                for (id, reason) in &report.failures {
                    eprintln!("event {id} failed: {reason}");
                }
                return Err(Error::InvalidInput(format!(
                    "{} event(s) failed and were left out of {}",
                    report.failures.len(),
                    output.display()
                )));
            }
            Ok(())
        }
        Command::Bench {
            engine,
            slice,
            events,
            workers,
            repetitions,
            warmup,
            out,
        } => {
            let (config, geometry, cdfs) = engine.load(None)?;
            let plan = BenchPlan {
                worker_counts: workers,
                events_per_slice: events,
                repetitions,
                warmup,
                scheduling: config.scheduling,
                seed: config.seed,
                ..BenchPlan::default()
            };
            plan.validate()?;
            let max_workers = plan.worker_counts.iter().copied().max().unwrap_or(1);
            let cores = available_cores();
            if cores < max_workers {
                eprintln!("warning: {max_workers} workers requested but only {cores} core(s) available; speedups will not be meaningful");
            }
            let records = run_bench(&plan, &slice, &geometry, &cdfs, &config)?;
            for r in &records {
                eprintln!(
                    "{:>4} slice, {} worker(s): hit_detect {:.3} ms, total {:.3} ms, hit_detect share {:.1}%{}",
                    r.summary.energy_slice,
                    r.summary.workers,
                    r.summary.mean_hit_detect_ms,
                    r.summary.mean_total_ms,
                    100.0 * r.hit_detect_fraction,
                    if r.failed_events > 0 {
                        format!(", {} failed event(s)", r.failed_events)
                    } else {
                        String::new()
                    }
                );
            }
            let runs: Vec<RunSummary> = records.into_iter().map(|r| r.summary).collect();
            write_timing_csv(out, &runs)
        }
        Command::GenTables { out, preset } => {
            if preset != "default" {
                return Err(Error::InvalidInput(format!("unknown table preset '{preset}'")));
            }
            generate_synthetic_pdf_set(&SynthParams::default(), out)
        }
        Command::GenGeometry { out } => DetectorGeometry::default_detector().write(out),
        Command::GenEvents {
            geometry,
            slice,
            events,
            seed,
            out,
        } => {
            let geometry = match geometry {
                Some(path) => load_geometry(path)?,
                None => DetectorGeometry::default_detector(),
            };
            let plan = BenchPlan {
                events_per_slice: events,
                ..BenchPlan::default()
            };
            write_events(out, &generate_bench_events(&plan, slice, seed, &geometry))
        }
    }
}

fn io_error(path: &std::path::Path, e: std::io::Error) -> Error {
    Error::InvalidInput(format!("cannot create {}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Determinism(_) => 3,
                _ => 2,
            })
        }
    }
}
