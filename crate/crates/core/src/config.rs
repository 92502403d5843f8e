//! Simulation configuration and its flat `key = value` file format.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How optical-module indices are handed to worker lanes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheduling {
    /// Lane `w` of `W` takes the contiguous block `[w·N/W, (w+1)·N/W)`.
    StaticBlock,
    /// Lanes pull `chunk` indices at a time from a shared cursor.
    Dynamic,
}

impl fmt::Display for Scheduling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheduling::StaticBlock => "static",
            Scheduling::Dynamic => "dynamic",
        })
    }
}

impl FromStr for Scheduling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" | "static_block" => Ok(Scheduling::StaticBlock),
            "dynamic" => Ok(Scheduling::Dynamic),
            other => Err(Error::Config(format!("unknown scheduling '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub workers: usize,
    pub scheduling: Scheduling,
    /// Optical modules per dispatch under dynamic scheduling.
    pub chunk: usize,

    // muon propagation
    pub step_m: f64,
    pub e_min_gev: f64,
    pub max_steps: usize,
    pub a_gevm: f64,
    pub b_perm: f64,
    pub shower_prob: f64,
    pub shower_frac_min: f64,
    pub shower_frac_max: f64,
    pub shower_threshold_gev: f64,

    // light yield and detection
    pub yield_muon_per_m: f64,
    pub yield_shower_per_gev: f64,
    pub lambda_abs_m: f64,
    pub scatter_fraction: f64,
    pub n_water: f64,
    pub d_min_m: f64,
    /// Sources farther than this from a module contribute nothing.
    pub d_max_m: f64,
    pub mu_max: f64,

    pub merge_window_ns: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 1,
            workers: 1,
            scheduling: Scheduling::Dynamic,
            chunk: 4,
            step_m: 10.0,
            e_min_gev: 1.0,
            max_steps: 10_000,
            a_gevm: 0.24,
            b_perm: 3.4e-4,
            shower_prob: 0.05,
            shower_frac_min: 0.001,
            shower_frac_max: 0.01,
            shower_threshold_gev: 1.0,
            yield_muon_per_m: 3.5e4,
            yield_shower_per_gev: 1.0e5,
            lambda_abs_m: 50.0,
            scatter_fraction: 0.2,
            n_water: 1.35,
            d_min_m: 0.5,
            d_max_m: 300.0,
            mu_max: 1.0e4,
            merge_window_ns: 1.0,
        }
    }
}

macro_rules! config_keys {
    ($($name:ident),* $(,)?) => {
        /// Every key accepted by the configuration file.
        pub const KEYS: &[&str] = &[$(stringify!($name)),*];

        impl SimConfig {
            /// Sets one field from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($name) => {
                        self.$name = value.parse().map_err(|_| {
                            Error::Config(format!("invalid value '{value}' for '{key}'"))
                        })?;
                    })*
                    _ => return Err(Error::Config(format!("unknown key '{key}'"))),
                }
                Ok(())
            }

            /// The configuration in file format, one key per line.
            pub fn to_text(&self) -> String {
                let mut out = String::new();
                $(out.push_str(&format!("{} = {}\n", stringify!($name), self.$name));)*
                out
            }
        }
    };
}

config_keys!(
    seed,
    workers,
    scheduling,
    chunk,
    step_m,
    e_min_gev,
    max_steps,
    a_gevm,
    b_perm,
    shower_prob,
    shower_frac_min,
    shower_frac_max,
    shower_threshold_gev,
    yield_muon_per_m,
    yield_shower_per_gev,
    lambda_abs_m,
    scatter_fraction,
    n_water,
    d_min_m,
    d_max_m,
    mu_max,
    merge_window_ns,
);

impl SimConfig {
    /// Speed of light in water, m/ns.
    pub fn c_water(&self) -> f64 {
        crate::C_LIGHT_M_PER_NS / self.n_water
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.workers < 1 {
            return bad("workers must be >= 1");
        }
        if self.chunk < 1 {
            return bad("chunk must be >= 1");
        }
        if self.max_steps < 1 {
            return bad("max_steps must be >= 1");
        }
        let positive = [
            ("step_m", self.step_m),
            ("e_min_gev", self.e_min_gev),
            ("a_gevm", self.a_gevm),
            ("lambda_abs_m", self.lambda_abs_m),
            ("n_water", self.n_water),
            ("d_min_m", self.d_min_m),
            ("d_max_m", self.d_max_m),
            ("mu_max", self.mu_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite value > 0")));
            }
        }
        let non_negative = [
            ("b_perm", self.b_perm),
            ("shower_threshold_gev", self.shower_threshold_gev),
            ("yield_muon_per_m", self.yield_muon_per_m),
            ("yield_shower_per_gev", self.yield_shower_per_gev),
            ("merge_window_ns", self.merge_window_ns),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite value >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.shower_prob) {
            return bad("shower_prob must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.scatter_fraction) {
            return bad("scatter_fraction must be in [0, 1]");
        }
        if !(0.0 <= self.shower_frac_min
            && self.shower_frac_min <= self.shower_frac_max
            && self.shower_frac_max <= 1.0)
        {
            return bad("need 0 <= shower_frac_min <= shower_frac_max <= 1");
        }
        if self.d_max_m < self.d_min_m {
            return bad("d_max_m must be >= d_min_m");
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str, source_name: &str) -> Result<()> {
        for (index, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::parse(source_name, index + 1, "expected 'key = value'"));
            };
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::parse(source_name, index + 1, e.to_string()))?;
        }
        Ok(())
    }

    /// Defaults overridden by the file at `path`, then validated.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = SimConfig::default();
        config.apply_text(&text, &path.display().to_string())?;
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        SimConfig::default().validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let c = SimConfig {
            seed: 99,
            scheduling: Scheduling::StaticBlock,
            scatter_fraction: 0.35,
            ..SimConfig::default()
        };
        let mut back = SimConfig::default();
        back.apply_text(&c.to_text(), "mem").unwrap();
        assert_eq!(back, c);
        assert_eq!(KEYS.len(), c.to_text().lines().count());
    }

    #[test]
    fn comments_and_errors() {
        let mut c = SimConfig::default();
        c.apply_text("# header\nworkers = 4 # inline\n\nchunk=2\n", "cfg").unwrap();
        assert_eq!((c.workers, c.chunk), (4, 2));
        let err = c.apply_text("workers = 4\nbogus = 1\n", "cfg").unwrap_err();
        assert!(err.to_string().starts_with("cfg:2:"), "{err}");
        assert!(c.apply_text("lambda_abs_m = fifty\n", "cfg").is_err());
        assert!(c.apply_text("no equals sign\n", "cfg").is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let cases: [fn(&mut SimConfig); 5] = [
            |c| c.workers = 0,
            |c| c.chunk = 0,
            |c| c.scatter_fraction = 1.5,
            |c| c.lambda_abs_m = 0.0,
            |c| c.shower_frac_min = 0.9,
        ];
        for mutate in cases {
            let mut c = SimConfig::default();
            mutate(&mut c);
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
