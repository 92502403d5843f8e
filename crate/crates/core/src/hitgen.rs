//! Expected photoelectrons, Poisson counts, arrival times and hit merging.
//!
//! This is the hot path of the simulation. For every light source, PMT and
//! light class the expected number of photoelectrons is
//!
//! ```text
//! mu = N_γ · (ρ² / 4d²) · max(0, cos η) · exp(−d / λ_abs) · QE · f_class
//! ```
//!
//! where `ρ` is the PMT radius, `d` the source–module distance (clamped below
//! at `d_min_m`) and `η` the angle between the PMT normal and the direction
//! back to the source. `f_class` is `scatter_fraction` for scattered light
//! and `1 − scatter_fraction` for direct light. The photoelectron count is
//! Poisson(mu), and each photoelectron gets an arrival time
//! `t_geo + invert_cdf(u)`.

use std::cmp::Ordering;

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::geometry::{OpticalModule, Pmt, Vec3};
use crate::photonics::{invert_cdf, CdfSet, LightClass};
use crate::propagation::{Segment, ShowerSource};
use crate::rng::{RngStream, Uniforms};
use crate::C_LIGHT_M_PER_NS;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub om_id: u32,
    pub pmt_id: u32,
    /// ns
    pub time: f64,
    pub npe: u32,
    pub light_class: LightClass,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitExpectation {
    pub mu: f64,
    /// Distance used for the table lookup, m.
    pub r: f64,
    pub cos_inc: f64,
    /// Geometric arrival time, ns.
    pub t_geo: f64,
    pub light_class: LightClass,
}

/// A light emitter on the track axis, in the track frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Source {
    Segment(Segment),
    Shower(ShowerSource),
}

impl Source {
    /// Emission point on the z axis and its time.
    fn emission(&self) -> (f64, f64) {
        match self {
            Source::Segment(s) => {
                let z = s.midpoint();
                (z, s.time_start + (z - s.z_start) / C_LIGHT_M_PER_NS)
            }
            Source::Shower(s) => (s.z, s.time),
        }
    }

    fn photons(&self, config: &SimConfig) -> f64 {
        match self {
            Source::Segment(s) => config.yield_muon_per_m * s.length(),
            Source::Shower(s) => config.yield_shower_per_gev * s.energy,
        }
    }

    /// `(direct, scattered)` classes for this kind of source.
    pub fn classes(&self) -> [LightClass; 2] {
        match self {
            Source::Segment(_) => [LightClass::MuonDirect, LightClass::MuonScattered],
            Source::Shower(_) => [LightClass::ShowerDirect, LightClass::ShowerScattered],
        }
    }
}

/// Everything about one (source, module) pair that does not depend on the
/// individual PMT.
#[derive(Debug, Clone, Copy)]
pub struct SourceView {
    /// Unit vector from the module back to the emission point.
    toward_source: Vec3,
    d: f64,
    t_geo: f64,
    /// `N_γ · exp(−d/λ) / (4d²)`, zero when out of range.
    flux: f64,
    classes: [LightClass; 2],
}

impl SourceView {
    pub fn new(source: &Source, om_position: Vec3, config: &SimConfig) -> Self {
        let (z, time) = source.emission();
        let offset = om_position - Vec3::new(0.0, 0.0, z);
        let raw = offset.norm();
        let toward_source = if raw > 0.0 {
            (-offset).scale(1.0 / raw)
        } else {
            // module sits on the emission point: light arrives along +z
            Vec3::new(0.0, 0.0, -1.0)
        };
        let d = raw.max(config.d_min_m);
        let flux = if raw > config.d_max_m {
            0.0
        } else {
            source.photons(config) * (-d / config.lambda_abs_m).exp() / (4.0 * d * d)
        };
        SourceView {
            toward_source,
            d,
            t_geo: time + d / config.c_water(),
            flux,
            classes: source.classes(),
        }
    }

    /// `false` when no PMT of the module can receive light from the source.
    pub fn is_lit(&self) -> bool {
        self.flux > 0.0
    }

    pub fn expectation(&self, pmt: &Pmt, scattered: bool, config: &SimConfig) -> HitExpectation {
        let cos_inc = pmt.direction.dot(self.toward_source).clamp(-1.0, 1.0);
        let class_factor = if scattered {
            config.scatter_fraction
        } else {
            1.0 - config.scatter_fraction
        };
        let mu = self.flux
            * pmt.radius
            * pmt.radius
            * cos_inc.max(0.0)
            * pmt.quantum_efficiency
            * class_factor;
        HitExpectation {
            mu,
            r: self.d,
            cos_inc,
            t_geo: self.t_geo,
            light_class: self.classes[scattered as usize],
        }
    }
}

/// Expected photoelectrons on `pmt` of `om` (both in the track frame) from
/// `source`, for its direct or scattered light class.
pub fn expected_npe(
    source: &Source,
    om: &OpticalModule,
    pmt: &Pmt,
    scattered: bool,
    config: &SimConfig,
) -> HitExpectation {
    SourceView::new(source, om.position, config).expectation(pmt, scattered, config)
}

/// Above this mean, `exp(−mu)` underflows and the running product is
/// compared in log space instead.
const PRODUCT_FORM_LIMIT: f64 = 700.0;

/// Knuth's multiplication method: multiply uniforms until the product drops
/// to `exp(−mu)` or below; the count is one less than the number of draws.
pub fn sample_poisson(mu: f64, mu_max: f64, rng: &mut impl Uniforms) -> Result<u32> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::InvalidInput(format!("poisson mean {mu} must be finite and >= 0")));
    }
    if mu > mu_max {
        return Err(Error::MeanTooLarge { mu, mu_max });
    }
    let mut k: u32 = 0;
    if mu <= PRODUCT_FORM_LIMIT {
        let limit = (-mu).exp();
        let mut p = 1.0;
        loop {
            k += 1;
            p *= rng.next_uniform();
            if p <= limit {
                break;
            }
        }
    } else {
        let mut log_p = 0.0;
        loop {
            k += 1;
            log_p += rng.next_uniform().ln();
            if log_p <= -mu {
                break;
            }
        }
    }
    Ok(k - 1)
}

/// Appends one `npe = 1` hit per sampled photoelectron. Draws the count
/// first, then one uniform per arrival time. A zero mean draws nothing, and
/// a zero-flux table neighborhood puts every photoelectron at `t_geo`.
pub fn generate_hits_into(
    out: &mut Vec<Hit>,
    exp: &HitExpectation,
    cdfs: &CdfSet,
    om_id: u32,
    pmt_id: u32,
    mu_max: f64,
    rng: &mut impl Uniforms,
) -> Result<()> {
    if exp.mu == 0.0 {
        return Ok(());
    }
    let n = sample_poisson(exp.mu, mu_max, rng)?;
    if n == 0 {
        return Ok(());
    }
    let table = cdfs.get(exp.light_class);
    let mut push = |time| {
        out.push(Hit {
            om_id,
            pmt_id,
            time,
            npe: 1,
            light_class: exp.light_class,
        })
    };
    match invert_cdf(table, exp.r, exp.cos_inc, 0.0) {
        Err(Error::ZeroFlux { .. }) => {
            for _ in 0..n {
                push(exp.t_geo);
            }
        }
        Err(e) => return Err(e),
        Ok(_) => {
            for _ in 0..n {
                let u = rng.next_uniform();
                push(exp.t_geo + invert_cdf(table, exp.r, exp.cos_inc, u)?);
            }
        }
    }
    Ok(())
}

pub fn generate_hits(
    exp: &HitExpectation,
    cdfs: &CdfSet,
    om_id: u32,
    pmt_id: u32,
    mu_max: f64,
    rng: &mut impl Uniforms,
) -> Result<Vec<Hit>> {
    let mut out = Vec::new();
    generate_hits_into(&mut out, exp, cdfs, om_id, pmt_id, mu_max, rng)?;
    Ok(out)
}

fn pmt_time_class(a: &Hit, b: &Hit) -> Ordering {
    a.pmt_id
        .cmp(&b.pmt_id)
        .then(a.time.total_cmp(&b.time))
        .then(a.light_class.cmp(&b.light_class))
}

/// Hits on one module (already in the track frame) from every segment and
/// shower, with the module's private stream. Iteration order is segments,
/// then showers, then PMTs in module order, then direct before scattered.
/// The returned hits are sorted by (pmt_id, time, light_class).
pub fn process_om_with_stream(
    om: &OpticalModule,
    segments: &[Segment],
    showers: &[ShowerSource],
    cdfs: &CdfSet,
    config: &SimConfig,
    rng: &mut impl Uniforms,
) -> Result<Vec<Hit>> {
    let mut hits = Vec::new();
    let sources = segments
        .iter()
        .map(|s| Source::Segment(*s))
        .chain(showers.iter().map(|s| Source::Shower(*s)));
    for source in sources {
        let view = SourceView::new(&source, om.position, config);
        if !view.is_lit() {
            continue;
        }
        for pmt in &om.pmts {
            for scattered in [false, true] {
                let exp = view.expectation(pmt, scattered, config);
                generate_hits_into(&mut hits, &exp, cdfs, om.om_id, pmt.pmt_id, config.mu_max, rng)?;
            }
        }
    }
    hits.sort_by(pmt_time_class);
    Ok(hits)
}

/// [`process_om_with_stream`] with the stream `rng_factory(om_id)`.
pub fn process_om(
    om: &OpticalModule,
    segments: &[Segment],
    showers: &[ShowerSource],
    cdfs: &CdfSet,
    config: &SimConfig,
    rng_factory: impl FnOnce(u32) -> RngStream,
) -> Result<Vec<Hit>> {
    let mut rng = rng_factory(om.om_id);
    process_om_with_stream(om, segments, showers, cdfs, config, &mut rng)
}

/// Coalesces hits of the same (om, pmt, class) whose times fall within
/// `window` of a cluster's earliest hit. Each cluster becomes one hit at
/// that earliest time carrying the summed npe. Output is sorted by
/// (om_id, pmt_id, time), ties by light class.
pub fn merge_hits(hits: &[Hit], window: f64) -> Result<Vec<Hit>> {
    if !(window >= 0.0) {
        return Err(Error::InvalidInput(format!("merge window {window} must be >= 0")));
    }
    let mut sorted = hits.to_vec();
    sorted.sort_by(|a, b| {
        (a.om_id, a.pmt_id, a.light_class)
            .cmp(&(b.om_id, b.pmt_id, b.light_class))
            .then(a.time.total_cmp(&b.time))
    });
    let mut merged: Vec<Hit> = Vec::with_capacity(sorted.len());
    for hit in sorted {
        match merged.last_mut() {
            Some(anchor)
                if (anchor.om_id, anchor.pmt_id, anchor.light_class)
                    == (hit.om_id, hit.pmt_id, hit.light_class)
                    && hit.time - anchor.time <= window =>
            {
                anchor.npe += hit.npe;
            }
            _ => merged.push(hit),
        }
    }
    merged.sort_by(|a, b| a.om_id.cmp(&b.om_id).then(pmt_time_class(a, b)));
    Ok(merged)
}
