//! Arrival-time tables for the four light classes.
//!
//! A [`PdfTable`] holds an arrival-time density gridded over distance `r`,
//! incidence cosine and residual time `t`. [`build_cdf_set`] integrates every
//! `(r, cos)` slice with the trapezoidal rule and normalizes it to a CDF.
//! The CDFs are then evaluated by trilinear interpolation ([`eval_cdf`]) and
//! sampled by inverse transform ([`invert_cdf`]).
//!
//! Linear interpolation along every axis keeps interpolated CDFs monotone, so
//! inversion is always well defined. Queries outside the grid clamp to the
//! hull.

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::config::Scheduling;
use crate::error::{Error, Result};
use crate::geometry::{parse_real, real};
use crate::schedule::WorkerPool;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LightClass {
    MuonDirect,
    MuonScattered,
    ShowerDirect,
    ShowerScattered,
}

impl LightClass {
    pub const ALL: [LightClass; 4] = [
        LightClass::MuonDirect,
        LightClass::MuonScattered,
        LightClass::ShowerDirect,
        LightClass::ShowerScattered,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LightClass::MuonDirect => "muon_direct",
            LightClass::MuonScattered => "muon_scattered",
            LightClass::ShowerDirect => "shower_direct",
            LightClass::ShowerScattered => "shower_scattered",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.pdf.txt", self.name())
    }

    pub fn is_scattered(self) -> bool {
        matches!(self, LightClass::MuonScattered | LightClass::ShowerScattered)
    }

    pub fn is_shower(self) -> bool {
        matches!(self, LightClass::ShowerDirect | LightClass::ShowerScattered)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for LightClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LightClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LightClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown light class '{s}'")))
    }
}

/// The three axes shared by a PDF table and the CDF built from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Grids {
    pub r: Vec<f64>,
    pub cos: Vec<f64>,
    pub t: Vec<f64>,
}

impl Grids {
    pub fn new(r: Vec<f64>, cos: Vec<f64>, t: Vec<f64>) -> Result<Self> {
        for (name, g) in [("r", &r), ("cos", &cos), ("t", &t)] {
            if g.len() < 2 {
                return Err(Error::Table(format!("{name} grid needs at least 2 points")));
            }
            if g.iter().any(|v| !v.is_finite()) || g.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Table(format!("{name} grid must be strictly ascending")));
            }
        }
        if r[0] < 0.0 {
            return Err(Error::Table("r grid must be >= 0".into()));
        }
        if cos[0] < -1.0 || cos[cos.len() - 1] > 1.0 {
            return Err(Error::Table("cos grid must lie in [-1, 1]".into()));
        }
        Ok(Grids { r, cos, t })
    }

    pub fn slices(&self) -> usize {
        self.r.len() * self.cos.len()
    }

    #[inline]
    fn slice(&self, ir: usize, ic: usize) -> usize {
        ir * self.cos.len() + ic
    }

    #[inline]
    fn offset(&self, ir: usize, ic: usize) -> usize {
        self.slice(ir, ic) * self.t.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdfTable {
    pub light_class: LightClass,
    pub grids: Grids,
    /// Row-major `[r][cos][t]`.
    pub density: Vec<f64>,
}

impl PdfTable {
    pub fn new(light_class: LightClass, grids: Grids, density: Vec<f64>) -> Result<Self> {
        let expected = grids.slices() * grids.t.len();
        if density.len() != expected {
            return Err(Error::Table(format!(
                "{light_class}: density has {} values, grids need {expected}",
                density.len()
            )));
        }
        let k = grids.t.len();
        if let Some(pos) = density.iter().position(|d| !(*d >= 0.0) || !d.is_finite()) {
            let (slice, it) = (pos / k, pos % k);
            let (ir, ic) = (slice / grids.cos.len(), slice % grids.cos.len());
            return Err(Error::Table(format!(
                "{light_class}: density {} at [{ir}][{ic}][{it}] must be finite and >= 0",
                density[pos]
            )));
        }
        Ok(PdfTable {
            light_class,
            grids,
            density,
        })
    }

    pub fn row(&self, ir: usize, ic: usize) -> &[f64] {
        let start = self.grids.offset(ir, ic);
        &self.density[start..start + self.grids.t.len()]
    }

    pub fn to_text(&self) -> String {
        let g = &self.grids;
        let mut out = format!("CLASS {}\n", self.light_class);
        for (tag, grid) in [("RGRID", &g.r), ("COSGRID", &g.cos), ("TGRID", &g.t)] {
            let _ = write!(out, "{tag} {}", grid.len());
            for v in grid {
                let _ = write!(out, " {}", real(*v));
            }
            out.push('\n');
        }
        for ir in 0..g.r.len() {
            for ic in 0..g.cos.len() {
                let _ = write!(out, "ROW {ir} {ic}");
                for v in self.row(ir, ic) {
                    let _ = write!(out, " {}", real(*v));
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut class: Option<LightClass> = None;
        let mut grids: [Option<Vec<f64>>; 3] = [None, None, None];
        let mut rows: Vec<Option<Vec<f64>>> = Vec::new();
        let mut dims = (0, 0, 0);
        for (index, raw) in text.lines().enumerate() {
            let line_no = index + 1;
            let err = |msg: String| Error::parse(source_name, line_no, msg);
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields[0] {
                "CLASS" => {
                    let name = fields.get(1).ok_or_else(|| err("CLASS needs a name".into()))?;
                    class = Some(name.parse().map_err(|e: Error| err(e.to_string()))?);
                }
                tag @ ("RGRID" | "COSGRID" | "TGRID") => {
                    let slot = match tag {
                        "RGRID" => 0,
                        "COSGRID" => 1,
                        _ => 2,
                    };
                    let n: usize = fields
                        .get(1)
                        .and_then(|f| f.parse().ok())
                        .ok_or_else(|| err(format!("{tag} needs a point count")))?;
                    if fields.len() != n + 2 {
                        return Err(err(format!(
                            "{tag} declares {n} points but lists {}",
                            fields.len().saturating_sub(2)
                        )));
                    }
                    let values = fields[2..]
                        .iter()
                        .map(|f| parse_real(f, "grid value"))
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(err)?;
                    grids[slot] = Some(values);
                }
                "ROW" => {
                    let [Some(r), Some(c), Some(t)] = &grids else {
                        return Err(err("ROW before all three grids".into()));
                    };
                    if rows.is_empty() {
                        dims = (r.len(), c.len(), t.len());
                        rows = vec![None; dims.0 * dims.1];
                    }
                    if fields.len() != dims.2 + 3 {
                        return Err(err(format!(
                            "ROW needs {} densities, found {}",
                            dims.2,
                            fields.len().saturating_sub(3)
                        )));
                    }
                    let parse_index = |f: &str, bound: usize, what: &str| {
                        f.parse::<usize>()
                            .ok()
                            .filter(|i| *i < bound)
                            .ok_or_else(|| err(format!("{what} index '{f}' out of range")))
                    };
                    let ir = parse_index(fields[1], dims.0, "r")?;
                    let ic = parse_index(fields[2], dims.1, "cos")?;
                    let values = fields[3..]
                        .iter()
                        .map(|f| parse_real(f, "density"))
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(err)?;
                    let slot = &mut rows[ir * dims.1 + ic];
                    if slot.is_some() {
                        return Err(err(format!("duplicate ROW {ir} {ic}")));
                    }
                    *slot = Some(values);
                }
                other => return Err(err(format!("unknown record '{other}'"))),
            }
        }
        let class = class.ok_or_else(|| Error::parse(source_name, 0, "missing CLASS line"))?;
        let [Some(r), Some(c), Some(t)] = grids else {
            return Err(Error::parse(source_name, 0, "missing grid line"));
        };
        let grids = Grids::new(r, c, t).map_err(|e| Error::parse(source_name, 0, e.to_string()))?;
        if rows.len() != grids.slices() {
            return Err(Error::parse(source_name, 0, "grid/row count mismatch"));
        }
        let mut density = Vec::with_capacity(grids.slices() * grids.t.len());
        for (slice, row) in rows.into_iter().enumerate() {
            let row = row.ok_or_else(|| {
                Error::parse(
                    source_name,
                    0,
                    format!("missing ROW {} {}", slice / grids.cos.len(), slice % grids.cos.len()),
                )
            })?;
            density.extend(row);
        }
        PdfTable::new(class, grids, density)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdfTable {
    pub light_class: LightClass,
    pub grids: Grids,
    /// Row-major `[r][cos][t]`, each non-zero-flux row rising to exactly 1.
    pub cumulative: Vec<f64>,
    /// Row-major `[r][cos]`.
    pub zero_flux: Vec<bool>,
}

impl CdfTable {
    pub fn row(&self, ir: usize, ic: usize) -> &[f64] {
        let start = self.grids.offset(ir, ic);
        &self.cumulative[start..start + self.grids.t.len()]
    }

    pub fn is_zero_flux(&self, ir: usize, ic: usize) -> bool {
        self.zero_flux[self.grids.slice(ir, ic)]
    }
}

/// One table per light class, indexed by [`LightClass::index`].
#[derive(Debug, Clone, PartialEq)]
pub struct PdfSet {
    tables: [PdfTable; 4],
}

impl PdfSet {
    pub fn new(tables: [PdfTable; 4]) -> Result<Self> {
        for (class, table) in LightClass::ALL.iter().zip(&tables) {
            if table.light_class != *class {
                return Err(Error::Table(format!(
                    "slot for {class} holds a {} table",
                    table.light_class
                )));
            }
        }
        Ok(PdfSet { tables })
    }

    pub fn get(&self, class: LightClass) -> &PdfTable {
        &self.tables[class.index()]
    }

    pub fn tables(&self) -> &[PdfTable; 4] {
        &self.tables
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for table in &self.tables {
            let path = dir.join(table.light_class.file_name());
            fs::write(&path, table.to_text()).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdfSet {
    tables: [CdfTable; 4],
}

impl CdfSet {
    /// Replaces the table of `table.light_class`.
    pub fn with_table(mut self, table: CdfTable) -> Self {
        let slot = table.light_class.index();
        self.tables[slot] = table;
        self
    }

    pub fn get(&self, class: LightClass) -> &CdfTable {
        &self.tables[class.index()]
    }

    pub fn tables(&self) -> &[CdfTable; 4] {
        &self.tables
    }
}

pub fn load_pdf_set(dir: impl AsRef<Path>) -> Result<PdfSet> {
    let dir = dir.as_ref();
    let mut tables = Vec::with_capacity(4);
    for class in LightClass::ALL {
        let path = dir.join(class.file_name());
        if !path.is_file() {
            return Err(Error::Table(format!(
                "missing {class} table: {} not found",
                path.display()
            )));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let table = PdfTable::parse(&text, &path.display().to_string())?;
        if table.light_class != class {
            return Err(Error::Table(format!(
                "{} declares class {}, expected {class}",
                path.display(),
                table.light_class
            )));
        }
        tables.push(table);
    }
    let tables: [PdfTable; 4] = tables.try_into().expect("four classes");
    PdfSet::new(tables)
}

/// Trapezoidal running integral of one row, normalized to end at 1.
/// Returns `None` for a row without flux.
fn cumulative_row(density: &[f64], t: &[f64]) -> Option<Vec<f64>> {
    let mut cum = Vec::with_capacity(t.len());
    cum.push(0.0);
    let mut acc = 0.0;
    for j in 1..t.len() {
        acc += 0.5 * (density[j - 1] + density[j]) * (t[j] - t[j - 1]);
        cum.push(acc);
    }
    if !(acc > 0.0) {
        return None;
    }
    for c in &mut cum {
        *c /= acc;
    }
    *cum.last_mut().expect("grid has >= 2 points") = 1.0;
    Some(cum)
}

/// Integrates every slice of every table on `workers` lanes. The result is
/// bit-identical for any worker count.
pub fn build_cdf_set(pdfs: &PdfSet, workers: usize) -> Result<CdfSet> {
    let pool = WorkerPool::new(workers, Scheduling::Dynamic, 8)?;
    let per_table: Vec<usize> = pdfs.tables.iter().map(|t| t.grids.slices()).collect();
    let total: usize = per_table.iter().sum();
    let rows = pool.map(total, |mut unit| {
        let mut table = 0;
        while unit >= per_table[table] {
            unit -= per_table[table];
            table += 1;
        }
        let pdf = &pdfs.tables[table];
        let start = unit * pdf.grids.t.len();
        cumulative_row(&pdf.density[start..start + pdf.grids.t.len()], &pdf.grids.t)
    });
    let mut rows = rows.into_iter();
    let tables = std::array::from_fn(|i| {
        let pdf = &pdfs.tables[i];
        let k = pdf.grids.t.len();
        let slices = pdf.grids.slices();
        let mut cumulative = Vec::with_capacity(slices * k);
        let mut zero_flux = Vec::with_capacity(slices);
        for row in rows.by_ref().take(slices) {
            match row {
                Some(values) => {
                    cumulative.extend(values);
                    zero_flux.push(false);
                }
                None => {
                    cumulative.extend(std::iter::repeat_n(0.0, k));
                    zero_flux.push(true);
                }
            }
        }
        CdfTable {
            light_class: pdf.light_class,
            grids: pdf.grids.clone(),
            cumulative,
            zero_flux,
        }
    });
    Ok(CdfSet { tables })
}

/// Cell index `i` with `grid[i] <= x <= grid[i+1]` and the fractional
/// position inside it, after clamping `x` to the grid.
#[inline]
fn locate(grid: &[f64], x: f64) -> (usize, f64) {
    let last = grid.len() - 1;
    if !(x > grid[0]) {
        return (0, 0.0);
    }
    if x >= grid[last] {
        return (last - 1, 1.0);
    }
    let i = grid.partition_point(|g| *g <= x) - 1;
    (i, (x - grid[i]) / (grid[i + 1] - grid[i]))
}

#[inline]
fn lerp(a: f64, b: f64, f: f64) -> f64 {
    a * (1.0 - f) + b * f
}

/// Trilinear interpolation of the CDF. Coordinates outside the grids clamp
/// to the nearest edge; zero-flux slices contribute 0.
pub fn eval_cdf(table: &CdfTable, r: f64, cos: f64, t: f64) -> f64 {
    let g = &table.grids;
    let (ir, fr) = locate(&g.r, r);
    let (ic, fc) = locate(&g.cos, cos);
    let (it, ft) = locate(&g.t, t);
    let at = |a: usize, b: usize| {
        let row = table.row(a, b);
        lerp(row[it], row[it + 1], ft)
    };
    let low = lerp(at(ir, ic), at(ir, ic + 1), fc);
    let high = lerp(at(ir + 1, ic), at(ir + 1, ic + 1), fc);
    lerp(low, high, fr).clamp(0.0, 1.0)
}

/// The 1-D CDF along `t` at fixed `(r, cos)`: bilinear weights over the four
/// neighboring slices. Zero-flux slices are dropped and the remaining
/// weights renormalized, so the curve still ends at 1.
struct TimeCurve<'a> {
    rows: [(&'a [f64], f64); 4],
    len: usize,
}

impl<'a> TimeCurve<'a> {
    fn new(table: &'a CdfTable, r: f64, cos: f64) -> Result<Self> {
        let g = &table.grids;
        let (ir, fr) = locate(&g.r, r);
        let (ic, fc) = locate(&g.cos, cos);
        let corners = [
            (ir, ic, (1.0 - fr) * (1.0 - fc)),
            (ir, ic + 1, (1.0 - fr) * fc),
            (ir + 1, ic, fr * (1.0 - fc)),
            (ir + 1, ic + 1, fr * fc),
        ];
        let empty: &[f64] = &[];
        let mut rows = [(empty, 0.0); 4];
        let mut weight = 0.0;
        for (slot, (a, b, w)) in rows.iter_mut().zip(corners) {
            if w > 0.0 && !table.is_zero_flux(a, b) {
                *slot = (table.row(a, b), w);
                weight += w;
            }
        }
        if !(weight > 0.0) {
            return Err(Error::ZeroFlux { r, cos });
        }
        if weight != 1.0 {
            for slot in &mut rows {
                slot.1 /= weight;
            }
        }
        Ok(TimeCurve {
            rows,
            len: g.t.len(),
        })
    }

    #[inline]
    fn at(&self, l: usize) -> f64 {
        let mut c = 0.0;
        for (row, w) in &self.rows {
            if *w > 0.0 {
                c += w * row[l];
            }
        }
        c
    }
}

/// Smallest `t` with `c(t) >= u` on the interpolated curve at `(r, cos)`.
pub fn invert_cdf(table: &CdfTable, r: f64, cos: f64, u: f64) -> Result<f64> {
    let curve = TimeCurve::new(table, r, cos)?;
    let t = &table.grids.t;
    if !(u > curve.at(0)) {
        return Ok(t[0]);
    }
    let mut hi = curve.len - 1;
    let mut c_hi = curve.at(hi);
    if u > c_hi {
        // only reachable through rounding of renormalized weights
        return Ok(t[hi]);
    }
    // c(lo) < u <= c(hi)
    let mut lo = 0;
    let mut c_lo = curve.at(lo);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        let c_mid = curve.at(mid);
        if c_mid >= u {
            hi = mid;
            c_hi = c_mid;
        } else {
            lo = mid;
            c_lo = c_mid;
        }
    }
    Ok(t[lo] + (u - c_lo) / (c_hi - c_lo) * (t[hi] - t[lo]))
}

/// Knobs of the synthetic arrival-time tables.
///
/// Direct light is a half-Gaussian in residual time starting at 0, with a
/// width growing linearly in distance and broadening for back-facing
/// incidence. Scattered light keeps a fraction of that peak and adds an
/// exponential tail whose decay constant also grows with distance.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub r_min_m: f64,
    pub r_max_m: f64,
    pub n_r: usize,
    pub n_cos: usize,
    pub t_max_ns: f64,
    pub n_t: usize,
    pub sigma0_ns: f64,
    pub sigma_per_m: f64,
    /// Relative widening from head-on (`cos = 1`) to back-facing (`cos = −1`).
    pub angular_broadening: f64,
    pub shower_width_factor: f64,
    pub tau0_ns: f64,
    pub tau_per_m: f64,
    /// Weight of the direct-like peak inside the scattered classes.
    pub scattered_peak_weight: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            r_min_m: 0.5,
            r_max_m: 300.0,
            n_r: 20,
            n_cos: 11,
            t_max_ns: 1000.0,
            n_t: 301,
            sigma0_ns: 1.0,
            sigma_per_m: 0.05,
            angular_broadening: 0.5,
            shower_width_factor: 1.5,
            tau0_ns: 20.0,
            tau_per_m: 0.3,
            scattered_peak_weight: 0.3,
        }
    }
}

impl SynthParams {
    pub fn grids(&self) -> Result<Grids> {
        if self.n_r < 2 || self.n_cos < 2 || self.n_t < 2 {
            return Err(Error::InvalidInput("synthetic grids need >= 2 points per axis".into()));
        }
        if !(self.r_min_m > 0.0 && self.r_max_m > self.r_min_m && self.t_max_ns > 0.0) {
            return Err(Error::InvalidInput("synthetic grid bounds are not ascending".into()));
        }
        // geometric in r, uniform in cos, quadratic in t (dense near 0)
        let ratio = (self.r_max_m / self.r_min_m).powf(1.0 / (self.n_r - 1) as f64);
        let r = (0..self.n_r)
            .map(|i| {
                if i == self.n_r - 1 {
                    self.r_max_m
                } else {
                    self.r_min_m * ratio.powi(i as i32)
                }
            })
            .collect();
        let cos = (0..self.n_cos)
            .map(|i| -1.0 + 2.0 * i as f64 / (self.n_cos - 1) as f64)
            .collect();
        let t = (0..self.n_t)
            .map(|i| {
                let x = i as f64 / (self.n_t - 1) as f64;
                self.t_max_ns * x * x
            })
            .collect();
        Grids::new(r, cos, t)
    }

    pub fn width_ns(&self, class: LightClass, r: f64, cos: f64) -> f64 {
        let shape = if class.is_shower() {
            self.shower_width_factor
        } else {
            1.0
        };
        (self.sigma0_ns + self.sigma_per_m * r) * (1.0 + self.angular_broadening * 0.5 * (1.0 - cos)) * shape
    }

    pub fn tail_ns(&self, r: f64) -> f64 {
        self.tau0_ns + self.tau_per_m * r
    }

    /// Un-normalized density of `class` at one grid point.
    pub fn shape(&self, class: LightClass, r: f64, cos: f64, t: f64) -> f64 {
        let sigma = self.width_ns(class, r, cos);
        let peak = (-0.5 * (t / sigma).powi(2)).exp();
        if class.is_scattered() {
            let tail = (1.0 - (-t / sigma).exp()) * (-t / self.tail_ns(r)).exp();
            self.scattered_peak_weight * peak + tail
        } else {
            peak
        }
    }
}

/// Builds the four synthetic tables in memory, each row normalized to unit
/// trapezoidal mass.
pub fn synthetic_pdf_set(params: &SynthParams) -> Result<PdfSet> {
    let grids = params.grids()?;
    let tables = LightClass::ALL.map(|class| {
        let mut density = Vec::with_capacity(grids.slices() * grids.t.len());
        for &r in &grids.r {
            for &cos in &grids.cos {
                let row: Vec<f64> = grids.t.iter().map(|&t| params.shape(class, r, cos, t)).collect();
                let mass: f64 = (1..row.len())
                    .map(|j| 0.5 * (row[j - 1] + row[j]) * (grids.t[j] - grids.t[j - 1]))
                    .sum();
                density.extend(row.iter().map(|d| d / mass));
            }
        }
        PdfTable::new(class, grids.clone(), density)
    });
    let [a, b, c, d] = tables;
    PdfSet::new([a?, b?, c?, d?])
}

pub fn generate_synthetic_pdf_set(params: &SynthParams, out_dir: impl AsRef<Path>) -> Result<()> {
    synthetic_pdf_set(params)?.write(out_dir)
}
