//! Detector description and track-frame rotations.
//!
//! The simulation works in the frame of each track: the track starts at the
//! origin and runs along +z. [`track_frame`] builds the rotation with the
//! Rodrigues formula about `d × ẑ`, and [`transform_om`] applies it to an
//! optical module and all of its PMTs.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::ops::{Add, Mul, Neg, Sub};
use std::path::Path;

use crate::error::{Error, Result};
use crate::propagation::Track;

/// Tolerance on the norm of unit vectors.
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// Tolerance on `RᵀR = I` and `det R = 1`.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }

    pub fn is_unit(self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_TOLERANCE
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, k: f64) -> Vec3 {
        self.scale(k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pmt {
    pub pmt_id: u32,
    /// Outward normal of the photocathode.
    pub direction: Vec3,
    pub radius: f64,
    pub quantum_efficiency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpticalModule {
    pub om_id: u32,
    pub position: Vec3,
    pub pmts: Vec<Pmt>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorGeometry {
    pub oms: Vec<OpticalModule>,
}

impl DetectorGeometry {
    /// Checks every documented invariant and returns the geometry unchanged.
    pub fn new(oms: Vec<OpticalModule>) -> Result<Self> {
        if oms.is_empty() {
            return Err(Error::Geometry("no optical modules".into()));
        }
        let mut seen = HashSet::with_capacity(oms.len());
        for (index, om) in oms.iter().enumerate() {
            if om.om_id as usize != index {
                return Err(Error::Geometry(format!(
                    "om ids must be dense from 0: found om {} at position {index}",
                    om.om_id
                )));
            }
            if !om.position.is_finite() {
                return Err(Error::Geometry(format!("om {}: non-finite position", om.om_id)));
            }
            let key = (
                om.position.x.to_bits(),
                om.position.y.to_bits(),
                om.position.z.to_bits(),
            );
            if !seen.insert(key) {
                return Err(Error::Geometry(format!(
                    "om {} shares its position with another module",
                    om.om_id
                )));
            }
            if om.pmts.is_empty() {
                return Err(Error::Geometry(format!("om {} has no pmts", om.om_id)));
            }
            let mut pmt_ids = HashSet::with_capacity(om.pmts.len());
            for pmt in &om.pmts {
                let tag = format!("om {} / pmt {}", om.om_id, pmt.pmt_id);
                if !pmt_ids.insert(pmt.pmt_id) {
                    return Err(Error::Geometry(format!("{tag}: duplicate pmt id")));
                }
                if !pmt.direction.is_finite() || !pmt.direction.is_unit() {
                    return Err(Error::Geometry(format!(
                        "{tag}: direction norm {} is not 1",
                        pmt.direction.norm()
                    )));
                }
                if !(pmt.radius > 0.0) || !pmt.radius.is_finite() {
                    return Err(Error::Geometry(format!("{tag}: radius must be > 0")));
                }
                if !(pmt.quantum_efficiency > 0.0 && pmt.quantum_efficiency <= 1.0) {
                    return Err(Error::Geometry(format!(
                        "{tag}: quantum efficiency must be in (0, 1]"
                    )));
                }
            }
        }
        Ok(DetectorGeometry { oms })
    }

    pub fn pmt_count(&self) -> usize {
        self.oms.iter().map(|om| om.pmts.len()).sum()
    }

    /// Axis-aligned bounding box of the module positions as `(min, max)`.
    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = Vec3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for om in &self.oms {
            let p = om.position;
            lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
            hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
        }
        (lo, hi)
    }

    /// Serializes into the line-oriented geometry format.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# OM <om_id> <x> <y> <z>\n# PMT <pmt_id> <dx> <dy> <dz> <radius> <qe>\n");
        for om in &self.oms {
            let p = om.position;
            let _ = writeln!(out, "OM {} {} {} {}", om.om_id, real(p.x), real(p.y), real(p.z));
            for pmt in &om.pmts {
                let d = pmt.direction;
                let _ = writeln!(
                    out,
                    "PMT {} {} {} {} {} {}",
                    pmt.pmt_id,
                    real(d.x),
                    real(d.y),
                    real(d.z),
                    real(pmt.radius),
                    real(pmt.quantum_efficiency)
                );
            }
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// A detector of 115 modules, each carrying 31 three-inch PMTs.
    ///
    /// The modules hang on 23 vertical strings (a 5×5 grid with two corners
    /// removed, 40 m apart), five floors per string spaced 30 m apart.
    pub fn default_detector() -> Self {
        let mut oms = Vec::with_capacity(115);
        let mut om_id = 0;
        for ix in 0..5 {
            for iy in 0..5 {
                if (ix, iy) == (0, 0) || (ix, iy) == (4, 4) {
                    continue;
                }
                for floor in 0..5 {
                    let position = Vec3::new(
                        40.0 * (ix as f64 - 2.0),
                        40.0 * (iy as f64 - 2.0),
                        30.0 * floor as f64,
                    );
                    oms.push(OpticalModule {
                        om_id,
                        position,
                        pmts: multi_pmt_layout(0.0381, 0.25),
                    });
                    om_id += 1;
                }
            }
        }
        DetectorGeometry::new(oms).expect("default detector is valid")
    }
}

/// 31 PMT directions: one looking straight down plus five rings of six.
fn multi_pmt_layout(radius: f64, qe: f64) -> Vec<Pmt> {
    const RING_THETA_DEG: [f64; 5] = [147.5, 122.5, 107.7, 72.5, 57.5];
    let mut pmts = vec![Pmt {
        pmt_id: 0,
        direction: Vec3::new(0.0, 0.0, -1.0),
        radius,
        quantum_efficiency: qe,
    }];
    for (ring, theta_deg) in RING_THETA_DEG.iter().enumerate() {
        let theta = theta_deg.to_radians();
        // alternate rings are staggered by half a sector
        let phase = if ring % 2 == 0 { 0.0 } else { 30.0 };
        for k in 0..6 {
            let phi = (60.0 * k as f64 + phase).to_radians();
            pmts.push(Pmt {
                pmt_id: pmts.len() as u32,
                direction: Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()),
                radius,
                quantum_efficiency: qe,
            });
        }
    }
    pmts
}

/// Reals are written with 12 significant digits.
pub(crate) fn real(x: f64) -> String {
    format!("{x:.11e}")
}

pub(crate) fn parse_real(field: &str, what: &str) -> std::result::Result<f64, String> {
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("invalid {what} '{field}'")),
    }
}

pub fn load_geometry(path: impl AsRef<Path>) -> Result<DetectorGeometry> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_geometry(&text, &path.display().to_string())
}

pub fn parse_geometry(text: &str, source_name: &str) -> Result<DetectorGeometry> {
    let mut oms: Vec<OpticalModule> = Vec::new();
    for (index, raw) in text.lines().enumerate() {
        let line_no = index + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::parse(source_name, line_no, msg);
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields[0] {
            "OM" => {
                if fields.len() != 5 {
                    return Err(err(format!("OM line needs 4 fields, found {}", fields.len() - 1)));
                }
                let om_id: u32 = fields[1]
                    .parse()
                    .map_err(|_| err(format!("invalid om id '{}'", fields[1])))?;
                if om_id as usize != oms.len() {
                    return Err(err(format!(
                        "om ids must increase densely from 0: expected {}, found {om_id}",
                        oms.len()
                    )));
                }
                let x = parse_real(fields[2], "x").map_err(err)?;
                let y = parse_real(fields[3], "y").map_err(err)?;
                let z = parse_real(fields[4], "z").map_err(err)?;
                oms.push(OpticalModule {
                    om_id,
                    position: Vec3::new(x, y, z),
                    pmts: Vec::new(),
                });
            }
            "PMT" => {
                if fields.len() != 7 {
                    return Err(err(format!("PMT line needs 6 fields, found {}", fields.len() - 1)));
                }
                let Some(om) = oms.last_mut() else {
                    return Err(err("PMT line before any OM line".into()));
                };
                let pmt_id: u32 = fields[1]
                    .parse()
                    .map_err(|_| err(format!("invalid pmt id '{}'", fields[1])))?;
                let mut values = [0.0; 5];
                for (slot, (field, what)) in values.iter_mut().zip(
                    fields[2..]
                        .iter()
                        .zip(["dx", "dy", "dz", "radius", "qe"]),
                ) {
                    *slot = parse_real(field, what).map_err(err)?;
                }
                om.pmts.push(Pmt {
                    pmt_id,
                    direction: Vec3::new(values[0], values[1], values[2]),
                    radius: values[3],
                    quantum_efficiency: values[4],
                });
            }
            other => return Err(err(format!("unknown record '{other}'"))),
        }
    }
    if oms.is_empty() {
        return Err(Error::parse(source_name, 0, "no optical modules"));
    }
    DetectorGeometry::new(oms)
}

/// Rigid map `v ↦ R·(v − origin)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameTransform {
    pub rotation: [[f64; 3]; 3],
    pub origin: Vec3,
}

impl FrameTransform {
    pub const IDENTITY: FrameTransform = FrameTransform {
        rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        origin: Vec3::ZERO,
    };

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let r = &self.rotation;
        Vec3::new(
            r[0][0] * v.x + r[0][1] * v.y + r[0][2] * v.z,
            r[1][0] * v.x + r[1][1] * v.y + r[1][2] * v.z,
            r[2][0] * v.x + r[2][1] * v.y + r[2][2] * v.z,
        )
    }

    pub fn apply(&self, point: Vec3) -> Vec3 {
        self.rotate(point - self.origin)
    }

    /// Largest elementwise deviation of `RᵀR` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let r = &self.rotation;
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - expected).abs());
            }
        }
        worst
    }

    pub fn determinant(&self) -> f64 {
        let r = &self.rotation;
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }

    /// Frame in which a line through `position` along unit `direction`
    /// becomes the +z axis through the origin.
    pub fn along(position: Vec3, direction: Vec3) -> Result<Self> {
        if !direction.is_finite() || !direction.is_unit() {
            return Err(Error::InvalidInput(format!(
                "track direction norm {} is not 1",
                direction.norm()
            )));
        }
        // axis d × ẑ = (dy, −dx, 0); its length is sin θ and d·ẑ is cos θ
        let axis = direction.cross(Vec3::Z);
        let sin = axis.norm();
        let cos = direction.z;
        let rotation = if sin == 0.0 {
            if cos > 0.0 {
                FrameTransform::IDENTITY.rotation
            } else {
                // π about x
                [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]]
            }
        } else {
            let u = axis.scale(1.0 / sin);
            let k = 1.0 - cos;
            [
                [cos + k * u.x * u.x, k * u.x * u.y - sin * u.z, k * u.x * u.z + sin * u.y],
                [k * u.y * u.x + sin * u.z, cos + k * u.y * u.y, k * u.y * u.z - sin * u.x],
                [k * u.z * u.x - sin * u.y, k * u.z * u.y + sin * u.x, cos + k * u.z * u.z],
            ]
        };
        Ok(FrameTransform {
            rotation,
            origin: position,
        })
    }
}

pub fn track_frame(track: &Track) -> Result<FrameTransform> {
    FrameTransform::along(track.position, track.direction)
}

pub fn transform_om(om: &OpticalModule, t: &FrameTransform) -> OpticalModule {
    OpticalModule {
        om_id: om.om_id,
        position: t.apply(om.position),
        pmts: om
            .pmts
            .iter()
            .map(|pmt| Pmt {
                direction: t.rotate(pmt.direction),
                ..pmt.clone()
            })
            .collect(),
    }
}

/// Perpendicular distance from the track axis and the z coordinate of the
/// closest point, for a position already in the track frame.
pub fn closest_approach(position: Vec3) -> (f64, f64) {
    (position.x.hypot(position.y), position.z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single_om_text(dir: &str) -> String {
        format!("# one module\nOM 0 0 0 0\nPMT 0 {dir} 0.04 0.25\n")
    }

    fn unit(theta: f64, phi: f64) -> Vec3 {
        Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
    }

    #[test]
    fn parses_single_module() {
        let g = parse_geometry(&single_om_text("0 0 -1"), "mem").unwrap();
        assert_eq!(g.oms.len(), 1);
        let pmt = &g.oms[0].pmts[0];
        assert_eq!(g.oms[0].position, Vec3::ZERO);
        assert_eq!(pmt.direction, Vec3::new(0.0, 0.0, -1.0));
        assert_eq!(pmt.radius, 0.04);
        assert_eq!(pmt.quantum_efficiency, 0.25);
    }

    #[test]
    fn empty_file_is_rejected() {
        let err = parse_geometry("# nothing\n", "mem").unwrap_err();
        assert!(err.to_string().contains("no optical modules"), "{err}");
    }

    #[test]
    fn non_unit_direction_names_ids() {
        let err = parse_geometry(&single_om_text("0 0 -2"), "mem").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("om 0 / pmt 0"), "{msg}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_geometry("OM 0 0 0 0\nPMT 0 0 0 x 0.04 0.25\n", "geo.txt").unwrap_err();
        assert!(err.to_string().starts_with("geo.txt:2:"), "{err}");
        let err = parse_geometry("OM 1 0 0 0\n", "geo.txt").unwrap_err();
        assert!(err.to_string().starts_with("geo.txt:1:"), "{err}");
    }

    #[test]
    fn duplicate_positions_are_rejected() {
        let text = "OM 0 1 2 3\nPMT 0 0 0 1 0.04 0.25\nOM 1 1 2 3\nPMT 0 0 0 1 0.04 0.25\n";
        assert!(matches!(parse_geometry(text, "mem"), Err(Error::Geometry(_))));
    }

    #[test]
    fn default_detector_round_trips() {
        let g = DetectorGeometry::default_detector();
        assert_eq!(g.oms.len(), 115);
        assert!(g.oms.iter().all(|om| om.pmts.len() == 31));
        let back = parse_geometry(&g.to_text(), "mem").unwrap();
        assert_eq!(back.oms.len(), 115);
        for (a, b) in g.oms.iter().zip(&back.oms) {
            assert!((a.position - b.position).norm() < 1e-9);
            for (p, q) in a.pmts.iter().zip(&b.pmts) {
                assert!((p.direction - q.direction).norm() < 1e-11);
            }
        }
    }

    #[test]
    fn frame_on_z_axis_is_identity() {
        let t = FrameTransform::along(Vec3::ZERO, Vec3::Z).unwrap();
        assert_eq!(t, FrameTransform::IDENTITY);
    }

    #[test]
    fn frame_along_x_matches_hand_rotation() {
        let t = FrameTransform::along(Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)).unwrap();
        let d = t.apply(Vec3::new(1.0, 0.0, 0.0));
        assert!((d - Vec3::Z).norm() < 1e-12);
        let v = t.apply(Vec3::new(2.0, 3.0, 5.0));
        assert!((v - Vec3::new(-5.0, 3.0, 2.0)).norm() < 1e-12, "{v:?}");
    }

    #[test]
    fn antiparallel_frame_is_pi_about_x() {
        let t = FrameTransform::along(Vec3::ZERO, Vec3::new(0.0, 0.0, -1.0)).unwrap();
        assert_eq!(t.rotate(Vec3::new(1.0, 2.0, 3.0)), Vec3::new(1.0, -2.0, -3.0));
        assert_eq!(t.determinant(), 1.0);
    }

    #[test]
    fn non_unit_track_direction_is_rejected() {
        assert!(FrameTransform::along(Vec3::ZERO, Vec3::new(0.0, 0.0, 2.0)).is_err());
    }

    #[test]
    fn transform_om_examples() {
        let om = OpticalModule {
            om_id: 7,
            position: Vec3::new(2.0, 3.0, 5.0),
            pmts: vec![Pmt {
                pmt_id: 3,
                direction: Vec3::new(0.0, 0.0, -1.0),
                radius: 0.04,
                quantum_efficiency: 0.3,
            }],
        };
        assert_eq!(transform_om(&om, &FrameTransform::IDENTITY), om);

        let t = FrameTransform::along(Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)).unwrap();
        let moved = transform_om(&om, &t);
        assert!((moved.position - Vec3::new(-5.0, 3.0, 2.0)).norm() < 1e-12);
        assert_eq!(moved.om_id, 7);
        assert_eq!(moved.pmts[0].pmt_id, 3);
        assert_eq!(moved.pmts[0].radius, 0.04);
        assert_eq!(moved.pmts[0].quantum_efficiency, 0.3);
    }

    #[test]
    fn closest_approach_examples() {
        assert_eq!(closest_approach(Vec3::new(3.0, 4.0, 7.0)), (5.0, 7.0));
        assert_eq!(closest_approach(Vec3::new(0.0, 0.0, 9.0)), (0.0, 9.0));
        assert_eq!(closest_approach(Vec3::new(-3.0, 4.0, 0.0)), (5.0, 0.0));
    }

    proptest! {
        #[test]
        fn frame_sends_direction_to_z(theta in 0.0..std::f64::consts::PI, phi in 0.0..std::f64::consts::TAU) {
            let d = unit(theta, phi);
            let t = FrameTransform::along(Vec3::new(1.0, -2.0, 3.0), d).unwrap();
            prop_assert!((t.rotate(d) - Vec3::Z).norm() < 1e-9);
            prop_assert!(t.orthonormality_error() < ORTHONORMAL_TOLERANCE);
            prop_assert!((t.determinant() - 1.0).abs() < ORTHONORMAL_TOLERANCE);
        }

        #[test]
        fn frame_preserves_norms(
            theta in 0.0..std::f64::consts::PI,
            phi in 0.0..std::f64::consts::TAU,
            v in prop::array::uniform3(-1e3..1e3f64),
        ) {
            let t = FrameTransform::along(Vec3::ZERO, unit(theta, phi)).unwrap();
            let v = Vec3::new(v[0], v[1], v[2]);
            prop_assert!((t.rotate(v).norm() - v.norm()).abs() <= 1e-9 * v.norm().max(1e-300));
        }

        #[test]
        fn transform_preserves_pairwise_distances(
            theta in 0.0..std::f64::consts::PI,
            phi in 0.0..std::f64::consts::TAU,
            origin in prop::array::uniform3(-500.0..500.0f64),
        ) {
            let g = DetectorGeometry::default_detector();
            let t = FrameTransform::along(Vec3::new(origin[0], origin[1], origin[2]), unit(theta, phi)).unwrap();
            let moved: Vec<_> = g.oms.iter().map(|om| transform_om(om, &t)).collect();
            for (i, j) in [(0usize, 1usize), (3, 80), (114, 50)] {
                let before = (g.oms[i].position - g.oms[j].position).norm();
                let after = (moved[i].position - moved[j].position).norm();
                prop_assert!((before - after).abs() <= 1e-9 * before);
            }
        }
    }
}
