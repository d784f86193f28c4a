//! Synthetic test shapes built as triangle meshes and surface-sampled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::{sample_mesh, Mesh, PointCloud};
use crate::error::{Error, Result};
use crate::se3::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Box,
    /// Cylinder with one flat side (a D-shaped cross section).
    Cylinder,
    PlaneWithHandle,
    LBracket,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [
        ShapeKind::Box,
        ShapeKind::Cylinder,
        ShapeKind::PlaneWithHandle,
        ShapeKind::LBracket,
    ];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "box" => Some(ShapeKind::Box),
            "cylinder" => Some(ShapeKind::Cylinder),
            "plane-with-handle" => Some(ShapeKind::PlaneWithHandle),
            "l-bracket" => Some(ShapeKind::LBracket),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Box => "box",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::PlaneWithHandle => "plane-with-handle",
            ShapeKind::LBracket => "l-bracket",
        }
    }

    /// Default dimensions; see [`ShapeSpec::size`].
    pub fn default_size(self) -> [f64; 3] {
        match self {
            ShapeKind::Box => [1.0, 0.6, 0.3],
            ShapeKind::Cylinder => [0.3, 1.0, 0.35],
            ShapeKind::PlaneWithHandle => [1.0, 0.6, 0.25],
            ShapeKind::LBracket => [1.0, 0.6, 0.4],
        }
    }
}

/// Shape kind with its dimensions:
/// box `[x, y, z]` lengths; cylinder `[radius, height, flat]` where `flat` is
/// the depth of the flat cut as a fraction of the radius, in `[0, 1)`;
/// plane-with-handle `[length, width, handle height]`;
/// l-bracket `[long arm, short arm, depth]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub size: [f64; 3],
}

impl ShapeSpec {
    pub fn new(kind: ShapeKind) -> Self {
        ShapeSpec {
            kind,
            size: kind.default_size(),
        }
    }

    /// Deterministic size variation of a kind: distinct models of one
    /// category. Index 0 is the default shape.
    pub fn variant(kind: ShapeKind, index: u64) -> Self {
        let mut s = ShapeSpec::new(kind);
        if index == 0 {
            return s;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 ^ index);
        for (i, v) in s.size.iter_mut().enumerate() {
            // the cylinder's flat fraction stays in range
            let j = if kind == ShapeKind::Cylinder && i == 2 { 0.15 } else { 0.3 };
            *v *= 1.0 + rng.random_range(-j..j);
        }
        s
    }

    pub fn mesh(&self) -> Result<Mesh> {
        let s = self.size;
        let bad = s.iter().enumerate().any(|(i, &v)| {
            let may_be_zero = self.kind == ShapeKind::Cylinder && i == 2;
            !v.is_finite() || v < 0.0 || (v == 0.0 && !may_be_zero)
        });
        if bad {
            return Err(Error::invalid(format!("degenerate {} dimensions {s:?}", self.kind.name())));
        }
        match self.kind {
            ShapeKind::Box => Ok(cuboid(Vec3::zeros(), Vec3::new(s[0], s[1], s[2]), true)),
            ShapeKind::Cylinder => {
                let (r, h, flat) = (s[0], s[1], s[2]);
                if !(0.0..1.0).contains(&flat) {
                    return Err(Error::invalid(format!("cylinder flat fraction {flat} outside [0, 1)")));
                }
                let cut = r * (1.0 - flat);
                let segs = 48;
                let mut poly = Vec::new();
                for i in 0..segs {
                    let a = i as f64 / segs as f64 * std::f64::consts::TAU;
                    let (x, y) = (r * a.cos(), r * a.sin());
                    poly.push((x.min(cut), y));
                }
                poly.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
                extrude(&poly, -h / 2.0, h / 2.0)
            }
            ShapeKind::PlaneWithHandle => {
                let (l, w, hh) = (s[0], s[1], s[2]);
                let t = 0.05 * l;
                let mut m = cuboid(Vec3::zeros(), Vec3::new(l, w, t), true);
                // arch-shaped handle across part of the plate, off center
                let (x0, x1) = (0.05 * l, 0.45 * l);
                let leg = 0.08 * l;
                let arch = [
                    (x0, 0.0),
                    (x1, 0.0),
                    (x1, hh),
                    (x0, hh),
                    (x0, hh - leg),
                    (x1 - leg, hh - leg),
                    (x1 - leg, leg.min(hh - leg)),
                    (x0, leg.min(hh - leg)),
                ];
                if hh <= 2.0 * leg {
                    return Err(Error::invalid(format!("handle height {hh} too small for plate length {l}")));
                }
                // arch in the x-z plane sitting on the plate top, extruded along y
                let handle = extrude(&arch, -0.15 * w, 0.15 * w)?;
                let moved: Vec<Vec3> = handle
                    .vertices()
                    .iter()
                    .map(|p| Vec3::new(p.x, p.z + 0.1 * w, p.y + t / 2.0))
                    .collect();
                m = merge(&m, &Mesh::new(moved, handle.faces().to_vec())?)?;
                Ok(m)
            }
            ShapeKind::LBracket => {
                let (a, b, d) = (s[0], s[1], s[2]);
                let t = 0.12 * a.min(b);
                let poly = [(0.0, 0.0), (a, 0.0), (a, t), (t, t), (t, b), (0.0, b)];
                extrude(&poly, 0.0, d)
            }
        }
    }
}

/// Surface-sampled cloud of `n` points.
pub fn synth_shape(spec: &ShapeSpec, n: usize, seed: u64) -> Result<PointCloud> {
    sample_mesh(&spec.mesh()?, n, seed)
}

fn cuboid(center: Vec3, size: Vec3, closed: bool) -> Mesh {
    let h = size / 2.0;
    let v: Vec<Vec3> = (0..8)
        .map(|i| {
            center
                + Vec3::new(
                    if i & 1 == 0 { -h.x } else { h.x },
                    if i & 2 == 0 { -h.y } else { h.y },
                    if i & 4 == 0 { -h.z } else { h.z },
                )
        })
        .collect();
    let quads: &[[usize; 4]] = &[
        [0, 2, 3, 1],
        [4, 5, 7, 6],
        [0, 1, 5, 4],
        [2, 6, 7, 3],
        [0, 4, 6, 2],
        [1, 3, 7, 5],
    ];
    let mut faces = Vec::new();
    for q in quads.iter().take(if closed { 6 } else { 5 }) {
        faces.push([q[0], q[1], q[2]]);
        faces.push([q[0], q[2], q[3]]);
    }
    Mesh::new(v, faces).unwrap()
}

fn merge(a: &Mesh, b: &Mesh) -> Result<Mesh> {
    let off = a.vertices().len();
    let mut v = a.vertices().to_vec();
    v.extend_from_slice(b.vertices());
    let mut f = a.faces().to_vec();
    f.extend(b.faces().iter().map(|t| [t[0] + off, t[1] + off, t[2] + off]));
    Mesh::new(v, f)
}

fn signed_area(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        / 2.0
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Ear-clipping triangulation of a simple polygon; indices into `poly`.
fn triangulate(poly: &[(f64, f64)]) -> Result<Vec<[usize; 3]>> {
    let mut idx: Vec<usize> = (0..poly.len()).collect();
    if signed_area(poly) < 0.0 {
        idx.reverse();
    }
    let mut tris = Vec::new();
    while idx.len() > 3 {
        let n = idx.len();
        let ear = (0..n).find(|&i| {
            let (a, b, c) = (poly[idx[(i + n - 1) % n]], poly[idx[i]], poly[idx[(i + 1) % n]]);
            if cross(a, b, c) <= 1e-15 {
                return false;
            }
            idx.iter().all(|&j| {
                let p = poly[j];
                if p == a || p == b || p == c {
                    return true;
                }
                !(cross(a, b, p) >= 0.0 && cross(b, c, p) >= 0.0 && cross(c, a, p) >= 0.0)
            })
        });
        let Some(i) = ear else {
            return Err(Error::DegenerateGeometry("polygon could not be triangulated".into()));
        };
        tris.push([idx[(i + n - 1) % n], idx[i], idx[(i + 1) % n]]);
        idx.remove(i);
    }
    tris.push([idx[0], idx[1], idx[2]]);
    Ok(tris)
}

/// Prism over a simple polygon in the x-y plane, spanning `z0..z1`.
fn extrude(poly: &[(f64, f64)], z0: f64, z1: f64) -> Result<Mesh> {
    let n = poly.len();
    let mut v: Vec<Vec3> = poly.iter().map(|&(x, y)| Vec3::new(x, y, z0)).collect();
    v.extend(poly.iter().map(|&(x, y)| Vec3::new(x, y, z1)));
    let mut faces = Vec::new();
    for t in triangulate(poly)? {
        faces.push([t[0], t[2], t[1]]);
        faces.push([t[0] + n, t[1] + n, t[2] + n]);
    }
    for i in 0..n {
        let j = (i + 1) % n;
        faces.push([i, j, j + n]);
        faces.push([i, j + n, i + n]);
    }
    Mesh::new(v, faces)
}
