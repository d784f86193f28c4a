//! Point clouds, triangle meshes, and the sampling/corruption pipeline used to
//! build registration pairs.
//!
//! Every randomized operation takes an explicit seed and draws from its own
//! ChaCha stream, so outputs are reproducible across runs and platforms.

use nalgebra::Vector3;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::se3::Vec3;

/// Ordered list of 3D points. Order carries no meaning for registration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Vec3>,
}

impl PointCloud {
    /// Rejects non-finite coordinates. An empty cloud is representable (some
    /// parsers build one before validation) but most operations reject it.
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite(format!("point {i} has a non-finite coordinate")));
        }
        Ok(PointCloud { points })
    }

    pub fn empty() -> Self {
        PointCloud { points: Vec::new() }
    }

    pub fn from_flat(xyz: &[f64]) -> Result<Self> {
        if !xyz.len().is_multiple_of(3) {
            return Err(Error::invalid(format!(
                "flat coordinate buffer length {} is not a multiple of 3",
                xyz.len()
            )));
        }
        PointCloud::new(
            xyz.chunks_exact(3)
                .map(|c| Vector3::new(c[0], c[1], c[2]))
                .collect(),
        )
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vec3> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    pub fn centroid(&self) -> Vec3 {
        let n = self.points.len().max(1) as f64;
        self.points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / n
    }

    /// Per-axis `(min, max)` corners.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &self.points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
        }
    }

    fn require_nonempty(&self) -> Result<()> {
        if self.points.is_empty() {
            Err(Error::EmptyCloud)
        } else {
            Ok(())
        }
    }
}

/// Triangle mesh.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
}

impl Mesh {
    /// Validates indices and drops zero-area faces.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let nv = vertices.len();
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= nv)) {
            return Err(Error::invalid(format!(
                "face {f:?} references a vertex beyond {nv}"
            )));
        }
        let faces = faces
            .into_iter()
            .filter(|f| triangle_area(&vertices[f[0]], &vertices[f[1]], &vertices[f[2]]) > 0.0)
            .collect();
        Ok(Mesh { vertices, faces })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn surface_area(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| triangle_area(&self.vertices[f[0]], &self.vertices[f[1]], &self.vertices[f[2]]))
            .sum()
    }
}

fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Area-weighted uniform surface sampling.
pub fn sample_mesh(mesh: &Mesh, m: usize, seed: u64) -> Result<PointCloud> {
    if mesh.faces.is_empty() {
        return Err(Error::DegenerateGeometry("mesh has no non-degenerate faces".into()));
    }
    if m == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let mut cdf = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in &mesh.faces {
        total += triangle_area(&mesh.vertices[f[0]], &mesh.vertices[f[1]], &mesh.vertices[f[2]]);
        cdf.push(total);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(m);
    for _ in 0..m {
        let r = rng.random::<f64>() * total;
        let fi = cdf.partition_point(|&c| c <= r).min(cdf.len() - 1);
        let [a, b, c] = mesh.faces[fi].map(|i| mesh.vertices[i]);
        let (mut u, mut v) = (rng.random::<f64>(), rng.random::<f64>());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        points.push(a + (b - a) * u + (c - a) * v);
    }
    PointCloud::new(points)
}

/// Greedy farthest-point sampling from a random start point.
pub fn farthest_point_sample(cloud: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    cloud.require_nonempty()?;
    if n > cloud.len() {
        return Err(Error::invalid(format!(
            "cannot select {n} points from a cloud of {}",
            cloud.len()
        )));
    }
    let start = ChaCha8Rng::seed_from_u64(seed).random_range(0..cloud.len());
    Ok(cloud.select(&farthest_point_indices(cloud, n, start)))
}

/// Farthest-point order starting at `start`. Distance ties go to the lowest index.
pub fn farthest_point_indices(cloud: &PointCloud, n: usize, start: usize) -> Vec<usize> {
    let pts = cloud.points();
    let mut selected = Vec::with_capacity(n);
    if n == 0 || pts.is_empty() {
        return selected;
    }
    let mut min_d2 = vec![f64::INFINITY; pts.len()];
    let mut current = start;
    for _ in 0..n {
        selected.push(current);
        let c = pts[current];
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (i, p) in pts.iter().enumerate() {
            let d = (p - c).norm_squared();
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            if min_d2[i] > best.0 {
                best = (min_d2[i], i);
            }
        }
        current = best.1;
    }
    selected
}

/// Scales so the largest axis-aligned extent is 1, then moves the centroid to
/// the origin.
pub fn normalize_unit_box(cloud: &PointCloud) -> Result<PointCloud> {
    cloud.require_nonempty()?;
    let (lo, hi) = cloud.bounds();
    let extent = (hi - lo).max();
    if extent <= 0.0 {
        return Err(Error::DegenerateGeometry("all points are identical".into()));
    }
    let scaled: Vec<Vec3> = cloud.points().iter().map(|p| p / extent).collect();
    let n = scaled.len() as f64;
    let mean = scaled.iter().fold(Vec3::zeros(), |acc, p| acc + p) / n;
    PointCloud::new(scaled.into_iter().map(|p| p - mean).collect())
}

/// Adds i.i.d. `N(0, sigma^2)` offsets to each coordinate.
pub fn add_gaussian_noise(cloud: &PointCloud, sigma: f64, seed: u64) -> Result<PointCloud> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(cloud.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointCloud::new(
        cloud
            .points()
            .iter()
            .map(|p| p + Vec3::from_fn(|_, _| normal.sample(&mut rng)))
            .collect(),
    )
}

/// Half-space crop along a random direction, keeping `ceil(keep_fraction * N)`
/// points with the largest projection.
pub fn make_partial(cloud: &PointCloud, keep_fraction: f64, seed: u64) -> Result<PointCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir = random_unit_vector(&mut rng);
    crop_half_space(cloud, &dir, keep_fraction)
}

/// Keeps the `ceil(keep_fraction * N)` points with the largest projection on
/// `dir`, in their original order. Projection ties go to the lower index.
pub fn crop_half_space(cloud: &PointCloud, dir: &Vec3, keep_fraction: f64) -> Result<PointCloud> {
    cloud.require_nonempty()?;
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "keep fraction must be in (0, 1], got {keep_fraction}"
        )));
    }
    let keep = (keep_fraction * cloud.len() as f64).ceil() as usize;
    if keep == 0 {
        return Err(Error::EmptyCloud);
    }
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    let proj: Vec<f64> = cloud.points().iter().map(|p| p.dot(dir)).collect();
    order.sort_by(|&a, &b| proj[b].total_cmp(&proj[a]).then(a.cmp(&b)));
    let mut kept = order[..keep.min(order.len())].to_vec();
    kept.sort_unstable();
    Ok(cloud.select(&kept))
}

/// Uniform random subset of `n` points without replacement.
pub fn sparsify(cloud: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    if n > cloud.len() {
        return Err(Error::invalid(format!(
            "cannot keep {n} points of a cloud with {}",
            cloud.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = index::sample(&mut rng, cloud.len(), n).into_vec();
    Ok(cloud.select(&idx))
}

pub(crate) fn random_unit_vector(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::from_fn(|_, _| StandardNormal.sample(rng));
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}
