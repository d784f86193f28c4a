//! Point-to-point ICP.

use web_time::Instant;

use nalgebra::{Matrix3, SVD};

use crate::cloud::PointCloud;
use crate::driver::{IterationRecord, RegistrationResult};
use crate::error::{Error, Result};
use crate::kdtree::{nearest_brute, KdTree};
use crate::se3::{Rotation, Transform, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Correspondence {
    KdTree,
    Brute,
}

impl Correspondence {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "kdtree" => Some(Correspondence::KdTree),
            "brute" => Some(Correspondence::Brute),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Correspondence::KdTree => "kdtree",
            Correspondence::Brute => "brute",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Stop once the correspondence MSE changes by less than this.
    pub mse_tolerance: f64,
    pub correspondence: Correspondence,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            max_iterations: 100,
            mse_tolerance: 1e-12,
            correspondence: Correspondence::KdTree,
        }
    }
}

/// Least-squares rigid transform taking `src[i]` onto `dst[i]`, with the
/// reflection case corrected to a proper rotation.
pub fn best_fit_transform(src: &[Vec3], dst: &[Vec3]) -> Result<Transform> {
    if src.len() != dst.len() {
        return Err(Error::invalid(format!(
            "best_fit_transform needs equal counts, got {} and {}",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "need at least 3 point pairs, got {}",
            src.len()
        )));
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vec3>() / n;
    let cd = dst.iter().sum::<Vec3>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = SVD::new(h, true, true);
    let sv = svd.singular_values;
    if !(sv[1] > 1e-12 * sv[0].max(f64::MIN_POSITIVE)) {
        return Err(Error::DegenerateGeometry(
            "point pairs are collinear or coincident".into(),
        ));
    }
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let v = vt.transpose();
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = v * d * u.transpose();
    let rotation = Rotation::from_matrix(&r);
    let translation = cd - rotation.rotate(&cs);
    Ok(Transform::new(rotation, translation))
}

enum Matcher<'a> {
    Tree(KdTree),
    Brute(&'a [Vec3]),
}

impl Matcher<'_> {
    fn nearest(&self, q: &Vec3) -> (usize, f64) {
        match self {
            Matcher::Tree(t) => t.nearest(q).unwrap(),
            Matcher::Brute(p) => nearest_brute(p, q).unwrap(),
        }
    }
}

/// Aligns `source` to `template`. The per-iteration trace is always recorded;
/// its residuals are the correspondence MSE measured before each update.
pub fn icp(source: &PointCloud, template: &PointCloud, cfg: &IcpConfig) -> Result<RegistrationResult> {
    let start = Instant::now();
    if cfg.max_iterations == 0 {
        return Err(Error::invalid("max_iterations must be at least 1"));
    }
    if template.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "template needs at least 3 points, got {}",
            template.len()
        )));
    }
    if source.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let tpts = template.points();
    let matcher = match cfg.correspondence {
        Correspondence::KdTree => Matcher::Tree(KdTree::new(tpts)),
        Correspondence::Brute => Matcher::Brute(tpts),
    };
    let mut current: Vec<Vec3> = source.points().to_vec();
    let mut total = Transform::identity();
    let mut trace = Vec::new();
    let mut prev_mse: Option<f64> = None;
    let mut matched = vec![Vec3::zeros(); current.len()];
    for _ in 0..cfg.max_iterations {
        let mut mse = 0.0;
        for (m, p) in matched.iter_mut().zip(&current) {
            let (j, d2) = matcher.nearest(p);
            *m = tpts[j];
            mse += d2;
        }
        mse /= current.len() as f64;
        if let Some(prev) = prev_mse {
            if (prev - mse).abs() < cfg.mse_tolerance {
                break;
            }
        }
        // rank-deficient correspondences still fix the centroid offset
        let step = match best_fit_transform(&current, &matched) {
            Err(Error::DegenerateGeometry(_)) => {
                let n = current.len() as f64;
                let shift = matched.iter().sum::<Vec3>() / n - current.iter().sum::<Vec3>() / n;
                Transform::from_translation(shift)
            }
            r => r?,
        };
        for p in current.iter_mut() {
            *p = step.apply_point(p);
        }
        total = step.compose(&total);
        trace.push(IterationRecord {
            transform: step,
            residual: mse,
        });
        prev_mse = Some(mse);
    }
    Ok(RegistrationResult {
        transform: total,
        iterations_used: trace.len(),
        per_iteration: Some(trace),
        wall_time: start.elapsed().as_secs_f64(),
    })
}
