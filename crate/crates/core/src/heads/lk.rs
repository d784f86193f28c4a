//! Inverse-compositional Lucas-Kanade alignment in feature space.
//!
//! The template's feature Jacobian with respect to twist perturbations is
//! computed once by finite differences; every step then solves a linear least
//! squares problem with its pseudoinverse.
//!
//! Sign convention: column `i` of `J` is `[phi(exp(-h e_i) P_T) - phi(P_T)] / h`.
//! For a source `P_S = exp(xi) P_T` near the template this gives
//! `phi(P_S) - phi(P_T) ~ -J xi`, so `J^+ (phi(P_S) - phi(P_T)) ~ -xi` and
//! `exp` of that step is directly the increment that moves the source back
//! onto the template.

use nalgebra::{DMatrix, DVector, SVD};

use crate::autodiff::{ParamStore, Real};
use crate::cloud::PointCloud;
use crate::driver::{AlignmentModel, Increment, PoseEstimator};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::icp::best_fit_transform;
use crate::se3::Transform;

pub const DEFAULT_FD_STEP: f64 = 0.01;
pub const DAMPING: f64 = 1e-6;
const RANK_TOL: f64 = 1e-10;

/// Any map from clouds to fixed-length feature vectors.
pub trait FeatureMap {
    fn features(&self, cloud: &PointCloud) -> Result<Vec<f64>>;

    fn features_batch(&self, clouds: &[&PointCloud]) -> Result<Vec<Vec<f64>>> {
        clouds.iter().map(|c| self.features(c)).collect()
    }
}

/// A trained encoder used as a feature map.
pub struct EncoderFeatures<'a, F: Real> {
    pub encoder: &'a Encoder,
    pub store: &'a ParamStore<F>,
}

impl<F: Real> FeatureMap for EncoderFeatures<'_, F> {
    fn features(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        Ok(self.encoder.encode(self.store, cloud)?.0)
    }

    fn features_batch(&self, clouds: &[&PointCloud]) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .encoder
            .encode_batch(self.store, clouds)?
            .into_iter()
            .map(|f| f.0)
            .collect())
    }
}

/// Feature map that is exactly linear in the twist of the cloud's pose
/// relative to a reference: `phi(P) = A log(T)` where `T` best aligns the
/// reference onto `P` (`A` is the identity when `None`).
pub struct LinearStub {
    pub reference: PointCloud,
    pub map: Option<DMatrix<f64>>,
}

impl FeatureMap for LinearStub {
    fn features(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        let t = best_fit_transform(self.reference.points(), cloud.points())?;
        let xi = DVector::from_column_slice(&t.log());
        Ok(match &self.map {
            Some(a) => (a * xi).as_slice().to_vec(),
            None => xi.as_slice().to_vec(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct LkState {
    pub template_feature: Vec<f64>,
    /// `D x 6`.
    pub jacobian: DMatrix<f64>,
    /// `6 x D`.
    pub pinv: DMatrix<f64>,
    pub fd_step: f64,
    /// Set when `J` lost rank and the damped solve is in use.
    pub warning: Option<String>,
}

pub fn lk_precompute(template: &PointCloud, fmap: &dyn FeatureMap, fd_step: f64) -> Result<LkState> {
    if template.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !(fd_step > 0.0) || !fd_step.is_finite() {
        return Err(Error::invalid(format!("fd_step must be positive, got {fd_step}")));
    }
    let mut perturbed = Vec::with_capacity(6);
    for i in 0..6 {
        let mut xi = [0.0; 6];
        xi[i] = -fd_step;
        perturbed.push(Transform::exp(&xi).apply(template)?);
    }
    let mut all: Vec<&PointCloud> = vec![template];
    all.extend(perturbed.iter());
    let feats = fmap.features_batch(&all)?;
    let f0 = &feats[0];
    let d = f0.len();
    let mut j = DMatrix::zeros(d, 6);
    for i in 0..6 {
        for r in 0..d {
            j[(r, i)] = (feats[i + 1][r] - f0[r]) / fd_step;
        }
    }
    let svd = SVD::new(j.clone(), false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let (pinv, warning) = if smax > 0.0 && smin > RANK_TOL * smax {
        let pinv = j
            .clone()
            .pseudo_inverse(0.0)
            .map_err(|e| Error::DegenerateGeometry(e.to_string()))?;
        (pinv, None)
    } else {
        let msg = format!(
            "feature Jacobian is rank deficient (singular values {smin:.3e}..{smax:.3e}); using damped least squares"
        );
        log::warn!("{msg}");
        let jt = j.transpose();
        let mut jtj = &jt * &j;
        for k in 0..6 {
            jtj[(k, k)] += DAMPING;
        }
        let inv = jtj
            .try_inverse()
            .ok_or_else(|| Error::DegenerateGeometry("damped normal matrix is singular".into()))?;
        (inv * jt, Some(msg))
    };
    Ok(LkState {
        template_feature: f0.clone(),
        jacobian: j,
        pinv,
        fd_step,
        warning,
    })
}

impl LkState {
    /// Twist step for a source feature and the increment `exp(step)`.
    pub fn step(&self, fs: &[f64]) -> Result<([f64; 6], Transform)> {
        if fs.len() != self.template_feature.len() {
            return Err(Error::ShapeMismatch {
                op: "lk_step",
                detail: format!("feature has {} entries, expected {}", fs.len(), self.template_feature.len()),
            });
        }
        let r = DVector::from_iterator(fs.len(), fs.iter().zip(&self.template_feature).map(|(a, b)| a - b));
        let dxi = &self.pinv * r;
        if dxi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("LK step".into()));
        }
        let xi: [f64; 6] = std::array::from_fn(|i| dxi[i]);
        Ok((xi, Transform::exp(&xi)))
    }

    pub fn residual(&self, fs: &[f64]) -> f64 {
        fs.iter()
            .zip(&self.template_feature)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Registration model built from a feature map and an LK state per template.
pub struct LkModel<M: FeatureMap> {
    pub features: M,
    pub fd_step: f64,
}

struct BoundLk<'a, M: FeatureMap> {
    features: &'a M,
    state: LkState,
}

impl<M: FeatureMap> PoseEstimator for BoundLk<'_, M> {
    fn estimate(&self, source: &PointCloud) -> Result<Increment> {
        let fs = self.features.features(source)?;
        let (_, t) = self.state.step(&fs)?;
        Ok(Increment {
            transform: t,
            residual: self.state.residual(&fs),
        })
    }
}

impl<M: FeatureMap> AlignmentModel for LkModel<M> {
    fn bind<'a>(&'a self, template: &PointCloud) -> Result<Box<dyn PoseEstimator + 'a>> {
        let state = lk_precompute(template, &self.features, self.fd_step)?;
        Ok(Box::new(BoundLk {
            features: &self.features,
            state,
        }))
    }
}
