//! Single-pass and iterative registration around any pose estimator.

use web_time::Instant;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::se3::{frobenius_deviation, Transform};

/// One estimated increment: the transform to apply to the current source and
/// the feature residual it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Increment {
    pub transform: Transform,
    pub residual: f64,
}

/// Estimates the transform that moves a source onto a fixed, already bound
/// template.
pub trait PoseEstimator {
    fn estimate(&self, source: &PointCloud) -> Result<Increment>;
}

/// A registration model that caches whatever it needs about a template.
pub trait AlignmentModel {
    fn bind<'a>(&'a self, template: &PointCloud) -> Result<Box<dyn PoseEstimator + 'a>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationConfig {
    pub max_iterations: usize,
    pub epsilon: f64,
    pub record_trace: bool,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            max_iterations: 20,
            epsilon: 1e-7,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub transform: Transform,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// Source-to-template transform.
    pub transform: Transform,
    pub iterations_used: usize,
    pub per_iteration: Option<Vec<IterationRecord>>,
    /// Seconds.
    pub wall_time: f64,
}

impl RegistrationResult {
    pub fn render_trace(&self) -> String {
        let mut s = String::new();
        if let Some(trace) = &self.per_iteration {
            for (i, r) in trace.iter().enumerate() {
                let (rot, trans) = (r.transform.rotation.angle().to_degrees(), r.transform.translation.norm());
                s.push_str(&format!(
                    "iter {:>3}  residual {:.6e}  step_rot_deg {:.6}  step_trans {:.6}\n",
                    i + 1,
                    r.residual,
                    rot,
                    trans
                ));
            }
        }
        s
    }
}

/// One estimate from the source as given.
pub fn register_single_pass(
    source: &PointCloud,
    template: &PointCloud,
    model: &dyn AlignmentModel,
) -> Result<RegistrationResult> {
    let start = Instant::now();
    let est = model.bind(template)?;
    let inc = est.estimate(source)?;
    if !inc.transform.is_finite() {
        return Err(Error::NonFinite("estimated transform".into()));
    }
    Ok(RegistrationResult {
        transform: inc.transform,
        iterations_used: 1,
        per_iteration: Some(vec![IterationRecord {
            transform: inc.transform,
            residual: inc.residual,
        }]),
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Binds the template, then iterates. Wall time covers both.
pub fn register_iterative(
    source: &PointCloud,
    template: &PointCloud,
    model: &dyn AlignmentModel,
    cfg: &RegistrationConfig,
) -> Result<RegistrationResult> {
    let start = Instant::now();
    let est = model.bind(template)?;
    let mut r = iterate(source, est.as_ref(), cfg)?;
    r.wall_time = start.elapsed().as_secs_f64();
    Ok(r)
}

/// Repeatedly estimates an increment from the current source, moves the
/// source, and composes. Stops when two consecutive cumulative transforms
/// differ by less than `epsilon` in Frobenius norm, or at `max_iterations`.
pub fn iterate(
    source: &PointCloud,
    est: &dyn PoseEstimator,
    cfg: &RegistrationConfig,
) -> Result<RegistrationResult> {
    let start = Instant::now();
    if cfg.max_iterations == 0 || !(cfg.epsilon > 0.0) {
        return Err(Error::invalid(format!(
            "need max_iterations >= 1 and epsilon > 0, got {} and {}",
            cfg.max_iterations, cfg.epsilon
        )));
    }
    let mut current = source.clone();
    let mut total = Transform::identity();
    let mut trace = Vec::new();
    let mut used = 0;
    for i in 1..=cfg.max_iterations {
        let inc = est.estimate(&current)?;
        if !inc.transform.is_finite() {
            let partial = RegistrationResult {
                transform: total,
                iterations_used: used,
                per_iteration: cfg.record_trace.then_some(trace),
                wall_time: start.elapsed().as_secs_f64(),
            };
            return Err(Error::RegistrationAborted {
                reason: format!("non-finite increment at iteration {i}"),
                partial: Box::new(partial),
            });
        }
        current = inc.transform.apply(&current)?;
        let next = inc.transform.compose(&total);
        let dev = frobenius_deviation(&next, &total);
        if cfg.record_trace {
            trace.push(IterationRecord {
                transform: inc.transform,
                residual: inc.residual,
            });
        }
        total = next;
        used = i;
        if i >= 2 && dev < cfg.epsilon {
            break;
        }
    }
    Ok(RegistrationResult {
        transform: total,
        iterations_used: used,
        per_iteration: cfg.record_trace.then_some(trace),
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::{euler_to_transform, Vec3};
    use std::cell::Cell;

    struct Fixed(Transform);

    impl PoseEstimator for Fixed {
        fn estimate(&self, _: &PointCloud) -> Result<Increment> {
            Ok(Increment {
                transform: self.0,
                residual: 0.0,
            })
        }
    }

    impl AlignmentModel for Fixed {
        fn bind<'a>(&'a self, _: &PointCloud) -> Result<Box<dyn PoseEstimator + 'a>> {
            Ok(Box::new(Fixed(self.0)))
        }
    }

    /// Returns a scripted sequence of increments.
    struct Script(Vec<Transform>, Cell<usize>);

    impl PoseEstimator for Script {
        fn estimate(&self, _: &PointCloud) -> Result<Increment> {
            let i = self.1.get();
            self.1.set(i + 1);
            Ok(Increment {
                transform: self.0[i.min(self.0.len() - 1)],
                residual: i as f64,
            })
        }
    }

    fn cloud() -> PointCloud {
        PointCloud::from_flat(&[1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0, 1.0, 1.0, 1.0]).unwrap()
    }

    #[test]
    fn identity_stub_stops_at_iteration_two() {
        let cfg = RegistrationConfig::default();
        let r = register_iterative(&cloud(), &cloud(), &Fixed(Transform::identity()), &cfg).unwrap();
        assert_eq!(r.iterations_used, 2);
        assert_eq!(r.transform, Transform::identity());
        let single = register_single_pass(&cloud(), &cloud(), &Fixed(Transform::identity())).unwrap();
        assert_eq!(single.transform, Transform::identity());
    }

    #[test]
    fn composition_matches_replay() {
        let steps: Vec<Transform> = (0..6)
            .map(|i| euler_to_transform([i as f64 * 3.0, -2.0, 1.5 * i as f64], [0.1, -0.02 * i as f64, 0.03]))
            .collect();
        let est = Script(steps.clone(), Cell::new(0));
        let cfg = RegistrationConfig {
            max_iterations: 6,
            record_trace: true,
            ..Default::default()
        };
        let src = cloud();
        let r = iterate(&src, &est, &cfg).unwrap();
        assert_eq!(r.iterations_used, 6);
        let trace = r.per_iteration.as_ref().unwrap();
        let mut replay = src.clone();
        for s in trace {
            replay = s.transform.apply(&replay).unwrap();
        }
        let direct = r.transform.apply(&src).unwrap();
        for (a, b) in replay.points().iter().zip(direct.points()) {
            assert!((a - b).norm() < 1e-9);
        }
        let composed = trace.iter().fold(Transform::identity(), |acc, s| s.transform.compose(&acc));
        assert!((composed.matrix() - r.transform.matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn stops_when_increments_vanish() {
        let mut steps = vec![euler_to_transform([5.0, 0.0, 0.0], [0.1, 0.0, 0.0]); 2];
        steps.push(Transform::identity());
        let est = Script(steps, Cell::new(0));
        let r = iterate(&cloud(), &est, &RegistrationConfig::default()).unwrap();
        assert_eq!(r.iterations_used, 3);
    }

    #[test]
    fn caps_iterations() {
        let est = Fixed(Transform::from_translation(Vec3::new(0.1, 0.0, 0.0)));
        let cfg = RegistrationConfig {
            max_iterations: 7,
            ..Default::default()
        };
        assert_eq!(iterate(&cloud(), &est, &cfg).unwrap().iterations_used, 7);
    }

    #[test]
    fn non_finite_increment_aborts_with_partial() {
        let bad = Transform::from_translation(Vec3::new(f64::NAN, 0.0, 0.0));
        let est = Script(vec![Transform::from_translation(Vec3::x()), bad], Cell::new(0));
        let cfg = RegistrationConfig {
            record_trace: true,
            ..Default::default()
        };
        match iterate(&cloud(), &est, &cfg) {
            Err(Error::RegistrationAborted { partial, .. }) => {
                assert_eq!(partial.iterations_used, 1);
                assert_eq!(partial.per_iteration.unwrap().len(), 1);
                assert_eq!(partial.transform, Transform::from_translation(Vec3::x()));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_config() {
        let est = Fixed(Transform::identity());
        let cfg = RegistrationConfig {
            max_iterations: 0,
            ..Default::default()
        };
        assert!(iterate(&cloud(), &est, &cfg).is_err());
    }
}
