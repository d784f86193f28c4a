//! Built-in gradient checks of increasing scope, shared by the command line
//! and the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
use crate::autodiff::{ParamStore, Tensor};
use crate::cloud::PointCloud;
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::Result;
use crate::heads::fc::FcVariant;
use crate::losses::LossKind;
use crate::model::Model;
use crate::se3::{euler_to_transform, Transform, Vec3};
use crate::train::batch_loss;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradScope {
    /// One linear layer.
    Linear,
    /// A small shared encoder on two clouds.
    Encoder,
    /// Full-width PCRNet: encoder, head, pose, transform, Chamfer loss.
    Full,
}

impl GradScope {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(GradScope::Linear),
            "encoder" => Some(GradScope::Encoder),
            "full" => Some(GradScope::Full),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GradScope::Linear => "linear",
            GradScope::Encoder => "encoder",
            GradScope::Full => "full",
        }
    }
}

fn random_cloud(rng: &mut impl Rng, n: usize) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.3..0.3), rng.random_range(-0.2..0.2)))
            .collect(),
    )
    .expect("finite points")
}

fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("sized")
}

/// Runs the check for `scope` in 64-bit. `points` sets the cloud size for
/// the encoder and full scopes.
pub fn run_grad_check(scope: GradScope, points: usize, seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match scope {
        GradScope::Linear => {
            let mut store = ParamStore::<f64>::new();
            let w = store.add("w", random_tensor(&mut rng, 5, 4))?;
            let b = store.add("b", Tensor::new(vec![4], (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())?)?;
            let x = random_tensor(&mut rng, 3, 5);
            let c = random_tensor(&mut rng, 4, 1);
            grad_check(
                &store,
                |t| {
                    let xv = t.constant(x.clone());
                    let (wv, bv) = (t.param(w), t.param(b));
                    let y = t.linear(xv, wv, bv)?;
                    let cv = t.constant(c.clone());
                    let z = t.constant(Tensor::new(vec![1], vec![0.0])?);
                    let l = t.linear(y, cv, z)?;
                    Ok(t.sum(l))
                },
                opts,
            )
        }
        GradScope::Encoder => {
            let mut store = ParamStore::<f64>::new();
            let cfg = EncoderConfig {
                widths: vec![8, 16, 32],
                relu_before_pool: true,
            };
            let enc = Encoder::new(&mut store, "encoder", cfg, &mut rng)?;
            for p in store.iter_mut() {
                if p.name.ends_with("bias") {
                    p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(0.0..0.1));
                }
            }
            let (a, b) = (random_cloud(&mut rng, points), random_cloud(&mut rng, points));
            let coef = random_tensor(&mut rng, 32, 1);
            grad_check(
                &store,
                |t| {
                    let (x, off) = t.clouds(&[&a, &b]);
                    let f = enc.forward(t, x, &off)?;
                    let cv = t.constant(coef.clone());
                    let z = t.constant(Tensor::new(vec![1], vec![0.0])?);
                    let l = t.linear(f, cv, z)?;
                    Ok(t.sum(l))
                },
                opts,
            )
        }
        GradScope::Full => {
            let model = Model::<f64>::new(FcVariant::Pcrnet, EncoderConfig::default(), rng.random())?;
            let template = random_cloud(&mut rng, points);
            let gt = euler_to_transform([20.0, -10.0, 15.0], [0.1, -0.05, 0.08]);
            let source = gt.apply(&template)?;
            let gts: Vec<Transform> = vec![gt];
            grad_check(
                &model.store,
                |t| batch_loss(t, &model, &[&source], &[&template], &gts, LossKind::Chamfer, 1, 0, false, 0),
                opts,
            )
        }
    }
}
