//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Three operations: sample a synthetic shape, register a perturbed copy of
//! it while recording every iteration, and sweep noise levels to get success
//! curves. Learned methods take checkpoint bytes loaded in the page.

use wasm_bindgen::prelude::*;

use pcreg::cloud::normalize_unit_box;
use pcreg::driver::{register_iterative, RegistrationConfig, RegistrationResult};
use pcreg::eval::{auc, default_thresholds, success_curve_from_errors};
use pcreg::heads::lk::DEFAULT_FD_STEP;
use pcreg::icp::{icp, IcpConfig};
use pcreg::model::Model;
use pcreg::se3::{euler_to_transform, rotation_error, translation_error};
use pcreg::synth::{synth_shape, ShapeKind, ShapeSpec};
use pcreg::train::{generate_pairs, prepare_templates, DatasetSpec, Regime, Split};
use pcreg::{Error, PointCloud, Result, Transform};

/// Noise levels (maximum sigma) visited by the sweep.
pub const SWEEP_LEVELS: [f64; 6] = [0.0, 0.01, 0.02, 0.04, 0.06, 0.08];

fn shape(name: &str) -> Result<ShapeKind> {
    ShapeKind::parse(name).ok_or_else(|| Error::InvalidArgument(format!("unknown shape `{name}`")))
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Unit-box normalized sample of a shape, flattened `x0 y0 z0 x1 ...`.
pub fn sample(shape_name: &str, points: usize, seed: u64) -> Result<Vec<f64>> {
    let cloud = synth_shape(&ShapeSpec::new(shape(shape_name)?), points, seed)?;
    Ok(normalize_unit_box(&cloud)?.to_flat())
}

enum Method {
    Icp,
    Ipcrnet(Model<f64>),
    Lk(Model<f64>),
}

impl Method {
    fn new(name: &str, checkpoint: Option<&[u8]>) -> Result<Self> {
        let load = || -> Result<Model<f64>> {
            let bytes = checkpoint.ok_or_else(|| Error::InvalidArgument(format!("`{name}` needs a checkpoint")))?;
            Ok(Model::from_bytes(bytes)?.0)
        };
        match name {
            "icp" => Ok(Method::Icp),
            "ipcrnet" => Ok(Method::Ipcrnet(load()?)),
            "lk" => Ok(Method::Lk(load()?)),
            _ => Err(Error::InvalidArgument(format!("unknown method `{name}`"))),
        }
    }

    fn register(&self, source: &PointCloud, template: &PointCloud) -> Result<RegistrationResult> {
        let cfg = RegistrationConfig { record_trace: true, ..Default::default() };
        match self {
            Method::Icp => icp(source, template, &IcpConfig::default()),
            Method::Ipcrnet(m) => register_iterative(source, template, m, &cfg),
            Method::Lk(m) => register_iterative(source, template, &m.lk(DEFAULT_FD_STEP), &cfg),
        }
    }
}

/// Outcome of one registration with its iteration history.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Trace {
    template: Vec<f64>,
    source: Vec<f64>,
    frames: Vec<f64>,
    rotation_errors: Vec<f64>,
    translation_errors: Vec<f64>,
    wall_ms: f64,
}

#[wasm_bindgen]
impl Trace {
    #[wasm_bindgen(getter)]
    pub fn template(&self) -> Vec<f64> {
        self.template.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn source(&self) -> Vec<f64> {
        self.source.clone()
    }

    /// Cumulative transform after each iteration (frame 0 is the identity),
    /// 16 row-major entries per frame.
    #[wasm_bindgen(getter)]
    pub fn frames(&self) -> Vec<f64> {
        self.frames.clone()
    }

    /// Degrees, one per frame.
    #[wasm_bindgen(getter)]
    pub fn rotation_errors(&self) -> Vec<f64> {
        self.rotation_errors.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn translation_errors(&self) -> Vec<f64> {
        self.translation_errors.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn iterations(&self) -> usize {
        self.rotation_errors.len() - 1
    }

    #[wasm_bindgen(getter)]
    pub fn wall_ms(&self) -> f64 {
        self.wall_ms
    }
}

#[derive(Debug, Clone)]
pub struct RegisterRequest<'a> {
    pub shape: &'a str,
    pub points: usize,
    pub angles_deg: [f64; 3],
    pub translation: [f64; 3],
    pub noise: f64,
    pub seed: u64,
    pub method: &'a str,
    pub checkpoint: Option<&'a [u8]>,
}

pub fn run_register(req: &RegisterRequest) -> Result<Trace> {
    let method = Method::new(req.method, req.checkpoint)?;
    let template = normalize_unit_box(&synth_shape(&ShapeSpec::new(shape(req.shape)?), req.points, req.seed)?)?;
    let gt = euler_to_transform(req.angles_deg, req.translation);
    let mut source = gt.apply(&template)?;
    if req.noise > 0.0 {
        source = pcreg::cloud::add_gaussian_noise(&source, req.noise, req.seed ^ 0x9e37)?;
    }
    let result = method.register(&source, &template)?;
    let target = gt.inverse();
    let mut total = Transform::identity();
    let mut frames = Vec::new();
    let (mut rot, mut trans) = (Vec::new(), Vec::new());
    let mut push = |t: &Transform| {
        frames.extend(t.matrix().transpose().iter().copied());
        rot.push(rotation_error(t, &target));
        trans.push(translation_error(t, &target));
    };
    push(&total);
    for step in result.per_iteration.as_deref().unwrap_or_default() {
        total = step.transform.compose(&total);
        push(&total);
    }
    Ok(Trace {
        template: template.to_flat(),
        source: source.to_flat(),
        frames,
        rotation_errors: rot,
        translation_errors: trans,
        wall_ms: result.wall_time * 1e3,
    })
}

/// Success curves over noise levels.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Sweep {
    levels: Vec<f64>,
    thresholds: Vec<f64>,
    /// `levels x thresholds`, row-major.
    ratios: Vec<f64>,
    aucs: Vec<f64>,
    mean_errors: Vec<f64>,
}

#[wasm_bindgen]
impl Sweep {
    #[wasm_bindgen(getter)]
    pub fn levels(&self) -> Vec<f64> {
        self.levels.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn thresholds(&self) -> Vec<f64> {
        self.thresholds.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn ratios(&self) -> Vec<f64> {
        self.ratios.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn aucs(&self) -> Vec<f64> {
        self.aucs.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn mean_errors(&self) -> Vec<f64> {
        self.mean_errors.clone()
    }
}

pub fn run_sweep(
    shape_name: &str,
    points: usize,
    pairs: usize,
    seed: u64,
    method: &str,
    checkpoint: Option<&[u8]>,
) -> Result<Sweep> {
    let method = Method::new(method, checkpoint)?;
    let thresholds = default_thresholds();
    let mut out = Sweep {
        levels: SWEEP_LEVELS.to_vec(),
        thresholds: thresholds.clone(),
        ratios: Vec::new(),
        aucs: Vec::new(),
        mean_errors: Vec::new(),
    };
    for &level in &SWEEP_LEVELS {
        let spec = DatasetSpec {
            regime: Regime::SingleModel,
            shapes: vec![shape(shape_name)?],
            points_per_cloud: points,
            noise_sigma_max: level,
            seed,
            ..Default::default()
        };
        let templates = prepare_templates(&spec)?;
        let test = templates.get(Split::Test);
        let errors = generate_pairs(&templates, &spec, Split::Test, 0, pairs)?
            .iter()
            .map(|p| match method.register(&p.source, &test[p.template]) {
                Ok(r) => rotation_error(&r.transform, &p.gt.inverse()),
                Err(_) => 180.0,
            })
            .collect::<Vec<_>>();
        let curve = success_curve_from_errors(&errors, &thresholds)?;
        out.aucs.push(auc(&curve)?);
        out.mean_errors.push(errors.iter().sum::<f64>() / errors.len() as f64);
        out.ratios.extend(curve.ratios);
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn shapes() -> Vec<String> {
    ShapeKind::ALL.iter().map(|s| s.name().to_string()).collect()
}

#[wasm_bindgen]
pub fn synth(shape: &str, points: usize, seed: u64) -> std::result::Result<Vec<f64>, JsError> {
    sample(shape, points, seed).map_err(js)
}

#[allow(clippy::too_many_arguments)]
#[wasm_bindgen]
pub fn register(
    shape: &str,
    points: usize,
    rx: f64,
    ry: f64,
    rz: f64,
    tx: f64,
    ty: f64,
    tz: f64,
    noise: f64,
    seed: u64,
    method: &str,
    checkpoint: Option<Vec<u8>>,
) -> std::result::Result<Trace, JsError> {
    run_register(&RegisterRequest {
        shape,
        points,
        angles_deg: [rx, ry, rz],
        translation: [tx, ty, tz],
        noise,
        seed,
        method,
        checkpoint: checkpoint.as_deref(),
    })
    .map_err(js)
}

#[wasm_bindgen]
pub fn noise_sweep(
    shape: &str,
    points: usize,
    pairs: usize,
    seed: u64,
    method: &str,
    checkpoint: Option<Vec<u8>>,
) -> std::result::Result<Sweep, JsError> {
    run_sweep(shape, points, pairs, seed, method, checkpoint.as_deref()).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(method: &str) -> RegisterRequest<'_> {
        RegisterRequest {
            shape: "box",
            points: 200,
            angles_deg: [15.0, -10.0, 5.0],
            translation: [0.1, 0.0, -0.05],
            noise: 0.0,
            seed: 3,
            method,
            checkpoint: None,
        }
    }

    #[test]
    fn sample_is_normalized() {
        let xs = sample("l-bracket", 300, 1).unwrap();
        assert_eq!(xs.len(), 900);
        let c = PointCloud::from_flat(&xs).unwrap();
        let (lo, hi) = c.bounds();
        assert!(((hi - lo).max() - 1.0).abs() < 1e-12);
        assert!(c.centroid().norm() < 1e-12);
        assert!(sample("teapot", 10, 1).is_err());
    }

    #[test]
    fn icp_trace_ends_at_ground_truth() {
        let t = run_register(&req("icp")).unwrap();
        assert_eq!(t.frames.len(), 16 * (t.iterations() + 1));
        assert_eq!(&t.frames[..16], Transform::identity().matrix().as_slice());
        assert!(t.rotation_errors[0] > 10.0);
        assert!(*t.rotation_errors.last().unwrap() < 1e-3);
        assert_eq!(t.template.len(), t.source.len());
    }

    #[test]
    fn learned_methods_need_a_checkpoint() {
        assert!(run_register(&req("ipcrnet")).is_err());
        assert!(run_register(&req("nope")).is_err());
        let model = Model::<f64>::new(
            pcreg::heads::fc::FcVariant::Ipcrnet,
            pcreg::encoder::EncoderConfig { widths: vec![8, 16], relu_before_pool: true },
            1,
        )
        .unwrap();
        let bytes = model.to_bytes(&Default::default());
        for m in ["ipcrnet", "lk"] {
            let t = run_register(&RegisterRequest { checkpoint: Some(&bytes), ..req(m) }).unwrap();
            assert!(t.iterations() >= 1);
        }
    }

    #[test]
    fn sweep_shapes() {
        let s = run_sweep("box", 128, 4, 2, "icp", None).unwrap();
        assert_eq!(s.aucs.len(), SWEEP_LEVELS.len());
        assert_eq!(s.ratios.len(), SWEEP_LEVELS.len() * s.thresholds.len());
        assert!(s.aucs.iter().all(|a| (0.0..=1.0).contains(a)));
    }
}
