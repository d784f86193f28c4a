//! Plain-text run configuration: one `key = value` per line, `#` starts a
//! comment. Unknown or repeated keys are rejected.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::driver::RegistrationConfig;
use crate::error::{Error, Result};
use crate::heads::fc::FcVariant;
use crate::heads::lk::DEFAULT_FD_STEP;
use crate::icp::{Correspondence, IcpConfig};
use crate::losses::LossKind;
use crate::synth::ShapeKind;
use crate::train::{DatasetSpec, Regime, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodKind {
    Icp,
    /// Single pass of the PCRNet head.
    Pcrnet,
    /// Iterative PCRNet head.
    Ipcrnet,
    /// Encoder features with the Lucas-Kanade solver.
    Lk,
}

impl MethodKind {
    pub const ALL: [MethodKind; 4] = [MethodKind::Icp, MethodKind::Pcrnet, MethodKind::Ipcrnet, MethodKind::Lk];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "icp" => Some(MethodKind::Icp),
            "pcrnet" => Some(MethodKind::Pcrnet),
            "ipcrnet" => Some(MethodKind::Ipcrnet),
            "lk" => Some(MethodKind::Lk),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Icp => "icp",
            MethodKind::Pcrnet => "pcrnet",
            MethodKind::Ipcrnet => "ipcrnet",
            MethodKind::Lk => "lk",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub test_pairs: usize,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
    pub method: MethodKind,
    pub registration: RegistrationConfig,
    pub lk_fd_step: f64,
    pub icp: IcpConfig,
    pub bench_methods: Vec<MethodKind>,
    pub pcrnet_model: Option<PathBuf>,
    pub ipcrnet_model: Option<PathBuf>,
    /// Checkpoint whose encoder drives the LK method; falls back to the
    /// i-PCRNet and then the PCRNet checkpoint.
    pub lk_model: Option<PathBuf>,
    pub inference_precision: Precision,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetSpec::default(),
            test_pairs: 200,
            train: TrainConfig::default(),
            output_dir: PathBuf::from("run"),
            method: MethodKind::Ipcrnet,
            registration: RegistrationConfig::default(),
            lk_fd_step: DEFAULT_FD_STEP,
            icp: IcpConfig::default(),
            bench_methods: vec![MethodKind::Icp],
            pcrnet_model: None,
            ipcrnet_model: None,
            lk_model: None,
            inference_precision: Precision::F64,
        }
    }
}

fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("`{v}` is not a valid number"))
}

fn list(v: &str) -> Vec<&str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn boolean(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("`{v}` is not a boolean")),
    }
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty() && v != "none").then(|| PathBuf::from(v))
}

fn choice<T>(v: &str, parse: fn(&str) -> Option<T>, what: &str) -> std::result::Result<T, String> {
    parse(v).ok_or_else(|| format!("unknown {what} `{v}`"))
}

/// Every recognized key, in the order written by [`RunConfig::to_text`].
pub const KEYS: &[&str] = &[
    "regime",
    "shapes",
    "template_files",
    "models_per_category",
    "points_per_cloud",
    "noise_sigma_max",
    "partial_keep_min",
    "sparsify_to",
    "max_angle_deg",
    "max_translation",
    "seed",
    "test_pairs",
    "loss",
    "head",
    "unroll_iterations",
    "batch_size",
    "learning_rate",
    "decay_factor",
    "decay_every_steps",
    "epochs",
    "pairs_per_epoch",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "checkpoint_every",
    "dropout",
    "encoder_widths",
    "emd_cap",
    "output_dir",
    "method",
    "max_iterations",
    "epsilon",
    "record_trace",
    "lk_fd_step",
    "icp_max_iterations",
    "icp_mse_tolerance",
    "icp_correspondence",
    "bench_methods",
    "pcrnet_model",
    "ipcrnet_model",
    "lk_model",
    "inference_precision",
];

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, found `{line}`", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) && KEYS.contains(&k) {
                return Err(Error::Config(format!("line {}: key `{k}` given twice", i + 1)));
            }
            cfg.set(k, v).map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets one key. The error names the key.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let d = &mut self.dataset;
        let t = &mut self.train;
        let r = (|| -> std::result::Result<(), String> {
            match key {
                "regime" => d.regime = choice(v, Regime::parse, "regime")?,
                "shapes" => {
                    d.shapes = list(v)
                        .into_iter()
                        .map(|s| choice(s, ShapeKind::parse, "shape"))
                        .collect::<std::result::Result<_, _>>()?
                }
                "template_files" => d.template_files = list(v).into_iter().map(PathBuf::from).collect(),
                "models_per_category" => d.models_per_category = num(v)?,
                "points_per_cloud" => d.points_per_cloud = num(v)?,
                "noise_sigma_max" => d.noise_sigma_max = num(v)?,
                "partial_keep_min" => d.partial_keep_min = num(v)?,
                "sparsify_to" => d.sparsify_to = if v == "none" { None } else { Some(num(v)?) },
                "max_angle_deg" => d.max_angle_deg = num(v)?,
                "max_translation" => d.max_translation = num(v)?,
                "seed" => {
                    d.seed = num(v)?;
                    t.seed = d.seed;
                }
                "test_pairs" => self.test_pairs = num(v)?,
                "loss" => t.loss = choice(v, LossKind::parse, "loss")?,
                "head" => t.head = choice(v, FcVariant::parse, "head")?,
                "unroll_iterations" => t.unroll_iterations = num(v)?,
                "batch_size" => t.batch_size = num(v)?,
                "learning_rate" => t.learning_rate = num(v)?,
                "decay_factor" => t.decay_factor = num(v)?,
                "decay_every_steps" => t.decay_every_steps = num(v)?,
                "epochs" => t.epochs = num(v)?,
                "pairs_per_epoch" => t.pairs_per_epoch = num(v)?,
                "adam_beta1" => t.adam.beta1 = num(v)?,
                "adam_beta2" => t.adam.beta2 = num(v)?,
                "adam_eps" => t.adam.eps = num(v)?,
                "checkpoint_every" => t.checkpoint_every = num(v)?,
                "dropout" => t.dropout = num(v)?,
                "encoder_widths" => {
                    t.encoder_widths = list(v).into_iter().map(num).collect::<std::result::Result<_, _>>()?
                }
                "emd_cap" => t.emd_cap = num(v)?,
                "output_dir" => self.output_dir = PathBuf::from(v),
                "method" => self.method = choice(v, MethodKind::parse, "method")?,
                "max_iterations" => self.registration.max_iterations = num(v)?,
                "epsilon" => self.registration.epsilon = num(v)?,
                "record_trace" => self.registration.record_trace = boolean(v)?,
                "lk_fd_step" => self.lk_fd_step = num(v)?,
                "icp_max_iterations" => self.icp.max_iterations = num(v)?,
                "icp_mse_tolerance" => self.icp.mse_tolerance = num(v)?,
                "icp_correspondence" => self.icp.correspondence = choice(v, Correspondence::parse, "correspondence")?,
                "bench_methods" => {
                    self.bench_methods = list(v)
                        .into_iter()
                        .map(|s| choice(s, MethodKind::parse, "method"))
                        .collect::<std::result::Result<_, _>>()?
                }
                "pcrnet_model" => self.pcrnet_model = opt_path(v),
                "ipcrnet_model" => self.ipcrnet_model = opt_path(v),
                "lk_model" => self.lk_model = opt_path(v),
                "inference_precision" => {
                    self.inference_precision = match v {
                        "f32" => Precision::F32,
                        "f64" => Precision::F64,
                        _ => return Err(format!("unknown precision `{v}`")),
                    }
                }
                _ => return Err("unknown key".into()),
            }
            Ok(())
        })();
        r.map_err(|e| format!("`{key}`: {e}"))
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.dataset.validate().map_err(wrap)?;
        self.train.validate().map_err(wrap)?;
        if self.test_pairs == 0 {
            return Err(Error::Config("`test_pairs` must be at least 1".into()));
        }
        if self.registration.max_iterations == 0 || !(self.registration.epsilon > 0.0) {
            return Err(Error::Config("`max_iterations` must be >= 1 and `epsilon` > 0".into()));
        }
        if self.icp.max_iterations == 0 {
            return Err(Error::Config("`icp_max_iterations` must be at least 1".into()));
        }
        if !(self.lk_fd_step > 0.0) {
            return Err(Error::Config("`lk_fd_step` must be positive".into()));
        }
        if self.bench_methods.is_empty() {
            return Err(Error::Config("`bench_methods` is empty".into()));
        }
        Ok(())
    }

    /// Every key with its current value, parseable by [`RunConfig::parse`].
    pub fn to_text(&self) -> String {
        let d = &self.dataset;
        let t = &self.train;
        let join = |xs: Vec<String>| xs.join(",");
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        let value = |k: &str| -> String {
            match k {
                "regime" => d.regime.name().into(),
                "shapes" => join(d.shapes.iter().map(|s| s.name().to_string()).collect()),
                "template_files" => join(d.template_files.iter().map(|p| p.display().to_string()).collect()),
                "models_per_category" => d.models_per_category.to_string(),
                "points_per_cloud" => d.points_per_cloud.to_string(),
                "noise_sigma_max" => d.noise_sigma_max.to_string(),
                "partial_keep_min" => d.partial_keep_min.to_string(),
                "sparsify_to" => d.sparsify_to.map_or("none".into(), |n| n.to_string()),
                "max_angle_deg" => d.max_angle_deg.to_string(),
                "max_translation" => d.max_translation.to_string(),
                "seed" => d.seed.to_string(),
                "test_pairs" => self.test_pairs.to_string(),
                "loss" => t.loss.name().into(),
                "head" => t.head.name().into(),
                "unroll_iterations" => t.unroll_iterations.to_string(),
                "batch_size" => t.batch_size.to_string(),
                "learning_rate" => t.learning_rate.to_string(),
                "decay_factor" => t.decay_factor.to_string(),
                "decay_every_steps" => t.decay_every_steps.to_string(),
                "epochs" => t.epochs.to_string(),
                "pairs_per_epoch" => t.pairs_per_epoch.to_string(),
                "adam_beta1" => t.adam.beta1.to_string(),
                "adam_beta2" => t.adam.beta2.to_string(),
                "adam_eps" => t.adam.eps.to_string(),
                "checkpoint_every" => t.checkpoint_every.to_string(),
                "dropout" => t.dropout.to_string(),
                "encoder_widths" => join(t.encoder_widths.iter().map(|w| w.to_string()).collect()),
                "emd_cap" => t.emd_cap.to_string(),
                "output_dir" => self.output_dir.display().to_string(),
                "method" => self.method.name().into(),
                "max_iterations" => self.registration.max_iterations.to_string(),
                "epsilon" => self.registration.epsilon.to_string(),
                "record_trace" => self.registration.record_trace.to_string(),
                "lk_fd_step" => self.lk_fd_step.to_string(),
                "icp_max_iterations" => self.icp.max_iterations.to_string(),
                "icp_mse_tolerance" => self.icp.mse_tolerance.to_string(),
                "icp_correspondence" => self.icp.correspondence.name().into(),
                "bench_methods" => join(self.bench_methods.iter().map(|m| m.name().to_string()).collect()),
                "pcrnet_model" => path(&self.pcrnet_model),
                "ipcrnet_model" => path(&self.ipcrnet_model),
                "lk_model" => path(&self.lk_model),
                "inference_precision" => match self.inference_precision {
                    Precision::F32 => "f32".into(),
                    Precision::F64 => "f64".into(),
                },
                _ => unreachable!("key list and match disagree"),
            }
        };
        let mut s = String::new();
        for k in KEYS {
            let _ = writeln!(s, "{k} = {}", value(k));
        }
        s
    }
}
