//! Checkpoint loading and method construction.

use std::path::{Path, PathBuf};

use pcreg::config::{MethodKind, Precision, RunConfig};
use pcreg::driver::AlignmentModel;
use pcreg::eval::{IcpMethod, ModelMethod, Registrar};
use pcreg::model::Model;
use pcreg::{Error, Result};

pub enum Loaded {
    F32(Model<f32>),
    F64(Model<f64>),
}

impl Loaded {
    pub fn load(path: &Path, precision: Precision) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Ok(match precision {
            Precision::F32 => Loaded::F32(Model::from_bytes(&bytes)?.0),
            Precision::F64 => Loaded::F64(Model::from_bytes(&bytes)?.0),
        })
    }

    pub fn alignment(&self) -> &dyn AlignmentModel {
        match self {
            Loaded::F32(m) => m,
            Loaded::F64(m) => m,
        }
    }

    pub fn lk(&self, fd_step: f64) -> Box<dyn AlignmentModel + '_> {
        match self {
            Loaded::F32(m) => Box::new(m.lk(fd_step)),
            Loaded::F64(m) => Box::new(m.lk(fd_step)),
        }
    }
}

/// Checkpoint used by a learned method: its own key, then for LK the
/// i-PCRNet and PCRNet checkpoints in turn.
pub fn model_path(cfg: &RunConfig, kind: MethodKind) -> Result<PathBuf> {
    let found = match kind {
        MethodKind::Icp => None,
        MethodKind::Pcrnet => cfg.pcrnet_model.clone(),
        MethodKind::Ipcrnet => cfg.ipcrnet_model.clone(),
        MethodKind::Lk => cfg
            .lk_model
            .clone()
            .or_else(|| cfg.ipcrnet_model.clone())
            .or_else(|| cfg.pcrnet_model.clone()),
    };
    found.ok_or_else(|| {
        Error::Config(format!(
            "method `{}` needs a checkpoint (set `{}_model` or pass --model)",
            kind.name(),
            kind.name()
        ))
    })
}

/// Models loaded for a set of methods, kept alive while the methods borrow
/// them.
pub struct Models {
    loaded: Vec<(MethodKind, Loaded)>,
}

impl Models {
    pub fn load(cfg: &RunConfig, kinds: &[MethodKind], override_path: Option<&Path>) -> Result<Self> {
        let mut loaded = Vec::new();
        for &k in kinds {
            if k == MethodKind::Icp || loaded.iter().any(|(m, _)| *m == k) {
                continue;
            }
            let path = match override_path {
                Some(p) => p.to_path_buf(),
                None => model_path(cfg, k)?,
            };
            log::info!("{}: loading {}", k.name(), path.display());
            loaded.push((k, Loaded::load(&path, cfg.inference_precision)?));
        }
        Ok(Models { loaded })
    }

    fn get(&self, k: MethodKind) -> &Loaded {
        &self.loaded.iter().find(|(m, _)| *m == k).expect("loaded above").1
    }

    /// LK wrappers must outlive the methods that borrow them.
    pub fn lk_models(&self, cfg: &RunConfig) -> Vec<Box<dyn AlignmentModel + '_>> {
        self.loaded
            .iter()
            .filter(|(m, _)| *m == MethodKind::Lk)
            .map(|(_, l)| l.lk(cfg.lk_fd_step))
            .collect()
    }

    pub fn methods<'a>(
        &'a self,
        cfg: &RunConfig,
        kinds: &[MethodKind],
        lk: &'a [Box<dyn AlignmentModel + 'a>],
    ) -> Vec<Box<dyn Registrar + 'a>> {
        kinds
            .iter()
            .map(|&k| -> Box<dyn Registrar + 'a> {
                let name = k.name().to_string();
                match k {
                    MethodKind::Icp => Box::new(IcpMethod { name, cfg: cfg.icp.clone() }),
                    MethodKind::Pcrnet => Box::new(ModelMethod {
                        name,
                        model: self.get(k).alignment(),
                        iterative: None,
                    }),
                    MethodKind::Ipcrnet => Box::new(ModelMethod {
                        name,
                        model: self.get(k).alignment(),
                        iterative: Some(cfg.registration.clone()),
                    }),
                    MethodKind::Lk => Box::new(ModelMethod {
                        name,
                        model: lk[0].as_ref(),
                        iterative: Some(cfg.registration.clone()),
                    }),
                }
            })
            .collect()
    }
}
