//! Encoder plus FC head bundled with checkpoint metadata.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::checkpoint::{self, Metadata};
use crate::autodiff::{ParamStore, Real};
use crate::cloud::PointCloud;
use crate::driver::{AlignmentModel, Increment, PoseEstimator};
use crate::encoder::{Encoder, EncoderConfig, GlobalFeature};
use crate::error::{Error, Result};
use crate::heads::fc::{FcHead, FcVariant};
use crate::heads::lk::{EncoderFeatures, LkModel};
use crate::se3::{pose_to_transform, PoseVector, Transform};

pub const ENCODER_PREFIX: &str = "encoder";
pub const HEAD_PREFIX: &str = "head";

#[derive(Debug, Clone)]
pub struct Model<F: Real> {
    pub store: ParamStore<F>,
    pub encoder: Encoder,
    pub head: FcHead,
}

impl<F: Real> Model<F> {
    pub fn new(variant: FcVariant, enc_cfg: EncoderConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, ENCODER_PREFIX, enc_cfg, &mut rng)?;
        let in_dim = 2 * encoder.feature_dim();
        let head = FcHead::new(&mut store, HEAD_PREFIX, variant, in_dim, &mut rng)?;
        Ok(Model { store, encoder, head })
    }

    pub fn variant(&self) -> FcVariant {
        self.head.variant()
    }

    pub fn metadata(&self) -> Metadata {
        let cfg = self.encoder.config();
        let mut m = Metadata::new();
        m.insert("format".into(), "pcreg-model".into());
        m.insert("head".into(), self.variant().name().into());
        m.insert(
            "encoder_widths".into(),
            cfg.widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","),
        );
        m.insert("relu_before_pool".into(), cfg.relu_before_pool.to_string());
        m.insert("dropout".into(), self.head.dropout().to_string());
        m
    }

    /// Serializes with the architecture metadata plus `extra` entries.
    pub fn to_bytes(&self, extra: &Metadata) -> Vec<u8> {
        let mut meta = self.metadata();
        meta.extend(extra.iter().map(|(k, v)| (k.clone(), v.clone())));
        checkpoint::to_bytes(&self.store, &meta)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, Metadata)> {
        let (store, meta) = checkpoint::from_bytes::<F>(bytes)?;
        let get = |k: &str| {
            meta.get(k)
                .ok_or_else(|| Error::Checkpoint(format!("missing metadata `{k}`")))
        };
        let variant = FcVariant::parse(get("head")?)
            .ok_or_else(|| Error::Checkpoint(format!("unknown head `{}`", meta["head"])))?;
        let widths = get("encoder_widths")?
            .split(',')
            .map(|w| w.parse::<usize>().map_err(|_| Error::Checkpoint(format!("bad width `{w}`"))))
            .collect::<Result<Vec<_>>>()?;
        let relu_before_pool = get("relu_before_pool")?
            .parse::<bool>()
            .map_err(|_| Error::Checkpoint("bad relu_before_pool".into()))?;
        let dropout = get("dropout")?
            .parse::<f64>()
            .map_err(|_| Error::Checkpoint("bad dropout".into()))?;
        let enc_cfg = EncoderConfig { widths, relu_before_pool };
        let encoder = Encoder::from_store(&store, ENCODER_PREFIX, enc_cfg)?;
        let mut head = FcHead::from_store(&store, HEAD_PREFIX, variant, 2 * encoder.feature_dim())?;
        head.set_dropout(dropout)?;
        Ok((Model { store, encoder, head }, meta))
    }

    pub fn save(&self, path: &Path, extra: &Metadata) -> Result<()> {
        std::fs::write(path, self.to_bytes(extra))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, Metadata)> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Same architecture with values converted to another precision.
    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            store: self.store.cast(),
            encoder: self.encoder.clone(),
            head: self.head.clone(),
        }
    }

    /// Pose moving a cloud with feature `fs` onto one with feature `ft`.
    pub fn pose(&self, fs: &GlobalFeature, ft: &GlobalFeature) -> Result<Transform> {
        let raw = self.head.predict(&self.store, fs.values(), ft.values())?;
        pose_to_transform(&PoseVector::Quaternion7(raw)).map_err(|e| match e {
            Error::DegeneratePose(msg) => Error::DegeneratePose(format!("head output {raw:?}: {msg}")),
            other => other,
        })
    }

    /// The encoder alone, driven by the Lucas-Kanade solver.
    pub fn lk(&self, fd_step: f64) -> LkModel<EncoderFeatures<'_, F>> {
        LkModel {
            features: EncoderFeatures {
                encoder: &self.encoder,
                store: &self.store,
            },
            fd_step,
        }
    }
}

struct BoundFc<'a, F: Real> {
    model: &'a Model<F>,
    template: GlobalFeature,
}

impl<F: Real> PoseEstimator for BoundFc<'_, F> {
    fn estimate(&self, source: &PointCloud) -> Result<Increment> {
        let fs = self.model.encoder.encode(&self.model.store, source)?;
        Ok(Increment {
            transform: self.model.pose(&fs, &self.template)?,
            residual: fs.distance(&self.template),
        })
    }
}

impl<F: Real> AlignmentModel for Model<F> {
    fn bind<'a>(&'a self, template: &PointCloud) -> Result<Box<dyn PoseEstimator + 'a>> {
        let t = self.encoder.encode(&self.store, template)?;
        Ok(Box::new(BoundFc { model: self, template: t }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::register_single_pass;
    use crate::se3::Vec3;

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            widths: vec![8, 16],
            relu_before_pool: true,
        }
    }

    #[test]
    fn round_trip_through_bytes() {
        let m = Model::<f32>::new(FcVariant::Ipcrnet, small_cfg(), 1).unwrap();
        let mut extra = Metadata::new();
        extra.insert("seed".into(), "1".into());
        let bytes = m.to_bytes(&extra);
        let (back, meta) = Model::<f32>::from_bytes(&bytes).unwrap();
        assert_eq!(meta["seed"], "1");
        assert_eq!(back.variant(), FcVariant::Ipcrnet);
        assert_eq!(back.to_bytes(&extra), bytes);
        let (wide, _) = Model::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(wide.store.num_scalars(), m.store.num_scalars());
    }

    #[test]
    fn untrained_model_gives_valid_transform() {
        let m = Model::<f32>::new(FcVariant::Pcrnet, EncoderConfig::default(), 2).unwrap();
        let c = PointCloud::new((0..64).map(|i| Vec3::new((i as f64).sin(), (i as f64 * 0.7).cos(), i as f64 / 64.0)).collect()).unwrap();
        let r = register_single_pass(&c, &c, &m).unwrap();
        assert!(r.transform.is_finite());
        let q = r.transform.rotation.quaternion();
        assert!((q.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = Model::<f32>::new(FcVariant::Pcrnet, small_cfg(), 7).unwrap();
        let b = Model::<f32>::new(FcVariant::Pcrnet, small_cfg(), 7).unwrap();
        assert_eq!(a.to_bytes(&Metadata::new()), b.to_bytes(&Metadata::new()));
    }
}
