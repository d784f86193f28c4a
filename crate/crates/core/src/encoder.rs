//! Shared-weight PointNet encoder: per-point MLP followed by a coordinatewise
//! max over points.

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};

pub const DEFAULT_WIDTHS: [usize; 5] = [64, 64, 64, 128, 1024];

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub widths: Vec<usize>,
    /// Apply ReLU to the last layer before pooling (features become >= 0).
    pub relu_before_pool: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            widths: DEFAULT_WIDTHS.to_vec(),
            relu_before_pool: true,
        }
    }
}

/// Global feature of one cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalFeature(pub Vec<f64>);

impl GlobalFeature {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn distance(&self, other: &GlobalFeature) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: EncoderConfig,
    layers: Vec<(ParamId, ParamId)>,
}

fn layer_names(prefix: &str, i: usize) -> (String, String) {
    (format!("{prefix}.mlp{i}.weight"), format!("{prefix}.mlp{i}.bias"))
}

impl Encoder {
    /// Registers freshly initialized layers (uniform Glorot weights, zero
    /// biases) under `prefix`.
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        prefix: &str,
        cfg: EncoderConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if cfg.widths.is_empty() || cfg.widths.contains(&0) {
            return Err(Error::invalid(format!("bad encoder widths {:?}", cfg.widths)));
        }
        let mut layers = Vec::new();
        let mut fan_in = 3;
        for (i, &w) in cfg.widths.iter().enumerate() {
            let (wn, bn) = layer_names(prefix, i);
            let wid = store.add_glorot(wn, fan_in, w, 1.0, rng)?;
            let bid = store.add(bn, Tensor::zeros(vec![w]))?;
            layers.push((wid, bid));
            fan_in = w;
        }
        Ok(Encoder { cfg, layers })
    }

    /// Binds to layers already present in `store`, checking their shapes.
    pub fn from_store<F: Real>(store: &ParamStore<F>, prefix: &str, cfg: EncoderConfig) -> Result<Self> {
        let mut layers = Vec::new();
        let mut fan_in = 3;
        for (i, &w) in cfg.widths.iter().enumerate() {
            let (wn, bn) = layer_names(prefix, i);
            let find = |n: &str, shape: &[usize]| -> Result<ParamId> {
                let id = store
                    .id(n)
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{n}`")))?;
                if store.value(id).shape() != shape {
                    return Err(Error::Checkpoint(format!(
                        "`{n}` has shape {:?}, expected {shape:?}",
                        store.value(id).shape()
                    )));
                }
                Ok(id)
            };
            layers.push((find(&wn, &[fan_in, w])?, find(&bn, &[w])?));
            fan_in = w;
        }
        Ok(Encoder { cfg, layers })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn feature_dim(&self) -> usize {
        *self.cfg.widths.last().unwrap()
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }

    /// Records the encoder on `tape` for a batch of stacked clouds
    /// (`rows x 3`, segments given by `offsets`); returns `B x D` features.
    pub fn forward<F: Real>(&self, tape: &mut Tape<'_, F>, points: Var, offsets: &[usize]) -> Result<Var> {
        let mut h = points;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let (wv, bv) = (tape.param(w), tape.param(b));
            if i == last {
                return tape.linear_max_pool(h, wv, bv, offsets, self.cfg.relu_before_pool);
            }
            let z = tape.linear(h, wv, bv)?;
            h = tape.relu(z);
        }
        unreachable!()
    }

    /// Features for several clouds, in order.
    pub fn encode_batch<F: Real>(&self, store: &ParamStore<F>, clouds: &[&PointCloud]) -> Result<Vec<GlobalFeature>> {
        if clouds.iter().any(|c| c.is_empty()) {
            return Err(Error::EmptyCloud);
        }
        let mut tape = Tape::new(store);
        let (pts, offsets) = tape.clouds(clouds);
        let f = self.forward(&mut tape, pts, &offsets)?;
        let d = self.feature_dim();
        Ok(tape
            .value(f)
            .data()
            .chunks_exact(d)
            .map(|r| GlobalFeature(r.iter().map(|v| v.f64()).collect()))
            .collect())
    }

    pub fn encode<F: Real>(&self, store: &ParamStore<F>, cloud: &PointCloud) -> Result<GlobalFeature> {
        Ok(self.encode_batch(store, &[cloud])?.pop().unwrap())
    }

    /// Source and template features from the same weights.
    pub fn encode_siamese<F: Real>(
        &self,
        store: &ParamStore<F>,
        source: &PointCloud,
        template: &PointCloud,
    ) -> Result<(GlobalFeature, GlobalFeature)> {
        let mut v = self.encode_batch(store, &[source, template])?;
        let t = v.pop().unwrap();
        Ok((v.pop().unwrap(), t))
    }
}
