//! Fully connected pose regressors over concatenated global features.

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const PCRNET_WIDTHS: [usize; 5] = [1024, 1024, 512, 512, 256];
pub const IPCRNET_WIDTHS: [usize; 3] = [1024, 512, 256];
pub const POSE_DIM: usize = 7;
pub const DEFAULT_DROPOUT: f64 = 0.3;
/// Scale applied to the Glorot range of the output layer, so an untrained
/// head starts close to the identity pose held in the output bias.
pub const OUTPUT_GAIN: f64 = 0.1;
pub const IDENTITY_POSE: [f64; POSE_DIM] = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcVariant {
    /// Single-pass regressor, five hidden layers.
    Pcrnet,
    /// Iterative regressor, three hidden layers and dropout before the output.
    Ipcrnet,
}

impl FcVariant {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pcrnet" | "fc_pcrnet" => Some(FcVariant::Pcrnet),
            "ipcrnet" | "fc_ipcrnet" => Some(FcVariant::Ipcrnet),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FcVariant::Pcrnet => "pcrnet",
            FcVariant::Ipcrnet => "ipcrnet",
        }
    }

    pub fn hidden_widths(self) -> &'static [usize] {
        match self {
            FcVariant::Pcrnet => &PCRNET_WIDTHS,
            FcVariant::Ipcrnet => &IPCRNET_WIDTHS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FcHead {
    variant: FcVariant,
    dropout: f64,
    layers: Vec<(ParamId, ParamId)>,
}

fn names(prefix: &str, i: usize) -> (String, String) {
    (format!("{prefix}.fc{i}.weight"), format!("{prefix}.fc{i}.bias"))
}

fn dims(variant: FcVariant, in_dim: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut fan_in = in_dim;
    for &w in variant.hidden_widths().iter().chain(&[POSE_DIM]) {
        out.push((fan_in, w));
        fan_in = w;
    }
    out
}

impl FcHead {
    /// Hidden layers get Glorot weights and zero biases; the output layer gets
    /// down-scaled Glorot weights and the identity pose as bias.
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        prefix: &str,
        variant: FcVariant,
        in_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let d = dims(variant, in_dim);
        let mut layers = Vec::new();
        for (i, &(fi, fo)) in d.iter().enumerate() {
            let (wn, bn) = names(prefix, i);
            let last = i + 1 == d.len();
            let gain = if last { OUTPUT_GAIN } else { 1.0 };
            let w = store.add_glorot(wn, fi, fo, gain, rng)?;
            let bias = if last {
                Tensor::new(vec![fo], IDENTITY_POSE.iter().map(|&v| F::of(v)).collect())?
            } else {
                Tensor::zeros(vec![fo])
            };
            let b = store.add(bn, bias)?;
            layers.push((w, b));
        }
        Ok(FcHead {
            variant,
            dropout: DEFAULT_DROPOUT,
            layers,
        })
    }

    pub fn from_store<F: Real>(
        store: &ParamStore<F>,
        prefix: &str,
        variant: FcVariant,
        in_dim: usize,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        for (i, (fi, fo)) in dims(variant, in_dim).into_iter().enumerate() {
            let (wn, bn) = names(prefix, i);
            let get = |n: &str, shape: &[usize]| -> Result<ParamId> {
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
            layers.push((get(&wn, &[fi, fo])?, get(&bn, &[fo])?));
        }
        Ok(FcHead {
            variant,
            dropout: DEFAULT_DROPOUT,
            layers,
        })
    }

    pub fn variant(&self) -> FcVariant {
        self.variant
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn set_dropout(&mut self, rate: f64) -> Result<()> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        self.dropout = rate;
        Ok(())
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }

    /// Layer widths including the output, for structural checks.
    pub fn widths<F: Real>(&self, store: &ParamStore<F>) -> Vec<usize> {
        self.layers.iter().map(|&(w, _)| store.value(w).shape()[1]).collect()
    }

    /// `x` holds one concatenated `[source | template]` feature per row.
    /// Returns raw `B x 7` poses. Dropout is active only for the iterative
    /// variant with `train` set.
    pub fn forward<F: Real>(&self, tape: &mut Tape<'_, F>, x: Var, train: bool, seed: u64) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            if i == last && self.variant == FcVariant::Ipcrnet {
                h = tape.dropout(h, self.dropout, seed, train)?;
            }
            let (wv, bv) = (tape.param(w), tape.param(b));
            h = tape.linear(h, wv, bv)?;
            if i != last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Raw pose for one feature pair, without dropout.
    pub fn predict<F: Real>(&self, store: &ParamStore<F>, fs: &[f64], ft: &[f64]) -> Result<[f64; POSE_DIM]> {
        let mut tape = Tape::new(store);
        let data: Vec<F> = fs.iter().chain(ft).map(|&v| F::of(v)).collect();
        let x = tape.constant(Tensor::matrix(1, fs.len() + ft.len(), data)?);
        let y = self.forward(&mut tape, x, false, 0)?;
        let out = tape.value(y).data();
        Ok(std::array::from_fn(|i| out[i].f64()))
    }
}
