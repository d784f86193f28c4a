//! Reverse-mode tape over a fixed primitive set.
//!
//! Nodes are appended in evaluation order, so inputs always precede the nodes
//! that consume them and the backward pass is a single reverse sweep.
//! Parameters are referenced from a borrowed [`ParamStore`] rather than
//! copied onto the tape.
//!
//! Point-set primitives take row offsets describing a batch of clouds stacked
//! into one `rows x 3` tensor: cloud `b` occupies rows `offsets[b]..offsets[b + 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::real::gemm;
use crate::autodiff::{Gradients, ParamId, ParamStore, Real, Tensor};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::losses::{check_emd_sizes, chamfer_match, emd_match, frobenius_from_probe};
use crate::se3::{rotation_matrix, Vec3};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Leaf,
    Param(ParamId),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu {
        x: Var,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    LinearMaxPool {
        x: Var,
        w: Var,
        b: Var,
        relu: bool,
        argmax: Vec<usize>,
    },
    Concat {
        a: Var,
        b: Var,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<F>,
    },
    QuatNormalize {
        x: Var,
    },
    TransformPoints {
        pose: Var,
        cloud: Var,
        offsets: Vec<usize>,
    },
    Chamfer {
        x: Var,
        y: Var,
        x_offsets: Vec<usize>,
        y_offsets: Vec<usize>,
        x_to_y: Vec<usize>,
        y_to_x: Vec<usize>,
    },
    Emd {
        x: Var,
        y: Var,
        offsets: Vec<usize>,
        matching: Vec<usize>,
    },
    FrobeniusProbe {
        p: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        s: F,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
}

struct Node<F> {
    /// `None` for parameter nodes, whose value lives in the store.
    value: Option<Tensor<F>>,
    op: Op<F>,
    requires_grad: bool,
}

/// Records primitive applications for one forward pass.
pub struct Tape<'p, F: Real> {
    params: &'p ParamStore<F>,
    nodes: Vec<Node<F>>,
    param_vars: Vec<Option<Var>>,
    branch_hash: Option<u64>,
}

const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn mix(h: u64, v: u64) -> u64 {
    (h ^ v).wrapping_mul(FNV_PRIME)
}

fn mismatch(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

fn check_offsets(op: &'static str, offsets: &[usize], rows: usize) -> Result<()> {
    if offsets.len() < 2 || offsets[0] != 0 || *offsets.last().unwrap() != rows {
        return Err(mismatch(
            op,
            format!("offsets {offsets:?} do not cover {rows} rows"),
        ));
    }
    if offsets.windows(2).any(|w| w[1] <= w[0]) {
        return Err(mismatch(op, "every segment needs at least one row".into()));
    }
    Ok(())
}

fn to_points<F: Real>(data: &[F]) -> Vec<Vec3> {
    data.chunks_exact(3)
        .map(|c| Vec3::new(c[0].f64(), c[1].f64(), c[2].f64()))
        .collect()
}

/// Gradient of `sum(G . R(q / |q|))` with respect to the raw quaternion `q`.
pub(crate) fn rotation_vjp(q: [f64; 4], g: &[[f64; 3]; 3]) -> [f64; 4] {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / norm);
    let du = [
        2.0 * (-z * g[0][1] + y * g[0][2] + z * g[1][0] - x * g[1][2] - y * g[2][0] + x * g[2][1]),
        2.0 * (y * g[0][1] + z * g[0][2] + y * g[1][0] - 2.0 * x * g[1][1] - w * g[1][2]
            + z * g[2][0]
            + w * g[2][1]
            - 2.0 * x * g[2][2]),
        2.0 * (-2.0 * y * g[0][0] + x * g[0][1] + w * g[0][2] + x * g[1][0] + z * g[1][2]
            - w * g[2][0]
            + z * g[2][1]
            - 2.0 * y * g[2][2]),
        2.0 * (-2.0 * z * g[0][0] - w * g[0][1] + x * g[0][2] + w * g[1][0] - 2.0 * z * g[1][1]
            + y * g[1][2]
            + x * g[2][0]
            + y * g[2][1]),
    ];
    let u = [w, x, y, z];
    let dot: f64 = (0..4).map(|i| u[i] * du[i]).sum();
    std::array::from_fn(|i| (du[i] - u[i] * dot) / norm)
}

impl<'p, F: Real> Tape<'p, F> {
    pub fn new(params: &'p ParamStore<F>) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            branch_hash: None,
        }
    }

    /// Enables hashing of every discrete branch decision (ReLU signs, pooling
    /// winners, nearest-neighbor and matching choices). Two forward passes
    /// with equal signatures evaluate the same smooth piece of the function.
    pub fn track_branches(&mut self) {
        self.branch_hash = Some(0xcbf2_9ce4_8422_2325);
    }

    pub fn branch_signature(&self) -> Option<u64> {
        self.branch_hash
    }

    pub fn params(&self) -> &'p ParamStore<F> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn record_branch(&mut self, words: impl IntoIterator<Item = u64>) {
        if let Some(h) = self.branch_hash.as_mut() {
            for w in words {
                *h = mix(*h, w);
            }
        }
    }

    fn record_bits(&mut self, bits: impl IntoIterator<Item = bool>) {
        if self.branch_hash.is_none() {
            return;
        }
        let mut words = Vec::new();
        let mut acc = 0u64;
        let mut n = 0;
        for b in bits {
            acc = (acc << 1) | b as u64;
            n += 1;
            if n == 64 {
                words.push(acc);
                acc = 0;
                n = 0;
            }
        }
        words.push(acc);
        words.push(n as u64);
        self.record_branch(words);
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.value(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Stacks clouds into one constant `rows x 3` tensor; returns row offsets.
    pub fn clouds(&mut self, clouds: &[&PointCloud]) -> (Var, Vec<usize>) {
        let mut offsets = vec![0];
        let mut data = Vec::new();
        for c in clouds {
            data.extend(c.points().iter().flat_map(|p| [F::of(p.x), F::of(p.y), F::of(p.z)]));
            offsets.push(offsets.last().unwrap() + c.len());
        }
        let rows = *offsets.last().unwrap();
        let v = self.constant(Tensor::matrix(rows, 3, data).unwrap());
        (v, offsets)
    }

    /// Node for a trainable parameter. Repeated calls return the same node so
    /// gradients from every use accumulate in one place.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.index()] = Some(v);
        v
    }

    /// `x W + b` for `x: rows x in`, `W: in x out`, `b: out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (rows, cin) = self.value(x).rows_cols();
        let (win, wout) = self.value(w).rows_cols();
        let blen = self.value(b).len();
        if cin != win || blen != wout {
            return Err(mismatch(
                "linear",
                format!("x is {rows}x{cin}, W is {win}x{wout}, b has {blen}"),
            ));
        }
        let bias = self.value(b).data();
        let mut out = Vec::with_capacity(rows * wout);
        for _ in 0..rows {
            out.extend_from_slice(bias);
        }
        gemm::nn(rows, cin, wout, self.value(x).data(), self.value(w).data(), &mut out, F::one());
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Tensor::matrix(rows, wout, out)?, Op::Linear { x, w, b }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let shape = t.shape().to_vec();
        let out: Vec<F> = t.data().iter().map(|&v| if v > F::zero() { v } else { F::zero() }).collect();
        if self.branch_hash.is_some() {
            let bits: Vec<bool> = self.value(x).data().iter().map(|&v| v > F::zero()).collect();
            self.record_bits(bits);
        }
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out).unwrap(), Op::Relu { x }, rg)
    }

    /// Coordinatewise max over the rows of each segment: `rows x D -> B x D`.
    /// Ties go to the lowest row.
    pub fn max_pool_points(&mut self, x: Var, offsets: &[usize]) -> Result<Var> {
        let (rows, d) = self.value(x).rows_cols();
        check_offsets("max_pool_points", offsets, rows)?;
        let data = self.value(x).data();
        let nseg = offsets.len() - 1;
        let mut out = vec![F::zero(); nseg * d];
        let mut argmax = vec![0usize; nseg * d];
        for s in 0..nseg {
            let first = offsets[s];
            out[s * d..(s + 1) * d].copy_from_slice(&data[first * d..(first + 1) * d]);
            argmax[s * d..(s + 1) * d].iter_mut().for_each(|a| *a = first);
            for r in first + 1..offsets[s + 1] {
                let row = &data[r * d..(r + 1) * d];
                for c in 0..d {
                    if row[c] > out[s * d + c] {
                        out[s * d + c] = row[c];
                        argmax[s * d + c] = r;
                    }
                }
            }
        }
        self.record_branch(argmax.iter().map(|&a| a as u64));
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(nseg, d, out)?, Op::MaxPool { x, argmax }, rg))
    }

    /// Fused `max_pool_points(relu(linear(x, W, b)))` (ReLU optional). Avoids
    /// storing the wide pre-pooling activation; results equal the unfused
    /// composition exactly.
    pub fn linear_max_pool(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        offsets: &[usize],
        relu: bool,
    ) -> Result<Var> {
        const CHUNK: usize = 256;
        let (rows, cin) = self.value(x).rows_cols();
        let (win, d) = self.value(w).rows_cols();
        let blen = self.value(b).len();
        if cin != win || blen != d {
            return Err(mismatch(
                "linear_max_pool",
                format!("x is {rows}x{cin}, W is {win}x{d}, b has {blen}"),
            ));
        }
        check_offsets("linear_max_pool", offsets, rows)?;
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let bias = self.value(b).data();
        let nseg = offsets.len() - 1;
        let mut out = vec![F::zero(); nseg * d];
        let mut argmax = vec![usize::MAX; nseg * d];
        let mut buf = vec![F::zero(); CHUNK.min(rows) * d];
        let mut seg = 0;
        let mut start = 0;
        while start < rows {
            let n = CHUNK.min(rows - start);
            let chunk = &mut buf[..n * d];
            for r in 0..n {
                chunk[r * d..(r + 1) * d].copy_from_slice(bias);
            }
            gemm::nn(n, cin, d, &xs[start * cin..(start + n) * cin], ws, chunk, F::one());
            for r in 0..n {
                let row_idx = start + r;
                while row_idx >= offsets[seg + 1] {
                    seg += 1;
                }
                let row = &chunk[r * d..(r + 1) * d];
                let best = &mut out[seg * d..(seg + 1) * d];
                let arg = &mut argmax[seg * d..(seg + 1) * d];
                for c in 0..d {
                    let v = if relu && !(row[c] > F::zero()) { F::zero() } else { row[c] };
                    if arg[c] == usize::MAX || v > best[c] {
                        best[c] = v;
                        arg[c] = row_idx;
                    }
                }
            }
            start += n;
        }
        if self.branch_hash.is_some() {
            let words: Vec<u64> = argmax.iter().map(|&a| a as u64).collect();
            self.record_branch(words);
            let bits: Vec<bool> = out.iter().map(|&v| v > F::zero()).collect();
            self.record_bits(bits);
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(
            Tensor::matrix(nseg, d, out)?,
            Op::LinearMaxPool { x, w, b, relu, argmax },
            rg,
        ))
    }

    /// Column-wise concatenation of two matrices with equal row counts.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.value(a).rows_cols();
        let (rb, cb) = self.value(b).rows_cols();
        if ra != rb {
            return Err(mismatch("concat", format!("{ra}x{ca} vs {rb}x{cb}")));
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            out.extend_from_slice(&da[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&db[r * cb..(r + 1) * cb]);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(ra, ca + cb, out)?, Op::Concat { a, b }, rg))
    }

    /// `out[i] = x[idx[i]]` row-wise.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (rows, c) = self.value(x).rows_cols();
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(mismatch("gather_rows", format!("row {bad} of {rows}")));
        }
        let d = self.value(x).data();
        let out: Vec<F> = idx.iter().flat_map(|&i| d[i * c..(i + 1) * c].iter().copied()).collect();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::matrix(idx.len(), c, out)?,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Inverted dropout: in training, zeroes each entry with probability
    /// `rate` and scales survivors by `1 / (1 - rate)`. Outside training this
    /// returns `x` itself.
    pub fn dropout(&mut self, x: Var, rate: f64, seed: u64, train: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let t = self.value(x);
        let shape = t.shape().to_vec();
        let keep = F::of(1.0 / (1.0 - rate));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<F> = (0..t.len())
            .map(|_| if rng.random::<f64>() < rate { F::zero() } else { keep })
            .collect();
        let out: Vec<F> = t.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Dropout { x, mask }, rg))
    }

    /// Normalizes the leading quaternion (first four columns) of every row.
    pub fn quat_normalize(&mut self, x: Var) -> Result<Var> {
        let (rows, c) = self.value(x).rows_cols();
        if c < 4 {
            return Err(mismatch("quat_normalize", format!("rows have {c} columns, need >= 4")));
        }
        let mut out = self.value(x).data().to_vec();
        for r in 0..rows {
            let q = &mut out[r * c..r * c + 4];
            let n = q.iter().map(|v| v.f64().powi(2)).sum::<f64>().sqrt();
            if !(n > 1e-12) {
                return Err(Error::DegeneratePose(format!("row {r} has quaternion norm {n:e}")));
            }
            q.iter_mut().for_each(|v| *v = F::of(v.f64() / n));
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(rows, c, out)?, Op::QuatNormalize { x }, rg))
    }

    /// Applies pose row `b` (`qw qx qy qz tx ty tz`, quaternion normalized
    /// internally) to cloud segment `b`. Gradients reach the pose; they reach
    /// the cloud only when the cloud itself depends on trainable values.
    pub fn transform_points(&mut self, pose: Var, cloud: Var, offsets: &[usize]) -> Result<Var> {
        let (np, pc) = self.value(pose).rows_cols();
        let (rows, cc) = self.value(cloud).rows_cols();
        if pc != 7 || cc != 3 || offsets.len() != np + 1 {
            return Err(mismatch(
                "transform_points",
                format!("pose is {np}x{pc}, cloud is {rows}x{cc}, {} offsets", offsets.len()),
            ));
        }
        check_offsets("transform_points", offsets, rows)?;
        let pd = self.value(pose).data();
        let cd = self.value(cloud).data();
        let mut out = vec![F::zero(); rows * 3];
        for s in 0..np {
            let p: Vec<f64> = pd[s * 7..s * 7 + 7].iter().map(|v| v.f64()).collect();
            let norm = p[..4].iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 1e-12) || p.iter().any(|v| !v.is_finite()) {
                return Err(Error::DegeneratePose(format!(
                    "pose row {s} has quaternion norm {norm:e}"
                )));
            }
            let r = rotation_matrix([p[0] / norm, p[1] / norm, p[2] / norm, p[3] / norm]);
            let t = Vec3::new(p[4], p[5], p[6]);
            for row in offsets[s]..offsets[s + 1] {
                let v = Vec3::new(cd[row * 3].f64(), cd[row * 3 + 1].f64(), cd[row * 3 + 2].f64());
                let o = r * v + t;
                for k in 0..3 {
                    out[row * 3 + k] = F::of(o[k]);
                }
            }
        }
        let rg = self.rg(pose) || self.rg(cloud);
        Ok(self.push(
            Tensor::matrix(rows, 3, out)?,
            Op::TransformPoints {
                pose,
                cloud,
                offsets: offsets.to_vec(),
            },
            rg,
        ))
    }

    /// Per-segment Chamfer distance (mean squared nearest-neighbor distance in
    /// both directions). Returns a length-`B` vector.
    pub fn chamfer(
        &mut self,
        x: Var,
        x_offsets: &[usize],
        y: Var,
        y_offsets: &[usize],
    ) -> Result<Var> {
        let (xr, xc) = self.value(x).rows_cols();
        let (yr, yc) = self.value(y).rows_cols();
        if xc != 3 || yc != 3 || x_offsets.len() != y_offsets.len() {
            return Err(mismatch("chamfer", format!("x {xr}x{xc}, y {yr}x{yc}")));
        }
        check_offsets("chamfer", x_offsets, xr)?;
        check_offsets("chamfer", y_offsets, yr)?;
        let xp = to_points(self.value(x).data());
        let yp = to_points(self.value(y).data());
        let nseg = x_offsets.len() - 1;
        let mut vals = Vec::with_capacity(nseg);
        let mut x_to_y = Vec::with_capacity(xr);
        let mut y_to_x = Vec::with_capacity(yr);
        for s in 0..nseg {
            let (xa, xb) = (x_offsets[s], x_offsets[s + 1]);
            let (ya, yb) = (y_offsets[s], y_offsets[s + 1]);
            let m = chamfer_match(&xp[xa..xb], &yp[ya..yb]);
            vals.push(F::of(m.value));
            x_to_y.extend(m.x_to_y.iter().map(|j| j + ya));
            y_to_x.extend(m.y_to_x.iter().map(|i| i + xa));
        }
        self.record_branch(x_to_y.iter().chain(&y_to_x).map(|&i| i as u64));
        let rg = self.rg(x) || self.rg(y);
        Ok(self.push(
            Tensor::new(vec![nseg], vals)?,
            Op::Chamfer {
                x,
                y,
                x_offsets: x_offsets.to_vec(),
                y_offsets: y_offsets.to_vec(),
                x_to_y,
                y_to_x,
            },
            rg,
        ))
    }

    /// Per-segment EMD under squared distance with an exact optimal matching.
    /// The matching is treated as locally constant for the gradient.
    pub fn emd(&mut self, x: Var, y: Var, offsets: &[usize], cap: usize) -> Result<Var> {
        let (xr, xc) = self.value(x).rows_cols();
        let (yr, yc) = self.value(y).rows_cols();
        if xc != 3 || yc != 3 {
            return Err(mismatch("emd", format!("x {xr}x{xc}, y {yr}x{yc}")));
        }
        check_emd_sizes(xr, yr, usize::MAX)?;
        check_offsets("emd", offsets, xr)?;
        let xp = to_points(self.value(x).data());
        let yp = to_points(self.value(y).data());
        let nseg = offsets.len() - 1;
        let mut vals = Vec::with_capacity(nseg);
        let mut matching = Vec::with_capacity(xr);
        for s in 0..nseg {
            let (a, b) = (offsets[s], offsets[s + 1]);
            check_emd_sizes(b - a, b - a, cap)?;
            let (v, m) = emd_match(&xp[a..b], &yp[a..b]);
            vals.push(F::of(v));
            matching.extend(m.iter().map(|j| j + a));
        }
        self.record_branch(matching.iter().map(|&i| i as u64));
        let rg = self.rg(x) || self.rg(y);
        Ok(self.push(
            Tensor::new(vec![nseg], vals)?,
            Op::Emd {
                x,
                y,
                offsets: offsets.to_vec(),
                matching,
            },
            rg,
        ))
    }

    /// Frobenius transform loss from transformed probe points (four rows per
    /// pair, see [`frobenius_probe`](crate::losses::frobenius_probe)).
    pub fn frobenius_probe(&mut self, p: Var) -> Result<Var> {
        let (rows, c) = self.value(p).rows_cols();
        if c != 3 || rows % 4 != 0 || rows == 0 {
            return Err(mismatch("frobenius_probe", format!("probe is {rows}x{c}")));
        }
        let pts = to_points(self.value(p).data());
        let vals: Vec<F> = pts.chunks_exact(4).map(|q| F::of(frobenius_from_probe(q))).collect();
        let rg = self.rg(p);
        Ok(self.push(Tensor::new(vec![rows / 4], vals)?, Op::FrobeniusProbe { p }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return Err(mismatch("add", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let out: Vec<F> = ta.data().iter().zip(tb.data()).map(|(&u, &v)| u + v).collect();
        let shape = ta.shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Add { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let s = F::of(s);
        let t = self.value(x);
        let out: Vec<F> = t.data().iter().map(|&v| v * s).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out).unwrap(), Op::Scale { x, s }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v: F = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(v), Op::Sum { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = F::of(t.len() as f64);
        let v: F = t.data().iter().copied().sum::<F>() / n;
        let rg = self.rg(x);
        self.push(Tensor::scalar(v), Op::Mean { x }, rg)
    }

    /// Reverse sweep from a scalar `loss`. Returns a gradient for every
    /// parameter in the store, zero for parameters the loss does not reach.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(mismatch(
                "backward",
                format!("loss must be a scalar, got shape {:?}", lt.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        let mut out = Gradients::default();
        let mut reached = vec![false; self.params.len()];

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backward_node(node, i, &g, &mut grads, &mut out, &mut reached);
        }
        for (id, p) in self.params.iter() {
            if !reached[id.index()] {
                out.push(id, vec![F::zero(); p.value.len()]);
            }
        }
        out.sort();
        Ok(out)
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<F>>], v: Var) -> Option<&'g mut Vec<F>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![F::zero(); len]))
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_node(
        &self,
        node: &Node<F>,
        index: usize,
        g: &[F],
        grads: &mut [Option<Vec<F>>],
        out: &mut Gradients<F>,
        reached: &mut [bool],
    ) {
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                reached[id.index()] = true;
                out.push(*id, g.to_vec());
            }
            Op::Linear { x, w, b } => {
                let (rows, cin) = self.value(*x).rows_cols();
                let wout = self.value(*w).rows_cols().1;
                if let Some(dx) = self.slot(grads, *x) {
                    gemm::nt(rows, wout, cin, g, self.value(*w).data(), dx, F::one());
                }
                if let Some(dw) = self.slot(grads, *w) {
                    gemm::tn(cin, rows, wout, self.value(*x).data(), g, dw, F::one());
                }
                if let Some(db) = self.slot(grads, *b) {
                    for r in 0..rows {
                        for (d, &v) in db.iter_mut().zip(&g[r * wout..(r + 1) * wout]) {
                            *d += v;
                        }
                    }
                }
            }
            Op::Relu { x } => {
                let y = node.value.as_ref().unwrap().data();
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, &gv), &yv) in dx.iter_mut().zip(g).zip(y) {
                        if yv > F::zero() {
                            *d += gv;
                        }
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                let d = self.value(*x).rows_cols().1;
                if let Some(dx) = self.slot(grads, *x) {
                    for (k, &row) in argmax.iter().enumerate() {
                        dx[row * d + k % d] += g[k];
                    }
                }
            }
            Op::LinearMaxPool { x, w, b, relu, argmax } => {
                let y = node.value.as_ref().unwrap().data();
                let cin = self.value(*x).rows_cols().1;
                let d = self.value(*w).rows_cols().1;
                let xs = self.value(*x).data();
                let ws = self.value(*w).data();
                let active = |k: usize| !*relu || y[k] > F::zero();
                if let Some(dw) = self.slot(grads, *w) {
                    for (k, &row) in argmax.iter().enumerate() {
                        if active(k) {
                            let c = k % d;
                            let xr = &xs[row * cin..(row + 1) * cin];
                            for i in 0..cin {
                                dw[i * d + c] += xr[i] * g[k];
                            }
                        }
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for k in 0..argmax.len() {
                        if active(k) {
                            db[k % d] += g[k];
                        }
                    }
                }
                if let Some(dx) = self.slot(grads, *x) {
                    for (k, &row) in argmax.iter().enumerate() {
                        if active(k) {
                            let c = k % d;
                            let dr = &mut dx[row * cin..(row + 1) * cin];
                            for i in 0..cin {
                                dr[i] += ws[i * d + c] * g[k];
                            }
                        }
                    }
                }
            }
            Op::Concat { a, b } => {
                let (rows, ca) = self.value(*a).rows_cols();
                let cb = self.value(*b).rows_cols().1;
                let w = ca + cb;
                if let Some(da) = self.slot(grads, *a) {
                    for r in 0..rows {
                        for c in 0..ca {
                            da[r * ca + c] += g[r * w + c];
                        }
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for r in 0..rows {
                        for c in 0..cb {
                            db[r * cb + c] += g[r * w + ca + c];
                        }
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                let c = self.value(*x).rows_cols().1;
                if let Some(dx) = self.slot(grads, *x) {
                    for (k, &row) in idx.iter().enumerate() {
                        for j in 0..c {
                            dx[row * c + j] += g[k * c + j];
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, &gv), &m) in dx.iter_mut().zip(g).zip(mask) {
                        *d += gv * m;
                    }
                }
            }
            Op::QuatNormalize { x } => {
                let (rows, c) = self.value(*x).rows_cols();
                let xs = self.value(*x).data();
                if let Some(dx) = self.slot(grads, *x) {
                    for r in 0..rows {
                        let q: Vec<f64> = xs[r * c..r * c + 4].iter().map(|v| v.f64()).collect();
                        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let u: Vec<f64> = q.iter().map(|v| v / n).collect();
                        let gq: Vec<f64> = g[r * c..r * c + 4].iter().map(|v| v.f64()).collect();
                        let dot: f64 = (0..4).map(|i| u[i] * gq[i]).sum();
                        for i in 0..4 {
                            dx[r * c + i] += F::of((gq[i] - u[i] * dot) / n);
                        }
                        for i in 4..c {
                            dx[r * c + i] += g[r * c + i];
                        }
                    }
                }
            }
            Op::TransformPoints { pose, cloud, offsets } => {
                let pd = self.value(*pose).data();
                let cd = self.value(*cloud).data();
                let np = offsets.len() - 1;
                let mut dpose = vec![0.0f64; np * 7];
                let mut dcloud = if self.rg(*cloud) {
                    Some(vec![F::zero(); cd.len()])
                } else {
                    None
                };
                for s in 0..np {
                    let q: [f64; 4] = std::array::from_fn(|k| pd[s * 7 + k].f64());
                    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let r = rotation_matrix(q.map(|v| v / norm));
                    let mut gr = [[0.0f64; 3]; 3];
                    let mut gt = [0.0f64; 3];
                    for row in offsets[s]..offsets[s + 1] {
                        let gv: [f64; 3] = std::array::from_fn(|k| g[row * 3 + k].f64());
                        let pv: [f64; 3] = std::array::from_fn(|k| cd[row * 3 + k].f64());
                        for a in 0..3 {
                            gt[a] += gv[a];
                            for bb in 0..3 {
                                gr[a][bb] += gv[a] * pv[bb];
                            }
                        }
                        if let Some(dc) = dcloud.as_mut() {
                            for bb in 0..3 {
                                let v: f64 = (0..3).map(|a| r[(a, bb)] * gv[a]).sum();
                                dc[row * 3 + bb] += F::of(v);
                            }
                        }
                    }
                    let dq = rotation_vjp(q, &gr);
                    dpose[s * 7..s * 7 + 4].copy_from_slice(&dq);
                    dpose[s * 7 + 4..s * 7 + 7].copy_from_slice(&gt);
                }
                if let Some(dp) = self.slot(grads, *pose) {
                    for (d, v) in dp.iter_mut().zip(&dpose) {
                        *d += F::of(*v);
                    }
                }
                if let (Some(dc), Some(slot)) = (dcloud, self.slot(grads, *cloud)) {
                    for (d, v) in slot.iter_mut().zip(dc) {
                        *d += v;
                    }
                }
            }
            Op::Chamfer { x, y, x_offsets, y_offsets, x_to_y, y_to_x } => {
                let xs = self.value(*x).data();
                let ys = self.value(*y).data();
                let nseg = x_offsets.len() - 1;
                let seg_of = |offs: &[usize]| {
                    let mut v = Vec::new();
                    for s in 0..nseg {
                        v.extend(std::iter::repeat_n(s, offs[s + 1] - offs[s]));
                    }
                    v
                };
                let xseg = seg_of(x_offsets);
                let yseg = seg_of(y_offsets);
                let nx = |s: usize| (x_offsets[s + 1] - x_offsets[s]) as f64;
                let ny = |s: usize| (y_offsets[s + 1] - y_offsets[s]) as f64;
                let mut dx = vec![0.0f64; xs.len()];
                let mut dy = vec![0.0f64; ys.len()];
                for (i, &j) in x_to_y.iter().enumerate() {
                    let s = xseg[i];
                    let c = 2.0 * g[s].f64() / nx(s);
                    for k in 0..3 {
                        let diff = xs[i * 3 + k].f64() - ys[j * 3 + k].f64();
                        dx[i * 3 + k] += c * diff;
                        dy[j * 3 + k] -= c * diff;
                    }
                }
                for (j, &i) in y_to_x.iter().enumerate() {
                    let s = yseg[j];
                    let c = 2.0 * g[s].f64() / ny(s);
                    for k in 0..3 {
                        let diff = ys[j * 3 + k].f64() - xs[i * 3 + k].f64();
                        dy[j * 3 + k] += c * diff;
                        dx[i * 3 + k] -= c * diff;
                    }
                }
                if let Some(slot) = self.slot(grads, *x) {
                    slot.iter_mut().zip(&dx).for_each(|(d, v)| *d += F::of(*v));
                }
                if let Some(slot) = self.slot(grads, *y) {
                    slot.iter_mut().zip(&dy).for_each(|(d, v)| *d += F::of(*v));
                }
            }
            Op::Emd { x, y, offsets, matching } => {
                let xs = self.value(*x).data();
                let ys = self.value(*y).data();
                let mut dx = vec![0.0f64; xs.len()];
                let mut dy = vec![0.0f64; ys.len()];
                for s in 0..offsets.len() - 1 {
                    let n = (offsets[s + 1] - offsets[s]) as f64;
                    let c = 2.0 * g[s].f64() / n;
                    for i in offsets[s]..offsets[s + 1] {
                        let j = matching[i];
                        for k in 0..3 {
                            let diff = xs[i * 3 + k].f64() - ys[j * 3 + k].f64();
                            dx[i * 3 + k] += c * diff;
                            dy[j * 3 + k] -= c * diff;
                        }
                    }
                }
                if let Some(slot) = self.slot(grads, *x) {
                    slot.iter_mut().zip(&dx).for_each(|(d, v)| *d += F::of(*v));
                }
                if let Some(slot) = self.slot(grads, *y) {
                    slot.iter_mut().zip(&dy).for_each(|(d, v)| *d += F::of(*v));
                }
            }
            Op::FrobeniusProbe { p } => {
                let ps = to_points(self.value(*p).data());
                if let Some(dp) = self.slot(grads, *p) {
                    let axes = [Vec3::x(), Vec3::y(), Vec3::z()];
                    for (s, q) in ps.chunks_exact(4).enumerate() {
                        let gs = g[s].f64();
                        let mut d0 = q[0] * 2.0;
                        for j in 0..3 {
                            let r = (q[j + 1] - q[0] - axes[j]) * 2.0;
                            d0 -= r;
                            for k in 0..3 {
                                dp[(s * 4 + j + 1) * 3 + k] += F::of(gs * r[k]);
                            }
                        }
                        for k in 0..3 {
                            dp[s * 12 + k] += F::of(gs * d0[k]);
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if let Some(d) = self.slot(grads, v) {
                        d.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv);
                    }
                }
            }
            Op::Scale { x, s } => {
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv * *s);
                }
            }
            Op::Sum { x } => {
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean { x } => {
                let n = F::of(self.value(*x).len() as f64);
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().for_each(|d| *d += g[0] / n);
                }
            }
        }
        let _ = index;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{grad_check, GradCheckOptions};
    use crate::se3::euler_to_transform;
    use proptest::prelude::*;
    use rand::Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn relu_backward() {
        let mut store = ParamStore::<f64>::new();
        let p = store.add("x", Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap()).unwrap();
        let mut t = Tape::new(&store);
        let x = t.param(p);
        let r = t.relu(x);
        let s = t.sum(r);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(p).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn max_pool_forward_and_routing() {
        let mut store = ParamStore::<f64>::new();
        let p = store
            .add("x", Tensor::matrix(2, 2, vec![1.0, 5.0, 3.0, 2.0]).unwrap())
            .unwrap();
        let mut t = Tape::new(&store);
        let x = t.param(p);
        let m = t.max_pool_points(x, &[0, 2]).unwrap();
        assert_eq!(t.value(m).data(), &[3.0, 5.0]);
        // weight the two outputs differently to see where each one lands
        let prod = {
            let wm = t.constant(Tensor::matrix(2, 1, vec![10.0, 20.0]).unwrap());
            let zero = t.constant(Tensor::new(vec![1], vec![0.0]).unwrap());
            t.linear(m, wm, zero).unwrap()
        };
        let s = t.sum(prod);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(p).unwrap(), &[0.0, 20.0, 10.0, 0.0]);
    }

    #[test]
    fn max_pool_ties_lowest_row() {
        let store = ParamStore::<f64>::new();
        let mut t = Tape::new(&store);
        let x = t.constant(Tensor::matrix(3, 1, vec![2.0, 2.0, 1.0]).unwrap());
        let _ = t.max_pool_points(x, &[0, 3]).unwrap();
        match &t.nodes[1].op {
            Op::MaxPool { argmax, .. } => assert_eq!(argmax, &[0]),
            _ => unreachable!(),
        }
    }

    #[test]
    fn linear_sum_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let w = store.add_glorot("w", 3, 2, 1.0, &mut rng).unwrap();
        let b = store.add("b", Tensor::zeros(vec![2])).unwrap();
        let unused = store.add("unused", Tensor::zeros(vec![4])).unwrap();
        let x = rand_vec(&mut rng, 3);
        let mut t = Tape::new(&store);
        let xv = t.constant(Tensor::matrix(1, 3, x.clone()).unwrap());
        let (wv, bv) = (t.param(w), t.param(b));
        let y = t.linear(xv, wv, bv).unwrap();
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        // d sum(xW)/dW[i][j] = x[i]
        let expect: Vec<f64> = x.iter().flat_map(|&v| [v, v]).collect();
        assert_eq!(g.get(w).unwrap(), expect.as_slice());
        assert_eq!(g.get(b).unwrap(), &[1.0, 1.0]);
        assert_eq!(g.get(unused).unwrap(), &[0.0; 4]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let store = ParamStore::<f64>::new();
        let mut t = Tape::new(&store);
        let x = t.constant(Tensor::zeros(vec![3]));
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn shape_errors_name_primitive() {
        let store = ParamStore::<f64>::new();
        let mut t = Tape::new(&store);
        let x = t.constant(Tensor::zeros(vec![2, 3]));
        let w = t.constant(Tensor::zeros(vec![4, 2]));
        let b = t.constant(Tensor::zeros(vec![2]));
        let e = t.linear(x, w, b).unwrap_err().to_string();
        assert!(e.contains("linear") && e.contains("2x3"), "{e}");
        let y = t.constant(Tensor::zeros(vec![3, 3]));
        assert!(t.concat(x, y).unwrap_err().to_string().contains("concat"));
    }

    #[test]
    fn dropout_eval_is_identity() {
        let store = ParamStore::<f64>::new();
        let mut t = Tape::new(&store);
        let x = t.constant(Tensor::zeros(vec![5]));
        assert_eq!(t.dropout(x, 0.3, 7, false).unwrap(), x);
    }

    #[test]
    fn dropout_train_scales_survivors() {
        let store = ParamStore::<f64>::new();
        let mut t = Tape::new(&store);
        let x = t.constant(Tensor::new(vec![10_000], vec![1.0; 10_000]).unwrap());
        let d = t.dropout(x, 0.3, 7, true).unwrap();
        let vals = t.value(d).data();
        assert!(vals.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-12));
        let kept = vals.iter().filter(|&&v| v != 0.0).count() as f64 / 10_000.0;
        // binomial sd ~ 0.0046
        assert!((kept - 0.7).abs() < 0.02, "{kept}");
    }

    #[test]
    fn fused_matches_unfused_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::<f64>::new();
        let w = store.add_glorot("w", 4, 6, 1.0, &mut rng).unwrap();
        let b = store.add("b", Tensor::new(vec![6], rand_vec(&mut rng, 6)).unwrap()).unwrap();
        let rows = 600;
        let x = rand_vec(&mut rng, rows * 4);
        let offsets = [0, 100, 350, 600];
        for relu in [true, false] {
            let mut t = Tape::new(&store);
            let xc = t.constant(Tensor::matrix(rows, 4, x.clone()).unwrap());
            let (wv, bv) = (t.param(w), t.param(b));
            let fused = t.linear_max_pool(xc, wv, bv, &offsets, relu).unwrap();
            let lin = t.linear(xc, wv, bv).unwrap();
            let act = if relu { t.relu(lin) } else { lin };
            let pooled = t.max_pool_points(act, &offsets).unwrap();
            assert_eq!(t.value(fused), t.value(pooled));

            let sf = t.sum(fused);
            let gf = t.backward(sf).unwrap();
            let sp = t.sum(pooled);
            let gp = t.backward(sp).unwrap();
            for id in [w, b] {
                let (a, c) = (gf.get(id).unwrap(), gp.get(id).unwrap());
                for (u, v) in a.iter().zip(c) {
                    assert!((u - v).abs() <= 1e-12 * (1.0 + v.abs()));
                }
            }
        }
    }

    #[test]
    fn transform_points_matches_transform_apply() {
        let tr = euler_to_transform([10.0, -20.0, 30.0], [0.1, 0.2, -0.3]);
        let q = tr.rotation.quaternion();
        let pose: Vec<f64> = vec![
            2.0 * q[0], 2.0 * q[1], 2.0 * q[2], 2.0 * q[3],
            tr.translation.x, tr.translation.y, tr.translation.z,
        ];
        let cloud = PointCloud::from_flat(&[1.0, 2.0, 3.0, -1.0, 0.5, 0.0]).unwrap();
        let store = ParamStore::<f64>::new();
        let mut t = Tape::new(&store);
        let pv = t.constant(Tensor::matrix(1, 7, pose).unwrap());
        let (cv, offs) = t.clouds(&[&cloud]);
        let out = t.transform_points(pv, cv, &offs).unwrap();
        let expect = tr.apply(&cloud).unwrap().to_flat();
        for (a, b) in t.value(out).data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// Central differences of `transform_points` output against the tape
    /// gradient of a random linear functional of it.
    #[test]
    fn transform_points_pose_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..20 {
            let mut store = ParamStore::<f64>::new();
            let mut pose = rand_vec(&mut rng, 7);
            pose[0] += 1.5;
            let p = store.add("pose", Tensor::matrix(1, 7, pose).unwrap()).unwrap();
            let pts = rand_vec(&mut rng, 30);
            let weights = rand_vec(&mut rng, 30);
            let build = |t: &mut Tape<'_, f64>| -> Result<Var> {
                let pv = t.param(p);
                let cv = t.constant(Tensor::matrix(10, 3, pts.clone())?);
                let y = t.transform_points(pv, cv, &[0, 10])?;
                let wv = t.constant(Tensor::matrix(3, 1, weights[..3].to_vec())?);
                let zero = t.constant(Tensor::new(vec![1], vec![0.0])?);
                let l = t.linear(y, wv, zero)?;
                Ok(t.sum(l))
            };
            let opts = GradCheckOptions {
                h: 1e-5,
                tol: 1e-4,
                max_entries: None,
                seed: trial,
                ..Default::default()
            };
            let report = grad_check(&store, build, &opts).unwrap();
            assert!(report.passed(), "{}", report.render());
        }
    }

    #[test]
    fn chamfer_and_emd_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::<f64>::new();
        let x = store.add("x", Tensor::matrix(12, 3, rand_vec(&mut rng, 36)).unwrap()).unwrap();
        let y: Vec<f64> = rand_vec(&mut rng, 36);
        let opts = GradCheckOptions { max_entries: None, ..Default::default() };
        let report = grad_check(
            &store,
            |t| {
                let xv = t.param(x);
                let yv = t.constant(Tensor::matrix(12, 3, y.clone())?);
                let c = t.chamfer(xv, &[0, 5, 12], yv, &[0, 7, 12])?;
                let e = t.emd(xv, yv, &[0, 6, 12], 64)?;
                let s = t.add(c, e)?;
                Ok(t.sum(s))
            },
            &opts,
        )
        .unwrap();
        assert!(report.passed(), "{}", report.render());
        assert!(report.checked() > 30);
    }

    #[test]
    fn frobenius_probe_gradient_and_value() {
        let gt = euler_to_transform([5.0, 10.0, -15.0], [0.3, -0.1, 0.2]);
        let pred = euler_to_transform([7.0, 8.0, -11.0], [0.1, 0.0, 0.25]);
        let probe = crate::losses::frobenius_probe(&gt);
        let q = pred.rotation.quaternion();
        let mut store = ParamStore::<f64>::new();
        let p = store
            .add(
                "pose",
                Tensor::matrix(1, 7, vec![q[0], q[1], q[2], q[3], 0.1, 0.0, 0.25]).unwrap(),
            )
            .unwrap();
        let build = |t: &mut Tape<'_, f64>| -> Result<Var> {
            let pv = t.param(p);
            let (cv, offs) = t.clouds(&[&probe]);
            let moved = t.transform_points(pv, cv, &offs)?;
            let l = t.frobenius_probe(moved)?;
            Ok(t.sum(l))
        };
        let mut t = Tape::new(&store);
        let l = build(&mut t).unwrap();
        let expect = crate::losses::frobenius_loss(&pred, &gt).value;
        assert!((t.value(l).data()[0] - expect).abs() < 1e-12);
        let opts = GradCheckOptions { h: 1e-5, tol: 1e-4, max_entries: None, ..Default::default() };
        let report = grad_check(&store, build, &opts).unwrap();
        assert!(report.passed(), "{}", report.render());
    }

    /// Chained transforms: the cloud entering the second transform depends on
    /// the first pose, and both poses must receive exact gradients.
    #[test]
    fn chained_transforms_differentiate_through_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut store = ParamStore::<f64>::new();
        let mut p1 = rand_vec(&mut rng, 7);
        p1[0] += 1.5;
        let mut p2 = rand_vec(&mut rng, 7);
        p2[0] += 1.5;
        let a = store.add("a", Tensor::matrix(1, 7, p1).unwrap()).unwrap();
        let b = store.add("b", Tensor::matrix(1, 7, p2).unwrap()).unwrap();
        let pts = rand_vec(&mut rng, 24);
        let tgt = rand_vec(&mut rng, 24);
        let opts = GradCheckOptions { max_entries: None, ..Default::default() };
        let report = grad_check(
            &store,
            |t| {
                let c = t.constant(Tensor::matrix(8, 3, pts.clone())?);
                let y = t.constant(Tensor::matrix(8, 3, tgt.clone())?);
                let (av, bv) = (t.param(a), t.param(b));
                let c1 = t.transform_points(av, c, &[0, 8])?;
                let c2 = t.transform_points(bv, c1, &[0, 8])?;
                let l = t.chamfer(c2, &[0, 8], y, &[0, 8])?;
                Ok(t.sum(l))
            },
            &opts,
        )
        .unwrap();
        assert!(report.passed(), "{}", report.render());
    }

    #[test]
    fn constant_cloud_receives_no_gradient_slot() {
        let store = ParamStore::<f64>::new();
        let mut t = Tape::new(&store);
        let c = t.constant(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        assert!(!t.requires_grad(c));
        let pose = t.constant(Tensor::matrix(1, 7, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap());
        let y = t.transform_points(pose, c, &[0, 1]).unwrap();
        assert!(!t.requires_grad(y));
    }

    #[test]
    fn degenerate_quaternion_rejected() {
        let store = ParamStore::<f64>::new();
        let mut t = Tape::new(&store);
        let c = t.constant(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        let pose = t.constant(Tensor::zeros(vec![1, 7]));
        assert!(matches!(
            t.transform_points(pose, c, &[0, 1]),
            Err(Error::DegeneratePose(_))
        ));
        assert!(matches!(t.quat_normalize(pose), Err(Error::DegeneratePose(_))));
    }

    fn small_net(store: &mut ParamStore<f64>, seed: u64) -> (ParamId, ParamId, ParamId, ParamId) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w1 = store.add_glorot("w1", 3, 5, 1.0, &mut rng).unwrap();
        let b1 = store.add("b1", Tensor::new(vec![5], rand_vec(&mut rng, 5)).unwrap()).unwrap();
        let w2 = store.add_glorot("w2", 5, 4, 1.0, &mut rng).unwrap();
        let b2 = store.add("b2", Tensor::new(vec![4], rand_vec(&mut rng, 4)).unwrap()).unwrap();
        (w1, b1, w2, b2)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Backward of a weighted sum of two losses equals the weighted sum
        /// of their gradients; repeated backward passes are bit-identical.
        #[test]
        fn adjoint_is_linear_and_deterministic(seed in 0u64..1000, alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
            let mut store = ParamStore::<f64>::new();
            let (w1, b1, w2, b2) = small_net(&mut store, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let x = rand_vec(&mut rng, 30);
            let mut t = Tape::new(&store);
            let xv = t.constant(Tensor::matrix(10, 3, x).unwrap());
            let (w1v, b1v, w2v, b2v) = (t.param(w1), t.param(b1), t.param(w2), t.param(b2));
            let h = t.linear(xv, w1v, b1v).unwrap();
            let h = t.relu(h);
            let f = t.linear_max_pool(h, w2v, b2v, &[0, 4, 10], true).unwrap();
            let l1 = t.sum(f);
            let l2 = t.mean(h);
            let s1 = t.scale(l1, alpha);
            let s2 = t.scale(l2, beta);
            let l = t.add(s1, s2).unwrap();
            let g = t.backward(l).unwrap();
            let g_again = t.backward(l).unwrap();
            let g1 = t.backward(l1).unwrap();
            let g2 = t.backward(l2).unwrap();
            for id in [w1, b1, w2, b2] {
                prop_assert_eq!(g.get(id).unwrap(), g_again.get(id).unwrap());
                for ((a, u), v) in g.get(id).unwrap().iter().zip(g1.get(id).unwrap()).zip(g2.get(id).unwrap()) {
                    let e = alpha * u + beta * v;
                    prop_assert!((a - e).abs() <= 1e-12 * (1.0 + e.abs()), "{} vs {}", a, e);
                }
            }
        }
    }
}
