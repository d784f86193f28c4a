//! Reverse-mode gradients against central finite differences.
//!
//! Every perturbed forward pass is compared with the unperturbed one by branch
//! signature. When a perturbation flips a ReLU sign, a pooling winner or a
//! nearest-neighbor choice, the two evaluations straddle a kink and the
//! difference quotient says nothing about the derivative; such entries are
//! reported as excluded rather than failed.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub h: f64,
    /// Maximum accepted relative error.
    pub tol: f64,
    /// Denominator floor for the relative error.
    pub abs_floor: f64,
    /// Entries sampled per tensor; `None` checks every entry.
    pub max_entries: Option<usize>,
    /// Also check one random direction spanning the whole tensor.
    pub directional: bool,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-6,
            tol: 1e-3,
            abs_floor: 1e-7,
            max_entries: Some(16),
            directional: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamReport {
    pub name: String,
    pub checked: usize,
    pub excluded: usize,
    pub max_rel_error: f64,
    /// Analytic and numeric values at the worst entry.
    pub worst: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamReport>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error <= self.tol)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }

    pub fn excluded(&self) -> usize {
        self.params.iter().map(|p| p.excluded).sum()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for p in &self.params {
            s.push_str(&format!(
                "{:<32} checked {:>4} excluded {:>3} max_rel {:.3e}\n",
                p.name, p.checked, p.excluded, p.max_rel_error
            ));
        }
        s.push_str(&format!(
            "{} (max_rel {:.3e}, tol {:.1e}, {} checked, {} excluded)\n",
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_rel_error(),
            self.tol,
            self.checked(),
            self.excluded()
        ));
        s
    }
}

fn rel_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Evaluates `build` (which records a scalar loss on the tape it is given)
/// and compares its reverse-mode gradient with central differences.
pub fn grad_check<B>(store: &ParamStore<f64>, build: B, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    B: Fn(&mut Tape<'_, f64>) -> Result<Var>,
{
    let eval = |s: &ParamStore<f64>| -> Result<(f64, u64)> {
        let mut tape = Tape::new(s);
        tape.track_branches();
        let loss = build(&mut tape)?;
        let v = tape.value(loss).data()[0];
        Ok((v, tape.branch_signature().unwrap()))
    };

    let grads = {
        let mut tape = Tape::new(store);
        tape.track_branches();
        let loss = build(&mut tape)?;
        tape.backward(loss)?
    };
    let (_, sig0) = eval(store)?;

    let mut work = store.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut reports = Vec::new();

    for (id, p) in store.iter() {
        let g = grads
            .get(id)
            .ok_or_else(|| Error::invalid(format!("no gradient for `{}`", p.name)))?;
        let base = p.value.data().to_vec();
        let n = base.len();
        let mut rep = ParamReport {
            name: p.name.clone(),
            checked: 0,
            excluded: 0,
            max_rel_error: 0.0,
            worst: None,
        };
        let mut probe = |dir: &[(usize, f64)], analytic: f64, work: &mut ParamStore<f64>| -> Result<()> {
            let mut vals = base.clone();
            for &(i, d) in dir {
                vals[i] = base[i] + opts.h * d;
            }
            work.set_value(id, &vals)?;
            let (lp, sp) = eval(work)?;
            for &(i, d) in dir {
                vals[i] = base[i] - opts.h * d;
            }
            work.set_value(id, &vals)?;
            let (lm, sm) = eval(work)?;
            work.set_value(id, &base)?;
            if sp != sig0 || sm != sig0 {
                rep.excluded += 1;
                return Ok(());
            }
            let numeric = (lp - lm) / (2.0 * opts.h);
            let e = rel_error(analytic, numeric, opts.abs_floor);
            rep.checked += 1;
            if e > rep.max_rel_error || rep.worst.is_none() {
                rep.max_rel_error = rep.max_rel_error.max(e);
                rep.worst = Some((analytic, numeric));
            }
            Ok(())
        };

        let entries: Vec<usize> = match opts.max_entries {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for i in entries {
            probe(&[(i, 1.0)], g[i], &mut work)?;
        }
        if opts.directional && n > 1 {
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dir: Vec<(usize, f64)> = raw.iter().enumerate().map(|(i, v)| (i, v / norm)).collect();
            let analytic: f64 = dir.iter().map(|&(i, d)| g[i] * d).sum();
            probe(&dir, analytic, &mut work)?;
        }
        reports.push(rep);
    }
    Ok(GradCheckReport {
        params: reports,
        tol: opts.tol,
    })
}
