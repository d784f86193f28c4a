//! Success-ratio curves, AUC, and method comparison tables.

use std::fmt::Write as _;

use crate::cloud::PointCloud;
use crate::driver::{register_iterative, register_single_pass, AlignmentModel, RegistrationConfig, RegistrationResult};
use crate::error::{Error, Result};
use crate::icp::{icp, IcpConfig};
use crate::se3::{rotation_error, translation_error};
use crate::train::Pair;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub method: String,
    pub pair_id: usize,
    /// Degrees, in `[0, 180]`.
    pub rotation_error: f64,
    pub translation_error: f64,
    pub iterations_used: usize,
    /// Seconds.
    pub wall_time: f64,
    /// The method returned an error; the errors hold the penalty values.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuccessCurve {
    pub thresholds: Vec<f64>,
    pub ratios: Vec<f64>,
}

/// 0 to 180 degrees in half-degree steps.
pub fn default_thresholds() -> Vec<f64> {
    (0..=360).map(|i| i as f64 * 0.5).collect()
}

/// Fraction of errors at or below each threshold.
pub fn success_curve_from_errors(errors: &[f64], thresholds: &[f64]) -> Result<SuccessCurve> {
    if errors.is_empty() {
        return Err(Error::invalid("success curve needs at least one record"));
    }
    if thresholds.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("thresholds must be strictly ascending"));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let ratios = thresholds
        .iter()
        .map(|&t| sorted.partition_point(|&e| e <= t) as f64 / n)
        .collect();
    Ok(SuccessCurve {
        thresholds: thresholds.to_vec(),
        ratios,
    })
}

pub fn success_curve(records: &[EvalRecord], thresholds: &[f64]) -> Result<SuccessCurve> {
    let errors: Vec<f64> = records.iter().map(|r| r.rotation_error).collect();
    success_curve_from_errors(&errors, thresholds)
}

/// Trapezoidal area under the curve divided by 180. The thresholds must
/// start at 0 and end at 180.
pub fn auc(curve: &SuccessCurve) -> Result<f64> {
    let t = &curve.thresholds;
    if t.len() < 2 || t[0] != 0.0 || t[t.len() - 1] != 180.0 {
        return Err(Error::invalid("AUC needs thresholds spanning [0, 180]"));
    }
    if t.len() != curve.ratios.len() {
        return Err(Error::invalid("thresholds and ratios differ in length"));
    }
    let area: f64 = t
        .windows(2)
        .zip(curve.ratios.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum();
    Ok(area / 180.0)
}

/// A registration method under evaluation.
pub trait Registrar {
    fn name(&self) -> &str;
    fn register(&self, source: &PointCloud, template: &PointCloud) -> Result<RegistrationResult>;
}

pub struct IcpMethod {
    pub name: String,
    pub cfg: IcpConfig,
}

impl Registrar for IcpMethod {
    fn name(&self) -> &str {
        &self.name
    }

    fn register(&self, source: &PointCloud, template: &PointCloud) -> Result<RegistrationResult> {
        icp(source, template, &self.cfg)
    }
}

/// Any [`AlignmentModel`], run once or through the iterative driver.
pub struct ModelMethod<'a> {
    pub name: String,
    pub model: &'a dyn AlignmentModel,
    /// `None` for a single pass.
    pub iterative: Option<RegistrationConfig>,
}

impl Registrar for ModelMethod<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn register(&self, source: &PointCloud, template: &PointCloud) -> Result<RegistrationResult> {
        match &self.iterative {
            Some(cfg) => register_iterative(source, template, self.model, cfg),
            None => register_single_pass(source, template, self.model),
        }
    }
}

/// Penalty values recorded for a failed registration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FailurePenalty {
    pub rotation_deg: f64,
    pub translation: f64,
}

impl FailurePenalty {
    /// 180 degrees, and the diagonal of the translation sampling box.
    pub fn for_max_translation(max_translation: f64) -> Self {
        FailurePenalty {
            rotation_deg: 180.0,
            translation: 2.0 * 3f64.sqrt() * max_translation,
        }
    }
}

/// Runs every method on every pair. `templates[pair.template]` is the
/// template of each pair; errors compare the estimate with `gt^-1`.
pub fn benchmark(
    methods: &[&dyn Registrar],
    templates: &[PointCloud],
    pairs: &[Pair],
    penalty: FailurePenalty,
) -> Result<Vec<EvalRecord>> {
    let mut out = Vec::with_capacity(methods.len() * pairs.len());
    for m in methods {
        for p in pairs {
            let template = templates
                .get(p.template)
                .ok_or_else(|| Error::invalid(format!("pair {} references missing template {}", p.id, p.template)))?;
            let target = p.gt.inverse();
            let rec = match m.register(&p.source, template) {
                Ok(r) => EvalRecord {
                    method: m.name().to_string(),
                    pair_id: p.id,
                    rotation_error: rotation_error(&r.transform, &target),
                    translation_error: translation_error(&r.transform, &target),
                    iterations_used: r.iterations_used,
                    wall_time: r.wall_time,
                    failed: false,
                },
                Err(e) => {
                    log::warn!("{} failed on pair {}: {e}", m.name(), p.id);
                    let (iters, time) = match &e {
                        Error::RegistrationAborted { partial, .. } => (partial.iterations_used, partial.wall_time),
                        _ => (0, 0.0),
                    };
                    EvalRecord {
                        method: m.name().to_string(),
                        pair_id: p.id,
                        rotation_error: penalty.rotation_deg,
                        translation_error: penalty.translation,
                        iterations_used: iters,
                        wall_time: time,
                        failed: true,
                    }
                }
            };
            out.push(rec);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub n: usize,
    pub failures: usize,
    pub rot_mean: f64,
    pub rot_std: f64,
    pub trans_mean: f64,
    pub trans_std: f64,
    /// Seconds.
    pub time_mean: f64,
    pub time_std: f64,
    pub median_iterations: f64,
    pub auc: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Per-method statistics (population standard deviations), in order of
/// first appearance.
pub fn summarize(records: &[EvalRecord]) -> Result<Vec<MethodSummary>> {
    let mut names: Vec<&str> = Vec::new();
    for r in records {
        if !names.contains(&r.method.as_str()) {
            names.push(&r.method);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let rs: Vec<&EvalRecord> = records.iter().filter(|r| r.method == name).collect();
            let col = |f: fn(&EvalRecord) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let (rot_mean, rot_std) = mean_std(&col(|r| r.rotation_error));
            let (trans_mean, trans_std) = mean_std(&col(|r| r.translation_error));
            let (time_mean, time_std) = mean_std(&col(|r| r.wall_time));
            let curve = success_curve_from_errors(&col(|r| r.rotation_error), &default_thresholds())?;
            Ok(MethodSummary {
                method: name.to_string(),
                n: rs.len(),
                failures: rs.iter().filter(|r| r.failed).count(),
                rot_mean,
                rot_std,
                trans_mean,
                trans_std,
                time_mean,
                time_std,
                median_iterations: median(&col(|r| r.iterations_used as f64)),
                auc: auc(&curve)?,
            })
        })
        .collect()
}

pub const RECORDS_HEADER: &str = "method,pair_id,rot_err_deg,trans_err,iters,time_ms";
pub const SUMMARY_HEADER: &str =
    "method,n,failures,rot_err_mean_deg,rot_err_std_deg,trans_err_mean_x1e-2,trans_err_std_x1e-2,time_mean_ms,time_std_ms,median_iters,auc";

pub fn records_csv(records: &[EvalRecord]) -> String {
    let mut s = format!("{RECORDS_HEADER}\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.method,
            r.pair_id,
            r.rotation_error,
            r.translation_error,
            r.iterations_used,
            r.wall_time * 1e3
        );
    }
    s
}

pub fn summary_csv(summaries: &[MethodSummary]) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for m in summaries {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            m.method,
            m.n,
            m.failures,
            m.rot_mean,
            m.rot_std,
            m.trans_mean * 100.0,
            m.trans_std * 100.0,
            m.time_mean * 1e3,
            m.time_std * 1e3,
            m.median_iterations,
            m.auc
        );
    }
    s
}

/// Fixed-width comparison table.
pub fn render_table(summaries: &[MethodSummary]) -> String {
    let w = summaries.iter().map(|m| m.method.len()).max().unwrap_or(6).max(6);
    let mut s = format!(
        "{:<w$}  {:>15}  {:>19}  {:>19}  {:>6}  {:>6}  {:>5}\n",
        "method", "rot err (deg)", "trans err (x1e-2)", "time (ms)", "iters", "AUC", "fail"
    );
    for m in summaries {
        let _ = writeln!(
            s,
            "{:<w$}  {:>7.3} ± {:<6.3}  {:>8.3} ± {:<8.3}  {:>8.3} ± {:<8.3}  {:>6.1}  {:>6.4}  {:>5}",
            m.method,
            m.rot_mean,
            m.rot_std,
            m.trans_mean * 100.0,
            m.trans_std * 100.0,
            m.time_mean * 1e3,
            m.time_std * 1e3,
            m.median_iterations,
            m.auc,
            m.failures
        );
    }
    s
}

/// Drops the `time_ms` column (the last) from records CSV text.
pub fn strip_time_column(csv: &str) -> String {
    csv.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}
