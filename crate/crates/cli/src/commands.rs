use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Args;

use pcreg::autodiff::gradcheck::GradCheckOptions;
use pcreg::cloud::normalize_unit_box;
use pcreg::config::{MethodKind, RunConfig};
use pcreg::eval::{
    benchmark, default_thresholds, records_csv, render_table, success_curve, summarize, summary_csv, EvalRecord,
    FailurePenalty, Registrar, RECORDS_HEADER,
};
use pcreg::io::{load_cloud, save_cloud, write_xyz};
use pcreg::selfcheck::{run_grad_check, GradScope};
use pcreg::synth::{synth_shape, ShapeKind, ShapeSpec};
use pcreg::train::{generate_pairs, prepare_templates, Split};
use pcreg::{Error, Result};

use crate::ensure_dir;
use crate::methods::Models;

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.dataset.seed = s;
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn parse_shape(s: &str) -> std::result::Result<ShapeKind, String> {
    ShapeKind::parse(s).ok_or_else(|| {
        let names: Vec<&str> = ShapeKind::ALL.iter().map(|k| k.name()).collect();
        format!("unknown shape `{s}` (expected one of {})", names.join(", "))
    })
}

fn parse_method(s: &str) -> std::result::Result<MethodKind, String> {
    MethodKind::parse(s).ok_or_else(|| format!("unknown method `{s}` (expected icp, pcrnet, ipcrnet or lk)"))
}

fn parse_scope(s: &str) -> std::result::Result<GradScope, String> {
    GradScope::parse(s).ok_or_else(|| format!("unknown scope `{s}` (expected linear, encoder or full)"))
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, default_value = "l-bracket", value_parser = parse_shape)]
    shape: ShapeKind,
    /// Three comma-separated dimensions; defaults depend on the shape.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    size: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1024)]
    points: usize,
    /// Scale to a unit bounding box and center at the origin.
    #[arg(long)]
    normalize: bool,
    /// `.ply` writes ASCII PLY, anything else XYZ; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn synth(a: SynthArgs) -> Result<ExitCode> {
    let mut spec = ShapeSpec::new(a.shape);
    if let Some(s) = a.size {
        spec.size = [s[0], s[1], s[2]];
    }
    let mut cloud = synth_shape(&spec, a.points, a.seed)?;
    if a.normalize {
        cloud = normalize_unit_box(&cloud)?;
    }
    match a.out {
        Some(p) => save_cloud(&p, &cloud)?,
        None => print!("{}", write_xyz(&cloud)),
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
pub struct GenDataArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "test", value_parser = ["train", "test"])]
    split: String,
    /// Number of pairs; defaults to `test_pairs` from the config.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Writes `templates/template_K.xyz`, `source_NNNN.xyz`, `gt_NNNN.txt` (the
/// template-to-source transform) and an index `pairs.csv`.
pub fn gen_data(a: GenDataArgs) -> Result<ExitCode> {
    let cfg = load_config(a.config.as_deref(), a.seed)?;
    let split = if a.split == "train" { Split::Train } else { Split::Test };
    let templates = prepare_templates(&cfg.dataset)?;
    let pairs = generate_pairs(&templates, &cfg.dataset, split, 0, a.count.unwrap_or(cfg.test_pairs))?;
    let dir = ensure_dir(&a.out)?;
    let tdir = ensure_dir(&dir.join("templates"))?;
    for (k, t) in templates.get(split).iter().enumerate() {
        save_cloud(&tdir.join(format!("template_{k}.xyz")), t)?;
    }
    let mut index = String::from("pair_id,template,source,gt\n");
    for p in &pairs {
        let (src, gt) = (format!("source_{:04}.xyz", p.id), format!("gt_{:04}.txt", p.id));
        save_cloud(&dir.join(&src), &p.source)?;
        std::fs::write(dir.join(&gt), p.gt.to_matrix_text())?;
        let _ = writeln!(index, "{},templates/template_{}.xyz,{src},{gt}", p.id, p.template);
    }
    std::fs::write(dir.join("pairs.csv"), index)?;
    log::info!("wrote {} pairs to {}", pairs.len(), dir.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

pub fn train(a: TrainArgs) -> Result<ExitCode> {
    let cfg = load_config(a.config.as_deref(), a.seed)?;
    let out = a.out.unwrap_or_else(|| cfg.output_dir.clone());
    let report = pcreg::train::train(&cfg.dataset, &cfg.train, &out)?;
    println!(
        "trained {} for {} epochs ({} steps, {} skipped) in {:.1} s",
        cfg.train.head.name(),
        report.epochs.len(),
        report.steps,
        report.skipped_steps,
        report.wall_time
    );
    println!("loss {:.6e} -> {:.6e}", report.first_loss(), report.final_loss());
    let nan = report.nan_epochs();
    if !nan.is_empty() {
        println!("epochs without a finite loss: {nan:?}");
    }
    if let Some(p) = report.checkpoint {
        println!("checkpoint {}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
pub struct RegisterArgs {
    #[arg(long, default_value = "icp", value_parser = parse_method)]
    method: MethodKind,
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    template: PathBuf,
    /// Checkpoint for learned methods; otherwise taken from the config.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Print per-iteration records to stderr.
    #[arg(long)]
    trace: bool,
    /// Also write the matrix to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

pub fn register(a: RegisterArgs) -> Result<ExitCode> {
    let mut cfg = load_config(a.config.as_deref(), a.seed)?;
    if let Some(n) = a.max_iterations {
        cfg.registration.max_iterations = n;
        cfg.icp.max_iterations = n;
    }
    if let Some(e) = a.epsilon {
        cfg.registration.epsilon = e;
    }
    cfg.registration.record_trace |= a.trace;
    let source = load_cloud(&a.source)?;
    let template = load_cloud(&a.template)?;
    let kinds = [a.method];
    let models = Models::load(&cfg, &kinds, a.model.as_deref())?;
    let lk = models.lk_models(&cfg);
    let methods = models.methods(&cfg, &kinds, &lk);
    let r = methods[0].register(&source, &template)?;
    print!("{}", r.transform.to_matrix_text());
    if a.trace {
        eprint!("{}", r.render_trace());
    }
    eprintln!("iterations {}  time {:.3} ms", r.iterations_used, r.wall_time * 1e3);
    if let Some(p) = a.out {
        std::fs::write(p, r.transform.to_matrix_text())?;
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
pub struct EvalArgs {
    /// Records CSV written by `bench`.
    #[arg(long)]
    records: PathBuf,
    /// Write the success-ratio curve (threshold per row, one column per method).
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Write the summary CSV.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_records(text: &str) -> Result<Vec<EvalRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == RECORDS_HEADER => {}
        _ => return Err(Error::Parse { line: 1, msg: format!("expected header `{RECORDS_HEADER}`") }),
    }
    let mut out = Vec::new();
    for (i, l) in lines {
        if l.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = l.split(',').collect();
        let bad = |what: &str| Error::Parse { line: i + 1, msg: format!("bad {what} in `{l}`") };
        if f.len() != 6 {
            return Err(bad("field count"));
        }
        let rot: f64 = f[2].parse().map_err(|_| bad("rot_err_deg"))?;
        if !(0.0..=180.0).contains(&rot) {
            return Err(bad("rot_err_deg"));
        }
        out.push(EvalRecord {
            method: f[0].to_string(),
            pair_id: f[1].parse().map_err(|_| bad("pair_id"))?,
            rotation_error: rot,
            translation_error: f[3].parse().map_err(|_| bad("trans_err"))?,
            iterations_used: f[4].parse().map_err(|_| bad("iters"))?,
            wall_time: f[5].parse::<f64>().map_err(|_| bad("time_ms"))? / 1e3,
            failed: false,
        });
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("records file has no rows".into()));
    }
    Ok(out)
}

fn curve_csv(records: &[EvalRecord], methods: &[String]) -> Result<String> {
    let t = default_thresholds();
    let curves = methods
        .iter()
        .map(|m| {
            let rs: Vec<EvalRecord> = records.iter().filter(|r| &r.method == m).cloned().collect();
            success_curve(&rs, &t)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut s = format!("threshold_deg,{}\n", methods.join(","));
    for (i, th) in t.iter().enumerate() {
        let row: Vec<String> = curves.iter().map(|c| c.ratios[i].to_string()).collect();
        let _ = writeln!(s, "{th},{}", row.join(","));
    }
    Ok(s)
}

pub fn eval(a: EvalArgs) -> Result<ExitCode> {
    let records = parse_records(&std::fs::read_to_string(&a.records)?)?;
    let summaries = summarize(&records)?;
    print!("{}", render_table(&summaries));
    if let Some(p) = a.summary {
        std::fs::write(p, summary_csv(&summaries))?;
    }
    if let Some(p) = a.curve {
        let names: Vec<String> = summaries.iter().map(|s| s.method.clone()).collect();
        std::fs::write(p, curve_csv(&records, &names)?)?;
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for `records.csv`, `summary.csv` and `curves.csv`;
    /// overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

pub fn bench(a: BenchArgs) -> Result<ExitCode> {
    let cfg = load_config(a.config.as_deref(), a.seed)?;
    let templates = prepare_templates(&cfg.dataset)?;
    let pairs = generate_pairs(&templates, &cfg.dataset, Split::Test, 0, cfg.test_pairs)?;
    let models = Models::load(&cfg, &cfg.bench_methods, None)?;
    let lk = models.lk_models(&cfg);
    let methods = models.methods(&cfg, &cfg.bench_methods, &lk);
    let refs: Vec<&dyn Registrar> = methods.iter().map(|m| m.as_ref()).collect();
    let penalty = FailurePenalty::for_max_translation(cfg.dataset.max_translation);
    let records = benchmark(&refs, &templates.test, &pairs, penalty)?;
    let summaries = summarize(&records)?;
    let dir = ensure_dir(&a.out.unwrap_or_else(|| cfg.output_dir.clone()))?;
    std::fs::write(dir.join("records.csv"), records_csv(&records))?;
    std::fs::write(dir.join("summary.csv"), summary_csv(&summaries))?;
    let names: Vec<String> = summaries.iter().map(|s| s.method.clone()).collect();
    std::fs::write(dir.join("curves.csv"), curve_csv(&records, &names)?)?;
    print!("{}", render_table(&summaries));
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value = "full", value_parser = parse_scope)]
    scope: GradScope,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    /// Points per cloud.
    #[arg(long, default_value_t = 16)]
    points: usize,
    /// Entries sampled per parameter tensor; 0 checks every entry.
    #[arg(long, default_value_t = 16)]
    entries: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn grad_check(a: GradCheckArgs) -> Result<ExitCode> {
    let opts = GradCheckOptions {
        tol: a.tol,
        max_entries: (a.entries > 0).then_some(a.entries),
        seed: a.seed,
        ..Default::default()
    };
    let report = run_grad_check(a.scope, a.points, a.seed, &opts)?;
    print!("{}", report.render());
    let pass = report.passed();
    println!(
        "{} scope={} max_rel_error={:.3e} tol={:e} checked={} excluded={}",
        if pass { "PASS" } else { "FAIL" },
        a.scope.name(),
        report.max_rel_error(),
        a.tol,
        report.checked(),
        report.excluded()
    );
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
