//! Trains i-PCRNet on one synthetic shape and compares it with ICP on noisy
//! held-out pairs. Settings come from environment variables:
//! `EPOCHS`, `PAIRS`, `BATCH`, `LR`, `UNROLL`, `POINTS`, `TEST`, `OUT`,
//! `SHAPE`, `LOSS`, `DROPOUT` and `INIT` (a checkpoint to continue from).

use std::path::PathBuf;
use std::time::Instant;

use pcreg::driver::RegistrationConfig;
use pcreg::encoder::EncoderConfig;
use pcreg::eval::{benchmark, render_table, summarize, FailurePenalty, IcpMethod, ModelMethod, Registrar};
use pcreg::icp::IcpConfig;
use pcreg::model::Model;
use pcreg::train::{generate_pairs, prepare_templates, train_model, DatasetSpec, Split, TrainConfig};

fn env<T: std::str::FromStr>(k: &str, d: T) -> T {
    std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d)
}

fn main() -> pcreg::Result<()> {
    env_logger::init();
    let spec = DatasetSpec {
        points_per_cloud: env("POINTS", 512),
        noise_sigma_max: 0.04,
        shapes: vec![pcreg::synth::ShapeKind::parse(&std::env::var("SHAPE").unwrap_or("l-bracket".into())).unwrap()],
        seed: 1,
        ..Default::default()
    };
    let cfg = TrainConfig {
        epochs: env("EPOCHS", 10),
        pairs_per_epoch: env("PAIRS", 256),
        batch_size: env("BATCH", 16),
        learning_rate: env("LR", 1e-3),
        unroll_iterations: env("UNROLL", 8),
        loss: pcreg::losses::LossKind::parse(&std::env::var("LOSS").unwrap_or("chamfer".into())).unwrap(),
        seed: env("TRAIN_SEED", 1),
        ..Default::default()
    };
    let templates = prepare_templates(&spec)?;
    let mut model = match std::env::var("INIT") {
        Ok(p) => Model::<f32>::load(&PathBuf::from(p))?.0,
        Err(_) => Model::<f32>::new(cfg.head, EncoderConfig::default(), 7)?,
    };
    if let Ok(d) = std::env::var("DROPOUT") {
        model.head.set_dropout(d.parse().expect("DROPOUT is a number"))?;
    }
    let start = Instant::now();
    train_model(&mut model, &templates, &spec, &cfg, |s, _| {
        eprintln!("epoch {} step {} loss {:.5e} ({:.0}s)", s.epoch, s.step, s.loss, start.elapsed().as_secs_f64());
        Ok(())
    })?;
    if let Ok(out) = std::env::var("OUT") {
        model.save(&PathBuf::from(out), &Default::default())?;
    }
    let pairs = generate_pairs(&templates, &spec, Split::Test, 0, env("TEST", 100))?;
    let icp = IcpMethod { name: "icp".into(), cfg: IcpConfig::default() };
    let model = model.cast::<f64>();
    let ip = ModelMethod { name: "ipcrnet".into(), model: &model, iterative: Some(RegistrationConfig::default()) };
    let sp = ModelMethod { name: "single-pass".into(), model: &model, iterative: None };
    let methods: [&dyn Registrar; 3] = [&icp, &ip, &sp];
    let recs = benchmark(&methods, &templates.test, &pairs, FailurePenalty::for_max_translation(1.0))?;
    print!("{}", render_table(&summarize(&recs)?));
    Ok(())
}
