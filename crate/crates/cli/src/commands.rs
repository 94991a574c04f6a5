use std::path::Path;

use moladapt::checkpoint::{self, encoder_from_str, encoder_to_string, model_from_str, model_to_string};
use moladapt::config::RunConfig;
use moladapt::encoder::{pretrain_contrastive, EncoderParams};
use moladapt::eval::{
    episode_split, evaluate, results_csv, run_ablation, run_episodes, summarize, AblationVariant, Summary,
};
use moladapt::mol::{parse_mgf, Dataset, TaskKind};
use moladapt::tensor::{BackwardFault, GradCheckOptions};
use moladapt::trainer::{adapt_train, check_objective_gradients, training_log_csv, AdaptSpec, Variant};
use moladapt::{Error, ErrorKind, Result};

use crate::output::{echo_config, parent_dir, read_text, write_atomic};
use crate::Common;

/// Gradient checks pass below this maximum relative error.
pub const GRADCHECK_THRESHOLD: f64 = 1e-4;

pub fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Input => 1,
        ErrorKind::Numeric => 2,
        ErrorKind::Invariant => 3,
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.override_seed(seed);
    }
    Ok(cfg)
}

fn load_data(path: &Path, cfg: &RunConfig) -> Result<Dataset> {
    let mut data = parse_mgf(&read_text(path)?)?;
    data.task_kind = cfg.check_task(&data)?;
    Ok(data)
}

fn load_encoder(path: &Path) -> Result<EncoderParams> {
    encoder_from_str(&read_text(path)?)
}

fn print_counts(trainable: usize, frozen: usize) {
    println!("trainable_params {trainable}");
    println!("frozen_params {frozen}");
    println!("trainable_fraction {:.4}", trainable as f64 / frozen as f64);
}

fn print_summaries(summaries: &[Summary], with_variant: bool) {
    for s in summaries {
        if with_variant {
            print!("{} ", s.variant);
        }
        println!("{} {:.6} {:.6} {}", s.metric.name(), s.mean, s.std, s.n);
    }
}

pub fn pretrain(common: &Common, out: &Path) -> Result<u8> {
    let cfg = load_config(common)?;
    let data = load_data(&common.data, &cfg)?;
    let (encoder, log) = pretrain_contrastive(&data, &cfg.encoder)?;
    let mut csv = String::from("epoch,step,loss\n");
    for row in &log {
        csv.push_str(&format!("{},{},{}\n", row.epoch, row.step, row.loss));
    }
    let dir = parent_dir(out);
    write_atomic(out, &encoder_to_string(&encoder)?)?;
    write_atomic(&dir.join("pretrain_log.csv"), &csv)?;
    echo_config(&dir, &cfg)?;
    println!("encoder_params {}", encoder.count());
    if let Some(last) = log.last() {
        println!("final_loss {:.6}", last.loss);
    }
    Ok(0)
}

pub fn adapt(common: &Common, checkpoint: &Path, out: &Path) -> Result<u8> {
    let cfg = load_config(common)?;
    let data = load_data(&common.data, &cfg)?;
    let encoder = load_encoder(checkpoint)?;
    let spec = cfg.adapt_spec(Variant::FULL);
    let split = episode_split(&data, &cfg.eval, 0, cfg.train.seed)?;
    let model = adapt_train(&data, &split.train, &encoder, &spec)?;
    write_atomic(&out.join("model.params"), &model_to_string(&model)?)?;
    write_atomic(&out.join("train_log.csv"), &training_log_csv(&model.log))?;
    echo_config(out, &cfg)?;
    print_counts(model.trainable_count(), model.frozen_count());
    if let Some([wt, wa]) = model.balance {
        println!("weights {wt:.6} {wa:.6}");
    }
    let metric = moladapt::eval::Metric::for_task(data.task_kind).name();
    match evaluate(&model, &data, &split.test) {
        Ok(v) => println!("test_{metric} {v:.6}"),
        Err(Error::UndefinedMetric(why)) => println!("test_{metric} undefined ({why})"),
        Err(e) => return Err(e),
    }
    Ok(0)
}

/// Spec embedded in an adapted-model file, or the configured full model for
/// a bare encoder checkpoint.
fn spec_for(text: &str, cfg: &RunConfig) -> Result<AdaptSpec> {
    let file = checkpoint::parse(text)?;
    if file.meta.get("kind").map(String::as_str) == Some("adapted_model") {
        let mut spec = model_from_str(text)?.spec;
        spec.train.seed = cfg.train.seed;
        Ok(spec)
    } else {
        Ok(cfg.adapt_spec(Variant::FULL))
    }
}

pub fn eval(common: &Common, checkpoint: &Path, out: &Path) -> Result<u8> {
    let cfg = load_config(common)?;
    let data = load_data(&common.data, &cfg)?;
    let text = read_text(checkpoint)?;
    let encoder = encoder_from_str(&text)?;
    let spec = spec_for(&text, &cfg)?;
    let rows = run_episodes(&data, &cfg.eval, &encoder, &spec, "full")?;
    write_atomic(out, &results_csv(&rows))?;
    echo_config(&parent_dir(out), &cfg)?;
    print_summaries(&summarize(&rows), false);
    Ok(0)
}

pub fn ablate(common: &Common, checkpoint: &Path, out: &Path) -> Result<u8> {
    let cfg = load_config(common)?;
    let data = load_data(&common.data, &cfg)?;
    let encoder = load_encoder(checkpoint)?;
    let variants: Vec<AblationVariant> = cfg.eval.ablation_variants()?;
    let rows = run_ablation(&data, &cfg.eval, &encoder, &cfg.adapt_spec(Variant::FULL), &variants)?;
    write_atomic(out, &results_csv(&rows))?;
    echo_config(&parent_dir(out), &cfg)?;
    print_summaries(&summarize(&rows), true);
    Ok(0)
}

pub fn gradcheck(common: &Common, checkpoint: Option<&Path>, eps: f64, fault: Option<f64>) -> Result<u8> {
    let cfg = load_config(common)?;
    let data = load_data(&common.data, &cfg)?;
    let graph = data
        .graphs
        .first()
        .ok_or_else(|| Error::InsufficientData(format!("{} holds no molecules", common.data.display())))?;
    let mut graph = graph.clone();
    if graph.label.is_none() {
        graph.label = Some(match data.task_kind {
            TaskKind::Classification => moladapt::mol::Label::Class(1),
            TaskKind::Regression => moladapt::mol::Label::Real(0.0),
        });
    }
    let encoder = match checkpoint {
        Some(p) => load_encoder(p)?,
        None => EncoderParams::seeded(&cfg.encoder)?,
    };
    let spec = cfg.adapt_spec(Variant::FULL);
    let opts = GradCheckOptions {
        eps,
        fault: fault.map(BackwardFault::SigmoidScale),
    };
    let channels: Vec<&str> = spec.knowledge.channels.iter().map(|c| c.name()).collect();
    println!(
        "gradcheck eps={eps:e} molecule={} atoms={} bonds={} channels={} hidden={}",
        graph.id,
        graph.num_atoms(),
        graph.num_bonds(),
        channels.join(","),
        encoder.hidden()
    );
    let report = check_objective_gradients(&graph, data.task_kind, &encoder, &spec, cfg.train.seed, &opts)?;
    println!("checked {}", report.checked);
    println!("max_rel_error {:.6e}", report.max_rel_error);
    if let Some((path, index)) = &report.worst {
        println!(
            "worst {path}[{index}] analytic={:.6e} numeric={:.6e}",
            report.analytic, report.numeric
        );
    }
    let failing = report.failures(GRADCHECK_THRESHOLD).count();
    if report.max_rel_error < GRADCHECK_THRESHOLD {
        println!("PASS");
        Ok(0)
    } else {
        println!("FAIL {failing} entries at or above {GRADCHECK_THRESHOLD:e}");
        Ok(2)
    }
}
