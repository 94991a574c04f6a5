//! Metrics, the repeated few-shot episode protocol and the ablation runner.

mod metrics;

pub use metrics::{rmse, roc_auc, roc_auc_ranked};

use serde::{Deserialize, Serialize};

use crate::adapt::Conditioning;
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::mol::{sample_mshot, split_property, Dataset, EpisodeSplit, Label, TaskKind};
use crate::par::{map_indexed, Execution};
use crate::trainer::{adapt_train, AdaptSpec, AdaptedModel, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    RocAuc,
    Rmse,
}

impl Metric {
    pub fn for_task(kind: TaskKind) -> Metric {
        match kind {
            TaskKind::Classification => Metric::RocAuc,
            TaskKind::Regression => Metric::Rmse,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::RocAuc => "roc_auc",
            Metric::Rmse => "rmse",
        }
    }
}

/// A named row of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationVariant {
    pub name: &'static str,
    pub use_alignment: bool,
    pub cond_on_2d: bool,
    pub cond_on_knowledge: bool,
}

impl AblationVariant {
    pub const VARIANT1: AblationVariant = AblationVariant::new("variant1", false, false, false);
    pub const VARIANT2: AblationVariant = AblationVariant::new("variant2", false, true, false);
    pub const VARIANT3: AblationVariant = AblationVariant::new("variant3", false, false, true);
    pub const VARIANT4: AblationVariant = AblationVariant::new("variant4", false, true, true);
    pub const VARIANT5: AblationVariant = AblationVariant::new("variant5", true, false, false);
    pub const FULL: AblationVariant = AblationVariant::new("full", true, true, true);

    pub const ALL: [AblationVariant; 6] = [
        Self::VARIANT1,
        Self::VARIANT2,
        Self::VARIANT3,
        Self::VARIANT4,
        Self::VARIANT5,
        Self::FULL,
    ];

    const fn new(name: &'static str, use_alignment: bool, cond_on_2d: bool, cond_on_knowledge: bool) -> Self {
        AblationVariant {
            name,
            use_alignment,
            cond_on_2d,
            cond_on_knowledge,
        }
    }

    pub fn by_name(name: &str) -> Result<AblationVariant> {
        Self::ALL
            .into_iter()
            .find(|v| v.name == name)
            .ok_or_else(|| Error::Config(format!("unknown variant {name:?}")))
    }

    pub fn variant(self) -> Variant {
        Variant {
            use_alignment: self.use_alignment,
            conditioning: Conditioning {
                on_2d: self.cond_on_2d,
                on_knowledge: self.cond_on_knowledge,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Shots per class.
    pub m: usize,
    pub n_tasks: usize,
    pub seeds: Vec<u64>,
    /// Regression split sizes.
    pub n_train: usize,
    pub n_val: usize,
    pub variants: Vec<String>,
    pub execution: Execution,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            m: 5,
            n_tasks: 100,
            seeds: vec![0, 1, 2, 3, 4],
            n_train: 100,
            n_val: 100,
            variants: AblationVariant::ALL.iter().map(|v| v.name.to_string()).collect(),
            execution: Execution::Parallel,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tasks == 0 || self.seeds.is_empty() {
            return Err(Error::Config("eval needs at least one task and one seed".into()));
        }
        if self.m == 0 {
            return Err(Error::Config("eval.m must be positive".into()));
        }
        for v in &self.variants {
            AblationVariant::by_name(v)?;
        }
        Ok(())
    }

    pub fn ablation_variants(&self) -> Result<Vec<AblationVariant>> {
        self.variants.iter().map(|v| AblationVariant::by_name(v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub task_id: usize,
    pub seed: u64,
    pub variant: String,
    pub metric: Metric,
    pub value: f64,
}

/// Seed of episode `(task, seed)`; drives both the split and the adapter
/// initialization, so every variant sees the same episodes.
pub fn episode_seed(task_id: usize, seed: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (task_id as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

/// The split used by episode `(task_id, seed)`.
pub fn episode_split(dataset: &Dataset, protocol: &EvalConfig, task_id: usize, seed: u64) -> Result<EpisodeSplit> {
    let s = episode_seed(task_id, seed);
    match dataset.task_kind {
        TaskKind::Classification => sample_mshot(dataset, protocol.m, s),
        TaskKind::Regression => split_property(dataset, protocol.n_train, protocol.n_val, s),
    }
}

/// Metric of `model` on the graphs `ids`.
pub fn evaluate(model: &AdaptedModel, dataset: &Dataset, ids: &[usize]) -> Result<f64> {
    let mut preds = Vec::with_capacity(ids.len());
    let mut targets = Vec::with_capacity(ids.len());
    for &i in ids {
        let g = &dataset.graphs[i];
        let Some(label) = g.label else {
            return Err(Error::Semantic {
                record: g.id.clone(),
                message: "evaluation graph has no label".into(),
            });
        };
        preds.push(model.predict(g)?);
        targets.push(match label {
            Label::Class(c) => c as f64,
            Label::Real(y) => y,
        });
    }
    match Metric::for_task(dataset.task_kind) {
        Metric::RocAuc => {
            let labels: Vec<bool> = targets.iter().map(|&t| t == 1.0).collect();
            roc_auc(&preds, &labels)
        }
        Metric::Rmse => rmse(&preds, &targets),
    }
}

fn run_one(
    dataset: &Dataset,
    protocol: &EvalConfig,
    encoder: &EncoderParams,
    spec: &AdaptSpec,
    variant: AblationVariant,
    task_id: usize,
    seed: u64,
) -> Result<EpisodeResult> {
    let split = episode_split(dataset, protocol, task_id, seed)?;
    let mut spec = spec.clone();
    spec.variant = variant.variant();
    spec.train.seed = split.seed;
    let model = adapt_train(dataset, &split.train, encoder, &spec)?;
    Ok(EpisodeResult {
        task_id,
        seed,
        variant: variant.name.to_string(),
        metric: Metric::for_task(dataset.task_kind),
        value: evaluate(&model, dataset, &split.test)?,
    })
}

/// One result per `(task, seed)` in task-major order, with `spec.variant`
/// as the adapted configuration.
pub fn run_episodes(
    dataset: &Dataset,
    protocol: &EvalConfig,
    encoder: &EncoderParams,
    spec: &AdaptSpec,
    name: &str,
) -> Result<Vec<EpisodeResult>> {
    let variant = AblationVariant {
        name: "",
        use_alignment: spec.variant.use_alignment,
        cond_on_2d: spec.variant.conditioning.on_2d,
        cond_on_knowledge: spec.variant.conditioning.on_knowledge,
    };
    let mut rows = run_grid(dataset, protocol, encoder, spec, &[variant])?;
    for r in &mut rows {
        r.variant = name.to_string();
    }
    Ok(rows)
}

/// Every variant over the same episodes; rows ordered by variant, then task,
/// then seed.
pub fn run_ablation(
    dataset: &Dataset,
    protocol: &EvalConfig,
    encoder: &EncoderParams,
    spec: &AdaptSpec,
    variants: &[AblationVariant],
) -> Result<Vec<EpisodeResult>> {
    run_grid(dataset, protocol, encoder, spec, variants)
}

fn run_grid(
    dataset: &Dataset,
    protocol: &EvalConfig,
    encoder: &EncoderParams,
    spec: &AdaptSpec,
    variants: &[AblationVariant],
) -> Result<Vec<EpisodeResult>> {
    if protocol.n_tasks == 0 || protocol.seeds.is_empty() {
        return Err(Error::Config("eval needs at least one task and one seed".into()));
    }
    let per_variant = protocol.n_tasks * protocol.seeds.len();
    map_indexed(variants.len() * per_variant, protocol.execution, |i| {
        let v = variants[i / per_variant];
        let e = i % per_variant;
        let task = e / protocol.seeds.len();
        let seed = protocol.seeds[e % protocol.seeds.len()];
        run_one(dataset, protocol, encoder, spec, v, task, seed)
    })
}

/// Mean and population standard deviation of one variant's results.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub variant: String,
    pub metric: Metric,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// One summary per variant, in order of first appearance.
pub fn summarize(results: &[EpisodeResult]) -> Vec<Summary> {
    let mut names: Vec<&str> = Vec::new();
    for r in results {
        if !names.contains(&r.variant.as_str()) {
            names.push(&r.variant);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let rows: Vec<&EpisodeResult> = results.iter().filter(|r| r.variant == name).collect();
            let n = rows.len() as f64;
            let mean = rows.iter().map(|r| r.value).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r.value - mean).powi(2)).sum::<f64>() / n;
            Summary {
                variant: name.to_string(),
                metric: rows[0].metric,
                mean,
                std: var.sqrt(),
                n: rows.len(),
            }
        })
        .collect()
}

pub fn results_csv(results: &[EpisodeResult]) -> String {
    let mut out = String::from("task_id,seed,variant,metric,value\n");
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.task_id,
            r.seed,
            r.variant,
            r.metric.name(),
            r.value
        ));
    }
    out
}

pub fn summary_text(summaries: &[Summary]) -> String {
    let mut out = String::from("variant metric mean std n\n");
    for s in summaries {
        out.push_str(&format!("{} {} {:.6} {:.6} {}\n", s.variant, s.metric.name(), s.mean, s.std, s.n));
    }
    out
}
