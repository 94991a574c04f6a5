//! Task heads, loss balancing and the adaptation loop.

mod balance;

pub use balance::{GradNormConfig, LossBalancer, MIN_WEIGHT};

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapt::{adapted_forward, init_adapters, AdaptConfig, Conditioning, PreparedGraph};
use crate::align::{alignment_loss_channel, alignment_loss_total, AlignConfig};
use crate::encoder::{readout, EncoderParams, EncoderVars, GraphTopology};
use crate::error::{Error, Result};
use crate::knowledge::{knowledge_set, KnowledgeConfig};
use crate::mol::{featurize_atoms, Dataset, Label, MolecularGraph, TaskKind};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::{grad_check, Bound, GradCheckOptions, GradCheckReport, Matrix, ParamStore, Tape, Var};

pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";
/// Logits are clamped to `±LOGIT_CLAMP` before the cross-entropy.
pub const LOGIT_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            epochs: 100,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Component switches of one adaptation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub use_alignment: bool,
    pub conditioning: Conditioning,
}

impl Variant {
    pub const FULL: Variant = Variant {
        use_alignment: true,
        conditioning: Conditioning::FULL,
    };
}

/// Everything an adaptation run needs besides data and the frozen encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptSpec {
    pub knowledge: KnowledgeConfig,
    pub align: AlignConfig,
    pub adapt: AdaptConfig,
    pub train: TrainConfig,
    pub gradnorm: GradNormConfig,
    pub variant: Variant,
}

impl Default for AdaptSpec {
    fn default() -> Self {
        AdaptSpec {
            knowledge: KnowledgeConfig::default(),
            align: AlignConfig::default(),
            adapt: AdaptConfig::default(),
            train: TrainConfig::default(),
            gradnorm: GradNormConfig::default(),
            variant: Variant::FULL,
        }
    }
}

impl AdaptSpec {
    pub fn validate(&self) -> Result<()> {
        self.align.validate()?;
        self.adapt.validate()?;
        if self.knowledge.channels.is_empty() {
            return Err(Error::Config("no knowledge channels selected".into()));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if !(self.train.lr > 0.0) {
            return Err(Error::Config("train.lr must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRow {
    pub step: usize,
    pub l_task: f64,
    pub l_align: f64,
    pub w_task: f64,
    pub w_align: f64,
    pub total: f64,
}

pub fn training_log_csv(rows: &[TrainLogRow]) -> String {
    let mut out = String::from("step,L_task,L_align,w_task,w_align,total\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.step, r.l_task, r.l_align, r.w_task, r.w_align, r.total
        ));
    }
    out
}

/// Features, topology and knowledge channels of `graph`.
pub fn prepare_graph(graph: &MolecularGraph, knowledge: &KnowledgeConfig) -> Result<PreparedGraph> {
    Ok(PreparedGraph {
        features: featurize_atoms(graph),
        topology: GraphTopology::new(graph),
        channels: knowledge_set(graph, knowledge)?,
    })
}

fn target(label: Option<Label>, kind: TaskKind) -> Result<f64> {
    match (kind, label) {
        (TaskKind::Classification, Some(Label::Class(c @ (0 | 1)))) => Ok(c as f64),
        (TaskKind::Classification, Some(Label::Class(c))) => {
            Err(Error::Config(format!("binary head cannot fit class {c}")))
        }
        (TaskKind::Regression, Some(Label::Real(y))) => Ok(y),
        (_, None) => Err(Error::InsufficientData("training graph without a label".into())),
        (kind, Some(label)) => Err(Error::Config(format!("label {label:?} does not fit a {kind:?} head"))),
    }
}

/// Head logits `H_G w + b` for graph embeddings `[B x d]`.
pub fn head_logits(tape: &mut Tape, graphs: Var, weight: Var, bias: Var) -> Result<Var> {
    let z = tape.matmul(graphs, weight)?;
    tape.add_row(z, bias)
}

/// Mean binary cross-entropy on clamped logits, or mean squared error.
pub fn task_loss(tape: &mut Tape, logits: Var, targets: &[f64], kind: TaskKind) -> Result<Var> {
    let (b, c) = tape.shape(logits);
    if c != 1 || b != targets.len() || b == 0 {
        return Err(Error::dim("task_loss", (b, c), (targets.len(), 1)));
    }
    let y = tape.constant(Array2::from_shape_vec((b, 1), targets.to_vec()).expect("column shape"));
    let per = match kind {
        TaskKind::Classification => {
            let z = tape.clamp(logits, -LOGIT_CLAMP, LOGIT_CLAMP)?;
            let e = tape.exp(z)?;
            let one_plus = tape.shift(e, 1.0)?;
            let softplus = tape.log(one_plus)?;
            let yz = tape.mul(y, z)?;
            tape.sub(softplus, yz)?
        }
        TaskKind::Regression => {
            let d = tape.sub(logits, y)?;
            tape.mul(d, d)?
        }
    };
    tape.mean(per)
}

fn frozen_snapshot(store: &ParamStore) -> BTreeMap<String, Vec<u64>> {
    store
        .iter()
        .filter(|(name, _)| store.is_frozen(name))
        .map(|(name, m)| (name.to_string(), m.iter().map(|v| v.to_bits()).collect()))
        .collect()
}

/// Fails with a frozen violation unless every frozen entry of `store` still
/// carries the bits of `encoder`.
pub fn verify_frozen(store: &ParamStore, encoder: &EncoderParams) -> Result<()> {
    let mut reference = ParamStore::new();
    encoder.register(&mut reference, true)?;
    for (name, value) in reference.iter() {
        let now = store
            .get(name)
            .map_err(|_| Error::FrozenViolation(format!("{name} missing after adaptation")))?;
        if !store.is_frozen(name) {
            return Err(Error::FrozenViolation(format!("{name} is no longer frozen")));
        }
        if now.dim() != value.dim() || now.iter().zip(value).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Err(Error::FrozenViolation(format!("{name} changed during adaptation")));
        }
    }
    Ok(())
}

/// A frozen encoder together with its trained adapters and head.
#[derive(Debug, Clone)]
pub struct AdaptedModel {
    pub store: ParamStore,
    pub task_kind: TaskKind,
    pub spec: AdaptSpec,
    pub balance: Option<[f64; 2]>,
    pub log: Vec<TrainLogRow>,
}

impl AdaptedModel {
    /// Encoder Θ₀ registered frozen plus freshly initialized adapters and a
    /// zero head, drawn from `ChaCha8Rng::seed_from_u64(spec.train.seed)`.
    pub fn initialize(encoder: &EncoderParams, task_kind: TaskKind, spec: &AdaptSpec, widths: &[usize]) -> Result<Self> {
        spec.validate()?;
        let hidden = encoder.hidden();
        let mut store = ParamStore::new();
        encoder.register(&mut store, true)?;
        let variant = spec.variant;
        if variant.use_alignment || variant.conditioning.enabled() {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.train.seed);
            let channels: Vec<_> = spec
                .knowledge
                .channels
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(n, (kind, &w))| (n + 1, kind.level(), w))
                .collect();
            init_adapters(&mut store, &channels, hidden, &spec.adapt, variant.conditioning, &mut rng)?;
        }
        store.insert(HEAD_WEIGHT, Array2::zeros((hidden, 1)))?;
        store.insert(HEAD_BIAS, Array2::zeros((1, 1)))?;
        Ok(AdaptedModel {
            store,
            task_kind,
            spec: spec.clone(),
            balance: variant.use_alignment.then_some([1.0, 1.0]),
            log: Vec::new(),
        })
    }

    /// Trainable entries of Φ, Γ, η plus the two balancer weights.
    pub fn trainable_count(&self) -> usize {
        self.store.count_trainable() + if self.balance.is_some() { 2 } else { 0 }
    }

    pub fn frozen_count(&self) -> usize {
        self.store.count_frozen()
    }

    pub fn encoder(&self) -> Result<EncoderParams> {
        EncoderParams::from_store(&self.store.subset("encoder."))
    }

    /// Head logit for one prepared graph.
    fn logit(&self, graph: &PreparedGraph) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let z = forward_logits(&mut tape, &bound, std::slice::from_ref(graph), self.spec.variant.conditioning)?.0;
        tape.item(z)
    }

    /// Sigmoid probability for classification, raw value for regression.
    pub fn predict(&self, graph: &MolecularGraph) -> Result<f64> {
        let prepared = prepare_graph(graph, &self.spec.knowledge)?;
        self.predict_prepared(&prepared)
    }

    pub fn predict_prepared(&self, graph: &PreparedGraph) -> Result<f64> {
        let z = self.logit(graph)?;
        Ok(match self.task_kind {
            TaskKind::Classification => 1.0 / (1.0 + (-z).exp()),
            TaskKind::Regression => z,
        })
    }
}

/// Channel widths implied by `knowledge` before any graph is seen.
pub fn channel_widths(knowledge: &KnowledgeConfig) -> Vec<usize> {
    knowledge.channels.iter().map(|c| c.width(knowledge)).collect()
}

/// Adapted logits `[B x 1]` for a batch plus the per-graph alignment pairs.
fn forward_logits(
    tape: &mut Tape,
    bound: &Bound,
    graphs: &[PreparedGraph],
    cond: Conditioning,
) -> Result<(Var, Vec<Vec<(Var, Var)>>)> {
    let enc = EncoderVars::from_bound(bound)?;
    let mut pooled = Vec::with_capacity(graphs.len());
    let mut pairs = Vec::with_capacity(graphs.len());
    for g in graphs {
        let out = adapted_forward(tape, g, &enc, bound, cond)?;
        pooled.push(readout(tape, out.h)?);
        pairs.push(out.align_pairs);
    }
    let hg = tape.concat_rows(&pooled)?;
    let z = head_logits(tape, hg, bound.get(HEAD_WEIGHT)?, bound.get(HEAD_BIAS)?)?;
    Ok((z, pairs))
}

struct StepLosses {
    task: Var,
    align: Option<Var>,
}

fn build_losses(
    tape: &mut Tape,
    bound: &Bound,
    graphs: &[PreparedGraph],
    targets: &[f64],
    kind: TaskKind,
    spec: &AdaptSpec,
) -> Result<StepLosses> {
    let (z, pairs) = forward_logits(tape, bound, graphs, spec.variant.conditioning)?;
    let task = task_loss(tape, z, targets, kind)?;
    let align = if spec.variant.use_alignment {
        let mut per_graph = Vec::with_capacity(pairs.len());
        for graph_pairs in pairs {
            let mut row = Vec::with_capacity(graph_pairs.len());
            for (h, mt) in graph_pairs {
                row.push(alignment_loss_channel(tape, h, mt, &spec.align)?);
            }
            per_graph.push(row);
        }
        Some(alignment_loss_total(tape, &per_graph)?)
    } else {
        None
    };
    Ok(StepLosses { task, align })
}

/// The weighted objective `w_task · L_task + w_align · L_align` on one batch,
/// for gradient checking.
pub fn objective(
    tape: &mut Tape,
    bound: &Bound,
    graphs: &[PreparedGraph],
    targets: &[f64],
    kind: TaskKind,
    spec: &AdaptSpec,
    weights: [f64; 2],
) -> Result<Var> {
    let l = build_losses(tape, bound, graphs, targets, kind, spec)?;
    let task = tape.scale(l.task, weights[0])?;
    match l.align {
        Some(a) => {
            let a = tape.scale(a, weights[1])?;
            tape.add(task, a)
        }
        None => Ok(task),
    }
}

fn norm_over(grads: &BTreeMap<String, Matrix>, prefix: &str) -> f64 {
    grads
        .iter()
        .filter(|(k, _)| k.starts_with(prefix))
        .map(|(_, g)| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Adds `U(-amplitude, amplitude)` noise to every trainable entry, moving a
/// freshly initialized model off its neutral point.
pub fn perturb_trainable(store: &mut ParamStore, amplitude: f64, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = store.trainable_names().map(String::from).collect();
    for name in names {
        store.update(&name, |m| m.mapv_inplace(|v| v + rng.random_range(-amplitude..amplitude)))?;
    }
    Ok(())
}

/// Amplitude of the trainable perturbation applied before gradient checking.
pub const GRADCHECK_AMPLITUDE: f64 = 0.3;

/// Finite-difference check of the balanced objective (unit weights) on one
/// labeled graph, with the adapters of a fresh model perturbed by
/// [`GRADCHECK_AMPLITUDE`] noise drawn from `seed`.
pub fn check_objective_gradients(
    graph: &MolecularGraph,
    kind: TaskKind,
    encoder: &EncoderParams,
    spec: &AdaptSpec,
    seed: u64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let y = target(graph.label, kind)?;
    let mut model = AdaptedModel::initialize(encoder, kind, spec, &channel_widths(&spec.knowledge))?;
    perturb_trainable(&mut model.store, GRADCHECK_AMPLITUDE, seed)?;
    let prepared = vec![prepare_graph(graph, &spec.knowledge)?];
    grad_check(
        |t, b| objective(t, b, &prepared, &[y], kind, spec, [1.0, 1.0]),
        &model.store,
        opts,
    )
}

/// Adapts a fresh model on `dataset.graphs[train]` starting from the frozen
/// `encoder`. Gradient norms for balancing are taken over the projectors.
pub fn adapt_train(dataset: &Dataset, train: &[usize], encoder: &EncoderParams, spec: &AdaptSpec) -> Result<AdaptedModel> {
    if train.is_empty() {
        return Err(Error::InsufficientData("empty training split".into()));
    }
    let kind = dataset.task_kind;
    let mut graphs = Vec::with_capacity(train.len());
    let mut targets = Vec::with_capacity(train.len());
    for &i in train {
        let g = dataset
            .graphs
            .get(i)
            .ok_or_else(|| Error::Contract(format!("training index {i} out of range")))?;
        graphs.push(prepare_graph(g, &spec.knowledge)?);
        targets.push(target(g.label, kind)?);
    }
    let mut model = AdaptedModel::initialize(encoder, kind, spec, &channel_widths(&spec.knowledge))?;
    let before = frozen_snapshot(&model.store);
    let mut balancer = spec.variant.use_alignment.then(|| LossBalancer::new(&spec.gradnorm));
    let mut adam = Adam::new(AdamConfig {
        lr: spec.train.lr,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(spec.train.seed ^ 0x5eed_0f_ba7c);
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    let mut step = 0;
    for _epoch in 0..spec.train.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(spec.train.batch_size) {
            let bg: Vec<PreparedGraph> = batch.iter().map(|&i| graphs[i].clone()).collect();
            let bt: Vec<f64> = batch.iter().map(|&i| targets[i]).collect();
            let mut tape = Tape::new();
            let bound = model.store.bind(&mut tape);
            let losses = build_losses(&mut tape, &bound, &bg, &bt, kind, spec)?;
            let l_task = tape.item(losses.task)?;
            let l_align = match losses.align {
                Some(a) => tape.item(a)?,
                None => 0.0,
            };
            let weights = balancer.as_ref().map_or([1.0, 0.0], |b| b.weights);
            let total = weights[0] * l_task + weights[1] * l_align;
            if !total.is_finite() || !l_task.is_finite() || !l_align.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at step {step}: L_task={l_task} L_align={l_align}"
                )));
            }
            tape.backward(losses.task)?;
            let g_task = bound.grads(&tape);
            let grads = match losses.align {
                Some(a) => {
                    tape.zero_grad();
                    tape.backward(a)?;
                    let g_align = bound.grads(&tape);
                    if let Some(b) = balancer.as_mut() {
                        let norms = [norm_over(&g_task, "align."), norm_over(&g_align, "align.")];
                        if b.initial.is_none() {
                            b.record_initial([l_task, l_align])?;
                        } else {
                            b.step([l_task, l_align], norms)?;
                        }
                    }
                    g_task
                        .into_iter()
                        .map(|(k, gt)| {
                            let ga = &g_align[&k];
                            (k, gt * weights[0] + ga * weights[1])
                        })
                        .collect()
                }
                None => g_task,
            };
            adam.step(&mut model.store, &grads)?;
            model.log.push(TrainLogRow {
                step,
                l_task,
                l_align,
                w_task: weights[0],
                w_align: weights[1],
                total,
            });
            step += 1;
        }
    }
    if frozen_snapshot(&model.store) != before {
        return Err(Error::FrozenViolation("encoder parameters changed during adaptation".into()));
    }
    verify_frozen(&model.store, encoder)?;
    model.balance = balancer.map(|b| b.weights);
    Ok(model)
}
