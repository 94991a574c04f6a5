use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{augment_edge_drop, gcn_forward, readout, EncoderConfig, EncoderParams, EncoderVars, GraphTopology};
use crate::error::{Error, Result};
use crate::mol::{featurize_atoms, Dataset, MolecularGraph};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::{ParamStore, Tape, Var};

/// One optimizer step of pre-training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainLog {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

/// Symmetric graph-level InfoNCE between two views `[B x d]`: row `i` of `a`
/// and row `i` of `b` are positives, every other row of the opposite view a
/// negative. Returns `½ (mean row CE + mean column CE)`.
pub fn graph_infonce(tape: &mut Tape, a: Var, b: Var, tau: f64) -> Result<Var> {
    let logits = tape.cosine_logits(a, b, tau)?;
    let rows = tape.diagonal_nll(logits)?;
    let cols_t = tape.transpose(logits)?;
    let cols = tape.diagonal_nll(cols_t)?;
    let r = tape.mean(rows)?;
    let c = tape.mean(cols)?;
    let both = tape.add(r, c)?;
    tape.scale(both, 0.5)
}

fn view_embedding(tape: &mut Tape, graph: &MolecularGraph, enc: &EncoderVars) -> Result<Var> {
    let x = tape.constant(featurize_atoms(graph));
    let h = gcn_forward(tape, x, &GraphTopology::new(graph), enc, &[])?;
    readout(tape, h)
}

/// Contrastive pre-training on topology alone. Each batch draws two
/// edge-dropped views of every graph; batches with fewer than two graphs are
/// skipped.
pub fn pretrain_contrastive(dataset: &Dataset, cfg: &EncoderConfig) -> Result<(EncoderParams, Vec<PretrainLog>)> {
    if dataset.is_empty() {
        return Err(Error::InsufficientData("pre-training needs at least one graph".into()));
    }
    if cfg.pretrain_batch_size < 2 {
        return Err(Error::Config("pre-training batch size must be at least 2 (no negatives)".into()));
    }
    if !(cfg.pretrain_temperature > 0.0) {
        return Err(Error::Config("pre-training temperature must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = EncoderParams::from_config(cfg, &mut rng)?;
    let mut store = ParamStore::new();
    init.register(&mut store, false)?;
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.pretrain_lr,
        ..AdamConfig::default()
    });
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = Vec::new();
    let mut step = 0;
    for epoch in 0..cfg.pretrain_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.pretrain_batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let enc = EncoderVars::from_bound(&bound)?;
            let mut va = Vec::with_capacity(batch.len());
            let mut vb = Vec::with_capacity(batch.len());
            for &i in batch {
                let g = &dataset.graphs[i];
                let a = augment_edge_drop(g, cfg.drop_ratio, &mut rng)?;
                let b = augment_edge_drop(g, cfg.drop_ratio, &mut rng)?;
                va.push(view_embedding(&mut tape, &a, &enc)?);
                vb.push(view_embedding(&mut tape, &b, &enc)?);
            }
            let a = tape.concat_rows(&va)?;
            let b = tape.concat_rows(&vb)?;
            let loss = graph_infonce(&mut tape, a, b, cfg.pretrain_temperature)?;
            let value = tape.item(loss)?;
            if !value.is_finite() {
                return Err(Error::Numeric(format!("pre-training loss {value} at step {step}")));
            }
            tape.backward(loss)?;
            adam.step(&mut store, &bound.grads(&tape))?;
            log.push(PretrainLog { epoch, step, loss: value });
            step += 1;
        }
    }
    Ok((EncoderParams::from_store(&store)?, log))
}
