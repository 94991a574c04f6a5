//! Knowledge projectors and per-instance contrastive alignment.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knowledge::Level;
use crate::optim::glorot;
use crate::tensor::{Bound, ParamStore, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignConfig {
    pub temperature: f64,
    /// Adds the knowledge-anchored direction to every channel loss.
    pub symmetric: bool,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            temperature: 0.1,
            symmetric: false,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config(format!(
                "align.temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

pub fn projector_names(k: usize) -> (String, String) {
    (format!("align.proj{k}.weight"), format!("align.proj{k}.bias"))
}

/// Output width of channel `k`'s projector: `d` for atoms, `2d` for bonds.
pub fn projector_width(level: Level, hidden: usize) -> usize {
    match level {
        Level::Atom => hidden,
        Level::Bond => 2 * hidden,
    }
}

/// Registers a Glorot-initialized affine projector `[d_k x d_out]` with zero bias.
pub fn init_projector<R: Rng + ?Sized>(
    store: &mut ParamStore,
    k: usize,
    d_k: usize,
    d_out: usize,
    rng: &mut R,
) -> Result<()> {
    let (w, b) = projector_names(k);
    store.insert(w, glorot(d_k, d_out, rng))?;
    store.insert(b, Array2::zeros((1, d_out)))
}

/// Tape handles of one projector.
#[derive(Debug, Clone, Copy)]
pub struct Projector {
    pub weight: Var,
    pub bias: Var,
}

impl Projector {
    pub fn bind(bound: &Bound, k: usize) -> Result<Self> {
        let (w, b) = projector_names(k);
        Ok(Projector {
            weight: bound.get(&w)?,
            bias: bound.get(&b)?,
        })
    }
}

/// `M̃ = M W + b`.
pub fn project(tape: &mut Tape, raw: Var, proj: Projector) -> Result<Var> {
    if tape.shape(raw).1 != tape.shape(proj.weight).0 {
        return Err(Error::dim("project", tape.shape(raw), tape.shape(proj.weight)));
    }
    let m = tape.matmul(raw, proj.weight)?;
    tape.add_row(m, proj.bias)
}

/// Sum over anchors `a` of `−ln softmax_b(cos(h_a, m̃_b) / τ)[a]`, with the
/// candidates `b` ranging over the same graph's instances.
pub fn alignment_loss_channel(tape: &mut Tape, h: Var, mt: Var, cfg: &AlignConfig) -> Result<Var> {
    if tape.shape(h) != tape.shape(mt) {
        return Err(Error::dim("alignment_loss_channel", tape.shape(h), tape.shape(mt)));
    }
    if tape.shape(h).0 == 0 {
        return Err(Error::InsufficientData("alignment needs at least one instance".into()));
    }
    if tape.data(h).iter().chain(tape.data(mt)).any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN in alignment inputs".into()));
    }
    let logits = tape.cosine_logits(h, mt, cfg.temperature)?;
    let nll = tape.diagonal_nll(logits)?;
    let mut loss = tape.sum(nll)?;
    if cfg.symmetric {
        let back = tape.transpose(logits)?;
        let nll = tape.diagonal_nll(back)?;
        let extra = tape.sum(nll)?;
        loss = tape.add(loss, extra)?;
    }
    Ok(loss)
}

/// `per_graph[g][k]` is graph `g`'s loss on channel `k`. Each channel is
/// averaged over graphs, then channels are summed.
pub fn alignment_loss_total(tape: &mut Tape, per_graph: &[Vec<Var>]) -> Result<Var> {
    let Some(first) = per_graph.first() else {
        return Err(Error::InsufficientData("alignment over an empty batch".into()));
    };
    let k = first.len();
    if k == 0 {
        return Err(Error::Config("alignment needs at least one channel".into()));
    }
    if per_graph.iter().any(|row| row.len() != k) {
        return Err(Error::Contract("ragged per-graph channel losses".into()));
    }
    let mut total = None;
    for c in 0..k {
        let column: Vec<Var> = per_graph.iter().map(|row| row[c]).collect();
        let stacked = tape.concat_rows(&column)?;
        let mean = tape.mean(stacked)?;
        total = Some(match total {
            None => mean,
            Some(t) => tape.add(t, mean)?,
        });
    }
    Ok(total.expect("at least one channel"))
}
