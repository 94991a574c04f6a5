//! Conditional networks, token generation and the two-pass adapted forward.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::align::{init_projector, project, projector_names, projector_width, Projector};
use crate::encoder::{edge_embed, gcn_forward, EncoderVars, GraphTopology};
use crate::error::{Error, Result};
use crate::knowledge::{KnowledgeChannel, Level};
use crate::mol::ATOM_FEATURE_DIM;
use crate::optim::glorot;
use crate::tensor::{Bound, Matrix, ParamStore, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub cond_hidden: usize,
    /// Only `"sigmoid2"` (`2 · sigmoid`) is supported.
    pub token_activation: String,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            cond_hidden: 32,
            token_activation: "sigmoid2".into(),
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.token_activation != "sigmoid2" {
            return Err(Error::Config(format!(
                "adapt.token_activation must be \"sigmoid2\", got \"{}\"",
                self.token_activation
            )));
        }
        if self.cond_hidden == 0 {
            return Err(Error::Config("adapt.cond_hidden must be positive".into()));
        }
        Ok(())
    }
}

/// Which halves of the conditional-network input are visible, and whether
/// conditional networks run at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conditioning {
    pub on_2d: bool,
    pub on_knowledge: bool,
}

impl Conditioning {
    pub const FULL: Conditioning = Conditioning {
        on_2d: true,
        on_knowledge: true,
    };
    pub const NONE: Conditioning = Conditioning {
        on_2d: false,
        on_knowledge: false,
    };

    pub fn enabled(self) -> bool {
        self.on_2d || self.on_knowledge
    }
}

pub fn cond_names(k: usize) -> [String; 4] {
    ["w1", "b1", "w2", "b2"].map(|p| format!("adapt.cond{k}.{p}"))
}

/// Token width consumed at each level: atom tokens scale the raw features,
/// bond tokens scale hidden messages.
pub fn token_width(level: Level, hidden: usize) -> usize {
    match level {
        Level::Atom => ATOM_FEATURE_DIM,
        Level::Bond => hidden,
    }
}

/// Registers channel `k`'s conditional network: `W1` Glorot, everything else
/// zero, so tokens start at exactly 1.
pub fn init_conditional<R: Rng + ?Sized>(
    store: &mut ParamStore,
    k: usize,
    instance_width: usize,
    hidden: usize,
    out: usize,
    rng: &mut R,
) -> Result<()> {
    let [w1, b1, w2, b2] = cond_names(k);
    store.insert(w1, glorot(2 * instance_width, hidden, rng))?;
    store.insert(b1, Array2::zeros((1, hidden)))?;
    store.insert(w2, Array2::zeros((hidden, out)))?;
    store.insert(b2, Array2::zeros((1, out)))
}

#[derive(Debug, Clone, Copy)]
pub struct CondNet {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl CondNet {
    pub fn bind(bound: &Bound, k: usize) -> Result<Self> {
        let [w1, b1, w2, b2] = cond_names(k);
        Ok(CondNet {
            w1: bound.get(&w1)?,
            b1: bound.get(&b1)?,
            w2: bound.get(&w2)?,
            b2: bound.get(&b2)?,
        })
    }
}

/// `T = 2 · sigmoid(ReLU(concat(H, M̃) W1 + b1) W2 + b2)`. A masked half is
/// replaced by zeros.
pub fn generate_tokens(tape: &mut Tape, h: Var, mt: Var, net: CondNet, cond: Conditioning) -> Result<Var> {
    if tape.shape(h).0 != tape.shape(mt).0 {
        return Err(Error::dim("generate_tokens", tape.shape(h), tape.shape(mt)));
    }
    let h = if cond.on_2d { h } else { tape.constant(Array2::zeros(tape.shape(h))) };
    let mt = if cond.on_knowledge { mt } else { tape.constant(Array2::zeros(tape.shape(mt))) };
    let input = tape.concat_cols(&[h, mt])?;
    if tape.shape(input).1 != tape.shape(net.w1).0 {
        return Err(Error::dim("generate_tokens", tape.shape(input), tape.shape(net.w1)));
    }
    let z = tape.matmul(input, net.w1)?;
    let z = tape.add_row(z, net.b1)?;
    let z = tape.relu(z)?;
    let z = tape.matmul(z, net.w2)?;
    let z = tape.add_row(z, net.b2)?;
    let s = tape.sigmoid(z)?;
    tape.scale(s, 2.0)
}

/// `X ⊙ T`.
pub fn modulate_atoms(tape: &mut Tape, x: Var, tokens: Var) -> Result<Var> {
    if tape.shape(x) != tape.shape(tokens) {
        return Err(Error::dim("modulate_atoms", tape.shape(x), tape.shape(tokens)));
    }
    tape.mul(x, tokens)
}

/// Registers projectors and conditional networks for `channels`.
pub fn init_adapters<R: Rng + ?Sized>(
    store: &mut ParamStore,
    channels: &[(usize, Level, usize)],
    hidden: usize,
    cfg: &AdaptConfig,
    cond: Conditioning,
    rng: &mut R,
) -> Result<()> {
    for &(k, level, d_k) in channels {
        let width = projector_width(level, hidden);
        init_projector(store, k, d_k, width, rng)?;
        if cond.enabled() {
            init_conditional(store, k, width, cfg.cond_hidden, token_width(level, hidden), rng)?;
        }
    }
    Ok(())
}

/// Graph inputs that do not change across training steps.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub features: Matrix,
    pub topology: GraphTopology,
    pub channels: Vec<KnowledgeChannel>,
}

/// Tape outputs of one adapted forward.
#[derive(Debug, Clone)]
pub struct AdaptedOutput {
    /// `Σ_k H̃_{V,k}`, `[|V| x d]`.
    pub h: Var,
    /// Pass-1 node embeddings.
    pub base: Var,
    /// `(instance embeddings, projected knowledge)` per channel.
    pub align_pairs: Vec<(Var, Var)>,
    pub tokens: Vec<Var>,
}

/// Two-pass forward. Pass 1 runs the frozen encoder; pass 2 re-runs it once
/// per channel under that channel's tokens and sums the results. Without
/// conditioning every channel contributes the pass-1 embeddings.
///
/// A bond token is the mean of the conditional network applied to both
/// endpoint orders, so it does not depend on atom numbering.
pub fn adapted_forward(
    tape: &mut Tape,
    graph: &PreparedGraph,
    enc: &EncoderVars,
    bound: &Bound,
    cond: Conditioning,
) -> Result<AdaptedOutput> {
    if graph.channels.is_empty() {
        return Err(Error::Config("no knowledge channels selected".into()));
    }
    let x = tape.constant(graph.features.clone());
    let base = gcn_forward(tape, x, &graph.topology, enc, &[])?;
    let edges = if graph.channels.iter().any(|c| c.level == Level::Bond) {
        let forward = edge_embed(tape, base, &graph.topology)?;
        let hi = tape.slice_cols(forward, 0, tape.shape(base).1)?;
        let hj = tape.slice_cols(forward, tape.shape(base).1, tape.shape(base).1)?;
        let reversed = tape.concat_cols(&[hj, hi])?;
        Some((forward, reversed))
    } else {
        None
    };
    let mut align_pairs = Vec::with_capacity(graph.channels.len());
    let mut tokens = Vec::new();
    let mut sum: Option<Var> = None;
    for ch in &graph.channels {
        let inst = match ch.level {
            Level::Atom => base,
            Level::Bond => edges.expect("bond channel implies edge embeddings").0,
        };
        if !cond.enabled() && !bound.contains(&projector_names(ch.k).0) {
            sum = Some(match sum {
                None => base,
                Some(s) => tape.add(s, base)?,
            });
            continue;
        }
        let raw = tape.constant(ch.raw.clone());
        let mt = project(tape, raw, Projector::bind(bound, ch.k)?)?;
        align_pairs.push((inst, mt));
        let hk = if cond.enabled() {
            let net = CondNet::bind(bound, ch.k)?;
            let t = match (ch.level, edges) {
                (Level::Bond, Some((_, reversed))) => {
                    let a = generate_tokens(tape, inst, mt, net, cond)?;
                    let b = generate_tokens(tape, reversed, mt, net, cond)?;
                    let both = tape.add(a, b)?;
                    tape.scale(both, 0.5)?
                }
                _ => generate_tokens(tape, inst, mt, net, cond)?,
            };
            tokens.push(t);
            match ch.level {
                Level::Atom => {
                    let xm = modulate_atoms(tape, x, t)?;
                    gcn_forward(tape, xm, &graph.topology, enc, &[])?
                }
                Level::Bond => gcn_forward(tape, x, &graph.topology, enc, &[t])?,
            }
        } else {
            base
        };
        sum = Some(match sum {
            None => hk,
            Some(s) => tape.add(s, hk)?,
        });
    }
    Ok(AdaptedOutput {
        h: sum.expect("at least one channel"),
        base,
        align_pairs,
        tokens,
    })
}
