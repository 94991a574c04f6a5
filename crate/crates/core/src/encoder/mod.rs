//! Two-dimensional GCN encoder, edge embeddings, readout and contrastive
//! pre-training.

mod augment;
mod pretrain;

pub use augment::augment_edge_drop;
pub use pretrain::{graph_infonce, pretrain_contrastive, PretrainLog};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mol::{MolecularGraph, ATOM_FEATURE_DIM};
use crate::optim::glorot;
use crate::tensor::{Bound, Matrix, ParamStore, Tape, Var};

/// Encoder architecture plus the contrastive pre-training schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub layers: usize,
    pub pretrain_epochs: usize,
    pub pretrain_batch_size: usize,
    pub pretrain_lr: f64,
    pub pretrain_temperature: f64,
    pub drop_ratio: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden: 64,
            layers: 3,
            pretrain_epochs: 100,
            pretrain_batch_size: 32,
            pretrain_lr: 1e-3,
            pretrain_temperature: 0.5,
            drop_ratio: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `[d_in_l x d]`.
    pub weight: Matrix,
    /// `[1 x d]`.
    pub bias: Matrix,
}

/// Weights of every GCN layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<LayerParams>,
}

pub fn layer_weight_name(l: usize) -> String {
    format!("encoder.layer{l}.weight")
}

pub fn layer_bias_name(l: usize) -> String {
    format!("encoder.layer{l}.bias")
}

impl EncoderParams {
    /// Glorot weights, zero biases.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden: usize, layers: usize, rng: &mut R) -> Result<Self> {
        if layers == 0 || hidden == 0 || input_dim == 0 {
            return Err(Error::Config("encoder needs at least one layer of non-zero width".into()));
        }
        let layers = (0..layers)
            .map(|l| LayerParams {
                weight: glorot(if l == 0 { input_dim } else { hidden }, hidden, rng),
                bias: Array2::zeros((1, hidden)),
            })
            .collect();
        Ok(EncoderParams { layers })
    }

    pub fn from_config<R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Result<Self> {
        Self::init(ATOM_FEATURE_DIM, cfg.hidden, cfg.layers, rng)
    }

    /// Fresh weights drawn from `ChaCha8Rng::seed_from_u64(cfg.seed)`.
    pub fn seeded(cfg: &EncoderConfig) -> Result<Self> {
        Self::from_config(cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Registers every layer under `encoder.layer{l}.*`.
    pub fn register(&self, store: &mut ParamStore, frozen: bool) -> Result<()> {
        for (l, layer) in self.layers.iter().enumerate() {
            let (w, b) = (layer_weight_name(l), layer_bias_name(l));
            if frozen {
                store.insert_frozen(w, layer.weight.clone())?;
                store.insert_frozen(b, layer.bias.clone())?;
            } else {
                store.insert(w, layer.weight.clone())?;
                store.insert(b, layer.bias.clone())?;
            }
        }
        Ok(())
    }

    pub fn from_store(store: &ParamStore) -> Result<Self> {
        let mut layers = Vec::new();
        while store.contains(&layer_weight_name(layers.len())) {
            let l = layers.len();
            layers.push(LayerParams {
                weight: store.get(&layer_weight_name(l))?.clone(),
                bias: store.get(&layer_bias_name(l))?.clone(),
            });
        }
        if layers.is_empty() {
            return Err(Error::Config("no encoder layers in parameter store".into()));
        }
        let hidden = layers[0].weight.ncols();
        for (l, layer) in layers.iter().enumerate() {
            let rows = if l == 0 { layer.weight.nrows() } else { hidden };
            if layer.weight.dim() != (rows, hidden) || layer.bias.dim() != (1, hidden) {
                return Err(Error::dim("encoder layer", layer.weight.dim(), (rows, hidden)));
            }
        }
        Ok(EncoderParams { layers })
    }
}

/// Encoder weights as tape nodes.
#[derive(Debug, Clone)]
pub struct EncoderVars {
    pub layers: Vec<(Var, Var)>,
}

impl EncoderVars {
    pub fn from_bound(bound: &Bound) -> Result<Self> {
        let mut layers = Vec::new();
        while bound.contains(&layer_weight_name(layers.len())) {
            let l = layers.len();
            layers.push((bound.get(&layer_weight_name(l))?, bound.get(&layer_bias_name(l))?));
        }
        if layers.is_empty() {
            return Err(Error::Config("no encoder layers bound".into()));
        }
        Ok(EncoderVars { layers })
    }

    /// Binds `params` as constants.
    pub fn constants(params: &EncoderParams, tape: &mut Tape) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|l| (tape.constant(l.weight.clone()), tape.constant(l.bias.clone())))
            .collect();
        EncoderVars { layers }
    }
}

/// Message-passing structure of one graph. Bond `k = (i, j)` yields the
/// directed edges `i -> j` at `2k` and `j -> i` at `2k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphTopology {
    pub num_atoms: usize,
    pub num_bonds: usize,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    /// Bond index of every directed edge.
    pub bond_of_edge: Vec<usize>,
    /// `[2|E| x 1]`, `1 / sqrt((deg u + 1)(deg v + 1))`.
    pub edge_coef: Matrix,
    /// `[|V| x 1]`, `1 / (deg v + 1)`.
    pub self_coef: Matrix,
    pub bond_i: Vec<usize>,
    pub bond_j: Vec<usize>,
}

impl GraphTopology {
    pub fn new(graph: &MolecularGraph) -> Self {
        let deg = graph.degrees();
        let e = graph.num_bonds();
        let mut src = Vec::with_capacity(2 * e);
        let mut dst = Vec::with_capacity(2 * e);
        let mut bond_of_edge = Vec::with_capacity(2 * e);
        let mut bond_i = Vec::with_capacity(e);
        let mut bond_j = Vec::with_capacity(e);
        for (k, bond) in graph.bonds.iter().enumerate() {
            let (i, j) = bond.endpoints();
            bond_i.push(i);
            bond_j.push(j);
            src.extend([i, j]);
            dst.extend([j, i]);
            bond_of_edge.extend([k, k]);
        }
        let edge_coef = Array2::from_shape_fn((2 * e, 1), |(r, _)| {
            1.0 / (((deg[src[r]] + 1) * (deg[dst[r]] + 1)) as f64).sqrt()
        });
        let self_coef = Array2::from_shape_fn((graph.num_atoms(), 1), |(v, _)| 1.0 / (deg[v] + 1) as f64);
        GraphTopology {
            num_atoms: graph.num_atoms(),
            num_bonds: e,
            src,
            dst,
            bond_of_edge,
            edge_coef,
            self_coef,
            bond_i,
            bond_j,
        }
    }
}

/// GCN forward on `tape`. Each layer computes `M = H W`, then
/// `h_v = c_vv m_v + sum_u c_uv (g_uv ⊙ m_u) + b`, with ReLU on every layer
/// but the last. `g_uv` is the product of the supplied bond tokens
/// (`[|E| x d]` each).
pub fn gcn_forward(
    tape: &mut Tape,
    x: Var,
    topo: &GraphTopology,
    enc: &EncoderVars,
    bond_tokens: &[Var],
) -> Result<Var> {
    if tape.shape(x).0 != topo.num_atoms {
        return Err(Error::dim("gcn_forward", tape.shape(x), (topo.num_atoms, tape.shape(x).1)));
    }
    let gate = match bond_tokens {
        [] => None,
        [first, rest @ ..] => {
            let hidden = tape.shape(enc.layers[0].0).1;
            for &t in bond_tokens {
                if tape.shape(t) != (topo.num_bonds, hidden) {
                    return Err(Error::dim("bond tokens", tape.shape(t), (topo.num_bonds, hidden)));
                }
            }
            let mut g = *first;
            for &t in rest {
                g = tape.mul(g, t)?;
            }
            Some(tape.gather_rows(g, topo.bond_of_edge.clone())?)
        }
    };
    let self_coef = tape.constant(topo.self_coef.clone());
    let edge_coef = tape.constant(topo.edge_coef.clone());
    let mut h = x;
    let last = enc.layers.len() - 1;
    for (l, &(w, b)) in enc.layers.iter().enumerate() {
        let m = tape.matmul(h, w)?;
        let own = tape.mul_col(m, self_coef)?;
        let mut msg = tape.gather_rows(m, topo.src.clone())?;
        msg = tape.mul_col(msg, edge_coef)?;
        if let Some(g) = gate {
            msg = tape.mul(msg, g)?;
        }
        let agg = tape.scatter_add_rows(msg, topo.dst.clone(), topo.num_atoms)?;
        let sum = tape.add(own, agg)?;
        h = tape.add_row(sum, b)?;
        if l != last {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

/// `[|E| x 2d]`, row `k` is `concat(h_i, h_j)` for bond `k = (i, j)`, `i < j`.
pub fn edge_embed(tape: &mut Tape, h: Var, topo: &GraphTopology) -> Result<Var> {
    let hi = tape.gather_rows(h, topo.bond_i.clone())?;
    let hj = tape.gather_rows(h, topo.bond_j.clone())?;
    tape.concat_cols(&[hi, hj])
}

/// Sum pooling, `[1 x d]`.
pub fn readout(tape: &mut Tape, h: Var) -> Result<Var> {
    if tape.shape(h).0 == 0 {
        return Err(Error::InsufficientData("readout of a graph with no atoms".into()));
    }
    tape.sum_cols(h)
}

/// Token-free node embeddings of `graph` under fixed `params`.
pub fn embed_nodes(graph: &MolecularGraph, params: &EncoderParams) -> Result<Matrix> {
    let mut tape = Tape::new();
    let enc = EncoderVars::constants(params, &mut tape);
    let x = tape.constant(crate::mol::featurize_atoms(graph));
    let h = gcn_forward(&mut tape, x, &GraphTopology::new(graph), &enc, &[])?;
    Ok(tape.detach(h))
}
