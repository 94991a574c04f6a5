//! Rule-based, non-parametric extraction of per-instance domain knowledge.
//!
//! Each extractor turns one kind of knowledge into a raw matrix with one row
//! per atom or per bond. Bond-level rows follow the graph's bond order, which
//! is also the row order of the encoder's edge embeddings.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mol::{BondOrder, MolecularGraph};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Atom,
    Bond,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    BondType,
    Geometry,
    AtomEnergy,
}

impl ChannelKind {
    pub fn name(self) -> &'static str {
        match self {
            ChannelKind::BondType => "bond_type",
            ChannelKind::Geometry => "geometry",
            ChannelKind::AtomEnergy => "atom_energy",
        }
    }

    pub fn level(self) -> Level {
        match self {
            ChannelKind::BondType | ChannelKind::Geometry => Level::Bond,
            ChannelKind::AtomEnergy => Level::Atom,
        }
    }

    pub fn width(self, cfg: &KnowledgeConfig) -> usize {
        match self {
            ChannelKind::BondType => BondOrder::ALL.len(),
            ChannelKind::Geometry => cfg.n_rbf,
            ChannelKind::AtomEnergy => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KnowledgeConfig {
    pub channels: Vec<ChannelKind>,
    pub n_rbf: usize,
    /// Å.
    pub cutoff: f64,
}

impl Default for KnowledgeConfig {
    fn default() -> Self {
        KnowledgeConfig {
            channels: vec![ChannelKind::BondType, ChannelKind::Geometry],
            n_rbf: 16,
            cutoff: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeChannel {
    /// 1-based position in the channel selection.
    pub k: usize,
    pub kind: ChannelKind,
    pub level: Level,
    pub raw: Matrix,
}

impl KnowledgeChannel {
    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn width(&self) -> usize {
        self.raw.ncols()
    }
}

fn channel(kind: ChannelKind, raw: Matrix) -> KnowledgeChannel {
    KnowledgeChannel {
        k: 1,
        kind,
        level: kind.level(),
        raw,
    }
}

/// One-hot over single/double/triple/aromatic, one row per bond.
pub fn extract_bond_type(graph: &MolecularGraph) -> KnowledgeChannel {
    let mut raw = Array2::zeros((graph.num_bonds(), BondOrder::ALL.len()));
    for (r, b) in graph.bonds.iter().enumerate() {
        raw[[r, b.order.index()]] = 1.0;
    }
    channel(ChannelKind::BondType, raw)
}

/// Gaussian radial basis of each bond length:
/// `exp(-(r - mu_t)^2 / (2 sigma^2))` with `mu_t` evenly spaced on
/// `[0, cutoff]` and `sigma = cutoff / (n_rbf - 1)` (`cutoff` when
/// `n_rbf == 1`). Lengths past the cutoff are not clamped.
pub fn extract_geometry(graph: &MolecularGraph, n_rbf: usize, cutoff: f64) -> Result<KnowledgeChannel> {
    let pre = |message: String| Error::Precondition {
        channel: ChannelKind::Geometry.name().into(),
        message,
    };
    if n_rbf == 0 {
        return Err(pre("n_rbf must be at least 1".into()));
    }
    if !(cutoff > 0.0 && cutoff.is_finite()) {
        return Err(pre(format!("cutoff must be positive, got {cutoff}")));
    }
    if !graph.has_positions() && graph.num_atoms() > 0 {
        return Err(pre(format!("graph {} has no 3D coordinates", graph.id)));
    }
    let (step, sigma) = if n_rbf == 1 {
        (0.0, cutoff)
    } else {
        let s = cutoff / (n_rbf - 1) as f64;
        (s, s)
    };
    let mut raw = Array2::zeros((graph.num_bonds(), n_rbf));
    for (r, b) in graph.bonds.iter().enumerate() {
        let (i, j) = b.endpoints();
        let pi = graph.atoms[i].position.expect("positions checked");
        let pj = graph.atoms[j].position.expect("positions checked");
        let dist = pi.iter().zip(pj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        for t in 0..n_rbf {
            let mu = t as f64 * step;
            raw[[r, t]] = (-(dist - mu).powi(2) / (2.0 * sigma * sigma)).exp();
        }
    }
    Ok(channel(ChannelKind::Geometry, raw))
}

/// Per-atom energy as a single column.
pub fn extract_atom_energy(graph: &MolecularGraph) -> Result<KnowledgeChannel> {
    if !graph.has_energies() && graph.num_atoms() > 0 {
        return Err(Error::Precondition {
            channel: ChannelKind::AtomEnergy.name().into(),
            message: format!("graph {} has atoms without energies", graph.id),
        });
    }
    let raw = Array2::from_shape_fn((graph.num_atoms(), 1), |(i, _)| {
        graph.atoms[i].energy.expect("energies checked")
    });
    Ok(channel(ChannelKind::AtomEnergy, raw))
}

fn extract(graph: &MolecularGraph, kind: ChannelKind, cfg: &KnowledgeConfig) -> Result<KnowledgeChannel> {
    let ch = match kind {
        ChannelKind::BondType => extract_bond_type(graph),
        ChannelKind::Geometry => extract_geometry(graph, cfg.n_rbf, cfg.cutoff)?,
        ChannelKind::AtomEnergy => extract_atom_energy(graph)?,
    };
    if ch.raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition {
            channel: kind.name().into(),
            message: format!("non-finite knowledge in graph {}", graph.id),
        });
    }
    Ok(ch)
}

/// Extracts every selected channel, numbered `k = 1..=K` in selection order.
pub fn knowledge_set(graph: &MolecularGraph, cfg: &KnowledgeConfig) -> Result<Vec<KnowledgeChannel>> {
    cfg.channels
        .iter()
        .enumerate()
        .map(|(n, &kind)| {
            let mut ch = extract(graph, kind, cfg)?;
            ch.k = n + 1;
            Ok(ch)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mol::{Atom, Bond, Element};
    use approx::assert_abs_diff_eq;

    fn pair(distance: f64, order: BondOrder) -> MolecularGraph {
        let mut g = MolecularGraph::new("pair");
        g.atoms.push(Atom::at(Element::C, [0.0, 0.0, 0.0]));
        g.atoms.push(Atom::at(Element::C, [distance, 0.0, 0.0]));
        g.bonds.push(Bond::new(0, 1, order).unwrap());
        g
    }

    fn benzene() -> MolecularGraph {
        let mut g = MolecularGraph::new("benzene");
        for k in 0..6 {
            let a = k as f64 * std::f64::consts::PI / 3.0;
            g.atoms.push(Atom::at(Element::C, [1.39 * a.cos(), 1.39 * a.sin(), 0.0]));
        }
        for k in 0..6 {
            g.bonds.push(Bond::new(k, (k + 1) % 6, BondOrder::Aromatic).unwrap());
        }
        g
    }

    fn water() -> MolecularGraph {
        let r = 0.9584;
        let theta = 104.45f64.to_radians();
        let mut g = MolecularGraph::new("water");
        g.atoms.push(Atom::at(Element::O, [0.0, 0.0, 0.0]));
        g.atoms.push(Atom::at(Element::H, [r, 0.0, 0.0]));
        g.atoms.push(Atom::at(Element::H, [r * theta.cos(), r * theta.sin(), 0.0]));
        g.bonds.push(Bond::new(0, 1, BondOrder::Single).unwrap());
        g.bonds.push(Bond::new(0, 2, BondOrder::Single).unwrap());
        g
    }

    #[test]
    fn bond_type_one_hots() {
        let ch = extract_bond_type(&pair(1.5, BondOrder::Single));
        assert_eq!(ch.raw.row(0).to_vec(), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(ch.level, Level::Bond);
        let ch = extract_bond_type(&benzene());
        assert_eq!(ch.raw.nrows(), 6);
        assert!(ch.raw.rows().into_iter().all(|r| r.to_vec() == vec![0.0, 0.0, 0.0, 1.0]));
        let mut lone = MolecularGraph::new("lone");
        lone.atoms.push(Atom::new(Element::C));
        assert_eq!(extract_bond_type(&lone).raw.dim(), (0, 4));
    }

    #[test]
    fn geometry_at_zero_distance() {
        let ch = extract_geometry(&pair(0.0, BondOrder::Single), 4, 3.0).unwrap();
        let expected = [1.0, (-0.5f64).exp(), (-2.0f64).exp(), (-4.5f64).exp()];
        for (got, want) in ch.raw.row(0).iter().zip(expected) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn geometry_peaks_at_centers() {
        let ch = extract_geometry(&pair(2.0, BondOrder::Single), 4, 3.0).unwrap();
        assert_eq!(ch.raw[[0, 2]], 1.0);
        let far = extract_geometry(&pair(20.0, BondOrder::Single), 4, 3.0).unwrap();
        assert!(far.raw.iter().all(|v| v.is_finite() && *v < 1e-10));
    }

    #[test]
    fn geometry_of_water_matches_scalar_formula() {
        let g = water();
        let ch = extract_geometry(&g, 16, 8.0).unwrap();
        assert_eq!(ch.raw.dim(), (2, 16));
        for (r, b) in g.bonds.iter().enumerate() {
            let (i, j) = b.endpoints();
            let (p, q) = (g.atoms[i].position.unwrap(), g.atoms[j].position.unwrap());
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
            assert_abs_diff_eq!(d, 0.9584, epsilon = 1e-12);
            for t in 0..16 {
                let mu = 8.0 * t as f64 / 15.0;
                let sigma = 8.0 / 15.0;
                let want = (-(d - mu) * (d - mu) / (2.0 * sigma * sigma)).exp();
                assert_abs_diff_eq!(ch.raw[[r, t]], want, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn geometry_is_rigid_motion_invariant() {
        let g = water();
        let base = extract_geometry(&g, 16, 8.0).unwrap().raw;
        let (c, s) = (0.6f64, 0.8f64);
        let mut moved = g.clone();
        for a in &mut moved.atoms {
            let [x, y, z] = a.position.unwrap();
            a.position = Some([c * x - s * y + 3.0, s * x + c * y - 1.0, z + 0.5]);
        }
        let rot = extract_geometry(&moved, 16, 8.0).unwrap().raw;
        assert_abs_diff_eq!(base, rot, epsilon = 1e-12);
    }

    #[test]
    fn geometry_requires_positions() {
        let mut g = MolecularGraph::new("flat");
        g.atoms.push(Atom::new(Element::C));
        g.atoms.push(Atom::new(Element::C));
        g.bonds.push(Bond::new(0, 1, BondOrder::Single).unwrap());
        let cfg = KnowledgeConfig {
            channels: vec![ChannelKind::Geometry],
            ..Default::default()
        };
        let err = knowledge_set(&g, &cfg).unwrap_err();
        assert!(err.to_string().contains("geometry"), "{err}");
    }

    #[test]
    fn atom_energy_passthrough_and_permutation() {
        let mut g = MolecularGraph::new("e");
        for e in [-1.0, 2.5] {
            let mut a = Atom::at(Element::C, [0.0; 3]);
            a.energy = Some(e);
            g.atoms.push(a);
        }
        let ch = extract_atom_energy(&g).unwrap();
        assert_eq!(ch.raw, ndarray::array![[-1.0], [2.5]]);
        let p = g.permuted(&[1, 0], &[]);
        assert_eq!(extract_atom_energy(&p).unwrap().raw, ndarray::array![[2.5], [-1.0]]);
        for a in &mut g.atoms {
            a.energy = Some(0.0);
        }
        assert!(extract_atom_energy(&g).unwrap().raw.iter().all(|&v| v == 0.0));
        g.atoms[0].energy = None;
        assert!(extract_atom_energy(&g).is_err());
    }

    #[test]
    fn selection_order_and_indices() {
        let g = water();
        let one = KnowledgeConfig {
            channels: vec![ChannelKind::BondType],
            ..Default::default()
        };
        assert_eq!(knowledge_set(&g, &one).unwrap().len(), 1);
        let two = KnowledgeConfig::default();
        let set = knowledge_set(&g, &two).unwrap();
        assert_eq!(set.iter().map(|c| c.k).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(set.iter().map(|c| c.level).collect::<Vec<_>>(), vec![Level::Bond, Level::Bond]);
        assert_eq!(set, knowledge_set(&g, &two).unwrap());
    }
}
