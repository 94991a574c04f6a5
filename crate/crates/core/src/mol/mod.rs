//! Molecular graph data model, the MGF text format, atom featurization and
//! seeded dataset splitting.

mod features;
pub mod mgf;
mod split;

pub use features::{featurize_atoms, ATOM_FEATURE_DIM, MAX_DEGREE};
pub use mgf::{parse_mgf, serialize_mgf};
pub use split::{sample_mshot, split_property, EpisodeSplit};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Element vocabulary. Anything outside it is [`Element::Other`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Element {
    H,
    C,
    N,
    O,
    F,
    S,
    Cl,
    Br,
    P,
    I,
    Other,
}

impl Element {
    pub const ALL: [Element; 11] = [
        Element::H,
        Element::C,
        Element::N,
        Element::O,
        Element::F,
        Element::S,
        Element::Cl,
        Element::Br,
        Element::P,
        Element::I,
        Element::Other,
    ];

    pub fn from_symbol(symbol: &str) -> Element {
        match symbol {
            "H" => Element::H,
            "C" => Element::C,
            "N" => Element::N,
            "O" => Element::O,
            "F" => Element::F,
            "S" => Element::S,
            "Cl" => Element::Cl,
            "Br" => Element::Br,
            "P" => Element::P,
            "I" => Element::I,
            _ => Element::Other,
        }
    }

    /// `X` for [`Element::Other`].
    pub fn symbol(self) -> &'static str {
        match self {
            Element::H => "H",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
            Element::S => "S",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::P => "P",
            Element::I => "I",
            Element::Other => "X",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub const ALL: [BondOrder; 4] = [BondOrder::Single, BondOrder::Double, BondOrder::Triple, BondOrder::Aromatic];

    /// MGF code: 1, 2, 3, or 4 for aromatic.
    pub fn code(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_code(code: u8) -> Option<BondOrder> {
        match code {
            1 => Some(BondOrder::Single),
            2 => Some(BondOrder::Double),
            3 => Some(BondOrder::Triple),
            4 => Some(BondOrder::Aromatic),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub element: Element,
    /// Cartesian position in Å.
    pub position: Option<[f64; 3]>,
    /// Energy in eV; only representable alongside a position.
    pub energy: Option<f64>,
}

impl Atom {
    pub fn new(element: Element) -> Self {
        Atom {
            element,
            position: None,
            energy: None,
        }
    }

    pub fn at(element: Element, position: [f64; 3]) -> Self {
        Atom {
            element,
            position: Some(position),
            energy: None,
        }
    }
}

/// Undirected bond, stored with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bond {
    i: usize,
    j: usize,
    pub order: BondOrder,
}

impl Bond {
    /// Canonicalizes the endpoint order. Self-bonds are rejected.
    pub fn new(a: usize, b: usize, order: BondOrder) -> Option<Bond> {
        if a == b {
            return None;
        }
        Some(Bond {
            i: a.min(b),
            j: a.max(b),
            order,
        })
    }

    pub fn endpoints(&self) -> (usize, usize) {
        (self.i, self.j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Label {
    Real(f64),
    Class(i64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Regression,
}

impl TaskKind {
    pub fn matches(self, label: &Label) -> bool {
        matches!(
            (self, label),
            (TaskKind::Classification, Label::Class(_)) | (TaskKind::Regression, Label::Real(_))
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MolecularGraph {
    pub id: String,
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    pub label: Option<Label>,
}

impl MolecularGraph {
    pub fn new(id: impl Into<String>) -> Self {
        MolecularGraph {
            id: id.into(),
            atoms: Vec::new(),
            bonds: Vec::new(),
            label: None,
        }
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn num_bonds(&self) -> usize {
        self.bonds.len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.atoms.len()];
        for b in &self.bonds {
            let (i, j) = b.endpoints();
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    pub fn has_positions(&self) -> bool {
        !self.atoms.is_empty() && self.atoms.iter().all(|a| a.position.is_some())
    }

    pub fn has_energies(&self) -> bool {
        !self.atoms.is_empty() && self.atoms.iter().all(|a| a.energy.is_some())
    }

    /// Checks the structural invariants: bond endpoints in range, no
    /// duplicate pairs, and positions on all atoms or none.
    pub fn validate(&self) -> Result<()> {
        let semantic = |message: String| Error::Semantic {
            record: self.id.clone(),
            message,
        };
        let mut seen = std::collections::HashSet::new();
        for b in &self.bonds {
            let (i, j) = b.endpoints();
            if let Some(bad) = [i, j].into_iter().find(|&k| k >= self.atoms.len()) {
                return Err(semantic(format!("bond references missing atom {bad}")));
            }
            if !seen.insert((i, j)) {
                return Err(semantic(format!("duplicate bond {i}-{j}")));
            }
        }
        let with_pos = self.atoms.iter().filter(|a| a.position.is_some()).count();
        if with_pos != 0 && with_pos != self.atoms.len() {
            return Err(semantic("positions given for some atoms but not all".into()));
        }
        if self.atoms.iter().any(|a| a.energy.is_some() && a.position.is_none()) {
            return Err(semantic("energy given without a position".into()));
        }
        Ok(())
    }

    /// Relabels atoms so that old atom `i` becomes `perm[i]`, and reorders
    /// bonds by `bond_perm` (new bond `k` is old bond `bond_perm[k]`).
    pub fn permuted(&self, perm: &[usize], bond_perm: &[usize]) -> MolecularGraph {
        let mut atoms = self.atoms.clone();
        for (old, &new) in perm.iter().enumerate() {
            atoms[new] = self.atoms[old].clone();
        }
        let bonds = bond_perm
            .iter()
            .map(|&k| {
                let b = self.bonds[k];
                let (i, j) = b.endpoints();
                Bond::new(perm[i], perm[j], b.order).expect("permutation keeps endpoints distinct")
            })
            .collect();
        MolecularGraph {
            id: self.id.clone(),
            atoms,
            bonds,
            label: self.label,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub graphs: Vec<MolecularGraph>,
    pub task_kind: TaskKind,
}

impl Dataset {
    pub fn new(graphs: Vec<MolecularGraph>, task_kind: TaskKind) -> Result<Self> {
        if let Some(g) = graphs
            .iter()
            .find(|g| g.label.as_ref().is_some_and(|l| !task_kind.matches(l)))
        {
            return Err(Error::Semantic {
                record: g.id.clone(),
                message: format!("label does not match a {task_kind:?} dataset"),
            });
        }
        Ok(Dataset { graphs, task_kind })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn subset(&self, ids: &[usize]) -> Dataset {
        Dataset {
            graphs: ids.iter().map(|&i| self.graphs[i].clone()).collect(),
            task_kind: self.task_kind,
        }
    }
}
