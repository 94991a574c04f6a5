//! Seeded synthetic molecule generators for tests, benchmarks and demos.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::mol::{Atom, Bond, BondOrder, Dataset, Element, Label, MolecularGraph, TaskKind};

const ELEMENTS: [Element; 3] = [Element::C, Element::N, Element::O];

/// Random connected skeleton of `n` atoms: a random tree plus up to two ring
/// closures, every atom placed in 3D with bonded neighbours 1.1–1.6 Å apart.
pub fn random_skeleton<R: Rng + ?Sized>(rng: &mut R, id: &str, n: usize) -> MolecularGraph {
    let mut g = MolecularGraph::new(id);
    let mut pos: Vec<[f64; 3]> = Vec::with_capacity(n);
    for j in 0..n {
        let el = if rng.random_bool(0.6) { Element::C } else { ELEMENTS[rng.random_range(1..3)] };
        let p = if j == 0 {
            [0.0; 3]
        } else {
            let i = rng.random_range(0..j);
            g.bonds.push(Bond::new(i, j, BondOrder::Single).expect("distinct atoms"));
            let len = rng.random_range(1.1..1.6);
            let dir: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-6);
            std::array::from_fn(|c| pos[i][c] + len * dir[c] / norm)
        };
        pos.push(p);
        g.atoms.push(Atom::at(el, p));
    }
    for _ in 0..2 {
        if n < 5 || !rng.random_bool(0.5) {
            continue;
        }
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b && !g.bonds.iter().any(|x| x.endpoints() == (a.min(b), a.max(b))) {
            g.bonds.push(Bond::new(a, b, BondOrder::Single).expect("distinct atoms"));
        }
    }
    g
}

/// The bond order implied by the degree sum `s` of bond `(i, j)`, in the
/// spirit of valence saturation: triple for `s <= 3`, double for `s = 4`,
/// single for `s = 5`, aromatic for `s >= 6`.
pub fn topology_bond_order(degrees: &[usize], i: usize, j: usize) -> BondOrder {
    match degrees[i] + degrees[j] {
        0..=3 => BondOrder::Triple,
        4 => BondOrder::Double,
        5 => BondOrder::Single,
        _ => BondOrder::Aromatic,
    }
}

/// Molecules whose bond orders are a deterministic function of local
/// topology (see [`topology_bond_order`]).
pub fn topology_bond_corpus(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graphs = (0..n)
        .map(|m| {
            let size = rng.random_range(6..16);
            let mut g = random_skeleton(&mut rng, &format!("topo{m}"), size);
            let deg = g.degrees();
            let orders: Vec<BondOrder> = g
                .bonds
                .iter()
                .map(|b| {
                    let (i, j) = b.endpoints();
                    topology_bond_order(&deg, i, j)
                })
                .collect();
            for (b, o) in g.bonds.iter_mut().zip(orders) {
                b.order = o;
            }
            g
        })
        .collect();
    Dataset::new(graphs, TaskKind::Classification).expect("unlabeled corpus")
}

/// Binary task whose label needs both views: bond orders are drawn
/// independently of topology, and a molecule is positive when
/// `#double + #triple − #aromatic + #O` exceeds the corpus median. Ties at
/// the median are dropped so both classes are balanced.
pub fn joint_label_corpus(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scored = Vec::with_capacity(n);
    while scored.len() < n {
        let size = rng.random_range(6..14);
        let mut g = random_skeleton(&mut rng, &format!("joint{}", scored.len()), size);
        for b in &mut g.bonds {
            b.order = BondOrder::ALL[rng.random_range(0..4)];
        }
        let count = |o: BondOrder| g.bonds.iter().filter(|b| b.order == o).count() as i64;
        let oxygens = g.atoms.iter().filter(|a| a.element == Element::O).count() as i64;
        let score = count(BondOrder::Double) + count(BondOrder::Triple) - count(BondOrder::Aromatic) + oxygens;
        scored.push((g, score));
    }
    let mut sorted: Vec<i64> = scored.iter().map(|(_, s)| *s).collect();
    sorted.sort_unstable();
    let median = sorted[sorted.len() / 2];
    let graphs = scored
        .into_iter()
        .filter(|(_, s)| *s != median)
        .map(|(mut g, s)| {
            g.label = Some(Label::Class((s > median) as i64));
            g
        })
        .collect();
    Dataset::new(graphs, TaskKind::Classification).expect("binary labels")
}

/// Regression corpus: the target is a fixed linear function of bond-order
/// and element counts plus small noise.
pub fn property_corpus(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graphs = (0..n)
        .map(|m| {
            let size = rng.random_range(5..12);
            let mut g = random_skeleton(&mut rng, &format!("prop{m}"), size);
            for b in &mut g.bonds {
                b.order = BondOrder::ALL[rng.random_range(0..4)];
            }
            let doubles = g.bonds.iter().filter(|b| b.order == BondOrder::Double).count() as f64;
            let nitrogens = g.atoms.iter().filter(|a| a.element == Element::N).count() as f64;
            let y = 0.5 * doubles - 0.3 * nitrogens + 0.1 * g.num_atoms() as f64 + rng.random_range(-0.05..0.05);
            g.label = Some(Label::Real(y));
            g
        })
        .collect();
    Dataset::new(graphs, TaskKind::Regression).expect("real labels")
}

/// A six-atom chain with every bond order represented and bond lengths
/// spread over the default radial-basis range, so that every basis function
/// carries signal.
pub fn six_atom_molecule() -> MolecularGraph {
    let mut g = MolecularGraph::new("hexa");
    let elements = [Element::C, Element::N, Element::C, Element::O, Element::C, Element::C];
    let xs = [0.0, 0.4, 2.6, 6.6, 12.4, 20.0];
    for (k, (e, x)) in elements.iter().zip(xs).enumerate() {
        g.atoms.push(Atom::at(*e, [x, 0.15 * k as f64, -0.1 * k as f64]));
    }
    let orders = [BondOrder::Single, BondOrder::Triple, BondOrder::Aromatic, BondOrder::Double, BondOrder::Single];
    for (j, o) in orders.into_iter().enumerate() {
        g.bonds.push(Bond::new(j, j + 1, o).expect("chain bond"));
    }
    g.label = Some(Label::Class(1));
    g
}
