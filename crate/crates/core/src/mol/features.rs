use ndarray::Array2;

use super::{Element, MolecularGraph};
use crate::tensor::Matrix;

/// Degrees above this share the last one-hot slot.
pub const MAX_DEGREE: usize = 5;

/// Element one-hot (11) followed by degree one-hot (0..=5).
pub const ATOM_FEATURE_DIM: usize = Element::ALL.len() + MAX_DEGREE + 1;

/// Per-atom feature matrix `[|V| x 17]`: element one-hot then clamped degree
/// one-hot. Every row has exactly two ones.
pub fn featurize_atoms(graph: &MolecularGraph) -> Matrix {
    let degrees = graph.degrees();
    let mut x = Array2::zeros((graph.num_atoms(), ATOM_FEATURE_DIM));
    for (i, atom) in graph.atoms.iter().enumerate() {
        x[[i, atom.element.index()]] = 1.0;
        x[[i, Element::ALL.len() + degrees[i].min(MAX_DEGREE)]] = 1.0;
    }
    x
}
