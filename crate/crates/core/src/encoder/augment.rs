use rand::Rng;

use crate::error::{Error, Result};
use crate::mol::MolecularGraph;

/// Removes each bond independently with probability `ratio`. Atoms are kept.
pub fn augment_edge_drop<R: Rng + ?Sized>(graph: &MolecularGraph, ratio: f64, rng: &mut R) -> Result<MolecularGraph> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Config(format!("drop ratio must lie in [0, 1), got {ratio}")));
    }
    let mut out = graph.clone();
    out.bonds.retain(|_| rng.random::<f64>() >= ratio);
    Ok(out)
}
