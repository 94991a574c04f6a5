use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Label, TaskKind};
use crate::error::{Error, Result};

/// Indices into a [`Dataset`]. The three sets are pairwise disjoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// `m` training examples per class drawn without replacement; every other
/// labeled graph goes to test. Classes are visited in ascending order and
/// each class is shuffled with `ChaCha8Rng::seed_from_u64(seed)`.
pub fn sample_mshot(dataset: &Dataset, m: usize, seed: u64) -> Result<EpisodeSplit> {
    if dataset.task_kind != TaskKind::Classification {
        return Err(Error::Config("m-shot sampling needs a classification dataset".into()));
    }
    let mut by_class: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, g) in dataset.graphs.iter().enumerate() {
        if let Some(Label::Class(c)) = g.label {
            by_class.entry(c).or_default().push(i);
        }
    }
    if by_class.is_empty() {
        return Err(Error::InsufficientData("no labeled graphs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(m * by_class.len());
    for (class, ids) in &mut by_class {
        if ids.len() < m {
            return Err(Error::InsufficientData(format!(
                "class {class} has {} examples, {m} required",
                ids.len()
            )));
        }
        ids.shuffle(&mut rng);
        train.extend_from_slice(&ids[..m]);
    }
    let chosen: std::collections::HashSet<usize> = train.iter().copied().collect();
    let test = by_class
        .values()
        .flatten()
        .copied()
        .filter(|i| !chosen.contains(i))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    Ok(EpisodeSplit {
        train,
        validation: Vec::new(),
        test,
        seed,
    })
}

/// Seeded train/validation draw over the labeled graphs of a regression
/// dataset; the remainder is test.
pub fn split_property(dataset: &Dataset, n_train: usize, n_val: usize, seed: u64) -> Result<EpisodeSplit> {
    if dataset.task_kind != TaskKind::Regression {
        return Err(Error::Config("property splits need a regression dataset".into()));
    }
    let mut ids: Vec<usize> = dataset
        .graphs
        .iter()
        .enumerate()
        .filter(|(_, g)| g.label.is_some())
        .map(|(i, _)| i)
        .collect();
    if n_train + n_val > ids.len() {
        return Err(Error::InsufficientData(format!(
            "{} train + {} validation requested, {} labeled molecules available",
            n_train,
            n_val,
            ids.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let train = ids[..n_train].to_vec();
    let validation = ids[n_train..n_train + n_val].to_vec();
    let mut test = ids[n_train + n_val..].to_vec();
    test.sort_unstable();
    Ok(EpisodeSplit {
        train,
        validation,
        test,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mol::{Atom, Element, MolecularGraph};

    fn graph(label: Label) -> MolecularGraph {
        let mut g = MolecularGraph::new("g");
        g.atoms.push(Atom::new(Element::C));
        g.label = Some(label);
        g
    }

    fn classes(counts: &[usize]) -> Dataset {
        let graphs = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| (0..n).map(move |_| graph(Label::Class(c as i64))))
            .collect();
        Dataset::new(graphs, TaskKind::Classification).unwrap()
    }

    #[test]
    fn five_shot_two_classes() {
        let d = classes(&[12, 9]);
        let s = sample_mshot(&d, 5, 7).unwrap();
        assert_eq!(s.train.len(), 10);
        assert_eq!(s.test.len(), 11);
        assert!(s.validation.is_empty());
        assert!(s.train.iter().all(|i| !s.test.contains(i)));
        let per_class0 = s.train.iter().filter(|&&i| i < 12).count();
        assert_eq!(per_class0, 5);
    }

    #[test]
    fn one_shot_exhausts_singletons() {
        let d = classes(&[1, 1]);
        let s = sample_mshot(&d, 1, 0).unwrap();
        assert_eq!(s.train.len(), 2);
        assert!(s.test.is_empty());
    }

    #[test]
    fn seeds_are_deterministic() {
        let d = classes(&[20, 20]);
        assert_eq!(sample_mshot(&d, 5, 3).unwrap(), sample_mshot(&d, 5, 3).unwrap());
        assert_ne!(sample_mshot(&d, 5, 3).unwrap().train, sample_mshot(&d, 5, 4).unwrap().train);
    }

    #[test]
    fn small_class_is_reported() {
        let d = classes(&[10, 3]);
        let err = sample_mshot(&d, 5, 0).unwrap_err();
        assert!(err.to_string().contains("class 1"), "{err}");
    }

    #[test]
    fn property_split_counts() {
        let graphs = (0..1000).map(|i| graph(Label::Real(i as f64))).collect();
        let d = Dataset::new(graphs, TaskKind::Regression).unwrap();
        let s = split_property(&d, 100, 100, 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (100, 100, 800));
        let all: std::collections::HashSet<_> = s.train.iter().chain(&s.validation).chain(&s.test).collect();
        assert_eq!(all.len(), 1000);
        assert_eq!(s, split_property(&d, 100, 100, 1).unwrap());
        let s = split_property(&d, 1000, 0, 1).unwrap();
        assert!(s.test.is_empty());
        assert!(split_property(&d, 900, 101, 1).is_err());
    }
}
