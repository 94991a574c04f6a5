use std::collections::{BTreeMap, BTreeSet};

use super::{Matrix, Tape, Var};
use crate::error::{Error, Result};

/// Named parameters with a frozen/trainable partition.
///
/// Frozen entries are bound onto a tape as constants, so they never receive a
/// gradient and [`ParamStore::set`] refuses to overwrite them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Matrix>,
    frozen: BTreeSet<String>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter path {name}")));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn insert_frozen(&mut self, name: impl Into<String>, value: Matrix) -> Result<()> {
        let name = name.into();
        self.insert(name.clone(), value)?;
        self.frozen.insert(name);
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    /// Overwrites a trainable parameter. Shapes must match.
    pub fn set(&mut self, name: &str, value: Matrix) -> Result<()> {
        if self.frozen.contains(name) {
            return Err(Error::FrozenViolation(name.to_string()));
        }
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
        if slot.dim() != value.dim() {
            return Err(Error::dim("set", slot.dim(), value.dim()));
        }
        *slot = value;
        Ok(())
    }

    /// Mutates a trainable parameter in place.
    pub fn update(&mut self, name: &str, f: impl FnOnce(&mut Matrix)) -> Result<()> {
        if self.frozen.contains(name) {
            return Err(Error::FrozenViolation(name.to_string()));
        }
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
        f(slot);
        Ok(())
    }

    pub fn freeze(&mut self, name: &str) -> Result<()> {
        if !self.params.contains_key(name) {
            return Err(Error::Config(format!("missing parameter {name}")));
        }
        self.frozen.insert(name.to_string());
        Ok(())
    }

    pub fn freeze_prefix(&mut self, prefix: &str) {
        let names: Vec<String> = self
            .params
            .keys()
            .filter(|n| n.starts_with(prefix))
            .cloned()
            .collect();
        self.frozen.extend(names);
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &str> {
        self.params
            .keys()
            .filter(|n| !self.frozen.contains(*n))
            .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn count_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| !self.frozen.contains(*n))
            .map(|(_, m)| m.len())
            .sum()
    }

    pub fn count_frozen(&self) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| self.frozen.contains(*n))
            .map(|(_, m)| m.len())
            .sum()
    }

    /// Entries whose path starts with `prefix`, frozen flags preserved.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        let mut out = ParamStore::new();
        for (name, value) in self.params.iter().filter(|(n, _)| n.starts_with(prefix)) {
            out.params.insert(name.clone(), value.clone());
            if self.frozen.contains(name) {
                out.frozen.insert(name.clone());
            }
        }
        out
    }

    /// Adds every entry of `other`, keeping its frozen flags.
    pub fn merge(&mut self, other: &ParamStore) -> Result<()> {
        for (name, value) in &other.params {
            self.insert(name.clone(), value.clone())?;
            if other.frozen.contains(name) {
                self.frozen.insert(name.clone());
            }
        }
        Ok(())
    }

    /// Records every parameter on `tape`: trainable entries as gradient
    /// leaves, frozen entries as constants.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(name, value)| {
                let v = tape.leaf(value.clone(), !self.frozen.contains(name));
                (name.clone(), v)
            })
            .collect();
        Bound { vars }
    }
}

/// Parameter-path to tape-node map produced by [`ParamStore::bind`].
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Gradients of every bound parameter that requires one.
    pub fn grads(&self, tape: &Tape) -> BTreeMap<String, Matrix> {
        self.vars
            .iter()
            .filter(|(_, v)| tape.node(**v).requires_grad)
            .map(|(k, v)| (k.clone(), tape.grad(*v).clone()))
            .collect()
    }
}
