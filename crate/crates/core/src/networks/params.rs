use footprint_tensor::{Element, Graph, Tensor, Var};
use indexmap::IndexMap;

use crate::{Error, Result};

/// Named trainable arrays in construction order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet<E> {
    params: IndexMap<String, Tensor<E>>,
}

impl<E: Element> Default for ParameterSet<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> ParameterSet<E> {
    pub fn new() -> Self {
        Self {
            params: IndexMap::new(),
        }
    }

    /// Adds a parameter and returns its index.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<E>) -> Result<usize> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name '{name}'")));
        }
        self.params.insert(name, value);
        Ok(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<E>> {
        self.params.get(name)
    }

    pub fn by_index(&self, i: usize) -> &Tensor<E> {
        &self.params[i]
    }

    pub fn by_index_mut(&mut self, i: usize) -> &mut Tensor<E> {
        &mut self.params[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<E>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn max_abs(&self) -> E {
        self.params.values().fold(E::zero(), |m, t| m.max(t.max_abs()))
    }

    /// Registers every parameter in `g`, as differentiable variables when
    /// `trainable`, as constants otherwise. Order matches [`iter`](Self::iter).
    pub fn bind(&self, g: &Graph<E>, trainable: bool) -> Vec<Var> {
        self.params
            .values()
            .map(|t| {
                if trainable {
                    g.variable(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect()
    }

    /// Replaces values with same-named, same-shaped entries from `other`.
    pub fn load_from(&mut self, other: &ParameterSet<E>) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.len(),
                other.len()
            )));
        }
        for (name, value) in self.params.iter_mut() {
            let src = other
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter '{name}'")))?;
            if src.shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{name}' has shape {:?}, expected {:?}",
                    src.shape(),
                    value.shape()
                )));
            }
            *value = src.clone();
        }
        Ok(())
    }

    pub fn cast<F: Element>(&self) -> ParameterSet<F> {
        ParameterSet {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }
}

/// Clamps every weight into `[-c, c]` (WGAN weight clipping).
pub fn clip_parameters<E: Element>(params: &mut ParameterSet<E>, c: f64) -> Result<()> {
    if !(c > 0.0) {
        return Err(Error::Config(format!("clip value must be positive, got {c}")));
    }
    let c = E::from_f64(c);
    for (_, t) in params.iter_mut() {
        for w in t.data_mut() {
            *w = w.max(-c).min(c);
        }
    }
    Ok(())
}
