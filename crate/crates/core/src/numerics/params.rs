use std::collections::BTreeMap;

use super::{NumericsError, Tensor};

/// Named parameter tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<(), NumericsError> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(NumericsError::DuplicateParam(name));
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }

    /// Checks that `other` has exactly the same names and shapes.
    pub fn check_compatible(&self, other: &ParamStore) -> Result<(), NumericsError> {
        for (name, t) in &self.tensors {
            match other.tensors.get(name) {
                None => return Err(NumericsError::MissingParam(name.clone())),
                Some(o) if o.shape() != t.shape() => {
                    return Err(NumericsError::Incompatible {
                        name: name.clone(),
                        expected: t.shape().to_vec(),
                        found: o.shape().to_vec(),
                    })
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = other.names().find(|n| !self.tensors.contains_key(*n)) {
            return Err(NumericsError::UnexpectedParam(extra.to_string()));
        }
        Ok(())
    }
}

/// Gradient of a scalar loss with respect to each entry of a [`ParamStore`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    tensors: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Self {
            tensors: params
                .iter()
                .map(|(k, v)| (k.to_string(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Key and shape parity with `params`.
    pub fn check_parity(&self, params: &ParamStore) -> Result<(), NumericsError> {
        if self.tensors.len() != params.len() {
            return Err(NumericsError::KeyMismatch(format!(
                "{} gradients for {} parameters",
                self.tensors.len(),
                params.len()
            )));
        }
        for (name, p) in params.iter() {
            match self.tensors.get(name) {
                None => return Err(NumericsError::KeyMismatch(name.to_string())),
                Some(g) if g.shape() != p.shape() => {
                    return Err(NumericsError::Incompatible {
                        name: name.to_string(),
                        expected: p.shape().to_vec(),
                        found: g.shape().to_vec(),
                    })
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    /// First tensor holding a NaN or infinity, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.tensors
            .iter()
            .find(|(_, t)| !t.all_finite())
            .map(|(k, _)| k.as_str())
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .values()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}
