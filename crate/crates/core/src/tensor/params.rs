use std::collections::HashMap;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Ordered, uniquely named collection of weight tensors.
///
/// Order is declaration order, so sets built from equal configs line up
/// entry by entry for serialization, averaging and counting.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid("name", format!("duplicate parameter `{name}`")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, tensor));
        Ok(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.entries[i].1
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].1
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Ok iff both sets have the same names, order and shapes. The error names
    /// the first offending entry.
    pub fn check_congruent(&self, other: &ParameterSet) -> Result<()> {
        for (i, ((na, ta), (nb, tb))) in self.entries.iter().zip(&other.entries).enumerate() {
            if na != nb {
                return Err(Error::Incongruent {
                    entry: na.clone(),
                    detail: format!("entry {i} is named `{nb}` on the other side"),
                });
            }
            if ta.shape() != tb.shape() {
                return Err(Error::Incongruent {
                    entry: na.clone(),
                    detail: format!("shape {:?} vs {:?}", ta.shape(), tb.shape()),
                });
            }
        }
        if self.len() != other.len() {
            let (longer, n) = if self.len() > other.len() {
                (self, other.len())
            } else {
                (other, self.len())
            };
            return Err(Error::Incongruent {
                entry: longer.entries[n].0.clone(),
                detail: format!("present on one side only ({} vs {} entries)", self.len(), other.len()),
            });
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in &mut self.entries {
            t.zero_grad();
        }
    }

    /// Records every tensor as a leaf on `tape`, in canonical order.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Vec<Var> {
        self.entries
            .iter()
            .map(|(_, t)| tape.leaf(t.clone().with_requires_grad(requires_grad)))
            .collect()
    }

    /// Adds the tape gradients of `vars` (as returned by [`bind`](Self::bind))
    /// into the tensors' gradient buffers.
    pub fn accumulate_grads(&mut self, tape: &Tape, vars: &[Var]) -> Result<()> {
        if vars.len() != self.entries.len() {
            return Err(Error::shape(
                "accumulate_grads",
                format!("{} vars for {} parameters", vars.len(), self.entries.len()),
            ));
        }
        for ((_, t), &v) in self.entries.iter_mut().zip(vars) {
            if let Some(g) = tape.grad(v) {
                t.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    /// Bitwise equality of names, shapes and values.
    pub fn bitwise_eq(&self, other: &ParameterSet) -> bool {
        self.len() == other.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((na, ta), (nb, tb))| na == nb && ta.bitwise_eq(tb))
    }
}
