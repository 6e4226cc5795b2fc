use rand::seq::SliceRandom;

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Shuffled mini-batches over a fixed index set. The final short batch is kept.
pub struct Batches<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

pub fn batches<'a>(
    dataset: &'a Dataset,
    indices: &[usize],
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Batches<'a>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size", "must be at least 1"));
    }
    if indices.is_empty() {
        return Err(Error::invalid("indices", "cannot batch an empty index set"));
    }
    if let Some(&i) = indices.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::invalid(
            "indices",
            format!("index {i} out of range for {} samples", dataset.len()),
        ));
    }
    let mut order = indices.to_vec();
    order.shuffle(&mut rng::stream(&[rng::TAG_BATCH, seed, epoch as u64]));
    Ok(Batches {
        dataset,
        order,
        batch_size,
        pos: 0,
    })
}

impl Batches<'_> {
    /// Index order for this epoch.
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for Batches<'_> {
    type Item = (Tensor, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let chunk = &self.order[self.pos..end];
        self.pos = end;
        // Indices were validated on construction.
        Some(self.dataset.gather(chunk).expect("validated batch indices"))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

impl ExactSizeIterator for Batches<'_> {}
