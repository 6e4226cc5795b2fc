use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Per-channel affine transform `(x - mean) / std`.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    /// Statistics of raw `[N, C, H, W]` pixels, accumulated in f64.
    pub fn fit(raw: &[f32], shape: [usize; 4]) -> Normalization {
        let [n, c, h, w] = shape;
        let plane = h * w;
        let mut mean = vec![0.0f32; c];
        let mut std = vec![1.0f32; c];
        for ch in 0..c {
            let (mut s, mut s2) = (0.0f64, 0.0f64);
            for i in 0..n {
                let base = (i * c + ch) * plane;
                for &v in &raw[base..base + plane] {
                    s += v as f64;
                    s2 += v as f64 * v as f64;
                }
            }
            let count = (n * plane) as f64;
            let m = s / count;
            let var = (s2 / count - m * m).max(0.0);
            mean[ch] = m as f32;
            // A constant channel normalizes to zero instead of dividing by zero.
            std[ch] = if var > 1e-12 { var.sqrt() as f32 } else { 1.0 };
        }
        Normalization { mean, std }
    }

    pub fn apply(&self, raw: &mut [f32], shape: [usize; 4]) {
        let [n, c, h, w] = shape;
        let plane = h * w;
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * plane;
                let (m, s) = (self.mean[ch], self.std[ch]);
                for v in &mut raw[base..base + plane] {
                    *v = (*v - m) / s;
                }
            }
        }
    }

    pub fn invert(&self, normalized: &mut [f32], shape: [usize; 4]) {
        let [n, c, h, w] = shape;
        let plane = h * w;
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * plane;
                for v in &mut normalized[base..base + plane] {
                    *v = *v * self.std[ch] + self.mean[ch];
                }
            }
        }
    }
}

/// Immutable labelled image set, images already normalized.
#[derive(Clone, Debug)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    class_count: usize,
    split: Split,
    normalization: Normalization,
}

impl Dataset {
    /// Builds a dataset from raw pixels; `normalization` of `None` fits the
    /// constants on these pixels (use for training splits).
    pub fn from_raw(
        raw: Vec<f32>,
        shape: [usize; 4],
        labels: Vec<usize>,
        class_count: usize,
        split: Split,
        normalization: Option<Normalization>,
    ) -> Result<Dataset> {
        let [n, c, _, _] = shape;
        if n == 0 {
            return Err(Error::invalid("dataset", "must contain at least one sample"));
        }
        if labels.len() != n {
            return Err(Error::invalid(
                "labels",
                format!("{} labels for {n} images", labels.len()),
            ));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: class_count,
            });
        }
        let mut raw = raw;
        let normalization = match normalization {
            Some(norm) if norm.mean.len() != c || norm.std.len() != c => {
                return Err(Error::invalid(
                    "normalization",
                    format!("{} channel constants for {c} channels", norm.mean.len()),
                ))
            }
            Some(norm) => norm,
            None => Normalization::fit(&raw, shape),
        };
        normalization.apply(&mut raw, shape);
        Ok(Dataset {
            images: Tensor::new(&shape, raw)?,
            labels,
            class_count,
            split,
            normalization,
        })
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    /// `[C, H, W]` of one sample.
    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// Stacks the selected samples into a batch tensor plus their labels.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::invalid("indices", "cannot gather an empty batch"));
        }
        let [c, h, w] = self.sample_shape();
        let stride = c * h * w;
        let src = self.images.data();
        let mut data = Vec::with_capacity(indices.len() * stride);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(
                    "indices",
                    format!("index {i} out of range for {} samples", self.len()),
                ));
            }
            data.extend_from_slice(&src[i * stride..(i + 1) * stride]);
            labels.push(self.labels[i]);
        }
        Ok((Tensor::new(&[indices.len(), c, h, w], data)?, labels))
    }

    /// A new dataset holding the selected samples (normalization carried over).
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let (images, labels) = self.gather(indices)?;
        Ok(Dataset {
            images,
            labels,
            class_count: self.class_count,
            split: self.split,
            normalization: self.normalization.clone(),
        })
    }

    /// Un-normalized pixels, for export.
    pub fn raw_pixels(&self) -> Vec<f32> {
        let mut raw = self.images.data().to_vec();
        let s = self.images.shape();
        self.normalization.invert(&mut raw, [s[0], s[1], s[2], s[3]]);
        raw
    }
}
