use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Bound on whole-partition redraws when a client ends up empty.
pub const MAX_REDRAWS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub alpha: f64,
    /// The seed requested by the caller.
    pub seed: u64,
    /// The seed of the accepted draw (`seed + redraws`).
    pub effective_seed: u64,
    pub assignments: Vec<Vec<usize>>,
    pub client_counts: Vec<usize>,
}

impl PartitionSpec {
    pub fn clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn total(&self) -> usize {
        self.client_counts.iter().sum()
    }
}

/// Natural log of a Gamma(shape, 1) draw (Marsaglia-Tsang). Working in log
/// space keeps very small shapes from underflowing to zero.
fn log_gamma_draw<R: Rng>(rng: &mut R, shape: f64) -> f64 {
    if shape < 1.0 {
        // Gamma(a) = Gamma(a + 1) * U^(1/a)
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        return log_gamma_draw(rng, shape + 1.0) + u.ln() / shape;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = StandardNormal.sample(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = rng.random();
        if u < 1.0 - 0.0331 * x.powi(4) || u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
            return (d * v).ln();
        }
    }
}

pub fn sample_gamma<R: Rng>(rng: &mut R, shape: f64) -> f64 {
    log_gamma_draw(rng, shape).exp()
}

/// Symmetric Dirichlet(alpha * 1_k) via normalized gamma draws.
pub fn sample_dirichlet<R: Rng>(rng: &mut R, alpha: f64, k: usize) -> Vec<f64> {
    let logs: Vec<f64> = (0..k).map(|_| log_gamma_draw(rng, alpha)).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

fn categorical<R: Rng>(rng: &mut R, p: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    // Rounding left `acc` just below 1; fall back to the last non-zero bin.
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}

fn draw(labels: &[usize], classes: usize, k: usize, alpha: f64, seed: u64) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut assignments = vec![Vec::new(); k];
    for (c, members) in by_class.iter().enumerate() {
        let mut rng = rng::stream(&[rng::TAG_PARTITION, seed, c as u64]);
        let p = sample_dirichlet(&mut rng, alpha, k);
        for &i in members {
            assignments[categorical(&mut rng, &p)].push(i);
        }
    }
    for (client, a) in assignments.iter_mut().enumerate() {
        a.sort_unstable();
        a.shuffle(&mut rng::stream(&[rng::TAG_SHUFFLE, seed, client as u64]));
    }
    assignments
}

/// Per-class Dirichlet split of sample indices over `k` clients. Draws that
/// leave a client empty are repeated with the next seed.
pub fn dirichlet_partition(labels: &[usize], k: usize, alpha: f64, seed: u64) -> Result<PartitionSpec> {
    if k == 0 {
        return Err(Error::invalid("clients", "need at least one client"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid("alpha", format!("must be positive and finite, got {alpha}")));
    }
    if k > labels.len() {
        return Err(Error::Partition(format!(
            "{k} clients cannot each receive a sample from {} samples",
            labels.len()
        )));
    }
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    for attempt in 0..MAX_REDRAWS as u64 {
        let effective_seed = seed.wrapping_add(attempt);
        let assignments = draw(labels, classes, k, alpha, effective_seed);
        if assignments.iter().all(|a| !a.is_empty()) {
            if attempt > 0 {
                log::debug!("partition accepted after {attempt} redraws (seed {effective_seed})");
            }
            let client_counts = assignments.iter().map(Vec::len).collect();
            return Ok(PartitionSpec {
                alpha,
                seed,
                effective_seed,
                assignments,
                client_counts,
            });
        }
    }
    Err(Error::Partition(format!(
        "every one of {MAX_REDRAWS} draws left a client empty (k={k}, alpha={alpha})"
    )))
}

/// `[client][class]` sample counts.
pub fn class_histogram(labels: &[usize], spec: &PartitionSpec, classes: usize) -> Vec<Vec<usize>> {
    spec.assignments
        .iter()
        .map(|a| {
            let mut h = vec![0; classes];
            for &i in a {
                h[labels[i]] += 1;
            }
            h
        })
        .collect()
}

/// Pearson chi-square of one client's class counts against a uniform split.
pub fn chi_square(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let expected = n as f64 / counts.len() as f64;
    counts
        .iter()
        .map(|&o| (o as f64 - expected).powi(2) / expected)
        .sum()
}

/// Mean over clients of [`chi_square`].
pub fn mean_chi_square(histogram: &[Vec<usize>]) -> f64 {
    histogram.iter().map(|h| chi_square(h)).sum::<f64>() / histogram.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_mean_matches_shape() {
        let mut rng = rng::stream(&[99]);
        for shape in [0.3, 1.0, 4.5] {
            let n = 20000;
            let m: f64 = (0..n).map(|_| sample_gamma(&mut rng, shape)).sum::<f64>() / n as f64;
            assert!((m - shape).abs() < 0.05 * shape.max(1.0), "shape {shape}: mean {m}");
        }
    }

    #[test]
    fn dirichlet_sums_to_one() {
        let mut rng = rng::stream(&[7]);
        for alpha in [0.01, 1.0, 100.0] {
            let p = sample_dirichlet(&mut rng, alpha, 5);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn chi_square_of_uniform_is_zero() {
        assert_eq!(chi_square(&[5, 5, 5]), 0.0);
        assert!((chi_square(&[10, 0]) - 10.0).abs() < 1e-12);
    }
}
