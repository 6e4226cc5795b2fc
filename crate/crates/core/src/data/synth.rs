use std::f32::consts::PI;

use rand_distr::{Distribution, StandardNormal};

use super::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::rng;

/// Peak deviation of a prototype pixel from mid-grey.
pub const PROTOTYPE_AMPLITUDE: f32 = 0.12;
const CHANNELS: usize = 3;
const CYCLES: f32 = 2.0;

/// Fixed per-class patterns: an oriented sinusoidal grating, one orientation
/// per class, phase-shifted across colour channels. Raw pixels around 0.5.
pub fn prototypes(class_count: usize, side: usize) -> Vec<Vec<f32>> {
    (0..class_count)
        .map(|c| {
            let theta = PI * c as f32 / class_count as f32;
            let (dx, dy) = (theta.cos(), theta.sin());
            let mut p = Vec::with_capacity(CHANNELS * side * side);
            for ch in 0..CHANNELS {
                let phase = 2.0 * PI * ch as f32 / CHANNELS as f32;
                for y in 0..side {
                    for x in 0..side {
                        let t = 2.0 * PI * CYCLES * (x as f32 * dx + y as f32 * dy) / side as f32;
                        p.push(0.5 + PROTOTYPE_AMPLITUDE * (t + phase).sin());
                    }
                }
            }
            p
        })
        .collect()
}

fn check(class_count: usize, per_class: usize, side: usize, noise_sigma: f32) -> Result<()> {
    if class_count < 2 {
        return Err(Error::invalid("class_count", "need at least 2 classes"));
    }
    if per_class == 0 {
        return Err(Error::invalid("per_class", "must be at least 1"));
    }
    if side < 8 {
        return Err(Error::invalid(
            "side",
            format!("must be at least 8 so two stride-2 stages leave 2x2 maps, got {side}"),
        ));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::invalid("noise_sigma", "must be finite and non-negative"));
    }
    Ok(())
}

/// Raw pixels for `per_class` samples of each class, classes interleaved.
fn generate(
    class_count: usize,
    per_class: usize,
    side: usize,
    noise_sigma: f32,
    stream: &[u64],
) -> (Vec<f32>, Vec<usize>) {
    let protos = prototypes(class_count, side);
    let mut rng = rng::stream(stream);
    let n = class_count * per_class;
    let mut raw = Vec::with_capacity(n * CHANNELS * side * side);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % class_count;
        labels.push(c);
        for &v in &protos[c] {
            let z: f32 = StandardNormal.sample(&mut rng);
            raw.push(v + noise_sigma * z);
        }
    }
    (raw, labels)
}

/// Balanced synthetic training set, normalized with its own statistics.
pub fn synth_dataset(
    class_count: usize,
    per_class: usize,
    side: usize,
    noise_sigma: f32,
    seed: u64,
) -> Result<Dataset> {
    check(class_count, per_class, side, noise_sigma)?;
    let (raw, labels) = generate(class_count, per_class, side, noise_sigma, &[rng::TAG_SYNTH, seed, 0]);
    let shape = [labels.len(), CHANNELS, side, side];
    Dataset::from_raw(raw, shape, labels, class_count, Split::Train, None)
}

/// Train and test splits from disjoint noise streams; the test split reuses
/// the training normalization.
pub fn synth_train_test(
    class_count: usize,
    train_per_class: usize,
    test_per_class: usize,
    side: usize,
    noise_sigma: f32,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let train = synth_dataset(class_count, train_per_class, side, noise_sigma, seed)?;
    check(class_count, test_per_class, side, noise_sigma)?;
    let (raw, labels) =
        generate(class_count, test_per_class, side, noise_sigma, &[rng::TAG_SYNTH, seed, 1]);
    let shape = [labels.len(), CHANNELS, side, side];
    let test = Dataset::from_raw(
        raw,
        shape,
        labels,
        class_count,
        Split::Test,
        Some(train.normalization().clone()),
    )?;
    Ok((train, test))
}
