use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec;
use crate::models::{Model, ModelConfig};
use crate::tensor::{ParameterSet, Tensor};

const EVAL_BATCH: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    /// Mean cross-entropy.
    pub loss: f64,
    pub top1: f64,
    pub top5: f64,
}

/// Loss and top-1 / top-5 accuracy of `[N, classes]` logits. A sample counts
/// as top-k correct when fewer than k classes score strictly higher than the
/// true class.
pub fn evaluate_logits(logits: &Tensor, labels: &[usize]) -> Result<EvalResult> {
    let [n, classes] = logits.dims2("evaluate", "logits")?;
    if n == 0 || labels.len() != n {
        return Err(Error::invalid(
            "labels",
            format!("{} labels for {n} logit rows", labels.len()),
        ));
    }
    let (mut loss, mut top1, mut top5) = (0.0f64, 0usize, 0usize);
    for (row, &y) in logits.data().chunks_exact(classes).zip(labels) {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let lse = max + row.iter().map(|&z| (z as f64 - max).exp()).sum::<f64>().ln();
        loss += lse - row[y] as f64;
        let above = row.iter().filter(|&&z| z > row[y]).count();
        top1 += (above < 1) as usize;
        top5 += (above < 5) as usize;
    }
    let n = n as f64;
    Ok(EvalResult {
        loss: loss / n,
        top1: top1 as f64 / n,
        top5: top5 as f64 / n,
    })
}

/// Evaluates parameters under `config`, optionally at another iteration count.
pub fn evaluate(
    params: &ParameterSet,
    config: &ModelConfig,
    override_iterations: Option<usize>,
    dataset: &Dataset,
) -> Result<EvalResult> {
    let model = Model::with_params(config, params.clone())?;
    let starts: Vec<usize> = (0..dataset.len()).step_by(EVAL_BATCH).collect();
    let chunks = exec::map(&starts, |&s| -> Result<Vec<f32>> {
        let idx: Vec<usize> = (s..(s + EVAL_BATCH).min(dataset.len())).collect();
        let (x, _) = dataset.gather(&idx)?;
        Ok(model.forward(&x, override_iterations)?.into_data())
    });
    let mut logits = Vec::with_capacity(dataset.len() * config.num_classes);
    for c in chunks {
        logits.extend(c?);
    }
    let logits = Tensor::new(&[dataset.len(), config.num_classes], logits)?;
    evaluate_logits(&logits, dataset.labels())
}
