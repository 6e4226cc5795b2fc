use super::ParameterSet;
use crate::error::{Error, Result};

/// Plain SGD: `w <- w - eta * grad` for every tensor with a gradient buffer,
/// then zeroes the buffers.
pub fn sgd_step(params: &mut ParameterSet, eta: f32) -> Result<()> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::invalid("eta", format!("learning rate must be finite and >= 0, got {eta}")));
    }
    for (name, t) in params.iter_mut() {
        let Some(g) = t.grad() else { continue };
        if g.len() != t.numel() {
            return Err(Error::shape(
                "sgd_step",
                format!("gradient for `{name}` has {} elements, tensor has {}", g.len(), t.numel()),
            ));
        }
        if eta > 0.0 {
            let g = g.to_vec();
            t.data_mut().iter_mut().zip(&g).for_each(|(w, gv)| *w -= eta * gv);
        }
        t.zero_grad();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    fn single(value: f32, grad: f32) -> ParameterSet {
        let mut p = ParameterSet::new();
        let mut t = Tensor::new(&[1], vec![value]).unwrap();
        t.accumulate_grad(&[grad]).unwrap();
        p.push("w", t).unwrap();
        p
    }

    #[test]
    fn direct_formula() {
        let mut p = single(1.0, 0.5);
        sgd_step(&mut p, 0.1).unwrap();
        assert!((p.get("w").unwrap().data()[0] - 0.95).abs() < 1e-7);
        assert_eq!(p.get("w").unwrap().grad().unwrap(), &[0.0]);
    }

    #[test]
    fn zero_eta_is_identity() {
        let mut p = single(1.25, 123.0);
        let before = p.clone();
        sgd_step(&mut p, 0.0).unwrap();
        assert_eq!(p.get("w").unwrap().data(), before.get("w").unwrap().data());
        assert!(sgd_step(&mut p, -1.0).is_err());
    }

    #[test]
    fn quadratic_loss_decreases() {
        // loss = sum((w - 3)^2) evaluated through the tape
        let loss_of = |p: &mut ParameterSet, backward: bool| -> f32 {
            let mut tape = Tape::new();
            let vars = p.bind(&mut tape, true);
            let target = tape.constant(Tensor::full(&[2], -3.0));
            let d = tape.add(vars[0], target).unwrap();
            let sq = tape.mul(d, d).unwrap();
            let l = tape.sum(sq).unwrap();
            if backward {
                tape.backward(l).unwrap();
                p.accumulate_grads(&tape, &vars).unwrap();
            }
            tape.value(l).item().unwrap()
        };
        let mut p = ParameterSet::new();
        p.push("w", Tensor::new(&[2], vec![0.0, 1.0]).unwrap()).unwrap();
        let mut last = loss_of(&mut p, false);
        for _ in 0..2 {
            loss_of(&mut p, true);
            sgd_step(&mut p, 0.1).unwrap();
            let now = loss_of(&mut p, false);
            assert!(now < last);
            last = now;
        }
    }
}
