//! Finite-difference gradient verification.
//!
//! Runs in `f64`; central differences in `f32` are too noisy for the
//! tolerances asserted here.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Analytic gradients of a scalar-valued graph at `inputs`.
pub fn analytic_gradients<F>(mut f: F, inputs: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>>
where
    F: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let mut store = tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| store.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect())
}

/// Central-difference gradients of the same graph.
pub fn fd_gradients<F>(mut f: F, inputs: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>>
where
    F: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |f: &mut F, pts: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = pts.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).scalar()
    };
    let mut grads = Vec::with_capacity(inputs.len());
    let mut pts = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[j];
            let h = 1e-5 * x0.abs().max(1.0);
            pts[i].data_mut()[j] = x0 + h;
            let fp = eval(&mut f, &pts)?;
            pts[i].data_mut()[j] = x0 - h;
            let fm = eval(&mut f, &pts)?;
            pts[i].data_mut()[j] = x0;
            g.data_mut()[j] = (fp - fm) / (2.0 * h);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Max over all input entries of |analytic - fd| / max(1, |analytic|).
pub fn max_relative_error(analytic: &[Tensor<f64>], fd: &[Tensor<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, b) in analytic.iter().zip(fd) {
        for (&av, &bv) in a.data().iter().zip(b.data()) {
            let err = (av - bv).abs() / av.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}

/// Max relative error between the tape's analytic gradients and central
/// finite differences, over every entry of every input.
pub fn grad_check<F>(mut f: F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let analytic = analytic_gradients(&mut f, inputs)?;
    let fd = fd_gradients(&mut f, inputs)?;
    Ok(max_relative_error(&analytic, &fd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn linear_graph_exact() {
        let err = grad_check(
            |tape, vars| Ok(tape.scale(vars[0], 3.0)),
            &[Tensor::scalar_value(1.7)],
        )
        .unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn corrupted_gradient_detected() {
        // Double the analytic gradients of y = 3x and verify the checker
        // flags the fault.
        let f = |tape: &mut Tape<f64>, vars: &[Var]| -> crate::error::Result<Var> {
            Ok(tape.scale(vars[0], 3.0))
        };
        let inputs = [Tensor::scalar_value(2.0)];
        let mut analytic = analytic_gradients(f, &inputs).unwrap();
        for g in &mut analytic {
            for v in g.data_mut() {
                *v *= 2.0;
            }
        }
        let fd = fd_gradients(f, &inputs).unwrap();
        let err = max_relative_error(&analytic, &fd);
        assert!(err > 0.3, "corruption not detected: {err}");
    }

    #[test]
    fn dense_gradient_matches() {
        let mut rng = Rng::new(5);
        let x: Tensor<f64> = rng.fill_normal(&[3, 4]);
        let w: Tensor<f64> = rng.fill_normal(&[4, 2]);
        let b: Tensor<f64> = rng.fill_normal(&[2]);
        let err = grad_check(
            |tape, vars| {
                let y = tape.dense(vars[0], vars[1], vars[2])?;
                Ok(tape.sum(y))
            },
            &[x, w, b],
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
