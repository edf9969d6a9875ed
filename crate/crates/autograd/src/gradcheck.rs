//! Central finite-difference gradient checking.

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Worst relative error between analytic and numeric gradients, per input.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_err: Vec<f64>,
    pub checked: usize,
}

impl GradCheck {
    pub fn worst(&self) -> f64 {
        self.max_rel_err.iter().cloned().fold(0.0, f64::max)
    }
}

/// Compares gradients of the scalar `f(inputs)` against central differences
/// with step `h`. Entries for which `skip(input, index, value)` holds are not
/// compared. Relative error is `|a - n| / max(|a|, |n|, atol)`.
pub fn check<F, S>(inputs: &[Tensor], h: f64, atol: f64, f: F, skip: S) -> GradCheck
where
    F: Fn(&Tape, &[Var]) -> Var,
    S: Fn(usize, usize, f64) -> bool,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars);
    let grads = tape.backward(out);
    let eval = |xs: &[Tensor]| {
        let t = Tape::no_grad();
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let o = f(&t, &vs);
        t.value(o).item()
    };
    let mut report = GradCheck {
        max_rel_err: vec![0.0; inputs.len()],
        checked: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.shape()));
        for j in 0..input.numel() {
            let x0 = input.data()[j];
            if skip(k, j, x0) {
                continue;
            }
            work[k].data_mut()[j] = x0 + h;
            let fp = eval(&work);
            work[k].data_mut()[j] = x0 - h;
            let fm = eval(&work);
            work[k].data_mut()[j] = x0;
            let num = (fp - fm) / (2.0 * h);
            let a = analytic.data()[j];
            let err = (a - num).abs() / a.abs().max(num.abs()).max(atol);
            report.max_rel_err[k] = report.max_rel_err[k].max(err);
            report.checked += 1;
        }
    }
    report
}
