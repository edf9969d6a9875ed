//! Adam optimizer over plain tensors.

use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. Parameters must be passed in the same order every call;
    /// a missing gradient leaves that parameter (and its moments) untouched.
    pub fn step<'a, I>(&mut self, params: I)
    where
        I: IntoIterator<Item = (&'a mut Tensor, Option<&'a Tensor>)>,
    {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, (p, g)) in params.into_iter().enumerate() {
            if self.m.len() <= k {
                self.m.push(vec![0.0; p.numel()]);
                self.v.push(vec![0.0; p.numel()]);
            }
            let Some(g) = g else { continue };
            assert_eq!(p.shape(), g.shape(), "gradient shape mismatch for parameter {}", k);
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = Tensor::new(&[2], vec![1.0, -1.0]);
        let g = Tensor::new(&[2], vec![3.0, -0.5]);
        let mut opt = Adam::new(0.1);
        opt.step([(&mut p, Some(&g))]);
        assert!((p.data()[0] - 0.9).abs() < 1e-6);
        assert!((p.data()[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = Tensor::new(&[1], vec![2.0]);
        let g = Tensor::zeros(&[1]);
        let mut opt = Adam::new(1e-3);
        for _ in 0..10 {
            opt.step([(&mut p, Some(&g))]);
        }
        assert_eq!(p.data()[0], 2.0);
    }
}
