//! First-order optimizers over flat parameter buffers.

use serde::{Deserialize, Serialize};

use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            _ => Err(crate::Error::InvalidArgument(format!("unknown optimizer `{s}`"))),
        }
    }
}

/// Adam or plain gradient descent. Parameters without a gradient are left alone.
#[derive(Clone, Debug)]
pub struct Optimizer<S: Real> {
    kind: OptimizerKind,
    lr: S,
    beta1: S,
    beta2: S,
    eps: S,
    step: i32,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Real> Optimizer<S> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr: S::lit(lr),
            beta1: S::lit(0.9),
            beta2: S::lit(0.999),
            eps: S::lit(1e-8),
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr.to_f64_lossy()
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = S::lit(lr);
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::Adam, lr)
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// One update. `grads[i]` belongs to `params[i]`.
    pub fn step(&mut self, params: &mut [Tensor<S>], grads: &[Option<Vec<S>>]) {
        let mut slices: Vec<&mut [S]> = params.iter_mut().map(|p| p.data_mut()).collect();
        self.step_slices(&mut slices, grads);
    }

    pub fn step_slices(&mut self, params: &mut [&mut [S]], grads: &[Option<Vec<S>>]) {
        assert_eq!(params.len(), grads.len(), "one gradient slot per parameter");
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    if let Some(g) = g {
                        for (p, &g) in p.iter_mut().zip(g) {
                            *p -= self.lr * g;
                        }
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != params.len() {
                    self.m = params.iter().map(|p| vec![S::zero(); p.len()]).collect();
                    self.v = self.m.clone();
                }
                let c1 = S::one() - self.beta1.powi(self.step);
                let c2 = S::one() - self.beta2.powi(self.step);
                let lr = self.lr * c2.sqrt() / c1;
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let Some(g) = g else { continue };
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for k in 0..p.len() {
                        m[k] = self.beta1 * m[k] + (S::one() - self.beta1) * g[k];
                        v[k] = self.beta2 * v[k] + (S::one() - self.beta2) * g[k] * g[k];
                        p[k] -= lr * m[k] / (v[k].sqrt() + self.eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut p = vec![Tensor::from_vec(vec![1.0f64, 2.0])];
        Optimizer::sgd(0.5).step(&mut p, &[Some(vec![2.0, -2.0])]);
        assert_eq!(p[0].data(), &[0.0, 3.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![Tensor::from_vec(vec![1.0f64]), Tensor::from_vec(vec![5.0])];
        let mut opt = Optimizer::adam(0.1);
        opt.step(&mut p, &[Some(vec![3.0]), None]);
        assert!((p[0].data()[0] - 0.9).abs() < 1e-6);
        assert_eq!(p[1].data()[0], 5.0);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = vec![Tensor::from_vec(vec![3.0f64, -2.0])];
        let mut opt = Optimizer::adam(0.05);
        for _ in 0..2000 {
            let g = p[0].data().iter().map(|x| 2.0 * x).collect();
            opt.step(&mut p, &[Some(g)]);
        }
        assert!(p[0].data().iter().all(|x| x.abs() < 1e-2));
    }
}
