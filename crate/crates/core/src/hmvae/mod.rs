//! Hierarchical motion VAE, its ablations, losses and training loop.

mod checkpoint;
mod descriptor;
mod loss;
mod model;
mod train;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Op, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::rotation::Rot6D;
use crate::tensor::{Real, Tensor};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, MAGIC};
pub use descriptor::{ArchDescriptor, Hierarchy, Variant, BLOCKS};
pub use loss::{kl_divergence, kl_op, loss_total, LossComponents, LossTarget, LossWeights};
pub use model::{make_variant, HmVae, Layer, Layout, PosteriorVars};
pub use train::{batch_gradient, train, train_with, BatchNoise, TrainConfig, TrainReport};

/// `[T×J×6]` window of 6D joint rotations.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionWindow {
    pub rotations: Tensor<f64>,
}

impl MotionWindow {
    pub fn new(rotations: Tensor<f64>) -> Result<Self> {
        if rotations.shape().len() != 3 || rotations.shape()[2] != 6 {
            return Err(shape_err("MotionWindow", "[T, J, 6]", rotations.shape()));
        }
        if !rotations.is_finite() {
            return Err(Error::NonFinite("motion window".into()));
        }
        Ok(MotionWindow { rotations })
    }

    /// Builds a window from per-frame joint rotations.
    pub fn from_frames(frames: &[Vec<Rot6D>]) -> Result<Self> {
        let t = frames.len();
        let j = frames.first().map_or(0, Vec::len);
        if t == 0 || j == 0 || frames.iter().any(|f| f.len() != j) {
            return Err(shape_err("MotionWindow", "non-empty rectangular frames", (t, j)));
        }
        let data = frames.iter().flatten().flat_map(|r| r.0).collect();
        MotionWindow::new(Tensor::new(vec![t, j, 6], data)?)
    }

    pub fn frames(&self) -> usize {
        self.rotations.shape()[0]
    }

    pub fn joints(&self) -> usize {
        self.rotations.shape()[1]
    }

    pub fn rot6d(&self, t: usize, j: usize) -> Rot6D {
        let o = (t * self.joints() + j) * 6;
        let mut r = [0.0; 6];
        r.copy_from_slice(&self.rotations.data()[o..o + 6]);
        Rot6D(r)
    }

    pub fn frame(&self, t: usize) -> Vec<Rot6D> {
        (0..self.joints()).map(|j| self.rot6d(t, j)).collect()
    }
}

/// Diagonal Gaussian posterior.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl GaussianParams {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_var.iter().map(|lv| (0.5 * lv).exp()).collect()
    }
}

/// Local (shallow) and global (deep) latent codes. `local` is empty for
/// single-latent variants.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatentPair {
    pub local: Vec<f64>,
    pub global: Vec<f64>,
}

/// `z = μ + exp(½·log σ²) ⊙ ε`.
pub fn reparameterize(p: &GaussianParams, noise: &[f64]) -> Result<Vec<f64>> {
    if p.mu.len() != p.log_var.len() || noise.len() != p.mu.len() {
        return Err(shape_err("reparameterize", p.mu.len(), noise.len()));
    }
    Ok(p.mu
        .iter()
        .zip(&p.log_var)
        .zip(noise)
        .map(|((m, lv), n)| m + (0.5 * lv).exp() * n)
        .collect())
}

struct ReparamOp<S>(Vec<S>);
impl<S: Real> Op<S> for ReparamOp<S> {
    fn name(&self) -> &'static str {
        "reparameterize"
    }
    fn backward(&self, inputs: &[&Tensor<S>], _: &Tensor<S>, g: &[S], needs: &[bool]) -> Vec<Option<Vec<S>>> {
        let half = S::lit(0.5);
        let lv = inputs[1].data();
        vec![
            needs[0].then(|| g.to_vec()),
            needs[1].then(|| {
                g.iter()
                    .zip(lv)
                    .zip(&self.0)
                    .map(|((&g, &lv), &n)| g * half * (half * lv).exp() * n)
                    .collect()
            }),
        ]
    }
}

/// Tape version of [`reparameterize`], differentiable in `mu` and `log_var`.
pub fn reparameterize_on<S: Real>(tape: &mut Tape<S>, mu: Var, log_var: Var, noise: &[S]) -> Result<Var> {
    let (m, lv) = (tape.value(mu), tape.value(log_var));
    if m.shape() != lv.shape() || noise.len() != m.len() {
        return Err(shape_err("reparameterize", m.len(), noise.len()));
    }
    let half = S::lit(0.5);
    let z: Vec<S> = m
        .data()
        .iter()
        .zip(lv.data())
        .zip(noise)
        .map(|((&m, &lv), &n)| m + (half * lv).exp() * n)
        .collect();
    let out = Tensor::new(m.shape().to_vec(), z)?;
    Ok(tape.push(out, &[mu, log_var], ReparamOp(noise.to_vec())))
}

/// Zero latent placed as a constant (used while the local path is held at the prior mean).
pub(crate) fn zero_latent<S: Real>(tape: &mut Tape<S>, dim: usize) -> Var {
    tape.constant(Tensor::zeros(vec![dim]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, ops};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn reparameterize_contract() {
        let p = GaussianParams {
            mu: vec![0.5, -1.0],
            log_var: vec![0.3, -2.0],
        };
        assert_eq!(reparameterize(&p, &[0.0, 0.0]).unwrap(), p.mu);
        let std = GaussianParams {
            mu: vec![0.0; 2],
            log_var: vec![0.0; 2],
        };
        assert_eq!(reparameterize(&std, &[0.7, -0.1]).unwrap(), vec![0.7, -0.1]);
        assert!(reparameterize(&p, &[1.0]).is_err());
    }

    #[test]
    fn reparameterize_monte_carlo_mean() {
        let p = GaussianParams {
            mu: vec![1.5],
            log_var: vec![(0.8f64).ln() * 2.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                reparameterize(&p, &[e]).unwrap()[0]
            })
            .sum::<f64>()
            / n as f64;
        let sigma = 0.8;
        assert!((mean - 1.5).abs() < 3.0 * sigma / (n as f64).sqrt());
    }

    #[test]
    fn reparameterize_gradients() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise: Vec<f64> = (0..4).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mu: Vec<f64> = (0..4).map(|_| StandardNormal.sample(&mut rng)).collect();
            let lv: Vec<f64> = (0..4).map(|_| StandardNormal.sample(&mut rng)).collect();
            let err = grad_check(
                |t, p| {
                    let z = reparameterize_on(t, p[0], p[1], &noise)?;
                    let z2 = ops::mul(t, z, z)?;
                    Ok(ops::sum(t, z2))
                },
                &[Tensor::from_vec(mu), Tensor::from_vec(lv)],
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }

    #[test]
    fn window_accessors() {
        let frames = vec![vec![Rot6D::IDENTITY; 3]; 2];
        let w = MotionWindow::from_frames(&frames).unwrap();
        assert_eq!((w.frames(), w.joints()), (2, 3));
        assert_eq!(w.rot6d(1, 2), Rot6D::IDENTITY);
        assert!(MotionWindow::new(Tensor::zeros(vec![2, 3, 5])).is_err());
    }
}
