use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::hmvae::loss::{loss_total, LossComponents, LossTarget, LossWeights};
use crate::hmvae::model::HmVae;
use crate::hmvae::{reparameterize_on, zero_latent, MotionWindow};
use crate::optim::{Optimizer, OptimizerKind};
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch: usize,
    pub iters: usize,
    pub beta: f64,
    pub lambda: f64,
    /// Iteration at which the local latent joins training.
    pub switch_iter: usize,
    pub lr: f64,
    /// Cosine-anneal the step size to `lr · final_lr_fraction` over `iters`;
    /// `1.0` keeps it constant.
    pub final_lr_fraction: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 8,
            iters: 2000,
            beta: 0.003,
            lambda: 10.0,
            switch_iter: 500,
            lr: 1e-4,
            final_lr_fraction: 1.0,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    /// Step size at iteration `it`.
    pub fn lr_at(&self, it: usize) -> f64 {
        let u = it as f64 / self.iters.max(1) as f64;
        let f =
            self.final_lr_fraction + (1.0 - self.final_lr_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * u).cos());
        self.lr * f
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            beta: self.beta,
            lambda: self.lambda,
        }
    }
}

/// Per-iteration batch-mean loss components.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub log: Vec<LossComponents>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<&LossComponents> {
        self.log.last()
    }
}

/// Standard-normal draws for one batch element.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNoise {
    pub local: Vec<f64>,
    pub global: Vec<f64>,
}

impl BatchNoise {
    pub fn zeros<S: Real>(model: &HmVae<S>) -> Self {
        let d = model.descriptor();
        BatchNoise {
            local: vec![0.0; d.local_dim()],
            global: vec![0.0; d.latent_global],
        }
    }

    fn sample<S: Real>(model: &HmVae<S>, rng: &mut ChaCha8Rng) -> Self {
        let d = model.descriptor();
        let mut draw = |n: usize| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let global = draw(d.latent_global);
        let local = draw(d.local_dim());
        BatchNoise { local, global }
    }
}

fn cast_vec<S: Real>(v: &[f64]) -> Vec<S> {
    v.iter().map(|&x| S::lit(x)).collect()
}

fn sample_gradient<S: Real>(
    model: &HmVae<S>,
    x: &MotionWindow,
    target: &LossTarget<S>,
    noise: &BatchNoise,
    warmup: bool,
    weights: LossWeights,
) -> Result<(Vec<Option<Vec<S>>>, LossComponents)> {
    let layout = model.layout();
    let frozen: Vec<usize> = match (warmup, layout.head_local) {
        (true, Some(h)) => vec![h.weight, h.bias],
        _ => Vec::new(),
    };
    let mut tape = Tape::new();
    let p = model.bind(&mut tape, |i| !frozen.contains(&i));
    let xv = tape.constant(x.rotations.cast());
    let post = model.encode_on(&mut tape, &p, xv)?;
    let zg = reparameterize_on(&mut tape, post.global.0, post.global.1, &cast_vec(&noise.global))?;
    let (zl, local_kl) = match post.local {
        Some(_) if warmup => (Some(zero_latent(&mut tape, model.descriptor().latent_local)), None),
        Some((mu, lv)) => (
            Some(reparameterize_on(&mut tape, mu, lv, &cast_vec(&noise.local))?),
            Some((mu, lv)),
        ),
        None => (None, None),
    };
    let y = model.decode_on(&mut tape, &p, zl, zg)?;
    let (loss, comps) = loss_total(
        &mut tape,
        y,
        target,
        &model.descriptor().skeleton,
        local_kl,
        Some(post.global),
        weights,
    )?;
    tape.backward(loss)?;
    let grads = p.iter().map(|&v| tape.grad(v).map(<[S]>::to_vec)).collect();
    Ok((grads, comps))
}

/// Batch-mean gradient of the training objective. During warm-up
/// (`warmup = true`) the local latent is fixed at zero, its KL term is
/// dropped and the local head is frozen, so its gradient slots are `None`.
pub fn batch_gradient<S: Real>(
    model: &HmVae<S>,
    batch: &[(&MotionWindow, &LossTarget<S>)],
    noise: &[BatchNoise],
    warmup: bool,
    weights: LossWeights,
) -> Result<(Vec<Option<Vec<S>>>, LossComponents)> {
    if batch.is_empty() || batch.len() != noise.len() {
        return Err(Error::InvalidArgument(
            "batch and noise must be non-empty and equal length".into(),
        ));
    }
    let parts: Vec<_> = batch
        .par_iter()
        .zip(noise)
        .map(|(&(x, t), n)| sample_gradient(model, x, t, n, warmup, weights))
        .collect::<Result<_>>()?;
    let mut grads: Vec<Option<Vec<S>>> = vec![None; model.params().len()];
    let mut comps = LossComponents::default();
    for (g, c) in &parts {
        comps.accumulate(c);
        for (acc, gi) in grads.iter_mut().zip(g) {
            if let Some(gi) = gi {
                match acc {
                    Some(a) => a.iter_mut().zip(gi).for_each(|(a, &b)| *a += b),
                    None => *acc = Some(gi.clone()),
                }
            }
        }
    }
    let inv = S::one() / S::from_usize(batch.len());
    for g in grads.iter_mut().flatten() {
        g.iter_mut().for_each(|v| *v *= inv);
    }
    Ok((grads, comps.scaled(1.0 / batch.len() as f64)))
}

/// Trains `model` in place on fixed-length windows and returns the loss log.
pub fn train<S: Real>(model: &mut HmVae<S>, data: &[MotionWindow], cfg: &TrainConfig) -> Result<TrainReport> {
    train_with(model, data, cfg, |_, _| {})
}

/// [`train`] with a per-iteration callback `(iteration, batch-mean components)`.
pub fn train_with<S: Real>(
    model: &mut HmVae<S>,
    data: &[MotionWindow],
    cfg: &TrainConfig,
    mut on_iter: impl FnMut(usize, &LossComponents),
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.batch == 0 {
        return Err(Error::InvalidArgument("batch must be >= 1".into()));
    }
    let skeleton = model.descriptor().skeleton.clone();
    let targets = data
        .iter()
        .map(|x| {
            check_window(model, x)?;
            LossTarget::new(x, &skeleton)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr);
    let mut report = TrainReport::default();
    for it in 0..cfg.iters {
        let idx: Vec<usize> = (0..cfg.batch).map(|_| rng.random_range(0..data.len())).collect();
        let noise: Vec<BatchNoise> = idx.iter().map(|_| BatchNoise::sample(model, &mut rng)).collect();
        let batch: Vec<_> = idx.iter().map(|&i| (&data[i], &targets[i])).collect();
        let warmup = it < cfg.switch_iter;
        let (grads, comps) = batch_gradient(model, &batch, &noise, warmup, cfg.weights()).map_err(|e| match e {
            Error::NonFinite(msg) => Error::NonFinite(format!("iteration {it}: {msg}")),
            e => e,
        })?;
        opt.set_lr(cfg.lr_at(it));
        opt.step(model.params_mut(), &grads);
        on_iter(it, &comps);
        report.log.push(comps);
    }
    if model.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("parameters after training".into()));
    }
    Ok(report)
}

fn check_window<S: Real>(model: &HmVae<S>, x: &MotionWindow) -> Result<()> {
    let d = model.descriptor();
    let expect = [d.window, d.num_joints(), 6];
    if x.rotations.shape() != expect {
        return Err(crate::error::shape_err("train", expect, x.rotations.shape()));
    }
    Ok(())
}
