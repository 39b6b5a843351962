use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::ops::{self, Padding};
use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::hmvae::descriptor::{ArchDescriptor, Hierarchy, Variant, BLOCKS};
use crate::hmvae::{GaussianParams, LatentPair, MotionWindow};
use crate::skeleton::{skeleton_conv, skeleton_pool, skeleton_unpool};
use crate::tensor::{Real, Tensor};

/// Indices of a weight/bias pair in the parameter list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layer {
    pub weight: usize,
    pub bias: usize,
}

/// Where each parameter group lives in [`HmVae::params`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    /// Encoder blocks B1..B4.
    pub encoder: Vec<Layer>,
    /// Latent head after B1 (local); absent for single-latent variants.
    pub head_local: Option<Layer>,
    /// Latent head after B4 (global).
    pub head_global: Layer,
    /// Linear map from the local latent to B1-level features.
    pub decoder_local_in: Option<Layer>,
    /// Linear map from the global latent to B4-level features.
    pub decoder_global_in: Layer,
    /// Decoder mirrors of B4, B3, B2 (in that order).
    pub decoder: Vec<Layer>,
    /// Final block mirroring B1, producing the six rotation channels.
    pub output: Layer,
}

impl Layout {
    /// Parameter indices that belong to the decoder.
    pub fn decoder_params(&self) -> Vec<usize> {
        let mut v = Vec::new();
        for l in self
            .decoder_local_in
            .iter()
            .chain(std::iter::once(&self.decoder_global_in))
            .chain(&self.decoder)
            .chain(std::iter::once(&self.output))
        {
            v.push(l.weight);
            v.push(l.bias);
        }
        v
    }
}

/// Hierarchical motion VAE (or one of its ablations).
#[derive(Clone, Debug)]
pub struct HmVae<S: Real> {
    desc: ArchDescriptor,
    hierarchy: Option<Hierarchy>,
    layout: Layout,
    names: Vec<String>,
    params: Vec<Tensor<S>>,
}

/// Posterior parameters as tape variables.
#[derive(Clone, Copy, Debug)]
pub struct PosteriorVars {
    pub local: Option<(Var, Var)>,
    pub global: (Var, Var),
}

struct Builder<S: Real> {
    rng: ChaCha8Rng,
    slope: f64,
    names: Vec<String>,
    params: Vec<Tensor<S>>,
}

impl<S: Real> Builder<S> {
    fn layer(&mut self, name: &str, wshape: Vec<usize>, bshape: Vec<usize>, fan_in: usize) -> Layer {
        // Kaiming-uniform with the leaky-ReLU gain
        let gain = (2.0 / (1.0 + self.slope * self.slope)).sqrt();
        let bound = gain * (3.0 / fan_in as f64).sqrt();
        let n: usize = wshape.iter().product();
        let w: Vec<S> = (0..n).map(|_| S::lit(self.rng.random_range(-bound..bound))).collect();
        self.names.push(format!("{name}.weight"));
        self.params.push(Tensor::new(wshape, w).unwrap());
        self.names.push(format!("{name}.bias"));
        self.params.push(Tensor::zeros(bshape));
        Layer {
            weight: self.params.len() - 2,
            bias: self.params.len() - 1,
        }
    }
}

/// Builds a freshly initialised model for `desc` (the variant is taken from the descriptor).
pub fn make_variant<S: Real>(desc: &ArchDescriptor, variant: Variant, seed: u64) -> Result<HmVae<S>> {
    HmVae::new(desc.clone().with_variant(variant), seed)
}

impl<S: Real> HmVae<S> {
    pub fn new(desc: ArchDescriptor, seed: u64) -> Result<Self> {
        desc.validate()?;
        let mut b = Builder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            slope: desc.leaky_slope,
            names: Vec::new(),
            params: Vec::new(),
        };
        let k = desc.kernel;
        let (layout, hierarchy) = if desc.variant.is_skeletal() {
            let h = Hierarchy::new(&desc.skeleton, desc.distance);
            let joints = h.joint_counts();
            let pairs: Vec<usize> = h.neighbors.iter().map(|t| t.num_pairs()).collect();
            let encoder = (0..BLOCKS)
                .map(|i| {
                    let (cin, cout) = (desc.channels_at(i), desc.channels_at(i + 1));
                    b.layer(
                        &format!("enc.b{}", i + 1),
                        vec![pairs[i], k, cin, cout],
                        vec![pairs[i], cout],
                        k * cin,
                    )
                })
                .collect();
            let f_local = desc.frames_at(1) * joints[1] * desc.channels_at(1);
            let f_global = desc.frames_at(BLOCKS) * joints[BLOCKS] * desc.channels_at(BLOCKS);
            let local = desc.variant.has_local_latent();
            let dl = desc.latent_local;
            let dg = desc.latent_global;
            let head_local = local.then(|| b.layer("head.local", vec![f_local, 2 * dl], vec![2 * dl], f_local));
            let head_global = b.layer("head.global", vec![f_global, 2 * dg], vec![2 * dg], f_global);
            let decoder_local_in = local.then(|| b.layer("dec.local_in", vec![dl, f_local], vec![f_local], dl));
            let decoder_global_in = b.layer("dec.global_in", vec![dg, f_global], vec![f_global], dg);
            let decoder = (1..BLOCKS)
                .rev()
                .map(|lvl| {
                    let (cin, cout) = (desc.channels_at(lvl + 1), desc.channels_at(lvl));
                    b.layer(
                        &format!("dec.b{}", lvl + 1),
                        vec![pairs[lvl], k, cin, cout],
                        vec![pairs[lvl], cout],
                        k * cin,
                    )
                })
                .collect();
            let cin = desc.channels_at(1) * if local { 2 } else { 1 };
            let output = b.layer("dec.b1", vec![pairs[0], k, cin, 6], vec![pairs[0], 6], k * cin);
            (
                Layout {
                    encoder,
                    head_local,
                    head_global,
                    decoder_local_in,
                    decoder_global_in,
                    decoder,
                    output,
                },
                Some(h),
            )
        } else {
            let j = desc.num_joints();
            let chans: Vec<usize> = (0..=BLOCKS).map(|i| tcn_channels(&desc, i)).collect();
            let encoder = (0..BLOCKS)
                .map(|i| {
                    b.layer(
                        &format!("enc.b{}", i + 1),
                        vec![k, chans[i], chans[i + 1]],
                        vec![chans[i + 1]],
                        k * chans[i],
                    )
                })
                .collect();
            let f_global = desc.frames_at(BLOCKS) * chans[BLOCKS];
            let dg = desc.latent_global;
            let head_global = b.layer("head.global", vec![f_global, 2 * dg], vec![2 * dg], f_global);
            let decoder_global_in = b.layer("dec.global_in", vec![dg, f_global], vec![f_global], dg);
            let decoder = (1..BLOCKS)
                .rev()
                .map(|lvl| {
                    b.layer(
                        &format!("dec.b{}", lvl + 1),
                        vec![k, chans[lvl + 1], chans[lvl]],
                        vec![chans[lvl]],
                        k * chans[lvl + 1],
                    )
                })
                .collect();
            let output = b.layer("dec.b1", vec![k, chans[1], j * 6], vec![j * 6], k * chans[1]);
            (
                Layout {
                    encoder,
                    head_local: None,
                    head_global,
                    decoder_local_in: None,
                    decoder_global_in,
                    decoder,
                    output,
                },
                None,
            )
        };
        Ok(HmVae {
            desc,
            hierarchy,
            layout,
            names: b.names,
            params: b.params,
        })
    }

    /// Rebuilds a model around existing parameters (checkpoint loading).
    pub fn from_parts(desc: ArchDescriptor, params: Vec<Tensor<S>>) -> Result<Self> {
        let mut model = HmVae::new(desc, 0)?;
        if params.len() != model.params.len() {
            return Err(shape_err("HmVae::from_parts", model.params.len(), params.len()));
        }
        for (slot, p) in model.params.iter_mut().zip(params) {
            if slot.shape() != p.shape() {
                return Err(shape_err("HmVae::from_parts", slot.shape(), p.shape()));
            }
            *slot = p;
        }
        Ok(model)
    }

    pub fn descriptor(&self) -> &ArchDescriptor {
        &self.desc
    }

    pub fn variant(&self) -> Variant {
        self.desc.variant
    }

    /// Pooling hierarchy; `None` for the temporal-convolution ablation.
    pub fn hierarchy(&self) -> Option<&Hierarchy> {
        self.hierarchy.as_ref()
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Number of latent heads (2 for the hierarchical model, 1 otherwise).
    pub fn num_latent_heads(&self) -> usize {
        1 + usize::from(self.layout.head_local.is_some())
    }

    pub fn cast<T: Real>(&self) -> HmVae<T> {
        HmVae {
            desc: self.desc.clone(),
            hierarchy: self.hierarchy.clone(),
            layout: self.layout.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(|p| p.cast()).collect(),
        }
    }

    /// Places every parameter on `tape`; `trainable(i)` decides which are tracked.
    pub fn bind(&self, tape: &mut Tape<S>, trainable: impl Fn(usize) -> bool) -> Vec<Var> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if trainable(i) {
                    tape.param(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect()
    }

    fn check_window(&self, shape: &[usize]) -> Result<()> {
        let expect = [self.desc.window, self.desc.num_joints(), 6];
        if shape != expect {
            return Err(shape_err("HmVae", expect, shape));
        }
        Ok(())
    }

    /// Encoder on a `[T×J×6]` input. Returns posterior (mean, log-variance) pairs.
    pub fn encode_on(&self, tape: &mut Tape<S>, p: &[Var], x: Var) -> Result<PosteriorVars> {
        self.check_window(tape.shape(x))?;
        let slope = self.desc.leaky_slope;
        let l = &self.layout;
        let mut h = x;
        let mut shallow = None;
        match &self.hierarchy {
            Some(hier) => {
                for b in 0..BLOCKS {
                    let e = l.encoder[b];
                    h = skeleton_conv(
                        tape,
                        h,
                        p[e.weight],
                        p[e.bias],
                        &hier.neighbors[b],
                        self.desc.strides[b],
                    )?;
                    h = skeleton_pool(tape, h, &hier.plans[b])?;
                    h = ops::leaky_relu(tape, h, slope);
                    if b == 0 {
                        shallow = Some(h);
                    }
                }
            }
            None => {
                let j = self.desc.num_joints();
                h = ops::reshape(tape, h, vec![self.desc.window, j * 6])?;
                for b in 0..BLOCKS {
                    let e = l.encoder[b];
                    h = ops::conv1d_temporal(tape, h, p[e.weight], p[e.bias], self.desc.strides[b], Padding::Same)?;
                    h = ops::leaky_relu(tape, h, slope);
                }
            }
        }
        let global = self.head(tape, p, h, l.head_global, self.desc.latent_global)?;
        let local = match (l.head_local, shallow) {
            (Some(head), Some(f)) => Some(self.head(tape, p, f, head, self.desc.latent_local)?),
            _ => None,
        };
        Ok(PosteriorVars { local, global })
    }

    fn head(&self, tape: &mut Tape<S>, p: &[Var], features: Var, layer: Layer, dim: usize) -> Result<(Var, Var)> {
        let n = tape.value(features).len();
        let flat = ops::reshape(tape, features, vec![n])?;
        let out = ops::linear(tape, flat, p[layer.weight], p[layer.bias])?;
        let mu = ops::slice(tape, out, 0, dim)?;
        let log_var = ops::slice(tape, out, dim, dim)?;
        Ok((mu, log_var))
    }

    /// Decoder from latent variables to a `[T×J×6]` window. `z_local` is
    /// required for the hierarchical model and ignored otherwise.
    pub fn decode_on(&self, tape: &mut Tape<S>, p: &[Var], z_local: Option<Var>, z_global: Var) -> Result<Var> {
        let d = &self.desc;
        let l = &self.layout;
        let slope = d.leaky_slope;
        if tape.shape(z_global) != [d.latent_global] {
            return Err(shape_err("decode", [d.latent_global], tape.shape(z_global)));
        }
        match &self.hierarchy {
            Some(hier) => {
                let joints = hier.joint_counts();
                let g = ops::linear(
                    tape,
                    z_global,
                    p[l.decoder_global_in.weight],
                    p[l.decoder_global_in.bias],
                )?;
                let mut h = ops::reshape(
                    tape,
                    g,
                    vec![d.frames_at(BLOCKS), joints[BLOCKS], d.channels_at(BLOCKS)],
                )?;
                for (i, lvl) in (1..BLOCKS).rev().enumerate() {
                    // mirror of encoder block lvl+1: level lvl+1 -> lvl
                    let layer = l.decoder[i];
                    h = ops::upsample_temporal(tape, h, d.strides[lvl])?;
                    h = skeleton_unpool(tape, h, &hier.plans[lvl])?;
                    h = skeleton_conv(tape, h, p[layer.weight], p[layer.bias], &hier.neighbors[lvl], 1)?;
                    h = ops::leaky_relu(tape, h, slope);
                }
                if let Some(li) = l.decoder_local_in {
                    let z = z_local.ok_or_else(|| shape_err("decode", [d.latent_local], "no local latent"))?;
                    if tape.shape(z) != [d.latent_local] {
                        return Err(shape_err("decode", [d.latent_local], tape.shape(z)));
                    }
                    let f = ops::linear(tape, z, p[li.weight], p[li.bias])?;
                    let f = ops::reshape(tape, f, vec![d.frames_at(1), joints[1], d.channels_at(1)])?;
                    h = ops::concat_channels(tape, h, f)?;
                }
                h = ops::upsample_temporal(tape, h, d.strides[0])?;
                h = skeleton_unpool(tape, h, &hier.plans[0])?;
                skeleton_conv(tape, h, p[l.output.weight], p[l.output.bias], &hier.neighbors[0], 1)
            }
            None => {
                let g = ops::linear(
                    tape,
                    z_global,
                    p[l.decoder_global_in.weight],
                    p[l.decoder_global_in.bias],
                )?;
                let mut h = ops::reshape(tape, g, vec![d.frames_at(BLOCKS), tcn_channels(d, BLOCKS)])?;
                for (i, lvl) in (1..BLOCKS).rev().enumerate() {
                    let layer = l.decoder[i];
                    h = ops::upsample_temporal(tape, h, d.strides[lvl])?;
                    h = ops::conv1d_temporal(tape, h, p[layer.weight], p[layer.bias], 1, Padding::Same)?;
                    h = ops::leaky_relu(tape, h, slope);
                }
                h = ops::upsample_temporal(tape, h, d.strides[0])?;
                let y = ops::conv1d_temporal(tape, h, p[l.output.weight], p[l.output.bias], 1, Padding::Same)?;
                ops::reshape(tape, y, vec![d.window, d.num_joints(), 6])
            }
        }
    }

    /// Posterior parameters of a window (deterministic).
    pub fn encode(&self, x: &MotionWindow) -> Result<(GaussianParams, GaussianParams)> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, |_| false);
        let xv = tape.constant(x.rotations.cast());
        let post = self.encode_on(&mut tape, &p, xv)?;
        let read = |tape: &Tape<S>, (mu, lv): (Var, Var)| GaussianParams {
            mu: tape.value(mu).to_f64_vec(),
            log_var: tape.value(lv).to_f64_vec(),
        };
        let global = read(&tape, post.global);
        let local = match post.local {
            Some(pair) => read(&tape, pair),
            None => GaussianParams::default(),
        };
        Ok((local, global))
    }

    pub fn decode(&self, z: &LatentPair) -> Result<MotionWindow> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, |_| false);
        let zl = if self.desc.variant.has_local_latent() {
            Some(tape.constant(Tensor::from_vec(z.local.iter().map(|&v| S::lit(v)).collect())))
        } else {
            None
        };
        let zg = tape.constant(Tensor::from_vec(z.global.iter().map(|&v| S::lit(v)).collect()));
        let y = self.decode_on(&mut tape, &p, zl, zg)?;
        Ok(MotionWindow {
            rotations: tape.value(y).cast(),
        })
    }

    /// Encode to posterior means and decode again.
    pub fn reconstruct(&self, x: &MotionWindow) -> Result<MotionWindow> {
        let (local, global) = self.encode(x)?;
        self.decode(&LatentPair {
            local: local.mu,
            global: global.mu,
        })
    }
}

/// Channel width of the temporal-convolution ablation after block `b`:
/// the skeletal model's per-bone width times its bone count at that level.
pub(crate) fn tcn_channels(desc: &ArchDescriptor, b: usize) -> usize {
    if b == 0 {
        return desc.num_joints() * 6;
    }
    let h = Hierarchy::new(&desc.skeleton, desc.distance);
    desc.channels_at(b) * h.joint_counts()[b]
}
