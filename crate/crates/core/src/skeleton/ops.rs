use std::sync::Arc;

use crate::autodiff::ops::{axpy, conv_geometry, kernel, Padding};
use crate::autodiff::{Op, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::skeleton::{NeighborTable, PoolingPlan};
use crate::tensor::{Real, Tensor};

struct SkelConvOp {
    table: Arc<NeighborTable>,
    t_in: usize,
    t_out: usize,
    bones: usize,
    k: usize,
    din: usize,
    dout: usize,
    stride: usize,
    pad_left: usize,
}

impl SkelConvOp {
    fn layout(&self, i: usize, j: usize) -> kernel::Layout {
        kernel::Layout {
            t_in: self.t_in,
            t_out: self.t_out,
            k: self.k,
            cin: self.din,
            cout: self.dout,
            stride: self.stride,
            pad_left: self.pad_left,
            x_off: j * self.din,
            x_stride: self.bones * self.din,
            o_off: i * self.dout,
            o_stride: self.bones * self.dout,
        }
    }
}

impl<S: Real> Op<S> for SkelConvOp {
    fn name(&self) -> &'static str {
        "skeleton_conv"
    }

    fn backward(&self, inputs: &[&Tensor<S>], _: &Tensor<S>, g: &[S], needs: &[bool]) -> Vec<Option<Vec<S>>> {
        let (x, w) = (inputs[0].data(), inputs[1].data());
        let wsize = self.k * self.din * self.dout;
        let mut gx = needs[0].then(|| vec![S::zero(); x.len()]);
        let mut gw = needs[1].then(|| vec![S::zero(); w.len()]);
        let mut gb = needs[2].then(|| vec![S::zero(); inputs[2].len()]);
        for i in 0..self.bones {
            let nbrs = self.table.neighbors(i);
            let inv = S::one() / S::from_usize(nbrs.len());
            // bias adjoint shared by all pairs of bone i
            let mut gsum = vec![S::zero(); self.dout];
            if gb.is_some() {
                for t in 0..self.t_out {
                    let row = &g[(t * self.bones + i) * self.dout..][..self.dout];
                    axpy(inv, row, &mut gsum);
                }
            }
            for (k, &j) in nbrs.iter().enumerate() {
                let p = self.table.pair_offset(i) + k;
                let layout = self.layout(i, j);
                let wp = &w[p * wsize..(p + 1) * wsize];
                kernel::backward(
                    &layout,
                    x,
                    wp,
                    g,
                    inv,
                    gx.as_deref_mut(),
                    gw.as_mut().map(|gw| &mut gw[p * wsize..(p + 1) * wsize]),
                );
                if let Some(gb) = gb.as_mut() {
                    gb[p * self.dout..(p + 1) * self.dout].copy_from_slice(&gsum);
                }
            }
        }
        vec![gx, gw, gb]
    }
}

/// Skeleton convolution over `[T×J×D]` features.
///
/// `weights` packs one `[k×D×D']` filter per neighbor pair as `[P×k×D×D']`,
/// `biases` one `[D']` vector per pair as `[P×D']`, pairs ordered as in
/// `table`. Each output bone averages the temporal convolutions of its
/// neighbors: `y_i = 1/|N_i| Σ_j (x_j * W_ij + b_ij)`. Temporal padding is
/// "same", so `T' = ceil(T / stride)`.
pub fn skeleton_conv<S: Real>(
    tape: &mut Tape<S>,
    x: Var,
    weights: Var,
    biases: Var,
    table: &Arc<NeighborTable>,
    stride: usize,
) -> Result<Var> {
    let xs = tape.shape(x);
    let [t, bones, din] = *xs else {
        return Err(shape_err("skeleton_conv", "[T, J, D]", xs));
    };
    if bones != table.num_bones() {
        return Err(shape_err("skeleton_conv", table.num_bones(), bones));
    }
    let ws = tape.shape(weights);
    let [npairs, k, wdin, dout] = *ws else {
        return Err(shape_err("skeleton_conv", "[P, k, D, D']", ws));
    };
    if wdin != din {
        return Err(shape_err("skeleton_conv", din, wdin));
    }
    if npairs < table.num_pairs() {
        let missing = (0..bones)
            .flat_map(|i| table.neighbors(i).iter().map(move |&j| (i, j)))
            .nth(npairs)
            .unwrap();
        return Err(Error::MissingWeight {
            bone: missing.0,
            neighbor: missing.1,
        });
    }
    if npairs != table.num_pairs() {
        return Err(shape_err("skeleton_conv", table.num_pairs(), npairs));
    }
    if tape.shape(biases) != [npairs, dout] {
        return Err(shape_err("skeleton_conv", [npairs, dout], tape.shape(biases)));
    }
    let (t_out, pad_left) = conv_geometry(t, k, stride, Padding::Same)?;
    let op = SkelConvOp {
        table: Arc::clone(table),
        t_in: t,
        t_out,
        bones,
        k,
        din,
        dout,
        stride,
        pad_left,
    };

    let (xd, wd, bd) = (
        tape.value(x).data(),
        tape.value(weights).data(),
        tape.value(biases).data(),
    );
    let wsize = k * din * dout;
    let mut out = vec![S::zero(); t_out * bones * dout];
    for i in 0..bones {
        let nbrs = table.neighbors(i);
        let inv = S::one() / S::from_usize(nbrs.len());
        let mut bias = vec![S::zero(); dout];
        for (kk, &j) in nbrs.iter().enumerate() {
            let p = table.pair_offset(i) + kk;
            kernel::forward(&op.layout(i, j), xd, &wd[p * wsize..(p + 1) * wsize], inv, &mut out);
            axpy(inv, &bd[p * dout..(p + 1) * dout], &mut bias);
        }
        for ti in 0..t_out {
            axpy(S::one(), &bias, &mut out[(ti * bones + i) * dout..][..dout]);
        }
    }
    let out = Tensor::new(vec![t_out, bones, dout], out)?;
    Ok(tape.push(out, &[x, weights, biases], op))
}

struct PoolOp {
    plan: Arc<PoolingPlan>,
    t: usize,
    d: usize,
}

impl<S: Real> Op<S> for PoolOp {
    fn name(&self) -> &'static str {
        "skeleton_pool"
    }
    fn backward(&self, _: &[&Tensor<S>], _: &Tensor<S>, g: &[S], needs: &[bool]) -> Vec<Option<Vec<S>>> {
        vec![needs[0].then(|| {
            let (j, m, d) = (self.plan.source_bones(), self.plan.num_groups(), self.d);
            let mut gi = vec![S::zero(); self.t * j * d];
            for t in 0..self.t {
                for (gidx, members) in self.plan.groups().iter().enumerate() {
                    let inv = S::one() / S::from_usize(members.len());
                    let src = &g[(t * m + gidx) * d..][..d];
                    for &b in members {
                        axpy(inv, src, &mut gi[(t * j + b) * d..][..d]);
                    }
                }
            }
            gi
        })]
    }
}

/// Averages bone features within each pooling group: `[T×J×D] → [T×m×D]`.
pub fn skeleton_pool<S: Real>(tape: &mut Tape<S>, x: Var, plan: &Arc<PoolingPlan>) -> Result<Var> {
    let xs = tape.shape(x);
    let [t, j, d] = *xs else {
        return Err(shape_err("skeleton_pool", "[T, J, D]", xs));
    };
    if j != plan.source_bones() {
        return Err(shape_err("skeleton_pool", plan.source_bones(), j));
    }
    let m = plan.num_groups();
    let xd = tape.value(x).data();
    let mut out = vec![S::zero(); t * m * d];
    for ti in 0..t {
        for (g, members) in plan.groups().iter().enumerate() {
            let inv = S::one() / S::from_usize(members.len());
            let dst = &mut out[(ti * m + g) * d..][..d];
            for &b in members {
                axpy(inv, &xd[(ti * j + b) * d..][..d], dst);
            }
        }
    }
    let out = Tensor::new(vec![t, m, d], out)?;
    Ok(tape.push(
        out,
        &[x],
        PoolOp {
            plan: Arc::clone(plan),
            t,
            d,
        },
    ))
}

struct UnpoolOp {
    plan: Arc<PoolingPlan>,
    t: usize,
    d: usize,
}

impl<S: Real> Op<S> for UnpoolOp {
    fn name(&self) -> &'static str {
        "skeleton_unpool"
    }
    fn backward(&self, _: &[&Tensor<S>], _: &Tensor<S>, g: &[S], needs: &[bool]) -> Vec<Option<Vec<S>>> {
        vec![needs[0].then(|| {
            let (j, m, d) = (self.plan.source_bones(), self.plan.num_groups(), self.d);
            let mut gi = vec![S::zero(); self.t * m * d];
            for t in 0..self.t {
                for b in 0..j {
                    let gidx = self.plan.group_of(b);
                    axpy(S::one(), &g[(t * j + b) * d..][..d], &mut gi[(t * m + gidx) * d..][..d]);
                }
            }
            gi
        })]
    }
}

/// Copies each group's feature back to all of its member bones: `[T×m×D] → [T×J×D]`.
pub fn skeleton_unpool<S: Real>(tape: &mut Tape<S>, x: Var, plan: &Arc<PoolingPlan>) -> Result<Var> {
    let xs = tape.shape(x);
    let [t, m, d] = *xs else {
        return Err(shape_err("skeleton_unpool", "[T, m, D]", xs));
    };
    if m != plan.num_groups() {
        return Err(shape_err("skeleton_unpool", plan.num_groups(), m));
    }
    let j = plan.source_bones();
    let xd = tape.value(x).data();
    let mut out = Vec::with_capacity(t * j * d);
    for ti in 0..t {
        for b in 0..j {
            let g = plan.group_of(b);
            out.extend_from_slice(&xd[(ti * m + g) * d..][..d]);
        }
    }
    let out = Tensor::new(vec![t, j, d], out)?;
    Ok(tape.push(
        out,
        &[x],
        UnpoolOp {
            plan: Arc::clone(plan),
            t,
            d,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, ops};
    use crate::skeleton::{Skeleton, Topology};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chain3() -> Topology {
        Topology::new(vec![None, Some(0), Some(1)]).unwrap()
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn identity_weights(pairs: usize, d: usize) -> Tensor<f64> {
        let mut w = vec![0.0; pairs * d * d];
        for p in 0..pairs {
            for c in 0..d {
                w[p * d * d + c * d + c] = 1.0;
            }
        }
        Tensor::new(vec![pairs, 1, d, d], w).unwrap()
    }

    #[test]
    fn zero_distance_identity_kernel_is_identity() {
        let topo = Skeleton::toy7().topology();
        let table = Arc::new(topo.neighbors_within(0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xt = rand_tensor(&mut rng, vec![5, 7, 3]);
        let mut tape = Tape::new();
        let x = tape.constant(xt.clone());
        let w = tape.constant(identity_weights(table.num_pairs(), 3));
        let b = tape.constant(Tensor::zeros(vec![table.num_pairs(), 3]));
        let y = skeleton_conv(&mut tape, x, w, b, &table, 1).unwrap();
        assert_eq!(tape.value(y).data(), xt.data());
    }

    #[test]
    fn chain_neighbor_average() {
        let table = Arc::new(chain3().neighbors_within(1));
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2, 3, 1], vec![1., 2., 3., 1., 2., 3.]).unwrap());
        let w = tape.constant(Tensor::full(vec![table.num_pairs(), 1, 1, 1], 1.0));
        let b = tape.constant(Tensor::zeros(vec![table.num_pairs(), 1]));
        let y = skeleton_conv(&mut tape, x, w, b, &table, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[1.5, 2.0, 2.5, 1.5, 2.0, 2.5]);
    }

    #[test]
    fn stride_two_halves_time() {
        let table = Arc::new(chain3().neighbors_within(1));
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(vec![8, 3, 2]));
        let w = tape.constant(Tensor::zeros(vec![table.num_pairs(), 3, 2, 4]));
        let b = tape.constant(Tensor::zeros(vec![table.num_pairs(), 4]));
        let y = skeleton_conv(&mut tape, x, w, b, &table, 2).unwrap();
        assert_eq!(tape.shape(y), &[4, 3, 4]);
    }

    #[test]
    fn missing_pair_weight_is_reported() {
        let table = Arc::new(chain3().neighbors_within(1));
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(vec![4, 3, 1]));
        let w = tape.constant(Tensor::zeros(vec![table.num_pairs() - 1, 1, 1, 1]));
        let b = tape.constant(Tensor::zeros(vec![table.num_pairs() - 1, 1]));
        let err = skeleton_conv(&mut tape, x, w, b, &table, 1).unwrap_err();
        assert!(matches!(err, Error::MissingWeight { bone: 2, neighbor: 2 }), "{err}");
    }

    #[test]
    fn pool_and_unpool_semantics() {
        let plan = Arc::new(Topology::new(vec![None, Some(0)]).unwrap().pooling_plan());
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 2, 1], vec![2.0, 4.0]).unwrap());
        let p = skeleton_pool(&mut tape, x, &plan).unwrap();
        assert_eq!(tape.value(p).data(), &[3.0]);
        let u = skeleton_unpool(&mut tape, p, &plan).unwrap();
        assert_eq!(tape.value(u).data(), &[3.0, 3.0]);
        let pu = skeleton_pool(&mut tape, u, &plan).unwrap();
        assert_eq!(tape.value(pu).data(), tape.value(p).data());
        assert!(skeleton_unpool(&mut tape, x, &plan).is_err());
    }

    #[test]
    fn singleton_plan_pool_is_identity() {
        let topo = Skeleton::toy7().topology();
        let plan = Arc::new(PoolingPlan::identity(&topo));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xt = rand_tensor(&mut rng, vec![2, 7, 2]);
        let mut tape = Tape::new();
        let x = tape.constant(xt.clone());
        let p = skeleton_pool(&mut tape, x, &plan).unwrap();
        assert_eq!(tape.value(p).data(), xt.data());
    }

    #[test]
    fn skeleton_ops_pass_grad_check() {
        let topo = Skeleton::toy7().topology();
        let plan = Arc::new(topo.pooling_plan());
        for seed in 0..20u64 {
            let d = 1 + seed as usize % 3;
            let table = Arc::new(topo.neighbors_within(d));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let stride = 1 + seed as usize % 2;
            let x = rand_tensor(&mut rng, vec![4, 7, 2]);
            let w = rand_tensor(&mut rng, vec![table.num_pairs(), 3, 2, 3]);
            let b = rand_tensor(&mut rng, vec![table.num_pairs(), 3]);
            let err = grad_check(
                |tape, p| {
                    let y = skeleton_conv(tape, p[0], p[1], p[2], &table, stride)?;
                    let pooled = skeleton_pool(tape, y, &plan)?;
                    let un = skeleton_unpool(tape, pooled, &plan)?;
                    let sq = ops::mul(tape, un, y)?;
                    Ok(ops::sum(tape, sq))
                },
                &[x, w, b],
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }
}
