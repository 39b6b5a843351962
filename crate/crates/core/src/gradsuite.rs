//! Finite-difference gradient suite over every differentiable operator and
//! the end-to-end model losses, at `f64` and `f32`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::ops::{self, Padding};
use crate::autodiff::{grad_check_f32, grad_check_with, Tape, Var};
use crate::error::Result;
use crate::hmvae::{
    kl_op, loss_total, reparameterize_on, ArchDescriptor, Hierarchy, HmVae, LossTarget, LossWeights, MotionWindow,
    Variant,
};
use crate::kinematics::forward_kinematics_op;
use crate::rotation::{matrix_to_rot6d, rot6d_to_matrix_op, RotMatrix};
use crate::skeleton::{skeleton_conv, skeleton_pool, skeleton_unpool, Skeleton};
use crate::tensor::{Real, Tensor};
use crate::trajectory::{trajectory_loss, TrajectoryConfig, TrajectoryModel};

pub const F64_TOLERANCE: f64 = 1e-5;
pub const F32_TOLERANCE: f64 = 1e-3;
const EPSILON: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckResult {
    pub name: String,
    pub precision: String,
    pub seeds: usize,
    /// Worst relative error over all seeds.
    pub max_error: f64,
    pub tolerance: f64,
}

impl GradCheckResult {
    pub fn passed(&self) -> bool {
        self.max_error < self.tolerance
    }
}

/// Per-seed fixture shared by every case: random constants and small models.
struct Fixture {
    rng_seed: u64,
    skeleton: Skeleton,
    hierarchy: Hierarchy,
    window: MotionWindow,
    models: Vec<HmVae<f64>>,
    trajectory: TrajectoryModel<f64>,
}

impl Fixture {
    fn new(seed: u64) -> Result<Self> {
        let skeleton = Skeleton::toy7();
        let hierarchy = Hierarchy::new(&skeleton, 2);
        let desc = tiny_descriptor();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let frames: Vec<Vec<_>> = (0..desc.window)
            .map(|_| {
                (0..skeleton.num_joints())
                    .map(|_| {
                        let axis = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0];
                        matrix_to_rot6d(&RotMatrix::from_axis_angle(axis, rng.random_range(-1.5..1.5)))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let models = Variant::ALL
            .iter()
            .map(|&v| HmVae::new(desc.clone().with_variant(v), seed))
            .collect::<Result<_>>()?;
        let traj_cfg = TrajectoryConfig {
            widths: [2, 2, 2, 2],
            ..TrajectoryConfig::new(skeleton.clone())
        };
        Ok(Fixture {
            rng_seed: seed,
            hierarchy,
            window: MotionWindow::from_frames(&frames)?,
            models,
            trajectory: TrajectoryModel::new(traj_cfg, seed)?,
            skeleton,
        })
    }

    /// Deterministic constants for a case, independent of precision.
    fn constants(&self, salt: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed.wrapping_mul(0x9e37_79b9).wrapping_add(salt));
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }
}

fn tiny_descriptor() -> ArchDescriptor {
    ArchDescriptor {
        window: 4,
        widths: [2, 2, 2, 3],
        strides: [2, 2, 1, 1],
        latent_local: 2,
        latent_global: 2,
        ..ArchDescriptor::toy()
    }
}

/// `Σ c ⊙ y` with fixed random coefficients, turning any output into a scalar.
fn project<S: Real>(tape: &mut Tape<S>, fx: &Fixture, y: Var, salt: u64) -> Result<Var> {
    let n = tape.value(y).len();
    let c: Vec<S> = fx.constants(salt, n).iter().map(|&v| S::lit(v)).collect();
    let m = ops::mul_const(tape, y, &c)?;
    Ok(ops::sum(tape, m))
}

fn consts<S: Real>(fx: &Fixture, salt: u64, n: usize) -> Vec<S> {
    fx.constants(salt, n).iter().map(|&v| S::lit(v)).collect()
}

type Graph<S> = fn(&mut Tape<S>, &[Var], &Fixture) -> Result<Var>;

struct Case {
    name: &'static str,
    /// Parameter shapes; values are drawn per seed.
    shapes: fn(&Fixture) -> Vec<Vec<usize>>,
    /// Optional custom initial values (overrides `shapes`).
    init: Option<fn(&Fixture) -> Vec<Tensor<f64>>>,
    f64: Graph<f64>,
    f32: Graph<f32>,
}

macro_rules! case {
    ($name:expr, $shapes:expr, |$tape:ident, $p:ident, $fx:ident| $body:expr) => {
        case!($name, $shapes, None, |$tape, $p, $fx| $body)
    };
    ($name:expr, $shapes:expr, $init:expr, |$tape:ident, $p:ident, $fx:ident| $body:expr) => {{
        fn graph<S: Real>($tape: &mut Tape<S>, $p: &[Var], $fx: &Fixture) -> Result<Var> {
            $body
        }
        Case {
            name: $name,
            shapes: $shapes,
            init: $init,
            f64: graph::<f64>,
            f32: graph::<f32>,
        }
    }};
}

fn pairs(fx: &Fixture, level: usize) -> usize {
    fx.hierarchy.neighbors[level].num_pairs()
}

fn model_params(fx: &Fixture, v: usize) -> Vec<Tensor<f64>> {
    let mut p = vec![fx.window.rotations.clone()];
    p.extend(fx.models[v].params().iter().cloned());
    p
}

/// Encoder, reparameterization with fixed noise, decoder and full loss.
fn model_loss<S: Real>(tape: &mut Tape<S>, p: &[Var], fx: &Fixture, v: usize) -> Result<Var> {
    let model: HmVae<S> = fx.models[v].cast();
    let d = model.descriptor();
    let post = model.encode_on(tape, &p[1..], p[0])?;
    let (mg, lg) = post.global;
    let zg = reparameterize_on(tape, mg, lg, &consts(fx, 91, d.latent_global))?;
    let zl = match post.local {
        Some((ml, ll)) => Some(reparameterize_on(tape, ml, ll, &consts(fx, 92, d.latent_local))?),
        None => None,
    };
    let y = model.decode_on(tape, &p[1..], zl, zg)?;
    let target = LossTarget::<S>::new(&fx.window, &d.skeleton)?;
    let w = LossWeights {
        beta: 0.1,
        lambda: 10.0,
    };
    Ok(loss_total(tape, y, &target, &d.skeleton, post.local, Some(post.global), w)?.0)
}

fn cases() -> Vec<Case> {
    vec![
        case!("add", |_| vec![vec![3, 4], vec![3, 4]], |t, p, fx| {
            let y = ops::add(t, p[0], p[1])?;
            project(t, fx, y, 1)
        }),
        case!("sub", |_| vec![vec![3, 4], vec![3, 4]], |t, p, fx| {
            let y = ops::sub(t, p[0], p[1])?;
            project(t, fx, y, 2)
        }),
        case!("mul", |_| vec![vec![3, 4], vec![3, 4]], |t, p, fx| {
            let y = ops::mul(t, p[0], p[1])?;
            project(t, fx, y, 3)
        }),
        case!("scale", |_| vec![vec![5]], |t, p, fx| {
            let y = ops::scale(t, p[0], -1.7);
            project(t, fx, y, 4)
        }),
        case!("mul_const", |_| vec![vec![6]], |t, p, fx| {
            let y = ops::mul_const(t, p[0], &consts(fx, 50, 6))?;
            project(t, fx, y, 5)
        }),
        case!("exp", |_| vec![vec![6]], |t, p, fx| {
            let y = ops::exp(t, p[0]);
            project(t, fx, y, 6)
        }),
        case!("sum", |_| vec![vec![2, 3]], |t, p, _fx| {
            let y = ops::mul(t, p[0], p[0])?;
            Ok(ops::sum(t, y))
        }),
        case!("leaky_relu", |_| vec![vec![8]], |t, p, fx| {
            let y = ops::leaky_relu(t, p[0], 0.2);
            project(t, fx, y, 8)
        }),
        case!("reshape", |_| vec![vec![2, 6]], |t, p, fx| {
            let y = ops::reshape(t, p[0], vec![3, 4])?;
            let y = ops::mul(t, y, y)?;
            project(t, fx, y, 9)
        }),
        case!("slice", |_| vec![vec![10]], |t, p, fx| {
            let y = ops::slice(t, p[0], 3, 4)?;
            let y = ops::exp(t, y);
            project(t, fx, y, 10)
        }),
        case!("concat_channels", |_| vec![vec![3, 2], vec![3, 4]], |t, p, fx| {
            let y = ops::concat_channels(t, p[0], p[1])?;
            let y = ops::mul(t, y, y)?;
            project(t, fx, y, 11)
        }),
        case!("linear", |_| vec![vec![3, 4], vec![4, 5], vec![5]], |t, p, fx| {
            let y = ops::linear(t, p[0], p[1], p[2])?;
            let y = ops::mul(t, y, y)?;
            project(t, fx, y, 12)
        }),
        case!(
            "conv1d_temporal/same/stride2",
            |_| vec![vec![7, 3], vec![3, 3, 4], vec![4]],
            |t, p, fx| {
                let y = ops::conv1d_temporal(t, p[0], p[1], p[2], 2, Padding::Same)?;
                let y = ops::mul(t, y, y)?;
                project(t, fx, y, 13)
            }
        ),
        case!(
            "conv1d_temporal/valid",
            |_| vec![vec![6, 2], vec![3, 2, 3], vec![3]],
            |t, p, fx| {
                let y = ops::conv1d_temporal(t, p[0], p[1], p[2], 1, Padding::Valid)?;
                let y = ops::mul(t, y, y)?;
                project(t, fx, y, 14)
            }
        ),
        case!("upsample_temporal", |_| vec![vec![3, 2]], |t, p, fx| {
            let y = ops::upsample_temporal(t, p[0], 3)?;
            let y = ops::mul(t, y, y)?;
            project(t, fx, y, 15)
        }),
        case!("sq_err_sum", |_| vec![vec![4, 3]], |t, p, fx| {
            let w: Vec<S> = consts::<S>(fx, 16, 12).into_iter().map(|v| v * v).collect();
            ops::sq_err_sum(t, p[0], &consts(fx, 17, 12), Some(&w))
        }),
        case!("cumsum_time", |_| vec![vec![5, 3]], |t, p, fx| {
            let y = ops::cumsum_time(t, p[0])?;
            let y = ops::mul(t, y, y)?;
            project(t, fx, y, 18)
        }),
        case!(
            "skeleton_conv/stride1",
            |fx| vec![vec![4, 7, 3], vec![pairs(fx, 0), 3, 3, 2], vec![pairs(fx, 0), 2]],
            |t, p, fx| {
                let y = skeleton_conv(t, p[0], p[1], p[2], &fx.hierarchy.neighbors[0], 1)?;
                let y = ops::mul(t, y, y)?;
                project(t, fx, y, 19)
            }
        ),
        case!(
            "skeleton_conv/stride2",
            |fx| vec![vec![5, 7, 2], vec![pairs(fx, 0), 3, 2, 2], vec![pairs(fx, 0), 2]],
            |t, p, fx| {
                let y = skeleton_conv(t, p[0], p[1], p[2], &fx.hierarchy.neighbors[0], 2)?;
                let y = ops::mul(t, y, y)?;
                project(t, fx, y, 20)
            }
        ),
        case!("skeleton_pool", |_| vec![vec![3, 7, 2]], |t, p, fx| {
            let plan = Arc::clone(&fx.hierarchy.plans[0]);
            let y = skeleton_pool(t, p[0], &plan)?;
            let y = ops::mul(t, y, y)?;
            project(t, fx, y, 21)
        }),
        case!("skeleton_unpool", |_| vec![vec![3, 4, 2]], |t, p, fx| {
            let plan = Arc::clone(&fx.hierarchy.plans[0]);
            let y = skeleton_unpool(t, p[0], &plan)?;
            let y = ops::mul(t, y, y)?;
            project(t, fx, y, 22)
        }),
        case!(
            "rot6d_to_matrix",
            |_| vec![],
            Some(|fx: &Fixture| vec![fx.window.rotations.clone()]),
            |t, p, fx| {
                let y = rot6d_to_matrix_op(t, p[0])?;
                project(t, fx, y, 23)
            }
        ),
        case!(
            "forward_kinematics",
            |_| vec![],
            Some(|fx: &Fixture| {
                let r = Tensor::new(vec![4, 7, 9], fx.constants(24, 4 * 7 * 9)).expect("sized");
                vec![r, Tensor::new(vec![4, 3], fx.constants(25, 12)).expect("sized")]
            }),
            |t, p, fx| {
                let y = forward_kinematics_op(t, p[0], Some(p[1]), &fx.skeleton)?;
                let y = ops::mul(t, y, y)?;
                project(t, fx, y, 26)
            }
        ),
        case!("kl_divergence", |_| vec![vec![5], vec![5]], |t, p, _fx| kl_op(
            t, p[0], p[1]
        )),
        case!("reparameterize", |_| vec![vec![4], vec![4]], |t, p, fx| {
            let z = reparameterize_on(t, p[0], p[1], &consts(fx, 27, 4))?;
            let z = ops::mul(t, z, z)?;
            project(t, fx, z, 28)
        }),
        case!(
            "loss_total",
            |_| vec![],
            Some(|fx: &Fixture| {
                let noise = fx.constants(29, fx.window.rotations.len());
                let x: Vec<f64> = fx
                    .window
                    .rotations
                    .data()
                    .iter()
                    .zip(&noise)
                    .map(|(a, n)| a + 0.2 * n)
                    .collect();
                vec![
                    Tensor::new(fx.window.rotations.shape().to_vec(), x).expect("sized"),
                    Tensor::from_vec(fx.constants(30, 3)),
                    Tensor::from_vec(fx.constants(31, 3)),
                ]
            }),
            |t, p, fx| {
                let target = LossTarget::<S>::new(&fx.window, &fx.skeleton)?;
                let post = Some((p[1], p[2]));
                Ok(loss_total(t, p[0], &target, &fx.skeleton, post, post, LossWeights::default())?.0)
            }
        ),
        case!(
            "model/hm-vae",
            |_| vec![],
            Some(|fx: &Fixture| model_params(fx, 0)),
            |t, p, fx| model_loss(t, p, fx, 0)
        ),
        case!(
            "model/m-vae",
            |_| vec![],
            Some(|fx: &Fixture| model_params(fx, 1)),
            |t, p, fx| model_loss(t, p, fx, 1)
        ),
        case!(
            "model/tcn-vae",
            |_| vec![],
            Some(|fx: &Fixture| model_params(fx, 2)),
            |t, p, fx| model_loss(t, p, fx, 2)
        ),
        case!(
            "model/trajectory",
            |_| vec![],
            Some(|fx: &Fixture| {
                let mut p = vec![Tensor::new(vec![4, 7, 3], fx.constants(32, 84)).expect("sized")];
                p.extend(fx.trajectory.params().iter().cloned());
                p
            }),
            |t, p, fx| {
                let model: TrajectoryModel<S> = fx.trajectory.cast();
                let v = model.predict_on(t, &p[1..], p[0])?;
                trajectory_loss(t, v, &consts(fx, 33, 12), &consts(fx, 34, 12))
            }
        ),
    ]
}

/// Names of all checked graphs, in suite order.
pub fn case_names() -> Vec<&'static str> {
    cases().iter().map(|c| c.name).collect()
}

/// Runs every case over `seeds` seeds at both precisions, calling `on_result`
/// as each (case, precision) pair finishes.
pub fn run_suite(seeds: usize, mut on_result: impl FnMut(&GradCheckResult)) -> Result<Vec<GradCheckResult>> {
    let fixtures = (0..seeds as u64).map(Fixture::new).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for case in cases() {
        let mut worst64 = 0.0f64;
        let mut worst32 = 0.0f64;
        for fx in &fixtures {
            let params = match case.init {
                Some(init) => init(fx),
                None => (case.shapes)(fx)
                    .into_iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let n = s.iter().product();
                        Tensor::new(s, fx.constants(1000 + i as u64, n))
                    })
                    .collect::<Result<_>>()?,
            };
            let g64 = case.f64;
            let g32 = case.f32;
            worst64 = worst64.max(grad_check_with(|t, p| g64(t, p, fx), &params, EPSILON)?);
            worst32 = worst32.max(grad_check_f32(
                |t, p| g32(t, p, fx),
                |t, p| g64(t, p, fx),
                &params,
                EPSILON,
            )?);
        }
        for (precision, max_error, tolerance) in [("f64", worst64, F64_TOLERANCE), ("f32", worst32, F32_TOLERANCE)] {
            let r = GradCheckResult {
                name: case.name.to_string(),
                precision: precision.to_string(),
                seeds,
                max_error,
                tolerance,
            };
            on_result(&r);
            out.push(r);
        }
    }
    Ok(out)
}
