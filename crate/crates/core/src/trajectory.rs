//! Root trajectory from local motion: skeleton convolutions without temporal
//! downsampling predict per-frame root velocity, which is integrated into a
//! global path.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ops, Tape, Var};
use crate::data::{positions_tensor, MotionClip};
use crate::error::{shape_err, Error, Result};
use crate::hmvae::{Hierarchy, Layer, BLOCKS};
use crate::optim::Optimizer;
use crate::skeleton::{skeleton_conv, skeleton_pool, Skeleton};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub skeleton: Skeleton,
    pub widths: [usize; BLOCKS],
    pub kernel: usize,
    pub distance: usize,
    pub leaky_slope: f64,
}

impl TrajectoryConfig {
    pub fn new(skeleton: Skeleton) -> Self {
        TrajectoryConfig {
            skeleton,
            widths: [16, 32, 32, 32],
            kernel: 3,
            distance: 2,
            leaky_slope: 0.2,
        }
    }
}

/// Velocities `V` and integrated positions `G = cumsum(V)`, both `[T×3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub velocities: Tensor<f64>,
    pub positions: Tensor<f64>,
}

impl Trajectory {
    pub fn from_velocities(velocities: Tensor<f64>) -> Result<Self> {
        let positions = integrate_trajectory(&velocities)?;
        Ok(Trajectory { velocities, positions })
    }

    /// CSV with columns `t,vx,vy,vz,gx,gy,gz`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,vx,vy,vz,gx,gy,gz\n");
        let (v, g) = (self.velocities.data(), self.positions.data());
        for t in 0..v.len() / 3 {
            let _ = writeln!(
                out,
                "{t},{},{},{},{},{},{}",
                v[3 * t],
                v[3 * t + 1],
                v[3 * t + 2],
                g[3 * t],
                g[3 * t + 1],
                g[3 * t + 2]
            );
        }
        out
    }
}

/// Inclusive prefix sum `G_t = Σ_{i≤t} V_i` over a `[T×3]` tensor.
pub fn integrate_trajectory(v: &Tensor<f64>) -> Result<Tensor<f64>> {
    let [t, 3] = *v.shape() else {
        return Err(shape_err("integrate_trajectory", "[T, 3]", v.shape()));
    };
    Tensor::new(vec![t, 3], ops::prefix_sum(v.data(), t, 3))
}

/// `Σ_t ‖V'_t − V_t‖² + ‖G'_t − G_t‖²` with `G' = cumsum(V')`.
pub fn trajectory_loss<S: Real>(tape: &mut Tape<S>, v_pred: Var, v: &[S], g: &[S]) -> Result<Var> {
    let gp = ops::cumsum_time(tape, v_pred)?;
    let lv = ops::sq_err_sum(tape, v_pred, v, None)?;
    let lg = ops::sq_err_sum(tape, gp, g, None)?;
    ops::add(tape, lv, lg)
}

/// Value-level [`trajectory_loss`].
pub fn trajectory_loss_value(v_pred: &Tensor<f64>, v: &Tensor<f64>) -> Result<f64> {
    if v_pred.shape() != v.shape() {
        return Err(shape_err("trajectory_loss", v.shape(), v_pred.shape()));
    }
    let (gp, g) = (integrate_trajectory(v_pred)?, integrate_trajectory(v)?);
    let sq =
        |a: &Tensor<f64>, b: &Tensor<f64>| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    Ok(sq(v_pred, v) + sq(&gp, &g))
}

/// Training pair: root-local joint positions and root velocities of a window.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySample {
    /// `[T×J×3]`, FK with the root at the origin.
    pub positions: Tensor<f64>,
    /// `[T×3]`, `V_0 = 0` and `V_t = root_t − root_{t−1}`.
    pub velocity: Tensor<f64>,
}

impl TrajectorySample {
    pub fn from_clip(clip: &MotionClip) -> Result<Self> {
        let positions = positions_tensor(&clip.local_positions()?)?;
        let roots = clip.root_translations();
        let mut v = vec![0.0; 3 * roots.len()];
        for t in 1..roots.len() {
            for k in 0..3 {
                v[3 * t + k] = roots[t][k] - roots[t - 1][k];
            }
        }
        Ok(TrajectorySample {
            positions,
            velocity: Tensor::new(vec![roots.len(), 3], v)?,
        })
    }

    /// Every window of length `t` with the given stride.
    pub fn windows(clip: &MotionClip, t: usize, stride: usize) -> Result<Vec<Self>> {
        if clip.len() < t {
            return Err(Error::TooShort {
                len: clip.len(),
                window: t,
            });
        }
        (0..=(clip.len() - t) / stride.max(1))
            .map(|i| TrajectorySample::from_clip(&clip.slice(i * stride.max(1), t)?))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct TrajectoryModel<S: Real> {
    cfg: TrajectoryConfig,
    hierarchy: Hierarchy,
    blocks: Vec<Layer>,
    head: Layer,
    params: Vec<Tensor<S>>,
}

impl<S: Real> TrajectoryModel<S> {
    pub fn new(cfg: TrajectoryConfig, seed: u64) -> Result<Self> {
        if cfg.kernel == 0 || cfg.widths.contains(&0) {
            return Err(Error::InvalidArgument("kernel and widths must be >= 1".into()));
        }
        let hierarchy = Hierarchy::new(&cfg.skeleton, cfg.distance);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let gain = (2.0 / (1.0 + cfg.leaky_slope * cfg.leaky_slope)).sqrt();
        let mut layer = |params: &mut Vec<Tensor<S>>, w: Vec<usize>, b: Vec<usize>, fan_in: usize| {
            let bound = gain * (3.0 / fan_in as f64).sqrt();
            let n = w.iter().product();
            let data = (0..n).map(|_| S::lit(rng.random_range(-bound..bound))).collect();
            params.push(Tensor::new(w, data).expect("sized"));
            params.push(Tensor::zeros(b));
            Layer {
                weight: params.len() - 2,
                bias: params.len() - 1,
            }
        };
        let mut cin = 3;
        let mut blocks = Vec::with_capacity(BLOCKS);
        for b in 0..BLOCKS {
            let pairs = hierarchy.neighbors[b].num_pairs();
            let cout = cfg.widths[b];
            blocks.push(layer(
                &mut params,
                vec![pairs, cfg.kernel, cin, cout],
                vec![pairs, cout],
                cfg.kernel * cin,
            ));
            cin = cout;
        }
        let features = hierarchy.joint_counts()[BLOCKS] * cin;
        let head = layer(&mut params, vec![features, 3], vec![3], features);
        Ok(TrajectoryModel {
            cfg,
            hierarchy,
            blocks,
            head,
            params,
        })
    }

    /// Rebuilds a model around existing parameters.
    pub fn from_parts(cfg: TrajectoryConfig, params: Vec<Tensor<S>>) -> Result<Self> {
        let mut model = TrajectoryModel::new(cfg, 0)?;
        if params.len() != model.params.len() {
            return Err(shape_err(
                "TrajectoryModel::from_parts",
                model.params.len(),
                params.len(),
            ));
        }
        for (slot, p) in model.params.iter_mut().zip(params) {
            if slot.shape() != p.shape() {
                return Err(shape_err("TrajectoryModel::from_parts", slot.shape(), p.shape()));
            }
            *slot = p;
        }
        Ok(model)
    }

    pub fn cast<T: Real>(&self) -> TrajectoryModel<T> {
        TrajectoryModel {
            cfg: self.cfg.clone(),
            hierarchy: self.hierarchy.clone(),
            blocks: self.blocks.clone(),
            head: self.head,
            params: self.params.iter().map(|p| p.cast()).collect(),
        }
    }

    pub fn config(&self) -> &TrajectoryConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[Tensor<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.params
    }

    pub fn bind(&self, tape: &mut Tape<S>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect()
    }

    /// `[T×J×3]` root-local joint positions to `[T×3]` root velocities.
    pub fn predict_on(&self, tape: &mut Tape<S>, p: &[Var], positions: Var) -> Result<Var> {
        let s = tape.shape(positions);
        let j = self.cfg.skeleton.num_joints();
        let [t, jj, 3] = *s else {
            return Err(shape_err("predict_root_velocity", "[T, J, 3]", s));
        };
        if jj != j {
            return Err(shape_err("predict_root_velocity", j, jj));
        }
        let mut h = positions;
        for (b, l) in self.blocks.iter().enumerate() {
            h = skeleton_conv(tape, h, p[l.weight], p[l.bias], &self.hierarchy.neighbors[b], 1)?;
            h = skeleton_pool(tape, h, &self.hierarchy.plans[b])?;
            h = ops::leaky_relu(tape, h, self.cfg.leaky_slope);
        }
        let f = tape.value(h).len() / t;
        let h = ops::reshape(tape, h, vec![t, f])?;
        ops::linear(tape, h, p[self.head.weight], p[self.head.bias])
    }

    pub fn predict_root_velocity(&self, positions: &Tensor<f64>) -> Result<Tensor<f64>> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let x = tape.constant(positions.cast());
        let v = self.predict_on(&mut tape, &p, x)?;
        Ok(tape.value(v).cast())
    }

    /// Predicted trajectory of a clip, offset so that `G` starts at the clip's first root.
    pub fn predict_clip(&self, clip: &MotionClip) -> Result<Trajectory> {
        let positions = positions_tensor(&clip.local_positions()?)?;
        let v = self.predict_root_velocity(&positions)?;
        let mut traj = Trajectory::from_velocities(v)?;
        if let Some(first) = clip.frames.first() {
            for row in traj.positions.data_mut().chunks_exact_mut(3) {
                for k in 0..3 {
                    row[k] += first.root[k];
                }
            }
        }
        Ok(traj)
    }

    /// Mean squared velocity error per coordinate.
    pub fn velocity_mse(&self, samples: &[TrajectorySample]) -> Result<f64> {
        let mut total = 0.0;
        let mut n = 0usize;
        for s in samples {
            let v = self.predict_root_velocity(&s.positions)?;
            total += v
                .data()
                .iter()
                .zip(s.velocity.data())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>();
            n += v.len();
        }
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok(total / n as f64)
    }
}

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryFile {
    format: String,
    config: TrajectoryConfig,
    params: Vec<StoredTensor>,
}

const TRAJECTORY_FORMAT: &str = "trajectory-model-v1";

/// Saves a trajectory model as JSON (`f32` values round-trip exactly).
pub fn save_trajectory(model: &TrajectoryModel<f32>, path: impl AsRef<Path>) -> Result<()> {
    let file = TrajectoryFile {
        format: TRAJECTORY_FORMAT.into(),
        config: model.cfg.clone(),
        params: model
            .params
            .iter()
            .map(|p| StoredTensor {
                shape: p.shape().to_vec(),
                data: p.data().to_vec(),
            })
            .collect(),
    };
    std::fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<TrajectoryModel<f32>> {
    let mut file: TrajectoryFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if file.format != TRAJECTORY_FORMAT {
        return Err(Error::Checkpoint(format!(
            "unknown trajectory format `{}`",
            file.format
        )));
    }
    file.config.skeleton = Skeleton::new(file.config.skeleton.joints().to_vec())?;
    let params = file
        .params
        .into_iter()
        .map(|t| Tensor::new(t.shape, t.data))
        .collect::<Result<Vec<_>>>()?;
    TrajectoryModel::from_parts(file.config, params)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTrainConfig {
    pub batch: usize,
    pub iters: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrajectoryTrainConfig {
    fn default() -> Self {
        TrajectoryTrainConfig {
            batch: 8,
            iters: 500,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Trains on ground-truth positions and returns the batch-mean loss per iteration.
pub fn train_trajectory<S: Real>(
    model: &mut TrajectoryModel<S>,
    samples: &[TrajectorySample],
    cfg: &TrajectoryTrainConfig,
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let targets: Vec<(Vec<S>, Vec<S>)> = samples
        .iter()
        .map(|s| {
            let g = integrate_trajectory(&s.velocity)?;
            Ok((s.velocity.cast::<S>().into_data(), g.cast::<S>().into_data()))
        })
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::adam(cfg.lr);
    let mut log = Vec::with_capacity(cfg.iters);
    for it in 0..cfg.iters {
        let idx: Vec<usize> = (0..cfg.batch.max(1))
            .map(|_| rng.random_range(0..samples.len()))
            .collect();
        let model_ref = &*model;
        let parts = idx
            .par_iter()
            .map(|&i| {
                let mut tape = Tape::new();
                let p = model_ref.bind(&mut tape, true);
                let x = tape.constant(samples[i].positions.cast());
                let v = model_ref.predict_on(&mut tape, &p, x)?;
                let loss = trajectory_loss(&mut tape, v, &targets[i].0, &targets[i].1)?;
                let value = tape.value(loss).item().to_f64_lossy();
                tape.backward(loss)?;
                Ok((p.iter().map(|&v| tape.grad_or_zero(v)).collect::<Vec<_>>(), value))
            })
            .collect::<Result<Vec<_>>>()?;
        let inv = S::one() / S::from_usize(parts.len());
        let mut grads: Vec<Vec<S>> = model.params.iter().map(|p| vec![S::zero(); p.len()]).collect();
        let mut loss = 0.0;
        for (g, l) in &parts {
            loss += l;
            for (acc, gi) in grads.iter_mut().zip(g) {
                ops::axpy(inv, gi, acc);
            }
        }
        loss /= parts.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("trajectory loss at iteration {it}")));
        }
        let grads: Vec<Option<Vec<S>>> = grads.into_iter().map(Some).collect();
        opt.step(&mut model.params, &grads);
        log.push(loss);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::data::{synth_dataset, SynthConfig};

    #[test]
    fn integration_hand_cases() {
        let v = Tensor::new(vec![2, 3], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(
            integrate_trajectory(&v).unwrap().data(),
            &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]
        );
        let z = Tensor::zeros(vec![4, 3]);
        assert_eq!(integrate_trajectory(&z).unwrap().data(), z.data());
        assert!(integrate_trajectory(&Tensor::zeros(vec![4, 2])).is_err());
    }

    #[test]
    fn integration_is_exact_prefix_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for t in [1usize, 2, 17, 64] {
            let v = Tensor::new(vec![t, 3], (0..3 * t).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let g = integrate_trajectory(&v).unwrap();
            for k in 0..3 {
                let mut acc = 0.0;
                for i in 0..t {
                    acc += v.data()[3 * i + k];
                    assert_eq!(g.data()[3 * i + k], acc, "t={t} i={i} k={k}");
                }
            }
        }
    }

    #[test]
    fn loss_hand_value() {
        let v = Tensor::zeros(vec![4, 3]);
        let mut vp = Tensor::zeros(vec![4, 3]);
        assert_eq!(trajectory_loss_value(&vp, &v).unwrap(), 0.0);
        // unit error at frame 1 propagates to G at frames 1, 2, 3
        vp.data_mut()[3] = 1.0;
        assert_eq!(trajectory_loss_value(&vp, &v).unwrap(), 1.0 + 3.0);
        let mut tape = Tape::<f64>::new();
        let x = tape.param(vp.clone());
        let l = trajectory_loss(&mut tape, x, &[0.0; 12], &[0.0; 12]).unwrap();
        assert_eq!(tape.value(l).item(), 4.0);
    }

    #[test]
    fn prediction_shape_and_gradients() {
        let sk = Skeleton::toy7();
        let cfg = TrajectoryConfig {
            widths: [4, 4, 4, 4],
            ..TrajectoryConfig::new(sk.clone())
        };
        let m = TrajectoryModel::<f64>::new(cfg, 1).unwrap();
        let clip = synth_dataset(
            &SynthConfig {
                length: 5,
                ..SynthConfig::toy(2)
            },
            1,
        )
        .unwrap()
        .remove(0);
        let s = TrajectorySample::from_clip(&clip).unwrap();
        let v = m.predict_root_velocity(&s.positions).unwrap();
        assert_eq!(v.shape(), &[5, 3]);
        assert_eq!(v, m.predict_root_velocity(&s.positions).unwrap());
        let (vt, gt) = (
            s.velocity.data().to_vec(),
            integrate_trajectory(&s.velocity).unwrap().into_data(),
        );
        for seed in 0..20u64 {
            let m = TrajectoryModel::<f64>::new(m.config().clone(), seed).unwrap();
            let mut params = vec![s.positions.clone()];
            params.extend(m.params().iter().cloned());
            let err = grad_check(
                |tape, p| {
                    let v = m.predict_on(tape, &p[1..], p[0])?;
                    trajectory_loss(tape, v, &vt, &gt)
                },
                &params,
                // small step keeps central differences off the activation kinks
                1e-7,
            )
            .unwrap();
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }

    #[test]
    fn save_load_round_trip() {
        let cfg = TrajectoryConfig {
            widths: [3, 4, 4, 5],
            ..TrajectoryConfig::new(Skeleton::toy7())
        };
        let m = TrajectoryModel::<f32>::new(cfg, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.json");
        save_trajectory(&m, &path).unwrap();
        let back = load_trajectory(&path).unwrap();
        assert_eq!(back.config(), m.config());
        assert_eq!(back.params(), m.params());
        std::fs::write(&path, "{}").unwrap();
        assert!(load_trajectory(&path).is_err());
    }

    #[test]
    fn csv_columns() {
        let t =
            Trajectory::from_velocities(Tensor::new(vec![2, 3], vec![1.0, 0.0, 0.5, 1.0, 0.0, 0.5]).unwrap()).unwrap();
        let csv = t.to_csv();
        assert_eq!(csv.lines().next().unwrap(), "t,vx,vy,vz,gx,gy,gz");
        assert_eq!(csv.lines().nth(2).unwrap(), "1,1,0,0.5,2,0,1");
    }
}
