//! Command-line front end: argument and config-file resolution, run
//! manifests, and one handler per subcommand.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::data::{
    augment, read_motion, synth_dataset, write_motion, AugmentConfig, BvhOptions, MotionClip, SynthConfig,
};
use crate::error::{Error, Result};
use crate::experiments::{corrupt_rot6d, gap_pa_mpjpe, reconstruction_mpjpe, windows_of};
use crate::gradsuite::run_suite;
use crate::hmvae::{
    load_checkpoint, save_checkpoint, train_with, ArchDescriptor, HmVae, MotionWindow, TrainConfig, Variant,
};
use crate::metrics::MetricReport;
use crate::optim::OptimizerKind;
use crate::skeleton::Skeleton;
use crate::tasks::{
    lerp_inbetween, lerp_root, make_body_part_mask, make_keyframe_mask, optimize_latent, refine_sequence,
    slerp_inbetween, OptimConfig, OptimResult,
};
use crate::trajectory::{load_trajectory, save_trajectory, train_trajectory, TrajectoryConfig, TrajectoryModel};
use crate::trajectory::{TrajectorySample, TrajectoryTrainConfig};

pub const SEED_ENV: &str = "MOTION_PRIOR_SEED";

#[derive(Parser, Debug, Serialize)]
#[command(
    name = "motion-prior",
    version,
    about = "Hierarchical motion VAE prior: training, refinement, in-betweening and completion"
)]
pub struct Cli {
    /// Worker threads; 1 makes every run bit-deterministic.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Flat `key = value` file supplying defaults for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// RNG seed (falls back to MOTION_PRIOR_SEED, then 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Train a motion VAE or a trajectory predictor.
    Train(TrainArgs),
    /// Denoise a sequence with a sliding-window model.
    Refine(RefineArgs),
    /// Fill a gap between keyframes by latent optimization.
    Interpolate(InterpolateArgs),
    /// Recover the full body from an observed body part.
    Complete(CompleteArgs),
    /// Compare two motion files.
    Eval(EvalArgs),
    /// Generate synthetic periodic motion.
    Synth(SynthArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Hmvae,
    Trajectory,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Toy,
    ToyRefinement,
    Standard,
    Refinement,
}

impl Preset {
    fn descriptor(self, skeleton: &str) -> Result<ArchDescriptor> {
        Ok(match self {
            Preset::Toy => ArchDescriptor::toy(),
            Preset::ToyRefinement => ArchDescriptor::toy_refinement(),
            Preset::Standard => ArchDescriptor::standard(Skeleton::preset(skeleton)?),
            Preset::Refinement => ArchDescriptor::refinement(Skeleton::preset(skeleton)?),
        })
    }

    fn is_toy(self) -> bool {
        matches!(self, Preset::Toy | Preset::ToyRefinement)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    Slerp,
    Lerp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Bvh,
    Csv,
}

#[derive(Args, Debug, Serialize)]
pub struct MotionInput {
    /// Frame rate assumed for CSV input.
    #[arg(long, default_value_t = 30.0)]
    pub fps: f64,
    /// File units to meters for BVH (0.01 for centimeters).
    #[arg(long, default_value_t = 1.0)]
    pub unit_scale: f64,
}

impl MotionInput {
    fn bvh(&self) -> BvhOptions {
        BvhOptions {
            unit_scale: self.unit_scale,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = ModelKind::Hmvae)]
    pub model: ModelKind,
    #[arg(long, default_value = "hm-vae")]
    pub variant: String,
    #[arg(long, value_enum, default_value_t = Preset::Toy)]
    pub preset: Preset,
    /// Skeleton for the full-size presets (`toy7` or `smpl24`).
    #[arg(long, default_value = "smpl24")]
    pub skeleton: String,
    /// Directory of `.bvh`/`.csv` clips; synthetic clips are generated when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Number of synthetic clips when `--data` is absent.
    #[arg(long, default_value_t = 16)]
    pub clips: usize,
    /// Synthetic clip length (defaults to the model window).
    #[arg(long)]
    pub clip_length: Option<usize>,
    /// Window stride when cutting clips.
    #[arg(long, default_value_t = 4)]
    pub stride: usize,
    /// Add one rate/rotation-augmented copy of every clip.
    #[arg(long)]
    pub augment: bool,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    /// Step size (1e-3 for toy presets and trajectories, 1e-4 otherwise).
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 0.003)]
    pub beta: f64,
    #[arg(long, default_value_t = 10.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 500)]
    pub switch_iter: usize,
    /// Learning rate reached at the last iteration, as a fraction of `--lr` (cosine decay).
    #[arg(long, default_value_t = 1.0)]
    pub final_lr_fraction: f64,
    #[arg(long, default_value = "adam")]
    pub optimizer: String,
    #[command(flatten)]
    pub input: MotionInput,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct RefineArgs {
    /// HM-VAE checkpoint (a short-window model).
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Optional ground truth for metrics.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[command(flatten)]
    pub motion: MotionInput,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct OptimArgs {
    /// Latent-only iterations (phase 1).
    #[arg(long)]
    pub phase1: Option<usize>,
    /// Decoder fine-tuning iterations (phase 2).
    #[arg(long)]
    pub phase2: Option<usize>,
    #[arg(long, default_value_t = 10.0)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda2: f64,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub decoder_lr: f64,
    #[arg(long, default_value = "adam")]
    pub optimizer: String,
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
}

impl OptimArgs {
    fn config(&self, base: OptimConfig, seed: u64) -> Result<OptimConfig> {
        Ok(OptimConfig {
            phase1_iters: self.phase1.unwrap_or(base.phase1_iters),
            phase2_iters: self.phase2.unwrap_or(base.phase2_iters),
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lr: self.lr,
            decoder_lr: self.decoder_lr,
            seed,
            optimizer: self.optimizer.parse()?,
            restarts: self.restarts,
        })
    }
}

#[derive(Args, Debug, Serialize)]
pub struct InterpolateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Ground-truth motion; one model window starting at `--start` is used.
    #[arg(long)]
    pub input: PathBuf,
    /// Missing frames between the leading and trailing keyframes.
    #[arg(long)]
    pub gap: usize,
    /// Trailing keyframes; the lead is `window − gap − trail`.
    #[arg(long, default_value_t = 1)]
    pub trail: usize,
    #[arg(long, default_value_t = 0)]
    pub start: usize,
    #[arg(long, value_enum, default_value_t = Baseline::Slerp)]
    pub baseline: Baseline,
    /// Trajectory model for the global root path (keyframe lerp otherwise).
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub motion: MotionInput,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct CompleteArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Observed body part: `upper`, `lower` or `all`.
    #[arg(long, default_value = "upper")]
    pub part: String,
    #[arg(long, default_value_t = 0)]
    pub start: usize,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub motion: MotionInput,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    pub pred: PathBuf,
    pub gt: PathBuf,
    /// Skeleton for CSV files.
    #[arg(long, default_value = "toy7")]
    pub skeleton: String,
    #[command(flatten)]
    pub motion: MotionInput,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long, default_value_t = 64)]
    pub length: usize,
    #[arg(long, default_value = "toy7")]
    pub skeleton: String,
    #[arg(long, default_value_t = 30.0)]
    pub fps: f64,
    #[arg(long, value_enum, default_value_t = Format::Bvh)]
    pub format: Format,
    /// Also write copies with Gaussian noise of this σ on the 6D channels (CSV).
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    /// Also write the results as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("config line {}: expected `key = value`", i + 1)))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(Error::InvalidArgument(format!("config line {}: empty key", i + 1)));
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().map(|a| a.to_string_lossy().into_owned());
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

/// Appends config-file values for every flag not given on the command line.
fn merge_config(argv: Vec<OsString>) -> std::result::Result<Vec<OsString>, String> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("cannot read config `{}`: {e}", path.display()))?;
    let map = parse_config(&text).map_err(|e| e.to_string())?;
    let sub_name = argv
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy())
        .find(|a| !a.starts_with('-'));
    let cmd = Cli::command();
    let sub = sub_name.as_deref().and_then(|n| cmd.find_subcommand(n));
    let given: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut out = argv;
    for (key, value) in map {
        if key == "config" {
            continue;
        }
        let flag = format!("--{key}");
        if given.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}="))) {
            continue;
        }
        let arg = sub
            .and_then(|s| s.get_arguments().find(|a| a.get_long() == Some(key.as_str())))
            .or_else(|| cmd.get_arguments().find(|a| a.get_long() == Some(key.as_str())))
            .ok_or_else(|| format!("config `{}`: unknown key `{key}`", path.display()))?;
        if arg.get_action().takes_values() {
            out.push(flag.into());
            out.push(value.into());
        } else if matches!(value.as_str(), "true" | "1" | "yes") {
            out.push(flag.into());
        } else if !matches!(value.as_str(), "false" | "0" | "no") {
            return Err(format!("config `{}`: `{key}` expects true or false", path.display()));
        }
    }
    Ok(out)
}

fn resolve_seed(flag: Option<u64>) -> std::result::Result<u64, String> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| format!("{SEED_ENV} must be an unsigned integer, got `{v}`")),
        Err(_) => Ok(0),
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code: 0 success, 1 runtime error, 2 usage error.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match merge_config(argv) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let seed = match resolve_seed(cli.seed) {
        Ok(s) => s,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 2;
        }
    };
    match execute(&cli, seed) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}

fn execute(cli: &Cli, seed: u64) -> Result<i32> {
    let threads = cli.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Train(a) => cmd_train(cli, a, seed).map(|_| 0),
        Command::Refine(a) => cmd_refine(cli, a, seed).map(|_| 0),
        Command::Interpolate(a) => cmd_interpolate(cli, a, seed).map(|_| 0),
        Command::Complete(a) => cmd_complete(cli, a, seed).map(|_| 0),
        Command::Eval(a) => cmd_eval(a).map(|_| 0),
        Command::Synth(a) => cmd_synth(cli, a, seed).map(|_| 0),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    program: &'static str,
    version: &'static str,
    seed: u64,
    threads: Option<usize>,
    config: Option<&'a Path>,
    #[serde(flatten)]
    command: &'a Command,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn prepare_out(cli: &Cli, out: &Path, seed: u64) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let manifest = Manifest {
        program: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        seed,
        threads: cli.threads,
        config: cli.config.as_deref(),
        command: &cli.command,
    };
    write_json(&out.join("manifest.json"), &manifest)
}

fn extension(path: &Path) -> Result<&str> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("bvh") => Ok("bvh"),
        Some(e) if e.eq_ignore_ascii_case("csv") => Ok("csv"),
        _ => Err(Error::InvalidArgument(format!(
            "unsupported motion file `{}`",
            path.display()
        ))),
    }
}

fn load_clip(path: &Path, skeleton: &Skeleton, m: &MotionInput) -> Result<MotionClip> {
    let clip = read_motion(path, skeleton, m.fps, m.bvh())?;
    if clip.skeleton.parents() != skeleton.parents() {
        return Err(Error::InvalidArgument(format!(
            "`{}` has a {}-joint hierarchy that does not match the model skeleton",
            path.display(),
            clip.skeleton.num_joints()
        )));
    }
    Ok(clip)
}

fn motion_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| extension(p).is_ok())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(files)
}

fn training_clips(a: &TrainArgs, skeleton: &Skeleton, window: usize, seed: u64) -> Result<Vec<MotionClip>> {
    let mut clips = match &a.data {
        Some(dir) => motion_files(dir)?
            .iter()
            .map(|p| load_clip(p, skeleton, &a.input))
            .collect::<Result<Vec<_>>>()?,
        None => {
            let cfg = SynthConfig {
                skeleton: if skeleton.num_joints() == 7 {
                    "toy7".into()
                } else {
                    "smpl24".into()
                },
                length: a.clip_length.unwrap_or(window),
                ..SynthConfig::toy(seed)
            };
            synth_dataset(&cfg, a.clips)?
        }
    };
    if a.augment {
        let extra = clips
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let cfg = AugmentConfig {
                    seed: seed.wrapping_add(i as u64),
                    ..AugmentConfig::default()
                };
                augment(c, &cfg)
            })
            .collect::<Result<Vec<_>>>()?;
        clips.extend(extra.into_iter().filter(|c| c.len() >= window));
    }
    Ok(clips)
}

fn cmd_train(cli: &Cli, a: &TrainArgs, seed: u64) -> Result<()> {
    prepare_out(cli, &a.out, seed)?;
    let mut desc = a.preset.descriptor(&a.skeleton)?;
    let clips = training_clips(a, &desc.skeleton, desc.window, seed)?;
    let default_lr = if a.preset.is_toy() || a.model == ModelKind::Trajectory {
        1e-3
    } else {
        1e-4
    };
    let lr = a.lr.unwrap_or(default_lr);
    match a.model {
        ModelKind::Hmvae => {
            desc.variant = a.variant.parse::<Variant>()?;
            let data = windows_of(&clips, desc.window, a.stride)?;
            let cfg = TrainConfig {
                batch: a.batch,
                iters: a.iters.unwrap_or(2000),
                beta: a.beta,
                lambda: a.lambda,
                switch_iter: a.switch_iter,
                lr,
                final_lr_fraction: a.final_lr_fraction,
                seed,
                optimizer: a.optimizer.parse::<OptimizerKind>()?,
            };
            let mut model = HmVae::<f32>::new(desc, seed)?;
            let before = reconstruction_mpjpe(&model, &data)?;
            let mut csv = String::from("iteration,total,rot6d,rotmat,joints,kl_local,kl_global\n");
            train_with(&mut model, &data, &cfg, |it, c| {
                let _ = writeln!(
                    csv,
                    "{it},{},{},{},{},{},{}",
                    c.total, c.rot6d, c.rotmat, c.joints, c.kl_local, c.kl_global
                );
            })?;
            let after = reconstruction_mpjpe(&model, &data)?;
            std::fs::write(a.out.join("loss.csv"), csv)?;
            save_checkpoint(&model, a.out.join("model.ckpt"))?;
            let summary = serde_json::json!({
                "windows": data.len(),
                "parameters": model.num_parameters(),
                "reconstruction_mpjpe_before": before,
                "reconstruction_mpjpe_after": after,
            });
            write_json(&a.out.join("metrics.json"), &summary)?;
            println!(
                "trained {} on {} windows: reconstruction MPJPE {before:.2} -> {after:.2} mm",
                model.variant(),
                data.len()
            );
        }
        ModelKind::Trajectory => {
            let mut samples = Vec::new();
            for c in &clips {
                samples.extend(TrajectorySample::windows(c, desc.window, a.stride)?);
            }
            let cfg = TrajectoryTrainConfig {
                batch: a.batch,
                iters: a.iters.unwrap_or(500),
                lr,
                seed,
            };
            let mut model = TrajectoryModel::<f32>::new(TrajectoryConfig::new(desc.skeleton.clone()), seed)?;
            let before = model.velocity_mse(&samples)?;
            let log = train_trajectory(&mut model, &samples, &cfg)?;
            let after = model.velocity_mse(&samples)?;
            let mut csv = String::from("iteration,loss\n");
            for (i, l) in log.iter().enumerate() {
                let _ = writeln!(csv, "{i},{l}");
            }
            std::fs::write(a.out.join("loss.csv"), csv)?;
            save_trajectory(&model, a.out.join("trajectory.json"))?;
            let summary = serde_json::json!({
                "windows": samples.len(),
                "velocity_mse_before": before,
                "velocity_mse_after": after,
            });
            write_json(&a.out.join("metrics.json"), &summary)?;
            println!(
                "trained trajectory model on {} windows: velocity MSE {before:.3e} -> {after:.3e}",
                samples.len()
            );
        }
    }
    Ok(())
}

fn cmd_refine(cli: &Cli, a: &RefineArgs, seed: u64) -> Result<()> {
    let model = load_checkpoint(&a.model)?;
    let sk = model.descriptor().skeleton.clone();
    let input = load_clip(&a.input, &sk, &a.motion)?;
    let ext = extension(&a.input)?;
    prepare_out(cli, &a.out, seed)?;
    let refined = refine_sequence(&model, &input.to_window()?)?;
    let clip = input.with_rotations(&refined)?;
    write_motion(a.out.join(format!("refined.{ext}")), &clip, a.motion.bvh())?;
    if let Some(gt) = &a.gt {
        let gt = load_clip(gt, &sk, &a.motion)?;
        let report = serde_json::json!({
            "input": MetricReport::compute(&input, &gt)?,
            "refined": MetricReport::compute(&clip, &gt)?,
        });
        write_json(&a.out.join("metrics.json"), &report)?;
    }
    println!("refined {} frames", clip.len());
    Ok(())
}

/// The model-sized window of `clip` starting at `start`.
fn task_window(model: &HmVae<f32>, clip: &MotionClip, start: usize) -> Result<MotionClip> {
    clip.slice(start, model.descriptor().window)
}

fn write_trace(out: &Path, res: &OptimResult) -> Result<()> {
    std::fs::write(out.join("trace.jsonl"), res.trace_jsonl()?)?;
    Ok(())
}

fn cmd_interpolate(cli: &Cli, a: &InterpolateArgs, seed: u64) -> Result<()> {
    let model = load_checkpoint(&a.model)?;
    let d = model.descriptor().clone();
    if a.gap == 0 || a.gap + a.trail >= d.window {
        return Err(Error::InvalidArgument(format!(
            "gap {} with {} trailing keyframes leaves no leading keyframe in a {}-frame window",
            a.gap, a.trail, d.window
        )));
    }
    let ext = extension(&a.input)?;
    let gt = task_window(&model, &load_clip(&a.input, &d.skeleton, &a.motion)?, a.start)?;
    prepare_out(cli, &a.out, seed)?;
    let lead = d.window - a.gap - a.trail;
    let mask = make_keyframe_mask(d.window, d.num_joints(), lead, a.trail)?;
    let target = gt.to_window()?;
    let cfg = a.optim.config(OptimConfig::interpolation(), seed)?;
    let res = optimize_latent(&model, &target, &mask, &cfg)?;
    let baseline = match a.baseline {
        Baseline::Slerp => slerp_inbetween(&target, &mask)?,
        Baseline::Lerp => lerp_inbetween(&target, &mask)?,
    };
    let roots = lerp_root(&gt.root_translations(), &mask.frames)?;
    let with_roots = |w: &MotionWindow, roots: &[[f64; 3]]| -> Result<MotionClip> {
        let mut c = gt.with_rotations(w)?;
        for (f, r) in c.frames.iter_mut().zip(roots) {
            f.root = *r;
        }
        Ok(c)
    };
    let opt_roots = match &a.trajectory {
        Some(path) => {
            let traj = load_trajectory(path)?;
            let decoded = with_roots(&res.window, &roots)?;
            let g = traj.predict_clip(&decoded)?;
            g.positions.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
        }
        None => roots.clone(),
    };
    let optimized = with_roots(&res.window, &opt_roots)?;
    let base_clip = with_roots(&baseline, &roots)?;
    write_motion(a.out.join(format!("optimized.{ext}")), &optimized, a.motion.bvh())?;
    write_motion(a.out.join(format!("baseline.{ext}")), &base_clip, a.motion.bvh())?;
    write_motion(a.out.join(format!("target.{ext}")), &gt, a.motion.bvh())?;
    write_trace(&a.out, &res)?;
    let gap_opt = gap_pa_mpjpe(&res.window, &target, &d.skeleton, &mask)?;
    let gap_base = gap_pa_mpjpe(&baseline, &target, &d.skeleton, &mask)?;
    let report = serde_json::json!({
        "gap": a.gap,
        "lead": lead,
        "trail": a.trail,
        "baseline": a.baseline,
        "optimized": MetricReport::compute(&optimized, &gt)?,
        "baseline_report": MetricReport::compute(&base_clip, &gt)?,
        "gap_pa_mpjpe": { "optimized": gap_opt, "baseline": gap_base },
    });
    write_json(&a.out.join("metrics.json"), &report)?;
    println!(
        "gap PA-MPJPE: optimized {gap_opt:.2} mm, {:?} {gap_base:.2} mm",
        a.baseline
    );
    Ok(())
}

fn cmd_complete(cli: &Cli, a: &CompleteArgs, seed: u64) -> Result<()> {
    let model = load_checkpoint(&a.model)?;
    let d = model.descriptor().clone();
    let ext = extension(&a.input)?;
    let gt = task_window(&model, &load_clip(&a.input, &d.skeleton, &a.motion)?, a.start)?;
    let mask = make_body_part_mask(&d.skeleton, d.window, &a.part)?;
    prepare_out(cli, &a.out, seed)?;
    let cfg = a.optim.config(OptimConfig::completion(), seed)?;
    let res = optimize_latent(&model, &gt.to_window()?, &mask, &cfg)?;
    let completed = gt.with_rotations(&res.window)?;
    write_motion(a.out.join(format!("completed.{ext}")), &completed, a.motion.bvh())?;
    write_motion(a.out.join(format!("target.{ext}")), &gt, a.motion.bvh())?;
    write_trace(&a.out, &res)?;
    let report = MetricReport::compute(&completed, &gt)?;
    write_json(&a.out.join("metrics.json"), &report)?;
    println!("completed from `{}`: MPJPE {:.2} mm", a.part, report.mpjpe);
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let sk = Skeleton::preset(&a.skeleton)?;
    let gt = read_motion(&a.gt, &sk, a.motion.fps, a.motion.bvh())?;
    let pred = read_motion(&a.pred, &gt.skeleton, a.motion.fps, a.motion.bvh())?;
    let report = MetricReport::compute(&pred, &gt)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(())
}

fn cmd_synth(cli: &Cli, a: &SynthArgs, seed: u64) -> Result<()> {
    prepare_out(cli, &a.out, seed)?;
    let cfg = SynthConfig {
        seed,
        skeleton: a.skeleton.clone(),
        length: a.length,
        fps: a.fps,
        ..SynthConfig::toy(seed)
    };
    let clips = synth_dataset(&cfg, a.n)?;
    let ext = match a.format {
        Format::Bvh => "bvh",
        Format::Csv => "csv",
    };
    for (i, clip) in clips.iter().enumerate() {
        write_motion(a.out.join(format!("clip_{i:03}.{ext}")), clip, BvhOptions::default())?;
        if let Some(sigma) = a.noise {
            let noisy = corrupt_rot6d(&clip.to_window()?, sigma, seed.wrapping_add(i as u64))?;
            write_motion(
                a.out.join(format!("clip_{i:03}_noisy.csv")),
                &clip.with_rotations(&noisy)?,
                BvhOptions::default(),
            )?;
        }
    }
    println!(
        "wrote {} clips of {} frames to {}",
        clips.len(),
        a.length,
        a.out.display()
    );
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<i32> {
    let results = run_suite(a.seeds, |r| {
        println!(
            "{} {:<30} {} max rel err {:.3e} (tol {:.0e})",
            if r.passed() { "PASS" } else { "FAIL" },
            r.name,
            r.precision,
            r.max_error,
            r.tolerance
        );
    })?;
    if let Some(out) = &a.out {
        write_json(out, &results)?;
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    println!("{} checks, {failed} failed", results.len());
    Ok(if failed == 0 { 0 } else { 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_lines() {
        let m = parse_config("# comment\niters = 10\nswitch_iter=5 # trailing\n\n").unwrap();
        assert_eq!(m["iters"], "10");
        assert_eq!(m["switch-iter"], "5");
        assert!(parse_config("novalue\n").is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(dispatch(["motion-prior", "frobnicate"]), 2);
        assert_eq!(dispatch(["motion-prior"]), 2);
        assert_eq!(dispatch(["motion-prior", "synth"]), 2);
    }

    #[test]
    fn runtime_errors_exit_1() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("missing.bvh");
        let m = missing.to_str().unwrap();
        assert_eq!(dispatch(["motion-prior", "eval", m, m]), 1);
    }

    #[test]
    fn config_file_supplies_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        let out = dir.path().join("out");
        std::fs::write(
            &cfg,
            format!("n = 2\nlength = 5\nformat = csv\nout = {}\n", out.display()),
        )
        .unwrap();
        let code = dispatch(["motion-prior", "synth", "--config", cfg.to_str().unwrap(), "--n", "3"]);
        assert_eq!(code, 0);
        assert!(out.join("clip_002.csv").exists());
        assert!(!out.join("clip_003.csv").exists());
        let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
        assert!(manifest.contains("\"command\": \"synth\""));
        std::fs::write(&cfg, "bogus = 1\n").unwrap();
        assert_eq!(
            dispatch(["motion-prior", "synth", "--config", cfg.to_str().unwrap()]),
            2
        );
    }
}
