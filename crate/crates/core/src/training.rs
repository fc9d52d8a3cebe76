//! SGD training for ILN, PRN and the ellipse head.
//!
//! Every iteration draws its batch from an RNG derived from `(seed, iter)`
//! alone, so a run resumed from a checkpoint at iteration `k` replays
//! exactly the batches an uninterrupted run would have seen.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{normalize_targets, Layout, NormStats, TargetVector};
use crate::geometry::Affine2;
use crate::nets::{weighted_l1_loss, LossWeights, ModelConfig, NetError, NetworkParams};
use crate::tensor::{Tape, Tensor, TensorError};
use crate::traindata::{
    ellipse_labels, prn_crop_sample, sample_plan, AugmentParams, DataError, JitterStd, Sample,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("parameter {0} has no gradient")]
    MissingGrad(String),
    #[error("loss became non-finite at iteration {iter}")]
    Diverged { iter: usize },
    #[error("training set is empty")]
    EmptyCorpus,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Optimizer schedule and data settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_iters: usize,
    pub lr: f64,
    pub lr_after: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub loss_weights: Vec<f32>,
    pub seed: u64,
    /// Write a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: usize,
    pub augment: AugmentParams,
}

impl TrainConfig {
    /// Desk-scale preset: batch 32, 5,000 iterations.
    pub fn desk(layout: Layout) -> Self {
        let mut augment = AugmentParams::default();
        if layout == Layout::Ellipses {
            augment.stretch = Some((0.7, 1.4));
        }
        Self {
            batch_size: 32,
            total_iters: 5_000,
            lr: 1e-3,
            lr_after: 1e-4,
            weight_decay: 1e-5,
            momentum: 0.9,
            loss_weights: LossWeights::for_layout(layout).0,
            seed: 0,
            checkpoint_every: 0,
            augment,
        }
    }

    /// Batch 128, 100,000 iterations.
    pub fn full_scale(layout: Layout) -> Self {
        Self {
            batch_size: 128,
            total_iters: 100_000,
            ..Self::desk(layout)
        }
    }

    /// First iteration that uses `lr_after`.
    pub fn lr_switch_iter(&self) -> usize {
        self.total_iters * 9 / 10
    }

    pub fn lr_at(&self, iter: usize) -> f64 {
        if iter < self.lr_switch_iter() {
            self.lr
        } else {
            self.lr_after
        }
    }

    pub fn validate(&self, layout: Layout) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.lr_after > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("weight_decay must be >= 0 and momentum in [0, 1)");
        }
        if self.loss_weights.len() != layout.dim() {
            return bad("loss weight count does not match the model output");
        }
        if self.loss_weights.iter().any(|&w| !(w > 0.0)) {
            return bad("loss weights must be positive");
        }
        Ok(())
    }
}

/// `w <- w - lr (g + wd w)` for every parameter, then clears the gradients.
/// With `velocity`, applies heavy-ball momentum `v <- mu v + g + wd w`,
/// `w <- w - lr v` instead.
pub fn sgd_step(
    params: &mut NetworkParams,
    lr: f64,
    weight_decay: f64,
    velocity: Option<(&mut [Vec<f32>], f64)>,
) -> Result<()> {
    let names = params.names().to_vec();
    if let Some(i) = params.tensors().iter().position(|t| t.grad().is_none()) {
        return Err(TrainError::MissingGrad(names[i].clone()));
    }
    let (lr, wd) = (lr as f32, weight_decay as f32);
    match velocity {
        None => {
            for t in params.tensors_mut() {
                let (w, g) = t.data_and_grad_mut();
                let g = g.expect("checked above");
                for (w, &g) in w.iter_mut().zip(g) {
                    *w -= lr * (g + wd * *w);
                }
            }
        }
        Some((vel, mu)) => {
            let mu = mu as f32;
            for (t, v) in params.tensors_mut().iter_mut().zip(vel.iter_mut()) {
                let (w, g) = t.data_and_grad_mut();
                let g = g.expect("checked above");
                for ((w, &g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
                    *v = mu * *v + g + wd * *w;
                    *w -= lr * *v;
                }
            }
        }
    }
    params.clear_grads();
    Ok(())
}

/// What a batch is built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Task {
    /// Full image -> 22 landmarks.
    Iln,
    /// Full image -> 25-element ellipse layout.
    Ellipse,
    /// Jittered iris crop -> 3 pupil elements.
    Prn(JitterStd),
}

impl Task {
    pub fn layout(self) -> Layout {
        match self {
            Task::Iln => Layout::Landmarks,
            Task::Ellipse => Layout::Ellipses,
            Task::Prn(_) => Layout::PupilRoi,
        }
    }
}

fn iter_rng(seed: u64, iter: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iter as u64);
    rng
}

/// Builds the `[N, 1, H, W]` input and flat normalized targets for one
/// iteration. Pure in `(config.seed, iter)`.
pub fn make_batch(
    task: Task,
    model: &ModelConfig,
    config: &TrainConfig,
    samples: &[Sample],
    iter: usize,
) -> Result<(Tensor, Vec<f32>)> {
    if samples.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let (w, h) = model.input_dims();
    let d = task.layout().dim();
    let n = config.batch_size;
    let mut rng = iter_rng(config.seed, iter);
    let mut input = Vec::with_capacity(n * w * h);
    let mut targets = Vec::with_capacity(n * d);
    let to_input = Affine2::scale(w as f64 / 640.0, h as f64 / 480.0);
    for _ in 0..n {
        let s = &samples[rng.random_range(0..samples.len())];
        let image = s.image.to_f32();
        let (pixels, target): (_, Vec<f64>) = match task {
            Task::Iln => {
                let plan = sample_plan(&config.augment, &s.labels.iris, &mut rng)?;
                let moved = s.labels.transformed(&plan.geometric);
                let k = TargetVector::from_landmarks(&moved);
                let t = normalize_targets(&k, &NormStats::iln()).map_err(NetError::from)?;
                (plan.apply(&image, &to_input, w, h), t)
            }
            Task::Ellipse => {
                let plan = sample_plan(&config.augment, &s.labels.iris, &mut rng)?;
                let e = ellipse_labels(&s.labels, &plan.geometric)?;
                let t = NormStats::ellipse()
                    .normalize(&e.encode())
                    .map_err(NetError::from)?;
                (plan.apply(&image, &to_input, w, h), t)
            }
            Task::Prn(std) => {
                let (crop, t, _) =
                    prn_crop_sample(&image, &s.labels, &std, &config.augment, &mut rng)?;
                (crop, t.to_vec())
            }
        };
        input.extend(pixels.data().iter().map(|v| v / 255.0));
        targets.extend(target.iter().map(|&v| v as f32));
    }
    Ok((Tensor::new([n, 1, h, w], input)?, targets))
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub lr: f64,
    pub loss: f64,
    pub wall_ms: f64,
}

pub const LOG_HEADER: &str = "iter,lr,loss,wall_ms";

impl LogRow {
    pub fn csv(&self) -> String {
        format!("{},{},{},{:.3}", self.iter, self.lr, self.loss, self.wall_ms)
    }
}

/// Forward + backward on one batch; gradients land in `params`.
pub fn compute_gradients(
    params: &mut NetworkParams,
    input: Tensor,
    targets: &[f32],
    weights: &LossWeights,
) -> Result<f64> {
    let (loss, grads) = {
        let mut tape = Tape::new();
        let x = tape.constant(input);
        let (out, leaves) = params.forward_tape(&mut tape, x)?;
        let loss = weighted_l1_loss(&mut tape, out, targets, weights)?;
        let value = f64::from(tape.value(loss)?.data()[0]);
        tape.backward(loss)?;
        let grads: Vec<Vec<f32>> = leaves
            .iter()
            .map(|&l| tape.grad(l).map(<[f32]>::to_vec).unwrap_or_default())
            .collect();
        (value, grads)
    };
    for (t, g) in params.tensors_mut().iter_mut().zip(&grads) {
        if g.len() == t.numel() {
            t.accumulate_grad(g)?;
        }
    }
    Ok(loss)
}

/// Training progress that survives a checkpoint.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: NetworkParams,
    /// Next iteration to run.
    pub iter: usize,
    pub velocity: Option<Vec<Vec<f32>>>,
}

impl TrainState {
    pub fn fresh(model: ModelConfig, config: &TrainConfig) -> Result<Self> {
        let params = NetworkParams::init(model, config.seed)?;
        let velocity = (config.momentum > 0.0)
            .then(|| params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect());
        Ok(Self {
            params,
            iter: 0,
            velocity,
        })
    }
}

/// Where checkpoints and the log go.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    pub dir: Option<PathBuf>,
    /// Echo every n-th log row to stderr (0 = silent).
    pub print_every: usize,
}

pub fn checkpoint_path(dir: &Path, iter: usize) -> PathBuf {
    dir.join(format!("ckpt_{iter:06}.ilnw"))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Checkpoint: weights file, plus momentum buffers as a second weights
/// file when momentum is on.
pub fn save_checkpoint(dir: &Path, state: &TrainState) -> Result<()> {
    write_file(&checkpoint_path(dir, state.iter), &state.params.to_bytes())?;
    if let Some(v) = &state.velocity {
        let mut vp = state.params.clone();
        for (t, v) in vp.tensors_mut().iter_mut().zip(v) {
            t.data_mut().copy_from_slice(v);
        }
        let path = dir.join(format!("ckpt_{:06}.velocity.ilnw", state.iter));
        write_file(&path, &vp.to_bytes())?;
    }
    Ok(())
}

pub fn load_checkpoint(dir: &Path, iter: usize, momentum: bool) -> Result<TrainState> {
    let read = |p: PathBuf| -> Result<NetworkParams> {
        let bytes = fs::read(&p).map_err(|source| TrainError::Io { path: p, source })?;
        Ok(NetworkParams::from_bytes(&bytes)?)
    };
    let params = read(checkpoint_path(dir, iter))?;
    let velocity = if momentum {
        let v = read(dir.join(format!("ckpt_{iter:06}.velocity.ilnw")))?;
        Some(v.tensors().iter().map(|t| t.data().to_vec()).collect())
    } else {
        None
    };
    Ok(TrainState {
        params,
        iter,
        velocity,
    })
}

/// Runs iterations `state.iter .. config.total_iters`.
pub fn train_from(
    task: Task,
    mut state: TrainState,
    config: &TrainConfig,
    samples: &[Sample],
    outputs: &TrainOutputs,
) -> Result<NetworkParams> {
    let layout = task.layout();
    config.validate(layout)?;
    let model = state.params.config();
    if model.layout()? != layout {
        return Err(TrainError::Config(format!(
            "model head is {:?}, task needs {layout:?}",
            model.layout()?
        )));
    }
    let weights = LossWeights(config.loss_weights.clone());
    let mut log = match &outputs.dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|source| TrainError::Io {
                path: dir.clone(),
                source,
            })?;
            let path = dir.join("train_log.csv");
            let mut f = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|source| TrainError::Io {
                    path: path.clone(),
                    source,
                })?;
            if state.iter == 0 {
                writeln!(f, "{LOG_HEADER}").map_err(|source| TrainError::Io {
                    path: path.clone(),
                    source,
                })?;
            }
            Some((f, path))
        }
        None => None,
    };
    let start = Instant::now();
    while state.iter < config.total_iters {
        let iter = state.iter;
        let (input, targets) = make_batch(task, &model, config, samples, iter)?;
        let loss = compute_gradients(&mut state.params, input, &targets, &weights)?;
        if !loss.is_finite() {
            return Err(TrainError::Diverged { iter });
        }
        let lr = config.lr_at(iter);
        let vel = state
            .velocity
            .as_mut()
            .map(|v| (v.as_mut_slice(), config.momentum));
        sgd_step(&mut state.params, lr, config.weight_decay, vel)?;
        state.iter += 1;
        let row = LogRow {
            iter,
            lr,
            loss,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        if let Some((f, path)) = &mut log {
            writeln!(f, "{}", row.csv()).map_err(|source| TrainError::Io {
                path: path.clone(),
                source,
            })?;
        }
        if outputs.print_every > 0 && (iter.is_multiple_of(outputs.print_every) || state.iter == config.total_iters) {
            eprintln!("iter {iter:>6}  lr {lr:.0e}  loss {loss:.4}  {:.1}s", row.wall_ms / 1e3);
        }
        if let Some(dir) = &outputs.dir {
            if config.checkpoint_every > 0 && state.iter.is_multiple_of(config.checkpoint_every) {
                save_checkpoint(dir, &state)?;
            }
        }
    }
    if let Some(dir) = &outputs.dir {
        write_file(&dir.join("final.ilnw"), &state.params.to_bytes())?;
    }
    Ok(state.params)
}

/// Trains a fresh network for `task`.
pub fn train(
    task: Task,
    model: ModelConfig,
    config: &TrainConfig,
    samples: &[Sample],
    outputs: &TrainOutputs,
) -> Result<NetworkParams> {
    let state = TrainState::fresh(model, config)?;
    train_from(task, state, config, samples, outputs)
}

pub fn train_iln(
    model: ModelConfig,
    config: &TrainConfig,
    samples: &[Sample],
    outputs: &TrainOutputs,
) -> Result<NetworkParams> {
    train(Task::Iln, model, config, samples, outputs)
}

pub fn train_prn(
    model: ModelConfig,
    config: &TrainConfig,
    samples: &[Sample],
    iln_error_std: JitterStd,
    outputs: &TrainOutputs,
) -> Result<NetworkParams> {
    iln_error_std.validate()?;
    train(Task::Prn(iln_error_std), model, config, samples, outputs)
}

/// Population standard deviation of ILN iris errors (prediction minus
/// truth) over `samples`; the PRN crop jitter.
pub fn iln_error_std(params: &NetworkParams, samples: &[Sample]) -> Result<JitterStd> {
    if samples.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mut errs = Vec::with_capacity(samples.len());
    for s in samples {
        let k = crate::nets::iln_forward(&s.image.to_f32(), params)?.to_landmarks();
        errs.push([
            k.iris.x - s.labels.iris.x,
            k.iris.y - s.labels.iris.y,
            k.iris.r - s.labels.iris.r,
        ]);
    }
    let n = errs.len() as f64;
    let std = |i: usize| {
        let mean = errs.iter().map(|e| e[i]).sum::<f64>() / n;
        (errs.iter().map(|e| (e[i] - mean).powi(2)).sum::<f64>() / n).sqrt()
    };
    Ok(JitterStd {
        x: std(0),
        y: std(1),
        r: std(2),
    })
}
