//! Training: Adam with decoupled weight decay and optional global gradient
//! clipping, a seeded single-threaded loop over synthetic clips, per-epoch
//! validation, and best-checkpoint selection by validation HR error.

use crate::error::{Error, Result};
use crate::eval::{estimate_hr_fft, HR_BAND_HZ};
use crate::losses::{combined_loss, LossConfig, LossTerms};
use crate::model::{model_backward, model_forward, ModelConfig, ModelParams};
use crate::synth::SynthClip;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub grad_clip: Option<f64>,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            batch_size: 8,
            epochs: 30,
            seed: 0,
            grad_clip: None,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if !(0.0 < self.beta1 && self.beta1 < 1.0 && 0.0 < self.beta2 && self.beta2 < 1.0) {
            return Err(Error::Config(format!(
                "betas ({}, {}) must lie in (0, 1)",
                self.beta1, self.beta2
            )));
        }
        if self.adam_eps <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config(
                "adam_eps must be positive and weight_decay nonnegative".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if c <= 0.0 {
                return Err(Error::Config("grad_clip must be positive".into()));
            }
        }
        Ok(())
    }
}

/// First and second moment estimates, structurally aligned with the params.
pub struct AdamState {
    pub step: usize,
    pub m: ModelParams,
    pub v: ModelParams,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// Sum of squares over the independent gradient entries. The lag-0 slot of
/// each `toeplitz.r` mirrors `toeplitz.c[0]` and is excluded so the shared
/// diagonal is counted once.
fn grad_sq_norm(grads: &ModelParams) -> f64 {
    let mut acc = 0.0;
    grads.for_each(&mut |path, _, values| {
        let skip_first = path.ends_with("toeplitz.r");
        for (i, g) in values.iter().enumerate() {
            if skip_first && i == 0 {
                continue;
            }
            acc += g * g;
        }
    });
    acc
}

/// One Adam update with bias correction, then decoupled weight decay, then
/// kernel constraint re-enforcement. Gradients must come from the same
/// config as the params.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    cfg.validate()?;
    if grads.config != params.config || state.m.config != params.config {
        return Err(Error::Config(
            "gradient or optimizer state config does not match the parameters".into(),
        ));
    }
    let clip_scale = match cfg.grad_clip {
        Some(max_norm) => {
            let norm = grad_sq_norm(grads).sqrt();
            if norm > max_norm {
                max_norm / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    // The visitors walk every structure in one fixed order, so a flat buffer
    // carries values between the three passes.
    let mut grad_flat: Vec<f64> = Vec::new();
    grads.for_each(&mut |_, _, values| {
        grad_flat.extend(values.iter().map(|g| clip_scale * g));
    });
    let mut update = grad_flat.clone();
    let mut offset = 0usize;
    state.m.for_each_mut(&mut |_, m| {
        let n = m.len();
        for (mi, u) in m.iter_mut().zip(&mut update[offset..offset + n]) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * *u;
            *u = *mi / bc1;
        }
        offset += n;
    });
    offset = 0;
    state.v.for_each_mut(&mut |_, v| {
        let n = v.len();
        for (vi, (u, g)) in v.iter_mut().zip(
            update[offset..offset + n]
                .iter_mut()
                .zip(&grad_flat[offset..]),
        ) {
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
            let v_hat = *vi / bc2;
            *u = cfg.lr * (*u / (v_hat.sqrt() + cfg.adam_eps));
        }
        offset += n;
    });
    offset = 0;
    params.for_each_mut(&mut |_, values| {
        let n = values.len();
        for (p, u) in values.iter_mut().zip(&update[offset..offset + n]) {
            *p -= u + cfg.lr * cfg.weight_decay * *p;
        }
        offset += n;
    });
    params.enforce_kernel_constraints();
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_mse: f64,
    pub loss_rho: f64,
    pub loss_spec: f64,
    pub val_loss: f64,
    pub val_mae_bpm: f64,
}

pub const EPOCH_CSV_HEADER: &str =
    "epoch,loss_total,loss_mse,loss_rho,loss_spec,val_loss,val_mae_bpm";

pub fn epoch_csv_row(r: &EpochRecord) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        r.epoch, r.loss_total, r.loss_mse, r.loss_rho, r.loss_spec, r.val_loss, r.val_mae_bpm
    )
}

pub fn write_epoch_csv(records: &[EpochRecord], path: &Path) -> Result<()> {
    let mut out = String::from(EPOCH_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&epoch_csv_row(r));
        out.push('\n');
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation HR MAE (earliest
    /// epoch on ties); the initial parameters when epochs = 0.
    pub best: ModelParams,
    pub best_epoch: usize,
    /// Parameters after the final epoch.
    pub final_params: ModelParams,
    pub log: Vec<EpochRecord>,
}

/// Stacks clips into a (B, T, 3, H, W) batch and a (B, T) target.
pub fn stack_batch(clips: &[&SynthClip]) -> Result<(Tensor, Tensor)> {
    let first = clips[0].frames.shape().to_vec();
    let b = clips.len();
    let mut shape = vec![b];
    shape.extend_from_slice(&first);
    let mut frames = Tensor::zeros(&shape);
    let per_clip = clips[0].frames.numel();
    let t = clips[0].bvp.len();
    let mut target = Tensor::zeros(&[b, t]);
    for (i, clip) in clips.iter().enumerate() {
        if clip.frames.shape() != first.as_slice() || clip.bvp.len() != t {
            return Err(Error::ShapeMismatch(
                "clips in one dataset must share a shape".into(),
            ));
        }
        frames.data_mut()[i * per_clip..(i + 1) * per_clip].copy_from_slice(clip.frames.data());
        target.data_mut()[i * t..(i + 1) * t].copy_from_slice(&clip.bvp);
    }
    Ok((frames, target))
}

/// Mean combined loss over a clip set in eval mode, plus HR MAE of the
/// predictions against the clips' ground-truth rates.
pub fn evaluate(
    params: &ModelParams,
    clips: &[SynthClip],
    loss_cfg: &LossConfig,
    fs: f64,
    batch_size: usize,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut loss_acc = 0.0;
    let mut mae_acc = 0.0;
    for chunk in clips.chunks(batch_size.max(1)) {
        let refs: Vec<&SynthClip> = chunk.iter().collect();
        let (frames, target) = stack_batch(&refs)?;
        let (pred, _) = model_forward(&frames, params, false, &mut rng)?;
        let (terms, _) = combined_loss(&pred, &target, loss_cfg, fs)?;
        loss_acc += terms.total * chunk.len() as f64;
        let t = chunk[0].bvp.len();
        for (i, clip) in chunk.iter().enumerate() {
            let wave = &pred.data()[i * t..(i + 1) * t];
            let est = estimate_hr_fft(wave, fs, HR_BAND_HZ)?;
            mae_acc += (est - clip.hr_bpm).abs();
        }
    }
    let n = clips.len() as f64;
    Ok((loss_acc / n, mae_acc / n))
}

/// Full training loop. Deterministic given the configs and clip sets: model
/// init, shuffling, and dropout all derive from `train_cfg.seed`.
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_clips: &[SynthClip],
    val_clips: &[SynthClip],
    fs: f64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if train_clips.is_empty() || val_clips.is_empty() {
        return Err(Error::Config(
            "training requires non-empty train and val sets".into(),
        ));
    }
    let mut params = ModelParams::init(model_cfg, train_cfg.seed)?;
    let mut state = AdamState::new(&params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(train_cfg.seed.wrapping_add(1));

    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut log = Vec::with_capacity(train_cfg.epochs);
    let n_train = train_clips.len() as f64;

    for epoch in 0..train_cfg.epochs {
        let mut order: Vec<usize> = (0..train_clips.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut sums = LossTerms {
            total: 0.0,
            mse: 0.0,
            rho: 0.0,
            spec: 0.0,
        };
        for batch in order.chunks(train_cfg.batch_size) {
            let refs: Vec<&SynthClip> = batch.iter().map(|&i| &train_clips[i]).collect();
            let (frames, target) = stack_batch(&refs)?;
            let (pred, cache) = model_forward(&frames, &params, true, &mut dropout_rng)?;
            let (terms, dpred) = combined_loss(&pred, &target, &train_cfg.loss, fs)?;
            if !terms.total.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let grads = model_backward(&dpred, &cache, &params)?;
            adam_step(&mut params, &grads, &mut state, train_cfg)?;
            let w = batch.len() as f64;
            sums.total += terms.total * w;
            sums.mse += terms.mse * w;
            sums.rho += terms.rho * w;
            sums.spec += terms.spec * w;
        }

        let (val_loss, val_mae) = evaluate(
            &params,
            val_clips,
            &train_cfg.loss,
            fs,
            train_cfg.batch_size,
        )?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let record = EpochRecord {
            epoch,
            loss_total: sums.total / n_train,
            loss_mse: sums.mse / n_train,
            loss_rho: sums.rho / n_train,
            loss_spec: sums.spec / n_train,
            val_loss,
            val_mae_bpm: val_mae,
        };
        on_epoch(&record);
        log.push(record);
        if best.as_ref().map_or(true, |(mae, _, _)| val_mae < *mae) {
            best = Some((val_mae, epoch, params.clone()));
        }
    }

    let (best_epoch, best_params) = match best {
        Some((_, e, p)) => (e, p),
        None => (0, params.clone()),
    };
    Ok(TrainOutcome {
        best: best_params,
        best_epoch,
        final_params: params,
        log,
    })
}
