//! Training objective: time-domain MSE, a Pearson-correlation agreement
//! term, and an STFT magnitude term, each with analytic gradients with
//! respect to the prediction. The combined loss is a weighted sum; terms
//! with zero weight are skipped entirely so they can neither cost time nor
//! raise errors.

use crate::error::{Error, Result};
use crate::fft::{fft_forward, hann_window, ComplexArray};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_mse: f64,
    pub lambda_rho: f64,
    pub lambda_spec: f64,
    /// Stabilizer inside the Pearson denominator's square root.
    pub eps: f64,
    /// STFT analysis window (Hann), power of two.
    pub window_len: usize,
    pub hop: usize,
    /// Frequency band whose bins enter the spectral term, in Hz.
    pub band_hz: [f64; 2],
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_mse: 1.0,
            lambda_rho: 1.0,
            lambda_spec: 0.5,
            eps: 1e-8,
            window_len: 128,
            hop: 32,
            band_hz: [0.75, 2.5],
        }
    }
}

impl LossConfig {
    pub fn validate(&self, fs: f64) -> Result<()> {
        if self.lambda_mse < 0.0 || self.lambda_rho < 0.0 || self.lambda_spec < 0.0 {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        if self.window_len < 2 || !self.window_len.is_power_of_two() {
            return Err(Error::Config(format!(
                "window_len {} must be a power of two of at least 2",
                self.window_len
            )));
        }
        if self.hop == 0 {
            return Err(Error::Config("hop must be positive".into()));
        }
        let [lo, hi] = self.band_hz;
        if !(0.0 < lo && lo < hi && hi < fs / 2.0) {
            return Err(Error::Config(format!(
                "band [{lo}, {hi}] Hz must satisfy 0 < lo < hi < fs/2 = {}",
                fs / 2.0
            )));
        }
        Ok(())
    }
}

/// Individual term values alongside their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossTerms {
    pub total: f64,
    pub mse: f64,
    pub rho: f64,
    pub spec: f64,
}

fn check_pair(pred: &Tensor, target: &Tensor) -> Result<(usize, usize)> {
    let (b, t) = pred.dims2()?;
    if target.shape() != pred.shape() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs reference {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    Ok((b, t))
}

/// (1/BT) sum (pred - target)^2.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    let (b, t) = check_pair(pred, target)?;
    let n = (b * t) as f64;
    let mut grad = Tensor::zeros(&[b, t]);
    let gd = grad.data_mut();
    let mut loss = 0.0;
    for (i, (p, r)) in pred.data().iter().zip(target.data()).enumerate() {
        let diff = p - r;
        loss += diff * diff;
        gd[i] = 2.0 * diff / n;
    }
    Ok((loss / n, grad))
}

/// Mean over clips of (1 - rho), rho the Pearson correlation of the centered
/// signals with `eps` inside the denominator root. Centering makes the
/// per-sample gradient already mean-free, so no extra projection is needed.
pub fn pearson_loss(pred: &Tensor, target: &Tensor, eps: f64) -> Result<(f64, Tensor)> {
    let (b, t) = check_pair(pred, target)?;
    if t < 2 {
        return Err(Error::InvalidLength(format!(
            "correlation needs at least 2 samples, got {t}"
        )));
    }
    let mut grad = Tensor::zeros(&[b, t]);
    let gd = grad.data_mut();
    let mut loss = 0.0;
    for clip in 0..b {
        let p = &pred.data()[clip * t..(clip + 1) * t];
        let r = &target.data()[clip * t..(clip + 1) * t];
        let pm = p.iter().sum::<f64>() / t as f64;
        let rm = r.iter().sum::<f64>() / t as f64;
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for i in 0..t {
            let x = p[i] - pm;
            let y = r[i] - rm;
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
        }
        let denom = (sxx * syy + eps).sqrt();
        let rho = sxy / denom;
        loss += 1.0 - rho;
        let scale = 1.0 / b as f64;
        for i in 0..t {
            let x = p[i] - pm;
            let y = r[i] - rm;
            gd[clip * t + i] = -scale * (y / denom - sxy * syy * x / denom.powi(3));
        }
    }
    Ok((loss / b as f64, grad))
}

/// Mean absolute difference of the Hann-windowed STFT magnitudes over every
/// (clip, in-band bin, frame) triple. Subgradient 0 through zero magnitudes
/// and at exactly equal magnitudes.
pub fn spectral_loss(
    pred: &Tensor,
    target: &Tensor,
    cfg: &LossConfig,
    fs: f64,
) -> Result<(f64, Tensor)> {
    cfg.validate(fs)?;
    let (b, t) = check_pair(pred, target)?;
    let n = cfg.window_len;
    if t < n {
        return Err(Error::Config(format!(
            "clip length {t} is shorter than the analysis window {n}"
        )));
    }
    let n_frames = (t - n) / cfg.hop + 1;
    let window = hann_window(n);
    let bins: Vec<usize> = (0..=n / 2)
        .filter(|&k| {
            let f = k as f64 * fs / n as f64;
            f >= cfg.band_hz[0] && f <= cfg.band_hz[1]
        })
        .collect();
    if bins.is_empty() {
        return Err(Error::Config(format!(
            "no STFT bin falls inside {:?} Hz at window {n}, fs {fs}",
            cfg.band_hz
        )));
    }
    let omega = (b * bins.len() * n_frames) as f64;

    let mut grad = Tensor::zeros(&[b, t]);
    let gd = grad.data_mut();
    let mut loss = 0.0;
    let mut buf = vec![0.0; n];
    for clip in 0..b {
        for frame in 0..n_frames {
            let t0 = frame * cfg.hop;
            let windowed = |signal: &Tensor, buf: &mut [f64]| {
                for i in 0..n {
                    buf[i] = signal.data()[clip * t + t0 + i] * window[i];
                }
            };
            windowed(pred, &mut buf);
            let xp = fft_forward(&ComplexArray::from_real(&buf, n))?;
            windowed(target, &mut buf);
            let xr = fft_forward(&ComplexArray::from_real(&buf, n))?;
            for &k in &bins {
                let (a, bb) = (xp.re[k], xp.im[k]);
                let mp = (a * a + bb * bb).sqrt();
                let mr = (xr.re[k] * xr.re[k] + xr.im[k] * xr.im[k]).sqrt();
                let diff = mp - mr;
                loss += diff.abs();
                let sign = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                if sign == 0.0 || mp == 0.0 {
                    continue;
                }
                let coeff = sign / omega;
                for i in 0..n {
                    let theta = 2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                    let dmag = (a * theta.cos() - bb * theta.sin()) / mp;
                    gd[clip * t + t0 + i] += coeff * window[i] * dmag;
                }
            }
        }
    }
    Ok((loss / omega, grad))
}

/// Weighted sum of the three terms; zero-weight terms are skipped.
pub fn combined_loss(
    pred: &Tensor,
    target: &Tensor,
    cfg: &LossConfig,
    fs: f64,
) -> Result<(LossTerms, Tensor)> {
    let (b, t) = check_pair(pred, target)?;
    let mut grad = Tensor::zeros(&[b, t]);
    let mut terms = LossTerms {
        total: 0.0,
        mse: 0.0,
        rho: 0.0,
        spec: 0.0,
    };
    let add = |weight: f64, value: f64, g: &Tensor, grad: &mut Tensor| {
        for (acc, gi) in grad.data_mut().iter_mut().zip(g.data()) {
            *acc += weight * gi;
        }
        weight * value
    };
    if cfg.lambda_mse != 0.0 {
        let (v, g) = mse_loss(pred, target)?;
        terms.mse = v;
        terms.total += add(cfg.lambda_mse, v, &g, &mut grad);
    }
    if cfg.lambda_rho != 0.0 {
        let (v, g) = pearson_loss(pred, target, cfg.eps)?;
        terms.rho = v;
        terms.total += add(cfg.lambda_rho, v, &g, &mut grad);
    }
    if cfg.lambda_spec != 0.0 {
        let (v, g) = spectral_loss(pred, target, cfg, fs)?;
        terms.spec = v;
        terms.total += add(cfg.lambda_spec, v, &g, &mut grad);
    }
    Ok((terms, grad))
}
