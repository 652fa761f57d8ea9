//! Differentiable layers: two layer-norm flavors (feature axis and time
//! axis), depthwise temporal convolution, pointwise projection, activations,
//! inverted dropout. Forward passes hand back the intermediates their
//! backward passes need; there is no autodiff tape.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;

pub const LN_EPS: f64 = 1e-5;

/// Saved intermediates of a layer-norm forward: normalized values plus the
/// inverse stddev of each normalized row.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub x_hat: Tensor,
    pub inv_std: Vec<f64>,
}

fn check_affine(len: usize, gamma: &[f64], beta: &[f64], axis: &str) -> Result<()> {
    if gamma.len() != len || beta.len() != len {
        return Err(Error::ShapeMismatch(format!(
            "{axis} affine length {}/{} does not match axis {len}",
            gamma.len(),
            beta.len()
        )));
    }
    Ok(())
}

/// Normalizes each (b,t) feature row to zero mean and unit population
/// variance, then applies the per-feature affine.
pub fn layer_norm_d_forward(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<(Tensor, LayerNormCache)> {
    let (b, t, d) = x.dims3()?;
    check_affine(d, gamma, beta, "feature")?;
    let xd = x.data();
    let mut x_hat = Tensor::zeros(&[b, t, d]);
    let mut out = Tensor::zeros(&[b, t, d]);
    let mut inv_std = vec![0.0; b * t];
    {
        let xh = x_hat.data_mut();
        let od = out.data_mut();
        for row in 0..b * t {
            let s = &xd[row * d..(row + 1) * d];
            let mean = s.iter().sum::<f64>() / d as f64;
            let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[row] = istd;
            for j in 0..d {
                let h = (s[j] - mean) * istd;
                xh[row * d + j] = h;
                od[row * d + j] = gamma[j] * h + beta[j];
            }
        }
    }
    Ok((out, LayerNormCache { x_hat, inv_std }))
}

/// dL/dx = inv_std * (g - mean(g) - x_hat * mean(g * x_hat)), g = dout * gamma,
/// with means over the feature axis.
pub fn layer_norm_d_backward(
    dout: &Tensor,
    cache: &LayerNormCache,
    gamma: &[f64],
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let (b, t, d) = dout.dims3().expect("rank checked in forward");
    let dod = dout.data();
    let xh = cache.x_hat.data();
    let mut dx = Tensor::zeros(&[b, t, d]);
    let dxd = dx.data_mut();
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    for row in 0..b * t {
        let mut g_mean = 0.0;
        let mut gx_mean = 0.0;
        for j in 0..d {
            let i = row * d + j;
            let g = dod[i] * gamma[j];
            g_mean += g;
            gx_mean += g * xh[i];
            dgamma[j] += dod[i] * xh[i];
            dbeta[j] += dod[i];
        }
        g_mean /= d as f64;
        gx_mean /= d as f64;
        let istd = cache.inv_std[row];
        for j in 0..d {
            let i = row * d + j;
            let g = dod[i] * gamma[j];
            dxd[i] = istd * (g - g_mean - xh[i] * gx_mean);
        }
    }
    (dx, dgamma, dbeta)
}

/// Normalizes each (b,j) trace over the time axis, affine indexed by t.
pub fn layer_norm_t_forward(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<(Tensor, LayerNormCache)> {
    let (b, t, d) = x.dims3()?;
    check_affine(t, gamma, beta, "time")?;
    let xd = x.data();
    let mut x_hat = Tensor::zeros(&[b, t, d]);
    let mut out = Tensor::zeros(&[b, t, d]);
    let mut inv_std = vec![0.0; b * d];
    {
        let xh = x_hat.data_mut();
        let od = out.data_mut();
        for bi in 0..b {
            for j in 0..d {
                let base = bi * t * d + j;
                let mut mean = 0.0;
                for m in 0..t {
                    mean += xd[base + m * d];
                }
                mean /= t as f64;
                let mut var = 0.0;
                for m in 0..t {
                    let c = xd[base + m * d] - mean;
                    var += c * c;
                }
                var /= t as f64;
                let istd = 1.0 / (var + eps).sqrt();
                inv_std[bi * d + j] = istd;
                for m in 0..t {
                    let h = (xd[base + m * d] - mean) * istd;
                    xh[base + m * d] = h;
                    od[base + m * d] = gamma[m] * h + beta[m];
                }
            }
        }
    }
    Ok((out, LayerNormCache { x_hat, inv_std }))
}

pub fn layer_norm_t_backward(
    dout: &Tensor,
    cache: &LayerNormCache,
    gamma: &[f64],
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let (b, t, d) = dout.dims3().expect("rank checked in forward");
    let dod = dout.data();
    let xh = cache.x_hat.data();
    let mut dx = Tensor::zeros(&[b, t, d]);
    let dxd = dx.data_mut();
    let mut dgamma = vec![0.0; t];
    let mut dbeta = vec![0.0; t];
    for bi in 0..b {
        for j in 0..d {
            let base = bi * t * d + j;
            let mut g_mean = 0.0;
            let mut gx_mean = 0.0;
            for m in 0..t {
                let i = base + m * d;
                let g = dod[i] * gamma[m];
                g_mean += g;
                gx_mean += g * xh[i];
                dgamma[m] += dod[i] * xh[i];
                dbeta[m] += dod[i];
            }
            g_mean /= t as f64;
            gx_mean /= t as f64;
            let istd = cache.inv_std[bi * d + j];
            for m in 0..t {
                let i = base + m * d;
                let g = dod[i] * gamma[m];
                dxd[i] = istd * (g - g_mean - xh[i] * gx_mean);
            }
        }
    }
    (dx, dgamma, dbeta)
}

fn dwconv_dims(x: &Tensor, weights: &[f64], bias: &[f64]) -> Result<(usize, usize, usize, usize)> {
    let (b, t, d) = x.dims3()?;
    if weights.is_empty() || weights.len() % d != 0 {
        return Err(Error::ShapeMismatch(format!(
            "depthwise weights length {} is not a multiple of d={d}",
            weights.len()
        )));
    }
    if bias.len() != d {
        return Err(Error::ShapeMismatch(format!(
            "depthwise bias length {} does not match d={d}",
            bias.len()
        )));
    }
    let k = weights.len() / d;
    if k % 2 == 0 {
        return Err(Error::Config(format!("conv kernel size {k} must be odd")));
    }
    Ok((b, t, d, k))
}

/// Per-channel temporal convolution, zero-padded so the output keeps length T:
/// out[b,t,j] = bias[j] + sum_k weights[k,j] * x[b, t+k-(K-1)/2, j].
pub fn dwconv1d_forward(x: &Tensor, weights: &[f64], bias: &[f64]) -> Result<Tensor> {
    let (b, t, d, k) = dwconv_dims(x, weights, bias)?;
    let off = (k - 1) / 2;
    let xd = x.data();
    let mut out = Tensor::zeros(&[b, t, d]);
    let od = out.data_mut();
    for bi in 0..b {
        for m in 0..t {
            for j in 0..d {
                let mut acc = bias[j];
                for kk in 0..k {
                    let src = m + kk;
                    if src >= off && src - off < t {
                        acc += weights[kk * d + j] * xd[bi * t * d + (src - off) * d + j];
                    }
                }
                od[bi * t * d + m * d + j] = acc;
            }
        }
    }
    Ok(out)
}

/// dx[b,s,j] = sum_k weights[k,j] * dout[b, s-k+(K-1)/2, j];
/// dweights[k,j] = sum_{b,t} dout[b,t,j] * x[b, t+k-(K-1)/2, j];
/// dbias[j] = sum_{b,t} dout[b,t,j].
pub fn dwconv1d_backward(
    dout: &Tensor,
    x: &Tensor,
    weights: &[f64],
    bias: &[f64],
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let (b, t, d, k) = dwconv_dims(x, weights, bias)?;
    if dout.shape() != x.shape() {
        return Err(Error::ShapeMismatch(
            "dout shape must match conv input".into(),
        ));
    }
    let off = (k - 1) / 2;
    let xd = x.data();
    let dod = dout.data();
    let mut dx = Tensor::zeros(&[b, t, d]);
    let dxd = dx.data_mut();
    let mut dw = vec![0.0; k * d];
    let mut db = vec![0.0; d];
    for bi in 0..b {
        for m in 0..t {
            for j in 0..d {
                let g = dod[bi * t * d + m * d + j];
                db[j] += g;
                for kk in 0..k {
                    let src = m + kk;
                    if src >= off && src - off < t {
                        let i = bi * t * d + (src - off) * d + j;
                        dw[kk * d + j] += g * xd[i];
                        dxd[i] += g * weights[kk * d + j];
                    }
                }
            }
        }
    }
    Ok((dx, dw, db))
}

fn pw_dims(x: &Tensor, w: &[f64], bias: Option<&[f64]>) -> Result<(usize, usize, usize, usize)> {
    let (b, t, d_in) = x.dims3()?;
    if w.is_empty() || w.len() % d_in != 0 {
        return Err(Error::ShapeMismatch(format!(
            "projection weight length {} is not a multiple of d_in={d_in}",
            w.len()
        )));
    }
    let d_out = w.len() / d_in;
    if let Some(bias) = bias {
        if bias.len() != d_out {
            return Err(Error::ShapeMismatch(format!(
                "projection bias length {} does not match d_out={d_out}",
                bias.len()
            )));
        }
    }
    Ok((b, t, d_in, d_out))
}

/// out[b,t] = W x[b,t] (+ bias), W row-major d_out x d_in.
pub fn pointwise_linear_forward(x: &Tensor, w: &[f64], bias: Option<&[f64]>) -> Result<Tensor> {
    let (b, t, d_in, d_out) = pw_dims(x, w, bias)?;
    let xd = x.data();
    let mut out = Tensor::zeros(&[b, t, d_out]);
    let od = out.data_mut();
    for row in 0..b * t {
        let src = &xd[row * d_in..(row + 1) * d_in];
        for o in 0..d_out {
            let mut acc = bias.map_or(0.0, |bv| bv[o]);
            let wr = &w[o * d_in..(o + 1) * d_in];
            for i in 0..d_in {
                acc += wr[i] * src[i];
            }
            od[row * d_out + o] = acc;
        }
    }
    Ok(out)
}

/// dx = W^T dout per row; dW[o,i] = sum_rows dout[o] * x[i]; dbias = sum dout.
pub fn pointwise_linear_backward(
    dout: &Tensor,
    x: &Tensor,
    w: &[f64],
    has_bias: bool,
) -> Result<(Tensor, Vec<f64>, Option<Vec<f64>>)> {
    let (b, t, d_in, d_out) = pw_dims(x, w, None)?;
    let (_, _, dout_d) = dout.dims3()?;
    if dout.shape()[..2] != x.shape()[..2] || dout_d != d_out {
        return Err(Error::ShapeMismatch(
            "dout shape does not match projection output".into(),
        ));
    }
    let xd = x.data();
    let dod = dout.data();
    let mut dx = Tensor::zeros(&[b, t, d_in]);
    let dxd = dx.data_mut();
    let mut dw = vec![0.0; d_out * d_in];
    let mut db = vec![0.0; d_out];
    for row in 0..b * t {
        let src = &xd[row * d_in..(row + 1) * d_in];
        for o in 0..d_out {
            let g = dod[row * d_out + o];
            db[o] += g;
            let wr = &w[o * d_in..(o + 1) * d_in];
            for i in 0..d_in {
                dw[o * d_in + i] += g * src[i];
                dxd[row * d_in + i] += g * wr[i];
            }
        }
    }
    Ok((dx, dw, if has_bias { Some(db) } else { None }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Sigmoid,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = match kind {
            Activation::Silu => silu(*v),
            Activation::Sigmoid => sigmoid(*v),
        };
    }
    out
}

/// silu'(x) = s(x) * (1 + x * (1 - s(x))); sigmoid'(x) = s(x) * (1 - s(x)).
pub fn activation_backward(dout: &Tensor, x: &Tensor, kind: Activation) -> Tensor {
    debug_assert_eq!(dout.shape(), x.shape());
    let mut dx = dout.clone();
    for (g, &xi) in dx.data_mut().iter_mut().zip(x.data()) {
        let s = sigmoid(xi);
        let deriv = match kind {
            Activation::Silu => s * (1.0 + xi * (1.0 - s)),
            Activation::Sigmoid => s * (1.0 - s),
        };
        *g *= deriv;
    }
    dx
}

/// Inverted dropout. Training mode returns the scaled mask (0 or 1/(1-p) per
/// element) for backward; eval mode is the identity with no mask.
pub fn dropout_forward<R: Rng>(
    x: &Tensor,
    p: f64,
    training: bool,
    rng: &mut R,
) -> Result<(Tensor, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!(
            "dropout probability {p} must lie in [0, 1)"
        )));
    }
    if !training || p == 0.0 {
        return Ok((x.clone(), training.then(|| vec![1.0; x.numel()])));
    }
    let scale = 1.0 / (1.0 - p);
    let mut out = x.clone();
    let mut mask = vec![0.0; x.numel()];
    for (v, m) in out.data_mut().iter_mut().zip(mask.iter_mut()) {
        if rng.gen::<f64>() < p {
            *v = 0.0;
        } else {
            *v *= scale;
            *m = scale;
        }
    }
    Ok((out, Some(mask)))
}

pub fn dropout_backward(dout: &Tensor, mask: Option<&[f64]>) -> Tensor {
    match mask {
        None => dout.clone(),
        Some(mask) => {
            let mut dx = dout.clone();
            for (g, &m) in dx.data_mut().iter_mut().zip(mask) {
                *g *= m;
            }
            dx
        }
    }
}
