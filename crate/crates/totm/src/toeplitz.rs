//! Learned Toeplitz mixing along the time axis.
//!
//! A length-T kernel defines a T x T matrix A that is constant along each
//! diagonal: A[m][n] = c[m-n] for m >= n and A[m][n] = r[n-m] for m < n,
//! where c is the first column (causal lags) and r the first row
//! (anticausal lags), tied at the main diagonal by r[0] == c[0]. Applying A
//! to every (batch, channel) trace of a B x T x d tensor mixes information
//! across time with 2T-1 degrees of freedom.
//!
//! Two evaluation routes are kept side by side: a dense matvec, and an
//! FFT route that embeds the kernel in a circulant of power-of-two length
//! and multiplies spectra. They must agree to near machine precision; the
//! dense route is the oracle and the benchmark baseline.

use crate::error::{Error, Result};
use crate::fft::{fft_forward, fft_inverse, ComplexArray};
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// First column `c` and first row `r` of a Toeplitz matrix, both length T,
/// with `r[0] == c[0]` always. `max_lag` optionally truncates the kernel to a
/// band: entries at lags above it are held at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ToeplitzKernel {
    pub c: Vec<f64>,
    pub r: Vec<f64>,
    pub max_lag: Option<usize>,
}

impl ToeplitzKernel {
    /// Ties `r[0]` to `c[0]` and zeroes truncated lags; other entries are
    /// taken as given.
    pub fn new(c: Vec<f64>, r: Vec<f64>, max_lag: Option<usize>) -> Result<Self> {
        if c.is_empty() || c.len() != r.len() {
            return Err(Error::InvalidLength(format!(
                "kernel halves must be equal non-zero lengths, got c {} r {}",
                c.len(),
                r.len()
            )));
        }
        if let Some(lag) = max_lag {
            if lag >= c.len() {
                return Err(Error::Config(format!(
                    "max_lag {lag} must be below kernel length {}",
                    c.len()
                )));
            }
        }
        let mut kernel = Self { c, r, max_lag };
        kernel.enforce_constraints();
        Ok(kernel)
    }

    /// Near-identity random init: unit main diagonal, small normal off-lags.
    pub fn init<R: Rng>(t_len: usize, max_lag: Option<usize>, rng: &mut R) -> Result<Self> {
        let noise = Normal::new(0.0, 0.02).expect("valid stddev");
        let mut c: Vec<f64> = (0..t_len).map(|_| noise.sample(rng)).collect();
        let mut r: Vec<f64> = (0..t_len).map(|_| noise.sample(rng)).collect();
        c[0] = 1.0;
        r[0] = 1.0;
        Self::new(c, r, max_lag)
    }

    pub fn t_len(&self) -> usize {
        self.c.len()
    }

    /// Re-establishes the diagonal tie and the truncation zeros. Called after
    /// every in-place parameter update.
    pub fn enforce_constraints(&mut self) {
        self.r[0] = self.c[0];
        if let Some(lag) = self.max_lag {
            for k in lag + 1..self.c.len() {
                self.c[k] = 0.0;
                self.r[k] = 0.0;
            }
        }
    }

    /// Same matrix transposed: column and row swap roles.
    pub fn transposed(&self) -> Self {
        Self {
            c: self.r.clone(),
            r: self.c.clone(),
            max_lag: self.max_lag,
        }
    }
}

/// Materializes the full T x T matrix, row-major. Oracle route; O(T^2) memory.
pub fn build_dense(kernel: &ToeplitzKernel) -> Tensor {
    let t = kernel.t_len();
    let mut data = vec![0.0; t * t];
    for m in 0..t {
        for n in 0..t {
            data[m * t + n] = if m >= n {
                kernel.c[m - n]
            } else {
                kernel.r[n - m]
            };
        }
    }
    Tensor::new(vec![t, t], data).expect("square shape")
}

/// First column of the circulant that embeds the Toeplitz matrix:
/// `c` up front, `r[T-1]..r[1]` packed at the tail, zeros between. Circular
/// convolution with this column reproduces A on the first T outputs whenever
/// `padded_len >= 2T - 1`.
pub fn embed_kernel(kernel: &ToeplitzKernel, padded_len: usize) -> Result<Vec<f64>> {
    let t = kernel.t_len();
    if padded_len < 2 * t - 1 {
        return Err(Error::InvalidLength(format!(
            "padded_len {padded_len} cannot hold 2*{t}-1 kernel taps"
        )));
    }
    let mut col = vec![0.0; padded_len];
    col[..t].copy_from_slice(&kernel.c);
    for k in 1..t {
        col[padded_len - k] = kernel.r[k];
    }
    Ok(col)
}

fn check_mix_input(q: &Tensor, kernel: &ToeplitzKernel) -> Result<(usize, usize, usize)> {
    let (b, t, d) = q.dims3()?;
    if t != kernel.t_len() {
        return Err(Error::ShapeMismatch(format!(
            "kernel length {} does not match time axis {t}",
            kernel.t_len()
        )));
    }
    Ok((b, t, d))
}

/// Applies the Toeplitz matrix to every (batch, channel) trace via the
/// circulant embedding: one kernel transform per call, two transforms per
/// trace. O(B*d*T log T).
pub fn toeplitz_mix(q: &Tensor, kernel: &ToeplitzKernel) -> Result<Tensor> {
    let (b, t, d) = check_mix_input(q, kernel)?;
    let padded = (2 * t - 1).next_power_of_two();
    let col = embed_kernel(kernel, padded)?;
    let col_spec = fft_forward(&ComplexArray::from_real(&col, padded))?;

    let qd = q.data();
    let mut out = Tensor::zeros(&[b, t, d]);
    let od = out.data_mut();
    let mut trace = vec![0.0; t];
    for bi in 0..b {
        for j in 0..d {
            let base = bi * t * d + j;
            for m in 0..t {
                trace[m] = qd[base + m * d];
            }
            let mut spec = fft_forward(&ComplexArray::from_real(&trace, padded))?;
            for k in 0..padded {
                let re = spec.re[k] * col_spec.re[k] - spec.im[k] * col_spec.im[k];
                let im = spec.re[k] * col_spec.im[k] + spec.im[k] * col_spec.re[k];
                spec.re[k] = re;
                spec.im[k] = im;
            }
            let z = fft_inverse(&spec)?;
            for m in 0..t {
                od[base + m * d] = z.re[m];
            }
        }
    }
    Ok(out)
}

/// Same contraction as [`toeplitz_mix`] evaluated by direct summation over
/// lags, O(B*d*T^2) time but O(T) extra memory. Benchmark baseline.
pub fn toeplitz_mix_dense(q: &Tensor, kernel: &ToeplitzKernel) -> Result<Tensor> {
    let (b, t, d) = check_mix_input(q, kernel)?;
    let qd = q.data();
    let mut out = Tensor::zeros(&[b, t, d]);
    let od = out.data_mut();
    for bi in 0..b {
        for j in 0..d {
            let base = bi * t * d + j;
            for m in 0..t {
                let mut acc = 0.0;
                for n in 0..t {
                    let a = if m >= n {
                        kernel.c[m - n]
                    } else {
                        kernel.r[n - m]
                    };
                    acc += a * qd[base + n * d];
                }
                od[base + m * d] = acc;
            }
        }
    }
    Ok(out)
}

/// Gradients of a scalar loss through `v = toeplitz_mix(q, kernel)`.
///
/// Returns (dq, dc, dr) where
///   dq          = A^T dv                     (mix with the transposed kernel)
///   dc[k]       = sum over m-n = k,  m >= n of dv[.,m,.] * q[.,n,.]
///   dr[k]       = sum over n-m = k           of dv[.,m,.] * q[.,n,.]
/// Both kernel sums are lag cross-correlations between each dv trace and its
/// q trace, so they come out of one shared FFT product accumulated across
/// traces. dr[0] is set equal to dc[0]: the main diagonal is one parameter,
/// and its full gradient is reported in both slots. Truncated lags get zero
/// gradient; they are not free parameters.
pub fn toeplitz_mix_backward(
    dv: &Tensor,
    q: &Tensor,
    kernel: &ToeplitzKernel,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let (b, t, d) = check_mix_input(q, kernel)?;
    if dv.shape() != q.shape() {
        return Err(Error::ShapeMismatch(format!(
            "dv shape {:?} does not match q shape {:?}",
            dv.shape(),
            q.shape()
        )));
    }

    let dq = toeplitz_mix(dv, &kernel.transposed())?;

    // Cross-correlate by convolving dv with the reversed q trace; the product
    // spectra accumulate across traces and invert once.
    let padded = (2 * t - 1).next_power_of_two();
    let dvd = dv.data();
    let qd = q.data();
    let mut acc = ComplexArray::zeros(padded);
    let mut dv_trace = vec![0.0; t];
    let mut q_rev = vec![0.0; t];
    for bi in 0..b {
        for j in 0..d {
            let base = bi * t * d + j;
            for m in 0..t {
                dv_trace[m] = dvd[base + m * d];
                q_rev[t - 1 - m] = qd[base + m * d];
            }
            let fa = fft_forward(&ComplexArray::from_real(&dv_trace, padded))?;
            let fb = fft_forward(&ComplexArray::from_real(&q_rev, padded))?;
            for k in 0..padded {
                acc.re[k] += fa.re[k] * fb.re[k] - fa.im[k] * fb.im[k];
                acc.im[k] += fa.re[k] * fb.im[k] + fa.im[k] * fb.re[k];
            }
        }
    }
    let xc = fft_inverse(&acc)?;
    // xc[T-1+k] collects pairs with dv index - q index = k (lag k of c);
    // xc[T-1-k] collects the mirrored pairs (lag k of r).
    let mut dc = vec![0.0; t];
    let mut dr = vec![0.0; t];
    for k in 0..t {
        dc[k] = xc.re[t - 1 + k];
        dr[k] = xc.re[t - 1 - k];
    }
    dr[0] = dc[0];
    if let Some(lag) = kernel.max_lag {
        for k in lag + 1..t {
            dc[k] = 0.0;
            dr[k] = 0.0;
        }
    }
    Ok((dq, dc, dr))
}
