//! Iterative radix-2 FFT over f64, plus the real-signal helpers built on it
//! (linear convolution by zero-padded circular convolution, and half-spectrum
//! power). Lengths must be powers of two; callers pad before transforming.

use crate::error::{Error, Result};

/// Split-layout complex buffer. `re.len() == im.len()` always.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexArray {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexArray {
    pub fn zeros(n: usize) -> Self {
        Self {
            re: vec![0.0; n],
            im: vec![0.0; n],
        }
    }

    /// Real signal promoted to complex, optionally zero-padded to `n`.
    pub fn from_real(x: &[f64], n: usize) -> Self {
        assert!(n >= x.len());
        let mut out = Self::zeros(n);
        out.re[..x.len()].copy_from_slice(x);
        out
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }
}

fn check_transform_input(x: &ComplexArray) -> Result<()> {
    if x.re.len() != x.im.len() {
        return Err(Error::InvalidLength(format!(
            "complex buffer halves differ: re {} vs im {}",
            x.re.len(),
            x.im.len()
        )));
    }
    let n = x.len();
    if n == 0 {
        return Err(Error::InvalidLength("empty transform input".into()));
    }
    if !n.is_power_of_two() {
        return Err(Error::InvalidLength(format!(
            "transform length {n} is not a power of two"
        )));
    }
    Ok(())
}

/// In-place decimation-in-time radix-2 transform. `n` must be a power of two.
/// Twiddles are tabulated per stage with direct trig so round-trip error stays
/// near machine precision instead of accumulating through repeated rotation.
fn fft_in_place(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    debug_assert!(n.is_power_of_two());
    if n <= 1 {
        return;
    }

    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }

    let sign = if inverse { 1.0 } else { -1.0 };
    let mut tw_re = Vec::new();
    let mut tw_im = Vec::new();
    let mut len = 2usize;
    while len <= n {
        let half = len / 2;
        tw_re.clear();
        tw_im.clear();
        for k in 0..half {
            let ang = sign * 2.0 * std::f64::consts::PI * k as f64 / len as f64;
            tw_re.push(ang.cos());
            tw_im.push(ang.sin());
        }
        let mut start = 0;
        while start < n {
            for k in 0..half {
                let a = start + k;
                let b = a + half;
                let tr = tw_re[k] * re[b] - tw_im[k] * im[b];
                let ti = tw_re[k] * im[b] + tw_im[k] * re[b];
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
            start += len;
        }
        len <<= 1;
    }

    if inverse {
        let scale = 1.0 / n as f64;
        for v in re.iter_mut() {
            *v *= scale;
        }
        for v in im.iter_mut() {
            *v *= scale;
        }
    }
}

/// Forward DFT: X[k] = sum_n x[n] * exp(-2*pi*i*k*n/N).
pub fn fft_forward(x: &ComplexArray) -> Result<ComplexArray> {
    check_transform_input(x)?;
    let mut out = x.clone();
    fft_in_place(&mut out.re, &mut out.im, false);
    Ok(out)
}

/// Inverse DFT with 1/N normalization, so `fft_inverse(fft_forward(x)) == x`.
pub fn fft_inverse(x: &ComplexArray) -> Result<ComplexArray> {
    check_transform_input(x)?;
    let mut out = x.clone();
    fft_in_place(&mut out.re, &mut out.im, true);
    Ok(out)
}

/// Full linear convolution of two real signals, length M + N - 1, computed by
/// circular convolution at the next power of two. The imaginary residue of the
/// inverse transform must vanish for real inputs; that is asserted, not
/// silently dropped.
pub fn linear_convolve(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidLength(
            "convolution operands must be non-empty".into(),
        ));
    }
    let out_len = a.len() + b.len() - 1;
    let padded = out_len.next_power_of_two();
    let fa = fft_forward(&ComplexArray::from_real(a, padded))?;
    let fb = fft_forward(&ComplexArray::from_real(b, padded))?;
    let mut prod = ComplexArray::zeros(padded);
    for k in 0..padded {
        prod.re[k] = fa.re[k] * fb.re[k] - fa.im[k] * fb.im[k];
        prod.im[k] = fa.re[k] * fb.im[k] + fa.im[k] * fb.re[k];
    }
    let z = fft_inverse(&prod)?;
    let max_abs = z.re[..out_len].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let max_im = z.im[..out_len].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(
        max_im < 1e-9 * (1.0 + max_abs),
        "imaginary residue {max_im:e} too large for real convolution"
    );
    Ok(z.re[..out_len].to_vec())
}

/// |X[k]|^2 for k = 0..=n_fft/2 of the zero-padded signal. `n_fft` must be a
/// power of two no smaller than the signal.
pub fn power_spectrum(x: &[f64], n_fft: usize) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::InvalidLength("empty spectrum input".into()));
    }
    if n_fft < x.len() {
        return Err(Error::InvalidLength(format!(
            "n_fft {n_fft} shorter than signal length {}",
            x.len()
        )));
    }
    let spec = fft_forward(&ComplexArray::from_real(x, n_fft))?;
    Ok((0..=n_fft / 2)
        .map(|k| spec.re[k] * spec.re[k] + spec.im[k] * spec.im[k])
        .collect())
}

/// Symmetric Hann window w[i] = 0.5 (1 - cos(2 pi i / (n-1))), n >= 2.
pub fn hann_window(n: usize) -> Vec<f64> {
    assert!(n >= 2, "window needs at least 2 points");
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()))
        .collect()
}
