//! Fast self-contained correctness suites behind `totm check`. Each suite
//! returns Ok or a description of the first failure; the command prints one
//! line per suite and exits nonzero if any failed.
//!
//! Setting TOTM_FAULT_INJECT=gradients corrupts the analytic gradients before
//! the finite-difference comparison. The integration tests use it to prove a
//! broken adjoint actually trips the gradient suite.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use totm::fft::{fft_forward, fft_inverse, linear_convolve, ComplexArray};
use totm::losses::{combined_loss, mse_loss, pearson_loss, spectral_loss, LossConfig};
use totm::model::{
    model_backward, model_forward_eval, param_count, ModelConfig, ModelParams, StemKind, Variant,
};
use totm::tensor::Tensor;
use totm::toeplitz::{toeplitz_mix, toeplitz_mix_dense, ToeplitzKernel};

type SuiteResult = std::result::Result<(), String>;

pub struct Suite {
    pub name: &'static str,
    pub run: fn() -> SuiteResult,
}

pub const SUITES: &[Suite] = &[
    Suite {
        name: "fft",
        run: check_fft,
    },
    Suite {
        name: "convolution",
        run: check_convolution,
    },
    Suite {
        name: "toeplitz",
        run: check_toeplitz,
    },
    Suite {
        name: "gradients",
        run: check_gradients,
    },
    Suite {
        name: "losses",
        run: check_losses,
    },
    Suite {
        name: "param-count",
        run: check_param_count,
    },
];

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Round-trip and Parseval identities over a spread of power-of-two sizes.
fn check_fft() -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for &n in &[1usize, 2, 4, 8, 64, 256, 1024, 4096] {
        for _ in 0..6 {
            let x = ComplexArray {
                re: random_vec(&mut rng, n),
                im: random_vec(&mut rng, n),
            };
            let spec = fft_forward(&x).map_err(|e| e.to_string())?;
            let back = fft_inverse(&spec).map_err(|e| e.to_string())?;
            let mut worst = 0.0f64;
            for i in 0..n {
                worst = worst.max((back.re[i] - x.re[i]).abs());
                worst = worst.max((back.im[i] - x.im[i]).abs());
            }
            if worst > 1e-12 {
                return Err(format!("round-trip error {worst:.3e} at n={n}"));
            }
            let time: f64 = (0..n).map(|i| x.re[i] * x.re[i] + x.im[i] * x.im[i]).sum();
            let freq: f64 = (0..n)
                .map(|i| spec.re[i] * spec.re[i] + spec.im[i] * spec.im[i])
                .sum::<f64>()
                / n as f64;
            if (time - freq).abs() > 1e-10 * time.max(1.0) {
                return Err(format!("energy mismatch {time} vs {freq} at n={n}"));
            }
        }
    }
    Ok(())
}

fn check_convolution() -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for case in 0..50 {
        let m = rng.gen_range(1..=64);
        let n = rng.gen_range(1..=64);
        let a = random_vec(&mut rng, m);
        let b = random_vec(&mut rng, n);
        let fast = linear_convolve(&a, &b).map_err(|e| e.to_string())?;
        let mut slow = vec![0.0; m + n - 1];
        for (i, ai) in a.iter().enumerate() {
            for (j, bj) in b.iter().enumerate() {
                slow[i + j] += ai * bj;
            }
        }
        for (k, (f, s)) in fast.iter().zip(&slow).enumerate() {
            if (f - s).abs() > 1e-10 {
                return Err(format!(
                    "case {case}: lag {k} differs by {:.3e}",
                    (f - s).abs()
                ));
            }
        }
    }
    Ok(())
}

fn check_toeplitz() -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for &t in &[1usize, 2, 3, 5, 8, 16, 37, 180, 257] {
        let lags = [None, Some(5.min(t.saturating_sub(1)).max(1))];
        for max_lag in lags {
            if max_lag.is_some_and(|l| l >= t) {
                continue;
            }
            let kernel = ToeplitzKernel::init(t, max_lag, &mut rng).map_err(|e| e.to_string())?;
            let mut q = Tensor::zeros(&[2, t, 3]);
            for v in q.data_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            let fast = toeplitz_mix(&q, &kernel).map_err(|e| e.to_string())?;
            let dense = toeplitz_mix_dense(&q, &kernel).map_err(|e| e.to_string())?;
            let mut worst = 0.0f64;
            for (a, b) in fast.data().iter().zip(dense.data()) {
                worst = worst.max((a - b).abs());
            }
            if worst > 1e-10 {
                return Err(format!(
                    "fft vs dense differ by {worst:.3e} at T={t}, max_lag={max_lag:?}"
                ));
            }
        }
    }
    Ok(())
}

fn fd_config() -> ModelConfig {
    ModelConfig {
        d: 4,
        blocks: 2,
        kernel_size: 3,
        mlp_ratio: 2.0,
        dropout_p: 0.0,
        t_len: 8,
        pool_grid: 2,
        stem: StemKind::MeanPoolLinear,
        variant: Variant::Full,
        max_lag: None,
    }
}

/// Central finite differences against the analytic adjoints on a tiny model
/// and on the combined loss.
fn check_gradients() -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let cfg = fd_config();
    let params = ModelParams::init(&cfg, 7).map_err(|e| e.to_string())?;
    let mut x = Tensor::zeros(&[2, cfg.t_len, 3, 4, 4]);
    for v in x.data_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let probe: Vec<f64> = random_vec(&mut rng, 2 * cfg.t_len);

    // Scalar objective: probe-weighted sum of the prediction.
    let loss_of = |params: &ModelParams| -> std::result::Result<f64, String> {
        let pred = model_forward_eval(&x, params).map_err(|e| e.to_string())?;
        Ok(pred.data().iter().zip(&probe).map(|(p, w)| p * w).sum())
    };

    let mut dpred = Tensor::zeros(&[2, cfg.t_len]);
    dpred.data_mut().copy_from_slice(&probe);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(0);
    let (_, cache) =
        totm::model::model_forward(&x, &params, false, &mut eval_rng).map_err(|e| e.to_string())?;
    let mut grads = model_backward(&dpred, &cache, &params).map_err(|e| e.to_string())?;

    // Test hook: a corrupted adjoint must make this suite fail.
    if std::env::var_os("TOTM_FAULT_INJECT").is_some_and(|v| v == "gradients") {
        grads.for_each_mut(&mut |_, values| {
            for v in values.iter_mut() {
                *v += 1.0;
            }
        });
    }

    // Flatten for indexed perturbation, remembering which flat slots are the
    // stored lag-0 mirror of a kernel row (not independent coordinates).
    let mut flat = Vec::new();
    let mut mirror = Vec::new();
    params.for_each(&mut |path, _, values| {
        for (i, v) in values.iter().enumerate() {
            mirror.push(path.ends_with("toeplitz.r") && i == 0);
            flat.push(*v);
        }
    });
    let mut grad_flat = Vec::new();
    grads.for_each(&mut |_, _, values| grad_flat.extend_from_slice(values));

    let total = flat.len();
    let h = 1e-6;
    let mut checked = 0usize;
    let mut idx = 0usize;
    while idx < total {
        if !mirror[idx] {
            let mut plus = flat.clone();
            plus[idx] += h;
            let mut minus = flat.clone();
            minus[idx] -= h;
            let mut p_plus = params.clone();
            set_flat(&mut p_plus, &plus);
            let mut p_minus = params.clone();
            set_flat(&mut p_minus, &minus);
            let fd = (loss_of(&p_plus)? - loss_of(&p_minus)?) / (2.0 * h);
            let got = grad_flat[idx];
            let scale = fd.abs().max(got.abs()).max(1e-6);
            if (fd - got).abs() / scale > 1e-4 {
                return Err(format!(
                    "model gradient at flat index {idx}: analytic {got:.6e} vs fd {fd:.6e}"
                ));
            }
            checked += 1;
        }
        idx += (total / 24).max(1);
    }
    if checked < 10 {
        return Err(format!("only {checked} coordinates checked"));
    }

    // Combined loss gradient on a random prediction.
    let loss_cfg = LossConfig::default();
    let mut pred = Tensor::zeros(&[2, 160]);
    for v in pred.data_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let mut target = Tensor::zeros(&[2, 160]);
    for v in target.data_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let (_, grad) = combined_loss(&pred, &target, &loss_cfg, 30.0).map_err(|e| e.to_string())?;
    for k in 0..16 {
        let idx = k * 19;
        let h = 1e-5;
        let orig = pred.data()[idx];
        pred.data_mut()[idx] = orig + h;
        let (up, _) = combined_loss(&pred, &target, &loss_cfg, 30.0).map_err(|e| e.to_string())?;
        pred.data_mut()[idx] = orig - h;
        let (down, _) =
            combined_loss(&pred, &target, &loss_cfg, 30.0).map_err(|e| e.to_string())?;
        pred.data_mut()[idx] = orig;
        let fd = (up.total - down.total) / (2.0 * h);
        let got = grad.data()[idx];
        let scale = fd.abs().max(got.abs()).max(1e-6);
        if (fd - got).abs() / scale > 1e-4 {
            return Err(format!(
                "loss gradient at index {idx}: analytic {got:.6e} vs fd {fd:.6e}"
            ));
        }
    }
    Ok(())
}

fn set_flat(params: &mut ModelParams, flat: &[f64]) {
    let mut offset = 0usize;
    params.for_each_mut(&mut |_, values| {
        values.copy_from_slice(&flat[offset..offset + values.len()]);
        offset += values.len();
    });
}

fn check_losses() -> SuiteResult {
    let mut pred = Tensor::zeros(&[1, 4]);
    pred.data_mut().copy_from_slice(&[1.0, 2.0, 0.0, -1.0]);
    let target = Tensor::zeros(&[1, 4]);
    let (mse, _) = mse_loss(&pred, &target).map_err(|e| e.to_string())?;
    if (mse - 1.5).abs() > 1e-15 {
        return Err(format!("mse of known values: {mse} instead of 1.5"));
    }

    // Perfect correlation zeroes the Pearson term.
    let mut wave = Tensor::zeros(&[1, 64]);
    for (i, v) in wave.data_mut().iter_mut().enumerate() {
        *v = (i as f64 * 0.37).sin();
    }
    let (rho, _) = pearson_loss(&wave, &wave, 1e-8).map_err(|e| e.to_string())?;
    if rho.abs() > 1e-6 {
        return Err(format!("self-correlation loss {rho:.3e} should vanish"));
    }

    // The combined objective is the advertised weighted sum of its parts.
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut a = Tensor::zeros(&[2, 160]);
    for v in a.data_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let mut b = Tensor::zeros(&[2, 160]);
    for v in b.data_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let cfg = LossConfig::default();
    let (terms, _) = combined_loss(&a, &b, &cfg, 30.0).map_err(|e| e.to_string())?;
    let (m, _) = mse_loss(&a, &b).map_err(|e| e.to_string())?;
    let (r, _) = pearson_loss(&a, &b, cfg.eps).map_err(|e| e.to_string())?;
    let (s, _) = spectral_loss(&a, &b, &cfg, 30.0).map_err(|e| e.to_string())?;
    let total = cfg.lambda_mse * m + cfg.lambda_rho * r + cfg.lambda_spec * s;
    if (terms.total - total).abs() > 1e-12 {
        return Err(format!(
            "combined {} differs from weighted sum {}",
            terms.total, total
        ));
    }
    Ok(())
}

fn check_param_count() -> SuiteResult {
    let default_cfg = ModelConfig::default();
    let counts = param_count(&default_cfg);
    let expect = 2 * default_cfg.t_len - 1;
    if counts.toeplitz_per_block != expect {
        return Err(format!(
            "mixing kernel holds {} parameters instead of {expect}",
            counts.toeplitz_per_block
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(106);
    for case in 0..10 {
        let variant = match rng.gen_range(0..3) {
            0 => Variant::Full,
            1 => Variant::LocalOnly,
            _ => Variant::NoGate,
        };
        let t_len = rng.gen_range(4..48);
        let cfg = ModelConfig {
            d: rng.gen_range(1..10),
            blocks: rng.gen_range(1..4),
            kernel_size: 2 * rng.gen_range(0..3) + 1,
            mlp_ratio: rng.gen_range(1..4) as f64,
            dropout_p: 0.0,
            t_len,
            pool_grid: rng.gen_range(1..4),
            stem: StemKind::MeanPoolLinear,
            variant,
            max_lag: None,
        };
        let params = ModelParams::init(&cfg, case as u64).map_err(|e| e.to_string())?;
        let formula = param_count(&cfg).total;
        let enumerated = params.count_elements();
        if formula != enumerated {
            return Err(format!(
                "case {case}: formula {formula} vs enumeration {enumerated} for {cfg:?}"
            ));
        }
    }
    Ok(())
}
