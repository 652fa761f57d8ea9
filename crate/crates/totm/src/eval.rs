//! Waveform evaluation: FFT spectral-peak heart-rate estimation, a
//! two-harmonic SNR, and the aggregate metric suite (MAE, RMSE, MAPE,
//! Pearson, mean SNR).

use crate::error::{Error, Result};
use crate::fft::{hann_window, power_spectrum};
use serde::Serialize;

/// Analysis band for HR peak search, in Hz (45 to 150 bpm).
pub const HR_BAND_HZ: [f64; 2] = [0.75, 2.5];
/// Full band over which SNR accounts power, in Hz.
pub const SNR_BAND_HZ: [f64; 2] = [0.6, 4.0];
/// Half-width of each SNR signal window around f_ref and 2 f_ref, in Hz.
pub const SNR_WINDOW_HZ: f64 = 0.1;
/// f_ref must land in this band so that both harmonics fit the SNR band.
pub const SNR_REF_RANGE_HZ: [f64; 2] = [0.6, 2.0];

fn padded_len(len: usize) -> usize {
    (8 * len).next_power_of_two().max(4096)
}

fn detrended_spectrum(wave: &[f64], fs: f64, hann: bool) -> Result<(Vec<f64>, f64)> {
    if (wave.len() as f64) < 2.0 * fs || wave.len() < 2 {
        return Err(Error::InvalidLength(format!(
            "waveform of {} samples is shorter than 2 seconds at fs {fs}",
            wave.len()
        )));
    }
    let mean = wave.iter().sum::<f64>() / wave.len() as f64;
    let mut centered: Vec<f64> = wave.iter().map(|x| x - mean).collect();
    if hann {
        for (x, w) in centered.iter_mut().zip(hann_window(wave.len())) {
            *x *= w;
        }
    }
    let n_fft = padded_len(wave.len());
    let power = power_spectrum(&centered, n_fft)?;
    Ok((power, fs / n_fft as f64))
}

/// Dominant in-band frequency of the zero-padded spectrum, in bpm. The
/// padding (next power of two above 8x the length, at least 4096) keeps the
/// bin resolution below half a bpm at fs = 30. Ties go to the lower
/// frequency.
pub fn estimate_hr_fft(wave: &[f64], fs: f64, band_hz: [f64; 2]) -> Result<f64> {
    let [lo, hi] = band_hz;
    if !(0.0 < lo && lo < hi && hi < fs / 2.0) {
        return Err(Error::Config(format!(
            "band [{lo}, {hi}] Hz must satisfy 0 < lo < hi < fs/2"
        )));
    }
    let (power, df) = detrended_spectrum(wave, fs, false)?;
    let mut best: Option<(usize, f64)> = None;
    for (k, &p) in power.iter().enumerate() {
        let f = k as f64 * df;
        if f < lo || f > hi {
            continue;
        }
        // Strict > keeps the first (lowest-frequency) bin on ties.
        if best.map_or(true, |(_, bp)| p > bp) {
            best = Some((k, p));
        }
    }
    let (k, _) = best.ok_or_else(|| {
        Error::Config(format!(
            "no spectrum bin falls inside [{lo}, {hi}] Hz at resolution {df} Hz"
        ))
    })?;
    Ok(60.0 * k as f64 * df)
}

/// Ratio of power near f_ref and 2 f_ref to the remaining power in
/// [0.6, 4.0] Hz, in dB. f_ref outside [0.6, 2.0] Hz cannot place both
/// harmonics inside the accounting band and is rejected.
///
/// The spectrum is Hann-windowed: with a plain rectangular window the
/// sidelobe tail of even a noiseless tone carries roughly a tenth of its
/// power past the 0.1 Hz signal windows, capping the measurable SNR near
/// 10 dB regardless of prediction quality.
pub fn snr_db(pred: &[f64], ref_hr_bpm: f64, fs: f64) -> Result<f64> {
    snr_db_windowed(pred, ref_hr_bpm, fs, SNR_WINDOW_HZ)
}

/// [`snr_db`] with an explicit half-width for the two signal windows.
pub fn snr_db_windowed(pred: &[f64], ref_hr_bpm: f64, fs: f64, window_hz: f64) -> Result<f64> {
    if !(window_hz > 0.0) {
        return Err(Error::Config(format!(
            "snr window {window_hz} Hz must be positive"
        )));
    }
    let f_ref = ref_hr_bpm / 60.0;
    if !(SNR_REF_RANGE_HZ[0]..=SNR_REF_RANGE_HZ[1]).contains(&f_ref) {
        return Err(Error::OutOfBand(format!(
            "reference {ref_hr_bpm} bpm ({f_ref} Hz) outside [{}, {}] Hz",
            SNR_REF_RANGE_HZ[0], SNR_REF_RANGE_HZ[1]
        )));
    }
    let (power, df) = detrended_spectrum(pred, fs, true)?;
    let mut signal = 0.0;
    let mut rest = 0.0;
    for (k, &p) in power.iter().enumerate() {
        let f = k as f64 * df;
        if f < SNR_BAND_HZ[0] || f > SNR_BAND_HZ[1] {
            continue;
        }
        if (f - f_ref).abs() <= window_hz || (f - 2.0 * f_ref).abs() <= window_hz {
            signal += p;
        } else {
            rest += p;
        }
    }
    if signal + rest == 0.0 {
        return Err(Error::InvalidLength("waveform has no in-band power".into()));
    }
    Ok(10.0 * (signal / rest).log10())
}

/// Aggregate agreement between predicted and reference HR series. `pearson`
/// is None when undefined (fewer than two clips, or either side constant).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub n_clips: usize,
    pub mae_bpm: f64,
    pub rmse_bpm: f64,
    pub mape_pct: f64,
    pub pearson: Option<f64>,
    /// Mean of the supplied per-clip SNRs; None when none were available.
    pub snr_db: Option<f64>,
}

pub fn compute_metrics(pred_hr: &[f64], ref_hr: &[f64], snr_per_clip: &[f64]) -> Result<Metrics> {
    if pred_hr.is_empty() || pred_hr.len() != ref_hr.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} references",
            pred_hr.len(),
            ref_hr.len()
        )));
    }
    if ref_hr.iter().any(|&r| r <= 0.0) {
        return Err(Error::Config(
            "reference heart rates must be strictly positive".into(),
        ));
    }
    let n = pred_hr.len() as f64;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut pct_sum = 0.0;
    for (p, r) in pred_hr.iter().zip(ref_hr) {
        let d = p - r;
        abs_sum += d.abs();
        sq_sum += d * d;
        pct_sum += d.abs() / r;
    }
    let pearson = if pred_hr.len() >= 2 {
        let pm = pred_hr.iter().sum::<f64>() / n;
        let rm = ref_hr.iter().sum::<f64>() / n;
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for (p, r) in pred_hr.iter().zip(ref_hr) {
            sxx += (p - pm) * (p - pm);
            syy += (r - rm) * (r - rm);
            sxy += (p - pm) * (r - rm);
        }
        if sxx == 0.0 || syy == 0.0 {
            None
        } else {
            Some(sxy / (sxx.sqrt() * syy.sqrt()))
        }
    } else {
        None
    };
    let snr = if snr_per_clip.is_empty() {
        None
    } else {
        Some(snr_per_clip.iter().sum::<f64>() / snr_per_clip.len() as f64)
    };
    Ok(Metrics {
        n_clips: pred_hr.len(),
        mae_bpm: abs_sum / n,
        rmse_bpm: (sq_sum / n).sqrt(),
        mape_pct: 100.0 * pct_sum / n,
        pearson,
        snr_db: snr,
    })
}

pub const METRICS_CSV_HEADER: &str =
    "split,domain,n_clips,mae_bpm,rmse_bpm,mape_pct,pearson,snr_db";

/// One CSV row under [`METRICS_CSV_HEADER`]; undefined values print as NA.
pub fn metrics_csv_row(split: &str, domain: &str, m: &Metrics) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
    format!(
        "{split},{domain},{},{},{},{},{},{}",
        m.n_clips,
        m.mae_bpm,
        m.rmse_bpm,
        m.mape_pct,
        opt(m.pearson),
        opt(m.snr_db)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sine(freq: f64, fs: f64, n: usize, amp: f64) -> Vec<f64> {
        (0..n)
            .map(|t| amp * (2.0 * std::f64::consts::PI * freq * t as f64 / fs).sin())
            .collect()
    }

    #[test]
    fn estimates_known_frequencies() {
        let fs = 30.0;
        for (freq, bpm) in [(1.2, 72.0), (1.0, 60.0)] {
            let wave = sine(freq, fs, 300, 1.0);
            let est = estimate_hr_fft(&wave, fs, HR_BAND_HZ).unwrap();
            assert!((est - bpm).abs() < 0.45, "{freq} Hz -> {est} bpm");
        }
    }

    #[test]
    fn ignores_out_of_band_power() {
        let fs = 30.0;
        let mut wave = sine(1.2, fs, 300, 1.0);
        for (x, y) in wave.iter_mut().zip(sine(5.0, fs, 300, 2.0)) {
            *x += y;
        }
        let est = estimate_hr_fft(&wave, fs, HR_BAND_HZ).unwrap();
        assert!((est - 72.0).abs() < 0.45, "{est}");
    }

    #[test]
    fn amplitude_invariant() {
        let fs = 30.0;
        let wave = sine(1.4, fs, 240, 0.3);
        let scaled: Vec<f64> = wave.iter().map(|x| 7.25 * x).collect();
        let a = estimate_hr_fft(&wave, fs, HR_BAND_HZ).unwrap();
        let b = estimate_hr_fft(&scaled, fs, HR_BAND_HZ).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ties_break_toward_lower_frequency() {
        // All-zero input makes every bin tie at zero power, so the lowest
        // in-band bin must win.
        let fs = 30.0;
        let wave = vec![0.0; 300];
        let est = estimate_hr_fft(&wave, fs, HR_BAND_HZ).unwrap();
        let n_fft = 4096.0;
        let first_bin = (0.75 * n_fft / fs).ceil() * fs / n_fft;
        assert!((est - 60.0 * first_bin).abs() < 1e-9);
    }

    #[test]
    fn estimator_rejects_bad_inputs() {
        assert!(matches!(
            estimate_hr_fft(&[0.0; 30], 30.0, HR_BAND_HZ),
            Err(Error::InvalidLength(_))
        ));
        assert!(matches!(
            estimate_hr_fft(&vec![0.0; 300], 30.0, [2.5, 0.75]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            estimate_hr_fft(&vec![0.0; 300], 30.0, [0.75, 20.0]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn snr_for_clean_sinusoid_is_high() {
        // 20 seconds of signal, so the window mainlobe sits well inside the
        // 0.1 Hz signal bands.
        let fs = 30.0;
        let wave = sine(1.2, fs, 600, 1.0);
        let snr = snr_db(&wave, 72.0, fs).unwrap();
        assert!(snr > 20.0, "{snr} dB");
    }

    #[test]
    fn snr_for_white_noise_is_negative_on_average() {
        let fs = 30.0;
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let mut total = 0.0;
        let trials = 50;
        for _ in 0..trials {
            let wave: Vec<f64> = (0..300).map(|_| rng.gen_range(-1.0..1.0)).collect();
            total += snr_db(&wave, 72.0, fs).unwrap();
        }
        let mean = total / trials as f64;
        assert!(mean < 0.0, "mean {mean}");
    }

    #[test]
    fn snr_balances_equal_power_interferer() {
        // Interferer at 3 Hz sits in the accounting band but far from both
        // harmonic windows of f_ref = 1 Hz.
        let fs = 30.0;
        let mut wave = sine(1.0, fs, 600, 1.0);
        for (x, y) in wave.iter_mut().zip(sine(3.0, fs, 600, 1.0)) {
            *x += y;
        }
        let snr = snr_db(&wave, 60.0, fs).unwrap();
        assert!(snr.abs() < 1.0, "{snr} dB");
    }

    #[test]
    fn snr_rejects_out_of_band_reference() {
        let wave = sine(1.2, 30.0, 300, 1.0);
        assert!(matches!(
            snr_db(&wave, 130.0, 30.0),
            Err(Error::OutOfBand(_))
        ));
        assert!(matches!(
            snr_db(&wave, 30.0, 30.0),
            Err(Error::OutOfBand(_))
        ));
    }

    #[test]
    fn metrics_known_values() {
        let m = compute_metrics(&[72.0, 68.0], &[70.0, 70.0], &[]).unwrap();
        assert_eq!(m.mae_bpm, 2.0);
        assert_eq!(m.rmse_bpm, 2.0);
        assert!((m.mape_pct - 100.0 * 2.0 / 70.0).abs() < 1e-12);
        assert_eq!(m.pearson, None); // constant reference
        assert_eq!(m.snr_db, None);

        let m = compute_metrics(&[60.0, 80.0, 100.0], &[60.0, 80.0, 100.0], &[3.0, 5.0]).unwrap();
        assert_eq!(m.mae_bpm, 0.0);
        assert_eq!(m.rmse_bpm, 0.0);
        assert_eq!(m.mape_pct, 0.0);
        assert!((m.pearson.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(m.snr_db, Some(4.0));
    }

    #[test]
    fn pearson_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pred: Vec<f64> = (0..40).map(|_| rng.gen_range(50.0..150.0)).collect();
        let reference: Vec<f64> = (0..40).map(|_| rng.gen_range(50.0..150.0)).collect();
        let m = compute_metrics(&pred, &reference, &[]).unwrap();
        let n = pred.len() as f64;
        let pm = pred.iter().sum::<f64>() / n;
        let rm = reference.iter().sum::<f64>() / n;
        let cov = pred
            .iter()
            .zip(&reference)
            .map(|(p, r)| (p - pm) * (r - rm))
            .sum::<f64>()
            / n;
        let sp = (pred.iter().map(|p| (p - pm) * (p - pm)).sum::<f64>() / n).sqrt();
        let sr = (reference.iter().map(|r| (r - rm) * (r - rm)).sum::<f64>() / n).sqrt();
        assert!((m.pearson.unwrap() - cov / (sp * sr)).abs() < 1e-12);
        assert!(m.mae_bpm <= m.rmse_bpm);
    }

    #[test]
    fn mae_never_exceeds_rmse() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..20 {
            let n = rng.gen_range(1..30);
            let pred: Vec<f64> = (0..n).map(|_| rng.gen_range(40.0..160.0)).collect();
            let reference: Vec<f64> = (0..n).map(|_| rng.gen_range(40.0..160.0)).collect();
            let m = compute_metrics(&pred, &reference, &[]).unwrap();
            assert!(m.mae_bpm <= m.rmse_bpm + 1e-12);
        }
    }

    #[test]
    fn metrics_reject_bad_inputs() {
        assert!(compute_metrics(&[], &[], &[]).is_err());
        assert!(compute_metrics(&[70.0], &[70.0, 71.0], &[]).is_err());
        assert!(compute_metrics(&[70.0], &[0.0], &[]).is_err());
    }

    #[test]
    fn csv_row_formats_na() {
        let m = compute_metrics(&[72.0], &[70.0], &[]).unwrap();
        let row = metrics_csv_row("test", "A", &m);
        assert_eq!(row, "test,A,1,2,2,2.857142857142857,NA,NA");
    }
}
