//! Seeded synthetic data: quasi-periodic blood-volume-pulse waveforms and
//! small rendered video clips whose central region carries the pulse in the
//! green (and weakly red) channel, under controllable illumination drift,
//! pixel noise, and integer jitter. Every clip is a pure function of
//! (seed, split, domain, index).

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub fs: f64,
    pub t_len: usize,
    pub height: usize,
    pub width: usize,
    /// Heart-rate interval in bpm; clips draw a start value inside it and
    /// the random walk is clamped to it.
    pub hr_range: [f64; 2],
    /// Maximum drift of the instantaneous HR, in bpm per second.
    pub hr_drift: f64,
    pub harmonics: usize,
    /// Amplitude of harmonic h is harmonic_falloff^(h-1).
    pub harmonic_falloff: f64,
    /// Green-channel pulse amplitude inside the face region.
    pub modulation_amp: f64,
    pub illum_drift_amp: f64,
    pub noise_sigma: f64,
    /// Maximum region offset per frame, in whole pixels.
    pub motion_jitter: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            fs: 30.0,
            t_len: 180,
            height: 12,
            width: 12,
            hr_range: [45.0, 150.0],
            hr_drift: 0.5,
            harmonics: 2,
            harmonic_falloff: 0.3,
            modulation_amp: 0.05,
            illum_drift_amp: 0.01,
            noise_sigma: 0.01,
            motion_jitter: 0,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fs <= 0.0 || self.t_len == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config(
                "fs, t_len, height, and width must be positive".into(),
            ));
        }
        let [lo, hi] = self.hr_range;
        if !(45.0 <= lo && lo <= hi && hi <= 150.0) {
            return Err(Error::Config(format!(
                "hr_range [{lo}, {hi}] must lie inside [45, 150] bpm"
            )));
        }
        // The clip must cover at least three periods of the slowest pulse.
        let duration = self.t_len as f64 / self.fs;
        if duration < 3.0 * 60.0 / lo {
            return Err(Error::Config(format!(
                "{duration} s clip covers fewer than 3 periods at {lo} bpm"
            )));
        }
        if self.harmonics == 0 {
            return Err(Error::Config("harmonics must be at least 1".into()));
        }
        if self.hr_drift < 0.0
            || self.harmonic_falloff < 0.0
            || self.modulation_amp < 0.0
            || self.illum_drift_amp < 0.0
            || self.noise_sigma < 0.0
        {
            return Err(Error::Config("synth amplitudes must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn id(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    A,
    B,
}

impl Domain {
    fn id(self) -> u64 {
        match self {
            Domain::A => 0,
            Domain::B => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    /// T x 3 x H x W pixel values.
    pub frames: Tensor,
    /// Zero-mean, unit-variance reference waveform.
    pub bvp: Vec<f64>,
    /// Mean instantaneous heart rate over the clip, bpm.
    pub hr_bpm: f64,
}

/// Quasi-periodic pulse: a random-walk instantaneous HR (clamped to
/// hr_range), phase integration, harmonics with geometric falloff, then
/// per-clip standardization to zero mean and unit variance.
pub fn generate_bvp<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> Result<(Vec<f64>, f64)> {
    cfg.validate()?;
    let [lo, hi] = cfg.hr_range;
    let mut hr = if lo < hi { rng.gen_range(lo..hi) } else { lo };
    let phases: Vec<f64> = (0..cfg.harmonics)
        .map(|_| rng.gen_range(0.0..2.0 * std::f64::consts::PI))
        .collect();
    let step = cfg.hr_drift / cfg.fs;
    let mut phase = 0.0;
    let mut wave = Vec::with_capacity(cfg.t_len);
    let mut hr_sum = 0.0;
    for _ in 0..cfg.t_len {
        if step > 0.0 {
            hr = (hr + rng.gen_range(-step..step)).clamp(lo, hi);
        }
        hr_sum += hr;
        phase += 2.0 * std::f64::consts::PI * (hr / 60.0) / cfg.fs;
        let mut x = 0.0;
        for (h, ph) in phases.iter().enumerate() {
            let amp = cfg.harmonic_falloff.powi(h as i32);
            x += amp * ((h + 1) as f64 * phase + ph).sin();
        }
        wave.push(x);
    }
    let n = cfg.t_len as f64;
    let mean = wave.iter().sum::<f64>() / n;
    let var = wave.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    for x in &mut wave {
        *x = (*x - mean) / scale;
    }
    Ok((wave, hr_sum / n))
}

/// Central region covering the middle half of the frame in each dimension,
/// as (y0, y1, x0, x1) before jitter.
fn base_region(h: usize, w: usize) -> (usize, usize, usize, usize) {
    (h / 4, h - h / 4, w / 4, w - w / 4)
}

/// Renders the clip: static base color, pulse-modulated central region
/// (green plus 0.3x red), global illumination drift, Gaussian pixel noise,
/// and optional integer jitter of the region.
pub fn render_frames<R: Rng>(bvp: &[f64], cfg: &SynthConfig, rng: &mut R) -> Result<Tensor> {
    cfg.validate()?;
    if bvp.len() != cfg.t_len {
        return Err(Error::ShapeMismatch(format!(
            "waveform of {} samples vs t_len {}",
            bvp.len(),
            cfg.t_len
        )));
    }
    let (t, h, w) = (cfg.t_len, cfg.height, cfg.width);
    let base = [
        rng.gen_range(0.55..0.75),
        rng.gen_range(0.35..0.55),
        rng.gen_range(0.25..0.45),
    ];
    let illum_freq = rng.gen_range(0.05..0.15);
    let illum_phase = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
    let noise = if cfg.noise_sigma > 0.0 {
        Some(Normal::new(0.0, cfg.noise_sigma).expect("validated sigma"))
    } else {
        None
    };
    let (y0, y1, x0, x1) = base_region(h, w);
    let j = cfg.motion_jitter as i64;

    let mut frames = Tensor::zeros(&[t, 3, h, w]);
    let fd = frames.data_mut();
    for ti in 0..t {
        let illum = cfg.illum_drift_amp
            * (2.0 * std::f64::consts::PI * illum_freq * ti as f64 / cfg.fs + illum_phase).sin();
        let (dy, dx) = if j > 0 {
            (rng.gen_range(-j..=j), rng.gen_range(-j..=j))
        } else {
            (0, 0)
        };
        let ry0 = (y0 as i64 + dy).clamp(0, (h - (y1 - y0)) as i64) as usize;
        let rx0 = (x0 as i64 + dx).clamp(0, (w - (x1 - x0)) as i64) as usize;
        let (ry1, rx1) = (ry0 + (y1 - y0), rx0 + (x1 - x0));
        let pulse = cfg.modulation_amp * bvp[ti];
        for c in 0..3 {
            let mod_gain = match c {
                0 => 0.3,
                1 => 1.0,
                _ => 0.0,
            };
            for y in 0..h {
                for x in 0..w {
                    let mut v = base[c] + illum;
                    if y >= ry0 && y < ry1 && x >= rx0 && x < rx1 {
                        v += mod_gain * pulse;
                    }
                    if let Some(dist) = &noise {
                        v += dist.sample(rng);
                    }
                    fd[((ti * 3 + c) * h + y) * w + x] = v;
                }
            }
        }
    }
    Ok(frames)
}

/// Domain B doubles the nuisance statistics relative to A and always
/// jitters by at least one pixel.
fn domain_config(cfg: &SynthConfig, domain: Domain) -> SynthConfig {
    match domain {
        Domain::A => cfg.clone(),
        Domain::B => SynthConfig {
            noise_sigma: 2.0 * cfg.noise_sigma,
            illum_drift_amp: 2.0 * cfg.illum_drift_amp,
            motion_jitter: cfg.motion_jitter.max(1),
            ..cfg.clone()
        },
    }
}

/// Independent RNG stream per clip, so datasets are order-independent and
/// splits never share a stream.
fn clip_rng(seed: u64, split: Split, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&split.id().to_le_bytes());
    key[16..24].copy_from_slice(&domain.id().to_le_bytes());
    key[24..32].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

pub fn make_clip(cfg: &SynthConfig, split: Split, domain: Domain, index: u64) -> Result<SynthClip> {
    let dcfg = domain_config(cfg, domain);
    let mut rng = clip_rng(cfg.seed, split, domain, index);
    let (bvp, hr_bpm) = generate_bvp(&dcfg, &mut rng)?;
    let frames = render_frames(&bvp, &dcfg, &mut rng)?;
    Ok(SynthClip {
        frames,
        bvp,
        hr_bpm,
    })
}

pub fn make_dataset(
    cfg: &SynthConfig,
    n_clips: usize,
    split: Split,
    domain: Domain,
) -> Result<Vec<SynthClip>> {
    if n_clips == 0 {
        return Err(Error::Config("a dataset needs at least one clip".into()));
    }
    (0..n_clips as u64)
        .map(|i| make_clip(cfg, split, domain, i))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct ClipManifest {
    frames_shape: Vec<usize>,
    bvp_len: usize,
    hr_bpm: f64,
    dtype: String,
    byte_order: String,
    bin_file: String,
}

/// Writes `<stem>.json` (manifest) and `<stem>.bin` (frames then bvp as
/// little-endian f64) into `dir`.
pub fn export_clip(clip: &SynthClip, dir: &Path, stem: &str) -> Result<()> {
    let manifest = ClipManifest {
        frames_shape: clip.frames.shape().to_vec(),
        bvp_len: clip.bvp.len(),
        hr_bpm: clip.hr_bpm,
        dtype: "f64".into(),
        byte_order: "little".into(),
        bin_file: format!("{stem}.bin"),
    };
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    let mut bytes = Vec::with_capacity(8 * (clip.frames.numel() + clip.bvp.len()));
    for v in clip.frames.data().iter().chain(&clip.bvp) {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(dir.join(format!("{stem}.bin")), bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{estimate_hr_fft, HR_BAND_HZ};
    use crate::fft::power_spectrum;

    fn quiet_cfg() -> SynthConfig {
        SynthConfig {
            modulation_amp: 0.0,
            illum_drift_amp: 0.0,
            noise_sigma: 0.0,
            motion_jitter: 0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn bvp_is_standardized() {
        let cfg = SynthConfig::default();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (bvp, hr) = generate_bvp(&cfg, &mut rng).unwrap();
            let n = bvp.len() as f64;
            let mean = bvp.iter().sum::<f64>() / n;
            let var = bvp.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "var {var}");
            assert!((45.0..=150.0).contains(&hr), "hr {hr}");
        }
    }

    #[test]
    fn bvp_is_deterministic() {
        let cfg = SynthConfig::default();
        let a = generate_bvp(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = generate_bvp(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn drift_free_single_harmonic_is_a_pure_tone() {
        let cfg = SynthConfig {
            hr_range: [72.0, 72.0],
            hr_drift: 0.0,
            harmonics: 1,
            ..SynthConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (bvp, hr) = generate_bvp(&cfg, &mut rng).unwrap();
        assert_eq!(hr, 72.0);
        // Dominant bin of the zero-padded spectrum sits at 1.2 Hz.
        let spec = power_spectrum(&bvp, 4096).unwrap();
        let peak = spec
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let freq = peak as f64 * cfg.fs / 4096.0;
        assert!((freq - 1.2).abs() < 0.02, "peak at {freq} Hz");
    }

    #[test]
    fn estimator_recovers_generated_hr() {
        let cfg = SynthConfig::default();
        for seed in 0..1000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (bvp, hr) = generate_bvp(&cfg, &mut rng).unwrap();
            let est = estimate_hr_fft(&bvp, cfg.fs, HR_BAND_HZ).unwrap();
            assert!(
                (est - hr).abs() <= 1.5,
                "seed {seed}: generated {hr} bpm, estimated {est} bpm"
            );
        }
    }

    #[test]
    fn static_config_renders_identical_frames() {
        let cfg = quiet_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (bvp, _) = generate_bvp(&cfg, &mut rng).unwrap();
        let frames = render_frames(&bvp, &cfg, &mut rng).unwrap();
        let per_frame = 3 * cfg.height * cfg.width;
        let first = &frames.data()[..per_frame];
        for t in 1..cfg.t_len {
            assert_eq!(&frames.data()[t * per_frame..(t + 1) * per_frame], first);
        }
    }

    #[test]
    fn region_green_mean_tracks_bvp() {
        let cfg = SynthConfig {
            illum_drift_amp: 0.0,
            noise_sigma: 0.0,
            motion_jitter: 0,
            ..SynthConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (bvp, _) = generate_bvp(&cfg, &mut rng).unwrap();
        let frames = render_frames(&bvp, &cfg, &mut rng).unwrap();
        let (h, w) = (cfg.height, cfg.width);
        let (y0, y1, x0, x1) = super::base_region(h, w);
        let mut series = Vec::with_capacity(cfg.t_len);
        for t in 0..cfg.t_len {
            let mut acc = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    acc += frames.data()[((t * 3 + 1) * h + y) * w + x];
                }
            }
            series.push(acc / ((y1 - y0) * (x1 - x0)) as f64);
        }
        let n = series.len() as f64;
        let sm = series.iter().sum::<f64>() / n;
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for (s, b) in series.iter().zip(&bvp) {
            sxx += (s - sm) * (s - sm);
            sxy += (s - sm) * b;
            syy += b * b;
        }
        let corr = sxy / (sxx * syy).sqrt();
        assert!(corr > 0.999, "correlation {corr}");
    }

    #[test]
    fn rendering_is_deterministic() {
        let cfg = SynthConfig {
            motion_jitter: 1,
            ..SynthConfig::default()
        };
        let make = || {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let (bvp, _) = generate_bvp(&cfg, &mut rng).unwrap();
            render_frames(&bvp, &cfg, &mut rng).unwrap()
        };
        assert_eq!(make().data(), make().data());
    }

    #[test]
    fn datasets_are_deterministic_and_split_disjoint() {
        let cfg = SynthConfig {
            t_len: 180,
            ..SynthConfig::default()
        };
        let a = make_dataset(&cfg, 4, Split::Train, Domain::A).unwrap();
        let b = make_dataset(&cfg, 4, Split::Train, Domain::A).unwrap();
        assert_eq!(a, b);

        // Hash every clip's frames; no collision across splits or indices.
        let mut hashes = std::collections::BTreeSet::new();
        for split in [Split::Train, Split::Val, Split::Test] {
            for clip in make_dataset(&cfg, 4, split, Domain::A).unwrap() {
                let mut acc = 0xcbf29ce484222325u64;
                for v in clip.frames.data() {
                    acc = (acc ^ v.to_bits()).wrapping_mul(0x100000001b3);
                }
                assert!(hashes.insert(acc), "duplicate clip across splits");
            }
        }
        assert_eq!(hashes.len(), 12);
    }

    #[test]
    fn domain_b_has_higher_temporal_variance() {
        let cfg = SynthConfig::default();
        let a = make_dataset(&cfg, 4, Split::Test, Domain::A).unwrap();
        let b = make_dataset(&cfg, 4, Split::Test, Domain::B).unwrap();
        let mean_temporal_var = |clip: &SynthClip| {
            let t = cfg.t_len;
            let pixels = 3 * cfg.height * cfg.width;
            let mut total = 0.0;
            for p in 0..pixels {
                let series: Vec<f64> = (0..t)
                    .map(|ti| clip.frames.data()[ti * pixels + p])
                    .collect();
                let mean = series.iter().sum::<f64>() / t as f64;
                total += series.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / t as f64;
            }
            total / pixels as f64
        };
        for (ca, cb) in a.iter().zip(&b) {
            assert!(
                mean_temporal_var(cb) > mean_temporal_var(ca),
                "domain B should be noisier"
            );
        }
    }

    #[test]
    fn export_writes_manifest_and_binary() {
        let cfg = SynthConfig {
            t_len: 180,
            height: 4,
            width: 4,
            ..SynthConfig::default()
        };
        let clip = make_clip(&cfg, Split::Test, Domain::A, 0).unwrap();
        let dir = std::env::temp_dir().join("totm_export_test");
        let _ = std::fs::remove_dir_all(&dir);
        export_clip(&clip, &dir, "clip_000").unwrap();

        let manifest: ClipManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join("clip_000.json")).unwrap())
                .unwrap();
        assert_eq!(manifest.frames_shape, vec![180, 3, 4, 4]);
        assert_eq!(manifest.bvp_len, 180);
        let bytes = std::fs::read(dir.join("clip_000.bin")).unwrap();
        assert_eq!(bytes.len(), 8 * (clip.frames.numel() + 180));
        let back = f64::from_le_bytes(bytes[..8].try_into().unwrap());
        assert_eq!(back, clip.frames.data()[0]);
        let tail_start = 8 * clip.frames.numel();
        let bvp0 = f64::from_le_bytes(bytes[tail_start..tail_start + 8].try_into().unwrap());
        assert_eq!(bvp0, clip.bvp[0]);

        // Re-export is byte-identical.
        let json1 = std::fs::read(dir.join("clip_000.json")).unwrap();
        export_clip(&clip, &dir, "clip_000").unwrap();
        assert_eq!(std::fs::read(dir.join("clip_000.json")).unwrap(), json1);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn config_validation_rejects_bad_ranges() {
        assert!(SynthConfig {
            hr_range: [30.0, 150.0],
            ..SynthConfig::default()
        }
        .validate()
        .is_err());
        assert!(SynthConfig {
            t_len: 60,
            ..SynthConfig::default()
        }
        .validate()
        .is_err());
        assert!(SynthConfig::default().validate().is_ok());
    }
}
