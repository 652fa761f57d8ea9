//! Run configuration: one JSON document with `model`, `train`, `synth`, and
//! `eval` sections, every field optional and defaulted. Unknown keys are
//! rejected with the offending path named, and each command writes the fully
//! resolved document next to its outputs so a run can be replayed verbatim.

use serde::{Deserialize, Serialize};
use std::path::Path;
use totm::error::{Error, Result};
use totm::eval::{HR_BAND_HZ, SNR_WINDOW_HZ};
use totm::model::ModelConfig;
use totm::synth::SynthConfig;
use totm::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Frequency band searched for the heart-rate peak, Hz.
    pub band_hz: [f64; 2],
    /// Half-width of the SNR signal windows around f_ref and 2 f_ref, Hz.
    pub snr_window_hz: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            band_hz: HR_BAND_HZ,
            snr_window_hz: SNR_WINDOW_HZ,
        }
    }
}

impl EvalSettings {
    pub fn validate(&self, fs: f64) -> Result<()> {
        let [lo, hi] = self.band_hz;
        if !(0.0 < lo && lo < hi && hi < fs / 2.0) {
            return Err(Error::Config(format!(
                "eval.band_hz [{lo}, {hi}] must satisfy 0 < lo < hi < fs/2 = {}",
                fs / 2.0
            )));
        }
        if !(self.snr_window_hz > 0.0) {
            return Err(Error::Config(format!(
                "eval.snr_window_hz {} must be positive",
                self.snr_window_hz
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub eval: EvalSettings,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        self.eval.validate(self.synth.fs)?;
        if self.model.t_len != self.synth.t_len {
            return Err(Error::Config(format!(
                "model.t_len {} and synth.t_len {} must agree",
                self.model.t_len, self.synth.t_len
            )));
        }
        Ok(())
    }
}

/// Parses a config document, naming the path of the first offending key or
/// value. An absent path means all defaults.
pub fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    let cfg = match path {
        None => RunConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            parse_run_config(&text)?
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| Error::Config(format!("config at `{}`: {}", e.path(), e.inner())))
}

pub fn resolved_config_string(cfg: &RunConfig) -> Result<String> {
    let mut text = serde_json::to_string_pretty(cfg)?;
    text.push('\n');
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        assert_eq!(parse_run_config("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_key_is_rejected_with_its_path() {
        let err = parse_run_config(r#"{"model": {"dd": 16}}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("model.dd"), "{msg}");

        let err = parse_run_config(r#"{"synth": {"noise_sigmaa": 0.1}}"#).unwrap_err();
        assert!(err.to_string().contains("synth.noise_sigmaa"));

        let err = parse_run_config(r#"{"quality": 11}"#).unwrap_err();
        assert!(err.to_string().contains("quality"));
    }

    #[test]
    fn partial_overrides_keep_other_defaults() {
        let cfg = parse_run_config(r#"{"train": {"epochs": 2}, "model": {"d": 16}}"#).unwrap();
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.model.d, 16);
        assert_eq!(cfg.train.lr, TrainConfig::default().lr);
        assert_eq!(cfg.synth, SynthConfig::default());
    }

    #[test]
    fn resolved_document_round_trips() {
        let cfg = parse_run_config(r#"{"eval": {"snr_window_hz": 0.2}}"#).unwrap();
        let text = resolved_config_string(&cfg).unwrap();
        assert_eq!(parse_run_config(&text).unwrap(), cfg);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let cfg = parse_run_config(r#"{"model": {"t_len": 64}}"#).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
