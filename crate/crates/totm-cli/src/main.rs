//! One binary for the whole pipeline: synthetic data generation, training,
//! evaluation, correctness checks, and the mixing benchmark.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage or config error,
//! 3 training divergence, 4 checkpoint mismatch.

mod checks;
mod config;

use clap::{Parser, Subcommand, ValueEnum};
use config::{load_run_config, resolved_config_string, RunConfig};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use totm::bench::{log_log_slope, run_bench, write_bench_csv, Method};
use totm::checkpoint::{load_checkpoint, peek_config, save_checkpoint};
use totm::error::Error;
use totm::eval::metrics_csv_row;
use totm::eval::{compute_metrics, estimate_hr_fft, snr_db_windowed, METRICS_CSV_HEADER};
use totm::model::{model_forward_eval, param_count, ModelParams, Variant};
use totm::synth::{export_clip, make_dataset, Domain, Split, SynthClip};
use totm::train::{epoch_csv_row, train, write_epoch_csv, EPOCH_CSV_HEADER};

#[derive(Parser)]
#[command(name = "totm", version, about = "Toeplitz temporal mixer pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Copy, Clone, ValueEnum)]
enum DomainArg {
    #[value(name = "A")]
    A,
    #[value(name = "B")]
    B,
}

impl DomainArg {
    fn to_domain(self) -> Domain {
        match self {
            DomainArg::A => Domain::A,
            DomainArg::B => Domain::B,
        }
    }
    fn as_str(self) -> &'static str {
        match self {
            DomainArg::A => "A",
            DomainArg::B => "B",
        }
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl SplitArg {
    fn to_split(self) -> Split {
        match self {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
    fn as_str(self) -> &'static str {
        match self {
            SplitArg::Train => "train",
            SplitArg::Val => "val",
            SplitArg::Test => "test",
        }
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum VariantArg {
    #[value(name = "full")]
    Full,
    #[value(name = "local_only")]
    LocalOnly,
    #[value(name = "no_gate")]
    NoGate,
}

impl VariantArg {
    fn to_variant(self) -> Variant {
        match self {
            VariantArg::Full => Variant::Full,
            VariantArg::LocalOnly => Variant::LocalOnly,
            VariantArg::NoGate => Variant::NoGate,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic clips and export them as manifest + binary pairs.
    Synth {
        /// Run config document; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
        /// Number of clips.
        #[arg(long)]
        n: usize,
        #[arg(long)]
        domain: DomainArg,
        #[arg(long, default_value = "test")]
        split: SplitArg,
    },
    /// Generate train/val data and fit the model; writes checkpoint.json,
    /// epochs.csv, and resolved_config.json into the output directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides model.variant from the config.
        #[arg(long)]
        variant: Option<VariantArg>,
        /// Training clips (domain A).
        #[arg(long, default_value_t = 64)]
        n_train: usize,
        /// Validation clips (domain A).
        #[arg(long, default_value_t = 16)]
        n_val: usize,
    },
    /// Evaluate a checkpoint on a freshly generated test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        domain: DomainArg,
        /// Metrics CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Test clips to generate.
        #[arg(long, default_value_t = 32)]
        n: usize,
    },
    /// Run the oracle suites (FFT, convolution, Toeplitz equivalence,
    /// gradient checks, loss identities, parameter count).
    Check,
    /// Time FFT vs dense mixing over power-of-two lengths and report
    /// log-log slopes.
    Bench {
        #[arg(long, default_value_t = 256)]
        t_min: usize,
        #[arg(long, default_value_t = 1024)]
        t_max: usize,
        /// Timing CSV path.
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value_t = 32)]
        d: usize,
        #[arg(long, default_value_t = 4)]
        b: usize,
        #[arg(long, default_value_t = 5)]
        reps: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Cmd::Synth {
            config,
            out,
            n,
            domain,
            split,
        } => cmd_synth(config.as_deref(), &out, n, domain, split),
        Cmd::Train {
            config,
            out,
            variant,
            n_train,
            n_val,
        } => cmd_train(config.as_deref(), &out, variant, n_train, n_val),
        Cmd::Eval {
            checkpoint,
            config,
            domain,
            out,
            n,
        } => cmd_eval(&checkpoint, config.as_deref(), domain, &out, n),
        Cmd::Check => return cmd_check(),
        Cmd::Bench {
            t_min,
            t_max,
            csv,
            d,
            b,
            reps,
        } => cmd_bench(t_min, t_max, &csv, d, b, reps),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) => 1,
        Error::Diverged { .. } => 3,
        Error::Checkpoint(_) | Error::CheckpointShape { .. } => 4,
        _ => 2,
    }
}

fn write_resolved_config(cfg: &RunConfig, dir: &Path) -> Result<(), Error> {
    std::fs::write(
        dir.join("resolved_config.json"),
        resolved_config_string(cfg)?,
    )?;
    Ok(())
}

fn cmd_synth(
    config: Option<&Path>,
    out: &Path,
    n: usize,
    domain: DomainArg,
    split: SplitArg,
) -> Result<(), Error> {
    let cfg = load_run_config(config)?;
    std::fs::create_dir_all(out)?;
    write_resolved_config(&cfg, out)?;
    let clips = make_dataset(&cfg.synth, n, split.to_split(), domain.to_domain())?;
    for (i, clip) in clips.iter().enumerate() {
        let stem = format!("clip_{}_{}_{i:04}", split.as_str(), domain.as_str());
        export_clip(clip, out, &stem)?;
    }
    println!(
        "wrote {n} clips (split={}, domain={}) to {}",
        split.as_str(),
        domain.as_str(),
        out.display()
    );
    Ok(())
}

fn cmd_train(
    config: Option<&Path>,
    out: &Path,
    variant: Option<VariantArg>,
    n_train: usize,
    n_val: usize,
) -> Result<(), Error> {
    let mut cfg = load_run_config(config)?;
    if let Some(v) = variant {
        cfg.model.variant = v.to_variant();
    }
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    write_resolved_config(&cfg, out)?;

    let train_clips = make_dataset(&cfg.synth, n_train, Split::Train, Domain::A)?;
    let val_clips = make_dataset(&cfg.synth, n_val, Split::Val, Domain::A)?;
    let counts = param_count(&cfg.model);
    println!(
        "training {:?} variant: {} parameters ({} per block, {} in each mixing kernel)",
        cfg.model.variant, counts.total, counts.per_block, counts.toeplitz_per_block
    );
    println!("{EPOCH_CSV_HEADER}");
    let outcome = train(
        &cfg.model,
        &cfg.train,
        &train_clips,
        &val_clips,
        cfg.synth.fs,
        |record| println!("{}", epoch_csv_row(record)),
    )?;
    write_epoch_csv(&outcome.log, &out.join("epochs.csv"))?;
    save_checkpoint(&outcome.best, &out.join("checkpoint.json"))?;
    println!(
        "best epoch {} of {}; checkpoint written to {}",
        outcome.best_epoch,
        cfg.train.epochs,
        out.join("checkpoint.json").display()
    );
    Ok(())
}

fn cmd_eval(
    checkpoint: &Path,
    config: Option<&Path>,
    domain: DomainArg,
    out: &Path,
    n: usize,
) -> Result<(), Error> {
    let cfg = load_run_config(config)?;
    let text = std::fs::read_to_string(checkpoint)?;
    let ck_config = peek_config(&text)?;
    if ck_config != cfg.model {
        return Err(Error::Checkpoint(
            "checkpoint model config does not match the run config".into(),
        ));
    }
    let params = load_checkpoint(checkpoint)?;

    let clips = make_dataset(&cfg.synth, n, Split::Test, domain.to_domain())?;
    let (pred_hr, ref_hr, snrs) = predict_hr(&params, &clips, &cfg)?;
    let metrics = compute_metrics(&pred_hr, &ref_hr, &snrs)?;
    let row = metrics_csv_row("test", domain.as_str(), &metrics);
    let mut text = String::from(METRICS_CSV_HEADER);
    text.push('\n');
    text.push_str(&row);
    text.push('\n');
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(out, &text)?;
    println!("{METRICS_CSV_HEADER}");
    println!("{row}");
    Ok(())
}

/// Eval-mode HR per clip, plus SNR for the clips whose reference rate admits
/// both harmonics inside the accounting band.
fn predict_hr(
    params: &ModelParams,
    clips: &[SynthClip],
    cfg: &RunConfig,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), Error> {
    let mut pred_hr = Vec::with_capacity(clips.len());
    let mut ref_hr = Vec::with_capacity(clips.len());
    let mut snrs = Vec::new();
    for chunk in clips.chunks(cfg.train.batch_size) {
        let refs: Vec<&SynthClip> = chunk.iter().collect();
        let (frames, _) = totm::train::stack_batch(&refs)?;
        let pred = model_forward_eval(&frames, params)?;
        let t = chunk[0].bvp.len();
        for (i, clip) in chunk.iter().enumerate() {
            let wave = &pred.data()[i * t..(i + 1) * t];
            pred_hr.push(estimate_hr_fft(wave, cfg.synth.fs, cfg.eval.band_hz)?);
            ref_hr.push(clip.hr_bpm);
            match snr_db_windowed(wave, clip.hr_bpm, cfg.synth.fs, cfg.eval.snr_window_hz) {
                Ok(s) => snrs.push(s),
                Err(Error::OutOfBand(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok((pred_hr, ref_hr, snrs))
}

fn cmd_check() -> ExitCode {
    let mut failed = Vec::new();
    for suite in checks::SUITES {
        match (suite.run)() {
            Ok(()) => println!("check {}: pass", suite.name),
            Err(msg) => {
                println!("check {}: FAIL ({msg})", suite.name);
                failed.push(suite.name);
            }
        }
    }
    if failed.is_empty() {
        println!("all {} suites passed", checks::SUITES.len());
        ExitCode::SUCCESS
    } else {
        eprintln!("failed suites: {}", failed.join(", "));
        ExitCode::from(1)
    }
}

fn cmd_bench(
    t_min: usize,
    t_max: usize,
    csv: &Path,
    d: usize,
    b: usize,
    reps: usize,
) -> Result<(), Error> {
    if t_min < 2 || t_min > t_max {
        return Err(Error::Config(format!(
            "need 2 <= t-min <= t-max, got {t_min}..{t_max}"
        )));
    }
    let mut t_values = Vec::new();
    let mut t = 1usize;
    while t < t_min {
        t *= 2;
    }
    while t <= t_max {
        t_values.push(t);
        t *= 2;
    }
    if t_values.is_empty() {
        return Err(Error::Config(format!(
            "no power of two lies in [{t_min}, {t_max}]"
        )));
    }
    let records = run_bench(&t_values, d, b, reps)?;
    if let Some(dir) = csv.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_bench_csv(&records, csv)?;
    println!(
        "timed {} lengths ({}..{}) at d={d}, B={b}; csv written to {}",
        t_values.len(),
        t_values[0],
        t_values[t_values.len() - 1],
        csv.display()
    );
    if t_values.len() >= 2 {
        let dense = log_log_slope(&records, Method::Dense)?;
        let fft = log_log_slope(&records, Method::Fft)?;
        eprintln!("log-log slope over T: dense {dense:.3}, fft {fft:.3}");
    }
    Ok(())
}
