//! Microbenchmark comparing the FFT mixing path against the dense matvec on
//! identical inputs. Outputs disagreeing by more than 1e-8 abort the run, so
//! a timing row is also a correctness witness.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::toeplitz::{toeplitz_mix, toeplitz_mix_dense, ToeplitzKernel};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

pub const BENCH_CSV_HEADER: &str = "T,d,B,method,median_ns,reps";

/// How the mix was evaluated: circulant embedding or direct summation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Fft,
    Dense,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Fft => "fft",
            Method::Dense => "dense",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub t: usize,
    pub d: usize,
    pub b: usize,
    pub method: Method,
    pub median_ns: u128,
    pub reps: usize,
}

pub fn bench_csv_row(r: &BenchRecord) -> String {
    format!(
        "{},{},{},{},{},{}",
        r.t,
        r.d,
        r.b,
        r.method.as_str(),
        r.median_ns,
        r.reps
    )
}

pub fn write_bench_csv(records: &[BenchRecord], path: &Path) -> Result<()> {
    let mut out = String::from(BENCH_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&bench_csv_row(r));
        out.push('\n');
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Median of raw samples: the middle one, or the mean of the two middle ones.
fn median(mut samples: Vec<u128>) -> u128 {
    samples.sort_unstable();
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        (samples[n / 2 - 1] + samples[n / 2]) / 2
    }
}

fn random_input(t: usize, d: usize, b: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut q = Tensor::zeros(&[b, t, d]);
    for v in q.data_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    q
}

/// Times both mixing paths at each length. For every T the two methods see
/// the same kernel and input, their outputs are compared before any timing
/// is recorded, and each method gets two warmup evaluations.
pub fn run_bench(t_values: &[usize], d: usize, b: usize, reps: usize) -> Result<Vec<BenchRecord>> {
    if reps < 5 {
        return Err(Error::Config(format!("reps {reps} must be at least 5")));
    }
    if t_values.is_empty() || d == 0 || b == 0 {
        return Err(Error::Config(
            "bench needs at least one T and positive d, B".into(),
        ));
    }
    if t_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("t_values must be strictly ascending".into()));
    }

    let mut records = Vec::with_capacity(2 * t_values.len());
    for &t in t_values {
        let mut rng = ChaCha8Rng::seed_from_u64(t as u64);
        let kernel = ToeplitzKernel::init(t, None, &mut rng)?;
        let q = random_input(t, d, b, &mut rng);

        let out_fft = toeplitz_mix(&q, &kernel)?;
        let out_dense = toeplitz_mix_dense(&q, &kernel)?;
        let mut worst = 0.0f64;
        for (a, bb) in out_fft.data().iter().zip(out_dense.data()) {
            worst = worst.max((a - bb).abs());
        }
        if worst > 1e-8 {
            return Err(Error::Numeric(format!(
                "fft and dense mixing disagree by {worst:.3e} at T={t}"
            )));
        }

        for method in [Method::Fft, Method::Dense] {
            let eval = |q: &Tensor| match method {
                Method::Fft => toeplitz_mix(q, &kernel),
                Method::Dense => toeplitz_mix_dense(q, &kernel),
            };
            for _ in 0..2 {
                std::hint::black_box(eval(&q)?);
            }
            let mut samples = Vec::with_capacity(reps);
            for _ in 0..reps {
                let start = Instant::now();
                std::hint::black_box(eval(&q)?);
                samples.push(start.elapsed().as_nanos());
            }
            records.push(BenchRecord {
                t,
                d,
                b,
                method,
                median_ns: median(samples).max(1),
                reps,
            });
        }
    }
    Ok(records)
}

/// Least-squares slope of ln(median_ns) against ln(T) for one method.
/// Needs at least two distinct lengths.
pub fn log_log_slope(records: &[BenchRecord], method: Method) -> Result<f64> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.method == method)
        .map(|r| ((r.t as f64).ln(), (r.median_ns as f64).ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Config(format!(
            "slope for {} needs at least two lengths, got {}",
            method.as_str(),
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in &pts {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    if den == 0.0 {
        return Err(Error::Config("slope needs distinct lengths".into()));
    }
    Ok(num / den)
}
