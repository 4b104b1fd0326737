//! Synthetic decay signals, calibrated noise, and Monte Carlo batches.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::{gauss_rule, psi_into};
use crate::leastsq::{fourier_of_expansion, HermiteExpansion};
use crate::measures::MeasureKind;
use crate::pipeline::{run_l2f, run_nlls_baseline, EstimationResult, L2FConfig, Method, SignalSource};

/// Multiexponential decay `Σ A_k e^{−t/T₂k}` on an equispaced grid over `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalModel {
    pub amplitudes: Vec<f64>,
    /// Decay times in ms, ascending.
    pub t2_ms: Vec<f64>,
    pub duration_ms: f64,
    pub sample_count: usize,
}

impl SignalModel {
    pub fn new(amplitudes: Vec<f64>, t2_ms: Vec<f64>, duration_ms: f64, sample_count: usize) -> Result<Self> {
        if amplitudes.len() != t2_ms.len() {
            return Err(Error::Shape {
                what: "amplitudes vs decay times",
                expected: t2_ms.len(),
                actual: amplitudes.len(),
            });
        }
        if amplitudes.is_empty() {
            return Err(Error::Config("model needs at least one component".into()));
        }
        if t2_ms.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(Error::Config(format!("decay times must be positive: {t2_ms:?}")));
        }
        if amplitudes.iter().any(|a| !a.is_finite()) {
            return Err(Error::Config(format!("amplitudes must be finite: {amplitudes:?}")));
        }
        if !(duration_ms > 0.0) || sample_count < 2 {
            return Err(Error::Config("need positive duration and at least two samples".into()));
        }
        let mut pairs: Vec<(f64, f64)> = t2_ms.into_iter().zip(amplitudes).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (t2_ms, amplitudes) = pairs.into_iter().unzip();
        Ok(Self {
            amplitudes,
            t2_ms,
            duration_ms,
            sample_count,
        })
    }

    /// Two-component model on the configuration's acquisition grid.
    pub fn biexp(a1: f64, a2: f64, t21: f64, t22: f64, cfg: &L2FConfig) -> Result<Self> {
        Self::new(vec![a1, a2], vec![t21, t22], cfg.duration_ms, cfg.sample_count)
    }

    pub fn components(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn times(&self) -> Vec<f64> {
        let last = (self.sample_count - 1) as f64;
        (0..self.sample_count).map(|i| self.duration_ms * i as f64 / last).collect()
    }

    pub fn eval(&self, t_ms: f64) -> f64 {
        self.amplitudes
            .iter()
            .zip(&self.t2_ms)
            .map(|(a, t2)| a * (-t_ms / t2).exp())
            .sum()
    }

    pub fn synth(&self) -> Vec<f64> {
        self.times().into_iter().map(|t| self.eval(t)).collect()
    }

    /// Ground truth as `[A₁, A₂, T₂₁, T₂₂]` for two-component models.
    pub fn truth(&self) -> Option<[f64; 4]> {
        (self.components() == 2).then(|| [self.amplitudes[0], self.amplitudes[1], self.t2_ms[0], self.t2_ms[1]])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Initial signal value over noise standard deviation; infinite means noiseless.
    #[serde(with = "snr_serde")]
    pub snr: f64,
    pub seed: u64,
    pub realizations: usize,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.snr > 0.0) {
            return Err(Error::Config(format!("SNR must be positive, got {}", self.snr)));
        }
        Ok(())
    }
}

/// SNR as a JSON number, or the string `"inf"` for noiseless runs.
pub mod snr_serde {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(snr: &f64, s: S) -> Result<S::Ok, S::Error> {
        if snr.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*snr)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) => parse(&t).map_err(de::Error::custom),
        }
    }

    /// Parses a number or `inf`/`infinity` (any case).
    pub fn parse(text: &str) -> Result<f64, String> {
        let t = text.trim();
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
            return Ok(f64::INFINITY);
        }
        t.parse::<f64>().map_err(|_| format!("invalid SNR '{t}' (expected a number or 'inf')"))
    }
}

/// Independent generator for `(seed, realization, stream)`.
pub fn noise_rng(seed: u64, realization: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(realization));
    rng.set_stream(stream);
    rng
}

/// Seed for the random least-squares start of a realization, decorrelated from its noise.
pub fn init_seed(seed: u64, realization: u64) -> u64 {
    seed.wrapping_add(realization) ^ 0x9E37_79B9_7F4A_7C15
}

pub fn gaussian_noise(std: f64, count: usize, seed: u64, realization: u64, stream: u64) -> Vec<f64> {
    if std == 0.0 {
        return vec![0.0; count];
    }
    let normal = Normal::new(0.0, std).expect("finite positive std");
    let mut rng = noise_rng(seed, realization, stream);
    (0..count).map(|_| normal.sample(&mut rng)).collect()
}

/// Adds i.i.d. Gaussian noise with std `samples[0]/snr`.
pub fn add_noise(samples: &[f64], spec: &NoiseSpec, realization: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    if spec.snr.is_infinite() || samples.is_empty() {
        return Ok(samples.to_vec());
    }
    let std = samples[0].abs() / spec.snr;
    let noise = gaussian_noise(std, samples.len(), spec.seed, realization, 0);
    Ok(samples.iter().zip(noise).map(|(s, e)| s + e).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationRecord {
    pub index: u64,
    pub method: Method,
    pub estimate: Option<EstimationResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamStats {
    pub mean: f64,
    /// Sample standard deviation (divisor `M − 1`; zero when `M = 1`).
    pub stdev: f64,
    pub rmse: f64,
    pub bias: f64,
}

impl ParamStats {
    pub fn from_samples(values: &[f64], truth: f64) -> Self {
        let count = values.len();
        if count == 0 {
            return Self {
                mean: f64::NAN,
                stdev: f64::NAN,
                rmse: f64::NAN,
                bias: f64::NAN,
            };
        }
        // Welford's update: exact for constant input.
        let (mut mean, mut ss) = (0.0, 0.0);
        for (i, v) in values.iter().enumerate() {
            let d = v - mean;
            mean += d / (i + 1) as f64;
            ss += d * (v - mean);
        }
        let stdev = if count > 1 { (ss / (count - 1) as f64).sqrt() } else { 0.0 };
        let rmse = (values.iter().map(|v| (v - truth) * (v - truth)).sum::<f64>() / count as f64).sqrt();
        Self {
            mean,
            stdev,
            rmse,
            bias: mean - truth,
        }
    }
}

pub const PARAM_NAMES: [&str; 4] = ["A1", "A2", "T21", "T22"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub method: Method,
    #[serde(with = "snr_serde")]
    pub snr: f64,
    pub realizations: usize,
    pub params: BTreeMap<String, ParamStats>,
    /// Realizations with no estimate at all (excluded from the moments).
    pub failure_count: usize,
    /// Estimates whose least-squares stage hit its iteration or damping limit (included).
    pub nonconverged_count: usize,
}

impl BatchStats {
    pub fn param(&self, name: &str) -> Option<&ParamStats> {
        self.params.get(name)
    }

    pub fn from_records(records: &[RealizationRecord], truth: [f64; 4], method: Method, snr: f64) -> Self {
        let ok: Vec<&EstimationResult> = records.iter().filter_map(|r| r.estimate.as_ref()).collect();
        let params = PARAM_NAMES
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let values: Vec<f64> = ok.iter().map(|e| e.values()[k]).collect();
                (name.to_string(), ParamStats::from_samples(&values, truth[k]))
            })
            .collect();
        Self {
            method,
            snr,
            realizations: records.len(),
            params,
            failure_count: records.len() - ok.len(),
            nonconverged_count: ok.iter().filter(|e| !e.converged).count(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchReport {
    pub model: SignalModel,
    pub noise: NoiseSpec,
    pub stats: BatchStats,
    pub records: Vec<RealizationRecord>,
    pub wall_seconds: f64,
}

impl BatchReport {
    /// One row per realization.
    pub fn write_records_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "realization", "method", "snr", "ok", "A1", "A2", "T21", "T22", "converged", "iterations", "residual_norm",
            "error",
        ])?;
        for r in &self.records {
            let snr = self.noise.snr.to_string();
            match &r.estimate {
                Some(e) => w.write_record([
                    r.index.to_string(),
                    r.method.to_string(),
                    snr,
                    "true".into(),
                    e.a1.to_string(),
                    e.a2.to_string(),
                    e.t21.to_string(),
                    e.t22.to_string(),
                    e.converged.to_string(),
                    e.iterations.to_string(),
                    e.residual_norm.to_string(),
                    String::new(),
                ])?,
                None => w.write_record([
                    r.index.to_string(),
                    r.method.to_string(),
                    snr,
                    "false".into(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    r.error.clone().unwrap_or_default(),
                ])?,
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub const SUMMARY_HEADER: [&str; 18] = [
    "method", "snr", "realizations", "failures", "nonconverged", "wall_seconds", "A1_mean", "A1_stdev", "A1_rmse",
    "A2_mean", "A2_stdev", "A2_rmse", "T21_mean", "T21_stdev", "T21_rmse", "T22_mean", "T22_stdev", "T22_rmse",
];

/// One summary row per batch.
pub fn write_summary_csv<W: Write>(reports: &[BatchReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SUMMARY_HEADER)?;
    for r in reports {
        let s = &r.stats;
        let mut row = vec![
            s.method.to_string(),
            s.snr.to_string(),
            s.realizations.to_string(),
            s.failure_count.to_string(),
            s.nonconverged_count.to_string(),
            format!("{:.3}", r.wall_seconds),
        ];
        for name in PARAM_NAMES {
            let p = s.params[name];
            row.extend([p.mean.to_string(), p.stdev.to_string(), p.rmse.to_string()]);
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn run_one(model: &SignalModel, spec: &NoiseSpec, method: Method, cfg: &L2FConfig, index: u64) -> RealizationRecord {
    let source = if spec.snr.is_infinite() {
        SignalSource::Synthetic(model.clone())
    } else {
        SignalSource::Noisy {
            model: model.clone(),
            snr: spec.snr,
            seed: spec.seed,
            realization: index,
        }
    };
    let seed = init_seed(spec.seed, index);
    let outcome = match method {
        Method::L2f => run_l2f(&source, cfg, seed).map(|(r, _)| r),
        Method::Nlls => run_nlls_baseline(&source, seed, None),
    };
    match outcome {
        Ok(e) => RealizationRecord {
            index,
            method,
            estimate: Some(e),
            error: None,
        },
        Err(err) => RealizationRecord {
            index,
            method,
            estimate: None,
            error: Some(err.to_string()),
        },
    }
}

/// `M` independent realizations, run on a worker pool of at most `jobs` threads.
pub fn run_batch(
    model: &SignalModel,
    spec: &NoiseSpec,
    method: Method,
    cfg: &L2FConfig,
    jobs: Option<usize>,
) -> Result<BatchReport> {
    spec.validate()?;
    cfg.validate()?;
    let truth = model
        .truth()
        .ok_or_else(|| Error::Config("batch statistics need a two-component model".into()))?;
    let start = std::time::Instant::now();
    let work = || -> Vec<RealizationRecord> {
        (0..spec.realizations as u64)
            .into_par_iter()
            .map(|i| run_one(model, spec, method, cfg, i))
            .collect()
    };
    let records = match jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?
            .install(work),
        None => work(),
    };
    let stats = BatchStats::from_records(&records, truth, method, spec.snr);
    Ok(BatchReport {
        model: model.clone(),
        noise: *spec,
        stats,
        records,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Empirical constants of the degree condition `C√m ≥ 2n ≥ c·ln m`.
pub const DEGREE_CONDITION: (f64, f64) = (4.0, 1.0);
pub const FUNCTIONAL_REPETITIONS: usize = 50;
const FUNCTIONAL_OMEGA_POINTS: usize = 241;

/// Median over repetitions of `sup_{|ω|≤6} |𝔉(S̄)(ω)|`, where `S̄` is the
/// Gauss-quadrature expansion of the average of `M` uniform `±bound` noise vectors.
pub fn averaged_noise_functional(
    m: usize,
    n: usize,
    bound: f64,
    m_values: &[usize],
    repetitions: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    let (big_c, small_c) = DEGREE_CONDITION;
    let two_n = 2.0 * n as f64;
    if n == 0 || n > m || big_c * (m as f64).sqrt() < two_n || two_n < small_c * (m as f64).ln() {
        return Err(Error::Config(format!(
            "degree condition {big_c}*sqrt(m) >= 2n >= {small_c}*ln(m) violated for m={m}, n={n}"
        )));
    }
    if !(bound >= 0.0) || repetitions == 0 || m_values.contains(&0) {
        return Err(Error::Config("need bound >= 0, repetitions >= 1 and M >= 1".into()));
    }
    let rule = gauss_rule(m)?;
    // Rows: ψ_k(x_j) w_j, so a noise vector maps to coefficients by one product.
    let mut design = vec![vec![0.0; m]; n];
    let mut buf = vec![0.0; n];
    for (j, (&x, &w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
        psi_into(x, &mut buf);
        for k in 0..n {
            design[k][j] = buf[k] * w;
        }
    }
    let omegas: Vec<f64> = (0..FUNCTIONAL_OMEGA_POINTS)
        .map(|i| -6.0 + 12.0 * i as f64 / (FUNCTIONAL_OMEGA_POINTS - 1) as f64)
        .collect();

    m_values
        .iter()
        .enumerate()
        .map(|(slot, &count)| {
            let mut sups: Vec<f64> = (0..repetitions as u64)
                .into_par_iter()
                .map(|rep| {
                    if bound == 0.0 {
                        return 0.0;
                    }
                    let mut rng = noise_rng(seed, rep, slot as u64);
                    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                    let mut avg = vec![0.0; m];
                    for _ in 0..count {
                        for v in avg.iter_mut() {
                            *v += rng.sample(dist);
                        }
                    }
                    avg.iter_mut().for_each(|v| *v /= count as f64);
                    let coeffs: Vec<f64> = design
                        .iter()
                        .map(|row| row.iter().zip(&avg).map(|(a, b)| a * b).sum())
                        .collect();
                    let e = HermiteExpansion::from_coeffs(coeffs, MeasureKind::Gauss);
                    fourier_of_expansion(&e, &omegas)
                        .iter()
                        .map(|z| z.norm())
                        .fold(0.0, f64::max)
                })
                .collect();
            sups.sort_by(f64::total_cmp);
            let mid = sups.len() / 2;
            let median = if sups.len() % 2 == 1 { sups[mid] } else { 0.5 * (sups[mid - 1] + sups[mid]) };
            Ok((count, median))
        })
        .collect()
}
