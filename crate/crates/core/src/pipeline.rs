//! End-to-end estimation: rescale, shift, weight, expand, demodulate, locate the
//! slow rate, then finish the remaining parameters by least squares.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::leastsq::{GramSystem, HermiteExpansion};
use crate::measures::{
    equispaced_measure, gauss_measure, restrict_to_window, truncated_lebesgue_measure, MeasureKind, SmzMeasure,
};
use crate::nlls::{self, FitProblem, FitResult, ModelKind, TIME_BOUNDS_MS};
use crate::simlab::{gaussian_noise, SignalModel};
use crate::spectrum::{default_grid, rate_from_peak, LowpassFilter, Peak, SpectrumEstimate, DEFAULT_OMEGA_MAX};
use crate::spline::CubicSpline;

/// Relative agreement between consecutive shifts that marks a stable estimate.
pub const STABILIZATION_TOLERANCE: f64 = 0.01;
pub const DEFAULT_SHIFT_COUNT: usize = 8;
/// Default `δ·(N−1)`: the largest sampled frequency.
pub const DEFAULT_SAMPLING_REACH: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct L2FConfig {
    pub n: usize,
    pub m: usize,
    /// Milliseconds per dimensionless time unit.
    pub tau: f64,
    pub duration_ms: f64,
    pub sample_count: usize,
    /// Dimensionless shifts `L`; `None` selects the default schedule.
    pub shift_schedule: Option<Vec<f64>>,
    /// Frequency step; `None` means `DEFAULT_SAMPLING_REACH / (N − 1)`.
    pub delta: Option<f64>,
    pub bandwidth: usize,
    pub omega_max: f64,
    pub measure_kind: MeasureKind,
    pub refine: bool,
}

impl Default for L2FConfig {
    fn default() -> Self {
        Self {
            n: 32,
            m: 32,
            tau: 20.0,
            duration_ms: 320.0,
            sample_count: 64,
            shift_schedule: None,
            delta: None,
            bandwidth: 32,
            omega_max: DEFAULT_OMEGA_MAX,
            measure_kind: MeasureKind::Gauss,
            refine: true,
        }
    }
}

impl L2FConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > self.m {
            return Err(Error::Config(format!("need 1 <= n <= m, got n={} m={}", self.n, self.m)));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.duration_ms > 0.0) || !self.duration_ms.is_finite() {
            return Err(Error::Config(format!("duration must be positive, got {}", self.duration_ms)));
        }
        if self.sample_count < 2 {
            return Err(Error::Config("need at least two samples".into()));
        }
        if self.bandwidth < 2 {
            return Err(Error::Config(format!("bandwidth N must be at least 2, got {}", self.bandwidth)));
        }
        let delta = self.effective_delta();
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::Config(format!("delta must be positive, got {delta}")));
        }
        if delta * (self.bandwidth - 1) as f64 > self.omega_max * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "delta*(N-1) = {:.4} exceeds omega_max = {}",
                delta * (self.bandwidth - 1) as f64,
                self.omega_max
            )));
        }
        Ok(())
    }

    pub fn effective_delta(&self) -> f64 {
        self.delta
            .unwrap_or(DEFAULT_SAMPLING_REACH / (self.bandwidth.max(2) - 1) as f64)
    }

    /// Dimensionless observation length `T' = T/τ`.
    pub fn rescaled_duration(&self) -> f64 {
        self.duration_ms / self.tau
    }

    pub fn measure(&self) -> Result<SmzMeasure> {
        match self.measure_kind {
            MeasureKind::Gauss => gauss_measure(self.m),
            MeasureKind::Equispaced => {
                let reach = (2.0 * self.m as f64).sqrt();
                equispaced_measure(self.m, -reach, reach, None)
            }
            MeasureKind::TruncatedLebesgue => truncated_lebesgue_measure(self.m),
        }
    }

    /// Explicit schedule, or `DEFAULT_SHIFT_COUNT` values equispaced over
    /// `[0.3T', 0.7T']` clipped to the shifts that keep every node observable.
    pub fn shifts(&self, measure: &SmzMeasure) -> Result<Vec<f64>> {
        if let Some(s) = &self.shift_schedule {
            if s.is_empty() {
                return Err(Error::Config("shift schedule is empty".into()));
            }
            return Ok(s.clone());
        }
        let total = self.rescaled_duration();
        let lo_node = measure.nodes.iter().copied().fold(f64::INFINITY, f64::min);
        let hi_node = measure.nodes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = (0.3 * total).max(-lo_node);
        let mut hi = (0.7 * total).min(total - hi_node);
        while hi_node > total - hi {
            hi = hi.next_down();
        }
        if lo > hi + 1e-12 {
            return Err(Error::Config(format!(
                "no feasible shift: nodes span [{lo_node:.4}, {hi_node:.4}] but T' = {total:.4}"
            )));
        }
        if hi - lo < 1e-9 {
            return Ok(vec![lo]);
        }
        let k = DEFAULT_SHIFT_COUNT;
        let mut schedule: Vec<f64> = (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect();
        schedule[k - 1] = hi;
        Ok(schedule)
    }
}

/// `t' = t/τ`.
pub fn rescale(times_ms: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("tau must be positive, got {tau}")));
    }
    Ok(times_ms.iter().map(|t| t / tau).collect())
}

/// `λ' = τ/T₂`.
pub fn rate_from_t2(t2_ms: f64, tau: f64) -> f64 {
    tau / t2_ms
}

/// `T₂ = τ/λ'`.
pub fn t2_from_rate(rate: f64, tau: f64) -> f64 {
    tau / rate
}

/// Where signal values come from when the pipeline asks for them at arbitrary times.
#[derive(Debug, Clone)]
pub enum SignalSource {
    /// Exact model evaluation.
    Synthetic(SignalModel),
    /// Model plus Gaussian noise of std `F(0)/snr`, drawn independently for the
    /// sample grid and for each shift's node times.
    Noisy {
        model: SignalModel,
        snr: f64,
        seed: u64,
        realization: u64,
    },
    /// Measured samples, interpolated by a natural cubic spline.
    Sampled {
        times_ms: Vec<f64>,
        values: Vec<f64>,
        spline: CubicSpline,
    },
}

impl SignalSource {
    pub fn sampled(times_ms: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let spline = CubicSpline::natural(&times_ms, &values)?;
        Ok(SignalSource::Sampled {
            times_ms,
            values,
            spline,
        })
    }

    /// Raw observations on the acquisition grid (what least squares sees).
    pub fn grid_samples(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            SignalSource::Synthetic(model) => Ok((model.times(), model.synth())),
            SignalSource::Noisy {
                model,
                snr,
                seed,
                realization,
            } => {
                let clean = model.synth();
                let std = noise_std(model, *snr)?;
                let noise = gaussian_noise(std, clean.len(), *seed, *realization, 0);
                Ok((model.times(), clean.iter().zip(noise).map(|(a, b)| a + b).collect()))
            }
            SignalSource::Sampled { times_ms, values, .. } => Ok((times_ms.clone(), values.clone())),
        }
    }

    /// Signal at arbitrary times; `stream` selects an independent noise draw.
    pub fn values_at(&self, times_ms: &[f64], stream: u64) -> Result<Vec<f64>> {
        match self {
            SignalSource::Synthetic(model) => Ok(times_ms.iter().map(|&t| model.eval(t)).collect()),
            SignalSource::Noisy {
                model,
                snr,
                seed,
                realization,
            } => {
                let std = noise_std(model, *snr)?;
                let noise = gaussian_noise(std, times_ms.len(), *seed, *realization, stream);
                Ok(times_ms.iter().zip(noise).map(|(&t, e)| model.eval(t) + e).collect())
            }
            SignalSource::Sampled { spline, .. } => {
                let (lo, hi) = spline.domain();
                if let Some(t) = times_ms.iter().find(|t| **t < lo - 1e-9 || **t > hi + 1e-9) {
                    return Err(Error::Support {
                        lo,
                        hi,
                        count: 1,
                        offending: vec![*t],
                    });
                }
                Ok(times_ms.iter().map(|&t| spline.eval(t)).collect())
            }
        }
    }
}

fn noise_std(model: &SignalModel, snr: f64) -> Result<f64> {
    if !(snr > 0.0) {
        return Err(Error::Config(format!("SNR must be positive, got {snr}")));
    }
    Ok(if snr.is_infinite() { 0.0 } else { model.eval(0.0) / snr })
}

/// Values of `F₀((t + L)τ)·e^{−t²/2}` at the measure nodes, after checking that
/// every node lies in `[−L, T' − L]`.
pub fn shift_and_weight(
    source: &SignalSource,
    measure: &SmzMeasure,
    shift: f64,
    cfg: &L2FConfig,
    stream: u64,
) -> Result<Vec<f64>> {
    let total = cfg.rescaled_duration();
    if !(shift > 0.0 && shift < total) {
        return Err(Error::Support {
            lo: -shift,
            hi: total - shift,
            count: measure.len(),
            offending: measure.nodes.clone(),
        });
    }
    restrict_to_window(measure, shift, total - shift)?;
    let times: Vec<f64> = measure.nodes.iter().map(|x| (x + shift) * cfg.tau).collect();
    let raw = source.values_at(&times, stream)?;
    Ok(measure
        .nodes
        .iter()
        .zip(raw)
        .map(|(x, v)| v * (-0.5 * x * x).exp())
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShiftRecord {
    pub shift: f64,
    pub expansion: HermiteExpansion,
    pub mu_hat: Vec<num_complex::Complex64>,
    pub peak: Option<Peak>,
    pub runner_up_height: f64,
    /// Dimensionless rate `λ̂'`.
    pub rate: Option<f64>,
    pub t22_ms: Option<f64>,
}

impl ShiftRecord {
    fn prominence(&self) -> f64 {
        match self.peak {
            Some(p) if self.runner_up_height > 0.0 => p.height / self.runner_up_height,
            Some(_) => f64::INFINITY,
            None => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftChoice {
    Stabilized,
    MostProminent,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct L2FTrace {
    pub delta: f64,
    pub bandwidth: usize,
    pub shifts: Vec<ShiftRecord>,
    pub chosen_shift: usize,
    pub choice: ShiftChoice,
    pub t22_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<EstimationResult>,
}

impl L2FTrace {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Spectrum of the shifted, weighted signal for one shift (`stream` picks the noise draw).
pub fn spectrum_at_shift(source: &SignalSource, cfg: &L2FConfig, shift: f64, stream: u64) -> Result<SpectrumEstimate> {
    cfg.validate()?;
    let measure = cfg.measure()?;
    let gram = GramSystem::new(&measure, cfg.n)?;
    let values = shift_and_weight(source, &measure, shift, cfg, stream)?;
    let e = gram.fit(&values)?;
    let filter = LowpassFilter::new(cfg.bandwidth)?;
    SpectrumEstimate::compute(
        &e,
        cfg.effective_delta(),
        &filter,
        cfg.omega_max,
        default_grid(cfg.bandwidth),
        cfg.refine,
    )
}

/// Slowest decay time from the dominant spectral peak across the shift schedule.
///
/// The chosen shift is the largest one whose estimate agrees with the previous
/// shift's to `STABILIZATION_TOLERANCE`; without such a pair, the shift whose
/// dominant peak stands highest above the runner-up wins.
pub fn estimate_t22(source: &SignalSource, cfg: &L2FConfig) -> Result<L2FTrace> {
    cfg.validate()?;
    let measure = cfg.measure()?;
    let shifts = cfg.shifts(&measure)?;
    let gram = GramSystem::new(&measure, cfg.n)?;
    let filter = LowpassFilter::new(cfg.bandwidth)?;
    let delta = cfg.effective_delta();
    let grid = default_grid(cfg.bandwidth);
    let total = cfg.rescaled_duration();

    let mut records = Vec::with_capacity(shifts.len());
    for (i, &shift) in shifts.iter().enumerate() {
        let values = shift_and_weight(source, &measure, shift, cfg, i as u64 + 1)?;
        let mut e = gram.fit(&values)?;
        e.window = Some((-shift, total - shift));
        let spec = SpectrumEstimate::compute(&e, delta, &filter, cfg.omega_max, grid.clone(), cfg.refine)?;
        let peak = spec.dominant();
        let rate = peak
            .filter(|p| p.x > 0.0 && p.x < PI)
            .map(|p| rate_from_peak(p.x, delta))
            .transpose()?;
        let t22_ms = rate
            .map(|r| t2_from_rate(r, cfg.tau))
            .filter(|t| *t >= TIME_BOUNDS_MS.0 && *t <= TIME_BOUNDS_MS.1);
        records.push(ShiftRecord {
            shift,
            expansion: e,
            runner_up_height: spec.runner_up_height(),
            mu_hat: spec.mu_hat,
            peak,
            rate: if t22_ms.is_some() { rate } else { None },
            t22_ms,
        });
    }

    let stabilized = (1..records.len()).rev().find(|&i| match (records[i].t22_ms, records[i - 1].t22_ms) {
        (Some(a), Some(b)) => ((a - b) / b).abs() < STABILIZATION_TOLERANCE,
        _ => false,
    });
    let (chosen, choice) = match stabilized {
        Some(i) => (i, ShiftChoice::Stabilized),
        None => {
            let best = records
                .iter()
                .enumerate()
                .filter(|(_, r)| r.t22_ms.is_some())
                .max_by(|a, b| a.1.prominence().total_cmp(&b.1.prominence()).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .ok_or_else(|| Error::Estimation("no shift produced a valid spectral peak".into()))?;
            (best, ShiftChoice::MostProminent)
        }
    };
    let t22_ms = records[chosen].t22_ms.unwrap_or(f64::NAN);
    Ok(L2FTrace {
        delta,
        bandwidth: cfg.bandwidth,
        shifts: records,
        chosen_shift: chosen,
        choice,
        t22_ms,
        result: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    L2f,
    Nlls,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::L2f => "l2f",
            Method::Nlls => "nlls",
        })
    }
}

/// Biexponential estimate reported with `T₂₂ ≥ T₂₁`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub method: Method,
    pub a1: f64,
    pub a2: f64,
    pub t21: f64,
    pub t22: f64,
    pub converged: bool,
    pub iterations: usize,
    pub residual_norm: f64,
}

impl EstimationResult {
    fn from_components(method: Method, fit: &FitResult, (a1, t21): (f64, f64), (a2, t22): (f64, f64)) -> Self {
        let ((a1, t21), (a2, t22)) = if t21 > t22 { ((a2, t22), (a1, t21)) } else { ((a1, t21), (a2, t22)) };
        Self {
            method,
            a1,
            a2,
            t21,
            t22,
            converged: fit.converged,
            iterations: fit.iterations,
            residual_norm: fit.residual_norm,
        }
    }

    pub fn values(&self) -> [f64; 4] {
        [self.a1, self.a2, self.t21, self.t22]
    }
}

/// `T₂₂` from the spectrum, then `A₁, A₂, T₂₁` by least squares on the raw samples.
pub fn run_l2f(source: &SignalSource, cfg: &L2FConfig, init_seed: u64) -> Result<(EstimationResult, L2FTrace)> {
    let mut trace = estimate_t22(source, cfg)?;
    let (times, values) = source.grid_samples()?;
    let prob = FitProblem::new(times, values, ModelKind::BiexpFixedT22, Some(trace.t22_ms), init_seed)?;
    let fit = nlls::solve(&prob);
    let p = &fit.params;
    let result = EstimationResult::from_components(Method::L2f, &fit, (p[0], p[2]), (p[1], trace.t22_ms));
    trace.result = Some(result.clone());
    Ok((result, trace))
}

/// Four-parameter least squares from a seeded random start (or `initial`).
pub fn run_nlls_baseline(source: &SignalSource, init_seed: u64, initial: Option<Vec<f64>>) -> Result<EstimationResult> {
    let (times, values) = source.grid_samples()?;
    let mut prob = FitProblem::new(times, values, ModelKind::BiexpFull, None, init_seed)?;
    if let Some(p0) = initial {
        prob = prob.with_initial(p0)?;
    }
    let fit = nlls::solve(&prob);
    let p = &fit.params;
    Ok(EstimationResult::from_components(Method::Nlls, &fit, (p[0], p[2]), (p[1], p[3])))
}
