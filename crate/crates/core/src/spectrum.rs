//! Rate estimation from samples of a demodulated Fourier transform.
//!
//! The transform of the weighted signal satisfies
//! `𝔉(μ̃)(ω) = exp(ω²/2) 𝔉(f)(−ω)` where `μ̃ = Σ b_k δ_{λ_k}`. Sampling at
//! `ω = jδ, |j| < N` gives the Fourier coefficients `μ̂(j) = Σ b_k e^{−ijω_k}` of a
//! periodic measure with atoms at `ω_k = λ_k δ`. The filtered sum
//! `σ_N(x) = Σ_{|ℓ|<N} h(|ℓ|/N) μ̂(ℓ) e^{iℓx} = Σ b_k Φ_N(x − ω_k)` has its
//! prominent peaks near the atoms; the kernel `Φ_N` decays faster than any power
//! of `N‖t‖` because `h` is smooth.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::leastsq::{fourier_of_expansion, HermiteExpansion};

/// Fidelity ceiling for the Hermite-domain transform.
pub const DEFAULT_OMEGA_MAX: f64 = 6.0;
/// Grid points per unit of bandwidth when evaluating `|σ_N|` on `[0, 2π)`.
pub const GRID_POINTS_PER_BANDWIDTH: usize = 64;

/// Smooth even low-pass profile: `plateau` on `[0, 1/2]`, zero from 1 on.
///
/// The transition is the `C^∞` partition `s(u) = e^{−1/u} / (e^{−1/u} + e^{−1/(1−u)})`
/// with `u = 2(1 − t)`. Peak locations do not depend on the plateau value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowpassFilter {
    bandwidth: usize,
    plateau: f64,
}

impl LowpassFilter {
    pub fn new(bandwidth: usize) -> Result<Self> {
        Self::with_plateau(bandwidth, 1.0)
    }

    pub fn with_plateau(bandwidth: usize, plateau: f64) -> Result<Self> {
        if bandwidth < 2 {
            return Err(Error::Config(format!("bandwidth N must be at least 2, got {bandwidth}")));
        }
        if !(plateau > 0.0) || !plateau.is_finite() {
            return Err(Error::Config(format!("filter plateau must be positive, got {plateau}")));
        }
        Ok(Self { bandwidth, plateau })
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn plateau(&self) -> f64 {
        self.plateau
    }

    pub fn profile(&self, t: f64) -> f64 {
        let t = t.abs();
        if t <= 0.5 {
            return self.plateau;
        }
        if t >= 1.0 {
            return 0.0;
        }
        let bump = |u: f64| if u > 0.0 { (-1.0 / u).exp() } else { 0.0 };
        let u = 2.0 * (1.0 - t);
        let a = bump(u);
        self.plateau * a / (a + bump(1.0 - u))
    }

    /// `h(|ℓ|/N)` for `ℓ = −N+1 … N−1`.
    pub fn weights(&self) -> Vec<f64> {
        let n = self.bandwidth as i64;
        (-n + 1..n).map(|l| self.profile(l as f64 / n as f64)).collect()
    }

    /// `Φ_N(t) = Σ_{|ℓ|<N} h(|ℓ|/N) e^{iℓt}`, real since `h` is even.
    pub fn kernel(&self, t: f64) -> f64 {
        let n = self.bandwidth;
        let tail: f64 = (1..n)
            .map(|l| self.profile(l as f64 / n as f64) * (l as f64 * t).cos())
            .sum();
        self.profile(0.0) + 2.0 * tail
    }
}

/// `μ̂(j) = exp((jδ)²/2) 𝔉(S_n)(−jδ)` for `j = −N+1 … N−1`.
pub fn demodulated_samples(
    e: &HermiteExpansion,
    delta: f64,
    bandwidth: usize,
    omega_max: f64,
) -> Result<Vec<Complex64>> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Config(format!("frequency step delta must be positive, got {delta}")));
    }
    if bandwidth < 2 {
        return Err(Error::Config(format!("bandwidth N must be at least 2, got {bandwidth}")));
    }
    let reach = delta * (bandwidth - 1) as f64;
    if reach > omega_max * (1.0 + 1e-12) {
        return Err(Error::Config(format!(
            "delta*(N-1) = {reach:.4} exceeds the transform fidelity limit omega_max = {omega_max}"
        )));
    }
    let n = bandwidth as i64;
    let omegas: Vec<f64> = (-n + 1..n).map(|j| -(j as f64) * delta).collect();
    let transform = fourier_of_expansion(e, &omegas);
    Ok(omegas
        .iter()
        .zip(transform)
        .map(|(w, v)| v * (0.5 * w * w).exp())
        .collect())
}

/// Default evaluation grid for `|σ_N|`: `64 N` points on `[0, 2π)`.
pub fn default_grid(bandwidth: usize) -> Vec<f64> {
    uniform_circle_grid(GRID_POINTS_PER_BANDWIDTH * bandwidth)
}

pub fn uniform_circle_grid(points: usize) -> Vec<f64> {
    (0..points).map(|i| TAU * i as f64 / points as f64).collect()
}

/// `|σ_N(x)|` on each grid point.
pub fn sigma_sum(mu_hat: &[Complex64], filter: &LowpassFilter, x_grid: &[f64]) -> Result<Vec<f64>> {
    let n = filter.bandwidth();
    if mu_hat.len() != 2 * n - 1 {
        return Err(Error::Shape {
            what: "Fourier samples (2N-1)",
            expected: 2 * n - 1,
            actual: mu_hat.len(),
        });
    }
    let coeffs: Vec<Complex64> = filter.weights().iter().zip(mu_hat).map(|(h, m)| m * h).collect();
    Ok(x_grid
        .iter()
        .map(|&x| {
            let step = Complex64::from_polar(1.0, x);
            let mut phase = Complex64::from_polar(1.0, -((n - 1) as f64) * x);
            let mut acc = Complex64::new(0.0, 0.0);
            for c in &coeffs {
                acc += c * phase;
                phase *= step;
            }
            acc.norm()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub x: f64,
    pub height: f64,
}

/// Step of a uniform grid that tiles the full circle, if `grid` is one.
fn circle_step(grid: &[f64]) -> Option<f64> {
    if grid.len() < 3 {
        return None;
    }
    let step = grid[1] - grid[0];
    let uniform = grid
        .windows(2)
        .all(|w| ((w[1] - w[0]) - step).abs() <= 1e-9 * step.abs());
    let closes = ((grid.len() as f64 * step) - TAU).abs() <= 1e-9 * TAU;
    (uniform && closes && step > 0.0).then_some(step)
}

/// Three-point parabolic vertex around index `k`; `None` at an open edge.
fn parabolic(sigma: &[f64], grid: &[f64], k: usize, circle: Option<f64>) -> Option<Peak> {
    let len = sigma.len();
    let (left, right, step) = match circle {
        Some(step) => ((k + len - 1) % len, (k + 1) % len, step),
        None => {
            if k == 0 || k + 1 >= len {
                return None;
            }
            let step = 0.5 * (grid[k + 1] - grid[k - 1]);
            (k - 1, k + 1, step)
        }
    };
    let (a, b, c) = (sigma[left], sigma[k], sigma[right]);
    let denom = a - 2.0 * b + c;
    if !(denom < 0.0) {
        return None;
    }
    let offset = (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
    let mut x = grid[k] + offset * step;
    if circle.is_some() {
        x = x.rem_euclid(TAU);
    }
    Some(Peak {
        x,
        height: b - 0.25 * (a - c) * offset,
    })
}

/// Global maximum of `|σ_N|` on the grid, optionally refined by a parabola.
///
/// Ties resolve to the smaller `x`. Grids that tile `[0, 2π)` uniformly are
/// treated as periodic for the refinement.
pub fn detect_peak(sigma: &[f64], x_grid: &[f64], refine: bool) -> Result<Peak> {
    if sigma.is_empty() || sigma.len() != x_grid.len() {
        return Err(Error::Shape {
            what: "spectrum grid",
            expected: x_grid.len().max(1),
            actual: sigma.len(),
        });
    }
    let mut best = 0usize;
    for (k, v) in sigma.iter().enumerate() {
        let cur = sigma[best];
        if *v > cur || (*v == cur && x_grid[k] < x_grid[best]) {
            best = k;
        }
    }
    if !(sigma[best] > 0.0) {
        return Err(Error::NoPeak("filtered spectrum is identically zero".into()));
    }
    let raw = Peak {
        x: x_grid[best],
        height: sigma[best],
    };
    if !refine {
        return Ok(raw);
    }
    Ok(parabolic(sigma, x_grid, best, circle_step(x_grid)).unwrap_or(raw))
}

/// Strict local maxima of `|σ_N|`, tallest first.
pub fn local_maxima(sigma: &[f64], x_grid: &[f64]) -> Vec<Peak> {
    let len = sigma.len();
    let circle = circle_step(x_grid);
    let mut out: Vec<Peak> = (0..len)
        .filter(|&k| {
            let (l, r) = match circle {
                Some(_) => (sigma[(k + len - 1) % len], sigma[(k + 1) % len]),
                None => (
                    if k == 0 { f64::NEG_INFINITY } else { sigma[k - 1] },
                    if k + 1 == len { f64::NEG_INFINITY } else { sigma[k + 1] },
                ),
            };
            sigma[k] > 0.0 && sigma[k] >= l && sigma[k] > r
        })
        .map(|k| Peak {
            x: x_grid[k],
            height: sigma[k],
        })
        .collect();
    out.sort_by(|a, b| b.height.total_cmp(&a.height).then(a.x.total_cmp(&b.x)));
    out
}

/// `λ̂ = x*/δ`.
pub fn rate_from_peak(x_star: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::Config(format!("frequency step delta must be positive, got {delta}")));
    }
    Ok(x_star / delta)
}

/// Signed rate for a peak on the circle: peaks in `(π, 2π)` alias negative rates.
pub fn signed_rate_from_peak(x_star: f64, delta: f64) -> Result<f64> {
    let x = if x_star > PI { x_star - TAU } else { x_star };
    rate_from_peak(x, delta)
}

/// Sampled demodulated transform, its filtered sum on a grid, and the peaks found.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumEstimate {
    pub bandwidth: usize,
    pub delta: f64,
    pub mu_hat: Vec<Complex64>,
    pub grid: Vec<f64>,
    pub abs_sigma: Vec<f64>,
    /// Dominant peak first (refined if requested), then further local maxima.
    pub peaks: Vec<Peak>,
}

impl SpectrumEstimate {
    pub fn compute(
        e: &HermiteExpansion,
        delta: f64,
        filter: &LowpassFilter,
        omega_max: f64,
        grid: Vec<f64>,
        refine: bool,
    ) -> Result<Self> {
        let mu_hat = demodulated_samples(e, delta, filter.bandwidth(), omega_max)?;
        Self::from_samples(mu_hat, delta, filter, grid, refine)
    }

    pub fn from_samples(
        mu_hat: Vec<Complex64>,
        delta: f64,
        filter: &LowpassFilter,
        grid: Vec<f64>,
        refine: bool,
    ) -> Result<Self> {
        let abs_sigma = sigma_sum(&mu_hat, filter, &grid)?;
        let mut peaks = Vec::new();
        if let Ok(top) = detect_peak(&abs_sigma, &grid, refine) {
            peaks.push(top);
            let maxima = local_maxima(&abs_sigma, &grid);
            peaks.extend(maxima.into_iter().skip(1).take(7));
        }
        Ok(Self {
            bandwidth: filter.bandwidth(),
            delta,
            mu_hat,
            grid,
            abs_sigma,
            peaks,
        })
    }

    pub fn dominant(&self) -> Option<Peak> {
        self.peaks.first().copied()
    }

    /// Height of the tallest peak other than the dominant one (0 if none).
    pub fn runner_up_height(&self) -> f64 {
        self.peaks.get(1).map_or(0.0, |p| p.height)
    }

    /// CSV with header `x,abs_sigma`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x", "abs_sigma"])?;
        for (x, s) in self.grid.iter().zip(&self.abs_sigma) {
            w.write_record([x.to_string(), s.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}
