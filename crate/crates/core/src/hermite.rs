//! Orthonormal Hermite functions and Gauss–Hermite quadrature.
//!
//! The Hermite functions `ψ_k(x) = H_k(x) e^{-x²/2} / sqrt(2^k k! sqrt(π))` form an
//! orthonormal basis of `L²(ℝ)` and are eigenfunctions of the unitary Fourier
//! transform with eigenvalues `(-i)^k`. Everything here is evaluated through the
//! three-term recurrence
//!
//! ```text
//! ψ_{k+1}(x) = x sqrt(2/(k+1)) ψ_k(x) - sqrt(k/(k+1)) ψ_{k-1}(x)
//! ```
//!
//! run on an unweighted, periodically rescaled sequence so that neither the
//! Gaussian factor nor the polynomial growth under- or overflows for large `|x|`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `π^{-1/4}`
pub(crate) const PI_POW_NEG_QUARTER: f64 = 0.751_125_544_464_942_5;

const RESCALE_THRESHOLD: f64 = 1e150;
const MAX_GAUSS_ORDER: usize = 512;

/// Writes `ψ_0(x), …, ψ_{n-1}(x)` into `out`.
pub(crate) fn psi_into(x: f64, out: &mut [f64]) {
    let n = out.len();
    if n == 0 {
        return;
    }
    // Unweighted recurrence values p_k with ψ_k = π^{-1/4} p_k exp(log_scale - x²/2).
    let mut log_scale = -0.5 * x * x;
    let mut prev = 0.0;
    let mut cur = 1.0;
    out[0] = PI_POW_NEG_QUARTER * log_scale.exp();
    for k in 0..n - 1 {
        let kf = k as f64;
        let next = x * (2.0 / (kf + 1.0)).sqrt() * cur - (kf / (kf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        if cur.abs() > RESCALE_THRESHOLD {
            prev /= RESCALE_THRESHOLD;
            cur /= RESCALE_THRESHOLD;
            log_scale += RESCALE_THRESHOLD.ln();
        }
        out[k + 1] = PI_POW_NEG_QUARTER * cur * log_scale.exp();
    }
}

/// Returns `(ψ_{k-1}(x), ψ_k(x))` up to a common positive factor.
///
/// Only ratios of the two are meaningful; used by Newton iterations where the
/// scale cancels.
fn psi_pair_unscaled(k: usize, x: f64) -> (f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    for j in 0..k {
        let jf = j as f64;
        let next = x * (2.0 / (jf + 1.0)).sqrt() * cur - (jf / (jf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        if cur.abs() > RESCALE_THRESHOLD {
            prev /= RESCALE_THRESHOLD;
            cur /= RESCALE_THRESHOLD;
        }
    }
    (prev, cur)
}

/// Evaluates the orthonormal Hermite function `ψ_k` at `x`.
pub fn eval_psi(k: usize, x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("psi_{k} evaluated at non-finite x = {x}")));
    }
    let mut buf = vec![0.0; k + 1];
    psi_into(x, &mut buf);
    Ok(buf[k])
}

/// Evaluates `ψ_0 … ψ_{k_max-1}` on every point of `xs`.
///
/// Row `k` of the result holds `ψ_k` on the grid; one recurrence pass per point.
pub fn eval_psi_batch(k_max: usize, xs: &[f64]) -> Result<Vec<Vec<f64>>> {
    if k_max == 0 {
        return Err(Error::Domain("k_max must be at least 1".into()));
    }
    if let Some(bad) = xs.iter().find(|x| !x.is_finite()) {
        return Err(Error::Domain(format!("non-finite evaluation point {bad}")));
    }
    let mut rows = vec![vec![0.0; xs.len()]; k_max];
    let mut buf = vec![0.0; k_max];
    for (j, &x) in xs.iter().enumerate() {
        psi_into(x, &mut buf);
        for (row, v) in rows.iter_mut().zip(&buf) {
            row[j] = *v;
        }
    }
    Ok(rows)
}

/// The span `Π_n` of `ψ_0 … ψ_{n-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HermiteBasis {
    max_degree: usize,
}

impl HermiteBasis {
    pub fn new(max_degree: usize) -> Result<Self> {
        if max_degree == 0 {
            return Err(Error::Domain("Hermite basis needs at least one function".into()));
        }
        Ok(Self { max_degree })
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    /// All basis functions at one point.
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.max_degree];
        psi_into(x, &mut out);
        out
    }

    /// `Σ_k coeffs[k] ψ_k(x)`; `coeffs` may be shorter than the basis.
    pub fn combine(&self, coeffs: &[f64], x: f64) -> f64 {
        let mut buf = vec![0.0; coeffs.len().min(self.max_degree)];
        psi_into(x, &mut buf);
        buf.iter().zip(coeffs).map(|(p, c)| p * c).sum()
    }
}

/// Gauss–Hermite rule in the form used for Hermite *functions*.
///
/// `nodes` are the zeros of `ψ_m` in decreasing order; `weights` are
/// `λ_k exp(x_k²)` where `λ_k` are the classical Gauss–Hermite weights, so that
/// `Σ w_k P(x_k) Q(x_k) = ∫ P Q dt` for `P, Q ∈ Π_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussRule {
    pub order: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    /// Total mass `Σ w_k`.
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Builds the `m`-point rule (`1 ≤ m ≤ 512`).
///
/// Nodes start from the eigenvalues of the symmetric Jacobi matrix of the
/// recurrence (off-diagonal `sqrt(k/2)`) and are polished by Newton's method on
/// `ψ_m`. Weights are the reciprocal Christoffel function
/// `1 / Σ_{j<m} ψ_j(x_k)²`.
pub fn gauss_rule(m: usize) -> Result<GaussRule> {
    if m == 0 || m > MAX_GAUSS_ORDER {
        return Err(Error::Config(format!(
            "Gauss-Hermite order {m} outside 1..={MAX_GAUSS_ORDER}"
        )));
    }
    let mut jacobi = DMatrix::<f64>::zeros(m, m);
    for k in 1..m {
        let b = (k as f64 / 2.0).sqrt();
        jacobi[(k, k - 1)] = b;
        jacobi[(k - 1, k)] = b;
    }
    let mut guesses: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    guesses.sort_by(|a, b| b.total_cmp(a));

    let mut nodes = Vec::with_capacity(m);
    for (index, &x0) in guesses.iter().enumerate() {
        nodes.push(newton_polish(m, x0, index)?);
    }
    // Enforce exact symmetry about the origin.
    for k in 0..m / 2 {
        let r = 0.5 * (nodes[k] - nodes[m - 1 - k]);
        nodes[k] = r;
        nodes[m - 1 - k] = -r;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }
    if nodes.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::numeric(format!("Gauss-Hermite nodes of order {m} not strictly decreasing")));
    }

    let mut buf = vec![0.0; m];
    let weights = nodes
        .iter()
        .map(|&x| {
            psi_into(x, &mut buf);
            1.0 / buf.iter().map(|v| v * v).sum::<f64>()
        })
        .collect();
    Ok(GaussRule {
        order: m,
        nodes,
        weights,
    })
}

fn newton_polish(m: usize, x0: f64, index: usize) -> Result<f64> {
    let mf = m as f64;
    let mut x = x0;
    for _ in 0..50 {
        // ψ_m' = sqrt(2m) ψ_{m-1} - x ψ_m
        let (below, at) = psi_pair_unscaled(m, x);
        let deriv = (2.0 * mf).sqrt() * below - x * at;
        if deriv == 0.0 {
            break;
        }
        let dx = at / deriv;
        x -= dx;
        if dx.abs() <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            return Ok(x);
        }
    }
    // Newton may stall a few ulps from the root; accept if the eigen guess and
    // the iterate agree to working accuracy.
    let (below, at) = psi_pair_unscaled(m, x);
    let deriv = (2.0 * mf).sqrt() * below - x * at;
    if deriv != 0.0 && (at / deriv).abs() <= 1e-12 * x.abs().max(1.0) {
        return Ok(x);
    }
    Err(Error::Numeric {
        message: format!("Newton iteration for root {index} of psi_{m} did not converge"),
        index: Some(index),
        cond_estimate: None,
    })
}

/// Exact Hermite coefficients of `g_λ(x) = exp(-λx - x²/2)`.
///
/// `c_k = π^{1/4} e^{λ²/4} (-1)^k λ^k / (2^{k/2} sqrt(k!))`, evaluated in log
/// space.
pub fn glambda_coefficients(lambda: f64, n: usize) -> Result<Vec<f64>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Domain(format!("rate must be finite and non-negative, got {lambda}")));
    }
    let log_base = 0.25 * std::f64::consts::PI.ln() + 0.25 * lambda * lambda;
    let mut out = Vec::with_capacity(n);
    let mut log_fact = 0.0;
    for k in 0..n {
        if k > 0 {
            log_fact += (k as f64).ln();
        }
        let c = if k == 0 {
            log_base.exp()
        } else if lambda == 0.0 {
            0.0
        } else {
            let kf = k as f64;
            let mag = (log_base + kf * lambda.ln() - 0.5 * kf * std::f64::consts::LN_2 - 0.5 * log_fact).exp();
            if k % 2 == 1 {
                -mag
            } else {
                mag
            }
        };
        out.push(c);
    }
    Ok(out)
}

/// `g_λ(x) = exp(-λx - x²/2)`.
pub fn glambda(lambda: f64, x: f64) -> f64 {
    (-lambda * x - 0.5 * x * x).exp()
}
