//! Box-constrained nonlinear least squares for biexponential decay models.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const AMPLITUDE_BOUNDS: (f64, f64) = (0.0, 1.0);
/// Decay-time bounds in milliseconds.
pub const TIME_BOUNDS_MS: (f64, f64) = (1.0, 300.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Parameters `A₁, A₂, T₂₁, T₂₂`.
    BiexpFull,
    /// Parameters `A₁, A₂, T₂₁` with `T₂₂` given.
    BiexpFixedT22,
}

impl ModelKind {
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            ModelKind::BiexpFull => &["A1", "A2", "T21", "T22"],
            ModelKind::BiexpFixedT22 => &["A1", "A2", "T21"],
        }
    }

    pub fn param_count(self) -> usize {
        self.param_names().len()
    }

    pub fn default_bounds(self) -> (Vec<f64>, Vec<f64>) {
        let (a, t) = (AMPLITUDE_BOUNDS, TIME_BOUNDS_MS);
        match self {
            ModelKind::BiexpFull => (vec![a.0, a.0, t.0, t.0], vec![a.1, a.1, t.1, t.1]),
            ModelKind::BiexpFixedT22 => (vec![a.0, a.0, t.0], vec![a.1, a.1, t.1]),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitProblem {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub model_kind: ModelKind,
    pub fixed_t22: Option<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub initial: Vec<f64>,
    pub seed: u64,
}

impl FitProblem {
    /// Problem with default bounds and a random initial point drawn from `seed`.
    pub fn new(
        times: Vec<f64>,
        values: Vec<f64>,
        model_kind: ModelKind,
        fixed_t22: Option<f64>,
        seed: u64,
    ) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Shape {
                what: "sample times vs values",
                expected: times.len(),
                actual: values.len(),
            });
        }
        if times.is_empty() {
            return Err(Error::Config("fit problem needs at least one sample".into()));
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::Domain("sample times and values must be finite".into()));
        }
        match (model_kind, fixed_t22) {
            (ModelKind::BiexpFixedT22, None) => {
                return Err(Error::Config("fixed-T22 model requires a T22 value".into()))
            }
            (ModelKind::BiexpFixedT22, Some(t)) if !(t > 0.0 && t.is_finite()) => {
                return Err(Error::Config(format!("fixed T22 must be positive, got {t}")))
            }
            _ => {}
        }
        let (lower, upper) = model_kind.default_bounds();
        Ok(Self {
            times,
            values,
            model_kind,
            fixed_t22: if model_kind == ModelKind::BiexpFixedT22 { fixed_t22 } else { None },
            lower,
            upper,
            initial: random_initial(model_kind, seed),
            seed,
        })
    }

    pub fn with_initial(mut self, initial: Vec<f64>) -> Result<Self> {
        if initial.len() != self.model_kind.param_count() {
            return Err(Error::Shape {
                what: "initial parameters",
                expected: self.model_kind.param_count(),
                actual: initial.len(),
            });
        }
        self.initial = initial;
        Ok(self)
    }

    fn project(&self, p: &mut [f64]) {
        for ((v, lo), hi) in p.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    /// `(A, T)` pairs for every component, including a fixed `T₂₂`.
    fn components(&self, p: &[f64]) -> [(f64, f64); 2] {
        let t22 = match self.model_kind {
            ModelKind::BiexpFull => p[3],
            ModelKind::BiexpFixedT22 => self.fixed_t22.unwrap_or(f64::NAN),
        };
        [(p[0], p[2]), (p[1], t22)]
    }
}

/// Residuals `r_i = Σ A_k e^{−t_i/T_k} − y_i` and the analytic Jacobian.
pub fn residual_jacobian(p: &[f64], prob: &FitProblem) -> (Vec<f64>, DMatrix<f64>) {
    let rows = prob.times.len();
    let cols = prob.model_kind.param_count();
    let [(a1, t1), (a2, t2)] = prob.components(p);
    let mut r = Vec::with_capacity(rows);
    let mut jac = DMatrix::zeros(rows, cols);
    for (i, (&t, &y)) in prob.times.iter().zip(&prob.values).enumerate() {
        let e1 = (-t / t1).exp();
        let e2 = (-t / t2).exp();
        r.push(a1 * e1 + a2 * e2 - y);
        jac[(i, 0)] = e1;
        jac[(i, 1)] = e2;
        jac[(i, 2)] = a1 * t / (t1 * t1) * e1;
        if cols == 4 {
            jac[(i, 3)] = a2 * t / (t2 * t2) * e2;
        }
    }
    (r, jac)
}

/// Uniform draws: amplitudes on `(0, 1)`, decay times on `(0, 300)` ms clamped to `[1, 300]`.
pub fn random_initial(kind: ModelKind, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = TIME_BOUNDS_MS;
    let mut p = vec![rng.random::<f64>(), rng.random::<f64>()];
    for _ in 2..kind.param_count() {
        p.push(rng.random_range(0.0..hi).clamp(lo, hi));
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub gradient_tol: f64,
    pub step_tol: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            gradient_tol: 1e-8,
            step_tol: 1e-10,
            max_iterations: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub params: Vec<f64>,
    pub residual_norm: f64,
    pub initial_residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub active_bounds: Vec<String>,
    pub initial_clamped: bool,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.params[i])
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn norm(v: &[f64]) -> f64 {
    sum_sq(v).sqrt()
}

pub fn solve(prob: &FitProblem) -> FitResult {
    solve_with(prob, &SolverOptions::default())
}

/// Levenberg–Marquardt in the affine scaling of Coleman and Li.
///
/// Iterates stay strictly inside the box; each variable is scaled by the square
/// root of its distance to the bound its gradient points at, and steps that
/// would leave the box are cut back to a fraction of the distance to it.
pub fn solve_with(prob: &FitProblem, opts: &SolverOptions) -> FitResult {
    let n = prob.model_kind.param_count();
    let mut p = prob.initial.clone();
    prob.project(&mut p);
    let initial_clamped = p != prob.initial;
    for ((v, lo), hi) in p.iter_mut().zip(&prob.lower).zip(&prob.upper) {
        let margin = 1e-10 * (hi - lo);
        *v = v.clamp(lo + margin, hi - margin);
    }

    let (mut r, mut jac) = residual_jacobian(&p, prob);
    let mut cost = sum_sq(&r);
    let initial_residual_norm = cost.sqrt();
    let mut mu = 1e-3;
    let mut iterations = 0;
    let mut converged = false;

    'outer: while iterations < opts.max_iterations {
        let grad = jac.tr_mul(&DVector::from_column_slice(&r));
        let dist: Vec<f64> = (0..n)
            .map(|k| if grad[k] < 0.0 { prob.upper[k] - p[k] } else { p[k] - prob.lower[k] })
            .collect();
        let scale: Vec<f64> = dist.iter().map(|v| v.sqrt()).collect();
        let scaled_grad = DVector::from_iterator(n, (0..n).map(|k| scale[k] * grad[k]));
        let scaled_grad_norm = scaled_grad.norm();
        if scaled_grad_norm < opts.gradient_tol {
            converged = true;
            break;
        }
        let scaled_jac = &jac * DMatrix::from_diagonal(&DVector::from_column_slice(&scale));
        let mut model = scaled_jac.tr_mul(&scaled_jac);
        for k in 0..n {
            model[(k, k)] += grad[k].abs();
        }
        let tol = opts.step_tol * (norm(&p) + opts.step_tol);
        loop {
            let mut lhs = model.clone();
            for k in 0..n {
                lhs[(k, k)] += mu * model[(k, k)].max(1e-12);
            }
            let rhs = -&scaled_grad;
            let Some(scaled_step) = lhs.clone().cholesky().map(|c| c.solve(&rhs)).or_else(|| lhs.lu().solve(&rhs))
            else {
                mu *= 2.0;
                if mu > 1e16 {
                    break 'outer;
                }
                continue;
            };
            let mut step: Vec<f64> = (0..n).map(|k| scale[k] * scaled_step[k]).collect();
            let reach = (0..n)
                .map(|k| match step[k] {
                    s if s > 0.0 => (prob.upper[k] - p[k]) / s,
                    s if s < 0.0 => (prob.lower[k] - p[k]) / s,
                    _ => f64::INFINITY,
                })
                .fold(f64::INFINITY, f64::min);
            if reach <= 1.0 {
                let theta = (1.0 - scaled_grad_norm).max(0.995);
                step.iter_mut().for_each(|s| *s *= theta * reach);
            }
            let trial: Vec<f64> = p.iter().zip(&step).map(|(a, b)| a + b).collect();
            let step_norm = norm(&step);
            let (r_new, jac_new) = residual_jacobian(&trial, prob);
            let cost_new = sum_sq(&r_new);
            if cost_new < cost {
                p = trial;
                r = r_new;
                jac = jac_new;
                cost = cost_new;
                mu = (mu / 3.0).max(1e-12);
                iterations += 1;
                if step_norm < tol {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            if step_norm < tol {
                converged = true;
                break 'outer;
            }
            mu *= 2.0;
            if mu > 1e16 {
                break 'outer;
            }
        }
    }
    prob.project(&mut p);

    let names = prob.model_kind.param_names();
    let active_bounds = (0..n)
        .filter(|&k| {
            let margin = 1e-6 * (prob.upper[k] - prob.lower[k]);
            p[k] <= prob.lower[k] + margin || p[k] >= prob.upper[k] - margin
        })
        .map(|k| names[k].to_string())
        .collect();
    FitResult {
        names: names.iter().map(|s| s.to_string()).collect(),
        params: p,
        residual_norm: cost.sqrt(),
        initial_residual_norm,
        iterations,
        converged,
        active_bounds,
        initial_clamped,
    }
}
