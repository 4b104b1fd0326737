//! Discrete least-squares projection onto `Π_n` and its Fourier transform.
//!
//! For a measure `ν = Σ w_j δ_{x_j}` the projection `S_n(ν; f) = Σ_{k<n} d_k ψ_k`
//! minimizes `Σ w_j |f(x_j) − P(x_j)|²` over `P ∈ Π_n`. Its coefficients solve
//! `G d = f̂` where `G_{ℓk} = Σ_j w_j ψ_ℓ(x_j) ψ_k(x_j)` and
//! `f̂_ℓ = Σ_j w_j f(x_j) ψ_ℓ(x_j)`. Under a Gauss measure of order `m ≥ n`,
//! `G` is the identity and the solve is skipped.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::psi_into;
use crate::measures::{MeasureKind, SmzMeasure};

const COND_WARN: f64 = 1e6;

/// Gram matrix of `ψ_0 … ψ_{n-1}` under a discrete measure, with its Cholesky
/// factor and the basis table at the measure's nodes.
///
/// Built once per (measure, degree) and shared read-only between solves.
#[derive(Debug, Clone)]
pub struct GramSystem {
    degree: usize,
    order: usize,
    kind: MeasureKind,
    window: Option<(f64, f64)>,
    weights: Vec<f64>,
    /// `basis[k][j] = ψ_k(x_j)`.
    basis: Vec<Vec<f64>>,
    gram: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    cond_estimate: f64,
}

impl GramSystem {
    pub fn new(mu: &SmzMeasure, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("expansion degree n must be at least 1".into()));
        }
        if n > mu.order {
            return Err(Error::Config(format!(
                "expansion degree n = {n} exceeds measure order m = {}",
                mu.order
            )));
        }
        let nodes = mu.nodes.len();
        let mut basis = vec![vec![0.0; nodes]; n];
        let mut buf = vec![0.0; n];
        for (j, &x) in mu.nodes.iter().enumerate() {
            psi_into(x, &mut buf);
            for k in 0..n {
                basis[k][j] = buf[k];
            }
        }
        let mut gram = DMatrix::<f64>::zeros(n, n);
        for l in 0..n {
            for k in 0..=l {
                let s: f64 = (0..nodes).map(|j| mu.weights[j] * basis[l][j] * basis[k][j]).sum();
                gram[(l, k)] = s;
                gram[(k, l)] = s;
            }
        }
        let diag_ratio = {
            let d = gram.diagonal();
            d.max() / d.min()
        };
        let chol = Cholesky::new(gram.clone()).ok_or_else(|| Error::Numeric {
            message: format!("Gram matrix of order {n} under the {} measure is not positive definite", mu.kind),
            index: None,
            cond_estimate: Some(diag_ratio),
        })?;
        let l_diag = chol.l_dirty().diagonal();
        let ratio = l_diag.max() / l_diag.min();
        let cond_estimate = ratio * ratio;
        if cond_estimate > COND_WARN {
            log::warn!("Gram matrix condition estimate {cond_estimate:.3e} exceeds {COND_WARN:e}");
        }
        Ok(Self {
            degree: n,
            order: mu.order,
            kind: mu.kind,
            window: mu.window,
            weights: mu.weights.clone(),
            basis,
            gram,
            chol,
            cond_estimate,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Lower-triangular Cholesky factor of `G`.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn cond_estimate(&self) -> f64 {
        self.cond_estimate
    }

    pub fn node_count(&self) -> usize {
        self.weights.len()
    }

    /// `f̂_ℓ = Σ_j w_j f(x_j) ψ_ℓ(x_j)` for `ℓ < n`.
    pub fn raw_coefficients(&self, f_samples: &[f64]) -> Result<Vec<f64>> {
        if f_samples.len() != self.weights.len() {
            return Err(Error::Shape {
                what: "samples at measure nodes",
                expected: self.weights.len(),
                actual: f_samples.len(),
            });
        }
        let weighted: Vec<f64> = f_samples.iter().zip(&self.weights).map(|(f, w)| f * w).collect();
        Ok(self
            .basis
            .iter()
            .map(|row| row.iter().zip(&weighted).map(|(p, v)| p * v).sum())
            .collect())
    }

    /// Least-squares expansion of the samples.
    pub fn fit(&self, f_samples: &[f64]) -> Result<HermiteExpansion> {
        let rhs = self.raw_coefficients(f_samples)?;
        let coeffs = if self.kind == MeasureKind::Gauss {
            rhs
        } else {
            self.chol.solve(&DVector::from_vec(rhs)).iter().copied().collect()
        };
        Ok(HermiteExpansion {
            n: self.degree,
            m: self.order,
            measure_kind: self.kind,
            window: self.window,
            coeffs,
        })
    }
}

/// `f̂(ν; ℓ)` for `ℓ < n`.
pub fn raw_coefficients(f_samples: &[f64], mu: &SmzMeasure, n: usize) -> Result<Vec<f64>> {
    GramSystem::new(mu, n)?.raw_coefficients(f_samples)
}

/// `S_n(ν; f)` from samples of `f` at the nodes of `mu`.
pub fn fit(f_samples: &[f64], mu: &SmzMeasure, n: usize) -> Result<HermiteExpansion> {
    GramSystem::new(mu, n)?.fit(f_samples)
}

/// A finite Hermite expansion `Σ_{k<n} d_k ψ_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HermiteExpansion {
    pub n: usize,
    pub m: usize,
    pub measure_kind: MeasureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<(f64, f64)>,
    pub coeffs: Vec<f64>,
}

impl HermiteExpansion {
    /// Expansion with the given coefficients and no measure provenance beyond the kind.
    pub fn from_coeffs(coeffs: Vec<f64>, measure_kind: MeasureKind) -> Self {
        Self {
            n: coeffs.len(),
            m: coeffs.len(),
            measure_kind,
            window: None,
            coeffs,
        }
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        let mut buf = vec![0.0; self.coeffs.len()];
        psi_into(x, &mut buf);
        buf.iter().zip(&self.coeffs).map(|(p, c)| p * c).sum()
    }

    pub fn evaluate_many(&self, xs: &[f64]) -> Vec<f64> {
        let mut buf = vec![0.0; self.coeffs.len()];
        xs.iter()
            .map(|&x| {
                psi_into(x, &mut buf);
                buf.iter().zip(&self.coeffs).map(|(p, c)| p * c).sum()
            })
            .collect()
    }

    /// `L²` norm, equal to the Euclidean norm of the coefficients.
    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let e: HermiteExpansion = serde_json::from_str(s)?;
        if e.n != e.coeffs.len() {
            return Err(Error::Shape {
                what: "expansion coefficients",
                expected: e.n,
                actual: e.coeffs.len(),
            });
        }
        Ok(e)
    }
}

/// Unitary Fourier transform of the expansion, `Σ_k d_k (−i)^k ψ_k(ω)`.
pub fn fourier_of_expansion(e: &HermiteExpansion, omegas: &[f64]) -> Vec<Complex64> {
    const PHASES: [Complex64; 4] = [
        Complex64::new(1.0, 0.0),
        Complex64::new(0.0, -1.0),
        Complex64::new(-1.0, 0.0),
        Complex64::new(0.0, 1.0),
    ];
    let mut buf = vec![0.0; e.coeffs.len()];
    omegas
        .iter()
        .map(|&w| {
            psi_into(w, &mut buf);
            buf.iter()
                .zip(&e.coeffs)
                .enumerate()
                .map(|(k, (p, c))| PHASES[k % 4] * (c * p))
                .sum()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorNorms {
    pub l1: f64,
    pub linf: f64,
}

/// Trapezoid `L¹` and max norms of `f − S_n` on a uniform grid.
///
/// The grid must span at least `[−2 sqrt(n) − 2, 2 sqrt(n) + 2]`, outside of
/// which every element of `Π_n` is negligible.
pub fn error_norms(f_fine: &[f64], e: &HermiteExpansion, grid: &[f64]) -> Result<ErrorNorms> {
    if grid.len() < 2 {
        return Err(Error::Config("error grid needs at least two points".into()));
    }
    if f_fine.len() != grid.len() {
        return Err(Error::Shape {
            what: "function values on error grid",
            expected: grid.len(),
            actual: f_fine.len(),
        });
    }
    let step = (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64;
    if !(step > 0.0)
        || grid
            .windows(2)
            .any(|w| ((w[1] - w[0]) - step).abs() > 1e-9 * step.max(1.0))
    {
        return Err(Error::Config("error grid must be uniform and increasing".into()));
    }
    let reach = 2.0 * (e.n as f64).sqrt() + 2.0;
    if grid[0] > -reach || grid[grid.len() - 1] < reach {
        return Err(Error::Config(format!(
            "error grid [{}, {}] does not cover [-{reach:.3}, {reach:.3}]",
            grid[0],
            grid[grid.len() - 1]
        )));
    }
    let approx = e.evaluate_many(grid);
    let diffs: Vec<f64> = f_fine.iter().zip(&approx).map(|(f, s)| (f - s).abs()).collect();
    let inner: f64 = diffs[1..diffs.len() - 1].iter().sum();
    let l1 = step * (inner + 0.5 * (diffs[0] + diffs[diffs.len() - 1]));
    let linf = diffs.iter().fold(0.0f64, |a, v| a.max(*v));
    Ok(ErrorNorms { l1, linf })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::{eval_psi, glambda, glambda_coefficients};
    use crate::measures::{equispaced_measure, gauss_measure};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
        (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect()
    }

    #[test]
    fn gram_is_identity_for_gauss() {
        let mu = gauss_measure(32).unwrap();
        for n in [1, 8, 32] {
            let g = GramSystem::new(&mu, n).unwrap();
            let id = DMatrix::<f64>::identity(n, n);
            assert!((g.gram() - id).amax() < 1e-12);
            assert!((g.gram() - g.gram().transpose()).amax() < 1e-12);
            assert!(g.cond_estimate() < 1.0 + 1e-10);
        }
    }

    #[test]
    fn unit_vector_recovered() {
        let mu = gauss_measure(32).unwrap();
        let samples: Vec<f64> = mu.nodes.iter().map(|&x| eval_psi(3, x).unwrap()).collect();
        let c = raw_coefficients(&samples, &mu, 8).unwrap();
        for (k, v) in c.iter().enumerate() {
            assert_abs_diff_eq!(*v, if k == 3 { 1.0 } else { 0.0 }, epsilon = 1e-12);
        }
    }

    #[test]
    fn glambda_coefficients_from_quadrature() {
        let mu = gauss_measure(64).unwrap();
        let samples: Vec<f64> = mu.nodes.iter().map(|&x| glambda(1.0, x)).collect();
        let c = raw_coefficients(&samples, &mu, 16).unwrap();
        let exact = glambda_coefficients(1.0, 16).unwrap();
        for (a, b) in c.iter().zip(&exact) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-8);
        }
    }

    #[test]
    fn zero_and_shape_errors() {
        let mu = gauss_measure(8).unwrap();
        assert_eq!(raw_coefficients(&[0.0; 8], &mu, 4).unwrap(), vec![0.0; 4]);
        assert!(matches!(raw_coefficients(&[0.0; 7], &mu, 4), Err(Error::Shape { .. })));
        assert!(matches!(fit(&[0.0; 8], &mu, 9), Err(Error::Config(_))));
        assert!(matches!(fit(&[0.0; 8], &mu, 0), Err(Error::Config(_))));
    }

    #[test]
    fn reproduces_members_of_the_span() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let equi = equispaced_measure(16, -8.0, 8.0, None).unwrap();
        for mu in [gauss_measure(24).unwrap(), equi] {
            let n = 12;
            let coeffs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = HermiteExpansion::from_coeffs(coeffs.clone(), mu.kind);
            let samples = p.evaluate_many(&mu.nodes);
            let e = fit(&samples, &mu, n).unwrap();
            for (a, b) in e.coeffs.iter().zip(&coeffs) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn equispaced_and_gauss_agree() {
        let f = |x: f64| glambda(1.0, x);
        let gauss = gauss_measure(64).unwrap();
        let equi = equispaced_measure(16, -12.0, 12.0, None).unwrap();
        let a = fit(&gauss.nodes.iter().map(|&x| f(x)).collect::<Vec<_>>(), &gauss, 16).unwrap();
        let b = fit(&equi.nodes.iter().map(|&x| f(x)).collect::<Vec<_>>(), &equi, 16).unwrap();
        for (x, y) in a.coeffs.iter().zip(&b.coeffs) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-6);
        }
    }

    #[test]
    fn approximation_error_decays_super_geometrically() {
        let mu = gauss_measure(64).unwrap();
        let samples: Vec<f64> = mu.nodes.iter().map(|&x| glambda(1.0, x)).collect();
        let grid = uniform_grid(-16.0, 16.0, 6401);
        let f_fine: Vec<f64> = grid.iter().map(|&x| glambda(1.0, x)).collect();
        let l1: Vec<f64> = [4, 8, 12, 16]
            .iter()
            .map(|&n| error_norms(&f_fine, &fit(&samples, &mu, n).unwrap(), &grid).unwrap().l1)
            .collect();
        let ratios: Vec<f64> = l1.windows(2).map(|w| w[1] / w[0]).collect();
        assert!(ratios.iter().all(|r| *r < 1.0), "{l1:?}");
        assert!(ratios.windows(2).all(|w| w[1] < w[0]), "{ratios:?}");
    }

    #[test]
    fn l1_error_decreasing_in_degree_for_rate_two() {
        let mu = gauss_measure(96).unwrap();
        let samples: Vec<f64> = mu.nodes.iter().map(|&x| glambda(2.0, x)).collect();
        let grid = uniform_grid(-18.0, 18.0, 7201);
        let f_fine: Vec<f64> = grid.iter().map(|&x| glambda(2.0, x)).collect();
        let l1: Vec<f64> = [8, 16, 32, 48]
            .iter()
            .map(|&n| error_norms(&f_fine, &fit(&samples, &mu, n).unwrap(), &grid).unwrap().l1)
            .collect();
        assert!(l1.windows(2).all(|w| w[1] < w[0]), "{l1:?}");
    }

    #[test]
    fn error_norms_members_and_bad_grids() {
        let e = HermiteExpansion::from_coeffs(vec![0.3, -0.2, 0.1], MeasureKind::Gauss);
        let grid = uniform_grid(-6.0, 6.0, 2001);
        let f = e.evaluate_many(&grid);
        let norms = error_norms(&f, &e, &grid).unwrap();
        assert!(norms.l1 < 1e-9 && norms.linf < 1e-9);
        assert!(matches!(error_norms(&[], &e, &[]), Err(Error::Config(_))));
        let narrow = uniform_grid(-1.0, 1.0, 11);
        assert!(matches!(error_norms(&[0.0; 11], &e, &narrow), Err(Error::Config(_))));
        let mut bumpy = uniform_grid(-6.0, 6.0, 101);
        bumpy[50] += 0.01;
        assert!(matches!(error_norms(&vec![0.0; 101], &e, &bumpy), Err(Error::Config(_))));
    }

    #[test]
    fn fourier_eigenvalues() {
        let grid = uniform_grid(-5.0, 5.0, 41);
        let e0 = HermiteExpansion::from_coeffs(vec![1.0], MeasureKind::Gauss);
        let e2 = HermiteExpansion::from_coeffs(vec![0.0, 0.0, 1.0], MeasureKind::Gauss);
        for (w, v) in grid.iter().zip(fourier_of_expansion(&e0, &grid)) {
            assert_abs_diff_eq!(v.re, eval_psi(0, *w).unwrap(), epsilon = 1e-15);
            assert_eq!(v.im, 0.0);
        }
        for (w, v) in grid.iter().zip(fourier_of_expansion(&e2, &grid)) {
            assert_abs_diff_eq!(v.re, -eval_psi(2, *w).unwrap(), epsilon = 1e-15);
        }
    }

    #[test]
    fn fourier_of_fit_matches_numerical_transform() {
        let mu = gauss_measure(64).unwrap();
        let samples: Vec<f64> = mu.nodes.iter().map(|&x| glambda(1.0, x)).collect();
        let e = fit(&samples, &mu, 32).unwrap();
        let omegas = uniform_grid(-6.0, 6.0, 49);
        let approx = fourier_of_expansion(&e, &omegas);
        // Oracle: trapezoid transform of g_1 on a wide fine grid.
        let h = 2e-3;
        let ts = uniform_grid(-20.0, 20.0, (40.0 / h) as usize + 1);
        let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        for (w, a) in omegas.iter().zip(approx) {
            let exact: Complex64 = ts
                .iter()
                .map(|&t| Complex64::from_polar(glambda(1.0, t) * h * norm, -w * t))
                .sum();
            assert!((exact - a).norm() < 1e-6, "omega {w}: {exact} vs {a}");
        }
    }

    #[test]
    fn idempotent_projection() {
        let mu = equispaced_measure(16, -8.0, 8.0, None).unwrap();
        let g = GramSystem::new(&mu, 12).unwrap();
        let samples: Vec<f64> = mu.nodes.iter().map(|&x| (x * 0.7).cos() * glambda(0.4, x)).collect();
        let first = g.fit(&samples).unwrap();
        let second = g.fit(&first.evaluate_many(&mu.nodes)).unwrap();
        for (a, b) in first.coeffs.iter().zip(&second.coeffs) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn uniform_norm_stability_constant() {
        // ‖S_n f‖_∞ ≤ C sqrt(n) ‖f‖_∞ over random bounded f; C stays put across n.
        let mu = gauss_measure(64).unwrap();
        let grid = uniform_grid(-14.0, 14.0, 2801);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut constants = Vec::new();
        for n in [8, 16, 32] {
            let g = GramSystem::new(&mu, n).unwrap();
            let mut worst = 0.0f64;
            for _ in 0..200 {
                let samples: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
                let sup_f = samples.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let e = g.fit(&samples).unwrap();
                let sup_s = e.evaluate_many(&grid).iter().fold(0.0f64, |a, v| a.max(v.abs()));
                worst = worst.max(sup_s / ((n as f64).sqrt() * sup_f));
            }
            constants.push(worst);
        }
        let max = constants.iter().cloned().fold(0.0, f64::max);
        let min = constants.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max / min < 2.0, "{constants:?}");
    }

    #[test]
    fn expansion_json_schema() {
        let e = HermiteExpansion::from_coeffs(vec![1.0, 2.0], MeasureKind::Gauss);
        let v: serde_json::Value = serde_json::from_str(&e.to_json().unwrap()).unwrap();
        assert_eq!(v["n"], 2);
        assert_eq!(v["measure_kind"], "gauss");
        assert_eq!(HermiteExpansion::from_json(&e.to_json().unwrap()).unwrap(), e);
        assert!(HermiteExpansion::from_json(r#"{"n":3,"m":3,"measure_kind":"gauss","coeffs":[1.0]}"#).is_err());
    }
}
