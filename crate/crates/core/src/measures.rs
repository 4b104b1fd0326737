//! Discrete positive measures with the strong Marcinkiewicz–Zygmund property.
//!
//! A measure `ν` of order `m` qualifies when `∫|P|² dν ~ ∫|P|² dt` for every
//! `P ∈ Π_m` and `‖ν‖_TV ~ sqrt(m)`. Three constructions are provided: the
//! Gauss–Hermite rule, equispaced nodes carrying their spacing as mass, and a
//! (discretized) Lebesgue measure truncated to `[-2 sqrt(m), 2 sqrt(m)]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::{self, psi_into};

/// Default `c₁` in the spacing condition `spacing ≤ c₁ m^{-1/2}`.
pub const DEFAULT_SPACING_CONSTANT: f64 = 0.25;
/// Trials used when a constructor validates itself.
pub const VALIDATION_TRIALS: usize = 200;
const VALIDATION_SEED: u64 = 0x5_3D2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    Gauss,
    Equispaced,
    TruncatedLebesgue,
}

impl MeasureKind {
    /// Accepted range for the MZ ratio `Σ w|P|² / ‖P‖²`.
    pub fn ratio_bounds(self) -> (f64, f64) {
        match self {
            MeasureKind::Gauss => (1.0 - 1e-10, 1.0 + 1e-10),
            MeasureKind::Equispaced | MeasureKind::TruncatedLebesgue => (0.75, 1.25),
        }
    }
}

impl std::fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MeasureKind::Gauss => "gauss",
            MeasureKind::Equispaced => "equispaced",
            MeasureKind::TruncatedLebesgue => "truncated_lebesgue",
        })
    }
}

/// A positive discrete measure with nodes in decreasing order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmzMeasure {
    pub kind: MeasureKind,
    #[serde(rename = "m")]
    pub order: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// `(L, R)` once the support has been certified inside `[-L, R]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<(f64, f64)>,
}

impl SmzMeasure {
    pub fn total_variation(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Runs [`validate_smz`] and rejects the measure if the ratios leave the
    /// bounds for its kind.
    pub fn validated(self, trials: usize) -> Result<Self> {
        let report = validate_smz(&self, trials, VALIDATION_SEED)?;
        let (lo, hi) = self.kind.ratio_bounds();
        if report.ratio_lo < lo || report.ratio_hi > hi {
            return Err(Error::Config(format!(
                "{} measure of order {} fails the MZ sandwich: ratios [{:.6}, {:.6}] outside [{lo}, {hi}]",
                self.kind, self.order, report.ratio_lo, report.ratio_hi
            )));
        }
        Ok(self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mu: SmzMeasure = serde_json::from_str(s)?;
        if mu.nodes.len() != mu.weights.len() {
            return Err(Error::Shape {
                what: "measure weights",
                expected: mu.nodes.len(),
                actual: mu.weights.len(),
            });
        }
        if mu.weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Config("measure weights must be strictly positive".into()));
        }
        Ok(mu)
    }
}

/// Gauss–Hermite measure of order `m`.
pub fn gauss_measure(m: usize) -> Result<SmzMeasure> {
    let rule = hermite::gauss_rule(m)?;
    Ok(SmzMeasure {
        kind: MeasureKind::Gauss,
        order: m,
        nodes: rule.nodes,
        weights: rule.weights,
        window: None,
    })
}

/// Equispaced measure on `[lo, hi]`.
///
/// With spacing `s`, the nodes are `hi, hi - s, …, lo + s` and each carries mass
/// `s` (the gap to its lower neighbour), so the total mass is `hi - lo`. The
/// spacing defaults to `c₁ m^{-1/2}` with `c₁ = 1/4`, shrunk so that it divides
/// the interval. The interval must cover `[-sqrt(2m), sqrt(2m)]`. The result is
/// validated by random sampling before it is returned.
pub fn equispaced_measure(m: usize, lo: f64, hi: f64, spacing: Option<f64>) -> Result<SmzMeasure> {
    if m == 0 {
        return Err(Error::Config("measure order must be at least 1".into()));
    }
    let reach = (2.0 * m as f64).sqrt();
    if !(lo <= -reach && hi >= reach) {
        return Err(Error::Config(format!(
            "interval [{lo}, {hi}] does not cover [-sqrt(2m), sqrt(2m)] = [{:.4}, {reach:.4}]",
            -reach
        )));
    }
    let max_spacing = DEFAULT_SPACING_CONSTANT / (m as f64).sqrt();
    let requested = spacing.unwrap_or(max_spacing);
    if !(requested > 0.0) || requested > max_spacing * (1.0 + 1e-12) {
        return Err(Error::Config(format!(
            "spacing {requested} violates the bound c1/sqrt(m) = {max_spacing:.6} (c1 = {DEFAULT_SPACING_CONSTANT})"
        )));
    }
    let cells = ((hi - lo) / requested - 1e-9).ceil().max(1.0) as usize;
    let s = (hi - lo) / cells as f64;
    let nodes: Vec<f64> = (0..cells).map(|k| hi - k as f64 * s).collect();
    let weights = vec![s; cells];
    SmzMeasure {
        kind: MeasureKind::Equispaced,
        order: m,
        nodes,
        weights,
        window: None,
    }
    .validated(VALIDATION_TRIALS)
}

/// Lebesgue measure on `[-2 sqrt(m), 2 sqrt(m)]`, discretized with 8-point
/// Gauss–Legendre panels of width at most 1/2.
pub fn truncated_lebesgue_measure(m: usize) -> Result<SmzMeasure> {
    if m == 0 {
        return Err(Error::Config("measure order must be at least 1".into()));
    }
    let half = 2.0 * (m as f64).sqrt();
    let panels = (2.0 * half / 0.5).ceil() as usize;
    let width = 2.0 * half / panels as f64;
    let (gl_nodes, gl_weights) = gauss_legendre(8);
    let mut pairs = Vec::with_capacity(panels * 8);
    for p in 0..panels {
        let mid = -half + (p as f64 + 0.5) * width;
        for (x, w) in gl_nodes.iter().zip(&gl_weights) {
            pairs.push((mid + 0.5 * width * x, 0.5 * width * w));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(SmzMeasure {
        kind: MeasureKind::TruncatedLebesgue,
        order: m,
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
        window: None,
    })
}

/// Gauss–Legendre rule on `[-1, 1]` by Newton iteration on `P_n`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp;
        loop {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j as f64 + 1.0);
            }
            dp = nf * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() <= 1e-15 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Certifies that every node lies in `[-L, R]` and records the window.
pub fn restrict_to_window(mu: &SmzMeasure, left: f64, right: f64) -> Result<SmzMeasure> {
    let offending: Vec<f64> = mu
        .nodes
        .iter()
        .copied()
        .filter(|&x| x < -left || x > right)
        .collect();
    if !offending.is_empty() {
        return Err(Error::Support {
            lo: -left,
            hi: right,
            count: offending.len(),
            offending,
        });
    }
    Ok(SmzMeasure {
        window: Some((left, right)),
        ..mu.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmzReport {
    pub ratio_lo: f64,
    pub ratio_hi: f64,
    pub tv_over_sqrt_m: f64,
}

/// Monte Carlo check of the MZ sandwich.
///
/// Draws `trials` standard-normal coefficient vectors `c ∈ ℝ^m`, forms
/// `P = Σ c_k ψ_k ∈ Π_m` and reports the extreme values of
/// `Σ_j w_j P(x_j)² / ‖c‖²` together with `‖ν‖_TV / sqrt(m)`.
pub fn validate_smz(mu: &SmzMeasure, trials: usize, seed: u64) -> Result<SmzReport> {
    if trials == 0 {
        return Err(Error::Config("validate_smz needs at least one trial".into()));
    }
    let m = mu.order;
    let basis: Vec<Vec<f64>> = mu
        .nodes
        .iter()
        .map(|&x| {
            let mut row = vec![0.0; m];
            psi_into(x, &mut row);
            row
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut coeffs = vec![0.0; m];
    for _ in 0..trials {
        for c in coeffs.iter_mut() {
            *c = StandardNormal.sample(&mut rng);
        }
        let norm2: f64 = coeffs.iter().map(|c| c * c).sum();
        let discrete: f64 = basis
            .iter()
            .zip(&mu.weights)
            .map(|(row, w)| {
                let p: f64 = row.iter().zip(&coeffs).map(|(a, b)| a * b).sum();
                w * p * p
            })
            .sum();
        let ratio = discrete / norm2;
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    Ok(SmzReport {
        ratio_lo: lo,
        ratio_hi: hi,
        tv_over_sqrt_m: mu.total_variation() / (m as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gauss_32_node_span() {
        let mu = gauss_measure(32).unwrap();
        assert_eq!(mu.len(), 32);
        let max = mu.nodes[0];
        assert!(max < (64f64).sqrt() * 1.1);
        assert_abs_diff_eq!(max, 7.125_813_909_830_728, epsilon = 1e-12);
    }

    #[test]
    fn gauss_1_is_origin() {
        assert_eq!(gauss_measure(1).unwrap().nodes, vec![0.0]);
    }

    #[test]
    fn gauss_exactness_ratio() {
        let mu = gauss_measure(32).unwrap();
        let r = validate_smz(&mu, 100, 1).unwrap();
        assert!((r.ratio_lo - 1.0).abs() <= 1e-10 && (r.ratio_hi - 1.0).abs() <= 1e-10);
        assert!(mu.validated(200).is_ok());
    }

    #[test]
    fn equispaced_default_example() {
        let mu = equispaced_measure(16, -8.0, 8.0, Some(1.0 / 16.0)).unwrap();
        assert_abs_diff_eq!(mu.total_variation(), 16.0, epsilon = 1e-12);
        assert!(mu.weights.iter().all(|w| (*w - 1.0 / 16.0).abs() < 1e-15));
        assert_eq!(mu.len(), 256);
        let r = validate_smz(&mu, 100, 7).unwrap();
        assert!(r.ratio_lo >= 0.75 && r.ratio_hi <= 1.25, "{r:?}");
    }

    #[test]
    fn equispaced_rejects_short_interval() {
        let err = equispaced_measure(4, -1.0, 1.0, None).unwrap_err();
        assert!(matches!(err, Error::Config(ref s) if s.contains("cover")), "{err}");
    }

    #[test]
    fn equispaced_rejects_coarse_spacing() {
        let err = equispaced_measure(16, -8.0, 8.0, Some(2.0)).unwrap_err();
        assert!(matches!(err, Error::Config(ref s) if s.contains("spacing")), "{err}");
    }

    #[test]
    fn truncated_lebesgue_is_smz() {
        let mu = truncated_lebesgue_measure(32).unwrap();
        let r = validate_smz(&mu, 200, 3).unwrap();
        assert!(r.ratio_hi <= 1.0 + 1e-9 && r.ratio_lo > 1.0 - 1e-6, "{r:?}");
        assert_abs_diff_eq!(r.tv_over_sqrt_m, 4.0, epsilon = 1e-12);
        assert!(mu.nodes.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn window_certification() {
        let mu = gauss_measure(32).unwrap();
        let ok = restrict_to_window(&mu, 8.1, 8.1).unwrap();
        assert_eq!(ok.window, Some((8.1, 8.1)));
        match restrict_to_window(&mu, 4.0, 4.0) {
            Err(Error::Support { count, offending, .. }) => {
                assert_eq!(count, offending.len());
                assert!(offending.iter().all(|x| x.abs() > 4.0));
            }
            other => panic!("expected support error, got {other:?}"),
        }
        let empty = SmzMeasure {
            kind: MeasureKind::Gauss,
            order: 0,
            nodes: vec![],
            weights: vec![],
            window: None,
        };
        assert!(restrict_to_window(&empty, 0.0, 0.0).is_ok());
    }

    #[test]
    fn single_trial_report_is_degenerate() {
        let mu = equispaced_measure(8, -4.0, 4.0, None).unwrap();
        let r = validate_smz(&mu, 1, 11).unwrap();
        assert_eq!(r.ratio_lo, r.ratio_hi);
        assert!(validate_smz(&mu, 0, 11).is_err());
    }

    #[test]
    fn tv_over_sqrt_m_stable_across_orders() {
        let ratios = |f: &dyn Fn(usize) -> SmzMeasure| -> Vec<f64> {
            [16, 32, 64]
                .iter()
                .map(|&m| validate_smz(&f(m), 200, 5).unwrap().tv_over_sqrt_m)
                .collect()
        };
        let gauss = ratios(&|m| gauss_measure(m).unwrap());
        let equi = ratios(&|m| {
            let r = (2.0 * m as f64).sqrt();
            equispaced_measure(m, -r, r, None).unwrap()
        });
        let leb = ratios(&|m| truncated_lebesgue_measure(m).unwrap());
        for set in [gauss, equi, leb] {
            let base = set[1];
            assert!(set.iter().all(|v| (v / base - 1.0).abs() <= 0.2), "{set:?}");
        }
    }

    #[test]
    fn json_round_trip_schema() {
        let mu = gauss_measure(4).unwrap();
        let text = mu.to_json().unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["kind"], "gauss");
        assert_eq!(value["m"], 4);
        assert_eq!(value["nodes"].as_array().unwrap().len(), 4);
        assert_eq!(SmzMeasure::from_json(&text).unwrap(), mu);
        let bad = r#"{"kind":"gauss","m":1,"nodes":[0.0],"weights":[-1.0]}"#;
        assert!(SmzMeasure::from_json(bad).is_err());
    }
}
