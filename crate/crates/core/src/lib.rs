//! Parameter estimation for multiexponential decay by Hermite expansion and
//! Fourier peak detection, with a bound-constrained least-squares finish.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod hermite;
pub mod leastsq;
pub mod measures;
pub mod nlls;
pub mod pipeline;
pub mod simlab;
pub mod spectrum;
pub mod spline;

pub use error::{Error, Result};
pub use hermite::{gauss_rule, GaussRule, HermiteBasis};
pub use leastsq::{GramSystem, HermiteExpansion};
pub use measures::{MeasureKind, SmzMeasure};
pub use nlls::{FitProblem, FitResult, ModelKind};
pub use pipeline::{EstimationResult, L2FConfig, L2FTrace, Method, SignalSource};
pub use simlab::{BatchReport, BatchStats, NoiseSpec, SignalModel};
pub use spectrum::{LowpassFilter, SpectrumEstimate};
