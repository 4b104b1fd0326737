//! Shared fixtures for the benchmarks.

use l2f_core::pipeline::SignalSource;
use l2f_core::{L2FConfig, SignalModel};

/// Two-component decay on the default acquisition grid.
pub fn reference_model() -> SignalModel {
    SignalModel::biexp(0.5, 0.5, 10.0, 50.0, &L2FConfig::default()).expect("valid model")
}

pub fn noisy_source(snr: f64, realization: u64) -> SignalSource {
    SignalSource::Noisy {
        model: reference_model(),
        snr,
        seed: 0,
        realization,
    }
}
