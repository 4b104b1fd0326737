use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use l2f_core::measures::MeasureKind;
use l2f_core::pipeline::{L2FConfig, Method};
use l2f_core::simlab::{snr_serde, NoiseSpec, SignalModel};
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    L2f,
    Nlls,
    Both,
}

impl MethodChoice {
    pub fn methods(self) -> Vec<Method> {
        match self {
            MethodChoice::L2f => vec![Method::L2f],
            MethodChoice::Nlls => vec![Method::Nlls],
            MethodChoice::Both => vec![Method::L2f, Method::Nlls],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MeasureChoice {
    Gauss,
    Equispaced,
    TruncatedLebesgue,
}

impl From<MeasureChoice> for MeasureKind {
    fn from(m: MeasureChoice) -> Self {
        match m {
            MeasureChoice::Gauss => MeasureKind::Gauss,
            MeasureChoice::Equispaced => MeasureKind::Equispaced,
            MeasureChoice::TruncatedLebesgue => MeasureKind::TruncatedLebesgue,
        }
    }
}

/// Everything one invocation needs. Keys match the long flag names with `-` → `_`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `[T21, T22, A1, A2]`, times in ms.
    #[serde(deserialize_with = "model_from_any")]
    pub model: [f64; 4],
    #[serde(serialize_with = "snr_list_to", deserialize_with = "snr_list_from")]
    pub snr: Vec<f64>,
    pub realizations: usize,
    pub seed: u64,
    pub method: MethodChoice,
    pub n: usize,
    pub m: usize,
    pub tau: f64,
    pub duration_ms: f64,
    pub sample_count: usize,
    pub shift_schedule: Option<Vec<f64>>,
    pub shift: Option<f64>,
    pub delta: Option<f64>,
    pub bandwidth: usize,
    pub omega_max: f64,
    pub measure: MeasureChoice,
    pub refine: bool,
    pub jobs: Option<usize>,
    pub trace: bool,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let core = L2FConfig::default();
        Self {
            model: [10.0, 50.0, 0.5, 0.5],
            snr: vec![f64::INFINITY, 1e6, 1e5, 1e4],
            realizations: 100,
            seed: 0,
            method: MethodChoice::Both,
            n: core.n,
            m: core.m,
            tau: core.tau,
            duration_ms: core.duration_ms,
            sample_count: core.sample_count,
            shift_schedule: None,
            shift: None,
            delta: None,
            bandwidth: core.bandwidth,
            omega_max: core.omega_max,
            measure: MeasureChoice::Gauss,
            refine: core.refine,
            jobs: None,
            trace: false,
            out: PathBuf::from("."),
        }
    }
}

fn model_from_any<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; 4], D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        List(Vec<f64>),
        Text(String),
    }
    match Repr::deserialize(d)? {
        Repr::List(v) => v
            .try_into()
            .map_err(|v: Vec<f64>| de::Error::custom(format!("model needs 4 values, got {}", v.len()))),
        Repr::Text(t) => parse_model(&t).map_err(de::Error::custom),
    }
}

fn snr_list_to<S: Serializer>(list: &[f64], s: S) -> Result<S::Ok, S::Error> {
    let text: Vec<String> = list
        .iter()
        .map(|v| if v.is_infinite() { "inf".to_string() } else { v.to_string() })
        .collect();
    s.serialize_str(&text.join(","))
}

fn snr_list_from<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Item {
        Number(f64),
        Text(String),
    }
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        One(Item),
        Many(Vec<Item>),
    }
    let items = match Repr::deserialize(d)? {
        Repr::One(Item::Text(t)) => return parse_snr_list(&t).map_err(de::Error::custom),
        Repr::One(i) => vec![i],
        Repr::Many(v) => v,
    };
    items
        .into_iter()
        .map(|i| match i {
            Item::Number(v) => Ok(v),
            Item::Text(t) => snr_serde::parse(&t).map_err(de::Error::custom),
        })
        .collect()
}

pub fn parse_model(text: &str) -> Result<[f64; 4], String> {
    let values = parse_list(text)?;
    values
        .try_into()
        .map_err(|v: Vec<f64>| format!("--model needs T21,T22,A1,A2 (4 values), got {}", v.len()))
}

pub fn parse_snr_list(text: &str) -> Result<Vec<f64>, String> {
    text.split(',').map(snr_serde::parse).collect()
}

pub fn parse_list(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("invalid number '{}'", t.trim())))
        .collect()
}

/// Flags shared by every subcommand; each overrides the matching config key.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Config file (JSON or TOML); flags take precedence over its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Biexponential model as T21,T22,A1,A2 (ms, ms, amplitude, amplitude).
    #[arg(long, global = true, value_name = "T21,T22,A1,A2")]
    pub model: Option<String>,
    /// SNR value or comma-separated list; `inf` means noiseless.
    #[arg(long, global = true, value_name = "SNR[,SNR...]")]
    pub snr: Option<String>,
    #[arg(long, global = true)]
    pub realizations: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub method: Option<MethodChoice>,
    /// Expansion degree.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Quadrature order.
    #[arg(long, global = true)]
    pub m: Option<usize>,
    /// Milliseconds per dimensionless time unit.
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    #[arg(long, global = true)]
    pub duration_ms: Option<f64>,
    #[arg(long, global = true)]
    pub sample_count: Option<usize>,
    /// Comma-separated dimensionless shifts.
    #[arg(long, global = true, value_name = "L[,L...]")]
    pub shift_schedule: Option<String>,
    /// Single dimensionless shift for `expand` and `spectrum`.
    #[arg(long, global = true)]
    pub shift: Option<f64>,
    /// Frequency step of the demodulated samples.
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    /// Filter bandwidth N.
    #[arg(long, global = true)]
    pub bandwidth: Option<usize>,
    #[arg(long, global = true)]
    pub omega_max: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub measure: Option<MeasureChoice>,
    /// Disable parabolic peak refinement.
    #[arg(long, global = true)]
    pub no_refine: bool,
    /// Worker threads for Monte Carlo batches.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Write per-shift estimation traces as JSON.
    #[arg(long, global = true)]
    pub trace: bool,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

fn parse_file(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
    let bad = |e: String| CliError::Validation(format!("invalid config {}: {e}", path.display()));
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text).map_err(|e| bad(e.to_string())),
        Some("json") => serde_json::from_str(&text).map_err(|e| bad(e.to_string())),
        _ => serde_json::from_str(&text).or_else(|_| toml::from_str(&text).map_err(|e| bad(e.to_string()))),
    }
}

impl RunConfig {
    pub fn resolve(o: &Overrides) -> CliResult<Self> {
        let mut cfg = match &o.config {
            Some(path) => parse_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! take {
            ($($field:ident),*) => {$( if let Some(v) = o.$field.clone() { cfg.$field = v; } )*};
        }
        take!(realizations, seed, method, n, m, tau, duration_ms, sample_count, bandwidth, omega_max, measure, out);
        if let Some(text) = &o.model {
            cfg.model = parse_model(text).map_err(CliError::Validation)?;
        }
        if let Some(text) = &o.snr {
            cfg.snr = parse_snr_list(text).map_err(CliError::Validation)?;
        }
        if let Some(text) = &o.shift_schedule {
            cfg.shift_schedule = Some(parse_list(text).map_err(CliError::Validation)?);
        }
        if o.shift.is_some() {
            cfg.shift = o.shift;
        }
        if o.delta.is_some() {
            cfg.delta = o.delta;
        }
        if o.jobs.is_some() {
            cfg.jobs = o.jobs;
        }
        cfg.refine &= !o.no_refine;
        cfg.trace |= o.trace;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.l2f().validate()?;
        self.signal_model()?;
        if self.snr.is_empty() {
            return Err(CliError::Validation("at least one SNR value is required".into()));
        }
        if let Some(bad) = self.snr.iter().find(|s| !(**s > 0.0)) {
            return Err(CliError::Validation(format!("SNR must be positive, got {bad}")));
        }
        if self.realizations == 0 {
            return Err(CliError::Validation("realizations must be at least 1".into()));
        }
        if self.jobs == Some(0) {
            return Err(CliError::Validation("jobs must be at least 1".into()));
        }
        let total = self.duration_ms / self.tau;
        for s in self.shift.iter().chain(self.shift_schedule.iter().flatten()) {
            if !(*s > 0.0 && *s < total) {
                return Err(CliError::Validation(format!("shift {s} outside (0, {total})")));
            }
        }
        Ok(())
    }

    pub fn l2f(&self) -> L2FConfig {
        L2FConfig {
            n: self.n,
            m: self.m,
            tau: self.tau,
            duration_ms: self.duration_ms,
            sample_count: self.sample_count,
            shift_schedule: self.shift_schedule.clone(),
            delta: self.delta,
            bandwidth: self.bandwidth,
            omega_max: self.omega_max,
            measure_kind: self.measure.into(),
            refine: self.refine,
        }
    }

    pub fn signal_model(&self) -> CliResult<SignalModel> {
        let [t21, t22, a1, a2] = self.model;
        Ok(SignalModel::biexp(a1, a2, t21, t22, &self.l2f())?)
    }

    pub fn noise(&self, snr: f64) -> NoiseSpec {
        NoiseSpec {
            snr,
            seed: self.seed,
            realizations: self.realizations,
        }
    }

    /// SNR used by single-signal commands.
    pub fn primary_snr(&self) -> f64 {
        self.snr[0]
    }

    pub fn to_json(&self) -> CliResult<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parsers() {
        assert_eq!(parse_model("10,50,0.5,0.5").unwrap(), [10.0, 50.0, 0.5, 0.5]);
        assert!(parse_model("10,50").is_err());
        assert_eq!(parse_snr_list("inf,1e4").unwrap(), vec![f64::INFINITY, 1e4]);
        assert!(parse_list("1,x").is_err());
    }

    #[test]
    fn json_and_toml_agree() {
        let json = r#"{"model": [40, 60, 0.5, 0.5], "snr": ["inf", 1e6], "realizations": 7}"#;
        let toml_text = "model = \"40,60,0.5,0.5\"\nsnr = \"inf,1e6\"\nrealizations = 7\n";
        let a: RunConfig = serde_json::from_str(json).unwrap();
        let b: RunConfig = toml::from_str(toml_text).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.model, [40.0, 60.0, 0.5, 0.5]);
        assert_eq!(a.snr, vec![f64::INFINITY, 1e6]);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"bandwith": 32}"#).is_err());
        assert!(toml::from_str::<RunConfig>("bandwith = 32").is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn validation_catches_bad_values() {
        let bad = RunConfig {
            n: 0,
            ..RunConfig::default()
        };
        assert!(matches!(bad.validate(), Err(CliError::Validation(_))));
        let bad = RunConfig {
            snr: vec![-1.0],
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = RunConfig {
            shift: Some(20.0),
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
