use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use l2f_core::leastsq::GramSystem;
use l2f_core::pipeline::{estimate_t22, shift_and_weight, spectrum_at_shift, t2_from_rate, SignalSource};
use l2f_core::simlab::{add_noise, run_batch, write_summary_csv, BatchReport};
use l2f_core::spectrum::signed_rate_from_peak;
use log::info;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn prepare_out(cfg: &RunConfig, command: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", cfg.out.display())))?;
    write_text(&cfg.out.join(format!("{command}.config.json")), &cfg.to_json()?)?;
    Ok(cfg.out.clone())
}

fn source(cfg: &RunConfig) -> CliResult<SignalSource> {
    let model = cfg.signal_model()?;
    let snr = cfg.primary_snr();
    Ok(if snr.is_infinite() {
        SignalSource::Synthetic(model)
    } else {
        SignalSource::Noisy {
            model,
            snr,
            seed: cfg.seed,
            realization: 0,
        }
    })
}

/// Shift to use for single-shift commands, with its noise stream.
fn pick_shift(cfg: &RunConfig, src: &SignalSource) -> CliResult<(f64, u64)> {
    if let Some(s) = cfg.shift {
        return Ok((s, 1));
    }
    let trace = estimate_t22(src, &cfg.l2f())?;
    if cfg.trace {
        write_text(&cfg.out.join("trace.json"), &trace.to_json()?)?;
    }
    Ok((trace.shifts[trace.chosen_shift].shift, trace.chosen_shift as u64 + 1))
}

pub fn simulate(cfg: &RunConfig) -> CliResult<()> {
    let out = prepare_out(cfg, "simulate")?;
    let model = cfg.signal_model()?;
    let clean = model.synth();
    let noisy = add_noise(&clean, &cfg.noise(cfg.primary_snr()), 0)?;
    let mut w = csv::Writer::from_writer(create(&out.join("signal.csv"))?);
    w.write_record(["time_ms", "noiseless", "noisy"])?;
    for ((t, c), y) in model.times().iter().zip(&clean).zip(&noisy) {
        w.write_record([t.to_string(), c.to_string(), y.to_string()])?;
    }
    w.flush()?;
    info!("wrote {} samples to {}", clean.len(), out.join("signal.csv").display());
    Ok(())
}

#[derive(Serialize)]
struct ExpansionDump<'a> {
    shift: f64,
    max_abs_error: f64,
    expansion: &'a l2f_core::HermiteExpansion,
}

pub fn expand(cfg: &RunConfig) -> CliResult<()> {
    let out = prepare_out(cfg, "expand")?;
    let src = source(cfg)?;
    let l2f = cfg.l2f();
    let (shift, stream) = pick_shift(cfg, &src)?;
    let measure = l2f.measure()?;
    let values = shift_and_weight(&src, &measure, shift, &l2f, stream)?;
    let mut e = GramSystem::new(&measure, l2f.n)?.fit(&values)?;
    let total = l2f.rescaled_duration();
    e.window = Some((-shift, total - shift));

    let model = cfg.signal_model()?;
    let points = 1601;
    let xs: Vec<f64> = (0..points)
        .map(|i| -shift + total * i as f64 / (points - 1) as f64)
        .collect();
    let approx = e.evaluate_many(&xs);
    let mut w = csv::Writer::from_writer(create(&out.join("expansion_error.csv"))?);
    w.write_record(["x", "signal", "expansion", "abs_error"])?;
    let mut worst = 0.0f64;
    for (x, s) in xs.iter().zip(&approx) {
        let f = model.eval((x + shift) * l2f.tau) * (-0.5 * x * x).exp();
        worst = worst.max((f - s).abs());
        w.write_record([x.to_string(), f.to_string(), s.to_string(), (f - s).abs().to_string()])?;
    }
    w.flush()?;
    let dump = ExpansionDump {
        shift,
        max_abs_error: worst,
        expansion: &e,
    };
    write_text(&out.join("expansion.json"), &serde_json::to_string_pretty(&dump)?)?;
    info!("shift {shift:.4}: max abs error {worst:.3e}");
    Ok(())
}

#[derive(Serialize)]
struct PeakAnnotation {
    shift: f64,
    delta: f64,
    bandwidth: usize,
    x_star: f64,
    height: f64,
    runner_up_height: f64,
    rate: f64,
    t22_ms: f64,
}

pub fn spectrum(cfg: &RunConfig) -> CliResult<()> {
    let out = prepare_out(cfg, "spectrum")?;
    let src = source(cfg)?;
    let l2f = cfg.l2f();
    let (shift, stream) = pick_shift(cfg, &src)?;
    let spec = spectrum_at_shift(&src, &l2f, shift, stream)?;
    spec.write_csv(create(&out.join("spectrum.csv"))?)?;
    let peak = spec
        .dominant()
        .ok_or_else(|| CliError::Estimation(format!("no spectral peak at shift {shift}")))?;
    let rate = signed_rate_from_peak(peak.x, spec.delta)?;
    if !(rate > 0.0) {
        return Err(CliError::Estimation(format!(
            "dominant peak at x = {:.4} gives a non-positive rate",
            peak.x
        )));
    }
    let note = PeakAnnotation {
        shift,
        delta: spec.delta,
        bandwidth: spec.bandwidth,
        x_star: peak.x,
        height: peak.height,
        runner_up_height: spec.runner_up_height(),
        rate,
        t22_ms: t2_from_rate(rate, l2f.tau),
    };
    write_text(&out.join("spectrum.json"), &serde_json::to_string_pretty(&note)?)?;
    println!("shift {shift:.4}  x* {:.6}  T22 {:.4} ms", note.x_star, note.t22_ms);
    Ok(())
}

#[derive(Serialize)]
struct ExperimentDump<'a> {
    config: &'a RunConfig,
    batches: Vec<&'a l2f_core::BatchStats>,
}

fn snr_label(snr: f64) -> String {
    if snr.is_infinite() {
        "inf".into()
    } else {
        format!("{snr:e}")
    }
}

pub fn experiment(cfg: &RunConfig) -> CliResult<()> {
    let out = prepare_out(cfg, "experiment")?;
    let model = cfg.signal_model()?;
    let l2f = cfg.l2f();
    let mut reports: Vec<BatchReport> = Vec::new();
    for &snr in &cfg.snr {
        for method in cfg.method.methods() {
            let report = run_batch(&model, &cfg.noise(snr), method, &l2f, cfg.jobs)?;
            let t22 = report.stats.params["T22"];
            info!(
                "{method} snr={}: T22 mean {:.4} stdev {:.4} rmse {:.4}, {} failures, {:.2} s",
                snr_label(snr),
                t22.mean,
                t22.stdev,
                t22.rmse,
                report.stats.failure_count,
                report.wall_seconds
            );
            report.write_records_csv(create(&out.join(format!("records_{method}_snr_{}.csv", snr_label(snr))))?)?;
            reports.push(report);
        }
    }
    write_summary_csv(&reports, create(&out.join("summary.csv"))?)?;
    let dump = ExperimentDump {
        config: cfg,
        batches: reports.iter().map(|r| &r.stats).collect(),
    };
    write_text(&out.join("experiment.json"), &serde_json::to_string_pretty(&dump)?)?;
    Ok(())
}
