//! Single training runs: data synthesis, training, and result summaries.

use std::path::Path;
use std::time::Instant;

use mode_qst::analysis::{fidelity, kl_divergence, nll};
use mode_qst::rng::{domain, stream};
use mode_qst::states::{sample_measurements, MeasurementDataset, TargetState};
use mode_qst::trainer::{train_with_hook, CheckpointHook, TrainConfig, TrainTrace};
use mode_qst::{Rbm, ENUMERATION_CAP};
use serde::Serialize;

use crate::config::StateSpec;
use crate::{write_file, CliError};

/// Checkpoint cadence during `train`.
pub const CHECKPOINT_EVERY: usize = 10_000;

/// Measurement data for `spec`, drawn from the dataset stream of `seed`.
pub fn synthesize(spec: &StateSpec, target: &TargetState, count: usize, seed: u64) -> Result<MeasurementDataset, CliError> {
    let mut rng = stream(seed, domain::DATASET, 0);
    let mut ds = sample_measurements(&spec.source(target), count, &mut rng)?;
    ds.label = spec.label();
    ds.seed = Some(seed);
    Ok(ds)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunMetrics {
    pub fidelity: Option<f64>,
    pub kl: Option<f64>,
    pub nll: Option<f64>,
}

/// Metrics of `rbm` against a target and/or dataset, where enumeration allows.
pub fn evaluate(rbm: &Rbm, target: Option<&TargetState>, dataset: Option<&MeasurementDataset>) -> Result<RunMetrics, CliError> {
    if rbm.n_visible() > ENUMERATION_CAP {
        return Err(CliError::Capacity(format!(
            "cannot evaluate a {}-visible model exactly (limit {ENUMERATION_CAP})",
            rbm.n_visible()
        )));
    }
    let (fid, kl) = match target {
        Some(t) => (Some(fidelity(t, rbm)?), Some(kl_divergence(&t.distribution(), rbm)?)),
        None => (None, None),
    };
    let nll = match dataset {
        Some(d) if !d.is_empty() => Some(nll(d, rbm)?),
        _ => None,
    };
    Ok(RunMetrics { fidelity: fid, kl, nll })
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub state: String,
    pub n_qubits: usize,
    pub measurements: usize,
    pub final_metrics: RunMetrics,
    pub median_fidelity: Option<f64>,
    pub best_fidelity: Option<f64>,
    pub final_lr: Option<f64>,
    pub mode_updates: usize,
    pub warnings: Vec<String>,
    pub config: TrainConfig,
    pub wall_time_s: f64,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let k = values.len();
    Some(if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    })
}

/// Trains on `dataset` and writes `trace.csv`, `checkpoint.json`, and
/// `summary.json` into `out`.
pub fn train_to_dir(
    dataset: &MeasurementDataset,
    target: Option<&TargetState>,
    cfg: &TrainConfig,
    out: &Path,
) -> Result<(TrainTrace, TrainSummary), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let checkpoint = out.join("checkpoint.json");
    let start = Instant::now();
    let mut save = |it: usize, rbm: &Rbm| -> mode_qst::Result<()> {
        log::info!("iteration {it}: writing {}", checkpoint.display());
        rbm.save_checkpoint(&checkpoint)
    };
    let hook = CheckpointHook {
        every: CHECKPOINT_EVERY,
        callback: &mut save,
    };
    let trace = train_with_hook(dataset, target, cfg, Some(hook))?;
    if cfg.n_max == 0 {
        trace.final_model.save_checkpoint(&out.join("checkpoint.json"))?;
    }
    let final_metrics = if dataset.n_qubits <= ENUMERATION_CAP {
        evaluate(&trace.final_model, target, Some(dataset))?
    } else {
        RunMetrics { fidelity: None, kl: None, nll: None }
    };
    let mut fids: Vec<f64> = trace.records.iter().filter_map(|r| r.fidelity).collect();
    let best = fids.iter().cloned().reduce(f64::max);
    let summary = TrainSummary {
        state: dataset.label.clone(),
        n_qubits: dataset.n_qubits,
        measurements: dataset.total_count(),
        final_metrics,
        median_fidelity: median(&mut fids),
        best_fidelity: best,
        final_lr: trace.records.last().map(|r| r.lr),
        mode_updates: trace.mode_update_iterations.len(),
        warnings: trace.warnings.clone(),
        config: cfg.clone(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    write_file(&out.join("trace.csv"), &trace.to_csv())?;
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Io(e.to_string()))?;
    write_file(&out.join("summary.json"), &(json + "\n"))?;
    Ok((trace, summary))
}
