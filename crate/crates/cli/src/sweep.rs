//! Grid sweeps over state size, measurement count, noise, sampler, and
//! training method, with repetition aggregation and threshold interpolation.

use std::collections::BTreeMap;

use mode_qst::rng::{derive_seed, domain};
use mode_qst::states::TargetState;
use mode_qst::trainer::{train, SamplerKind, TrainConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{StateSpec, SweepConfig};
use crate::experiment::{median, synthesize};
use crate::CliError;

/// One grid cell; every repetition of a cell shares this key.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellKey {
    pub size: usize,
    pub count: usize,
    pub noise: f64,
    pub sampler: SamplerKind,
    pub mode_training: bool,
}

impl CellKey {
    fn method(&self) -> String {
        let s = sampler_name(self.sampler);
        if self.mode_training {
            format!("{s}+mode")
        } else {
            s.to_string()
        }
    }
}

pub fn sampler_name(s: SamplerKind) -> &'static str {
    match s {
        SamplerKind::Cd => "cd",
        SamplerKind::Pcd => "pcd",
        SamplerKind::Pt => "pt",
        SamplerKind::Exact => "exact",
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunResult {
    pub cell: usize,
    pub key: CellKey,
    pub repetition: usize,
    pub seed: u64,
    pub final_fidelity: f64,
    pub final_nll: f64,
    pub mode_updates: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellSummary {
    pub key: CellKey,
    pub state: String,
    pub runs: usize,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

/// Seed of repetition `rep`; independent of every other repetition.
pub fn repetition_seed(seed: u64, rep: usize) -> u64 {
    derive_seed(seed, domain::REPETITION, rep as u64)
}

/// Grid cells in a fixed order: size, noise, count, sampler, method.
pub fn grid(base: &StateSpec, sweep: &SweepConfig) -> Vec<(CellKey, StateSpec)> {
    let sizes = if sweep.sizes.is_empty() { vec![base.size()] } else { sweep.sizes.clone() };
    let noise = if sweep.noise.is_empty() { vec![base.noise()] } else { sweep.noise.clone() };
    let mut cells = Vec::new();
    for &size in &sizes {
        for &p in &noise {
            let spec = base.resized(size).with_noise(p);
            let spec = match spec {
                StateSpec::DepolarizedW { n, p } if p == 0.0 => StateSpec::W { n },
                s => s,
            };
            for &count in &sweep.counts {
                for &sampler in &sweep.samplers {
                    for &mode_training in &sweep.mode_training {
                        let key = CellKey {
                            size,
                            count,
                            noise: spec.noise(),
                            sampler,
                            mode_training,
                        };
                        cells.push((key, spec.clone()));
                    }
                }
            }
        }
    }
    cells
}

/// Runs every (cell, repetition) pair. Repetition `r` of every cell shares
/// its dataset stream and training seed, so methods are compared on the
/// same data. Results come back in grid order regardless of `workers`.
pub fn run_sweep(
    base: &StateSpec,
    sweep: &SweepConfig,
    train_cfg: &TrainConfig,
    seed: u64,
    workers: usize,
) -> Result<Vec<RunResult>, CliError> {
    let cells = grid(base, sweep);
    let mut targets: BTreeMap<String, TargetState> = BTreeMap::new();
    for (_, spec) in &cells {
        if !targets.contains_key(&spec.label()) {
            targets.insert(spec.label(), spec.target()?);
        }
    }
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..sweep.repetitions).map(move |r| (c, r)))
        .collect();
    let run = |&(c, rep): &(usize, usize)| -> Result<RunResult, CliError> {
        let (key, spec) = &cells[c];
        let target = &targets[&spec.label()];
        let rep_seed = repetition_seed(seed, rep);
        let data = synthesize(spec, target, key.count, rep_seed)?;
        let mut cfg = train_cfg.clone();
        cfg.seed = rep_seed;
        cfg.sampler = key.sampler;
        if !key.mode_training {
            cfg.mode_schedule.p_max = 0.0;
        }
        let trace = train(&data, Some(target), &cfg)?;
        let last = trace.records.last();
        let result = RunResult {
            cell: c,
            key: key.clone(),
            repetition: rep,
            seed: rep_seed,
            final_fidelity: last.and_then(|r| r.fidelity).unwrap_or(f64::NAN),
            final_nll: last.map(|r| r.nll).unwrap_or(f64::NAN),
            mode_updates: trace.mode_update_iterations.len(),
        };
        log::info!(
            "{} n={} count={} p={} {} rep {}: fidelity {:.6}",
            spec.label(),
            key.size,
            key.count,
            key.noise,
            key.method(),
            rep,
            result.final_fidelity
        );
        Ok(result)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| jobs.par_iter().map(run).collect())
}

/// Median/min/max of final fidelity per cell, in grid order.
pub fn summarize(base: &StateSpec, runs: &[RunResult]) -> Vec<CellSummary> {
    let mut by_cell: BTreeMap<usize, Vec<&RunResult>> = BTreeMap::new();
    for r in runs {
        by_cell.entry(r.cell).or_default().push(r);
    }
    by_cell
        .into_values()
        .map(|rs| {
            let key = rs[0].key.clone();
            let mut f: Vec<f64> = rs.iter().map(|r| r.final_fidelity).collect();
            let min = f.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let state = base.resized(key.size).with_noise(key.noise).label();
            CellSummary {
                state,
                runs: rs.len(),
                median: median(&mut f).unwrap_or(f64::NAN),
                min,
                max,
                key,
            }
        })
        .collect()
}

/// Measurement count at which the best-of-runs fidelity curve first reaches
/// `target`. The curve is made monotone by a running maximum over increasing
/// counts and interpolated linearly in log(count); targets reached at the
/// smallest count return that count, unreached targets return `None`.
pub fn interpolate_threshold(points: &[(usize, f64)], target: f64) -> Option<f64> {
    let mut pts: Vec<(usize, f64)> = points.to_vec();
    pts.sort_by_key(|p| p.0);
    let mut running = f64::NEG_INFINITY;
    for p in pts.iter_mut() {
        running = running.max(p.1);
        p.1 = running;
    }
    let hit = pts.iter().position(|p| p.1 >= target)?;
    if hit == 0 {
        return Some(pts[0].0 as f64);
    }
    let (x0, y0) = ((pts[hit - 1].0 as f64).ln(), pts[hit - 1].1);
    let (x1, y1) = ((pts[hit].0 as f64).ln(), pts[hit].1);
    let t = (target - y0) / (y1 - y0);
    Some((x0 + t * (x1 - x0)).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThresholdRow {
    pub size: usize,
    pub noise: f64,
    pub sampler: SamplerKind,
    pub mode_training: bool,
    pub target: f64,
    pub measurements: Option<f64>,
}

/// Interpolated measurements needed per (size, noise, method, target),
/// using the best run at each count.
pub fn measurements_to_fidelity(runs: &[RunResult], targets: &[f64]) -> Vec<ThresholdRow> {
    let mut curves: Vec<(CellKey, Vec<(usize, f64)>)> = Vec::new();
    for r in runs {
        let best = |pts: &mut Vec<(usize, f64)>| match pts.iter_mut().find(|p| p.0 == r.key.count) {
            Some(p) => p.1 = p.1.max(r.final_fidelity),
            None => pts.push((r.key.count, r.final_fidelity)),
        };
        let same = |k: &CellKey| {
            k.size == r.key.size && k.noise == r.key.noise && k.sampler == r.key.sampler && k.mode_training == r.key.mode_training
        };
        match curves.iter_mut().find(|(k, _)| same(k)) {
            Some((_, pts)) => best(pts),
            None => {
                let mut pts = Vec::new();
                best(&mut pts);
                curves.push((r.key.clone(), pts));
            }
        }
    }
    let mut rows = Vec::new();
    for (key, pts) in &curves {
        for &target in targets {
            rows.push(ThresholdRow {
                size: key.size,
                noise: key.noise,
                sampler: key.sampler,
                mode_training: key.mode_training,
                target,
                measurements: interpolate_threshold(pts, target),
            });
        }
    }
    rows
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let k = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

pub fn runs_csv(base: &StateSpec, runs: &[RunResult]) -> String {
    let mut s = String::from("state,size,count,noise,method,repetition,seed,final_fidelity,final_nll,mode_updates\n");
    for r in runs {
        let state = base.resized(r.key.size).with_noise(r.key.noise).label();
        s.push_str(&format!(
            "{state},{},{},{},{},{},{},{},{},{}\n",
            r.key.size,
            r.key.count,
            r.key.noise,
            r.key.method(),
            r.repetition,
            r.seed,
            r.final_fidelity,
            r.final_nll,
            r.mode_updates
        ));
    }
    s
}

pub fn summary_csv(cells: &[CellSummary]) -> String {
    let mut s = String::from("state,size,count,noise,method,runs,median_fidelity,min_fidelity,max_fidelity\n");
    for c in cells {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            c.state,
            c.key.size,
            c.key.count,
            c.key.noise,
            c.key.method(),
            c.runs,
            c.median,
            c.min,
            c.max
        ));
    }
    s
}

pub fn thresholds_csv(rows: &[ThresholdRow]) -> String {
    let mut s = String::from("size,noise,method,target_fidelity,measurements\n");
    for r in rows {
        let key = CellKey {
            size: r.size,
            count: 0,
            noise: r.noise,
            sampler: r.sampler,
            mode_training: r.mode_training,
        };
        let m = r.measurements.map(|m| format!("{m:.1}")).unwrap_or_default();
        s.push_str(&format!("{},{},{},{},{}\n", r.size, r.noise, key.method(), r.target, m));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_interpolation() {
        let pts = [(100, 0.9), (1000, 0.99), (10_000, 0.999)];
        assert_eq!(interpolate_threshold(&pts, 0.5), Some(100.0));
        assert!((interpolate_threshold(&pts, 0.99).unwrap() - 1000.0).abs() < 1e-9);
        // halfway in fidelity is halfway in log(count): √(100·1000)
        let mid = interpolate_threshold(&pts, 0.945).unwrap();
        assert!((mid - (100.0f64 * 1000.0).sqrt()).abs() < 1e-6);
        assert_eq!(interpolate_threshold(&pts, 0.9999), None);
    }

    #[test]
    fn threshold_curve_is_made_monotone() {
        // The dip at 1000 is lifted to 0.95 by the running maximum.
        let pts = [(10_000, 0.99), (100, 0.8), (1000, 0.7), (300, 0.95)];
        let x = interpolate_threshold(&pts, 0.97).unwrap();
        let expect = ((1000f64).ln() + 0.5 * ((10_000f64).ln() - (1000f64).ln())).exp();
        assert!((x - expect).abs() < 1e-6);
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [4.0, 8.0, 12.0, 16.0].iter().map(|&n: &f64| (n, 3.0 * n.powf(1.5))).collect();
        assert!((log_log_slope(&pts).unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(log_log_slope(&pts[..1]), None);
    }

    #[test]
    fn grid_order_and_noise_folding() {
        let sweep = SweepConfig {
            sizes: vec![4, 6],
            counts: vec![100, 1000],
            noise: vec![0.0, 0.1],
            samplers: vec![SamplerKind::Cd],
            mode_training: vec![false, true],
            repetitions: 1,
            targets: vec![],
        };
        let cells = grid(&StateSpec::W { n: 4 }, &sweep);
        assert_eq!(cells.len(), 2 * 2 * 2 * 2);
        assert_eq!(cells[0].1, StateSpec::W { n: 4 });
        assert_eq!(cells[4].1, StateSpec::DepolarizedW { n: 4, p: 0.1 });
        assert_eq!(cells[8].0.size, 6);
    }

    #[test]
    fn repetition_seeds_are_independent_of_each_other() {
        let a: Vec<u64> = (0..5).map(|r| repetition_seed(3, r)).collect();
        let b: Vec<u64> = (0..8).map(|r| repetition_seed(3, r)).collect();
        assert_eq!(a[..], b[..5]);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn sweep_is_independent_of_worker_count() {
        let sweep = SweepConfig {
            sizes: vec![3],
            counts: vec![200],
            noise: vec![],
            samplers: vec![SamplerKind::Cd],
            mode_training: vec![false, true],
            repetitions: 2,
            targets: vec![],
        };
        let cfg = TrainConfig {
            n_max: 300,
            mode_schedule: mode_qst::trainer::ModeSchedule { p_max: 0.3, alpha: 20.0, beta: 6.0 },
            ..TrainConfig::default()
        };
        let one = run_sweep(&StateSpec::Ghz { n: 3 }, &sweep, &cfg, 5, 1).unwrap();
        let three = run_sweep(&StateSpec::Ghz { n: 3 }, &sweep, &cfg, 5, 3).unwrap();
        assert_eq!(one, three);
        assert_eq!(one.len(), 4);
        let cells = summarize(&StateSpec::Ghz { n: 3 }, &one);
        assert_eq!(cells.len(), 2);
        assert!(cells.iter().all(|c| c.min <= c.median && c.median <= c.max));
        // Paired design: repetition r sees the same seed in every cell.
        assert_eq!(one[0].seed, one[2].seed);
    }
}
