//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use mode_qst::states::{
    depolarized_w_distribution, ghz, tffim_ground_state, toric_code_ground_state, w_state, MeasurementSource,
    TargetState,
};
use mode_qst::trainer::{SamplerKind, TrainConfig};
use mode_qst::{BitVector, QstError};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// A target state family with its size parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateSpec {
    Ghz { n: usize },
    W { n: usize },
    DepolarizedW { n: usize, p: f64 },
    Tffim {
        rows: usize,
        cols: usize,
        #[serde(default = "one")]
        j: f64,
        #[serde(default = "one")]
        h: f64,
    },
    Toric { l: usize },
}

fn one() -> f64 {
    1.0
}

impl StateSpec {
    pub fn n_qubits(&self) -> usize {
        match *self {
            StateSpec::Ghz { n } | StateSpec::W { n } | StateSpec::DepolarizedW { n, .. } => n,
            StateSpec::Tffim { rows, cols, .. } => rows * cols,
            StateSpec::Toric { l } => 2 * l * l,
        }
    }

    pub fn label(&self) -> String {
        match self {
            StateSpec::Ghz { n } => format!("ghz_{n}"),
            StateSpec::W { n } => format!("w_{n}"),
            StateSpec::DepolarizedW { n, p } => format!("depolarized_w_{n}_p{p}"),
            StateSpec::Tffim { rows, cols, j, h } => format!("tffim_{rows}x{cols}_j{j}_h{h}"),
            StateSpec::Toric { l } => format!("toric_{l}"),
        }
    }

    /// Same family at a different size; `size` is the qubit count for GHZ
    /// and W states, the side length for lattices.
    pub fn resized(&self, size: usize) -> StateSpec {
        match *self {
            StateSpec::Ghz { .. } => StateSpec::Ghz { n: size },
            StateSpec::W { .. } => StateSpec::W { n: size },
            StateSpec::DepolarizedW { p, .. } => StateSpec::DepolarizedW { n: size, p },
            StateSpec::Tffim { j, h, .. } => StateSpec::Tffim { rows: size, cols: size, j, h },
            StateSpec::Toric { .. } => StateSpec::Toric { l: size },
        }
    }

    pub fn with_noise(&self, p: f64) -> StateSpec {
        match *self {
            StateSpec::W { n } | StateSpec::DepolarizedW { n, .. } => StateSpec::DepolarizedW { n, p },
            ref other => other.clone(),
        }
    }

    pub fn size(&self) -> usize {
        match *self {
            StateSpec::Ghz { n } | StateSpec::W { n } | StateSpec::DepolarizedW { n, .. } => n,
            StateSpec::Tffim { rows, .. } => rows,
            StateSpec::Toric { l } => l,
        }
    }

    pub fn noise(&self) -> f64 {
        match *self {
            StateSpec::DepolarizedW { p, .. } => p,
            _ => 0.0,
        }
    }

    /// Reference state for fidelity; mixed states use `√q` amplitudes.
    pub fn target(&self) -> Result<TargetState, QstError> {
        match *self {
            StateSpec::Ghz { n } => ghz(n),
            StateSpec::W { n } => w_state(n),
            StateSpec::DepolarizedW { n, p } => {
                TargetState::from_distribution(&depolarized_w_distribution(n, p)?, self.label())
            }
            StateSpec::Tffim { rows, cols, j, h } => tffim_ground_state(rows, cols, j, h),
            StateSpec::Toric { l } => toric_code_ground_state(l),
        }
    }

    pub fn source(&self, target: &TargetState) -> MeasurementSource {
        match *self {
            StateSpec::Ghz { n } => MeasurementSource::Ghz(n),
            StateSpec::W { n } => MeasurementSource::W(n),
            StateSpec::DepolarizedW { n, p } => MeasurementSource::DepolarizedW { n, p },
            _ => MeasurementSource::from_state(target),
        }
    }
}

/// Grid for the `sweep` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// State sizes; empty means the configured state's own size.
    pub sizes: Vec<usize>,
    pub counts: Vec<usize>,
    /// Depolarization levels (W states only); empty means the configured level.
    pub noise: Vec<f64>,
    pub samplers: Vec<SamplerKind>,
    /// `false` runs plain sampler training, `true` adds mode updates.
    pub mode_training: Vec<bool>,
    pub repetitions: usize,
    /// Fidelity targets for the measurements-to-fidelity table.
    pub targets: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            sizes: Vec::new(),
            counts: vec![10_000],
            noise: Vec::new(),
            samplers: vec![SamplerKind::Cd],
            mode_training: vec![false, true],
            repetitions: 20,
            targets: Vec::new(),
        }
    }
}

/// States of interest for the transition experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StatesOfInterest {
    /// The `n` one-hot strings.
    OneHot,
    /// The `count` most probable strings under the model.
    Top { count: usize },
    Explicit { states: Vec<BitVector> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseConfig {
    pub checkpoint: Option<PathBuf>,
    pub k: Vec<usize>,
    pub repetitions: usize,
    pub states: StatesOfInterest,
    pub probability_floor: f64,
    pub edge_threshold: f64,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        DiagnoseConfig {
            checkpoint: None,
            k: vec![1, 32, 1024],
            repetitions: 10_000,
            states: StatesOfInterest::OneHot,
            probability_floor: mode_qst::analysis::GRAPH_PROBABILITY_FLOOR,
            edge_threshold: mode_qst::analysis::GRAPH_EDGE_THRESHOLD,
        }
    }
}

/// Top-level configuration shared by all commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub state: Option<StateSpec>,
    pub count: usize,
    /// Existing dataset file; otherwise data is sampled from `state`.
    pub dataset: Option<PathBuf>,
    /// Model file for `eval`.
    pub checkpoint: Option<PathBuf>,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    pub diagnose: DiagnoseConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            state: None,
            count: 10_000,
            dataset: None,
            checkpoint: None,
            train: TrainConfig::default(),
            sweep: SweepConfig::default(),
            diagnose: DiagnoseConfig::default(),
            seed: 0,
            out: PathBuf::from("out"),
            workers: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    pub fn state(&self) -> Result<&StateSpec, CliError> {
        self.state
            .as_ref()
            .ok_or_else(|| CliError::Config("no state given (set \"state\" in the config or pass --state)".into()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate()?;
        if self.workers == 0 {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        let s = &self.sweep;
        if s.counts.is_empty() || s.samplers.is_empty() || s.mode_training.is_empty() {
            return Err(CliError::Config("sweep grids must be nonempty".into()));
        }
        if s.repetitions == 0 {
            return Err(CliError::Config("sweep repetitions must be at least 1".into()));
        }
        if self.diagnose.k.is_empty() || self.diagnose.k.contains(&0) {
            return Err(CliError::Config("diagnose k list must be nonempty and positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_named() {
        let err = ExperimentConfig::from_json(r#"{"seed": 1, "learning_rate": 0.1}"#).unwrap_err();
        assert!(matches!(&err, CliError::Config(m) if m.contains("learning_rate")));
        let err = ExperimentConfig::from_json(r#"{"train": {"eta": 0.1}}"#).unwrap_err();
        assert!(matches!(&err, CliError::Config(m) if m.contains("eta")));
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = ExperimentConfig::from_json(
            r#"{"state": {"kind": "tffim", "rows": 3, "cols": 3}, "train": {"sampler": "pcd", "mode_schedule": {"p_max": 0, "alpha": 20, "beta": 6}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.state, Some(StateSpec::Tffim { rows: 3, cols: 3, j: 1.0, h: 1.0 }));
        assert_eq!(cfg.train.sampler, SamplerKind::Pcd);
        assert_eq!(cfg.train.n_max, TrainConfig::default().n_max);
        assert_eq!(cfg.train.eta0, 0.01);
        assert_eq!(cfg.count, 10_000);
    }

    #[test]
    fn state_sizes() {
        assert_eq!(StateSpec::Toric { l: 2 }.n_qubits(), 8);
        assert_eq!(StateSpec::Tffim { rows: 3, cols: 3, j: 1.0, h: 1.0 }.n_qubits(), 9);
        assert_eq!(StateSpec::W { n: 4 }.resized(8), StateSpec::W { n: 8 });
        assert_eq!(StateSpec::W { n: 4 }.with_noise(0.1), StateSpec::DepolarizedW { n: 4, p: 0.1 });
        assert_eq!(StateSpec::Ghz { n: 4 }.with_noise(0.1), StateSpec::Ghz { n: 4 });
    }
}
