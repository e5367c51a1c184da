//! Mixing diagnostics on a trained model.

use std::path::Path;

use mode_qst::analysis::{export_state_graph, transition_experiment, StateGraph, TransitionStats};
use mode_qst::rng::{domain, stream};
use mode_qst::{BitVector, Rbm};

use crate::config::{DiagnoseConfig, StatesOfInterest};
use crate::{write_file, CliError};

pub fn states_of_interest(rbm: &Rbm, which: &StatesOfInterest) -> Result<Vec<BitVector>, CliError> {
    let n = rbm.n_visible();
    let states = match which {
        StatesOfInterest::OneHot => (0..n).map(|i| BitVector::one_hot(n, i)).collect(),
        StatesOfInterest::Top { count } => {
            let table = rbm.exact_table()?;
            let mut idx: Vec<usize> = (0..1usize << n).collect();
            // Stable sort keeps ties in index order.
            idx.sort_by(|&a, &b| table.log_unnormalized[b].total_cmp(&table.log_unnormalized[a]));
            idx.into_iter().take(*count).map(|i| BitVector::from_index(i, n)).collect()
        }
        StatesOfInterest::Explicit { states } => states.clone(),
    };
    if states.is_empty() {
        return Err(CliError::Config("no states of interest".into()));
    }
    if let Some(bad) = states.iter().find(|s| s.len() != n) {
        return Err(CliError::Config(format!("state {bad} does not have {n} bits")));
    }
    Ok(states)
}

pub struct Diagnostics {
    pub transitions: Vec<TransitionStats>,
    pub graph: StateGraph,
}

/// Transition statistics for each `k` and the state graph, written as
/// `transitions_k<k>.csv`, `graph.json`, and `graph.dot` under `out`.
pub fn diagnose(rbm: &Rbm, cfg: &DiagnoseConfig, seed: u64, out: &Path) -> Result<Diagnostics, CliError> {
    let states = states_of_interest(rbm, &cfg.states)?;
    let mut transitions = Vec::new();
    for &k in &cfg.k {
        let mut rng = stream(seed, domain::DIAGNOSTICS, k as u64);
        let stats = transition_experiment(rbm, &states, k, cfg.repetitions, &mut rng)?;
        log::info!(
            "k={k}: mean diagonal {:.4}, mean off-diagonal {:.4}",
            stats.mean_diagonal(),
            stats.mean_off_diagonal()
        );
        write_file(&out.join(format!("transitions_k{k}.csv")), &stats.to_csv())?;
        transitions.push(stats);
    }
    let graph = export_state_graph(rbm, cfg.probability_floor, cfg.edge_threshold)?;
    write_file(&out.join("graph.json"), &graph.to_json())?;
    write_file(&out.join("graph.dot"), &graph.to_dot())?;
    Ok(Diagnostics { transitions, graph })
}
