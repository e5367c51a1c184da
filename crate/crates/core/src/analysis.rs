//! Reconstruction metrics and slow-mixing diagnostics.

use std::fmt::Write as _;

use rand::Rng;
use serde::Serialize;

use crate::bits::{write_index_bits, BitVector};
use crate::error::{check_len, QstError, Result};
use crate::rbm::{sigmoid, ExactModelTable, Rbm, ENUMERATION_CAP};
use crate::rng::{stream, StreamRng};
use crate::samplers::{cd_k_flat, Scratch};
use crate::states::{MeasurementDataset, OutcomeDistribution, TargetState};

/// Largest hidden layer for which the one-step kernel is summed exactly.
pub const KERNEL_HIDDEN_CAP: usize = 20;

/// `(Σ_v ψ_target(v) √p(v))²`, clamped to `[0, 1]`.
pub fn fidelity(target: &TargetState, rbm: &Rbm) -> Result<f64> {
    let table = rbm.exact_table()?;
    fidelity_with_table(target, &table)
}

pub fn fidelity_with_table(target: &TargetState, table: &ExactModelTable) -> Result<f64> {
    check_len("fidelity target", table.log_unnormalized.len(), target.amplitudes.len())?;
    let overlap: f64 = target
        .amplitudes
        .iter()
        .zip(&table.log_unnormalized)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &l)| a * (0.5 * (l - table.log_z)).exp())
        .sum();
    Ok((overlap * overlap).clamp(0.0, 1.0))
}

/// `Σ_v q(v) log(q(v)/p(v))`, skipping `q(v) = 0`.
pub fn kl_divergence(q: &OutcomeDistribution, rbm: &Rbm) -> Result<f64> {
    let table = rbm.exact_table()?;
    kl_with_table(q, &table)
}

pub fn kl_with_table(q: &OutcomeDistribution, table: &ExactModelTable) -> Result<f64> {
    check_len("KL target", table.log_unnormalized.len(), q.probs.len())?;
    let kl: f64 = q
        .probs
        .iter()
        .zip(&table.log_unnormalized)
        .filter(|(&qv, _)| qv > 0.0)
        .map(|(&qv, &l)| qv * (qv.ln() - (l - table.log_z)))
        .sum();
    Ok(kl.max(0.0))
}

/// Mean negative log-likelihood of the dataset under the model.
pub fn nll(dataset: &MeasurementDataset, rbm: &Rbm) -> Result<f64> {
    let table = rbm.exact_table()?;
    nll_with_table(dataset, &table)
}

pub fn nll_with_table(dataset: &MeasurementDataset, table: &ExactModelTable) -> Result<f64> {
    check_len("NLL dataset", table.n_visible(), dataset.n_qubits)?;
    if dataset.is_empty() {
        return Err(QstError::Config("NLL of an empty dataset".into()));
    }
    let total: f64 = dataset
        .counts()
        .iter()
        .map(|(v, c)| *c as f64 * table.log_prob(v.index()))
        .sum();
    Ok(-total / dataset.total_count() as f64)
}

// ---- transition experiment --------------------------------------------------

/// Start × end statistics of CD-k chains launched from chosen states.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionStats {
    pub states_of_interest: Vec<BitVector>,
    /// `counts[i][j]`: chains from state `i` ending in state `j`.
    pub counts: Vec<Vec<u64>>,
    /// Chains from state `i` ending anywhere outside the list.
    pub overflow: Vec<u64>,
    /// `(counts[i][j] / repetitions) / p_j`.
    pub normalized: Vec<Vec<f64>>,
    /// Overflow fraction divided by the model probability of all other states.
    pub overflow_normalized: Vec<f64>,
    pub k: usize,
    pub repetitions: usize,
}

impl TransitionStats {
    pub fn mean_diagonal(&self) -> f64 {
        let n = self.normalized.len();
        (0..n).map(|i| self.normalized[i][i]).sum::<f64>() / n as f64
    }

    pub fn mean_off_diagonal(&self) -> f64 {
        let n = self.normalized.len();
        if n < 2 {
            return f64::NAN;
        }
        let sum: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.normalized[i][j])
            .sum();
        sum / (n * (n - 1)) as f64
    }

    /// Header of end-state ids plus `other`, one row per start state.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("start");
        for v in &self.states_of_interest {
            let _ = write!(s, ",{}", v.index());
        }
        s.push_str(",other\n");
        for (i, v) in self.states_of_interest.iter().enumerate() {
            let _ = write!(s, "{}", v.index());
            for x in &self.normalized[i] {
                let _ = write!(s, ",{x}");
            }
            let _ = writeln!(s, ",{}", self.overflow_normalized[i]);
        }
        s
    }
}

/// Runs `repetitions` independent CD-k chains from each state of interest and
/// tabulates where they end. Chain `(i, r)` uses its own random stream.
pub fn transition_experiment<R: Rng + ?Sized>(
    rbm: &Rbm,
    states_of_interest: &[BitVector],
    k: usize,
    repetitions: usize,
    rng: &mut R,
) -> Result<TransitionStats> {
    if k == 0 || repetitions == 0 || states_of_interest.is_empty() {
        return Err(QstError::Config(
            "transition experiment needs k ≥ 1, repetitions ≥ 1 and at least one state".into(),
        ));
    }
    let n = rbm.n_visible();
    for s in states_of_interest {
        check_len("state of interest", n, s.len())?;
    }
    let table = rbm.exact_table()?;
    let base_seed: u64 = rng.gen();
    let lookup: std::collections::HashMap<usize, usize> = states_of_interest
        .iter()
        .enumerate()
        .map(|(j, s)| (s.index(), j))
        .rev()
        .collect();
    let s_count = states_of_interest.len();
    let mut counts = vec![vec![0u64; s_count]; s_count];
    let mut overflow = vec![0u64; s_count];
    let mut scratch = Scratch::new(rbm);
    const CHUNK: usize = 256;
    for (i, start) in states_of_interest.iter().enumerate() {
        let mut done = 0;
        while done < repetitions {
            let len = CHUNK.min(repetitions - done);
            let mut rngs: Vec<StreamRng> = (0..len)
                .map(|r| stream(base_seed, i as u64, (done + r) as u64))
                .collect();
            let mut visible: Vec<u8> = start.as_slice().repeat(len);
            cd_k_flat(rbm, &mut visible, k, &mut rngs, &mut scratch);
            for end in visible.chunks_exact(n) {
                match lookup.get(&crate::bits::bits_to_index(end)) {
                    Some(&j) => counts[i][j] += 1,
                    None => overflow[i] += 1,
                }
            }
            done += len;
        }
    }
    let probs: Vec<f64> = states_of_interest.iter().map(|s| table.prob(s.index())).collect();
    let p_listed: f64 = lookup.keys().map(|&idx| table.prob(idx)).sum();
    let p_other = (1.0 - p_listed).max(0.0);
    let reps = repetitions as f64;
    let normalized = counts
        .iter()
        .map(|row| row.iter().zip(&probs).map(|(&c, &p)| c as f64 / reps / p).collect())
        .collect();
    let overflow_normalized = overflow
        .iter()
        .map(|&c| if p_other > 0.0 { c as f64 / reps / p_other } else { c as f64 / reps })
        .collect();
    Ok(TransitionStats {
        states_of_interest: states_of_interest.to_vec(),
        counts,
        overflow,
        normalized,
        overflow_normalized,
        k,
        repetitions,
    })
}

// ---- one-step kernel and distance --------------------------------------------

fn check_kernel_caps(rbm: &Rbm) -> Result<()> {
    if rbm.n_hidden() > KERNEL_HIDDEN_CAP {
        return Err(QstError::Capacity {
            what: "exact transition kernel (hidden units)",
            requested: rbm.n_hidden(),
            cap: KERNEL_HIDDEN_CAP,
        });
    }
    Ok(())
}

/// `log p(v|h)` for a given visible-field vector.
#[inline]
fn log_cond_visible(v: &[u8], field: &[f64]) -> f64 {
    v.iter()
        .zip(field)
        .map(|(&vi, &f)| {
            // log σ(f) = -softplus(-f), log(1-σ(f)) = -softplus(f)
            if vi == 1 {
                -crate::rbm::softplus(-f)
            } else {
                -crate::rbm::softplus(f)
            }
        })
        .sum()
}

/// One-step CD transition probabilities `Σ_h p(v_j|h) p(h|v_i)` from `from`
/// to every listed target, by summing over all hidden states.
pub fn transition_probabilities(rbm: &Rbm, from: &BitVector, targets: &[BitVector]) -> Result<Vec<f64>> {
    check_len("transition source", rbm.n_visible(), from.len())?;
    for t in targets {
        check_len("transition target", rbm.n_visible(), t.len())?;
    }
    check_kernel_caps(rbm)?;
    let m = rbm.n_hidden();
    let mut hfield = vec![0.0; m];
    rbm.hidden_field_into(from.as_slice(), &mut hfield);
    let p_on: Vec<f64> = hfield.iter().map(|&f| sigmoid(f)).collect();
    let mut h = vec![0u8; m];
    let mut vfield = vec![0.0; rbm.n_visible()];
    let mut out = vec![0.0; targets.len()];
    for hi in 0..1usize << m {
        write_index_bits(hi, &mut h);
        let log_ph: f64 = h
            .iter()
            .zip(&p_on)
            .map(|(&b, &p)| if b == 1 { p.ln() } else { (1.0 - p).ln() })
            .sum();
        if log_ph == f64::NEG_INFINITY {
            continue;
        }
        rbm.visible_field_into(&h, &mut vfield);
        for (o, t) in out.iter_mut().zip(targets) {
            *o += (log_ph + log_cond_visible(t.as_slice(), &vfield)).exp();
        }
    }
    Ok(out)
}

/// `-log Σ_h p(v_j|h) p(h|v_i)`, summed exactly over hidden states.
pub fn distance(rbm: &Rbm, v_i: &BitVector, v_j: &BitVector) -> Result<f64> {
    let p = transition_probabilities(rbm, v_i, std::slice::from_ref(v_j))?[0];
    Ok(-p.ln())
}

/// Monte Carlo estimate of the distance: `h ~ p(h|v_i)`, averaging `p(v_j|h)`.
/// Returns the distance estimate and the standard error of the averaged probability.
pub fn distance_monte_carlo<R: Rng + ?Sized>(
    rbm: &Rbm,
    v_i: &BitVector,
    v_j: &BitVector,
    samples: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    check_len("distance source", rbm.n_visible(), v_i.len())?;
    check_len("distance target", rbm.n_visible(), v_j.len())?;
    if samples < 2 {
        return Err(QstError::Config("Monte Carlo distance needs at least 2 samples".into()));
    }
    let p_on = rbm.cond_h_given_v(v_i)?;
    let mut h = vec![0u8; rbm.n_hidden()];
    let mut vfield = vec![0.0; rbm.n_visible()];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        for (hj, &p) in h.iter_mut().zip(&p_on) {
            *hj = (rng.gen::<f64>() < p) as u8;
        }
        rbm.visible_field_into(&h, &mut vfield);
        let x = log_cond_visible(v_j.as_slice(), &vfield).exp();
        sum += x;
        sum_sq += x * x;
    }
    let s = samples as f64;
    let mean = sum / s;
    let var = (sum_sq / s - mean * mean).max(0.0) * s / (s - 1.0);
    Ok((-mean.ln(), (var / s).sqrt()))
}

// ---- state graph ---------------------------------------------------------------

/// Default probability floor for graph vertices.
pub const GRAPH_PROBABILITY_FLOOR: f64 = 1e-4;
/// Default minimum one-step transition probability for an edge.
pub const GRAPH_EDGE_THRESHOLD: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphVertex {
    pub id: usize,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphEdge {
    pub from: usize,
    pub to: usize,
    pub w: f64,
}

/// Basis states as vertices, one-step CD transitions as weighted edges.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StateGraph {
    pub vertices: Vec<GraphVertex>,
    pub edges: Vec<GraphEdge>,
}

impl StateGraph {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("graph serializes")
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph rbm {\n");
        for v in &self.vertices {
            let _ = writeln!(s, "  {} [p={}];", v.id, v.p);
        }
        for e in &self.edges {
            let _ = writeln!(s, "  {} -> {} [weight={}];", e.from, e.to, e.w);
        }
        s.push_str("}\n");
        s
    }

    /// Edges leaving `id` other than its self-loop.
    pub fn outgoing_non_self(&self, id: usize) -> impl Iterator<Item = &GraphEdge> {
        self.edges.iter().filter(move |e| e.from == id && e.to != id)
    }
}

/// Vertices with model probability ≥ `probability_floor`, joined by every
/// one-step transition of probability ≥ `edge_threshold`. Sorted by id.
pub fn export_state_graph(rbm: &Rbm, probability_floor: f64, edge_threshold: f64) -> Result<StateGraph> {
    if rbm.n_visible() > ENUMERATION_CAP {
        return Err(QstError::Capacity {
            what: "state graph export",
            requested: rbm.n_visible(),
            cap: ENUMERATION_CAP,
        });
    }
    check_kernel_caps(rbm)?;
    let table = rbm.exact_table()?;
    let n = rbm.n_visible();
    let vertices: Vec<GraphVertex> = (0..1usize << n)
        .map(|id| GraphVertex { id, p: table.prob(id) })
        .filter(|v| v.p >= probability_floor)
        .collect();
    let states: Vec<BitVector> = vertices.iter().map(|v| BitVector::from_index(v.id, n)).collect();
    let mut edges = Vec::new();
    for (from, src) in vertices.iter().zip(&states) {
        let probs = transition_probabilities(rbm, src, &states)?;
        for (to, &w) in vertices.iter().zip(&probs) {
            if w > 0.0 && w >= edge_threshold {
                edges.push(GraphEdge {
                    from: from.id,
                    to: to.id,
                    w: w.min(1.0),
                });
            }
        }
    }
    Ok(StateGraph { vertices, edges })
}
