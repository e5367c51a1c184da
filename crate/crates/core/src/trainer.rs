//! The training loop: sampled KL-gradient updates, mode-assisted updates on a
//! stochastic schedule, and learning-rate halving on stalled likelihood.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{fidelity_with_table, kl_with_table, nll_with_table};
use crate::bits::BitVector;
use crate::error::{check_len, QstError, Result};
use crate::mode_solver::{best_candidate, find_mode, AnnealConfig, ModeResult};
use crate::rbm::{sigmoid, ParamDelta, Rbm, ENUMERATION_CAP};
use crate::rng::{domain, stream, StreamRng};
use crate::samplers::{cd_k_flat, pt_step_raw, ChainState, PtLadder, Scratch, PT_DEFAULT_LEVELS, PT_DEFAULT_T_MAX};
use crate::states::{MeasurementDataset, OutcomeDistribution, TargetState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    /// CD-k restarted from the minibatch each iteration.
    Cd,
    /// Persistent chains carried across iterations.
    Pcd,
    /// Persistent replica-exchange ladders.
    Pt,
    /// Exact model expectation by enumeration (small models only).
    Exact,
}

/// `P_mode(n) = P_max · σ(α n / n_max − β)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSchedule {
    pub p_max: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for ModeSchedule {
    fn default() -> Self {
        ModeSchedule {
            p_max: 0.05,
            alpha: 20.0,
            beta: 6.0,
        }
    }
}

/// Which data strings the mode update balances against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModeSetPolicy {
    Explicit { modes: Vec<BitVector> },
    /// Distinct strings whose frequency is at least `tau` times the largest.
    TopFrequency { tau: f64 },
    /// A fresh minibatch from the data for every mode update.
    SampleFromData,
}

impl Default for ModeSetPolicy {
    fn default() -> Self {
        ModeSetPolicy::TopFrequency { tau: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub eta0: f64,
    pub n_max: usize,
    /// `None` means `N²` for `N` visible units.
    pub batch_size: Option<usize>,
    pub sampler: SamplerKind,
    pub k: usize,
    pub mode_schedule: ModeSchedule,
    pub mode_set_policy: ModeSetPolicy,
    pub lr_patience: usize,
    /// `None` means as many hidden as visible units.
    pub n_hidden: Option<usize>,
    pub eval_every: usize,
    pub seed: u64,
    pub pt_levels: usize,
    pub pt_t_max: f64,
    pub anneal: AnnealSettings,
    /// Visible units up to which the mode is found exactly.
    pub exact_mode_cap: usize,
    /// Treat `eta0` as a per-sample rate: minibatch statistics are summed
    /// rather than averaged, so every step is scaled by the batch size.
    pub batch_sum: bool,
    pub mode_search: ModeSearch,
}

/// How the mode update locates the model mode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSearch {
    /// Minimum-energy joint configuration `(v*, h*)`, by exact search or annealing.
    #[default]
    Joint,
    /// Mode-set string with the highest marginal probability, with its best hidden state.
    Candidates,
}

/// Serializable mirror of [`AnnealConfig`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnealSettings {
    pub t_start: f64,
    pub t_end: f64,
    pub sweeps: Option<usize>,
    pub restarts: usize,
}

impl Default for AnnealSettings {
    fn default() -> Self {
        let a = AnnealConfig::default();
        AnnealSettings {
            t_start: a.t_start,
            t_end: a.t_end,
            sweeps: a.sweeps,
            restarts: a.restarts,
        }
    }
}

impl From<&AnnealSettings> for AnnealConfig {
    fn from(s: &AnnealSettings) -> Self {
        AnnealConfig {
            t_start: s.t_start,
            t_end: s.t_end,
            sweeps: s.sweeps,
            restarts: s.restarts,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta0: 0.01,
            n_max: 200_000,
            batch_size: None,
            sampler: SamplerKind::Cd,
            k: 1,
            mode_schedule: ModeSchedule::default(),
            mode_set_policy: ModeSetPolicy::default(),
            lr_patience: 10_000,
            n_hidden: None,
            eval_every: 100,
            seed: 0,
            pt_levels: PT_DEFAULT_LEVELS,
            pt_t_max: PT_DEFAULT_T_MAX,
            anneal: AnnealSettings::default(),
            exact_mode_cap: ENUMERATION_CAP,
            batch_sum: false,
            mode_search: ModeSearch::Joint,
        }
    }
}

impl TrainConfig {
    /// Plain CD-k: mode updates switched off.
    pub fn without_mode_updates(mut self) -> Self {
        self.mode_schedule.p_max = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(QstError::Config(msg));
        if !(self.eta0 > 0.0) {
            return bad(format!("eta0 must be positive (got {})", self.eta0));
        }
        if !(0.0..=1.0).contains(&self.mode_schedule.p_max) {
            return bad(format!("p_max must lie in [0, 1] (got {})", self.mode_schedule.p_max));
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be at least 1".into());
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if self.n_hidden == Some(0) {
            return bad("n_hidden must be at least 1".into());
        }
        if let ModeSetPolicy::TopFrequency { tau } = self.mode_set_policy {
            if !(0.0..=1.0).contains(&tau) {
                return bad(format!("top_frequency tau must lie in [0, 1] (got {tau})"));
            }
        }
        Ok(())
    }

    pub fn batch_size_for(&self, n_visible: usize) -> usize {
        self.batch_size.unwrap_or(n_visible * n_visible)
    }

    pub fn n_hidden_for(&self, n_visible: usize) -> usize {
        self.n_hidden.unwrap_or(n_visible)
    }
}

/// Probability of a mode update at iteration `n`.
pub fn mode_schedule_probability(n: usize, n_max: usize, schedule: &ModeSchedule) -> f64 {
    if schedule.p_max == 0.0 {
        return 0.0;
    }
    let progress = if n_max == 0 { 0.0 } else { n as f64 / n_max as f64 };
    schedule.p_max * sigmoid(schedule.alpha * progress - schedule.beta)
}

/// Data strings that the mode update treats as the modes of `q`.
pub fn infer_mode_set<R: Rng + ?Sized>(
    dataset: &MeasurementDataset,
    policy: &ModeSetPolicy,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<BitVector>> {
    if dataset.is_empty() {
        return Err(QstError::Config("cannot infer modes from an empty dataset".into()));
    }
    match policy {
        ModeSetPolicy::Explicit { modes } => {
            if modes.is_empty() {
                return Err(QstError::Config("explicit mode set is empty".into()));
            }
            for m in modes {
                check_len("explicit mode", dataset.n_qubits, m.len())?;
            }
            Ok(modes.clone())
        }
        ModeSetPolicy::TopFrequency { tau } => {
            let counts = dataset.counts();
            let max = counts.iter().map(|(_, c)| *c).max().unwrap_or(0) as f64;
            Ok(counts
                .into_iter()
                .filter(|(_, c)| *c as f64 >= tau * max)
                .map(|(v, _)| v)
                .collect())
        }
        ModeSetPolicy::SampleFromData => Ok((0..batch_size.max(1))
            .map(|_| dataset.outcomes[rng.gen_range(0..dataset.outcomes.len())].clone())
            .collect()),
    }
}

/// Mean `(v, E[h|v], v E[h|v]ᵀ)` over a flat `rows × n` buffer.
fn batch_statistics(rbm: &Rbm, visible: &[u8], out: &mut ParamDelta, hm: &mut [f64]) {
    let n = rbm.n_visible();
    let rows = visible.len() / n;
    out.da.iter_mut().for_each(|x| *x = 0.0);
    out.db.iter_mut().for_each(|x| *x = 0.0);
    out.dw.iter_mut().for_each(|x| *x = 0.0);
    let w = 1.0 / rows as f64;
    for v in visible.chunks_exact(n) {
        rbm.hidden_field_into(v, hm);
        for x in hm.iter_mut() {
            *x = sigmoid(*x);
        }
        out.accumulate(v, hm, w);
    }
}

/// Source of negative-phase samples, with its persistent state.
pub struct NegativePhase {
    kind: SamplerKind,
    k: usize,
    rngs: Vec<StreamRng>,
    chains: Vec<ChainState>,
    ladders: Vec<PtLadder>,
    buffer: Vec<u8>,
}

impl NegativePhase {
    /// One random stream per chain (or ladder), `batch_size` of them.
    pub fn new(kind: SamplerKind, cfg: &TrainConfig, n_visible: usize, n_hidden: usize, batch_size: usize, seed: u64) -> Result<Self> {
        let mut rngs: Vec<StreamRng> = (0..batch_size as u64).map(|c| stream(seed, domain::CHAINS, c)).collect();
        let mut chains = Vec::new();
        let mut ladders = Vec::new();
        match kind {
            SamplerKind::Pcd => {
                chains = rngs
                    .iter_mut()
                    .enumerate()
                    .map(|(c, rng)| ChainState::random(n_visible, n_hidden, c as u64, rng))
                    .collect();
            }
            SamplerKind::Pt => {
                ladders = rngs
                    .iter_mut()
                    .map(|rng| PtLadder::geometric(cfg.pt_levels, cfg.pt_t_max, n_visible, n_hidden, rng))
                    .collect::<Result<_>>()?;
            }
            SamplerKind::Exact if n_visible > ENUMERATION_CAP => {
                return Err(QstError::Capacity {
                    what: "exact negative phase",
                    requested: n_visible,
                    cap: ENUMERATION_CAP,
                })
            }
            _ => {}
        }
        Ok(NegativePhase {
            kind,
            k: cfg.k,
            rngs,
            chains,
            ladders,
            buffer: Vec::new(),
        })
    }

    pub fn kind(&self) -> SamplerKind {
        self.kind
    }

    pub fn ladders(&self) -> &[PtLadder] {
        &self.ladders
    }

    /// Negative statistics for a positive batch given as a flat buffer.
    fn statistics(&mut self, rbm: &Rbm, batch: &[u8], out: &mut ParamDelta, hm: &mut [f64], scratch: &mut Scratch) -> Result<()> {
        let n = rbm.n_visible();
        match self.kind {
            SamplerKind::Cd => {
                let rows = batch.len() / n;
                if self.rngs.len() < rows {
                    return Err(QstError::Config("more CD chains than random streams".into()));
                }
                self.buffer.clear();
                self.buffer.extend_from_slice(batch);
                cd_k_flat(rbm, &mut self.buffer, self.k, &mut self.rngs, scratch);
            }
            SamplerKind::Pcd => {
                self.buffer.clear();
                for (chain, rng) in self.chains.iter_mut().zip(self.rngs.iter_mut()) {
                    for _ in 0..self.k {
                        crate::samplers::gibbs_raw(rbm, 1.0, chain.v.as_mut_slice(), chain.h.as_mut_slice(), scratch, rng);
                    }
                    self.buffer.extend_from_slice(chain.v.as_slice());
                }
            }
            SamplerKind::Pt => {
                self.buffer.clear();
                for (ladder, rng) in self.ladders.iter_mut().zip(self.rngs.iter_mut()) {
                    for _ in 0..self.k {
                        pt_step_raw(rbm, ladder, scratch, rng);
                    }
                    self.buffer.extend_from_slice(ladder.replicas[0].v.as_slice());
                }
            }
            SamplerKind::Exact => {
                let table = rbm.exact_table()?;
                *out = rbm.expected_statistics(table.probabilities().into_iter());
                return Ok(());
            }
        }
        let buffer = std::mem::take(&mut self.buffer);
        batch_statistics(rbm, &buffer, out, hm);
        self.buffer = buffer;
        Ok(())
    }
}

/// Reusable buffers for one training run.
struct Workspace {
    positive: ParamDelta,
    negative: ParamDelta,
    hm: Vec<f64>,
    scratch: Scratch,
    batch: Vec<u8>,
}

impl Workspace {
    fn new(rbm: &Rbm) -> Self {
        Workspace {
            positive: ParamDelta::zeros(rbm.n_visible(), rbm.n_hidden()),
            negative: ParamDelta::zeros(rbm.n_visible(), rbm.n_hidden()),
            hm: vec![0.0; rbm.n_hidden()],
            scratch: Scratch::new(rbm),
            batch: Vec::new(),
        }
    }
}

fn grad_update_flat(rbm: &mut Rbm, batch: &[u8], sampler: &mut NegativePhase, lr: f64, ws: &mut Workspace) -> Result<()> {
    batch_statistics(rbm, batch, &mut ws.positive, &mut ws.hm);
    sampler.statistics(rbm, batch, &mut ws.negative, &mut ws.hm, &mut ws.scratch)?;
    ws.positive.sub_assign(&ws.negative);
    rbm.apply(&ws.positive, lr)
}

/// One KL-gradient step: exact positive phase over `batch`, negative phase
/// from the sampler, `θ ← θ + lr · (positive − negative)`.
pub fn grad_update(rbm: &mut Rbm, batch: &[BitVector], sampler: &mut NegativePhase, lr: f64) -> Result<()> {
    if batch.is_empty() {
        return Err(QstError::Config("gradient update needs a nonempty batch".into()));
    }
    let mut flat = Vec::with_capacity(batch.len() * rbm.n_visible());
    for v in batch {
        check_len("batch element", rbm.n_visible(), v.len())?;
        flat.extend_from_slice(v.as_slice());
    }
    let mut ws = Workspace::new(rbm);
    grad_update_flat(rbm, &flat, sampler, lr, &mut ws)
}

/// Mode-assisted step: positive phase averaged uniformly over `mode_set`,
/// negative phase the binary joint mode `(v*, h*)` of the model.
pub fn mode_update<R: Rng + ?Sized>(
    rbm: &mut Rbm,
    mode_set: &[BitVector],
    lr: f64,
    search: ModeSearch,
    exact_cap: usize,
    anneal: &AnnealConfig,
    rng: &mut R,
) -> Result<ModeResult> {
    if mode_set.is_empty() {
        return Err(QstError::Config("mode update needs a nonempty mode set".into()));
    }
    let n = rbm.n_visible();
    let mut flat = Vec::with_capacity(mode_set.len() * n);
    for v in mode_set {
        check_len("mode set element", n, v.len())?;
        flat.extend_from_slice(v.as_slice());
    }
    let mode = match search {
        ModeSearch::Joint => find_mode(rbm, exact_cap, anneal, mode_set, rng)?,
        ModeSearch::Candidates => best_candidate(rbm, mode_set)?,
    };
    let mut delta = ParamDelta::zeros(n, rbm.n_hidden());
    let mut hm = vec![0.0; rbm.n_hidden()];
    batch_statistics(rbm, &flat, &mut delta, &mut hm);
    let h_star: Vec<f64> = mode.h_star.as_slice().iter().map(|&b| b as f64).collect();
    delta.accumulate(mode.v_star.as_slice(), &h_star, -1.0);
    rbm.apply(&delta, lr)?;
    Ok(mode)
}

/// Metrics at one evaluation checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub nll: f64,
    pub fidelity: Option<f64>,
    pub kl: Option<f64>,
    pub lr: f64,
    pub was_mode_update: bool,
}

#[derive(Clone, Debug)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
    pub final_model: Rbm,
    /// Every iteration that performed a mode update.
    pub mode_update_iterations: Vec<usize>,
    pub warnings: Vec<String>,
}

impl TrainTrace {
    pub fn final_fidelity(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.fidelity)
    }

    /// CSV with header `iteration,nll,fidelity,kl,lr,mode_update`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,nll,fidelity,kl,lr,mode_update\n");
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.iteration,
                r.nll,
                opt(r.fidelity),
                opt(r.kl),
                r.lr,
                u8::from(r.was_mode_update)
            ));
        }
        s
    }
}

/// Called with `(iteration, model)` every `every` iterations and at the end.
pub struct CheckpointHook<'a> {
    pub every: usize,
    pub callback: &'a mut dyn FnMut(usize, &Rbm) -> Result<()>,
}

pub fn train(dataset: &MeasurementDataset, target: Option<&TargetState>, cfg: &TrainConfig) -> Result<TrainTrace> {
    train_with_hook(dataset, target, cfg, None)
}

pub fn train_with_hook(
    dataset: &MeasurementDataset,
    target: Option<&TargetState>,
    cfg: &TrainConfig,
    mut hook: Option<CheckpointHook<'_>>,
) -> Result<TrainTrace> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(QstError::Config("training needs a nonempty dataset".into()));
    }
    let n = dataset.n_qubits;
    if let Some(t) = target {
        check_len("target qubits", n, t.n_qubits)?;
    }
    let m = cfg.n_hidden_for(n);
    let batch_size = cfg.batch_size_for(n);
    let mut rbm = Rbm::random_init(n, m, &mut stream(cfg.seed, domain::INIT, 0))?;
    let mut trace = TrainTrace {
        records: Vec::new(),
        final_model: rbm.clone(),
        mode_update_iterations: Vec::new(),
        warnings: Vec::new(),
    };
    if cfg.n_max == 0 {
        return Ok(trace);
    }

    let exact_metrics = n <= ENUMERATION_CAP;
    if !exact_metrics {
        let msg = format!(
            "{n} visible units exceed the enumeration cap {ENUMERATION_CAP}; \
             NLL is not evaluated and the learning rate stays at {}",
            cfg.eta0
        );
        log::warn!("{msg}");
        trace.warnings.push(msg);
    }
    let target_q: Option<OutcomeDistribution> = target.map(|t| t.distribution());

    let mut schedule_rng = stream(cfg.seed, domain::SCHEDULE, 0);
    let mut batch_rng = stream(cfg.seed, domain::BATCH, 0);
    let mut mode_rng = stream(cfg.seed, domain::MODE, 0);
    let mut sampler = NegativePhase::new(cfg.sampler, cfg, n, m, batch_size, cfg.seed)?;
    let anneal = AnnealConfig::from(&cfg.anneal);
    let fixed_modes = match cfg.mode_set_policy {
        ModeSetPolicy::SampleFromData => None,
        _ if cfg.mode_schedule.p_max == 0.0 => None,
        _ => Some(infer_mode_set(dataset, &cfg.mode_set_policy, batch_size, &mut mode_rng)?),
    };

    let mut ws = Workspace::new(&rbm);
    let mut lr = cfg.eta0;
    let step_scale = if cfg.batch_sum { batch_size as f64 } else { 1.0 };
    let mut best_nll = f64::INFINITY;
    let mut last_progress = 0usize;
    let outcomes = &dataset.outcomes;

    for it in 1..=cfg.n_max {
        let p_mode = mode_schedule_probability(it, cfg.n_max, &cfg.mode_schedule);
        let is_mode = schedule_rng.gen::<f64>() < p_mode;
        if is_mode {
            let sampled;
            let modes = match &fixed_modes {
                Some(m) => m.as_slice(),
                None => {
                    sampled = infer_mode_set(dataset, &ModeSetPolicy::SampleFromData, batch_size, &mut mode_rng)?;
                    sampled.as_slice()
                }
            };
            mode_update(&mut rbm, modes, lr * step_scale, cfg.mode_search, cfg.exact_mode_cap, &anneal, &mut mode_rng)?;
            trace.mode_update_iterations.push(it);
        } else {
            ws.batch.clear();
            for _ in 0..batch_size {
                let pick = batch_rng.gen_range(0..outcomes.len());
                ws.batch.extend_from_slice(outcomes[pick].as_slice());
            }
            let batch = std::mem::take(&mut ws.batch);
            grad_update_flat(&mut rbm, &batch, &mut sampler, lr * step_scale, &mut ws)?;
            ws.batch = batch;
        }

        if exact_metrics && (it % cfg.eval_every == 0 || it == cfg.n_max) {
            let table = rbm.exact_table()?;
            let nll = nll_with_table(dataset, &table)?;
            if !nll.is_finite() {
                return Err(QstError::Numerical(format!("NLL became {nll} at iteration {it}")));
            }
            if nll < best_nll {
                best_nll = nll;
                last_progress = it;
            } else if it - last_progress >= cfg.lr_patience {
                lr *= 0.5;
                last_progress = it;
                log::debug!("iteration {it}: NLL stalled at {best_nll}, learning rate now {lr}");
            }
            let (fidelity, kl) = match (target, &target_q) {
                (Some(t), Some(q)) => (Some(fidelity_with_table(t, &table)?), Some(kl_with_table(q, &table)?)),
                _ => (None, None),
            };
            trace.records.push(TraceRecord {
                iteration: it,
                nll,
                fidelity,
                kl,
                lr,
                was_mode_update: is_mode,
            });
        }
        if let Some(h) = hook.as_mut() {
            if it % h.every.max(1) == 0 || it == cfg.n_max {
                (h.callback)(it, &rbm)?;
            }
        }
    }
    trace.final_model = rbm;
    Ok(trace)
}
