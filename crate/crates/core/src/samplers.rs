//! Block-Gibbs Markov chains over the RBM state space: plain Gibbs steps,
//! CD-k, persistent CD and parallel tempering.
//!
//! Each chain owns a dedicated random stream, so a batch of chains produces
//! the same samples whatever order (or thread) the chains are advanced in.

use rand::Rng;

use crate::bits::BitVector;
use crate::error::{check_len, QstError, Result};
use crate::rbm::{sigmoid, Rbm};
use crate::rng::StreamRng;

/// One Markov chain position: visible state plus the last hidden sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub v: BitVector,
    pub h: BitVector,
    pub rng_stream_id: u64,
}

impl ChainState {
    pub fn new(v: BitVector, n_hidden: usize, rng_stream_id: u64) -> Self {
        ChainState {
            v,
            h: BitVector::zeros(n_hidden),
            rng_stream_id,
        }
    }

    /// Uniformly random visible and hidden bits.
    pub fn random<R: Rng + ?Sized>(n_visible: usize, n_hidden: usize, rng_stream_id: u64, rng: &mut R) -> Self {
        let mut v = BitVector::zeros(n_visible);
        let mut h = BitVector::zeros(n_hidden);
        for b in v.as_mut_slice().iter_mut().chain(h.as_mut_slice()) {
            *b = rng.gen::<bool>() as u8;
        }
        ChainState { v, h, rng_stream_id }
    }

    fn check(&self, rbm: &Rbm) -> Result<()> {
        check_len("chain visible", rbm.n_visible(), self.v.len())?;
        check_len("chain hidden", rbm.n_hidden(), self.h.len())
    }
}

/// A final visible sample with the analytic hidden mean `E[h | v]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativeSample {
    pub v: BitVector,
    pub h_mean: Vec<f64>,
}

/// Scratch buffers for the field computations of one Gibbs sweep.
pub(crate) struct Scratch {
    hidden: Vec<f64>,
    visible: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(rbm: &Rbm) -> Self {
        Scratch {
            hidden: vec![0.0; rbm.n_hidden()],
            visible: vec![0.0; rbm.n_visible()],
        }
    }
}

/// `h ~ p_β(h|v)` then `v ~ p_β(v|h)`.
#[inline]
pub(crate) fn gibbs_raw<R: Rng + ?Sized>(
    rbm: &Rbm,
    beta: f64,
    v: &mut [u8],
    h: &mut [u8],
    scratch: &mut Scratch,
    rng: &mut R,
) {
    rbm.hidden_field_into(v, &mut scratch.hidden);
    for (hj, &f) in h.iter_mut().zip(&scratch.hidden) {
        *hj = (rng.gen::<f64>() < sigmoid(beta * f)) as u8;
    }
    rbm.visible_field_into(h, &mut scratch.visible);
    for (vi, &f) in v.iter_mut().zip(&scratch.visible) {
        *vi = (rng.gen::<f64>() < sigmoid(beta * f)) as u8;
    }
}

/// One block-Gibbs update of both layers.
pub fn gibbs_step<R: Rng + ?Sized>(rbm: &Rbm, state: &mut ChainState, rng: &mut R) -> Result<()> {
    gibbs_step_tempered(rbm, 1.0, state, rng)
}

/// Gibbs update under `p_β(v,h) ∝ exp(-β E(v,h))`.
pub fn gibbs_step_tempered<R: Rng + ?Sized>(
    rbm: &Rbm,
    beta: f64,
    state: &mut ChainState,
    rng: &mut R,
) -> Result<()> {
    state.check(rbm)?;
    let mut scratch = Scratch::new(rbm);
    gibbs_raw(
        rbm,
        beta,
        state.v.as_mut_slice(),
        state.h.as_mut_slice(),
        &mut scratch,
        rng,
    );
    Ok(())
}

/// Runs `k` Gibbs steps from each `v0`, chain `c` drawing from `rngs[c]`.
pub fn cd_k_sample(
    rbm: &Rbm,
    v0_batch: &[BitVector],
    k: usize,
    rngs: &mut [StreamRng],
) -> Result<Vec<NegativeSample>> {
    if k == 0 {
        return Err(QstError::Config("CD-k needs k ≥ 1".into()));
    }
    if v0_batch.is_empty() {
        return Err(QstError::Config("CD-k needs a nonempty batch".into()));
    }
    if rngs.len() < v0_batch.len() {
        return Err(QstError::Config(format!(
            "CD-k got {} random streams for {} chains",
            rngs.len(),
            v0_batch.len()
        )));
    }
    let mut scratch = Scratch::new(rbm);
    let mut h = vec![0u8; rbm.n_hidden()];
    v0_batch
        .iter()
        .zip(rngs.iter_mut())
        .map(|(v0, rng)| {
            check_len("CD-k start state", rbm.n_visible(), v0.len())?;
            let mut v = v0.clone();
            for _ in 0..k {
                gibbs_raw(rbm, 1.0, v.as_mut_slice(), &mut h, &mut scratch, rng);
            }
            let h_mean = rbm.cond_h_given_v(&v)?;
            Ok(NegativeSample { v, h_mean })
        })
        .collect()
}

/// In-place CD-k over a flat `batch × n` buffer of visible states.
pub(crate) fn cd_k_flat(rbm: &Rbm, visible: &mut [u8], k: usize, rngs: &mut [StreamRng], scratch: &mut Scratch) {
    let n = rbm.n_visible();
    let mut h = vec![0u8; rbm.n_hidden()];
    for (v, rng) in visible.chunks_exact_mut(n).zip(rngs.iter_mut()) {
        for _ in 0..k {
            gibbs_raw(rbm, 1.0, v, &mut h, scratch, rng);
        }
    }
}

/// Advances each persistent chain by `k` Gibbs steps and returns their
/// visible states with analytic hidden means.
pub fn pcd_step(
    rbm: &Rbm,
    persistent: &mut [ChainState],
    k: usize,
    rngs: &mut [StreamRng],
) -> Result<Vec<NegativeSample>> {
    if k == 0 {
        return Err(QstError::Config("PCD needs k ≥ 1".into()));
    }
    if rngs.len() < persistent.len() {
        return Err(QstError::Config("PCD needs one random stream per chain".into()));
    }
    let mut scratch = Scratch::new(rbm);
    persistent
        .iter_mut()
        .zip(rngs.iter_mut())
        .map(|(chain, rng)| {
            chain.check(rbm)?;
            for _ in 0..k {
                gibbs_raw(rbm, 1.0, chain.v.as_mut_slice(), chain.h.as_mut_slice(), &mut scratch, rng);
            }
            Ok(NegativeSample {
                v: chain.v.clone(),
                h_mean: rbm.cond_h_given_v(&chain.v)?,
            })
        })
        .collect()
}

/// Default number of tempering levels.
pub const PT_DEFAULT_LEVELS: usize = 10;
/// Default highest temperature.
pub const PT_DEFAULT_T_MAX: f64 = 100.0;

/// Replica-exchange ladder; index 0 is the target distribution (β = 1).
#[derive(Clone, Debug)]
pub struct PtLadder {
    pub betas: Vec<f64>,
    pub replicas: Vec<ChainState>,
    pub swap_attempts: Vec<u64>,
    pub swap_accepts: Vec<u64>,
    /// Which adjacent pairs (even or odd) the next swap sweep proposes.
    odd_sweep: bool,
}

impl PtLadder {
    /// Temperatures geometric between 1 and `t_max`, replicas uniformly random.
    pub fn geometric<R: Rng + ?Sized>(
        levels: usize,
        t_max: f64,
        n_visible: usize,
        n_hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if levels < 2 || !(t_max > 1.0) {
            return Err(QstError::Config(format!(
                "a tempering ladder needs ≥ 2 levels and T_max > 1 (got {levels}, {t_max})"
            )));
        }
        let betas = (0..levels)
            .map(|l| {
                if l == levels - 1 {
                    1.0 / t_max
                } else {
                    t_max.powf(-(l as f64) / (levels - 1) as f64)
                }
            })
            .collect();
        let replicas = (0..levels)
            .map(|l| ChainState::random(n_visible, n_hidden, l as u64, rng))
            .collect();
        Ok(PtLadder {
            betas,
            replicas,
            swap_attempts: vec![0; levels - 1],
            swap_accepts: vec![0; levels - 1],
            odd_sweep: false,
        })
    }

    pub fn from_betas(betas: Vec<f64>, replicas: Vec<ChainState>) -> Result<Self> {
        check_len("ladder replicas", betas.len(), replicas.len())?;
        if betas.len() < 2 || betas[0] != 1.0 || betas.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(QstError::Config(
                "ladder betas must start at 1 and strictly decrease".into(),
            ));
        }
        let pairs = betas.len() - 1;
        Ok(PtLadder {
            betas,
            replicas,
            swap_attempts: vec![0; pairs],
            swap_accepts: vec![0; pairs],
            odd_sweep: false,
        })
    }

    pub fn acceptance_rates(&self) -> Vec<f64> {
        self.swap_accepts
            .iter()
            .zip(&self.swap_attempts)
            .map(|(&a, &t)| if t == 0 { 0.0 } else { a as f64 / t as f64 })
            .collect()
    }
}

/// `r = exp((β_i − β_j)(E_i − E_j))` for exchanging the configurations held
/// at inverse temperatures `β_i` and `β_j`.
pub fn swap_acceptance_ratio(beta_i: f64, beta_j: f64, energy_i: f64, energy_j: f64) -> f64 {
    ((beta_i - beta_j) * (energy_i - energy_j)).exp()
}

/// One tempered Gibbs step per replica, then a sweep of swap proposals over
/// alternating even/odd adjacent pairs. Returns the β = 1 visible state.
pub fn pt_step<R: Rng + ?Sized>(rbm: &Rbm, ladder: &mut PtLadder, rng: &mut R) -> Result<BitVector> {
    for r in &ladder.replicas {
        r.check(rbm)?;
    }
    let mut scratch = Scratch::new(rbm);
    pt_step_raw(rbm, ladder, &mut scratch, rng);
    Ok(ladder.replicas[0].v.clone())
}

pub(crate) fn pt_step_raw<R: Rng + ?Sized>(rbm: &Rbm, ladder: &mut PtLadder, scratch: &mut Scratch, rng: &mut R) {
    for (beta, replica) in ladder.betas.iter().zip(ladder.replicas.iter_mut()) {
        gibbs_raw(rbm, *beta, replica.v.as_mut_slice(), replica.h.as_mut_slice(), scratch, rng);
    }
    let start = usize::from(ladder.odd_sweep);
    ladder.odd_sweep = !ladder.odd_sweep;
    let mut i = start;
    while i + 1 < ladder.betas.len() {
        let e_i = rbm.energy_unchecked(ladder.replicas[i].v.as_slice(), ladder.replicas[i].h.as_slice());
        let e_j = rbm.energy_unchecked(ladder.replicas[i + 1].v.as_slice(), ladder.replicas[i + 1].h.as_slice());
        let r = swap_acceptance_ratio(ladder.betas[i], ladder.betas[i + 1], e_i, e_j);
        ladder.swap_attempts[i] += 1;
        if r >= 1.0 || rng.gen::<f64>() < r {
            ladder.swap_accepts[i] += 1;
            let (lo, hi) = ladder.replicas.split_at_mut(i + 1);
            std::mem::swap(&mut lo[i].v, &mut hi[0].v);
            std::mem::swap(&mut lo[i].h, &mut hi[0].h);
        }
        i += 2;
    }
}
