//! Mode search for the joint RBM distribution, posed as a bipartite QUBO.
//!
//! For a fixed visible state the optimal hidden state is closed-form
//! (`h_j = 1` iff its coefficient is negative), so both solvers only search
//! over visible configurations.

use rand::{Rng, SeedableRng};

use crate::bits::BitVector;
use crate::error::{check_len, QstError, Result};
use crate::rbm::Rbm;
use crate::rng::StreamRng;

/// Largest visible count `solve_exact` will enumerate.
pub const EXACT_VISIBLE_CAP: usize = 24;

/// Minimize `offset + Σ linear_k x_k + Σ weight x_i x_j` over `x ∈ {0,1}^(n+m)`,
/// with couplings only between the first `n_visible` and the last `n_hidden` indices.
#[derive(Clone, Debug, PartialEq)]
pub struct QuboInstance {
    pub n_visible: usize,
    pub n_hidden: usize,
    pub linear: Vec<f64>,
    pub quadratic: Vec<(usize, usize, f64)>,
    pub offset: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeMethod {
    Exact,
    Annealed,
    /// Most probable data candidate under the visible marginal.
    Candidates,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeResult {
    pub v_star: BitVector,
    pub h_star: BitVector,
    pub energy: f64,
    pub method: ModeMethod,
    pub restarts_used: usize,
    /// Best energy found after each restart (annealer only).
    pub best_by_restart: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnealConfig {
    pub t_start: f64,
    pub t_end: f64,
    /// Sweeps per restart; `None` means `50 · n_visible`.
    pub sweeps: Option<usize>,
    pub restarts: usize,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        AnnealConfig {
            t_start: 2.0,
            t_end: 0.01,
            sweeps: None,
            restarts: 8,
        }
    }
}

/// The QUBO whose objective over `(v, h)` equals the RBM energy.
pub fn to_qubo(rbm: &Rbm) -> QuboInstance {
    let (n, m) = (rbm.n_visible(), rbm.n_hidden());
    let linear = rbm
        .visible_bias()
        .iter()
        .chain(rbm.hidden_bias())
        .map(|x| -x)
        .collect();
    let mut quadratic = Vec::new();
    for i in 0..n {
        for (j, &w) in rbm.weight_row(i).iter().enumerate() {
            if w != 0.0 {
                quadratic.push((i, n + j, -w));
            }
        }
    }
    QuboInstance {
        n_visible: n,
        n_hidden: m,
        linear,
        quadratic,
        offset: 0.0,
    }
}

impl QuboInstance {
    pub fn objective(&self, x: &[u8]) -> f64 {
        let mut e = self.offset;
        for (&c, &xi) in self.linear.iter().zip(x) {
            if xi == 1 {
                e += c;
            }
        }
        for &(i, j, w) in &self.quadratic {
            if x[i] == 1 && x[j] == 1 {
                e += w;
            }
        }
        e
    }

    /// Objective of a visible/hidden pair.
    pub fn objective_split(&self, v: &[u8], h: &[u8]) -> f64 {
        let mut x = Vec::with_capacity(v.len() + h.len());
        x.extend_from_slice(v);
        x.extend_from_slice(h);
        self.objective(&x)
    }

    fn validate(&self) -> Result<()> {
        check_len("QUBO linear terms", self.n_visible + self.n_hidden, self.linear.len())?;
        for &(i, j, _) in &self.quadratic {
            let (lo, hi) = if i < j { (i, j) } else { (j, i) };
            if lo >= self.n_visible || hi < self.n_visible || hi >= self.n_visible + self.n_hidden {
                return Err(QstError::Config(format!(
                    "QUBO coupling ({i}, {j}) is not between the visible and hidden blocks"
                )));
            }
        }
        Ok(())
    }

    /// Dense visible × hidden coupling block, row-major.
    fn coupling_block(&self) -> Vec<f64> {
        let (n, m) = (self.n_visible, self.n_hidden);
        let mut dense = vec![0.0; n * m];
        for &(i, j, w) in &self.quadratic {
            let (vi, hj) = if i < j { (i, j - n) } else { (j, i - n) };
            dense[vi * m + hj] += w;
        }
        dense
    }
}

/// Closed-form hidden minimizer for fixed coefficients; zero on ties.
#[inline]
fn best_hidden(coeffs: &[f64], h: &mut [u8]) {
    for (hj, &c) in h.iter_mut().zip(coeffs) {
        *hj = (c < 0.0) as u8;
    }
}

/// `min_h` objective given the hidden coefficients and the visible part.
#[inline]
fn reduced_objective(offset: f64, visible_part: f64, coeffs: &[f64]) -> f64 {
    offset + visible_part + coeffs.iter().map(|&c| c.min(0.0)).sum::<f64>()
}

/// Bipartite QUBO in a form convenient for single visible-bit moves.
struct Reduced<'a> {
    q: &'a QuboInstance,
    coupling: Vec<f64>,
}

impl<'a> Reduced<'a> {
    fn new(q: &'a QuboInstance) -> Self {
        Reduced {
            coupling: q.coupling_block(),
            q,
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        let m = self.q.n_hidden;
        &self.coupling[i * m..(i + 1) * m]
    }

    fn hidden_linear(&self) -> &[f64] {
        &self.q.linear[self.q.n_visible..]
    }

    fn coefficients(&self, v: &[u8], out: &mut [f64]) {
        out.copy_from_slice(self.hidden_linear());
        for (i, &vi) in v.iter().enumerate() {
            if vi == 1 {
                for (o, w) in out.iter_mut().zip(self.row(i)) {
                    *o += w;
                }
            }
        }
    }

    fn visible_part(&self, v: &[u8]) -> f64 {
        v.iter()
            .zip(&self.q.linear)
            .filter(|(&vi, _)| vi == 1)
            .map(|(_, c)| c)
            .sum()
    }

    /// Exact objective at `v` with its optimal hidden response.
    fn completed(&self, v: &[u8]) -> (Vec<u8>, f64) {
        let mut coeffs = vec![0.0; self.q.n_hidden];
        self.coefficients(v, &mut coeffs);
        let mut h = vec![0u8; self.q.n_hidden];
        best_hidden(&coeffs, &mut h);
        let e = self.q.objective_split(v, &h);
        (h, e)
    }

    /// Flips visible bits while any flip lowers the reduced objective.
    fn greedy_descent(&self, v: &mut [u8]) {
        let n = self.q.n_visible;
        let mut coeffs = vec![0.0; self.q.n_hidden];
        self.coefficients(v, &mut coeffs);
        loop {
            let mut improved = false;
            for i in 0..n {
                if self.flip_delta(v, &coeffs, i) < -1e-12 {
                    self.apply_flip(v, &mut coeffs, i);
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
    }

    #[inline]
    fn flip_delta(&self, v: &[u8], coeffs: &[f64], i: usize) -> f64 {
        let sign = if v[i] == 0 { 1.0 } else { -1.0 };
        let mut delta = sign * self.q.linear[i];
        for (&c, &w) in coeffs.iter().zip(self.row(i)) {
            delta += (c + sign * w).min(0.0) - c.min(0.0);
        }
        delta
    }

    #[inline]
    fn apply_flip(&self, v: &mut [u8], coeffs: &mut [f64], i: usize) {
        let sign = if v[i] == 0 { 1.0 } else { -1.0 };
        v[i] ^= 1;
        for (c, &w) in coeffs.iter_mut().zip(self.row(i)) {
            *c += sign * w;
        }
    }
}

/// Keeps the lower energy, breaking exact ties toward the lexicographically
/// smaller `(v, h)`.
fn better(candidate: &(Vec<u8>, Vec<u8>, f64), incumbent: &(Vec<u8>, Vec<u8>, f64)) -> bool {
    candidate.2 < incumbent.2
        || (candidate.2 == incumbent.2 && (&candidate.0, &candidate.1) < (&incumbent.0, &incumbent.1))
}

/// Global minimizer by enumerating visible states with a closed-form hidden layer.
pub fn solve_exact(q: &QuboInstance) -> Result<ModeResult> {
    q.validate()?;
    let (n, m) = (q.n_visible, q.n_hidden);
    if n > EXACT_VISIBLE_CAP {
        return Err(QstError::Capacity {
            what: "exact mode search",
            requested: n,
            cap: EXACT_VISIBLE_CAP,
        });
    }
    let reduced = Reduced::new(q);
    let mut v = vec![0u8; n];
    let mut coeffs = vec![0.0; m];
    reduced.coefficients(&v, &mut coeffs);
    let mut visible_part = 0.0;

    let (h0, e0) = reduced.completed(&v);
    let mut best = (v.clone(), h0, e0);
    let mut best_approx = reduced_objective(q.offset, visible_part, &coeffs);

    // Gray-code walk; incremental values only screen candidates, which are
    // then re-evaluated exactly.
    for step in 1usize..(1usize << n) {
        let unit = n - 1 - step.trailing_zeros() as usize;
        if step % 4096 == 0 {
            v[unit] ^= 1;
            reduced.coefficients(&v, &mut coeffs);
            visible_part = reduced.visible_part(&v);
        } else {
            let sign = if v[unit] == 0 { 1.0 } else { -1.0 };
            visible_part += sign * q.linear[unit];
            reduced.apply_flip(&mut v, &mut coeffs, unit);
        }
        let approx = reduced_objective(q.offset, visible_part, &coeffs);
        let tol = 1e-9 * (1.0 + best_approx.abs());
        if approx <= best_approx + tol {
            let (h, e) = reduced.completed(&v);
            let candidate = (v.clone(), h, e);
            if better(&candidate, &best) {
                best = candidate;
                best_approx = best_approx.min(approx);
            }
        }
    }
    let (v_star, h_star, energy) = best;
    Ok(ModeResult {
        v_star: BitVector::from_bits(v_star)?,
        h_star: BitVector::from_bits(h_star)?,
        energy,
        method: ModeMethod::Exact,
        restarts_used: 0,
        best_by_restart: Vec::new(),
    })
}

/// Simulated annealing over visible bits with geometric cooling, best of
/// several restarts. Every candidate in `candidates` is greedily polished and
/// competes with the annealed states, so the result is never worse than any
/// polished candidate.
pub fn solve_anneal<R: Rng + ?Sized>(
    q: &QuboInstance,
    cfg: &AnnealConfig,
    candidates: &[BitVector],
    rng: &mut R,
) -> Result<ModeResult> {
    q.validate()?;
    if !(cfg.t_start > 0.0 && cfg.t_end > 0.0) {
        return Err(QstError::Config("annealing temperatures must be positive".into()));
    }
    let (n, m) = (q.n_visible, q.n_hidden);
    for c in candidates {
        check_len("annealer candidate", n, c.len())?;
    }
    let reduced = Reduced::new(q);
    let sweeps = cfg.sweeps.unwrap_or(50 * n).max(1);
    let restart_seeds: Vec<u64> = (0..cfg.restarts).map(|_| rng.gen()).collect();

    let mut best: Option<(Vec<u8>, Vec<u8>, f64)> = None;
    let mut best_by_restart = Vec::with_capacity(cfg.restarts);
    let mut coeffs = vec![0.0; m];

    let offer = |v: Vec<u8>, best: &mut Option<(Vec<u8>, Vec<u8>, f64)>| {
        let (h, e) = reduced.completed(&v);
        let candidate = (v, h, e);
        if best.as_ref().map_or(true, |b| better(&candidate, b)) {
            *best = Some(candidate);
        }
    };

    for seed in restart_seeds {
        let mut local = StreamRng::seed_from_u64(seed);
        let mut v: Vec<u8> = (0..n).map(|_| local.gen::<bool>() as u8).collect();
        reduced.coefficients(&v, &mut coeffs);
        let mut current = reduced_objective(q.offset, reduced.visible_part(&v), &coeffs);
        let mut restart_best = (v.clone(), current);
        let ratio = cfg.t_end / cfg.t_start;
        for s in 0..sweeps {
            let frac = if sweeps == 1 { 1.0 } else { s as f64 / (sweeps - 1) as f64 };
            let temp = cfg.t_start * ratio.powf(frac);
            for i in 0..n {
                let delta = reduced.flip_delta(&v, &coeffs, i);
                if delta <= 0.0 || local.gen::<f64>() < (-delta / temp).exp() {
                    reduced.apply_flip(&mut v, &mut coeffs, i);
                    current += delta;
                    if current < restart_best.1 {
                        restart_best = (v.clone(), current);
                    }
                }
            }
        }
        let mut polished = restart_best.0;
        reduced.greedy_descent(&mut polished);
        offer(polished, &mut best);
        best_by_restart.push(best.as_ref().map(|b| b.2).unwrap_or(f64::INFINITY));
    }

    for c in candidates {
        let mut v = c.as_slice().to_vec();
        reduced.greedy_descent(&mut v);
        offer(v, &mut best);
    }
    if best.is_none() {
        offer(vec![0; n], &mut best);
    }
    let (v_star, h_star, energy) = best.expect("at least one candidate offered");
    Ok(ModeResult {
        v_star: BitVector::from_bits(v_star)?,
        h_star: BitVector::from_bits(h_star)?,
        energy,
        method: ModeMethod::Annealed,
        restarts_used: cfg.restarts,
        best_by_restart,
    })
}

/// Mode of an RBM: exact when `n_visible ≤ exact_cap`, annealed otherwise.
pub fn find_mode<R: Rng + ?Sized>(
    rbm: &Rbm,
    exact_cap: usize,
    anneal: &AnnealConfig,
    candidates: &[BitVector],
    rng: &mut R,
) -> Result<ModeResult> {
    let q = to_qubo(rbm);
    if rbm.n_visible() <= exact_cap.min(EXACT_VISIBLE_CAP) {
        solve_exact(&q)
    } else {
        solve_anneal(&q, anneal, candidates, rng)
    }
}

/// The candidate with the largest marginal probability `p(v)` (first one on
/// ties), paired with its energy-minimizing hidden state.
pub fn best_candidate(rbm: &Rbm, candidates: &[BitVector]) -> Result<ModeResult> {
    let mut best: Option<(&BitVector, f64)> = None;
    for v in candidates {
        let lp = rbm.log_unnormalized_pv(v)?;
        if best.map_or(true, |(_, b)| lp > b) {
            best = Some((v, lp));
        }
    }
    let (v, _) = best.ok_or_else(|| QstError::Config("no mode candidates given".into()))?;
    let mut field = vec![0.0; rbm.n_hidden()];
    rbm.hidden_field_into(v.as_slice(), &mut field);
    let h = BitVector::from_bits(field.iter().map(|&f| u8::from(f > 0.0)).collect())?;
    let energy = rbm.energy(v, &h)?;
    Ok(ModeResult {
        v_star: v.clone(),
        h_star: h,
        energy,
        method: ModeMethod::Candidates,
        restarts_used: 0,
        best_by_restart: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{domain, stream};

    fn random_rbm(n: usize, m: usize, scale: f64, seed: u64) -> Rbm {
        let mut rng = stream(seed, domain::INIT, 5);
        let mut g = |k: usize| (0..k).map(|_| rng.gen_range(-scale..scale)).collect::<Vec<_>>();
        Rbm::from_parts(g(n), g(m), g(n * m)).unwrap()
    }

    /// Naive minimum over all `2^(n+m)` joint configurations.
    fn brute_force(q: &QuboInstance) -> (Vec<u8>, f64) {
        let total = q.n_visible + q.n_hidden;
        (0..1usize << total)
            .map(|idx| {
                let x = BitVector::from_index(idx, total).into_inner();
                let e = q.objective(&x);
                (x, e)
            })
            .fold((vec![], f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc })
    }

    #[test]
    fn zero_qubo_picks_all_zeros() {
        let q = to_qubo(&Rbm::zeros(3, 2).unwrap());
        assert!(q.linear.iter().all(|&x| x == 0.0) && q.quadratic.is_empty());
        let r = solve_exact(&q).unwrap();
        assert_eq!(r.energy, 0.0);
        assert_eq!(r.v_star, BitVector::zeros(3));
        assert_eq!(r.h_star, BitVector::zeros(2));
        let mut rng = stream(1, domain::MODE, 0);
        let a = solve_anneal(&q, &AnnealConfig::default(), &[], &mut rng).unwrap();
        assert_eq!(a.energy, 0.0);
    }

    #[test]
    fn one_by_one_minimum() {
        let rbm = Rbm::from_parts(vec![1.0], vec![1.0], vec![1.0]).unwrap();
        let r = solve_exact(&to_qubo(&rbm)).unwrap();
        assert_eq!(r.v_star, BitVector::ones(1));
        assert_eq!(r.h_star, BitVector::ones(1));
        assert_eq!(r.energy, -3.0);
    }

    #[test]
    fn qubo_objective_equals_energy_exhaustively() {
        let rbm = random_rbm(5, 5, 1.0, 2);
        let q = to_qubo(&rbm);
        for idx in 0..1usize << 10 {
            let x = BitVector::from_index(idx, 10).into_inner();
            let v = BitVector::from_bits(x[..5].to_vec()).unwrap();
            let h = BitVector::from_bits(x[5..].to_vec()).unwrap();
            assert!((q.objective(&x) - rbm.energy(&v, &h).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_hidden_is_optimal() {
        for seed in 0..5 {
            let rbm = random_rbm(3, 10, 1.0, 10 + seed);
            let q = to_qubo(&rbm);
            let reduced = Reduced::new(&q);
            for vi in 0..8 {
                let v = BitVector::from_index(vi, 3);
                let (_, e) = reduced.completed(v.as_slice());
                for hi in 0..1usize << 10 {
                    let h = BitVector::from_index(hi, 10);
                    assert!(e <= rbm.energy(&v, &h).unwrap() + 1e-12);
                }
            }
        }
    }

    #[test]
    fn exact_matches_brute_force() {
        for seed in 0..20 {
            let rbm = random_rbm(4, 4, 1.0, 100 + seed);
            let q = to_qubo(&rbm);
            let r = solve_exact(&q).unwrap();
            let (_, e) = brute_force(&q);
            assert!((r.energy - e).abs() < 1e-12, "seed {seed}");
            assert!((r.energy - rbm.energy(&r.v_star, &r.h_star).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_bipartite_and_oversized() {
        let mut q = to_qubo(&Rbm::zeros(2, 2).unwrap());
        q.quadratic.push((0, 1, 1.0));
        assert!(solve_exact(&q).is_err());
        let big = to_qubo(&Rbm::zeros(25, 1).unwrap());
        assert!(matches!(solve_exact(&big), Err(QstError::Capacity { .. })));
    }

    #[test]
    fn annealer_is_deterministic_and_monotone() {
        let rbm = random_rbm(12, 8, 1.0, 3);
        let q = to_qubo(&rbm);
        let cfg = AnnealConfig::default();
        let a = solve_anneal(&q, &cfg, &[], &mut stream(9, domain::MODE, 0)).unwrap();
        let b = solve_anneal(&q, &cfg, &[], &mut stream(9, domain::MODE, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.best_by_restart.len(), 8);
        assert!(a.best_by_restart.windows(2).all(|w| w[1] <= w[0]));
        assert!((a.energy - rbm.energy(&a.v_star, &a.h_star).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn annealer_never_worse_than_candidates() {
        let rbm = random_rbm(10, 6, 2.0, 4);
        let q = to_qubo(&rbm);
        let cfg = AnnealConfig { restarts: 1, sweeps: Some(1), ..AnnealConfig::default() };
        let candidates: Vec<BitVector> = (0..20).map(|i| BitVector::from_index(i * 37, 10)).collect();
        let r = solve_anneal(&q, &cfg, &candidates, &mut stream(5, domain::MODE, 0)).unwrap();
        let reduced = Reduced::new(&q);
        for c in &candidates {
            assert!(r.energy <= reduced.completed(c.as_slice()).1 + 1e-12);
        }
    }

    #[test]
    fn best_candidate_maximizes_marginal() {
        let rbm = random_rbm(5, 3, 1.5, 21);
        let table = rbm.exact_table().unwrap();
        let cands: Vec<BitVector> = [3usize, 17, 30, 8].iter().map(|&i| BitVector::from_index(i, 5)).collect();
        let r = best_candidate(&rbm, &cands).unwrap();
        let want = cands
            .iter()
            .max_by(|a, b| table.log_prob(a.index()).total_cmp(&table.log_prob(b.index())))
            .unwrap();
        assert_eq!(&r.v_star, want);
        assert_eq!(r.method, ModeMethod::Candidates);
        // h* minimizes the energy at fixed v*.
        for hi in 0..8 {
            let h = BitVector::from_index(hi, 3);
            assert!(r.energy <= rbm.energy(&r.v_star, &h).unwrap() + 1e-12);
        }
        assert!(best_candidate(&rbm, &[]).is_err());
    }
}
