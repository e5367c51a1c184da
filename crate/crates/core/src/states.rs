//! Target states, measurement distributions, and synthetic datasets.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use crate::bits::BitVector;
use crate::error::{check_len, QstError, Result};
use crate::rbm::ENUMERATION_CAP;

/// Nonnegative computational-basis amplitudes, L2-normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetState {
    pub n_qubits: usize,
    pub amplitudes: Vec<f64>,
    pub label: String,
}

/// Measurement-outcome probabilities over all `2^n` bit strings.
#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeDistribution {
    pub n_qubits: usize,
    pub probs: Vec<f64>,
}

fn check_enumerable(what: &'static str, n: usize) -> Result<()> {
    if n > ENUMERATION_CAP {
        Err(QstError::Capacity {
            what,
            requested: n,
            cap: ENUMERATION_CAP,
        })
    } else {
        Ok(())
    }
}

impl TargetState {
    pub fn new(n_qubits: usize, amplitudes: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        check_len("target amplitudes", 1usize << n_qubits, amplitudes.len())?;
        if amplitudes.iter().any(|&a| !(a >= 0.0)) {
            return Err(QstError::Numerical("target amplitudes must be nonnegative".into()));
        }
        let norm: f64 = amplitudes.iter().map(|a| a * a).sum();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(QstError::Numerical(format!("target state has norm² {norm}")));
        }
        Ok(TargetState {
            n_qubits,
            amplitudes,
            label: label.into(),
        })
    }

    /// `ψ(v) = √q(v)`: the positive wavefunction whose Born distribution is `q`.
    pub fn from_distribution(dist: &OutcomeDistribution, label: impl Into<String>) -> Result<Self> {
        let amps = dist.probs.iter().map(|p| p.max(0.0).sqrt()).collect();
        TargetState::new(dist.n_qubits, amps, label)
    }

    pub fn distribution(&self) -> OutcomeDistribution {
        OutcomeDistribution {
            n_qubits: self.n_qubits,
            probs: self.amplitudes.iter().map(|a| a * a).collect(),
        }
    }

    pub fn overlap(&self, other: &TargetState) -> Result<f64> {
        check_len("overlap", self.amplitudes.len(), other.amplitudes.len())?;
        Ok(self.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| a * b).sum())
    }

    /// Indices of the nonzero amplitudes.
    pub fn support(&self) -> Vec<usize> {
        (0..self.amplitudes.len()).filter(|&i| self.amplitudes[i] > 0.0).collect()
    }
}

impl OutcomeDistribution {
    pub fn new(n_qubits: usize, probs: Vec<f64>) -> Result<Self> {
        check_len("outcome distribution", 1usize << n_qubits, probs.len())?;
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(QstError::Numerical("probabilities must be nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(QstError::Numerical(format!("probabilities sum to {total}")));
        }
        Ok(OutcomeDistribution { n_qubits, probs })
    }

    pub fn uniform(n_qubits: usize) -> Self {
        let size = 1usize << n_qubits;
        OutcomeDistribution {
            n_qubits,
            probs: vec![1.0 / size as f64; size],
        }
    }

    pub fn total_variation(&self, other: &[f64]) -> f64 {
        0.5 * self.probs.iter().zip(other).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

/// `(|0…0⟩ + |1…1⟩)/√2`; for `n = 1` the two terms are `|0⟩` and `|1⟩`.
pub fn ghz(n: usize) -> Result<TargetState> {
    if n == 0 {
        return Err(QstError::Config("GHZ needs at least one qubit".into()));
    }
    check_enumerable("GHZ amplitudes", n)?;
    let size = 1usize << n;
    let mut amps = vec![0.0; size];
    amps[0] = std::f64::consts::FRAC_1_SQRT_2;
    amps[size - 1] = std::f64::consts::FRAC_1_SQRT_2;
    TargetState::new(n, amps, "ghz")
}

/// Equal superposition of the `n` one-hot strings.
pub fn w_state(n: usize) -> Result<TargetState> {
    if n == 0 {
        return Err(QstError::Config("W state needs at least one qubit".into()));
    }
    check_enumerable("W amplitudes", n)?;
    let mut amps = vec![0.0; 1usize << n];
    let a = 1.0 / (n as f64).sqrt();
    for q in 0..n {
        amps[1usize << q] = a;
    }
    TargetState::new(n, amps, "w")
}

/// Computational-basis statistics of `(1 − p)|W⟩⟨W| + p·𝟙/2^n`.
pub fn depolarized_w_distribution(n: usize, p: f64) -> Result<OutcomeDistribution> {
    if !(0.0..=1.0).contains(&p) {
        return Err(QstError::Config(format!("depolarization p = {p} is outside [0, 1]")));
    }
    if n == 0 {
        return Err(QstError::Config("W state needs at least one qubit".into()));
    }
    check_enumerable("depolarized W distribution", n)?;
    let size = 1usize << n;
    let background = p / size as f64;
    let mut probs = vec![background; size];
    for q in 0..n {
        probs[1usize << q] += (1.0 - p) / n as f64;
    }
    let total: f64 = probs.iter().sum();
    for x in probs.iter_mut() {
        *x /= total;
    }
    OutcomeDistribution::new(n, probs)
}

// ---- transverse-field frustrated Ising model --------------------------------

/// Largest TFFIM lattice (in spins) handled by exact diagonalization.
pub const TFFIM_MAX_SPINS: usize = 16;

/// `H = J Σ_<ij> σᶻσᶻ − h Σ σˣ` on a periodic triangular lattice: the
/// `rows × cols` square lattice plus the `(+1, +1)` diagonal of each plaquette.
#[derive(Clone, Debug)]
pub struct TffimHamiltonian {
    pub n_spins: usize,
    pub bonds: Vec<(usize, usize)>,
    pub coupling: f64,
    pub field: f64,
    diagonal: Vec<f64>,
}

impl TffimHamiltonian {
    pub fn triangular(rows: usize, cols: usize, coupling: f64, field: f64) -> Result<Self> {
        let n = rows * cols;
        if n == 0 {
            return Err(QstError::Config("empty lattice".into()));
        }
        if n > TFFIM_MAX_SPINS {
            return Err(QstError::Capacity {
                what: "TFFIM exact diagonalization",
                requested: n,
                cap: TFFIM_MAX_SPINS,
            });
        }
        let site = |r: usize, c: usize| (r % rows) * cols + (c % cols);
        let mut bonds = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let s = site(r, c);
                for t in [site(r, c + 1), site(r + 1, c), site(r + 1, c + 1)] {
                    let bond = (s.min(t), s.max(t));
                    if s != t && !bonds.contains(&bond) {
                        bonds.push(bond);
                    }
                }
            }
        }
        bonds.sort_unstable();
        let diagonal = (0..1usize << n)
            .map(|x| {
                coupling
                    * bonds
                        .iter()
                        .map(|&(i, j)| if spin_bit(x, i, n) == spin_bit(x, j, n) { 1.0 } else { -1.0 })
                        .sum::<f64>()
            })
            .collect();
        Ok(TffimHamiltonian {
            n_spins: n,
            bonds,
            coupling,
            field,
            diagonal,
        })
    }

    pub fn dim(&self) -> usize {
        1usize << self.n_spins
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    /// `⟨x|H|y⟩`.
    pub fn element(&self, x: usize, y: usize) -> f64 {
        if x == y {
            self.diagonal[x]
        } else if (x ^ y).count_ones() == 1 {
            -self.field
        } else {
            0.0
        }
    }

    /// `out = H · input`, one basis row at a time in a fixed order.
    pub fn apply(&self, input: &[f64], out: &mut [f64]) {
        let n = self.n_spins;
        for (x, o) in out.iter_mut().enumerate() {
            let mut flips = 0.0;
            for s in 0..n {
                flips += input[x ^ (1usize << s)];
            }
            *o = self.diagonal[x] * input[x] - self.field * flips;
        }
    }

    pub fn expectation(&self, state: &[f64]) -> f64 {
        let mut hv = vec![0.0; state.len()];
        self.apply(state, &mut hv);
        let norm: f64 = state.iter().map(|x| x * x).sum();
        state.iter().zip(&hv).map(|(a, b)| a * b).sum::<f64>() / norm
    }
}

/// Bit of spin `s` (position `s`, most significant first) in basis index `x`.
#[inline]
fn spin_bit(x: usize, s: usize, n: usize) -> usize {
    (x >> (n - 1 - s)) & 1
}

/// Lowest eigenpair found by restarted Lanczos.
#[derive(Clone, Debug)]
pub struct GroundState {
    pub energy: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
    /// Second-lowest Ritz value of the final Krylov space.
    pub next_ritz: Option<f64>,
}

const LANCZOS_RESIDUAL_TOL: f64 = 1e-8;
const LANCZOS_MAX_CYCLES: usize = 60;
const LANCZOS_KRYLOV_DIM: usize = 80;

fn normalize(x: &mut [f64]) -> f64 {
    let norm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm > 0.0 {
        for a in x.iter_mut() {
            *a /= norm;
        }
    }
    norm
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Restarted Lanczos with full reorthogonalization for the lowest eigenpair
/// of a symmetric operator given as a matrix-vector product.
pub fn lanczos_ground_state(dim: usize, apply: impl Fn(&[f64], &mut [f64])) -> Result<GroundState> {
    let krylov = LANCZOS_KRYLOV_DIM.min(dim);
    let mut start = vec![1.0; dim];
    // A slight tilt keeps the start vector from being orthogonal to the ground state.
    for (i, s) in start.iter_mut().enumerate() {
        *s += 1e-3 * ((i as f64 * 0.618_033_988_75).fract() - 0.5);
    }
    normalize(&mut start);
    let mut hv = vec![0.0; dim];
    let mut last = None;

    for _cycle in 0..LANCZOS_MAX_CYCLES {
        let mut basis: Vec<Vec<f64>> = vec![start.clone()];
        let mut alphas = Vec::with_capacity(krylov);
        let mut betas: Vec<f64> = Vec::with_capacity(krylov);
        loop {
            let q = basis.last().expect("nonempty basis");
            apply(q, &mut hv);
            let alpha = dot(q, &hv);
            alphas.push(alpha);
            let mut w = hv.clone();
            for _ in 0..2 {
                for b in &basis {
                    let c = dot(b, &w);
                    for (wi, bi) in w.iter_mut().zip(b) {
                        *wi -= c * bi;
                    }
                }
            }
            let beta = normalize(&mut w);
            if basis.len() == krylov || beta < 1e-12 {
                break;
            }
            betas.push(beta);
            basis.push(w);
        }
        let k = alphas.len();
        let mut t = DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = alphas[i];
            if i + 1 < k {
                t[(i, i + 1)] = betas[i];
                t[(i + 1, i)] = betas[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let lowest = order[0];
        let theta = eig.eigenvalues[lowest];
        let mut ritz = vec![0.0; dim];
        for (c, b) in basis.iter().enumerate() {
            let coeff = eig.eigenvectors[(c, lowest)];
            for (r, bi) in ritz.iter_mut().zip(b) {
                *r += coeff * bi;
            }
        }
        normalize(&mut ritz);
        apply(&ritz, &mut hv);
        let residual = hv
            .iter()
            .zip(&ritz)
            .map(|(h, r)| (h - theta * r).powi(2))
            .sum::<f64>()
            .sqrt();
        let next_ritz = order.get(1).map(|&i| eig.eigenvalues[i]);
        let result = GroundState {
            energy: theta,
            vector: ritz.clone(),
            residual,
            next_ritz,
        };
        if residual <= LANCZOS_RESIDUAL_TOL {
            return Ok(result);
        }
        last = Some(result);
        start = ritz;
    }
    let residual = last.map(|g| g.residual).unwrap_or(f64::NAN);
    Err(QstError::Numerical(format!(
        "Lanczos did not converge: residual {residual:e} after {LANCZOS_MAX_CYCLES} restarts"
    )))
}

/// Ground state of the periodic triangular-lattice TFFIM.
pub fn tffim_ground_state(rows: usize, cols: usize, coupling: f64, field: f64) -> Result<TargetState> {
    let ham = TffimHamiltonian::triangular(rows, cols, coupling, field)?;
    let gs = lanczos_ground_state(ham.dim(), |x, y| ham.apply(x, y))?;
    if let Some(next) = gs.next_ritz {
        if (next - gs.energy).abs() < 1e-10 {
            return Err(QstError::Numerical(format!(
                "TFFIM ground space is degenerate (E0 = {}, E1 = {next})",
                gs.energy
            )));
        }
    }
    let mut amps = gs.vector;
    let pivot = amps
        .iter()
        .copied()
        .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
    if pivot < 0.0 {
        for a in amps.iter_mut() {
            *a = -*a;
        }
    }
    if let Some(bad) = amps.iter().copied().find(|&a| a < -1e-9) {
        return Err(QstError::Numerical(format!(
            "TFFIM ground vector has a negative amplitude {bad}"
        )));
    }
    for a in amps.iter_mut() {
        *a = a.max(0.0);
    }
    normalize(&mut amps);
    TargetState::new(rows * cols, amps, format!("tffim_{rows}x{cols}"))
}

// ---- toric code --------------------------------------------------------------

/// Largest toric-code lattice side.
pub const TORIC_MAX_L: usize = 3;

/// Edges around vertex `(r, c)`; horizontal edge `(r, c)` is qubit `r·L + c`,
/// vertical edge `(r, c)` is qubit `L² + r·L + c`.
pub fn toric_star_edges(l: usize, r: usize, c: usize) -> [usize; 4] {
    let h = |r: usize, c: usize| (r % l) * l + (c % l);
    let v = |r: usize, c: usize| l * l + (r % l) * l + (c % l);
    [h(r, c), h(r, c + l - 1), v(r, c), v(r + l - 1, c)]
}

/// Edges bounding the plaquette whose lower-left corner is vertex `(r, c)`.
pub fn toric_plaquette_edges(l: usize, r: usize, c: usize) -> [usize; 4] {
    let h = |r: usize, c: usize| (r % l) * l + (c % l);
    let v = |r: usize, c: usize| l * l + (r % l) * l + (c % l);
    [h(r, c), h(r + 1, c), v(r, c), v(r, c + 1)]
}

/// `∝ Π_s (1 + A_s)|0…0⟩`: uniform superposition over every edge pattern
/// reachable by flipping stars.
pub fn toric_code_ground_state(l: usize) -> Result<TargetState> {
    if l < 2 {
        return Err(QstError::Config("toric code needs L ≥ 2".into()));
    }
    let n = 2 * l * l;
    if l > TORIC_MAX_L || n > ENUMERATION_CAP {
        return Err(QstError::Capacity {
            what: "toric code ground state",
            requested: n,
            cap: 2 * TORIC_MAX_L * TORIC_MAX_L,
        });
    }
    let star_masks: Vec<usize> = (0..l * l)
        .map(|s| {
            toric_star_edges(l, s / l, s % l)
                .iter()
                .fold(0usize, |m, &e| m ^ (1usize << (n - 1 - e)))
        })
        .collect();
    let mut support = std::collections::BTreeSet::new();
    for subset in 0usize..(1usize << (l * l)) {
        let config = star_masks
            .iter()
            .enumerate()
            .filter(|(s, _)| (subset >> s) & 1 == 1)
            .fold(0usize, |acc, (_, &m)| acc ^ m);
        support.insert(config);
    }
    let amp = 1.0 / (support.len() as f64).sqrt();
    let mut amps = vec![0.0; 1usize << n];
    for idx in support {
        amps[idx] = amp;
    }
    TargetState::new(n, amps, format!("toric_{l}x{l}"))
}

// ---- measurement datasets ----------------------------------------------------

/// A multiset of measured bit strings.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementDataset {
    pub n_qubits: usize,
    pub outcomes: Vec<BitVector>,
    pub label: String,
    pub seed: Option<u64>,
}

/// What to measure. Structured states sample in closed form at any size.
#[derive(Clone, Debug)]
pub enum MeasurementSource {
    Ghz(usize),
    W(usize),
    DepolarizedW { n: usize, p: f64 },
    Distribution { dist: OutcomeDistribution, label: String },
}

impl MeasurementSource {
    pub fn n_qubits(&self) -> usize {
        match self {
            MeasurementSource::Ghz(n) | MeasurementSource::W(n) => *n,
            MeasurementSource::DepolarizedW { n, .. } => *n,
            MeasurementSource::Distribution { dist, .. } => dist.n_qubits,
        }
    }

    pub fn label(&self) -> String {
        match self {
            MeasurementSource::Ghz(_) => "ghz".into(),
            MeasurementSource::W(_) => "w".into(),
            MeasurementSource::DepolarizedW { p, .. } => format!("depolarized_w_p{p}"),
            MeasurementSource::Distribution { label, .. } => label.clone(),
        }
    }

    pub fn from_state(state: &TargetState) -> Self {
        MeasurementSource::Distribution {
            dist: state.distribution(),
            label: state.label.clone(),
        }
    }
}

/// `count` i.i.d. computational-basis measurements.
pub fn sample_measurements<R: Rng + ?Sized>(
    source: &MeasurementSource,
    count: usize,
    rng: &mut R,
) -> Result<MeasurementDataset> {
    let n = source.n_qubits();
    if n == 0 {
        return Err(QstError::Config("cannot measure zero qubits".into()));
    }
    let outcomes = match source {
        MeasurementSource::Ghz(_) => (0..count)
            .map(|_| if rng.gen::<bool>() { BitVector::ones(n) } else { BitVector::zeros(n) })
            .collect(),
        MeasurementSource::W(_) => (0..count).map(|_| BitVector::one_hot(n, rng.gen_range(0..n))).collect(),
        MeasurementSource::DepolarizedW { p, .. } => {
            if !(0.0..=1.0).contains(p) {
                return Err(QstError::Config(format!("depolarization p = {p} is outside [0, 1]")));
            }
            (0..count)
                .map(|_| {
                    if rng.gen::<f64>() < *p {
                        let mut v = BitVector::zeros(n);
                        for b in v.as_mut_slice() {
                            *b = rng.gen::<bool>() as u8;
                        }
                        v
                    } else {
                        BitVector::one_hot(n, rng.gen_range(0..n))
                    }
                })
                .collect()
        }
        MeasurementSource::Distribution { dist, .. } => {
            check_enumerable("distribution sampling", n)?;
            let mut cdf = Vec::with_capacity(dist.probs.len());
            let mut acc = 0.0;
            for &p in &dist.probs {
                acc += p;
                cdf.push(acc);
            }
            let last_nonzero = dist.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
            (0..count)
                .map(|_| {
                    let u = rng.gen::<f64>() * acc;
                    let idx = cdf.partition_point(|&c| c <= u).min(last_nonzero);
                    BitVector::from_index(idx, n)
                })
                .collect()
        }
    };
    Ok(MeasurementDataset {
        n_qubits: n,
        outcomes,
        label: source.label(),
        seed: None,
    })
}

impl MeasurementDataset {
    pub fn new(n_qubits: usize, outcomes: Vec<BitVector>, label: impl Into<String>) -> Result<Self> {
        for o in &outcomes {
            check_len("dataset outcome", n_qubits, o.len())?;
        }
        Ok(MeasurementDataset {
            n_qubits,
            outcomes,
            label: label.into(),
            seed: None,
        })
    }

    pub fn total_count(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    /// Distinct outcomes with multiplicities, in lexicographic order.
    pub fn counts(&self) -> Vec<(BitVector, usize)> {
        let mut map: BTreeMap<&BitVector, usize> = BTreeMap::new();
        for o in &self.outcomes {
            *map.entry(o).or_default() += 1;
        }
        map.into_iter().map(|(k, c)| (k.clone(), c)).collect()
    }

    /// Empirical distribution `q̂` over all `2^n` strings.
    pub fn empirical_distribution(&self) -> Result<OutcomeDistribution> {
        check_enumerable("empirical distribution", self.n_qubits)?;
        if self.outcomes.is_empty() {
            return Err(QstError::Config("empty dataset has no empirical distribution".into()));
        }
        let mut probs = vec![0.0; 1usize << self.n_qubits];
        let w = 1.0 / self.outcomes.len() as f64;
        for o in &self.outcomes {
            probs[o.index()] += w;
        }
        Ok(OutcomeDistribution {
            n_qubits: self.n_qubits,
            probs,
        })
    }

    /// Plain-text form: `#` header lines then one bit string per line.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(32 + self.outcomes.len() * (self.n_qubits + 1));
        let _ = writeln!(s, "# n_qubits={}", self.n_qubits);
        let _ = writeln!(s, "# state={}", self.label);
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "# seed={seed}");
        }
        for o in &self.outcomes {
            let _ = writeln!(s, "{o}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut n_qubits = None;
        let mut label = String::new();
        let mut seed = None;
        let mut outcomes = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((key, value)) = comment.trim().split_once('=') {
                    match key.trim() {
                        "n_qubits" => {
                            n_qubits = Some(value.trim().parse::<usize>().map_err(|e| {
                                QstError::Parse(format!("line {}: n_qubits: {e}", lineno + 1))
                            })?)
                        }
                        "state" => label = value.trim().to_string(),
                        "seed" => {
                            seed = Some(value.trim().parse::<u64>().map_err(|e| {
                                QstError::Parse(format!("line {}: seed: {e}", lineno + 1))
                            })?)
                        }
                        _ => {}
                    }
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let v: BitVector = line.trim().parse()?;
            outcomes.push(v);
        }
        let n_qubits =
            n_qubits.ok_or_else(|| QstError::Parse("dataset header lacks n_qubits".into()))?;
        let mut ds = MeasurementDataset::new(n_qubits, outcomes, label)?;
        ds.seed = seed;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        MeasurementDataset::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{domain, stream};

    const S: f64 = std::f64::consts::FRAC_1_SQRT_2;

    #[test]
    fn ghz_examples() {
        assert_eq!(ghz(1).unwrap().amplitudes, vec![S, S]);
        let g = ghz(3).unwrap();
        assert_eq!(g.support(), vec![0b000, 0b111]);
        assert!(g.support().iter().all(|&i| g.amplitudes[i] == S));
    }

    #[test]
    fn w_examples() {
        let w2 = w_state(2).unwrap();
        assert_eq!(w2.support(), vec![0b01, 0b10]);
        assert!((w2.amplitudes[1] - S).abs() < 1e-15);
        let w10 = w_state(10).unwrap();
        assert_eq!(w10.support().len(), 10);
        assert!(w10.support().iter().all(|&i| (w10.amplitudes[i] - 0.1f64.sqrt()).abs() < 1e-15));
        for n in 2..8 {
            assert_eq!(w_state(n).unwrap().overlap(&ghz(n).unwrap()).unwrap(), 0.0);
        }
    }

    #[test]
    fn depolarized_limits() {
        let pure = depolarized_w_distribution(5, 0.0).unwrap();
        for (x, y) in pure.probs.iter().zip(&w_state(5).unwrap().distribution().probs) {
            assert!((x - y).abs() < 1e-15);
        }
        let mixed = depolarized_w_distribution(5, 1.0).unwrap();
        assert!(mixed.probs.iter().all(|&p| (p - 1.0 / 32.0).abs() < 1e-15));
        assert!(depolarized_w_distribution(3, 1.5).is_err());
    }

    #[test]
    fn depolarized_matches_density_matrix_diagonal() {
        let (n, p) = (6usize, 0.4);
        let dim = 1usize << n;
        let w = w_state(n).unwrap().amplitudes;
        let rho = DMatrix::from_fn(dim, dim, |i, j| {
            (1.0 - p) * w[i] * w[j] + if i == j { p / dim as f64 } else { 0.0 }
        });
        let dist = depolarized_w_distribution(n, p).unwrap();
        for i in 0..dim {
            assert!((dist.probs[i] - rho[(i, i)]).abs() < 1e-15);
        }
    }

    fn dense(ham: &TffimHamiltonian) -> DMatrix<f64> {
        DMatrix::from_fn(ham.dim(), ham.dim(), |x, y| ham.element(x, y))
    }

    #[test]
    fn tffim_chain_matches_dense() {
        let ham = TffimHamiltonian::triangular(1, 2, 1.0, 1.0).unwrap();
        assert_eq!(ham.bonds, vec![(0, 1)]);
        // Built independently from Pauli products: J σᶻ⊗σᶻ − h(σˣ⊗1 + 1⊗σˣ).
        let h_dense = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, -1.0, -1.0, 0.0, //
                -1.0, -1.0, 0.0, -1.0, //
                -1.0, 0.0, -1.0, -1.0, //
                0.0, -1.0, -1.0, 1.0,
            ],
        );
        assert_eq!(dense(&ham), h_dense);
        let eig = SymmetricEigen::new(h_dense);
        let (imin, emin) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &e)| if e < acc.1 { (i, e) } else { acc });
        let state = tffim_ground_state(1, 2, 1.0, 1.0).unwrap();
        assert!((ham.expectation(&state.amplitudes) - emin).abs() < 1e-10);
        let col = eig.eigenvectors.column(imin);
        let overlap: f64 = col.iter().zip(&state.amplitudes).map(|(a, b)| a * b).sum();
        assert!((overlap.abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn tffim_lanczos_matches_dense_on_small_lattice() {
        let ham = TffimHamiltonian::triangular(2, 3, 1.0, 1.0).unwrap();
        let d = dense(&ham);
        assert_eq!(d, d.transpose());
        let emin = SymmetricEigen::new(d).eigenvalues.min();
        let state = tffim_ground_state(2, 3, 1.0, 1.0).unwrap();
        assert!((ham.expectation(&state.amplitudes) - emin).abs() < 1e-9);
    }

    #[test]
    fn tffim_variational_bound() {
        let ham = TffimHamiltonian::triangular(3, 3, 1.0, 1.0).unwrap();
        assert_eq!(ham.bonds.len(), 27);
        let state = tffim_ground_state(3, 3, 1.0, 1.0).unwrap();
        let e0 = ham.expectation(&state.amplitudes);
        let mut rng = stream(1, domain::DATASET, 0);
        for _ in 0..100 {
            let trial: Vec<f64> = (0..ham.dim()).map(|_| rng.gen::<f64>() - 0.5).collect();
            assert!(e0 <= ham.expectation(&trial) + 1e-12);
        }
        // symmetric operator on random index pairs
        for _ in 0..200 {
            let (x, y) = (rng.gen_range(0..512), rng.gen_range(0..512));
            assert_eq!(ham.element(x, y), ham.element(y, x));
        }
        assert!(TffimHamiltonian::triangular(4, 5, 1.0, 1.0).is_err());
    }

    #[test]
    fn toric_l2_support() {
        let t = toric_code_ground_state(2).unwrap();
        assert_eq!(t.n_qubits, 8);
        let support = t.support();
        assert_eq!(support.len(), 8);
        assert!(support.iter().all(|&i| (t.amplitudes[i] - 1.0 / 8f64.sqrt()).abs() < 1e-15));
        assert_eq!(toric_code_ground_state(3).unwrap().support().len(), 256);
        assert!(toric_code_ground_state(4).is_err());
    }

    #[test]
    fn toric_support_is_closed_loops() {
        for l in 2..=3 {
            let t = toric_code_ground_state(l).unwrap();
            let n = 2 * l * l;
            for idx in t.support() {
                let bits = BitVector::from_index(idx, n);
                for r in 0..l {
                    for c in 0..l {
                        let parity: usize = toric_plaquette_edges(l, r, c)
                            .iter()
                            .map(|&e| bits.as_slice()[e] as usize)
                            .sum();
                        assert_eq!(parity % 2, 0);
                    }
                }
            }
        }
    }

    #[test]
    fn sampling_frequencies() {
        let mut rng = stream(2, domain::DATASET, 0);
        let ds = sample_measurements(&MeasurementSource::Ghz(10), 10_000, &mut rng).unwrap();
        let zeros = ds.outcomes.iter().filter(|o| o.count_ones() == 0).count() as f64 / 1e4;
        assert!((0.485..=0.515).contains(&zeros));
        assert!(ds.outcomes.iter().all(|o| o.count_ones() == 0 || o.count_ones() == 10));

        let ds = sample_measurements(&MeasurementSource::W(10), 10_000, &mut rng).unwrap();
        for (_, c) in ds.counts() {
            assert!((c as f64 / 1e4 - 0.1).abs() <= 0.009);
        }
        assert_eq!(ds.counts().len(), 10);
    }

    #[test]
    fn sampling_is_deterministic() {
        let src = MeasurementSource::DepolarizedW { n: 7, p: 0.2 };
        let a = sample_measurements(&src, 500, &mut stream(3, domain::DATASET, 0)).unwrap();
        let b = sample_measurements(&src, 500, &mut stream(3, domain::DATASET, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_converges_in_total_variation() {
        let dist = depolarized_w_distribution(5, 0.3).unwrap();
        let src = MeasurementSource::Distribution { dist: dist.clone(), label: "x".into() };
        let ds = sample_measurements(&src, 1_000_000, &mut stream(4, domain::DATASET, 0)).unwrap();
        let tv = dist.total_variation(&ds.empirical_distribution().unwrap().probs);
        assert!(tv <= 0.02, "tv {tv}");
        let closed = MeasurementSource::DepolarizedW { n: 5, p: 0.3 };
        let ds = sample_measurements(&closed, 1_000_000, &mut stream(5, domain::DATASET, 0)).unwrap();
        assert!(dist.total_variation(&ds.empirical_distribution().unwrap().probs) <= 0.02);
    }

    #[test]
    fn dataset_text_round_trip() {
        let mut ds = sample_measurements(&MeasurementSource::W(4), 20, &mut stream(6, domain::DATASET, 0)).unwrap();
        ds.seed = Some(6);
        let text = ds.to_text();
        assert!(text.starts_with("# n_qubits=4\n# state=w\n# seed=6\n"));
        let back = MeasurementDataset::from_text(&text).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.to_text(), text);
        assert!(MeasurementDataset::from_text("0101\n").is_err());
        assert!(MeasurementDataset::from_text("# n_qubits=3\n0101\n").is_err());
    }
}
