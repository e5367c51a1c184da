//! The RBM probability model over binary visible and hidden layers.
//!
//! Energy: `E(v,h) = -(a·v + b·h + vᵀWh)` with `v ∈ {0,1}^n`, `h ∈ {0,1}^m`.
//! All probability math is done in log-space.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;

use crate::bits::BitVector;
use crate::error::{check_len, QstError, Result};

/// Default cap on visible units for anything that enumerates `2^n` states.
pub const ENUMERATION_CAP: usize = 20;

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_WEIGHT_STD: f64 = 0.01;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rbm {
    n_visible: usize,
    n_hidden: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    /// Row-major `n_visible × n_hidden`.
    w: Vec<f64>,
}

/// A parameter-shaped triple used for gradients and updates.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamDelta {
    pub n_visible: usize,
    pub n_hidden: usize,
    pub da: Vec<f64>,
    pub db: Vec<f64>,
    /// Row-major `n_visible × n_hidden`.
    pub dw: Vec<f64>,
}

impl ParamDelta {
    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        ParamDelta {
            n_visible,
            n_hidden,
            da: vec![0.0; n_visible],
            db: vec![0.0; n_hidden],
            dw: vec![0.0; n_visible * n_hidden],
        }
    }

    pub fn dw(&self, i: usize, j: usize) -> f64 {
        self.dw[i * self.n_hidden + j]
    }

    pub fn max_abs(&self) -> f64 {
        self.da
            .iter()
            .chain(&self.db)
            .chain(&self.dw)
            .fold(0.0f64, |acc, x| acc.max(x.abs()))
    }

    /// Accumulates `weight · (v, hm, v hmᵀ)` for a visible state and hidden vector.
    pub(crate) fn accumulate(&mut self, v: &[u8], hm: &[f64], weight: f64) {
        let m = self.n_hidden;
        for (i, &vi) in v.iter().enumerate() {
            if vi == 1 {
                self.da[i] += weight;
                let row = &mut self.dw[i * m..(i + 1) * m];
                for (r, &h) in row.iter_mut().zip(hm) {
                    *r += weight * h;
                }
            }
        }
        for (d, &h) in self.db.iter_mut().zip(hm) {
            *d += weight * h;
        }
    }

    pub(crate) fn sub_assign(&mut self, other: &ParamDelta) {
        for (x, y) in self.da.iter_mut().zip(&other.da) {
            *x -= y;
        }
        for (x, y) in self.db.iter_mut().zip(&other.db) {
            *x -= y;
        }
        for (x, y) in self.dw.iter_mut().zip(&other.dw) {
            *x -= y;
        }
    }
}

/// Per-visible-state log weights and the log partition function.
#[derive(Clone, Debug)]
pub struct ExactModelTable {
    pub log_unnormalized: Vec<f64>,
    pub log_z: f64,
}

impl ExactModelTable {
    pub fn n_visible(&self) -> usize {
        self.log_unnormalized.len().trailing_zeros() as usize
    }

    pub fn log_prob(&self, index: usize) -> f64 {
        self.log_unnormalized[index] - self.log_z
    }

    pub fn prob(&self, index: usize) -> f64 {
        self.log_prob(index).exp()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.log_unnormalized
            .iter()
            .map(|&l| (l - self.log_z).exp())
            .collect()
    }
}

impl Rbm {
    /// All-zero parameters (the uniform model).
    pub fn zeros(n_visible: usize, n_hidden: usize) -> Result<Self> {
        if n_visible == 0 || n_hidden == 0 {
            return Err(QstError::Config(
                "an RBM needs at least one visible and one hidden unit".into(),
            ));
        }
        Ok(Rbm {
            n_visible,
            n_hidden,
            a: vec![0.0; n_visible],
            b: vec![0.0; n_hidden],
            w: vec![0.0; n_visible * n_hidden],
        })
    }

    /// Zero biases and i.i.d. `N(0, 0.01²)` weights.
    pub fn random_init<R: Rng + ?Sized>(n_visible: usize, n_hidden: usize, rng: &mut R) -> Result<Self> {
        let mut rbm = Rbm::zeros(n_visible, n_hidden)?;
        let normal = Normal::new(0.0, INIT_WEIGHT_STD).expect("valid std");
        for w in rbm.w.iter_mut() {
            *w = normal.sample(rng);
        }
        Ok(rbm)
    }

    /// `w` is row-major with one row per visible unit.
    pub fn from_parts(a: Vec<f64>, b: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        let (n, m) = (a.len(), b.len());
        let mut rbm = Rbm::zeros(n, m)?;
        check_len("weight matrix", n * m, w.len())?;
        if a.iter().chain(&b).chain(&w).any(|x| !x.is_finite()) {
            return Err(QstError::Numerical("non-finite RBM parameter".into()));
        }
        rbm.a = a;
        rbm.b = b;
        rbm.w = w;
        Ok(rbm)
    }

    pub fn n_visible(&self) -> usize {
        self.n_visible
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn visible_bias(&self) -> &[f64] {
        &self.a
    }

    pub fn hidden_bias(&self) -> &[f64] {
        &self.b
    }

    /// Row-major weights, one row of length `n_hidden` per visible unit.
    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n_hidden + j]
    }

    pub fn weight_row(&self, i: usize) -> &[f64] {
        &self.w[i * self.n_hidden..(i + 1) * self.n_hidden]
    }

    pub fn visible_bias_mut(&mut self) -> &mut [f64] {
        &mut self.a
    }

    pub fn hidden_bias_mut(&mut self) -> &mut [f64] {
        &mut self.b
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.w
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().chain(&self.b).chain(&self.w).all(|x| x.is_finite())
    }

    pub fn max_abs_weight(&self) -> f64 {
        self.w.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
    }

    /// `θ ← θ + scale · delta`; fails (leaving the model untouched) if the
    /// result would be non-finite.
    pub fn apply(&mut self, delta: &ParamDelta, scale: f64) -> Result<()> {
        check_len("update visible bias", self.n_visible, delta.da.len())?;
        check_len("update hidden bias", self.n_hidden, delta.db.len())?;
        check_len("update weights", self.w.len(), delta.dw.len())?;
        let ok = delta
            .da
            .iter()
            .zip(&self.a)
            .chain(delta.db.iter().zip(&self.b))
            .chain(delta.dw.iter().zip(&self.w))
            .all(|(d, x)| (x + scale * d).is_finite());
        if !ok {
            return Err(QstError::Numerical("parameter update produced a non-finite value".into()));
        }
        for (x, d) in self.a.iter_mut().zip(&delta.da) {
            *x += scale * d;
        }
        for (x, d) in self.b.iter_mut().zip(&delta.db) {
            *x += scale * d;
        }
        for (x, d) in self.w.iter_mut().zip(&delta.dw) {
            *x += scale * d;
        }
        Ok(())
    }

    // ---- unchecked kernels on raw slices -------------------------------

    /// `out_j = b_j + Σ_i v_i W_ij`.
    #[inline]
    pub(crate) fn hidden_field_into(&self, v: &[u8], out: &mut [f64]) {
        out.copy_from_slice(&self.b);
        for (i, &vi) in v.iter().enumerate() {
            if vi == 1 {
                for (o, w) in out.iter_mut().zip(self.weight_row(i)) {
                    *o += w;
                }
            }
        }
    }

    /// `out_i = a_i + Σ_j W_ij h_j`.
    #[inline]
    pub(crate) fn visible_field_into(&self, h: &[u8], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = self.weight_row(i);
            let mut acc = self.a[i];
            for (w, &hj) in row.iter().zip(h) {
                if hj == 1 {
                    acc += w;
                }
            }
            *o = acc;
        }
    }

    pub(crate) fn energy_unchecked(&self, v: &[u8], h: &[u8]) -> f64 {
        let mut e = 0.0;
        for (i, &vi) in v.iter().enumerate() {
            if vi == 1 {
                e += self.a[i];
                for (w, &hj) in self.weight_row(i).iter().zip(h) {
                    if hj == 1 {
                        e += w;
                    }
                }
            }
        }
        for (bj, &hj) in self.b.iter().zip(h) {
            if hj == 1 {
                e += bj;
            }
        }
        -e
    }

    pub(crate) fn log_unnormalized_unchecked(&self, v: &[u8], field: &mut [f64]) -> f64 {
        self.hidden_field_into(v, field);
        let av: f64 = v
            .iter()
            .zip(&self.a)
            .filter(|(&vi, _)| vi == 1)
            .map(|(_, a)| a)
            .sum();
        av + field.iter().map(|&x| softplus(x)).sum::<f64>()
    }

    // ---- checked public operations -------------------------------------

    /// `-(a·v + b·h + vᵀWh)`.
    pub fn energy(&self, v: &BitVector, h: &BitVector) -> Result<f64> {
        check_len("energy visible", self.n_visible, v.len())?;
        check_len("energy hidden", self.n_hidden, h.len())?;
        Ok(self.energy_unchecked(v.as_slice(), h.as_slice()))
    }

    /// `log Σ_h exp(-E(v,h)) = a·v + Σ_j softplus(b_j + (vᵀW)_j)`.
    pub fn log_unnormalized_pv(&self, v: &BitVector) -> Result<f64> {
        check_len("marginal visible", self.n_visible, v.len())?;
        let mut field = vec![0.0; self.n_hidden];
        Ok(self.log_unnormalized_unchecked(v.as_slice(), &mut field))
    }

    /// `p(h_j = 1 | v)` for every hidden unit.
    pub fn cond_h_given_v(&self, v: &BitVector) -> Result<Vec<f64>> {
        check_len("p(h|v) visible", self.n_visible, v.len())?;
        let mut field = vec![0.0; self.n_hidden];
        self.hidden_field_into(v.as_slice(), &mut field);
        Ok(field.into_iter().map(sigmoid).collect())
    }

    /// `p(v_i = 1 | h)` for every visible unit.
    pub fn cond_v_given_h(&self, h: &BitVector) -> Result<Vec<f64>> {
        check_len("p(v|h) hidden", self.n_hidden, h.len())?;
        let mut field = vec![0.0; self.n_visible];
        self.visible_field_into(h.as_slice(), &mut field);
        Ok(field.into_iter().map(sigmoid).collect())
    }

    /// Enumerates all `2^n` visible states with the default cap.
    pub fn exact_table(&self) -> Result<ExactModelTable> {
        self.exact_table_with_cap(ENUMERATION_CAP)
    }

    pub fn exact_table_with_cap(&self, cap: usize) -> Result<ExactModelTable> {
        let n = self.n_visible;
        if n > cap {
            return Err(QstError::Capacity {
                what: "exact model table",
                requested: n,
                cap,
            });
        }
        let m = self.n_hidden;
        let size = 1usize << n;
        let mut log_unnormalized = vec![0.0; size];
        let mut v = vec![0u8; n];
        let mut field = vec![0.0; m];
        let mut av = 0.0;
        self.hidden_field_into(&v, &mut field);
        log_unnormalized[0] = field.iter().map(|&x| softplus(x)).sum();
        // Gray-code walk: one visible bit changes per step.
        for step in 1..size {
            let bit = step.trailing_zeros() as usize;
            let unit = n - 1 - bit;
            if step % 4096 == 0 {
                v[unit] ^= 1;
                av = v.iter().zip(&self.a).filter(|(&x, _)| x == 1).map(|(_, a)| a).sum();
                self.hidden_field_into(&v, &mut field);
            } else {
                let sign = if v[unit] == 0 { 1.0 } else { -1.0 };
                v[unit] ^= 1;
                av += sign * self.a[unit];
                for (f, w) in field.iter_mut().zip(self.weight_row(unit)) {
                    *f += sign * w;
                }
            }
            let gray = step ^ (step >> 1);
            log_unnormalized[gray] = av + field.iter().map(|&x| softplus(x)).sum::<f64>();
        }
        let log_z = logsumexp(&log_unnormalized);
        Ok(ExactModelTable {
            log_unnormalized,
            log_z,
        })
    }

    /// Exact `∂KL(q‖p)/∂θ` for a distribution `q` over all `2^n` visible states.
    pub fn exact_kl_gradient(&self, q: &[f64]) -> Result<ParamDelta> {
        let table = self.exact_table()?;
        check_len("target distribution", 1usize << self.n_visible, q.len())?;
        let positive = self.expected_statistics(q.iter().copied());
        let negative = self.expected_statistics(table.probabilities().into_iter());
        // ∂KL/∂θ = -(positive - negative)
        let mut grad = negative;
        grad.sub_assign(&positive);
        Ok(grad)
    }

    /// `Σ_v weight(v) · (v, E[h|v], v E[h|v]ᵀ)` over all visible states in index order.
    pub(crate) fn expected_statistics(&self, weights: impl Iterator<Item = f64>) -> ParamDelta {
        let n = self.n_visible;
        let mut stats = ParamDelta::zeros(n, self.n_hidden);
        let mut v = vec![0u8; n];
        let mut hm = vec![0.0; self.n_hidden];
        for (index, weight) in weights.enumerate() {
            if weight == 0.0 {
                continue;
            }
            crate::bits::write_index_bits(index, &mut v);
            self.hidden_field_into(&v, &mut hm);
            for x in hm.iter_mut() {
                *x = sigmoid(*x);
            }
            stats.accumulate(&v, &hm, weight);
        }
        stats
    }

    // ---- checkpoint I/O -------------------------------------------------

    /// JSON checkpoint `{"n","m","a","b","W"}` with 17 significant digits.
    pub fn to_checkpoint_json(&self) -> String {
        fn num(x: f64) -> String {
            format!("{x:.16e}")
        }
        fn list(xs: &[f64]) -> String {
            let body: Vec<String> = xs.iter().map(|&x| num(x)).collect();
            format!("[{}]", body.join(","))
        }
        let rows: Vec<String> = (0..self.n_visible).map(|i| list(self.weight_row(i))).collect();
        format!(
            "{{\"n\":{},\"m\":{},\"a\":{},\"b\":{},\"W\":[{}]}}\n",
            self.n_visible,
            self.n_hidden,
            list(&self.a),
            list(&self.b),
            rows.join(",")
        )
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Checkpoint {
            n: usize,
            m: usize,
            a: Vec<f64>,
            b: Vec<f64>,
            #[serde(rename = "W")]
            w: Vec<Vec<f64>>,
        }
        let ck: Checkpoint = serde_json::from_str(text)
            .map_err(|e| QstError::Parse(format!("checkpoint: {e}")))?;
        check_len("checkpoint a", ck.n, ck.a.len())?;
        check_len("checkpoint b", ck.m, ck.b.len())?;
        check_len("checkpoint W rows", ck.n, ck.w.len())?;
        for row in &ck.w {
            check_len("checkpoint W columns", ck.m, row.len())?;
        }
        Rbm::from_parts(ck.a, ck.b, ck.w.into_iter().flatten().collect())
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_checkpoint_json().as_bytes())?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        Rbm::from_checkpoint_json(&std::fs::read_to_string(path)?)
    }
}
