use mode_qst::{BitVector, Rbm};
use proptest::prelude::*;

/// Parameters as `(a, b, w)` for an `n × m` model.
fn params(n: usize, m: usize, scale: f64) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(-scale..scale, n),
        prop::collection::vec(-scale..scale, m),
        prop::collection::vec(-scale..scale, n * m),
    )
}

fn bits(index: usize, len: usize) -> Vec<u8> {
    (0..len).map(|k| ((index >> (len - 1 - k)) & 1) as u8).collect()
}

fn energy(a: &[f64], b: &[f64], w: &[f64], v: &[u8], h: &[u8]) -> f64 {
    let m = b.len();
    let mut e = 0.0;
    for i in 0..a.len() {
        e -= a[i] * v[i] as f64;
    }
    for j in 0..m {
        e -= b[j] * h[j] as f64;
    }
    for i in 0..a.len() {
        for j in 0..m {
            e -= w[i * m + j] * (v[i] * h[j]) as f64;
        }
    }
    e
}

/// `p(v)` by summing `exp(-E)` over every joint configuration.
fn brute_marginal(a: &[f64], b: &[f64], w: &[f64]) -> Vec<f64> {
    let (n, m) = (a.len(), b.len());
    let mut pv: Vec<f64> = (0..1usize << n)
        .map(|vi| {
            let v = bits(vi, n);
            (0..1usize << m).map(|hi| (-energy(a, b, w, &v, &bits(hi, m))).exp()).sum()
        })
        .collect();
    let z: f64 = pv.iter().sum();
    pv.iter_mut().for_each(|p| *p /= z);
    pv
}

fn brute_kl(q: &[f64], a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    let p = brute_marginal(a, b, w);
    q.iter()
        .zip(&p)
        .filter(|(&qv, _)| qv > 0.0)
        .map(|(&qv, &pv)| qv * (qv / pv).ln())
        .sum()
}

fn target_distribution(raw: &[f64]) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn kl_gradient_matches_finite_differences(
        (a, b, w) in params(4, 3, 1.0),
        raw in prop::collection::vec(0.0f64..1.0, 16),
        zeros in prop::collection::vec(any::<bool>(), 16),
    ) {
        // Some target states get zero probability.
        let mut raw: Vec<f64> = raw.iter().zip(&zeros).map(|(&x, &z)| if z { 0.0 } else { x + 0.01 }).collect();
        raw[0] += 0.5;
        let q = target_distribution(&raw);
        let rbm = Rbm::from_parts(a.clone(), b.clone(), w.clone()).unwrap();
        let grad = rbm.exact_kl_gradient(&q).unwrap();
        let step = 1e-5;
        let fd = |which: usize, k: usize| {
            let mut pp = [a.clone(), b.clone(), w.clone()];
            let mut pm = pp.clone();
            pp[which][k] += step;
            pm[which][k] -= step;
            (brute_kl(&q, &pp[0], &pp[1], &pp[2]) - brute_kl(&q, &pm[0], &pm[1], &pm[2])) / (2.0 * step)
        };
        let mut worst = 0.0f64;
        for k in 0..4 {
            worst = worst.max((grad.da[k] - fd(0, k)).abs());
        }
        for k in 0..3 {
            worst = worst.max((grad.db[k] - fd(1, k)).abs());
        }
        for k in 0..12 {
            worst = worst.max((grad.dw[k] - fd(2, k)).abs());
        }
        prop_assert!(worst <= 1e-6, "max deviation {worst}");
    }

    #[test]
    fn marginal_matches_joint_enumeration((a, b, w) in params(4, 3, 3.0)) {
        let rbm = Rbm::from_parts(a.clone(), b.clone(), w.clone()).unwrap();
        let table = rbm.exact_table().unwrap();
        let want = brute_marginal(&a, &b, &w);
        let got = table.probabilities();
        prop_assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (g, e) in got.iter().zip(&want) {
            prop_assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn hidden_conditional_matches_enumeration((a, b, w) in params(3, 2, 2.0), vi in 0usize..8) {
        let rbm = Rbm::from_parts(a.clone(), b.clone(), w.clone()).unwrap();
        let v = bits(vi, 3);
        let weights: Vec<f64> = (0..4).map(|hi| (-energy(&a, &b, &w, &v, &bits(hi, 2))).exp()).collect();
        let z: f64 = weights.iter().sum();
        let got = rbm.cond_h_given_v(&BitVector::from_bits(v).unwrap()).unwrap();
        for j in 0..2 {
            let on: f64 = (0..4).filter(|&hi| bits(hi, 2)[j] == 1).map(|hi| weights[hi]).sum();
            prop_assert!((got[j] - on / z).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact((a, b, w) in params(3, 4, 50.0)) {
        let rbm = Rbm::from_parts(a, b, w).unwrap();
        let back = Rbm::from_checkpoint_json(&rbm.to_checkpoint_json()).unwrap();
        prop_assert_eq!(back, rbm);
    }

    #[test]
    fn marginal_finite_at_extreme_parameters((a, b, w) in params(3, 3, 800.0)) {
        let rbm = Rbm::from_parts(a, b, w).unwrap();
        let table = rbm.exact_table().unwrap();
        prop_assert!(table.log_z.is_finite());
        let total: f64 = table.probabilities().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }
}
