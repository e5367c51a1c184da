use mode_qst::rng::{domain, stream, StreamRng};
use mode_qst::samplers::{cd_k_sample, gibbs_step_tempered, pcd_step, pt_step, ChainState, PtLadder};
use mode_qst::{BitVector, Rbm};
use rand::Rng;

const TV_TOLERANCE: f64 = 0.02;

fn bits(index: usize, len: usize) -> Vec<u8> {
    (0..len).map(|k| ((index >> (len - 1 - k)) & 1) as u8).collect()
}

fn model() -> Rbm {
    Rbm::from_parts(vec![0.8, -0.5], vec![-0.3, 0.6], vec![1.5, -2.0, -1.2, 0.9]).unwrap()
}

/// `p_β(v)` from the joint Boltzmann weights `exp(-β E(v,h))`.
fn tempered_marginal(rbm: &Rbm, beta: f64) -> Vec<f64> {
    let (n, m) = (rbm.n_visible(), rbm.n_hidden());
    let mut p: Vec<f64> = (0..1usize << n)
        .map(|vi| {
            let v = BitVector::from_bits(bits(vi, n)).unwrap();
            (0..1usize << m)
                .map(|hi| {
                    let h = BitVector::from_bits(bits(hi, m)).unwrap();
                    (-beta * rbm.energy(&v, &h).unwrap()).exp()
                })
                .sum()
        })
        .collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    p
}

fn tv(hist: &[usize], p: &[f64]) -> f64 {
    let total: usize = hist.iter().sum();
    0.5 * hist.iter().zip(p).map(|(&c, &q)| (c as f64 / total as f64 - q).abs()).sum::<f64>()
}

fn draw(p: &[f64], rng: &mut StreamRng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &q) in p.iter().enumerate() {
        acc += q;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

#[test]
fn cd_started_at_equilibrium_stays_there() {
    let rbm = model();
    let p = tempered_marginal(&rbm, 1.0);
    let mut rng = stream(3, domain::DATASET, 0);
    let chains = 50_000;
    let starts: Vec<BitVector> = (0..chains).map(|_| BitVector::from_index(draw(&p, &mut rng), 2)).collect();
    let mut rngs: Vec<StreamRng> = (0..chains as u64).map(|c| stream(3, domain::CHAINS, c)).collect();
    for k in [1, 5] {
        let out = cd_k_sample(&rbm, &starts, k, &mut rngs).unwrap();
        let mut hist = vec![0usize; 4];
        for s in &out {
            hist[s.v.index()] += 1;
        }
        let d = tv(&hist, &p);
        assert!(d <= TV_TOLERANCE, "CD-{k}: TV {d}");
    }
}

#[test]
fn pcd_chains_converge_to_model() {
    let rbm = model();
    let p = tempered_marginal(&rbm, 1.0);
    let chains = 64;
    let mut init = stream(4, domain::INIT, 0);
    let mut persistent: Vec<ChainState> = (0..chains).map(|c| ChainState::random(2, 2, c as u64, &mut init)).collect();
    let mut rngs: Vec<StreamRng> = (0..chains as u64).map(|c| stream(4, domain::CHAINS, c)).collect();
    let mut hist = vec![0usize; 4];
    for step in 0..1_000 {
        let out = pcd_step(&rbm, &mut persistent, 1, &mut rngs).unwrap();
        if step >= 100 {
            for s in &out {
                hist[s.v.index()] += 1;
            }
        }
    }
    let d = tv(&hist, &p);
    assert!(d <= TV_TOLERANCE, "PCD: TV {d}");
}

#[test]
fn tempered_gibbs_targets_tempered_marginal() {
    let rbm = model();
    for beta in [0.3, 1.0, 2.5] {
        let p = tempered_marginal(&rbm, beta);
        let mut rng = stream(5, domain::CHAINS, 0);
        let mut state = ChainState::new(BitVector::zeros(2), 2, 0);
        let mut hist = vec![0usize; 4];
        for step in 0..60_000 {
            gibbs_step_tempered(&rbm, beta, &mut state, &mut rng).unwrap();
            if step >= 1_000 {
                hist[state.v.index()] += 1;
            }
        }
        let d = tv(&hist, &p);
        assert!(d <= TV_TOLERANCE, "beta {beta}: TV {d}");
    }
}

#[test]
fn tempering_ladder_samples_model_at_unit_temperature() {
    let rbm = model();
    let p = tempered_marginal(&rbm, 1.0);
    let mut rng = stream(6, domain::CHAINS, 0);
    let mut ladder = PtLadder::geometric(10, 100.0, 2, 2, &mut rng).unwrap();
    let mut hist = vec![0usize; 4];
    for step in 0..60_000 {
        let v = pt_step(&rbm, &mut ladder, &mut rng).unwrap();
        if step >= 1_000 {
            hist[v.index()] += 1;
        }
    }
    let d = tv(&hist, &p);
    assert!(d <= TV_TOLERANCE, "PT: TV {d}");
    assert!(ladder.acceptance_rates().iter().all(|&r| r > 0.0 && r <= 1.0));
}

#[test]
fn tempering_mixes_a_bimodal_model() {
    // Two wells at 000 and 111 separated by a high barrier.
    let w = 6.0;
    let rbm = Rbm::from_parts(vec![-w / 2.0; 3], vec![-1.5 * w], vec![w; 3]).unwrap();
    let p = tempered_marginal(&rbm, 1.0);
    let mut rng = stream(7, domain::CHAINS, 0);
    let mut ladder = PtLadder::geometric(10, 100.0, 3, 1, &mut rng).unwrap();
    let mut hist = vec![0usize; 8];
    for step in 0..80_000 {
        let v = pt_step(&rbm, &mut ladder, &mut rng).unwrap();
        if step >= 2_000 {
            hist[v.index()] += 1;
        }
    }
    let d = tv(&hist, &p);
    assert!(d <= TV_TOLERANCE, "PT on bimodal model: TV {d}");
}
