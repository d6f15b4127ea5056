use dcmeld_core::models::owl::*;
use dcmeld_core::{Purpose, Streams};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{Binomial, Discrete, Poisson};

fn prior_alpha<R: Rng>(rng: &mut R) -> f64 {
    let n = Normal::new(0.0, 2.0).unwrap();
    loop {
        let x: f64 = n.sample(rng);
        if x.abs() <= 10.0 {
            return x;
        }
    }
}

#[test]
fn q_rows_are_first_recapture_distributions() {
    let mut rng = Streams::new(1, 0).stream(Purpose::Data, 0, 0);
    let t = OWL_T;
    for _ in 0..100 {
        let a5: Vec<f64> = (2..=t).map(|_| prior_alpha(&mut rng)).collect();
        let rates = owl_link(
            prior_alpha(&mut rng),
            prior_alpha(&mut rng),
            prior_alpha(&mut rng),
            prior_alpha(&mut rng),
            &a5,
            prior_alpha(&mut rng),
        );
        for (k, &(_, sex)) in STRATA.iter().enumerate() {
            let d = rates.delta[k];
            let pi = &rates.pi[sex as usize];
            let q = owl_q(d, pi, t);
            for r in 1..=t {
                let row = &q[r - 1];
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                // explicit path probabilities
                let unseen = |from: usize, to: usize| (from + 1..=to).map(|v| 1.0 - pi[v]).product::<f64>();
                for u in r + 1..=t {
                    let want = d.powi((u - r) as i32) * pi[u] * unseen(r, u - 1);
                    assert!((row[u - 1] - want).abs() < 1e-12);
                }
                // never seen again: dies after k unseen years, or survives to the end unseen
                let mut never = d.powi((t - r) as i32) * unseen(r, t);
                for k in r..t {
                    never += d.powi((k - r) as i32) * unseen(r, k) * (1.0 - d);
                }
                assert!((row[t] - never).abs() < 1e-12, "{} vs {never}", row[t]);
            }
        }
    }
}

#[test]
fn melded_joint_matches_ipm_up_to_a_constant() {
    let truth = OwlTruth::default();
    let mut rng = Streams::new(truth.seed, 0).stream(Purpose::Data, 0, 0);
    let (data, _) = simulate_owl(&truth, &mut rng).unwrap();
    let model = owl_build(data.clone(), vec![0.5; 3]).unwrap();
    let layout = model.layout();
    let mut diffs = Vec::new();
    let mut rng = Streams::new(2, 0).stream(Purpose::Data, 0, 0);
    for _ in 0..500 {
        if diffs.len() == 20 {
            break;
        }
        let mut x = model.sample_prior_point(&mut rng);
        for k in 0..3 {
            if let Some(psi) = model.submodel(k).initial_psi(&x[layout.phi_range(k)]) {
                x[layout.psi_range(k)].copy_from_slice(&psi);
            }
        }
        let melded = model.log_melded_joint(&x).unwrap();
        if !melded.is_finite() {
            continue;
        }
        let p = OwlParams::from_labelled(model.labels(), &x, data.t).unwrap();
        diffs.push(melded - ipm_log_joint(&data, &p));
    }
    assert_eq!(diffs.len(), 20);
    let mean = diffs.iter().sum::<f64>() / 20.0;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / 19.0;
    assert!(var < 1e-18, "variance {var:e}");
}

/// Latent path density with independent pmfs, initial sizes uniform on 0..=50.
fn path_density(y: &[u64], x1: (u64, u64), years: &[(u64, u64, u64)], r: &CountRates) -> f64 {
    let mut p = (1.0 / 51.0f64).powi(2);
    let mut x = x1.0 + x1.1;
    p *= Poisson::new(x as f64).map_or((y[0] == 0) as u8 as f64, |d| d.pmf(y[0]));
    for (t, &(j, s, i)) in years.iter().enumerate() {
        let xp = x as f64;
        let pois = |k: u64, m: f64| if m == 0.0 { (k == 0) as u8 as f64 } else { Poisson::new(m).unwrap().pmf(k) };
        p *= pois(j, xp * r.rho / 2.0 * r.delta_j);
        p *= Binomial::new(r.delta_a, x).unwrap().pmf(s);
        p *= pois(i, xp * r.eta);
        x = j + s + i;
        p *= pois(y[t + 1], x as f64);
    }
    p
}

#[test]
fn truncated_count_marginal_matches_enumeration() {
    let y = [3u64, 5, 4];
    let rates = CountRates::from_parameters(-0.5, 1.0, 1.6, -1.2);
    let cap = 6u64;
    let triples: Vec<(u64, u64, u64)> = (0..=cap)
        .flat_map(|j| (0..=cap - j).flat_map(move |s| (0..=cap - j - s).map(move |i| (j, s, i))))
        .collect();
    let mut total = 0.0;
    for xj in 0..=cap {
        for xa in 0..=cap - xj {
            for &a in &triples {
                for &b in &triples {
                    total += path_density(&y, (xj, xa), &[a, b], &rates);
                }
            }
        }
    }
    let got = owl_count_marginal_truncated(&y, &rates, cap);
    assert!((got - total.ln()).abs() < 1e-10, "{got} vs {}", total.ln());
}

#[test]
fn count_loglik_agrees_with_independent_pmfs() {
    let y = [3u64, 5, 4];
    let rates = CountRates::from_parameters(-0.5, 1.0, 1.6, -1.2);
    let lat = CountLatents {
        x_j: vec![2, 1, 3],
        x_a1: 2,
        surv: vec![2, 1],
        imm: vec![1, 2],
    };
    let want = path_density(&y, (2, 2), &[(1, 2, 1), (3, 1, 2)], &rates).ln();
    assert!((owl_count_loglik(&y, &lat, &rates) - want).abs() < 1e-10);
}

#[test]
fn simulated_data_round_trips() {
    let truth = OwlTruth {
        t: 6,
        alpha5: vec![0.1; 5],
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_owl_to_dir(&truth, dir.path()).unwrap();
    assert_eq!(OwlData::read_dir(dir.path()).unwrap(), data);
    assert!(dir.path().join("truth.json").exists());
}

#[test]
fn densities_are_nan_free_on_prior_draws() {
    let truth = OwlTruth {
        t: 8,
        alpha5: vec![0.2; 7],
        ..Default::default()
    };
    let mut rng = Streams::new(5, 0).stream(Purpose::Data, 0, 0);
    let (data, _) = simulate_owl(&truth, &mut rng).unwrap();
    let model = owl_build(data, vec![0.5; 3]).unwrap();
    let layout = model.layout();
    for _ in 0..10_000 {
        let x = model.sample_prior_point(&mut rng);
        for k in 0..3 {
            let (phi, psi) = (&x[layout.phi_range(k)], &x[layout.psi_range(k)]);
            let sm = model.submodel(k);
            assert!(sm.log_phi_prior(phi).is_finite());
            assert!(sm.log_psi_prior(phi, psi).is_finite());
            assert!(!sm.log_likelihood(phi, psi).is_nan());
        }
        assert!(!model.log_melded_joint(&x).unwrap().is_nan());
    }
}

#[test]
fn vanishing_rates_leave_only_the_zero_path() {
    let y = [0u64, 0, 0];
    let rates = CountRates {
        delta_j: 0.0,
        delta_a: 0.0,
        rho: 0.0,
        eta: 0.0,
    };
    let zero = CountLatents {
        x_j: vec![0; 3],
        x_a1: 0,
        surv: vec![0; 2],
        imm: vec![0; 2],
    };
    let init = -2.0 * 51f64.ln();
    assert!((owl_count_loglik(&y, &zero, &rates) - init).abs() < 1e-12);
    let mut moved = zero.clone();
    moved.imm[1] = 1;
    assert_eq!(owl_count_loglik(&y, &moved, &rates), f64::NEG_INFINITY);
    let mut moved = zero;
    moved.x_j[2] = 2;
    assert_eq!(owl_count_loglik(&y, &moved, &rates), f64::NEG_INFINITY);
}
