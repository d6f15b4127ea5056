//! Weighted posterior summaries and Monte Carlo diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::particles::WeightedParticleSystem;

/// How the per-column effective sample size is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EssMethod {
    /// `1/Σw²` from the particle weights.
    #[default]
    Weights,
    /// Autocorrelation-based, for rows forming a Markov chain.
    Chain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub parameter: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
    pub ess: f64,
}

impl ParameterSummary {
    /// Width of the central 95% interval.
    pub fn width(&self) -> f64 {
        self.q975 - self.q025
    }

    pub fn overlaps(&self, other: &ParameterSummary) -> bool {
        self.q025 <= other.q975 && other.q025 <= self.q975
    }
}

/// Inverse of the weighted empirical CDF: the smallest value whose
/// cumulative weight reaches `q`. `weights` must be normalised.
pub fn weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> f64 {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    weighted_quantile_sorted(values, weights, &order, q)
}

fn weighted_quantile_sorted(values: &[f64], weights: &[f64], order: &[usize], q: f64) -> f64 {
    let mut cum = 0.0;
    let mut last = f64::NAN;
    for &i in order {
        if weights[i] <= 0.0 {
            continue;
        }
        cum += weights[i];
        last = values[i];
        // tolerance guards against rounding in the running sum
        if cum >= q - 1e-12 {
            return values[i];
        }
    }
    last
}

/// Effective sample size of a chain by Geyer's initial monotone sequence
/// estimator, capped at the chain length.
pub fn chain_ess(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return n as f64;
    }
    let acf = |lag: usize| -> f64 {
        let mut s = 0.0;
        for i in 0..n - lag {
            s += (x[i] - mean) * (x[i + lag] - mean);
        }
        s / n as f64 / c0
    };
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = acf(2 * k) + acf(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        k += 1;
    }
    let tau = (2.0 * sum - 1.0).max(1.0);
    (n as f64 / tau).min(n as f64)
}

/// Potential scale reduction factor of several equal-length chains.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> Result<f64> {
    let m = chains.len();
    if m < 2 {
        return Err(Error::config("gelman_rubin needs at least two chains"));
    }
    let n = chains[0].len();
    if n < 2 || chains.iter().any(|c| c.len() != n) {
        return Err(Error::config("chains must have equal length of at least 2"));
    }
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
    let grand = means.iter().sum::<f64>() / m as f64;
    let b = n as f64 / (m as f64 - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n as f64 - 1.0))
        .sum::<f64>()
        / m as f64;
    let var = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
    Ok((var / w).sqrt())
}

/// Weighted mean, SD, 2.5/50/97.5% quantiles and ESS of every column.
pub fn summarize(system: &WeightedParticleSystem, method: EssMethod) -> Result<Vec<ParameterSummary>> {
    let w = system.normalized_weights()?;
    let kish = system.ess()?;
    let mut out = Vec::with_capacity(system.dim());
    for (k, label) in system.labels().iter().enumerate() {
        let col = system.column(k);
        // centred on the first value so constant columns come out exact
        let c0 = col.first().copied().unwrap_or(0.0);
        let mean = c0 + col.iter().zip(&w).map(|(x, w)| (x - c0) * w).sum::<f64>();
        let var: f64 = col.iter().zip(&w).map(|(x, w)| w * (x - mean).powi(2)).sum();
        let mut order: Vec<usize> = (0..col.len()).collect();
        order.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
        let q = |p: f64| weighted_quantile_sorted(&col, &w, &order, p);
        let ess = match method {
            EssMethod::Weights => kish,
            EssMethod::Chain => chain_ess(&col).min(kish),
        };
        out.push(ParameterSummary {
            parameter: label.clone(),
            mean,
            sd: var.max(0.0).sqrt(),
            q025: q(0.025),
            q50: q(0.5),
            q975: q(0.975),
            ess,
        });
    }
    Ok(out)
}

/// Summary of several chains of equal length stacked row-wise: pooled
/// moments and quantiles, ESS summed over the chains.
pub fn summarize_chains(stacked: &WeightedParticleSystem, n_chains: usize) -> Result<Vec<ParameterSummary>> {
    let n = stacked.len();
    if n_chains == 0 || n % n_chains != 0 {
        return Err(Error::config(format!("{n} rows cannot be split into {n_chains} equal chains")));
    }
    let len = n / n_chains;
    let mut rows = summarize(stacked, EssMethod::Weights)?;
    for (k, r) in rows.iter_mut().enumerate() {
        let col = stacked.column(k);
        r.ess = col.chunks(len).map(chain_ess).sum::<f64>().min(n as f64);
    }
    Ok(rows)
}

/// Long-format CSV: `parameter,statistic,value`.
pub fn summary_to_csv(rows: &[ParameterSummary]) -> String {
    let mut s = String::from("parameter,statistic,value\n");
    for r in rows {
        for (name, v) in [
            ("mean", r.mean),
            ("sd", r.sd),
            ("q2.5", r.q025),
            ("q50", r.q50),
            ("q97.5", r.q975),
            ("ess", r.ess),
        ] {
            s.push_str(&format!("{},{name},{}\n", r.parameter, crate::particles::format_f64(v)));
        }
    }
    s
}

pub fn find<'a>(rows: &'a [ParameterSummary], parameter: &str) -> Option<&'a ParameterSummary> {
    rows.iter().find(|r| r.parameter == parameter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, Streams};
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn constant_column() {
        let s = WeightedParticleSystem::uniform(vec!["c".into()], vec![2.5; 10], 10).unwrap();
        let r = &summarize(&s, EssMethod::Weights).unwrap()[0];
        assert_eq!((r.mean, r.sd, r.q025, r.q50, r.q975), (2.5, 0.0, 2.5, 2.5, 2.5));
        assert!((r.ess - 10.0).abs() < 1e-9);
    }

    #[test]
    fn point_mass_weights_pick_first_row() {
        let s = WeightedParticleSystem::new(vec!["a".into(), "b".into()], vec![1.0, 2.0, 3.0, 4.0], vec![0.0, f64::NEG_INFINITY]).unwrap();
        let rows = summarize(&s, EssMethod::Weights).unwrap();
        for (r, want) in rows.iter().zip([1.0, 2.0]) {
            assert_eq!((r.mean, r.q025, r.q50, r.q975), (want, want, want, want));
            assert_eq!(r.ess, 1.0);
        }
    }

    #[test]
    fn normal_draws() {
        let mut rng = Streams::new(1, 0).stream(Purpose::Data, 0, 0);
        let n = 100_000;
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let s = WeightedParticleSystem::uniform(vec!["z".into()], v, n).unwrap();
        let r = &summarize(&s, EssMethod::Chain).unwrap()[0];
        assert!(r.mean.abs() < 0.02);
        assert!((r.q975 - 1.96).abs() < 0.03);
        assert!((r.q025 + 1.96).abs() < 0.03);
        assert!(r.ess > 0.8 * n as f64 && r.ess <= n as f64);
    }

    #[test]
    fn ar1_chain_ess() {
        let mut rng = Streams::new(2, 0).stream(Purpose::Data, 0, 0);
        let rho: f64 = 0.9;
        let mut x = 0.0;
        let v: Vec<f64> = (0..200_000)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                x = rho * x + (1.0 - rho * rho).sqrt() * e;
                x
            })
            .collect();
        let want = 200_000.0 * (1.0 - rho) / (1.0 + rho);
        let got = chain_ess(&v);
        assert!((got / want - 1.0).abs() < 0.15, "{got} vs {want}");
    }

    #[test]
    fn rhat_of_identical_distributions_is_near_one() {
        let mut rng = Streams::new(3, 0).stream(Purpose::Data, 0, 0);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        assert!((gelman_rubin(&chains).unwrap() - 1.0).abs() < 0.01);
        let shifted: Vec<Vec<f64>> = chains
            .iter()
            .enumerate()
            .map(|(k, c)| c.iter().map(|x| x + k as f64).collect())
            .collect();
        assert!(gelman_rubin(&shifted).unwrap() > 1.5);
    }

    #[test]
    fn stacked_chains_add_their_ess() {
        let mut rng = Streams::new(4, 0).stream(Purpose::Data, 0, 0);
        let v: Vec<f64> = (0..4000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let s = WeightedParticleSystem::uniform(vec!["z".into()], v.clone(), 4000).unwrap();
        let r = &summarize_chains(&s, 2).unwrap()[0];
        assert_eq!(r.ess, (chain_ess(&v[..2000]) + chain_ess(&v[2000..])).min(4000.0));
        assert!(summarize_chains(&s, 3).is_err());
    }

    #[test]
    fn csv_is_long_format() {
        let s = WeightedParticleSystem::uniform(vec!["a".into()], vec![1.0, 3.0], 2).unwrap();
        let csv = summary_to_csv(&summarize(&s, EssMethod::Weights).unwrap());
        assert!(csv.starts_with("parameter,statistic,value\na,mean,2"));
        assert_eq!(csv.lines().count(), 7);
    }
}
