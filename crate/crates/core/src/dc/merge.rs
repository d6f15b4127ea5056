//! Joining two child populations into the starting population of a parent.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::melding::ChainMeldedModel;
use crate::particles::{draw_ancestors, normalize_log_weights, IndexMultiset, ResampleKind, WeightedParticleSystem};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    Naive,
    Extended,
}

/// Stand-in for the centre submodel's ψ when weighting candidate tuples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum MuTilde {
    /// `E[ψ | φ]` under the submodel's ψ prior, evaluated per tuple.
    PriorMean,
    /// One draw from the ψ prior at the prior mean of φ, shared by all tuples.
    PriorDraw,
    FixedValue { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeConfig {
    pub mode: MergeMode,
    pub alpha_star: f64,
    /// Oversampling factor: each side is drawn `kappa·N` times.
    pub kappa: usize,
    pub mu_tilde: MuTilde,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            mode: MergeMode::Naive,
            alpha_star: 1.0,
            kappa: 3,
            mu_tilde: MuTilde::PriorMean,
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha_star) {
            return Err(Error::config(format!(
                "merge.alpha_star = {} must lie in [0, 1]",
                self.alpha_star
            )));
        }
        if self.kappa == 0 {
            return Err(Error::config("merge.kappa must be at least 1"));
        }
        Ok(())
    }
}

fn require_equal_weights(s: &WeightedParticleSystem, side: &str) -> Result<()> {
    if !s.is_equally_weighted() {
        return Err(Error::config(format!("{side} input to a merge must be equally weighted")));
    }
    Ok(())
}

/// Index-aligned concatenation of two equally weighted systems.
pub fn naive_merge(left: &WeightedParticleSystem, right: &WeightedParticleSystem) -> Result<WeightedParticleSystem> {
    require_equal_weights(left, "left")?;
    require_equal_weights(right, "right")?;
    Ok(left.hstack(right)?.with_uniform_weights())
}

/// The tuple weight `v` of the extended merge for a three-submodel chain.
#[derive(Debug, Clone)]
pub struct MergeWeight {
    alpha_star: f64,
    mu: MuResolved,
}

#[derive(Debug, Clone)]
enum MuResolved {
    PriorMean,
    Fixed(Vec<f64>),
}

impl MergeWeight {
    /// Resolves the μ̃ strategy; `rng` is used only by `prior_draw`.
    pub fn new(model: &ChainMeldedModel, config: &MergeConfig, rng: &mut StreamRng) -> Result<Self> {
        if model.n_submodels() != 3 {
            return Err(Error::config(
                "extended merging is only available for three-submodel chains",
            ));
        }
        let centre = model.submodel(1);
        let mu = match &config.mu_tilde {
            MuTilde::PriorMean => MuResolved::PriorMean,
            MuTilde::PriorDraw => {
                let (l, _) = model.submodel(0).sample_prior(rng);
                let (r, _) = model.submodel(2).sample_prior(rng);
                let phi: Vec<f64> = l.into_iter().chain(r).collect();
                MuResolved::Fixed(centre.sample_psi_prior(&phi, rng))
            }
            MuTilde::FixedValue { values } => {
                if values.len() != centre.dim_psi() {
                    return Err(Error::config(format!(
                        "merge.mu_tilde.values has {} entries, expected {}",
                        values.len(),
                        centre.dim_psi()
                    )));
                }
                MuResolved::Fixed(values.clone())
            }
        };
        Ok(Self {
            alpha_star: config.alpha_star,
            mu,
        })
    }

    pub fn alpha_star(&self) -> f64 {
        self.alpha_star
    }

    /// `α*·[log p_pool,2(φ) + log p_2(Y_2 | φ, μ̃)]` with `phi` the centre
    /// submodel's blocks.
    pub fn log_v(&self, model: &ChainMeldedModel, phi: &[f64]) -> f64 {
        if self.alpha_star == 0.0 {
            return 0.0;
        }
        let centre = model.submodel(1);
        let pool = model.log_pool_m(1, phi);
        let lik = match &self.mu {
            MuResolved::PriorMean => centre.log_likelihood(phi, &centre.psi_prior_mean(phi)),
            MuResolved::Fixed(mu) => centre.log_likelihood(phi, mu),
        };
        if pool.is_infinite() || lik == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        self.alpha_star * (pool + lik)
    }
}

/// Oversamples each side `kappa·N` times uniformly with replacement, weights
/// the aligned tuples by `log_v(left_index, right_index)` and selects `n_out`
/// tuples multinomially. Returns the selected left and right indices.
pub fn extended_merge_indices<F>(
    n_left: usize,
    n_right: usize,
    n_out: usize,
    kappa: usize,
    log_v: F,
    rng: &mut StreamRng,
) -> Result<(IndexMultiset, IndexMultiset)>
where
    F: Fn(usize, usize) -> f64,
{
    let k = kappa * n_out;
    let li: Vec<usize> = (0..k).map(|_| rng.random_range(0..n_left)).collect();
    let ri: Vec<usize> = (0..k).map(|_| rng.random_range(0..n_right)).collect();
    let lv: Vec<f64> = li.iter().zip(&ri).map(|(&a, &b)| log_v(a, b)).collect();
    if lv.iter().any(|v| v.is_nan()) {
        return Err(Error::NotANumber("merge weights"));
    }
    let w = normalize_log_weights(&lv).map_err(|_| Error::DegenerateMerge)?;
    let sel = draw_ancestors(&w, ResampleKind::Multinomial, n_out, rng);
    Ok((
        IndexMultiset::from_zero_based(sel.iter().map(|&j| li[j]).collect(), n_left)?,
        IndexMultiset::from_zero_based(sel.iter().map(|&j| ri[j]).collect(), n_right)?,
    ))
}

/// Extended merge of two equally weighted systems of a three-submodel chain.
/// `left` must carry the first shared block and `right` the second, under
/// the model's labels.
pub fn extended_merge(
    left: &WeightedParticleSystem,
    right: &WeightedParticleSystem,
    model: &ChainMeldedModel,
    config: &MergeConfig,
    rng: &mut StreamRng,
) -> Result<WeightedParticleSystem> {
    config.validate()?;
    require_equal_weights(left, "left")?;
    require_equal_weights(right, "right")?;
    if left.len() != right.len() {
        return Err(Error::DimensionMismatch {
            context: "extended_merge",
            expected: left.len(),
            actual: right.len(),
        });
    }
    let weight = MergeWeight::new(model, config, rng)?;
    let layout = model.layout();
    let cols = |s: &WeightedParticleSystem, b: usize| -> Result<Vec<usize>> {
        layout.block_range(b)
            .map(|c| {
                let l = &layout.labels()[c];
                s.column_index(l)
                    .ok_or_else(|| Error::config(format!("merge input lacks column `{l}`")))
            })
            .collect()
    };
    let (lc, rc) = (cols(left, 0)?, cols(right, 1)?);
    let phi_of = |a: usize, b: usize| -> Vec<f64> {
        let (lr, rr) = (left.row(a), right.row(b));
        lc.iter().map(|&c| lr[c]).chain(rc.iter().map(|&c| rr[c])).collect()
    };
    let (li, ri) = extended_merge_indices(
        left.len(),
        right.len(),
        left.len(),
        config.kappa,
        |a, b| weight.log_v(model, &phi_of(a, b)),
        rng,
    )?;
    naive_merge(&left.gather(&li)?, &right.gather(&ri)?)
}

/// Exact probability that a given output row of the extended merge is the
/// pair `(a, b)`, by enumerating every oversampled configuration. Feasible
/// only for tiny inputs (`(n_left·n_right)^(kappa·n_out)` configurations).
pub fn extended_merge_exact_probabilities<F>(
    n_left: usize,
    n_right: usize,
    n_out: usize,
    kappa: usize,
    log_v: F,
) -> Result<Vec<Vec<f64>>>
where
    F: Fn(usize, usize) -> f64,
{
    let k = kappa * n_out;
    let cells = n_left * n_right;
    let total = (cells as u128).checked_pow(k as u32).filter(|&t| t <= 20_000_000).ok_or_else(|| {
        Error::config("too many configurations for exact enumeration")
    })? as usize;
    let v: Vec<f64> = (0..cells).map(|c| log_v(c / n_right, c % n_right).exp()).collect();
    let p_config = 1.0 / total as f64;
    let mut probs = vec![vec![0.0; n_right]; n_left];
    let mut digits = vec![0usize; k];
    for _ in 0..total {
        let sum: f64 = digits.iter().map(|&c| v[c]).sum();
        if sum > 0.0 {
            for &c in &digits {
                probs[c / n_right][c % n_right] += p_config * v[c] / sum;
            }
        }
        for d in digits.iter_mut() {
            *d += 1;
            if *d < cells {
                break;
            }
            *d = 0;
        }
    }
    Ok(probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, Streams};

    fn sys(label: &str, v: Vec<f64>) -> WeightedParticleSystem {
        let n = v.len();
        WeightedParticleSystem::uniform(vec![label.into()], v, n).unwrap()
    }

    #[test]
    fn naive_merge_aligns_rows() {
        let m = naive_merge(&sys("a", vec![1.0, 2.0]), &sys("b", vec![3.0, 4.0])).unwrap();
        assert_eq!(m.values(), &[1.0, 3.0, 2.0, 4.0]);
        let empty = WeightedParticleSystem::uniform(vec![], vec![], 2).unwrap();
        let l = sys("a", vec![1.0, 2.0]);
        assert_eq!(naive_merge(&l, &empty).unwrap(), l);
        let weighted = WeightedParticleSystem::new(vec!["b".into()], vec![1.0, 2.0], vec![0.0, -1.0]).unwrap();
        assert!(naive_merge(&l, &weighted).is_err());
        assert!(naive_merge(&l, &sys("b", vec![1.0])).is_err());
    }

    #[test]
    fn zero_exponent_gives_uniform_pairs() {
        for (nl, nr, kappa) in [(2usize, 2usize, 1usize), (2, 2, 2), (3, 3, 1), (2, 3, 1)] {
            let n_out = nl.max(nr).min(3);
            let p = extended_merge_exact_probabilities(nl, nr, n_out, kappa, |_, _| 0.0).unwrap();
            for row in &p {
                for &x in row {
                    assert!((x - 1.0 / (nl * nr) as f64).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn point_mass_inputs_give_the_single_tuple() {
        let mut rng = Streams::new(1, 0).stream(Purpose::Merge, 0, 0);
        let (l, r) = extended_merge_indices(1, 1, 4, 3, |_, _| -3.0, &mut rng).unwrap();
        assert_eq!(l.as_slice(), &[0, 0, 0, 0]);
        assert_eq!(r.as_slice(), &[0, 0, 0, 0]);
    }

    #[test]
    fn degenerate_weights_are_an_error() {
        let mut rng = Streams::new(1, 0).stream(Purpose::Merge, 0, 0);
        let e = extended_merge_indices(2, 2, 2, 1, |_, _| f64::NEG_INFINITY, &mut rng).unwrap_err();
        assert!(matches!(e, Error::DegenerateMerge));
    }

    #[test]
    fn empirical_tuple_frequencies_match_enumeration() {
        let lv = |a: usize, b: usize| [0.0, 1.3, -0.7][a] + [0.4, -1.1, 0.9][b];
        let exact = extended_merge_exact_probabilities(3, 3, 3, 1, lv).unwrap();
        let streams = Streams::new(77, 0);
        let reps = 100_000u64;
        let mut counts = [[0u64; 3]; 3];
        for r in 0..reps {
            let mut rng = streams.stream(Purpose::Merge, r, 0);
            let (l, rr) = extended_merge_indices(3, 3, 3, 1, lv, &mut rng).unwrap();
            counts[l.as_slice()[0]][rr.as_slice()[0]] += 1;
        }
        for a in 0..3 {
            for b in 0..3 {
                let p = exact[a][b];
                let f = counts[a][b] as f64 / reps as f64;
                let se = (p * (1.0 - p) / reps as f64).sqrt();
                assert!((f - p).abs() < 3.5 * se, "({a},{b}): {f} vs {p}");
            }
        }
    }
}
