//! Comparison samplers: a direct MCMC on the full melded posterior, the
//! two-stage parallel Metropolis-within-Gibbs sampler and the pointwise
//! plug-in approach.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dc::plan::plan_stages;
use crate::dc::sampler::{run_leaf, DcConfig};
use crate::error::{Error, Result};
use crate::melding::ChainMeldedModel;
use crate::particles::WeightedParticleSystem;
use crate::rng::{Purpose, StreamRng, Streams};
use crate::smc::{factor_from_cov, mh_sweep, MovePlan, MoveStats};
use crate::summary::weighted_quantile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    /// Total sweeps, burn-in included.
    pub n_iters: usize,
    /// Fraction of sweeps discarded as burn-in; proposals adapt only there.
    pub burn_in: f64,
    /// Keep every `thin`-th post-burn-in sweep.
    pub thin: usize,
    /// Sweeps between proposal updates during burn-in.
    pub adapt_interval: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_iters: 10_000,
            burn_in: 0.2,
            thin: 1,
            adapt_interval: 100,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.burn_in) {
            return Err(Error::config("mcmc.burn_in must lie in [0, 1)"));
        }
        if self.thin == 0 || self.adapt_interval == 0 {
            return Err(Error::config("mcmc.thin and mcmc.adapt_interval must be at least 1"));
        }
        if self.kept() == 0 {
            return Err(Error::config("mcmc.n_iters leaves no draws after burn-in and thinning"));
        }
        Ok(())
    }

    fn burn(&self) -> usize {
        (self.n_iters as f64 * self.burn_in).floor() as usize
    }

    fn kept(&self) -> usize {
        (self.n_iters - self.burn()) / self.thin
    }
}

#[derive(Debug, Clone)]
pub struct McmcChain {
    /// Post-burn-in draws with unit weights.
    pub samples: WeightedParticleSystem,
    /// Post-burn-in acceptance over every proposal.
    pub acceptance: f64,
    /// Post-burn-in acceptance of each continuous group.
    pub group_acceptance: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Touch {
    Submodels(Vec<usize>),
    Psi { k: usize, j: usize },
}

/// Sum of the melded-joint terms that change when `moved` coordinates move.
struct Partial<'a> {
    model: &'a ChainMeldedModel,
    touches: Vec<Touch>,
}

impl<'a> Partial<'a> {
    fn new(model: &'a ChainMeldedModel) -> Self {
        let layout = model.layout();
        let touches = (0..layout.dim())
            .map(|c| {
                if c < layout.n_phi() {
                    let b = (0..layout.n_blocks())
                        .find(|&b| layout.block_range(b).contains(&c))
                        .unwrap();
                    Touch::Submodels(vec![b, b + 1])
                } else {
                    let k = (0..layout.n_submodels())
                        .find(|&k| layout.psi_range(k).contains(&c))
                        .unwrap();
                    if layout.discrete_mask()[c] {
                        Touch::Psi {
                            k,
                            j: c - layout.psi_range(k).start,
                        }
                    } else {
                        Touch::Submodels(vec![k])
                    }
                }
            })
            .collect();
        Self { model, touches }
    }

    fn eval(&self, x: &[f64], moved: &[usize]) -> f64 {
        if let [c] = moved {
            if let Touch::Psi { k, j } = self.touches[*c] {
                return self.model.term_local(k, x, j);
            }
        }
        let mut subs: Vec<usize> = Vec::new();
        for &c in moved {
            match &self.touches[c] {
                Touch::Submodels(v) => subs.extend(v),
                Touch::Psi { k, .. } => subs.push(*k),
            }
        }
        subs.sort_unstable();
        subs.dedup();
        let mut total = 0.0;
        for k in subs {
            let t = self.model.term(k, x);
            if t == f64::NEG_INFINITY {
                return t;
            }
            total += t;
        }
        total
    }
}

/// Continuous move groups (shared blocks and each submodel's ψ groups) and
/// integer coordinates, restricted to `free`.
fn move_layout(model: &ChainMeldedModel, free: &[usize]) -> (Vec<Vec<usize>>, Vec<usize>) {
    let layout = model.layout();
    let mask = layout.discrete_mask();
    let mut groups = Vec::new();
    for b in 0..layout.n_blocks() {
        groups.push(layout.block_range(b).collect::<Vec<_>>());
    }
    for k in 0..layout.n_submodels() {
        let start = layout.psi_range(k).start;
        for g in model.submodel(k).psi_move_groups() {
            groups.push(g.into_iter().map(|j| start + j).collect());
        }
    }
    let groups = groups
        .into_iter()
        .map(|g| g.into_iter().filter(|c| free.contains(c) && !mask[*c]).collect::<Vec<_>>())
        .filter(|g| !g.is_empty())
        .collect();
    let discrete = free.iter().copied().filter(|&c| mask[c]).collect();
    (groups, discrete)
}

/// Running mean and covariance of one group.
struct Welford {
    n: f64,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl Welford {
    fn new(d: usize) -> Self {
        Self {
            n: 0.0,
            mean: DVector::zeros(d),
            m2: DMatrix::zeros(d, d),
        }
    }

    fn push(&mut self, v: DVector<f64>) {
        self.n += 1.0;
        let delta = &v - &self.mean;
        self.mean += &delta / self.n;
        let delta2 = &v - &self.mean;
        self.m2 += &delta * delta2.transpose();
    }

    fn cov(&self) -> DMatrix<f64> {
        &self.m2 / (self.n - 1.0)
    }
}

const INITIAL_SD: f64 = 0.1;

/// Adaptive Metropolis-within-Gibbs: proposal covariances and scales are
/// learned during burn-in and frozen afterwards.
struct AdaptiveSweeper {
    plan: MovePlan,
    scales: Vec<f64>,
    moments: Vec<Welford>,
    window: MoveStats,
    adapt_interval: usize,
}

impl AdaptiveSweeper {
    fn new(groups: Vec<Vec<usize>>, discrete: Vec<usize>, adapt_interval: usize) -> Self {
        let factors = groups
            .iter()
            .map(|g| factor_from_cov(DMatrix::identity(g.len(), g.len()) * INITIAL_SD.powi(2), 1.0))
            .collect();
        let moments = groups.iter().map(|g| Welford::new(g.len())).collect();
        let scales = vec![1.0; groups.len()];
        Self {
            plan: MovePlan {
                groups,
                factors,
                discrete,
                n_iters: 1,
            },
            scales,
            moments,
            window: MoveStats::default(),
            adapt_interval,
        }
    }

    fn sweep<F>(&mut self, x: &mut [f64], density: &F, rng: &mut StreamRng, adapting: bool, iter: usize) -> MoveStats
    where
        F: Fn(&[f64], &[usize]) -> f64,
    {
        let mut stats = MoveStats::default();
        mh_sweep(x, density, &self.plan, rng, &mut stats);
        if adapting {
            for (g, m) in self.plan.groups.iter().zip(&mut self.moments) {
                m.push(DVector::from_iterator(g.len(), g.iter().map(|&c| x[c])));
            }
            accumulate(&mut self.window, &stats);
            if (iter + 1) % self.adapt_interval == 0 {
                self.adapt();
            }
        }
        stats
    }

    fn adapt(&mut self) {
        for g in 0..self.plan.groups.len() {
            let p = self.window.group_proposed[g];
            if p == 0 {
                continue;
            }
            let acc = self.window.group_accepted[g] as f64 / p as f64;
            let d = self.plan.groups[g].len();
            let goal = if d == 1 { 0.44 } else { 0.234 };
            self.scales[g] = (self.scales[g] * (acc - goal).exp()).clamp(1e-4, 1e2);
            let m = &self.moments[g];
            let cov = if m.n > (2 * d + 10) as f64 {
                m.cov()
            } else {
                DMatrix::identity(d, d) * INITIAL_SD.powi(2)
            };
            self.plan.factors[g] = factor_from_cov(cov, self.scales[g]);
        }
        self.window = MoveStats::default();
    }
}

fn accumulate(total: &mut MoveStats, s: &MoveStats) {
    if total.group_accepted.len() != s.group_accepted.len() {
        total.group_accepted = vec![0; s.group_accepted.len()];
        total.group_proposed = vec![0; s.group_proposed.len()];
    }
    for k in 0..s.group_accepted.len() {
        total.group_accepted[k] += s.group_accepted[k];
        total.group_proposed[k] += s.group_proposed[k];
    }
    total.discrete_accepted += s.discrete_accepted;
    total.discrete_proposed += s.discrete_proposed;
}

/// Drives one chain: optional extra Gibbs blocks, then an adaptive sweep.
/// Records `keep` coordinates after burn-in.
fn run_chain<E>(
    model: &ChainMeldedModel,
    mut x: Vec<f64>,
    free: &[usize],
    keep: &[usize],
    config: &McmcConfig,
    rng: &mut StreamRng,
    mut extra: E,
) -> Result<McmcChain>
where
    E: FnMut(&mut Vec<f64>, &mut StreamRng, &mut MoveStats),
{
    config.validate()?;
    let (groups, discrete) = move_layout(model, free);
    let partial = Partial::new(model);
    let density = |x: &[f64], moved: &[usize]| partial.eval(x, moved);
    let mut sweeper = AdaptiveSweeper::new(groups, discrete, config.adapt_interval);
    let burn = config.burn();
    let mut values = Vec::with_capacity(config.kept() * keep.len());
    let mut totals = MoveStats::default();
    let mut extra_stats = MoveStats::default();
    for iter in 0..config.n_iters {
        let adapting = iter < burn;
        let mut es = MoveStats::default();
        extra(&mut x, rng, &mut es);
        let s = sweeper.sweep(&mut x, &density, rng, adapting, iter);
        if !adapting {
            accumulate(&mut totals, &s);
            extra_stats.discrete_accepted += es.discrete_accepted;
            extra_stats.discrete_proposed += es.discrete_proposed;
            if (iter - burn) % config.thin == 0 && values.len() < config.kept() * keep.len() {
                values.extend(keep.iter().map(|&c| x[c]));
            }
        }
    }
    let labels = keep.iter().map(|&c| model.labels()[c].clone()).collect();
    let n = values.len() / keep.len().max(1);
    let group_acceptance = totals
        .group_accepted
        .iter()
        .zip(&totals.group_proposed)
        .map(|(&a, &p)| if p == 0 { f64::NAN } else { a as f64 / p as f64 })
        .collect();
    totals.discrete_accepted += extra_stats.discrete_accepted;
    totals.discrete_proposed += extra_stats.discrete_proposed;
    Ok(McmcChain {
        samples: WeightedParticleSystem::uniform(labels, values, n)?,
        acceptance: totals.acceptance(),
        group_acceptance,
    })
}

fn with_initial_psi(model: &ChainMeldedModel, x: &mut [f64]) {
    let layout = model.layout();
    for k in 0..model.n_submodels() {
        let phi = x[layout.phi_range(k)].to_vec();
        if let Some(psi) = model.submodel(k).initial_psi(&phi) {
            x[layout.psi_range(k)].copy_from_slice(&psi);
        }
    }
}

/// A starting point with finite melded density, from prior draws with each
/// submodel's preferred ψ start.
pub fn initial_point(model: &ChainMeldedModel, rng: &mut StreamRng) -> Result<Vec<f64>> {
    const ATTEMPTS: usize = 1000;
    for _ in 0..ATTEMPTS {
        let mut x = model.sample_prior_point(rng);
        with_initial_psi(model, &mut x);
        if model.log_melded_joint(&x)?.is_finite() {
            return Ok(x);
        }
    }
    Err(Error::Initialisation {
        attempts: ATTEMPTS,
        reason: "no prior draw had finite melded density".into(),
    })
}

/// Adaptive random-walk Metropolis on continuous groups and single-site
/// integer moves on discrete coordinates, targeting the full melded
/// posterior directly.
pub fn full_posterior_mcmc(model: &ChainMeldedModel, config: &McmcConfig, seed: u64, chain: u64) -> Result<McmcChain> {
    let mut rng = Streams::new(seed, 0).stream(Purpose::Chain, 0, chain);
    let x = initial_point(model, &mut rng)?;
    let all: Vec<usize> = (0..model.dim()).collect();
    run_chain(model, x, &all, &all, config, &mut rng, |_, _, _| {})
}

/// Independent chains `0..n_chains` run in parallel.
pub fn full_posterior_mcmc_chains(model: &ChainMeldedModel, config: &McmcConfig, seed: u64, n_chains: usize) -> Result<Vec<McmcChain>> {
    (0..n_chains as u64)
        .into_par_iter()
        .map(|c| full_posterior_mcmc(model, config, seed, c))
        .collect()
}

/// Equally weighted stage-one samples of the two end submodels of a
/// three-submodel chain.
#[derive(Debug, Clone)]
pub struct SubposteriorPool {
    pub left: WeightedParticleSystem,
    pub right: WeightedParticleSystem,
}

impl SubposteriorPool {
    /// Runs the two stage-one samplers of the divide-and-conquer scheme.
    pub fn from_stage_one(model: &ChainMeldedModel, config: &DcConfig, seed: u64) -> Result<Self> {
        require_three(model)?;
        Ok(Self {
            left: run_leaf(model, 0, config, seed)?,
            right: run_leaf(model, 2, config, seed)?,
        })
    }
}

fn require_three(model: &ChainMeldedModel) -> Result<()> {
    if model.n_submodels() != 3 {
        return Err(Error::config(format!(
            "this sampler needs three submodels, got {}",
            model.n_submodels()
        )));
    }
    Ok(())
}

fn global_columns(model: &ChainMeldedModel, system: &WeightedParticleSystem) -> Result<Vec<usize>> {
    system
        .labels()
        .iter()
        .map(|l| {
            model
                .labels()
                .iter()
                .position(|g| g == l)
                .ok_or_else(|| Error::config(format!("pool column `{l}` is not a model parameter")))
        })
        .collect()
}

/// Log acceptance ratio of swapping in a pool draw for one end submodel:
/// only the centre submodel's term changes, as the end submodel's own term
/// is the pool's target and cancels.
pub fn two_stage_log_acceptance(model: &ChainMeldedModel, current: &[f64], proposed: &[f64]) -> f64 {
    let new = model.term(1, proposed);
    if new == f64::NEG_INFINITY {
        return new;
    }
    new - model.term(1, current)
}

/// Metropolis-within-Gibbs over three blocks: `(φ12, ψ1)` and `(φ23, ψ3)`
/// proposed uniformly with replacement from the stage-one pools, and `ψ2`
/// by adaptive random-walk and integer moves.
pub fn two_stage_parallel_sampler(
    model: &ChainMeldedModel,
    pool: &SubposteriorPool,
    config: &McmcConfig,
    seed: u64,
) -> Result<McmcChain> {
    require_three(model)?;
    if !pool.left.is_equally_weighted() || !pool.right.is_equally_weighted() {
        return Err(Error::config("subposterior pools must be equally weighted"));
    }
    let plan = plan_stages(3)?;
    let model = model.with_roles(plan.default_roles())?;
    let layout = model.layout();
    let lc = global_columns(&model, &pool.left)?;
    let rc = global_columns(&model, &pool.right)?;
    let mut rng = Streams::new(seed, 0).stream(Purpose::Chain, 0, 0);
    let mut x = vec![0.0; model.dim()];
    let mut found = false;
    for _ in 0..1000 {
        let (a, b) = (rng.random_range(0..pool.left.len()), rng.random_range(0..pool.right.len()));
        for (k, &c) in lc.iter().enumerate() {
            x[c] = pool.left.row(a)[k];
        }
        for (k, &c) in rc.iter().enumerate() {
            x[c] = pool.right.row(b)[k];
        }
        let phi = x[layout.phi_range(1)].to_vec();
        let sm = model.submodel(1);
        let psi = sm.initial_psi(&phi).unwrap_or_else(|| sm.psi_prior_mean(&phi));
        x[layout.psi_range(1)].copy_from_slice(&psi);
        if model.term(1, &x).is_finite() {
            found = true;
            break;
        }
    }
    if !found {
        return Err(Error::Initialisation {
            attempts: 1000,
            reason: "no pool pair gave the centre submodel a finite density".into(),
        });
    }
    let free: Vec<usize> = layout.psi_range(1).collect();
    let all: Vec<usize> = (0..model.dim()).collect();
    let mut prop = x.clone();
    let swap = |x: &mut Vec<f64>, rng: &mut StreamRng, stats: &mut MoveStats| {
        for (system, cols) in [(&pool.left, &lc), (&pool.right, &rc)] {
            let i = rng.random_range(0..system.len());
            prop.copy_from_slice(x);
            for (k, &c) in cols.iter().enumerate() {
                prop[c] = system.row(i)[k];
            }
            let r = two_stage_log_acceptance(&model, x, &prop);
            stats.discrete_proposed += 1;
            let u: f64 = rng.random();
            if r > f64::NEG_INFINITY && u.ln() < r {
                x.copy_from_slice(&prop);
                stats.discrete_accepted += 1;
            }
        }
    };
    run_chain(&model, x, &free, &all, config, &mut rng, swap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PluginStatistic {
    #[default]
    Mean,
    Median,
}

/// Point estimates of every shared block from the stage-one pools.
pub fn plugin_point(model: &ChainMeldedModel, pool: &SubposteriorPool, stat: PluginStatistic) -> Result<Vec<f64>> {
    require_three(model)?;
    let layout = model.layout();
    let mut phi = vec![f64::NAN; layout.n_phi()];
    for system in [&pool.left, &pool.right] {
        let cols = global_columns(model, system)?;
        let w = system.normalized_weights()?;
        for (k, &c) in cols.iter().enumerate() {
            if c < layout.n_phi() {
                let col = system.column(k);
                phi[c] = match stat {
                    PluginStatistic::Mean => col.iter().zip(&w).map(|(v, w)| v * w).sum(),
                    PluginStatistic::Median => weighted_quantile(&col, &w, 0.5),
                };
            }
        }
    }
    if phi.iter().any(|v| v.is_nan()) {
        return Err(Error::config("pools do not cover every shared parameter"));
    }
    Ok(phi)
}

/// MCMC over the centre submodel's `ψ` with every shared parameter fixed at
/// `phi`. The chain holds the `ψ` columns only.
pub fn pointwise_plugin_sampler(model: &ChainMeldedModel, phi: &[f64], config: &McmcConfig, seed: u64) -> Result<McmcChain> {
    require_three(model)?;
    let layout = model.layout();
    if phi.len() != layout.n_phi() {
        return Err(Error::DimensionMismatch {
            context: "plug-in values",
            expected: layout.n_phi(),
            actual: phi.len(),
        });
    }
    let mut rng = Streams::new(seed, 0).stream(Purpose::Chain, 0, 0);
    let mut x = model.sample_prior_point(&mut rng);
    x[..layout.n_phi()].copy_from_slice(phi);
    with_initial_psi(model, &mut x);
    if !model.term(1, &x).is_finite() {
        return Err(Error::config("plug-in values lie outside the centre submodel's support"));
    }
    let free: Vec<usize> = layout.psi_range(1).collect();
    run_chain(model, x, &free, &free, config, &mut rng, |_, _, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::melding::PooledPriorSpec;
    use crate::models::gaussian_chain::{GaussianChainSpec, SubmodelData};
    use crate::summary::gelman_rubin;

    fn spec() -> GaussianChainSpec {
        GaussianChainSpec {
            phi_prior_mean: vec![0.0, 0.5],
            phi_prior_sd: vec![1.0, 1.5],
            psi_prior_mean: vec![0.0; 3],
            psi_prior_sd: vec![1.0; 3],
            data: vec![
                SubmodelData::new(vec![0.4, 0.9], 1.0),
                SubmodelData::new(vec![-0.3], 0.5),
                SubmodelData::new(vec![1.2, 1.0, 0.7], 1.0),
            ],
        }
    }

    fn mean_of(chain: &McmcChain, k: usize) -> f64 {
        let c = chain.samples.column(k);
        c.iter().sum::<f64>() / c.len() as f64
    }

    #[test]
    fn full_mcmc_matches_closed_form_and_mixes() {
        let s = spec();
        let lambda = vec![0.5, 0.7, 0.4];
        let model = s.build(PooledPriorSpec::log_pooling(lambda.clone()).unwrap()).unwrap();
        let exact = s.exact_posterior(&lambda).unwrap();
        let cfg = McmcConfig {
            n_iters: 60_000,
            ..Default::default()
        };
        let chains = full_posterior_mcmc_chains(&model, &cfg, 11, 2).unwrap();
        for k in 0..model.dim() {
            let m = (mean_of(&chains[0], k) + mean_of(&chains[1], k)) / 2.0;
            assert!((m - exact.mean[k]).abs() < 0.05 * exact.sd(k).max(0.2), "coord {k}: {m} vs {}", exact.mean[k]);
            let cols: Vec<Vec<f64>> = chains.iter().map(|c| c.samples.column(k)).collect();
            assert!(gelman_rubin(&cols).unwrap() < 1.05);
        }
        assert!(chains[0].acceptance > 0.1);
    }

    #[test]
    fn acceptance_form_matches_full_ratio() {
        let s = spec();
        let model = s
            .build(PooledPriorSpec::log_pooling(vec![0.5, 0.5, 0.5]).unwrap())
            .unwrap()
            .with_roles(plan_stages(3).unwrap().default_roles())
            .unwrap();
        let mut rng = Streams::new(4, 0).stream(Purpose::Data, 0, 0);
        for _ in 0..50 {
            let x = model.sample_prior_point(&mut rng);
            let mut y = x.clone();
            let fresh = model.sample_prior_point(&mut rng);
            // replace (φ12, ψ1)
            y[0] = fresh[0];
            y[model.layout().psi_range(0).start] = fresh[model.layout().psi_range(0).start];
            let full = model.log_melded_joint(&y).unwrap() - model.log_melded_joint(&x).unwrap()
                - (model.term(0, &y) - model.term(0, &x));
            assert!((two_stage_log_acceptance(&model, &x, &y) - full).abs() < 1e-10);
        }
    }

    #[test]
    fn two_stage_and_plugin_on_gaussian_chain() {
        let s = spec();
        let lambda = vec![0.5, 0.5, 0.5];
        let model = s.build(PooledPriorSpec::log_pooling(lambda.clone()).unwrap()).unwrap();
        let exact = s.exact_posterior(&lambda).unwrap();
        let dc = DcConfig {
            n_particles: 4000,
            ..Default::default()
        };
        let pool = SubposteriorPool::from_stage_one(&model, &dc, 3).unwrap();
        let cfg = McmcConfig {
            n_iters: 40_000,
            ..Default::default()
        };
        let chain = two_stage_parallel_sampler(&model, &pool, &cfg, 5).unwrap();
        for k in 0..model.dim() {
            let m = mean_of(&chain, k);
            assert!((m - exact.mean[k]).abs() < 0.08 * exact.sd(k).max(0.2), "coord {k}: {m} vs {}", exact.mean[k]);
        }
        // plug-in at the exact posterior mean of φ
        let phi: Vec<f64> = (0..2).map(|k| exact.mean[k]).collect();
        let plug = pointwise_plugin_sampler(&model, &phi, &cfg, 6).unwrap();
        assert_eq!(plug.samples.labels(), ["psi_2".to_string()]);
        let c = plug.samples.column(0);
        let m = c.iter().sum::<f64>() / c.len() as f64;
        let v = c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / c.len() as f64;
        let melded_var = exact.cov[(3, 3)];
        assert!(v < melded_var, "{v} vs {melded_var}");
    }

    #[test]
    fn flat_centre_accepts_every_swap() {
        // centre with no data and λ = (1, 0, 1): its term is constant in φ
        let mut s = spec();
        s.data[1].y.clear();
        let model = s.build(PooledPriorSpec::log_pooling(vec![1.0, 0.0, 1.0]).unwrap()).unwrap();
        let model = model.with_roles(plan_stages(3).unwrap().default_roles()).unwrap();
        let mut rng = Streams::new(8, 0).stream(Purpose::Data, 0, 0);
        let x = model.sample_prior_point(&mut rng);
        let mut y = model.sample_prior_point(&mut rng);
        let psi2 = model.layout().psi_range(1);
        y[psi2.clone()].copy_from_slice(&x[psi2]);
        assert!(two_stage_log_acceptance(&model, &x, &y).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let bad = McmcConfig {
            burn_in: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = McmcConfig {
            thin: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
