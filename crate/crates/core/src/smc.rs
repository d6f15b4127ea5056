//! Tempering SMC sampler with random-walk Metropolis moves.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::particles::{
    draw_ancestors, ess, normalize_log_weights, IndexMultiset, ResampleScheme,
    WeightedParticleSystem,
};
use crate::rng::{Purpose, Streams};

/// The two endpoints of a geometric tempering path.
///
/// `origin` identifies the stage-input particle a state descends from, so
/// targets can read context that the particle does not carry itself.
pub trait TemperingTarget: Sync {
    fn dim(&self) -> usize;

    fn labels(&self) -> Vec<String>;

    fn discrete_mask(&self) -> Vec<bool> {
        vec![false; self.dim()]
    }

    /// Groups of continuous coordinates moved jointly.
    fn move_groups(&self) -> Vec<Vec<usize>> {
        let cont: Vec<usize> = self
            .discrete_mask()
            .iter()
            .enumerate()
            .filter(|(_, d)| !**d)
            .map(|(j, _)| j)
            .collect();
        if cont.is_empty() {
            Vec::new()
        } else {
            vec![cont]
        }
    }

    fn log_base(&self, theta: &[f64], origin: usize) -> f64;

    fn log_target(&self, theta: &[f64], origin: usize) -> f64;

    /// `log_target − log_base`; override when the common factors are costly.
    fn log_increment_ratio(&self, theta: &[f64], origin: usize) -> f64 {
        let b = self.log_base(theta, origin);
        if b == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let t = self.log_target(theta, origin);
        if t == f64::NEG_INFINITY {
            return t;
        }
        t - b
    }

    /// The tempered log-density up to terms that do not depend on the
    /// coordinates in `moved`. Differences between two states that agree
    /// outside `moved` must equal those of the full tempered density.
    fn log_tempered_partial(&self, alpha: f64, theta: &[f64], origin: usize, _moved: &[usize]) -> f64 {
        tempered_value(alpha, self.log_base(theta, origin), self.log_target(theta, origin))
    }
}

#[inline]
pub(crate) fn scaled(c: f64, x: f64) -> f64 {
    if c == 0.0 {
        0.0
    } else {
        c * x
    }
}

/// `(1−α)·base + α·target`, exact at both endpoints.
#[inline]
pub fn tempered_value(alpha: f64, base: f64, target: f64) -> f64 {
    if alpha == 0.0 {
        base
    } else if alpha == 1.0 {
        target
    } else {
        scaled(1.0 - alpha, base) + scaled(alpha, target)
    }
}

pub fn tempered_log_density<T: TemperingTarget + ?Sized>(
    target: &T,
    alpha: f64,
    theta: &[f64],
    origin: usize,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("temperature {alpha} outside [0, 1]")));
    }
    let v = match alpha {
        a if a == 0.0 => target.log_base(theta, origin),
        a if a == 1.0 => target.log_target(theta, origin),
        _ => tempered_value(alpha, target.log_base(theta, origin), target.log_target(theta, origin)),
    };
    if v.is_nan() {
        return Err(Error::NotANumber("tempered density"));
    }
    Ok(v)
}

/// `(α_next − α_prev)·[log_target − log_base]`.
pub fn weight_increment<T: TemperingTarget + ?Sized>(
    target: &T,
    alpha_prev: f64,
    alpha_next: f64,
    theta: &[f64],
    origin: usize,
) -> Result<f64> {
    if !(0.0 <= alpha_prev && alpha_prev <= alpha_next && alpha_next <= 1.0) {
        return Err(Error::config(format!(
            "invalid temperature step {alpha_prev} -> {alpha_next}"
        )));
    }
    let r = target.log_increment_ratio(theta, origin);
    if r.is_nan() {
        return Err(Error::NotANumber("weight increment"));
    }
    Ok(scaled(alpha_next - alpha_prev, r))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TemperingSchedule {
    /// Strictly increasing rungs ending at 1.
    Fixed { ladder: Vec<f64> },
    /// Each rung keeps the relative conditional ESS at `target_cess`.
    Adaptive { target_cess: f64, max_steps: usize },
}

impl Default for TemperingSchedule {
    fn default() -> Self {
        TemperingSchedule::Adaptive {
            target_cess: 0.9,
            max_steps: 1000,
        }
    }
}

impl TemperingSchedule {
    /// A geometric ladder `r^{n-1}, …, r, 1` with `n` rungs.
    pub fn geometric(n: usize, first: f64) -> Result<Self> {
        if n == 0 || !(first > 0.0 && first <= 1.0) {
            return Err(Error::config("geometric ladder needs n >= 1 and first in (0, 1]"));
        }
        let ladder = (0..n)
            .map(|k| {
                if n == 1 {
                    1.0
                } else {
                    first.powf(1.0 - k as f64 / (n - 1) as f64)
                }
            })
            .collect();
        Ok(TemperingSchedule::Fixed { ladder })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TemperingSchedule::Fixed { ladder } => {
                if ladder.is_empty() {
                    return Err(Error::config("schedule.ladder is empty"));
                }
                if ladder.windows(2).any(|w| w[1] <= w[0]) || ladder[0] <= 0.0 {
                    return Err(Error::config(
                        "schedule.ladder must be strictly increasing and positive",
                    ));
                }
                if *ladder.last().unwrap() != 1.0 {
                    return Err(Error::config("schedule.ladder must end at 1"));
                }
            }
            TemperingSchedule::Adaptive {
                target_cess,
                max_steps,
            } => {
                if !(*target_cess > 0.0 && *target_cess < 1.0) {
                    return Err(Error::config(format!(
                        "schedule.target_cess = {target_cess} must lie in (0, 1)"
                    )));
                }
                if *max_steps == 0 {
                    return Err(Error::config("schedule.max_steps must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Relative conditional ESS of reweighting current normalised weights `w` by
/// `exp(delta · incr)`.
pub fn relative_cess(w: &[f64], incr: &[f64], delta: f64) -> f64 {
    let m = w
        .iter()
        .zip(incr)
        .filter(|(wi, _)| **wi > 0.0)
        .map(|(_, r)| scaled(delta, *r))
        .fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return 0.0;
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (wi, r) in w.iter().zip(incr) {
        if *wi > 0.0 {
            let e = (scaled(delta, *r) - m).exp();
            num += wi * e;
            den += wi * e * e;
        }
    }
    if den == 0.0 {
        0.0
    } else {
        num * num / den
    }
}

pub const BISECTION_TOL: f64 = 1e-6;

/// The next temperature given per-particle increment log-ratios `incr` and
/// current log-weights.
pub fn next_temperature(
    incr: &[f64],
    log_weights: &[f64],
    alpha_prev: f64,
    schedule: &TemperingSchedule,
    step: usize,
) -> Result<f64> {
    if alpha_prev >= 1.0 {
        return Err(Error::config("temperature already reached 1"));
    }
    match schedule {
        TemperingSchedule::Fixed { ladder } => Ok(ladder
            .iter()
            .copied()
            .find(|&a| a > alpha_prev)
            .unwrap_or(1.0)),
        TemperingSchedule::Adaptive {
            target_cess,
            max_steps,
        } => {
            if step + 1 >= *max_steps {
                return Ok(1.0);
            }
            let w = normalize_log_weights(log_weights)?;
            let room = 1.0 - alpha_prev;
            if relative_cess(&w, incr, room) >= *target_cess {
                return Ok(1.0);
            }
            let (mut lo, mut hi) = (0.0, room);
            while hi - lo > BISECTION_TOL {
                let mid = 0.5 * (lo + hi);
                if relative_cess(&w, incr, mid) >= *target_cess {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let delta = if lo > 0.0 { lo } else { hi };
            Ok((alpha_prev + delta).min(1.0))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MoveKernelConfig {
    pub n_mcmc_iters: usize,
    /// Number of past rungs whose acceptance rates steer the proposal scale
    /// of the next rung; 0 keeps the scale at the optimal-scaling default.
    pub adaptation_window: usize,
    /// Move all continuous coordinates in one block instead of per group.
    pub joint: bool,
    /// Overrides the target's discrete mask when set.
    pub discrete_mask: Option<Vec<bool>>,
}

impl Default for MoveKernelConfig {
    fn default() -> Self {
        Self {
            n_mcmc_iters: 10,
            adaptation_window: 3,
            joint: false,
            discrete_mask: None,
        }
    }
}

impl MoveKernelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mcmc_iters == 0 {
            return Err(Error::config("kernel.n_mcmc_iters must be at least 1"));
        }
        Ok(())
    }
}

/// Frozen proposal for one rung: a Cholesky factor per continuous group and
/// the list of integer coordinates.
#[derive(Debug, Clone)]
pub struct MovePlan {
    pub groups: Vec<Vec<usize>>,
    pub factors: Vec<DMatrix<f64>>,
    pub discrete: Vec<usize>,
    pub n_iters: usize,
}

impl MovePlan {
    /// Proposal covariances `(2.38²/d)·scale·Σ̂ + 1e-6·I` from the weighted
    /// empirical covariance of `system`.
    pub fn from_system(
        system: &WeightedParticleSystem,
        groups: Vec<Vec<usize>>,
        discrete: Vec<usize>,
        scales: &[f64],
        n_iters: usize,
    ) -> Result<Self> {
        let w = system.normalized_weights()?;
        let factors = groups
            .iter()
            .zip(scales)
            .map(|(g, &s)| proposal_factor(system, &w, g, s))
            .collect();
        Ok(Self {
            groups,
            factors,
            discrete,
            n_iters,
        })
    }
}

fn proposal_factor(system: &WeightedParticleSystem, w: &[f64], group: &[usize], scale: f64) -> DMatrix<f64> {
    let d = group.len();
    let mut mean = DVector::<f64>::zeros(d);
    for (i, wi) in w.iter().enumerate() {
        if *wi > 0.0 {
            let r = system.row(i);
            for (k, &c) in group.iter().enumerate() {
                mean[k] += wi * r[c];
            }
        }
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for (i, wi) in w.iter().enumerate() {
        if *wi > 0.0 {
            let r = system.row(i);
            for a in 0..d {
                let da = r[group[a]] - mean[a];
                for b in 0..=a {
                    cov[(a, b)] += wi * da * (r[group[b]] - mean[b]);
                }
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            cov[(b, a)] = cov[(a, b)];
        }
    }
    factor_from_cov(cov, scale)
}

/// Cholesky factor of `(2.38²/d)·scale·cov + 1e-6·I`, falling back to the
/// diagonal when the matrix is not positive definite.
pub(crate) fn factor_from_cov(cov: DMatrix<f64>, scale: f64) -> DMatrix<f64> {
    let d = cov.nrows();
    let c = 2.38f64.powi(2) / d as f64 * scale;
    let reg = cov * c + DMatrix::<f64>::identity(d, d) * 1e-6;
    let finite = reg.iter().all(|v| v.is_finite());
    match (finite, reg.clone().cholesky()) {
        (true, Some(ch)) => ch.l(),
        _ => {
            let mut l = DMatrix::<f64>::zeros(d, d);
            for a in 0..d {
                let v = reg[(a, a)];
                l[(a, a)] = if v.is_finite() && v > 0.0 { v.sqrt() } else { 1e-3 };
            }
            l
        }
    }
}

/// Acceptance counts from one move sweep.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MoveStats {
    pub group_accepted: Vec<u64>,
    pub group_proposed: Vec<u64>,
    pub discrete_accepted: u64,
    pub discrete_proposed: u64,
}

impl MoveStats {
    pub fn acceptance(&self) -> f64 {
        let a: u64 = self.group_accepted.iter().sum::<u64>() + self.discrete_accepted;
        let p: u64 = self.group_proposed.iter().sum::<u64>() + self.discrete_proposed;
        if p == 0 {
            1.0
        } else {
            a as f64 / p as f64
        }
    }

    fn merge(&mut self, other: &MoveStats) {
        if self.group_accepted.is_empty() {
            self.group_accepted = vec![0; other.group_accepted.len()];
            self.group_proposed = vec![0; other.group_proposed.len()];
        }
        for k in 0..other.group_accepted.len() {
            self.group_accepted[k] += other.group_accepted[k];
            self.group_proposed[k] += other.group_proposed[k];
        }
        self.discrete_accepted += other.discrete_accepted;
        self.discrete_proposed += other.discrete_proposed;
    }
}

#[inline]
fn mh_accept<R: Rng + ?Sized>(cur: f64, prop: f64, rng: &mut R) -> bool {
    if prop.is_nan() || prop == f64::NEG_INFINITY {
        return false;
    }
    if cur == f64::NEG_INFINITY {
        return true;
    }
    let u: f64 = rng.random();
    u.ln() < prop - cur
}

/// Runs `plan.n_iters` Metropolis sweeps on one state in place.
///
/// `log_density(θ, moved)` must satisfy the contract of
/// [`TemperingTarget::log_tempered_partial`].
pub fn mh_sweep<F, R>(theta: &mut [f64], log_density: &F, plan: &MovePlan, rng: &mut R, stats: &mut MoveStats)
where
    F: Fn(&[f64], &[usize]) -> f64,
    R: Rng + ?Sized,
{
    if stats.group_accepted.len() != plan.groups.len() {
        stats.group_accepted = vec![0; plan.groups.len()];
        stats.group_proposed = vec![0; plan.groups.len()];
    }
    let mut prop = theta.to_vec();
    for _ in 0..plan.n_iters {
        for (g, (group, l)) in plan.groups.iter().zip(&plan.factors).enumerate() {
            let d = group.len();
            let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            prop.copy_from_slice(theta);
            for a in 0..d {
                let mut step = 0.0;
                for (b, zb) in z.iter().enumerate().take(a + 1) {
                    step += l[(a, b)] * zb;
                }
                prop[group[a]] += step;
            }
            let cur = log_density(theta, group);
            let new = log_density(&prop, group);
            stats.group_proposed[g] += 1;
            if mh_accept(cur, new, rng) {
                theta.copy_from_slice(&prop);
                stats.group_accepted[g] += 1;
            }
        }
        for &j in &plan.discrete {
            let up: bool = rng.random();
            let old = theta[j];
            let moved = [j];
            let cur = log_density(theta, &moved);
            theta[j] = if up { old + 1.0 } else { old - 1.0 };
            let new = log_density(theta, &moved);
            stats.discrete_proposed += 1;
            if mh_accept(cur, new, rng) {
                stats.discrete_accepted += 1;
            } else {
                theta[j] = old;
            }
        }
    }
}

/// Applies the frozen kernel to every particle in parallel; weights are kept.
///
/// `log_density(θ, i, moved)` is the density for particle `i`.
pub fn rwm_move<F>(
    system: &WeightedParticleSystem,
    log_density: &F,
    plan: &MovePlan,
    streams: &Streams,
    step: u64,
) -> Result<(WeightedParticleSystem, MoveStats)>
where
    F: Fn(&[f64], usize, &[usize]) -> f64 + Sync,
{
    if plan.n_iters == 0 {
        return Ok((system.clone(), MoveStats::default()));
    }
    let d = system.dim();
    let results: Vec<(Vec<f64>, MoveStats)> = (0..system.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = streams.stream(Purpose::Move, step, i as u64);
            let mut theta = system.row(i).to_vec();
            let mut stats = MoveStats::default();
            let f = |x: &[f64], moved: &[usize]| log_density(x, i, moved);
            mh_sweep(&mut theta, &f, plan, &mut rng, &mut stats);
            (theta, stats)
        })
        .collect();
    let mut values = Vec::with_capacity(system.len() * d);
    let mut stats = MoveStats {
        group_accepted: vec![0; plan.groups.len()],
        group_proposed: vec![0; plan.groups.len()],
        ..Default::default()
    };
    for (row, s) in &results {
        values.extend_from_slice(row);
        stats.merge(s);
    }
    let out = WeightedParticleSystem::new(
        system.labels().to_vec(),
        values,
        system.log_weights().to_vec(),
    )?;
    Ok((out, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmcConfig {
    pub schedule: TemperingSchedule,
    pub kernel: MoveKernelConfig,
    pub resample: ResampleScheme,
}

impl Default for SmcConfig {
    fn default() -> Self {
        Self {
            schedule: TemperingSchedule::default(),
            kernel: MoveKernelConfig::default(),
            resample: ResampleScheme::default(),
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.kernel.validate()?;
        self.resample.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RungDiagnostics {
    pub rung: usize,
    pub alpha: f64,
    /// ESS after the weight update, before any resampling.
    pub ess: f64,
    /// Relative conditional ESS of the increment.
    pub cess: f64,
    pub acceptance: f64,
    pub resampled: bool,
}

/// Per-particle payload carried alongside the particles and gathered at every
/// resampling step.
#[derive(Debug, Clone, PartialEq)]
pub struct Passengers {
    pub width: usize,
    pub data: Vec<f64>,
}

impl Passengers {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    fn gather(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.width);
        for &a in idx {
            data.extend_from_slice(self.row(a));
        }
        Self {
            width: self.width,
            data,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SmcOutput {
    pub particles: WeightedParticleSystem,
    /// `ancestry[i]` is the stage-input particle that output `i` descends from.
    pub ancestry: IndexMultiset,
    pub diagnostics: Vec<RungDiagnostics>,
    pub passengers: Option<Passengers>,
}

impl SmcOutput {
    /// Resamples to equal weights, composing the ancestry.
    pub fn resample_final(mut self, scheme: &ResampleScheme, streams: &Streams) -> Result<Self> {
        let w = self.particles.normalized_weights()?;
        let mut rng = streams.stream(Purpose::Resample, u64::MAX, 0);
        let idx = draw_ancestors(&w, scheme.kind, self.particles.len(), &mut rng);
        let idx = IndexMultiset::from_zero_based(idx, self.particles.len())?;
        self.particles = self.particles.gather(&idx)?.with_uniform_weights();
        self.ancestry = self.ancestry.compose_after(&idx)?;
        self.passengers = self.passengers.map(|p| p.gather(idx.as_slice()));
        Ok(self)
    }
}

fn continuous_groups<T: TemperingTarget + ?Sized>(target: &T, kernel: &MoveKernelConfig, mask: &[bool]) -> Vec<Vec<usize>> {
    let groups: Vec<Vec<usize>> = target
        .move_groups()
        .into_iter()
        .map(|g| g.into_iter().filter(|&c| !mask[c]).collect::<Vec<_>>())
        .filter(|g| !g.is_empty())
        .collect();
    if kernel.joint {
        let mut all: Vec<usize> = groups.into_iter().flatten().collect();
        all.sort_unstable();
        all.dedup();
        if all.is_empty() {
            Vec::new()
        } else {
            vec![all]
        }
    } else {
        groups
    }
}

/// Tempers from `log_base` to `log_target`, starting from equally weighted
/// `init` particles. Each rung updates weights, resamples when the relative
/// ESS falls below the scheme threshold, then moves every particle.
pub fn smc_sampler<T: TemperingTarget + ?Sized>(
    target: &T,
    init: WeightedParticleSystem,
    config: &SmcConfig,
    streams: &Streams,
    passengers: Option<Passengers>,
) -> Result<SmcOutput> {
    config.validate()?;
    if !init.is_equally_weighted() {
        return Err(Error::config("smc_sampler needs equally weighted initial particles"));
    }
    if init.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            context: "smc_sampler initial particles",
            expected: target.dim(),
            actual: init.dim(),
        });
    }
    if let Some(p) = &passengers {
        if p.data.len() != p.width * init.len() {
            return Err(Error::DimensionMismatch {
                context: "passengers",
                expected: p.width * init.len(),
                actual: p.data.len(),
            });
        }
    }
    let n = init.len();
    let mask = config
        .kernel
        .discrete_mask
        .clone()
        .unwrap_or_else(|| target.discrete_mask());
    if mask.len() != target.dim() {
        return Err(Error::DimensionMismatch {
            context: "discrete mask",
            expected: target.dim(),
            actual: mask.len(),
        });
    }
    let groups = continuous_groups(target, &config.kernel, &mask);
    let discrete: Vec<usize> = (0..mask.len()).filter(|&j| mask[j]).collect();
    let mut scales = vec![1.0; groups.len()];
    let mut history: Vec<Vec<f64>> = vec![Vec::new(); groups.len()];

    let mut particles = init.with_uniform_weights();
    let mut ancestry = IndexMultiset::identity(n);
    let mut passengers = passengers;
    let mut alpha = 0.0;
    let mut diagnostics = Vec::new();

    for rung in 0.. {
        let incr: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| target.log_increment_ratio(particles.row(i), ancestry.as_slice()[i]))
            .collect();
        if incr.iter().any(|r| r.is_nan()) {
            return Err(Error::DegenerateAtTemperature {
                alpha,
                reason: "NaN weight increment".into(),
            });
        }
        let next = next_temperature(&incr, particles.log_weights(), alpha, &config.schedule, rung)?;
        let delta = next - alpha;
        let w = particles.normalized_weights()?;
        let cess = relative_cess(&w, &incr, delta);
        let lw: Vec<f64> = particles
            .log_weights()
            .iter()
            .zip(&incr)
            .map(|(l, r)| l + scaled(delta, *r))
            .collect();
        if !lw.iter().any(|l| l.is_finite()) {
            return Err(Error::DegenerateAtTemperature {
                alpha: next,
                reason: "every particle has zero weight".into(),
            });
        }
        particles = particles.with_log_weights(lw)?;
        let ess_abs = ess(particles.log_weights())?;
        let resampled = config.resample.should_resample(ess_abs / n as f64);
        if resampled {
            let w = particles.normalized_weights()?;
            let mut rng = streams.stream(Purpose::Resample, rung as u64, 0);
            let idx = draw_ancestors(&w, config.resample.kind, n, &mut rng);
            let idx = IndexMultiset::from_zero_based(idx, n)?;
            particles = particles.gather(&idx)?.with_uniform_weights();
            ancestry = ancestry.compose_after(&idx)?;
            passengers = passengers.map(|p| p.gather(idx.as_slice()));
        }

        let plan = MovePlan::from_system(&particles, groups.clone(), discrete.clone(), &scales, config.kernel.n_mcmc_iters)?;
        let origins = ancestry.as_slice();
        let density = |x: &[f64], i: usize, moved: &[usize]| target.log_tempered_partial(next, x, origins[i], moved);
        let (moved, stats) = rwm_move(&particles, &density, &plan, streams, rung as u64)?;
        particles = moved;
        let acceptance = stats.acceptance();
        if acceptance < 0.01 {
            log::warn!("move acceptance {acceptance:.4} at temperature {next:.6}");
        }
        if config.kernel.adaptation_window > 0 {
            for (g, h) in history.iter_mut().enumerate() {
                let p = stats.group_proposed[g];
                if p == 0 {
                    continue;
                }
                h.push(stats.group_accepted[g] as f64 / p as f64);
                if h.len() > config.kernel.adaptation_window {
                    h.remove(0);
                }
                let avg = h.iter().sum::<f64>() / h.len() as f64;
                let goal = if groups[g].len() == 1 { 0.44 } else { 0.234 };
                scales[g] = (scales[g] * (avg - goal).exp()).clamp(1e-3, 1e2);
            }
        }
        diagnostics.push(RungDiagnostics {
            rung: rung + 1,
            alpha: next,
            ess: ess_abs,
            cess,
            acceptance,
            resampled,
        });
        alpha = next;
        if alpha >= 1.0 {
            break;
        }
    }
    Ok(SmcOutput {
        particles,
        ancestry,
        diagnostics,
        passengers,
    })
}
