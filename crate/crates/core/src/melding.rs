//! Chain-structured submodels joined by a logarithmic pooled prior.
//!
//! Submodel `m` (zero-based internally) owns the blocks `φ_{m-1,m}` and
//! `φ_{m,m+1}` plus its private `ψ_m`. Every density works on a *global*
//! parameter vector laid out as all φ blocks in chain order followed by
//! `ψ_1, …, ψ_M`, so the two blocks of a submodel are always contiguous.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// One submodel of the chain with its data bound in.
///
/// `phi` arguments are the concatenation `(φ_{m-1,m}, φ_{m,m+1})` with the
/// missing block omitted at either end of the chain.
pub trait Submodel: Send + Sync {
    fn dim_phi_left(&self) -> usize;
    fn dim_phi_right(&self) -> usize;
    fn dim_psi(&self) -> usize;

    /// Labels of the right-hand shared block (empty for the last submodel).
    fn right_block_labels(&self) -> Vec<String>;
    fn psi_labels(&self) -> Vec<String>;

    /// Coordinates of ψ that take integer values.
    fn psi_discrete_mask(&self) -> Vec<bool> {
        vec![false; self.dim_psi()]
    }

    /// Groups of continuous ψ coordinates updated jointly by random-walk
    /// moves. Defaults to one group holding every continuous coordinate.
    fn psi_move_groups(&self) -> Vec<Vec<usize>> {
        let cont: Vec<usize> = self
            .psi_discrete_mask()
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

    /// `log p_m(φ_m)`.
    fn log_phi_prior(&self, phi: &[f64]) -> f64;

    /// One factor of `log p_m(φ_m)` when the prior factorises over the two
    /// blocks. Needed only when an interior submodel keeps its own prior in
    /// the pooled-prior decomposition.
    fn log_phi_prior_block(&self, _side: Side, _block: &[f64]) -> Option<f64> {
        None
    }

    /// `log p_m(ψ_m | φ_m)`.
    fn log_psi_prior(&self, phi: &[f64], psi: &[f64]) -> f64;

    /// `log p_m(Y_m | φ_m, ψ_m)`.
    fn log_likelihood(&self, phi: &[f64], psi: &[f64]) -> f64;

    /// `log p_m(φ_m, ψ_m, Y_m)`.
    fn log_joint(&self, phi: &[f64], psi: &[f64]) -> f64 {
        let a = self.log_phi_prior(phi);
        if a == f64::NEG_INFINITY {
            return a;
        }
        let b = self.log_psi_prior(phi, psi);
        if b == f64::NEG_INFINITY {
            return b;
        }
        a + b + self.log_likelihood(phi, psi)
    }

    /// Any function of `(φ, ψ)` whose differences between two states that
    /// differ only in `ψ[j]` match those of
    /// `log_psi_prior + log_likelihood`. Override to make single-site moves
    /// cheap.
    fn log_conditional_local(&self, phi: &[f64], psi: &[f64], _j: usize) -> f64 {
        let b = self.log_psi_prior(phi, psi);
        if b == f64::NEG_INFINITY {
            return b;
        }
        b + self.log_likelihood(phi, psi)
    }

    /// Joint draw `(φ_m, ψ_m)` from the submodel prior.
    fn sample_prior(&self, rng: &mut StreamRng) -> (Vec<f64>, Vec<f64>);

    fn sample_psi_prior(&self, phi: &[f64], rng: &mut StreamRng) -> Vec<f64>;

    fn psi_prior_mean(&self, phi: &[f64]) -> Vec<f64>;

    /// Draw from the ψ proposal used when the submodel joins a later stage.
    fn sample_psi_proposal(&self, phi: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        self.sample_psi_prior(phi, rng)
    }

    fn log_psi_proposal(&self, phi: &[f64], psi: &[f64]) -> f64 {
        self.log_psi_prior(phi, psi)
    }

    /// Local form of [`Submodel::log_psi_proposal`] in the sense of
    /// [`Submodel::log_conditional_local`].
    fn log_psi_proposal_local(&self, phi: &[f64], psi: &[f64], _j: usize) -> f64 {
        self.log_psi_proposal(phi, psi)
    }

    /// A point inside the support used to start MCMC chains.
    fn initial_psi(&self, _phi: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

/// How a submodel's share of the pooled prior is defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// `p_pool,m = p_m(φ_m)`.
    Original,
    /// Absorbs whatever is needed for the product identity to hold.
    Correction,
    /// `p_pool,m ≡ 1`.
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledPriorSpec {
    pub lambda: Vec<f64>,
    pub roles: Vec<Role>,
}

impl PooledPriorSpec {
    pub fn new(lambda: Vec<f64>, roles: Vec<Role>) -> Self {
        Self { lambda, roles }
    }

    /// Logarithmic pooling with the roles the multi-stage sampler uses:
    /// first-stage submodels keep their own prior, the rest correct.
    pub fn log_pooling(lambda: Vec<f64>) -> Result<Self> {
        let m = lambda.len();
        let plan = crate::dc::plan::plan_stages(m)?;
        Ok(Self {
            lambda,
            roles: plan.default_roles(),
        })
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.lambda.len() != m {
            return Err(Error::config(format!(
                "lambda has {} entries but the model has {m} submodels",
                self.lambda.len()
            )));
        }
        if self.roles.len() != m {
            return Err(Error::config(format!(
                "roles has {} entries but the model has {m} submodels",
                self.roles.len()
            )));
        }
        if let Some((k, l)) = self
            .lambda
            .iter()
            .enumerate()
            .find(|(_, l)| !(l.is_finite() && **l >= 0.0))
        {
            return Err(Error::config(format!(
                "lambda[{}] = {l} must be finite and non-negative",
                k + 1
            )));
        }
        let total: f64 = self.lambda.iter().sum();
        if total < 1.0 {
            log::warn!("pooling weights sum to {total} < 1; the pooled prior may be improper");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PoolPart {
    Whole,
    /// The factor of the source submodel's prior on the block it shares with
    /// the receiving submodel.
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PoolTerm {
    source: usize,
    coef: f64,
    part: PoolPart,
}

/// Positions of every block and ψ inside the global vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    m: usize,
    block_offsets: Vec<usize>,
    psi_offsets: Vec<usize>,
    labels: Vec<String>,
    discrete: Vec<bool>,
}

impl Layout {
    pub fn n_submodels(&self) -> usize {
        self.m
    }

    pub fn n_blocks(&self) -> usize {
        self.m - 1
    }

    pub fn dim(&self) -> usize {
        self.psi_offsets[self.m]
    }

    pub fn n_phi(&self) -> usize {
        self.block_offsets[self.m - 1]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn discrete_mask(&self) -> &[bool] {
        &self.discrete
    }

    /// Block `b` (zero-based) is `φ_{b+1,b+2}` in one-based chain notation.
    pub fn block_range(&self, b: usize) -> Range<usize> {
        self.block_offsets[b]..self.block_offsets[b + 1]
    }

    pub fn phi_range(&self, m: usize) -> Range<usize> {
        let start = if m == 0 { 0 } else { self.block_offsets[m - 1] };
        let end = self.block_offsets[(m + 1).min(self.m - 1)];
        start..end
    }

    pub fn psi_range(&self, m: usize) -> Range<usize> {
        self.psi_offsets[m]..self.psi_offsets[m + 1]
    }

    /// Blocks touched by submodel `m`.
    pub fn blocks_of(&self, m: usize) -> Vec<usize> {
        let mut v = Vec::with_capacity(2);
        if m > 0 {
            v.push(m - 1);
        }
        if m + 1 < self.m {
            v.push(m);
        }
        v
    }

    /// Global coordinates of every block and ψ in `submodels` (a contiguous
    /// segment), in global order.
    pub fn segment_columns(&self, first: usize, last: usize) -> Vec<usize> {
        let mut cols = Vec::new();
        let b0 = first.saturating_sub(1);
        let b1 = last.min(self.m - 2);
        for b in b0..=b1 {
            cols.extend(self.block_range(b));
        }
        for m in first..=last {
            cols.extend(self.psi_range(m));
        }
        cols
    }
}

/// `M` submodels sharing φ blocks along a chain, joined by logarithmic
/// pooling.
#[derive(Clone)]
pub struct ChainMeldedModel {
    submodels: Vec<Arc<dyn Submodel>>,
    pooling: PooledPriorSpec,
    pool_terms: Vec<Vec<PoolTerm>>,
    layout: Layout,
}

impl std::fmt::Debug for ChainMeldedModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChainMeldedModel")
            .field("m", &self.submodels.len())
            .field("pooling", &self.pooling)
            .field("labels", &self.layout.labels)
            .finish()
    }
}

#[inline]
fn scaled(c: f64, x: f64) -> f64 {
    if c == 0.0 {
        0.0
    } else {
        c * x
    }
}

/// `a - b` for log-densities where `b` is a marginal of `a`; a point outside
/// either support maps to `-inf`.
#[inline]
pub(crate) fn log_ratio(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        a - b
    }
}

impl ChainMeldedModel {
    pub fn new(submodels: Vec<Arc<dyn Submodel>>, pooling: PooledPriorSpec) -> Result<Self> {
        let m = submodels.len();
        if m < 3 {
            return Err(Error::model(format!("a chain needs at least 3 submodels, got {m}")));
        }
        pooling.validate(m)?;
        if submodels[0].dim_phi_left() != 0 {
            return Err(Error::model("the first submodel cannot have a left block"));
        }
        if submodels[m - 1].dim_phi_right() != 0 {
            return Err(Error::model("the last submodel cannot have a right block"));
        }
        for k in 0..m - 1 {
            let (a, b) = (submodels[k].dim_phi_right(), submodels[k + 1].dim_phi_left());
            if a != b {
                return Err(Error::model(format!(
                    "submodels {} and {} disagree on the shared block dimension ({a} vs {b})",
                    k + 1,
                    k + 2
                )));
            }
            if a == 0 {
                return Err(Error::model(format!(
                    "submodels {} and {} share an empty block",
                    k + 1,
                    k + 2
                )));
            }
            if submodels[k].right_block_labels().len() != a {
                return Err(Error::model(format!(
                    "submodel {} labels its right block with the wrong number of names",
                    k + 1
                )));
            }
        }
        let mut block_offsets = vec![0usize];
        let mut labels = Vec::new();
        let mut discrete = Vec::new();
        for sm in submodels.iter().take(m - 1) {
            block_offsets.push(block_offsets.last().unwrap() + sm.dim_phi_right());
            labels.extend(sm.right_block_labels());
            discrete.extend(std::iter::repeat_n(false, sm.dim_phi_right()));
        }
        let mut psi_offsets = vec![*block_offsets.last().unwrap()];
        for (k, sm) in submodels.iter().enumerate() {
            let l = sm.psi_labels();
            let mask = sm.psi_discrete_mask();
            if l.len() != sm.dim_psi() || mask.len() != sm.dim_psi() {
                return Err(Error::model(format!(
                    "submodel {} reports inconsistent ψ dimensions",
                    k + 1
                )));
            }
            psi_offsets.push(psi_offsets.last().unwrap() + sm.dim_psi());
            labels.extend(l);
            discrete.extend(mask);
        }
        let mut seen = std::collections::HashSet::new();
        for l in &labels {
            if !seen.insert(l.clone()) {
                return Err(Error::model(format!("duplicate parameter label `{l}`")));
            }
        }
        let layout = Layout {
            m,
            block_offsets,
            psi_offsets,
            labels,
            discrete,
        };
        let pool_terms = decompose(&submodels, &pooling)?;
        Ok(Self {
            submodels,
            pooling,
            pool_terms,
            layout,
        })
    }

    /// Same submodels and λ with different decomposition roles.
    pub fn with_roles(&self, roles: Vec<Role>) -> Result<Self> {
        Self::new(
            self.submodels.clone(),
            PooledPriorSpec::new(self.pooling.lambda.clone(), roles),
        )
    }

    pub fn n_submodels(&self) -> usize {
        self.submodels.len()
    }

    pub fn submodel(&self, m: usize) -> &dyn Submodel {
        self.submodels[m].as_ref()
    }

    pub fn submodels(&self) -> &[Arc<dyn Submodel>] {
        &self.submodels
    }

    pub fn pooling(&self) -> &PooledPriorSpec {
        &self.pooling
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn labels(&self) -> &[String] {
        self.layout.labels()
    }

    fn check_len(&self, x: &[f64], expected: usize, context: &'static str) -> Result<()> {
        if x.len() != expected {
            return Err(Error::DimensionMismatch {
                context,
                expected,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Unnormalised `log p_pool(φ) = Σ λ_m log p_m(φ_m)`; `phi` holds every
    /// block in chain order.
    pub fn log_pooled_prior(&self, phi: &[f64]) -> Result<f64> {
        self.check_len(phi, self.layout.n_phi(), "pooled prior")?;
        let mut total = 0.0;
        for (m, sm) in self.submodels.iter().enumerate() {
            let v = scaled(self.pooling.lambda[m], sm.log_phi_prior(&phi[self.layout.phi_range(m)]));
            if v.is_nan() {
                return Err(Error::NotANumber("pooled prior"));
            }
            total += v;
        }
        Ok(total)
    }

    /// `log p_pool,m(φ_m)` from the decomposition; `phi_m` is the submodel's
    /// own φ slice.
    pub fn log_pool_m(&self, m: usize, phi_m: &[f64]) -> f64 {
        let dl = self.submodels[m].dim_phi_left();
        let mut total = 0.0;
        for t in &self.pool_terms[m] {
            let v = match t.part {
                PoolPart::Whole => self.submodels[m].log_phi_prior(phi_m),
                PoolPart::Shared => {
                    if t.source + 1 == m {
                        block_prior(self.submodels[t.source].as_ref(), Side::Right, &phi_m[..dl])
                            .expect("checked at construction")
                    } else {
                        block_prior(self.submodels[t.source].as_ref(), Side::Left, &phi_m[dl..])
                            .expect("checked at construction")
                    }
                }
            };
            total += scaled(t.coef, v);
        }
        total
    }

    /// `log p_pool,m(φ_m) + log p_m(φ_m, ψ_m, Y_m) − log p_m(φ_m)` read from a
    /// global vector.
    pub fn term(&self, m: usize, x: &[f64]) -> f64 {
        let phi = &x[self.layout.phi_range(m)];
        let psi = &x[self.layout.psi_range(m)];
        let sm = &self.submodels[m];
        let ratio = log_ratio(sm.log_joint(phi, psi), sm.log_phi_prior(phi));
        if ratio == f64::NEG_INFINITY {
            return ratio;
        }
        let pool = self.log_pool_m(m, phi);
        if pool.is_infinite() {
            return f64::NEG_INFINITY;
        }
        pool + ratio
    }

    /// Local version of [`ChainMeldedModel::term`] for a change of the single
    /// coordinate `j` of `ψ_m`.
    pub fn term_local(&self, m: usize, x: &[f64], j: usize) -> f64 {
        let phi = &x[self.layout.phi_range(m)];
        let psi = &x[self.layout.psi_range(m)];
        self.submodels[m].log_conditional_local(phi, psi, j)
    }

    /// `log q_m(ψ_m | φ_m)` read from a global vector.
    pub fn log_q(&self, m: usize, x: &[f64]) -> f64 {
        self.submodels[m].log_psi_proposal(&x[self.layout.phi_range(m)], &x[self.layout.psi_range(m)])
    }

    pub fn log_q_local(&self, m: usize, x: &[f64], j: usize) -> f64 {
        self.submodels[m].log_psi_proposal_local(
            &x[self.layout.phi_range(m)],
            &x[self.layout.psi_range(m)],
            j,
        )
    }

    /// Prior factor of submodel `m` on one of its blocks.
    pub fn block_prior(&self, m: usize, side: Side, block: &[f64]) -> Option<f64> {
        block_prior(self.submodels[m].as_ref(), side, block)
    }

    /// `log p_meld(φ, ψ, Y)` up to a constant.
    pub fn log_melded_joint(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x, self.dim(), "melded joint")?;
        let mut total = self.log_pooled_prior(&x[..self.layout.n_phi()])?;
        for (m, sm) in self.submodels.iter().enumerate() {
            let phi = &x[self.layout.phi_range(m)];
            let psi = &x[self.layout.psi_range(m)];
            let r = log_ratio(sm.log_joint(phi, psi), sm.log_phi_prior(phi));
            if r.is_nan() {
                return Err(Error::NotANumber("melded joint"));
            }
            total += r;
        }
        if total.is_nan() {
            // only reachable as +inf - inf from a pooled prior outside support
            return Ok(f64::NEG_INFINITY);
        }
        Ok(total)
    }

    /// Joint density of the submodels in `subset` (zero-based indices); only
    /// the coordinates those submodels touch are read from `x`.
    pub fn log_melded_subset(&self, subset: &[usize], x: &[f64]) -> Result<f64> {
        self.check_len(x, self.dim(), "melded subset")?;
        if subset.is_empty() {
            return Err(Error::config("empty submodel subset"));
        }
        let mut total = 0.0;
        for &m in subset {
            if m >= self.n_submodels() {
                return Err(Error::IndexOutOfRange {
                    context: "submodel subset",
                    index: m + 1,
                    len: self.n_submodels(),
                });
            }
            let t = self.term(m, x);
            if t.is_nan() {
                return Err(Error::NotANumber("melded subposterior"));
            }
            total += t;
        }
        Ok(total)
    }

    /// Global vector assembled from per-submodel prior draws, with each
    /// shared block taken from the left submodel's draw.
    pub fn sample_prior_point(&self, rng: &mut StreamRng) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        for m in (0..self.n_submodels()).rev() {
            let (phi, psi) = self.submodels[m].sample_prior(rng);
            x[self.layout.phi_range(m)].copy_from_slice(&phi);
            x[self.layout.psi_range(m)].copy_from_slice(&psi);
        }
        x
    }
}

fn block_prior(sm: &dyn Submodel, side: Side, block: &[f64]) -> Option<f64> {
    if let Some(v) = sm.log_phi_prior_block(side, block) {
        return Some(v);
    }
    let (dl, dr) = (sm.dim_phi_left(), sm.dim_phi_right());
    match side {
        Side::Left if dr == 0 && dl > 0 => Some(sm.log_phi_prior(block)),
        Side::Right if dl == 0 && dr > 0 => Some(sm.log_phi_prior(block)),
        _ => None,
    }
}

fn block_prior_available(sm: &dyn Submodel, side: Side) -> bool {
    let (dl, dr) = (sm.dim_phi_left(), sm.dim_phi_right());
    let probe = vec![0.0; if side == Side::Left { dl } else { dr }];
    block_prior(sm, side, &probe).is_some()
}

fn decompose(submodels: &[Arc<dyn Submodel>], pooling: &PooledPriorSpec) -> Result<Vec<Vec<PoolTerm>>> {
    let m = submodels.len();
    if pooling.roles.iter().all(|r| *r == Role::Correction) {
        return Err(Error::config(
            "pooled-prior roles cannot all be `correction`: at least one submodel must be `original` or `flat`",
        ));
    }
    let mut terms: Vec<Vec<PoolTerm>> = vec![Vec::new(); m];
    for k in 0..m {
        let role = pooling.roles[k];
        if role == Role::Original {
            terms[k].push(PoolTerm {
                source: k,
                coef: 1.0,
                part: PoolPart::Whole,
            });
        }
        let c = pooling.lambda[k] - if role == Role::Original { 1.0 } else { 0.0 };
        if c == 0.0 {
            continue;
        }
        if role == Role::Correction {
            terms[k].push(PoolTerm {
                source: k,
                coef: c,
                part: PoolPart::Whole,
            });
            continue;
        }
        // the residual of a non-correcting submodel is handed, block by block,
        // to correcting neighbours
        for (side, neighbour) in [(Side::Left, k.checked_sub(1)), (Side::Right, Some(k + 1).filter(|&n| n < m))] {
            let Some(n) = neighbour else { continue };
            if pooling.roles[n] != Role::Correction {
                return Err(Error::config(format!(
                    "submodel {} needs a correcting neighbour to absorb its pooled-prior residual, but submodel {} is not `correction`",
                    k + 1,
                    n + 1
                )));
            }
            if !block_prior_available(submodels[k].as_ref(), side) {
                return Err(Error::config(format!(
                    "submodel {} must provide a block-factorised φ prior for this choice of roles",
                    k + 1
                )));
            }
            terms[n].push(PoolTerm {
                source: k,
                coef: c,
                part: PoolPart::Shared,
            });
        }
    }
    Ok(terms)
}
