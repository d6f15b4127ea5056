//! Little-owl integrated population model split into three chained
//! submodels: capture-recapture, population counts and fecundity.
//!
//! Shared parameters are `φ12 = (α0, α2)` (survival) and `φ23 = ρ`
//! (reproductive rate). The count submodel carries `α6` (immigration) and the
//! integer latent population path.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use statrs::function::factorial::{ln_binomial, ln_factorial};

use crate::error::{Error, Result};
use crate::melding::{ChainMeldedModel, PooledPriorSpec, Side, Submodel};
use crate::models::gaussian_chain::log_normal_pdf;
use crate::rng::StreamRng;

pub const OWL_T: usize = 25;
const PRIOR_SD: f64 = 2.0;
const PRIOR_BOUND: f64 = 10.0;
const RHO_MAX: f64 = 10.0;
const INIT_MAX: u64 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Age {
    Juvenile,
    Adult,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sex {
    Female,
    Male,
}

/// The four capture strata in storage order.
pub const STRATA: [(Age, Sex); 4] = [
    (Age::Juvenile, Sex::Female),
    (Age::Juvenile, Sex::Male),
    (Age::Adult, Sex::Female),
    (Age::Adult, Sex::Male),
];

fn stratum_tag(a: Age, s: Sex) -> &'static str {
    match (a, s) {
        (Age::Juvenile, Sex::Female) => "J_F",
        (Age::Juvenile, Sex::Male) => "J_M",
        (Age::Adult, Sex::Female) => "A_F",
        (Age::Adult, Sex::Male) => "A_M",
    }
}

#[inline]
fn inv_logit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `N(0, 2²)` truncated to `[-10, 10]`.
pub fn log_truncated_normal_prior(x: f64) -> f64 {
    if !(-PRIOR_BOUND..=PRIOR_BOUND).contains(&x) {
        return f64::NEG_INFINITY;
    }
    let z = erf(PRIOR_BOUND / (PRIOR_SD * std::f64::consts::SQRT_2));
    log_normal_pdf(x, 0.0, PRIOR_SD) - z.ln()
}

/// `Unif(0, 10)` prior of ρ.
pub fn log_rho_prior(rho: f64) -> f64 {
    if (0.0..=RHO_MAX).contains(&rho) {
        -RHO_MAX.ln()
    } else {
        f64::NEG_INFINITY
    }
}

fn sample_truncated_normal(rng: &mut StreamRng) -> f64 {
    let n = Normal::new(0.0, PRIOR_SD).unwrap();
    loop {
        let x = n.sample(rng);
        if x.abs() <= PRIOR_BOUND {
            return x;
        }
    }
}

#[inline]
fn ln_pois(k: f64, mean: f64) -> f64 {
    if mean == 0.0 {
        return if k == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    k * mean.ln() - mean - ln_factorial(k as u64)
}

#[inline]
fn ln_binom(k: f64, n: f64, p: f64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    if n == 0.0 {
        return 0.0;
    }
    let (k, n) = (k as u64, n as u64);
    let mut v = ln_binomial(n, k);
    if k > 0 {
        v += k as f64 * p.ln();
    }
    if n > k {
        v += (n - k) as f64 * (1.0 - p).ln();
    }
    v
}

#[inline]
fn is_count(v: f64) -> bool {
    v >= 0.0 && v.fract() == 0.0
}

// ---------------------------------------------------------------- data

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FecundityObs {
    /// One-based year.
    pub t: usize,
    /// Breeding females observed.
    pub n_br: u64,
    /// Fledged chicks counted.
    pub n_ch: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OwlData {
    pub t: usize,
    /// `T × (T+1)` matrices in [`STRATA`] order; row `t-1` holds releases at
    /// year `t`, column `u-1` first recaptures at year `u`, the last column
    /// birds never seen again.
    pub capture: Vec<Vec<Vec<u64>>>,
    /// Population counts `y_1..y_T`.
    pub counts: Vec<u64>,
    pub fecundity: Vec<FecundityObs>,
}

impl OwlData {
    pub fn validate(&self) -> Result<()> {
        let t = self.t;
        if t < 2 {
            return Err(Error::model("owl data needs at least two years"));
        }
        if self.capture.len() != 4 {
            return Err(Error::model("owl data needs four capture matrices"));
        }
        for (k, m) in self.capture.iter().enumerate() {
            let (a, s) = STRATA[k];
            let tag = stratum_tag(a, s);
            if m.len() != t || m.iter().any(|r| r.len() != t + 1) {
                return Err(Error::model(format!("capture matrix {tag} must be {t}×{}", t + 1)));
            }
            for (r, row) in m.iter().enumerate() {
                if row[..=r].iter().any(|&c| c != 0) {
                    return Err(Error::model(format!(
                        "capture matrix {tag}: row {} has recaptures at or before release",
                        r + 1
                    )));
                }
            }
        }
        if self.counts.len() != t {
            return Err(Error::model(format!("expected {t} population counts, got {}", self.counts.len())));
        }
        if let Some(f) = self.fecundity.iter().find(|f| f.t == 0 || f.t > t) {
            return Err(Error::model(format!("fecundity year {} outside 1..={t}", f.t)));
        }
        Ok(())
    }

    /// `R_{a,s,t}`: birds released in stratum `k` at year `t` (one-based).
    pub fn releases(&self, k: usize, t: usize) -> u64 {
        self.capture[k][t - 1].iter().sum()
    }

    /// Writes `capture_<a>_<s>.csv`, `counts.csv` and `fecundity.csv`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (k, &(a, s)) in STRATA.iter().enumerate() {
            let mut out = String::new();
            for row in &self.capture[k] {
                let cells: Vec<String> = row.iter().map(u64::to_string).collect();
                out.push_str(&cells.join(","));
                out.push('\n');
            }
            fs::write(dir.join(format!("capture_{}.csv", stratum_tag(a, s))), out)?;
        }
        let mut out = String::from("t,y\n");
        for (i, y) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{y}\n", i + 1));
        }
        fs::write(dir.join("counts.csv"), out)?;
        let mut out = String::from("t,N_br,n_ch\n");
        for f in &self.fecundity {
            out.push_str(&format!("{},{},{}\n", f.t, f.n_br, f.n_ch));
        }
        fs::write(dir.join("fecundity.csv"), out)?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let mut capture = Vec::new();
        for &(a, s) in &STRATA {
            let path = dir.join(format!("capture_{}.csv", stratum_tag(a, s)));
            let rows = read_int_rows(&path, false)?;
            capture.push(rows);
        }
        let t = capture[0].len();
        let path = dir.join("counts.csv");
        let rows = read_int_rows(&path, true)?;
        let mut counts = vec![None; t];
        for r in rows {
            if r.len() != 2 || r[0] == 0 || r[0] as usize > t {
                return Err(Error::malformed(&path, "rows must be `t,y` with 1 ≤ t ≤ T"));
            }
            counts[r[0] as usize - 1] = Some(r[1]);
        }
        let counts = counts
            .into_iter()
            .collect::<Option<Vec<u64>>>()
            .ok_or_else(|| Error::malformed(&path, "every year needs a count"))?;
        let path = dir.join("fecundity.csv");
        let fecundity = read_int_rows(&path, true)?
            .into_iter()
            .map(|r| {
                if r.len() != 3 {
                    return Err(Error::malformed(&path, "rows must be `t,N_br,n_ch`"));
                }
                Ok(FecundityObs {
                    t: r[0] as usize,
                    n_br: r[1],
                    n_ch: r[2],
                })
            })
            .collect::<Result<_>>()?;
        let data = Self {
            t,
            capture,
            counts,
            fecundity,
        };
        data.validate()?;
        Ok(data)
    }
}

fn read_int_rows(path: &Path, header: bool) -> Result<Vec<Vec<u64>>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .skip(usize::from(header))
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split(',')
                .map(|c| {
                    c.trim().parse::<u64>().map_err(|_| {
                        Error::malformed(path, format!("line {}: `{}` is not a count", i + 1 + usize::from(header), c.trim()))
                    })
                })
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------- link and likelihoods

/// Demographic rates implied by the regression parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OwlRates {
    /// Survival `δ_{a,s}` in [`STRATA`] order (constant over time).
    pub delta: [f64; 4],
    /// Recapture `π_{s,u}` indexed `[sex][u]` for `u = 0..=T`; entries below
    /// `u = 2` are unused.
    pub pi: [Vec<f64>; 2],
    /// Immigration rate `η` (constant over time).
    pub eta: f64,
}

/// `alpha5[u-2]` holds `α_{5,u}` for `u = 2..=T`.
pub fn owl_link(alpha0: f64, alpha1: f64, alpha2: f64, alpha4: f64, alpha5: &[f64], alpha6: f64) -> OwlRates {
    let mut delta = [0.0; 4];
    for (k, &(a, s)) in STRATA.iter().enumerate() {
        let mut eta = alpha0;
        if s == Sex::Male {
            eta += alpha1;
        }
        if a == Age::Adult {
            eta += alpha2;
        }
        delta[k] = inv_logit(eta);
    }
    let t = alpha5.len() + 1;
    let pi_for = |male: bool| {
        let mut v = vec![f64::NAN; t + 1];
        for u in 2..=t {
            v[u] = inv_logit(alpha5[u - 2] + if male { alpha4 } else { 0.0 });
        }
        v
    };
    OwlRates {
        delta,
        pi: [pi_for(false), pi_for(true)],
        eta: alpha6.exp(),
    }
}

/// Cell probabilities of first recapture for one stratum with constant
/// survival `delta` and recapture probabilities `pi[u]`. Row `t-1` is the
/// release year `t`; the last column is the never-recaptured complement.
pub fn owl_q(delta: f64, pi: &[f64], t_max: usize) -> Vec<Vec<f64>> {
    let mut q = vec![vec![0.0; t_max + 1]; t_max];
    for t in 1..=t_max {
        let row = &mut q[t - 1];
        let mut carry = delta;
        let mut seen = 0.0;
        for u in t + 1..=t_max {
            row[u - 1] = carry * pi[u];
            seen += row[u - 1];
            carry *= (1.0 - pi[u]) * delta;
        }
        row[t_max] = 1.0 - seen;
        assert!(row[t_max] >= -1e-12, "negative never-recaptured mass");
        row[t_max] = row[t_max].max(0.0);
    }
    q
}

/// Multinomial capture-recapture log-likelihood over all strata, without
/// the multinomial coefficients.
pub fn owl_capture_loglik(data: &OwlData, rates: &OwlRates) -> f64 {
    let t_max = data.t;
    let mut total = 0.0;
    let mut s_cum = vec![0.0; t_max + 1];
    for (k, &(_, sex)) in STRATA.iter().enumerate() {
        let delta = rates.delta[k];
        let pi = &rates.pi[sex as usize];
        let ld = delta.ln();
        // s_cum[u] = Σ_{r=2..=u} ln(1 - π_r)
        for u in 2..=t_max {
            s_cum[u] = s_cum[u - 1] + (1.0 - pi[u]).ln();
        }
        // never-recaptured mass by backward recursion
        let mut chi = vec![1.0; t_max + 1];
        for t in (1..t_max).rev() {
            chi[t] = (1.0 - delta) + delta * (1.0 - pi[t + 1]) * chi[t + 1];
        }
        for t in 1..=t_max {
            let row = &data.capture[k][t - 1];
            for u in t + 1..=t_max {
                let c = row[u - 1];
                if c > 0 {
                    let lq = (u - t) as f64 * ld + pi[u].ln() + s_cum[u - 1] - s_cum[t];
                    total += c as f64 * lq;
                }
            }
            let c = row[t_max];
            if c > 0 {
                if chi[t] <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                total += c as f64 * chi[t].ln();
            }
        }
    }
    total
}

/// Rates entering the count model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountRates {
    /// Juvenile female survival `δ_{J,F}`.
    pub delta_j: f64,
    /// Adult female survival `δ_{A,F}`.
    pub delta_a: f64,
    pub rho: f64,
    pub eta: f64,
}

impl CountRates {
    pub fn from_parameters(alpha0: f64, alpha2: f64, rho: f64, alpha6: f64) -> Self {
        Self {
            delta_j: inv_logit(alpha0),
            delta_a: inv_logit(alpha0 + alpha2),
            rho,
            eta: alpha6.exp(),
        }
    }
}

/// Integer latent population path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountLatents {
    /// Juvenile females `x_{J,t}`, `t = 1..=T`.
    pub x_j: Vec<u64>,
    /// Adult females at year 1.
    pub x_a1: u64,
    /// Surviving adults `surv_t`, `t = 2..=T`.
    pub surv: Vec<u64>,
    /// Immigrants `imm_t`, `t = 2..=T`.
    pub imm: Vec<u64>,
}

impl CountLatents {
    /// Total females `x_t` for one-based `t`.
    pub fn x(&self, t: usize) -> u64 {
        let a = if t == 1 {
            self.x_a1
        } else {
            self.surv[t - 2] + self.imm[t - 2]
        };
        self.x_j[t - 1] + a
    }
}

/// Log prior of the latent path plus the Poisson observation terms.
pub fn owl_count_loglik(y: &[u64], lat: &CountLatents, rates: &CountRates) -> f64 {
    let t_max = y.len();
    if lat.x_j[0] > INIT_MAX || lat.x_a1 > INIT_MAX {
        return f64::NEG_INFINITY;
    }
    let mut total = -2.0 * ((INIT_MAX + 1) as f64).ln();
    for t in 1..=t_max {
        if t > 1 {
            let xp = lat.x(t - 1) as f64;
            total += ln_pois(lat.x_j[t - 1] as f64, xp * rates.rho / 2.0 * rates.delta_j);
            total += ln_binom(lat.surv[t - 2] as f64, xp, rates.delta_a);
            total += ln_pois(lat.imm[t - 2] as f64, xp * rates.eta);
        }
        total += ln_pois(y[t - 1] as f64, lat.x(t) as f64);
        if total == f64::NEG_INFINITY {
            return total;
        }
    }
    total
}

/// Poisson fecundity log-likelihood `n_ch ~ Pois(N_br ρ)`.
pub fn owl_fecundity_loglik(obs: &[FecundityObs], rho: f64) -> f64 {
    obs.iter()
        .map(|f| ln_pois(f.n_ch as f64, f.n_br as f64 * rho))
        .sum()
}

/// Marginal count log-likelihood by forward recursion over `x_t`, with
/// every population size restricted to `0..=x_max`.
pub fn owl_count_marginal_truncated(y: &[u64], rates: &CountRates, x_max: u64) -> f64 {
    let n = x_max as usize + 1;
    let init = 1.0 / ((INIT_MAX + 1) as f64).powi(2);
    let mut alpha = vec![0.0; n];
    for x in 0..n {
        let ways = (0..=x).filter(|&j| j as u64 <= INIT_MAX && (x - j) as u64 <= INIT_MAX).count();
        alpha[x] = ways as f64 * init * ln_pois(y[0] as f64, x as f64).exp();
    }
    for &yt in &y[1..] {
        let mut next = vec![0.0; n];
        for (xp, &a) in alpha.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let xpf = xp as f64;
            for j in 0..n {
                let pj = ln_pois(j as f64, xpf * rates.rho / 2.0 * rates.delta_j).exp();
                for s in 0..n - j {
                    let ps = ln_binom(s as f64, xpf, rates.delta_a).exp();
                    for i in 0..n - j - s {
                        let pi = ln_pois(i as f64, xpf * rates.eta).exp();
                        next[j + s + i] += a * pj * ps * pi;
                    }
                }
            }
        }
        for (x, v) in next.iter_mut().enumerate() {
            *v *= ln_pois(yt as f64, x as f64).exp();
        }
        alpha = next;
    }
    alpha.iter().sum::<f64>().ln()
}

// ---------------------------------------------------------------- named parameters and direct joint

/// Every model quantity by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OwlParams {
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha4: f64,
    /// `α_{5,u}` for `u = 2..=T`.
    pub alpha5: Vec<f64>,
    pub alpha6: f64,
    pub rho: f64,
    pub latents: CountLatents,
}

impl OwlParams {
    /// Reads the parameters from a vector under the melded model's labels.
    pub fn from_labelled(labels: &[String], x: &[f64], t_max: usize) -> Result<Self> {
        let get = |name: &str| -> Result<f64> {
            labels
                .iter()
                .position(|l| l == name)
                .map(|i| x[i])
                .ok_or_else(|| Error::model(format!("missing owl parameter `{name}`")))
        };
        let count = |name: String| -> Result<u64> {
            let v = get(&name)?;
            if is_count(v) {
                Ok(v as u64)
            } else {
                Err(Error::model(format!("`{name}` = {v} is not a count")))
            }
        };
        Ok(Self {
            alpha0: get("alpha0")?,
            alpha1: get("alpha1")?,
            alpha2: get("alpha2")?,
            alpha4: get("alpha4")?,
            alpha5: (2..=t_max).map(|u| get(&format!("alpha5_{u}"))).collect::<Result<_>>()?,
            alpha6: get("alpha6")?,
            rho: get("rho")?,
            latents: CountLatents {
                x_j: (1..=t_max).map(|t| count(format!("xJ_{t}"))).collect::<Result<_>>()?,
                x_a1: count("xA_1".into())?,
                surv: (2..=t_max).map(|t| count(format!("surv_{t}"))).collect::<Result<_>>()?,
                imm: (2..=t_max).map(|t| count(format!("imm_{t}"))).collect::<Result<_>>()?,
            },
        })
    }
}

/// The joint log-density of the single integrated population model.
pub fn ipm_log_joint(data: &OwlData, p: &OwlParams) -> f64 {
    let mut total = 0.0;
    for a in [p.alpha0, p.alpha1, p.alpha2, p.alpha4, p.alpha6]
        .into_iter()
        .chain(p.alpha5.iter().copied())
    {
        total += log_truncated_normal_prior(a);
    }
    total += log_rho_prior(p.rho);
    if total == f64::NEG_INFINITY {
        return total;
    }
    let rates = owl_link(p.alpha0, p.alpha1, p.alpha2, p.alpha4, &p.alpha5, p.alpha6);
    total += owl_capture_loglik(data, &rates);
    let cr = CountRates::from_parameters(p.alpha0, p.alpha2, p.rho, p.alpha6);
    total += owl_count_loglik(&data.counts, &p.latents, &cr);
    total + owl_fecundity_loglik(&data.fecundity, p.rho)
}

// ---------------------------------------------------------------- submodels

/// Submodel 1: capture-recapture. `φ = (α0, α2)`, `ψ = (α1, α4, α5_2..α5_T)`.
#[derive(Debug, Clone)]
struct CaptureSubmodel {
    data: Arc<OwlData>,
}

impl CaptureSubmodel {
    fn rates(&self, phi: &[f64], psi: &[f64]) -> OwlRates {
        owl_link(phi[0], psi[0], phi[1], psi[1], &psi[2..], 0.0)
    }
}

impl Submodel for CaptureSubmodel {
    fn dim_phi_left(&self) -> usize {
        0
    }

    fn dim_phi_right(&self) -> usize {
        2
    }

    fn dim_psi(&self) -> usize {
        self.data.t + 1
    }

    fn right_block_labels(&self) -> Vec<String> {
        vec!["alpha0".into(), "alpha2".into()]
    }

    fn psi_labels(&self) -> Vec<String> {
        let mut l = vec!["alpha1".to_string(), "alpha4".to_string()];
        l.extend((2..=self.data.t).map(|u| format!("alpha5_{u}")));
        l
    }

    fn log_phi_prior(&self, phi: &[f64]) -> f64 {
        log_truncated_normal_prior(phi[0]) + log_truncated_normal_prior(phi[1])
    }

    fn log_phi_prior_block(&self, side: Side, block: &[f64]) -> Option<f64> {
        match side {
            Side::Left => None,
            Side::Right => Some(self.log_phi_prior(block)),
        }
    }

    fn log_psi_prior(&self, _phi: &[f64], psi: &[f64]) -> f64 {
        psi.iter().map(|&a| log_truncated_normal_prior(a)).sum()
    }

    fn log_likelihood(&self, phi: &[f64], psi: &[f64]) -> f64 {
        owl_capture_loglik(&self.data, &self.rates(phi, psi))
    }

    fn sample_prior(&self, rng: &mut StreamRng) -> (Vec<f64>, Vec<f64>) {
        let phi = vec![sample_truncated_normal(rng), sample_truncated_normal(rng)];
        let psi = self.sample_psi_prior(&phi, rng);
        (phi, psi)
    }

    fn sample_psi_prior(&self, _phi: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        (0..self.dim_psi()).map(|_| sample_truncated_normal(rng)).collect()
    }

    fn psi_prior_mean(&self, _phi: &[f64]) -> Vec<f64> {
        vec![0.0; self.dim_psi()]
    }

    fn initial_psi(&self, _phi: &[f64]) -> Option<Vec<f64>> {
        Some(vec![0.0; self.dim_psi()])
    }
}

/// Submodel 2: population counts. `φ = (α0, α2, ρ)`,
/// `ψ = (α6, xJ_1..xJ_T, xA_1, surv_2..surv_T, imm_2..imm_T)`.
#[derive(Debug, Clone)]
struct CountSubmodel {
    data: Arc<OwlData>,
}

/// Views a count-submodel ψ slice by year.
struct YearView<'a> {
    psi: &'a [f64],
    t: usize,
}

impl YearView<'_> {
    #[inline]
    fn xj(&self, t: usize) -> f64 {
        self.psi[t]
    }

    #[inline]
    fn surv(&self, t: usize) -> f64 {
        self.psi[self.t + t]
    }

    #[inline]
    fn imm(&self, t: usize) -> f64 {
        self.psi[2 * self.t - 1 + t]
    }

    #[inline]
    fn xa(&self, t: usize) -> f64 {
        if t == 1 {
            self.psi[self.t + 1]
        } else {
            self.surv(t) + self.imm(t)
        }
    }

    #[inline]
    fn x(&self, t: usize) -> f64 {
        self.xj(t) + self.xa(t)
    }
}

impl CountSubmodel {
    fn t(&self) -> usize {
        self.data.t
    }

    /// Year a latent coordinate `j ≥ 1` belongs to.
    fn year_of(&self, j: usize) -> usize {
        let t = self.t();
        match j {
            j if j <= t => j,
            j if j == t + 1 => 1,
            j if j <= 2 * t => j - t,
            j => j + 1 - 2 * t,
        }
    }

    fn rates(phi: &[f64], alpha6: f64) -> CountRates {
        CountRates::from_parameters(phi[0], phi[1], phi[2], alpha6)
    }

    /// Latent-path prior terms of year `t`.
    fn year_prior(&self, path: &YearView, r: &CountRates, t: usize) -> f64 {
        if t == 1 {
            let (a, b) = (path.xj(1), path.xa(1));
            if !is_count(a) || !is_count(b) || a > INIT_MAX as f64 || b > INIT_MAX as f64 {
                return f64::NEG_INFINITY;
            }
            return -2.0 * ((INIT_MAX + 1) as f64).ln();
        }
        let (j, s, i) = (path.xj(t), path.surv(t), path.imm(t));
        if !is_count(j) || !is_count(s) || !is_count(i) {
            return f64::NEG_INFINITY;
        }
        let xp = path.x(t - 1);
        ln_pois(j, xp * r.rho / 2.0 * r.delta_j) + ln_binom(s, xp, r.delta_a) + ln_pois(i, xp * r.eta)
    }

    /// Prior and observation terms of year `t`.
    fn year_term(&self, path: &YearView, r: &CountRates, t: usize) -> f64 {
        let p = self.year_prior(path, r, t);
        if p == f64::NEG_INFINITY {
            return p;
        }
        p + ln_pois(self.data.counts[t - 1] as f64, path.x(t))
    }

    fn path_prior(&self, phi: &[f64], psi: &[f64]) -> f64 {
        let path = YearView { psi, t: self.t() };
        let r = Self::rates(phi, psi[0]);
        let mut total = 0.0;
        for t in 1..=self.t() {
            total += self.year_prior(&path, &r, t);
            if total == f64::NEG_INFINITY {
                return total;
            }
        }
        total
    }

    fn latent_terms(&self, phi: &[f64], psi: &[f64]) -> f64 {
        let path = YearView { psi, t: self.t() };
        let r = Self::rates(phi, psi[0]);
        let mut total = 0.0;
        for t in 1..=self.t() {
            total += self.year_term(&path, &r, t);
            if total == f64::NEG_INFINITY {
                return total;
            }
        }
        total
    }

    fn observation_terms(&self, psi: &[f64]) -> f64 {
        let path = YearView { psi, t: self.t() };
        (1..=self.t())
            .map(|t| ln_pois(self.data.counts[t - 1] as f64, path.x(t)))
            .sum()
    }

    /// Shares of next year's females coming from births, survival and
    /// immigration.
    fn shares(r: &CountRates) -> (f64, f64, f64) {
        let (a, b, c) = (r.rho / 2.0 * r.delta_j, r.delta_a, r.eta);
        let s = a + b + c;
        (a / s, b / s, c / s)
    }

    fn target_size(&self, t: usize) -> f64 {
        self.data.counts[t - 1] as f64 + 0.5
    }

    /// Proposal factor of year `t`.
    fn proposal_term(&self, path: &YearView, r: &CountRates, t: usize) -> f64 {
        let (wj, ws, wi) = Self::shares(r);
        let size = self.target_size(t);
        if t == 1 {
            let (a, b) = (path.xj(1), path.xa(1));
            if !is_count(a) || !is_count(b) {
                return f64::NEG_INFINITY;
            }
            let n = INIT_MAX as f64;
            return ln_binom(a, n, init_p(size * wj)) + ln_binom(b, n, init_p(size * (1.0 - wj)));
        }
        let (j, s, i) = (path.xj(t), path.surv(t), path.imm(t));
        if !is_count(j) || !is_count(s) || !is_count(i) {
            return f64::NEG_INFINITY;
        }
        let xp = path.x(t - 1);
        if xp == 0.0 {
            return if j + s + i == 0.0 { 0.0 } else { f64::NEG_INFINITY };
        }
        ln_pois(j, size * wj) + ln_binom(s, xp, surv_p(size * ws, xp)) + ln_pois(i, size * wi)
    }
}

fn init_p(mean: f64) -> f64 {
    (mean / INIT_MAX as f64).clamp(1e-3, 0.999)
}

fn surv_p(mean: f64, n: f64) -> f64 {
    (mean / n).clamp(1e-3, 0.999)
}

/// Caps the mean of simulated transitions so prior draws stay finite in
/// explosive regions of the prior.
const SIM_MEAN_CAP: f64 = 1e7;

fn draw_pois(mean: f64, rng: &mut StreamRng) -> f64 {
    let mean = mean.min(SIM_MEAN_CAP);
    if mean <= 0.0 {
        0.0
    } else {
        Poisson::new(mean).unwrap().sample(rng)
    }
}

fn draw_binom(n: f64, p: f64, rng: &mut StreamRng) -> f64 {
    Binomial::new(n as u64, p).unwrap().sample(rng) as f64
}

impl Submodel for CountSubmodel {
    fn dim_phi_left(&self) -> usize {
        2
    }

    fn dim_phi_right(&self) -> usize {
        1
    }

    fn dim_psi(&self) -> usize {
        3 * self.t()
    }

    fn right_block_labels(&self) -> Vec<String> {
        vec!["rho".into()]
    }

    fn psi_labels(&self) -> Vec<String> {
        let t = self.t();
        let mut l = vec!["alpha6".to_string()];
        l.extend((1..=t).map(|k| format!("xJ_{k}")));
        l.push("xA_1".into());
        l.extend((2..=t).map(|k| format!("surv_{k}")));
        l.extend((2..=t).map(|k| format!("imm_{k}")));
        l
    }

    fn psi_discrete_mask(&self) -> Vec<bool> {
        let mut m = vec![true; self.dim_psi()];
        m[0] = false;
        m
    }

    fn log_phi_prior(&self, phi: &[f64]) -> f64 {
        log_truncated_normal_prior(phi[0]) + log_truncated_normal_prior(phi[1]) + log_rho_prior(phi[2])
    }

    fn log_phi_prior_block(&self, side: Side, block: &[f64]) -> Option<f64> {
        Some(match side {
            Side::Left => log_truncated_normal_prior(block[0]) + log_truncated_normal_prior(block[1]),
            Side::Right => log_rho_prior(block[0]),
        })
    }

    fn log_psi_prior(&self, phi: &[f64], psi: &[f64]) -> f64 {
        let a = log_truncated_normal_prior(psi[0]);
        if a == f64::NEG_INFINITY {
            return a;
        }
        a + self.path_prior(phi, psi)
    }

    fn log_likelihood(&self, _phi: &[f64], psi: &[f64]) -> f64 {
        self.observation_terms(psi)
    }

    fn log_joint(&self, phi: &[f64], psi: &[f64]) -> f64 {
        let a = self.log_phi_prior(phi) + log_truncated_normal_prior(psi[0]);
        if a == f64::NEG_INFINITY {
            return a;
        }
        a + self.latent_terms(phi, psi)
    }

    fn log_conditional_local(&self, phi: &[f64], psi: &[f64], j: usize) -> f64 {
        if j == 0 {
            let a = log_truncated_normal_prior(psi[0]);
            if a == f64::NEG_INFINITY {
                return a;
            }
            return a + self.latent_terms(phi, psi);
        }
        let t = self.year_of(j);
        let path = YearView { psi, t: self.t() };
        let r = Self::rates(phi, psi[0]);
        let mut v = self.year_term(&path, &r, t);
        if t < self.t() && v != f64::NEG_INFINITY {
            v += self.year_term(&path, &r, t + 1);
        }
        v
    }

    fn sample_prior(&self, rng: &mut StreamRng) -> (Vec<f64>, Vec<f64>) {
        let phi = vec![
            sample_truncated_normal(rng),
            sample_truncated_normal(rng),
            rng.random_range(0.0..RHO_MAX),
        ];
        let psi = self.sample_psi_prior(&phi, rng);
        (phi, psi)
    }

    fn sample_psi_prior(&self, phi: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        let t_max = self.t();
        let mut psi = vec![0.0; self.dim_psi()];
        psi[0] = sample_truncated_normal(rng);
        let r = Self::rates(phi, psi[0]);
        psi[1] = rng.random_range(0..=INIT_MAX) as f64;
        psi[t_max + 1] = rng.random_range(0..=INIT_MAX) as f64;
        let mut xp = psi[1] + psi[t_max + 1];
        for t in 2..=t_max {
            let j = draw_pois(xp * r.rho / 2.0 * r.delta_j, rng);
            let s = draw_binom(xp, r.delta_a, rng);
            let i = draw_pois(xp * r.eta, rng);
            psi[t] = j;
            psi[t_max + t] = s;
            psi[2 * t_max - 1 + t] = i;
            xp = j + s + i;
        }
        psi
    }

    /// Rounded expected path with `α6` at its prior mean.
    fn psi_prior_mean(&self, phi: &[f64]) -> Vec<f64> {
        let t_max = self.t();
        let mut psi = vec![0.0; self.dim_psi()];
        let r = Self::rates(phi, 0.0);
        let half = (INIT_MAX / 2) as f64;
        psi[1] = half;
        psi[t_max + 1] = half;
        let mut xp = 2.0 * half;
        for t in 2..=t_max {
            let j = (xp * r.rho / 2.0 * r.delta_j).min(SIM_MEAN_CAP).round();
            let s = (xp * r.delta_a).round();
            let i = (xp * r.eta).min(SIM_MEAN_CAP).round();
            psi[t] = j;
            psi[t_max + t] = s;
            psi[2 * t_max - 1 + t] = i;
            xp = j + s + i;
        }
        psi
    }

    /// Data-informed proposal: `α6` from its prior, then each year's
    /// females are split among births, survivors and immigrants in
    /// proportion to their expected rates, centred on the observed count.
    fn sample_psi_proposal(&self, phi: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        let t_max = self.t();
        let mut psi = vec![0.0; self.dim_psi()];
        psi[0] = sample_truncated_normal(rng);
        let r = Self::rates(phi, psi[0]);
        let (wj, ws, wi) = Self::shares(&r);
        let size = self.target_size(1);
        let n = INIT_MAX as f64;
        psi[1] = draw_binom(n, init_p(size * wj), rng);
        psi[t_max + 1] = draw_binom(n, init_p(size * (1.0 - wj)), rng);
        let mut xp = psi[1] + psi[t_max + 1];
        for t in 2..=t_max {
            let (j, s, i) = if xp == 0.0 {
                (0.0, 0.0, 0.0)
            } else {
                let size = self.target_size(t);
                (
                    draw_pois(size * wj, rng),
                    draw_binom(xp, surv_p(size * ws, xp), rng),
                    draw_pois(size * wi, rng),
                )
            };
            psi[t] = j;
            psi[t_max + t] = s;
            psi[2 * t_max - 1 + t] = i;
            xp = j + s + i;
        }
        psi
    }

    fn log_psi_proposal(&self, phi: &[f64], psi: &[f64]) -> f64 {
        let a = log_truncated_normal_prior(psi[0]);
        if a == f64::NEG_INFINITY {
            return a;
        }
        let path = YearView { psi, t: self.t() };
        let r = Self::rates(phi, psi[0]);
        let mut total = a;
        for t in 1..=self.t() {
            total += self.proposal_term(&path, &r, t);
            if total == f64::NEG_INFINITY {
                return total;
            }
        }
        total
    }

    fn log_psi_proposal_local(&self, phi: &[f64], psi: &[f64], j: usize) -> f64 {
        if j == 0 {
            return self.log_psi_proposal(phi, psi);
        }
        let t = self.year_of(j);
        let path = YearView { psi, t: self.t() };
        let r = Self::rates(phi, psi[0]);
        let mut v = self.proposal_term(&path, &r, t);
        if t < self.t() && v != f64::NEG_INFINITY {
            v += self.proposal_term(&path, &r, t + 1);
        }
        v
    }

    /// A feasible path tracking the observed counts.
    fn initial_psi(&self, phi: &[f64]) -> Option<Vec<f64>> {
        let t_max = self.t();
        let mut psi = vec![0.0; self.dim_psi()];
        let r = Self::rates(phi, 0.0);
        let (wj, ws, _) = Self::shares(&r);
        let total = |t: usize| (self.data.counts[t - 1] as f64).max(1.0);
        let x1 = total(1).min(2.0 * INIT_MAX as f64);
        let j1 = (x1 * wj).round().min(INIT_MAX as f64);
        psi[1] = j1;
        psi[t_max + 1] = (x1 - j1).min(INIT_MAX as f64);
        let mut xp = psi[1] + psi[t_max + 1];
        for t in 2..=t_max {
            let x = total(t);
            let s = (x * ws).round().min(xp);
            let j = (x * wj).round().min(x - s);
            let i = x - s - j;
            psi[t] = j;
            psi[t_max + t] = s;
            psi[2 * t_max - 1 + t] = i;
            xp = x;
        }
        Some(psi)
    }
}

/// Submodel 3: fecundity. `φ = ρ`, no own parameters.
#[derive(Debug, Clone)]
struct FecunditySubmodel {
    data: Arc<OwlData>,
}

impl Submodel for FecunditySubmodel {
    fn dim_phi_left(&self) -> usize {
        1
    }

    fn dim_phi_right(&self) -> usize {
        0
    }

    fn dim_psi(&self) -> usize {
        0
    }

    fn right_block_labels(&self) -> Vec<String> {
        Vec::new()
    }

    fn psi_labels(&self) -> Vec<String> {
        Vec::new()
    }

    fn log_phi_prior(&self, phi: &[f64]) -> f64 {
        log_rho_prior(phi[0])
    }

    fn log_phi_prior_block(&self, side: Side, block: &[f64]) -> Option<f64> {
        match side {
            Side::Left => Some(log_rho_prior(block[0])),
            Side::Right => None,
        }
    }

    fn log_psi_prior(&self, _phi: &[f64], _psi: &[f64]) -> f64 {
        0.0
    }

    fn log_likelihood(&self, phi: &[f64], _psi: &[f64]) -> f64 {
        owl_fecundity_loglik(&self.data.fecundity, phi[0])
    }

    fn sample_prior(&self, rng: &mut StreamRng) -> (Vec<f64>, Vec<f64>) {
        (vec![rng.random_range(0.0..RHO_MAX)], Vec::new())
    }

    fn sample_psi_prior(&self, _phi: &[f64], _rng: &mut StreamRng) -> Vec<f64> {
        Vec::new()
    }

    fn psi_prior_mean(&self, _phi: &[f64]) -> Vec<f64> {
        Vec::new()
    }

    fn initial_psi(&self, _phi: &[f64]) -> Option<Vec<f64>> {
        Some(Vec::new())
    }
}

/// The three owl submodels in chain order.
pub fn owl_submodels(data: OwlData) -> Result<Vec<Arc<dyn Submodel>>> {
    data.validate()?;
    let data = Arc::new(data);
    Ok(vec![
        Arc::new(CaptureSubmodel { data: data.clone() }),
        Arc::new(CountSubmodel { data: data.clone() }),
        Arc::new(FecunditySubmodel { data }),
    ])
}

/// Melded owl model under log pooling with weights `lambda`.
pub fn owl_build(data: OwlData, lambda: Vec<f64>) -> Result<ChainMeldedModel> {
    if lambda.len() != 3 {
        return Err(Error::config(format!("owl model needs 3 pooling weights, got {}", lambda.len())));
    }
    ChainMeldedModel::new(owl_submodels(data)?, PooledPriorSpec::log_pooling(lambda)?)
}

// ---------------------------------------------------------------- simulation

/// Generating parameters and design of a synthetic owl dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OwlTruth {
    pub seed: u64,
    pub t: usize,
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha4: f64,
    /// `α_{5,u}` for `u = 2..=T`.
    pub alpha5: Vec<f64>,
    pub alpha6: f64,
    pub rho: f64,
    pub x_j1: u64,
    pub x_a1: u64,
    /// Birds released per stratum in each year `1..T`.
    pub releases: u64,
    /// Breeding females monitored each year.
    pub n_breeding: u64,
}

impl Default for OwlTruth {
    fn default() -> Self {
        Self {
            seed: 2024,
            t: OWL_T,
            alpha0: -1.0,
            alpha1: 0.2,
            alpha2: 1.2,
            alpha4: -0.3,
            alpha5: (2..=OWL_T).map(|u| 0.3 * (u as f64).sin()).collect(),
            alpha6: -1.6,
            rho: 1.8,
            x_j1: 8,
            x_a1: 22,
            releases: 10,
            n_breeding: 10,
        }
    }
}

impl OwlTruth {
    pub fn validate(&self) -> Result<()> {
        if self.t < 2 {
            return Err(Error::config("t must be at least 2"));
        }
        if self.alpha5.len() != self.t - 1 {
            return Err(Error::config(format!(
                "alpha5 needs {} entries (years 2..={}), got {}",
                self.t - 1,
                self.t,
                self.alpha5.len()
            )));
        }
        if !(0.0..=RHO_MAX).contains(&self.rho) {
            return Err(Error::config("rho must lie in [0, 10]"));
        }
        if self.x_j1 > INIT_MAX || self.x_a1 > INIT_MAX {
            return Err(Error::config("initial population sizes must be at most 50"));
        }
        Ok(())
    }
}

/// A simulated dataset and the latent path that generated it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OwlSimulation {
    pub truth: OwlTruth,
    pub latents: CountLatents,
}

/// Simulates capture histories bird by bird, the female population path and
/// the fecundity counts.
pub fn simulate_owl(truth: &OwlTruth, rng: &mut StreamRng) -> Result<(OwlData, CountLatents)> {
    truth.validate()?;
    let t_max = truth.t;
    let rates = owl_link(truth.alpha0, truth.alpha1, truth.alpha2, truth.alpha4, &truth.alpha5, truth.alpha6);
    let mut capture = Vec::with_capacity(4);
    for (k, &(_, sex)) in STRATA.iter().enumerate() {
        let mut m = vec![vec![0u64; t_max + 1]; t_max];
        let delta = rates.delta[k];
        let pi = &rates.pi[sex as usize];
        for t in 1..t_max {
            for _ in 0..truth.releases {
                let mut cell = t_max;
                for u in t + 1..=t_max {
                    if !rng.random_bool(delta) {
                        break;
                    }
                    if rng.random_bool(pi[u]) {
                        cell = u - 1;
                        break;
                    }
                }
                m[t - 1][cell] += 1;
            }
        }
        capture.push(m);
    }

    let cr = CountRates::from_parameters(truth.alpha0, truth.alpha2, truth.rho, truth.alpha6);
    let mut lat = CountLatents {
        x_j: vec![truth.x_j1],
        x_a1: truth.x_a1,
        surv: Vec::new(),
        imm: Vec::new(),
    };
    let mut xp = (truth.x_j1 + truth.x_a1) as f64;
    for _ in 2..=t_max {
        let j = draw_pois(xp * cr.rho / 2.0 * cr.delta_j, rng);
        let s = draw_binom(xp, cr.delta_a, rng);
        let i = draw_pois(xp * cr.eta, rng);
        lat.x_j.push(j as u64);
        lat.surv.push(s as u64);
        lat.imm.push(i as u64);
        xp = j + s + i;
    }
    let counts = (1..=t_max).map(|t| draw_pois(lat.x(t) as f64, rng) as u64).collect();
    let fecundity = (1..=t_max)
        .map(|t| FecundityObs {
            t,
            n_br: truth.n_breeding,
            n_ch: draw_pois(truth.n_breeding as f64 * truth.rho, rng) as u64,
        })
        .collect();
    let data = OwlData {
        t: t_max,
        capture,
        counts,
        fecundity,
    };
    data.validate()?;
    Ok((data, lat))
}

/// Simulates a dataset and writes it with a `truth.json` next to it.
pub fn simulate_owl_to_dir(truth: &OwlTruth, dir: &Path) -> Result<OwlData> {
    let mut rng = crate::rng::Streams::new(truth.seed, 0).stream(crate::rng::Purpose::Data, 0, 0);
    let (data, latents) = simulate_owl(truth, &mut rng)?;
    data.write_dir(dir)?;
    let sim = OwlSimulation {
        truth: truth.clone(),
        latents,
    };
    fs::write(dir.join("truth.json"), serde_json::to_string_pretty(&sim)?)?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, Streams};

    fn rng(seed: u64) -> StreamRng {
        Streams::new(seed, 0).stream(Purpose::Data, 0, 0)
    }

    fn data() -> OwlData {
        simulate_owl(&OwlTruth::default(), &mut rng(5)).unwrap().0
    }

    #[test]
    fn link_examples() {
        let r = owl_link(0.0, 0.0, 0.0, 0.0, &[0.0; 24], 0.0);
        assert!(r.delta.iter().all(|&d| d == 0.5));
        assert_eq!(r.eta, 1.0);
        assert!(r.pi[0][2..].iter().chain(&r.pi[1][2..]).all(|&p| p == 0.5));
        let r = owl_link(0.3, -0.1, 0.4, 0.0, &[0.0; 24], 0.0);
        assert!((r.delta[3] - 1.0 / (1.0 + (-0.6f64).exp())).abs() < 1e-15);
        let r = owl_link(0.0, 0.0, 60.0, 0.0, &[0.0; 24], 0.0);
        assert!(r.delta[2] > 1.0 - 1e-15);
    }

    #[test]
    fn q_examples() {
        let pi = vec![0.5; 26];
        let q = owl_q(0.5, &pi, 25);
        assert!((q[0][2] - 0.0625).abs() < 1e-15);
        for t in 1..25 {
            assert!((q[t - 1][t] - 0.25).abs() < 1e-15);
            assert!(q[t - 1][..t].iter().all(|&v| v == 0.0));
        }
        assert_eq!(q[24][25], 1.0);
    }

    #[test]
    fn capture_loglik_single_cell() {
        let mut d = data();
        for m in &mut d.capture {
            for row in m.iter_mut() {
                row.iter_mut().for_each(|c| *c = 0);
            }
        }
        let r = owl_link(0.0, 0.0, 0.0, 0.0, &[0.0; 24], 0.0);
        assert_eq!(owl_capture_loglik(&d, &r), 0.0);
        d.capture[0][3][4] = 1;
        assert!((owl_capture_loglik(&d, &r) - 0.25f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn capture_loglik_matches_q_matrix() {
        let d = data();
        let mut g = rng(9);
        for _ in 0..10 {
            let a5: Vec<f64> = (0..24).map(|_| g.random_range(-2.0..2.0)).collect();
            let r = owl_link(g.random_range(-2.0..2.0), 0.3, 0.5, -0.4, &a5, 0.0);
            let mut direct = 0.0;
            for (k, &(_, s)) in STRATA.iter().enumerate() {
                let q = owl_q(r.delta[k], &r.pi[s as usize], 25);
                for t in 0..25 {
                    for u in 0..26 {
                        let c = d.capture[k][t][u];
                        if c > 0 {
                            direct += c as f64 * q[t][u].ln();
                        }
                    }
                }
            }
            let fast = owl_capture_loglik(&d, &r);
            assert!((direct - fast).abs() < 1e-9 * direct.abs(), "{direct} vs {fast}");
        }
    }

    #[test]
    fn count_and_fecundity_examples() {
        let zero = CountLatents {
            x_j: vec![0; 3],
            x_a1: 0,
            surv: vec![0; 2],
            imm: vec![0; 2],
        };
        let r = CountRates {
            delta_j: 0.5,
            delta_a: 0.5,
            rho: 1.0,
            eta: 0.0,
        };
        let init = -2.0 * 51f64.ln();
        assert!((owl_count_loglik(&[0, 0, 0], &zero, &r) - init).abs() < 1e-14);
        let mut bad = zero.clone();
        bad.x_j[2] = 1;
        assert_eq!(owl_count_loglik(&[0, 0, 0], &bad, &r), f64::NEG_INFINITY);
        // x1 = 2, ρ = 1, δ_J = 0.5: x_{J,2} ~ Pois(0.5)
        assert!((ln_pois(1.0, 2.0 * 1.0 / 2.0 * 0.5) - (0.5f64 * (-0.5f64).exp()).ln()).abs() < 1e-15);
        let obs = [FecundityObs { t: 1, n_br: 10, n_ch: 5 }];
        let want = 5.0 * 5f64.ln() - 5.0 - 120f64.ln();
        assert!((owl_fecundity_loglik(&obs, 0.5) - want).abs() < 1e-13);
        assert_eq!(owl_fecundity_loglik(&[FecundityObs { t: 1, n_br: 0, n_ch: 0 }], 3.0), 0.0);
        assert_eq!(owl_fecundity_loglik(&obs, 0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn priors_have_stated_support() {
        assert_eq!(log_truncated_normal_prior(11.0), f64::NEG_INFINITY);
        assert!(log_truncated_normal_prior(9.9).is_finite());
        assert_eq!(log_rho_prior(3.0), log_rho_prior(7.0));
        assert_eq!(log_rho_prior(-0.1), f64::NEG_INFINITY);
        assert_eq!(log_rho_prior(10.1), f64::NEG_INFINITY);
    }

    #[test]
    fn count_submodel_agrees_with_named_path() {
        let d = data();
        let subs = owl_submodels(d.clone()).unwrap();
        let count = &subs[1];
        let mut g = rng(3);
        let phi = [-1.0, 1.2, 1.8];
        for _ in 0..20 {
            let psi = count.sample_psi_proposal(&phi, &mut g);
            let labels = count.psi_labels();
            let mut all_labels = vec!["alpha0".to_string(), "alpha2".into(), "rho".into()];
            all_labels.extend(labels);
            let mut x = phi.to_vec();
            x.extend(&psi);
            // fill the parameters the count model does not see
            for name in ["alpha1", "alpha4"] {
                all_labels.push(name.into());
                x.push(0.0);
            }
            for u in 2..=25 {
                all_labels.push(format!("alpha5_{u}"));
                x.push(0.0);
            }
            let p = OwlParams::from_labelled(&all_labels, &x, 25).unwrap();
            let rates = CountRates::from_parameters(p.alpha0, p.alpha2, p.rho, p.alpha6);
            let named = owl_count_loglik(&d.counts, &p.latents, &rates);
            let direct = count.log_psi_prior(&phi, &psi) + count.log_likelihood(&phi, &psi)
                - log_truncated_normal_prior(psi[0]);
            assert!((named - direct).abs() < 1e-9, "{named} vs {direct}");
        }
    }

    #[test]
    fn local_evaluations_track_full_differences() {
        let d = data();
        let subs = owl_submodels(d).unwrap();
        let count = &subs[1];
        let mut g = rng(4);
        let phi = [-0.9, 1.1, 2.0];
        let psi = count.initial_psi(&phi).unwrap();
        assert!(count.log_joint(&phi, &psi).is_finite());
        for _ in 0..200 {
            let j = g.random_range(1..75);
            let mut b = psi.clone();
            b[j] += if g.random_bool(0.5) { 1.0 } else { -1.0 };
            let full = |p: &[f64]| count.log_psi_prior(&phi, p) + count.log_likelihood(&phi, p);
            let dl = count.log_conditional_local(&phi, &b, j) - count.log_conditional_local(&phi, &psi, j);
            let df = full(&b) - full(&psi);
            if df.is_finite() {
                assert!((dl - df).abs() < 1e-9, "j={j}: {dl} vs {df}");
            } else {
                assert_eq!(dl, f64::NEG_INFINITY);
            }
            let ql = count.log_psi_proposal_local(&phi, &b, j) - count.log_psi_proposal_local(&phi, &psi, j);
            let qf = count.log_psi_proposal(&phi, &b) - count.log_psi_proposal(&phi, &psi);
            if qf.is_finite() {
                assert!((ql - qf).abs() < 1e-9, "j={j}: {ql} vs {qf}");
            }
        }
    }

    #[test]
    fn proposal_draws_are_in_support() {
        let d = data();
        let subs = owl_submodels(d).unwrap();
        let count = &subs[1];
        let mut g = rng(8);
        for _ in 0..200 {
            let (phi, _) = count.sample_prior(&mut g);
            let psi = count.sample_psi_proposal(&phi, &mut g);
            assert!(count.log_psi_proposal(&phi, &psi).is_finite());
            assert!(count.log_psi_prior(&phi, &psi) > f64::NEG_INFINITY);
        }
    }

    #[test]
    fn data_round_trip() {
        let d = data();
        let dir = tempfile::tempdir().unwrap();
        d.write_dir(dir.path()).unwrap();
        assert_eq!(OwlData::read_dir(dir.path()).unwrap(), d);
        fs::write(dir.path().join("counts.csv"), "t,y\n1,x\n").unwrap();
        assert!(matches!(OwlData::read_dir(dir.path()), Err(Error::Malformed { .. })));
    }

    #[test]
    fn bad_shapes_are_rejected() {
        let mut d = data();
        d.capture[2][4][2] = 1;
        assert!(d.validate().is_err());
        let mut d = data();
        d.counts.pop();
        assert!(d.validate().is_err());
        assert!(owl_build(data(), vec![0.5, 0.5]).is_err());
    }
}
