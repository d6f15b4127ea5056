//! Conjugate Gaussian chain with closed-form melded posterior.
//!
//! Submodel `m` observes `y ~ N(φ_{m-1,m} + φ_{m,m+1} + ψ_m, σ_m²)` (end
//! submodels see a single block). Each block has a `N(μ_b, s_b²)` prior in
//! both submodels that share it, and `ψ_m ~ N(μ_ψ, s_ψ²)` independently.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::melding::{ChainMeldedModel, PooledPriorSpec, Side, Submodel};
use crate::rng::StreamRng;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
pub(crate) fn log_normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmodelData {
    pub y: Vec<f64>,
    pub sigma: f64,
}

impl SubmodelData {
    pub fn new(y: Vec<f64>, sigma: f64) -> Self {
        Self { y, sigma }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianChainSpec {
    /// One entry per shared block (`M-1`).
    pub phi_prior_mean: Vec<f64>,
    pub phi_prior_sd: Vec<f64>,
    /// One entry per submodel (`M`).
    pub psi_prior_mean: Vec<f64>,
    pub psi_prior_sd: Vec<f64>,
    pub data: Vec<SubmodelData>,
}

/// Closed-form melded posterior in the global layout (blocks, then ψ).
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianPosterior {
    pub fn sd(&self, k: usize) -> f64 {
        self.cov[(k, k)].sqrt()
    }
}

impl GaussianChainSpec {
    pub fn m(&self) -> usize {
        self.data.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.m();
        if m < 3 {
            return Err(Error::model(format!("gaussian chain needs M >= 3, got {m}")));
        }
        let check = |name: &str, v: &[f64], n: usize| -> Result<()> {
            if v.len() != n {
                return Err(Error::model(format!("{name} has {} entries, expected {n}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::model(format!("{name} contains a non-finite value")));
            }
            Ok(())
        };
        check("phi_prior_mean", &self.phi_prior_mean, m - 1)?;
        check("phi_prior_sd", &self.phi_prior_sd, m - 1)?;
        check("psi_prior_mean", &self.psi_prior_mean, m)?;
        check("psi_prior_sd", &self.psi_prior_sd, m)?;
        if self.phi_prior_sd.iter().chain(&self.psi_prior_sd).any(|s| *s <= 0.0) {
            return Err(Error::model("prior standard deviations must be positive"));
        }
        for (k, d) in self.data.iter().enumerate() {
            if !(d.sigma > 0.0 && d.sigma.is_finite()) {
                return Err(Error::model(format!("sigma of submodel {} must be positive", k + 1)));
            }
            if d.y.iter().any(|x| !x.is_finite()) {
                return Err(Error::model(format!("data of submodel {} contain a non-finite value", k + 1)));
            }
        }
        Ok(())
    }

    pub fn submodels(&self) -> Vec<Arc<dyn Submodel>> {
        let m = self.m();
        (0..m)
            .map(|k| {
                let left = (k > 0).then(|| (self.phi_prior_mean[k - 1], self.phi_prior_sd[k - 1]));
                let right = (k + 1 < m).then(|| (self.phi_prior_mean[k], self.phi_prior_sd[k]));
                Arc::new(GaussianSubmodel {
                    index: k,
                    left,
                    right,
                    psi_prior: (self.psi_prior_mean[k], self.psi_prior_sd[k]),
                    data: self.data[k].clone(),
                }) as Arc<dyn Submodel>
            })
            .collect()
    }

    pub fn build(&self, pooling: PooledPriorSpec) -> Result<ChainMeldedModel> {
        self.validate()?;
        ChainMeldedModel::new(self.submodels(), pooling)
    }

    /// Exact melded posterior under logarithmic pooling with weights `lambda`.
    pub fn exact_posterior(&self, lambda: &[f64]) -> Result<GaussianPosterior> {
        self.validate()?;
        let m = self.m();
        if lambda.len() != m {
            return Err(Error::config(format!("lambda has {} entries, expected {m}", lambda.len())));
        }
        let nb = m - 1;
        let d = nb + m;
        let mut prec = DMatrix::<f64>::zeros(d, d);
        let mut lin = DVector::<f64>::zeros(d);
        for b in 0..nb {
            let w = (lambda[b] + lambda[b + 1]) / self.phi_prior_sd[b].powi(2);
            prec[(b, b)] += w;
            lin[b] += w * self.phi_prior_mean[b];
        }
        for k in 0..m {
            let w = 1.0 / self.psi_prior_sd[k].powi(2);
            prec[(nb + k, nb + k)] += w;
            lin[nb + k] += w * self.psi_prior_mean[k];
            let mut idx = Vec::with_capacity(3);
            if k > 0 {
                idx.push(k - 1);
            }
            if k < nb {
                idx.push(k);
            }
            idx.push(nb + k);
            let s2 = self.data[k].sigma.powi(2);
            let n = self.data[k].y.len() as f64;
            let ysum: f64 = self.data[k].y.iter().sum();
            for &i in &idx {
                lin[i] += ysum / s2;
                for &j in &idx {
                    prec[(i, j)] += n / s2;
                }
            }
        }
        let chol = prec
            .clone()
            .cholesky()
            .ok_or(Error::Singular("gaussian chain posterior precision"))?;
        let mean = chol.solve(&lin);
        let cov = chol.inverse();
        Ok(GaussianPosterior { mean, cov })
    }

    /// Draws a synthetic dataset: `n[m]` observations per submodel from the
    /// model at the given truth (global layout).
    pub fn simulate_data(
        truth: &[f64],
        n: &[usize],
        sigma: &[f64],
        rng: &mut StreamRng,
    ) -> Result<Vec<SubmodelData>> {
        let m = n.len();
        if truth.len() != 2 * m - 1 || sigma.len() != m {
            return Err(Error::config("truth must have 2M-1 entries and sigma M entries"));
        }
        let nb = m - 1;
        let mut out = Vec::with_capacity(m);
        for k in 0..m {
            let mut mean = truth[nb + k];
            if k > 0 {
                mean += truth[k - 1];
            }
            if k < nb {
                mean += truth[k];
            }
            let dist = Normal::new(mean, sigma[k]).map_err(|e| Error::config(e.to_string()))?;
            out.push(SubmodelData::new(
                (0..n[k]).map(|_| dist.sample(rng)).collect(),
                sigma[k],
            ));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
struct GaussianSubmodel {
    index: usize,
    left: Option<(f64, f64)>,
    right: Option<(f64, f64)>,
    psi_prior: (f64, f64),
    data: SubmodelData,
}

impl GaussianSubmodel {
    fn mean(&self, phi: &[f64], psi: &[f64]) -> f64 {
        phi.iter().sum::<f64>() + psi[0]
    }
}

impl Submodel for GaussianSubmodel {
    fn dim_phi_left(&self) -> usize {
        usize::from(self.left.is_some())
    }

    fn dim_phi_right(&self) -> usize {
        usize::from(self.right.is_some())
    }

    fn dim_psi(&self) -> usize {
        1
    }

    fn right_block_labels(&self) -> Vec<String> {
        if self.right.is_some() {
            vec![format!("phi_{}_{}", self.index + 1, self.index + 2)]
        } else {
            Vec::new()
        }
    }

    fn psi_labels(&self) -> Vec<String> {
        vec![format!("psi_{}", self.index + 1)]
    }

    fn log_phi_prior(&self, phi: &[f64]) -> f64 {
        let mut k = 0;
        let mut total = 0.0;
        for (mu, sd) in [self.left, self.right].into_iter().flatten() {
            total += log_normal_pdf(phi[k], mu, sd);
            k += 1;
        }
        total
    }

    fn log_phi_prior_block(&self, side: Side, block: &[f64]) -> Option<f64> {
        let (mu, sd) = match side {
            Side::Left => self.left?,
            Side::Right => self.right?,
        };
        Some(log_normal_pdf(block[0], mu, sd))
    }

    fn log_psi_prior(&self, _phi: &[f64], psi: &[f64]) -> f64 {
        log_normal_pdf(psi[0], self.psi_prior.0, self.psi_prior.1)
    }

    fn log_likelihood(&self, phi: &[f64], psi: &[f64]) -> f64 {
        let mu = self.mean(phi, psi);
        let s = self.data.sigma;
        self.data.y.iter().map(|&y| log_normal_pdf(y, mu, s)).sum()
    }

    fn sample_prior(&self, rng: &mut StreamRng) -> (Vec<f64>, Vec<f64>) {
        let phi = [self.left, self.right]
            .into_iter()
            .flatten()
            .map(|(mu, sd)| Normal::new(mu, sd).unwrap().sample(rng))
            .collect();
        let psi = self.sample_psi_prior(&[], rng);
        (phi, psi)
    }

    fn sample_psi_prior(&self, _phi: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        vec![Normal::new(self.psi_prior.0, self.psi_prior.1).unwrap().sample(rng)]
    }

    fn psi_prior_mean(&self, _phi: &[f64]) -> Vec<f64> {
        vec![self.psi_prior.0]
    }

    fn initial_psi(&self, _phi: &[f64]) -> Option<Vec<f64>> {
        Some(vec![self.psi_prior.0])
    }
}
