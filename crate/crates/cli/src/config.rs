//! Run configuration, read from a TOML file.
//!
//! Relative paths inside a configuration file are resolved against the
//! directory that holds the file.

use std::fs;
use std::path::{Path, PathBuf};

use dcmeld_core::models::gaussian_chain::GaussianChainSpec;
use dcmeld_core::models::owl::{owl_build, OwlData, OwlTruth};
use dcmeld_core::{
    ChainMeldedModel, DcConfig, McmcConfig, MergeConfig, MergeMode, MoveKernelConfig, PluginStatistic,
    PooledPriorSpec, Purpose, ResampleScheme, SmcConfig, Streams, TemperingSchedule, TrajectoryMode,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random stream of the run derives from it.
    pub seed: u64,
    /// Worker threads; `DCMELD_THREADS` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("dcmeld-out")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    GaussianChain,
    Owl,
    /// A `[model]` table in a separate file.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Pooling weights, one per submodel; all ½ when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    /// Gaussian chain given in full.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<GaussianChainSpec>,
    /// Gaussian chain with simulated data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<GaussianSimulation>,
    /// Owl data as written by `simulate-owl`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    /// Owl data simulated in memory at this truth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<OwlTruth>,
    /// For `external`: the file holding the model table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

/// A Gaussian chain whose data are drawn at `truth_k = 0.3·sin(k)` over the
/// global layout (blocks first, then the ψ's).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianSimulation {
    pub m: usize,
    pub n_obs: usize,
    pub sigma: f64,
    pub data_seed: u64,
    pub phi_prior_sd: f64,
    pub psi_prior_sd: f64,
}

impl Default for GaussianSimulation {
    fn default() -> Self {
        Self {
            m: 3,
            n_obs: 4,
            sigma: 1.0,
            data_seed: 1,
            phi_prior_sd: 1.5,
            psi_prior_sd: 1.0,
        }
    }
}

impl GaussianSimulation {
    pub fn spec(&self) -> Result<GaussianChainSpec> {
        let m = self.m;
        if m < 3 {
            return Err(CliError::config("model.simulate.m", format!("needs at least 3 submodels, got {m}")));
        }
        let mut rng = Streams::new(self.data_seed, 0).stream(Purpose::Data, 0, 0);
        let truth: Vec<f64> = (0..2 * m - 1).map(|k| 0.3 * (k as f64).sin()).collect();
        let data = GaussianChainSpec::simulate_data(&truth, &vec![self.n_obs; m], &vec![self.sigma; m], &mut rng)
            .map_err(|e| CliError::config("model.simulate", e.to_string()))?;
        Ok(GaussianChainSpec {
            phi_prior_mean: vec![0.0; m - 1],
            phi_prior_sd: vec![self.phi_prior_sd; m - 1],
            psi_prior_mean: vec![0.0; m],
            psi_prior_sd: vec![self.psi_prior_sd; m],
            data,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    #[default]
    DcMelding,
    TwoStageParallel,
    FullMcmc,
    PointwisePlugin,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::DcMelding => "dc_melding",
            SamplerKind::TwoStageParallel => "two_stage_parallel",
            SamplerKind::FullMcmc => "full_mcmc",
            SamplerKind::PointwisePlugin => "pointwise_plugin",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Particles per SMC node (also the stage-one pool size of the
    /// two-stage and plug-in samplers).
    pub n_particles: usize,
    pub schedule: TemperingSchedule,
    pub kernel: MoveKernelConfig,
    pub resample: ResampleScheme,
    pub merge: MergeConfig,
    pub trajectories: TrajectoryMode,
    pub mcmc: McmcConfig,
    /// Independent chains of `full_mcmc`.
    pub chains: usize,
    pub plugin: PluginStatistic,
    /// Also dump the per-node ledger of `dc_melding`.
    pub write_ledger: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        let dc = DcConfig::default();
        Self {
            kind: SamplerKind::default(),
            n_particles: dc.n_particles,
            schedule: dc.smc.schedule,
            kernel: dc.smc.kernel,
            resample: dc.smc.resample,
            merge: dc.merge,
            trajectories: dc.trajectories,
            mcmc: McmcConfig::default(),
            chains: 1,
            plugin: PluginStatistic::default(),
            write_ledger: false,
        }
    }
}

impl SamplerConfig {
    pub fn dc(&self) -> DcConfig {
        DcConfig {
            n_particles: self.n_particles,
            smc: SmcConfig {
                schedule: self.schedule.clone(),
                kernel: self.kernel.clone(),
                resample: self.resample,
            },
            merge: self.merge.clone(),
            trajectories: self.trajectories,
        }
    }

    fn validate(&self, m: usize) -> Result<()> {
        fn field(name: &'static str) -> impl Fn(dcmeld_core::Error) -> CliError {
            move |e| CliError::config(format!("sampler.{name}"), strip(e))
        }
        if self.n_particles < 2 {
            return Err(CliError::config("sampler.n_particles", "must be at least 2"));
        }
        self.schedule.validate().map_err(field("schedule"))?;
        self.kernel.validate().map_err(field("kernel"))?;
        self.resample.validate().map_err(field("resample"))?;
        self.merge.validate().map_err(field("merge"))?;
        self.mcmc.validate().map_err(field("mcmc"))?;
        if self.chains == 0 {
            return Err(CliError::config("sampler.chains", "must be at least 1"));
        }
        let needs_three = matches!(self.kind, SamplerKind::TwoStageParallel | SamplerKind::PointwisePlugin);
        if needs_three && m != 3 {
            return Err(CliError::config(
                "sampler.kind",
                format!("{} needs a three-submodel chain, the model has {m}", self.kind.name()),
            ));
        }
        if self.merge.mode == MergeMode::Extended && m != 3 {
            return Err(CliError::config("sampler.merge.mode", "extended merging needs a three-submodel chain"));
        }
        Ok(())
    }
}

/// The library's message without its generic prefix.
fn strip(e: dcmeld_core::Error) -> String {
    let s = e.to_string();
    s.strip_prefix("invalid configuration: ").map(str::to_owned).unwrap_or(s)
}

fn parse_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::config(path.display().to_string(), e.to_string()))?;
    toml::from_str(&text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
}

impl ModelConfig {
    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.data_dir);
        resolve(base, &mut self.path);
    }

    /// Replaces an `external` reference by the table it points to.
    fn inline_external(&mut self) -> Result<()> {
        if self.kind != ModelKind::External {
            return Ok(());
        }
        let path = self
            .path
            .clone()
            .ok_or_else(|| CliError::config("model.path", "required when model.kind = \"external\""))?;
        #[derive(Deserialize)]
        struct Wrapper {
            model: ModelConfig,
        }
        let mut inner = parse_toml::<Wrapper>(&path)?.model;
        if inner.kind == ModelKind::External {
            return Err(CliError::config("model.path", "an external model file cannot point to another"));
        }
        inner.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        if inner.lambda.is_none() {
            inner.lambda = self.lambda.clone();
        }
        *self = inner;
        Ok(())
    }

    fn n_submodels(&self) -> Result<usize> {
        match self.kind {
            ModelKind::Owl => Ok(3),
            ModelKind::GaussianChain => match (&self.spec, &self.simulate) {
                (Some(s), None) => Ok(s.m()),
                (None, Some(s)) => Ok(s.m),
                _ => Err(CliError::config("model", "a gaussian_chain needs exactly one of `spec` or `simulate`")),
            },
            ModelKind::External => Err(CliError::config("model.kind", "external model was not loaded")),
        }
    }

    pub fn lambda(&self) -> Result<Vec<f64>> {
        let m = self.n_submodels()?;
        let lambda = self.lambda.clone().unwrap_or_else(|| vec![0.5; m]);
        if lambda.len() != m {
            return Err(CliError::config(
                "model.lambda",
                format!("expected {m} entries (one per submodel), got {}", lambda.len()),
            ));
        }
        if lambda.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(CliError::config("model.lambda", "entries must be finite and non-negative"));
        }
        if lambda.iter().all(|&l| l == 0.0) {
            return Err(CliError::config("model.lambda", "at least one entry must be positive"));
        }
        Ok(lambda)
    }

    pub fn build(&self) -> Result<ChainMeldedModel> {
        let lambda = self.lambda()?;
        let pooling =
            PooledPriorSpec::log_pooling(lambda.clone()).map_err(|e| CliError::config("model.lambda", strip(e)))?;
        match self.kind {
            ModelKind::GaussianChain => {
                let spec = match (&self.spec, &self.simulate) {
                    (Some(s), _) => s.clone(),
                    (_, Some(s)) => s.spec()?,
                    _ => unreachable!("checked by n_submodels"),
                };
                spec.build(pooling).map_err(|e| CliError::config("model.spec", e.to_string()))
            }
            ModelKind::Owl => {
                let data = match (&self.data_dir, &self.truth) {
                    (Some(dir), None) => OwlData::read_dir(dir).map_err(|e| CliError::config("model.data_dir", e.to_string()))?,
                    (None, Some(truth)) => {
                        let mut rng = Streams::new(truth.seed, 0).stream(Purpose::Data, 0, 0);
                        dcmeld_core::models::owl::simulate_owl(truth, &mut rng)
                            .map_err(|e| CliError::config("model.truth", strip(e)))?
                            .0
                    }
                    _ => return Err(CliError::config("model", "an owl model needs exactly one of `data_dir` or `truth`")),
                };
                owl_build(data, lambda).map_err(|e| CliError::config("model", e.to_string()))
            }
            ModelKind::External => Err(CliError::config("model.kind", "external model was not loaded")),
        }
    }
}

impl RunConfig {
    /// Parses a file, resolves relative paths and inlines external models.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut config: RunConfig = parse_toml(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if config.output_dir.is_relative() {
            config.output_dir = base.join(&config.output_dir);
        }
        config.model.resolve_paths(base);
        config.model.inline_external()?;
        Ok(config)
    }

    /// Checks every field and builds the model.
    pub fn validate(&self) -> Result<ChainMeldedModel> {
        if self.workers == Some(0) {
            return Err(CliError::config("workers", "must be at least 1"));
        }
        let model = self.model.build()?;
        self.sampler.validate(model.n_submodels())?;
        Ok(model)
    }
}

/// Truth settings for `simulate-owl`, read from TOML; every field optional.
pub fn read_owl_truth(path: &Path) -> Result<OwlTruth> {
    let truth: OwlTruth = parse_toml(path)?;
    truth.validate().map_err(|e| CliError::config("truth", strip(e)))?;
    Ok(truth)
}
