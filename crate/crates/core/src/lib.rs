//! Markov melding of chained submodels with a divide-and-conquer sequential
//! Monte Carlo sampler.

pub mod baselines;
pub mod dc;
pub mod error;
pub mod melding;
pub mod models;
pub mod particles;
pub mod rng;
pub mod smc;
pub mod summary;

pub use baselines::{
    full_posterior_mcmc, full_posterior_mcmc_chains, plugin_point, pointwise_plugin_sampler, two_stage_parallel_sampler, McmcChain,
    McmcConfig, PluginStatistic, SubposteriorPool,
};
pub use dc::{dc_melding_3, dc_melding_multi, DcConfig, DcOutput, MergeConfig, MergeMode, TrajectoryMode};
pub use error::{Error, Result};
pub use melding::{ChainMeldedModel, PooledPriorSpec, Role, Side, Submodel};
pub use particles::{IndexMultiset, ResampleKind, ResampleScheme, WeightedParticleSystem};
pub use rng::{Purpose, StreamRng, Streams};
pub use smc::{smc_sampler, MoveKernelConfig, SmcConfig, TemperingSchedule, TemperingTarget};
pub use summary::{summarize, summarize_chains, summary_to_csv, EssMethod, ParameterSummary};
