//! Executes a configured run and writes its output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dcmeld_core::dc::dc_melding_multi;
use dcmeld_core::summary::gelman_rubin;
use dcmeld_core::{
    full_posterior_mcmc_chains, plugin_point, pointwise_plugin_sampler, summarize, summarize_chains,
    summary_to_csv, two_stage_parallel_sampler, ChainMeldedModel, EssMethod, ParameterSummary, SubposteriorPool,
    WeightedParticleSystem,
};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, SamplerKind};
use crate::error::{CliError, Result};

pub const SAMPLES_FILE: &str = "samples.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub wall_clock_seconds: f64,
    pub stages: Vec<Timing>,
    pub nodes: Vec<Timing>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub sampler: String,
    pub seed: u64,
    pub workers: usize,
    pub n_samples: usize,
    pub parameters: Vec<String>,
    /// How the summary's ESS column was computed.
    pub ess_method: EssMethod,
    /// Number of equal-length chains stacked in the samples file.
    pub chains: usize,
    /// SHA-256 of every other output file.
    pub files: BTreeMap<String, String>,
    /// The only part of the output that varies between identical runs.
    pub timings: Timings,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub samples: WeightedParticleSystem,
    pub summary: Vec<ParameterSummary>,
    pub manifest: Manifest,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of the configuration's canonical JSON form.
pub fn config_hash(config: &RunConfig) -> String {
    let canonical = serde_json::to_vec(config).expect("configurations serialise");
    hex(&Sha256::digest(&canonical))
}

/// Worker count: `DCMELD_THREADS`, else the configuration, else all cores.
pub fn resolve_workers(config: &RunConfig) -> Result<usize> {
    if let Ok(v) = std::env::var("DCMELD_THREADS") {
        return match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::config("DCMELD_THREADS", format!("`{v}` is not a positive integer"))),
        };
    }
    Ok(config
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())))
}

struct Produced {
    samples: WeightedParticleSystem,
    summary: Vec<ParameterSummary>,
    ess_method: EssMethod,
    chains: usize,
    diagnostics: serde_json::Value,
    stages: Vec<Timing>,
    nodes: Vec<Timing>,
}

fn chain_diagnostics(chains: &[dcmeld_core::McmcChain]) -> serde_json::Value {
    json!({
        "chains": chains.iter().map(|c| json!({
            "draws": c.samples.len(),
            "acceptance": c.acceptance,
            "group_acceptance": c.group_acceptance,
        })).collect::<Vec<_>>(),
    })
}

fn stack(chains: &[WeightedParticleSystem]) -> Result<WeightedParticleSystem> {
    let labels = chains[0].labels().to_vec();
    let values: Vec<f64> = chains.iter().flat_map(|c| c.values().iter().copied()).collect();
    let n = chains.iter().map(|c| c.len()).sum();
    Ok(WeightedParticleSystem::uniform(labels, values, n)?)
}

fn execute(config: &RunConfig, model: &ChainMeldedModel, ledger_dir: &Path) -> Result<Produced> {
    let s = &config.sampler;
    let seed = config.seed;
    match s.kind {
        SamplerKind::DcMelding => {
            let out = dc_melding_multi(model, &s.dc(), seed)?;
            if s.write_ledger {
                out.ledger.write_dir(ledger_dir)?;
            }
            let nodes: Vec<_> = out
                .diagnostics
                .iter()
                .map(|d| {
                    json!({
                        "stage": d.stage,
                        "node": d.node,
                        "submodels": d.submodels,
                        "rungs": d.rungs,
                    })
                })
                .collect();
            let summary = summarize(&out.samples, EssMethod::Weights)?;
            Ok(Produced {
                diagnostics: json!({
                    "ess": out.samples.ess()?,
                    "stages": out.plan.summary(),
                    "nodes": nodes,
                }),
                summary,
                samples: out.samples,
                ess_method: EssMethod::Weights,
                chains: 1,
                stages: out
                    .stage_seconds
                    .iter()
                    .enumerate()
                    .map(|(k, &seconds)| Timing {
                        name: format!("stage{}", k + 1),
                        seconds,
                    })
                    .collect(),
                nodes: out
                    .diagnostics
                    .iter()
                    .map(|d| Timing {
                        name: d.node.clone(),
                        seconds: d.seconds,
                    })
                    .collect(),
            })
        }
        SamplerKind::FullMcmc => {
            let start = Instant::now();
            let chains = full_posterior_mcmc_chains(model, &s.mcmc, seed, s.chains)?;
            let systems: Vec<_> = chains.iter().map(|c| c.samples.clone()).collect();
            let samples = stack(&systems)?;
            let mut diagnostics = chain_diagnostics(&chains);
            if chains.len() > 1 {
                let rhat: BTreeMap<String, f64> = samples
                    .labels()
                    .iter()
                    .enumerate()
                    .map(|(k, l)| {
                        let cols: Vec<Vec<f64>> = systems.iter().map(|c| c.column(k)).collect();
                        Ok((l.clone(), gelman_rubin(&cols)?))
                    })
                    .collect::<dcmeld_core::Result<_>>()?;
                diagnostics["rhat"] = json!(rhat);
            }
            Ok(Produced {
                summary: summarize_chains(&samples, chains.len())?,
                samples,
                ess_method: EssMethod::Chain,
                chains: chains.len(),
                diagnostics,
                stages: vec![Timing {
                    name: "mcmc".into(),
                    seconds: start.elapsed().as_secs_f64(),
                }],
                nodes: Vec::new(),
            })
        }
        SamplerKind::TwoStageParallel | SamplerKind::PointwisePlugin => {
            let start = Instant::now();
            let pool = SubposteriorPool::from_stage_one(model, &s.dc(), seed)?;
            let pool_seconds = start.elapsed().as_secs_f64();
            let start = Instant::now();
            let (samples, chain, mut diagnostics) = if s.kind == SamplerKind::TwoStageParallel {
                let chain = two_stage_parallel_sampler(model, &pool, &s.mcmc, seed)?;
                (chain.samples.clone(), chain.clone(), json!({}))
            } else {
                let phi = plugin_point(model, &pool, s.plugin)?;
                let chain = pointwise_plugin_sampler(model, &phi, &s.mcmc, seed)?;
                let names = model.labels()[..phi.len()].to_vec();
                let fixed = WeightedParticleSystem::uniform(
                    names.clone(),
                    (0..chain.samples.len()).flat_map(|_| phi.iter().copied()).collect(),
                    chain.samples.len(),
                )?;
                let plugin: BTreeMap<String, f64> = names.into_iter().zip(phi).collect();
                (fixed.hstack(&chain.samples)?, chain, json!({ "plugin": plugin }))
            };
            let extra = chain_diagnostics(std::slice::from_ref(&chain));
            diagnostics["chains"] = extra["chains"].clone();
            Ok(Produced {
                summary: summarize(&samples, EssMethod::Chain)?,
                samples,
                ess_method: EssMethod::Chain,
                chains: 1,
                diagnostics,
                stages: vec![
                    Timing {
                        name: "stage_one_pool".into(),
                        seconds: pool_seconds,
                    },
                    Timing {
                        name: "mcmc".into(),
                        seconds: start.elapsed().as_secs_f64(),
                    },
                ],
                nodes: Vec::new(),
            })
        }
    }
}

fn write(path: &Path, bytes: &[u8], files: &mut BTreeMap<String, String>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
    let name = path.file_name().unwrap().to_string_lossy().into_owned();
    files.insert(name, hex(&Sha256::digest(bytes)));
    Ok(())
}

/// Validates `config`, runs its sampler on a dedicated worker pool and
/// writes samples, summary, diagnostics and manifest to its output directory.
pub fn run_experiment(config: &RunConfig) -> Result<RunOutput> {
    let start = Instant::now();
    let model = config.validate()?;
    let workers = resolve_workers(config)?;
    let dir = config.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::config("workers", e.to_string()))?;
    log::info!(
        "{} on {} submodels ({} parameters), {workers} workers",
        config.sampler.kind.name(),
        model.n_submodels(),
        model.dim()
    );
    let produced = pool.install(|| execute(config, &model, &dir.join("ledger")))?;

    let mut files = BTreeMap::new();
    let mut csv = Vec::new();
    produced.samples.write_csv_to(&mut csv)?;
    write(&dir.join(SAMPLES_FILE), &csv, &mut files)?;
    write(&dir.join(SUMMARY_FILE), summary_to_csv(&produced.summary).as_bytes(), &mut files)?;
    let diagnostics = serde_json::to_vec_pretty(&produced.diagnostics).map_err(dcmeld_core::Error::from)?;
    write(&dir.join(DIAGNOSTICS_FILE), &diagnostics, &mut files)?;

    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash(config),
        config: config.clone(),
        sampler: config.sampler.kind.name().to_string(),
        seed: config.seed,
        workers,
        n_samples: produced.samples.len(),
        parameters: produced.samples.labels().to_vec(),
        ess_method: produced.ess_method,
        chains: produced.chains,
        files,
        timings: Timings {
            wall_clock_seconds: start.elapsed().as_secs_f64(),
            stages: produced.stages,
            nodes: produced.nodes,
        },
    };
    let text = serde_json::to_vec_pretty(&manifest).map_err(dcmeld_core::Error::from)?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
    Ok(RunOutput {
        dir,
        samples: produced.samples,
        summary: produced.summary,
        manifest,
    })
}

/// Summary of a samples file. Settings recorded in a `manifest.json` beside
/// the file are used unless overridden.
pub fn summarize_file(path: &Path, ess: Option<EssMethod>, chains: Option<usize>) -> Result<Vec<ParameterSummary>> {
    let samples = WeightedParticleSystem::read_csv(path).map_err(|e| match e {
        dcmeld_core::Error::Io(source) => CliError::io(format!("reading {}", path.display()), source),
        other => CliError::Parse {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })?;
    let recorded = path
        .parent()
        .map(|d| d.join(MANIFEST_FILE))
        .filter(|m| m.exists())
        .and_then(|m| fs::read_to_string(m).ok())
        .and_then(|t| serde_json::from_str::<Manifest>(&t).ok())
        .filter(|m| m.n_samples == samples.len() && m.parameters == samples.labels());
    let method = ess.or(recorded.as_ref().map(|m| m.ess_method)).unwrap_or_default();
    let chains = chains.or(recorded.as_ref().map(|m| m.chains)).unwrap_or(1);
    let rows = match method {
        EssMethod::Weights => summarize(&samples, EssMethod::Weights)?,
        EssMethod::Chain if chains > 1 => summarize_chains(&samples, chains)?,
        EssMethod::Chain => summarize(&samples, EssMethod::Chain)?,
    };
    Ok(rows)
}
