//! Multi-stage divide-and-conquer sampler.

use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dc::ledger::{extract_joint_samples, Ledger, LedgerNode};
use crate::dc::merge::{extended_merge_indices, MergeConfig, MergeMode, MergeWeight};
use crate::dc::node::NodeTarget;
use crate::dc::plan::{plan_stages, PlanNode, StagePlan};
use crate::error::{Error, Result};
use crate::melding::ChainMeldedModel;
use crate::particles::{IndexMultiset, WeightedParticleSystem};
use crate::rng::{Purpose, Streams};
use crate::smc::{smc_sampler, Passengers, RungDiagnostics, SmcConfig, TemperingTarget};

/// How joint rows are recovered at the end of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryMode {
    /// Record per-node ancestries and reconstruct afterwards.
    #[default]
    Ledger,
    /// Carry each particle's full segment through every resampling step.
    Inline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DcConfig {
    pub n_particles: usize,
    pub smc: SmcConfig,
    pub merge: MergeConfig,
    pub trajectories: TrajectoryMode,
}

impl Default for DcConfig {
    fn default() -> Self {
        Self {
            n_particles: 1000,
            smc: SmcConfig::default(),
            merge: MergeConfig::default(),
            trajectories: TrajectoryMode::Ledger,
        }
    }
}

impl DcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 2 {
            return Err(Error::config("n_particles must be at least 2"));
        }
        self.smc.validate()?;
        self.merge.validate()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeDiagnostics {
    pub stage: usize,
    pub node: String,
    /// One-based submodel indices activated at the node.
    pub submodels: Vec<usize>,
    pub seconds: f64,
    pub rungs: Vec<RungDiagnostics>,
}

#[derive(Debug, Clone)]
pub struct DcOutput {
    /// Weighted joint samples over every model coordinate.
    pub samples: WeightedParticleSystem,
    pub plan: StagePlan,
    pub ledger: Ledger,
    pub diagnostics: Vec<NodeDiagnostics>,
    /// Wall time per stage, in seconds.
    pub stage_seconds: Vec<f64>,
}

/// Node name built from its stage and one-based submodel and segment ranges.
pub fn node_name(node: &PlanNode) -> String {
    let s = &node.submodels;
    let first = s.iter().min().map_or(0, |v| v + 1);
    let last = s.iter().max().map_or(0, |v| v + 1);
    let (a, b) = node.segment;
    if first == last {
        format!("stage{}_sub{}_seg{}-{}", node.stage, first, a + 1, b + 1)
    } else {
        format!("stage{}_sub{}-{}_seg{}-{}", node.stage, first, last, a + 1, b + 1)
    }
}

struct NodeResult {
    record: LedgerNode,
    /// Global-width rows, valid on the node's segment columns.
    segment: Vec<f64>,
    diagnostics: NodeDiagnostics,
}

struct Runner<'a> {
    model: &'a ChainMeldedModel,
    plan: &'a StagePlan,
    config: &'a DcConfig,
    seed: u64,
}

impl Runner<'_> {
    /// Aligns child output rows into merged rows, returning the rows and the
    /// left and right child indices of each.
    fn merged_input(
        &self,
        node: &PlanNode,
        left: &[f64],
        right: &[f64],
        streams: &Streams,
    ) -> Result<(Vec<f64>, IndexMultiset, IndexMultiset, Option<MergeWeight>)> {
        let layout = self.model.layout();
        let d = layout.dim();
        let n = self.config.n_particles;
        let (lc, _) = node.children.expect("internal node");
        let lc = &self.plan.nodes[lc];
        let (li, ri, weight) = match self.config.merge.mode {
            MergeMode::Naive => (IndexMultiset::identity(n), IndexMultiset::identity(n), None),
            MergeMode::Extended => {
                let mut rng = streams.stream(Purpose::Merge, 0, 0);
                let w = MergeWeight::new(self.model, &self.config.merge, &mut rng)?;
                let phi = layout.phi_range(1);
                let b0 = layout.block_range(0);
                let (li, ri) = extended_merge_indices(
                    n,
                    n,
                    n,
                    self.config.merge.kappa,
                    |a, b| {
                        let mut x = right[b * d + phi.start..b * d + phi.end].to_vec();
                        x[..b0.len()].copy_from_slice(&left[a * d + b0.start..a * d + b0.end]);
                        w.log_v(self.model, &x)
                    },
                    &mut rng,
                )?;
                (li, ri, Some(w))
            }
        };
        let left_cols = layout.segment_columns(lc.segment.0, lc.segment.1);
        let mut merged = vec![0.0; n * d];
        for (i, row) in merged.chunks_mut(d).enumerate() {
            let (a, b) = (li.as_slice()[i], ri.as_slice()[i]);
            row.copy_from_slice(&right[b * d..(b + 1) * d]);
            let src = &left[a * d..(a + 1) * d];
            for &c in &left_cols {
                row[c] = src[c];
            }
        }
        Ok((merged, li, ri, weight))
    }

    fn run_node(&self, id: usize, outputs: &HashMap<usize, Vec<f64>>) -> Result<NodeResult> {
        let start = Instant::now();
        let node = &self.plan.nodes[id];
        let n = self.config.n_particles;
        let d = self.model.dim();
        let streams = Streams::new(self.seed, node.stage as u64).child(id as u64 + 1);
        let inline = self.config.trajectories == TrajectoryMode::Inline;

        let merged = match node.children {
            None => None,
            Some((l, r)) => {
                let missing = || Error::IncompleteLedger(format!("child output of node {id} is missing"));
                let left = outputs.get(&l).ok_or_else(missing)?;
                let right = outputs.get(&r).ok_or_else(missing)?;
                Some(self.merged_input(node, left, right, &streams)?)
            }
        };
        let (ctx, merge_left, merge_right, weight) = match merged {
            Some((rows, li, ri, w)) => (Some(rows), Some(li), Some(ri), w),
            None => (None, None, None, None),
        };
        let target = NodeTarget::new(self.model, node, ctx.as_deref(), weight.as_ref())?;
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| target.init_state(i, &mut streams.stream(Purpose::Init, 0, i as u64)))
            .collect();
        let init = WeightedParticleSystem::uniform(target.labels(), rows.concat(), n)?;
        let passengers = if inline {
            Some(Passengers {
                width: d,
                data: ctx.clone().unwrap_or_else(|| vec![0.0; n * d]),
            })
        } else {
            None
        };
        let mut out = smc_sampler(&target, init, &self.config.smc, &streams, passengers)?;
        if id != self.plan.root {
            out = out.resample_final(&self.config.smc.resample, &streams)?;
        }

        let coords = target.coords().to_vec();
        let mut segment = vec![0.0; n * d];
        for (i, row) in segment.chunks_mut(d).enumerate() {
            if let Some(p) = &out.passengers {
                row.copy_from_slice(p.row(i));
            } else if let Some(ctx) = &ctx {
                let o = out.ancestry.as_slice()[i];
                row.copy_from_slice(&ctx[o * d..(o + 1) * d]);
            }
            let state = out.particles.row(i);
            for (k, &c) in coords.iter().enumerate() {
                row[c] = state[k];
            }
        }
        Ok(NodeResult {
            record: LedgerNode {
                id,
                state: out.particles,
                ancestry: out.ancestry,
                merge_left,
                merge_right,
            },
            segment,
            diagnostics: NodeDiagnostics {
                stage: node.stage,
                node: node_name(node),
                submodels: node.submodels.iter().map(|k| k + 1).collect(),
                seconds: start.elapsed().as_secs_f64(),
                rungs: out.diagnostics,
            },
        })
    }
}

/// Runs the full multi-stage sampler on a chain of `M ≥ 3` submodels.
///
/// Pooling roles are re-derived from the stage plan: stage-one submodels keep
/// their own prior and later ones carry the pooled-prior correction.
pub fn dc_melding_multi(model: &ChainMeldedModel, config: &DcConfig, seed: u64) -> Result<DcOutput> {
    config.validate()?;
    let plan = plan_stages(model.n_submodels())?;
    if config.merge.mode == MergeMode::Extended && model.n_submodels() != 3 {
        return Err(Error::config(
            "extended merging is only available for three-submodel chains",
        ));
    }
    let model = model.with_roles(plan.default_roles())?;
    let runner = Runner {
        model: &model,
        plan: &plan,
        config,
        seed,
    };
    let mut outputs: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut ledger = Ledger::new(plan.clone(), model.labels().to_vec(), seed);
    let mut diagnostics = Vec::new();
    let mut stage_seconds = Vec::new();
    let mut root_segment = None;

    for stage in &plan.stages {
        let start = Instant::now();
        let results: Vec<Result<NodeResult>> = stage
            .nodes
            .par_iter()
            .map(|&id| {
                runner.run_node(id, &outputs).map_err(|e| Error::Stage {
                    stage: plan.nodes[id].stage,
                    node: node_name(&plan.nodes[id]),
                    source: Box::new(e),
                })
            })
            .collect();
        for res in results {
            let res = res?;
            let id = res.record.id;
            if let Some((l, r)) = plan.nodes[id].children {
                outputs.remove(&l);
                outputs.remove(&r);
            }
            log::info!(
                "{}: {} rungs in {:.2}s",
                res.diagnostics.node,
                res.diagnostics.rungs.len(),
                res.diagnostics.seconds
            );
            diagnostics.push(res.diagnostics);
            if id == plan.root {
                root_segment = Some(res.segment);
            } else {
                outputs.insert(id, res.segment);
            }
            ledger.record(res.record);
        }
        stage_seconds.push(start.elapsed().as_secs_f64());
    }

    let root_log_weights = ledger.nodes[plan.root]
        .as_ref()
        .expect("root recorded")
        .state
        .log_weights()
        .to_vec();
    let samples = match config.trajectories {
        TrajectoryMode::Ledger => extract_joint_samples(&ledger)?,
        TrajectoryMode::Inline => WeightedParticleSystem::new(
            model.labels().to_vec(),
            root_segment.expect("root ran"),
            root_log_weights,
        )?,
    };
    Ok(DcOutput {
        samples,
        plan,
        ledger,
        diagnostics,
        stage_seconds,
    })
}

/// The two-stage sampler for three submodels: leaves `1` and `3` in
/// parallel, then the centre submodel joins at the root.
pub fn dc_melding_3(model: &ChainMeldedModel, config: &DcConfig, seed: u64) -> Result<DcOutput> {
    if model.n_submodels() != 3 {
        return Err(Error::config(format!(
            "dc_melding_3 needs three submodels, got {}",
            model.n_submodels()
        )));
    }
    dc_melding_multi(model, config, seed)
}

/// Runs the stage-one sampler of the leaf holding submodel `k` (zero-based)
/// exactly as [`dc_melding_multi`] would with the same seed, returning its
/// equally weighted output.
pub fn run_leaf(model: &ChainMeldedModel, k: usize, config: &DcConfig, seed: u64) -> Result<WeightedParticleSystem> {
    config.validate()?;
    let plan = plan_stages(model.n_submodels())?;
    if k >= model.n_submodels() {
        return Err(Error::IndexOutOfRange {
            context: "run_leaf submodel",
            index: k,
            len: model.n_submodels(),
        });
    }
    let id = plan.node_of(k);
    if !plan.nodes[id].is_leaf() {
        return Err(Error::config(format!("submodel {} is not sampled on its own", k + 1)));
    }
    let model = model.with_roles(plan.default_roles())?;
    let runner = Runner {
        model: &model,
        plan: &plan,
        config,
        seed,
    };
    Ok(runner.run_node(id, &HashMap::new())?.record.state)
}
