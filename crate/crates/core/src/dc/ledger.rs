//! Per-node record of a multi-stage run and joint-sample reconstruction.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dc::plan::StagePlan;
use crate::error::{Error, Result};
use crate::particles::{back_left_update, back_right_update, IndexMultiset, WeightedParticleSystem};

/// What one node of the merge tree left behind.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerNode {
    pub id: usize,
    /// Final particles over the node's own coordinates; equally weighted
    /// except at the root.
    pub state: WeightedParticleSystem,
    /// Row of the merged input each final particle descends from.
    pub ancestry: IndexMultiset,
    /// Rows of the left and right child outputs forming each merged input row.
    pub merge_left: Option<IndexMultiset>,
    pub merge_right: Option<IndexMultiset>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ledger {
    pub plan: StagePlan,
    /// Global parameter labels of the model.
    pub labels: Vec<String>,
    pub seed: u64,
    pub nodes: Vec<Option<LedgerNode>>,
}

#[derive(Serialize, Deserialize)]
struct NodeManifest {
    id: usize,
    state_file: String,
    ancestry: Vec<usize>,
    ancestry_source_len: usize,
    merge_left: Option<(Vec<usize>, usize)>,
    merge_right: Option<(Vec<usize>, usize)>,
}

#[derive(Serialize, Deserialize)]
struct LedgerManifest {
    plan: StagePlan,
    labels: Vec<String>,
    seed: u64,
    nodes: Vec<NodeManifest>,
}

impl Ledger {
    pub fn new(plan: StagePlan, labels: Vec<String>, seed: u64) -> Self {
        let n = plan.nodes.len();
        Self {
            plan,
            labels,
            seed,
            nodes: vec![None; n],
        }
    }

    pub fn record(&mut self, node: LedgerNode) {
        let id = node.id;
        self.nodes[id] = Some(node);
    }

    fn get(&self, id: usize) -> Result<&LedgerNode> {
        self.nodes
            .get(id)
            .and_then(|n| n.as_ref())
            .ok_or_else(|| Error::IncompleteLedger(format!("node {id} has no record")))
    }

    /// Writes binary particle dumps plus a `ledger.json` manifest with
    /// one-based indices.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut nodes = Vec::new();
        for n in self.nodes.iter().flatten() {
            let file = format!("node_{}_state.bin", n.id + 1);
            n.state.write_binary(&dir.join(&file))?;
            let idx = |m: &Option<IndexMultiset>| m.as_ref().map(|m| (m.one_based(), m.source_len()));
            nodes.push(NodeManifest {
                id: n.id,
                state_file: file,
                ancestry: n.ancestry.one_based(),
                ancestry_source_len: n.ancestry.source_len(),
                merge_left: idx(&n.merge_left),
                merge_right: idx(&n.merge_right),
            });
        }
        let manifest = LedgerManifest {
            plan: self.plan.clone(),
            labels: self.labels.clone(),
            seed: self.seed,
            nodes,
        };
        fs::write(dir.join("ledger.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let path = dir.join("ledger.json");
        let text = fs::read_to_string(&path)?;
        let manifest: LedgerManifest =
            serde_json::from_str(&text).map_err(|e| Error::malformed(&path, e.to_string()))?;
        let mut ledger = Ledger::new(manifest.plan, manifest.labels, manifest.seed);
        for n in manifest.nodes {
            if n.id >= ledger.nodes.len() {
                return Err(Error::malformed(&path, format!("unknown node {}", n.id)));
            }
            let idx = |m: Option<(Vec<usize>, usize)>| -> Result<Option<IndexMultiset>> {
                m.map(|(v, len)| IndexMultiset::from_one_based(&v, len)).transpose()
            };
            ledger.record(LedgerNode {
                id: n.id,
                state: WeightedParticleSystem::read_binary(&dir.join(&n.state_file))?,
                ancestry: IndexMultiset::from_one_based(&n.ancestry, n.ancestry_source_len)?,
                merge_left: idx(n.merge_left)?,
                merge_right: idx(n.merge_right)?,
            });
        }
        Ok(ledger)
    }
}

/// Maps a node's output rows to the rows of one of its children.
fn child_rows(node: &LedgerNode, left: bool) -> Result<IndexMultiset> {
    let merge = if left { &node.merge_left } else { &node.merge_right };
    let merge = merge
        .as_ref()
        .ok_or_else(|| Error::IncompleteLedger(format!("node {} lacks merge indices", node.id)))?;
    merge.compose_after(&node.ancestry)
}

/// Rebuilds coherent joint rows over every parameter by following the
/// recorded ancestries from the root outwards. Weights are the root's.
pub fn extract_joint_samples(ledger: &Ledger) -> Result<WeightedParticleSystem> {
    let plan = &ledger.plan;
    let root = ledger.get(plan.root)?;
    let n = root.state.len();
    let mut gathered: Vec<Option<WeightedParticleSystem>> = vec![None; plan.nodes.len()];
    gathered[plan.root] = Some(root.state.clone());
    let (lc, rc) = plan.nodes[plan.root]
        .children
        .ok_or_else(|| Error::IncompleteLedger("root has no children".into()))?;
    let rl = child_rows(root, true)?;
    let rr = child_rows(root, false)?;

    for (side_left, child, rows) in [(true, lc, rl), (false, rc, rr)] {
        let spine = if side_left { &plan.left_spine } else { &plan.right_spine };
        if spine.is_empty() {
            gathered[child] = Some(ledger.get(child)?.state.gather(&rows)?);
            continue;
        }
        let k = spine.len();
        // outer (towards the chain end) and inner child of each spine node
        let kids = |id: usize| {
            let (a, b) = plan.nodes[id].children.expect("spine nodes have children");
            if side_left { (a, b) } else { (b, a) }
        };
        let outer_maps: Vec<IndexMultiset> = spine
            .iter()
            .map(|&id| child_rows(ledger.get(id)?, side_left))
            .collect::<Result<_>>()?;
        let outer_leaf = kids(spine[k - 1]).0;
        // rows into spine[j] for every j, and into the outer leaf
        let mut into: Vec<IndexMultiset> = Vec::with_capacity(k + 1);
        if side_left {
            let mut chain: Vec<IndexMultiset> = outer_maps.iter().rev().cloned().collect();
            chain.push(rows.clone());
            let mut systems = vec![ledger.get(outer_leaf)?.state.clone()];
            for j in (1..k).rev() {
                systems.push(ledger.get(spine[j])?.state.clone());
            }
            let (sys, ch) = back_left_update(&chain, &systems)?;
            // ch[t] (t < k) now points into the outer child of spine[k-1-t]
            into.push(rows);
            for j in 1..k {
                into.push(ch[k - j].clone());
                gathered[spine[j]] = Some(sys[k - j].clone());
            }
            into.push(ch[0].clone());
            gathered[outer_leaf] = Some(sys[0].clone());
        } else {
            let mut chain = vec![rows.clone()];
            chain.extend(outer_maps.iter().cloned());
            let mut systems: Vec<WeightedParticleSystem> = Vec::with_capacity(k);
            for &id in spine.iter().skip(1) {
                systems.push(ledger.get(id)?.state.clone());
            }
            systems.push(ledger.get(outer_leaf)?.state.clone());
            let (sys, ch) = back_right_update(&chain, &systems)?;
            into.push(rows);
            for j in 1..=k {
                into.push(ch[j].clone());
                if j < k {
                    gathered[spine[j]] = Some(sys[j - 1].clone());
                }
            }
            gathered[outer_leaf] = Some(sys[k - 1].clone());
        }
        gathered[spine[0]] = Some(ledger.get(spine[0])?.state.gather(&into[0])?);
        for (j, &id) in spine.iter().enumerate() {
            let inner = kids(id).1;
            let inner_rows = child_rows(ledger.get(id)?, !side_left)?.compose_after(&into[j])?;
            gathered[inner] = Some(ledger.get(inner)?.state.gather(&inner_rows)?);
        }
    }

    let d = ledger.labels.len();
    let mut values = vec![0.0; n * d];
    let mut order: Vec<usize> = (0..plan.nodes.len()).collect();
    order.sort_by_key(|&id| (plan.nodes[id].stage, id));
    for id in order {
        let sys = gathered[id]
            .as_ref()
            .ok_or_else(|| Error::IncompleteLedger(format!("node {id} was not reached")))?;
        let cols: Vec<usize> = sys
            .labels()
            .iter()
            .map(|l| {
                ledger
                    .labels
                    .iter()
                    .position(|g| g == l)
                    .ok_or_else(|| Error::IncompleteLedger(format!("unknown label `{l}`")))
            })
            .collect::<Result<_>>()?;
        for i in 0..n {
            let r = sys.row(i);
            for (k, &c) in cols.iter().enumerate() {
                values[i * d + c] = r[k];
            }
        }
    }
    WeightedParticleSystem::new(ledger.labels.clone(), values, root.state.log_weights().to_vec())
}
