//! Stage schedules for the multi-stage sampler.
//!
//! Submodel and block indices are zero-based here; [`StagePlan::summary`]
//! reports them one-based.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::melding::Role;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanCase {
    /// Odd `M` with `4 | M+1`.
    OddFourDividesMPlus1,
    /// Odd `M` with `4 | M-1`.
    OddFourDividesMMinus1,
    /// Even `M` with `4 | M`.
    EvenFourDividesM,
    /// Even `M` with `4 ∤ M`.
    EvenFourNotDividesM,
}

impl PlanCase {
    pub fn of(m: usize) -> Self {
        match (m % 2, m % 4) {
            (1, 3) => PlanCase::OddFourDividesMPlus1,
            (1, _) => PlanCase::OddFourDividesMMinus1,
            (_, 0) => PlanCase::EvenFourDividesM,
            _ => PlanCase::EvenFourNotDividesM,
        }
    }

    /// Number of stages for `m` submodels.
    pub fn stage_count(self, m: usize) -> usize {
        match self {
            PlanCase::OddFourDividesMPlus1 => (m + 5) / 4,
            PlanCase::OddFourDividesMMinus1 => (m + 7) / 4,
            PlanCase::EvenFourDividesM => (m + 4) / 4,
            PlanCase::EvenFourNotDividesM => (m + 6) / 4,
        }
    }
}

/// One node of the merge tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanNode {
    pub id: usize,
    pub stage: usize,
    /// Submodels activated by this node (one, or the joint centre pair).
    pub submodels: Vec<usize>,
    /// `(left, right)` child node ids; `None` for first-stage leaves.
    pub children: Option<(usize, usize)>,
    /// First and last submodel of the segment this node completes.
    pub segment: (usize, usize),
    /// Blocks moved by this node's sampler.
    pub owned_blocks: Vec<usize>,
    /// Owned blocks that no child has sampled yet.
    pub new_blocks: Vec<usize>,
}

impl PlanNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub nodes: Vec<usize>,
    /// `(m_L, m_R)` for stages that grow both sides at once.
    pub lr: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePlan {
    pub m: usize,
    pub case: PlanCase,
    pub stages: Vec<Stage>,
    pub nodes: Vec<PlanNode>,
    pub root: usize,
    /// Non-leaf nodes from the root's left child outwards.
    pub left_spine: Vec<usize>,
    /// Non-leaf nodes from the root's right child outwards.
    pub right_spine: Vec<usize>,
}

/// One-based rendering of a stage for manifests and tests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: usize,
    pub submodels: Vec<Vec<usize>>,
}

enum Unit {
    Single(usize),
    Pair(usize),
}

pub fn plan_stages(m: usize) -> Result<StagePlan> {
    if m < 3 {
        return Err(Error::config(format!("a stage plan needs M >= 3, got {m}")));
    }
    let case = PlanCase::of(m);
    // one-based indices throughout this block, as in the usual enumeration
    let odd: Vec<usize> = (1..=m).step_by(2).collect();
    let lr = |s: usize| (2 * s - 2, m + 3 - 2 * s);
    let mut stages: Vec<(Vec<Unit>, Option<(usize, usize)>)> = Vec::new();
    match case {
        PlanCase::OddFourDividesMPlus1 => {
            stages.push((odd.iter().map(|&k| Unit::Single(k)).collect(), None));
            for s in 2..=(m + 1) / 4 {
                let (l, r) = lr(s);
                stages.push((vec![Unit::Single(l), Unit::Single(r)], Some((l, r))));
            }
            stages.push((vec![Unit::Single(m.div_ceil(2))], None));
        }
        PlanCase::OddFourDividesMMinus1 => {
            stages.push((odd.iter().map(|&k| Unit::Single(k)).collect(), None));
            for s in 2..=(m - 1) / 4 {
                let (l, r) = lr(s);
                stages.push((vec![Unit::Single(l), Unit::Single(r)], Some((l, r))));
            }
            stages.push((vec![Unit::Single((m - 1) / 2)], None));
            stages.push((vec![Unit::Single((m + 1) / 2 + 1)], None));
        }
        PlanCase::EvenFourDividesM => {
            let h = m / 2;
            let first: Vec<usize> = (1..h).step_by(2).chain((h + 2..=m).step_by(2)).collect();
            stages.push((first.into_iter().map(Unit::Single).collect(), None));
            for s in 2..=m / 4 {
                let (l, r) = lr(s);
                stages.push((vec![Unit::Single(l), Unit::Single(r)], Some((l, r))));
            }
            stages.push((vec![Unit::Pair(h)], None));
        }
        PlanCase::EvenFourNotDividesM => {
            let h = m / 2;
            let first: Vec<usize> = (1..=h).step_by(2).chain((h + 3..=m).step_by(2)).collect();
            stages.push((first.into_iter().map(Unit::Single).collect(), None));
            for s in 2..=(m - 2) / 4 {
                let (l, r) = lr(s);
                stages.push((vec![Unit::Single(l), Unit::Single(r)], Some((l, r))));
            }
            stages.push((vec![Unit::Single(h - 1)], None));
            stages.push((vec![Unit::Pair(h + 1)], None));
        }
    }

    let mut nodes: Vec<PlanNode> = Vec::new();
    let mut segments: Vec<(usize, usize, usize)> = Vec::new();
    let mut out_stages = Vec::new();
    for (si, (units, pair)) in stages.into_iter().enumerate() {
        let mut ids = Vec::new();
        for u in units {
            let subs: Vec<usize> = match u {
                Unit::Single(k) => vec![k - 1],
                Unit::Pair(k) => vec![k - 1, k],
            };
            let (lo, hi) = (subs[0], *subs.last().unwrap());
            let id = nodes.len();
            if si == 0 {
                let owned: Vec<usize> = [lo.checked_sub(1), Some(lo).filter(|&b| b + 1 < m)]
                    .into_iter()
                    .flatten()
                    .collect();
                nodes.push(PlanNode {
                    id,
                    stage: 1,
                    submodels: subs,
                    children: None,
                    segment: (lo, hi),
                    new_blocks: owned.clone(),
                    owned_blocks: owned,
                });
                segments.push((lo, hi, id));
            } else {
                let left = segments
                    .iter()
                    .position(|s| lo > 0 && s.1 == lo - 1)
                    .ok_or_else(|| Error::config(format!("stage plan for M={m}: no segment left of submodel {}", lo + 1)))?;
                let (lf, _, lid) = segments.remove(left);
                let right = segments
                    .iter()
                    .position(|s| s.0 == hi + 1)
                    .ok_or_else(|| Error::config(format!("stage plan for M={m}: no segment right of submodel {}", hi + 1)))?;
                let (_, rl, rid) = segments.remove(right);
                let owned: Vec<usize> = (lo - 1..=hi).filter(|&b| b + 1 < m).collect();
                let new: Vec<usize> = (lo..hi).collect();
                nodes.push(PlanNode {
                    id,
                    stage: si + 1,
                    submodels: subs,
                    children: Some((lid, rid)),
                    segment: (lf, rl),
                    owned_blocks: owned,
                    new_blocks: new,
                });
                segments.push((lf, rl, id));
            }
            ids.push(id);
        }
        out_stages.push(Stage {
            nodes: ids,
            lr: pair.map(|(l, r)| (l - 1, r - 1)),
        });
    }
    if segments.len() != 1 || segments[0].0 != 0 || segments[0].1 != m - 1 {
        return Err(Error::config(format!("stage plan for M={m} does not cover the chain")));
    }
    let root = segments[0].2;
    let (left_spine, right_spine) = spines(&nodes, root)?;
    Ok(StagePlan {
        m,
        case,
        stages: out_stages,
        nodes,
        root,
        left_spine,
        right_spine,
    })
}

fn spines(nodes: &[PlanNode], root: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let (l, r) = nodes[root].children.expect("root of a plan with M >= 3 has children");
    let walk = |start: usize, outer_left: bool| -> Result<Vec<usize>> {
        let mut spine = Vec::new();
        let mut cur = start;
        while let Some((a, b)) = nodes[cur].children {
            let (outer, inner) = if outer_left { (a, b) } else { (b, a) };
            if !nodes[inner].is_leaf() {
                return Err(Error::config("stage plan tree is not a pair of spines"));
            }
            spine.push(cur);
            cur = outer;
        }
        Ok(spine)
    };
    Ok((walk(l, true)?, walk(r, false)?))
}

impl StagePlan {
    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    /// Submodels activated at each stage, one-based.
    pub fn stage_sets(&self) -> Vec<Vec<usize>> {
        self.stages
            .iter()
            .map(|s| {
                let mut v: Vec<usize> = s
                    .nodes
                    .iter()
                    .flat_map(|&n| self.nodes[n].submodels.iter().map(|k| k + 1))
                    .collect();
                v.sort_unstable();
                v
            })
            .collect()
    }

    pub fn summary(&self) -> Vec<StageSummary> {
        self.stages
            .iter()
            .enumerate()
            .map(|(i, s)| StageSummary {
                stage: i + 1,
                submodels: s
                    .nodes
                    .iter()
                    .map(|&n| self.nodes[n].submodels.iter().map(|k| k + 1).collect())
                    .collect(),
            })
            .collect()
    }

    /// First-stage submodels keep their own prior; the rest correct.
    pub fn default_roles(&self) -> Vec<Role> {
        let mut roles = vec![Role::Correction; self.m];
        for &n in &self.stages[0].nodes {
            for &k in &self.nodes[n].submodels {
                roles[k] = Role::Original;
            }
        }
        roles
    }

    /// Node that activates submodel `k`.
    pub fn node_of(&self, k: usize) -> usize {
        self.nodes
            .iter()
            .find(|n| n.submodels.contains(&k))
            .map(|n| n.id)
            .expect("every submodel belongs to a node")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_plans() {
        let p = plan_stages(3).unwrap();
        assert_eq!(p.case, PlanCase::OddFourDividesMPlus1);
        assert_eq!(p.stage_sets(), vec![vec![1, 3], vec![2]]);

        let p = plan_stages(5).unwrap();
        assert_eq!(p.stage_sets(), vec![vec![1, 3, 5], vec![2], vec![4]]);

        let p = plan_stages(7).unwrap();
        assert_eq!(p.stage_count(), 3);
        assert_eq!(p.stage_sets()[1], vec![2, 6]);
        assert_eq!(p.stages[1].lr, Some((1, 5)));
        assert_eq!(p.stage_sets()[2], vec![4]);

        let p = plan_stages(6).unwrap();
        assert_eq!(p.stage_sets(), vec![vec![1, 3, 6], vec![2], vec![4, 5]]);
        let root = &p.nodes[p.root];
        assert_eq!(root.submodels, vec![3, 4]);
        assert_eq!(root.owned_blocks, vec![2, 3, 4]);
        assert_eq!(root.new_blocks, vec![3]);
    }

    #[test]
    fn every_plan_is_well_formed() {
        for m in 3..=20 {
            let p = plan_stages(m).unwrap();
            assert_eq!(p.stage_count(), p.case.stage_count(m), "M={m}");
            let mut all: Vec<usize> = p.stage_sets().into_iter().flatten().collect();
            all.sort_unstable();
            assert_eq!(all, (1..=m).collect::<Vec<_>>(), "M={m}");
            // each block is owned by exactly one non-leaf node: the one that
            // activates the later of its two submodels
            for b in 0..m - 1 {
                let owners: Vec<usize> = p
                    .nodes
                    .iter()
                    .filter(|n| !n.is_leaf() && n.owned_blocks.contains(&b))
                    .map(|n| n.id)
                    .collect();
                let (na, nb) = (p.node_of(b), p.node_of(b + 1));
                let later = if p.nodes[na].stage >= p.nodes[nb].stage { na } else { nb };
                assert_eq!(owners, vec![later], "M={m}, block {b}");
            }
            assert_eq!(p.left_spine.len() + p.right_spine.len() + 1 + p.stages[0].nodes.len(), p.nodes.len());
        }
    }

    #[test]
    fn m_below_three_is_rejected() {
        assert!(plan_stages(2).is_err());
    }
}
