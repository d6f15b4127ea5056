//! Tempering targets for the nodes of the merge tree.
//!
//! A node's particles carry only the coordinates the node moves: its owned
//! blocks and the ψ of the submodels it activates. Everything else in its
//! segment is read from the merged input row the particle descends from.

use crate::dc::merge::MergeWeight;
use crate::dc::plan::PlanNode;
use crate::error::{Error, Result};
use crate::melding::{log_ratio, ChainMeldedModel, Side};
use crate::rng::StreamRng;
use crate::smc::{scaled, TemperingTarget};

#[derive(Debug, Clone)]
enum Touch {
    /// A continuous or block coordinate: these submodels' terms change.
    Submodels(Vec<usize>),
    /// Coordinate `j` of `ψ_k`.
    Psi { k: usize, j: usize },
}

pub struct NodeTarget<'a> {
    model: &'a ChainMeldedModel,
    leaf: bool,
    active: Vec<usize>,
    outside: Vec<usize>,
    coords: Vec<usize>,
    /// New blocks and the submodel whose block prior is their reference.
    new_blocks: Vec<(usize, usize)>,
    touches: Vec<Touch>,
    ctx: Option<&'a [f64]>,
    merge_weight: Option<&'a MergeWeight>,
    dim_global: usize,
}

impl<'a> NodeTarget<'a> {
    pub fn new(
        model: &'a ChainMeldedModel,
        node: &PlanNode,
        ctx: Option<&'a [f64]>,
        merge_weight: Option<&'a MergeWeight>,
    ) -> Result<Self> {
        let layout = model.layout();
        let mut coords = Vec::new();
        for &b in &node.owned_blocks {
            coords.extend(layout.block_range(b));
        }
        for &k in &node.submodels {
            coords.extend(layout.psi_range(k));
        }
        let leaf = node.is_leaf();
        let mut new_blocks = Vec::new();
        if !leaf {
            for &b in &node.new_blocks {
                // the reference for a fresh block is the left submodel's prior on it
                let probe = vec![0.0; layout.block_range(b).len()];
                if model.block_prior(b, Side::Right, &probe).is_none() {
                    return Err(Error::config(format!(
                        "submodel {} must provide a block-factorised φ prior to seed a joint centre stage",
                        b + 1
                    )));
                }
                new_blocks.push((b, b));
            }
        }
        let (first, last) = node.segment;
        let outside = (first..=last).filter(|k| !node.submodels.contains(k)).collect();
        let touches = coords
            .iter()
            .map(|&c| {
                if c < layout.n_phi() {
                    let b = (0..layout.n_blocks())
                        .find(|&b| layout.block_range(b).contains(&c))
                        .unwrap();
                    Touch::Submodels(vec![b, b + 1])
                } else {
                    let k = (0..layout.n_submodels())
                        .find(|&k| layout.psi_range(k).contains(&c))
                        .unwrap();
                    if layout.discrete_mask()[c] {
                        Touch::Psi {
                            k,
                            j: c - layout.psi_range(k).start,
                        }
                    } else {
                        Touch::Submodels(vec![k])
                    }
                }
            })
            .collect();
        if !leaf && ctx.is_none() {
            return Err(Error::config("an internal node needs its merged input"));
        }
        Ok(Self {
            model,
            leaf,
            active: node.submodels.clone(),
            outside,
            coords,
            new_blocks,
            touches,
            ctx,
            merge_weight,
            dim_global: layout.dim(),
        })
    }

    /// Global coordinates held by a particle, in state order.
    pub fn coords(&self) -> &[usize] {
        &self.coords
    }

    fn global(&self, theta: &[f64], origin: usize) -> Vec<f64> {
        let mut x = match self.ctx {
            Some(ctx) => ctx[origin * self.dim_global..(origin + 1) * self.dim_global].to_vec(),
            None => vec![0.0; self.dim_global],
        };
        for (k, &c) in self.coords.iter().enumerate() {
            x[c] = theta[k];
        }
        x
    }

    fn leaf_prior(&self, x: &[f64]) -> f64 {
        let m = self.active[0];
        let layout = self.model.layout();
        let sm = self.model.submodel(m);
        let phi = &x[layout.phi_range(m)];
        let a = sm.log_phi_prior(phi);
        if a == f64::NEG_INFINITY {
            return a;
        }
        let b = sm.log_psi_prior(phi, &x[layout.psi_range(m)]);
        if b == f64::NEG_INFINITY {
            return b;
        }
        a + b
    }

    fn reference(&self, x: &[f64], blocks_moved: Option<&[usize]>) -> f64 {
        let layout = self.model.layout();
        let mut total = 0.0;
        for &(b, owner) in &self.new_blocks {
            if blocks_moved.is_some_and(|m| !m.contains(&b)) {
                continue;
            }
            let v = self
                .model
                .block_prior(owner, Side::Right, &x[layout.block_range(b)])
                .unwrap_or(f64::NEG_INFINITY);
            if v == f64::NEG_INFINITY {
                return v;
            }
            total += v;
        }
        if let Some(w) = self.merge_weight {
            if blocks_moved.is_none_or(|m| m.contains(&0) || m.contains(&1)) {
                let v = w.log_v(self.model, &x[layout.phi_range(1)]);
                if v == f64::NEG_INFINITY {
                    return v;
                }
                total += v;
            }
        }
        total
    }

    /// `Σ q_k + reference + log v` over the active submodels.
    fn base_extra(&self, x: &[f64]) -> f64 {
        if self.leaf {
            return self.leaf_prior(x);
        }
        let mut total = self.reference(x, None);
        if total == f64::NEG_INFINITY {
            return total;
        }
        for &k in &self.active {
            let q = self.model.log_q(k, x);
            if q == f64::NEG_INFINITY {
                return q;
            }
            total += q;
        }
        total
    }

    fn active_terms(&self, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for &k in &self.active {
            let t = self.model.term(k, x);
            if t == f64::NEG_INFINITY {
                return t;
            }
            total += t;
        }
        total
    }

    fn outside_terms(&self, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for &k in &self.outside {
            let t = self.model.term(k, x);
            if t == f64::NEG_INFINITY {
                return t;
            }
            total += t;
        }
        total
    }

    /// Draws the initial state for particle `i` from the node's base.
    pub fn init_state(&self, origin: usize, rng: &mut StreamRng) -> Vec<f64> {
        let layout = self.model.layout();
        if self.leaf {
            let m = self.active[0];
            let (phi, psi) = self.model.submodel(m).sample_prior(rng);
            return phi.into_iter().chain(psi).collect();
        }
        let ctx = self.ctx.expect("checked at construction");
        let mut x = ctx[origin * self.dim_global..(origin + 1) * self.dim_global].to_vec();
        for &(b, owner) in &self.new_blocks {
            let (phi, _) = self.model.submodel(owner).sample_prior(rng);
            let dl = self.model.submodel(owner).dim_phi_left();
            x[layout.block_range(b)].copy_from_slice(&phi[dl..]);
        }
        for &k in &self.active {
            let psi = self
                .model
                .submodel(k)
                .sample_psi_proposal(&x[layout.phi_range(k)], rng);
            x[layout.psi_range(k)].copy_from_slice(&psi);
        }
        self.coords.iter().map(|&c| x[c]).collect()
    }
}

impl TemperingTarget for NodeTarget<'_> {
    fn dim(&self) -> usize {
        self.coords.len()
    }

    fn labels(&self) -> Vec<String> {
        let l = self.model.labels();
        self.coords.iter().map(|&c| l[c].clone()).collect()
    }

    fn discrete_mask(&self) -> Vec<bool> {
        let d = self.model.layout().discrete_mask();
        self.coords.iter().map(|&c| d[c]).collect()
    }

    fn move_groups(&self) -> Vec<Vec<usize>> {
        let layout = self.model.layout();
        let pos = |c: usize| self.coords.iter().position(|&x| x == c).unwrap();
        let mut groups = Vec::new();
        for b in 0..layout.n_blocks() {
            let r = layout.block_range(b);
            if self.coords.contains(&r.start) {
                groups.push(r.map(pos).collect());
            }
        }
        for &k in &self.active {
            let start = layout.psi_range(k).start;
            for g in self.model.submodel(k).psi_move_groups() {
                groups.push(g.into_iter().map(|j| pos(start + j)).collect());
            }
        }
        groups
    }

    fn log_base(&self, theta: &[f64], origin: usize) -> f64 {
        let x = self.global(theta, origin);
        let extra = self.base_extra(&x);
        if extra == f64::NEG_INFINITY {
            return extra;
        }
        let o = self.outside_terms(&x);
        if o == f64::NEG_INFINITY {
            return o;
        }
        o + extra
    }

    fn log_target(&self, theta: &[f64], origin: usize) -> f64 {
        let x = self.global(theta, origin);
        let a = self.active_terms(&x);
        if a == f64::NEG_INFINITY {
            return a;
        }
        let o = self.outside_terms(&x);
        if o == f64::NEG_INFINITY {
            return o;
        }
        o + a
    }

    fn log_increment_ratio(&self, theta: &[f64], origin: usize) -> f64 {
        let x = self.global(theta, origin);
        log_ratio(self.active_terms(&x), self.base_extra(&x))
    }

    fn log_tempered_partial(&self, alpha: f64, theta: &[f64], origin: usize, moved: &[usize]) -> f64 {
        let x = self.global(theta, origin);
        if self.leaf {
            return tempered(alpha, self.active_terms(&x), self.base_extra(&x));
        }
        if let [single] = moved {
            if let Touch::Psi { k, j } = self.touches[*single] {
                let t = self.model.term_local(k, &x, j);
                let q = self.model.log_q_local(k, &x, j);
                return tempered(alpha, t, q);
            }
        }
        let layout = self.model.layout();
        let mut subs: Vec<usize> = Vec::new();
        let mut blocks: Vec<usize> = Vec::new();
        for &s in moved {
            match &self.touches[s] {
                Touch::Submodels(v) => {
                    for &k in v {
                        if !subs.contains(&k) {
                            subs.push(k);
                        }
                    }
                    let c = self.coords[s];
                    if c < layout.n_phi() {
                        let b = v[0];
                        if !blocks.contains(&b) {
                            blocks.push(b);
                        }
                    }
                }
                Touch::Psi { k, .. } => {
                    if !subs.contains(k) {
                        subs.push(*k);
                    }
                }
            }
        }
        let mut fixed = 0.0;
        let mut act = 0.0;
        let mut extra = self.reference(&x, Some(&blocks));
        for &k in &subs {
            let t = self.model.term(k, &x);
            if self.active.contains(&k) {
                act += t;
                extra += self.model.log_q(k, &x);
            } else {
                fixed += t;
            }
        }
        if fixed == f64::NEG_INFINITY {
            return fixed;
        }
        fixed + tempered(alpha, act, extra)
    }
}

#[inline]
fn tempered(alpha: f64, target: f64, base: f64) -> f64 {
    let a = scaled(alpha, target);
    let b = scaled(1.0 - alpha, base);
    if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        a + b
    }
}
