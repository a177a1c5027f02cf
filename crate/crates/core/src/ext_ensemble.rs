//! Extended ensemble `Q(lambda) = sum_P lambda^{wt P} Tr(P rho P rho)` over
//! strings `P` supported on a region `A`, and thermodynamic integration of
//! `d ln Q / d lambda` from 0 to 1 to obtain the Renyi-2 entropy of `A`.
//!
//! Two samplers are provided. `SubsetB` keeps an auxiliary subset `B` of `A`
//! whose complement is frozen to `|0,0>` at slice 0; `AnalyticB` sums `B` out
//! and reweights slice-0 cluster flips by `lambda^{wt}` instead.

use std::io::Write;
use std::num::NonZeroUsize;
use std::sync::Arc;

use gauss_quad::legendre::GaussLegendre;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bell::SiteMask;
use crate::error::{Error, Result};
use crate::estimators::Accumulator;
use crate::lattice::Region;
use crate::models::ModelSpec;
use crate::sse::{ChainState, SliceZeroRule};
use crate::stats::{BinnedSeries, Estimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiMethod {
    SubsetB,
    AnalyticB,
}

/// Metropolis factor `min(1, lambda^dwt)` for a slice-0 flip changing the
/// weight on `A` by `dwt`.
#[inline]
pub fn flip_acceptance(lambda: f64, dwt: i64) -> f64 {
    if dwt <= 0 {
        1.0
    } else {
        lambda.powi(dwt as i32)
    }
}

/// Acceptance of a flip in the analytic method. Flips touching frozen sites
/// outside `A` are never accepted.
pub fn constrained_flip_analytic(lambda: f64, wt_before: usize, wt_after: usize, touches_outside: bool) -> f64 {
    if touches_outside {
        0.0
    } else {
        flip_acceptance(lambda, wt_after as i64 - wt_before as i64)
    }
}

/// Probabilities of removing a site from `B` and of adding one.
pub fn subset_move_probabilities(lambda: f64) -> (f64, f64) {
    let remove = if lambda <= 0.0 { 1.0 } else { ((1.0 - lambda) / lambda).min(1.0) };
    let add = if lambda >= 1.0 { 1.0 } else { (lambda / (1.0 - lambda)).min(1.0) };
    (remove, add)
}

#[derive(Debug, Clone)]
pub struct ExtEnsembleState {
    pub lambda: f64,
    pub region: Region,
    pub method: TiMethod,
    /// Membership in `B` per site; all of `A` for the analytic method.
    pub active: Vec<bool>,
    pub chain: ChainState,
    in_a: Vec<bool>,
    frozen: Vec<bool>,
    a_mask: SiteMask,
}

impl ExtEnsembleState {
    /// Starts from a chain whose slice 0 is `|0,0>` outside `A`.
    pub fn new(chain: ChainState, region: Region, lambda: f64, method: TiMethod) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::config("lambda", format!("{lambda} outside [0, 1]")));
        }
        let n = chain.model().n_sites();
        let in_a = region.mask(n);
        if let Some(i) = (0..n).find(|&i| !in_a[i] && (chain.cfg0.z(i) || chain.cfg0.x(i))) {
            return Err(Error::InvalidRegion(format!("site {i} outside {} is not |0,0>", region.label)));
        }
        let active = match method {
            TiMethod::AnalyticB => in_a.clone(),
            TiMethod::SubsetB => {
                let all_identity = region.sites.iter().all(|&i| !chain.cfg0.z(i) && !chain.cfg0.x(i));
                if all_identity && lambda < 0.5 {
                    vec![false; n]
                } else {
                    in_a.clone()
                }
            }
        };
        let a_mask = SiteMask::from_region(n, &region)?;
        let mut st = ExtEnsembleState { lambda, region, method, active, chain, in_a, frozen: vec![false; n], a_mask };
        st.refresh_frozen();
        Ok(st)
    }

    fn refresh_frozen(&mut self) {
        for i in 0..self.frozen.len() {
            self.frozen[i] = !self.active[i];
        }
    }

    /// Sequential add/remove proposals for every site of `A`.
    pub fn subset_update(&mut self) -> Result<()> {
        if self.method != TiMethod::SubsetB {
            return Err(Error::UnsupportedMode("subset update needs the subset method".into()));
        }
        let (p_remove, p_add) = subset_move_probabilities(self.lambda);
        for k in 0..self.region.sites.len() {
            let j = self.region.sites[k];
            let rng = &mut self.chain.rng;
            if self.active[j] {
                let identity = !self.chain.cfg0.z(j) && !self.chain.cfg0.x(j);
                if identity && (p_remove >= 1.0 || rng.random::<f64>() < p_remove) {
                    self.active[j] = false;
                }
            } else if p_add >= 1.0 || rng.random::<f64>() < p_add {
                self.active[j] = true;
            }
        }
        self.refresh_frozen();
        Ok(())
    }

    pub fn sweep(&mut self) -> Result<()> {
        match self.method {
            TiMethod::SubsetB => {
                self.subset_update()?;
                self.chain.sweep_with(&SliceZeroRule::Frozen(&self.frozen))
            }
            TiMethod::AnalyticB => self.chain.sweep_with(&SliceZeroRule::Weighted {
                frozen: &self.frozen,
                region: &self.in_a,
                lambda: self.lambda,
            }),
        }
    }

    pub fn n_a(&self) -> usize {
        self.region.len()
    }

    pub fn n_b(&self) -> usize {
        self.region.sites.iter().filter(|&&i| self.active[i]).count()
    }

    /// Weight of the slice-0 string on `A`.
    pub fn weight(&self) -> usize {
        self.chain.cfg0.weight_on(&self.a_mask)
    }

    /// `N_B / lambda - (N_A - N_B) / (1 - lambda)`.
    pub fn e1(&self) -> Result<f64> {
        if self.method != TiMethod::SubsetB {
            return Err(Error::UnsupportedMode("e1 needs the subset method".into()));
        }
        e1_value(self.n_a(), self.n_b(), self.lambda)
    }

    /// `wt / lambda`.
    pub fn e2(&self) -> Result<f64> {
        e2_value(self.weight(), self.lambda)
    }

    /// Checks the slice-0 constraints of the ensemble.
    pub fn check(&self) -> Result<()> {
        for i in 0..self.frozen.len() {
            if self.frozen[i] && (self.chain.cfg0.z(i) || self.chain.cfg0.x(i)) {
                return Err(Error::Corruption(format!("frozen site {i} is not |0,0>")));
            }
        }
        self.chain.check_invariant()
    }
}

pub fn e1_value(n_a: usize, n_b: usize, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::config("lambda", format!("e1 undefined at {lambda}")));
    }
    Ok(n_b as f64 / lambda - (n_a - n_b) as f64 / (1.0 - lambda))
}

pub fn e2_value(wt: usize, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::config("lambda", format!("e2 undefined at {lambda}")));
    }
    Ok(wt as f64 / lambda)
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre_grid(k: usize) -> Result<Vec<(f64, f64)>> {
    let deg = NonZeroUsize::new(k).ok_or(Error::InvalidSize { what: "quadrature nodes", value: 0 })?;
    let mut grid: Vec<(f64, f64)> =
        GaussLegendre::new(deg).as_node_weight_pairs().iter().map(|&(x, w)| ((x + 1.0) / 2.0, w / 2.0)).collect();
    grid.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(grid)
}

/// `S2 = N_A ln 2 - sum_k w_k <e>_k`, errors added in quadrature.
pub fn integrate_s2(grid: &[(f64, f64)], means: &[Estimate], n_a: usize) -> Result<Estimate> {
    if grid.len() != means.len() {
        return Err(Error::LengthMismatch { expected: grid.len(), got: means.len() });
    }
    let integral: f64 = grid.iter().zip(means).map(|(g, m)| g.1 * m.value).sum();
    let err = grid.iter().zip(means).map(|(g, m)| (g.1 * m.error).powi(2)).sum::<f64>().sqrt();
    Ok(Estimate::new(n_a as f64 * std::f64::consts::LN_2 - integral, err))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeParams {
    pub lambda: f64,
    pub weight: f64,
    pub method: TiMethod,
    pub beta: f64,
    pub n_equilibration: usize,
    pub n_measurement: usize,
    pub block_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeResult {
    pub lambda: f64,
    pub weight: f64,
    pub method: TiMethod,
    pub e1: Option<BinnedSeries>,
    pub e2: BinnedSeries,
    pub n_samples: u64,
    pub cutoff: usize,
}

impl NodeResult {
    pub fn e2_estimate(&self) -> Estimate {
        self.e2.estimate()
    }
}

/// Equilibrates and measures one `lambda` node on its own chain.
pub fn run_node(model: Arc<ModelSpec>, region: &Region, p: &NodeParams) -> Result<NodeResult> {
    let chain = ChainState::new(model, p.beta, p.seed)?;
    let mut st = ExtEnsembleState::new(chain, region.clone(), p.lambda, p.method)?;
    for _ in 0..p.n_equilibration {
        st.sweep()?;
        st.chain.grow_cutoff();
    }
    let mut e1 = Accumulator::new(p.block_size)?;
    let mut e2 = Accumulator::new(p.block_size)?;
    for _ in 0..p.n_measurement {
        st.sweep()?;
        if p.method == TiMethod::SubsetB {
            e1.push(st.e1()?);
        }
        e2.push(st.e2()?);
    }
    Ok(NodeResult {
        lambda: p.lambda,
        weight: p.weight,
        method: p.method,
        e1: if p.method == TiMethod::SubsetB { Some(e1.series()?) } else { None },
        e2: e2.series()?,
        n_samples: e2.n_samples,
        cutoff: st.chain.ops.cutoff(),
    })
}

/// Integrates the node means of `e2` (or `e1` if asked and available).
pub fn s2_from_nodes(nodes: &[NodeResult], n_a: usize, use_e1: bool) -> Result<Estimate> {
    let grid: Vec<(f64, f64)> = nodes.iter().map(|n| (n.lambda, n.weight)).collect();
    let means = nodes
        .iter()
        .enumerate()
        .map(|(k, n)| {
            if use_e1 {
                n.e1.as_ref().map(|s| s.estimate()).ok_or_else(|| Error::NodeFailed {
                    node: k,
                    lambda: n.lambda,
                    source: Box::new(Error::UnsupportedMode("node has no e1 series".into())),
                })
            } else {
                Ok(n.e2_estimate())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    integrate_s2(&grid, &means, n_a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NodeRow {
    lambda: f64,
    weight: f64,
    e1_mean: Option<f64>,
    e1_stderr: Option<f64>,
    e1_bin_variance: Option<f64>,
    e2_mean: f64,
    e2_stderr: f64,
    e2_bin_variance: f64,
    n_samples: u64,
}

pub fn write_nodes_csv<W: Write>(nodes: &[NodeResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for n in nodes {
        w.serialize(NodeRow {
            lambda: n.lambda,
            weight: n.weight,
            e1_mean: n.e1.as_ref().map(|s| s.mean),
            e1_stderr: n.e1.as_ref().map(|s| s.stderr),
            e1_bin_variance: n.e1.as_ref().map(|s| s.bin_variance()),
            e2_mean: n.e2.mean,
            e2_stderr: n.e2.stderr,
            e2_bin_variance: n.e2.bin_variance(),
            n_samples: n.n_samples,
        })
        .map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
