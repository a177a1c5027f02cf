//! The transverse-field Ising chain and the Z2 gauge theory on a torus.
//!
//! Both models share one structure. An "A" operator acts on a single site,
//! needs the site's b-layer bit to be 0 and flips its a-layer bit. A "B"
//! operator acts on a bond or plaquette, needs even a-layer parity on its
//! sites and flips their b-layer bits. For the Ising chain the a-layer is
//! `r^x` and the b-layer is `r^z`; for the gauge theory the roles swap.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bell::BellConfig;
use crate::error::{Error, Result};
use crate::lattice::{build_chain, build_torus_links, torus_cuts, Boundary, Geometry, Lattice};
use crate::sse::{OpKind, OperatorEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Tfim1d,
    Z2Lgt2d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Z,
    X,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub h: f64,
    pub lattice: Lattice,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, h: f64, lattice: Lattice) -> Result<Self> {
        if !(h >= 0.0) || !h.is_finite() {
            return Err(Error::config("h", format!("coupling must be finite and non-negative, got {h}")));
        }
        let ok = matches!(
            (kind, lattice.geometry),
            (ModelKind::Tfim1d, Geometry::Chain) | (ModelKind::Z2Lgt2d, Geometry::TorusLinks)
        );
        if !ok {
            return Err(Error::UnsupportedGeometry(format!("{kind:?} on {:?}", lattice.geometry)));
        }
        Ok(ModelSpec { kind, h, lattice })
    }

    pub fn tfim(l: usize, h: f64, boundary: Boundary) -> Result<Self> {
        Self::new(ModelKind::Tfim1d, h, build_chain(l, boundary)?)
    }

    pub fn lgt(l: usize, h: f64) -> Result<Self> {
        Self::new(ModelKind::Z2Lgt2d, h, build_torus_links(l)?)
    }

    pub fn n_sites(&self) -> usize {
        self.lattice.n_sites
    }

    pub fn a_layer(&self) -> Layer {
        match self.kind {
            ModelKind::Tfim1d => Layer::X,
            ModelKind::Z2Lgt2d => Layer::Z,
        }
    }

    pub fn b_layer(&self) -> Layer {
        match self.kind {
            ModelKind::Tfim1d => Layer::Z,
            ModelKind::Z2Lgt2d => Layer::X,
        }
    }

    /// Site lists of the B loci (bonds or plaquettes).
    pub fn b_loci(&self) -> Vec<Vec<usize>> {
        match self.kind {
            ModelKind::Tfim1d => self.lattice.bonds.iter().map(|b| b.to_vec()).collect(),
            ModelKind::Z2Lgt2d => self.lattice.plaquettes.iter().map(|p| p.to_vec()).collect(),
        }
    }

    /// Parities of the sampled strings that no update changes, given as site
    /// sets for `r^z` and for `r^x` respectively.
    pub fn conserved_parities(&self) -> Result<ConservedParities> {
        Ok(match self.kind {
            ModelKind::Tfim1d => ConservedParities {
                z_sets: vec![(0..self.n_sites()).collect()],
                x_sets: Vec::new(),
            },
            ModelKind::Z2Lgt2d => {
                let mut x_sets: Vec<Vec<usize>> =
                    self.lattice.vertex_stars.iter().map(|s| s.to_vec()).collect();
                x_sets.extend(torus_cuts(&self.lattice)?);
                ConservedParities { z_sets: Vec::new(), x_sets }
            }
        })
    }
}

/// Site sets whose `r^z` (resp. `r^x`) parity stays 0 along every run.
#[derive(Debug, Clone, PartialEq)]
pub struct ConservedParities {
    pub z_sets: Vec<Vec<usize>>,
    pub x_sets: Vec<Vec<usize>>,
}

impl ConservedParities {
    pub fn holds(&self, cfg: &BellConfig) -> bool {
        let par = |set: &Vec<usize>, f: &dyn Fn(usize) -> bool| set.iter().filter(|&&i| f(i)).count() % 2 == 0;
        self.z_sets.iter().all(|s| par(s, &|i| cfg.z(i))) && self.x_sets.iter().all(|s| par(s, &|i| cfg.x(i)))
    }
}

/// Flat locus tables used by the engine.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorTable {
    pub n_a: usize,
    pub n_b: usize,
    pub a_coupling: f64,
    pub b_coupling: f64,
    pub b_arity: usize,
    b_sites: Vec<u32>,
    site_loci: Vec<u32>,
    site_loci_start: Vec<u32>,
}

impl OperatorTable {
    #[inline]
    pub fn b_sites(&self, k: usize) -> &[u32] {
        &self.b_sites[k * self.b_arity..(k + 1) * self.b_arity]
    }

    /// B loci containing site `i`.
    #[inline]
    pub fn loci_of(&self, i: usize) -> &[u32] {
        &self.site_loci[self.site_loci_start[i] as usize..self.site_loci_start[i + 1] as usize]
    }

    pub fn n_loci(&self) -> usize {
        self.n_a + self.n_b
    }

    /// Every site lies on a nonzero even number of loci, so the product of
    /// all locus flips is the identity.
    pub fn twistable(&self) -> bool {
        self.n_b > 0 && self.site_loci_start.windows(2).all(|w| w[1] > w[0] && (w[1] - w[0]) % 2 == 0)
    }

    pub fn max_site_loci(&self) -> usize {
        self.site_loci_start.windows(2).map(|w| (w[1] - w[0]) as usize).max().unwrap_or(0)
    }
}

pub fn operator_table(model: &ModelSpec) -> OperatorTable {
    let loci = model.b_loci();
    let n = model.n_sites();
    let b_arity = match model.kind {
        ModelKind::Tfim1d => 2,
        ModelKind::Z2Lgt2d => 4,
    };
    let b_sites: Vec<u32> = loci.iter().flatten().map(|&s| s as u32).collect();
    let mut per_site: Vec<Vec<u32>> = vec![Vec::new(); n];
    for (k, sites) in loci.iter().enumerate() {
        for &s in sites {
            per_site[s].push(k as u32);
        }
    }
    let mut site_loci_start = Vec::with_capacity(n + 1);
    let mut site_loci = Vec::new();
    for v in &per_site {
        site_loci_start.push(site_loci.len() as u32);
        site_loci.extend_from_slice(v);
    }
    site_loci_start.push(site_loci.len() as u32);
    OperatorTable {
        n_a: n,
        n_b: loci.len(),
        a_coupling: model.h,
        b_coupling: 1.0,
        b_arity,
        b_sites,
        site_loci,
        site_loci_start,
    }
}

fn layer_bit(cfg: &BellConfig, layer: Layer, i: usize) -> bool {
    match layer {
        Layer::Z => cfg.z(i),
        Layer::X => cfg.x(i),
    }
}

/// Whether a diagonal operator may be swapped for its off-diagonal partner
/// in the given slice state.
pub fn flippable(entry: OperatorEntry, state: &BellConfig, model: &ModelSpec) -> Result<bool> {
    match entry.kind {
        OpKind::DiagA => {
            let i = entry.locus as usize;
            if i >= model.n_sites() {
                return Err(Error::IndexOutOfRange { index: i, len: model.n_sites() });
            }
            Ok(!layer_bit(state, model.b_layer(), i))
        }
        OpKind::DiagB => {
            let loci = model.b_loci();
            let k = entry.locus as usize;
            let sites = loci.get(k).ok_or(Error::IndexOutOfRange { index: k, len: loci.len() })?;
            Ok(sites.iter().filter(|&&i| layer_bit(state, model.a_layer(), i)).count() % 2 == 0)
        }
        other => Err(Error::Corruption(format!("flippable called on {other:?}"))),
    }
}

/// Uniform random pairing of the four plaquette links into two groups.
pub fn split_plaquette_vertex<R: Rng + ?Sized>(plaquette: [usize; 4], rng: &mut R) -> ([usize; 2], [usize; 2]) {
    let [a, b, c, d] = plaquette;
    match rng.random_range(0..3) {
        0 => ([a, b], [c, d]),
        1 => ([a, c], [b, d]),
        _ => ([a, d], [b, c]),
    }
}

/// All sites in `|0,0>`; satisfies every conserved parity.
pub fn initial_config(model: &ModelSpec) -> BellConfig {
    BellConfig::identity(model.n_sites())
}
