//! Chain and torus geometries.
//!
//! Torus link indexing: unit cell `(x, y)` has index `c = y * L + x` and owns
//! two links, the horizontal link `2c` from vertex `(x, y)` to `(x + 1, y)` and
//! the vertical link `2c + 1` from `(x, y)` to `(x, y + 1)`. Vertex `(x, y)` has
//! index `c`, and plaquette `c` is the unit square whose lower-left corner is
//! vertex `c`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Open,
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    Chain,
    TorusLinks,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub n_sites: usize,
    pub bonds: Vec<[usize; 2]>,
    /// Links ordered bottom, right, top, left.
    pub plaquettes: Vec<[usize; 4]>,
    /// Links ordered right, up, left, down.
    pub vertex_stars: Vec<[usize; 4]>,
    pub boundary: Boundary,
    pub geometry: Geometry,
    pub linear_size: usize,
}

pub fn build_chain(l: usize, boundary: Boundary) -> Result<Lattice> {
    if l < 2 {
        return Err(Error::InvalidSize { what: "chain length", value: l });
    }
    let mut bonds: Vec<[usize; 2]> = (0..l - 1).map(|i| [i, i + 1]).collect();
    if boundary == Boundary::Periodic {
        bonds.push([l - 1, 0]);
    }
    Ok(Lattice {
        n_sites: l,
        bonds,
        plaquettes: Vec::new(),
        vertex_stars: Vec::new(),
        boundary,
        geometry: Geometry::Chain,
        linear_size: l,
    })
}

pub fn build_torus_links(l: usize) -> Result<Lattice> {
    if l < 2 {
        return Err(Error::InvalidSize { what: "torus size", value: l });
    }
    let t = Torus { l };
    let mut plaquettes = Vec::with_capacity(l * l);
    let mut vertex_stars = Vec::with_capacity(l * l);
    for y in 0..l {
        for x in 0..l {
            plaquettes.push([t.h(x, y), t.v(x + 1, y), t.h(x, y + 1), t.v(x, y)]);
            vertex_stars.push([t.h(x, y), t.v(x, y), t.h(x + l - 1, y), t.v(x, y + l - 1)]);
        }
    }
    Ok(Lattice {
        n_sites: 2 * l * l,
        bonds: Vec::new(),
        plaquettes,
        vertex_stars,
        boundary: Boundary::Periodic,
        geometry: Geometry::TorusLinks,
        linear_size: l,
    })
}

/// Coordinate helper for torus links; all coordinates are taken modulo `l`.
#[derive(Debug, Clone, Copy)]
pub struct Torus {
    pub l: usize,
}

impl Torus {
    pub fn cell(&self, x: usize, y: usize) -> usize {
        (y % self.l) * self.l + (x % self.l)
    }

    pub fn h(&self, x: usize, y: usize) -> usize {
        2 * self.cell(x, y)
    }

    pub fn v(&self, x: usize, y: usize) -> usize {
        2 * self.cell(x, y) + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub sites: Vec<usize>,
    pub label: String,
}

impl Region {
    /// Sorts and validates `sites` against a lattice of `n_sites` sites.
    pub fn new(label: impl Into<String>, mut sites: Vec<usize>, n_sites: usize) -> Result<Self> {
        sites.sort_unstable();
        let label = label.into();
        if let Some(&bad) = sites.iter().find(|&&s| s >= n_sites) {
            return Err(Error::InvalidRegion(format!("{label}: site {bad} >= {n_sites}")));
        }
        if sites.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidRegion(format!("{label}: duplicate sites")));
        }
        Ok(Region { sites, label })
    }

    pub fn empty(label: impl Into<String>) -> Self {
        Region { sites: Vec::new(), label: label.into() }
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn contains(&self, s: usize) -> bool {
        self.sites.binary_search(&s).is_ok()
    }

    pub fn complement(&self, n_sites: usize, label: impl Into<String>) -> Region {
        let sites = (0..n_sites).filter(|s| !self.contains(*s)).collect();
        Region { sites, label: label.into() }
    }

    pub fn union(&self, other: &Region, label: impl Into<String>) -> Region {
        let mut sites: Vec<usize> = self.sites.iter().chain(&other.sites).copied().collect();
        sites.sort_unstable();
        sites.dedup();
        Region { sites, label: label.into() }
    }

    pub fn mask(&self, n_sites: usize) -> Vec<bool> {
        let mut m = vec![false; n_sites];
        for &s in &self.sites {
            m[s] = true;
        }
        m
    }
}

/// The `ell` sites centred on the middle of the chain; regions of equal parity are nested.
pub fn mid_chain_region(lat: &Lattice, ell: usize) -> Result<Region> {
    if lat.geometry != Geometry::Chain {
        return Err(Error::UnsupportedGeometry("mid-chain region needs a chain".into()));
    }
    let l = lat.n_sites;
    if ell > l {
        return Err(Error::InvalidSize { what: "region length", value: ell });
    }
    let start = l / 2 - ell / 2;
    Region::new(format!("mid{ell}"), (start..start + ell).collect(), l)
}

/// Sites `0..L/2`.
pub fn half_chain(lat: &Lattice) -> Result<Region> {
    if lat.geometry != Geometry::Chain {
        return Err(Error::UnsupportedGeometry("half chain needs a chain".into()));
    }
    Region::new("half", (0..lat.n_sites / 2).collect(), lat.n_sites)
}

/// Contiguous thirds `A`, `B`, `C` of a chain whose length is divisible by 3.
pub fn chain_thirds(lat: &Lattice) -> Result<[Region; 3]> {
    if lat.geometry != Geometry::Chain {
        return Err(Error::UnsupportedGeometry("thirds need a chain".into()));
    }
    let l = lat.n_sites;
    if l % 3 != 0 {
        return Err(Error::InvalidSize { what: "chain length for thirds", value: l });
    }
    let t = l / 3;
    Ok([
        Region::new("A", (0..t).collect(), l)?,
        Region::new("B", (t..2 * t).collect(), l)?,
        Region::new("C", (2 * t..l).collect(), l)?,
    ])
}

/// Links of the stars of the `L/2 x L/2` vertex block at the origin, and the
/// subset of them that dangle out of the block.
pub fn square_region(lat: &Lattice, l: usize) -> Result<(Region, Region)> {
    if lat.geometry != Geometry::TorusLinks {
        return Err(Error::UnsupportedGeometry("square region needs a torus".into()));
    }
    if l != lat.linear_size || l % 2 != 0 {
        return Err(Error::InvalidSize { what: "square region torus size", value: l });
    }
    vertex_block_region(lat, l / 2)
}

/// Star union of the `k x k` vertex block at the origin, with its dangling links.
pub fn vertex_block_region(lat: &Lattice, k: usize) -> Result<(Region, Region)> {
    if lat.geometry != Geometry::TorusLinks {
        return Err(Error::UnsupportedGeometry("vertex block needs a torus".into()));
    }
    let l = lat.linear_size;
    if k == 0 || k > l {
        return Err(Error::InvalidSize { what: "vertex block", value: k });
    }
    let t = Torus { l };
    let mut in_block = vec![false; l * l];
    for y in 0..k {
        for x in 0..k {
            in_block[t.cell(x, y)] = true;
        }
    }
    let mut links = Vec::new();
    for (v, star) in lat.vertex_stars.iter().enumerate() {
        if in_block[v] {
            links.extend_from_slice(star);
        }
    }
    links.sort_unstable();
    links.dedup();
    let a = Region::new(format!("block{k}"), links, lat.n_sites)?;
    let boundary = boundary_links(lat, &a);
    Ok((a, Region::new(format!("block{k}_boundary"), boundary, lat.n_sites)?))
}

/// Links of `a` touching a vertex whose star is not fully inside `a`.
pub fn boundary_links(lat: &Lattice, a: &Region) -> Vec<usize> {
    let mask = a.mask(lat.n_sites);
    let mut out = Vec::new();
    for star in &lat.vertex_stars {
        if star.iter().all(|&s| mask[s]) {
            continue;
        }
        out.extend(star.iter().copied().filter(|&s| mask[s]));
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Links on the boundary of the `a x b` plaquette rectangle with lower-left cell `(x0, y0)`.
pub fn wilson_loop(lat: &Lattice, x0: usize, y0: usize, a: usize, b: usize) -> Result<Region> {
    if lat.geometry != Geometry::TorusLinks {
        return Err(Error::UnsupportedGeometry("Wilson loop needs a torus".into()));
    }
    let l = lat.linear_size;
    if a == 0 || b == 0 || a >= l || b >= l {
        return Err(Error::InvalidSize { what: "Wilson loop side", value: a.max(b) });
    }
    let t = Torus { l };
    let mut links = Vec::with_capacity(2 * (a + b));
    for i in 0..a {
        links.push(t.h(x0 + i, y0));
        links.push(t.h(x0 + i, y0 + b));
    }
    for j in 0..b {
        links.push(t.v(x0, y0 + j));
        links.push(t.v(x0 + a, y0 + j));
    }
    Region::new(format!("W{a}x{b}@{x0},{y0}"), links, lat.n_sites)
}

/// The two non-contractible link sets cut by horizontal and vertical dual lines.
/// Each plaquette shares an even number of links with either set.
pub fn torus_cuts(lat: &Lattice) -> Result<[Vec<usize>; 2]> {
    if lat.geometry != Geometry::TorusLinks {
        return Err(Error::UnsupportedGeometry("cuts need a torus".into()));
    }
    let l = lat.linear_size;
    let t = Torus { l };
    Ok([(0..l).map(|x| t.v(x, 0)).collect(), (0..l).map(|y| t.h(0, y)).collect()])
}

/// `region` shifted by `(dx, dy)` unit cells on the torus.
pub fn translate_region(lat: &Lattice, region: &Region, dx: usize, dy: usize) -> Result<Region> {
    if lat.geometry != Geometry::TorusLinks {
        return Err(Error::UnsupportedGeometry("translations need a torus".into()));
    }
    let l = lat.linear_size;
    let t = Torus { l };
    let sites = region
        .sites
        .iter()
        .map(|&s| {
            let c = s / 2;
            2 * t.cell(c % l + dx, c / l + dy) + s % 2
        })
        .collect();
    Region::new(format!("{}+({dx},{dy})", region.label), sites, lat.n_sites)
}

/// All translates of `region` on a torus or a ring, starting with the region itself.
pub fn translates(lat: &Lattice, region: &Region) -> Result<Vec<Region>> {
    match (lat.geometry, lat.boundary) {
        (Geometry::TorusLinks, _) => {
            let l = lat.linear_size;
            (0..l * l).map(|k| translate_region(lat, region, k % l, k / l)).collect()
        }
        (Geometry::Chain, Boundary::Periodic) => {
            let l = lat.n_sites;
            (0..l)
                .map(|d| Region::new(format!("{}+{d}", region.label), region.sites.iter().map(|&s| (s + d) % l).collect(), l))
                .collect()
        }
        (Geometry::Chain, Boundary::Open) => Err(Error::UnsupportedGeometry("open chains have no translations".into())),
    }
}
