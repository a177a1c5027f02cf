//! Exact diagonalization references for small systems.
//!
//! Basis states are integers whose bit `i` is the `Z` eigenbit of site `i`
//! (`Z = (-1)^bit`). All Hamiltonians here are real, so every state is real.
//!
//! The sampler conserves some parities of the sampled Pauli strings (see
//! [`ConservedParities`]). Each conserved parity is the commutation character
//! of a symmetry operator `g`, and the sampled ensemble averages an
//! observable over the group `G` they generate:
//! `<sign_s> = sum_g Tr(g s rho)^2 / sum_g Tr(g rho)^2` and
//! `<swap_A> = sum_g Tr_A[(Tr_B rho g)^2] / sum_g Tr(g rho)^2`.

use std::collections::{BTreeMap, HashSet};

use faer::{Mat, Side};

use crate::bell::{BellConfig, PauliString};
use crate::error::{Error, Result};
use crate::lattice::Region;
use crate::models::{ConservedParities, ModelKind, ModelSpec};

/// Largest system handled by dense diagonalization.
pub const DENSE_MAX_SITES: usize = 12;
/// Largest system handled by the sparse ground-state solver.
pub const SPARSE_MAX_SITES: usize = 22;

fn mask_of(sites: &[usize]) -> u64 {
    sites.iter().fold(0, |m, &i| m | 1 << i)
}

#[inline]
fn parity(x: u64) -> f64 {
    if x.count_ones() & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `H = sum_k d_k Z^{m_k} + sum_k o_k X^{f_k}` with bit masks `m_k`, `f_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinHamiltonian {
    pub n: usize,
    pub diag: Vec<(f64, u64)>,
    pub off: Vec<(f64, u64)>,
}

impl SpinHamiltonian {
    #[inline]
    pub fn diag_energy(&self, s: u64) -> f64 {
        self.diag.iter().map(|&(c, m)| c * parity(s & m)).sum()
    }

    /// `out = H v` on the full space.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (s, o) in out.iter_mut().enumerate() {
            let s = s as u64;
            let mut acc = self.diag_energy(s) * v[s as usize];
            for &(c, f) in &self.off {
                acc += c * v[(s ^ f) as usize];
            }
            *o = acc;
        }
    }

    pub fn norm_bound(&self) -> f64 {
        self.diag.iter().chain(&self.off).map(|(c, _)| c.abs()).sum()
    }
}

pub fn hamiltonian(model: &ModelSpec) -> Result<SpinHamiltonian> {
    let n = model.n_sites();
    if n > 62 {
        return Err(Error::SizeOverflow(format!("{n} sites")));
    }
    let h = model.h;
    Ok(match model.kind {
        ModelKind::Tfim1d => SpinHamiltonian {
            n,
            diag: model.lattice.bonds.iter().map(|b| (-1.0, mask_of(b))).collect(),
            off: (0..n).map(|i| (-h, 1u64 << i)).collect(),
        },
        ModelKind::Z2Lgt2d => SpinHamiltonian {
            n,
            diag: (0..n).map(|i| (-h, 1u64 << i)).collect(),
            off: model.lattice.plaquettes.iter().map(|p| (-1.0, mask_of(p))).collect(),
        },
    })
}

/// An invariant subspace spanned by orbit states. Without `flip` each basis
/// vector is a single basis state; with `flip = (m, p)` it is
/// `(|r> + p |r ^ m>) / sqrt 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub n: usize,
    pub reps: Vec<u64>,
    pub flip: Option<(u64, f64)>,
}

impl Block {
    pub fn dim(&self) -> usize {
        self.reps.len()
    }

    fn canonical(&self, s: u64) -> (u64, f64) {
        match self.flip {
            Some((m, p)) if s ^ m < s => (s ^ m, p),
            _ => (s, 1.0),
        }
    }

    fn index(&self, s: u64) -> Option<usize> {
        self.reps.binary_search(&s).ok()
    }

    pub fn matrix(&self, h: &SpinHamiltonian) -> Mat<f64> {
        let d = self.dim();
        let mut m = Mat::<f64>::zeros(d, d);
        for (j, &r) in self.reps.iter().enumerate() {
            m[(j, j)] += h.diag_energy(r);
            for &(c, f) in &h.off {
                let (t, sign) = self.canonical(r ^ f);
                if let Some(i) = self.index(t) {
                    m[(i, j)] += c * sign;
                }
            }
        }
        m
    }

    /// Full-space vector of block coefficients `c`.
    pub fn embed(&self, c: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; 1 << self.n];
        match self.flip {
            None => {
                for (&r, &x) in self.reps.iter().zip(c) {
                    v[r as usize] = x;
                }
            }
            Some((m, p)) => {
                let a = std::f64::consts::FRAC_1_SQRT_2;
                for (&r, &x) in self.reps.iter().zip(c) {
                    v[r as usize] += a * x;
                    v[(r ^ m) as usize] += a * p * x;
                }
            }
        }
        v
    }

    /// `<c|sigma|c>` for a Pauli string that maps the block to itself.
    fn expectation(&self, c: &[f64], zm: u64, xm: u64) -> f64 {
        match self.flip {
            None => self
                .reps
                .iter()
                .zip(c)
                .map(|(&r, &x)| {
                    let t = r ^ xm;
                    self.index(t).map_or(0.0, |i| c[i] * x * parity(t & zm))
                })
                .sum(),
            Some(_) => {
                let v = self.embed(c);
                pauli_matrix_element(&v, &v, zm, xm)
            }
        }
    }
}

/// `<u| Z^zm X^xm |v>`.
pub fn pauli_matrix_element(u: &[f64], v: &[f64], zm: u64, xm: u64) -> f64 {
    u.iter()
        .enumerate()
        .map(|(s, &a)| {
            let s = s as u64;
            a * parity(s & zm) * v[(s ^ xm) as usize]
        })
        .sum()
}

/// Symmetry blocks of the model Hamiltonian.
pub fn blocks(model: &ModelSpec) -> Result<Vec<Block>> {
    let n = model.n_sites();
    if n > 30 {
        return Err(Error::SizeOverflow(format!("{n} sites for block decomposition")));
    }
    let dim = 1u64 << n;
    Ok(match model.kind {
        ModelKind::Tfim1d => {
            let all = dim - 1;
            let reps: Vec<u64> = (0..dim).filter(|&s| s < s ^ all).collect();
            vec![
                Block { n, reps: reps.clone(), flip: Some((all, 1.0)) },
                Block { n, reps, flip: Some((all, -1.0)) },
            ]
        }
        ModelKind::Z2Lgt2d => {
            let cons = model.conserved_parities()?;
            let masks: Vec<u64> = cons.x_sets.iter().map(|s| mask_of(s)).collect();
            let mut by_syndrome: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
            for s in 0..dim {
                let syn = masks.iter().enumerate().fold(0u64, |acc, (k, &m)| acc | (((s & m).count_ones() as u64) & 1) << k);
                by_syndrome.entry(syn).or_default().push(s);
            }
            by_syndrome.into_values().map(|reps| Block { n, reps, flip: None }).collect()
        }
    })
}

fn eigh(m: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let e = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::NoConvergence(format!("{e:?}")))?;
    let d = m.nrows();
    let vals = (0..d).map(|i| e.S()[i]).collect();
    let u = e.U();
    let vecs = Mat::from_fn(d, d, |i, j| u[(i, j)]);
    Ok((vals, vecs))
}

/// A real pure state or a thermal state in spectral form
/// `rho = sum_k w_k |v_k><v_k|` with `sum_k w_k = 1`.
#[derive(Debug, Clone, PartialEq)]
pub enum DenseState {
    Pure(Vec<f64>),
    Thermal { weights: Vec<f64>, vectors: Vec<Vec<f64>> },
}

impl DenseState {
    pub fn n_sites(&self) -> usize {
        let d = match self {
            DenseState::Pure(v) => v.len(),
            DenseState::Thermal { vectors, .. } => vectors.first().map_or(1, |v| v.len()),
        };
        d.trailing_zeros() as usize
    }

    pub fn components(&self) -> Vec<(f64, &[f64])> {
        match self {
            DenseState::Pure(v) => vec![(1.0, v.as_slice())],
            DenseState::Thermal { weights, vectors } => {
                weights.iter().copied().zip(vectors.iter().map(|v| v.as_slice())).collect()
            }
        }
    }

    pub fn density_matrix(&self) -> Result<Mat<f64>> {
        let n = self.n_sites();
        if n > DENSE_MAX_SITES {
            return Err(Error::SizeOverflow(format!("density matrix on {n} sites")));
        }
        let d = 1 << n;
        let mut rho = Mat::<f64>::zeros(d, d);
        for (w, v) in self.components() {
            for i in 0..d {
                if v[i] == 0.0 {
                    continue;
                }
                for j in 0..d {
                    rho[(i, j)] += w * v[i] * v[j];
                }
            }
        }
        Ok(rho)
    }

    /// `Tr(sigma rho)` for the unsigned string with `Z` part `zm`, `X` part `xm`.
    pub fn trace_pauli(&self, zm: u64, xm: u64) -> f64 {
        self.components().iter().map(|(w, v)| w * pauli_matrix_element(v, v, zm, xm)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundState {
    pub energy: f64,
    pub state: DenseState,
    /// Energy of the next state orthogonal to the ground state.
    pub first_excited: f64,
    pub degenerate: bool,
}

const DEGENERACY_TOL: f64 = 1e-8;

pub fn ground_state(model: &ModelSpec) -> Result<GroundState> {
    let n = model.n_sites();
    if n > SPARSE_MAX_SITES {
        return Err(Error::SizeOverflow(format!("{n} sites exceeds {SPARSE_MAX_SITES}")));
    }
    let h = hamiltonian(model)?;
    if n > DENSE_MAX_SITES {
        return lanczos_ground_state(&h);
    }
    let mut lowest: Vec<(f64, Vec<f64>)> = Vec::new();
    for b in blocks(model)? {
        let (vals, vecs) = eigh(&b.matrix(&h))?;
        for k in 0..vals.len().min(2) {
            let c: Vec<f64> = (0..b.dim()).map(|i| vecs[(i, k)]).collect();
            lowest.push((vals[k], b.embed(&c)));
        }
    }
    lowest.sort_by(|a, b| a.0.total_cmp(&b.0));
    let e0 = lowest[0].0;
    let e1 = lowest.get(1).map_or(f64::INFINITY, |x| x.0);
    Ok(GroundState {
        energy: e0,
        first_excited: e1,
        degenerate: (e1 - e0).abs() < DEGENERACY_TOL * e0.abs().max(1.0),
        state: DenseState::Pure(lowest.swap_remove(0).1),
    })
}

/// Lowest eigenpair by Lanczos, run twice so that no Krylov basis is stored.
/// With `deflate`, the search stays orthogonal to the given vector.
fn lanczos_lowest(h: &SpinHamiltonian, deflate: Option<&[f64]>) -> Result<(f64, Vec<f64>)> {
    let d = 1usize << h.n;
    let project = |v: &mut [f64]| {
        if let Some(u) = deflate {
            let o: f64 = u.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(x, a)| *x -= o * a);
        }
    };
    let normalize = |v: &mut [f64]| {
        let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= nrm);
        nrm
    };
    // deterministic start vector with weight on every basis state
    let mut start: Vec<f64> = (0..d).map(|s| 1.0 + 0.37 * ((s * 2654435761) % 1000) as f64 / 1000.0).collect();
    project(&mut start);
    normalize(&mut start);

    let max_steps = 300.min(d);
    let run = |steps: usize, coeffs: Option<&[f64]>| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut alphas = Vec::new();
        let mut betas = Vec::new();
        let mut v = start.clone();
        let mut v_prev = vec![0.0; d];
        let mut w = vec![0.0; d];
        let mut out = vec![0.0; if coeffs.is_some() { d } else { 0 }];
        let mut beta = 0.0;
        let mut prev_ground = f64::INFINITY;
        for k in 0..steps {
            if let Some(c) = coeffs {
                out.iter_mut().zip(&v).for_each(|(o, x)| *o += c[k] * x);
            }
            h.apply(&v, &mut w);
            project(&mut w);
            let alpha: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
            for i in 0..d {
                w[i] -= alpha * v[i] + beta * v_prev[i];
            }
            alphas.push(alpha);
            if coeffs.is_none() && k % 10 == 9 {
                let g = tridiagonal_lowest(&alphas, &betas).0;
                if (g - prev_ground).abs() < 1e-13 * g.abs().max(1.0) {
                    break;
                }
                prev_ground = g;
            }
            beta = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if k + 1 == steps || beta < 1e-12 {
                break;
            }
            betas.push(beta);
            std::mem::swap(&mut v_prev, &mut v);
            for i in 0..d {
                v[i] = w[i] / beta;
            }
        }
        (alphas, betas, out)
    };
    let (alphas, betas, _) = run(max_steps, None);
    let (e0, coeffs) = tridiagonal_lowest(&alphas, &betas);
    let (_, _, mut psi) = run(alphas.len(), Some(&coeffs));
    project(&mut psi);
    normalize(&mut psi);
    let mut hpsi = vec![0.0; d];
    h.apply(&psi, &mut hpsi);
    let residual = hpsi.iter().zip(&psi).map(|(a, b)| (a - e0 * b).powi(2)).sum::<f64>().sqrt();
    if residual > 1e-6 * h.norm_bound().max(1.0) {
        return Err(Error::NoConvergence(format!("Lanczos residual {residual:e}")));
    }
    Ok((e0, psi))
}

fn tridiagonal_lowest(alphas: &[f64], betas: &[f64]) -> (f64, Vec<f64>) {
    let m = alphas.len();
    let t = Mat::<f64>::from_fn(m, m, |i, j| {
        if i == j {
            alphas[i]
        } else if i + 1 == j || j + 1 == i {
            betas[i.min(j)]
        } else {
            0.0
        }
    });
    let (vals, vecs) = eigh(&t).expect("tridiagonal eigensolver");
    (vals[0], (0..m).map(|i| vecs[(i, 0)]).collect())
}

fn lanczos_ground_state(h: &SpinHamiltonian) -> Result<GroundState> {
    let (e0, psi) = lanczos_lowest(h, None)?;
    let (e1, _) = lanczos_lowest(h, Some(&psi))?;
    Ok(GroundState {
        energy: e0,
        first_excited: e1,
        degenerate: (e1 - e0).abs() < DEGENERACY_TOL * e0.abs().max(1.0) * 100.0,
        state: DenseState::Pure(psi),
    })
}

/// Relative Boltzmann weight below which eigenstates are dropped.
const WEIGHT_CUTOFF: f64 = 1e-15;

/// `e^{-beta H} / Z` in spectral form, keeping non-negligible weights.
pub fn thermal_state(model: &ModelSpec, beta: f64) -> Result<DenseState> {
    let n = model.n_sites();
    if n > DENSE_MAX_SITES {
        return Err(Error::SizeOverflow(format!("thermal state on {n} sites")));
    }
    let h = hamiltonian(model)?;
    let mut spectrum: Vec<(f64, usize, Vec<f64>)> = Vec::new();
    let bl = blocks(model)?;
    let mut decomposed = Vec::new();
    for (bi, b) in bl.iter().enumerate() {
        let (vals, vecs) = eigh(&b.matrix(&h))?;
        decomposed.push((bi, vals, vecs));
    }
    let e0 = decomposed.iter().map(|(_, v, _)| v[0]).fold(f64::INFINITY, f64::min);
    for (bi, vals, vecs) in &decomposed {
        for (k, &e) in vals.iter().enumerate() {
            if (-beta * (e - e0)).exp() < WEIGHT_CUTOFF {
                break;
            }
            let c: Vec<f64> = (0..vals.len()).map(|i| vecs[(i, k)]).collect();
            spectrum.push((e, *bi, c));
        }
    }
    spectrum.sort_by(|a, b| a.0.total_cmp(&b.0));
    let raw: Vec<f64> = spectrum.iter().map(|(e, _, _)| (-beta * (e - e0)).exp()).collect();
    let z: f64 = raw.iter().sum();
    Ok(DenseState::Thermal {
        weights: raw.iter().map(|w| w / z).collect(),
        vectors: spectrum.into_iter().map(|(_, bi, c)| bl[bi].embed(&c)).collect(),
    })
}

/// Thermal energy `Tr(H rho)`.
pub fn energy(model: &ModelSpec, state: &DenseState) -> Result<f64> {
    let h = hamiltonian(model)?;
    let mut out = vec![0.0; 1 << h.n];
    let mut e = 0.0;
    for (w, v) in state.components() {
        h.apply(v, &mut out);
        e += w * v.iter().zip(&out).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(e)
}

/// Elements `X^{x} Z^{z}` of the group generated by the symmetries whose
/// characters are the conserved parities.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryGroup {
    pub elements: Vec<(u64, u64)>,
}

impl SymmetryGroup {
    pub fn trivial() -> Self {
        SymmetryGroup { elements: vec![(0, 0)] }
    }

    /// A conserved `r^z` parity on a set is the character of `X` on that set,
    /// a conserved `r^x` parity that of `Z`.
    pub fn from_parities(p: &ConservedParities) -> Self {
        let gens: Vec<(u64, u64)> = p
            .z_sets
            .iter()
            .map(|s| (mask_of(s), 0))
            .chain(p.x_sets.iter().map(|s| (0, mask_of(s))))
            .collect();
        let mut seen: HashSet<(u64, u64)> = HashSet::from([(0, 0)]);
        let mut elements = vec![(0u64, 0u64)];
        for g in gens {
            let current = elements.clone();
            for e in current {
                let prod = (e.0 ^ g.0, e.1 ^ g.1);
                if seen.insert(prod) {
                    elements.push(prod);
                }
            }
        }
        SymmetryGroup { elements }
    }

    pub fn for_model(model: &ModelSpec) -> Result<Self> {
        Ok(Self::from_parities(&model.conserved_parities()?))
    }
}

/// `(g v)[s]` for `g = X^{xm} Z^{zm}`.
fn apply_group(g: (u64, u64), v: &[f64]) -> Vec<f64> {
    let (xm, zm) = g;
    (0..v.len() as u64).map(|s| parity((s ^ xm) & zm) * v[(s ^ xm) as usize]).collect()
}

fn check_sites(state: &DenseState, s: &PauliString) -> Result<()> {
    if s.len() != state.n_sites() {
        return Err(Error::LengthMismatch { expected: state.n_sites(), got: s.len() });
    }
    Ok(())
}

/// `Tr(sigma rho)^2` averaged over the sampled symmetry sector.
pub fn exact_pauli_sq(state: &DenseState, s: &PauliString, group: &SymmetryGroup) -> Result<f64> {
    check_sites(state, s)?;
    let (sz, sx) = s.masks();
    let mut num = 0.0;
    let mut den = 0.0;
    for &(gx, gz) in &group.elements {
        // g sigma = X^gx Z^gz Z^sz X^sx, equal to Z^(gz^sz) X^(gx^sx) up to sign
        num += state.trace_pauli(gz ^ sz, gx ^ sx).powi(2);
        den += state.trace_pauli(gz, gx).powi(2);
    }
    Ok(num / den)
}

/// `|Tr(sigma rho)|^2` for the plain state.
pub fn exact_expectation_sq(state: &DenseState, s: &PauliString) -> Result<f64> {
    exact_pauli_sq(state, s, &SymmetryGroup::trivial())
}

struct Bipartition {
    ia: Vec<usize>,
    ib: Vec<usize>,
    da: usize,
    db: usize,
}

fn bipartition(n: usize, a: &Region) -> Result<Bipartition> {
    if a.sites.iter().any(|&i| i >= n) {
        return Err(Error::InvalidRegion(format!("{} exceeds {n} sites", a.label)));
    }
    let ma = mask_of(&a.sites);
    let mut ia = Vec::with_capacity(1 << n);
    let mut ib = Vec::with_capacity(1 << n);
    for s in 0..1u64 << n {
        let (mut x, mut y, mut kx, mut ky) = (0usize, 0usize, 0, 0);
        for i in 0..n {
            let bit = ((s >> i) & 1) as usize;
            if ma >> i & 1 == 1 {
                x |= bit << kx;
                kx += 1;
            } else {
                y |= bit << ky;
                ky += 1;
            }
        }
        ia.push(x);
        ib.push(y);
    }
    Ok(Bipartition { ia, ib, da: 1 << a.len(), db: 1 << (n - a.len()) })
}

/// `Tr_A[(Tr_B rho g)^2]` for each group element.
fn swap_terms(state: &DenseState, a: &Region, group: &SymmetryGroup) -> Result<(f64, f64)> {
    let n = state.n_sites();
    let bp = bipartition(n, a)?;
    let mut num = 0.0;
    let mut den = 0.0;
    let comps = state.components();
    for &g in &group.elements {
        let mut m = vec![0.0; bp.da * bp.da];
        let mut tr = 0.0;
        for (w, v) in &comps {
            let gv = apply_group(g, v);
            let mut psi = vec![0.0; bp.da * bp.db];
            let mut phi = vec![0.0; bp.da * bp.db];
            for s in 0..v.len() {
                psi[bp.ia[s] * bp.db + bp.ib[s]] = v[s];
                phi[bp.ia[s] * bp.db + bp.ib[s]] = gv[s];
                tr += w * v[s] * gv[s];
            }
            for x in 0..bp.da {
                for y in 0..bp.da {
                    let dot: f64 = (0..bp.db).map(|k| psi[x * bp.db + k] * phi[y * bp.db + k]).sum();
                    m[x * bp.da + y] += w * dot;
                }
            }
        }
        for x in 0..bp.da {
            for y in 0..bp.da {
                num += m[x * bp.da + y] * m[y * bp.da + x];
            }
        }
        den += tr * tr;
    }
    Ok((num, den))
}

/// `Tr rho_A^2`.
pub fn exact_purity(state: &DenseState, a: &Region) -> Result<f64> {
    let (num, den) = swap_terms(state, a, &SymmetryGroup::trivial())?;
    Ok(num / den)
}

/// Expected swap sign in the sampled symmetry sector.
pub fn exact_swap(state: &DenseState, a: &Region, group: &SymmetryGroup) -> Result<f64> {
    let (num, den) = swap_terms(state, a, group)?;
    Ok(num / den)
}

fn fwht(v: &mut [f64]) {
    let mut h = 1;
    while h < v.len() {
        for i in (0..v.len()).step_by(2 * h) {
            for j in i..i + h {
                let (x, y) = (v[j], v[j + h]);
                v[j] = x + y;
                v[j + h] = x - y;
            }
        }
        h *= 2;
    }
}

/// Bell outcome distribution `P(r) ∝ Tr(sigma_r^T rho sigma_r rho)`, normalized
/// to sum 1 and indexed by [`BellConfig::to_index`].
pub fn bell_distribution(state: &DenseState) -> Result<Vec<f64>> {
    let n = state.n_sites();
    if n > 10 {
        return Err(Error::SizeOverflow(format!("Bell distribution on {n} sites")));
    }
    let rho = state.density_matrix()?;
    let d = 1usize << n;
    let mut out = vec![0.0; d * d];
    let mut f = vec![0.0; d];
    for x in 0..d {
        // F(e) = sum_{a ^ b = e} rho_ab rho_{b^x, a^x}
        f.iter_mut().for_each(|v| *v = 0.0);
        for a in 0..d {
            for b in 0..d {
                f[a ^ b] += rho[(a, b)] * rho[(b ^ x, a ^ x)];
            }
        }
        fwht(&mut f);
        for (z, &val) in f.iter().enumerate() {
            let mut code = 0u64;
            for i in 0..n {
                code |= (((z >> i) & 1) as u64 | (((x >> i) & 1) as u64) << 1) << (2 * i);
            }
            out[code as usize] = val;
        }
    }
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    Ok(out)
}

/// Two-copy thermal Bell distribution `P(r) ∝ Tr[e^{-beta H} sigma_r e^{-beta H} sigma_r]`.
pub fn thermal_bell_distribution(model: &ModelSpec, beta: f64) -> Result<Vec<f64>> {
    bell_distribution(&thermal_state(model, beta)?)
}

/// Restricts a distribution over Bell strings to those satisfying the
/// conserved parities and renormalizes.
pub fn restrict_to_sector(dist: &[f64], n: usize, p: &ConservedParities) -> Vec<f64> {
    let mut out: Vec<f64> = dist
        .iter()
        .enumerate()
        .map(|(code, &w)| if p.holds(&BellConfig::from_index(n, code as u64)) { w } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|w| *w /= total);
    out
}

/// Bell weights `Tr(P rho P rho)` of all Pauli strings supported on a region,
/// summed by weight; `by_weight[w]` is normalized by the identity term.
#[derive(Debug, Clone, PartialEq)]
pub struct PauliWeights {
    pub n_a: usize,
    pub by_weight: Vec<f64>,
}

impl PauliWeights {
    /// `Q(lambda) / Q(empty)`.
    pub fn q(&self, lambda: f64) -> f64 {
        self.by_weight.iter().enumerate().map(|(w, c)| c * lambda.powi(w as i32)).sum()
    }

    /// `d ln Q / d lambda`, the expectation of `wt / lambda`.
    pub fn dlnq(&self, lambda: f64) -> f64 {
        let d: f64 = self.by_weight.iter().enumerate().skip(1).map(|(w, c)| w as f64 * c * lambda.powi(w as i32 - 1)).sum();
        d / self.q(lambda)
    }

    /// The Renyi-2 value returned by integrating `dlnq` over `[0, 1]`.
    pub fn integrated_s2(&self) -> f64 {
        -self.q(1.0).ln() + self.n_a as f64 * std::f64::consts::LN_2
    }
}

/// Pauli weights on `a`, keeping only strings allowed by `sector` if given.
pub fn pauli_weights(state: &DenseState, a: &Region, sector: Option<&ConservedParities>) -> Result<PauliWeights> {
    let n = state.n_sites();
    let na = a.len();
    if na > 12 {
        return Err(Error::SizeOverflow(format!("region of {na} sites")));
    }
    let comps = state.components();
    let mut by_weight = vec![0.0; na + 1];
    let mut identity = 0.0;
    for code in 0..1u64 << (2 * na) {
        let (mut zm, mut xm) = (0u64, 0u64);
        let mut rz = vec![false; n];
        let mut rx = vec![false; n];
        let mut wt = 0;
        for (k, &site) in a.sites.iter().enumerate() {
            let d = (code >> (2 * k)) & 3;
            if d & 1 == 1 {
                zm |= 1 << site;
                rz[site] = true;
            }
            if d & 2 == 2 {
                xm |= 1 << site;
                rx[site] = true;
            }
            wt += (d != 0) as usize;
        }
        if let Some(p) = sector {
            if !p.holds(&BellConfig::from_bits(&rz, &rx)?) {
                continue;
            }
        }
        // Tr(P rho P rho) = sum_kl w_k w_l <v_l|P|v_k>^2
        let mut c = 0.0;
        for (wk, vk) in &comps {
            for (wl, vl) in &comps {
                c += wk * wl * pauli_matrix_element(vl, vk, zm, xm).powi(2);
            }
        }
        if code == 0 {
            identity = c;
        }
        by_weight[wt] += c;
    }
    by_weight.iter_mut().for_each(|c| *c /= identity);
    Ok(PauliWeights { n_a: na, by_weight })
}

/// `Q(lambda) / Q(empty) = sum_P lambda^{wt P} Tr(P rho P rho) / Tr(rho^2)` over
/// strings supported on `a`.
pub fn exact_q_lambda(state: &DenseState, a: &Region, lambda: f64) -> Result<f64> {
    Ok(pauli_weights(state, a, None)?.q(lambda))
}

/// Sector-resolved thermal `Tr(sigma rho)^2` for larger systems, computed
/// block by block without storing eigenvectors. Every string must map each
/// symmetry block to itself.
pub fn block_pauli_sq(model: &ModelSpec, beta: f64, strings: &[PauliString]) -> Result<Vec<f64>> {
    let n = model.n_sites();
    if n > 24 {
        return Err(Error::SizeOverflow(format!("{n} sites for block solver")));
    }
    let h = hamiltonian(model)?;
    let masks: Vec<(u64, u64)> = strings.iter().map(|s| s.masks()).collect();
    // per block: (lowest energy, Z_s, a_s...) scaled by exp(-beta (E - E_s))
    let mut per_block: Vec<(f64, f64, Vec<f64>)> = Vec::new();
    for b in blocks(model)? {
        let (vals, vecs) = eigh(&b.matrix(&h))?;
        let e_min = vals[0];
        let mut z = 0.0;
        let mut a = vec![0.0; strings.len()];
        for (k, &e) in vals.iter().enumerate() {
            let w = (-beta * (e - e_min)).exp();
            if w < WEIGHT_CUTOFF {
                break;
            }
            z += w;
            let c: Vec<f64> = (0..b.dim()).map(|i| vecs[(i, k)]).collect();
            for (j, &(zm, xm)) in masks.iter().enumerate() {
                a[j] += w * b.expectation(&c, zm, xm);
            }
        }
        per_block.push((e_min, z, a));
    }
    let e_star = per_block.iter().map(|b| b.0).fold(f64::INFINITY, f64::min);
    let mut den = 0.0;
    let mut num = vec![0.0; strings.len()];
    for (e, z, a) in &per_block {
        let f = (-2.0 * beta * (e - e_star)).exp();
        den += f * z * z;
        for (nm, x) in num.iter_mut().zip(a) {
            *nm += f * x * x;
        }
    }
    Ok(num.into_iter().map(|x| x / den).collect())
}
