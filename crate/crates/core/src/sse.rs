//! Operator strings, the diagonal update and the cluster updates.
//!
//! Every Bell-basis matrix element is 0 or 1, so a configuration is fully
//! described by the slice-0 state and the operator string. Diagonal operators
//! are constant shifts and may sit anywhere. A cluster update works on one
//! family of variables (sites, or bond/plaquette loci) and swaps diagonal and
//! off-diagonal operators of that family along connected leg structures.

use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
pub use rand_chacha::ChaCha8Rng as ChainRng;
use serde::{Deserialize, Serialize};

use crate::bell::BellConfig;
use crate::error::{Error, Result};
use crate::models::{operator_table, ModelKind, ModelSpec, OperatorTable};

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpKind {
    Null,
    DiagA,
    OffdiagA,
    DiagB,
    OffdiagB,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorEntry {
    pub kind: OpKind,
    /// Site for A kinds, bond or plaquette for B kinds, unused for `Null`.
    pub locus: u32,
}

impl OperatorEntry {
    pub const NULL: OperatorEntry = OperatorEntry { kind: OpKind::Null, locus: 0 };
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorString {
    slots: Vec<OperatorEntry>,
    n: usize,
}

impl OperatorString {
    pub fn new(m: usize) -> Self {
        OperatorString { slots: vec![OperatorEntry::NULL; m], n: 0 }
    }

    pub fn from_slots(slots: Vec<OperatorEntry>) -> Self {
        let n = slots.iter().filter(|e| e.kind != OpKind::Null).count();
        OperatorString { slots, n }
    }

    pub fn cutoff(&self) -> usize {
        self.slots.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn slots(&self) -> &[OperatorEntry] {
        &self.slots
    }

    fn check_count(&self) -> Result<()> {
        let actual = self.slots.iter().filter(|e| e.kind != OpKind::Null).count();
        if actual != self.n {
            return Err(Error::Corruption(format!("operator count {} but {} non-null slots", self.n, actual)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMode {
    SiteVars,
    BondVars,
    PlaquetteVars,
}

impl ClusterMode {
    /// The locus-variable mode that pairs with site clusters for a model.
    pub fn dual_for(kind: ModelKind) -> ClusterMode {
        match kind {
            ModelKind::Tfim1d => ClusterMode::BondVars,
            ModelKind::Z2Lgt2d => ClusterMode::PlaquetteVars,
        }
    }

    fn check(self, kind: ModelKind) -> Result<bool> {
        match (self, kind) {
            (ClusterMode::SiteVars, _) => Ok(false),
            (ClusterMode::BondVars, ModelKind::Tfim1d) | (ClusterMode::PlaquetteVars, ModelKind::Z2Lgt2d) => Ok(true),
            (m, k) => Err(Error::UnsupportedMode(format!("{m:?} for {k:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vertex {
    pub slot: u32,
    pub first_leg: u32,
    /// Number of variables; the vertex owns `2 * arity` legs, inputs first.
    pub arity: u8,
    /// Target vertices stop cluster growth; branch vertices join all their legs.
    pub target: bool,
    /// A cluster touching this vertex must not be flipped.
    pub blocking: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VertexList {
    pub n_vars: usize,
    pub vertices: Vec<Vertex>,
    pub leg_vertex: Vec<u32>,
    /// Neighbouring leg along the variable's imaginary-time line.
    pub link: Vec<u32>,
    /// Input leg of the earliest vertex on each variable, `u32::MAX` if none.
    pub first_leg: Vec<u32>,
    last_leg: Vec<u32>,
    n_legs: usize,
}

impl VertexList {
    pub fn n_legs(&self) -> usize {
        self.n_legs
    }

    pub fn is_free(&self, var: usize) -> bool {
        self.first_leg[var] == NONE
    }

    /// `max_legs` bounds the number of legs that will be pushed; the leg
    /// buffers keep their length between builds and are truncated on close.
    fn reset(&mut self, n_vars: usize, max_legs: usize) {
        self.n_vars = n_vars;
        self.vertices.clear();
        self.n_legs = 0;
        if self.link.len() < max_legs {
            self.link.resize(max_legs, NONE);
            self.leg_vertex.resize(max_legs, NONE);
        }
        self.first_leg.clear();
        self.first_leg.resize(n_vars, NONE);
        self.last_leg.clear();
        self.last_leg.resize(n_vars, NONE);
    }

    #[inline]
    fn push_vertex(&mut self, slot: usize, vars: &[u32], target: bool, blocking: bool) {
        let k = vars.len();
        let fl = self.n_legs as u32;
        let vi = self.vertices.len() as u32;
        self.vertices.push(Vertex { slot: slot as u32, first_leg: fl, arity: k as u8, target, blocking });
        self.n_legs += 2 * k;
        self.leg_vertex[fl as usize..self.n_legs].fill(vi);
        for (j, &v) in vars.iter().enumerate() {
            let input = fl + j as u32;
            let last = self.last_leg[v as usize];
            if last == NONE {
                self.first_leg[v as usize] = input;
            } else {
                self.link[last as usize] = input;
                self.link[input as usize] = last;
            }
            self.last_leg[v as usize] = fl + (k + j) as u32;
        }
    }

    /// Single-variable target vertex.
    #[inline(always)]
    fn push_target(&mut self, slot: usize, v: u32) {
        let fl = self.n_legs as u32;
        let vi = self.vertices.len() as u32;
        self.vertices.push(Vertex { slot: slot as u32, first_leg: fl, arity: 1, target: true, blocking: false });
        self.n_legs += 2;
        self.leg_vertex[fl as usize] = vi;
        self.leg_vertex[fl as usize + 1] = vi;
        let last = std::mem::replace(&mut self.last_leg[v as usize], fl + 1);
        if last == NONE {
            self.first_leg[v as usize] = fl;
        } else {
            self.link[last as usize] = fl;
            self.link[fl as usize] = last;
        }
    }

    fn close(&mut self) {
        for v in 0..self.n_vars {
            let (f, l) = (self.first_leg[v], self.last_leg[v]);
            if f != NONE {
                self.link[l as usize] = f;
                self.link[f as usize] = l;
            }
        }
    }

    fn truncated(&self) -> VertexList {
        let mut vl = self.clone();
        vl.link.truncate(self.n_legs);
        vl.leg_vertex.truncate(self.n_legs);
        vl
    }
}

/// Restriction applied when a cluster flip would change the slice-0 state.
#[derive(Debug, Clone, Copy)]
pub enum SliceZeroRule<'a> {
    Free,
    /// Sites marked `true` must stay `|0,0>` at slice 0.
    Frozen(&'a [bool]),
    /// As `Frozen`, and a flip changing the weight of the slice-0 string on
    /// `region` by `d` is accepted with probability `min(1, lambda^d)`.
    Weighted { frozen: &'a [bool], region: &'a [bool], lambda: f64 },
}

impl SliceZeroRule<'_> {
    fn frozen(&self) -> Option<&[bool]> {
        match self {
            SliceZeroRule::Free => None,
            SliceZeroRule::Frozen(f) => Some(f),
            SliceZeroRule::Weighted { frozen, .. } => Some(frozen),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub sweeps: u64,
    pub insert_proposals: u64,
    pub insert_accepted: u64,
    pub remove_proposals: u64,
    pub remove_accepted: u64,
    pub clusters: u64,
    pub clusters_flipped: u64,
    #[serde(default)]
    pub twists: u64,
    #[serde(default)]
    pub symmetry_flips: u64,
}

#[derive(Debug, Clone, Default)]
struct Scratch {
    a: Vec<u8>,
    b: Vec<u8>,
    vl: VertexList,
    cluster: Vec<u32>,
    stack: Vec<u32>,
    flipped: Vec<bool>,
    blocked: Vec<bool>,
    head: Vec<u32>,
    next_var: Vec<u32>,
    toggles: Vec<u8>,
    touched: Vec<u32>,
    vars: Vec<u32>,
    free: Vec<u32>,
    parent: Vec<u32>,
    color: Vec<u8>,
    comp: Vec<u32>,
    comp_blocked: Vec<bool>,
    comp_shift: Vec<u8>,
}

impl Scratch {
    /// Whether cut cluster `c` flips in the twist move.
    fn twist_bit(&self, c: usize) -> bool {
        let shift = self.comp_shift[self.comp[c] as usize];
        let shift = if shift == NONE as u8 { 0 } else { shift };
        self.color[c] ^ shift == 1
    }
}

/// Root and parity relative to the root, with path compression.
fn uf_find(parent: &mut [u32], parity: &mut [u8], x: u32) -> (u32, u8) {
    let (mut r, mut p) = (x, 0u8);
    while parent[r as usize] != r {
        p ^= parity[r as usize];
        r = parent[r as usize];
    }
    let (mut y, mut py) = (x, p);
    while parent[y as usize] != r && y != r {
        let next = parent[y as usize];
        let pn = py ^ parity[y as usize];
        parent[y as usize] = r;
        parity[y as usize] = py;
        y = next;
        py = pn;
    }
    (r, p)
}

/// Sites whose slice-0 bit changes when the variables in `vars` flip.
fn net_toggles(vars: &[u32], toggles: &mut [u8], touched: &mut Vec<u32>, t: &OperatorTable, bond_mode: bool) {
    touched.clear();
    for &v in vars {
        if bond_mode {
            for &i in t.b_sites(v as usize) {
                if toggles[i as usize] == 0 {
                    touched.push(i);
                }
                toggles[i as usize] = (toggles[i as usize] ^ 1) | 2;
            }
        } else {
            toggles[v as usize] = 3;
            touched.push(v);
        }
    }
    touched.retain(|&i| {
        let odd = toggles[i as usize] & 1 == 1;
        toggles[i as usize] = 0;
        odd
    });
}

fn flip_sites(cfg: &mut BellConfig, sites: &[u32], x_layer: bool) {
    for &i in sites {
        if x_layer {
            cfg.flip_x(i as usize);
        } else {
            cfg.flip_z(i as usize);
        }
    }
}

struct Coins {
    bits: u64,
    left: u32,
}

impl Coins {
    fn new() -> Self {
        Coins { bits: 0, left: 0 }
    }

    #[inline]
    fn flip(&mut self, rng: &mut ChainRng) -> bool {
        if self.left == 0 {
            self.bits = rng.next_u64();
            self.left = 64;
        }
        let b = self.bits & 1 == 1;
        self.bits >>= 1;
        self.left -= 1;
        b
    }
}

/// Serializable snapshot of a chain; the model is supplied on restore.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub cfg0: String,
    pub slots: Vec<OperatorEntry>,
    pub n: usize,
    pub beta: f64,
    pub rng: ChainRng,
    pub split_plaquettes: bool,
    pub counters: Counters,
}

#[derive(Debug, Clone)]
pub struct ChainState {
    pub cfg0: BellConfig,
    pub ops: OperatorString,
    pub beta: f64,
    pub rng: ChainRng,
    pub split_plaquettes: bool,
    pub counters: Counters,
    model: Arc<ModelSpec>,
    table: Arc<OperatorTable>,
    symmetries: Arc<[(Vec<u32>, bool)]>,
    scratch: Scratch,
}

/// Strings that commute with every operator: `Z` on each set of conserved
/// `r^x` parity and `X` on each set of conserved `r^z` parity, given as the
/// sites they toggle and whether they toggle the `x` layer.
fn symmetry_strings(model: &ModelSpec) -> Result<Arc<[(Vec<u32>, bool)]>> {
    let cons = model.conserved_parities()?;
    let to_u32 = |s: &Vec<usize>| s.iter().map(|&i| i as u32).collect::<Vec<u32>>();
    Ok(cons.z_sets.iter().map(|s| (to_u32(s), true)).chain(cons.x_sets.iter().map(|s| (to_u32(s), false))).collect())
}

impl ChainState {
    pub fn new(model: Arc<ModelSpec>, beta: f64, seed: u64) -> Result<Self> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::config("beta", format!("must be finite and non-negative, got {beta}")));
        }
        let table = Arc::new(operator_table(&model));
        Ok(ChainState {
            cfg0: crate::models::initial_config(&model),
            ops: OperatorString::new(16),
            beta,
            rng: ChainRng::seed_from_u64(seed),
            split_plaquettes: true,
            counters: Counters::default(),
            symmetries: symmetry_strings(&model)?,
            model,
            table,
            scratch: Scratch::default(),
        })
    }

    pub fn model(&self) -> &Arc<ModelSpec> {
        &self.model
    }

    pub fn table(&self) -> &OperatorTable {
        &self.table
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            cfg0: self.cfg0.to_string(),
            slots: self.ops.slots.clone(),
            n: self.ops.n,
            beta: self.beta,
            rng: self.rng.clone(),
            split_plaquettes: self.split_plaquettes,
            counters: self.counters,
        }
    }

    pub fn restore(model: Arc<ModelSpec>, cp: Checkpoint) -> Result<Self> {
        let cfg0: BellConfig = cp.cfg0.parse()?;
        if cfg0.len() != model.n_sites() {
            return Err(Error::LengthMismatch { expected: model.n_sites(), got: cfg0.len() });
        }
        let ops = OperatorString { slots: cp.slots, n: cp.n };
        ops.check_count()?;
        let st = ChainState {
            cfg0,
            ops,
            beta: cp.beta,
            rng: cp.rng,
            split_plaquettes: cp.split_plaquettes,
            counters: cp.counters,
            table: Arc::new(operator_table(&model)),
            symmetries: symmetry_strings(&model)?,
            model,
            scratch: Scratch::default(),
        };
        st.check_invariant()?;
        Ok(st)
    }

    /// Metropolis insertion and removal of diagonal operators, slot by slot.
    pub fn diagonal_update(&mut self) -> Result<()> {
        let t = &*self.table;
        let k = t.n_loci();
        if k == 0 {
            return Ok(());
        }
        let m = self.ops.slots.len();
        let bk = 2.0 * self.beta * k as f64;
        let mut n = self.ops.n;
        for p in 0..m {
            match self.ops.slots[p].kind {
                OpKind::Null => {
                    self.counters.insert_proposals += 1;
                    let locus = self.rng.random_range(0..k);
                    let (kind, c, loc) = if locus < t.n_a {
                        (OpKind::DiagA, t.a_coupling, locus)
                    } else {
                        (OpKind::DiagB, t.b_coupling, locus - t.n_a)
                    };
                    let acc = bk * c / (m - n) as f64;
                    if acc >= 1.0 || self.rng.random::<f64>() < acc {
                        self.ops.slots[p] = OperatorEntry { kind, locus: loc as u32 };
                        n += 1;
                        self.counters.insert_accepted += 1;
                    }
                }
                OpKind::DiagA | OpKind::DiagB => {
                    self.counters.remove_proposals += 1;
                    let c = if self.ops.slots[p].kind == OpKind::DiagA { t.a_coupling } else { t.b_coupling };
                    let acc = (m - n + 1) as f64 / (bk * c);
                    if acc >= 1.0 || self.rng.random::<f64>() < acc {
                        self.ops.slots[p] = OperatorEntry::NULL;
                        n -= 1;
                        self.counters.remove_accepted += 1;
                    }
                }
                OpKind::OffdiagA | OpKind::OffdiagB => {}
            }
        }
        self.ops.n = n;
        Ok(())
    }

    /// Grows the cutoff to `ceil(4n/3) + 1` once more than three quarters full.
    pub fn grow_cutoff(&mut self) -> bool {
        let m = self.ops.slots.len();
        let n = self.ops.n;
        if n > 3 * m / 4 {
            let new_m = (4 * n).div_ceil(3) + 1;
            self.ops.slots.resize(new_m, OperatorEntry::NULL);
            true
        } else {
            false
        }
    }

    fn load_layers(&mut self) {
        let n = self.model.n_sites();
        let s = &mut self.scratch;
        s.a.clear();
        s.b.clear();
        let a_is_x = self.model.a_layer() == crate::models::Layer::X;
        for i in 0..n {
            let (z, x) = (self.cfg0.z(i) as u8, self.cfg0.x(i) as u8);
            if a_is_x {
                s.a.push(x);
                s.b.push(z);
            } else {
                s.a.push(z);
                s.b.push(x);
            }
        }
    }

    /// Builds the vertex list for `mode` into scratch space.
    fn build_scratch(&mut self, mode: ClusterMode) -> Result<()> {
        let bond_mode = mode.check(self.model.kind)?;
        self.load_layers();
        let t = &*self.table;
        let n_vars = if bond_mode { t.n_b } else { t.n_a };
        let split = self.split_plaquettes && !bond_mode && t.b_arity == 4;
        let s = &mut self.scratch;
        let max_arity = t.b_arity.max(t.max_site_loci()).max(1);
        s.vl.reset(n_vars, 2 * max_arity * self.ops.n());
        for (p, e) in self.ops.slots.iter().enumerate() {
            let loc = e.locus as usize;
            match (e.kind, bond_mode) {
                (OpKind::Null, _) => {}
                (OpKind::DiagA, false) => {
                    if s.b[loc] == 0 {
                        s.vl.push_target(p, e.locus);
                    }
                }
                (OpKind::OffdiagA, false) => {
                    s.vl.push_target(p, e.locus);
                    s.a[loc] ^= 1;
                }
                (OpKind::DiagB, false) => {}
                (OpKind::OffdiagB, false) => {
                    let sites = t.b_sites(loc);
                    if split {
                        let (g1, g2) = crate::models::split_plaquette_vertex(
                            [sites[0] as usize, sites[1] as usize, sites[2] as usize, sites[3] as usize],
                            &mut self.rng,
                        );
                        s.vl.push_vertex(p, &[g1[0] as u32, g1[1] as u32], false, false);
                        s.vl.push_vertex(p, &[g2[0] as u32, g2[1] as u32], false, false);
                    } else {
                        s.vl.push_vertex(p, sites, false, false);
                    }
                    for &i in sites {
                        s.b[i as usize] ^= 1;
                    }
                }
                (OpKind::DiagB, true) => {
                    let par = t.b_sites(loc).iter().fold(0u8, |acc, &i| acc ^ s.a[i as usize]);
                    if par == 0 {
                        s.vl.push_target(p, e.locus);
                    }
                }
                (OpKind::OffdiagB, true) => {
                    s.vl.push_target(p, e.locus);
                    for &i in t.b_sites(loc) {
                        s.b[i as usize] ^= 1;
                    }
                }
                (OpKind::DiagA, true) => {}
                (OpKind::OffdiagA, true) => {
                    let loci = t.loci_of(loc);
                    s.vl.push_vertex(p, loci, false, loci.len() % 2 == 1);
                    s.a[loc] ^= 1;
                }
            }
        }
        s.vl.close();
        Ok(())
    }

    /// Linked vertex representation of the current string for `mode`.
    pub fn build_linked_list(&mut self, mode: ClusterMode) -> Result<VertexList> {
        self.build_scratch(mode)?;
        Ok(self.scratch.vl.truncated())
    }

    /// One cluster update with unrestricted slice-0 flips.
    pub fn cluster_update(&mut self, mode: ClusterMode) -> Result<()> {
        self.cluster_update_with(mode, &SliceZeroRule::Free)
    }

    pub fn cluster_update_with(&mut self, mode: ClusterMode, rule: &SliceZeroRule) -> Result<()> {
        self.build_scratch(mode)?;
        let bond_mode = mode != ClusterMode::SiteVars;
        let s = &mut self.scratch;
        let vl = &s.vl;
        let n_legs = vl.n_legs();

        // With every site on an even number of loci the product of all
        // locus flips is the identity, and strings with an odd number of
        // off-diagonal operators on every locus are reached by cutting the
        // slice-0 links and flipping one colour class of the cut clusters.
        let cut = bond_mode && self.table.twistable();
        s.cluster.clear();
        s.cluster.resize(n_legs, NONE);
        if s.stack.len() < n_legs {
            s.stack.resize(n_legs, 0);
        }
        s.blocked.clear();
        let link = &vl.link[..n_legs];
        let leg_vertex = &vl.leg_vertex[..n_legs];
        let verts = &vl.vertices[..];
        let cluster = &mut s.cluster[..];
        let stack = &mut s.stack[..];
        let mut n_cut = 0u32;
        for start in 0..n_legs {
            if cluster[start] != NONE {
                continue;
            }
            let id = n_cut;
            n_cut += 1;
            let mut blocked = false;
            cluster[start] = id;
            stack[0] = start as u32;
            let mut sp = 1;
            while sp > 0 {
                sp -= 1;
                let leg = stack[sp] as usize;
                let v = &verts[leg_vertex[leg] as usize];
                let nb = link[leg] as usize;
                // slice-0 links join an input leg to a later output leg
                let input = leg - (v.first_leg as usize) < v.arity as usize;
                let wrap = if input { nb > leg } else { nb < leg };
                if cluster[nb] == NONE && !(cut && wrap) {
                    cluster[nb] = id;
                    stack[sp] = nb as u32;
                    sp += 1;
                }
                if !v.target {
                    blocked |= v.blocking;
                    let fl = v.first_leg as usize;
                    for (l, c) in cluster[fl..fl + 2 * v.arity as usize].iter_mut().enumerate() {
                        if *c == NONE {
                            *c = id;
                            stack[sp] = (fl + l) as u32;
                            sp += 1;
                        }
                    }
                }
            }
            s.blocked.push(blocked);
        }

        // components of the cut clusters joined across slice 0, with the
        // parity of each cut cluster relative to its component root
        s.parent.clear();
        s.parent.extend(0..n_cut);
        s.color.clear();
        s.color.resize(n_cut as usize, 0);
        let mut odd_cycle = false;
        if cut {
            for v in 0..vl.n_vars {
                let f = vl.first_leg[v];
                if f != NONE {
                    let a = s.cluster[f as usize];
                    let b = s.cluster[vl.link[f as usize] as usize];
                    let (ra, pa) = uf_find(&mut s.parent, &mut s.color, a);
                    let (rb, pb) = uf_find(&mut s.parent, &mut s.color, b);
                    if ra == rb {
                        odd_cycle |= pa == pb;
                    } else {
                        s.parent[ra as usize] = rb;
                        s.color[ra as usize] = 1 ^ pa ^ pb;
                    }
                }
            }
        }
        s.comp.clear();
        s.comp.resize(n_cut as usize, NONE);
        s.comp_blocked.clear();
        let mut n_clusters = 0u32;
        for c in 0..n_cut {
            let (r, p) = uf_find(&mut s.parent, &mut s.color, c);
            s.color[c as usize] = p;
            if s.comp[r as usize] == NONE {
                s.comp[r as usize] = n_clusters;
                s.comp_blocked.push(false);
                n_clusters += 1;
            }
            let k = s.comp[r as usize];
            s.comp[c as usize] = k;
            s.comp_blocked[k as usize] |= s.blocked[c as usize];
        }

        // variables whose slice-0 segment belongs to each component
        s.head.clear();
        s.head.resize(n_clusters as usize, NONE);
        s.next_var.clear();
        s.next_var.resize(vl.n_vars, NONE);
        for v in (0..vl.n_vars).rev() {
            let f = vl.first_leg[v];
            if f != NONE {
                let c = s.comp[s.cluster[f as usize] as usize] as usize;
                s.next_var[v] = s.head[c];
                s.head[c] = v as u32;
            }
        }

        let n_sites = self.model.n_sites();
        s.toggles.clear();
        s.toggles.resize(n_sites, 0);
        s.flipped.clear();
        s.flipped.resize(n_clusters as usize, false);
        let mut coins = Coins::new();
        let a_is_x = self.model.a_layer() == crate::models::Layer::X;
        // site mode toggles the a-layer, bond mode the b-layer
        let x_layer = bond_mode != a_is_x;
        let t = &*self.table;
        let mut flipped_count = 0u64;

        s.free.clear();
        s.free.extend((0..vl.n_vars as u32).filter(|&v| vl.first_leg[v as usize] == NONE));
        let n_free = s.free.len();
        for c in 0..n_clusters as usize + n_free {
            let free_var = c >= n_clusters as usize;
            if (!free_var && s.comp_blocked[c]) || !coins.flip(&mut self.rng) {
                continue;
            }
            s.vars.clear();
            if free_var {
                s.vars.push(s.free[c - n_clusters as usize]);
            } else {
                let mut v = s.head[c];
                while v != NONE {
                    s.vars.push(v);
                    v = s.next_var[v as usize];
                }
            }
            if !s.vars.is_empty() {
                net_toggles(&s.vars, &mut s.toggles, &mut s.touched, t, bond_mode);
                if !slice_zero_accept(rule, &self.cfg0, &s.touched, x_layer, &mut self.rng) {
                    continue;
                }
                flip_sites(&mut self.cfg0, &s.touched, x_layer);
            }
            if !free_var {
                s.flipped[c] = true;
            }
            flipped_count += 1;
        }

        // twist: flip the cut clusters of colour 1, relative to a component
        // root or to its blocked clusters
        let mut twisted = false;
        if cut && !odd_cycle && n_free == 0 && n_cut > 0 && coins.flip(&mut self.rng) {
            s.comp_shift.clear();
            s.comp_shift.resize(n_clusters as usize, NONE as u8);
            let mut feasible = true;
            for c in 0..n_cut as usize {
                if s.blocked[c] {
                    let k = s.comp[c] as usize;
                    let want = s.color[c];
                    if s.comp_shift[k] == NONE as u8 {
                        s.comp_shift[k] = want;
                    } else if s.comp_shift[k] != want {
                        feasible = false;
                    }
                }
            }
            if feasible {
                s.vars.clear();
                for v in 0..vl.n_vars {
                    let cc = s.cluster[vl.first_leg[v] as usize] as usize;
                    if s.twist_bit(cc) {
                        s.vars.push(v as u32);
                    }
                }
                net_toggles(&s.vars, &mut s.toggles, &mut s.touched, t, bond_mode);
                if slice_zero_accept(rule, &self.cfg0, &s.touched, x_layer, &mut self.rng) {
                    flip_sites(&mut self.cfg0, &s.touched, x_layer);
                    twisted = true;
                }
            }
        }

        for v in &vl.vertices {
            if !v.target {
                continue;
            }
            let (ci, co) = (s.cluster[v.first_leg as usize] as usize, s.cluster[v.first_leg as usize + 1] as usize);
            let mut fi = s.flipped[s.comp[ci] as usize];
            let mut fo = s.flipped[s.comp[co] as usize];
            if twisted {
                fi ^= s.twist_bit(ci);
                fo ^= s.twist_bit(co);
            }
            if fi != fo {
                let e = &mut self.ops.slots[v.slot as usize];
                e.kind = match e.kind {
                    OpKind::DiagA => OpKind::OffdiagA,
                    OpKind::OffdiagA => OpKind::DiagA,
                    OpKind::DiagB => OpKind::OffdiagB,
                    OpKind::OffdiagB => OpKind::DiagB,
                    OpKind::Null => return Err(Error::Corruption("null target vertex".into())),
                };
            }
        }
        if twisted {
            self.counters.twists += 1;
        }

        self.counters.clusters += n_clusters as u64 + n_free as u64;
        self.counters.clusters_flipped += flipped_count;

        if bond_mode {
            self.symmetry_moves(rule);
        }
        Ok(())
    }

    /// Multiplies slice 0 by each symmetry string with probability one half.
    /// The operator string is unchanged, so only the slice-0 rule can reject.
    fn symmetry_moves(&mut self, rule: &SliceZeroRule) {
        let syms = self.symmetries.clone();
        for (sites, x_layer) in syms.iter() {
            if self.rng.random_bool(0.5) && slice_zero_accept(rule, &self.cfg0, sites, *x_layer, &mut self.rng) {
                flip_sites(&mut self.cfg0, sites, *x_layer);
                self.counters.symmetry_flips += 1;
            }
        }
    }

    /// Diagonal update followed by both cluster updates.
    pub fn sweep(&mut self) -> Result<()> {
        self.sweep_with(&SliceZeroRule::Free)
    }

    pub fn sweep_with(&mut self, rule: &SliceZeroRule) -> Result<()> {
        self.diagonal_update()?;
        self.cluster_update_with(ClusterMode::SiteVars, rule)?;
        self.cluster_update_with(ClusterMode::dual_for(self.model.kind), rule)?;
        self.counters.sweeps += 1;
        Ok(())
    }

    /// Propagates slice 0 through every operator and checks that each action
    /// is allowed and that the state returns to itself.
    pub fn check_invariant(&self) -> Result<()> {
        self.ops.check_count()?;
        let t = &*self.table;
        let mut c = self.cfg0.clone();
        let a_is_x = self.model.a_layer() == crate::models::Layer::X;
        for (p, e) in self.ops.slots.iter().enumerate() {
            let loc = e.locus as usize;
            let ok = match e.kind {
                OpKind::Null | OpKind::DiagA | OpKind::DiagB => {
                    let bound = if e.kind == OpKind::DiagB { t.n_b } else { t.n_a };
                    e.kind == OpKind::Null || loc < bound
                }
                OpKind::OffdiagA if loc < t.n_a => {
                    if a_is_x {
                        c.try_apply_site_x(loc)?
                    } else {
                        c.try_apply_site_z(loc)?
                    }
                }
                OpKind::OffdiagB if loc < t.n_b => {
                    let sites = t.b_sites(loc);
                    if a_is_x {
                        c.try_apply_bond_zz(sites[0] as usize, sites[1] as usize)?
                    } else {
                        c.try_apply_plaquette_x([
                            sites[0] as usize,
                            sites[1] as usize,
                            sites[2] as usize,
                            sites[3] as usize,
                        ])?
                    }
                }
                _ => false,
            };
            if !ok {
                return Err(Error::Corruption(format!("forbidden action {e:?} at slot {p}")));
            }
        }
        if c != self.cfg0 {
            return Err(Error::Corruption("state is not periodic in imaginary time".into()));
        }
        Ok(())
    }
}

/// Decides whether a cluster's slice-0 toggles on `sites` may be applied.
/// `x_layer` tells which layer the toggles act on.
fn slice_zero_accept(rule: &SliceZeroRule, cfg0: &BellConfig, sites: &[u32], x_layer: bool, rng: &mut ChainRng) -> bool {
    let Some(frozen) = rule.frozen() else {
        return true;
    };
    if sites.iter().any(|&i| frozen[i as usize]) {
        return false;
    }
    let SliceZeroRule::Weighted { region, lambda, .. } = *rule else {
        return true;
    };
    let mut dwt = 0i64;
    for &i in sites {
        let i = i as usize;
        if !region[i] {
            continue;
        }
        let (z, x) = (cfg0.z(i), cfg0.x(i));
        let before = (z | x) as i64;
        let after = if x_layer { (z | !x) as i64 } else { (!z | x) as i64 };
        dwt += after - before;
    }
    if dwt <= 0 {
        return true;
    }
    rng.random::<f64>() < crate::ext_ensemble::flip_acceptance(lambda, dwt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Boundary;

    fn tfim(l: usize, h: f64, b: Boundary) -> Arc<ModelSpec> {
        Arc::new(ModelSpec::tfim(l, h, b).unwrap())
    }

    #[test]
    fn beta_zero_inserts_nothing() {
        let mut st = ChainState::new(tfim(4, 1.0, Boundary::Open), 0.0, 1).unwrap();
        for _ in 0..20 {
            st.diagonal_update().unwrap();
        }
        assert_eq!(st.ops.n(), 0);
    }

    #[test]
    fn zero_field_never_inserts_site_ops() {
        let mut st = ChainState::new(tfim(6, 0.0, Boundary::Open), 2.0, 3).unwrap();
        for _ in 0..200 {
            st.sweep().unwrap();
            st.grow_cutoff();
        }
        assert!(st.ops.n() > 0);
        assert!(st.ops.slots().iter().all(|e| !matches!(e.kind, OpKind::DiagA | OpKind::OffdiagA)));
    }

    #[test]
    fn cutoff_growth_rule() {
        let mut st = ChainState::new(tfim(4, 1.0, Boundary::Open), 1.0, 1).unwrap();
        st.ops = OperatorString::new(10);
        assert!(!st.grow_cutoff());
        assert_eq!(st.ops.cutoff(), 10);
        let mut slots = vec![OperatorEntry { kind: OpKind::DiagA, locus: 0 }; 9];
        slots.push(OperatorEntry::NULL);
        st.ops = OperatorString::from_slots(slots);
        assert!(st.grow_cutoff());
        assert_eq!(st.ops.cutoff(), 13);
    }

    #[test]
    fn cutoff_stabilizes() {
        let mut st = ChainState::new(tfim(8, 1.0, Boundary::Open), 8.0, 11).unwrap();
        let mut last_growth = 0;
        for k in 0..2000 {
            st.sweep().unwrap();
            if st.grow_cutoff() {
                last_growth = k;
            }
        }
        assert!(last_growth < 1800, "cutoff still growing at sweep {last_growth}");
    }

    #[test]
    fn linked_list_shapes() {
        let mut st = ChainState::new(tfim(4, 1.0, Boundary::Open), 1.0, 1).unwrap();
        st.ops = OperatorString::new(8);
        let vl = st.build_linked_list(ClusterMode::SiteVars).unwrap();
        assert!(vl.vertices.is_empty());

        let mut slots = vec![OperatorEntry::NULL; 8];
        slots[3] = OperatorEntry { kind: OpKind::DiagA, locus: 2 };
        st.ops = OperatorString::from_slots(slots);
        let vl = st.build_linked_list(ClusterMode::SiteVars).unwrap();
        assert_eq!(vl.vertices.len(), 1);
        assert_eq!(vl.n_legs(), 2);
        assert_eq!(vl.link, vec![1, 0]);

        let mut slots = vec![OperatorEntry::NULL; 8];
        slots[5] = OperatorEntry { kind: OpKind::DiagB, locus: 1 };
        st.ops = OperatorString::from_slots(slots);
        let vl = st.build_linked_list(ClusterMode::BondVars).unwrap();
        assert_eq!(vl.vertices.len(), 1);
        assert_eq!(vl.n_legs(), 2);
        assert!(st.build_linked_list(ClusterMode::PlaquetteVars).is_err());
    }

    #[test]
    fn free_sites_flip_half_the_time() {
        let mut st = ChainState::new(tfim(6, 1.0, Boundary::Open), 0.0, 5).unwrap();
        let n = 20_000;
        let mut ones = [0usize; 6];
        for _ in 0..n {
            st.cluster_update(ClusterMode::SiteVars).unwrap();
            for (i, o) in ones.iter_mut().enumerate() {
                *o += st.cfg0.x(i) as usize;
            }
            assert!(!st.cfg0.parity_z());
        }
        for o in ones {
            let f = o as f64 / n as f64;
            assert!((f - 0.5).abs() < 0.02, "{f}");
        }
    }

    #[test]
    fn sweeps_preserve_invariants() {
        let model = tfim(7, 0.8, Boundary::Periodic);
        let mut st = ChainState::new(model, 3.0, 9).unwrap();
        for _ in 0..300 {
            st.sweep().unwrap();
            st.grow_cutoff();
            st.check_invariant().unwrap();
            assert!(!st.cfg0.parity_z());
        }
        let lgt = Arc::new(ModelSpec::lgt(3, 0.4).unwrap());
        let cons = lgt.conserved_parities().unwrap();
        let mut st = ChainState::new(lgt, 2.0, 2).unwrap();
        for k in 0..300 {
            st.split_plaquettes = k % 2 == 0;
            st.sweep().unwrap();
            st.grow_cutoff();
            st.check_invariant().unwrap();
            assert!(cons.holds(&st.cfg0));
        }
    }

    /// Parity of the off-diagonal B count on each locus.
    fn b_parities(st: &ChainState) -> Vec<bool> {
        let mut par = vec![false; st.table().n_b];
        for e in st.ops.slots() {
            if e.kind == OpKind::OffdiagB {
                par[e.locus as usize] ^= true;
            }
        }
        par
    }

    #[test]
    fn twist_reaches_odd_locus_counts() {
        for model in [tfim(5, 0.3, Boundary::Periodic), Arc::new(ModelSpec::lgt(2, 0.3).unwrap())] {
            assert!(operator_table(&model).twistable());
            let mut st = ChainState::new(model, 2.0, 6).unwrap();
            let mut seen_odd = false;
            for _ in 0..400 {
                st.sweep().unwrap();
                st.grow_cutoff();
                st.check_invariant().unwrap();
                let par = b_parities(&st);
                assert!(par.iter().all(|&p| p == par[0]));
                seen_odd |= par[0];
            }
            assert!(seen_odd);
            assert!(st.counters.twists > 0);
        }
    }

    #[test]
    fn open_chain_has_no_twist() {
        let model = tfim(5, 0.3, Boundary::Open);
        assert!(!operator_table(&model).twistable());
        let mut st = ChainState::new(model, 2.0, 6).unwrap();
        for _ in 0..200 {
            st.sweep().unwrap();
            st.grow_cutoff();
            assert!(b_parities(&st).iter().all(|&p| !p));
        }
        assert_eq!(st.counters.twists, 0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = tfim(5, 1.0, Boundary::Open);
        let mut st = ChainState::new(model.clone(), 2.0, 4).unwrap();
        for _ in 0..50 {
            st.sweep().unwrap();
            st.grow_cutoff();
        }
        let text = serde_json::to_string(&st.checkpoint()).unwrap();
        let cp: Checkpoint = serde_json::from_str(&text).unwrap();
        assert_eq!(cp, st.checkpoint());
        let mut back = ChainState::restore(model, cp).unwrap();
        for _ in 0..20 {
            st.sweep().unwrap();
            back.sweep().unwrap();
        }
        assert_eq!(st.cfg0, back.cfg0);
        assert_eq!(st.ops, back.ops);
    }

    #[test]
    fn frozen_sites_stay_identity() {
        let model = tfim(6, 1.0, Boundary::Open);
        let frozen = [false, false, false, true, true, true];
        let mut st = ChainState::new(model, 3.0, 8).unwrap();
        for _ in 0..500 {
            st.sweep_with(&SliceZeroRule::Frozen(&frozen)).unwrap();
            st.grow_cutoff();
            for i in 3..6 {
                assert!(!st.cfg0.z(i) && !st.cfg0.x(i));
            }
        }
    }
}
