//! Run configuration, read from TOML.
//!
//! ```toml
//! output_dir = "out/tfim"
//!
//! [model]
//! kind = "tfim1d"        # or "z2_lgt2d"
//! L = 16
//! h = 1.0
//! boundary = "periodic"  # chain only
//! beta = "4L"            # number, or k·L written as "4L"
//!
//! [run]
//! n_equilibration = 2000
//! n_measurement = 200000
//! block_size = 5000
//! seed = 1
//! n_chains = 4
//!
//! [[observables]]
//! type = "renyi2"
//! region = "half"
//!
//! [ti]
//! region = "half"
//! nodes = 16
//! method = "analytic_b"
//! ```
//!
//! Regions are `half`, `all`, `mid:<len>`, `thirds:<A|B|C|AB|BC|ABC>`,
//! `square`, `block:<k>` or `sites:<i,j,...>`. Loops are `rect:<a>,<b>` with
//! an optional `@<x>,<y>` origin.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bell::PauliString;
use crate::error::{Error, Result};
use crate::ext_ensemble::TiMethod;
use crate::lattice::{chain_thirds, half_chain, mid_chain_region, square_region, vertex_block_region, wilson_loop, Boundary, Lattice, Region};
use crate::models::{ModelKind, ModelSpec};

pub const DEFAULT_BLOCK_SIZE: usize = 5000;
pub const DEFAULT_TI_NODES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaSpec {
    Value(f64),
    Expr(String),
}

impl BetaSpec {
    pub fn resolve(&self, l: usize) -> Result<f64> {
        let beta = match self {
            BetaSpec::Value(b) => *b,
            BetaSpec::Expr(s) => {
                let s = s.trim();
                match s.strip_suffix('L') {
                    Some(k) => {
                        let k = k.trim().trim_end_matches('*');
                        let k: f64 = if k.is_empty() { 1.0 } else { k.parse().map_err(|_| Error::config("model.beta", format!("cannot parse {s:?}")))? };
                        k * l as f64
                    }
                    None => s.parse().map_err(|_| Error::config("model.beta", format!("cannot parse {s:?}")))?,
                }
            }
        };
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::config("model.beta", format!("must be finite and non-negative, got {beta}")));
        }
        Ok(beta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(rename = "L")]
    pub l: usize,
    pub h: f64,
    #[serde(default)]
    pub boundary: Option<Boundary>,
    pub beta: BetaSpec,
}

impl ModelConfig {
    pub fn build(&self) -> Result<ModelSpec> {
        match self.kind {
            ModelKind::Tfim1d => {
                let b = self.boundary.ok_or_else(|| Error::config("model.boundary", "required for the chain"))?;
                ModelSpec::tfim(self.l, self.h, b)
            }
            ModelKind::Z2Lgt2d => {
                if self.boundary == Some(Boundary::Open) {
                    return Err(Error::UnsupportedGeometry("the gauge theory lives on a torus".into()));
                }
                ModelSpec::lgt(self.l, self.h)
            }
        }
    }

    pub fn beta(&self) -> Result<f64> {
        self.beta.resolve(self.l)
    }
}

fn default_block() -> usize {
    DEFAULT_BLOCK_SIZE
}
fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunParams {
    pub n_equilibration: usize,
    pub n_measurement: usize,
    #[serde(default = "default_block")]
    pub block_size: usize,
    pub seed: u64,
    #[serde(default = "one")]
    pub n_chains: usize,
    /// Random splitting of plaquette vertices in the site-cluster update.
    #[serde(default = "yes")]
    pub split_plaquettes: bool,
    #[serde(default)]
    pub write_checkpoints: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableConfig {
    PauliSq {
        string: String,
    },
    Renyi2 {
        region: String,
        #[serde(default)]
        gauge: bool,
        #[serde(default)]
        translate: bool,
    },
    Wilson {
        #[serde(rename = "loop")]
        lp: String,
        #[serde(default = "yes")]
        translate: bool,
    },
    /// `S(AB) + S(BC) - S(ABC) - S(B)` on the chain thirds.
    TopoEe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitX {
    /// `x = ln(size)`.
    LnSize,
    /// `x = size`.
    Size,
}

/// Linear fit of reported means against a size attached to each label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub name: String,
    pub observable: String,
    pub labels: Vec<String>,
    pub sizes: Vec<f64>,
    pub x: FitX,
    /// Fit `ln(mean)` instead of the mean.
    #[serde(default)]
    pub log_y: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TiConfig {
    pub region: String,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    pub method: TiMethod,
}

fn default_nodes() -> usize {
    DEFAULT_TI_NODES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub run: RunParams,
    #[serde(default)]
    pub observables: Vec<ObservableConfig>,
    #[serde(default)]
    pub fits: Vec<FitConfig>,
    #[serde(default)]
    pub ti: Option<TiConfig>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.model.build()?;
        self.model.beta()?;
        let r = &self.run;
        for (field, v) in [
            ("run.n_measurement", r.n_measurement),
            ("run.block_size", r.block_size),
            ("run.n_chains", r.n_chains),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if r.n_measurement < crate::stats::MIN_BINS * r.block_size {
            return Err(Error::config(
                "run.n_measurement",
                format!("{} sweeps give fewer than {} bins of {}", r.n_measurement, crate::stats::MIN_BINS, r.block_size),
            ));
        }
        for (k, o) in self.observables.iter().enumerate() {
            compile_check(&model, o).map_err(|e| Error::config(&format!("observables[{k}]"), e.to_string()))?;
        }
        for (k, f) in self.fits.iter().enumerate() {
            if f.labels.len() != f.sizes.len() {
                return Err(Error::config(&format!("fits[{k}].sizes"), "one size per label"));
            }
        }
        if let Some(ti) = &self.ti {
            parse_region(&model.lattice, &ti.region).map_err(|e| Error::config("ti.region", e.to_string()))?;
            if ti.nodes == 0 {
                return Err(Error::config("ti.nodes", "must be positive"));
            }
        }
        Ok(())
    }
}

fn compile_check(model: &ModelSpec, o: &ObservableConfig) -> Result<()> {
    let lat = &model.lattice;
    match o {
        ObservableConfig::PauliSq { string } => PauliString::parse(lat.n_sites, string).map(|_| ()),
        ObservableConfig::Renyi2 { region, gauge, .. } => {
            if *gauge && model.kind != ModelKind::Z2Lgt2d {
                return Err(Error::UnsupportedGeometry("gauge estimator needs the gauge theory".into()));
            }
            parse_region(lat, region).map(|_| ())
        }
        ObservableConfig::Wilson { lp, .. } => parse_loop(lat, lp).map(|_| ()),
        ObservableConfig::TopoEe => chain_thirds(lat).map(|_| ()),
    }
}

fn parse_usize(s: &str, what: &str) -> Result<usize> {
    s.trim().parse().map_err(|_| Error::Parse(format!("bad {what} {s:?}")))
}

pub fn parse_region(lat: &Lattice, spec: &str) -> Result<Region> {
    let (head, arg) = spec.split_once(':').unwrap_or((spec, ""));
    match head {
        "half" => half_chain(lat),
        "all" => Region::new("all", (0..lat.n_sites).collect(), lat.n_sites),
        "mid" => mid_chain_region(lat, parse_usize(arg, "length")?),
        "square" => Ok(square_region(lat, lat.linear_size)?.0),
        "block" => Ok(vertex_block_region(lat, parse_usize(arg, "block size")?)?.0),
        "thirds" => {
            let [a, b, c] = chain_thirds(lat)?;
            let mut sites = Vec::new();
            for ch in arg.chars() {
                match ch {
                    'A' => sites.extend(&a.sites),
                    'B' => sites.extend(&b.sites),
                    'C' => sites.extend(&c.sites),
                    _ => return Err(Error::Parse(format!("bad thirds label {arg:?}"))),
                }
            }
            if sites.is_empty() {
                return Err(Error::Parse("empty thirds label".into()));
            }
            Region::new(arg, sites, lat.n_sites)
        }
        "sites" => {
            let sites = arg.split(',').map(|s| parse_usize(s, "site")).collect::<Result<Vec<_>>>()?;
            Region::new(spec, sites, lat.n_sites)
        }
        _ => Err(Error::Parse(format!("unknown region {spec:?}"))),
    }
}

pub fn parse_loop(lat: &Lattice, spec: &str) -> Result<Region> {
    let body = spec.strip_prefix("rect:").ok_or_else(|| Error::Parse(format!("unknown loop {spec:?}")))?;
    let (size, origin) = body.split_once('@').unwrap_or((body, "0,0"));
    let pair = |s: &str| -> Result<(usize, usize)> {
        let (a, b) = s.split_once(',').ok_or_else(|| Error::Parse(format!("expected two numbers in {s:?}")))?;
        Ok((parse_usize(a, "loop size")?, parse_usize(b, "loop size")?))
    };
    let (a, b) = pair(size)?;
    let (x0, y0) = pair(origin)?;
    let mut r = wilson_loop(lat, x0, y0, a, b)?;
    r.label = format!("{a}x{b}");
    Ok(r)
}
