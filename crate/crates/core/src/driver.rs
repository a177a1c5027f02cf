//! Runs independent chains (and `lambda` nodes) and merges their results.
//!
//! Chain `k` of a run with master seed `s` uses the seed `split_seed(s, k)`.
//! Results are merged in chain order, so the output does not depend on the
//! number of worker threads.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::bell::PauliString;
use crate::config::{parse_loop, parse_region, FitX, ObservableConfig, RunConfig};
use crate::error::{Error, Result};
use crate::estimators::{self, Measurements, Probe, ResultRow};
use crate::ext_ensemble::{self, NodeParams, NodeResult};
use crate::lattice::chain_thirds;
use crate::models::ModelSpec;
use crate::sse::{ChainState, Checkpoint, Counters};
use crate::stats::{self, BinnedSeries, Estimate, LinearFit};

pub const SCHEMA_VERSION: u32 = 1;

/// SplitMix64 step applied to `master + (k + 1) * golden gamma`.
pub fn split_seed(master: u64, k: u64) -> u64 {
    let mut z = master.wrapping_add(k.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs `f(0..n)` on up to `threads` workers and returns results in index order.
pub fn parallel_map<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= n {
                    break;
                }
                let out = f(k);
                slots.lock().expect("result slots")[k] = Some(out);
            });
        }
    });
    slots.into_inner().expect("result slots").into_iter().map(|x| x.expect("every index ran")).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct ChainParams {
    pub beta: f64,
    pub n_equilibration: usize,
    pub n_measurement: usize,
    pub block_size: usize,
    pub split_plaquettes: bool,
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub measurements: Measurements,
    pub counters: Counters,
    pub cutoff: usize,
    pub checkpoint: Checkpoint,
}

/// Equilibration with cutoff growth, then one measurement per sweep.
pub fn run_chain(model: Arc<ModelSpec>, probes: Vec<Probe>, p: &ChainParams, seed: u64) -> Result<ChainOutput> {
    let mut st = ChainState::new(model, p.beta, seed)?;
    st.split_plaquettes = p.split_plaquettes;
    for _ in 0..p.n_equilibration {
        st.sweep()?;
        st.grow_cutoff();
    }
    let mut m = Measurements::new(probes, p.block_size)?;
    for _ in 0..p.n_measurement {
        st.sweep()?;
        m.record(&st.cfg0, st.ops.n());
    }
    st.check_invariant()?;
    Ok(ChainOutput { measurements: m, counters: st.counters, cutoff: st.ops.cutoff(), checkpoint: st.checkpoint() })
}

/// Probe bins concatenated over chains, in chain order.
#[derive(Debug, Clone)]
pub struct Merged {
    pub probes: Vec<Probe>,
    pub series: Vec<BinnedSeries>,
    /// Per-sample variance of each probe value, pooled over chains.
    pub sample_variance: Vec<f64>,
    pub n_ops: BinnedSeries,
}

impl Merged {
    pub fn find(&self, kind: estimators::ProbeKind, label: &str) -> Option<&BinnedSeries> {
        self.probes.iter().position(|p| p.kind == kind && p.label == label).map(|k| &self.series[k])
    }
}

pub fn merge_chains(outputs: &[ChainOutput]) -> Result<Merged> {
    let first = outputs.first().ok_or(Error::InsufficientData { needed: 1, got: 0 })?;
    let probes = first.measurements.probes.clone();
    let block = first.measurements.n_ops.block_size;
    let gather = |pick: &dyn Fn(&ChainOutput) -> &estimators::Accumulator| -> Result<BinnedSeries> {
        BinnedSeries::from_bins(outputs.iter().flat_map(|o| pick(o).bins.iter().copied()).collect(), block)
    };
    let mut series = Vec::with_capacity(probes.len());
    let mut sample_variance = Vec::with_capacity(probes.len());
    for k in 0..probes.len() {
        series.push(gather(&|o| &o.measurements.values[k])?);
        let (mut n, mut s, mut s2) = (0.0, 0.0, 0.0);
        for o in outputs {
            let a = &o.measurements.values[k];
            let nk = a.n_samples as f64;
            let mk = a.mean();
            n += nk;
            s += nk * mk;
            s2 += nk * (a.sample_variance() + mk * mk);
        }
        sample_variance.push(s2 / n - (s / n).powi(2));
    }
    Ok(Merged { probes, series, sample_variance, n_ops: gather(&|o| &o.measurements.n_ops)? })
}

/// Probes for the configured observables. A topological combination adds
/// the four entropies it needs.
pub fn compile_probes(model: &ModelSpec, observables: &[ObservableConfig]) -> Result<Vec<Probe>> {
    let lat = &model.lattice;
    let mut probes: Vec<Probe> = Vec::new();
    let mut push = |p: Probe| {
        if !probes.iter().any(|q| q.kind == p.kind && q.label == p.label) {
            probes.push(p);
        }
    };
    for o in observables {
        match o {
            ObservableConfig::PauliSq { string } => {
                push(Probe::pauli_sq(string.clone(), PauliString::parse(lat.n_sites, string)?));
            }
            ObservableConfig::Renyi2 { region, gauge, translate } => {
                let a = parse_region(lat, region)?;
                let mut p = match (*gauge, *translate) {
                    (true, t) => Probe::renyi2_gauge(lat, &a, t)?,
                    (false, true) => Probe::renyi2_translated(lat, &a)?,
                    (false, false) => Probe::renyi2(lat, &a)?,
                };
                p.label = region.clone();
                push(p);
            }
            ObservableConfig::Wilson { lp, translate } => {
                let r = parse_loop(lat, lp)?;
                let mut p = Probe::wilson(lat, &r, *translate)?;
                p.label = lp.clone();
                push(p);
            }
            ObservableConfig::TopoEe => {
                chain_thirds(lat)?;
                for label in TOPO_LABELS {
                    let mut p = Probe::renyi2(lat, &parse_region(lat, &format!("thirds:{label}"))?)?;
                    p.label = format!("thirds:{label}");
                    push(p);
                }
            }
        }
    }
    Ok(probes)
}

const TOPO_LABELS: [&str; 4] = ["AB", "BC", "ABC", "B"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub name: String,
    pub fit: LinearFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub chain: usize,
    pub seed: u64,
    pub cutoff: usize,
    pub counters: Counters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub model: crate::config::ModelConfig,
    pub beta: f64,
    pub n_sites: usize,
    pub master_seed: u64,
    pub n_chains: usize,
    pub n_equilibration: usize,
    pub n_measurement: usize,
    pub block_size: usize,
    pub energy: Estimate,
    pub results: Vec<ResultRow>,
    /// Failed estimators, keyed by observable and label.
    pub failures: BTreeMap<String, String>,
    pub fits: Vec<FitResult>,
    pub chains: Vec<ChainDiagnostics>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub merged: Merged,
    pub checkpoints: Vec<Checkpoint>,
}

pub fn run(cfg: &RunConfig, threads: usize) -> Result<RunOutput> {
    cfg.validate()?;
    let model = Arc::new(cfg.model.build()?);
    let beta = cfg.model.beta()?;
    let probes = compile_probes(&model, &cfg.observables)?;
    let r = &cfg.run;
    let params = ChainParams {
        beta,
        n_equilibration: r.n_equilibration,
        n_measurement: r.n_measurement,
        block_size: r.block_size,
        split_plaquettes: r.split_plaquettes,
    };
    let outputs = parallel_map(r.n_chains, threads, |k| {
        run_chain(model.clone(), probes.clone(), &params, split_seed(r.seed, k as u64))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let merged = merge_chains(&outputs)?;

    let table = crate::models::operator_table(&model);
    let energy = estimators::energy_from_n(merged.n_ops.estimate(), beta, &table);
    let mut results = Vec::new();
    let mut failures = BTreeMap::new();
    for (p, s) in merged.probes.iter().zip(&merged.series) {
        match estimators::probe_row(p, s) {
            Ok(row) => results.push(row),
            Err(e) => {
                failures.insert(format!("{}:{}", p.kind.name(), p.label), e.to_string());
            }
        }
    }
    if cfg.observables.iter().any(|o| matches!(o, ObservableConfig::TopoEe)) {
        let get = |l: &str| merged.find(estimators::ProbeKind::Renyi2, &format!("thirds:{l}")).expect("topo probes compiled");
        match estimators::topo_ee_correlated(get("AB"), get("BC"), get("ABC"), get("B")) {
            Ok(e) => results.push(ResultRow::new("topo_ee", "thirds", e, merged.n_ops.n_bins(), r.block_size)),
            Err(e) => {
                failures.insert("topo_ee:thirds".into(), e.to_string());
            }
        }
    }
    results.push(ResultRow::new("energy", "per_copy", energy, merged.n_ops.n_bins(), r.block_size));

    let mut fits = Vec::new();
    for f in &cfg.fits {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut es = Vec::new();
        for (label, &size) in f.labels.iter().zip(&f.sizes) {
            let row = results
                .iter()
                .find(|row| row.observable == f.observable && &row.label == label)
                .ok_or_else(|| Error::config(format!("fits.{}", f.name), format!("no result for {label}")))?;
            xs.push(match f.x {
                FitX::LnSize => size.ln(),
                FitX::Size => size,
            });
            if f.log_y {
                ys.push(row.mean.ln());
                es.push(row.stderr / row.mean);
            } else {
                ys.push(row.mean);
                es.push(row.stderr);
            }
        }
        fits.push(FitResult { name: f.name.clone(), fit: stats::fit_linear(&xs, &ys, &es)? });
    }

    let chains = outputs
        .iter()
        .enumerate()
        .map(|(k, o)| ChainDiagnostics { chain: k, seed: split_seed(r.seed, k as u64), cutoff: o.cutoff, counters: o.counters })
        .collect();
    let summary = RunSummary {
        schema_version: SCHEMA_VERSION,
        model: cfg.model.clone(),
        beta,
        n_sites: model.n_sites(),
        master_seed: r.seed,
        n_chains: r.n_chains,
        n_equilibration: r.n_equilibration,
        n_measurement: r.n_measurement,
        block_size: r.block_size,
        energy,
        results,
        failures,
        fits,
        chains,
    };
    Ok(RunOutput { summary, merged, checkpoints: outputs.into_iter().map(|o| o.checkpoint).collect() })
}

/// Writes `results.csv`, `summary.json`, `run.log` and optional checkpoints.
pub fn write_run(out_dir: &Path, out: &RunOutput, write_checkpoints: bool) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    estimators::write_csv(&out.summary.results, fs::File::create(out_dir.join("results.csv"))?)?;
    fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&out.summary)? + "\n")?;
    let mut log = String::new();
    for c in &out.summary.chains {
        let k = &c.counters;
        log += &format!(
            "chain {} seed {} sweeps {} cutoff {} insert {}/{} remove {}/{} clusters {} flipped {} twists {} symmetry {}\n",
            c.chain, c.seed, k.sweeps, c.cutoff, k.insert_accepted, k.insert_proposals, k.remove_accepted,
            k.remove_proposals, k.clusters, k.clusters_flipped, k.twists, k.symmetry_flips
        );
    }
    for (name, err) in &out.summary.failures {
        log += &format!("FAILED {name}: {err}\n");
    }
    fs::write(out_dir.join("run.log"), log)?;
    if write_checkpoints {
        for (k, cp) in out.checkpoints.iter().enumerate() {
            fs::write(out_dir.join(format!("chain_{k}.json")), serde_json::to_string(cp)?)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiSummary {
    pub schema_version: u32,
    pub model: crate::config::ModelConfig,
    pub beta: f64,
    pub region: String,
    pub n_a: usize,
    pub method: ext_ensemble::TiMethod,
    pub s2_e2: Estimate,
    pub s2_e1: Option<Estimate>,
}

#[derive(Debug, Clone)]
pub struct TiOutput {
    pub summary: TiSummary,
    pub nodes: Vec<NodeResult>,
}

/// One chain per (node, chain) pair; chains of a node are merged in order.
pub fn run_ti(cfg: &RunConfig, threads: usize) -> Result<TiOutput> {
    cfg.validate()?;
    let ti = cfg.ti.as_ref().ok_or_else(|| Error::config("ti", "missing [ti] section"))?;
    let model = Arc::new(cfg.model.build()?);
    let beta = cfg.model.beta()?;
    let region = parse_region(&model.lattice, &ti.region)?;
    let grid = ext_ensemble::gauss_legendre_grid(ti.nodes)?;
    let r = &cfg.run;
    let jobs = grid.len() * r.n_chains;
    let results = parallel_map(jobs, threads, |j| {
        let node = j / r.n_chains;
        let p = NodeParams {
            lambda: grid[node].0,
            weight: grid[node].1,
            method: ti.method,
            beta,
            n_equilibration: r.n_equilibration,
            n_measurement: r.n_measurement,
            block_size: r.block_size,
            seed: split_seed(r.seed, j as u64),
        };
        ext_ensemble::run_node(model.clone(), &region, &p)
            .map_err(|e| Error::NodeFailed { node, lambda: p.lambda, source: Box::new(e) })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let nodes = results
        .chunks(r.n_chains)
        .map(merge_node)
        .collect::<Result<Vec<_>>>()?;
    let s2_e2 = ext_ensemble::s2_from_nodes(&nodes, region.len(), false)?;
    let s2_e1 = match ti.method {
        ext_ensemble::TiMethod::SubsetB => Some(ext_ensemble::s2_from_nodes(&nodes, region.len(), true)?),
        ext_ensemble::TiMethod::AnalyticB => None,
    };
    Ok(TiOutput {
        summary: TiSummary {
            schema_version: SCHEMA_VERSION,
            model: cfg.model.clone(),
            beta,
            region: ti.region.clone(),
            n_a: region.len(),
            method: ti.method,
            s2_e2,
            s2_e1,
        },
        nodes,
    })
}

fn merge_node(parts: &[NodeResult]) -> Result<NodeResult> {
    let first = &parts[0];
    let e2 = stats::merge(&parts.iter().map(|p| p.e2.clone()).collect::<Vec<_>>())?;
    let e1 = match &first.e1 {
        Some(_) => Some(stats::merge(&parts.iter().filter_map(|p| p.e1.clone()).collect::<Vec<_>>())?),
        None => None,
    };
    Ok(NodeResult {
        e1,
        e2,
        n_samples: parts.iter().map(|p| p.n_samples).sum(),
        cutoff: parts.iter().map(|p| p.cutoff).max().unwrap_or(0),
        ..first.clone()
    })
}

pub fn write_ti(out_dir: &Path, out: &TiOutput) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    ext_ensemble::write_nodes_csv(&out.nodes, fs::File::create(out_dir.join("ti_nodes.csv"))?)?;
    fs::write(out_dir.join("ti_summary.json"), serde_json::to_string_pretty(&out.summary)? + "\n")?;
    Ok(())
}
