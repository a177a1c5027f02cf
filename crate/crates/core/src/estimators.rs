//! Diagonal measurements on the slice-0 Bell configuration.
//!
//! Every observable is the mean of a per-sample value: a Pauli sign, the swap
//! sign of a region, or its gauge-averaged variant. Symmetry-equivalent copies
//! of an observable are averaged within each sample.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bell::{BellConfig, PauliString, SiteMask};
use crate::error::{Error, Result};
use crate::lattice::{translates, Geometry, Lattice, Region};
use crate::models::OperatorTable;
use crate::stats::{self, BinnedSeries, Estimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    PauliSq,
    Renyi2,
    Renyi2Gauge,
    Wilson,
}

impl ProbeKind {
    pub fn name(self) -> &'static str {
        match self {
            ProbeKind::PauliSq => "pauli_sq",
            ProbeKind::Renyi2 => "renyi2",
            ProbeKind::Renyi2Gauge => "renyi2_gauge",
            ProbeKind::Wilson => "wilson_sq",
        }
    }

    pub fn is_entropy(self) -> bool {
        matches!(self, ProbeKind::Renyi2 | ProbeKind::Renyi2Gauge)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Compiled {
    Sign(PauliString),
    Swap(SiteMask),
    /// Swap sign of `a`, times the indicator that `r^x` has even parity on
    /// every group.
    GaugeSwap { a: SiteMask, groups: Vec<SiteMask> },
}

impl Compiled {
    #[inline]
    fn value(&self, cfg: &BellConfig) -> f64 {
        match self {
            Compiled::Sign(s) => cfg.pauli_sign_unchecked(s) as f64,
            Compiled::Swap(a) => cfg.swap_sign_mask(a) as f64,
            Compiled::GaugeSwap { a, groups } => {
                if groups.iter().any(|g| cfg.x_parity_mask(g)) {
                    0.0
                } else {
                    cfg.swap_sign_mask(a) as f64
                }
            }
        }
    }
}

/// One observable, possibly averaged over equivalent copies.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub kind: ProbeKind,
    pub label: String,
    /// Number of sites in the region, for entropies.
    pub region_size: usize,
    copies: Vec<Compiled>,
}

impl Probe {
    pub fn pauli_sq(label: impl Into<String>, s: PauliString) -> Self {
        Probe { kind: ProbeKind::PauliSq, label: label.into(), region_size: 0, copies: vec![Compiled::Sign(s)] }
    }

    pub fn renyi2(lat: &Lattice, a: &Region) -> Result<Self> {
        Ok(Probe {
            kind: ProbeKind::Renyi2,
            label: a.label.clone(),
            region_size: a.len(),
            copies: vec![Compiled::Swap(SiteMask::from_region(lat.n_sites, a)?)],
        })
    }

    /// Plain swap estimator averaged over all translations of `a` on a torus or ring.
    pub fn renyi2_translated(lat: &Lattice, a: &Region) -> Result<Self> {
        let copies = translates(lat, a)?
            .iter()
            .map(|r| SiteMask::from_region(lat.n_sites, r).map(Compiled::Swap))
            .collect::<Result<_>>()?;
        Ok(Probe { kind: ProbeKind::Renyi2, label: a.label.clone(), region_size: a.len(), copies })
    }

    /// Gauge-averaged swap estimator on the torus, optionally also averaged
    /// over translations.
    pub fn renyi2_gauge(lat: &Lattice, a: &Region, translate: bool) -> Result<Self> {
        if lat.geometry != Geometry::TorusLinks {
            return Err(Error::UnsupportedGeometry("gauge estimator needs the torus".into()));
        }
        let regions = if translate { translates(lat, a)? } else { vec![a.clone()] };
        let copies = regions.iter().map(|r| gauge_swap(lat, r)).collect::<Result<_>>()?;
        Ok(Probe { kind: ProbeKind::Renyi2Gauge, label: a.label.clone(), region_size: a.len(), copies })
    }

    /// `|<W>|^2` of an `X` loop, i.e. the mean of `prod (-1)^{r^z}` on the loop.
    pub fn wilson(lat: &Lattice, lp: &Region, translate: bool) -> Result<Self> {
        let regions = if translate { translates(lat, lp)? } else { vec![lp.clone()] };
        let copies = regions
            .iter()
            .map(|r| PauliString::x_string(lat.n_sites, &r.sites).map(Compiled::Sign))
            .collect::<Result<_>>()?;
        Ok(Probe { kind: ProbeKind::Wilson, label: lp.label.clone(), region_size: lp.len(), copies })
    }

    pub fn n_copies(&self) -> usize {
        self.copies.len()
    }

    #[inline]
    pub fn value(&self, cfg: &BellConfig) -> f64 {
        if self.copies.len() == 1 {
            return self.copies[0].value(cfg);
        }
        self.copies.iter().map(|c| c.value(cfg)).sum::<f64>() / self.copies.len() as f64
    }
}

fn gauge_swap(lat: &Lattice, a: &Region) -> Result<Compiled> {
    let mask = a.mask(lat.n_sites);
    let mut groups = Vec::new();
    for star in &lat.vertex_stars {
        let inside: Vec<usize> = star.iter().copied().filter(|&s| mask[s]).collect();
        if !inside.is_empty() && inside.len() < 4 {
            groups.push(SiteMask::from_sites(lat.n_sites, &inside)?);
        }
    }
    Ok(Compiled::GaugeSwap { a: SiteMask::from_region(lat.n_sites, a)?, groups })
}

/// Streaming block averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accumulator {
    pub block_size: usize,
    pub bins: Vec<f64>,
    block_sum: f64,
    block_count: usize,
    pub n_samples: u64,
    sum: f64,
    sum_sq: f64,
}

impl Accumulator {
    pub fn new(block_size: usize) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::InvalidSize { what: "block size", value: 0 });
        }
        Ok(Accumulator { block_size, bins: Vec::new(), block_sum: 0.0, block_count: 0, n_samples: 0, sum: 0.0, sum_sq: 0.0 })
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.block_sum += x;
        self.block_count += 1;
        self.n_samples += 1;
        self.sum += x;
        self.sum_sq += x * x;
        if self.block_count == self.block_size {
            self.bins.push(self.block_sum / self.block_size as f64);
            self.block_sum = 0.0;
            self.block_count = 0;
        }
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.n_samples as f64
    }

    /// Population variance of the individual samples.
    pub fn sample_variance(&self) -> f64 {
        let n = self.n_samples as f64;
        let m = self.sum / n;
        self.sum_sq / n - m * m
    }

    pub fn series(&self) -> Result<BinnedSeries> {
        BinnedSeries::from_bins(self.bins.clone(), self.block_size)
    }
}

/// Per-chain accumulators for a set of probes and the operator count.
#[derive(Debug, Clone)]
pub struct Measurements {
    pub probes: Vec<Probe>,
    pub values: Vec<Accumulator>,
    pub n_ops: Accumulator,
}

impl Measurements {
    pub fn new(probes: Vec<Probe>, block_size: usize) -> Result<Self> {
        let values = probes.iter().map(|_| Accumulator::new(block_size)).collect::<Result<_>>()?;
        Ok(Measurements { probes, values, n_ops: Accumulator::new(block_size)? })
    }

    pub fn record(&mut self, cfg: &BellConfig, n_ops: usize) {
        for (p, acc) in self.probes.iter().zip(&mut self.values) {
            acc.push(p.value(cfg));
        }
        self.n_ops.push(n_ops as f64);
    }
}

/// Mean of the per-sample value of `probe` over a stream.
pub fn measure(samples: &[BellConfig], probe: &Probe, block_size: usize) -> Result<BinnedSeries> {
    let values: Vec<f64> = samples.iter().map(|c| probe.value(c)).collect();
    stats::bin(&values, block_size)
}

/// Squared expectation `Tr(rho s)^2` from the mean Pauli sign.
pub fn measure_pauli_sq(samples: &[BellConfig], s: &PauliString, block_size: usize) -> Result<BinnedSeries> {
    measure(samples, &Probe::pauli_sq(s.to_string(), s.clone()), block_size)
}

/// `S2 = -ln <swap sign>` with a jackknife error.
pub fn measure_renyi2(samples: &[BellConfig], lat: &Lattice, a: &Region, block_size: usize) -> Result<Estimate> {
    if a.is_empty() {
        return Ok(Estimate::new(0.0, 0.0));
    }
    renyi2_from(&measure(samples, &Probe::renyi2(lat, a)?, block_size)?)
}

pub fn measure_renyi2_gauge(samples: &[BellConfig], lat: &Lattice, a: &Region, block_size: usize) -> Result<Estimate> {
    renyi2_from(&measure(samples, &Probe::renyi2_gauge(lat, a, false)?, block_size)?)
}

pub fn measure_wilson(samples: &[BellConfig], lat: &Lattice, lp: &Region, block_size: usize) -> Result<BinnedSeries> {
    measure(samples, &Probe::wilson(lat, lp, false)?, block_size)
}

pub fn renyi2_from(swap: &BinnedSeries) -> Result<Estimate> {
    stats::jackknife_log(&swap.bins)
}

/// `S(AB) + S(BC) - S(ABC) - S(B)` from independent estimates.
pub fn topo_ee(ab: Estimate, bc: Estimate, abc: Estimate, b: Estimate) -> Estimate {
    Estimate::new(
        ab.value + bc.value - abc.value - b.value,
        (ab.error.powi(2) + bc.error.powi(2) + abc.error.powi(2) + b.error.powi(2)).sqrt(),
    )
}

/// The same combination from swap-sign bins measured on one run, with a
/// jackknife error that keeps their correlations.
pub fn topo_ee_correlated(ab: &BinnedSeries, bc: &BinnedSeries, abc: &BinnedSeries, b: &BinnedSeries) -> Result<Estimate> {
    stats::jackknife(&[&ab.bins, &bc.bins, &abc.bins, &b.bins], |m| {
        Ok(stats::neg_log(m[0])? + stats::neg_log(m[1])? - stats::neg_log(m[2])? - stats::neg_log(m[3])?)
    })
}

/// Energy per copy from the operator count. Every locus contributes a
/// constant `C` to the shifted two-copy Hamiltonian.
pub fn energy_from_n(n_mean: Estimate, beta: f64, table: &OperatorTable) -> Estimate {
    let shift = table.a_coupling * table.n_a as f64 + table.b_coupling * table.n_b as f64;
    Estimate::new((-n_mean.value / beta + 2.0 * shift) / 2.0, n_mean.error / beta / 2.0)
}

pub fn measure_energy(ns: &[f64], beta: f64, table: &OperatorTable, block_size: usize) -> Result<Estimate> {
    Ok(energy_from_n(stats::bin(ns, block_size)?.estimate(), beta, table))
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub observable: String,
    pub label: String,
    pub mean: f64,
    pub stderr: f64,
    pub n_bins: usize,
    pub block_size: usize,
}

impl ResultRow {
    pub fn new(observable: &str, label: &str, e: Estimate, n_bins: usize, block_size: usize) -> Self {
        ResultRow { observable: observable.into(), label: label.into(), mean: e.value, stderr: e.error, n_bins, block_size }
    }

    pub fn estimate(&self) -> Estimate {
        Estimate::new(self.mean, self.stderr)
    }
}

/// Turns merged probe series into result rows. Entropies are reported as
/// `S2`, everything else as the plain mean.
pub fn probe_row(probe: &Probe, series: &BinnedSeries) -> Result<ResultRow> {
    let e = if probe.kind.is_entropy() { renyi2_from(series)? } else { series.estimate() };
    Ok(ResultRow::new(probe.kind.name(), &probe.label, e, series.n_bins(), series.block_size))
}

pub fn write_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<ResultRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(|e| Error::Parse(e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_chain, build_torus_links, square_region, wilson_loop, Boundary};
    use crate::models::{operator_table, ModelSpec};

    fn cfg(text: &str) -> BellConfig {
        text.parse().unwrap()
    }

    #[test]
    fn empty_region_has_zero_entropy() {
        let lat = build_chain(4, Boundary::Open).unwrap();
        let samples = vec![cfg("11011000"); 16];
        let e = measure_renyi2(&samples, &lat, &Region::empty("none"), 2).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn exhausted_swap_mean_is_reported() {
        let lat = build_chain(2, Boundary::Open).unwrap();
        let a = Region::new("A", vec![0], 2).unwrap();
        let samples = vec![cfg("1100"); 16];
        assert!(matches!(measure_renyi2(&samples, &lat, &a, 2), Err(Error::EstimatorExhausted { .. })));
    }

    #[test]
    fn gauge_swap_values() {
        let lat = build_torus_links(2).unwrap();
        let (a, da) = square_region(&lat, 2).unwrap();
        let p = Probe::renyi2_gauge(&lat, &a, false).unwrap();
        let mut c = BellConfig::identity(8);
        assert_eq!(p.value(&c), 1.0);
        c.flip_x(da.sites[0]);
        assert_eq!(p.value(&c), 0.0);
        let plain = Probe::renyi2(&lat, &a).unwrap();
        let mut c = BellConfig::identity(8);
        let bulk: Vec<usize> = a.sites.iter().copied().filter(|s| !da.contains(*s)).collect();
        if let Some(&s) = bulk.first() {
            c.flip_x(s);
            c.flip_z(s);
            assert_eq!(p.value(&c), plain.value(&c));
        }
    }

    #[test]
    fn gauge_groups_reduce_to_boundary_links_on_larger_tori() {
        let lat = build_torus_links(4).unwrap();
        let (a, da) = square_region(&lat, 4).unwrap();
        let Compiled::GaugeSwap { groups, .. } = gauge_swap(&lat, &a).unwrap() else { unreachable!() };
        let mut covered: Vec<usize> = Vec::new();
        for g in &groups {
            assert_eq!(g.count(), 1);
            covered.extend((0..32).filter(|&i| SiteMask::from_sites(32, &[i]).unwrap().words()[0] & g.words()[0] != 0));
        }
        covered.sort_unstable();
        assert_eq!(covered, da.sites);
    }

    #[test]
    fn wilson_sign_is_z_parity() {
        let lat = build_torus_links(3).unwrap();
        let w = wilson_loop(&lat, 0, 0, 1, 1).unwrap();
        let p = Probe::wilson(&lat, &w, false).unwrap();
        let mut c = BellConfig::identity(18);
        assert_eq!(p.value(&c), 1.0);
        c.flip_z(w.sites[0]);
        assert_eq!(p.value(&c), -1.0);
        c.flip_x(w.sites[1]);
        assert_eq!(p.value(&c), -1.0);
        let avg = Probe::wilson(&lat, &w, true).unwrap();
        assert_eq!(avg.n_copies(), 9);
        // link 0 lies on two of the nine plaquettes
        assert!((avg.value(&c) - 5.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn topo_combinations() {
        let e = Estimate::new(0.4, 0.01);
        let t = topo_ee(e, e, e, e);
        assert_eq!(t.value, 0.0);
        assert!((t.error - 0.02).abs() < 1e-12);
        let bins: Vec<f64> = (0..16).map(|k| 0.5 + 0.01 * (k % 3) as f64).collect();
        let s = BinnedSeries::from_bins(bins, 1).unwrap();
        let c = topo_ee_correlated(&s, &s, &s, &s).unwrap();
        assert!(c.value.abs() < 1e-12 && c.error < 1e-12);
    }

    #[test]
    fn accumulator_bins_and_variance() {
        let mut acc = Accumulator::new(2).unwrap();
        for x in [1.0, -1.0, 1.0, 1.0, -1.0] {
            acc.push(x);
        }
        assert_eq!(acc.bins, vec![0.0, 1.0]);
        assert!((acc.sample_variance() - (1.0 - 0.04)).abs() < 1e-12);
    }

    #[test]
    fn energy_at_infinite_temperature_limit() {
        let model = ModelSpec::tfim(4, 0.5, Boundary::Open).unwrap();
        let t = operator_table(&model);
        // <n> -> 2 beta sum_loci C as beta -> 0, where H is traceless
        let beta = 1e-3;
        let n = 2.0 * beta * (0.5 * 4.0 + 3.0);
        let e = measure_energy(&[n; 16], beta, &t, 2).unwrap();
        assert!(e.value.abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            ResultRow::new("renyi2", "half", Estimate::new(0.5, 0.01), 10, 100),
            ResultRow::new("pauli_sq", "Z0Z1", Estimate::new(0.25, 0.002), 12, 50),
        ];
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("observable,label,mean,stderr,n_bins,block_size\n"));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
    }
}
