//! Binning, jackknife errors, weighted line fits and a chi-square test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Smallest number of bins for which an error bar is reported.
pub const MIN_BINS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

impl Estimate {
    pub fn new(value: f64, error: f64) -> Self {
        Estimate { value, error }
    }

    /// Distance from `other` in units of the combined error.
    pub fn sigmas_from(&self, other: f64) -> f64 {
        (self.value - other).abs() / self.error
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedSeries {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub raw: Option<Vec<f64>>,
    pub block_size: usize,
    pub bins: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
}

impl BinnedSeries {
    pub fn from_bins(bins: Vec<f64>, block_size: usize) -> Result<Self> {
        if bins.len() < MIN_BINS {
            return Err(Error::InsufficientData { needed: MIN_BINS * block_size, got: bins.len() * block_size });
        }
        let (mean, stderr) = mean_stderr(&bins);
        Ok(BinnedSeries { raw: None, block_size, bins, mean, stderr })
    }

    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    /// Population variance of the bin means.
    pub fn bin_variance(&self) -> f64 {
        variance(&self.bins)
    }

    pub fn estimate(&self) -> Estimate {
        Estimate::new(self.mean, self.stderr)
    }

    pub fn drop_raw(mut self) -> Self {
        self.raw = None;
        self
    }
}

/// Non-overlapping block means; a trailing partial block is dropped.
pub fn bin(series: &[f64], block_size: usize) -> Result<BinnedSeries> {
    if block_size == 0 {
        return Err(Error::InvalidSize { what: "block size", value: 0 });
    }
    if series.len() < MIN_BINS * block_size {
        return Err(Error::InsufficientData { needed: MIN_BINS * block_size, got: series.len() });
    }
    let bins: Vec<f64> = series
        .chunks_exact(block_size)
        .map(|c| c.iter().sum::<f64>() / block_size as f64)
        .collect();
    let mut out = BinnedSeries::from_bins(bins, block_size)?;
    out.raw = Some(series.to_vec());
    Ok(out)
}

/// Concatenates bins of equal block size in the given order.
pub fn merge(parts: &[BinnedSeries]) -> Result<BinnedSeries> {
    let first = parts.first().ok_or(Error::InsufficientData { needed: 1, got: 0 })?;
    if let Some(p) = parts.iter().find(|p| p.block_size != first.block_size) {
        return Err(Error::LengthMismatch { expected: first.block_size, got: p.block_size });
    }
    let bins = parts.iter().flat_map(|p| p.bins.iter().copied()).collect();
    BinnedSeries::from_bins(bins, first.block_size)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Delete-one jackknife of `f` applied to the means of several bin series
/// of equal length. The value is `f` at the full means.
pub fn jackknife<F>(series: &[&[f64]], f: F) -> Result<Estimate>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let nb = series.first().map_or(0, |s| s.len());
    if nb < MIN_BINS {
        return Err(Error::InsufficientData { needed: MIN_BINS, got: nb });
    }
    if let Some(s) = series.iter().find(|s| s.len() != nb) {
        return Err(Error::LengthMismatch { expected: nb, got: s.len() });
    }
    let sums: Vec<f64> = series.iter().map(|s| s.iter().sum()).collect();
    let full: Vec<f64> = sums.iter().map(|s| s / nb as f64).collect();
    let value = f(&full)?;
    let mut reduced = vec![0.0; series.len()];
    let mut thetas = Vec::with_capacity(nb);
    for i in 0..nb {
        for (k, s) in series.iter().enumerate() {
            reduced[k] = (sums[k] - s[i]) / (nb - 1) as f64;
        }
        thetas.push(f(&reduced)?);
    }
    let tbar = mean(&thetas);
    let var = thetas.iter().map(|t| (t - tbar).powi(2)).sum::<f64>() * (nb - 1) as f64 / nb as f64;
    Ok(Estimate::new(value, var.sqrt()))
}

pub fn neg_log(m: f64) -> Result<f64> {
    if m > 0.0 {
        Ok(-m.ln())
    } else {
        Err(Error::EstimatorExhausted { mean: m })
    }
}

/// Jackknife estimate of `-ln(mean)`.
pub fn jackknife_log(bins: &[f64]) -> Result<Estimate> {
    if bins.len() >= MIN_BINS && mean(bins) <= 0.0 {
        return Err(Error::EstimatorExhausted { mean: mean(bins) });
    }
    jackknife(&[bins], |m| neg_log(m[0]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_err: f64,
    pub intercept_err: f64,
    pub chi2_per_dof: f64,
    pub r_squared: f64,
}

/// Weighted least squares `y = slope * x + intercept`. All-zero errors mean
/// an unweighted fit.
pub fn fit_linear(xs: &[f64], ys: &[f64], errs: &[f64]) -> Result<LinearFit> {
    let n = xs.len();
    if n < 3 {
        return Err(Error::InsufficientData { needed: 3, got: n });
    }
    if ys.len() != n || errs.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: ys.len().min(errs.len()) });
    }
    let unweighted = errs.iter().all(|&e| e == 0.0);
    if !unweighted && errs.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::Parse("fit errors must be all positive or all zero".into()));
    }
    let w: Vec<f64> = errs.iter().map(|&e| if unweighted { 1.0 } else { 1.0 / (e * e) }).collect();
    let s: f64 = w.iter().sum();
    let sx: f64 = w.iter().zip(xs).map(|(w, x)| w * x).sum();
    let sy: f64 = w.iter().zip(ys).map(|(w, y)| w * y).sum();
    let sxx: f64 = w.iter().zip(xs).map(|(w, x)| w * x * x).sum();
    let sxy: f64 = (0..n).map(|i| w[i] * xs[i] * ys[i]).sum();
    let det = s * sxx - sx * sx;
    if det.abs() <= 1e-12 * s * sxx.max(1e-300) {
        return Err(Error::DegenerateFit);
    }
    let slope = (s * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    let chi2: f64 = (0..n).map(|i| w[i] * (ys[i] - slope * xs[i] - intercept).powi(2)).sum();
    let dof = (n - 2) as f64;
    // unweighted fits scale the covariance by the residual variance
    let scale = if unweighted { chi2 / dof } else { 1.0 };
    let ybar = sy / s;
    let ss_tot: f64 = (0..n).map(|i| w[i] * (ys[i] - ybar).powi(2)).sum();
    Ok(LinearFit {
        slope,
        intercept,
        slope_err: (scale * s / det).sqrt(),
        intercept_err: (scale * sxx / det).sqrt(),
        chi2_per_dof: chi2 / dof,
        r_squared: if ss_tot > 0.0 { 1.0 - chi2 / ss_tot } else { 1.0 },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson test of observed counts against probabilities. Cells with
/// expected count below `min_expected` are pooled into one cell.
pub fn chi_square_test(observed: &[u64], probs: &[f64], min_expected: f64) -> Result<ChiSquare> {
    if observed.len() != probs.len() {
        return Err(Error::LengthMismatch { expected: probs.len(), got: observed.len() });
    }
    let total: u64 = observed.iter().sum();
    let norm: f64 = probs.iter().sum();
    let mut stat = 0.0;
    let mut cells = 0usize;
    let (mut pool_o, mut pool_e) = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probs) {
        let e = p / norm * total as f64;
        if e < min_expected {
            pool_o += o as f64;
            pool_e += e;
        } else {
            stat += (o as f64 - e).powi(2) / e;
            cells += 1;
        }
    }
    if pool_e > 0.0 {
        stat += (pool_o - pool_e).powi(2) / pool_e;
        cells += 1;
    } else if pool_o > 0.0 {
        stat = f64::INFINITY;
    }
    if cells < 2 {
        return Err(Error::InsufficientData { needed: 2, got: cells });
    }
    let dof = cells - 1;
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::Parse(e.to_string()))?;
    Ok(ChiSquare { statistic: stat, dof, p_value: 1.0 - dist.cdf(stat) })
}
