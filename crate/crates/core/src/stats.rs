//! Online, mergeable moment accumulation and the stationary identities built
//! on it.
//!
//! Samples are grouped into consecutive batches of fixed length; every derived
//! quantity is evaluated once on the pooled means (the value) and once per
//! completed batch (the spread, which gives an autocorrelation-aware standard
//! error).

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{h1_norm_sq, ShellParams, ShellState};

pub const DEFAULT_BATCH_LEN: usize = 100;

/// A value with its standard error and the number of samples behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    pub n_samples: u64,
}

impl Estimate {
    pub fn new(value: f64, se: f64, n_samples: u64) -> Self {
        Self { value, se, n_samples }
    }

    /// `|value − target| ≤ k·se`, with a rounding allowance for se = 0.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.se + 1e-12 * (1.0 + target.abs())
    }

    /// Two independent estimates agree within `k` combined standard errors.
    pub fn agrees_with(&self, other: &Estimate, k: f64) -> bool {
        let se = self.se.hypot(other.se);
        (self.value - other.value).abs() <= k * se + 1e-12 * (1.0 + self.value.abs())
    }

    pub fn relative_deviation(&self, target: f64) -> f64 {
        (self.value - target).abs() / target.abs()
    }
}

/// Raw running sums for one group of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sums {
    pub count: u64,
    pub u: Vec<f64>,
    pub u2: Vec<f64>,
    pub u3: Vec<f64>,
    /// `u_j u_{j+1}` (zero at the top shell by the closure).
    pub cross: Vec<f64>,
    /// `u_j² u_{j+1}`.
    pub flux_part: Vec<f64>,
    pub h1: f64,
    pub energy: f64,
    pub exp_moment: f64,
}

impl Sums {
    fn zeros(n: usize) -> Self {
        Self {
            count: 0,
            u: vec![0.0; n],
            u2: vec![0.0; n],
            u3: vec![0.0; n],
            cross: vec![0.0; n],
            flux_part: vec![0.0; n],
            h1: 0.0,
            energy: 0.0,
            exp_moment: 0.0,
        }
    }

    fn add_state(&mut self, u: &[f64], kappa: f64) {
        let n = u.len();
        self.count += 1;
        let mut energy = 0.0;
        for j in 0..n {
            let x = u[j];
            let x2 = x * x;
            let next = if j + 1 < n { u[j + 1] } else { 0.0 };
            self.u[j] += x;
            self.u2[j] += x2;
            self.u3[j] += x2 * x;
            self.cross[j] += x * next;
            self.flux_part[j] += x2 * next;
            energy += x2;
        }
        self.energy += energy;
        self.h1 += h1_norm_sq(u);
        self.exp_moment += (kappa * energy).exp();
    }

    fn add(&mut self, o: &Sums) {
        self.count += o.count;
        for (a, b) in [
            (&mut self.u, &o.u),
            (&mut self.u2, &o.u2),
            (&mut self.u3, &o.u3),
            (&mut self.cross, &o.cross),
            (&mut self.flux_part, &o.flux_part),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.h1 += o.h1;
        self.energy += o.energy;
        self.exp_moment += o.exp_moment;
    }

    pub fn means(&self) -> Means<'_> {
        Means {
            sums: self,
            inv: 1.0 / self.count as f64,
        }
    }
}

/// Sample means of one [`Sums`] group.
#[derive(Debug, Clone, Copy)]
pub struct Means<'a> {
    sums: &'a Sums,
    inv: f64,
}

impl Means<'_> {
    pub fn n_shells(&self) -> usize {
        self.sums.u.len()
    }
    pub fn u(&self, j: usize) -> f64 {
        self.sums.u[j] * self.inv
    }
    pub fn u2(&self, j: usize) -> f64 {
        self.sums.u2[j] * self.inv
    }
    pub fn u3(&self, j: usize) -> f64 {
        self.sums.u3[j] * self.inv
    }
    pub fn cross(&self, j: usize) -> f64 {
        self.sums.cross[j] * self.inv
    }
    pub fn flux_part(&self, j: usize) -> f64 {
        self.sums.flux_part[j] * self.inv
    }
    pub fn h1(&self) -> f64 {
        self.sums.h1 * self.inv
    }
    pub fn energy(&self) -> f64 {
        self.sums.energy * self.inv
    }
    pub fn exp_moment(&self) -> f64 {
        self.sums.exp_moment * self.inv
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentAccumulator {
    n_shells: usize,
    burn_in: f64,
    batch_len: usize,
    kappa: f64,
    total: Sums,
    batches: Vec<Sums>,
    /// Samples not yet forming a full batch; they enter the totals only.
    open: Sums,
}

impl MomentAccumulator {
    pub fn new(n_shells: usize, burn_in: f64) -> Self {
        Self::with_options(n_shells, burn_in, DEFAULT_BATCH_LEN, 0.0)
    }

    /// `kappa` sets the channel `exp(κ|u|²)`.
    pub fn with_options(n_shells: usize, burn_in: f64, batch_len: usize, kappa: f64) -> Self {
        assert!(batch_len > 0, "batch length must be positive");
        Self {
            n_shells,
            burn_in,
            batch_len,
            kappa,
            total: Sums::zeros(n_shells),
            batches: Vec::new(),
            open: Sums::zeros(n_shells),
        }
    }

    pub fn n_shells(&self) -> usize {
        self.n_shells
    }
    pub fn burn_in(&self) -> f64 {
        self.burn_in
    }
    pub fn batch_len(&self) -> usize {
        self.batch_len
    }
    pub fn kappa(&self) -> f64 {
        self.kappa
    }
    pub fn count(&self) -> u64 {
        self.total.count
    }
    pub fn n_batches(&self) -> usize {
        self.batches.len()
    }
    pub fn totals(&self) -> &Sums {
        &self.total
    }
    pub fn batches(&self) -> &[Sums] {
        &self.batches
    }

    /// Record one state; states before the burn-in cutoff are ignored.
    pub fn record(&mut self, state: &ShellState) {
        if state.t < self.burn_in {
            return;
        }
        self.record_unconditionally(&state.u);
    }

    pub fn record_unconditionally(&mut self, u: &[f64]) {
        assert_eq!(u.len(), self.n_shells, "state length");
        self.total.add_state(u, self.kappa);
        self.open.add_state(u, self.kappa);
        if self.open.count as usize == self.batch_len {
            let full = std::mem::replace(&mut self.open, Sums::zeros(self.n_shells));
            self.batches.push(full);
        }
    }

    /// Pool another accumulator. Totals are exact sums; completed batches are
    /// concatenated; open batches are not contiguous across runs, so they stay
    /// in the totals only and later records start a fresh batch.
    pub fn merge(&mut self, other: &MomentAccumulator) {
        assert_eq!(self.n_shells, other.n_shells, "merging different truncations");
        self.total.add(&other.total);
        self.batches.extend(other.batches.iter().cloned());
        self.open = Sums::zeros(self.n_shells);
    }

    pub fn means(&self) -> Result<Means<'_>> {
        if self.total.count == 0 {
            return Err(Error::InsufficientSamples("no samples recorded".into()));
        }
        Ok(self.total.means())
    }

    /// Evaluate `f` on the pooled means and on every batch.
    pub fn estimate(&self, f: impl Fn(&Means<'_>) -> f64) -> Result<Estimate> {
        let value = f(&self.means()?);
        let nb = self.batches.len();
        let se = if nb >= 2 {
            let vals: Vec<f64> = self.batches.iter().map(|b| f(&b.means())).collect();
            let m = vals.iter().sum::<f64>() / nb as f64;
            let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (nb - 1) as f64;
            (var / nb as f64).sqrt()
        } else {
            f64::NAN
        };
        Ok(Estimate::new(value, se, self.total.count))
    }

    fn require_batches(&self) -> Result<()> {
        if self.batches.len() < 2 {
            return Err(Error::InsufficientSamples(format!(
                "{} complete batches of {} samples past burn-in; need at least 2",
                self.batches.len(),
                self.batch_len
            )));
        }
        Ok(())
    }

    pub fn mean_u(&self, j: usize) -> Result<Estimate> {
        self.estimate(|m| m.u(j))
    }
    pub fn mean_u2(&self, j: usize) -> Result<Estimate> {
        self.estimate(|m| m.u2(j))
    }
    pub fn mean_u3(&self, j: usize) -> Result<Estimate> {
        self.estimate(|m| m.u3(j))
    }

    /// `⟨exp(κ|u|²)⟩`.
    pub fn exp_moment(&self) -> Result<Estimate> {
        self.estimate(|m| m.exp_moment())
    }
}

/// First- and second-moment balance of a stationary accumulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    /// `⟨Π_n⟩ = 2^{cn}⟨u_n² u_{n+1}⟩`.
    pub flux: Vec<Estimate>,
    /// `ν4^j⟨u_j⟩ + 2^{cj}⟨u_j u_{j+1}⟩ − 2^{c(j−1)}⟨u_{j−1}²⟩`, zero in law for `j ≥ 1`.
    pub r1: Vec<Estimate>,
    /// `S_n = νΣ_{j≤n}4^j⟨u_j²⟩ + ⟨Π_n⟩`, equal to σ²/2 in law.
    pub partial_sums: Vec<Estimate>,
    pub target: f64,
    /// Every `S_n` lies within 3 se of the target.
    pub consistent: bool,
}

pub fn balance_residuals(acc: &MomentAccumulator, params: &ShellParams) -> Result<BalanceReport> {
    params.check_len(acc.n_shells())?;
    acc.require_batches()?;
    let n = acc.n_shells();
    let k = params.coupling().to_vec();
    let lam = params.viscous_rates().to_vec();
    let mut flux = Vec::with_capacity(n);
    let mut r1 = Vec::with_capacity(n);
    let mut partial_sums = Vec::with_capacity(n);
    for j in 0..n {
        flux.push(acc.estimate(|m| k[j] * m.flux_part(j))?);
        r1.push(acc.estimate(|m| {
            let gain = if j >= 1 { k[j - 1] * m.u2(j - 1) } else { 0.0 };
            lam[j] * m.u(j) + k[j] * m.cross(j) - gain
        })?);
        partial_sums.push(acc.estimate(|m| {
            (0..=j).map(|i| lam[i] * m.u2(i)).sum::<f64>() + k[j] * m.flux_part(j)
        })?);
    }
    let target = 0.5 * params.sigma() * params.sigma();
    let consistent = partial_sums.iter().all(|s| s.within(target, 3.0));
    Ok(BalanceReport {
        flux,
        r1,
        partial_sums,
        target,
        consistent,
    })
}

/// `ν⟨|u|²_{H¹}⟩`.
pub fn dissipation_rate(acc: &MomentAccumulator, params: &ShellParams) -> Result<Estimate> {
    params.check_len(acc.n_shells())?;
    acc.require_batches()?;
    let nu = params.nu();
    acc.estimate(|m| nu * m.h1())
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let resid: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
        .sum();
    let se = if xs.len() > 2 {
        (resid / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    (slope, se)
}

/// Least-squares slope of `log₂⟨u_j²⟩` against `j` over `j_range`.
///
/// With at least two batches the error is the batch spread of per-batch
/// slopes; otherwise the ordinary regression standard error.
pub fn spectrum_slope(acc: &MomentAccumulator, j_range: RangeInclusive<usize>) -> Result<Estimate> {
    let (lo, hi) = (*j_range.start(), *j_range.end());
    if j_range.is_empty() || hi - lo < 1 {
        return Err(Error::Spectrum(format!("range [{lo}, {hi}] needs at least two shells")));
    }
    if hi >= acc.n_shells() {
        return Err(Error::IndexOutOfRange {
            index: hi,
            n_shells: acc.n_shells(),
        });
    }
    let means = acc.means()?;
    let xs: Vec<f64> = (lo..=hi).map(|j| j as f64).collect();
    let log_spectrum = |m: &Means<'_>| -> Option<Vec<f64>> {
        (lo..=hi)
            .map(|j| {
                let v = m.u2(j);
                (v > 0.0).then(|| v.log2())
            })
            .collect()
    };
    let ys = log_spectrum(&means).ok_or_else(|| {
        Error::Spectrum(format!("nonpositive second moment in range [{lo}, {hi}]"))
    })?;
    let (slope, ols_se) = least_squares_slope(&xs, &ys);
    let per_batch: Option<Vec<f64>> = acc
        .batches()
        .iter()
        .map(|b| log_spectrum(&b.means()).map(|y| least_squares_slope(&xs, &y).0))
        .collect();
    let se = match per_batch {
        Some(v) if v.len() >= 2 => {
            let nb = v.len() as f64;
            let m = v.iter().sum::<f64>() / nb;
            (v.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (nb - 1.0) / nb).sqrt()
        }
        _ => ols_se,
    };
    Ok(Estimate::new(slope, se, acc.count()))
}

/// `log₂⟨u_j²⟩` with a delta-method standard error, one entry per shell.
pub fn log2_spectrum(acc: &MomentAccumulator) -> Result<Vec<Estimate>> {
    (0..acc.n_shells())
        .map(|j| {
            let e = acc.mean_u2(j)?;
            Ok(Estimate::new(
                e.value.log2(),
                e.se / (e.value * std::f64::consts::LN_2),
                e.n_samples,
            ))
        })
        .collect()
}

/// Everything a stationary run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryReport {
    pub n_samples: u64,
    pub n_batches: usize,
    pub mean_u: Vec<Estimate>,
    pub mean_u2: Vec<Estimate>,
    pub mean_u3: Vec<Estimate>,
    pub balance: BalanceReport,
    pub spectrum_slope: Option<Estimate>,
    pub dissipation: Estimate,
    pub exp_moment: Estimate,
}

impl StationaryReport {
    /// `spectrum_range` is skipped (slope `None`) when it does not fit the truncation.
    pub fn build(
        acc: &MomentAccumulator,
        params: &ShellParams,
        spectrum_range: RangeInclusive<usize>,
    ) -> Result<Self> {
        let balance = balance_residuals(acc, params)?;
        let n = acc.n_shells();
        let collect = |f: &dyn Fn(usize) -> Result<Estimate>| (0..n).map(f).collect::<Result<Vec<_>>>();
        let slope = if *spectrum_range.end() < n {
            spectrum_slope(acc, spectrum_range).ok()
        } else {
            None
        };
        Ok(Self {
            n_samples: acc.count(),
            n_batches: acc.n_batches(),
            mean_u: collect(&|j| acc.mean_u(j))?,
            mean_u2: collect(&|j| acc.mean_u2(j))?,
            mean_u3: collect(&|j| acc.mean_u3(j))?,
            balance,
            spectrum_slope: slope,
            dissipation: dissipation_rate(acc, params)?,
            exp_moment: acc.exp_moment()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub window: f64,
    pub variance: f64,
    pub n_windows: usize,
}

/// Variance of `(1/T)∫φ dt` over disjoint windows of each length in `windows`.
///
/// `series[i]` holds `φ` sampled every `sample_dt` along trajectory `i`
/// (already past burn-in). Each trajectory is cut into as many disjoint windows
/// as fit; integrals use the trapezoid rule.
pub fn time_average_scan(series: &[Vec<f64>], sample_dt: f64, windows: &[f64]) -> Vec<ScanRow> {
    windows
        .iter()
        .map(|&t| {
            let m = (t / sample_dt).round().max(1.0) as usize;
            let mut avgs = Vec::new();
            for s in series {
                let mut start = 0;
                while start + m < s.len() {
                    let w = &s[start..=start + m];
                    let integral: f64 = w.windows(2).map(|p| 0.5 * (p[0] + p[1])).sum::<f64>();
                    avgs.push(integral / m as f64);
                    start += m;
                }
            }
            let n = avgs.len();
            let variance = if n >= 2 {
                let mu = avgs.iter().sum::<f64>() / n as f64;
                avgs.iter().map(|a| (a - mu).powi(2)).sum::<f64>() / (n - 1) as f64
            } else {
                f64::NAN
            };
            ScanRow {
                window: m as f64 * sample_dt,
                variance,
                n_windows: n,
            }
        })
        .collect()
}
