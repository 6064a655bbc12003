//! Tangent flow along a stored noise path, the Malliavin (control) Gram
//! matrix, and the low/high-mode probes built from them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{StepScheme, Stepper};
use crate::model::{unit_vector, ShellParams, ShellState};
use crate::noise::NoiseStream;

/// A trajectory stored at every step together with its increments, so the
/// discrete tangent map can be replayed over any grid-aligned interval.
#[derive(Debug, Clone)]
pub struct BasePath {
    stepper: Stepper,
    t0: f64,
    states: Vec<Vec<f64>>,
    increments: Vec<f64>,
    clamp_count: u64,
}

impl BasePath {
    /// Integrate from `init` for `horizon` with increments from `noise`.
    pub fn generate(
        params: &ShellParams,
        scheme: StepScheme,
        init: &ShellState,
        horizon: f64,
        noise: &mut NoiseStream,
    ) -> Result<Self> {
        params.check_len(init.u.len())?;
        let stepper = Stepper::new(params, scheme, noise.dt())?;
        let n_steps = (horizon / noise.dt()).round() as usize;
        if n_steps == 0 {
            return Err(Error::InvalidParameter {
                name: "horizon",
                reason: format!("horizon {horizon} is shorter than one step"),
            });
        }
        let mut states = Vec::with_capacity(n_steps + 1);
        let mut increments = Vec::with_capacity(n_steps);
        let mut u = init.u.clone();
        let mut scratch = vec![0.0; u.len()];
        let mut clamp_count = 0;
        states.push(u.clone());
        for k in 0..n_steps {
            let dw = noise.next_increment();
            let t = init.t + k as f64 * noise.dt();
            clamp_count += u64::from(stepper.step_checked(&mut u, &mut scratch, dw, t)?);
            states.push(u.clone());
            increments.push(dw);
        }
        Ok(Self {
            stepper,
            t0: init.t,
            states,
            increments,
            clamp_count,
        })
    }

    pub fn params(&self) -> &ShellParams {
        self.stepper.params()
    }
    pub fn dt(&self) -> f64 {
        self.stepper.dt()
    }
    pub fn n_steps(&self) -> usize {
        self.increments.len()
    }
    pub fn t_start(&self) -> f64 {
        self.t0
    }
    pub fn t_end(&self) -> f64 {
        self.t0 + self.n_steps() as f64 * self.dt()
    }
    pub fn clamp_count(&self) -> u64 {
        self.clamp_count
    }

    pub fn state_at(&self, k: usize) -> ShellState {
        ShellState::new(self.states[k].clone(), self.t0 + k as f64 * self.dt())
    }

    pub fn final_state(&self) -> ShellState {
        self.state_at(self.n_steps())
    }

    /// Grid index nearest to `t`.
    pub fn index_of(&self, t: f64) -> usize {
        ((t - self.t0) / self.dt()).round().max(0.0) as usize
    }

    fn interval(&self, s: f64, t: f64) -> Result<(usize, usize)> {
        let slack = 1e-9 * self.dt();
        if s.is_nan() || t.is_nan() || s > t || s < self.t0 - slack || t > self.t_end() + slack {
            return Err(Error::IntervalOutOfRange {
                start: s,
                end: t,
                stored_start: self.t0,
                stored_end: self.t_end(),
            });
        }
        Ok((self.index_of(s), self.index_of(t).min(self.n_steps())))
    }

    /// Replay the tangent map over step indices `[ks, kt)`.
    pub fn propagate_steps(&self, xi: &[f64], ks: usize, kt: usize) -> Vec<f64> {
        let mut rho = xi.to_vec();
        let mut out = vec![0.0; rho.len()];
        for k in ks..kt {
            self.stepper.tangent(&self.states[k], &rho, self.increments[k], &mut out);
            std::mem::swap(&mut rho, &mut out);
        }
        rho
    }
}

/// `J_{s,t} ξ`: the derivative of the discrete flow from `s` to `t` along the
/// stored path, applied to `ξ`. Times are rounded to the step grid.
pub fn propagate_tangent(path: &BasePath, xi: &[f64], s: f64, t: f64) -> Result<Vec<f64>> {
    path.params().check_len(xi.len())?;
    let (ks, kt) = path.interval(s, t)?;
    Ok(path.propagate_steps(xi, ks, kt))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub matrix: DMatrix<f64>,
    pub s: f64,
    pub t: f64,
    pub n_quad: usize,
}

impl GramMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.matrix.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }
}

/// Trapezoid nodes on the step grid: `(index, weight)` with duplicates merged.
fn quadrature_nodes(path: &BasePath, ks: usize, kt: usize, n_quad: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..=n_quad)
        .map(|i| ks + ((kt - ks) as f64 * i as f64 / n_quad as f64).round() as usize)
        .collect();
    idx.dedup();
    let dt = path.dt();
    let m = idx.len();
    if m == 1 {
        return vec![(idx[0], 0.0)];
    }
    (0..m)
        .map(|i| {
            let left = if i > 0 { idx[i] - idx[i - 1] } else { 0 };
            let right = if i + 1 < m { idx[i + 1] - idx[i] } else { 0 };
            (idx[i], 0.5 * (left + right) as f64 * dt)
        })
        .collect()
}

/// `M_{s,t} = σ² Σ_r w_r g(r) g(r)ᵀ`, `g(r) = J_{r,t} e₀`, trapezoid rule on
/// `n_quad` subintervals. Each node is an independent forward tangent solve.
pub fn malliavin_gram(path: &BasePath, s: f64, t: f64, n_quad: usize) -> Result<GramMatrix> {
    if n_quad == 0 {
        return Err(Error::InvalidParameter {
            name: "n_quad",
            reason: "need at least one quadrature interval".into(),
        });
    }
    let (ks, kt) = path.interval(s, t)?;
    if ks >= kt {
        return Err(Error::InvalidParameter {
            name: "interval",
            reason: format!("need s < t on the step grid, got [{s}, {t}]"),
        });
    }
    let n = path.params().n_shells();
    let sigma2 = path.params().sigma().powi(2);
    let e0 = unit_vector(n, 0);
    let mut m = DMatrix::<f64>::zeros(n, n);
    for (k, w) in quadrature_nodes(path, ks, kt, n_quad) {
        let g = DVector::from_vec(path.propagate_steps(&e0, k, kt));
        m.ger(sigma2 * w, &g, &g, 1.0);
    }
    let m = 0.5 * (&m + m.transpose());
    if !m.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite { time: t });
    }
    Ok(GramMatrix {
        matrix: m,
        s: path.t_start() + ks as f64 * path.dt(),
        t: path.t_start() + kt as f64 * path.dt(),
        n_quad,
    })
}

fn check_psd(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.min();
    let trace = m.trace();
    if min < -1e-10 * trace.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::NotPositiveSemidefinite {
            min_eigenvalue: min,
            trace,
        });
    }
    Ok(eig)
}

fn lambda_min(m: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let i = eig.eigenvalues.imin();
    (eig.eigenvalues[i], eig.eigenvectors.column(i).into_owned())
}

/// `inf { ⟨Mξ,ξ⟩/|ξ|² : |P ξ| ≥ α|ξ| }`, `P` the projection on shells `0..=n_low`.
///
/// If the unconstrained minimiser is feasible this is `λ_min(M)`. Otherwise
/// the constraint is active and, by the S-lemma, the value is
/// `max_{μ≥0} λ_min(M − μ(P − α²))`, a concave function of `μ` maximised by
/// golden-section search. `α = 1` restricts to the range of `P`.
pub fn spectral_probe(m: &DMatrix<f64>, n_low: usize, alpha: f64) -> Result<f64> {
    let n = m.nrows();
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: format!("alpha must lie in (0, 1], got {alpha}"),
        });
    }
    if n_low >= n {
        return Err(Error::IndexOutOfRange { index: n_low, n_shells: n });
    }
    let eig = check_psd(m)?;
    let i = eig.eigenvalues.imin();
    let v = eig.eigenvectors.column(i);
    let low_mass: f64 = v.rows(0, n_low + 1).norm_squared();
    if low_mass >= alpha * alpha {
        return Ok(eig.eigenvalues[i]);
    }
    if alpha == 1.0 {
        let sub = m.view((0, 0), (n_low + 1, n_low + 1)).into_owned();
        return Ok(lambda_min(&sub).0);
    }
    let a2 = alpha * alpha;
    let shifted = |mu: f64| {
        let mut x = m.clone();
        for j in 0..n {
            x[(j, j)] -= mu * (if j <= n_low { 1.0 } else { 0.0 } - a2);
        }
        lambda_min(&x).0
    };
    // φ(μ) ≤ M₀₀ − μ(1 − α²), so the maximiser lies below M₀₀/(1 − α²).
    let mut lo = 0.0;
    let mut hi = (m[(0, 0)].max(0.0) + m.trace().abs() * 1e-12 + f64::MIN_POSITIVE) / (1.0 - a2);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (shifted(x1), shifted(x2));
    for _ in 0..200 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = shifted(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = shifted(x1);
        }
        if hi - lo <= 1e-15 * hi.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(f1.max(f2).max(shifted(0.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoiasProdiRow {
    pub n_cut: usize,
    pub norm_mean: f64,
    pub norm_se: f64,
    pub n_samples: usize,
}

/// `‖J_{0,1} Q_{n_cut}‖` from 5 power iterations on `KᵀK`, `K = J Q`, started
/// from the uniform vector on the range of `Q`.
pub fn high_mode_norm(jacobian: &DMatrix<f64>, n_cut: usize) -> f64 {
    let n = jacobian.ncols();
    if n_cut + 1 >= n {
        return 0.0;
    }
    let mut k = jacobian.clone();
    for j in 0..=n_cut {
        k.column_mut(j).fill(0.0);
    }
    let mut x = DVector::<f64>::zeros(n);
    for j in n_cut + 1..n {
        x[j] = 1.0;
    }
    x /= x.norm();
    for _ in 0..5 {
        let y = k.transpose() * (&k * &x);
        let norm = y.norm();
        if norm == 0.0 {
            return 0.0;
        }
        x = y / norm;
    }
    (&k * x).norm()
}

/// Full `J_{s,t}` by one tangent solve per basis vector.
pub fn tangent_matrix(path: &BasePath, s: f64, t: f64) -> Result<DMatrix<f64>> {
    let n = path.params().n_shells();
    let (ks, kt) = path.interval(s, t)?;
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let col = path.propagate_steps(&unit_vector(n, j), ks, kt);
        jac.set_column(j, &DVector::from_vec(col));
    }
    Ok(jac)
}

/// Monte Carlo estimate of `E‖J_{0,1} Q_{n_cut}‖` over `n_samples` independent
/// unit-time paths from `init`; path `i` uses noise stream `i` of `seed`.
pub fn foias_prodi_estimate(
    params: &ShellParams,
    scheme: StepScheme,
    dt: f64,
    init: &ShellState,
    n_cuts: &[usize],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<FoiasProdiRow>> {
    let mut norms = vec![Vec::with_capacity(n_samples); n_cuts.len()];
    for i in 0..n_samples {
        let mut noise = NoiseStream::new(seed, i as u64, dt)?;
        let path = BasePath::generate(params, scheme, init, 1.0, &mut noise)?;
        let jac = tangent_matrix(&path, path.t_start(), path.t_end())?;
        for (slot, &n_cut) in norms.iter_mut().zip(n_cuts) {
            slot.push(high_mode_norm(&jac, n_cut));
        }
    }
    Ok(n_cuts
        .iter()
        .zip(norms)
        .map(|(&n_cut, v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let se = if v.len() > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
            } else {
                f64::NAN
            };
            FoiasProdiRow {
                n_cut,
                norm_mean: mean,
                norm_se: se,
                n_samples: v.len(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlRecord {
    pub beta: f64,
    /// `|ρ̄(2n)|` for `n = 0..=n_cycles`.
    pub rho_norms: Vec<f64>,
    /// `|J_{0,2n} ξ|`, the same path without control.
    pub uncontrolled_norms: Vec<f64>,
    /// Cumulative `∫₀^{2n}|v|² dt`, `n = 0..=n_cycles`.
    pub control_energy: Vec<f64>,
}

impl ControlRecord {
    pub fn n_cycles(&self) -> usize {
        self.rho_norms.len() - 1
    }

    /// Per-cycle ratios `|ρ̄(2n+2)| / |ρ̄(2n)|`.
    pub fn decay_ratios(&self) -> Vec<f64> {
        self.rho_norms.windows(2).map(|w| w[1] / w[0]).collect()
    }

    pub fn geometric_mean_ratio(&self) -> f64 {
        let n = self.n_cycles() as f64;
        (self.rho_norms[self.n_cycles()] / self.rho_norms[0]).powf(1.0 / n)
    }

    pub fn energy_increments(&self) -> Vec<f64> {
        self.control_energy.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Two-phase control cycle on unit intervals starting at the path origin:
/// on `[2n, 2n+1]` the control `v = A*(M+β)⁻¹ J ρ̄(2n)` acts, giving
/// `ρ̄(2n+1) = β(M+β)⁻¹ J_{2n,2n+1} ρ̄(2n)`; on `[2n+1, 2n+2]` the tangent runs
/// free. The energy of one active phase is `zᵀMz`, `z = (M+β)⁻¹ J ρ̄(2n)`.
pub fn control_experiment(
    path: &BasePath,
    beta: f64,
    n_cycles: usize,
    xi: &[f64],
    n_quad: usize,
) -> Result<ControlRecord> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::InvalidParameter {
            name: "beta",
            reason: format!("beta must be positive, got {beta}"),
        });
    }
    path.params().check_len(xi.len())?;
    let n = xi.len();
    let t0 = path.t_start();
    let mut rho = DVector::from_column_slice(xi);
    let mut free = xi.to_vec();
    let mut record = ControlRecord {
        beta,
        rho_norms: vec![rho.norm()],
        uncontrolled_norms: vec![rho.norm()],
        control_energy: vec![0.0],
    };
    for c in 0..n_cycles {
        let a = t0 + 2.0 * c as f64;
        let gram = malliavin_gram(path, a, a + 1.0, n_quad)?;
        let y = DVector::from_vec(propagate_tangent(path, rho.as_slice(), a, a + 1.0)?);
        let mut shifted = gram.matrix.clone();
        for j in 0..n {
            shifted[(j, j)] += beta;
        }
        let chol = shifted.cholesky().ok_or_else(|| {
            Error::LinearSolve(format!("M + βI not positive definite for beta = {beta}"))
        })?;
        let z = chol.solve(&y);
        if !z.iter().all(|x| x.is_finite()) {
            return Err(Error::LinearSolve(format!("non-finite solution for beta = {beta}")));
        }
        let energy = z.dot(&(&gram.matrix * &z));
        let mid = beta * &z;
        rho = DVector::from_vec(propagate_tangent(path, mid.as_slice(), a + 1.0, a + 2.0)?);
        free = propagate_tangent(path, &free, a, a + 2.0)?;
        record.rho_norms.push(rho.norm());
        record.uncontrolled_norms.push(free.iter().map(|x| x * x).sum::<f64>().sqrt());
        let prev = record.control_energy[c];
        record.control_energy.push(prev + energy);
    }
    Ok(record)
}
