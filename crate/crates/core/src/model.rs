//! Operators, norms and flux of the Galerkin-truncated dyadic model
//!
//! ```text
//! du_0 + (ν u_0 + u_0 u_1) dt = σ dW
//! du_j/dt + ν 2^{2j} u_j + 2^{cj} u_j u_{j+1} − 2^{c(j−1)} u_{j−1}² = 0,   j ≥ 1
//! ```
//!
//! retained on shells `0..=N` with `u_{−1} = u_{N+1} = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest shell count accepted; keeps `2^{2j}` far from overflow.
pub const MAX_SHELLS: usize = 30;

/// Boundary rule at the truncation edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Closure {
    /// `u_{N+1} = 0`.
    #[default]
    Galerkin,
}

/// Model constants for one truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct ShellParams {
    nu: f64,
    c: f64,
    sigma: f64,
    n_shells: usize,
    closure: Closure,
    nonlinear: bool,
    coupling: Vec<f64>,
    viscous: Vec<f64>,
}

impl ShellParams {
    pub fn new(nu: f64, c: f64, sigma: f64, n_shells: usize) -> Result<Self> {
        if !(nu.is_finite() && nu >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "nu",
                reason: format!("nu must be finite and >= 0, got {nu}"),
            });
        }
        if !(1.0..=3.0).contains(&c) {
            return Err(Error::InvalidParameter {
                name: "c",
                reason: format!("c must lie in [1, 3], got {c}"),
            });
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "sigma",
                reason: format!("sigma must be finite and >= 0, got {sigma}"),
            });
        }
        if !(1..=MAX_SHELLS).contains(&n_shells) {
            return Err(Error::InvalidParameter {
                name: "n_shells",
                reason: format!("n_shells must lie in [1, {MAX_SHELLS}], got {n_shells}"),
            });
        }
        let coupling = (0..n_shells).map(|j| (c * j as f64).exp2()).collect();
        let viscous = (0..n_shells).map(|j| nu * (2.0 * j as f64).exp2()).collect();
        Ok(Self {
            nu,
            c,
            sigma,
            n_shells,
            closure: Closure::Galerkin,
            nonlinear: true,
            coupling,
            viscous,
        })
    }

    /// Test hook: the same parameters with the quadratic coupling removed,
    /// leaving independent damped modes (only mode 0 is forced).
    pub fn without_nonlinearity(mut self) -> Self {
        self.nonlinear = false;
        self
    }

    pub fn with_nu(&self, nu: f64) -> Result<Self> {
        let mut p = Self::new(nu, self.c, self.sigma, self.n_shells)?;
        p.nonlinear = self.nonlinear;
        Ok(p)
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        let mut p = Self::new(self.nu, self.c, sigma, self.n_shells)?;
        p.nonlinear = self.nonlinear;
        Ok(p)
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn n_shells(&self) -> usize {
        self.n_shells
    }
    /// Index of the last retained shell.
    pub fn top_shell(&self) -> usize {
        self.n_shells - 1
    }
    pub fn closure(&self) -> Closure {
        self.closure
    }
    pub fn is_nonlinear(&self) -> bool {
        self.nonlinear
    }

    /// `2^{cj}` for every retained shell.
    pub fn coupling(&self) -> &[f64] {
        &self.coupling
    }

    /// `ν 2^{2j}` for every retained shell.
    pub fn viscous_rates(&self) -> &[f64] {
        &self.viscous
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n_shells {
            return Err(Error::LengthMismatch {
                expected: self.n_shells,
                actual: len,
            });
        }
        Ok(())
    }
}

/// Shell amplitudes at a point in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellState {
    pub u: Vec<f64>,
    pub t: f64,
}

impl ShellState {
    pub fn new(u: Vec<f64>, t: f64) -> Self {
        Self { u, t }
    }

    pub fn zeros(n_shells: usize) -> Self {
        Self::new(vec![0.0; n_shells], 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().all(|x| x.is_finite()) && self.t.is_finite()
    }

    /// Squared `ℓ²` norm.
    pub fn energy(&self) -> f64 {
        self.u.iter().map(|x| x * x).sum()
    }

    /// `u_j ≥ 0` for every `j ≥ 1`.
    pub fn is_positive(&self) -> bool {
        self.u.iter().skip(1).all(|&x| x >= 0.0)
    }
}

/// Coordinate `j` of the canonical basis on `n` shells.
pub fn unit_vector(n: usize, j: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[j] = 1.0;
    e
}

/// Which bilinear form to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BForm {
    /// `B(u,v)_j = 2^{cj} u_j v_{j+1} − 2^{c(j−1)} u_{j−1} v_{j−1}`.
    Equation,
    /// `B(u,v)_j = 2^{cj−1}(u_{j+1} v_j + v_{j+1} u_j) − 2^{c(j−1)} u_{j−1} v_{j−1}`.
    Symmetrized,
}

/// `(A u)_j = 2^{2j} u_j`.
pub fn apply_a(u: &[f64]) -> Vec<f64> {
    u.iter()
        .enumerate()
        .map(|(j, &x)| (2.0 * j as f64).exp2() * x)
        .collect()
}

pub fn apply_b(params: &ShellParams, u: &[f64], v: &[f64], form: BForm) -> Result<Vec<f64>> {
    params.check_len(u.len())?;
    params.check_len(v.len())?;
    let k = params.coupling();
    let n = u.len();
    let at = |w: &[f64], j: usize| if j < n { w[j] } else { 0.0 };
    let out = (0..n)
        .map(|j| {
            let forward = match form {
                BForm::Equation => k[j] * u[j] * at(v, j + 1),
                BForm::Symmetrized => 0.5 * k[j] * (at(u, j + 1) * v[j] + at(v, j + 1) * u[j]),
            };
            let backward = if j > 0 {
                k[j - 1] * u[j - 1] * v[j - 1]
            } else {
                0.0
            };
            forward - backward
        })
        .collect();
    Ok(out)
}

/// Deterministic part of the right-hand side, `−(ν A u + B(u,u))`.
pub fn drift(params: &ShellParams, u: &[f64]) -> Result<Vec<f64>> {
    params.check_len(u.len())?;
    let mut out = vec![0.0; u.len()];
    drift_into(params, u, &mut out);
    Ok(out)
}

pub(crate) fn drift_into<R: crate::scalar::Real>(params: &ShellParams, u: &[R], out: &mut [R]) {
    let n = u.len();
    let k = params.coupling();
    let lam = params.viscous_rates();
    for j in 0..n {
        let mut d = -u[j].scale(lam[j]);
        if params.is_nonlinear() {
            if j + 1 < n {
                d = d - (u[j] * u[j + 1]).scale(k[j]);
            }
            if j > 0 {
                d = d + u[j - 1].square().scale(k[j - 1]);
            }
        }
        out[j] = d;
    }
}

/// Energy flux through shell `n`, `Π_n = 2^{cn} u_n² u_{n+1}`.
pub fn shell_flux(params: &ShellParams, u: &[f64], n: usize) -> Result<f64> {
    params.check_len(u.len())?;
    if n >= u.len() {
        return Err(Error::IndexOutOfRange {
            index: n,
            n_shells: u.len(),
        });
    }
    let next = u.get(n + 1).copied().unwrap_or(0.0);
    Ok(params.coupling()[n] * u[n] * u[n] * next)
}

/// `|u|_{H^α} = (Σ 2^{2αj} u_j²)^{1/2}`.
pub fn sobolev_norm(u: &[f64], alpha: f64) -> f64 {
    u.iter()
        .enumerate()
        .map(|(j, &x)| (2.0 * alpha * j as f64).exp2() * x * x)
        .sum::<f64>()
        .sqrt()
}

/// `|u|_{W^{α,∞}} = sup_j 2^{αj} |u_j|`.
pub fn sup_norm(u: &[f64], alpha: f64) -> f64 {
    u.iter()
        .enumerate()
        .map(|(j, &x)| (alpha * j as f64).exp2() * x.abs())
        .fold(0.0, f64::max)
}

/// Squared `H¹` norm, the dissipation density.
pub fn h1_norm_sq(u: &[f64]) -> f64 {
    u.iter()
        .enumerate()
        .map(|(j, &x)| (2.0 * j as f64).exp2() * x * x)
        .sum()
}

/// Dimension of the region of turbulent activity, `D = 5 − 2c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntermittencyDimension {
    pub dimension: f64,
    /// `c` outside `[1, 5/2]` has no physical reading.
    pub physical: bool,
}

pub fn intermittency_dimension(c: f64) -> IntermittencyDimension {
    IntermittencyDimension {
        dimension: 5.0 - 2.0 * c,
        physical: (1.0..=2.5).contains(&c),
    }
}
