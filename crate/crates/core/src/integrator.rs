//! Fixed-step integration of the truncated SDE.
//!
//! All schemes share one generic kernel ([`Stepper::advance`]) so the forward
//! map and its tangent are the same code. Noise enters additively in mode 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{drift_into, h1_norm_sq, ShellParams, ShellState};
use crate::noise::NoiseStream;
use crate::scalar::{Dual, Real};

/// Negative excursions of positive shells smaller than this are clamped to 0.
pub const CLAMP_THRESHOLD: f64 = 1e-12;

const NEGLIGIBLE_PAIR_ENERGY: f64 = 1e-200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepScheme {
    /// Strang splitting: exact viscous half-steps around a symmetric sweep of
    /// exact solutions of each nearest-neighbour transfer pair.
    #[default]
    SplitRotation,
    /// Integrating factor on `ν 2^{2j} + 2^{cj} u_{j+1}⁺` with explicit gain.
    ExponentialEulerMaruyama,
    EulerMaruyama,
    /// Classical RK4 on the deterministic drift; rejects `σ > 0`.
    DeterministicRk4,
}

impl StepScheme {
    pub fn name(self) -> &'static str {
        match self {
            Self::SplitRotation => "split_rotation",
            Self::ExponentialEulerMaruyama => "exponential_euler_maruyama",
            Self::EulerMaruyama => "euler_maruyama",
            Self::DeterministicRk4 => "deterministic_rk4",
        }
    }
}

/// Exact flow of `x' = −k x y`, `y' = k x²` for time `h`.
///
/// The pair moves on the circle `x² + y² = r²` with `y(t) = r tanh(s₀ + k r t)`,
/// `sinh s₀ = y₀/|x₀|`, so energy is conserved exactly and the signs of `x`
/// and of a nonnegative `y` are preserved.
#[inline]
fn transfer_pair<R: Real>(x: R, y: R, k: f64, h: f64) -> (R, R) {
    let r2 = x * x + y * y;
    // Pairs below ~1e−100 are left alone: the transfer is negligible and the
    // arithmetic would otherwise run on subnormals.
    if r2.value() < NEGLIGIBLE_PAIR_ENERGY {
        return (x, y);
    }
    let one = R::cst(1.0);
    let r = r2.sqrt();
    let e1 = (-r.scale(k * h)).exp();
    let e2 = e1 * e1;
    let inv = one / (one + e2);
    let tanh = (one - e2) * inv;
    let one_minus_tanh = e2.scale(2.0) * inv;
    let sech = e1.scale(2.0) * inv;
    // 1 + y/r, evaluated without cancellation when y < 0
    let one_plus_q = if y.value() >= 0.0 {
        (r + y) / r
    } else {
        x * x / (r * (r - y))
    };
    let d = one_minus_tanh + one_plus_q * tanh;
    if d.value() == 0.0 {
        return (x, y);
    }
    let inv_d = one / d;
    (x * sech * inv_d, r * (one_plus_q - one_minus_tanh) * inv_d)
}

/// Step kernel bound to one `(params, scheme, dt)`.
#[derive(Debug, Clone)]
pub struct Stepper {
    params: ShellParams,
    scheme: StepScheme,
    dt: f64,
    half_damping: Vec<f64>,
    full_damping: Vec<f64>,
}

impl Stepper {
    pub fn new(params: &ShellParams, scheme: StepScheme, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: format!("dt must be positive, got {dt}"),
            });
        }
        if scheme == StepScheme::DeterministicRk4 && params.sigma() > 0.0 {
            return Err(Error::UnsupportedScheme {
                scheme: scheme.name(),
                what: "stochastic forcing (sigma > 0)",
            });
        }
        let lam = params.viscous_rates();
        Ok(Self {
            params: params.clone(),
            scheme,
            dt,
            half_damping: lam.iter().map(|l| (-0.5 * l * dt).exp()).collect(),
            full_damping: lam.iter().map(|l| (-l * dt).exp()).collect(),
        })
    }

    pub fn params(&self) -> &ShellParams {
        &self.params
    }
    pub fn scheme(&self) -> StepScheme {
        self.scheme
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// One step of the discrete map, `out = Φ(u, dW)`.
    pub fn advance<R: Real>(&self, u: &[R], dw: f64, out: &mut [R]) {
        let n = u.len();
        let dt = self.dt;
        let sigma = self.params.sigma();
        let nonlinear = self.params.is_nonlinear();
        let k = self.params.coupling();
        match self.scheme {
            StepScheme::SplitRotation => {
                out.copy_from_slice(u);
                out[0] = out[0] + R::cst(sigma * dw);
                for (x, f) in out.iter_mut().zip(&self.half_damping) {
                    *x = x.scale(*f);
                }
                if nonlinear && n >= 2 {
                    // Symmetric sweep over the links; the two half-steps of the
                    // top link are adjacent and merge into one full step.
                    let h = 0.5 * dt;
                    let top = n - 2;
                    for j in 0..top {
                        (out[j], out[j + 1]) = transfer_pair(out[j], out[j + 1], k[j], h);
                    }
                    (out[top], out[top + 1]) = transfer_pair(out[top], out[top + 1], k[top], dt);
                    for j in (0..top).rev() {
                        (out[j], out[j + 1]) = transfer_pair(out[j], out[j + 1], k[j], h);
                    }
                }
                for (x, f) in out.iter_mut().zip(&self.half_damping) {
                    *x = x.scale(*f);
                }
            }
            StepScheme::ExponentialEulerMaruyama => {
                let lam = self.params.viscous_rates();
                for j in 0..n {
                    let next = if j + 1 < n && nonlinear {
                        u[j + 1]
                    } else {
                        R::cst(0.0)
                    };
                    out[j] = if j == 0 {
                        u[0].scale(self.full_damping[0]) - (u[0] * next).scale(dt)
                            + R::cst(sigma * dw)
                    } else {
                        let drain = if next.value() > 0.0 {
                            next.scale(k[j])
                        } else {
                            R::cst(0.0)
                        };
                        let factor = (-(drain + R::cst(lam[j])).scale(dt)).exp();
                        let gain = if nonlinear {
                            u[j - 1].square().scale(dt * k[j - 1])
                        } else {
                            R::cst(0.0)
                        };
                        factor * u[j] + gain
                    };
                }
            }
            StepScheme::EulerMaruyama => {
                drift_into(&self.params, u, out);
                for (o, x) in out.iter_mut().zip(u) {
                    *o = *x + o.scale(dt);
                }
                out[0] = out[0] + R::cst(sigma * dw);
            }
            StepScheme::DeterministicRk4 => {
                let mut k1 = vec![R::cst(0.0); n];
                let mut k2 = k1.clone();
                let mut k3 = k1.clone();
                let mut k4 = k1.clone();
                let mut tmp = k1.clone();
                drift_into(&self.params, u, &mut k1);
                for j in 0..n {
                    tmp[j] = u[j] + k1[j].scale(0.5 * dt);
                }
                drift_into(&self.params, &tmp, &mut k2);
                for j in 0..n {
                    tmp[j] = u[j] + k2[j].scale(0.5 * dt);
                }
                drift_into(&self.params, &tmp, &mut k3);
                for j in 0..n {
                    tmp[j] = u[j] + k3[j].scale(dt);
                }
                drift_into(&self.params, &tmp, &mut k4);
                for j in 0..n {
                    out[j] = u[j]
                        + (k1[j] + k2[j].scale(2.0) + k3[j].scale(2.0) + k4[j]).scale(dt / 6.0);
                }
            }
        }
    }

    /// Directional derivative of [`Stepper::advance`] at `base` along `rho`.
    pub fn tangent(&self, base: &[f64], rho: &[f64], dw: f64, out: &mut [f64]) {
        let n = base.len();
        let mut x: Vec<Dual> = base.iter().zip(rho).map(|(&v, &d)| Dual::new(v, d)).collect();
        let mut y = vec![Dual::default(); n];
        self.advance(&x, dw, &mut y);
        for (o, d) in out.iter_mut().zip(&y) {
            *o = d.d;
        }
        x.clear();
    }

    /// Advance in place with the positivity bookkeeping; returns clamps applied.
    pub fn step_checked(
        &self,
        u: &mut [f64],
        scratch: &mut [f64],
        dw: f64,
        time: f64,
    ) -> Result<u32> {
        self.advance(u, dw, scratch);
        let mut clamps = 0;
        for (j, (&before, after)) in u.iter().zip(scratch.iter_mut()).enumerate() {
            if !after.is_finite() {
                return Err(Error::NonFinite { time });
            }
            if j >= 1 && before >= 0.0 && *after < 0.0 {
                if *after > -CLAMP_THRESHOLD {
                    *after = 0.0;
                    clamps += 1;
                } else {
                    return Err(Error::ClampExceeded {
                        shell: j,
                        value: *after,
                        time,
                    });
                }
            }
        }
        u.copy_from_slice(scratch);
        Ok(clamps)
    }
}

/// Single step of `scheme` from `state` with increment `dw`.
pub fn step(
    params: &ShellParams,
    scheme: StepScheme,
    state: &ShellState,
    dt: f64,
    dw: f64,
) -> Result<ShellState> {
    params.check_len(state.u.len())?;
    let stepper = Stepper::new(params, scheme, dt)?;
    let mut u = state.u.clone();
    let mut scratch = vec![0.0; u.len()];
    stepper.step_checked(&mut u, &mut scratch, dw, state.t)?;
    Ok(ShellState::new(u, state.t + dt))
}

/// Largest stable step for the explicit coupling at a given amplitude scale.
///
/// `min(dt_max, safety / (2^{cN} · state_scale))`; viscous stiffness is
/// handled exactly by the integrating factors and does not enter.
pub fn suggested_dt(params: &ShellParams, state_scale: f64, safety: f64, dt_max: f64) -> f64 {
    let top = params.coupling()[params.top_shell()];
    let bound = safety / (top * state_scale);
    if bound.is_nan() {
        dt_max
    } else {
        bound.min(dt_max)
    }
}

/// Receives states at the sampling stride.
pub trait Observer {
    fn observe(&mut self, state: &ShellState);
}

impl<F: FnMut(&ShellState)> Observer for F {
    fn observe(&mut self, state: &ShellState) {
        self(state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationConfig {
    pub horizon: f64,
    /// Observers (and stored samples) see every `sample_stride`-th state.
    pub sample_stride: usize,
    pub store_samples: bool,
    /// Start of the window for [`TrajectoryRecord::h1_window_integral`].
    pub window_start: f64,
}

impl SimulationConfig {
    pub fn new(horizon: f64, sample_stride: usize) -> Self {
        Self {
            horizon,
            sample_stride,
            store_samples: false,
            window_start: 0.0,
        }
    }

    pub fn storing_samples(mut self) -> Self {
        self.store_samples = true;
        self
    }

    pub fn with_window_start(mut self, t: f64) -> Self {
        self.window_start = t;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub dt: f64,
    pub n_steps: u64,
    pub initial: ShellState,
    pub final_state: ShellState,
    pub samples: Vec<ShellState>,
    /// Cumulative clamp count at each stored sample.
    pub clamp_history: Vec<u64>,
    pub clamp_count: u64,
    /// `∫₀ᵀ |u|²_{H¹} dt` by the trapezoid rule.
    pub h1_integral: f64,
    pub window_start: f64,
    /// `∫_{window_start}^T |u|²_{H¹} dt`.
    pub h1_window_integral: f64,
    /// `Σ u₀(t_k) ΔW_k` with the pre-step amplitude.
    pub noise_work: f64,
    /// `Σ ΔW_k²`.
    pub quadratic_variation: f64,
}

impl TrajectoryRecord {
    pub fn horizon(&self) -> f64 {
        self.final_state.t - self.initial.t
    }

    /// `|u(T)|² − |u(0)|² + 2ν∫|u|²_{H¹} − σ²·qv − 2σ Σ u₀ΔW`, which vanishes
    /// in the continuum limit. `use_qv` replaces `σ² T` by `σ² Σ ΔW²`.
    pub fn ito_residual(&self, params: &ShellParams, use_qv: bool) -> f64 {
        let sigma = params.sigma();
        let qv = if use_qv {
            self.quadratic_variation
        } else {
            self.horizon()
        };
        self.final_state.energy() - self.initial.energy()
            + 2.0 * params.nu() * self.h1_integral
            - sigma * sigma * qv
            - 2.0 * sigma * self.noise_work
    }
}

/// Integrate from `init` over `config.horizon`; fully determined by the noise stream.
pub fn simulate(
    params: &ShellParams,
    scheme: StepScheme,
    init: &ShellState,
    config: &SimulationConfig,
    noise: &mut NoiseStream,
    observers: &mut [&mut dyn Observer],
) -> Result<TrajectoryRecord> {
    params.check_len(init.u.len())?;
    if !(config.horizon.is_finite() && config.horizon > 0.0) {
        return Err(Error::InvalidParameter {
            name: "horizon",
            reason: format!("horizon must be positive, got {}", config.horizon),
        });
    }
    if config.sample_stride == 0 {
        return Err(Error::InvalidParameter {
            name: "sample_stride",
            reason: "sample_stride must be at least 1".into(),
        });
    }
    if !init.is_finite() {
        return Err(Error::NonFinite { time: init.t });
    }
    let dt = noise.dt();
    let stepper = Stepper::new(params, scheme, dt)?;
    let n_steps = (config.horizon / dt).round().max(1.0) as u64;

    let mut state = init.clone();
    let mut scratch = vec![0.0; state.u.len()];
    let mut record = TrajectoryRecord {
        dt,
        n_steps,
        initial: init.clone(),
        final_state: init.clone(),
        samples: Vec::new(),
        clamp_history: Vec::new(),
        clamp_count: 0,
        h1_integral: 0.0,
        window_start: config.window_start,
        h1_window_integral: 0.0,
        noise_work: 0.0,
        quadratic_variation: 0.0,
    };
    let mut emit = |state: &ShellState, clamps: u64, record: &mut TrajectoryRecord| {
        for obs in observers.iter_mut() {
            obs.observe(state);
        }
        if config.store_samples {
            record.samples.push(state.clone());
            record.clamp_history.push(clamps);
        }
    };
    emit(&state, 0, &mut record);

    let mut h1_prev = h1_norm_sq(&state.u);
    for k in 0..n_steps {
        let dw = noise.next_increment();
        let t_prev = state.t;
        record.noise_work += state.u[0] * dw;
        record.quadratic_variation += dw * dw;
        let clamps = stepper.step_checked(&mut state.u, &mut scratch, dw, t_prev)?;
        record.clamp_count += u64::from(clamps);
        state.t = init.t + (k + 1) as f64 * dt;
        let h1 = h1_norm_sq(&state.u);
        let piece = 0.5 * dt * (h1_prev + h1);
        record.h1_integral += piece;
        if t_prev >= config.window_start {
            record.h1_window_integral += piece;
        }
        h1_prev = h1;
        if (k + 1) % config.sample_stride as u64 == 0 {
            emit(&state, record.clamp_count, &mut record);
        }
    }
    record.final_state = state;
    Ok(record)
}
