//! Independent trajectories fanned across a thread pool and merged in index order.

use cascade_core::{
    simulate, MomentAccumulator, NoiseStream, Observer, ShellParams, ShellState, SimulationConfig, StepScheme,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;

#[derive(Debug, Clone)]
pub struct EnsemblePlan {
    pub params: ShellParams,
    pub scheme: StepScheme,
    pub dt: f64,
    pub horizon: f64,
    pub burn_in: f64,
    pub sample_stride: usize,
    pub batch_len: usize,
    pub n_trajectories: usize,
    pub seed: u64,
    /// Trajectory `i` draws from noise stream `stream_offset + i`.
    pub stream_offset: u64,
    pub initial: Vec<f64>,
    /// Keep `|u|²` at every post-burn-in sample, per trajectory.
    pub keep_energy_series: bool,
}

#[derive(Debug, Clone)]
pub struct TrajectoryResult {
    pub acc: MomentAccumulator,
    pub first_half: MomentAccumulator,
    pub second_half: MomentAccumulator,
    /// `ν/(T − T_burn) ∫_{T_burn}^T |u|²_{H¹} dt` along this trajectory.
    pub time_average_dissipation: f64,
    pub clamp_count: u64,
    pub energy_series: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub acc: MomentAccumulator,
    pub first_half: MomentAccumulator,
    pub second_half: MomentAccumulator,
    pub trajectories: Vec<TrajectoryResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeAverageSummary {
    pub mean: f64,
    pub se: f64,
    pub n_trajectories: usize,
}

impl EnsembleResult {
    pub fn clamp_count(&self) -> u64 {
        self.trajectories.iter().map(|t| t.clamp_count).sum()
    }

    /// Mean and standard error of the per-trajectory time averages.
    pub fn time_average_dissipation(&self) -> TimeAverageSummary {
        let v: Vec<f64> = self.trajectories.iter().map(|t| t.time_average_dissipation).collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let se = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            f64::NAN
        };
        TimeAverageSummary {
            mean,
            se,
            n_trajectories: v.len(),
        }
    }

    pub fn energy_series(&self) -> Vec<Vec<f64>> {
        self.trajectories.iter().map(|t| t.energy_series.clone()).collect()
    }
}

struct Recorder<'a> {
    spec: &'a EnsemblePlan,
    midpoint: f64,
    acc: MomentAccumulator,
    first: MomentAccumulator,
    second: MomentAccumulator,
    energy: Vec<f64>,
}

impl Observer for Recorder<'_> {
    fn observe(&mut self, state: &ShellState) {
        if state.t < self.spec.burn_in {
            return;
        }
        self.acc.record(state);
        if state.t < self.midpoint {
            self.first.record(state);
        } else {
            self.second.record(state);
        }
        if self.spec.keep_energy_series {
            self.energy.push(state.energy());
        }
    }
}

pub fn run_trajectory(spec: &EnsemblePlan, index: usize) -> Result<TrajectoryResult> {
    let n = spec.params.n_shells();
    let acc = || MomentAccumulator::with_options(n, spec.burn_in, spec.batch_len, 0.0);
    let mut rec = Recorder {
        spec,
        midpoint: 0.5 * (spec.burn_in + spec.horizon),
        acc: acc(),
        first: acc(),
        second: acc(),
        energy: Vec::new(),
    };
    let mut noise = NoiseStream::new(spec.seed, spec.stream_offset + index as u64, spec.dt)?;
    let config = SimulationConfig::new(spec.horizon, spec.sample_stride).with_window_start(spec.burn_in);
    let init = ShellState::new(spec.initial.clone(), 0.0);
    let record = simulate(&spec.params, spec.scheme, &init, &config, &mut noise, &mut [&mut rec])?;
    let window = record.final_state.t - spec.burn_in;
    Ok(TrajectoryResult {
        acc: rec.acc,
        first_half: rec.first,
        second_half: rec.second,
        time_average_dissipation: spec.params.nu() * record.h1_window_integral / window,
        clamp_count: record.clamp_count,
        energy_series: rec.energy,
    })
}

/// Run every trajectory on the current rayon pool; merging is in index order,
/// so results do not depend on the number of threads.
pub fn run_ensemble(spec: &EnsemblePlan) -> Result<EnsembleResult> {
    let trajectories = (0..spec.n_trajectories)
        .into_par_iter()
        .map(|i| run_trajectory(spec, i))
        .collect::<Result<Vec<_>>>()?;
    let n = spec.params.n_shells();
    let empty = || MomentAccumulator::with_options(n, spec.burn_in, spec.batch_len, 0.0);
    let (mut acc, mut first_half, mut second_half) = (empty(), empty(), empty());
    for t in &trajectories {
        acc.merge(&t.acc);
        first_half.merge(&t.first_half);
        second_half.merge(&t.second_half);
    }
    Ok(EnsembleResult {
        acc,
        first_half,
        second_half,
        trajectories,
    })
}
