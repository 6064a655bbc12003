//! Experiment kinds: each writes its outputs into a run directory.

use std::ops::RangeInclusive;
use std::path::Path;

use cascade_core::hormander::verify_span;
use cascade_core::stats::log2_spectrum;
use cascade_core::{
    control_experiment, dissipation_rate, foias_prodi_estimate, malliavin_gram, simulate,
    spectral_probe, spectrum_slope, BasePath, Estimate, FoiasProdiRow, MomentAccumulator, NoiseStream,
    ShellParams, ShellState, SimulationConfig, StationaryReport,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::cells;
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::ensemble::{run_ensemble, EnsembleResult, EnsemblePlan, TimeAverageSummary};
use crate::error::{CliError, Result};
use crate::output::{Csv, RunDir, RunManifest, RESOLVED_CONFIG};

pub const SHELLS_HEADER: [&str; 7] = ["j", "mean_u", "mean_u2", "mean_u3", "flux_mean", "flux_se", "balance_r1"];
pub const ANOMALY_HEADER: [&str; 4] = ["nu", "epsilon", "epsilon_se", "n_samples"];
pub const SPECTRUM_HEADER: [&str; 3] = ["j", "log2_mean_u2", "se"];
pub const CONTROL_HEADER: [&str; 3] = ["cycle", "rho_norm", "control_energy"];
pub const FOIAS_PRODI_HEADER: [&str; 3] = ["n_cut", "norm_mean", "norm_se"];
pub const GRAM_PROBE_HEADER: [&str; 3] = ["path", "min_eigenvalue", "probe"];

/// Seed for the Foias–Prodi paths, kept apart from the Gram paths.
const FP_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub seed: u64,
    pub threads: Option<usize>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub summary: serde_json::Value,
}

/// `max_j 2^{2cj/3}⟨u_j²⟩ / min_j` over `range`.
pub fn compensated_spread(acc: &MomentAccumulator, c: f64, range: RangeInclusive<usize>) -> Result<f64> {
    let m = acc.means()?;
    let v: Vec<f64> = range
        .map(|j| (2.0 * c * j as f64 / 3.0).exp2() * m.u2(j))
        .collect();
    let max = v.iter().copied().fold(f64::MIN, f64::max);
    let min = v.iter().copied().fold(f64::MAX, f64::min);
    Ok(max / min)
}

#[derive(Debug, Clone, Serialize)]
pub struct Stationarity {
    pub energy_first_half: Estimate,
    pub energy_second_half: Estimate,
    pub agree_within_3se: bool,
}

fn stationarity(ens: &EnsembleResult) -> Result<Stationarity> {
    let a = ens.first_half.estimate(|m| m.energy())?;
    let b = ens.second_half.estimate(|m| m.energy())?;
    Ok(Stationarity {
        energy_first_half: a,
        energy_second_half: b,
        agree_within_3se: a.agrees_with(&b, 3.0),
    })
}

pub fn ensemble_plan(cfg: &ExperimentConfig, params: ShellParams, seed: u64, stream_offset: u64) -> EnsemblePlan {
    EnsemblePlan {
        burn_in: cfg.burn_in_for(params.nu()),
        params,
        scheme: cfg.run.scheme,
        dt: cfg.run.dt,
        horizon: cfg.run.horizon,
        sample_stride: cfg.run.sample_stride,
        batch_len: cfg.run.batch_len,
        n_trajectories: cfg.run.n_trajectories,
        seed,
        stream_offset,
        initial: cfg.initial_state(),
        keep_energy_series: false,
    }
}

#[derive(Debug, Clone, Serialize)]
struct StationarySummary {
    kind: &'static str,
    nu: f64,
    n_trajectories: usize,
    burn_in: f64,
    n_samples: u64,
    n_batches: usize,
    epsilon: Estimate,
    epsilon_time_average: TimeAverageSummary,
    partial_sums: Vec<Estimate>,
    balance_consistent: bool,
    spectrum_range: [usize; 2],
    spectrum_slope: Option<Estimate>,
    compensated_spread: f64,
    clamp_count: u64,
    stationarity: Stationarity,
}

pub fn shells_csv(report: &StationaryReport) -> Csv {
    let mut csv = Csv::new(&SHELLS_HEADER);
    for j in 0..report.mean_u.len() {
        let flux = report.balance.flux[j];
        csv.row(&cells![
            j,
            report.mean_u[j].value,
            report.mean_u2[j].value,
            report.mean_u3[j].value,
            flux.value,
            flux.se,
            report.balance.r1[j].value,
        ]);
    }
    csv
}

pub fn spectrum_csv(acc: &MomentAccumulator) -> Result<Csv> {
    let mut csv = Csv::new(&SPECTRUM_HEADER);
    for (j, e) in log2_spectrum(acc)?.iter().enumerate() {
        csv.row(&cells![j, e.value, e.se]);
    }
    Ok(csv)
}

fn stationary(cfg: &ExperimentConfig, opts: &RunOptions, run: &mut RunDir, kind: ExperimentKind) -> Result<serde_json::Value> {
    let params = cfg.params()?;
    let spec = ensemble_plan(cfg, params.clone(), opts.seed, 0);
    let ens = run_ensemble(&spec)?;
    let range = cfg.spectrum.j_min..=cfg.spectrum.j_max;
    let report = StationaryReport::build(&ens.acc, &params, range.clone())?;
    if kind == ExperimentKind::Simulate {
        run.write_csv("shells.csv", &shells_csv(&report))?;
    }
    run.write_csv("spectrum.csv", &spectrum_csv(&ens.acc)?)?;
    let summary = StationarySummary {
        kind: kind.name(),
        nu: params.nu(),
        n_trajectories: spec.n_trajectories,
        burn_in: spec.burn_in,
        n_samples: report.n_samples,
        n_batches: report.n_batches,
        epsilon: report.dissipation,
        epsilon_time_average: ens.time_average_dissipation(),
        partial_sums: report.balance.partial_sums.clone(),
        balance_consistent: report.balance.consistent,
        spectrum_range: [cfg.spectrum.j_min, cfg.spectrum.j_max],
        spectrum_slope: Some(spectrum_slope(&ens.acc, range.clone())?),
        compensated_spread: compensated_spread(&ens.acc, params.c(), range)?,
        clamp_count: ens.clamp_count(),
        stationarity: stationarity(&ens)?,
    };
    Ok(serde_json::to_value(summary).expect("summary"))
}

#[derive(Debug, Clone, Serialize)]
struct SweepRow {
    nu: f64,
    burn_in: f64,
    epsilon: Estimate,
    epsilon_time_average: TimeAverageSummary,
    forms_agree_within_2se: bool,
    clamp_count: u64,
    stationary: bool,
}

fn sweep_nu(cfg: &ExperimentConfig, opts: &RunOptions, run: &mut RunDir) -> Result<serde_json::Value> {
    let base = cfg.params()?;
    let mut csv = Csv::new(&ANOMALY_HEADER);
    let mut rows = Vec::new();
    for (i, &nu) in cfg.sweep.nu.iter().enumerate() {
        let params = base.with_nu(nu)?;
        let offset = (i * cfg.run.n_trajectories) as u64;
        let spec = ensemble_plan(cfg, params.clone(), opts.seed, offset);
        let ens = run_ensemble(&spec)?;
        let eps = dissipation_rate(&ens.acc, &params)?;
        let ta = ens.time_average_dissipation();
        csv.row(&cells![nu, eps.value, eps.se, eps.n_samples]);
        rows.push(SweepRow {
            nu,
            burn_in: spec.burn_in,
            epsilon: eps,
            forms_agree_within_2se: (eps.value - ta.mean).abs() <= 2.0 * eps.se.hypot(ta.se),
            epsilon_time_average: ta,
            clamp_count: ens.clamp_count(),
            stationary: stationarity(&ens)?.agree_within_3se,
        });
    }
    run.write_csv("anomaly.csv", &csv)?;
    Ok(serde_json::json!({ "kind": "sweep_nu", "target": 0.5 * base.sigma() * base.sigma(), "rows": rows }))
}

fn hormander(cfg: &ExperimentConfig, run: &mut RunDir) -> Result<serde_json::Value> {
    let params = cfg.params()?;
    let h = &cfg.hormander;
    let cert = verify_span(&params, h.n_target, h.n_trunc(), h.max_m(), h.tol)?;
    run.write_json("certificate.json", &cert)?;
    Ok(serde_json::to_value(&cert).expect("certificate"))
}

/// State after integrating `spinup` from the configured initial data,
/// consuming the front of `noise`.
fn spun_up(cfg: &ExperimentConfig, params: &ShellParams, noise: &mut NoiseStream, spinup: f64) -> Result<ShellState> {
    let init = ShellState::new(cfg.initial_state(), 0.0);
    if spinup <= 0.0 {
        return Ok(init);
    }
    let stride = usize::MAX;
    let rec = simulate(params, cfg.run.scheme, &init, &SimulationConfig::new(spinup, stride), noise, &mut [])?;
    Ok(rec.final_state)
}

#[derive(Debug, Clone, Serialize)]
struct GramRow {
    path: usize,
    min_eigenvalue: f64,
    probe: f64,
}

fn malliavin(cfg: &ExperimentConfig, opts: &RunOptions, run: &mut RunDir) -> Result<serde_json::Value> {
    let params = cfg.params()?;
    let ml = &cfg.malliavin;
    let rows = (0..ml.n_paths)
        .into_par_iter()
        .map(|i| -> Result<GramRow> {
            let mut noise = NoiseStream::new(opts.seed, i as u64, cfg.run.dt)?;
            let start = spun_up(cfg, &params, &mut noise, ml.spinup)?;
            let path = BasePath::generate(&params, cfg.run.scheme, &start, 1.0, &mut noise)?;
            let gram = malliavin_gram(&path, path.t_start(), path.t_end(), ml.n_quad)?;
            Ok(GramRow {
                path: i,
                min_eigenvalue: gram.min_eigenvalue(),
                probe: spectral_probe(&gram.matrix, ml.n_low, ml.alpha)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut csv = Csv::new(&GRAM_PROBE_HEADER);
    for r in &rows {
        csv.row(&cells![r.path, r.min_eigenvalue, r.probe]);
    }
    run.write_csv("gram_probe.csv", &csv)?;

    let fp_seed = opts.seed ^ FP_SEED_SALT;
    let mut noise = NoiseStream::new(fp_seed, u64::MAX, cfg.run.dt)?;
    let fp_start = spun_up(cfg, &params, &mut noise, ml.spinup)?;
    let fp = foias_prodi_estimate(&params, cfg.run.scheme, cfg.run.dt, &fp_start, &ml.n_cuts, ml.fp_paths, fp_seed)?;
    let mut csv = Csv::new(&FOIAS_PRODI_HEADER);
    for r in &fp {
        csv.row(&cells![r.n_cut, r.norm_mean, r.norm_se]);
    }
    run.write_csv("foias_prodi.csv", &csv)?;

    let positive = rows.iter().filter(|r| r.probe > 0.0).count();
    Ok(serde_json::json!({
        "kind": "malliavin",
        "n_paths": ml.n_paths,
        "n_low": ml.n_low,
        "alpha": ml.alpha,
        "positive_probes": positive,
        "positive_fraction": positive as f64 / ml.n_paths as f64,
        "foias_prodi": fp,
        "foias_prodi_strictly_decreasing": strictly_decreasing(&fp),
    }))
}

fn strictly_decreasing(rows: &[FoiasProdiRow]) -> bool {
    rows.windows(2).all(|w| w[1].norm_mean < w[0].norm_mean)
}

/// Increments over the last `k` cycles do not exceed those over the first `k`,
/// `k = ⌊n/2⌋`.
pub fn no_growth_trend(increments: &[f64]) -> bool {
    let k = increments.len() / 2;
    let first: f64 = increments[..k].iter().sum();
    let last: f64 = increments[increments.len() - k..].iter().sum();
    last <= first
}

fn control_demo(cfg: &ExperimentConfig, opts: &RunOptions, run: &mut RunDir) -> Result<serde_json::Value> {
    let params = cfg.params()?;
    let cb = &cfg.control;
    let mut noise = NoiseStream::new(opts.seed, 0, cfg.run.dt)?;
    let start = spun_up(cfg, &params, &mut noise, cb.spinup)?;
    let path = BasePath::generate(&params, cfg.run.scheme, &start, 2.0 * cb.n_cycles as f64, &mut noise)?;
    let n = params.n_shells();
    let xi = cb
        .xi
        .clone()
        .unwrap_or_else(|| vec![1.0 / (n as f64).sqrt(); n]);
    let rec = control_experiment(&path, cb.beta, cb.n_cycles, &xi, cb.n_quad)?;
    let mut csv = Csv::new(&CONTROL_HEADER);
    for k in 0..=rec.n_cycles() {
        csv.row(&cells![k, rec.rho_norms[k], rec.control_energy[k]]);
    }
    run.write_csv("control.csv", &csv)?;
    let increments = rec.energy_increments();
    Ok(serde_json::json!({
        "kind": "control_demo",
        "beta": cb.beta,
        "n_cycles": cb.n_cycles,
        "geometric_mean_ratio": rec.geometric_mean_ratio(),
        "decay_ratios": rec.decay_ratios(),
        "uncontrolled_norms": rec.uncontrolled_norms,
        "energy_increments": increments,
        "no_growth_trend": no_growth_trend(&increments),
    }))
}

/// Run `kind` into `out`; the manifest is always written when outputs were.
pub fn run_experiment(kind: ExperimentKind, cfg: &ExperimentConfig, out: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    if let Some(k) = cfg.kind {
        if k != kind {
            return Err(CliError::config("kind", format!("config declares kind {k} but {kind} was requested")));
        }
    }
    cfg.validate_kind(kind).map_err(|e| CliError::config("config", e))?;
    let mut resolved = cfg.clone();
    resolved.kind = Some(kind);
    resolved.run.seed = opts.seed;
    let config_text = resolved.to_toml();

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = opts.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| CliError::ThreadPool(e.to_string()))?;
    let threads = pool.current_num_threads();

    let mut run = RunDir::create(out)?;
    run.write_text(RESOLVED_CONFIG, &config_text)?;
    let summary = pool.install(|| match kind {
        ExperimentKind::Simulate | ExperimentKind::Spectrum => stationary(&resolved, opts, &mut run, kind),
        ExperimentKind::SweepNu => sweep_nu(&resolved, opts, &mut run),
        ExperimentKind::Hormander => hormander(&resolved, &mut run),
        ExperimentKind::Malliavin => malliavin(&resolved, opts, &mut run),
        ExperimentKind::ControlDemo => control_demo(&resolved, opts, &mut run),
    })?;
    run.write_json("summary.json", &summary)?;
    let manifest = run.finish(kind.name(), &config_text, opts.seed, threads)?;
    if kind == ExperimentKind::Hormander && summary["passed"] != serde_json::Value::Bool(true) {
        return Err(CliError::CertificateFailed {
            achieved: summary["achieved_rank"].as_u64().unwrap_or(0) as usize,
            required: cfg.hormander.n_target + 1,
            max_m: cfg.hormander.max_m(),
        });
    }
    Ok(RunOutcome { manifest, summary })
}
