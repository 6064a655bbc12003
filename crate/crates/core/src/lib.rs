//! Stochastic dyadic shell model: simulation, statistics, linearization and
//! symbolic bracket generation.

pub mod error;
pub mod hormander;
pub mod integrator;
pub mod linearization;
pub mod model;
pub mod noise;
pub mod scalar;
pub mod stats;

pub use error::{Error, Result};
pub use integrator::{simulate, step, suggested_dt, Observer, SimulationConfig, StepScheme, Stepper, TrajectoryRecord};
pub use model::{ShellParams, ShellState};
pub use noise::NoiseStream;
pub use stats::{balance_residuals, dissipation_rate, spectrum_slope, time_average_scan, Estimate, MomentAccumulator, StationaryReport};
pub use linearization::{control_experiment, foias_prodi_estimate, malliavin_gram, propagate_tangent, spectral_probe, BasePath, ControlRecord, FoiasProdiRow, GramMatrix};
pub use hormander::{drift_field, generate_admissible, lie_bracket, verify_span, BracketCertificate, PolyVectorField};
