//! Quantum pulses scattering on a three-level emitter.
//!
//! The travelling pulse is replaced by a virtual source cavity whose
//! time-dependent out-coupling emits exactly the pulse envelope. The cavity
//! and the emitter form a cascaded open system, simulated here as
//!
//! * the unconditional master equation,
//! * photon-counting and homodyne quantum trajectories,
//! * a bank of Bayesian filters that read the emitter's initial state (or a
//!   physical parameter) from a measurement record.
//!
//! ```no_run
//! use qpulse::{FieldSpec, Model, ModelConfig};
//!
//! let model = Model::new(ModelConfig::with_field(FieldSpec::Fock(20)))?;
//! let solution = qpulse::solve_master_equation(&model, &Default::default())?;
//! println!("detected photons: {}", solution.series.integrated_flux.last().unwrap());
//! # Ok::<(), qpulse::Error>(())
//! ```

pub mod cli;
pub mod config;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod hilbert;
pub mod inference;
pub mod model;
pub mod propagator;
pub mod pulse;
pub mod record;
pub mod rng;

pub use config::RunConfig;
pub use dynamics::{
    simulate_trajectory, solve_master_equation, Diagnostics, MasterEquationOptions,
    MasterEquationSolution, ObservableSeries, Trajectory, TrajectoryOptions,
};
pub use ensemble::{
    run_ensemble, run_trajectory, Ensemble, EnsembleResult, EnsembleSpec, Outputs, TrajectoryOutcome,
    TruthPolicy,
};
pub use error::{Error, Result};
pub use hilbert::{AtomLevel, DensityMatrix, FieldSpec, HilbertLayout, Operator, C64};
pub use inference::{error_probability, FilterBank, Hypothesis, PosteriorSeries};
pub use model::{Detection, Generators, Model, ModelConfig};
pub use propagator::Representation;
pub use pulse::{CouplingSchedule, PulseShape};
pub use record::{MeasurementRecord, RecordData};
pub use rng::TrajectoryRng;
