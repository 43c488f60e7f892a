//! Physical model: parameters, dense generators and the cascaded Lindblad
//! right-hand side.
//!
//! The dense routines here are the reference implementation; trajectories
//! run on the compiled sparse form in [`crate::propagator`].

use std::fmt;
use std::sync::{Arc, OnceLock};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::hilbert::{
    annihilation_operator, atomic_transition, check_shape, embed, AtomLevel, DensityMatrix,
    FieldSpec, HilbertLayout, Operator, Subsystem, C64,
};
use crate::propagator::{Propagator, Representation, StateRepr, Workspace};
use crate::pulse::{CouplingSchedule, PulseShape, DEFAULT_CUTOFF_EPSILON};

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_T_FINAL: f64 = 10.0;

/// Jump probabilities per step above this get a warning.
pub const JUMP_PROBABILITY_WARNING: f64 = 0.1;
/// Jump probabilities per step above this are an error.
pub const JUMP_PROBABILITY_LIMIT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Detection {
    Counting,
    /// Homodyne detection of the quadrature selected by the local-oscillator phase.
    Homodyne { phase: f64 },
}

impl fmt::Display for Detection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Detection::Counting => f.write_str("counting"),
            Detection::Homodyne { .. } => f.write_str("homodyne"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Forward coupling and decay rate of |e⟩ → |1⟩; sets the time unit.
    pub gamma: f64,
    /// Decay rate of |e⟩ → |1⟩ into unobserved modes.
    pub kappa: f64,
    /// Energy of |e⟩ in the rotating frame.
    pub detuning: f64,
    pub pulse: PulseShape,
    pub field: FieldSpec,
    pub atom_init: AtomLevel,
    pub layout: HilbertLayout,
    pub t_final: f64,
    pub dt: f64,
    pub detection: Detection,
    pub cutoff_epsilon: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let field = FieldSpec::Fock(1);
        Self {
            gamma: 1.0,
            kappa: 0.0,
            detuning: 0.0,
            pulse: PulseShape::default(),
            layout: HilbertLayout::new(field.default_cavity_dim()).expect("nonzero"),
            field,
            atom_init: AtomLevel::One,
            t_final: DEFAULT_T_FINAL,
            dt: DEFAULT_DT,
            detection: Detection::Counting,
            cutoff_epsilon: DEFAULT_CUTOFF_EPSILON,
        }
    }
}

impl ModelConfig {
    /// Default model probed by `field`, with the truncation sized to fit it.
    pub fn with_field(field: FieldSpec) -> Self {
        let layout = HilbertLayout::new(field.default_cavity_dim()).expect("nonzero");
        Self {
            field,
            layout,
            ..Self::default()
        }
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::config(format!("gamma must be > 0 (got {})", self.gamma)));
        }
        if !(self.kappa >= 0.0) {
            return Err(Error::config(format!("kappa must be >= 0 (got {})", self.kappa)));
        }
        if !self.detuning.is_finite() {
            return Err(Error::config("detuning must be finite"));
        }
        if !(self.dt > 0.0) || !(self.t_final > 0.0) {
            return Err(Error::config("dt and t_final must be positive"));
        }
        let steps = self.steps();
        if steps == 0 || ((steps as f64) * self.dt - self.t_final).abs() > 1e-9 * self.t_final {
            return Err(Error::config(format!(
                "t_final = {} is not an integer number of steps dt = {}",
                self.t_final, self.dt
            )));
        }
        if self.t_final + 1e-12 < self.pulse.support_end() {
            return Err(Error::config(format!(
                "t_final = {} ends before the pulse support ({})",
                self.t_final,
                self.pulse.support_end()
            )));
        }
        if !(self.cutoff_epsilon > 0.0) {
            return Err(Error::config("cutoff_epsilon must be positive"));
        }
        if let Detection::Homodyne { phase } = self.detection {
            if !phase.is_finite() {
                return Err(Error::config("homodyne phase must be finite"));
            }
        }
        self.field.amplitudes(self.layout.cavity_dim())?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<CouplingSchedule> {
        CouplingSchedule::new(self.pulse.clone(), self.dt, self.t_final, self.cutoff_epsilon)
    }

    pub fn initial_state(&self) -> Result<DensityMatrix> {
        crate::hilbert::initial_state(&self.field, self.atom_init, &self.layout)
    }

    pub fn homodyne_phase(&self) -> f64 {
        match self.detection {
            Detection::Counting => 0.0,
            Detection::Homodyne { phase } => phase,
        }
    }
}

/// A validated configuration with its coupling schedule and compiled
/// generators. Cheap to clone; clones share the compiled data.
#[derive(Clone, Debug)]
pub struct Model {
    config: Arc<ModelConfig>,
    schedule: Arc<CouplingSchedule>,
    propagator: Arc<Propagator>,
    full: Arc<OnceLock<Arc<Propagator>>>,
    initial: Arc<StateRepr>,
    pure: bool,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        Self::with_representation(config, Representation::Auto)
    }

    pub fn with_representation(config: ModelConfig, repr: Representation) -> Result<Self> {
        config.validate()?;
        let schedule = Arc::new(config.schedule()?);
        let psi = crate::hilbert::product_amplitudes(&config.field, config.atom_init, &config.layout)?;
        let propagator = Propagator::compile(&config, schedule.clone(), Some(&psi))?;
        let pure_state = propagator.pure_state(&psi)?;
        let norm = propagator.trace(&pure_state);
        let mut pure_state = pure_state;
        propagator.scale(&mut pure_state, 1.0 / norm);
        let pure = repr == Representation::Auto && propagator.pure_allowed();
        let initial = if pure {
            pure_state
        } else {
            propagator.to_mixed(&pure_state)
        };
        Ok(Self {
            config: Arc::new(config),
            schedule,
            propagator: Arc::new(propagator),
            full: Arc::new(OnceLock::new()),
            initial: Arc::new(initial),
            pure,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn schedule(&self) -> &CouplingSchedule {
        &self.schedule
    }

    /// Generators compiled onto the support reachable from the initial state.
    pub fn propagator(&self) -> &Propagator {
        &self.propagator
    }

    /// Generators compiled onto the whole joint space.
    pub fn full_propagator(&self) -> Result<&Propagator> {
        if let Some(p) = self.full.get() {
            return Ok(p);
        }
        let p = Arc::new(Propagator::compile(&self.config, self.schedule.clone(), None)?);
        Ok(self.full.get_or_init(|| p))
    }

    pub fn uses_pure_states(&self) -> bool {
        self.pure
    }

    /// Normalized initial state in the representation used by trajectories.
    pub fn initial_state(&self) -> StateRepr {
        (*self.initial).clone()
    }

    /// Normalized initial state as a reduced density matrix.
    pub fn initial_density(&self) -> StateRepr {
        self.propagator.to_mixed(&self.initial)
    }

    pub fn workspace(&self) -> Workspace {
        self.propagator.workspace()
    }

    pub fn generators(&self, t: f64) -> Result<Generators> {
        build_generators(&self.config, &self.schedule, t)
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.config.dt
    }
}

/// Joint-space operators of the cascade at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct Generators {
    /// H = H_s + H_us
    pub hamiltonian: Operator,
    /// Monitored output channel L₀ = g*(t) a + √γ c.
    pub jump: Operator,
    /// Unmonitored channels; here √κ |1⟩⟨e| when κ > 0.
    pub extra: Vec<Operator>,
}

/// Generators for coupling value `g`.
///
/// H = (i√γ/2)(g a†c − g* a c†) + Δ|e⟩⟨e|, L₀ = g* a + √γ c.
pub fn generators_for_coupling(config: &ModelConfig, g: C64) -> Result<Generators> {
    let layout = &config.layout;
    let a = embed(&annihilation_operator(layout.cavity_dim())?, Subsystem::Cavity, layout)?;
    let c = embed(
        &atomic_transition(AtomLevel::Excited, AtomLevel::One),
        Subsystem::Atom,
        layout,
    )?;
    let excited = embed(
        &atomic_transition(AtomLevel::Excited, AtomLevel::Excited),
        Subsystem::Atom,
        layout,
    )?;
    let sqrt_gamma = config.gamma.sqrt();
    let i_half = C64::new(0.0, 0.5 * sqrt_gamma);

    let ad_c = &a.dagger() * &c;
    let a_cd = &a * &c.dagger();
    let h_us = &ad_c.scaled(i_half * g) - &a_cd.scaled(i_half * g.conj());
    let hamiltonian = &h_us + &excited.scaled(C64::new(config.detuning, 0.0));

    let jump = &a.scaled(g.conj()) + &c.scaled(C64::new(sqrt_gamma, 0.0));
    let extra = if config.kappa > 0.0 {
        vec![c.scaled(C64::new(config.kappa.sqrt(), 0.0))]
    } else {
        Vec::new()
    };
    Ok(Generators {
        hamiltonian,
        jump,
        extra,
    })
}

pub fn build_generators(
    config: &ModelConfig,
    schedule: &CouplingSchedule,
    t: f64,
) -> Result<Generators> {
    generators_for_coupling(config, schedule.coupling(t))
}

/// −i[H, ρ] + D[L₀]ρ + Σᵢ D[Lᵢ]ρ.
pub fn lindblad_rhs(rho: &DensityMatrix, gens: &Generators) -> Result<Array2<C64>> {
    let dim = gens.hamiltonian.dim();
    check_shape(dim, rho.matrix())?;
    let r = rho.matrix();
    let h = gens.hamiltonian.matrix();
    let mut out = (h.dot(r) - r.dot(h)) * C64::new(0.0, -1.0);
    out = out + crate::hilbert::dissipator_apply(&gens.jump, rho)?;
    for l in &gens.extra {
        out = out + crate::hilbert::dissipator_apply(l, rho)?;
    }
    Ok(out)
}

/// Jump probability ⟨L₀†L₀⟩ dt on the normalized state.
pub fn jump_probability(rho: &DensityMatrix, gens: &Generators, dt: f64) -> Result<f64> {
    let ldl = &gens.jump.dagger() * &gens.jump;
    let p = crate::hilbert::expectation(&ldl, rho)?.re * dt;
    if p > JUMP_PROBABILITY_LIMIT {
        return Err(Error::StepTooLarge {
            probability: p,
            time: f64::NAN,
            suggested_dt: JUMP_PROBABILITY_WARNING * dt / p,
        });
    }
    Ok(p.max(0.0))
}

/// ρ̃ → L₀ρ̃L₀†, without renormalization.
pub fn apply_jump(rho: &DensityMatrix, gens: &Generators) -> Result<DensityMatrix> {
    check_shape(gens.jump.dim(), rho.matrix())?;
    let l = gens.jump.matrix();
    let ld = gens.jump.dagger().into_matrix();
    let out = l.dot(rho.matrix()).dot(&ld);
    let tr: f64 = out.diag().iter().map(|z| z.re).sum();
    if tr == 0.0 {
        return Err(Error::DarkJump);
    }
    DensityMatrix::from_matrix(out, false)
}
