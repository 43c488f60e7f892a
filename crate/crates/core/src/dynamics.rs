//! Unconditional master equation and the two measurement unravelings.

use std::fmt::Write as _;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::hilbert::{DensityMatrix, C64};
use crate::model::{
    Detection, Generators, Model, JUMP_PROBABILITY_LIMIT, JUMP_PROBABILITY_WARNING,
};
use crate::propagator::{Generator, Propagator, StateRepr, Workspace};
use crate::record::MeasurementRecord;
use crate::rng::TrajectoryRng;

/// Largest per-step trace change accepted from the unconditional integrator.
pub const TRACE_DRIFT_LIMIT: f64 = 1e-6;

static STEP_WARNING_ISSUED: std::sync::atomic::AtomicBool = std::sync::atomic::AtomicBool::new(false);

/// Worst values of the state invariants seen during a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diagnostics {
    pub steps: usize,
    /// Largest per-step |ΔTr| of the unconditional integrator.
    pub max_trace_drift: f64,
    /// Largest max|ρ − ρ†|/Tr at validation checkpoints.
    pub max_hermiticity: f64,
    /// Smallest λ_min/Tr at validation checkpoints.
    pub min_eigen_ratio: f64,
    pub positivity_checks: usize,
    /// Largest ⟨L₀†L₀⟩ dt seen.
    pub max_jump_probability: f64,
}

impl Default for Diagnostics {
    fn default() -> Self {
        Self {
            steps: 0,
            max_trace_drift: 0.0,
            max_hermiticity: 0.0,
            min_eigen_ratio: f64::INFINITY,
            positivity_checks: 0,
            max_jump_probability: 0.0,
        }
    }
}

impl Diagnostics {
    pub fn merge(&mut self, other: &Diagnostics) {
        self.steps += other.steps;
        self.max_trace_drift = self.max_trace_drift.max(other.max_trace_drift);
        self.max_hermiticity = self.max_hermiticity.max(other.max_hermiticity);
        self.min_eigen_ratio = self.min_eigen_ratio.min(other.min_eigen_ratio);
        self.positivity_checks += other.positivity_checks;
        self.max_jump_probability = self.max_jump_probability.max(other.max_jump_probability);
    }

    pub(crate) fn check_state(&mut self, prop: &Propagator, state: &StateRepr) {
        self.max_hermiticity = self.max_hermiticity.max(prop.hermiticity(state));
        self.min_eigen_ratio = self.min_eigen_ratio.min(prop.min_eigen_ratio(state));
        self.positivity_checks += 1;
    }
}

/// Observables on the output grid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObservableSeries {
    pub t: Vec<f64>,
    /// ⟨a†a⟩
    pub photons: Vec<f64>,
    /// ⟨|e⟩⟨e|⟩
    pub excited: Vec<f64>,
    /// ⟨L₀†L₀⟩, the forward detection rate.
    pub flux: Vec<f64>,
    /// ∫₀ᵗ ⟨L₀†L₀⟩ dt′ (trapezoid on the integration grid).
    pub integrated_flux: Vec<f64>,
    /// ∫₀ᵗ κ ⟨|e⟩⟨e|⟩ dt′, emission into the unobserved channel.
    pub side_loss: Vec<f64>,
}

impl ObservableSeries {
    fn push(&mut self, t: f64, photons: f64, excited: f64, flux: f64, integ: f64, side: f64) {
        self.t.push(t);
        self.photons.push(photons);
        self.excited.push(excited);
        self.flux.push(flux);
        self.integrated_flux.push(integ);
        self.side_loss.push(side);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// CSV with `#` comment lines taken from `header`.
    pub fn to_csv(&self, header: &[String]) -> String {
        let mut s = String::new();
        for h in header {
            let _ = writeln!(s, "# {h}");
        }
        s.push_str("t,photons,excited,flux,integrated_flux,side_loss\n");
        for i in 0..self.len() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                self.t[i],
                self.photons[i],
                self.excited[i],
                self.flux[i],
                self.integrated_flux[i],
                self.side_loss[i]
            );
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MasterEquationOptions {
    /// Keep every `stride`-th grid point (the last point is always kept).
    pub stride: usize,
    /// Grid indices at which to keep the full density matrix.
    pub checkpoints: Vec<usize>,
    /// Positivity check cadence in steps; 0 disables it.
    pub validate_every: usize,
}

impl Default for MasterEquationOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            checkpoints: Vec::new(),
            validate_every: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MasterEquationSolution {
    pub series: ObservableSeries,
    /// (grid index, density matrix) for each requested checkpoint.
    pub snapshots: Vec<(usize, DensityMatrix)>,
    pub diagnostics: Diagnostics,
}

/// One RK4 step of the unconditional master equation on the joint space.
pub fn step_deterministic(rho: &DensityMatrix, model: &Model, t: f64) -> Result<DensityMatrix> {
    let prop = model.full_propagator()?;
    let mut state = prop.mixed_state(rho)?;
    let mut ws = prop.workspace();
    let before = prop.trace(&state);
    prop.rk4(&mut ws, &mut state, t, model.config().dt, Generator::Full)?;
    let drift = (prop.trace(&state) - before).abs();
    if drift > TRACE_DRIFT_LIMIT {
        return Err(Error::TraceDrift { drift, time: t });
    }
    Ok(prop.to_density(&state))
}

/// One RK4 step of the no-jump evolution of an unnormalized state.
pub fn counting_nojump_step(rho: &DensityMatrix, model: &Model, t: f64) -> Result<DensityMatrix> {
    let prop = model.full_propagator()?;
    let mut state = prop.mixed_state(rho)?;
    let mut ws = prop.workspace();
    prop.rk4(&mut ws, &mut state, t, model.config().dt, Generator::NoJump)?;
    let tr = prop.trace(&state);
    if !(tr > 0.0) {
        return Err(Error::NonPositiveTrace(tr));
    }
    Ok(prop.to_density(&state))
}

/// Signal increment Tr(L₀ρ + ρL₀†)dt + √dt·N(0,1), with L₀ → e^{−iφ}L₀.
pub fn homodyne_increment(
    rho: &DensityMatrix,
    gens: &Generators,
    dt: f64,
    phase: f64,
    rng: &mut TrajectoryRng,
) -> Result<f64> {
    let l = gens.jump.scaled(C64::from_polar(1.0, -phase));
    let mean = crate::hilbert::expectation(&l, rho)?.re * 2.0;
    Ok(mean * dt + dt.sqrt() * rng.normal())
}

/// Linear homodyne update: no-jump RK4 substep, then ρ → MρM† with
/// M = 1 + e^{−iφ} L₀ dY.
pub fn homodyne_step(rho: &DensityMatrix, model: &Model, t: f64, dy: f64) -> Result<DensityMatrix> {
    let prop = model.full_propagator()?;
    let mut state = prop.mixed_state(rho)?;
    let mut ws = prop.workspace();
    homodyne_update(prop, &mut ws, &mut state, t, model.config().dt, model.config().homodyne_phase(), dy)?;
    Ok(prop.to_density(&state))
}

pub(crate) fn homodyne_update(
    prop: &Propagator,
    ws: &mut Workspace,
    state: &mut StateRepr,
    t: f64,
    dt: f64,
    phase: f64,
    dy: f64,
) -> Result<()> {
    prop.rk4(ws, state, t, dt, Generator::NoJump)?;
    prop.measure(ws, state, t, C64::from_polar(dy, -phase));
    let tr = prop.trace(state);
    if !(tr > 0.0) {
        return Err(Error::NonPositiveTrace(tr));
    }
    Ok(())
}

/// Integrates the unconditional master equation over the whole window.
pub fn solve_master_equation(
    model: &Model,
    opts: &MasterEquationOptions,
) -> Result<MasterEquationSolution> {
    let cfg = model.config();
    let prop = model.propagator();
    let mut ws = prop.workspace();
    let mut state = model.initial_density();
    let steps = cfg.steps();
    let dt = cfg.dt;
    let stride = opts.stride.max(1);
    let mut series = ObservableSeries::default();
    let mut snapshots = Vec::new();
    let mut diag = Diagnostics::default();
    let (mut integ, mut side) = (0.0, 0.0);
    let mut prev: Option<(f64, f64)> = None;
    for k in 0..=steps {
        let t = model.time(k);
        let tr = prop.trace(&state);
        let flux = prop.rate(&mut ws, &state, t) / tr;
        let excited = prop.excited(&state);
        if let Some((f0, e0)) = prev {
            integ += 0.5 * dt * (f0 + flux);
            side += 0.5 * dt * cfg.kappa * (e0 + excited);
        }
        prev = Some((flux, excited));
        diag.max_jump_probability = diag.max_jump_probability.max(flux * dt);
        if k % stride == 0 || k == steps {
            series.push(t, prop.photons(&state), excited, flux, integ, side);
        }
        if opts.checkpoints.contains(&k) {
            snapshots.push((k, prop.to_density(&state)));
        }
        if opts.validate_every > 0 && k % opts.validate_every == 0 {
            diag.check_state(prop, &state);
        }
        if k == steps {
            break;
        }
        prop.rk4(&mut ws, &mut state, t, dt, Generator::Full)?;
        let drift = (prop.trace(&state) - tr).abs();
        diag.max_trace_drift = diag.max_trace_drift.max(drift);
        if drift > TRACE_DRIFT_LIMIT {
            return Err(Error::TraceDrift { drift, time: t });
        }
        diag.steps += 1;
    }
    Ok(MasterEquationSolution {
        series,
        snapshots,
        diagnostics: diag,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrajectoryOptions {
    /// Positivity check cadence in steps; 0 disables it.
    pub validate_every: usize,
    /// Grid indices at which to keep the normalized conditioned state.
    pub snapshot_steps: Vec<usize>,
    /// Keep observables every `series_stride` steps; 0 keeps none.
    pub series_stride: usize,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        Self {
            validate_every: 0,
            snapshot_steps: Vec::new(),
            series_stride: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub record: MeasurementRecord,
    /// ∫ ⟨L₀†L₀⟩ dt along the conditioned state.
    pub integrated_rate: f64,
    /// Conditioned observables; `integrated_flux` holds the running integral
    /// of the conditional rate and `side_loss` is left at zero.
    pub series: ObservableSeries,
    pub snapshots: Vec<(usize, DensityMatrix)>,
    pub diagnostics: Diagnostics,
}

impl Trajectory {
    pub fn clicks(&self) -> usize {
        self.record.click_count()
    }
}

/// Generates a measurement record from the model's initial state using the
/// configured detection scheme. The truth state is renormalized every step.
pub fn simulate_trajectory(
    model: &Model,
    rng: &mut TrajectoryRng,
    opts: &TrajectoryOptions,
) -> Result<Trajectory> {
    let cfg = model.config();
    let prop = model.propagator();
    let mut ws = prop.workspace();
    let mut state = model.initial_state();
    let steps = cfg.steps();
    let dt = cfg.dt;
    let mut diag = Diagnostics::default();
    let mut series = ObservableSeries::default();
    let mut snapshots = Vec::new();
    let mut clicks = Vec::new();
    let mut increments = Vec::new();
    let mut integ = 0.0;
    let mut prev_rate: Option<f64> = None;
    let mut warned = false;

    for k in 0..=steps {
        let t = model.time(k);
        let rate = prop.rate(&mut ws, &state, t) / prop.trace(&state);
        if let Some(r0) = prev_rate {
            integ += 0.5 * dt * (r0 + rate);
        }
        prev_rate = Some(rate);
        let p = rate * dt;
        diag.max_jump_probability = diag.max_jump_probability.max(p);
        if opts.series_stride > 0 && (k % opts.series_stride == 0 || k == steps) {
            series.push(t, prop.photons(&state), prop.excited(&state), rate, integ, 0.0);
        }
        if opts.snapshot_steps.contains(&k) {
            snapshots.push((k, prop.to_density(&state)));
        }
        if opts.validate_every > 0 && k % opts.validate_every == 0 {
            diag.check_state(prop, &state);
        }
        if k == steps {
            break;
        }
        if p > JUMP_PROBABILITY_LIMIT {
            return Err(Error::StepTooLarge {
                probability: p,
                time: t,
                suggested_dt: JUMP_PROBABILITY_WARNING * dt / p,
            });
        }
        if p > JUMP_PROBABILITY_WARNING && !warned {
            // once per process; the worst value is kept in the diagnostics
            if !STEP_WARNING_ISSUED.swap(true, std::sync::atomic::Ordering::Relaxed) {
                log::warn!(
                    "jump probability {p:.3} per step at t = {t}; consider dt <= {:e}",
                    JUMP_PROBABILITY_WARNING * dt / p
                );
            }
            warned = true;
        }
        match cfg.detection {
            Detection::Counting => {
                if rng.uniform() < p {
                    prop.jump(&mut ws, &mut state, t);
                    clicks.push(k + 1);
                } else {
                    prop.rk4(&mut ws, &mut state, t, dt, Generator::NoJump)?;
                }
            }
            Detection::Homodyne { phase } => {
                let tr = prop.trace(&state);
                let mean = 2.0 * (C64::from_polar(1.0, -phase) * prop.jump_mean(&mut ws, &state, t)).re / tr;
                let dy = mean * dt + dt.sqrt() * rng.normal();
                homodyne_update(prop, &mut ws, &mut state, t, dt, phase, dy)?;
                increments.push(dy);
            }
        }
        let tr = prop.trace(&state);
        if !(tr > 0.0) || !tr.is_finite() {
            return Err(Error::NonPositiveTrace(tr));
        }
        prop.scale(&mut state, 1.0 / tr);
        diag.steps += 1;
    }

    let record = match cfg.detection {
        Detection::Counting => MeasurementRecord::counting(dt, steps, clicks)?,
        Detection::Homodyne { phase } => MeasurementRecord::homodyne(dt, phase, increments)?,
    }
    .with_provenance(rng.seed(), rng.stream(), None);
    Ok(Trajectory {
        record,
        integrated_rate: integ,
        series,
        snapshots,
        diagnostics: diag,
    })
}

/// Frobenius norm of a − b.
pub fn frobenius_distance(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{initial_state, AtomLevel, FieldSpec, HilbertLayout};
    use crate::model::ModelConfig;

    fn model(field: FieldSpec, atom: AtomLevel, kappa: f64) -> Model {
        let mut cfg = ModelConfig::with_field(field);
        cfg.atom_init = atom;
        cfg.kappa = kappa;
        Model::new(cfg).unwrap()
    }

    #[test]
    fn dark_state_is_stationary() {
        let m = model(FieldSpec::Fock(0), AtomLevel::Zero, 0.3);
        let rho = initial_state(&FieldSpec::Fock(0), AtomLevel::Zero, &m.config().layout).unwrap();
        for t in [0.0, 2.0, 2.5] {
            let next = step_deterministic(&rho, &m, t).unwrap();
            assert_eq!(next.matrix(), rho.matrix());
            let nj = counting_nojump_step(&rho, &m, t).unwrap();
            assert_eq!(nj.matrix(), rho.matrix());
            let h = homodyne_step(&rho, &m, t, 0.37).unwrap();
            assert_eq!(h.matrix(), rho.matrix());
        }
    }

    #[test]
    fn free_decay_of_the_emitter() {
        for kappa in [0.0, 0.6] {
            let m = model(FieldSpec::Fock(0), AtomLevel::Excited, kappa);
            let sol = solve_master_equation(&m, &MasterEquationOptions::default()).unwrap();
            for (t, pe) in sol.series.t.iter().zip(&sol.series.excited) {
                let want = (-(1.0 + kappa) * t).exp();
                assert!((pe - want).abs() < 1e-11, "t={t}: {pe} vs {want}");
            }
            assert!(sol.diagnostics.max_trace_drift <= 1e-10);
            let total = sol.series.integrated_flux.last().unwrap() + sol.series.side_loss.last().unwrap();
            assert!((total - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn no_jump_survival_decays_at_gamma() {
        let m = model(FieldSpec::Fock(0), AtomLevel::Excited, 0.0);
        let mut rho = initial_state(&FieldSpec::Fock(0), AtomLevel::Excited, &m.config().layout).unwrap();
        let dt = m.config().dt;
        let mut last = rho.trace();
        for k in 0..2000 {
            rho = counting_nojump_step(&rho, &m, k as f64 * dt).unwrap();
            let tr = rho.trace();
            assert!(tr <= last);
            last = tr;
        }
        assert!((last - (-2.0f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn excitation_never_returns_to_the_source() {
        let m = model(FieldSpec::Fock(0), AtomLevel::Excited, 0.0);
        let sol = solve_master_equation(&m, &MasterEquationOptions::default()).unwrap();
        let worst = sol.series.photons.iter().cloned().fold(0.0, f64::max);
        assert!(worst <= 1e-10, "max photons {worst}");
    }

    #[test]
    fn single_photon_is_detected_once() {
        // long window so the emitter has relaxed before the count is read
        let mut cfg = ModelConfig::with_field(FieldSpec::Fock(1));
        cfg.t_final = 15.0;
        let m = Model::new(cfg).unwrap();
        let sol = solve_master_equation(&m, &MasterEquationOptions::default()).unwrap();
        let n = *sol.series.integrated_flux.last().unwrap();
        assert!((n - 1.0).abs() < 1e-3, "{n}");
        assert!(sol.diagnostics.max_trace_drift <= 1e-10);
    }

    #[test]
    fn side_channel_closes_the_photon_budget() {
        let m = model(FieldSpec::Fock(2), AtomLevel::One, 1.0);
        let sol = solve_master_equation(&m, &MasterEquationOptions::default()).unwrap();
        let total = sol.series.integrated_flux.last().unwrap() + sol.series.side_loss.last().unwrap();
        assert!((total - 2.0).abs() < 2e-3, "{total}");
    }

    #[test]
    fn dense_wrappers_match_fast_path() {
        let m = model(FieldSpec::Fock(1), AtomLevel::One, 0.5);
        let mut rho = initial_state(&FieldSpec::Fock(1), AtomLevel::One, &m.config().layout).unwrap();
        let prop = m.propagator();
        let mut ws = prop.workspace();
        let mut fast = m.initial_density();
        let dt = m.config().dt;
        for k in 0..1500 {
            let t = k as f64 * dt;
            rho = step_deterministic(&rho, &m, t).unwrap();
            prop.rk4(&mut ws, &mut fast, t, dt, Generator::Full).unwrap();
        }
        let d = frobenius_distance(rho.matrix(), prop.to_density(&fast).matrix());
        assert!(d < 1e-13);
    }

    #[test]
    fn homodyne_vacuum_is_shot_noise() {
        let m = model(FieldSpec::Fock(0), AtomLevel::Zero, 0.0);
        let rho = initial_state(&FieldSpec::Fock(0), AtomLevel::Zero, &m.config().layout).unwrap();
        let gens = m.generators(2.0).unwrap();
        let mut rng = TrajectoryRng::new(3, 0);
        let dt = 0.01;
        let n = 50_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| homodyne_increment(&rho, &gens, dt, 0.0, &mut rng).unwrap())
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4.0 * (dt / n as f64).sqrt());
        assert!((var / dt - 1.0).abs() < 0.03);
    }

    #[test]
    fn homodyne_increment_mean_tracks_the_quadrature() {
        // Coherent cavity amplitude gives a non-zero signal mean.
        let field = FieldSpec::coherent_real(1.0);
        let layout = HilbertLayout::new(field.default_cavity_dim()).unwrap();
        let m = model(field.clone(), AtomLevel::Zero, 0.0);
        let rho = initial_state(&field, AtomLevel::Zero, &layout).unwrap();
        let t = 1.5;
        let gens = m.generators(t).unwrap();
        let g = m.schedule().coupling(t);
        let want = 2.0 * (g.conj() * 1.0).re;
        let mut rng = TrajectoryRng::new(4, 1);
        let dt = 0.01;
        let n = 40_000;
        let mean = (0..n)
            .map(|_| homodyne_increment(&rho, &gens, dt, 0.0, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean - want * dt).abs() < 4.0 * (dt / n as f64).sqrt());
        // the orthogonal quadrature of a real amplitude with a real envelope vanishes
        let mean_q = (0..n)
            .map(|_| homodyne_increment(&rho, &gens, dt, std::f64::consts::FRAC_PI_2, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!(mean_q.abs() < 4.0 * (dt / n as f64).sqrt());
    }

    #[test]
    fn vacuum_never_clicks() {
        let m = model(FieldSpec::Fock(0), AtomLevel::Zero, 0.0);
        for seed in 0..5 {
            let mut rng = TrajectoryRng::new(seed, 0);
            let tr = simulate_trajectory(&m, &mut rng, &TrajectoryOptions::default()).unwrap();
            assert_eq!(tr.clicks(), 0);
        }
    }

    #[test]
    fn trajectories_are_reproducible() {
        let m = model(FieldSpec::Fock(3), AtomLevel::One, 0.0);
        let run = || {
            let mut rng = TrajectoryRng::new(17, 2);
            simulate_trajectory(&m, &mut rng, &TrajectoryOptions::default()).unwrap().record
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn step_guard_rejects_coarse_grids() {
        let mut cfg = ModelConfig::with_field(FieldSpec::Fock(20));
        cfg.dt = 0.2;
        let m = Model::new(cfg).unwrap();
        let mut rng = TrajectoryRng::new(1, 0);
        let err = simulate_trajectory(&m, &mut rng, &TrajectoryOptions::default()).unwrap_err();
        assert!(matches!(err, Error::StepTooLarge { .. }), "{err}");
    }
}
