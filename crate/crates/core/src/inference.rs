//! Bayesian filter bank over competing hypotheses.
//!
//! Each hypothesis evolves its own unnormalized conditional state driven by
//! the shared measurement record. The trace of that state, times the
//! accumulated rescaling factors, is the record likelihood under the
//! hypothesis.

use std::fmt::Write as _;

use crate::dynamics::{homodyne_update, Diagnostics};
use crate::error::{Error, Result};
use crate::hilbert::{AtomLevel, DensityMatrix, FieldSpec};
use crate::model::{Detection, Model, ModelConfig, JUMP_PROBABILITY_WARNING};
use crate::propagator::{Generator, Representation, StateRepr, Workspace};
use crate::record::{MeasurementRecord, RecordData};

/// Traces outside [RESCALE_LOW, RESCALE_HIGH] are folded into the log weight.
pub const RESCALE_LOW: f64 = 1e-6;
pub const RESCALE_HIGH: f64 = 1e6;
pub const PRIOR_SUM_TOLERANCE: f64 = 1e-12;

/// One candidate explanation of the record: an initial emitter level plus
/// optional parameter overrides of the base model.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub label: String,
    pub atom_init: AtomLevel,
    pub gamma: Option<f64>,
    pub kappa: Option<f64>,
    pub detuning: Option<f64>,
    pub field: Option<FieldSpec>,
    pub prior: f64,
}

impl Hypothesis {
    pub fn new(label: impl Into<String>, atom_init: AtomLevel, prior: f64) -> Self {
        Self {
            label: label.into(),
            atom_init,
            gamma: None,
            kappa: None,
            detuning: None,
            field: None,
            prior,
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = Some(gamma);
        self
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = Some(kappa);
        self
    }

    pub fn with_detuning(mut self, detuning: f64) -> Self {
        self.detuning = Some(detuning);
        self
    }

    pub fn with_field(mut self, field: FieldSpec) -> Self {
        self.field = Some(field);
        self
    }

    /// The base model with this hypothesis's overrides applied.
    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        let mut cfg = base.clone();
        cfg.atom_init = self.atom_init;
        if let Some(g) = self.gamma {
            cfg.gamma = g;
        }
        if let Some(k) = self.kappa {
            cfg.kappa = k;
        }
        if let Some(d) = self.detuning {
            cfg.detuning = d;
        }
        if let Some(f) = &self.field {
            cfg.field = f.clone();
        }
        cfg
    }
}

/// Emitter in |0⟩ or |1⟩ with equal priors.
pub fn qubit_hypotheses() -> Vec<Hypothesis> {
    vec![
        Hypothesis::new("0", AtomLevel::Zero, 0.5),
        Hypothesis::new("1", AtomLevel::One, 0.5),
    ]
}

pub fn validate_hypotheses(hyps: &[Hypothesis]) -> Result<()> {
    if hyps.is_empty() {
        return Err(Error::config("at least one hypothesis is required"));
    }
    let mut sum = 0.0;
    for (i, h) in hyps.iter().enumerate() {
        if !(h.prior > 0.0 && h.prior <= 1.0) {
            return Err(Error::config(format!(
                "hypothesis `{}` has prior {} outside (0, 1]",
                h.label, h.prior
            )));
        }
        if h.label.is_empty() || h.label.contains([',', '\n']) {
            return Err(Error::config(format!("invalid hypothesis label `{}`", h.label)));
        }
        if hyps[..i].iter().any(|o| o.label == h.label) {
            return Err(Error::config(format!("duplicate hypothesis label `{}`", h.label)));
        }
        sum += h.prior;
    }
    if (sum - 1.0).abs() > PRIOR_SUM_TOLERANCE {
        return Err(Error::config(format!("priors sum to {sum}, not 1")));
    }
    Ok(())
}

/// Compiles one model per hypothesis on the base truncation.
pub fn prepare_models(
    base: &ModelConfig,
    hyps: &[Hypothesis],
    repr: Representation,
) -> Result<Vec<Model>> {
    validate_hypotheses(hyps)?;
    hyps.iter()
        .map(|h| {
            Model::with_representation(h.apply(base), repr).map_err(|e| match e {
                e if e.is_config() => {
                    Error::config(format!("hypothesis `{}`: {e}", h.label))
                }
                e => e,
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
struct Filter {
    model: Model,
    state: StateRepr,
    log_weight: f64,
    alive: bool,
    ws: Workspace,
}

/// Filters for all hypotheses, advanced in lockstep on the shared grid.
#[derive(Clone, Debug)]
pub struct FilterBank {
    hypotheses: Vec<Hypothesis>,
    filters: Vec<Filter>,
    step: usize,
    steps: usize,
    dt: f64,
    detection: Detection,
    validate_every: usize,
    diagnostics: Diagnostics,
}

impl FilterBank {
    pub fn new(base: &ModelConfig, hypotheses: Vec<Hypothesis>) -> Result<Self> {
        let models = prepare_models(base, &hypotheses, Representation::Auto)?;
        Self::from_models(hypotheses, models)
    }

    /// Bank over precompiled models (one per hypothesis, same order).
    pub fn from_models(hypotheses: Vec<Hypothesis>, models: Vec<Model>) -> Result<Self> {
        validate_hypotheses(&hypotheses)?;
        if models.len() != hypotheses.len() {
            return Err(Error::config("one model per hypothesis is required"));
        }
        let first = models[0].config();
        for m in &models[1..] {
            let c = m.config();
            if c.layout != first.layout {
                return Err(Error::config("all hypotheses must share one truncation"));
            }
            if c.dt != first.dt || c.t_final != first.t_final || c.detection != first.detection {
                return Err(Error::config("all hypotheses must share grid and detection scheme"));
            }
        }
        let (steps, dt, detection) = (first.steps(), first.dt, first.detection);
        let filters = hypotheses
            .iter()
            .zip(models)
            .map(|(h, model)| Filter {
                state: model.initial_state(),
                ws: model.workspace(),
                model,
                log_weight: h.prior.ln(),
                alive: true,
            })
            .collect();
        Ok(Self {
            hypotheses,
            filters,
            step: 0,
            steps,
            dt,
            detection,
            validate_every: 0,
            diagnostics: Diagnostics::default(),
        })
    }

    /// Checks Hermiticity and positivity of every live filter state every
    /// `k` steps (0 disables).
    pub fn set_validate_every(&mut self, k: usize) {
        self.validate_every = k;
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    fn finish_step(&mut self) {
        self.step += 1;
        if self.validate_every > 0 && self.step % self.validate_every == 0 {
            for f in self.filters.iter().filter(|f| f.alive) {
                self.diagnostics.check_state(f.model.propagator(), &f.state);
            }
        }
    }

    pub fn hypotheses(&self) -> &[Hypothesis] {
        &self.hypotheses
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    /// Grid index the bank is synchronized at.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn is_alive(&self, i: usize) -> bool {
        self.filters[i].alive
    }

    fn check_running(&self) -> Result<()> {
        if self.step >= self.steps {
            return Err(Error::RecordMismatch(format!(
                "record runs past the final step {}",
                self.steps
            )));
        }
        Ok(())
    }

    /// Advances every live filter over one step of a counting record.
    pub fn step_counting(&mut self, clicked: bool) -> Result<()> {
        self.check_running()?;
        let t = self.time();
        let dt = self.dt;
        for f in self.filters.iter_mut().filter(|f| f.alive) {
            let prop = f.model.propagator();
            let before = prop.trace(&f.state);
            if clicked {
                prop.jump(&mut f.ws, &mut f.state, t);
                prop.scale(&mut f.state, dt);
            } else {
                let p = prop.rate(&mut f.ws, &f.state, t) * dt / before;
                if p >= 1.0 {
                    return Err(Error::StepTooLarge {
                        probability: p,
                        time: t,
                        suggested_dt: JUMP_PROBABILITY_WARNING * dt / p,
                    });
                }
                prop.rk4(&mut f.ws, &mut f.state, t, dt, Generator::NoJump)?;
                let evolved = prop.trace(&f.state);
                if evolved > 0.0 {
                    prop.scale(&mut f.state, before * (1.0 - p) / evolved);
                }
            }
            settle(f)?;
        }
        self.finish_step();
        Ok(())
    }

    /// Advances every live filter over one step of a homodyne record.
    pub fn step_homodyne(&mut self, dy: f64) -> Result<()> {
        self.check_running()?;
        let phase = match self.detection {
            Detection::Homodyne { phase } => phase,
            Detection::Counting => 0.0,
        };
        let t = self.time();
        let dt = self.dt;
        for f in self.filters.iter_mut().filter(|f| f.alive) {
            let prop = f.model.propagator();
            homodyne_update(prop, &mut f.ws, &mut f.state, t, dt, phase, dy)?;
            settle(f)?;
        }
        self.finish_step();
        Ok(())
    }

    /// ln p(D | hᵢ) for the record consumed so far; −∞ for dead filters.
    pub fn log_evidence(&self) -> Vec<f64> {
        self.filters
            .iter()
            .zip(&self.hypotheses)
            .map(|(f, h)| {
                if f.alive {
                    f.log_weight + f.model.propagator().trace(&f.state).ln() - h.prior.ln()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect()
    }

    fn log_posterior_weights(&self) -> Vec<f64> {
        self.filters
            .iter()
            .map(|f| {
                if f.alive {
                    f.log_weight + f.model.propagator().trace(&f.state).ln()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect()
    }

    pub fn posteriors(&self) -> Result<Vec<f64>> {
        posterior_from_log_weights(&self.log_posterior_weights())
    }

    /// Normalized conditional state of filter `i` on the joint space.
    pub fn conditional_state(&self, i: usize) -> Option<DensityMatrix> {
        let f = &self.filters[i];
        if !f.alive {
            return None;
        }
        f.model.propagator().to_density(&f.state).normalized().ok()
    }

    /// Multiplies filter `i`'s state by `factor` and compensates in its log
    /// weight; posteriors are unchanged up to rounding.
    pub fn rescale(&mut self, i: usize, factor: f64) {
        let f = &mut self.filters[i];
        if f.alive && factor > 0.0 {
            f.model.propagator().scale(&mut f.state, factor);
            f.log_weight -= factor.ln();
        }
    }

    /// Feeds one step of `record`.
    pub fn consume(&mut self, record: &MeasurementRecord, flags: Option<&[bool]>) -> Result<()> {
        let k = self.step;
        match &record.data {
            RecordData::Counting { .. } => {
                let clicked = flags.map(|f| f[k]).unwrap_or(false);
                self.step_counting(clicked)
            }
            RecordData::Homodyne { increments, .. } => self.step_homodyne(increments[k]),
        }
    }

    /// Checks that `record` lives on this bank's grid and scheme.
    pub fn check_record(&self, record: &MeasurementRecord) -> Result<()> {
        if record.steps != self.steps {
            return Err(Error::RecordMismatch(format!(
                "record has {} steps, model has {}",
                record.steps, self.steps
            )));
        }
        if (record.dt - self.dt).abs() > 1e-12 * self.dt {
            return Err(Error::RecordMismatch(format!(
                "record dt {} differs from model dt {}",
                record.dt, self.dt
            )));
        }
        match (&record.data, self.detection) {
            (RecordData::Counting { .. }, Detection::Counting) => Ok(()),
            (RecordData::Homodyne { phase, .. }, Detection::Homodyne { phase: p }) => {
                if phase.to_bits() == p.to_bits() || (phase - p).abs() <= 1e-12 {
                    Ok(())
                } else {
                    Err(Error::RecordMismatch(format!(
                        "record phase {phase} differs from model phase {p}"
                    )))
                }
            }
            _ => Err(Error::RecordMismatch(format!(
                "{} record for a {} model",
                record.scheme(),
                self.detection
            ))),
        }
    }

    /// Filters a whole record from the bank's current (initial) position and
    /// returns posteriors every `stride` grid points (the last point always).
    pub fn run_record(&mut self, record: &MeasurementRecord, stride: usize) -> Result<PosteriorSeries> {
        self.check_record(record)?;
        if self.step != 0 {
            return Err(Error::RecordMismatch("filter bank already advanced".into()));
        }
        let stride = stride.max(1);
        let flags = record.click_flags();
        let mut series = PosteriorSeries::new(self.hypotheses.iter().map(|h| h.label.clone()).collect());
        series.push(0.0, self.posteriors()?);
        for k in 0..self.steps {
            self.consume(record, flags.as_deref())?;
            let next = k + 1;
            if next % stride == 0 || next == self.steps {
                series.push(self.time(), self.posteriors()?);
            }
        }
        Ok(series)
    }
}

/// Dead-filter detection and threshold rescaling after a step.
fn settle(f: &mut Filter) -> Result<()> {
    let prop = f.model.propagator();
    let tr = prop.trace(&f.state);
    if tr == 0.0 {
        // exact zero: the event is impossible under this hypothesis
        f.alive = false;
        return Ok(());
    }
    if !(tr > 0.0) || !tr.is_finite() {
        return Err(Error::NonPositiveTrace(tr));
    }
    if !(RESCALE_LOW..=RESCALE_HIGH).contains(&tr) {
        prop.scale(&mut f.state, 1.0 / tr);
        f.log_weight += tr.ln();
    }
    Ok(())
}

/// Normalizes log weights with max-log subtraction. −∞ entries get 0.
pub fn posterior_from_log_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    let max = log_weights
        .iter()
        .cloned()
        .filter(|w| !w.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::AllFiltersDead);
    }
    let raw: Vec<f64> = log_weights
        .iter()
        .map(|&w| if w.is_nan() { 0.0 } else { (w - max).exp() })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Q_e = 1 − max pᵢ.
pub fn error_probability(posteriors: &[f64]) -> f64 {
    1.0 - posteriors.iter().cloned().fold(0.0, f64::max)
}

/// Posterior time series of one record.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSeries {
    pub labels: Vec<String>,
    pub t: Vec<f64>,
    pub posteriors: Vec<Vec<f64>>,
    pub error_probability: Vec<f64>,
}

impl PosteriorSeries {
    pub fn new(labels: Vec<String>) -> Self {
        Self {
            labels,
            t: Vec::new(),
            posteriors: Vec::new(),
            error_probability: Vec::new(),
        }
    }

    pub fn push(&mut self, t: f64, p: Vec<f64>) {
        self.t.push(t);
        self.error_probability.push(error_probability(&p));
        self.posteriors.push(p);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn final_posteriors(&self) -> Option<&[f64]> {
        self.posteriors.last().map(|p| p.as_slice())
    }

    /// Columns `t, p_<label>…, Q_e` after `#` comment lines from `header`.
    pub fn to_csv(&self, header: &[String]) -> String {
        let mut s = String::new();
        for h in header {
            let _ = writeln!(s, "# {h}");
        }
        s.push('t');
        for l in &self.labels {
            let _ = write!(s, ",p_{l}");
        }
        s.push_str(",Q_e\n");
        for i in 0..self.len() {
            let _ = write!(s, "{}", self.t[i]);
            for p in &self.posteriors[i] {
                let _ = write!(s, ",{p}");
            }
            let _ = writeln!(s, ",{}", self.error_probability[i]);
        }
        s
    }
}
