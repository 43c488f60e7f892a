//! Monte Carlo ensembles of (truth record, filter bank) pairs.
//!
//! Trajectory `i` draws all of its randomness from stream `i` of the master
//! seed, and results are reduced in index order after all workers finish, so
//! the output does not depend on the thread count.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::dynamics::{simulate_trajectory, Diagnostics, ObservableSeries, TrajectoryOptions};
use crate::error::{Error, Result};
use crate::inference::{prepare_models, FilterBank, Hypothesis, PosteriorSeries};
use crate::model::{Model, ModelConfig};
use crate::propagator::Representation;
use crate::record::MeasurementRecord;
use crate::rng::{TrajectoryRng, GENERATOR_NAME, NORMAL_SAMPLER_NAME};

#[derive(Clone, Debug, PartialEq)]
pub enum TruthPolicy {
    /// Always the hypothesis with this label.
    Fixed(String),
    /// Drawn per trajectory from the prior distribution.
    SampledFromPriors,
}

impl std::fmt::Display for TruthPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TruthPolicy::Fixed(label) => write!(f, "fixed:{label}"),
            TruthPolicy::SampledFromPriors => f.write_str("sampled"),
        }
    }
}

/// Optional per-trajectory outputs; the mean error curve is always produced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Outputs {
    pub posterior_samples: bool,
    pub records: bool,
    pub state_series: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSpec {
    pub base: ModelConfig,
    pub hypotheses: Vec<Hypothesis>,
    pub truth: TruthPolicy,
    pub n_trajectories: usize,
    pub master_seed: u64,
    pub outputs: Outputs,
    /// Posterior output every `output_stride` grid points.
    pub output_stride: usize,
    /// Positivity check cadence in steps; 0 disables it.
    pub validate_every: usize,
    pub representation: Representation,
    /// Identifier of the resolved configuration, echoed in outputs.
    pub config_hash: Option<String>,
}

impl EnsembleSpec {
    pub fn new(base: ModelConfig, hypotheses: Vec<Hypothesis>) -> Self {
        Self {
            base,
            hypotheses,
            truth: TruthPolicy::SampledFromPriors,
            n_trajectories: 1,
            master_seed: 0,
            outputs: Outputs::default(),
            output_stride: 1,
            validate_every: 0,
            representation: Representation::Auto,
            config_hash: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trajectories == 0 {
            return Err(Error::config("n_trajectories must be at least 1"));
        }
        if self.output_stride == 0 {
            return Err(Error::config("output_stride must be at least 1"));
        }
        crate::inference::validate_hypotheses(&self.hypotheses)?;
        if let TruthPolicy::Fixed(label) = &self.truth {
            if !self.hypotheses.iter().any(|h| &h.label == label) {
                return Err(Error::config(format!("truth `{label}` is not a hypothesis label")));
            }
        }
        self.base.validate()
    }
}

/// Everything one trajectory produced.
#[derive(Clone, Debug)]
pub struct TrajectoryOutcome {
    pub index: usize,
    pub truth: usize,
    pub record: MeasurementRecord,
    pub posteriors: PosteriorSeries,
    pub states: Option<ObservableSeries>,
    pub diagnostics: Diagnostics,
}

/// A spec with its per-hypothesis models compiled once.
#[derive(Clone, Debug)]
pub struct Ensemble {
    spec: EnsembleSpec,
    models: Vec<Model>,
}

impl Ensemble {
    pub fn new(spec: EnsembleSpec) -> Result<Self> {
        spec.validate()?;
        let models = prepare_models(&spec.base, &spec.hypotheses, spec.representation)?;
        Ok(Self { spec, models })
    }

    pub fn spec(&self) -> &EnsembleSpec {
        &self.spec
    }

    fn pick_truth(&self, rng: &mut TrajectoryRng) -> usize {
        match &self.spec.truth {
            TruthPolicy::Fixed(label) => self
                .spec
                .hypotheses
                .iter()
                .position(|h| &h.label == label)
                .expect("validated"),
            TruthPolicy::SampledFromPriors => {
                let u = rng.uniform();
                let mut acc = 0.0;
                for (i, h) in self.spec.hypotheses.iter().enumerate() {
                    acc += h.prior;
                    if u < acc {
                        return i;
                    }
                }
                self.spec.hypotheses.len() - 1
            }
        }
    }

    /// Runs trajectory `index`: pick the truth, generate its record, filter it.
    pub fn trajectory(&self, index: usize) -> Result<TrajectoryOutcome> {
        self.trajectory_inner(index)
            .map_err(|e| Error::Trajectory {
                index,
                source: Box::new(e),
            })
    }

    fn trajectory_inner(&self, index: usize) -> Result<TrajectoryOutcome> {
        let mut rng = TrajectoryRng::new(self.spec.master_seed, index as u64);
        let truth = self.pick_truth(&mut rng);
        let opts = TrajectoryOptions {
            validate_every: self.spec.validate_every,
            snapshot_steps: Vec::new(),
            series_stride: if self.spec.outputs.state_series {
                self.spec.output_stride
            } else {
                0
            },
        };
        let traj = simulate_trajectory(&self.models[truth], &mut rng, &opts)?;
        let record = traj
            .record
            .with_provenance(self.spec.master_seed, index as u64, self.spec.config_hash.clone());
        let (posteriors, filter_diagnostics) = self.filter_record(&record)?;
        let mut diagnostics = traj.diagnostics;
        diagnostics.merge(&filter_diagnostics);
        Ok(TrajectoryOutcome {
            index,
            truth,
            record,
            posteriors,
            states: self.spec.outputs.state_series.then_some(traj.series),
            diagnostics,
        })
    }

    /// Filters `record` with a fresh bank over the compiled hypotheses.
    pub fn filter_record(&self, record: &MeasurementRecord) -> Result<(PosteriorSeries, Diagnostics)> {
        let mut bank = FilterBank::from_models(self.spec.hypotheses.clone(), self.models.clone())?;
        bank.set_validate_every(self.spec.validate_every);
        let posteriors = bank.run_record(record, self.spec.output_stride)?;
        Ok((posteriors, *bank.diagnostics()))
    }

    /// Runs all trajectories on `threads` workers (all cores if `None`).
    pub fn run(&self, threads: Option<usize>) -> Result<EnsembleResult> {
        let start = Instant::now();
        let n = self.spec.n_trajectories;
        let done = AtomicUsize::new(0);
        let tick = (n / 10).max(1);
        let work = || -> Vec<Result<TrajectoryOutcome>> {
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let r = self.trajectory(i);
                    let k = done.fetch_add(1, Ordering::Relaxed) + 1;
                    if k % tick == 0 {
                        log::info!("{k}/{n} trajectories");
                    }
                    r
                })
                .collect()
        };
        let outcomes = match threads {
            Some(k) => rayon::ThreadPoolBuilder::new()
                .num_threads(k.max(1))
                .build()
                .map_err(|e| Error::config(format!("thread pool: {e}")))?
                .install(work),
            None => work(),
        };
        let mut failures = outcomes.iter().filter_map(|o| o.as_ref().err());
        if let Some(first) = failures.next() {
            log::error!("{first}");
            for e in failures {
                log::error!("{e}");
            }
        }
        let outcomes: Vec<TrajectoryOutcome> = outcomes.into_iter().collect::<Result<_>>()?;
        let mut result = self.reduce(&outcomes)?;
        result.wall_time = start.elapsed();
        Ok(result)
    }

    fn reduce(&self, outcomes: &[TrajectoryOutcome]) -> Result<EnsembleResult> {
        let first = &outcomes[0].posteriors;
        let len = first.len();
        let mut sum = vec![0.0; len];
        let mut sum_sq = vec![0.0; len];
        let mut diagnostics = Diagnostics::default();
        let mut max_posterior_sum_error: f64 = 0.0;
        for o in outcomes {
            if o.posteriors.len() != len {
                return Err(Error::Trajectory {
                    index: o.index,
                    source: Box::new(Error::RecordMismatch("posterior grid differs".into())),
                });
            }
            for (k, q) in o.posteriors.error_probability.iter().enumerate() {
                sum[k] += q;
                sum_sq[k] += q * q;
            }
            for p in &o.posteriors.posteriors {
                let s: f64 = p.iter().sum();
                max_posterior_sum_error = max_posterior_sum_error.max((s - 1.0).abs());
            }
            diagnostics.merge(&o.diagnostics);
        }
        let n = outcomes.len() as f64;
        let mean_qe: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let sem_qe = sum_sq
            .iter()
            .zip(&mean_qe)
            .map(|(sq, m)| {
                if outcomes.len() < 2 {
                    0.0
                } else {
                    let var = ((sq - n * m * m) / (n - 1.0)).max(0.0);
                    (var / n).sqrt()
                }
            })
            .collect();
        let labels = self.spec.hypotheses.iter().map(|h| h.label.clone()).collect();
        let samples = self.spec.outputs.posterior_samples.then(|| {
            outcomes
                .iter()
                .map(|o| (o.index, o.truth, o.posteriors.final_posteriors().unwrap_or(&[]).to_vec()))
                .collect()
        });
        Ok(EnsembleResult {
            t: first.t.clone(),
            mean_qe,
            sem_qe,
            labels,
            final_posteriors: samples,
            records: self
                .spec
                .outputs
                .records
                .then(|| outcomes.iter().map(|o| o.record.clone()).collect()),
            state_series: self
                .spec
                .outputs
                .state_series
                .then(|| outcomes.iter().filter_map(|o| o.states.clone()).collect()),
            truth_counts: self
                .spec
                .hypotheses
                .iter()
                .enumerate()
                .map(|(i, _)| outcomes.iter().filter(|o| o.truth == i).count())
                .collect(),
            diagnostics,
            max_posterior_sum_error,
            metadata: self.metadata(),
            wall_time: Duration::ZERO,
        })
    }

    fn metadata(&self) -> Vec<String> {
        let s = &self.spec;
        let mut m = vec![
            format!("qpulse {}", env!("CARGO_PKG_VERSION")),
            format!("config_hash {}", s.config_hash.as_deref().unwrap_or("none")),
            format!("master_seed {}", s.master_seed),
            format!("n_trajectories {}", s.n_trajectories),
            format!("truth {}", s.truth),
            format!("rng {GENERATOR_NAME}"),
            format!("normal_sampler {NORMAL_SAMPLER_NAME}"),
            format!("pulse {}", s.base.pulse),
            format!("dt {} t_final {}", s.base.dt, s.base.t_final),
        ];
        for h in &s.hypotheses {
            m.push(format!("hypothesis {} prior {}", h.label, h.prior));
        }
        m
    }
}

/// Runs one trajectory of `spec` (compiles the models first).
pub fn run_trajectory(spec: &EnsembleSpec, index: usize) -> Result<TrajectoryOutcome> {
    Ensemble::new(spec.clone())?.trajectory(index)
}

/// Runs the whole ensemble on the global worker pool.
pub fn run_ensemble(spec: &EnsembleSpec) -> Result<EnsembleResult> {
    Ensemble::new(spec.clone())?.run(None)
}

#[derive(Clone, Debug)]
pub struct EnsembleResult {
    pub t: Vec<f64>,
    pub mean_qe: Vec<f64>,
    /// Standard error of the mean.
    pub sem_qe: Vec<f64>,
    pub labels: Vec<String>,
    /// (trajectory, truth index, final posteriors), if requested.
    pub final_posteriors: Option<Vec<(usize, usize, Vec<f64>)>>,
    pub records: Option<Vec<MeasurementRecord>>,
    pub state_series: Option<Vec<ObservableSeries>>,
    /// Number of trajectories per truth hypothesis.
    pub truth_counts: Vec<usize>,
    pub diagnostics: Diagnostics,
    /// max |Σᵢ pᵢ − 1| over every output point of every trajectory.
    pub max_posterior_sum_error: f64,
    pub metadata: Vec<String>,
    /// Kept out of every CSV so reruns are byte-identical.
    pub wall_time: Duration,
}

impl EnsembleResult {
    pub fn final_mean_qe(&self) -> f64 {
        *self.mean_qe.last().expect("non-empty grid")
    }

    pub fn final_sem_qe(&self) -> f64 {
        *self.sem_qe.last().expect("non-empty grid")
    }

    /// `t,mean_qe,sem_qe` after the metadata comment block.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for m in &self.metadata {
            let _ = writeln!(s, "# {m}");
        }
        s.push_str("t,mean_qe,sem_qe\n");
        for i in 0..self.t.len() {
            let _ = writeln!(s, "{},{},{}", self.t[i], self.mean_qe[i], self.sem_qe[i]);
        }
        s
    }

    /// One row per trajectory: index, truth label, final posteriors, Q_e.
    pub fn posterior_samples_csv(&self) -> Option<String> {
        let rows = self.final_posteriors.as_ref()?;
        let mut s = String::new();
        for m in &self.metadata {
            let _ = writeln!(s, "# {m}");
        }
        s.push_str("trajectory,truth");
        for l in &self.labels {
            let _ = write!(s, ",p_{l}");
        }
        s.push_str(",Q_e\n");
        for (i, truth, p) in rows {
            let _ = write!(s, "{i},{}", self.labels[*truth]);
            for x in p {
                let _ = write!(s, ",{x}");
            }
            let _ = writeln!(s, ",{}", crate::inference::error_probability(p));
        }
        Some(s)
    }
}
