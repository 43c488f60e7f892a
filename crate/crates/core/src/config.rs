//! Run configuration files.
//!
//! A flat `key = value` format, one entry per line, `#` starts a comment.
//! Every key is optional; [`RunConfig::render`] prints the fully resolved
//! configuration, which is also what the config hash is computed from.
//!
//! ```text
//! gamma = 1
//! kappa = 0
//! pulse.kind = gaussian
//! pulse.t0 = 2.2
//! pulse.width = 0.65
//! field.kind = fock
//! field.n = 10
//! dt = 0.01
//! detection.scheme = counting
//! hypotheses.0.label = 0
//! hypotheses.0.atom_init = 0
//! hypotheses.0.prior = 0.5
//! hypotheses.1.label = 1
//! hypotheses.1.atom_init = 1
//! hypotheses.1.prior = 0.5
//! n_trajectories = 1000
//! master_seed = 7
//! ```
//!
//! Keys: `gamma`, `kappa`, `detuning`, `pulse.kind` (`gaussian` with
//! `pulse.t0`/`pulse.width`, `flat` with `pulse.start`/`pulse.stop`,
//! `sampled` with `pulse.file`), `field.kind` (`fock` with `field.n`,
//! `coherent` with `field.alpha` or `field.mean_photons` and optional
//! `field.phase`, `amplitudes` with `field.amplitudes = re[:im], ...`),
//! `atom_init`, `cavity_dim`, `dt`, `t_final`, `cutoff_epsilon`,
//! `detection.scheme`, `detection.phase`, `hypotheses.<i>.{label, atom_init,
//! prior, gamma, kappa, detuning, field.*}`, `truth` (`sampled` or
//! `fixed:<label>`), `n_trajectories`, `master_seed`, `outputs`,
//! `output_stride`, `validate_every`, `representation`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::ensemble::{EnsembleSpec, Outputs, TruthPolicy};
use crate::error::{Error, Result};
use crate::hilbert::{AtomLevel, FieldSpec, HilbertLayout, C64};
use crate::inference::{qubit_hypotheses, Hypothesis};
use crate::model::{Detection, ModelConfig};
use crate::propagator::Representation;
use crate::pulse::PulseShape;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub hypotheses: Vec<Hypothesis>,
    pub truth: TruthPolicy,
    pub n_trajectories: usize,
    pub master_seed: u64,
    pub outputs: Outputs,
    pub output_stride: usize,
    pub validate_every: usize,
    pub representation: Representation,
    /// Source of a sampled pulse, as written in the file.
    pub pulse_file: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            hypotheses: qubit_hypotheses(),
            truth: TruthPolicy::SampledFromPriors,
            n_trajectories: 1,
            master_seed: 0,
            outputs: Outputs::default(),
            output_stride: 1,
            validate_every: 0,
            representation: Representation::Auto,
            pulse_file: None,
        }
    }
}

struct Entry {
    value: String,
    line: usize,
}

struct Entries(BTreeMap<String, Entry>);

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", i + 1)))?;
            let key = key.trim().to_string();
            let entry = Entry {
                value: value.trim().to_string(),
                line: i + 1,
            };
            if let Some(prev) = map.insert(key.clone(), entry) {
                return Err(Error::config(format!(
                    "line {}: `{key}` already set on line {}",
                    i + 1,
                    prev.line
                )));
            }
        }
        Ok(Self(map))
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.0.remove(key) {
            None => Ok(None),
            Some(e) => e.value.parse().map(Some).map_err(|_| {
                Error::config(format!("line {}: bad value `{}` for `{key}`", e.line, e.value))
            }),
        }
    }

    fn take_str(&mut self, key: &str) -> Option<String> {
        self.0.remove(key).map(|e| e.value)
    }

    fn has_prefix(&self, prefix: &str) -> bool {
        self.0.keys().any(|k| k.starts_with(prefix))
    }

    fn finish(self) -> Result<()> {
        match self.0.into_iter().next() {
            None => Ok(()),
            Some((k, e)) => Err(Error::config(format!("line {}: unknown key `{k}`", e.line))),
        }
    }
}

fn parse_complex(s: &str) -> Result<C64> {
    let bad = || Error::config(format!("bad complex number `{s}` (use re or re:im)"));
    match s.split_once(':') {
        Some((re, im)) => Ok(C64::new(
            re.trim().parse().map_err(|_| bad())?,
            im.trim().parse().map_err(|_| bad())?,
        )),
        None => Ok(C64::new(s.trim().parse().map_err(|_| bad())?, 0.0)),
    }
}

fn take_field(e: &mut Entries, prefix: &str) -> Result<Option<FieldSpec>> {
    let key = |k: &str| format!("{prefix}{k}");
    let Some(kind) = e.take_str(&key("kind")) else {
        if e.has_prefix(prefix) {
            return Err(Error::config(format!("`{prefix}*` keys need `{prefix}kind`")));
        }
        return Ok(None);
    };
    let field = match kind.as_str() {
        "fock" => FieldSpec::Fock(
            e.take(&key("n"))?
                .ok_or_else(|| Error::config(format!("`{prefix}n` is required for a Fock field")))?,
        ),
        "coherent" => {
            let alpha: Option<f64> = e.take(&key("alpha"))?;
            let mean: Option<f64> = e.take(&key("mean_photons"))?;
            let phase: f64 = e.take(&key("phase"))?.unwrap_or(0.0);
            let magnitude = match (alpha, mean) {
                (Some(a), None) => a,
                (None, Some(m)) if m >= 0.0 => m.sqrt(),
                (None, Some(m)) => return Err(Error::config(format!("mean_photons {m} < 0"))),
                _ => {
                    return Err(Error::config(format!(
                        "a coherent field needs exactly one of `{prefix}alpha`, `{prefix}mean_photons`"
                    )))
                }
            };
            FieldSpec::Coherent(C64::from_polar(magnitude, phase))
        }
        "amplitudes" => {
            let list = e
                .take_str(&key("amplitudes"))
                .ok_or_else(|| Error::config(format!("`{prefix}amplitudes` is required")))?;
            FieldSpec::Amplitudes(list.split(',').map(parse_complex).collect::<Result<_>>()?)
        }
        other => return Err(Error::config(format!("unknown field kind `{other}`"))),
    };
    Ok(Some(field))
}

fn render_float(x: f64) -> String {
    format!("{x:?}")
}

fn render_field(s: &mut String, prefix: &str, field: &FieldSpec) {
    match field {
        FieldSpec::Fock(n) => {
            let _ = writeln!(s, "{prefix}kind = fock\n{prefix}n = {n}");
        }
        FieldSpec::Coherent(alpha) => {
            let _ = writeln!(s, "{prefix}kind = coherent");
            if alpha.im == 0.0 && alpha.re >= 0.0 {
                let _ = writeln!(s, "{prefix}alpha = {}", render_float(alpha.re));
            } else {
                let _ = writeln!(s, "{prefix}alpha = {}", render_float(alpha.norm()));
                let _ = writeln!(s, "{prefix}phase = {}", render_float(alpha.arg()));
            }
        }
        FieldSpec::Amplitudes(amps) => {
            let list: Vec<String> = amps
                .iter()
                .map(|z| format!("{}:{}", render_float(z.re), render_float(z.im)))
                .collect();
            let _ = writeln!(s, "{prefix}kind = amplitudes\n{prefix}amplitudes = {}", list.join(", "));
        }
    }
}

impl RunConfig {
    /// Parses `text`; relative `pulse.file` paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut e = Entries::parse(text)?;
        let mut model = ModelConfig::default();
        if let Some(x) = e.take("gamma")? {
            model.gamma = x;
        }
        if let Some(x) = e.take("kappa")? {
            model.kappa = x;
        }
        if let Some(x) = e.take("detuning")? {
            model.detuning = x;
        }
        let mut pulse_file = None;
        let kind = e.take_str("pulse.kind").unwrap_or_else(|| "gaussian".into());
        model.pulse = match kind.as_str() {
            "gaussian" => {
                let PulseShape::Gaussian { center, width } = PulseShape::default() else {
                    unreachable!()
                };
                PulseShape::gaussian(
                    e.take("pulse.t0")?.unwrap_or(center),
                    e.take("pulse.width")?.unwrap_or(width),
                )?
            }
            "flat" => PulseShape::flat_top(
                e.take("pulse.start")?.ok_or_else(|| Error::config("`pulse.start` is required"))?,
                e.take("pulse.stop")?.ok_or_else(|| Error::config("`pulse.stop` is required"))?,
            )?,
            "sampled" => {
                let file = e
                    .take_str("pulse.file")
                    .ok_or_else(|| Error::config("`pulse.file` is required"))?;
                let path = match base_dir {
                    Some(dir) => dir.join(&file),
                    None => PathBuf::from(&file),
                };
                pulse_file = Some(file);
                PulseShape::load_sampled(&path)?
            }
            other => return Err(Error::config(format!("unknown pulse kind `{other}`"))),
        };
        if let Some(field) = take_field(&mut e, "field.")? {
            model.field = field;
        }
        if let Some(level) = e.take_str("atom_init") {
            model.atom_init = level.parse()?;
        }
        if let Some(x) = e.take("dt")? {
            model.dt = x;
        }
        if let Some(x) = e.take("t_final")? {
            model.t_final = x;
        }
        if let Some(x) = e.take("cutoff_epsilon")? {
            model.cutoff_epsilon = x;
        }
        let scheme = e.take_str("detection.scheme").unwrap_or_else(|| "counting".into());
        let phase: Option<f64> = e.take("detection.phase")?;
        model.detection = match scheme.as_str() {
            "counting" if phase.is_none() => Detection::Counting,
            "counting" => return Err(Error::config("`detection.phase` needs homodyne detection")),
            "homodyne" => Detection::Homodyne {
                phase: phase.unwrap_or(0.0),
            },
            other => return Err(Error::config(format!("unknown detection scheme `{other}`"))),
        };

        let hypotheses = take_hypotheses(&mut e)?;
        let cavity_dim = match e.take("cavity_dim")? {
            Some(d) => d,
            None => hypotheses
                .iter()
                .filter_map(|h| h.field.as_ref())
                .chain(std::iter::once(&model.field))
                .map(FieldSpec::default_cavity_dim)
                .max()
                .expect("base field"),
        };
        model.layout = HilbertLayout::new(cavity_dim)?;

        let truth = match e.take_str("truth").as_deref() {
            None | Some("sampled") => TruthPolicy::SampledFromPriors,
            Some(t) => match t.strip_prefix("fixed:") {
                Some(label) => TruthPolicy::Fixed(label.trim().to_string()),
                None => return Err(Error::config(format!("truth `{t}`: use `sampled` or `fixed:<label>`"))),
            },
        };
        let mut outputs = Outputs::default();
        if let Some(list) = e.take_str("outputs") {
            for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                match item {
                    "qe_curve" => {}
                    "posterior_samples" => outputs.posterior_samples = true,
                    "records" => outputs.records = true,
                    "state_series" => outputs.state_series = true,
                    other => return Err(Error::config(format!("unknown output `{other}`"))),
                }
            }
        }
        let cfg = Self {
            model,
            hypotheses,
            truth,
            n_trajectories: e.take("n_trajectories")?.unwrap_or(1),
            master_seed: e.take("master_seed")?.unwrap_or(0),
            outputs,
            output_stride: e.take("output_stride")?.unwrap_or(1),
            validate_every: e.take("validate_every")?.unwrap_or(0),
            representation: match e.take_str("representation") {
                Some(r) => r.parse()?,
                None => Representation::Auto,
            },
            pulse_file,
        };
        e.finish()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent())
    }

    /// Checks the whole run without simulating anything.
    pub fn validate(&self) -> Result<()> {
        self.ensemble_spec().validate()?;
        for h in &self.hypotheses {
            h.apply(&self.model)
                .validate()
                .map_err(|e| Error::config(format!("hypothesis `{}`: {e}", h.label)))?;
        }
        Ok(())
    }

    /// The fully resolved configuration in canonical form.
    pub fn render(&self) -> String {
        let m = &self.model;
        let mut s = String::new();
        let _ = writeln!(s, "gamma = {}", render_float(m.gamma));
        let _ = writeln!(s, "kappa = {}", render_float(m.kappa));
        let _ = writeln!(s, "detuning = {}", render_float(m.detuning));
        match &m.pulse {
            PulseShape::Gaussian { center, width } => {
                let _ = writeln!(
                    s,
                    "pulse.kind = gaussian\npulse.t0 = {}\npulse.width = {}",
                    render_float(*center),
                    render_float(*width)
                );
            }
            PulseShape::FlatTop { start, stop } => {
                let _ = writeln!(
                    s,
                    "pulse.kind = flat\npulse.start = {}\npulse.stop = {}",
                    render_float(*start),
                    render_float(*stop)
                );
            }
            PulseShape::Sampled { .. } => {
                let _ = writeln!(
                    s,
                    "pulse.kind = sampled\npulse.file = {}",
                    self.pulse_file.as_deref().unwrap_or("?")
                );
            }
        }
        render_field(&mut s, "field.", &m.field);
        let _ = writeln!(s, "atom_init = {}", m.atom_init);
        let _ = writeln!(s, "cavity_dim = {}", m.layout.cavity_dim());
        let _ = writeln!(s, "dt = {}", render_float(m.dt));
        let _ = writeln!(s, "t_final = {}", render_float(m.t_final));
        let _ = writeln!(s, "cutoff_epsilon = {}", render_float(m.cutoff_epsilon));
        match m.detection {
            Detection::Counting => s.push_str("detection.scheme = counting\n"),
            Detection::Homodyne { phase } => {
                let _ = writeln!(s, "detection.scheme = homodyne\ndetection.phase = {}", render_float(phase));
            }
        }
        for (i, h) in self.hypotheses.iter().enumerate() {
            let p = format!("hypotheses.{i}.");
            let _ = writeln!(s, "{p}label = {}", h.label);
            let _ = writeln!(s, "{p}atom_init = {}", h.atom_init);
            let _ = writeln!(s, "{p}prior = {}", render_float(h.prior));
            for (k, v) in [("gamma", h.gamma), ("kappa", h.kappa), ("detuning", h.detuning)] {
                if let Some(v) = v {
                    let _ = writeln!(s, "{p}{k} = {}", render_float(v));
                }
            }
            if let Some(f) = &h.field {
                render_field(&mut s, &format!("{p}field."), f);
            }
        }
        let _ = writeln!(s, "truth = {}", self.truth);
        let _ = writeln!(s, "n_trajectories = {}", self.n_trajectories);
        let _ = writeln!(s, "master_seed = {}", self.master_seed);
        let mut outs = vec!["qe_curve"];
        let o = self.outputs;
        for (on, name) in [
            (o.posterior_samples, "posterior_samples"),
            (o.records, "records"),
            (o.state_series, "state_series"),
        ] {
            if on {
                outs.push(name);
            }
        }
        let _ = writeln!(s, "outputs = {}", outs.join(", "));
        let _ = writeln!(s, "output_stride = {}", self.output_stride);
        let _ = writeln!(s, "validate_every = {}", self.validate_every);
        let _ = writeln!(s, "representation = {}", self.representation);
        s
    }

    /// First 16 hex digits of the SHA-256 of [`render`](Self::render).
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.render().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn ensemble_spec(&self) -> EnsembleSpec {
        EnsembleSpec {
            base: self.model.clone(),
            hypotheses: self.hypotheses.clone(),
            truth: self.truth.clone(),
            n_trajectories: self.n_trajectories,
            master_seed: self.master_seed,
            outputs: self.outputs,
            output_stride: self.output_stride,
            validate_every: self.validate_every,
            representation: self.representation,
            config_hash: Some(self.hash()),
        }
    }
}

fn take_hypotheses(e: &mut Entries) -> Result<Vec<Hypothesis>> {
    if !e.has_prefix("hypotheses.") {
        return Ok(qubit_hypotheses());
    }
    let mut out = Vec::new();
    for i in 0.. {
        let p = format!("hypotheses.{i}.");
        if !e.has_prefix(&p) {
            break;
        }
        let label = e
            .take_str(&format!("{p}label"))
            .unwrap_or_else(|| i.to_string());
        let atom: AtomLevel = match e.take_str(&format!("{p}atom_init")) {
            Some(a) => a.parse()?,
            None => return Err(Error::config(format!("`{p}atom_init` is required"))),
        };
        let prior = e
            .take(&format!("{p}prior"))?
            .ok_or_else(|| Error::config(format!("`{p}prior` is required")))?;
        let mut h = Hypothesis::new(label, atom, prior);
        h.gamma = e.take(&format!("{p}gamma"))?;
        h.kappa = e.take(&format!("{p}kappa"))?;
        h.detuning = e.take(&format!("{p}detuning"))?;
        h.field = take_field(e, &format!("{p}field."))?;
        out.push(h);
    }
    if e.has_prefix("hypotheses.") {
        return Err(Error::config("hypotheses must be numbered 0, 1, 2, ... without gaps"));
    }
    Ok(out)
}
