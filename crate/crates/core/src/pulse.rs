//! Pulse envelopes and the virtual-cavity coupling g(t) = u*(t)/√(1 − ∫₀ᵗ|u|²).
//!
//! All integrals use the trapezoid rule on the half-step grid (spacing dt/2)
//! that the Runge–Kutta stages are evaluated on, so the leaked norm is
//! consistent with the stepped dynamics.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::hilbert::{C64, ZERO};

pub const DEFAULT_CUTOFF_EPSILON: f64 = 1e-8;
pub const DEFAULT_GAUSSIAN_CENTER: f64 = 2.2;
pub const DEFAULT_GAUSSIAN_WIDTH: f64 = 0.65;

/// Gaussian tails beyond this many widths are treated as outside the support.
const GAUSSIAN_SUPPORT_WIDTHS: f64 = 6.0;

/// Loaded sample files whose norm deviates more than this get a warning.
const SAMPLED_NORM_WARNING: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub enum PulseShape {
    /// u(t) = (2πτ²)^(−1/4) exp(−(t − t₀)²/(4τ²)); |u|² has standard deviation τ.
    Gaussian { center: f64, width: f64 },
    /// Constant amplitude on `[start, stop]`.
    FlatTop { start: f64, stop: f64 },
    /// Linear interpolation of complex samples; zero outside their range.
    Sampled { times: Vec<f64>, amplitudes: Vec<C64> },
}

impl Default for PulseShape {
    fn default() -> Self {
        PulseShape::Gaussian {
            center: DEFAULT_GAUSSIAN_CENTER,
            width: DEFAULT_GAUSSIAN_WIDTH,
        }
    }
}

impl PulseShape {
    pub fn gaussian(center: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) || !center.is_finite() {
            return Err(Error::config(format!(
                "gaussian pulse needs width > 0 and finite center (got t0={center}, width={width})"
            )));
        }
        Ok(PulseShape::Gaussian { center, width })
    }

    pub fn flat_top(start: f64, stop: f64) -> Result<Self> {
        if !(start >= 0.0 && stop > start) {
            return Err(Error::config(format!(
                "flat-top pulse needs 0 <= start < stop (got [{start}, {stop}])"
            )));
        }
        Ok(PulseShape::FlatTop { start, stop })
    }

    /// Samples must be strictly increasing in time; amplitudes are rescaled
    /// so the trapezoid norm of |u|² over the samples is 1.
    pub fn sampled(times: Vec<f64>, amplitudes: Vec<C64>) -> Result<Self> {
        if times.len() != amplitudes.len() || times.len() < 2 {
            return Err(Error::config("sampled pulse needs at least two (time, amplitude) rows"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || times[0] < 0.0 {
            return Err(Error::config("sampled pulse times must be >= 0 and strictly increasing"));
        }
        let norm = trapezoid_nonuniform(&times, &amplitudes);
        if !(norm > 0.0) {
            return Err(Error::config("sampled pulse has zero norm"));
        }
        if (norm - 1.0).abs() > SAMPLED_NORM_WARNING {
            log::warn!("sampled pulse norm is {norm}, renormalizing to 1");
        }
        let scale = 1.0 / norm.sqrt();
        Ok(PulseShape::Sampled {
            times,
            amplitudes: amplitudes.into_iter().map(|z| z * scale).collect(),
        })
    }

    /// Reads whitespace- or comma-separated `time real [imag]` rows; `#` starts a comment.
    pub fn load_sampled(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut times = Vec::new();
        let mut amps = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .collect();
            if !(2..=3).contains(&cols.len()) {
                return Err(Error::config(format!(
                    "{}:{}: expected 2 or 3 columns",
                    path.display(),
                    lineno + 1
                )));
            }
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|_| {
                    Error::config(format!("{}:{}: bad number `{s}`", path.display(), lineno + 1))
                })
            };
            times.push(parse(cols[0])?);
            let re = parse(cols[1])?;
            let im = if cols.len() == 3 { parse(cols[2])? } else { 0.0 };
            amps.push(C64::new(re, im));
        }
        Self::sampled(times, amps)
    }

    /// Envelope before normalization on the simulation grid.
    pub fn raw_amplitude(&self, t: f64) -> C64 {
        match self {
            PulseShape::Gaussian { center, width } => {
                let prefactor = (2.0 * PI * width * width).powf(-0.25);
                let x = t - center;
                C64::new(prefactor * (-(x * x) / (4.0 * width * width)).exp(), 0.0)
            }
            PulseShape::FlatTop { start, stop } => {
                if t >= *start && t <= *stop {
                    C64::new(1.0 / (stop - start).sqrt(), 0.0)
                } else {
                    ZERO
                }
            }
            PulseShape::Sampled { times, amplitudes } => {
                if t < times[0] || t > times[times.len() - 1] {
                    return ZERO;
                }
                let k = times.partition_point(|&s| s <= t);
                if k == times.len() {
                    return amplitudes[k - 1];
                }
                let (t0, t1) = (times[k - 1], times[k]);
                let w = (t - t0) / (t1 - t0);
                amplitudes[k - 1] * (1.0 - w) + amplitudes[k] * w
            }
        }
    }

    /// Time after which the pulse carries negligible norm.
    pub fn support_end(&self) -> f64 {
        match self {
            PulseShape::Gaussian { center, width } => center + GAUSSIAN_SUPPORT_WIDTHS * width,
            PulseShape::FlatTop { stop, .. } => *stop,
            PulseShape::Sampled { times, .. } => times[times.len() - 1],
        }
    }
}

impl fmt::Display for PulseShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PulseShape::Gaussian { center, width } => write!(f, "gaussian(t0={center}, width={width})"),
            PulseShape::FlatTop { start, stop } => write!(f, "flat({start}, {stop})"),
            PulseShape::Sampled { times, .. } => write!(f, "sampled({} points)", times.len()),
        }
    }
}

fn trapezoid_nonuniform(times: &[f64], amps: &[C64]) -> f64 {
    times
        .windows(2)
        .zip(amps.windows(2))
        .map(|(t, a)| 0.5 * (t[1] - t[0]) * (a[0].norm_sqr() + a[1].norm_sqr()))
        .sum()
}

/// Pulse normalized on the simulation window, with the coupling g(t)
/// tabulated on the half-step grid.
#[derive(Clone, Debug)]
pub struct CouplingSchedule {
    shape: PulseShape,
    /// amplitude rescaling that makes the window norm exactly 1
    scale: f64,
    half_step: f64,
    t_final: f64,
    cutoff_epsilon: f64,
    envelope: Vec<C64>,
    /// ∫₀^{t_k} |u|² at each half-grid point
    cumulative: Vec<f64>,
    coupling: Vec<C64>,
}

impl CouplingSchedule {
    pub fn new(shape: PulseShape, dt: f64, t_final: f64, cutoff_epsilon: f64) -> Result<Self> {
        if !(dt > 0.0) || !(t_final > 0.0) {
            return Err(Error::config("dt and t_final must be positive"));
        }
        if !(cutoff_epsilon > 0.0) {
            return Err(Error::config("cutoff_epsilon must be positive"));
        }
        let steps = (t_final / dt).round() as usize;
        let half_step = dt / 2.0;
        let n = 2 * steps + 1;
        let raw: Vec<C64> = (0..n).map(|k| shape.raw_amplitude(k as f64 * half_step)).collect();
        let mut cumulative = Vec::with_capacity(n);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for k in 1..n {
            acc += 0.5 * half_step * (raw[k - 1].norm_sqr() + raw[k].norm_sqr());
            cumulative.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::config(format!(
                "pulse {shape} has no weight on [0, {t_final}]"
            )));
        }
        let norm = acc;
        let scale = 1.0 / norm.sqrt();
        let envelope: Vec<C64> = raw.iter().map(|z| z * scale).collect();
        cumulative.iter_mut().for_each(|c| *c /= norm);

        let mut schedule = Self {
            shape,
            scale,
            half_step,
            t_final,
            cutoff_epsilon,
            envelope,
            cumulative,
            coupling: Vec::new(),
        };
        schedule.coupling = (0..n)
            .map(|k| schedule.coupling_from(schedule.envelope[k], 1.0 - schedule.cumulative[k]))
            .collect();
        Ok(schedule)
    }

    pub fn shape(&self) -> &PulseShape {
        &self.shape
    }

    pub fn dt(&self) -> f64 {
        2.0 * self.half_step
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn cutoff_epsilon(&self) -> f64 {
        self.cutoff_epsilon
    }

    fn grid_index(&self, t: f64) -> Option<usize> {
        let x = t / self.half_step;
        let k = x.round();
        if (x - k).abs() < 1e-6 && k >= 0.0 && (k as usize) < self.envelope.len() {
            Some(k as usize)
        } else {
            None
        }
    }

    /// Normalized envelope u(t).
    pub fn envelope(&self, t: f64) -> C64 {
        match self.grid_index(t) {
            Some(k) => self.envelope[k],
            None => self.shape.raw_amplitude(t) * self.scale,
        }
    }

    /// 1 − ∫₀ᵗ|u|², clamped to [0, 1].
    pub fn remaining_norm(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        let leaked = match self.grid_index(t) {
            Some(k) => self.cumulative[k],
            None => {
                let last = self.envelope.len() - 1;
                let k = ((t / self.half_step).floor() as usize).min(last);
                if k == last {
                    self.cumulative[last]
                } else {
                    let tk = k as f64 * self.half_step;
                    let fk = self.envelope[k].norm_sqr();
                    let ft = self.envelope(t).norm_sqr();
                    self.cumulative[k] + 0.5 * (t - tk) * (fk + ft)
                }
            }
        };
        (1.0 - leaked).clamp(0.0, 1.0)
    }

    fn coupling_from(&self, u: C64, remaining: f64) -> C64 {
        let remaining = remaining.clamp(0.0, 1.0);
        if remaining <= self.cutoff_epsilon {
            ZERO
        } else {
            u.conj() / remaining.sqrt()
        }
    }

    /// g(t); exactly zero once the remaining norm drops to the cutoff.
    pub fn coupling(&self, t: f64) -> C64 {
        match self.grid_index(t) {
            Some(k) => self.coupling[k],
            None => self.coupling_from(self.envelope(t), self.remaining_norm(t)),
        }
    }

    /// First half-grid time at which the coupling is switched off.
    pub fn cutoff_time(&self) -> Option<f64> {
        self.cumulative
            .iter()
            .position(|c| 1.0 - c <= self.cutoff_epsilon)
            .map(|k| k as f64 * self.half_step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(t_end: f64, dt: f64) -> CouplingSchedule {
        CouplingSchedule::new(
            PulseShape::flat_top(0.0, t_end).unwrap(),
            dt,
            t_end,
            DEFAULT_CUTOFF_EPSILON,
        )
        .unwrap()
    }

    #[test]
    fn remaining_norm_examples() {
        let s = flat(4.0, 0.01);
        assert_eq!(s.remaining_norm(0.0), 1.0);
        assert!((s.remaining_norm(2.0) - 0.5).abs() < 1e-12);
        assert!(s.remaining_norm(100.0) <= 1e-8);

        let g = CouplingSchedule::new(PulseShape::default(), 1e-3, 10.0, 1e-8).unwrap();
        assert!(g.remaining_norm(10.0) <= 1e-8);
        // the window opens 2.2/0.65 widths before the centre, so the half
        // mass left is renormalized by 1 − Φ(−2.2/0.65)
        let lower_tail = 3.563_902_690_947_808_5e-4;
        assert!((g.remaining_norm(2.2) - 0.5 / (1.0 - lower_tail)).abs() < 1e-8);
    }

    #[test]
    fn flat_top_coupling_matches_closed_form() {
        // ∫₀ᵗ 1/T dt' = t/T, so g = (1/√T)/√(1 − t/T).
        let t_end = 4.0;
        let s = flat(t_end, 0.01);
        for &t in &[0.0, 0.5, 1.0, 2.0, 3.0, 3.9] {
            let expected = (1.0 / t_end.sqrt()) / (1.0 - t / t_end).sqrt();
            let got = s.coupling(t);
            assert!((got.re - expected).abs() < 1e-9 * expected, "t={t}: {got} vs {expected}");
            assert_eq!(got.im, 0.0);
        }
        // off-grid points go through the partial trapezoid
        let t = 1.2345;
        let expected = (1.0 / t_end.sqrt()) / (1.0 - t / t_end).sqrt();
        assert!((s.coupling(t).re - expected).abs() < 1e-9);
    }

    #[test]
    fn coupling_at_zero_is_conjugate_envelope() {
        let s = CouplingSchedule::new(
            PulseShape::sampled(
                vec![0.0, 1.0, 2.0],
                vec![C64::new(0.3, 0.4), C64::new(0.5, -0.2), C64::new(0.1, 0.0)],
            )
            .unwrap(),
            0.01,
            2.0,
            1e-8,
        )
        .unwrap();
        assert_eq!(s.coupling(0.0), s.envelope(0.0).conj());
    }

    #[test]
    fn coupling_cut_off_after_pulse() {
        let s = CouplingSchedule::new(PulseShape::default(), 1e-3, 10.0, 1e-8).unwrap();
        let tc = s.cutoff_time().expect("gaussian is cut before the window ends");
        assert!(tc > 4.0 && tc < 6.0, "cutoff at {tc}");
        assert_eq!(s.coupling(tc), ZERO);
        assert_eq!(s.coupling(tc + 0.5), ZERO);
        assert_eq!(s.coupling(9.9999), ZERO);
        assert_ne!(s.coupling(tc - 0.01), ZERO);
    }

    #[test]
    fn coupling_identity_holds_before_cutoff() {
        let s = CouplingSchedule::new(PulseShape::default(), 1e-3, 10.0, 1e-8).unwrap();
        for k in 0..4000 {
            let t = k as f64 * 1.3e-3;
            let g = s.coupling(t);
            if g == ZERO {
                continue;
            }
            let lhs = g.norm_sqr() * s.remaining_norm(t);
            let rhs = s.envelope(t).norm_sqr();
            assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300) + 1e-15, "t={t}");
        }
    }

    #[test]
    fn gaussian_is_normalized_on_window() {
        let s = CouplingSchedule::new(PulseShape::default(), 1e-3, 10.0, 1e-8).unwrap();
        // |u|² is a normal density, so the raw trapezoid norm misses only the
        // tail before t = 0.
        let lower_tail = 3.563_902_690_947_808_5e-4;
        assert!((s.scale * s.scale * (1.0 - lower_tail) - 1.0).abs() < 1e-8, "{}", s.scale);
        assert!(s.remaining_norm(10.0) < 1e-8);
    }

    #[test]
    fn sampled_pulse_loads_and_renormalizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pulse.txt");
        let mut text = String::from("# time re im\n");
        for k in 0..=100 {
            let t = k as f64 * 0.05;
            text.push_str(&format!("{t} {} 0\n", 2.0 * (-(t - 2.5) * (t - 2.5)).exp()));
        }
        std::fs::write(&path, text).unwrap();
        let shape = PulseShape::load_sampled(&path).unwrap();
        let PulseShape::Sampled { times, amplitudes } = &shape else {
            panic!("not sampled")
        };
        assert!((trapezoid_nonuniform(times, amplitudes) - 1.0).abs() < 1e-12);
        assert!(PulseShape::sampled(vec![0.0], vec![ZERO]).is_err());
        assert!(PulseShape::sampled(vec![1.0, 0.5], vec![ZERO, ZERO]).is_err());
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(PulseShape::gaussian(1.0, 0.0).is_err());
        assert!(PulseShape::flat_top(2.0, 1.0).is_err());
        assert!(CouplingSchedule::new(PulseShape::default(), 0.0, 10.0, 1e-8).is_err());
        assert!(CouplingSchedule::new(PulseShape::default(), 1e-3, 10.0, 0.0).is_err());
    }
}
