//! Measurement records and their text format.
//!
//! ```text
//! # qpulse measurement record
//! scheme counting
//! phase 0.0000000000000000e0
//! dt 1.0000000000000000e-3
//! t_final 1.0000000000000000e1
//! steps 10000
//! seed 42
//! stream 0
//! config_hash 1f0c9a7d2b3e4f56
//! data
//! 1734 1.7340000000000000e0
//! ...
//! ```
//!
//! Counting records list one click per line as `grid_index time`, where the
//! click closes the step ending at that grid point. Homodyne records list one
//! increment per step. Floats carry 17 significant digits so the file
//! round-trips exactly.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum RecordData {
    /// Grid indices (1..=steps) at which a click was registered.
    Counting { clicks: Vec<usize> },
    /// One signal increment per step.
    Homodyne { phase: f64, increments: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementRecord {
    pub dt: f64,
    pub steps: usize,
    pub seed: Option<u64>,
    pub stream: Option<u64>,
    pub config_hash: Option<String>,
    pub data: RecordData,
}

impl MeasurementRecord {
    pub fn counting(dt: f64, steps: usize, clicks: Vec<usize>) -> Result<Self> {
        let r = Self {
            dt,
            steps,
            seed: None,
            stream: None,
            config_hash: None,
            data: RecordData::Counting { clicks },
        };
        r.validate()?;
        Ok(r)
    }

    pub fn homodyne(dt: f64, phase: f64, increments: Vec<f64>) -> Result<Self> {
        let r = Self {
            dt,
            steps: increments.len(),
            seed: None,
            stream: None,
            config_hash: None,
            data: RecordData::Homodyne { phase, increments },
        };
        r.validate()?;
        Ok(r)
    }

    pub fn with_provenance(mut self, seed: u64, stream: u64, config_hash: Option<String>) -> Self {
        self.seed = Some(seed);
        self.stream = Some(stream);
        self.config_hash = config_hash;
        self
    }

    pub fn scheme(&self) -> &'static str {
        match self.data {
            RecordData::Counting { .. } => "counting",
            RecordData::Homodyne { .. } => "homodyne",
        }
    }

    pub fn t_final(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn click_count(&self) -> usize {
        match &self.data {
            RecordData::Counting { clicks } => clicks.len(),
            RecordData::Homodyne { .. } => 0,
        }
    }

    pub fn click_times(&self) -> Vec<f64> {
        match &self.data {
            RecordData::Counting { clicks } => {
                clicks.iter().map(|&k| k as f64 * self.dt).collect()
            }
            RecordData::Homodyne { .. } => Vec::new(),
        }
    }

    /// Per-step click flags (step k covers [k dt, (k+1) dt]).
    pub fn click_flags(&self) -> Option<Vec<bool>> {
        match &self.data {
            RecordData::Counting { clicks } => {
                let mut flags = vec![false; self.steps];
                for &k in clicks {
                    flags[k - 1] = true;
                }
                Some(flags)
            }
            RecordData::Homodyne { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Record(format!("invalid dt {}", self.dt)));
        }
        match &self.data {
            RecordData::Counting { clicks } => {
                let mut prev = 0;
                for &k in clicks {
                    if k <= prev || k > self.steps {
                        return Err(Error::Record(format!(
                            "click index {k} out of order or outside 1..={}",
                            self.steps
                        )));
                    }
                    prev = k;
                }
            }
            RecordData::Homodyne { phase, increments } => {
                if increments.len() != self.steps {
                    return Err(Error::Record(format!(
                        "{} increments for {} steps",
                        increments.len(),
                        self.steps
                    )));
                }
                if !phase.is_finite() || increments.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Record("non-finite homodyne data".into()));
                }
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("# qpulse measurement record\n");
        let _ = writeln!(s, "scheme {}", self.scheme());
        if let RecordData::Homodyne { phase, .. } = &self.data {
            let _ = writeln!(s, "phase {phase:.16e}");
        }
        let _ = writeln!(s, "dt {:.16e}", self.dt);
        let _ = writeln!(s, "t_final {:.16e}", self.t_final());
        let _ = writeln!(s, "steps {}", self.steps);
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "seed {seed}");
        }
        if let Some(stream) = self.stream {
            let _ = writeln!(s, "stream {stream}");
        }
        if let Some(h) = &self.config_hash {
            let _ = writeln!(s, "config_hash {h}");
        }
        s.push_str("data\n");
        match &self.data {
            RecordData::Counting { clicks } => {
                for &k in clicks {
                    let _ = writeln!(s, "{k} {:.16e}", k as f64 * self.dt);
                }
            }
            RecordData::Homodyne { increments, .. } => {
                for x in increments {
                    let _ = writeln!(s, "{x:.16e}");
                }
            }
        }
        s
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::read_from(text.as_bytes())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut scheme = None;
        let mut phase = None;
        let mut dt = None;
        let mut steps = None;
        let mut seed = None;
        let mut stream = None;
        let mut config_hash = None;
        let mut lines = r.lines();
        let mut in_data = false;
        for line in lines.by_ref() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line == "data" {
                in_data = true;
                break;
            }
            let (key, value) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| Error::Record(format!("header line `{line}` has no value")))?;
            let value = value.trim();
            match key {
                "scheme" => scheme = Some(value.to_string()),
                "phase" => phase = Some(parse_f64(value)?),
                "dt" => dt = Some(parse_f64(value)?),
                "t_final" => {
                    parse_f64(value)?;
                }
                "steps" => steps = Some(parse_usize(value)?),
                "seed" => seed = Some(parse_u64(value)?),
                "stream" => stream = Some(parse_u64(value)?),
                "config_hash" => config_hash = Some(value.to_string()),
                other => return Err(Error::Record(format!("unknown header key `{other}`"))),
            }
        }
        if !in_data {
            return Err(Error::Record("missing `data` line".into()));
        }
        let dt = dt.ok_or_else(|| Error::Record("missing dt".into()))?;
        let steps = steps.ok_or_else(|| Error::Record("missing steps".into()))?;
        let body: Vec<String> = lines
            .map(|l| l.map(|s| s.trim().to_string()))
            .collect::<std::io::Result<_>>()?;
        let body = body.into_iter().filter(|l| !l.is_empty() && !l.starts_with('#'));
        let data = match scheme.as_deref() {
            Some("counting") => {
                let mut clicks = Vec::new();
                for l in body {
                    let idx = l.split_whitespace().next().unwrap_or_default();
                    clicks.push(parse_usize(idx)?);
                }
                RecordData::Counting { clicks }
            }
            Some("homodyne") => RecordData::Homodyne {
                phase: phase.unwrap_or(0.0),
                increments: body.map(|l| parse_f64(&l)).collect::<Result<_>>()?,
            },
            Some(other) => return Err(Error::Record(format!("unknown scheme `{other}`"))),
            None => return Err(Error::Record("missing scheme".into())),
        };
        let rec = Self {
            dt,
            steps,
            seed,
            stream,
            config_hash,
            data,
        };
        rec.validate()?;
        Ok(rec)
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Record(format!("bad number `{s}`")))
}

fn parse_u64(s: &str) -> Result<u64> {
    s.parse().map_err(|_| Error::Record(format!("bad integer `{s}`")))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse().map_err(|_| Error::Record(format!("bad integer `{s}`")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counting_text_layout() {
        let r = MeasurementRecord::counting(0.5, 4, vec![1, 3])
            .unwrap()
            .with_provenance(9, 2, Some("abc".into()));
        let text = r.to_text();
        assert!(text.contains("scheme counting\n"));
        assert!(text.contains("seed 9\n"));
        assert!(text.contains("1 5.0000000000000000e-1\n"));
        assert_eq!(MeasurementRecord::parse(&text).unwrap(), r);
        assert_eq!(r.click_flags().unwrap(), vec![true, false, true, false]);
        assert_eq!(r.click_times(), vec![0.5, 1.5]);
    }

    #[test]
    fn rejects_malformed() {
        assert!(MeasurementRecord::counting(0.1, 3, vec![2, 2]).is_err());
        assert!(MeasurementRecord::counting(0.1, 3, vec![0]).is_err());
        assert!(MeasurementRecord::counting(0.1, 3, vec![4]).is_err());
        assert!(MeasurementRecord::parse("scheme counting\ndt 0.1\nsteps 2\n").is_err());
        assert!(MeasurementRecord::parse("scheme homodyne\ndt 0.1\nsteps 2\ndata\n0.1\n").is_err());
        assert!(MeasurementRecord::parse("scheme x\ndt 0.1\nsteps 2\ndata\n").is_err());
    }

    proptest! {
        #[test]
        fn homodyne_roundtrip_is_exact(
            xs in proptest::collection::vec(-1e3f64..1e3, 0..50),
            phase in -7.0f64..7.0,
            dt in 1e-6f64..1.0,
            seed in any::<u64>(),
        ) {
            let r = MeasurementRecord::homodyne(dt, phase, xs)
                .unwrap()
                .with_provenance(seed, 5, Some("00ff".into()));
            let back = MeasurementRecord::parse(&r.to_text()).unwrap();
            prop_assert_eq!(back, r);
        }

        #[test]
        fn counting_roundtrip_is_exact(
            set in proptest::collection::btree_set(1usize..500, 0..40),
            dt in 1e-6f64..1.0,
        ) {
            let r = MeasurementRecord::counting(dt, 500, set.into_iter().collect()).unwrap();
            let back = MeasurementRecord::parse(&r.to_text()).unwrap();
            prop_assert_eq!(back, r);
        }
    }
}
