use std::fmt::Write as _;

use super::{FemError, Result};

/// Ascending, strictly positive Dirichlet eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum(Vec<f64>);

impl Spectrum {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(FemError::InvalidSpectrum("empty".into()));
        }
        for (i, &v) in values.iter().enumerate() {
            if !(v.is_finite() && v > 0.0) {
                return Err(FemError::InvalidSpectrum(format!(
                    "eigenvalue {i} = {v} is not a positive finite number"
                )));
            }
            if i > 0 && v < values[i - 1] {
                return Err(FemError::InvalidSpectrum(format!(
                    "eigenvalue {i} = {v} is below its predecessor {}",
                    values[i - 1]
                )));
            }
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// CSV with header `index,eigenvalue`; indices start at 1.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,eigenvalue\n");
        for (i, v) in self.0.iter().enumerate() {
            let _ = writeln!(s, "{},{:.16e}", i + 1, v);
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "index,eigenvalue" => {}
            _ => {
                return Err(FemError::Parse {
                    line: 1,
                    reason: "expected header `index,eigenvalue`".into(),
                })
            }
        }
        let mut values = Vec::new();
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = |reason: String| FemError::Parse {
                line: i + 1,
                reason,
            };
            let (idx, val) = line
                .split_once(',')
                .ok_or_else(|| bad("expected two fields".into()))?;
            let idx: usize = idx
                .trim()
                .parse()
                .map_err(|e| bad(format!("bad index: {e}")))?;
            if idx != values.len() + 1 {
                return Err(bad(format!("index {idx} out of sequence")));
            }
            let v: f64 = val
                .trim()
                .parse()
                .map_err(|e| bad(format!("bad eigenvalue: {e}")))?;
            values.push(v);
        }
        Spectrum::new(values)
    }
}
