//! Analytic-spectrum and isospectral-pair checks for the FEM pipeline.

use std::f64::consts::PI;

use super::isospectral::gww_pair;
use super::{FemSettings, Result, DEFAULT_SMOOTHING_PASSES};
use crate::geometry::Polygon;

/// Axis-aligned `w × h` rectangle with a corner at the origin.
pub fn rectangle(w: f64, h: f64) -> Polygon {
    Polygon::from_xy(&[(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)]).expect("positive sides")
}

/// First `n` Dirichlet eigenvalues π²(m²/w² + k²/h²), m, k ≥ 1, ascending.
pub fn rectangle_eigenvalues(w: f64, h: f64, n: usize) -> Vec<f64> {
    let bound = 2 * n + 2;
    let mut all = Vec::with_capacity(bound * bound);
    for m in 1..=bound {
        for k in 1..=bound {
            let (m, k) = (m as f64, k as f64);
            all.push(PI * PI * (m * m / (w * w) + k * k / (h * h)));
        }
    }
    all.sort_by(f64::total_cmp);
    all.truncate(n);
    all
}

/// Relative-error tolerance by mesh size for the validation suite.
///
/// | h          | tolerance |
/// |------------|-----------|
/// | ≤ 0.05     | 0.5 %     |
/// | ≤ 0.1      | 2 %       |
/// | ≤ 0.2      | 6 %       |
/// | larger     | 20 %      |
///
/// The rows assume Richardson extrapolation is on; without it the
/// tolerance of the next coarser row applies.
pub fn tolerance_for(h: f64, extrapolate: bool) -> f64 {
    const TABLE: [(f64, f64); 3] = [(0.05, 0.005), (0.1, 0.02), (0.2, 0.06)];
    let mut row = TABLE
        .iter()
        .position(|&(hmax, _)| h <= hmax + 1e-12)
        .unwrap_or(3);
    if !extrapolate {
        row += 1;
    }
    TABLE.get(row).map_or(0.2, |r| r.1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationCheck {
    pub name: String,
    pub measured: f64,
    pub expected: f64,
    pub rel_err: f64,
    pub tolerance: f64,
}

impl ValidationCheck {
    fn new(name: String, measured: f64, expected: f64, tolerance: f64) -> Self {
        let rel_err = (measured - expected).abs() / expected.abs();
        Self {
            name,
            measured,
            expected,
            rel_err,
            tolerance,
        }
    }

    pub fn passed(&self) -> bool {
        self.rel_err < self.tolerance
    }
}

fn settings(h: f64, extrapolate: bool) -> FemSettings {
    FemSettings {
        h,
        extrapolate,
        smoothing_passes: DEFAULT_SMOOTHING_PASSES,
    }
}

/// Rectangle eigenvalues against the analytic spectrum.
pub fn rectangle_checks(
    w: f64,
    hgt: f64,
    n: usize,
    h: f64,
    extrapolate: bool,
) -> Result<Vec<ValidationCheck>> {
    let tol = tolerance_for(h, extrapolate);
    let exact = rectangle_eigenvalues(w, hgt, n);
    let computed = settings(h, extrapolate).spectrum(&rectangle(w, hgt), n)?;
    Ok(computed
        .values()
        .iter()
        .zip(&exact)
        .enumerate()
        .map(|(i, (&m, &e))| {
            ValidationCheck::new(format!("rect{w}x{hgt} lambda_{}", i + 1), m, e, tol)
        })
        .collect())
}

/// Pairwise agreement of the first `n` eigenvalues of the two GWW drums.
pub fn gww_checks(n: usize, h: f64, extrapolate: bool) -> Result<Vec<ValidationCheck>> {
    let tol = tolerance_for(h, extrapolate);
    let (a, b) = gww_pair();
    let s = settings(h, extrapolate);
    let sa = s.spectrum(&a, n)?;
    let sb = s.spectrum(&b, n)?;
    Ok(sa
        .values()
        .iter()
        .zip(sb.values())
        .enumerate()
        .map(|(i, (&x, &y))| ValidationCheck::new(format!("gww lambda_{}", i + 1), x, y, tol))
        .collect())
}

/// The full suite run by `fem-validate`.
pub fn run_suite(h: f64, extrapolate: bool) -> Result<Vec<ValidationCheck>> {
    let mut out = rectangle_checks(1.0, 1.0, 10, h, extrapolate)?;
    out.extend(rectangle_checks(2.0, 1.0, 1, h, extrapolate)?);
    out.extend(gww_checks(20, h, extrapolate)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_square_spectrum() {
        let s = rectangle_eigenvalues(1.0, 1.0, 10);
        let expect = [2.0, 5.0, 5.0, 8.0, 10.0, 10.0, 13.0, 13.0, 17.0, 17.0];
        for (a, e) in s.iter().zip(expect) {
            assert!((a / (PI * PI) - e).abs() < 1e-12);
        }
        let r = rectangle_eigenvalues(2.0, 1.0, 1);
        assert!((r[0] - 1.25 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn tolerance_table() {
        assert_eq!(tolerance_for(0.05, true), 0.005);
        assert_eq!(tolerance_for(0.05, false), 0.02);
        assert_eq!(tolerance_for(0.2, true), 0.06);
        assert_eq!(tolerance_for(0.5, true), 0.2);
        assert_eq!(tolerance_for(0.2, false), 0.2);
    }
}
