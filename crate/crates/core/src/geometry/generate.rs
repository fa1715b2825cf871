use std::f64::consts::PI;

use rand::Rng;

use super::{GeometryError, Point, Polygon, Result};

/// Draw budget before [`generate_pentagon`] gives up.
pub const MAX_REJECTIONS: u64 = 1_000_000;

const SIDES: usize = 5;

/// Sampling bounds for random star-shaped pentagons.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    pub radius_min: f64,
    pub radius_max: f64,
    /// Bounds on the polar angle between neighbouring radii.
    pub gap_min: f64,
    pub gap_max: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            radius_min: 0.5,
            radius_max: 2.0,
            gap_min: PI / 10.0,
            gap_max: PI,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: &str| {
            Err(GeometryError::InvalidConfig {
                field,
                reason: reason.to_string(),
            })
        };
        if !(self.radius_min.is_finite() && self.radius_min > 0.0) {
            return bad("radius_min", "must be positive");
        }
        if !(self.radius_max.is_finite() && self.radius_max >= self.radius_min) {
            return bad("radius_max", "must be finite and >= radius_min");
        }
        if !(self.gap_min.is_finite() && self.gap_min > 0.0) {
            return bad("gap_min", "must be positive");
        }
        if !(self.gap_max.is_finite() && self.gap_max >= self.gap_min) {
            return bad("gap_max", "must be finite and >= gap_min");
        }
        // A gap wider than π breaks the star-shaped construction.
        if self.gap_max > PI {
            return bad("gap_max", "must not exceed π");
        }
        let full = 2.0 * PI;
        if SIDES as f64 * self.gap_min > full + 1e-12 {
            return bad("gap_min", "five gaps at the minimum exceed a full turn");
        }
        if SIDES as f64 * self.gap_max < full - 1e-12 {
            return bad(
                "gap_max",
                "five gaps at the maximum cannot close a full turn",
            );
        }
        Ok(())
    }
}

/// Random star-shaped pentagon.
///
/// Five gaps are drawn uniformly from `[gap_min, gap_max]` and rescaled to sum
/// to 2π; draws whose rescaled gaps leave the range are rejected. Radii are
/// uniform in `[radius_min, radius_max]` and the whole figure gets a uniform
/// random phase.
pub fn generate_pentagon<R: Rng + ?Sized>(cfg: &GenConfig, rng: &mut R) -> Result<Polygon> {
    cfg.validate()?;
    for _ in 0..MAX_REJECTIONS {
        let mut gaps = [0.0; SIDES];
        for g in &mut gaps {
            *g = rng.random_range(cfg.gap_min..=cfg.gap_max);
        }
        let total: f64 = gaps.iter().sum();
        for g in &mut gaps {
            *g *= 2.0 * PI / total;
        }
        let mut radii = [0.0; SIDES];
        for r in &mut radii {
            *r = rng.random_range(cfg.radius_min..=cfg.radius_max);
        }
        let phase = rng.random_range(0.0..2.0 * PI);
        if gaps.iter().any(|&g| g < cfg.gap_min || g > cfg.gap_max) {
            continue;
        }
        let mut theta = phase;
        let mut verts = Vec::with_capacity(SIDES);
        for k in 0..SIDES {
            verts.push(Point::new(radii[k] * theta.cos(), radii[k] * theta.sin()));
            theta += gaps[k];
        }
        if let Ok(p) = Polygon::new(verts) {
            return Ok(p);
        }
    }
    Err(GeometryError::RejectionLimit(MAX_REJECTIONS))
}

/// Tolerance under which two inner angles count as tied.
const ANGLE_TIE: f64 = 1e-9;

/// Fixes translation and rotation: centroid to the origin, smallest inner
/// angle onto the positive x semi-axis. The output is re-indexed so that this
/// vertex comes first. Ties go to the lowest input index.
pub fn canonicalize(p: &Polygon) -> Result<Polygon> {
    let c = p.centroid()?;
    let angles = p.inner_angles();
    let mut best = 0;
    for (i, &a) in angles.iter().enumerate().skip(1) {
        if a < angles[best] - ANGLE_TIE {
            best = i;
        }
    }
    let shifted: Vec<Point> = p.vertices().iter().map(|v| v.sub(c)).collect();
    let pivot = shifted[best];
    let r = pivot.norm();
    if r < 1e-12 {
        return Err(GeometryError::Degenerate);
    }
    let phi = pivot.y.atan2(pivot.x);
    let n = shifted.len();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let i = (best + k) % n;
        if i == best {
            out.push(Point::new(r, 0.0));
        } else {
            out.push(shifted[i].rotate(-phi));
        }
    }
    Polygon::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn polar_gaps(p: &Polygon) -> Vec<f64> {
        // Generated polygons are star-shaped about the origin.
        let th: Vec<f64> = p.vertices().iter().map(|v| v.y.atan2(v.x)).collect();
        (0..th.len())
            .map(|i| (th[(i + 1) % th.len()] - th[i]).rem_euclid(2.0 * PI))
            .collect()
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = GenConfig::default();
        let a = generate_pentagon(&cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = generate_pentagon(&cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generated_radii_and_gaps_in_range() {
        let cfg = GenConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let p = generate_pentagon(&cfg, &mut rng).unwrap();
            assert_eq!(p.len(), 5);
            for v in p.vertices() {
                let r = v.norm();
                assert!((0.5 - 1e-12..=2.0 + 1e-12).contains(&r), "radius {r}");
            }
            let gaps = polar_gaps(&p);
            let sum: f64 = gaps.iter().sum();
            assert!((sum - 2.0 * PI).abs() < 1e-12, "gap sum {sum}");
            for g in gaps {
                assert!(g >= PI / 10.0 - 1e-12 && g <= PI + 1e-12, "gap {g}");
            }
        }
    }

    #[test]
    fn invalid_configs_name_the_field() {
        let cfg = GenConfig {
            gap_min: 1.5,
            ..GenConfig::default()
        };
        match cfg.validate().unwrap_err() {
            GeometryError::InvalidConfig { field, .. } => assert_eq!(field, "gap_min"),
            e => panic!("unexpected {e}"),
        }
        let cfg = GenConfig {
            radius_min: 0.0,
            ..GenConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn canonical_form_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let p = generate_pentagon(&GenConfig::default(), &mut rng).unwrap();
            let c = canonicalize(&p).unwrap();
            let g = c.centroid().unwrap();
            assert!(g.x.abs() < 1e-12 && g.y.abs() < 1e-12);
            let first = c.vertices()[0];
            assert_eq!(first.y, 0.0);
            assert!(first.x > 0.0);
            let angles = c.inner_angles();
            assert!(angles.iter().all(|&a| a >= angles[0] - 1e-9));
            assert!((c.area() - p.area()).abs() < 1e-12);
            assert!((c.perimeter() - p.perimeter()).abs() < 1e-12);
            let again = canonicalize(&c).unwrap();
            for (u, v) in again.vertices().iter().zip(c.vertices()) {
                assert!(u.sub(*v).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn canonical_form_ignores_rigid_motions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let p = generate_pentagon(&GenConfig::default(), &mut rng).unwrap();
            let theta = rng.random_range(0.0..2.0 * PI);
            let (dx, dy) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let moved = p.rotated(theta).unwrap().translated(dx, dy).unwrap();
            let a = canonicalize(&p).unwrap();
            let b = canonicalize(&moved).unwrap();
            for (u, v) in a.vertices().iter().zip(b.vertices()) {
                assert!(u.sub(*v).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn regular_pentagon_tie_goes_to_first_vertex() {
        let verts: Vec<Point> = (0..5)
            .map(|k| {
                let t = 0.3 + 2.0 * PI * k as f64 / 5.0;
                Point::new(t.cos(), t.sin())
            })
            .collect();
        let p = Polygon::new(verts.clone()).unwrap();
        let c = canonicalize(&p).unwrap();
        assert_eq!(c, canonicalize(&p).unwrap());
        // vertex 0 lands on the axis; vertex 1 keeps its relative position
        let expected = verts[1].rotate(-0.3);
        assert!(c.vertices()[1].sub(expected).norm() < 1e-12);
    }
}
