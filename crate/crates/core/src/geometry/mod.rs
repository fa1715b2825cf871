//! Planar polygons ("drums"), their metric quantities, random pentagon
//! generation with gauge fixing, and the 41×41 raster representation.

mod generate;
mod raster;

pub use generate::{canonicalize, generate_pentagon, GenConfig, MAX_REJECTIONS};
pub use raster::{
    d4_transform, pixel_center, rasterize, rotate_image, RasterImage, D4, GRID, GRID_HALF_EXTENT,
    PIXEL_SIZE,
};

use std::f64::consts::PI;
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("vertex {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("polygon is degenerate (zero area or repeated vertex)")]
    Degenerate,
    #[error("polygon edges {0} and {1} intersect")]
    SelfIntersecting(usize, usize),
    #[error("vertex {index} at ({x}, {y}) lies outside the raster window")]
    OutsideGrid { index: usize, x: f64, y: f64 },
    #[error("inner angle {0} is outside (0, 2π)")]
    AngleOutOfRange(f64),
    #[error("invalid generator config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("no acceptable pentagon after {0} draws")]
    RejectionLimit(u64),
    #[error("image side {found} does not match expected {expected}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("pixel value {value} at index {index} is outside [0, 1]")]
    PixelOutOfRange { index: usize, value: f64 },
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

pub type Result<T, E = GeometryError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    pub fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Counter-clockwise rotation about the origin.
    pub fn rotate(self, theta: f64) -> Point {
        let (s, c) = theta.sin_cos();
        Point::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    b.sub(a).cross(c.sub(a))
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test.
pub(crate) fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// A simple polygon with counter-clockwise vertex order.
///
/// The reconstruction pipeline works with pentagons, but the type accepts any
/// vertex count ≥ 3 so that validation shapes (squares, the isospectral pair)
/// share the same code path.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    /// Validates simplicity and reorients clockwise input to counter-clockwise.
    pub fn new(mut vertices: Vec<Point>) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return Err(GeometryError::TooFewVertices(n));
        }
        if let Some(i) = vertices.iter().position(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite(i));
        }
        for i in 0..n {
            if vertices[i] == vertices[(i + 1) % n] {
                return Err(GeometryError::Degenerate);
            }
        }
        let signed = signed_area(&vertices);
        if signed == 0.0 || !signed.is_finite() {
            return Err(GeometryError::Degenerate);
        }
        check_simple(&vertices)?;
        if signed < 0.0 {
            vertices.reverse();
        }
        Ok(Self { vertices })
    }

    pub fn from_xy(coords: &[(f64, f64)]) -> Result<Self> {
        Self::new(coords.iter().map(|&(x, y)| Point::new(x, y)).collect())
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Shoelace area; positive by construction.
    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn edge_lengths(&self) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| self.vertices[(i + 1) % n].sub(self.vertices[i]).norm())
            .collect()
    }

    pub fn perimeter(&self) -> f64 {
        self.edge_lengths().iter().sum()
    }

    /// Interior angle at every vertex, each in (0, 2π).
    pub fn inner_angles(&self) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let v = self.vertices[i];
                let prev = self.vertices[(i + n - 1) % n].sub(v);
                let next = self.vertices[(i + 1) % n].sub(v);
                let mut theta = next.cross(prev).atan2(next.dot(prev));
                if theta <= 0.0 {
                    theta += 2.0 * PI;
                }
                theta
            })
            .collect()
    }

    /// Area centroid.
    pub fn centroid(&self) -> Result<Point> {
        let n = self.len();
        let mut a2 = 0.0;
        let (mut cx, mut cy) = (0.0, 0.0);
        // Offsetting by the first vertex keeps the sums well conditioned far from the origin.
        let o = self.vertices[0];
        for i in 0..n {
            let p = self.vertices[i].sub(o);
            let q = self.vertices[(i + 1) % n].sub(o);
            let w = p.cross(q);
            a2 += w;
            cx += (p.x + q.x) * w;
            cy += (p.y + q.y) * w;
        }
        if a2 == 0.0 {
            return Err(GeometryError::Degenerate);
        }
        Ok(Point::new(o.x + cx / (3.0 * a2), o.y + cy / (3.0 * a2)))
    }

    /// Image under an arbitrary point map, revalidated.
    pub fn map(&self, f: impl Fn(Point) -> Point) -> Result<Polygon> {
        Polygon::new(self.vertices.iter().copied().map(f).collect())
    }

    pub fn scaled(&self, s: f64) -> Result<Polygon> {
        self.map(|p| p.scale(s))
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Result<Polygon> {
        self.map(|p| Point::new(p.x + dx, p.y + dy))
    }

    pub fn rotated(&self, theta: f64) -> Result<Polygon> {
        self.map(|p| p.rotate(theta))
    }

    /// Point membership; points on the boundary count as inside.
    pub fn contains(&self, p: Point) -> bool {
        let n = self.len();
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let e = b.sub(a);
            let len = e.norm();
            if orient(a, b, p).abs() <= 1e-12 * len && on_segment(a, b, p) {
                return true;
            }
        }
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[j];
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    /// One `x y` line per vertex, 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for p in &self.vertices {
            let _ = writeln!(s, "{:.16e} {:.16e}", p.x, p.y);
        }
        s
    }

    /// Inverse of [`Polygon::to_text`]. Blank lines and `#` comments are skipped.
    pub fn parse_text(text: &str) -> Result<Polygon> {
        let mut pts = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let mut next = |name: &str| -> Result<f64> {
                let tok = fields.next().ok_or_else(|| GeometryError::Parse {
                    line: idx + 1,
                    reason: format!("missing {name} coordinate"),
                })?;
                tok.parse::<f64>().map_err(|e| GeometryError::Parse {
                    line: idx + 1,
                    reason: format!("bad {name} coordinate `{tok}`: {e}"),
                })
            };
            let x = next("x")?;
            let y = next("y")?;
            if fields.next().is_some() {
                return Err(GeometryError::Parse {
                    line: idx + 1,
                    reason: "expected exactly two fields".into(),
                });
            }
            pts.push(Point::new(x, y));
        }
        Polygon::new(pts)
    }
}

pub(crate) fn signed_area(v: &[Point]) -> f64 {
    let n = v.len();
    let o = v[0];
    let mut s = 0.0;
    for i in 1..n - 1 {
        s += v[i].sub(o).cross(v[i + 1].sub(o));
    }
    0.5 * s
}

fn check_simple(v: &[Point]) -> Result<()> {
    let n = v.len();
    for i in 0..n {
        let a = v[i];
        let b = v[(i + 1) % n];
        // Adjacent edges may only share their common vertex.
        let c = v[(i + 2) % n];
        if orient(a, b, c) == 0.0 && b.sub(a).dot(c.sub(b)) < 0.0 {
            return Err(GeometryError::SelfIntersecting(i, (i + 1) % n));
        }
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_intersect(a, b, v[j], v[(j + 1) % n]) {
                return Err(GeometryError::SelfIntersecting(i, j));
            }
        }
    }
    Ok(())
}

/// The angle constant of Weyl's expansion, (1/24) Σ (π/α − α/π).
pub fn weyl_k(angles: &[f64]) -> Result<f64> {
    let mut s = 0.0;
    for &a in angles {
        if !(a > 0.0 && a < 2.0 * PI) {
            return Err(GeometryError::AngleOutOfRange(a));
        }
        s += PI / a - a / PI;
    }
    Ok(s / 24.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> Polygon {
        Polygon::from_xy(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]).unwrap()
    }

    #[test]
    fn square_metrics() {
        let sq = unit_square();
        assert_eq!(sq.area(), 1.0);
        assert_eq!(sq.perimeter(), 4.0);
        for a in sq.inner_angles() {
            assert!((a - PI / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn clockwise_input_is_reoriented() {
        let cw = Polygon::from_xy(&[(0.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, 0.0)]).unwrap();
        assert!(cw.area() > 0.0);
    }

    #[test]
    fn centroid_of_squares() {
        let c = unit_square()
            .translated(-0.5, -0.5)
            .unwrap()
            .centroid()
            .unwrap();
        assert!(c.x.abs() < 1e-15 && c.y.abs() < 1e-15);
        let c = unit_square()
            .translated(-0.5, -0.5)
            .unwrap()
            .translated(1.0, 2.0)
            .unwrap()
            .centroid()
            .unwrap();
        assert!((c.x - 1.0).abs() < 1e-14 && (c.y - 2.0).abs() < 1e-14);
    }

    #[test]
    fn bowtie_is_rejected() {
        let err = Polygon::from_xy(&[(0.0, 0.0), (2.0, 2.0), (2.0, 0.0), (0.0, 1.0)]).unwrap_err();
        assert!(matches!(err, GeometryError::SelfIntersecting(..)));
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(
            Polygon::from_xy(&[(0.0, 0.0), (1.0, 0.0)]).unwrap_err(),
            GeometryError::TooFewVertices(2)
        );
        assert_eq!(
            Polygon::from_xy(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]).unwrap_err(),
            GeometryError::Degenerate
        );
        assert!(Polygon::from_xy(&[(0.0, 0.0), (1.0, f64::NAN), (2.0, 1.0)]).is_err());
    }

    #[test]
    fn reflex_angles_sum() {
        let arrow = Polygon::from_xy(&[(0.0, 0.0), (2.0, 1.0), (0.0, 2.0), (0.5, 1.0)]).unwrap();
        let angles = arrow.inner_angles();
        assert!(angles[3] > PI);
        assert!((angles.iter().sum::<f64>() - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn weyl_k_spot_values() {
        assert!((weyl_k(&[PI / 2.0; 4]).unwrap() - 0.25).abs() <= 1e-15);
        assert_eq!(weyl_k(&[PI; 5]).unwrap(), 0.0);
        let reg = weyl_k(&[3.0 * PI / 5.0; 5]).unwrap();
        assert!((reg - 16.0 / 72.0).abs() <= 1e-15);
        assert!(weyl_k(&[0.0, 1.0]).is_err());
        assert!(weyl_k(&[2.0 * PI]).is_err());
    }

    #[test]
    fn text_round_trip() {
        let p = Polygon::from_xy(&[(0.1, 0.2), (1.0 / 3.0, -0.5), (1.7, 1.1)]).unwrap();
        let q = Polygon::parse_text(&p.to_text()).unwrap();
        assert_eq!(p, q);
        assert!(matches!(
            Polygon::parse_text("1 2\n3\n").unwrap_err(),
            GeometryError::Parse { line: 2, .. }
        ));
    }

    #[test]
    fn boundary_points_are_inside() {
        let sq = unit_square();
        assert!(sq.contains(Point::new(0.5, 0.0)));
        assert!(sq.contains(Point::new(1.0, 1.0)));
        assert!(sq.contains(Point::new(0.5, 0.5)));
        assert!(!sq.contains(Point::new(1.0 + 1e-9, 0.5)));
    }
}
