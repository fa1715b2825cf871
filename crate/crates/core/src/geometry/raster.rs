use std::sync::OnceLock;

use super::{GeometryError, Point, Polygon, Result};

/// Pixels per side of every network image.
pub const GRID: usize = 41;
/// Pixel pitch in length units.
pub const PIXEL_SIZE: f64 = 0.1;
/// Vertices must lie in `[-GRID_HALF_EXTENT, GRID_HALF_EXTENT]²` to be rasterized.
pub const GRID_HALF_EXTENT: f64 = 2.0;

/// Coordinate of pixel centre `i` along either axis: -2.0, -1.9, …, 2.0.
pub fn pixel_center(i: usize) -> f64 {
    // Dividing by 10 keeps every centre the correctly rounded decimal.
    (i as f64 - (GRID / 2) as f64) / 10.0
}

/// Square image with values in [0, 1].
///
/// Storage is row-major with row `j` holding pixels at y = `pixel_center(j)`,
/// so row 0 is the bottom of the window.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    side: usize,
    data: Vec<f64>,
}

impl RasterImage {
    pub fn zeros(side: usize) -> Self {
        Self {
            side,
            data: vec![0.0; side * side],
        }
    }

    pub fn filled(side: usize, value: f64) -> Result<Self> {
        Self::from_vec(side, vec![value; side * side])
    }

    pub fn from_vec(side: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != side * side {
            return Err(GeometryError::SizeMismatch {
                expected: side * side,
                found: data.len(),
            });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0 && **v <= 1.0))
        {
            return Err(GeometryError::PixelOutOfRange { index, value });
        }
        Ok(Self { side, data })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.side + col]
    }

    /// Panics if `value` is outside [0, 1].
    pub fn set(&mut self, col: usize, row: usize, value: f64) {
        assert!((0.0..=1.0).contains(&value), "pixel value {value}");
        self.data[row * self.side + col] = value;
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn count_set(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.0).count()
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Binary PGM (P5), maxval 255, top row = largest y.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.side, self.side).into_bytes();
        for row in (0..self.side).rev() {
            for col in 0..self.side {
                out.push((255.0 * self.get(col, row)).round() as u8);
            }
        }
        out
    }

    /// Parses a square binary PGM with maxval ≤ 255.
    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let err = |reason: &str| GeometryError::Parse {
            line: 0,
            reason: reason.to_string(),
        };
        let mut pos = 0;
        let token = |pos: &mut usize| -> Result<String> {
            loop {
                while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                    *pos += 1;
                }
                if *pos < bytes.len() && bytes[*pos] == b'#' {
                    while *pos < bytes.len() && bytes[*pos] != b'\n' {
                        *pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = *pos;
            while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if start == *pos {
                return Err(err("unexpected end of header"));
            }
            Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
        };
        if token(&mut pos)? != "P5" {
            return Err(err("missing P5 magic"));
        }
        let num = |pos: &mut usize, what: &str| -> Result<usize> {
            token(pos)?
                .parse::<usize>()
                .map_err(|_| err(&format!("bad {what}")))
        };
        let w = num(&mut pos, "width")?;
        let h = num(&mut pos, "height")?;
        let maxval = num(&mut pos, "maxval")?;
        if w != h {
            return Err(err("image is not square"));
        }
        if maxval == 0 || maxval > 255 {
            return Err(err("maxval must be in 1..=255"));
        }
        // exactly one whitespace byte separates header and raster
        pos += 1;
        let n = w.checked_mul(h).ok_or_else(|| err("image too large"))?;
        if bytes.len() < pos || bytes.len() - pos < n {
            return Err(err("truncated raster"));
        }
        let mut img = RasterImage::zeros(w);
        for r in 0..h {
            for c in 0..w {
                let v = bytes[pos + r * w + c] as f64 / maxval as f64;
                img.data[(h - 1 - r) * w + c] = v.min(1.0);
            }
        }
        Ok(img)
    }
}

/// Pixel-centre rasterization onto the fixed 41×41 window.
pub fn rasterize(p: &Polygon) -> Result<RasterImage> {
    for (index, v) in p.vertices().iter().enumerate() {
        if v.x.abs() > GRID_HALF_EXTENT || v.y.abs() > GRID_HALF_EXTENT {
            return Err(GeometryError::OutsideGrid {
                index,
                x: v.x,
                y: v.y,
            });
        }
    }
    let mut img = RasterImage::zeros(GRID);
    for row in 0..GRID {
        let y = pixel_center(row);
        for col in 0..GRID {
            if p.contains(Point::new(pixel_center(col), y)) {
                img.data[row * GRID + col] = 1.0;
            }
        }
    }
    Ok(img)
}

/// The eight symmetries of the square, in the fixed order used for tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum D4 {
    Identity,
    Rot90,
    Rot180,
    Rot270,
    /// x → −x
    FlipX,
    /// y → −y
    FlipY,
    /// (x, y) → (y, x)
    Diagonal,
    /// (x, y) → (−y, −x)
    AntiDiagonal,
}

impl D4 {
    pub const ALL: [D4; 8] = [
        D4::Identity,
        D4::Rot90,
        D4::Rot180,
        D4::Rot270,
        D4::FlipX,
        D4::FlipY,
        D4::Diagonal,
        D4::AntiDiagonal,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            D4::Identity => "id",
            D4::Rot90 => "r90",
            D4::Rot180 => "r180",
            D4::Rot270 => "r270",
            D4::FlipX => "fx",
            D4::FlipY => "fy",
            D4::Diagonal => "d1",
            D4::AntiDiagonal => "d2",
        }
    }

    /// Integer matrix acting on centred coordinates.
    pub fn matrix(self) -> [[i64; 2]; 2] {
        match self {
            D4::Identity => [[1, 0], [0, 1]],
            D4::Rot90 => [[0, -1], [1, 0]],
            D4::Rot180 => [[-1, 0], [0, -1]],
            D4::Rot270 => [[0, 1], [-1, 0]],
            D4::FlipX => [[-1, 0], [0, 1]],
            D4::FlipY => [[1, 0], [0, -1]],
            D4::Diagonal => [[0, 1], [1, 0]],
            D4::AntiDiagonal => [[0, -1], [-1, 0]],
        }
    }

    fn from_matrix(m: [[i64; 2]; 2]) -> D4 {
        *D4::ALL
            .iter()
            .find(|g| g.matrix() == m)
            .expect("D4 is closed under composition")
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(self, other: D4) -> D4 {
        let a = self.matrix();
        let b = other.matrix();
        let mut m = [[0; 2]; 2];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        D4::from_matrix(m)
    }

    pub fn inverse(self) -> D4 {
        match self {
            D4::Rot90 => D4::Rot270,
            D4::Rot270 => D4::Rot90,
            g => g,
        }
    }

    /// Source index for every output pixel: `out[k] = in[perm[k]]`.
    pub fn permutation(self, side: usize) -> Vec<usize> {
        let inv = self.inverse().matrix();
        let s = side as i64;
        let mut perm = Vec::with_capacity(side * side);
        for row in 0..s {
            for col in 0..s {
                // doubled centred coordinates stay integral for even sides
                let u = 2 * col - (s - 1);
                let v = 2 * row - (s - 1);
                let su = inv[0][0] * u + inv[0][1] * v;
                let sv = inv[1][0] * u + inv[1][1] * v;
                let sc = (su + s - 1) / 2;
                let sr = (sv + s - 1) / 2;
                perm.push((sr * s + sc) as usize);
            }
        }
        perm
    }

    /// Cached permutations for the 41×41 grid.
    pub(crate) fn grid_permutation(self) -> &'static [usize] {
        static PERMS: OnceLock<Vec<Vec<usize>>> = OnceLock::new();
        &PERMS.get_or_init(|| D4::ALL.iter().map(|g| g.permutation(GRID)).collect())[self.index()]
    }

    pub fn apply(self, img: &RasterImage) -> RasterImage {
        let owned;
        let perm: &[usize] = if img.side == GRID {
            self.grid_permutation()
        } else {
            owned = self.permutation(img.side);
            &owned
        };
        RasterImage {
            side: img.side,
            data: perm.iter().map(|&k| img.data[k]).collect(),
        }
    }
}

/// Exact pixel permutation by a square symmetry.
pub fn d4_transform(img: &RasterImage, g: D4) -> RasterImage {
    g.apply(img)
}

/// Counter-clockwise rotation by `theta` about the grid centre, optionally
/// preceded by the x-flip, resampled by bilinear inverse mapping. Source
/// positions outside the grid read as zero.
pub fn rotate_image(img: &RasterImage, theta: f64, reflect: bool) -> RasterImage {
    let side = img.side;
    let c = (side as f64 - 1.0) / 2.0;
    let (s, co) = theta.sin_cos();
    let snap = |t: f64| {
        let r = t.round();
        if (t - r).abs() < 1e-9 {
            r
        } else {
            t
        }
    };
    let fetch = |col: i64, row: i64| -> f64 {
        if col < 0 || row < 0 || col >= side as i64 || row >= side as i64 {
            0.0
        } else {
            img.data[row as usize * side + col as usize]
        }
    };
    let mut out = RasterImage::zeros(side);
    for row in 0..side {
        for col in 0..side {
            let u = col as f64 - c;
            let v = row as f64 - c;
            let mut x = co * u + s * v;
            let y = -s * u + co * v;
            if reflect {
                x = -x;
            }
            let sx = snap(x + c);
            let sy = snap(y + c);
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let (x0, y0) = (x0 as i64, y0 as i64);
            let mut val = (1.0 - fx) * (1.0 - fy) * fetch(x0, y0);
            if fx > 0.0 {
                val += fx * (1.0 - fy) * fetch(x0 + 1, y0);
            }
            if fy > 0.0 {
                val += (1.0 - fx) * fy * fetch(x0, y0 + 1);
            }
            if fx > 0.0 && fy > 0.0 {
                val += fx * fy * fetch(x0 + 1, y0 + 1);
            }
            out.data[row * side + col] = val.clamp(0.0, 1.0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{canonicalize, generate_pentagon, GenConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_image(side: usize, rng: &mut impl Rng) -> RasterImage {
        RasterImage::from_vec(
            side,
            (0..side * side).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap()
    }

    fn centred_square(half: f64) -> Polygon {
        Polygon::from_xy(&[(-half, -half), (half, -half), (half, half), (-half, half)]).unwrap()
    }

    #[test]
    fn pixel_centres_are_symmetric_decimals() {
        assert_eq!(pixel_center(0), -2.0);
        assert_eq!(pixel_center(20), 0.0);
        assert_eq!(pixel_center(40), 2.0);
        assert_eq!(pixel_center(15), -0.5);
    }

    #[test]
    fn unit_square_pixel_count() {
        // Enumerate centres independently: those with |x|, |y| <= 0.5 (boundary inclusive).
        let centres: Vec<f64> = (0..41).map(|i| -2.0 + 0.1 * i as f64).collect();
        let inside = centres.iter().filter(|c| c.abs() <= 0.5 + 1e-9).count();
        assert_eq!(inside, 11);
        let img = rasterize(&centred_square(0.5)).unwrap();
        assert_eq!(img.count_set(), inside * inside);
        assert!(img.is_binary());
        let strict = centres.iter().filter(|c| c.abs() <= 0.45).count();
        assert_eq!(
            rasterize(&centred_square(0.45)).unwrap().count_set(),
            strict * strict
        );
    }

    #[test]
    fn outside_vertices_are_rejected() {
        let big = centred_square(2.5);
        assert!(matches!(
            rasterize(&big).unwrap_err(),
            GeometryError::OutsideGrid { .. }
        ));
    }

    #[test]
    fn pixel_area_tracks_shoelace_area() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = GenConfig::default();
        let mut checked = 0;
        while checked < 10_000 {
            let p = canonicalize(&generate_pentagon(&cfg, &mut rng).unwrap()).unwrap();
            let Ok(img) = rasterize(&p) else { continue };
            let approx = img.count_set() as f64 * 0.01;
            let bound = 0.1 * p.perimeter() / 2.0 + 0.05;
            assert!(
                (approx - p.area()).abs() <= bound,
                "area {} vs {}",
                approx,
                p.area()
            );
            checked += 1;
        }
    }

    #[test]
    fn d4_group_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = random_image(GRID, &mut rng);
        assert_eq!(D4::Identity.apply(&img), img);
        let mut r = img.clone();
        for _ in 0..4 {
            r = D4::Rot90.apply(&r);
        }
        assert_eq!(r, img);
        assert_eq!(
            D4::Rot90.apply(&D4::Rot90.apply(&img)),
            D4::Rot180.apply(&img)
        );
        for g in [D4::FlipX, D4::FlipY, D4::Diagonal, D4::AntiDiagonal] {
            assert_eq!(g.apply(&g.apply(&img)), img);
        }
        // centre pixel is fixed on an odd grid
        for g in D4::ALL {
            assert_eq!(g.apply(&img).get(20, 20), img.get(20, 20));
        }
    }

    #[test]
    fn d4_action_is_faithful_and_matches_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for side in [GRID, 6, 5] {
            let img = random_image(side, &mut rng);
            let images: Vec<_> = D4::ALL.iter().map(|g| g.apply(&img)).collect();
            for i in 0..8 {
                for j in 0..i {
                    assert_ne!(images[i], images[j]);
                }
            }
            for g in D4::ALL {
                for h in D4::ALL {
                    assert_eq!(g.apply(&h.apply(&img)), g.compose(h).apply(&img));
                }
            }
        }
    }

    #[test]
    fn rot90_moves_pixels_counter_clockwise() {
        let mut img = RasterImage::zeros(GRID);
        img.set(30, 20, 1.0); // (x, y) = (1, 0)
        let r = D4::Rot90.apply(&img);
        assert_eq!(r.get(20, 30), 1.0); // (0, 1)
        let f = D4::FlipX.apply(&img);
        assert_eq!(f.get(10, 20), 1.0);
    }

    #[test]
    fn rotation_resampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let img = random_image(GRID, &mut rng);
        assert_eq!(rotate_image(&img, 0.0, false), img);
        assert_eq!(rotate_image(&img, PI / 2.0, false), D4::Rot90.apply(&img));
        assert_eq!(rotate_image(&img, 0.0, true), D4::FlipX.apply(&img));
        let zero = RasterImage::zeros(GRID);
        assert_eq!(rotate_image(&zero, 1.234, true), zero);
        let rot = rotate_image(&img, 0.7, true);
        assert!(rot.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn pgm_round_trip() {
        let p = canonicalize(
            &generate_pentagon(&GenConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap(),
        )
        .unwrap();
        let img = rasterize(&p).unwrap();
        let bytes = img.to_pgm();
        assert!(bytes.starts_with(b"P5\n41 41\n255\n"));
        assert_eq!(RasterImage::from_pgm(&bytes).unwrap(), img);
        assert!(RasterImage::from_pgm(&bytes[..bytes.len() - 1]).is_err());
        assert!(RasterImage::from_pgm(b"P6\n1 1\n255\n\0").is_err());
    }
}
