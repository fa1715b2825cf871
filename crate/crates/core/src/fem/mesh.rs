use std::collections::HashMap;
use std::fmt::Write as _;

use super::{FemError, Result};
use crate::geometry::{Point, Polygon};

/// Interior Laplacian smoothing passes applied after refinement.
pub const DEFAULT_SMOOTHING_PASSES: usize = 3;

/// Conforming triangulation of a polygon.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    nodes: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    h: f64,
}

impl Mesh {
    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary(&self) -> &[bool] {
        &self.boundary
    }

    /// Target edge length the mesh was built for.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn interior_count(&self) -> usize {
        self.boundary.iter().filter(|&&b| !b).count()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (a, b, c) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        0.5 * b.sub(a).cross(c.sub(a))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| self.triangle_area(t))
            .sum()
    }

    pub fn max_edge(&self) -> f64 {
        self.triangles
            .iter()
            .flat_map(|&[a, b, c]| [(a, b), (b, c), (c, a)])
            .map(|(i, j)| self.nodes[i].sub(self.nodes[j]).norm())
            .fold(0.0, f64::max)
    }

    /// Congruent copy scaled about the origin.
    pub fn scaled(&self, s: f64) -> Mesh {
        Mesh {
            nodes: self.nodes.iter().map(|p| p.scale(s)).collect(),
            triangles: self.triangles.clone(),
            boundary: self.boundary.clone(),
            h: self.h * s,
        }
    }

    /// One level of red (midpoint) refinement.
    pub fn refined(&self) -> Mesh {
        let mut nodes = self.nodes.clone();
        let mut boundary = self.boundary.clone();
        let boundary_edges = self.boundary_edges();
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint =
            |a: usize, b: usize, nodes: &mut Vec<Point>, boundary: &mut Vec<bool>| {
                let key = (a.min(b), a.max(b));
                *mid.entry(key).or_insert_with(|| {
                    nodes.push(nodes[a].add(nodes[b]).scale(0.5));
                    boundary.push(boundary_edges.contains_key(&key));
                    nodes.len() - 1
                })
            };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for &[a, b, c] in &self.triangles {
            let ab = midpoint(a, b, &mut nodes, &mut boundary);
            let bc = midpoint(b, c, &mut nodes, &mut boundary);
            let ca = midpoint(c, a, &mut nodes, &mut boundary);
            triangles.push([a, ab, ca]);
            triangles.push([ab, b, bc]);
            triangles.push([ca, bc, c]);
            triangles.push([ab, bc, ca]);
        }
        Mesh {
            nodes,
            triangles,
            boundary,
            h: self.h,
        }
    }

    /// Edges used by exactly one triangle.
    fn boundary_edges(&self) -> HashMap<(usize, usize), ()> {
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for &[a, b, c] in &self.triangles {
            for (i, j) in [(a, b), (b, c), (c, a)] {
                *count.entry((i.min(j), i.max(j))).or_default() += 1;
            }
        }
        count
            .into_iter()
            .filter(|&(_, n)| n == 1)
            .map(|(e, _)| (e, ()))
            .collect()
    }

    fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &[a, b, c] in &self.triangles {
            for (i, j) in [(a, b), (b, c), (c, a)] {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Jacobi Laplacian smoothing of interior nodes. A pass that would invert
    /// a triangle or stretch an edge beyond `h` is discarded and smoothing stops.
    fn smooth(&mut self, passes: usize) {
        let adj = self.neighbours();
        for _ in 0..passes {
            let old = self.nodes.clone();
            for (i, nb) in adj.iter().enumerate() {
                if self.boundary[i] || nb.is_empty() {
                    continue;
                }
                let mut s = Point::default();
                for &j in nb {
                    s = s.add(old[j]);
                }
                self.nodes[i] = s.scale(1.0 / nb.len() as f64);
            }
            let valid = (0..self.triangles.len()).all(|t| self.triangle_area(t) > 0.0)
                && self.max_edge() <= self.h * (1.0 + 1e-12);
            if !valid {
                self.nodes = old;
                break;
            }
        }
    }

    /// OFF text export (z = 0).
    pub fn to_off(&self) -> String {
        let mut s = String::from("OFF\n");
        let _ = writeln!(s, "{} {} 0", self.nodes.len(), self.triangles.len());
        for p in &self.nodes {
            let _ = writeln!(s, "{:.16e} {:.16e} 0", p.x, p.y);
        }
        for [a, b, c] in &self.triangles {
            let _ = writeln!(s, "3 {a} {b} {c}");
        }
        s
    }
}

fn min_angle(a: Point, b: Point, c: Point) -> f64 {
    let ang = |p: Point, q: Point, r: Point| {
        let u = q.sub(p);
        let v = r.sub(p);
        u.cross(v).abs().atan2(u.dot(v))
    };
    ang(a, b, c).min(ang(b, c, a)).min(ang(c, a, b))
}

fn in_closed_triangle(p: Point, a: Point, b: Point, c: Point) -> bool {
    let d1 = b.sub(a).cross(p.sub(a));
    let d2 = c.sub(b).cross(p.sub(b));
    let d3 = a.sub(c).cross(p.sub(c));
    d1 >= 0.0 && d2 >= 0.0 && d3 >= 0.0
}

/// Ear clipping that always cuts the ear with the largest minimum angle.
pub(crate) fn ear_clip(poly: &Polygon) -> Result<Vec<[usize; 3]>> {
    let v = poly.vertices();
    let mut ring: Vec<usize> = (0..v.len()).collect();
    let mut tris = Vec::with_capacity(v.len() - 2);
    while ring.len() > 3 {
        let m = ring.len();
        let mut best: Option<(usize, f64)> = None;
        for k in 0..m {
            let (ip, ic, inx) = (ring[(k + m - 1) % m], ring[k], ring[(k + 1) % m]);
            let (a, b, c) = (v[ip], v[ic], v[inx]);
            if b.sub(a).cross(c.sub(b)) <= 0.0 {
                continue;
            }
            let blocked = ring
                .iter()
                .filter(|&&r| r != ip && r != ic && r != inx)
                .any(|&r| in_closed_triangle(v[r], a, b, c));
            if blocked {
                continue;
            }
            let q = min_angle(a, b, c);
            if best.is_none_or(|(_, bq)| q > bq) {
                best = Some((k, q));
            }
        }
        let (k, _) = best.ok_or(FemError::EarClippingFailed)?;
        tris.push([ring[(k + m - 1) % m], ring[k], ring[(k + 1) % m]]);
        ring.remove(k);
    }
    tris.push([ring[0], ring[1], ring[2]]);
    Ok(tris)
}

/// Triangulates `poly` so that every edge is at most `h` long.
pub fn triangulate(poly: &Polygon, h: f64) -> Result<Mesh> {
    triangulate_with(poly, h, DEFAULT_SMOOTHING_PASSES)
}

pub fn triangulate_with(poly: &Polygon, h: f64, smoothing_passes: usize) -> Result<Mesh> {
    if !(h.is_finite() && h > 0.0) {
        return Err(FemError::InvalidMeshSize(h));
    }
    let tris = ear_clip(poly)?;
    let mut mesh = Mesh {
        nodes: poly.vertices().to_vec(),
        triangles: tris,
        boundary: vec![true; poly.len()],
        h,
    };
    let coarse = mesh.max_edge();
    let mut levels = 0u32;
    while coarse / f64::powi(2.0, levels as i32) > h * (1.0 + 1e-12) {
        levels += 1;
        if levels > 16 {
            return Err(FemError::InvalidMeshSize(h));
        }
    }
    for _ in 0..levels {
        mesh = mesh.refined();
    }
    if mesh.interior_count() == 0 {
        return Err(FemError::MeshTooCoarse { h });
    }
    mesh.smooth(smoothing_passes);
    Ok(mesh)
}
