//! The Gordon–Webb–Wolpert isospectral pair, built from seven right isosceles
//! tiles by Sunada transplantation.
//!
//! Three involutions of the Fano plane glue seven copies of a base triangle.
//! Acting on the seven points gives one drum, acting on the seven lines gives
//! the other. The two permutation representations are linearly equivalent, so
//! the drums share their Dirichlet spectrum, yet they are not congruent.

use crate::geometry::{Point, Polygon, Result};

/// Gluing permutations on the Fano points, one per tile edge:
/// index 0 glues across the hypotenuse, 1 across the vertical leg, 2 across
/// the horizontal leg. A fixed point leaves that edge on the boundary.
pub const POINT_GLUING: [[usize; 7]; 3] = [
    [0, 1, 4, 3, 2, 6, 5],
    [0, 2, 1, 6, 4, 5, 3],
    [1, 0, 2, 3, 6, 5, 4],
];

/// The same three involutions acting on the Fano lines.
pub const LINE_GLUING: [[usize; 7]; 3] = [
    [0, 1, 3, 2, 6, 5, 4],
    [6, 1, 5, 3, 4, 2, 0],
    [0, 6, 2, 3, 5, 4, 1],
];

/// Edge `c` of a tile joins the two vertices other than vertex `c`.
fn edge(c: usize) -> (usize, usize) {
    ((c + 1) % 3, (c + 2) % 3)
}

fn reflect(p: Point, a: Point, b: Point) -> Point {
    let d = b.sub(a);
    let t = p.sub(a).dot(d) / d.dot(d);
    let foot = a.add(d.scale(t));
    foot.scale(2.0).sub(p)
}

/// Places the seven tiles by reflecting the base triangle (0,0), (1,0), (0,1)
/// across glued edges.
pub fn tiles(gluing: &[[usize; 7]; 3]) -> Vec<[Point; 3]> {
    let base = [
        Point::new(0.0, 0.0),
        Point::new(1.0, 0.0),
        Point::new(0.0, 1.0),
    ];
    let mut placed: Vec<Option<[Point; 3]>> = vec![None; 7];
    placed[0] = Some(base);
    let mut queue = vec![0usize];
    while let Some(t) = queue.pop() {
        let tri = placed[t].expect("queued tiles are placed");
        for (c, g) in gluing.iter().enumerate() {
            let nb = g[t];
            if nb == t || placed[nb].is_some() {
                continue;
            }
            let (i, j) = edge(c);
            let mut next = tri;
            next[c] = reflect(tri[c], tri[i], tri[j]);
            placed[nb] = Some(next);
            queue.push(nb);
        }
    }
    placed
        .into_iter()
        .map(|t| t.expect("gluing graph is connected"))
        .collect()
}

/// Outline of the glued tiles: unglued edges chained into a loop with
/// collinear vertices dropped.
pub fn tile_domain(gluing: &[[usize; 7]; 3]) -> Result<Polygon> {
    let tiles = tiles(gluing);
    let mut segs: Vec<(Point, Point)> = Vec::new();
    for (t, tri) in tiles.iter().enumerate() {
        for (c, g) in gluing.iter().enumerate() {
            if g[t] == t {
                let (i, j) = edge(c);
                segs.push((tri[i], tri[j]));
            }
        }
    }
    let mut ring = vec![segs[0].0, segs[0].1];
    let mut used = vec![false; segs.len()];
    used[0] = true;
    while ring.len() <= segs.len() {
        let tail = *ring.last().unwrap();
        let Some(k) =
            (0..segs.len()).find(|&k| !used[k] && (segs[k].0 == tail || segs[k].1 == tail))
        else {
            break;
        };
        used[k] = true;
        let other = if segs[k].0 == tail {
            segs[k].1
        } else {
            segs[k].0
        };
        if other == ring[0] {
            break;
        }
        ring.push(other);
    }
    let mut changed = true;
    while changed {
        changed = false;
        let n = ring.len();
        for i in 0..n {
            let a = ring[(i + n - 1) % n];
            let b = ring[i];
            let c = ring[(i + 1) % n];
            if b.sub(a).cross(c.sub(b)) == 0.0 {
                ring.remove(i);
                changed = true;
                break;
            }
        }
    }
    Polygon::new(ring)
}

/// The two drums.
pub fn gww_pair() -> (Polygon, Polygon) {
    let a = tile_domain(&POINT_GLUING).expect("point gluing yields a simple polygon");
    let b = tile_domain(&LINE_GLUING).expect("line gluing yields a simple polygon");
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn is_involution(g: &[usize; 7]) -> bool {
        (0..7).all(|i| g[g[i]] == i)
    }

    #[test]
    fn gluings_are_involutions_with_three_fixed_points() {
        for g in POINT_GLUING.iter().chain(&LINE_GLUING) {
            assert!(is_involution(g));
            assert_eq!((0..7).filter(|&i| g[i] == i).count(), 3);
        }
    }

    #[test]
    fn drums_have_expected_outlines() {
        let (a, b) = gww_pair();
        assert_eq!(a.len(), 8);
        assert_eq!(b.len(), 8);
        assert!((a.area() - 3.5).abs() < 1e-12);
        assert!((b.area() - 3.5).abs() < 1e-12);
        let expect_a = [
            (1.0, 0.0),
            (0.0, 1.0),
            (0.0, 0.0),
            (-2.0, 0.0),
            (-2.0, -1.0),
            (-1.0, -2.0),
            (-1.0, -1.0),
            (0.0, -1.0),
        ];
        let expect_b = [
            (1.0, 0.0),
            (0.0, 1.0),
            (-1.0, 1.0),
            (-1.0, 2.0),
            (-2.0, 2.0),
            (-2.0, 1.0),
            (0.0, -1.0),
            (0.0, 0.0),
        ];
        for (poly, expect) in [(&a, expect_a), (&b, expect_b)] {
            for (x, y) in expect {
                assert!(
                    poly.vertices().contains(&Point::new(x, y)),
                    "missing ({x}, {y})"
                );
            }
        }
        // equal perimeter but different edge multisets: not congruent
        assert!((a.perimeter() - b.perimeter()).abs() < 1e-12);
        let mut ea = a.edge_lengths();
        let mut eb = b.edge_lengths();
        ea.sort_by(f64::total_cmp);
        eb.sort_by(f64::total_cmp);
        assert_ne!(ea, eb);
    }
}
