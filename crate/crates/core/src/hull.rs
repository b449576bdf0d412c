//! Incremental 3D convex hull.
//!
//! Points are inserted in lexicographic order. Degeneracies (coplanar
//! quadruples, the cube-corner case) are broken by a fixed per-index
//! perturbation of 1e-12 of the bounding diagonal applied inside the
//! predicates only; emitted vertices keep their original coordinates.
//! Faces wind outward.

use crate::error::{Error, Result};
use crate::extract::TriangleMesh;
use crate::vec3::Vec3;

/// Deterministic tiny offset per input index; enough to make orientation
/// tests generic, far above f64 rounding noise.
fn perturbed(points: &[Vec3], diag: f64, i: usize) -> Vec3 {
    let mut h = (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut next = || {
        h ^= h >> 33;
        h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
        h ^= h >> 33;
        (h >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let eps = 1e-12 * diag;
    points[i] + Vec3::new(next() * eps, next() * eps, next() * eps)
}

#[derive(Clone, Copy)]
struct Face {
    v: [usize; 3],
    normal: Vec3,
    offset: f64,
    alive: bool,
}

impl Face {
    fn new(p: &[Vec3], a: usize, b: usize, c: usize) -> Face {
        let normal = (p[b] - p[a]).cross(p[c] - p[a]);
        Face { v: [a, b, c], normal, offset: normal.dot(p[a]), alive: true }
    }

    fn sees(&self, q: Vec3, eps: f64) -> bool {
        self.normal.dot(q) - self.offset > eps * self.normal.norm()
    }
}

/// Convex hull of a point set as an outward-wound triangle mesh whose
/// vertices are a subset of the input points.
pub fn convex_hull(points: &[Vec3]) -> Result<TriangleMesh> {
    if points.len() < 4 {
        return Err(Error::DegeneratePart(format!(
            "{} points cannot span a volume",
            points.len()
        )));
    }
    let mut lo = points[0];
    let mut hi = points[0];
    for &p in points {
        lo = lo.min_by_component(p);
        hi = hi.max_by_component(p);
    }
    let diag = (hi - lo).norm();
    if diag == 0.0 {
        return Err(Error::DegeneratePart("all points identical".into()));
    }

    let order = {
        let mut idx: Vec<usize> = (0..points.len()).collect();
        idx.sort_by(|&a, &b| {
            points[a]
                .x
                .total_cmp(&points[b].x)
                .then(points[a].y.total_cmp(&points[b].y))
                .then(points[a].z.total_cmp(&points[b].z))
                .then(a.cmp(&b))
        });
        idx
    };

    // initial simplex, degeneracy checked on raw coordinates
    let p0 = order[0];
    let p1 = *order[1..]
        .iter()
        .max_by(|&&a, &&b| {
            points[a]
                .dist_sq(points[p0])
                .total_cmp(&points[b].dist_sq(points[p0]))
                .then(b.cmp(&a))
        })
        .unwrap();
    if points[p1].dist(points[p0]) < 1e-9 * diag {
        return Err(Error::DegeneratePart("points coincide".into()));
    }
    let dir = (points[p1] - points[p0]).normalized();
    let line_dist = |q: Vec3| {
        let d = q - points[p0];
        (d - dir * d.dot(dir)).norm()
    };
    let p2 = *order
        .iter()
        .filter(|&&i| i != p0 && i != p1)
        .max_by(|&&a, &&b| line_dist(points[a]).total_cmp(&line_dist(points[b])).then(b.cmp(&a)))
        .unwrap();
    if line_dist(points[p2]) < 1e-9 * diag {
        return Err(Error::DegeneratePart("points are collinear".into()));
    }
    let plane_n = (points[p1] - points[p0])
        .cross(points[p2] - points[p0])
        .normalized();
    let plane_dist = |q: Vec3| (q - points[p0]).dot(plane_n).abs();
    let p3 = *order
        .iter()
        .filter(|&&i| i != p0 && i != p1 && i != p2)
        .max_by(|&&a, &&b| plane_dist(points[a]).total_cmp(&plane_dist(points[b])).then(b.cmp(&a)))
        .unwrap();
    if plane_dist(points[p3]) < 1e-9 * diag {
        return Err(Error::DegeneratePart("points are coplanar".into()));
    }

    // the algorithm itself runs on perturbed coordinates
    let pp: Vec<Vec3> = (0..points.len()).map(|i| perturbed(points, diag, i)).collect();
    let eps = 1e-13 * diag;

    let mut faces: Vec<Face> = Vec::new();
    let (a, d) = (p0, p3);
    let volume = (pp[p1] - pp[a]).cross(pp[p2] - pp[a]).dot(pp[d] - pp[a]);
    let (b, c) = if volume > 0.0 { (p2, p1) } else { (p1, p2) };
    faces.push(Face::new(&pp, a, b, c));
    faces.push(Face::new(&pp, a, c, d));
    faces.push(Face::new(&pp, c, b, d));
    faces.push(Face::new(&pp, b, a, d));

    for &i in &order {
        if i == p0 || i == p1 || i == p2 || i == p3 {
            continue;
        }
        let q = pp[i];
        let visible: Vec<usize> = (0..faces.len())
            .filter(|&f| faces[f].alive && faces[f].sees(q, eps))
            .collect();
        if visible.is_empty() {
            continue;
        }
        // horizon: directed edges of visible faces whose twin is hidden
        let mut visible_edges = std::collections::HashSet::new();
        for &f in &visible {
            let v = faces[f].v;
            for k in 0..3 {
                visible_edges.insert((v[k], v[(k + 1) % 3]));
            }
        }
        let mut horizon = Vec::new();
        for &f in &visible {
            let v = faces[f].v;
            for k in 0..3 {
                let e = (v[k], v[(k + 1) % 3]);
                if !visible_edges.contains(&(e.1, e.0)) {
                    horizon.push(e);
                }
            }
        }
        for &f in &visible {
            faces[f].alive = false;
        }
        for (u, v) in horizon {
            faces.push(Face::new(&pp, u, v, i));
        }
    }

    // compact to used vertices, restore original coordinates
    let mut remap = vec![u32::MAX; points.len()];
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for f in faces.iter().filter(|f| f.alive) {
        let mut tri = [0u32; 3];
        for (k, &vi) in f.v.iter().enumerate() {
            if remap[vi] == u32::MAX {
                remap[vi] = vertices.len() as u32;
                vertices.push(points[vi]);
            }
            tri[k] = remap[vi];
        }
        triangles.push(tri);
    }
    Ok(TriangleMesh { vertices, triangles, part_id: None })
}

/// Fallback for degenerate parts: a tetrahedron enclosing the bounding
/// box, centered on it.
pub fn bounding_tetrahedron(points: &[Vec3]) -> TriangleMesh {
    let mut lo = points[0];
    let mut hi = points[0];
    for &p in points {
        lo = lo.min_by_component(p);
        hi = hi.max_by_component(p);
    }
    let c = (lo + hi) * 0.5;
    let r = ((hi - lo).norm() * 0.5).max(1e-6);
    // regular tetrahedron with insphere radius r encloses the ball
    let s = 3.0 * r;
    let verts = [
        c + Vec3::new(s, s, s),
        c + Vec3::new(s, -s, -s),
        c + Vec3::new(-s, s, -s),
        c + Vec3::new(-s, -s, s),
    ];
    convex_hull(&verts).expect("regular tetrahedron is non-degenerate")
}

/// Largest signed distance of `q` beyond any hull face plane; negative
/// when strictly inside.
pub fn signed_excess(hull: &TriangleMesh, q: Vec3) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for t in 0..hull.triangles.len() {
        let [a, b, c] = hull.triangle_points(t);
        let n = (b - a).cross(c - a);
        let nn = n.norm();
        if nn == 0.0 {
            continue;
        }
        worst = worst.max(n.dot(q - a) / nn);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// O(n^4) facet enumeration: every triple whose plane has all other
    /// points on one side spans a facet; facet corners are the extreme set.
    fn hull_vertices_brute_force(points: &[Vec3]) -> Vec<usize> {
        let n = points.len();
        let mut extreme = vec![false; n];
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    let normal = (points[j] - points[i]).cross(points[k] - points[i]);
                    if normal.norm() < 1e-12 {
                        continue;
                    }
                    let mut pos = false;
                    let mut neg = false;
                    for (m, &p) in points.iter().enumerate() {
                        if m == i || m == j || m == k {
                            continue;
                        }
                        let d = normal.dot(p - points[i]);
                        if d > 0.0 {
                            pos = true;
                        } else if d < 0.0 {
                            neg = true;
                        }
                        if pos && neg {
                            break;
                        }
                    }
                    if !(pos && neg) {
                        extreme[i] = true;
                        extreme[j] = true;
                        extreme[k] = true;
                    }
                }
            }
        }
        (0..n).filter(|&i| extreme[i]).collect()
    }

    fn hull_vertex_set(mesh: &TriangleMesh, points: &[Vec3]) -> Vec<usize> {
        let mut out: Vec<usize> = mesh
            .vertices
            .iter()
            .map(|v| {
                points
                    .iter()
                    .position(|p| p == v)
                    .expect("hull vertex is an input point")
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    #[test]
    fn cube_corners() {
        let pts: Vec<Vec3> = (0..8)
            .map(|i| {
                Vec3::new(
                    (i & 1) as f64,
                    ((i >> 1) & 1) as f64,
                    ((i >> 2) & 1) as f64,
                )
            })
            .collect();
        let hull = convex_hull(&pts).unwrap();
        assert_eq!(hull.vertices.len(), 8);
        assert_eq!(hull.triangles.len(), 12);
        assert!(hull.is_watertight());
    }

    #[test]
    fn tetrahedron_plus_interior_point() {
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.2, 0.2, 0.2),
        ];
        let hull = convex_hull(&pts).unwrap();
        assert_eq!(hull.vertices.len(), 4);
        assert_eq!(hull.triangles.len(), 4);
    }

    #[test]
    fn degenerate_inputs() {
        let coplanar: Vec<Vec3> = (0..6)
            .map(|i| Vec3::new(i as f64, (i * i) as f64, 0.0))
            .collect();
        assert!(matches!(convex_hull(&coplanar), Err(Error::DegeneratePart(_))));
        let collinear: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(convex_hull(&collinear), Err(Error::DegeneratePart(_))));
    }

    #[test]
    fn matches_brute_force_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..5 {
            let n = 40 + trial * 10;
            let pts: Vec<Vec3> = (0..n)
                .map(|_| Vec3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()))
                .collect();
            let hull = convex_hull(&pts).unwrap();
            assert!(hull.is_watertight());
            let got = hull_vertex_set(&hull, &pts);
            let expect = hull_vertices_brute_force(&pts);
            assert_eq!(got, expect, "trial {trial}");
        }
    }

    #[test]
    fn all_points_inside_their_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Vec3> = (0..300)
            .map(|_| {
                let v = Vec3::new(
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                );
                v.normalized() * rng.gen::<f64>().powf(0.3)
            })
            .collect();
        let hull = convex_hull(&pts).unwrap();
        for &p in &pts {
            assert!(signed_excess(&hull, p) <= 1e-9);
        }
    }

    #[test]
    fn hull_of_convex_set_uses_subset() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Vec3> = (0..60)
            .map(|_| {
                Vec3::new(
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                    rng.gen::<f64>() - 0.5,
                )
                .normalized()
            })
            .collect();
        let hull = convex_hull(&pts).unwrap();
        for v in &hull.vertices {
            assert!(pts.iter().any(|p| p == v));
        }
        assert_eq!(hull.vertices.len(), 60);
    }

    #[test]
    fn bounding_tetrahedron_contains_points() {
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.7, 0.7, 0.0),
        ];
        let tet = bounding_tetrahedron(&pts);
        assert_eq!(tet.vertices.len(), 4);
        for &p in &pts {
            assert!(signed_excess(&tet, p) <= 1e-9);
        }
    }
}
