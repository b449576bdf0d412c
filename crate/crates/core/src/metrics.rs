//! Reconstruction quality metrics: L1/L2 Chamfer distance, normal
//! consistency, F-score and volumetric IoU, plus area-weighted surface
//! sampling.
//!
//! Chamfer convention: mean (not sum) of nearest distances per direction,
//! the two direction means added. The L2 variant uses squared distances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::TriangleMesh;
use crate::geom::SpatialIndex;
use crate::vec3::Vec3;

/// Points with unit normals sampled from one mesh.
#[derive(Clone, Debug)]
pub struct SampledSurface {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
}

impl SampledSurface {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Area-weighted uniform sampling; normals come from the triangle planes.
pub fn sample_mesh(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<SampledSurface> {
    if mesh.is_empty() {
        return Err(Error::DegenerateMesh);
    }
    let tri_count = mesh.triangles.len();
    let mut cumulative = Vec::with_capacity(tri_count);
    let mut total = 0.0;
    for t in 0..tri_count {
        total += mesh.triangle_area(t);
        cumulative.push(total);
    }
    if total <= 0.0 {
        return Err(Error::DegenerateMesh);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for _ in 0..n {
        let r = rng.gen::<f64>() * total;
        let t = cumulative.partition_point(|&c| c < r).min(tri_count - 1);
        let [a, b, c] = mesh.triangle_points(t);
        let mut u = rng.gen::<f64>();
        let mut v = rng.gen::<f64>();
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        points.push(a + (b - a) * u + (c - a) * v);
        normals.push((b - a).cross(c - a).normalized());
    }
    Ok(SampledSurface { points, normals })
}

/// Symmetric Chamfer distance of the given order between two samples.
/// Order 2 adds the two directional means of squared nearest distances;
/// order 1 does the same on unsquared distances.
pub fn chamfer(a: &SampledSurface, b: &SampledSurface, order: u32) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("chamfer needs non-empty samples".into()));
    }
    if order != 1 && order != 2 {
        return Err(Error::InvalidArgument(format!("chamfer order must be 1 or 2, got {order}")));
    }
    let one_side = |from: &SampledSurface, to: &SampledSurface| -> f64 {
        let index = SpatialIndex::build(&to.points);
        let mut acc = 0.0;
        for &p in &from.points {
            let (_, d) = index.nearest(p);
            acc += if order == 2 { d * d } else { d };
        }
        acc / from.len() as f64
    };
    Ok(one_side(a, b) + one_side(b, a))
}

/// Mean absolute cosine between nearest-neighbor normal pairs, averaged
/// over both pairing directions.
pub fn normal_consistency(a: &SampledSurface, b: &SampledSurface) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("normal consistency needs samples".into()));
    }
    let one_side = |from: &SampledSurface, to: &SampledSurface| -> f64 {
        let index = SpatialIndex::build(&to.points);
        let mut acc = 0.0;
        for (i, &p) in from.points.iter().enumerate() {
            let (j, _) = index.nearest(p);
            acc += from.normals[i].dot(to.normals[j]).abs();
        }
        acc / from.len() as f64
    };
    Ok(0.5 * (one_side(a, b) + one_side(b, a)))
}

/// Harmonic mean of precision (fraction of `a` within `mu` of `b`) and
/// recall (the reverse); 0 when both vanish.
pub fn f_score(a: &SampledSurface, b: &SampledSurface, mu: f64) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument(format!("mu must be positive, got {mu}")));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("f-score needs non-empty samples".into()));
    }
    let within = |from: &SampledSurface, to: &SampledSurface| -> f64 {
        let index = SpatialIndex::build(&to.points);
        let hit = from
            .points
            .iter()
            .filter(|&&p| index.nearest(p).1 <= mu)
            .count();
        hit as f64 / from.len() as f64
    };
    let p = within(a, b);
    let r = within(b, a);
    if p + r == 0.0 {
        Ok(0.0)
    } else {
        Ok(2.0 * p * r / (p + r))
    }
}

/// Voxel occupancy by x-ray parity on a shared grid.
struct Occupancy {
    inside: Vec<bool>,
}

fn occupancy(mesh: &TriangleMesh, lo: Vec3, hi: Vec3, r: usize) -> Occupancy {
    let ext = hi - lo;
    let step = Vec3::new(ext.x / r as f64, ext.y / r as f64, ext.z / r as f64);
    // fixed sub-voxel offsets keep rays away from mesh vertices and edges
    let off_y = 0.5 + 1.3e-4;
    let off_z = 0.5 + 2.7e-4;

    // bucket triangles by the y/z cells their projection covers
    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); r * r];
    for (t, _) in mesh.triangles.iter().enumerate() {
        let [a, b, c] = mesh.triangle_points(t);
        let ymin = a.y.min(b.y).min(c.y);
        let ymax = a.y.max(b.y).max(c.y);
        let zmin = a.z.min(b.z).min(c.z);
        let zmax = a.z.max(b.z).max(c.z);
        let iy0 = (((ymin - lo.y) / step.y - off_y).floor().max(0.0)) as usize;
        let iy1 = (((ymax - lo.y) / step.y - off_y).ceil()).min((r - 1) as f64).max(0.0) as usize;
        let iz0 = (((zmin - lo.z) / step.z - off_z).floor().max(0.0)) as usize;
        let iz1 = (((zmax - lo.z) / step.z - off_z).ceil()).min((r - 1) as f64).max(0.0) as usize;
        for iz in iz0..=iz1.min(r - 1) {
            for iy in iy0..=iy1.min(r - 1) {
                buckets[iy + r * iz].push(t as u32);
            }
        }
    }

    let mut inside = vec![false; r * r * r];
    let mut hits: Vec<f64> = Vec::new();
    for iz in 0..r {
        for iy in 0..r {
            let y = lo.y + step.y * (iy as f64 + off_y);
            let z = lo.z + step.z * (iz as f64 + off_z);
            hits.clear();
            for &t in &buckets[iy + r * iz] {
                let [a, b, c] = mesh.triangle_points(t as usize);
                // solve for barycentric coordinates in the yz projection
                let d1 = (b.y - a.y, b.z - a.z);
                let d2 = (c.y - a.y, c.z - a.z);
                let det = d1.0 * d2.1 - d1.1 * d2.0;
                if det == 0.0 {
                    continue;
                }
                let py = y - a.y;
                let pz = z - a.z;
                let u = (py * d2.1 - pz * d2.0) / det;
                let v = (d1.0 * pz - d1.1 * py) / det;
                if u < 0.0 || v < 0.0 || u + v > 1.0 {
                    continue;
                }
                hits.push(a.x + u * (b.x - a.x) + v * (c.x - a.x));
            }
            hits.sort_by(|p, q| p.total_cmp(q));
            for ix in 0..r {
                let x = lo.x + step.x * (ix as f64 + 0.5);
                let below = hits.partition_point(|&h| h < x);
                inside[ix + r * (iy + r * iz)] = below % 2 == 1;
            }
        }
    }
    Occupancy { inside }
}

/// Intersection over union of two watertight meshes on a shared
/// `resolution`^3 voxelization of their joint bounding box.
pub fn volumetric_iou(a: &TriangleMesh, b: &TriangleMesh, resolution: usize) -> Result<f64> {
    if !a.is_watertight() {
        return Err(Error::NonWatertight("first mesh".into()));
    }
    if !b.is_watertight() {
        return Err(Error::NonWatertight("second mesh".into()));
    }
    let mut lo = a.vertices[0];
    let mut hi = a.vertices[0];
    for &v in a.vertices.iter().chain(&b.vertices) {
        lo = lo.min_by_component(v);
        hi = hi.max_by_component(v);
    }
    let pad = (hi - lo).norm() * 0.02 + 1e-9;
    let lo = lo - Vec3::new(pad, pad, pad);
    let hi = hi + Vec3::new(pad, pad, pad);
    let oa = occupancy(a, lo, hi, resolution);
    let ob = occupancy(b, lo, hi, resolution);
    let mut inter = 0usize;
    let mut union = 0usize;
    for (x, y) in oa.inside.iter().zip(&ob.inside) {
        if *x && *y {
            inter += 1;
        }
        if *x || *y {
            union += 1;
        }
    }
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

/// The `eval` command's JSON payload.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub l1cd: f64,
    pub l2cd: f64,
    pub nc: f64,
    pub fscore_mu: f64,
    pub fscore_2mu: f64,
    pub iou: Option<f64>,
    pub n_samples: usize,
    pub mu: f64,
    pub seed: u64,
}
