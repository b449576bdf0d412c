//! Isosurface extraction: field evaluation on regular grids, marching
//! cubes, per-part meshes via nearest-center masking, multi-level
//! releveling and convex-hull abstraction.

use std::collections::HashMap;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::geom::SpatialIndex;
use crate::hull;
use crate::mc_tables::{triangle_table, EDGES};
use crate::net::blend_codes;
use crate::tensor::Tensor;
use crate::vec3::Vec3;

/// Values of the field on an axis-aligned `R x R x R` node grid,
/// node-major: `values[ix + R*(iy + R*iz)]`.
#[derive(Clone, Debug)]
pub struct ScalarGrid {
    resolution: usize,
    lo: Vec3,
    hi: Vec3,
    values: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(resolution: usize, lo: Vec3, hi: Vec3, values: Vec<f64>) -> Self {
        assert!(resolution >= 2, "grid needs at least 2 nodes per axis");
        assert_eq!(values.len(), resolution * resolution * resolution);
        ScalarGrid { resolution, lo, hi, values }
    }

    /// Sample an analytic field (tests and oracles).
    pub fn from_fn(resolution: usize, lo: Vec3, hi: Vec3, f: impl Fn(Vec3) -> f64) -> Self {
        let mut values = Vec::with_capacity(resolution.pow(3));
        for iz in 0..resolution {
            for iy in 0..resolution {
                for ix in 0..resolution {
                    values.push(f(node_pos(resolution, lo, hi, ix, iy, iz)));
                }
            }
        }
        ScalarGrid::new(resolution, lo, hi, values)
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        (self.lo, self.hi)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.resolution * (iy + self.resolution * iz)
    }

    pub fn node_pos(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        node_pos(self.resolution, self.lo, self.hi, ix, iy, iz)
    }

    pub fn value_at(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        self.values[self.node_index(ix, iy, iz)]
    }

    /// Cell diagonal, the interpolation error scale.
    pub fn cell_diagonal(&self) -> f64 {
        let ext = self.hi - self.lo;
        let n = (self.resolution - 1) as f64;
        Vec3::new(ext.x / n, ext.y / n, ext.z / n).norm()
    }
}

fn node_pos(resolution: usize, lo: Vec3, hi: Vec3, ix: usize, iy: usize, iz: usize) -> Vec3 {
    let n = (resolution - 1) as f64;
    Vec3::new(
        lo.x + (hi.x - lo.x) * ix as f64 / n,
        lo.y + (hi.y - lo.y) * iy as f64 / n,
        lo.z + (hi.z - lo.z) * iz as f64 / n,
    )
}

/// Indexed triangle mesh. Triangles wind so normals point toward
/// increasing field values (outward for a signed distance field).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub part_id: Option<usize>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_points(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        (b - a).cross(c - a).norm() * 0.5
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Every undirected edge used exactly twice, once per direction.
    pub fn is_watertight(&self) -> bool {
        let mut net: HashMap<(u32, u32), (i64, u32)> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let entry = net.entry((a.min(b), a.max(b))).or_insert((0, 0));
                entry.0 += if a < b { 1 } else { -1 };
                entry.1 += 1;
            }
        }
        net.values().all(|&(signed, count)| signed == 0 && count == 2)
    }

    /// Map vertices through an affine denormalization.
    pub fn denormalized(&self, scale: f64, offset: Vec3) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|&v| v * scale + offset).collect(),
            triangles: self.triangles.clone(),
            part_id: self.part_id,
        }
    }
}

/// Classic marching cubes with per-edge linear interpolation. Grid
/// values exactly at the isolevel are nudged by +1e-10 first so corner
/// signs are always strict.
pub fn marching_cubes(grid: &ScalarGrid, iso: f64) -> Result<TriangleMesh> {
    let r = grid.resolution();
    let table = triangle_table();
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    let mut edge_vertex: HashMap<(u32, u32), u32> = HashMap::new();
    let mut crossings = 0usize;

    for iz in 0..r - 1 {
        for iy in 0..r - 1 {
            for ix in 0..r - 1 {
                let corner = |c: usize| -> (usize, usize, usize) {
                    (ix + (c & 1), iy + ((c >> 1) & 1), iz + ((c >> 2) & 1))
                };
                let mut case = 0usize;
                let mut vals = [0.0f64; 8];
                for c in 0..8 {
                    let (cx, cy, cz) = corner(c);
                    let v = grid.value_at(cx, cy, cz);
                    vals[c] = if v == iso { v + 1e-10 } else { v };
                    if vals[c] < iso {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                crossings += 1;
                let mut local: [u32; 12] = [u32::MAX; 12];
                for tri in &table[case] {
                    for &e in tri {
                        if local[e] != u32::MAX {
                            continue;
                        }
                        let (ca, cb) = EDGES[e];
                        let (ax, ay, az) = corner(ca);
                        let (bx, by, bz) = corner(cb);
                        let na = grid.node_index(ax, ay, az) as u32;
                        let nb = grid.node_index(bx, by, bz) as u32;
                        let key = (na.min(nb), na.max(nb));
                        let id = *edge_vertex.entry(key).or_insert_with(|| {
                            let (va, vb) = (vals[ca], vals[cb]);
                            let t = (iso - va) / (vb - va);
                            let pa = grid.node_pos(ax, ay, az);
                            let pb = grid.node_pos(bx, by, bz);
                            vertices.push(pa + (pb - pa) * t);
                            (vertices.len() - 1) as u32
                        });
                        local[e] = id;
                    }
                    // the three cube edges are distinct, so the vertex ids
                    // are too; strict corner signs keep t inside (0,1) and
                    // positions distinct. Dropping small triangles here
                    // would breach the closed complex.
                    triangles.push([local[tri[0]], local[tri[1]], local[tri[2]]]);
                }
            }
        }
    }
    if crossings == 0 {
        return Err(Error::EmptyMesh);
    }
    Ok(TriangleMesh { vertices, triangles, part_id: None })
}

/// How masked grid nodes are evaluated during part extraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskMode {
    /// Evaluate with the checkpoint's reserved unseen latent code.
    UnseenCode,
    /// Assign a constant positive distance.
    Clamp,
}

impl std::str::FromStr for MaskMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unseen" => Ok(MaskMode::UnseenCode),
            "clamp" => Ok(MaskMode::Clamp),
            other => Err(Error::InvalidArgument(format!("unknown mask mode '{other}'"))),
        }
    }
}

pub const CLAMP_DISTANCE: f64 = 0.05;

/// Evaluates the checkpoint's field with the same affinity path training
/// used; supports per-query masking for part extraction.
pub struct FieldEvaluator<'a> {
    ckpt: &'a Checkpoint,
    index: SpatialIndex,
}

const EVAL_CHUNK: usize = 4096;

impl<'a> FieldEvaluator<'a> {
    pub fn new(ckpt: &'a Checkpoint) -> Self {
        FieldEvaluator { ckpt, index: SpatialIndex::build(ckpt.cloud.points()) }
    }

    pub fn affinity(&self, q: Vec3) -> Result<Vec<f64>> {
        let ctx = crate::affinity::AffinityContext {
            config: self.ckpt.affinity,
            centers: &self.ckpt.centers,
            cloud: &self.ckpt.cloud,
            index: &self.index,
            table: self.ckpt.table.as_ref(),
        };
        Ok(ctx.affinity(q)?.into_values())
    }

    /// Field value at one query (normalized coordinates).
    pub fn value(&self, q: Vec3) -> Result<f64> {
        let a = self.affinity(q)?;
        let w = blend_codes(&a, &self.ckpt.codes);
        Ok(self.ckpt.net.eval(q, &w))
    }

    /// Batched evaluation.
    pub fn values(&self, queries: &[Vec3]) -> Result<Vec<f64>> {
        self.values_masked(queries, None, 1)
    }

    fn eval_chunk(
        &self,
        chunk: &[Vec3],
        base: usize,
        mask: Option<(&[bool], MaskMode)>,
    ) -> Result<Vec<f64>> {
        let t_dim = self.ckpt.codes.latent_dim();
        let mut q = Tensor::zeros(chunk.len(), 3);
        let mut w = Tensor::zeros(chunk.len(), t_dim);
        let mut clamp_rows: Vec<usize> = Vec::new();
        for (r, &p) in chunk.iter().enumerate() {
            q.set(r, 0, p.x);
            q.set(r, 1, p.y);
            q.set(r, 2, p.z);
            let keep = mask.map_or(true, |(m, _)| m[base + r]);
            if keep {
                let a = self.affinity(p)?;
                let wv = blend_codes(&a, &self.ckpt.codes);
                for (c, &v) in wv.iter().enumerate() {
                    w.set(r, c, v);
                }
            } else {
                match mask.unwrap().1 {
                    MaskMode::UnseenCode => {
                        for (c, &v) in self.ckpt.unseen_code.iter().enumerate() {
                            w.set(r, c, v);
                        }
                    }
                    MaskMode::Clamp => clamp_rows.push(r),
                }
            }
        }
        let mut vals = self.ckpt.net.forward_batch(&q, &w);
        for r in clamp_rows {
            vals[r] = CLAMP_DISTANCE;
        }
        Ok(vals)
    }

    /// Chunked evaluation, optionally across worker threads. Chunk
    /// results are spliced back in index order, so the output does not
    /// depend on scheduling.
    fn values_masked(
        &self,
        queries: &[Vec3],
        mask: Option<(&[bool], MaskMode)>,
        threads: usize,
    ) -> Result<Vec<f64>> {
        let chunks: Vec<&[Vec3]> = queries.chunks(EVAL_CHUNK).collect();
        if threads <= 1 || chunks.len() <= 1 {
            let mut out = Vec::with_capacity(queries.len());
            for (i, chunk) in chunks.iter().enumerate() {
                out.extend(self.eval_chunk(chunk, i * EVAL_CHUNK, mask)?);
            }
            return Ok(out);
        }
        let workers = threads.min(chunks.len());
        let mut slots: Vec<Option<Result<Vec<f64>>>> = Vec::new();
        slots.resize_with(chunks.len(), || None);
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slot_refs: Vec<std::sync::Mutex<&mut Option<Result<Vec<f64>>>>> =
            slots.iter_mut().map(std::sync::Mutex::new).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if i >= chunks.len() {
                        break;
                    }
                    let r = self.eval_chunk(chunks[i], i * EVAL_CHUNK, mask);
                    **slot_refs[i].lock().unwrap() = Some(r);
                });
            }
        });
        let mut out = Vec::with_capacity(queries.len());
        for slot in slots {
            out.extend(slot.expect("chunk computed")?);
        }
        Ok(out)
    }
}

/// Grid bounds: the normalized cloud's box padded by 10% of its longest
/// extent on every side.
pub fn grid_bounds(ckpt: &Checkpoint) -> (Vec3, Vec3) {
    let (lo, hi) = ckpt.cloud.bounds();
    let ext = hi - lo;
    let pad = 0.10 * ext.x.max(ext.y).max(ext.z);
    (lo - Vec3::new(pad, pad, pad), hi + Vec3::new(pad, pad, pad))
}

fn grid_queries(resolution: usize, lo: Vec3, hi: Vec3) -> Vec<Vec3> {
    let mut queries = Vec::with_capacity(resolution.pow(3));
    for iz in 0..resolution {
        for iy in 0..resolution {
            for ix in 0..resolution {
                queries.push(node_pos(resolution, lo, hi, ix, iy, iz));
            }
        }
    }
    queries
}

/// `f(node, a(node))` on the default grid for this checkpoint.
pub fn evaluate_grid(ckpt: &Checkpoint, resolution: usize) -> Result<ScalarGrid> {
    evaluate_grid_threads(ckpt, resolution, 1)
}

pub fn evaluate_grid_threads(ckpt: &Checkpoint, resolution: usize, threads: usize) -> Result<ScalarGrid> {
    let (lo, hi) = grid_bounds(ckpt);
    let eval = FieldEvaluator::new(ckpt);
    let queries = grid_queries(resolution, lo, hi);
    let values = eval.values_masked(&queries, None, threads)?;
    Ok(ScalarGrid::new(resolution, lo, hi, values))
}

/// Grid where only nodes whose merged nearest center passes `keep`
/// evaluate normally; the rest see the unseen code or the clamp value.
fn evaluate_masked_grid(
    ckpt: &Checkpoint,
    resolution: usize,
    keep: &dyn Fn(usize) -> bool,
    mode: MaskMode,
    threads: usize,
) -> Result<ScalarGrid> {
    let (lo, hi) = grid_bounds(ckpt);
    let eval = FieldEvaluator::new(ckpt);
    let queries = grid_queries(resolution, lo, hi);
    let mask: Vec<bool> = queries
        .iter()
        .map(|&q| keep(ckpt.centers.nearest_center(q)))
        .collect();
    let values = eval.values_masked(&queries, Some((&mask, mode)), threads)?;
    Ok(ScalarGrid::new(resolution, lo, hi, values))
}

/// Mesh of the part whose nearest region center is `center`.
pub fn extract_part(
    ckpt: &Checkpoint,
    center: usize,
    resolution: usize,
    mode: MaskMode,
) -> Result<TriangleMesh> {
    extract_part_threads(ckpt, center, resolution, mode, 1)
}

pub fn extract_part_threads(
    ckpt: &Checkpoint,
    center: usize,
    resolution: usize,
    mode: MaskMode,
    threads: usize,
) -> Result<TriangleMesh> {
    if center >= ckpt.centers.len() {
        return Err(Error::InvalidArgument(format!(
            "part {center} out of range for {} centers",
            ckpt.centers.len()
        )));
    }
    let grid = evaluate_masked_grid(ckpt, resolution, &|c| c == center, mode, threads)?;
    let mut mesh = marching_cubes(&grid, 0.0)?;
    mesh.part_id = Some(center);
    Ok(mesh)
}

#[derive(Clone, Debug)]
pub struct PartMesh {
    /// Kept-center index at this level.
    pub id: usize,
    pub mesh: TriangleMesh,
    /// Original center indices merged into this part.
    pub merged: Vec<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct Provenance {
    pub checkpoint: String,
    pub resolution: usize,
    pub level: usize,
    pub mode: String,
}

#[derive(Clone, Debug)]
pub struct MeshBundle {
    pub global: TriangleMesh,
    pub parts: Vec<PartMesh>,
    pub hulls: Vec<TriangleMesh>,
    /// Part ids whose hull fell back to a bounding tetrahedron.
    pub degenerate_hulls: Vec<usize>,
    pub provenance: Provenance,
}

/// Re-partition a trained model into `level` parts: FPS over the stored
/// centers picks the kept ones, every original center joins its nearest
/// kept center (lowest index on ties), and each merged cell is extracted
/// as one part. The global mesh is extracted once, unmasked.
pub fn relevel(
    ckpt: &Checkpoint,
    level: usize,
    resolution: usize,
    mode: MaskMode,
) -> Result<MeshBundle> {
    relevel_threads(ckpt, level, resolution, mode, 1)
}

pub fn relevel_threads(
    ckpt: &Checkpoint,
    level: usize,
    resolution: usize,
    mode: MaskMode,
    threads: usize,
) -> Result<MeshBundle> {
    let i_count = ckpt.centers.len();
    if level == 0 || level > i_count {
        return Err(Error::InvalidArgument(format!(
            "level {level} out of range for {i_count} centers"
        )));
    }
    let kept = crate::geom::fps_points(ckpt.centers.centers(), level, 0);
    let merge: Vec<usize> = ckpt
        .centers
        .centers()
        .iter()
        .map(|&c| {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (k, &ki) in kept.iter().enumerate() {
                let d = c.dist_sq(ckpt.centers.center(ki));
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            best
        })
        .collect();

    let grid = evaluate_grid_threads(ckpt, resolution, threads)?;
    let global = marching_cubes(&grid, 0.0)?;

    let mut parts = Vec::with_capacity(level);
    for k in 0..level {
        let merged: Vec<usize> = (0..i_count).filter(|&c| merge[c] == k).collect();
        let grid = evaluate_masked_grid(ckpt, resolution, &|c| merge[c] == k, mode, threads)?;
        let mesh = match marching_cubes(&grid, 0.0) {
            Ok(mut m) => {
                m.part_id = Some(k);
                m
            }
            Err(Error::EmptyMesh) => TriangleMesh { part_id: Some(k), ..Default::default() },
            Err(e) => return Err(e),
        };
        parts.push(PartMesh { id: k, mesh, merged });
    }
    Ok(MeshBundle {
        global,
        parts,
        hulls: Vec::new(),
        degenerate_hulls: Vec::new(),
        provenance: Provenance {
            checkpoint: String::new(),
            resolution,
            level,
            mode: ckpt.affinity.mode.as_str().to_string(),
        },
    })
}

/// Convex hull of each part's vertex set; parts with too little geometry
/// get a bounding tetrahedron and are flagged.
pub fn abstract_hulls(bundle: &mut MeshBundle) -> Result<()> {
    bundle.hulls.clear();
    bundle.degenerate_hulls.clear();
    for part in &bundle.parts {
        if part.mesh.is_empty() {
            return Err(Error::DegeneratePart(format!(
                "part {} has no surface inside its cell",
                part.id
            )));
        }
        match hull::convex_hull(&part.mesh.vertices) {
            Ok(mut h) => {
                h.part_id = Some(part.id);
                bundle.hulls.push(h);
            }
            Err(Error::DegeneratePart(_)) => {
                let mut h = hull::bounding_tetrahedron(&part.mesh.vertices);
                h.part_id = Some(part.id);
                bundle.hulls.push(h);
                bundle.degenerate_hulls.push(part.id);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere_grid(r: usize, radius: f64) -> ScalarGrid {
        let half = radius + 0.15;
        ScalarGrid::from_fn(
            r,
            Vec3::new(-half, -half, -half),
            Vec3::new(half, half, half),
            |p| p.norm() - radius,
        )
    }

    #[test]
    fn all_positive_grid_is_empty_mesh() {
        let grid = ScalarGrid::from_fn(
            8,
            Vec3::new(-1.0, -1.0, -1.0),
            Vec3::new(1.0, 1.0, 1.0),
            |_| 1.0,
        );
        assert!(matches!(marching_cubes(&grid, 0.0), Err(Error::EmptyMesh)));
    }

    #[test]
    fn sphere_vertices_on_the_sphere() {
        let grid = sphere_grid(64, 0.3);
        let mesh = marching_cubes(&grid, 0.0).unwrap();
        assert!(!mesh.is_empty());
        let h = grid.cell_diagonal();
        for &v in &mesh.vertices {
            let r = v.norm();
            assert!(
                (r - 0.3).abs() <= h,
                "vertex radius {r} outside [0.3-h, 0.3+h], h={h}"
            );
        }
    }

    #[test]
    fn sphere_area_within_three_percent() {
        let grid = sphere_grid(64, 0.3);
        let mesh = marching_cubes(&grid, 0.0).unwrap();
        let area = mesh.area();
        let expect = 4.0 * std::f64::consts::PI * 0.09;
        assert!(
            (area - expect).abs() / expect < 0.03,
            "area {area} vs {expect}"
        );
    }

    #[test]
    fn sphere_mesh_is_watertight() {
        let grid = sphere_grid(48, 0.3);
        let mesh = marching_cubes(&grid, 0.0).unwrap();
        assert!(mesh.is_watertight());
    }

    #[test]
    fn torus_mesh_is_watertight_with_right_area() {
        let grid = ScalarGrid::from_fn(
            56,
            Vec3::new(-0.45, -0.45, -0.25),
            Vec3::new(0.45, 0.45, 0.25),
            |p| {
                let ring = (p.x * p.x + p.y * p.y).sqrt() - 0.25;
                (ring * ring + p.z * p.z).sqrt() - 0.1
            },
        );
        let mesh = marching_cubes(&grid, 0.0).unwrap();
        assert!(mesh.is_watertight());
        let expect = 4.0 * std::f64::consts::PI.powi(2) * 0.25 * 0.1;
        assert!((mesh.area() - expect).abs() / expect < 0.03);
    }

    #[test]
    fn random_smooth_field_is_watertight() {
        let grid = ScalarGrid::from_fn(
            33,
            Vec3::new(-1.0, -1.0, -1.0),
            Vec3::new(1.0, 1.0, 1.0),
            |p| {
                let b1 = (-(p - Vec3::new(0.3, 0.1, -0.2)).norm_sq() * 8.0).exp();
                let b2 = (-(p - Vec3::new(-0.4, -0.2, 0.3)).norm_sq() * 6.0).exp();
                let b3 = (-(p - Vec3::new(0.0, 0.4, 0.2)).norm_sq() * 10.0).exp();
                0.5 - b1 - b2 - b3
            },
        );
        let mesh = marching_cubes(&grid, 0.0).unwrap();
        assert!(!mesh.is_empty());
        assert!(mesh.is_watertight());
    }

    #[test]
    fn normals_follow_field_growth() {
        let grid = sphere_grid(32, 0.3);
        let mesh = marching_cubes(&grid, 0.0).unwrap();
        for t in 0..mesh.triangles.len() {
            let [a, b, c] = mesh.triangle_points(t);
            let n = (b - a).cross(c - a);
            let centroid = (a + b + c) / 3.0;
            assert!(n.dot(centroid) > 0.0, "triangle {t} winds inward");
        }
    }

    #[test]
    fn two_node_grid_has_eight_values() {
        let grid = ScalarGrid::from_fn(
            2,
            Vec3::new(-1.0, -1.0, -1.0),
            Vec3::new(1.0, 1.0, 1.0),
            |p| p.norm() - 0.1,
        );
        assert_eq!(grid.values().len(), 8);
        assert!(grid.values().iter().all(|&v| v > 0.0));
        assert!(matches!(marching_cubes(&grid, 0.0), Err(Error::EmptyMesh)));
    }
}
