//! Point-cloud container, normalization, farthest point sampling and the
//! spatial machinery (kd-tree, kNN-graph geodesics) the rest of the crate
//! queries against.

mod geodesic;
mod kdtree;

pub use geodesic::{
    build_geodesic_table, build_geodesic_table_threads, build_knn_graph, dijkstra, GeodesicTable,
};
pub use kdtree::SpatialIndex;

use crate::error::{Error, Result};
use crate::vec3::Vec3;

/// Surface samples of a single shape, optionally with per-point segment
/// labels (contiguous ids `0..S-1`).
#[derive(Clone, Debug)]
pub struct PointCloud {
    points: Vec<Vec3>,
    segment_labels: Option<Vec<u32>>,
}

impl PointCloud {
    /// At least 4 finite points; labels, when present, must match the point
    /// count and form a contiguous `0..S-1` range.
    pub fn new(points: Vec<Vec3>, segment_labels: Option<Vec<u32>>) -> Result<Self> {
        if points.len() < 4 {
            return Err(Error::InvalidArgument(format!(
                "point cloud needs at least 4 points, got {}",
                points.len()
            )));
        }
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite coordinate in point cloud: {p:?}"
            )));
        }
        if let Some(labels) = &segment_labels {
            if labels.len() != points.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} labels for {} points",
                    labels.len(),
                    points.len()
                )));
            }
            let max = *labels.iter().max().unwrap();
            let mut seen = vec![false; max as usize + 1];
            for &l in labels {
                seen[l as usize] = true;
            }
            if seen.iter().any(|s| !s) {
                return Err(Error::InvalidArgument(
                    "segment labels must form a contiguous 0..S-1 range".into(),
                ));
            }
        }
        Ok(PointCloud { points, segment_labels })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Vec3 {
        self.points[i]
    }

    pub fn segment_labels(&self) -> Option<&[u32]> {
        self.segment_labels.as_deref()
    }

    /// Number of segments S, when labeled.
    pub fn segment_count(&self) -> Option<usize> {
        self.segment_labels
            .as_ref()
            .map(|l| *l.iter().max().unwrap() as usize + 1)
    }

    pub fn centroid(&self) -> Vec3 {
        let mut c = Vec3::ZERO;
        for &p in &self.points {
            c += p;
        }
        c / self.points.len() as f64
    }

    /// Axis-aligned bounding box (min corner, max corner).
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for &p in &self.points[1..] {
            lo = lo.min_by_component(p);
            hi = hi.max_by_component(p);
        }
        (lo, hi)
    }
}

/// Region centers picked on the cloud. A part is identified with its
/// center index.
#[derive(Clone, Debug)]
pub struct RegionCenters {
    centers: Vec<Vec3>,
    source_indices: Vec<usize>,
}

impl RegionCenters {
    pub fn new(centers: Vec<Vec3>, source_indices: Vec<usize>) -> Self {
        assert_eq!(centers.len(), source_indices.len());
        RegionCenters { centers, source_indices }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[Vec3] {
        &self.centers
    }

    pub fn center(&self, i: usize) -> Vec3 {
        self.centers[i]
    }

    pub fn source_indices(&self) -> &[usize] {
        &self.source_indices
    }

    /// Index of the center nearest to `q`, lowest index on ties.
    pub fn nearest_center(&self, q: Vec3) -> usize {
        let mut best = 0usize;
        let mut best_d = q.dist_sq(self.centers[0]);
        for (i, &c) in self.centers.iter().enumerate().skip(1) {
            let d = q.dist_sq(c);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

/// Centers the cloud on its centroid and divides by the maximum axis
/// extent, so the result has extent <= 1 and centroid at the origin.
/// The returned `(scale, offset)` invert the transform:
/// `original = normalized * scale + offset`.
pub fn normalize(cloud: &PointCloud) -> Result<(PointCloud, f64, Vec3)> {
    let offset = cloud.centroid();
    let (lo, hi) = cloud.bounds();
    let ext = hi - lo;
    let scale = ext.x.max(ext.y).max(ext.z);
    if scale <= 0.0 {
        return Err(Error::DegenerateInput(
            "all points identical; cannot normalize".into(),
        ));
    }
    let points = cloud
        .points
        .iter()
        .map(|&p| (p - offset) / scale)
        .collect();
    let out = PointCloud {
        points,
        segment_labels: cloud.segment_labels.clone(),
    };
    Ok((out, scale, offset))
}

/// Greedy farthest point sampling over a raw point list. The first pick
/// is the point nearest the centroid when `seed == 0`, otherwise the
/// point at `seed mod N`; each subsequent pick maximizes the minimum
/// distance to the already chosen set, lowest index on ties.
pub fn fps_points(points: &[Vec3], count: usize, seed: u64) -> Vec<usize> {
    assert!(count >= 1 && count <= points.len());
    let n = points.len();
    let first = if seed == 0 {
        let mut c = Vec3::ZERO;
        for &p in points {
            c += p;
        }
        let c = c / n as f64;
        let mut best = 0usize;
        let mut best_d = points[0].dist_sq(c);
        for (i, &p) in points.iter().enumerate().skip(1) {
            let d = p.dist_sq(c);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    } else {
        (seed % n as u64) as usize
    };

    let mut chosen = Vec::with_capacity(count);
    chosen.push(first);
    let mut min_d = vec![f64::INFINITY; n];
    let mut last = first;
    while chosen.len() < count {
        let lp = points[last];
        let mut far = 0usize;
        let mut far_d = f64::NEG_INFINITY;
        for (i, &p) in points.iter().enumerate() {
            let d = p.dist_sq(lp);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > far_d {
                far_d = min_d[i];
                far = i;
            }
        }
        chosen.push(far);
        last = far;
    }
    chosen
}

/// One center per segment for semantic mode: the labeled point nearest
/// its segment's centroid (lowest index on ties), center `i` for
/// segment `i`.
pub fn segment_representatives(cloud: &PointCloud) -> Result<RegionCenters> {
    let labels = cloud.segment_labels().ok_or_else(|| {
        Error::InvalidArgument("segment representatives need a labeled cloud".into())
    })?;
    let s = cloud.segment_count().unwrap();
    let mut sums = vec![Vec3::ZERO; s];
    let mut counts = vec![0usize; s];
    for (i, &p) in cloud.points().iter().enumerate() {
        sums[labels[i] as usize] += p;
        counts[labels[i] as usize] += 1;
    }
    let mut chosen = vec![usize::MAX; s];
    let mut best = vec![f64::INFINITY; s];
    for (i, &p) in cloud.points().iter().enumerate() {
        let seg = labels[i] as usize;
        let c = sums[seg] / counts[seg] as f64;
        let d = p.dist_sq(c);
        if d < best[seg] {
            best[seg] = d;
            chosen[seg] = i;
        }
    }
    let centers = chosen.iter().map(|&i| cloud.point(i)).collect();
    Ok(RegionCenters::new(centers, chosen))
}

/// Farthest point sampling of region centers on a cloud.
pub fn farthest_point_sample(cloud: &PointCloud, count: usize, seed: u64) -> Result<RegionCenters> {
    let n = cloud.len();
    if count == 0 || count > n {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {count} centers from {n} points"
        )));
    }
    let chosen = fps_points(&cloud.points, count, seed);
    let centers = chosen.iter().map(|&i| cloud.points[i]).collect();
    Ok(RegionCenters::new(centers, chosen))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|&p| Vec3::from(p)).collect(), None).unwrap()
    }

    #[test]
    fn normalize_tetrahedron_scale() {
        let c = cloud(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]]);
        let (out, scale, _) = normalize(&c).unwrap();
        assert_eq!(scale, 2.0);
        let (lo, hi) = out.bounds();
        let ext = hi - lo;
        assert!((ext.x.max(ext.y).max(ext.z) - 1.0).abs() < 1e-12);
        let cen = out.centroid();
        assert!(cen.norm() < 1e-6);
    }

    #[test]
    fn normalize_identity_on_normalized() {
        // Symmetric around the origin, extent exactly 1.
        let c = cloud(&[
            [-0.5, 0.0, 0.0],
            [0.5, 0.0, 0.0],
            [0.0, -0.25, 0.1],
            [0.0, 0.25, -0.1],
        ]);
        let (out, scale, offset) = normalize(&c).unwrap();
        assert_eq!(scale, 1.0);
        assert!(offset.norm() < 1e-15);
        for (a, b) in out.points().iter().zip(c.points()) {
            assert!(a.dist(*b) < 1e-15);
        }
    }

    #[test]
    fn normalize_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Vec3> = (0..100)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-3.0..5.0),
                    rng.gen_range(10.0..11.0),
                    rng.gen_range(-0.2..0.2),
                )
            })
            .collect();
        let c = PointCloud::new(pts.clone(), None).unwrap();
        let (out, scale, offset) = normalize(&c).unwrap();
        for (a, &orig) in out.points().iter().zip(&pts) {
            let back = *a * scale + offset;
            assert!(back.dist(orig) < 1e-12);
        }
    }

    #[test]
    fn normalize_degenerate() {
        let c = cloud(&[[1.0, 1.0, 1.0]; 4]);
        assert!(matches!(normalize(&c), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn fps_square_corners() {
        let c = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]]);
        // seed 1 -> start at index 1 mod 4 = 1? We want corner 0: seed=4 -> 0.
        let rc = farthest_point_sample(&c, 2, 4).unwrap();
        assert_eq!(rc.source_indices(), &[0, 3]);
        assert_eq!(rc.center(1), Vec3::new(1.0, 1.0, 0.0));
    }

    #[test]
    fn fps_exhaustive_selects_all() {
        let c = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]]);
        let rc = farthest_point_sample(&c, 4, 0).unwrap();
        let mut idx: Vec<usize> = rc.source_indices().to_vec();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2, 3]);
    }

    #[test]
    fn fps_too_many() {
        let c = cloud(&[[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(matches!(
            farthest_point_sample(&c, 5, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn fps_min_pairwise_distance_non_increasing() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let pts: Vec<Vec3> = (0..40)
            .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let c = PointCloud::new(pts, None).unwrap();
        let min_pairwise = |rc: &RegionCenters| -> f64 {
            let mut m = f64::INFINITY;
            for i in 0..rc.len() {
                for j in i + 1..rc.len() {
                    m = m.min(rc.center(i).dist(rc.center(j)));
                }
            }
            m
        };
        let mut prev = f64::INFINITY;
        for count in 2..=c.len() {
            let rc = farthest_point_sample(&c, count, 0).unwrap();
            let m = min_pairwise(&rc);
            assert!(m <= prev + 1e-12, "I={count}: {m} > {prev}");
            prev = m;
        }
    }

    #[test]
    fn fps_matches_greedy_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let pts: Vec<Vec3> = (0..50)
            .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let c = PointCloud::new(pts.clone(), None).unwrap();
        let rc = farthest_point_sample(&c, 8, 0).unwrap();

        // O(I*N) reference: recompute min-distances from scratch each pick
        let centroid = c.centroid();
        let mut start = 0;
        for (i, &p) in pts.iter().enumerate() {
            if p.dist_sq(centroid) < pts[start].dist_sq(centroid) {
                start = i;
            }
        }
        let mut picked = vec![start];
        while picked.len() < 8 {
            let mut far = 0;
            let mut far_d = f64::NEG_INFINITY;
            for (i, &p) in pts.iter().enumerate() {
                let d = picked
                    .iter()
                    .map(|&c| p.dist_sq(pts[c]))
                    .fold(f64::INFINITY, f64::min);
                if d > far_d {
                    far_d = d;
                    far = i;
                }
            }
            picked.push(far);
        }
        assert_eq!(rc.source_indices(), picked.as_slice());
    }

    #[test]
    fn segment_representatives_one_per_segment() {
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.1, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1.1, 0.0, 0.0),
            Vec3::new(1.2, 0.0, 0.0),
        ];
        let c = PointCloud::new(pts, Some(vec![0, 0, 1, 1, 1])).unwrap();
        let rc = segment_representatives(&c).unwrap();
        assert_eq!(rc.len(), 2);
        // segment 0 centroid at 0.05 -> nearest is point 0 or 1 (tie at
        // 0.05 -> lowest index 0); segment 1 centroid 1.1 -> point 3
        assert_eq!(rc.source_indices()[1], 3);
        assert!(rc.source_indices()[0] <= 1);
    }

    #[test]
    fn labels_must_be_contiguous() {
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        assert!(PointCloud::new(pts.clone(), Some(vec![0, 0, 2, 2])).is_err());
        let ok = PointCloud::new(pts, Some(vec![1, 0, 1, 0])).unwrap();
        assert_eq!(ok.segment_count(), Some(2));
    }
}
