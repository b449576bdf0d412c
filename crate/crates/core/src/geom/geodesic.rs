use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{PointCloud, RegionCenters, SpatialIndex};
use crate::error::{Error, Result};

/// Graph-geodesic distances from each region center to every cloud point,
/// computed on the symmetrized kNN graph with Euclidean edge weights.
#[derive(Clone, Debug, PartialEq)]
pub struct GeodesicTable {
    center_count: usize,
    point_count: usize,
    knn_k: u32,
    /// row-major `center_count x point_count`
    dist: Vec<f64>,
}

impl GeodesicTable {
    pub fn new(center_count: usize, point_count: usize, knn_k: u32, dist: Vec<f64>) -> Self {
        assert_eq!(dist.len(), center_count * point_count);
        GeodesicTable { center_count, point_count, knn_k, dist }
    }

    pub fn center_count(&self) -> usize {
        self.center_count
    }

    pub fn point_count(&self) -> usize {
        self.point_count
    }

    pub fn knn_k(&self) -> u32 {
        self.knn_k
    }

    /// Distance from center `i` to cloud point `j`.
    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.point_count + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.dist[i * self.point_count..(i + 1) * self.point_count]
    }

    pub fn raw(&self) -> &[f64] {
        &self.dist
    }
}

/// Symmetrized kNN adjacency: `j` is a neighbor of `i` if either is in the
/// other's k nearest. Edges carry Euclidean lengths; each list is sorted
/// by neighbor index.
pub fn build_knn_graph(cloud: &PointCloud, knn_k: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    if knn_k == 0 {
        return Err(Error::InvalidArgument("knn_k must be at least 1".into()));
    }
    let n = cloud.len();
    let index = SpatialIndex::build(cloud.points());
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for i in 0..n {
        for (j, d) in index.k_nearest(cloud.point(i), knn_k, Some(i)) {
            adj[i].push((j, d));
            adj[j].push((i, d));
        }
    }
    for list in &mut adj {
        list.sort_by(|a, b| a.0.cmp(&b.0));
        list.dedup_by_key(|e| e.0);
    }
    Ok(adj)
}

/// Connected component sizes, largest first.
fn component_sizes(adj: &[Vec<(usize, f64)>]) -> Vec<usize> {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut size = 0usize;
        stack.push(start);
        seen[start] = true;
        while let Some(u) = stack.pop() {
            size += 1;
            for &(v, _) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        sizes.push(size);
    }
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    sizes
}

#[derive(PartialEq)]
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (dist, node)
        other
            .dist
            .total_cmp(&self.dist)
            .then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest paths over a weighted adjacency list.
pub fn dijkstra(adj: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let n = adj.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapEntry { dist: 0.0, node: source });
    while let Some(HeapEntry { dist: d, node: u }) = heap.pop() {
        if done[u] {
            continue;
        }
        done[u] = true;
        for &(v, w) in &adj[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(HeapEntry { dist: nd, node: v });
            }
        }
    }
    dist
}

/// Dijkstra from every center source over the symmetrized kNN graph.
/// Fails with component sizes when the graph is disconnected.
pub fn build_geodesic_table(
    cloud: &PointCloud,
    centers: &RegionCenters,
    knn_k: usize,
) -> Result<GeodesicTable> {
    build_geodesic_table_threads(cloud, centers, knn_k, 1)
}

/// Same table, with the per-center Dijkstra runs spread over worker
/// threads. Rows are stored by center index, so the result does not
/// depend on completion order.
pub fn build_geodesic_table_threads(
    cloud: &PointCloud,
    centers: &RegionCenters,
    knn_k: usize,
    threads: usize,
) -> Result<GeodesicTable> {
    let adj = build_knn_graph(cloud, knn_k)?;
    let sizes = component_sizes(&adj);
    if sizes.len() > 1 {
        return Err(Error::DisconnectedGraph { sizes });
    }
    let n = cloud.len();
    let i_count = centers.len();
    let sources = centers.source_indices();
    if threads <= 1 || i_count <= 1 {
        let mut dist = Vec::with_capacity(i_count * n);
        for &src in sources {
            dist.extend(dijkstra(&adj, src));
        }
        return Ok(GeodesicTable::new(i_count, n, knn_k as u32, dist));
    }
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; i_count];
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<&mut Option<Vec<f64>>>> =
        rows.iter_mut().map(std::sync::Mutex::new).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads.min(i_count) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= i_count {
                    break;
                }
                let row = dijkstra(&adj, sources[i]);
                **slots[i].lock().unwrap() = Some(row);
            });
        }
    });
    let mut dist = Vec::with_capacity(i_count * n);
    for row in rows {
        dist.extend(row.expect("row computed"));
    }
    Ok(GeodesicTable::new(i_count, n, knn_k as u32, dist))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::farthest_point_sample;
    use crate::vec3::Vec3;
    use rand::{Rng, SeedableRng};

    fn path_cloud() -> PointCloud {
        let pts = (0..5).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        PointCloud::new(pts, None).unwrap()
    }

    #[test]
    fn path_graph_distances() {
        let cloud = path_cloud();
        let centers = RegionCenters::new(vec![cloud.point(0)], vec![0]);
        let table = build_geodesic_table(&cloud, &centers, 1).unwrap();
        for j in 0..5 {
            assert!((table.dist(0, j) - j as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_at_own_source() {
        let cloud = path_cloud();
        let centers = RegionCenters::new(vec![cloud.point(2), cloud.point(4)], vec![2, 4]);
        let table = build_geodesic_table(&cloud, &centers, 2).unwrap();
        assert_eq!(table.dist(0, 2), 0.0);
        assert_eq!(table.dist(1, 4), 0.0);
    }

    #[test]
    fn disconnected_reports_components() {
        // two 4-point clusters far apart, knn_k=2 keeps them separate
        let mut pts = Vec::new();
        for i in 0..4 {
            pts.push(Vec3::new(i as f64 * 0.01, 0.0, 0.0));
        }
        for i in 0..4 {
            pts.push(Vec3::new(100.0 + i as f64 * 0.01, 0.0, 0.0));
        }
        let cloud = PointCloud::new(pts, None).unwrap();
        let centers = RegionCenters::new(vec![cloud.point(0)], vec![0]);
        match build_geodesic_table(&cloud, &centers, 2) {
            Err(Error::DisconnectedGraph { sizes }) => assert_eq!(sizes, vec![4, 4]),
            other => panic!("expected DisconnectedGraph, got {other:?}"),
        }
    }

    /// Floyd-Warshall over the same graph, the all-pairs oracle.
    fn floyd_warshall(adj: &[Vec<(usize, f64)>]) -> Vec<Vec<f64>> {
        let n = adj.len();
        let mut d = vec![vec![f64::INFINITY; n]; n];
        for (i, row) in adj.iter().enumerate() {
            d[i][i] = 0.0;
            for &(j, w) in row {
                d[i][j] = w;
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let via = d[i][k] + d[k][j];
                    if via < d[i][j] {
                        d[i][j] = via;
                    }
                }
            }
        }
        d
    }

    #[test]
    fn dijkstra_matches_floyd_warshall() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec3> = (0..30)
            .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let cloud = PointCloud::new(pts, None).unwrap();
        let centers = farthest_point_sample(&cloud, 5, 0).unwrap();
        let adj = build_knn_graph(&cloud, 6).unwrap();
        let oracle = floyd_warshall(&adj);
        let table = build_geodesic_table(&cloud, &centers, 6).unwrap();
        for (ci, &src) in centers.source_indices().iter().enumerate() {
            for j in 0..cloud.len() {
                assert!(
                    (table.dist(ci, j) - oracle[src][j]).abs() < 1e-12,
                    "center {ci} point {j}"
                );
            }
        }
    }

    #[test]
    fn geodesic_dominates_euclidean_and_symmetric_pairs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec3> = (0..60)
            .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let cloud = PointCloud::new(pts, None).unwrap();
        let centers = farthest_point_sample(&cloud, 6, 0).unwrap();
        let table = build_geodesic_table(&cloud, &centers, 8).unwrap();
        for i in 0..centers.len() {
            for j in 0..cloud.len() {
                let euclid = centers.center(i).dist(cloud.point(j));
                assert!(table.dist(i, j) >= euclid - 1e-9);
                assert!(table.dist(i, j).is_finite());
            }
        }
        // dist[i][src_j] == dist[j][src_i]
        for i in 0..centers.len() {
            for j in 0..centers.len() {
                let a = table.dist(i, centers.source_indices()[j]);
                let b = table.dist(j, centers.source_indices()[i]);
                assert!((a - b).abs() < 1e-9);
            }
        }
        // triangle inequality restricted to center sources
        for a in 0..centers.len() {
            for b in 0..centers.len() {
                for c in 0..centers.len() {
                    let ab = table.dist(a, centers.source_indices()[b]);
                    let ac = table.dist(a, centers.source_indices()[c]);
                    let cb = table.dist(c, centers.source_indices()[b]);
                    assert!(ab <= ac + cb + 1e-9);
                }
            }
        }
    }
}
