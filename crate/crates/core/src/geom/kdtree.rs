use crate::vec3::Vec3;

/// Static kd-tree over a point set. Nearest and k-nearest queries return
/// exactly what an exhaustive scan would, with ties broken by the lowest
/// point index.
#[derive(Clone, Debug)]
pub struct SpatialIndex {
    points: Vec<Vec3>,
    nodes: Vec<Node>,
    root: i32,
}

#[derive(Clone, Debug)]
struct Node {
    point: u32,
    axis: u8,
    left: i32,
    right: i32,
}

impl SpatialIndex {
    pub fn build(points: &[Vec3]) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = build_rec(points, &mut order, &mut nodes);
        SpatialIndex { points: points.to_vec(), nodes, root }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Vec3 {
        self.points[i]
    }

    /// Exact nearest point to `q`: (point index, distance).
    pub fn nearest(&self, q: Vec3) -> (usize, f64) {
        debug_assert!(!self.points.is_empty());
        let mut best = (f64::INFINITY, u32::MAX);
        self.nearest_rec(self.root, q, &mut best);
        (best.1 as usize, best.0.sqrt())
    }

    fn nearest_rec(&self, ni: i32, q: Vec3, best: &mut (f64, u32)) {
        if ni < 0 {
            return;
        }
        let node = &self.nodes[ni as usize];
        let p = self.points[node.point as usize];
        let d = q.dist_sq(p);
        if d < best.0 || (d == best.0 && node.point < best.1) {
            *best = (d, node.point);
        }
        let delta = q.component(node.axis as usize) - p.component(node.axis as usize);
        let (near, far) = if delta <= 0.0 { (node.left, node.right) } else { (node.right, node.left) };
        self.nearest_rec(near, q, best);
        // <= so an equal-distance point on the far side can still win a tie
        if delta * delta <= best.0 {
            self.nearest_rec(far, q, best);
        }
    }

    /// The `k` nearest points to `q`, sorted by (distance, index).
    /// `skip` excludes one point index (the query point itself, typically).
    pub fn k_nearest(&self, q: Vec3, k: usize, skip: Option<usize>) -> Vec<(usize, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        self.knn_rec(self.root, q, k, skip.map(|s| s as u32), &mut heap);
        heap.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        heap.into_iter().map(|(d, i)| (i as usize, d.sqrt())).collect()
    }

    fn knn_rec(&self, ni: i32, q: Vec3, k: usize, skip: Option<u32>, heap: &mut Vec<(f64, u32)>) {
        if ni < 0 {
            return;
        }
        let node = &self.nodes[ni as usize];
        if Some(node.point) != skip {
            let d = q.dist_sq(self.points[node.point as usize]);
            if heap.len() < k {
                heap.push((d, node.point));
                if heap.len() == k {
                    // max element last for cheap worst lookup
                    heap.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                }
            } else {
                let worst = heap[k - 1];
                if d < worst.0 || (d == worst.0 && node.point < worst.1) {
                    heap[k - 1] = (d, node.point);
                    let mut i = k - 1;
                    while i > 0
                        && (heap[i].0 < heap[i - 1].0
                            || (heap[i].0 == heap[i - 1].0 && heap[i].1 < heap[i - 1].1))
                    {
                        heap.swap(i, i - 1);
                        i -= 1;
                    }
                }
            }
        }
        let p = self.points[node.point as usize];
        let delta = q.component(node.axis as usize) - p.component(node.axis as usize);
        let (near, far) = if delta <= 0.0 { (node.left, node.right) } else { (node.right, node.left) };
        self.knn_rec(near, q, k, skip, heap);
        let need_far = heap.len() < k || delta * delta <= heap[heap.len() - 1].0;
        if need_far {
            self.knn_rec(far, q, k, skip, heap);
        }
    }
}

fn build_rec(points: &[Vec3], order: &mut [u32], nodes: &mut Vec<Node>) -> i32 {
    if order.is_empty() {
        return -1;
    }
    // split along the widest axis of this subset
    let mut lo = points[order[0] as usize];
    let mut hi = lo;
    for &i in order.iter() {
        lo = lo.min_by_component(points[i as usize]);
        hi = hi.max_by_component(points[i as usize]);
    }
    let ext = hi - lo;
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0u8
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize]
            .component(axis as usize)
            .total_cmp(&points[b as usize].component(axis as usize))
            .then(a.cmp(&b))
    });
    let point = order[mid];
    let id = nodes.len() as i32;
    nodes.push(Node { point, axis, left: -1, right: -1 });
    let (left_slice, rest) = order.split_at_mut(mid);
    let left = build_rec(points, left_slice, nodes);
    let right = build_rec(points, &mut rest[1..], nodes);
    nodes[id as usize].left = left;
    nodes[id as usize].right = right;
    id
}
