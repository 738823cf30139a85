//! Exact nearest-neighbor search over head points.
//!
//! Two backends share one contract: brute force (`O(n)` per query) and an
//! exact k-d tree. Both order candidates by `(squared distance, index)`, so
//! equidistant neighbors are resolved towards the smaller point index and the
//! two backends agree bit-for-bit.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::geometry::Point;

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborResult {
    pub query_index: usize,
    pub neighbor_indices: Vec<usize>,
    /// Euclidean distances, non-decreasing, aligned with `neighbor_indices`.
    pub distances: Vec<f64>,
}

#[inline]
fn candidate_cmp(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

fn check_query(n: usize, query_index: usize, k: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InsufficientPoints { needed: 2, got: n });
    }
    if query_index >= n {
        return Err(Error::InvalidParameter(format!(
            "query index {query_index} out of range for {n} points"
        )));
    }
    if k == 0 || k > n - 1 {
        return Err(Error::InvalidParameter(format!(
            "k = {k} must be in 1..={} for {n} points",
            n - 1
        )));
    }
    Ok(())
}

fn into_result(query_index: usize, best: Vec<(f64, usize)>) -> NeighborResult {
    NeighborResult {
        query_index,
        neighbor_indices: best.iter().map(|c| c.1).collect(),
        distances: best.iter().map(|c| c.0.sqrt()).collect(),
    }
}

/// The `k` points closest to `points[query_index]`, excluding the query.
pub fn brute_force_knn(points: &[Point], query_index: usize, k: usize) -> Result<NeighborResult> {
    check_query(points.len(), query_index, k)?;
    let q = points[query_index];
    let mut cands: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != query_index)
        .map(|(j, &p)| (q.dist2(p), j))
        .collect();
    cands.select_nth_unstable_by(k - 1, candidate_cmp);
    cands.truncate(k);
    cands.sort_unstable_by(candidate_cmp);
    Ok(into_result(query_index, cands))
}

/// All-pairs exact 1-NN by exhaustive search. `None` for a lone point.
pub fn brute_force_nearest_all(points: &[Point]) -> Vec<Option<(usize, f64)>> {
    points
        .iter()
        .enumerate()
        .map(|(i, &q)| {
            let mut best: Option<(f64, usize)> = None;
            for (j, &p) in points.iter().enumerate() {
                if j == i {
                    continue;
                }
                let d2 = q.dist2(p);
                // strict `<` keeps the smaller index on ties
                if best.is_none_or(|(bd, _)| d2 < bd) {
                    best = Some((d2, j));
                }
            }
            best.map(|(d2, j)| (j, d2.sqrt()))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    X,
    Y,
}

impl Axis {
    #[inline]
    fn of(self, p: Point) -> f64 {
        match self {
            Axis::X => p.x,
            Axis::Y => p.y,
        }
    }

    #[inline]
    fn other(self) -> Axis {
        match self {
            Axis::X => Axis::Y,
            Axis::Y => Axis::X,
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    point: usize,
    axis: Axis,
    left: Option<u32>,
    right: Option<u32>,
}

/// Balanced 2-d tree: the axis alternates x, y by depth and each node holds
/// the lower median along its axis (ties by the other coordinate, then index).
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point>,
    nodes: Vec<Node>,
    root: u32,
}

impl KdTree {
    pub fn build(points: &[Point]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InsufficientPoints { needed: 1, got: 0 });
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = build_rec(points, &mut order, Axis::X, &mut nodes).expect("non-empty");
        Ok(Self {
            points: points.to_vec(),
            nodes,
            root,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    /// Index of the point stored at the root.
    pub fn root_point(&self) -> usize {
        self.nodes[self.root as usize].point
    }

    /// Depth of the deepest node; a single point has depth 0.
    pub fn depth(&self) -> usize {
        fn rec(nodes: &[Node], id: u32) -> usize {
            let n = &nodes[id as usize];
            let l = n.left.map_or(0, |c| 1 + rec(nodes, c));
            let r = n.right.map_or(0, |c| 1 + rec(nodes, c));
            l.max(r)
        }
        rec(&self.nodes, self.root)
    }

    /// Up to `k` nearest points to an arbitrary query location, sorted by
    /// `(distance, index)`, optionally skipping one point index. Returns
    /// squared distances.
    pub fn knn_point(&self, query: Point, k: usize, exclude: Option<usize>) -> Vec<(f64, usize)> {
        let mut best = Vec::with_capacity(k + 1);
        if k > 0 {
            self.search(self.root, query, k, exclude, &mut best);
        }
        best
    }

    /// Nearest point to `query` (smaller index on ties).
    pub fn nearest(&self, query: Point) -> usize {
        self.knn_point(query, 1, None)[0].1
    }

    fn search(&self, id: u32, q: Point, k: usize, exclude: Option<usize>, best: &mut Vec<(f64, usize)>) {
        let node = &self.nodes[id as usize];
        let p = self.points[node.point];
        if exclude != Some(node.point) {
            offer(best, k, (q.dist2(p), node.point));
        }
        let diff = node.axis.of(q) - node.axis.of(p);
        let (near, far) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if let Some(c) = near {
            self.search(c, q, k, exclude, best);
        }
        if let Some(c) = far {
            // `<=` keeps equidistant candidates reachable for the index tie-break
            if best.len() < k || diff * diff <= best[k - 1].0 {
                self.search(c, q, k, exclude, best);
            }
        }
    }
}

#[inline]
fn offer(best: &mut Vec<(f64, usize)>, k: usize, cand: (f64, usize)) {
    if best.len() == k && candidate_cmp(&cand, &best[k - 1]) != Ordering::Less {
        return;
    }
    let pos = best.binary_search_by(|b| candidate_cmp(b, &cand)).unwrap_or_else(|e| e);
    best.insert(pos, cand);
    best.truncate(k);
}

fn build_rec(points: &[Point], order: &mut [usize], axis: Axis, nodes: &mut Vec<Node>) -> Option<u32> {
    if order.is_empty() {
        return None;
    }
    let mid = (order.len() - 1) / 2;
    let other = axis.other();
    order.select_nth_unstable_by(mid, |&a, &b| {
        let (pa, pb) = (points[a], points[b]);
        axis.of(pa)
            .total_cmp(&axis.of(pb))
            .then(other.of(pa).total_cmp(&other.of(pb)))
            .then(a.cmp(&b))
    });
    let id = nodes.len() as u32;
    nodes.push(Node {
        point: order[mid],
        axis,
        left: None,
        right: None,
    });
    let (lo, rest) = order.split_at_mut(mid);
    let left = build_rec(points, lo, other, nodes);
    let right = build_rec(points, &mut rest[1..], other, nodes);
    let node = &mut nodes[id as usize];
    node.left = left;
    node.right = right;
    Some(id)
}

#[derive(Debug, Clone)]
enum Backend {
    BruteForce,
    KdTree(KdTree),
}

/// Head points plus an optional k-d tree acceleration structure.
#[derive(Debug, Clone)]
pub struct PointIndex {
    points: Vec<Point>,
    backend: Backend,
}

impl PointIndex {
    pub fn brute_force(points: &[Point]) -> Self {
        Self {
            points: points.to_vec(),
            backend: Backend::BruteForce,
        }
    }

    pub fn kdtree(points: &[Point]) -> Result<Self> {
        Ok(Self {
            points: points.to_vec(),
            backend: Backend::KdTree(KdTree::build(points)?),
        })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn tree(&self) -> Option<&KdTree> {
        match &self.backend {
            Backend::KdTree(t) => Some(t),
            Backend::BruteForce => None,
        }
    }

    pub fn knn(&self, query_index: usize, k: usize) -> Result<NeighborResult> {
        match &self.backend {
            Backend::BruteForce => brute_force_knn(&self.points, query_index, k),
            Backend::KdTree(tree) => {
                check_query(self.points.len(), query_index, k)?;
                let best = tree.knn_point(self.points[query_index], k, Some(query_index));
                Ok(into_result(query_index, best))
            }
        }
    }
}

pub fn kdtree_build(points: &[Point]) -> Result<PointIndex> {
    PointIndex::kdtree(points)
}

/// Exact k-NN through the tree; identical output to [`brute_force_knn`].
pub fn kdtree_knn(index: &PointIndex, query_index: usize, k: usize) -> Result<NeighborResult> {
    match index.tree() {
        Some(_) => index.knn(query_index, k),
        None => Err(Error::InvalidParameter("index has no k-d tree".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pts(v: &[(f64, f64)]) -> Vec<Point> {
        v.iter().map(|&p| p.into()).collect()
    }

    /// Independent oracle: full sort of every other point.
    fn sort_oracle(points: &[Point], q: usize, k: usize) -> Vec<usize> {
        let mut all: Vec<usize> = (0..points.len()).filter(|&j| j != q).collect();
        all.sort_by(|&a, &b| {
            let da = (points[q].x - points[a].x).powi(2) + (points[q].y - points[a].y).powi(2);
            let db = (points[q].x - points[b].x).powi(2) + (points[q].y - points[b].y).powi(2);
            da.partial_cmp(&db).unwrap().then(a.cmp(&b))
        });
        all.truncate(k);
        all
    }

    #[test]
    fn three_four_five() {
        let p = pts(&[(0.0, 0.0), (3.0, 4.0), (10.0, 10.0)]);
        let r = brute_force_knn(&p, 0, 1).unwrap();
        assert_eq!(r.neighbor_indices, vec![1]);
        assert_eq!(r.distances, vec![5.0]);
    }

    #[test]
    fn two_points() {
        let p = pts(&[(0.0, 0.0), (1.0, 0.0)]);
        let r = brute_force_knn(&p, 0, 1).unwrap();
        assert_eq!((r.neighbor_indices, r.distances), (vec![1], vec![1.0]));
    }

    #[test]
    fn argument_errors() {
        let one = pts(&[(0.0, 0.0)]);
        assert!(matches!(
            brute_force_knn(&one, 0, 1),
            Err(Error::InsufficientPoints { .. })
        ));
        let p = pts(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        assert!(matches!(brute_force_knn(&p, 0, 3), Err(Error::InvalidParameter(_))));
        assert!(matches!(brute_force_knn(&p, 0, 0), Err(Error::InvalidParameter(_))));
        assert!(matches!(brute_force_knn(&p, 5, 1), Err(Error::InvalidParameter(_))));
        let idx = kdtree_build(&p).unwrap();
        assert!(matches!(kdtree_knn(&idx, 0, 3), Err(Error::InvalidParameter(_))));
        assert!(matches!(kdtree_build(&[]), Err(Error::InsufficientPoints { .. })));
    }

    #[test]
    fn random_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p: Vec<Point> = (0..200)
            .map(|_| Point::new(rng.gen_range(0.0..512.0), rng.gen_range(0.0..512.0)))
            .collect();
        for q in 0..p.len() {
            let r = brute_force_knn(&p, q, 3).unwrap();
            assert_eq!(r.neighbor_indices, sort_oracle(&p, q, 3));
            assert!(r.distances.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn single_point_tree() {
        let t = KdTree::build(&pts(&[(4.0, 2.0)])).unwrap();
        assert_eq!(t.depth(), 0);
        assert_eq!(t.root_point(), 0);
    }

    #[test]
    fn root_is_x_median() {
        let t = KdTree::build(&pts(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)])).unwrap();
        assert_eq!(t.root_point(), 1);
        // even count takes the lower median
        let t = KdTree::build(&pts(&[(3.0, 0.0), (0.0, 0.0), (2.0, 0.0), (1.0, 0.0)])).unwrap();
        assert_eq!(t.root_point(), 3);
    }

    #[test]
    fn median_ties_use_other_axis_then_index() {
        let t = KdTree::build(&pts(&[(1.0, 5.0), (1.0, 2.0), (1.0, 9.0)])).unwrap();
        assert_eq!(t.root_point(), 0);
        let t = KdTree::build(&pts(&[(1.0, 2.0), (1.0, 2.0 + 0.0), (1.0, 2.0)])).unwrap();
        assert_eq!(t.root_point(), 1);
    }

    #[test]
    fn depth_is_logarithmic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p: Vec<Point> = (0..1000)
            .map(|_| Point::new(rng.gen_range(0.0..512.0), rng.gen_range(0.0..512.0)))
            .collect();
        let t = KdTree::build(&p).unwrap();
        let bound = (1000f64).log2().ceil() as usize + 1;
        assert!(t.depth() <= bound, "depth {} > {bound}", t.depth());
    }

    #[test]
    fn square_ties() {
        let p = pts(&[(0.0, 0.0), (0.0, 2.0), (2.0, 0.0), (2.0, 2.0)]);
        let idx = kdtree_build(&p).unwrap();
        let r = kdtree_knn(&idx, 0, 2).unwrap();
        assert_eq!(r.neighbor_indices, vec![1, 2]);
        assert_eq!(r.distances, vec![2.0, 2.0]);
        let r = kdtree_knn(&idx, 0, 3).unwrap();
        assert_eq!(r.neighbor_indices[2], 3);
        assert!((r.distances[2] - 8f64.sqrt()).abs() < 1e-15);
        assert_eq!(brute_force_knn(&p, 0, 3).unwrap(), r);
    }

    #[test]
    fn integer_lattice_ties_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.gen_range(2..60);
            let p: Vec<Point> = (0..n)
                .map(|_| Point::new(rng.gen_range(0..8) as f64, rng.gen_range(0..8) as f64))
                .collect();
            let idx = kdtree_build(&p).unwrap();
            for q in 0..n {
                for k in [1, 3.min(n - 1)] {
                    assert_eq!(kdtree_knn(&idx, q, k).unwrap(), brute_force_knn(&p, q, k).unwrap());
                }
            }
        }
    }

    #[test]
    fn all_pairs_matches_knn() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p: Vec<Point> = (0..100)
            .map(|_| Point::new(rng.gen_range(0..20) as f64, rng.gen_range(0..20) as f64))
            .collect();
        let all = brute_force_nearest_all(&p);
        for (q, nn) in all.iter().enumerate() {
            let r = brute_force_knn(&p, q, 1).unwrap();
            assert_eq!(*nn, Some((r.neighbor_indices[0], r.distances[0])));
        }
        assert_eq!(brute_force_nearest_all(&p[..1]), vec![None]);
    }

    #[test]
    fn nearest_to_arbitrary_point() {
        let p = pts(&[(0.0, 0.0), (4.0, 0.0)]);
        let t = KdTree::build(&p).unwrap();
        assert_eq!(t.nearest(Point::new(2.0, 0.0)), 0);
        assert_eq!(t.nearest(Point::new(2.1, 0.0)), 1);
    }
}
