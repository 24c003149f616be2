//! Exact 3D k-d tree.
//!
//! Queries return the same answer as an exhaustive scan, including ties:
//! equal distances are ordered by ascending point index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{dist_sq, Point};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// (squared distance, index), ordered lexicographically.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate(f64, usize);

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .total_cmp(&other.0)
            .then_with(|| self.1.cmp(&other.1))
    }
}

impl KdTree {
    pub fn new(points: &[Point]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = self.widest_axis(start, end);
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis]
                .total_cmp(&points[b][axis])
                .then_with(|| a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    fn widest_axis(&self, start: usize, end: usize) -> usize {
        let mut lo = Point::repeat(f64::INFINITY);
        let mut hi = Point::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        (hi - lo).imax()
    }

    /// Nearest point as `(index, squared distance)`; `None` for an empty tree.
    pub fn nearest(&self, q: &Point) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = Candidate(f64::INFINITY, usize::MAX);
        self.nearest_rec(0, q, &mut best);
        Some((best.1, best.0))
    }

    fn nearest_rec(&self, node: usize, q: &Point, best: &mut Candidate) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let c = Candidate(dist_sq(q, &self.points[i]), i);
                    if c < *best {
                        *best = c;
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_rec(near, q, best);
                if diff * diff <= best.0 {
                    self.nearest_rec(far, q, best);
                }
            }
        }
    }

    /// The `k` nearest points sorted by (squared distance, index).
    pub fn knn(&self, q: &Point, k: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, q, k, &mut heap);
        let mut out: Vec<_> = heap.into_iter().map(|c: Candidate| (c.1, c.0)).collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        out
    }

    fn knn_rec(&self, node: usize, q: &Point, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let c = Candidate(dist_sq(q, &self.points[i]), i);
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near, q, k, heap);
                if heap.len() < k || diff * diff <= heap.peek().unwrap().0 {
                    self.knn_rec(far, q, k, heap);
                }
            }
        }
    }

    /// Indices of all points with squared distance strictly below
    /// `radius * radius`, ascending.
    pub fn within(&self, q: &Point, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.points.is_empty() && radius > 0.0 {
            self.within_rec(0, q, radius * radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn within_rec(&self, node: usize, q: &Point, r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                out.extend(
                    self.order[start..end]
                        .iter()
                        .copied()
                        .filter(|&i| dist_sq(q, &self.points[i]) < r2),
                );
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.within_rec(near, q, r2, out);
                if diff * diff < r2 {
                    self.within_rec(far, q, r2, out);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
        (0..n)
            .map(|_| Point::new(rng.random(), rng.random(), rng.random()))
            .collect()
    }

    fn brute_sorted(points: &[Point], q: &Point) -> Vec<(usize, f64)> {
        let mut all: Vec<_> = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let d = q - p;
                (i, d.x * d.x + d.y * d.y + d.z * d.z)
            })
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all
    }

    #[test]
    fn matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [1, 2, 7, 9, 50, 300] {
            let pts = random_points(&mut rng, n);
            let tree = KdTree::new(&pts);
            for _ in 0..30 {
                let q = Point::new(rng.random(), rng.random(), rng.random());
                let brute = brute_sorted(&pts, &q);
                assert_eq!(tree.nearest(&q), Some(brute[0]));
                let k = n.min(6);
                assert_eq!(tree.knn(&q, k), brute[..k].to_vec());
                let r = 0.3;
                let mut inside: Vec<_> =
                    brute.iter().filter(|c| c.1 < r * r).map(|c| c.0).collect();
                inside.sort_unstable();
                assert_eq!(tree.within(&q, r), inside);
            }
        }
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        let pts = vec![Point::new(1.0, 0.0, 0.0); 20];
        let tree = KdTree::new(&pts);
        assert_eq!(tree.nearest(&Point::zeros()), Some((0, 1.0)));
        let k: Vec<_> = tree.knn(&Point::zeros(), 3).iter().map(|c| c.0).collect();
        assert_eq!(k, vec![0, 1, 2]);
    }

    #[test]
    fn empty_tree() {
        let tree = KdTree::new(&[]);
        assert!(tree.nearest(&Point::zeros()).is_none());
        assert!(tree.knn(&Point::zeros(), 3).is_empty());
        assert!(tree.within(&Point::zeros(), 1.0).is_empty());
    }
}
