//! Exact spatial k-nearest-neighbor graphs over scene coordinates.
//!
//! Neighbors are ordered by ascending squared Euclidean distance with ties
//! broken by ascending point index, and a point is never its own neighbor.

use crate::error::{Error, Result};

const LEAF_SIZE: usize = 8;

/// Fixed neighbor lists, `k` per point, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnnGraph {
    neighbors: Vec<usize>,
    k: usize,
}

impl KnnGraph {
    /// Builds a graph from explicit rows; each row must hold exactly `k` entries.
    pub fn from_rows(rows: &[Vec<usize>], k: usize) -> Result<Self> {
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Input(format!("every neighbor row must hold {k} entries")));
        }
        let n = rows.len();
        if rows.iter().flatten().any(|&j| j >= n) {
            return Err(Error::Input("neighbor index out of range".into()));
        }
        Ok(Self {
            neighbors: rows.concat(),
            k,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_points(&self) -> usize {
        self.neighbors.len() / self.k
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[usize]> {
        self.neighbors.chunks_exact(self.k)
    }
}

#[inline]
pub(crate) fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

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

/// A static 3-d tree over a borrowed point set.
pub struct KdTree<'a> {
    points: &'a [[f64; 3]],
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [[f64; 3]]) -> Self {
        let mut tree = Self {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = self.widest_axis(start, end);
        let mid = start + (end - start) / 2;
        let pts = self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b))
        });
        let value = pts[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
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
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
            .unwrap_or(0)
    }

    /// The `k` nearest points to `query`, skipping index `exclude`, as
    /// `(squared distance, index)` pairs in ascending order.
    pub fn nearest(&self, query: &[f64; 3], k: usize, exclude: Option<usize>) -> Vec<(f64, usize)> {
        let mut best = Vec::with_capacity(k + 1);
        if k > 0 && !self.nodes.is_empty() {
            self.search(0, query, k, exclude, &mut best);
        }
        best
    }

    fn search(
        &self,
        node: usize,
        query: &[f64; 3],
        k: usize,
        exclude: Option<usize>,
        best: &mut Vec<(f64, usize)>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let cand = (dist2(query, &self.points[i]), i);
                    if best.len() == k && !less(cand, best[k - 1]) {
                        continue;
                    }
                    let pos = best.partition_point(|&b| less(b, cand));
                    best.insert(pos, cand);
                    best.truncate(k);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, k, exclude, best);
                // Equal bounds may still hide a lower-index tie.
                if best.len() < k || diff * diff <= best[k - 1].0 {
                    self.search(far, query, k, exclude, best);
                }
            }
        }
    }
}

#[inline]
fn less(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Builds the exact k-nearest-neighbor graph of `coords`, self excluded.
pub fn build_knn_graph(coords: &[[f64; 3]], k: usize) -> Result<KnnGraph> {
    if k == 0 {
        return Err(Error::Input("k must be at least 1".into()));
    }
    if coords.len() <= k {
        return Err(Error::Input(format!(
            "a {k}-nearest-neighbor graph needs more than {k} points, scene has {}",
            coords.len()
        )));
    }
    if coords.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Input("coordinates must be finite".into()));
    }
    let tree = KdTree::new(coords);
    let mut neighbors = Vec::with_capacity(coords.len() * k);
    for (i, q) in coords.iter().enumerate() {
        neighbors.extend(tree.nearest(q, k, Some(i)).into_iter().map(|(_, j)| j));
    }
    Ok(KnnGraph { neighbors, k })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_points() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
        let g = build_knn_graph(&pts, 2).unwrap();
        assert_eq!(g.row(0), &[1, 2]);
        assert_eq!(g.row(3), &[2, 1]);
        // Row 1 has 0 and 2 equidistant: the lower index comes first.
        assert_eq!(g.row(1), &[0, 2]);
    }

    #[test]
    fn equidistant_peers_resolve_to_lower_index() {
        // Equilateral triangle with exactly representable side length sqrt(2).
        let tri = [[0.0, 0.0, 0.0], [1.0, 1.0, 0.0], [1.0, 0.0, 1.0]];
        let g = build_knn_graph(&tri, 1).unwrap();
        assert_eq!(g.row(0), &[1]);
        assert_eq!(g.row(1), &[0]);
        assert_eq!(g.row(2), &[0]);
        // Regular tetrahedron: every pairwise squared distance is exactly 8.
        let tet = [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]];
        let g = build_knn_graph(&tet, 1).unwrap();
        assert_eq!(g.row(0), &[1]);
        assert_eq!(g.row(1), &[0]);
        assert_eq!(g.row(2), &[0]);
        assert_eq!(g.row(3), &[0]);
        let g = build_knn_graph(&tet, 2).unwrap();
        assert_eq!(g.row(3), &[0, 1]);
    }

    #[test]
    fn rejects_too_few_points() {
        let pts = [[0.0; 3], [1.0, 0.0, 0.0]];
        let err = build_knn_graph(&pts, 2).unwrap_err();
        assert!(err.to_string().contains("more than 2 points"));
    }

    #[test]
    fn duplicate_points_are_neighbors_at_zero_distance() {
        let pts = vec![[0.5; 3]; 12];
        let g = build_knn_graph(&pts, 3).unwrap();
        assert_eq!(g.row(0), &[1, 2, 3]);
        assert_eq!(g.row(5), &[0, 1, 2]);
    }
}
