//! Static k-d tree for exact nearest-neighbor queries.

use nalgebra::Vector3;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: u32,
        end: u32,
    },
    Split {
        axis: u8,
        value: f64,
        left: u32,
        right: u32,
    },
}

/// Balanced k-d tree over a fixed point set. Queries return the nearest point
/// with ties broken by the lowest original index.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    ids: Vec<u32>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn build(points: &[Vector3<f64>], dim: usize) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::new();
        build_node(points, dim, &mut order, 0, &mut nodes);
        Self {
            points: order.iter().map(|&i| points[i as usize]).collect(),
            ids: order,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `(index, squared distance)` of the nearest point.
    pub fn nearest(&self, query: &Vector3<f64>) -> (usize, f64) {
        let mut best_d2 = f64::INFINITY;
        let mut best_id = u32::MAX;
        let mut stack: [(u32, f64); 64] = [(0, 0.0); 64];
        let mut top = 1;
        while top > 0 {
            top -= 1;
            let (node, bound) = stack[top];
            if bound > best_d2 {
                continue;
            }
            match self.nodes[node as usize] {
                Node::Leaf { start, end } => {
                    for k in start as usize..end as usize {
                        let d2 = (self.points[k] - query).norm_squared();
                        let id = self.ids[k];
                        if d2 < best_d2 || (d2 == best_d2 && id < best_id) {
                            best_d2 = d2;
                            best_id = id;
                        }
                    }
                }
                Node::Split {
                    axis,
                    value,
                    left,
                    right,
                } => {
                    let diff = query[axis as usize] - value;
                    let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                    // Far side first so the near side is popped next.
                    stack[top] = (far, diff * diff);
                    stack[top + 1] = (near, 0.0);
                    top += 2;
                }
            }
        }
        (best_id as usize, best_d2)
    }
}

fn build_node(
    points: &[Vector3<f64>],
    dim: usize,
    order: &mut [u32],
    offset: usize,
    nodes: &mut Vec<Node>,
) -> u32 {
    let id = nodes.len() as u32;
    if order.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset as u32,
            end: (offset + order.len()) as u32,
        });
        return id;
    }
    let axis = (0..dim)
        .max_by(|&a, &b| {
            spread(points, order, a)
                .partial_cmp(&spread(points, order, b))
                .unwrap()
        })
        .unwrap();
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&i, &j| {
        points[i as usize][axis]
            .partial_cmp(&points[j as usize][axis])
            .unwrap()
    });
    let value = points[order[mid] as usize][axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (lo, hi) = order.split_at_mut(mid);
    let left = build_node(points, dim, lo, offset, nodes);
    let right = build_node(points, dim, hi, offset + mid, nodes);
    nodes[id as usize] = Node::Split {
        axis: axis as u8,
        value,
        left,
        right,
    };
    id
}

fn spread(points: &[Vector3<f64>], order: &[u32], axis: usize) -> f64 {
    let (lo, hi) = order.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
        let v = points[i as usize][axis];
        (lo.min(v), hi.max(v))
    });
    hi - lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &[Vector3<f64>], q: &Vector3<f64>) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d2 = (p - q).norm_squared();
            if d2 < best.1 {
                best = (i, d2);
            }
        }
        best
    }

    #[test]
    fn agrees_with_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dim in [2, 3] {
            for m in [1, 5, 9, 100, 333] {
                let pts: Vec<_> = (0..m)
                    .map(|_| {
                        let z = if dim == 3 { rng.random_range(-1.0..1.0) } else { 0.0 };
                        Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), z)
                    })
                    .collect();
                let tree = KdTree::build(&pts, dim);
                for _ in 0..500 {
                    let z = if dim == 3 { rng.random_range(-1.5..1.5) } else { 0.0 };
                    let q = Vector3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), z);
                    assert_eq!(tree.nearest(&q), brute(&pts, &q));
                }
            }
        }
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        let pts: Vec<_> = (0..40)
            .map(|i| Vector3::new(if i % 2 == 0 { 1.0 } else { -1.0 }, 0.0, 0.0))
            .collect();
        let tree = KdTree::build(&pts, 2);
        assert_eq!(tree.nearest(&Vector3::zeros()), (0, 1.0));
        assert_eq!(tree.nearest(&Vector3::new(-0.5, 0.0, 0.0)), (1, 0.25));
    }
}
