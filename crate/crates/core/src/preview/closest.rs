//! Exact closest-point queries against a triangle mesh.

use crate::geometry::Vec3;

/// Closest point of triangle `(a, b, c)` to `p`, as barycentric weights of
/// the three corners. Points outside the triangle's prism land on an edge or
/// a corner, so the weights are always nonnegative.
pub fn closest_point_barycentric(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> [f64; 3] {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return [1.0, 0.0, 0.0];
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return [0.0, 1.0, 0.0];
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return [1.0 - v, v, 0.0];
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return [0.0, 0.0, 1.0];
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return [1.0 - w, 0.0, w];
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return [0.0, 1.0 - w, w];
    }
    let denom = 1.0 / (va + vb + vc);
    let v = (vb * denom).clamp(0.0, 1.0);
    let w = (vc * denom).clamp(0.0, 1.0 - v);
    [1.0 - v - w, v, w]
}

#[inline]
pub(crate) fn weighted_point(lambda: &[f64; 3], a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    lambda[0] * a + lambda[1] * b + lambda[2] * c
}

/// Squared distance from `p` to triangle `t` of `vertices`, with the
/// barycentric weights of the foot point.
pub fn triangle_distance2(p: &Vec3, vertices: &[Vec3], t: &[usize; 3]) -> (f64, [f64; 3]) {
    let (a, b, c) = (&vertices[t[0]], &vertices[t[1]], &vertices[t[2]]);
    let lambda = closest_point_barycentric(p, a, b, c);
    ((p - weighted_point(&lambda, a, b, c)).norm_squared(), lambda)
}

#[derive(Debug, Clone, Copy)]
struct Node {
    min: Vec3,
    max: Vec3,
    // Children for internal nodes; `usize::MAX` marks a leaf over
    // `order[start..end]`.
    left: usize,
    right: usize,
    start: usize,
    end: usize,
}

const LEAF_SIZE: usize = 4;

/// Bounding-box hierarchy over the triangles of a mesh.
#[derive(Debug, Clone)]
pub struct TriangleTree {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    nodes: Vec<Node>,
    order: Vec<usize>,
}

/// Result of a closest-triangle query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestHit {
    pub triangle: usize,
    pub lambda: [f64; 3],
    pub distance2: f64,
}

impl TriangleTree {
    pub fn new(vertices: &[Vec3], triangles: &[[usize; 3]]) -> Self {
        let mut order: Vec<usize> = (0..triangles.len()).collect();
        let centroids: Vec<Vec3> = triangles
            .iter()
            .map(|t| (vertices[t[0]] + vertices[t[1]] + vertices[t[2]]) / 3.0)
            .collect();
        let mut tree = TriangleTree {
            vertices: vertices.to_vec(),
            triangles: triangles.to_vec(),
            nodes: Vec::with_capacity(2 * triangles.len() / LEAF_SIZE + 1),
            order: Vec::new(),
        };
        if !triangles.is_empty() {
            tree.build(&centroids, &mut order, 0, triangles.len());
        }
        tree.order = order;
        tree
    }

    fn bounds(&self, order: &[usize]) -> (Vec3, Vec3) {
        let mut min = Vec3::repeat(f64::INFINITY);
        let mut max = Vec3::repeat(f64::NEG_INFINITY);
        for &t in order {
            for &v in &self.triangles[t] {
                min = min.inf(&self.vertices[v]);
                max = max.sup(&self.vertices[v]);
            }
        }
        (min, max)
    }

    fn build(&mut self, centroids: &[Vec3], order: &mut [usize], start: usize, end: usize) -> usize {
        let (min, max) = self.bounds(&order[start..end]);
        let id = self.nodes.len();
        self.nodes.push(Node {
            min,
            max,
            left: usize::MAX,
            right: usize::MAX,
            start,
            end,
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let extent = max - min;
        let axis = extent.imax();
        let mid = start + (end - start) / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b))
        });
        let left = self.build(centroids, order, start, mid);
        let right = self.build(centroids, order, mid, end);
        self.nodes[id].left = left;
        self.nodes[id].right = right;
        id
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Exact closest triangle; among equally distant triangles the lowest
    /// index wins. `None` for a mesh without triangles.
    pub fn closest(&self, p: &Vec3) -> Option<ClosestHit> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = ClosestHit {
            triangle: usize::MAX,
            lambda: [0.0; 3],
            distance2: f64::INFINITY,
        };
        let mut stack = vec![(0usize, box_distance2(p, &self.nodes[0]))];
        while let Some((id, bound)) = stack.pop() {
            // Equal bounds are still visited so ties reach the lower index.
            if bound > best.distance2 {
                continue;
            }
            let node = &self.nodes[id];
            if node.left == usize::MAX {
                for &t in &self.order[node.start..node.end] {
                    let (d2, lambda) = triangle_distance2(p, &self.vertices, &self.triangles[t]);
                    if d2 < best.distance2 || (d2 == best.distance2 && t < best.triangle) {
                        best = ClosestHit {
                            triangle: t,
                            lambda,
                            distance2: d2,
                        };
                    }
                }
                continue;
            }
            let dl = box_distance2(p, &self.nodes[node.left]);
            let dr = box_distance2(p, &self.nodes[node.right]);
            // Nearer child on top of the stack.
            if dl <= dr {
                stack.push((node.right, dr));
                stack.push((node.left, dl));
            } else {
                stack.push((node.left, dl));
                stack.push((node.right, dr));
            }
        }
        Some(best)
    }
}

fn box_distance2(p: &Vec3, node: &Node) -> f64 {
    let mut d2 = 0.0;
    for i in 0..3 {
        let d = if p[i] < node.min[i] {
            node.min[i] - p[i]
        } else if p[i] > node.max[i] {
            p[i] - node.max[i]
        } else {
            0.0
        };
        d2 += d * d;
    }
    d2
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri() -> (Vec3, Vec3, Vec3) {
        (Vec3::new(0.0, 0.0, 0.0), Vec3::new(4.0, 0.0, 0.0), Vec3::new(0.0, 3.0, 0.0))
    }

    #[test]
    fn regions() {
        let (a, b, c) = tri();
        assert_eq!(closest_point_barycentric(&Vec3::new(-1.0, -1.0, 2.0), &a, &b, &c), [1.0, 0.0, 0.0]);
        assert_eq!(closest_point_barycentric(&Vec3::new(6.0, -1.0, 0.0), &a, &b, &c), [0.0, 1.0, 0.0]);
        assert_eq!(closest_point_barycentric(&Vec3::new(-1.0, 5.0, 0.0), &a, &b, &c), [0.0, 0.0, 1.0]);
        let l = closest_point_barycentric(&Vec3::new(2.0, -3.0, 1.0), &a, &b, &c);
        assert_eq!(l, [0.5, 0.5, 0.0]);
        let l = closest_point_barycentric(&Vec3::new(-2.0, 1.5, 0.0), &a, &b, &c);
        assert_eq!(l, [0.5, 0.0, 0.5]);
    }

    #[test]
    fn interior_matches_area_ratios() {
        let (a, b, c) = tri();
        let p = Vec3::new(1.0, 1.0, 7.0);
        let l = closest_point_barycentric(&p, &a, &b, &c);
        let foot = Vec3::new(1.0, 1.0, 0.0);
        let area = |x: &Vec3, y: &Vec3, z: &Vec3| 0.5 * (y - x).cross(&(z - x)).norm();
        let total = area(&a, &b, &c);
        let expected = [area(&foot, &b, &c) / total, area(&a, &foot, &c) / total, area(&a, &b, &foot) / total];
        for i in 0..3 {
            assert!((l[i] - expected[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_tree() {
        assert!(TriangleTree::new(&[], &[]).closest(&Vec3::zeros()).is_none());
    }

    #[test]
    fn tie_goes_to_lower_index() {
        let v = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let tree = TriangleTree::new(&v, &[[0, 1, 2], [0, 1, 2], [2, 1, 0]]);
        assert_eq!(tree.closest(&Vec3::new(0.2, 0.2, 1.0)).unwrap().triangle, 0);
    }
}
