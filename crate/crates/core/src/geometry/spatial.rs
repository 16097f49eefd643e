//! Static KD-tree for exact nearest-neighbour queries over 3D points.

use super::Vec3;

pub const DEFAULT_LEAF_SIZE: usize = 16;

#[derive(Debug, Clone, Copy)]
struct Node {
    min: [f64; 3],
    max: [f64; 3],
    // Children for internal nodes; `usize::MAX` marks a leaf.
    left: usize,
    right: usize,
    start: usize,
    end: usize,
}

#[derive(Debug, Clone)]
pub struct SpatialIndex {
    nodes: Vec<Node>,
    // Points in tree order together with their original index.
    points: Vec<[f64; 3]>,
    ids: Vec<usize>,
}

/// Squared Euclidean distance; shared with the brute-force paths so that
/// accelerated and exhaustive results agree bit for bit.
#[inline]
pub fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
pub(crate) fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl SpatialIndex {
    pub fn new(points: &[Vec3]) -> Self {
        Self::with_leaf_size(points, DEFAULT_LEAF_SIZE)
    }

    pub fn with_leaf_size(points: &[Vec3], leaf_size: usize) -> Self {
        let leaf_size = leaf_size.max(1);
        let mut ids: Vec<usize> = (0..points.len()).collect();
        let raw: Vec<[f64; 3]> = points.iter().map(arr).collect();
        let mut nodes = Vec::with_capacity(2 * points.len() / leaf_size + 1);
        if !points.is_empty() {
            build(&raw, &mut ids, 0, points.len(), leaf_size, &mut nodes);
        }
        let ordered = ids.iter().map(|&i| raw[i]).collect();
        SpatialIndex {
            nodes,
            points: ordered,
            ids,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Index and squared distance of the nearest point; ties go to the
    /// lowest original index. `None` for an empty tree.
    pub fn nearest(&self, query: &Vec3) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let q = arr(query);
        let mut best = (usize::MAX, f64::INFINITY);
        let mut stack: Vec<(usize, f64)> = Vec::with_capacity(64);
        stack.push((0, box_dist2(&self.nodes[0], &q)));
        while let Some((ni, bd)) = stack.pop() {
            if bd > best.1 {
                continue;
            }
            let node = &self.nodes[ni];
            if node.left == usize::MAX {
                for k in node.start..node.end {
                    let d = dist2(&self.points[k], &q);
                    let id = self.ids[k];
                    if d < best.1 || (d == best.1 && id < best.0) {
                        best = (id, d);
                    }
                }
                continue;
            }
            let dl = box_dist2(&self.nodes[node.left], &q);
            let dr = box_dist2(&self.nodes[node.right], &q);
            // Push the farther child first so the nearer one is visited first.
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

fn box_dist2(node: &Node, q: &[f64; 3]) -> f64 {
    let mut d = 0.0;
    for a in 0..3 {
        let e = if q[a] < node.min[a] {
            node.min[a] - q[a]
        } else if q[a] > node.max[a] {
            q[a] - node.max[a]
        } else {
            0.0
        };
        d += e * e;
    }
    d
}

fn build(
    raw: &[[f64; 3]],
    ids: &mut [usize],
    start: usize,
    end: usize,
    leaf_size: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for &i in &ids[start..end] {
        for a in 0..3 {
            min[a] = min[a].min(raw[i][a]);
            max[a] = max[a].max(raw[i][a]);
        }
    }
    let idx = nodes.len();
    nodes.push(Node {
        min,
        max,
        left: usize::MAX,
        right: usize::MAX,
        start,
        end,
    });
    let count = end - start;
    if count <= leaf_size {
        return idx;
    }
    let extent = [max[0] - min[0], max[1] - min[1], max[2] - min[2]];
    let axis = if extent[0] >= extent[1] && extent[0] >= extent[2] {
        0
    } else if extent[1] >= extent[2] {
        1
    } else {
        2
    };
    let mid = count / 2;
    ids[start..end].select_nth_unstable_by(mid, |&a, &b| {
        raw[a][axis].total_cmp(&raw[b][axis]).then(a.cmp(&b))
    });
    let left = build(raw, ids, start, start + mid, leaf_size, nodes);
    let right = build(raw, ids, start + mid, end, leaf_size, nodes);
    nodes[idx].left = left;
    nodes[idx].right = right;
    idx
}

/// Exhaustive nearest neighbour with the same tie rule as [`SpatialIndex`].
pub fn nearest_brute_force(points: &[Vec3], query: &Vec3) -> Option<(usize, f64)> {
    let q = arr(query);
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let d = dist2(&arr(p), &q);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best
}
