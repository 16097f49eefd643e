use super::Vec3;
use crate::{Error, Result};

/// Triangle mesh in millimetres with optional per-vertex RGB color.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub colors: Option<Vec<[f64; 3]>>,
}

impl Mesh {
    /// Builds a mesh and checks its invariants.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = Mesh {
            vertices,
            triangles,
            colors: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn with_colors(mut self, colors: Vec<[f64; 3]>) -> Result<Self> {
        if colors.len() != self.vertices.len() {
            return Err(Error::InvalidMesh(format!(
                "{} colors for {} vertices",
                colors.len(),
                self.vertices.len()
            )));
        }
        self.colors = Some(colors);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if let Some((i, _)) = self
            .vertices
            .iter()
            .enumerate()
            .find(|(_, v)| !v.iter().all(|c| c.is_finite()))
        {
            return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= n) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} references vertex out of range ({n} vertices)"
                )));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::InvalidMesh(format!("triangle {t} repeats a vertex")));
            }
        }
        if let Some(colors) = &self.colors {
            if colors.len() != n {
                return Err(Error::InvalidMesh("color count differs from vertex count".into()));
            }
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// True when both meshes have the same vertex count and triangle list.
    pub fn same_topology(&self, other: &Mesh) -> bool {
        self.vertices.len() == other.vertices.len() && self.triangles == other.triangles
    }

    pub fn ensure_same_topology(&self, other: &Mesh) -> Result<()> {
        if self.same_topology(other) {
            Ok(())
        } else {
            Err(Error::TopologyMismatch(format!(
                "{} vertices/{} triangles vs {} vertices/{} triangles",
                self.vertices.len(),
                self.triangles.len(),
                other.vertices.len(),
                other.triangles.len()
            )))
        }
    }

    pub fn centroid(&self) -> Vec3 {
        let sum = self.vertices.iter().fold(Vec3::zeros(), |acc, v| acc + v);
        sum / self.vertices.len().max(1) as f64
    }

    /// Vertices at the given indices, in order.
    pub fn gather(&self, indices: &[usize]) -> Vec<Vec3> {
        indices.iter().map(|&i| self.vertices[i]).collect()
    }
}

/// Below this area (mm²) a triangle has no usable normal.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Unit normals per triangle plus the indices of degenerate triangles.
#[derive(Debug, Clone)]
pub struct TriangleNormals {
    /// Right-hand-rule unit normals; zero for degenerate triangles.
    pub normals: Vec<Vec3>,
    pub degenerate: Vec<usize>,
}

impl TriangleNormals {
    pub fn is_valid(&self, t: usize) -> bool {
        self.normals[t] != Vec3::zeros()
    }
}

pub fn triangle_normals(mesh: &Mesh) -> TriangleNormals {
    let mut normals = Vec::with_capacity(mesh.triangles.len());
    let mut degenerate = Vec::new();
    for (t, &[a, b, c]) in mesh.triangles.iter().enumerate() {
        let v0 = mesh.vertices[a];
        let n = (mesh.vertices[b] - v0).cross(&(mesh.vertices[c] - v0));
        let len = n.norm();
        if 0.5 * len <= MIN_TRIANGLE_AREA {
            degenerate.push(t);
            normals.push(Vec3::zeros());
        } else {
            normals.push(n / len);
        }
    }
    TriangleNormals {
        normals,
        degenerate,
    }
}

/// Sorted set of vertex indices over a fixed topology.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RegionMask {
    indices: Vec<usize>,
}

impl RegionMask {
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        RegionMask { indices }
    }

    /// Checks that every index is valid for a mesh with `vertex_count` vertices.
    pub fn for_vertex_count(indices: Vec<usize>, vertex_count: usize) -> Result<Self> {
        let mask = Self::new(indices);
        if let Some(&last) = mask.indices.last() {
            if last >= vertex_count {
                return Err(Error::InvalidArgument(format!(
                    "mask index {last} out of range for {vertex_count} vertices"
                )));
            }
        }
        Ok(mask)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn is_subset_of(&self, other: &RegionMask) -> bool {
        self.indices.iter().all(|&i| other.contains(i))
    }

    /// Dense membership table of length `vertex_count`.
    pub fn membership(&self, vertex_count: usize) -> Vec<bool> {
        let mut member = vec![false; vertex_count];
        for &i in &self.indices {
            member[i] = true;
        }
        member
    }

    /// Indices of triangles whose three corners all lie in the mask.
    pub fn triangles(&self, triangles: &[[usize; 3]]) -> Vec<usize> {
        let max = self.indices.last().map_or(0, |&m| m + 1);
        let member = self.membership(max);
        let inside = |i: usize| i < max && member[i];
        triangles
            .iter()
            .enumerate()
            .filter(|(_, t)| t.iter().all(|&i| inside(i)))
            .map(|(k, _)| k)
            .collect()
    }

    /// Vertex positions of `mesh` restricted to the mask.
    pub fn points(&self, mesh: &Mesh) -> Vec<Vec3> {
        mesh.gather(&self.indices)
    }
}
