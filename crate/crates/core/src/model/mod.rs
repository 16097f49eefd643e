//! Linear morphable head model with a single jaw joint.
//!
//! A face is `T + D·β` where `T` is a mirror-symmetric template, `D` the
//! scaled shape basis and `β` the latent code. An optional jaw angle
//! deforms the result by linear blend skinning about a fixed joint.

mod build;
mod fit;
mod io;

use nalgebra::{DMatrix, DVector, Rotation3};

use crate::geometry::{LandmarkSet, Mesh, RegionMask, Vec3};
use crate::{Error, Result};

pub use build::{build_synthetic_model, ModelSpec};
pub use fit::{fit, Correspondence, FitConfig, FitOutput, FitReport};
pub use io::{format_model, load_model, parse_model, save_model};

/// Shape coefficients of one face.
pub type LatentCode = DVector<f64>;

/// Jaw articulation, radians about the lateral axis through the joint.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseParams {
    pub jaw_angle: f64,
}

impl PoseParams {
    pub const MAX_JAW_ANGLE: f64 = std::f64::consts::FRAC_PI_4;

    pub fn new(jaw_angle: f64) -> Result<Self> {
        if !(jaw_angle.abs() <= Self::MAX_JAW_ANGLE) {
            return Err(Error::InvalidArgument(format!(
                "jaw angle {jaw_angle} outside ±π/4"
            )));
        }
        Ok(PoseParams { jaw_angle })
    }
}

/// Named vertex regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Face,
    Chin,
    LowerFace,
}

impl std::str::FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "face" => Ok(Region::Face),
            "chin" => Ok(Region::Chin),
            "lower-face" => Ok(Region::LowerFace),
            other => Err(Error::UnknownRegion(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MorphableModel {
    pub(crate) spec: ModelSpec,
    pub(crate) template: Vec<Vec3>,
    pub(crate) triangles: Vec<[usize; 3]>,
    /// 3n×K, orthonormal columns, vertex-major rows (x0 y0 z0 x1 ...).
    pub(crate) basis: DMatrix<f64>,
    /// Column scale applied in decode (mm per unit coefficient, in the
    /// 3n-vector norm).
    pub(crate) scales: DVector<f64>,
    pub(crate) jaw_joint: Vec3,
    pub(crate) skin_weights: Vec<f64>,
    pub(crate) landmark_indices: Vec<usize>,
    pub(crate) mirror: Vec<usize>,
    pub(crate) face: RegionMask,
    pub(crate) chin: RegionMask,
    pub(crate) lower_face: RegionMask,
    /// `basis · diag(scales)`, cached.
    pub(crate) shape_dirs: DMatrix<f64>,
}

impl MorphableModel {
    pub fn spec(&self) -> ModelSpec {
        self.spec
    }

    pub fn vertex_count(&self) -> usize {
        self.template.len()
    }

    pub fn code_len(&self) -> usize {
        self.basis.ncols()
    }

    pub fn template(&self) -> &[Vec3] {
        &self.template
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn scales(&self) -> &DVector<f64> {
        &self.scales
    }

    /// Per-vertex RMS displacement (mm) produced by a unit coefficient of
    /// each mode.
    pub fn mode_rms(&self) -> DVector<f64> {
        let n = self.vertex_count() as f64;
        self.scales.map(|s| s / n.sqrt())
    }

    /// The scaled basis `B·diag(σ)`, i.e. the Jacobian of decode at pose 0.
    pub fn shape_dirs(&self) -> &DMatrix<f64> {
        &self.shape_dirs
    }

    pub fn jaw_joint(&self) -> Vec3 {
        self.jaw_joint
    }

    pub fn skin_weights(&self) -> &[f64] {
        &self.skin_weights
    }

    pub fn landmark_indices(&self) -> &[usize] {
        &self.landmark_indices
    }

    pub fn mirror(&self) -> &[usize] {
        &self.mirror
    }

    pub fn region_mask(&self, region: Region) -> &RegionMask {
        match region {
            Region::Face => &self.face,
            Region::Chin => &self.chin,
            Region::LowerFace => &self.lower_face,
        }
    }

    pub fn region_mask_by_name(&self, name: &str) -> Result<&RegionMask> {
        Ok(self.region_mask(name.parse()?))
    }

    pub fn zero_code(&self) -> LatentCode {
        DVector::zeros(self.code_len())
    }

    pub fn template_mesh(&self) -> Mesh {
        Mesh {
            vertices: self.template.clone(),
            triangles: self.triangles.clone(),
            colors: None,
        }
    }

    pub fn check_code(&self, code: &LatentCode) -> Result<()> {
        if code.len() != self.code_len() {
            return Err(Error::LengthMismatch {
                expected: self.code_len(),
                actual: code.len(),
            });
        }
        Ok(())
    }

    /// Vertex positions `T + D·β` at pose 0.
    pub fn shape_vertices(&self, code: &LatentCode) -> Result<Vec<Vec3>> {
        self.check_code(code)?;
        let offsets = &self.shape_dirs * code;
        Ok(self
            .template
            .iter()
            .enumerate()
            .map(|(i, t)| t + Vec3::new(offsets[3 * i], offsets[3 * i + 1], offsets[3 * i + 2]))
            .collect())
    }

    /// Decodes a code to a mesh, applying jaw skinning when the pose is
    /// nonzero.
    pub fn decode(&self, code: &LatentCode, pose: PoseParams) -> Result<Mesh> {
        let mut vertices = self.shape_vertices(code)?;
        if pose.jaw_angle != 0.0 {
            let rot = Rotation3::from_axis_angle(&Vec3::x_axis(), pose.jaw_angle);
            for (v, &w) in vertices.iter_mut().zip(&self.skin_weights) {
                if w > 0.0 {
                    let rel = *v - self.jaw_joint;
                    *v += w * (rot * rel - rel);
                }
            }
        }
        Ok(Mesh {
            vertices,
            triangles: self.triangles.clone(),
            colors: None,
        })
    }

    /// Decode at pose 0.
    pub fn decode_neutral(&self, code: &LatentCode) -> Result<Mesh> {
        self.decode(code, PoseParams::default())
    }

    /// Landmarks of the neutral decode, read at the stored vertex indices.
    pub fn landmark_positions(&self, code: &LatentCode) -> Result<LandmarkSet> {
        let vertices = self.shape_vertices(code)?;
        LandmarkSet::new(self.landmark_indices.iter().map(|&i| vertices[i]).collect())
    }

    /// Landmarks read off an arbitrary mesh sharing the template topology.
    pub fn landmarks_of(&self, mesh: &Mesh) -> Result<LandmarkSet> {
        if mesh.vertices.len() != self.vertex_count() {
            return Err(Error::TopologyMismatch(format!(
                "mesh has {} vertices, model {}",
                mesh.vertices.len(),
                self.vertex_count()
            )));
        }
        LandmarkSet::new(mesh.gather(&self.landmark_indices))
    }

    pub fn template_landmarks(&self) -> LandmarkSet {
        LandmarkSet::new(self.landmark_indices.iter().map(|&i| self.template[i]).collect())
            .expect("template landmarks are finite")
    }
}
