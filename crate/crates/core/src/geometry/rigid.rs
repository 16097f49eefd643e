use nalgebra::Matrix3;

use super::{LandmarkSet, Mesh, Vec3};
use crate::{Error, Result};

/// `x ↦ rotation · x + translation` with a proper rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ inner`: apply `inner` first.
    pub fn compose(&self, inner: &RigidTransform) -> Self {
        RigidTransform {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * inner.translation + self.translation,
        }
    }

    pub fn apply_mesh(&self, mesh: &Mesh) -> Mesh {
        let mut out = mesh.clone();
        for v in &mut out.vertices {
            *v = self.apply(v);
        }
        out
    }

    pub fn apply_landmarks(&self, landmarks: &LandmarkSet) -> LandmarkSet {
        landmarks.map(|p| self.apply(p))
    }
}

/// Least-squares rigid transform mapping `source` onto `target`
/// (Kabsch, reflections excluded).
pub fn rigid_align(source: &LandmarkSet, target: &LandmarkSet) -> Result<RigidTransform> {
    rigid_align_points(source.points(), target.points())
}

pub fn rigid_align_points(source: &[Vec3], target: &[Vec3]) -> Result<RigidTransform> {
    if source.len() != target.len() {
        return Err(Error::LengthMismatch {
            expected: source.len(),
            actual: target.len(),
        });
    }
    if source.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let n = source.len() as f64;
    let sc = source.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let tc = target.iter().fold(Vec3::zeros(), |a, p| a + p) / n;

    let mut scatter = Matrix3::zeros();
    let mut cross = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        let ds = s - sc;
        scatter += ds * ds.transpose();
        cross += ds * (t - tc).transpose();
    }

    let eig = scatter.symmetric_eigenvalues();
    let mut ev = [eig[0], eig[1], eig[2]];
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[0] <= 0.0 || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::SingularConfiguration(
            "source points are collinear or coincident".into(),
        ));
    }

    let svd = cross.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d));
    let rotation = v * correction * u.transpose();
    let translation = tc - rotation * sc;
    Ok(RigidTransform {
        rotation,
        translation,
    })
}
