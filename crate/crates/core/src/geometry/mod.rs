//! Mesh representation, file formats, spatial queries and metrics.
//!
//! Coordinates are millimetres in a head-centred frame: x lateral (the
//! mid-sagittal normal), y vertical (up), z anterior.

pub mod landmarks;
pub mod mesh;
pub mod metrics;
pub mod obj;
pub mod plane;
pub mod rigid;
pub mod spatial;
pub mod symmetry;

pub type Vec3 = nalgebra::Vector3<f64>;

pub use landmarks::{load_landmarks, save_landmarks, LandmarkSet, LANDMARK_COUNT};
pub use mesh::{triangle_normals, Mesh, RegionMask, TriangleNormals, MIN_TRIANGLE_AREA};
pub use metrics::{chamfer_distance, hausdorff_and_chamfer, hausdorff_distance, ChamferVariant};
pub use obj::{load_obj, save_obj};
pub use plane::{fit_midsagittal_plane, midsagittal_plane_vjp, point_line_distance, point_plane_distance, Plane};
pub use rigid::{rigid_align, rigid_align_points, RigidTransform};
pub use spatial::SpatialIndex;
pub use symmetry::{build_symmetry_pairing, SymmetryPairing};
