//! Post-operative previews: moving the predicted model-space deformation
//! onto the original scan, and latent interpolation sequences.

mod closest;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::geometry::metrics::nearest_sq_distances;
use crate::geometry::{hausdorff_and_chamfer, save_obj, ChamferVariant, Mesh, SpatialIndex, Vec3};
use crate::model::{LatentCode, MorphableModel};
use crate::{Error, Result};

pub use closest::{closest_point_barycentric, triangle_distance2, ClosestHit, TriangleTree};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarycentricEntry {
    pub triangle: usize,
    pub lambda: [f64; 3],
}

/// Closest model triangle and foot-point barycentrics of every scan vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct BarycentricMap {
    pub entries: Vec<BarycentricEntry>,
}

impl BarycentricMap {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Maps each scan vertex to its exact closest point on `model_mesh`. The
/// scan must already be rigidly aligned to model space.
pub fn build_barycentric_map(scan: &Mesh, model_mesh: &Mesh) -> Result<BarycentricMap> {
    if scan.vertices.is_empty() || model_mesh.vertices.is_empty() {
        return Err(Error::EmptyMesh);
    }
    if model_mesh.triangles.is_empty() {
        return Err(Error::InvalidMesh("model mesh has no triangles".into()));
    }
    let tree = TriangleTree::new(&model_mesh.vertices, &model_mesh.triangles);
    let entries = scan
        .vertices
        .iter()
        .map(|p| {
            let hit = tree.closest(p).expect("tree has triangles");
            BarycentricEntry {
                triangle: hit.triangle,
                lambda: hit.lambda,
            }
        })
        .collect();
    Ok(BarycentricMap { entries })
}

/// Moves every scan vertex by the barycentric blend of the model
/// displacement `post_model - pre_model` at its mapped triangle.
pub fn transfer_prediction(scan: &Mesh, map: &BarycentricMap, pre_model: &Mesh, post_model: &Mesh) -> Result<Mesh> {
    pre_model.ensure_same_topology(post_model)?;
    if map.len() != scan.vertices.len() {
        return Err(Error::LengthMismatch {
            expected: scan.vertices.len(),
            actual: map.len(),
        });
    }
    let displacement = |v: usize| post_model.vertices[v] - pre_model.vertices[v];
    let mut vertices = Vec::with_capacity(scan.vertices.len());
    for (p, e) in scan.vertices.iter().zip(&map.entries) {
        let t = pre_model.triangles.get(e.triangle).ok_or_else(|| {
            Error::TopologyMismatch(format!(
                "map references triangle {} of a {}-triangle model",
                e.triangle,
                pre_model.triangles.len()
            ))
        })?;
        let (da, db, dc) = (displacement(t[0]), displacement(t[1]), displacement(t[2]));
        // Written relative to the third corner so that a uniform
        // displacement is reproduced without rounding.
        let d: Vec3 = dc + e.lambda[0] * (da - dc) + e.lambda[1] * (db - dc);
        vertices.push(p + d);
    }
    Ok(Mesh {
        vertices,
        triangles: scan.triangles.clone(),
        colors: scan.colors.clone(),
    })
}

/// Decodes `steps` codes evenly spaced from `code_pre` to `code_pred`. The
/// first and last frames are the decodes of the endpoints themselves.
pub fn interpolate_codes(
    model: &MorphableModel,
    code_pre: &LatentCode,
    code_pred: &LatentCode,
    steps: usize,
) -> Result<Vec<Mesh>> {
    if steps < 2 {
        return Err(Error::InvalidArgument(format!("interpolation needs at least 2 steps, got {steps}")));
    }
    model.check_code(code_pre)?;
    model.check_code(code_pred)?;
    (0..steps)
        .map(|i| {
            if i == 0 {
                model.decode_neutral(code_pre)
            } else if i == steps - 1 {
                model.decode_neutral(code_pred)
            } else {
                let t = i as f64 / (steps - 1) as f64;
                model.decode_neutral(&((1.0 - t) * code_pre + t * code_pred))
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameDistance {
    pub frame: usize,
    pub hd: f64,
    pub cd: f64,
}

pub const DISTANCE_CSV: &str = "distances.csv";

pub fn frame_name(frame: usize, extension: &str) -> String {
    format!("frame_{frame:04}.{extension}")
}

/// Writes `frame_####.obj` for every frame. With a reference mesh it also
/// writes `distances.csv` (`frame,hd_mm,cd`) and a `frame_####.dist`
/// sidecar holding each vertex's distance to the nearest reference vertex.
pub fn export_sequence(
    frames: &[Mesh],
    dir: impl AsRef<Path>,
    reference: Option<&Mesh>,
    chamfer: ChamferVariant,
) -> Result<Vec<FrameDistance>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, frame) in frames.iter().enumerate() {
        save_obj(frame, dir.join(frame_name(i, "obj")))?;
    }
    let Some(reference) = reference else {
        return Ok(Vec::new());
    };
    let index = SpatialIndex::new(&reference.vertices);
    let mut rows = Vec::with_capacity(frames.len());
    let mut csv = String::from("frame,hd_mm,cd\n");
    for (i, frame) in frames.iter().enumerate() {
        let (hd, cd) = hausdorff_and_chamfer(&frame.vertices, &reference.vertices, chamfer)?;
        let _ = writeln!(csv, "{i},{hd},{cd}");
        rows.push(FrameDistance { frame: i, hd, cd });
        let mut sidecar = String::with_capacity(frame.vertices.len() * 20);
        for d2 in nearest_sq_distances(&frame.vertices, &index) {
            let _ = writeln!(sidecar, "{}", d2.sqrt());
        }
        let path = dir.join(frame_name(i, "dist"));
        fs::write(&path, sidecar).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join(DISTANCE_CSV);
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}
