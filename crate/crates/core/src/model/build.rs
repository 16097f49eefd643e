//! Procedural construction of the synthetic morphable model.
//!
//! The template is an ellipsoidal half head sampled on a (row, column)
//! grid in elevation/azimuth with facial features added as anterior
//! offsets. Only the left half (x ≤ 0) is evaluated; the right half is its
//! exact mirror image, so the mirror map and the left/right symmetry of
//! everything derived from it hold bit for bit.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use super::MorphableModel;
use crate::geometry::landmarks::{index, mirror_landmark, LANDMARK_COUNT};
use crate::geometry::{RegionMask, Vec3};
use crate::{seed, Error, Result};

/// Identity of a procedurally built model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub seed: u64,
    /// Number of shape modes K.
    pub code_len: usize,
    /// Grid resolution r: 2r rows × (2r+1) columns.
    pub resolution: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            seed: 0,
            code_len: 64,
            resolution: 18,
        }
    }
}

impl ModelSpec {
    pub fn rows(&self) -> usize {
        2 * self.resolution
    }

    pub fn cols(&self) -> usize {
        2 * self.resolution + 1
    }

    pub fn vertex_count(&self) -> usize {
        self.rows() * self.cols()
    }
}

const RADIUS_X: f64 = 78.0;
const RADIUS_Y: f64 = 110.0;
const RADIUS_Z: f64 = 98.0;
const AZIMUTH_MAX: f64 = 105.0;
const ELEVATION_CENTER: f64 = 2.5;
const ELEVATION_HALF_SPAN: f64 = 57.5;

/// Leading mode RMS displacement (mm) and geometric decay ratio.
const MODE_RMS_0: f64 = 3.0;
const MODE_DECAY: f64 = 0.97;

const JAW_JOINT: [f64; 3] = [0.0, -20.0, 10.0];
const JAW_RAMP: f64 = 20.0;

fn gauss(d2: f64, sigma: f64) -> f64 {
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// Anterior feature offset (mm) at frontal coordinates (x, y).
fn feature_offset(x: f64, y: f64) -> f64 {
    let ax = x.abs();
    let nose_profile = if y >= 2.0 {
        gauss((y - 2.0).powi(2), 16.0)
    } else {
        gauss((y - 2.0).powi(2), 6.0)
    };
    let nose = 20.0 * gauss(x * x, 7.0) * nose_profile;
    let alae = 5.0 * gauss((ax - 12.0).powi(2), 5.0) * gauss((y + 6.0).powi(2), 5.0);
    let upper_lip = 2.0 * gauss(x * x, 16.0) * gauss((y + 26.0).powi(2), 5.0);
    let lower_lip = 3.8 * gauss(x * x, 14.0) * gauss((y + 43.0).powi(2), 5.0);
    let chin = 9.0 * gauss(x * x, 16.0) * gauss((y + 64.0).powi(2), 8.0);
    let sockets = -7.0 * gauss((ax - 30.0).powi(2) + (y - 30.0).powi(2), 8.0);
    let brows = 4.0 * gauss((ax - 28.0).powi(2), 16.0) * gauss((y - 45.0).powi(2), 5.0);
    let cheeks = 5.0 * gauss((ax - 40.0).powi(2) + (y + 5.0).powi(2), 15.0);
    nose + alae + upper_lip + lower_lip + chin + sockets + brows + cheeks
}

/// Maps t ∈ [-1, 1] to a warped parameter that samples the centre more
/// densely than the rim.
fn warp(t: f64) -> f64 {
    0.6 * t + 0.4 * t * t * t
}

/// Surface point at azimuth/elevation (degrees); `features` toggles the
/// facial offsets (off gives a plain convex ellipsoid patch).
pub(crate) fn head_point(azimuth_deg: f64, elevation_deg: f64, features: bool) -> Vec3 {
    let (sp, cp) = azimuth_deg.to_radians().sin_cos();
    let (se, ce) = elevation_deg.to_radians().sin_cos();
    let mut p = Vec3::new(RADIUS_X * sp * ce, RADIUS_Y * se, RADIUS_Z * cp * ce);
    if features && cp > 0.0 {
        p.z += cp * cp * feature_offset(p.x, p.y);
    }
    p
}

/// Grid template: vertices (left half evaluated, right half mirrored),
/// triangles with mirror-symmetric diagonals, and the mirror map.
pub(crate) fn grid_surface(
    resolution: usize,
    features: bool,
) -> (Vec<Vec3>, Vec<[usize; 3]>, Vec<usize>) {
    let rows = 2 * resolution;
    let cols = 2 * resolution + 1;
    let center = resolution;
    let at = |i: usize, j: usize| i * cols + j;

    let mut vertices = vec![Vec3::zeros(); rows * cols];
    for i in 0..rows {
        let t = 1.0 - 2.0 * i as f64 / (rows - 1) as f64;
        let elevation = ELEVATION_CENTER + ELEVATION_HALF_SPAN * warp(t);
        for j in 0..=center {
            let s = (j as f64 - center as f64) / center as f64;
            let azimuth = AZIMUTH_MAX * warp(s);
            let mut p = head_point(azimuth, elevation, features);
            if j == center {
                p.x = 0.0;
            }
            vertices[at(i, j)] = p;
            vertices[at(i, cols - 1 - j)] = Vec3::new(-p.x, p.y, p.z);
        }
    }

    let mut triangles = Vec::with_capacity(2 * (rows - 1) * (cols - 1));
    for i in 0..rows - 1 {
        for j in 0..cols - 1 {
            let (a, b, c, d) = (at(i, j), at(i, j + 1), at(i + 1, j), at(i + 1, j + 1));
            if j < center {
                triangles.push([a, c, b]);
                triangles.push([b, c, d]);
            } else {
                triangles.push([a, c, d]);
                triangles.push([a, d, b]);
            }
        }
    }

    let mirror = (0..rows * cols)
        .map(|v| at(v / cols, cols - 1 - v % cols))
        .collect();
    (vertices, triangles, mirror)
}

/// Frontal (x, y) placement of the 68 landmarks in millimetres.
pub(crate) fn landmark_targets() -> [(f64, f64); LANDMARK_COUNT] {
    let mut t = [(0.0, 0.0); LANDMARK_COUNT];
    for (j, slot) in t.iter_mut().enumerate().take(17) {
        let theta = std::f64::consts::PI * (1.0 + j as f64 / 16.0);
        *slot = (62.0 * theta.cos(), -10.0 + 55.0 * theta.sin());
    }
    t[8] = (0.0, -65.0);
    let brow = [(-50.0, 40.0), (-42.0, 45.0), (-31.0, 47.0), (-21.0, 46.0), (-12.0, 43.0)];
    let eye = [(-42.0, 30.0), (-34.0, 34.0), (-26.0, 34.0), (-18.0, 30.0), (-26.0, 26.0), (-34.0, 26.0)];
    for k in 0..5 {
        t[17 + k] = brow[k];
    }
    for k in 0..6 {
        t[36 + k] = eye[k];
    }
    for (k, y) in [30.0, 20.0, 10.0, 2.0].into_iter().enumerate() {
        t[27 + k] = (0.0, y);
    }
    t[31] = (-14.0, -11.0);
    t[32] = (-7.0, -12.0);
    t[33] = (0.0, -13.0);
    let outer = [(-24.0, -35.0), (-16.0, -29.0), (-7.0, -26.0), (0.0, -25.0)];
    for (k, p) in outer.into_iter().enumerate() {
        t[48 + k] = p;
    }
    t[57] = (0.0, -45.0);
    t[58] = (-7.0, -44.0);
    t[59] = (-16.0, -41.0);
    t[60] = (-20.0, -35.0);
    t[61] = (-7.0, -32.0);
    t[62] = (0.0, -32.0);
    t[66] = (0.0, -38.0);
    t[67] = (-7.0, -38.0);
    // Right-hand counterparts.
    for i in 0..LANDMARK_COUNT {
        let m = mirror_landmark(i);
        if m != i && t[i].0 < 0.0 {
            t[m] = (-t[i].0, t[i].1);
        }
    }
    t
}

fn place_landmarks(vertices: &[Vec3], cols: usize, mirror: &[usize]) -> Vec<usize> {
    let center = cols / 2;
    let targets = landmark_targets();
    let mut out = vec![usize::MAX; LANDMARK_COUNT];
    let nearest = |x: f64, y: f64, allow: &dyn Fn(usize) -> bool| -> usize {
        let mut best = (f64::INFINITY, usize::MAX);
        for (v, p) in vertices.iter().enumerate() {
            if p.z <= 0.0 || !allow(v) {
                continue;
            }
            let d = (p.x - x).powi(2) + (p.y - y).powi(2);
            if d < best.0 {
                best = (d, v);
            }
        }
        best.1
    };
    for (i, &(x, y)) in targets.iter().enumerate() {
        if x == 0.0 {
            out[i] = nearest(x, y, &|v| v % cols == center);
        } else if x < 0.0 {
            let v = nearest(x, y, &|v| v % cols < center);
            out[i] = v;
            out[mirror_landmark(i)] = mirror[v];
        }
    }
    debug_assert!(out.iter().all(|&v| v != usize::MAX));
    out
}

/// Iterated neighbour averaging over the mesh graph.
fn smooth_field(field: &mut [Vec3], neighbours: &[Vec<usize>], iterations: usize) {
    let mut next = field.to_vec();
    for _ in 0..iterations {
        for (v, nb) in neighbours.iter().enumerate() {
            let sum = nb.iter().fold(field[v], |acc, &u| acc + field[u]);
            next[v] = sum / (nb.len() + 1) as f64;
        }
        field.copy_from_slice(&next);
    }
}

fn vertex_neighbours(n: usize, triangles: &[[usize; 3]]) -> Vec<Vec<usize>> {
    let mut nb: Vec<Vec<usize>> = vec![Vec::new(); n];
    for t in triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            nb[a].push(b);
            nb[b].push(a);
        }
    }
    for list in &mut nb {
        list.sort_unstable();
        list.dedup();
    }
    nb
}

/// Projects a field onto its mirror-symmetric (`sign = 1`) or
/// antisymmetric (`sign = -1`) part. Reflection negates the x component.
fn symmetrize(field: &[Vec3], mirror: &[usize], sign: f64) -> Vec<Vec3> {
    field
        .iter()
        .enumerate()
        .map(|(v, f)| {
            let m = field[mirror[v]];
            let reflected = Vec3::new(-m.x, m.y, m.z);
            0.5 * (f + sign * reflected)
        })
        .collect()
}

fn flatten(field: &[Vec3]) -> DVector<f64> {
    DVector::from_iterator(field.len() * 3, field.iter().flat_map(|p| [p.x, p.y, p.z]))
}

/// Modified Gram-Schmidt, two passes, within one symmetry class. Columns
/// are also made orthogonal to `fixed`, an orthonormal set that is not
/// itself part of the output.
fn orthonormalize(columns: &mut [DVector<f64>], fixed: &[DVector<f64>]) -> Result<()> {
    for k in 0..columns.len() {
        for _pass in 0..2 {
            for f in fixed {
                let proj = f.dot(&columns[k]);
                columns[k].axpy(-proj, f, 1.0);
            }
            for j in 0..k {
                let proj = columns[j].dot(&columns[k]);
                let prev = columns[j].clone();
                columns[k].axpy(-proj, &prev, 1.0);
            }
        }
        let norm = columns[k].norm();
        if !(norm > 1e-10) {
            return Err(Error::RankDeficient(format!(
                "shape mode {k} collapsed during orthonormalization"
            )));
        }
        columns[k] /= norm;
    }
    Ok(())
}

/// Infinitesimal rigid motions of the template, split by mirror class:
/// y/z translation and rotation about x are symmetric, the rest
/// antisymmetric.
fn rigid_fields(template: &[Vec3]) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let field = |f: &dyn Fn(&Vec3) -> Vec3| flatten(&template.iter().map(f).collect::<Vec<_>>());
    let sym = vec![
        field(&|_| Vec3::y()),
        field(&|_| Vec3::z()),
        field(&|p| Vec3::x().cross(p)),
    ];
    let anti = vec![
        field(&|_| Vec3::x()),
        field(&|p| Vec3::y().cross(p)),
        field(&|p| Vec3::z().cross(p)),
    ];
    (sym, anti)
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

pub fn build_synthetic_model(spec: ModelSpec) -> Result<MorphableModel> {
    let n = spec.vertex_count();
    if spec.code_len < 8 {
        return Err(Error::InvalidArgument(format!(
            "need at least 8 shape modes, got {}",
            spec.code_len
        )));
    }
    if n < 500 {
        return Err(Error::InvalidArgument(format!(
            "resolution {} yields {n} vertices; at least 500 required",
            spec.resolution
        )));
    }
    if spec.code_len > 3 * n {
        return Err(Error::InvalidArgument(format!(
            "{} shape modes exceed 3n = {}",
            spec.code_len,
            3 * n
        )));
    }

    let (template, triangles, mirror) = grid_surface(spec.resolution, true);
    let neighbours = vertex_neighbours(n, &triangles);

    // Correlation length of the random fields stays roughly constant in
    // millimetres across resolutions.
    let r = spec.resolution as f64;
    let iterations = ((0.12 * r * r).round() as usize).max(4);

    let mut symmetric = Vec::new();
    let mut antisymmetric = Vec::new();
    for k in 0..spec.code_len {
        let mut rng = seed::rng(seed::split(spec.seed, k as u64));
        let mut field: Vec<Vec3> = (0..n)
            .map(|_| {
                Vec3::new(
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                )
            })
            .collect();
        smooth_field(&mut field, &neighbours, iterations);
        if k % 2 == 0 {
            symmetric.push(flatten(&symmetrize(&field, &mirror, 1.0)));
        } else {
            antisymmetric.push(flatten(&symmetrize(&field, &mirror, -1.0)));
        }
    }
    // Rigid motions are left to the fitting transform.
    let (mut rigid_sym, mut rigid_anti) = rigid_fields(&template);
    orthonormalize(&mut rigid_sym, &[])?;
    orthonormalize(&mut rigid_anti, &[])?;
    orthonormalize(&mut symmetric, &rigid_sym)?;
    orthonormalize(&mut antisymmetric, &rigid_anti)?;

    let mut basis = DMatrix::zeros(3 * n, spec.code_len);
    for k in 0..spec.code_len {
        let col = if k % 2 == 0 {
            &symmetric[k / 2]
        } else {
            &antisymmetric[k / 2]
        };
        basis.set_column(k, col);
    }
    let scales = DVector::from_fn(spec.code_len, |k, _| {
        MODE_RMS_0 * MODE_DECAY.powi(k as i32) * (n as f64).sqrt()
    });

    let jaw_joint = Vec3::from(JAW_JOINT);
    let skin_weights = template
        .iter()
        .map(|p| smoothstep((jaw_joint.y - p.y) / JAW_RAMP))
        .collect();

    let landmark_indices = place_landmarks(&template, spec.cols(), &mirror);
    let (face, lower_face, chin) = region_masks(&template, &landmark_indices);

    Ok(MorphableModel::assemble(
        spec,
        template,
        triangles,
        basis,
        scales,
        jaw_joint,
        skin_weights,
        landmark_indices,
        mirror,
        face,
        chin,
        lower_face,
    ))
}

/// Face, lower-face and chin masks. Every predicate depends on |x| only, so
/// each mask is closed under the mirror map.
fn region_masks(template: &[Vec3], landmarks: &[usize]) -> (RegionMask, RegionMask, RegionMask) {
    let split_height = template[landmarks[index::SUBNASALE]].y;
    let lower_lip = template[landmarks[index::LOWER_LIP_MID]].y;
    let in_face = |p: &Vec3| p.z > 30.0 && p.x.abs() <= 62.0 && (-85.0..=58.0).contains(&p.y);
    let face: Vec<usize> = (0..template.len()).filter(|&v| in_face(&template[v])).collect();
    let lower: Vec<usize> = face
        .iter()
        .copied()
        .filter(|&v| template[v].y < split_height)
        .collect();
    let chin: Vec<usize> = lower
        .iter()
        .copied()
        .filter(|&v| template[v].y < lower_lip - 4.0 && template[v].x.abs() <= 32.0)
        .collect();
    (RegionMask::new(face), RegionMask::new(lower), RegionMask::new(chin))
}

impl MorphableModel {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        spec: ModelSpec,
        template: Vec<Vec3>,
        triangles: Vec<[usize; 3]>,
        basis: DMatrix<f64>,
        scales: DVector<f64>,
        jaw_joint: Vec3,
        skin_weights: Vec<f64>,
        landmark_indices: Vec<usize>,
        mirror: Vec<usize>,
        face: RegionMask,
        chin: RegionMask,
        lower_face: RegionMask,
    ) -> Self {
        let mut shape_dirs = basis.clone();
        for (k, mut col) in shape_dirs.column_iter_mut().enumerate() {
            col *= scales[k];
        }
        MorphableModel {
            spec,
            template,
            triangles,
            basis,
            scales,
            jaw_joint,
            skin_weights,
            landmark_indices,
            mirror,
            face,
            chin,
            lower_face,
            shape_dirs,
        }
    }
}
