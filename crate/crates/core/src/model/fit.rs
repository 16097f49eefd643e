//! Scan-to-model registration.
//!
//! Stage 1 aligns the scan landmarks to the template landmarks. Stage 2
//! solves for the code jointly with a small rigid correction by
//! Gauss-Newton on the landmark term plus a ridge penalty on the code;
//! because decode is linear this converges to the exact minimiser and a
//! decoded face is recovered without bias from the initial alignment.
//! Stage 3 optionally refines the code against nearest-vertex surface
//! correspondences with the pose held fixed.

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3};

use super::{LatentCode, MorphableModel};
use crate::geometry::{rigid_align, LandmarkSet, Mesh, RigidTransform, SpatialIndex, Vec3};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Ridge weight on the code.
    pub lambda: f64,
    pub surface_iterations: usize,
    pub surface_weight: f64,
    /// Upper bound on scan vertices used per surface iteration.
    pub surface_samples: usize,
    /// Surface correspondences farther than this (mm) are dropped.
    pub max_correspondence_distance: f64,
    pub pose_iterations: usize,
    pub correspondence: Correspondence,
}

/// How scan vertices are paired with model vertices in the surface stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Correspondence {
    /// Nearest vertex of the current decode, recomputed every iteration.
    #[default]
    Nearest,
    /// Same vertex index; the scan must share the model topology.
    Index,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lambda: 1e-3,
            surface_iterations: 3,
            surface_weight: 0.1,
            surface_samples: 256,
            max_correspondence_distance: f64::INFINITY,
            pose_iterations: 20,
            correspondence: Correspondence::Nearest,
        }
    }
}

impl FitConfig {
    pub fn landmarks_only(lambda: f64) -> Self {
        FitConfig {
            lambda,
            surface_iterations: 0,
            ..FitConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Distance (mm) between each fitted model landmark and the aligned
    /// scan landmark.
    pub landmark_residuals: Vec<f64>,
    pub mean_landmark_error: f64,
    /// RMS correspondence distance (mm) of the last surface iteration.
    pub surface_rms: Option<f64>,
    pub iterations: usize,
}

impl FitReport {
    pub fn from_residuals(landmark_residuals: Vec<f64>, surface_rms: Option<f64>, iterations: usize) -> Self {
        let mean_landmark_error =
            landmark_residuals.iter().sum::<f64>() / landmark_residuals.len().max(1) as f64;
        FitReport {
            landmark_residuals,
            mean_landmark_error,
            surface_rms,
            iterations,
        }
    }

    /// Report of a face known to lie exactly on the model.
    pub fn exact(landmark_count: usize) -> Self {
        Self::from_residuals(vec![0.0; landmark_count], None, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutput {
    pub code: LatentCode,
    /// Maps scan coordinates into model space.
    pub transform: RigidTransform,
    pub report: FitReport,
}

/// Cross-product matrix `[z]×` so that `[z]× ω = z × ω`.
fn skew(z: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -z.z, z.y, z.z, 0.0, -z.x, -z.y, z.x, 0.0)
}

pub fn fit(model: &MorphableModel, scan: &Mesh, landmarks: &LandmarkSet, config: &FitConfig) -> Result<FitOutput> {
    let k = model.code_len();
    let rows = 3 * model.landmark_indices.len();
    if !(config.lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge weight {} is negative", config.lambda)));
    }
    if config.lambda == 0.0 && rows < k + 6 {
        return Err(Error::RankDeficient(format!(
            "{rows} landmark equations cannot determine {k} shape coefficients and a pose; use lambda > 0"
        )));
    }

    let mut transform = rigid_align(landmarks, &model.template_landmarks())?;

    // Landmark rows of the decoder.
    let mut dl = DMatrix::zeros(rows, k);
    let mut tl = DVector::zeros(rows);
    for (l, &v) in model.landmark_indices.iter().enumerate() {
        for c in 0..3 {
            dl.set_row(3 * l + c, &model.shape_dirs.row(3 * v + c));
            tl[3 * l + c] = model.template[v][c];
        }
    }

    let mut code = DVector::zeros(k);
    let mut iterations = 0;
    let n = k + 6;
    for _ in 0..config.pose_iterations.max(1) {
        iterations += 1;
        // Unknowns: code β, rotation increment ω, translation increment δt.
        // The update moves an aligned landmark z to z + ω×z + δt, so the
        // linearised residual is Dβ + [z]×ω − δt − (z − T).
        let mut jac = DMatrix::zeros(rows, n);
        let mut rhs = DVector::zeros(rows);
        jac.view_mut((0, 0), (rows, k)).copy_from(&dl);
        for (l, p) in landmarks.points().iter().enumerate() {
            let z = transform.apply(p);
            let s = skew(&z);
            for c in 0..3 {
                let r = 3 * l + c;
                for j in 0..3 {
                    jac[(r, k + j)] = s[(c, j)];
                }
                jac[(r, k + 3 + c)] = -1.0;
                rhs[r] = z[c] - tl[r];
            }
        }
        let mut normal = jac.tr_mul(&jac);
        for i in 0..k {
            normal[(i, i)] += config.lambda;
        }
        let x = solve_spd(normal, jac.tr_mul(&rhs))?;
        code = x.rows(0, k).into_owned();
        let omega = Vec3::new(x[k], x[k + 1], x[k + 2]);
        let delta = Vec3::new(x[k + 3], x[k + 4], x[k + 5]);
        let step = RigidTransform {
            rotation: Rotation3::new(omega).into_inner(),
            translation: delta,
        };
        transform = step.compose(&transform);
        if omega.norm() < 1e-13 && delta.norm() < 1e-11 {
            break;
        }
    }

    let by_index = config.correspondence == Correspondence::Index;
    if by_index && scan.vertices.len() != model.vertex_count() {
        return Err(Error::TopologyMismatch(format!(
            "index correspondence needs {} scan vertices, found {}",
            model.vertex_count(),
            scan.vertices.len()
        )));
    }
    let mut surface_rms = None;
    if config.surface_iterations > 0 && config.surface_weight > 0.0 {
        let stride = scan.vertices.len().div_ceil(config.surface_samples.max(1)).max(1);
        let samples: Vec<(usize, Vec3)> = scan
            .vertices
            .iter()
            .enumerate()
            .step_by(stride)
            .map(|(i, p)| (i, transform.apply(p)))
            .collect();
        let sw = config.surface_weight;
        let base_normal = {
            let mut m = dl.tr_mul(&dl);
            for i in 0..k {
                m[(i, i)] += config.lambda;
            }
            m
        };
        let aligned: Vec<Vec3> = landmarks.points().iter().map(|p| transform.apply(p)).collect();
        let mut base_rhs = DVector::zeros(k);
        for (l, z) in aligned.iter().enumerate() {
            for c in 0..3 {
                let r = 3 * l + c;
                base_rhs.axpy(z[c] - tl[r], &dl.row(r).transpose(), 1.0);
            }
        }
        for _ in 0..config.surface_iterations {
            iterations += 1;
            let decoded = model.shape_vertices(&code)?;
            let index = (!by_index).then(|| SpatialIndex::new(&decoded));
            let mut normal = base_normal.clone();
            let mut rhs = base_rhs.clone();
            let mut sq_sum = 0.0;
            let mut used = 0usize;
            let mut rows_d = DMatrix::zeros(3, k);
            for (i, s) in &samples {
                let (v, d2) = match &index {
                    None => (*i, (s - decoded[*i]).norm_squared()),
                    Some(index) => {
                        let Some(hit) = index.nearest(s) else { continue };
                        hit
                    }
                };
                if d2.sqrt() > config.max_correspondence_distance {
                    continue;
                }
                sq_sum += d2;
                used += 1;
                rows_d.copy_from(&model.shape_dirs.rows(3 * v, 3));
                let target = s - model.template[v];
                normal.gemm_tr(sw, &rows_d, &rows_d, 1.0);
                rhs.gemv_tr(sw, &rows_d, &DVector::from_column_slice(target.as_slice()), 1.0);
            }
            if used == 0 {
                break;
            }
            surface_rms = Some((sq_sum / used as f64).sqrt());
            code = solve_spd(normal, rhs)?;
        }
    }

    let fitted = model.landmark_positions(&code)?;
    let residuals = landmarks
        .points()
        .iter()
        .zip(fitted.points())
        .map(|(p, q)| (transform.apply(p) - q).norm())
        .collect();
    Ok(FitOutput {
        code,
        transform,
        report: FitReport::from_residuals(residuals, surface_rms, iterations),
    })
}

fn solve_spd(matrix: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = matrix.clone().cholesky() {
        return Ok(chol.solve(&rhs));
    }
    matrix
        .lu()
        .solve(&rhs)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::RankDeficient("fitting normal equations are singular".into()))
}
