use nalgebra::{DMatrix, DVector};

use super::{
    accumulate_plane_gradient, asymmetry_accumulate, face_plane, geometry_accumulate, mouth_points, unit_normals, AsymmetryNormal, LossBreakdown,
    LossWeights,
};
use crate::geometry::landmarks::index;
use crate::geometry::{build_symmetry_pairing, LandmarkSet, Vec3};
use crate::model::{LatentCode, MorphableModel, Region};
use crate::{Error, Result};

/// Precomputed ground truth for one sample.
#[derive(Debug, Clone)]
pub struct LossTarget {
    pub code: LatentCode,
    vertices: Vec<Vec3>,
    normals: Vec<Option<Vec3>>,
}

/// Loss evaluation restricted to the vertices the losses read (face mask
/// and landmarks), with batched decoding.
#[derive(Debug, Clone)]
pub struct LossEvaluator {
    weights: LossWeights,
    code_len: usize,
    /// Rows of the scaled basis for the active vertices.
    dirs: DMatrix<f64>,
    /// `dirs` transposed, so the gradient pull-back is a plain product.
    dirs_t: DMatrix<f64>,
    template: DVector<f64>,
    landmarks: Vec<usize>,
    face: Vec<usize>,
    triangles: Vec<[usize; 3]>,
    pairs: Vec<(usize, usize)>,
}

fn to_points(flat: &[f64]) -> Vec<Vec3> {
    flat.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

impl LossEvaluator {
    pub fn new(model: &MorphableModel, weights: LossWeights) -> Result<Self> {
        weights.validate()?;
        let n = model.vertex_count();
        let face_mask = model.region_mask(Region::Face);
        let pairing = build_symmetry_pairing(model.mirror(), model.region_mask(Region::Chin))?;

        let mut active: Vec<usize> = face_mask.indices().to_vec();
        active.extend_from_slice(model.landmark_indices());
        active.extend(pairing.pairs.iter().flat_map(|&(i, j)| [i, j]));
        active.sort_unstable();
        active.dedup();
        let mut local = vec![usize::MAX; n];
        for (l, &g) in active.iter().enumerate() {
            local[g] = l;
        }

        let k = model.code_len();
        let mut dirs = DMatrix::zeros(3 * active.len(), k);
        let mut template = DVector::zeros(3 * active.len());
        for (l, &g) in active.iter().enumerate() {
            dirs.view_mut((3 * l, 0), (3, k)).copy_from(&model.shape_dirs().rows(3 * g, 3));
            for c in 0..3 {
                template[3 * l + c] = model.template()[g][c];
            }
        }
        let triangles = face_mask
            .triangles(model.triangles())
            .into_iter()
            .map(|t| model.triangles()[t].map(|g| local[g]))
            .collect();
        Ok(LossEvaluator {
            weights,
            code_len: k,
            dirs_t: dirs.transpose(),
            dirs,
            template,
            landmarks: model.landmark_indices().iter().map(|&g| local[g]).collect(),
            face: face_mask.indices().iter().map(|&g| local[g]).collect(),
            triangles,
            pairs: pairing.pairs.iter().map(|&(i, j)| (local[i], local[j])).collect(),
        })
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    pub fn code_len(&self) -> usize {
        self.code_len
    }

    fn check(&self, code: &LatentCode) -> Result<()> {
        if code.len() != self.code_len {
            return Err(Error::LengthMismatch {
                expected: self.code_len,
                actual: code.len(),
            });
        }
        Ok(())
    }

    pub fn target(&self, code: &LatentCode) -> Result<LossTarget> {
        self.check(code)?;
        let flat = &self.template + &self.dirs * code;
        let vertices = to_points(flat.as_slice());
        let normals = unit_normals(&vertices, &self.triangles);
        Ok(LossTarget {
            code: code.clone(),
            vertices,
            normals,
        })
    }

    /// Targets for each column of `codes` (K×B), decoded in one product.
    pub fn targets(&self, codes: &DMatrix<f64>) -> Result<Vec<LossTarget>> {
        if codes.nrows() != self.code_len {
            return Err(Error::LengthMismatch {
                expected: self.code_len,
                actual: codes.nrows(),
            });
        }
        let mut decoded = &self.dirs * codes;
        for mut col in decoded.column_iter_mut() {
            col += &self.template;
        }
        Ok(decoded
            .column_iter()
            .zip(codes.column_iter())
            .map(|(flat, code)| {
                let vertices = to_points(flat.as_slice());
                let normals = unit_normals(&vertices, &self.triangles);
                LossTarget {
                    code: code.into_owned(),
                    vertices,
                    normals,
                }
            })
            .collect())
    }

    pub fn evaluate(&self, pred: &LatentCode, target: &LossTarget) -> Result<LossBreakdown> {
        self.check(pred)?;
        let preds = DMatrix::from_column_slice(self.code_len, 1, pred.as_slice());
        Ok(self.evaluate_batch(&preds, &[target])?.remove(0))
    }

    /// Losses for each column of `preds` (K×B) against the matching target.
    pub fn evaluate_batch(&self, preds: &DMatrix<f64>, targets: &[&LossTarget]) -> Result<Vec<LossBreakdown>> {
        if preds.nrows() != self.code_len {
            return Err(Error::LengthMismatch {
                expected: self.code_len,
                actual: preds.nrows(),
            });
        }
        if preds.ncols() != targets.len() {
            return Err(Error::LengthMismatch {
                expected: preds.ncols(),
                actual: targets.len(),
            });
        }
        let w = &self.weights;
        let c = w.part_scales(self.pairs.len());
        let divisor = w.asymmetry_reduction.divisor(self.pairs.len());
        let rows = self.dirs.nrows();
        let mut decoded = &self.dirs * preds;
        for mut col in decoded.column_iter_mut() {
            col += &self.template;
        }
        let mut vertex_grads = DMatrix::zeros(rows, preds.ncols());
        let mut partial = Vec::with_capacity(targets.len());
        for (b, target) in targets.iter().enumerate() {
            let vertices = to_points(decoded.column(b).as_slice());
            let mut grad = vec![Vec3::zeros(); vertices.len()];

            let lm = |i: usize| vertices[self.landmarks[i]];
            let mouth = mouth_points(
                &lm(index::SUBNASALE),
                &lm(index::POGONION),
                &lm(index::UPPER_LIP_MID),
                &lm(index::LOWER_LIP_MID),
            )?;
            for (slot, l) in [index::SUBNASALE, index::POGONION, index::UPPER_LIP_MID, index::LOWER_LIP_MID]
                .into_iter()
                .enumerate()
            {
                grad[self.landmarks[l]] += c.mouth * mouth.gradient[slot];
            }

            let landmarks = LandmarkSet::new(self.landmarks.iter().map(|&l| vertices[l]).collect())?;
            let plane = face_plane(&landmarks)?;
            let direction = match w.asymmetry_normal {
                AsymmetryNormal::Fitted => plane.normal(),
                AsymmetryNormal::WorldX => Vec3::x(),
            };
            let asym = asymmetry_accumulate(
                &vertices,
                &self.pairs,
                &plane,
                &direction,
                w.asymmetry_normal == AsymmetryNormal::Fitted,
                c.asym_distance,
                c.asym_direction,
                &mut grad,
            );
            accumulate_plane_gradient(&landmarks, &self.landmarks, &asym, &mut grad)?;
            let (point, normal, degenerate) = geometry_accumulate(
                &vertices,
                &target.vertices,
                &self.face,
                &self.triangles,
                &target.normals,
                c.point,
                c.normal,
                &mut grad,
            );
            let weighted = c.mouth * mouth.value
                + c.asym_distance * asym.distance
                + c.asym_direction * asym.direction
                + c.point * point
                + c.normal * normal;
            let mut col = vertex_grads.column_mut(b);
            for (l, g) in grad.iter().enumerate() {
                col[3 * l] = g.x;
                col[3 * l + 1] = g.y;
                col[3 * l + 2] = g.z;
            }
            partial.push((
                mouth.value,
                (asym.distance + asym.direction) / divisor,
                point + w.w_normal * normal,
                weighted,
                asym.skipped,
                degenerate,
            ));
        }

        let code_grads = &self.dirs_t * &vertex_grads;
        let mut out = Vec::with_capacity(targets.len());
        for (b, (target, (mouth, asym, geometry, weighted, skipped, degenerate))) in targets.iter().zip(partial).enumerate() {
            let diff = preds.column(b) - &target.code;
            let latent = diff.norm_squared();
            let gradient = code_grads.column(b) + (2.0 * c.latent) * diff;
            let total = weighted + c.latent * latent;
            out.push(LossBreakdown {
                mouth_convexity: mouth,
                asymmetry: asym,
                latent_code: latent,
                geometry,
                total,
                gradient,
                skipped_pairs: skipped,
                degenerate_triangles: degenerate,
            });
        }
        Ok(out)
    }
}
