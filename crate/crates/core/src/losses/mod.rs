//! Training losses and their analytic gradients.
//!
//! - mouth convexity: lip midpoints against the s-line (subnasale to
//!   pogonion), free within 3 mm, quadratic beyond;
//! - asymmetry: paired chin vertices against the mid-sagittal plane;
//! - latent code: squared code distance;
//! - geometry: masked vertex distance plus a triangle-normal angle term.
//!
//! [`total_loss`] is the straightforward full-mesh evaluation; training
//! uses [`LossEvaluator`], which restricts decoding to the vertices the
//! losses read and batches the decode through one matrix product.

mod evaluator;

use nalgebra::DVector;

use crate::geometry::landmarks::index;
use crate::geometry::{
    midsagittal_plane_vjp,
    build_symmetry_pairing, fit_midsagittal_plane, LandmarkSet, Mesh, Plane, RegionMask, SymmetryPairing, Vec3,
    MIN_TRIANGLE_AREA,
};
use crate::model::{LatentCode, MorphableModel, Region};
use crate::{Error, Result};

pub use evaluator::{LossEvaluator, LossTarget};

/// Lip distances below this (mm) are not penalised.
pub const S_LINE_TOLERANCE: f64 = 3.0;

/// Which normal the asymmetry direction term compares pair vectors with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AsymmetryNormal {
    /// The normal of the plane fitted to the face being scored.
    #[default]
    Fitted,
    /// The world lateral axis.
    WorldX,
}

impl std::str::FromStr for AsymmetryNormal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fitted" => Ok(AsymmetryNormal::Fitted),
            "world_x" => Ok(AsymmetryNormal::WorldX),
            other => Err(Error::Config(format!(
                "unknown asymmetry normal {other:?} (expected fitted or world_x)"
            ))),
        }
    }
}

/// Whether the per-pair asymmetry terms are summed or averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AsymmetryReduction {
    Sum,
    /// Sum divided by the number of chin pairs, so the weight does not
    /// depend on mesh resolution.
    #[default]
    Mean,
}

impl AsymmetryReduction {
    pub fn divisor(self, pairs: usize) -> f64 {
        match self {
            AsymmetryReduction::Sum => 1.0,
            AsymmetryReduction::Mean => pairs.max(1) as f64,
        }
    }
}

impl std::str::FromStr for AsymmetryReduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(AsymmetryReduction::Sum),
            "mean" => Ok(AsymmetryReduction::Mean),
            other => Err(Error::Config(format!(
                "unknown asymmetry reduction {other:?} (expected sum or mean)"
            ))),
        }
    }
}

impl std::fmt::Display for AsymmetryReduction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AsymmetryReduction::Sum => "sum",
            AsymmetryReduction::Mean => "mean",
        })
    }
}

impl std::fmt::Display for AsymmetryNormal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AsymmetryNormal::Fitted => "fitted",
            AsymmetryNormal::WorldX => "world_x",
        })
    }
}

/// Metres per millimetre.
pub const MM_TO_M: f64 = 1e-3;

/// Multipliers of each loss part inside the weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PartScales {
    pub mouth: f64,
    pub asym_distance: f64,
    pub asym_direction: f64,
    pub point: f64,
    pub normal: f64,
    pub latent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha_p: f64,
    pub alpha_a: f64,
    pub alpha_f: f64,
    pub alpha_g: f64,
    /// Weight of the normal term inside the geometry loss.
    pub w_normal: f64,
    pub asymmetry_normal: AsymmetryNormal,
    pub asymmetry_reduction: AsymmetryReduction,
    /// Length of one model unit in the units the clinical weights are
    /// expressed in. The mouth term and the asymmetry distance term are
    /// converted by it before weighting; the geometry point term stays in
    /// squared model units and reported terms are never converted.
    pub unit_scale: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha_p: 5000.0,
            alpha_a: 5000.0,
            alpha_f: 1.0,
            alpha_g: 1.0,
            w_normal: 1.0,
            asymmetry_normal: AsymmetryNormal::Fitted,
            asymmetry_reduction: AsymmetryReduction::Mean,
            unit_scale: MM_TO_M,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha_p, self.alpha_a, self.alpha_f, self.alpha_g, self.w_normal];
        if !(self.unit_scale > 0.0 && self.unit_scale.is_finite()) {
            return Err(Error::Config(format!("unit scale {} must be positive", self.unit_scale)));
        }
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config(format!("loss weights must be finite and nonnegative: {all:?}")));
        }
        Ok(())
    }

    /// Part multipliers for a chin with `pairs` symmetric pairs.
    pub(crate) fn part_scales(&self, pairs: usize) -> PartScales {
        let s = self.unit_scale;
        let a = self.alpha_a / self.asymmetry_reduction.divisor(pairs);
        PartScales {
            mouth: self.alpha_p * s * s,
            asym_distance: a * s,
            asym_direction: a,
            point: self.alpha_g,
            normal: self.alpha_g * self.w_normal,
            latent: self.alpha_f,
        }
    }

    /// Only the latent-code term.
    pub fn latent_only() -> Self {
        LossWeights {
            alpha_p: 0.0,
            alpha_a: 0.0,
            alpha_f: 1.0,
            alpha_g: 0.0,
            ..LossWeights::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub mouth_convexity: f64,
    pub asymmetry: f64,
    pub latent_code: f64,
    pub geometry: f64,
    pub total: f64,
    /// d total / d predicted code.
    pub gradient: DVector<f64>,
    /// Chin pairs skipped because their two points coincide.
    pub skipped_pairs: usize,
    /// Masked triangles excluded from the normal term.
    pub degenerate_triangles: usize,
}

impl LossBreakdown {
    /// Name of the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("mouth_convexity", self.mouth_convexity),
            ("asymmetry", self.asymmetry),
            ("latent_code", self.latent_code),
            ("geometry", self.geometry),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
        .or_else(|| (!self.gradient.iter().all(|g| g.is_finite())).then_some("gradient"))
    }
}

/// Distance from `p` to the line through `a` and `b`, with its gradient
/// with respect to (p, a, b).
pub(crate) fn line_distance_with_gradient(p: &Vec3, a: &Vec3, b: &Vec3) -> Result<(f64, [Vec3; 3])> {
    let axis = b - a;
    let len2 = axis.norm_squared();
    if len2.sqrt() <= 1e-9 {
        return Err(Error::DegenerateLine);
    }
    let t = (p - a).dot(&axis) / len2;
    let r = p - (a + t * axis);
    let d = r.norm();
    if d == 0.0 {
        return Ok((0.0, [Vec3::zeros(); 3]));
    }
    let u = r / d;
    Ok((d, [u, -(1.0 - t) * u, -t * u]))
}

fn hinge(d: f64) -> (f64, f64) {
    if d > S_LINE_TOLERANCE {
        let e = d - S_LINE_TOLERANCE;
        (e * e, 2.0 * e)
    } else {
        (0.0, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MouthConvexity {
    pub value: f64,
    /// Upper and lower lip distances to the s-line (mm).
    pub upper_distance: f64,
    pub lower_distance: f64,
    /// Gradients with respect to subnasale, pogonion, upper lip midpoint
    /// and lower lip midpoint, in that order.
    pub gradient: [Vec3; 4],
}

pub(crate) fn mouth_points(
    subnasale: &Vec3,
    pogonion: &Vec3,
    upper: &Vec3,
    lower: &Vec3,
) -> Result<MouthConvexity> {
    let (du, gu) = line_distance_with_gradient(upper, subnasale, pogonion)?;
    let (dl, gl) = line_distance_with_gradient(lower, subnasale, pogonion)?;
    let (lu, su) = hinge(du);
    let (ll, sl) = hinge(dl);
    Ok(MouthConvexity {
        value: lu + ll,
        upper_distance: du,
        lower_distance: dl,
        gradient: [
            su * gu[1] + sl * gl[1],
            su * gu[2] + sl * gl[2],
            su * gu[0],
            sl * gl[0],
        ],
    })
}

/// Lip protrusion relative to the s-line. Reads only the landmarks; the
/// gradient refers to the four landmark points involved.
pub fn mouth_convexity_loss(landmarks: &LandmarkSet) -> Result<MouthConvexity> {
    mouth_points(
        &landmarks.subnasale(),
        &landmarks.pogonion(),
        &landmarks.upper_lip_mid(),
        &landmarks.lower_lip_mid(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Asymmetry {
    pub value: f64,
    /// Sum of midpoint-to-plane distances, the length-valued part of `value`.
    pub distance: f64,
    /// Per-vertex gradient with the plane held fixed.
    pub gradient: Vec<Vec3>,
    /// Gradient with respect to the plane normal and offset.
    pub plane_gradient: (Vec3, f64),
    pub skipped_pairs: usize,
}

/// Sums of the two asymmetry parts plus the gradient with respect to the
/// plane, both already multiplied by their scales.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AsymmetryParts {
    pub distance: f64,
    pub direction: f64,
    pub skipped: usize,
    pub grad_normal: Vec3,
    pub grad_offset: f64,
}

/// Adds the asymmetry loss of `pairs` to `grad`, with the plane-distance
/// and direction parts weighted separately. `fitted_direction` says the
/// direction term compares against the plane normal rather than a fixed
/// axis, which makes it depend on the plane.
#[allow(clippy::too_many_arguments)]
pub(crate) fn asymmetry_accumulate(
    vertices: &[Vec3],
    pairs: &[(usize, usize)],
    plane: &Plane,
    direction: &Vec3,
    fitted_direction: bool,
    distance_scale: f64,
    direction_scale: f64,
    grad: &mut [Vec3],
) -> AsymmetryParts {
    let n = plane.normal();
    let mut out = AsymmetryParts {
        distance: 0.0,
        direction: 0.0,
        skipped: 0,
        grad_normal: Vec3::zeros(),
        grad_offset: 0.0,
    };
    for &(i, j) in pairs {
        let (p, q) = (vertices[i], vertices[j]);
        let e = p - q;
        let len = e.norm();
        if len < 1e-9 {
            out.skipped += 1;
            continue;
        }
        let m = 0.5 * (p + q);
        let signed = plane.signed_distance(&m);
        let s_plane = if signed > 0.0 {
            1.0
        } else if signed < 0.0 {
            -1.0
        } else {
            0.0
        };
        let dot = direction.dot(&e);
        let orient = if dot < 0.0 { -1.0 } else { 1.0 };
        out.distance += signed.abs();
        out.direction += 1.0 - orient * dot / len;
        // d(cos)/de for cos = orient·(direction·e)/|e|.
        let dcos = (direction_scale * orient / len) * (direction - (dot / (len * len)) * e);
        let gm = (0.5 * distance_scale * s_plane) * n;
        grad[i] += gm - dcos;
        grad[j] += gm + dcos;
        out.grad_normal += (distance_scale * s_plane) * m;
        out.grad_offset -= distance_scale * s_plane;
        if fitted_direction {
            out.grad_normal -= (direction_scale * orient / len) * e;
        }
    }
    out
}

/// Adds the plane part of an asymmetry gradient onto the landmark vertices
/// the plane was fitted from.
pub(crate) fn accumulate_plane_gradient(
    landmarks: &LandmarkSet,
    landmark_vertices: &[usize],
    parts: &AsymmetryParts,
    grad: &mut [Vec3],
) -> Result<()> {
    let g = midsagittal_plane_vjp(landmarks, &parts.grad_normal, parts.grad_offset)?;
    for (l, g) in [
        index::RIGHT_BROW_MID,
        index::LEFT_BROW_MID,
        index::RIGHT_EYE_INNER,
        index::LEFT_EYE_INNER,
    ]
    .into_iter()
    .zip(g)
    {
        grad[landmark_vertices[l]] += g;
    }
    Ok(())
}

/// Chin asymmetry: for every pair, the distance of its midpoint to the
/// plane plus one minus the cosine between the pair direction and the
/// plane normal (or the world x-axis).
pub fn asymmetry_loss(
    mesh: &Mesh,
    pairing: &SymmetryPairing,
    plane: &Plane,
    normal: AsymmetryNormal,
) -> Result<Asymmetry> {
    if let Some(&(i, j)) = pairing
        .pairs
        .iter()
        .find(|(i, j)| *i >= mesh.vertices.len() || *j >= mesh.vertices.len())
    {
        return Err(Error::InvalidArgument(format!("pair ({i}, {j}) outside the mesh")));
    }
    let direction = match normal {
        AsymmetryNormal::Fitted => plane.normal(),
        AsymmetryNormal::WorldX => Vec3::x(),
    };
    let mut gradient = vec![Vec3::zeros(); mesh.vertices.len()];
    let parts = asymmetry_accumulate(
        &mesh.vertices,
        &pairing.pairs,
        plane,
        &direction,
        normal == AsymmetryNormal::Fitted,
        1.0,
        1.0,
        &mut gradient,
    );
    Ok(Asymmetry {
        value: parts.distance + parts.direction,
        distance: parts.distance,
        plane_gradient: (parts.grad_normal, parts.grad_offset),
        skipped_pairs: parts.skipped,
        gradient,
    })
}

pub fn latent_code_loss(pred: &LatentCode, gt: &LatentCode) -> Result<(f64, DVector<f64>)> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            expected: gt.len(),
            actual: pred.len(),
        });
    }
    let diff = pred - gt;
    Ok((diff.norm_squared(), 2.0 * diff))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub value: f64,
    pub point_term: f64,
    /// Mean of (1 − cos θ) over included triangles, before `w`.
    pub normal_term: f64,
    pub gradient: Vec<Vec3>,
    pub degenerate_triangles: usize,
}

/// Unnormalised normal (twice the area vector) of a triangle.
pub(crate) fn area_vector(v: &[Vec3], t: &[usize; 3]) -> Vec3 {
    (v[t[1]] - v[t[0]]).cross(&(v[t[2]] - v[t[0]]))
}

/// Adds `point_scale` times the point term and `normal_scale` times the
/// normal term to `grad` and returns (point term, normal term, excluded
/// triangles).
#[allow(clippy::too_many_arguments)]
pub(crate) fn geometry_accumulate(
    pred: &[Vec3],
    gt: &[Vec3],
    mask: &[usize],
    triangles: &[[usize; 3]],
    gt_normals: &[Option<Vec3>],
    point_scale: f64,
    normal_scale: f64,
    grad: &mut [Vec3],
) -> (f64, f64, usize) {
    let inv_n = 1.0 / mask.len().max(1) as f64;
    let mut point = 0.0;
    for &i in mask {
        let d = pred[i] - gt[i];
        point += d.norm_squared();
        grad[i] += (point_scale * 2.0 * inv_n) * d;
    }
    point *= inv_n;

    // Area vectors first: the mean needs the count of included triangles.
    let areas: Vec<(Vec3, f64)> = triangles
        .iter()
        .zip(gt_normals)
        .map(|(t, gn)| {
            let c = area_vector(pred, t);
            let len = c.norm();
            (c, if gn.is_some() && 0.5 * len > MIN_TRIANGLE_AREA { len } else { 0.0 })
        })
        .collect();
    let included = areas.iter().filter(|(_, len)| *len > 0.0).count();
    let excluded = triangles.len() - included;
    let mut normal = 0.0;
    if included > 0 {
        let inv_m = 1.0 / included as f64;
        let coef = -normal_scale * inv_m;
        for ((t, gn), &(c, len)) in triangles.iter().zip(gt_normals).zip(&areas) {
            let (Some(g), true) = (gn, len > 0.0) else { continue };
            let inv_len = 1.0 / len;
            let n = c * inv_len;
            let cos = n.dot(g);
            normal += 1.0 - cos;
            if coef != 0.0 {
                let h = (g - cos * n) * inv_len;
                let e1 = pred[t[1]] - pred[t[0]];
                let e2 = pred[t[2]] - pred[t[0]];
                let g1 = e2.cross(&h);
                let g2 = h.cross(&e1);
                grad[t[0]] -= coef * (g1 + g2);
                grad[t[1]] += coef * g1;
                grad[t[2]] += coef * g2;
            }
        }
        normal *= inv_m;
    }
    (point, normal, excluded)
}

pub(crate) fn unit_normals(vertices: &[Vec3], triangles: &[[usize; 3]]) -> Vec<Option<Vec3>> {
    triangles
        .iter()
        .map(|t| {
            let c = area_vector(vertices, t);
            let len = c.norm();
            (0.5 * len > MIN_TRIANGLE_AREA).then(|| c * (1.0 / len))
        })
        .collect()
}

/// Vertex term `(1/N)Σ‖p−g‖²` over the masked vertices plus `w` times the
/// mean `1 − cos θ` between predicted and ground-truth normals of the
/// masked triangles. Vertices correspond by index.
pub fn geometry_loss(pred: &Mesh, gt: &Mesh, face: &RegionMask, w: f64) -> Result<Geometry> {
    pred.ensure_same_topology(gt)?;
    if face.indices().last().is_some_and(|&i| i >= pred.vertices.len()) {
        return Err(Error::InvalidArgument("face mask exceeds the mesh".into()));
    }
    let triangles: Vec<[usize; 3]> = face
        .triangles(&pred.triangles)
        .into_iter()
        .map(|t| pred.triangles[t])
        .collect();
    let gt_normals = unit_normals(&gt.vertices, &triangles);
    let mut gradient = vec![Vec3::zeros(); pred.vertices.len()];
    let (point_term, normal_term, degenerate_triangles) = geometry_accumulate(
        &pred.vertices,
        &gt.vertices,
        face.indices(),
        &triangles,
        &gt_normals,
        1.0,
        w,
        &mut gradient,
    );
    Ok(Geometry {
        value: point_term + w * normal_term,
        point_term,
        normal_term,
        gradient,
        degenerate_triangles,
    })
}

/// Mid-sagittal plane of a landmark set.
pub fn face_plane(landmarks: &LandmarkSet) -> Result<Plane> {
    fit_midsagittal_plane(landmarks)
}

/// Weighted sum of the four losses for a predicted code against a
/// ground-truth code, decoding both at pose 0. The plane used by the
/// asymmetry term is fitted to the predicted landmarks, and the gradient
/// includes its dependence on them.
pub fn total_loss(
    model: &MorphableModel,
    pred_code: &LatentCode,
    gt_code: &LatentCode,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let pred = model.decode_neutral(pred_code)?;
    let gt = model.decode_neutral(gt_code)?;
    let landmarks = model.landmarks_of(&pred)?;
    let n = pred.vertices.len();
    let mut vertex_grad = vec![Vec3::zeros(); n];

    let pairing = build_symmetry_pairing(model.mirror(), model.region_mask(Region::Chin))?;
    let c = weights.part_scales(pairing.pairs.len());
    let mouth = mouth_convexity_loss(&landmarks)?;
    let li = model.landmark_indices();
    for (slot, lm) in [index::SUBNASALE, index::POGONION, index::UPPER_LIP_MID, index::LOWER_LIP_MID]
        .into_iter()
        .enumerate()
    {
        vertex_grad[li[lm]] += c.mouth * mouth.gradient[slot];
    }

    let plane = face_plane(&landmarks)?;
    let direction = match weights.asymmetry_normal {
        AsymmetryNormal::Fitted => plane.normal(),
        AsymmetryNormal::WorldX => Vec3::x(),
    };
    let asym = asymmetry_accumulate(
        &pred.vertices,
        &pairing.pairs,
        &plane,
        &direction,
        weights.asymmetry_normal == AsymmetryNormal::Fitted,
        c.asym_distance,
        c.asym_direction,
        &mut vertex_grad,
    );
    accumulate_plane_gradient(&landmarks, li, &asym, &mut vertex_grad)?;
    let face = model.region_mask(Region::Face);
    let triangles: Vec<[usize; 3]> = face
        .triangles(&pred.triangles)
        .into_iter()
        .map(|t| pred.triangles[t])
        .collect();
    let gt_normals = unit_normals(&gt.vertices, &triangles);
    let (point, normal, degenerate_triangles) = geometry_accumulate(
        &pred.vertices,
        &gt.vertices,
        face.indices(),
        &triangles,
        &gt_normals,
        c.point,
        c.normal,
        &mut vertex_grad,
    );
    let (latent, latent_grad) = latent_code_loss(pred_code, gt_code)?;

    let flat = DVector::from_iterator(3 * n, vertex_grad.iter().flat_map(|g| [g.x, g.y, g.z]));
    let gradient = model.shape_dirs().tr_mul(&flat) + c.latent * latent_grad;
    let total = c.mouth * mouth.value
        + c.asym_distance * asym.distance
        + c.asym_direction * asym.direction
        + c.latent * latent
        + c.point * point
        + c.normal * normal;
    Ok(LossBreakdown {
        mouth_convexity: mouth.value,
        asymmetry: (asym.distance + asym.direction) / weights.asymmetry_reduction.divisor(pairing.pairs.len()),
        latent_code: latent,
        geometry: point + weights.w_normal * normal,
        total,
        gradient,
        skipped_pairs: asym.skipped,
        degenerate_triangles,
    })
}

#[cfg(test)]
mod tests;
