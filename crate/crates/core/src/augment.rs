//! Upper-face stitching augmentation.
//!
//! A perturbed copy of the pre-operative code supplies a new upper face.
//! It is blended onto the lower face of both the pre- and post-operative
//! meshes across a horizontal plane through the split landmark, so the
//! synthetic pair shares one upper face while keeping the real surgical
//! change below it. Both stitched meshes are re-encoded by fitting and
//! pairs whose fit is poor are discarded.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{FaceRecord, PatientPair, Provenance};
use crate::geometry::landmarks::index;
use crate::geometry::{LandmarkSet, Mesh, Plane, Vec3, LANDMARK_COUNT};
use crate::model::{fit, FitConfig, LatentCode, MorphableModel};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Landmark the split plane passes through.
    pub split_landmark: usize,
    /// Standard deviation of the code perturbation ξ.
    pub xi_std: f64,
    /// Half-width (mm) of the blend band around the split plane.
    pub band: f64,
    /// Maximum mean landmark fitting error (mm) of an accepted pair.
    pub tau: f64,
    /// Synthetic pairs requested per source pair.
    pub factor: usize,
    /// Extra draws allowed per requested pair after rejections.
    pub retries: usize,
    pub fit: FitConfig,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            split_landmark: index::SUBNASALE,
            xi_std: 0.05,
            band: 5.0,
            tau: 2.0,
            factor: 10,
            retries: 3,
            fit: FitConfig::landmarks_only(1e-3),
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.split_landmark >= LANDMARK_COUNT {
            return Err(Error::Config(format!("split landmark {} out of range", self.split_landmark)));
        }
        if !(self.xi_std > 0.0 && self.xi_std.is_finite()) {
            return Err(Error::Config(format!("perturbation std {} must be positive", self.xi_std)));
        }
        if !(self.band >= 0.0 && self.band.is_finite()) {
            return Err(Error::Config(format!("blend band {} must be nonnegative", self.band)));
        }
        if self.tau.is_nan() || self.tau < 0.0 {
            return Err(Error::Config(format!("cleaning threshold {} must be nonnegative", self.tau)));
        }
        if self.factor == 0 {
            return Err(Error::Config("augmentation factor must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AugmentReport {
    pub attempts: usize,
    pub generated: usize,
    /// Worse of the two mean landmark errors of each rejected draw.
    pub rejections: Vec<f64>,
    /// Requested pairs that were not produced within the retry budget.
    pub shortfall: usize,
}

impl AugmentReport {
    pub fn rejected(&self) -> usize {
        self.rejections.len()
    }

    pub fn rejection_rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.rejected() as f64 / self.attempts as f64
        }
    }
}

/// Horizontal plane (normal +y) through the configured split landmark.
pub fn split_plane(landmarks: &LandmarkSet, config: &AugmentConfig) -> Result<Plane> {
    if config.split_landmark >= LANDMARK_COUNT {
        return Err(Error::InvalidArgument(format!("split landmark {} out of range", config.split_landmark)));
    }
    Plane::through_point(Vec3::y(), landmarks.get(config.split_landmark))
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Blend weight of the upper source at signed distance `s` above the plane.
pub fn blend_weight(s: f64, band: f64) -> f64 {
    if band == 0.0 {
        if s > 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        smoothstep((s + band) / (2.0 * band))
    }
}

/// Takes `upper_source` above the band, `lower_source` below it and a
/// smoothstep blend inside it. Saturated vertices are copied, so they are
/// bit-identical to their source.
pub fn stitch(upper_source: &Mesh, lower_source: &Mesh, plane: &Plane, band: f64) -> Result<Mesh> {
    upper_source.ensure_same_topology(lower_source)?;
    if !(band >= 0.0) {
        return Err(Error::InvalidArgument(format!("blend band {band} must be nonnegative")));
    }
    let weights: Vec<f64> = upper_source
        .vertices
        .iter()
        .map(|p| blend_weight(plane.signed_distance(p), band))
        .collect();
    let vertices = upper_source
        .vertices
        .iter()
        .zip(&lower_source.vertices)
        .zip(&weights)
        .map(|((u, l), &w)| {
            if w == 1.0 {
                *u
            } else if w == 0.0 {
                *l
            } else {
                l + w * (u - l)
            }
        })
        .collect();
    let colors = match (&upper_source.colors, &lower_source.colors) {
        (Some(cu), Some(cl)) => Some(
            cu.iter()
                .zip(cl)
                .zip(&weights)
                .map(|((u, l), &w)| std::array::from_fn(|c| if w == 1.0 { u[c] } else { l[c] + w * (u[c] - l[c]) }))
                .collect(),
        ),
        (_, Some(cl)) => Some(cl.clone()),
        (Some(cu), None) => Some(cu.clone()),
        (None, None) => None,
    };
    Ok(Mesh {
        vertices,
        triangles: upper_source.triangles.clone(),
        colors,
    })
}

/// One synthetic draw before the cleaning decision.
#[derive(Debug, Clone)]
pub struct Draw {
    pub xi: LatentCode,
    pub plane: Plane,
    pub pre: FaceRecord,
    pub post: FaceRecord,
}

impl Draw {
    /// Worse of the two mean landmark fitting errors.
    pub fn fit_error(&self) -> f64 {
        self.pre.fit.mean_landmark_error.max(self.post.fit.mean_landmark_error)
    }

    pub fn accepted(&self, tau: f64) -> bool {
        self.fit_error() <= tau
    }
}

/// Stitches and re-encodes one draw with the given perturbation.
pub fn draw_with_perturbation(
    model: &MorphableModel,
    code_pre: &LatentCode,
    code_post: &LatentCode,
    xi: LatentCode,
    config: &AugmentConfig,
) -> Result<Draw> {
    model.check_code(&xi)?;
    let generated = model.decode_neutral(&(code_pre + &xi))?;
    let plane = split_plane(&model.landmarks_of(&generated)?, config)?;
    let encode = |lower: &LatentCode| -> Result<FaceRecord> {
        let mesh = stitch(&generated, &model.decode_neutral(lower)?, &plane, config.band)?;
        let landmarks = model.landmarks_of(&mesh)?;
        let out = fit(model, &mesh, &landmarks, &config.fit)?;
        Ok(FaceRecord {
            mesh,
            landmarks,
            code: out.code,
            fit: out.report,
        })
    };
    let pre = encode(code_pre)?;
    let post = encode(code_post)?;
    Ok(Draw { xi, plane, pre, post })
}

/// One synthetic pair from a source pair, `None` when the cleaning step
/// rejects it (the draw is still returned for reporting).
pub fn generate_pair(
    model: &MorphableModel,
    code_pre: &LatentCode,
    code_post: &LatentCode,
    config: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<(Option<PatientPair>, Draw)> {
    let xi = LatentCode::from_fn(model.code_len(), |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        config.xi_std * z
    });
    let draw = draw_with_perturbation(model, code_pre, code_post, xi, config)?;
    let pair = draw.accepted(config.tau).then(|| PatientPair {
        id: String::new(),
        pre: draw.pre.clone(),
        post: draw.post.clone(),
        provenance: Provenance::Synthetic,
    });
    Ok((pair, draw))
}

/// Runs the draw schedule for every source pair, handing each accepted draw
/// to `accept` with its source index and slot. Draw `(pair, slot, attempt)`
/// has its own seed, so the result does not depend on evaluation order.
fn run_schedule(
    model: &MorphableModel,
    sources: &[(&LatentCode, &LatentCode)],
    config: &AugmentConfig,
    mut accept: impl FnMut(usize, usize, Draw),
) -> Result<AugmentReport> {
    config.validate()?;
    let mut report = AugmentReport::default();
    for (p, (pre, post)) in sources.iter().enumerate() {
        let pair_seed = seed::split(config.seed, p as u64);
        for slot in 0..config.factor {
            let mut done = false;
            for attempt in 0..=config.retries {
                let draw_index = (slot * (config.retries + 1) + attempt) as u64;
                let mut rng = seed::rng(seed::split(pair_seed, draw_index));
                let (pair, draw) = generate_pair(model, pre, post, config, &mut rng)?;
                report.attempts += 1;
                if pair.is_some() {
                    report.generated += 1;
                    accept(p, slot, draw);
                    done = true;
                    break;
                }
                report.rejections.push(draw.fit_error());
            }
            if !done {
                report.shortfall += 1;
            }
        }
    }
    Ok(report)
}

/// Synthetic pairs for a training split, ids `<source id>_s<slot>`.
pub fn augment_dataset(
    model: &MorphableModel,
    pairs: &[PatientPair],
    config: &AugmentConfig,
) -> Result<(Vec<PatientPair>, AugmentReport)> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("augmentation needs at least one source pair".into()));
    }
    let sources: Vec<_> = pairs.iter().map(|p| (&p.pre.code, &p.post.code)).collect();
    let mut out = Vec::new();
    let report = run_schedule(model, &sources, config, |p, slot, draw| {
        out.push(PatientPair {
            id: format!("{}_s{slot:02}", pairs[p].id),
            pre: draw.pre,
            post: draw.post,
            provenance: Provenance::Synthetic,
        })
    })?;
    Ok((out, report))
}

/// Code-only variant of [`augment_dataset`] for training loops that do not
/// need the stitched meshes.
pub fn augment_codes(
    model: &MorphableModel,
    pairs: &[(LatentCode, LatentCode)],
    config: &AugmentConfig,
) -> Result<(Vec<(LatentCode, LatentCode)>, AugmentReport)> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("augmentation needs at least one source pair".into()));
    }
    let sources: Vec<_> = pairs.iter().map(|(a, b)| (a, b)).collect();
    let mut out = Vec::new();
    let report = run_schedule(model, &sources, config, |_, _, draw| out.push((draw.pre.code, draw.post.code)))?;
    Ok((out, report))
}
