//! Synthetic patient cohort.
//!
//! Each patient is a healthy base face plus two deformities expressed as
//! fixed code directions: lip protrusion ahead of the s-line and a lateral
//! chin deviation. The post-operative face removes a sampled fraction of
//! both.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{FaceRecord, PatientPair, Provenance};
use crate::geometry::landmarks::index;
use crate::geometry::{build_symmetry_pairing, fit_midsagittal_plane, Vec3, LANDMARK_COUNT};
use crate::losses::mouth_convexity_loss;
use crate::model::{LatentCode, MorphableModel, Region};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DeformityConfig {
    /// Lip protrusion (mm of anterior landmark motion).
    pub protrusion: (f64, f64),
    /// Lateral chin deviation (mm).
    pub asymmetry: (f64, f64),
    /// Fraction of the deformity removed by surgery.
    pub correction: (f64, f64),
    /// Standard deviation of the base code on symmetric modes.
    pub base_std: f64,
    /// Multiplier on `base_std` for antisymmetric modes.
    pub base_asymmetry_scale: f64,
    pub seed: u64,
}

impl Default for DeformityConfig {
    fn default() -> Self {
        DeformityConfig {
            protrusion: (3.0, 10.0),
            asymmetry: (2.0, 8.0),
            correction: (0.7, 1.0),
            base_std: 0.5,
            base_asymmetry_scale: 0.1,
            seed: 0,
        }
    }
}

impl DeformityConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("protrusion", self.protrusion), ("asymmetry", self.asymmetry)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::Config(format!("{name} range [{lo}, {hi}] must be positive and ordered")));
            }
        }
        let (lo, hi) = self.correction;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("correction range [{lo}, {hi}] must lie in (0, 1] and be ordered")));
        }
        if !(self.base_std >= 0.0 && self.base_std.is_finite()) || !(self.base_asymmetry_scale >= 0.0) {
            return Err(Error::Config("base code spread must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Code directions producing 1 mm of each deformity.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformityDirections {
    /// Symmetric modes only; lips move anteriorly, away from the s-line.
    pub protrude: LatentCode,
    /// Antisymmetric modes only; the chin moves towards +x.
    pub asymmetry: LatentCode,
}

/// Landmarks whose midpoints define the mid-sagittal plane. They are held
/// firmly in place so a deformity does not tilt the plane.
const PLANE_LANDMARKS: [usize; 4] = [
    index::RIGHT_BROW_MID,
    index::LEFT_BROW_MID,
    index::RIGHT_EYE_INNER,
    index::LEFT_EYE_INNER,
];
const PLANE_WEIGHT: f64 = 10.0;
const DIRECTION_RIDGE: f64 = 1e-6;
/// Face vertices above this height relative to the subnasale (mm) are asked
/// to stay put, keeping the deformity below the augmentation blend band.
const UPPER_MARGIN: f64 = -7.0;

fn landmark_direction(model: &MorphableModel, parity: usize, target: impl Fn(usize) -> Vec3) -> Result<LatentCode> {
    let k = model.code_len();
    let cols: Vec<usize> = (0..k).filter(|c| c % 2 == parity).collect();
    let split = model.template()[model.landmark_indices()[index::SUBNASALE]].y + UPPER_MARGIN;
    let upper: Vec<usize> = model
        .region_mask(Region::Face)
        .indices()
        .iter()
        .copied()
        .filter(|&v| model.template()[v].y > split)
        .collect();
    let rows = 3 * (LANDMARK_COUNT + upper.len());
    let mut a = DMatrix::zeros(rows, cols.len());
    let mut y = DVector::zeros(rows);
    for (l, &v) in model.landmark_indices().iter().enumerate() {
        let w = if PLANE_LANDMARKS.contains(&l) { PLANE_WEIGHT } else { 1.0 };
        let t = target(l);
        for c in 0..3 {
            for (j, &col) in cols.iter().enumerate() {
                a[(3 * l + c, j)] = w * model.shape_dirs()[(3 * v + c, col)];
            }
            y[3 * l + c] = w * t[c];
        }
    }
    for (r, &v) in upper.iter().enumerate() {
        let row = 3 * (LANDMARK_COUNT + r);
        for c in 0..3 {
            for (j, &col) in cols.iter().enumerate() {
                a[(row + c, j)] = model.shape_dirs()[(3 * v + c, col)];
            }
        }
    }
    let mut normal = a.tr_mul(&a);
    for i in 0..cols.len() {
        normal[(i, i)] += DIRECTION_RIDGE;
    }
    let x = normal
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("deformity direction system is singular".into()))?
        .solve(&a.tr_mul(&y));
    let mut out = DVector::zeros(k);
    for (j, &c) in cols.iter().enumerate() {
        out[c] = x[j];
    }
    Ok(out)
}

pub fn deformity_directions(model: &MorphableModel) -> Result<DeformityDirections> {
    let lips = 48..LANDMARK_COUNT;
    let chin = 6..=10;
    let protrude = landmark_direction(model, 0, |l| if lips.contains(&l) { Vec3::z() } else { Vec3::zeros() })?;
    // One unit moves the lip midpoints of the template 1 mm away from the
    // s-line on average.
    let lip_distance = |code: &LatentCode| -> Result<f64> {
        let m = mouth_convexity_loss(&model.landmark_positions(code)?)?;
        Ok(m.upper_distance + m.lower_distance)
    };
    let zero = LatentCode::zeros(model.code_len());
    let gain = 0.5 * (lip_distance(&protrude)? - lip_distance(&zero)?);
    if !(gain > 1e-6) {
        return Err(Error::DegenerateConfiguration(format!(
            "protrusion direction moves the lips {gain} mm from the s-line"
        )));
    }
    Ok(DeformityDirections {
        protrude: protrude / gain,
        asymmetry: landmark_direction(model, 1, |l| if chin.contains(&l) { Vec3::x() } else { Vec3::zeros() })?,
    })
}

fn sample_range(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Sum of signed distances of the chin pair midpoints to the face's own
/// mid-sagittal plane.
fn chin_offset(model: &MorphableModel, pairs: &[(usize, usize)], code: &LatentCode) -> Result<f64> {
    let vertices = model.shape_vertices(code)?;
    let plane = fit_midsagittal_plane(&model.landmark_positions(code)?)?;
    Ok(pairs
        .iter()
        .map(|&(i, j)| plane.signed_distance(&(0.5 * (vertices[i] + vertices[j]))))
        .sum())
}

/// Patients `p0000`, `p0001`, ... with provenance real. Patient `i` draws
/// from its own stream, so cohorts of different sizes share prefixes.
pub fn generate_synthetic_cohort(model: &MorphableModel, n: usize, config: &DeformityConfig) -> Result<Vec<PatientPair>> {
    if n == 0 {
        return Err(Error::InvalidArgument("cohort size must be at least 1".into()));
    }
    config.validate()?;
    let directions = deformity_directions(model)?;
    let pairing = build_symmetry_pairing(model.mirror(), model.region_mask(Region::Chin))?;
    let k = model.code_len();
    (0..n)
        .map(|i| {
            let mut rng = seed::rng(seed::split(config.seed, i as u64));
            let base = DVector::from_fn(k, |m, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                let scale = if m % 2 == 1 { config.base_asymmetry_scale } else { 1.0 };
                config.base_std * scale * z
            });
            let a = sample_range(&mut rng, config.protrusion);
            let b = sample_range(&mut rng, config.asymmetry);
            let gamma = sample_range(&mut rng, config.correction);
            let side = if chin_offset(model, &pairing.pairs, &base)? < 0.0 { -1.0 } else { 1.0 };
            let deformity = a * &directions.protrude + (side * b) * &directions.asymmetry;
            let pre = &base + &deformity;
            let post = &base + (1.0 - gamma) * &deformity;
            Ok(PatientPair {
                id: format!("p{i:04}"),
                pre: FaceRecord::decoded(model, pre)?,
                post: FaceRecord::decoded(model, post)?,
                provenance: Provenance::Real,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_synthetic_model, ModelSpec};

    fn model() -> MorphableModel {
        build_synthetic_model(ModelSpec {
            seed: 4,
            code_len: 32,
            resolution: 12,
        })
        .unwrap()
    }

    #[test]
    fn full_correction_restores_base() {
        let m = model();
        let full = DeformityConfig {
            correction: (1.0, 1.0),
            ..DeformityConfig::default()
        };
        let other = DeformityConfig {
            protrusion: (4.0, 5.0),
            asymmetry: (3.0, 3.5),
            ..full.clone()
        };
        let a = generate_synthetic_cohort(&m, 5, &full).unwrap();
        let b = generate_synthetic_cohort(&m, 5, &other).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.post.code, y.post.code);
            assert_ne!(x.pre.code, y.pre.code);
        }
    }

    #[test]
    fn cohort_is_deterministic_and_prefix_stable() {
        let m = model();
        let config = DeformityConfig {
            seed: 9,
            ..DeformityConfig::default()
        };
        let a = generate_synthetic_cohort(&m, 6, &config).unwrap();
        assert_eq!(a, generate_synthetic_cohort(&m, 6, &config).unwrap());
        assert_eq!(a[..3], generate_synthetic_cohort(&m, 3, &config).unwrap()[..]);
        assert_eq!(a[5].id, "p0005");
        assert!(a.iter().all(|p| p.provenance == Provenance::Real));
        assert!(a.iter().all(|p| p.pre.mesh.same_topology(&p.post.mesh)));
    }

    #[test]
    fn directions_have_unit_effect() {
        let m = model();
        let d = deformity_directions(&m).unwrap();
        let lip = |code: &LatentCode| {
            let r = mouth_convexity_loss(&m.landmark_positions(code).unwrap()).unwrap();
            r.upper_distance + r.lower_distance
        };
        let zero = m.zero_code();
        let effect = 0.5 * (lip(&d.protrude) - lip(&zero));
        assert!((effect - 1.0).abs() < 0.05, "{effect}");
        for k in (1..m.code_len()).step_by(2) {
            assert_eq!(d.protrude[k], 0.0);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let m = model();
        assert!(generate_synthetic_cohort(&m, 0, &DeformityConfig::default()).is_err());
        for bad in [
            DeformityConfig {
                protrusion: (5.0, 2.0),
                ..DeformityConfig::default()
            },
            DeformityConfig {
                correction: (0.0, 1.0),
                ..DeformityConfig::default()
            },
            DeformityConfig {
                correction: (0.5, 1.2),
                ..DeformityConfig::default()
            },
            DeformityConfig {
                base_std: -1.0,
                ..DeformityConfig::default()
            },
        ] {
            assert!(matches!(generate_synthetic_cohort(&m, 2, &bad), Err(Error::Config(_))));
        }
    }
}
