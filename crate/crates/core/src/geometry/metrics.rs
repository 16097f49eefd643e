//! Point-set distances used for evaluation.

use super::spatial::{arr, dist2, SpatialIndex};
use super::Vec3;
use crate::{Error, Result};

/// How per-point nearest distances enter the Chamfer sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChamferVariant {
    /// Mean squared nearest distance per side, summed (mm²).
    #[default]
    Squared,
    /// Mean unsquared nearest distance per side, summed (mm).
    Root,
}

impl std::str::FromStr for ChamferVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared" => Ok(ChamferVariant::Squared),
            "root" => Ok(ChamferVariant::Root),
            other => Err(Error::Config(format!("unknown chamfer variant {other:?}"))),
        }
    }
}

impl std::fmt::Display for ChamferVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ChamferVariant::Squared => "squared",
            ChamferVariant::Root => "root",
        })
    }
}

/// Squared distance from each point of `from` to its nearest point in `to`.
pub fn nearest_sq_distances(from: &[Vec3], to: &SpatialIndex) -> Vec<f64> {
    from.iter()
        .map(|p| to.nearest(p).map_or(f64::INFINITY, |(_, d)| d))
        .collect()
}

fn check(a: &[Vec3], b: &[Vec3]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        Err(Error::EmptyPointSet)
    } else {
        Ok(())
    }
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

pub fn hausdorff_distance(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    check(a, b)?;
    let ta = SpatialIndex::new(a);
    let tb = SpatialIndex::new(b);
    Ok(hausdorff_with_indices(a, &ta, b, &tb))
}

pub fn chamfer_distance(a: &[Vec3], b: &[Vec3], variant: ChamferVariant) -> Result<f64> {
    check(a, b)?;
    let ta = SpatialIndex::new(a);
    let tb = SpatialIndex::new(b);
    Ok(chamfer_with_indices(a, &ta, b, &tb, variant))
}

/// Both metrics at once, sharing the two trees.
pub fn hausdorff_and_chamfer(a: &[Vec3], b: &[Vec3], variant: ChamferVariant) -> Result<(f64, f64)> {
    check(a, b)?;
    let ta = SpatialIndex::new(a);
    let tb = SpatialIndex::new(b);
    let ab = nearest_sq_distances(a, &tb);
    let ba = nearest_sq_distances(b, &ta);
    Ok((
        max_of(&ab).max(max_of(&ba)).sqrt(),
        chamfer_from(&ab, &ba, variant),
    ))
}

fn hausdorff_with_indices(a: &[Vec3], ta: &SpatialIndex, b: &[Vec3], tb: &SpatialIndex) -> f64 {
    let ab = max_of(&nearest_sq_distances(a, tb));
    let ba = max_of(&nearest_sq_distances(b, ta));
    ab.max(ba).sqrt()
}

fn chamfer_with_indices(
    a: &[Vec3],
    ta: &SpatialIndex,
    b: &[Vec3],
    tb: &SpatialIndex,
    variant: ChamferVariant,
) -> f64 {
    let ab = nearest_sq_distances(a, tb);
    let ba = nearest_sq_distances(b, ta);
    chamfer_from(&ab, &ba, variant)
}

fn chamfer_from(ab: &[f64], ba: &[f64], variant: ChamferVariant) -> f64 {
    let side = |d: &[f64]| -> f64 {
        let sum: f64 = match variant {
            ChamferVariant::Squared => d.iter().sum(),
            ChamferVariant::Root => d.iter().map(|x| x.sqrt()).sum(),
        };
        sum / d.len() as f64
    };
    side(ab) + side(ba)
}

/// O(|A|·|B|) reference implementations.
pub mod brute_force {
    use super::*;

    fn directed_sq(a: &[Vec3], b: &[Vec3]) -> Vec<f64> {
        a.iter()
            .map(|p| {
                let pa = arr(p);
                b.iter().map(|q| dist2(&pa, &arr(q))).fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    pub fn hausdorff_distance(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
        check(a, b)?;
        Ok(max_of(&directed_sq(a, b)).max(max_of(&directed_sq(b, a))).sqrt())
    }

    pub fn chamfer_distance(a: &[Vec3], b: &[Vec3], variant: ChamferVariant) -> Result<f64> {
        check(a, b)?;
        Ok(chamfer_from(&directed_sq(a, b), &directed_sq(b, a), variant))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_values() {
        let a = [Vec3::zeros()];
        assert_eq!(hausdorff_distance(&a, &[Vec3::new(3.0, 4.0, 0.0)]).unwrap(), 5.0);
        let b = [Vec3::new(0.0, 0.0, 2.0)];
        assert_eq!(chamfer_distance(&a, &b, ChamferVariant::Squared).unwrap(), 8.0);
        assert_eq!(chamfer_distance(&a, &b, ChamferVariant::Root).unwrap(), 4.0);
    }

    #[test]
    fn identical_sets_are_zero() {
        let a: Vec<Vec3> = (0..50).map(|i| Vec3::new(i as f64, (i * i) as f64, 1.0)).collect();
        assert_eq!(hausdorff_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(chamfer_distance(&a, &a, ChamferVariant::Squared).unwrap(), 0.0);
    }

    #[test]
    fn empty_sets_error() {
        assert!(matches!(hausdorff_distance(&[], &[Vec3::zeros()]), Err(Error::EmptyPointSet)));
        assert!(matches!(
            chamfer_distance(&[Vec3::zeros()], &[], ChamferVariant::Squared),
            Err(Error::EmptyPointSet)
        ));
    }
}
