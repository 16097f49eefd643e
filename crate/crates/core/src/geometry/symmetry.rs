use super::RegionMask;
use crate::{Error, Result};

/// Left/right vertex pairs of a mirror-symmetric region plus its
/// self-paired midline vertices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymmetryPairing {
    pub pairs: Vec<(usize, usize)>,
    pub midline: Vec<usize>,
}

impl SymmetryPairing {
    /// Number of mask vertices covered.
    pub fn covered(&self) -> usize {
        2 * self.pairs.len() + self.midline.len()
    }
}

/// Pairs every masked vertex with its mirror image under `mirror`, an
/// involution over vertex indices fixed by the template construction.
pub fn build_symmetry_pairing(mirror: &[usize], mask: &RegionMask) -> Result<SymmetryPairing> {
    let mut pairs = Vec::new();
    let mut midline = Vec::new();
    let mut offenders = Vec::new();
    for &i in mask.indices() {
        let j = *mirror
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("vertex {i} has no mirror entry")))?;
        if !mask.contains(j) {
            offenders.push(i);
        } else if j == i {
            midline.push(i);
        } else if i < j {
            pairs.push((i, j));
        }
    }
    if !offenders.is_empty() {
        return Err(Error::MirrorOutsideMask(offenders));
    }
    Ok(SymmetryPairing { pairs, midline })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_midline_vertex() {
        let mirror = [2, 1, 0];
        let p = build_symmetry_pairing(&mirror, &RegionMask::new(vec![1])).unwrap();
        assert!(p.pairs.is_empty());
        assert_eq!(p.midline, vec![1]);
    }

    #[test]
    fn pairs_and_offenders() {
        let mirror = [2, 1, 0, 4, 3];
        let p = build_symmetry_pairing(&mirror, &RegionMask::new(vec![0, 1, 2])).unwrap();
        assert_eq!(p.pairs, vec![(0, 2)]);
        assert_eq!(p.covered(), 3);
        match build_symmetry_pairing(&mirror, &RegionMask::new(vec![0, 1, 3])) {
            Err(Error::MirrorOutsideMask(v)) => assert_eq!(v, vec![0, 3]),
            other => panic!("unexpected {other:?}"),
        }
    }
}
