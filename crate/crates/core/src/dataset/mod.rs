//! Patient pairs, the synthetic cohort, on-disk layout and k-fold splits.

mod cohort;
mod io;
mod split;

use crate::geometry::{LandmarkSet, Mesh};
use crate::model::{FitReport, LatentCode, MorphableModel};
use crate::{Error, Result};

pub use cohort::{deformity_directions, generate_synthetic_cohort, DeformityConfig, DeformityDirections};
pub use io::{load_dataset, save_dataset, DatasetManifest, ManifestEntry};
pub use split::split_kfold;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Real,
    Synthetic,
    Augmented,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Provenance::Real => "real",
            Provenance::Synthetic => "synthetic",
            Provenance::Augmented => "augmented",
        })
    }
}

impl std::str::FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(Provenance::Real),
            "synthetic" => Ok(Provenance::Synthetic),
            "augmented" => Ok(Provenance::Augmented),
            other => Err(Error::InvalidArgument(format!("unknown provenance {other:?}"))),
        }
    }
}

/// One face of a pair: geometry, landmarks and its model encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceRecord {
    pub mesh: Mesh,
    pub landmarks: LandmarkSet,
    pub code: LatentCode,
    pub fit: FitReport,
}

impl FaceRecord {
    /// A face decoded from the model, so its code is exact.
    pub fn decoded(model: &MorphableModel, code: LatentCode) -> Result<Self> {
        let mesh = model.decode_neutral(&code)?;
        let landmarks = model.landmarks_of(&mesh)?;
        Ok(FaceRecord {
            mesh,
            landmarks,
            code,
            fit: FitReport::exact(crate::geometry::LANDMARK_COUNT),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientPair {
    pub id: String,
    pub pre: FaceRecord,
    pub post: FaceRecord,
    pub provenance: Provenance,
}

impl PatientPair {
    pub fn codes(&self) -> (&LatentCode, &LatentCode) {
        (&self.pre.code, &self.post.code)
    }
}
