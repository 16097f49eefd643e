//! k-fold cross-validation. Folds index only the real pairs; augmentation
//! is generated from each fold's training split alone.

use super::train::{train, TrainConfig};
use crate::augment::{augment_codes, AugmentConfig, AugmentReport};
use crate::dataset::{split_kfold, PatientPair, Provenance};
use crate::geometry::{hausdorff_and_chamfer, ChamferVariant, Mesh};
use crate::model::{LatentCode, MorphableModel, Region};
use crate::{seed, Error, Result};

/// Hausdorff and Chamfer distances between two meshes over the model's
/// face mask.
pub fn mesh_metrics(model: &MorphableModel, a: &Mesh, b: &Mesh, chamfer: ChamferVariant) -> Result<(f64, f64)> {
    let face = model.region_mask(Region::Face);
    for m in [a, b] {
        if m.vertices.len() != model.vertex_count() {
            return Err(Error::TopologyMismatch(format!(
                "mesh has {} vertices, model {}",
                m.vertices.len(),
                model.vertex_count()
            )));
        }
    }
    hausdorff_and_chamfer(&face.points(a), &face.points(b), chamfer)
}

/// Face-masked HD and CD between the decodes of two codes.
pub fn code_metrics(
    model: &MorphableModel,
    pred: &LatentCode,
    gt: &LatentCode,
    chamfer: ChamferVariant,
) -> Result<(f64, f64)> {
    mesh_metrics(model, &model.decode_neutral(pred)?, &model.decode_neutral(gt)?, chamfer)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary {
                mean: f64::NAN,
                min: f64::NAN,
                max: f64::NAN,
            };
        }
        Summary {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub train_count: usize,
    pub validation_ids: Vec<String>,
    /// Per validation pair, in `validation_ids` order.
    pub hd: Vec<f64>,
    pub cd: Vec<f64>,
    pub augment: Option<AugmentReport>,
}

impl FoldResult {
    pub fn mean_hd(&self) -> f64 {
        Summary::of(&self.hd).mean
    }

    pub fn mean_cd(&self) -> f64 {
        Summary::of(&self.cd).mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    /// Across fold means.
    pub hd: Summary,
    pub cd: Summary,
    /// Training pairs per fold (real plus synthetic), averaged and rounded.
    pub data_amount: usize,
}

impl CvReport {
    fn from_folds(folds: Vec<FoldResult>) -> Self {
        let hd: Vec<f64> = folds.iter().map(FoldResult::mean_hd).collect();
        let cd: Vec<f64> = folds.iter().map(FoldResult::mean_cd).collect();
        let data = folds.iter().map(|f| f.train_count as f64).sum::<f64>() / folds.len().max(1) as f64;
        CvReport {
            hd: Summary::of(&hd),
            cd: Summary::of(&cd),
            data_amount: data.round() as usize,
            folds,
        }
    }
}

/// Fold assignment and per-fold synthetic pairs, shared by runs that differ
/// only in training settings.
#[derive(Debug, Clone)]
pub struct CvPlan {
    pub ids: Vec<String>,
    pub codes: Vec<(LatentCode, LatentCode)>,
    pub folds: Vec<Vec<usize>>,
    pub augmented: Option<Vec<(Vec<(LatentCode, LatentCode)>, AugmentReport)>>,
}

impl CvPlan {
    pub fn new(
        model: &MorphableModel,
        pairs: &[PatientPair],
        k: usize,
        split_seed: u64,
        augment: Option<&AugmentConfig>,
    ) -> Result<Self> {
        if let Some(p) = pairs.iter().find(|p| p.provenance != Provenance::Real) {
            return Err(Error::InvalidArgument(format!(
                "cross-validation folds take real pairs only; {} is {}",
                p.id, p.provenance
            )));
        }
        let folds = split_kfold(pairs.len(), k, split_seed)?;
        if let Some(f) = folds.iter().position(Vec::is_empty) {
            return Err(Error::InvalidArgument(format!("fold {f} has no validation pairs")));
        }
        let codes: Vec<(LatentCode, LatentCode)> =
            pairs.iter().map(|p| (p.pre.code.clone(), p.post.code.clone())).collect();
        let augmented = match augment {
            Some(config) => Some(
                (0..folds.len())
                    .map(|f| {
                        let train = training_split(&codes, &folds, f);
                        let cfg = AugmentConfig {
                            seed: seed::split(config.seed, f as u64),
                            ..config.clone()
                        };
                        augment_codes(model, &train, &cfg)
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        Ok(CvPlan {
            ids: pairs.iter().map(|p| p.id.clone()).collect(),
            codes,
            folds,
            augmented,
        })
    }

    /// Trains and evaluates every fold; synthetic pairs join the training
    /// split when `use_augmentation` is set and the plan has them.
    pub fn run(
        &self,
        model: &MorphableModel,
        config: &TrainConfig,
        use_augmentation: bool,
        chamfer: ChamferVariant,
    ) -> Result<CvReport> {
        let mut results = Vec::with_capacity(self.folds.len());
        for (f, fold) in self.folds.iter().enumerate() {
            let mut train_pairs = training_split(&self.codes, &self.folds, f);
            let mut augment = None;
            if use_augmentation {
                if let Some(aug) = &self.augmented {
                    train_pairs.extend(aug[f].0.iter().cloned());
                    augment = Some(aug[f].1.clone());
                }
            }
            let cfg = TrainConfig {
                seed: seed::split(config.seed, f as u64),
                ..config.clone()
            };
            let (params, _) = train(model, &train_pairs, &cfg, None)?;
            let mut hd = Vec::with_capacity(fold.len());
            let mut cd = Vec::with_capacity(fold.len());
            for &i in fold {
                let (pre, post) = &self.codes[i];
                let (h, c) = code_metrics(model, &params.predict(pre)?, post, chamfer)?;
                hd.push(h);
                cd.push(c);
            }
            results.push(FoldResult {
                fold: f,
                train_count: train_pairs.len(),
                validation_ids: fold.iter().map(|&i| self.ids[i].clone()).collect(),
                hd,
                cd,
                augment,
            });
        }
        Ok(CvReport::from_folds(results))
    }

    /// The identity predictor (post = pre) scored on the same folds.
    pub fn identity_baseline(&self, model: &MorphableModel, chamfer: ChamferVariant) -> Result<CvReport> {
        let mut results = Vec::with_capacity(self.folds.len());
        for (f, fold) in self.folds.iter().enumerate() {
            let mut hd = Vec::with_capacity(fold.len());
            let mut cd = Vec::with_capacity(fold.len());
            for &i in fold {
                let (pre, post) = &self.codes[i];
                let (h, c) = code_metrics(model, pre, post, chamfer)?;
                hd.push(h);
                cd.push(c);
            }
            results.push(FoldResult {
                fold: f,
                train_count: self.codes.len() - fold.len(),
                validation_ids: fold.iter().map(|&i| self.ids[i].clone()).collect(),
                hd,
                cd,
                augment: None,
            });
        }
        Ok(CvReport::from_folds(results))
    }
}

fn training_split(
    codes: &[(LatentCode, LatentCode)],
    folds: &[Vec<usize>],
    validation: usize,
) -> Vec<(LatentCode, LatentCode)> {
    folds
        .iter()
        .enumerate()
        .filter(|(f, _)| *f != validation)
        .flat_map(|(_, idx)| idx.iter().map(|&i| codes[i].clone()))
        .collect()
}

/// Shuffled k-fold cross-validation of the predictor, with optional
/// per-fold augmentation of the training split.
pub fn cross_validate(
    model: &MorphableModel,
    pairs: &[PatientPair],
    k: usize,
    config: &TrainConfig,
    augment: Option<&AugmentConfig>,
    split_seed: u64,
    chamfer: ChamferVariant,
) -> Result<CvReport> {
    CvPlan::new(model, pairs, k, split_seed, augment)?.run(model, config, augment.is_some(), chamfer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic_cohort, DeformityConfig};
    use crate::model::{build_synthetic_model, ModelSpec};

    fn setup(n: usize) -> (MorphableModel, Vec<PatientPair>) {
        let model = build_synthetic_model(ModelSpec {
            seed: 6,
            code_len: 16,
            resolution: 12,
        })
        .unwrap();
        let pairs = generate_synthetic_cohort(&model, n, &DeformityConfig::default()).unwrap();
        (model, pairs)
    }

    #[test]
    fn summary_of_values() {
        let s = Summary::of(&[3.0, 1.0, 2.0]);
        assert_eq!((s.mean, s.min, s.max), (2.0, 1.0, 3.0));
        assert!(Summary::of(&[]).mean.is_nan());
    }

    #[test]
    fn identity_baseline_is_reproducible() {
        let (model, pairs) = setup(12);
        let a = CvPlan::new(&model, &pairs, 3, 5, None).unwrap();
        let b = CvPlan::new(&model, &pairs, 3, 5, None).unwrap();
        let ra = a.identity_baseline(&model, ChamferVariant::Squared).unwrap();
        let rb = b.identity_baseline(&model, ChamferVariant::Squared).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(ra.folds.len(), 3);
        assert_eq!(ra.data_amount, 8);
        assert!(ra.cd.mean > 0.0);
    }

    #[test]
    fn folds_take_real_pairs_only() {
        let (model, mut pairs) = setup(6);
        pairs[2].provenance = Provenance::Augmented;
        assert!(CvPlan::new(&model, &pairs, 3, 0, None).is_err());
        let (model, pairs) = setup(3);
        assert!(CvPlan::new(&model, &pairs, 5, 0, None).is_err());
    }

    #[test]
    fn augmentation_stays_in_training_split() {
        let (model, pairs) = setup(10);
        let augment = AugmentConfig {
            factor: 2,
            tau: f64::INFINITY,
            ..AugmentConfig::default()
        };
        let plan = CvPlan::new(&model, &pairs, 5, 1, Some(&augment)).unwrap();
        let config = TrainConfig {
            epochs: 2,
            batch_size: 8,
            hidden: 8,
            ..TrainConfig::default()
        };
        let report = plan.run(&model, &config, true, ChamferVariant::Squared).unwrap();
        let real_ids: Vec<&str> = pairs.iter().map(|p| p.id.as_str()).collect();
        for (f, fold) in report.folds.iter().enumerate() {
            assert!(fold.validation_ids.iter().all(|id| real_ids.contains(&id.as_str())));
            let generated = plan.augmented.as_ref().unwrap()[f].0.len();
            assert_eq!(generated, 16);
            assert_eq!(fold.train_count, 8 + generated);
            for (pre, _) in &plan.augmented.as_ref().unwrap()[f].0 {
                for &i in &plan.folds[f] {
                    assert_ne!(pre, &plan.codes[i].0);
                }
            }
        }
        assert_eq!(report.data_amount, 24);
        let plain = plan.run(&model, &config, false, ChamferVariant::Squared).unwrap();
        assert_eq!(plain.data_amount, 8);
    }
}
