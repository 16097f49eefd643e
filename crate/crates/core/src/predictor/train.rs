use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use super::cv::code_metrics;
use super::mlp::{backward, forward, MlpParams, Mode, DEFAULT_HIDDEN};
use super::optim::{learning_rate, Optimizer, OptimizerKind};
use crate::geometry::ChamferVariant;
use crate::losses::{LossEvaluator, LossWeights};
use crate::model::{LatentCode, MorphableModel};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Multiplier applied every `decay_every` epochs.
    pub decay: f64,
    pub decay_every: usize,
    pub dropout: f64,
    pub optimizer: OptimizerKind,
    pub hidden: usize,
    pub bn_momentum: f64,
    pub seed: u64,
    pub weights: LossWeights,
    /// Metric flavour for per-epoch validation.
    pub chamfer: ChamferVariant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 150,
            epochs: 500,
            learning_rate: 1e-3,
            decay: 0.5,
            decay_every: 100,
            dropout: 0.5,
            optimizer: OptimizerKind::Adam,
            hidden: DEFAULT_HIDDEN,
            bn_momentum: 0.1,
            seed: 0,
            weights: LossWeights::default(),
            chamfer: ChamferVariant::Squared,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be at least 1".into()));
        }
        for (name, p) in [("dropout", self.dropout), ("bn momentum", self.bn_momentum)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} outside [0, 1]")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || !(self.decay > 0.0) {
            return Err(Error::Config("learning rate and decay must be positive".into()));
        }
        self.weights.validate()
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        learning_rate(self.learning_rate, self.decay, self.decay_every, epoch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub mouth_convexity: f64,
    pub asymmetry: f64,
    pub latent_code: f64,
    pub geometry: f64,
    pub total: f64,
    pub val_hd: Option<f64>,
    pub val_cd: Option<f64>,
}

/// Per-epoch means over training samples (unweighted terms, weighted total).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "epoch,lr,L_p,L_a,L_f,L_g,total,val_HD,val_CD";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for r in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.lr,
                r.mouth_convexity,
                r.asymmetry,
                r.latent_code,
                r.geometry,
                r.total,
                opt(r.val_hd),
                opt(r.val_cd)
            );
        }
        out
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }
}

fn stack(codes: impl ExactSizeIterator<Item = LatentCode>, k: usize) -> DMatrix<f64> {
    let n = codes.len();
    let mut m = DMatrix::zeros(k, n);
    for (j, c) in codes.enumerate() {
        m.set_column(j, &c);
    }
    m
}

/// Mean (HD, CD) of eval-mode predictions over `pairs`.
pub fn validation_metrics(
    model: &MorphableModel,
    params: &MlpParams,
    pairs: &[(LatentCode, LatentCode)],
    chamfer: ChamferVariant,
) -> Result<(f64, f64)> {
    let mut hd = 0.0;
    let mut cd = 0.0;
    for (pre, post) in pairs {
        let (h, c) = code_metrics(model, &params.predict(pre)?, post, chamfer)?;
        hd += h;
        cd += c;
    }
    let n = pairs.len().max(1) as f64;
    Ok((hd / n, cd / n))
}

/// Minibatch training of the residual predictor on (pre, post) code pairs.
pub fn train(
    model: &MorphableModel,
    pairs: &[(LatentCode, LatentCode)],
    config: &TrainConfig,
    validation: Option<&[(LatentCode, LatentCode)]>,
) -> Result<(MlpParams, TrainHistory)> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one pair".into()));
    }
    let k = model.code_len();
    for (pre, post) in pairs {
        model.check_code(pre)?;
        model.check_code(post)?;
    }
    let mut params = MlpParams::init(k, config.hidden, &mut seed::rng(seed::split(config.seed, 0)));
    let mut history = TrainHistory::default();
    if config.epochs == 0 {
        return Ok((params, history));
    }
    let evaluator = LossEvaluator::new(model, config.weights)?;
    let mut optimizer = Optimizer::new(config.optimizer, &mut params);
    let all_targets = evaluator.targets(&stack(pairs.iter().map(|p| p.1.clone()), k))?;
    let mut order: Vec<usize> = (0..pairs.len()).collect();

    for epoch in 0..config.epochs {
        let lr = config.learning_rate_at(epoch);
        let mut rng = seed::rng(seed::split(config.seed, epoch as u64 + 1));
        order.shuffle(&mut rng);
        let mut sums = [0.0; 5];
        for (batch_index, batch) in order.chunks(config.batch_size).enumerate() {
            let inputs = stack(batch.iter().map(|&i| pairs[i].0.clone()), k);
            let (delta, cache) = forward(&params, &inputs, Mode::Train, config.dropout, &mut rng)?;
            let preds = &inputs + &delta;
            let target_refs: Vec<_> = batch.iter().map(|&i| &all_targets[i]).collect();
            let losses = evaluator.evaluate_batch(&preds, &target_refs)?;

            let scale = 1.0 / batch.len() as f64;
            let mut grad_delta = DMatrix::zeros(k, batch.len());
            for (j, loss) in losses.iter().enumerate() {
                if let Some(term) = loss.non_finite_term() {
                    return Err(Error::NonFiniteLoss {
                        term,
                        epoch,
                        batch: batch_index,
                    });
                }
                grad_delta.set_column(j, &(scale * &loss.gradient));
                sums[0] += loss.mouth_convexity;
                sums[1] += loss.asymmetry;
                sums[2] += loss.latent_code;
                sums[3] += loss.geometry;
                sums[4] += loss.total;
            }
            let (grads, _) = backward(&params, &cache, &grad_delta)?;
            optimizer.step(&mut params, &grads, lr);
            params.update_running_stats(&cache, config.bn_momentum);
        }
        if !params.is_finite() {
            return Err(Error::NonFiniteLoss {
                term: "parameters",
                epoch,
                batch: 0,
            });
        }
        let n = pairs.len() as f64;
        let (val_hd, val_cd) = match validation {
            Some(v) if !v.is_empty() => {
                let (h, c) = validation_metrics(model, &params, v, config.chamfer)?;
                (Some(h), Some(c))
            }
            _ => (None, None),
        };
        history.epochs.push(EpochRecord {
            epoch,
            lr,
            mouth_convexity: sums[0] / n,
            asymmetry: sums[1] / n,
            latent_code: sums[2] / n,
            geometry: sums[3] / n,
            total: sums[4] / n,
            val_hd,
            val_cd,
        });
    }
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic_cohort, DeformityConfig};
    use crate::model::{build_synthetic_model, ModelSpec};
    use nalgebra::DVector;

    fn setup(n: usize) -> (MorphableModel, Vec<(LatentCode, LatentCode)>) {
        let model = build_synthetic_model(ModelSpec {
            seed: 2,
            code_len: 16,
            resolution: 12,
        })
        .unwrap();
        let pairs = generate_synthetic_cohort(&model, n, &DeformityConfig::default())
            .unwrap()
            .into_iter()
            .map(|p| (p.pre.code, p.post.code))
            .collect();
        (model, pairs)
    }

    fn small_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            epochs,
            hidden: 12,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let (model, pairs) = setup(6);
        let config = small_config(0);
        let (params, history) = train(&model, &pairs, &config, None).unwrap();
        let init = MlpParams::init(16, 12, &mut seed::rng(seed::split(config.seed, 0)));
        assert_eq!(params, init);
        assert!(history.is_empty());
    }

    #[test]
    fn training_is_reproducible() {
        let (model, pairs) = setup(10);
        let config = small_config(3);
        let (a, ha) = train(&model, &pairs, &config, Some(&pairs[..2])).unwrap();
        let (b, hb) = train(&model, &pairs, &config, Some(&pairs[..2])).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert_eq!(ha.len(), 3);
        assert!(ha.epochs.iter().all(|r| r.val_cd.is_some() && r.total >= 0.0));
        let csv = ha.to_csv();
        assert_eq!(csv.lines().next().unwrap(), TrainHistory::CSV_HEADER);
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn schedule_in_history() {
        let config = TrainConfig::default();
        for (epoch, lr) in [(0, 1e-3), (100, 5e-4), (200, 2.5e-4), (250, 2.5e-4), (400, 6.25e-5)] {
            assert_eq!(config.learning_rate_at(epoch), lr);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let (model, pairs) = setup(4);
        assert!(train(&model, &[], &small_config(1), None).is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..small_config(1)
        };
        assert!(train(&model, &pairs, &bad, None).is_err());
        let bad = TrainConfig {
            dropout: 1.5,
            ..small_config(1)
        };
        assert!(train(&model, &pairs, &bad, None).is_err());
        let short = vec![(DVector::zeros(3), DVector::zeros(3))];
        assert!(train(&model, &short, &small_config(1), None).is_err());
    }

    #[test]
    fn diverging_training_names_the_term() {
        let (model, pairs) = setup(6);
        let config = TrainConfig {
            learning_rate: 1e300,
            optimizer: OptimizerKind::Sgd,
            dropout: 0.0,
            ..small_config(5)
        };
        match train(&model, &pairs, &config, None) {
            Err(Error::NonFiniteLoss { term, .. }) => assert!(!term.is_empty()),
            other => panic!("expected a non-finite loss, got {:?}", other.map(|_| ())),
        }
    }
}
