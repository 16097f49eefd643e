//! End-to-end wiring: configuration, scan prediction, evaluation and
//! ablation harnesses, and a complete reproducible run.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::augment::{augment_dataset, AugmentReport};
use crate::dataset::{generate_synthetic_cohort, save_dataset, split_kfold, PatientPair, Provenance};
use crate::geometry::{hausdorff_and_chamfer, save_obj, ChamferVariant, LandmarkSet, Mesh, RegionMask};
use crate::losses::LossWeights;
use crate::model::{build_synthetic_model, fit, save_model, FitConfig, FitOutput, LatentCode, MorphableModel, Region};
use crate::predictor::{
    mesh_metrics, save_checkpoint, train, CvPlan, MlpParams, Summary, TrainConfig, TrainHistory,
};
use crate::preview::{build_barycentric_map, export_sequence, interpolate_codes, transfer_prediction, FrameDistance};
use crate::{Error, Result};

pub use config::{PipelineConfig, KEYS};

/// One float per line, shortest round-trip formatting.
pub fn format_code(code: &LatentCode) -> String {
    code.iter().map(|v| format!("{v}\n")).collect()
}

pub fn parse_code(text: &str, source_name: &str) -> Result<LatentCode> {
    let mut values = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line.parse().map_err(|_| Error::Parse {
            path: source_name.to_string(),
            line: n + 1,
            message: format!("expected a number, got {line:?}"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                path: source_name.to_string(),
                line: n + 1,
                message: "non-finite coefficient".into(),
            });
        }
        values.push(v);
    }
    Ok(LatentCode::from_vec(values))
}

pub fn save_code(code: &LatentCode, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_code(code)).map_err(|e| Error::io(path, e))
}

pub fn load_code(path: impl AsRef<Path>) -> Result<LatentCode> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_code(&text, &path.display().to_string())
}

/// Result of predicting the post-operative appearance of one scan.
#[derive(Debug, Clone)]
pub struct ScanPrediction {
    pub fit: FitOutput,
    pub predicted_code: LatentCode,
    /// Decodes of the fitted and predicted codes, in model space.
    pub pre_model: Mesh,
    pub post_model: Mesh,
    /// The scan moved by the predicted deformation, in scan coordinates.
    pub deformed_scan: Mesh,
}

/// Fit, predict, decode, and carry the model deformation onto the scan.
/// The transfer happens in model space; the result is mapped back with
/// the inverse of the fitted rigid transform.
pub fn predict_scan(
    model: &MorphableModel,
    params: &MlpParams,
    scan: &Mesh,
    landmarks: &LandmarkSet,
    fit_config: &FitConfig,
) -> Result<ScanPrediction> {
    if params.code_len() != model.code_len() {
        return Err(Error::LengthMismatch {
            expected: model.code_len(),
            actual: params.code_len(),
        });
    }
    let fitted = fit(model, scan, landmarks, fit_config)?;
    let predicted_code = params.predict(&fitted.code)?;
    let pre_model = model.decode_neutral(&fitted.code)?;
    let post_model = model.decode_neutral(&predicted_code)?;
    let aligned = fitted.transform.apply_mesh(scan);
    let map = build_barycentric_map(&aligned, &pre_model)?;
    let moved = transfer_prediction(&aligned, &map, &pre_model, &post_model)?;
    let deformed_scan = fitted.transform.inverse().apply_mesh(&moved);
    Ok(ScanPrediction {
        fit: fitted,
        predicted_code,
        pre_model,
        post_model,
        deformed_scan,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub ids: Vec<String>,
    pub hd: Vec<f64>,
    pub cd: Vec<f64>,
}

impl Evaluation {
    pub fn hd_summary(&self) -> Summary {
        Summary::of(&self.hd)
    }

    pub fn cd_summary(&self) -> Summary {
        Summary::of(&self.cd)
    }

    /// Header plus one row per metric: mean, min, max.
    pub fn format_table(&self) -> String {
        let mut out = format!("{:<8}{:>12}{:>12}{:>12}\n", "metric", "mean", "min", "max");
        for (name, s) in [("hd_mm", self.hd_summary()), ("cd", self.cd_summary())] {
            let _ = writeln!(out, "{name:<8}{:>12.6}{:>12.6}{:>12.6}", s.mean, s.min, s.max);
        }
        out
    }
}

/// HD and CD of each (id, predicted, ground truth) triple, restricted to
/// `mask` when given.
pub fn evaluate_meshes(
    items: &[(String, Mesh, Mesh)],
    mask: Option<&RegionMask>,
    chamfer: ChamferVariant,
) -> Result<Evaluation> {
    let mut out = Evaluation {
        ids: Vec::with_capacity(items.len()),
        hd: Vec::with_capacity(items.len()),
        cd: Vec::with_capacity(items.len()),
    };
    for (id, pred, gt) in items {
        let (h, c) = match mask {
            Some(m) => {
                pred.ensure_same_topology(gt)?;
                hausdorff_and_chamfer(&m.points(pred), &m.points(gt), chamfer)?
            }
            None => hausdorff_and_chamfer(&pred.vertices, &gt.vertices, chamfer)?,
        };
        out.ids.push(id.clone());
        out.hd.push(h);
        out.cd.push(c);
    }
    Ok(out)
}

/// Predicts every pair's post-operative face from its pre-operative code
/// and scores it against the recorded post-operative mesh on the face mask.
pub fn evaluate_predictor(
    model: &MorphableModel,
    params: &MlpParams,
    pairs: &[PatientPair],
    chamfer: ChamferVariant,
) -> Result<Evaluation> {
    let mut out = Evaluation {
        ids: Vec::new(),
        hd: Vec::new(),
        cd: Vec::new(),
    };
    for pair in pairs {
        let pred = model.decode_neutral(&params.predict(&pair.pre.code)?)?;
        let (h, c) = mesh_metrics(model, &pred, &pair.post.mesh, chamfer)?;
        out.ids.push(pair.id.clone());
        out.hd.push(h);
        out.cd.push(c);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub name: &'static str,
    pub hd: f64,
    pub cd: f64,
    pub data_amount: usize,
}

pub const ABLATIONS: [&str; 6] = [
    "full",
    "no_mouth_convexity",
    "no_asymmetry",
    "no_latent_code",
    "no_geometry",
    "no_augmentation",
];

fn ablation_variant(name: &str, weights: LossWeights) -> (LossWeights, bool) {
    match name {
        "no_mouth_convexity" => (LossWeights { alpha_p: 0.0, ..weights }, true),
        "no_asymmetry" => (LossWeights { alpha_a: 0.0, ..weights }, true),
        "no_latent_code" => (LossWeights { alpha_f: 0.0, ..weights }, true),
        "no_geometry" => (LossWeights { alpha_g: 0.0, ..weights }, true),
        "no_augmentation" => (weights, false),
        _ => (weights, true),
    }
}

/// Cross-validated runs of the full pipeline and of each ablation, on one
/// shared fold assignment and one set of synthetic pairs. Returns the rows
/// together with the identity-predictor baseline on the same folds.
pub fn ablate(
    model: &MorphableModel,
    pairs: &[PatientPair],
    config: &PipelineConfig,
) -> Result<(Vec<AblationRow>, AblationRow)> {
    let plan = CvPlan::new(model, pairs, config.folds, config.split_seed(), Some(&config.augment_config()))?;
    let base = config.train_config();
    let mut rows = Vec::with_capacity(ABLATIONS.len());
    for name in ABLATIONS {
        let (weights, use_augmentation) = ablation_variant(name, base.weights);
        let train_config = TrainConfig { weights, ..base.clone() };
        let report = plan.run(model, &train_config, use_augmentation, config.chamfer)?;
        rows.push(AblationRow {
            name,
            hd: report.hd.mean,
            cd: report.cd.mean,
            data_amount: report.data_amount,
        });
    }
    let identity = plan.identity_baseline(model, config.chamfer)?;
    let baseline = AblationRow {
        name: "identity",
        hd: identity.hd.mean,
        cd: identity.cd.mean,
        data_amount: 0,
    };
    Ok((rows, baseline))
}

/// Header plus one line per row: name, HD (mm), CD, training data amount.
pub fn format_ablation(rows: &[AblationRow]) -> String {
    let mut out = format!("{:<20}{:>12}{:>12}{:>12}\n", "name", "hd_mm", "cd", "data_amount");
    for r in rows {
        let _ = writeln!(out, "{:<20}{:>12.6}{:>12.6}{:>12}", r.name, r.hd, r.cd, r.data_amount);
    }
    out
}

/// Files written by [`run_pipeline`], relative to its output directory.
pub const RUN_ARTIFACTS: &[&str] = &[
    "config.txt",
    "model.txt",
    "data/manifest.txt",
    "augmented/manifest.txt",
    "checkpoint.txt",
    "history.csv",
    "report.txt",
    "preview/predicted_scan.obj",
    "preview/predicted_model.obj",
    "preview/pre_code.txt",
    "preview/predicted_code.txt",
    "preview/frames/distances.csv",
];

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub validation_ids: Vec<String>,
    pub trained: Evaluation,
    pub identity: Evaluation,
    pub augment: Option<AugmentReport>,
    pub history: TrainHistory,
    pub frames: Vec<FrameDistance>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Frames exported by the preview step of a run.
pub const PREVIEW_STEPS: usize = 5;

/// Builds the model, generates and saves a cohort, holds out the first
/// fold, augments and trains on the rest, evaluates the held-out pairs and
/// exports a preview of the first of them. Everything is a function of the
/// configuration, so two runs produce identical files.
pub fn run_pipeline(config: &PipelineConfig, out: impl AsRef<Path>) -> Result<RunSummary> {
    config.validate()?;
    let out = out.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_text(&out.join("config.txt"), &config.format())?;

    let model = build_synthetic_model(config.model_spec())?;
    save_model(&model, out.join("model.txt"))?;

    let cohort = generate_synthetic_cohort(&model, config.cohort_size, &config.deformity_config())?;
    save_dataset(&cohort, out.join("data"), model.spec(), config.deformity_config().seed)?;

    let folds = split_kfold(cohort.len(), config.folds, config.split_seed())?;
    let validation: Vec<PatientPair> = folds[0].iter().map(|&i| cohort[i].clone()).collect();
    let training: Vec<PatientPair> = folds[1..].iter().flatten().map(|&i| cohort[i].clone()).collect();
    if training.is_empty() || validation.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} patients cannot fill {} folds",
            cohort.len(),
            config.folds
        )));
    }

    let (synthetic, augment) = if config.augment_enabled {
        let (pairs, report) = augment_dataset(&model, &training, &config.augment_config())?;
        (pairs, Some(report))
    } else {
        (Vec::new(), None)
    };
    save_dataset(&synthetic, out.join("augmented"), model.spec(), config.augment_config().seed)?;

    let codes = |pairs: &[PatientPair]| -> Vec<(LatentCode, LatentCode)> {
        pairs.iter().map(|p| (p.pre.code.clone(), p.post.code.clone())).collect()
    };
    let mut train_codes = codes(&training);
    train_codes.extend(codes(&synthetic));
    let validation_codes = codes(&validation);
    let (params, history) = train(&model, &train_codes, &config.train_config(), Some(&validation_codes))?;
    save_checkpoint(&params, out.join("checkpoint.txt"))?;
    write_text(&out.join("history.csv"), &history.to_csv())?;

    let trained = evaluate_predictor(&model, &params, &validation, config.chamfer)?;
    let identity = evaluate_predictor(&model, &MlpParams::zeros(model.code_len(), params.hidden()), &validation, config.chamfer)?;

    let preview = out.join("preview");
    fs::create_dir_all(&preview).map_err(|e| Error::io(&preview, e))?;
    let first = &validation[0];
    let prediction = predict_scan(&model, &params, &first.pre.mesh, &first.pre.landmarks, &config.fit)?;
    save_obj(&prediction.deformed_scan, preview.join("predicted_scan.obj"))?;
    save_obj(&prediction.post_model, preview.join("predicted_model.obj"))?;
    save_code(&prediction.fit.code, preview.join("pre_code.txt"))?;
    save_code(&prediction.predicted_code, preview.join("predicted_code.txt"))?;
    let frames = interpolate_codes(&model, &prediction.fit.code, &prediction.predicted_code, PREVIEW_STEPS)?;
    let frames = export_sequence(&frames, preview.join("frames"), frames.last(), config.chamfer)?;

    let mut report = String::new();
    let _ = writeln!(report, "training_pairs {}", train_codes.len());
    let _ = writeln!(report, "real_training_pairs {}", training.len());
    let _ = writeln!(report, "validation_pairs {}", validation.len());
    if let Some(a) = &augment {
        let _ = writeln!(
            report,
            "augmentation attempts {} generated {} rejected {} shortfall {}",
            a.attempts,
            a.generated,
            a.rejected(),
            a.shortfall
        );
    }
    let _ = writeln!(report, "\n[predictor]\n{}", trained.format_table());
    let _ = writeln!(report, "[identity]\n{}", identity.format_table());
    let _ = writeln!(report, "[per-pair]\nid,hd_mm,cd,identity_hd_mm,identity_cd");
    for i in 0..trained.ids.len() {
        let _ = writeln!(
            report,
            "{},{},{},{},{}",
            trained.ids[i], trained.hd[i], trained.cd[i], identity.hd[i], identity.cd[i]
        );
    }
    write_text(&out.join("report.txt"), &report)?;

    Ok(RunSummary {
        output_dir: out.to_path_buf(),
        validation_ids: validation.iter().map(|p| p.id.clone()).collect(),
        trained,
        identity,
        augment,
        history,
        frames,
    })
}

/// Real pairs only; synthetic and augmented pairs are skipped.
pub fn real_pairs(pairs: Vec<PatientPair>) -> Vec<PatientPair> {
    pairs.into_iter().filter(|p| p.provenance == Provenance::Real).collect()
}

/// The face mask when `mesh` has the model's vertex count, else `None`.
pub fn face_mask_for<'a>(model: &'a MorphableModel, mesh: &Mesh) -> Option<&'a RegionMask> {
    (mesh.vertices.len() == model.vertex_count()).then(|| model.region_mask(Region::Face))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn code_round_trip_is_exact() {
        let code = LatentCode::from_vec(vec![0.1, -3.5e-7, 1.0 / 3.0, 0.0]);
        assert_eq!(parse_code(&format_code(&code), "mem").unwrap(), code);
    }

    #[test]
    fn code_parse_errors_name_the_line() {
        let err = parse_code("1.0\nx\n", "c.txt").unwrap_err();
        assert_eq!(err.to_string(), "c.txt: line 2: expected a number, got \"x\"");
        assert!(parse_code("NaN\n", "c.txt").is_err());
    }

    #[test]
    fn ablation_table_shape() {
        let rows: Vec<AblationRow> = ABLATIONS
            .iter()
            .map(|&name| AblationRow {
                name,
                hd: 1.0,
                cd: 2.0,
                data_amount: 10,
            })
            .collect();
        let table = format_ablation(&rows);
        assert_eq!(table.lines().count(), 7);
        assert!(table.lines().next().unwrap().split_whitespace().eq(["name", "hd_mm", "cd", "data_amount"]));
    }

    #[test]
    fn variants_zero_one_weight() {
        let w = LossWeights::default();
        assert_eq!(ablation_variant("no_geometry", w).0.alpha_g, 0.0);
        assert_eq!(ablation_variant("no_latent_code", w).0.alpha_f, 0.0);
        assert!(!ablation_variant("no_augmentation", w).1);
        assert_eq!(ablation_variant("full", w), (w, true));
    }
}
