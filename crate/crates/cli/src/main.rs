use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use orthoface::augment::augment_dataset;
use orthoface::dataset::{generate_synthetic_cohort, load_dataset, save_dataset, PatientPair};
use orthoface::geometry::{load_landmarks, load_obj, save_obj, Mesh};
use orthoface::model::{build_synthetic_model, fit, load_model, save_model, LatentCode, MorphableModel};
use orthoface::pipeline::{
    ablate, evaluate_meshes, evaluate_predictor, face_mask_for, format_ablation, load_code, predict_scan, real_pairs,
    run_pipeline, save_code, PipelineConfig,
};
use orthoface::predictor::{load_checkpoint, save_checkpoint, train};
use orthoface::preview::{export_sequence, interpolate_codes};
use orthoface::{Error, ErrorKind, Result};

#[derive(Parser, Debug)]
#[command(name = "orthoface", version, about = "Post-operative face prediction on a linear morphable head model")]
struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the procedural morphable model and save it.
    BuildModel {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic patient cohort and save it as a dataset.
    GenerateCohort {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of patients (defaults to cohort.size).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Fit the model to a scan with landmarks and save the code.
    Fit {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        scan: PathBuf,
        #[arg(long)]
        landmarks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate stitched synthetic pairs from the real pairs of a dataset.
    Augment {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the predictor on a dataset.
    Train {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Previously generated synthetic pairs; generated on the fly when
        /// omitted and augment.enabled is true.
        #[arg(long)]
        augmented: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-epoch history CSV.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Predict the post-operative appearance of a scan.
    Predict {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        scan: PathBuf,
        #[arg(long)]
        landmarks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean/min/max Hausdorff and Chamfer distances.
    ///
    /// With --checkpoint, predicts every pair of --data and compares with
    /// its post-operative mesh. With --pred and --gt, compares same-named
    /// OBJ files of two directories.
    Evaluate {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, requires = "gt")]
        pred: Option<PathBuf>,
        #[arg(long, requires = "pred")]
        gt: Option<PathBuf>,
    },
    /// Cross-validated ablation: full pipeline, each loss removed,
    /// augmentation removed, and the identity baseline.
    Ablate {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Interpolate between two codes and export the frames.
    Animate {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        pre: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        /// Mesh the per-frame distances are measured against.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Complete run from model construction to preview export.
    Run {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    for o in &cli.overrides {
        config.apply_override(o)?;
    }
    config.validate()?;
    Ok(config)
}

fn model_at(path: &Option<PathBuf>, config: &PipelineConfig) -> Result<MorphableModel> {
    load_model(path.as_ref().unwrap_or(&config.model_path))
}

fn dataset_at(path: &Option<PathBuf>, config: &PipelineConfig) -> Result<Vec<PatientPair>> {
    Ok(load_dataset(path.as_ref().unwrap_or(&config.dataset_dir))?.1)
}

fn codes(pairs: &[PatientPair]) -> Vec<(LatentCode, LatentCode)> {
    pairs.iter().map(|p| (p.pre.code.clone(), p.post.code.clone())).collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn obj_files(dir: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".obj") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn execute(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::BuildModel { out } => {
            let model = build_synthetic_model(config.model_spec())?;
            let path = out.as_ref().unwrap_or(&config.model_path);
            save_model(&model, path)?;
            println!(
                "model {} vertices {} modes {}",
                path.display(),
                model.vertex_count(),
                model.code_len()
            );
        }
        Command::GenerateCohort { model, out, count } => {
            let model = model_at(model, &config)?;
            let deformity = config.deformity_config();
            let cohort = generate_synthetic_cohort(&model, count.unwrap_or(config.cohort_size), &deformity)?;
            let dir = out.as_ref().unwrap_or(&config.dataset_dir);
            save_dataset(&cohort, dir, model.spec(), deformity.seed)?;
            println!("cohort {} pairs {}", dir.display(), cohort.len());
        }
        Command::Fit {
            model,
            scan,
            landmarks,
            out,
        } => {
            let model = model_at(model, &config)?;
            let result = fit(&model, &load_obj(scan)?, &load_landmarks(landmarks)?, &config.fit)?;
            save_code(&result.code, out)?;
            println!(
                "code {} mean_landmark_error_mm {}",
                out.display(),
                result.report.mean_landmark_error
            );
        }
        Command::Augment { model, data, out } => {
            let model = model_at(model, &config)?;
            let pairs = real_pairs(dataset_at(data, &config)?);
            let augment = config.augment_config();
            let (synthetic, report) = augment_dataset(&model, &pairs, &augment)?;
            save_dataset(&synthetic, out, model.spec(), augment.seed)?;
            println!(
                "augmented {} pairs {} attempts {} rejected {} shortfall {}",
                out.display(),
                synthetic.len(),
                report.attempts,
                report.rejected(),
                report.shortfall
            );
        }
        Command::Train {
            model,
            data,
            augmented,
            out,
            history,
        } => {
            let model = model_at(model, &config)?;
            let pairs = real_pairs(dataset_at(data, &config)?);
            let mut train_codes = codes(&pairs);
            match augmented {
                Some(dir) => train_codes.extend(codes(&load_dataset(dir)?.1)),
                None if config.augment_enabled && !pairs.is_empty() => {
                    train_codes.extend(codes(&augment_dataset(&model, &pairs, &config.augment_config())?.0))
                }
                None => {}
            }
            let (params, hist) = train(&model, &train_codes, &config.train_config(), None)?;
            let path = out.as_ref().unwrap_or(&config.checkpoint_path);
            save_checkpoint(&params, path)?;
            if let Some(h) = history {
                std::fs::write(h, hist.to_csv()).map_err(|e| Error::io(h, e))?;
            }
            let last = hist.epochs.last().map_or(f64::NAN, |r| r.total);
            println!(
                "checkpoint {} pairs {} epochs {} final_loss {last}",
                path.display(),
                train_codes.len(),
                hist.len()
            );
        }
        Command::Predict {
            model,
            checkpoint,
            scan,
            landmarks,
            out,
        } => {
            let model = model_at(model, &config)?;
            let params = load_checkpoint(checkpoint.as_ref().unwrap_or(&config.checkpoint_path))?;
            let p = predict_scan(&model, &params, &load_obj(scan)?, &load_landmarks(landmarks)?, &config.fit)?;
            create_dir(out)?;
            save_obj(&p.deformed_scan, out.join("predicted_scan.obj"))?;
            save_obj(&p.post_model, out.join("predicted_model.obj"))?;
            save_code(&p.fit.code, out.join("pre_code.txt"))?;
            save_code(&p.predicted_code, out.join("predicted_code.txt"))?;
            println!(
                "prediction {} mean_landmark_error_mm {}",
                out.display(),
                p.fit.report.mean_landmark_error
            );
        }
        Command::Evaluate {
            model,
            checkpoint,
            data,
            pred,
            gt,
        } => {
            let evaluation = match (pred, gt) {
                (Some(pred), Some(gt)) => {
                    let model = model.as_ref().map(load_model).transpose()?;
                    let mut items = Vec::new();
                    for name in obj_files(pred)? {
                        let gt_path = gt.join(&name);
                        if !gt_path.is_file() {
                            return Err(Error::MissingFile(gt_path));
                        }
                        items.push((name.clone(), load_obj(pred.join(&name))?, load_obj(gt_path)?));
                    }
                    if items.is_empty() {
                        return Err(Error::InvalidArgument(format!("no .obj files in {}", pred.display())));
                    }
                    let mask = model.as_ref().and_then(|m| face_mask_for(m, &items[0].1));
                    evaluate_meshes(&items, mask, config.chamfer)?
                }
                _ => {
                    let model = model_at(model, &config)?;
                    let params = load_checkpoint(checkpoint.as_ref().unwrap_or(&config.checkpoint_path))?;
                    let pairs = real_pairs(dataset_at(data, &config)?);
                    if pairs.is_empty() {
                        return Err(Error::InvalidArgument("dataset has no real pairs".into()));
                    }
                    evaluate_predictor(&model, &params, &pairs, config.chamfer)?
                }
            };
            print!("{}", evaluation.format_table());
        }
        Command::Ablate { model, data, out } => {
            let model = model_at(model, &config)?;
            let pairs = real_pairs(dataset_at(data, &config)?);
            let (mut rows, identity) = ablate(&model, &pairs, &config)?;
            rows.push(identity);
            let table = format_ablation(&rows);
            print!("{table}");
            if let Some(path) = out {
                std::fs::write(path, &table).map_err(|e| Error::io(path, e))?;
            }
        }
        Command::Animate {
            model,
            pre,
            pred,
            steps,
            reference,
            out,
        } => {
            let model = model_at(model, &config)?;
            let frames = interpolate_codes(&model, &load_code(pre)?, &load_code(pred)?, *steps)?;
            let reference: Option<Mesh> = reference.as_ref().map(load_obj).transpose()?;
            let rows = export_sequence(&frames, out, reference.as_ref(), config.chamfer)?;
            println!("frames {} count {}", out.display(), frames.len());
            for r in rows {
                println!("frame {} hd_mm {} cd {}", r.frame, r.hd, r.cd);
            }
        }
        Command::Run { out } => {
            let dir = out.as_ref().unwrap_or(&config.output_dir);
            let summary = run_pipeline(&config, dir)?;
            println!("run {}", dir.display());
            println!(
                "validation_pairs {} cd_mean {} identity_cd_mean {}",
                summary.validation_ids.len(),
                summary.trained.cd_summary().mean,
                summary.identity.cd_summary().mean
            );
        }
    }
    Ok(())
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

fn kind_name(kind: ErrorKind) -> &'static str {
    match kind {
        ErrorKind::Config => "config",
        ErrorKind::Data => "data",
        ErrorKind::Numeric => "numeric",
    }
}

fn single_line(message: &str) -> String {
    message.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[config]: {}", single_line(first.trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.kind();
            eprintln!("error[{}]: {}", kind_name(kind), single_line(&e.to_string()));
            ExitCode::from(exit_code(kind))
        }
    }
}
