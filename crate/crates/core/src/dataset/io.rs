//! Dataset directory layout:
//!
//! ```text
//! <dir>/manifest.txt
//! <dir>/<id>/pre.obj  post.obj  pre.landmarks.txt  post.landmarks.txt  meta.txt
//! ```
//!
//! `manifest.txt` holds `manifest 1`, `model <seed> <K> <resolution>`,
//! `seed <creation seed>`, `pairs <count>` and then one line per pair:
//! `<id> <provenance> <pre.obj> <post.obj> <pre landmarks> <post landmarks> <meta>`
//! with paths relative to the dataset directory.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DVector;

use super::{FaceRecord, PatientPair, Provenance};
use crate::geometry::landmarks::{load_landmarks, save_landmarks};
use crate::geometry::{load_obj, save_obj};
use crate::model::{FitReport, ModelSpec};
use crate::{Error, Result};

const FILES: [&str; 5] = ["pre.obj", "post.obj", "pre.landmarks.txt", "post.landmarks.txt", "meta.txt"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub provenance: Provenance,
    /// The five files of the pair in layout order, relative to the dataset
    /// directory.
    pub files: [String; 5],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub model: ModelSpec,
    pub creation_seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn format(&self) -> String {
        let mut out = String::new();
        let m = &self.model;
        let _ = writeln!(out, "manifest 1");
        let _ = writeln!(out, "model {} {} {}", m.seed, m.code_len, m.resolution);
        let _ = writeln!(out, "seed {}", self.creation_seed);
        let _ = writeln!(out, "pairs {}", self.entries.len());
        for e in &self.entries {
            let _ = writeln!(out, "{} {} {}", e.id, e.provenance, e.files.join(" "));
        }
        out
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: source_name.to_string(),
            line,
            message,
        };
        let lines: Vec<&str> = text.lines().collect();
        let field = |i: usize, key: &str, count: usize| -> Result<Vec<&str>> {
            let line = lines.get(i).ok_or_else(|| err(i + 1, "unexpected end of file".into()))?;
            let mut f = line.split_whitespace();
            if f.next() != Some(key) {
                return Err(err(i + 1, format!("expected `{key}`")));
            }
            let rest: Vec<&str> = f.collect();
            if rest.len() != count {
                return Err(err(i + 1, format!("`{key}` takes {count} values")));
            }
            Ok(rest)
        };
        let num = |i: usize, s: &str| -> Result<u64> { s.parse().map_err(|_| err(i + 1, format!("invalid integer {s:?}"))) };
        if field(0, "manifest", 1)?[0] != "1" {
            return Err(err(1, "unsupported manifest version".into()));
        }
        let m = field(1, "model", 3)?;
        let model = ModelSpec {
            seed: num(1, m[0])?,
            code_len: num(1, m[1])? as usize,
            resolution: num(1, m[2])? as usize,
        };
        let creation_seed = num(2, field(2, "seed", 1)?[0])?;
        let count = num(3, field(3, "pairs", 1)?[0])? as usize;
        let mut entries = Vec::with_capacity(count);
        for i in 4..4 + count {
            let line = lines.get(i).ok_or_else(|| err(i + 1, "missing pair entry".into()))?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 7 {
                return Err(err(i + 1, "pair entry needs id, provenance and five paths".into()));
            }
            entries.push(ManifestEntry {
                id: f[0].to_string(),
                provenance: f[1].parse().map_err(|e: Error| err(i + 1, e.to_string()))?,
                files: [f[2], f[3], f[4], f[5], f[6]].map(String::from),
            });
        }
        Ok(DatasetManifest {
            model,
            creation_seed,
            entries,
        })
    }
}

fn format_meta(pair: &PatientPair) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "id {}", pair.id);
    let _ = writeln!(out, "provenance {}", pair.provenance);
    for (name, face) in [("pre", &pair.pre), ("post", &pair.post)] {
        let code: Vec<String> = face.code.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(out, "{name}_code {}", code.join(" "));
        let rms = face.fit.surface_rms.map_or("-".to_string(), |r| r.to_string());
        let _ = writeln!(out, "{name}_fit {} {}", face.fit.iterations, rms);
        let res: Vec<String> = face.fit.landmark_residuals.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(out, "{name}_residuals {}", res.join(" "));
    }
    out
}

struct Meta {
    codes: [DVector<f64>; 2],
    fits: [FitReport; 2],
}

fn parse_meta(text: &str, path: &Path) -> Result<Meta> {
    let name = path.display().to_string();
    let err = |line: usize, message: String| Error::Parse {
        path: name.clone(),
        line,
        message,
    };
    let mut codes: [Option<DVector<f64>>; 2] = [None, None];
    let mut fit_info: [Option<(usize, Option<f64>)>; 2] = [None, None];
    let mut residuals: [Option<Vec<f64>>; 2] = [None, None];
    for (i, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(key) = fields.next() else { continue };
        let floats = |fields: std::str::SplitWhitespace| -> Result<Vec<f64>> {
            fields
                .map(|f| f.parse().map_err(|_| err(i + 1, format!("invalid number {f:?}"))))
                .collect()
        };
        let (side, what) = match key.split_once('_') {
            Some(("pre", w)) => (0, w),
            Some(("post", w)) => (1, w),
            _ => continue,
        };
        match what {
            "code" => codes[side] = Some(DVector::from_vec(floats(fields)?)),
            "residuals" => residuals[side] = Some(floats(fields)?),
            "fit" => {
                let f: Vec<&str> = fields.collect();
                if f.len() != 2 {
                    return Err(err(i + 1, "fit line needs iterations and surface rms".into()));
                }
                let iterations = f[0].parse().map_err(|_| err(i + 1, "invalid iteration count".into()))?;
                let rms = match f[1] {
                    "-" => None,
                    s => Some(s.parse().map_err(|_| err(i + 1, "invalid surface rms".into()))?),
                };
                fit_info[side] = Some((iterations, rms));
            }
            _ => return Err(err(i + 1, format!("unknown key {key:?}"))),
        }
    }
    let missing = |what: &str| err(0, format!("missing {what}"));
    let mut fits = Vec::with_capacity(2);
    for side in 0..2 {
        let (iterations, rms) = fit_info[side].ok_or_else(|| missing("fit line"))?;
        let res = residuals[side].take().ok_or_else(|| missing("residuals"))?;
        fits.push(FitReport::from_residuals(res, rms, iterations));
    }
    let post_fit = fits.pop().unwrap_or_else(|| FitReport::exact(0));
    let pre_fit = fits.pop().unwrap_or_else(|| FitReport::exact(0));
    let [pre_code, post_code] = codes;
    Ok(Meta {
        codes: [
            pre_code.ok_or_else(|| missing("pre_code"))?,
            post_code.ok_or_else(|| missing("post_code"))?,
        ],
        fits: [pre_fit, post_fit],
    })
}

fn check_unique(ids: impl IntoIterator<Item = impl AsRef<str>>) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        let id = id.as_ref();
        if id.is_empty() || id.contains(char::is_whitespace) || id.contains('/') {
            return Err(Error::InvalidArgument(format!("invalid pair id {id:?}")));
        }
        if !seen.insert(id.to_string()) {
            return Err(Error::DuplicateId(id.to_string()));
        }
    }
    Ok(())
}

pub fn save_dataset(
    pairs: &[PatientPair],
    dir: impl AsRef<Path>,
    model: ModelSpec,
    creation_seed: u64,
) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    check_unique(pairs.iter().map(|p| &p.id))?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let sub = dir.join(&pair.id);
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        save_obj(&pair.pre.mesh, sub.join(FILES[0]))?;
        save_obj(&pair.post.mesh, sub.join(FILES[1]))?;
        save_landmarks(&pair.pre.landmarks, sub.join(FILES[2]))?;
        save_landmarks(&pair.post.landmarks, sub.join(FILES[3]))?;
        let meta = sub.join(FILES[4]);
        std::fs::write(&meta, format_meta(pair)).map_err(|e| Error::io(&meta, e))?;
        entries.push(ManifestEntry {
            id: pair.id.clone(),
            provenance: pair.provenance,
            files: FILES.map(|f| format!("{}/{f}", pair.id)),
        });
    }
    let manifest = DatasetManifest {
        model,
        creation_seed,
        entries,
    };
    let path = dir.join("manifest.txt");
    std::fs::write(&path, manifest.format()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(DatasetManifest, Vec<PatientPair>)> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.txt");
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest = DatasetManifest::parse(&text, &path.display().to_string())?;
    check_unique(manifest.entries.iter().map(|e| &e.id))?;
    for entry in &manifest.entries {
        for f in &entry.files {
            let p = dir.join(f);
            if !p.is_file() {
                return Err(Error::MissingFile(p));
            }
        }
    }
    let mut pairs = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let file = |i: usize| -> PathBuf { dir.join(&entry.files[i]) };
        let meta_path = file(4);
        let meta_text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let Meta { codes, fits } = parse_meta(&meta_text, &meta_path)?;
        let [pre_code, post_code] = codes;
        let [pre_fit, post_fit] = fits;
        let pre_mesh = load_obj(file(0))?;
        let post_mesh = load_obj(file(1))?;
        pre_mesh.ensure_same_topology(&post_mesh)?;
        pairs.push(PatientPair {
            id: entry.id.clone(),
            pre: FaceRecord {
                mesh: pre_mesh,
                landmarks: load_landmarks(file(2))?,
                code: pre_code,
                fit: pre_fit,
            },
            post: FaceRecord {
                mesh: post_mesh,
                landmarks: load_landmarks(file(3))?,
                code: post_code,
                fit: post_fit,
            },
            provenance: entry.provenance,
        });
    }
    Ok((manifest, pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic_cohort, DeformityConfig};
    use crate::model::build_synthetic_model;

    fn spec() -> ModelSpec {
        ModelSpec {
            seed: 3,
            code_len: 16,
            resolution: 12,
        }
    }

    fn cohort(n: usize) -> Vec<PatientPair> {
        let m = build_synthetic_model(spec()).unwrap();
        generate_synthetic_cohort(&m, n, &DeformityConfig::default()).unwrap()
    }

    #[test]
    fn round_trip() {
        let mut pairs = cohort(3);
        pairs[1].provenance = Provenance::Synthetic;
        pairs[2].pre.fit = FitReport::from_residuals(vec![0.25; 68], Some(0.5), 3);
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_dataset(&pairs, dir.path(), spec(), 17).unwrap();
        let (loaded_manifest, loaded) = load_dataset(dir.path()).unwrap();
        assert_eq!(manifest, loaded_manifest);
        assert_eq!(loaded.len(), 3);
        for (a, b) in pairs.iter().zip(&loaded) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.provenance, b.provenance);
            assert_eq!(a.pre.mesh, b.pre.mesh);
            assert_eq!(a.post.mesh, b.post.mesh);
            assert_eq!(a.pre.landmarks, b.pre.landmarks);
            assert!((&a.pre.code - &b.pre.code).abs().max() < 1e-9);
            assert!((&a.post.code - &b.post.code).abs().max() < 1e-9);
        }
        assert_eq!(loaded[2].pre.fit, pairs[2].pre.fit);
    }

    #[test]
    fn empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&[], dir.path(), spec(), 0).unwrap();
        let (manifest, pairs) = load_dataset(dir.path()).unwrap();
        assert!(manifest.entries.is_empty());
        assert!(pairs.is_empty());
    }

    #[test]
    fn missing_file_is_named() {
        let pairs = cohort(2);
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&pairs, dir.path(), spec(), 0).unwrap();
        let gone = dir.path().join("p0001").join("post.obj");
        std::fs::remove_file(&gone).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::MissingFile(p)) => assert_eq!(p, gone),
            other => panic!("expected missing file, got {:?}", other.map(|_| ())),
        }
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(empty.path()), Err(Error::MissingFile(_))));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut pairs = cohort(2);
        pairs[1].id = pairs[0].id.clone();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            save_dataset(&pairs, dir.path(), spec(), 0),
            Err(Error::DuplicateId(_))
        ));
    }

    #[test]
    fn manifest_parse_errors() {
        let m = DatasetManifest {
            model: spec(),
            creation_seed: 1,
            entries: Vec::new(),
        };
        let text = m.format();
        assert_eq!(DatasetManifest::parse(&text, "m").unwrap(), m);
        assert!(DatasetManifest::parse(&text.replace("manifest 1", "manifest 2"), "m").is_err());
        assert!(DatasetManifest::parse(&text.replace("pairs 0", "pairs 1"), "m").is_err());
    }
}
