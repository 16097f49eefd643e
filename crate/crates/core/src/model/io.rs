//! Text serialization of a morphable model.
//!
//! ```text
//! MM1 <n> <K>
//! spec <seed> <resolution>
//! template            n lines: x y z
//! triangles <m>       m lines: a b c
//! basis               K lines: the 3n entries of column k
//! scales              one line: K floats
//! joint <x> <y> <z>
//! weights             one line: n floats
//! landmarks           one line: 68 vertex indices
//! mirror              one line: n vertex indices
//! face <count>        one line of indices (also chin, lower-face)
//! ```
//!
//! Floats are written in shortest round-trip form, so save/load is exact.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{ModelSpec, MorphableModel};
use crate::geometry::{RegionMask, Vec3, LANDMARK_COUNT};
use crate::{Error, Result};

fn join<T: std::fmt::Display>(items: impl IntoIterator<Item = T>) -> String {
    let mut s = String::new();
    for (i, x) in items.into_iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{x}");
    }
    s
}

pub fn format_model(model: &MorphableModel) -> String {
    let n = model.vertex_count();
    let k = model.code_len();
    let mut out = String::new();
    let _ = writeln!(out, "MM1 {n} {k}");
    let _ = writeln!(out, "spec {} {}", model.spec.seed, model.spec.resolution);
    out.push_str("template\n");
    for p in &model.template {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    let _ = writeln!(out, "triangles {}", model.triangles.len());
    for t in &model.triangles {
        let _ = writeln!(out, "{} {} {}", t[0], t[1], t[2]);
    }
    out.push_str("basis\n");
    for col in model.basis.column_iter() {
        out.push_str(&join(col.iter()));
        out.push('\n');
    }
    let _ = writeln!(out, "scales\n{}", join(model.scales.iter()));
    let j = model.jaw_joint;
    let _ = writeln!(out, "joint {} {} {}", j.x, j.y, j.z);
    let _ = writeln!(out, "weights\n{}", join(&model.skin_weights));
    let _ = writeln!(out, "landmarks\n{}", join(&model.landmark_indices));
    let _ = writeln!(out, "mirror\n{}", join(&model.mirror));
    for (name, mask) in [("face", &model.face), ("chin", &model.chin), ("lower-face", &model.lower_face)] {
        let _ = writeln!(out, "{name} {}\n{}", mask.len(), join(mask.indices()));
    }
    out
}

pub fn save_model(model: &MorphableModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MorphableModel> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model(&text, &path.display().to_string())
}

struct Lines<'a> {
    name: &'a str,
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.name.to_string(),
            line: self.line,
            message: message.into(),
        }
    }

    fn next(&mut self) -> Result<&'a str> {
        match self.inner.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => {
                self.line += 1;
                Err(self.err("unexpected end of file"))
            }
        }
    }

    /// Next line, which must start with `keyword`; returns the remaining
    /// fields.
    fn section(&mut self, keyword: &str) -> Result<Vec<&'a str>> {
        let line = self.next()?;
        let mut fields = line.split_whitespace();
        if fields.next() != Some(keyword) {
            return Err(self.err(format!("expected section {keyword:?}")));
        }
        Ok(fields.collect())
    }

    fn values<T: std::str::FromStr>(&mut self, expected: usize) -> Result<Vec<T>> {
        let line = self.next()?;
        let values: Vec<T> = line
            .split_whitespace()
            .map(|f| f.parse().map_err(|_| self.err(format!("invalid number {f:?}"))))
            .collect::<Result<_>>()?;
        if values.len() != expected {
            return Err(self.err(format!("expected {expected} values, found {}", values.len())));
        }
        Ok(values)
    }

    fn parse<T: std::str::FromStr>(&self, field: &str) -> Result<T> {
        field.parse().map_err(|_| self.err(format!("invalid number {field:?}")))
    }
}

pub fn parse_model(text: &str, source_name: &str) -> Result<MorphableModel> {
    let mut lines = Lines {
        name: source_name,
        inner: text.lines().enumerate(),
        line: 0,
    };
    let header = lines.section("MM1")?;
    if header.len() != 2 {
        return Err(lines.err("header must be `MM1 n K`"));
    }
    let n: usize = lines.parse(header[0])?;
    let k: usize = lines.parse(header[1])?;

    let spec_fields = lines.section("spec")?;
    if spec_fields.len() != 2 {
        return Err(lines.err("expected `spec <seed> <resolution>`"));
    }
    let spec = ModelSpec {
        seed: lines.parse(spec_fields[0])?,
        code_len: k,
        resolution: lines.parse(spec_fields[1])?,
    };

    lines.section("template")?;
    let mut template = Vec::with_capacity(n);
    for _ in 0..n {
        let v: Vec<f64> = lines.values(3)?;
        template.push(Vec3::new(v[0], v[1], v[2]));
    }

    let tri_fields = lines.section("triangles")?;
    let m: usize = lines.parse(tri_fields.first().copied().unwrap_or(""))?;
    let mut triangles = Vec::with_capacity(m);
    for _ in 0..m {
        let t: Vec<usize> = lines.values(3)?;
        if t.iter().any(|&i| i >= n) {
            return Err(lines.err("triangle index out of range"));
        }
        triangles.push([t[0], t[1], t[2]]);
    }

    lines.section("basis")?;
    let mut basis = DMatrix::zeros(3 * n, k);
    for c in 0..k {
        let col: Vec<f64> = lines.values(3 * n)?;
        basis.set_column(c, &DVector::from_vec(col));
    }
    lines.section("scales")?;
    let scales = DVector::from_vec(lines.values(k)?);

    let joint: Vec<f64> = lines
        .section("joint")?
        .iter()
        .map(|f| lines.parse(f))
        .collect::<Result<_>>()?;
    if joint.len() != 3 {
        return Err(lines.err("joint needs three coordinates"));
    }
    lines.section("weights")?;
    let skin_weights: Vec<f64> = lines.values(n)?;
    if skin_weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
        return Err(lines.err("skinning weight outside [0, 1]"));
    }
    lines.section("landmarks")?;
    let landmark_indices: Vec<usize> = lines.values(LANDMARK_COUNT)?;
    if landmark_indices.iter().any(|&i| i >= n) {
        return Err(lines.err("landmark index out of range"));
    }
    lines.section("mirror")?;
    let mirror: Vec<usize> = lines.values(n)?;
    if mirror.iter().enumerate().any(|(i, &j)| j >= n || mirror[j] != i) {
        return Err(lines.err("mirror map is not an involution"));
    }

    let mut masks = Vec::with_capacity(3);
    for name in ["face", "chin", "lower-face"] {
        let fields = lines.section(name)?;
        let count: usize = lines.parse(fields.first().copied().unwrap_or(""))?;
        let indices: Vec<usize> = lines.values(count)?;
        let line = lines.line;
        masks.push(RegionMask::for_vertex_count(indices, n).map_err(|e| Error::Parse {
            path: source_name.to_string(),
            line,
            message: e.to_string(),
        })?);
    }
    let lower_face = masks.pop().unwrap_or_default();
    let chin = masks.pop().unwrap_or_default();
    let face = masks.pop().unwrap_or_default();

    Ok(MorphableModel::assemble(
        spec,
        template,
        triangles,
        basis,
        scales,
        Vec3::new(joint[0], joint[1], joint[2]),
        skin_weights,
        landmark_indices,
        mirror,
        face,
        chin,
        lower_face,
    ))
}
