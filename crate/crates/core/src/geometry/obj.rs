//! ASCII Wavefront OBJ reading and writing.
//!
//! Only `v` and `f` records are interpreted. A `v` record may carry three
//! extra floats (RGB in [0,1]); texture/normal references on `f` records
//! are dropped and polygons are fan-triangulated. Everything else is
//! ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Mesh, Vec3};
use crate::{Error, Result};

pub fn load_obj(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, &path.display().to_string())
}

pub fn parse_obj(text: &str, source_name: &str) -> Result<Mesh> {
    let err = |line: usize, message: String| Error::Parse {
        path: source_name.to_string(),
        line,
        message,
    };

    let mut vertices = Vec::new();
    let mut colors: Vec<[f64; 3]> = Vec::new();
    let mut colored: Option<bool> = None;
    let mut faces: Vec<(usize, Vec<i64>)> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut fields = line.split_whitespace();
        match fields.next() {
            Some("v") => {
                let values: Vec<f64> = fields
                    .map(|f| f.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| err(lineno, format!("bad vertex coordinate: {e}")))?;
                let has_color = match values.len() {
                    3 => false,
                    6 => true,
                    n => return Err(err(lineno, format!("vertex record has {n} values"))),
                };
                if *colored.get_or_insert(has_color) != has_color {
                    return Err(err(lineno, "mixed colored and uncolored vertices".into()));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(err(lineno, "non-finite vertex value".into()));
                }
                vertices.push(Vec3::new(values[0], values[1], values[2]));
                if has_color {
                    colors.push([values[3], values[4], values[5]]);
                }
            }
            Some("f") => {
                let refs: Vec<i64> = fields
                    .map(|f| {
                        f.split('/')
                            .next()
                            .unwrap_or("")
                            .parse::<i64>()
                            .map_err(|e| err(lineno, format!("bad face index {f:?}: {e}")))
                    })
                    .collect::<Result<_>>()?;
                if refs.len() < 3 {
                    return Err(err(lineno, format!("face has {} vertices", refs.len())));
                }
                faces.push((lineno, refs));
            }
            _ => {}
        }
    }

    if vertices.is_empty() {
        return Err(Error::EmptyMesh);
    }

    let n = vertices.len() as i64;
    let mut triangles = Vec::with_capacity(faces.len());
    for (lineno, refs) in faces {
        let resolved: Vec<usize> = refs
            .iter()
            .map(|&r| {
                let idx = if r > 0 { r - 1 } else { n + r };
                if r == 0 || idx < 0 || idx >= n {
                    Err(err(lineno, format!("face index {r} out of range")))
                } else {
                    Ok(idx as usize)
                }
            })
            .collect::<Result<_>>()?;
        for k in 1..resolved.len() - 1 {
            let tri = [resolved[0], resolved[k], resolved[k + 1]];
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(err(lineno, "degenerate face repeats a vertex".into()));
            }
            triangles.push(tri);
        }
    }

    let mesh = Mesh::new(vertices, triangles)?;
    if colored == Some(true) {
        mesh.with_colors(colors)
    } else {
        Ok(mesh)
    }
}

/// Serializes with shortest round-trip float formatting, so a
/// save/load/save cycle is byte-identical.
pub fn format_obj(mesh: &Mesh) -> String {
    let mut out = String::with_capacity(mesh.vertices.len() * 48 + mesh.triangles.len() * 24);
    for (i, v) in mesh.vertices.iter().enumerate() {
        let _ = write!(out, "v {} {} {}", v.x, v.y, v.z);
        if let Some(colors) = &mesh.colors {
            let c = colors[i];
            let _ = write!(out, " {} {} {}", c[0], c[1], c[2]);
        }
        out.push('\n');
    }
    for t in &mesh.triangles {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    out
}

pub fn save_obj(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_obj(mesh)).map_err(|e| Error::io(path, e))
}
