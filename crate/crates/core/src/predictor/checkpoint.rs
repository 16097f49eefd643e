//! Checkpoint text format: a header `MLP1 <K> <hidden>` followed by one
//! line per field in the order w1 (row-major), b1, bn_scale, bn_shift,
//! running_mean, running_var, w2 (row-major), b2. Floats use shortest
//! round-trip formatting.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::mlp::MlpParams;
use crate::{Error, Result};

fn line(out: &mut String, values: impl Iterator<Item = f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        let _ = write!(out, "{v}");
    }
    out.push('\n');
}

fn row_major(m: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |r| (0..m.ncols()).map(move |c| m[(r, c)]))
}

pub fn format_checkpoint(params: &MlpParams) -> String {
    let mut out = format!("MLP1 {} {}\n", params.code_len(), params.hidden());
    line(&mut out, row_major(&params.w1));
    for v in [&params.b1, &params.bn_scale, &params.bn_shift, &params.running_mean, &params.running_var] {
        line(&mut out, v.iter().copied());
    }
    line(&mut out, row_major(&params.w2));
    line(&mut out, params.b2.iter().copied());
    out
}

pub fn save_checkpoint(params: &MlpParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MlpParams> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text, &path.display().to_string())
}

pub fn parse_checkpoint(text: &str, source_name: &str) -> Result<MlpParams> {
    let err = |line: usize, message: String| Error::Parse {
        path: source_name.to_string(),
        line,
        message,
    };
    let lines: Vec<&str> = text.lines().collect();
    let header: Vec<&str> = lines.first().map(|l| l.split_whitespace().collect()).unwrap_or_default();
    if header.len() != 3 || header[0] != "MLP1" {
        return Err(err(1, "expected header `MLP1 <K> <hidden>`".into()));
    }
    let k: usize = header[1].parse().map_err(|_| err(1, "invalid code length".into()))?;
    let h: usize = header[2].parse().map_err(|_| err(1, "invalid hidden width".into()))?;
    let sizes = [h * k, h, h, h, h, h, k * h, k];
    if lines.len() < 1 + sizes.len() {
        return Err(err(lines.len() + 1, "unexpected end of file".into()));
    }
    let mut fields = Vec::with_capacity(sizes.len());
    for (i, &n) in sizes.iter().enumerate() {
        let values: Vec<f64> = lines[i + 1]
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| err(i + 2, format!("invalid number {t:?}"))))
            .collect::<Result<_>>()?;
        if values.len() != n {
            return Err(err(i + 2, format!("expected {n} values, found {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(err(i + 2, "non-finite parameter".into()));
        }
        fields.push(values);
    }
    if fields[5].iter().any(|&v| v <= 0.0) {
        return Err(err(7, "running variance must be positive".into()));
    }
    let vec = |i: usize| DVector::from_vec(fields[i].clone());
    Ok(MlpParams {
        w1: DMatrix::from_row_slice(h, k, &fields[0]),
        b1: vec(1),
        bn_scale: vec(2),
        bn_shift: vec(3),
        running_mean: vec(4),
        running_var: vec(5),
        w2: DMatrix::from_row_slice(k, h, &fields[6]),
        b2: vec(7),
    })
}
