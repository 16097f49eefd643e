//! 68-point facial landmarks.
//!
//! Indices follow the common 68-point layout: 0-16 jaw contour, 17-26
//! eyebrows, 27-35 nose, 36-47 eyes, 48-67 lips. In model space the first
//! half of each bilateral group lies at negative x.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::Vec3;
use crate::{Error, Result};

pub const LANDMARK_COUNT: usize = 68;

/// Fixed indices of the named clinical landmarks.
pub mod index {
    pub const POGONION: usize = 8;
    pub const RIGHT_BROW_MID: usize = 19;
    pub const LEFT_BROW_MID: usize = 24;
    pub const SUBNASALE: usize = 33;
    pub const RIGHT_EYE_INNER: usize = 39;
    pub const LEFT_EYE_INNER: usize = 42;
    pub const UPPER_LIP_MID: usize = 51;
    pub const LOWER_LIP_MID: usize = 57;
}

/// Left/right counterpart of each landmark index (midline points map to
/// themselves).
pub fn mirror_landmark(i: usize) -> usize {
    match i {
        0..=16 => 16 - i,
        17..=26 => 43 - i,
        27..=30 => i,
        31..=35 => 66 - i,
        36..=39 => 81 - i,
        40 => 47,
        41 => 46,
        42..=45 => 81 - i,
        46 => 41,
        47 => 40,
        48..=54 => 102 - i,
        55..=59 => 114 - i,
        60..=64 => 124 - i,
        65..=67 => 132 - i,
        _ => panic!("landmark index {i} out of range"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: Vec<Vec3>,
}

impl LandmarkSet {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.len() != LANDMARK_COUNT {
            return Err(Error::LengthMismatch {
                expected: LANDMARK_COUNT,
                actual: points.len(),
            });
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument(format!("landmark {i} is not finite")));
        }
        Ok(LandmarkSet { points })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn get(&self, i: usize) -> Vec3 {
        self.points[i]
    }

    pub fn subnasale(&self) -> Vec3 {
        self.points[index::SUBNASALE]
    }

    pub fn pogonion(&self) -> Vec3 {
        self.points[index::POGONION]
    }

    pub fn upper_lip_mid(&self) -> Vec3 {
        self.points[index::UPPER_LIP_MID]
    }

    pub fn lower_lip_mid(&self) -> Vec3 {
        self.points[index::LOWER_LIP_MID]
    }

    pub fn left_eye_inner(&self) -> Vec3 {
        self.points[index::LEFT_EYE_INNER]
    }

    pub fn right_eye_inner(&self) -> Vec3 {
        self.points[index::RIGHT_EYE_INNER]
    }

    pub fn left_brow_mid(&self) -> Vec3 {
        self.points[index::LEFT_BROW_MID]
    }

    pub fn right_brow_mid(&self) -> Vec3 {
        self.points[index::RIGHT_BROW_MID]
    }

    pub fn map(&self, f: impl Fn(&Vec3) -> Vec3) -> LandmarkSet {
        LandmarkSet {
            points: self.points.iter().map(f).collect(),
        }
    }
}

pub fn parse_landmarks(text: &str, source_name: &str) -> Result<LandmarkSet> {
    let mut points = Vec::with_capacity(LANDMARK_COUNT);
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                path: source_name.into(),
                line: lineno + 1,
                message: format!("bad landmark coordinate: {e}"),
            })?;
        if values.len() != 3 {
            return Err(Error::Parse {
                path: source_name.into(),
                line: lineno + 1,
                message: format!("expected 3 values, found {}", values.len()),
            });
        }
        points.push(Vec3::new(values[0], values[1], values[2]));
    }
    LandmarkSet::new(points)
}

pub fn load_landmarks(path: impl AsRef<Path>) -> Result<LandmarkSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_landmarks(&text, &path.display().to_string())
}

pub fn format_landmarks(landmarks: &LandmarkSet) -> String {
    let mut out = String::new();
    for p in landmarks.points() {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    out
}

pub fn save_landmarks(landmarks: &LandmarkSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_landmarks(landmarks)).map_err(|e| Error::io(path, e))
}
