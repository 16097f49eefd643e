use super::{LandmarkSet, Vec3};
use crate::{Error, Result};

/// The plane `{x : normal · x = offset}` with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    normal: Vec3,
    offset: f64,
}

impl Plane {
    /// Normalizes `normal`; fails on a zero or non-finite normal.
    pub fn new(normal: Vec3, offset: f64) -> Result<Self> {
        let len = normal.norm();
        if !(len.is_finite() && len > 0.0) || !offset.is_finite() {
            return Err(Error::InvalidArgument("plane normal must be finite and nonzero".into()));
        }
        Ok(Plane {
            normal: normal / len,
            offset,
        })
    }

    pub fn through_point(normal: Vec3, point: Vec3) -> Result<Self> {
        let len = normal.norm();
        if !(len.is_finite() && len > 0.0) {
            return Err(Error::InvalidArgument("plane normal must be finite and nonzero".into()));
        }
        let n = normal / len;
        Ok(Plane {
            normal: n,
            offset: n.dot(&point),
        })
    }

    pub fn normal(&self) -> Vec3 {
        self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

pub fn point_plane_distance(p: &Vec3, plane: &Plane) -> f64 {
    plane.signed_distance(p).abs()
}

/// Distance from `p` to the infinite line through `a` and `b`.
pub fn point_line_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> Result<f64> {
    let dir = b - a;
    let len = dir.norm();
    if len <= 1e-9 {
        return Err(Error::DegenerateLine);
    }
    Ok((p - a).cross(&dir).norm() / len)
}

/// Mid-sagittal plane through the eyebrow midpoint and the inner-eye-corner
/// midpoint.
///
/// Two points leave a one-parameter family of planes; the normal chosen is
/// the world x-axis with its component along the joining line removed,
/// which is the member of the family closest to the x-axis.
pub fn fit_midsagittal_plane(landmarks: &LandmarkSet) -> Result<Plane> {
    let brow = 0.5 * (landmarks.left_brow_mid() + landmarks.right_brow_mid());
    let eyes = 0.5 * (landmarks.left_eye_inner() + landmarks.right_eye_inner());
    plane_through_midpoints(&brow, &eyes)
}

pub(crate) fn plane_through_midpoints(m1: &Vec3, m2: &Vec3) -> Result<Plane> {
    let x_axis = Vec3::x();
    let line = m1 - m2;
    let len = line.norm();
    if len <= 1e-9 {
        return Plane::through_point(x_axis, 0.5 * (m1 + m2));
    }
    let u = line / len;
    let projected = x_axis - u * u.dot(&x_axis);
    let plen = projected.norm();
    if plen <= 1e-9 {
        return Err(Error::DegenerateConfiguration(
            "midpoint line is parallel to the x-axis".into(),
        ));
    }
    let mut normal = projected / plen;
    if normal.x < 0.0 {
        normal = -normal;
    }
    // Average both offsets so neither midpoint is favoured by rounding.
    let offset = 0.5 * (normal.dot(m1) + normal.dot(m2));
    Ok(Plane { normal, offset })
}

/// Pulls gradients with respect to the normal and offset of
/// [`fit_midsagittal_plane`] back onto its four input landmarks, returned
/// as (right brow, left brow, right inner eye, left inner eye).
pub fn midsagittal_plane_vjp(landmarks: &LandmarkSet, grad_normal: &Vec3, grad_offset: f64) -> Result<[Vec3; 4]> {
    let m1 = 0.5 * (landmarks.left_brow_mid() + landmarks.right_brow_mid());
    let m2 = 0.5 * (landmarks.left_eye_inner() + landmarks.right_eye_inner());
    let plane = plane_through_midpoints(&m1, &m2)?;
    let n = plane.normal;
    // offset = n · (m1 + m2) / 2
    let g_n = grad_normal + grad_offset * 0.5 * (m1 + m2);
    let g_half = 0.5 * grad_offset * n;
    let line = m1 - m2;
    let len = line.norm();
    let mut g_line = Vec3::zeros();
    if len > 1e-9 {
        let x_axis = Vec3::x();
        let u = line / len;
        let projected = x_axis - u * u.dot(&x_axis);
        let sign = if projected.x < 0.0 { -1.0 } else { 1.0 };
        let g_p = (sign / projected.norm()) * (g_n - n * n.dot(&g_n));
        let g_u = -u.dot(&x_axis) * g_p - u.dot(&g_p) * x_axis;
        g_line = (g_u - u * u.dot(&g_u)) / len;
    }
    // Each midpoint averages two landmarks.
    let g_brow = 0.5 * (g_half + g_line);
    let g_eye = 0.5 * (g_half - g_line);
    Ok([g_brow, g_brow, g_eye, g_eye])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_distance_basics() {
        let plane = Plane::new(Vec3::x(), 0.0).unwrap();
        assert_eq!(point_plane_distance(&Vec3::new(3.0, 7.0, -2.0), &plane), 3.0);
        assert_eq!(point_plane_distance(&Vec3::new(0.0, 7.0, -2.0), &plane), 0.0);
    }

    #[test]
    fn line_distance_basics() {
        let a = Vec3::zeros();
        let b = Vec3::new(0.0, 10.0, 0.0);
        assert_eq!(point_line_distance(&Vec3::new(4.0, 5.0, 0.0), &a, &b).unwrap(), 4.0);
        assert_eq!(point_line_distance(&Vec3::new(0.0, -3.0, 0.0), &a, &b).unwrap(), 0.0);
        assert!(matches!(point_line_distance(&a, &a, &a), Err(Error::DegenerateLine)));
    }

    #[test]
    fn symmetric_midpoints_give_x_plane() {
        let p = plane_through_midpoints(&Vec3::new(0.0, 10.0, 0.0), &Vec3::new(0.0, 0.0, 5.0)).unwrap();
        assert_eq!(p.normal(), Vec3::x());
        assert_eq!(p.offset(), 0.0);
    }

    #[test]
    fn tilted_midpoints_contain_both() {
        let m1 = Vec3::new(1.0, 10.0, 0.0);
        let m2 = Vec3::new(-1.0, 0.0, 0.0);
        let p = plane_through_midpoints(&m1, &m2).unwrap();
        // Independent construction: Gram-Schmidt of x against the line.
        let u = (m1 - m2).normalize();
        let expect = (Vec3::x() - u * u.x).normalize();
        assert!((p.normal() - expect).norm() < 1e-12);
        assert!((p.normal().dot(&m1) - p.offset()).abs() < 1e-9);
        assert!((p.normal().dot(&m2) - p.offset()).abs() < 1e-9);
        assert!(p.normal().x > 0.0);
    }

    #[test]
    fn coincident_midpoints_fall_back_to_x() {
        let m = Vec3::new(2.0, 3.0, 4.0);
        let p = plane_through_midpoints(&m, &m).unwrap();
        assert_eq!(p.normal(), Vec3::x());
        assert_eq!(p.offset(), 2.0);
    }

    #[test]
    fn line_along_x_is_degenerate() {
        let r = plane_through_midpoints(&Vec3::new(5.0, 0.0, 0.0), &Vec3::new(-5.0, 0.0, 0.0));
        assert!(matches!(r, Err(Error::DegenerateConfiguration(_))));
    }
}
