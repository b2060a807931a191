//! Planar projective geometry: homographies and the exact 4-point solve.

use crate::error::{Error, Result};
use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

/// 3x3 planar homography over f64, acting on (x, y) pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography(pub Matrix3<f64>);

impl Homography {
    pub fn identity() -> Self {
        Homography(Matrix3::identity())
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Homography(Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0))
    }

    pub fn scale(s: f64) -> Self {
        Homography(Matrix3::new(s, 0.0, 0.0, 0.0, s, 0.0, 0.0, 0.0, 1.0))
    }

    /// Apply to a point. Returns None when the point maps to infinity.
    pub fn apply(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let v = self.0 * Vector3::new(x, y, 1.0);
        if v.z.abs() < 1e-12 || !v.z.is_finite() {
            return None;
        }
        Some((v.x / v.z, v.y / v.z))
    }

    /// Composition: (self ∘ other)(p) = self(other(p)).
    pub fn compose(&self, other: &Homography) -> Homography {
        Homography(self.0 * other.0)
    }

    pub fn inverse(&self) -> Result<Homography> {
        self.0
            .try_inverse()
            .map(Homography)
            .ok_or_else(|| Error::Numeric("singular homography".into()))
    }

    pub fn is_invertible(&self) -> bool {
        self.0.determinant().abs() > 1e-12
    }

    /// Exact homography mapping four source points onto four destination
    /// points (direct linear transform, unique when no three points are
    /// collinear).
    pub fn from_point_pairs(src: &[(f64, f64); 4], dst: &[(f64, f64); 4]) -> Result<Homography> {
        let mut a = SMatrix::<f64, 8, 8>::zeros();
        let mut b = SVector::<f64, 8>::zeros();
        for (i, (&(x, y), &(u, v))) in src.iter().zip(dst.iter()).enumerate() {
            let r = 2 * i;
            a[(r, 0)] = x;
            a[(r, 1)] = y;
            a[(r, 2)] = 1.0;
            a[(r, 6)] = -u * x;
            a[(r, 7)] = -u * y;
            b[r] = u;
            a[(r + 1, 3)] = x;
            a[(r + 1, 4)] = y;
            a[(r + 1, 5)] = 1.0;
            a[(r + 1, 6)] = -v * x;
            a[(r + 1, 7)] = -v * y;
            b[r + 1] = v;
        }
        let lu = a.lu();
        let h = lu
            .solve(&b)
            .ok_or_else(|| Error::Numeric("degenerate point configuration".into()))?;
        Ok(Homography(Matrix3::new(
            h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0,
        )))
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Homography {
        Homography(Matrix3::new(
            rows[0][0], rows[0][1], rows[0][2], rows[1][0], rows[1][1], rows[1][2], rows[2][0],
            rows[2][1], rows[2][2],
        ))
    }
}

/// True if the quadrilateral (in order) is convex and non-self-intersecting.
pub fn quad_is_convex(q: &[(f64, f64); 4]) -> bool {
    let mut sign = 0.0f64;
    for i in 0..4 {
        let a = q[i];
        let b = q[(i + 1) % 4];
        let c = q[(i + 2) % 4];
        let cross = (b.0 - a.0) * (c.1 - b.1) - (b.1 - a.1) * (c.0 - b.0);
        if cross.abs() < 1e-12 {
            return false;
        }
        if sign == 0.0 {
            sign = cross.signum();
        } else if cross.signum() != sign {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_point_solve_recovers_translation() {
        let src = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let dst = [(2.0, 3.0), (3.0, 3.0), (3.0, 4.0), (2.0, 4.0)];
        let h = Homography::from_point_pairs(&src, &dst).unwrap();
        let (x, y) = h.apply(0.5, 0.5).unwrap();
        assert!((x - 2.5).abs() < 1e-12 && (y - 3.5).abs() < 1e-12);
    }

    #[test]
    fn four_point_solve_exact_on_corners() {
        let src = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let dst = [(0.03, -0.02), (1.05, 0.04), (0.93, 1.08), (-0.04, 0.96)];
        let h = Homography::from_point_pairs(&src, &dst).unwrap();
        for (s, d) in src.iter().zip(dst.iter()) {
            let (x, y) = h.apply(s.0, s.1).unwrap();
            assert!((x - d.0).abs() < 1e-10 && (y - d.1).abs() < 1e-10);
        }
    }

    #[test]
    fn inverse_round_trips() {
        let src = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let dst = [(0.1, 0.0), (0.9, 0.1), (1.0, 0.9), (0.0, 1.0)];
        let h = Homography::from_point_pairs(&src, &dst).unwrap();
        let hinv = h.inverse().unwrap();
        let (x, y) = hinv.apply(h.apply(0.3, 0.7).unwrap().0, h.apply(0.3, 0.7).unwrap().1).unwrap();
        assert!((x - 0.3).abs() < 1e-10 && (y - 0.7).abs() < 1e-10);
    }

    #[test]
    fn convexity_detects_bowtie() {
        let square = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        assert!(quad_is_convex(&square));
        let bowtie = [(0.0, 0.0), (1.0, 1.0), (1.0, 0.0), (0.0, 1.0)];
        assert!(!quad_is_convex(&bowtie));
    }
}
