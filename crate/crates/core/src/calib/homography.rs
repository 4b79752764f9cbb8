use nalgebra::{DMatrix, Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest `|det|` accepted for an invertible map.
pub const DET_EPS: f64 = 1e-9;

/// Planar projective map on pixel coordinates, normalized so `m[2][2] = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Self {
            m: Matrix3::identity(),
        }
    }

    /// Validates invertibility and normalizes the scale.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let det = m.determinant();
        if !det.is_finite() || det.abs() <= DET_EPS {
            return Err(Error::SingularMatrix { det });
        }
        let s = m[(2, 2)];
        if s.abs() < 1e-12 {
            return Err(Error::DegenerateGeometry(
                "homography maps the origin to infinity".into(),
            ));
        }
        let m = m / s;
        let det = m.determinant();
        if det.abs() <= DET_EPS {
            return Err(Error::SingularMatrix { det });
        }
        Ok(Self { m })
    }

    pub fn from_row_major(v: [f64; 9]) -> Result<Self> {
        Self::new(Matrix3::from_row_slice(&v))
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            m: Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0),
        }
    }

    pub fn scaling(s: f64) -> Result<Self> {
        Self::new(Matrix3::new(s, 0.0, 0.0, 0.0, s, 0.0, 0.0, 0.0, 1.0))
    }

    /// Rotation by `angle` radians about `(cx, cy)`.
    pub fn rotation_about(angle: f64, cx: f64, cy: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let m = Matrix3::new(
            c,
            -s,
            cx - c * cx + s * cy,
            s,
            c,
            cy - s * cx - c * cy,
            0.0,
            0.0,
            1.0,
        );
        Self { m }
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 3 + c] = self.m[(r, c)];
            }
        }
        out
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.m.determinant();
        if det.abs() <= DET_EPS {
            return Err(Error::SingularMatrix { det });
        }
        let inv = self
            .m
            .try_inverse()
            .ok_or(Error::SingularMatrix { det })?;
        Self::new(inv)
    }

    /// `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &Homography) -> Result<Self> {
        Self::new(self.m * other.m)
    }

    /// Maps a pixel coordinate; `None` when it lands at infinity.
    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let p = self.m * Vector3::new(x, y, 1.0);
        if p.z.abs() < 1e-12 {
            None
        } else {
            Some((p.x / p.z, p.y / p.z))
        }
    }

    /// Largest per-entry absolute difference.
    pub fn max_abs_diff(&self, other: &Homography) -> f64 {
        (self.m - other.m).abs().max()
    }

    /// Exact `[1,0,tx; 0,1,ty; 0,0,1]` with integer `tx, ty`.
    pub fn as_integer_translation(&self) -> Option<(i64, i64)> {
        let m = &self.m;
        let linear_is_identity = m[(0, 0)] == 1.0
            && m[(0, 1)] == 0.0
            && m[(1, 0)] == 0.0
            && m[(1, 1)] == 1.0
            && m[(2, 0)] == 0.0
            && m[(2, 1)] == 0.0;
        let (tx, ty) = (m[(0, 2)], m[(1, 2)]);
        (linear_is_identity && tx.fract() == 0.0 && ty.fract() == 0.0)
            .then(|| (tx as i64, ty as i64))
    }

    pub fn is_identity(&self) -> bool {
        self.m == Matrix3::identity()
    }

    /// Maximum displacement between `self` and `other` over the four corners
    /// of a `width × height` image.
    pub fn corner_transfer_error(&self, other: &Homography, width: f64, height: f64) -> f64 {
        let corners = [(0.0, 0.0), (width - 1.0, 0.0), (0.0, height - 1.0), (width - 1.0, height - 1.0)];
        corners
            .iter()
            .map(|&(x, y)| match (self.apply(x, y), other.apply(x, y)) {
                (Some(a), Some(b)) => ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt(),
                _ => f64::INFINITY,
            })
            .fold(0.0, f64::max)
    }

    /// Direct linear transform with Hartley normalization. Needs ≥ 4
    /// correspondences `src[i] -> dst[i]`.
    pub fn fit(src: &[(f64, f64)], dst: &[(f64, f64)]) -> Result<Self> {
        if src.len() != dst.len() || src.len() < 4 {
            return Err(Error::DegenerateGeometry(format!(
                "need at least 4 correspondences, got {}",
                src.len().min(dst.len())
            )));
        }
        let (ts, ps) = normalizer(src)?;
        let (td, pd) = normalizer(dst)?;
        let n = src.len();
        let mut ata = nalgebra::Matrix::<f64, nalgebra::U9, nalgebra::U9, _>::zeros();
        for i in 0..n {
            let (x, y) = ps[i];
            let (u, v) = pd[i];
            let r1 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
            let r2 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
            for a in 0..9 {
                for b in 0..9 {
                    ata[(a, b)] += r1[a] * r1[b] + r2[a] * r2[b];
                }
            }
        }
        let eig = SymmetricEigen::new(ata);
        let mut order: Vec<usize> = (0..9).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let second = eig.eigenvalues[order[1]];
        let scale = eig.eigenvalues[order[8]].abs().max(1e-300);
        if second.abs() / scale < 1e-14 {
            return Err(Error::DegenerateGeometry(
                "correspondences do not determine a unique homography".into(),
            ));
        }
        let h = eig.eigenvectors.column(order[0]);
        let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
        let td_inv = td
            .try_inverse()
            .ok_or(Error::SingularMatrix { det: 0.0 })?;
        Self::new(td_inv * hn * ts)
    }
}

impl Default for Homography {
    fn default() -> Self {
        Self::identity()
    }
}

fn normalizer(pts: &[(f64, f64)]) -> Result<(Matrix3<f64>, Vec<(f64, f64)>)> {
    let n = pts.len() as f64;
    let (cx, cy) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x / n, b + y / n));
    let mean_dist = pts
        .iter()
        .map(|&(x, y)| ((x - cx).powi(2) + (y - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if mean_dist < 1e-9 {
        return Err(Error::DegenerateGeometry("coincident points".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    let t = Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0);
    let out = pts.iter().map(|&(x, y)| (s * (x - cx), s * (y - cy))).collect();
    Ok((t, out))
}

/// Smallest singular value ratio of a point set's second-moment matrix; near
/// zero when the points are (close to) collinear.
pub fn spread_ratio(pts: &[(f64, f64)]) -> f64 {
    if pts.len() < 3 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let (cx, cy) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x / n, b + y / n));
    let m = DMatrix::from_fn(2, 2, |r, c| {
        pts.iter()
            .map(|&(x, y)| {
                let d = [x - cx, y - cy];
                d[r] * d[c]
            })
            .sum::<f64>()
            / n
    });
    let e = m.symmetric_eigenvalues();
    let (lo, hi) = (e.min(), e.max());
    if hi <= 0.0 {
        0.0
    } else {
        (lo / hi).max(0.0).sqrt()
    }
}

/// Serialized form: nine row-major floats.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RowMajor(pub [f64; 9]);

impl TryFrom<RowMajor> for Homography {
    type Error = Error;
    fn try_from(v: RowMajor) -> Result<Self> {
        Homography::from_row_major(v.0)
    }
}

impl From<Homography> for RowMajor {
    fn from(h: Homography) -> Self {
        RowMajor(h.to_row_major())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn new_normalizes_and_rejects_singular() {
        let h = Homography::new(Matrix3::identity() * 4.0).unwrap();
        assert_eq!(h.matrix()[(2, 2)], 1.0);
        assert!(h.is_identity());
        let singular = Matrix3::new(1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            Homography::new(singular),
            Err(Error::SingularMatrix { .. })
        ));
    }

    #[test]
    fn fit_recovers_exact_map() {
        let truth = Homography::from_row_major([1.02, 0.03, 4.0, -0.01, 0.98, -2.0, 1e-4, -2e-4, 1.0]).unwrap();
        let src: Vec<(f64, f64)> = (0..20)
            .map(|i| ((i * 37 % 101) as f64, (i * 53 % 89) as f64))
            .collect();
        let dst: Vec<(f64, f64)> = src.iter().map(|&(x, y)| truth.apply(x, y).unwrap()).collect();
        let fit = Homography::fit(&src, &dst).unwrap();
        assert!(fit.max_abs_diff(&truth) < 1e-9);
    }

    #[test]
    fn fit_rejects_collinear() {
        let src: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, 2.0 * i as f64)).collect();
        assert!(Homography::fit(&src, &src).is_err());
    }

    #[test]
    fn rotation_about_center_fixes_center() {
        let h = Homography::rotation_about(0.3, 10.0, 20.0);
        let (x, y) = h.apply(10.0, 20.0).unwrap();
        assert_relative_eq!(x, 10.0, epsilon = 1e-12);
        assert_relative_eq!(y, 20.0, epsilon = 1e-12);
    }

    #[test]
    fn integer_translation_detection() {
        assert_eq!(Homography::translation(3.0, -2.0).as_integer_translation(), Some((3, -2)));
        assert_eq!(Homography::translation(3.5, 0.0).as_integer_translation(), None);
    }
}
