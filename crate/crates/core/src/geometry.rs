//! Small 2D helpers shared by every stage: angle wrapping, rotations and
//! covariance hygiene.

use std::f64::consts::PI;

use nalgebra::{Matrix2, SymmetricEigen, Vector2};

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

/// Symmetry tolerance for every covariance handed between stages.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Smallest eigenvalue accepted as positive semi-definite.
pub const PSD_TOL: f64 = -1e-12;

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(angle: f64) -> f64 {
    if !angle.is_finite() {
        return angle;
    }
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Active rotation by `angle` (counter-clockwise).
pub fn rotation(angle: f64) -> Mat2 {
    let (s, c) = angle.sin_cos();
    Mat2::new(c, -s, s, c)
}

pub fn symmetrize(m: &Mat2) -> Mat2 {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &Mat2, tol: f64) -> bool {
    (m[(0, 1)] - m[(1, 0)]).abs() <= tol
}

pub fn min_eigenvalue(m: &Mat2) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

/// Symmetric within [`SYMMETRY_TOL`] and PSD within [`PSD_TOL`].
pub fn is_valid_covariance(m: &Mat2) -> bool {
    m.iter().all(|v| v.is_finite()) && is_symmetric(m, SYMMETRY_TOL) && min_eigenvalue(m) >= PSD_TOL
}
