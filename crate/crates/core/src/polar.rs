//! Rotation extraction from cluster moment matrices.
//!
//! Shape matching needs the rotational part of the moment matrix
//! `A = sum_i (p_i - c)(q_i - c0)^T`. The primary path is a scaled Newton
//! iteration for the orthogonal polar factor; it converges quadratically for
//! well-conditioned input and stays cheap enough to run per cluster per
//! solver iteration. Inputs the iteration cannot handle (singular, negative
//! determinant, or slow convergence) fall back to an SVD with determinant
//! correction so the result is always a proper rotation.

use crate::Mat3;

/// Relative step tolerance for the Newton iteration.
const NEWTON_TOL: f64 = 1e-12;
/// Iteration cap before declaring slow convergence.
const NEWTON_MAX_ITER: usize = 64;
/// Relative singular-value threshold below which the matrix is treated as
/// rank-deficient.
const RANK_TOL: f64 = 1e-12;

/// Which route produced the extracted rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RotationPath {
    /// Scaled Newton polar iteration converged.
    Newton,
    /// SVD fallback (singular/reflective input or slow convergence).
    Svd,
    /// Rank < 3 moment matrix; identity is returned for this pass.
    Degenerate,
}

/// Extracted rotation plus the route that produced it.
#[derive(Debug, Clone, Copy)]
pub struct Extraction {
    pub rotation: Mat3,
    pub path: RotationPath,
}

impl Extraction {
    pub fn is_degenerate(&self) -> bool {
        self.path == RotationPath::Degenerate
    }
}

/// Extracts the proper rotation closest (in Frobenius norm) to `a`.
///
/// Rank-deficient input yields the identity, flagged as degenerate.
pub fn extract_rotation(a: &Mat3) -> Extraction {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(scale > 0.0) || !scale.is_finite() {
        return Extraction {
            rotation: Mat3::identity(),
            path: RotationPath::Degenerate,
        };
    }
    let normalized = a / scale;

    // Newton only handles invertible input with positive determinant; the
    // determinant check also screens out reflective best fits, which need
    // the singular-value flip done by the SVD route.
    let det = normalized.determinant();
    if det > RANK_TOL {
        if let Some(rotation) = newton_polar(&normalized) {
            return Extraction {
                rotation,
                path: RotationPath::Newton,
            };
        }
    }
    svd_rotation(&normalized)
}

/// Scaled Newton iteration `X <- (g X + g^-1 X^-T) / 2` for the orthogonal
/// polar factor, with Frobenius-norm scaling.
fn newton_polar(a: &Mat3) -> Option<Mat3> {
    let mut x = *a;
    for _ in 0..NEWTON_MAX_ITER {
        let inv = x.try_inverse()?;
        let inv_t = inv.transpose();
        let gamma = (inv_t.norm() / x.norm()).sqrt();
        if !gamma.is_finite() || gamma <= 0.0 {
            return None;
        }
        let next = (x * gamma + inv_t / gamma) * 0.5;
        let step = (next - x).norm();
        x = next;
        if step <= NEWTON_TOL * x.norm() {
            // Converged to the orthogonal factor; reject reflections.
            if x.determinant() < 0.0 {
                return None;
            }
            return Some(x);
        }
    }
    None
}

/// SVD route: `R = U diag(1, 1, det(U V^T)) V^T`. Returns identity for
/// rank < 3 input.
fn svd_rotation(a: &Mat3) -> Extraction {
    let svd = a.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Extraction {
            rotation: Mat3::identity(),
            path: RotationPath::Degenerate,
        };
    };
    let sigma = svd.singular_values;
    if sigma[2] <= RANK_TOL * sigma[0].max(1e-300) {
        return Extraction {
            rotation: Mat3::identity(),
            path: RotationPath::Degenerate,
        };
    }
    let flip = (u * v_t).determinant().signum();
    let correction = Mat3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, flip));
    Extraction {
        rotation: u * correction * v_t,
        path: RotationPath::Svd,
    }
}
