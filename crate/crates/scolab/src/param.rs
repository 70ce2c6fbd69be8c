//! Parameter vectors and the unit-ball feasible set.
//!
//! The optimization variable is `w = (w^c, w^m)` with a code block
//! `w^c ∈ R^{2k}` and a message block `w^m ∈ R^k`; the feasible set is the
//! Euclidean unit ball of the concatenated 3k-vector. All norms here are
//! plain `l2` with naive f64 summation — the certificates downstream are
//! calibrated against exactly this arithmetic, so no compensated summation.

use serde::{Deserialize, Serialize};

/// Feasibility slack: a vector counts as inside the ball when its norm is
/// at most `1 + FEAS_TOL`. Covers the one-ulp overshoot of an exact
/// projection computed in f64.
pub const FEAS_TOL: f64 = 1e-12;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ParamError {
    #[error("non-finite entry at position {0}")]
    NonFinite(usize),
    #[error("code block has length {code}, message block {message}: code block must be twice the message block")]
    BlockShape { code: usize, message: usize },
}

/// A point of the parameter space, split into its two blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    /// Code block, length `2k`.
    pub code_block: Vec<f64>,
    /// Message block, length `k`.
    pub message_block: Vec<f64>,
}

impl ParamVector {
    /// Bundle two blocks; the code block must be exactly twice as long.
    pub fn new(code_block: Vec<f64>, message_block: Vec<f64>) -> Result<Self, ParamError> {
        if code_block.len() != 2 * message_block.len() {
            return Err(ParamError::BlockShape {
                code: code_block.len(),
                message: message_block.len(),
            });
        }
        Ok(Self { code_block, message_block })
    }

    /// The origin of `R^{3k}`.
    pub fn zeros(k: usize) -> Self {
        Self { code_block: vec![0.0; 2 * k], message_block: vec![0.0; k] }
    }

    /// Message-block dimension `k`.
    pub fn k(&self) -> usize {
        self.message_block.len()
    }

    /// Total dimension `3k`.
    pub fn dim(&self) -> usize {
        self.code_block.len() + self.message_block.len()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }

    /// All entries, code block first.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.code_block.iter().chain(self.message_block.iter()).copied()
    }

    pub fn norm_sq(&self) -> f64 {
        self.iter().map(|x| x * x).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.iter().zip(other.iter()).map(|(a, b)| a * b).sum()
    }

    /// `self += factor * other`, blockwise.
    pub fn add_scaled(&mut self, other: &Self, factor: f64) {
        for (a, b) in self.code_block.iter_mut().zip(&other.code_block) {
            *a += factor * b;
        }
        for (a, b) in self.message_block.iter_mut().zip(&other.message_block) {
            *a += factor * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for x in self.code_block.iter_mut().chain(self.message_block.iter_mut()) {
            *x *= factor;
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            code_block: self
                .code_block
                .iter()
                .zip(&other.code_block)
                .map(|(a, b)| a - b)
                .collect(),
            message_block: self
                .message_block
                .iter()
                .zip(&other.message_block)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    /// `max_j |self_j - other_j|` over all 3k coordinates.
    pub fn linf_dist(&self, other: &Self) -> f64 {
        self.iter()
            .zip(other.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Inside the unit ball up to [`FEAS_TOL`]?
    pub fn is_feasible(&self) -> bool {
        self.norm() <= 1.0 + FEAS_TOL
    }

    /// `1 - ||w||`; positive strictly inside the ball.
    pub fn feasibility_margin(&self) -> f64 {
        1.0 - self.norm()
    }
}

/// Euclidean projection onto the unit ball: identity for `||w|| <= 1`,
/// otherwise `w / ||w||`. Rejects non-finite input — a non-finite iterate
/// means an upstream bug, and silently projecting it would mask that.
pub fn project_unit_ball(mut w: ParamVector) -> Result<ParamVector, ParamError> {
    if let Some(pos) = w.iter().position(|x| !x.is_finite()) {
        return Err(ParamError::NonFinite(pos));
    }
    let norm = w.norm();
    if norm > 1.0 {
        w.scale(1.0 / norm);
    }
    Ok(w)
}

/// `x / ||x||`, mapping the zero vector to itself: the result's norm is
/// exactly 0 or 1 (up to one rounding).
pub fn unit_normalize(x: &[f64]) -> Result<Vec<f64>, ParamError> {
    if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
        return Err(ParamError::NonFinite(pos));
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(x.to_vec());
    }
    Ok(x.iter().map(|v| v / norm).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_norm(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn block_shape_is_enforced() {
        assert_eq!(
            ParamVector::new(vec![0.0; 3], vec![0.0; 2]).unwrap_err(),
            ParamError::BlockShape { code: 3, message: 2 }
        );
        assert!(ParamVector::new(vec![0.0; 4], vec![0.0; 2]).is_ok());
    }

    #[test]
    fn projection_fixes_interior_points() {
        let w = ParamVector::new(vec![0.1, -0.2, 0.0, 0.3], vec![0.05, -0.1]).unwrap();
        let p = project_unit_ball(w.clone()).unwrap();
        assert_eq!(p, w, "points inside the ball must be untouched");
    }

    #[test]
    fn projection_rescales_exterior_points() {
        let w = ParamVector::new(vec![3.0, 0.0, 0.0, 0.0], vec![0.0, 4.0]).unwrap();
        let p = project_unit_ball(w).unwrap();
        assert!((p.norm() - 1.0).abs() <= FEAS_TOL);
        // Direction is preserved: 3-4-5 triangle scaled to the sphere.
        assert!((p.code_block[0] - 0.6).abs() <= 1e-15);
        assert!((p.message_block[1] - 0.8).abs() <= 1e-15);
    }

    #[test]
    fn projection_rejects_non_finite() {
        let w = ParamVector::new(vec![f64::NAN, 0.0], vec![0.0]).unwrap();
        assert_eq!(project_unit_ball(w).unwrap_err(), ParamError::NonFinite(0));
        let w = ParamVector::new(vec![0.0, 0.0], vec![f64::INFINITY]).unwrap();
        assert_eq!(project_unit_ball(w).unwrap_err(), ParamError::NonFinite(2));
    }

    #[test]
    fn unit_normalize_zero_maps_to_zero() {
        assert_eq!(unit_normalize(&[0.0, 0.0, 0.0]).unwrap(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn unit_normalize_hits_the_sphere() {
        let v = unit_normalize(&[3.0, -4.0]).unwrap();
        assert!((vec_norm(&v) - 1.0).abs() <= FEAS_TOL);
        assert_eq!(v, vec![0.6, -0.8]);
    }

    #[test]
    fn linf_distance_and_axpy() {
        let mut a = ParamVector::new(vec![1.0, 0.0], vec![2.0]).unwrap();
        let b = ParamVector::new(vec![0.5, 1.0], vec![-1.0]).unwrap();
        a.add_scaled(&b, 2.0);
        assert_eq!(a.code_block, vec![2.0, 2.0]);
        assert_eq!(a.message_block, vec![0.0]);
        assert_eq!(a.linf_dist(&b), 1.5);
    }
}
