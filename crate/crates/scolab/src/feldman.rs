//! The floored correlation-maximum loss on the code block.
//!
//! For a code `G` with relative distance `rho` and a floor level
//! `zeta (1 - rho/2)`, the per-index loss on the code block is
//!
//! ```text
//! h(wc, i) = max{ zeta (1 - rho/2),  max_{x in W_i} <wc, x / sqrt(2k)> }
//! ```
//!
//! where `W_i` is the half-code of codewords whose message has `+1` at
//! index `i` (bit `i` clear in packed form; `|W_i| = 2^{k-1}`). Each
//! `h(., i)` is a maximum of affine functions, hence convex, and every
//! normalized codeword has unit norm, so `h` is 1-Lipschitz.
//!
//! The floor is chosen strictly between the self-correlation `zeta` of a
//! scaled codeword and the largest cross-correlation `zeta (1 - 2 rho)`
//! allowed by the code distance. That wedge is what the hard instance
//! exploits: a codeword the sample points at clears the floor, every other
//! codeword stays strictly below it, and at scales up to `zeta` the floor
//! branch is active — with subgradient zero — whenever index `i` was not
//! selected. `h_certified_eval` turns exactly that argument into an
//! interval certificate that needs no enumeration.

use serde::Serialize;

use crate::code::{CodeHandle, MaskedSums};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FeldmanError {
    #[error("zeta = {0} outside (0, 1]")]
    BadZeta(f64),
    #[error("index {i} out of range for k = {k}")]
    IndexOutOfRange { i: usize, k: usize },
    #[error("code-block vector has {got} entries, expected {want}")]
    WrongBlockLength { got: usize, want: usize },
    #[error("certified evaluation needs a nonnegative finite scale, got {0}")]
    BadScale(f64),
}

/// The loss family `h(., i)` for one code and floor level.
#[derive(Debug, Clone)]
pub struct FeldmanSpec {
    code: CodeHandle,
    zeta: f64,
}

/// Outcome of evaluating `h(wc, i)` exhaustively.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HPoint {
    /// `h(wc, i)` itself.
    pub value: f64,
    /// Largest correlation over `W_i`, before flooring.
    pub best_corr: f64,
    /// Message bits of the lowest-index codeword attaining `best_corr`.
    pub argmax: u64,
    /// True when the floor branch decides the value (ties included), so
    /// the chosen subgradient is zero.
    pub floored: bool,
}

impl FeldmanSpec {
    pub fn new(code: CodeHandle, zeta: f64) -> Result<Self, FeldmanError> {
        if !(zeta > 0.0 && zeta <= 1.0) {
            return Err(FeldmanError::BadZeta(zeta));
        }
        Ok(Self { code, zeta })
    }

    pub fn code(&self) -> &CodeHandle {
        &self.code
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    /// The floor `zeta (1 - rho/2)`; also the loss of the all-zero point,
    /// hence the population risk of the origin.
    pub fn floor(&self) -> f64 {
        self.zeta * (1.0 - self.code.rho() / 2.0)
    }

    fn check_index(&self, i: usize) -> Result<(), FeldmanError> {
        if i >= self.code.k() {
            return Err(FeldmanError::IndexOutOfRange { i, k: self.code.k() });
        }
        Ok(())
    }

    /// Best correlation over the half-code `W_i`, with the lowest-index
    /// maximizer. One pass over `2^{k-1}` codewords.
    fn best_in_half_code(&self, wc: &[f64], i: usize) -> Result<(f64, u64), FeldmanError> {
        if wc.len() != self.code.n() {
            return Err(FeldmanError::WrongBlockLength { got: wc.len(), want: self.code.n() });
        }
        let sums = MaskedSums::new(wc);
        let inv = 1.0 / (self.code.n() as f64).sqrt();
        let table = self.code.table();
        let mut best = f64::NEG_INFINITY;
        let mut best_u = 0u64;
        // Messages with bit i clear are `(hi << (i+1)) | lo`; ascending
        // enumeration plus strict improvement keeps the lowest index on ties.
        let low_count = 1u64 << i;
        let high_count = 1u64 << (self.code.k() - 1 - i);
        for hi in 0..high_count {
            let base = hi << (i + 1);
            for lo in 0..low_count {
                let u = base | lo;
                let s = sums.signed_dot(table[u as usize]) * inv;
                if s > best {
                    best = s;
                    best_u = u;
                }
            }
        }
        Ok((best, best_u))
    }

    /// Full evaluation of `h(wc, i)` by enumeration.
    pub fn h_point(&self, wc: &[f64], i: usize) -> Result<HPoint, FeldmanError> {
        self.check_index(i)?;
        let (best_corr, argmax) = self.best_in_half_code(wc, i)?;
        let floor = self.floor();
        Ok(HPoint {
            value: floor.max(best_corr),
            best_corr,
            argmax,
            floored: best_corr <= floor,
        })
    }

    /// `h(wc, i)`.
    pub fn h_eval(&self, wc: &[f64], i: usize) -> Result<f64, FeldmanError> {
        Ok(self.h_point(wc, i)?.value)
    }

    /// A subgradient of `h(., i)` at `wc`: the maximizing normalized
    /// codeword when the correlation part strictly exceeds the floor, and
    /// zero when the floor is active — ties go to the floor branch, which
    /// is the selection the closed-form dynamics assume.
    pub fn h_subgrad(&self, wc: &[f64], i: usize) -> Result<Vec<f64>, FeldmanError> {
        let point = self.h_point(wc, i)?;
        if point.floored {
            Ok(vec![0.0; self.code.n()])
        } else {
            Ok(self.code.normalized_codeword(point.argmax))
        }
    }

    /// Certified evaluation of `h(scale * x(u)/sqrt(2k), i)` without
    /// enumeration, as an interval `(lo, hi)`.
    ///
    /// If message `u` has `+1` at index `i`, the scaled codeword itself is
    /// in `W_i`, its self-correlation `scale` dominates every
    /// cross-correlation, and the value is exactly `max(floor, scale)`.
    /// Otherwise every member of `W_i` differs from `u` and the distance
    /// bound caps the correlation part at `scale (1 - 2 rho)`, giving
    /// `[floor, max(floor, scale (1 - 2 rho))]` — degenerate to exactly the
    /// floor once `scale <= zeta`, since `zeta (1 - 2 rho) < floor`.
    pub fn h_certified_eval(
        &self,
        scale: f64,
        message: u64,
        i: usize,
    ) -> Result<(f64, f64), FeldmanError> {
        self.check_index(i)?;
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(FeldmanError::BadScale(scale));
        }
        let floor = self.floor();
        if message >> i & 1 == 0 {
            let v = floor.max(scale);
            Ok((v, v))
        } else {
            Ok((floor, floor.max(scale * (1.0 - 2.0 * self.code.rho()))))
        }
    }
}

/// Maximum of a correlation-scan buffer over the half-code `W_i` (messages
/// with bit `i` clear), with the lowest-index maximizer. The buffer must be
/// in message order, as produced by `BinaryCode::correlation_scan`.
pub fn half_space_max(scores: &[f64], i: usize) -> (f64, u64) {
    let k = scores.len().trailing_zeros() as usize;
    debug_assert_eq!(scores.len(), 1 << k);
    debug_assert!(i < k);
    let mut best = f64::NEG_INFINITY;
    let mut best_u = 0u64;
    let low_count = 1usize << i;
    let high_count = 1usize << (k - 1 - i);
    for hi in 0..high_count {
        let base = hi << (i + 1);
        for lo in 0..low_count {
            let u = base | lo;
            if scores[u] > best {
                best = scores[u];
                best_u = u as u64;
            }
        }
    }
    (best, best_u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::BinaryCode;
    use crate::rng::{stream, StreamTag};
    use rand::Rng;
    use std::sync::Arc;

    fn spec(k: usize, zeta: f64) -> FeldmanSpec {
        let code = Arc::new(BinaryCode::build(k, 0.10, 5, 20).unwrap());
        FeldmanSpec::new(code, zeta).unwrap()
    }

    #[test]
    fn constructor_validates_zeta() {
        let code = Arc::new(BinaryCode::build(4, 0.10, 5, 20).unwrap());
        assert_eq!(FeldmanSpec::new(code.clone(), 0.0).unwrap_err(), FeldmanError::BadZeta(0.0));
        assert_eq!(FeldmanSpec::new(code.clone(), 1.5).unwrap_err(), FeldmanError::BadZeta(1.5));
        assert!(FeldmanSpec::new(code, 1.0).is_ok());
    }

    #[test]
    fn floor_formula() {
        let s = spec(8, 0.5);
        let rho = s.code().rho();
        assert_eq!(s.floor(), 0.5 * (1.0 - rho / 2.0));
    }

    #[test]
    fn origin_sits_on_the_floor_with_zero_subgradient() {
        let s = spec(8, 0.25);
        let wc = vec![0.0; s.code().n()];
        for i in [0, 3, 7] {
            let p = s.h_point(&wc, i).unwrap();
            assert_eq!(p.value, s.floor());
            assert!(p.floored);
            assert_eq!(s.h_subgrad(&wc, i).unwrap(), vec![0.0; s.code().n()]);
        }
    }

    #[test]
    fn member_codeword_scores_its_full_correlation() {
        let s = spec(8, 0.25);
        // u = 0b0100_0010 has bit 1 set and bit 2 clear: x(u) is in W_2.
        let u = 0b0100_0010u64;
        let wc = s.code().normalized_codeword(u);
        let h = s.h_eval(&wc, 2).unwrap();
        assert!((h - 1.0).abs() <= 1e-12, "self-correlation must win: {h}");
        // Subgradient is the codeword itself.
        let g = s.h_subgrad(&wc, 2).unwrap();
        for (a, b) in g.iter().zip(&wc) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn excluded_codeword_at_small_scale_floors_out() {
        let s = spec(8, 0.25);
        let u = 0b0100_0010u64; // bit 1 set: x(u) not in W_1
        let zeta = s.zeta();
        let wc: Vec<f64> = s.code().normalized_codeword(u).iter().map(|x| zeta * x).collect();
        let p = s.h_point(&wc, 1).unwrap();
        assert_eq!(p.value, s.floor(), "cross-correlations stay under the floor");
        assert!(p.floored);
        assert_eq!(s.h_subgrad(&wc, 1).unwrap(), vec![0.0; s.code().n()]);
        // And the certificate says the same thing exactly.
        let (lo, hi) = s.h_certified_eval(zeta, u, 1).unwrap();
        assert_eq!(lo, s.floor());
        assert_eq!(hi, s.floor());
    }

    #[test]
    fn certified_interval_contains_exhaustive_value() {
        let s = spec(8, 0.3);
        let mut rng = stream(17, 0, StreamTag::Probe);
        for _ in 0..200 {
            let u = rng.random::<u64>() & 0xff;
            let scale = 2.0 * rng.random::<f64>();
            let i = (rng.random::<u64>() % 8) as usize;
            let wc: Vec<f64> =
                s.code().normalized_codeword(u).iter().map(|x| scale * x).collect();
            let exact = s.h_eval(&wc, i).unwrap();
            let (lo, hi) = s.h_certified_eval(scale, u, i).unwrap();
            assert!(
                lo - 1e-12 <= exact && exact <= hi + 1e-12,
                "exact {exact} outside certified [{lo}, {hi}] at u={u} i={i} scale={scale}"
            );
            if u >> i & 1 == 0 {
                assert!((exact - lo).abs() <= 1e-12, "member case must be exact");
            }
        }
    }

    #[test]
    fn half_space_max_matches_direct_evaluation() {
        let s = spec(8, 0.25);
        let mut rng = stream(23, 0, StreamTag::Probe);
        let wc: Vec<f64> = (0..s.code().n()).map(|_| rng.random::<f64>() - 0.5).collect();
        let scores = s.code().correlation_scan(&wc).unwrap();
        for i in 0..8 {
            let (best, best_u) = half_space_max(&scores, i);
            let p = s.h_point(&wc, i).unwrap();
            assert_eq!(best.to_bits(), p.best_corr.to_bits());
            assert_eq!(best_u, p.argmax);
            assert_eq!(best_u >> i & 1, 0, "maximizer must lie in the half-code");
        }
    }

    #[test]
    fn errors_are_reported() {
        let s = spec(4, 0.25);
        assert_eq!(
            s.h_eval(&vec![0.0; 8], 4).unwrap_err(),
            FeldmanError::IndexOutOfRange { i: 4, k: 4 }
        );
        assert_eq!(
            s.h_eval(&vec![0.0; 7], 0).unwrap_err(),
            FeldmanError::WrongBlockLength { got: 7, want: 8 }
        );
        assert_eq!(
            s.h_certified_eval(-0.1, 0, 0).unwrap_err(),
            FeldmanError::BadScale(-0.1)
        );
    }
}
