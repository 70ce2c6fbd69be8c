//! Systematic binary linear codes with certified relative distance.
//!
//! A code here is a map `G: {-1,+1}^k -> {-1,+1}^{2k}` given by a generator
//! in systematic form `[I | M]`: the first `k` output coordinates repeat the
//! message, the last `k` are parities. Signs are carried as bits with the
//! convention `+1 <-> 0`, `-1 <-> 1`, so the all-`+1` message is the zero
//! codeword and sign multiplication is XOR.
//!
//! Because the code is linear, the Hamming distance between two codewords is
//! the weight of a third, so the minimum *pairwise* distance equals the
//! minimum *nonzero weight* — one `2^k` weight enumeration certifies the
//! relative distance `rho = min_weight / 2k`. Downstream, that bound pins
//! every cross-correlation: distinct codewords `x, y` satisfy
//! `<x, y> / 2k <= 1 - 2 rho`.
//!
//! Construction is rejection sampling: draw `M` uniformly at random,
//! enumerate weights, retry until the minimum weight meets the target. The
//! whole codeword table (one `u64` per codeword, low `k` bits = message,
//! high `k` bits = parity) is kept in memory; `k <= 28` keeps that table
//! and the `2^k` scans tractable.

use std::path::Path;
use std::sync::Arc;

use crate::rng::{stream, StreamTag};
use rand::Rng;

/// Smallest supported message length.
pub const K_MIN: usize = 2;
/// Largest supported message length (table size `2^K_MAX` words).
pub const K_MAX: usize = 28;
/// On-disk format version, bumped on any layout change.
pub const CODE_FORMAT_VERSION: u16 = 1;

const MAGIC: &[u8; 8] = b"SCOLCODE";

#[derive(Debug, thiserror::Error)]
pub enum CodeError {
    #[error("message length k={0} outside supported range [{K_MIN}, {K_MAX}]")]
    BadDimension(usize),
    #[error("target relative distance {0} outside (0, 0.5)")]
    BadTargetDistance(f64),
    #[error("max_retries must be at least 1")]
    BadRetries,
    #[error(
        "no code with min weight >= {required_weight} found in {attempts} attempts; \
         best achieved weight {best_weight} (relative distance {best_rho:.4})"
    )]
    ConstructionFailed {
        attempts: u32,
        required_weight: u32,
        best_weight: u32,
        best_rho: f64,
    },
    #[error("message has {got} entries, expected {want}")]
    WrongMessageLength { got: usize, want: usize },
    #[error("message entry {pos} is {value}; entries must be +1/-1 (or all zero)")]
    NotASign { pos: usize, value: f64 },
    #[error("code-block vector has {got} entries, expected {want}")]
    WrongBlockLength { got: usize, want: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad code file: {0}")]
    BadFormat(String),
    #[error("code file failed integrity check: {0}")]
    IntegrityMismatch(String),
}

/// Per-byte lookup tables for dot products against sign patterns.
///
/// For a fixed weight vector `w`, `masked_sum(bits)` returns the sum of
/// `w_j` over set bits of `bits`, and `signed_dot(bits)` the full signed
/// dot product `sum_j w_j * (1 - 2 bit_j)`. Each query costs one table
/// lookup per byte of the pattern, which is what makes exhaustive `2^k`
/// scans cheap. Bits at or beyond `w.len()` contribute zero.
#[derive(Debug, Clone)]
pub struct MaskedSums {
    luts: Vec<[f64; 256]>,
    total: f64,
}

impl MaskedSums {
    pub fn new(weights: &[f64]) -> Self {
        let n_bytes = weights.len().div_ceil(8).max(1);
        let mut luts = vec![[0.0f64; 256]; n_bytes];
        for (b, lut) in luts.iter_mut().enumerate() {
            for v in 1usize..256 {
                let rest = v & (v - 1); // v with its lowest set bit cleared
                let idx = 8 * b + v.trailing_zeros() as usize;
                let w = if idx < weights.len() { weights[idx] } else { 0.0 };
                lut[v] = lut[rest] + w;
            }
        }
        Self { luts, total: weights.iter().sum() }
    }

    /// Sum of weights over set bits of `bits`.
    #[inline]
    pub fn masked_sum(&self, bits: u64) -> f64 {
        let mut acc = 0.0;
        for (b, lut) in self.luts.iter().enumerate() {
            acc += lut[((bits >> (8 * b)) & 0xff) as usize];
        }
        acc
    }

    /// `sum_j w_j * s_j` where `s_j = +1` for clear bits, `-1` for set bits.
    #[inline]
    pub fn signed_dot(&self, bits: u64) -> f64 {
        self.total - 2.0 * self.masked_sum(bits)
    }
}

/// Sign vector (`+1`/`-1`) of the low `len` bits of a packed word.
pub fn signs_from_bits(bits: u64, len: usize) -> Vec<f64> {
    (0..len).map(|j| if bits >> j & 1 == 1 { -1.0 } else { 1.0 }).collect()
}

/// A built code: generator, full codeword table, and measured distance.
#[derive(Debug, Clone)]
pub struct BinaryCode {
    k: usize,
    seed: u64,
    attempts: u32,
    parity_rows: Vec<u64>,
    table: Vec<u64>,
    min_weight: u32,
    rho: f64,
}

impl BinaryCode {
    /// Randomized construction: retry random parity matrices under
    /// `stream(seed, attempt, CodeBuild)` until the minimum nonzero weight
    /// reaches `ceil(target_rho * 2k)`. Deterministic in `(k, target_rho,
    /// seed)`; on failure the error reports the best distance seen.
    pub fn build(
        k: usize,
        target_rho: f64,
        seed: u64,
        max_retries: u32,
    ) -> Result<Self, CodeError> {
        if !(K_MIN..=K_MAX).contains(&k) {
            return Err(CodeError::BadDimension(k));
        }
        if !(target_rho > 0.0 && target_rho < 0.5) {
            return Err(CodeError::BadTargetDistance(target_rho));
        }
        if max_retries == 0 {
            return Err(CodeError::BadRetries);
        }
        let required_weight = (target_rho * (2 * k) as f64).ceil() as u32;
        let mask = (1u64 << k) - 1;
        let mut best: Option<(u32, Vec<u64>)> = None;
        for attempt in 0..max_retries {
            let mut rng = stream(seed, attempt as u64, StreamTag::CodeBuild);
            let rows: Vec<u64> = (0..k).map(|_| rng.random::<u64>() & mask).collect();
            let candidate = Self::from_parity_rows(k, rows, seed, attempt + 1)?;
            if candidate.min_weight >= required_weight {
                return Ok(candidate);
            }
            if best.as_ref().is_none_or(|(w, _)| candidate.min_weight > *w) {
                best = Some((candidate.min_weight, candidate.parity_rows));
            }
        }
        let (best_weight, _) = best.expect("max_retries >= 1 implies at least one attempt");
        Err(CodeError::ConstructionFailed {
            attempts: max_retries,
            required_weight,
            best_weight,
            best_rho: best_weight as f64 / (2 * k) as f64,
        })
    }

    /// Assemble a code from explicit parity rows (row `i` holds the `k`
    /// parity bits of the generator row for message bit `i`). Builds the
    /// codeword table and measures the distance.
    pub fn from_parity_rows(
        k: usize,
        parity_rows: Vec<u64>,
        seed: u64,
        attempts: u32,
    ) -> Result<Self, CodeError> {
        if !(K_MIN..=K_MAX).contains(&k) {
            return Err(CodeError::BadDimension(k));
        }
        if parity_rows.len() != k {
            return Err(CodeError::BadFormat(format!(
                "{} parity rows for k={k}",
                parity_rows.len()
            )));
        }
        let mask = (1u64 << k) - 1;
        if let Some(row) = parity_rows.iter().find(|r| **r & !mask != 0) {
            return Err(CodeError::BadFormat(format!(
                "parity row {row:#x} has bits beyond k={k}"
            )));
        }
        // Full generator rows: systematic bit plus shifted parity block.
        let full_rows: Vec<u64> = parity_rows
            .iter()
            .enumerate()
            .map(|(i, row)| (1u64 << i) | (row << k))
            .collect();
        let mut table = vec![0u64; 1 << k];
        for u in 1usize..(1 << k) {
            let lsb = u & u.wrapping_neg();
            table[u] = table[u ^ lsb] ^ full_rows[lsb.trailing_zeros() as usize];
        }
        let min_weight = table[1..]
            .iter()
            .map(|c| c.count_ones())
            .min()
            .expect("k >= 2 gives a nonempty table tail");
        let rho = min_weight as f64 / (2 * k) as f64;
        Ok(Self { k, seed, attempts, parity_rows, table, min_weight, rho })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Codeword length `n = 2k` (rate 1/2).
    pub fn n(&self) -> usize {
        2 * self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Construction attempts consumed (1 = first try succeeded).
    pub fn attempts(&self) -> u32 {
        self.attempts
    }

    /// Certified relative distance `min_weight / 2k`.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn min_weight(&self) -> u32 {
        self.min_weight
    }

    pub fn parity_rows(&self) -> &[u64] {
        &self.parity_rows
    }

    /// Packed codeword table: entry `u` is the codeword of message bits `u`.
    pub fn table(&self) -> &[u64] {
        &self.table
    }

    /// Packed codeword for packed message bits.
    #[inline]
    pub fn codeword_bits(&self, message: u64) -> u64 {
        self.table[message as usize]
    }

    /// Recompute the minimum nonzero relative weight from the table. By
    /// linearity this equals the minimum pairwise normalized Hamming
    /// distance, so it re-certifies `rho` from scratch.
    pub fn verify_relative_distance(&self) -> f64 {
        let w = self
            .table[1..]
            .iter()
            .map(|c| c.count_ones())
            .min()
            .expect("nonempty table tail");
        w as f64 / self.n() as f64
    }

    /// Normalized correlation of two codewords, exactly via popcount:
    /// `<x_a, x_b> / 2k = 1 - 2 d_H(x_a, x_b) / 2k`.
    pub fn pair_correlation(&self, a: u64, b: u64) -> f64 {
        let d = (self.table[a as usize] ^ self.table[b as usize]).count_ones();
        1.0 - 2.0 * d as f64 / self.n() as f64
    }

    /// Encode a `+1/-1` message vector to its `+1/-1` codeword. The all-zero
    /// vector is accepted and maps to the all-zero vector (the linear
    /// extension used when comparing against the origin); any other
    /// non-sign entry is rejected.
    pub fn encode(&self, v: &[f64]) -> Result<Vec<f64>, CodeError> {
        if v.len() != self.k {
            return Err(CodeError::WrongMessageLength { got: v.len(), want: self.k });
        }
        if v.iter().all(|x| *x == 0.0) {
            return Ok(vec![0.0; self.n()]);
        }
        let mut bits = 0u64;
        for (pos, x) in v.iter().enumerate() {
            match *x {
                1.0 => {}
                -1.0 => bits |= 1 << pos,
                value => return Err(CodeError::NotASign { pos, value }),
            }
        }
        Ok(signs_from_bits(self.codeword_bits(bits), self.n()))
    }

    /// The normalized codeword `x / sqrt(2k)` for packed message bits; unit
    /// Euclidean norm by construction.
    pub fn normalized_codeword(&self, message: u64) -> Vec<f64> {
        let s = 1.0 / (self.n() as f64).sqrt();
        let bits = self.codeword_bits(message);
        (0..self.n()).map(|j| if bits >> j & 1 == 1 { -s } else { s }).collect()
    }

    /// Correlations `<wc, x_u / sqrt(2k)>` against every codeword, in
    /// message order. One pass over the packed table with per-byte sign
    /// lookups ([`MaskedSums`]).
    pub fn correlation_scan(&self, wc: &[f64]) -> Result<Vec<f64>, CodeError> {
        let mut out = Vec::new();
        self.correlation_scan_into(wc, &mut out)?;
        Ok(out)
    }

    /// [`Self::correlation_scan`] writing into a reusable buffer.
    pub fn correlation_scan_into(
        &self,
        wc: &[f64],
        out: &mut Vec<f64>,
    ) -> Result<(), CodeError> {
        if wc.len() != self.n() {
            return Err(CodeError::WrongBlockLength { got: wc.len(), want: self.n() });
        }
        let sums = MaskedSums::new(wc);
        let inv = 1.0 / (self.n() as f64).sqrt();
        out.clear();
        out.reserve(self.table.len());
        out.extend(self.table.iter().map(|&bits| sums.signed_dot(bits) * inv));
        Ok(())
    }

    /// Reference correlation via an explicit per-bit loop; the oracle the
    /// scan is tested against.
    pub fn correlation_naive(&self, wc: &[f64], message: u64) -> Result<f64, CodeError> {
        if wc.len() != self.n() {
            return Err(CodeError::WrongBlockLength { got: wc.len(), want: self.n() });
        }
        let bits = self.codeword_bits(message);
        let mut acc = 0.0;
        for (j, w) in wc.iter().enumerate() {
            acc += if bits >> j & 1 == 1 { -w } else { *w };
        }
        Ok(acc / (self.n() as f64).sqrt())
    }

    /// FNV-1a hash over `k` and the parity rows; stable identity for
    /// reports and file integrity.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        let mut eat = |byte: u8| {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        };
        eat(self.k as u8);
        for row in &self.parity_rows {
            for b in row.to_le_bytes() {
                eat(b);
            }
        }
        h
    }

    /// Serialize: fixed header, the parity matrix row-major as packed
    /// bits, then the fingerprint as a trailer. The table is rebuilt on
    /// load, so the file stays small.
    pub fn save(&self, path: &Path) -> Result<(), CodeError> {
        let row_bytes = self.k.div_ceil(8);
        let mut buf = Vec::with_capacity(48 + self.k * row_bytes);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&CODE_FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.k as u16).to_le_bytes());
        buf.extend_from_slice(&self.attempts.to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        buf.extend_from_slice(&self.min_weight.to_le_bytes());
        buf.extend_from_slice(&[0u8; 4]); // reserved
        buf.extend_from_slice(&self.rho.to_bits().to_le_bytes());
        for row in &self.parity_rows {
            buf.extend_from_slice(&row.to_le_bytes()[..row_bytes]);
        }
        buf.extend_from_slice(&self.fingerprint().to_le_bytes());
        std::fs::write(path, buf)?;
        Ok(())
    }

    /// Deserialize and re-verify: the table is rebuilt from the parity rows
    /// and the measured distance must reproduce the stored `min_weight` and
    /// `rho` bit-for-bit.
    pub fn load(path: &Path) -> Result<Self, CodeError> {
        let buf = std::fs::read(path)?;
        let need = |n: usize| -> Result<(), CodeError> {
            if buf.len() < n {
                Err(CodeError::BadFormat(format!("file truncated at {} bytes", buf.len())))
            } else {
                Ok(())
            }
        };
        need(40)?;
        if &buf[0..8] != MAGIC {
            return Err(CodeError::BadFormat("bad magic".into()));
        }
        let version = u16::from_le_bytes(buf[8..10].try_into().unwrap());
        if version != CODE_FORMAT_VERSION {
            return Err(CodeError::BadFormat(format!(
                "format version {version}, expected {CODE_FORMAT_VERSION}"
            )));
        }
        let k = u16::from_le_bytes(buf[10..12].try_into().unwrap()) as usize;
        if !(K_MIN..=K_MAX).contains(&k) {
            return Err(CodeError::BadFormat(format!("stored k={k} out of range")));
        }
        let attempts = u32::from_le_bytes(buf[12..16].try_into().unwrap());
        let seed = u64::from_le_bytes(buf[16..24].try_into().unwrap());
        let min_weight = u32::from_le_bytes(buf[24..28].try_into().unwrap());
        let rho = f64::from_bits(u64::from_le_bytes(buf[32..40].try_into().unwrap()));
        let row_bytes = k.div_ceil(8);
        need(40 + k * row_bytes + 8)?;
        let mut parity_rows = Vec::with_capacity(k);
        for i in 0..k {
            let mut raw = [0u8; 8];
            raw[..row_bytes].copy_from_slice(&buf[40 + i * row_bytes..40 + (i + 1) * row_bytes]);
            parity_rows.push(u64::from_le_bytes(raw));
        }
        let trailer = 40 + k * row_bytes;
        let stored_fp = u64::from_le_bytes(buf[trailer..trailer + 8].try_into().unwrap());
        let code = Self::from_parity_rows(k, parity_rows, seed, attempts)?;
        if code.fingerprint() != stored_fp {
            return Err(CodeError::IntegrityMismatch(format!(
                "stored fingerprint {stored_fp:016x}, recomputed {:016x}",
                code.fingerprint()
            )));
        }
        if code.min_weight != min_weight {
            return Err(CodeError::IntegrityMismatch(format!(
                "stored min weight {min_weight}, recomputed {}",
                code.min_weight
            )));
        }
        if code.rho.to_bits() != rho.to_bits() {
            return Err(CodeError::IntegrityMismatch(format!(
                "stored rho {rho}, recomputed {}",
                code.rho
            )));
        }
        Ok(code)
    }
}

/// Shared handle used across threads; the table is immutable after build.
pub type CodeHandle = Arc<BinaryCode>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamTag};
    use rand::Rng;

    /// `[I | I]` generator: parity row i = e_i.
    fn identity_parity(k: usize) -> BinaryCode {
        let rows: Vec<u64> = (0..k).map(|i| 1u64 << i).collect();
        BinaryCode::from_parity_rows(k, rows, 0, 1).unwrap()
    }

    #[test]
    fn identity_parity_code_has_distance_a_quarter() {
        // Codeword of u is (u, u): weight 2*wt(u), minimum 2, rho = 2/8.
        let code = identity_parity(4);
        assert_eq!(code.min_weight(), 2);
        assert_eq!(code.rho(), 0.25);
        assert_eq!(code.verify_relative_distance(), 0.25);
    }

    #[test]
    fn zero_parity_code_has_minimal_distance() {
        let code = BinaryCode::from_parity_rows(4, vec![0; 4], 0, 1).unwrap();
        assert_eq!(code.min_weight(), 1);
        assert_eq!(code.rho(), 1.0 / 8.0);
    }

    #[test]
    fn min_weight_equals_min_pairwise_distance() {
        // Linearity oracle: brute-force all pairs and compare.
        let code = BinaryCode::build(6, 0.15, 11, 20).unwrap();
        let table = code.table();
        let mut min_pair = u32::MAX;
        for a in 0..table.len() {
            for b in (a + 1)..table.len() {
                min_pair = min_pair.min((table[a] ^ table[b]).count_ones());
            }
        }
        assert_eq!(min_pair, code.min_weight());
    }

    #[test]
    fn build_is_deterministic_and_meets_target() {
        let a = BinaryCode::build(10, 0.10, 3, 20).unwrap();
        let b = BinaryCode::build(10, 0.10, 3, 20).unwrap();
        assert_eq!(a.parity_rows(), b.parity_rows());
        assert_eq!(a.rho().to_bits(), b.rho().to_bits());
        assert!(f64::from(a.min_weight()) >= (0.10 * a.n() as f64).ceil());
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn build_rejects_bad_arguments() {
        assert!(matches!(BinaryCode::build(1, 0.1, 0, 5), Err(CodeError::BadDimension(1))));
        assert!(matches!(BinaryCode::build(29, 0.1, 0, 5), Err(CodeError::BadDimension(29))));
        assert!(matches!(
            BinaryCode::build(8, 0.5, 0, 5),
            Err(CodeError::BadTargetDistance(_))
        ));
        assert!(matches!(BinaryCode::build(8, 0.1, 0, 0), Err(CodeError::BadRetries)));
    }

    #[test]
    fn impossible_target_reports_best_distance_found() {
        // rho = 0.45 needs min weight ceil(0.45*8) = 4 out of n = 8 for
        // every one of 15 nonzero codewords; random 4x4 parities will not
        // deliver that, and the error must say how close we got.
        match BinaryCode::build(4, 0.45, 1, 8) {
            Err(CodeError::ConstructionFailed { attempts, required_weight, best_weight, best_rho }) => {
                assert_eq!(attempts, 8);
                assert_eq!(required_weight, 4);
                assert!(best_weight < 4);
                assert!((best_rho - best_weight as f64 / 8.0).abs() < 1e-15);
            }
            other => panic!("expected ConstructionFailed, got {other:?}"),
        }
    }

    #[test]
    fn encode_is_systematic_and_signed() {
        let code = BinaryCode::build(8, 0.10, 5, 20).unwrap();
        let v: Vec<f64> = vec![1.0, -1.0, -1.0, 1.0, 1.0, 1.0, -1.0, 1.0];
        let x = code.encode(&v).unwrap();
        assert_eq!(x.len(), 16);
        assert_eq!(&x[..8], &v[..], "systematic prefix must repeat the message");
        assert!(x.iter().all(|s| *s == 1.0 || *s == -1.0));
    }

    #[test]
    fn encode_handles_zero_and_rejects_junk() {
        let code = identity_parity(4);
        assert_eq!(code.encode(&[0.0; 4]).unwrap(), vec![0.0; 8]);
        assert!(matches!(
            code.encode(&[1.0, 0.5, 1.0, 1.0]),
            Err(CodeError::NotASign { pos: 1, .. })
        ));
        assert!(matches!(
            code.encode(&[1.0, -1.0, 0.0, 1.0]),
            Err(CodeError::NotASign { pos: 2, .. })
        ));
        assert!(matches!(
            code.encode(&[1.0; 3]),
            Err(CodeError::WrongMessageLength { got: 3, want: 4 })
        ));
    }

    #[test]
    fn encoding_is_linear_over_sign_multiplication() {
        // Sign product of codewords = codeword of the sign product, i.e.
        // XOR in packed form.
        let code = BinaryCode::build(8, 0.10, 5, 20).unwrap();
        let mut rng = stream(99, 0, StreamTag::PairCheck);
        for _ in 0..1000 {
            let a = rng.random::<u64>() & 0xff;
            let b = rng.random::<u64>() & 0xff;
            assert_eq!(
                code.codeword_bits(a) ^ code.codeword_bits(b),
                code.codeword_bits(a ^ b)
            );
        }
    }

    #[test]
    fn scan_matches_naive_and_the_distance_bound() {
        let code = BinaryCode::build(8, 0.10, 5, 20).unwrap();
        let mut rng = stream(7, 0, StreamTag::Probe);
        let wc: Vec<f64> = (0..code.n()).map(|_| rng.random::<f64>() - 0.5).collect();
        let scores = code.correlation_scan(&wc).unwrap();
        assert_eq!(scores.len(), 1 << 8);
        for u in 0..(1u64 << 8) {
            let naive = code.correlation_naive(&wc, u).unwrap();
            assert!(
                (scores[u as usize] - naive).abs() <= 1e-12,
                "scan disagrees with naive at u={u}"
            );
        }
        // Against a normalized codeword: self-correlation 1, every other
        // codeword at most 1 - 2 rho.
        let target = 37u64;
        let xbar = code.normalized_codeword(target);
        let scores = code.correlation_scan(&xbar).unwrap();
        assert!((scores[target as usize] - 1.0).abs() <= 1e-12);
        for (u, s) in scores.iter().enumerate() {
            if u as u64 != target {
                assert!(
                    *s <= 1.0 - 2.0 * code.rho() + 1e-12,
                    "codeword {u} correlates {s} > 1 - 2 rho"
                );
            }
        }
    }

    #[test]
    fn masked_sums_ignore_tail_bits() {
        let sums = MaskedSums::new(&[1.0, 2.0, 4.0]);
        assert_eq!(sums.masked_sum(0b101), 5.0);
        assert_eq!(sums.masked_sum(0b111), 7.0);
        // Bits beyond the weight vector must contribute nothing.
        assert_eq!(sums.masked_sum(0b1111_1000), 0.0);
        assert_eq!(sums.masked_sum(0b1111_1100), 4.0);
        assert_eq!(sums.signed_dot(0b010), 1.0 - 2.0 + 4.0);
    }

    #[test]
    fn pair_correlation_matches_float_dot() {
        let code = BinaryCode::build(6, 0.15, 11, 20).unwrap();
        let inv = 1.0 / code.n() as f64;
        for (a, b) in [(0u64, 5u64), (3, 3), (17, 60)] {
            let xa = signs_from_bits(code.codeword_bits(a), code.n());
            let xb = signs_from_bits(code.codeword_bits(b), code.n());
            let dot: f64 = xa.iter().zip(&xb).map(|(p, q)| p * q).sum::<f64>() * inv;
            assert!((code.pair_correlation(a, b) - dot).abs() <= 1e-12);
        }
    }

    #[test]
    fn save_load_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("code.bin");
        let code = BinaryCode::build(12, 0.10, 21, 20).unwrap();
        code.save(&path).unwrap();
        let back = BinaryCode::load(&path).unwrap();
        assert_eq!(back.k(), code.k());
        assert_eq!(back.seed(), code.seed());
        assert_eq!(back.attempts(), code.attempts());
        assert_eq!(back.parity_rows(), code.parity_rows());
        assert_eq!(back.table(), code.table());
        assert_eq!(back.rho().to_bits(), code.rho().to_bits());
        assert_eq!(back.fingerprint(), code.fingerprint());
    }

    #[test]
    fn load_detects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("code.bin");
        let code = BinaryCode::build(8, 0.10, 5, 20).unwrap();
        code.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[40] ^= 0x01; // flip one parity bit (first row, first byte)
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            BinaryCode::load(&path),
            Err(CodeError::IntegrityMismatch(_))
        ));
        // And a wrong magic is rejected up front.
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(BinaryCode::load(&path), Err(CodeError::BadFormat(_))));
    }
}
