//! Projected subgradient descent, instrumented step by step.
//!
//! On a scheduled instance the whole trajectory from `w_0 = 0` is supposed
//! to stay inside one analytic regime: every sampled index keeps the floor
//! branch of `h`, the coupling penalty is positive with the sample sign
//! pattern as its unique maximizer, and the ball projection never fires.
//! Inside that regime the iterates obey a two-block linear recursion with
//! an explicit solution ([`closed_form_iterate`]).
//!
//! The runner does not assume any of this. It records a certificate per
//! step stating which branch each term actually took, cross-checks the
//! penalty argmax against its soundness certificate when one applies, and
//! leaves the closed-form comparison to [`compare_trajectory`] so the
//! algorithm under test and its oracle never share code paths.

use serde::Serialize;

use crate::instance::{HardInstance, InstanceError, SampleStats, Scratch};
use crate::param::{project_unit_ball, ParamError, ParamVector, FEAS_TOL};

/// Tolerance for the penalty value agreement between the exhaustive and
/// certified routes (they differ only in summation order).
const CERT_P_TOL: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum GdError {
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("bad descent config: {0}")]
    BadConfig(String),
    #[error("certificate violated at step {step}: {detail}")]
    CertificateViolation { step: usize, detail: String },
    #[error("closed form needs positive regularizers on both blocks")]
    DegenerateRecursion,
    #[error("suffix recomputation needs every iterate (record_every = 1)")]
    NotRetained,
}

/// Descent hyperparameters and instrumentation knobs.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GdConfig {
    /// Step size; fixed across steps.
    pub eta: f64,
    /// Number of steps `T`; iterates are `w_0..w_T`.
    pub t_total: usize,
    /// Suffix start `s`: the output averages `w_{s+1}..w_T`, so `s = 0` is
    /// the full average without the origin and `s = T - 1` is the last
    /// iterate.
    pub suffix_s: usize,
    /// Keep every `record_every`-th iterate (plus `w_0` and `w_T`).
    pub record_every: usize,
    /// Stop with an error on the first certificate break instead of
    /// recording it and continuing.
    pub abort_on_violation: bool,
}

impl GdConfig {
    fn validate(&self) -> Result<(), GdError> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(GdError::BadConfig(format!("eta = {} outside (0, 1)", self.eta)));
        }
        if self.t_total == 0 {
            return Err(GdError::BadConfig("t_total must be at least 1".into()));
        }
        if self.suffix_s >= self.t_total {
            return Err(GdError::BadConfig(format!(
                "suffix_s = {} must be below t_total = {}",
                self.suffix_s, self.t_total
            )));
        }
        if self.record_every == 0 {
            return Err(GdError::BadConfig("record_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Which branches the loss took at one query point `w_t`.
#[derive(Debug, Clone, Serialize)]
pub struct StepCertificate {
    pub step: usize,
    /// Every sampled index sat on the floor branch of `h`.
    pub feldman_zero: bool,
    /// The penalty maximizer equals the sample sign pattern.
    pub p_argmax_is_vss: bool,
    /// The penalty is strictly positive (so it contributes a subgradient).
    pub p_positive: bool,
    /// The un-projected step stayed inside the unit ball.
    pub projection_inactive: bool,
    pub p_value: f64,
    pub p_margin: f64,
    /// `Some(agree)` when the sign-pattern certificate was sound at this
    /// point; `None` when no sound certificate applied (zero message
    /// coordinate, or slack not positive).
    pub certified_agrees: Option<bool>,
}

impl StepCertificate {
    /// Whether this step matches the analytic regime: the origin step has
    /// a silent penalty and floor branches; every later step must show all
    /// four flags.
    pub fn in_regime(&self) -> bool {
        if self.step == 0 {
            self.feldman_zero && self.p_value == 0.0 && self.projection_inactive
        } else {
            self.feldman_zero && self.p_positive && self.p_argmax_is_vss && self.projection_inactive
        }
    }

    fn describe_break(&self) -> String {
        let mut parts = Vec::new();
        if !self.feldman_zero {
            parts.push("h left the floor branch".to_string());
        }
        if self.step == 0 {
            if self.p_value != 0.0 {
                parts.push(format!("p = {} at the origin", self.p_value));
            }
        } else {
            if !self.p_positive {
                parts.push(format!("p = {} not positive", self.p_value));
            }
            if !self.p_argmax_is_vss {
                parts.push("penalty argmax is not the sample sign pattern".to_string());
            }
        }
        if !self.projection_inactive {
            parts.push("projection clamped the step".to_string());
        }
        if parts.is_empty() {
            parts.push("in regime".to_string());
        }
        parts.join("; ")
    }
}

/// Everything one descent run produced.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    /// Recorded iterates (always includes `w_0` and `w_T`).
    pub iterates: Vec<ParamVector>,
    /// Step index of each recorded iterate.
    pub iterate_steps: Vec<usize>,
    /// One certificate per step `t = 0..T`, describing the query point.
    pub certs: Vec<StepCertificate>,
    /// `F_S(w_t)` for `t = 0..T` inclusive.
    pub empirical_risks: Vec<f64>,
    /// Average of `w_{s+1}..w_T` (the algorithm's output).
    pub suffix_avg: ParamVector,
    pub final_iterate: ParamVector,
    /// All steps matched the analytic regime.
    pub certificates_ok: bool,
    /// First step whose certificate broke the regime, if any.
    pub first_violation: Option<usize>,
    /// Steps where a sound penalty certificate disagreed with brute force
    /// (always zero unless there is a bug; counted, never ignored).
    pub cert_disagreements: usize,
}

impl TrajectoryRecord {
    /// Recompute the suffix average from retained iterates; requires the
    /// full trajectory.
    pub fn suffix_average(&self, s: usize, t_total: usize) -> Result<ParamVector, GdError> {
        if self.iterate_steps.len() != t_total + 1
            || self.iterate_steps.iter().enumerate().any(|(i, &t)| i != t)
        {
            return Err(GdError::NotRetained);
        }
        if s >= t_total {
            return Err(GdError::BadConfig(format!("suffix_s = {s} >= t_total = {t_total}")));
        }
        let k = self.final_iterate.k();
        let mut acc = ParamVector::zeros(k);
        for w in &self.iterates[s + 1..=t_total] {
            acc.add_scaled(w, 1.0);
        }
        acc.scale(1.0 / (t_total - s) as f64);
        Ok(acc)
    }
}

/// Run projected subgradient descent from the origin, recording branch
/// certificates at every step.
pub fn run_gd(
    inst: &HardInstance,
    stats: &SampleStats,
    cfg: &GdConfig,
) -> Result<TrajectoryRecord, GdError> {
    cfg.validate()?;
    let k = inst.k();
    let mut scratch = Scratch::default();
    let mut w = ParamVector::zeros(k);
    let mut iterates = vec![w.clone()];
    let mut iterate_steps = vec![0usize];
    let mut certs = Vec::with_capacity(cfg.t_total);
    let mut risks = Vec::with_capacity(cfg.t_total + 1);
    let mut suffix_acc = ParamVector::zeros(k);
    let mut disagreements = 0usize;
    let mut first_violation = None;

    for t in 0..cfg.t_total {
        let step = inst.empirical_step(&w, stats, &mut scratch)?;
        risks.push(step.empirical_risk);

        let certified_agrees = certified_penalty_check(inst, &w, &step.p, &mut disagreements)?;
        let mut next = w.clone();
        next.add_scaled(&step.subgrad, -cfg.eta);
        let projection_inactive = next.norm() <= 1.0 + FEAS_TOL;
        let cert = StepCertificate {
            step: t,
            feldman_zero: step.h_all_floored,
            p_argmax_is_vss: step.p.argmax == stats.v_s_sign_bits,
            p_positive: step.p.value > 0.0,
            projection_inactive,
            p_value: step.p.value,
            p_margin: step.p.margin,
            certified_agrees,
        };
        if !cert.in_regime() {
            if cfg.abort_on_violation {
                return Err(GdError::CertificateViolation { step: t, detail: cert.describe_break() });
            }
            first_violation.get_or_insert(t);
        }
        certs.push(cert);

        w = project_unit_ball(next)?;
        if t + 1 > cfg.suffix_s {
            suffix_acc.add_scaled(&w, 1.0);
        }
        if (t + 1) % cfg.record_every == 0 || t + 1 == cfg.t_total {
            iterates.push(w.clone());
            iterate_steps.push(t + 1);
        }
    }
    risks.push(inst.empirical_risk(&w, stats, &mut scratch)?);
    suffix_acc.scale(1.0 / (cfg.t_total - cfg.suffix_s) as f64);

    Ok(TrajectoryRecord {
        iterates,
        iterate_steps,
        certificates_ok: first_violation.is_none(),
        first_violation,
        certs,
        empirical_risks: risks,
        suffix_avg: suffix_acc,
        final_iterate: w,
        cert_disagreements: disagreements,
    })
}

/// Cross-check the exhaustive penalty argmax against the sign-pattern
/// certificate whenever the latter is sound at `w`.
fn certified_penalty_check(
    inst: &HardInstance,
    w: &ParamVector,
    brute: &crate::instance::PEval,
    disagreements: &mut usize,
) -> Result<Option<bool>, GdError> {
    if w.message_block.iter().any(|x| *x == 0.0) {
        return Ok(None);
    }
    let candidate = w
        .message_block
        .iter()
        .enumerate()
        .filter(|(_, x)| **x < 0.0)
        .fold(0u64, |acc, (i, _)| acc | 1 << i);
    let cert = inst.p_eval_certified(w, candidate)?;
    if !cert.certified_unique {
        return Ok(None);
    }
    let agree = brute.argmax == candidate && (brute.value - cert.value).abs() <= CERT_P_TOL;
    if !agree {
        *disagreements += 1;
    }
    Ok(Some(agree))
}

/// The in-regime trajectory in closed form.
///
/// With every certificate holding, both blocks follow affine recursions:
/// `w_1 = (0, (eta/m) v_S)` and for `t >= 1`, with `a = 1 - eta lambda_c`,
/// `b = 1 - eta lambda_m`, `mu = (v_S/m - gamma_m v_S^s)/lambda_m`:
///
/// ```text
/// w_t^c = (gamma_c/lambda_c) (1 - a^{t-1}) x(v_S^s)/sqrt(2k)
/// w_t^m = b^{t-1} (eta/m) v_S + (1 - b^{t-1}) mu
/// ```
pub fn closed_form_iterate(
    inst: &HardInstance,
    stats: &SampleStats,
    eta: f64,
    t: usize,
) -> Result<ParamVector, GdError> {
    let p = inst.params();
    if !(p.lambda_c > 0.0 && p.lambda_m > 0.0) {
        return Err(GdError::DegenerateRecursion);
    }
    if t == 0 {
        return Ok(ParamVector::zeros(inst.k()));
    }
    let a = 1.0 - eta * p.lambda_c;
    let b = 1.0 - eta * p.lambda_m;
    let pow_a = a.powi(t as i32 - 1);
    let pow_b = b.powi(t as i32 - 1);
    let inv_m = 1.0 / stats.m as f64;

    let code_scale = p.gamma_c / p.lambda_c * (1.0 - pow_a);
    let code_block: Vec<f64> = inst
        .code()
        .normalized_codeword(stats.v_s_sign_bits)
        .iter()
        .map(|x| code_scale * x)
        .collect();
    let message_block: Vec<f64> = stats
        .v_s
        .iter()
        .zip(&stats.v_s_sign)
        .map(|(&v, &s)| {
            let mu = (inv_m * v - p.gamma_m * s) / p.lambda_m;
            pow_b * (eta * (inv_m * v)) + (1.0 - pow_b) * mu
        })
        .collect();
    Ok(ParamVector::new(code_block, message_block)?)
}

/// Result of checking a run against its closed form.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TrajectoryComparison {
    /// Largest coordinate deviation over the recorded steps.
    pub max_dev: f64,
    /// First recorded step whose deviation exceeded the tolerance.
    pub first_divergence: Option<usize>,
    pub tolerance: f64,
}

/// Compare every recorded iterate against [`closed_form_iterate`].
pub fn compare_trajectory(
    inst: &HardInstance,
    stats: &SampleStats,
    eta: f64,
    record: &TrajectoryRecord,
    tolerance: f64,
) -> Result<TrajectoryComparison, GdError> {
    let mut max_dev = 0.0f64;
    let mut first_divergence = None;
    for (w, &t) in record.iterates.iter().zip(&record.iterate_steps) {
        let oracle = closed_form_iterate(inst, stats, eta, t)?;
        let dev = w.linf_dist(&oracle);
        if dev > tolerance && first_divergence.is_none() {
            first_divergence = Some(t);
        }
        max_dev = max_dev.max(dev);
    }
    Ok(TrajectoryComparison { max_dev, first_divergence, tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::BinaryCode;
    use crate::feldman::FeldmanSpec;
    use crate::instance::{sample_stats, schedule, RelaxMultipliers, ScheduleMode};
    use std::sync::Arc;

    fn gd_instance(eta: f64, steps: usize) -> HardInstance {
        let code = Arc::new(BinaryCode::build(8, 0.10, 5, 20).unwrap());
        let (params, _) =
            schedule(4, 8, code.rho(), ScheduleMode::Gd { eta, steps }, RelaxMultipliers::default())
                .unwrap();
        let feldman = FeldmanSpec::new(code, params.zeta).unwrap();
        HardInstance::new(params, feldman, 20).unwrap()
    }

    fn cfg(eta: f64, t_total: usize, suffix_s: usize) -> GdConfig {
        GdConfig { eta, t_total, suffix_s, record_every: 1, abort_on_violation: false }
    }

    #[test]
    fn first_step_is_the_scaled_signature() {
        let inst = gd_instance(0.2, 64);
        let stats = sample_stats(&[0, 0, 3, 5], 8).unwrap();
        let record = run_gd(&inst, &stats, &cfg(0.2, 1, 0)).unwrap();
        let w1 = &record.iterates[1];
        assert_eq!(w1.code_block, vec![0.0; 16]);
        for (a, &v) in w1.message_block.iter().zip(&stats.v_s) {
            assert_eq!(*a, 0.2 * (0.25 * v), "first step must be (eta/m) v_S exactly");
        }
        assert_eq!(record.suffix_avg, *w1);
        assert_eq!(record.final_iterate, *w1);
        // The origin certificate: silent penalty, floor branch, no clamp.
        assert!(record.certs[0].in_regime());
        assert!(!record.certs[0].p_positive);
        let oracle = closed_form_iterate(&inst, &stats, 0.2, 1).unwrap();
        assert_eq!(oracle.linf_dist(w1), 0.0, "closed form matches bitwise at t = 1");
    }

    #[test]
    fn certified_run_tracks_the_closed_form() {
        let inst = gd_instance(0.2, 64);
        let stats = sample_stats(&[0, 0, 3, 5], 8).unwrap();
        let record = run_gd(&inst, &stats, &cfg(0.2, 64, 0)).unwrap();
        assert!(record.certificates_ok, "violation at {:?}", record.first_violation);
        assert_eq!(record.cert_disagreements, 0);
        // Penalty certificates fire from step 1 on and agree with brute force.
        for c in &record.certs[1..] {
            assert_eq!(c.certified_agrees, Some(true), "step {}", c.step);
            assert!(c.p_margin > 0.0);
        }
        let cmp = compare_trajectory(&inst, &stats, 0.2, &record, 1e-8).unwrap();
        assert!(cmp.max_dev <= 1e-8, "max deviation {}", cmp.max_dev);
        assert_eq!(cmp.first_divergence, None);
        // Descent made progress and ended below the starting risk.
        assert!(record.empirical_risks.last().unwrap() < &record.empirical_risks[0]);
    }

    #[test]
    fn suffix_average_recomputation_matches_the_streaming_one() {
        let inst = gd_instance(0.2, 64);
        let stats = sample_stats(&[1, 2, 2, 7], 8).unwrap();
        for s in [0usize, 31, 63] {
            let record = run_gd(&inst, &stats, &cfg(0.2, 64, s)).unwrap();
            let again = record.suffix_average(s, 64).unwrap();
            assert!(again.linf_dist(&record.suffix_avg) <= 1e-15);
        }
        let sparse = run_gd(
            &inst,
            &stats,
            &GdConfig { eta: 0.2, t_total: 64, suffix_s: 0, record_every: 10, abort_on_violation: false },
        )
        .unwrap();
        assert!(matches!(sparse.suffix_average(0, 64), Err(GdError::NotRetained)));
    }

    #[test]
    fn last_iterate_suffix_is_the_final_iterate() {
        let inst = gd_instance(0.2, 64);
        let stats = sample_stats(&[0, 1, 4, 6], 8).unwrap();
        let record = run_gd(&inst, &stats, &cfg(0.2, 64, 63)).unwrap();
        assert_eq!(record.suffix_avg, record.final_iterate);
    }

    #[test]
    fn runaway_step_size_breaks_certificates_and_is_reported() {
        // eta * lambda_m = 0.49 * 18/sqrt(8) > 2: the message recursion
        // diverges until the ball projection clamps it, so some
        // certificate must break and the runner must say where.
        let inst = gd_instance(0.49, 60);
        let stats = sample_stats(&[0, 0, 3, 5], 8).unwrap();
        let record = run_gd(&inst, &stats, &cfg(0.49, 60, 0)).unwrap();
        assert!(!record.certificates_ok);
        let first = record.first_violation.expect("a violation step");
        assert!(!record.certs[first].in_regime());
        assert_eq!(record.cert_disagreements, 0, "soundness is never violated, only the regime");

        let err = run_gd(
            &inst,
            &stats,
            &GdConfig { eta: 0.49, t_total: 60, suffix_s: 0, record_every: 1, abort_on_violation: true },
        )
        .unwrap_err();
        match err {
            GdError::CertificateViolation { step, .. } => assert_eq!(step, first),
            other => panic!("expected a certificate violation, got {other}"),
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let inst = gd_instance(0.2, 64);
        let stats = sample_stats(&[2, 2, 5, 6], 8).unwrap();
        let a = run_gd(&inst, &stats, &cfg(0.2, 64, 0)).unwrap();
        let b = run_gd(&inst, &stats, &cfg(0.2, 64, 0)).unwrap();
        assert_eq!(a.iterates, b.iterates);
        assert_eq!(a.suffix_avg, b.suffix_avg);
        assert_eq!(a.empirical_risks, b.empirical_risks);
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        let inst = gd_instance(0.2, 64);
        let stats = sample_stats(&[0, 1, 2, 3], 8).unwrap();
        for bad in [
            GdConfig { eta: 0.0, t_total: 10, suffix_s: 0, record_every: 1, abort_on_violation: false },
            GdConfig { eta: 1.0, t_total: 10, suffix_s: 0, record_every: 1, abort_on_violation: false },
            GdConfig { eta: 0.2, t_total: 0, suffix_s: 0, record_every: 1, abort_on_violation: false },
            GdConfig { eta: 0.2, t_total: 10, suffix_s: 10, record_every: 1, abort_on_violation: false },
            GdConfig { eta: 0.2, t_total: 10, suffix_s: 0, record_every: 0, abort_on_violation: false },
        ] {
            assert!(matches!(run_gd(&inst, &stats, &bad), Err(GdError::BadConfig(_))));
        }
    }
}
