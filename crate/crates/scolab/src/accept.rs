//! The acceptance gate: ten pass/fail audits over the whole laboratory.
//!
//! Each criterion re-derives its expectation from the built context and
//! reports one line with the numbers that decided it. The gate never
//! weakens a check to make it pass: a criterion that cannot be met at the
//! configured scale fails loudly with its measured values.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::LabConfig;
use crate::erm::EpsProbeReport;
use crate::feldman::FeldmanSpec;
use crate::harness::{
    lipschitz_audit, mc_concentration, median, run_eps_trial, run_trial, run_trials,
    sweep_eta_t, LabContext, RESIDUAL_TOL, TRAJ_TOL,
};
use crate::instance::{HardInstance, InstanceParams, Mode, RelaxMultipliers};
use crate::param::ParamVector;
use crate::rng::{stream, uniform_in_ball, StreamTag};
use crate::LabError;

/// Slack on gap-versus-bound comparisons.
pub const GAP_TOL: f64 = 1e-9;
/// Slack on correlation bounds decided by integer distances.
const CORR_TOL: f64 = 1e-12;
/// Wall-clock ceiling for the whole gate, in seconds.
pub const TIME_BUDGET_S: f64 = 600.0;
/// Required lower bound on the measured conditioning probability.
pub const CONDITIONING_MIN: f64 = 0.47;
/// Window for median(code-share of the gap) / bound.
pub const MEDIAN_WINDOW: (f64, f64) = (1.0, 1.5);
/// Window for the ln-ln slope of the sweep's ramp leg.
pub const SLOPE_WINDOW: (f64, f64) = (0.4, 0.6);
/// Largest tolerated relative spread across sweep plateau medians.
pub const PLATEAU_DEV_MAX: f64 = 0.05;
/// Subgradient-norm ceiling when every weight respects its unit cap.
pub const CAPPED_LIPSCHITZ: f64 = 7.0;

/// One criterion's verdict.
#[derive(Debug, Clone, Serialize)]
pub struct CriterionOutcome {
    pub id: &'static str,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub elapsed_ms: f64,
}

impl CriterionOutcome {
    /// The one-line report form.
    pub fn line(&self) -> String {
        format!(
            "[{}] {} {}: {} ({:.0} ms)",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.elapsed_ms
        )
    }
}

/// All ten verdicts plus the rollup.
#[derive(Debug, Clone, Serialize)]
pub struct AcceptanceReport {
    pub outcomes: Vec<CriterionOutcome>,
    pub all_pass: bool,
    pub elapsed_s: f64,
}

fn finish(
    outcomes: &mut Vec<CriterionOutcome>,
    emit: &mut dyn FnMut(&CriterionOutcome),
    id: &'static str,
    name: &'static str,
    t0: Instant,
    pass: bool,
    detail: String,
) {
    let outcome = CriterionOutcome {
        id,
        name,
        pass,
        detail,
        elapsed_ms: t0.elapsed().as_secs_f64() * 1000.0,
    };
    emit(&outcome);
    outcomes.push(outcome);
}

/// Run the full gate against `config`, emitting each verdict as it lands.
pub fn run_acceptance(
    config: &LabConfig,
    emit: &mut dyn FnMut(&CriterionOutcome),
) -> Result<AcceptanceReport, LabError> {
    let t_start = Instant::now();
    let ctx = LabContext::new(config.clone())?;
    let h = ctx.config.harness.clone();
    let m = ctx.config.instance.m;
    let k = ctx.config.code.k;
    let mut outcomes: Vec<CriterionOutcome> = Vec::with_capacity(10);

    // C1: the code separates messages. The builder enforced the target
    // relative distance exhaustively; spot-check that sampled pairwise
    // correlations respect the bound the distance implies.
    let t0 = Instant::now();
    {
        let code = &ctx.code;
        let target = ctx.config.code.rho;
        let corr_bound = 1.0 - 2.0 * code.rho();
        let mut rng = stream(h.master_seed, 0, StreamTag::PairCheck);
        let space = 1u64 << code.k();
        let mut worst = f64::NEG_INFINITY;
        let mut pairs = 0usize;
        while pairs < h.pair_samples {
            let a = rng.random_range(0..space);
            let b = rng.random_range(0..space);
            if a == b {
                continue;
            }
            pairs += 1;
            worst = worst.max(code.pair_correlation(a, b));
        }
        let pass = code.rho() >= target && worst <= corr_bound + CORR_TOL;
        finish(
            &mut outcomes,
            emit,
            "C1",
            "code distance and pair correlations",
            t0,
            pass,
            format!(
                "rho {:.4} >= target {:.4}; worst of {} pair correlations {:.6} <= {:.6}",
                code.rho(),
                target,
                pairs,
                worst,
                corr_bound
            ),
        );
    }

    // C2: every conditioned exact-minimization trial overfits by at least
    // the scheduled bound, with all certificates green.
    let t0 = Instant::now();
    let erm_trials = run_trials(&ctx, Mode::Erm, h.trials)?;
    let bound_erm = ctx.bound(Mode::Erm);
    let conditioned: Vec<_> = erm_trials.iter().filter(|t| t.conditioned).collect();
    {
        let needed = 200.min(h.trials * 2 / 5).max(1);
        let certs_ok = erm_trials
            .iter()
            .all(|t| t.certificates_ok && t.opt_probes_pass && t.residual <= RESIDUAL_TOL);
        let worst_lo = conditioned.iter().map(|t| t.gap_pop_lo).fold(f64::INFINITY, f64::min);
        let worst_code = conditioned.iter().map(|t| t.gap_code).fold(f64::INFINITY, f64::min);
        let pass = conditioned.len() >= needed
            && certs_ok
            && worst_lo >= bound_erm - GAP_TOL
            && worst_code >= bound_erm - GAP_TOL;
        finish(
            &mut outcomes,
            emit,
            "C2",
            "exact minimizer overfits on every conditioned trial",
            t0,
            pass,
            format!(
                "{}/{} conditioned (need {}), certificates {}, min certified gap {:.6e} and min code-share {:.6e} vs bound {:.6e}",
                conditioned.len(),
                erm_trials.len(),
                needed,
                certs_ok,
                worst_lo,
                worst_code,
                bound_erm
            ),
        );
    }

    // C3: the typical gap is not just above the bound but sized as
    // scheduled: the median code-share sits within [1, 1.5] bounds.
    let t0 = Instant::now();
    {
        let mut gaps: Vec<f64> = conditioned.iter().map(|t| t.gap_code).collect();
        let med = median(&mut gaps);
        let ratio = med / bound_erm;
        let pass = !gaps.is_empty()
            && ratio >= MEDIAN_WINDOW.0 - 1e-9
            && ratio <= MEDIAN_WINDOW.1 + 1e-9;
        finish(
            &mut outcomes,
            emit,
            "C3",
            "median gap sits in the scheduled window",
            t0,
            pass,
            format!(
                "median code-share {:.6e} = {:.4} x bound (window [{}, {}])",
                med, ratio, MEDIAN_WINDOW.0, MEDIAN_WINDOW.1
            ),
        );
    }

    // C4: approximate minimizers inherit the overfitting. Probes that are
    // epsilon-suboptimal for the empirical risk must still carry the exact
    // minimizer's gap minus the transport budget.
    let t0 = Instant::now();
    {
        let reports: Vec<EpsProbeReport> = (0..h.eps_trials as u64)
            .into_par_iter()
            .map(|t| run_eps_trial(&ctx, t))
            .collect::<Result<_, _>>()?;
        let all_ok = reports.iter().all(|r| r.pass);
        let min_kept = reports.iter().map(|r| r.kept).min().unwrap_or(0);
        let total_kept: usize = reports.iter().map(|r| r.kept).sum();
        let pass = !reports.is_empty() && all_ok && min_kept >= 1;
        finish(
            &mut outcomes,
            emit,
            "C4",
            "epsilon-approximate minimizers overfit",
            t0,
            pass,
            format!(
                "{} trials x {} probes, {} kept (min {}/trial), all gap checks {}",
                reports.len(),
                h.eps_probes_per_trial,
                total_kept,
                min_kept,
                all_ok
            ),
        );
    }

    // C5: descent overfits too. Every trajectory matches its closed form
    // step by step, every per-step certificate holds, and conditioned
    // trials clear the descent bound.
    let t0 = Instant::now();
    let gd_trials = run_trials(&ctx, Mode::Gd, h.gd_trials)?;
    {
        let bound_gd = ctx.bound(Mode::Gd);
        let certs_ok = gd_trials.iter().all(|t| t.certificates_ok);
        let worst_dev = gd_trials.iter().map(|t| t.max_traj_dev).fold(0.0, f64::max);
        let gd_conditioned: Vec<_> = gd_trials.iter().filter(|t| t.conditioned).collect();
        let worst_lo =
            gd_conditioned.iter().map(|t| t.gap_pop_lo).fold(f64::INFINITY, f64::min);
        let pass = certs_ok
            && worst_dev <= TRAJ_TOL
            && !gd_conditioned.is_empty()
            && worst_lo >= bound_gd - GAP_TOL;
        finish(
            &mut outcomes,
            emit,
            "C5",
            "descent tracks its closed form and overfits",
            t0,
            pass,
            format!(
                "{} trials ({} conditioned), certificates {}, max trajectory dev {:.2e} <= {:.0e}, min certified gap {:.6e} vs bound {:.6e}",
                gd_trials.len(),
                gd_conditioned.len(),
                certs_ok,
                worst_dev,
                TRAJ_TOL,
                worst_lo,
                bound_gd
            ),
        );
    }

    // C6: the penalty certificate never contradicts enumeration — not on
    // any trial output above, and not on fresh random points.
    let t0 = Instant::now();
    {
        let trial_disagreements: usize = erm_trials
            .iter()
            .chain(gd_trials.iter())
            .map(|t| t.cert_disagreements)
            .sum();
        let mut fired = 0usize;
        let mut mismatches = 0usize;
        for (offset, inst) in [(0u64, &ctx.erm), (h.argmax_queries as u64, &ctx.gd)] {
            let verdicts: Vec<Option<bool>> = (0..h.argmax_queries as u64)
                .into_par_iter()
                .map(|q| -> Result<Option<bool>, LabError> {
                    let mut rng = stream(h.master_seed, offset + q, StreamTag::ArgmaxQuery);
                    let v = uniform_in_ball(&mut rng, 3 * k);
                    let w = ParamVector::new(v[..2 * k].to_vec(), v[2 * k..].to_vec())?;
                    Ok(inst.penalty_cross_check(&w)?)
                })
                .collect::<Result<_, _>>()?;
            fired += verdicts.iter().flatten().count();
            mismatches += verdicts.iter().filter(|v| **v == Some(false)).count();
        }
        let pass = mismatches == 0 && trial_disagreements == 0 && fired >= 1;
        finish(
            &mut outcomes,
            emit,
            "C6",
            "penalty certificates agree with enumeration",
            t0,
            pass,
            format!(
                "{} random queries per instance, certificate fired {} times, {} mismatches, {} trial disagreements",
                h.argmax_queries, fired, mismatches, trial_disagreements
            ),
        );
    }

    // C7: the conditioning event is common enough to matter.
    let t0 = Instant::now();
    {
        let conc = mc_concentration(m, k, h.concentration_trials, h.master_seed);
        let pass = conc.fraction >= CONDITIONING_MIN;
        finish(
            &mut outcomes,
            emit,
            "C7",
            "sample signature concentrates",
            t0,
            pass,
            format!(
                "{}/{} trials conditioned = {:.4} >= {}",
                conc.conditioned, conc.trials, conc.fraction, CONDITIONING_MIN
            ),
        );
    }

    // C8: the horizon sweep shows the scheduled shape — gap growing like
    // sqrt(eta T) on the ramp, then a plateau once more optimization
    // cannot help.
    let t0 = Instant::now();
    {
        let sweep = sweep_eta_t(&ctx)?;
        let points_ok = sweep
            .points
            .iter()
            .all(|p| p.all_certs_ok && p.conditioned >= 1 && p.min_gap_code >= p.predicted - GAP_TOL);
        let slope_ok = sweep.slope >= SLOPE_WINDOW.0 && sweep.slope <= SLOPE_WINDOW.1;
        let pass = sweep.monotone_ok
            && slope_ok
            && sweep.plateau_max_rel_dev <= PLATEAU_DEV_MAX
            && points_ok;
        finish(
            &mut outcomes,
            emit,
            "C8",
            "gap ramps with the horizon then plateaus",
            t0,
            pass,
            format!(
                "slope {:.4} in [{}, {}], monotone {}, plateau rel dev {:.2e} <= {}, per-point bounds {}",
                sweep.slope,
                SLOPE_WINDOW.0,
                SLOPE_WINDOW.1,
                sweep.monotone_ok,
                sweep.plateau_max_rel_dev,
                PLATEAU_DEV_MAX,
                points_ok
            ),
        );
    }

    // C9: subgradient norms respect the audited budget on both scheduled
    // instances, and respect the absolute ceiling when every weight is
    // held to its unit cap.
    let t0 = Instant::now();
    {
        let erm_budget = ctx.erm.params().lipschitz_budget();
        let gd_budget = ctx.gd.params().lipschitz_budget();
        let a = lipschitz_audit(&ctx.erm, h.lipschitz_samples, h.master_seed, erm_budget + GAP_TOL)?;
        let b = lipschitz_audit(&ctx.gd, h.lipschitz_samples, h.master_seed, gd_budget + GAP_TOL)?;
        let capped_params = InstanceParams {
            mode: Mode::Erm,
            k,
            m,
            zeta: 0.5,
            gamma_c: 0.1,
            gamma_m: 0.9 / (k as f64).sqrt(),
            lambda_c: 0.5,
            lambda_m: 0.5,
            rho: ctx.code.rho(),
            relax: RelaxMultipliers::default(),
        };
        let capped = HardInstance::new(
            capped_params,
            FeldmanSpec::new(ctx.code.clone(), 0.5)?,
            ctx.config.instance.brute_force_cap,
        )?;
        let c = lipschitz_audit(&capped, h.lipschitz_samples, h.master_seed, CAPPED_LIPSCHITZ + GAP_TOL)?;
        let pass = a.pass && b.pass && c.pass;
        finish(
            &mut outcomes,
            emit,
            "C9",
            "subgradient norms within budget",
            t0,
            pass,
            format!(
                "max norms {:.4}/{:.4} vs budgets {:.4}/{:.4}; capped weights {:.4} vs {}",
                a.max_norm, b.max_norm, erm_budget, gd_budget, c.max_norm, CAPPED_LIPSCHITZ
            ),
        );
    }

    // C10: the gate fits the time budget and reruns bit-identically.
    let t0 = Instant::now();
    {
        let deterministic = {
            let a = run_trial(&ctx, Mode::Erm, 0)?;
            let b = run_trial(&ctx, Mode::Erm, 0)?;
            let c = run_trial(&ctx, Mode::Gd, 0)?;
            let d = run_trial(&ctx, Mode::Gd, 0)?;
            a.same_outcome(&b) && c.same_outcome(&d)
        };
        let elapsed = t_start.elapsed().as_secs_f64();
        let pass = deterministic && elapsed < TIME_BUDGET_S;
        finish(
            &mut outcomes,
            emit,
            "C10",
            "deterministic rerun within the time budget",
            t0,
            pass,
            format!("reruns identical: {}; elapsed {:.1} s < {} s", deterministic, elapsed, TIME_BUDGET_S),
        );
    }

    let all_pass = outcomes.iter().all(|o| o.pass);
    Ok(AcceptanceReport { outcomes, all_pass, elapsed_s: t_start.elapsed().as_secs_f64() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::load_config;

    fn small_config() -> LabConfig {
        let overrides = vec![
            ("code.k".to_string(), "8".to_string()),
            ("code.seed".to_string(), "5".to_string()),
            ("instance.m".to_string(), "4".to_string()),
            ("gd.t".to_string(), "128".to_string()),
            ("harness.trials".to_string(), "6".to_string()),
            ("harness.gd_trials".to_string(), "3".to_string()),
            ("harness.sweep_trials".to_string(), "8".to_string()),
            ("harness.sweep_j_max".to_string(), "4".to_string()),
            ("harness.probes_per_trial".to_string(), "40".to_string()),
            ("harness.eps_trials".to_string(), "2".to_string()),
            ("harness.eps_probes_per_trial".to_string(), "40".to_string()),
            ("harness.pair_samples".to_string(), "200".to_string()),
            ("harness.argmax_queries".to_string(), "40".to_string()),
            ("harness.lipschitz_samples".to_string(), "100".to_string()),
            ("harness.concentration_trials".to_string(), "300".to_string()),
        ];
        load_config(None, &overrides).unwrap()
    }

    #[test]
    fn gate_runs_green_at_small_scale() {
        let config = small_config();
        let mut seen = Vec::new();
        let report = run_acceptance(&config, &mut |o| seen.push(o.id)).unwrap();
        assert_eq!(report.outcomes.len(), 10);
        assert_eq!(
            seen,
            vec!["C1", "C2", "C3", "C4", "C5", "C6", "C7", "C8", "C9", "C10"],
            "criteria emitted in order as they complete"
        );
        for o in &report.outcomes {
            assert!(o.pass, "{}", o.line());
        }
        assert!(report.all_pass);
        assert!(report.elapsed_s < TIME_BUDGET_S);
    }

    #[test]
    fn outcome_lines_carry_verdict_and_id() {
        let o = CriterionOutcome {
            id: "C3",
            name: "median gap sits in the scheduled window",
            pass: false,
            detail: "ratio 0.9".to_string(),
            elapsed_ms: 12.0,
        };
        let line = o.line();
        assert!(line.starts_with("[FAIL] C3 "));
        assert!(line.contains("ratio 0.9"));
    }
}
