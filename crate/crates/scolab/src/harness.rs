//! Experiment orchestration: build a lab context once, then run trials,
//! sweeps, and audits against it.
//!
//! Reproducibility contract: all randomness flows through named streams
//! keyed by `(master_seed, index, role)` ([`crate::rng`]). Trial `t` draws
//! its sample from the same stream regardless of which experiment asks, so
//! the horizon sweep sees common random numbers across grid points and
//! medians move only because parameters move. A rerun with the same
//! configuration reproduces every number except wall-clock fields.

use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::code::CodeHandle;
use crate::config::LabConfig;
use crate::erm::{closed_form_minimizer, epsilon_erm_probe, verify_global_optimality, EpsProbeReport};
use crate::feldman::FeldmanSpec;
use crate::gd::{compare_trajectory, run_gd, GdConfig};
use crate::instance::{
    draw_sample, schedule, HardInstance, InstanceError, InstanceParams, Mode, RegimeReport,
    RiskScope, ScheduleMode, Scratch,
};
use crate::param::ParamVector;
use crate::rng::{stream, uniform_in_ball, StreamTag};
use crate::LabError;

/// Allowed deviation between a descent run and its closed form.
pub const TRAJ_TOL: f64 = 1e-8;
/// Allowed stationarity residual at a closed-form minimizer.
pub const RESIDUAL_TOL: f64 = 1e-9;
/// Slack when checking an exact value against a certified enclosure.
const ENCLOSURE_TOL: f64 = 1e-12;
/// Odd multiplier that spreads trial indices into per-trial probe seeds.
const TRIAL_SEED_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

/// A fully constructed laboratory: one code, one instance per regime.
#[derive(Debug, Clone)]
pub struct LabContext {
    pub config: LabConfig,
    pub code: CodeHandle,
    pub erm: HardInstance,
    pub erm_report: RegimeReport,
    pub gd: HardInstance,
    pub gd_report: RegimeReport,
    /// Effective regularization of the exact-minimization regime.
    pub lambda: f64,
    /// Effective suboptimality budget for approximate minimizers.
    pub epsilon: f64,
}

impl LabContext {
    /// Build the code, schedule both regimes against its measured
    /// distance, and bind the instances.
    pub fn new(config: LabConfig) -> Result<Self, LabError> {
        let code: CodeHandle = std::sync::Arc::new(crate::code::BinaryCode::build(
            config.code.k,
            config.code.rho,
            config.code.seed,
            config.code.max_retries,
        )?);
        let rho = code.rho();
        let m = config.instance.m;
        let k = config.code.k;
        let relax = config.instance.relax;
        let lambda = config.effective_lambda();
        let epsilon = config.effective_epsilon(lambda, rho);

        let (erm_params, erm_report) =
            schedule(m, k, rho, ScheduleMode::Erm { lambda }, relax)?;
        let erm_feldman = FeldmanSpec::new(code.clone(), erm_params.zeta)?;
        let erm =
            HardInstance::new(erm_params, erm_feldman, config.instance.brute_force_cap)?;

        let (gd_params, gd_report) = schedule(
            m,
            k,
            rho,
            ScheduleMode::Gd { eta: config.gd.eta, steps: config.gd.t },
            relax,
        )?;
        let gd_feldman = FeldmanSpec::new(code.clone(), gd_params.zeta)?;
        let gd = HardInstance::new(gd_params, gd_feldman, config.instance.brute_force_cap)?;

        Ok(Self { config, code, erm, erm_report, gd, gd_report, lambda, epsilon })
    }

    pub fn instance(&self, mode: Mode) -> &HardInstance {
        match mode {
            Mode::Erm => &self.erm,
            Mode::Gd => &self.gd,
        }
    }

    /// The scheduled lower bound on the population-minus-empirical gap for
    /// this mode's output.
    pub fn bound(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Erm => predicted_bound(self.erm.params(), None),
            Mode::Gd => {
                let eta_t = self.config.gd.eta * self.config.gd.t as f64;
                predicted_bound(self.gd.params(), Some(eta_t))
            }
        }
    }

    /// Per-trial seed for probe streams, decorrelated across trials.
    fn trial_seed(&self, trial_index: u64) -> u64 {
        self.config.harness.master_seed ^ trial_index.wrapping_mul(TRIAL_SEED_MIX)
    }
}

/// Scheduled gap bound: `rho zeta / 4` for exact minimization, minus the
/// optimization deficit `zeta / (2 lambda_c eta T)` for descent.
fn predicted_bound(params: &InstanceParams, eta_t: Option<f64>) -> f64 {
    let base = params.rho * params.zeta / 4.0;
    match eta_t {
        None => base,
        Some(eta_t) => base - params.zeta / (2.0 * params.lambda_c * eta_t),
    }
}

/// Everything one trial produced. `runtime_ms` is the only
/// non-reproducible field; [`TrialResult::same_outcome`] compares modulo
/// it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub trial_index: u64,
    pub mode: Mode,
    pub m: usize,
    pub k: usize,
    /// Step size and horizon (zero in exact-minimization mode).
    pub eta: f64,
    pub t_total: usize,
    pub suffix_s: usize,
    pub conditioned: bool,
    pub v_s_norm: f64,
    pub frac_missing: f64,
    /// `F_S(output) - F_S(minimizer)`; zero by construction for exact
    /// minimization.
    pub gap_empirical: f64,
    /// Certified enclosure of the population-minus-empirical gap at the
    /// output.
    pub gap_pop_lo: f64,
    pub gap_pop_hi: f64,
    /// The same gap from exhaustive enumeration.
    pub gap_pop_exact: f64,
    /// Code-block share of the gap (the sweep statistic).
    pub gap_code: f64,
    pub bound_predicted: f64,
    /// All mode certificates held: optimality defense and stationarity for
    /// exact minimization; per-step regime certificates and closed-form
    /// tracking for descent; enclosure containment for both.
    pub certificates_ok: bool,
    /// The exhaustive population value sat inside the certified enclosure.
    pub cert_containment_ok: bool,
    /// Whether the certified population route applied to the output (it
    /// requires a codeword-proportional code block).
    pub pop_cert_applied: bool,
    /// Sound penalty certificates that disagreed with enumeration.
    pub cert_disagreements: usize,
    /// Largest deviation from the closed-form trajectory (descent only).
    pub max_traj_dev: f64,
    /// Stationarity residual at the closed-form minimizer.
    pub residual: f64,
    /// Random-probe optimality defense verdict (true when not run).
    pub opt_probes_pass: bool,
    /// Smallest probe risk minus minimizer risk.
    pub worst_probe_gap: f64,
    pub runtime_ms: f64,
}

impl TrialResult {
    /// Equality on everything reproducible (wall-clock excluded).
    pub fn same_outcome(&self, other: &Self) -> bool {
        let mut a = self.clone();
        let mut b = other.clone();
        a.runtime_ms = 0.0;
        b.runtime_ms = 0.0;
        a == b
    }
}

/// Run one trial: draw the sample, produce the mode's output, and measure
/// every gap twice (enclosure and enumeration).
pub fn run_trial(ctx: &LabContext, mode: Mode, trial_index: u64) -> Result<TrialResult, LabError> {
    let t0 = Instant::now();
    let inst = ctx.instance(mode);
    let m = ctx.config.instance.m;
    let k = ctx.config.code.k;
    let stats = draw_sample(ctx.config.harness.master_seed, trial_index, m, k);
    let trial_seed = ctx.trial_seed(trial_index);
    let mut scratch = Scratch::default();

    let sol = closed_form_minimizer(inst, &stats)?;
    let (w_out, f_s_out, gap_empirical, max_traj_dev, cert_disagreements, opt, mode_certs_ok);
    let (mut eta, mut t_total, mut suffix_s) = (0.0, 0, 0);
    match mode {
        Mode::Erm => {
            let report = verify_global_optimality(
                inst,
                &stats,
                &sol,
                ctx.config.harness.probes_per_trial,
                trial_seed,
            )?;
            let cross = inst.penalty_cross_check(&sol.w_star)?;
            cert_disagreements = usize::from(cross == Some(false));
            mode_certs_ok =
                report.pass && sol.stationarity_residual <= RESIDUAL_TOL && cross == Some(true);
            opt = Some(report);
            max_traj_dev = 0.0;
            gap_empirical = 0.0;
            f_s_out = sol.empirical_risk;
            w_out = sol.w_star.clone();
        }
        Mode::Gd => {
            let gcfg = GdConfig {
                eta: ctx.config.gd.eta,
                t_total: ctx.config.gd.t,
                suffix_s: ctx.config.gd.suffix_s,
                record_every: ctx.config.gd.record_every,
                abort_on_violation: ctx.config.gd.abort_on_violation,
            };
            (eta, t_total, suffix_s) = (gcfg.eta, gcfg.t_total, gcfg.suffix_s);
            let record = run_gd(inst, &stats, &gcfg)?;
            let cmp = compare_trajectory(inst, &stats, gcfg.eta, &record, TRAJ_TOL)?;
            cert_disagreements = record.cert_disagreements;
            mode_certs_ok = record.certificates_ok
                && cmp.first_divergence.is_none()
                && record.cert_disagreements == 0;
            opt = None;
            max_traj_dev = cmp.max_dev;
            w_out = record.suffix_avg;
            f_s_out = inst.empirical_risk(&w_out, &stats, &mut scratch)?;
            gap_empirical = f_s_out - sol.empirical_risk;
        }
    }

    let pop_exact = inst.risk(&w_out, RiskScope::Population)?.lo();
    let message = stats.v_s_sign_bits;
    let xbar = inst.code().normalized_codeword(message);
    let scale: f64 = w_out.code_block.iter().zip(&xbar).map(|(a, b)| a * b).sum::<f64>().max(0.0);
    let (gap_pop_lo, gap_pop_hi, cert_containment_ok, pop_cert_applied) =
        match inst.risk(&w_out, RiskScope::PopulationCertified { message, scale }) {
            Ok(enclosure) => {
                let contained = enclosure.lo() - ENCLOSURE_TOL <= pop_exact
                    && pop_exact <= enclosure.hi() + ENCLOSURE_TOL;
                (enclosure.lo() - f_s_out, enclosure.hi() - f_s_out, contained, true)
            }
            // Off-direction outputs (possible when certificates broke) have
            // no certified route; fall back to the exhaustive value and say
            // so instead of faking an enclosure.
            Err(InstanceError::NotACodewordDirection { .. }) => {
                (pop_exact - f_s_out, pop_exact - f_s_out, true, false)
            }
            Err(e) => return Err(e.into()),
        };
    let gap_code = inst.code_block_gap(&w_out)?;

    Ok(TrialResult {
        trial_index,
        mode,
        m,
        k,
        eta,
        t_total,
        suffix_s,
        conditioned: stats.conditioned,
        v_s_norm: stats.v_s_norm,
        frac_missing: stats.missing as f64 / k as f64,
        gap_empirical,
        gap_pop_lo,
        gap_pop_hi,
        gap_pop_exact: pop_exact - f_s_out,
        gap_code,
        bound_predicted: ctx.bound(mode),
        certificates_ok: mode_certs_ok && cert_containment_ok,
        cert_containment_ok,
        pop_cert_applied,
        cert_disagreements,
        max_traj_dev,
        residual: sol.stationarity_residual,
        opt_probes_pass: opt.as_ref().map_or(true, |r| r.pass),
        worst_probe_gap: opt.as_ref().map_or(f64::INFINITY, |r| r.worst_gap),
        runtime_ms: t0.elapsed().as_secs_f64() * 1000.0,
    })
}

/// Run a batch of trials in parallel, ordered by trial index.
pub fn run_trials(
    ctx: &LabContext,
    mode: Mode,
    trials: usize,
) -> Result<Vec<TrialResult>, LabError> {
    (0..trials as u64)
        .into_par_iter()
        .map(|t| run_trial(ctx, mode, t))
        .collect()
}

/// Probe the approximate-minimizer claim on one trial.
pub fn run_eps_trial(ctx: &LabContext, trial_index: u64) -> Result<EpsProbeReport, LabError> {
    let stats = draw_sample(
        ctx.config.harness.master_seed,
        trial_index,
        ctx.config.instance.m,
        ctx.config.code.k,
    );
    let sol = closed_form_minimizer(&ctx.erm, &stats)?;
    Ok(epsilon_erm_probe(
        &ctx.erm,
        &stats,
        &sol,
        ctx.epsilon,
        ctx.config.harness.eps_probes_per_trial,
        ctx.trial_seed(trial_index),
    )?)
}

/// How often the sample signature satisfies its concentration event.
#[derive(Debug, Clone, Serialize)]
pub struct ConcentrationReport {
    pub m: usize,
    pub k: usize,
    pub trials: usize,
    pub conditioned: usize,
    pub fraction: f64,
}

/// Estimate the probability of `||v_S|| <= 3 sqrt(m)` by direct sampling.
pub fn mc_concentration(
    m: usize,
    k: usize,
    trials: usize,
    master_seed: u64,
) -> ConcentrationReport {
    let conditioned = (0..trials as u64)
        .filter(|&t| draw_sample(master_seed, t, m, k).conditioned)
        .count();
    ConcentrationReport { m, k, trials, conditioned, fraction: conditioned as f64 / trials as f64 }
}

/// One grid point of the horizon sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub j: u32,
    /// Nominal horizon `2^j sqrt(m)`.
    pub eta_t: f64,
    pub eta: f64,
    pub t_total: usize,
    /// Ramp leg: per-point descent schedule. Plateau leg: descent on the
    /// fixed exact-minimization instance.
    pub on_exact_instance: bool,
    pub zeta: f64,
    pub predicted: f64,
    pub trials: usize,
    pub conditioned: usize,
    pub median_gap_code: f64,
    pub min_gap_code: f64,
    pub median_gap_full: f64,
    pub all_certs_ok: bool,
}

/// The full sweep with its fitted statistics.
#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    /// Grid points on the ramp leg (the rest form the plateau).
    pub ramp_points: usize,
    /// Least-squares slope of `ln(median code gap)` against `ln(eta T)`
    /// over the ramp leg.
    pub slope: f64,
    /// Last plateau median, used as the plateau reference.
    pub plateau_ref: f64,
    /// Largest relative deviation of plateau medians from the reference.
    pub plateau_max_rel_dev: f64,
    /// Medians never decreased along the grid.
    pub monotone_ok: bool,
}

/// Sweep the horizon `eta T = 2^j sqrt(m)` over the configured `j` range.
///
/// Ramp points get their own descent schedule, so the scheduled `zeta`
/// grows like `sqrt(eta T)` and the measured code-block gap must follow.
/// Once `2^j` passes `plateau_factor * m`, more optimization cannot help:
/// those points run descent on the fixed exact-minimization instance and
/// the gap must flatten at that instance's exact gap. Common random
/// numbers across points make the medians directly comparable.
pub fn sweep_eta_t(ctx: &LabContext) -> Result<SweepResult, LabError> {
    let h = &ctx.config.harness;
    let m = ctx.config.instance.m;
    let k = ctx.config.code.k;
    let rho = ctx.code.rho();
    let sqm = (m as f64).sqrt();
    // Keeps eta at or below the configured default and, through the
    // scheduled lambda_c = 4/(rho eta T), keeps eta * lambda_c <= 1/2.
    let t_min = (8.0 * ctx.config.instance.relax.gd_lambda_c / rho).ceil() as usize;

    let mut points = Vec::new();
    let mut ramp_points = 0usize;
    for j in h.sweep_j_min..=h.sweep_j_max {
        let pow = (1u64 << j) as f64;
        let eta_t = pow * sqm;
        let t_total = ((eta_t / ctx.config.gd.eta).ceil() as usize).max(t_min);
        let eta = eta_t / t_total as f64;
        let on_ramp = pow <= h.plateau_factor * m as f64;
        let (inst, predicted) = if on_ramp {
            ramp_points += 1;
            let (params, _) = schedule(
                m,
                k,
                rho,
                ScheduleMode::Gd { eta, steps: t_total },
                ctx.config.instance.relax,
            )?;
            let point_bound = predicted_bound(&params, Some(eta * t_total as f64));
            let feldman = FeldmanSpec::new(ctx.code.clone(), params.zeta)?;
            (HardInstance::new(params, feldman, ctx.config.instance.brute_force_cap)?, point_bound)
        } else {
            (ctx.erm.clone(), predicted_bound(ctx.erm.params(), None))
        };

        let gcfg = GdConfig {
            eta,
            t_total,
            // The sweep statistic is the last iterate: the suffix ramp of a
            // from-zero average would mask both the ramp law and the
            // plateau.
            suffix_s: t_total - 1,
            record_every: t_total,
            abort_on_violation: false,
        };
        let runs: Vec<(bool, f64, f64, bool)> = (0..h.sweep_trials as u64)
            .into_par_iter()
            .map(|trial| -> Result<_, LabError> {
                let stats = draw_sample(h.master_seed, trial, m, k);
                let record = run_gd(&inst, &stats, &gcfg)?;
                let w = record.suffix_avg;
                let gap_code = inst.code_block_gap(&w)?;
                let mut scratch = Scratch::default();
                let emp = inst.empirical_risk(&w, &stats, &mut scratch)?;
                let pop = inst.risk(&w, RiskScope::Population)?.lo();
                Ok((stats.conditioned, gap_code, pop - emp, record.certificates_ok))
            })
            .collect::<Result<_, _>>()?;

        let conditioned: Vec<&(bool, f64, f64, bool)> =
            runs.iter().filter(|r| r.0).collect();
        let mut code_gaps: Vec<f64> = conditioned.iter().map(|r| r.1).collect();
        let mut full_gaps: Vec<f64> = conditioned.iter().map(|r| r.2).collect();
        points.push(SweepPoint {
            j,
            eta_t,
            eta,
            t_total,
            on_exact_instance: !on_ramp,
            zeta: inst.params().zeta,
            predicted,
            trials: runs.len(),
            conditioned: conditioned.len(),
            median_gap_code: median(&mut code_gaps),
            min_gap_code: code_gaps.iter().copied().fold(f64::INFINITY, f64::min),
            median_gap_full: median(&mut full_gaps),
            all_certs_ok: runs.iter().all(|r| r.3),
        });
    }

    let slope = fit_slope(
        &points[..ramp_points]
            .iter()
            .map(|p| (p.eta_t.ln(), p.median_gap_code.ln()))
            .collect::<Vec<_>>(),
    );
    let plateau = &points[ramp_points..];
    let plateau_ref = plateau.last().map_or(f64::NAN, |p| p.median_gap_code);
    let plateau_max_rel_dev = plateau
        .iter()
        .map(|p| (p.median_gap_code / plateau_ref - 1.0).abs())
        .fold(0.0, f64::max);
    let monotone_ok = points
        .windows(2)
        .all(|w| w[1].median_gap_code >= w[0].median_gap_code - 1e-12);
    Ok(SweepResult { points, ramp_points, slope, plateau_ref, plateau_max_rel_dev, monotone_ok })
}

/// Median under total order; NaN for empty input.
pub(crate) fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Least-squares slope through `(x, y)` pairs.
fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Outcome of running descent to convergence on the exact-minimization
/// instance.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub eta: f64,
    pub t_total: usize,
    pub suffix_s: usize,
    pub epsilon: f64,
    /// `F_S(output) - F_S(minimizer)`.
    pub final_suboptimality: f64,
    /// The output qualifies as an epsilon-approximate empirical minimizer.
    pub within_epsilon: bool,
    /// Generalization gap at the exact minimizer.
    pub exact_gap: f64,
    /// Generalization gap at the descent output.
    pub descent_gap: f64,
    /// Most the gap may shrink in transport from minimizer to output.
    pub transport_budget: f64,
    pub gap_transported_ok: bool,
    pub certificates_ok: bool,
    pub max_traj_dev: f64,
    pub pass: bool,
}

/// Run descent long enough on the exact-minimization instance that its
/// last iterate is an epsilon-approximate minimizer, then check it
/// inherits the exact minimizer's generalization gap up to transport.
pub fn convergence_run(ctx: &LabContext, trial_index: u64) -> Result<ConvergenceReport, LabError> {
    let inst = &ctx.erm;
    let stats = draw_sample(
        ctx.config.harness.master_seed,
        trial_index,
        ctx.config.instance.m,
        ctx.config.code.k,
    );
    let gcfg = GdConfig {
        eta: ctx.config.gd.eta,
        t_total: ctx.config.gd.t,
        // Last iterate: the from-zero average would retain an
        // optimization ramp far larger than epsilon.
        suffix_s: ctx.config.gd.t - 1,
        record_every: ctx.config.gd.record_every,
        abort_on_violation: false,
    };
    let record = run_gd(inst, &stats, &gcfg)?;
    let cmp = compare_trajectory(inst, &stats, gcfg.eta, &record, TRAJ_TOL)?;
    let sol = closed_form_minimizer(inst, &stats)?;
    let mut scratch = Scratch::default();
    let w_out = &record.suffix_avg;
    let f_s_out = inst.empirical_risk(w_out, &stats, &mut scratch)?;
    let final_suboptimality = f_s_out - sol.empirical_risk;
    let within_epsilon = final_suboptimality <= ctx.epsilon;

    let exact_gap =
        inst.risk(&sol.w_star, RiskScope::Population)?.lo() - sol.empirical_risk;
    let descent_gap = inst.risk(w_out, RiskScope::Population)?.lo() - f_s_out;
    let p = inst.params();
    let transport_budget =
        p.lipschitz_budget() * (2.0 * ctx.epsilon / p.alpha()).sqrt() + ctx.epsilon;
    let gap_transported_ok = descent_gap >= exact_gap - transport_budget - RESIDUAL_TOL;
    let certificates_ok = record.certificates_ok
        && cmp.first_divergence.is_none()
        && record.cert_disagreements == 0;
    Ok(ConvergenceReport {
        eta: gcfg.eta,
        t_total: gcfg.t_total,
        suffix_s: gcfg.suffix_s,
        epsilon: ctx.epsilon,
        final_suboptimality,
        within_epsilon,
        exact_gap,
        descent_gap,
        transport_budget,
        gap_transported_ok,
        certificates_ok,
        max_traj_dev: cmp.max_dev,
        pass: within_epsilon && gap_transported_ok && certificates_ok,
    })
}

/// Largest observed subgradient norm against an explicit budget.
#[derive(Debug, Clone, Serialize)]
pub struct LipschitzReport {
    pub samples: usize,
    pub max_norm: f64,
    pub budget: f64,
    pub pass: bool,
}

/// Sample subgradients of the single-draw loss across the ball and check
/// their norms against `budget`.
pub fn lipschitz_audit(
    inst: &HardInstance,
    samples: usize,
    seed: u64,
    budget: f64,
) -> Result<LipschitzReport, LabError> {
    use rand::Rng;
    let k = inst.k();
    let norms: Vec<f64> = (0..samples as u64)
        .into_par_iter()
        .map(|idx| -> Result<f64, LabError> {
            let mut rng = stream(seed, idx, StreamTag::Lipschitz);
            let v = uniform_in_ball(&mut rng, 3 * k);
            let w = ParamVector::new(v[..2 * k].to_vec(), v[2 * k..].to_vec())?;
            let i = rng.random_range(0..k);
            Ok(inst.loss_subgrad(&w, i)?.norm())
        })
        .collect::<Result<_, _>>()?;
    let max_norm = norms.iter().copied().fold(0.0, f64::max);
    Ok(LipschitzReport { samples, max_norm, budget, pass: max_norm <= budget })
}

/// Optional sections of a report.
#[derive(Default)]
pub struct ReportBundle<'a> {
    pub trials: &'a [TrialResult],
    pub sweep: Option<&'a SweepResult>,
    pub concentration: Option<&'a ConcentrationReport>,
    pub convergence: Option<&'a ConvergenceReport>,
    pub acceptance: Option<&'a crate::accept::AcceptanceReport>,
}

/// Where [`emit_report`] wrote its artifacts.
#[derive(Debug, Clone, Serialize)]
pub struct ReportPaths {
    pub trials_csv: PathBuf,
    pub aggregate_json: PathBuf,
    pub summary_txt: PathBuf,
}

/// Write `trials.csv`, `aggregate.json`, and `summary.txt` under the
/// configured output directory.
pub fn emit_report(ctx: &LabContext, bundle: &ReportBundle<'_>) -> Result<ReportPaths, LabError> {
    let dir = &ctx.config.harness.out_dir;
    std::fs::create_dir_all(dir)?;
    let paths = ReportPaths {
        trials_csv: dir.join("trials.csv"),
        aggregate_json: dir.join("aggregate.json"),
        summary_txt: dir.join("summary.txt"),
    };

    let mut w = csv::Writer::from_path(&paths.trials_csv)?;
    w.write_record([
        "seed",
        "mode",
        "m",
        "k",
        "eta",
        "T",
        "s",
        "conditioned",
        "vS_norm",
        "gap_empirical",
        "gap_pop_lo",
        "gap_pop_hi",
        "bound_predicted",
        "certificates_ok",
        "max_traj_dev",
        "runtime_ms",
    ])?;
    for t in bundle.trials {
        w.write_record([
            t.trial_index.to_string(),
            t.mode.to_string(),
            t.m.to_string(),
            t.k.to_string(),
            t.eta.to_string(),
            t.t_total.to_string(),
            t.suffix_s.to_string(),
            t.conditioned.to_string(),
            t.v_s_norm.to_string(),
            t.gap_empirical.to_string(),
            t.gap_pop_lo.to_string(),
            t.gap_pop_hi.to_string(),
            t.bound_predicted.to_string(),
            t.certificates_ok.to_string(),
            t.max_traj_dev.to_string(),
            t.runtime_ms.to_string(),
        ])?;
    }
    w.flush()?;

    let conditioned: Vec<&TrialResult> = bundle.trials.iter().filter(|t| t.conditioned).collect();
    let mut cond_gaps: Vec<f64> = conditioned.iter().map(|t| t.gap_pop_exact).collect();
    let mut cond_code_gaps: Vec<f64> = conditioned.iter().map(|t| t.gap_code).collect();
    let aggregate = serde_json::json!({
        "config": ctx.config,
        "code": {
            "k": ctx.code.k(),
            "n": ctx.code.n(),
            "seed": ctx.code.seed(),
            "attempts": ctx.code.attempts(),
            "min_weight": ctx.code.min_weight(),
            "rho": ctx.code.rho(),
            "fingerprint": format!("{:016x}", ctx.code.fingerprint()),
        },
        "lambda": ctx.lambda,
        "epsilon": ctx.epsilon,
        "regimes": { "erm": ctx.erm_report, "gd": ctx.gd_report },
        "bounds": { "erm": ctx.bound(Mode::Erm), "gd": ctx.bound(Mode::Gd) },
        "trials": {
            "count": bundle.trials.len(),
            "conditioned": conditioned.len(),
            "median_gap_pop_conditioned": median(&mut cond_gaps),
            "median_gap_code_conditioned": median(&mut cond_code_gaps),
            "min_gap_pop_conditioned": cond_gaps.iter().copied().fold(f64::INFINITY, f64::min),
            "all_certificates_ok": bundle.trials.iter().all(|t| t.certificates_ok),
        },
        "sweep": bundle.sweep,
        "concentration": bundle.concentration,
        "convergence": bundle.convergence,
        "acceptance": bundle.acceptance,
    });
    std::fs::write(&paths.aggregate_json, serde_json::to_string_pretty(&aggregate)?)?;

    let mut s = std::fs::File::create(&paths.summary_txt)?;
    writeln!(s, "code: k={} n={} rho={} min_weight={}", ctx.code.k(), ctx.code.n(), ctx.code.rho(), ctx.code.min_weight())?;
    writeln!(s, "lambda={} epsilon={}", ctx.lambda, ctx.epsilon)?;
    writeln!(s, "bound erm={} gd={}", ctx.bound(Mode::Erm), ctx.bound(Mode::Gd))?;
    writeln!(
        s,
        "trials: {} total, {} conditioned, all certificates ok: {}",
        bundle.trials.len(),
        conditioned.len(),
        bundle.trials.iter().all(|t| t.certificates_ok)
    )?;
    if let Some(sw) = bundle.sweep {
        writeln!(
            s,
            "sweep: slope={:.4} plateau_rel_dev={:.3e} monotone={}",
            sw.slope, sw.plateau_max_rel_dev, sw.monotone_ok
        )?;
    }
    if let Some(c) = bundle.concentration {
        writeln!(s, "concentration: {}/{} = {:.4}", c.conditioned, c.trials, c.fraction)?;
    }
    if let Some(c) = bundle.convergence {
        writeln!(
            s,
            "convergence: subopt={:.3e} within_eps={} gap {:.6e} vs exact {:.6e}",
            c.final_suboptimality, c.within_epsilon, c.descent_gap, c.exact_gap
        )?;
    }
    if let Some(a) = bundle.acceptance {
        for o in &a.outcomes {
            writeln!(s, "{}", o.line())?;
        }
        writeln!(s, "acceptance: all_pass={}", a.all_pass)?;
    }
    Ok(paths)
}
