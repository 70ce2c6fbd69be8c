//! Layered run configuration: defaults, then a TOML file, then dotted-path
//! command-line overrides, validated once up front so every later stage can
//! trust the numbers it is handed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::code::{K_MAX, K_MIN};
use crate::instance::{epsilon_strongly_convex, lambda_default, Mode, RelaxMultipliers};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("bad override {key:?}: {reason}")]
    BadOverride { key: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Code construction parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodeConfig {
    /// Message length; the packed-word scans require `2 <= k <= 28`.
    pub k: usize,
    /// Target relative distance for rejection sampling.
    pub rho: f64,
    pub seed: u64,
    pub max_retries: u32,
}

impl Default for CodeConfig {
    fn default() -> Self {
        Self { k: 16, rho: 0.10, seed: 7, max_retries: 20 }
    }
}

/// Instance shape and regime knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceConfig {
    /// Default mode for single-trial runs.
    pub mode: Mode,
    /// Sample size; the standard shape ties it to the code by `k = 2m`.
    pub m: usize,
    /// Regularization for the exact-minimization regime; defaults to
    /// `min(7/m^{3/2}, 1/sqrt(m))`.
    pub lambda: Option<f64>,
    /// Suboptimality budget for approximate-minimizer probes; defaults to
    /// the strongly convex budget at the effective lambda and measured
    /// distance.
    pub epsilon: Option<f64>,
    /// Largest `k` for which exhaustive `2^k` evaluations are allowed.
    pub brute_force_cap: usize,
    /// Permit `k != 2m` (closed forms still hold; the zero-mean identity
    /// for the centered indicators does not).
    pub allow_nonstandard: bool,
    pub relax: RelaxMultipliers,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Erm,
            m: 8,
            lambda: None,
            epsilon: None,
            brute_force_cap: 20,
            allow_nonstandard: false,
            relax: RelaxMultipliers::default(),
        }
    }
}

/// Descent defaults for trials and the convergence run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GdSection {
    pub eta: f64,
    /// Step count `T`.
    pub t: usize,
    /// Output suffix start; `0` averages everything after the origin.
    pub suffix_s: usize,
    pub record_every: usize,
    pub abort_on_violation: bool,
}

impl Default for GdSection {
    fn default() -> Self {
        Self { eta: 0.2, t: 905, suffix_s: 0, record_every: 1, abort_on_violation: false }
    }
}

/// Experiment sizes, seeds, and output location.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub master_seed: u64,
    /// Exact-minimization trials in the Monte Carlo sweep.
    pub trials: usize,
    /// Descent trials with per-step certificates.
    pub gd_trials: usize,
    /// Trials per grid point in the horizon sweep.
    pub sweep_trials: usize,
    /// Random optimality probes defending each exact minimizer.
    pub probes_per_trial: usize,
    /// Trials that additionally probe approximate minimizers.
    pub eps_trials: usize,
    pub eps_probes_per_trial: usize,
    /// Random codeword pairs checked against the distance bound.
    pub pair_samples: usize,
    /// Random points for the penalty argmax cross-check.
    pub argmax_queries: usize,
    /// Random points for the subgradient-norm audit.
    pub lipschitz_samples: usize,
    /// Samples drawn for the concentration estimate.
    pub concentration_trials: usize,
    /// Random pairs for the curvature probe.
    pub convexity_pairs: usize,
    /// Horizon grid runs `eta T = 2^j sqrt(m)` for `j` in this range.
    pub sweep_j_min: u32,
    pub sweep_j_max: u32,
    /// Grid points with `2^j <= plateau_factor * m` use per-point
    /// schedules; later ones descend on the fixed exact-minimization
    /// instance, where the gap must flatten.
    pub plateau_factor: f64,
    /// Worker threads; `0` keeps the pool default.
    pub threads: usize,
    pub out_dir: PathBuf,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            master_seed: 20260823,
            trials: 500,
            gd_trials: 100,
            sweep_trials: 24,
            probes_per_trial: 120,
            eps_trials: 25,
            eps_probes_per_trial: 200,
            pair_samples: 10_000,
            argmax_queries: 4000,
            lipschitz_samples: 4000,
            concentration_trials: 2000,
            convexity_pairs: 200,
            sweep_j_min: 1,
            sweep_j_max: 6,
            plateau_factor: 2.0,
            threads: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// The full validated configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabConfig {
    pub code: CodeConfig,
    pub instance: InstanceConfig,
    pub gd: GdSection,
    pub harness: HarnessConfig,
}

impl LabConfig {
    /// Regularization actually used: the configured value, else the
    /// balancing default capped at the strong-convexity budget.
    pub fn effective_lambda(&self) -> f64 {
        self.instance
            .lambda
            .unwrap_or_else(|| {
                let m = self.instance.m as f64;
                lambda_default(self.instance.m).min(1.0 / m.sqrt())
            })
    }

    /// Suboptimality budget actually used, given the measured distance.
    pub fn effective_epsilon(&self, lambda: f64, rho: f64) -> f64 {
        self.instance.epsilon.unwrap_or_else(|| epsilon_strongly_convex(lambda, rho))
    }
}

/// Load defaults, merge an optional TOML file, apply `key=value` overrides
/// with dotted paths, and validate the result.
pub fn load_config(
    path: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<LabConfig, ConfigError> {
    let mut table: toml::Table = match path {
        Some(p) => std::fs::read_to_string(p)?.parse()?,
        None => toml::Table::new(),
    };
    for (key, raw) in overrides {
        apply_override(&mut table, key, raw)?;
    }
    let config: LabConfig = toml::Value::Table(table).try_into()?;
    validate(&config)?;
    Ok(config)
}

/// Split a command-line `key=value` pair.
pub fn parse_override(spec: &str) -> Result<(String, String), ConfigError> {
    match spec.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(ConfigError::BadOverride {
            key: spec.to_string(),
            reason: "expected dotted.path=value".into(),
        }),
    }
}

fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<(), ConfigError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::BadOverride {
            key: key.to_string(),
            reason: "empty path segment".into(),
        });
    }
    let leaf = parts.pop().expect("split always yields at least one segment");
    let mut cur = table;
    for part in parts {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| ConfigError::BadOverride {
            key: key.to_string(),
            reason: format!("path segment {part:?} is not a table"),
        })?;
    }
    cur.insert(leaf.to_string(), parse_value(raw));
    Ok(())
}

/// Parse an override value with TOML semantics; anything that does not
/// parse (a bare word like `out_dir=results`) becomes a string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn validate(c: &LabConfig) -> Result<(), ConfigError> {
    let fail = |msg: String| Err(ConfigError::Invalid(msg));
    if !(K_MIN..=K_MAX).contains(&c.code.k) {
        return fail(format!("code.k = {} outside [{K_MIN}, {K_MAX}]", c.code.k));
    }
    if !(c.code.rho > 0.0 && c.code.rho < 0.5) {
        return fail(format!("code.rho = {} outside (0, 0.5)", c.code.rho));
    }
    if c.code.max_retries == 0 {
        return fail("code.max_retries must be at least 1".into());
    }
    if c.instance.m == 0 {
        return fail("instance.m must be at least 1".into());
    }
    if !c.instance.allow_nonstandard && c.code.k != 2 * c.instance.m {
        return fail(format!(
            "code.k = {} must equal 2m = {} (set instance.allow_nonstandard to bypass)",
            c.code.k,
            2 * c.instance.m
        ));
    }
    if c.code.k > c.instance.brute_force_cap {
        return fail(format!(
            "code.k = {} exceeds instance.brute_force_cap = {}; the harness needs exhaustive scans",
            c.code.k, c.instance.brute_force_cap
        ));
    }
    let budget = 1.0 / (c.instance.m as f64).sqrt();
    if let Some(lambda) = c.instance.lambda {
        if !(lambda > 0.0 && lambda <= budget * (1.0 + 1e-12)) {
            return fail(format!("instance.lambda = {lambda} outside (0, 1/sqrt(m) = {budget}]"));
        }
    }
    if let Some(eps) = c.instance.epsilon {
        if !(eps > 0.0 && eps.is_finite()) {
            return fail(format!("instance.epsilon = {eps} must be positive and finite"));
        }
    }
    if !(c.gd.eta > 0.0 && c.gd.eta < 1.0) {
        return fail(format!("gd.eta = {} outside (0, 1)", c.gd.eta));
    }
    if c.gd.t == 0 {
        return fail("gd.t must be at least 1".into());
    }
    if c.gd.suffix_s >= c.gd.t {
        return fail(format!("gd.suffix_s = {} must be below gd.t = {}", c.gd.suffix_s, c.gd.t));
    }
    if c.gd.record_every == 0 {
        return fail("gd.record_every must be at least 1".into());
    }
    if c.gd.eta * c.gd.t as f64 <= (c.instance.m as f64).sqrt() {
        return fail(format!(
            "gd horizon eta*t = {} must exceed sqrt(m) = {}",
            c.gd.eta * c.gd.t as f64,
            (c.instance.m as f64).sqrt()
        ));
    }
    let h = &c.harness;
    for (name, v) in [
        ("harness.trials", h.trials),
        ("harness.gd_trials", h.gd_trials),
        ("harness.sweep_trials", h.sweep_trials),
        ("harness.probes_per_trial", h.probes_per_trial),
        ("harness.eps_trials", h.eps_trials),
        ("harness.eps_probes_per_trial", h.eps_probes_per_trial),
        ("harness.pair_samples", h.pair_samples),
        ("harness.argmax_queries", h.argmax_queries),
        ("harness.lipschitz_samples", h.lipschitz_samples),
        ("harness.concentration_trials", h.concentration_trials),
        ("harness.convexity_pairs", h.convexity_pairs),
    ] {
        if v == 0 {
            return fail(format!("{name} must be at least 1"));
        }
    }
    if h.sweep_j_min == 0 {
        return fail("harness.sweep_j_min must be at least 1".into());
    }
    if h.sweep_j_max < h.sweep_j_min || h.sweep_j_max > 16 {
        return fail(format!(
            "harness.sweep_j_max = {} must lie in [sweep_j_min = {}, 16]",
            h.sweep_j_max, h.sweep_j_min
        ));
    }
    if !(h.plateau_factor >= 1.0 && h.plateau_factor.is_finite()) {
        return fail(format!("harness.plateau_factor = {} must be at least 1", h.plateau_factor));
    }
    if h.out_dir.as_os_str().is_empty() {
        return fail("harness.out_dir must not be empty".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_are_valid_and_complete() {
        let c = load_config(None, &[]).unwrap();
        assert_eq!(c.code.k, 16);
        assert_eq!(c.instance.m, 8);
        assert_eq!(c.harness.trials, 500);
        assert_eq!(c.gd.t, 905);
        assert!(c.instance.relax.enabled);
        // Effective lambda balances the budget at the default m.
        let lambda = c.effective_lambda();
        assert_eq!(lambda, 7.0 / 8.0f64.powf(1.5));
        assert!(lambda <= 1.0 / 8.0f64.sqrt());
        let eps = c.effective_epsilon(lambda, 0.125);
        assert!(eps > 0.0 && eps < 1e-9);
    }

    #[test]
    fn file_values_override_defaults() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            "[code]\nk = 8\nseed = 3\n[instance]\nm = 4\n[harness]\ntrials = 12\n[gd]\nt = 64"
        )
        .unwrap();
        let c = load_config(Some(f.path()), &[]).unwrap();
        assert_eq!(c.code.k, 8);
        assert_eq!(c.code.seed, 3);
        assert_eq!(c.code.rho, 0.10, "untouched fields keep defaults");
        assert_eq!(c.instance.m, 4);
        assert_eq!(c.harness.trials, 12);
        assert_eq!(c.gd.t, 64);
    }

    #[test]
    fn overrides_beat_the_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "[harness]\ntrials = 12").unwrap();
        let overrides = vec![
            ("harness.trials".to_string(), "34".to_string()),
            ("gd.eta".to_string(), "0.25".to_string()),
            ("harness.out_dir".to_string(), "results".to_string()),
            ("instance.relax.enabled".to_string(), "true".to_string()),
        ];
        let c = load_config(Some(f.path()), &overrides).unwrap();
        assert_eq!(c.harness.trials, 34);
        assert_eq!(c.gd.eta, 0.25);
        assert_eq!(c.harness.out_dir, PathBuf::from("results"));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "[harness]\ntirals = 12").unwrap();
        assert!(matches!(load_config(Some(f.path()), &[]), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn cross_validation_catches_shape_mismatches() {
        let cases = [
            vec![("code.k".to_string(), "8".to_string())], // k != 2m
            vec![("instance.lambda".to_string(), "0.9".to_string())], // over budget
            vec![
                ("gd.t".to_string(), "10".to_string()),
                ("gd.suffix_s".to_string(), "10".to_string()),
            ],
            vec![("gd.t".to_string(), "10".to_string())], // horizon too short
            vec![("instance.brute_force_cap".to_string(), "10".to_string())],
            vec![("harness.sweep_j_max".to_string(), "0".to_string())],
        ];
        for overrides in cases {
            assert!(
                matches!(load_config(None, &overrides), Err(ConfigError::Invalid(_))),
                "expected rejection for {overrides:?}"
            );
        }
    }

    #[test]
    fn override_parsing_is_strict_about_shape() {
        assert!(parse_override("a.b=3").is_ok());
        assert!(matches!(parse_override("nonsense"), Err(ConfigError::BadOverride { .. })));
        assert!(matches!(parse_override("=3"), Err(ConfigError::BadOverride { .. })));
        // A path segment that is not a table cannot be traversed.
        let overrides = vec![
            ("harness.trials".to_string(), "3".to_string()),
            ("harness.trials.deep".to_string(), "4".to_string()),
        ];
        assert!(matches!(load_config(None, &overrides), Err(ConfigError::BadOverride { .. })));
    }
}
