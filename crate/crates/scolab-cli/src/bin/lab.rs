//! Experiment front end: one subcommand per experiment, JSON on stdout,
//! human-readable failures on stderr, exit code 0 only when every check
//! the subcommand ran came back green.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Parser, Subcommand, ValueEnum};
use scolab::accept::run_acceptance;
use scolab::config::{load_config, parse_override};
use scolab::harness::{
    convergence_run, emit_report, mc_concentration, run_trial, run_trials, sweep_eta_t,
    LabContext, ReportBundle,
};
use scolab::instance::Mode;

#[derive(Parser)]
#[command(name = "lab", version, about = "Adversarial-instance overfitting laboratory")]
struct Cli {
    /// TOML configuration file; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. --set harness.trials=50.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Shorthand for --set harness.master_seed=N.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Shorthand for --set harness.threads=N.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Shorthand for --set harness.out_dir=DIR.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    /// Closed-form exact empirical minimization.
    Erm,
    /// Projected subgradient descent.
    Gd,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Erm => Mode::Erm,
            ModeArg::Gd => Mode::Gd,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one trial and print its record.
    Trial {
        #[arg(long, value_enum, default_value_t = ModeArg::Erm)]
        mode: ModeArg,
        /// Trial index; selects the sample deterministically.
        #[arg(long, default_value_t = 0)]
        index: u64,
    },
    /// Run the configured trial batches, sweep, concentration, and
    /// convergence run, then write the report files.
    Run,
    /// Sweep the descent horizon and print the fitted shape.
    Sweep,
    /// Estimate the probability of the sample-signature event.
    Concentration,
    /// Descend to an epsilon-approximate minimizer and check its gap.
    Converge {
        #[arg(long, default_value_t = 0)]
        index: u64,
    },
    /// Run the full ten-criterion acceptance gate.
    Accept,
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    let mut overrides: Vec<(String, String)> = cli
        .set
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<_, _>>()
        .context("bad --set override")?;
    if let Some(seed) = cli.seed {
        overrides.push(("harness.master_seed".into(), seed.to_string()));
    }
    if let Some(threads) = cli.threads {
        overrides.push(("harness.threads".into(), threads.to_string()));
    }
    if let Some(out) = &cli.out {
        overrides.push(("harness.out_dir".into(), out.display().to_string()));
    }
    let config = load_config(cli.config.as_deref(), &overrides).context("configuration rejected")?;
    if config.harness.threads > 0 {
        // Ignore the error if a pool already exists (repeated init in-process).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(config.harness.threads)
            .build_global();
    }

    let pass = match cli.cmd {
        Cmd::Trial { mode, index } => {
            let ctx = LabContext::new(config)?;
            let trial = run_trial(&ctx, mode.into(), index)?;
            println!("{}", serde_json::to_string_pretty(&trial)?);
            if !trial.certificates_ok {
                eprintln!("trial {index}: certificates failed");
            }
            trial.certificates_ok
        }
        Cmd::Run => {
            let ctx = LabContext::new(config)?;
            let mut trials = run_trials(&ctx, Mode::Erm, ctx.config.harness.trials)?;
            trials.extend(run_trials(&ctx, Mode::Gd, ctx.config.harness.gd_trials)?);
            let sweep = sweep_eta_t(&ctx)?;
            let concentration = mc_concentration(
                ctx.config.instance.m,
                ctx.config.code.k,
                ctx.config.harness.concentration_trials,
                ctx.config.harness.master_seed,
            );
            let convergence = convergence_run(&ctx, 0)?;
            let paths = emit_report(
                &ctx,
                &ReportBundle {
                    trials: &trials,
                    sweep: Some(&sweep),
                    concentration: Some(&concentration),
                    convergence: Some(&convergence),
                    acceptance: None,
                },
            )?;
            println!("{}", serde_json::to_string_pretty(&paths)?);
            let certs = trials.iter().all(|t| t.certificates_ok);
            if !certs {
                eprintln!("some trial certificates failed; see {}", paths.trials_csv.display());
            }
            certs && sweep.monotone_ok && convergence.pass
        }
        Cmd::Sweep => {
            let ctx = LabContext::new(config)?;
            let sweep = sweep_eta_t(&ctx)?;
            println!("{}", serde_json::to_string_pretty(&sweep)?);
            sweep.monotone_ok && sweep.points.iter().all(|p| p.all_certs_ok)
        }
        Cmd::Concentration => {
            let report = mc_concentration(
                config.instance.m,
                config.code.k,
                config.harness.concentration_trials,
                config.harness.master_seed,
            );
            println!("{}", serde_json::to_string_pretty(&report)?);
            true
        }
        Cmd::Converge { index } => {
            let ctx = LabContext::new(config)?;
            let report = convergence_run(&ctx, index)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.pass {
                eprintln!(
                    "convergence run failed: suboptimality {:.3e} vs epsilon {:.3e}, transported gap ok: {}",
                    report.final_suboptimality, report.epsilon, report.gap_transported_ok
                );
            }
            report.pass
        }
        Cmd::Accept => {
            let out_dir = config.harness.out_dir.clone();
            let report = run_acceptance(&config, &mut |o| println!("{}", o.line()))?;
            std::fs::create_dir_all(&out_dir)?;
            let path = out_dir.join("acceptance.json");
            std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
            println!(
                "acceptance: {} in {:.1} s (details: {})",
                if report.all_pass { "PASS" } else { "FAIL" },
                report.elapsed_s,
                path.display()
            );
            if !report.all_pass {
                for o in report.outcomes.iter().filter(|o| !o.pass) {
                    eprintln!("{}", o.line());
                }
            }
            report.all_pass
        }
    };
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
