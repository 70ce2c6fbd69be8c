//! Build and verify the binary codes the instances are built around.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Parser, Subcommand};
use scolab::code::BinaryCode;

#[derive(Parser)]
#[command(name = "code", version, about = "Distance-checked binary code construction")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Search for a code meeting the target distance and save it.
    Build {
        /// Message length (2..=28).
        #[arg(long)]
        k: usize,
        /// Target relative minimum distance.
        #[arg(long)]
        rho: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Retry budget for the randomized search.
        #[arg(long, default_value_t = 20)]
        retries: u32,
        /// Output file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Load a saved code, re-verify it exhaustively, and print a summary.
    Verify {
        /// Input file.
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn summary(code: &BinaryCode) -> serde_json::Value {
    serde_json::json!({
        "k": code.k(),
        "n": code.n(),
        "seed": code.seed(),
        "attempts": code.attempts(),
        "min_weight": code.min_weight(),
        "rho": code.rho(),
        "fingerprint": format!("{:016x}", code.fingerprint()),
    })
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> anyhow::Result<()> {
    match Cli::parse().cmd {
        Cmd::Build { k, rho, seed, retries, out } => {
            let code = BinaryCode::build(k, rho, seed, retries).context("code search failed")?;
            code.save(&out).with_context(|| format!("writing {}", out.display()))?;
            println!("{}", serde_json::to_string_pretty(&summary(&code))?);
        }
        Cmd::Verify { input } => {
            let code = BinaryCode::load(&input)
                .with_context(|| format!("verifying {}", input.display()))?;
            println!("{}", serde_json::to_string_pretty(&summary(&code))?);
        }
    }
    Ok(())
}
