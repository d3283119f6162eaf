use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use hetexplain::io::config::{RunConfig, Stage};
use hetexplain::io::run::run;
use hetexplain::io::write_atomic;
use hetexplain::Error;

/// Explain, evaluate and diagnose meta-path GNN predictors.
#[derive(Parser, Debug)]
#[command(version)]
struct Args {
    /// JSON run configuration; defaults apply to omitted fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// synth | train | explain | evaluate | mpaea | intervene | retrain
    #[arg(long)]
    stage: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds, e.g. 0,1,2.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Fraction of mask elements kept during evaluation.
    #[arg(long)]
    sparsity: Option<f64>,
}

fn load(args: &Args) -> Result<RunConfig, Error> {
    let mut config = match &args.config {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|source| Error::Io {
                path: p.display().to_string(),
                source,
            })?;
            serde_json::from_slice(&bytes)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = &args.stage {
        config.stage = Stage::parse(s)?;
    }
    if let Some(o) = &args.out {
        config.out = o.clone();
    }
    if let Some(s) = &args.seeds {
        config.seeds = s.clone();
    }
    if let Some(s) = args.sparsity {
        config.eval.sparsity = s;
    }
    config.validate()?;
    Ok(config)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let config = match load(&args) {
        Ok(c) => c,
        Err(e) => return fail(&e, None),
    };
    match run(&config) {
        Ok(outcome) => {
            for a in &outcome.artifacts {
                println!("{}", config.out.join(a).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e, Some(&config)),
    }
}

/// Prints a JSON error record to stderr (and `error.json` when an output
/// directory is known); exit code 1 for validation errors, 2 otherwise.
fn fail(e: &Error, config: Option<&RunConfig>) -> ExitCode {
    let code: u8 = if e.is_validation() { 1 } else { 2 };
    let record = serde_json::json!({
        "error": e.to_string(),
        "kind": if code == 1 { "validation" } else { "runtime" },
        "stage": config.map(|c| c.stage.as_str()),
        "exit_code": code,
    });
    eprintln!("{record}");
    if let Some(c) = config {
        let _ = write_atomic(&c.out.join("error.json"), format!("{record:#}\n").as_bytes());
    }
    ExitCode::from(code)
}
