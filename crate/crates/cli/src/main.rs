mod config;
mod recipes;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::{key_listing, Config, Recipe};
use recipes::Failure;

fn after_help() -> String {
    format!(
        "Config keys and defaults (JSON; nested keys are objects, unknown keys are rejected):\n{}\n\n\
         Operation modes are table rows 1-8; row 8 also needs `v_inhibit` (V).\n\
         Environment: YFLASH_SIM_THREADS caps the worker threads.\n\
         Exit codes: 0 ok, 2 config error, 3 numerical failure, 4 I/O error.",
        key_listing()
    )
}

/// Y-Flash device and array simulator.
#[derive(Parser, Debug)]
#[command(name = "yflash-sim", version, after_help = after_help())]
struct Cli {
    recipe: Recipe,
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Population seed; overrides `population.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Print nothing on success.
    #[arg(long)]
    quiet: bool,
    /// Validate the config and exit without simulating.
    #[arg(long)]
    check: bool,
}

fn threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("YFLASH_SIM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Config(format!("YFLASH_SIM_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Config(e.to_string()))
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    threads()?;
    let text = std::fs::read_to_string(&cli.config)
        .map_err(|e| Failure::Io(format!("{}: {e}", cli.config.display())))?;
    let mut cfg =
        Config::parse(&text).map_err(|e| Failure::Config(format!("{}: {e}", cli.config.display())))?;
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.population.seed = seed;
    }
    cfg.validate(cli.recipe).map_err(Failure::Config)?;
    if cli.check {
        if !cli.quiet {
            println!("{}: config ok", cli.config.display());
        }
        return Ok(());
    }
    let base = cli.config.parent().map(PathBuf::from).unwrap_or_default();
    let run = recipes::run(cli.recipe, &cfg, &base)?;
    recipes::write(&cfg.out, &run, &cfg)?;
    if !cli.quiet {
        println!("{}", run.summary);
        for (name, _) in &run.files {
            println!("wrote {}", cfg.out.join(name).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.record());
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
