use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use eigenmeasure_cli::commands::{self, exit, CliError, Command};
use eigenmeasure_cli::config::RunConfig;

#[derive(Parser)]
#[command(name = "eigenmeasure", version, about = "Eigenvalue-optimal measures and sphere-valued eigenmaps")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Closed-form energy and index table for equator maps.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        m_min: Option<usize>,
        #[arg(long)]
        m_max: Option<usize>,
        #[arg(long)]
        k_min: Option<usize>,
        #[arg(long)]
        k_max: Option<usize>,
    },
    /// Compares analytic and discretized index counts per angular degree.
    IndexVerify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        m_max: Option<usize>,
    },
    /// Lowest eigenpairs of a mesh with a density.
    Spectrum {
        #[command(flatten)]
        common: Common,
    },
    /// Maximizes the normalized k-th eigenvalue over capped densities.
    Optimize {
        #[command(flatten)]
        common: Common,
    },
    /// Upper bound on the first normalized eigenvalue of a sphere mesh.
    HerschCheck {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Run configuration file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn load(common: &Common, extra: &[(&str, Option<usize>)]) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    for pair in &common.overrides {
        cfg.set_pair(pair)?;
    }
    for (key, value) in extra {
        if let Some(v) = value {
            cfg.set(key, &v.to_string())?;
        }
    }
    Ok(cfg)
}

fn write_files(dir: &Path, files: &[(String, String)]) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    for (name, contents) in files {
        std::fs::write(dir.join(name), contents)?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    let (command, cfg) = match &cli.command {
        Sub::Oracle { common, m_min, m_max, k_min, k_max } => (
            Command::Oracle,
            load(common, &[("m_min", *m_min), ("m_max", *m_max), ("k_min", *k_min), ("k_max", *k_max)])?,
        ),
        Sub::IndexVerify { common, m_max } => (Command::IndexVerify, load(common, &[("m_max", *m_max)])?),
        Sub::Spectrum { common } => (Command::Spectrum, load(common, &[])?),
        Sub::Optimize { common } => (Command::Optimize, load(common, &[])?),
        Sub::HerschCheck { common } => (Command::HerschCheck, load(common, &[])?),
    };
    let outcome = commands::run(command, &cfg)?;
    write_files(&cfg.out_dir(), &outcome.files)?;
    print!("{}", outcome.stdout);
    Ok(outcome.status.exit_code())
}

fn main() -> ExitCode {
    let code = match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    debug_assert!((exit::OK..=exit::IO).contains(&code));
    ExitCode::from(code as u8)
}
