use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gpc_phs::experiment::{Experiment, ExperimentConfig, StageStatus};
use gpc_phs::{Error, Result};

/// Learn the microactuator as a GP-PHS and synthesize a robust IDA-PBC controller.
#[derive(Debug, Parser)]
#[command(name = "gpc-phs", version)]
struct Cli {
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the plant and write noisy samples (data.csv).
    GenerateData { config: PathBuf },
    /// Filter the data and train the GP-PHS (model.json).
    Train { config: PathBuf },
    /// Solve the equilibrium shift and build the desired closed loop (design.json).
    Synthesize { config: PathBuf },
    /// Check matching and robustness on the grid (certificate.json); exit code 2 on failure.
    Certify { config: PathBuf },
    /// Simulate the closed loop (closed_loop.csv).
    Simulate { config: PathBuf },
    /// Data-size sweep (sweep.csv).
    Sweep { config: PathBuf },
    /// Every stage plus report.json; exit code 2 when the certificate fails.
    Pipeline { config: PathBuf },
    /// Print the default microactuator configuration.
    DefaultConfig,
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut config = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn print_stages(exp: &Experiment, quiet: bool) {
    if quiet {
        return;
    }
    for (stage, status) in exp.stages() {
        let status = match status {
            StageStatus::Computed => "computed",
            StageStatus::Reused => "reused",
        };
        println!("{stage}: {status}");
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let say = |line: String| {
        if !cli.quiet {
            println!("{line}");
        }
    };
    let config_path = match &cli.command {
        Command::DefaultConfig => {
            println!("{}", ExperimentConfig::microactuator().to_json());
            return Ok(ExitCode::SUCCESS);
        }
        Command::GenerateData { config }
        | Command::Train { config }
        | Command::Synthesize { config }
        | Command::Certify { config }
        | Command::Simulate { config }
        | Command::Sweep { config }
        | Command::Pipeline { config } => config,
    };
    let config = load_config(config_path, cli.seed)?;
    let n = config.sampling.samples;
    let mut exp = Experiment::new(config, &cli.out)?;
    let mut code = ExitCode::SUCCESS;
    match &cli.command {
        Command::GenerateData { .. } => {
            let data = exp.data(n)?;
            say(format!(
                "wrote {} samples to {}",
                data.len(),
                cli.out.join("data.csv").display()
            ));
        }
        Command::Train { .. } => {
            let trained = exp.model(n)?;
            let h = trained.model.hyperparameters();
            say(format!(
                "b = {:.6}, phi_R = {:?}, nlml = {:.6}",
                h.phi_r[0], h.phi_r, trained.nlml
            ));
        }
        Command::Synthesize { .. } => {
            let trained = exp.model(n)?;
            let design = exp.design(&trained)?;
            say(format!("x_d = {:?}, c = {:.6}", design.x_d, design.c));
        }
        Command::Certify { .. } => {
            let trained = exp.model(n)?;
            let design = exp.design(&trained)?;
            let cert = exp.certificate(&trained, &design)?;
            say(format!(
                "certificate {}: max matching residual {:.3e} at {:?}, min robustness margin {:.3e} at {:?}, {} violating nodes",
                if cert.passed { "passed" } else { "FAILED" },
                cert.max_matching_residual,
                cert.worst_residual_point,
                cert.min_robustness_margin,
                cert.worst_margin_point,
                cert.violations
            ));
            if !cert.passed {
                code = ExitCode::from(2);
            }
        }
        Command::Simulate { .. } => {
            let trained = exp.model(n)?;
            let design = exp.design(&trained)?;
            let run = exp.closed_loop(&trained, &design)?;
            let s = &run.summary;
            say(format!(
                "x(T) = {:?}, |x1 - target| = {:.3e}, |grad H_d| = {:.3e}, max H_d increase {:.3e}",
                s.terminal_state, s.x1_error, s.terminal_gradient_norm, s.max_hd_increase
            ));
        }
        Command::Sweep { .. } => {
            for row in exp.sweep()? {
                match (&row.time_averaged_mse, &row.error) {
                    (Some(mse), _) => say(format!("N = {}: time-averaged MSE {mse:.6e}", row.samples)),
                    (None, Some(e)) => say(format!("N = {}: failed: {e}", row.samples)),
                    (None, None) => {}
                }
            }
        }
        Command::Pipeline { .. } => {
            let report = exp.pipeline()?;
            say(format!(
                "b = {:.6}, certificate {}, |x1(T) - target| = {:.3e}; report in {}",
                report.damping_estimate,
                if report.certificate.passed { "passed" } else { "FAILED" },
                report.closed_loop.x1_error,
                cli.out.join("report.json").display()
            ));
            if !report.certificate.passed {
                code = ExitCode::from(2);
            }
        }
        Command::DefaultConfig => unreachable!("handled above"),
    }
    print_stages(&exp, cli.quiet);
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(1)
        }
    }
}
