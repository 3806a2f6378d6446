use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qkd_cli::scenario::{self, Format, Overrides};
use qkd_cli::{cmd_bell, cmd_rates, cmd_run, cmd_sweep, run_exit_code, Axis, CliError, SweepSpec};
use qkd_core::rates::RateInputs;

/// Quantum key distribution simulator.
///
/// Exit status: 0 on success, 2 when a run aborts or yields no key,
/// 1 on usage or configuration errors.
#[derive(Parser, Debug)]
#[command(name = "qkdsim", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Common {
    /// Overrides the scenario seed
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the number of pulses (or pairs)
    #[arg(long)]
    pulses: Option<usize>,
    /// text, csv or json
    #[arg(long)]
    format: Option<Format>,
    /// Write the report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            pulses: self.pulses,
            format: self.format,
            out: self.out.clone(),
        }
    }
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Simulate a scenario and distill a key
    Run {
        /// Scenario file, or the name of a bundled scenario
        scenario: String,
        #[command(flatten)]
        common: Common,
    },
    /// Repeat a scenario along one parameter axis
    Sweep {
        scenario: String,
        /// length_km, mu or epsilon
        #[arg(long)]
        axis: Axis,
        #[arg(long, allow_negative_numbers = true)]
        from: f64,
        #[arg(long, allow_negative_numbers = true)]
        to: f64,
        #[arg(long)]
        steps: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate the analytic rate formulas
    Rates {
        #[arg(long, default_value = "bb84")]
        protocol: String,
        /// Error rate
        #[arg(long)]
        epsilon: f64,
        /// Mean photon number
        #[arg(long)]
        mu: Option<f64>,
        /// Total transmittance
        #[arg(long)]
        eta: Option<f64>,
        /// Multi-photon fraction among detections
        #[arg(long)]
        delta: Option<f64>,
        /// Dark-count probability per gate
        #[arg(long, default_value_t = 0.0)]
        p_dark: f64,
        /// B92 state overlap
        #[arg(long)]
        overlap: Option<f64>,
        #[arg(long)]
        format: Option<Format>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// CHSH test on an E91 scenario
    Bell {
        scenario: String,
        #[command(flatten)]
        common: Common,
    },
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(cmd: Cmd) -> Result<i32, CliError> {
    match cmd {
        Cmd::Run { scenario, common } => {
            let s = scenario::load(&scenario, &common.overrides())?;
            let report = cmd_run(&s)?;
            emit(&report.render(s.format.unwrap_or(Format::Text)), s.out.as_ref())?;
            Ok(run_exit_code(&report))
        }
        Cmd::Sweep {
            scenario,
            axis,
            from,
            to,
            steps,
            common,
        } => {
            let s = scenario::load(&scenario, &common.overrides())?;
            let report = cmd_sweep(&s, &SweepSpec { axis, from, to, steps })?;
            emit(&report.render(s.format.unwrap_or(Format::Csv)), s.out.as_ref())?;
            Ok(0)
        }
        Cmd::Rates {
            protocol,
            epsilon,
            mu,
            eta,
            delta,
            p_dark,
            overlap,
            format,
            out,
        } => {
            let report = cmd_rates(
                &protocol,
                RateInputs {
                    epsilon,
                    mu,
                    eta,
                    delta,
                    p_dark,
                    overlap,
                },
            );
            let text = match format.unwrap_or(Format::Text) {
                Format::Text => report.to_text(),
                Format::Csv => format!("{}\n{}\n", qkd_core::rates::RateReport::csv_header(), report.csv_row()),
                Format::Json => serde_json::to_string_pretty(&report).expect("reports serialize") + "\n",
            };
            emit(&text, out.as_ref())?;
            Ok(0)
        }
        Cmd::Bell { scenario, common } => {
            let s = scenario::load(&scenario, &common.overrides())?;
            let report = cmd_bell(&s)?;
            emit(&report.render(s.format.unwrap_or(Format::Text)), s.out.as_ref())?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.cmd) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("qkdsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
