//! `fint` — first-integral toolkit over system-definition files.
//!
//! Subcommands: `curvature`, `kt-solve`, `fi-solve`, `verify`, `report`.
//! Exit codes: 0 success, 2 validation error, 3 ill-conditioned solve,
//! 4 certification failure.

use clap::{Args, Parser, Subcommand, ValueEnum};
use first_integrals::corpus::{
    cmd_curvature, cmd_fi_solve, cmd_kt_solve, cmd_report, cmd_verify, CommandOptions,
    FamilyArg,
};
use first_integrals::expr::Precision;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fint", version, about = "Discover and certify first integrals of holonomic dynamical systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed for every pseudo-random draw (sampling, parameter values).
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Minimum number of sample points for solves.
    #[arg(long)]
    points: Option<usize>,
    /// Drift tolerance override for verification.
    #[arg(long)]
    tol: Option<f64>,
    /// Evaluation precision for drift statistics.
    #[arg(long, value_enum, default_value_t = PrecisionArg::Double)]
    precision: PrecisionArg,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    Double,
    Extended,
}

impl Common {
    fn options(&self) -> CommandOptions {
        CommandOptions {
            seed: self.seed,
            points: self.points,
            tol: self.tol,
            precision: match self.precision {
                PrecisionArg::Double => Precision::Double,
                PrecisionArg::Extended => Precision::Extended,
            },
            out: self.out.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the curvature tensor of the system's connection.
    Curvature {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Solve for generalized Killing tensors of a given rank.
    KtSolve {
        file: PathBuf,
        /// Tensor rank (1 = Killing vectors).
        #[arg(long)]
        rank: usize,
        /// Search for vectors generating reducible Killing tensors instead.
        #[arg(long)]
        reducible: bool,
        /// Basis override, e.g. "poly(2) + poly(2, exp(12*beta*w/u^2))".
        #[arg(long)]
        basis: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Assemble an FI family at a given order and solve for its members.
    FiSolve {
        file: PathBuf,
        /// FI order m.
        #[arg(long)]
        order: usize,
        /// Family: integral1 | integral2 | split.
        #[arg(long)]
        family: String,
        /// Time-polynomial degree for integral1.
        #[arg(long, default_value_t = 0)]
        n: usize,
        /// Exponent constant for integral2 (expression, e.g. "2" or "lambda").
        #[arg(long)]
        lambda: Option<String>,
        /// Parity-split level for split.
        #[arg(long, default_value_t = 0)]
        ell: usize,
        /// Basis override applied to slots without an [ansatz] entry.
        #[arg(long)]
        basis: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Certify FI files symbolically and by trajectory drift.
    Verify {
        file: PathBuf,
        /// FI coefficient files to verify.
        #[arg(required = true)]
        fi_files: Vec<PathBuf>,
        /// Number of initial conditions.
        #[arg(long)]
        ics: Option<usize>,
        /// Integration span [0, T].
        #[arg(long)]
        span: Option<f64>,
        /// Dump per-trajectory tables into this directory.
        #[arg(long)]
        dump: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Validate a system file and summarize what it defines.
    Report {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Curvature { file, common } => cmd_curvature(file, &common.options()),
        Command::KtSolve {
            file,
            rank,
            reducible,
            basis,
            common,
        } => cmd_kt_solve(file, *rank, *reducible, basis.as_deref(), &common.options()),
        Command::FiSolve {
            file,
            order,
            family,
            n,
            lambda,
            ell,
            basis,
            common,
        } => {
            let family_arg = match family.as_str() {
                "integral1" => FamilyArg::Integral1 { n: *n },
                "integral2" => match lambda {
                    Some(l) => FamilyArg::Integral2 { lambda: l.clone() },
                    None => {
                        eprintln!("fi-solve --family integral2 needs --lambda");
                        return ExitCode::from(2);
                    }
                },
                "split" => FamilyArg::Split { ell: *ell },
                other => {
                    eprintln!("unknown family `{other}` (integral1 | integral2 | split)");
                    return ExitCode::from(2);
                }
            };
            cmd_fi_solve(file, *order, &family_arg, basis.as_deref(), &common.options())
        }
        Command::Verify {
            file,
            fi_files,
            ics,
            span,
            dump,
            common,
        } => cmd_verify(
            file,
            fi_files,
            *ics,
            *span,
            dump.as_deref(),
            &common.options(),
        ),
        Command::Report { file, common } => cmd_report(file, &common.options()),
    };
    match result {
        Ok(report) => {
            let to_stdout = match &cli.command {
                Command::Curvature { common, .. }
                | Command::KtSolve { common, .. }
                | Command::FiSolve { common, .. }
                | Command::Verify { common, .. }
                | Command::Report { common, .. } => common.out.is_none(),
            };
            if to_stdout {
                print!("{}", report.render());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
