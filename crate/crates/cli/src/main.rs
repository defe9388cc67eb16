mod failure;
mod output;
mod plot;
mod report;
mod run;
mod source;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use failure::Failure;

#[derive(Parser, Debug)]
#[command(name = "mscale", version, about = "Multiscale reduction and simulation of stochastic reaction networks")]
struct Cli {
    /// Worker threads for ensembles (all cores when absent).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
#[group(required = false, multiple = false)]
pub struct SourceArgs {
    /// Built-in network: viral, michaelis-menten or enzyme3.
    #[arg(long)]
    pub builtin: Option<String>,
    /// Network file.
    #[arg(long)]
    pub file: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Scale analysis, averaged coefficients and the fluctuation corrector.
    Analyze {
        #[command(flatten)]
        source: SourceArgs,
        /// Points along the first slow coordinate for the coefficient tables, as lo:hi:n.
        #[arg(long)]
        grid: Option<String>,
        /// Slow coordinate the grid runs along.
        #[arg(long)]
        axis: Option<String>,
        /// Output directory; the report goes to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Ensemble of one method: mean, standard deviation and standard error on a time grid.
    Simulate {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, default_value = "ssa")]
        method: String,
        #[command(flatten)]
        run: run::RunArgs,
        /// Also write the first K sample paths.
        #[arg(long, default_value_t = 0)]
        paths: usize,
        /// Output directory; results go to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Repeat a recorded run; other settings are ignored.
        #[arg(long, conflicts_with_all = ["builtin", "file"])]
        manifest: Option<PathBuf>,
    },
    /// Several methods side by side on one grid, or previously written summaries.
    Compare {
        #[command(flatten)]
        source: SourceArgs,
        /// Comma-separated methods.
        #[arg(long, default_value = "ssa,ode,lna,diffusion", value_delimiter = ',')]
        methods: Vec<String>,
        #[command(flatten)]
        run: run::RunArgs,
        /// Summary CSV files to compare instead of simulating.
        #[arg(long, num_args = 1.., conflicts_with_all = ["builtin", "file", "manifest"])]
        summary: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, conflicts_with_all = ["builtin", "file"])]
        manifest: Option<PathBuf>,
    },
    /// Probability that the first slow component dies out before reaching a threshold.
    Absorb {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, default_value = "ssa")]
        method: String,
        /// Starting amount of the watched component, in molecules.
        #[arg(long, default_value_t = 1.0)]
        k: f64,
        /// Escape threshold in normalized units.
        #[arg(long, default_value_t = 1.0)]
        threshold: f64,
        #[command(flatten)]
        run: run::RunArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, conflicts_with_all = ["builtin", "file"])]
        manifest: Option<PathBuf>,
    },
    /// Line plot of summary, comparison or trajectory CSV files as a standalone SVG.
    Plot {
        /// CSV files; columns mean_X with std_X become bands, other columns plain lines.
        #[arg(long = "input", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        /// Only plot columns for this component.
        #[arg(long)]
        component: Option<String>,
        #[arg(long)]
        title: Option<String>,
        /// SVG file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Analyze { source, grid, axis, out, json } => {
            let src = source::load(&source)?;
            report::analyze(&src, grid.as_deref(), axis.as_deref(), out.as_deref(), json)
        }
        Command::Simulate { source, method, run, paths, out, manifest } => {
            let job = match manifest {
                Some(m) => run::Job::from_manifest(&m, "simulate")?,
                None => run::Job::simulate(&source, &method, &run, paths)?,
            };
            run::execute(&job, out.as_deref(), cli.threads)
        }
        Command::Compare { source, methods, run, summary, out, manifest } => {
            if !summary.is_empty() {
                return run::compare_files(&summary, out.as_deref());
            }
            let job = match manifest {
                Some(m) => run::Job::from_manifest(&m, "compare")?,
                None => run::Job::compare(&source, &methods, &run)?,
            };
            run::execute(&job, out.as_deref(), cli.threads)
        }
        Command::Absorb { source, method, k, threshold, run, out, manifest } => {
            let job = match manifest {
                Some(m) => run::Job::from_manifest(&m, "absorb")?,
                None => run::Job::absorb(&source, &method, k, threshold, &run)?,
            };
            run::execute(&job, out.as_deref(), cli.threads)
        }
        Command::Plot { inputs, component, title, out } => plot::command(&inputs, component.as_deref(), title.as_deref(), out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { failure::USAGE } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
