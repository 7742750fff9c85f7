//! Command-line front end: spanning checks, simulation, density and Laplace
//! diagnostics, kernel symmetrization and the kinetic reduction, plus the
//! built-in oracle selftest.
//!
//! Exit codes: 0 on success, 1 when an analysis concludes negatively (a
//! spanning check fails, a selftest check fails), 2 on usage or configuration
//! errors. Diagnostics go to standard error; data goes to files or stdout.

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(
    name = "hypojump",
    about = "Jump-diffusion SDE toolkit: bracket spanning checks, path simulation \
             with Jacobian flows, Lévy-kernel symmetrization, density diagnostics",
    version
)]
struct Cli {
    /// Cap the worker thread count (0 = library default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct CommonOpts {
    /// Master seed for all random streams (overrides a model-file seed).
    #[arg(long)]
    seed: Option<u64>,

    /// Output path (CSV data, or the JSON report for report-only commands).
    #[arg(long)]
    out: Option<String>,

    /// Print the JSON report to standard output.
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the bracket-spanning defect over a box and test it against c0.
    Check {
        #[command(flatten)]
        common: CommonOpts,
        /// Built-in name (example1..example5, kinetic) or a model TOML file.
        #[arg(long)]
        model: String,
        /// Bracket hierarchy depth.
        #[arg(long, default_value_t = 1)]
        j0: usize,
        /// Box per axis as lo:hi, comma-separated ("-10:10" or "-5:5,-5:5").
        #[arg(long, default_value = "-10:10", allow_hyphen_values = true)]
        r#box: String,
        /// Number of low-discrepancy sample points.
        #[arg(long, default_value_t = 10_000)]
        points: usize,
        /// Spanning constant to test against.
        #[arg(long, default_value_t = 1e-6)]
        c0: f64,
        /// Remove structurally identical fields within each level.
        #[arg(long)]
        dedup: bool,
    },
    /// Simulate an ensemble and write terminal states as CSV.
    Simulate {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        model: String,
        /// Horizon.
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        /// Start point, comma-separated.
        #[arg(long, default_value = "0", allow_hyphen_values = true)]
        x0: String,
        #[arg(long, default_value_t = 1000)]
        paths: usize,
        /// Time step (defaults to the model's standard scheme).
        #[arg(long)]
        h: Option<f64>,
        /// Small-jump truncation radius.
        #[arg(long)]
        eps: Option<f64>,
        /// Small/large bookkeeping radius.
        #[arg(long)]
        delta: Option<f64>,
        /// drop | gaussian.
        #[arg(long, default_value = "drop")]
        small_jump_mode: String,
        /// Track and emit the reduced covariance matrix per path.
        #[arg(long)]
        sigma_hat: bool,
    },
    /// Kernel density estimate and characteristic-function decay per axis.
    Density {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long, default_value = "0", allow_hyphen_values = true)]
        x0: String,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        /// Grid points per axis.
        #[arg(long, default_value_t = 256)]
        grid: usize,
        /// "auto" (Silverman) or a numeric bandwidth.
        #[arg(long, default_value = "auto")]
        bandwidth: String,
        /// Largest |ξ| scanned by the characteristic-function profile.
        #[arg(long, default_value_t = 40.0)]
        char_max_xi: f64,
    },
    /// Laplace transform of the reduced covariance quadratic form.
    Laplace {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long, default_value = "0", allow_hyphen_values = true)]
        x0: String,
        /// Unit direction, comma-separated (normalized if needed).
        #[arg(long, allow_hyphen_values = true)]
        u: Option<String>,
        /// Sweep this many directions and report the slowest-decaying one.
        #[arg(long)]
        u_sweep: Option<usize>,
        /// Increasing λ grid.
        #[arg(long, default_value = "1,2,5,10,20,50")]
        lambdas: String,
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
    },
    /// Build the symmetrization transform for a kernel and verify it.
    Symmetrize {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        /// Kernel expression in `x1..x<state-dim>, z1..z<mark-dim>`.
        #[arg(long)]
        kernel: String,
        /// Ellipticity constant bound.
        #[arg(long, default_value_t = 2.0)]
        kappa0: f64,
        /// Test function in `z1..z<mark-dim>` for the change-of-variables check
        /// (must vanish quadratically at 0).
        #[arg(long)]
        verify: Option<String>,
        #[arg(long, default_value_t = 0)]
        state_dim: usize,
        #[arg(long, default_value_t = 1)]
        mark_dim: usize,
        /// State at which a state-dependent kernel is frozen.
        #[arg(long, allow_hyphen_values = true)]
        at: Option<String>,
    },
    /// Reduce the kinetic operator to SDE form and check it end to end.
    Kinetic {
        #[command(flatten)]
        common: CommonOpts,
        /// Only the built-in kinetic model is currently registered.
        #[arg(long, default_value = "kinetic")]
        model: String,
        #[arg(long, default_value_t = 1)]
        j0: usize,
        #[arg(long, default_value = "-3:3,-3:3", allow_hyphen_values = true)]
        r#box: String,
        #[arg(long, default_value_t = 2000)]
        points: usize,
        #[arg(long, default_value_t = 1e-6)]
        c0: f64,
        /// Horizon for the demonstration ensemble (0 disables it).
        #[arg(long, default_value_t = 0.5)]
        t: f64,
        #[arg(long, default_value_t = 200)]
        paths: usize,
    },
    /// Run the built-in oracle suite end to end.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!(
                "error: cannot configure {} worker threads: {e}",
                cli.threads
            );
            return ExitCode::from(2);
        }
    }
    let outcome = match cli.command {
        Command::Check {
            common,
            model,
            j0,
            r#box,
            points,
            c0,
            dedup,
        } => commands::check(&common, &model, j0, &r#box, points, c0, dedup),
        Command::Simulate {
            common,
            model,
            t,
            x0,
            paths,
            h,
            eps,
            delta,
            small_jump_mode,
            sigma_hat,
        } => commands::simulate(
            &common,
            &model,
            t,
            &x0,
            paths,
            h,
            eps,
            delta,
            &small_jump_mode,
            sigma_hat,
        ),
        Command::Density {
            common,
            model,
            t,
            x0,
            paths,
            grid,
            bandwidth,
            char_max_xi,
        } => commands::density(
            &common,
            &model,
            t,
            &x0,
            paths,
            grid,
            &bandwidth,
            char_max_xi,
        ),
        Command::Laplace {
            common,
            model,
            t,
            x0,
            u,
            u_sweep,
            lambdas,
            paths,
        } => commands::laplace(
            &common,
            &model,
            t,
            &x0,
            u.as_deref(),
            u_sweep,
            &lambdas,
            paths,
        ),
        Command::Symmetrize {
            common,
            alpha,
            radius,
            kernel,
            kappa0,
            verify,
            state_dim,
            mark_dim,
            at,
        } => commands::symmetrize(
            &common,
            alpha,
            radius,
            &kernel,
            kappa0,
            verify.as_deref(),
            state_dim,
            mark_dim,
            at.as_deref(),
        ),
        Command::Kinetic {
            common,
            model,
            j0,
            r#box,
            points,
            c0,
            t,
            paths,
        } => commands::kinetic(&common, &model, j0, &r#box, points, c0, t, paths),
        Command::Selftest => commands::selftest(),
    };
    match outcome {
        Ok(commands::Outcome::Success) => ExitCode::SUCCESS,
        Ok(commands::Outcome::AnalysisFailed(msg)) => {
            eprintln!("analysis failed: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
