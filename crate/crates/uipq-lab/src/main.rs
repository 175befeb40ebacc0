use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use uipq_lab::experiments::*;
use uipq_lab::report::{ExperimentReport, Format};

/// Seeded experiments on positive labeled trees and the uniform infinite
/// planar quadrangulation.
#[derive(Debug, Parser)]
#[command(name = "uipq-lab", version)]
struct Cli {
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// write the report here instead of stdout
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Exhaustive checks on trees with at most n-max edges
    Enumerate {
        #[arg(long, default_value_t = 8)]
        n_max: usize,
        /// directory for canonical-code inventories
        #[arg(long)]
        golden: Option<PathBuf>,
    },
    /// Closed forms against exact counts and kernel asymptotics
    VerifyFormulas {
        #[arg(long, default_value_t = 5)]
        l_max: usize,
        #[arg(long, default_value_t = 1000)]
        n_max: usize,
    },
    /// Law checks and draws of the exact samplers
    Sample(SampleArgs),
    /// Scaling of the spine label process
    SpineScaling {
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, value_delimiter = ',')]
        n_list: Vec<usize>,
    },
    /// Total variation between finite-size balls and the limit sampler
    TvConvergence {
        #[arg(long, default_value_t = 1)]
        radius: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [50, 200, 1000])]
        n_list: Vec<usize>,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 1e-3)]
        epsilon: f64,
        #[arg(long, default_value_t = 1000)]
        bootstrap: usize,
    },
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long, value_enum, default_value_t = SampleKind::All)]
    kind: SampleKind,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    label: i32,
    #[arg(long, default_value_t = 1)]
    radius: usize,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    /// write one JSON line per draw
    #[arg(long)]
    dump: Option<PathBuf>,
}

fn run(cli: &Cli) -> Result<ExperimentReport, LabError> {
    let seed = cli.seed;
    match &cli.command {
        Command::Enumerate { n_max, golden } => enumerate(&EnumerateParams { n_max: *n_max, golden: golden.clone() }, seed),
        Command::VerifyFormulas { l_max, n_max } => verify_formulas(&FormulaParams { l_max: *l_max, n_max: *n_max }, seed),
        Command::Sample(a) => sample(
            &SampleParams {
                kind: a.kind,
                n: a.n,
                label: a.label,
                radius: a.radius,
                samples: a.samples,
                eps: a.epsilon,
                dump: a.dump.clone(),
            },
            seed,
        ),
        Command::SpineScaling { n, samples, n_list } => {
            spine_scaling(&SpineParams { n: *n, replicas: *samples, n_list: n_list.clone() }, seed)
        }
        Command::TvConvergence { radius, n_list, samples, epsilon, bootstrap } => tv_convergence(
            &TvParams { radius: *radius, n_list: n_list.clone(), samples: *samples, eps: *epsilon, resamples: *bootstrap },
            seed,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        pool = pool.num_threads(t);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let start = Instant::now();
    let report = match pool.install(|| run(&cli)) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let body = report.render(cli.format);
    let written = match &cli.out {
        Some(path) => std::fs::write(path, body),
        None => {
            print!("{body}");
            Ok(())
        }
    };
    if let Err(e) = written {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let s = report.summary();
    eprintln!(
        "{}: {} pass, {} fail, {} expected fail, {} info in {:.2}s",
        s.experiment,
        s.pass,
        s.fail,
        s.expected_fail,
        s.info,
        start.elapsed().as_secs_f64()
    );
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
