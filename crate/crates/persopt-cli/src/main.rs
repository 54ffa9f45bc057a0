//! Benchmark CLI for personalized-optimization experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use persopt::bench::{self, EmitFormat, ExperimentConfig};
use persopt::report::{trace_to_csv, CostReport, CostRow, RunMetadata};
use persopt::robust::{self, Density, PersonalizedDecision, QuadratureSpec};
use persopt::testbed::TestFunction;
use persopt::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "persopt", version, about = "Personalized optimization benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for emitted files (default: config's out_dir, else `.`).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Output format for the cost table.
    #[arg(long, global = true, default_value = "csv")]
    format: String,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full strategy comparison described by a JSON config.
    Run { config: PathBuf },
    /// Solve the constant robust baselines for one function and print their
    /// expected/maximum costs.
    Baselines { function: String },
    /// Run replicate 0 of each strategy and dump the added-point traces.
    Trace { config: PathBuf },
    /// Parse and validate a JSON config, printing the normalized form.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::UnknownFunction(_) => ExitCode::from(EXIT_CONFIG),
                _ => ExitCode::from(EXIT_RUNTIME),
            }
        }
    }
}

fn execute(cli: &Cli) -> persopt::Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let format: EmitFormat = cli.format.parse()?;

    match &cli.command {
        Command::Run { config } => {
            let config = load_config(config, cli.seed)?;
            let out_dir = out_dir(cli, &config);
            let output = bench::run_experiment(&config)?;
            let paths = bench::emit(&output, &out_dir, format)?;
            for p in &paths {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Baselines { function } => {
            let report = baselines_report(function, cli.seed.unwrap_or(0))?;
            match format {
                EmitFormat::Csv => print!("{}", report.to_csv()),
                EmitFormat::Json => println!("{}", report.to_json()),
            }
            if let Some(dir) = &cli.out_dir {
                std::fs::create_dir_all(dir)?;
                let path = dir.join(format!("{function}_baselines.csv"));
                std::fs::write(&path, report.to_csv())?;
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Trace { config } => {
            let config = load_config(config, cli.seed)?;
            let out_dir = out_dir(cli, &config);
            std::fs::create_dir_all(&out_dir)?;
            let traces = bench::run_traces(&config)?;
            for trace in &traces {
                let path =
                    out_dir.join(format!("{}_trace_{}.csv", config.function, trace.label));
                std::fs::write(&path, trace_to_csv(&trace.rows, trace.p, trace.q))?;
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Validate { config } => {
            let config = load_config(config, cli.seed)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&config).expect("config serializes")
            );
            Ok(())
        }
    }
}

fn load_config(path: &Path, seed_override: Option<u64>) -> persopt::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut config = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    Ok(config)
}

fn out_dir(cli: &Cli, config: &ExperimentConfig) -> PathBuf {
    cli.out_dir
        .clone()
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."))
}

fn baselines_report(function: &str, seed: u64) -> persopt::Result<CostReport> {
    let f = TestFunction::by_id(function)?;
    let quad = QuadratureSpec::default();
    let (ue, _) = robust::solve_u_e(&f, &Density::Uniform, &quad, seed)?;
    let (um, _) = robust::solve_u_m(&f, &quad, seed.wrapping_add(1))?;
    let mut rows = Vec::new();
    for (name, s) in [("u_e", ue), ("u_m", um)] {
        let u = PersonalizedDecision::Constant(s);
        rows.push(CostRow {
            function: function.to_string(),
            strategy: name.to_string(),
            alpha: None,
            replicate: 0,
            iteration: 0,
            n: 0,
            ce: robust::expected_cost(&u, &f, &Density::Uniform, &quad)?,
            cm: robust::max_cost(&u, &f, &quad)?,
        });
    }
    Ok(CostReport {
        rows,
        metadata: RunMetadata {
            function: function.to_string(),
            seed,
            replicates: 0,
            iterations: 0,
            wall_clock_secs: 0.0,
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
    })
}
