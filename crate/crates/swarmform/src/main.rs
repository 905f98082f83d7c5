//! Command-line front end: scenario generation, simulation runs, density
//! benchmarks, and gradient verification.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use swarmform::config::ScenarioConfig;
use swarmform::eval::{self, Density};
use swarmform::gradcheck;
use swarmform::sim;

#[derive(Parser)]
#[command(name = "swarmform", version, about = "Decentralized swarm formation trajectory planner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory for all artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    verbose: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum DensityArg {
    Sparse,
    Medium,
    Dense,
}

impl From<DensityArg> for Density {
    fn from(d: DensityArg) -> Self {
        match d {
            DensityArg::Sparse => Density::Sparse,
            DensityArg::Medium => Density::Medium,
            DensityArg::Dense => Density::Dense,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark scenario config.
    Gen(GenArgs),
    /// Run one scenario and write traces and metrics.
    Run(RunArgs),
    /// Run the three-density benchmark sweep.
    Bench(BenchArgs),
    /// Verify every analytic gradient against finite differences.
    CheckGradients(CheckArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "medium")]
    density: DensityArg,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario config JSON; generated on the fly when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "medium")]
    density: DensityArg,
    /// Overrides the config's seed when set.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct BenchArgs {
    /// Runs per density regime.
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct CheckArgs {
    /// Random instances per term.
    #[arg(long, default_value_t = 20)]
    instances: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_MISSION: u8 = 3;

fn write(path: &Path, content: &str) -> Result<(), ExitCode> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| {
            eprintln!("error: cannot create {}: {e}", parent.display());
            ExitCode::from(EXIT_IO)
        })?;
    }
    std::fs::write(path, content).map_err(|e| {
        eprintln!("error: cannot write {}: {e}", path.display());
        ExitCode::from(EXIT_IO)
    })
}

fn load_config(args: &RunArgs) -> Result<ScenarioConfig, ExitCode> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                eprintln!("error: cannot read {}: {e}", path.display());
                ExitCode::from(EXIT_IO)
            })?;
            ScenarioConfig::from_json(&text).map_err(|e| {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_CONFIG)
            })?
        }
        None => eval::generate_scenario(args.density.into(), args.seed.unwrap_or(1)).map_err(
            |e| {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_CONFIG)
            },
        )?,
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run_one(
    cfg: &ScenarioConfig,
    out: &Path,
    verbose: bool,
) -> Result<(bool, eval::RunMetrics), ExitCode> {
    let result = sim::run_scenario(cfg.clone()).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_CONFIG)
    })?;
    let metrics = eval::evaluate_run(&result, cfg).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_CONFIG)
    })?;

    write(&out.join("scenario.json"), &cfg.to_json())?;
    write(&out.join("summary.json"), &result.metrics_json())?;
    write(&out.join("metrics.csv"), &metrics.csv())?;
    write(&out.join("violations.csv"), &result.violations_csv())?;
    for agent in 0..cfg.agents.len() {
        write(
            &out.join(format!("trace_agent_{agent}.csv")),
            &result.trace_csv(agent),
        )?;
    }
    let mut solve = result.solve_times_ms.clone();
    solve.sort_by(f64::total_cmp);
    let median = solve.get(solve.len() / 2).copied().unwrap_or(0.0);
    if verbose {
        for log in &result.cycle_logs {
            println!(
                "agent {} cycle {} iters {} {:.1} ms{}",
                log.agent,
                log.cycle,
                log.iterations,
                log.wall_ms,
                if log.fell_back { " (fallback)" } else { "" }
            );
        }
    }
    println!("{} {}", cfg.name, metrics.summary_line());
    println!("median solve {median:.1} ms over {} cycles", solve.len());
    Ok((result.success, metrics))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(code) => code,
    }
}

fn run(cli: Cli) -> Result<ExitCode, ExitCode> {
    match cli.command {
        Command::Gen(args) => {
            let cfg = eval::generate_scenario(args.density.into(), args.seed).map_err(|e| {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_CONFIG)
            })?;
            let path = cli.out.join(format!("{}.json", cfg.name));
            write(&path, &cfg.to_json())?;
            println!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(args) => {
            let cfg = load_config(&args)?;
            let (success, _) = run_one(&cfg, &cli.out.join(&cfg.name), cli.verbose)?;
            Ok(if success {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_MISSION)
            })
        }
        Command::Bench(args) => {
            let mut rows = String::from(
                "density,runs,successes,mean_e_dist_sum,mean_e_dist_rms,mean_e_sim\n",
            );
            let mut all_ok = true;
            for density in [Density::Sparse, Density::Medium, Density::Dense] {
                let mut successes = 0;
                let mut sums = (0.0, 0.0, 0.0);
                for k in 0..args.runs {
                    let seed = args.seed + k as u64;
                    let cfg = eval::generate_scenario(density, seed).map_err(|e| {
                        eprintln!("error: {e}");
                        ExitCode::from(EXIT_CONFIG)
                    })?;
                    let out = cli.out.join(&cfg.name);
                    let (ok, metrics) = run_one(&cfg, &out, cli.verbose)?;
                    if ok {
                        successes += 1;
                    }
                    sums.0 += metrics.mean_e_dist_sum;
                    sums.1 += metrics.mean_e_dist_rms;
                    sums.2 += metrics.mean_e_sim;
                }
                let n = args.runs as f64;
                rows.push_str(&format!(
                    "{},{},{},{:.9},{:.9},{:.9}\n",
                    density.name(),
                    args.runs,
                    successes,
                    sums.0 / n,
                    sums.1 / n,
                    sums.2 / n
                ));
                all_ok &= successes == args.runs;
            }
            write(&cli.out.join("bench_summary.csv"), &rows)?;
            print!("{rows}");
            Ok(if all_ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_MISSION)
            })
        }
        Command::CheckGradients(args) => {
            let results = gradcheck::run_suite(args.instances, args.seed);
            let mut csv = String::from(gradcheck::TermResult::csv_header());
            csv.push('\n');
            let mut ok = true;
            for r in &results {
                csv.push_str(&r.csv_line());
                csv.push('\n');
                let tol = if r.name == "similarity_metric" { 1e-5 } else { 1e-4 };
                let pass = r.max_rel_error < tol && r.coordinates > 0;
                ok &= pass;
                println!(
                    "{:<18} instances {:<4} max rel error {:.3e} {}",
                    r.name,
                    r.instances,
                    r.max_rel_error,
                    if pass { "ok" } else { "FAIL" }
                );
            }
            write(&cli.out.join("gradcheck.csv"), &csv)?;
            Ok(if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_MISSION)
            })
        }
    }
}
