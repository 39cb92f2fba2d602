use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use symroute::dynamics::DisturbanceMode;
use symroute::pipeline::{MissionKind, SimulateOptions, SynthOptions, Workspace};
use symroute::simulator::Failure;
use symroute::{svg, Result};

#[derive(Parser)]
#[command(name = "symroute", version, about = "Symbolic controller synthesis for vehicle routing missions")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the abstraction of a scenario into an artifact directory.
    Abstract {
        scenario: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Solve the coverage problem over all targets.
    Coverage { dir: PathBuf },
    /// Synthesize a mission controller.
    Synth {
        #[arg(value_enum)]
        kind: Kind,
        dir: PathBuf,
        /// Localization radius around each leg target.
        #[arg(long)]
        rho: Option<f64>,
        /// Start state for `tsp`, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        from: Option<Vec<f64>>,
        /// Chain coverage controllers instead of solving localized legs.
        #[arg(long)]
        no_refine: bool,
    },
    /// Simulate the mission and write trajectories and a report.
    Simulate {
        dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        /// Failure injection `vehicle:step`; repeatable.
        #[arg(long, value_parser = parse_failure)]
        fail: Vec<Failure>,
        #[arg(long, default_value = "algorithm2")]
        policy: String,
        #[arg(long)]
        no_disturbance: bool,
        /// Also run every takeover policy on the same seeds and print costs.
        #[arg(long)]
        compare: bool,
    },
    /// Plot the scenario and the first simulated run.
    Plot {
        dir: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Cvrp,
    Tsp,
}

fn parse_failure(s: &str) -> std::result::Result<Failure, String> {
    let (v, t) = s.split_once(':').ok_or("expected vehicle:step")?;
    Ok(Failure {
        vehicle: v.trim().parse().map_err(|e| format!("vehicle: {e}"))?,
        step: t.trim().parse().map_err(|e| format!("step: {e}"))?,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Abstract { scenario, output } => {
            let ws = Workspace::create(&scenario, &output)?;
            let m = ws.build_abstraction()?;
            println!("abstraction: {} cells, {} inputs, {} transitions", m.cells, m.inputs, m.edges);
        }
        Command::Coverage { dir } => {
            let m = Workspace::open(&dir)?.build_coverage()?;
            println!("coverage: {} reach solves", m.reach_solves);
            for (i, t) in m.targets.iter().enumerate() {
                println!("  {i} {:<12} {:>7} of {:>7} cells", t.name, t.cells, t.original_cells);
            }
        }
        Command::Synth { kind, dir, rho, from, no_refine } => {
            let mut opts = SynthOptions::new(match kind {
                Kind::Cvrp => MissionKind::Cvrp,
                Kind::Tsp => MissionKind::Tsp,
            });
            opts.rho = rho;
            opts.from = from;
            opts.refine = !no_refine;
            let m = Workspace::open(&dir)?.build_mission(&opts)?;
            let cert = if m.plan.certified { "" } else { " (heuristic)" };
            println!("plan cost {:.4}{cert}", m.plan.total_cost);
            for (k, v) in m.vehicles.iter().enumerate() {
                let values: Vec<String> = v.legs.iter().map(|l| format!("{:.3}", l.start_value)).collect();
                println!("  vehicle {k}: tour {:?}, leg values [{}]", v.tour, values.join(", "));
            }
        }
        Command::Simulate { dir, seed, runs, fail, policy, no_disturbance, compare } => {
            let opts = SimulateOptions {
                seed,
                runs,
                failures: fail,
                policy,
                disturbance: if no_disturbance { DisturbanceMode::None } else { DisturbanceMode::UniformRandom },
            };
            let ws = Workspace::open(&dir)?;
            let (m, reports) = ws.simulate(&opts)?;
            let e = &m.estimate;
            println!(
                "{} runs: {} complete, worst cost {:.4}, leg bound violations {}",
                m.runs.len(),
                e.complete_runs,
                e.worst_cost,
                e.bound_violations
            );
            for v in &reports[0].vehicles {
                println!("  vehicle {} cost {:.4} over {} steps", v.vehicle, v.cost, v.steps);
            }
            if compare {
                println!("{:<16} {:>12} {:>12} {:>12} {:>9}", "policy", "first run", "mean", "worst", "complete");
                for r in ws.compare(&opts, &["algorithm2", "coverage-chain", "greedy"])? {
                    println!(
                        "{:<16} {:>12.4} {:>12.4} {:>12.4} {:>5}/{}",
                        r.policy, r.first_run_cost, r.mean_cost, r.estimate.worst_cost, r.estimate.complete_runs, runs
                    );
                }
            }
        }
        Command::Plot { dir, output } => {
            let ws = Workspace::open(&dir)?;
            let tracks = ws.tracks()?;
            std::fs::write(&output, svg::render(ws.scenario(), &tracks))?;
            println!("wrote {} ({} trajectories)", output.display(), tracks.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
