//! Command-line front end: validate game files, compute exact classical and
//! latency-constrained values, run the seesaw lower bound, simulate
//! behaviors, and host or join distributed referee sessions.

use std::fs;
use std::io::Write as _;
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use nonlocal::catalog::{
    self, load_balancing, min_channels, rendezvous, uniform_rates_pi, CatalogError,
    LoadBalancingSpec, RendezvousSpec,
};
use nonlocal::classical::{
    classical_value, lc_classical_value, lc_strategy_space_size, strategy_space_size,
    SolverError, DEFAULT_ENUMERATION_BUDGET,
};
use nonlocal::game::GameError;
use nonlocal::harness::party::{party_run, PartyConfig, PartyStrategy};
use nonlocal::harness::referee::{
    referee_serve, ClockMode, LatePolicy, RefereeConfig, RefereeMode, SessionReport,
};
use nonlocal::harness::{monte_carlo, HarnessError};
use nonlocal::latency::{comm_graph, CommGraph, GraphSpec, LatencyError, LatencyScenario, ScenarioSpec};
use nonlocal::quantum::{behavior_from_quantum, seesaw_optimize, QuantumError, SeesawConfig};
use nonlocal::{Behavior, GameSpec, ValidatedGame};

#[derive(Parser)]
#[command(name = "nonlocal", version, about = "Nonlocal and latency-constrained game toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a game file and print its dimensions and utility range.
    Validate { game: PathBuf },
    /// Exact optimal value over deterministic strategies, optionally with
    /// one-hop input sharing along a communication graph.
    ClassicalValue {
        game: PathBuf,
        /// Communication graph file; parties also see their in-neighbors'
        /// inputs.
        #[arg(long, conflicts_with = "scenario")]
        comm: Option<PathBuf>,
        /// Latency scenario file; the graph contains the edges whose latency
        /// meets the deadline.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Maximum number of strategies to enumerate.
        #[arg(long, default_value_t = DEFAULT_ENUMERATION_BUDGET)]
        budget: u64,
        /// Write a JSON run report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Seesaw lower bound on the entangled value with given local dimensions.
    QuantumValue {
        game: PathBuf,
        /// Local Hilbert space dimensions, comma separated (one per party).
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 8)]
        restarts: usize,
        #[arg(long, default_value_t = 200)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Convergence threshold on the objective improvement.
        #[arg(long, default_value_t = 1e-12)]
        eps: f64,
        /// Write the winning strategy (state and projectors) here.
        #[arg(long)]
        strategy_out: Option<PathBuf>,
        /// Write the winning strategy's behavior here.
        #[arg(long)]
        behavior_out: Option<PathBuf>,
        /// Write a JSON run report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo estimate of a behavior's average utility.
    Simulate {
        game: PathBuf,
        #[arg(long)]
        behavior: PathBuf,
        #[arg(short = 'n', long = "rounds", default_value_t = 100_000)]
        rounds: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Host a scored session; parties connect over TCP.
    Referee {
        game: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 100)]
        rounds: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "127.0.0.1:0")]
        listen: String,
        /// Behavior file to serve as the shared entangled resource.
        #[arg(long)]
        entangled: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ClockArg::Logical)]
        clock: ClockArg,
        #[arg(long, value_enum, default_value_t = LateArg::ScoreZero)]
        late: LateArg,
        /// Write the session report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Join a session as one party.
    Party {
        #[arg(long)]
        connect: String,
        #[arg(long)]
        party: usize,
        /// Strategy file (deterministic, entangled, or forward).
        #[arg(long)]
        strategy: PathBuf,
        /// Latency scenario file, required by forward strategies.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Write a game from the built-in catalog.
    Catalog {
        /// One of: chsh, hft-hedging, ghz, magic-square, load-balancing,
        /// rendezvous.
        name: String,
        /// load-balancing: per-transmitter rate sets, e.g. "1,2;1,2".
        #[arg(long)]
        rates: Option<String>,
        /// load-balancing: per-channel capacity.
        #[arg(long)]
        r_star: Option<f64>,
        /// load-balancing: number of channels (defaults to the fewest that
        /// fit the worst joint rates).
        #[arg(long)]
        channels: Option<usize>,
        /// rendezvous: spec file with the graph, horizon, and starts.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Write the game here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a session report as JSON or CSV.
    Report {
        session: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Json)]
        format: FormatArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ClockArg {
    Logical,
    Wall,
}

#[derive(Clone, Copy, ValueEnum)]
enum LateArg {
    ScoreZero,
    Accept,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

/// Machine-readable outcome of a value computation.
#[derive(Serialize)]
struct RunReport {
    command: String,
    game_digest: String,
    value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    strategies_visited: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    witness: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    details: Option<serde_json::Value>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        if stdout_pipe_closed(&e) {
            // A downstream reader closed our output early, as `| head` does.
            // That is a normal way for a pipeline to end, not a failure.
            std::process::exit(0);
        }
        eprintln!("error: {e:#}");
        std::process::exit(exit_code(&e));
    }
}

/// True when the error is a broken pipe on local output rather than a dropped
/// session connection. Network errors carry a `HarnessError` in the chain and
/// must keep reporting as failures. The CSV writer wraps I/O errors without
/// exposing them as a source, so its kind needs a separate look.
fn stdout_pipe_closed(e: &anyhow::Error) -> bool {
    if e.chain().any(|c| c.downcast_ref::<HarnessError>().is_some()) {
        return false;
    }
    e.chain().any(|c| {
        let io = match c.downcast_ref::<std::io::Error>() {
            Some(io) => io,
            None => match c.downcast_ref::<csv::Error>().map(csv::Error::kind) {
                Some(csv::ErrorKind::Io(io)) => io,
                _ => return false,
            },
        };
        io.kind() == std::io::ErrorKind::BrokenPipe
    })
}

/// 2 for invalid inputs, 3 for exceeded budgets or caps, 4 for network
/// trouble, 1 otherwise.
fn exit_code(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if let Some(s) = cause.downcast_ref::<SolverError>() {
            return match s {
                SolverError::BudgetExceeded { .. } => 3,
                SolverError::Game(_) => 2,
            };
        }
        if let Some(q) = cause.downcast_ref::<QuantumError>() {
            return match q {
                QuantumError::DimensionCap { .. } => 3,
                _ => 2,
            };
        }
        if let Some(h) = cause.downcast_ref::<HarnessError>() {
            return match h {
                HarnessError::Io(_) | HarnessError::Protocol { .. } | HarnessError::Version { .. } => 4,
                _ => 2,
            };
        }
        if cause.downcast_ref::<GameError>().is_some()
            || cause.downcast_ref::<LatencyError>().is_some()
            || cause.downcast_ref::<CatalogError>().is_some()
            || cause.downcast_ref::<serde_json::Error>().is_some()
            || cause.downcast_ref::<std::io::Error>().is_some()
        {
            return 2;
        }
    }
    1
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_game(path: &Path) -> Result<ValidatedGame> {
    let spec: GameSpec = serde_json::from_str(&read_text(path)?)
        .with_context(|| format!("parsing game file {}", path.display()))?;
    Ok(ValidatedGame::validate(spec)?)
}

fn load_scenario(path: &Path) -> Result<LatencyScenario> {
    let spec: ScenarioSpec = serde_json::from_str(&read_text(path)?)
        .with_context(|| format!("parsing scenario file {}", path.display()))?;
    Ok(LatencyScenario::from_spec(&spec)?)
}

fn load_behavior(path: &Path) -> Result<Behavior> {
    Ok(serde_json::from_str(&read_text(path)?)
        .with_context(|| format!("parsing behavior file {}", path.display()))?)
}

fn game_digest(game: &ValidatedGame) -> String {
    let text = serde_json::to_string(&game.to_spec()).expect("game specs serialize");
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hex::encode(hasher.finalize())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Validate { game } => {
            let game = load_game(&game)?;
            let (lo, hi) = game.utility_bounds();
            println!("ok: {} parties", game.parties());
            println!(
                "inputs per party: {:?}",
                game.input_shape().sizes()
            );
            println!(
                "outputs per party: {:?}",
                game.output_shape().sizes()
            );
            println!("utility range: [{lo}, {hi}]");
            println!("deterministic strategies: {}", strategy_space_size(&game));
            Ok(())
        }
        Command::ClassicalValue { game: game_path, comm, scenario, budget, out } => {
            let game = load_game(&game_path)?;
            let graph: Option<CommGraph> = match (&comm, &scenario) {
                (Some(path), _) => {
                    let spec: GraphSpec = serde_json::from_str(&read_text(path)?)
                        .with_context(|| format!("parsing graph file {}", path.display()))?;
                    Some(CommGraph::from_spec(&spec)?)
                }
                (None, Some(path)) => {
                    let scenario = load_scenario(path)?;
                    let g = comm_graph(&scenario);
                    println!("scenario deadline admits edges: {:?}", g.edges());
                    Some(g)
                }
                (None, None) => None,
            };
            let (value, visited, witness, space) = match &graph {
                Some(g) => {
                    let solution = lc_classical_value(&game, g, budget)?;
                    (
                        solution.value,
                        solution.visited,
                        solution.witness.to_label_map(&game),
                        lc_strategy_space_size(&game, g),
                    )
                }
                None => {
                    let solution = classical_value(&game, budget)?;
                    (
                        solution.value,
                        solution.visited,
                        solution.witness.to_label_map(&game),
                        strategy_space_size(&game),
                    )
                }
            };
            println!("value: {value}");
            println!("strategies visited: {visited} of {space}");
            if let Some(path) = out {
                write_json(
                    &path,
                    &RunReport {
                        command: "classical-value".into(),
                        game_digest: game_digest(&game),
                        value,
                        strategies_visited: Some(visited),
                        witness: Some(witness),
                        details: graph.map(|g| {
                            serde_json::to_value(g.to_spec()).expect("graphs serialize")
                        }),
                    },
                )?;
            }
            Ok(())
        }
        Command::QuantumValue {
            game: game_path,
            dims,
            restarts,
            iters,
            seed,
            eps,
            strategy_out,
            behavior_out,
            out,
        } => {
            let game = load_game(&game_path)?;
            let cfg = SeesawConfig {
                max_iters: iters,
                restarts,
                seed,
                convergence_eps: eps,
            };
            let outcome = seesaw_optimize(&game, &dims, &cfg)?;
            println!("lower bound: {}", outcome.value);
            println!(
                "restart {} of {}, {} iterations, converged: {}",
                outcome.best_restart + 1,
                restarts,
                outcome.trace.len(),
                outcome.converged
            );
            if let Some(path) = strategy_out {
                write_json(&path, &outcome.strategy)?;
            }
            if let Some(path) = behavior_out {
                let behavior = behavior_from_quantum(&game, &outcome.strategy)?;
                write_json(&path, &behavior)?;
            }
            if let Some(path) = out {
                write_json(
                    &path,
                    &RunReport {
                        command: "quantum-value".into(),
                        game_digest: game_digest(&game),
                        value: outcome.value,
                        strategies_visited: None,
                        witness: None,
                        details: Some(serde_json::json!({
                            "dims": dims,
                            "converged": outcome.converged,
                            "iterations": outcome.trace.len(),
                            "best_restart": outcome.best_restart,
                        })),
                    },
                )?;
            }
            Ok(())
        }
        Command::Simulate { game: game_path, behavior, rounds, seed } => {
            let game = load_game(&game_path)?;
            let behavior = load_behavior(&behavior)?;
            let exact = game.average_utility(&behavior)?;
            let estimate = monte_carlo(&game, &behavior, rounds, seed)?;
            println!("exact average: {exact}");
            println!(
                "estimate: {} +/- {} over {} rounds",
                estimate.mean, estimate.std_error, estimate.rounds
            );
            Ok(())
        }
        Command::Referee {
            game: game_path,
            scenario,
            rounds,
            seed,
            listen,
            entangled,
            clock,
            late,
            out,
        } => {
            let game = load_game(&game_path)?;
            let scenario = load_scenario(&scenario)?;
            let mode = match entangled {
                Some(path) => RefereeMode::Entangled(load_behavior(&path)?),
                None => RefereeMode::Classical,
            };
            let listener = TcpListener::bind(&listen)
                .map_err(HarnessError::Io)
                .with_context(|| format!("listening on {listen}"))?;
            let addr = listener.local_addr().map_err(HarnessError::Io)?;
            println!("listening on {addr}");
            std::io::stdout().flush().ok();
            let config = RefereeConfig {
                game,
                scenario,
                mode,
                rounds,
                seed,
                clock: match clock {
                    ClockArg::Logical => ClockMode::Logical,
                    ClockArg::Wall => ClockMode::Wall,
                },
                late_policy: match late {
                    LateArg::ScoreZero => LatePolicy::ScoreZero,
                    LateArg::Accept => LatePolicy::Accept,
                },
            };
            let report = referee_serve(&listener, &config)?;
            println!(
                "played {} rounds, mean utility {}",
                report.rounds_played, report.mean_utility
            );
            if let Some(path) = out {
                write_json(&path, &report)?;
            }
            Ok(())
        }
        Command::Party { connect, party, strategy, scenario } => {
            let strategy: PartyStrategy = serde_json::from_str(&read_text(&strategy)?)
                .with_context(|| format!("parsing strategy file {}", strategy.display()))?;
            let scenario = match scenario {
                Some(path) => Some(load_scenario(&path)?),
                None => None,
            };
            let stream = TcpStream::connect(&connect)
                .map_err(HarnessError::Io)
                .with_context(|| format!("connecting to {connect}"))?;
            let summary = party_run(
                stream,
                &PartyConfig {
                    party,
                    strategy,
                    scenario,
                },
            )?;
            println!(
                "session over: {} rounds, mean utility {}",
                summary.rounds, summary.mean_utility
            );
            Ok(())
        }
        Command::Catalog { name, rates, r_star, channels, spec, out } => {
            let game = build_catalog_game(&name, rates, r_star, channels, spec)?;
            let text = serde_json::to_string_pretty(&game.to_spec()).expect("specs serialize");
            match out {
                Some(path) => {
                    fs::write(&path, text + "\n")
                        .with_context(|| format!("writing {}", path.display()))?;
                    println!("wrote {} ({} parties)", path.display(), game.parties());
                }
                None => println!("{text}"),
            }
            Ok(())
        }
        Command::Report { session, format } => {
            let report: SessionReport = serde_json::from_str(&read_text(&session)?)
                .with_context(|| format!("parsing session report {}", session.display()))?;
            match format {
                FormatArg::Json => {
                    println!(
                        "{}",
                        serde_json::to_string_pretty(&report).expect("reports serialize")
                    );
                }
                FormatArg::Csv => print_csv(&report)?,
            }
            Ok(())
        }
    }
}

fn build_catalog_game(
    name: &str,
    rates: Option<String>,
    r_star: Option<f64>,
    channels: Option<usize>,
    spec: Option<PathBuf>,
) -> Result<ValidatedGame> {
    match name {
        "chsh" => Ok(catalog::chsh()),
        "hft-hedging" => Ok(catalog::hft_hedging()),
        "ghz" => Ok(catalog::ghz()),
        "magic-square" => Ok(catalog::magic_square()),
        "load-balancing" => {
            let rates = rates.ok_or_else(|| CatalogError::InvalidSpec {
                detail: "load-balancing needs --rates, e.g. \"1,2;1,2\"".into(),
            })?;
            let r_star = r_star.ok_or_else(|| CatalogError::InvalidSpec {
                detail: "load-balancing needs --r-star".into(),
            })?;
            let rates_per_transmitter: Vec<Vec<f64>> = rates
                .split(';')
                .map(|group| {
                    group
                        .split(',')
                        .map(|s| {
                            s.trim().parse::<f64>().map_err(|e| {
                                anyhow::Error::from(CatalogError::InvalidSpec {
                                    detail: format!("rate {s:?}: {e}"),
                                })
                            })
                        })
                        .collect()
                })
                .collect::<Result<_>>()?;
            let n_channels = match channels {
                Some(n) => n,
                None => {
                    // Fewest channels that can carry the heaviest joint rates.
                    let worst: Vec<f64> = rates_per_transmitter
                        .iter()
                        .map(|r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
                        .collect();
                    min_channels(&worst, r_star).ok_or_else(|| CatalogError::InvalidSpec {
                        detail: "no channel count fits the heaviest rates".into(),
                    })?
                }
            };
            let pi = uniform_rates_pi(&rates_per_transmitter);
            Ok(load_balancing(&LoadBalancingSpec {
                rates_per_transmitter,
                r_star,
                n_channels,
                pi,
            })?)
        }
        "rendezvous" => {
            let path = spec.ok_or_else(|| CatalogError::InvalidSpec {
                detail: "rendezvous needs --spec <file>".into(),
            })?;
            let spec: RendezvousSpec = serde_json::from_str(&read_text(&path)?)
                .with_context(|| format!("parsing rendezvous spec {}", path.display()))?;
            Ok(rendezvous(&spec)?)
        }
        other => Err(CatalogError::InvalidSpec {
            detail: format!(
                "unknown catalog game {other:?}; expected chsh, hft-hedging, ghz, \
                 magic-square, load-balancing, or rendezvous"
            ),
        }
        .into()),
    }
}

fn print_csv(report: &SessionReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(std::io::stdout());
    let mut header = vec!["round".to_string()];
    header.extend((0..report.parties).map(|j| format!("input_{j}")));
    header.extend((0..report.parties).map(|j| format!("output_{j}")));
    header.push("utility".into());
    header.push("flags".into());
    w.write_record(&header)?;
    for r in &report.rounds {
        let mut row = vec![r.round.to_string()];
        row.extend(r.inputs.iter().cloned());
        row.extend(
            r.outputs
                .iter()
                .map(|o| o.clone().unwrap_or_default()),
        );
        row.push(r.utility.to_string());
        row.push(r.flags.join(";"));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
