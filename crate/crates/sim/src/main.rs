//! Command-line entry point: run simulations, replay logs, render plots,
//! solve dispatch instances, query routes, and inspect wire datagrams.

use std::fs;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use amrsim::gen::{self, SolveInstance};
use amrsim::logs::parse_trajectory;
use amrsim::plot::render_svg;
use amrsim::runloop::run_scenario;
use amrsim::scenario::parse_scenario;
use amrsim_core::fleet::{
    exact_vrptw, queue_objective, RobotSpec, TransportTask, TravelTimeMatrix,
};
use amrsim_core::netproto::{decode, encode, Header, MessageBody};
use amrsim_core::planning::astar;

#[derive(Parser)]
#[command(name = "amrsim", about = "Infrastructure-based AMR fleet simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario file and write metrics, logs, and a plot.
    Run {
        scenario: PathBuf,
        /// Override the seed baked into the scenario.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for metrics.json, events.jsonl, trajectory.csv,
        /// and trajectory.svg.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Deliver perception frames with one control-tick latency.
        #[arg(long)]
        pipelined: bool,
    },
    /// Reconstruct run metrics from an event log.
    Replay { events: PathBuf },
    /// Render a trajectory file over its scenario's floor.
    Plot {
        trajectory: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        /// Output SVG path; defaults next to the trajectory file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve a dispatch instance exactly and compare with greedy queueing.
    Solve { instance: PathBuf },
    /// Print the shortest route between two stations of a scenario.
    Plan { scenario: PathBuf, from: String, to: String },
    /// Encode and decode wire datagrams.
    Codec {
        #[command(subcommand)]
        op: CodecOp,
    },
    /// Write the shipped scenario files.
    Gen {
        /// Scenario name, or "all".
        name: String,
        #[arg(long, default_value = "scenarios")]
        dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum CodecOp {
    /// Hex datagram to JSON.
    Parse { hex: String },
    /// JSON {"header": .., "body": ..} to hex datagram.
    Dump { json: String },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { scenario, seed, out, pipelined } => {
            let text = fs::read_to_string(&scenario)
                .with_context(|| format!("reading {}", scenario.display()))?;
            let sc = parse_scenario(&text).map_err(|e| anyhow!("{e}"))?;
            let art = run_scenario(&sc, seed, pipelined).map_err(|e| anyhow!(e))?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("metrics.json"), art.metrics.to_json_pretty())?;
            fs::write(out.join("events.jsonl"), &art.events)?;
            fs::write(out.join("trajectory.csv"), &art.trajectory)?;
            let rows = parse_trajectory(&art.trajectory).map_err(|e| anyhow!(e))?;
            fs::write(out.join("trajectory.svg"), render_svg(&sc, &rows).map_err(|e| anyhow!(e))?)?;
            print!("{}", art.metrics.to_json_pretty());
        }
        Command::Replay { events } => {
            let text = fs::read_to_string(&events)
                .with_context(|| format!("reading {}", events.display()))?;
            let metrics = amrsim::logs::replay(&text)?;
            print!("{}", metrics.to_json_pretty());
        }
        Command::Plot { trajectory, scenario, out } => {
            let traj_text = fs::read_to_string(&trajectory)
                .with_context(|| format!("reading {}", trajectory.display()))?;
            let rows = parse_trajectory(&traj_text).map_err(|e| anyhow!(e))?;
            let sc_text = fs::read_to_string(&scenario)
                .with_context(|| format!("reading {}", scenario.display()))?;
            let sc = parse_scenario(&sc_text).map_err(|e| anyhow!("{e}"))?;
            let svg = render_svg(&sc, &rows).map_err(|e| anyhow!(e))?;
            let path = out.unwrap_or_else(|| trajectory.with_extension("svg"));
            fs::write(&path, svg)?;
            println!("wrote {}", path.display());
        }
        Command::Solve { instance } => {
            let text = fs::read_to_string(&instance)
                .with_context(|| format!("reading {}", instance.display()))?;
            let inst = SolveInstance::from_json(&text).map_err(|e| anyhow!(e))?;
            let n = inst.travel_seconds.len();
            let flat: Vec<f64> = inst.travel_seconds.iter().flatten().copied().collect();
            let ttm = TravelTimeMatrix::new(n, flat)?;
            let robots: Vec<RobotSpec> = inst
                .robots
                .iter()
                .map(|r| RobotSpec {
                    id: r.id,
                    start_station: r.start_station,
                    available_from: r.available_from,
                })
                .collect();
            let tasks: Vec<TransportTask> = inst
                .tasks
                .iter()
                .map(|t| TransportTask {
                    id: t.id,
                    a_station: t.a_station,
                    b_station: t.b_station,
                    window_a: (t.window_a[0], t.window_a[1]),
                    window_b: (t.window_b[0], t.window_b[1]),
                    service_time: t.service_time,
                })
                .collect();
            let sched = exact_vrptw(&tasks, &robots, &ttm, inst.lambda_tardiness, inst.hard_windows)?;
            let queue = queue_objective(&tasks, &robots, &ttm, inst.lambda_tardiness)?;
            let out = serde_json::json!({
                "schedule": sched,
                "queue_objective": queue.objective,
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::Plan { scenario, from, to } => {
            let text = fs::read_to_string(&scenario)
                .with_context(|| format!("reading {}", scenario.display()))?;
            let sc = parse_scenario(&text).map_err(|e| anyhow!("{e}"))?;
            let net = sc.network();
            let station = |name: &str| {
                sc.road_network
                    .stations
                    .get(name)
                    .copied()
                    .ok_or_else(|| anyhow!("unknown station {name:?}"))
            };
            let route = astar(&net, station(&from)?, station(&to)?)?;
            let out = serde_json::json!({
                "from": from,
                "to": to,
                "nodes": route.node_ids,
                "length_m": route.total_length,
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::Codec { op } => match op {
            CodecOp::Parse { hex } => {
                let bytes = parse_hex(&hex)?;
                let (header, body) = decode(&bytes)?;
                let out = serde_json::json!({ "header": header, "body": body });
                println!("{}", serde_json::to_string_pretty(&out)?);
            }
            CodecOp::Dump { json } => {
                #[derive(serde::Deserialize)]
                struct Datagram {
                    header: Header,
                    body: MessageBody,
                }
                let d: Datagram = serde_json::from_str(&json).context("parsing datagram JSON")?;
                let bytes = encode(&d.header, &d.body)?;
                println!("{}", to_hex(&bytes));
            }
        },
        Command::Gen { name, dir } => {
            fs::create_dir_all(&dir)?;
            let files = gen::all();
            let wanted: Vec<&(&str, String)> = if name == "all" {
                files.iter().collect()
            } else {
                let target = format!("{name}.json");
                let found: Vec<_> = files.iter().filter(|(f, _)| *f == target).collect();
                if found.is_empty() {
                    bail!(
                        "unknown scenario {name:?}; available: {}",
                        files
                            .iter()
                            .map(|(f, _)| f.trim_end_matches(".json"))
                            .collect::<Vec<_>>()
                            .join(", ")
                    );
                }
                found
            };
            for (file, contents) in wanted {
                let path = dir.join(file);
                fs::write(&path, contents)?;
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn parse_hex(s: &str) -> Result<Vec<u8>> {
    let clean: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    if clean.len() % 2 != 0 {
        bail!("hex string has odd length");
    }
    (0..clean.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&clean[i..i + 2], 16).context("invalid hex digit"))
        .collect()
}

fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02X}")).collect()
}
