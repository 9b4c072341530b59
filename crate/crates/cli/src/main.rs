use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use armgate::harness::{self, ScenarioRunner};
use armgate::{AuditLog, CapabilityToken, Mode, Policy, PolicyConfig, ProcessUpstream, Session, TrustLevel};

#[derive(Parser)]
#[command(
    name = "arm-gate",
    version,
    about = "Reference monitor gateway for tool-calling agents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Flat,
    Graph,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Flat => Mode::Flat,
            ModeArg::Graph => Mode::Graph,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModesArg {
    Both,
    Flat,
    Graph,
}

#[derive(Subcommand)]
enum Command {
    /// Proxy JSON-RPC on stdio to an upstream tool server, mediating every tool call.
    Serve {
        /// Shell command that starts the upstream tool server.
        #[arg(long)]
        upstream: String,
        /// Policy document (JSON). Defaults apply when omitted.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Capability token granted to this session (JSON).
        #[arg(long)]
        token: PathBuf,
        /// Audit log destination (JSON lines, truncated on start).
        #[arg(long)]
        audit: PathBuf,
        #[arg(long, value_enum, default_value = "graph")]
        mode: ModeArg,
        /// Override the policy's trust threshold.
        #[arg(long)]
        threshold: Option<TrustLevel>,
        /// Write the provenance graph as JSON here on exit.
        #[arg(long)]
        dump_graph: Option<PathBuf>,
        #[arg(long, default_value = "session-0")]
        session_id: String,
    },
    /// Run the scripted scenarios and print the flat/graph comparison.
    Scenarios {
        #[arg(long, value_enum, default_value = "both")]
        mode: ModesArg,
        #[arg(long)]
        json: bool,
    },
    /// Measure pipeline latency over repeated scenario runs.
    Bench {
        #[arg(long, default_value_t = harness::MIN_BENCH_RUNS)]
        runs: usize,
        /// Extra trusted nodes added to the graph before each run.
        #[arg(long, default_value_t = 0)]
        pad_nodes: usize,
        #[arg(long, default_value = "A1")]
        scenario: String,
        #[arg(long)]
        json: bool,
    },
    /// Check an audit log's hash chain.
    Verify { audit: PathBuf },
    /// Serve the built-in mock tools on stdio.
    #[command(hide = true)]
    MockUpstream,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Serve {
            upstream,
            policy,
            token,
            audit,
            mode,
            threshold,
            dump_graph,
            session_id,
        } => {
            let mut config = match &policy {
                Some(path) => PolicyConfig::load(path).with_context(|| format!("loading policy {}", path.display()))?,
                None => PolicyConfig::default(),
            };
            if let Some(threshold) = threshold {
                config.threshold = threshold;
            }
            let policy = Policy::new(config).context("compiling policy")?;
            let token = CapabilityToken::load(&token).with_context(|| format!("loading token {}", token.display()))?;
            let log = AuditLog::with_file(&audit).with_context(|| format!("opening audit log {}", audit.display()))?;
            let mut session = Session::new(session_id, mode.into(), Arc::new(policy), Arc::new(token)).with_audit(log);
            let mut upstream = ProcessUpstream::spawn(&upstream).context("starting upstream")?;

            let stdin = io::stdin().lock();
            let stdout = BufWriter::new(io::stdout().lock());
            let stats = armgate::serve(&mut session, &mut upstream, stdin, stdout)?;
            eprintln!(
                "session closed: {} tool calls, {} allowed, {} denied",
                stats.tool_calls, stats.allowed, stats.denied
            );
            if let Some(path) = dump_graph {
                std::fs::write(&path, session.graph().snapshot().to_json())
                    .with_context(|| format!("writing graph to {}", path.display()))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Scenarios { mode, json } => {
            let modes = match mode {
                ModesArg::Both => vec![Mode::Flat, Mode::Graph],
                ModesArg::Flat => vec![Mode::Flat],
                ModesArg::Graph => vec![Mode::Graph],
            };
            let matrix = harness::run_matrix(&ScenarioRunner::new(), &harness::differential_scenarios(), &modes);
            if json {
                println!("{}", serde_json::to_string_pretty(&matrix)?);
            } else {
                print!("{}", matrix.render());
            }
            Ok(if matrix.holds {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Bench {
            runs,
            pad_nodes,
            scenario,
            json,
        } => {
            let Some(scenario) = harness::scenario_by_id(&scenario) else {
                bail!("unknown scenario `{scenario}`");
            };
            let runner = ScenarioRunner::new().with_padding(pad_nodes);
            let stats = harness::bench(&runner, &scenario, runs)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&stats)?);
            } else {
                println!(
                    "{} x{} (pad {}): median {:.1} us, p95 {:.1} us, max {:.1} us",
                    scenario.id, stats.runs, pad_nodes, stats.median, stats.p95, stats.max
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { audit } => {
            let report = armgate::verify_file(&audit).with_context(|| format!("reading {}", audit.display()))?;
            match report.first_broken_index {
                None => println!("ok: {} entries, chain intact", report.entries),
                Some(i) => println!("broken: chain fails at entry {i} of {}", report.entries),
            }
            Ok(if report.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::MockUpstream => {
            harness::tools::serve_mock_tools(io::stdin().lock(), io::stdout().lock())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
