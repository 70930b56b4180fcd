//! `bedwarden` command-line entry point.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::fmt::Display;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use bedwarden_core::agents::{AgentConfig, Variant};
use bedwarden_core::env::Environment;
use bedwarden_core::hospital::{HospitalConfig, HospitalEnv};
use bedwarden_core::protocol::{serve_stdio, serve_tcp};
use bedwarden_core::trainer::{self, mean_of_means, BaselinePolicy, EpisodeMetrics, TrainConfig};

#[derive(Parser, Debug)]
#[command(
    name = "bedwarden",
    version,
    about = "Hospital bed-capacity simulation and deep Q-learning agents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train an agent and write metrics.csv, trace.csv and a checkpoint.
    Train {
        /// Environment config (TOML). Defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_variant)]
        agent: Option<Variant>,
        /// Agent hyperparameters (TOML). `--agent` overrides its variant.
        #[arg(long)]
        agent_config: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        episodes: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Log the environment state on every step of every n-th episode.
        #[arg(long)]
        render_every: Option<u64>,
        /// Also write trace_all.csv with every episode.
        #[arg(long)]
        full_trace: bool,
        /// Write 0 in the seconds column so reruns are byte-identical.
        #[arg(long)]
        zero_timing: bool,
    },
    /// Greedy rollouts of a saved checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        episodes: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a fixed baseline policy.
    Baseline {
        #[arg(long, value_parser = parse_policy)]
        policy: BaselinePolicy,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        episodes: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        zero_timing: bool,
    },
    /// Serve the environment over the line-delimited JSON protocol.
    ServeEnv {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Transport::Stdio)]
        transport: Transport,
        /// TCP port; 0 picks a free one (the bound address is logged on stderr).
        #[arg(long, default_value_t = 7878)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Seed used until the client resets with its own.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the environment's action and observation spec as JSON.
    PrintSpec {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Transport {
    Stdio,
    Tcp,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse::<Variant>().map_err(|e| e.to_string())
}

fn parse_policy(s: &str) -> Result<BaselinePolicy, String> {
    s.parse::<BaselinePolicy>().map_err(|e| e.to_string())
}

/// A runtime failure, reported as one line on stderr with exit code 2.
struct Failure(String);

impl<E: Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

fn env_config(path: Option<&Path>) -> Result<HospitalConfig, Failure> {
    match path {
        Some(p) => Ok(HospitalConfig::load(p)?),
        None => Ok(HospitalConfig::default()),
    }
}

fn summarise(label: &str, metrics: &[EpisodeMetrics]) {
    let last = metrics.last().expect("at least one episode");
    println!(
        "{label}: {} episodes, mean reward {:.4}, last episode mean reward {:.4}, final beds {}, final patients {}",
        metrics.len(),
        mean_of_means(metrics),
        last.mean_reward,
        last.final_beds,
        last.final_patients
    );
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Train {
            config,
            agent,
            agent_config,
            episodes,
            seed,
            out,
            render_every,
            full_trace,
            zero_timing,
        } => {
            let mut agent_cfg = match agent_config {
                Some(p) => AgentConfig::load(p)?,
                None => AgentConfig::default(),
            };
            if let Some(v) = agent {
                agent_cfg.variant = v;
            }
            let cfg = TrainConfig {
                episodes,
                env: env_config(config.as_deref())?,
                agent: agent_cfg,
                env_seed_base: seed,
                agent_seed: seed,
                render_every,
                out_dir: Some(out.clone()),
                full_trace,
                zero_timing,
            };
            let outcome = trainer::train(&cfg)?;
            summarise(&format!("train ({})", cfg.agent.variant), &outcome.metrics);
            println!("wrote {}", out.display());
        }
        Command::Evaluate {
            checkpoint,
            config,
            episodes,
            seed,
            out,
        } => {
            let (metrics, trace) =
                trainer::evaluate(&checkpoint, &env_config(config.as_deref())?, episodes, seed)?;
            summarise("evaluate", &metrics);
            if let Some(dir) = out {
                trainer::write_metrics(&metrics, &trace, &dir)?;
                println!("wrote {}", dir.display());
            }
        }
        Command::Baseline {
            policy,
            config,
            episodes,
            seed,
            out,
            zero_timing,
        } => {
            let (metrics, trace) = trainer::run_baseline(
                policy,
                &env_config(config.as_deref())?,
                episodes,
                seed,
                zero_timing,
            )?;
            summarise(&format!("baseline ({policy})"), &metrics);
            if let Some(dir) = out {
                trainer::write_metrics(&metrics, &trace, &dir)?;
                println!("wrote {}", dir.display());
            }
        }
        Command::ServeEnv {
            config,
            transport,
            port,
            host,
            seed,
        } => {
            let cfg = env_config(config.as_deref())?;
            HospitalEnv::new(cfg.clone(), seed)?;
            match transport {
                Transport::Stdio => {
                    let mut env = HospitalEnv::new(cfg, seed)?;
                    serve_stdio(&mut env)?;
                }
                Transport::Tcp => {
                    let listener = TcpListener::bind((host.as_str(), port))?;
                    eprintln!("listening on {}", listener.local_addr()?);
                    serve_tcp(listener, move || {
                        HospitalEnv::new(cfg.clone(), seed).expect("config validated at startup")
                    })?;
                }
            }
        }
        Command::PrintSpec { config } => {
            let env = HospitalEnv::new(env_config(config.as_deref())?, 0)?;
            println!("{}", serde_json::to_string(env.spec())?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(msg)) => {
            let one_line: Vec<&str> = msg
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && *l != "|")
                .collect();
            eprintln!("error: {}", one_line.join(" "));
            ExitCode::from(2)
        }
    }
}
