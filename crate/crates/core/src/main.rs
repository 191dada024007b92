use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use restfuzz::campaign::{load_spec, run_campaign, CampaignError};
use restfuzz::config::{CampaignConfig, Overrides};
use restfuzz::graph::build_dependency_graph;
use restfuzz::mock::MockServer;
use restfuzz::report::{replay, EVENTS_FILE};
use restfuzz::seeds::{generate_corpus, write_corpus_dir};

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(
    name = "restfuzz",
    version,
    about = "Coverage-guided stateful REST API fuzzer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a fuzzing campaign until the time budget is spent.
    Fuzz {
        #[arg(long)]
        spec: PathBuf,
        /// TOML configuration; command-line flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Time budget in seconds.
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        /// fast, explore, lin, exploit, quad or coe.
        #[arg(long)]
        schedule: Option<String>,
        /// Base URL of a wuppie-cov-1 coverage agent.
        #[arg(long)]
        agent: Option<String>,
        /// strict or server-error.
        #[arg(long)]
        checker: Option<String>,
    },
    /// Write the initial corpus for a spec and stop.
    GenCorpus {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Regenerate the Markdown reports from an event log.
    Report {
        #[arg(long)]
        spec: PathBuf,
        /// Defaults to `<out>/events.jsonl`.
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the bundled minipet target and its coverage agent.
    ServeMock {
        #[arg(long, default_value_t = 8080)]
        api_port: u16,
        #[arg(long, default_value_t = 8081)]
        agent_port: u16,
    },
}

fn fail(code: u8, message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(code)
}

fn campaign_exit(e: &CampaignError) -> u8 {
    match e {
        CampaignError::Config(_) | CampaignError::Spec(_) | CampaignError::SpecIo { .. } => {
            EXIT_CONFIG
        }
        _ => EXIT_RUNTIME,
    }
}

fn fuzz(
    spec_path: &Path,
    config_path: Option<&Path>,
    overrides: &Overrides,
) -> Result<(), CampaignError> {
    let mut config = match config_path {
        Some(p) => CampaignConfig::load(p)?,
        None => CampaignConfig::default(),
    };
    config.apply(overrides)?;
    config.validate()?;
    let (spec, warnings) = load_spec(spec_path)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let stats = run_campaign(&spec, &config)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&stats).expect("stats serialize")
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Fuzz {
            spec,
            config,
            seed,
            budget,
            corpus,
            report,
            schedule,
            agent,
            checker,
        } => {
            let overrides = Overrides {
                seed,
                budget_secs: budget,
                corpus_dir: corpus,
                report_dir: report,
                schedule,
                agent_url: agent,
                checker,
            };
            match fuzz(&spec, config.as_deref(), &overrides) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(campaign_exit(&e), e),
            }
        }
        Command::GenCorpus { spec, out, seed } => {
            let (spec, _) = match load_spec(&spec) {
                Ok(s) => s,
                Err(e) => return fail(campaign_exit(&e), e),
            };
            let graph = build_dependency_graph(&spec);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (corpus, warnings) = generate_corpus(&spec, &graph, &mut rng);
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            match write_corpus_dir(&out, &corpus) {
                Ok(files) => {
                    println!("wrote {} sequences to {}", files.len(), out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(EXIT_RUNTIME, e),
            }
        }
        Command::Report { spec, events, out } => {
            let (spec, _) = match load_spec(&spec) {
                Ok(s) => s,
                Err(e) => return fail(campaign_exit(&e), e),
            };
            let events = events.unwrap_or_else(|| out.join(EVENTS_FILE));
            let text = match fs::read_to_string(&events) {
                Ok(t) => t,
                Err(e) => return fail(EXIT_CONFIG, format!("{}: {e}", events.display())),
            };
            match replay(&spec, &text).and_then(|r| r.write(&out)) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(EXIT_RUNTIME, e),
            }
        }
        Command::ServeMock {
            api_port,
            agent_port,
        } => match MockServer::start(api_port, agent_port) {
            Ok(server) => {
                println!("api {} agent {}", server.api_url(), server.agent_url());
                server.wait();
                ExitCode::SUCCESS
            }
            Err(e) => fail(EXIT_RUNTIME, e),
        },
    }
}
