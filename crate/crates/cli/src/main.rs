//! Command-line front end of the duplex evaluation harness.

mod agent;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use agent::{AgentSpec, DEFAULT_REPLY};
use commands::JudgeMode;
use config::{ConfigLayer, RunConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "duplexbench",
    version,
    about = "Stream construction and evaluation harness for full-duplex speech agents"
)]
struct Cli {
    /// TOML config file; flags override it, it overrides the environment
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Where to write the resolved config (default: run_config.toml in the output directory)
    #[arg(long, global = true)]
    echo_config: Option<PathBuf>,
    #[command(flatten)]
    layer: ConfigLayer,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a hybrid voice + text system prompt bundle
    PromptBuild {
        /// Voice sample WAV of the agent
        #[arg(long)]
        voice: PathBuf,
        /// Role description text file
        #[arg(long)]
        role: PathBuf,
        /// Existing vocabulary to extend (TSV)
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Pad the voice sample to a whole number of frames
        #[arg(long)]
        pad_voice: bool,
        /// Output bundle directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a dialog script into two aligned channels
    Stitch {
        /// Dialog script (TOML)
        script: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Run service scenarios end to end against an agent
    Eval {
        /// Scenario file or directory of scenario files
        #[arg(
            long,
            conflicts_with = "generate",
            required_unless_present = "generate"
        )]
        scenarios: Option<PathBuf>,
        /// Use N generated scenarios instead of files
        #[arg(long)]
        generate: Option<usize>,
        /// silent, always, echo[:FRAMES], scripted[:SECONDS] or tcp:HOST:PORT
        #[arg(long, default_value = "silent")]
        agent: AgentSpec,
        /// Reply text of the scripted agent
        #[arg(long, default_value = DEFAULT_REPLY)]
        reply: String,
        /// Vocabulary mapping remote text ids to words (TSV)
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "offline")]
        judge: JudgeMode,
        /// Timeout in seconds for each remote read and write
        #[arg(long, default_value_t = 10.0)]
        connect_timeout: f64,
        /// Output directory for results and reports
        #[arg(long)]
        report: PathBuf,
    },
    /// Compute turn-taking metrics over recorded trials
    Metrics {
        /// Directory of trial directories, each with user.wav, agent.wav and meta.toml
        #[arg(long)]
        trials: PathBuf,
        /// Prompt voice sample for speaker similarity
        #[arg(long, conflicts_with = "embeddings")]
        voice: Option<PathBuf>,
        /// External embeddings file (`id v1 v2 ...` per line)
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Embedding id of the prompt voice
        #[arg(long, default_value = "prompt")]
        prompt_id: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild report tables from saved trial results
    Report {
        /// Trial results (JSON lines) written by eval
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "unknown")]
        agent_name: String,
        #[arg(long, default_value = "unknown")]
        judge_name: String,
    },
    /// Serve a built-in reference agent over the wire protocol
    ServeRefAgent {
        #[arg(long, default_value = "127.0.0.1:7007")]
        listen: String,
        #[arg(long, default_value = "scripted")]
        agent: AgentSpec,
        #[arg(long, default_value = DEFAULT_REPLY)]
        reply: String,
        /// Exit after serving this many connections
        #[arg(long)]
        max_connections: Option<usize>,
        /// Write the agent's text vocabulary (TSV) for the harness side
        #[arg(long)]
        write_vocab: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::resolve(&cli.layer, cli.config.as_deref())?;
    let echo = cli.echo_config.as_deref();
    match &cli.command {
        Command::PromptBuild {
            voice,
            role,
            vocab,
            pad_voice,
            out,
        } => commands::prompt_build(
            &cfg,
            commands::PromptBuild {
                voice,
                role,
                vocab: vocab.as_deref(),
                pad_voice: *pad_voice,
                out,
            },
            echo,
        ),
        Command::Stitch { script, out } => commands::stitch_cmd(&cfg, script, out, echo),
        Command::Eval {
            scenarios,
            generate,
            agent,
            reply,
            vocab,
            judge,
            connect_timeout,
            report,
        } => commands::eval(
            &cfg,
            commands::Eval {
                scenarios: scenarios.as_deref(),
                generate: *generate,
                agent,
                reply,
                vocab: vocab.as_deref(),
                judge: *judge,
                connect_timeout: *connect_timeout,
                report,
            },
            echo,
        ),
        Command::Metrics {
            trials,
            voice,
            embeddings,
            prompt_id,
            out,
        } => commands::metrics(
            &cfg,
            commands::Metrics {
                trials,
                voice: voice.as_deref(),
                embeddings: embeddings.as_deref(),
                prompt_id,
                out,
            },
            echo,
        ),
        Command::Report {
            results,
            out,
            agent_name,
            judge_name,
        } => commands::report(&cfg, results, out, agent_name, judge_name, echo),
        Command::ServeRefAgent {
            listen,
            agent,
            reply,
            max_connections,
            write_vocab,
        } => commands::serve(
            &cfg,
            commands::Serve {
                listen,
                agent,
                reply,
                max_connections: *max_connections,
                write_vocab: write_vocab.as_deref(),
            },
            echo,
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
