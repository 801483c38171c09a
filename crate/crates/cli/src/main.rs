use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use ablab_cli::harness::{run_scenario_with, ScenarioScript};
use ablab_cli::report;
use ablab_client::{Client, ClientError};
use ablab_core::analytics::{parse_report, AnalyticsReport};
use ablab_core::bundle::{replay_path, BundleError};
use ablab_core::clock::SystemClock;
use ablab_core::events::ImportError;
use ablab_core::traits::{ProviderConfig, ProviderKind};
use ablab_service::api::CreateExperiment;
use ablab_service::{router, AppState, ServiceConfig};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

/// Run and analyze two-group modeling experiments.
#[derive(Debug, Parser)]
#[command(name = "ablab", version)]
struct Cli {
    /// Seed for scenario runs and the service's default simulation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Service state directory.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Start the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[arg(long, default_value = "researcher")]
        researcher_token: String,
        /// Prefix of generated join links; defaults to the bind address.
        #[arg(long)]
        base_url: Option<String>,
        /// Trait dataset (JSON) replacing the bundled one.
        #[arg(long)]
        traits: Option<PathBuf>,
    },
    /// Create an experiment from a JSON spec file.
    Create {
        spec: PathBuf,
        #[command(flatten)]
        target: Target,
    },
    /// Print an experiment's join links.
    Links {
        experiment: String,
        #[command(flatten)]
        target: Target,
    },
    /// Run a scripted learner scenario; the default scenario when no script is given.
    SimulateLearners { script: Option<PathBuf> },
    /// Replay an event log and print its analytics.
    Analyze { events: PathBuf },
    /// Render tables, and SVG charts with --out, from an analytics.json file.
    Report { analytics: PathBuf },
}

#[derive(Debug, Args)]
struct Target {
    /// Service URL; without it the command works on --data-dir directly.
    #[arg(long)]
    server: Option<String>,
    #[arg(long, default_value = "researcher")]
    token: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: starting runtime: {e}");
            return ExitCode::from(2);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for I/O and transport failures, 1 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
        match cause.downcast_ref::<ClientError>() {
            Some(ClientError::Transport(_)) => return 2,
            Some(ClientError::Api { status, .. }) if *status >= 500 => return 2,
            _ => {}
        }
        if let Some(BundleError::Io { .. }) = cause.downcast_ref::<BundleError>() {
            return 2;
        }
        if let Some(ImportError::Io(_)) = cause.downcast_ref::<ImportError>() {
            return 2;
        }
    }
    1
}

async fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Serve {
            bind,
            researcher_token,
            base_url,
            traits,
        } => {
            let config = ServiceConfig {
                bind,
                data_dir: cli.data_dir,
                researcher_token,
                default_seed: cli.seed.unwrap_or(0),
                base_url: base_url.unwrap_or_else(|| format!("http://{bind}")),
                traits: ProviderConfig {
                    kind: ProviderKind::Local {
                        path: traits.map(|p| p.display().to_string()),
                    },
                    ..ProviderConfig::default()
                },
                ..ServiceConfig::default()
            };
            serve(config).await
        }
        Command::Create { spec, target } => {
            let text = read(&spec)?;
            let req: CreateExperiment = serde_json::from_str(&text)
                .with_context(|| format!("{} is not a valid experiment spec", spec.display()))?;
            let client = connect(&target, cli.data_dir, cli.seed)?;
            let view = client
                .create_experiment(&req)
                .await
                .context("creating the experiment")?;
            emit(
                cli.out.as_deref(),
                "experiment.json",
                &serde_json::to_string_pretty(&view)?,
            )
        }
        Command::Links { experiment, target } => {
            let client = connect(&target, cli.data_dir, cli.seed)?;
            let links = client
                .links(&experiment)
                .await
                .context("fetching join links")?;
            let text: String = links
                .iter()
                .map(|l| format!("{}\t{}\n", l.group_id.as_deref().unwrap_or("random"), l.url))
                .collect();
            match cli.out {
                Some(dir) => write(&dir, "links.tsv", &text),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::SimulateLearners { script } => {
            let mut scenario = match &script {
                Some(path) => {
                    serde_json::from_str::<ScenarioScript>(&read(path)?).with_context(|| {
                        format!("{} is not a valid scenario script", path.display())
                    })?
                }
                None => ScenarioScript::default_with_seed(7),
            };
            if let Some(seed) = cli.seed {
                scenario.seed = seed;
            }
            let config = ServiceConfig {
                data_dir: cli.data_dir,
                ..ServiceConfig::default()
            };
            let run = run_scenario_with(&scenario, config).await?;
            if let Some(dir) = &cli.out {
                run.bundle
                    .write_dir(dir)
                    .with_context(|| format!("writing the bundle to {}", dir.display()))?;
            }
            print!("{}", report::render_text(&run.report));
            Ok(())
        }
        Command::Analyze { events } => {
            let report =
                replay_path(&events).with_context(|| format!("replaying {}", events.display()))?;
            if let Some(dir) = &cli.out {
                write_bytes(dir, "analytics.json", &report.to_json_bytes())?;
            }
            print!("{}", report::render_text(&report));
            Ok(())
        }
        Command::Report { analytics } => {
            let bytes = std::fs::read(&analytics)
                .with_context(|| format!("reading {}", analytics.display()))?;
            let report: AnalyticsReport = parse_report(&bytes)
                .with_context(|| format!("{} is not an analytics report", analytics.display()))?;
            if let Some(dir) = &cli.out {
                write(dir, "coverage.svg", &report::coverage_svg(&report))?;
                write(dir, "patterns.svg", &report::patterns_svg(&report))?;
            }
            print!("{}", report::render_text(&report));
            Ok(())
        }
    }
}

async fn serve(config: ServiceConfig) -> Result<()> {
    tracing_subscriber::fmt().with_target(false).init();
    let bind = config.bind;
    let state = AppState::new(config, Arc::new(SystemClock)).context("loading service state")?;
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .with_context(|| format!("binding {bind}"))?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    ablab_service::serve(state, listener, shutdown).await?;
    Ok(())
}

fn connect(target: &Target, data_dir: Option<PathBuf>, seed: Option<u64>) -> Result<Client> {
    let client = match (&target.server, data_dir) {
        (Some(url), _) => Client::http(url)?,
        (None, Some(dir)) => {
            let config = ServiceConfig {
                data_dir: Some(dir),
                researcher_token: target.token.clone(),
                default_seed: seed.unwrap_or(0),
                ..ServiceConfig::default()
            };
            let state =
                AppState::new(config, Arc::new(SystemClock)).context("loading service state")?;
            Client::in_process(router(state))
        }
        (None, None) => bail!("give --server URL or --data-dir DIR"),
    };
    Ok(client.with_token(target.token.clone()))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_bytes(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    write_bytes(dir, name, text.as_bytes())
}

/// Writes to `dir/name` when an output directory is given, else stdout.
fn emit(dir: Option<&Path>, name: &str, text: &str) -> Result<()> {
    match dir {
        Some(d) => write(d, name, &format!("{text}\n")),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}
