//! `erimap` command line: offline replay, live service and bundle checks.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use erimap::server::{router, AppState};
use erimap_core::bundle::{load_bundle, read_script_file};
use erimap_core::export::{run_replay, write_replay};
use erimap_core::spatial::max_zone_overlap;

#[derive(Parser)]
#[command(
    name = "erimap",
    version,
    about = "Spatial Bayesian belief maps for emergency response"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay an observation script and write the belief timeline and map panels.
    Replay {
        #[arg(long)]
        bundle: PathBuf,
        /// NDJSON script; defaults to the script named in the bundle manifest.
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Exit with an error if any observation is rejected.
        #[arg(long)]
        strict: bool,
    },
    /// Serve the HTTP API on a live engine.
    Serve {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Append accepted observations to this NDJSON file.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Parse and cross-validate a bundle without running anything.
    Validate {
        #[arg(long)]
        bundle: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ERIMAP_LOG", "info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Replay {
            bundle,
            script,
            out,
            strict,
        } => replay(bundle, script, out, strict),
        Command::Serve {
            bundle,
            port,
            host,
            log,
        } => serve(bundle, SocketAddr::new(host, port), log),
        Command::Validate { bundle } => validate(bundle),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}

/// Error chain joined with `: `, skipping causes the outer message already
/// spells out.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if out.ends_with(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}

fn replay(bundle_dir: PathBuf, script: Option<PathBuf>, out: PathBuf, strict: bool) -> Result<()> {
    let (bundle, mut engine) =
        load_bundle(&bundle_dir).with_context(|| format!("loading {}", bundle_dir.display()))?;
    let observations = match script {
        Some(path) => read_script_file(&path, &path.display().to_string())?,
        None => match &bundle.script {
            Some(s) => s.clone(),
            None => bail!("no --script given and the bundle names none"),
        },
    };
    let output = run_replay(&bundle, &mut engine, &observations)?;
    write_replay(&out, &bundle, &output).with_context(|| format!("writing {}", out.display()))?;

    let rejected = &output.timeline.rejections;
    for r in rejected {
        log::warn!("rejected {}: {} ({})", r.observation_id, r.message, r.code);
    }
    println!(
        "{} observations, {} rejected, {} snapshots, {} panels -> {}",
        observations.len(),
        rejected.len(),
        output.timeline.snapshots.len(),
        output.panels.len(),
        out.display()
    );
    if engine.is_halted() {
        println!("halted: every key node is confirmed in every area");
    }
    if strict && !rejected.is_empty() {
        bail!("{} observation(s) rejected", rejected.len());
    }
    Ok(())
}

fn serve(bundle_dir: PathBuf, addr: SocketAddr, log_path: Option<PathBuf>) -> Result<()> {
    let (bundle, engine) =
        load_bundle(&bundle_dir).with_context(|| format!("loading {}", bundle_dir.display()))?;
    let state = match &log_path {
        Some(p) => AppState::with_audit_log(bundle, engine, p)
            .with_context(|| format!("opening {}", p.display()))?,
        None => AppState::new(bundle, engine),
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        log::info!("listening on http://{}/v1", listener.local_addr()?);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
                log::info!("shutting down");
            })
            .await?;
        Ok(())
    })
}

fn validate(bundle_dir: PathBuf) -> Result<()> {
    let (bundle, _) =
        load_bundle(&bundle_dir).with_context(|| format!("loading {}", bundle_dir.display()))?;
    let net = &bundle.network;
    println!("bundle {} is valid", bundle.name);
    println!(
        "  network: {} nodes, key nodes: {}",
        net.len(),
        net.key_nodes().collect::<Vec<_>>().join(", ")
    );
    println!("  areas: {}", bundle.areas.len());
    println!("  threat zones: {}", bundle.threat_zones.len());
    let exposed = bundle
        .areas
        .iter()
        .filter(|a| max_zone_overlap(a, &bundle.threat_zones).is_some())
        .count();
    println!("  areas inside a threat zone: {exposed}");
    println!(
        "  display: P({} = {})",
        bundle.display.node, bundle.display.state
    );
    match &bundle.script {
        Some(s) => println!("  script: {} observations", s.len()),
        None => println!("  script: none"),
    }
    Ok(())
}
