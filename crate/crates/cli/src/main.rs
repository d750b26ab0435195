use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use qsurf_cli::commands::{run_command, Command, RunError};
use qsurf_cli::config::parse_config;
use qsurf_cli::output::{manifest, write_all, ManifestInput};
use qsurf_core::meshing::Mesh;

#[derive(Parser)]
#[command(
    name = "qsurf",
    version,
    about = "Cross-section field solves and surface-loss studies"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.directory`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker thread cap. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Reuse a mesh written by `mesh-dump`.
    #[arg(long, global = true)]
    seed_mesh: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Solve the field and export samples and diagnostics.
    Solve,
    /// Participation ratios per region and class.
    Epr,
    /// Edge-field profiles and power-law fit at a corner.
    EdgeFit,
    /// Parameter sweep from the `study` section.
    Sweep,
    /// P1/P2 refinement study.
    Converge,
    /// Circuit energy balance and loss budget.
    Budget,
    /// Write the mesh in text form.
    MeshDump,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Solve => Command::Solve,
            Cmd::Epr => Command::Epr,
            Cmd::EdgeFit => Command::EdgeFit,
            Cmd::Sweep => Command::Sweep,
            Cmd::Converge => Command::Converge,
            Cmd::Budget => Command::Budget,
            Cmd::MeshDump => Command::MeshDump,
        }
    }
}

fn fail(err: &RunError) -> ExitCode {
    eprintln!("{}", serde_json::to_string(&err.to_json()).unwrap());
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("QSURF_LOG", "error")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return fail(&RunError::Validation("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool set once");
    }
    let cmd = Command::from(cli.command);
    let text = match &cli.config {
        Some(p) => match std::fs::read_to_string(p) {
            Ok(t) => t,
            Err(e) => {
                return fail(&RunError::Validation(format!(
                    "cannot read {}: {e}",
                    p.display()
                )))
            }
        },
        None => "{}".to_string(),
    };
    let cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(errs) => {
            let err = RunError::Config(errs);
            if let Some(dir) = &cli.out {
                write_failure(dir, cmd, serde_json::Value::Null, &err);
            }
            return fail(&err);
        }
    };
    let out_dir = cli
        .out
        .clone()
        .or_else(|| cfg.output.directory.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("qsurf-out"));
    let config_echo = serde_json::to_value(&cfg).unwrap();

    let mut seed_hash = None;
    let seed = match &cli.seed_mesh {
        Some(p) => {
            let loaded = std::fs::read_to_string(p)
                .map_err(|e| RunError::Validation(format!("cannot read {}: {e}", p.display())))
                .and_then(|t| {
                    seed_hash = Some(qsurf_core::sha256_hex(t.as_bytes()));
                    Mesh::from_text(&t).map_err(|e| RunError::Validation(e.to_string()))
                });
            match loaded {
                Ok(m) => Some(m),
                Err(err) => {
                    write_failure(&out_dir, cmd, config_echo, &err);
                    return fail(&err);
                }
            }
        }
        None => None,
    };

    let t0 = std::time::Instant::now();
    let result = run_command(cmd, &cfg, seed.as_ref());
    info!(
        "{} finished in {:.3} s",
        cmd.name(),
        t0.elapsed().as_secs_f64()
    );
    match result {
        Ok(outcome) => {
            let m = manifest(&ManifestInput {
                command: cmd.name(),
                config: config_echo,
                seed_mesh_sha256: seed_hash,
                artifacts: &outcome.artifacts,
                mesh_hashes: &outcome.mesh_hashes,
                error: None,
            });
            if let Err(e) = write_all(&out_dir, &outcome.artifacts, &m) {
                return fail(&RunError::Numerical(format!(
                    "writing {}: {e}",
                    out_dir.display()
                )));
            }
            for a in &outcome.artifacts {
                info!("wrote {}", out_dir.join(&a.name).display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            write_failure(&out_dir, cmd, config_echo, &err);
            fail(&err)
        }
    }
}

/// The manifest is written even when a run fails, with no artifacts.
fn write_failure(dir: &Path, cmd: Command, config: serde_json::Value, err: &RunError) {
    let m = manifest(&ManifestInput {
        command: cmd.name(),
        config,
        seed_mesh_sha256: None,
        artifacts: &[],
        mesh_hashes: &[],
        error: Some(err.to_json()),
    });
    let _ = write_all(dir, &[], &m);
}
