//! Pipeline driver behind the `triage` binary. Every command takes one config
//! file, writes its artifacts to an output directory and leaves a manifest
//! there that is enough to rerun it.

pub mod commands;
pub mod config;
pub mod manifest;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;

use crate::commands::Ctx;
use crate::config::{validate_config, Config, Violation};
use crate::manifest::{sha256_bytes, RunManifest, ERROR_FILE, MANIFEST_FILE, RESOLVED_CONFIG_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Ingest,
    Agree,
    Topics,
    Train,
    Eval,
    Zeroshot,
    Trends,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Agree => "agree",
            Command::Topics => "topics",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Zeroshot => "zeroshot",
            Command::Trends => "trends",
        }
    }
}

/// Default output directory: `runs/<command>` next to the config file.
pub fn default_out(command: Command, config: &Path) -> PathBuf {
    config
        .parent()
        .unwrap_or(Path::new("."))
        .join("runs")
        .join(command.name())
}

/// Outcome of a run, mapped to the process exit code by the binary.
#[derive(Debug)]
pub enum RunError {
    Config(Vec<Violation>),
    Failed(anyhow::Error),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(v) => {
                writeln!(f, "invalid config:")?;
                for x in v {
                    writeln!(f, "  {x}")?;
                }
                Ok(())
            }
            RunError::Failed(e) => write!(f, "{e:#}"),
        }
    }
}

/// Validates the config, runs `command` and writes the resolved config and
/// manifest. On failure `error.json` is written to `out` instead.
pub fn run(command: Command, config: &Path, seed: Option<u64>, out: &Path) -> Result<RunManifest, RunError> {
    let result = run_inner(command, config, seed, out);
    if let Err(e) = &result {
        let doc = match e {
            RunError::Config(v) => json!({"command": command.name(), "kind": "config", "violations": v}),
            RunError::Failed(err) => json!({
                "command": command.name(),
                "kind": "runtime",
                "message": format!("{err:#}"),
            }),
        };
        if fs::create_dir_all(out).is_ok() {
            let _ = fs::write(
                out.join(ERROR_FILE),
                serde_json::to_string_pretty(&doc).unwrap_or_default() + "\n",
            );
        }
    }
    result
}

fn run_inner(command: Command, config: &Path, seed: Option<u64>, out: &Path) -> Result<RunManifest, RunError> {
    let config = fs::canonicalize(config).map_err(|e| {
        RunError::Config(vec![Violation {
            field: "<file>".into(),
            message: format!("{}: {e}", config.display()),
        }])
    })?;
    let cfg = validate_config(&config).map_err(RunError::Config)?;
    let base = config.parent().unwrap_or(Path::new("/"));
    let cfg = cfg.resolve(base, seed);
    fs::create_dir_all(out)
        .with_context(|| format!("cannot create {}", out.display()))
        .map_err(RunError::Failed)?;
    let out = fs::canonicalize(out).map_err(|e| RunError::Failed(e.into()))?;
    let _ = fs::remove_file(out.join(ERROR_FILE));
    execute(command, cfg, &out).map_err(RunError::Failed)
}

fn execute(command: Command, cfg: Config, out: &Path) -> Result<RunManifest> {
    guard_inputs(&cfg, out)?;
    let resolved = cfg.to_toml();
    let mut ctx = Ctx::new(cfg, out.to_path_buf());
    match command {
        Command::Ingest => commands::ingest(&mut ctx)?,
        Command::Agree => commands::agree(&mut ctx)?,
        Command::Topics => commands::topics(&mut ctx)?,
        Command::Train => commands::train_cmd(&mut ctx)?,
        Command::Eval => commands::eval(&mut ctx)?,
        Command::Zeroshot => commands::zeroshot(&mut ctx)?,
        Command::Trends => commands::trends(&mut ctx)?,
    }
    let seeds = match command {
        Command::Eval if ctx.cfg.eval.runs.is_empty() => ctx.cfg.run.seeds.clone(),
        Command::Eval => ctx.cfg.eval.runs.iter().map(|r| r.seed).collect(),
        _ => vec![ctx.cfg.run.seed],
    };
    fs::write(out.join(RESOLVED_CONFIG_FILE), &resolved)?;
    let manifest = RunManifest {
        command: command.name().to_string(),
        config_hash: sha256_bytes(resolved.as_bytes()),
        resolved_config: RESOLVED_CONFIG_FILE.to_string(),
        seeds,
        inputs: ctx.inputs,
        outputs: ctx.outputs,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        notes: ctx.notes,
    };
    fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// Refuses to run when an input lives inside the output directory, since the
/// run could then overwrite what it reads.
fn guard_inputs(cfg: &Config, out: &Path) -> Result<()> {
    let p = &cfg.paths;
    let mut all: Vec<&PathBuf> = [
        &p.posts,
        &p.labels,
        &p.image_root,
        &p.annotations,
        &p.gazetteer,
        &p.responses,
        &p.features,
        &p.predictions,
        &p.embeddings,
    ]
    .into_iter()
    .flatten()
    .collect();
    for r in &cfg.eval.runs {
        all.extend(r.checkpoint.iter().chain(r.predictions.iter()));
    }
    for path in all {
        let abs = fs::canonicalize(path).unwrap_or_else(|_| path.clone());
        if abs.starts_with(out) {
            bail!(
                "input {} lies inside the output directory {}; choose another --out",
                path.display(),
                out.display()
            );
        }
    }
    Ok(())
}
