use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde_json::json;
use thiserror::Error;

use crate::config::{sha256_hex, ConfigError, ScenarioConfig};
use crate::scenarios::{execute, RuntimeError};

/// Environment variable holding the default output directory.
pub const OUT_DIR_ENV: &str = "ERGODIC_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "ergodic-out";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("runtime error: {0}")]
    Runtime(#[from] RuntimeError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for config problems, 1 for everything that fails after validation.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) | CliError::Io { .. } => 1,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed_override: Option<u64>,
    /// Takes precedence over [`OUT_DIR_ENV`].
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub artifacts: Vec<PathBuf>,
    pub manifest: PathBuf,
}

fn load(path: &Path) -> Result<(String, ScenarioConfig), CliError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError {
        line: None,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    let cfg = ScenarioConfig::parse(&text)?;
    Ok((text, cfg))
}

pub fn validate_file(path: &Path) -> Result<ScenarioConfig, CliError> {
    load(path).map(|(_, cfg)| cfg)
}

fn resolve_out_dir(opts: &RunOptions) -> PathBuf {
    opts.out_dir
        .clone()
        .or_else(|| {
            std::env::var_os(OUT_DIR_ENV)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
        })
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn remove_all(paths: &[PathBuf]) {
    for p in paths {
        if p.exists() {
            if let Err(e) = fs::remove_file(p) {
                log::warn!("could not remove {}: {e}", p.display());
            }
        }
    }
}

/// Parses, executes and writes one scenario. On failure no artifact of
/// the scenario (and no manifest) is left in the output directory.
pub fn run_scenario(config_path: &Path, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let (_, mut cfg) = load(config_path)?;
    if let Some(seed) = opts.seed_override {
        cfg.seed = seed;
    }
    let out_dir = resolve_out_dir(opts);
    let targets: Vec<PathBuf> = cfg
        .outputs
        .iter()
        .map(|n| out_dir.join(n))
        .chain(std::iter::once(out_dir.join(MANIFEST)))
        .collect();

    let started = Instant::now();
    let artifacts = match execute(&cfg) {
        Ok(a) => a,
        Err(e) => {
            // Outputs of an earlier run would otherwise pass for this one.
            remove_all(&targets);
            return Err(e.into());
        }
    };
    let wall_time = started.elapsed().as_secs_f64();

    let io_err = |path: &Path, source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let write_all = || -> Result<Vec<PathBuf>, CliError> {
        fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;
        let mut written = Vec::with_capacity(artifacts.len());
        for a in &artifacts {
            let path = out_dir.join(&a.name);
            fs::write(&path, &a.contents).map_err(|e| io_err(&path, e))?;
            written.push(path);
        }
        let manifest = json!({
            "scenario_kind": cfg.kind,
            "config_sha256": cfg.config_hash,
            "seed": cfg.seed,
            "seed_overridden": opts.seed_override.is_some(),
            "versions": {
                "ergodic-cli": env!("CARGO_PKG_VERSION"),
                "ergodic-core": ergodic_core::VERSION,
            },
            "threads": rayon::current_num_threads(),
            "artifacts": artifacts.iter().map(|a| json!({
                "name": a.name,
                "bytes": a.contents.len(),
                "sha256": sha256_hex(a.contents.as_bytes()),
            })).collect::<Vec<_>>(),
            "wall_time_seconds": wall_time,
            "timestamp_unix": SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        });
        let path = out_dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest is plain JSON") + "\n";
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        Ok(written)
    };
    match write_all() {
        Ok(written) => Ok(RunSummary {
            manifest: out_dir.join(MANIFEST),
            out_dir,
            artifacts: written,
        }),
        Err(e) => {
            remove_all(&targets);
            Err(e)
        }
    }
}
