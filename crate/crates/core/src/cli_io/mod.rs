//! Configuration parsing, subcommand dispatch and artifact writing.

pub mod config;
pub mod dispatch;
pub mod output;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::error::ModelError;

pub use config::{parse_config, RunConfig};
pub use dispatch::{dispatch, Command, Diagnostic};
pub use output::{write_atomic, Manifest};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "DUMBBELL_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "dumbbell-out";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Model(_) => "model",
            CliError::Io { .. } => "io",
            CliError::Json(_) => "json",
        }
    }

    /// Single-line machine-readable form.
    pub fn to_json(&self) -> String {
        let mut v = serde_json::json!({ "error": self.kind(), "message": self.to_string() });
        if let CliError::Config { line, .. } = self {
            v["line"] = serde_json::json!(line);
        }
        v.to_string()
    }
}

/// Output directory: explicit flag, then the config, then the environment,
/// then the built-in default.
pub fn resolve_output_dir(flag: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_json_is_one_line() {
        let e = CliError::Config { line: 3, message: "bad \"x\"".into() };
        let j: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(j["error"], "config");
        assert_eq!(j["line"], 3);
        let e = CliError::from(ModelError::DegenerateStokesAt(0.5));
        assert!(e.to_json().contains("degenerate Stokes matrix"));
        assert!(!e.to_json().contains('\n'));
    }
}
