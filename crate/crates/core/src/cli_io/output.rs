use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub bytes: usize,
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// Canonical config text with all defaults explicit.
    pub config: String,
    pub outputs: Vec<OutputFile>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Writes `bytes` to `dir/name` through a temporary file and a rename, so
/// the target is either absent or complete.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, &target)
    })();
    if let Err(e) = res {
        let _ = fs::remove_file(&tmp);
        return Err(io_err(&target)(e));
    }
    Ok(target)
}

/// Writes all artifacts, then the manifest listing them.
pub fn write_artifacts(
    dir: &Path,
    artifacts: &[(String, Vec<u8>)],
    mut manifest: Manifest,
) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::with_capacity(artifacts.len() + 1);
    for (name, bytes) in artifacts {
        written.push(write_atomic(dir, name, bytes)?);
        manifest.outputs.push(OutputFile { file: name.clone(), bytes: bytes.len() });
    }
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    written.push(write_atomic(dir, "manifest.json", &json)?);
    Ok(written)
}
