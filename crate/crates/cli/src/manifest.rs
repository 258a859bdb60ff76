use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct OutputFile {
    pub file: String,
    /// Schema of a CSV table, or the format of other files.
    pub schema: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Everything needed to reproduce a run. Only `started_unix` and
/// `finished_unix` differ between re-runs with the same flags.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub git_describe: String,
    pub command_line: Vec<String>,
    pub command: String,
    pub params: serde_json::Value,
    pub master_seed: u64,
    pub threads: usize,
    pub budget: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub excluded_truncated: u64,
    /// `None` for commands without a pass/fail verdict.
    pub verdict: Option<bool>,
    pub outputs: Vec<OutputFile>,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// `git describe` of the working directory, if it is a checkout.
pub fn git_describe(dir: &Path) -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(dir)
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}
