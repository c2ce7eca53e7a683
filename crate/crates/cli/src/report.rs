//! Report writing. CSV reports start with `#` header lines; JSON reports
//! wrap their payload as `{"header": .., "data": ..}`.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Header {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub extra: Vec<(String, String)>,
}

/// SHA-256 over the canonical config text. The output directory is left
/// out so that identical runs into different directories agree.
pub fn config_hash(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.out_dir = RunConfig::default().out_dir;
    let digest = Sha256::digest(c.canonical().as_bytes());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    format!("sha256:{hex}")
}

impl Header {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        Self {
            tool: "mwslc",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_hash: config_hash(cfg),
            seed: cfg.seed,
            extra: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.extra.push((key.to_string(), value.to_string()));
        self
    }

    fn csv_lines(&self) -> String {
        let mut s = format!(
            "# tool={} version={} command={}\n# config_hash={}\n# seed={}\n",
            self.tool, self.version, self.command, self.config_hash, self.seed
        );
        for (k, v) in &self.extra {
            s.push_str(&format!("# {k}={v}\n"));
        }
        s
    }
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, header: &Header, data: &T) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Wrapped<'a, T> {
        header: &'a Header,
        data: &'a T,
    }
    let mut text = serde_json::to_string_pretty(&Wrapped { header, data })
        .map_err(|e| CliError::Numeric(format!("cannot serialise report: {e}")))?;
    text.push('\n');
    write_text(path, &text)
}

/// Writes `<dir>/<stem>.<ext>` in the requested format and returns the path.
pub fn write_report<T: Serialize>(
    dir: &Path,
    stem: &str,
    format: Format,
    header: &Header,
    csv_body: &str,
    data: &T,
) -> Result<PathBuf, CliError> {
    let path = dir.join(format!("{stem}.{}", format.extension()));
    match format {
        Format::Csv => write_text(&path, &format!("{}{csv_body}", header.csv_lines()))?,
        Format::Json => write_json(&path, header, data)?,
    }
    Ok(path)
}

/// Reads the `data` member of a JSON report.
pub fn read_json_data<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut v: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::io(path, e))?;
    let data = v
        .get_mut("data")
        .map(serde_json::Value::take)
        .ok_or_else(|| CliError::io(path, "missing `data` member"))?;
    serde_json::from_value(data).map_err(|e| CliError::io(path, e))
}
