//! Output files with a provenance header, artifact readers and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const TIMINGS_FILE: &str = "timings.txt";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format_version: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub config: Value,
}

impl Header {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            config: serde_json::to_value(config).expect("configuration serializes"),
        }
    }

    pub fn lines(&self) -> Vec<String> {
        vec![
            format!("format_version: {}", self.format_version),
            format!("tool_version: {}", self.tool_version),
            format!("config_hash: {}", self.config_hash),
            format!("config: {}", self.config),
        ]
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Document<T> {
    header: Header,
    data: T,
}

/// Writes files under one run directory and records what each stage wrote.
pub struct RunDir {
    root: PathBuf,
    header: Header,
    written: Vec<String>,
}

impl RunDir {
    pub fn create(root: &Path, config: &ExperimentConfig) -> CliResult<Self> {
        fs::create_dir_all(root)
            .map_err(|e| CliError::Io(format!("cannot create output dir {}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            header: Header::new(config),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn put(&mut self, rel: &str, text: &str) -> CliResult<()> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::Io(format!("cannot create {}: {e}", parent.display())))?;
        }
        fs::write(&path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        if !self.written.iter().any(|w| w == rel) {
            self.written.push(rel.to_string());
        }
        Ok(())
    }

    pub fn write_csv(&mut self, rel: &str, body: &str) -> CliResult<()> {
        let mut text: String = self.header.lines().iter().map(|l| format!("# {l}\n")).collect();
        text.push_str(body);
        self.put(rel, &text)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, data: &T) -> CliResult<()> {
        let doc = Document {
            header: self.header.clone(),
            data,
        };
        let mut text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Other(e.to_string()))?;
        text.push('\n');
        self.put(rel, &text)
    }

    /// `render` receives the header text to embed as a leading comment.
    pub fn write_svg(&mut self, rel: &str, render: impl FnOnce(&str) -> String) -> CliResult<()> {
        let comment = self.header.lines().join("\n");
        let text = render(&comment);
        self.put(rel, &text)
    }

    /// Plain PGM with the header as comment lines after the magic number.
    pub fn write_pgm(&mut self, rel: &str, image: &[f64], width: usize) -> CliResult<()> {
        let body = nullcal::synthetic::phantom::pgm_string(image, width)?;
        let (magic, rest) = body.split_once('\n').expect("PGM has a magic line");
        let mut text = format!("{magic}\n");
        for l in self.header.lines() {
            text.push_str(&format!("# {l}\n"));
        }
        text.push_str(rest);
        self.put(rel, &text)
    }

    pub fn take_written(&mut self) -> Vec<String> {
        std::mem::take(&mut self.written)
    }

    pub fn header(&self) -> &Header {
        &self.header
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Compatibility(format!("missing artifact {}: {e}", path.display())))?;
    let doc: Document<T> = serde_json::from_str(&text)
        .map_err(|e| CliError::Compatibility(format!("unreadable artifact {}: {e}", path.display())))?;
    if doc.header.format_version != FORMAT_VERSION {
        return Err(CliError::Compatibility(format!(
            "{} has format_version {}, expected {FORMAT_VERSION}",
            path.display(),
            doc.header.format_version
        )));
    }
    Ok(doc.data)
}

/// Numeric CSV with `#` comment lines; returns the column names and rows.
pub fn read_csv(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::Compatibility(format!("missing artifact {}: {e}", path.display())))?;
    let names = reader
        .headers()
        .map_err(|e| CliError::Compatibility(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Compatibility(format!("{}: {e}", path.display())))?;
        let row = record
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Compatibility(format!("{}: {e}", path.display())))?;
        rows.push(row);
    }
    Ok((names, rows))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct Manifest {
    pub config_hash: String,
    pub build: String,
    /// Files written by each stage, relative to the run directory.
    pub stages: BTreeMap<String, Vec<String>>,
}

/// Records the files of `stage` in the manifest and its wall-clock time in
/// the timings sidecar. A manifest from a different configuration is replaced.
pub fn record_stage(run: &mut RunDir, stage: &str, seconds: f64) -> CliResult<()> {
    let mut files = run.take_written();
    files.sort();
    let path = run.path(MANIFEST_FILE);
    let hash = run.header().config_hash.clone();
    let mut manifest = fs::read_to_string(&path)
        .ok()
        .and_then(|t| serde_json::from_str::<Document<Manifest>>(&t).ok())
        .map(|d| d.data)
        .filter(|m| m.config_hash == hash)
        .unwrap_or_default();
    manifest.config_hash = hash;
    manifest.build = format!("nullcal {} (format {FORMAT_VERSION})", env!("CARGO_PKG_VERSION"));
    for f in &files {
        if !run.path(f).exists() {
            return Err(CliError::Io(format!("stage {stage} lost output {f}")));
        }
    }
    manifest.stages.insert(stage.to_string(), files);
    run.write_json(MANIFEST_FILE, &manifest)?;
    run.take_written();
    let timing = format!("{stage}\t{seconds:.3}\n");
    use std::io::Write;
    fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(run.path(TIMINGS_FILE))
        .and_then(|mut f| f.write_all(timing.as_bytes()))
        .map_err(|e| CliError::Io(format!("cannot write timings: {e}")))?;
    Ok(())
}

/// CSV body from column names and rows.
pub fn csv_body(names: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = names.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
