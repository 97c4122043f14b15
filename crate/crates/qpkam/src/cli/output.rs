//! Run manifests and artifact writers. Every artifact carries the manifest hash.

use super::config::ExperimentConfig;
use crate::spaces::TruncatedField;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub format: u32,
    pub command: String,
    pub seed: u64,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            format: FORMAT_VERSION,
            command: command.into(),
            seed: config.seed,
            config: config.clone(),
        }
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("manifest serializes");
        Sha256::digest(&bytes).iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

/// Comma separated table with a header row and a leading hash comment.
#[derive(Clone, Debug)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

#[derive(Clone, Debug)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// 17 significant digits, enough to round-trip an `f64`.
pub fn fmt_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: vec![] }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self, hash: &str) -> String {
        let mut out = format!("# manifest_sha256={hash}\n{}\n", self.header.join(","));
        for r in &self.rows {
            let cells: Vec<String> = r
                .iter()
                .map(|c| match c {
                    Cell::Int(i) => i.to_string(),
                    Cell::Float(f) => fmt_float(*f),
                    Cell::Text(t) => t.clone(),
                })
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Writes the artifacts of one run into a directory.
pub struct ArtifactWriter {
    dir: PathBuf,
    manifest: Manifest,
    hash: String,
    written: Vec<PathBuf>,
}

impl ArtifactWriter {
    pub fn create(dir: &Path, manifest: Manifest) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let hash = manifest.hash();
        let mut w = ArtifactWriter { dir: dir.to_path_buf(), manifest, hash, written: vec![] };
        let body = json!({ "manifest_sha256": w.hash, "manifest": w.manifest });
        let name = format!("{}_manifest.json", w.manifest.command);
        w.put(&name, &pretty(&body))?;
        Ok(w)
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.written
    }

    fn put(&mut self, name: &str, body: &str) -> std::io::Result<()> {
        let p = self.dir.join(name);
        std::fs::write(&p, body)?;
        self.written.push(p);
        Ok(())
    }

    pub fn csv(&mut self, name: &str, t: &Table) -> std::io::Result<()> {
        let body = t.render(&self.hash);
        self.put(name, &body)
    }

    pub fn json(&mut self, name: &str, result: Value) -> std::io::Result<()> {
        let body = json!({ "manifest_sha256": self.hash, "command": self.manifest.command, "result": result });
        self.put(name, &pretty(&body))
    }
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

/// Nonzero coefficients as a mode list and `[re, im]` pairs.
pub fn field_json(f: &TruncatedField) -> Value {
    let (modes, values): (Vec<Value>, Vec<Value>) = f
        .modes()
        .filter(|(_, _, v)| v.norm() > 0.0)
        .map(|(ell, j, v)| (json!({ "l": ell, "j": j }), json!([v.re, v.im])))
        .unzip();
    json!({ "d": f.shape.d, "l": f.shape.l, "j": f.shape.j, "real": f.real, "modes": modes, "values": values })
}

/// Replaces non-finite floats, which JSON cannot carry, by strings.
pub fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(v.to_string())
    }
}
