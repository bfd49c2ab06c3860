//! Output files. Every file carries a stamp (artifact version, config hash,
//! seed) and nothing time- or host-dependent, so rerunning a config
//! reproduces the files byte for byte.
//!
//! CSV files start with `#` comment lines (gnuplot skips them) followed by
//! a header row. Missing values are written as `nan`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use sparsim_core::engine::Trace;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Stamp {
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl Stamp {
    pub fn new(config_sha256: String, seed: u64) -> Self {
        Stamp {
            version: VERSION.to_string(),
            config_sha256,
            seed,
        }
    }

    fn comment(&self) -> String {
        format!(
            "# sparsim {} config_sha256={} seed={}\n",
            self.version, self.config_sha256, self.seed
        )
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| x.to_string())
}

fn create(path: &Path) -> std::io::Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// A CSV file with the stamp and optional extra comment lines on top.
pub fn write_csv(path: &Path, stamp: &Stamp, comments: &[String], header: &[&str], rows: &[Vec<String>]) -> std::io::Result<()> {
    let mut out = create(path)?;
    out.write_all(stamp.comment().as_bytes())?;
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// A pretty-printed JSON object with the stamp under `"stamp"`.
pub fn write_json(path: &Path, stamp: &Stamp, body: Value) -> std::io::Result<()> {
    let mut doc = json!({ "stamp": stamp });
    if let (Some(d), Value::Object(b)) = (doc.as_object_mut(), body) {
        d.extend(b);
    }
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, &doc)?;
    out.write_all(b"\n")?;
    out.flush()
}

pub fn write_text(path: &Path, stamp: &Stamp, body: &str) -> std::io::Result<()> {
    let mut out = create(path)?;
    out.write_all(stamp.comment().as_bytes())?;
    out.write_all(body.as_bytes())?;
    out.flush()
}

/// JSONL trace: a header object, then one step record per line.
pub fn write_trace_jsonl(path: &Path, stamp: &Stamp, label: &str, trace: &Trace) -> std::io::Result<()> {
    let mut out = create(path)?;
    let header = json!({
        "header": true,
        "stamp": stamp,
        "point": label,
        "dim": trace.dim,
        "run_config": trace.config,
    });
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for r in &trace.records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub const TRACE_COLUMNS: [&str; 11] = [
    "t",
    "loss_v",
    "loss_x",
    "gap_norm",
    "grad_norm_sq_v",
    "x_step_norm",
    "xi",
    "xi_lhs",
    "lemma1_slack",
    "conservation_residual",
    "bytes_sent_per_node",
];

pub fn write_trace_csv(path: &Path, stamp: &Stamp, label: &str, trace: &Trace) -> std::io::Result<()> {
    let rows: Vec<Vec<String>> = trace
        .records
        .iter()
        .map(|r| {
            vec![
                r.t.to_string(),
                r.loss_v.to_string(),
                r.loss_x.to_string(),
                r.gap_norm.to_string(),
                r.grad_norm_sq_v.to_string(),
                r.x_step_norm.to_string(),
                fmt_opt(r.xi),
                fmt_opt(r.xi_lhs),
                fmt_opt(r.lemma1_slack),
                r.conservation_residual.to_string(),
                r.bytes_sent_per_node.to_string(),
            ]
        })
        .collect();
    write_csv(path, stamp, &[format!("point {label}")], &TRACE_COLUMNS, &rows)
}
