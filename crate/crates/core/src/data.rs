//! Dataset synthesis, LIBSVM/SVMlight ingestion and partitioning across nodes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{CsrMatrix, LeastSquaresProblem, LogisticProblem};
use crate::rng::{self, Domain};
use crate::vecmath::DenseVector;

/// Defaults of the synthetic regression recipe: 10K samples, 1024 features.
pub const DEFAULT_SYNTH_SAMPLES: usize = 10_000;
pub const DEFAULT_SYNTH_FEATURES: usize = 1024;

/// A synthetic least-squares problem together with the model that generated
/// it.
#[derive(Debug, Clone)]
pub struct SyntheticRegression {
    pub problem: LeastSquaresProblem,
    pub x_true: DenseVector,
    pub seed: u64,
    pub noise_sigma: f64,
}

/// `A_ij ~ N(0, 1)`, `x_true ~ N(0, I)`, `b = A x_true + sigma * N(0, I)`.
pub fn synth_regression(m: usize, n: usize, noise_sigma: f64, seed: u64) -> Result<SyntheticRegression> {
    synth_regression_with_reg(m, n, noise_sigma, 0.0, seed)
}

pub fn synth_regression_with_reg(
    m: usize,
    n: usize,
    noise_sigma: f64,
    l2_reg: f64,
    seed: u64,
) -> Result<SyntheticRegression> {
    if m < 1 || n < 1 {
        return Err(Error::invalid(format!("need m >= 1 and n >= 1, got m={m}, n={n}")));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::invalid(format!("noise_sigma must be >= 0, got {noise_sigma}")));
    }
    let mut rng = rng::stream(seed, Domain::Design, 0, 0);
    let design: Vec<f64> = (0..m * n).map(|_| rng.sample(StandardNormal)).collect();
    let mut rng = rng::stream(seed, Domain::TrueModel, 0, 0);
    let x_true: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut rng = rng::stream(seed, Domain::Noise, 0, 0);
    let targets: Vec<f64> = design
        .chunks_exact(n)
        .map(|row| {
            let clean: f64 = row.iter().zip(&x_true).map(|(a, x)| a * x).sum();
            clean + noise_sigma * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let problem = LeastSquaresProblem::new(m, n, design, targets, l2_reg)?;
    Ok(SyntheticRegression {
        problem,
        x_true: DenseVector::new(x_true)?,
        seed,
        noise_sigma,
    })
}

// ---------------------------------------------------------------------------
// LIBSVM / SVMlight

/// Raw contents of a LIBSVM file: one label and one sparse row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LibsvmData {
    pub labels: Vec<f64>,
    /// 0-based `(column, value)` lists, strictly increasing columns.
    pub rows: Vec<Vec<(usize, f64)>>,
    /// Largest 1-based index seen.
    pub dim: usize,
    /// Comment lines that preceded the first sample, without the `#`.
    pub header_comments: Vec<String>,
}

impl LibsvmData {
    pub fn design(&self) -> Result<CsrMatrix> {
        CsrMatrix::from_rows(self.dim, &self.rows)
    }

    /// Average fraction of nonzero features per sample.
    pub fn density(&self) -> f64 {
        if self.rows.is_empty() || self.dim == 0 {
            return 0.0;
        }
        let nnz: usize = self.rows.iter().map(Vec::len).sum();
        nnz as f64 / (self.rows.len() as f64 * self.dim as f64)
    }

    /// Map labels to `{-1, +1}`. `{-1, +1}` and `{0, 1}` alphabets are
    /// accepted; anything else is rejected.
    pub fn binary_labels(&self) -> Result<Vec<f64>> {
        let plus_minus = self.labels.iter().all(|&y| y == 1.0 || y == -1.0);
        let zero_one = self.labels.iter().all(|&y| y == 0.0 || y == 1.0);
        if plus_minus {
            Ok(self.labels.clone())
        } else if zero_one {
            Ok(self.labels.iter().map(|&y| if y == 0.0 { -1.0 } else { 1.0 }).collect())
        } else {
            let bad = self
                .labels
                .iter()
                .find(|&&y| y != 1.0 && y != -1.0 && y != 0.0)
                .copied()
                .unwrap_or(f64::NAN);
            Err(Error::invalid(format!(
                "labels must be {{-1, +1}} or {{0, 1}}; found {bad} (or a mix of both alphabets)"
            )))
        }
    }
}

fn parse_error(path: Option<&Path>, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.map(Path::to_path_buf),
        line,
        message: message.into(),
    }
}

/// Parse LIBSVM text: `label index:value ...`, 1-based strictly increasing
/// indices, `#` starts a comment. Explicit zero values are dropped.
pub fn parse_libsvm<R: BufRead>(reader: R, path: Option<&Path>) -> Result<LibsvmData> {
    let mut data = LibsvmData {
        labels: Vec::new(),
        rows: Vec::new(),
        dim: 0,
        header_comments: Vec::new(),
    };
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let (content, comment) = match line.find('#') {
            Some(pos) => (&line[..pos], Some(&line[pos + 1..])),
            None => (line.as_str(), None),
        };
        let mut tokens = content.split_whitespace();
        let Some(label_tok) = tokens.next() else {
            if let (Some(c), true) = (comment, data.labels.is_empty()) {
                data.header_comments.push(c.trim().to_string());
            }
            continue;
        };
        let label: f64 = label_tok
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| parse_error(path, lineno, format!("invalid label {label_tok:?}")))?;
        let mut row = Vec::new();
        let mut prev = 0usize;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_error(path, lineno, format!("expected index:value, got {tok:?}")))?;
            let idx: i64 = idx
                .parse()
                .map_err(|_| parse_error(path, lineno, format!("non-integer index {idx:?}")))?;
            if idx <= 0 {
                return Err(parse_error(path, lineno, format!("index {idx} must be >= 1")));
            }
            let idx = idx as usize;
            if idx <= prev {
                return Err(parse_error(
                    path,
                    lineno,
                    format!("index {idx} does not increase (previous {prev})"),
                ));
            }
            prev = idx;
            let val: f64 = val
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| parse_error(path, lineno, format!("non-numeric value {val:?}")))?;
            data.dim = data.dim.max(idx);
            if val != 0.0 {
                row.push((idx - 1, val));
            }
        }
        data.labels.push(label);
        data.rows.push(row);
    }
    if data.labels.is_empty() {
        return Err(Error::EmptyInput {
            path: path.map(Path::to_path_buf),
        });
    }
    Ok(data)
}

pub fn read_libsvm(path: impl AsRef<Path>) -> Result<LibsvmData> {
    let path = path.as_ref();
    let file = File::open(path)?;
    parse_libsvm(BufReader::new(file), Some(path))
}

/// Load a LIBSVM file as an L2-regularized logistic regression problem.
pub fn load_libsvm(path: impl AsRef<Path>, l2_reg: f64) -> Result<LogisticProblem> {
    let path = path.as_ref();
    let data = read_libsvm(path)?;
    if let Some(r) = data.rows.iter().position(Vec::is_empty) {
        return Err(parse_error(
            Some(path),
            line_of_sample(path, r)?,
            "sample has no nonzero feature",
        ));
    }
    let labels = data.binary_labels()?;
    LogisticProblem::new(data.design()?, labels, l2_reg)
}

/// Load a LIBSVM file with real-valued targets as a least-squares problem.
pub fn load_libsvm_regression(path: impl AsRef<Path>, l2_reg: f64) -> Result<LeastSquaresProblem> {
    let data = read_libsvm(path)?;
    let (m, n) = (data.labels.len(), data.dim.max(1));
    let mut design = vec![0.0; m * n];
    for (r, row) in data.rows.iter().enumerate() {
        for &(c, v) in row {
            design[r * n + c] = v;
        }
    }
    LeastSquaresProblem::new(m, n, design, data.labels, l2_reg)
}

/// 1-based line number of the `r`-th sample (skipping blanks and comments).
fn line_of_sample(path: &Path, r: usize) -> Result<usize> {
    let reader = BufReader::new(File::open(path)?);
    let mut seen = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let content = line.split('#').next().unwrap_or("");
        if !content.trim().is_empty() {
            if seen == r {
                return Ok(i + 1);
            }
            seen += 1;
        }
    }
    Ok(0)
}

/// Write samples in LIBSVM format. Values are printed with the shortest
/// representation that round-trips, so reading the file back reproduces the
/// matrix exactly.
pub fn write_libsvm<W: Write>(
    mut out: W,
    labels: &[f64],
    rows: &[Vec<(usize, f64)>],
    header: Option<&str>,
) -> Result<()> {
    Error::check_dim(labels.len(), rows.len())?;
    if let Some(h) = header {
        for line in h.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    for (y, row) in labels.iter().zip(rows) {
        write!(out, "{y}")?;
        for &(c, v) in row {
            write!(out, " {}:{v}", c + 1)?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Provenance header for serialized synthetic problems.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticHeader {
    pub seed: u64,
    pub noise_sigma: f64,
    pub x_true: Vec<f64>,
}

const SYNTH_TAG: &str = "sparsim-synthetic";

impl SyntheticHeader {
    fn render(&self) -> String {
        let x: Vec<String> = self.x_true.iter().map(f64::to_string).collect();
        format!(
            "{SYNTH_TAG} seed={} noise_sigma={} x_true={}",
            self.seed,
            self.noise_sigma,
            x.join(",")
        )
    }

    /// Recover the header from the comment lines of a parsed file.
    pub fn from_comments(comments: &[String]) -> Option<Self> {
        let line = comments.iter().find(|c| c.starts_with(SYNTH_TAG))?;
        let mut seed = None;
        let mut noise_sigma = None;
        let mut x_true = None;
        for field in line.split_whitespace().skip(1) {
            let (k, v) = field.split_once('=')?;
            match k {
                "seed" => seed = v.parse().ok(),
                "noise_sigma" => noise_sigma = v.parse().ok(),
                "x_true" => {
                    x_true = v.split(',').map(|s| s.parse().ok()).collect::<Option<Vec<f64>>>()
                }
                _ => {}
            }
        }
        Some(SyntheticHeader {
            seed: seed?,
            noise_sigma: noise_sigma?,
            x_true: x_true?,
        })
    }
}

/// Serialize a synthetic regression problem with its provenance header.
pub fn write_synthetic(path: impl AsRef<Path>, synth: &SyntheticRegression) -> Result<()> {
    let p = &synth.problem;
    let n = crate::objectives::Objective::dim(p);
    let rows: Vec<Vec<(usize, f64)>> = p
        .design()
        .chunks_exact(n)
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(c, v)| (c, *v))
                .collect()
        })
        .collect();
    let header = SyntheticHeader {
        seed: synth.seed,
        noise_sigma: synth.noise_sigma,
        x_true: synth.x_true.as_slice().to_vec(),
    };
    let out = BufWriter::new(File::create(path)?);
    write_libsvm(out, p.targets(), &rows, Some(&header.render()))
}

// ---------------------------------------------------------------------------
// partitioning

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    #[default]
    Contiguous,
    Shuffled,
}

/// The samples owned by one node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shard {
    pub node_id: usize,
    pub sample_indices: Vec<usize>,
}

/// Split `0..m` into `P` disjoint, balanced shards. The first `m mod P`
/// shards get one extra sample.
pub fn partition(m: usize, nodes: usize, seed: u64, mode: PartitionMode) -> Result<Vec<Shard>> {
    if nodes == 0 || nodes > m {
        return Err(Error::invalid(format!(
            "need 1 <= P <= m, got P={nodes}, m={m}"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    if mode == PartitionMode::Shuffled {
        order.shuffle(&mut rng::stream(seed, Domain::Partition, m as u64, nodes as u64));
    }
    let (base, extra) = (m / nodes, m % nodes);
    let mut shards = Vec::with_capacity(nodes);
    let mut start = 0;
    for node_id in 0..nodes {
        let len = base + usize::from(node_id < extra);
        shards.push(Shard {
            node_id,
            sample_indices: order[start..start + len].to_vec(),
        });
        start += len;
    }
    Ok(shards)
}

/// Path helper used by loaders that resolve files relative to a config.
pub fn resolve(base: Option<&Path>, p: &Path) -> PathBuf {
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p.to_path_buf(),
    }
}
