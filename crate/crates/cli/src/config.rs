//! Experiment configuration: a TOML document describing the problem, the
//! run parameters (any of `nodes`, `k`, `alpha` and `compressor` may be a
//! list, which turns the run into a sweep), analysis toggles and output.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sparsim_core::data::PartitionMode;
use sparsim_core::engine::{Compressor, LearningRateSchedule, RunConfig, Sampling};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_SWEEP_CAP: usize = 512;

/// Keys that must be present in every config.
pub const REQUIRED_KEYS: &[&str] = &[
    "problem.kind",
    "run.nodes",
    "run.k | run.k_fraction",
    "run.steps",
    "run.schedule.kind",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// Dotted key path, when the error can be attributed to a key.
    pub key: Option<String>,
    /// 1-based line in the config text.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.key, self.line) {
            (Some(k), Some(l)) => write!(f, "config error at `{k}` (line {l}): {}", self.message),
            (Some(k), None) => write!(f, "config error at `{k}`: {}", self.message),
            (None, Some(l)) => write!(f, "config error (line {l}): {}", self.message),
            (None, None) => write!(f, "config error: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// A value that may be given once or as a list of sweep points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// Gaussian design, Gaussian true model, additive Gaussian noise.
    SyntheticRegression {
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default = "default_features")]
        features: usize,
        #[serde(default = "default_noise")]
        noise_sigma: f64,
        #[serde(default)]
        l2_reg: f64,
    },
    /// Least squares on a LIBSVM file.
    LibsvmRegression {
        path: PathBuf,
        #[serde(default)]
        l2_reg: f64,
    },
    /// L2-regularised logistic regression on a LIBSVM file.
    LibsvmLogistic {
        path: PathBuf,
        #[serde(default = "default_logistic_reg")]
        l2_reg: f64,
    },
    /// One-hidden-layer tanh regression network with a random teacher.
    TanhNetwork {
        #[serde(default = "default_net_samples")]
        samples: usize,
        #[serde(default = "default_inputs")]
        inputs: usize,
        #[serde(default = "default_hidden")]
        hidden: usize,
        #[serde(default = "default_noise")]
        noise_sigma: f64,
        #[serde(default = "default_init_scale")]
        init_scale: f64,
    },
}

impl ProblemSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemSpec::SyntheticRegression { .. } => "synthetic_regression",
            ProblemSpec::LibsvmRegression { .. } => "libsvm_regression",
            ProblemSpec::LibsvmLogistic { .. } => "libsvm_logistic",
            ProblemSpec::TanhNetwork { .. } => "tanh_network",
        }
    }

    /// Parameter count when it is known without reading data.
    pub fn known_dim(&self) -> Option<usize> {
        match self {
            ProblemSpec::SyntheticRegression { features, .. } => Some(*features),
            ProblemSpec::TanhNetwork { inputs, hidden, .. } => Some(hidden * inputs + 2 * hidden + 1),
            _ => None,
        }
    }
}

fn default_samples() -> usize {
    sparsim_core::data::DEFAULT_SYNTH_SAMPLES
}
fn default_features() -> usize {
    sparsim_core::data::DEFAULT_SYNTH_FEATURES
}
fn default_noise() -> f64 {
    0.1
}
fn default_logistic_reg() -> f64 {
    1e-4
}
fn default_net_samples() -> usize {
    1000
}
fn default_inputs() -> usize {
    sparsim_core::SmoothNonconvexProblem::DEFAULT_INPUTS
}
fn default_hidden() -> usize {
    sparsim_core::SmoothNonconvexProblem::DEFAULT_HIDDEN
}
fn default_init_scale() -> f64 {
    1.0
}
fn default_one() -> usize {
    1
}
fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_compressor() -> OneOrMany<Compressor> {
    OneOrMany::One(Compressor::TopK)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    PowerLaw,
    FixedNonconvex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    /// Rate for `constant` and `fixed_nonconvex`; a list sweeps it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<OneOrMany<f64>>,
    /// Initial rate for `power_law`; a list sweeps it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha0: Option<OneOrMany<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
}

impl ScheduleSpec {
    fn rates(&self) -> Vec<f64> {
        match self.kind {
            ScheduleKind::PowerLaw => self.alpha0.as_ref().map(OneOrMany::values).unwrap_or_default(),
            _ => self.alpha.as_ref().map(OneOrMany::values).unwrap_or_default(),
        }
    }

    fn build(&self, rate: f64) -> LearningRateSchedule {
        match self.kind {
            ScheduleKind::Constant => LearningRateSchedule::Constant { alpha: rate },
            ScheduleKind::FixedNonconvex => LearningRateSchedule::FixedNonconvex { alpha: rate },
            ScheduleKind::PowerLaw => LearningRateSchedule::PowerLaw {
                alpha0: rate,
                theta: self.theta.unwrap_or(0.5),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub nodes: OneOrMany<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<OneOrMany<usize>>,
    /// `K` as a fraction of the dimension, rounded to the nearest integer
    /// and clamped to `[1, n]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_fraction: Option<OneOrMany<f64>>,
    pub steps: usize,
    #[serde(default = "default_one")]
    pub batch_size: usize,
    #[serde(default = "default_compressor")]
    pub compressor: OneOrMany<Compressor>,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub partition: PartitionMode,
    #[serde(default)]
    pub gradient_sample_every: usize,
    pub schedule: ScheduleSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    #[serde(default)]
    pub record_xi: bool,
    #[serde(default)]
    pub record_lemma_slack: bool,
    /// Apply the invariant checks to every run, not only under
    /// `check-invariants`.
    #[serde(default)]
    pub check_invariants: bool,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Success-region radius for the convex bounds; defaults to
    /// `1e-3 ||x0 - x*||^2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default = "default_trials")]
    pub second_moment_trials: usize,
    #[serde(default = "default_pilot")]
    pub pilot_steps: usize,
    #[serde(default = "default_d_horizon")]
    pub d_horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_curve_k: Option<OneOrMany<usize>>,
}

fn default_threshold() -> f64 {
    1e-3
}
fn default_trials() -> usize {
    32
}
fn default_pilot() -> usize {
    500
}
fn default_d_horizon() -> usize {
    100_000
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        AnalysisSpec {
            record_xi: false,
            record_lemma_slack: false,
            check_invariants: false,
            threshold: default_threshold(),
            epsilon: None,
            second_moment_trials: default_trials(),
            pilot_steps: default_pilot(),
            d_horizon: default_d_horizon(),
            norm_curve_k: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "default_cap")]
    pub max_points: usize,
}

fn default_cap() -> usize {
    DEFAULT_SWEEP_CAP
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            max_points: DEFAULT_SWEEP_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModeSpec {
    #[default]
    Sequential,
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ExecutionSpec {
    #[serde(default)]
    pub mode: ModeSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub problem: ProblemSpec,
    pub run: RunSpec,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub execution: ExecutionSpec,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

/// What determines the numbers an experiment produces; execution and
/// output settings are deliberately left out so that traces hash the same
/// however they are run.
#[derive(Serialize)]
struct HashedPart<'a> {
    seed: u64,
    problem: &'a ProblemSpec,
    run: &'a RunSpec,
    analysis: &'a AnalysisSpec,
}

impl ExperimentConfig {
    /// Hex SHA-256 of the result-determining part of the config.
    pub fn hash(&self) -> String {
        let part = HashedPart {
            seed: self.seed,
            problem: &self.problem,
            run: &self.run,
            analysis: &self.analysis,
        };
        let json = serde_json::to_string(&part).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// A problem path resolved against the config's directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        sparsim_core::data::resolve(self.base_dir.as_deref(), p)
    }

    /// Expand sweep axes in the fixed order nodes, K, alpha, compressor.
    /// `n` is the problem dimension.
    pub fn sweep_points(&self, n: usize) -> Result<Vec<SweepPoint>, ConfigError> {
        let ks: Vec<usize> = match (&self.run.k, &self.run.k_fraction) {
            (Some(k), _) => k.values(),
            (None, Some(f)) => f.values().iter().map(|f| ((f * n as f64).round() as usize).clamp(1, n)).collect(),
            (None, None) => unreachable!("validated at parse time"),
        };
        if let Some(&bad) = ks.iter().find(|&&k| k > n) {
            return Err(ConfigError {
                key: Some("run.k".into()),
                line: None,
                message: format!("K = {bad} exceeds the problem dimension n = {n}"),
            });
        }
        let mut points = Vec::new();
        for &nodes in &self.run.nodes.values() {
            for &k in &ks {
                for &rate in &self.run.schedule.rates() {
                    for &compressor in &self.run.compressor.values() {
                        let mut rc = RunConfig::new(nodes, k, self.run.steps, self.run.schedule.build(rate));
                        rc.batch_size = self.run.batch_size;
                        rc.seed = self.seed;
                        rc.compressor = compressor;
                        rc.sampling = self.run.sampling;
                        rc.partition = self.run.partition;
                        rc.gradient_sample_every = self.run.gradient_sample_every;
                        rc.record_xi = self.analysis.record_xi;
                        rc.record_lemma_slack = self.analysis.record_lemma_slack;
                        points.push(SweepPoint {
                            index: points.len(),
                            label: format!("p{nodes}-k{k}-a{rate}-{}", compressor.name()),
                            config: rc,
                        });
                    }
                }
            }
        }
        Ok(points)
    }

    /// Number of sweep points implied by the axes.
    pub fn sweep_size(&self) -> usize {
        let k = match (&self.run.k, &self.run.k_fraction) {
            (Some(k), _) => k.values().len(),
            (None, Some(f)) => f.values().len(),
            (None, None) => 0,
        };
        self.run.nodes.values().len() * k * self.run.schedule.rates().len() * self.run.compressor.values().len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    pub label: String,
    pub config: RunConfig,
}

impl SweepPoint {
    pub fn dir_name(&self) -> String {
        format!("{:03}-{}", self.index, self.label)
    }
}

/// Parse and validate a config document. `base_dir` anchors relative
/// paths; files they name must exist.
pub fn parse_config(text: &str, base_dir: Option<&Path>) -> Result<ExperimentConfig, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| from_toml(text, &e))?;
    let missing = missing_required(&table);
    if !missing.is_empty() {
        return Err(ConfigError {
            key: None,
            line: None,
            message: format!("missing required keys: {}", missing.join(", ")),
        });
    }
    let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| from_toml(text, &e))?;
    cfg.base_dir = base_dir.map(Path::to_path_buf);
    validate(&cfg, text)?;
    Ok(cfg)
}

fn missing_required(table: &toml::Table) -> Vec<&'static str> {
    let get = |path: &[&str]| {
        let mut cur = table.get(path[0]);
        for key in &path[1..] {
            cur = cur.and_then(|v| v.as_table()).and_then(|t| t.get(*key));
        }
        cur.is_some()
    };
    REQUIRED_KEYS
        .iter()
        .copied()
        .filter(|key| {
            !key.split(" | ").any(|alt| {
                let parts: Vec<&str> = alt.split('.').collect();
                get(&parts)
            })
        })
        .collect()
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// The dotted key on `line`, qualified by the nearest table header above.
fn key_at_line(text: &str, line: usize) -> Option<String> {
    let lines: Vec<&str> = text.lines().collect();
    let src = lines.get(line.checked_sub(1)?)?.trim();
    let header = lines[..line - 1]
        .iter()
        .rev()
        .map(|l| l.trim())
        .find(|l| l.starts_with('['))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim().to_string());
    if src.starts_with('[') {
        return Some(src.trim_matches(|c| c == '[' || c == ']').trim().to_string());
    }
    let key = src.split('=').next()?.trim();
    if key.is_empty() {
        return header;
    }
    Some(match header {
        Some(h) => format!("{h}.{key}"),
        None => key.to_string(),
    })
}

/// Line of `key` inside table `section` (`""` for the root table).
fn locate(text: &str, dotted: &str) -> Option<usize> {
    let (section, key) = match dotted.rsplit_once('.') {
        Some((s, k)) => (s, k),
        None => ("", dotted),
    };
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let l = raw.trim();
        if l.starts_with('[') {
            current = l.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == dotted {
                return Some(i + 1);
            }
            continue;
        }
        if current == section && l.split('=').next().map(str::trim) == Some(key) {
            return Some(i + 1);
        }
    }
    None
}

fn from_toml(text: &str, e: &toml::de::Error) -> ConfigError {
    let line = e.span().map(|s| line_of(text, s.start));
    ConfigError {
        key: line.and_then(|l| key_at_line(text, l)),
        line,
        message: e.message().trim().to_string(),
    }
}

fn constraint(text: &str, key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        key: Some(key.to_string()),
        line: locate(text, key),
        message: message.into(),
    }
}

fn validate(cfg: &ExperimentConfig, text: &str) -> Result<(), ConfigError> {
    let err = |key: &str, msg: String| Err(constraint(text, key, msg));
    let run = &cfg.run;
    if run.steps == 0 {
        return err("run.steps", "must be >= 1".into());
    }
    if run.batch_size == 0 {
        return err("run.batch_size", "must be >= 1".into());
    }
    if run.nodes.values().contains(&0) {
        return err("run.nodes", "every value must be >= 1".into());
    }
    match (&run.k, &run.k_fraction) {
        (Some(_), Some(_)) => return err("run.k_fraction", "give either run.k or run.k_fraction, not both".into()),
        (Some(k), None) => {
            if k.values().contains(&0) {
                return err("run.k", "every value must be >= 1".into());
            }
            if let (Some(n), Some(&big)) = (cfg.problem.known_dim(), k.values().iter().max()) {
                if big > n {
                    return err("run.k", format!("K = {big} exceeds the problem dimension n = {n}"));
                }
            }
        }
        (None, Some(f)) => {
            if f.values().iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
                return err("run.k_fraction", "every value must lie in (0, 1]".into());
            }
        }
        (None, None) => unreachable!("required keys checked"),
    }
    for list_empty in [
        run.nodes.values().is_empty(),
        run.compressor.values().is_empty(),
        run.k.as_ref().is_some_and(|k| k.values().is_empty()),
        run.k_fraction.as_ref().is_some_and(|k| k.values().is_empty()),
    ] {
        if list_empty {
            return Err(ConfigError {
                key: None,
                line: None,
                message: "sweep lists must not be empty".into(),
            });
        }
    }

    let s = &run.schedule;
    let (rate_key, rates) = match s.kind {
        ScheduleKind::PowerLaw => ("run.schedule.alpha0", &s.alpha0),
        _ => ("run.schedule.alpha", &s.alpha),
    };
    let Some(rates) = rates else {
        return err(rate_key, format!("required for schedule kind {:?}", s.kind));
    };
    if rates.values().is_empty() || rates.values().iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return err(rate_key, "learning rates must be finite and > 0".into());
    }
    match s.kind {
        ScheduleKind::PowerLaw => {
            if let Some(t) = s.theta {
                if !(t > 0.0 && t.is_finite()) {
                    return err("run.schedule.theta", "must be finite and > 0".into());
                }
            }
            if s.alpha.is_some() {
                return err("run.schedule.alpha", "power_law takes alpha0, not alpha".into());
            }
        }
        _ => {
            if s.alpha0.is_some() || s.theta.is_some() {
                return err("run.schedule", "alpha0 and theta only apply to power_law".into());
            }
        }
    }

    match &cfg.problem {
        ProblemSpec::SyntheticRegression {
            samples,
            features,
            noise_sigma,
            l2_reg,
        } => {
            if *samples == 0 || *features == 0 {
                return err("problem.samples", "samples and features must be >= 1".into());
            }
            if !(*noise_sigma >= 0.0 && noise_sigma.is_finite()) {
                return err("problem.noise_sigma", "must be finite and >= 0".into());
            }
            if !(*l2_reg >= 0.0 && l2_reg.is_finite()) {
                return err("problem.l2_reg", "must be finite and >= 0".into());
            }
        }
        ProblemSpec::LibsvmRegression { path, l2_reg } | ProblemSpec::LibsvmLogistic { path, l2_reg } => {
            let resolved = cfg.resolve(path);
            if !resolved.is_file() {
                return err("problem.path", format!("no such file: {}", resolved.display()));
            }
            let logistic = matches!(cfg.problem, ProblemSpec::LibsvmLogistic { .. });
            if !(l2_reg.is_finite() && (*l2_reg > 0.0 || (!logistic && *l2_reg == 0.0))) {
                return err("problem.l2_reg", "must be finite, >= 0 (and > 0 for logistic)".into());
            }
        }
        ProblemSpec::TanhNetwork {
            samples,
            inputs,
            hidden,
            noise_sigma,
            init_scale,
        } => {
            if *samples == 0 || *inputs == 0 || *hidden == 0 {
                return err("problem.samples", "samples, inputs and hidden must be >= 1".into());
            }
            if !(*noise_sigma >= 0.0 && noise_sigma.is_finite()) {
                return err("problem.noise_sigma", "must be finite and >= 0".into());
            }
            if !(*init_scale > 0.0 && init_scale.is_finite()) {
                return err("problem.init_scale", "must be finite and > 0".into());
            }
        }
    }

    let a = &cfg.analysis;
    if !(a.threshold > 0.0 && a.threshold < 1.0) {
        return err("analysis.threshold", "must lie in (0, 1)".into());
    }
    if a.epsilon.is_some_and(|e| !(e > 0.0 && e.is_finite())) {
        return err("analysis.epsilon", "must be finite and > 0".into());
    }
    if a.second_moment_trials == 0 || a.pilot_steps == 0 || a.d_horizon < 10 {
        return err(
            "analysis",
            "second_moment_trials and pilot_steps must be >= 1, d_horizon >= 10".into(),
        );
    }
    if cfg.execution.threads == Some(0) {
        return err("execution.threads", "must be >= 1".into());
    }
    if cfg.sweep.max_points == 0 {
        return err("sweep.max_points", "must be >= 1".into());
    }
    let size = cfg.sweep_size();
    if size > cfg.sweep.max_points {
        return err(
            "sweep.max_points",
            format!("sweep has {size} points, above the cap of {}", cfg.sweep.max_points),
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[problem]
kind = "synthetic_regression"
samples = 100
features = 16

[run]
nodes = 2
k = 4
steps = 10

[run.schedule]
kind = "constant"
alpha = 0.01
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL, None).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.run.batch_size, 1);
        assert_eq!(cfg.sweep.max_points, 512);
        let pts = cfg.sweep_points(16).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].config.seed, 42);
        assert_eq!(pts[0].config.compressor, Compressor::TopK);
    }

    #[test]
    fn empty_document_lists_required_keys() {
        let e = parse_config("", None).unwrap_err();
        for key in REQUIRED_KEYS {
            assert!(e.message.contains(key), "{e}");
        }
    }

    #[test]
    fn k_list_expands_to_sweep() {
        let text = MINIMAL
            .replace("features = 16", "features = 1024")
            .replace("k = 4", "k = [10, 102, 1024]");
        let cfg = parse_config(&text, None).unwrap();
        let pts = cfg.sweep_points(1024).unwrap();
        assert_eq!(pts.iter().map(|p| p.config.k).collect::<Vec<_>>(), vec![10, 102, 1024]);
        assert_eq!(pts[2].config.k, 1024);
    }

    #[test]
    fn fractions_round_and_clamp() {
        let text = MINIMAL
            .replace("features = 16", "features = 1024")
            .replace("k = 4", "k_fraction = [0.001, 0.01, 0.1, 1.0]");
        let cfg = parse_config(&text, None).unwrap();
        let ks: Vec<usize> = cfg.sweep_points(1024).unwrap().iter().map(|p| p.config.k).collect();
        assert_eq!(ks, vec![1, 10, 102, 1024]);
    }

    #[test]
    fn unknown_key_reports_path_and_line() {
        let text = MINIMAL.replace("steps = 10", "steps = 10\nstepz = 3");
        let e = parse_config(&text, None).unwrap_err();
        assert_eq!(e.key.as_deref(), Some("run.stepz"), "{e}");
        assert_eq!(e.line, Some(11));
    }

    #[test]
    fn type_mismatch_reports_path_and_line() {
        let text = MINIMAL.replace("steps = 10", "steps = \"ten\"");
        let e = parse_config(&text, None).unwrap_err();
        assert_eq!(e.key.as_deref(), Some("run.steps"), "{e}");
        assert_eq!(e.line, Some(10));
    }

    #[test]
    fn constraint_violation_reports_path_and_line() {
        let e = parse_config(&MINIMAL.replace("k = 4", "k = 17"), None).unwrap_err();
        assert_eq!(e.key.as_deref(), Some("run.k"));
        assert_eq!(e.line, Some(9));
        let e = parse_config(&MINIMAL.replace("alpha = 0.01", "alpha = -1.0"), None).unwrap_err();
        assert_eq!(e.key.as_deref(), Some("run.schedule.alpha"));
        let e = parse_config(&MINIMAL.replace("kind = \"constant\"", "kind = \"power_law\""), None).unwrap_err();
        assert_eq!(e.key.as_deref(), Some("run.schedule.alpha0"));
    }

    #[test]
    fn sweep_cap_enforced() {
        let text = MINIMAL.replace("nodes = 2", "nodes = [1, 2, 3]") + "\n[sweep]\nmax_points = 2\n";
        let e = parse_config(&text, None).unwrap_err();
        assert_eq!(e.key.as_deref(), Some("sweep.max_points"));
    }

    #[test]
    fn missing_file_rejected_at_parse_time() {
        let text = MINIMAL.replace(
            "kind = \"synthetic_regression\"\nsamples = 100\nfeatures = 16",
            "kind = \"libsvm_logistic\"\npath = \"nope.svm\"",
        );
        let e = parse_config(&text, Some(Path::new("/nonexistent"))).unwrap_err();
        assert_eq!(e.key.as_deref(), Some("problem.path"));
        assert_eq!(e.line, Some(4));
    }

    #[test]
    fn hash_ignores_execution_settings() {
        let a = parse_config(MINIMAL, None).unwrap();
        let b = parse_config(&(MINIMAL.to_string() + "\n[execution]\nmode = \"parallel\"\nthreads = 3\n"), None).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = parse_config(&format!("seed = 7\n{MINIMAL}"), None).unwrap();
        assert_ne!(a.hash(), c.hash());
    }
}
