//! Subcommand implementations.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use sparsim_core::analysis::{self, NonconvexBoundInputs, NonconvexConstants, XiSummary};
use sparsim_core::data;
use sparsim_core::engine::{self, ExecutionMode, LearningRateSchedule, Trace};
use sparsim_core::objectives::estimate_second_moment;
use sparsim_core::vecmath::gamma;
use sparsim_core::{DenseVector, LeastSquaresProblem, LogisticProblem, Objective, SmoothNonconvexProblem};

use crate::config::{ConfigError, ExperimentConfig, ModeSpec, ProblemSpec, SweepPoint};
use crate::output::{self, fmt_opt, Stamp};

/// Environment variable that overrides the output directory.
pub const OUT_ENV: &str = "SPARSIM_OUT";
pub const DEFAULT_OUT: &str = "sparsim-out";

pub const CONSERVATION_TOL: f64 = 1e-10;
pub const LEMMA_SLACK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Run,
    Sweep,
    ValidateAssumption,
    NormCurve,
    ConvergenceSweep,
    Bounds,
    CheckInvariants,
}

impl Command {
    pub fn dir(&self) -> &'static str {
        match self {
            Command::Run => "run",
            Command::Sweep => "sweep",
            Command::ValidateAssumption => "validate-assumption",
            Command::NormCurve => "norm-curve",
            Command::ConvergenceSweep => "convergence-sweep",
            Command::Bounds => "bounds",
            Command::CheckInvariants => "check-invariants",
        }
    }
}

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Status {
    Ok = 0,
    CheckFailed = 1,
    Diverged = 2,
    ConfigError = 3,
    IoError = 4,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Core(#[from] sparsim_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn status(&self) -> Status {
        use sparsim_core::Error as E;
        match self {
            CliError::Config(_) => Status::ConfigError,
            CliError::Io(_) | CliError::Core(E::Io(_)) => Status::IoError,
            CliError::Core(E::Divergence { .. }) => Status::Diverged,
            CliError::Core(E::InvalidParameter(_) | E::DimensionMismatch { .. } | E::Parse { .. } | E::EmptyInput { .. }) => {
                Status::ConfigError
            }
            CliError::Core(_) => Status::CheckFailed,
        }
    }
}

/// Command-line overrides on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub mode: Option<ModeSpec>,
    /// Value of the output-directory environment variable, if set.
    pub env_out: Option<PathBuf>,
}

#[derive(Debug)]
pub struct Report {
    pub status: Status,
    pub out_dir: PathBuf,
    pub lines: Vec<String>,
}

pub fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        key: None,
        line: None,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    let mut cfg = crate::config::parse_config(&text, path.parent())?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Precedence: `--out`, then the environment variable, then the config,
/// then `sparsim-out` in the working directory.
pub fn output_root(cfg: &ExperimentConfig, ov: &Overrides) -> PathBuf {
    ov.out
        .clone()
        .or_else(|| ov.env_out.clone())
        .or_else(|| cfg.output.dir.as_ref().map(|d| cfg.resolve(d)))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn execution_mode(cfg: &ExperimentConfig, ov: &Overrides) -> ExecutionMode {
    match ov.mode.unwrap_or(cfg.execution.mode) {
        ModeSpec::Sequential => ExecutionMode::Sequential,
        ModeSpec::Parallel => ExecutionMode::Parallel {
            threads: ov
                .threads
                .or(cfg.execution.threads)
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
        },
    }
}

pub enum AnyProblem {
    LeastSquares(LeastSquaresProblem),
    Logistic(LogisticProblem),
    Network(SmoothNonconvexProblem),
}

pub struct BuiltProblem {
    pub problem: AnyProblem,
    pub start: DenseVector,
}

impl BuiltProblem {
    pub fn objective(&self) -> &dyn Objective {
        match &self.problem {
            AnyProblem::LeastSquares(p) => p,
            AnyProblem::Logistic(p) => p,
            AnyProblem::Network(p) => p,
        }
    }

    fn is_convex(&self) -> bool {
        !matches!(self.problem, AnyProblem::Network(_))
    }
}

pub fn build_problem(cfg: &ExperimentConfig) -> Result<BuiltProblem, CliError> {
    let problem = match &cfg.problem {
        ProblemSpec::SyntheticRegression {
            samples,
            features,
            noise_sigma,
            l2_reg,
        } => AnyProblem::LeastSquares(
            data::synth_regression_with_reg(*samples, *features, *noise_sigma, *l2_reg, cfg.seed)?.problem,
        ),
        ProblemSpec::LibsvmRegression { path, l2_reg } => {
            AnyProblem::LeastSquares(data::load_libsvm_regression(cfg.resolve(path), *l2_reg)?)
        }
        ProblemSpec::LibsvmLogistic { path, l2_reg } => {
            let p = data::load_libsvm(cfg.resolve(path), *l2_reg)?;
            // the optimum only feeds threshold and bound reports
            AnyProblem::Logistic(p.clone().with_optimum(1e-9, 50_000).unwrap_or(p))
        }
        ProblemSpec::TanhNetwork {
            samples,
            inputs,
            hidden,
            noise_sigma,
            ..
        } => AnyProblem::Network(SmoothNonconvexProblem::synthetic(*samples, *inputs, *hidden, *noise_sigma, cfg.seed)?),
    };
    let start = match (&problem, &cfg.problem) {
        (AnyProblem::Network(p), ProblemSpec::TanhNetwork { init_scale, .. }) => {
            p.random_point(cfg.seed.wrapping_add(1), *init_scale)
        }
        (AnyProblem::LeastSquares(p), _) => DenseVector::zeros(p.dim()),
        (AnyProblem::Logistic(p), _) => DenseVector::zeros(p.dim()),
        (AnyProblem::Network(p), _) => DenseVector::zeros(p.dim()),
    };
    Ok(BuiltProblem { problem, start })
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    built: BuiltProblem,
    stamp: Stamp,
    mode: ExecutionMode,
    out: PathBuf,
    f0: f64,
}

struct PointResult {
    point: SweepPoint,
    trace: Trace,
    diverged: Option<String>,
}

impl Ctx<'_> {
    fn fstar(&self) -> Option<f64> {
        self.built.objective().optimal_loss()
    }

    fn run_point(&self, point: &SweepPoint) -> Result<PointResult, CliError> {
        let mut rc = point.config.clone();
        rc.initial_point = Some(self.built.start.clone());
        match engine::run(self.built.objective(), &rc, self.mode) {
            Ok(trace) => Ok(PointResult {
                point: point.clone(),
                trace,
                diverged: None,
            }),
            Err(e @ sparsim_core::Error::Divergence { .. }) => {
                let msg = e.to_string();
                let trace = e.partial_trace().cloned().expect("run attaches the partial trace");
                Ok(PointResult {
                    point: point.clone(),
                    trace,
                    diverged: Some(msg),
                })
            }
            Err(e) => Err(e.into()),
        }
    }

    fn point_dir(&self, point: &SweepPoint) -> PathBuf {
        self.out.join(point.dir_name())
    }

    fn write_trace(&self, r: &PointResult) -> Result<(), CliError> {
        let dir = self.point_dir(&r.point);
        output::write_trace_jsonl(&dir.join("trace.jsonl"), &self.stamp, &r.point.label, &r.trace)?;
        output::write_trace_csv(&dir.join("trace.csv"), &self.stamp, &r.point.label, &r.trace)?;
        Ok(())
    }

    fn run_all(&self, points: &[SweepPoint], lines: &mut Vec<String>) -> Result<Vec<PointResult>, CliError> {
        let mut results = Vec::with_capacity(points.len());
        for p in points {
            let r = self.run_point(p)?;
            self.write_trace(&r)?;
            lines.push(match &r.diverged {
                Some(msg) => format!("{}: {msg}", p.label),
                None => format!(
                    "{}: final loss {:.6e} after {} steps",
                    p.label,
                    r.trace.records.last().map_or(f64::NAN, |x| x.loss_v),
                    r.trace.records.len()
                ),
            });
            results.push(r);
        }
        Ok(results)
    }

    fn write_summary(&self, results: &[PointResult]) -> Result<(), CliError> {
        let n = self.built.objective().dim();
        let fstar = self.fstar();
        let header = [
            "point",
            "label",
            "nodes",
            "k",
            "k_fraction",
            "compressor",
            "alpha",
            "steps_run",
            "final_loss_v",
            "final_loss_x",
            "final_gap_norm",
            "steps_to_threshold",
            "total_bytes_per_node",
            "diverged",
            "xi_max",
            "xi_p99",
        ];
        let rows: Vec<Vec<String>> = results
            .iter()
            .map(|r| {
                let c = &r.point.config;
                let last = r.trace.records.last();
                let hit = fstar.and_then(|fs| analysis::steps_to_threshold(&r.trace.records, self.f0, fs, self.cfg.analysis.threshold));
                let xi = XiSummary::from_records(&r.trace.records).ok();
                vec![
                    r.point.index.to_string(),
                    r.point.label.clone(),
                    c.nodes.to_string(),
                    c.k.to_string(),
                    (c.k as f64 / n as f64).to_string(),
                    c.compressor.name().to_string(),
                    c.schedule.alpha(1).to_string(),
                    r.trace.records.len().to_string(),
                    fmt_opt(last.map(|x| x.loss_v)),
                    fmt_opt(last.map(|x| x.loss_x)),
                    fmt_opt(last.map(|x| x.gap_norm)),
                    fmt_opt(hit.map(|h| h as f64)),
                    r.trace.records.iter().map(|x| x.bytes_sent_per_node).sum::<usize>().to_string(),
                    r.diverged.is_some().to_string(),
                    fmt_opt(xi.as_ref().map(|s| s.max)),
                    fmt_opt(xi.as_ref().map(|s| s.p99)),
                ]
            })
            .collect();
        let density = match &self.built.problem {
            AnyProblem::Logistic(p) => format!(" density={}", p.design().density()),
            _ => String::new(),
        };
        let comments = vec![
            format!("problem {} n={} m={}{density}", self.cfg.problem.name(), n, self.built.objective().num_samples()),
            format!(
                "f0={} fstar={} threshold={} (steps_to_threshold is nan when never reached or f* unknown)",
                self.f0,
                fmt_opt(fstar),
                self.cfg.analysis.threshold
            ),
        ];
        output::write_csv(&self.out.join("summary.csv"), &self.stamp, &comments, &header, &rows)?;
        Ok(())
    }
}

/// Outcome of the invariant checks on one trace.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct InvariantCheck {
    pub max_conservation_residual: f64,
    pub min_lemma1_slack: Option<f64>,
    pub lemma3_checked: bool,
    pub lemma3_violations: usize,
    pub pass: bool,
}

pub fn check_trace(trace: &Trace) -> InvariantCheck {
    let max_cons = trace.records.iter().map(|r| r.conservation_residual).fold(0.0, f64::max);
    let slacks: Vec<f64> = trace.records.iter().filter_map(|r| r.lemma1_slack).collect();
    let min_slack = (!slacks.is_empty()).then(|| slacks.iter().copied().fold(f64::INFINITY, f64::min));
    let c = &trace.config;
    let g = gamma(trace.dim, c.k).unwrap_or(1.0);
    let has_xi = trace.records.iter().all(|r| r.xi_lhs.is_some());
    let (lemma3_checked, lemma3_violations) = if has_xi && g > 0.0 && 2.0 * g * g < 1.0 && c.compressor == engine::Compressor::TopK {
        match analysis::lemma3_check(&trace.records, g, c.nodes) {
            Ok(pts) => (true, pts.iter().filter(|p| p.lhs > p.rhs * (1.0 + 1e-12)).count()),
            Err(_) => (false, 0),
        }
    } else {
        (false, 0)
    };
    let pass = max_cons <= CONSERVATION_TOL && min_slack.is_none_or(|s| s >= -LEMMA_SLACK_TOL) && lemma3_violations == 0;
    InvariantCheck {
        max_conservation_residual: max_cons,
        min_lemma1_slack: min_slack,
        lemma3_checked,
        lemma3_violations,
        pass,
    }
}

pub fn execute(cmd: Command, cfg: &ExperimentConfig, ov: &Overrides) -> Result<Report, CliError> {
    let built = build_problem(cfg)?;
    let n = built.objective().dim();
    let mut points = cfg.sweep_points(n)?;
    if cmd == Command::Run && points.len() != 1 {
        return Err(ConfigError {
            key: None,
            line: None,
            message: format!("`run` needs a single configuration but the axes give {} points; use `sweep`", points.len()),
        }
        .into());
    }
    match cmd {
        Command::ValidateAssumption => points.iter_mut().for_each(|p| p.config.record_xi = true),
        Command::CheckInvariants => points.iter_mut().for_each(|p| {
            p.config.record_xi = true;
            p.config.record_lemma_slack = true;
        }),
        Command::NormCurve => points.iter_mut().for_each(|p| {
            if p.config.gradient_sample_every == 0 {
                p.config.gradient_sample_every = (p.config.steps / 20).max(1);
            }
        }),
        Command::ConvergenceSweep => points = convergence_points(cfg, n)?,
        _ => {}
    }

    let f0 = built.objective().loss(&built.start)?;
    let ctx = Ctx {
        cfg,
        stamp: Stamp::new(cfg.hash(), cfg.seed),
        mode: execution_mode(cfg, ov),
        out: output_root(cfg, ov).join(cmd.dir()),
        built,
        f0,
    };
    std::fs::create_dir_all(&ctx.out)?;
    let mut lines = Vec::new();

    if cmd == Command::Bounds {
        let status = emit_bounds(&ctx, &points[0], &mut lines)?;
        return Ok(Report {
            status,
            out_dir: ctx.out,
            lines,
        });
    }

    let results = ctx.run_all(&points, &mut lines)?;
    ctx.write_summary(&results)?;
    let mut status = Status::Ok;
    if results.iter().any(|r| r.diverged.is_some()) {
        status = Status::Diverged;
    }

    let checks_enabled = cmd == Command::CheckInvariants || cfg.analysis.check_invariants;
    if checks_enabled {
        let mut rows = Vec::new();
        for r in &results {
            let c = check_trace(&r.trace);
            output::write_json(
                &ctx.point_dir(&r.point).join("checks.json"),
                &ctx.stamp,
                json!({
                    "point": r.point.label,
                    "conservation_tol": CONSERVATION_TOL,
                    "lemma1_slack_tol": LEMMA_SLACK_TOL,
                    "check": c,
                }),
            )?;
            if !c.pass {
                lines.push(format!("{}: invariant check FAILED ({c:?})", r.point.label));
                status = status.max(Status::CheckFailed);
            }
            rows.push(vec![
                r.point.index.to_string(),
                r.point.label.clone(),
                c.max_conservation_residual.to_string(),
                fmt_opt(c.min_lemma1_slack),
                c.lemma3_checked.to_string(),
                c.lemma3_violations.to_string(),
                c.pass.to_string(),
            ]);
        }
        output::write_csv(
            &ctx.out.join("invariants.csv"),
            &ctx.stamp,
            &[],
            &[
                "point",
                "label",
                "max_conservation_residual",
                "min_lemma1_slack",
                "lemma3_checked",
                "lemma3_violations",
                "pass",
            ],
            &rows,
        )?;
    }

    match cmd {
        Command::ValidateAssumption => write_xi_series(&ctx, &results, &mut lines)?,
        Command::NormCurve => {
            if !write_norm_curves(&ctx, &results, &mut lines)? {
                status = status.max(Status::CheckFailed);
            }
        }
        Command::ConvergenceSweep => write_loss_curves(&ctx, &results)?,
        _ => {}
    }
    // a divergence outranks a failed check
    if results.iter().any(|r| r.diverged.is_some()) {
        status = Status::Diverged;
    }
    Ok(Report {
        status,
        out_dir: ctx.out,
        lines,
    })
}

/// The K axis of a convergence sweep: the configured K values when more
/// than one is given, else 0.1%, 1%, 10% and 100% of `n`.
fn convergence_points(cfg: &ExperimentConfig, n: usize) -> Result<Vec<SweepPoint>, CliError> {
    let mut c = cfg.clone();
    if c.sweep_size() / c.run.nodes.values().len().max(1) <= 1 {
        c.run.k = None;
        c.run.k_fraction = Some(crate::config::OneOrMany::Many(vec![0.001, 0.01, 0.1, 1.0]));
    }
    Ok(c.sweep_points(n)?)
}

fn write_xi_series(ctx: &Ctx, results: &[PointResult], lines: &mut Vec<String>) -> Result<(), CliError> {
    for r in results {
        let mut running = f64::NEG_INFINITY;
        let rows: Vec<Vec<String>> = r
            .trace
            .records
            .iter()
            .map(|rec| {
                if let Some(x) = rec.xi {
                    running = running.max(x);
                }
                vec![
                    rec.t.to_string(),
                    fmt_opt(rec.xi),
                    fmt_opt(rec.xi_lhs),
                    fmt_opt(running.is_finite().then_some(running)),
                ]
            })
            .collect();
        let dir = ctx.point_dir(&r.point);
        output::write_csv(&dir.join("xi.csv"), &ctx.stamp, &[format!("point {}", r.point.label)], &["t", "xi", "xi_lhs", "running_max"], &rows)?;
        let summary = match XiSummary::from_records(&r.trace.records) {
            Ok(s) => {
                lines.push(format!("{}: xi max {:.4} p99 {:.4} mean {:.4}", r.point.label, s.max, s.p99, s.mean));
                json!({
                    "count": s.count,
                    "excluded": s.excluded,
                    "max": s.max,
                    "p99": s.p99,
                    "mean": s.mean,
                    "first_half_max": s.first_half_max,
                    "second_half_max": s.second_half_max,
                    "stable": s.second_half_max <= 1.5 * s.first_half_max,
                })
            }
            Err(_) => json!({ "count": 0, "excluded": r.trace.records.len() }),
        };
        output::write_json(&dir.join("xi_summary.json"), &ctx.stamp, json!({ "point": r.point.label, "xi": summary }))?;
    }
    Ok(())
}

/// Returns whether every ratio respects its gamma bound.
fn write_norm_curves(ctx: &Ctx, results: &[PointResult], lines: &mut Vec<String>) -> Result<bool, CliError> {
    let n = ctx.built.objective().dim();
    let ks: Vec<usize> = match &ctx.cfg.analysis.norm_curve_k {
        Some(k) => k.values().into_iter().filter(|&k| k >= 1 && k <= n).collect(),
        None => {
            let mut ks: Vec<usize> = [0.001, 0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 1.0]
                .iter()
                .map(|f| ((f * n as f64).round() as usize).clamp(1, n))
                .collect();
            ks.dedup();
            ks
        }
    };
    let mut ok = true;
    for r in results {
        let samples: Vec<DenseVector> = r.trace.gradient_samples.iter().map(|s| s.gradient.clone()).collect();
        let curve = match analysis::norm_gap_curve(&samples, &ks) {
            Ok(c) => c,
            Err(_) => {
                lines.push(format!("{}: no nonzero gradient samples", r.point.label));
                continue;
            }
        };
        let rows: Vec<Vec<String>> = curve
            .rows
            .iter()
            .map(|row| {
                ok &= row.max_ratio <= row.gamma + 1e-12;
                vec![
                    row.k.to_string(),
                    (row.k as f64 / n as f64).to_string(),
                    row.gamma.to_string(),
                    row.mean_ratio.to_string(),
                    row.max_ratio.to_string(),
                ]
            })
            .collect();
        output::write_csv(
            &ctx.point_dir(&r.point).join("norm_curve.csv"),
            &ctx.stamp,
            &[format!(
                "point {} samples={} skipped={}",
                r.point.label,
                samples.len() - curve.skipped,
                curve.skipped
            )],
            &["k", "k_fraction", "gamma", "mean_ratio", "max_ratio"],
            &rows,
        )?;
    }
    Ok(ok)
}

fn write_loss_curves(ctx: &Ctx, results: &[PointResult]) -> Result<(), CliError> {
    let fstar = ctx.fstar();
    for r in results {
        let rows: Vec<Vec<String>> = r
            .trace
            .records
            .iter()
            .map(|rec| {
                let rel = fstar.map(|fs| (rec.loss_v - fs) / (ctx.f0 - fs));
                vec![rec.t.to_string(), rec.loss_v.to_string(), rec.loss_x.to_string(), fmt_opt(rel)]
            })
            .collect();
        output::write_csv(
            &ctx.point_dir(&r.point).join("loss.csv"),
            &ctx.stamp,
            &[format!("point {} k={}", r.point.label, r.point.config.k)],
            &["t", "loss_v", "loss_x", "relative_suboptimality"],
            &rows,
        )?;
    }
    Ok(())
}

fn sourced(value: f64, source: &str) -> Value {
    json!({ "value": value, "source": source })
}

fn emit_bounds(ctx: &Ctx, point: &SweepPoint, lines: &mut Vec<String>) -> Result<Status, CliError> {
    let obj = ctx.built.objective();
    let (n, cfgp) = (obj.dim(), &point.config);
    let (p, k) = (cfgp.nodes, cfgp.k);
    let g = gamma(n, k)?;
    let mut caveats: Vec<String> = Vec::new();
    if ctx.cfg.sweep_size() > 1 {
        caveats.push(format!("bounds evaluated for the first sweep point only ({})", point.label));
    }

    // pilot run for xi
    let mut pilot_cfg = cfgp.clone();
    pilot_cfg.steps = cfgp.steps.min(ctx.cfg.analysis.pilot_steps);
    pilot_cfg.record_xi = true;
    pilot_cfg.gradient_sample_every = 0;
    let pilot = ctx.run_point(&SweepPoint {
        config: pilot_cfg.clone(),
        ..point.clone()
    })?;
    if let Some(msg) = &pilot.diverged {
        caveats.push(format!("pilot run diverged: {msg}"));
    }
    let xi_summary = XiSummary::from_records(&pilot.trace.records).ok();
    let xi_bar = xi_summary.as_ref().map_or(0.0, |s| s.max);
    if xi_summary.is_none() {
        caveats.push("no defined xi measurement in the pilot run; xi taken as 0".into());
    }

    // second moment over a fixed iterate set
    let x0 = ctx.built.start.clone();
    let x_star = obj.known_optimum().cloned();
    let mut probes = vec![("x0".to_string(), x0.clone())];
    if let Some(xs) = &x_star {
        probes.push(("midpoint(x0, x*)".into(), x0.add(xs)?.scale(0.5)));
        probes.push(("x*".into(), xs.clone()));
    }
    probes.push(("pilot final v".into(), pilot.trace.final_v.clone()));
    let probe_vecs: Vec<DenseVector> = probes.iter().map(|p| p.1.clone()).collect();
    let sm = estimate_second_moment(
        obj,
        &probe_vecs,
        p,
        Some(cfgp.batch_size),
        ctx.cfg.analysis.second_moment_trials,
        ctx.cfg.seed,
    )?;
    let m = sm.m_squared.sqrt();

    let (c, l, l_source) = match (&ctx.built.problem, obj.analytic_constants()) {
        (_, Ok((c, l))) => (Some(c), l, "analytic"),
        (AnyProblem::Network(net), Err(_)) => {
            let l = net.estimate_smoothness(&[x0.clone(), pilot.trace.final_v.clone()], 2.0, ctx.cfg.seed)?;
            caveats.push("L is a finite-difference Hessian estimate at x0 and the pilot iterate, times 2".into());
            (None, l, "estimated")
        }
        (_, Err(e)) => return Err(e.into()),
    };
    let fstar = obj.optimal_loss();
    let (fgap, fgap_source) = match fstar {
        Some(fs) => (ctx.f0 - fs, "f(x0) - f(x*), x* computed"),
        None => (ctx.f0, "f(x0) - 0, using f* >= 0 for a squared loss"),
    };
    let alpha = cfgp.schedule.alpha(1);
    if !matches!(cfgp.schedule, LearningRateSchedule::Constant { .. } | LearningRateSchedule::FixedNonconvex { .. }) {
        caveats.push("convex bounds assume a constant rate; alpha_1 of the schedule used".into());
    }

    let mut inputs = json!({
        "n": n,
        "nodes": p,
        "k": k,
        "gamma": g,
        "steps": cfgp.steps,
        "alpha": alpha,
        "xi": {
            "value": xi_bar,
            "source": format!("max over a {}-step pilot run", pilot_cfg.steps),
            "p99": xi_summary.as_ref().map(|s| s.p99),
            "excluded_steps": xi_summary.as_ref().map(|s| s.excluded),
        },
        "m_squared": {
            "value": sm.m_squared,
            "source": "estimated",
            "iterates": probes.iter().map(|p| p.0.clone()).collect::<Vec<_>>(),
            "argmax": probes[sm.argmax].0,
            "trials": sm.trials,
            "batch_size": cfgp.batch_size,
        },
        "l": sourced(l, l_source),
        "f0_minus_fstar": sourced(fgap, fgap_source),
    });

    // convex part
    let convex = match (c, &x_star) {
        (Some(c), Some(xs)) if ctx.built.is_convex() && c > 0.0 => {
            let dist0_sq = x0.sub(xs)?.norm2_sq();
            let (epsilon, eps_source) = match ctx.cfg.analysis.epsilon {
                Some(e) => (e, "config".to_string()),
                None => (1e-3 * dist0_sq, "1e-3 * ||x0 - x*||^2".to_string()),
            };
            inputs["c"] = sourced(c, "analytic");
            inputs["epsilon"] = json!({ "value": epsilon, "source": eps_source });
            inputs["dist0_sq"] = sourced(dist0_sq, "computed");
            let cc = analysis::compression_constants(n, k, xi_bar, p)?;
            let h = match analysis::convex_constants(n, k, xi_bar, p, alpha, c, m, epsilon) {
                Ok(v) => json!({ "status": "ok", "value": v.h }),
                Err(e) => json!({ "status": "infeasible", "reason": e.to_string() }),
            };
            let w = analysis::convex_lr_window(c, epsilon, m, cc.c_prime);
            let fail = match analysis::convex_failure_bound(alpha, c, epsilon, m, cc.c_prime, dist0_sq, cfgp.steps) {
                Ok(b) => json!({ "status": "ok", "value": b.value, "vacuous": b.vacuous, "clamped": b.clamped() }),
                Err(e) => json!({ "status": "infeasible", "reason": e.to_string() }),
            };
            json!({
                "applicable": true,
                "gamma_zero_path": g == 0.0,
                "c_const": cc.c,
                "c_prime": cc.c_prime,
                "h": h,
                "lr_window": {
                    "alpha_max": w.alpha_max,
                    "feasible": w.feasible,
                    "epsilon_min": w.epsilon_min,
                    "alpha_in_window": w.feasible && alpha <= w.alpha_max,
                },
                "failure_probability": fail,
            })
        }
        _ => json!({
            "applicable": false,
            "reason": "needs a strongly convex objective with a computed optimum",
        }),
    };

    // non-convex part
    let d = analysis::check_d(&cfgp.schedule, g, ctx.cfg.analysis.d_horizon)?;
    let nonconvex = if !d.bounded {
        json!({
            "status": "unbounded_d",
            "reason": if 2.0 * g * g >= 1.0 {
                format!("2 gamma^2 = {} >= 1", 2.0 * g * g)
            } else {
                format!("the D sequence did not settle by t = {}", d.t_max)
            },
            "d_sup_partial": d.sup_partial.is_finite().then_some(d.sup_partial),
        })
    } else {
        let consts = NonconvexConstants {
            f0_minus_fstar: fgap,
            l,
            m,
            xi: xi_bar,
            p,
            gamma: g,
            d: d.sup_partial,
        };
        let bound = analysis::nonconvex_bound(&NonconvexBoundInputs {
            constants: consts,
            schedule: cfgp.schedule,
            steps: cfgp.steps,
        });
        match bound {
            Ok(b) => {
                let fixed = analysis::fixed_lr_nonconvex(&consts, cfgp.steps).ok();
                let fixed_bound = analysis::fixed_lr_nonconvex_bound(&consts, cfgp.steps).ok();
                json!({
                    "status": "ok",
                    "d": d.sup_partial,
                    "bound": b,
                    "fixed_lr_alpha": fixed,
                    "fixed_lr_bound": fixed_bound,
                })
            }
            Err(e) => json!({ "status": "not_applicable", "reason": e.to_string(), "d": d.sup_partial }),
        }
    };

    let report = json!({
        "problem": ctx.cfg.problem.name(),
        "point": point.label,
        "inputs": inputs,
        "convex": convex,
        "nonconvex": nonconvex,
        "caveats": caveats,
    });
    output::write_json(&ctx.out.join("bounds.json"), &ctx.stamp, report.clone())?;
    let table = bounds_table(&report);
    output::write_text(&ctx.out.join("bounds.txt"), &ctx.stamp, &table)?;
    lines.extend(table.lines().map(str::to_string));
    Ok(if pilot.diverged.is_some() { Status::Diverged } else { Status::Ok })
}

fn bounds_table(report: &Value) -> String {
    let mut rows: Vec<(String, String, String)> = Vec::new();
    let show = |v: &Value| match v {
        Value::Number(x) => x.to_string(),
        Value::Bool(b) => b.to_string(),
        Value::String(s) => s.clone(),
        Value::Null => "-".into(),
        other => other.to_string(),
    };
    let inputs = &report["inputs"];
    for key in ["n", "nodes", "k", "gamma", "steps", "alpha"] {
        rows.push((key.into(), show(&inputs[key]), "config".into()));
    }
    for key in ["xi", "m_squared", "l", "c", "epsilon", "dist0_sq", "f0_minus_fstar"] {
        if !inputs[key].is_null() {
            rows.push((key.into(), show(&inputs[key]["value"]), show(&inputs[key]["source"])));
        }
    }
    let cx = &report["convex"];
    if cx["applicable"] == Value::Bool(true) {
        rows.push(("C".into(), show(&cx["c_const"]), "derived".into()));
        rows.push(("C'".into(), show(&cx["c_prime"]), "derived".into()));
        rows.push(("H".into(), show(&cx["h"]["value"]), show(&cx["h"]["status"])));
        rows.push(("lr window feasible".into(), show(&cx["lr_window"]["feasible"]), "derived".into()));
        rows.push(("alpha_max".into(), show(&cx["lr_window"]["alpha_max"]), "derived".into()));
        rows.push(("alpha in window".into(), show(&cx["lr_window"]["alpha_in_window"]), "derived".into()));
        let f = &cx["failure_probability"];
        let note = if f["vacuous"] == Value::Bool(true) { "vacuous (> 1)".to_string() } else { show(&f["status"]) };
        rows.push(("P(not in S by T)".into(), show(&f["value"]), note));
    } else {
        rows.push(("convex bounds".into(), "n/a".into(), show(&cx["reason"])));
    }
    let nc = &report["nonconvex"];
    match nc["status"].as_str() {
        Some("ok") => {
            rows.push(("D".into(), show(&nc["d"]), "derived".into()));
            rows.push(("non-convex bound".into(), show(&nc["bound"]), "derived".into()));
            rows.push(("fixed-rate alpha".into(), show(&nc["fixed_lr_alpha"]), "derived".into()));
            rows.push(("fixed-rate bound".into(), show(&nc["fixed_lr_bound"]), "derived".into()));
        }
        _ => rows.push(("non-convex bound".into(), show(&nc["status"]), show(&nc["reason"]))),
    }
    let w0 = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let w1 = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (a, b, c) in rows {
        out.push_str(&format!("{a:<w0$}  {b:<w1$}  {c}\n"));
    }
    for c in report["caveats"].as_array().into_iter().flatten() {
        out.push_str(&format!("note: {}\n", show(c)));
    }
    out
}
