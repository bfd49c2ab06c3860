//! Barrier-synchronous simulation of TopK SGD with per-node error feedback.
//!
//! Each step, every node adds its learning-rate-scaled minibatch gradient to
//! its local error, keeps the top `K` components of the sum as its message
//! and stores the rest as the new error. All messages are averaged in node
//! order and subtracted from the shared view `v`. Alongside `v` the simulator
//! tracks the auxiliary iterate `x`, which applies the untruncated averaged
//! gradients, so that `v - x` always equals the mean node error.

use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, XiMeasurement};
use crate::data::{self, PartitionMode, Shard};
use crate::error::{Error, Result};
use crate::objectives::{sample_batch, Objective};
use crate::rng::{self, Domain};
use crate::vecmath::{self, gamma, DenseVector, SparseVector};

/// Bytes per transmitted index (`u32`).
pub const INDEX_BYTES: usize = 4;
/// Bytes per transmitted value (`f64`).
pub const VALUE_BYTES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearningRateSchedule {
    Constant { alpha: f64 },
    /// `alpha0 * t^(-theta)` for `t >= 1`; step 0 uses the step-1 rate.
    PowerLaw { alpha0: f64, theta: f64 },
    /// A constant rate derived from the non-convex bound; kept distinct so
    /// traces record where the value came from.
    FixedNonconvex { alpha: f64 },
}

impl LearningRateSchedule {
    pub fn alpha(&self, t: usize) -> f64 {
        match *self {
            LearningRateSchedule::Constant { alpha } | LearningRateSchedule::FixedNonconvex { alpha } => alpha,
            LearningRateSchedule::PowerLaw { alpha0, theta } => alpha0 * (t.max(1) as f64).powf(-theta),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LearningRateSchedule::Constant { alpha } | LearningRateSchedule::FixedNonconvex { alpha } => {
                alpha > 0.0 && alpha.is_finite()
            }
            LearningRateSchedule::PowerLaw { alpha0, theta } => {
                alpha0 > 0.0 && alpha0.is_finite() && theta > 0.0 && theta.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid learning-rate schedule {self:?}")))
        }
    }

    /// `(sum_{t=1..T} alpha_t, sum_{t=1..T} alpha_t^2)`
    pub fn sums(&self, steps: usize) -> (f64, f64) {
        (1..=steps).fold((0.0, 0.0), |(s1, s2), t| {
            let a = self.alpha(t);
            (s1 + a, s2 + a * a)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Compressor {
    #[default]
    #[serde(rename = "topk")]
    TopK,
    #[serde(rename = "randomk")]
    RandomK,
    Identity,
}

impl Compressor {
    pub fn name(&self) -> &'static str {
        match self {
            Compressor::TopK => "topk",
            Compressor::RandomK => "randomk",
            Compressor::Identity => "identity",
        }
    }
}

/// Where a node draws its minibatch from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// From the node's own shard.
    #[default]
    Shard,
    /// Uniformly from the whole dataset.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub nodes: usize,
    pub k: usize,
    pub steps: usize,
    pub schedule: LearningRateSchedule,
    pub batch_size: usize,
    pub seed: u64,
    pub compressor: Compressor,
    pub record_xi: bool,
    pub record_lemma_slack: bool,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub partition: PartitionMode,
    /// Starting point for both `v` and `x`; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_point: Option<DenseVector>,
    /// Keep the averaged stochastic gradient every this many steps
    /// (0 disables).
    #[serde(default)]
    pub gradient_sample_every: usize,
}

impl RunConfig {
    pub fn new(nodes: usize, k: usize, steps: usize, schedule: LearningRateSchedule) -> Self {
        RunConfig {
            nodes,
            k,
            steps,
            schedule,
            batch_size: 1,
            seed: 42,
            compressor: Compressor::TopK,
            record_xi: false,
            record_lemma_slack: false,
            sampling: Sampling::Shard,
            partition: PartitionMode::Contiguous,
            initial_point: None,
            gradient_sample_every: 0,
        }
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        if self.nodes == 0 {
            return Err(Error::invalid("P must be >= 1"));
        }
        if self.k == 0 || self.k > n {
            return Err(Error::invalid(format!("K must satisfy 1 <= K <= n (K = {}, n = {n})", self.k)));
        }
        if self.steps == 0 {
            return Err(Error::invalid("T must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if self.sampling == Sampling::Shard && self.nodes > m {
            return Err(Error::invalid(format!("P = {} exceeds the {m} samples", self.nodes)));
        }
        if let Some(x0) = &self.initial_point {
            Error::check_dim(n, x0.len())?;
        }
        self.schedule.validate()
    }

    /// Wire bytes one node sends per step.
    pub fn bytes_per_node(&self, n: usize) -> usize {
        match self.compressor {
            Compressor::Identity => n * VALUE_BYTES,
            Compressor::TopK | Compressor::RandomK => self.k * (INDEX_BYTES + VALUE_BYTES),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecutionMode {
    #[default]
    Sequential,
    Parallel { threads: usize },
}

/// The per-node random stream family. Draws for step `t` depend only on
/// `(seed, node_id, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeStream {
    pub seed: u64,
    pub node_id: usize,
}

impl NodeStream {
    pub fn at(&self, domain: Domain, t: usize) -> ChaCha8Rng {
        rng::stream(self.seed, domain, self.node_id as u64, t as u64)
    }
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub node_id: usize,
    pub error: DenseVector,
    pub shard: Shard,
    pub stream: NodeStream,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub v: DenseVector,
    pub x_aux: DenseVector,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub loss_v: f64,
    pub loss_x: f64,
    /// `||v_t - x_t||`
    pub gap_norm: f64,
    /// `||grad f(v_t)||^2`
    pub grad_norm_sq_v: f64,
    /// `||x_t - x_{t-1}||`, the norm of the applied untruncated update.
    pub x_step_norm: f64,
    /// `None` when not recorded or when the averaged gradient is zero.
    pub xi: Option<f64>,
    pub xi_lhs: Option<f64>,
    pub lemma1_slack: Option<f64>,
    /// `||v_t - x_t - mean_p error_p||_inf`
    pub conservation_residual: f64,
    pub bytes_sent_per_node: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSample {
    pub t: usize,
    pub gradient: DenseVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub config: RunConfig,
    pub dim: usize,
    pub records: Vec<StepRecord>,
    pub final_v: DenseVector,
    pub final_x: DenseVector,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gradient_samples: Vec<GradientSample>,
}

/// What one node produces in a step.
#[derive(Debug, Clone)]
pub struct NodeOutput {
    pub gradient: DenseVector,
    pub acc: DenseVector,
    pub payload: SparseVector,
}

/// Everything observable about one step, beyond the record.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub record: StepRecord,
    pub alpha: f64,
    /// The averaged update applied to `v`.
    pub update: DenseVector,
    pub avg_gradient: DenseVector,
    pub xi: Option<XiMeasurement>,
}

/// Split `acc` into the transmitted payload and the retained error.
pub fn compress(acc: &DenseVector, k: usize, kind: Compressor, rng: &mut ChaCha8Rng) -> Result<(SparseVector, DenseVector)> {
    let n = acc.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("K must satisfy 1 <= K <= n (K = {k}, n = {n})")));
    }
    match kind {
        Compressor::TopK => vecmath::split_top_k(acc, k),
        Compressor::Identity => Ok((acc.sparsify(), DenseVector::zeros(n))),
        Compressor::RandomK => {
            let mut chosen = index::sample(rng, n, k).into_vec();
            chosen.sort_unstable();
            let mut rest = acc.as_slice().to_vec();
            let mut entries = Vec::with_capacity(k);
            for i in chosen {
                if rest[i] != 0.0 {
                    entries.push((i, rest[i]));
                }
                rest[i] = 0.0;
            }
            Ok((SparseVector::new(n, entries)?, DenseVector::from_raw(rest)))
        }
    }
}

pub struct Simulator<'a> {
    problem: &'a dyn Objective,
    config: RunConfig,
    world: WorldState,
    nodes: Vec<NodeState>,
    gamma: f64,
    all_samples: Vec<usize>,
    pool: Option<rayon::ThreadPool>,
}

impl<'a> Simulator<'a> {
    pub fn new(problem: &'a dyn Objective, config: RunConfig, mode: ExecutionMode) -> Result<Self> {
        let (n, m) = (problem.dim(), problem.num_samples());
        config.validate(n, m)?;
        let shards = match config.sampling {
            Sampling::Shard => data::partition(m, config.nodes, config.seed, config.partition)?,
            Sampling::Global => (0..config.nodes)
                .map(|node_id| Shard {
                    node_id,
                    sample_indices: Vec::new(),
                })
                .collect(),
        };
        let nodes = shards
            .into_iter()
            .map(|shard| NodeState {
                node_id: shard.node_id,
                error: DenseVector::zeros(n),
                stream: NodeStream {
                    seed: config.seed,
                    node_id: shard.node_id,
                },
                shard,
            })
            .collect();
        let start = config.initial_point.clone().unwrap_or_else(|| DenseVector::zeros(n));
        let pool = match mode {
            ExecutionMode::Sequential => None,
            ExecutionMode::Parallel { threads } => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads.max(1))
                    .build()
                    .map_err(|e| Error::invalid(format!("thread pool: {e}")))?,
            ),
        };
        Ok(Simulator {
            problem,
            gamma: gamma(n, config.k)?,
            all_samples: if config.sampling == Sampling::Global { (0..m).collect() } else { Vec::new() },
            config,
            world: WorldState {
                v: start.clone(),
                x_aux: start,
                step: 0,
            },
            nodes,
            pool,
        })
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Mean node error `(1/P) sum_p error_p`.
    pub fn mean_error(&self) -> DenseVector {
        let errs: Vec<DenseVector> = self.nodes.iter().map(|n| n.error.clone()).collect();
        vecmath::mean_fixed_order(&errs).expect("at least one node")
    }

    /// One step with gradients drawn from each node's oracle.
    pub fn step(&mut self) -> Result<StepOutcome> {
        self.advance(None)
    }

    /// One step with caller-supplied per-node gradients.
    pub fn step_with_gradients(&mut self, gradients: &[DenseVector]) -> Result<StepOutcome> {
        if gradients.len() != self.nodes.len() {
            return Err(Error::invalid(format!(
                "expected {} gradients, got {}",
                self.nodes.len(),
                gradients.len()
            )));
        }
        for g in gradients {
            Error::check_dim(self.problem.dim(), g.len())?;
        }
        self.advance(Some(gradients))
    }

    fn node_phase(&self, node: &mut NodeState, t: usize, alpha: f64, given: Option<&DenseVector>) -> Result<NodeOutput> {
        let gradient = match given {
            Some(g) => g.clone(),
            None => {
                let mut rng = node.stream.at(Domain::Batch, t);
                let pool = match self.config.sampling {
                    Sampling::Shard => &node.shard.sample_indices,
                    Sampling::Global => &self.all_samples,
                };
                let batch = sample_batch(pool, self.config.batch_size, &mut rng);
                self.problem.grad_minibatch(&self.world.v, &batch)?
            }
        };
        if !gradient.is_finite() {
            return Err(self.diverged(t, Some(node.node_id), "non-finite gradient"));
        }
        let acc = node.error.axpy(alpha, &gradient)?;
        let mut rng = node.stream.at(Domain::Compress, t);
        let (payload, error) = compress(&acc, self.config.k, self.config.compressor, &mut rng)?;
        if !error.is_finite() {
            return Err(self.diverged(t, Some(node.node_id), "non-finite error accumulator"));
        }
        node.error = error;
        Ok(NodeOutput { gradient, acc, payload })
    }

    fn diverged(&self, step: usize, node: Option<usize>, what: &str) -> Error {
        Error::Divergence {
            step,
            node,
            what: what.to_string(),
            partial: None,
        }
    }

    fn advance(&mut self, given: Option<&[DenseVector]>) -> Result<StepOutcome> {
        let t = self.world.step + 1;
        let alpha = self.config.schedule.alpha(t);

        let mut nodes = std::mem::take(&mut self.nodes);
        let this = &*self;
        let outputs: Result<Vec<NodeOutput>> = match &this.pool {
            None => nodes
                .iter_mut()
                .enumerate()
                .map(|(p, node)| this.node_phase(node, t, alpha, given.map(|g| &g[p])))
                .collect(),
            Some(pool) => pool.install(|| {
                nodes
                    .par_iter_mut()
                    .enumerate()
                    .map(|(p, node)| this.node_phase(node, t, alpha, given.map(|g| &g[p])))
                    .collect()
            }),
        };
        self.nodes = nodes;
        let outputs = outputs?;

        // barrier: aggregate strictly in node order
        let p = outputs.len();
        let payloads: Vec<SparseVector> = outputs.iter().map(|o| o.payload.clone()).collect();
        let update = vecmath::aggregate_fixed_order(&payloads, p)?;
        let grads: Vec<DenseVector> = outputs.iter().map(|o| o.gradient.clone()).collect();
        let avg_gradient = vecmath::mean_fixed_order(&grads)?;

        let v_prev = &self.world.v;
        let x_prev = &self.world.x_aux;
        let v = v_prev.sub(&update)?;
        let x = x_prev.axpy(-alpha, &avg_gradient)?;
        if !v.is_finite() || !x.is_finite() {
            return Err(self.diverged(t, None, "non-finite model"));
        }

        let gap_prev = v_prev.sub(x_prev)?.norm2();
        let x_step_norm = x.sub(x_prev)?.norm2();

        let xi = if self.config.record_xi || self.config.record_lemma_slack {
            let accs: Vec<DenseVector> = outputs.iter().map(|o| o.acc.clone()).collect();
            Some(analysis::measure_xi(&accs, &avg_gradient.scale(alpha), self.config.k, p)?)
        } else {
            None
        };

        let gap = v.sub(&x)?;
        let gap_norm = gap.norm2();
        let lemma1_slack = match (&xi, self.config.record_lemma_slack) {
            (Some(m), true) if m.is_defined() => Some(analysis::lemma1_slack(
                gap_prev,
                gap_norm,
                x_step_norm,
                m.xi,
                self.gamma,
                p,
            )),
            (Some(_), true) => Some(self.gamma * gap_prev - gap_norm),
            _ => None,
        };

        let conservation_residual = gap.sub(&self.mean_error())?.norm_inf();
        let loss_v = self.problem.trace_loss(&v)?;
        let loss_x = self.problem.trace_loss(&x)?;
        let grad_norm_sq_v = self.problem.full_gradient(&v)?.norm2_sq();
        if !(loss_v.is_finite() && loss_x.is_finite() && grad_norm_sq_v.is_finite()) {
            return Err(self.diverged(t, None, "non-finite loss"));
        }

        let record = StepRecord {
            t,
            loss_v,
            loss_x,
            gap_norm,
            grad_norm_sq_v,
            x_step_norm,
            xi: xi.as_ref().filter(|m| m.is_defined()).map(|m| m.xi),
            xi_lhs: xi.as_ref().map(|m| m.lhs_norm),
            lemma1_slack,
            conservation_residual,
            bytes_sent_per_node: self.config.bytes_per_node(self.problem.dim()),
        };
        self.world = WorldState { v, x_aux: x, step: t };
        Ok(StepOutcome {
            record,
            alpha,
            update,
            avg_gradient,
            xi,
        })
    }
}

/// Run `config.steps` steps from `v_0 = x_0` (zero unless overridden).
/// Traces are bit-identical for a given config regardless of `mode`.
pub fn run(problem: &dyn Objective, config: &RunConfig, mode: ExecutionMode) -> Result<Trace> {
    let mut sim = Simulator::new(problem, config.clone(), mode)?;
    let mut records = Vec::with_capacity(config.steps);
    let mut gradient_samples = Vec::new();
    for _ in 0..config.steps {
        match sim.step() {
            Ok(out) => {
                let t = out.record.t;
                if config.gradient_sample_every > 0 && t % config.gradient_sample_every == 0 {
                    gradient_samples.push(GradientSample {
                        t,
                        gradient: out.avg_gradient,
                    });
                }
                records.push(out.record);
            }
            Err(Error::Divergence { step, node, what, .. }) => {
                let partial = Trace {
                    config: config.clone(),
                    dim: problem.dim(),
                    records,
                    final_v: sim.world.v.clone(),
                    final_x: sim.world.x_aux.clone(),
                    gradient_samples,
                };
                return Err(Error::Divergence {
                    step,
                    node,
                    what,
                    partial: Some(Box::new(partial)),
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Trace {
        config: config.clone(),
        dim: problem.dim(),
        records,
        final_v: sim.world.v.clone(),
        final_x: sim.world.x_aux.clone(),
        gradient_samples,
    })
}
