//! Objective functions with unbiased minibatch gradient oracles.
//!
//! Every empirical loss is a mean over samples, so a minibatch gradient is the
//! mean of per-sample gradients over the batch and averaging over batches drawn
//! uniformly recovers the full gradient.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};
use crate::vecmath::DenseVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    LeastSquares,
    Logistic,
    SmoothNonconvex,
}

/// An empirical loss `f(x) = (1/m) sum_i f_i(x)` with a minibatch gradient
/// oracle.
pub trait Objective: Send + Sync {
    fn kind(&self) -> ProblemKind;

    fn dim(&self) -> usize;

    fn num_samples(&self) -> usize;

    fn loss(&self, x: &DenseVector) -> Result<f64>;

    /// Loss evaluation used for per-step traces. Implementations may use an
    /// algebraically equivalent but cheaper form.
    fn trace_loss(&self, x: &DenseVector) -> Result<f64> {
        self.loss(x)
    }

    fn full_gradient(&self, x: &DenseVector) -> Result<DenseVector>;

    /// Mean gradient over `batch`. Deterministic given `(x, batch)`.
    fn grad_minibatch(&self, x: &DenseVector, batch: &[usize]) -> Result<DenseVector>;

    /// Strong convexity and smoothness constants `(c, L)`.
    fn analytic_constants(&self) -> Result<(f64, f64)> {
        Err(Error::NotAvailable(format!(
            "{:?} has no analytic constants",
            self.kind()
        )))
    }

    fn known_optimum(&self) -> Option<&DenseVector> {
        None
    }

    fn optimal_loss(&self) -> Option<f64> {
        None
    }
}

fn check_batch(batch: &[usize], m: usize) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::invalid("empty minibatch"));
    }
    if let Some(&i) = batch.iter().find(|&&i| i >= m) {
        return Err(Error::invalid(format!(
            "sample index {i} out of range for {m} samples"
        )));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draw `size` distinct indices from `pool` (all of `pool` when it is not
/// larger than `size`).
pub fn sample_batch<R: Rng + ?Sized>(pool: &[usize], size: usize, rng: &mut R) -> Vec<usize> {
    if size >= pool.len() {
        return pool.to_vec();
    }
    index::sample(rng, pool.len(), size)
        .into_iter()
        .map(|j| pool[j])
        .collect()
}

// ---------------------------------------------------------------------------
// least squares

/// `f(x) = (1/2m) ||Ax - b||^2 + (lambda/2) ||x||^2` over a dense design.
#[derive(Debug, Clone)]
pub struct LeastSquaresProblem {
    m: usize,
    n: usize,
    /// Row-major `m x n`.
    design: Vec<f64>,
    targets: Vec<f64>,
    l2_reg: f64,
    /// `A^T A / m + lambda I`
    hessian: DMatrix<f64>,
    /// `A^T b / m`
    linear: DVector<f64>,
    /// `||b||^2 / (2m)`
    offset: f64,
    strong_convexity: f64,
    smoothness: f64,
    known_optimum: Option<DenseVector>,
    optimal_loss: Option<f64>,
}

impl LeastSquaresProblem {
    /// Build from a row-major design. Computes the Hessian, its eigenvalue
    /// extremes and, when the Hessian is positive definite, the exact
    /// minimizer by a Cholesky solve.
    pub fn new(m: usize, n: usize, design: Vec<f64>, targets: Vec<f64>, l2_reg: f64) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::invalid("least squares needs m >= 1 and n >= 1"));
        }
        Error::check_dim(m * n, design.len())?;
        Error::check_dim(m, targets.len())?;
        if !(l2_reg >= 0.0 && l2_reg.is_finite()) {
            return Err(Error::invalid(format!("l2_reg must be >= 0, got {l2_reg}")));
        }
        if design.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::invalid("design and targets must be finite"));
        }

        let a = DMatrix::from_row_slice(m, n, &design);
        let b = DVector::from_column_slice(&targets);
        let scale = 1.0 / m as f64;
        let gram = a.tr_mul(&a) * scale;
        let linear = a.tr_mul(&b) * scale;
        drop(a);

        let eig = gram.clone().symmetric_eigenvalues();
        let eig_min = eig.iter().copied().fold(f64::INFINITY, f64::min).max(0.0);
        let eig_max = eig.iter().copied().fold(0.0, f64::max);

        let mut hessian = gram;
        for i in 0..n {
            hessian[(i, i)] += l2_reg;
        }
        let offset = 0.5 * scale * targets.iter().map(|v| v * v).sum::<f64>();

        let mut problem = LeastSquaresProblem {
            m,
            n,
            design,
            targets,
            l2_reg,
            hessian,
            linear,
            offset,
            strong_convexity: l2_reg + eig_min,
            smoothness: l2_reg + eig_max,
            known_optimum: None,
            optimal_loss: None,
        };
        problem.solve_optimum();
        Ok(problem)
    }

    fn solve_optimum(&mut self) {
        if self.strong_convexity <= 0.0 {
            return;
        }
        let Some(chol) = self.hessian.clone().cholesky() else {
            return;
        };
        let mut x = chol.solve(&self.linear);
        // one round of iterative refinement
        let r = &self.linear - &self.hessian * &x;
        x += chol.solve(&r);
        let x = DenseVector::from_raw(x.as_slice().to_vec());
        if x.is_finite() {
            self.optimal_loss = self.loss(&x).ok();
            self.known_optimum = Some(x);
        }
    }

    pub fn design_row(&self, i: usize) -> &[f64] {
        &self.design[i * self.n..(i + 1) * self.n]
    }

    pub fn design(&self) -> &[f64] {
        &self.design
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn l2_reg(&self) -> f64 {
        self.l2_reg
    }

    fn hessian_times(&self, x: &DenseVector) -> DVector<f64> {
        &self.hessian * DVector::from_column_slice(x.as_slice())
    }
}

impl Objective for LeastSquaresProblem {
    fn kind(&self) -> ProblemKind {
        ProblemKind::LeastSquares
    }

    fn dim(&self) -> usize {
        self.n
    }

    fn num_samples(&self) -> usize {
        self.m
    }

    fn loss(&self, x: &DenseVector) -> Result<f64> {
        Error::check_dim(self.n, x.len())?;
        let xs = x.as_slice();
        let sq: f64 = (0..self.m)
            .map(|i| {
                let r = dot(self.design_row(i), xs) - self.targets[i];
                r * r
            })
            .sum();
        Ok(sq / (2.0 * self.m as f64) + 0.5 * self.l2_reg * x.norm2_sq())
    }

    /// Quadratic form `x^T Q x / 2 - q^T x + ||b||^2 / 2m`, `O(n^2)` instead
    /// of `O(mn)`.
    fn trace_loss(&self, x: &DenseVector) -> Result<f64> {
        Error::check_dim(self.n, x.len())?;
        let qx = self.hessian_times(x);
        let xs = x.as_slice();
        Ok(0.5 * dot(xs, qx.as_slice()) - dot(xs, self.linear.as_slice()) + self.offset)
    }

    fn full_gradient(&self, x: &DenseVector) -> Result<DenseVector> {
        Error::check_dim(self.n, x.len())?;
        let g = self.hessian_times(x) - &self.linear;
        Ok(DenseVector::from_raw(g.as_slice().to_vec()))
    }

    fn grad_minibatch(&self, x: &DenseVector, batch: &[usize]) -> Result<DenseVector> {
        Error::check_dim(self.n, x.len())?;
        check_batch(batch, self.m)?;
        let xs = x.as_slice();
        let mut g = vec![0.0; self.n];
        for &i in batch {
            let row = self.design_row(i);
            let r = dot(row, xs) - self.targets[i];
            for (gj, aj) in g.iter_mut().zip(row) {
                *gj += r * aj;
            }
        }
        let inv = 1.0 / batch.len() as f64;
        for (gj, xj) in g.iter_mut().zip(xs) {
            *gj = *gj * inv + self.l2_reg * xj;
        }
        Ok(DenseVector::from_raw(g))
    }

    fn analytic_constants(&self) -> Result<(f64, f64)> {
        Ok((self.strong_convexity, self.smoothness))
    }

    fn known_optimum(&self) -> Option<&DenseVector> {
        self.known_optimum.as_ref()
    }

    fn optimal_loss(&self) -> Option<f64> {
        self.optimal_loss
    }
}

// ---------------------------------------------------------------------------
// sparse design + logistic regression

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from per-row `(column, value)` lists. Columns within a row must
    /// be strictly increasing and below `cols`.
    pub fn from_rows(cols: usize, rows: &[Vec<(usize, f64)>]) -> Result<Self> {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for (r, row) in rows.iter().enumerate() {
            let mut prev = None;
            for &(c, v) in row {
                if c >= cols || prev.is_some_and(|p| c <= p) || !v.is_finite() {
                    return Err(Error::invalid(format!(
                        "row {r}: bad entry ({c}, {v}) for {cols} columns"
                    )));
                }
                prev = Some(c);
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Ok(CsrMatrix {
            rows: rows.len(),
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn row_entries(&self, i: usize) -> Vec<(usize, f64)> {
        self.row(i).collect()
    }

    /// Fraction of stored entries over `rows * cols`.
    pub fn density(&self) -> f64 {
        if self.rows == 0 || self.cols == 0 {
            return 0.0;
        }
        self.nnz() as f64 / (self.rows as f64 * self.cols as f64)
    }

    fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        self.row(i).map(|(c, v)| v * x[c]).sum()
    }

    /// Largest eigenvalue of `A^T A`.
    fn gram_spectral_norm(&self) -> f64 {
        if self.cols <= 1024 {
            let mut gram = DMatrix::<f64>::zeros(self.cols, self.cols);
            for r in 0..self.rows {
                let entries: Vec<_> = self.row(r).collect();
                for &(i, vi) in &entries {
                    for &(j, vj) in &entries {
                        gram[(i, j)] += vi * vj;
                    }
                }
            }
            return gram
                .symmetric_eigenvalues()
                .iter()
                .copied()
                .fold(0.0, f64::max);
        }
        // power iteration on A^T A for wide designs
        let mut rng = rng::stream(0, Domain::Probe, self.rows as u64, self.cols as u64);
        let mut v: Vec<f64> = (0..self.cols).map(|_| rng.sample(StandardNormal)).collect();
        let mut estimate = 0.0;
        for _ in 0..1000 {
            let nv = crate::vecmath::norm2(&v);
            v.iter_mut().for_each(|x| *x /= nv);
            let av: Vec<f64> = (0..self.rows).map(|r| self.row_dot(r, &v)).collect();
            let mut w = vec![0.0; self.cols];
            for (r, avr) in av.iter().enumerate() {
                for (c, val) in self.row(r) {
                    w[c] += val * avr;
                }
            }
            let next = dot(&w, &v);
            let done = (next - estimate).abs() <= 1e-12 * next;
            estimate = next;
            v = w;
            if done {
                break;
            }
        }
        estimate
    }
}

/// Numerically stable `ln(1 + e^u)`.
fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// L2-regularized logistic regression over a sparse design with labels in
/// `{-1, +1}`.
#[derive(Debug, Clone)]
pub struct LogisticProblem {
    design: CsrMatrix,
    labels: Vec<f64>,
    l2_reg: f64,
    smoothness: f64,
    known_optimum: Option<DenseVector>,
    optimal_loss: Option<f64>,
}

impl LogisticProblem {
    pub fn new(design: CsrMatrix, labels: Vec<f64>, l2_reg: f64) -> Result<Self> {
        Error::check_dim(design.rows(), labels.len())?;
        if design.rows() == 0 {
            return Err(Error::invalid("logistic problem needs at least one sample"));
        }
        if !(l2_reg > 0.0 && l2_reg.is_finite()) {
            return Err(Error::invalid(format!(
                "logistic l2_reg must be > 0 for strong convexity, got {l2_reg}"
            )));
        }
        if let Some(i) = labels.iter().position(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::invalid(format!(
                "label {} at sample {i} is not in {{-1, +1}}",
                labels[i]
            )));
        }
        if let Some(r) = (0..design.rows()).find(|&r| design.row(r).all(|(_, v)| v == 0.0)) {
            return Err(Error::invalid(format!("sample {r} has no nonzero feature")));
        }
        let smoothness = l2_reg + design.gram_spectral_norm() / (4.0 * design.rows() as f64);
        Ok(LogisticProblem {
            design,
            labels,
            l2_reg,
            smoothness,
            known_optimum: None,
            optimal_loss: None,
        })
    }

    /// Run deterministic full gradient descent with step `1/L` from zero
    /// until the gradient norm is at most `tol`, and remember the result as
    /// the optimum.
    pub fn with_optimum(mut self, tol: f64, max_iter: usize) -> Result<Self> {
        let step = 1.0 / self.smoothness;
        let mut x = DenseVector::zeros(self.dim());
        for _ in 0..max_iter {
            let g = self.full_gradient(&x)?;
            if g.norm2() <= tol {
                self.optimal_loss = Some(self.loss(&x)?);
                self.known_optimum = Some(x);
                return Ok(self);
            }
            x = x.axpy(-step, &g)?;
        }
        Err(Error::NotAvailable(format!(
            "gradient descent did not reach gradient norm {tol} in {max_iter} iterations"
        )))
    }

    pub fn design(&self) -> &CsrMatrix {
        &self.design
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn l2_reg(&self) -> f64 {
        self.l2_reg
    }

    fn accumulate_grad(&self, xs: &[f64], samples: impl Iterator<Item = usize>, g: &mut [f64]) -> usize {
        let mut count = 0;
        for i in samples {
            let y = self.labels[i];
            let z = self.design.row_dot(i, xs);
            let w = -y * sigmoid(-y * z);
            for (c, v) in self.design.row(i) {
                g[c] += w * v;
            }
            count += 1;
        }
        count
    }
}

impl Objective for LogisticProblem {
    fn kind(&self) -> ProblemKind {
        ProblemKind::Logistic
    }

    fn dim(&self) -> usize {
        self.design.cols()
    }

    fn num_samples(&self) -> usize {
        self.design.rows()
    }

    fn loss(&self, x: &DenseVector) -> Result<f64> {
        Error::check_dim(self.dim(), x.len())?;
        let xs = x.as_slice();
        let total: f64 = (0..self.num_samples())
            .map(|i| softplus(-self.labels[i] * self.design.row_dot(i, xs)))
            .sum();
        Ok(total / self.num_samples() as f64 + 0.5 * self.l2_reg * x.norm2_sq())
    }

    fn full_gradient(&self, x: &DenseVector) -> Result<DenseVector> {
        Error::check_dim(self.dim(), x.len())?;
        let mut g = vec![0.0; self.dim()];
        let count = self.accumulate_grad(x.as_slice(), 0..self.num_samples(), &mut g);
        finish_mean(&mut g, count, self.l2_reg, x.as_slice());
        Ok(DenseVector::from_raw(g))
    }

    fn grad_minibatch(&self, x: &DenseVector, batch: &[usize]) -> Result<DenseVector> {
        Error::check_dim(self.dim(), x.len())?;
        check_batch(batch, self.num_samples())?;
        let mut g = vec![0.0; self.dim()];
        let count = self.accumulate_grad(x.as_slice(), batch.iter().copied(), &mut g);
        finish_mean(&mut g, count, self.l2_reg, x.as_slice());
        Ok(DenseVector::from_raw(g))
    }

    fn analytic_constants(&self) -> Result<(f64, f64)> {
        Ok((self.l2_reg, self.smoothness))
    }

    fn known_optimum(&self) -> Option<&DenseVector> {
        self.known_optimum.as_ref()
    }

    fn optimal_loss(&self) -> Option<f64> {
        self.optimal_loss
    }
}

fn finish_mean(g: &mut [f64], count: usize, l2_reg: f64, x: &[f64]) {
    let inv = 1.0 / count as f64;
    for (gj, xj) in g.iter_mut().zip(x) {
        *gj = *gj * inv + l2_reg * xj;
    }
}

// ---------------------------------------------------------------------------
// one-hidden-layer tanh regression network

/// Squared-error regression with a `n_in -> hidden -> 1` tanh network.
///
/// Parameter layout: `W1` (hidden x n_in, row-major), `b1` (hidden),
/// `w2` (hidden), `b2` (1). The defaults `n_in = 16`, `hidden = 8` give
/// 145 parameters.
#[derive(Debug, Clone)]
pub struct SmoothNonconvexProblem {
    n_in: usize,
    hidden: usize,
    /// Row-major `m x n_in`.
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

impl SmoothNonconvexProblem {
    pub const DEFAULT_INPUTS: usize = 16;
    pub const DEFAULT_HIDDEN: usize = 8;

    pub fn new(n_in: usize, hidden: usize, inputs: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if n_in == 0 || hidden == 0 || targets.is_empty() {
            return Err(Error::invalid("network needs n_in, hidden and m all >= 1"));
        }
        Error::check_dim(targets.len() * n_in, inputs.len())?;
        if inputs.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::invalid("inputs and targets must be finite"));
        }
        Ok(SmoothNonconvexProblem {
            n_in,
            hidden,
            inputs,
            targets,
        })
    }

    /// Standard normal inputs, targets from a random teacher network of the
    /// same shape plus Gaussian noise.
    pub fn synthetic(m: usize, n_in: usize, hidden: usize, noise_sigma: f64, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("m must be >= 1"));
        }
        if noise_sigma.is_nan() || noise_sigma < 0.0 {
            return Err(Error::invalid("noise_sigma must be >= 0"));
        }
        let mut rng = rng::stream(seed, Domain::Design, 0, 0);
        let inputs: Vec<f64> = (0..m * n_in).map(|_| rng.sample(StandardNormal)).collect();
        let shell = SmoothNonconvexProblem::new(n_in, hidden, inputs, vec![0.0; m])?;
        let teacher = shell.random_point(seed, 1.0);
        let mut noise = rng::stream(seed, Domain::Noise, 0, 0);
        let targets = (0..m)
            .map(|i| {
                let (y, _) = shell.forward(teacher.as_slice(), i);
                y + noise_sigma * noise.sample::<f64, _>(StandardNormal)
            })
            .collect();
        Ok(SmoothNonconvexProblem {
            targets,
            ..shell
        })
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Gaussian parameters with fan-in scaling `scale / sqrt(fan_in)`.
    /// Zero is a saddle of this network (no gradient reaches `W1` or `w2`),
    /// so runs start from a point like this one.
    pub fn random_point(&self, seed: u64, scale: f64) -> DenseVector {
        let mut rng = rng::stream(seed, Domain::NetworkInit, self.n_in as u64, self.hidden as u64);
        let s1 = scale / (self.n_in as f64).sqrt();
        let s2 = scale / (self.hidden as f64).sqrt();
        let h = self.hidden;
        let mut p = Vec::with_capacity(self.dim());
        for _ in 0..h * self.n_in {
            p.push(s1 * rng.sample::<f64, _>(StandardNormal));
        }
        p.extend(std::iter::repeat_n(0.0, h));
        for _ in 0..h {
            p.push(s2 * rng.sample::<f64, _>(StandardNormal));
        }
        p.push(0.0);
        DenseVector::from_raw(p)
    }

    fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.n_in..(i + 1) * self.n_in]
    }

    /// Prediction and hidden activations for sample `i`.
    fn forward(&self, params: &[f64], i: usize) -> (f64, Vec<f64>) {
        let (h, ni) = (self.hidden, self.n_in);
        let w1 = &params[..h * ni];
        let b1 = &params[h * ni..h * ni + h];
        let w2 = &params[h * ni + h..h * ni + 2 * h];
        let b2 = params[h * ni + 2 * h];
        let x = self.input(i);
        let act: Vec<f64> = (0..h)
            .map(|j| (dot(&w1[j * ni..(j + 1) * ni], x) + b1[j]).tanh())
            .collect();
        (dot(w2, &act) + b2, act)
    }

    fn accumulate_grad(&self, params: &[f64], i: usize, g: &mut [f64]) {
        let (h, ni) = (self.hidden, self.n_in);
        let (pred, act) = self.forward(params, i);
        let r = pred - self.targets[i];
        let w2 = &params[h * ni + h..h * ni + 2 * h];
        let x = self.input(i);
        for j in 0..h {
            let dz = r * w2[j] * (1.0 - act[j] * act[j]);
            for (gk, xk) in g[j * ni..(j + 1) * ni].iter_mut().zip(x) {
                *gk += dz * xk;
            }
            g[h * ni + j] += dz;
            g[h * ni + h + j] += r * act[j];
        }
        g[h * ni + 2 * h] += r;
    }

    /// Spectral norm estimate of the Hessian at `x`, by power iteration on
    /// central-difference Hessian-vector products.
    fn hessian_norm_at(&self, x: &DenseVector, seed: u64, tag: u64) -> Result<f64> {
        let mut rng = rng::stream(seed, Domain::Probe, tag, 0);
        let n = self.dim();
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let h = 1e-5;
        let mut est = 0.0;
        for _ in 0..60 {
            let nv = crate::vecmath::norm2(&v);
            let u = DenseVector::from_raw(v.iter().map(|a| a / nv).collect());
            let gp = self.full_gradient(&x.axpy(h, &u)?)?;
            let gm = self.full_gradient(&x.axpy(-h, &u)?)?;
            let hv = gp.sub(&gm)?.scale(0.5 / h);
            est = hv.norm2();
            v = hv.into_vec();
            if est == 0.0 {
                break;
            }
        }
        Ok(est)
    }

    /// Numerical smoothness constant over a region: the largest Hessian
    /// spectral norm found at `points`, multiplied by `safety`. The network
    /// is not globally smooth, so the value is only meaningful near the
    /// probed points.
    pub fn estimate_smoothness(&self, points: &[DenseVector], safety: f64, seed: u64) -> Result<f64> {
        let mut best: f64 = 0.0;
        for (i, p) in points.iter().enumerate() {
            Error::check_dim(self.dim(), p.len())?;
            best = best.max(self.hessian_norm_at(p, seed, i as u64)?);
        }
        Ok(best * safety)
    }
}

impl Objective for SmoothNonconvexProblem {
    fn kind(&self) -> ProblemKind {
        ProblemKind::SmoothNonconvex
    }

    fn dim(&self) -> usize {
        self.hidden * self.n_in + 2 * self.hidden + 1
    }

    fn num_samples(&self) -> usize {
        self.targets.len()
    }

    fn loss(&self, x: &DenseVector) -> Result<f64> {
        Error::check_dim(self.dim(), x.len())?;
        let total: f64 = (0..self.num_samples())
            .map(|i| {
                let r = self.forward(x.as_slice(), i).0 - self.targets[i];
                0.5 * r * r
            })
            .sum();
        Ok(total / self.num_samples() as f64)
    }

    fn full_gradient(&self, x: &DenseVector) -> Result<DenseVector> {
        let all: Vec<usize> = (0..self.num_samples()).collect();
        self.grad_minibatch(x, &all)
    }

    fn grad_minibatch(&self, x: &DenseVector, batch: &[usize]) -> Result<DenseVector> {
        Error::check_dim(self.dim(), x.len())?;
        check_batch(batch, self.num_samples())?;
        let mut g = vec![0.0; self.dim()];
        for &i in batch {
            self.accumulate_grad(x.as_slice(), i, &mut g);
        }
        let inv = 1.0 / batch.len() as f64;
        g.iter_mut().for_each(|v| *v *= inv);
        Ok(DenseVector::from_raw(g))
    }
}

// ---------------------------------------------------------------------------
// second moment

/// Empirical bound on `E ||(1/P) sum_p G^p(x)||^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondMomentEstimate {
    pub m_squared: f64,
    pub sample_count: usize,
    pub nodes: usize,
    pub trials: usize,
    /// Index into the probed iterates where the maximum was attained.
    pub argmax: usize,
    /// `max_x ||mean over trials of the averaged gradient||^2`; never above
    /// `m_squared`.
    pub mean_norm_sq: f64,
}

/// For each probe point, average `||(1/P) sum_p G^p(x)||^2` over `trials`
/// draws, where each node draws `batch_size` samples uniformly without
/// replacement from the whole dataset (`None` = full batch). Report the
/// maximum over probe points.
pub fn estimate_second_moment(
    problem: &dyn Objective,
    x_samples: &[DenseVector],
    nodes: usize,
    batch_size: Option<usize>,
    trials: usize,
    seed: u64,
) -> Result<SecondMomentEstimate> {
    if trials == 0 || nodes == 0 || x_samples.is_empty() {
        return Err(Error::invalid(
            "second-moment estimation needs trials, nodes and probe points >= 1",
        ));
    }
    let all: Vec<usize> = (0..problem.num_samples()).collect();
    let mut best = SecondMomentEstimate {
        m_squared: 0.0,
        sample_count: x_samples.len(),
        nodes,
        trials,
        argmax: 0,
        mean_norm_sq: 0.0,
    };
    for (xi, x) in x_samples.iter().enumerate() {
        let mut acc = 0.0;
        let mut mean = vec![0.0; problem.dim()];
        for trial in 0..trials {
            let mut per_node = Vec::with_capacity(nodes);
            for p in 0..nodes {
                let g = match batch_size {
                    None => problem.full_gradient(x)?,
                    Some(b) => {
                        let mut rng = rng::stream(
                            seed,
                            Domain::SecondMoment,
                            (xi * trials + trial) as u64,
                            p as u64,
                        );
                        problem.grad_minibatch(x, &sample_batch(&all, b, &mut rng))?
                    }
                };
                per_node.push(g);
            }
            let avg = crate::vecmath::mean_fixed_order(&per_node)?;
            acc += avg.norm2_sq();
            mean.iter_mut().zip(avg.as_slice()).for_each(|(m, a)| *m += a);
        }
        let m2 = acc / trials as f64;
        let floor = mean.iter().map(|m| (m / trials as f64).powi(2)).sum::<f64>();
        if m2 > best.m_squared {
            best.m_squared = m2;
            best.argmax = xi;
        }
        best.mean_norm_sq = best.mean_norm_sq.max(floor);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_ls(b: [f64; 2], l2: f64) -> LeastSquaresProblem {
        LeastSquaresProblem::new(2, 2, vec![1.0, 0.0, 0.0, 1.0], b.to_vec(), l2).unwrap()
    }

    fn dv(v: &[f64]) -> DenseVector {
        DenseVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn least_squares_loss_examples() {
        assert_eq!(identity_ls([0.0, 0.0], 0.0).loss(&dv(&[0.0, 0.0])).unwrap(), 0.0);
        let p = identity_ls([2.0, 0.0], 0.0);
        let x = dv(&[0.0, 0.0]);
        // (1/(2*2)) * (2^2 + 0^2)
        let by_hand = (1.0 / 4.0) * (2.0f64 * 2.0 + 0.0);
        assert_eq!(p.loss(&x).unwrap(), by_hand);
        assert!((p.trace_loss(&x).unwrap() - by_hand).abs() < 1e-15);
    }

    #[test]
    fn least_squares_single_sample_gradient() {
        let p = identity_ls([2.0, 0.0], 0.0);
        let x = dv(&[0.0, 0.0]);
        let g = p.grad_minibatch(&x, &[0]).unwrap();
        // a_0 (a_0^T x - b_0) = (1, 0) * (0 - 2), batch mean over one sample
        assert_eq!(g.as_slice(), &[-2.0, 0.0]);
        // finite differences of the batch loss 0.5 * (x_0 - 2)^2
        let h = 1e-6;
        let batch_loss = |x0: f64| 0.5 * (x0 - 2.0) * (x0 - 2.0);
        let fd = (batch_loss(h) - batch_loss(-h)) / (2.0 * h);
        assert!((fd - g[0]).abs() < 1e-8);
        // singleton batches average to the full gradient
        let g1 = p.grad_minibatch(&x, &[1]).unwrap();
        let full = p.full_gradient(&x).unwrap();
        assert_eq!(g.add(&g1).unwrap().scale(0.5), full);
        assert_eq!(p.grad_minibatch(&x, &[0, 1]).unwrap(), full);
    }

    #[test]
    fn least_squares_constants() {
        // with the 1/m scaling, A = I_m gives eigenvalues 1/m; A = sqrt(m) I_m gives 1
        let (c, l) = identity_ls([1.0, 1.0], 0.0).analytic_constants().unwrap();
        assert!((c - 0.5).abs() < 1e-14 && (l - 0.5).abs() < 1e-14);
        let r2 = 2f64.sqrt();
        let scaled = LeastSquaresProblem::new(2, 2, vec![r2, 0.0, 0.0, r2], vec![1.0, 1.0], 0.0).unwrap();
        let (c1, l1) = scaled.analytic_constants().unwrap();
        assert!((c1 - 1.0).abs() < 1e-14 && (l1 - 1.0).abs() < 1e-14);
        let (c2, l2) = identity_ls([1.0, 1.0], 0.25).analytic_constants().unwrap();
        assert!((c2 - c - 0.25).abs() < 1e-14 && (l2 - l - 0.25).abs() < 1e-14);
    }

    #[test]
    fn least_squares_optimum_has_tiny_gradient() {
        let p = identity_ls([3.0, -1.0], 0.5);
        let x = p.known_optimum().unwrap();
        assert!(p.full_gradient(x).unwrap().norm2() < 1e-8);
        // (I/2 + I/2) x = b/2
        assert!((x[0] - 1.5).abs() < 1e-12 && (x[1] + 0.5).abs() < 1e-12, "{x:?}");
    }

    #[test]
    fn batch_errors() {
        let p = identity_ls([3.0, -1.0], 0.0);
        let x = dv(&[0.0, 0.0]);
        assert!(p.grad_minibatch(&x, &[]).is_err());
        assert!(p.grad_minibatch(&x, &[2]).is_err());
        assert!(matches!(
            p.loss(&dv(&[0.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn logistic_loss_at_zero_is_ln2() {
        let design = CsrMatrix::from_rows(3, &[vec![(0, 1.0)], vec![(1, -2.0), (2, 0.5)]]).unwrap();
        let p = LogisticProblem::new(design, vec![1.0, 1.0], 0.1).unwrap();
        let l = p.loss(&DenseVector::zeros(3)).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(p.analytic_constants().unwrap().0, 0.1);
    }

    #[test]
    fn logistic_rejects_invalid() {
        let empty_row = CsrMatrix::from_rows(2, &[vec![], vec![(0, 1.0)]]).unwrap();
        assert!(LogisticProblem::new(empty_row, vec![1.0, -1.0], 0.1).is_err());
        let ok = CsrMatrix::from_rows(2, &[vec![(1, 1.0)]]).unwrap();
        assert!(LogisticProblem::new(ok.clone(), vec![0.0], 0.1).is_err());
        assert!(LogisticProblem::new(ok, vec![1.0], 0.0).is_err());
    }

    #[test]
    fn logistic_optimum_by_gradient_descent() {
        let design = CsrMatrix::from_rows(
            2,
            &[vec![(0, 1.0)], vec![(0, -1.0), (1, 1.0)], vec![(1, 2.0)], vec![(0, 0.5)]],
        )
        .unwrap();
        let p = LogisticProblem::new(design, vec![1.0, -1.0, 1.0, -1.0], 0.2)
            .unwrap()
            .with_optimum(1e-10, 100_000)
            .unwrap();
        let x = p.known_optimum().unwrap();
        assert!(p.full_gradient(x).unwrap().norm2() <= 1e-10);
    }

    #[test]
    fn network_has_default_dimension() {
        let p = SmoothNonconvexProblem::synthetic(10, 16, 8, 0.1, 1).unwrap();
        assert_eq!(p.dim(), 145);
        assert!(p.loss(&p.random_point(3, 1.0)).unwrap() >= 0.0);
    }

    #[test]
    fn second_moment_full_batch_is_max_gradient_norm() {
        let p = identity_ls([2.0, -1.0], 0.0);
        let xs = vec![dv(&[0.0, 0.0]), dv(&[1.0, 1.0]), dv(&[5.0, 0.0])];
        let est = estimate_second_moment(&p, &xs, 3, None, 2, 0).unwrap();
        let expect = xs
            .iter()
            .map(|x| p.full_gradient(x).unwrap().norm2_sq())
            .fold(0.0, f64::max);
        assert!((est.m_squared - expect).abs() < 1e-14);
        assert_eq!(est.argmax, 2);
        assert!(est.m_squared >= est.mean_norm_sq);
    }

    #[test]
    fn second_moment_vanishes_at_optimum() {
        let p = identity_ls([2.0, -1.0], 0.0);
        let xs = vec![p.known_optimum().unwrap().clone()];
        let est = estimate_second_moment(&p, &xs, 4, Some(1), 8, 9).unwrap();
        assert!(est.m_squared <= 1e-16);
    }
}
