//! Closed-form constants, assumption estimators and convergence bounds.
//!
//! Everything here is a pure function of vectors, traces or scalar
//! constants, so sweeps may call it from any thread.

use serde::{Deserialize, Serialize};

use crate::engine::{LearningRateSchedule, StepRecord};
use crate::error::{Error, Result};
use crate::vecmath::{self, gamma, DenseVector};

/// One evaluation of the top-K commutation gap for a single step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XiMeasurement {
    pub t: usize,
    /// `||TopK(mean acc) - mean TopK(acc)||`
    pub lhs_norm: f64,
    /// `||alpha * mean gradient||`
    pub grad_norm: f64,
    /// `lhs_norm / grad_norm`; infinite when only the denominator vanishes.
    pub xi: f64,
}

impl XiMeasurement {
    /// The ratio is meaningful only for a nonzero gradient step.
    pub fn is_defined(&self) -> bool {
        self.grad_norm > 0.0
    }

    pub fn is_unbounded(&self) -> bool {
        self.xi.is_infinite()
    }
}

/// Measure both sides of the commutation inequality for one step.
pub fn measure_xi(per_node_accs: &[DenseVector], avg_alpha_grad: &DenseVector, k: usize, p: usize) -> Result<XiMeasurement> {
    if p == 0 || per_node_accs.len() != p {
        return Err(Error::invalid(format!("expected {p} accumulators, got {}", per_node_accs.len())));
    }
    let n = avg_alpha_grad.len();
    let mut tops = Vec::with_capacity(p);
    for acc in per_node_accs {
        Error::check_dim(n, acc.len())?;
        tops.push(vecmath::top_k(acc, k)?);
    }
    let mean_of_tops = vecmath::aggregate_fixed_order(&tops, p)?;
    let top_of_mean = vecmath::top_k(&vecmath::mean_fixed_order(per_node_accs)?, k)?.densify();
    let lhs_norm = top_of_mean.sub(&mean_of_tops)?.norm2();
    let grad_norm = avg_alpha_grad.norm2();
    let xi = if grad_norm > 0.0 {
        lhs_norm / grad_norm
    } else if lhs_norm > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    Ok(XiMeasurement {
        t: 0,
        lhs_norm,
        grad_norm,
        xi,
    })
}

/// Aggregates of per-step xi values over a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiSummary {
    pub count: usize,
    /// Steps without a defined ratio (zero gradient step or not recorded).
    pub excluded: usize,
    pub running_max: Vec<f64>,
    pub max: f64,
    pub mean: f64,
    pub p99: f64,
    /// Max over the first and second half of the defined values.
    pub first_half_max: f64,
    pub second_half_max: f64,
}

impl XiSummary {
    pub fn from_values(values: &[Option<f64>]) -> Result<Self> {
        let defined: Vec<f64> = values.iter().flatten().copied().collect();
        if defined.is_empty() {
            return Err(Error::EmptyInput { path: None });
        }
        let mut running_max = Vec::with_capacity(defined.len());
        let mut cur = f64::NEG_INFINITY;
        for &x in &defined {
            cur = cur.max(x);
            running_max.push(cur);
        }
        let half = defined.len() / 2;
        let max_of = |s: &[f64]| s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(XiSummary {
            count: defined.len(),
            excluded: values.len() - defined.len(),
            max: cur,
            mean: defined.iter().sum::<f64>() / defined.len() as f64,
            p99: percentile(&defined, 0.99),
            first_half_max: max_of(&defined[..half.max(1)]),
            second_half_max: max_of(&defined[half..]),
            running_max,
        })
    }

    pub fn from_records(records: &[StepRecord]) -> Result<Self> {
        let values: Vec<Option<f64>> = records.iter().map(|r| r.xi).collect();
        Self::from_values(&values)
    }
}

/// Nearest-rank percentile, `q` in `[0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// `gamma + xi / P`, the per-step growth factor of the gap.
fn gap_factor(gamma: f64, xi: f64, p: usize) -> f64 {
    gamma + xi / p as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionConstants {
    pub gamma: f64,
    pub c: f64,
    pub c_prime: f64,
}

/// `C` and `C'` from `(n, K, xi, P)`; requires `K > 0` and `gamma < 1`.
pub fn compression_constants(n: usize, k: usize, xi: f64, p: usize) -> Result<CompressionConstants> {
    let g = gamma(n, k)?;
    if p == 0 || !(xi >= 0.0 && xi.is_finite()) {
        return Err(Error::invalid(format!("need P >= 1 and finite xi >= 0 (P = {p}, xi = {xi})")));
    }
    let f = gap_factor(g, xi, p);
    Ok(CompressionConstants {
        gamma: g,
        c: (1.0 + g) / (1.0 - g) * f,
        c_prime: f * 2.0 / (1.0 - g),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexConstants {
    pub gamma: f64,
    pub c: f64,
    pub c_prime: f64,
    /// Lipschitz constant of the rate supermartingale in its first argument.
    pub h: f64,
}

/// `2 alpha c eps - alpha^2 M^2`, which must be positive for the
/// supermartingale to exist.
fn sgd_margin(alpha: f64, c: f64, epsilon: f64, m: f64) -> Result<f64> {
    let d = 2.0 * alpha * c * epsilon - alpha * alpha * m * m;
    if d > 0.0 {
        Ok(d)
    } else {
        Err(Error::Infeasible(format!(
            "2*alpha*c*eps - alpha^2*M^2 = {d:e} <= 0 (alpha = {alpha}, c = {c}, eps = {epsilon}, M = {m})"
        )))
    }
}

#[allow(clippy::too_many_arguments)]
pub fn convex_constants(
    n: usize,
    k: usize,
    xi: f64,
    p: usize,
    alpha: f64,
    c: f64,
    m: f64,
    epsilon: f64,
) -> Result<ConvexConstants> {
    let cc = compression_constants(n, k, xi, p)?;
    let margin = sgd_margin(alpha, c, epsilon, m)?;
    Ok(ConvexConstants {
        gamma: cc.gamma,
        c: cc.c,
        c_prime: cc.c_prime,
        h: 2.0 * epsilon.sqrt() / margin,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrWindow {
    /// Upper end of the admissible constant learning rate. Not positive
    /// when infeasible.
    pub alpha_max: f64,
    pub feasible: bool,
    /// The smallest `eps` for which the window is nonempty, `(M C' / c)^2`.
    pub epsilon_min: f64,
}

pub fn convex_lr_window(c: f64, epsilon: f64, m: f64, c_prime: f64) -> LrWindow {
    let plain = 2.0 * c * epsilon / (m * m);
    let compressed = 2.0 * (c * epsilon - epsilon.sqrt() * m * c_prime) / (m * m);
    let epsilon_min = (m * c_prime / c).powi(2);
    LrWindow {
        alpha_max: plain.min(compressed),
        feasible: epsilon > epsilon_min,
        epsilon_min,
    }
}

/// Piecewise logarithm: `ln(e x)` for `x >= 1`, `x` below.
pub fn plog(x: f64) -> f64 {
    if x >= 1.0 {
        1.0 + x.ln()
    } else {
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureBound {
    /// The bound as computed, possibly above 1.
    pub value: f64,
    pub vacuous: bool,
}

impl FailureBound {
    pub fn clamped(&self) -> f64 {
        self.value.min(1.0)
    }
}

/// Bound on the probability that the iterate has not entered the success
/// region `||x - x*||^2 <= eps` within `T` steps.
pub fn convex_failure_bound(
    alpha: f64,
    c: f64,
    epsilon: f64,
    m: f64,
    c_prime: f64,
    dist0_sq: f64,
    steps: usize,
) -> Result<FailureBound> {
    let denom = 2.0 * alpha * c * epsilon - alpha * alpha * m * m - alpha * 2.0 * epsilon.sqrt() * m * c_prime;
    if denom <= 0.0 {
        return Err(Error::Infeasible(format!(
            "2*alpha*c*eps - alpha^2*M^2 - 2*alpha*sqrt(eps)*M*C' = {denom:e} <= 0"
        )));
    }
    if steps == 0 {
        return Err(Error::invalid("T must be >= 1"));
    }
    let value = epsilon / (denom * steps as f64) * plog(std::f64::consts::E * dist0_sq / epsilon);
    Ok(FailureBound {
        value,
        vacuous: value > 1.0,
    })
}

/// The rate supermartingale `W_t` evaluated at squared distance `dist_sq`.
pub fn supermartingale_w(dist_sq: f64, t: usize, alpha: f64, c: f64, epsilon: f64, m: f64) -> Result<f64> {
    let margin = sgd_margin(alpha, c, epsilon, m)?;
    Ok(epsilon / margin * plog(dist_sq / epsilon) + t as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DCheck {
    pub sup_partial: f64,
    pub bounded: bool,
    pub t_max: usize,
}

/// Relative growth of the supremum over the last decade below which the
/// sequence is taken as converged.
pub const D_CONVERGENCE_TOL: f64 = 1e-6;

/// Supremum over `t <= t_max` of `S_t = sum_{k=1..t} (2 gamma^2)^k alpha_{t-k}^2 / alpha_t`.
///
/// Terms are dropped once the geometric weight makes them negligible
/// against the running sum, so the cost is `O(t_max log)` rather than
/// quadratic.
pub fn check_d(schedule: &LearningRateSchedule, gamma: f64, t_max: usize) -> Result<DCheck> {
    schedule.validate()?;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    let r = 2.0 * gamma * gamma;
    if r >= 1.0 {
        return Ok(DCheck {
            sup_partial: f64::INFINITY,
            bounded: false,
            t_max,
        });
    }
    if r == 0.0 {
        return Ok(DCheck {
            sup_partial: 0.0,
            bounded: true,
            t_max,
        });
    }
    let alpha_peak = (0..=t_max.min(1000)).map(|t| schedule.alpha(t)).fold(0.0, f64::max);
    let decade = (t_max / 10).max(1);
    let (mut sup, mut sup_decade) = (0.0f64, 0.0f64);
    for t in 1..=t_max {
        let at = schedule.alpha(t);
        let mut s = 0.0;
        let mut w = 1.0;
        for k in 1..=t {
            w *= r;
            let a = schedule.alpha(t - k);
            s += w * a * a / at;
            // remaining tail is at most w r / (1 - r) * peak^2 / alpha_t
            if w * r / (1.0 - r) * alpha_peak * alpha_peak / at <= 1e-17 * s {
                break;
            }
        }
        sup = sup.max(s);
        if t == decade {
            sup_decade = sup;
        }
    }
    let bounded = t_max >= 10 && (sup - sup_decade) <= D_CONVERGENCE_TOL * sup;
    Ok(DCheck {
        sup_partial: sup,
        bounded,
        t_max,
    })
}

/// Problem and compression constants entering the non-convex bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonconvexConstants {
    pub f0_minus_fstar: f64,
    pub l: f64,
    pub m: f64,
    pub xi: f64,
    pub p: usize,
    pub gamma: f64,
    pub d: f64,
}

impl NonconvexConstants {
    fn validate(&self) -> Result<()> {
        let vals = [self.f0_minus_fstar, self.l, self.m, self.xi, self.gamma, self.d];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) || self.p == 0 {
            return Err(Error::invalid(format!("non-convex constants must be finite and >= 0: {self:?}")));
        }
        if self.gamma == 0.0 && self.xi > 0.0 {
            return Err(Error::NotAvailable(
                "the non-convex bound is singular at gamma = 0 (K = n) with xi > 0".into(),
            ));
        }
        Ok(())
    }

    /// `2 L M^2 + 4 L^2 M^2 (1 + xi / (P gamma))^2 D`
    pub fn variance_term(&self) -> Result<f64> {
        self.validate()?;
        let lm2 = self.l * self.m * self.m;
        let amp = if self.xi == 0.0 {
            1.0
        } else {
            1.0 + self.xi / (self.p as f64 * self.gamma)
        };
        Ok(2.0 * lm2 + 4.0 * self.l * lm2 * amp * amp * self.d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonconvexBoundInputs {
    pub constants: NonconvexConstants,
    pub schedule: LearningRateSchedule,
    pub steps: usize,
}

/// Bound on the weighted average of `E ||grad f(v_t)||^2` over `T` steps.
pub fn nonconvex_bound(inputs: &NonconvexBoundInputs) -> Result<f64> {
    let b = inputs.constants.variance_term()?;
    inputs.schedule.validate()?;
    if inputs.steps == 0 {
        return Err(Error::invalid("T must be >= 1"));
    }
    let (s1, s2) = inputs.schedule.sums(inputs.steps);
    Ok(4.0 * inputs.constants.f0_minus_fstar / s1 + b * s2 / s1)
}

/// The constant learning rate minimising the non-convex bound over `T` steps.
pub fn fixed_lr_nonconvex(constants: &NonconvexConstants, steps: usize) -> Result<f64> {
    let b = constants.variance_term()?;
    if steps == 0 || b <= 0.0 || constants.f0_minus_fstar <= 0.0 {
        return Err(Error::invalid(format!(
            "need T >= 1 and positive f0 - f* and variance term (T = {steps}, B = {b})"
        )));
    }
    Ok((constants.f0_minus_fstar / (steps as f64 * b)).sqrt())
}

/// `5 sqrt((f0 - f*) B / T)`, the bound attained by [`fixed_lr_nonconvex`].
pub fn fixed_lr_nonconvex_bound(constants: &NonconvexConstants, steps: usize) -> Result<f64> {
    let b = constants.variance_term()?;
    Ok(5.0 * (constants.f0_minus_fstar * b / steps as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormGapRow {
    pub k: usize,
    pub gamma: f64,
    pub mean_ratio: f64,
    pub max_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormGapCurve {
    pub rows: Vec<NormGapRow>,
    pub skipped: usize,
}

/// `||g - TopK(g)|| / ||g||` per `K`, over a set of gradient samples.
pub fn norm_gap_curve(samples: &[DenseVector], k_values: &[usize]) -> Result<NormGapCurve> {
    let usable: Vec<&DenseVector> = samples.iter().filter(|g| g.norm2() > 0.0).collect();
    if usable.is_empty() {
        return Err(Error::EmptyInput { path: None });
    }
    let n = usable[0].len();
    let mut rows = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let (mut sum, mut max) = (0.0, 0.0f64);
        for g in &usable {
            Error::check_dim(n, g.len())?;
            let ratio = vecmath::residual(g, k)?.norm2() / g.norm2();
            sum += ratio;
            max = max.max(ratio);
        }
        rows.push(NormGapRow {
            k,
            gamma: gamma(n, k)?,
            mean_ratio: sum / usable.len() as f64,
            max_ratio: max,
        });
    }
    Ok(NormGapCurve {
        rows,
        skipped: samples.len() - usable.len(),
    })
}

/// `gamma ||v_t - x_t|| + (gamma + xi/P) ||x_{t+1} - x_t|| - ||v_{t+1} - x_{t+1}||`
pub fn lemma1_slack(gap_prev: f64, gap_new: f64, x_step_norm: f64, xi: f64, gamma: f64, p: usize) -> f64 {
    gamma * gap_prev + gap_factor(gamma, xi, p) * x_step_norm - gap_new
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma3Point {
    pub t: usize,
    /// `||v_t - x_t||^2`
    pub lhs: f64,
    pub rhs: f64,
}

impl Lemma3Point {
    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }
}

/// Evaluate `||v_t - x_t||^2 <= (1 + xi_bar/(P gamma))^2 sum_k (2 gamma^2)^k ||x_{t-k+1} - x_{t-k}||^2`
/// along a trace, with `xi_bar` the running max of the recorded xi values.
pub fn lemma3_check(records: &[StepRecord], gamma: f64, p: usize) -> Result<Vec<Lemma3Point>> {
    if gamma <= 0.0 || p == 0 {
        return Err(Error::NotAvailable("the squared-form gap bound needs gamma > 0 and P >= 1".into()));
    }
    let r = 2.0 * gamma * gamma;
    let mut acc = 0.0;
    let mut xi_bar = 0.0f64;
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        match (rec.xi, rec.xi_lhs) {
            (Some(x), _) => xi_bar = xi_bar.max(x),
            (None, Some(lhs)) if lhs > 0.0 => xi_bar = f64::INFINITY,
            (None, None) => return Err(Error::invalid(format!("step {} has no xi record", rec.t))),
            _ => {}
        }
        acc = r * (rec.x_step_norm * rec.x_step_norm + acc);
        let amp = 1.0 + xi_bar / (p as f64 * gamma);
        out.push(Lemma3Point {
            t: rec.t,
            lhs: rec.gap_norm * rec.gap_norm,
            rhs: amp * amp * acc,
        });
    }
    Ok(out)
}

/// First step `t` with `loss_v(t) - f* <= rel * (f0 - f*)`.
pub fn steps_to_threshold(records: &[StepRecord], f0: f64, fstar: f64, rel: f64) -> Option<usize> {
    let target = rel * (f0 - fstar);
    records.iter().find(|r| r.loss_v - fstar <= target).map(|r| r.t)
}
