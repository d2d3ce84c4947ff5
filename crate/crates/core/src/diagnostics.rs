//! Measurement and verification utilities: finite differences, the one-step
//! descent inequality, log-log rate fits, trajectory aggregates and
//! seed averaging.

use serde::Serialize;

use crate::engine::{AlgoConfig, Engine, RoundReport, Variant};
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::problems::FederatedProblem;
use crate::schedules::GAMMA_L_MAX;

/// Default finite-difference step for a point `x`.
pub fn default_fd_step(x: &[f64]) -> f64 {
    1e-5 * (1.0 + linalg::norm_sq(x).sqrt())
}

/// Central-difference gradient of client `client`'s objective.
pub fn finite_difference_gradient(
    problem: &FederatedProblem,
    client: usize,
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(invalid("h", "must be positive"));
    }
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        probe[j] = x[j] + h;
        let up = problem.client_loss(client, &probe)?;
        probe[j] = x[j] - h;
        let down = problem.client_loss(client, &probe)?;
        probe[j] = x[j];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DescentCheck {
    pub passed: bool,
    /// False when `gamma L > 1/24`, in which case `passed` is vacuously true.
    pub precondition_met: bool,
}

/// `f_next <= f_prev - (11 gamma/24) |grad|^2 + (13 gamma/24) est_err + tol`
/// with `tol = 1e-12 (1 + |f_prev|)`.
pub fn descent_check(
    f_prev: f64,
    f_next: f64,
    grad_norm_sq: f64,
    est_err: f64,
    gamma: f64,
    smoothness: f64,
) -> DescentCheck {
    if gamma * smoothness > GAMMA_L_MAX * (1.0 + 1e-12) {
        log::warn!("descent check skipped: gamma L = {} > 1/24", gamma * smoothness);
        return DescentCheck {
            passed: true,
            precondition_met: false,
        };
    }
    let bound = f_prev - 11.0 * gamma / 24.0 * grad_norm_sq + 13.0 * gamma / 24.0 * est_err;
    DescentCheck {
        passed: f_next <= bound + 1e-12 * (1.0 + f_prev.abs()),
        precondition_met: true,
    }
}

/// Descent check applied to an engine report.
pub fn descent_check_report(report: &RoundReport, gamma: f64, smoothness: f64) -> DescentCheck {
    descent_check(
        report.loss,
        report.loss_next,
        report.grad_norm_sq,
        report.est_err,
        gamma,
        smoothness,
    )
}

/// `|grad f(x_r) - g_next|^2`
pub fn estimator_error(problem: &FederatedProblem, x_r: &[f64], g_next: &[f64]) -> Result<f64> {
    if g_next.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            got: g_next.len(),
        });
    }
    Ok(linalg::dist_sq(&problem.global_gradient(x_r)?, g_next))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn rate_fit(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 3 {
        return Err(invalid("xs", "need at least 3 points"));
    }
    if xs.iter().chain(ys).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(invalid("ys", "values must be finite and positive"));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("xs", "need at least two distinct values"));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok(sxy / sxx)
}

/// Runs `rounds` rounds from `x0` and returns `|grad f(x^R)|^2`.
pub fn terminal_grad_norm_sq(
    problem: &FederatedProblem,
    config: AlgoConfig,
    x0: &[f64],
    rounds: usize,
    seed: u64,
) -> Result<f64> {
    let engine = Engine::new(problem, config, seed)?;
    let (mut state, mut controls) = engine.init_state(x0)?;
    engine.continue_run(&mut state, &mut controls, rounds, &mut |_| {})?;
    Ok(linalg::norm_sq(&problem.global_gradient(&state.x)?))
}

/// Terminal `|grad f|^2` of plain FedAvg with a constant local step on a
/// noiseless problem: the bias that client drift leaves at the fixed point.
pub fn heterogeneity_floor(
    problem: &FederatedProblem,
    config: AlgoConfig,
    x0: &[f64],
    rounds: usize,
) -> Result<f64> {
    if problem.sigma() != 0.0 {
        return Err(invalid("sigma", "heterogeneity floor needs a noiseless problem"));
    }
    if config.variant != Variant::Fedavg {
        return Err(invalid("variant", "heterogeneity floor is defined for fedavg"));
    }
    if config.local_steps < 2 {
        return Err(invalid("local_steps", "drift needs at least 2 local steps"));
    }
    terminal_grad_norm_sq(problem, config, x0, rounds, 0)
}

/// Per-round arrays of one realization plus aggregates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryStats {
    pub loss: Vec<f64>,
    pub grad_norm_sq: Vec<f64>,
    pub est_err: Vec<f64>,
    pub client_drift: Vec<f64>,
    pub control_residual: Vec<Option<f64>>,
}

impl TrajectoryStats {
    pub fn from_reports(reports: &[RoundReport]) -> Self {
        Self {
            loss: reports.iter().map(|r| r.loss).collect(),
            grad_norm_sq: reports.iter().map(|r| r.grad_norm_sq).collect(),
            est_err: reports.iter().map(|r| r.est_err).collect(),
            client_drift: reports.iter().map(|r| r.client_drift).collect(),
            control_residual: reports.iter().map(|r| r.control_residual).collect(),
        }
    }

    pub fn rounds(&self) -> usize {
        self.loss.len()
    }

    /// `(1/R) sum_r |grad f(x^r)|^2`
    pub fn mean_grad_norm_sq(&self) -> f64 {
        mean(&self.grad_norm_sq)
    }

    pub fn min_grad_norm_sq(&self) -> f64 {
        self.grad_norm_sq.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Mean of `grad_norm_sq` over the last `fraction` of rounds (at least one).
    pub fn tail_mean_grad_norm_sq(&self, fraction: f64) -> f64 {
        let n = self.grad_norm_sq.len();
        let take = ((n as f64 * fraction).ceil() as usize).clamp(1, n.max(1));
        mean(&self.grad_norm_sq[n - take..])
    }

    /// First round with `grad_norm_sq <= tau`.
    pub fn rounds_to_threshold(&self, tau: f64) -> Option<usize> {
        self.grad_norm_sq.iter().position(|&v| v <= tau)
    }

    /// Running minimum of `grad_norm_sq`.
    pub fn min_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.grad_norm_sq
            .iter()
            .map(|&v| {
                best = best.min(v);
                best
            })
            .collect()
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean (sample standard deviation over `sqrt(n)`).
pub fn standard_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Column-wise mean and standard error over equal-length replica series.
pub fn seed_average(series: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let Some(first) = series.first() else {
        return Err(invalid("series", "need at least one replica"));
    };
    let len = first.len();
    if let Some(bad) = series.iter().find(|s| s.len() != len) {
        return Err(Error::DimensionMismatch {
            expected: len,
            got: bad.len(),
        });
    }
    let mut means = Vec::with_capacity(len);
    let mut ses = Vec::with_capacity(len);
    let mut column = vec![0.0; series.len()];
    for t in 0..len {
        for (slot, s) in column.iter_mut().zip(series) {
            *slot = s[t];
        }
        means.push(mean(&column));
        ses.push(standard_error(&column));
    }
    Ok((means, ses))
}
