//! Synthetic heterogeneous federated objectives.
//!
//! A [`FederatedProblem`] holds `N` client objectives `f_i` with the global
//! objective `f(x) = (1/N) sum_i f_i(x)`. Each client exposes an exact gradient
//! oracle and a stochastic one driven by a [`SampleRef`], which can be
//! re-evaluated at several points (the variance-reduced directions need the
//! same sample at the local iterate and at the previous global model).
//!
//! Two families are provided:
//!
//! * quadratic clients `f_i(x) = 1/2 (x - b_i)^T A_i (x - b_i)` with additive
//!   gradient noise `grad F(x; xi) = grad f_i(x) + xi`, `E|xi|^2 = sigma^2`;
//! * logistic-regression clients over a two-cluster Gaussian design with a
//!   Dirichlet label skew across clients.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, decode_floats, encode_floats};
use crate::stream::{rng_stream, Purpose, Stream};

/// `f_i(x) = 1/2 (x - b_i)^T A_i (x - b_i)` plus additive gradient noise.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticClient {
    /// Symmetric PSD curvature `A_i`, row-major `d x d`.
    pub matrix: Vec<f64>,
    /// Client minimizer `b_i`.
    pub offset: Vec<f64>,
    /// Noise scale: each stochastic gradient is perturbed by `xi` with `E|xi|^2 = noise_sigma^2`.
    pub noise_sigma: f64,
}

/// Mean logistic loss over the client's rows plus `reg/2 |x|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticClient {
    /// `n_i x d` design, row-major.
    pub features: Vec<f64>,
    /// Binary labels, one per row.
    pub labels: Vec<u8>,
    pub reg: f64,
}

impl LogisticClient {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    fn row(&self, j: usize, dim: usize) -> &[f64] {
        &self.features[j * dim..(j + 1) * dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Clients {
    Quadratic(Vec<QuadraticClient>),
    Logistic(Vec<LogisticClient>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Quadratic,
    Logistic,
}

/// Known minimizer of the global objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub x: Vec<f64>,
    pub value: f64,
}

/// Handle for one drawn sample `xi` of a given client.
///
/// Evaluating the same handle at the same point always returns the same
/// gradient.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleRef {
    /// Additive noise vector of a quadratic client.
    Noise { client: usize, xi: Vec<f64> },
    /// Row index of a logistic client.
    Row { client: usize, row: usize },
}

impl SampleRef {
    pub fn client(&self) -> usize {
        match self {
            SampleRef::Noise { client, .. } | SampleRef::Row { client, .. } => *client,
        }
    }
}

/// `Delta = f(x0) - f*` and `G0 = (1/N) sum_i |grad f_i(x0)|^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialConstants {
    pub delta: f64,
    pub g0_energy: f64,
}

/// N client objectives over a shared dimension, with known constants.
#[derive(Debug, Clone, PartialEq)]
pub struct FederatedProblem {
    clients: Clients,
    dim: usize,
    smoothness: f64,
    sigma: f64,
    minimizer: Option<Optimum>,
}

impl FederatedProblem {
    /// Builds a quadratic problem from explicit clients, computing `L` from
    /// the spectra and `x*` from `(sum A_i) x* = sum A_i b_i`.
    pub fn quadratic(clients: Vec<QuadraticClient>) -> Result<Self> {
        if clients.is_empty() {
            return Err(invalid("clients", "need at least one client"));
        }
        let dim = clients[0].offset.len();
        if dim == 0 {
            return Err(invalid("dim", "must be at least 1"));
        }
        let mut smoothness: f64 = 0.0;
        let mut sigma: f64 = 0.0;
        for c in &clients {
            if c.offset.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.offset.len(),
                });
            }
            if c.matrix.len() != dim * dim {
                return Err(Error::DimensionMismatch {
                    expected: dim * dim,
                    got: c.matrix.len(),
                });
            }
            if !linalg::all_finite(&c.matrix) || !linalg::all_finite(&c.offset) {
                return Err(Error::NonFinite { what: "client data" });
            }
            if !(c.noise_sigma.is_finite() && c.noise_sigma >= 0.0) {
                return Err(invalid("sigma", "must be finite and >= 0"));
            }
            for r in 0..dim {
                for s in 0..r {
                    if c.matrix[r * dim + s] != c.matrix[s * dim + r] {
                        return Err(invalid("matrix", "curvature must be symmetric"));
                    }
                }
            }
            let eig = SymmetricEigen::new(DMatrix::from_row_slice(dim, dim, &c.matrix));
            let (lo, hi) = eig
                .eigenvalues
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            if lo < -1e-12 * hi.abs().max(1.0) {
                return Err(invalid("matrix", "curvature must be positive semidefinite"));
            }
            smoothness = smoothness.max(hi);
            sigma = sigma.max(c.noise_sigma);
        }
        let mut problem = Self {
            clients: Clients::Quadratic(clients),
            dim,
            smoothness,
            sigma,
            minimizer: None,
        };
        problem.minimizer = problem.solve_quadratic_minimizer();
        Ok(problem)
    }

    /// Builds a logistic problem; `L = max_j |a_j|^2 / 4 + reg` and
    /// `sigma = max_j |a_j|` (both upper bounds).
    pub fn logistic(clients: Vec<LogisticClient>, dim: usize) -> Result<Self> {
        if clients.is_empty() {
            return Err(invalid("clients", "need at least one client"));
        }
        if dim == 0 {
            return Err(invalid("dim", "must be at least 1"));
        }
        let mut max_row_sq: f64 = 0.0;
        let mut max_reg: f64 = 0.0;
        for c in &clients {
            if c.n_rows() == 0 {
                return Err(invalid("rows_per_client", "each client needs at least one row"));
            }
            if c.features.len() != c.n_rows() * dim {
                return Err(Error::DimensionMismatch {
                    expected: c.n_rows() * dim,
                    got: c.features.len(),
                });
            }
            if !linalg::all_finite(&c.features) {
                return Err(Error::NonFinite { what: "features" });
            }
            if c.labels.iter().any(|&y| y > 1) {
                return Err(invalid("labels", "labels must be 0 or 1"));
            }
            if !(c.reg.is_finite() && c.reg >= 0.0) {
                return Err(invalid("reg", "must be finite and >= 0"));
            }
            for j in 0..c.n_rows() {
                max_row_sq = max_row_sq.max(linalg::norm_sq(c.row(j, dim)));
            }
            max_reg = max_reg.max(c.reg);
        }
        Ok(Self {
            clients: Clients::Logistic(clients),
            dim,
            smoothness: 0.25 * max_row_sq + max_reg,
            sigma: max_row_sq.sqrt(),
            minimizer: None,
        })
    }

    pub fn kind(&self) -> ProblemKind {
        match self.clients {
            Clients::Quadratic(_) => ProblemKind::Quadratic,
            Clients::Logistic(_) => ProblemKind::Logistic,
        }
    }

    pub fn clients(&self) -> &Clients {
        &self.clients
    }

    pub fn n_clients(&self) -> usize {
        match &self.clients {
            Clients::Quadratic(c) => c.len(),
            Clients::Logistic(c) => c.len(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Smoothness constant `L` (exact for quadratics, an upper bound for logistic).
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn minimizer(&self) -> Option<&Optimum> {
        self.minimizer.as_ref()
    }

    fn check_client(&self, client: usize) -> Result<()> {
        let n = self.n_clients();
        if client >= n {
            return Err(Error::ClientOutOfRange {
                index: client,
                n_clients: n,
            });
        }
        Ok(())
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if !linalg::all_finite(x) {
            return Err(Error::NonFinite { what: "point x" });
        }
        Ok(())
    }

    /// Client loss `f_i(x)`.
    pub fn client_loss(&self, client: usize, x: &[f64]) -> Result<f64> {
        self.check_client(client)?;
        self.check_point(x)?;
        Ok(self.client_loss_unchecked(client, x))
    }

    fn client_loss_unchecked(&self, client: usize, x: &[f64]) -> f64 {
        match &self.clients {
            Clients::Quadratic(cs) => {
                let c = &cs[client];
                let diff = linalg::sub(x, &c.offset);
                0.5 * linalg::dot(&diff, &linalg::matvec(&c.matrix, &diff))
            }
            Clients::Logistic(cs) => {
                let c = &cs[client];
                let mut acc = 0.0;
                for j in 0..c.n_rows() {
                    let z = linalg::dot(c.row(j, self.dim), x);
                    acc += softplus(z) - f64::from(c.labels[j]) * z;
                }
                acc / c.n_rows() as f64 + 0.5 * c.reg * linalg::norm_sq(x)
            }
        }
    }

    /// Exact local gradient `grad f_i(x)`.
    pub fn full_gradient(&self, client: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check_client(client)?;
        self.check_point(x)?;
        Ok(self.full_gradient_unchecked(client, x))
    }

    pub(crate) fn full_gradient_unchecked(&self, client: usize, x: &[f64]) -> Vec<f64> {
        match &self.clients {
            Clients::Quadratic(cs) => {
                let c = &cs[client];
                linalg::matvec(&c.matrix, &linalg::sub(x, &c.offset))
            }
            Clients::Logistic(cs) => {
                let c = &cs[client];
                let mut g = vec![0.0; self.dim];
                for j in 0..c.n_rows() {
                    let a = c.row(j, self.dim);
                    let r = sigmoid(linalg::dot(a, x)) - f64::from(c.labels[j]);
                    linalg::axpy(&mut g, r, a);
                }
                let inv = 1.0 / c.n_rows() as f64;
                g.iter_mut()
                    .zip(x)
                    .for_each(|(gi, xi)| *gi = *gi * inv + c.reg * xi);
                g
            }
        }
    }

    /// Draws one sample `xi ~ D_i` from the caller's stream.
    ///
    /// Quadratic clients draw an isotropic Gaussian noise vector with
    /// per-coordinate variance `sigma^2 / d`; logistic clients draw a uniform
    /// row index.
    pub fn draw_sample(&self, client: usize, rng: &mut Stream) -> Result<SampleRef> {
        self.check_client(client)?;
        Ok(match &self.clients {
            Clients::Quadratic(cs) => {
                let scale = cs[client].noise_sigma / (self.dim as f64).sqrt();
                let xi = (0..self.dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        scale * z
                    })
                    .collect();
                SampleRef::Noise { client, xi }
            }
            Clients::Logistic(cs) => SampleRef::Row {
                client,
                row: rng.random_range(0..cs[client].n_rows()),
            },
        })
    }

    /// Stochastic gradient `grad F(x; xi)` for a previously drawn sample.
    pub fn grad_at(&self, client: usize, sample: &SampleRef, x: &[f64]) -> Result<Vec<f64>> {
        self.check_client(client)?;
        self.check_point(x)?;
        if sample.client() != client {
            return Err(Error::SampleMismatch {
                sample_client: sample.client(),
                client,
            });
        }
        match (&self.clients, sample) {
            (Clients::Quadratic(_), SampleRef::Noise { xi, .. }) => {
                if xi.len() != self.dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.dim,
                        got: xi.len(),
                    });
                }
                let mut g = self.full_gradient_unchecked(client, x);
                linalg::add_assign(&mut g, xi);
                Ok(g)
            }
            (Clients::Logistic(cs), SampleRef::Row { row, .. }) => {
                let c = &cs[client];
                if *row >= c.n_rows() {
                    return Err(invalid("sample", "row index out of range"));
                }
                let a = c.row(*row, self.dim);
                let r = sigmoid(linalg::dot(a, x)) - f64::from(c.labels[*row]);
                Ok(a.iter().zip(x).map(|(ai, xi)| r * ai + c.reg * xi).collect())
            }
            _ => Err(invalid("sample", "sample kind does not match problem kind")),
        }
    }

    /// `grad f(x)`, accumulated in ascending client order.
    pub fn global_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        Ok(self.global_gradient_unchecked(x))
    }

    pub(crate) fn global_gradient_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let grads: Vec<Vec<f64>> = (0..self.n_clients())
            .map(|i| self.full_gradient_unchecked(i, x))
            .collect();
        linalg::mean_of(&grads, self.dim)
    }

    /// `f(x)`, accumulated in ascending client order.
    pub fn global_loss(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.global_loss_unchecked(x))
    }

    pub(crate) fn global_loss_unchecked(&self, x: &[f64]) -> f64 {
        let n = self.n_clients();
        (0..n).fold(0.0, |acc, i| acc + self.client_loss_unchecked(i, x)) / n as f64
    }

    /// Heterogeneity `(1/N) sum_i |grad f_i(x) - grad f(x)|^2`.
    pub fn measure_heterogeneity(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let grads: Vec<Vec<f64>> = (0..self.n_clients())
            .map(|i| self.full_gradient_unchecked(i, x))
            .collect();
        let mean = linalg::mean_of(&grads, self.dim);
        let total = grads.iter().fold(0.0, |acc, g| acc + linalg::dist_sq(g, &mean));
        Ok(total / grads.len() as f64)
    }

    /// `Delta` and `G0` at `x0`. Uses the known minimum when present,
    /// otherwise the caller-supplied `f_star`.
    pub fn initial_constants(&self, x0: &[f64], f_star: Option<f64>) -> Result<InitialConstants> {
        self.check_point(x0)?;
        let f_star = match (&self.minimizer, f_star) {
            (_, Some(v)) if v.is_finite() => v,
            (_, Some(_)) => return Err(invalid("f_star", "must be finite")),
            (Some(opt), None) => opt.value,
            (None, None) => return Err(Error::MissingOptimum),
        };
        let delta = (self.global_loss_unchecked(x0) - f_star).max(0.0);
        let n = self.n_clients();
        let g0_energy = (0..n).fold(0.0, |acc, i| {
            acc + linalg::norm_sq(&self.full_gradient_unchecked(i, x0))
        }) / n as f64;
        Ok(InitialConstants { delta, g0_energy })
    }

    /// Averaged curvature `(1/N) sum_i A_i` of a quadratic problem, row-major.
    pub fn mean_hessian(&self) -> Option<Vec<f64>> {
        let Clients::Quadratic(cs) = &self.clients else {
            return None;
        };
        let d2 = self.dim * self.dim;
        let mut h = vec![0.0; d2];
        for c in cs {
            linalg::add_assign(&mut h, &c.matrix);
        }
        let inv = 1.0 / cs.len() as f64;
        h.iter_mut().for_each(|v| *v *= inv);
        Some(h)
    }

    fn solve_quadratic_minimizer(&self) -> Option<Optimum> {
        let Clients::Quadratic(cs) = &self.clients else {
            return None;
        };
        let d = self.dim;
        let mut h = DMatrix::<f64>::zeros(d, d);
        let mut rhs = DVector::<f64>::zeros(d);
        for c in cs {
            let a = DMatrix::from_row_slice(d, d, &c.matrix);
            rhs += &a * DVector::from_column_slice(&c.offset);
            h += a;
        }
        let solve = |b: &DVector<f64>| -> Option<DVector<f64>> {
            match h.clone().cholesky() {
                Some(ch) => Some(ch.solve(b)),
                None => h.clone().lu().solve(b),
            }
        };
        let mut x = solve(&rhs)?;
        // one round of iterative refinement
        let resid = &rhs - &h * &x;
        x += solve(&resid)?;
        let x: Vec<f64> = x.iter().copied().collect();
        if !linalg::all_finite(&x) {
            return None;
        }
        let g = self.global_gradient_unchecked(&x);
        if linalg::norm_sq(&g).sqrt() > 1e-10 {
            log::warn!("global curvature is near singular; minimizer not recorded");
            return None;
        }
        let value = self.global_loss_unchecked(&x);
        Some(Optimum { x, value })
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Parameters of [`make_quadratic_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSuiteParams {
    pub n_clients: usize,
    pub dim: usize,
    /// Offsets are `b_i = hetero_scale * z_i` with `E|z_i|^2 = 1`.
    pub hetero_scale: f64,
    pub l_target: f64,
    pub mu_min: f64,
    pub sigma: f64,
    pub seed: u64,
}

/// Random quadratic suite. Each `A_i = Q_i diag(lambda) Q_i^T` with a Haar
/// orthogonal `Q_i` and eigenvalues log-uniform in `[mu_min, l_target]`
/// (uniform when `mu_min = 0`); client 0 always has `l_target` in its
/// spectrum so `L` is tight.
pub fn make_quadratic_suite(p: &QuadraticSuiteParams) -> Result<FederatedProblem> {
    for (name, v) in [
        ("hetero_scale", p.hetero_scale),
        ("l_target", p.l_target),
        ("mu_min", p.mu_min),
        ("sigma", p.sigma),
    ] {
        if !v.is_finite() {
            return Err(invalid(name, "must be finite"));
        }
    }
    if p.dim == 0 {
        return Err(invalid("dim", "must be at least 1"));
    }
    if p.n_clients == 0 {
        return Err(invalid("clients", "must be at least 1"));
    }
    if p.hetero_scale < 0.0 || p.sigma < 0.0 || p.mu_min < 0.0 {
        return Err(invalid("hetero_scale/sigma/mu_min", "must be >= 0"));
    }
    if p.l_target <= 0.0 {
        return Err(invalid("l_target", "must be > 0"));
    }
    if p.mu_min > p.l_target {
        return Err(invalid("mu_min", "must not exceed l_target"));
    }
    let d = p.dim;
    let mut rng = rng_stream(p.seed, 0, 0, Purpose::Problem);
    let mut clients = Vec::with_capacity(p.n_clients);
    for i in 0..p.n_clients {
        let mut eigs: Vec<f64> = (0..d).map(|_| draw_eigenvalue(p, &mut rng)).collect();
        if i == 0 {
            eigs[0] = p.l_target;
        }
        let basis = haar_orthogonal(d, &mut rng);
        let mut matrix = vec![0.0; d * d];
        for r in 0..d {
            for s in r..d {
                let v: f64 = (0..d).fold(0.0, |acc, k| acc + basis[(r, k)] * eigs[k] * basis[(s, k)]);
                matrix[r * d + s] = v;
                matrix[s * d + r] = v;
            }
        }
        let offset_scale = p.hetero_scale / (d as f64).sqrt();
        let offset = (0..d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                offset_scale * z
            })
            .collect();
        clients.push(QuadraticClient {
            matrix,
            offset,
            noise_sigma: p.sigma,
        });
    }
    FederatedProblem::quadratic(clients)
}

fn draw_eigenvalue(p: &QuadraticSuiteParams, rng: &mut Stream) -> f64 {
    let u: f64 = rng.random();
    if p.mu_min == p.l_target {
        p.l_target
    } else if p.mu_min > 0.0 {
        let (lo, hi) = (p.mu_min.ln(), p.l_target.ln());
        (lo + u * (hi - lo)).exp().clamp(p.mu_min, p.l_target)
    } else {
        u * p.l_target
    }
}

fn haar_orthogonal(d: usize, rng: &mut Stream) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z
    });
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for k in 0..d {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    q
}

/// Parameters of [`make_logistic_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticSuiteParams {
    pub n_clients: usize,
    pub dim: usize,
    pub rows_per_client: usize,
    /// Dirichlet concentration of per-client label proportions; small values
    /// give severe label skew.
    pub skew_alpha: f64,
    pub reg: f64,
    pub seed: u64,
}

/// Two-cluster Gaussian classification data split across clients with a
/// Dirichlet label skew.
///
/// Class `y` has feature mean `(2y - 1) u` for a random unit direction `u`
/// and isotropic noise of total variance 1. Client `i` gets
/// `round(p_i * rows)` positive rows where `p_i ~ Beta(alpha, alpha)`.
pub fn make_logistic_suite(p: &LogisticSuiteParams) -> Result<FederatedProblem> {
    if !(p.skew_alpha.is_finite() && p.skew_alpha > 0.0) {
        return Err(invalid("skew_alpha", "must be finite and > 0"));
    }
    if !(p.reg.is_finite() && p.reg >= 0.0) {
        return Err(invalid("reg", "must be finite and >= 0"));
    }
    if p.rows_per_client == 0 {
        return Err(invalid("rows_per_client", "must be at least 1"));
    }
    if p.dim == 0 {
        return Err(invalid("dim", "must be at least 1"));
    }
    if p.n_clients == 0 {
        return Err(invalid("clients", "must be at least 1"));
    }
    let d = p.dim;
    let mut rng = rng_stream(p.seed, 0, 0, Purpose::Problem);
    let mut u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = linalg::norm_sq(&u).sqrt();
    u.iter_mut().for_each(|v| *v /= norm);
    let gamma = Gamma::new(p.skew_alpha, 1.0).map_err(|e| invalid("skew_alpha", e.to_string()))?;
    let noise = 1.0 / (d as f64).sqrt();
    let mut clients = Vec::with_capacity(p.n_clients);
    for _ in 0..p.n_clients {
        let g1: f64 = gamma.sample(&mut rng);
        let g0: f64 = gamma.sample(&mut rng);
        let share = if g0 + g1 > 0.0 { g1 / (g0 + g1) } else { 0.5 };
        let positives = (share * p.rows_per_client as f64).round() as usize;
        let mut features = Vec::with_capacity(p.rows_per_client * d);
        let mut labels = Vec::with_capacity(p.rows_per_client);
        for j in 0..p.rows_per_client {
            let y = u8::from(j < positives);
            let sign = if y == 1 { 1.0 } else { -1.0 };
            for &uk in &u {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push(sign * uk + noise * z);
            }
            labels.push(y);
        }
        clients.push(LogisticClient {
            features,
            labels,
            reg: p.reg,
        });
    }
    FederatedProblem::logistic(clients, d)
}

// ---------------------------------------------------------------------------
// JSON document

pub const PROBLEM_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemDoc {
    problem_version: u32,
    dim: usize,
    smoothness: String,
    sigma: String,
    clients: ClientsDoc,
    minimizer: Option<Vec<String>>,
    f_star: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", content = "list", rename_all = "snake_case")]
enum ClientsDoc {
    Quadratic(Vec<QuadraticDoc>),
    Logistic(Vec<LogisticDoc>),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuadraticDoc {
    matrix: Vec<String>,
    offset: Vec<String>,
    noise_sigma: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LogisticDoc {
    features: Vec<String>,
    labels: Vec<u8>,
    reg: String,
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Format(format!("bad float literal {s:?}")))
}

impl FederatedProblem {
    /// Serializes to the versioned JSON document. Matrices are row-major and
    /// every float is written as a decimal string that parses back bit-exactly.
    pub fn to_json(&self) -> String {
        let clients = match &self.clients {
            Clients::Quadratic(cs) => ClientsDoc::Quadratic(
                cs.iter()
                    .map(|c| QuadraticDoc {
                        matrix: encode_floats(&c.matrix),
                        offset: encode_floats(&c.offset),
                        noise_sigma: c.noise_sigma.to_string(),
                    })
                    .collect(),
            ),
            Clients::Logistic(cs) => ClientsDoc::Logistic(
                cs.iter()
                    .map(|c| LogisticDoc {
                        features: encode_floats(&c.features),
                        labels: c.labels.clone(),
                        reg: c.reg.to_string(),
                    })
                    .collect(),
            ),
        };
        let doc = ProblemDoc {
            problem_version: PROBLEM_VERSION,
            dim: self.dim,
            smoothness: self.smoothness.to_string(),
            sigma: self.sigma.to_string(),
            clients,
            minimizer: self.minimizer.as_ref().map(|m| encode_floats(&m.x)),
            f_star: self.minimizer.as_ref().map(|m| m.value.to_string()),
        };
        serde_json::to_string_pretty(&doc).expect("problem document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ProblemDoc = serde_json::from_str(text)?;
        if doc.problem_version != PROBLEM_VERSION {
            return Err(Error::Format(format!(
                "unsupported problem_version {}",
                doc.problem_version
            )));
        }
        let mut problem = match doc.clients {
            ClientsDoc::Quadratic(list) => {
                let clients = list
                    .iter()
                    .map(|c| {
                        Ok(QuadraticClient {
                            matrix: decode_floats(&c.matrix)?,
                            offset: decode_floats(&c.offset)?,
                            noise_sigma: parse_f64(&c.noise_sigma)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                FederatedProblem::quadratic(clients)?
            }
            ClientsDoc::Logistic(list) => {
                let clients = list
                    .iter()
                    .map(|c| {
                        Ok(LogisticClient {
                            features: decode_floats(&c.features)?,
                            labels: c.labels.clone(),
                            reg: parse_f64(&c.reg)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                FederatedProblem::logistic(clients, doc.dim)?
            }
        };
        if problem.dim != doc.dim {
            return Err(Error::DimensionMismatch {
                expected: doc.dim,
                got: problem.dim,
            });
        }
        // Stored constants are authoritative so the document round-trips exactly.
        problem.smoothness = parse_f64(&doc.smoothness)?;
        problem.sigma = parse_f64(&doc.sigma)?;
        problem.minimizer = match (doc.minimizer, doc.f_star) {
            (Some(x), Some(v)) => Some(Optimum {
                x: decode_floats(&x)?,
                value: parse_f64(&v)?,
            }),
            (None, None) => None,
            _ => return Err(Error::Format("minimizer and f_star must appear together".into())),
        };
        Ok(problem)
    }
}
