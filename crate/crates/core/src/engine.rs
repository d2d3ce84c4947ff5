//! Round engine for the six algorithm variants.
//!
//! One round: pick a cohort, run `K` local steps on every cohort member from
//! the current global model, aggregate
//! `g^{r+1} = (1/(eta |S| K)) sum_i (x^r - x_i^{r,K})`, step
//! `x^{r+1} = x^r - gamma g^{r+1}` and, for the SCAFFOLD family, fold the new
//! client control variates into the server one.
//!
//! Local directions:
//!
//! | variant        | direction                                               |
//! |----------------|---------------------------------------------------------|
//! | `fedavg_m`     | `beta g_f + (1 - beta) g`                               |
//! | `fedavg_mvr`   | `g_f + (1 - beta)(g - g_a)`                             |
//! | `scaffold_m`   | `beta (g_f - c_i + c) + (1 - beta) g`                   |
//! | `scaffold_mvr` | `g_f - beta (c_i - c) + (1 - beta)(g - g_a)`            |
//!
//! where `g_f` is the stochastic gradient at the local iterate and `g_a` the
//! same sample evaluated at the previous global model. `fedavg` and
//! `scaffold` run the momentum code path with `beta = 1`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, decode_floats, encode_floats};
use crate::problems::FederatedProblem;
use crate::sampling::{sample_cohort, Cohort};
use crate::stream::{Purpose, Stream, Streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Fedavg,
    FedavgM,
    FedavgMvr,
    Scaffold,
    ScaffoldM,
    ScaffoldMvr,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Fedavg,
        Variant::FedavgM,
        Variant::FedavgMvr,
        Variant::Scaffold,
        Variant::ScaffoldM,
        Variant::ScaffoldMvr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Fedavg => "fedavg",
            Variant::FedavgM => "fedavg_m",
            Variant::FedavgMvr => "fedavg_mvr",
            Variant::Scaffold => "scaffold",
            Variant::ScaffoldM => "scaffold_m",
            Variant::ScaffoldMvr => "scaffold_mvr",
        }
    }

    /// Uses client/server control variates.
    pub fn is_scaffold(self) -> bool {
        matches!(
            self,
            Variant::Scaffold | Variant::ScaffoldM | Variant::ScaffoldMvr
        )
    }

    /// Uses the variance-reduced (two-point, same-sample) direction.
    pub fn is_vr(self) -> bool {
        matches!(self, Variant::FedavgMvr | Variant::ScaffoldMvr)
    }

    /// `fedavg` and `scaffold` are the `beta = 1` members of their momentum variants.
    pub fn pins_beta(self) -> bool {
        matches!(self, Variant::Fedavg | Variant::Scaffold)
    }

    /// The variant whose code path this one executes.
    pub fn momentum_form(self) -> Variant {
        match self {
            Variant::Fedavg => Variant::FedavgM,
            Variant::Scaffold => Variant::ScaffoldM,
            v => v,
        }
    }

    /// Needs B-batch gradient averages at `x0` during initialization.
    pub fn needs_init_batches(self) -> bool {
        self.is_scaffold() || self.is_vr()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| invalid("variant", format!("unknown variant {s:?}")))
    }
}

/// Algorithm hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlgoConfig {
    pub variant: Variant,
    pub beta: f64,
    /// Local learning rate.
    pub eta: f64,
    /// Global learning rate.
    pub gamma: f64,
    pub local_steps: usize,
    pub cohort_size: usize,
    pub init_batches: usize,
    /// Run the momentum update in its rescaled form (`g/beta`, `beta eta`, `beta gamma`).
    pub reparameterized: bool,
}

impl AlgoConfig {
    /// A direct-form config; `fedavg` and `scaffold` get `beta = 1` whatever
    /// value is passed.
    pub fn new(
        variant: Variant,
        beta: f64,
        eta: f64,
        gamma: f64,
        local_steps: usize,
        cohort_size: usize,
    ) -> Self {
        Self {
            variant,
            beta: if variant.pins_beta() { 1.0 } else { beta },
            eta,
            gamma,
            local_steps,
            cohort_size,
            init_batches: 1,
            reparameterized: false,
        }
    }

    pub fn with_init_batches(mut self, b: usize) -> Self {
        self.init_batches = b;
        self
    }

    /// Checks the config against a problem with `n_clients` clients.
    pub fn validate(&self, n_clients: usize) -> Result<()> {
        let v = self.variant;
        if !(self.beta.is_finite() && (0.0..=1.0).contains(&self.beta)) {
            return Err(invalid("beta", "must lie in [0, 1]"));
        }
        if v.pins_beta() && self.beta != 1.0 {
            return Err(invalid("beta", format!("{v} pins beta=1")));
        }
        if self.beta == 0.0 && !matches!(v, Variant::FedavgM | Variant::ScaffoldM) {
            return Err(invalid(
                "beta",
                format!("beta=0 is only allowed for fedavg_m/scaffold_m, not {v}"),
            ));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(invalid("eta", "must be finite and > 0"));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(invalid("gamma", "must be finite and > 0"));
        }
        if self.local_steps == 0 {
            return Err(invalid("local_steps", "must be at least 1"));
        }
        if self.cohort_size == 0 || self.cohort_size > n_clients {
            return Err(invalid(
                "cohort_size",
                format!("must be in [1, {n_clients}], got {}", self.cohort_size),
            ));
        }
        if v.needs_init_batches() && self.init_batches == 0 {
            return Err(invalid("init_batches", format!("{v} needs init_batches >= 1")));
        }
        if self.reparameterized {
            if !matches!(v, Variant::FedavgM | Variant::ScaffoldM) {
                return Err(invalid(
                    "reparameterized",
                    format!("only fedavg_m and scaffold_m have a reparameterized form, not {v}"),
                ));
            }
            if self.beta == 0.0 {
                return Err(invalid("reparameterized", "needs beta > 0"));
            }
        }
        Ok(())
    }

    /// Settings the convergence theory does not cover.
    pub fn outside_theory(&self, n_clients: usize) -> Vec<String> {
        let mut notes = Vec::new();
        if !self.variant.is_scaffold() && self.cohort_size < n_clients {
            notes.push(format!(
                "{} with partial participation (S={} < N={n_clients})",
                self.variant, self.cohort_size
            ));
        }
        if self.beta == 0.0 {
            notes.push("beta=0 (no gradient information enters the momentum)".to_string());
        }
        notes
    }

    /// Global step in direct-form units.
    pub fn direct_gamma(&self) -> f64 {
        if self.reparameterized {
            self.gamma / self.beta
        } else {
            self.gamma
        }
    }

    /// Local step in direct-form units.
    pub fn direct_eta(&self) -> f64 {
        if self.reparameterized {
            self.eta / self.beta
        } else {
            self.eta
        }
    }
}

/// Maps a `fedavg_m` / `scaffold_m` config to its equivalent in the other
/// form: direct to rescaled multiplies `eta` and `gamma` by `beta`, and the
/// reverse divides.
pub fn reparameterize(config: &AlgoConfig) -> Result<AlgoConfig> {
    if !matches!(config.variant, Variant::FedavgM | Variant::ScaffoldM) {
        return Err(Error::Unsupported {
            variant: config.variant.name(),
            reason: "reparameterization applies to fedavg_m and scaffold_m".into(),
        });
    }
    if !(config.beta > 0.0) {
        return Err(invalid("beta", "reparameterization needs beta > 0"));
    }
    let mut out = *config;
    if config.reparameterized {
        out.eta = config.eta / config.beta;
        out.gamma = config.gamma / config.beta;
    } else {
        out.eta = config.beta * config.eta;
        out.gamma = config.beta * config.gamma;
    }
    out.reparameterized = !config.reparameterized;
    Ok(out)
}

/// Server-side state at the start of a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    /// Global model `x^r`.
    pub x: Vec<f64>,
    /// Server estimate `g^r` (or `g^r / beta` in the rescaled form).
    pub g: Vec<f64>,
    /// Server control variate `c^r`; zero for the FedAvg family.
    pub c: Vec<f64>,
    /// Previous global model `x^{r-1}`, with `x^{-1} = x^0`.
    pub prev_x: Vec<f64>,
    pub round: usize,
}

/// Per-client control variates `c_i`; empty for the FedAvg family.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClientControls {
    pub c_i: Vec<Vec<f64>>,
}

impl ClientControls {
    pub fn mean(&self, dim: usize) -> Vec<f64> {
        linalg::mean_of(&self.c_i, dim)
    }
}

/// Measurements of one round, all from exact oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    pub cohort: Cohort,
    /// `f(x^r)`
    pub loss: f64,
    /// `f(x^{r+1})`
    pub loss_next: f64,
    /// `|grad f(x^r)|^2`
    pub grad_norm_sq: f64,
    /// `|grad f(x^r) - g^{r+1}|^2` with `g^{r+1}` in direct-form units.
    pub est_err: f64,
    /// `(1/(|S| K)) sum_{i in S} sum_k |x_i^{r,k} - x^r|^2`
    pub client_drift: f64,
    /// `(1/N) sum_i |c_i^r - grad f_i(x^{r-1})|^2`, SCAFFOLD family only.
    pub control_residual: Option<f64>,
    pub wall_ms: f64,
}

/// Inputs to a local direction; anchors and controls are only read by the
/// variants that use them.
#[derive(Debug, Clone, Copy)]
pub struct DirectionTerms<'a> {
    pub grad_fresh: &'a [f64],
    /// Same sample at the previous global model (VR variants).
    pub grad_anchor: Option<&'a [f64]>,
    pub g_server: &'a [f64],
    pub c_i: Option<&'a [f64]>,
    pub c: Option<&'a [f64]>,
}

fn required<'a>(v: Option<&'a [f64]>, what: &str, variant: Variant) -> &'a [f64] {
    v.unwrap_or_else(|| panic!("{variant} direction needs {what}"))
}

/// Local update direction of `variant` (direct form).
pub fn local_direction(variant: Variant, beta: f64, t: &DirectionTerms<'_>) -> Vec<f64> {
    let gf = t.grad_fresh;
    let gs = t.g_server;
    let mb = 1.0 - beta;
    match variant.momentum_form() {
        Variant::FedavgM => gf.iter().zip(gs).map(|(f, s)| beta * f + mb * s).collect(),
        Variant::FedavgMvr => {
            let ga = required(t.grad_anchor, "grad_anchor", variant);
            (0..gf.len()).map(|k| gf[k] + mb * (gs[k] - ga[k])).collect()
        }
        Variant::ScaffoldM => {
            let ci = required(t.c_i, "c_i", variant);
            let c = required(t.c, "c", variant);
            (0..gf.len())
                .map(|k| beta * (gf[k] - ci[k] + c[k]) + mb * gs[k])
                .collect()
        }
        Variant::ScaffoldMvr => {
            let ga = required(t.grad_anchor, "grad_anchor", variant);
            let ci = required(t.c_i, "c_i", variant);
            let c = required(t.c, "c", variant);
            (0..gf.len())
                .map(|k| gf[k] - beta * (ci[k] - c[k]) + mb * (gs[k] - ga[k]))
                .collect()
        }
        Variant::Fedavg | Variant::Scaffold => unreachable!(),
    }
}

/// Direction of the rescaled form, where `g_server` holds `g / beta`.
pub fn reparameterized_direction(variant: Variant, beta: f64, t: &DirectionTerms<'_>) -> Vec<f64> {
    let gf = t.grad_fresh;
    let gs = t.g_server;
    let mb = 1.0 - beta;
    match variant {
        Variant::FedavgM => gf.iter().zip(gs).map(|(f, s)| f + mb * s).collect(),
        Variant::ScaffoldM => {
            let ci = required(t.c_i, "c_i", variant);
            let c = required(t.c, "c", variant);
            (0..gf.len())
                .map(|k| (gf[k] - ci[k] + c[k]) + mb * gs[k])
                .collect()
        }
        other => panic!("{other} has no reparameterized form"),
    }
}

/// What a client sees at the start of its local loop.
#[derive(Debug, Clone, Copy)]
pub struct ClientInputs<'a> {
    pub round: usize,
    pub x_start: &'a [f64],
    pub prev_x: &'a [f64],
    pub g_server: &'a [f64],
    pub c_i: Option<&'a [f64]>,
    pub c: Option<&'a [f64]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientOutcome {
    pub x_end: Vec<f64>,
    /// Average of the `K` fresh stochastic gradients (SCAFFOLD family).
    pub new_c_i: Option<Vec<f64>>,
    /// `sum_{k<K} |x_i^{r,k} - x_start|^2`
    pub drift_sq_sum: f64,
    /// Local iterates `x_i^{r,0..=K}` when requested.
    pub local_path: Option<Vec<Vec<f64>>>,
}

/// Runs `K` local steps of one client.
pub fn run_client(
    problem: &FederatedProblem,
    config: &AlgoConfig,
    client: usize,
    inputs: &ClientInputs<'_>,
    rng: &mut Stream,
    record_path: bool,
) -> Result<ClientOutcome> {
    let variant = config.variant;
    let dim = problem.dim();
    let mut x = inputs.x_start.to_vec();
    let mut drift = 0.0;
    let mut fresh_sum = variant.is_scaffold().then(|| vec![0.0; dim]);
    let mut path = record_path.then(|| vec![x.clone()]);
    for k in 0..config.local_steps {
        drift += linalg::dist_sq(&x, inputs.x_start);
        let sample = problem.draw_sample(client, rng)?;
        let grad_fresh = problem.grad_at(client, &sample, &x)?;
        let grad_anchor = if variant.is_vr() {
            Some(problem.grad_at(client, &sample, inputs.prev_x)?)
        } else {
            None
        };
        let terms = DirectionTerms {
            grad_fresh: &grad_fresh,
            grad_anchor: grad_anchor.as_deref(),
            g_server: inputs.g_server,
            c_i: inputs.c_i,
            c: inputs.c,
        };
        let dir = if config.reparameterized {
            reparameterized_direction(variant, config.beta, &terms)
        } else {
            local_direction(variant, config.beta, &terms)
        };
        if let Some(acc) = fresh_sum.as_mut() {
            linalg::add_assign(acc, &grad_fresh);
        }
        linalg::axpy(&mut x, -config.eta, &dir);
        if !linalg::all_finite(&x) {
            return Err(Error::Divergence {
                round: inputs.round,
                client: Some(client),
                step: Some(k),
            });
        }
        if let Some(p) = path.as_mut() {
            p.push(x.clone());
        }
    }
    let new_c_i = fresh_sum.map(|s| {
        let k = config.local_steps as f64;
        s.into_iter().map(|v| v / k).collect()
    });
    Ok(ClientOutcome {
        x_end: x,
        new_c_i,
        drift_sq_sum: drift,
        local_path: path,
    })
}

/// Single-owner driver of the rounds of one run.
#[derive(Debug, Clone)]
pub struct Engine<'p> {
    problem: &'p FederatedProblem,
    config: AlgoConfig,
    streams: Streams,
    parallel: bool,
    aggregation_fault: bool,
}

impl<'p> Engine<'p> {
    pub fn new(problem: &'p FederatedProblem, config: AlgoConfig, master_seed: u64) -> Result<Self> {
        config.validate(problem.n_clients())?;
        for note in config.outside_theory(problem.n_clients()) {
            log::warn!("outside theory: {note}");
        }
        Ok(Self {
            problem,
            config,
            streams: Streams::new(master_seed),
            parallel: false,
            aggregation_fault: false,
        })
    }

    /// Fan cohort members out over the rayon pool. Results are identical to
    /// serial execution.
    pub fn parallel(mut self, yes: bool) -> Self {
        self.parallel = yes;
        self
    }

    /// Mutation hook for validation: aggregate with `1/(eta N K)` instead of
    /// `1/(eta |S| K)`.
    #[doc(hidden)]
    pub fn with_aggregation_fault(mut self) -> Self {
        self.aggregation_fault = true;
        self
    }

    pub fn config(&self) -> &AlgoConfig {
        &self.config
    }

    pub fn problem(&self) -> &FederatedProblem {
        self.problem
    }

    pub fn master_seed(&self) -> u64 {
        self.streams.master_seed
    }

    fn init_batch_mean(&self, client: usize, x0: &[f64]) -> Result<Vec<f64>> {
        let mut rng = self.streams.get(0, client, Purpose::Init);
        let b = self.config.init_batches;
        let mut acc = vec![0.0; self.problem.dim()];
        for _ in 0..b {
            let s = self.problem.draw_sample(client, &mut rng)?;
            linalg::add_assign(&mut acc, &self.problem.grad_at(client, &s, x0)?);
        }
        Ok(acc.into_iter().map(|v| v / b as f64).collect())
    }

    /// Initial server state and client controls at `x0`.
    pub fn init_state(&self, x0: &[f64]) -> Result<(ServerState, ClientControls)> {
        let d = self.problem.dim();
        if x0.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x0.len(),
            });
        }
        if !linalg::all_finite(x0) {
            return Err(Error::NonFinite { what: "x0" });
        }
        let n = self.problem.n_clients();
        let batches = if self.config.variant.needs_init_batches() {
            (0..n)
                .map(|i| self.init_batch_mean(i, x0))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let zero = vec![0.0; d];
        let (g, c, controls) = match self.config.variant.momentum_form() {
            Variant::FedavgM => (zero.clone(), zero, ClientControls::default()),
            Variant::FedavgMvr => (linalg::mean_of(&batches, d), zero, ClientControls::default()),
            Variant::ScaffoldM => {
                let c = linalg::mean_of(&batches, d);
                (zero, c, ClientControls { c_i: batches })
            }
            Variant::ScaffoldMvr => {
                let c = linalg::mean_of(&batches, d);
                (c.clone(), c, ClientControls { c_i: batches })
            }
            Variant::Fedavg | Variant::Scaffold => unreachable!(),
        };
        let state = ServerState {
            x: x0.to_vec(),
            g,
            c,
            prev_x: x0.to_vec(),
            round: 0,
        };
        Ok((state, controls))
    }

    /// Cohort for `round`: everyone under full participation, otherwise a
    /// uniform draw from the round's cohort stream.
    pub fn cohort_for(&self, round: usize) -> Result<Cohort> {
        let n = self.problem.n_clients();
        if self.config.cohort_size == n {
            return Ok(Cohort::full(n, round));
        }
        let mut rng = self.streams.get(round, 0, Purpose::Cohort);
        sample_cohort(n, self.config.cohort_size, round, &mut rng)
    }

    /// Executes one round in place and reports on it.
    pub fn run_round(&self, state: &mut ServerState, controls: &mut ClientControls) -> Result<RoundReport> {
        let cohort = self.cohort_for(state.round)?;
        self.run_round_on(state, controls, cohort)
    }

    /// [`Engine::run_round`] with an externally chosen cohort.
    pub fn run_round_on(
        &self,
        state: &mut ServerState,
        controls: &mut ClientControls,
        cohort: Cohort,
    ) -> Result<RoundReport> {
        let started = Instant::now();
        let problem = self.problem;
        let cfg = &self.config;
        let n = problem.n_clients();
        let d = problem.dim();
        let round = state.round;
        if cohort.is_empty() || cohort.len() > n || cohort.members.iter().any(|&i| i >= n) {
            return Err(invalid("cohort", format!("invalid cohort for {n} clients")));
        }
        let scaffold = cfg.variant.is_scaffold();
        if scaffold && controls.c_i.len() != n {
            return Err(invalid(
                "controls",
                "SCAFFOLD family needs one control per client",
            ));
        }

        let control_residual = scaffold.then(|| {
            (0..n).fold(0.0, |acc, i| {
                let g = problem.full_gradient_unchecked(i, &state.prev_x);
                acc + linalg::dist_sq(&controls.c_i[i], &g)
            }) / n as f64
        });

        let run_one = |&i: &usize| {
            let inputs = ClientInputs {
                round,
                x_start: &state.x,
                prev_x: &state.prev_x,
                g_server: &state.g,
                c_i: scaffold.then(|| controls.c_i[i].as_slice()),
                c: scaffold.then_some(state.c.as_slice()),
            };
            let mut rng = self.streams.get(round, i, Purpose::Local);
            run_client(problem, cfg, i, &inputs, &mut rng, false)
        };
        let results: Vec<Result<ClientOutcome>> = if self.parallel {
            cohort.members.par_iter().map(run_one).collect()
        } else {
            cohort.members.iter().map(run_one).collect()
        };
        let outcomes = results.into_iter().collect::<Result<Vec<_>>>()?;

        let mut displacement = vec![0.0; d];
        let mut drift = 0.0;
        for out in &outcomes {
            linalg::add_assign(&mut displacement, &linalg::sub(&state.x, &out.x_end));
            drift += out.drift_sq_sum;
        }
        let participants = if self.aggregation_fault { n } else { cohort.len() };
        let denom = cfg.eta * participants as f64 * cfg.local_steps as f64;
        let g_next: Vec<f64> = displacement.iter().map(|v| v / denom).collect();
        let mut x_next = state.x.clone();
        linalg::axpy(&mut x_next, -cfg.gamma, &g_next);
        if !linalg::all_finite(&x_next) || !linalg::all_finite(&g_next) {
            return Err(Error::Divergence {
                round,
                client: None,
                step: None,
            });
        }

        let grad = problem.global_gradient_unchecked(&state.x);
        let g_direct = if cfg.reparameterized {
            linalg::scale(&g_next, cfg.beta)
        } else {
            g_next.clone()
        };
        let loss = problem.global_loss_unchecked(&state.x);
        let loss_next = problem.global_loss_unchecked(&x_next);

        if scaffold {
            let mut delta = vec![0.0; d];
            for (&i, out) in cohort.members.iter().zip(&outcomes) {
                let new_ci = out.new_c_i.as_ref().expect("scaffold clients return controls");
                linalg::add_assign(&mut delta, &linalg::sub(new_ci, &controls.c_i[i]));
            }
            for (ck, dk) in state.c.iter_mut().zip(&delta) {
                *ck += dk / n as f64;
            }
            for (&i, out) in cohort.members.iter().zip(outcomes) {
                controls.c_i[i] = out.new_c_i.expect("scaffold clients return controls");
            }
        }

        let report = RoundReport {
            round,
            loss,
            loss_next,
            grad_norm_sq: linalg::norm_sq(&grad),
            est_err: linalg::dist_sq(&grad, &g_direct),
            client_drift: drift / (cohort.len() * cfg.local_steps) as f64,
            control_residual,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            cohort,
        };
        state.prev_x = std::mem::replace(&mut state.x, x_next);
        state.g = g_next;
        state.round += 1;
        Ok(report)
    }

    /// Runs rounds until `state.round == total_rounds`, handing every report
    /// to `sink` as it is produced.
    pub fn continue_run(
        &self,
        state: &mut ServerState,
        controls: &mut ClientControls,
        total_rounds: usize,
        sink: &mut dyn FnMut(&RoundReport),
    ) -> Result<Vec<RoundReport>> {
        let mut reports = Vec::with_capacity(total_rounds.saturating_sub(state.round));
        while state.round < total_rounds {
            let report = self.run_round(state, controls)?;
            sink(&report);
            reports.push(report);
        }
        Ok(reports)
    }

    /// Initializes at `x0` and runs `rounds` rounds.
    pub fn run_experiment(
        &self,
        x0: &[f64],
        rounds: usize,
        sink: &mut dyn FnMut(&RoundReport),
    ) -> Result<Vec<RoundReport>> {
        if rounds == 0 {
            return Err(invalid("rounds", "must be at least 1"));
        }
        let (mut state, mut controls) = self.init_state(x0)?;
        self.continue_run(&mut state, &mut controls, rounds, sink)
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

pub const CHECKPOINT_VERSION: u32 = 1;

/// Engine state at a round boundary. Streams are derived from the master seed
/// and the round index, so the seed is the whole random state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: ServerState,
    pub controls: ClientControls,
    pub master_seed: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    version: u32,
    round: usize,
    x: Vec<String>,
    g: Vec<String>,
    c: Vec<String>,
    c_i: Vec<Vec<String>>,
    prev_x: Vec<String>,
    rng_state: RngStateDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    run: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct RngStateDoc {
    kind: String,
    master_seed: String,
}

impl Checkpoint {
    /// JSON document; `run` carries whatever the caller needs to rebuild the
    /// problem and config.
    pub fn to_json(&self, run: Option<serde_json::Value>) -> String {
        let s = &self.state;
        let doc = CheckpointDoc {
            version: CHECKPOINT_VERSION,
            round: s.round,
            x: encode_floats(&s.x),
            g: encode_floats(&s.g),
            c: encode_floats(&s.c),
            c_i: self.controls.c_i.iter().map(|v| encode_floats(v)).collect(),
            prev_x: encode_floats(&s.prev_x),
            rng_state: RngStateDoc {
                kind: "chacha8-counter".into(),
                master_seed: self.master_seed.to_string(),
            },
            run,
        };
        serde_json::to_string_pretty(&doc).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<(Self, Option<serde_json::Value>)> {
        let doc: CheckpointDoc = serde_json::from_str(text)?;
        if doc.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                doc.version
            )));
        }
        let master_seed = doc
            .rng_state
            .master_seed
            .parse()
            .map_err(|_| Error::Format("bad master_seed".into()))?;
        let state = ServerState {
            x: decode_floats(&doc.x)?,
            g: decode_floats(&doc.g)?,
            c: decode_floats(&doc.c)?,
            prev_x: decode_floats(&doc.prev_x)?,
            round: doc.round,
        };
        let controls = ClientControls {
            c_i: doc
                .c_i
                .iter()
                .map(|v| decode_floats(v))
                .collect::<Result<Vec<_>>>()?,
        };
        Ok((
            Self {
                state,
                controls,
                master_seed,
            },
            doc.run,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_quadratic_suite, QuadraticClient, QuadraticSuiteParams};
    use crate::sampling::subset_mean_second_moment;
    use crate::schedules::{schedule_fedavg_m, ScheduleInput};

    fn identity_pair() -> FederatedProblem {
        let eye = vec![1.0, 0.0, 0.0, 1.0];
        FederatedProblem::quadratic(vec![
            QuadraticClient {
                matrix: eye.clone(),
                offset: vec![-1.0, 0.0],
                noise_sigma: 0.0,
            },
            QuadraticClient {
                matrix: eye,
                offset: vec![0.0, -2.0],
                noise_sigma: 0.0,
            },
        ])
        .unwrap()
    }

    fn suite(n: usize, sigma: f64, seed: u64) -> FederatedProblem {
        make_quadratic_suite(&QuadraticSuiteParams {
            n_clients: n,
            dim: 6,
            hetero_scale: 1.0,
            l_target: 1.0,
            mu_min: 0.1,
            sigma,
            seed,
        })
        .unwrap()
    }

    fn run(
        problem: &FederatedProblem,
        cfg: AlgoConfig,
        seed: u64,
        rounds: usize,
    ) -> (ServerState, ClientControls, Vec<RoundReport>) {
        let engine = Engine::new(problem, cfg, seed).unwrap();
        let (mut state, mut controls) = engine.init_state(&vec![0.5; problem.dim()]).unwrap();
        let reports = engine
            .continue_run(&mut state, &mut controls, rounds, &mut |_| {})
            .unwrap();
        (state, controls, reports)
    }

    fn strip_time(reports: &[RoundReport]) -> Vec<RoundReport> {
        reports
            .iter()
            .cloned()
            .map(|mut r| {
                r.wall_ms = 0.0;
                r
            })
            .collect()
    }

    fn terms<'a>(
        gf: &'a [f64],
        ga: Option<&'a [f64]>,
        gs: &'a [f64],
        ci: Option<&'a [f64]>,
        c: Option<&'a [f64]>,
    ) -> DirectionTerms<'a> {
        DirectionTerms {
            grad_fresh: gf,
            grad_anchor: ga,
            g_server: gs,
            c_i: ci,
            c,
        }
    }

    #[test]
    fn direction_examples() {
        let t = terms(&[3.0, -1.0], None, &[7.0, 7.0], None, None);
        assert_eq!(local_direction(Variant::FedavgM, 1.0, &t), vec![3.0, -1.0]);
        let t = terms(&[2.0, 0.0], None, &[0.0, 2.0], None, None);
        assert_eq!(local_direction(Variant::FedavgM, 0.5, &t), vec![1.0, 1.0]);
        let t = terms(&[1.0, 1.0], Some(&[1.0, 0.0]), &[0.5, 0.0], None, None);
        assert_eq!(local_direction(Variant::FedavgMvr, 0.5, &t), vec![0.75, 1.0]);
        let t = terms(
            &[1.0, 2.0],
            None,
            &[9.0, 9.0],
            Some(&[0.5, 0.25]),
            Some(&[-1.0, 3.0]),
        );
        assert_eq!(local_direction(Variant::ScaffoldM, 1.0, &t), vec![-0.5, 4.75]);
        assert_eq!(local_direction(Variant::Scaffold, 1.0, &t), vec![-0.5, 4.75]);
    }

    #[test]
    fn scaffold_mvr_direction() {
        let t = terms(
            &[1.0, 0.0],
            Some(&[0.0, 1.0]),
            &[2.0, 2.0],
            Some(&[1.0, 1.0]),
            Some(&[0.0, 0.0]),
        );
        // g_f - beta (c_i - c) + (1 - beta)(g - g_a) at beta = 0.5
        assert_eq!(local_direction(Variant::ScaffoldMvr, 0.5, &t), vec![1.5, 0.0]);
    }

    #[test]
    fn reparameterized_direction_is_rescaled() {
        let beta = 0.25;
        let g = [0.4, -0.8];
        let g_hat: Vec<f64> = g.iter().map(|v| v / beta).collect();
        let t = terms(&[1.0, 2.0], None, &g, Some(&[0.5, 0.5]), Some(&[0.1, 0.2]));
        let t_hat = DirectionTerms {
            g_server: &g_hat,
            ..t
        };
        for v in [Variant::FedavgM, Variant::ScaffoldM] {
            let direct = local_direction(v, beta, &t);
            let hat = reparameterized_direction(v, beta, &t_hat);
            for (a, b) in direct.iter().zip(&hat) {
                assert!((a - beta * b).abs() < 1e-15);
            }
        }
    }

    fn inputs<'a>(
        x: &'a [f64],
        g: &'a [f64],
        ci: Option<&'a [f64]>,
        c: Option<&'a [f64]>,
    ) -> ClientInputs<'a> {
        ClientInputs {
            round: 0,
            x_start: x,
            prev_x: x,
            g_server: g,
            c_i: ci,
            c,
        }
    }

    #[test]
    fn single_exact_step() {
        let p = identity_pair();
        let cfg = AlgoConfig::new(Variant::FedavgM, 1.0, 0.1, 0.04, 1, 2);
        let x = [0.3, 0.4];
        let mut rng = Streams::new(0).get(0, 0, Purpose::Local);
        let out = run_client(&p, &cfg, 0, &inputs(&x, &[0.0, 0.0], None, None), &mut rng, true).unwrap();
        let grad = p.full_gradient(0, &x).unwrap();
        assert_eq!(out.x_end, vec![x[0] - 0.1 * grad[0], x[1] - 0.1 * grad[1]]);
        assert_eq!(out.drift_sq_sum, 0.0);
        assert_eq!(out.local_path.unwrap().len(), 2);
        assert!(out.new_c_i.is_none());
    }

    #[test]
    fn scaffold_control_is_gradient_for_one_step() {
        let p = identity_pair();
        let x = [0.3, 0.4];
        for v in [Variant::Scaffold, Variant::ScaffoldM, Variant::ScaffoldMvr] {
            let cfg = AlgoConfig::new(v, 0.5, 0.1, 0.04, 1, 2);
            let mut rng = Streams::new(0).get(0, 1, Purpose::Local);
            let zero = [0.0, 0.0];
            let out = run_client(
                &p,
                &cfg,
                1,
                &inputs(&x, &zero, Some(&zero), Some(&zero)),
                &mut rng,
                false,
            )
            .unwrap();
            assert_eq!(out.new_c_i.unwrap(), p.full_gradient(1, &x).unwrap());
        }
    }

    #[test]
    fn zero_beta_follows_server_direction() {
        let p = suite(3, 1.0, 4);
        let cfg = AlgoConfig::new(Variant::FedavgM, 0.0, 0.1, 0.04, 2, 3);
        let x = vec![0.2; 6];
        let g = vec![0.5, -1.0, 0.0, 2.0, 1.0, -0.5];
        let mut ends = Vec::new();
        for i in 0..3 {
            let mut rng = Streams::new(9).get(0, i, Purpose::Local);
            let out = run_client(&p, &cfg, i, &inputs(&x, &g, None, None), &mut rng, false).unwrap();
            for k in 0..6 {
                assert!((out.x_end[k] - (x[k] - 2.0 * 0.1 * g[k])).abs() < 1e-15);
            }
            ends.push(out);
        }
        assert!(ends.windows(2).all(|w| w[0] == w[1]));
        // Drift of the shared path: |eta g|^2 from the second step only.
        assert!((ends[0].drift_sq_sum - 0.01 * linalg::norm_sq(&g)).abs() < 1e-14);
    }

    #[test]
    fn aggregation_example() {
        let p = identity_pair();
        let cfg = AlgoConfig::new(Variant::Fedavg, 1.0, 0.1, 0.5, 1, 2);
        let engine = Engine::new(&p, cfg, 0).unwrap();
        let (mut state, mut controls) = engine.init_state(&[0.0, 0.0]).unwrap();
        engine.run_round(&mut state, &mut controls).unwrap();
        assert!((state.g[0] - 0.5).abs() < 1e-15 && (state.g[1] - 1.0).abs() < 1e-15);
        assert!((state.x[0] + 0.25).abs() < 1e-15 && (state.x[1] + 0.5).abs() < 1e-15);
        assert_eq!(state.prev_x, vec![0.0, 0.0]);
    }

    #[test]
    fn beta_one_reduces_bit_for_bit() {
        let p = suite(10, 0.5, 1);
        for (plain, momentum) in [
            (Variant::Fedavg, Variant::FedavgM),
            (Variant::Scaffold, Variant::ScaffoldM),
        ] {
            let a = run(&p, AlgoConfig::new(plain, 1.0, 0.05, 0.04, 4, 10), 7, 30);
            let b = run(&p, AlgoConfig::new(momentum, 1.0, 0.05, 0.04, 4, 10), 7, 30);
            assert_eq!(a.0, b.0);
            assert_eq!(a.1, b.1);
            assert_eq!(strip_time(&a.2), strip_time(&b.2));
        }
    }

    #[test]
    fn control_mean_identity() {
        let p = suite(8, 0.7, 2);
        for v in [Variant::ScaffoldM, Variant::ScaffoldMvr] {
            let cfg = AlgoConfig::new(v, 0.3, 0.05, 0.04, 3, 3).with_init_batches(2);
            let engine = Engine::new(&p, cfg, 5).unwrap();
            let (mut state, mut controls) = engine.init_state(&[0.0; 6]).unwrap();
            for _ in 0..60 {
                let cohort = engine.cohort_for(state.round).unwrap();
                let before = controls.clone();
                let report = engine.run_round(&mut state, &mut controls).unwrap();
                assert_eq!(report.cohort, cohort);
                for i in 0..8 {
                    if !cohort.contains(i) {
                        assert_eq!(before.c_i[i], controls.c_i[i]);
                    }
                }
                let scale = 1.0
                    + controls
                        .c_i
                        .iter()
                        .map(|c| linalg::norm_sq(c).sqrt())
                        .fold(0.0, f64::max);
                let gap = linalg::dist_sq(&state.c, &controls.mean(6)).sqrt();
                assert!(gap <= 1e-12 * scale, "{v}: gap {gap}");
                assert!(report.control_residual.unwrap() >= 0.0);
            }
        }
    }

    #[test]
    fn exact_full_batch_round() {
        let p = suite(5, 0.0, 3);
        let (_, _, reports) = run(&p, AlgoConfig::new(Variant::FedavgM, 1.0, 0.1, 0.04, 1, 5), 0, 10);
        for r in &reports {
            assert!(r.est_err <= 1e-20 * (1.0 + r.grad_norm_sq), "{}", r.est_err);
        }
    }

    #[test]
    fn vr_telescoping() {
        let p = suite(5, 0.0, 3);
        let cfg = AlgoConfig::new(Variant::FedavgMvr, 0.3, 0.1, 0.04, 1, 5).with_init_batches(3);
        let (_, _, reports) = run(&p, cfg, 0, 50);
        for r in &reports {
            assert!(r.est_err <= 1e-20, "round {}: {}", r.round, r.est_err);
        }
    }

    #[test]
    fn noiseless_init_matches_gradient() {
        let p = suite(4, 0.0, 3);
        let x0 = vec![0.5; 6];
        let grad = p.global_gradient(&x0).unwrap();
        for v in [Variant::FedavgMvr, Variant::ScaffoldM, Variant::ScaffoldMvr] {
            let cfg = AlgoConfig::new(v, 0.5, 0.1, 0.04, 1, 4).with_init_batches(3);
            let (state, controls) = Engine::new(&p, cfg, 0).unwrap().init_state(&x0).unwrap();
            let est = if v == Variant::ScaffoldM {
                &state.c
            } else {
                &state.g
            };
            assert!(linalg::dist_sq(est, &grad) <= 1e-28);
            if v.is_scaffold() {
                assert!(linalg::dist_sq(&state.c, &controls.mean(6)) <= 1e-24);
            }
            if v == Variant::ScaffoldM {
                assert!(state.g.iter().all(|&g| g == 0.0));
            }
        }
        let (state, controls) = Engine::new(&p, AlgoConfig::new(Variant::FedavgM, 0.5, 0.1, 0.04, 1, 4), 0)
            .unwrap()
            .init_state(&x0)
            .unwrap();
        assert!(state.g.iter().all(|&g| g == 0.0));
        assert!(controls.c_i.is_empty());
    }

    #[test]
    fn init_error_matches_batch_variance() {
        // E|g0 - grad f(x0)|^2 = sigma^2 / (N B)
        let (n, b, sigma) = (4, 10_000, 1.0);
        let p = make_quadratic_suite(&QuadraticSuiteParams {
            n_clients: n,
            dim: 2,
            hetero_scale: 1.0,
            l_target: 1.0,
            mu_min: 0.5,
            sigma,
            seed: 1,
        })
        .unwrap();
        let x0 = [0.3, -0.2];
        let grad = p.global_gradient(&x0).unwrap();
        let errs: Vec<f64> = (0..100)
            .map(|seed| {
                let cfg = AlgoConfig::new(Variant::FedavgMvr, 0.5, 0.1, 0.04, 1, n).with_init_batches(b);
                let (state, _) = Engine::new(&p, cfg, seed).unwrap().init_state(&x0).unwrap();
                linalg::dist_sq(&state.g, &grad)
            })
            .collect();
        let m = crate::diagnostics::mean(&errs);
        let se = crate::diagnostics::standard_error(&errs);
        let target = sigma * sigma / (n * b) as f64;
        assert!(
            (m - target).abs() <= 3.0 * se,
            "mean {m}, target {target}, se {se}"
        );
    }

    #[test]
    fn reparameterize_examples() {
        let cfg = AlgoConfig::new(Variant::FedavgM, 1.0, 0.3, 0.02, 2, 2);
        let hat = reparameterize(&cfg).unwrap();
        assert_eq!((hat.eta, hat.gamma), (cfg.eta, cfg.gamma));
        assert!(hat.reparameterized);
        let cfg = AlgoConfig::new(Variant::ScaffoldM, 0.1, 1.0, 1.0, 2, 2);
        let hat = reparameterize(&cfg).unwrap();
        assert!((hat.eta - 0.1).abs() < 1e-16 && (hat.gamma - 0.1).abs() < 1e-16);
        let back = reparameterize(&hat).unwrap();
        assert!(!back.reparameterized);
        assert!((back.eta - 1.0).abs() < 1e-15);
        assert!(reparameterize(&AlgoConfig::new(Variant::FedavgMvr, 0.5, 0.1, 0.1, 1, 1)).is_err());
    }

    #[test]
    fn reparameterized_trajectory_matches() {
        let p = suite(6, 0.5, 8);
        for v in [Variant::FedavgM, Variant::ScaffoldM] {
            let cfg = AlgoConfig::new(v, 0.2, 0.05, 0.04, 4, 4).with_init_batches(2);
            let direct = Engine::new(&p, cfg, 3).unwrap();
            let hat = Engine::new(&p, reparameterize(&cfg).unwrap(), 3).unwrap();
            let (mut s1, mut c1) = direct.init_state(&[1.0; 6]).unwrap();
            let (mut s2, mut c2) = hat.init_state(&[1.0; 6]).unwrap();
            for _ in 0..50 {
                direct.run_round(&mut s1, &mut c1).unwrap();
                let r = hat.run_round(&mut s2, &mut c2).unwrap();
                let rel = linalg::dist_sq(&s1.x, &s2.x).sqrt() / linalg::norm_sq(&s1.x).sqrt().max(1e-300);
                assert!(rel <= 1e-9, "{v} round {}: {rel}", r.round);
            }
        }
    }

    #[test]
    fn parallel_matches_serial() {
        let p = suite(9, 0.8, 6);
        for v in Variant::ALL {
            let cfg = AlgoConfig::new(v, 0.4, 0.05, 0.03, 3, 5).with_init_batches(2);
            let serial = Engine::new(&p, cfg, 11).unwrap();
            let par = Engine::new(&p, cfg, 11).unwrap().parallel(true);
            let x0 = vec![0.0; 6];
            let a = strip_time(&serial.run_experiment(&x0, 15, &mut |_| {}).unwrap());
            let b = strip_time(&par.run_experiment(&x0, 15, &mut |_| {}).unwrap());
            assert_eq!(a, b, "{v}");
        }
    }

    #[test]
    fn momentum_recoverable_from_models() {
        let p = suite(4, 0.5, 2);
        let cfg = AlgoConfig::new(Variant::FedavgM, 0.3, 0.05, 0.04, 3, 4);
        let engine = Engine::new(&p, cfg, 1).unwrap();
        let (mut state, mut controls) = engine.init_state(&[1.0; 6]).unwrap();
        for _ in 0..20 {
            let x_prev = state.x.clone();
            engine.run_round(&mut state, &mut controls).unwrap();
            for ((a, b), g) in x_prev.iter().zip(&state.x).zip(&state.g) {
                let recovered = (a - b) / cfg.gamma;
                assert!((recovered - g).abs() <= 1e-10 * (1.0 + g.abs()));
            }
        }
    }

    #[test]
    fn scaffold_fixed_point() {
        let p = suite(5, 0.0, 3);
        let x_star = p.minimizer().unwrap().x.clone();
        let cfg = AlgoConfig::new(Variant::ScaffoldM, 0.4, 0.1, 0.04, 1, 5);
        let engine = Engine::new(&p, cfg, 0).unwrap();
        let controls_at = |x: &[f64]| ClientControls {
            c_i: (0..5).map(|i| p.full_gradient(i, x).unwrap()).collect(),
        };
        let mut controls = controls_at(&x_star);
        let mut state = ServerState {
            x: x_star.clone(),
            g: vec![0.0; 6],
            c: controls.mean(6),
            prev_x: x_star.clone(),
            round: 0,
        };
        for _ in 0..5 {
            engine.run_round(&mut state, &mut controls).unwrap();
        }
        assert!(linalg::dist_sq(&state.x, &x_star) <= 1e-24);
    }

    #[test]
    fn cohort_unbiasedness_detects_scale_fault() {
        // With sigma = 0, K = 1 and beta = 1, g^{r+1} over a uniformly drawn
        // cohort has mean grad f(x^r) and the closed-form second moment.
        let p = suite(5, 0.0, 4);
        let x = vec![0.3; 6];
        let cfg = AlgoConfig::new(Variant::Scaffold, 1.0, 0.1, 0.04, 1, 2);
        let grads: Vec<Vec<f64>> = (0..5).map(|i| p.full_gradient(i, &x).unwrap()).collect();
        let zero_controls = ClientControls {
            c_i: vec![vec![0.0; 6]; 5],
        };
        let cohort_stats = |faulty: bool| {
            let mut engine = Engine::new(&p, cfg, 0).unwrap();
            if faulty {
                engine = engine.with_aggregation_fault();
            }
            let mut mean_g = vec![0.0; 6];
            let mut second = 0.0;
            let mut count = 0.0;
            for a in 0..5 {
                for b in a + 1..5 {
                    let mut state = ServerState {
                        x: x.clone(),
                        g: vec![0.0; 6],
                        c: vec![0.0; 6],
                        prev_x: x.clone(),
                        round: 0,
                    };
                    let mut controls = zero_controls.clone();
                    let cohort = Cohort {
                        members: vec![a, b],
                        round: 0,
                    };
                    engine.run_round_on(&mut state, &mut controls, cohort).unwrap();
                    linalg::add_assign(&mut mean_g, &state.g);
                    second += linalg::norm_sq(&state.g);
                    count += 1.0;
                }
            }
            (linalg::scale(&mean_g, 1.0 / count), second / count)
        };
        let grad = p.global_gradient(&x).unwrap();
        let expected_second = subset_mean_second_moment(&grads, 2).unwrap();
        let (m, s) = cohort_stats(false);
        assert!(linalg::dist_sq(&m, &grad) <= 1e-24);
        assert!((s - expected_second).abs() <= 1e-12 * expected_second);
        let (m, _) = cohort_stats(true);
        assert!(linalg::dist_sq(&m, &grad) > 1e-6);
    }

    #[test]
    fn single_round_experiment_matches_run_round() {
        let p = suite(4, 0.5, 2);
        let cfg = AlgoConfig::new(Variant::ScaffoldMvr, 0.5, 0.05, 0.04, 2, 2).with_init_batches(2);
        let engine = Engine::new(&p, cfg, 4).unwrap();
        let x0 = vec![0.1; 6];
        let exp = strip_time(&engine.run_experiment(&x0, 1, &mut |_| {}).unwrap());
        let (mut s, mut c) = engine.init_state(&x0).unwrap();
        let one = strip_time(&[engine.run_round(&mut s, &mut c).unwrap()]);
        assert_eq!(exp, one);
        assert!(engine.run_experiment(&x0, 0, &mut |_| {}).is_err());
    }

    #[test]
    fn checkpoint_resume_is_bit_identical() {
        let p = suite(6, 0.5, 2);
        let cfg = AlgoConfig::new(Variant::ScaffoldMvr, 0.3, 0.05, 0.04, 3, 4).with_init_batches(2);
        let engine = Engine::new(&p, cfg, 21).unwrap();
        let x0 = vec![0.2; 6];
        let full = strip_time(&engine.run_experiment(&x0, 20, &mut |_| {}).unwrap());

        let (mut s, mut c) = engine.init_state(&x0).unwrap();
        let mut first = engine.continue_run(&mut s, &mut c, 8, &mut |_| {}).unwrap();
        let text = Checkpoint {
            state: s,
            controls: c,
            master_seed: 21,
        }
        .to_json(Some(serde_json::json!({"note": "x"})));
        let (ck, run) = Checkpoint::from_json(&text).unwrap();
        assert_eq!(run.unwrap()["note"], "x");
        let resumed = Engine::new(&p, cfg, ck.master_seed).unwrap();
        let (mut s, mut c) = (ck.state, ck.controls);
        first.extend(resumed.continue_run(&mut s, &mut c, 20, &mut |_| {}).unwrap());
        assert_eq!(strip_time(&first), full);
        assert!(Checkpoint::from_json("{}").is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let p = suite(4, 0.0, 2);
        let cfg = AlgoConfig::new(Variant::Fedavg, 1.0, 50.0, 1.0, 16, 4);
        let engine = Engine::new(&p, cfg, 0).unwrap();
        match engine.run_experiment(&[1.0; 6], 200, &mut |_| {}) {
            Err(Error::Divergence { client, step, .. }) => {
                assert!(client.is_some() && step.is_some());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = AlgoConfig::new(Variant::Fedavg, 1.0, 0.1, 0.1, 1, 2);
        cfg.beta = 0.5;
        let msg = cfg.validate(2).unwrap_err().to_string();
        assert!(msg.contains("fedavg pins beta=1"), "{msg}");
        assert!(AlgoConfig::new(Variant::FedavgM, 0.5, 0.1, 0.1, 0, 2)
            .validate(2)
            .is_err());
        assert!(AlgoConfig::new(Variant::FedavgM, 0.5, 0.1, 0.1, 1, 3)
            .validate(2)
            .is_err());
        assert!(AlgoConfig::new(Variant::FedavgMvr, 0.0, 0.1, 0.1, 1, 2)
            .validate(2)
            .is_err());
        assert!(AlgoConfig::new(Variant::FedavgM, 0.0, 0.1, 0.1, 1, 2)
            .validate(2)
            .is_ok());
        assert!(AlgoConfig::new(Variant::ScaffoldM, 0.5, 0.1, 0.1, 1, 2)
            .with_init_batches(0)
            .validate(2)
            .is_err());
        let mut r = AlgoConfig::new(Variant::ScaffoldMvr, 0.5, 0.1, 0.1, 1, 2);
        r.reparameterized = true;
        assert!(r.validate(2).is_err());
        assert_eq!("scaffold_mvr".parse::<Variant>().unwrap(), Variant::ScaffoldMvr);
        assert!("sgd".parse::<Variant>().is_err());
    }

    #[test]
    fn min_gradient_keeps_improving_under_schedule() {
        let p = suite(8, 0.0, 5);
        let x0 = vec![0.0; 6];
        let ic = p.initial_constants(&x0, None).unwrap();
        for r in [50usize, 100] {
            let sched = schedule_fedavg_m(&ScheduleInput {
                n_clients: 8,
                local_steps: 8,
                rounds: r,
                cohort_size: 8,
                smoothness: p.smoothness(),
                delta: ic.delta,
                sigma: 0.0,
                g0_energy: ic.g0_energy,
                momentum_cap: 0.9,
                safety: 0.1,
                alt_branch: false,
            })
            .unwrap();
            let cfg = AlgoConfig::new(Variant::FedavgM, sched.beta, sched.eta, sched.gamma, 8, 8);
            let engine = Engine::new(&p, cfg, 0).unwrap();
            let reports = engine.run_experiment(&x0, 2 * r, &mut |_| {}).unwrap();
            let min_first = reports[..r]
                .iter()
                .map(|x| x.grad_norm_sq)
                .fold(f64::INFINITY, f64::min);
            let min_all = reports
                .iter()
                .map(|x| x.grad_norm_sq)
                .fold(f64::INFINITY, f64::min);
            assert!(min_all <= 0.75 * min_first, "R={r}: {min_all} vs {min_first}");
        }
    }

    #[test]
    fn reports_are_finite_and_nonnegative() {
        let p = suite(6, 1.0, 7);
        for v in Variant::ALL {
            let cfg = AlgoConfig::new(v, 0.5, 0.05, 0.04, 3, 3).with_init_batches(2);
            let (_, _, reports) = run(&p, cfg, 2, 20);
            for r in reports {
                for val in [r.loss, r.grad_norm_sq, r.est_err, r.client_drift] {
                    assert!(val.is_finite() && val >= 0.0);
                }
                assert_eq!(r.control_residual.is_some(), v.is_scaffold());
            }
        }
    }
}
