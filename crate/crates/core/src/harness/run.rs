//! `run`, `sweep` and `resume`: build the problem, resolve the schedule,
//! drive replicas and write CSV and summary files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::diagnostics::{self, descent_check_report, TrajectoryStats};
use crate::engine::{
    reparameterize, AlgoConfig, Checkpoint, ClientControls, Engine, RoundReport, ServerState,
};
use crate::error::{Error, Result};
use crate::linalg::{self, format_float};
use crate::problems::{
    make_logistic_suite, make_quadratic_suite, FederatedProblem, InitialConstants, LogisticSuiteParams,
    ProblemKind, QuadraticSuiteParams,
};
use crate::sampling::Cohort;
use crate::schedules::{schedule_for, Schedule, ScheduleInput, GAMMA_L_MAX};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DIVERGENCE: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Frozen CSV schema.
pub const CSV_HEADER: [&str; 7] = [
    "round",
    "loss",
    "grad_norm_sq",
    "est_err",
    "client_drift",
    "control_residual",
    "wall_ms",
];

/// Exit code for an error: 2 for divergence, 3 for I/O, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Run cohort members and replicas on the rayon pool.
    pub parallel: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { parallel: true }
    }
}

/// Problem described by the config; generated from `run.seed`.
pub fn build_problem(cfg: &RunConfig) -> Result<FederatedProblem> {
    let p = &cfg.problem;
    match p.kind {
        ProblemKind::Quadratic => make_quadratic_suite(&QuadraticSuiteParams {
            n_clients: p.clients,
            dim: p.dim,
            hetero_scale: p.hetero,
            l_target: p.l_target,
            mu_min: p.mu_min,
            sigma: p.sigma,
            seed: cfg.run.seed,
        }),
        ProblemKind::Logistic => make_logistic_suite(&LogisticSuiteParams {
            n_clients: p.clients,
            dim: p.dim,
            rows_per_client: p.rows_per_client,
            skew_alpha: p.skew_alpha,
            reg: p.reg,
            seed: cfg.run.seed,
        }),
    }
}

/// Hyperparameters after filling `auto` fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub algo: AlgoConfig,
    pub schedule: Option<Schedule>,
    pub constants: Option<InitialConstants>,
    pub x0: Vec<f64>,
}

/// Fills `auto` fields from the variant's schedule at `x0 = 0`.
///
/// Explicit `eta` and `gamma` are taken in the form selected by
/// `algo.reparameterized`; scheduled ones are direct-form and get rescaled.
pub fn resolve(cfg: &RunConfig, problem: &FederatedProblem) -> Result<Resolved> {
    let a = &cfg.algo;
    let x0 = vec![0.0; problem.dim()];
    let any_auto = a.beta.is_auto() || a.eta.is_auto() || a.gamma.is_auto() || a.init_batches.is_auto();
    let (schedule, constants) = if any_auto {
        let f_star = match cfg.problem.delta {
            Some(d) => Some(problem.global_loss(&x0)? - d),
            None => None,
        };
        let constants = problem.initial_constants(&x0, f_star)?;
        if !(constants.delta > 0.0) {
            return Err(Error::Config {
                key: "problem.delta".into(),
                message: "x0 is already optimal; automatic schedules need delta > 0".into(),
            });
        }
        let input = ScheduleInput {
            n_clients: problem.n_clients(),
            local_steps: a.local_steps,
            rounds: cfg.run.rounds,
            cohort_size: a.cohort,
            smoothness: problem.smoothness(),
            delta: constants.delta,
            sigma: problem.sigma(),
            g0_energy: constants.g0_energy,
            momentum_cap: a.momentum_cap,
            safety: a.safety,
            alt_branch: a.schedule_alt,
        };
        (Some(schedule_for(a.variant, &input)?), Some(constants))
    } else {
        (None, None)
    };
    let sched = |pick: fn(&Schedule) -> f64| schedule.as_ref().map(pick).expect("schedule resolved");
    let beta = a.beta.value().unwrap_or_else(|| sched(|s| s.beta));
    let mut algo = AlgoConfig::new(
        a.variant,
        beta,
        a.eta.value().unwrap_or_else(|| sched(|s| s.eta)),
        a.gamma.value().unwrap_or_else(|| sched(|s| s.gamma)),
        a.local_steps,
        a.cohort,
    )
    .with_init_batches(
        a.init_batches
            .value()
            .unwrap_or_else(|| schedule.as_ref().map_or(1, |s| s.init_batches.max(1))),
    );
    if a.reparameterized {
        let hat = reparameterize(&algo)?;
        if a.eta.is_auto() {
            algo.eta = hat.eta;
        }
        if a.gamma.is_auto() {
            algo.gamma = hat.gamma;
        }
        algo.reparameterized = true;
    }
    algo.validate(problem.n_clients()).map_err(|e| match e {
        Error::InvalidParameter { name, reason } => Error::Config {
            key: format!("algo.{name}"),
            message: reason,
        },
        other => other,
    })?;
    Ok(Resolved {
        algo,
        schedule,
        constants,
        x0,
    })
}

/// Outcome of one replica.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaResult {
    pub seed: u64,
    pub reports: Vec<RoundReport>,
    /// Divergence that stopped the replica early.
    pub failure: Option<Error>,
    /// Largest `|c - mean(c_i)| / (1 + max |c_i|)` seen.
    pub control_gap: f64,
    /// `|grad f(x^R)|^2` at the last model reached.
    pub terminal_grad_norm_sq: f64,
}

struct CheckpointPlan<'a> {
    every: usize,
    path: &'a Path,
    config: &'a RunConfig,
}

fn checkpoint_file(pattern: &Path, round: usize) -> PathBuf {
    PathBuf::from(pattern.to_string_lossy().replace("{round}", &round.to_string()))
}

fn control_gap(state: &ServerState, controls: &ClientControls) -> f64 {
    if controls.c_i.is_empty() {
        return 0.0;
    }
    let scale = 1.0
        + controls
            .c_i
            .iter()
            .map(|c| linalg::norm_sq(c).sqrt())
            .fold(0.0, f64::max);
    linalg::dist_sq(&state.c, &controls.mean(state.c.len())).sqrt() / scale
}

#[allow(clippy::too_many_arguments)]
fn drive(
    engine: &Engine<'_>,
    mut state: ServerState,
    mut controls: ClientControls,
    mut reports: Vec<RoundReport>,
    mut gap: f64,
    rounds: usize,
    plan: Option<&CheckpointPlan<'_>>,
) -> Result<ReplicaResult> {
    gap = gap.max(control_gap(&state, &controls));
    let mut failure = None;
    while state.round < rounds {
        match engine.run_round(&mut state, &mut controls) {
            Ok(report) => reports.push(report),
            Err(e @ Error::Divergence { .. }) => {
                failure = Some(e);
                break;
            }
            Err(e) => return Err(e),
        }
        gap = gap.max(control_gap(&state, &controls));
        if let Some(plan) = plan {
            if state.round.is_multiple_of(plan.every) {
                let ck = Checkpoint {
                    state: state.clone(),
                    controls: controls.clone(),
                    master_seed: engine.master_seed(),
                };
                let payload = CheckpointPayload {
                    config: plan.config.clone(),
                    history: reports.iter().map(HistoryRow::from_report).collect(),
                    control_gap: format_float(gap),
                };
                let path = checkpoint_file(plan.path, state.round);
                fs::write(&path, ck.to_json(Some(serde_json::to_value(payload)?)))
                    .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            }
        }
    }
    let terminal_grad_norm_sq = linalg::norm_sq(&engine.problem().global_gradient(&state.x)?);
    Ok(ReplicaResult {
        seed: engine.master_seed(),
        reports,
        failure,
        control_gap: gap,
        terminal_grad_norm_sq,
    })
}

/// Runs one replica from `x0` with master seed `seed`.
pub fn run_replica(
    problem: &FederatedProblem,
    resolved: &Resolved,
    seed: u64,
    rounds: usize,
    opts: RunOptions,
) -> Result<ReplicaResult> {
    let engine = Engine::new(problem, resolved.algo, seed)?.parallel(opts.parallel);
    let (state, controls) = engine.init_state(&resolved.x0)?;
    drive(&engine, state, controls, Vec::new(), 0.0, rounds, None)
}

/// Run history kept inside a checkpoint so `resume` can rewrite full outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointPayload {
    config: RunConfig,
    history: Vec<HistoryRow>,
    control_gap: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HistoryRow {
    round: usize,
    cohort: Vec<usize>,
    values: Vec<String>,
    control_residual: Option<String>,
}

impl HistoryRow {
    fn from_report(r: &RoundReport) -> Self {
        Self {
            round: r.round,
            cohort: r.cohort.members.clone(),
            values: [
                r.loss,
                r.loss_next,
                r.grad_norm_sq,
                r.est_err,
                r.client_drift,
                r.wall_ms,
            ]
            .iter()
            .map(|&v| format_float(v))
            .collect(),
            control_residual: r.control_residual.map(format_float),
        }
    }

    fn to_report(&self) -> Result<RoundReport> {
        let v = linalg::decode_floats(&self.values)?;
        if v.len() != 6 {
            return Err(Error::Format("checkpoint history row has wrong width".into()));
        }
        let control_residual = match &self.control_residual {
            Some(s) => Some(linalg::decode_floats(std::slice::from_ref(s))?[0]),
            None => None,
        };
        Ok(RoundReport {
            round: self.round,
            cohort: Cohort {
                members: self.cohort.clone(),
                round: self.round,
            },
            loss: v[0],
            loss_next: v[1],
            grad_norm_sq: v[2],
            est_err: v[3],
            client_drift: v[4],
            control_residual,
            wall_ms: v[5],
        })
    }
}

// ---------------------------------------------------------------------------
// Output

/// CSV bytes for one trajectory. `wall_ms` is written as 0 unless
/// `wall_clock` is set, so reruns are byte-identical.
pub fn trajectory_csv(reports: &[RoundReport], wall_clock: bool) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in reports {
        w.write_record([
            r.round.to_string(),
            format_float(r.loss),
            format_float(r.grad_norm_sq),
            format_float(r.est_err),
            format_float(r.client_drift),
            r.control_residual.map(format_float).unwrap_or_default(),
            format_float(if wall_clock { r.wall_ms } else { 0.0 }),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

/// Seed-averaged CSV: the trajectory columns followed by their standard errors.
/// Rounds reached by every replica only.
pub fn mean_csv(replicas: &[ReplicaResult], wall_clock: bool) -> Result<Vec<u8>> {
    let rounds = replicas.iter().map(|r| r.reports.len()).min().unwrap_or(0);
    let column = |f: &dyn Fn(&RoundReport) -> f64| -> Result<(Vec<f64>, Vec<f64>)> {
        let series: Vec<Vec<f64>> = replicas
            .iter()
            .map(|r| r.reports[..rounds].iter().map(f).collect())
            .collect();
        diagnostics::seed_average(&series)
    };
    let loss = column(&|r| r.loss)?;
    let grad = column(&|r| r.grad_norm_sq)?;
    let est = column(&|r| r.est_err)?;
    let drift = column(&|r| r.client_drift)?;
    let has_controls = replicas[0]
        .reports
        .first()
        .is_some_and(|r| r.control_residual.is_some());
    let ctrl = column(&|r| r.control_residual.unwrap_or(0.0))?;
    let wall = column(&|r| if wall_clock { r.wall_ms } else { 0.0 })?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = CSV_HEADER.to_vec();
    header.extend([
        "loss_se",
        "grad_norm_sq_se",
        "est_err_se",
        "client_drift_se",
        "control_residual_se",
    ]);
    w.write_record(&header)?;
    let opt = |v: f64| {
        if has_controls {
            format_float(v)
        } else {
            String::new()
        }
    };
    for t in 0..rounds {
        w.write_record([
            t.to_string(),
            format_float(loss.0[t]),
            format_float(grad.0[t]),
            format_float(est.0[t]),
            format_float(drift.0[t]),
            opt(ctrl.0[t]),
            format_float(wall.0[t]),
            format_float(loss.1[t]),
            format_float(grad.1[t]),
            format_float(est.1[t]),
            format_float(drift.1[t]),
            opt(ctrl.1[t]),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    f.write_all(bytes)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Path of the seed-averaged CSV next to `csv_path`.
pub fn mean_csv_path(csv_path: &Path) -> PathBuf {
    let mut s = csv_path.as_os_str().to_owned();
    s.push(".mean");
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantStatus {
    /// `pass`, `fail` or `skipped`.
    pub status: &'static str,
    pub detail: String,
}

impl InvariantStatus {
    fn of(passed: bool, detail: String) -> Self {
        Self {
            status: if passed { "pass" } else { "fail" },
            detail,
        }
    }

    fn skipped(detail: &str) -> Self {
        Self {
            status: "skipped",
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureRecord {
    pub replica: usize,
    pub seed: u64,
    pub round: Option<usize>,
    pub client: Option<usize>,
    pub step: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemInfo {
    pub kind: ProblemKind,
    pub dim: usize,
    pub clients: usize,
    pub smoothness: f64,
    pub sigma: f64,
    pub f_star: Option<f64>,
    pub delta: Option<f64>,
    pub g0_energy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub rounds_completed: usize,
    pub mean_grad_norm_sq: f64,
    pub min_grad_norm_sq: f64,
    pub final_loss: Option<f64>,
    pub terminal_grad_norm_sq: f64,
}

impl Metrics {
    fn of(r: &ReplicaResult) -> Self {
        let stats = TrajectoryStats::from_reports(&r.reports);
        Self {
            rounds_completed: r.reports.len(),
            mean_grad_norm_sq: stats.mean_grad_norm_sq(),
            min_grad_norm_sq: stats.min_grad_norm_sq(),
            final_loss: r.reports.last().map(|x| x.loss_next),
            terminal_grad_norm_sq: r.terminal_grad_norm_sq,
        }
    }
}

/// Replayable record of a run: the config plus everything it resolved to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub fedmom_version: &'static str,
    pub status: &'static str,
    pub failure: Option<FailureRecord>,
    pub config: RunConfig,
    pub problem: ProblemInfo,
    pub resolved: AlgoConfig,
    pub schedule: Option<Schedule>,
    pub seeds: Vec<u64>,
    /// Replica 0, the trajectory in the main CSV.
    pub metrics: Metrics,
    /// Mean and standard error of `mean_grad_norm_sq` across replicas.
    pub replica_mean_grad_norm_sq: Option<(f64, f64)>,
    pub invariants: BTreeMap<String, InvariantStatus>,
}

fn invariants(
    resolved: &Resolved,
    problem: &FederatedProblem,
    replicas: &[ReplicaResult],
) -> BTreeMap<String, InvariantStatus> {
    let mut out = BTreeMap::new();
    let all = || replicas.iter().flat_map(|r| &r.reports);
    let finite = all().all(|r| {
        [
            r.loss,
            r.grad_norm_sq,
            r.est_err,
            r.client_drift,
            r.control_residual.unwrap_or(0.0),
        ]
        .iter()
        .all(|v| v.is_finite() && *v >= 0.0)
    });
    out.insert(
        "finite_nonnegative".to_string(),
        InvariantStatus::of(finite, "report scalars finite and >= 0".into()),
    );
    let gamma = resolved.algo.direct_gamma();
    let l = problem.smoothness();
    let descent = if gamma * l <= GAMMA_L_MAX * (1.0 + 1e-12) {
        let total = all().count();
        let violations = all()
            .filter(|r| !descent_check_report(r, gamma, l).passed)
            .count();
        InvariantStatus::of(violations == 0, format!("{violations} of {total} rounds violate"))
    } else {
        InvariantStatus::skipped("gamma L > 1/24")
    };
    out.insert("descent".to_string(), descent);
    let control = if resolved.algo.variant.is_scaffold() {
        let gap = replicas.iter().map(|r| r.control_gap).fold(0.0, f64::max);
        InvariantStatus::of(gap <= 1e-12, format!("max relative gap {}", format_float(gap)))
    } else {
        InvariantStatus::skipped("no control variates")
    };
    out.insert("control_mean".to_string(), control);
    out
}

/// Assembles the summary for finished replicas.
pub fn summarize(
    cfg: &RunConfig,
    problem: &FederatedProblem,
    resolved: &Resolved,
    replicas: &[ReplicaResult],
) -> RunSummary {
    let failure = replicas.iter().enumerate().find_map(|(j, r)| {
        r.failure.as_ref().map(|e| {
            let (round, client, step) = match e {
                Error::Divergence { round, client, step } => (Some(*round), *client, *step),
                _ => (None, None, None),
            };
            FailureRecord {
                replica: j,
                seed: r.seed,
                round,
                client,
                step,
                message: e.to_string(),
            }
        })
    });
    let replica_means: Vec<f64> = replicas
        .iter()
        .map(|r| Metrics::of(r).mean_grad_norm_sq)
        .collect();
    RunSummary {
        fedmom_version: env!("CARGO_PKG_VERSION"),
        status: if failure.is_some() {
            "diverged"
        } else {
            "completed"
        },
        failure,
        config: cfg.clone(),
        problem: ProblemInfo {
            kind: problem.kind(),
            dim: problem.dim(),
            clients: problem.n_clients(),
            smoothness: problem.smoothness(),
            sigma: problem.sigma(),
            f_star: problem.minimizer().map(|m| m.value),
            delta: resolved.constants.map(|c| c.delta),
            g0_energy: resolved.constants.map(|c| c.g0_energy),
        },
        resolved: resolved.algo,
        schedule: resolved.schedule.clone(),
        seeds: replicas.iter().map(|r| r.seed).collect(),
        metrics: Metrics::of(&replicas[0]),
        replica_mean_grad_norm_sq: (replicas.len() > 1).then(|| {
            (
                diagnostics::mean(&replica_means),
                diagnostics::standard_error(&replica_means),
            )
        }),
        invariants: invariants(resolved, problem, replicas),
    }
}

/// In-memory result of a run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub problem: FederatedProblem,
    pub resolved: Resolved,
    pub replicas: Vec<ReplicaResult>,
    pub summary: RunSummary,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.summary.failure.is_some() {
            EXIT_DIVERGENCE
        } else {
            EXIT_OK
        }
    }
}

/// Runs all replicas of `cfg` without writing anything. Replica `j` uses
/// master seed `run.seed + j` on the problem generated from `run.seed`.
pub fn execute(cfg: &RunConfig, opts: RunOptions) -> Result<RunOutcome> {
    let problem = build_problem(cfg)?;
    let resolved = resolve(cfg, &problem)?;
    let seeds: Vec<u64> = (0..cfg.run.replicas as u64).map(|j| cfg.run.seed + j).collect();
    let plan = cfg
        .output
        .checkpoint_path
        .as_deref()
        .filter(|_| cfg.run.checkpoint_every > 0)
        .map(|path| CheckpointPlan {
            every: cfg.run.checkpoint_every,
            path,
            config: cfg,
        });
    let one = |seed: u64| -> Result<ReplicaResult> {
        let engine = Engine::new(&problem, resolved.algo, seed)?.parallel(opts.parallel);
        let (state, controls) = engine.init_state(&resolved.x0)?;
        drive(
            &engine,
            state,
            controls,
            Vec::new(),
            0.0,
            cfg.run.rounds,
            plan.as_ref(),
        )
    };
    let replicas: Vec<ReplicaResult> = if opts.parallel {
        seeds.par_iter().map(|&s| one(s)).collect::<Result<_>>()?
    } else {
        seeds.iter().map(|&s| one(s)).collect::<Result<_>>()?
    };
    let summary = summarize(cfg, &problem, &resolved, &replicas);
    Ok(RunOutcome {
        problem,
        resolved,
        replicas,
        summary,
    })
}

fn write_outputs(cfg: &RunConfig, outcome: &RunOutcome) -> Result<()> {
    let wall = cfg.output.wall_clock;
    write_file(
        &cfg.output.csv_path,
        &trajectory_csv(&outcome.replicas[0].reports, wall)?,
    )?;
    if outcome.replicas.len() > 1 {
        write_file(
            &mean_csv_path(&cfg.output.csv_path),
            &mean_csv(&outcome.replicas, wall)?,
        )?;
    }
    let mut json = serde_json::to_string_pretty(&outcome.summary)?;
    json.push('\n');
    write_file(&cfg.output.summary_path, json.as_bytes())
}

fn report_failure(outcome: &RunOutcome) {
    if let Some(f) = &outcome.summary.failure {
        log::error!("replica {} (seed {}): {}", f.replica, f.seed, f.message);
    }
}

/// `fedmom run`: executes `cfg` and writes CSV and summary.
pub fn cmd_run(cfg: &RunConfig, opts: RunOptions) -> Result<i32> {
    let outcome = execute(cfg, opts)?;
    write_outputs(cfg, &outcome)?;
    report_failure(&outcome);
    Ok(outcome.exit_code())
}

/// `fedmom sweep`: one sub-run per axis value with the base seed, combined
/// into a seed-averaged long CSV with a leading `axis_value` column. Failed
/// sub-runs are logged and skipped; the exit code is the maximum.
pub fn cmd_sweep(cfg: &RunConfig, axis: &str, values: &[f64], opts: RunOptions) -> Result<i32> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["axis_value"];
    header.extend(CSV_HEADER);
    w.write_record(&header)?;
    let mut exit = EXIT_OK;
    let mut summaries = Vec::new();
    for &value in values {
        let sub = match cfg.with_axis(axis, value) {
            Ok(sub) => sub,
            Err(e) => {
                log::error!("{axis} = {value}: {e}");
                exit = exit.max(exit_code(&e));
                continue;
            }
        };
        let outcome = match execute(&sub, opts) {
            Ok(o) => o,
            Err(e) => {
                log::error!("{axis} = {value}: {e}");
                exit = exit.max(exit_code(&e));
                continue;
            }
        };
        report_failure(&outcome);
        exit = exit.max(outcome.exit_code());
        let text = String::from_utf8(mean_csv(&outcome.replicas, cfg.output.wall_clock)?)
            .expect("csv output is utf-8");
        for line in text.lines().skip(1) {
            let mut record = vec![format_float(value)];
            record.extend(line.split(',').take(CSV_HEADER.len()).map(str::to_string));
            w.write_record(&record)?;
        }
        summaries.push(serde_json::json!({
            "axis": axis,
            "value": value,
            "summary": outcome.summary,
        }));
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    write_file(&cfg.output.csv_path, &bytes)?;
    let mut json = serde_json::to_string_pretty(&summaries)?;
    json.push('\n');
    write_file(&cfg.output.summary_path, json.as_bytes())?;
    Ok(exit)
}

/// `fedmom resume`: continues a checkpointed run to its configured round
/// count and writes the same outputs the uninterrupted run would have.
/// `csv_path` and `summary_path` override the recorded output paths.
pub fn cmd_resume(
    checkpoint_text: &str,
    csv_path: Option<PathBuf>,
    summary_path: Option<PathBuf>,
    opts: RunOptions,
) -> Result<i32> {
    let (ck, payload) = Checkpoint::from_json(checkpoint_text)?;
    let payload: CheckpointPayload = serde_json::from_value(
        payload.ok_or_else(|| Error::Format("checkpoint carries no run record".into()))?,
    )?;
    let mut cfg = payload.config;
    cfg.validate()?;
    let problem = build_problem(&cfg)?;
    let resolved = resolve(&cfg, &problem)?;
    let history = payload
        .history
        .iter()
        .map(HistoryRow::to_report)
        .collect::<Result<Vec<_>>>()?;
    if history.len() != ck.state.round {
        return Err(Error::Format(
            "checkpoint history does not match its round".into(),
        ));
    }
    let gap: f64 = linalg::decode_floats(&[payload.control_gap])?[0];
    let engine = Engine::new(&problem, resolved.algo, ck.master_seed)?.parallel(opts.parallel);
    let replica = drive(&engine, ck.state, ck.controls, history, gap, cfg.run.rounds, None)?;
    let summary = summarize(&cfg, &problem, &resolved, std::slice::from_ref(&replica));
    if let Some(p) = csv_path {
        cfg.output.csv_path = p;
    }
    if let Some(p) = summary_path {
        cfg.output.summary_path = p;
    }
    let outcome = RunOutcome {
        problem,
        resolved,
        replicas: vec![replica],
        summary,
    };
    write_outputs(&cfg, &outcome)?;
    report_failure(&outcome);
    Ok(outcome.exit_code())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::parse_config;

    fn config(extra_algo: &str, extra_run: &str) -> RunConfig {
        parse_config(&format!(
            "[problem]\nkind = \"quadratic\"\ndim = 4\nclients = 5\n\
             [algo]\nvariant = \"scaffold_m\"\nlocal_steps = 4\n{extra_algo}\n\
             [run]\nrounds = 30\n{extra_run}\n"
        ))
        .unwrap()
    }

    #[test]
    fn csv_schema() {
        let outcome = execute(&config("", ""), RunOptions::default()).unwrap();
        let text = String::from_utf8(trajectory_csv(&outcome.replicas[0].reports, false).unwrap()).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "round,loss,grad_norm_sq,est_err,client_drift,control_residual,wall_ms"
        );
        assert_eq!(text.lines().count(), 31);
        assert!(text.lines().nth(1).unwrap().starts_with("0,"));
    }

    #[test]
    fn fedavg_rows_leave_control_residual_empty() {
        let mut cfg = config("", "");
        cfg.algo.variant = crate::engine::Variant::FedavgM;
        let outcome = execute(&cfg, RunOptions::default()).unwrap();
        let text = String::from_utf8(trajectory_csv(&outcome.replicas[0].reports, false).unwrap()).unwrap();
        for line in text.lines().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields[5], "");
            assert_eq!(fields[6], "0");
        }
    }

    #[test]
    fn execution_is_deterministic_and_thread_independent() {
        let cfg = config("cohort = 2", "replicas = 3");
        let a = execute(&cfg, RunOptions { parallel: true }).unwrap();
        let b = execute(&cfg, RunOptions { parallel: false }).unwrap();
        for (x, y) in a.replicas.iter().zip(&b.replicas) {
            assert_eq!(
                trajectory_csv(&x.reports, false).unwrap(),
                trajectory_csv(&y.reports, false).unwrap()
            );
        }
        assert_eq!(
            serde_json::to_string(&a.summary).unwrap(),
            serde_json::to_string(&b.summary).unwrap()
        );
        assert_eq!(a.summary.seeds, vec![0, 1, 2]);
        assert!(a.summary.replica_mean_grad_norm_sq.is_some());
    }

    #[test]
    fn summary_records_schedule_and_invariants() {
        let outcome = execute(&config("", ""), RunOptions::default()).unwrap();
        let s = &outcome.summary;
        assert_eq!(s.status, "completed");
        let sched = s.schedule.as_ref().unwrap();
        assert!(sched.notes.contains_key("beta"));
        assert_eq!(s.resolved.beta, sched.beta);
        assert_eq!(s.invariants["descent"].status, "pass");
        assert_eq!(s.invariants["control_mean"].status, "pass");
        assert_eq!(s.invariants["finite_nonnegative"].status, "pass");
    }

    #[test]
    fn reparameterized_auto_values_are_rescaled() {
        let direct = execute(&config("", ""), RunOptions::default()).unwrap();
        let hat = execute(&config("reparameterized = true", ""), RunOptions::default()).unwrap();
        let (d, h) = (direct.resolved.algo, hat.resolved.algo);
        assert!(h.reparameterized);
        assert!((h.eta - d.beta * d.eta).abs() <= 1e-15 * d.eta);
        assert!((h.direct_gamma() - d.gamma).abs() <= 1e-15);
    }

    #[test]
    fn divergence_sets_exit_code() {
        let mut cfg = config("", "");
        cfg.algo.variant = crate::engine::Variant::Fedavg;
        cfg.algo.beta = super::super::config::Auto::Value(1.0);
        cfg.algo.eta = super::super::config::Auto::Value(10.0);
        cfg.algo.gamma = super::super::config::Auto::Value(1.0);
        cfg.problem.hetero = 5.0;
        cfg.algo.local_steps = 16;
        cfg.run.rounds = 200;
        let outcome = execute(&cfg, RunOptions::default()).unwrap();
        assert_eq!(outcome.exit_code(), EXIT_DIVERGENCE);
        let f = outcome.summary.failure.as_ref().unwrap();
        assert!(f.round.is_some());
        assert_eq!(outcome.summary.status, "diverged");
    }

    #[test]
    fn mean_csv_has_standard_errors() {
        let outcome = execute(&config("", "replicas = 4"), RunOptions::default()).unwrap();
        let text = String::from_utf8(mean_csv(&outcome.replicas, false).unwrap()).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("round,loss,grad_norm_sq,est_err,client_drift,control_residual,wall_ms,"));
        assert!(header.ends_with("control_residual_se"));
        assert_eq!(text.lines().count(), 31);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(
            exit_code(&Error::Divergence {
                round: 1,
                client: None,
                step: None
            }),
            2
        );
        assert_eq!(exit_code(&Error::Io("x".into())), 3);
        assert_eq!(
            exit_code(&Error::Config {
                key: "a".into(),
                message: "b".into()
            }),
            1
        );
    }

    #[test]
    fn history_rows_round_trip() {
        let outcome = execute(&config("", ""), RunOptions::default()).unwrap();
        for r in &outcome.replicas[0].reports {
            assert_eq!(&HistoryRow::from_report(r).to_report().unwrap(), r);
        }
    }
}
