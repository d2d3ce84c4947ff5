//! `fedmom validate`: self-contained invariant checks grouped by module.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::parse_config;
use super::run::{execute, trajectory_csv, RunOptions};
use crate::diagnostics::{descent_check_report, finite_difference_gradient, rate_fit};
use crate::engine::{reparameterize, AlgoConfig, ClientControls, Engine, ServerState, Variant};
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::problems::{
    make_logistic_suite, make_quadratic_suite, FederatedProblem, LogisticSuiteParams, QuadraticSuiteParams,
};
use crate::sampling::{sample_cohort, subset_mean_second_moment, Cohort};
use crate::schedules::{schedule_for, ScheduleInput, GAMMA_L_MAX};
use crate::stream::{rng_stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    All,
    Problems,
    Sampling,
    Engine,
    Schedules,
    Diagnostics,
    Harness,
}

impl Scope {
    const MODULES: [Scope; 6] = [
        Scope::Problems,
        Scope::Sampling,
        Scope::Engine,
        Scope::Schedules,
        Scope::Diagnostics,
        Scope::Harness,
    ];

    fn name(self) -> &'static str {
        match self {
            Scope::All => "all",
            Scope::Problems => "problems",
            Scope::Sampling => "sampling",
            Scope::Engine => "engine",
            Scope::Schedules => "schedules",
            Scope::Diagnostics => "diagnostics",
            Scope::Harness => "harness",
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        std::iter::once(Scope::All)
            .chain(Scope::MODULES)
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid("scope", format!("unknown scope {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub scope: Scope,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub millis: u128,
}

type Outcome = std::result::Result<String, String>;

fn ensure(cond: bool, ok: String, fail: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(fail)
    }
}

fn lift<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn quad(n: usize, dim: usize, sigma: f64, seed: u64) -> std::result::Result<FederatedProblem, String> {
    lift(make_quadratic_suite(&QuadraticSuiteParams {
        n_clients: n,
        dim,
        hetero_scale: 2.0,
        l_target: 1.0,
        mu_min: 0.1,
        sigma,
        seed,
    }))
}

fn logistic(seed: u64) -> std::result::Result<FederatedProblem, String> {
    lift(make_logistic_suite(&LogisticSuiteParams {
        n_clients: 5,
        dim: 8,
        rows_per_client: 40,
        skew_alpha: 0.5,
        reg: 0.01,
        seed,
    }))
}

// ---------------------------------------------------------------------------
// problems

fn fd_check(problem: &FederatedProblem, scale: f64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let client = rng.random_range(0..problem.n_clients());
        let x: Vec<f64> = (0..problem.dim())
            .map(|_| rng.random_range(-scale..scale))
            .collect();
        let fd = lift(finite_difference_gradient(
            problem,
            client,
            &x,
            1e-5 * (1.0 + linalg::norm_sq(&x).sqrt()),
        ))?;
        let g = lift(problem.full_gradient(client, &x))?;
        let rel = linalg::dist_sq(&fd, &g).sqrt() / linalg::norm_sq(&g).sqrt().max(1.0);
        worst = worst.max(rel);
    }
    ensure(
        worst <= 1e-6,
        format!("max relative error {worst:.2e}"),
        format!("max relative error {worst:.2e} > 1e-6"),
    )
}

fn minimizer_stationary() -> Outcome {
    let p = quad(10, 20, 0.0, 7)?;
    let x = &p.minimizer().ok_or("no minimizer")?.x;
    let g = linalg::norm_sq(&lift(p.global_gradient(x))?).sqrt();
    ensure(
        g <= 1e-10,
        format!("|grad f(x*)| = {g:.2e}"),
        format!("|grad f(x*)| = {g:.2e}"),
    )
}

fn problem_json_round_trip() -> Outcome {
    for p in [quad(4, 5, 0.3, 1)?, logistic(2)?] {
        let back = lift(FederatedProblem::from_json(&p.to_json()))?;
        if back != p {
            return Err(format!("{:?} problem changed after a JSON round trip", p.kind()));
        }
    }
    Ok("quadratic and logistic exact".into())
}

// ---------------------------------------------------------------------------
// sampling

/// Exhaustive average of `|subset mean|^2` over all size-`s` subsets.
fn enumerate_subsets(vectors: &[Vec<f64>], s: usize) -> f64 {
    let n = vectors.len();
    let d = vectors[0].len();
    let (mut total, mut count) = (0.0, 0usize);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != s {
            continue;
        }
        let mut m = vec![0.0; d];
        for (i, v) in vectors.iter().enumerate() {
            if mask & (1 << i) != 0 {
                linalg::add_assign(&mut m, v);
            }
        }
        total += linalg::norm_sq(&m) / (s * s) as f64;
        count += 1;
    }
    total / count as f64
}

fn sampling_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for n in 1..=6 {
        for s in 1..=n {
            for _ in 0..50 {
                let vs: Vec<Vec<f64>> = (0..n)
                    .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
                    .collect();
                let closed = lift(subset_mean_second_moment(&vs, s))?;
                let exact = enumerate_subsets(&vs, s);
                worst = worst.max((closed - exact).abs() / exact.abs().max(1e-300));
                cases += 1;
            }
        }
    }
    ensure(
        worst <= 1e-12,
        format!("{cases} cases, max relative gap {worst:.2e}"),
        format!("max relative gap {worst:.2e}"),
    )
}

fn cohort_frequencies() -> Outcome {
    let (n, s, draws) = (5usize, 2usize, 100_000usize);
    let mut counts = [0usize; 5];
    for r in 0..draws {
        let mut rng = rng_stream(99, r as u64, 0, Purpose::Cohort);
        for i in lift(sample_cohort(n, s, r, &mut rng))?.members {
            counts[i] += 1;
        }
    }
    let p = s as f64 / n as f64;
    let se = (p * (1.0 - p) / draws as f64).sqrt();
    let worst = counts
        .iter()
        .map(|&c| ((c as f64 / draws as f64) - p).abs() / se)
        .fold(0.0, f64::max);
    ensure(
        worst <= 3.0,
        format!("max deviation {worst:.2} SE"),
        format!("inclusion frequency off by {worst:.2} SE"),
    )
}

// ---------------------------------------------------------------------------
// engine

fn trajectory(
    p: &FederatedProblem,
    cfg: AlgoConfig,
    seed: u64,
    rounds: usize,
) -> std::result::Result<Vec<u8>, String> {
    let engine = lift(Engine::new(p, cfg, seed))?;
    let reports = lift(engine.run_experiment(&vec![0.0; p.dim()], rounds, &mut |_| {}))?;
    lift(trajectory_csv(&reports, false))
}

fn reduction(plain: Variant, momentum: Variant) -> Outcome {
    let p = quad(10, 10, 0.5, 3)?;
    let a = trajectory(&p, AlgoConfig::new(plain, 1.0, 0.02, 0.04, 16, 10), 4, 200)?;
    let b = trajectory(&p, AlgoConfig::new(momentum, 1.0, 0.02, 0.04, 16, 10), 4, 200)?;
    ensure(
        a == b,
        "200 rounds byte-identical".into(),
        "trajectories differ".into(),
    )
}

/// Max over rounds of `|c - mean(c_i)| / (1 + max |c_i|)`.
fn control_gap(fault: bool) -> std::result::Result<f64, String> {
    let p = quad(20, 6, 0.5, 8)?;
    let mut worst: f64 = 0.0;
    for v in [Variant::ScaffoldM, Variant::ScaffoldMvr] {
        for seed in 0..3 {
            let cfg = AlgoConfig::new(v, 0.3, 0.02, 0.04, 4, 4).with_init_batches(2);
            let mut engine = lift(Engine::new(&p, cfg, seed))?;
            if fault {
                engine = engine.with_aggregation_fault();
            }
            let (mut state, mut controls) = lift(engine.init_state(&[0.0; 6]))?;
            for _ in 0..100 {
                lift(engine.run_round(&mut state, &mut controls))?;
                let scale = 1.0
                    + controls
                        .c_i
                        .iter()
                        .map(|c| linalg::norm_sq(c).sqrt())
                        .fold(0.0, f64::max);
                worst = worst.max(linalg::dist_sq(&state.c, &controls.mean(6)).sqrt() / scale);
            }
        }
    }
    Ok(worst)
}

fn control_mean(fault: bool) -> Outcome {
    let gap = control_gap(fault)?;
    ensure(
        gap <= 1e-12,
        format!("max relative gap {gap:.2e}"),
        format!("max relative gap {gap:.2e}"),
    )
}

fn reparam_equivalence() -> Outcome {
    let p = quad(6, 8, 0.5, 2)?;
    let mut worst: f64 = 0.0;
    for v in [Variant::FedavgM, Variant::ScaffoldM] {
        let cfg = AlgoConfig::new(v, 0.2, 0.05, 0.04, 4, 6).with_init_batches(2);
        let direct = lift(Engine::new(&p, cfg, 1))?;
        let hat = lift(Engine::new(&p, lift(reparameterize(&cfg))?, 1))?;
        let (mut s1, mut c1) = lift(direct.init_state(&[1.0; 8]))?;
        let (mut s2, mut c2) = lift(hat.init_state(&[1.0; 8]))?;
        for _ in 0..100 {
            lift(direct.run_round(&mut s1, &mut c1))?;
            lift(hat.run_round(&mut s2, &mut c2))?;
            worst =
                worst.max(linalg::dist_sq(&s1.x, &s2.x).sqrt() / linalg::norm_sq(&s1.x).sqrt().max(1e-300));
        }
    }
    ensure(
        worst <= 1e-9,
        format!("max relative gap {worst:.2e}"),
        format!("max relative gap {worst:.2e}"),
    )
}

fn vr_telescoping() -> Outcome {
    let p = quad(5, 8, 0.0, 4)?;
    let cfg = AlgoConfig::new(Variant::FedavgMvr, 0.3, 0.05, 0.04, 1, 5);
    let engine = lift(Engine::new(&p, cfg, 0))?;
    let reports = lift(engine.run_experiment(&[1.0; 8], 100, &mut |_| {}))?;
    let worst = reports.iter().map(|r| r.est_err).fold(0.0, f64::max);
    ensure(
        worst <= 1e-20,
        format!("max est_err {worst:.2e}"),
        format!("max est_err {worst:.2e}"),
    )
}

fn parallel_serial() -> Outcome {
    let p = quad(8, 6, 0.8, 6)?;
    for v in Variant::ALL {
        let cohort = if v.is_scaffold() { 5 } else { 8 };
        let cfg = AlgoConfig::new(v, 0.4, 0.05, 0.03, 3, cohort).with_init_batches(2);
        let run = |par: bool| -> std::result::Result<Vec<u8>, String> {
            let engine = lift(Engine::new(&p, cfg, 3))?.parallel(par);
            let reports = lift(engine.run_experiment(&[0.0; 6], 20, &mut |_| {}))?;
            lift(trajectory_csv(&reports, false))
        };
        if run(true)? != run(false)? {
            return Err(format!("{v}: parallel and serial differ"));
        }
    }
    Ok("6 variants byte-identical".into())
}

/// Exact cohort average of `g^{r+1}` for one noiseless plain-SCAFFOLD round
/// with `K = 1`: its mean must equal `grad f(x^r)` and its second moment the
/// sampling closed form. Returns the two gaps.
fn aggregation_gaps(fault: bool) -> std::result::Result<(f64, f64), String> {
    let (n, s, d) = (6usize, 2usize, 5usize);
    let p = quad(n, d, 0.0, 11)?;
    let x = vec![0.4; d];
    let cfg = AlgoConfig::new(Variant::Scaffold, 1.0, 0.1, 0.04, 1, s);
    let mut engine = lift(Engine::new(&p, cfg, 0))?;
    if fault {
        engine = engine.with_aggregation_fault();
    }
    let grads: Vec<Vec<f64>> = (0..n)
        .map(|i| p.full_gradient(i, &x))
        .collect::<Result<_>>()
        .map_err(|e| e.to_string())?;
    let (mut mean, mut second, mut count) = (vec![0.0; d], 0.0, 0.0);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != s {
            continue;
        }
        let members: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let mut state = ServerState {
            x: x.clone(),
            g: vec![0.0; d],
            c: vec![0.0; d],
            prev_x: x.clone(),
            round: 0,
        };
        let mut controls = ClientControls {
            c_i: vec![vec![0.0; d]; n],
        };
        lift(engine.run_round_on(&mut state, &mut controls, Cohort { members, round: 0 }))?;
        linalg::add_assign(&mut mean, &state.g);
        second += linalg::norm_sq(&state.g);
        count += 1.0;
    }
    let grad = lift(p.global_gradient(&x))?;
    let mean_gap =
        linalg::dist_sq(&linalg::scale(&mean, 1.0 / count), &grad).sqrt() / linalg::norm_sq(&grad).sqrt();
    let expected = lift(subset_mean_second_moment(&grads, s))?;
    Ok((mean_gap, (second / count - expected).abs() / expected))
}

fn aggregation_unbiased(fault: bool) -> Outcome {
    let (m, s) = aggregation_gaps(fault)?;
    ensure(
        m <= 1e-12 && s <= 1e-12,
        format!("mean gap {m:.2e}, second-moment gap {s:.2e}"),
        format!("mean gap {m:.2e}, second-moment gap {s:.2e}"),
    )
}

fn scaffold_fixed_point(fault: bool) -> Outcome {
    let p = quad(6, 5, 0.0, 12)?;
    let x_star = p.minimizer().ok_or("no minimizer")?.x.clone();
    let cfg = AlgoConfig::new(Variant::Scaffold, 1.0, 0.1, 0.04, 1, 3);
    let mut engine = lift(Engine::new(&p, cfg, 0))?;
    if fault {
        engine = engine.with_aggregation_fault();
    }
    let mut controls = ClientControls {
        c_i: (0..6)
            .map(|i| p.full_gradient(i, &x_star))
            .collect::<Result<_>>()
            .map_err(|e| e.to_string())?,
    };
    let mut state = ServerState {
        x: x_star.clone(),
        g: vec![0.0; 5],
        c: controls.mean(5),
        prev_x: x_star.clone(),
        round: 0,
    };
    for _ in 0..20 {
        lift(engine.run_round(&mut state, &mut controls))?;
    }
    let moved = linalg::dist_sq(&state.x, &x_star).sqrt();
    ensure(
        moved <= 1e-12,
        format!("drift from x* {moved:.2e}"),
        format!("drift from x* {moved:.2e}"),
    )
}

// ---------------------------------------------------------------------------
// schedules and diagnostics

fn schedule_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut count = 0;
    for _ in 0..200 {
        let n = rng.random_range(1..50usize);
        let input = ScheduleInput {
            n_clients: n,
            local_steps: rng.random_range(1..64),
            rounds: rng.random_range(1..2000),
            cohort_size: rng.random_range(1..=n),
            smoothness: 10f64.powf(rng.random_range(-2.0..2.0)),
            delta: 10f64.powf(rng.random_range(-3.0..3.0)),
            sigma: if rng.random_bool(0.2) {
                0.0
            } else {
                10f64.powf(rng.random_range(-2.0..1.0))
            },
            g0_energy: 10f64.powf(rng.random_range(-2.0..2.0)),
            momentum_cap: rng.random_range(0.1..=1.0),
            safety: 0.1,
            alt_branch: rng.random_bool(0.3),
        };
        for v in Variant::ALL {
            lift(schedule_for(v, &input)).map_err(|e| format!("{v}: {e}"))?;
            count += 1;
        }
    }
    Ok(format!(
        "{count} schedules satisfy beta in (0,1], gamma L <= 1/24, eta > 0"
    ))
}

/// Violations of the one-step descent bound over 6 variants x 5 seeds with
/// schedule-produced hyperparameters.
fn descent_violations(fault: bool) -> std::result::Result<(usize, usize), String> {
    let p = quad(10, 10, 0.5, 21)?;
    let x0 = vec![0.0; 10];
    let ic = lift(p.initial_constants(&x0, None))?;
    let (mut bad, mut total) = (0, 0);
    for v in Variant::ALL {
        let input = ScheduleInput {
            n_clients: 10,
            local_steps: 8,
            rounds: 100,
            cohort_size: if v.is_scaffold() { 4 } else { 10 },
            smoothness: p.smoothness(),
            delta: ic.delta,
            sigma: p.sigma(),
            g0_energy: ic.g0_energy,
            momentum_cap: 0.9,
            safety: 0.1,
            alt_branch: false,
        };
        let s = lift(schedule_for(v, &input))?;
        let cfg = AlgoConfig::new(v, s.beta, s.eta, s.gamma, 8, input.cohort_size)
            .with_init_batches(s.init_batches.max(1));
        for seed in 0..5 {
            let mut engine = lift(Engine::new(&p, cfg, seed))?;
            if fault {
                engine = engine.with_aggregation_fault();
            }
            for r in lift(engine.run_experiment(&x0, 100, &mut |_| {}))? {
                let c = descent_check_report(&r, cfg.gamma, p.smoothness());
                if !c.precondition_met || s.gamma * p.smoothness() > GAMMA_L_MAX * (1.0 + 1e-12) {
                    return Err("schedule gamma violates gamma L <= 1/24".into());
                }
                total += 1;
                bad += usize::from(!c.passed);
            }
        }
    }
    Ok((bad, total))
}

fn descent(fault: bool) -> Outcome {
    let (bad, total) = descent_violations(fault)?;
    ensure(
        bad == 0,
        format!("0 of {total} rounds violate"),
        format!("{bad} of {total} rounds violate"),
    )
}

fn rate_fit_power_laws() -> Outcome {
    let xs = [64.0, 128.0, 256.0, 512.0];
    for expo in [-1.0, -0.5, 0.3] {
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 2.5 * x.powf(expo)).collect();
        let slope = lift(rate_fit(&xs, &ys))?;
        if (slope - expo).abs() > 1e-10 {
            return Err(format!("exponent {expo} fitted as {slope}"));
        }
    }
    Ok("exponents recovered to 1e-10".into())
}

// ---------------------------------------------------------------------------
// harness

fn csv_determinism() -> Outcome {
    let cfg = lift(parse_config(
        "[problem]\ndim = 6\nclients = 6\n[algo]\nvariant = \"scaffold_mvr\"\ncohort = 3\nlocal_steps = 4\n[run]\nrounds = 40\nreplicas = 2\n",
    ))?;
    let a = lift(execute(&cfg, RunOptions { parallel: true }))?;
    let b = lift(execute(&cfg, RunOptions { parallel: false }))?;
    for (x, y) in a.replicas.iter().zip(&b.replicas) {
        if lift(trajectory_csv(&x.reports, false))? != lift(trajectory_csv(&y.reports, false))? {
            return Err("CSV depends on parallelism".into());
        }
    }
    let json = |o: &super::run::RunOutcome| serde_json::to_string(&o.summary).map_err(|e| e.to_string());
    ensure(
        json(&a)? == json(&b)?,
        "CSV and summary byte-identical".into(),
        "summary differs".into(),
    )
}

/// Corrupts the aggregation scale to `1/(eta N K)` and reports which checks
/// notice. Passes when the cohort-unbiasedness check fails under the fault.
fn mutation_detection() -> Outcome {
    let unbiased = aggregation_unbiased(true).is_ok();
    let control = control_mean(true).is_ok();
    let fixed = scaffold_fixed_point(true).is_ok();
    let desc = descent(true).is_ok();
    let verdict = |ok: bool| if ok { "passes" } else { "fails" };
    let detail = format!(
        "under fault: unbiasedness {}, control-mean {}, fixed point {}, descent {}",
        verdict(unbiased),
        verdict(control),
        verdict(fixed),
        verdict(desc)
    );
    ensure(!unbiased, detail.clone(), format!("fault not detected; {detail}"))
}

struct Check {
    scope: Scope,
    name: &'static str,
    run: fn() -> Outcome,
}

fn checks() -> Vec<Check> {
    let c = |scope, name, run| Check { scope, name, run };
    vec![
        c(Scope::Problems, "finite differences (quadratic)", || {
            fd_check(&quad(6, 8, 0.5, 3)?, 2.0)
        }),
        c(Scope::Problems, "finite differences (logistic)", || {
            fd_check(&logistic(4)?, 2.0)
        }),
        c(Scope::Problems, "minimizer is stationary", minimizer_stationary),
        c(
            Scope::Problems,
            "problem JSON round trip",
            problem_json_round_trip,
        ),
        c(
            Scope::Sampling,
            "closed form vs subset enumeration",
            sampling_oracle,
        ),
        c(
            Scope::Sampling,
            "cohort inclusion frequencies",
            cohort_frequencies,
        ),
        c(Scope::Engine, "beta=1 reduction fedavg", || {
            reduction(Variant::Fedavg, Variant::FedavgM)
        }),
        c(Scope::Engine, "beta=1 reduction scaffold", || {
            reduction(Variant::Scaffold, Variant::ScaffoldM)
        }),
        c(Scope::Engine, "control-mean identity", || control_mean(false)),
        c(
            Scope::Engine,
            "reparameterization equivalence",
            reparam_equivalence,
        ),
        c(Scope::Engine, "VR telescoping", vr_telescoping),
        c(Scope::Engine, "parallel equals serial", parallel_serial),
        c(Scope::Engine, "cohort-averaged aggregate unbiased", || {
            aggregation_unbiased(false)
        }),
        c(Scope::Engine, "scaffold fixed point", || {
            scaffold_fixed_point(false)
        }),
        c(Scope::Schedules, "schedule preconditions", schedule_invariants),
        c(Scope::Diagnostics, "pathwise descent", || descent(false)),
        c(Scope::Diagnostics, "rate fit on power laws", rate_fit_power_laws),
        c(Scope::Harness, "output determinism", csv_determinism),
        c(
            Scope::Harness,
            "aggregation-scale mutation detected",
            mutation_detection,
        ),
    ]
}

/// Runs the checks in `scope` in a fixed order.
pub fn run_checks(scope: Scope) -> Vec<CheckResult> {
    checks()
        .into_iter()
        .filter(|c| scope == Scope::All || c.scope == scope)
        .map(|c| {
            let started = Instant::now();
            let outcome = (c.run)();
            CheckResult {
                scope: c.scope,
                name: c.name,
                passed: outcome.is_ok(),
                detail: outcome.unwrap_or_else(|e| e),
                millis: started.elapsed().as_millis(),
            }
        })
        .collect()
}

/// Prints a pass/fail table; exit code 0 iff every check passes.
pub fn cmd_validate(scope: Scope) -> i32 {
    let results = run_checks(scope);
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in &results {
        println!(
            "{:<12} {:<width$}  {}  {:>6} ms  {}",
            r.scope.name(),
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.millis,
            r.detail
        );
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} checks, {failed} failed", results.len());
    i32::from(failed > 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scope_names_round_trip() {
        for s in std::iter::once(Scope::All).chain(Scope::MODULES) {
            assert_eq!(s.to_string().parse::<Scope>().unwrap(), s);
        }
        assert!("nope".parse::<Scope>().is_err());
    }

    #[test]
    fn sampling_scope_runs_only_sampling() {
        let results = run_checks(Scope::Sampling);
        assert_eq!(results.len(), 2);
        assert!(
            results.iter().all(|r| r.scope == Scope::Sampling && r.passed),
            "{results:?}"
        );
    }

    #[test]
    fn mutation_is_detected_by_unbiasedness_only() {
        assert!(aggregation_unbiased(false).is_ok());
        assert!(aggregation_unbiased(true).is_err());
        assert!(control_mean(true).is_ok());
    }
}
