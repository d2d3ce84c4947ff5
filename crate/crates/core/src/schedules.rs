//! Closed-form hyperparameter schedules derived from problem constants.
//!
//! Each function maps problem constants to `(beta, gamma, eta, B)`. The
//! learning-rate bounds only hold up to an unspecified constant, so `eta` is
//! the closed-form minimum times a `safety` factor. Divisions by zero (for
//! `sigma = 0` or `G0 = 0`) evaluate to `+inf` and drop out of the minima.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::engine::Variant;
use crate::error::{invalid, Error, Result};

pub const DEFAULT_SAFETY: f64 = 0.1;
pub const DEFAULT_MOMENTUM_CAP: f64 = 0.9;

/// Largest `gamma L` the one-step descent bound admits.
pub const GAMMA_L_MAX: f64 = 1.0 / 24.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduleInput {
    pub n_clients: usize,
    pub local_steps: usize,
    pub rounds: usize,
    pub cohort_size: usize,
    pub smoothness: f64,
    pub delta: f64,
    pub sigma: f64,
    pub g0_energy: f64,
    /// `c` in `beta = min{c, ...}`.
    pub momentum_cap: f64,
    /// Multiplier on the closed-form `eta` bound.
    pub safety: f64,
    /// Use the large-B alternate of the variance-reduced schedules.
    pub alt_branch: bool,
}

impl ScheduleInput {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_clients", self.n_clients),
            ("local_steps", self.local_steps),
            ("rounds", self.rounds),
            ("cohort_size", self.cohort_size),
        ] {
            if v == 0 {
                return Err(invalid(name, "must be positive"));
            }
        }
        if self.cohort_size > self.n_clients {
            return Err(invalid("cohort_size", "must not exceed n_clients"));
        }
        for (name, v) in [("smoothness", self.smoothness), ("delta", self.delta)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, "must be finite and positive"));
            }
        }
        for (name, v) in [("sigma", self.sigma), ("g0_energy", self.g0_energy)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, "must be finite and >= 0"));
            }
        }
        if !(self.momentum_cap > 0.0 && self.momentum_cap <= 1.0) {
            return Err(invalid("momentum_cap", "must lie in (0, 1]"));
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return Err(invalid("safety", "must lie in (0, 1]"));
        }
        Ok(())
    }

    fn n(&self) -> f64 {
        self.n_clients as f64
    }
    fn k(&self) -> f64 {
        self.local_steps as f64
    }
    fn r(&self) -> f64 {
        self.rounds as f64
    }
    fn s(&self) -> f64 {
        self.cohort_size as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Schedule {
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
    /// Per-client minibatches for initialization; 0 when the variant starts from `g = 0`
    /// without control variates.
    pub init_batches: usize,
    /// Active branch of each min-expression, plus any warnings.
    pub notes: BTreeMap<String, String>,
}

/// Smallest candidate with its label; the first wins ties.
fn argmin(candidates: &[(&str, f64)]) -> (String, f64) {
    let mut best = (candidates[0].0, candidates[0].1);
    for &(label, v) in &candidates[1..] {
        if v < best.1 {
            best = (label, v);
        }
    }
    (best.0.to_string(), best.1)
}

/// `ceil` that ignores relative rounding noise below 1e-12, floored at 1.
fn ceil_batches(x: f64) -> usize {
    if !x.is_finite() {
        return usize::MAX;
    }
    ((x * (1.0 - 1e-12)).ceil() as usize).max(1)
}

/// `B = ceil(K / (R beta^2))` for the variance-reduced FedAvg schedule.
pub fn fedavg_mvr_init_batches(local_steps: usize, rounds: usize, beta: f64) -> usize {
    ceil_batches(local_steps as f64 / (rounds as f64 * beta * beta))
}

/// `B = ceil(max{S K / (N R beta^2), N K / (S R)})` for the variance-reduced
/// SCAFFOLD schedule.
pub fn scaffold_mvr_init_batches(
    n_clients: usize,
    cohort_size: usize,
    local_steps: usize,
    rounds: usize,
    beta: f64,
) -> usize {
    let (n, s, k, r) = (
        n_clients as f64,
        cohort_size as f64,
        local_steps as f64,
        rounds as f64,
    );
    ceil_batches((s * k / (n * r * beta * beta)).max(n * k / (s * r)))
}

fn fedavg_m_with_beta(inp: &ScheduleInput, beta: f64, beta_note: String) -> Schedule {
    let l = inp.smoothness;
    let (gamma_note, gamma) = argmin(&[("1/(24L)", 1.0 / (24.0 * l)), ("beta/(6L)", beta / (6.0 * l))]);
    let (eta_note, eta_scale) = argmin(&[
        ("1", 1.0),
        ("1/(beta gamma L R)", 1.0 / (beta * gamma * l * inp.r())),
        (
            "sqrt(L Delta/(G0 beta^3 R))",
            (l * inp.delta / (inp.g0_energy * beta.powi(3) * inp.r())).sqrt(),
        ),
        ("1/sqrt(beta N)", 1.0 / (beta * inp.n()).sqrt()),
        (
            "(beta^3 N K)^(-1/4)",
            (beta.powi(3) * inp.n() * inp.k()).powf(-0.25),
        ),
    ]);
    let mut notes = BTreeMap::new();
    notes.insert("beta".into(), beta_note);
    notes.insert("gamma".into(), gamma_note);
    notes.insert("eta".into(), eta_note);
    notes.insert("init_batches".into(), "g0 = 0".into());
    Schedule {
        beta,
        gamma,
        eta: inp.safety * eta_scale / (inp.k() * l),
        init_batches: 0,
        notes,
    }
}

/// Momentum FedAvg: `beta = min{c, sqrt(N K L Delta / (sigma^2 R))}`,
/// `gamma = min{1/(24L), beta/(6L)}`, `g0 = 0`.
pub fn schedule_fedavg_m(inp: &ScheduleInput) -> Result<Schedule> {
    inp.validate()?;
    let l = inp.smoothness;
    let (note, beta) = argmin(&[
        ("c", inp.momentum_cap),
        (
            "sqrt(N K L Delta/(sigma^2 R))",
            (inp.n() * inp.k() * l * inp.delta / (inp.sigma * inp.sigma * inp.r())).sqrt(),
        ),
    ]);
    Ok(fedavg_m_with_beta(inp, beta, note))
}

/// Variance-reduced momentum FedAvg:
/// `beta = min{c, (N K L^2 Delta^2 / (sigma^4 R^2))^(1/3)}`,
/// `gamma = min{1/(24L), sqrt(beta N K / (54 L^2))}`, `B = ceil(K/(R beta^2))`.
/// The alternate uses `beta = min{1/R, ...}` and `B = K R`.
pub fn schedule_fedavg_mvr(inp: &ScheduleInput) -> Result<Schedule> {
    inp.validate()?;
    let l = inp.smoothness;
    let noise_branch =
        (inp.n() * inp.k() * l * l * inp.delta * inp.delta / (inp.sigma.powi(4) * inp.r() * inp.r())).cbrt();
    let (beta_note, beta) = if inp.alt_branch {
        argmin(&[
            ("1/R", 1.0 / inp.r()),
            ("(N K L^2 Delta^2/(sigma^4 R^2))^(1/3)", noise_branch),
        ])
    } else {
        argmin(&[
            ("c", inp.momentum_cap),
            ("(N K L^2 Delta^2/(sigma^4 R^2))^(1/3)", noise_branch),
        ])
    };
    let (gamma_note, gamma) = argmin(&[
        ("1/(24L)", 1.0 / (24.0 * l)),
        (
            "sqrt(beta N K/(54 L^2))",
            (beta * inp.n() * inp.k() / (54.0 * l * l)).sqrt(),
        ),
    ]);
    let (eta_note, eta_scale) = argmin(&[
        (
            "sqrt(L Delta/(G0 gamma L R))",
            (l * inp.delta / (inp.g0_energy * gamma * l * inp.r())).sqrt(),
        ),
        ("sqrt(beta/N)", (beta / inp.n()).sqrt()),
        ("(beta/(N K))^(1/4)", (beta / (inp.n() * inp.k())).powf(0.25)),
    ]);
    let (b_note, init_batches) = if inp.alt_branch {
        ("K R".to_string(), inp.local_steps * inp.rounds)
    } else {
        (
            "ceil(K/(R beta^2))".to_string(),
            fedavg_mvr_init_batches(inp.local_steps, inp.rounds, beta),
        )
    };
    let mut notes = BTreeMap::new();
    notes.insert("beta".into(), beta_note);
    notes.insert("gamma".into(), gamma_note);
    notes.insert("eta".into(), eta_note);
    notes.insert("init_batches".into(), b_note);
    Ok(Schedule {
        beta,
        gamma,
        eta: inp.safety * eta_scale / (inp.k() * l),
        init_batches,
        notes,
    })
}

fn scaffold_m_with_beta(inp: &ScheduleInput, beta: f64, beta_note: String) -> Schedule {
    let l = inp.smoothness;
    let raw_gamma = beta / l;
    let mut notes = BTreeMap::new();
    let gamma = if raw_gamma > GAMMA_L_MAX / l {
        notes.insert("gamma".into(), "1/(24L) (clamped from beta/L)".into());
        GAMMA_L_MAX / l
    } else {
        notes.insert("gamma".into(), "beta/L".into());
        raw_gamma
    };
    let (eta_note, eta_scale) = argmin(&[
        ("1/sqrt(S)", 1.0 / inp.s().sqrt()),
        ("1/(beta K^(1/4))", 1.0 / (beta * inp.k().powf(0.25))),
        ("sqrt(S)/N", inp.s().sqrt() / inp.n()),
    ]);
    notes.insert("beta".into(), beta_note);
    notes.insert("eta".into(), eta_note);
    notes.insert("init_batches".into(), "ceil(N K/(S R))".into());
    Schedule {
        beta,
        gamma,
        eta: inp.safety * eta_scale / (inp.k() * l),
        init_batches: (inp.n_clients * inp.local_steps)
            .div_ceil(inp.cohort_size * inp.rounds)
            .max(1),
        notes,
    }
}

/// Momentum SCAFFOLD:
/// `beta = min{c, S/N^(2/3), sqrt(L Delta S K/(sigma^2 R)), sqrt(L Delta S^2/(G0 N))}`,
/// `gamma = beta/L` clamped to `1/(24L)`, `B = ceil(N K/(S R))`.
pub fn schedule_scaffold_m(inp: &ScheduleInput) -> Result<Schedule> {
    inp.validate()?;
    let l = inp.smoothness;
    let (note, beta) = argmin(&[
        ("c", inp.momentum_cap),
        ("S/N^(2/3)", inp.s() / inp.n().powf(2.0 / 3.0)),
        (
            "sqrt(L Delta S K/(sigma^2 R))",
            (l * inp.delta * inp.s() * inp.k() / (inp.sigma * inp.sigma * inp.r())).sqrt(),
        ),
        (
            "sqrt(L Delta S^2/(G0 N))",
            (l * inp.delta * inp.s() * inp.s() / (inp.g0_energy * inp.n())).sqrt(),
        ),
    ]);
    Ok(scaffold_m_with_beta(inp, beta, note))
}

/// Variance-reduced momentum SCAFFOLD:
/// `beta = min{S/N, (K L Delta/(sigma^2 R))^(2/3) S^(1/3)}`,
/// `gamma = min{1/L, sqrt(beta S)/L}` clamped to `1/(24L)`,
/// `B = ceil(max{S K/(N R beta^2), N K/(S R)})`. The alternate uses
/// `beta = min{1/R, ...}` and `B = ceil(S K R / N)`.
pub fn schedule_scaffold_mvr(inp: &ScheduleInput) -> Result<Schedule> {
    inp.validate()?;
    let l = inp.smoothness;
    let noise_branch =
        (inp.k() * l * inp.delta / (inp.sigma * inp.sigma * inp.r())).powf(2.0 / 3.0) * inp.s().cbrt();
    let (beta_note, beta) = if inp.alt_branch {
        argmin(&[
            ("1/R", 1.0 / inp.r()),
            ("(K L Delta/(sigma^2 R))^(2/3) S^(1/3)", noise_branch),
        ])
    } else {
        argmin(&[
            ("S/N", inp.s() / inp.n()),
            ("(K L Delta/(sigma^2 R))^(2/3) S^(1/3)", noise_branch),
        ])
    };
    let (mut gamma_note, mut gamma) =
        argmin(&[("1/L", 1.0 / l), ("sqrt(beta S)/L", (beta * inp.s()).sqrt() / l)]);
    if gamma > GAMMA_L_MAX / l {
        gamma_note = format!("1/(24L) (clamped from {gamma_note})");
        gamma = GAMMA_L_MAX / l;
    }
    let (eta_note, eta_scale) = argmin(&[
        ("sqrt(beta/S)", (beta / inp.s()).sqrt()),
        ("(beta/(S K))^(1/4)", (beta / (inp.s() * inp.k())).powf(0.25)),
    ]);
    let mut notes = BTreeMap::new();
    let init_batches = if inp.alt_branch {
        if inp.r() < inp.n() / inp.s() {
            log::warn!("alternate schedule expects R >= N/S");
            notes.insert("warning".into(), "alternate branch expects R >= N/S".into());
        }
        notes.insert("init_batches".into(), "ceil(S K R/N)".into());
        (inp.cohort_size * inp.local_steps * inp.rounds).div_ceil(inp.n_clients)
    } else {
        notes.insert(
            "init_batches".into(),
            "ceil(max{S K/(N R beta^2), N K/(S R)})".into(),
        );
        scaffold_mvr_init_batches(inp.n_clients, inp.cohort_size, inp.local_steps, inp.rounds, beta)
    };
    notes.insert("beta".into(), beta_note);
    notes.insert("gamma".into(), gamma_note);
    notes.insert("eta".into(), eta_note);
    Ok(Schedule {
        beta,
        gamma,
        eta: inp.safety * eta_scale / (inp.k() * l),
        init_batches,
        notes,
    })
}

/// Schedule for any variant; `fedavg` and `scaffold` reuse their momentum
/// schedules with `beta` pinned to 1.
pub fn schedule_for(variant: Variant, inp: &ScheduleInput) -> Result<Schedule> {
    let schedule = match variant {
        Variant::Fedavg => {
            inp.validate()?;
            fedavg_m_with_beta(inp, 1.0, "pinned (fedavg)".into())
        }
        Variant::FedavgM => schedule_fedavg_m(inp)?,
        Variant::FedavgMvr => schedule_fedavg_mvr(inp)?,
        Variant::Scaffold => {
            inp.validate()?;
            scaffold_m_with_beta(inp, 1.0, "pinned (scaffold)".into())
        }
        Variant::ScaffoldM => schedule_scaffold_m(inp)?,
        Variant::ScaffoldMvr => schedule_scaffold_mvr(inp)?,
    };
    check_schedule(variant, inp, &schedule)?;
    Ok(schedule)
}

/// Re-checks the step-size and momentum preconditions on a produced schedule.
pub fn check_schedule(variant: Variant, inp: &ScheduleInput, s: &Schedule) -> Result<()> {
    let l = inp.smoothness;
    let fail = |reason: String| Error::InvalidParameter {
        name: "schedule",
        reason,
    };
    if !(s.beta > 0.0 && s.beta <= 1.0) {
        return Err(fail(format!("beta = {} outside (0, 1]", s.beta)));
    }
    if !(s.gamma * l <= GAMMA_L_MAX + 1e-15) {
        return Err(fail(format!("gamma L = {} exceeds 1/24", s.gamma * l)));
    }
    if matches!(variant, Variant::Fedavg | Variant::FedavgM) && !(s.gamma * l <= s.beta / 6.0 + 1e-15) {
        return Err(fail("gamma L exceeds beta/6".into()));
    }
    if !(s.eta.is_finite() && s.eta > 0.0) {
        return Err(fail(format!("eta = {} not positive", s.eta)));
    }
    if variant.needs_init_batches() && s.init_batches == 0 {
        return Err(fail("init_batches must be at least 1".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ScheduleInput {
        ScheduleInput {
            n_clients: 10,
            local_steps: 32,
            rounds: 1000,
            cohort_size: 10,
            smoothness: 1.0,
            delta: 1.0,
            sigma: 1.0,
            g0_energy: 2.0,
            momentum_cap: 1.0,
            safety: 0.1,
            alt_branch: false,
        }
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * b.abs().max(1.0)
    }

    #[test]
    fn fedavg_m_noiseless_takes_cap() {
        let s = schedule_fedavg_m(&ScheduleInput { sigma: 0.0, ..base() }).unwrap();
        assert_eq!(s.beta, 1.0);
        assert!(close(s.gamma, 1.0 / 24.0));
        assert_eq!(s.notes["beta"], "c");
    }

    #[test]
    fn fedavg_m_noise_branch() {
        let s = schedule_fedavg_m(&base()).unwrap();
        assert!(close(s.beta, 0.32f64.sqrt()));
        assert!(close(s.beta, 0.565_685_424_949_238));
        assert!(close(s.gamma, 1.0 / 24.0));
        // eta: min is 1/(beta gamma L R) = 24 / (1000 sqrt(0.32))
        let expected = 0.1 / 32.0 * 24.0 / (1000.0 * 0.32f64.sqrt());
        assert!(close(s.eta, expected), "{} vs {expected}", s.eta);
        assert_eq!(s.notes["eta"], "1/(beta gamma L R)");
    }

    #[test]
    fn fedavg_m_cap_binds() {
        let s = schedule_fedavg_m(&ScheduleInput {
            momentum_cap: 0.3,
            ..base()
        })
        .unwrap();
        assert_eq!(s.beta, 0.3);
        assert!(close(s.gamma, 1.0 / 24.0));
    }

    #[test]
    fn fedavg_mvr_batches() {
        assert_eq!(fedavg_mvr_init_batches(32, 100, 0.1), 32);
        let s = schedule_fedavg_mvr(&ScheduleInput {
            sigma: 0.0,
            momentum_cap: 0.5,
            local_steps: 32,
            rounds: 100,
            ..base()
        })
        .unwrap();
        assert_eq!(s.beta, 0.5);
        assert_eq!(s.init_batches, 2); // ceil(32 / (100 * 0.25)) = ceil(1.28)
        let alt = schedule_fedavg_mvr(&ScheduleInput {
            local_steps: 32,
            rounds: 100,
            alt_branch: true,
            ..base()
        })
        .unwrap();
        assert_eq!(alt.init_batches, 3200);
        assert!(alt.beta <= 0.01);
    }

    #[test]
    fn scaffold_m_examples() {
        let full = schedule_scaffold_m(&ScheduleInput {
            sigma: 0.0,
            g0_energy: 0.0,
            momentum_cap: 0.7,
            ..base()
        })
        .unwrap();
        assert_eq!(full.beta, 0.7);

        let partial = schedule_scaffold_m(&ScheduleInput {
            n_clients: 100,
            cohort_size: 10,
            sigma: 0.0,
            g0_energy: 0.0,
            ..base()
        })
        .unwrap();
        assert!(close(partial.beta, 10.0 / 100f64.powf(2.0 / 3.0)));
        assert!(close(partial.beta, 0.464_158_883_361_277_9));
        assert_eq!(partial.notes["beta"], "S/N^(2/3)");
        assert!(close(partial.gamma, 1.0 / 24.0));

        let b = schedule_scaffold_m(&ScheduleInput {
            cohort_size: 2,
            rounds: 500,
            ..base()
        })
        .unwrap();
        assert_eq!(b.init_batches, 1);
    }

    #[test]
    fn scaffold_m_gamma_unclamped_when_beta_small() {
        let s = schedule_scaffold_m(&ScheduleInput {
            momentum_cap: 0.01,
            ..base()
        })
        .unwrap();
        assert_eq!(s.beta, 0.01);
        assert!(close(s.gamma, 0.01));
        assert_eq!(s.notes["gamma"], "beta/L");
    }

    #[test]
    fn scaffold_mvr_examples() {
        let s = schedule_scaffold_mvr(&ScheduleInput {
            sigma: 0.0,
            cohort_size: 2,
            ..base()
        })
        .unwrap();
        assert!(close(s.beta, 0.2));
        let full = schedule_scaffold_mvr(&ScheduleInput { sigma: 0.0, ..base() }).unwrap();
        assert_eq!(full.beta, 1.0);
        assert!(full.notes["gamma"].contains("1/L"));
        assert!(close(full.gamma, 1.0 / 24.0));
        assert_eq!(scaffold_mvr_init_batches(10, 2, 32, 500, 0.2), 1);
    }

    #[test]
    fn pinned_variants_use_beta_one() {
        let s = schedule_for(Variant::Fedavg, &base()).unwrap();
        assert_eq!(s.beta, 1.0);
        let s = schedule_for(Variant::Scaffold, &base()).unwrap();
        assert_eq!(s.beta, 1.0);
        assert!(close(s.gamma, 1.0 / 24.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(schedule_fedavg_m(&ScheduleInput { delta: 0.0, ..base() }).is_err());
        assert!(schedule_fedavg_m(&ScheduleInput {
            smoothness: -1.0,
            ..base()
        })
        .is_err());
        assert!(schedule_fedavg_m(&ScheduleInput { rounds: 0, ..base() }).is_err());
        assert!(schedule_scaffold_m(&ScheduleInput {
            cohort_size: 11,
            ..base()
        })
        .is_err());
    }
}
