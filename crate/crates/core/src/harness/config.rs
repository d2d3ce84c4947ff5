//! Run configuration: a flat TOML document with sections `problem`, `algo`,
//! `run` and `output`.
//!
//! ```toml
//! [problem]
//! kind = "quadratic"      # or "logistic"
//! dim = 20
//! clients = 10
//! hetero = 1.0
//! sigma = 0.5
//!
//! [algo]
//! variant = "scaffold_m"
//! beta = "auto"           # numbers or "auto" for beta, eta, gamma, init_batches
//! local_steps = 16
//! cohort = 5
//!
//! [run]
//! rounds = 200
//! seed = 0
//! replicas = 1
//!
//! [output]
//! csv_path = "run.csv"
//! summary_path = "run.summary.json"
//! ```
//!
//! Unknown sections or keys, wrong types and out-of-range values are errors
//! naming the offending `section.key`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::engine::Variant;
use crate::error::{Error, Result};
use crate::problems::ProblemKind;

/// A value that is either given or left to the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Auto<T> {
    Auto,
    Value(T),
}

impl<T: Copy> Auto<T> {
    pub fn value(self) -> Option<T> {
        match self {
            Auto::Auto => None,
            Auto::Value(v) => Some(v),
        }
    }

    pub fn is_auto(self) -> bool {
        matches!(self, Auto::Auto)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSection {
    pub kind: ProblemKind,
    pub dim: usize,
    pub clients: usize,
    /// Offset spread of the quadratic suite.
    pub hetero: f64,
    /// Gradient noise of the quadratic suite.
    pub sigma: f64,
    pub l_target: f64,
    pub mu_min: f64,
    pub skew_alpha: f64,
    pub reg: f64,
    pub rows_per_client: usize,
    /// Suboptimality `f(x0) - f*`, needed by automatic schedules on logistic problems.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoSection {
    pub variant: Variant,
    pub beta: Auto<f64>,
    pub eta: Auto<f64>,
    pub gamma: Auto<f64>,
    pub local_steps: usize,
    pub cohort: usize,
    pub init_batches: Auto<usize>,
    pub reparameterized: bool,
    pub safety: f64,
    pub momentum_cap: f64,
    /// Large-B alternate of the variance-reduced schedules.
    pub schedule_alt: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub rounds: usize,
    pub seed: u64,
    pub replicas: usize,
    /// Write a checkpoint every this many rounds (0 = never).
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSection {
    pub csv_path: PathBuf,
    pub summary_path: PathBuf,
    /// `{round}` in the file name is replaced by the round index.
    pub checkpoint_path: Option<PathBuf>,
    /// Record measured wall time; off by default so outputs are byte-stable.
    pub wall_clock: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem: ProblemSection,
    pub algo: AlgoSection,
    pub run: RunSection,
    pub output: OutputSection,
}

/// Keys accepted by [`RunConfig::with_axis`].
pub const SWEEP_AXES: [&str; 6] = ["beta", "eta", "rounds", "cohort", "sigma", "hetero"];

fn cfg_err(key: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}

struct Section<'a> {
    name: &'static str,
    table: Option<&'a Table>,
}

impl<'a> Section<'a> {
    fn key(&self, k: &str) -> String {
        format!("{}.{k}", self.name)
    }

    fn get(&self, k: &str) -> Option<&'a Value> {
        self.table.and_then(|t| t.get(k))
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        if let Some(t) = self.table {
            if let Some(k) = t.keys().find(|k| !allowed.contains(&k.as_str())) {
                return Err(cfg_err(self.key(k), "unknown key"));
            }
        }
        Ok(())
    }

    fn float(&self, k: &str, default: f64) -> Result<f64> {
        match self.get(k) {
            None => Ok(default),
            Some(v) => as_float(v).ok_or_else(|| cfg_err(self.key(k), "expected a number")),
        }
    }

    fn opt_float(&self, k: &str) -> Result<Option<f64>> {
        self.get(k)
            .map(|v| as_float(v).ok_or_else(|| cfg_err(self.key(k), "expected a number")))
            .transpose()
    }

    fn count(&self, k: &str, default: usize) -> Result<usize> {
        match self.get(k) {
            None => Ok(default),
            Some(Value::Integer(i)) if *i >= 0 => Ok(*i as usize),
            Some(Value::Integer(_)) => Err(cfg_err(self.key(k), "must be non-negative")),
            Some(_) => Err(cfg_err(self.key(k), "expected an integer")),
        }
    }

    fn boolean(&self, k: &str, default: bool) -> Result<bool> {
        match self.get(k) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(*b),
            Some(_) => Err(cfg_err(self.key(k), "expected true or false")),
        }
    }

    fn string(&self, k: &str) -> Result<Option<&'a str>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(cfg_err(self.key(k), "expected a string")),
        }
    }

    fn auto_float(&self, k: &str) -> Result<Auto<f64>> {
        match self.get(k) {
            None => Ok(Auto::Auto),
            Some(Value::String(s)) if s == "auto" => Ok(Auto::Auto),
            Some(v) => as_float(v)
                .map(Auto::Value)
                .ok_or_else(|| cfg_err(self.key(k), "expected a number or \"auto\"")),
        }
    }

    fn auto_count(&self, k: &str) -> Result<Auto<usize>> {
        match self.get(k) {
            None => Ok(Auto::Auto),
            Some(Value::String(s)) if s == "auto" => Ok(Auto::Auto),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Auto::Value(*i as usize)),
            Some(_) => Err(cfg_err(
                self.key(k),
                "expected a non-negative integer or \"auto\"",
            )),
        }
    }
}

fn as_float(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

/// Parses and validates a configuration document, filling defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let doc: Table = text
        .parse()
        .map_err(|e: toml::de::Error| cfg_err("<document>", e.message().to_string()))?;
    for (name, value) in &doc {
        if !["problem", "algo", "run", "output"].contains(&name.as_str()) {
            return Err(cfg_err(name.clone(), "unknown section"));
        }
        if !value.is_table() {
            return Err(cfg_err(name.clone(), "expected a section"));
        }
    }
    let section = |name: &'static str| Section {
        name,
        table: doc.get(name).and_then(Value::as_table),
    };

    let p = section("problem");
    p.check_keys(&[
        "kind",
        "dim",
        "clients",
        "hetero",
        "sigma",
        "l_target",
        "mu_min",
        "skew_alpha",
        "reg",
        "rows_per_client",
        "delta",
    ])?;
    let kind = match p.string("kind")? {
        None | Some("quadratic") => ProblemKind::Quadratic,
        Some("logistic") => ProblemKind::Logistic,
        Some(other) => {
            return Err(cfg_err(
                "problem.kind",
                format!("expected quadratic or logistic, got {other:?}"),
            ))
        }
    };
    let clients = p.count("clients", 10)?;
    let problem = ProblemSection {
        kind,
        dim: p.count("dim", 20)?,
        clients,
        hetero: p.float("hetero", 1.0)?,
        sigma: p.float("sigma", 0.5)?,
        l_target: p.float("l_target", 1.0)?,
        mu_min: p.float("mu_min", 0.1)?,
        skew_alpha: p.float("skew_alpha", 0.5)?,
        reg: p.float("reg", 0.01)?,
        rows_per_client: p.count("rows_per_client", 50)?,
        delta: p.opt_float("delta")?,
    };

    let a = section("algo");
    a.check_keys(&[
        "variant",
        "beta",
        "eta",
        "gamma",
        "local_steps",
        "cohort",
        "init_batches",
        "reparameterized",
        "safety",
        "momentum_cap",
        "schedule_alt",
    ])?;
    let variant = match a.string("variant")? {
        None => return Err(cfg_err("algo.variant", "required")),
        Some(s) => s
            .parse::<Variant>()
            .map_err(|_| cfg_err("algo.variant", format!("unknown variant {s:?}")))?,
    };
    let algo = AlgoSection {
        variant,
        beta: a.auto_float("beta")?,
        eta: a.auto_float("eta")?,
        gamma: a.auto_float("gamma")?,
        local_steps: a.count("local_steps", 16)?,
        cohort: a.count("cohort", clients)?,
        init_batches: a.auto_count("init_batches")?,
        reparameterized: a.boolean("reparameterized", false)?,
        safety: a.float("safety", crate::schedules::DEFAULT_SAFETY)?,
        momentum_cap: a.float("momentum_cap", crate::schedules::DEFAULT_MOMENTUM_CAP)?,
        schedule_alt: a.boolean("schedule_alt", false)?,
    };

    let r = section("run");
    r.check_keys(&["rounds", "seed", "replicas", "checkpoint_every"])?;
    let seed = match r.get("seed") {
        None => 0,
        Some(Value::Integer(i)) if *i >= 0 => *i as u64,
        Some(_) => return Err(cfg_err("run.seed", "expected a non-negative integer")),
    };
    let run = RunSection {
        rounds: r.count("rounds", 200)?,
        seed,
        replicas: r.count("replicas", 1)?,
        checkpoint_every: r.count("checkpoint_every", 0)?,
    };

    let o = section("output");
    o.check_keys(&["csv_path", "summary_path", "checkpoint_path", "wall_clock"])?;
    let output = OutputSection {
        csv_path: o.string("csv_path")?.unwrap_or("run.csv").into(),
        summary_path: o.string("summary_path")?.unwrap_or("run.summary.json").into(),
        checkpoint_path: o.string("checkpoint_path")?.map(PathBuf::from),
        wall_clock: o.boolean("wall_clock", false)?,
    };

    let config = RunConfig {
        problem,
        algo,
        run,
        output,
    };
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    /// Cross-field checks; each failure names one key.
    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        let a = &self.algo;
        let positive = |key: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(cfg_err(key, "must be finite and > 0"))
            }
        };
        let non_negative = |key: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(cfg_err(key, "must be finite and >= 0"))
            }
        };
        if p.dim == 0 {
            return Err(cfg_err("problem.dim", "must be at least 1"));
        }
        if p.clients == 0 {
            return Err(cfg_err("problem.clients", "must be at least 1"));
        }
        non_negative("problem.hetero", p.hetero)?;
        non_negative("problem.sigma", p.sigma)?;
        positive("problem.l_target", p.l_target)?;
        non_negative("problem.mu_min", p.mu_min)?;
        if p.mu_min > p.l_target {
            return Err(cfg_err("problem.mu_min", "must not exceed problem.l_target"));
        }
        positive("problem.skew_alpha", p.skew_alpha)?;
        non_negative("problem.reg", p.reg)?;
        if p.rows_per_client == 0 {
            return Err(cfg_err("problem.rows_per_client", "must be at least 1"));
        }
        if let Some(d) = p.delta {
            positive("problem.delta", d)?;
        }

        if a.local_steps == 0 {
            return Err(cfg_err("algo.local_steps", "must be at least 1"));
        }
        if a.cohort == 0 || a.cohort > p.clients {
            return Err(cfg_err(
                "algo.cohort",
                format!("must be in [1, {}], got {}", p.clients, a.cohort),
            ));
        }
        if let Some(b) = a.beta.value() {
            if a.variant.pins_beta() && b != 1.0 {
                return Err(cfg_err("algo.beta", format!("{} pins beta=1", a.variant)));
            }
            if !(0.0..=1.0).contains(&b) {
                return Err(cfg_err("algo.beta", "must lie in [0, 1]"));
            }
            if b == 0.0 && !matches!(a.variant, Variant::FedavgM | Variant::ScaffoldM) {
                return Err(cfg_err(
                    "algo.beta",
                    "beta=0 is only allowed for fedavg_m and scaffold_m",
                ));
            }
        }
        if let Some(e) = a.eta.value() {
            positive("algo.eta", e)?;
        }
        if let Some(g) = a.gamma.value() {
            positive("algo.gamma", g)?;
        }
        if a.init_batches.value() == Some(0) && a.variant.needs_init_batches() {
            return Err(cfg_err(
                "algo.init_batches",
                format!("{} needs at least 1", a.variant),
            ));
        }
        if a.reparameterized && !matches!(a.variant, Variant::FedavgM | Variant::ScaffoldM) {
            return Err(cfg_err(
                "algo.reparameterized",
                "only fedavg_m and scaffold_m have a reparameterized form",
            ));
        }
        if !(a.safety > 0.0 && a.safety <= 1.0) {
            return Err(cfg_err("algo.safety", "must lie in (0, 1]"));
        }
        if !(a.momentum_cap > 0.0 && a.momentum_cap <= 1.0) {
            return Err(cfg_err("algo.momentum_cap", "must lie in (0, 1]"));
        }
        let needs_schedule =
            a.beta.is_auto() || a.eta.is_auto() || a.gamma.is_auto() || a.init_batches.is_auto();
        if needs_schedule && p.kind == ProblemKind::Logistic && p.delta.is_none() {
            return Err(cfg_err(
                "problem.delta",
                "automatic schedules on logistic problems need a supplied delta",
            ));
        }

        let r = &self.run;
        if r.rounds == 0 {
            return Err(cfg_err("run.rounds", "must be at least 1"));
        }
        if r.replicas == 0 {
            return Err(cfg_err("run.replicas", "must be at least 1"));
        }
        if r.checkpoint_every > 0 {
            if self.output.checkpoint_path.is_none() {
                return Err(cfg_err(
                    "output.checkpoint_path",
                    "required when run.checkpoint_every > 0",
                ));
            }
            if r.replicas != 1 {
                return Err(cfg_err(
                    "run.checkpoint_every",
                    "checkpoints need run.replicas = 1",
                ));
            }
        }
        Ok(())
    }

    /// Copy with one sweepable key set to `value`, revalidated.
    pub fn with_axis(&self, axis: &str, value: f64) -> Result<RunConfig> {
        let mut out = self.clone();
        let key = axis.rsplit('.').next().unwrap_or(axis);
        let as_count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && v.is_finite() {
                Ok(v as usize)
            } else {
                Err(cfg_err(format!("sweep.{key}"), format!("{v} is not a count")))
            }
        };
        match key {
            "beta" => out.algo.beta = Auto::Value(value),
            "eta" => out.algo.eta = Auto::Value(value),
            "rounds" => out.run.rounds = as_count(value)?,
            "cohort" => out.algo.cohort = as_count(value)?,
            "sigma" => out.problem.sigma = value,
            "hetero" => out.problem.hetero = value,
            _ => {
                return Err(cfg_err(
                    "--axis",
                    format!("{axis:?} is not sweepable; use one of {}", SWEEP_AXES.join(", ")),
                ))
            }
        }
        out.validate()?;
        Ok(out)
    }
}
