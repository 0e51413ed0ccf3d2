//! Experiment registry, runners and result files.
//!
//! Each experiment turns one claim about Walsh Brownian motion or its
//! couplings into a list of [`ResultRecord`]s with a pass flag. Runs are
//! pure functions of the [`ExperimentConfig`]: the worker count changes
//! neither the random streams nor the order of any reduction.

mod config;
mod output;
mod registry;
mod runners;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::ExperimentConfig;
pub use output::{read_summary, write_csv, write_results, Summary, CSV_HEADER};
pub use registry::{lookup, ExperimentInfo, REGISTRY};

use crate::error::{Error, Result};
use crate::stats::{TestOutcome, Z_975};

/// One sub-claim of an experiment with its verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment_id: String,
    pub claim_ref: String,
    pub statistic_name: String,
    pub estimate: f64,
    pub stderr: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n_paths: usize,
    pub n_rays: usize,
    pub probs: Vec<f64>,
    pub t: f64,
    pub dt: f64,
    pub r: Option<f64>,
    pub master_seed: u64,
    pub pass: bool,
    pub wallclock_s: f64,
    /// Value the estimate is compared with, if any.
    pub target: Option<f64>,
    /// Admissible distance from the target (or bound), if any.
    pub tolerance: Option<f64>,
    pub p_value: Option<f64>,
    pub dof: Option<usize>,
    /// The pass rule in words.
    pub rule: String,
    pub config_hash: String,
}

impl ResultRecord {
    fn new(cfg: &ExperimentConfig, info: &ExperimentInfo, name: impl Into<String>, estimate: f64) -> Self {
        ResultRecord {
            experiment_id: info.id.to_string(),
            claim_ref: info.claim_ref.to_string(),
            statistic_name: name.into(),
            estimate,
            stderr: None,
            ci_low: None,
            ci_high: None,
            n_paths: cfg.n_paths,
            n_rays: cfg.n_rays,
            probs: cfg.probs.clone(),
            t: cfg.t,
            dt: cfg.dt,
            r: None,
            master_seed: cfg.master_seed,
            pass: true,
            wallclock_s: 0.0,
            target: None,
            tolerance: None,
            p_value: None,
            dof: None,
            rule: "informational".into(),
            config_hash: String::new(),
        }
    }

    /// Attaches a standard error and the 95% normal interval.
    fn se(mut self, stderr: f64) -> Self {
        self.stderr = Some(stderr);
        self.ci_low = Some(self.estimate - Z_975 * stderr);
        self.ci_high = Some(self.estimate + Z_975 * stderr);
        self
    }

    fn paths(mut self, n: usize) -> Self {
        self.n_paths = n;
        self
    }

    fn graph(mut self, probs: &[f64]) -> Self {
        self.n_rays = probs.len();
        self.probs = probs.to_vec();
        self
    }

    fn dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    fn r(mut self, r: f64) -> Self {
        self.r = Some(r);
        self
    }

    fn claim(mut self, claim_ref: &str) -> Self {
        self.claim_ref = claim_ref.to_string();
        self
    }

    /// Passes when `|estimate − target| ≤ tolerance`.
    fn near(mut self, target: f64, tolerance: f64) -> Self {
        self.target = Some(target);
        self.tolerance = Some(tolerance);
        self.pass = (self.estimate - target).abs() <= tolerance;
        self.rule = "|estimate - target| <= tolerance".into();
        self
    }

    /// Passes when `estimate ≥ target − tolerance`.
    fn at_least(mut self, target: f64, tolerance: f64) -> Self {
        self.target = Some(target);
        self.tolerance = Some(tolerance);
        self.pass = self.estimate >= target - tolerance;
        self.rule = "estimate >= target - tolerance".into();
        self
    }

    /// Passes when `estimate < bound`.
    fn below(mut self, bound: f64) -> Self {
        self.target = Some(bound);
        self.pass = self.estimate < bound;
        self.rule = "estimate < target".into();
        self
    }

    fn within(mut self, low: f64, high: f64) -> Self {
        self.target = Some(0.5 * (low + high));
        self.tolerance = Some(0.5 * (high - low));
        self.pass = (low..=high).contains(&self.estimate);
        self.rule = "estimate within target ± tolerance".into();
        self
    }

    fn test(mut self, outcome: &TestOutcome) -> Self {
        self.p_value = Some(outcome.p_value);
        self.dof = Some(outcome.dof);
        self
    }

    /// Passes when the (adjusted) p-value is at least `alpha`.
    fn accept_null(mut self, p_value: f64, alpha: f64) -> Self {
        self.p_value = Some(p_value);
        self.tolerance = Some(alpha);
        self.pass = p_value >= alpha;
        self.rule = "p_value >= alpha (null not rejected)".into();
        self
    }

    /// Passes when the (adjusted) p-value is below `alpha`.
    fn reject_null(mut self, p_value: f64, alpha: f64) -> Self {
        self.p_value = Some(p_value);
        self.tolerance = Some(alpha);
        self.pass = p_value < alpha;
        self.rule = "p_value < alpha (null rejected)".into();
        self
    }

    fn verdict(mut self, pass: bool, rule: &str) -> Self {
        self.pass = pass;
        self.rule = rule.to_string();
        self
    }
}

/// Runs one experiment (`cfg.experiment_id` must name a registry entry).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    let info = lookup(&cfg.experiment_id)
        .ok_or_else(|| Error::config(format!("unknown experiment {:?}", cfg.experiment_id)))?;
    let start = Instant::now();
    let mut records = runners::run(cfg, info)?;
    let elapsed = start.elapsed().as_secs_f64();
    let hash = cfg.hash();
    for r in &mut records {
        r.wallclock_s = elapsed;
        r.config_hash = hash.clone();
    }
    Ok(records)
}

/// Runs `cfg.experiment_id`, or every registry entry in order for `all`.
pub fn run_suite(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    if !cfg.experiment_id.eq_ignore_ascii_case("all") {
        return run_experiment(cfg);
    }
    let mut out = Vec::new();
    for info in &REGISTRY {
        let mut c = cfg.clone();
        c.experiment_id = info.id.to_string();
        let mut records = run_experiment(&c)?;
        let hash = cfg.hash();
        for r in &mut records {
            r.config_hash = hash.clone();
        }
        out.append(&mut records);
    }
    Ok(out)
}
