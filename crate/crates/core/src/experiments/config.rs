//! Flat `key = value` experiment configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sde_sim::CornerRefinement;
use crate::star_graph::StarGraph;

/// Every knob of a run, including the pass/fail thresholds.
///
/// Keys of the config file are exactly these field names. Vectors are
/// written comma-separated; `probs` may be omitted for uniform weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// `E1`..`E13`, or `all`.
    pub experiment_id: String,
    pub n_rays: usize,
    pub probs: Vec<f64>,
    pub t: f64,
    pub dt: f64,
    /// Strictly decreasing mesh list for refinement studies.
    pub meshes: Vec<f64>,
    pub n_paths: usize,
    /// Mixing parameters of the perturbed coupling.
    pub r: Vec<f64>,
    pub master_seed: u64,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    pub workers: usize,
    pub out_dir: PathBuf,

    /// Ray counts of the distance-formula study (uniform weights except
    /// for `n_rays`, which uses `probs`).
    pub n_rays_grid: Vec<usize>,
    /// Paths per mesh for residual, covariation and local-time studies.
    pub n_check_paths: usize,
    /// Paths per coarse mesh in the discretisation-allowance pilot.
    pub n_pilot: usize,
    /// Driver draws and copies per driver of the conditional ensemble.
    pub n_drivers: usize,
    pub n_copies: usize,
    pub n_functions: usize,
    /// Strictly decreasing scales of the coincidence scans.
    pub deltas: Vec<f64>,
    /// Band widths paired with `meshes` for the local time of the distance.
    pub eps_schedule: Vec<f64>,
    /// Mixing parameter of the driver reconstruction round trip.
    pub r_roundtrip: f64,
    pub refine_reach: f64,
    pub refine_depth: u32,

    /// Standard errors allowed between an estimate and its target.
    pub sigma_mult: f64,
    /// Level of every hypothesis test (after Bonferroni).
    pub alpha: f64,
    pub slope_min: f64,
    pub slope_max: f64,
    /// Largest admissible ratio of the distance local time to the control.
    pub lt_ratio_max: f64,
    /// Largest admissible two-ray distance, relative to the three-ray value.
    pub n2_ratio_max: f64,
    /// Covariation mismatch bound in units of `√dt`.
    pub cov_mult: f64,
    /// Cross-correlation bound in units of `1/√K`.
    pub corr_mult: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment_id: "all".into(),
            n_rays: 3,
            probs: vec![1.0 / 3.0; 3],
            t: 1.0,
            dt: 1e-3,
            meshes: vec![1e-2, 1e-3, 1e-4],
            n_paths: 20_000,
            r: vec![0.0, 0.5, 0.9, 0.99, 1.0],
            master_seed: 0,
            workers: 0,
            out_dir: PathBuf::from("results"),
            n_rays_grid: vec![3, 4, 5],
            n_check_paths: 1000,
            n_pilot: 4000,
            n_drivers: 1000,
            n_copies: 64,
            n_functions: 10,
            deltas: vec![0.1, 0.05, 0.025],
            eps_schedule: vec![0.04, 0.02, 0.01],
            r_roundtrip: 0.5,
            refine_reach: 4.0,
            refine_depth: 20,
            sigma_mult: 3.0,
            alpha: 0.01,
            slope_min: 0.35,
            slope_max: 0.65,
            lt_ratio_max: 0.1,
            n2_ratio_max: 0.25,
            cov_mult: 5.0,
            corr_mult: 4.0,
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    let x: f64 = v
        .parse()
        .map_err(|_| Error::config(format!("{key}: not a number: {v:?}")))?;
    if !x.is_finite() {
        return Err(Error::config(format!("{key}: must be finite, got {v}")));
    }
    Ok(x)
}

fn parse_int<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("{key}: not a non-negative integer: {v:?}")))
}

fn parse_list<T>(key: &str, v: &str, item: impl Fn(&str, &str) -> Result<T>) -> Result<Vec<T>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| item(key, s.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn strictly_decreasing(key: &str, v: &[f64], min_len: usize) -> Result<()> {
    if v.len() < min_len {
        return Err(Error::config(format!(
            "{key}: need at least {min_len} entries, got {}",
            v.len()
        )));
    }
    if v.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::config(format!("{key}: entries must be positive")));
    }
    if v.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::config(format!("{key}: must be strictly decreasing")));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Parses `key = value` lines over the defaults. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = std::collections::HashSet::new();
        let mut probs_given = false;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected `key = value`", no + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::config(format!("line {}: duplicate key {key}", no + 1)));
            }
            probs_given |= key == "probs";
            cfg.set(key, value)
                .map_err(|e| Error::config(format!("line {}: {}", no + 1, strip(e))))?;
        }
        if !probs_given {
            cfg.probs = vec![1.0 / cfg.n_rays.max(1) as f64; cfg.n_rays];
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "experiment_id" => self.experiment_id = v.to_string(),
            "n_rays" => self.n_rays = parse_int(key, v)?,
            "probs" => self.probs = parse_list(key, v, parse_f64)?,
            "t" => self.t = parse_f64(key, v)?,
            "dt" => self.dt = parse_f64(key, v)?,
            "meshes" => self.meshes = parse_list(key, v, parse_f64)?,
            "n_paths" => self.n_paths = parse_int(key, v)?,
            "r" => self.r = parse_list(key, v, parse_f64)?,
            "master_seed" => self.master_seed = parse_int(key, v)?,
            "workers" => self.workers = parse_int(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "n_rays_grid" => self.n_rays_grid = parse_list(key, v, parse_int)?,
            "n_check_paths" => self.n_check_paths = parse_int(key, v)?,
            "n_pilot" => self.n_pilot = parse_int(key, v)?,
            "n_drivers" => self.n_drivers = parse_int(key, v)?,
            "n_copies" => self.n_copies = parse_int(key, v)?,
            "n_functions" => self.n_functions = parse_int(key, v)?,
            "deltas" => self.deltas = parse_list(key, v, parse_f64)?,
            "eps_schedule" => self.eps_schedule = parse_list(key, v, parse_f64)?,
            "r_roundtrip" => self.r_roundtrip = parse_f64(key, v)?,
            "refine_reach" => self.refine_reach = parse_f64(key, v)?,
            "refine_depth" => self.refine_depth = parse_int(key, v)?,
            "sigma_mult" => self.sigma_mult = parse_f64(key, v)?,
            "alpha" => self.alpha = parse_f64(key, v)?,
            "slope_min" => self.slope_min = parse_f64(key, v)?,
            "slope_max" => self.slope_max = parse_f64(key, v)?,
            "lt_ratio_max" => self.lt_ratio_max = parse_f64(key, v)?,
            "n2_ratio_max" => self.n2_ratio_max = parse_f64(key, v)?,
            "cov_mult" => self.cov_mult = parse_f64(key, v)?,
            "corr_mult" => self.corr_mult = parse_f64(key, v)?,
            _ => return Err(Error::config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let id = self.experiment_id.as_str();
        if id != "all" && super::registry::lookup(id).is_none() {
            return Err(Error::config(format!("unknown experiment {id:?}")));
        }
        if self.probs.len() != self.n_rays {
            return Err(Error::config(format!(
                "probs has {} entries but n_rays = {}",
                self.probs.len(),
                self.n_rays
            )));
        }
        self.graph()?;
        if !(self.t > 0.0) {
            return Err(Error::config("t must be positive"));
        }
        if !(self.dt > 0.0) || self.dt > self.t {
            return Err(Error::config("dt must lie in (0, t]"));
        }
        strictly_decreasing("meshes", &self.meshes, 3)?;
        strictly_decreasing("deltas", &self.deltas, 3)?;
        if self.eps_schedule.len() != self.meshes.len() || self.eps_schedule.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::config(
                "eps_schedule needs one positive band width per mesh",
            ));
        }
        for (key, n) in [
            ("n_paths", self.n_paths),
            ("n_check_paths", self.n_check_paths),
            ("n_pilot", self.n_pilot),
            ("n_drivers", self.n_drivers),
        ] {
            if n < 100 {
                return Err(Error::config(format!("{key} must be at least 100, got {n}")));
            }
            if n > u32::MAX as usize {
                return Err(Error::config(format!("{key} exceeds 2^32 − 1")));
            }
        }
        if !(2..=u16::MAX as usize).contains(&self.n_copies) {
            return Err(Error::config("n_copies must lie in 2..=65535"));
        }
        if self.n_functions == 0 {
            return Err(Error::config("n_functions must be positive"));
        }
        if self.r.is_empty() || self.r.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::config("r needs at least one value in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.r_roundtrip) {
            return Err(Error::config("r_roundtrip must lie in [0, 1]"));
        }
        if self.n_rays_grid.is_empty() || self.n_rays_grid.iter().any(|&n| n < 2) {
            return Err(Error::config("n_rays_grid needs ray counts of at least 2"));
        }
        if !(self.refine_reach >= 0.0) || self.refine_depth > 40 {
            return Err(Error::config(
                "refine_reach must be non-negative and refine_depth at most 40",
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config("alpha must lie in (0, 1)"));
        }
        if !(self.slope_min < self.slope_max) {
            return Err(Error::config("slope_min must be below slope_max"));
        }
        for (key, x) in [
            ("sigma_mult", self.sigma_mult),
            ("lt_ratio_max", self.lt_ratio_max),
            ("n2_ratio_max", self.n2_ratio_max),
            ("cov_mult", self.cov_mult),
            ("corr_mult", self.corr_mult),
        ] {
            if !(x > 0.0) {
                return Err(Error::config(format!("{key} must be positive")));
            }
        }
        Ok(())
    }

    pub fn graph(&self) -> Result<StarGraph> {
        StarGraph::new(self.probs.clone())
            .map_err(|e| Error::config(format!("star graph: {}", strip(e))))
    }

    pub fn refinement(&self) -> CornerRefinement {
        CornerRefinement {
            reach: self.refine_reach,
            max_depth: self.refine_depth,
        }
    }

    /// Number of grid steps up to `t` at mesh `dt`.
    pub fn steps(&self, dt: f64) -> usize {
        ((self.t / dt).round() as usize).max(1)
    }

    /// Canonical text form; parsing it gives back the same config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("experiment_id", self.experiment_id.clone()),
            ("n_rays", self.n_rays.to_string()),
            ("probs", join(&self.probs)),
            ("t", self.t.to_string()),
            ("dt", self.dt.to_string()),
            ("meshes", join(&self.meshes)),
            ("n_paths", self.n_paths.to_string()),
            ("r", join(&self.r)),
            ("master_seed", self.master_seed.to_string()),
            ("workers", self.workers.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("n_rays_grid", join(&self.n_rays_grid)),
            ("n_check_paths", self.n_check_paths.to_string()),
            ("n_pilot", self.n_pilot.to_string()),
            ("n_drivers", self.n_drivers.to_string()),
            ("n_copies", self.n_copies.to_string()),
            ("n_functions", self.n_functions.to_string()),
            ("deltas", join(&self.deltas)),
            ("eps_schedule", join(&self.eps_schedule)),
            ("r_roundtrip", self.r_roundtrip.to_string()),
            ("refine_reach", self.refine_reach.to_string()),
            ("refine_depth", self.refine_depth.to_string()),
            ("sigma_mult", self.sigma_mult.to_string()),
            ("alpha", self.alpha.to_string()),
            ("slope_min", self.slope_min.to_string()),
            ("slope_max", self.slope_max.to_string()),
            ("lt_ratio_max", self.lt_ratio_max.to_string()),
            ("n2_ratio_max", self.n2_ratio_max.to_string()),
            ("cov_mult", self.cov_mult.to_string()),
            ("corr_mult", self.corr_mult.to_string()),
        ]
    }

    /// SHA-256 of the canonical text without `workers` and `out_dir`, which
    /// do not influence results.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if k != "workers" && k != "out_dir" {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) | Error::InvalidPoint(m) => m,
        other => other.to_string(),
    }
}
