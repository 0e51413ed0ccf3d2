//! Monte Carlo summaries and hypothesis tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Simulation parameters attached to an estimate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    pub n_paths: usize,
    pub n_rays: usize,
    pub probs: Vec<f64>,
    pub t: f64,
    pub dt: f64,
    pub r: Option<f64>,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub name: String,
    pub estimate: f64,
    pub stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    pub params: RunParams,
}

impl EstimateReport {
    /// Report with a two-sided 95% normal interval.
    pub fn new(name: impl Into<String>, estimate: f64, stderr: f64, n: usize, params: RunParams) -> Self {
        let half = Z_975 * stderr;
        EstimateReport {
            name: name.into(),
            estimate,
            stderr,
            ci_low: estimate - half,
            ci_high: estimate + half,
            n,
            params,
        }
    }

    /// `(estimate − target) / stderr`, infinite when the error is zero and
    /// the estimate misses.
    pub fn z_score(&self, target: f64) -> f64 {
        let d = self.estimate - target;
        if self.stderr > 0.0 {
            d / self.stderr
        } else if d == 0.0 {
            0.0
        } else {
            d.signum() * f64::INFINITY
        }
    }
}

/// 97.5% standard normal quantile.
pub const Z_975: f64 = 1.959_963_984_540_054;

/// Streaming mean and variance (Welford), mergeable across chunks.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = (self.n + other.n) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n;
        self.m2 += other.m2 + d * d * self.n as f64 * other.n as f64 / n;
        self.n += other.n;
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            f64::NAN
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::new();
        for x in iter {
            m.push(x);
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
    pub dof: usize,
    pub reject_at_5pct: bool,
}

impl TestOutcome {
    fn new(statistic: f64, p_value: f64, dof: usize) -> Self {
        TestOutcome {
            statistic,
            p_value,
            dof,
            reject_at_5pct: p_value < 0.05,
        }
    }
}

/// Sample mean with standard error and 95% interval.
pub fn mc_mean(name: &str, samples: &[f64], params: RunParams) -> Result<EstimateReport> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{name}: need at least 2 samples, got {}",
            samples.len()
        )));
    }
    let m: Moments = samples.iter().copied().collect();
    Ok(EstimateReport::new(name, m.mean, m.stderr(), m.n, params))
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Two-sided normal p-value of a z score.
pub fn two_sided_p(z: f64) -> f64 {
    if !z.is_finite() {
        return 0.0;
    }
    2.0 * Normal::standard().sf(z.abs())
}

/// Upper tail of the chi-square law.
pub fn chi_square_sf(statistic: f64, dof: usize) -> f64 {
    ChiSquared::new(dof as f64)
        .map(|c| c.sf(statistic))
        .unwrap_or(f64::NAN)
}

/// Pearson chi-square test of independence on a contingency table.
///
/// Empty rows and columns are dropped before counting degrees of freedom.
pub fn contingency_test(table: &[Vec<u64>]) -> Result<TestOutcome> {
    let cols = table.first().map_or(0, |r| r.len());
    if table.iter().any(|r| r.len() != cols) {
        return Err(Error::config("contingency table rows differ in length"));
    }
    let row_sums: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<u64> = (0..cols).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let total: u64 = row_sums.iter().sum();
    let live_rows = row_sums.iter().filter(|s| **s > 0).count();
    let live_cols = col_sums.iter().filter(|s| **s > 0).count();
    if total == 0 || live_rows < 2 || live_cols < 2 {
        return Err(Error::InsufficientData(
            "contingency table needs two nonempty rows and columns".into(),
        ));
    }
    let mut stat = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &obs) in row.iter().enumerate() {
            if row_sums[i] == 0 || col_sums[j] == 0 {
                continue;
            }
            let e = row_sums[i] as f64 * col_sums[j] as f64 / total as f64;
            stat += (obs as f64 - e).powi(2) / e;
        }
    }
    let dof = (live_rows - 1) * (live_cols - 1);
    Ok(TestOutcome::new(stat, chi_square_sf(stat, dof), dof))
}

/// Chi-square independence test of paired ray labels in `1..=n_rays`.
///
/// Requires at least `5·N²` pairs so that expected cell counts are not tiny.
pub fn chi_square_independence(labels_x: &[usize], labels_y: &[usize], n_rays: usize) -> Result<TestOutcome> {
    if labels_x.len() != labels_y.len() {
        return Err(Error::config("label sequences differ in length"));
    }
    if n_rays < 2 {
        return Err(Error::config("need at least two labels"));
    }
    let need = 5 * n_rays * n_rays;
    if labels_x.len() < need {
        return Err(Error::InsufficientData(format!(
            "need at least {need} label pairs, got {}",
            labels_x.len()
        )));
    }
    let mut table = vec![vec![0u64; n_rays]; n_rays];
    for (&a, &b) in labels_x.iter().zip(labels_y) {
        if a == 0 || a > n_rays || b == 0 || b > n_rays {
            return Err(Error::config(format!("label out of range 1..={n_rays}: ({a}, {b})")));
        }
        table[a - 1][b - 1] += 1;
    }
    contingency_test(&table)
}

/// Chi-square goodness of fit of labels in `1..=N` against `probs`.
pub fn chi_square_goodness_of_fit(labels: &[usize], probs: &[f64]) -> Result<TestOutcome> {
    let n = probs.len();
    if labels.len() < 5 * n {
        return Err(Error::InsufficientData(format!(
            "need at least {} labels, got {}",
            5 * n,
            labels.len()
        )));
    }
    let mut counts = vec![0u64; n];
    for &l in labels {
        if l == 0 || l > n {
            return Err(Error::config(format!("label out of range 1..={n}: {l}")));
        }
        counts[l - 1] += 1;
    }
    let total = labels.len() as f64;
    let stat: f64 = counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| (c as f64 - total * p).powi(2) / (total * p))
        .sum();
    Ok(TestOutcome::new(stat, chi_square_sf(stat, n - 1), n - 1))
}

/// Excess of the sample variance over `floor`, with the standard error of
/// the sample variance from the fourth central moment.
pub fn variance_excess(samples: &[f64], floor: f64) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData("need at least 2 samples".into()));
    }
    let m: Moments = samples.iter().copied().collect();
    let var = m.variance();
    let n = samples.len() as f64;
    let m4 = samples.iter().map(|f| (f - m.mean).powi(4)).sum::<f64>() / n;
    Ok((var - floor, ((m4 - var * var).max(0.0) / n).sqrt()))
}

/// Result of a martingale increment test against a family of bounded
/// past-measurable features.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleReport {
    /// Per-feature z scores of `E[ΔM · φ] = 0`.
    pub z_scores: Vec<f64>,
    pub p_values: Vec<f64>,
    /// Smallest p-value times the number of features, capped at 1.
    pub bonferroni_p: f64,
    pub reject_at_5pct: bool,
}

/// Tests `E[(M_t − M_s) φ_j] = 0` for every feature `j`.
///
/// `increments[i]` is the increment on sample `i`, `features[j][i]` the
/// value of feature `j` on sample `i`.
pub fn martingale_test(increments: &[f64], features: &[Vec<f64>]) -> Result<MartingaleReport> {
    if features.is_empty() {
        return Err(Error::config("martingale test needs at least one feature"));
    }
    if increments.len() < 2 {
        return Err(Error::InsufficientData("need at least 2 samples".into()));
    }
    let mut z_scores = Vec::with_capacity(features.len());
    let mut p_values = Vec::with_capacity(features.len());
    for phi in features {
        if phi.len() != increments.len() {
            return Err(Error::config("feature and increment samples differ in length"));
        }
        let m: Moments = increments.iter().zip(phi).map(|(d, f)| d * f).collect();
        let z = if m.stderr() > 0.0 { m.mean / m.stderr() } else { 0.0 };
        z_scores.push(z);
        p_values.push(two_sided_p(z));
    }
    let min_p = p_values.iter().copied().fold(1.0f64, f64::min);
    let bonferroni_p = (min_p * features.len() as f64).min(1.0);
    Ok(MartingaleReport {
        z_scores,
        p_values,
        bonferroni_p,
        reject_at_5pct: bonferroni_p < 0.05,
    })
}

/// Kolmogorov survival function `Q(λ) = 2 Σ (−1)^{k−1} e^{−2k²λ²}`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Scaled statistic `(√n + 0.12 + 0.11/√n) D` whose law is close to
/// Kolmogorov's already for moderate `n`.
fn ks_lambda(n: usize, d: f64) -> f64 {
    let s = (n as f64).sqrt();
    (s + 0.12 + 0.11 / s) * d
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<TestOutcome> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("KS test needs samples".into()));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let p = kolmogorov_sf(ks_lambda(xs.len(), d));
    Ok(TestOutcome {
        statistic: d,
        p_value: p,
        dof: xs.len(),
        reject_at_5pct: p < 0.05,
    })
}

/// Critical value of the KS distance at level `alpha` for `n` samples.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    // bisection on the monotone Kolmogorov tail
    let (mut lo, mut hi) = (0.2, 5.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_sf(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = (n as f64).sqrt();
    0.5 * (lo + hi) / (s + 0.12 + 0.11 / s)
}

/// CDF of the arcsine law on `[0, t]`.
pub fn arcsine_cdf(x: f64, t: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= t {
        1.0
    } else {
        2.0 / std::f64::consts::PI * (x / t).sqrt().asin()
    }
}

/// Behaviour of a quantity measured at a geometric sequence of scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VanishingScan {
    pub scales: Vec<f64>,
    pub estimates: Vec<f64>,
    pub stderrs: Vec<f64>,
    /// Least-squares slope of `log |estimate|` against `log scale`.
    pub exponent: f64,
    /// Estimates decrease strictly as the scale shrinks.
    pub strictly_decreasing: bool,
    /// Estimate at the largest scale exceeds the one at the smallest by
    /// more than twice their joint standard error.
    pub extremes_separated: bool,
}

/// Fits the decay of `estimates` (measured at `scales`) towards zero.
pub fn vanishing_scan(scales: &[f64], estimates: &[f64], stderrs: &[f64]) -> Result<VanishingScan> {
    if scales.len() != estimates.len() || scales.len() != stderrs.len() {
        return Err(Error::config("scan vectors differ in length"));
    }
    if scales.len() < 3 {
        return Err(Error::config(format!(
            "a scan needs at least 3 scales, got {}",
            scales.len()
        )));
    }
    if scales.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::config("scan scales must be positive"));
    }
    let mut idx: Vec<usize> = (0..scales.len()).collect();
    idx.sort_by(|&a, &b| scales[b].total_cmp(&scales[a]));
    let ratios: Vec<f64> = idx.windows(2).map(|w| scales[w[0]] / scales[w[1]]).collect();
    if ratios.iter().any(|q| (q - ratios[0]).abs() > 1e-6 * ratios[0]) {
        return Err(Error::config("scan scales must form a geometric sequence"));
    }
    let xs: Vec<f64> = idx.iter().map(|&i| scales[i].ln()).collect();
    let ys: Vec<f64> = idx
        .iter()
        .map(|&i| estimates[i].abs().max(f64::MIN_POSITIVE).ln())
        .collect();
    let exponent = least_squares_slope(&xs, &ys);
    let strictly_decreasing = idx.windows(2).all(|w| estimates[w[1]] < estimates[w[0]]);
    let (first, last) = (idx[0], idx[idx.len() - 1]);
    let joint = (stderrs[first].powi(2) + stderrs[last].powi(2)).sqrt();
    let extremes_separated = estimates[first] - estimates[last] > 2.0 * joint;
    Ok(VanishingScan {
        scales: idx.iter().map(|&i| scales[i]).collect(),
        estimates: idx.iter().map(|&i| estimates[i]).collect(),
        stderrs: idx.iter().map(|&i| stderrs[i]).collect(),
        exponent,
        strictly_decreasing,
        extremes_separated,
    })
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Pearson correlation of two samples.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}
