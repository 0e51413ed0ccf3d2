//! Pathwise functionals: local times, last zeros, covariations, the spider
//! components and the residuals of the interface SDE and the Freidlin–Sheu
//! formula.
//!
//! Stochastic integrals use the left-point rule. At a zero visit the
//! integrand is evaluated on the freshly chosen ray, i.e. on the ray stored
//! in [`SamplePath::step_rays`].

use crate::error::{Error, Result};
use crate::noise::DriverPath;
use crate::sde_sim::{CouplingRun, SamplePath};
use crate::star_graph::{self, GraphFunction, GraphPoint, SpiderComponent, StarGraph};

/// Boundary overshoot of a Gaussian random walk in units of its step
/// standard deviation, `−ζ(1/2)/√(2π)`.
pub const OVERSHOOT: f64 = 0.582_597_157_939_010_6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalTimeMethod {
    Occupation,
    Downcrossing,
    Tanaka,
}

/// Local time estimate at `level`, normalised so that a reflected Brownian
/// motion `R = B + L` has local time `L` at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTimeEstimate {
    pub level: f64,
    pub epsilon: f64,
    pub value: f64,
    pub method: LocalTimeMethod,
}

/// `(rate / 2ε) · dt · #{k : |x_k − a| < ε}` over left endpoints.
pub fn local_time_occupation(
    radial: &[f64],
    dt: f64,
    a: f64,
    eps: f64,
    rate: f64,
) -> Result<LocalTimeEstimate> {
    if !(eps > 0.0) {
        return Err(Error::config(format!("band half-width must be positive, got {eps}")));
    }
    let n = radial.len().saturating_sub(1);
    let count = radial[..n].iter().filter(|x| (**x - a).abs() < eps).count();
    Ok(LocalTimeEstimate {
        level: a,
        epsilon: eps,
        value: rate * dt * count as f64 / (2.0 * eps),
        method: LocalTimeMethod::Occupation,
    })
}

/// Downcrossing count of the band `[a+ε, a+2ε]`, scaled by the band width
/// widened for the grid overshoot at both edges.
///
/// The band sits one width above `a` so both edges are resolved by grid
/// paths that never land exactly on a reflecting level.
pub fn local_time_downcrossing(radial: &[f64], dt: f64, a: f64, eps: f64) -> Result<LocalTimeEstimate> {
    if !(eps > 0.0) {
        return Err(Error::config(format!("band half-width must be positive, got {eps}")));
    }
    let lo = a + eps;
    let hi = a + 2.0 * eps;
    let mut armed = false;
    let mut count = 0usize;
    for &x in radial {
        if x >= hi {
            armed = true;
        } else if armed && x <= lo {
            count += 1;
            armed = false;
        }
    }
    let width = eps + 2.0 * OVERSHOOT * dt.sqrt();
    Ok(LocalTimeEstimate {
        level: a,
        epsilon: eps,
        value: width * count as f64,
        method: LocalTimeMethod::Downcrossing,
    })
}

/// Local time read off the Tanaka bookkeeping of the path.
pub fn local_time_tanaka(path: &SamplePath, k: usize) -> LocalTimeEstimate {
    LocalTimeEstimate {
        level: 0.0,
        epsilon: 0.0,
        value: path.local_time[k] - path.local_time[0],
        method: LocalTimeMethod::Tanaka,
    }
}

/// `D_k = d(X̄_k, Ȳ_k)` along a coupling.
pub fn spider_distance_series(g: &StarGraph, run: &CouplingRun) -> Vec<f64> {
    run.x_path
        .points
        .iter()
        .zip(&run.y_path.points)
        .map(|(x, y)| {
            star_graph::distance_unchecked(
                star_graph::spider_transform(g, *x),
                star_graph::spider_transform(g, *y),
            )
        })
        .collect()
}

/// One-sided local time at `0+` of a nonnegative semimartingale `S`:
/// `(1/2ε) Σ_{0 < S_k < ε} m_k²`, where `m_k` is the martingale increment of
/// `S` over step `k`. Squared increments of `S` itself would undercount near a
/// reflecting boundary.
pub fn one_sided_local_time(series: &[f64], martingale: &[f64], eps: f64) -> Result<LocalTimeEstimate> {
    if !(eps > 0.0) {
        return Err(Error::config(format!("band half-width must be positive, got {eps}")));
    }
    if martingale.len() + 1 != series.len() {
        return Err(Error::config(format!(
            "{} increments for a series of {} points",
            martingale.len(),
            series.len()
        )));
    }
    let sum: f64 = series
        .iter()
        .zip(martingale)
        .filter(|(s, _)| **s > 0.0 && **s < eps)
        .map(|(_, m)| m * m)
        .sum();
    Ok(LocalTimeEstimate {
        level: 0.0,
        epsilon: eps,
        value: sum / (2.0 * eps),
        method: LocalTimeMethod::Occupation,
    })
}

/// Martingale increments of `D = d(X̄, Ȳ)`: `dB^X + dB^Y` while the legs are
/// on different rays, `±(dB^X − dB^Y)` while they share one.
pub fn distance_martingale_increments(run: &CouplingRun) -> Vec<f64> {
    let (x, y) = (&run.x_path, &run.y_path);
    (0..x.steps())
        .map(|k| {
            let (bx, by) = (x.bx_increments[k], y.bx_increments[k]);
            match (x.points[k], y.points[k]) {
                (GraphPoint::Ray { ray: i, radius: a }, GraphPoint::Ray { ray: j, radius: b }) if i == j => {
                    if a >= b {
                        bx - by
                    } else {
                        by - bx
                    }
                }
                _ => bx + by,
            }
        })
        .collect()
}

/// Local time at zero of `D = d(X̄, Ȳ)` over the whole run.
pub fn local_time_of_distance(g: &StarGraph, run: &CouplingRun, eps: f64) -> Result<LocalTimeEstimate> {
    one_sided_local_time(
        &spider_distance_series(g, run),
        &distance_martingale_increments(run),
        eps,
    )
}

/// Local time at zero of `|X|` by the estimator used for the distance.
pub fn local_time_of_radius(path: &SamplePath, eps: f64) -> Result<LocalTimeEstimate> {
    let radial: Vec<f64> = (0..path.points.len()).map(|k| path.radius(k)).collect();
    one_sided_local_time(&radial, &path.bx_increments, eps)
}

/// Last zero visit at or before `t`.
pub fn last_zero(path: &SamplePath, t: f64) -> Result<f64> {
    let k = ((t / path.dt) + 1e-9).floor() as usize;
    let pos = path.zeros.partition_point(|z| z.index <= k);
    if pos == 0 {
        return Err(Error::Consistency(format!(
            "no zero visit before t = {t}; paths must start at the origin"
        )));
    }
    Ok(path.zeros[pos - 1].time)
}

/// Running `Σ_{j<k} u_j v_j`, aligned with grid times (`K + 1` entries,
/// starting at 0).
pub fn quadratic_covariation(u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    if u.len() != v.len() {
        return Err(Error::config(format!(
            "increment sequences differ in length: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let mut out = Vec::with_capacity(u.len() + 1);
    let mut acc = 0.0;
    out.push(acc);
    for (a, b) in u.iter().zip(v) {
        acc += a * b;
        out.push(acc);
    }
    Ok(out)
}

/// Signed terms of a discretised Itô-type formula, one value per grid time.
///
/// `residual = lhs − martingale − drift − local_time_term` everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    /// `f(X_t) − f(X_0)`.
    pub lhs: Vec<f64>,
    /// `Σ f'(X_s) dW^{ε(X_s)}` (or `dB^X`).
    pub martingale: Vec<f64>,
    /// `½ Σ f''(X_s) ds`.
    pub drift: Vec<f64>,
    /// `Σ p_i (f∘e_i)'(0+) L_t(|X|)`; identically zero for the interface SDE.
    pub local_time_term: Vec<f64>,
    pub residual: Vec<f64>,
    /// Coefficient `Σ p_i (f∘e_i)'(0+)` of the local time term.
    pub local_time_coefficient: f64,
    pub sup_abs_residual: f64,
}

impl ResidualReport {
    /// Largest absolute value of each term over the grid, in field order.
    pub fn term_magnitudes(&self) -> [f64; 4] {
        let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        [
            sup(&self.lhs),
            sup(&self.martingale),
            sup(&self.drift),
            sup(&self.local_time_term),
        ]
    }
}

#[inline]
fn step_point(path: &SamplePath, k: usize) -> GraphPoint {
    GraphPoint::Ray {
        ray: path.step_rays[k] as usize,
        radius: path.radius(k),
    }
}

fn residual_report<F: GraphFunction + ?Sized>(
    g: &StarGraph,
    path: &SamplePath,
    f: &F,
    increment: impl Fn(usize) -> f64,
    lt_coefficient: f64,
) -> ResidualReport {
    let n = path.points.len();
    let f0 = f.eval(g, path.points[0]).value;
    let l0 = path.local_time[0];
    let mut lhs = Vec::with_capacity(n);
    let mut martingale = Vec::with_capacity(n);
    let mut drift = Vec::with_capacity(n);
    let mut local_time_term = Vec::with_capacity(n);
    let mut residual = Vec::with_capacity(n);
    let mut m = 0.0;
    let mut d = 0.0;
    let mut sup: f64 = 0.0;
    for k in 0..n {
        let value = f.eval(g, path.points[k]).value - f0;
        let lt = lt_coefficient * (path.local_time[k] - l0);
        let r = value - m - d - lt;
        sup = sup.max(r.abs());
        lhs.push(value);
        martingale.push(m);
        drift.push(d);
        local_time_term.push(lt);
        residual.push(r);
        if k + 1 < n {
            let jet = f.eval(g, step_point(path, k));
            m += jet.d1 * increment(k);
            d += 0.5 * jet.d2 * path.dt;
        }
    }
    ResidualReport {
        lhs,
        martingale,
        drift,
        local_time_term,
        residual,
        local_time_coefficient: lt_coefficient,
        sup_abs_residual: sup,
    }
}

/// Residual of `f(X_t) = f(x) + Σ_i ∫ f'(X_s) 1_{X_s∈E_i} dW^i_s + ½ ∫ f''(X_s) ds`
/// for `f` in the class `D`.
pub fn interface_sde_residual<F: GraphFunction + ?Sized>(
    g: &StarGraph,
    path: &SamplePath,
    w: &DriverPath,
    f: &F,
) -> Result<ResidualReport> {
    if !f.in_class_d(g) {
        return Err(Error::Precondition(format!(
            "test function is not in class D: Σ p_i f_i'(0+) = {}",
            f.origin_slope(g)
        )));
    }
    if w.steps != path.steps() || w.n_rays != g.n_rays() {
        return Err(Error::config("driver and path do not share one grid"));
    }
    Ok(residual_report(
        g,
        path,
        f,
        |k| w.dw(k, path.step_rays[k] as usize),
        0.0,
    ))
}

/// Residual of the Freidlin–Sheu formula
/// `f(X_t) = f(x) + ∫ f'(X_s) dB^X_s + ½ ∫ f''(X_s) ds + Σ p_i (f∘e_i)'(0+) L_t(|X|)`.
pub fn freidlin_sheu_residual<F: GraphFunction + ?Sized>(
    g: &StarGraph,
    path: &SamplePath,
    f: &F,
) -> ResidualReport {
    let coefficient = f.origin_slope(g);
    residual_report(g, path, f, |k| path.bx_increments[k], coefficient)
}

/// The `N` spider components `X̄^i_t` (radius of `X̄` on ray `i`, else 0).
pub fn spider_components(g: &StarGraph, path: &SamplePath) -> Vec<Vec<f64>> {
    let n = g.n_rays();
    let mut out = vec![Vec::with_capacity(path.points.len()); n];
    for x in &path.points {
        let eps = star_graph::epsilon(*x);
        let r = star_graph::spider_radius(g, *x);
        for (i, series) in out.iter_mut().enumerate() {
            series.push(if eps == Some(i + 1) { r } else { 0.0 });
        }
    }
    out
}

/// Right-hand sides `(1/Np_i) Σ 1_{X∈E_i} ΔB^X + L_t(|X|)/N` of the spider
/// decomposition, one series per ray.
pub fn spider_decomposition(g: &StarGraph, path: &SamplePath) -> Vec<Vec<f64>> {
    let n = g.n_rays();
    (1..=n)
        .map(|i| {
            let c = SpiderComponent::new(g, i);
            let mut acc = 0.0;
            let mut out = Vec::with_capacity(path.points.len());
            for k in 0..path.points.len() {
                out.push(acc + (path.local_time[k] - path.local_time[0]) / n as f64);
                if k < path.steps() && path.step_rays[k] as usize == i {
                    acc += c.scale * path.bx_increments[k];
                }
            }
            out
        })
        .collect()
}

/// Fractions of the local time of `|X|` (resp. `|Y|`) gained while the other
/// leg is at the origin.
///
/// The other leg counts as at the origin at grid index `k` when its radius
/// is at most `theta` or `k` is one of its zero visits.
pub fn local_time_exclusion(run: &CouplingRun, theta: f64) -> (f64, f64) {
    fn fraction(a: &SamplePath, b: &SamplePath, theta: f64) -> f64 {
        let flags = b.zero_flags();
        let total = a.local_time[a.local_time.len() - 1] - a.local_time[0];
        if total <= 0.0 {
            return 0.0;
        }
        let shared: f64 = (0..a.steps())
            .filter(|&k| flags[k + 1] || b.radius(k + 1) <= theta)
            .map(|k| a.local_time[k + 1] - a.local_time[k])
            .sum();
        shared / total
    }
    (
        fraction(&run.x_path, &run.y_path, theta),
        fraction(&run.y_path, &run.x_path, theta),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{gen_driver, SeedSpec};
    use crate::sde_sim::{simulate_interface_euler, simulate_wbm_exact, simulate_wiener_coupling};
    use crate::star_graph::TestFunction;

    fn seed(id: u64) -> SeedSpec {
        SeedSpec::new(99, id)
    }

    #[test]
    fn occupation_of_constant_far_path_is_zero() {
        let e = local_time_occupation(&[5.0; 100], 0.01, 0.0, 0.1, 1.0).unwrap();
        assert_eq!(e.value, 0.0);
        assert!(local_time_occupation(&[0.0; 3], 0.01, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn one_sided_local_time_of_zero_series_is_zero() {
        assert_eq!(one_sided_local_time(&[0.0; 50], &[1.0; 49], 0.01).unwrap().value, 0.0);
        assert!(one_sided_local_time(&[0.0; 50], &[1.0; 50], 0.01).is_err());
    }

    #[test]
    fn identical_legs_have_no_distance_local_time() {
        let g = StarGraph::uniform(3).unwrap();
        let w = gen_driver(3, 1e-3, 1000, seed(1)).unwrap();
        let x = simulate_interface_euler(&g, &w, seed(2), GraphPoint::Origin).unwrap();
        let run = CouplingRun {
            x_path: x.clone(),
            y_path: x,
            w,
            w_hat: None,
            r: None,
        };
        assert_eq!(local_time_of_distance(&g, &run, 0.01).unwrap().value, 0.0);
        let (a, b) = local_time_exclusion(&run, 1e-3f64.sqrt());
        assert_eq!((a, b), (1.0, 1.0));
    }

    #[test]
    fn last_zero_examples() {
        let g = StarGraph::uniform(2).unwrap();
        let w = gen_driver(2, 1e-3, 200, seed(1)).unwrap();
        let mut w_up = w.clone();
        // both coordinates drift upward fast: no return to the origin
        for x in &mut w_up.increments {
            *x = 0.05;
        }
        let p = simulate_interface_euler(&g, &w_up, seed(2), GraphPoint::Origin).unwrap();
        // only the launch from the origin, inside the first step
        let z = last_zero(&p, 0.2).unwrap();
        assert!((0.0..1e-3).contains(&z));
        assert_eq!(p.zeros.len(), 2);

        let q = simulate_interface_euler(&g, &w, seed(3), GraphPoint::Origin).unwrap();
        let mut prev = 0.0;
        for k in 0..=200 {
            let t = k as f64 * 1e-3;
            let z = last_zero(&q, t).unwrap();
            assert!(z <= t + 1e-12);
            assert!(z >= prev);
            prev = z;
        }
        let far = simulate_interface_euler(&g, &w_up, seed(2), GraphPoint::on_ray(1, 3.0)).unwrap();
        assert!(matches!(last_zero(&far, 0.1), Err(Error::Consistency(_))));
    }

    #[test]
    fn covariation_is_running_sum() {
        let c = quadratic_covariation(&[1.0, 2.0, 3.0], &[1.0, -1.0, 2.0]).unwrap();
        assert_eq!(c, vec![0.0, 1.0, -1.0, 5.0]);
        assert!(quadratic_covariation(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_function_has_zero_residual() {
        let g = StarGraph::uniform(3).unwrap();
        let w = gen_driver(3, 1e-3, 500, seed(5)).unwrap();
        let p = simulate_interface_euler(&g, &w, seed(6), GraphPoint::Origin).unwrap();
        let f = TestFunction::zero(3);
        assert_eq!(interface_sde_residual(&g, &p, &w, &f).unwrap().sup_abs_residual, 0.0);
        assert_eq!(freidlin_sheu_residual(&g, &p, &f).sup_abs_residual, 0.0);
    }

    #[test]
    fn residual_requires_class_d() {
        let g = StarGraph::uniform(2).unwrap();
        let w = gen_driver(2, 1e-3, 10, seed(5)).unwrap();
        let p = simulate_interface_euler(&g, &w, seed(6), GraphPoint::Origin).unwrap();
        let f = TestFunction::new(vec![1.0, 0.0], vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            interface_sde_residual(&g, &p, &w, &f),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn residual_off_interface_is_taylor_remainder() {
        // path far out on ray 1: no zero visits, residual is a sum of
        // per-step Taylor remainders of size O(dt)
        let g = StarGraph::uniform(2).unwrap();
        let dt = 1e-4;
        let w = gen_driver(2, dt, 100, seed(8)).unwrap();
        let p = simulate_interface_euler(&g, &w, seed(9), GraphPoint::on_ray(1, 1.0)).unwrap();
        assert!(p.zeros.is_empty());
        let f = TestFunction::new(vec![0.5, -0.5], vec![0.3, 0.1]).unwrap();
        let rep = interface_sde_residual(&g, &p, &w, &f).unwrap();
        for k in 1..rep.residual.len() {
            let step = (rep.residual[k] - rep.residual[k - 1]).abs();
            assert!(step < 10.0 * dt, "step {k}: {step}");
        }
    }

    #[test]
    fn residual_terms_sum_to_residual() {
        let g = StarGraph::new(vec![0.5, 0.25, 0.25]).unwrap();
        let p = simulate_wbm_exact(&g, 1.0, 1e-3, seed(3), GraphPoint::Origin).unwrap();
        let f = TestFunction::new(vec![1.0, -0.5, 0.2], vec![0.4, -0.3, 0.8]).unwrap();
        let rep = freidlin_sheu_residual(&g, &p, &f);
        for k in 0..rep.residual.len() {
            let s = rep.lhs[k] - rep.martingale[k] - rep.drift[k] - rep.local_time_term[k];
            assert!((s - rep.residual[k]).abs() < 1e-12);
        }
        let fd = f.clone().project_to_class_d(&g);
        let rep_d = freidlin_sheu_residual(&g, &p, &fd);
        assert!(rep_d.local_time_coefficient.abs() < 1e-12);
        assert!(rep_d.term_magnitudes()[3] < 1e-12);
    }

    #[test]
    fn spider_components_sum_to_transformed_radius() {
        let g = StarGraph::new(vec![0.5, 0.3, 0.2]).unwrap();
        let p = simulate_wbm_exact(&g, 1.0, 1e-3, seed(4), GraphPoint::Origin).unwrap();
        let comps = spider_components(&g, &p);
        for k in 0..p.points.len() {
            let total: f64 = comps.iter().map(|c| c[k]).sum();
            assert_eq!(total, star_graph::spider_radius(&g, p.points[k]));
        }
        assert!(comps.iter().all(|c| c[0] == 0.0));
    }

    #[test]
    fn wiener_coupling_distance_series_starts_at_zero() {
        let g = StarGraph::uniform(3).unwrap();
        let w = gen_driver(3, 1e-3, 100, seed(1)).unwrap();
        let run = simulate_wiener_coupling(&g, &w, seed(2), seed(3)).unwrap();
        let d = spider_distance_series(&g, &run);
        assert_eq!(d.len(), 101);
        assert_eq!(d[0], 0.0);
        assert!(d.iter().all(|x| *x >= 0.0));
    }
}
