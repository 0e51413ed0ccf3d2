use std::f64::consts::PI;

use super::{ExperimentConfig, ExperimentInfo, ResultRecord};
use crate::error::{Error, Result};
use crate::estimators::{
    freidlin_sheu_residual, interface_sde_residual, last_zero, local_time_of_distance,
    local_time_of_radius, spider_components, spider_decomposition,
};
use crate::noise::{gen_driver, mix_drivers, DriverPath, Purpose, SeedSpec};
use crate::parallel::map_indexed;
use crate::sde_sim::{
    construct_driver_from_solution, r_coupling_with, simulate_conditional_ensemble,
    simulate_interface_euler, simulate_wbm_exact, wiener_coupling_with, CouplingRun, SamplePath,
    ZeroVisit,
};
use crate::star_graph::{distance, epsilon, spider_radius, spider_transform, GraphPoint, StarGraph, TestFunction};
use crate::stats::{
    arcsine_cdf, chi_square_goodness_of_fit, chi_square_independence, contingency_test,
    ks_critical, ks_test, least_squares_slope, martingale_test, normal_cdf, vanishing_scan,
    variance_excess, Moments,
};

pub(super) fn run(cfg: &ExperimentConfig, info: &'static ExperimentInfo) -> Result<Vec<ResultRecord>> {
    let c = Ctx { cfg, info };
    match info.id {
        "E1" => marginals(&c),
        "E2" => interface_residuals(&c),
        "E3" => freidlin_sheu(&c),
        "E4" => distance_mean(&c),
        "E5" => distance_martingale(&c),
        "E6" => label_independence(&c),
        "E7" => distance_local_time(&c),
        "E8" => covariation(&c),
        "E9" => perturbed_sweep(&c),
        "E10" => coincidence_scans(&c),
        "E11" => two_rays(&c),
        "E12" => round_trip(&c),
        "E13" => conditional_labels(&c),
        other => Err(Error::config(format!("unknown experiment {other:?}"))),
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    info: &'static ExperimentInfo,
}

impl Ctx<'_> {
    fn rec(&self, name: impl Into<String>, estimate: f64) -> ResultRecord {
        ResultRecord::new(self.cfg, self.info, name, estimate)
    }

    fn seed(&self, purpose: Purpose, sub: u16, i: usize) -> SeedSpec {
        SeedSpec::derive(self.cfg.master_seed, self.info.ordinal, purpose, i as u32).with_sub(sub)
    }

    fn driver(&self, purpose: Purpose, sub: u16, n_rays: usize, dt: f64, i: usize) -> Result<DriverPath> {
        gen_driver(n_rays, dt, self.cfg.steps(dt), self.seed(purpose, sub, i))
    }

    /// The fine driver observed on a mesh `factor` times coarser; a fresh
    /// driver when the step count does not divide.
    fn coarse(&self, fine: &DriverPath, factor: usize, purpose: Purpose, sub: u16, i: usize) -> Result<DriverPath> {
        if fine.steps % factor == 0 {
            fine.coarsen(factor)
        } else {
            let sub = 0x4000 | (sub << 4) | factor as u16;
            self.driver(purpose, sub, fine.n_rays, fine.dt * factor as f64, i)
        }
    }

    fn par<T: Send>(&self, n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
        map_indexed(n, self.cfg.workers, f).into_iter().collect()
    }

    fn wiener(&self, g: &StarGraph, w: &DriverPath, sub: u16, i: usize) -> Result<CouplingRun> {
        wiener_coupling_with(
            g,
            w,
            self.seed(Purpose::RaysX, sub, i),
            self.seed(Purpose::RaysY, sub, i),
            self.cfg.refinement(),
        )
    }

    fn perturbed(&self, g: &StarGraph, w: &DriverPath, w_hat: &DriverPath, r: f64, sub: u16, i: usize) -> Result<CouplingRun> {
        r_coupling_with(
            g,
            w,
            w_hat,
            r,
            self.seed(Purpose::RaysX, sub, i),
            self.seed(Purpose::RaysY, sub, i),
            self.cfg.refinement(),
        )
    }

    fn tolerance(&self, stderr: f64, allowance: f64) -> f64 {
        self.cfg.sigma_mult * stderr + allowance
    }

    /// Discretisation allowance `|C|·√dt`, `C` the least-squares slope of
    /// the pilot means against `√h` over `h ∈ {4dt, 2dt, dt}`; one value
    /// per statistic. `fine` holds the per-path statistics at `dt`,
    /// `coarse(factor, i)` recomputes them for path `i` at `factor·dt`.
    fn allowance(
        &self,
        dt: f64,
        fine: &[Vec<f64>],
        coarse: impl Fn(usize, usize) -> Result<Vec<f64>> + Sync + Send,
    ) -> Result<Vec<f64>> {
        let n = self.cfg.n_pilot.min(fine.len());
        let m = fine.first().map_or(0, Vec::len);
        let column_means = |rows: &[Vec<f64>]| -> Vec<f64> {
            (0..m)
                .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64)
                .collect()
        };
        let m4 = column_means(&self.par(n, |i| coarse(4, i))?);
        let m2 = column_means(&self.par(n, |i| coarse(2, i))?);
        let m1 = column_means(&fine[..n]);
        let x = [(4.0 * dt).sqrt(), (2.0 * dt).sqrt(), dt.sqrt()];
        Ok((0..m)
            .map(|j| least_squares_slope(&x, &[m4[j], m2[j], m1[j]]).abs() * dt.sqrt())
            .collect())
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let m: Moments = v.iter().copied().collect();
    (m.mean, m.stderr())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn binomial(hits: usize, n: usize) -> (f64, f64) {
    let p = hits as f64 / n.max(1) as f64;
    (p, (p * (1.0 - p) / n.max(1) as f64).sqrt())
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

/// Ray label, dropped within `theta` of the origin.
fn label(x: GraphPoint, theta: f64) -> Option<usize> {
    if x.radius() <= theta {
        None
    } else {
        epsilon(x)
    }
}

fn spider_distance(g: &StarGraph, x: GraphPoint, y: GraphPoint) -> Result<f64> {
    distance(g, spider_transform(g, x), spider_transform(g, y))
}

fn final_point(p: &SamplePath) -> GraphPoint {
    p.points[p.points.len() - 1]
}

fn radial_mean(t: f64) -> f64 {
    (2.0 * t / PI).sqrt()
}

fn random_functions(c: &Ctx, g: &StarGraph, class_d: bool) -> Vec<TestFunction> {
    let mut s = c.seed(Purpose::Synthetic, 0, 0).stream();
    let n = g.n_rays();
    (0..c.cfg.n_functions)
        .map(|_| {
            let a = (0..n).map(|_| 2.0 * s.next_uniform() - 1.0).collect();
            let b = (0..n).map(|_| 2.0 * s.next_uniform() - 1.0).collect();
            let f = TestFunction { a, b };
            if class_d {
                f.project_to_class_d(g)
            } else {
                f
            }
        })
        .collect()
}

/// Median over functions of the per-function median over paths, one value
/// per mesh. `rows[mesh][path][function]`.
fn median_of_medians(rows: &[Vec<Vec<f64>>], functions: usize) -> Vec<f64> {
    rows.iter()
        .map(|paths| {
            median(
                (0..functions)
                    .map(|j| median(paths.iter().map(|p| p[j]).collect()))
                    .collect(),
            )
        })
        .collect()
}

fn log_slope(meshes: &[f64], values: &[f64]) -> f64 {
    let x: Vec<f64> = meshes.iter().map(|h| h.ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    least_squares_slope(&x, &y)
}

fn residual_records(c: &Ctx, name: &str, medians: &[f64]) -> Vec<ResultRecord> {
    let cfg = c.cfg;
    let mut out: Vec<ResultRecord> = cfg
        .meshes
        .iter()
        .zip(medians)
        .map(|(&h, &m)| c.rec(format!("{name}_median_sup"), m).dt(h).paths(cfg.n_check_paths))
        .collect();
    out.push(
        c.rec(format!("{name}_slope"), log_slope(&cfg.meshes, medians))
            .paths(cfg.n_check_paths)
            .within(cfg.slope_min, cfg.slope_max),
    );
    out
}

fn marginals(c: &Ctx) -> Result<Vec<ResultRecord>> {
    let cfg = c.cfg;
    let g = cfg.graph()?;
    let n = cfg.n_paths;
    let exact = |dt: f64, sub: u16, i: usize| -> Result<(f64, Option<usize>, f64, f64)> {
        let p = simulate_wbm_exact(&g, cfg.t, dt, c.seed(Purpose::Exact, sub, i), GraphPoint::Origin)?;
        let x = final_point(&p);
        Ok((x.radius(), label(x, dt.sqrt()), last_zero(&p, cfg.t)?, spider_radius(&g, x)))
    };
    let rows = c.par(n, |i| exact(cfg.dt, 0, i))?;
    let crit = ks_critical(n, cfg.alpha);
    let mut out = Vec::new();

    let radii: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let scale = cfg.t.sqrt();
    let ks = ks_test(&radii, |x| 2.0 * normal_cdf(x / scale) - 1.0)?;
    out.push(c.rec("ks_radius_half_normal", ks.statistic).test(&ks).below(crit));

    let labels: Vec<usize> = rows.iter().filter_map(|r| r.1).collect();
    for i in 1..=g.n_rays() {
        let (p, se) = binomial(labels.iter().filter(|&&l| l == i).count(), labels.len());
        out.push(
            c.rec(format!("ray_frequency_{i}"), p)
                .se(se)
                .paths(labels.len())
                .near(g.prob(i), cfg.sigma_mult * se),
        );
    }
    let gof = chi_square_goodness_of_fit(&labels, g.probs())?;
    out.push(
        c.rec("ray_frequency_chi2", gof.statistic)
            .paths(labels.len())
            .test(&gof)
            .accept_null(gof.p_value, cfg.alpha),
    );

    let zeros: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let ks = ks_test(&zeros, |x| arcsine_cdf(x, cfg.t))?;
    out.push(c.rec("ks_last_zero_arcsine", ks.statistic).test(&ks).below(crit));

    let spider: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.3]).collect();
    let a = c.allowance(cfg.dt, &spider, |factor, i| {
        Ok(vec![exact(cfg.dt * factor as f64, factor as u16, i)?.3])
    })?;
    let (m, se) = mean_se(&spider.iter().map(|r| r[0]).collect::<Vec<_>>());
    out.push(
        c.rec("mean_spider_radius", m)
            .se(se)
            .near(radial_mean(cfg.t), c.tolerance(se, a[0])),
    );
    Ok(out)
}

/// Per-mesh rows of `measure(path, driver)` over Euler paths from the origin.
fn euler_study(
    c: &Ctx,
    g: &StarGraph,
    measure: impl Fn(&SamplePath, &DriverPath) -> Result<Vec<f64>> + Sync + Send,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let cfg = c.cfg;
    cfg.meshes
        .iter()
        .enumerate()
        .map(|(mi, &h)| {
            c.par(cfg.n_check_paths, |i| {
                let w = c.driver(Purpose::Driver, mi as u16, g.n_rays(), h, i)?;
                let p = simulate_interface_euler(g, &w, c.seed(Purpose::RaysX, mi as u16, i), GraphPoint::Origin)?;
                measure(&p, &w)
            })
        })
        .collect()
}

fn interface_residuals(c: &Ctx) -> Result<Vec<ResultRecord>> {
    let g = c.cfg.graph()?;
    let fs = random_functions(c, &g, true);
    let rows = euler_study(c, &g, |p, w| {
        fs.iter()
            .map(|f| Ok(interface_sde_residual(&g, p, w, f)?.sup_abs_residual))
            .collect()
    })?;
    Ok(residual_records(c, "interface_residual", &median_of_medians(&rows, fs.len())))
}

fn freidlin_sheu(c: &Ctx) -> Result<Vec<ResultRecord>> {
    let g = c.cfg.graph()?;
    let fs = random_functions(c, &g, false);
    let rows = euler_study(c, &g, |p, _| {
        let mut v: Vec<f64> = fs
            .iter()
            .map(|f| freidlin_sheu_residual(&g, p, f).sup_abs_residual)
            .collect();
        let lhs = spider_components(&g, p);
        let rhs = spider_decomposition(&g, p);
        let err = lhs
            .iter()
            .zip(&rhs)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0f64, f64::max);
        v.push(err);
        Ok(v)
    })?;
    let mut out = residual_records(c, "freidlin_sheu_residual", &median_of_medians(&rows, fs.len()));
    let spider: Vec<f64> = rows
        .iter()
        .map(|paths| median(paths.iter().map(|p| p[fs.len()]).collect()))
        .collect();
    for (&h, &m) in c.cfg.meshes.iter().zip(&spider) {
        out.push(c.rec("spider_decomposition_median_sup", m).dt(h).paths(c.cfg.n_check_paths));
    }
    out.push(
        c.rec("spider_decomposition_slope", log_slope(&c.cfg.meshes, &spider))
            .paths(c.cfg.n_check_paths)
            .verdict(strictly_decreasing(&spider), "medians strictly decrease with the mesh"),
    );
    Ok(out)
}

fn distance_mean(c: &Ctx) -> Result<Vec<ResultRecord>> {
    let cfg = c.cfg;
    let mut out = Vec::new();
    for (gi, &n_rays) in cfg.n_rays_grid.iter().enumerate() {
        let g = if n_rays == cfg.n_rays {
            cfg.graph()?
        } else {
            StarGraph::uniform(n_rays)?
        };
        let sub = gi as u16;
        let sample = |w: &DriverPath, i: usize| -> Result<Vec<f64>> {
            let run = c.wiener(&g, w, sub, i)?;
            let (x, y) = (final_point(&run.x_path), final_point(&run.y_path));
            Ok(vec![spider_distance(&g, x, y)?, spider_radius(&g, x)])
        };
        let fine_driver = |i| c.driver(Purpose::Driver, sub, n_rays, cfg.dt, i);
        let rows = c.par(cfg.n_paths, |i| sample(&fine_driver(i)?, i))?;
        let a = c.allowance(cfg.dt, &rows, |factor, i| {
            sample(&c.coarse(&fine_driver(i)?, factor, Purpose::Driver, sub, i)?, i)
        })?;
        let target = 2.0 * (n_rays as f64 - 2.0) / n_rays as f64 * radial_mean(cfg.t);
        let names = ["mean_spider_distance", "mean_spider_radius"];
        let targets = [target, radial_mean(cfg.t)];
        for j in 0..2 {
            let (m, se) = mean_se(&rows.iter().map(|r| r[j]).collect::<Vec<_>>());
            out.push(
                c.rec(format!("{}_n{n_rays}", names[j]), m)
                    .se(se)
                    .graph(g.probs())
                    .near(targets[j], c.tolerance(se, a[j])),
            );
        }
    }
    Ok(out)
}

/// Last zero visit at or before grid index `k`.
fn last_zero_visit(p: &SamplePath, k: usize) -> ZeroVisit {
    let pos = p.zeros.partition_point(|z| z.index <= k);
    p.zeros[pos.max(1) - 1]
}

/// Whether `p` is at the origin at the time of `z`, a zero of another leg.
/// Only the last visit inside each step is recorded, so this detects legs
/// whose zeros coincide.
fn at_origin_at(p: &SamplePath, z: ZeroVisit) -> bool {
    p.zeros.iter().any(|v| v.index == z.index && v.time == z.time)
}

fn distance_martingale(c: &Ctx) -> Result<Vec<ResultRecord>> {
    let cfg = c.cfg;
    let g = cfg.graph()?;
    let n = g.n_rays();
    let coef = (n as f64 - 2.0) / n as f64;
    let steps = cfg.steps(cfg.dt);
    let k1 = steps / 2;
    let rows = c.par(cfg.n_paths, |i| {
        let w = c.driver(Purpose::Driver, 0, n, cfg.dt, i)?;
        let run = c.wiener(&g, &w, 0, i)?;
        let (x, y) = (&run.x_path, &run.y_path);
        let at = |k: usize| -> Result<[f64; 4]> {
            let (px, py) = (x.points[k], y.points[k]);
            let d = spider_distance(&g, px, py)?;
            let (rx, ry) = (spider_radius(&g, px), spider_radius(&g, py));
            let x_off = !at_origin_at(x, last_zero_visit(y, k));
            let y_off = !at_origin_at(y, last_zero_visit(x, k));
            let balayage = d - coef * (f64::from(u8::from(x_off)) * ry + f64::from(u8::from(y_off)) * rx);
            Ok([d - coef * (rx + ry), balayage, rx, d])
        };
        let (a, b) = (at(k1)?, at(steps)?);
        let (lx, ly) = (epsilon(x.points[k1]), epsilon(y.points[k1]));
        let ind = |v: bool| f64::from(u8::from(v));
        let features = [
            1.0,
            ind(lx.is_some() && lx == ly),
            ind(lx == Some(1)),
            ind(ly == Some(1)),
            a[2].min(1.0),
            a[3].min(1.0),
        ];
        Ok(([b[0] - a[0], b[1] - a[1], b[2] - a[2]], features))
    })?;
    let features: Vec<Vec<f64>> = (0..6).map(|j| rows.iter().map(|r| r.1[j]).collect()).collect();
    let mut out = Vec::new();
    for (j, name) in ["martingale_distance", "martingale_balayage", "martingale_control_radius"]
        .into_iter()
        .enumerate()
    {
        let inc: Vec<f64> = rows.iter().map(|r| r.0[j]).collect();
        let rep = martingale_test(&inc, &features)?;
        let zmax = rep.z_scores.iter().fold(0.0f64, |m, z| m.max(z.abs()));
        let mut rec = c.rec(name, zmax);
        rec.dof = Some(features.len());
        out.push(if j < 2 {
            rec.accept_null(rep.bonferroni_p, cfg.alpha)
        } else {
            rec.reject_null(rep.bonferroni_p, cfg.alpha)
        });
    }
    Ok(out)
}

fn label_independence(c: &Ctx) -> Result<Vec<ResultRecord>> {
    let cfg = c.cfg;
    let g = cfg.graph()?;
    let n = g.n_rays();
    let theta = cfg.dt.sqrt();
    let rows = c.par(cfg.n_paths, |i| {
        let w = c.driver(Purpose::Driver, 0, n, cfg.dt, i)?;
        let run = c.wiener(&g, &w, 0, i)?;
        Ok((
            label(final_point(&run.x_path), theta),
            label(final_point(&run.y_path), theta),
        ))
    })?;
    let (lx, ly): (Vec<usize>, Vec<usize>) = rows
        .iter()
        .filter_map(|&(a, b)| Some((a?, b?)))
        .unzip();
    let m = lx.len();
    let chi = chi_square_independence(&lx, &ly, n)?;
    let mut out = vec![c
        .rec("label_independence_chi2", chi.statistic)
        .paths(m)
        .test(&chi)
        .accept_null(chi.p_value, cfg.alpha)];
    for i in 1..=n {
        for j in 1..=n {
            let hits = lx.iter().zip(&ly).filter(|&(&a, &b)| a == i && b == j).count();
            let (p, se) = binomial(hits, m);
            out.push(
                c.rec(format!("cell_{i}_{j}"), p)
                    .se(se)
                    .paths(m)
                    .near(g.prob(i) * g.prob(j), cfg.sigma_mult * se),
            );
        }
    }
    for i in 1..=n {
        let a: Vec<f64> = lx.iter().zip(&ly).map(|(&x, &y)| f64::from(u8::from(x == i && y == i))).collect();
        let b: Vec<f64> = lx
            .iter()
            .zip(&ly)
            .map(|(&x, &y)| 0.5 * (f64::from(u8::from(x == i)) + f64::from(u8::from(y == i))))
            .collect();
        let (ma, _) = mean_se(&a);
        let (mb, _) = mean_se(&b);
        let influence: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - 2.0 * mb * y).collect();
        let (_, se) = mean_se(&influence);
        out.push(
            c.rec(format!("diagonal_identity_{i}"), ma - mb * mb)
                .se(se)
                .paths(m)
                .near(0.0, cfg.sigma_mult * se),
        );
    }
    Ok(out)
}

fn distance_local_time(c: &Ctx) -> Result<Vec<ResultRecord>> {
    let cfg = c.cfg;
    let g = cfg.graph()?;
    let levels = cfg.meshes.len();
    let mut out = Vec::new();
    let mut values = Vec::new();
    let mut control = (f64::NAN, 0.0);
    for (l, (&h, &eps)) in cfg.meshes.iter().zip(&cfg.eps_schedule).enumerate() {
        let last = l + 1 == levels;
        let rows = c.par(cfg.n_check_paths, |i| {
            let w = c.driver(Purpose::Driver, l as u16, g.n_rays(), h, i)?;
            let run = c.wiener(&g, &w, l as u16, i)?;
            let lt = local_time_of_distance(&g, &run, eps)?.value;
            let ctrl = if last {
                local_time_of_radius(&run.x_path, eps)?.value
            } else {
                0.0
            };
            Ok((lt, ctrl))
        })?;
        let (m, se) = mean_se(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
        values.push(m);
        out.push(c.rec("distance_local_time", m).se(se).dt(h).paths(cfg.n_check_paths));
        if last {
            control = mean_se(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
            out.push(
                c.rec("control_local_time", control.0)
                    .se(control.1)
                    .dt(h)
                    .paths(cfg.n_check_paths)
                    .near(radial_mean(cfg.t), cfg.sigma_mult * control.1),
            );
        }
    }
    let h = cfg.meshes[levels - 1];
    let last = values[levels - 1];
    out.push(
        c.rec("distance_local_time_decreasing", last)
            .dt(h)
            .paths(cfg.n_check_paths)
            .verdict(strictly_decreasing(&values), "estimates strictly decrease along the schedule"),
    );
    out.push(
        c.rec("distance_local_time_ratio", last / control.0)
            .dt(h)
            .paths(cfg.n_check_paths)
            .below(cfg.lt_ratio_max),
    );
    Ok(out)
}

fn covariation(c: &Ctx) -> Result<Vec<ResultRecord>> {
    let cfg = c.cfg;
    let g = cfg.graph()?;
    let n = g.n_rays();
    let mut out = Vec::new();
    let run_at = |r: f64, h: f64, sub: u16, i: usize| -> Result<CouplingRun> {
        let w = c.driver(Purpose::Driver, sub, n, h, i)?;
        let w_hat = c.driver(Purpose::DriverHat, sub, n, h, i)?;
        c.perturbed(&g, &w, &w_hat, r, sub, i)
    };
    for (ri, &r) in cfg.r.iter().enumerate() {
        let gaps = c.par(cfg.n_check_paths, |i| {
            let run = run_at(r, cfg.dt, ri as u16, i)?;
            let (x, y) = (&run.x_path, &run.y_path);
            let (mut cov, mut equal, mut sup) = (0.0, 0usize, 0.0f64);
            for k in 0..x.steps() {
                cov += x.bx_increments[k] * y.bx_increments[k];
                equal += usize::from(x.step_rays[k] == y.step_rays[k]);
                sup = sup.max((cov - r * cfg.dt * equal as f64).abs());
            }
            Ok(sup)
        })?;
        let (m, se) = mean_se(&gaps);
        out.push(
            c.rec("covariation_gap", m)
                .se(se)
                .r(r)
                .paths(cfg.n_check_paths)
                .below(cfg.cov_mult * cfg.dt.sqrt()),
        );
    }
    for (ri, r) in [0.0, 1.0].into_iter().enumerate() {
        let mut fractions = Vec::new();
        for (mi, &h) in cfg.meshes.iter().enumerate() {
            let sub = 0x100 | (ri as u16) << 4 | mi as u16;
            let rows = c.par(cfg.n_check_paths, |i| {
                let run = run_at(r, h, sub, i)?;
                let (a, b) = crate::estimators::local_time_exclusion(&run, h.sqrt());
                Ok(0.5 * (a + b))
            })?;
            let (m, se) = mean_se(&rows);
            fractions.push(m);
            out.push(
                c.rec("exclusion_fraction", m)
                    .se(se)
                    .r(r)
                    .dt(h)
                    .paths(cfg.n_check_paths)
                    .claim("local-time-exclusion"),
            );
        }
        out.push(
            c.rec("exclusion_decreasing", fractions[fractions.len() - 1])
                .r(r)
                .dt(cfg.meshes[cfg.meshes.len() - 1])
                .paths(cfg.n_check_paths)
                .claim("local-time-exclusion")
                .verdict(strictly_decreasing(&fractions), "fractions strictly decrease with the mesh"),
        );
    }
    Ok(out)
}

fn perturbed_sweep(c: &Ctx) -> Result<Vec<ResultRecord>> {
    let cfg = c.cfg;
    let g = cfg.graph()?;
    let n = g.n_rays();
    let target = 2.0 * (n as f64 - 2.0) / n as f64 * radial_mean(cfg.t);
    let mut out = Vec::new();
    let mut values = Vec::new();
    for (ri, &r) in cfg.r.iter().enumerate() {
        let sub = ri as u16;
        let drivers = |i| -> Result<(DriverPath, DriverPath)> {
            Ok((
                c.driver(Purpose::Driver, sub, n, cfg.dt, i)?,
                c.driver(Purpose::DriverHat, sub, n, cfg.dt, i)?,
            ))
        };
        let sample = |w: &DriverPath, w_hat: &DriverPath, i| -> Result<Vec<f64>> {
            let run = c.perturbed(&g, w, w_hat, r, sub, i)?;
            Ok(vec![spider_distance(&g, final_point(&run.x_path), final_point(&run.y_path))?])
        };
        let rows = c.par(cfg.n_paths, |i| {
            let (w, w_hat) = drivers(i)?;
            sample(&w, &w_hat, i)
        })?;
        let a = c.allowance(cfg.dt, &rows, |factor, i| {
            let (w, w_hat) = drivers(i)?;
            sample(
                &c.coarse(&w, factor, Purpose::Driver, sub, i)?,
                &c.coarse(&w_hat, factor, Purpose::DriverHat, sub, i)?,
                i,
            )
        })?;
        let (m, se) = mean_se(&rows.iter().map(|v| v[0]).collect::<Vec<_>>());
        values.push((r, m, se));
        out.push(
            c.rec("mean_spider_distance", m)
                .se(se)
                .r(r)
                .at_least(target, c.tolerance(se, a[0])),
        );
    }
    if values.len() >= 2 {
        values.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (lo, hi) = (values[values.len() - 2], values[values.len() - 1]);
        let joint = lo.2.hypot(hi.2);
        out.push(
            c.rec("limit_gap", (lo.1 - hi.1).abs())
                .se(joint)
                .r(lo.0)
                .below(cfg.sigma_mult * joint),
        );
    }
    Ok(out)
}

fn coincidence_scans(c: &Ctx) -> Result<Vec<ResultRecord>> {
    let cfg = c.cfg;
    let g = cfg.graph()?;
    let rows = c.par(cfg.n_paths, |i| {
        let w = c.driver(Purpose::Driver, 0, g.n_rays(), cfg.dt, i)?;
        let run = c.wiener(&g, &w, 0, i)?;
        let (x, y) = (&run.x_path, &run.y_path);
        let k = x.steps();
        let gap = (last_zero(x, cfg.t)? - last_zero(y, cfg.t)?).abs();
        let d = distance(&g, x.points[k], y.points[k])?;
        let x_off = !at_origin_at(x, last_zero_visit(y, k));
        let y_off = !at_origin_at(y, last_zero_visit(x, k));
        Ok((gap, d, 0.5 * (f64::from(u8::from(x_off)) + f64::from(u8::from(y_off)))))
    })?;
    let n = rows.len();
    let mut out = Vec::new();
    for (j, (name, scan)) in [("last_zero_gap", "last_zero_scan"), ("distance", "coincidence_scan")]
        .into_iter()
        .enumerate()
    {
        let mut est = Vec::new();
        let mut ses = Vec::new();
        for &delta in &cfg.deltas {
            let hits = rows
                .iter()
                .filter(|r| if j == 0 { r.0 < delta } else { r.1 < delta })
                .count();
            let (p, se) = binomial(hits, n);
            out.push(c.rec(format!("p_{name}_below_{delta}"), p).se(se));
            est.push(p);
            ses.push(se);
        }
        let s = vanishing_scan(&cfg.deltas, &est, &ses)?;
        let k = est.len() - 1;
        let separated = est[0] - crate::stats::Z_975 * ses[0] > est[k] + crate::stats::Z_975 * ses[k];
        out.push(c.rec(scan, s.exponent).verdict(
            s.strictly_decreasing && separated && s.exponent > 0.0,
            "strictly decreasing, extreme intervals disjoint, exponent > 0",
        ));
    }
    let (m, se) = mean_se(&rows.iter().map(|r| r.2).collect::<Vec<_>>());
    out.push(c.rec("off_origin_at_other_last_zero", m).se(se));
    Ok(out)
}

fn two_rays(c: &Ctx) -> Result<Vec<ResultRecord>> {
    let cfg = c.cfg;
    let g = StarGraph::uniform(2)?;
    let mut out = Vec::new();
    let mut values = Vec::new();
    for (mi, &h) in cfg.meshes.iter().enumerate() {
        let rows = c.par(cfg.n_check_paths, |i| {
            let w = c.driver(Purpose::Driver, mi as u16, 2, h, i)?;
            let run = c.wiener(&g, &w, mi as u16, i)?;
            distance(&g, final_point(&run.x_path), final_point(&run.y_path))
        })?;
        let (m, se) = mean_se(&rows);
        values.push(m);
        out.push(
            c.rec("mean_distance", m)
                .se(se)
                .dt(h)
                .graph(g.probs())
                .paths(cfg.n_check_paths),
        );
    }
    let h = cfg.meshes[cfg.meshes.len() - 1];
    let last = values[values.len() - 1];
    out.push(
        c.rec("two_ray_decreasing", last)
            .dt(h)
            .graph(g.probs())
            .paths(cfg.n_check_paths)
            .verdict(strictly_decreasing(&values), "means strictly decrease with the mesh"),
    );
    let reference = 2.0 / 3.0 * radial_mean(cfg.t);
    out.push(
        c.rec("two_ray_ratio", last / reference)
            .dt(h)
            .graph(g.probs())
            .paths(cfg.n_check_paths)
            .below(cfg.n2_ratio_max),
    );
    Ok(out)
}

fn round_trip(c: &Ctx) -> Result<Vec<ResultRecord>> {
    let cfg = c.cfg;
    let g = cfg.graph()?;
    let fs = random_functions(c, &g, true);
    let r = cfg.r_roundtrip;
    let finest = cfg.meshes.len() - 1;
    let mut rows = Vec::new();
    let mut sums = [0.0f64; 6];
    for (mi, &h) in cfg.meshes.iter().enumerate() {
        let per_path = c.par(cfg.n_check_paths, |i| {
            let x = simulate_wbm_exact(&g, cfg.t, h, c.seed(Purpose::Exact, mi as u16, i), GraphPoint::Origin)?;
            let (w, w_hat) = construct_driver_from_solution(&g, &x, r, c.seed(Purpose::Auxiliary, mi as u16, i))?;
            let wr = mix_drivers(&w, &w_hat, r)?;
            let sups = fs
                .iter()
                .map(|f| Ok(interface_sde_residual(&g, &x, &wr, f)?.sup_abs_residual))
                .collect::<Result<Vec<f64>>>()?;
            let mut s = [0.0f64; 6];
            if mi == finest {
                for (a, b) in w.increments.iter().zip(&w_hat.increments) {
                    s[0] += 1.0;
                    s[1] += a;
                    s[2] += b;
                    s[3] += a * a;
                    s[4] += b * b;
                    s[5] += a * b;
                }
            }
            Ok((sups, s))
        })?;
        for (_, s) in &per_path {
            for (acc, v) in sums.iter_mut().zip(s) {
                *acc += v;
            }
        }
        rows.push(per_path.into_iter().map(|p| p.0).collect::<Vec<_>>());
    }
    let mut out = residual_records(c, "roundtrip_residual", &median_of_medians(&rows, fs.len()));
    for rec in &mut out {
        rec.r = Some(r);
    }
    let [k, sx, sy, sxx, syy, sxy] = sums;
    let cov = sxy / k - sx / k * sy / k;
    let rho = cov / ((sxx / k - (sx / k).powi(2)) * (syy / k - (sy / k).powi(2))).sqrt();
    let bound = cfg.corr_mult / k.sqrt();
    out.push(
        c.rec("driver_cross_correlation", rho)
            .r(r)
            .dt(cfg.meshes[finest])
            .paths(cfg.n_check_paths)
            .verdict(rho.abs() < bound, "|estimate| < corr_mult / sqrt(K)"),
    );
    out.last_mut().map(|rec| rec.tolerance = Some(bound));
    Ok(out)
}

fn conditional_labels(c: &Ctx) -> Result<Vec<ResultRecord>> {
    let cfg = c.cfg;
    let g = cfg.graph()?;
    let n = g.n_rays();
    let theta = cfg.dt.sqrt();
    let copies = cfg.n_copies;
    let rows = c.par(cfg.n_drivers, |i| {
        let w = c.driver(Purpose::Driver, 0, n, cfg.dt, i)?;
        let ens = simulate_conditional_ensemble(&g, &w, copies, c.seed(Purpose::Ensemble, 0, i))?;
        let labels: Vec<Option<usize>> = ens.iter().map(|p| label(final_point(p), theta)).collect();
        let mut counts = vec![0usize; n];
        for l in labels.iter().flatten() {
            counts[l - 1] += 1;
        }
        let k = w.steps;
        let signs: Vec<bool> = (1..=n).map(|j| w.value_at(k, j) > 0.0).collect();
        let reflected: Vec<f64> = (1..=n)
            .map(|j| {
                let (mut v, mut lo) = (0.0f64, 0.0f64);
                for dw in w.coordinate(j) {
                    v += dw;
                    lo = lo.min(v);
                }
                v - lo
            })
            .collect();
        let top = (0..n).max_by(|&a, &b| reflected[a].total_cmp(&reflected[b])).unwrap_or(0);
        Ok((counts, labels[0], signs, top))
    })?;
    let mut out = Vec::new();
    for i in 0..n {
        let freq: Vec<f64> = rows
            .iter()
            .filter_map(|(counts, ..)| {
                let total: usize = counts.iter().sum();
                (total > 0).then(|| counts[i] as f64 / total as f64)
            })
            .collect();
        let m: Moments = freq.iter().copied().collect();
        let p = g.prob(i + 1);
        let (excess, var_se) = variance_excess(&freq, p * (1.0 - p) / copies as f64)?;
        out.push(
            c.rec(format!("mean_frequency_{}", i + 1), m.mean)
                .se(m.stderr())
                .paths(freq.len())
                .near(p, cfg.sigma_mult * m.stderr()),
        );
        out.push(
            c.rec(format!("frequency_variance_excess_{}", i + 1), excess)
                .se(var_se)
                .paths(freq.len())
                .below(cfg.sigma_mult * var_se),
        );
    }
    let first: Vec<(usize, &Vec<bool>, usize)> = rows
        .iter()
        .filter_map(|(_, l, s, top)| Some(((*l)?, s, *top)))
        .collect();
    for j in 0..n {
        let mut table = vec![vec![0u64; 2]; n];
        for (l, s, _) in &first {
            table[l - 1][usize::from(s[j])] += 1;
        }
        let test = contingency_test(&table)?;
        let adjusted = (test.p_value * n as f64).min(1.0);
        out.push(
            c.rec(format!("label_vs_sign_w{}", j + 1), test.statistic)
                .paths(first.len())
                .test(&test)
                .accept_null(adjusted, cfg.alpha),
        );
    }
    let mut table = vec![vec![0u64; n]; n];
    for (l, _, top) in &first {
        table[l - 1][*top] += 1;
    }
    let test = contingency_test(&table)?;
    let matches = first.iter().filter(|(l, _, top)| l - 1 == *top).count();
    let (p, se) = binomial(matches, first.len());
    let mut rec = c
        .rec("label_matches_argmax_reflected_w", p)
        .se(se)
        .paths(first.len())
        .test(&test);
    // match rate if the label ignored the driver
    rec.target = Some(
        first
            .iter()
            .map(|(_, _, top)| g.prob(top + 1))
            .sum::<f64>()
            / first.len() as f64,
    );
    out.push(rec);
    Ok(out)
}
