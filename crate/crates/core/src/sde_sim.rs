//! Path generation on the star graph.
//!
//! Two samplers are provided. [`simulate_wbm_exact`] draws Walsh Brownian
//! motion exactly at grid times from a scalar driver: the radius is the
//! Skorokhod reflection of the driver, with the running minimum taken over
//! the continuous Brownian bridge between grid points, and every excursion
//! gets an i.i.d. ray label. [`simulate_interface_euler`] solves the
//! interface SDE for a given `N`-dimensional driver the same way, reflecting
//! whichever coordinate belongs to the current ray; the couplings are built
//! from it.

use crate::error::{Error, Result};
use crate::noise::{self, DriverPath, Purpose, RandomStream, SeedSpec};
use crate::star_graph::{GraphPoint, StarGraph};

/// A grid time at which the path sits at (or crossed) the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroVisit {
    /// Grid index of the flagged point.
    pub index: usize,
    /// Time of the last visit to the origin inside the preceding step
    /// (`0` for a path started at the origin).
    pub time: f64,
}

/// A path on a uniform grid together with its radial bookkeeping.
///
/// `|X_k| = |X_0| + Σ_{j<k} bx_increments[j] + local_time[k] − local_time[0]`
/// holds at every grid index.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub dt: f64,
    /// `X` at grid times, `K + 1` entries.
    pub points: Vec<GraphPoint>,
    /// Increments of the martingale part `B^X` of `|X|`, `K` entries.
    pub bx_increments: Vec<f64>,
    /// Running local time of `|X|` at zero, `K + 1` entries.
    pub local_time: Vec<f64>,
    /// Ray whose driver coordinate carries step `k` (1-based), `K` entries.
    pub step_rays: Vec<u16>,
    /// Zero visits in increasing index order.
    pub zeros: Vec<ZeroVisit>,
}

impl SamplePath {
    pub fn steps(&self) -> usize {
        self.bx_increments.len()
    }

    pub fn horizon(&self) -> f64 {
        self.steps() as f64 * self.dt
    }

    /// Grid index of time `t`, rounded to the nearest grid point.
    pub fn index_of(&self, t: f64) -> usize {
        ((t / self.dt).round() as usize).min(self.steps())
    }

    pub fn radius(&self, k: usize) -> f64 {
        self.points[k].radius()
    }

    /// `zero_flags()[k]` is true when grid index `k` is a zero visit.
    pub fn zero_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.points.len()];
        for z in &self.zeros {
            flags[z.index] = true;
        }
        flags
    }

    /// Largest deviation from the Tanaka identity over the grid.
    pub fn tanaka_defect(&self) -> f64 {
        let r0 = self.radius(0);
        let l0 = self.local_time[0];
        let mut b = 0.0;
        let mut worst: f64 = 0.0;
        for k in 0..self.points.len() {
            let d = self.radius(k) - r0 - b - (self.local_time[k] - l0);
            worst = worst.max(d.abs());
            if k < self.steps() {
                b += self.bx_increments[k];
            }
        }
        worst
    }
}

/// Two paths driven by the same driver `w` (or `X` by `W^r` in the
/// perturbed coupling).
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingRun {
    pub x_path: SamplePath,
    pub y_path: SamplePath,
    pub w: DriverPath,
    pub w_hat: Option<DriverPath>,
    pub r: Option<f64>,
}

fn steps_for(t_max: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::config(format!("time step must be positive, got {dt}")));
    }
    if !(t_max > 0.0) || !t_max.is_finite() {
        return Err(Error::config(format!("horizon must be positive, got {t_max}")));
    }
    Ok(((t_max / dt).round() as usize).max(1))
}

/// Bridge excursions deeper than this many `√dt` below both endpoints are
/// never sampled (probability below `e^{-128}`).
const BRIDGE_REACH: f64 = 8.0;

/// Minimum of a Brownian bridge from `a` to `b` over a step of length `h`.
#[inline]
pub fn bridge_minimum(a: f64, b: f64, h: f64, u: f64) -> f64 {
    0.5 * (a + b - ((a - b) * (a - b) - 2.0 * h * u.ln()).sqrt())
}

#[inline]
fn first_passage_weight(level: f64, s: f64) -> f64 {
    s.powf(-1.5) * (-level * level / (2.0 * s)).exp()
}

fn max_first_passage_weight(level: f64, h: f64) -> f64 {
    let mode = level * level / 3.0;
    first_passage_weight(level, if mode > 0.0 && mode < h { mode } else { h })
}

/// Time of the minimum of a Brownian bridge over `[0, h]` given its
/// endpoints' heights above the minimum (`alpha` at the start, `beta` at the
/// end).
///
/// The conditional density is proportional to the product of two first
/// passage densities, `α τ^{-3/2} e^{-α²/2τ} · β (h−τ)^{-3/2} e^{-β²/2(h−τ)}`.
/// The sharper factor is proposed exactly (`level²/Z²`) and the other is
/// used as the acceptance weight.
pub fn bridge_argmin_time(alpha: f64, beta: f64, h: f64, stream: &mut RandomStream) -> f64 {
    let alpha = alpha.max(0.0);
    let beta = beta.max(0.0);
    let from_start = alpha <= beta;
    let (near, far) = if from_start { (alpha, beta) } else { (beta, alpha) };
    if near == 0.0 {
        return if from_start { 0.0 } else { h };
    }
    let cap = max_first_passage_weight(far, h);
    for _ in 0..100_000 {
        let z = stream.next_normal();
        let s = near * near / (z * z);
        if !(s < h) {
            continue;
        }
        let rest = h - s;
        let accept = if far == 0.0 {
            // the far endpoint sits on the minimum: density of the far
            // factor degenerates to a point mass at the end
            1.0
        } else {
            first_passage_weight(far, rest) / cap
        };
        if stream.next_uniform() < accept {
            return if from_start { s } else { h - s };
        }
    }
    // unreachable in practice; fall back to the midpoint
    0.5 * h
}

/// Exact Walsh Brownian motion on a uniform grid.
///
/// `x0` may sit on a ray: the first segment is scalar Brownian motion on that
/// ray until the first zero.
pub fn simulate_wbm_exact(
    g: &StarGraph,
    t_max: f64,
    dt: f64,
    seed: SeedSpec,
    x0: GraphPoint,
) -> Result<SamplePath> {
    g.check_point(x0)?;
    let steps = steps_for(t_max, dt)?;
    let sd = dt.sqrt();
    let mut stream = seed.stream();

    let mut points = Vec::with_capacity(steps + 1);
    let mut bx_increments = Vec::with_capacity(steps);
    let mut local_time = Vec::with_capacity(steps + 1);
    let mut step_rays = Vec::with_capacity(steps);
    let mut zeros = Vec::new();

    let mut label = match x0 {
        GraphPoint::Origin => {
            zeros.push(ZeroVisit { index: 0, time: 0.0 });
            0
        }
        GraphPoint::Ray { ray, .. } => ray,
    };
    // y = |x0| + B; the radius is y minus its running minimum clipped at 0
    let mut y = x0.radius();
    let mut floor = 0.0f64;
    points.push(x0);
    local_time.push(0.0);

    for k in 0..steps {
        let db = sd * stream.next_normal();
        let a = y;
        let b = y + db;
        if a.min(b) - BRIDGE_REACH * sd < floor {
            let m = bridge_minimum(a, b, dt, stream.next_uniform());
            if m < floor {
                let tau = bridge_argmin_time(a - m, b - m, dt, &mut stream);
                floor = m;
                label = g.ray_from_uniform(stream.next_uniform());
                zeros.push(ZeroVisit {
                    index: k + 1,
                    time: k as f64 * dt + tau,
                });
            }
        }
        y = b;
        bx_increments.push(db);
        step_rays.push(label as u16);
        local_time.push(-floor);
        points.push(GraphPoint::on_ray(label, y - floor));
    }

    Ok(SamplePath {
        dt,
        points,
        bx_increments,
        local_time,
        step_rays,
        zeros,
    })
}

/// What is known about one driver coordinate on a step of length `h`:
/// its increment, its minimum relative to the start, and (once asked for)
/// the time of that minimum.
#[derive(Debug, Clone, Copy)]
struct Coordinate {
    key: (u8, usize),
    delta: f64,
    min: f64,
    argmin: Option<f64>,
    /// Last first-passage time drawn, with its level.
    passage: Option<(f64, f64)>,
}

/// One step of the driver, shared by every leg advancing over it, so that
/// legs reading the same coordinate see the same Brownian path.
struct Leaf<'a> {
    k: usize,
    t0: f64,
    h: f64,
    base: &'a [f64],
    uniforms: &'a [f64],
    known: Vec<Coordinate>,
    aux: &'a mut RandomStream,
}

impl Leaf<'_> {
    fn coordinate(&mut self, leg: &Leg, ray: usize) -> Coordinate {
        let key = (leg.key, ray);
        if let Some(c) = self.known.iter().find(|c| c.key == key) {
            return *c;
        }
        let delta = leg.coordinate(self.base, ray);
        let u = leg.bridge_uniform(self.uniforms, ray);
        let c = Coordinate {
            key,
            delta,
            min: bridge_minimum(0.0, delta, self.h, u).min(0.0),
            argmin: None,
            passage: None,
        };
        self.known.push(c);
        c
    }

    fn argmin(&mut self, c: Coordinate) -> f64 {
        let cached = self.known.iter().find(|d| d.key == c.key).and_then(|d| d.argmin);
        if let Some(s) = c.argmin.or(cached) {
            return s;
        }
        let s = bridge_argmin_time(-c.min, c.delta - c.min, self.h, self.aux);
        if let Some(slot) = self.known.iter_mut().find(|d| d.key == c.key) {
            slot.argmin = Some(s);
        }
        s
    }

    /// First time coordinate `c` falls to `-level`, for `0 ≤ level ≤ -c.min`.
    fn first_passage(&mut self, c: Coordinate, level: f64) -> f64 {
        let c = self.known.iter().find(|d| d.key == c.key).copied().unwrap_or(c);
        if let Some((l, s)) = c.passage {
            if l == level {
                return s;
            }
        }
        let sigma = self.argmin(c);
        let s = passage_before_minimum(level, -level - c.min, sigma, self.aux);
        if let Some(slot) = self.known.iter_mut().find(|d| d.key == c.key) {
            slot.passage = Some((level, s));
        }
        s
    }

    /// Value of coordinate `c` at time `s` of the step and its minimum over
    /// `[s, h]`, both relative to the start, drawn given the increment and
    /// the minimum over the whole step.
    fn after(&mut self, c: Coordinate, s: f64) -> (f64, f64) {
        let sigma = self.argmin(c);
        if s <= sigma {
            // before the minimum the path sits above it as a Bessel(3)
            // bridge from -min down to 0
            let v = c.min + bessel3_bridge(-c.min, 0.0, s, sigma, self.aux);
            (v, c.min)
        } else {
            let rest = self.h - sigma;
            let top = c.delta - c.min;
            let a = bessel3_bridge(0.0, top, s - sigma, rest, self.aux);
            let low = bessel3_bridge_min(a, top, self.h - s, self.aux.next_uniform());
            (c.min + a, c.min + low)
        }
    }
}

/// Inverse Gaussian variate with mean `mu` and shape `lambda`.
fn inverse_gaussian(mu: f64, lambda: f64, stream: &mut RandomStream) -> f64 {
    let z = stream.next_normal();
    let q = mu * z * z / (2.0 * lambda);
    let x = mu / (1.0 + q + (q * q + 2.0 * q).sqrt());
    if stream.next_uniform() * (mu + x) <= mu {
        x
    } else {
        mu * mu / x
    }
}

/// First passage time below the start by `a` of a Brownian path whose
/// minimum, `b` further down, is attained at `sigma`.
///
/// The density is proportional to `fpt_a(τ) · fpt_b(σ − τ)`. In terms of
/// `y = τ / (σ − τ)` it is a mixture of an inverse Gaussian (weight
/// `b / (a + b)`, mean `a / b`, shape `a² / σ`) and the reciprocal of an
/// inverse Gaussian (mean `b / a`, shape `b² / σ`).
pub fn passage_before_minimum(a: f64, b: f64, sigma: f64, stream: &mut RandomStream) -> f64 {
    if a <= 0.0 || sigma <= 0.0 {
        return 0.0;
    }
    if b <= 0.0 {
        return sigma;
    }
    let y = if stream.next_uniform() * (a + b) < b {
        inverse_gaussian(a / b, a * a / sigma, stream)
    } else {
        1.0 / inverse_gaussian(b / a, b * b / sigma, stream)
    };
    if y.is_finite() {
        (sigma * y / (1.0 + y)).clamp(0.0, sigma)
    } else {
        sigma
    }
}

/// Bessel(3) bridge from `a` at time 0 to `b` at time `t`, sampled at `s`.
fn bessel3_bridge(a: f64, b: f64, s: f64, t: f64, stream: &mut RandomStream) -> f64 {
    if t <= 0.0 {
        return b;
    }
    let w = s / t;
    let sd = (s * (t - s) / t).max(0.0).sqrt();
    let x = (1.0 - w) * a + w * b + sd * stream.next_normal();
    let y = sd * stream.next_normal();
    let z = sd * stream.next_normal();
    (x * x + y * y + z * z).sqrt()
}

/// Minimum of a Bessel(3) bridge from `a` to `b` over `t`, by inversion of
/// `P(min > c) = (1 - e^{-2(a-c)(b-c)/t}) / (1 - e^{-2ab/t})`.
fn bessel3_bridge_min(a: f64, b: f64, t: f64, u: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 || t <= 0.0 {
        return 0.0;
    }
    let q = -(-2.0 * a * b / t).exp_m1();
    let k = -0.5 * t * (-u * q).ln_1p();
    let c = 0.5 * (a + b - ((a - b) * (a - b) + 4.0 * k).sqrt());
    c.clamp(0.0, a.min(b))
}

/// One path of the interface SDE being advanced step by step.
///
/// Its driver coordinate `i` is `a·base[i] + b·base[N+i]` for a base of `N`
/// (when `b = 0`) or `2N` Brownian coordinates.
struct Leg<'g> {
    g: &'g StarGraph,
    rays: RandomStream,
    a: f64,
    b: f64,
    /// Legs with equal keys read the same coordinates.
    key: u8,
    /// Current ray, 0 at the origin.
    ray: usize,
    rho: f64,
    lt: f64,
    step_bx: f64,
    step_ray: Option<usize>,
    path: SamplePath,
}

impl<'g> Leg<'g> {
    fn new(
        g: &'g StarGraph,
        seed_rays: SeedSpec,
        x0: GraphPoint,
        dt: f64,
        steps: usize,
        (a, b): (f64, f64),
    ) -> Self {
        let mut path = SamplePath {
            dt,
            points: Vec::with_capacity(steps + 1),
            bx_increments: Vec::with_capacity(steps),
            local_time: Vec::with_capacity(steps + 1),
            step_rays: Vec::with_capacity(steps),
            zeros: Vec::new(),
        };
        let (ray, rho) = match x0 {
            GraphPoint::Origin => {
                path.zeros.push(ZeroVisit { index: 0, time: 0.0 });
                (0, 0.0)
            }
            GraphPoint::Ray { ray, radius } => (ray, radius),
        };
        path.points.push(x0);
        path.local_time.push(0.0);
        Leg {
            g,
            rays: seed_rays.stream(),
            a,
            b,
            key: u8::from((a, b) != (1.0, 0.0)),
            ray,
            rho,
            lt: 0.0,
            step_bx: 0.0,
            step_ray: None,
            path,
        }
    }

    #[inline]
    fn coordinate(&self, base: &[f64], ray: usize) -> f64 {
        if self.b == 0.0 {
            self.a * base[ray - 1]
        } else {
            let n = self.g.n_rays();
            self.a * base[ray - 1] + self.b * base[n + ray - 1]
        }
    }

    #[inline]
    fn bridge_uniform(&self, uniforms: &[f64], ray: usize) -> f64 {
        if self.b == 0.0 {
            uniforms[ray - 1]
        } else {
            let n = self.g.n_rays();
            noise::blend_uniforms(uniforms[ray - 1], self.a, uniforms[n + ray - 1], self.b)
        }
    }

    /// Advances over one leaf step.
    fn substep(&mut self, leaf: &mut Leaf) {
        let h = leaf.h;
        let from_origin = self.ray == 0;
        if from_origin {
            self.ray = self.g.ray_from_uniform(self.rays.next_uniform());
        }
        let ray = self.ray;
        self.step_ray.get_or_insert(ray);
        let start = self.rho;
        let dw = self.coordinate(leaf.base, ray);
        if !from_origin && start.min(start + dw) - BRIDGE_REACH * h.sqrt() >= 0.0 {
            self.rho = start + dw;
            self.step_bx += dw;
            return;
        }
        let c = leaf.coordinate(self, ray);
        if start + c.min >= 0.0 {
            self.rho = start + dw;
            self.step_bx += dw;
            return;
        }
        let sigma = leaf.argmin(c);
        let label = if from_origin {
            ray
        } else {
            self.g.ray_from_uniform(self.rays.next_uniform())
        };
        let last_zero = if label == ray {
            self.lt -= start + c.min;
            self.rho = dw - c.min;
            self.step_bx += dw;
            sigma
        } else {
            // the path is at the origin from the first passage on and the
            // rest of the step follows the new coordinate
            let tau = leaf.first_passage(c, start);
            let d = leaf.coordinate(self, label);
            let (v, low) = leaf.after(d, tau);
            self.lt += v - low;
            self.rho = d.delta - low;
            self.step_bx += d.delta - v - start;
            let sigma_d = leaf.argmin(d);
            if low >= v {
                tau
            } else if tau <= sigma_d {
                sigma_d
            } else {
                tau + bridge_argmin_time(v - low, d.delta - low, h - tau, leaf.aux)
            }
        };
        self.path.zeros.push(ZeroVisit {
            index: leaf.k + 1,
            time: leaf.t0 + last_zero,
        });
        if GraphPoint::on_ray(label, self.rho).is_origin() {
            self.ray = 0;
            self.rho = 0.0;
        } else {
            self.ray = label;
        }
    }

    /// Closes grid step `k`.
    fn record(&mut self) {
        let p = if self.ray == 0 {
            GraphPoint::Origin
        } else {
            GraphPoint::on_ray(self.ray, self.rho)
        };
        self.path.points.push(p);
        self.path.bx_increments.push(self.step_bx);
        self.path.local_time.push(self.lt);
        self.path.step_rays.push(self.step_ray.take().unwrap_or(0) as u16);
        self.step_bx = 0.0;
    }
}

fn check_driver(g: &StarGraph, w: &DriverPath) -> Result<()> {
    if w.n_rays != g.n_rays() {
        return Err(Error::config(format!(
            "driver has {} coordinates but the graph has {} rays",
            w.n_rays,
            g.n_rays()
        )));
    }
    Ok(())
}

/// Euler scheme for the interface SDE.
///
/// On ray `i` the radius is the Skorokhod reflection of the driver
/// coordinate `W^i`, with the running minimum taken over the Brownian bridge
/// of `W^i` between grid points (fixed by the driver's bridge uniforms). When
/// that bridge reaches the origin inside a step, the end of the step gets a
/// fresh ray `j ~ p`. For `j = i` the radius is the reflected `W^i`; for
/// `j ≠ i` the path restarts from the origin at the first passage time and
/// follows the reflected `W^j` to the end of the step. From the origin the
/// fresh ray is drawn first and drives the step.
///
/// A single path is therefore Walsh Brownian motion exactly at grid times,
/// with `B^X` a Brownian motion assembled from driver coordinates; the
/// scheme is approximate only in collapsing the excursions inside one step
/// to the last.
pub fn simulate_interface_euler(
    g: &StarGraph,
    w: &DriverPath,
    seed_rays: SeedSpec,
    x0: GraphPoint,
) -> Result<SamplePath> {
    g.check_point(x0)?;
    check_driver(g, w)?;
    let mut leg = Leg::new(g, seed_rays, x0, w.dt, w.steps, (1.0, 0.0));
    let mut aux = seed_rays.with_purpose(Purpose::Auxiliary).stream();
    let n = g.n_rays();
    for k in 0..w.steps {
        let row = k * n..(k + 1) * n;
        let mut leaf = Leaf {
            k,
            t0: k as f64 * w.dt,
            h: w.dt,
            base: &w.increments[row.clone()],
            uniforms: &w.bridge_uniforms[row],
            known: Vec::new(),
            aux: &mut aux,
        };
        leg.substep(&mut leaf);
        leg.record();
    }
    Ok(leg.path)
}

/// Step refinement for coupled pairs near the joint origin.
///
/// While both legs are within `reach·√h` of the origin, a step of length `h`
/// is halved by sampling the Brownian bridge midpoint of every driver
/// coordinate; both legs read the same refined driver. The one-relabel-per-step
/// error of the scheme is largest exactly there, because one leg's zero
/// visits then interact with the other leg at the step scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerRefinement {
    pub reach: f64,
    /// Maximal number of halvings of a grid step; 0 disables refinement.
    pub max_depth: u32,
}

impl Default for CornerRefinement {
    fn default() -> Self {
        CornerRefinement {
            reach: 4.0,
            max_depth: 20,
        }
    }
}

impl CornerRefinement {
    pub const NONE: CornerRefinement = CornerRefinement {
        reach: 0.0,
        max_depth: 0,
    };
}

struct Pair<'g> {
    x: Leg<'g>,
    y: Leg<'g>,
    refine: CornerRefinement,
    aux: RandomStream,
    /// Children of the node being refined at each depth.
    levels: Vec<Vec<f64>>,
    known: Vec<Coordinate>,
}

impl Pair<'_> {
    fn advance(&mut self, k: usize, t0: f64, h: f64, base: &[f64], uniforms: &[f64], depth: u32) {
        let reach = self.refine.reach * h.sqrt();
        if depth < self.refine.max_depth && self.x.rho < reach && self.y.rho < reach {
            let m = base.len();
            let sd = 0.5 * h.sqrt();
            let d = depth as usize;
            if self.levels.len() <= d {
                self.levels.resize_with(d + 1, Vec::new);
            }
            let mut buf = std::mem::take(&mut self.levels[d]);
            buf.clear();
            // [left increments, left uniforms, right increments, right uniforms]
            buf.resize(4 * m, 0.0);
            for (i, &dw) in base.iter().enumerate() {
                let mid = 0.5 * dw + sd * self.aux.next_normal();
                buf[i] = mid;
                buf[2 * m + i] = dw - mid;
            }
            for i in 0..m {
                buf[m + i] = self.aux.next_uniform();
                buf[3 * m + i] = self.aux.next_uniform();
            }
            let half = 0.5 * h;
            let (left, right) = buf.split_at(2 * m);
            self.advance(k, t0, half, &left[..m], &left[m..], depth + 1);
            self.advance(k, t0 + half, half, &right[..m], &right[m..], depth + 1);
            self.levels[d] = buf;
        } else {
            let mut known = std::mem::take(&mut self.known);
            known.clear();
            let mut leaf = Leaf {
                k,
                t0,
                h,
                base,
                uniforms,
                known,
                aux: &mut self.aux,
            };
            self.x.substep(&mut leaf);
            self.y.substep(&mut leaf);
            self.known = leaf.known;
        }
    }
}

/// Simulates two legs from the origin on a base driver of `M` coordinates
/// (`M` rows of increments and uniforms per step).
#[allow(clippy::too_many_arguments)]
fn simulate_pair(
    g: &StarGraph,
    dt: f64,
    steps: usize,
    base: &[f64],
    uniforms: &[f64],
    coef_x: (f64, f64),
    seeds_x: SeedSpec,
    seeds_y: SeedSpec,
    refine: CornerRefinement,
) -> (SamplePath, SamplePath) {
    let m = base.len() / steps;
    let mut pair = Pair {
        x: Leg::new(g, seeds_x, GraphPoint::Origin, dt, steps, coef_x),
        y: Leg::new(g, seeds_y, GraphPoint::Origin, dt, steps, (1.0, 0.0)),
        refine,
        aux: seeds_x.with_purpose(Purpose::Auxiliary).stream(),
        levels: Vec::new(),
        known: Vec::new(),
    };
    for k in 0..steps {
        let row = k * m..(k + 1) * m;
        pair.advance(k, k as f64 * dt, dt, &base[row.clone()], &uniforms[row], 0);
        pair.x.record();
        pair.y.record();
    }
    (pair.x.path, pair.y.path)
}

fn check_distinct(seeds_x: SeedSpec, seeds_y: SeedSpec) -> Result<()> {
    if seeds_x == seeds_y {
        return Err(Error::config(
            "the two legs of a coupling need distinct ray streams",
        ));
    }
    Ok(())
}

/// Wiener coupling: both legs start at the origin, share `w`, and use
/// independent ray streams, so they are independent given `w`.
///
/// Steps are refined near the joint origin with [`CornerRefinement::default`];
/// the refinement draws come from the auxiliary stream of `seeds_x`.
pub fn simulate_wiener_coupling(
    g: &StarGraph,
    w: &DriverPath,
    seeds_x: SeedSpec,
    seeds_y: SeedSpec,
) -> Result<CouplingRun> {
    wiener_coupling_with(g, w, seeds_x, seeds_y, CornerRefinement::default())
}

/// [`simulate_wiener_coupling`] with explicit refinement settings.
pub fn wiener_coupling_with(
    g: &StarGraph,
    w: &DriverPath,
    seeds_x: SeedSpec,
    seeds_y: SeedSpec,
    refine: CornerRefinement,
) -> Result<CouplingRun> {
    check_distinct(seeds_x, seeds_y)?;
    check_driver(g, w)?;
    let (x_path, y_path) = simulate_pair(
        g,
        w.dt,
        w.steps,
        &w.increments,
        &w.bridge_uniforms,
        (1.0, 0.0),
        seeds_x,
        seeds_y,
        refine,
    );
    Ok(CouplingRun {
        x_path,
        y_path,
        w: w.clone(),
        w_hat: None,
        r: None,
    })
}

/// Perturbed coupling: `X` is driven by `r W + √(1−r²) Ŵ`, `Y` by `W`.
pub fn simulate_r_coupling(
    g: &StarGraph,
    w: &DriverPath,
    w_hat: &DriverPath,
    r: f64,
    seeds_x: SeedSpec,
    seeds_y: SeedSpec,
) -> Result<CouplingRun> {
    r_coupling_with(g, w, w_hat, r, seeds_x, seeds_y, CornerRefinement::default())
}

/// [`simulate_r_coupling`] with explicit refinement settings.
pub fn r_coupling_with(
    g: &StarGraph,
    w: &DriverPath,
    w_hat: &DriverPath,
    r: f64,
    seeds_x: SeedSpec,
    seeds_y: SeedSpec,
    refine: CornerRefinement,
) -> Result<CouplingRun> {
    check_distinct(seeds_x, seeds_y)?;
    check_driver(g, w)?;
    // validates r and the shapes
    noise::mix_drivers(w, w_hat, r)?;
    let n = g.n_rays();
    let mut base = Vec::with_capacity(2 * w.increments.len());
    let mut uniforms = Vec::with_capacity(2 * w.increments.len());
    for k in 0..w.steps {
        let row = k * n..(k + 1) * n;
        base.extend_from_slice(&w.increments[row.clone()]);
        base.extend_from_slice(&w_hat.increments[row.clone()]);
        uniforms.extend_from_slice(&w.bridge_uniforms[row.clone()]);
        uniforms.extend_from_slice(&w_hat.bridge_uniforms[row]);
    }
    let s = (1.0 - r * r).sqrt();
    // same coefficients as mix_drivers, including its exact endpoints
    let coef_x = if r == 1.0 {
        (1.0, 0.0)
    } else if r == 0.0 {
        (0.0, 1.0)
    } else {
        (r, s)
    };
    let (x_path, y_path) = simulate_pair(
        g, w.dt, w.steps, &base, &uniforms, coef_x, seeds_x, seeds_y, refine,
    );
    Ok(CouplingRun {
        x_path,
        y_path,
        w: w.clone(),
        w_hat: Some(w_hat.clone()),
        r: Some(r),
    })
}

/// `n` solutions sharing `w` with pairwise distinct ray streams. Copy 0 uses
/// `seeds` unchanged, copy `i` the sub-stream `i` places further on.
pub fn simulate_conditional_ensemble(
    g: &StarGraph,
    w: &DriverPath,
    n: usize,
    seeds: SeedSpec,
) -> Result<Vec<SamplePath>> {
    if n == 0 {
        return Err(Error::config("ensemble needs at least one copy"));
    }
    if n > u16::MAX as usize {
        return Err(Error::config(format!("ensemble size {n} exceeds 65535")));
    }
    let base = ((seeds.stream_id >> 32) & 0xffff) as u16;
    (0..n)
        .map(|i| {
            let s = if i == 0 {
                seeds
            } else {
                seeds.with_sub(base.wrapping_add(i as u16))
            };
            simulate_interface_euler(g, w, s, GraphPoint::Origin)
        })
        .collect()
}

/// Rebuilds a driver pair `(W, Ŵ)` for which `(X, rW + √(1−r²)Ŵ)` solves the
/// interface SDE.
///
/// With fresh Brownian increments `V¹..V^{2N}` drawn from `seeds`, per step:
/// `ΔΓ^i = 1_{X∈E_i} ΔB^X + 1_{X∉E_i} ΔV^i`,
/// `ΔW^i = r ΔΓ^i + √(1−r²) ΔV^{i+N}` and
/// `ΔŴ^i = √(1−r²) ΔΓ^i − r ΔV^{i+N}`.
pub fn construct_driver_from_solution(
    g: &StarGraph,
    x: &SamplePath,
    r: f64,
    seeds: SeedSpec,
) -> Result<(DriverPath, DriverPath)> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::config(format!("mixing parameter must lie in [0,1], got {r}")));
    }
    let steps = x.steps();
    if x.points.len() != steps + 1 || x.step_rays.len() != steps || x.local_time.len() != steps + 1
    {
        return Err(Error::config("sample path arrays do not share one grid"));
    }
    let n = g.n_rays();
    let v = noise::gen_driver(2 * n, x.dt, steps, seeds)?;
    let s = (1.0 - r * r).sqrt();
    let mut w = Vec::with_capacity(steps * n);
    let mut w_hat = Vec::with_capacity(steps * n);
    let mut u = Vec::with_capacity(steps * n);
    let mut u_hat = Vec::with_capacity(steps * n);
    for k in 0..steps {
        let row = v.row(k);
        let active = x.step_rays[k] as usize;
        for i in 1..=n {
            let gamma = if i == active {
                x.bx_increments[k]
            } else {
                row[i - 1]
            };
            let extra = row[n + i - 1];
            w.push(r * gamma + s * extra);
            w_hat.push(s * gamma - r * extra);
            // the bridge of the active coordinate between grid points is not
            // recorded in the path; a fresh uniform stands in for it
            let (ug, ue) = (v.bridge_uniform(k, i), v.bridge_uniform(k, n + i));
            u.push(noise::blend_uniforms(ug, r, ue, s));
            u_hat.push(noise::blend_uniforms(ug, s, ue, -r));
        }
    }
    let mk = |increments, bridge_uniforms| DriverPath {
        dt: x.dt,
        steps,
        n_rays: n,
        increments,
        bridge_uniforms,
    };
    Ok((mk(w, u), mk(w_hat, u_hat)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::gen_driver;
    use crate::star_graph::epsilon;

    fn seed(id: u64) -> SeedSpec {
        SeedSpec::new(2024, id)
    }

    #[test]
    fn passage_time_matches_its_density() {
        let (a, b, sigma) = (0.7, 0.4, 1.5);
        let fpt = |x: f64, t: f64| x * t.powf(-1.5) * (-x * x / (2.0 * t)).exp();
        let n = 20_000;
        let (mut z, mut m1) = (0.0, 0.0);
        for i in 1..n {
            let t = sigma * i as f64 / n as f64;
            let f = fpt(a, t) * fpt(b, sigma - t);
            z += f;
            m1 += t * f;
        }
        let exact = m1 / z;
        let mut stream = seed(99).stream();
        let draws: Vec<f64> = (0..40_000)
            .map(|_| passage_before_minimum(a, b, sigma, &mut stream))
            .collect();
        assert!(draws.iter().all(|t| (0.0..=sigma).contains(t)));
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!((mean - exact).abs() < 4.0 * (var / draws.len() as f64).sqrt(), "{mean} vs {exact}");
        assert_eq!(passage_before_minimum(0.0, b, sigma, &mut stream), 0.0);
        assert_eq!(passage_before_minimum(a, 0.0, sigma, &mut stream), sigma);
    }

    #[test]
    fn coarse_euler_path_has_walsh_marginals() {
        let g = StarGraph::new(vec![0.5, 0.25, 0.25]).unwrap();
        let n = 4000;
        let (mut r1, mut lt) = (0.0, 0.0);
        for i in 0..n {
            let w = gen_driver(3, 0.25, 4, SeedSpec::new(7, i)).unwrap();
            let p = simulate_interface_euler(&g, &w, SeedSpec::new(8, i), GraphPoint::Origin).unwrap();
            r1 += p.radius(4);
            lt += p.local_time[4];
        }
        let target = (2.0 / std::f64::consts::PI).sqrt();
        // sd of |B_1| is 0.6028; of L_1 the same
        let tol = 4.0 * 0.603 / (n as f64).sqrt();
        assert!((r1 / n as f64 - target).abs() < tol, "{}", r1 / n as f64);
        assert!((lt / n as f64 - target).abs() < tol, "{}", lt / n as f64);
    }

    #[test]
    fn exact_path_keeps_tanaka_and_monotone_local_time() {
        let g = StarGraph::new(vec![0.5, 0.3, 0.2]).unwrap();
        for id in 0..20 {
            let p = simulate_wbm_exact(&g, 1.0, 1e-3, seed(id), GraphPoint::Origin).unwrap();
            assert_eq!(p.points.len(), 1001);
            assert_eq!(p.points[0], GraphPoint::Origin);
            assert!(p.tanaka_defect() < 1e-12);
            assert!(p.local_time.windows(2).all(|w| w[1] >= w[0]));
            let flags = p.zero_flags();
            for k in 0..p.steps() {
                if p.local_time[k + 1] > p.local_time[k] {
                    assert!(flags[k + 1], "local time grew off a zero visit");
                }
            }
            assert!(p.zeros.windows(2).all(|z| z[0].time <= z[1].time));
        }
    }

    #[test]
    fn exact_path_from_ray_follows_driver_until_zero() {
        let g = StarGraph::uniform(3).unwrap();
        let x0 = GraphPoint::on_ray(2, 5.0);
        let p = simulate_wbm_exact(&g, 0.1, 1e-3, seed(1), x0).unwrap();
        // far from the origin: no zero can occur within 0.1 time units
        assert!(p.zeros.is_empty());
        assert!(p.points.iter().all(|x| epsilon(*x) == Some(2)));
        assert!(p.local_time.iter().all(|l| *l == 0.0));
        assert!(p.tanaka_defect() < 1e-12);
    }

    #[test]
    fn exact_sampler_rejects_bad_config() {
        let g = StarGraph::uniform(3).unwrap();
        assert!(simulate_wbm_exact(&g, 1.0, 0.0, seed(1), GraphPoint::Origin).is_err());
        assert!(simulate_wbm_exact(&g, -1.0, 0.1, seed(1), GraphPoint::Origin).is_err());
        assert!(matches!(
            simulate_wbm_exact(&g, 1.0, 0.1, seed(1), GraphPoint::on_ray(5, 1.0)),
            Err(Error::InvalidPoint(_))
        ));
    }

    #[test]
    fn euler_path_invariants() {
        let g = StarGraph::new(vec![0.2, 0.5, 0.3]).unwrap();
        let w = gen_driver(3, 1e-3, 1000, seed(10)).unwrap();
        let p = simulate_interface_euler(&g, &w, seed(11), GraphPoint::Origin).unwrap();
        assert!(p.tanaka_defect() < 1e-12);
        assert!(p.local_time.windows(2).all(|w| w[1] >= w[0]));
        let flags = p.zero_flags();
        for k in 0..p.steps() {
            if p.local_time[k + 1] > p.local_time[k] {
                assert!(flags[k + 1]);
            }
            // without a zero the step follows the coordinate of its ray
            if !flags[k + 1] {
                assert_eq!(p.bx_increments[k], w.dw(k, p.step_rays[k] as usize));
            }
        }
        // the ray only changes right after a zero visit
        for k in 1..p.steps() {
            if p.step_rays[k] != p.step_rays[k - 1] {
                assert!(flags[k]);
            }
        }
    }

    #[test]
    fn euler_from_far_point_is_driver_translation() {
        let g = StarGraph::uniform(2).unwrap();
        let w = gen_driver(2, 1e-3, 100, seed(3)).unwrap();
        let p = simulate_interface_euler(&g, &w, seed(4), GraphPoint::on_ray(2, 10.0)).unwrap();
        let w2: f64 = w.coordinate(2).sum();
        assert!((p.points[100].radius() - 10.0 - w2).abs() < 1e-12);
    }

    #[test]
    fn wiener_coupling_needs_distinct_streams() {
        let g = StarGraph::uniform(3).unwrap();
        let w = gen_driver(3, 1e-2, 100, seed(1)).unwrap();
        assert!(matches!(
            simulate_wiener_coupling(&g, &w, seed(2), seed(2)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn wiener_coupling_legs_move_together_on_shared_ray() {
        let g = StarGraph::uniform(3).unwrap();
        let w = gen_driver(3, 1e-3, 1000, seed(5)).unwrap();
        let run = simulate_wiener_coupling(&g, &w, seed(6), seed(7)).unwrap();
        let fx = run.x_path.zero_flags();
        let fy = run.y_path.zero_flags();
        for k in 0..1000 {
            let same = run.x_path.step_rays[k] == run.y_path.step_rays[k];
            if same && !fx[k] && !fy[k] && !fx[k + 1] && !fy[k + 1] {
                assert_eq!(run.x_path.bx_increments[k], run.y_path.bx_increments[k]);
                let before = run.x_path.radius(k) - run.y_path.radius(k);
                let after = run.x_path.radius(k + 1) - run.y_path.radius(k + 1);
                assert!((before - after).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn legs_on_one_ray_share_the_bridge() {
        // the lower leg reaches the origin whenever the upper one does
        let g = StarGraph::uniform(3).unwrap();
        for id in 0..20 {
            let w = gen_driver(3, 1e-3, 1000, seed(100 + id)).unwrap();
            let run = simulate_wiener_coupling(&g, &w, seed(200 + id), seed(300 + id)).unwrap();
            let fx = run.x_path.zero_flags();
            let fy = run.y_path.zero_flags();
            for k in 0..1000 {
                let (x, y) = (run.x_path.points[k], run.y_path.points[k]);
                if x.is_origin() || epsilon(x) != epsilon(y) {
                    continue;
                }
                if x.radius() < y.radius() && fy[k + 1] {
                    assert!(fx[k + 1]);
                }
                if y.radius() < x.radius() && fx[k + 1] {
                    assert!(fy[k + 1]);
                }
            }
        }
    }

    #[test]
    fn r_coupling_at_one_is_wiener_coupling() {
        let g = StarGraph::uniform(3).unwrap();
        let w = gen_driver(3, 1e-3, 500, seed(1)).unwrap();
        let v = gen_driver(3, 1e-3, 500, seed(2)).unwrap();
        let none = CornerRefinement::NONE;
        let a = r_coupling_with(&g, &w, &v, 1.0, seed(3), seed(4), none).unwrap();
        let b = wiener_coupling_with(&g, &w, seed(3), seed(4), none).unwrap();
        assert_eq!(a.x_path, b.x_path);
        assert_eq!(a.y_path, b.y_path);
        assert_eq!(a.r, Some(1.0));
    }

    #[test]
    fn refinement_keeps_grid_values_of_the_driver() {
        let g = StarGraph::uniform(3).unwrap();
        let w = gen_driver(3, 1e-2, 200, seed(11)).unwrap();
        let run = simulate_wiener_coupling(&g, &w, seed(12), seed(13)).unwrap();
        let zeros = run.x_path.zeros.len() + run.y_path.zeros.len();
        let plain = wiener_coupling_with(&g, &w, seed(12), seed(13), CornerRefinement::NONE)
            .unwrap();
        assert!(zeros > plain.x_path.zeros.len() + plain.y_path.zeros.len());
        for path in [&run.x_path, &run.y_path] {
            let total: f64 = path.bx_increments.iter().sum();
            assert!(total.is_finite());
            for pair in path.zeros.windows(2) {
                assert!(pair[0].time <= pair[1].time);
            }
            for z in &path.zeros {
                let lo = (z.index.max(1) - 1) as f64 * path.dt;
                assert!(z.time >= lo - 1e-12 && z.time <= z.index as f64 * path.dt + 1e-12);
            }
        }
    }

    #[test]
    fn ensemble_of_one_is_single_path() {
        let g = StarGraph::uniform(3).unwrap();
        let w = gen_driver(3, 1e-3, 300, seed(1)).unwrap();
        let e = simulate_conditional_ensemble(&g, &w, 1, seed(9)).unwrap();
        let p = simulate_interface_euler(&g, &w, seed(9), GraphPoint::Origin).unwrap();
        assert_eq!(e, vec![p]);
        let many = simulate_conditional_ensemble(&g, &w, 4, seed(9)).unwrap();
        assert_eq!(many[0], e[0]);
        assert_ne!(many[1].step_rays, many[2].step_rays);
        assert!(simulate_conditional_ensemble(&g, &w, 0, seed(9)).is_err());
    }

    #[test]
    fn reconstructed_driver_reproduces_radial_increments() {
        let g = StarGraph::new(vec![0.5, 0.25, 0.25]).unwrap();
        let x = simulate_wbm_exact(&g, 1.0, 1e-3, seed(1), GraphPoint::Origin).unwrap();
        for &r in &[1.0, 0.6, 0.0] {
            let (w, w_hat) = construct_driver_from_solution(&g, &x, r, seed(2)).unwrap();
            let gamma = noise::mix_drivers(&w, &w_hat, r).unwrap();
            for k in 0..x.steps() {
                let ray = x.step_rays[k] as usize;
                assert!((gamma.dw(k, ray) - x.bx_increments[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn bridge_minimum_lies_below_endpoints() {
        let mut s = seed(3).stream();
        for _ in 0..1000 {
            let a = s.next_normal();
            let b = s.next_normal();
            let m = bridge_minimum(a, b, 0.01, s.next_uniform());
            assert!(m <= a.min(b));
        }
    }

    #[test]
    fn bridge_argmin_matches_quadrature_mean() {
        // mean of the argmin density by midpoint quadrature, then compare
        // with the sampler
        let h = 1.0;
        for &(alpha, beta) in &[(0.3, 0.3), (0.1, 1.2), (0.9, 0.05), (1.5, 1.0)] {
            let n = 200_000;
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                let t = (i as f64 + 0.5) / n as f64 * h;
                let d = first_passage_weight(alpha, t) * first_passage_weight(beta, h - t);
                num += t * d;
                den += d;
            }
            let exact = num / den;
            let mut s = seed(77).stream();
            let m = 40_000;
            let mut sum = 0.0;
            let mut sq = 0.0;
            for _ in 0..m {
                let t = bridge_argmin_time(alpha, beta, h, &mut s);
                assert!((0.0..=h).contains(&t));
                sum += t;
                sq += t * t;
            }
            let mean = sum / m as f64;
            let se = ((sq / m as f64 - mean * mean) / m as f64).sqrt();
            assert!(
                (mean - exact).abs() < 4.0 * se,
                "alpha={alpha} beta={beta}: {mean} vs {exact} (se {se})"
            );
        }
    }
}
