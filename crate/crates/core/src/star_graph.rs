//! Geometry of a metric star graph: `N` half-lines glued at a single origin.
//!
//! Points are stored as `(ray, radius)` pairs with a distinguished origin.
//! Ray labels are 1-based, matching the usual `E_1, ..., E_N` naming.

use crate::error::{Error, Result};

/// Radii below this value are treated as the origin.
pub const MIN_RADIUS: f64 = 1e-300;

const PROB_SUM_TOL: f64 = 1e-12;

/// Ray count and excursion probabilities of a star graph.
#[derive(Debug, Clone, PartialEq)]
pub struct StarGraph {
    probs: Vec<f64>,
}

impl StarGraph {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::config(format!(
                "a star graph needs at least 2 rays, got {}",
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::config(format!(
                "excursion probabilities must lie strictly inside (0,1), got {p}"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::config(format!(
                "excursion probabilities must sum to 1, got {total}"
            )));
        }
        Ok(StarGraph { probs })
    }

    /// `N` rays with equal probabilities `1/N`.
    pub fn uniform(n_rays: usize) -> Result<Self> {
        if n_rays < 2 {
            return Err(Error::config(format!(
                "a star graph needs at least 2 rays, got {n_rays}"
            )));
        }
        let p = 1.0 / n_rays as f64;
        let mut probs = vec![p; n_rays];
        // absorb rounding so the sum is exactly representable as 1 within tolerance
        let rest: f64 = probs[1..].iter().sum();
        probs[0] = 1.0 - rest;
        StarGraph::new(probs)
    }

    pub fn n_rays(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Excursion probability of a 1-based ray label.
    pub fn prob(&self, ray: usize) -> f64 {
        self.probs[ray - 1]
    }

    pub fn is_uniform(&self) -> bool {
        let p = 1.0 / self.n_rays() as f64;
        self.probs.iter().all(|q| (q - p).abs() <= PROB_SUM_TOL)
    }

    /// Ray chosen by inverting the cumulative distribution at `u ∈ [0,1)`.
    pub fn ray_from_uniform(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i + 1;
            }
        }
        self.n_rays()
    }

    pub fn check_point(&self, x: GraphPoint) -> Result<()> {
        match x {
            GraphPoint::Origin => Ok(()),
            GraphPoint::Ray { ray, radius } => {
                if ray == 0 || ray > self.n_rays() {
                    Err(Error::InvalidPoint(format!(
                        "ray {ray} outside 1..={}",
                        self.n_rays()
                    )))
                } else if !(radius > 0.0) || !radius.is_finite() {
                    Err(Error::InvalidPoint(format!("radius {radius} must be positive")))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// A point of the star graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraphPoint {
    Origin,
    Ray { ray: usize, radius: f64 },
}

impl GraphPoint {
    /// `e_ray(radius)`; radii below [`MIN_RADIUS`] collapse to the origin.
    pub fn on_ray(ray: usize, radius: f64) -> Self {
        if radius < MIN_RADIUS {
            GraphPoint::Origin
        } else {
            GraphPoint::Ray { ray, radius }
        }
    }

    /// Distance to the origin.
    pub fn radius(&self) -> f64 {
        match *self {
            GraphPoint::Origin => 0.0,
            GraphPoint::Ray { radius, .. } => radius,
        }
    }

    pub fn is_origin(&self) -> bool {
        matches!(self, GraphPoint::Origin)
    }
}

/// Ray label of a point; `None` at the origin.
pub fn epsilon(x: GraphPoint) -> Option<usize> {
    match x {
        GraphPoint::Origin => None,
        GraphPoint::Ray { ray, .. } => Some(ray),
    }
}

/// Geodesic distance: radii subtract on a shared ray and add across rays.
pub fn distance(g: &StarGraph, x: GraphPoint, y: GraphPoint) -> Result<f64> {
    g.check_point(x)?;
    g.check_point(y)?;
    Ok(distance_unchecked(x, y))
}

#[inline]
pub(crate) fn distance_unchecked(x: GraphPoint, y: GraphPoint) -> f64 {
    match (epsilon(x), epsilon(y)) {
        (Some(i), Some(j)) if i == j => (x.radius() - y.radius()).abs(),
        _ => x.radius() + y.radius(),
    }
}

/// Rescales the radius on ray `i` by `1/(N p_i)`. Identity for uniform `p`.
pub fn spider_transform(g: &StarGraph, x: GraphPoint) -> GraphPoint {
    match x {
        GraphPoint::Origin => GraphPoint::Origin,
        GraphPoint::Ray { ray, radius } => {
            let scale = g.n_rays() as f64 * g.prob(ray);
            GraphPoint::on_ray(ray, radius / scale)
        }
    }
}

/// Radius of the spider-transformed point.
#[inline]
pub fn spider_radius(g: &StarGraph, x: GraphPoint) -> f64 {
    match x {
        GraphPoint::Origin => 0.0,
        GraphPoint::Ray { ray, radius } => radius / (g.n_rays() as f64 * g.prob(ray)),
    }
}

/// Value and first two radial derivatives of a function on the graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// A function on the star graph, smooth along each ray.
///
/// Derivatives are taken along the ray in the outward direction. At the
/// origin `d1`/`d2` follow the `p`-weighted convention
/// `f'(0) = Σ p_i (f∘e_i)'(0+)`.
pub trait GraphFunction {
    fn eval(&self, g: &StarGraph, x: GraphPoint) -> Jet;

    /// `(f∘e_ray)'(0+)`.
    fn slope_at_origin(&self, ray: usize) -> f64;

    /// `Σ p_i (f∘e_i)'(0+)`, the coefficient of the local-time term.
    fn origin_slope(&self, g: &StarGraph) -> f64 {
        (1..=g.n_rays()).map(|i| g.prob(i) * self.slope_at_origin(i)).sum()
    }

    fn in_class_d(&self, g: &StarGraph) -> bool {
        self.origin_slope(g).abs() <= 1e-12
    }
}

/// `f∘e_i(r) = a_i (1 − e^{−r}) + b_i (1 − e^{−r})²`.
///
/// Bounded with bounded derivatives on every ray; `f(0) = 0` and
/// `(f∘e_i)'(0+) = a_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl TestFunction {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::config(format!(
                "coefficient vectors differ in length: {} vs {}",
                a.len(),
                b.len()
            )));
        }
        Ok(TestFunction { a, b })
    }

    pub fn zero(n_rays: usize) -> Self {
        TestFunction {
            a: vec![0.0; n_rays],
            b: vec![0.0; n_rays],
        }
    }

    /// Shifts `a` so that `Σ p_i a_i = 0`.
    pub fn project_to_class_d(mut self, g: &StarGraph) -> Self {
        let c: f64 = self.a.iter().zip(g.probs()).map(|(a, p)| a * p).sum();
        for a in &mut self.a {
            *a -= c;
        }
        self
    }

    #[inline]
    fn jet_on_ray(&self, ray: usize, r: f64) -> Jet {
        let a = self.a[ray - 1];
        let b = self.b[ray - 1];
        let e = (-r).exp();
        let u = 1.0 - e;
        Jet {
            value: a * u + b * u * u,
            d1: (a + 2.0 * b * u) * e,
            d2: e * (2.0 * b * e - a - 2.0 * b * u),
        }
    }
}

impl GraphFunction for TestFunction {
    fn eval(&self, g: &StarGraph, x: GraphPoint) -> Jet {
        match x {
            GraphPoint::Ray { ray, radius } => self.jet_on_ray(ray, radius),
            GraphPoint::Origin => {
                let mut d1 = 0.0;
                let mut d2 = 0.0;
                for i in 1..=g.n_rays() {
                    let j = self.jet_on_ray(i, 0.0);
                    d1 += g.prob(i) * j.d1;
                    d2 += g.prob(i) * j.d2;
                }
                Jet { value: 0.0, d1, d2 }
            }
        }
    }

    fn slope_at_origin(&self, ray: usize) -> f64 {
        self.a[ray - 1]
    }
}

/// `f^i(x) = |x| / (N p_i)` on ray `i`, zero elsewhere: the `i`-th spider component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpiderComponent {
    pub ray: usize,
    pub scale: f64,
}

impl SpiderComponent {
    pub fn new(g: &StarGraph, ray: usize) -> Self {
        SpiderComponent {
            ray,
            scale: 1.0 / (g.n_rays() as f64 * g.prob(ray)),
        }
    }
}

impl GraphFunction for SpiderComponent {
    fn eval(&self, g: &StarGraph, x: GraphPoint) -> Jet {
        match x {
            GraphPoint::Ray { ray, radius } if ray == self.ray => Jet {
                value: radius * self.scale,
                d1: self.scale,
                d2: 0.0,
            },
            GraphPoint::Ray { .. } => Jet {
                value: 0.0,
                d1: 0.0,
                d2: 0.0,
            },
            GraphPoint::Origin => Jet {
                value: 0.0,
                d1: g.prob(self.ray) * self.scale,
                d2: 0.0,
            },
        }
    }

    fn slope_at_origin(&self, ray: usize) -> f64 {
        if ray == self.ray {
            self.scale
        } else {
            0.0
        }
    }
}
