//! Reproducible Brownian driver increments.
//!
//! Every draw is a pure function of `(master_seed, stream_id, index)`: the
//! generator is ChaCha8 in counter mode, keyed by the master seed with the
//! stream id as nonce, so workers can produce disjoint streams in any order.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};

/// Identifies one independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_id: u64,
}

/// What a stream is used for. Part of the stream id so that different
/// consumers of the same path never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    Driver = 1,
    DriverHat = 2,
    RaysX = 3,
    RaysY = 4,
    Auxiliary = 5,
    Exact = 6,
    Ensemble = 7,
    Synthetic = 8,
}

impl SeedSpec {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        SeedSpec {
            master_seed,
            stream_id,
        }
    }

    /// Stream id layout: `[experiment:8][purpose:8][sub:16][path:32]`.
    pub fn derive(master_seed: u64, experiment: u8, purpose: Purpose, path: u32) -> Self {
        let stream_id =
            (experiment as u64) << 56 | (purpose as u64) << 48 | (path as u64);
        SeedSpec::new(master_seed, stream_id)
    }

    /// Same stream coordinates with the 16-bit sub-index replaced.
    pub fn with_sub(self, sub: u16) -> Self {
        let mask = !(0xffffu64 << 32);
        SeedSpec::new(
            self.master_seed,
            (self.stream_id & mask) | (sub as u64) << 32,
        )
    }

    /// Same stream coordinates with a different purpose byte.
    pub fn with_purpose(self, purpose: Purpose) -> Self {
        let mask = !(0xffu64 << 48);
        SeedSpec::new(
            self.master_seed,
            (self.stream_id & mask) | (purpose as u64) << 48,
        )
    }

    pub fn stream(self) -> RandomStream {
        RandomStream::new(self)
    }
}

/// Sequential reader over one counter-based stream.
#[derive(Clone)]
pub struct RandomStream {
    rng: ChaCha8Rng,
}

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

impl RandomStream {
    pub fn new(seed: SeedSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.master_seed);
        rng.set_stream(seed.stream_id);
        RandomStream { rng }
    }

    /// Positions the stream so the next draw is the `index`-th 64-bit word.
    pub fn seek(&mut self, index: u64) {
        self.rng.set_word_pos(2 * index as u128);
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on the open interval `(0, 1)`.
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * TWO_POW_M53
    }

    /// Standard Gaussian by inverse CDF.
    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        normal_quantile(self.next_uniform())
    }

    /// The `index`-th uniform of the stream, independent of the read position.
    pub fn uniform_at(&mut self, index: u64) -> f64 {
        self.seek(index);
        self.next_uniform()
    }
}

/// Inverse of the standard normal CDF (Wichura's AS241, about 1e-16 relative).
pub fn normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2509.0809287301226727 * r + 33430.575583588128105) * r
                + 67265.770927008700853)
                * r
                + 45921.953931549871457)
                * r
                + 13731.693765509461125)
                * r
                + 1971.5909503065514427)
                * r
                + 133.14166789178437745)
                * r
                + 3.387132872796366608)
            / (((((((5226.495278852545925 * r + 28729.085735721942674) * r
                + 39307.89580009271061)
                * r
                + 21213.794301586595867)
                * r
                + 5394.1960214247511077)
                * r
                + 687.1870074920579083)
                * r
                + 42.313330701600911252)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r
            + 0.24178072517745061177)
            * r
            + 1.27045825245236838258)
            * r
            + 3.64784832476320460504)
            * r
            + 5.7694972214606914055)
            * r
            + 4.6303378461565452959)
            * r
            + 1.42343711074968357734)
            / (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r
                + 0.0151986665636164571966)
                * r
                + 0.14810397642748007459)
                * r
                + 0.68976733498510000455)
                * r
                + 1.6763848301838038494)
                * r
                + 2.05319162663775882187)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
            + 0.0012426609473880784386)
            * r
            + 0.026532189526576123093)
            * r
            + 0.29656057182850489123)
            * r
            + 1.7848265399172913358)
            * r
            + 5.4637849111641143699)
            * r
            + 6.6579046435011037772)
            / (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r
                + 1.8463183175100546818e-5)
                * r
                + 7.868691311456132591e-4)
                * r
                + 0.0148753612908506148525)
                * r
                + 0.13692988092273580531)
                * r
                + 0.59983220655588793769)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Increments of an `N`-dimensional Brownian motion on a uniform grid.
///
/// Each entry also carries a uniform that fixes the minimum of the Brownian
/// bridge of that coordinate over that step (see
/// [`crate::sde_sim::bridge_minimum`]), so every path reading the same
/// coordinate sees the same continuous trajectory between grid points.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverPath {
    pub dt: f64,
    pub steps: usize,
    pub n_rays: usize,
    /// Row-major `steps × n_rays`.
    pub increments: Vec<f64>,
    /// Row-major `steps × n_rays`, uniforms in `(0, 1)` independent of the
    /// increments.
    pub bridge_uniforms: Vec<f64>,
}

impl DriverPath {
    /// Increments of all coordinates over step `k`.
    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        &self.increments[k * self.n_rays..(k + 1) * self.n_rays]
    }

    /// Increment of coordinate `ray` (1-based) over step `k`.
    #[inline]
    pub fn dw(&self, k: usize, ray: usize) -> f64 {
        self.increments[k * self.n_rays + ray - 1]
    }

    /// Bridge uniform of coordinate `ray` (1-based) over step `k`.
    #[inline]
    pub fn bridge_uniform(&self, k: usize, ray: usize) -> f64 {
        self.bridge_uniforms[k * self.n_rays + ray - 1]
    }

    /// Increments of a single coordinate (1-based).
    pub fn coordinate(&self, ray: usize) -> impl Iterator<Item = f64> + '_ {
        self.increments
            .iter()
            .skip(ray - 1)
            .step_by(self.n_rays)
            .copied()
    }

    /// `W^ray` at grid time `k·dt`.
    pub fn value_at(&self, k: usize, ray: usize) -> f64 {
        self.coordinate(ray).take(k).sum()
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    /// The same Brownian path observed every `factor` steps.
    ///
    /// Each coarse step keeps the bridge uniform of its first fine step,
    /// which is still uniform and independent of the summed increments.
    pub fn coarsen(&self, factor: usize) -> Result<DriverPath> {
        if factor == 0 || self.steps % factor != 0 {
            return Err(Error::config(format!(
                "cannot coarsen {} steps by a factor {factor}",
                self.steps
            )));
        }
        let n = self.n_rays;
        let steps = self.steps / factor;
        let mut increments = vec![0.0; steps * n];
        let mut bridge_uniforms = Vec::with_capacity(steps * n);
        for k in 0..steps {
            for j in 0..factor {
                for (acc, x) in increments[k * n..(k + 1) * n]
                    .iter_mut()
                    .zip(self.row(k * factor + j))
                {
                    *acc += x;
                }
            }
            let first = k * factor * n;
            bridge_uniforms.extend_from_slice(&self.bridge_uniforms[first..first + n]);
        }
        Ok(DriverPath {
            dt: self.dt * factor as f64,
            steps,
            n_rays: n,
            increments,
            bridge_uniforms,
        })
    }

    fn same_shape(&self, other: &DriverPath) -> Result<()> {
        if self.steps != other.steps || self.n_rays != other.n_rays {
            return Err(Error::config(format!(
                "driver shapes differ: {}x{} vs {}x{}",
                self.steps, self.n_rays, other.steps, other.n_rays
            )));
        }
        if (self.dt - other.dt).abs() > 1e-15 * self.dt {
            return Err(Error::config(format!(
                "driver time steps differ: {} vs {}",
                self.dt, other.dt
            )));
        }
        Ok(())
    }
}

/// Gaussian increments with variance `dt`, independent across entries.
///
/// The increments occupy the first `steps·n_rays` draws of the stream and
/// the bridge uniforms the next `steps·n_rays`.
pub fn gen_driver(n_rays: usize, dt: f64, steps: usize, seed: SeedSpec) -> Result<DriverPath> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::config(format!("time step must be positive, got {dt}")));
    }
    if steps == 0 {
        return Err(Error::config("need at least one step"));
    }
    if n_rays == 0 {
        return Err(Error::config("driver needs at least one coordinate"));
    }
    let sd = dt.sqrt();
    let mut stream = seed.stream();
    let len = steps * n_rays;
    let increments = (0..len).map(|_| sd * stream.next_normal()).collect();
    let bridge_uniforms = (0..len).map(|_| stream.next_uniform()).collect();
    Ok(DriverPath {
        dt,
        steps,
        n_rays,
        increments,
        bridge_uniforms,
    })
}

/// Uniform whose Gaussian score is `(a·Φ⁻¹(u) + b·Φ⁻¹(v)) / √(a²+b²)`.
///
/// Used for the bridge uniforms of a linear combination of drivers: the
/// result is again uniform and independent of the increments, and equals
/// `u` (resp. `v`) when `b = 0` (resp. `a = 0`).
pub fn blend_uniforms(u: f64, a: f64, v: f64, b: f64) -> f64 {
    if b == 0.0 {
        return u;
    }
    if a == 0.0 {
        return if b > 0.0 { v } else { 1.0 - v };
    }
    let z = (a * normal_quantile(u) + b * normal_quantile(v)) / a.hypot(b);
    normal_cdf(z).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Entrywise `a·w + b·w_hat`.
pub fn combine_drivers(w: &DriverPath, a: f64, w_hat: &DriverPath, b: f64) -> Result<DriverPath> {
    w.same_shape(w_hat)?;
    let increments = w
        .increments
        .iter()
        .zip(&w_hat.increments)
        .map(|(x, y)| a * x + b * y)
        .collect();
    let bridge_uniforms = w
        .bridge_uniforms
        .iter()
        .zip(&w_hat.bridge_uniforms)
        .map(|(u, v)| blend_uniforms(*u, a, *v, b))
        .collect();
    Ok(DriverPath {
        dt: w.dt,
        steps: w.steps,
        n_rays: w.n_rays,
        increments,
        bridge_uniforms,
    })
}

fn check_correlation(r: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::config(format!("mixing parameter must lie in [0,1], got {r}")));
    }
    Ok(())
}

/// `W^r = r W + √(1−r²) Ŵ`.
pub fn mix_drivers(w: &DriverPath, w_hat: &DriverPath, r: f64) -> Result<DriverPath> {
    check_correlation(r)?;
    if r == 1.0 {
        w.same_shape(w_hat)?;
        return Ok(w.clone());
    }
    if r == 0.0 {
        w.same_shape(w_hat)?;
        return Ok(w_hat.clone());
    }
    combine_drivers(w, r, w_hat, (1.0 - r * r).sqrt())
}

/// `√(1−r²) W − r Ŵ`, the driver independent of [`mix_drivers`]`(w, w_hat, r)`.
pub fn independent_complement(w: &DriverPath, w_hat: &DriverPath, r: f64) -> Result<DriverPath> {
    check_correlation(r)?;
    combine_drivers(w, (1.0 - r * r).sqrt(), w_hat, -r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seed(id: u64) -> SeedSpec {
        SeedSpec::new(42, id)
    }

    #[test]
    fn quantile_matches_known_values() {
        assert!(normal_quantile(0.5).abs() < 1e-16);
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-13);
        assert!((normal_quantile(0.025) + 1.959963984540054).abs() < 1e-13);
        assert!((normal_quantile(1e-10) + 6.361340902404056).abs() < 1e-10);
        assert!((normal_quantile(0.8413447460685429) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_is_open_interval() {
        let mut s = seed(1).stream();
        for _ in 0..10_000 {
            let u = s.next_uniform();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn random_access_matches_sequential() {
        let mut s = seed(9).stream();
        let seq: Vec<f64> = (0..20).map(|_| s.next_uniform()).collect();
        let mut t = seed(9).stream();
        for k in [13u64, 0, 19, 5] {
            assert_eq!(t.uniform_at(k), seq[k as usize]);
        }
    }

    #[test]
    fn driver_is_deterministic() {
        let a = gen_driver(3, 0.01, 100, seed(7)).unwrap();
        let b = gen_driver(3, 0.01, 100, seed(7)).unwrap();
        assert_eq!(a, b);
        let c = gen_driver(3, 0.01, 100, seed(8)).unwrap();
        assert_ne!(a.increments, c.increments);
    }

    #[test]
    fn coarsening_keeps_grid_values() {
        let w = gen_driver(2, 0.01, 12, seed(3)).unwrap();
        let c = w.coarsen(4).unwrap();
        assert_eq!((c.steps, c.dt), (3, 0.04));
        for k in 0..=3 {
            for ray in 1..=2 {
                assert!((c.value_at(k, ray) - w.value_at(4 * k, ray)).abs() < 1e-15);
            }
        }
        assert_eq!(c.bridge_uniform(1, 2), w.bridge_uniform(4, 2));
        assert!(w.coarsen(5).is_err());
        assert_eq!(w.coarsen(1).unwrap(), w);
    }

    #[test]
    fn driver_rejects_bad_config() {
        assert!(matches!(gen_driver(3, 0.0, 10, seed(1)), Err(Error::Config(_))));
        assert!(matches!(gen_driver(3, -1.0, 10, seed(1)), Err(Error::Config(_))));
        assert!(matches!(gen_driver(3, 0.1, 0, seed(1)), Err(Error::Config(_))));
    }

    #[test]
    fn mixing_endpoints_are_exact() {
        let w = gen_driver(2, 0.01, 50, seed(1)).unwrap();
        let v = gen_driver(2, 0.01, 50, seed(2)).unwrap();
        assert_eq!(mix_drivers(&w, &v, 1.0).unwrap(), w);
        assert_eq!(mix_drivers(&w, &v, 0.0).unwrap(), v);
        assert!(mix_drivers(&w, &v, 1.5).is_err());
        let short = gen_driver(2, 0.01, 40, seed(3)).unwrap();
        assert!(matches!(mix_drivers(&w, &short, 0.5), Err(Error::Config(_))));
    }

    #[test]
    fn sub_and_purpose_fields_are_disjoint() {
        let s = SeedSpec::derive(1, 4, Purpose::RaysX, 77);
        let t = s.with_sub(3).with_purpose(Purpose::RaysY);
        assert_eq!(t.stream_id & 0xffff_ffff, 77);
        assert_eq!((t.stream_id >> 32) & 0xffff, 3);
        assert_eq!((t.stream_id >> 48) & 0xff, Purpose::RaysY as u64);
        assert_eq!(t.stream_id >> 56, 4);
    }

    #[test]
    fn bridge_uniforms_follow_increments_in_stream() {
        let w = gen_driver(2, 0.01, 10, seed(5)).unwrap();
        let mut s = seed(5).stream();
        assert_eq!(w.bridge_uniform(0, 1), s.uniform_at(20));
        assert_eq!(w.bridge_uniform(9, 2), s.uniform_at(39));
    }

    #[test]
    fn blended_uniforms_are_uniform() {
        let mut s = seed(6).stream();
        let n = 200_000;
        let mut below = [0usize; 4];
        for _ in 0..n {
            let u = blend_uniforms(s.next_uniform(), 0.6, s.next_uniform(), 0.8);
            assert!(u > 0.0 && u < 1.0);
            below[((u * 4.0) as usize).min(3)] += 1;
        }
        for c in below {
            let f = c as f64 / n as f64;
            assert!((f - 0.25).abs() < 4.0 * (0.25 * 0.75 / n as f64).sqrt(), "{f}");
        }
        assert_eq!(blend_uniforms(0.3, 1.0, 0.9, 0.0), 0.3);
        assert_eq!(blend_uniforms(0.3, 0.0, 0.9, 1.0), 0.9);
        assert!((blend_uniforms(0.3, 1.0, 0.9, 1e-12) - 0.3).abs() < 1e-9);
    }

    #[test]
    fn coordinate_accessors_agree() {
        let w = gen_driver(3, 0.1, 5, seed(4)).unwrap();
        let c2: Vec<f64> = w.coordinate(2).collect();
        assert_eq!(c2.len(), 5);
        for k in 0..5 {
            assert_eq!(c2[k], w.dw(k, 2));
            assert_eq!(w.row(k)[1], w.dw(k, 2));
        }
        assert!((w.value_at(5, 2) - c2.iter().sum::<f64>()).abs() < 1e-15);
    }
}
