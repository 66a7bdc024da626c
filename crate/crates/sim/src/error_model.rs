//! Horizontal GPS error: a mixture of two Rayleigh radii with a uniform
//! bearing.
//!
//! Calibrated so that 75.6 % of fixes fall within 5 m and 93.1 % within 10 m.
//! Two quantiles fix only two of the three parameters; the wide component is
//! pinned at four times the narrow one.

use rand::Rng;
use serde::{Deserialize, Serialize};

pub const TARGET_WITHIN_5M: f64 = 0.756;
pub const TARGET_WITHIN_10M: f64 = 0.931;
pub const DEFAULT_SIGMA_RATIO: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialErrorModel {
    /// Narrow component scale, meters.
    pub sigma1: f64,
    /// Wide component scale, meters.
    pub sigma2: f64,
    /// Weight of the narrow component.
    pub p: f64,
}

impl Default for RadialErrorModel {
    fn default() -> Self {
        Self::calibrated()
    }
}

fn rayleigh_cdf(r: f64, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return if r >= 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - (-r * r / (2.0 * sigma * sigma)).exp()
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

impl RadialErrorModel {
    /// No error at all.
    pub const EXACT: RadialErrorModel = RadialErrorModel { sigma1: 0.0, sigma2: 0.0, p: 1.0 };

    pub fn cdf(&self, r: f64) -> f64 {
        self.p * rayleigh_cdf(r, self.sigma1) + (1.0 - self.p) * rayleigh_cdf(r, self.sigma2)
    }

    /// Solve for `(sigma1, p)` given `sigma2 = ratio * sigma1` and the two
    /// target probabilities. Returns the root with the heaviest narrow
    /// component, or `None` if the ratio admits no solution.
    pub fn calibrate(within_5m: f64, within_10m: f64, ratio: f64) -> Option<Self> {
        let sigma1_for = |p: f64| {
            // cdf(5) falls monotonically as sigma1 grows
            bisect(1e-6, 1e3, |s| p * rayleigh_cdf(5.0, s) + (1.0 - p) * rayleigh_cdf(5.0, ratio * s) - within_5m)
        };
        let residual = |p: f64| {
            let s = sigma1_for(p);
            p * rayleigh_cdf(10.0, s) + (1.0 - p) * rayleigh_cdf(10.0, ratio * s) - within_10m
        };
        let mut hi = 0.999;
        let mut r_hi = residual(hi);
        while hi > 0.01 {
            let lo = hi - 0.001;
            let r_lo = residual(lo);
            if (r_lo > 0.0) != (r_hi > 0.0) {
                let p = bisect(lo, hi, residual);
                let sigma1 = sigma1_for(p);
                return Some(Self { sigma1, sigma2: ratio * sigma1, p });
            }
            hi = lo;
            r_hi = r_lo;
        }
        None
    }

    pub fn calibrated() -> Self {
        Self::calibrate(TARGET_WITHIN_5M, TARGET_WITHIN_10M, DEFAULT_SIGMA_RATIO).expect("ratio 4 has a root")
    }

    pub fn sample_radius(&self, rng: &mut impl Rng) -> f64 {
        let sigma = if rng.random::<f64>() < self.p { self.sigma1 } else { self.sigma2 };
        // 1 - U lies in (0, 1]
        let u: f64 = 1.0 - rng.random::<f64>();
        sigma * (-2.0 * u.ln()).sqrt()
    }

    /// `(east, north)` offset in meters.
    pub fn sample_radial_error(&self, rng: &mut impl Rng) -> (f64, f64) {
        let r = self.sample_radius(rng);
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        (r * theta.cos(), r * theta.sin())
    }
}
