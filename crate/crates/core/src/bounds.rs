//! Closed-form crossing-time bounds and the identities behind them.
//!
//! The scale constants are inputs; nothing here fixes their values.

use std::f64::consts::PI;

use libm::erfc;
use serde::{Deserialize, Serialize};

use crate::quadrature::{integrate, QuadOptions};

/// Terms of the crossing sum below this size are dropped.
pub const SERIES_CUTOFF: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundScale {
    pub c_upper: f64,
    pub c_lower: f64,
    pub c0: f64,
}

/// `f_a(t) = (1 - a / sqrt t)^+`, zero for `t <= a^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaFunction {
    pub a: f64,
}

impl FaFunction {
    pub fn new(a: f64) -> Self {
        Self { a }
    }

    pub fn value(&self, t: f64) -> f64 {
        if t <= self.a * self.a {
            0.0
        } else {
            1.0 - self.a / t.sqrt()
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        if t <= self.a * self.a {
            0.0
        } else {
            self.a / (2.0 * t.powf(1.5))
        }
    }
}

/// `1 - erf(n delta / (c sqrt t))`.
pub fn erf_upper_cdf(n: u32, delta: f64, c: f64, t: f64) -> f64 {
    erfc(n as f64 * delta / (c * t.sqrt()))
}

/// `(1 - c n delta |ln delta| / sqrt t)^+`.
pub fn log_lower_cdf(n: u32, delta: f64, c: f64, t: f64) -> f64 {
    (1.0 - c * n as f64 * delta * delta.ln().abs() / t.sqrt()).max(0.0)
}

/// `(f_b * f_a')(t)`: zero below `a^2 + b^2`, closed form above.
pub fn fa_convolve(a: f64, b: f64, t: f64) -> f64 {
    if t <= a * a + b * b {
        return 0.0;
    }
    1.0 - (a * (t - b * b).sqrt() + b * (t - a * a).sqrt()) / t
}

/// Density of the `n`-th crossing time,
/// `n delta / (c0 sqrt(pi) t^{3/2}) exp(-n^2 delta^2 / (c0^2 t))`.
pub fn nth_crossing_density(n: u32, delta: f64, c0: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let nd = n as f64 * delta;
    let e = (-(nd * nd) / (c0 * c0 * t)).exp();
    if e == 0.0 {
        return 0.0;
    }
    nd / (c0 * PI.sqrt() * t.powf(1.5)) * e
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingSum {
    pub value: f64,
    /// Terms added before the cutoff was reached.
    pub terms: u32,
}

/// `sum_{n >= 1} erf_upper_cdf(n, delta, c, t)`, stopped at the first term
/// below [`SERIES_CUTOFF`].
pub fn expected_crossings_sum(delta: f64, c: f64, t: f64) -> CrossingSum {
    let mut value = 0.0;
    let mut n = 1u32;
    loop {
        let term = erf_upper_cdf(n, delta, c, t);
        if term < SERIES_CUTOFF {
            return CrossingSum { value, terms: n - 1 };
        }
        value += term;
        n += 1;
    }
}

/// Antiderivative `sqrt(s) / (t sqrt(t - s))` of `1 / (2 sqrt(s (t - s)^3))`.
pub fn quad_identity_antiderivative(t: f64, s: f64) -> f64 {
    s.sqrt() / (t * (t - s).sqrt())
}

/// `|numerical integral - antiderivative difference|` on `[s0, s1]`.
pub fn quad_identity_check(t: f64, s0: f64, s1: f64) -> f64 {
    let f = |s: f64| 1.0 / (2.0 * (s * (t - s).powi(3)).sqrt());
    let opts = QuadOptions {
        rel_tol: 1e-12,
        abs_tol: 1e-15,
        max_intervals: 10_000,
    };
    let num = integrate(f, s0, s1, opts).value;
    let exact = quad_identity_antiderivative(t, s1) - quad_identity_antiderivative(t, s0);
    (num - exact).abs()
}

/// Laplace transform of the first-crossing density, `exp(-2 delta sqrt(s) / c0)`.
pub fn laplace_gprime(s: f64, delta: f64, c0: f64) -> f64 {
    (-2.0 * delta * s.sqrt() / c0).exp()
}
