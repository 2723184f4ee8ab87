//! Exact identities behind the crossing-time bounds.

use cellflow::bounds::{
    erf_upper_cdf, fa_convolve, laplace_gprime, nth_crossing_density, quad_identity_check, FaFunction,
};
use cellflow::quadrature::{integrate, integrate_to_infinity, QuadOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestRow {
    pub check: String,
    /// Worst observed error, or the worst margin for inequality checks.
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn err_row(check: &str, value: f64, tolerance: f64) -> SelftestRow {
    SelftestRow {
        check: check.into(),
        value,
        tolerance,
        pass: value <= tolerance,
    }
}

fn quad_rows() -> Vec<SelftestRow> {
    let worst = [(1.0, 0.0, 0.5), (1.0, 0.25, 0.5), (0.37, 0.0, 0.2), (2.0, 0.5, 1.5)]
        .iter()
        .map(|&(t, a, b)| quad_identity_check(t, a, b))
        .fold(0.0, f64::max);
    vec![err_row("quad_identity", worst, 1e-8)]
}

fn density_rows() -> Vec<SelftestRow> {
    let opts = QuadOptions::default();
    let mut norm = 0.0f64;
    let mut cdf = 0.0f64;
    for n in [1u32, 2, 4] {
        for &(delta, c0) in &[(0.05, 1.0), (0.02, 0.5), (0.1, 2.0)] {
            let f = |t: f64| nth_crossing_density(n, delta, c0, t);
            norm = norm.max((integrate_to_infinity(f, 0.0, opts).value - 1.0).abs());
            for &t in &[1e-4, 1e-3, 1e-2, 0.1, 1.0] {
                let q = integrate(f, 0.0, t, opts).value;
                cdf = cdf.max((q - erf_upper_cdf(n, delta, c0, t)).abs());
            }
        }
    }
    vec![err_row("density_normalization", norm, 1e-8), err_row("density_cdf", cdf, 1e-8)]
}

fn convolution_rows() -> Vec<SelftestRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = f64::INFINITY;
    for _ in 0..100 {
        let a: f64 = rng.random_range(0.01..1.0);
        let b: f64 = rng.random_range(0.01..1.0);
        let fab = FaFunction::new(a + b);
        let t_max = 10.0 * (a + b) * (a + b);
        for k in 1..=400 {
            let t = t_max * k as f64 / 400.0;
            worst = worst.min(fa_convolve(a, b, t) - fab.value(t));
        }
    }
    vec![SelftestRow {
        check: "convolution_dominates_shift".into(),
        value: worst,
        tolerance: -1e-12,
        pass: worst >= -1e-12,
    }]
}

fn laplace_rows() -> Vec<SelftestRow> {
    let opts = QuadOptions::default();
    let mut worst = 0.0f64;
    for &(delta, c0) in &[(0.05, 0.8), (0.02, 1.5)] {
        for &s in &[0.5, 10.0, 200.0] {
            let g1 = laplace_gprime(s, delta, c0);
            for n in [1u32, 2, 3, 4] {
                let gn = integrate_to_infinity(|t| (-s * t).exp() * nth_crossing_density(n, delta, c0, t), 0.0, opts).value;
                worst = worst.max((gn - g1.powi(n as i32)).abs());
            }
        }
    }
    vec![err_row("laplace_product_rule", worst, 1e-6)]
}

/// Every identity check with its worst error and tolerance.
pub fn run_selftest() -> Vec<SelftestRow> {
    let mut rows = quad_rows();
    rows.extend(density_rows());
    rows.extend(convolution_rows());
    rows.extend(laplace_rows());
    rows
}
