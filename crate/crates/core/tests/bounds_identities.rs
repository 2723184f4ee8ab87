use std::f64::consts::PI;

use cellflow::bounds::*;
use cellflow::quadrature::{integrate, integrate_to_infinity, QuadOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// erf by its Maclaurin series, accurate to ~1e-13 for |x| <= 3.
fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term.abs() > 1e-18 * sum.abs().max(1e-300) {
        n += 1.0;
        term *= -x * x / n;
        sum += term / (2.0 * n + 1.0);
    }
    2.0 / PI.sqrt() * sum
}

#[test]
fn series_oracle_reproduces_known_erf_values() {
    assert!((1.0 - erf_series(1.0) - 0.157_299_207_050_285_1).abs() < 1e-14);
    assert!((erf_series(0.5) - 0.520_499_877_813_046_5).abs() < 1e-14);
}

#[test]
fn upper_cdf_matches_series_oracle() {
    for n in 1..=4u32 {
        for &(delta, c, t) in &[(0.05, 1.0, 0.01), (0.025, 0.7, 0.002), (0.1, 2.0, 0.3), (0.0125, 1.3, 1e-4)] {
            let x = n as f64 * delta / (c * f64::sqrt(t));
            if x > 3.0 {
                continue;
            }
            let want = 1.0 - erf_series(x);
            assert!((erf_upper_cdf(n, delta, c, t) - want).abs() < 1e-12, "n={n} x={x}");
        }
    }
}

#[test]
fn first_crossing_bound_at_unit_argument() {
    // n delta / (c sqrt t) = 1
    let v = erf_upper_cdf(1, 0.1, 1.0, 0.01);
    assert!((v - 0.157_299_207_050_285_1).abs() < 1e-12);
}

#[test]
fn density_is_normalised_and_integrates_to_the_bound() {
    let opts = QuadOptions::default();
    for n in [1u32, 2, 4] {
        for &(delta, c0) in &[(0.05, 1.0), (0.02, 0.5)] {
            let f = |t: f64| nth_crossing_density(n, delta, c0, t);
            let total = integrate_to_infinity(f, 0.0, opts);
            assert!((total.value - 1.0).abs() < 1e-8, "n={n} total={}", total.value);
            for &t in &[1e-4, 1e-3, 1e-2, 0.1] {
                let cdf = integrate(f, 0.0, t, opts).value;
                let want = erf_upper_cdf(n, delta, c0, t);
                assert!((cdf - want).abs() < 1e-8, "n={n} t={t}: {cdf} vs {want}");
            }
        }
    }
}

#[test]
fn quadratic_identity_residuals() {
    assert!((quad_identity_antiderivative(1.0, 0.5) - quad_identity_antiderivative(1.0, 0.0) - 1.0).abs() < 1e-15);
    assert!(quad_identity_check(1.0, 0.0, 0.5) <= 1e-8);
    assert!(quad_identity_check(1.0, 0.25, 0.5) <= 1e-8);
    assert!(quad_identity_check(0.37, 0.0, 0.2) <= 1e-8);
    assert!(quad_identity_check(1.0, 0.0, 1.0 - 1e-6) <= 1e-6);
}

#[test]
fn convolution_dominates_shifted_family() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let a: f64 = rng.random_range(0.01..1.0);
        let b: f64 = rng.random_range(0.01..1.0);
        let fab = FaFunction::new(a + b);
        let t_max = 10.0 * (a + b) * (a + b);
        for k in 1..=400 {
            let t = t_max * k as f64 / 400.0;
            let diff = fa_convolve(a, b, t) - fab.value(t);
            assert!(diff >= -1e-12, "a={a} b={b} t={t} diff={diff}");
        }
    }
}

#[test]
fn convolution_closed_form_matches_quadrature() {
    let (a, b) = (0.3, 0.5);
    let fa = FaFunction::new(a);
    let fb = FaFunction::new(b);
    for &t in &[0.5, 1.0, 3.0] {
        // (f_b * f_a')(t) = int_0^t f_b(t - s) f_a'(s) ds
        let g = |s: f64| fb.value(t - s) * fa.derivative(s);
        let q = integrate(g, a * a, t, QuadOptions::default()).value;
        assert!((q - fa_convolve(a, b, t)).abs() < 1e-8, "t={t}");
    }
}

#[test]
fn laplace_transform_of_density_and_product_rule() {
    let (delta, c0) = (0.05, 0.8);
    let opts = QuadOptions::default();
    for &s in &[0.5, 10.0, 200.0] {
        let g1 = integrate_to_infinity(|t| (-s * t).exp() * nth_crossing_density(1, delta, c0, t), 0.0, opts).value;
        assert!((g1 - laplace_gprime(s, delta, c0)).abs() < 1e-7, "s={s}");
        // the 3-fold convolution of the first-crossing density is the n = 3 density
        let g3 = integrate_to_infinity(|t| (-s * t).exp() * nth_crossing_density(3, delta, c0, t), 0.0, opts).value;
        assert!((g3 - laplace_gprime(s, delta, c0).powi(3)).abs() < 1e-6, "s={s}");
    }
}

#[test]
fn crossing_sum_scales_like_sqrt_t_over_delta() {
    // the sum is c sqrt t / (delta sqrt pi) - 1/2 + small, so the ratio
    // settles once sqrt t >> delta / c
    let delta = 5e-4;
    for &c in &[0.5, 1.0, 2.0, 4.0] {
        let mut ratios = Vec::new();
        for &t in &[1e-3, 1e-2, 1e-1, 1.0] {
            let r = expected_crossings_sum(delta, c, t);
            let ratio = r.value * delta / t.sqrt();
            assert!(ratio >= 0.3 * c && ratio <= 1.2 * c, "c={c} t={t} ratio={ratio}");
            let cap = (12.0 * c * t.sqrt() / delta).ceil() as u32 + 1;
            assert!(r.terms <= cap, "c={c} t={t} terms={} cap={cap}", r.terms);
            ratios.push(ratio);
        }
        if c >= 1.0 {
            let (lo, hi) = ratios[1..].iter().fold((f64::MAX, 0.0f64), |(l, h), &r| (l.min(r), h.max(r)));
            assert!(hi / lo - 1.0 < 0.01, "c={c} ratios={ratios:?}");
        }
    }
}

#[test]
fn crossing_sum_terms_vanish_when_layer_is_wide() {
    let r = expected_crossings_sum(0.1, 1.0, 1e-4);
    assert!(r.value < 1e-14);
}

#[test]
fn lower_bound_sits_below_upper_for_consistent_constants() {
    let delta = 0.025;
    for n in [1u32, 2, 4] {
        for k in 1..=200 {
            let t = 0.2 * k as f64 / 200.0;
            assert!(log_lower_cdf(n, delta, 1.0, t) <= erf_upper_cdf(n, delta, 1.0, t) + 1e-15);
        }
    }
}
