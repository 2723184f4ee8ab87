use std::f64::consts::FRAC_PI_2;

use cellflow::cellpde::*;
use cellflow::FlowParams;

fn centre_value(f: &CellField) -> f64 {
    f.interpolate(cellflow::Point::new(FRAC_PI_2, FRAC_PI_2))
}

#[test]
fn pure_diffusion_exit_is_uniform_at_the_centre() {
    let g = PeriodicGrid::new(128).unwrap();
    let o = PdeOptions::default();
    let fields: Vec<CellField> = Side::ALL.iter().map(|s| solve_exit_probability(0.0, *s, &g, &o).unwrap()).collect();
    for f in &fields {
        assert!((centre_value(f) - 0.25).abs() < 1e-10, "{}", f.name);
        assert!(f.min() >= -1e-12 && f.max() <= 1.0 + 1e-12);
    }
}

#[test]
fn exit_probabilities_partition_unity_and_respect_bounds() {
    let g = PeriodicGrid::new(192).unwrap();
    let o = PdeOptions::default();
    let fields: Vec<CellField> = Side::ALL.iter().map(|s| solve_exit_probability(400.0, *s, &g, &o).unwrap()).collect();
    for k in 0..fields[0].values.len() {
        let s: f64 = fields.iter().map(|f| f.values[k]).sum();
        assert!((s - 1.0).abs() < 1e-8);
    }
    for f in &fields {
        assert!(f.min() >= -1e-12 && f.max() <= 1.0 + 1e-12);
    }
    // on closed streamlines the four exits are equally likely at the centre
    for f in &fields {
        assert!((centre_value(f) - 0.25).abs() < 1e-8, "{} {}", f.name, centre_value(f));
    }
}

#[test]
fn effective_diffusivity_is_isotropic_and_grows_with_peclet() {
    let o = PdeOptions::default();
    let mut last = 2.0;
    for a in [25.0, 100.0, 400.0] {
        let s = solve_chi(a, &PeriodicGrid::for_peclet(a), &o).unwrap();
        let d = s.d_eff;
        assert!((d[0][0] - d[1][1]).abs() < 1e-9 * d[0][0]);
        assert!(d[0][1].abs() < 1e-9 * d[0][0]);
        assert!(d[0][0] > last, "A={a}: {} <= {last}", d[0][0]);
        assert!(s.residual_max < 1e-9);
        last = d[0][0];
    }
}

#[test]
fn quarter_cell_reduction_matches_full_period_solve() {
    let o = PdeOptions {
        grading: 0.0,
        ..Default::default()
    };
    let g = PeriodicGrid::new(128).unwrap();
    let reduced = solve_chi(25.0, &g, &o).unwrap().d_eff;
    let full = solve_chi_periodic(25.0, &g, &o).unwrap();
    assert!((reduced[0][0] - full[0][0]).abs() < 0.02 * full[0][0], "{reduced:?} vs {full:?}");
    assert!((reduced[1][1] - full[1][1]).abs() < 0.02 * full[1][1]);
}

#[test]
fn corrector_richardson_gap_is_small_at_moderate_peclet() {
    let (fine, check) = richardson_deff(100.0, &PeriodicGrid::for_peclet(100.0), &PdeOptions::default()).unwrap();
    assert!(check.resolved(0.02), "{check:?}");
    assert_eq!(fine.resolution, 2 * check.resolution);
    assert!((fine.d_eff[0][0] - check.fine).abs() < 1e-12);
}

#[test]
fn flux_estimate_agrees_with_energy_quadrature() {
    let s = solve_chi(100.0, &PeriodicGrid::for_peclet(100.0), &PdeOptions::default()).unwrap();
    assert!((s.d11_flux - s.d_eff[0][0]).abs() < 0.02 * s.d_eff[0][0], "{} vs {}", s.d11_flux, s.d_eff[0][0]);
}

#[test]
fn resolvent_is_bounded_by_its_free_value() {
    let g = PeriodicGrid::for_peclet(400.0);
    let o = PdeOptions::default();
    for lambda in [4.0, 16.0, 64.0] {
        let f = solve_resolvent(400.0, lambda, &g, &o).unwrap();
        assert!(f.min() > 0.0);
        assert!(f.max() <= 1.0 / lambda + 1e-12);
        // near the walls the field is much smaller than in the core
        let delta = FlowParams::new(400.0, 1.0).unwrap().delta();
        assert!(sup_in_layer(&f, delta) < f.max());
    }
}

#[test]
fn supersolution_audits_pass_at_moderate_peclet() {
    let p = FlowParams::new(400.0, 1.0).unwrap();
    let samples = 200;
    let candidates = [
        SupersolutionCandidate::corner(&p),
        SupersolutionCandidate::edge(&p, samples),
        SupersolutionCandidate::exit(&p, samples),
        SupersolutionCandidate::PsiPlus { c0: 10.0, t_max: 0.125 },
        SupersolutionCandidate::resolvent(64.0, &p, samples),
    ];
    for c in &candidates {
        let r = verify_supersolution(c, &p, samples).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.min_residual >= r.required - 1e-9, "{r:?}");
    }
}

#[test]
fn corner_glue_slopes_are_ordered() {
    for a in [100.0, 400.0, 1600.0, 6400.0] {
        let (g0, g1) = corner_glue_slopes(a);
        assert!((g0 + 1.5 / f64::sqrt(a)).abs() < 1e-15);
        assert!((g1 + 12.0 / f64::sqrt(a)).abs() < 1e-12);
        assert!(g0 >= g1);
    }
}

#[test]
fn psi_plus_fails_beyond_its_time_window() {
    // the residual bracket 1/2 - 2|grad h|^2/c0 - 2t turns negative past t = 0.15 at c0 = 10
    let p = FlowParams::new(400.0, 1.0).unwrap();
    let late = SupersolutionCandidate::PsiPlus { c0: 10.0, t_max: 0.5 };
    let r = verify_supersolution(&late, &p, 200).unwrap();
    assert!(!r.pass, "{r:?}");
    assert!(r.t_at_min.unwrap() > 0.15);
}
