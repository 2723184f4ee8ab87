use std::f64::consts::{FRAC_PI_2, PI};

use cellflow::crossing::{classify_hit_coordinate, EventKind, Tolerances};
use cellflow::ensemble::{run_ensemble, EnsembleSpec, PathRecord};
use cellflow::flowfield::hamiltonian;
use cellflow::stats::{coordinate_balance, variance_curve};
use cellflow::{FlowParams, Point, StepPolicy};

fn ensemble(peclet: f64, x0: Point, paths: usize, times: Vec<f64>, policy: StepPolicy, crossings: bool) -> Vec<PathRecord> {
    let spec = EnsembleSpec {
        params: FlowParams::new(peclet, 1.0).unwrap(),
        policy,
        seed: 97,
        paths,
        path_offset: 0,
        x0,
        times,
        track_crossings: crossings,
    };
    run_ensemble(&spec).unwrap()
}

#[test]
fn zero_drift_gives_free_diffusion() {
    let times = vec![0.05, 0.25];
    let recs = ensemble(0.0, Point::new(0.3, -1.2), 20_000, times.clone(), StepPolicy::default(), false);
    let curve = variance_curve(&recs, &times).unwrap();
    for p in &curve.points {
        assert!(p.var1.within(2.0 * p.t, 3.0), "{p:?}");
        assert!(p.var2.within(2.0 * p.t, 3.0), "{p:?}");
        assert!(p.msd.within(4.0 * p.t, 3.0), "{p:?}");
    }
}

#[test]
fn halving_the_step_keeps_the_variance() {
    let times = vec![0.02, 0.05];
    let x0 = Point::new(FRAC_PI_2, 0.0);
    let coarse = ensemble(100.0, x0, 4000, times.clone(), StepPolicy::default(), false);
    let fine = ensemble(100.0, x0, 4000, times.clone(), StepPolicy::default().halved(), false);
    let a = variance_curve(&coarse, &times).unwrap();
    let b = variance_curve(&fine, &times).unwrap();
    for (p, q) in a.points.iter().zip(&b.points) {
        let se = (p.msd.se.powi(2) + q.msd.se.powi(2)).sqrt();
        assert!((p.msd.mean - q.msd.mean).abs() <= 4.0 * se, "{p:?} vs {q:?}");
    }
}

#[test]
fn crossing_logs_are_consistent_over_many_paths() {
    let params = FlowParams::new(1000.0, 1.0).unwrap();
    let delta = params.delta();
    let tol = Tolerances::default();
    let recs = ensemble(1000.0, Point::new(0.0, 0.0), 10_000, vec![0.02], StepPolicy::default(), true);
    let mut hits = 0usize;
    let mut ambiguous = 0usize;
    for r in &recs {
        let log = r.log.as_ref().unwrap();
        assert!(log.is_well_ordered(), "path {}", r.path_index);
        for e in log.events() {
            let h = hamiltonian(e.pos).abs();
            match e.kind {
                EventKind::SeparatrixHit => {
                    hits += 1;
                    assert!(h <= 1e-8, "hit off separatrix: {e:?}");
                    assert_eq!(e.coord, classify_hit_coordinate(e.pos, tol.eps_corner));
                    if e.coord.is_none() {
                        ambiguous += 1;
                    }
                }
                EventKind::LayerExit => assert!(h >= delta - 1e-8, "exit inside layer: {e:?}"),
                _ => unreachable!(),
            }
        }
        let tau = log.tau();
        let sigma = log.sigma();
        // sigma_1 <= tau_1 <= sigma_2 <= ...
        for (k, t) in tau.iter().enumerate() {
            assert!(sigma[k] <= *t);
            if let Some(s) = sigma.get(k + 1) {
                assert!(*t <= *s);
            }
        }
    }
    assert!(hits > 10_000);
    assert!((ambiguous as f64) < 1e-3 * hits as f64);
}

#[test]
fn coordinate_shares_respect_the_glide_symmetry() {
    // (x1, x2) -> (x2 + pi, x1) preserves the drift and maps the start
    // (0, 0) to (pi, 0), exchanging the two hit families
    let times = vec![0.04];
    let a = ensemble(1000.0, Point::new(0.0, 0.0), 12_000, times.clone(), StepPolicy::default(), true);
    let b = ensemble(1000.0, Point::new(PI, 0.0), 12_000, times, StepPolicy::default(), true);
    let la: Vec<_> = a.iter().filter_map(|r| r.log.as_ref()).collect();
    let lb: Vec<_> = b.iter().filter_map(|r| r.log.as_ref()).collect();
    let ba = coordinate_balance(&la).unwrap();
    let bb = coordinate_balance(&lb).unwrap();
    assert!(ba.events >= 10_000 && bb.events >= 10_000, "{ba:?} {bb:?}");
    let se = (ba.se.powi(2) + bb.se.powi(2)).sqrt();
    assert!((ba.p1 - bb.p2).abs() <= 3.0 * se, "{ba:?} {bb:?}");
    for b in [ba, bb] {
        assert!(b.p1 > 0.05 && b.p1 < 0.95, "{b:?}");
        assert!(b.ambiguous < 1e-3);
    }
}

#[test]
fn coordinate_shares_are_bounded_away_from_zero_and_one() {
    for (peclet, t) in [(400.0, 0.2), (6400.0, 0.02)] {
        let recs = ensemble(peclet, Point::new(FRAC_PI_2, 0.0), 12_000, vec![t], StepPolicy::default(), true);
        let logs: Vec<_> = recs.iter().filter_map(|r| r.log.as_ref()).collect();
        let b = coordinate_balance(&logs).unwrap();
        assert!(b.events >= 10_000, "A={peclet}: {b:?}");
        assert!(b.p1 > 0.05 && b.p2 > 0.05 && b.p1 < 0.95 && b.p2 < 0.95, "A={peclet}: {b:?}");
    }
}

#[test]
fn same_seed_same_paths() {
    let times = vec![0.001, 0.004];
    let a = ensemble(400.0, Point::new(1.0, 0.1), 64, times.clone(), StepPolicy::default(), true);
    let b = ensemble(400.0, Point::new(1.0, 0.1), 64, times, StepPolicy::default(), true);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.samples, y.samples);
        assert_eq!(x.log.as_ref().unwrap().events(), y.log.as_ref().unwrap().events());
    }
}
