//! Separatrix hits and boundary-layer exits detected along a path.
//!
//! Both are located by bisection on the straight segment of the step in
//! which they occur. A hit is a change of cell; an exit is `|h| >= delta`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowfield::{cell_index, classify_region, hamiltonian, nearest_corner, FlowParams, Point, RegionTag};
use crate::sde::{NoiseStream, ParticleState, PathDriver, StepObserver, StepPolicy};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Target accuracy in `h` after refinement.
    pub eps_event: f64,
    /// Distance to `pi Z` under which a coordinate counts as on the lattice.
    pub eps_corner: f64,
    pub bisection_iters: u32,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            eps_event: 1e-10,
            eps_corner: 1e-6,
            bisection_iters: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    SeparatrixHit,
    LayerExit,
    EdgeExit,
    CornerExit,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::SeparatrixHit => "separatrix_hit",
            EventKind::LayerExit => "layer_exit",
            EventKind::EdgeExit => "edge_exit",
            EventKind::CornerExit => "corner_exit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossingEvent {
    pub kind: EventKind,
    pub t: f64,
    pub pos: Point,
    /// For a separatrix hit: which coordinate lies on `pi Z`.
    pub coord: Option<u8>,
}

/// Flat row for tabular export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub path_index: u64,
    pub kind: String,
    pub t: f64,
    pub x1: f64,
    pub x2: f64,
    pub coord: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    AwaitLayerExit,
    AwaitSeparatrix,
}

/// Alternating layer exits and separatrix hits of one path.
#[derive(Debug, Clone)]
pub struct CrossingLog {
    events: Vec<CrossingEvent>,
    phase: Phase,
    delta: f64,
    tol: Tolerances,
    ambiguous: usize,
}

fn dist_to_lattice(x: f64) -> f64 {
    (x - PI * (x / PI).round()).abs()
}

/// Which coordinate of a point on the separatrix sits on `pi Z`.
/// `None` when both do (a corner hit).
pub fn classify_hit_coordinate(pos: Point, eps_corner: f64) -> Option<u8> {
    let d1 = dist_to_lattice(pos.x1);
    let d2 = dist_to_lattice(pos.x2);
    match (d1 <= eps_corner, d2 <= eps_corner) {
        (true, false) => Some(1),
        (false, true) => Some(2),
        (true, true) => None,
        (false, false) => Some(if d1 <= d2 { 1 } else { 2 }),
    }
}

/// Smallest `s` in `(lo, hi]` (to bisection accuracy) with `pred` true,
/// given `pred(lo)` false and `pred(hi)` true.
fn bisect<F: Fn(f64) -> bool>(mut lo: f64, mut hi: f64, iters: u32, pred: F) -> f64 {
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

impl CrossingLog {
    /// Fresh log for a path starting at `start`; a start outside the layer
    /// records its first exit immediately.
    pub fn new(params: &FlowParams, start: &ParticleState) -> Self {
        Self::with_tolerances(params, start, Tolerances::default())
    }

    pub fn with_tolerances(params: &FlowParams, start: &ParticleState, tol: Tolerances) -> Self {
        let mut log = Self {
            events: Vec::new(),
            phase: Phase::AwaitLayerExit,
            delta: params.delta(),
            tol,
            ambiguous: 0,
        };
        if hamiltonian(start.pos).abs() >= log.delta {
            log.events.push(CrossingEvent {
                kind: EventKind::LayerExit,
                t: start.t,
                pos: start.pos,
                coord: None,
            });
            log.phase = Phase::AwaitSeparatrix;
        }
        log
    }

    pub fn events(&self) -> &[CrossingEvent] {
        &self.events
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Separatrix hits assigned to no coordinate.
    pub fn ambiguous_hits(&self) -> usize {
        self.ambiguous
    }

    fn times_of(&self, kind: EventKind) -> Vec<f64> {
        self.events.iter().filter(|e| e.kind == kind).map(|e| e.t).collect()
    }

    /// Separatrix hit times, `tau[0]` being the first hit.
    pub fn tau(&self) -> Vec<f64> {
        self.times_of(EventKind::SeparatrixHit)
    }

    /// Layer exit times, `sigma[0]` being the first exit.
    pub fn sigma(&self) -> Vec<f64> {
        self.times_of(EventKind::LayerExit)
    }

    /// Hits at which coordinate `i` lies on `pi Z`.
    pub fn tau_i(&self, i: u8) -> Vec<f64> {
        self.events
            .iter()
            .filter(|e| e.kind == EventKind::SeparatrixHit && e.coord == Some(i))
            .map(|e| e.t)
            .collect()
    }

    pub fn hit_events(&self) -> impl Iterator<Item = &CrossingEvent> {
        self.events.iter().filter(|e| e.kind == EventKind::SeparatrixHit)
    }

    /// True when event times are nondecreasing and kinds alternate, exit first.
    pub fn is_well_ordered(&self) -> bool {
        let mut expect = EventKind::LayerExit;
        let mut last = f64::NEG_INFINITY;
        for e in &self.events {
            if e.kind != expect || e.t < last {
                return false;
            }
            last = e.t;
            expect = match expect {
                EventKind::LayerExit => EventKind::SeparatrixHit,
                _ => EventKind::LayerExit,
            };
        }
        true
    }

    pub fn records(&self, path_index: u64) -> Vec<EventRecord> {
        self.events
            .iter()
            .map(|e| EventRecord {
                path_index,
                kind: e.kind.as_str().to_string(),
                t: e.t,
                x1: e.pos.x1,
                x2: e.pos.x2,
                coord: e.coord,
            })
            .collect()
    }

    /// Scan the step `prev -> next` for events in phase order.
    pub fn observe_step(&mut self, prev: &ParticleState, next: &ParticleState) {
        let (a, b) = (prev.pos, next.pos);
        let at = |s: f64| a.lerp(b, s);
        let time = |s: f64| prev.t + s * (next.t - prev.t);
        let iters = self.tol.bisection_iters;
        let delta = self.delta;
        let mut s0 = 0.0;
        loop {
            match self.phase {
                Phase::AwaitLayerExit => {
                    if hamiltonian(b).abs() < delta {
                        return;
                    }
                    let s = bisect(s0, 1.0, iters, |s| hamiltonian(at(s)).abs() >= delta);
                    let pos = at(s);
                    self.events.push(CrossingEvent {
                        kind: EventKind::LayerExit,
                        t: time(s),
                        pos,
                        coord: None,
                    });
                    self.phase = Phase::AwaitSeparatrix;
                    s0 = s;
                }
                Phase::AwaitSeparatrix => {
                    let home = cell_index(at(s0));
                    if cell_index(b) == home {
                        return;
                    }
                    let s = bisect(s0, 1.0, iters, |s| cell_index(at(s)) != home);
                    let pos = at(s);
                    let coord = classify_hit_coordinate(pos, self.tol.eps_corner);
                    if coord.is_none() {
                        self.ambiguous += 1;
                    }
                    self.events.push(CrossingEvent {
                        kind: EventKind::SeparatrixHit,
                        t: time(s),
                        pos,
                        coord,
                    });
                    self.phase = Phase::AwaitLayerExit;
                    s0 = s;
                }
            }
            if s0 >= 1.0 {
                return;
            }
        }
    }
}

impl StepObserver for CrossingLog {
    fn observe(&mut self, prev: &ParticleState, next: &ParticleState) {
        self.observe_step(prev, next);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProbeTarget {
    /// Leave the edge region (layer minus the closed corner region).
    ExitEdgeRegion,
    /// Leave the fattened corner region.
    ExitFattenedCorner,
    /// Enter the corner region of a lattice corner other than the start's.
    HitDifferentCorner,
    /// Leave the starting cell.
    HitSeparatrix,
    /// Leave the boundary layer, `|h| >= delta`.
    ExitLayer,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOutcome {
    pub t: f64,
    pub pos: Point,
    /// Region of the exit point.
    pub tag: RegionTag,
}

impl ProbeOutcome {
    pub fn event(&self, target: ProbeTarget) -> CrossingEvent {
        let kind = match target {
            ProbeTarget::ExitEdgeRegion => EventKind::EdgeExit,
            ProbeTarget::ExitFattenedCorner | ProbeTarget::HitDifferentCorner => EventKind::CornerExit,
            ProbeTarget::HitSeparatrix => EventKind::SeparatrixHit,
            ProbeTarget::ExitLayer => EventKind::LayerExit,
        };
        CrossingEvent {
            kind,
            t: self.t,
            pos: self.pos,
            coord: None,
        }
    }
}

fn probe_fired(target: ProbeTarget, x0: Point, p: Point, params: &FlowParams) -> bool {
    match target {
        ProbeTarget::ExitEdgeRegion => !classify_region(p, params).in_edge_region(),
        ProbeTarget::ExitFattenedCorner => !classify_region(p, params).in_fattened_corner(),
        ProbeTarget::HitDifferentCorner => {
            classify_region(p, params) == RegionTag::CornerLayer && nearest_corner(p) != nearest_corner(x0)
        }
        ProbeTarget::HitSeparatrix => cell_index(p) != cell_index(x0),
        ProbeTarget::ExitLayer => hamiltonian(p).abs() >= params.delta(),
    }
}

/// Simulate from `x0` until the target fires; the exit point is refined by
/// bisection within the final step.
pub fn probe_exit(
    x0: Point,
    target: ProbeTarget,
    params: &FlowParams,
    policy: &StepPolicy,
    noise: NoiseStream,
    t_cap: f64,
) -> Result<ProbeOutcome> {
    if probe_fired(target, x0, x0, params) {
        return Ok(ProbeOutcome {
            t: 0.0,
            pos: x0,
            tag: classify_region(x0, params),
        });
    }
    let mut driver = PathDriver::new(x0, policy, noise, params);
    let hit = driver.run_until(t_cap, |_, next| probe_fired(target, x0, next.pos, params));
    let (prev, next) = hit.ok_or(Error::ProbeTimeout { cap: t_cap })?;
    let iters = Tolerances::default().bisection_iters;
    let s = bisect(0.0, 1.0, iters, |s| probe_fired(target, x0, prev.pos.lerp(next.pos, s), params));
    let pos = prev.pos.lerp(next.pos, s);
    Ok(ProbeOutcome {
        t: prev.t + s * (next.t - prev.t),
        pos,
        tag: classify_region(pos, params),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn params() -> FlowParams {
        FlowParams::new(1000.0, 1.0).unwrap()
    }

    fn st(x1: f64, x2: f64, t: f64) -> ParticleState {
        ParticleState::new(Point::new(x1, x2), t)
    }

    #[test]
    fn hit_coordinate_examples() {
        assert_eq!(classify_hit_coordinate(Point::new(PI + 1e-12, 1.0), 1e-6), Some(1));
        assert_eq!(classify_hit_coordinate(Point::new(1.0, 2.0 * PI - 1e-12), 1e-6), Some(2));
        assert_eq!(classify_hit_coordinate(Point::new(PI + 1e-12, PI - 1e-12), 1e-6), None);
    }

    #[test]
    fn linear_crossing_at_midpoint() {
        let p = params();
        // Start in the layer with the exit already behind us.
        let mut log = CrossingLog::new(&p, &st(FRAC_PI_2, 0.5, 0.0));
        assert_eq!(log.phase(), Phase::AwaitSeparatrix);
        // h = sin(x2) at x1 = pi/2; cross x2 = 0 symmetrically
        log.observe_step(&st(FRAC_PI_2, 0.01, 1.0), &st(FRAC_PI_2, -0.01, 2.0));
        let tau = log.tau();
        assert_eq!(tau.len(), 1);
        assert!((tau[0] - 1.5).abs() < 1e-12);
        assert_eq!(log.events()[1].coord, Some(2));
        assert!(hamiltonian(log.events()[1].pos).abs() <= 1e-10);
    }

    #[test]
    fn no_exit_while_inside_layer() {
        let p = params();
        let mut log = CrossingLog::new(&p, &st(FRAC_PI_2, 0.001, 0.0));
        log.observe_step(&st(FRAC_PI_2, 0.001, 0.0), &st(FRAC_PI_2 + 0.1, 0.002, 0.1));
        assert!(log.sigma().is_empty());
    }

    #[test]
    fn synthetic_path_orders_events() {
        let p = params();
        let d = p.delta();
        let start = st(FRAC_PI_2, 0.2 * d, 0.0);
        let mut log = CrossingLog::new(&p, &start);
        // leave the layer upward: x2 from 0.2 d to 2 d (h = sin x2)
        let a = st(FRAC_PI_2, 2.0 * d, 1.0);
        log.observe_step(&start, &a);
        // come straight down across x2 = 0
        let b = st(FRAC_PI_2, -0.5 * d, 2.0);
        log.observe_step(&a, &b);
        let sigma = log.sigma();
        let tau = log.tau();
        assert_eq!(sigma.len(), 1);
        assert_eq!(tau.len(), 1);
        assert!(sigma[0] < tau[0]);
        let expect_sigma = (d.asin() - 0.2 * d) / (1.8 * d);
        assert!((sigma[0] - expect_sigma).abs() < 1e-9);
        assert!((tau[0] - (1.0 + 2.0 / 2.5)).abs() < 1e-12);
        assert!(log.is_well_ordered());
        assert!(hamiltonian(log.events()[0].pos).abs() >= d - 1e-10);
    }

    #[test]
    fn several_events_in_one_step() {
        let p = params();
        let d = p.delta();
        let start = st(FRAC_PI_2, 0.5 * d, 0.0);
        let mut log = CrossingLog::new(&p, &start);
        // one long step: exits the layer, crosses x2 = pi, exits again
        log.observe_step(&start, &st(FRAC_PI_2, PI + 2.0 * d, 1.0));
        assert_eq!(log.sigma().len(), 2);
        assert_eq!(log.tau().len(), 1);
        assert_eq!(log.events()[1].coord, Some(2));
        assert!(log.is_well_ordered());
    }

    #[test]
    fn probe_returns_immediately_outside_region() {
        let p = params();
        let out = probe_exit(
            Point::new(FRAC_PI_2, FRAC_PI_2),
            ProbeTarget::ExitEdgeRegion,
            &p,
            &StepPolicy::default(),
            NoiseStream::new(1, 1),
            1.0,
        )
        .unwrap();
        assert_eq!(out.t, 0.0);
    }

    #[test]
    fn probe_times_out() {
        let p = params();
        let r = probe_exit(
            Point::new(FRAC_PI_2, FRAC_PI_2),
            ProbeTarget::HitSeparatrix,
            &p,
            &StepPolicy::default(),
            NoiseStream::new(1, 1),
            1e-4,
        );
        assert_eq!(r, Err(Error::ProbeTimeout { cap: 1e-4 }));
    }

    #[test]
    fn probe_edge_exit_lands_on_boundary() {
        let p = params();
        let x0 = Point::new(FRAC_PI_2, (0.5 * p.delta()).asin());
        for k in 0..20 {
            let out = probe_exit(x0, ProbeTarget::ExitEdgeRegion, &p, &StepPolicy::default(), NoiseStream::new(9, k), 10.0)
                .unwrap();
            assert!(out.t > 0.0);
            assert!(!out.tag.in_edge_region());
        }
    }
}
