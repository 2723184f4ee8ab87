//! Euler–Maruyama integration of `dX = -A v(X) dt + sqrt(2) dW`.
//!
//! Positions live on the whole plane; nothing is ever wrapped into a cell.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowfield::{hamiltonian, velocity, FlowParams, Point};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub pos: Point,
    pub t: f64,
}

impl ParticleState {
    pub fn new(pos: Point, t: f64) -> Self {
        Self { pos, t }
    }

    pub fn at_origin_time(pos: Point) -> Self {
        Self { pos, t: 0.0 }
    }
}

/// Step-size rule `dt = min(dt_max, drift_frac / A, layer_frac * delta^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepPolicy {
    pub dt_drift_frac: f64,
    pub dt_layer_frac: f64,
    pub dt_max: f64,
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self {
            dt_drift_frac: 0.01,
            dt_layer_frac: 0.05,
            dt_max: 1e-4,
        }
    }
}

impl StepPolicy {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if ok(self.dt_drift_frac) && ok(self.dt_layer_frac) && ok(self.dt_max) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("step policy entries must be positive: {self:?}")))
        }
    }

    /// Effective step. At `A = 0` only the absolute cap applies.
    pub fn dt(&self, params: &FlowParams) -> f64 {
        let mut dt = self.dt_max;
        if params.peclet > 0.0 {
            dt = dt.min(self.dt_drift_frac / params.peclet);
            let d = params.delta();
            dt = dt.min(self.dt_layer_frac * d * d);
        }
        dt
    }

    /// The same policy with every step halved.
    pub fn halved(&self) -> Self {
        Self {
            dt_drift_frac: self.dt_drift_frac / 2.0,
            dt_layer_frac: self.dt_layer_frac / 2.0,
            dt_max: self.dt_max / 2.0,
        }
    }
}

/// Gaussian increments for one path, fixed by `(seed, path_index)`.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    seed: u64,
    path_index: u64,
    draws: u64,
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, path_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path_index);
        Self {
            seed,
            path_index,
            draws: 0,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    /// Number of standard-normal pairs drawn so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    pub fn next_pair(&mut self) -> (f64, f64) {
        self.draws += 1;
        let a: f64 = self.rng.sample(StandardNormal);
        let b: f64 = self.rng.sample(StandardNormal);
        (a, b)
    }
}

/// One Euler–Maruyama step with a supplied standard-normal pair.
#[inline]
pub fn em_step(s: ParticleState, dt: f64, z: (f64, f64), params: &FlowParams) -> ParticleState {
    let amp = (2.0 * dt).sqrt();
    let mut pos = Point::new(s.pos.x1 + amp * z.0, s.pos.x2 + amp * z.1);
    if params.peclet != 0.0 {
        let v = velocity(s.pos);
        let k = params.peclet * dt;
        pos.x1 -= k * v.x1;
        pos.x2 -= k * v.x2;
    }
    ParticleState::new(pos, s.t + dt)
}

/// Receives every step `(previous, next)` of a path as it is taken.
pub trait StepObserver {
    fn observe(&mut self, prev: &ParticleState, next: &ParticleState);
}

/// Records the whole trajectory.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryRecorder {
    pub states: Vec<ParticleState>,
    /// Keep every `stride`-th state; `0` and `1` keep all.
    pub stride: usize,
    seen: usize,
}

impl TrajectoryRecorder {
    pub fn with_stride(stride: usize) -> Self {
        Self {
            states: Vec::new(),
            stride,
            seen: 0,
        }
    }
}

impl StepObserver for TrajectoryRecorder {
    fn observe(&mut self, prev: &ParticleState, next: &ParticleState) {
        if self.states.is_empty() {
            self.states.push(*prev);
        }
        self.seen += 1;
        if self.stride <= 1 || self.seen % self.stride == 0 {
            self.states.push(*next);
        }
    }
}

/// Steps a single path forward on demand, so callers can stop exactly on
/// the times they care about without disturbing the noise sequence.
#[derive(Debug, Clone)]
pub struct PathDriver {
    state: ParticleState,
    noise: NoiseStream,
    params: FlowParams,
    dt: f64,
}

impl PathDriver {
    pub fn new(x0: Point, policy: &StepPolicy, noise: NoiseStream, params: &FlowParams) -> Self {
        Self {
            state: ParticleState::at_origin_time(x0),
            noise,
            params: *params,
            dt: policy.dt(params),
        }
    }

    pub fn state(&self) -> ParticleState {
        self.state
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn params(&self) -> &FlowParams {
        &self.params
    }

    /// Take one step of at most `max_dt`.
    #[inline]
    pub fn step_capped(&mut self, max_dt: f64) -> (ParticleState, ParticleState) {
        let dt = self.dt.min(max_dt);
        let prev = self.state;
        let z = self.noise.next_pair();
        self.state = em_step(prev, dt, z, &self.params);
        (prev, self.state)
    }

    /// Advance to exactly `t_target`, the last step truncated.
    pub fn advance_to(&mut self, t_target: f64, observers: &mut [&mut dyn StepObserver]) {
        // Sub-ulp remainders are absorbed rather than stepped.
        let slack = 1e-12 * self.dt;
        while t_target - self.state.t > slack {
            let (prev, next) = self.step_capped(t_target - self.state.t);
            for o in observers.iter_mut() {
                o.observe(&prev, &next);
            }
        }
        if self.state.t != t_target && (t_target - self.state.t).abs() <= slack {
            self.state.t = t_target;
        }
    }

    /// Step until `stop` returns true for a step or `t_cap` is reached.
    /// Returns the `(prev, next)` pair of the stopping step, if any.
    pub fn run_until<F>(&mut self, t_cap: f64, mut stop: F) -> Option<(ParticleState, ParticleState)>
    where
        F: FnMut(&ParticleState, &ParticleState) -> bool,
    {
        let slack = 1e-12 * self.dt;
        while t_cap - self.state.t > slack {
            let (prev, next) = self.step_capped(t_cap - self.state.t);
            if stop(&prev, &next) {
                return Some((prev, next));
            }
        }
        None
    }
}

/// Integrate one path from `x0` at time 0 to `t_end`, calling every observer
/// after each step.
pub fn simulate_path(
    x0: Point,
    t_end: f64,
    policy: &StepPolicy,
    noise: NoiseStream,
    params: &FlowParams,
    observers: &mut [&mut dyn StepObserver],
) -> ParticleState {
    let mut driver = PathDriver::new(x0, policy, noise, params);
    if t_end > 0.0 {
        driver.advance_to(t_end, observers);
    }
    driver.state()
}

fn rk4(p: Point, h: f64, a: f64) -> Point {
    let f = |q: Point| velocity(q) * (-a);
    let k1 = f(p);
    let k2 = f(p + k1 * (h / 2.0));
    let k3 = f(p + k2 * (h / 2.0));
    let k4 = f(p + k3 * h);
    p + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Noise-free transport `x' = -A v(x)` over `dt` by classical RK4, with
/// substeps small enough that `A * dt_sub <= 0.01`.
pub fn convect_exact(s: ParticleState, dt: f64, params: &FlowParams) -> ParticleState {
    let a = params.peclet;
    if a == 0.0 || dt <= 0.0 {
        return ParticleState::new(s.pos, s.t + dt.max(0.0));
    }
    let n = ((a * dt) / 0.01).ceil().max(1.0) as usize;
    let h = dt / n as f64;
    let mut p = s.pos;
    for _ in 0..n {
        p = rk4(p, h, a);
    }
    ParticleState::new(p, s.t + dt)
}

/// Change in `h` over one noise-free transport interval.
pub fn hamiltonian_drift(s: ParticleState, dt: f64, params: &FlowParams) -> f64 {
    let e = convect_exact(s, dt, params);
    (hamiltonian(e.pos) - hamiltonian(s.pos)).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn params(a: f64) -> FlowParams {
        FlowParams::new(a, 1.0).unwrap()
    }

    #[test]
    fn em_step_examples() {
        let s = ParticleState::at_origin_time(Point::new(FRAC_PI_2, FRAC_PI_2));
        let n = em_step(s, 0.3, (0.0, 0.0), &params(1000.0));
        assert!((n.pos.x1 - FRAC_PI_2).abs() < 1e-12 && (n.pos.x2 - FRAC_PI_2).abs() < 1e-12);
        assert_eq!(n.t, 0.3);

        let s = ParticleState::at_origin_time(Point::new(FRAC_PI_2, 0.0));
        let n = em_step(s, 1e-5, (0.0, 0.0), &params(1000.0));
        assert!((n.pos.x1 - (FRAC_PI_2 + 0.01)).abs() < 1e-14);
        assert_eq!(n.pos.x2, 0.0);

        let p0 = FlowParams::new(0.0, 1.0).unwrap();
        let n = em_step(ParticleState::at_origin_time(Point::default()), 1.0, (1.0, 0.0), &p0);
        assert!((n.pos.x1 - 2f64.sqrt()).abs() < 1e-15 && n.pos.x2 == 0.0);
    }

    #[test]
    fn step_policy_examples() {
        let pol = StepPolicy::default();
        assert_eq!(pol.dt(&FlowParams::new(0.0, 1.0).unwrap()), 1e-4);
        assert!((pol.dt(&params(1000.0)) - 1e-5).abs() < 1e-20);
        // the layer constraint binds for small N
        let p = FlowParams::new(1000.0, 0.3).unwrap();
        assert!((pol.dt(&p) - 0.05 * 0.09 / 1000.0).abs() < 1e-20);
        assert!(StepPolicy { dt_max: 0.0, ..pol }.validate().is_err());
    }

    #[test]
    fn zero_horizon_is_a_no_op() {
        struct Count(usize);
        impl StepObserver for Count {
            fn observe(&mut self, _: &ParticleState, _: &ParticleState) {
                self.0 += 1;
            }
        }
        let mut c = Count(0);
        let x0 = Point::new(0.3, 0.2);
        let s = simulate_path(x0, 0.0, &StepPolicy::default(), NoiseStream::new(1, 0), &params(100.0), &mut [&mut c]);
        assert_eq!(s.pos, x0);
        assert_eq!(s.t, 0.0);
        assert_eq!(c.0, 0);
    }

    #[test]
    fn lands_exactly_on_end_time() {
        let s = simulate_path(
            Point::default(),
            0.012345,
            &StepPolicy::default(),
            NoiseStream::new(3, 7),
            &params(1000.0),
            &mut [],
        );
        assert_eq!(s.t, 0.012345);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = NoiseStream::new(42, 5);
        let mut b = NoiseStream::new(42, 5);
        let mut c = NoiseStream::new(42, 6);
        let xa: Vec<_> = (0..10).map(|_| a.next_pair()).collect();
        let xb: Vec<_> = (0..10).map(|_| b.next_pair()).collect();
        let xc: Vec<_> = (0..10).map(|_| c.next_pair()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
        assert_eq!(a.draws(), 10);
    }

    #[test]
    fn convect_fixed_point_and_conservation() {
        let p = params(1000.0);
        let c = ParticleState::at_origin_time(Point::new(FRAC_PI_2, FRAC_PI_2));
        let e = convect_exact(c, 0.5, &p);
        assert!((e.pos.x1 - FRAC_PI_2).abs() < 1e-14);
        let s = ParticleState::at_origin_time(Point::new(FRAC_PI_2, 0.1));
        // one unit of time is many orbits at A = 1000
        assert!(hamiltonian_drift(s, 1.0, &p) <= 1e-9);
    }

    #[test]
    fn convect_closes_an_orbit() {
        // Period of the orbit through (pi/2, 0.3) at A = 1, found by
        // integrating until the path comes back across x1 = pi/2.
        let p = params(1.0);
        let start = Point::new(FRAC_PI_2, 0.3);
        let h = 1e-4;
        let mut q = start;
        let mut t = 0.0;
        let mut prev = q;
        loop {
            q = rk4(q, h, 1.0);
            t += h;
            if prev.x1 < FRAC_PI_2 && q.x1 >= FRAC_PI_2 && q.x2 < FRAC_PI_2 {
                // refine linearly
                let s = (FRAC_PI_2 - prev.x1) / (q.x1 - prev.x1);
                t = t - h + s * h;
                break;
            }
            prev = q;
            assert!(t < 100.0);
        }
        let e = convect_exact(ParticleState::at_origin_time(start), t, &p);
        assert!((e.pos - start).norm_sq().sqrt() < 1e-6, "{:?}", e.pos);
        assert!(e.pos.x1 < PI);
    }
}
