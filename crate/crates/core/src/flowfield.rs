//! The cellular flow `h(x) = sin(x1) sin(x2)`, `v = grad_perp h`.
//!
//! Everything here is a pure function of its inputs. Cells are the open
//! squares `(k pi, (k+1) pi) x (m pi, (m+1) pi)`; the separatrix `{h = 0}` is
//! the lattice of lines `pi Z x R` and `R x pi Z`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BETA0: f64 = 0.15;
pub const DEFAULT_BETA0_PRIME: f64 = 0.30;

/// Physical and geometric parameters of one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    /// Péclet number `A`.
    pub peclet: f64,
    /// Layer constant `N` in `delta = N / sqrt(A)`.
    pub layer_const: f64,
    /// Corner half-angle `beta0` (radians).
    #[serde(default = "default_beta0")]
    pub beta0: f64,
    /// Fattened corner half-angle `beta0'` (radians).
    #[serde(default = "default_beta0_prime")]
    pub beta0_prime: f64,
}

fn default_beta0() -> f64 {
    DEFAULT_BETA0
}

fn default_beta0_prime() -> f64 {
    DEFAULT_BETA0_PRIME
}

impl FlowParams {
    /// Parameters with the default corner angles. Validated.
    pub fn new(peclet: f64, layer_const: f64) -> Result<Self> {
        Self::with_angles(peclet, layer_const, DEFAULT_BETA0, DEFAULT_BETA0_PRIME)
    }

    pub fn with_angles(peclet: f64, layer_const: f64, beta0: f64, beta0_prime: f64) -> Result<Self> {
        let p = Self {
            peclet,
            layer_const,
            beta0,
            beta0_prime,
        };
        p.validate()?;
        Ok(p)
    }

    /// `A = 0` is admitted (pure diffusion calibration); everything that
    /// needs the layer calls [`FlowParams::validate_layer`] instead.
    pub fn validate(&self) -> Result<()> {
        if !(self.peclet.is_finite() && self.peclet >= 0.0) {
            return Err(Error::InvalidParameter(format!("A = {} must be finite and >= 0", self.peclet)));
        }
        if !(self.layer_const.is_finite() && self.layer_const > 0.0) {
            return Err(Error::InvalidParameter(format!("N = {} must be > 0", self.layer_const)));
        }
        if !(self.beta0 > 0.0 && self.beta0 < self.beta0_prime && self.beta0_prime < FRAC_PI_4) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < beta0 ({}) < beta0' ({}) < pi/4",
                self.beta0, self.beta0_prime
            )));
        }
        Ok(())
    }

    /// Stronger check for layer-dependent operations: `A > 0` and `delta < 1`.
    pub fn validate_layer(&self) -> Result<()> {
        self.validate()?;
        if self.peclet <= 0.0 {
            return Err(Error::InvalidParameter("boundary layer needs A > 0".into()));
        }
        if self.delta() >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "delta = N/sqrt(A) = {} must be < 1",
                self.delta()
            )));
        }
        Ok(())
    }

    /// Layer half-width `delta = N / sqrt(A)`; infinite at `A = 0`.
    pub fn delta(&self) -> f64 {
        self.layer_const / self.peclet.sqrt()
    }
}

/// A point (or a vector) in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x1: f64,
    pub x2: f64,
}

impl Point {
    pub const fn new(x1: f64, x2: f64) -> Self {
        Self { x1, x2 }
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x1 * other.x1 + self.x2 * other.x2
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn is_finite(self) -> bool {
        self.x1.is_finite() && self.x2.is_finite()
    }

    /// Point on the segment `self -> other` at fraction `s`.
    pub fn lerp(self, other: Point, s: f64) -> Point {
        Point::new(self.x1 + s * (other.x1 - self.x1), self.x2 + s * (other.x2 - self.x2))
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x1 + rhs.x1, self.x2 + rhs.x2)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x1 - rhs.x1, self.x2 - rhs.x2)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, rhs: f64) -> Point {
        Point::new(self.x1 * rhs, self.x2 * rhs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionTag {
    Interior,
    EdgeLayer,
    CornerLayer,
    FattenedCornerLayer,
}

impl RegionTag {
    /// Inside `B_delta`.
    pub fn in_layer(self) -> bool {
        self != RegionTag::Interior
    }

    /// Inside the edge region `E = B_delta - closure(C)`.
    pub fn in_edge_region(self) -> bool {
        matches!(self, RegionTag::EdgeLayer | RegionTag::FattenedCornerLayer)
    }

    /// Inside the fattened corner region `C'`.
    pub fn in_fattened_corner(self) -> bool {
        matches!(self, RegionTag::CornerLayer | RegionTag::FattenedCornerLayer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellCoords {
    pub cell: (i64, i64),
    pub h: f64,
    pub theta_proxy: f64,
}

pub fn hamiltonian(p: Point) -> f64 {
    p.x1.sin() * p.x2.sin()
}

/// `v = grad_perp h = (-d2 h, d1 h)`.
pub fn velocity(p: Point) -> Point {
    let (s1, c1) = p.x1.sin_cos();
    let (s2, c2) = p.x2.sin_cos();
    Point::new(-s1 * c2, c1 * s2)
}

pub fn grad_h(p: Point) -> Point {
    let (s1, c1) = p.x1.sin_cos();
    let (s2, c2) = p.x2.sin_cos();
    Point::new(c1 * s2, s1 * c2)
}

/// `Delta h = -2 h`.
pub fn laplacian_h(p: Point) -> f64 {
    -2.0 * hamiltonian(p)
}

/// Divergence of `v`, evaluated term by term (it cancels identically).
pub fn divergence_v(p: Point) -> f64 {
    let (c1, c2) = (p.x1.cos(), p.x2.cos());
    // d1(-sin x1 cos x2) + d2(cos x1 sin x2)
    -c1 * c2 + c1 * c2
}

/// Integer index of the cell containing `p`.
pub fn cell_index(p: Point) -> (i64, i64) {
    ((p.x1 / PI).floor() as i64, (p.x2 / PI).floor() as i64)
}

pub fn cell_center(cell: (i64, i64)) -> Point {
    Point::new((cell.0 as f64 + 0.5) * PI, (cell.1 as f64 + 0.5) * PI)
}

/// Polar angle about the containing cell's center, shifted by `pi/4` so the
/// four corners sit at multiples of `pi/2`. Wrapped to `[0, 2 pi)`.
pub fn theta_proxy(p: Point) -> f64 {
    let c = cell_center(cell_index(p));
    let raw = (p.x2 - c.x2).atan2(p.x1 - c.x1) + FRAC_PI_4;
    raw.rem_euclid(2.0 * PI)
}

/// Angular distance from `theta` to the nearest corner direction `n pi/2`.
pub fn corner_angle_distance(theta: f64) -> f64 {
    let k = (theta / FRAC_PI_2).round();
    (theta - k * FRAC_PI_2).abs()
}

pub fn cell_coords(p: Point) -> CellCoords {
    CellCoords {
        cell: cell_index(p),
        h: hamiltonian(p),
        theta_proxy: theta_proxy(p),
    }
}

pub fn classify_region(p: Point, params: &FlowParams) -> RegionTag {
    let h = hamiltonian(p);
    if h.abs() >= params.delta() {
        return RegionTag::Interior;
    }
    let d = corner_angle_distance(theta_proxy(p));
    if d < params.beta0 {
        RegionTag::CornerLayer
    } else if d < params.beta0_prime {
        RegionTag::FattenedCornerLayer
    } else {
        RegionTag::EdgeLayer
    }
}

/// Nearest lattice corner `(k pi, m pi)` as an integer pair.
pub fn nearest_corner(p: Point) -> (i64, i64) {
    ((p.x1 / PI).round() as i64, (p.x2 / PI).round() as i64)
}

/// Exact `h` and the raw corner angular coordinate `cos(y1) / cos(y2)`,
/// where `y` is `p` translated so its nearest lattice corner is the origin.
pub fn corner_coords(p: Point) -> Result<(f64, f64)> {
    let (k, m) = nearest_corner(p);
    let y = Point::new(p.x1 - k as f64 * PI, p.x2 - m as f64 * PI);
    if y.norm_sq().sqrt() > FRAC_PI_4 {
        return Err(Error::OutsideCornerChart { x1: p.x1, x2: p.x2 });
    }
    Ok((hamiltonian(p), y.x1.cos() / y.x2.cos()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(a: f64) -> FlowParams {
        FlowParams::new(a, 1.0).unwrap()
    }

    #[test]
    fn hamiltonian_examples() {
        assert!((hamiltonian(Point::new(FRAC_PI_2, FRAC_PI_2)) - 1.0).abs() < 1e-15);
        assert_eq!(hamiltonian(Point::new(0.0, 0.0)), 0.0);
        assert!((hamiltonian(Point::new(FRAC_PI_2, PI / 6.0)) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn velocity_examples() {
        let v = velocity(Point::new(FRAC_PI_2, FRAC_PI_2));
        assert!(v.x1.abs() < 1e-15 && v.x2.abs() < 1e-15);
        let v = velocity(Point::new(FRAC_PI_2, 0.0));
        assert!((v.x1 + 1.0).abs() < 1e-15 && v.x2.abs() < 1e-15);
    }

    #[test]
    fn gradient_and_laplacian_examples() {
        assert!((laplacian_h(Point::new(FRAC_PI_2, FRAC_PI_2)) + 2.0).abs() < 1e-15);
        let g = grad_h(Point::new(0.0, FRAC_PI_2));
        assert!((g.x1 - 1.0).abs() < 1e-15 && g.x2.abs() < 1e-15);
    }

    #[test]
    fn classify_examples() {
        for a in [100.0, 1000.0, 1e5] {
            assert_eq!(classify_region(Point::new(0.001, 0.001), &params(a)), RegionTag::CornerLayer);
        }
        let p = params(1000.0);
        let x2 = (p.delta() / 2.0).asin();
        assert_eq!(classify_region(Point::new(FRAC_PI_2, x2), &p), RegionTag::EdgeLayer);
        assert_eq!(classify_region(Point::new(FRAC_PI_2, FRAC_PI_2), &p), RegionTag::Interior);
    }

    #[test]
    fn corner_coords_examples() {
        let (h, th) = corner_coords(Point::new(0.01, 0.01)).unwrap();
        assert!((h - 0.01f64.sin().powi(2)).abs() < 1e-18);
        assert!((th - 1.0).abs() < 1e-15);
        let (h, th) = corner_coords(Point::new(0.02, 0.01)).unwrap();
        assert!((h - 0.02f64.sin() * 0.01f64.sin()).abs() < 1e-18);
        assert!(th < 1.0);
        assert!((th - 0.02f64.cos() / 0.01f64.cos()).abs() < 1e-15);
        let (_, th) = corner_coords(Point::new(0.3, 0.3)).unwrap();
        assert_eq!(th, 1.0);
        // around a translated corner
        let (_, th) = corner_coords(Point::new(PI + 0.3, -0.3)).unwrap();
        assert!((th - 1.0).abs() < 1e-14);
        assert!(corner_coords(Point::new(FRAC_PI_2, FRAC_PI_2)).is_err());
    }

    #[test]
    fn rejects_bad_params() {
        assert!(FlowParams::new(-1.0, 1.0).is_err());
        assert!(FlowParams::new(100.0, 0.0).is_err());
        assert!(FlowParams::with_angles(100.0, 1.0, 0.3, 0.2).is_err());
        assert!(FlowParams::with_angles(100.0, 1.0, 0.1, 0.9).is_err());
        assert!(FlowParams::new(0.0, 1.0).unwrap().validate_layer().is_err());
        assert!(FlowParams::new(0.5, 1.0).unwrap().validate_layer().is_err());
        assert!(FlowParams::new(400.0, 1.0).unwrap().validate_layer().is_ok());
    }

    fn arb_point() -> impl Strategy<Value = Point> {
        (-20.0..20.0f64, -20.0..20.0f64).prop_map(|(a, b)| Point::new(a, b))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn analytic_identities(p in arb_point()) {
            prop_assert!(divergence_v(p).abs() <= 1e-12);
            prop_assert!(velocity(p).dot(grad_h(p)).abs() <= 1e-12);
            prop_assert!((laplacian_h(p) + 2.0 * hamiltonian(p)).abs() <= 1e-12);
        }

        #[test]
        fn classification_lattice_symmetric(p in arb_point(), k in -3i64..3, a in 50.0..5000.0f64) {
            let fp = params(a);
            let shift = k as f64 * PI;
            let q = Point::new(p.x1 + shift, p.x2 + shift);
            // skip points that sit within rounding of a region boundary
            let d = corner_angle_distance(theta_proxy(p));
            let near = |x: f64, y: f64| (x - y).abs() < 1e-9;
            let h = hamiltonian(p).abs();
            prop_assume!(!near(d, fp.beta0) && !near(d, fp.beta0_prime) && !near(h, fp.delta()));
            prop_assume!((p.x1 / PI).fract().abs() > 1e-9 && (p.x2 / PI).fract().abs() > 1e-9);
            prop_assert_eq!(classify_region(p, &fp), classify_region(q, &fp));
            prop_assert_eq!(classify_region(p, &fp), classify_region(Point::new(p.x2, p.x1), &fp));
        }

        #[test]
        fn corner_implies_fattened(p in arb_point(), b0 in 0.01..0.2f64, extra in 0.01..0.5f64) {
            let b1 = (b0 + extra).min(FRAC_PI_4 - 1e-3);
            let fp = FlowParams::with_angles(400.0, 1.0, b0, b1).unwrap();
            if classify_region(p, &fp) == RegionTag::CornerLayer {
                let d = corner_angle_distance(theta_proxy(p));
                prop_assert!(d < fp.beta0_prime);
                prop_assert!(classify_region(p, &fp).in_fattened_corner());
            }
        }
    }
}
