//! Elliptic problems on one flow cell and analytic super-solution audits.
//!
//! All solves use a cell-centred finite-volume discretisation of
//! `-Delta u + A v . grad u + lambda u = f` on `Q0 = (0, pi)^2`. Advective face
//! fluxes are differences of `h` at face endpoints, so they are exactly
//! divergence free and vanish on the cell boundary.
//!
//! The periodic corrector is reduced to `Q0` through the lattice symmetries:
//! `psi_1 = x1 + chi_1` solves the homogeneous equation with `psi_1 = 0` at
//! `x1 = 0`, `psi_1 = pi` at `x1 = pi` and no flux through `x2 = 0, pi`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowfield::{
    classify_region, corner_angle_distance, grad_h, hamiltonian, laplacian_h, nearest_corner, theta_proxy, velocity,
    FlowParams, Point,
};
use crate::linalg::{solve, CsrBuilder, CsrMatrix, SolveStats, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Advection {
    /// First-order upwind.
    Upwind,
    /// Scharfetter–Gummel exponential fitting; upwind in the large-Péclet
    /// limit and central at small Péclet.
    ExponentialFitting,
}

/// Nominal resolution `n` per axis over one full period `[0, 2 pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodicGrid {
    n: usize,
}

impl PeriodicGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 64 || n % 2 != 0 {
            return Err(Error::InvalidParameter(format!("grid resolution {n} must be even and >= 64")));
        }
        Ok(Self { n })
    }

    /// `max(384, ceil(14 sqrt A))`, rounded up to a multiple of 4.
    pub fn for_peclet(a: f64) -> Self {
        let n = (14.0 * a.max(0.0).sqrt()).ceil() as usize;
        let n = n.max(384);
        Self { n: n.div_ceil(4) * 4 }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    /// Cells per side of `Q0`.
    pub fn cell_resolution(&self) -> usize {
        self.n / 2
    }

    pub fn refined(&self) -> Self {
        Self { n: 2 * self.n }
    }
}

/// Face positions of a tensor mesh of `[0, pi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh1d {
    faces: Vec<f64>,
    centers: Vec<f64>,
}

impl Mesh1d {
    pub fn uniform(m: usize) -> Self {
        Self::graded(m, 0.0)
    }

    /// `x = pi (s - g sin(2 pi s) / (2 pi))`: spacing near both walls is
    /// `1 - g` times the mean spacing.
    pub fn graded(m: usize, g: f64) -> Self {
        let faces: Vec<f64> = (0..=m)
            .map(|k| {
                if k == 0 {
                    0.0
                } else if k == m {
                    PI
                } else {
                    let s = k as f64 / m as f64;
                    PI * (s - g * (2.0 * PI * s).sin() / (2.0 * PI))
                }
            })
            .collect();
        let centers = faces.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        Self { faces, centers }
    }

    pub fn cells(&self) -> usize {
        self.centers.len()
    }

    pub fn faces(&self) -> &[f64] {
        &self.faces
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn width(&self, i: usize) -> f64 {
        self.faces[i + 1] - self.faces[i]
    }

    pub fn min_width(&self) -> f64 {
        (0..self.cells()).map(|i| self.width(i)).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeOptions {
    pub advection: Advection,
    /// Wall grading strength in `[0, 1)`; `0` is uniform.
    pub grading: f64,
    pub solver: SolverOptions,
}

impl Default for PdeOptions {
    fn default() -> Self {
        Self {
            advection: Advection::ExponentialFitting,
            grading: 0.8,
            solver: SolverOptions::default(),
        }
    }
}

impl PdeOptions {
    pub fn mesh(&self, grid: &PeriodicGrid) -> Mesh1d {
        Mesh1d::graded(grid.cell_resolution(), self.grading)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `x1 = 0`.
    West,
    /// `x1 = pi`.
    East,
    /// `x2 = 0`.
    South,
    /// `x2 = pi`.
    North,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::West, Side::East, Side::South, Side::North];

    fn index(self) -> usize {
        match self {
            Side::West => 0,
            Side::East => 1,
            Side::South => 2,
            Side::North => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::West => "W",
            Side::East => "E",
            Side::South => "S",
            Side::North => "N",
        }
    }

    /// Midpoint of the side pushed inward to the level set `{h = level}`.
    pub fn mid_level_point(self, level: f64) -> Point {
        let d = level.clamp(-1.0, 1.0).asin();
        match self {
            Side::West => Point::new(d, FRAC_PI_2),
            Side::East => Point::new(PI - d, FRAC_PI_2),
            Side::South => Point::new(FRAC_PI_2, d),
            Side::North => Point::new(FRAC_PI_2, PI - d),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Boundary {
    Dirichlet(f64),
    Neumann,
}

/// Cell-centred values on a tensor mesh of `Q0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellField {
    pub name: String,
    pub mesh: Mesh1d,
    /// Row-major, `values[j * m + i]` at `(centers[i], centers[j])`.
    pub values: Vec<f64>,
    /// Boundary conditions in the order west, east, south, north.
    pub boundary: [Boundary; 4],
}

/// Flat export row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub i: usize,
    pub j: usize,
    pub x1: f64,
    pub x2: f64,
    pub value: f64,
}

impl CellField {
    pub fn m(&self) -> usize {
        self.mesh.cells()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.m() + i]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn records(&self) -> Vec<NodeRecord> {
        let c = self.mesh.centers();
        let m = self.m();
        (0..m * m)
            .map(|k| {
                let (i, j) = (k % m, k / m);
                NodeRecord {
                    i,
                    j,
                    x1: c[i],
                    x2: c[j],
                    value: self.values[k],
                }
            })
            .collect()
    }

    /// Values on the extended node set: boundary positions `0` and `pi`
    /// followed by the cell centres.
    fn extended(&self) -> (Vec<f64>, Vec<f64>) {
        let m = self.m();
        let mut xs = Vec::with_capacity(m + 2);
        xs.push(0.0);
        xs.extend_from_slice(self.mesh.centers());
        xs.push(PI);
        let e = m + 2;
        let mut v = vec![0.0; e * e];
        for j in 0..m {
            for i in 0..m {
                v[(j + 1) * e + i + 1] = self.at(i, j);
            }
        }
        let side_value = |s: Side, inner: f64| match self.boundary[s.index()] {
            Boundary::Dirichlet(g) => g,
            Boundary::Neumann => inner,
        };
        for k in 1..=m {
            v[k * e] = side_value(Side::West, v[k * e + 1]);
            v[k * e + e - 1] = side_value(Side::East, v[k * e + e - 2]);
            v[k] = side_value(Side::South, v[e + k]);
            v[(e - 1) * e + k] = side_value(Side::North, v[(e - 2) * e + k]);
        }
        let corner = |a: f64, b: f64| 0.5 * (a + b);
        v[0] = corner(v[1], v[e]);
        v[e - 1] = corner(v[e - 2], v[2 * e - 1]);
        v[(e - 1) * e] = corner(v[(e - 1) * e + 1], v[(e - 2) * e]);
        v[e * e - 1] = corner(v[e * e - 2], v[(e - 1) * e - 1]);
        (xs, v)
    }

    /// Bilinear interpolation, using the boundary data between the outermost
    /// centres and the walls. Points are clamped to `Q0`.
    pub fn interpolate(&self, p: Point) -> f64 {
        let (xs, v) = self.extended();
        let e = xs.len();
        let locate = |x: f64| {
            let x = x.clamp(0.0, PI);
            let k = xs.partition_point(|&c| c <= x).clamp(1, e - 1) - 1;
            let s = (x - xs[k]) / (xs[k + 1] - xs[k]);
            (k, s)
        };
        let (i, s) = locate(p.x1);
        let (j, r) = locate(p.x2);
        let f = |a: usize, b: usize| v[b * e + a];
        (1.0 - s) * (1.0 - r) * f(i, j) + s * (1.0 - r) * f(i + 1, j) + (1.0 - s) * r * f(i, j + 1) + s * r * f(i + 1, j + 1)
    }
}

/// `x / (e^x - 1)`.
fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-6 {
        1.0 - 0.5 * x + x * x / 12.0
    } else if x > 0.0 {
        let e = (-x).exp();
        x * e / (1.0 - e)
    } else {
        x / x.exp_m1()
    }
}

#[derive(Debug, Clone, Copy)]
struct Problem {
    peclet: f64,
    lambda: f64,
    source: f64,
    boundary: [Boundary; 4],
}

/// `h` at mesh vertices, exactly zero on the walls.
fn vertex_h(mesh: &Mesh1d) -> Vec<f64> {
    let f = mesh.faces();
    let e = f.len();
    let mut hv = vec![0.0; e * e];
    for j in 1..e - 1 {
        for i in 1..e - 1 {
            hv[j * e + i] = f[i].sin() * f[j].sin();
        }
    }
    hv
}

fn assemble(mesh: &Mesh1d, prob: &Problem, adv: Advection) -> (CsrMatrix, Vec<f64>) {
    let m = mesh.cells();
    let f = mesh.faces();
    let c = mesh.centers();
    let e = m + 1;
    let hv = vertex_h(mesh);
    let h = |i: usize, j: usize| hv[j * e + i];
    let a = prob.peclet;
    let mut bld = CsrBuilder::new(m * m, 5 * m * m);
    let mut rhs = vec![0.0; m * m];
    let couple = |bld: &mut CsrBuilder, diag: &mut f64, nb: usize, cond: f64, flux: f64| match adv {
        Advection::ExponentialFitting => {
            let pe = flux / cond;
            *diag += cond * bernoulli(-pe);
            bld.add(nb, -cond * bernoulli(pe));
        }
        Advection::Upwind => {
            *diag += cond + flux.max(0.0);
            bld.add(nb, -cond + flux.min(0.0));
        }
    };
    for j in 0..m {
        let dy = f[j + 1] - f[j];
        for i in 0..m {
            let dx = f[i + 1] - f[i];
            let k = j * m + i;
            let mut diag = prob.lambda * dx * dy;
            rhs[k] = prob.source * dx * dy;
            let mut wall = |side: Side, cond: f64, diag: &mut f64| {
                if let Boundary::Dirichlet(g) = prob.boundary[side.index()] {
                    *diag += cond;
                    rhs[k] += cond * g;
                }
            };
            // east
            if i + 1 < m {
                let flux = -a * (h(i + 1, j + 1) - h(i + 1, j));
                couple(&mut bld, &mut diag, k + 1, dy / (c[i + 1] - c[i]), flux);
            } else {
                wall(Side::East, dy / (f[m] - c[i]), &mut diag);
            }
            // west
            if i > 0 {
                let flux = a * (h(i, j + 1) - h(i, j));
                couple(&mut bld, &mut diag, k - 1, dy / (c[i] - c[i - 1]), flux);
            } else {
                wall(Side::West, dy / (c[0] - f[0]), &mut diag);
            }
            // north
            if j + 1 < m {
                let flux = a * (h(i + 1, j + 1) - h(i, j + 1));
                couple(&mut bld, &mut diag, k + m, dx / (c[j + 1] - c[j]), flux);
            } else {
                wall(Side::North, dx / (f[m] - c[j]), &mut diag);
            }
            // south
            if j > 0 {
                let flux = -a * (h(i + 1, j) - h(i, j));
                couple(&mut bld, &mut diag, k - m, dx / (c[j] - c[j - 1]), flux);
            } else {
                wall(Side::South, dx / (c[0] - f[0]), &mut diag);
            }
            bld.add(k, diag);
            bld.finish_row();
        }
    }
    (bld.build(), rhs)
}

/// Solve a system whose solution satisfies `u(pi - x1, pi - x2) = s u(x) + c`
/// by keeping the rows of the lower half of the mesh and substituting the
/// mirrored unknowns of the upper half.
fn solve_point_symmetric(
    mat: &CsrMatrix,
    rhs: &[f64],
    m: usize,
    (s, c): (f64, f64),
    opts: SolverOptions,
) -> Result<(Vec<f64>, SolveStats)> {
    if m % 2 != 0 {
        return solve(mat, rhs, opts);
    }
    let half = m * m / 2;
    let mirror = |k: usize| m * m - 1 - k;
    let mut bld = CsrBuilder::new(half, 5 * half);
    let mut r = rhs[..half].to_vec();
    for (k, rk) in r.iter_mut().enumerate() {
        for (col, v) in mat.row(k) {
            if col < half {
                bld.add(col, v);
            } else {
                bld.add(mirror(col), s * v);
                *rk -= v * c;
            }
        }
        bld.finish_row();
    }
    let (y, stats) = solve(&bld.build(), &r, opts)?;
    let mut x = vec![0.0; m * m];
    for (k, yk) in y.into_iter().enumerate() {
        x[k] = yk;
        x[mirror(k)] = s * yk + c;
    }
    Ok((x, stats))
}

fn solve_problem(mesh: &Mesh1d, prob: &Problem, opts: &PdeOptions, name: &str) -> Result<(CellField, SolveStats)> {
    let (mat, rhs) = assemble(mesh, prob, opts.advection);
    let symmetric = prob.boundary.iter().all(|b| *b == Boundary::Dirichlet(0.0));
    let (x, stats) = if symmetric {
        solve_point_symmetric(&mat, &rhs, mesh.cells(), (1.0, 0.0), opts.solver)?
    } else {
        solve(&mat, &rhs, opts.solver)?
    };
    Ok((
        CellField {
            name: name.to_string(),
            mesh: mesh.clone(),
            values: x,
            boundary: prob.boundary,
        },
        stats,
    ))
}

fn check_peclet(a: f64) -> Result<()> {
    if !(a.is_finite() && a >= 0.0) {
        return Err(Error::InvalidParameter(format!("A = {a} must be finite and >= 0")));
    }
    Ok(())
}

/// Gradient samples on every face, with the control-volume weight of the
/// face. Vertical faces carry `d/dx1`, horizontal faces `d/dx2`; the
/// weights of each family sum to `pi^2`.
fn face_gradients(field: &CellField) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    let mesh = &field.mesh;
    let m = mesh.cells();
    let f = mesh.faces();
    let c = mesh.centers();
    let bc = |s: Side| field.boundary[s.index()];
    let mut vert = Vec::with_capacity((m + 1) * m);
    let mut hor = Vec::with_capacity((m + 1) * m);
    for j in 0..m {
        let dy = f[j + 1] - f[j];
        for i in 0..=m {
            let (g, w) = if i == 0 {
                let d = c[0] - f[0];
                let g = match bc(Side::West) {
                    Boundary::Dirichlet(b) => (field.at(0, j) - b) / d,
                    Boundary::Neumann => 0.0,
                };
                (g, dy * d)
            } else if i == m {
                let d = f[m] - c[m - 1];
                let g = match bc(Side::East) {
                    Boundary::Dirichlet(b) => (b - field.at(m - 1, j)) / d,
                    Boundary::Neumann => 0.0,
                };
                (g, dy * d)
            } else {
                let d = c[i] - c[i - 1];
                ((field.at(i, j) - field.at(i - 1, j)) / d, dy * d)
            };
            vert.push((g, w));
        }
    }
    for i in 0..m {
        let dx = f[i + 1] - f[i];
        for j in 0..=m {
            let (g, w) = if j == 0 {
                let d = c[0] - f[0];
                let g = match bc(Side::South) {
                    Boundary::Dirichlet(b) => (field.at(i, 0) - b) / d,
                    Boundary::Neumann => 0.0,
                };
                (g, dx * d)
            } else if j == m {
                let d = f[m] - c[m - 1];
                let g = match bc(Side::North) {
                    Boundary::Dirichlet(b) => (b - field.at(i, m - 1)) / d,
                    Boundary::Neumann => 0.0,
                };
                (g, dx * d)
            } else {
                let d = c[j] - c[j - 1];
                ((field.at(i, j) - field.at(i, j - 1)) / d, dx * d)
            };
            hor.push((g, w));
        }
    }
    (vert, hor)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSolution {
    pub peclet: f64,
    /// `chi_1 = psi_1 - x1` on `Q0`.
    pub chi1: CellField,
    /// `chi_2 = psi_2 - x2` on `Q0`.
    pub chi2: CellField,
    /// `2 delta_ij + (2 / pi^2) int_{Q0} grad chi_i . grad chi_j`.
    pub d_eff: [[f64; 2]; 2],
    /// `(2 / pi) x` flux of `psi_1` through `x1 = pi`; equals `D_11` for the
    /// exact solution.
    pub d11_flux: f64,
    pub resolution: usize,
    pub iterations: usize,
    /// Max-norm residual of the discrete corrector equation.
    pub residual_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeffRow {
    #[serde(rename = "A")]
    pub peclet: f64,
    #[serde(rename = "D11")]
    pub d11: f64,
    #[serde(rename = "D22")]
    pub d22: f64,
    #[serde(rename = "D12")]
    pub d12: f64,
    pub resolution: usize,
}

impl ChiSolution {
    pub fn row(&self) -> DeffRow {
        DeffRow {
            peclet: self.peclet,
            d11: self.d_eff[0][0],
            d22: self.d_eff[1][1],
            d12: self.d_eff[0][1],
            resolution: self.resolution,
        }
    }
}

fn corrector(a: f64, mesh: &Mesh1d, opts: &PdeOptions, coord: u8) -> Result<(CellField, SolveStats, f64)> {
    let boundary = if coord == 1 {
        [Boundary::Dirichlet(0.0), Boundary::Dirichlet(PI), Boundary::Neumann, Boundary::Neumann]
    } else {
        [Boundary::Neumann, Boundary::Neumann, Boundary::Dirichlet(0.0), Boundary::Dirichlet(PI)]
    };
    let prob = Problem {
        peclet: a,
        lambda: 0.0,
        source: 0.0,
        boundary,
    };
    let (mat, rhs) = assemble(mesh, &prob, opts.advection);
    let mut so = opts.solver;
    so.rel_tol = so.rel_tol.min(1e-12);
    let (x, stats) = solve_point_symmetric(&mat, &rhs, mesh.cells(), (-1.0, PI), so)?;
    let res = mat.residual(&x, &rhs).iter().fold(0.0f64, |acc, r| acc.max(r.abs()));
    let psi = CellField {
        name: format!("psi{coord}"),
        mesh: mesh.clone(),
        values: x,
        boundary,
    };
    Ok((psi, stats, res))
}

/// Effective diffusivity and correctors at Péclet number `a`.
pub fn solve_chi(a: f64, grid: &PeriodicGrid, opts: &PdeOptions) -> Result<ChiSolution> {
    check_peclet(a)?;
    let mesh = opts.mesh(grid);
    let (psi1, s1, r1) = corrector(a, &mesh, opts, 1)?;
    let (psi2, s2, r2) = corrector(a, &mesh, opts, 2)?;
    let (v1, h1) = face_gradients(&psi1);
    let (v2, h2) = face_gradients(&psi2);
    // chi gradients: subtract the unit vector of each corrector direction
    let mut q = [[0.0; 2]; 2];
    for (k, &(g1, w)) in v1.iter().enumerate() {
        let a1 = g1 - 1.0;
        let a2 = v2[k].0;
        q[0][0] += w * a1 * a1;
        q[0][1] += w * a1 * a2;
        q[1][1] += w * a2 * a2;
    }
    for (k, &(g1, w)) in h1.iter().enumerate() {
        let a1 = g1;
        let a2 = h2[k].0 - 1.0;
        q[0][0] += w * a1 * a1;
        q[0][1] += w * a1 * a2;
        q[1][1] += w * a2 * a2;
    }
    let s = 2.0 / (PI * PI);
    let d_eff = [[2.0 + s * q[0][0], s * q[0][1]], [s * q[0][1], 2.0 + s * q[1][1]]];
    // flux through x1 = pi: the last vertical face of each row
    let m = mesh.cells();
    let dy: Vec<f64> = (0..m).map(|j| mesh.width(j)).collect();
    let flux: f64 = (0..m).map(|j| v1[j * (m + 1) + m].0 * dy[j]).sum();
    let to_chi = |psi: &CellField, coord: u8| {
        let c = psi.mesh.centers();
        let values = psi
            .values
            .iter()
            .enumerate()
            .map(|(k, v)| v - if coord == 1 { c[k % m] } else { c[k / m] })
            .collect();
        let boundary = psi.boundary.map(|b| match b {
            Boundary::Dirichlet(_) => Boundary::Dirichlet(0.0),
            Boundary::Neumann => Boundary::Neumann,
        });
        CellField {
            name: format!("chi{coord}"),
            mesh: psi.mesh.clone(),
            values,
            boundary,
        }
    };
    Ok(ChiSolution {
        peclet: a,
        chi1: to_chi(&psi1, 1),
        chi2: to_chi(&psi2, 2),
        d_eff,
        d11_flux: 2.0 * flux / PI,
        resolution: grid.n(),
        iterations: s1.iterations + s2.iterations,
        residual_max: r1.max(r2),
    })
}

/// `D_11` at resolutions `n` and `2 n` and their relative difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RichardsonCheck {
    pub peclet: f64,
    pub coarse: f64,
    pub fine: f64,
    pub rel_diff: f64,
    /// Coarse resolution `n`.
    pub resolution: usize,
}

impl RichardsonCheck {
    pub fn resolved(&self, tol: f64) -> bool {
        self.rel_diff < tol
    }
}

pub fn richardson_deff(a: f64, grid: &PeriodicGrid, opts: &PdeOptions) -> Result<(ChiSolution, RichardsonCheck)> {
    let coarse = solve_chi(a, grid, opts)?;
    let fine = solve_chi(a, &grid.refined(), opts)?;
    let (dc, df) = (coarse.d_eff[0][0], fine.d_eff[0][0]);
    let check = RichardsonCheck {
        peclet: a,
        coarse: dc,
        fine: df,
        rel_diff: (dc - df).abs() / df.abs(),
        resolution: grid.n(),
    };
    Ok((fine, check))
}

/// Probability of leaving `Q0` through `side`.
pub fn solve_exit_probability(a: f64, side: Side, grid: &PeriodicGrid, opts: &PdeOptions) -> Result<CellField> {
    check_peclet(a)?;
    let mut boundary = [Boundary::Dirichlet(0.0); 4];
    boundary[side.index()] = Boundary::Dirichlet(1.0);
    let prob = Problem {
        peclet: a,
        lambda: 0.0,
        source: 0.0,
        boundary,
    };
    let (f, _) = solve_problem(&opts.mesh(grid), &prob, opts, &format!("exit_{}", side.as_str()))?;
    Ok(f)
}

/// `-Delta phi + A v . grad phi + lambda phi = 1` in `Q0`, `phi = 0` on the walls.
pub fn solve_resolvent(a: f64, lambda: f64, grid: &PeriodicGrid, opts: &PdeOptions) -> Result<CellField> {
    check_peclet(a)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda = {lambda} must be > 0")));
    }
    let prob = Problem {
        peclet: a,
        lambda,
        source: 1.0,
        boundary: [Boundary::Dirichlet(0.0); 4],
    };
    let (f, _) = solve_problem(&opts.mesh(grid), &prob, opts, &format!("resolvent_{lambda}"))?;
    Ok(f)
}

/// Largest cell value among cells with `0 < h < delta`.
pub fn sup_in_layer(field: &CellField, delta: f64) -> f64 {
    let c = field.mesh.centers();
    let m = field.m();
    let mut best = f64::NEG_INFINITY;
    for j in 0..m {
        for i in 0..m {
            if hamiltonian(Point::new(c[i], c[j])) < delta {
                best = best.max(field.at(i, j));
            }
        }
    }
    best
}

/// Full-period corrector on a uniform periodic grid, for cross-checks at
/// moderate `A`. Returns the effective diffusivity matrix.
pub fn solve_chi_periodic(a: f64, grid: &PeriodicGrid, opts: &PdeOptions) -> Result<[[f64; 2]; 2]> {
    check_peclet(a)?;
    let n = grid.n();
    let dx = grid.spacing();
    let x = |k: usize| k as f64 * dx;
    let hv = |i: usize, j: usize| (x(i % n)).sin() * (x(j % n)).sin();
    let idx = |i: usize, j: usize| (j % n) * n + (i % n);
    let mut bld = CsrBuilder::new(n * n, 5 * n * n);
    for j in 0..n {
        for i in 0..n {
            let k = idx(i, j);
            if k == 0 {
                bld.add(0, 1.0);
                bld.finish_row();
                continue;
            }
            let mut diag = 0.0;
            let nbrs = [
                (idx(i + 1, j), -a * (hv(i + 1, j + 1) - hv(i + 1, j))),
                (idx(i + n - 1, j), a * (hv(i, j + 1) - hv(i, j))),
                (idx(i, j + 1), a * (hv(i + 1, j + 1) - hv(i, j + 1))),
                (idx(i, j + n - 1), -a * (hv(i + 1, j) - hv(i, j))),
            ];
            for (nb, flux) in nbrs {
                match opts.advection {
                    Advection::ExponentialFitting => {
                        diag += bernoulli(-flux);
                        bld.add(nb, -bernoulli(flux));
                    }
                    Advection::Upwind => {
                        diag += 1.0 + flux.max(0.0);
                        bld.add(nb, -1.0 + flux.min(0.0));
                    }
                }
            }
            bld.add(k, diag);
            bld.finish_row();
        }
    }
    let mat = bld.build();
    // cell integrals of -A v1 = A sin x1 cos x2 and -A v2 = -A cos x1 sin x2
    let rhs = |coord: u8| -> Vec<f64> {
        let mut r = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                let k = idx(i, j);
                if k == 0 {
                    continue;
                }
                let (a0, a1, b0, b1) = (x(i), x(i + 1), x(j), x(j + 1));
                r[k] = if coord == 1 {
                    a * (a0.cos() - a1.cos()) * (b1.sin() - b0.sin())
                } else {
                    -a * (a1.sin() - a0.sin()) * (b0.cos() - b1.cos())
                };
            }
        }
        r
    };
    let mut so = opts.solver;
    so.rel_tol = so.rel_tol.min(1e-12);
    let (c1, _) = solve(&mat, &rhs(1), so)?;
    let (c2, _) = solve(&mat, &rhs(2), so)?;
    let mut q = [[0.0; 2]; 2];
    for j in 0..n {
        for i in 0..n {
            let k = idx(i, j);
            let e = idx(i + 1, j);
            let up = idx(i, j + 1);
            let g1 = [(c1[e] - c1[k]) / dx, (c2[e] - c2[k]) / dx];
            let g2 = [(c1[up] - c1[k]) / dx, (c2[up] - c2[k]) / dx];
            for p in 0..2 {
                for r in 0..2 {
                    q[p][r] += dx * dx * (g1[p] * g1[r] + g2[p] * g2[r]);
                }
            }
        }
    }
    let s = 2.0 / (4.0 * PI * PI);
    Ok([[2.0 + s * q[0][0], s * q[0][1]], [s * q[1][0], 2.0 + s * q[1][1]]])
}

// ---------------------------------------------------------------------------
// Super-solution audits
// ---------------------------------------------------------------------------

/// `sup { x1 : x in the fattened corner region at the origin }` for the
/// polar-angle corner proxy.
pub fn corner_reach(beta0_prime: f64) -> f64 {
    FRAC_PI_2 * (1.0 - (FRAC_PI_4 - beta0_prime).tan())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum SupersolutionCandidate {
    /// `alpha (delta^2 - h^2)` on the edge region.
    EdgeQuadratic { alpha: f64 },
    /// `g0(|x1|)` inside `x_bar`, `g1(|x1|)` outside, on the fattened corner
    /// region at the origin.
    CornerG0G1 { x_bar: f64, gamma0: f64, a0: f64 },
    /// `exp(gamma2 A (theta - pi/2 + beta0))` on the bottom edge of `Q0`,
    /// `theta` measured along the flow from the corner at `(pi, 0)`.
    ExitExponential { gamma2: f64 },
    /// `1 - erf(h / sqrt(c0 t))` on `Q0 x (0, t_max]`.
    PsiPlus { c0: f64, t_max: f64 },
    /// `alpha h (2 eps - h)`, `eps = 1 / sqrt(alpha lambda)`, on
    /// `{0 < h < eps}` away from the corners.
    ResolventEdge { alpha: f64, lambda: f64 },
}

impl SupersolutionCandidate {
    pub fn name(&self) -> &'static str {
        match self {
            Self::EdgeQuadratic { .. } => "edge_quadratic",
            Self::CornerG0G1 { .. } => "corner_g0g1",
            Self::ExitExponential { .. } => "exit_exponential",
            Self::PsiPlus { .. } => "psi_plus",
            Self::ResolventEdge { .. } => "resolvent_edge",
        }
    }

    /// Level the residual must reach on the region.
    pub fn required(&self) -> f64 {
        match self {
            Self::EdgeQuadratic { .. } | Self::CornerG0G1 { .. } | Self::ResolventEdge { .. } => 1.0,
            Self::ExitExponential { .. } | Self::PsiPlus { .. } => 0.0,
        }
    }

    pub fn corner(params: &FlowParams) -> Self {
        let a = params.peclet;
        let x_bar = 1.5 / a.sqrt();
        let gamma0 = corner_reach(params.beta0_prime);
        let a0 = corner_g1(x_bar, gamma0, a) + 0.5 * x_bar * x_bar;
        Self::CornerG0G1 { x_bar, gamma0, a0 }
    }

    /// `alpha` from the sampled minimum of `2 (|grad h|^2 - 2 h^2)` with a 10% margin.
    pub fn edge(params: &FlowParams, samples: usize) -> Self {
        let lo = edge_samples(params.delta(), params, samples)
            .into_iter()
            .map(|p| 2.0 * (grad_h(p).norm_sq() - 2.0 * hamiltonian(p).powi(2)))
            .fold(f64::INFINITY, f64::min);
        Self::EdgeQuadratic { alpha: 1.1 / lo }
    }

    /// `gamma2` at 90% of the sampled minimum of `v . grad theta / |grad theta|^2`.
    pub fn exit(params: &FlowParams, samples: usize) -> Self {
        let lo = bottom_edge_samples(params.delta(), params, samples)
            .into_iter()
            .map(|p| {
                let (_, g, _) = theta_along_flow(p);
                velocity(p).dot(g) / g.norm_sq()
            })
            .fold(f64::INFINITY, f64::min);
        Self::ExitExponential { gamma2: 0.9 * lo }
    }

    /// `alpha` with `2 alpha |grad h|^2 >= 1.1` on the sampled edge strip.
    pub fn resolvent(lambda: f64, params: &FlowParams, samples: usize) -> Self {
        // the strip width depends on alpha; iterate to a fixed point
        let mut alpha: f64 = 1.0;
        for _ in 0..20 {
            let eps = (1.0 / (alpha * lambda).sqrt()).min(0.99);
            let lo = edge_samples(eps, params, samples)
                .into_iter()
                .filter(|p| hamiltonian(*p) > 0.0)
                .map(|p| grad_h(p).norm_sq())
                .fold(f64::INFINITY, f64::min);
            alpha = 1.1 / (2.0 * lo);
        }
        Self::ResolventEdge { alpha, lambda }
    }
}

/// `(18 / A) ln(gamma0 / x)`.
pub fn corner_g1(x: f64, gamma0: f64, a: f64) -> f64 {
    18.0 / a * (gamma0 / x).ln()
}

/// `-g1'' - A x g1' / 2` for the outer corner profile.
pub fn corner_model_residual(x: f64, a: f64) -> f64 {
    let g1p = -18.0 / (a * x);
    let g1pp = 18.0 / (a * x * x);
    -g1pp - a * x * g1p / 2.0
}

/// `(g0'(x_bar), g1'(x_bar))` for the glue condition `g0' >= g1'`.
pub fn corner_glue_slopes(a: f64) -> (f64, f64) {
    let x_bar = 1.5 / a.sqrt();
    (-x_bar, -18.0 / (a * x_bar))
}

/// Clockwise polar angle about the centre of `Q0`, zero towards `(pi, 0)`,
/// with its gradient and Laplacian.
fn theta_along_flow(p: Point) -> (f64, Point, f64) {
    let (y1, y2) = (p.x1 - FRAC_PI_2, p.x2 - FRAC_PI_2);
    let r2 = y1 * y1 + y2 * y2;
    let phi = y2.atan2(y1);
    let theta = -(phi + FRAC_PI_4);
    let theta = theta.rem_euclid(2.0 * PI);
    let grad = Point::new(y2 / r2, -y1 / r2);
    let (phi11, phi22) = (2.0 * y1 * y2 / (r2 * r2), -2.0 * y1 * y2 / (r2 * r2));
    (theta, grad, -(phi11 + phi22))
}

/// Points near the bottom and left walls of `Q0` (and across them) with
/// `|h| < width` that lie in the edge region for that width.
fn edge_samples(width: f64, params: &FlowParams, samples: usize) -> Vec<Point> {
    let p = FlowParams {
        layer_const: width * params.peclet.max(1.0).sqrt(),
        peclet: params.peclet.max(1.0),
        ..*params
    };
    let mut out = Vec::new();
    for a in 0..samples {
        let x1 = PI * (a as f64 + 0.5) / samples as f64;
        let s = x1.sin();
        for b in 0..samples {
            let level = width * (2.0 * (b as f64 + 0.5) / samples as f64 - 1.0);
            if level.abs() > s {
                continue;
            }
            let x2 = (level / s).asin();
            for q in [Point::new(x1, x2), Point::new(x2, x1)] {
                if corner_angle_distance(theta_proxy(q)) >= p.beta0_prime.min(p.beta0) && hamiltonian(q).abs() < width {
                    let d = corner_angle_distance(theta_proxy(q));
                    if d >= p.beta0 {
                        out.push(q);
                    }
                }
            }
        }
    }
    out
}

/// Points of the bottom edge strip of `Q0`: `0 < h < width`, angle along the
/// flow in `(beta0, pi/2 - beta0)`.
fn bottom_edge_samples(width: f64, params: &FlowParams, samples: usize) -> Vec<Point> {
    let mut out = Vec::new();
    for a in 0..samples {
        let x1 = PI * (a as f64 + 0.5) / samples as f64;
        let s = x1.sin();
        for b in 0..samples {
            let level = width * (b as f64 + 0.5) / samples as f64;
            if level > s {
                continue;
            }
            let q = Point::new(x1, (level / s).asin());
            let (theta, _, _) = theta_along_flow(q);
            if theta > params.beta0 && theta < FRAC_PI_2 - params.beta0 {
                out.push(q);
            }
        }
    }
    out
}

/// Points of the fattened corner region around the origin, in all four
/// quadrants: thin strips along both axes plus a box at the saddle.
fn corner_samples(params: &FlowParams, samples: usize) -> Vec<Point> {
    let delta = params.delta();
    let reach = corner_reach(params.beta0_prime) + 0.05;
    let mut cand = Vec::new();
    for a in 0..samples {
        let x1 = reach * (a as f64 + 0.5) / samples as f64;
        let s = x1.sin();
        for b in 0..samples {
            let level = delta * (2.0 * (b as f64 + 0.5) / samples as f64 - 1.0);
            if level.abs() > s {
                continue;
            }
            let x2 = (level / s).asin();
            cand.push(Point::new(x1, x2));
            cand.push(Point::new(x2, x1));
        }
    }
    let boxw = (4.0 * delta.sqrt()).min(reach);
    for a in 0..samples {
        for b in 0..samples {
            let x1 = boxw * (a as f64 + 0.5) / samples as f64;
            let x2 = boxw * (b as f64 + 0.5) / samples as f64;
            cand.push(Point::new(x1, x2));
        }
    }
    let mut out = Vec::with_capacity(4 * cand.len());
    for p in cand {
        for (s1, s2) in [(1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)] {
            let q = Point::new(s1 * p.x1, s2 * p.x2);
            if nearest_corner(q) == (0, 0) && classify_region(q, params).in_fattened_corner() {
                out.push(q);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub name: String,
    pub min_residual: f64,
    pub required: f64,
    pub samples: usize,
    pub argmin: Point,
    /// Time of the minimising sample for time-dependent candidates.
    pub t_at_min: Option<f64>,
    pub pass: bool,
}

fn residual_at(c: &SupersolutionCandidate, params: &FlowParams, p: Point, t: f64) -> f64 {
    let a = params.peclet;
    let v = velocity(p);
    match *c {
        SupersolutionCandidate::EdgeQuadratic { alpha } => {
            // phi = alpha (delta^2 - h^2): F'(h) = -2 alpha h, F'' = -2 alpha
            let h = hamiltonian(p);
            let gh = grad_h(p);
            let fp = -2.0 * alpha * h;
            let lap = -2.0 * alpha * gh.norm_sq() + fp * laplacian_h(p);
            -lap + a * v.dot(gh * fp)
        }
        SupersolutionCandidate::CornerG0G1 { x_bar, .. } => {
            let r = p.x1.abs();
            let sgn = if p.x1 < 0.0 { -1.0 } else { 1.0 };
            let (gp, gpp) = if r <= x_bar {
                (-r, -1.0)
            } else {
                (-18.0 / (a * r), 18.0 / (a * r * r))
            };
            // phi(x) = g(|x1|): d/dx1 = sgn g', d2/dx1^2 = g''
            -gpp + a * v.x1 * sgn * gp
        }
        SupersolutionCandidate::ExitExponential { gamma2 } => {
            let (theta, gt, lt) = theta_along_flow(p);
            let k = gamma2 * a;
            let z = (k * (theta - FRAC_PI_2 + params.beta0)).exp();
            let zp = k * z;
            let zpp = k * k * z;
            let lap = zpp * gt.norm_sq() + zp * lt;
            -lap + a * v.dot(gt * zp)
        }
        SupersolutionCandidate::PsiPlus { c0, .. } => {
            let h = hamiltonian(p);
            let gh = grad_h(p);
            let s = (c0 * t).sqrt();
            let u = h / s;
            let e = (-u * u).exp();
            let k = 2.0 / PI.sqrt();
            // psi = 1 - erf(u)
            let dt = -k * e * (-h / (2.0 * s * t));
            let fp = -k * e / s;
            let fpp = -k * e * (-2.0 * u) / (c0 * t);
            let lap = fpp * gh.norm_sq() + fp * laplacian_h(p);
            dt + a * v.dot(gh * fp) - lap
        }
        SupersolutionCandidate::ResolventEdge { alpha, lambda } => {
            let eps = 1.0 / (alpha * lambda).sqrt();
            let h = hamiltonian(p);
            let gh = grad_h(p);
            let phi = alpha * h * (2.0 * eps - h);
            let fp = alpha * (2.0 * eps - 2.0 * h);
            let fpp = -2.0 * alpha;
            let lap = fpp * gh.norm_sq() + fp * laplacian_h(p);
            -lap + a * v.dot(gh * fp) + lambda * phi
        }
    }
}

/// Minimum of the differential-inequality residual over a dense sample of
/// the candidate's region, using exact derivatives.
pub fn verify_supersolution(c: &SupersolutionCandidate, params: &FlowParams, samples: usize) -> Result<ResidualReport> {
    params.validate_layer()?;
    let mut pts: Vec<(Point, f64)> = Vec::new();
    match *c {
        SupersolutionCandidate::EdgeQuadratic { .. } => {
            pts.extend(edge_samples(params.delta(), params, samples).into_iter().map(|p| (p, 0.0)));
        }
        SupersolutionCandidate::CornerG0G1 { .. } => {
            pts.extend(corner_samples(params, samples).into_iter().map(|p| (p, 0.0)));
        }
        SupersolutionCandidate::ExitExponential { .. } => {
            pts.extend(bottom_edge_samples(params.delta(), params, samples).into_iter().map(|p| (p, 0.0)));
        }
        SupersolutionCandidate::PsiPlus { t_max, .. } => {
            let nt = samples.max(4);
            for a in 0..samples {
                for b in 0..samples {
                    let p = Point::new(PI * (a as f64 + 0.5) / samples as f64, PI * (b as f64 + 0.5) / samples as f64);
                    for k in 0..nt {
                        // log-spaced down to 1e-6 t_max
                        let t = t_max * (1e-6f64).powf(k as f64 / (nt - 1) as f64);
                        pts.push((p, t));
                    }
                }
            }
        }
        SupersolutionCandidate::ResolventEdge { alpha, lambda } => {
            let eps = 1.0 / (alpha * lambda).sqrt();
            pts.extend(
                edge_samples(eps, params, samples)
                    .into_iter()
                    .filter(|p| hamiltonian(*p) > 0.0)
                    .map(|p| (p, 0.0)),
            );
        }
    }
    if pts.is_empty() {
        return Err(Error::InsufficientData(format!("no sample points in the {} region", c.name())));
    }
    let mut best = (f64::INFINITY, Point::default(), 0.0);
    for &(p, t) in &pts {
        let r = residual_at(c, params, p, t);
        if r < best.0 {
            best = (r, p, t);
        }
    }
    let required = c.required();
    Ok(ResidualReport {
        name: c.name().to_string(),
        min_residual: best.0,
        required,
        samples: pts.len(),
        argmin: best.1,
        t_at_min: matches!(c, SupersolutionCandidate::PsiPlus { .. }).then_some(best.2),
        pass: best.0 >= required - 1e-9,
    })
}
