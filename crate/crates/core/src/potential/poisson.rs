//! Five-point Poisson solves on a node grid by fast-diagonalization with
//! dense cosine (Neumann) and sine (Dirichlet) eigenbases.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{FlatError, Result};
use crate::fields::{Grid2, ScalarField, VectorField};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
const MAX_REFINEMENTS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    /// Data is the outward normal derivative.
    Neumann,
    /// Data is the boundary value.
    Dirichlet,
}

/// Samples along the four edges: `south`/`north` have `nx` entries (row `j = 0`
/// and `j = ny - 1`), `west`/`east` have `ny` entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeData {
    pub south: Vec<f64>,
    pub north: Vec<f64>,
    pub west: Vec<f64>,
    pub east: Vec<f64>,
}

impl EdgeData {
    pub fn zeros(grid: &Grid2) -> Self {
        Self { south: vec![0.0; grid.nx], north: vec![0.0; grid.nx], west: vec![0.0; grid.ny], east: vec![0.0; grid.ny] }
    }

    /// Sample `f(x, y, outward_normal)` on every edge.
    pub fn from_fn(grid: &Grid2, f: impl Fn(f64, f64, [f64; 2]) -> f64) -> Self {
        let (xa, xb, ya, yb) = (grid.x0, grid.x_max(), grid.y0, grid.y_max());
        Self {
            south: (0..grid.nx).map(|i| f(grid.x(i), ya, [0.0, -1.0])).collect(),
            north: (0..grid.nx).map(|i| f(grid.x(i), yb, [0.0, 1.0])).collect(),
            west: (0..grid.ny).map(|j| f(xa, grid.y(j), [-1.0, 0.0])).collect(),
            east: (0..grid.ny).map(|j| f(xb, grid.y(j), [1.0, 0.0])).collect(),
        }
    }

    /// Normal flux `G . nu` of a two-component node field.
    pub fn normal_flux(field: &VectorField) -> Result<Self> {
        if field.ncomp() != 2 {
            return Err(FlatError::InvalidArgument(format!("flux needs 2 components, got {}", field.ncomp())));
        }
        let g = *field.grid();
        let (a, b) = (field.comp(0), field.comp(1));
        Ok(Self {
            south: (0..g.nx).map(|i| -b.at(i, 0)).collect(),
            north: (0..g.nx).map(|i| b.at(i, g.ny - 1)).collect(),
            west: (0..g.ny).map(|j| -a.at(0, j)).collect(),
            east: (0..g.ny).map(|j| a.at(g.nx - 1, j)).collect(),
        })
    }

    /// Boundary trace of a node field.
    pub fn trace(f: &ScalarField) -> Self {
        let g = *f.grid();
        Self {
            south: f.row(0).to_vec(),
            north: f.row(g.ny - 1).to_vec(),
            west: (0..g.ny).map(|j| f.at(0, j)).collect(),
            east: (0..g.ny).map(|j| f.at(g.nx - 1, j)).collect(),
        }
    }

    fn check(&self, grid: &Grid2) -> Result<()> {
        let ok = self.south.len() == grid.nx
            && self.north.len() == grid.nx
            && self.west.len() == grid.ny
            && self.east.len() == grid.ny;
        let finite = [&self.south, &self.north, &self.west, &self.east].iter().all(|e| e.iter().all(|v| v.is_finite()));
        if !ok {
            return Err(FlatError::GridMismatch("edge data lengths do not match the grid".into()));
        }
        if !finite {
            return Err(FlatError::InvalidArgument("edge data not finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EllipticProblem {
    pub kind: BoundaryKind,
    pub rhs: ScalarField,
    pub boundary: EdgeData,
    /// Relative residual target.
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// `max |L u - f| / max |f|` of the (projected) discrete system.
    pub residual: f64,
    /// Neumann only: trapezoid-weighted mean imbalance removed before solving.
    pub imbalance: f64,
    pub refinements: usize,
}

impl EllipticProblem {
    pub fn neumann(rhs: ScalarField, boundary: EdgeData) -> Self {
        Self { kind: BoundaryKind::Neumann, rhs, boundary, tolerance: DEFAULT_TOLERANCE }
    }

    pub fn dirichlet(rhs: ScalarField, boundary: EdgeData) -> Self {
        Self { kind: BoundaryKind::Dirichlet, rhs, boundary, tolerance: DEFAULT_TOLERANCE }
    }
}

/// One-dimensional eigenbasis: synthesis `s`, analysis `a = s^{-1}`, eigenvalues of
/// the second-difference operator.
struct Basis {
    s: Array2<f64>,
    a: Array2<f64>,
    lambda: Array1<f64>,
}

fn cosine_basis(n: usize, h: f64) -> Basis {
    let m = (n - 1) as f64;
    let s = Array2::from_shape_fn((n, n), |(i, k)| (PI * (k * i) as f64 / m).cos());
    let w = |i: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
    let a = Array2::from_shape_fn((n, n), |(k, i)| 2.0 / m * w(k) * w(i) * (PI * (k * i) as f64 / m).cos());
    let lambda = Array1::from_shape_fn(n, |k| -(2.0 - 2.0 * (PI * k as f64 / m).cos()) / (h * h));
    Basis { s, a, lambda }
}

fn sine_basis(n_interior: usize, h: f64) -> Basis {
    let m = (n_interior + 1) as f64;
    let s = Array2::from_shape_fn((n_interior, n_interior), |(i, k)| (PI * ((k + 1) * (i + 1)) as f64 / m).sin());
    let a = s.mapv(|v| 2.0 / m * v);
    let lambda = Array1::from_shape_fn(n_interior, |k| -(2.0 - 2.0 * (PI * (k + 1) as f64 / m).cos()) / (h * h));
    Basis { s, a, lambda }
}

/// Solve `(Lx + Ly) u = f` for `f` laid out `[row j, column i]`.
fn diagonal_solve(bx: &Basis, by: &Basis, f: &Array2<f64>, drop_zero_mode: bool) -> Array2<f64> {
    let mut c = by.a.dot(f).dot(&bx.a.t());
    for ((j, i), v) in c.indexed_iter_mut() {
        let l = by.lambda[j] + bx.lambda[i];
        *v = if drop_zero_mode && i == 0 && j == 0 { 0.0 } else { *v / l };
    }
    by.s.dot(&c).dot(&bx.s.t())
}

/// Neumann operator including ghost-point boundary rows.
fn apply_neumann(u: &Array2<f64>, hx: f64, hy: f64) -> Array2<f64> {
    let (ny, nx) = u.dim();
    Array2::from_shape_fn((ny, nx), |(j, i)| {
        let c = u[[j, i]];
        let xm = if i == 0 { u[[j, 1]] } else { u[[j, i - 1]] };
        let xp = if i == nx - 1 { u[[j, nx - 2]] } else { u[[j, i + 1]] };
        let ym = if j == 0 { u[[1, i]] } else { u[[j - 1, i]] };
        let yp = if j == ny - 1 { u[[ny - 2, i]] } else { u[[j + 1, i]] };
        (xm - 2.0 * c + xp) / (hx * hx) + (ym - 2.0 * c + yp) / (hy * hy)
    })
}

fn apply_dirichlet_interior(u: &Array2<f64>, hx: f64, hy: f64) -> Array2<f64> {
    let (ny, nx) = u.dim();
    let at = |j: isize, i: isize| {
        if j < 0 || i < 0 || j >= ny as isize || i >= nx as isize {
            0.0
        } else {
            u[[j as usize, i as usize]]
        }
    };
    Array2::from_shape_fn((ny, nx), |(j, i)| {
        let (j, i) = (j as isize, i as isize);
        let c = at(j, i);
        (at(j, i - 1) - 2.0 * c + at(j, i + 1)) / (hx * hx) + (at(j - 1, i) - 2.0 * c + at(j + 1, i)) / (hy * hy)
    })
}

fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Iterative refinement around the direct solve until the residual target.
fn refine(
    f: &Array2<f64>,
    tolerance: f64,
    solve: impl Fn(&Array2<f64>) -> Array2<f64>,
    apply: impl Fn(&Array2<f64>) -> Array2<f64>,
) -> Result<(Array2<f64>, f64, usize)> {
    let scale = max_abs(f).max(f64::MIN_POSITIVE);
    let mut u = solve(f);
    let mut res = max_abs(&(f - &apply(&u))) / scale;
    let mut steps = 0;
    while res > tolerance && steps < MAX_REFINEMENTS {
        let r = f - &apply(&u);
        u = u + solve(&r);
        res = max_abs(&(f - &apply(&u))) / scale;
        steps += 1;
    }
    if !(res <= tolerance) {
        return Err(FlatError::NonConvergence { achieved: res, tolerance });
    }
    Ok((u, res, steps))
}

pub fn solve(problem: &EllipticProblem) -> Result<ScalarField> {
    solve_with_report(problem).map(|(u, _)| u)
}

/// Zero-mean (trapezoid weights) for Neumann problems.
pub fn solve_with_report(problem: &EllipticProblem) -> Result<(ScalarField, SolveReport)> {
    let g = *problem.rhs.grid();
    problem.boundary.check(&g)?;
    let (nx, ny, hx, hy) = (g.nx, g.ny, g.hx, g.hy);
    let b = &problem.boundary;
    match problem.kind {
        BoundaryKind::Neumann => {
            let mut f = Array2::from_shape_fn((ny, nx), |(j, i)| problem.rhs.at(i, j));
            for j in 0..ny {
                f[[j, 0]] -= 2.0 * b.west[j] / hx;
                f[[j, nx - 1]] -= 2.0 * b.east[j] / hx;
            }
            for i in 0..nx {
                f[[0, i]] -= 2.0 * b.south[i] / hy;
                f[[ny - 1, i]] -= 2.0 * b.north[i] / hy;
            }
            // compatibility: trapezoid-weighted sum must vanish
            let w = |k: usize, n: usize| if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
            let (mut s, mut ws) = (0.0, 0.0);
            for ((j, i), v) in f.indexed_iter() {
                s += w(i, nx) * w(j, ny) * v;
                ws += w(i, nx) * w(j, ny);
            }
            let imbalance = s / ws;
            if imbalance.abs() > 0.0 {
                log::debug!("neumann compatibility imbalance {imbalance:e} projected out");
            }
            f.mapv_inplace(|v| v - imbalance);
            let (bx, by) = (cosine_basis(nx, hx), cosine_basis(ny, hy));
            let (u, residual, refinements) = refine(
                &f,
                problem.tolerance,
                |r| diagonal_solve(&bx, &by, r, true),
                |u| apply_neumann(u, hx, hy),
            )?;
            let mut field = ScalarField::new(g, u.iter().copied().collect())?;
            let mean = field.mean();
            field = field.map(|v| v - mean);
            Ok((field, SolveReport { residual, imbalance, refinements }))
        }
        BoundaryKind::Dirichlet => {
            let (mi, mj) = (nx - 2, ny - 2);
            let mut f = Array2::from_shape_fn((mj, mi), |(j, i)| problem.rhs.at(i + 1, j + 1));
            for j in 0..mj {
                f[[j, 0]] -= b.west[j + 1] / (hx * hx);
                f[[j, mi - 1]] -= b.east[j + 1] / (hx * hx);
            }
            for i in 0..mi {
                f[[0, i]] -= b.south[i + 1] / (hy * hy);
                f[[mj - 1, i]] -= b.north[i + 1] / (hy * hy);
            }
            let (bx, by) = (sine_basis(mi, hx), sine_basis(mj, hy));
            let (u, residual, refinements) = refine(
                &f,
                problem.tolerance,
                |r| diagonal_solve(&bx, &by, r, false),
                |u| apply_dirichlet_interior(u, hx, hy),
            )?;
            let mut values = vec![0.0; g.len()];
            for j in 0..ny {
                for i in 0..nx {
                    values[g.idx(i, j)] = if j == 0 {
                        b.south[i]
                    } else if j == ny - 1 {
                        b.north[i]
                    } else if i == 0 {
                        b.west[j]
                    } else if i == nx - 1 {
                        b.east[j]
                    } else {
                        u[[j - 1, i - 1]]
                    };
                }
            }
            Ok((ScalarField::new(g, values)?, SolveReport { residual, imbalance: 0.0, refinements }))
        }
    }
}
