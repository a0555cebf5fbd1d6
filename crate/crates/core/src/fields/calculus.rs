//! Second-order finite differences on [`Grid2`] fields: centered in the
//! interior, one-sided second order at the edges.

use crate::error::{FlatError, Result};
use crate::fields::{ScalarField, SymField, VectorField};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// Apply a 1-D line operator along `axis`.
fn along(f: &ScalarField, axis: Axis, op: impl Fn(&[f64], &mut [f64])) -> ScalarField {
    let g = *f.grid();
    let mut out = vec![0.0; g.len()];
    match axis {
        Axis::X => {
            for j in 0..g.ny {
                op(f.row(j), &mut out[j * g.nx..(j + 1) * g.nx]);
            }
        }
        Axis::Y => {
            let mut line = vec![0.0; g.ny];
            let mut res = vec![0.0; g.ny];
            for i in 0..g.nx {
                for (j, l) in line.iter_mut().enumerate() {
                    *l = f.at(i, j);
                }
                op(&line, &mut res);
                for (j, &r) in res.iter().enumerate() {
                    out[j * g.nx + i] = r;
                }
            }
        }
    }
    ScalarField::from_raw(g, out)
}

fn first_diff(h: f64) -> impl Fn(&[f64], &mut [f64]) {
    move |u: &[f64], out: &mut [f64]| {
        let n = u.len();
        let inv2h = 0.5 / h;
        out[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) * inv2h;
        for k in 1..n - 1 {
            out[k] = (u[k + 1] - u[k - 1]) * inv2h;
        }
        out[n - 1] = (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) * inv2h;
    }
}

fn second_diff(h: f64) -> impl Fn(&[f64], &mut [f64]) {
    move |u: &[f64], out: &mut [f64]| {
        let n = u.len();
        let inv = 1.0 / (h * h);
        for k in 1..n - 1 {
            out[k] = (u[k + 1] - 2.0 * u[k] + u[k - 1]) * inv;
        }
        if n >= 4 {
            out[0] = (2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]) * inv;
            out[n - 1] = (2.0 * u[n - 1] - 5.0 * u[n - 2] + 4.0 * u[n - 3] - u[n - 4]) * inv;
        } else {
            out[0] = out[1];
            out[n - 1] = out[n - 2];
        }
    }
}

/// First partial derivative along `axis`.
pub fn d1(f: &ScalarField, axis: Axis) -> ScalarField {
    let g = f.grid();
    match axis {
        Axis::X => along(f, axis, first_diff(g.hx)),
        Axis::Y => along(f, axis, first_diff(g.hy)),
    }
}

/// Pure second partial derivative along `axis`.
pub fn d2(f: &ScalarField, axis: Axis) -> ScalarField {
    let g = f.grid();
    match axis {
        Axis::X => along(f, axis, second_diff(g.hx)),
        Axis::Y => along(f, axis, second_diff(g.hy)),
    }
}

pub fn grad(f: &ScalarField) -> VectorField {
    VectorField::from_components(vec![d1(f, Axis::X), d1(f, Axis::Y)]).expect("same grid")
}

/// `d1 f1 + d2 f2` of a two-component field.
pub fn div(f: &VectorField) -> Result<ScalarField> {
    if f.ncomp() != 2 {
        return Err(FlatError::InvalidArgument(format!("div needs 2 components, got {}", f.ncomp())));
    }
    d1(f.comp(0), Axis::X).axpby(1.0, &d1(f.comp(1), Axis::Y), 1.0)
}

/// Scalar curl `d1 f2 - d2 f1`.
pub fn curl2(f: &VectorField) -> Result<ScalarField> {
    if f.ncomp() != 2 {
        return Err(FlatError::InvalidArgument(format!("curl needs 2 components, got {}", f.ncomp())));
    }
    d1(f.comp(1), Axis::X).axpby(1.0, &d1(f.comp(0), Axis::Y), -1.0)
}

/// Hessian; the mixed entry is computed once, so the result is exactly symmetric.
pub fn hess(f: &ScalarField) -> SymField {
    SymField {
        xx: d2(f, Axis::X),
        xy: d1(&d1(f, Axis::X), Axis::Y),
        yy: d2(f, Axis::Y),
    }
}
