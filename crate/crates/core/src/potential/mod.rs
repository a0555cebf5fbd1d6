//! Helmholtz split of a symmetric form field and reconstruction of a scalar
//! potential whose Hessian matches it.

mod poisson;

pub use poisson::{solve, solve_with_report, BoundaryKind, EdgeData, EllipticProblem, SolveReport, DEFAULT_TOLERANCE};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fields::{
    curl2, d1, div, grad, hess, holder_profile, little_holder_verdict, Axis, HolderProfile, HolderVerdict,
    ScalarField, SymField, VectorField,
};

/// Nodes dropped from each edge before sup-norms of stencil quantities.
pub const GAP_MARGIN: usize = 2;
/// Non-member threshold of the gradient diagnostic, relative to the
/// largest-scale seminorm.
pub const RELATIVE_HOLDER_THRESHOLD: f64 = 0.75;

#[derive(Clone, Debug)]
pub struct PotentialResult {
    pub f: VectorField,
    pub e: VectorField,
    pub v: ScalarField,
    /// `sup |hess v - A|`
    pub hessian_gap: f64,
    /// `sup |d2 G1 - d1 G2|` of `G = (F1 + E2, F2 - E1)`.
    pub curl_gap: f64,
    pub solves: Vec<SolveReport>,
}

/// Summary of a reconstruction for JSON reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialReport {
    pub hessian_gap: f64,
    pub curl_gap: f64,
    pub form_sup: f64,
    pub solver_residuals: Vec<f64>,
    pub compatibility_imbalances: Vec<f64>,
}

impl PotentialResult {
    pub fn report(&self, a: &SymField) -> PotentialReport {
        PotentialReport {
            hessian_gap: self.hessian_gap,
            curl_gap: self.curl_gap,
            form_sup: a.max_abs_inset(0),
            solver_residuals: self.solves.iter().map(|s| s.residual).collect(),
            compatibility_imbalances: self.solves.iter().map(|s| s.imbalance).collect(),
        }
    }
}

/// `sup |hess v - A|` on nodes `GAP_MARGIN` from the edge.
pub fn hessian_gap(v: &ScalarField, a: &SymField) -> Result<f64> {
    Ok(hess(v).axpby(1.0, a, -1.0)?.max_abs_inset(GAP_MARGIN))
}

pub fn reconstruct_potential(a: &SymField) -> Result<PotentialResult> {
    let grid = *a.grid();
    let mut solves = Vec::with_capacity(5);
    let mut fs = Vec::with_capacity(2);
    let mut es = Vec::with_capacity(2);
    for row in 0..2 {
        let r = VectorField::from_components(vec![a.entry(row, 0).clone(), a.entry(row, 1).clone()])?;
        let (f, rep) = solve_with_report(&EllipticProblem::neumann(div(&r)?, EdgeData::normal_flux(&r)?))?;
        solves.push(rep);
        fs.push(f);
        let (e, rep) = solve_with_report(&EllipticProblem::dirichlet(curl2(&r)?, EdgeData::zeros(&grid)))?;
        solves.push(rep);
        es.push(e);
    }
    let g1 = fs[0].axpby(1.0, &es[1], 1.0)?;
    let g2 = fs[1].axpby(1.0, &es[0], -1.0)?;
    let curl_gap = d1(&g1, Axis::Y).axpby(1.0, &d1(&g2, Axis::X), -1.0)?.max_abs_inset(1);
    let gfield = VectorField::from_components(vec![g1, g2])?;
    let (v, rep) = solve_with_report(&EllipticProblem::neumann(div(&gfield)?, EdgeData::normal_flux(&gfield)?))?;
    solves.push(rep);
    let hessian_gap = hessian_gap(&v, a)?;
    Ok(PotentialResult {
        f: VectorField::from_components(fs)?,
        e: VectorField::from_components(es)?,
        v,
        hessian_gap,
        curl_gap,
        solves,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientHolder {
    pub profiles: Vec<HolderProfile>,
    pub verdict: HolderVerdict,
}

/// Hoelder profiles of both components of `grad v`; non-member if either is,
/// member if both are.
pub fn gradient_holder_diagnostic(v: &ScalarField, alpha: f64, scales: &[f64]) -> Result<GradientHolder> {
    let dv = grad(v);
    let size = dv.components().iter().map(|c| c.max_abs()).fold(1.0, f64::max);
    let mut profiles = Vec::with_capacity(2);
    let mut verdicts = Vec::with_capacity(2);
    for c in dv.components() {
        let p = holder_profile(c, alpha, scales)?;
        let top = p.values.iter().cloned().fold(0.0, f64::max);
        let flat = p.omega.iter().all(|&w| w <= 1e-12 * size);
        verdicts.push(if flat {
            HolderVerdict::Member
        } else {
            little_holder_verdict(&p, RELATIVE_HOLDER_THRESHOLD * top)
        });
        profiles.push(p);
    }
    let verdict = if verdicts.contains(&HolderVerdict::NonMember) {
        HolderVerdict::NonMember
    } else if verdicts.iter().all(|&v| v == HolderVerdict::Member) {
        HolderVerdict::Member
    } else {
        HolderVerdict::Inconclusive
    };
    Ok(GradientHolder { profiles, verdict })
}

/// Least-squares affine fit of `a - b`; returns the relative L2 size of what
/// the fit leaves over, measured against `b`.
pub fn relative_error_mod_affine(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    let d = a.axpby(1.0, b, -1.0)?;
    let g = *d.grid();
    let basis = [
        ScalarField::constant(g, 1.0),
        ScalarField::from_fn(g, |x, _| x)?,
        ScalarField::from_fn(g, |_, y| y)?,
    ];
    let ip = |p: &ScalarField, q: &ScalarField| p.values().iter().zip(q.values()).map(|(x, y)| x * y).sum::<f64>();
    let mut m = [[0.0; 3]; 3];
    let mut rhs = [0.0; 3];
    for r in 0..3 {
        for c in 0..3 {
            m[r][c] = ip(&basis[r], &basis[c]);
        }
        rhs[r] = ip(&basis[r], &d);
    }
    let coef = solve3(m, rhs);
    let mut resid = d;
    for (k, bf) in basis.iter().enumerate() {
        resid = resid.axpby(1.0, bf, -coef[k])?;
    }
    let bn = b.l2_norm();
    Ok(if bn > 0.0 { resid.l2_norm() / bn } else { resid.l2_norm() })
}

fn solve3(m: [[f64; 3]; 3], r: [f64; 3]) -> [f64; 3] {
    let det = |a: [[f64; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let d = det(m);
    [0, 1, 2].map(|c| {
        let mut a = m;
        for row in 0..3 {
            a[row][c] = r[row];
        }
        det(a) / d
    })
}
