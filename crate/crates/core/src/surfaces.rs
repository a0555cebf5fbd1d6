//! Analytic test immersions with exact derivatives and geometric oracles.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{FlatError, Result};
use crate::fields::{sym_spectral_norm, Grid2, ScalarField, SymField, VectorField};

/// Smallest admissible `|d1u x d2u|`.
pub const IMMERSION_FLOOR: f64 = 1e-8;
/// Default distance, in grid cells, kept from apexes and edges of regression.
pub const SINGULAR_MARGIN_CELLS: f64 = 5.0;

/// One monomial `c * x^px * y^py` of a graph height function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub px: u32,
    pub py: u32,
    pub c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurfaceSpec {
    /// `u(x) = linear * x + offset`.
    Plane { linear: [[f64; 2]; 3], offset: [f64; 3] },
    /// Unrolled circular cylinder of radius `r`, rulings along `x2`.
    Cylinder { r: f64 },
    /// Circular cone with half opening angle `opening`, developed about the
    /// planar point `apex`; the planar domain must stay right of the apex or
    /// avoid the cut ray behind it.
    Cone { apex: [f64; 2], opening: f64 },
    /// Tangent developable of the helix `(a cos s/c, a sin s/c, b s/c)`,
    /// developed onto the exterior of the circle of radius `c^2/a`.
    TangentDevelopable { a: f64, b: f64 },
    /// Graph `(x, y, z(x, y))` of a polynomial.
    Graph { terms: Vec<Monomial> },
    /// Upper hemisphere graph `z = sqrt(R^2 - |x|^2)`.
    SpherePatch { radius: f64 },
    /// Piecewise planar fold along the line through `point` with direction
    /// angle `direction`; the half plane to the left is rotated by `angle`.
    CrumpledFold { point: [f64; 2], direction: f64, angle: f64 },
}

/// `u`, `d1 u`, `d2 u` at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalFrame {
    pub u: [f64; 3],
    pub du: [[f64; 3]; 2],
}

#[inline]
pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn helix_radius(a: f64, b: f64) -> f64 {
    (a * a + b * b) / a
}

impl SurfaceSpec {
    pub fn plane() -> Self {
        SurfaceSpec::Plane { linear: [[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]], offset: [0.0; 3] }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SurfaceSpec::Plane { .. } => "plane",
            SurfaceSpec::Cylinder { .. } => "cylinder",
            SurfaceSpec::Cone { .. } => "cone",
            SurfaceSpec::TangentDevelopable { .. } => "tangent_developable",
            SurfaceSpec::Graph { .. } => "graph",
            SurfaceSpec::SpherePatch { .. } => "sphere_patch",
            SurfaceSpec::CrumpledFold { .. } => "crumpled_fold",
        }
    }

    /// Build a spec from a CLI-style surface name and `key=value` parameters.
    pub fn from_params(kind: &str, params: &[(String, f64)]) -> Result<Self> {
        let get = |k: &str, default: Option<f64>| -> Result<f64> {
            params
                .iter()
                .find(|(n, _)| n == k)
                .map(|(_, v)| *v)
                .or(default)
                .ok_or_else(|| FlatError::InvalidSurface(format!("{kind} needs parameter {k}")))
        };
        let spec = match kind {
            "plane" => SurfaceSpec::plane(),
            "cylinder" => SurfaceSpec::Cylinder { r: get("r", Some(1.0))? },
            "cone" => SurfaceSpec::Cone {
                apex: [get("apex_x", Some(-1.0))?, get("apex_y", Some(0.5))?],
                opening: get("opening", Some(PI / 6.0))?,
            },
            "tangent_developable" => SurfaceSpec::TangentDevelopable { a: get("a", Some(1.0))?, b: get("b", Some(1.0))? },
            "sphere_patch" => SurfaceSpec::SpherePatch { radius: get("R", Some(1.0))? },
            "crumpled_fold" => SurfaceSpec::CrumpledFold {
                point: [get("px", Some(0.5))?, get("py", Some(0.5))?],
                direction: get("direction", Some(PI / 2.0))?,
                angle: get("angle", Some(PI / 3.0))?,
            },
            "graph" => {
                let mut terms = Vec::new();
                for (k, v) in params {
                    let bad = || FlatError::InvalidSurface(format!("graph parameter {k} is not of the form c<px><py>"));
                    let digits = k.strip_prefix('c').ok_or_else(bad)?;
                    let mut it = digits.chars();
                    let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
                        return Err(bad());
                    };
                    let px = a.to_digit(10).ok_or_else(bad)?;
                    let py = b.to_digit(10).ok_or_else(bad)?;
                    terms.push(Monomial { px, py, c: *v });
                }
                SurfaceSpec::Graph { terms }
            }
            other => return Err(FlatError::InvalidSurface(format!("unknown surface {other:?}"))),
        };
        Ok(spec)
    }

    /// Parameter-range checks plus domain checks against `grid`.
    pub fn validate(&self, grid: &Grid2) -> Result<()> {
        let bad = |m: String| Err(FlatError::InvalidSurface(m));
        let margin = SINGULAR_MARGIN_CELLS * grid.h_max();
        let [x0, y0, x1, y1] = grid.bounds();
        let ray_hits_box = |p: [f64; 2]| x0 < p[0] && y0 <= p[1] && p[1] <= y1;
        let box_dist = |p: [f64; 2]| {
            let dx = (x0 - p[0]).max(0.0).max(p[0] - x1);
            let dy = (y0 - p[1]).max(0.0).max(p[1] - y1);
            dx.hypot(dy)
        };
        match *self {
            SurfaceSpec::Plane { linear, .. } => {
                let c = cross([linear[0][0], linear[1][0], linear[2][0]], [linear[0][1], linear[1][1], linear[2][1]]);
                if norm(c) < IMMERSION_FLOOR {
                    return bad("plane linear part has rank < 2".into());
                }
            }
            SurfaceSpec::Cylinder { r } => {
                if !(r > 0.0) {
                    return bad(format!("cylinder radius must be positive, got {r}"));
                }
            }
            SurfaceSpec::Cone { apex, opening } => {
                if !(opening > 0.0 && opening < PI / 2.0) {
                    return bad(format!("cone opening must lie in (0, pi/2), got {opening}"));
                }
                if box_dist(apex) < margin {
                    return bad(format!("domain comes within {margin} of the cone apex"));
                }
                if ray_hits_box(apex) {
                    return bad("domain crosses the cut ray behind the cone apex".into());
                }
            }
            SurfaceSpec::TangentDevelopable { a, b } => {
                if !(a > 0.0 && b.is_finite()) {
                    return bad(format!("helix needs a > 0, got a = {a}, b = {b}"));
                }
                let rr = helix_radius(a, b);
                if box_dist([0.0, 0.0]) < rr + margin {
                    return bad(format!("domain comes within {margin} of the edge of regression (radius {rr})"));
                }
                if ray_hits_box([0.0, 0.0]) {
                    return bad("domain crosses the cut ray of the development".into());
                }
            }
            SurfaceSpec::Graph { ref terms } => {
                if terms.iter().any(|t| !t.c.is_finite()) {
                    return bad("graph coefficients must be finite".into());
                }
            }
            SurfaceSpec::SpherePatch { radius } => {
                if !(radius > 0.0) {
                    return bad(format!("sphere radius must be positive, got {radius}"));
                }
                let far = [x0.abs().max(x1.abs()), y0.abs().max(y1.abs())];
                if far[0].hypot(far[1]) >= radius - margin {
                    return bad(format!("sphere window reaches the equator (radius {radius})"));
                }
            }
            SurfaceSpec::CrumpledFold { angle, .. } => {
                if !(angle > 0.0 && angle < PI) {
                    return bad(format!("fold angle must lie in (0, pi), got {angle}"));
                }
            }
        }
        Ok(())
    }

    pub fn is_c1(&self) -> bool {
        !matches!(self, SurfaceSpec::CrumpledFold { .. })
    }

    /// Whether the analytic map pulls back the Euclidean metric.
    pub fn is_isometric(&self) -> bool {
        match self {
            SurfaceSpec::Plane { linear, .. } => {
                let c0 = [linear[0][0], linear[1][0], linear[2][0]];
                let c1 = [linear[0][1], linear[1][1], linear[2][1]];
                (dot(c0, c0) - 1.0).abs() < 1e-12 && (dot(c1, c1) - 1.0).abs() < 1e-12 && dot(c0, c1).abs() < 1e-12
            }
            SurfaceSpec::Graph { terms } => terms.iter().all(|t| t.px + t.py <= 1 && (t.px + t.py == 0 || t.c == 0.0)),
            SurfaceSpec::SpherePatch { .. } => false,
            _ => true,
        }
    }

    pub fn frame(&self, x: f64, y: f64) -> LocalFrame {
        match *self {
            SurfaceSpec::Plane { linear, offset } => LocalFrame {
                u: [
                    linear[0][0] * x + linear[0][1] * y + offset[0],
                    linear[1][0] * x + linear[1][1] * y + offset[1],
                    linear[2][0] * x + linear[2][1] * y + offset[2],
                ],
                du: [[linear[0][0], linear[1][0], linear[2][0]], [linear[0][1], linear[1][1], linear[2][1]]],
            },
            SurfaceSpec::Cylinder { r } => {
                let (s, c) = (x / r).sin_cos();
                LocalFrame { u: [r * c, r * s, y], du: [[-s, c, 0.0], [0.0, 0.0, 1.0]] }
            }
            SurfaceSpec::Cone { apex, opening } => {
                let (px, py) = (x - apex[0], y - apex[1]);
                let rho = px.hypot(py);
                let phi = py.atan2(px);
                let sig = opening.sin();
                let cb = opening.cos();
                let (sp, cp) = (phi / sig).sin_cos();
                let d_rho = [sig * cp, sig * sp, cb];
                let d_phi_unit = [-sp, cp, 0.0];
                let (sf, cf) = phi.sin_cos();
                LocalFrame {
                    u: [rho * d_rho[0], rho * d_rho[1], rho * d_rho[2]],
                    du: [
                        [0, 1, 2].map(|m| d_rho[m] * cf - d_phi_unit[m] * sf),
                        [0, 1, 2].map(|m| d_rho[m] * sf + d_phi_unit[m] * cf),
                    ],
                }
            }
            SurfaceSpec::TangentDevelopable { a, b } => tangent_developable_frame(a, b, x, y),
            SurfaceSpec::Graph { ref terms } => {
                let (z, zx, zy) = poly_eval(terms, x, y);
                LocalFrame { u: [x, y, z], du: [[1.0, 0.0, zx], [0.0, 1.0, zy]] }
            }
            SurfaceSpec::SpherePatch { radius } => {
                let z = (radius * radius - x * x - y * y).sqrt();
                LocalFrame { u: [x, y, z], du: [[1.0, 0.0, -x / z], [0.0, 1.0, -y / z]] }
            }
            SurfaceSpec::CrumpledFold { point, direction, angle } => {
                let d = [direction.cos(), direction.sin()];
                let n = [-d[1], d[0]];
                let (px, py) = (x - point[0], y - point[1]);
                let t = px * d[0] + py * d[1];
                let s = px * n[0] + py * n[1];
                let d3 = [d[0], d[1], 0.0];
                let n3 = if s > 0.0 {
                    let (sa, ca) = angle.sin_cos();
                    [ca * n[0], ca * n[1], sa]
                } else {
                    [n[0], n[1], 0.0]
                };
                LocalFrame {
                    u: [0, 1, 2].map(|m| [point[0], point[1], 0.0][m] + t * d3[m] + s * n3[m]),
                    // d/dx = d * d_x(t) + n3 * d_x(s)
                    du: [
                        [0, 1, 2].map(|m| d3[m] * d[0] + n3[m] * n[0]),
                        [0, 1, 2].map(|m| d3[m] * d[1] + n3[m] * n[1]),
                    ],
                }
            }
        }
    }

    /// `[u_11, u_12, u_22]`, analytic where cheap, otherwise central differences
    /// of the analytic first derivatives.
    pub fn second_derivatives(&self, x: f64, y: f64) -> [[f64; 3]; 3] {
        match *self {
            SurfaceSpec::Plane { .. } | SurfaceSpec::CrumpledFold { .. } => [[0.0; 3]; 3],
            SurfaceSpec::Cylinder { r } => {
                let (s, c) = (x / r).sin_cos();
                [[-c / r, -s / r, 0.0], [0.0; 3], [0.0; 3]]
            }
            SurfaceSpec::Graph { ref terms } => {
                let (zxx, zxy, zyy) = poly_hessian(terms, x, y);
                [[0.0, 0.0, zxx], [0.0, 0.0, zxy], [0.0, 0.0, zyy]]
            }
            SurfaceSpec::SpherePatch { radius } => {
                let z2 = radius * radius - x * x - y * y;
                let z = z2.sqrt();
                let z3 = z2 * z;
                [
                    [0.0, 0.0, -(radius * radius - y * y) / z3],
                    [0.0, 0.0, -x * y / z3],
                    [0.0, 0.0, -(radius * radius - x * x) / z3],
                ]
            }
            _ => {
                let d = 1e-5;
                let fx = |s: f64| self.frame(x + s, y).du;
                let fy = |s: f64| self.frame(x, y + s).du;
                let (p, m) = (fx(d), fx(-d));
                let (q, w) = (fy(d), fy(-d));
                let c = |a: [f64; 3], b: [f64; 3]| [0, 1, 2].map(|k| (a[k] - b[k]) / (2.0 * d));
                let u11 = c(p[0], m[0]);
                let u22 = c(q[1], w[1]);
                let u12a = c(q[0], w[0]);
                let u12b = c(p[1], m[1]);
                [u11, [0, 1, 2].map(|k| 0.5 * (u12a[k] + u12b[k])), u22]
            }
        }
    }

    pub fn normal(&self, x: f64, y: f64) -> [f64; 3] {
        let f = self.frame(x, y);
        let c = cross(f.du[0], f.du[1]);
        let n = norm(c);
        c.map(|v| v / n)
    }

    /// `[A_11, A_12, A_22]` with `A_ij = d_ij u . n`.
    pub fn second_form(&self, x: f64, y: f64) -> [f64; 3] {
        let n = self.normal(x, y);
        self.second_derivatives(x, y).map(|d| dot(d, n))
    }

    pub fn metric(&self, x: f64, y: f64) -> [f64; 3] {
        let f = self.frame(x, y);
        [dot(f.du[0], f.du[0]), dot(f.du[0], f.du[1]), dot(f.du[1], f.du[1])]
    }

    pub fn gauss_curvature(&self, x: f64, y: f64) -> f64 {
        let a = self.second_form(x, y);
        let g = self.metric(x, y);
        (a[0] * a[2] - a[1] * a[1]) / (g[0] * g[2] - g[1] * g[1])
    }

    /// Ruling direction angle in `[0, pi)` where the analytic map has one.
    pub fn ruling_angle(&self, x: f64, y: f64) -> Option<f64> {
        let wrap = |t: f64| t.rem_euclid(PI);
        match *self {
            SurfaceSpec::Cylinder { .. } => Some(PI / 2.0),
            SurfaceSpec::Cone { apex, .. } => Some(wrap((y - apex[1]).atan2(x - apex[0]))),
            SurfaceSpec::TangentDevelopable { a, b } => {
                let rr = helix_radius(a, b);
                let t = (x * x + y * y - rr * rr).sqrt();
                let theta = y.atan2(x) - (t / rr).atan();
                Some(wrap(theta + PI / 2.0))
            }
            SurfaceSpec::CrumpledFold { direction, .. } => Some(wrap(direction)),
            _ => None,
        }
    }

    /// Scalar potential `v` with `hess v = A` where it is known in closed form.
    pub fn potential(&self, x: f64, _y: f64) -> Option<f64> {
        match *self {
            SurfaceSpec::Plane { .. } => Some(0.0),
            SurfaceSpec::Cylinder { r } => Some(-x * x / (2.0 * r)),
            _ => None,
        }
    }
}

fn tangent_developable_frame(a: f64, b: f64, x: f64, y: f64) -> LocalFrame {
    let c = (a * a + b * b).sqrt();
    let rr = c * c / a;
    let kappa = a / (c * c);
    let t = (x * x + y * y - rr * rr).sqrt();
    let s = rr * (y.atan2(x) - (t / rr).atan());
    let th = s / c;
    let (st, ct) = th.sin_cos();
    let gamma = [a * ct, a * st, b * th];
    let tan = [-a * st / c, a * ct / c, b / c];
    let nor = [-ct, -st, 0.0];
    let u = [0, 1, 2].map(|m| gamma[m] + t * tan[m]);
    // planar development: X = R e(s/R) + t e_perp(s/R)
    let (sp, cp) = (s / rr).sin_cos();
    let e = [cp, sp];
    let ep = [-sp, cp];
    let x_s = [ep[0] - t / rr * e[0], ep[1] - t / rr * e[1]];
    let x_t = ep;
    let u_s = [0, 1, 2].map(|m| tan[m] + t * kappa * nor[m]);
    let u_t = tan;
    // du = [u_s u_t] J^{-1}, J = [x_s x_t] (columns)
    let det = x_s[0] * x_t[1] - x_t[0] * x_s[1];
    let inv = [[x_t[1] / det, -x_t[0] / det], [-x_s[1] / det, x_s[0] / det]];
    let du1 = [0, 1, 2].map(|m| u_s[m] * inv[0][0] + u_t[m] * inv[1][0]);
    let du2 = [0, 1, 2].map(|m| u_s[m] * inv[0][1] + u_t[m] * inv[1][1]);
    LocalFrame { u, du: [du1, du2] }
}

fn pow(x: f64, p: u32) -> f64 {
    x.powi(p as i32)
}

fn poly_eval(terms: &[Monomial], x: f64, y: f64) -> (f64, f64, f64) {
    let mut z = 0.0;
    let mut zx = 0.0;
    let mut zy = 0.0;
    for t in terms {
        z += t.c * pow(x, t.px) * pow(y, t.py);
        if t.px > 0 {
            zx += t.c * t.px as f64 * pow(x, t.px - 1) * pow(y, t.py);
        }
        if t.py > 0 {
            zy += t.c * t.py as f64 * pow(x, t.px) * pow(y, t.py - 1);
        }
    }
    (z, zx, zy)
}

fn poly_hessian(terms: &[Monomial], x: f64, y: f64) -> (f64, f64, f64) {
    let mut h = (0.0, 0.0, 0.0);
    for t in terms {
        let (px, py) = (t.px as f64, t.py as f64);
        if t.px > 1 {
            h.0 += t.c * px * (px - 1.0) * pow(x, t.px - 2) * pow(y, t.py);
        }
        if t.px > 0 && t.py > 0 {
            h.1 += t.c * px * py * pow(x, t.px - 1) * pow(y, t.py - 1);
        }
        if t.py > 1 {
            h.2 += t.c * py * (py - 1.0) * pow(x, t.px) * pow(y, t.py - 2);
        }
    }
    h
}

/// Sampled immersion `u` with its first derivatives and immersion constant.
#[derive(Clone, Debug)]
pub struct ImmersionField {
    pub u: VectorField,
    /// `du[i]` is the three-component field `d_i u`.
    pub du: [VectorField; 2],
    /// `min |d1u x d2u|` over the nodes.
    pub c0: f64,
    /// Analytic source, when generated from the corpus.
    pub oracle: Option<SurfaceSpec>,
}

impl ImmersionField {
    pub fn from_fields(u: VectorField, du: [VectorField; 2]) -> Result<Self> {
        if u.ncomp() != 3 || du[0].ncomp() != 3 || du[1].ncomp() != 3 {
            return Err(FlatError::InvalidArgument("immersion fields need 3 components".into()));
        }
        if !u.grid().same_nodes(du[0].grid()) || !u.grid().same_nodes(du[1].grid()) {
            return Err(FlatError::GridMismatch("u and du live on different grids".into()));
        }
        let g = *u.grid();
        let mut c0 = f64::INFINITY;
        let mut worst = (0, 0);
        for j in 0..g.ny {
            for i in 0..g.nx {
                let a = [0, 1, 2].map(|m| du[0].comp(m).at(i, j));
                let b = [0, 1, 2].map(|m| du[1].comp(m).at(i, j));
                let n = norm(cross(a, b));
                if n < c0 {
                    c0 = n;
                    worst = (i, j);
                }
            }
        }
        if c0 < IMMERSION_FLOOR {
            let [x, y] = g.point(worst.0, worst.1);
            return Err(FlatError::NotImmersion { value: c0, required: IMMERSION_FLOOR, x, y });
        }
        Ok(Self { u, du, c0, oracle: None })
    }

    /// Split a six-component `[d1u, d2u]` field.
    pub fn from_stacked(u: VectorField, du: &VectorField) -> Result<Self> {
        if du.ncomp() != 6 {
            return Err(FlatError::InvalidArgument(format!("derivative field needs 6 components, got {}", du.ncomp())));
        }
        let c = du.components();
        let d1 = VectorField::from_components(c[0..3].to_vec())?;
        let d2 = VectorField::from_components(c[3..6].to_vec())?;
        Self::from_fields(u, [d1, d2])
    }

    pub fn grid(&self) -> &Grid2 {
        self.u.grid()
    }

    /// `[d1u^1, d1u^2, d1u^3, d2u^1, d2u^2, d2u^3]`
    pub fn du_stacked(&self) -> VectorField {
        VectorField::stack(&[&self.du[0], &self.du[1]]).expect("same grid")
    }

    /// Compose with the rigid motion `p -> rot p + shift`.
    pub fn rigid_motion(&self, rot: [[f64; 3]; 3], shift: [f64; 3]) -> Result<Self> {
        let apply = |f: &VectorField, with_shift: bool| -> Result<VectorField> {
            let g = *f.grid();
            let comps = (0..3)
                .map(|r| {
                    let vals = (0..g.len())
                        .map(|k| {
                            (0..3).map(|m| rot[r][m] * f.comp(m).values()[k]).sum::<f64>()
                                + if with_shift { shift[r] } else { 0.0 }
                        })
                        .collect();
                    ScalarField::new(g, vals)
                })
                .collect::<Result<Vec<_>>>()?;
            VectorField::from_components(comps)
        };
        let mut out = Self::from_fields(apply(&self.u, true)?, [apply(&self.du[0], false)?, apply(&self.du[1], false)?])?;
        out.oracle = None;
        Ok(out)
    }
}

/// Sample `spec` on `grid`; derivatives come from the analytic formulas.
pub fn generate(spec: &SurfaceSpec, grid: &Grid2) -> Result<ImmersionField> {
    spec.validate(grid)?;
    let u = VectorField::from_fn(*grid, 3, |x, y, o| o.copy_from_slice(&spec.frame(x, y).u))?;
    let d1 = VectorField::from_fn(*grid, 3, |x, y, o| o.copy_from_slice(&spec.frame(x, y).du[0]))?;
    let d2 = VectorField::from_fn(*grid, 3, |x, y, o| o.copy_from_slice(&spec.frame(x, y).du[1]))?;
    let mut field = ImmersionField::from_fields(u, [d1, d2])?;
    field.oracle = Some(spec.clone());
    Ok(field)
}

/// `g_ij = d_i u . d_j u` from a pair of derivative fields.
pub fn metric_from_derivatives(du: &[VectorField; 2]) -> SymField {
    let g = *du[0].grid();
    let entry = |a: usize, b: usize| {
        let vals = (0..g.len())
            .map(|k| (0..3).map(|m| du[a].comp(m).values()[k] * du[b].comp(m).values()[k]).sum())
            .collect();
        ScalarField::new(g, vals).expect("finite products")
    };
    SymField { xx: entry(0, 0), xy: entry(0, 1), yy: entry(1, 1) }
}

pub fn pullback_metric(u: &ImmersionField) -> SymField {
    metric_from_derivatives(&u.du)
}

/// Largest spectral norm of `g - E_2` over the nodes.
pub fn isometry_defect(u: &ImmersionField) -> f64 {
    let g = pullback_metric(u);
    let grid = *g.grid();
    (0..grid.len())
        .map(|k| {
            let m = [g.xx.values()[k] - 1.0, g.xy.values()[k], g.yy.values()[k] - 1.0];
            sym_spectral_norm(m)
        })
        .fold(0.0, f64::max)
}
