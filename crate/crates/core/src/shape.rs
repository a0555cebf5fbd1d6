//! Mollified normals, second fundamental form, Christoffel symbols and the
//! residual experiments built on them.

use serde::{Deserialize, Serialize};

use crate::error::{FlatError, Result};
use crate::fields::{d1, sym_eigenvalues, Axis, Battery, Grid2, ScalarField, SymField, TestFunction, VectorField};
use crate::mollify::{eroded_grid, fit_rate, mollify_vector, RateFit, ScaleLadder};
use crate::surfaces::{cross, metric_from_derivatives, isometry_defect, norm, ImmersionField};

/// Nodes dropped from each edge of the eroded grid before taking sup-norms.
pub const SUP_MARGIN: usize = 2;
pub const DEFAULT_ISOMETRY_TOLERANCE: f64 = 1e-8;
pub const PD_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormSource {
    /// `d_ij u_eps . N_eps`
    Hessian,
    /// `-d_i u_eps . d_j N_eps`, symmetrized.
    NormalDerivative,
}

#[derive(Clone, Debug)]
pub struct FormField {
    pub a: SymField,
    pub eps: f64,
    pub source: FormSource,
    /// Sup over the inset nodes of the gap between the two defining formulas.
    pub discrepancy: f64,
}

/// `gamma[i][j + k]` holds `Gamma^i_{jk}`; storage makes the lower symmetry exact.
#[derive(Clone, Debug)]
pub struct ChristoffelField {
    pub gamma: [[ScalarField; 3]; 2],
    pub metric: SymField,
}

impl ChristoffelField {
    pub fn get(&self, i: usize, j: usize, k: usize) -> &ScalarField {
        &self.gamma[i][j + k]
    }

    pub fn max_abs_inset(&self, margin: usize) -> f64 {
        self.gamma.iter().flatten().map(|f| f.max_abs_inset(margin)).fold(0.0, f64::max)
    }
}

/// `(d1u x d2u) / |d1u x d2u|`, failing where the length drops below `floor`.
pub fn normal_from_derivatives(du: &[VectorField; 2], floor: f64) -> Result<VectorField> {
    let g = *du[0].grid();
    let mut comps = vec![Vec::with_capacity(g.len()); 3];
    for j in 0..g.ny {
        for i in 0..g.nx {
            let a = [0, 1, 2].map(|m| du[0].comp(m).at(i, j));
            let b = [0, 1, 2].map(|m| du[1].comp(m).at(i, j));
            let c = cross(a, b);
            let n = norm(c);
            if !(n >= floor) {
                let [x, y] = g.point(i, j);
                return Err(FlatError::NotImmersion { value: n, required: floor, x, y });
            }
            for m in 0..3 {
                comps[m].push(c[m] / n);
            }
        }
    }
    VectorField::from_components(comps.into_iter().map(|v| ScalarField::new(g, v)).collect::<Result<_>>()?)
}

pub fn unit_normal(u: &ImmersionField) -> Result<VectorField> {
    normal_from_derivatives(&u.du, 0.5 * u.c0)
}

/// `u_eps`, its derivatives, normal and metric on the eroded grid.
#[derive(Clone, Debug)]
pub struct MollifiedImmersion {
    pub eps: f64,
    pub u: VectorField,
    pub du: [VectorField; 2],
    pub normal: VectorField,
    pub metric: SymField,
}

/// Mollify only the derivatives: enough for the metric experiments.
pub fn mollified_derivatives(u: &ImmersionField, eps: f64) -> Result<[VectorField; 2]> {
    Ok([mollify_vector(&u.du[0], eps)?, mollify_vector(&u.du[1], eps)?])
}

impl MollifiedImmersion {
    pub fn new(u: &ImmersionField, eps: f64) -> Result<Self> {
        let du = mollified_derivatives(u, eps)?;
        let normal = normal_from_derivatives(&du, 0.5 * u.c0)?;
        let metric = metric_from_derivatives(&du);
        Ok(Self { eps, u: mollify_vector(&u.u, eps)?, du, normal, metric })
    }

    pub fn grid(&self) -> &Grid2 {
        self.u.grid()
    }

    /// Hessians of the three components of `u_eps` as stencil derivatives of `(Du)_eps`.
    pub fn second_derivatives(&self) -> [SymField; 3] {
        [0, 1, 2].map(|m| {
            let (ux, uy) = (self.du[0].comp(m), self.du[1].comp(m));
            let xy = d1(ux, Axis::Y).zip_map(&d1(uy, Axis::X), |p, q| 0.5 * (p + q)).expect("same grid");
            SymField { xx: d1(ux, Axis::X), xy, yy: d1(uy, Axis::Y) }
        })
    }

    pub fn second_form(&self) -> FormField {
        let h = self.second_derivatives();
        self.form_from_hessians(&h)
    }

    fn form_from_hessians(&self, h: &[SymField; 3]) -> FormField {
        let g = *self.grid();
        let n = &self.normal;
        let contract = |a: usize, b: usize| {
            let vals = (0..g.len())
                .map(|k| (0..3).map(|m| h[m].entry(a, b).values()[k] * n.comp(m).values()[k]).sum())
                .collect();
            ScalarField::new(g, vals).expect("finite contraction")
        };
        let a = SymField { xx: contract(0, 0), xy: contract(0, 1), yy: contract(1, 1) };
        let alt = self.normal_derivative_entries();
        let mut discrepancy = 0.0f64;
        for (p, q) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let gap = a.entry(p, q).axpby(1.0, &alt[p][q], -1.0).expect("same grid");
            discrepancy = discrepancy.max(gap.max_abs_inset(SUP_MARGIN));
        }
        FormField { a, eps: self.eps, source: FormSource::Hessian, discrepancy }
    }

    /// `-d_i u_eps . d_j N_eps` for all four index pairs.
    fn normal_derivative_entries(&self) -> [[ScalarField; 2]; 2] {
        let g = *self.grid();
        let dn: [[ScalarField; 2]; 3] = [0, 1, 2].map(|m| [Axis::X, Axis::Y].map(|ax| d1(self.normal.comp(m), ax)));
        let entry = |a: usize, b: usize| {
            let vals = (0..g.len())
                .map(|k| -(0..3).map(|m| self.du[a].comp(m).values()[k] * dn[m][b].values()[k]).sum::<f64>())
                .collect();
            ScalarField::new(g, vals).expect("finite contraction")
        };
        [[entry(0, 0), entry(0, 1)], [entry(1, 0), entry(1, 1)]]
    }

    pub fn alternative_form(&self) -> FormField {
        let hform = self.second_form();
        let e = self.normal_derivative_entries();
        let xy = e[0][1].zip_map(&e[1][0], |p, q| 0.5 * (p + q)).expect("same grid");
        let [[xx, _], [_, yy]] = e;
        FormField {
            a: SymField { xx, xy, yy },
            eps: self.eps,
            source: FormSource::NormalDerivative,
            discrepancy: hform.discrepancy,
        }
    }

    pub fn christoffel(&self) -> Result<ChristoffelField> {
        christoffel(&self.metric)
    }

    pub fn codazzi(&self) -> Result<CodazziResidual> {
        let form = self.second_form();
        let gamma = self.christoffel()?;
        codazzi_from(&form.a, &gamma)
    }

    pub fn gauss_pairing(&self, psi: &TestFunction) -> Result<f64> {
        crate::fields::pair(&self.second_form().a.det(), psi)
    }

    pub fn gauss_identity_residual(&self) -> Result<f64> {
        let h = self.second_derivatives();
        let form = self.form_from_hessians(&h);
        let gamma = self.christoffel()?;
        let g = *self.grid();
        let mut worst = 0.0f64;
        for j in SUP_MARGIN..g.ny - SUP_MARGIN {
            for i in SUP_MARGIN..g.nx - SUP_MARGIN {
                for (a, b) in [(0, 0), (0, 1), (1, 1)] {
                    let aij = form.a.entry(a, b).at(i, j);
                    let g0 = gamma.get(0, a, b).at(i, j);
                    let g1 = gamma.get(1, a, b).at(i, j);
                    for m in 0..3 {
                        let r = h[m].entry(a, b).at(i, j)
                            - g0 * self.du[0].comp(m).at(i, j)
                            - g1 * self.du[1].comp(m).at(i, j)
                            - aij * self.normal.comp(m).at(i, j);
                        worst = worst.max(r.abs());
                    }
                }
            }
        }
        Ok(worst)
    }
}

pub fn second_form(u: &ImmersionField, eps: f64) -> Result<FormField> {
    Ok(MollifiedImmersion::new(u, eps)?.second_form())
}

/// `Gamma^i_{jk} = 1/2 g^{im} (d_k g_jm + d_j g_km - d_m g_jk)` with stencil
/// derivatives and cofactor inversion.
pub fn christoffel(g: &SymField) -> Result<ChristoffelField> {
    let grid = *g.grid();
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let (lo, _) = sym_eigenvalues(g.at(i, j));
            if !(lo >= PD_FLOOR) {
                let [x, y] = grid.point(i, j);
                return Err(FlatError::NotPositiveDefinite { x, y, min_eig: lo });
            }
        }
    }
    // dg[m][j + k] = d_m g_jk
    let dg: [[ScalarField; 3]; 2] = [Axis::X, Axis::Y].map(|ax| [d1(&g.xx, ax), d1(&g.xy, ax), d1(&g.yy, ax)]);
    let mut out: [[Vec<f64>; 3]; 2] = Default::default();
    for k in 0..grid.len() {
        let (a, b, c) = (g.xx.values()[k], g.xy.values()[k], g.yy.values()[k]);
        let det = a * c - b * b;
        let inv = [[c / det, -b / det], [-b / det, a / det]];
        let d = |m: usize, p: usize, q: usize| dg[m][p + q].values()[k];
        for (p, q) in [(0, 0), (0, 1), (1, 1)] {
            // lowered symbol Gamma_{m,pq}
            let low = [0, 1].map(|m| 0.5 * (d(q, p, m) + d(p, q, m) - d(m, p, q)));
            for i in 0..2 {
                out[i][p + q].push(inv[i][0] * low[0] + inv[i][1] * low[1]);
            }
        }
    }
    let gamma = out.map(|row| row.map(|v| ScalarField::new(grid, v).expect("finite symbols")));
    Ok(ChristoffelField { gamma, metric: g.clone() })
}

#[derive(Clone, Debug)]
pub struct CodazziResidual {
    /// Components `r_1`, `r_2`.
    pub field: VectorField,
    /// Sup over nodes `SUP_MARGIN` away from the edge.
    pub sup: f64,
}

pub fn codazzi_from(a: &SymField, gamma: &ChristoffelField) -> Result<CodazziResidual> {
    let grid = *a.grid();
    let (a11, a12, a22) = (&a.xx, &a.xy, &a.yy);
    let d2a11 = d1(a11, Axis::Y);
    let d1a12 = d1(a12, Axis::X);
    let d2a12 = d1(a12, Axis::Y);
    let d1a22 = d1(a22, Axis::X);
    let gm = |i, j, k| gamma.get(i, j, k).values();
    let (g1_11, g1_12, g1_22) = (gm(0, 0, 0), gm(0, 0, 1), gm(0, 1, 1));
    let (g2_11, g2_12, g2_22) = (gm(1, 0, 0), gm(1, 0, 1), gm(1, 1, 1));
    let mut r1 = Vec::with_capacity(grid.len());
    let mut r2 = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let (p, q, s) = (a11.values()[k], a12.values()[k], a22.values()[k]);
        r1.push(
            d2a11.values()[k] - d1a12.values()[k] - (p * g1_12[k] + q * (g2_12[k] - g1_11[k]) - s * g2_11[k]),
        );
        r2.push(
            d2a12.values()[k] - d1a22.values()[k] - (p * g1_22[k] + q * (g2_22[k] - g1_12[k]) - s * g2_12[k]),
        );
    }
    let field = VectorField::from_components(vec![ScalarField::new(grid, r1)?, ScalarField::new(grid, r2)?])?;
    let sup = field.comp(0).max_abs_inset(SUP_MARGIN).max(field.comp(1).max_abs_inset(SUP_MARGIN));
    Ok(CodazziResidual { field, sup })
}

pub fn codazzi_residual(u: &ImmersionField, eps: f64) -> Result<CodazziResidual> {
    MollifiedImmersion::new(u, eps)?.codazzi()
}

/// `pair(det A_eps, psi)`.
pub fn gauss_pairing(u: &ImmersionField, eps: f64, psi: &TestFunction) -> Result<f64> {
    MollifiedImmersion::new(u, eps)?.gauss_pairing(psi)
}

pub fn gauss_identity_residual(u: &ImmersionField, eps: f64) -> Result<f64> {
    MollifiedImmersion::new(u, eps)?.gauss_identity_residual()
}

/// Rates of `g_eps - E_2` in the C1 norm and in the sup norm alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricDeviation {
    pub c1: RateFit,
    pub c0: RateFit,
}

/// `(C0, C1)` size of `g - E_2` on the inset nodes.
pub fn metric_gap(g: &SymField) -> (f64, f64) {
    let dev = [g.xx.map(|v| v - 1.0), g.xy.clone(), g.yy.map(|v| v - 1.0)];
    let c0 = dev.iter().map(|f| f.max_abs_inset(SUP_MARGIN)).fold(0.0, f64::max);
    let slope = dev
        .iter()
        .flat_map(|f| [Axis::X, Axis::Y].map(|ax| d1(f, ax).max_abs_inset(SUP_MARGIN)))
        .fold(0.0, f64::max);
    (c0, c0 + slope)
}

pub fn metric_deviation(u: &ImmersionField, ladder: &ScaleLadder) -> Result<MetricDeviation> {
    metric_deviation_with(u, ladder, DEFAULT_ISOMETRY_TOLERANCE)
}

pub fn metric_deviation_with(u: &ImmersionField, ladder: &ScaleLadder, tolerance: f64) -> Result<MetricDeviation> {
    let defect = isometry_defect(u);
    if !(defect <= tolerance) {
        return Err(FlatError::NotIsometric { defect, tolerance });
    }
    ladder.validate(u.grid())?;
    let scales = ladder.scales();
    let mut c0 = Vec::with_capacity(scales.len());
    let mut c1 = Vec::with_capacity(scales.len());
    for &eps in &scales {
        let du = mollified_derivatives(u, eps)?;
        let (a, b) = metric_gap(&metric_from_derivatives(&du));
        log::debug!("metric deviation at eps={eps}: C0 {a:e}, C1 {b:e}");
        c0.push(a);
        c1.push(b);
    }
    Ok(MetricDeviation { c1: fit_rate(&scales, &c1)?, c0: fit_rate(&scales, &c0)? })
}

/// Rate of `|N_eps - n|` on the inset nodes of each eroded grid.
pub fn normal_deviation(u: &ImmersionField, ladder: &ScaleLadder) -> Result<RateFit> {
    ladder.validate(u.grid())?;
    let n = unit_normal(u)?;
    let scales = ladder.scales();
    let mut values = Vec::with_capacity(scales.len());
    for &eps in &scales {
        let du = mollified_derivatives(u, eps)?;
        let ne = normal_from_derivatives(&du, 0.5 * u.c0)?;
        let nr = n.restrict(ne.grid())?;
        let gap = (0..3)
            .map(|m| ne.comp(m).axpby(1.0, nr.comp(m), -1.0).map(|f| f.max_abs_inset(SUP_MARGIN)))
            .collect::<Result<Vec<_>>>()?;
        values.push(gap.into_iter().fold(0.0, f64::max));
    }
    fit_rate(&scales, &values)
}

/// One row of the residual sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub eps: f64,
    pub metric_dev_c1: f64,
    pub codazzi_sup: f64,
    /// `max |pair(det A_eps, psi)| / |psi|_{W^{1,1}}` over the battery.
    pub gauss_pairing_max_over_battery: f64,
    pub gauss_identity_sup: f64,
}

/// Battery of test functions fitted inside the eroded grid at `eps`.
pub fn battery_at(grid: &Grid2, eps: f64) -> Result<(Grid2, Battery)> {
    let ge = eroded_grid(grid, eps)?;
    let battery = Battery::for_grid(&ge, SUP_MARGIN + 1)?;
    Ok((ge, battery))
}

pub fn residual_sweep(u: &ImmersionField, ladder: &ScaleLadder) -> Result<Vec<ResidualRow>> {
    ladder.validate(u.grid())?;
    ladder
        .scales()
        .into_iter()
        .map(|eps| {
            let m = MollifiedImmersion::new(u, eps)?;
            let form = m.second_form();
            let gamma = m.christoffel()?;
            let codazzi = codazzi_from(&form.a, &gamma)?;
            let det = form.a.det();
            let (_, battery) = battery_at(u.grid(), eps)?;
            let mut gp = 0.0f64;
            for psi in &battery.members {
                let v = crate::fields::pair(&det, psi)?;
                gp = gp.max(v.abs() / psi.w11_norm(m.grid()));
            }
            Ok(ResidualRow {
                eps,
                metric_dev_c1: metric_gap(&m.metric).1,
                codazzi_sup: codazzi.sup,
                gauss_pairing_max_over_battery: gp,
                gauss_identity_sup: m.gauss_identity_residual()?,
            })
        })
        .collect()
}
