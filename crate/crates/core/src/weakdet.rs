//! Very weak Hessian determinant pairings and Brouwer degree by boundary winding.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FlatError, Result};
use crate::fields::{grad, Grid2, ScalarField, TestFunction, VectorField};
use crate::mollify::mollify_vector;
use crate::surfaces::ImmersionField;

/// Cells kept between a test function's support and the grid edge.
pub const STENCIL_MARGIN_CELLS: usize = 2;
/// Validity factor between boundary margin and image sample spacing.
pub const MARGIN_FACTOR: f64 = 3.0;
/// Largest linear subdivision of a grid edge when refining boundary traces.
pub const MAX_REFINE: usize = 64;
pub const DEFAULT_DELTAS: [f64; 3] = [0.2, 0.1, 0.05];
pub const SCAN_SEED: u64 = 0xdec0_de11;
const DEGENERATE_DIAMETER: f64 = 1e-12;

/// `-1/2 int [(d2v)^2 psi_11 + (d1v)^2 psi_22 - 2 d1v d2v psi_12]`.
pub fn ma_pairing(v: &ScalarField, psi: &TestFunction) -> Result<f64> {
    let g = v.grid();
    psi.check_support_with_margin(g, STENCIL_MARGIN_CELLS)?;
    let dv = grad(v);
    let (a, b) = (dv.comp(0), dv.comp(1));
    let s = psi.integrate(g, |i, j, x, y| {
        let h = psi.hessian(x, y);
        let (p, q) = (a.at(i, j), b.at(i, j));
        q * q * h[0] + p * p * h[2] - 2.0 * p * q * h[1]
    });
    Ok(-0.5 * s)
}

/// Node-index rectangle `[i0, i1] x [j0, j1]`, inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRect {
    pub i0: usize,
    pub j0: usize,
    pub i1: usize,
    pub j1: usize,
}

impl NodeRect {
    pub fn full(grid: &Grid2) -> Self {
        Self { i0: 0, j0: 0, i1: grid.nx - 1, j1: grid.ny - 1 }
    }

    /// Drop `m` nodes from every side.
    pub fn inset(&self, m: usize) -> Result<Self> {
        if self.i1 < self.i0 + 2 * m + 1 || self.j1 < self.j0 + 2 * m + 1 {
            return Err(FlatError::InvalidArgument(format!("rectangle {self:?} too small to inset by {m}")));
        }
        Ok(Self { i0: self.i0 + m, j0: self.j0 + m, i1: self.i1 - m, j1: self.j1 - m })
    }

    fn check(&self, grid: &Grid2) -> Result<()> {
        if self.i0 >= self.i1 || self.j0 >= self.j1 || self.i1 >= grid.nx || self.j1 >= grid.ny {
            return Err(FlatError::InvalidArgument(format!("rectangle {self:?} does not fit the grid")));
        }
        Ok(())
    }

    /// Boundary nodes, counterclockwise from `(i0, j0)`, not closed.
    pub fn boundary_nodes(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        out.extend((self.i0..self.i1).map(|i| (i, self.j0)));
        out.extend((self.j0..self.j1).map(|j| (self.i1, j)));
        out.extend((self.i0 + 1..=self.i1).rev().map(|i| (i, self.j1)));
        out.extend((self.j0 + 1..=self.j1).rev().map(|j| (self.i0, j)));
        out
    }
}

/// Two-component map sampled on a grid.
#[derive(Clone, Debug)]
pub struct PlanarMap {
    pub field: VectorField,
}

impl PlanarMap {
    pub fn new(field: VectorField) -> Result<Self> {
        if field.ncomp() != 2 {
            return Err(FlatError::InvalidArgument(format!("planar map needs 2 components, got {}", field.ncomp())));
        }
        Ok(Self { field })
    }

    pub fn gradient(v: &ScalarField) -> Self {
        Self { field: grad(v) }
    }

    pub fn grid(&self) -> &Grid2 {
        self.field.grid()
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> [f64; 2] {
        [self.field.comp(0).at(i, j), self.field.comp(1).at(i, j)]
    }

    /// Closed image trace of the rectangle boundary, each grid edge split into
    /// `refine` pieces (exact for the bilinear interpolant along grid lines).
    pub fn boundary_trace(&self, rect: &NodeRect, refine: usize) -> Vec<[f64; 2]> {
        let nodes = rect.boundary_nodes();
        let refine = refine.max(1);
        let mut out = Vec::with_capacity(nodes.len() * refine + 1);
        for k in 0..nodes.len() {
            let a = self.at(nodes[k].0, nodes[k].1);
            let (i, j) = nodes[(k + 1) % nodes.len()];
            let b = self.at(i, j);
            for s in 0..refine {
                let t = s as f64 / refine as f64;
                out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            }
        }
        out.push(out[0]);
        out
    }

    /// Bounding box `[x0, y0, x1, y1]` of the image of the rectangle's nodes.
    pub fn image_bbox(&self, rect: &NodeRect) -> [f64; 4] {
        let mut bb = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for j in rect.j0..=rect.j1 {
            for i in rect.i0..=rect.i1 {
                let p = self.at(i, j);
                bb = [bb[0].min(p[0]), bb[1].min(p[1]), bb[2].max(p[0]), bb[3].max(p[1])];
            }
        }
        bb
    }
}

/// `F_delta(x) = grad v(x) + delta (-x2, x1)`.
pub fn perturbed_map(v: &ScalarField, delta: f64) -> Result<PlanarMap> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(FlatError::InvalidArgument(format!("delta must be nonnegative, got {delta}")));
    }
    let dv = grad(v);
    let g = *v.grid();
    let p = ScalarField::from_fn(g, |_, y| -delta * y)?.axpby(1.0, dv.comp(0), 1.0)?;
    let q = ScalarField::from_fn(g, |x, _| delta * x)?.axpby(1.0, dv.comp(1), 1.0)?;
    PlanarMap::new(VectorField::from_components(vec![p, q])?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeReport {
    pub y: [f64; 2],
    /// Present only when `valid`.
    pub degree: Option<i64>,
    /// Distance from `y` to the boundary image polygon.
    pub margin: f64,
    /// Largest distance between consecutive boundary image samples.
    pub spacing: f64,
    pub valid: bool,
}

fn seg_dist(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let l2 = dx * dx + dy * dy;
    let t = if l2 > 0.0 { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / l2).clamp(0.0, 1.0) } else { 0.0 };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

fn margin_and_spacing(trace: &[[f64; 2]], y: [f64; 2]) -> (f64, f64) {
    let mut margin = f64::INFINITY;
    let mut spacing = 0.0f64;
    for w in trace.windows(2) {
        margin = margin.min(seg_dist(y, w[0], w[1]));
        spacing = spacing.max((w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]));
    }
    (margin, spacing)
}

/// Winding number of a closed polyline of image samples about `y`.
pub fn winding_degree(trace: &[[f64; 2]], y: [f64; 2]) -> Result<DegreeReport> {
    if trace.len() < 4 {
        return Err(FlatError::InvalidArgument("boundary trace needs at least 3 distinct samples".into()));
    }
    let (first, last) = (trace[0], trace[trace.len() - 1]);
    if first != last {
        return Err(FlatError::InvalidArgument("boundary trace is not closed".into()));
    }
    let (margin, spacing) = margin_and_spacing(trace, y);
    let valid = margin > MARGIN_FACTOR * spacing;
    let degree = valid.then(|| {
        let mut total = 0.0;
        for w in trace.windows(2) {
            let a = [w[0][0] - y[0], w[0][1] - y[1]];
            let b = [w[1][0] - y[0], w[1][1] - y[1]];
            total += (a[0] * b[1] - a[1] * b[0]).atan2(a[0] * b[0] + a[1] * b[1]);
        }
        (total / (2.0 * PI)).round() as i64
    });
    Ok(DegreeReport { y, degree, margin, spacing, valid })
}

/// Degree over the domain polyline `boundary` (closed), with the map evaluated
/// by bilinear interpolation.
pub fn brouwer_degree(map: &PlanarMap, boundary: &[[f64; 2]], y: [f64; 2]) -> Result<DegreeReport> {
    let mut images = Vec::with_capacity(boundary.len());
    let mut buf = [0.0; 2];
    for &p in boundary {
        if !map.field.interpolate_into(p[0], p[1], &mut buf) {
            return Err(FlatError::InvalidArgument(format!("boundary point {p:?} lies outside the map's grid")));
        }
        images.push(buf);
    }
    winding_degree(&images, y)
}

/// Degree over a node rectangle, refining the boundary trace along grid edges
/// until the sample spacing clears the margin test or `MAX_REFINE` is reached.
pub fn degree_on_rect(map: &PlanarMap, rect: &NodeRect, y: [f64; 2]) -> Result<DegreeReport> {
    rect.check(map.grid())?;
    let base = map.boundary_trace(rect, 1);
    let (margin, spacing) = margin_and_spacing(&base, y);
    let need = if margin > 0.0 { (MARGIN_FACTOR * spacing / margin).floor() as usize + 1 } else { usize::MAX };
    let refine = need.clamp(1, MAX_REFINE);
    if refine == 1 {
        return winding_degree(&base, y);
    }
    winding_degree(&map.boundary_trace(rect, refine), y)
}

/// Closed circle polyline with `n` segments.
pub fn circle_boundary(center: [f64; 2], radius: f64, n: usize) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = (0..n)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / n as f64;
            [center[0] + radius * t.cos(), center[1] + radius * t.sin()]
        })
        .collect();
    out.push(out[0]);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub y: [f64; 2],
    pub degree: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormulaSummary {
    /// `None` for the `grad v` formula.
    pub delta: Option<f64>,
    pub pass: usize,
    pub fail: usize,
    pub invalid: usize,
    pub witnesses: Vec<Witness>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeScan {
    /// `deg(grad v, U, y) = 0` for `y` off `grad v(dU)`.
    pub gradient: FormulaSummary,
    /// `deg(F_delta, U, y) >= 1` for `y` in `F_delta(U)`, one entry per delta.
    pub perturbed: Vec<FormulaSummary>,
    /// The image of `grad v` is a single point.
    pub degenerate_image: bool,
}

impl DegreeScan {
    pub fn total_valid(&self) -> usize {
        std::iter::once(&self.gradient).chain(&self.perturbed).map(|s| s.pass + s.fail).sum()
    }

    pub fn all_invalid(&self) -> bool {
        self.total_valid() == 0
    }

    pub fn fails(&self) -> usize {
        std::iter::once(&self.gradient).chain(&self.perturbed).map(|s| s.fail).sum()
    }
}

/// Evaluate candidates in parallel, keep the first `samples` valid ones in
/// candidate order.
fn run_queries(
    map: &PlanarMap,
    rect: &NodeRect,
    candidates: Vec<[f64; 2]>,
    samples: usize,
    delta: Option<f64>,
    pass: impl Fn(i64) -> bool + Sync,
) -> Result<FormulaSummary> {
    let reports = candidates.par_iter().map(|&y| degree_on_rect(map, rect, y)).collect::<Result<Vec<_>>>()?;
    let mut s = FormulaSummary { delta, pass: 0, fail: 0, invalid: 0, witnesses: vec![] };
    for r in reports {
        if s.pass + s.fail == samples {
            break;
        }
        match r.degree {
            Some(d) if pass(d) => s.pass += 1,
            Some(d) => {
                s.fail += 1;
                s.witnesses.push(Witness { y: r.y, degree: d });
            }
            None => s.invalid += 1,
        }
    }
    Ok(s)
}

/// Check both degree formulas on `rect` with up to `samples` valid queries each.
pub fn degree_scan(v: &ScalarField, rect: &NodeRect, deltas: &[f64], samples: usize, seed: u64) -> Result<DegreeScan> {
    rect.check(v.grid())?;
    let attempts = 20 * samples.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let map = PlanarMap::gradient(v);
    let bb = map.image_bbox(rect);
    let diam = (bb[2] - bb[0]).hypot(bb[3] - bb[1]);
    let degenerate_image = diam <= DEGENERATE_DIAMETER;
    let gradient = if degenerate_image {
        FormulaSummary { delta: None, pass: 0, fail: 0, invalid: attempts, witnesses: vec![] }
    } else {
        let pad = 0.1 * diam;
        let candidates = (0..attempts)
            .map(|_| [rng.gen_range(bb[0] - pad..=bb[2] + pad), rng.gen_range(bb[1] - pad..=bb[3] + pad)])
            .collect();
        run_queries(&map, rect, candidates, samples, None, |d| d == 0)?
    };
    let mi = ((rect.i1 - rect.i0) / 10).max(1);
    let mj = ((rect.j1 - rect.j0) / 10).max(1);
    let mut perturbed = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let f = perturbed_map(v, delta)?;
        let candidates = (0..attempts)
            .map(|_| f.at(rng.gen_range(rect.i0 + mi..=rect.i1 - mi), rng.gen_range(rect.j0 + mj..=rect.j1 - mj)))
            .collect();
        perturbed.push(run_queries(&f, rect, candidates, samples, Some(delta), |d| d >= 1)?);
    }
    Ok(DegreeScan { gradient, perturbed, degenerate_image })
}

/// `ma_pairing` of each mollified component `u_eps^m`.
pub fn component_pairing(u: &ImmersionField, eps: f64, psi: &TestFunction) -> Result<[f64; 3]> {
    let ue = mollify_vector(&u.u, eps)?;
    Ok([ma_pairing(ue.comp(0), psi)?, ma_pairing(ue.comp(1), psi)?, ma_pairing(ue.comp(2), psi)?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{hess, pair, BATTERY_ORDER};
    use crate::surfaces::{generate, SurfaceSpec};
    use proptest::prelude::*;

    fn sq(n: usize) -> Grid2 {
        Grid2::from_bounds(-1.0, -1.0, 1.0, 1.0, n, n).unwrap()
    }

    fn psi() -> TestFunction {
        TestFunction::new([0.1, -0.05], 0.6, BATTERY_ORDER).unwrap()
    }

    #[test]
    fn ma_pairing_smooth_identity() {
        let g = sq(257);
        let p = psi();
        let one = pair(&ScalarField::constant(g, 1.0), &p).unwrap();
        let dev = ScalarField::from_fn(g, |x, _| x * x).unwrap();
        assert!(ma_pairing(&dev, &p).unwrap().abs() < 1e-10);
        let bowl = ScalarField::from_fn(g, |x, y| x * x + y * y).unwrap();
        assert!((ma_pairing(&bowl, &p).unwrap() / (4.0 * one) - 1.0).abs() < 1e-6);
        let saddle = ScalarField::from_fn(g, |x, y| x * y).unwrap();
        assert!((ma_pairing(&saddle, &p).unwrap() / -one - 1.0).abs() < 1e-6);
        // non-polynomial
        let w = ScalarField::from_fn(g, |x, y| (x + 0.3 * y).sin() * (0.7 * y).exp()).unwrap();
        let direct = pair(&hess(&w).det(), &p).unwrap();
        let weak = ma_pairing(&w, &p).unwrap();
        assert!((weak - direct).abs() <= 1e-6 * direct.abs().max(1.0), "{weak} {direct}");
    }

    #[test]
    fn ma_pairing_rejects_tight_support() {
        let g = sq(65);
        let p = TestFunction::new([0.0, 0.0], 0.99, BATTERY_ORDER).unwrap();
        assert!(matches!(ma_pairing(&ScalarField::zeros(g), &p), Err(FlatError::SupportViolation { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn ma_pairing_ignores_affine_terms(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0) {
            let g = sq(257);
            let p = psi();
            let w = ScalarField::from_fn(g, |x, y| x * x * y + 0.5 * y * y).unwrap();
            let shifted = ScalarField::from_fn(g, |x, y| x * x * y + 0.5 * y * y + a * x + b * y + c).unwrap();
            let d = ma_pairing(&w, &p).unwrap() - ma_pairing(&shifted, &p).unwrap();
            prop_assert!(d.abs() < 1e-10, "{}", d);
        }
    }

    #[test]
    fn degree_examples() {
        let g = sq(129);
        let id = PlanarMap::new(VectorField::from_fn(g, 2, |x, y, o| o.copy_from_slice(&[x, y])).unwrap()).unwrap();
        let circle = circle_boundary([0.0, 0.0], 0.9, 400);
        assert_eq!(brouwer_degree(&id, &circle, [0.0, 0.0]).unwrap().degree, Some(1));
        let z2 = PlanarMap::new(VectorField::from_fn(g, 2, |x, y, o| o.copy_from_slice(&[x * x - y * y, 2.0 * x * y])).unwrap())
            .unwrap();
        let r = brouwer_degree(&z2, &circle_boundary([0.0, 0.0], 1.0, 800), [0.1, 0.0]).unwrap();
        assert_eq!(r.degree, Some(2));
        let v = ScalarField::from_fn(g, |x, _| x * x).unwrap();
        let dv = PlanarMap::gradient(&v);
        let r = degree_on_rect(&dv, &NodeRect::full(&g), [0.5, 0.3]).unwrap();
        assert_eq!(r.degree, Some(0));
        // too close to the image: reported invalid
        let r = winding_degree(&dv.boundary_trace(&NodeRect::full(&g), 1), [0.5, 1e-9]).unwrap();
        assert!(!r.valid && r.degree.is_none());
    }

    #[test]
    fn perturbed_map_examples() {
        let g = sq(65);
        let rect = NodeRect::full(&g);
        let f = perturbed_map(&ScalarField::zeros(g), 1.0).unwrap();
        assert_eq!(degree_on_rect(&f, &rect, [0.0, 0.0]).unwrap().degree, Some(1));
        let aff = ScalarField::from_fn(g, |x, y| 0.3 * x - 0.2 * y).unwrap();
        let f = perturbed_map(&aff, 0.1).unwrap();
        assert_eq!(degree_on_rect(&f, &rect, f.at(40, 20)).unwrap().degree, Some(1));
        let cyl = ScalarField::from_fn(g, |x, _| -0.5 * x * x).unwrap();
        let f = perturbed_map(&cyl, 0.05).unwrap();
        let y = f.at(30, 36);
        let d = degree_on_rect(&f, &rect, y).unwrap();
        assert!(d.valid && d.degree.unwrap() >= 1, "{d:?}");
        assert!(perturbed_map(&cyl, -1.0).is_err());
    }

    #[test]
    fn degree_is_additive_and_stable() {
        let g = sq(65);
        let m = PlanarMap::new(
            VectorField::from_fn(g, 2, |x, y, o| o.copy_from_slice(&[x * x - y * y + 0.2 * x, 2.0 * x * y + 0.1])).unwrap(),
        )
        .unwrap();
        let full = NodeRect::full(&g);
        let left = NodeRect { i1: 32, ..full };
        let right = NodeRect { i0: 32, ..full };
        for y in [[0.05, 0.3], [0.4, -0.2], [-0.3, 0.45], [2.0, 2.0]] {
            let (a, b, c) = (
                degree_on_rect(&m, &full, y).unwrap(),
                degree_on_rect(&m, &left, y).unwrap(),
                degree_on_rect(&m, &right, y).unwrap(),
            );
            if a.valid && b.valid && c.valid {
                assert_eq!(a.degree.unwrap(), b.degree.unwrap() + c.degree.unwrap());
            }
            if a.valid {
                let shift = a.margin / 4.0;
                let moved = PlanarMap::new(
                    VectorField::from_fn(g, 2, |x, yy, o| {
                        o.copy_from_slice(&[x * x - yy * yy + 0.2 * x + shift * (3.0 * x).sin(), 2.0 * x * yy + 0.1])
                    })
                    .unwrap(),
                )
                .unwrap();
                assert_eq!(degree_on_rect(&moved, &full, y).unwrap().degree, a.degree);
            }
        }
    }

    #[test]
    fn scans_on_developable_and_control() {
        let g = Grid2::from_bounds(0.0, 0.0, 1.0, 1.0, 129, 129).unwrap();
        let rect = NodeRect::full(&g);
        let cyl = ScalarField::from_fn(g, |x, _| -0.5 * x * x).unwrap();
        let s = degree_scan(&cyl, &rect, &DEFAULT_DELTAS, 50, SCAN_SEED).unwrap();
        assert_eq!(s.fails(), 0, "{s:?}");
        assert_eq!(s.gradient.pass, 50);
        assert!(s.perturbed.iter().all(|p| p.pass == 50));
        assert_eq!(s, degree_scan(&cyl, &rect, &DEFAULT_DELTAS, 50, SCAN_SEED).unwrap());

        let bowl = ScalarField::from_fn(g, |x, y| 0.5 * (x * x + y * y)).unwrap();
        let c = degree_scan(&bowl, &rect, &[0.1], 20, SCAN_SEED).unwrap();
        assert!(c.gradient.fail > 0 && c.gradient.witnesses.iter().all(|w| w.degree == 1));

        let zero = degree_scan(&ScalarField::zeros(g), &rect, &[0.1], 10, SCAN_SEED).unwrap();
        assert!(zero.degenerate_image && zero.gradient.pass + zero.gradient.fail == 0);
    }

    #[test]
    fn component_pairings() {
        let g = Grid2::from_bounds(0.0, 0.0, 1.0, 1.0, 257, 257).unwrap();
        let p = TestFunction::new([0.5, 0.5], 0.25, BATTERY_ORDER).unwrap();
        let plane = generate(&SurfaceSpec::plane(), &g).unwrap();
        assert!(component_pairing(&plane, 1.0 / 32.0, &p).unwrap().iter().all(|v| v.abs() < 1e-12));
        let cyl = generate(&SurfaceSpec::Cylinder { r: 1.0 }, &g).unwrap();
        let w = p.w11_norm(&g);
        assert!(component_pairing(&cyl, 1.0 / 32.0, &p).unwrap().iter().all(|v| v.abs() < 1e-5 * w));
    }
}
