//! Ruling detection for gradient-type fields: locally constant sets, ruling
//! directions, traced segments, and the weak constancy test.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FlatError, Result};
use crate::fields::{bilinear_stencil, div, grad, Battery, Grid2, ScalarField, TestFunction, VectorField};
use crate::surfaces::ImmersionField;

pub const CANDIDATES: usize = 360;
pub const SENSITIVITY_FRACTION: f64 = 0.05;
pub const SENSITIVITY_ROTATION_DEG: f64 = 10.0;
pub const SENSITIVITY_SEED: u64 = 0x5e45_17e5;
/// Oscillation floor relative to `max |f|`, for fields that are constant.
pub const SCALE_FLOOR: f64 = 1e-8;
const GOLDEN_STEPS: usize = 48;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RulingConfig {
    pub rho: f64,
    /// Pointwise tolerance relative to the field's oscillation.
    pub tol: f64,
    /// Weak-residual tolerance relative to the field's oscillation.
    pub tol_w: f64,
    /// Lattice stride in grid nodes.
    pub stride: usize,
    pub seed: u64,
}

impl Default for RulingConfig {
    fn default() -> Self {
        Self { rho: 0.03, tol: 1e-4, tol_w: 1e-5, stride: 8, seed: SENSITIVITY_SEED }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum NodeClass {
    LocallyConstant,
    /// `theta` in `[0, pi)`; `margin` is the uniqueness gap of `D`.
    Ruled { theta: f64, margin: f64, min_d: f64 },
    Ambiguous { min_d: f64, margin: f64 },
}

impl NodeClass {
    pub fn code(&self) -> f64 {
        match self {
            NodeClass::LocallyConstant => 0.0,
            NodeClass::Ruled { .. } => 1.0,
            NodeClass::Ambiguous { .. } => 2.0,
        }
    }

    pub fn theta(&self) -> Option<f64> {
        match *self {
            NodeClass::Ruled { theta, .. } => Some(theta),
            _ => None,
        }
    }
}

/// `2 max |f - mean f|` over all nodes, Euclidean in component space.
pub fn field_scale(f: &VectorField) -> f64 {
    let n = f.grid().len() as f64;
    let mean: Vec<f64> = f.components().iter().map(|c| c.values().iter().sum::<f64>() / n).collect();
    let mut r = 0.0f64;
    for k in 0..f.grid().len() {
        let d2: f64 = f.components().iter().zip(&mean).map(|(c, m)| (c.values()[k] - m).powi(2)).sum();
        r = r.max(d2);
    }
    2.0 * r.sqrt()
}

/// Bilinear sampling of every component, distances in component space.
struct Sampler<'a> {
    grid: Grid2,
    comps: Vec<&'a [f64]>,
}

impl<'a> Sampler<'a> {
    fn new(f: &'a VectorField) -> Self {
        Self { grid: *f.grid(), comps: f.components().iter().map(|c| c.values()).collect() }
    }

    fn node(&self, i: usize, j: usize) -> Vec<f64> {
        let k = self.grid.idx(i, j);
        self.comps.iter().map(|c| c[k]).collect()
    }

    #[inline]
    fn dist(&self, x: f64, y: f64, fc: &[f64]) -> Option<f64> {
        let (k, w) = bilinear_stencil(&self.grid, x, y)?;
        let mut s = 0.0;
        for (c, &v0) in self.comps.iter().zip(fc) {
            let v = w[0] * c[k[0]] + w[1] * c[k[1]] + w[2] * c[k[2]] + w[3] * c[k[3]];
            s += (v - v0) * (v - v0);
        }
        Some(s.sqrt())
    }

    #[inline]
    fn node_dist(&self, k: usize, fc: &[f64]) -> f64 {
        self.comps.iter().zip(fc).map(|(c, v0)| (c[k] - v0).powi(2)).sum::<f64>().sqrt()
    }

    /// Max deviation from `fc` along the chord `x + s e_theta`, `|s| <= rho`.
    fn chord(&self, x: [f64; 2], theta: f64, rho: f64, fc: &[f64]) -> f64 {
        let h = self.grid.h_min();
        let n = (rho / h + 1e-9).floor() as i64;
        let (sn, cs) = theta.sin_cos();
        let mut d = 0.0f64;
        for k in -n..=n {
            if k == 0 {
                continue;
            }
            let s = k as f64 * h;
            d = d.max(self.dist(x[0] + s * cs, x[1] + s * sn, fc).unwrap_or(f64::INFINITY));
        }
        d
    }
}

fn disk_offsets(grid: &Grid2, rho: f64) -> Vec<(i64, i64)> {
    let ki = (rho / grid.hx + 1e-9).floor() as i64;
    let kj = (rho / grid.hy + 1e-9).floor() as i64;
    let mut out = Vec::new();
    for dj in -kj..=kj {
        for di in -ki..=ki {
            if (di as f64 * grid.hx).hypot(dj as f64 * grid.hy) <= rho * (1.0 + 1e-12) {
                out.push((di, dj));
            }
        }
    }
    out
}

fn disk_values(s: &Sampler, i: usize, j: usize, offsets: &[(i64, i64)]) -> Vec<usize> {
    let g = &s.grid;
    offsets
        .iter()
        .filter_map(|&(di, dj)| {
            let (a, b) = (i as i64 + di, j as i64 + dj);
            (a >= 0 && b >= 0 && a < g.nx as i64 && b < g.ny as i64).then(|| g.idx(a as usize, b as usize))
        })
        .collect()
}

/// Diameter of `f` over the disk does not exceed `tol`.
fn disk_is_constant(s: &Sampler, i: usize, j: usize, offsets: &[(i64, i64)], tol: f64) -> bool {
    let fc = s.node(i, j);
    let ks = disk_values(s, i, j, offsets);
    let r = ks.iter().map(|&k| s.node_dist(k, &fc)).fold(0.0, f64::max);
    if r <= 0.5 * tol {
        return true;
    }
    if r > tol {
        return false;
    }
    for (n, &a) in ks.iter().enumerate() {
        let fa: Vec<f64> = s.comps.iter().map(|c| c[a]).collect();
        for &b in &ks[n + 1..] {
            if s.node_dist(b, &fa) > tol {
                return false;
            }
        }
    }
    true
}

/// Nodes whose disk `B(x, rho)`, cut to the grid, carries oscillation `<= tol`.
pub fn constancy_mask(f: &VectorField, rho: f64, tol: f64) -> Result<Vec<bool>> {
    let g = *f.grid();
    check_rho(&g, rho)?;
    let s = Sampler::new(f);
    let offsets = disk_offsets(&g, rho);
    Ok((0..g.len())
        .into_par_iter()
        .map(|k| disk_is_constant(&s, k % g.nx, k / g.nx, &offsets, tol))
        .collect())
}

fn check_rho(g: &Grid2, rho: f64) -> Result<()> {
    if !(rho >= 3.0 * g.h_max() * (1.0 - 1e-9)) {
        return Err(FlatError::InvalidArgument(format!("rho = {rho} must span at least 3 cells of {}", g.h_max())));
    }
    Ok(())
}

/// Uniqueness gap of a sampled periodic `D`: the lowest local minimum that
/// is separated from the global one by a ridge at least `prominence` high,
/// minus the global minimum; `max - min` when there is none.
fn basin_margin(d: &[f64], kmin: usize, prominence: f64) -> f64 {
    let n = d.len();
    let max = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = d[kmin];
    if max - min <= 0.0 {
        return 0.0;
    }
    // ridge height from kmin to every k, walking either way round the ring
    let mut fwd = vec![f64::INFINITY; n];
    let mut bwd = vec![f64::INFINITY; n];
    let (mut hf, mut hb) = (min, min);
    for step in 1..n {
        let kf = (kmin + step) % n;
        let kb = (kmin + n - step) % n;
        hf = hf.max(d[kf]);
        hb = hb.max(d[kb]);
        fwd[kf] = hf;
        bwd[kb] = hb;
    }
    let mut best = max;
    for k in 0..n {
        if k == kmin || d[k] > d[(k + 1) % n] || d[k] > d[(k + n - 1) % n] {
            continue;
        }
        if fwd[k].min(bwd[k]) - d[k] >= prominence {
            best = best.min(d[k]);
        }
    }
    best - min
}

fn wrap_pi(t: f64) -> f64 {
    let w = t.rem_euclid(PI);
    if w >= PI { 0.0 } else { w }
}

fn classify(s: &Sampler, i: usize, j: usize, rho: f64, tol: f64, offsets: &[(i64, i64)], table: &[(f64, f64)]) -> NodeClass {
    if disk_is_constant(s, i, j, offsets, tol) {
        return NodeClass::LocallyConstant;
    }
    let fc = s.node(i, j);
    let x = s.grid.point(i, j);
    let d: Vec<f64> = table.iter().map(|&(t, _)| s.chord(x, t, rho, &fc)).collect();
    let mut kmin = 0;
    for k in 1..d.len() {
        if d[k] < d[kmin] {
            kmin = k;
        }
    }
    let margin = basin_margin(&d, kmin, tol);
    // golden refinement over one candidate spacing either side
    let step = PI / d.len() as f64;
    let (mut a, mut b) = (table[kmin].0 - step, table[kmin].0 + step);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut e = a + phi * (b - a);
    let (mut fc_, mut fe) = (s.chord(x, c, rho, &fc), s.chord(x, e, rho, &fc));
    for _ in 0..GOLDEN_STEPS {
        if fc_ <= fe {
            b = e;
            e = c;
            fe = fc_;
            c = b - phi * (b - a);
            fc_ = s.chord(x, c, rho, &fc);
        } else {
            a = c;
            c = e;
            fc_ = fe;
            e = a + phi * (b - a);
            fe = s.chord(x, e, rho, &fc);
        }
    }
    let (theta, min_d) = if fc_.min(fe) < d[kmin] {
        if fc_ <= fe { (c, fc_) } else { (e, fe) }
    } else {
        (table[kmin].0, d[kmin])
    };
    if min_d > tol || margin < tol {
        NodeClass::Ambiguous { min_d, margin }
    } else {
        NodeClass::Ruled { theta: wrap_pi(theta), margin, min_d }
    }
}

fn candidate_table() -> Vec<(f64, f64)> {
    (0..CANDIDATES).map(|k| (PI * k as f64 / CANDIDATES as f64, 0.0)).collect()
}

/// Classify the node `(i, j)`; `tol` is absolute.
pub fn ruling_direction(f: &VectorField, i: usize, j: usize, rho: f64, tol: f64) -> Result<NodeClass> {
    let g = *f.grid();
    check_rho(&g, rho)?;
    let [x, y] = g.point(i, j);
    if g.inset_distance([x, y]) < rho * (1.0 - 1e-9) {
        return Err(FlatError::InvalidArgument(format!("disk of radius {rho} at ({x}, {y}) leaves the grid")));
    }
    let s = Sampler::new(f);
    Ok(classify(&s, i, j, rho, tol, &disk_offsets(&g, rho), &candidate_table()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub theta: f64,
    /// Whether each end stopped at the window boundary rather than at a
    /// tolerance breach.
    pub truncated: [bool; 2],
}

impl Segment {
    fn dir(&self) -> [f64; 2] {
        [self.theta.cos(), self.theta.sin()]
    }

    pub fn length(&self) -> f64 {
        (self.b[0] - self.a[0]).hypot(self.b[1] - self.a[1])
    }

    fn distance_to(&self, p: [f64; 2]) -> f64 {
        let (dx, dy) = (self.b[0] - self.a[0], self.b[1] - self.a[1]);
        let l2 = dx * dx + dy * dy;
        let t = if l2 > 0.0 { (((p[0] - self.a[0]) * dx + (p[1] - self.a[1]) * dy) / l2).clamp(0.0, 1.0) } else { 0.0 };
        (p[0] - self.a[0] - t * dx).hypot(p[1] - self.a[1] - t * dy)
    }
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

fn trace_one(s: &Sampler, seed: [f64; 2], theta: f64, tol: f64, bounds: [f64; 4]) -> Segment {
    let fc = {
        let mut v = vec![0.0; s.comps.len()];
        let (k, w) = bilinear_stencil(&s.grid, seed[0], seed[1]).expect("seed inside grid");
        for (c, out) in s.comps.iter().zip(v.iter_mut()) {
            *out = w[0] * c[k[0]] + w[1] * c[k[1]] + w[2] * c[k[2]] + w[3] * c[k[3]];
        }
        v
    };
    let h = s.grid.h_min();
    let e = [theta.cos(), theta.sin()];
    let inside = |p: [f64; 2]| {
        let t = 1e-9 * h;
        p[0] >= bounds[0] - t && p[0] <= bounds[2] + t && p[1] >= bounds[1] - t && p[1] <= bounds[3] + t
    };
    let mut ends = [[0.0; 2]; 2];
    let mut truncated = [false; 2];
    for (n, sign) in [-1.0, 1.0].into_iter().enumerate() {
        let mut last = seed;
        let mut k = 1.0;
        loop {
            let p = [seed[0] + sign * k * h * e[0], seed[1] + sign * k * h * e[1]];
            if !inside(p) {
                // finish exactly on the window edge
                let mut t = f64::INFINITY;
                for (axis, lo, hi) in [(0, bounds[0], bounds[2]), (1, bounds[1], bounds[3])] {
                    let de = sign * e[axis];
                    if de > 1e-15 {
                        t = t.min((hi - seed[axis]) / de);
                    } else if de < -1e-15 {
                        t = t.min((lo - seed[axis]) / de);
                    }
                }
                let q = [seed[0] + sign * t * e[0], seed[1] + sign * t * e[1]];
                if s.dist(q[0], q[1], &fc).is_some_and(|d| d <= tol) {
                    last = q;
                    truncated[n] = true;
                }
                break;
            }
            match s.dist(p[0], p[1], &fc) {
                Some(d) if d <= tol => last = p,
                _ => break,
            }
            k += 1.0;
        }
        ends[n] = last;
    }
    Segment { a: ends[0], b: ends[1], theta, truncated }
}

/// Segments cross when each strictly separates the other's endpoints by more
/// than `clearance`.
pub fn segments_cross(p: &Segment, q: &Segment, clearance: f64) -> bool {
    let side = |s: &Segment, r: [f64; 2]| {
        let e = s.dir();
        e[0] * (r[1] - s.a[1]) - e[1] * (r[0] - s.a[0])
    };
    let (a, b) = (side(p, q.a), side(p, q.b));
    let (c, d) = (side(q, p.a), side(q, p.b));
    a * b < 0.0
        && c * d < 0.0
        && a.abs().min(b.abs()) > clearance
        && c.abs().min(d.abs()) > clearance
}

/// Least-squares common point of the segments' lines, if the lines are not all parallel.
pub fn concurrency_point(segments: &[Segment]) -> Option<[f64; 2]> {
    let (mut m, mut r) = ([[0.0; 2]; 2], [0.0; 2]);
    for s in segments {
        let e = s.dir();
        let p = [[1.0 - e[0] * e[0], -e[0] * e[1]], [-e[0] * e[1], 1.0 - e[1] * e[1]]];
        for a in 0..2 {
            for b in 0..2 {
                m[a][b] += p[a][b];
            }
            r[a] += p[a][0] * s.a[0] + p[a][1] * s.a[1];
        }
    }
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let scale = m[0][0] + m[1][1];
    if !(det.abs() > 1e-10 * scale * scale) {
        return None;
    }
    Some([(m[1][1] * r[0] - m[0][1] * r[1]) / det, (m[0][0] * r[1] - m[1][0] * r[0]) / det])
}

/// Distance from `p` to the full line through a segment.
pub fn line_distance(s: &Segment, p: [f64; 2]) -> f64 {
    let e = s.dir();
    (e[0] * (p[1] - s.a[1]) - e[1] * (p[0] - s.a[0])).abs()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzStats {
    /// Largest `|theta_a - theta_b| / |a - b|` over neighbouring ruled lattice nodes.
    pub max: f64,
    /// Largest such quotient times the pair's distance to the window boundary.
    pub max_times_distance: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub locally_constant: usize,
    pub ruled: usize,
    pub ambiguous: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RulingReport {
    pub developable: bool,
    /// Absolute tolerances actually used.
    pub tol: f64,
    pub tol_w: f64,
    pub lattice: Grid2,
    pub classes: Vec<NodeClass>,
    pub counts: ClassCounts,
    /// Smallest `margin / tol` over ruled nodes.
    pub min_margin_ratio: Option<f64>,
    pub segments: Vec<Segment>,
    pub crossings: usize,
    pub lipschitz: LipschitzStats,
    pub weak_residual: f64,
    /// Weak residual with a deliberately corrupted direction field.
    pub sensitivity_residual: Option<f64>,
}

impl RulingReport {
    /// Lattice raster with components (class code, theta or 0).
    pub fn class_raster(&self) -> Result<VectorField> {
        let code = ScalarField::new(self.lattice, self.classes.iter().map(|c| c.code()).collect())?;
        let theta = ScalarField::new(self.lattice, self.classes.iter().map(|c| c.theta().unwrap_or(0.0)).collect())?;
        VectorField::from_components(vec![code, theta])
    }

    pub fn class_at(&self, x: f64, y: f64) -> Option<&NodeClass> {
        let g = &self.lattice;
        let fi = (x - g.x0) / g.hx;
        let fj = (y - g.y0) / g.hy;
        let (i, j) = (fi.round(), fj.round());
        if (fi - i).abs() > 1e-6 || (fj - j).abs() > 1e-6 || i < 0.0 || j < 0.0 {
            return None;
        }
        let (i, j) = (i as usize, j as usize);
        (i < g.nx && j < g.ny).then(|| &self.classes[g.idx(i, j)])
    }
}

/// Lattice of nodes whose `rho`-disk lies in the grid.
pub fn detection_lattice(grid: &Grid2, rho: f64, stride: usize) -> Result<(Grid2, usize, usize)> {
    let mi = (rho / grid.hx - 1e-9).ceil() as usize;
    let mj = (rho / grid.hy - 1e-9).ceil() as usize;
    let stride = stride.max(1);
    if grid.nx < 2 * mi + 1 || grid.ny < 2 * mj + 1 {
        return Err(FlatError::InvalidArgument(format!("grid too small for detection radius {rho}")));
    }
    let nx = (grid.nx - 1 - 2 * mi) / stride + 1;
    let ny = (grid.ny - 1 - 2 * mj) / stride + 1;
    if nx < 2 || ny < 2 {
        return Err(FlatError::InvalidArgument(format!("stride {stride} leaves fewer than 2 lattice nodes per axis")));
    }
    let lattice = Grid2::new(
        nx,
        ny,
        grid.x(mi),
        grid.y(mj),
        grid.hx * stride as f64,
        grid.hy * stride as f64,
    )?;
    Ok((lattice, mi, mj))
}

/// Direction field on every node of `grid`, blended from ruled lattice nodes
/// by bilinear weights on the doubled angle.
pub fn interpolate_directions(grid: &Grid2, lattice: &Grid2, classes: &[NodeClass]) -> Result<VectorField> {
    VectorField::from_fn(*grid, 2, |x, y, out| {
        let fx = ((x - lattice.x0) / lattice.hx).clamp(0.0, (lattice.nx - 1) as f64);
        let fy = ((y - lattice.y0) / lattice.hy).clamp(0.0, (lattice.ny - 1) as f64);
        let i = (fx.floor() as usize).min(lattice.nx - 2);
        let j = (fy.floor() as usize).min(lattice.ny - 2);
        let (tx, ty) = (fx - i as f64, fy - j as f64);
        let (mut c2, mut s2, mut wsum) = (0.0, 0.0, 0.0);
        for (di, dj, w) in [(0, 0, (1.0 - tx) * (1.0 - ty)), (1, 0, tx * (1.0 - ty)), (0, 1, (1.0 - tx) * ty), (1, 1, tx * ty)] {
            if let Some(t) = classes[lattice.idx(i + di, j + dj)].theta() {
                c2 += w * (2.0 * t).cos();
                s2 += w * (2.0 * t).sin();
                wsum += w;
            }
        }
        let t = if wsum > 0.0 && c2.hypot(s2) > 0.0 { 0.5 * s2.atan2(c2) } else { 0.0 };
        out[0] = t.cos();
        out[1] = t.sin();
    })
}

/// `max |pair(f_m, div(psi eta))| / |psi|_{W^{1,1}}` over components and battery.
pub fn weak_constancy_test(f: &VectorField, eta: &VectorField, battery: &Battery) -> Result<f64> {
    let g = *f.grid();
    if !g.same_nodes(eta.grid()) || eta.ncomp() != 2 {
        return Err(FlatError::GridMismatch("direction field must be a 2-component field on f's grid".into()));
    }
    let mut worst = 0.0f64;
    for psi in &battery.members {
        psi.check_support(&g)?;
        let rp = psi.realize(&g);
        let prod = VectorField::from_components(vec![
            rp.zip_map(eta.comp(0), |a, b| a * b)?,
            rp.zip_map(eta.comp(1), |a, b| a * b)?,
        ])?;
        let dpe = div(&prod)?;
        let norm = psi.w11_norm(&g);
        for c in f.components() {
            let v = support_sum(psi, &g, |k| c.values()[k] * dpe.values()[k]);
            worst = worst.max(v.abs() / norm);
        }
    }
    Ok(worst)
}

/// Trapezoid sum over the support box widened by one node.
fn support_sum(psi: &TestFunction, g: &Grid2, term: impl Fn(usize) -> f64) -> f64 {
    let (i0, i1, j0, j1) = psi.node_range(g);
    let (i0, j0) = (i0.saturating_sub(1), j0.saturating_sub(1));
    let (i1, j1) = ((i1 + 1).min(g.nx - 1), (j1 + 1).min(g.ny - 1));
    let mut total = 0.0;
    for j in j0..=j1 {
        let mut row = 0.0;
        for i in i0..=i1 {
            row += term(g.idx(i, j));
        }
        total += row;
    }
    total * g.cell_area()
}

/// Rotate the direction at a random `SENSITIVITY_FRACTION` of nodes.
pub fn corrupt_directions(eta: &VectorField, seed: u64) -> Result<VectorField> {
    let g = *eta.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (s, c) = SENSITIVITY_ROTATION_DEG.to_radians().sin_cos();
    let mut a = eta.comp(0).values().to_vec();
    let mut b = eta.comp(1).values().to_vec();
    for k in 0..g.len() {
        if rng.gen_bool(SENSITIVITY_FRACTION) {
            let (x, y) = (a[k], b[k]);
            a[k] = c * x - s * y;
            b[k] = s * x + c * y;
        }
    }
    VectorField::from_components(vec![ScalarField::new(g, a)?, ScalarField::new(g, b)?])
}

fn lipschitz(lattice: &Grid2, classes: &[NodeClass], bounds: [f64; 4]) -> LipschitzStats {
    let mut st = LipschitzStats { max: 0.0, max_times_distance: 0.0 };
    for j in 0..lattice.ny {
        for i in 0..lattice.nx {
            let Some(t) = classes[lattice.idx(i, j)].theta() else { continue };
            for (ni, nj) in [(i + 1, j), (i, j + 1)] {
                if ni >= lattice.nx || nj >= lattice.ny {
                    continue;
                }
                let Some(u) = classes[lattice.idx(ni, nj)].theta() else { continue };
                let (p, q) = (lattice.point(i, j), lattice.point(ni, nj));
                let l = angle_gap(t, u) / (p[0] - q[0]).hypot(p[1] - q[1]);
                let mid = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
                let d = (mid[0] - bounds[0]).min(bounds[2] - mid[0]).min(mid[1] - bounds[1]).min(bounds[3] - mid[1]);
                st.max = st.max.max(l);
                st.max_times_distance = st.max_times_distance.max(l * d);
            }
        }
    }
    st
}

/// Trace segments from ruled lattice nodes, skipping seeds already covered by
/// a parallel segment.
pub fn trace_segments(f: &VectorField, lattice: &Grid2, classes: &[NodeClass], tol: f64) -> Vec<Segment> {
    let s = Sampler::new(f);
    let bounds = f.grid().bounds();
    let h = f.grid().h_min();
    let mut segs: Vec<Segment> = Vec::new();
    for j in 0..lattice.ny {
        for i in 0..lattice.nx {
            let Some(t) = classes[lattice.idx(i, j)].theta() else { continue };
            let p = lattice.point(i, j);
            let covered = segs.iter().any(|q| angle_gap(q.theta, t) < 1f64.to_radians() && q.distance_to(p) < h);
            if !covered {
                segs.push(trace_one(&s, p, t, tol, bounds));
            }
        }
    }
    segs
}

pub fn count_crossings(segs: &[Segment], clearance: f64) -> usize {
    (0..segs.len())
        .into_par_iter()
        .map(|a| {
            let p = &segs[a];
            let (pxl, pxh) = (p.a[0].min(p.b[0]), p.a[0].max(p.b[0]));
            let (pyl, pyh) = (p.a[1].min(p.b[1]), p.a[1].max(p.b[1]));
            segs[a + 1..]
                .iter()
                .filter(|q| {
                    q.a[0].max(q.b[0]) >= pxl
                        && q.a[0].min(q.b[0]) <= pxh
                        && q.a[1].max(q.b[1]) >= pyl
                        && q.a[1].min(q.b[1]) <= pyh
                        && segments_cross(p, q, clearance)
                })
                .count()
        })
        .sum()
}

/// Full developability check of `f` (typically `grad u` stacked, or `grad v`).
pub fn check_developability(f: &VectorField, cfg: &RulingConfig) -> Result<RulingReport> {
    let g = *f.grid();
    check_rho(&g, cfg.rho)?;
    let size = f.components().iter().map(|c| c.max_abs()).fold(1.0, f64::max);
    let scale = field_scale(f).max(SCALE_FLOOR * size);
    let tol = cfg.tol * scale;
    let tol_w = cfg.tol_w * scale;
    let (lattice, mi, mj) = detection_lattice(&g, cfg.rho, cfg.stride)?;
    let s = Sampler::new(f);
    let offsets = disk_offsets(&g, cfg.rho);
    let table = candidate_table();
    let stride = cfg.stride.max(1);
    let classes: Vec<NodeClass> = (0..lattice.len())
        .into_par_iter()
        .map(|k| {
            let (li, lj) = (k % lattice.nx, k / lattice.nx);
            classify(&s, mi + li * stride, mj + lj * stride, cfg.rho, tol, &offsets, &table)
        })
        .collect();
    let mut counts = ClassCounts::default();
    let mut min_margin_ratio: Option<f64> = None;
    for c in &classes {
        match *c {
            NodeClass::LocallyConstant => counts.locally_constant += 1,
            NodeClass::Ruled { margin, .. } => {
                counts.ruled += 1;
                let r = margin / tol;
                min_margin_ratio = Some(min_margin_ratio.map_or(r, |m: f64| m.min(r)));
            }
            NodeClass::Ambiguous { .. } => counts.ambiguous += 1,
        }
    }
    let segments = trace_segments(f, &lattice, &classes, tol);
    let crossings = count_crossings(&segments, 2.0 * g.h_max());
    let lip = lipschitz(&lattice, &classes, g.bounds());
    let eta = interpolate_directions(&g, &lattice, &classes)?;
    let battery = Battery::for_grid(&lattice, 2)?;
    let weak_residual = weak_constancy_test(f, &eta, &battery)?;
    let sensitivity_residual = if counts.ruled > 0 {
        Some(weak_constancy_test(f, &corrupt_directions(&eta, cfg.seed)?, &battery)?)
    } else {
        None
    };
    let developable = counts.ambiguous == 0 && crossings == 0 && weak_residual <= tol_w;
    log::debug!(
        "ruling check: {counts:?}, {} segments, {crossings} crossings, weak residual {weak_residual:e} (tol_w {tol_w:e})",
        segments.len()
    );
    Ok(RulingReport {
        developable,
        tol,
        tol_w,
        lattice,
        classes,
        counts,
        min_margin_ratio,
        segments,
        crossings,
        lipschitz: lip,
        weak_residual,
        sensitivity_residual,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RulingComparison {
    pub u_developable: bool,
    pub v_developable: bool,
    pub verdicts_agree: bool,
    /// Nodes ruled for both fields.
    pub compared: usize,
    pub max_angle_deg: Option<f64>,
    pub mean_angle_deg: Option<f64>,
    pub u_report: RulingReport,
    pub v_report: RulingReport,
}

/// Rulings of `grad u` and `grad v` on `v`'s grid.
pub fn compare_rulings(u: &ImmersionField, v: &ScalarField, cfg: &RulingConfig) -> Result<RulingComparison> {
    let du = u.du_stacked().restrict(v.grid())?;
    let dv = grad(v);
    let ur = check_developability(&du, cfg)?;
    let vr = check_developability(&dv, cfg)?;
    let mut diffs = Vec::new();
    for (a, b) in ur.classes.iter().zip(&vr.classes) {
        if let (Some(s), Some(t)) = (a.theta(), b.theta()) {
            diffs.push(angle_gap(s, t).to_degrees());
        }
    }
    let max = diffs.iter().cloned().reduce(f64::max);
    let mean = (!diffs.is_empty()).then(|| diffs.iter().sum::<f64>() / diffs.len() as f64);
    Ok(RulingComparison {
        u_developable: ur.developable,
        v_developable: vr.developable,
        verdicts_agree: ur.developable == vr.developable,
        compared: diffs.len(),
        max_angle_deg: max,
        mean_angle_deg: mean,
        u_report: ur,
        v_report: vr,
    })
}

/// Largest angular error, in degrees, of ruled lattice nodes against `oracle`.
pub fn max_direction_error(report: &RulingReport, oracle: impl Fn(f64, f64) -> Option<f64>) -> Option<f64> {
    let mut worst: Option<f64> = None;
    for j in 0..report.lattice.ny {
        for i in 0..report.lattice.nx {
            let [x, y] = report.lattice.point(i, j);
            if let (Some(t), Some(o)) = (report.classes[report.lattice.idx(i, j)].theta(), oracle(x, y)) {
                let e = angle_gap(t, o).to_degrees();
                worst = Some(worst.map_or(e, |w: f64| w.max(e)));
            }
        }
    }
    worst
}
