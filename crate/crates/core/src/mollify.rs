//! Convolution with a compactly supported radial bump at a ladder of scales,
//! commutators, mollified distributional products, and log-log rate fits.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FlatError, Result};
use crate::fields::{d1, pair, Axis, Grid2, ScalarField, TestFunction, VectorField};

/// Measurements at or below this magnitude count as exact zeros.
pub const ZERO_FLOOR: f64 = 1e-14;

/// Radial mollifier `c_q (1 - |z|^2)^q` supported in the unit disk.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub order: u32,
    /// `c_q`, so that the kernel integrates to one.
    pub norm: f64,
    /// `m2 = int |z|^2 phi(z) dz`.
    pub second_moment: f64,
}

impl Default for Kernel {
    fn default() -> Self {
        Self::new(4).expect("order 4 is valid")
    }
}

impl Kernel {
    pub fn new(order: u32) -> Result<Self> {
        if order < 4 {
            return Err(FlatError::InvalidArgument(format!("kernel order must be >= 4, got {order}")));
        }
        let q = order as i32;
        let norm = (order as f64 + 1.0) / PI;
        // radial Simpson quadrature of 2 pi c_q int_0^1 t^3 (1 - t^2)^q dt
        let n = 4096;
        let h = 1.0 / n as f64;
        let f = |t: f64| t * t * t * (1.0 - t * t).powi(q);
        let mut s = f(0.0) + f(1.0);
        for k in 1..n {
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * h);
        }
        let second_moment = 2.0 * PI * norm * s * h / 3.0;
        Ok(Self { order, norm, second_moment })
    }

    #[inline]
    pub fn profile(&self, t2: f64) -> f64 {
        if t2 >= 1.0 {
            0.0
        } else {
            self.norm * (1.0 - t2).powi(self.order as i32)
        }
    }

    /// Node weights of `phi_eps` on `grid`'s spacing, renormalized to sum to one.
    pub fn discretize(&self, eps: f64, grid: &Grid2) -> DiscreteKernel {
        let mx = margin_nodes(eps, grid.hx);
        let my = margin_nodes(eps, grid.hy);
        let mut rows = Vec::new();
        let mut total = 0.0;
        for dj in -(my as i64)..=(my as i64) {
            let zy = dj as f64 * grid.hy / eps;
            let mut lo = None;
            let mut ws = Vec::new();
            for di in -(mx as i64)..=(mx as i64) {
                let zx = di as f64 * grid.hx / eps;
                let w = self.profile(zx * zx + zy * zy);
                if w > 0.0 {
                    lo.get_or_insert(di);
                    ws.push(w);
                } else if lo.is_some() {
                    break;
                }
            }
            if let Some(lo) = lo {
                total += ws.iter().sum::<f64>();
                rows.push(KernelRow { dj, di_lo: lo, weights: ws });
            }
        }
        for r in &mut rows {
            for w in &mut r.weights {
                *w /= total;
            }
        }
        DiscreteKernel { mx, my, rows }
    }
}

#[derive(Clone, Debug)]
pub struct KernelRow {
    pub dj: i64,
    pub di_lo: i64,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DiscreteKernel {
    pub mx: usize,
    pub my: usize,
    pub rows: Vec<KernelRow>,
}

impl DiscreteKernel {
    pub fn weight_sum(&self) -> f64 {
        self.rows.iter().flat_map(|r| r.weights.iter()).sum()
    }
}

/// Number of nodes within distance `eps` along one axis.
fn margin_nodes(eps: f64, h: f64) -> usize {
    (eps / h - 1e-9).ceil().max(0.0) as usize
}

/// Geometric ladder `eps0 * ratio^k`, `k = 0..count`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleLadder {
    pub eps0: f64,
    pub count: usize,
    pub ratio: f64,
}

impl ScaleLadder {
    pub fn new(eps0: f64, count: usize, ratio: f64) -> Result<Self> {
        if !(eps0 > 0.0 && eps0.is_finite()) {
            return Err(FlatError::InvalidLadder(format!("eps0 must be positive, got {eps0}")));
        }
        if count < 4 {
            return Err(FlatError::InvalidLadder(format!("need at least 4 scales, got {count}")));
        }
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(FlatError::InvalidLadder(format!("ratio must lie in (0, 1), got {ratio}")));
        }
        Ok(Self { eps0, count, ratio })
    }

    /// Descending scales.
    pub fn scales(&self) -> Vec<f64> {
        (0..self.count).map(|k| self.eps0 * self.ratio.powi(k as i32)).collect()
    }

    pub fn smallest(&self) -> f64 {
        self.eps0 * self.ratio.powi(self.count as i32 - 1)
    }

    /// Every scale must resolve the kernel and leave a non-empty eroded grid.
    pub fn validate(&self, grid: &Grid2) -> Result<()> {
        let need = 2.0 * grid.h_max();
        if self.smallest() < need * (1.0 - 1e-9) {
            return Err(FlatError::InvalidLadder(format!(
                "smallest scale {} is below twice the grid spacing {}",
                self.smallest(),
                grid.h_max()
            )));
        }
        eroded_grid(grid, self.eps0).map(|_| ())
    }
}

impl FromStr for ScaleLadder {
    type Err = FlatError;

    /// `"eps0,count,ratio"`, e.g. `0.125,6,0.5`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(FlatError::InvalidLadder(format!("expected eps0,count,ratio, got {s:?}")));
        }
        let bad = |what: &str| FlatError::InvalidLadder(format!("cannot parse {what} in {s:?}"));
        let eps0 = parts[0].parse().map_err(|_| bad("eps0"))?;
        let count = parts[1].parse().map_err(|_| bad("count"))?;
        let ratio = parts[2].parse().map_err(|_| bad("ratio"))?;
        Self::new(eps0, count, ratio)
    }
}

impl fmt::Display for ScaleLadder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.eps0, self.count, self.ratio)
    }
}

/// Nodes of `grid` at distance at least `eps` from its edges.
pub fn eroded_grid(grid: &Grid2, eps: f64) -> Result<Grid2> {
    let mx = margin_nodes(eps, grid.hx);
    let my = margin_nodes(eps, grid.hy);
    grid.erode(mx, my).map_err(|_| FlatError::ErodedEmpty {
        eps,
        required: 2.0 * eps + 3.0 * grid.h_max(),
    })
}

fn check_resolution(grid: &Grid2, eps: f64) -> Result<()> {
    if !(eps.is_finite() && eps >= 2.0 * grid.h_max() * (1.0 - 1e-9)) {
        return Err(FlatError::InvalidArgument(format!(
            "eps = {eps} does not resolve the kernel on spacing {}",
            grid.h_max()
        )));
    }
    Ok(())
}

/// `f * phi_eps` on the eroded grid, by direct quadrature over the kernel support.
pub fn mollify(f: &ScalarField, eps: f64) -> Result<ScalarField> {
    mollify_with(&Kernel::default(), f, eps)
}

pub fn mollify_with(kernel: &Kernel, f: &ScalarField, eps: f64) -> Result<ScalarField> {
    let g = *f.grid();
    check_resolution(&g, eps)?;
    let out_grid = eroded_grid(&g, eps)?;
    let dk = kernel.discretize(eps, &g);
    Ok(convolve(f, &dk, &out_grid))
}

pub fn mollify_vector(f: &VectorField, eps: f64) -> Result<VectorField> {
    let kernel = Kernel::default();
    let g = *f.grid();
    check_resolution(&g, eps)?;
    let out_grid = eroded_grid(&g, eps)?;
    let dk = kernel.discretize(eps, &g);
    VectorField::from_components(f.components().iter().map(|c| convolve(c, &dk, &out_grid)).collect())
}

fn convolve(f: &ScalarField, dk: &DiscreteKernel, out_grid: &Grid2) -> ScalarField {
    let g = f.grid();
    let (nxo, nyo) = (out_grid.nx, out_grid.ny);
    let (mx, my) = (dk.mx as i64, dk.my as i64);
    let mut out = vec![0.0; nxo * nyo];
    out.par_chunks_mut(nxo).enumerate().for_each(|(jo, acc)| {
        for row in &dk.rows {
            let src = f.row((jo as i64 + my + row.dj) as usize);
            for (k, &w) in row.weights.iter().enumerate() {
                let off = (mx + row.di_lo + k as i64) as usize;
                for (a, &s) in acc.iter_mut().zip(&src[off..off + nxo]) {
                    *a += w * s;
                }
            }
        }
    });
    debug_assert_eq!(g.hx, out_grid.hx);
    ScalarField::from_raw(*out_grid, out)
}

/// `f_eps h_eps - (f h)_eps` on the eroded grid.
pub fn commutator(f: &ScalarField, h: &ScalarField, eps: f64) -> Result<ScalarField> {
    let fh = f.zip_map(h, |a, b| a * b)?;
    let fe = mollify(f, eps)?;
    let he = mollify(h, eps)?;
    let fhe = mollify(&fh, eps)?;
    let prod = fe.zip_map(&he, |a, b| a * b)?;
    prod.axpby(1.0, &fhe, -1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateVerdict {
    Fitted,
    IdenticallyZero,
}

/// Least-squares power law `Q(eps) ~ C eps^exponent` over a scale ladder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub exponent: Option<f64>,
    /// Largest deviation of `ln Q` from the fitted line.
    pub residual: f64,
    pub scales: Vec<f64>,
    pub values: Vec<f64>,
    pub verdict: RateVerdict,
}

impl RateFit {
    /// Exponent for gate comparisons; identically-zero data count as arbitrarily fast.
    pub fn effective_exponent(&self) -> f64 {
        self.exponent.unwrap_or(f64::INFINITY)
    }

    pub fn is_zero(&self) -> bool {
        self.verdict == RateVerdict::IdenticallyZero
    }
}

/// Least-squares slope and intercept of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x.ln(), b + y.ln()));
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in points {
        let dx = x.ln() - mx;
        sxx += dx * dx;
        sxy += dx * (y.ln() - my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Fit `ln Q` against `ln eps`. All measurements at or below [`ZERO_FLOOR`]
/// yield the identically-zero verdict; any other nonpositive or floor-level
/// entry is an error.
pub fn fit_rate(scales: &[f64], values: &[f64]) -> Result<RateFit> {
    if scales.len() != values.len() {
        return Err(FlatError::InvalidArgument(format!(
            "{} scales but {} measurements",
            scales.len(),
            values.len()
        )));
    }
    if values.len() < 4 {
        return Err(FlatError::InvalidArgument(format!("need at least 4 measurements, got {}", values.len())));
    }
    if values.iter().all(|v| v.abs() <= ZERO_FLOOR) {
        return Ok(RateFit {
            exponent: None,
            residual: 0.0,
            scales: scales.to_vec(),
            values: values.to_vec(),
            verdict: RateVerdict::IdenticallyZero,
        });
    }
    if let Some(k) = values.iter().position(|&v| !(v > ZERO_FLOOR) || !v.is_finite()) {
        return Err(FlatError::NonPositiveMeasurement { scale: scales[k], value: values[k] });
    }
    let pts: Vec<(f64, f64)> = scales.iter().cloned().zip(values.iter().cloned()).collect();
    let (slope, icpt) = log_log_slope(&pts);
    let residual = pts
        .iter()
        .map(|&(x, y)| (y.ln() - (icpt + slope * x.ln())).abs())
        .fold(0.0, f64::max);
    Ok(RateFit {
        exponent: Some(slope),
        residual,
        scales: scales.to_vec(),
        values: values.to_vec(),
        verdict: RateVerdict::Fitted,
    })
}

/// Mollified product `int f_eps d_j h_eps psi` across a ladder.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProductEstimate {
    /// Value at the finest scale.
    pub limit: f64,
    pub values: Vec<f64>,
    /// Fit of the Cauchy increments `|a(eps_k) - a(eps_{k+1})|` at `eps_k`.
    pub increments: RateFit,
}

/// Tracks `a(eps) = int f_eps (d_j h_eps) psi` over the ladder. The ladder needs
/// at least five scales so that four increments are available for the fit.
pub fn distributional_product(
    f: &ScalarField,
    h: &ScalarField,
    axis: Axis,
    psi: &TestFunction,
    ladder: &ScaleLadder,
) -> Result<ProductEstimate> {
    f.check_same_grid(h)?;
    ladder.validate(f.grid())?;
    if ladder.count < 5 {
        return Err(FlatError::InvalidLadder("increment fit needs at least 5 scales".into()));
    }
    let scales = ladder.scales();
    let mut values = Vec::with_capacity(scales.len());
    for &eps in &scales {
        let fe = mollify(f, eps)?;
        let dh = d1(&mollify(h, eps)?, axis);
        let prod = fe.zip_map(&dh, |a, b| a * b)?;
        values.push(pair(&prod, psi)?);
    }
    let inc: Vec<f64> = values.windows(2).map(|w| (w[0] - w[1]).abs()).collect();
    let increments = fit_rate(&scales[..inc.len()], &inc)?;
    Ok(ProductEstimate { limit: *values.last().unwrap(), values, increments })
}
