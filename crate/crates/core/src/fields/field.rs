use crate::error::{FlatError, Result};
use crate::fields::Grid2;

/// Real samples on a [`Grid2`], row-major (`j*nx + i`). All values are finite.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: Grid2,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid2, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(FlatError::GridMismatch(format!(
                "{} values for a {} x {} grid",
                values.len(),
                grid.nx,
                grid.ny
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            let (i, j) = (k % grid.nx, k / grid.nx);
            let [x, y] = grid.point(i, j);
            return Err(FlatError::NonFinite { i, j, x, y });
        }
        Ok(Self { grid, values })
    }

    /// Internal constructor for values produced by finite arithmetic on finite fields.
    pub(crate) fn from_raw(grid: Grid2, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    /// Pointwise evaluation at the grid nodes. Rejects the first node where `f`
    /// is not finite.
    pub fn from_fn(grid: Grid2, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            let y = grid.y(j);
            for i in 0..grid.nx {
                let x = grid.x(i);
                let v = f(x, y);
                if !v.is_finite() {
                    return Err(FlatError::NonFinite { i, j, x, y });
                }
                values.push(v);
            }
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid2, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    pub fn zeros(grid: Grid2) -> Self {
        Self::constant(grid, 0.0)
    }

    #[inline]
    pub fn grid(&self) -> &Grid2 {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.grid.nx + i]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let nx = self.grid.nx;
        &self.values[j * nx..(j + 1) * nx]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_grid(other)?;
        Ok(Self::from_raw(
            self.grid,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// `a*self + b*other`
    pub fn axpby(&self, a: f64, other: &ScalarField, b: f64) -> Result<Self> {
        self.zip_map(other, |x, y| a * x + b * y)
    }

    pub fn check_same_grid(&self, other: &ScalarField) -> Result<()> {
        if self.grid.same_nodes(&other.grid) {
            Ok(())
        } else {
            Err(FlatError::GridMismatch(format!("{:?} vs {:?}", self.grid, other.grid)))
        }
    }

    /// Values on `target`, whose nodes must be a subset of this field's nodes.
    pub fn restrict(&self, target: &Grid2) -> Result<Self> {
        let (i0, j0) = target.offset_in(&self.grid).ok_or_else(|| {
            FlatError::GridMismatch(format!("{target:?} is not a subgrid of {:?}", self.grid))
        })?;
        let mut values = Vec::with_capacity(target.len());
        for j in 0..target.ny {
            let start = (j + j0) * self.grid.nx + i0;
            values.extend_from_slice(&self.values[start..start + target.nx]);
        }
        Ok(Self::from_raw(*target, values))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Sup-norm over nodes at least `margin` nodes away from every edge.
    pub fn max_abs_inset(&self, margin: usize) -> f64 {
        let g = &self.grid;
        let mut m = 0.0f64;
        for j in margin..g.ny.saturating_sub(margin) {
            for i in margin..g.nx.saturating_sub(margin) {
                m = m.max(self.at(i, j).abs());
            }
        }
        m
    }

    /// Sup-norm over nodes inside the closed box `[x0, y0, x1, y1]`.
    pub fn max_abs_within(&self, [x0, y0, x1, y1]: [f64; 4]) -> f64 {
        let g = &self.grid;
        let tol = 1e-9 * g.h_max();
        let mut m = 0.0f64;
        for j in 0..g.ny {
            let y = g.y(j);
            if y < y0 - tol || y > y1 + tol {
                continue;
            }
            for i in 0..g.nx {
                let x = g.x(i);
                if x >= x0 - tol && x <= x1 + tol {
                    m = m.max(self.at(i, j).abs());
                }
            }
        }
        m
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Trapezoidal mean over the grid box.
    pub fn mean(&self) -> f64 {
        let g = &self.grid;
        let mut sum = 0.0;
        let mut wsum = 0.0;
        for j in 0..g.ny {
            let wy = if j == 0 || j == g.ny - 1 { 0.5 } else { 1.0 };
            for i in 0..g.nx {
                let wx = if i == 0 || i == g.nx - 1 { 0.5 } else { 1.0 };
                sum += wx * wy * self.at(i, j);
                wsum += wx * wy;
            }
        }
        sum / wsum
    }

    /// Trapezoidal L2 norm over the grid box.
    pub fn l2_norm(&self) -> f64 {
        let g = &self.grid;
        let mut sum = 0.0;
        for j in 0..g.ny {
            let wy = if j == 0 || j == g.ny - 1 { 0.5 } else { 1.0 };
            for i in 0..g.nx {
                let wx = if i == 0 || i == g.nx - 1 { 0.5 } else { 1.0 };
                let v = self.at(i, j);
                sum += wx * wy * v * v;
            }
        }
        (sum * g.cell_area()).sqrt()
    }

    /// Bilinear interpolation at an arbitrary point inside the grid box.
    #[inline]
    pub fn interpolate(&self, x: f64, y: f64) -> Option<f64> {
        let (k, w) = bilinear_stencil(&self.grid, x, y)?;
        Some(
            w[0] * self.values[k[0]]
                + w[1] * self.values[k[1]]
                + w[2] * self.values[k[2]]
                + w[3] * self.values[k[3]],
        )
    }
}

/// Corner indices and weights of the bilinear interpolant at `(x, y)`.
#[inline]
pub(crate) fn bilinear_stencil(g: &Grid2, x: f64, y: f64) -> Option<([usize; 4], [f64; 4])> {
    let fx = (x - g.x0) / g.hx;
    let fy = (y - g.y0) / g.hy;
    let eps = 1e-9;
    if fx < -eps || fy < -eps || fx > (g.nx - 1) as f64 + eps || fy > (g.ny - 1) as f64 + eps {
        return None;
    }
    let fx = fx.clamp(0.0, (g.nx - 1) as f64);
    let fy = fy.clamp(0.0, (g.ny - 1) as f64);
    let i = (fx.floor() as usize).min(g.nx - 2);
    let j = (fy.floor() as usize).min(g.ny - 2);
    let tx = fx - i as f64;
    let ty = fy - j as f64;
    let k00 = j * g.nx + i;
    Some((
        [k00, k00 + 1, k00 + g.nx, k00 + g.nx + 1],
        [(1.0 - tx) * (1.0 - ty), tx * (1.0 - ty), (1.0 - tx) * ty, tx * ty],
    ))
}

/// `k` scalar components sharing one grid (gradients, normals, immersions, ...).
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: Grid2,
    comps: Vec<ScalarField>,
}

impl VectorField {
    pub fn from_components(comps: Vec<ScalarField>) -> Result<Self> {
        let first = comps
            .first()
            .ok_or_else(|| FlatError::InvalidArgument("vector field needs at least one component".into()))?;
        let grid = *first.grid();
        for c in &comps[1..] {
            first.check_same_grid(c)?;
        }
        Ok(Self { grid, comps })
    }

    /// Samples `f(x, y, out)` with `out.len() == ncomp` at every node.
    pub fn from_fn(grid: Grid2, ncomp: usize, f: impl Fn(f64, f64, &mut [f64])) -> Result<Self> {
        let mut data = vec![Vec::with_capacity(grid.len()); ncomp];
        let mut buf = vec![0.0; ncomp];
        for j in 0..grid.ny {
            let y = grid.y(j);
            for i in 0..grid.nx {
                let x = grid.x(i);
                f(x, y, &mut buf);
                for (c, &v) in buf.iter().enumerate() {
                    if !v.is_finite() {
                        return Err(FlatError::NonFinite { i, j, x, y });
                    }
                    data[c].push(v);
                }
            }
        }
        Ok(Self {
            grid,
            comps: data.into_iter().map(|v| ScalarField::from_raw(grid, v)).collect(),
        })
    }

    #[inline]
    pub fn grid(&self) -> &Grid2 {
        &self.grid
    }

    #[inline]
    pub fn ncomp(&self) -> usize {
        self.comps.len()
    }

    #[inline]
    pub fn comp(&self, c: usize) -> &ScalarField {
        &self.comps[c]
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.comps
    }

    pub fn into_components(self) -> Vec<ScalarField> {
        self.comps
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Vec<f64> {
        self.comps.iter().map(|c| c.at(i, j)).collect()
    }

    pub fn restrict(&self, target: &Grid2) -> Result<Self> {
        Ok(Self {
            grid: *target,
            comps: self.comps.iter().map(|c| c.restrict(target)).collect::<Result<_>>()?,
        })
    }

    /// Concatenate the components of several fields on the same grid.
    pub fn stack(parts: &[&VectorField]) -> Result<Self> {
        let comps = parts.iter().flat_map(|p| p.comps.iter().cloned()).collect();
        Self::from_components(comps)
    }

    /// Largest component range `max - min` over the grid.
    pub fn oscillation(&self) -> f64 {
        self.comps
            .iter()
            .map(|c| {
                let (lo, hi) = c.min_max();
                hi - lo
            })
            .fold(0.0, f64::max)
    }

    /// Bilinear interpolation of every component into `out`.
    #[inline]
    pub fn interpolate_into(&self, x: f64, y: f64, out: &mut [f64]) -> bool {
        match bilinear_stencil(&self.grid, x, y) {
            Some((k, w)) => {
                for (o, c) in out.iter_mut().zip(&self.comps) {
                    let v = c.values();
                    *o = w[0] * v[k[0]] + w[1] * v[k[1]] + w[2] * v[k[2]] + w[3] * v[k[3]];
                }
                true
            }
            None => false,
        }
    }
}

/// Symmetric 2x2 matrix field with a single stored off-diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct SymField {
    pub xx: ScalarField,
    pub xy: ScalarField,
    pub yy: ScalarField,
}

impl SymField {
    pub fn new(xx: ScalarField, xy: ScalarField, yy: ScalarField) -> Result<Self> {
        xx.check_same_grid(&xy)?;
        xx.check_same_grid(&yy)?;
        Ok(Self { xx, xy, yy })
    }

    pub fn grid(&self) -> &Grid2 {
        self.xx.grid()
    }

    /// Entry `(a, b)` with `a, b` in `{0, 1}`.
    pub fn entry(&self, a: usize, b: usize) -> &ScalarField {
        match (a, b) {
            (0, 0) => &self.xx,
            (1, 1) => &self.yy,
            _ => &self.xy,
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> [f64; 3] {
        [self.xx.at(i, j), self.xy.at(i, j), self.yy.at(i, j)]
    }

    pub fn identity(grid: Grid2) -> Self {
        Self {
            xx: ScalarField::constant(grid, 1.0),
            xy: ScalarField::zeros(grid),
            yy: ScalarField::constant(grid, 1.0),
        }
    }

    pub fn det(&self) -> ScalarField {
        let g = *self.grid();
        ScalarField::from_raw(
            g,
            (0..g.len())
                .map(|k| {
                    let (a, b, c) = (self.xx.values()[k], self.xy.values()[k], self.yy.values()[k]);
                    a * c - b * b
                })
                .collect(),
        )
    }

    pub fn axpby(&self, a: f64, other: &SymField, b: f64) -> Result<Self> {
        Ok(Self {
            xx: self.xx.axpby(a, &other.xx, b)?,
            xy: self.xy.axpby(a, &other.xy, b)?,
            yy: self.yy.axpby(a, &other.yy, b)?,
        })
    }

    pub fn restrict(&self, target: &Grid2) -> Result<Self> {
        Ok(Self {
            xx: self.xx.restrict(target)?,
            xy: self.xy.restrict(target)?,
            yy: self.yy.restrict(target)?,
        })
    }

    /// Spectral norm of each node's matrix, maximized over nodes at least
    /// `margin` nodes from the edge.
    pub fn max_spectral_norm(&self, margin: usize) -> f64 {
        let g = self.grid();
        let mut m = 0.0f64;
        for j in margin..g.ny.saturating_sub(margin) {
            for i in margin..g.nx.saturating_sub(margin) {
                m = m.max(sym_spectral_norm(self.at(i, j)));
            }
        }
        m
    }

    /// Largest absolute entry over nodes at least `margin` from the edge.
    pub fn max_abs_inset(&self, margin: usize) -> f64 {
        self.xx
            .max_abs_inset(margin)
            .max(self.xy.max_abs_inset(margin))
            .max(self.yy.max_abs_inset(margin))
    }
}

/// Eigenvalues `(lo, hi)` of `[[a, b], [b, c]]`.
#[inline]
pub fn sym_eigenvalues([a, b, c]: [f64; 3]) -> (f64, f64) {
    let mean = 0.5 * (a + c);
    let rad = (0.5 * (a - c)).hypot(b);
    (mean - rad, mean + rad)
}

#[inline]
pub fn sym_spectral_norm(m: [f64; 3]) -> f64 {
    let (lo, hi) = sym_eigenvalues(m);
    lo.abs().max(hi.abs())
}
