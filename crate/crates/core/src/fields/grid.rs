use serde::{Deserialize, Serialize};

use crate::error::{FlatError, Result};

/// Uniform rectangular node grid. Node `(i, j)` sits at `(x0 + i*hx, y0 + j*hy)`
/// and is stored at linear index `j*nx + i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid2 {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub hx: f64,
    pub hy: f64,
}

/// Relative slack used when deciding whether two grids share nodes.
const ALIGN_TOL: f64 = 1e-9;

impl Grid2 {
    pub fn new(nx: usize, ny: usize, x0: f64, y0: f64, hx: f64, hy: f64) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(FlatError::InvalidGrid(format!(
                "need at least 3 nodes per axis, got {nx} x {ny}"
            )));
        }
        if !(hx > 0.0 && hy > 0.0 && hx.is_finite() && hy.is_finite()) {
            return Err(FlatError::InvalidGrid(format!("spacings must be positive, got {hx}, {hy}")));
        }
        if !(x0.is_finite() && y0.is_finite()) {
            return Err(FlatError::InvalidGrid("origin must be finite".into()));
        }
        Ok(Self { nx, ny, x0, y0, hx, hy })
    }

    /// Grid spanning `[x0, x1] x [y0, y1]` with `nx x ny` nodes, corners included.
    pub fn from_bounds(x0: f64, y0: f64, x1: f64, y1: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(x1 > x0 && y1 > y0) {
            return Err(FlatError::InvalidGrid(format!(
                "empty box [{x0}, {x1}] x [{y0}, {y1}]"
            )));
        }
        if nx < 2 || ny < 2 {
            return Err(FlatError::InvalidGrid(format!(
                "need at least 3 nodes per axis, got {nx} x {ny}"
            )));
        }
        Self::new(nx, ny, x0, y0, (x1 - x0) / (nx - 1) as f64, (y1 - y0) / (ny - 1) as f64)
    }

    /// Square-cell grid over a box whose spacing is exactly `h` (box is snapped
    /// outward to a whole number of cells from `(x0, y0)`).
    pub fn with_spacing(x0: f64, y0: f64, x1: f64, y1: f64, h: f64) -> Result<Self> {
        let nx = ((x1 - x0) / h).round() as usize + 1;
        let ny = ((y1 - y0) / h).round() as usize + 1;
        Self::new(nx, ny, x0, y0, h, h)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.hx
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        self.y0 + j as f64 * self.hy
    }

    #[inline]
    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        [self.x(i), self.y(j)]
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.nx - 1)
    }

    pub fn y_max(&self) -> f64 {
        self.y(self.ny - 1)
    }

    /// `[x0, y0, x1, y1]`
    pub fn bounds(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x_max(), self.y_max()]
    }

    pub fn h_max(&self) -> f64 {
        self.hx.max(self.hy)
    }

    pub fn h_min(&self) -> f64 {
        self.hx.min(self.hy)
    }

    pub fn diameter(&self) -> f64 {
        (self.x_max() - self.x0).hypot(self.y_max() - self.y0)
    }

    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }

    pub fn subgrid(&self, i0: usize, j0: usize, nx: usize, ny: usize) -> Result<Self> {
        if i0 + nx > self.nx || j0 + ny > self.ny {
            return Err(FlatError::InvalidGrid(format!(
                "subgrid ({i0}, {j0}) + {nx} x {ny} exceeds {} x {}",
                self.nx, self.ny
            )));
        }
        Self::new(nx, ny, self.x(i0), self.y(j0), self.hx, self.hy)
    }

    /// Drop `mx` nodes on each side in x and `my` in y.
    pub fn erode(&self, mx: usize, my: usize) -> Result<Self> {
        if self.nx < 2 * mx + 3 || self.ny < 2 * my + 3 {
            return Err(FlatError::InvalidGrid(format!(
                "eroding {mx} x {my} nodes leaves fewer than 3 nodes per axis of {} x {}",
                self.nx, self.ny
            )));
        }
        self.subgrid(mx, my, self.nx - 2 * mx, self.ny - 2 * my)
    }

    /// Index offset of `self`'s node (0,0) inside `outer`, if every node of `self`
    /// is also a node of `outer`.
    pub fn offset_in(&self, outer: &Grid2) -> Option<(usize, usize)> {
        let same_h = (self.hx - outer.hx).abs() <= ALIGN_TOL * outer.hx
            && (self.hy - outer.hy).abs() <= ALIGN_TOL * outer.hy;
        if !same_h {
            return None;
        }
        let fi = (self.x0 - outer.x0) / outer.hx;
        let fj = (self.y0 - outer.y0) / outer.hy;
        let (ri, rj) = (fi.round(), fj.round());
        if (fi - ri).abs() > 1e-6 || (fj - rj).abs() > 1e-6 || ri < 0.0 || rj < 0.0 {
            return None;
        }
        let (i0, j0) = (ri as usize, rj as usize);
        if i0 + self.nx > outer.nx || j0 + self.ny > outer.ny {
            return None;
        }
        Some((i0, j0))
    }

    /// Largest grid whose nodes belong to both `self` and `other`.
    pub fn intersect(&self, other: &Grid2) -> Result<Self> {
        let mismatch = || FlatError::GridMismatch(format!("{self:?} and {other:?} are not aligned"));
        if (self.hx - other.hx).abs() > ALIGN_TOL * self.hx || (self.hy - other.hy).abs() > ALIGN_TOL * self.hy {
            return Err(mismatch());
        }
        let shift_i = (other.x0 - self.x0) / self.hx;
        let shift_j = (other.y0 - self.y0) / self.hy;
        if (shift_i - shift_i.round()).abs() > 1e-6 || (shift_j - shift_j.round()).abs() > 1e-6 {
            return Err(mismatch());
        }
        let (si, sj) = (shift_i.round() as i64, shift_j.round() as i64);
        let i_lo = si.max(0);
        let j_lo = sj.max(0);
        let i_hi = (self.nx as i64).min(si + other.nx as i64);
        let j_hi = (self.ny as i64).min(sj + other.ny as i64);
        if i_hi - i_lo < 3 || j_hi - j_lo < 3 {
            return Err(FlatError::GridMismatch("grids overlap in fewer than 3 nodes per axis".into()));
        }
        self.subgrid(i_lo as usize, j_lo as usize, (i_hi - i_lo) as usize, (j_hi - j_lo) as usize)
    }

    /// Distance from `p` to the nearest edge of the bounding box (negative outside).
    pub fn inset_distance(&self, p: [f64; 2]) -> f64 {
        let [x0, y0, x1, y1] = self.bounds();
        (p[0] - x0).min(x1 - p[0]).min(p[1] - y0).min(y1 - p[1])
    }

    pub fn same_nodes(&self, other: &Grid2) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.offset_in(other) == Some((0, 0))
    }
}
