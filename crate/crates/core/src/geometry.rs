//! Observation windows, raster covariates and midpoint quadrature.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

/// Axis-aligned rectangular observation window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Window {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let finite = [x_min, x_max, y_min, y_max].iter().all(|v| v.is_finite());
        if !finite || x_min >= x_max || y_min >= y_max {
            return Err(Error::InvalidWindow(format!(
                "[{x_min}, {x_max}] x [{y_min}, {y_max}]"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
        })
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Closed-rectangle membership.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    /// Shrinks the window by `margin` on all four sides.
    pub fn erode(&self, margin: f64) -> Result<Self> {
        if !(margin >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "erosion margin must be non-negative, got {margin}"
            )));
        }
        if 2.0 * margin >= self.width() || 2.0 * margin >= self.height() {
            return Err(Error::InvalidWindow(format!(
                "erosion by {margin} empties a {} x {} window",
                self.width(),
                self.height()
            )));
        }
        Window::new(
            self.x_min + margin,
            self.x_max - margin,
            self.y_min + margin,
            self.y_max - margin,
        )
    }

    /// Grows the window by `margin` on all four sides.
    pub fn dilate(&self, margin: f64) -> Self {
        let m = margin.max(0.0);
        Self {
            x_min: self.x_min - m,
            x_max: self.x_max + m,
            y_min: self.y_min - m,
            y_max: self.y_max + m,
        }
    }

    /// Area of `self ∩ (self + (hx, hy))`, the translation edge-correction
    /// denominator.
    pub fn overlap_area(&self, hx: f64, hy: f64) -> f64 {
        (self.width() - hx.abs()).max(0.0) * (self.height() - hy.abs()).max(0.0)
    }
}

/// Regular cell-centered raster geometry.
///
/// Cell `(ix, iy)` covers `[x0 + ix·dx, x0 + (ix+1)·dx] × [y0 + iy·dy, ...]`
/// and is stored at linear index `iy·nx + ix` (row-major by y then x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, x0: f64, y0: f64, dx: f64, dy: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidArgument("grid must have at least one cell".into()));
        }
        if !(dx > 0.0 && dy > 0.0) || !x0.is_finite() || !y0.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "invalid grid spacing ({dx}, {dy})"
            )));
        }
        Ok(Self {
            nx,
            ny,
            x0,
            y0,
            dx,
            dy,
        })
    }

    /// `nx × ny` cells exactly covering `window`.
    pub fn covering(window: &Window, nx: usize, ny: usize) -> Result<Self> {
        Grid::new(
            nx,
            ny,
            window.x_min,
            window.y_min,
            window.width() / nx as f64,
            window.height() / ny as f64,
        )
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn extent(&self) -> Window {
        Window {
            x_min: self.x0,
            x_max: self.x0 + self.nx as f64 * self.dx,
            y_min: self.y0,
            y_max: self.y0 + self.ny as f64 * self.dy,
        }
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn cell_center(&self, cell: usize) -> [f64; 2] {
        let (ix, iy) = (cell % self.nx, cell / self.nx);
        [
            self.x0 + (ix as f64 + 0.5) * self.dx,
            self.y0 + (iy as f64 + 0.5) * self.dy,
        ]
    }

    fn axis_index(coord: f64, origin: f64, step: f64, n: usize) -> Option<usize> {
        let f = (coord - origin) / step;
        let slack = 1e-9 * n as f64;
        if !(f >= -slack && f <= n as f64 + slack) {
            return None;
        }
        Some((f.floor().max(0.0) as usize).min(n - 1))
    }

    /// Cell containing `(x, y)`; points on a shared edge go to the upper cell.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<usize> {
        let ix = Self::axis_index(x, self.x0, self.dx, self.nx)?;
        let iy = Self::axis_index(y, self.y0, self.dy, self.ny)?;
        Some(self.index(ix, iy))
    }
}

/// `p` raster covariates sharing one grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateField {
    grid: Grid,
    values: Vec<Vec<f64>>,
    names: Vec<String>,
    standardized: bool,
}

impl CovariateField {
    pub fn new(grid: Grid, values: Vec<Vec<f64>>, names: Vec<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("no covariate rasters".into()));
        }
        if names.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "{} names for {} rasters",
                names.len(),
                values.len()
            )));
        }
        let n = grid.n_cells();
        if let Some((k, _)) = values.iter().enumerate().find(|(_, v)| v.len() != n) {
            return Err(Error::InvalidArgument(format!(
                "raster `{}` has {} values, grid has {n} cells",
                names[k],
                values[k].len()
            )));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite covariate value".into()));
        }
        Ok(Self {
            grid,
            values,
            names,
            standardized: false,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn p(&self) -> usize {
        self.values.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn raster(&self, k: usize) -> &[f64] {
        &self.values[k]
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// Covariate vector of the cell nearest to `(x, y)`.
    pub fn lookup(&self, x: f64, y: f64) -> Result<Vec<f64>> {
        let cell = self.grid.cell_of(x, y).ok_or(Error::OutsideGrid { x, y })?;
        Ok(self.values.iter().map(|r| r[cell]).collect())
    }

    /// Keeps the rasters at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&k| k >= self.p()) {
            return Err(Error::InvalidArgument(format!("no covariate {bad}")));
        }
        Ok(Self {
            grid: self.grid,
            values: indices.iter().map(|&k| self.values[k].clone()).collect(),
            names: indices.iter().map(|&k| self.names[k].clone()).collect(),
            standardized: self.standardized,
        })
    }
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Centers and scales every raster to mean 0 and standard deviation 1
/// (divisor-n convention).
pub fn standardize(field: &CovariateField) -> Result<CovariateField> {
    let mut values = Vec::with_capacity(field.p());
    for (raster, name) in field.values.iter().zip(&field.names) {
        let (mean, sd) = mean_sd(raster);
        if !(sd > 1e-12 * mean.abs().max(1.0)) {
            return Err(Error::ZeroVariance(name.clone()));
        }
        values.push(raster.iter().map(|v| (v - mean) / sd).collect());
    }
    Ok(CovariateField {
        grid: field.grid,
        values,
        names: field.names.clone(),
        standardized: true,
    })
}

/// Midpoint quadrature over the part of a raster inside a window.
///
/// One node per grid cell that overlaps the window, located at the cell
/// center and weighted by the overlap area, so the weights sum to the window
/// area. Covariates are rounded to single precision and stored twice:
/// column-wise in double precision (`covariate(k)[node]`) and as compact
/// zero-padded rows for the fitting kernel. Both hold the same values.
#[derive(Debug, Clone)]
pub struct QuadratureScheme {
    window: Window,
    grid: Grid,
    nodes: Vec<[f64; 2]>,
    weights: Vec<f64>,
    cells: Vec<usize>,
    covariates: Vec<Vec<f64>>,
    rows: Vec<f32>,
    stride: usize,
    cell_to_node: Vec<usize>,
}

const NO_NODE: usize = usize::MAX;

pub fn make_quadrature(field: &CovariateField, window: &Window) -> Result<QuadratureScheme> {
    let grid = field.grid;
    let ext = grid.extent();
    let tol = 1e-9 * ext.width().max(ext.height());
    if window.x_min < ext.x_min - tol
        || window.x_max > ext.x_max + tol
        || window.y_min < ext.y_min - tol
        || window.y_max > ext.y_max + tol
    {
        return Err(Error::InvalidArgument(format!(
            "grid extent {ext:?} does not cover window {window:?}"
        )));
    }

    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let mut cells = Vec::new();
    let mut cell_to_node = vec![NO_NODE; grid.n_cells()];
    let mut any_center_inside = false;
    for iy in 0..grid.ny {
        let y_lo = grid.y0 + iy as f64 * grid.dy;
        let h = (window.y_max.min(y_lo + grid.dy) - window.y_min.max(y_lo)).max(0.0);
        if h <= 0.0 {
            continue;
        }
        for ix in 0..grid.nx {
            let x_lo = grid.x0 + ix as f64 * grid.dx;
            let w = (window.x_max.min(x_lo + grid.dx) - window.x_min.max(x_lo)).max(0.0);
            if w <= 0.0 {
                continue;
            }
            let cell = grid.index(ix, iy);
            let center = grid.cell_center(cell);
            any_center_inside |= window.contains(center[0], center[1]);
            cell_to_node[cell] = nodes.len();
            nodes.push(center);
            weights.push(w * h);
            cells.push(cell);
        }
    }
    if !any_center_inside {
        return Err(Error::EmptyQuadrature);
    }
    let p = field.values.len();
    let stride = p.div_ceil(8).max(1) * 8;
    let mut rows = vec![0.0f32; stride * cells.len()];
    for (node, &c) in cells.iter().enumerate() {
        for (k, r) in field.values.iter().enumerate() {
            rows[node * stride + k] = r[c] as f32;
        }
    }
    let covariates = (0..p)
        .map(|k| (0..cells.len()).map(|j| f64::from(rows[j * stride + k])).collect())
        .collect();
    Ok(QuadratureScheme {
        window: *window,
        grid,
        nodes,
        weights,
        cells,
        covariates,
        rows,
        stride,
        cell_to_node,
    })
}

impl QuadratureScheme {
    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn p(&self) -> usize {
        self.covariates.len()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Grid cell index of every node.
    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn covariate(&self, k: usize) -> &[f64] {
        &self.covariates[k]
    }

    pub fn covariates(&self) -> &[Vec<f64>] {
        &self.covariates
    }

    /// Row-major single-precision covariates, `stride` entries per node
    /// with zeros after the first `p`.
    pub(crate) fn compact_rows(&self) -> (&[f32], usize) {
        (&self.rows, self.stride)
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Node whose cell contains `(x, y)`. Points on a cell edge that
    /// touches the window boundary fall back to the neighbouring cell that
    /// actually overlaps the window.
    pub fn node_of(&self, x: f64, y: f64) -> Option<usize> {
        let g = &self.grid;
        let cell = g.cell_of(x, y)?;
        let (ix, iy) = (cell % g.nx, cell / g.nx);
        for (ddx, ddy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            if ix < ddx || iy < ddy {
                continue;
            }
            let (cx, cy) = (ix - ddx, iy - ddy);
            let node = self.cell_to_node[g.index(cx, cy)];
            if node == NO_NODE {
                continue;
            }
            let x_lo = g.x0 + cx as f64 * g.dx;
            let y_lo = g.y0 + cy as f64 * g.dy;
            let eps = 1e-9 * (g.dx + g.dy);
            if x >= x_lo - eps && x <= x_lo + g.dx + eps && y >= y_lo - eps && y <= y_lo + g.dy + eps
            {
                return Some(node);
            }
        }
        None
    }
}

/// Finite set of points inside a window.
#[derive(Debug, Clone, PartialEq)]
pub struct PointPattern {
    points: Vec<[f64; 2]>,
    window: Window,
}

impl PointPattern {
    pub fn new(points: Vec<[f64; 2]>, window: Window) -> Result<Self> {
        if let Some(p) = points.iter().find(|p| !window.contains(p[0], p[1])) {
            return Err(Error::InvalidArgument(format!(
                "point ({}, {}) lies outside the window",
                p[0], p[1]
            )));
        }
        Ok(Self { points, window })
    }

    /// Caller guarantees every point lies in `window`.
    pub(crate) fn from_trusted(points: Vec<[f64; 2]>, window: Window) -> Self {
        debug_assert!(points.iter().all(|p| window.contains(p[0], p[1])));
        Self { points, window }
    }

    pub fn empty(window: Window) -> Self {
        Self {
            points: Vec::new(),
            window,
        }
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points inside `window`, re-windowed.
    pub fn restrict(&self, window: &Window) -> Self {
        Self {
            points: self
                .points
                .iter()
                .copied()
                .filter(|p| window.contains(p[0], p[1]))
                .collect(),
            window: *window,
        }
    }
}

fn gaussian_kernel(sd_cells: f64) -> Vec<f64> {
    if sd_cells <= 0.0 {
        return vec![1.0];
    }
    let half = (3.0 * sd_cells).ceil() as isize;
    let k: Vec<f64> = (-half..=half)
        .map(|i| (-0.5 * (i as f64 / sd_cells).powi(2)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Smooth standardized random rasters: white noise low-pass filtered by a
/// separable Gaussian so that the correlation at distance `smoothness` is
/// about e⁻¹. Pure function of its arguments.
pub fn synth_covariates(
    seed: u64,
    p: usize,
    grid: &Grid,
    smoothness: f64,
) -> Result<CovariateField> {
    if p == 0 {
        return Err(Error::InvalidArgument("p must be at least 1".into()));
    }
    if !(smoothness >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "smoothness must be non-negative, got {smoothness}"
        )));
    }
    let kx = gaussian_kernel(0.5 * smoothness / grid.dx);
    let ky = gaussian_kernel(0.5 * smoothness / grid.dy);
    let (hx, hy) = (kx.len() / 2, ky.len() / 2);
    let (px, py) = (grid.nx + 2 * hx, grid.ny + 2 * hy);

    let mut values = Vec::with_capacity(p);
    for k in 0..p {
        let mut rng = rng::stream(seed, k as u64);
        let noise: Vec<f64> = (0..px * py).map(|_| StandardNormal.sample(&mut rng)).collect();
        // Filter along x: rows shrink from px to nx.
        let mut tmp = vec![0.0; grid.nx * py];
        for iy in 0..py {
            let row = &noise[iy * px..(iy + 1) * px];
            for ix in 0..grid.nx {
                tmp[iy * grid.nx + ix] = kx.iter().zip(&row[ix..]).map(|(a, b)| a * b).sum();
            }
        }
        // Filter along y.
        let mut out = vec![0.0; grid.n_cells()];
        for iy in 0..grid.ny {
            for ix in 0..grid.nx {
                out[iy * grid.nx + ix] = ky
                    .iter()
                    .enumerate()
                    .map(|(j, w)| w * tmp[(iy + j) * grid.nx + ix])
                    .sum();
            }
        }
        values.push(out);
    }
    let names = (1..=p).map(|k| format!("z{k}")).collect();
    standardize(&CovariateField::new(*grid, values, names)?)
}
