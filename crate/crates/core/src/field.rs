//! Cell-centered scalar fields on uniform 1D/2D grids, with forward-difference
//! gradient, its negative adjoint (divergence), discrete total variation and
//! dyadic block averaging.
//!
//! The gradient of a cell lives on the edge to its successor along each axis.
//! Edges that leave the domain, or touch a masked-out cell, carry no flux: the
//! gradient is zero there and a [`DualField`] must vanish there. This is the
//! discrete form of the Neumann condition `[z, nu] = 0`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{DecompError, Result};

/// Per-cell norm used for `|grad u|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TvMode {
    /// Euclidean norm of the gradient vector.
    #[default]
    Isotropic,
    /// Sum of absolute components.
    Anisotropic,
}

impl TvMode {
    /// Norm of a per-cell vector under this mode.
    #[inline]
    pub fn cell_norm(self, g: &[f64]) -> f64 {
        match self {
            TvMode::Isotropic => g.iter().map(|x| x * x).sum::<f64>().sqrt(),
            TvMode::Anisotropic => g.iter().map(|x| x.abs()).sum(),
        }
    }

    /// Dual norm of a per-cell vector (the norm the dual variable is bounded in).
    #[inline]
    pub fn dual_cell_norm(self, z: &[f64]) -> f64 {
        match self {
            TvMode::Isotropic => z.iter().map(|x| x * x).sum::<f64>().sqrt(),
            TvMode::Anisotropic => z.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }
}

impl std::str::FromStr for TvMode {
    type Err = DecompError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iso" | "isotropic" => Ok(TvMode::Isotropic),
            "aniso" | "anisotropic" => Ok(TvMode::Anisotropic),
            other => Err(DecompError::InvalidParameter(format!(
                "unknown tv mode {other:?} (expected iso or aniso)"
            ))),
        }
    }
}

/// Neumaier-compensated accumulator. Reductions go through it in row-major order.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::default();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

pub(crate) fn csum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().value()
}

/// Geometry of a uniform grid: shape, spacing, physical origin and an optional
/// activity mask. 1D grids store their trailing axis as length 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dims: usize,
    shape: [usize; 2],
    spacing: [f64; 2],
    origin: [f64; 2],
    mask: Option<Arc<[bool]>>,
}

impl Grid {
    /// `n` cells on `[0, 1]`.
    pub fn new_1d(n: usize) -> Result<Self> {
        Self::new(&[n])
    }

    /// `n0 x n1` cells on `[0, 1]^2`, row-major with axis 0 as rows.
    pub fn new_2d(n0: usize, n1: usize) -> Result<Self> {
        Self::new(&[n0, n1])
    }

    pub fn new(shape: &[usize]) -> Result<Self> {
        match shape {
            [n] if *n >= 1 => Ok(Grid {
                dims: 1,
                shape: [*n, 1],
                spacing: [1.0 / *n as f64, 1.0],
                origin: [0.0; 2],
                mask: None,
            }),
            [n0, n1] if *n0 >= 1 && *n1 >= 1 => Ok(Grid {
                dims: 2,
                shape: [*n0, *n1],
                spacing: [1.0 / *n0 as f64, 1.0 / *n1 as f64],
                origin: [0.0; 2],
                mask: None,
            }),
            _ => Err(DecompError::InvalidGrid(format!(
                "shape {shape:?} must have 1 or 2 positive entries"
            ))),
        }
    }

    /// Rescale the grid to cover `[origin, origin + extent]` per axis.
    pub fn with_extent(mut self, origin: &[f64], extent: &[f64]) -> Result<Self> {
        if origin.len() != self.dims || extent.len() != self.dims {
            return Err(DecompError::InvalidGrid(format!(
                "extent/origin must have {} entries",
                self.dims
            )));
        }
        for a in 0..self.dims {
            if !(extent[a] > 0.0 && extent[a].is_finite() && origin[a].is_finite()) {
                return Err(DecompError::InvalidGrid(format!(
                    "extent {} on axis {a} must be positive and finite",
                    extent[a]
                )));
            }
            self.spacing[a] = extent[a] / self.shape[a] as f64;
            self.origin[a] = origin[a];
        }
        Ok(self)
    }

    /// Restrict the domain to the cells flagged `true`.
    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.len() {
            return Err(DecompError::ShapeMismatch {
                expected: vec![self.len()],
                got: vec![mask.len()],
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(DecompError::InvalidGrid("mask has no active cells".into()));
        }
        self.mask = Some(mask.into());
        Ok(self)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Shape with one entry per dimension.
    pub fn shape(&self) -> &[usize] {
        &self.shape[..self.dims]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dims]
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin[..self.dims]
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn len(&self) -> usize {
        self.shape[0] * self.shape[1]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `h^d`, the measure of one cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    /// Measure of the active part of the domain.
    pub fn domain_measure(&self) -> f64 {
        self.active_count() as f64 * self.cell_volume()
    }

    pub fn active_count(&self) -> usize {
        match &self.mask {
            Some(m) => m.iter().filter(|&&x| x).count(),
            None => self.len(),
        }
    }

    #[inline]
    pub fn is_active(&self, cell: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[cell])
    }

    #[inline]
    fn stride(&self, axis: usize) -> usize {
        if axis == 0 {
            self.shape[1]
        } else {
            1
        }
    }

    #[inline]
    fn coord(&self, cell: usize, axis: usize) -> usize {
        if axis == 0 {
            cell / self.shape[1]
        } else {
            cell % self.shape[1]
        }
    }

    /// Whether the edge from `cell` to its successor along `axis` is interior.
    #[inline]
    pub fn edge_active(&self, axis: usize, cell: usize) -> bool {
        if self.coord(cell, axis) + 1 >= self.shape[axis] {
            return false;
        }
        match &self.mask {
            None => true,
            Some(m) => m[cell] && m[cell + self.stride(axis)],
        }
    }

    /// Physical coordinates of a cell center.
    pub fn center(&self, cell: usize) -> Vec<f64> {
        (0..self.dims)
            .map(|a| self.origin[a] + (self.coord(cell, a) as f64 + 0.5) * self.spacing[a])
            .collect()
    }

    /// Same shape, spacing and mask.
    pub fn same_as(&self, other: &Grid) -> bool {
        self == other
    }

    fn edge_flags(&self) -> Vec<Vec<bool>> {
        (0..self.dims)
            .map(|a| (0..self.len()).map(|c| self.edge_active(a, c)).collect())
            .collect()
    }
}

/// Scalar field sampled at cell centers. Values of masked-out cells are kept
/// at zero and ignored by every reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    grid: Grid,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: Grid, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(DecompError::ShapeMismatch {
                expected: grid.shape().to_vec(),
                got: vec![values.len()],
            });
        }
        for (i, v) in values.iter_mut().enumerate() {
            if !grid.is_active(i) {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(DecompError::NonFinite(i));
            }
        }
        Ok(GridField { grid, values })
    }

    /// 1D field on `[0, 1]` from raw values.
    pub fn from_1d(values: Vec<f64>) -> Result<Self> {
        let grid = Grid::new_1d(values.len())?;
        Self::new(grid, values)
    }

    pub fn zeros(grid: Grid) -> Self {
        let n = grid.len();
        GridField { grid, values: vec![0.0; n] }
    }

    pub fn constant(grid: Grid, c: f64) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, vec![c; n])
    }

    /// Sample `f` at every active cell center.
    pub fn sample(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.len())
            .map(|c| if grid.is_active(c) { f(&grid.center(c)) } else { 0.0 })
            .collect();
        Self::new(grid, values)
    }

    pub(crate) fn from_parts_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(grid.len(), values.len());
        GridField { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Elementwise combination `a*self + b*other` on the same grid.
    pub fn axpby(&self, a: f64, other: &GridField, b: f64) -> Result<GridField> {
        self.check_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        GridField::new(self.grid.clone(), values)
    }

    pub fn sub(&self, other: &GridField) -> Result<GridField> {
        self.axpby(1.0, other, -1.0)
    }

    pub fn add(&self, other: &GridField) -> Result<GridField> {
        self.axpby(1.0, other, 1.0)
    }

    pub fn scale(&self, s: f64) -> GridField {
        let values = self.values.iter().map(|x| s * x).collect();
        GridField { grid: self.grid.clone(), values }
    }

    /// Add a constant on the active cells.
    pub fn shift(&self, c: f64) -> GridField {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, x)| if self.grid.is_active(i) { x + c } else { 0.0 })
            .collect();
        GridField { grid: self.grid.clone(), values }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<GridField> {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &x)| if self.grid.is_active(i) { f(x) } else { 0.0 })
            .collect();
        GridField::new(self.grid.clone(), values)
    }

    pub(crate) fn check_grid(&self, other: &GridField) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(DecompError::ShapeMismatch {
                expected: self.grid.shape().to_vec(),
                got: other.grid.shape().to_vec(),
            })
        }
    }

    fn active_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| self.grid.is_active(*i))
            .map(|(_, &v)| v)
    }

    /// Grid-weighted inner product `sum u w h^d`.
    pub fn dot(&self, other: &GridField) -> Result<f64> {
        self.check_grid(other)?;
        Ok(csum(self.values.iter().zip(&other.values).map(|(a, b)| a * b)) * self.grid.cell_volume())
    }

    pub fn l2_norm(&self) -> f64 {
        (csum(self.active_values().map(|v| v * v)) * self.grid.cell_volume()).sqrt()
    }

    /// `(sum |u|^p h^d)^(1/p)`; `p = inf` gives the sup over active cells.
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        if p.is_nan() || p < 1.0 {
            return Err(DecompError::InvalidParameter(format!("lp norm needs p >= 1, got {p}")));
        }
        if p.is_infinite() {
            return Ok(self.sup_norm());
        }
        if p == 2.0 {
            return Ok(self.l2_norm());
        }
        let s = csum(self.active_values().map(|v| v.abs().powf(p))) * self.grid.cell_volume();
        Ok(s.powf(1.0 / p))
    }

    pub fn sup_norm(&self) -> f64 {
        self.active_values().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Average over the active domain.
    pub fn mean(&self) -> f64 {
        csum(self.active_values()) / self.grid.active_count() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.active_values()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }

    /// Oscillation `max - min` over the active cells.
    pub fn range(&self) -> f64 {
        let (lo, hi) = self.min_max();
        hi - lo
    }
}

/// Edge-based vector field `z`, one component per axis stored at the cell
/// whose forward edge it lives on. Components on boundary or masked edges are
/// exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DualField {
    grid: Grid,
    axes: Vec<Vec<f64>>,
}

impl DualField {
    pub fn zeros(grid: Grid) -> Self {
        let axes = vec![vec![0.0; grid.len()]; grid.dims()];
        DualField { grid, axes }
    }

    /// Build from per-axis components, rejecting nonzero flux through the boundary.
    pub fn new(grid: Grid, axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.len() != grid.dims() || axes.iter().any(|c| c.len() != grid.len()) {
            return Err(DecompError::ShapeMismatch {
                expected: vec![grid.dims(), grid.len()],
                got: vec![axes.len(), axes.first().map_or(0, Vec::len)],
            });
        }
        for (a, comp) in axes.iter().enumerate() {
            for (c, &value) in comp.iter().enumerate() {
                if !value.is_finite() {
                    return Err(DecompError::NonFinite(c));
                }
                if value != 0.0 && !grid.edge_active(a, c) {
                    return Err(DecompError::BoundaryComponent { axis: a, cell: c, value });
                }
            }
        }
        Ok(DualField { grid, axes })
    }

    pub(crate) fn from_parts_unchecked(grid: Grid, axes: Vec<Vec<f64>>) -> Self {
        DualField { grid, axes }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        &self.axes[axis]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.axes
    }

    /// Vector at one cell.
    pub fn at(&self, cell: usize) -> Vec<f64> {
        self.axes.iter().map(|c| c[cell]).collect()
    }

    /// `sup_cells |z(cell)|` in the dual norm of `mode`.
    pub fn sup_norm(&self, mode: TvMode) -> f64 {
        let mut buf = [0.0; 2];
        let d = self.axes.len();
        (0..self.grid.len()).fold(0.0, |m, c| {
            for a in 0..d {
                buf[a] = self.axes[a][c];
            }
            m.max(mode.dual_cell_norm(&buf[..d]))
        })
    }

    /// `sum_cells z . w h^d`.
    pub fn dot(&self, other: &DualField) -> Result<f64> {
        if !self.grid.same_as(&other.grid) {
            return Err(DecompError::ShapeMismatch {
                expected: self.grid.shape().to_vec(),
                got: other.grid.shape().to_vec(),
            });
        }
        let s = csum(
            self.axes
                .iter()
                .zip(&other.axes)
                .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y)),
        );
        Ok(s * self.grid.cell_volume())
    }

    pub fn scale(&self, s: f64) -> DualField {
        let axes = self.axes.iter().map(|c| c.iter().map(|x| s * x).collect()).collect();
        DualField { grid: self.grid.clone(), axes }
    }
}

/// Precomputed edge flags and spacings for the hot loops of iterative solvers.
#[derive(Debug, Clone)]
pub(crate) struct Stencil {
    pub dims: usize,
    pub len: usize,
    pub strides: [usize; 2],
    pub inv_h: [f64; 2],
    pub edges: Vec<Vec<bool>>,
    pub cell_volume: f64,
}

impl Stencil {
    pub fn new(grid: &Grid) -> Self {
        Stencil {
            dims: grid.dims(),
            len: grid.len(),
            strides: [grid.stride(0), grid.stride(1)],
            inv_h: [1.0 / grid.spacing[0], 1.0 / grid.spacing[1]],
            edges: grid.edge_flags(),
            cell_volume: grid.cell_volume(),
        }
    }

    /// Forward differences along each axis, zero on inactive edges.
    pub fn grad_into(&self, u: &[f64], out: &mut [Vec<f64>]) {
        for a in 0..self.dims {
            let s = self.strides[a];
            let ih = self.inv_h[a];
            let edges = &self.edges[a];
            let o = &mut out[a];
            for c in 0..self.len {
                o[c] = if edges[c] { (u[c + s] - u[c]) * ih } else { 0.0 };
            }
        }
    }

    /// Negative adjoint of `grad_into` under the `h^d`-weighted inner products.
    pub fn div_into(&self, z: &[Vec<f64>], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for a in 0..self.dims {
            let s = self.strides[a];
            let ih = self.inv_h[a];
            let za = &z[a];
            for c in 0..self.len {
                let prev = if c >= s && self.edges[a][c - s] { za[c - s] } else { 0.0 };
                out[c] += (za[c] - prev) * ih;
            }
        }
    }
}

/// Discrete gradient: forward differences over `h`, zero on boundary edges.
pub fn grad(u: &GridField) -> DualField {
    let st = Stencil::new(&u.grid);
    let mut axes = vec![vec![0.0; st.len]; st.dims];
    st.grad_into(&u.values, &mut axes);
    DualField::from_parts_unchecked(u.grid.clone(), axes)
}

/// Discrete divergence, the negative adjoint of [`grad`].
pub fn div(z: &DualField) -> GridField {
    let st = Stencil::new(&z.grid);
    let mut out = vec![0.0; st.len];
    st.div_into(&z.axes, &mut out);
    GridField::from_parts_unchecked(z.grid.clone(), out)
}

/// `sum_cells |grad u| h^d`.
pub fn discrete_tv(u: &GridField, mode: TvMode) -> f64 {
    let g = grad(u);
    tv_of_grad(&g, mode)
}

pub(crate) fn tv_of_grad(g: &DualField, mode: TvMode) -> f64 {
    let d = g.axes.len();
    let mut buf = [0.0; 2];
    let s = csum((0..g.grid.len()).map(|c| {
        for a in 0..d {
            buf[a] = g.axes[a][c];
        }
        mode.cell_norm(&buf[..d])
    }));
    s * g.grid.cell_volume()
}

/// L2 projection onto piecewise constants on dyadic blocks of side `2^-level`
/// (relative to the grid extent). The result lives on a `2^level`-per-axis grid.
pub fn project_to_level(u: &GridField, level: u32) -> Result<GridField> {
    let grid = &u.grid;
    if grid.mask.is_some() {
        return Err(DecompError::Unsupported("dyadic projection of masked fields".into()));
    }
    let target = 1usize
        .checked_shl(level)
        .filter(|t| *t <= (1 << 30))
        .ok_or_else(|| DecompError::Level { level, shape: grid.shape().to_vec() })?;
    if grid.shape().iter().any(|&n| n % target != 0) {
        return Err(DecompError::Level { level, shape: grid.shape().to_vec() });
    }
    let shape: Vec<usize> = vec![target; grid.dims];
    let extent: Vec<f64> = (0..grid.dims).map(|a| grid.spacing[a] * grid.shape[a] as f64).collect();
    let coarse = Grid::new(&shape)?.with_extent(grid.origin(), &extent)?;
    let b0 = grid.shape[0] / target;
    let b1 = if grid.dims == 2 { grid.shape[1] / target } else { 1 };
    let n1 = grid.shape[1];
    let c1 = if grid.dims == 2 { target } else { 1 };
    let mut values = vec![0.0; coarse.len()];
    for (k, out) in values.iter_mut().enumerate() {
        let (bi, bj) = (k / c1, k % c1);
        let acc = csum((0..b0).flat_map(|i| {
            let row = (bi * b0 + i) * n1 + bj * b1;
            u.values[row..row + b1].iter().copied()
        }));
        *out = acc / (b0 * b1) as f64;
    }
    GridField::new(coarse, values)
}
