//! Periodic grids on the flat torus, finite-difference operators and the
//! discrete counterparts of the parabolic norms used by the fixed-point
//! iteration.
//!
//! Space is the unit cube `[0,1)^dim` with periodic identification, sampled at
//! `x_i = i / n`. Neighbour lookups wrap by integer arithmetic modulo `n`, so
//! coordinates never accumulate floating wrap-around error. All operators are
//! second-order central differences.

use crate::error::{Error, Result};

/// Point of the torus. In one dimension the second component is zero.
pub type Point = [f64; 2];
/// Gradient-like quantity. Unused components are zero in one dimension.
pub type Vector = [f64; 2];
/// Symmetric 2x2 matrix (Hessians, diffusion coefficients).
pub type Matrix = [[f64; 2]; 2];

pub const ZERO_MATRIX: Matrix = [[0.0; 2]; 2];
pub const IDENTITY: Matrix = [[1.0, 0.0], [0.0, 1.0]];

pub fn euclidean(v: &Vector) -> f64 {
    v[0].hypot(v[1])
}

pub fn frobenius(m: &Matrix) -> f64 {
    (m[0][0] * m[0][0] + m[0][1] * m[0][1] + m[1][0] * m[1][0] + m[1][1] * m[1][1]).sqrt()
}

pub fn scaled(m: &Matrix, s: f64) -> Matrix {
    [[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]]
}

/// `sum_ij a_ij b_ij`
pub fn contract(a: &Matrix, b: &Matrix) -> f64 {
    a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
}

pub fn dot(a: &Vector, b: &Vector) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Smallest eigenvalue of a symmetric 2x2 matrix restricted to the first `dim` axes.
pub fn min_eigenvalue(m: &Matrix, dim: usize) -> f64 {
    if dim == 1 {
        return m[0][0];
    }
    let mean = 0.5 * (m[0][0] + m[1][1]);
    let half_diff = 0.5 * (m[0][0] - m[1][1]);
    let off = 0.5 * (m[0][1] + m[1][0]);
    mean - half_diff.hypot(off)
}

/// Spatial part of a grid: `n` points per axis on the unit torus of dimension `dim`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SpaceGrid {
    dim: usize,
    n: usize,
}

impl SpaceGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidGrid(format!("dimension must be 1 or 2, got {dim}")));
        }
        if n < 8 {
            return Err(Error::InvalidGrid(format!("need at least 8 points per axis, got {n}")));
        }
        Ok(Self { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Total number of grid points, `n^dim`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Quadrature weight `h^dim`; the cell volumes sum to the torus volume 1.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Multi-index of a flat index. The first axis varies fastest.
    pub fn split(&self, idx: usize) -> [usize; 2] {
        if self.dim == 1 {
            [idx, 0]
        } else {
            [idx % self.n, idx / self.n]
        }
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        if self.dim == 1 {
            ix
        } else {
            ix + self.n * iy
        }
    }

    pub fn point(&self, idx: usize) -> Point {
        let [ix, iy] = self.split(idx);
        let n = self.n as f64;
        if self.dim == 1 {
            [ix as f64 / n, 0.0]
        } else {
            [ix as f64 / n, iy as f64 / n]
        }
    }

    /// Index of the neighbour `offset` cells away along `axis`, wrapping periodically.
    pub fn shift(&self, idx: usize, axis: usize, offset: isize) -> usize {
        let mut multi = self.split(idx);
        let n = self.n as isize;
        multi[axis] = (multi[axis] as isize + offset).rem_euclid(n) as usize;
        self.index(multi[0], multi[1])
    }

    /// Central-difference gradient at one grid point.
    pub fn grad_at(&self, values: &[f64], idx: usize) -> Vector {
        let scale = 0.5 * self.n as f64;
        let mut g = [0.0; 2];
        for (axis, gi) in g.iter_mut().enumerate().take(self.dim) {
            *gi = (values[self.shift(idx, axis, 1)] - values[self.shift(idx, axis, -1)]) * scale;
        }
        g
    }

    /// Second-order Hessian at one grid point: 3-point diagonal, 4-point cross stencil.
    pub fn hess_at(&self, values: &[f64], idx: usize) -> Matrix {
        let inv_h2 = (self.n * self.n) as f64;
        let centre = values[idx];
        let mut h = ZERO_MATRIX;
        for axis in 0..self.dim {
            h[axis][axis] = (values[self.shift(idx, axis, 1)] - 2.0 * centre
                + values[self.shift(idx, axis, -1)])
                * inv_h2;
        }
        if self.dim == 2 {
            let xp = self.shift(idx, 0, 1);
            let xm = self.shift(idx, 0, -1);
            let cross = values[self.shift(xp, 1, 1)] - values[self.shift(xp, 1, -1)]
                - values[self.shift(xm, 1, 1)]
                + values[self.shift(xm, 1, -1)];
            let v = 0.25 * cross * inv_h2;
            h[0][1] = v;
            h[1][0] = v;
        }
        h
    }
}

/// Space-time grid `T^dim x [0, T]` with `nt` uniform steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TorusGrid {
    space: SpaceGrid,
    nt: usize,
    horizon: f64,
}

impl TorusGrid {
    pub fn new(dim: usize, n: usize, nt: usize, horizon: f64) -> Result<Self> {
        Self::from_space(SpaceGrid::new(dim, n)?, nt, horizon)
    }

    pub fn from_space(space: SpaceGrid, nt: usize, horizon: f64) -> Result<Self> {
        if nt < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 time steps, got {nt}")));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self { space, nt, horizon })
    }

    pub fn space(&self) -> SpaceGrid {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim
    }

    pub fn n(&self) -> usize {
        self.space.n
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.nt as f64
    }

    pub fn spacing(&self) -> f64 {
        self.space.spacing()
    }

    /// Time of slice `j`; slice `nt` is exactly the horizon.
    pub fn time(&self, j: usize) -> f64 {
        if j == self.nt {
            self.horizon
        } else {
            self.horizon * j as f64 / self.nt as f64
        }
    }

    pub fn slices(&self) -> usize {
        self.nt + 1
    }
}

/// Scalar samples on the spatial grid at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    space: SpaceGrid,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(space: SpaceGrid) -> Self {
        Self { space, values: vec![0.0; space.len()] }
    }

    pub fn constant(space: SpaceGrid, c: f64) -> Self {
        Self { space, values: vec![c; space.len()] }
    }

    pub fn from_values(space: SpaceGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.len() {
            return Err(Error::InvalidGrid(format!(
                "field needs {} values, got {}",
                space.len(),
                values.len()
            )));
        }
        Ok(Self { space, values })
    }

    pub fn from_fn(space: SpaceGrid, f: impl Fn(Point) -> f64) -> Self {
        let values = (0..space.len()).map(|i| f(space.point(i))).collect();
        Self { space, values }
    }

    pub fn space(&self) -> SpaceGrid {
        self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { space: self.space, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()))
    }

    /// Quadrature of the field over the torus.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.space.cell_volume()
    }

    pub fn max_gradient(&self) -> f64 {
        (0..self.space.len())
            .map(|i| euclidean(&self.space.grad_at(&self.values, i)))
            .fold(0.0, f64::max)
    }

    pub fn max_hessian(&self) -> f64 {
        (0..self.space.len())
            .map(|i| frobenius(&self.space.hess_at(&self.values, i)))
            .fold(0.0, f64::max)
    }

    /// Discrete `|f|^(1)`: sup of `|f|` plus sup of `|Df|`.
    pub fn norm_c1(&self) -> f64 {
        self.max_abs() + self.max_gradient()
    }

    /// Discrete `|f|^(2)`: `|f|^(1)` plus sup of the Frobenius norm of `D^2 f`.
    pub fn norm_c2(&self) -> f64 {
        self.norm_c1() + self.max_hessian()
    }

    pub fn sub(&self, other: &Field) -> Field {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Field { space: self.space, values }
    }
}

/// Gradient components of a field, one per axis.
pub fn gradient(f: &Field) -> Vec<Field> {
    let space = f.space;
    (0..space.dim)
        .map(|axis| {
            let values = (0..space.len())
                .map(|i| space.grad_at(&f.values, i)[axis])
                .collect();
            Field { space, values }
        })
        .collect()
}

/// Hessian of a field stored as its upper triangle, so the result is symmetric by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct HessianField {
    dim: usize,
    upper: Vec<Field>,
}

impl HessianField {
    pub fn get(&self, i: usize, j: usize) -> &Field {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        // upper triangle in row order: (0,0), (0,1), (1,1)
        let pos = if self.dim == 1 { 0 } else { a * 2 + b - a };
        &self.upper[pos]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

pub fn hessian(f: &Field) -> HessianField {
    let space = f.space;
    let pairs: &[(usize, usize)] = if space.dim == 1 { &[(0, 0)] } else { &[(0, 0), (0, 1), (1, 1)] };
    let upper = pairs
        .iter()
        .map(|&(a, b)| {
            let values = (0..space.len()).map(|i| space.hess_at(&f.values, i)[a][b]).collect();
            Field { space, values }
        })
        .collect();
    HessianField { dim: space.dim, upper }
}

/// Samples on every time slice `0..=nt` of a [`TorusGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl SpaceTimeField {
    pub fn zeros(grid: TorusGrid) -> Self {
        Self { grid, values: vec![0.0; grid.slices() * grid.space.len()] }
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn(Point, f64) -> f64) -> Self {
        let space = grid.space;
        let mut values = Vec::with_capacity(grid.slices() * space.len());
        for j in 0..grid.slices() {
            let t = grid.time(j);
            values.extend((0..space.len()).map(|i| f(space.point(i), t)));
        }
        Self { grid, values }
    }

    /// Field repeated on every time slice.
    pub fn constant_in_time(grid: TorusGrid, field: &Field) -> Self {
        let mut values = Vec::with_capacity(grid.slices() * field.values.len());
        for _ in 0..grid.slices() {
            values.extend_from_slice(&field.values);
        }
        Self { grid, values }
    }

    pub fn from_slices(grid: TorusGrid, slices: Vec<Vec<f64>>) -> Result<Self> {
        if slices.len() != grid.slices() {
            return Err(Error::InvalidGrid(format!(
                "expected {} slices, got {}",
                grid.slices(),
                slices.len()
            )));
        }
        let len = grid.space.len();
        let mut values = Vec::with_capacity(grid.slices() * len);
        for s in slices {
            if s.len() != len {
                return Err(Error::InvalidGrid("slice length mismatch".into()));
            }
            values.extend(s);
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slice(&self, j: usize) -> &[f64] {
        let len = self.grid.space.len();
        &self.values[j * len..(j + 1) * len]
    }

    pub fn slice_mut(&mut self, j: usize) -> &mut [f64] {
        let len = self.grid.space.len();
        &mut self.values[j * len..(j + 1) * len]
    }

    pub fn field(&self, j: usize) -> Field {
        Field { space: self.grid.space, values: self.slice(j).to_vec() }
    }

    pub fn set_slice(&mut self, j: usize, values: &[f64]) {
        self.slice_mut(j).copy_from_slice(values);
    }

    /// Same samples with slice order reversed (`t -> T - t`).
    pub fn time_reversed(&self) -> Self {
        let len = self.grid.space.len();
        let mut values = Vec::with_capacity(self.values.len());
        for chunk in self.values.chunks(len).rev() {
            values.extend_from_slice(chunk);
        }
        Self { grid: self.grid, values }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()))
    }

    pub fn max_gradient(&self) -> f64 {
        let space = self.grid.space;
        (0..self.grid.slices())
            .map(|j| {
                let s = self.slice(j);
                (0..space.len()).map(|i| euclidean(&space.grad_at(s, i))).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    pub fn sub(&self, other: &SpaceTimeField) -> SpaceTimeField {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        SpaceTimeField { grid: self.grid, values }
    }

    pub fn scale(&self, c: f64) -> SpaceTimeField {
        SpaceTimeField { grid: self.grid, values: self.values.iter().map(|v| v * c).collect() }
    }

    /// `(1 - w) * self + w * other`
    pub fn blend(&self, other: &SpaceTimeField, w: f64) -> SpaceTimeField {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (1.0 - w) * a + w * b)
            .collect();
        SpaceTimeField { grid: self.grid, values }
    }
}

/// Discrete `|f|^(1)_{Q_T}`: sup of `|f|` plus sup of `|Df|` over all slices.
pub fn norm_c10(f: &SpaceTimeField) -> f64 {
    f.max_abs() + f.max_gradient()
}

/// Discrete parabolic Sobolev norm
/// `(sum_Q w (|f|^p + |Df|^p + |D^2 f|^p + |f_t|^p))^(1/p)` with `w = h^dim dt`.
///
/// Time quadrature is the left rectangle rule over slices `0..nt`, so the
/// weights add up to the measure `T` of the cylinder; `f_t` at slice `j` is the
/// forward difference `(f_{j+1} - f_j) / dt`.
pub fn norm_w21p(f: &SpaceTimeField, p: f64) -> f64 {
    let grid = f.grid;
    let space = grid.space;
    let dt = grid.dt();
    let inv_dt = 1.0 / dt;
    let mut sum = 0.0;
    for j in 0..grid.nt {
        let now = f.slice(j);
        let next = f.slice(j + 1);
        let mut slice_sum = 0.0;
        for i in 0..space.len() {
            let g = euclidean(&space.grad_at(now, i));
            let h = frobenius(&space.hess_at(now, i));
            let ft = (next[i] - now[i]) * inv_dt;
            slice_sum += now[i].abs().powf(p) + g.powf(p) + h.powf(p) + ft.abs().powf(p);
        }
        sum += slice_sum;
    }
    (sum * space.cell_volume() * dt).powf(1.0 / p)
}
