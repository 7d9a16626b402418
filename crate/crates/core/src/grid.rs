// SPDX-License-Identifier: Apache-2.0

//! Structured product grid on `T^3 x [0,1]`.
//!
//! Points are stored row-major over `(x1, x2, x3, x4)` with `x4` fastest, so
//! each boundary face is a strided slab and each normal column is contiguous.
//! The three periodic axes have `n_i` points spaced `L_i / n_i`; the normal
//! axis has `n4` points including both faces, spaced `1 / (n4 - 1)`.

use crate::error::{Error, Result};

/// Minimum points per periodic axis.
pub const MIN_PERIODIC: usize = 4;
/// Minimum points across `[0, 1]`.
pub const MIN_NORMAL: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    n: [usize; 4],
    lengths: [f64; 3],
    h: [f64; 4],
}

impl Grid {
    pub fn new(n: [usize; 4], lengths: [f64; 3]) -> Result<Self> {
        for (axis, &ni) in n.iter().enumerate().take(3) {
            if ni < MIN_PERIODIC {
                return Err(Error::DimensionTooSmall {
                    axis: axis + 1,
                    got: ni,
                    min: MIN_PERIODIC,
                });
            }
        }
        if n[3] < MIN_NORMAL {
            return Err(Error::DimensionTooSmall {
                axis: 4,
                got: n[3],
                min: MIN_NORMAL,
            });
        }
        for (axis, &l) in lengths.iter().enumerate() {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidLength {
                    axis: axis + 1,
                    value: l,
                });
            }
        }
        let h = [
            lengths[0] / n[0] as f64,
            lengths[1] / n[1] as f64,
            lengths[2] / n[2] as f64,
            1.0 / (n[3] - 1) as f64,
        ];
        Ok(Self { n, lengths, h })
    }

    /// Unit-length periodic sides.
    pub fn unit(n1: usize, n2: usize, n3: usize, n4: usize) -> Result<Self> {
        Self::new([n1, n2, n3, n4], [1.0; 3])
    }

    pub fn dims(&self) -> [usize; 4] {
        self.n
    }

    pub fn lengths(&self) -> [f64; 3] {
        self.lengths
    }

    pub fn spacing(&self) -> [f64; 4] {
        self.h
    }

    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of points on one boundary face.
    pub fn face_len(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    /// Number of normal columns (same as [`Self::face_len`]).
    pub fn columns(&self) -> usize {
        self.face_len()
    }

    /// Last index along the normal axis.
    pub fn top(&self) -> usize {
        self.n[3] - 1
    }

    pub fn index(&self, i1: usize, i2: usize, i3: usize, i4: usize) -> usize {
        ((i1 * self.n[1] + i2) * self.n[2] + i3) * self.n[3] + i4
    }

    /// Index of the first point of tangential column `c`.
    pub fn column_base(&self, c: usize) -> usize {
        c * self.n[3]
    }

    pub fn face_index(&self, i1: usize, i2: usize, i3: usize) -> usize {
        (i1 * self.n[1] + i2) * self.n[2] + i3
    }

    pub fn unravel(&self, p: usize) -> [usize; 4] {
        let i4 = p % self.n[3];
        let c = p / self.n[3];
        let i3 = c % self.n[2];
        let c = c / self.n[2];
        let i2 = c % self.n[1];
        let i1 = c / self.n[1];
        [i1, i2, i3, i4]
    }

    pub fn unravel_face(&self, c: usize) -> [usize; 3] {
        let i3 = c % self.n[2];
        let c = c / self.n[2];
        [c / self.n[1], c % self.n[1], i3]
    }

    pub fn coords(&self, p: usize) -> [f64; 4] {
        let i = self.unravel(p);
        [
            i[0] as f64 * self.h[0],
            i[1] as f64 * self.h[1],
            i[2] as f64 * self.h[2],
            i[3] as f64 * self.h[3],
        ]
    }

    pub fn face_coords(&self, c: usize) -> [f64; 3] {
        let i = self.unravel_face(c);
        [
            i[0] as f64 * self.h[0],
            i[1] as f64 * self.h[1],
            i[2] as f64 * self.h[2],
        ]
    }

    /// `(plus, minus)` column offsets for each periodic axis at tangential
    /// column `c`, already wrapped.
    pub(crate) fn column_neighbors(&self, c: usize) -> [(usize, usize); 3] {
        let [i1, i2, i3] = self.unravel_face(c);
        let wrap = |i: usize, n: usize| ((i + 1) % n, (i + n - 1) % n);
        let (a1, b1) = wrap(i1, self.n[0]);
        let (a2, b2) = wrap(i2, self.n[1]);
        let (a3, b3) = wrap(i3, self.n[2]);
        [
            (self.face_index(a1, i2, i3), self.face_index(b1, i2, i3)),
            (self.face_index(i1, a2, i3), self.face_index(i1, b2, i3)),
            (self.face_index(i1, i2, a3), self.face_index(i1, i2, b3)),
        ]
    }

    /// Trapezoid factor along the normal axis.
    pub fn normal_weight(&self, i4: usize) -> f64 {
        if i4 == 0 || i4 == self.top() {
            0.5
        } else {
            1.0
        }
    }
}

/// Which boundary face(s) a [`BoundaryField`] covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Face {
    /// `x4 = 0`
    Lower,
    /// `x4 = 1`
    Upper,
    Both,
}

impl Face {
    pub fn count(self) -> usize {
        match self {
            Face::Both => 2,
            _ => 1,
        }
    }

    /// Normal-axis slabs covered, in storage order.
    pub fn slabs(self, grid: &Grid) -> Vec<usize> {
        match self {
            Face::Lower => vec![0],
            Face::Upper => vec![grid.top()],
            Face::Both => vec![0, grid.top()],
        }
    }
}

/// Real values at every grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_vec(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                got: values.len(),
                expected: grid.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "scalar field",
                index,
            });
        }
        Ok(Self { grid, values })
    }

    /// Samples `f(x1, x2, x3, x4)` at every grid point.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 4]) -> f64) -> Self {
        let values = (0..grid.len()).map(|p| f(grid.coords(p))).collect();
        Self { grid, values }
    }

    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
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
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `self + alpha * other`
    pub fn axpy(&self, alpha: f64, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + alpha * b)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Restriction to the boundary faces.
    pub fn trace(&self, face: Face) -> BoundaryField {
        let g = &self.grid;
        let mut values = Vec::with_capacity(g.face_len() * face.count());
        for slab in face.slabs(g) {
            for c in 0..g.columns() {
                values.push(self.values[g.column_base(c) + slab]);
            }
        }
        BoundaryField {
            grid: self.grid,
            face,
            values,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Real values on one or both boundary 3-tori. With [`Face::Both`] the lower
/// face comes first, each face ordered row-major over `(x1, x2, x3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryField {
    grid: Grid,
    face: Face,
    values: Vec<f64>,
}

impl BoundaryField {
    pub fn zeros(grid: Grid, face: Face) -> Self {
        Self::constant(grid, face, 0.0)
    }

    pub fn constant(grid: Grid, face: Face, c: f64) -> Self {
        Self {
            grid,
            face,
            values: vec![c; grid.face_len() * face.count()],
        }
    }

    pub fn from_vec(grid: Grid, face: Face, values: Vec<f64>) -> Result<Self> {
        let expected = grid.face_len() * face.count();
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                got: values.len(),
                expected,
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "boundary field",
                index,
            });
        }
        Ok(Self { grid, face, values })
    }

    /// Samples `f(x1, x2, x3, x4)` on the face(s); `x4` is 0 or 1.
    pub fn from_fn(grid: Grid, face: Face, f: impl Fn([f64; 4]) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.face_len() * face.count());
        for slab in face.slabs(&grid) {
            let x4 = slab as f64 * grid.spacing()[3];
            for c in 0..grid.columns() {
                let [x1, x2, x3] = grid.face_coords(c);
                values.push(f([x1, x2, x3, x4]));
            }
        }
        Self { grid, face, values }
    }

    pub(crate) fn from_raw(grid: Grid, face: Face, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.face_len() * face.count());
        Self { grid, face, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn face(&self) -> Face {
        self.face
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

    /// Values on one face slab (`0` for the first stored face).
    pub fn slab(&self, k: usize) -> &[f64] {
        let m = self.grid.face_len();
        &self.values[k * m..(k + 1) * m]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            face: self.face,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.face, other.face);
        Self {
            grid: self.grid,
            face: self.face,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn axpy(&self, alpha: f64, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + alpha * b)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Neumaier-compensated sum in the iteration order given.
pub(crate) fn compensated_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut carry = 0.0_f64;
    for t in terms {
        let s = sum + t;
        if sum.abs() >= t.abs() {
            carry += (sum - s) + t;
        } else {
            carry += (t - s) + sum;
        }
        sum = s;
    }
    sum + carry
}
