// SPDX-License-Identifier: Apache-2.0

//! Background metric data `g0` and integration against `dV0`, `dS0`.

use crate::error::{Error, Result};
use crate::grid::{compensated_sum, BoundaryField, Face, Grid, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackgroundKind {
    Flat,
    Synthetic,
}

/// Field set for a formal background. Tensors are stored per point as full
/// matrices so symmetry can be validated on construction.
#[derive(Debug, Clone)]
pub struct SyntheticFields {
    pub scalar_curvature: ScalarField,
    pub ricci: Vec<[[f64; 4]; 4]>,
    pub q0: ScalarField,
    pub mean_curvature: BoundaryField,
    pub t0: BoundaryField,
    /// Second fundamental form on both faces (lower face first).
    pub second_fundamental: Vec<[[f64; 3]; 3]>,
    /// `F = R^a_{nan}` on both faces; enters the Chang-Qing operator only.
    pub normal_curvature: BoundaryField,
    pub volume_weight: ScalarField,
    pub area_weight: BoundaryField,
}

impl SyntheticFields {
    /// All curvatures zero with the flat product measure.
    pub fn zeros(grid: Grid) -> Self {
        let h = grid.spacing();
        Self {
            scalar_curvature: ScalarField::zeros(grid),
            ricci: vec![[[0.0; 4]; 4]; grid.len()],
            q0: ScalarField::zeros(grid),
            mean_curvature: BoundaryField::zeros(grid, Face::Both),
            t0: BoundaryField::zeros(grid, Face::Both),
            second_fundamental: vec![[[0.0; 3]; 3]; 2 * grid.face_len()],
            normal_curvature: BoundaryField::zeros(grid, Face::Both),
            volume_weight: ScalarField::constant(grid, h.iter().product()),
            area_weight: BoundaryField::constant(grid, Face::Both, h[0] * h[1] * h[2]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BackgroundGeometry {
    grid: Grid,
    kind: BackgroundKind,
    fields: SyntheticFields,
    /// `dV0` per point including the trapezoid factor on the face slabs.
    cell: Vec<f64>,
    neighbors: Vec<[(usize, usize); 3]>,
    uniform_volume: bool,
    interior_curvature: bool,
    boundary_curvature: bool,
}

impl BackgroundGeometry {
    pub fn flat(grid: Grid) -> Self {
        Self::assemble(grid, BackgroundKind::Flat, SyntheticFields::zeros(grid))
    }

    /// Formal background built from user-supplied fields. Geometric
    /// consistency of the fields is the caller's business; only finiteness,
    /// tensor symmetry and weight positivity are checked.
    pub fn synthetic(grid: Grid, fields: SyntheticFields) -> Result<Self> {
        check_grid(&grid, fields.scalar_curvature.grid())?;
        check_grid(&grid, fields.q0.grid())?;
        check_grid(&grid, fields.volume_weight.grid())?;
        for b in [
            &fields.mean_curvature,
            &fields.t0,
            &fields.normal_curvature,
            &fields.area_weight,
        ] {
            check_grid(&grid, b.grid())?;
            if b.face() != Face::Both {
                return Err(Error::LengthMismatch {
                    got: b.values().len(),
                    expected: 2 * grid.face_len(),
                });
            }
        }
        if fields.ricci.len() != grid.len() {
            return Err(Error::LengthMismatch {
                got: fields.ricci.len(),
                expected: grid.len(),
            });
        }
        if fields.second_fundamental.len() != 2 * grid.face_len() {
            return Err(Error::LengthMismatch {
                got: fields.second_fundamental.len(),
                expected: 2 * grid.face_len(),
            });
        }
        for (index, t) in fields.ricci.iter().enumerate() {
            check_symmetric("Ric", index, t)?;
        }
        for (index, t) in fields.second_fundamental.iter().enumerate() {
            check_symmetric("L", index, t)?;
        }
        for (what, vals) in [
            ("R", fields.scalar_curvature.values()),
            ("Q0", fields.q0.values()),
            ("H0", fields.mean_curvature.values()),
            ("T0", fields.t0.values()),
            ("F", fields.normal_curvature.values()),
        ] {
            if let Some(index) = vals.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { what, index });
            }
        }
        for (what, vals) in [
            ("volume_weight", fields.volume_weight.values()),
            ("area_weight", fields.area_weight.values()),
        ] {
            if let Some(index) = vals.iter().position(|&v| !(v.is_finite() && v > 0.0)) {
                return Err(Error::NonPositive {
                    what,
                    index,
                    value: vals[index],
                });
            }
        }
        Ok(Self::assemble(grid, BackgroundKind::Synthetic, fields))
    }

    fn assemble(grid: Grid, kind: BackgroundKind, fields: SyntheticFields) -> Self {
        let n4 = grid.dims()[3];
        let cell = fields
            .volume_weight
            .values()
            .iter()
            .enumerate()
            .map(|(p, &w)| w * grid.normal_weight(p % n4))
            .collect();
        let vw = fields.volume_weight.values();
        let uniform_volume = vw.iter().all(|&w| w == vw[0]);
        let interior_curvature = fields.scalar_curvature.values().iter().any(|&v| v != 0.0)
            || fields.ricci.iter().flatten().flatten().any(|&v| v != 0.0);
        let boundary_curvature = fields
            .second_fundamental
            .iter()
            .flatten()
            .flatten()
            .any(|&v| v != 0.0);
        let neighbors = (0..grid.columns())
            .map(|c| grid.column_neighbors(c))
            .collect();
        Self {
            grid,
            kind,
            fields,
            cell,
            neighbors,
            uniform_volume,
            interior_curvature,
            boundary_curvature,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn kind(&self) -> BackgroundKind {
        self.kind
    }

    pub fn fields(&self) -> &SyntheticFields {
        &self.fields
    }

    pub fn scalar_curvature(&self) -> &ScalarField {
        &self.fields.scalar_curvature
    }

    pub fn ricci(&self) -> &[[[f64; 4]; 4]] {
        &self.fields.ricci
    }

    pub fn q0(&self) -> &ScalarField {
        &self.fields.q0
    }

    pub fn h0(&self) -> &BoundaryField {
        &self.fields.mean_curvature
    }

    pub fn t0(&self) -> &BoundaryField {
        &self.fields.t0
    }

    pub fn second_fundamental(&self) -> &[[[f64; 3]; 3]] {
        &self.fields.second_fundamental
    }

    pub fn normal_curvature(&self) -> &BoundaryField {
        &self.fields.normal_curvature
    }

    pub fn volume_weight(&self) -> &ScalarField {
        &self.fields.volume_weight
    }

    pub fn area_weight(&self) -> &BoundaryField {
        &self.fields.area_weight
    }

    /// Quadrature weight of every grid point (`dV0` with the trapezoid
    /// factor applied on the face slabs).
    pub fn cell_weights(&self) -> &[f64] {
        &self.cell
    }

    /// Wrapped `(plus, minus)` neighbor columns along x1, x2, x3.
    pub(crate) fn neighbors(&self) -> &[[(usize, usize); 3]] {
        &self.neighbors
    }

    pub(crate) fn uniform_volume(&self) -> bool {
        self.uniform_volume
    }

    pub(crate) fn has_interior_curvature(&self) -> bool {
        self.interior_curvature
    }

    pub(crate) fn has_boundary_curvature(&self) -> bool {
        self.boundary_curvature
    }

    /// `Vol(M, g0)`
    pub fn volume(&self) -> f64 {
        compensated_sum(self.cell.iter().copied())
    }

    /// `Area(dM, g0)` over both faces.
    pub fn area(&self) -> f64 {
        compensated_sum(self.fields.area_weight.values().iter().copied())
    }

    /// Area weights for the face(s) a boundary field covers.
    pub(crate) fn area_weights_for(&self, face: Face) -> &[f64] {
        let m = self.grid.face_len();
        let a = self.fields.area_weight.values();
        match face {
            Face::Both => a,
            Face::Lower => &a[..m],
            Face::Upper => &a[m..],
        }
    }

    pub fn integrate_volume(&self, f: &ScalarField) -> Result<f64> {
        check_grid(&self.grid, f.grid())?;
        Ok(self.integrate_slice(f.values()))
    }

    pub(crate) fn integrate_slice(&self, f: &[f64]) -> f64 {
        compensated_sum(f.iter().zip(&self.cell).map(|(a, w)| a * w))
    }

    pub fn integrate_boundary(&self, f: &BoundaryField) -> Result<f64> {
        check_grid(&self.grid, f.grid())?;
        let w = self.area_weights_for(f.face());
        Ok(compensated_sum(
            f.values().iter().zip(w).map(|(a, w)| a * w),
        ))
    }

    /// `∫_M a b dV0`
    pub(crate) fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        compensated_sum(a.iter().zip(b).zip(&self.cell).map(|((x, y), w)| x * y * w))
    }
}

pub(crate) fn check_grid(a: &Grid, b: &Grid) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

fn check_symmetric<const N: usize>(
    field: &'static str,
    index: usize,
    t: &[[f64; N]; N],
) -> Result<()> {
    for (a, row) in t.iter().enumerate() {
        for (b, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { what: field, index });
            }
            if a < b && v != t[b][a] {
                return Err(Error::NotSymmetric {
                    field,
                    index,
                    a: a + 1,
                    b: b + 1,
                });
            }
        }
    }
    Ok(())
}
