// SPDX-License-Identifier: Apache-2.0

//! Preconditioned conjugate gradients and the constrained biharmonic
//! extension.

use crate::error::{Error, Result};
use crate::geometry::{check_grid, BackgroundGeometry};
use crate::grid::{compensated_sum, BoundaryField, Face, ScalarField};
use crate::operators::{apply_p43, p43_diagonal, LinearOperator};

/// Outcome of a linear solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// `‖b − Ax‖ / ‖b‖` in the operator's weighted norm.
    pub final_residual: f64,
    pub converged: bool,
    /// Relative residual after every iteration, starting with the guess.
    pub residual_history: Vec<f64>,
    /// `½<x, Ax> − <b, x>` after every iteration; nonincreasing in exact
    /// arithmetic.
    pub energy_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Use the operator's diagonal as a Jacobi preconditioner if offered.
    pub jacobi: bool,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 10_000,
            jacobi: true,
        }
    }
}

fn dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    compensated_sum(a.iter().zip(b).zip(w).map(|((x, y), w)| x * y * w))
}

/// Conjugate gradients in the operator's weighted inner product.
///
/// Returns the iterate and a report; `converged == false` when `max_iter` is
/// exhausted. A NaN anywhere aborts with [`Error::SolverNaN`].
pub fn conjugate_gradient(
    op: &dyn LinearOperator,
    rhs: &[f64],
    guess: &[f64],
    opts: CgOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    let n = op.dim();
    assert_eq!(rhs.len(), n, "rhs length");
    assert_eq!(guess.len(), n, "guess length");
    let w = op.weights();
    let inv_diag: Option<Vec<f64>> = if opts.jacobi {
        op.diagonal().map(|d| {
            d.iter()
                .map(|&v| if v > 0.0 { 1.0 / v } else { 1.0 })
                .collect()
        })
    } else {
        None
    };
    let precondition = |r: &[f64], z: &mut [f64]| match &inv_diag {
        Some(d) => z
            .iter_mut()
            .zip(r)
            .zip(d)
            .for_each(|((zi, ri), di)| *zi = ri * di),
        None => z.copy_from_slice(r),
    };

    let bnorm = dot(w, rhs, rhs).sqrt();
    let mut x = guess.to_vec();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok((
            x,
            SolveReport {
                iterations: 0,
                final_residual: 0.0,
                converged: true,
                residual_history: vec![0.0],
                energy_history: vec![0.0],
            },
        ));
    }

    let mut ax = vec![0.0; n];
    op.apply(&x, &mut ax);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let energy = |x: &[f64], r: &[f64]| -> f64 {
        let s: Vec<f64> = rhs.iter().zip(r).map(|(b, ri)| b + ri).collect();
        -0.5 * dot(w, x, &s)
    };
    let mut rel = dot(w, &r, &r).sqrt() / bnorm;
    let mut report = SolveReport {
        iterations: 0,
        final_residual: rel,
        converged: rel <= opts.tol,
        residual_history: vec![rel],
        energy_history: vec![energy(&x, &r)],
    };
    if report.converged {
        return Ok((x, report));
    }
    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(w, &r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=opts.max_iter {
        op.apply(&p, &mut ap);
        let pap = dot(w, &p, &ap);
        if !pap.is_finite() || !rz.is_finite() {
            return Err(Error::SolverNaN(it));
        }
        if pap <= 0.0 {
            // breakdown: operator not positive on the Krylov space
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = dot(w, &r, &r).sqrt() / bnorm;
        if !rel.is_finite() {
            return Err(Error::SolverNaN(it));
        }
        report.iterations = it;
        report.residual_history.push(rel);
        report.energy_history.push(energy(&x, &r));
        if rel <= opts.tol {
            report.converged = true;
            break;
        }
        precondition(&r, &mut z);
        let rz_new = dot(w, &r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    report.final_residual = rel;
    Ok((x, report))
}

// ---------------------------------------------------------------------------
// Biharmonic extension
// ---------------------------------------------------------------------------

/// `P^{4,3}` restricted to the interior slabs `1..=n4-2` with the face values
/// held at zero.
pub(crate) struct InteriorP43<'a> {
    geo: &'a BackgroundGeometry,
    weights: Vec<f64>,
}

impl<'a> InteriorP43<'a> {
    pub(crate) fn new(geo: &'a BackgroundGeometry) -> Self {
        let weights = gather_interior(geo, geo.cell_weights());
        Self { geo, weights }
    }
}

pub(crate) fn interior_len(geo: &BackgroundGeometry) -> usize {
    geo.grid().columns() * (geo.grid().dims()[3] - 2)
}

pub(crate) fn gather_interior(geo: &BackgroundGeometry, full: &[f64]) -> Vec<f64> {
    let n4 = geo.grid().dims()[3];
    let mut out = Vec::with_capacity(interior_len(geo));
    for col in full.chunks_exact(n4) {
        out.extend_from_slice(&col[1..n4 - 1]);
    }
    out
}

/// Writes interior values into `full`, leaving the face slabs untouched.
pub(crate) fn scatter_interior(geo: &BackgroundGeometry, interior: &[f64], full: &mut [f64]) {
    let n4 = geo.grid().dims()[3];
    let m = n4 - 2;
    for (col, src) in full.chunks_exact_mut(n4).zip(interior.chunks_exact(m)) {
        col[1..n4 - 1].copy_from_slice(src);
    }
}

impl LinearOperator for InteriorP43<'_> {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.geo.grid().len();
        let mut full = vec![0.0; n];
        scatter_interior(self.geo, x, &mut full);
        let mut out = vec![0.0; n];
        apply_p43(self.geo, &full, &mut out);
        let g = gather_interior(self.geo, &out);
        y.copy_from_slice(&g);
    }

    fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        Some(gather_interior(self.geo, &p43_diagonal(self.geo)))
    }
}

/// Extension with the face values set from `v` (lower slab first) and the
/// interior by linear interpolation between the faces.
pub(crate) fn blend(geo: &BackgroundGeometry, v: &[f64]) -> Vec<f64> {
    let grid = geo.grid();
    let n4 = grid.dims()[3];
    let m = grid.face_len();
    let top = (n4 - 1) as f64;
    let mut w = vec![0.0; grid.len()];
    for c in 0..m {
        let (lo, hi) = (v[c], v[m + c]);
        for j in 0..n4 {
            let s = j as f64 / top;
            w[c * n4 + j] = if j == 0 {
                lo
            } else if j == n4 - 1 {
                hi
            } else {
                (1.0 - s) * lo + s * hi
            };
        }
    }
    w
}

/// Max-norm of `P^{4,3} w` over the interior slabs.
pub(crate) fn interior_residual(geo: &BackgroundGeometry, w: &[f64]) -> f64 {
    let mut aw = vec![0.0; w.len()];
    apply_p43(geo, w, &mut aw);
    gather_interior(geo, &aw)
        .iter()
        .fold(0.0, |m: f64, v| m.max(v.abs()))
}

/// Solves `P4 w = 0` at interior points with `w = v` on both faces and
/// `∂w/∂n = 0` (by reflection). `guess` seeds the interior values; `None`
/// uses the linear blend of the face data.
pub(crate) fn extend_slice(
    geo: &BackgroundGeometry,
    v: &[f64],
    guess: Option<&[f64]>,
    opts: CgOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    let grid = geo.grid();
    let n = grid.len();
    let mut boundary_only = vec![0.0; n];
    let n4 = grid.dims()[3];
    let m = grid.face_len();
    for c in 0..m {
        boundary_only[c * n4] = v[c];
        boundary_only[c * n4 + n4 - 1] = v[m + c];
    }
    let mut ab = vec![0.0; n];
    apply_p43(geo, &boundary_only, &mut ab);
    let rhs: Vec<f64> = gather_interior(geo, &ab).iter().map(|x| -x).collect();
    let start = match guess {
        Some(g) => gather_interior(geo, g),
        None => gather_interior(geo, &blend(geo, v)),
    };
    let op = InteriorP43::new(geo);
    let (y, report) = conjugate_gradient(&op, &rhs, &start, opts)?;
    let mut w = boundary_only;
    scatter_interior(geo, &y, &mut w);
    Ok((w, report))
}

/// Biharmonic extension of boundary data on both faces: `P4 w = 0` in the
/// interior, `w = v` and `∂w/∂n = 0` on the faces.
pub fn solve_constrained_biharmonic(
    dirichlet: &BoundaryField,
    geo: &BackgroundGeometry,
    tol: f64,
) -> Result<(ScalarField, SolveReport)> {
    check_grid(geo.grid(), dirichlet.grid())?;
    if dirichlet.face() != Face::Both {
        return Err(Error::LengthMismatch {
            got: dirichlet.values().len(),
            expected: 2 * geo.grid().face_len(),
        });
    }
    let opts = CgOptions {
        tol,
        max_iter: 20_000,
        jacobi: true,
    };
    let (w, report) = extend_slice(geo, dirichlet.values(), None, opts)?;
    if !report.converged {
        return Err(Error::SolverDiverged {
            iterations: report.iterations,
            residual: report.final_residual,
        });
    }
    Ok((ScalarField::from_raw(*geo.grid(), w), report))
}
