// SPDX-License-Identifier: Apache-2.0

//! Matrix-free discrete operators: Laplacians, the outward normal
//! derivative, the Paneitz operator `P4`, the Chang-Qing boundary operator
//! `P3`, and the coupled form `P^{4,3}`.
//!
//! Sign convention. `laplacian` is the analyst's Laplacian (`-λ` on Fourier
//! modes). `P4` and `P3` follow the geometer's nonnegative Laplacian, so in
//! analyst's terms
//!
//! ```text
//! P4 u = Δ²u − div(((2/3) R g − 2 Ric) ∇u)
//! P3 u = −½ ∂ₙΔu − Δ̂ ∂ₙu + (4/3) H Δ̂u + L:∇̂²u + (2/3) ∇̂H·∇̂u + (F − R/3) ∂ₙu
//! ```
//!
//! which is the normalization under which
//! `<P^{4,3}u, v> = ∫ v P4 u dV + 2 ∮ v P3 u dS` for `∂ₙu = 0`, and the
//! quadratic form is nonnegative on a flat totally geodesic background.
//!
//! Boundary conditions are ghost reflections across the faces `x4 = 0, 1`:
//! `∂ₙu = 0` reflects `u`, `P3 u = 0` reflects `Δu` (the flat reduction).
//! The discrete `P^{4,3}` operator is the exact adjoint realization of the
//! discrete bilinear form with respect to the trapezoid-weighted `dV0` inner
//! product, so self-adjointness and form/operator compatibility hold to
//! rounding on any background.

use crate::error::Result;
use crate::geometry::{check_grid, BackgroundGeometry};
use crate::grid::{compensated_sum, BoundaryField, Face, Grid, ScalarField};

/// Which boundary conditions the operator enforces by reflection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryConditionSet {
    /// `∂u/∂n = 0`
    pub neumann_zero: bool,
    /// `P3 u = 0`
    pub p3_zero: bool,
}

impl BoundaryConditionSet {
    /// Both conditions, as carried by the flows.
    pub const FLOW: Self = Self {
        neumann_zero: true,
        p3_zero: true,
    };

    /// No enforcement: one-sided stencils at the faces.
    pub const NONE: Self = Self {
        neumann_zero: false,
        p3_zero: false,
    };

    pub fn is_flow(self) -> bool {
        self.neumann_zero && self.p3_zero
    }
}

/// Matrix-free linear map on flat value slices.
pub trait LinearOperator {
    fn dim(&self) -> usize;

    fn apply(&self, x: &[f64], y: &mut [f64]);

    /// Inner-product weights under which the operator is self-adjoint.
    fn weights(&self) -> &[f64];

    /// Diagonal used for Jacobi preconditioning, if cheaply available.
    fn diagonal(&self) -> Option<Vec<f64>> {
        None
    }
}

// ---------------------------------------------------------------------------
// Laplacians and normal derivative
// ---------------------------------------------------------------------------

/// How the normal second difference is closed at a face.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Closure {
    /// Even ghost reflection, `u_{-1} = u_1`.
    Reflect,
    /// Second-order one-sided difference.
    OneSided,
}

impl Closure {
    fn from_flag(reflect: bool) -> Self {
        if reflect {
            Closure::Reflect
        } else {
            Closure::OneSided
        }
    }
}

fn inv_h2(grid: &Grid) -> [f64; 4] {
    let h = grid.spacing();
    [
        1.0 / (h[0] * h[0]),
        1.0 / (h[1] * h[1]),
        1.0 / (h[2] * h[2]),
        1.0 / (h[3] * h[3]),
    ]
}

/// Nine-point Laplacian into `out`.
pub(crate) fn laplacian_into(
    geo: &BackgroundGeometry,
    u: &[f64],
    closure: Closure,
    out: &mut [f64],
) {
    let grid = geo.grid();
    let n4 = grid.dims()[3];
    let top = n4 - 1;
    let ih = inv_h2(grid);
    for (c, nb) in geo.neighbors().iter().enumerate() {
        let base = c * n4;
        let col = &u[base..base + n4];
        let b = [
            (nb[0].0 * n4, nb[0].1 * n4),
            (nb[1].0 * n4, nb[1].1 * n4),
            (nb[2].0 * n4, nb[2].1 * n4),
        ];
        for j in 0..n4 {
            let uj = col[j];
            let mut acc = 0.0;
            for d in 0..3 {
                acc += (u[b[d].0 + j] + u[b[d].1 + j] - 2.0 * uj) * ih[d];
            }
            let normal = if j == 0 {
                match closure {
                    Closure::Reflect => 2.0 * (col[1] - uj),
                    Closure::OneSided => 2.0 * uj - 5.0 * col[1] + 4.0 * col[2] - col[3],
                }
            } else if j == top {
                match closure {
                    Closure::Reflect => 2.0 * (col[top - 1] - uj),
                    Closure::OneSided => {
                        2.0 * uj - 5.0 * col[top - 1] + 4.0 * col[top - 2] - col[top - 3]
                    }
                }
            } else {
                col[j + 1] + col[j - 1] - 2.0 * uj
            };
            out[base + j] = acc + normal * ih[3];
        }
    }
}

/// `Δu` with reflected ghosts when `bc.neumann_zero`, one-sided otherwise.
pub fn laplacian(
    u: &ScalarField,
    geo: &BackgroundGeometry,
    bc: BoundaryConditionSet,
) -> Result<ScalarField> {
    check_grid(geo.grid(), u.grid())?;
    let mut out = vec![0.0; u.values().len()];
    laplacian_into(
        geo,
        u.values(),
        Closure::from_flag(bc.neumann_zero),
        &mut out,
    );
    Ok(ScalarField::from_raw(*u.grid(), out))
}

/// Seven-point periodic Laplacian on one face slab.
fn slab_laplacian(geo: &BackgroundGeometry, v: &[f64], out: &mut [f64]) {
    let ih = inv_h2(geo.grid());
    for (c, nb) in geo.neighbors().iter().enumerate() {
        let vc = v[c];
        let mut acc = 0.0;
        for d in 0..3 {
            acc += (v[nb[d].0] + v[nb[d].1] - 2.0 * vc) * ih[d];
        }
        out[c] = acc;
    }
}

/// Laplacian of the induced flat metric on each face 3-torus.
pub fn boundary_laplacian(v: &BoundaryField, geo: &BackgroundGeometry) -> Result<BoundaryField> {
    check_grid(geo.grid(), v.grid())?;
    let m = geo.grid().face_len();
    let mut out = vec![0.0; v.values().len()];
    for k in 0..v.face().count() {
        slab_laplacian(geo, v.slab(k), &mut out[k * m..(k + 1) * m]);
    }
    Ok(BoundaryField::from_raw(*v.grid(), v.face(), out))
}

fn normal_derivative_slice(grid: &Grid, u: &[f64]) -> Vec<f64> {
    let n4 = grid.dims()[3];
    let top = n4 - 1;
    let m = grid.face_len();
    let inv = 1.0 / (2.0 * grid.spacing()[3]);
    let mut out = vec![0.0; 2 * m];
    for c in 0..m {
        let col = &u[c * n4..(c + 1) * n4];
        out[c] = (3.0 * col[0] - 4.0 * col[1] + col[2]) * inv;
        out[m + c] = (3.0 * col[top] - 4.0 * col[top - 1] + col[top - 2]) * inv;
    }
    out
}

/// Outward normal derivative on both faces by the one-sided three-point
/// formula.
pub fn normal_derivative(u: &ScalarField, geo: &BackgroundGeometry) -> Result<BoundaryField> {
    check_grid(geo.grid(), u.grid())?;
    let out = normal_derivative_slice(geo.grid(), u.values());
    Ok(BoundaryField::from_raw(*u.grid(), Face::Both, out))
}

// ---------------------------------------------------------------------------
// Gradients and their adjoints
// ---------------------------------------------------------------------------

/// Centered gradient component `d` at every point. Along x4 the reflected
/// ghost makes the face value zero.
fn centered_gradient(geo: &BackgroundGeometry, u: &[f64], d: usize, out: &mut [f64]) {
    let grid = geo.grid();
    let n4 = grid.dims()[3];
    let h = grid.spacing();
    let inv = 1.0 / (2.0 * h[d]);
    for (c, nb) in geo.neighbors().iter().enumerate() {
        let base = c * n4;
        if d < 3 {
            let (pc, mc) = (nb[d].0 * n4, nb[d].1 * n4);
            for j in 0..n4 {
                out[base + j] = (u[pc + j] - u[mc + j]) * inv;
            }
        } else {
            out[base] = 0.0;
            out[base + n4 - 1] = 0.0;
            for j in 1..n4 - 1 {
                out[base + j] = (u[base + j + 1] - u[base + j - 1]) * inv;
            }
        }
    }
}

/// Accumulates `G_d^T f` into `out`, the Euclidean transpose of
/// [`centered_gradient`] for direction `d`.
fn centered_gradient_adjoint_add(geo: &BackgroundGeometry, f: &[f64], d: usize, out: &mut [f64]) {
    let grid = geo.grid();
    let n4 = grid.dims()[3];
    let h = grid.spacing();
    let inv = 1.0 / (2.0 * h[d]);
    for (c, nb) in geo.neighbors().iter().enumerate() {
        let base = c * n4;
        if d < 3 {
            let (pc, mc) = (nb[d].0 * n4, nb[d].1 * n4);
            for j in 0..n4 {
                out[base + j] += (f[mc + j] - f[pc + j]) * inv;
            }
        } else {
            // flux on the face slabs is identically zero
            for j in 0..n4 {
                let below = if j >= 2 { f[base + j - 1] } else { 0.0 };
                let above = if j + 2 < n4 { f[base + j + 1] } else { 0.0 };
                out[base + j] += (below - above) * inv;
            }
        }
    }
}

/// Tangential centered gradient on a face slab.
fn slab_gradient(geo: &BackgroundGeometry, v: &[f64], d: usize, out: &mut [f64]) {
    let inv = 1.0 / (2.0 * geo.grid().spacing()[d]);
    for (c, nb) in geo.neighbors().iter().enumerate() {
        out[c] = (v[nb[d].0] - v[nb[d].1]) * inv;
    }
}

fn slab_gradient_adjoint_add(geo: &BackgroundGeometry, f: &[f64], d: usize, out: &mut [f64]) {
    let inv = 1.0 / (2.0 * geo.grid().spacing()[d]);
    for (c, nb) in geo.neighbors().iter().enumerate() {
        out[c] += (f[nb[d].1] - f[nb[d].0]) * inv;
    }
}

/// `(2/3) R δ_ab − 2 Ric_ab` at point `p`.
fn curvature_coefficient(geo: &BackgroundGeometry, p: usize) -> [[f64; 4]; 4] {
    let r = geo.scalar_curvature().values()[p];
    let ric = &geo.ricci()[p];
    let mut c = [[0.0; 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            c[a][b] = -2.0 * ric[a][b];
        }
        c[a][a] += 2.0 / 3.0 * r;
    }
    c
}

fn gradients(geo: &BackgroundGeometry, u: &[f64]) -> [Vec<f64>; 4] {
    let n = u.len();
    let mut g = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for (d, gd) in g.iter_mut().enumerate() {
        centered_gradient(geo, u, d, gd);
    }
    g
}

fn face_traces(grid: &Grid, u: &[f64]) -> [Vec<f64>; 2] {
    let n4 = grid.dims()[3];
    let m = grid.face_len();
    let mut lo = Vec::with_capacity(m);
    let mut hi = Vec::with_capacity(m);
    for c in 0..m {
        lo.push(u[c * n4]);
        hi.push(u[c * n4 + n4 - 1]);
    }
    [lo, hi]
}

fn slab_gradients(geo: &BackgroundGeometry, v: &[f64]) -> [Vec<f64>; 3] {
    let m = v.len();
    let mut g = [vec![0.0; m], vec![0.0; m], vec![0.0; m]];
    for (d, gd) in g.iter_mut().enumerate() {
        slab_gradient(geo, v, d, gd);
    }
    g
}

// ---------------------------------------------------------------------------
// P^{4,3}
// ---------------------------------------------------------------------------

/// Adds the interior curvature part of `P^{4,3}`, i.e. the adjoint of
/// `v ↦ ∫ C(∇u, ∇v) dV0`.
fn add_curvature_term(geo: &BackgroundGeometry, u: &[f64], out: &mut [f64]) {
    let n = u.len();
    let cell = geo.cell_weights();
    let g = gradients(geo, u);
    let mut flux = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for p in 0..n {
        let c = curvature_coefficient(geo, p);
        for b in 0..4 {
            let mut s = 0.0;
            for (a, ga) in g.iter().enumerate() {
                s += c[a][b] * ga[p];
            }
            flux[b][p] = cell[p] * s;
        }
    }
    let mut acc = vec![0.0; n];
    for (b, fb) in flux.iter().enumerate() {
        centered_gradient_adjoint_add(geo, fb, b, &mut acc);
    }
    for p in 0..n {
        out[p] += acc[p] / cell[p];
    }
}

/// Adds the adjoint of `v ↦ −2 ∮ L(∇̂u, ∇̂v) dS0` on both face slabs.
fn add_boundary_form_term(geo: &BackgroundGeometry, u: &[f64], out: &mut [f64]) {
    let grid = geo.grid();
    let n4 = grid.dims()[3];
    let m = grid.face_len();
    let cell = geo.cell_weights();
    let area = geo.area_weight().values();
    let lform = geo.second_fundamental();
    let traces = face_traces(grid, u);
    for (k, tr) in traces.iter().enumerate() {
        let slab = if k == 0 { 0 } else { n4 - 1 };
        let g = slab_gradients(geo, tr);
        let mut flux = [vec![0.0; m], vec![0.0; m], vec![0.0; m]];
        for c in 0..m {
            let l = &lform[k * m + c];
            for b in 0..3 {
                let s: f64 = (0..3).map(|a| l[a][b] * g[a][c]).sum();
                flux[b][c] = -2.0 * area[k * m + c] * s;
            }
        }
        let mut acc = vec![0.0; m];
        for (b, fb) in flux.iter().enumerate() {
            slab_gradient_adjoint_add(geo, fb, b, &mut acc);
        }
        for (c, a) in acc.iter().enumerate() {
            let p = c * n4 + slab;
            out[p] += a / cell[p];
        }
    }
}

/// `V⁻¹ L (V L u)` with reflected ghosts, plus curvature terms.
pub(crate) fn apply_p43(geo: &BackgroundGeometry, u: &[f64], out: &mut [f64]) {
    let mut z = vec![0.0; u.len()];
    laplacian_into(geo, u, Closure::Reflect, &mut z);
    if geo.uniform_volume() {
        laplacian_into(geo, &z, Closure::Reflect, out);
    } else {
        let vw = geo.volume_weight().values();
        for (zi, w) in z.iter_mut().zip(vw) {
            *zi *= w;
        }
        laplacian_into(geo, &z, Closure::Reflect, out);
        for (o, w) in out.iter_mut().zip(vw) {
            *o /= w;
        }
    }
    if geo.has_interior_curvature() {
        add_curvature_term(geo, u, out);
    }
    if geo.has_boundary_curvature() {
        add_boundary_form_term(geo, u, out);
    }
}

/// Diagonal of the discrete `P^{4,3}` operator.
pub(crate) fn p43_diagonal(geo: &BackgroundGeometry) -> Vec<f64> {
    let grid = geo.grid();
    let [_, _, _, n4] = grid.dims();
    let top = n4 - 1;
    let ih = inv_h2(grid);
    let h = grid.spacing();
    let vw = geo.volume_weight().values();
    let cell = geo.cell_weights();
    let centre = 2.0 * (ih[0] + ih[1] + ih[2] + ih[3]);
    let normal_coeff = |from: usize, to: usize| -> f64 {
        // entry L[from][to] along x4, in units of 1/h4²
        if (from == 0 && to == 1) || (from == top && to + 1 == top) {
            2.0
        } else {
            1.0
        }
    };
    let mut diag = vec![0.0; grid.len()];
    for (c, nb) in geo.neighbors().iter().enumerate() {
        let base = c * n4;
        for j in 0..n4 {
            let p = base + j;
            let mut d = centre * centre;
            for (axis, (pc, mc)) in nb.iter().enumerate() {
                for q in [pc * n4 + j, mc * n4 + j] {
                    d += vw[q] / vw[p] * ih[axis] * ih[axis];
                }
            }
            if j < top {
                d += vw[p + 1] / vw[p]
                    * normal_coeff(j, j + 1)
                    * normal_coeff(j + 1, j)
                    * ih[3]
                    * ih[3];
            }
            if j > 0 {
                d += vw[p - 1] / vw[p]
                    * normal_coeff(j, j - 1)
                    * normal_coeff(j - 1, j)
                    * ih[3]
                    * ih[3];
            }
            diag[p] = d;
        }
    }
    if geo.has_interior_curvature() {
        for (c, nb) in geo.neighbors().iter().enumerate() {
            let base = c * n4;
            for j in 0..n4 {
                let p = base + j;
                let mut d = 0.0;
                for (axis, (pc, mc)) in nb.iter().enumerate() {
                    for q in [pc * n4 + j, mc * n4 + j] {
                        let cq = curvature_coefficient(geo, q);
                        d += cell[q] * cq[axis][axis] / (4.0 * h[axis] * h[axis]);
                    }
                }
                for q in [p.wrapping_sub(1), p + 1] {
                    let inside = |q: usize| {
                        q >= base && q < base + n4 && !q.is_multiple_of(n4) && q % n4 != top
                    };
                    if inside(q) {
                        let cq = curvature_coefficient(geo, q);
                        d += cell[q] * cq[3][3] / (4.0 * h[3] * h[3]);
                    }
                }
                diag[p] += d / cell[p];
            }
        }
    }
    if geo.has_boundary_curvature() {
        let m = grid.face_len();
        let area = geo.area_weight().values();
        let lform = geo.second_fundamental();
        for k in 0..2 {
            let slab = if k == 0 { 0 } else { top };
            for (c, nb) in geo.neighbors().iter().enumerate() {
                let mut d = 0.0;
                for (axis, (pc, mc)) in nb.iter().enumerate() {
                    for q in [*pc, *mc] {
                        d += -2.0 * area[k * m + q] * lform[k * m + q][axis][axis]
                            / (4.0 * h[axis] * h[axis]);
                    }
                }
                let p = c * n4 + slab;
                diag[p] += d / cell[p];
            }
        }
    }
    diag
}

/// `P^{4,3}_{g0}` as a matrix-free operator, self-adjoint in `L²(dV0)`.
#[derive(Debug, Clone, Copy)]
pub struct P43Operator<'a> {
    geo: &'a BackgroundGeometry,
}

impl<'a> P43Operator<'a> {
    pub fn geometry(&self) -> &'a BackgroundGeometry {
        self.geo
    }

    pub fn apply_field(&self, u: &ScalarField) -> Result<ScalarField> {
        check_grid(self.geo.grid(), u.grid())?;
        let mut out = vec![0.0; u.values().len()];
        apply_p43(self.geo, u.values(), &mut out);
        Ok(ScalarField::from_raw(*u.grid(), out))
    }
}

impl LinearOperator for P43Operator<'_> {
    fn dim(&self) -> usize {
        self.geo.grid().len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        apply_p43(self.geo, x, y);
    }

    fn weights(&self) -> &[f64] {
        self.geo.cell_weights()
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        Some(p43_diagonal(self.geo))
    }
}

/// Operator realization of `P^{4,3}` on fields satisfying both boundary
/// conditions. Panics if `bc` does not carry both flags.
pub fn p43_operator(geo: &BackgroundGeometry, bc: BoundaryConditionSet) -> P43Operator<'_> {
    assert!(
        bc.is_flow(),
        "P^(4,3) operator requires both boundary conditions"
    );
    P43Operator { geo }
}

/// `<P^{4,3}u, v>` evaluated directly from the four integrals.
pub fn p43_bilinear(u: &ScalarField, v: &ScalarField, geo: &BackgroundGeometry) -> Result<f64> {
    check_grid(geo.grid(), u.grid())?;
    check_grid(geo.grid(), v.grid())?;
    Ok(p43_bilinear_slice(geo, u.values(), v.values()))
}

pub(crate) fn p43_bilinear_slice(geo: &BackgroundGeometry, u: &[f64], v: &[f64]) -> f64 {
    let n = u.len();
    let mut lu = vec![0.0; n];
    let mut lv = vec![0.0; n];
    laplacian_into(geo, u, Closure::Reflect, &mut lu);
    laplacian_into(geo, v, Closure::Reflect, &mut lv);
    let mut total = geo.inner(&lu, &lv);
    if geo.has_interior_curvature() {
        let gu = gradients(geo, u);
        let gv = gradients(geo, v);
        let cell = geo.cell_weights();
        total += compensated_sum((0..n).map(|p| {
            let c = curvature_coefficient(geo, p);
            let mut s = 0.0;
            for a in 0..4 {
                for b in 0..4 {
                    s += c[a][b] * gu[a][p] * gv[b][p];
                }
            }
            cell[p] * s
        }));
    }
    if geo.has_boundary_curvature() {
        let grid = geo.grid();
        let m = grid.face_len();
        let area = geo.area_weight().values();
        let lform = geo.second_fundamental();
        let tu = face_traces(grid, u);
        let tv = face_traces(grid, v);
        for k in 0..2 {
            let gu = slab_gradients(geo, &tu[k]);
            let gv = slab_gradients(geo, &tv[k]);
            total -= 2.0
                * compensated_sum((0..m).map(|c| {
                    let l = &lform[k * m + c];
                    let mut s = 0.0;
                    for a in 0..3 {
                        for b in 0..3 {
                            s += l[a][b] * gu[a][c] * gv[b][c];
                        }
                    }
                    area[k * m + c] * s
                }));
        }
    }
    total
}

// ---------------------------------------------------------------------------
// P4 and P3
// ---------------------------------------------------------------------------

/// Generic first derivative: centered in the interior and periodic axes,
/// one-sided second order at the faces along x4.
fn pointwise_derivative(geo: &BackgroundGeometry, u: &[f64], d: usize, out: &mut [f64]) {
    if d < 3 {
        centered_gradient(geo, u, d, out);
        return;
    }
    let grid = geo.grid();
    let n4 = grid.dims()[3];
    let top = n4 - 1;
    let inv = 1.0 / (2.0 * grid.spacing()[3]);
    for c in 0..grid.columns() {
        let col = &u[c * n4..(c + 1) * n4];
        let o = &mut out[c * n4..(c + 1) * n4];
        o[0] = (-3.0 * col[0] + 4.0 * col[1] - col[2]) * inv;
        o[top] = (3.0 * col[top] - 4.0 * col[top - 1] + col[top - 2]) * inv;
        for j in 1..top {
            o[j] = (col[j + 1] - col[j - 1]) * inv;
        }
    }
}

/// Paneitz operator of the background.
///
/// With both boundary conditions this is exactly the [`p43_operator`]
/// (reflected `u` and `Δu`, boundary form included at the faces). Otherwise
/// the bi-Laplacian uses the requested closures and the divergence term is
/// evaluated pointwise with one-sided normal differences.
pub fn paneitz_p4(
    u: &ScalarField,
    geo: &BackgroundGeometry,
    bc: BoundaryConditionSet,
) -> Result<ScalarField> {
    check_grid(geo.grid(), u.grid())?;
    let n = u.values().len();
    let mut out = vec![0.0; n];
    if bc.is_flow() {
        apply_p43(geo, u.values(), &mut out);
        return Ok(ScalarField::from_raw(*u.grid(), out));
    }
    let mut z = vec![0.0; n];
    laplacian_into(geo, u.values(), Closure::from_flag(bc.neumann_zero), &mut z);
    laplacian_into(geo, &z, Closure::from_flag(bc.p3_zero), &mut out);
    if geo.has_interior_curvature() {
        let mut g = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for (d, gd) in g.iter_mut().enumerate() {
            pointwise_derivative(geo, u.values(), d, gd);
        }
        let mut flux = vec![0.0; n];
        let mut div = vec![0.0; n];
        for b in 0..4 {
            for p in 0..n {
                let c = curvature_coefficient(geo, p);
                flux[p] = (0..4).map(|a| c[a][b] * g[a][p]).sum();
            }
            pointwise_derivative(geo, &flux, b, &mut div);
            for p in 0..n {
                out[p] -= div[p];
            }
        }
    }
    Ok(ScalarField::from_raw(*u.grid(), out))
}

/// Chang-Qing operator evaluated pointwise from its defining formula with
/// one-sided normal differences. `bc.neumann_zero` selects the face closure
/// of the inner Laplacian.
pub fn chang_qing_p3(
    u: &ScalarField,
    geo: &BackgroundGeometry,
    bc: BoundaryConditionSet,
) -> Result<BoundaryField> {
    check_grid(geo.grid(), u.grid())?;
    let grid = *geo.grid();
    let m = grid.face_len();
    let lap = laplacian(u, geo, bc)?;
    let dn_lap = normal_derivative_slice(&grid, lap.values());
    let dn = normal_derivative_slice(&grid, u.values());
    let mut out = vec![0.0; 2 * m];
    let mut tmp = vec![0.0; m];
    for k in 0..2 {
        slab_laplacian(geo, &dn[k * m..(k + 1) * m], &mut tmp);
        for c in 0..m {
            out[k * m + c] = -0.5 * dn_lap[k * m + c] - tmp[c];
        }
    }
    if geo.kind() == crate::geometry::BackgroundKind::Synthetic {
        let traces = face_traces(&grid, u.values());
        let n4 = grid.dims()[3];
        let h = grid.spacing();
        let hmean = geo.h0().values();
        let lform = geo.second_fundamental();
        let fcurv = geo.normal_curvature().values();
        let r = geo.scalar_curvature().values();
        for (k, tr) in traces.iter().enumerate() {
            let slab = if k == 0 { 0 } else { n4 - 1 };
            let hk = &hmean[k * m..(k + 1) * m];
            let mut lap_t = vec![0.0; m];
            slab_laplacian(geo, tr, &mut lap_t);
            let gu = slab_gradients(geo, tr);
            let gh = slab_gradients(geo, hk);
            for (c, nb) in geo.neighbors().iter().enumerate() {
                let i = k * m + c;
                let l = &lform[i];
                let mut hess = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        if l[a][b] == 0.0 {
                            continue;
                        }
                        let second = if a == b {
                            (tr[nb[a].0] + tr[nb[a].1] - 2.0 * tr[c]) / (h[a] * h[a])
                        } else {
                            let [i1, i2, i3] = grid.unravel_face(c);
                            let idx = [i1, i2, i3];
                            let shifted = |sa: isize, sb: isize| {
                                let mut j = idx;
                                let dims = grid.dims();
                                j[a] = (j[a] as isize + sa).rem_euclid(dims[a] as isize) as usize;
                                j[b] = (j[b] as isize + sb).rem_euclid(dims[b] as isize) as usize;
                                tr[grid.face_index(j[0], j[1], j[2])]
                            };
                            (shifted(1, 1) - shifted(1, -1) - shifted(-1, 1) + shifted(-1, -1))
                                / (4.0 * h[a] * h[b])
                        };
                        hess += l[a][b] * second;
                    }
                }
                let grad_dot: f64 = (0..3).map(|a| gh[a][c] * gu[a][c]).sum();
                let rb = r[c * n4 + slab];
                out[i] += 4.0 / 3.0 * hk[c] * lap_t[c]
                    + hess
                    + 2.0 / 3.0 * grad_dot
                    + (fcurv[i] - rb / 3.0) * dn[i];
            }
        }
    }
    Ok(BoundaryField::from_raw(grid, Face::Both, out))
}

/// Discrete `P3` as the natural boundary flux of the `P^{4,3}` form:
/// `P3_f = W_f (P^{4,3} u)_f / (2 a_f)` on every face point.
///
/// For a field with `P4 u = 0` up to the faces (a biharmonic extension) this
/// is the operator whose `dS0` pairing reproduces `½ <P^{4,3}u, v>`.
pub fn p3_flux(u: &ScalarField, geo: &BackgroundGeometry) -> Result<BoundaryField> {
    check_grid(geo.grid(), u.grid())?;
    let mut au = vec![0.0; u.values().len()];
    apply_p43(geo, u.values(), &mut au);
    Ok(BoundaryField::from_raw(
        *u.grid(),
        Face::Both,
        flux_from_operator(geo, &au),
    ))
}

pub(crate) fn flux_from_operator(geo: &BackgroundGeometry, au: &[f64]) -> Vec<f64> {
    let grid = geo.grid();
    let n4 = grid.dims()[3];
    let m = grid.face_len();
    let cell = geo.cell_weights();
    let area = geo.area_weight().values();
    let mut out = vec![0.0; 2 * m];
    for c in 0..m {
        for (k, slab) in [0, n4 - 1].into_iter().enumerate() {
            let p = c * n4 + slab;
            out[k * m + c] = cell[p] * au[p] / (2.0 * area[k * m + c]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SyntheticFields;
    use std::f64::consts::PI;

    fn flat(n: usize) -> BackgroundGeometry {
        BackgroundGeometry::flat(Grid::unit(n, n, n, n + 1).unwrap())
    }

    fn lambda_h(h: f64) -> f64 {
        2.0 / (h * h) * (1.0 - (2.0 * PI * h).cos())
    }

    fn mu_h(h: f64) -> f64 {
        2.0 / (h * h) * (1.0 - (PI * h).cos())
    }

    #[test]
    fn constants_are_harmonic() {
        let geo = flat(6);
        let u = ScalarField::constant(*geo.grid(), 3.7);
        for bc in [BoundaryConditionSet::FLOW, BoundaryConditionSet::NONE] {
            let l = laplacian(&u, &geo, bc).unwrap();
            assert!(l.max_abs() < 1e-10);
        }
        let v = BoundaryField::constant(*geo.grid(), Face::Both, -2.0);
        assert_eq!(boundary_laplacian(&v, &geo).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn periodic_mode_is_eigenfunction() {
        let geo = flat(8);
        let g = *geo.grid();
        let u = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).cos());
        let lam = lambda_h(g.spacing()[0]);
        let l = laplacian(&u, &geo, BoundaryConditionSet::FLOW).unwrap();
        for (a, b) in l.values().iter().zip(u.values()) {
            assert!((a + lam * b).abs() < 1e-11);
        }
        let v = u.trace(Face::Both);
        let lv = boundary_laplacian(&v, &geo).unwrap();
        for (a, b) in lv.values().iter().zip(v.values()) {
            assert!((a + lam * b).abs() < 1e-11);
        }
    }

    #[test]
    fn reflected_cosine_in_x4_is_eigenfunction() {
        let geo = flat(8);
        let g = *geo.grid();
        let u = ScalarField::from_fn(g, |x| (PI * x[3]).cos());
        let mu = mu_h(g.spacing()[3]);
        let l = laplacian(&u, &geo, BoundaryConditionSet::FLOW).unwrap();
        for (a, b) in l.values().iter().zip(u.values()) {
            assert!((a + mu * b).abs() < 1e-11);
        }
    }

    #[test]
    fn one_sided_laplacian_exact_on_cubics() {
        let geo = flat(6);
        let u = ScalarField::from_fn(*geo.grid(), |x| x[3].powi(3));
        let l = laplacian(&u, &geo, BoundaryConditionSet::NONE).unwrap();
        let expect = ScalarField::from_fn(*geo.grid(), |x| 6.0 * x[3]);
        for (a, b) in l.values().iter().zip(expect.values()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn normal_derivative_orientation() {
        let geo = flat(6);
        let g = *geo.grid();
        let m = g.face_len();
        let lin = normal_derivative(&ScalarField::from_fn(g, |x| x[3]), &geo).unwrap();
        let quad = normal_derivative(&ScalarField::from_fn(g, |x| x[3] * x[3]), &geo).unwrap();
        for c in 0..m {
            assert!((lin.values()[c] + 1.0).abs() < 1e-12);
            assert!((lin.values()[m + c] - 1.0).abs() < 1e-12);
            assert!(quad.values()[c].abs() < 1e-12);
            assert!((quad.values()[m + c] - 2.0).abs() < 1e-12);
        }
        let c = normal_derivative(&ScalarField::constant(g, 5.0), &geo).unwrap();
        assert!(c.max_abs() < 1e-12);
    }

    #[test]
    fn flat_paneitz_is_squared_laplacian() {
        let geo = flat(6);
        let g = *geo.grid();
        let u = ScalarField::from_fn(g, |x| {
            (2.0 * PI * x[0]).sin() * (PI * x[3]).cos() + x[1] * x[3] * x[3]
        });
        let p = paneitz_p4(&u, &geo, BoundaryConditionSet::FLOW).unwrap();
        let ll = laplacian(
            &laplacian(&u, &geo, BoundaryConditionSet::FLOW).unwrap(),
            &geo,
            BoundaryConditionSet::FLOW,
        )
        .unwrap();
        assert_eq!(p.values(), ll.values());
    }

    #[test]
    fn paneitz_on_periodic_mode() {
        let geo = flat(8);
        let g = *geo.grid();
        let u = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).cos());
        let lam = lambda_h(g.spacing()[0]);
        let p = paneitz_p4(&u, &geo, BoundaryConditionSet::FLOW).unwrap();
        for (a, b) in p.values().iter().zip(u.values()) {
            assert!((a - lam * lam * b).abs() < 1e-8 * lam * lam);
        }
        let c = paneitz_p4(
            &ScalarField::constant(g, 2.0),
            &geo,
            BoundaryConditionSet::FLOW,
        )
        .unwrap();
        assert!(c.max_abs() < 1e-9);
    }

    #[test]
    fn synthetic_scalar_curvature_adds_wide_stencil_term() {
        // On cos(2πx1) the centered gradient followed by its adjoint is the
        // wide second difference with eigenvalue sin²(2πh)/h².
        let g = Grid::unit(8, 8, 8, 9).unwrap();
        let r = 1.5;
        let mut f = SyntheticFields::zeros(g);
        f.scalar_curvature = ScalarField::constant(g, r);
        let geo = BackgroundGeometry::synthetic(g, f).unwrap();
        let u = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).cos());
        let h = g.spacing()[0];
        let lam = lambda_h(h);
        let wide = (2.0 * PI * h).sin().powi(2) / (h * h);
        let expect = lam * lam + 2.0 / 3.0 * r * wide;
        let p = paneitz_p4(&u, &geo, BoundaryConditionSet::FLOW).unwrap();
        for (a, b) in p.values().iter().zip(u.values()) {
            assert!(
                (a - expect * b).abs() < 1e-8 * expect,
                "{a} vs {}",
                expect * b
            );
        }
    }

    #[test]
    fn zero_synthetic_matches_flat_bitwise() {
        let g = Grid::unit(5, 4, 6, 7).unwrap();
        let flat = BackgroundGeometry::flat(g);
        let syn = BackgroundGeometry::synthetic(g, SyntheticFields::zeros(g)).unwrap();
        let u = ScalarField::from_fn(g, |x| (x[0] * 3.0).sin() + x[3] * x[2]);
        let a = paneitz_p4(&u, &flat, BoundaryConditionSet::FLOW).unwrap();
        let b = paneitz_p4(&u, &syn, BoundaryConditionSet::FLOW).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            p43_bilinear(&u, &u, &flat).unwrap(),
            p43_bilinear(&u, &u, &syn).unwrap()
        );
    }

    #[test]
    fn chang_qing_flat_examples() {
        let geo = flat(8);
        let g = *geo.grid();
        let h4 = g.spacing()[3];
        let c = chang_qing_p3(
            &ScalarField::constant(g, 1.3),
            &geo,
            BoundaryConditionSet::FLOW,
        )
        .unwrap();
        assert!(c.max_abs() < 1e-9);
        // cos(πx4): exact discrete eigenmode of the reflected Laplacian; the
        // one-sided normal difference of cos(πx4) is O(h³), not zero.
        let u = ScalarField::from_fn(g, |x| (PI * x[3]).cos());
        let p3 = chang_qing_p3(&u, &geo, BoundaryConditionSet::FLOW).unwrap();
        let bound = 0.5 * mu_h(h4) * PI.powi(4) * h4.powi(3) / 4.0 * 1.1;
        assert!(p3.max_abs() <= bound, "{} > {bound}", p3.max_abs());
        // x4³ without enforcement: Δu = 6 x4, −½ ∂ₙΔu = −3 on the top face.
        let cubic = ScalarField::from_fn(g, |x| x[3].powi(3));
        let p3 = chang_qing_p3(&cubic, &geo, BoundaryConditionSet::NONE).unwrap();
        let m = g.face_len();
        for c in 0..m {
            assert!(
                (p3.values()[m + c] + 3.0).abs() < 1e-8,
                "{}",
                p3.values()[m + c]
            );
            // lower face: outward derivative of 6x4 is −6
            assert!((p3.values()[c] - 3.0).abs() < 1e-8);
        }
    }

    #[test]
    fn bilinear_on_mode() {
        let geo = flat(8);
        let g = *geo.grid();
        let u = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).cos());
        let lam = lambda_h(g.spacing()[0]);
        let b = p43_bilinear(&u, &u, &geo).unwrap();
        assert!((b - lam * lam * 0.5).abs() < 1e-9 * lam * lam);
        let c = ScalarField::constant(g, 4.0);
        assert!(p43_bilinear(&c, &u, &geo).unwrap().abs() < 1e-9);
    }

    #[test]
    fn separable_mode_eigenvalue() {
        let geo = flat(8);
        let g = *geo.grid();
        let h = g.spacing();
        let u = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).cos() * (PI * x[3]).cos());
        let k = (lambda_h(h[0]) + mu_h(h[3])).powi(2);
        let op = p43_operator(&geo, BoundaryConditionSet::FLOW);
        let au = op.apply_field(&u).unwrap();
        for (a, b) in au.values().iter().zip(u.values()) {
            assert!((a - k * b).abs() < 1e-9 * k);
        }
    }

    #[test]
    fn diagonal_matches_probing() {
        let g = Grid::unit(4, 4, 5, 6).unwrap();
        let mut f = SyntheticFields::zeros(g);
        f.scalar_curvature = ScalarField::from_fn(g, |x| 1.0 + x[0]);
        for (p, ric) in f.ricci.iter_mut().enumerate() {
            let x = g.coords(p);
            ric[0][0] = 0.3 + x[3];
            ric[3][3] = -0.2;
            ric[1][2] = 0.1;
            ric[2][1] = 0.1;
        }
        for l in f.second_fundamental.iter_mut() {
            l[0][0] = 0.4;
            l[2][2] = -0.1;
        }
        f.volume_weight = ScalarField::from_fn(g, |x| (1.0 + 0.2 * x[1]) * 1e-3);
        let geo = BackgroundGeometry::synthetic(g, f).unwrap();
        let diag = p43_diagonal(&geo);
        let mut e = vec![0.0; g.len()];
        let mut out = vec![0.0; g.len()];
        for p in (0..g.len()).step_by(7) {
            e[p] = 1.0;
            apply_p43(&geo, &e, &mut out);
            e[p] = 0.0;
            assert!(
                (out[p] - diag[p]).abs() < 1e-9 * diag[p].abs().max(1.0),
                "{p}: {} vs {}",
                out[p],
                diag[p]
            );
        }
    }
}
