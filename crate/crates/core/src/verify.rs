// SPDX-License-Identifier: Apache-2.0

//! Discrete checks of the `P^{4,3}` operator: symmetry, kernel,
//! nonnegativity, form compatibility, mode eigenvalue and refinement order.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::{BackgroundGeometry, BackgroundKind};
use crate::grid::{Grid, ScalarField};
use crate::operators::{p43_bilinear_slice, p43_operator, BoundaryConditionSet, LinearOperator};
use crate::report::{checks_csv, checks_text, Check};
use crate::spectral::lanczos;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Random pairs for the symmetry and compatibility checks.
    pub pairs: usize,
    pub lanczos_iterations: usize,
    /// Grid sizes `n` (grids `n³ × (n+1)`) for the order check; empty skips it.
    pub order_grids: &'static [usize],
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            pairs: 5,
            lanczos_iterations: 60,
            order_grids: &[8, 12, 16],
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_text(&self) -> String {
        checks_text(&self.checks)
    }

    pub fn to_csv(&self) -> String {
        checks_csv(&self.checks)
    }
}

fn random(grid: Grid, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// `max |<Au, v> − <u, Av>| / max(|<Au, v>|, |<u, Av>|)` over seeded random pairs.
pub fn symmetry_error(geo: &BackgroundGeometry, pairs: usize, seed: u64) -> f64 {
    let op = p43_operator(geo, BoundaryConditionSet::FLOW);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = op.dim();
    let (mut au, mut av) = (vec![0.0; n], vec![0.0; n]);
    (0..pairs)
        .map(|_| {
            let u = random(*geo.grid(), &mut rng);
            let v = random(*geo.grid(), &mut rng);
            op.apply(&u, &mut au);
            op.apply(&v, &mut av);
            let a = geo.inner(&au, &v);
            let b = geo.inner(&u, &av);
            (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max)
}

/// `max |<Au, v>_W − B(u, v)| / max(|<Au, v>_W|, |B(u, v)|)` with `B` the
/// bilinear form evaluated from its integrals.
pub fn compatibility_error(geo: &BackgroundGeometry, pairs: usize, seed: u64) -> f64 {
    let op = p43_operator(geo, BoundaryConditionSet::FLOW);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut au = vec![0.0; op.dim()];
    (0..pairs)
        .map(|_| {
            let u = random(*geo.grid(), &mut rng);
            let v = random(*geo.grid(), &mut rng);
            op.apply(&u, &mut au);
            let a = geo.inner(&au, &v);
            let b = p43_bilinear_slice(geo, &u, &v);
            (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max)
}

/// `max |A 1|`
pub fn kernel_defect(geo: &BackgroundGeometry) -> f64 {
    let op = p43_operator(geo, BoundaryConditionSet::FLOW);
    let ones = vec![1.0; op.dim()];
    let mut out = vec![0.0; op.dim()];
    op.apply(&ones, &mut out);
    out.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Discrete eigenvalue `(λ_h + μ_h)²` of `cos(2π x1 / L1) cos(π x4)` on a
/// flat grid.
pub fn separable_eigenvalue(grid: &Grid) -> f64 {
    let h = grid.spacing();
    let l = grid.lengths();
    let lambda = 2.0 / (h[0] * h[0]) * (1.0 - (2.0 * PI * h[0] / l[0]).cos());
    let mu = 2.0 / (h[3] * h[3]) * (1.0 - (PI * h[3]).cos());
    (lambda + mu).powi(2)
}

fn mode(grid: Grid) -> ScalarField {
    let l1 = grid.lengths()[0];
    ScalarField::from_fn(grid, |x| (2.0 * PI * x[0] / l1).cos() * (PI * x[3]).cos())
}

/// `max |A φ − k φ| / (k max|φ|)` for the separable mode.
pub fn mode_error(geo: &BackgroundGeometry) -> Result<f64> {
    let k = separable_eigenvalue(geo.grid());
    let phi = mode(*geo.grid());
    let a = p43_operator(geo, BoundaryConditionSet::FLOW).apply_field(&phi)?;
    let worst = a
        .values()
        .iter()
        .zip(phi.values())
        .fold(0.0, |m: f64, (x, p)| m.max((x - k * p).abs()));
    Ok(worst / (k * phi.max_abs()))
}

/// Refinement study of the mode eigenvalue against `((2π)² + π²)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderStudy {
    pub grids: Vec<usize>,
    pub eigenvalues: Vec<f64>,
    pub errors: Vec<f64>,
    /// Observed order between consecutive grids.
    pub orders: Vec<f64>,
}

impl OrderStudy {
    pub fn min_order(&self) -> f64 {
        self.orders.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Observed order from errors `e` at spacings `h`.
pub fn observed_orders(h: &[f64], e: &[f64]) -> Vec<f64> {
    h.windows(2)
        .zip(e.windows(2))
        .map(|(h, e)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
        .collect()
}

/// Rayleigh quotient of the mode on flat unit grids `n³ × (n+1)`.
pub fn consistency_order(grids: &[usize]) -> Result<OrderStudy> {
    let exact = ((2.0 * PI).powi(2) + PI * PI).powi(2);
    let mut eigenvalues = Vec::new();
    let mut hs = Vec::new();
    for &n in grids {
        let geo = BackgroundGeometry::flat(Grid::unit(n, n, n, n + 1)?);
        let phi = mode(*geo.grid());
        let a = p43_operator(&geo, BoundaryConditionSet::FLOW).apply_field(&phi)?;
        eigenvalues
            .push(geo.inner(a.values(), phi.values()) / geo.inner(phi.values(), phi.values()));
        hs.push(1.0 / n as f64);
    }
    let errors: Vec<f64> = eigenvalues.iter().map(|k| (k - exact).abs()).collect();
    Ok(OrderStudy {
        grids: grids.to_vec(),
        orders: observed_orders(&hs, &errors),
        eigenvalues,
        errors,
    })
}

/// Runs every check on `geo`. The mode and order checks apply to flat
/// backgrounds only.
pub fn verify_operators(geo: &BackgroundGeometry, opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut checks = vec![
        Check::at_most(
            "symmetry",
            symmetry_error(geo, opts.pairs, opts.seed),
            1e-10,
            "relative",
        ),
        Check::at_most("kernel", kernel_defect(geo), 1e-12, "max |A 1|"),
        Check::at_most(
            "compatibility",
            compatibility_error(geo, opts.pairs, opts.seed),
            1e-10,
            "operator against form",
        ),
    ];
    let op = p43_operator(geo, BoundaryConditionSet::FLOW);
    let ritz = lanczos(&op, opts.lanczos_iterations, opts.seed);
    checks.push(Check::at_least(
        "nonnegativity",
        ritz.min() / ritz.max(),
        -1e-8,
        format!("min Ritz {:.3e}, max Ritz {:.3e}", ritz.min(), ritz.max()),
    ));
    if geo.kind() == BackgroundKind::Flat {
        checks.push(Check::at_most(
            "mode eigenvalue",
            mode_error(geo)?,
            1e-8,
            "relative",
        ));
        if opts.order_grids.len() >= 2 {
            let study = consistency_order(opts.order_grids)?;
            let detail = study
                .grids
                .iter()
                .zip(&study.errors)
                .map(|(n, e)| format!("n={n} err={e:.3e}"))
                .collect::<Vec<_>>()
                .join(", ");
            checks.push(Check::at_least(
                "consistency order",
                study.min_order(),
                1.8,
                detail,
            ));
        }
    }
    Ok(VerifyReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_grid_passes_everything() {
        let geo = BackgroundGeometry::flat(Grid::unit(4, 4, 4, 5).unwrap());
        let opts = VerifyOptions {
            order_grids: &[8, 12],
            lanczos_iterations: 30,
            ..VerifyOptions::default()
        };
        let r = verify_operators(&geo, &opts).unwrap();
        assert!(r.passed(), "{}", r.to_text());
        assert_eq!(r.to_csv().lines().count(), r.checks.len() + 1);
    }

    #[test]
    fn observed_order_of_quadratic_error() {
        let o = observed_orders(&[0.1, 0.05], &[1e-2, 2.5e-3]);
        assert!((o[0] - 2.0).abs() < 1e-12);
    }
}
