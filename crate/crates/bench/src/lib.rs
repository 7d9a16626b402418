//! Shared fixtures for the criterion benches.

use qtflow_core::{BackgroundGeometry, Grid, ScalarField};

/// Flat background on an `n³ × (n+1)` unit grid.
pub fn flat(n: usize) -> BackgroundGeometry {
    BackgroundGeometry::flat(Grid::unit(n, n, n, n + 1).expect("valid bench grid"))
}

/// Smooth field satisfying both reflected boundary conditions.
pub fn smooth_field(geo: &BackgroundGeometry) -> ScalarField {
    use std::f64::consts::PI;
    ScalarField::from_fn(*geo.grid(), |x| {
        (2.0 * PI * x[0]).cos() * (PI * x[3]).cos() + 0.3 * (2.0 * PI * x[1]).sin()
    })
}
