// SPDX-License-Identifier: Apache-2.0

//! The energies `II_{Q,F}` and `II_{T,S}` and the Moser-Trudinger ratios.

use crate::conformal::{background_kappa, check_positive_slice, trace_slice};
use crate::error::{Error, Result};
use crate::geometry::{check_grid, BackgroundGeometry};
use crate::grid::{compensated_sum, BoundaryField, Face, ScalarField};
use crate::operators::{normal_derivative, p43_bilinear_slice};

/// Largest `|∂ₙu|` tolerated before a field is reported as outside the
/// admissible space.
pub const NEUMANN_TOLERANCE: f64 = 1e-6;

/// Terms of an energy functional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown {
    /// `<P^{4,3} u, u>`
    pub quadratic: f64,
    /// `4 ∫ Q0 u dV0`
    pub linear: f64,
    /// logarithm of the weighted volume or area
    pub log_term: f64,
    /// multiplier of `log_term`
    pub coefficient: f64,
    pub total: f64,
    /// `max |∂ₙu|`, reported so callers can flag fields outside the
    /// admissible space.
    pub neumann_defect: f64,
}

fn linear_term(geo: &BackgroundGeometry, u: &[f64]) -> f64 {
    4.0 * geo.inner(geo.q0().values(), u)
}

fn neumann_defect(geo: &BackgroundGeometry, u: &ScalarField) -> Result<f64> {
    Ok(normal_derivative(u, geo)?.max_abs())
}

/// `II_{Q,F}(u) = <P^{4,3}u, u> + 4∫Q0 u dV0 − κ log ∫ F e^{4u} dV0`
pub fn energy_qf(
    u: &ScalarField,
    f: &ScalarField,
    geo: &BackgroundGeometry,
) -> Result<EnergyBreakdown> {
    check_grid(geo.grid(), u.grid())?;
    check_grid(geo.grid(), f.grid())?;
    check_positive_slice("F", f.values())?;
    let kappa = background_kappa(geo).total;
    let uv = u.values();
    let weighted = compensated_sum(
        uv.iter()
            .zip(f.values())
            .zip(geo.cell_weights())
            .map(|((v, f), w)| f * (4.0 * v).exp() * w),
    );
    assemble(geo, u, weighted, kappa)
}

/// `II_{T,S}(u) = <P^{4,3}u, u> + 4∫Q0 u dV0 − (4/3) κ log ∮ S e^{3u} dS0`
pub fn energy_ts(
    u: &ScalarField,
    s: &BoundaryField,
    geo: &BackgroundGeometry,
) -> Result<EnergyBreakdown> {
    check_grid(geo.grid(), u.grid())?;
    check_grid(geo.grid(), s.grid())?;
    if s.face() != Face::Both {
        return Err(Error::LengthMismatch {
            got: s.values().len(),
            expected: 2 * geo.grid().face_len(),
        });
    }
    check_positive_slice("S", s.values())?;
    let kappa = background_kappa(geo).total;
    let trace = trace_slice(geo, u.values());
    let weighted = compensated_sum(
        trace
            .iter()
            .zip(s.values())
            .zip(geo.area_weight().values())
            .map(|((v, s), w)| s * (3.0 * v).exp() * w),
    );
    assemble(geo, u, weighted, 4.0 / 3.0 * kappa)
}

fn assemble(
    geo: &BackgroundGeometry,
    u: &ScalarField,
    weighted: f64,
    coefficient: f64,
) -> Result<EnergyBreakdown> {
    let uv = u.values();
    let quadratic = p43_bilinear_slice(geo, uv, uv);
    let linear = linear_term(geo, uv);
    let log_term = weighted.ln();
    let total = if coefficient == 0.0 {
        quadratic + linear
    } else {
        quadratic + linear - coefficient * log_term
    };
    Ok(EnergyBreakdown {
        quadratic,
        linear,
        log_term,
        coefficient,
        total,
        neumann_defect: neumann_defect(geo, u)?,
    })
}

/// `∫ exp(α (u − ū_{g0})² / <P^{4,3}u, u>) dV0`
pub fn mt_ratio(u: &ScalarField, geo: &BackgroundGeometry, alpha: f64) -> Result<f64> {
    check_grid(geo.grid(), u.grid())?;
    let uv = u.values();
    let form = p43_bilinear_slice(geo, uv, uv);
    if form.is_nan() || form <= 0.0 {
        return Err(Error::ConstantField);
    }
    let mean = geo.integrate_slice(uv) / geo.volume();
    Ok(compensated_sum(uv.iter().zip(geo.cell_weights()).map(
        |(v, w)| (alpha * (v - mean).powi(2) / form).exp() * w,
    )))
}

/// `∮ exp(α (u − ū_{∂M})² / <P^{4,3}u, u>) dS0`
pub fn trace_mt_ratio(u: &ScalarField, geo: &BackgroundGeometry, alpha: f64) -> Result<f64> {
    check_grid(geo.grid(), u.grid())?;
    let uv = u.values();
    let form = p43_bilinear_slice(geo, uv, uv);
    if form.is_nan() || form <= 0.0 {
        return Err(Error::ConstantField);
    }
    let trace = trace_slice(geo, uv);
    let aw = geo.area_weight().values();
    let mean = compensated_sum(trace.iter().zip(aw).map(|(v, w)| v * w)) / geo.area();
    Ok(compensated_sum(trace.iter().zip(aw).map(|(v, w)| {
        (alpha * (v - mean).powi(2) / form).exp() * w
    })))
}
