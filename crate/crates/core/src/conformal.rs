// SPDX-License-Identifier: Apache-2.0

//! Curvatures of `g_u = e^{2u} g0`, evolving measures and means, and the
//! conformally invariant totals.

use crate::error::{Error, Result};
use crate::geometry::{check_grid, BackgroundGeometry};
use crate::grid::{compensated_sum, BoundaryField, Face, ScalarField};
use crate::operators::{
    apply_p43, chang_qing_p3, flux_from_operator, normal_derivative, BoundaryConditionSet,
};

/// Largest admissible `4 max|u|` before `e^{4u}` is treated as divergence.
pub const OVERFLOW_LIMIT: f64 = 700.0;

/// Which discrete realization of `P3 u` enters `T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum P3Closure {
    /// The defining formula with one-sided normal differences.
    #[default]
    Pointwise,
    /// `P3 u = 0` holds by reflection of `Δu`, as along the Q-flow.
    Reflected,
    /// Natural boundary flux of the discrete `P^{4,3}` form, as along the
    /// T-flow.
    Flux,
}

pub(crate) fn check_overflow(values: &[f64]) -> Result<()> {
    let m = values.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    if !m.is_finite() || 4.0 * m > OVERFLOW_LIMIT {
        return Err(Error::Overflow(4.0 * m));
    }
    Ok(())
}

/// Face values of `u`, lower slab first.
pub(crate) fn trace_slice(geo: &BackgroundGeometry, u: &[f64]) -> Vec<f64> {
    let grid = geo.grid();
    let n4 = grid.dims()[3];
    let m = grid.face_len();
    let mut out = vec![0.0; 2 * m];
    for c in 0..m {
        out[c] = u[c * n4];
        out[m + c] = u[c * n4 + n4 - 1];
    }
    out
}

/// `½ e^{-4u} (P4 u + 2 Q0)` from a precomputed `P4 u`.
pub(crate) fn q_from_p4(geo: &BackgroundGeometry, u: &[f64], p4u: &[f64]) -> Vec<f64> {
    let q0 = geo.q0().values();
    u.iter()
        .zip(p4u)
        .zip(q0)
        .map(|((&ui, &pi), &qi)| 0.5 * (-4.0 * ui).exp() * (pi + 2.0 * qi))
        .collect()
}

/// `Q_{g_u}` from `P4 u + 2 Q0 = 2 Q e^{4u}`.
pub fn q_curvature(u: &ScalarField, geo: &BackgroundGeometry) -> Result<ScalarField> {
    check_grid(geo.grid(), u.grid())?;
    check_overflow(u.values())?;
    let mut p4u = vec![0.0; u.values().len()];
    apply_p43(geo, u.values(), &mut p4u);
    Ok(ScalarField::from_raw(
        *u.grid(),
        q_from_p4(geo, u.values(), &p4u),
    ))
}

/// `P3 u` on both faces under the given closure.
pub(crate) fn p3_slice(
    geo: &BackgroundGeometry,
    u: &ScalarField,
    closure: P3Closure,
) -> Result<Vec<f64>> {
    Ok(match closure {
        P3Closure::Pointwise => chang_qing_p3(u, geo, BoundaryConditionSet::FLOW)?.into_values(),
        P3Closure::Reflected => vec![0.0; 2 * geo.grid().face_len()],
        P3Closure::Flux => {
            let mut au = vec![0.0; u.values().len()];
            apply_p43(geo, u.values(), &mut au);
            flux_from_operator(geo, &au)
        }
    })
}

pub(crate) fn t_from_p3(geo: &BackgroundGeometry, trace: &[f64], p3u: &[f64]) -> Vec<f64> {
    let t0 = geo.t0().values();
    trace
        .iter()
        .zip(p3u)
        .zip(t0)
        .map(|((&v, &p), &t)| (-3.0 * v).exp() * (p + t))
        .collect()
}

/// `T_{g_u}` from `P3 u + T0 = T e^{3u}` with the pointwise `P3`.
pub fn t_curvature(u: &ScalarField, geo: &BackgroundGeometry) -> Result<BoundaryField> {
    t_curvature_with(u, geo, P3Closure::Pointwise)
}

/// `T_{g_u}` with an explicit choice of discrete `P3`.
pub fn t_curvature_with(
    u: &ScalarField,
    geo: &BackgroundGeometry,
    closure: P3Closure,
) -> Result<BoundaryField> {
    check_grid(geo.grid(), u.grid())?;
    check_overflow(u.values())?;
    let p3u = p3_slice(geo, u, closure)?;
    let trace = trace_slice(geo, u.values());
    Ok(BoundaryField::from_raw(
        *u.grid(),
        Face::Both,
        t_from_p3(geo, &trace, &p3u),
    ))
}

/// `H_{g_u}` from `∂ₙu + H0 = H e^{u}`.
pub fn mean_curvature(u: &ScalarField, geo: &BackgroundGeometry) -> Result<BoundaryField> {
    check_grid(geo.grid(), u.grid())?;
    check_overflow(u.values())?;
    let dn = normal_derivative(u, geo)?;
    let h0 = geo.h0().values();
    let trace = trace_slice(geo, u.values());
    let values = dn
        .values()
        .iter()
        .zip(h0)
        .zip(&trace)
        .map(|((&d, &h), &v)| (-v).exp() * (d + h))
        .collect();
    Ok(BoundaryField::from_raw(*u.grid(), Face::Both, values))
}

/// `∫ e^{4u} dV0`
pub(crate) fn volume_of(geo: &BackgroundGeometry, u: &[f64]) -> f64 {
    compensated_sum(
        u.iter()
            .zip(geo.cell_weights())
            .map(|(v, w)| (4.0 * v).exp() * w),
    )
}

/// `∮ e^{3v} dS0` over both faces.
pub(crate) fn area_of(geo: &BackgroundGeometry, trace: &[f64]) -> f64 {
    compensated_sum(
        trace
            .iter()
            .zip(geo.area_weight().values())
            .map(|(v, w)| (3.0 * v).exp() * w),
    )
}

/// `∫ f e^{4u} dV0 / ∫ e^{4u} dV0`
pub(crate) fn volume_mean(geo: &BackgroundGeometry, u: &[f64], f: &[f64], volume: f64) -> f64 {
    compensated_sum(
        u.iter()
            .zip(f)
            .zip(geo.cell_weights())
            .map(|((v, f), w)| f * (4.0 * v).exp() * w),
    ) / volume
}

pub(crate) fn area_mean(geo: &BackgroundGeometry, trace: &[f64], f: &[f64], area: f64) -> f64 {
    compensated_sum(
        trace
            .iter()
            .zip(f)
            .zip(geo.area_weight().values())
            .map(|((v, f), w)| f * (3.0 * v).exp() * w),
    ) / area
}

/// All curvatures and measures of `g_u` at once.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformalCurvatures {
    pub q: ScalarField,
    pub t: BoundaryField,
    pub h: BoundaryField,
    pub volume: f64,
    pub boundary_area: f64,
}

pub fn conformal_curvatures(
    u: &ScalarField,
    geo: &BackgroundGeometry,
    closure: P3Closure,
) -> Result<ConformalCurvatures> {
    let q = q_curvature(u, geo)?;
    let t = t_curvature_with(u, geo, closure)?;
    let h = mean_curvature(u, geo)?;
    let trace = trace_slice(geo, u.values());
    Ok(ConformalCurvatures {
        q,
        t,
        h,
        volume: volume_of(geo, u.values()),
        boundary_area: area_of(geo, &trace),
    })
}

/// Means of curvatures and profiles with respect to the evolving measures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolvingMeans {
    pub q_bar: f64,
    pub f_bar: f64,
    pub t_bar: f64,
    pub s_bar: f64,
    pub volume: f64,
    pub area: f64,
}

pub(crate) fn check_positive_slice(what: &'static str, values: &[f64]) -> Result<()> {
    match values.iter().position(|&v| v.is_nan() || v <= 0.0) {
        Some(index) => Err(Error::NonPositive {
            what,
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

/// `Q̄, F̄` over `e^{4u} dV0` and `T̄, S̄` over `e^{3u} dS0`, with the
/// pointwise `P3` in `T`.
pub fn evolving_means(
    u: &ScalarField,
    geo: &BackgroundGeometry,
    f: &ScalarField,
    s: &BoundaryField,
) -> Result<EvolvingMeans> {
    evolving_means_with(u, geo, f, s, P3Closure::Pointwise)
}

pub fn evolving_means_with(
    u: &ScalarField,
    geo: &BackgroundGeometry,
    f: &ScalarField,
    s: &BoundaryField,
    closure: P3Closure,
) -> Result<EvolvingMeans> {
    check_grid(geo.grid(), f.grid())?;
    check_grid(geo.grid(), s.grid())?;
    if s.face() != Face::Both {
        return Err(Error::LengthMismatch {
            got: s.values().len(),
            expected: 2 * geo.grid().face_len(),
        });
    }
    check_positive_slice("F", f.values())?;
    check_positive_slice("S", s.values())?;
    let q = q_curvature(u, geo)?;
    let t = t_curvature_with(u, geo, closure)?;
    let uv = u.values();
    let trace = trace_slice(geo, uv);
    let volume = volume_of(geo, uv);
    let area = area_of(geo, &trace);
    Ok(EvolvingMeans {
        q_bar: volume_mean(geo, uv, q.values(), volume),
        f_bar: volume_mean(geo, uv, f.values(), volume),
        t_bar: area_mean(geo, &trace, t.values(), area),
        s_bar: area_mean(geo, &trace, s.values(), area),
        volume,
        area,
    })
}

/// `κ_{P4} = ∫ Q dV`, `κ_{P3} = ∮ T dS` and their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaInvariants {
    pub p4: f64,
    pub p3: f64,
    pub total: f64,
}

/// κ of the background itself: `∫ Q0 dV0 + ∮ T0 dS0`.
pub fn background_kappa(geo: &BackgroundGeometry) -> KappaInvariants {
    let p4 = geo.integrate_slice(geo.q0().values());
    let p3 = compensated_sum(
        geo.t0()
            .values()
            .iter()
            .zip(geo.area_weight().values())
            .map(|(t, w)| t * w),
    );
    KappaInvariants {
        p4,
        p3,
        total: p4 + p3,
    }
}

/// κ invariants of `g_u`, with the pointwise `P3`.
pub fn kappa_invariants(u: &ScalarField, geo: &BackgroundGeometry) -> Result<KappaInvariants> {
    kappa_invariants_with(u, geo, P3Closure::Pointwise)
}

pub fn kappa_invariants_with(
    u: &ScalarField,
    geo: &BackgroundGeometry,
    closure: P3Closure,
) -> Result<KappaInvariants> {
    let q = q_curvature(u, geo)?;
    let t = t_curvature_with(u, geo, closure)?;
    let uv = u.values();
    let trace = trace_slice(geo, uv);
    let p4 = compensated_sum(
        uv.iter()
            .zip(q.values())
            .zip(geo.cell_weights())
            .map(|((v, q), w)| q * (4.0 * v).exp() * w),
    );
    let p3 = compensated_sum(
        trace
            .iter()
            .zip(t.values())
            .zip(geo.area_weight().values())
            .map(|((v, t), w)| t * (3.0 * v).exp() * w),
    );
    Ok(KappaInvariants {
        p4,
        p3,
        total: p4 + p3,
    })
}
