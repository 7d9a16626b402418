// SPDX-License-Identifier: Apache-2.0

//! Time integration of the prescribed Q-curvature flow
//!
//! ```text
//! ∂ₜu = −(Q_{g_u} − (Q̄/F̄) F),   ∂ₙu = 0,   P3 u = 0 on ∂M.
//! ```
//!
//! Each step solves the linearly implicit system
//! `(e^{4uⁿ} + (dt/2) P^{4,3}) δ = dt e^{4uⁿ} rhs(uⁿ)` by CG, restores the
//! volume with a constant shift, and is accepted only if the energy does not
//! rise.

use crate::conformal::{
    background_kappa, check_overflow, check_positive_slice, q_from_p4, volume_mean, volume_of,
};
use crate::diagnostics::DiagnosticsRecord;
use crate::error::{Error, Result};
use crate::functionals::energy_qf;
use crate::geometry::{check_grid, BackgroundGeometry};
use crate::grid::{compensated_sum, ScalarField};
use crate::operators::{apply_p43, p43_diagonal, LinearOperator};
use crate::solvers::{conjugate_gradient, CgOptions};

/// Relative energy rise tolerated when accepting a step.
pub const ACCEPT_SLACK: f64 = 1e-10;

/// Time stepping and stopping parameters shared by both flows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    pub dt0: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Stop once `x(t)` falls to this value.
    pub x_tol: f64,
    pub max_steps: usize,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    /// Relative tolerance of the biharmonic extension (T-flow).
    pub extension_tol: f64,
    /// Write a snapshot every this many accepted steps; 0 disables.
    pub snapshot_every: usize,
    /// Factor applied to `dt` after an accepted step, capped at `dt_max`.
    pub dt_growth: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            dt0: 1e-3,
            dt_min: 1e-10,
            dt_max: 1.0,
            x_tol: 1e-8,
            max_steps: 10_000,
            cg_tol: 1e-9,
            cg_max_iter: 20_000,
            extension_tol: 1e-12,
            snapshot_every: 0,
            dt_growth: 2.0,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt0", self.dt0),
            ("dt_min", self.dt_min),
            ("dt_max", self.dt_max),
            ("x_tol", self.x_tol),
            ("cg_tol", self.cg_tol),
            ("extension_tol", self.extension_tol),
        ];
        for (i, (what, v)) in positive.iter().enumerate() {
            if !(v.is_finite() && *v > 0.0) {
                return Err(Error::NonPositive {
                    what,
                    index: i,
                    value: *v,
                });
            }
        }
        if self.dt_min > self.dt_max || self.dt0 < self.dt_min || self.dt0 > self.dt_max {
            return Err(Error::Hypothesis(format!(
                "time steps must satisfy dt_min <= dt0 <= dt_max (got {:e}, {:e}, {:e})",
                self.dt_min, self.dt0, self.dt_max
            )));
        }
        Ok(())
    }

    pub(crate) fn cg(&self) -> CgOptions {
        CgOptions {
            tol: self.cg_tol,
            max_iter: self.cg_max_iter,
            jacobi: true,
        }
    }
}

/// State of a Q-flow run after an accepted step.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub u: ScalarField,
    pub t: f64,
    /// Step size proposed for the next step.
    pub dt: f64,
    pub step_index: usize,
    pub energy: f64,
    pub diagnostics: DiagnosticsRecord,
}

/// Everything derived from `u` that a step needs.
struct Eval {
    p4u: Vec<f64>,
    q: Vec<f64>,
    volume: f64,
    q_bar: f64,
    f_bar: f64,
}

impl Eval {
    fn ratio(&self) -> f64 {
        self.q_bar / self.f_bar
    }
}

fn evaluate(geo: &BackgroundGeometry, u: &[f64], f: &[f64]) -> Result<Eval> {
    check_overflow(u)?;
    let mut p4u = vec![0.0; u.len()];
    apply_p43(geo, u, &mut p4u);
    let q = q_from_p4(geo, u, &p4u);
    let volume = volume_of(geo, u);
    let q_bar = volume_mean(geo, u, &q, volume);
    let f_bar = volume_mean(geo, u, f, volume);
    Ok(Eval {
        p4u,
        q,
        volume,
        q_bar,
        f_bar,
    })
}

/// `−(Q − (Q̄/F̄) F)`
fn rhs_of(e: &Eval, f: &[f64]) -> Vec<f64> {
    let r = e.ratio();
    e.q.iter().zip(f).map(|(q, f)| -(q - r * f)).collect()
}

/// `∫ (Q − (Q̄/F̄) F)² e^{4u} dV0`
fn x_of(geo: &BackgroundGeometry, u: &[f64], rhs: &[f64]) -> f64 {
    compensated_sum(
        u.iter()
            .zip(rhs)
            .zip(geo.cell_weights())
            .map(|((v, r), w)| r * r * (4.0 * v).exp() * w),
    )
}

/// Right-hand side of the scalar evolution equation,
/// `−½(e^{−4u}(P4 u + 2 Q0) − 2 (Q̄/F̄) F)`.
pub fn qflow_rhs(
    u: &ScalarField,
    geo: &BackgroundGeometry,
    f: &ScalarField,
) -> Result<ScalarField> {
    check_grid(geo.grid(), u.grid())?;
    check_grid(geo.grid(), f.grid())?;
    check_positive_slice("F", f.values())?;
    let e = evaluate(geo, u.values(), f.values())?;
    Ok(ScalarField::from_raw(*u.grid(), rhs_of(&e, f.values())))
}

/// `x(t) = ∫ (Q − (Q̄/F̄) F)² dV_g`
pub fn qflow_x(u: &ScalarField, geo: &BackgroundGeometry, f: &ScalarField) -> Result<f64> {
    let r = qflow_rhs(u, geo, f)?;
    Ok(x_of(geo, u.values(), r.values()))
}

/// `M + (dt/2) P^{4,3}` with a diagonal mass `M`.
struct StepOperator<'a> {
    geo: &'a BackgroundGeometry,
    mass: &'a [f64],
    half_dt: f64,
    diag: &'a [f64],
}

impl LinearOperator for StepOperator<'_> {
    fn dim(&self) -> usize {
        self.mass.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        apply_p43(self.geo, x, y);
        for i in 0..x.len() {
            y[i] = self.mass[i] * x[i] + self.half_dt * y[i];
        }
    }

    fn weights(&self) -> &[f64] {
        self.geo.cell_weights()
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        Some(
            self.mass
                .iter()
                .zip(self.diag)
                .map(|(m, d)| m + self.half_dt * d)
                .collect(),
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn record_for(
    geo: &BackgroundGeometry,
    u: &[f64],
    e: &Eval,
    x_t: f64,
    energy: f64,
    step: usize,
    t: f64,
    dt: f64,
    cg_iterations: usize,
    residual: f64,
) -> DiagnosticsRecord {
    let kappa_p4 = compensated_sum(
        u.iter()
            .zip(&e.q)
            .zip(geo.cell_weights())
            .map(|((v, q), w)| q * (4.0 * v).exp() * w),
    );
    // P3 u = 0 along the flow, so T e^{3u} = T0
    let kappa = kappa_p4 + background_kappa(geo).p3;
    let ubar = geo.integrate_slice(u) / geo.volume();
    let quad = compensated_sum(
        u.iter()
            .zip(&e.p4u)
            .zip(geo.cell_weights())
            .map(|((a, b), w)| a * b * w),
    );
    DiagnosticsRecord {
        step,
        t,
        dt,
        energy,
        measure: e.volume,
        mean_curvature: e.q_bar,
        x_t,
        cg_iterations,
        residual,
        ratio: e.ratio(),
        kappa,
        max_u: u.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min_u: u.iter().copied().fold(f64::INFINITY, f64::min),
        ubar_g0: ubar,
        h2_norm: quad + ubar * ubar,
        ext_residual: 0.0,
    }
}

/// Initial state of a run from `u0`.
pub fn qflow_initial(
    u0: ScalarField,
    geo: &BackgroundGeometry,
    f: &ScalarField,
    config: &FlowConfig,
) -> Result<FlowState> {
    check_grid(geo.grid(), u0.grid())?;
    check_grid(geo.grid(), f.grid())?;
    check_positive_slice("F", f.values())?;
    let e = evaluate(geo, u0.values(), f.values())?;
    let rhs = rhs_of(&e, f.values());
    let x_t = x_of(geo, u0.values(), &rhs);
    let energy = energy_qf(&u0, f, geo)?.total;
    let diagnostics = record_for(
        geo,
        u0.values(),
        &e,
        x_t,
        energy,
        0,
        0.0,
        config.dt0,
        0,
        0.0,
    );
    Ok(FlowState {
        u: u0,
        t: 0.0,
        dt: config.dt0,
        step_index: 0,
        energy,
        diagnostics,
    })
}

/// One accepted step with energy-decrease control. The volume of
/// `reference_volume` is restored exactly after the linear update.
pub fn qflow_step(
    state: &FlowState,
    geo: &BackgroundGeometry,
    f: &ScalarField,
    config: &FlowConfig,
    reference_volume: f64,
) -> Result<FlowState> {
    check_grid(geo.grid(), state.u.grid())?;
    let fv = f.values();
    let u = state.u.values();
    let e = evaluate(geo, u, fv)?;
    let rhs = rhs_of(&e, fv);
    let mass: Vec<f64> = u.iter().map(|v| (4.0 * v).exp()).collect();
    let diag = p43_diagonal(geo);
    let slack = ACCEPT_SLACK * (1.0 + state.energy.abs());
    let mut dt = state.dt.min(config.dt_max);
    loop {
        let op = StepOperator {
            geo,
            mass: &mass,
            half_dt: 0.5 * dt,
            diag: &diag,
        };
        let b: Vec<f64> = mass.iter().zip(&rhs).map(|(m, r)| dt * m * r).collect();
        let guess: Vec<f64> = rhs.iter().map(|r| dt * r).collect();
        let (delta, report) = conjugate_gradient(&op, &b, &guess, config.cg())?;
        if !report.converged {
            return Err(Error::SolverDiverged {
                iterations: report.iterations,
                residual: report.final_residual,
            });
        }
        let mut next: Vec<f64> = u.iter().zip(&delta).map(|(a, d)| a + d).collect();
        check_overflow(&next)?;
        let shift = 0.25 * (reference_volume / volume_of(geo, &next)).ln();
        next.iter_mut().for_each(|v| *v += shift);
        let next_field = ScalarField::from_raw(*geo.grid(), next);
        let energy = energy_qf(&next_field, f, geo)?.total;
        if energy <= state.energy + slack {
            let en = evaluate(geo, next_field.values(), fv)?;
            let rn = rhs_of(&en, fv);
            let x_t = x_of(geo, next_field.values(), &rn);
            let t = state.t + dt;
            let step = state.step_index + 1;
            let diagnostics = record_for(
                geo,
                next_field.values(),
                &en,
                x_t,
                energy,
                step,
                t,
                dt,
                report.iterations,
                report.final_residual,
            );
            return Ok(FlowState {
                u: next_field,
                t,
                dt: (dt * config.dt_growth).min(config.dt_max),
                step_index: step,
                energy,
                diagnostics,
            });
        }
        dt *= 0.5;
        if dt < config.dt_min {
            return Err(Error::StepUnderflow {
                dt_min: config.dt_min,
            });
        }
    }
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    BudgetExhausted,
}

/// Result of a completed Q-flow run.
#[derive(Debug, Clone)]
pub struct QFlowSummary {
    pub status: RunStatus,
    pub final_state: FlowState,
    /// `Q∞`
    pub q_final: ScalarField,
    /// `‖Q∞ − (Q̄∞/F̄∞) F‖` in `L²(dV_g)`
    pub target_residual: f64,
    pub initial_volume: f64,
}

/// Runs the flow from `u0` until `x(t) ≤ x_tol` or `max_steps`. `observe`
/// sees every state including the initial one and may abort the run.
pub fn run_qflow(
    u0: ScalarField,
    geo: &BackgroundGeometry,
    f: &ScalarField,
    config: &FlowConfig,
    observe: &mut dyn FnMut(&FlowState) -> Result<()>,
) -> Result<QFlowSummary> {
    config.validate()?;
    let mut state = qflow_initial(u0, geo, f, config)?;
    let reference_volume = state.diagnostics.measure;
    observe(&state)?;
    let status = loop {
        if state.diagnostics.x_t <= config.x_tol {
            break RunStatus::Converged;
        }
        if state.step_index >= config.max_steps {
            break RunStatus::BudgetExhausted;
        }
        state = qflow_step(&state, geo, f, config, reference_volume)?;
        observe(&state)?;
    };
    let e = evaluate(geo, state.u.values(), f.values())?;
    Ok(QFlowSummary {
        status,
        target_residual: state.diagnostics.x_t.sqrt(),
        q_final: ScalarField::from_raw(*geo.grid(), e.q),
        final_state: state,
        initial_volume: reference_volume,
    })
}

/// Relative residual of the Q-evolution identity between two consecutive
/// states: the forward difference of `G = Q − (Q̄/F̄) F` against
/// `4 G Q − ½ e^{−4u} P4 G − 4 (Q̄/F̄) F mean_g((F/F̄) G)` at the earlier
/// state, in `L²(dV0)`.
pub fn q_evolution_check(
    earlier: &FlowState,
    later: &FlowState,
    geo: &BackgroundGeometry,
    f: &ScalarField,
) -> Result<f64> {
    let dt = later.t - earlier.t;
    if dt.is_nan() || dt <= 0.0 || dt > 1e-3 * (1.0 + 1e-12) {
        return Err(Error::StepTooLarge { dt });
    }
    let fv = f.values();
    let u = earlier.u.values();
    let e0 = evaluate(geo, u, fv)?;
    let e1 = evaluate(geo, later.u.values(), fv)?;
    let g0: Vec<f64> = rhs_of(&e0, fv).iter().map(|r| -r).collect();
    let g1: Vec<f64> = rhs_of(&e1, fv).iter().map(|r| -r).collect();
    let fd: Vec<f64> = g0.iter().zip(&g1).map(|(a, b)| (b - a) / dt).collect();

    let mut p4g = vec![0.0; g0.len()];
    apply_p43(geo, &g0, &mut p4g);
    let ratio = e0.ratio();
    let fg: Vec<f64> = fv.iter().zip(&g0).map(|(f, g)| f / e0.f_bar * g).collect();
    let mean_fg = volume_mean(geo, u, &fg, e0.volume);
    let predicted: Vec<f64> = (0..g0.len())
        .map(|i| {
            4.0 * g0[i] * e0.q[i]
                - 0.5 * (-4.0 * u[i]).exp() * p4g[i]
                - 4.0 * ratio * fv[i] * mean_fg
        })
        .collect();
    let diff: Vec<f64> = fd.iter().zip(&predicted).map(|(a, b)| a - b).collect();
    let scale = geo.inner(&predicted, &predicted).sqrt();
    let err = geo.inner(&diff, &diff).sqrt();
    if scale == 0.0 {
        return Ok(err);
    }
    Ok(err / scale)
}

/// Energy rate check: `(E_{n+1} − Eₙ)/dt` against the trapezoid value
/// `−2 (xₙ + x_{n+1})` of `−4 x(t)`, one relative error per step.
pub fn energy_rate_errors(records: &[DiagnosticsRecord]) -> Vec<f64> {
    records
        .windows(2)
        .map(|w| {
            let dt = w[1].t - w[0].t;
            let rate = (w[1].energy - w[0].energy) / dt;
            let expect = -2.0 * (w[0].x_t + w[1].x_t);
            (rate - expect).abs() / expect.abs()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SyntheticFields;
    use crate::grid::Grid;
    use std::f64::consts::PI;

    fn flat(n: usize) -> BackgroundGeometry {
        BackgroundGeometry::flat(Grid::unit(n, n, n, n + 1).unwrap())
    }

    fn mode(x: [f64; 4]) -> f64 {
        (2.0 * PI * x[0]).cos() * (PI * x[3]).cos()
    }

    #[test]
    fn flat_constants_are_fixed_points() {
        let geo = flat(6);
        let g = *geo.grid();
        let one = ScalarField::constant(g, 1.0);
        for c in [0.0, 0.3] {
            let r = qflow_rhs(&ScalarField::constant(g, c), &geo, &one).unwrap();
            assert!(r.max_abs() < 1e-10);
        }
        let cfg = FlowConfig::default();
        let s0 = qflow_initial(ScalarField::zeros(g), &geo, &one, &cfg).unwrap();
        let s1 = qflow_step(&s0, &geo, &one, &cfg, geo.volume()).unwrap();
        assert!(s1.u.max_abs() < 1e-14);
        assert_eq!(s1.energy, s0.energy);
    }

    #[test]
    fn linearized_rhs_on_mode() {
        let geo = flat(8);
        let g = *geo.grid();
        let h = g.spacing();
        let lam = 2.0 / (h[0] * h[0]) * (1.0 - (2.0 * PI * h[0]).cos());
        let mu = 2.0 / (h[3] * h[3]) * (1.0 - (PI * h[3]).cos());
        let k = (lam + mu).powi(2);
        let eps = 1e-5;
        let u = ScalarField::from_fn(g, |x| eps * mode(x));
        let r = qflow_rhs(&u, &geo, &ScalarField::constant(g, 1.0)).unwrap();
        for (p, &rv) in r.values().iter().enumerate() {
            let e = -0.5 * k * eps * mode(g.coords(p));
            assert!((rv - e).abs() < 10.0 * k * eps * eps, "{rv} vs {e}");
        }
    }

    #[test]
    fn step_amplification_matches_backward_euler() {
        let geo = flat(8);
        let g = *geo.grid();
        let h = g.spacing();
        let lam = 2.0 / (h[0] * h[0]) * (1.0 - (2.0 * PI * h[0]).cos());
        let mu = 2.0 / (h[3] * h[3]) * (1.0 - (PI * h[3]).cos());
        let k = (lam + mu).powi(2);
        let eps = 1e-6;
        let dt = 2e-4;
        let cfg = FlowConfig {
            dt0: dt,
            dt_max: dt,
            cg_tol: 1e-13,
            ..FlowConfig::default()
        };
        let one = ScalarField::constant(g, 1.0);
        let u0 = ScalarField::from_fn(g, |x| eps * mode(x));
        let s0 = qflow_initial(u0, &geo, &one, &cfg).unwrap();
        let s1 = qflow_step(&s0, &geo, &one, &cfg, s0.diagnostics.measure).unwrap();
        let amp =
            geo.inner(s1.u.values(), &ScalarField::from_fn(g, mode).into_values()) / 0.25 / eps;
        let expect = 1.0 / (1.0 + 0.5 * dt * k);
        assert!((amp - expect).abs() < 1e-4, "{amp} vs {expect}");
        assert!(s1.energy < s0.energy);
        let drift =
            (s1.diagnostics.measure - s0.diagnostics.measure).abs() / s0.diagnostics.measure;
        assert!(drift <= 1e-12);
    }

    #[test]
    fn constant_q0_is_immediate_fixed_point() {
        let g = Grid::unit(4, 4, 4, 5).unwrap();
        let mut fields = SyntheticFields::zeros(g);
        fields.q0 = ScalarField::constant(g, 0.7);
        let geo = BackgroundGeometry::synthetic(g, fields).unwrap();
        let one = ScalarField::constant(g, 1.0);
        let mut seen = 0;
        let summary = run_qflow(
            ScalarField::zeros(g),
            &geo,
            &one,
            &FlowConfig::default(),
            &mut |_| {
                seen += 1;
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(summary.status, RunStatus::Converged);
        assert_eq!(summary.final_state.step_index, 0);
        assert_eq!(seen, 1);
        assert!(summary.final_state.diagnostics.x_t <= 1e-20);
    }

    #[test]
    fn evolution_check_at_fixed_point() {
        let geo = flat(4);
        let g = *geo.grid();
        let one = ScalarField::constant(g, 1.0);
        let cfg = FlowConfig {
            dt0: 1e-4,
            ..FlowConfig::default()
        };
        let s0 = qflow_initial(ScalarField::constant(g, 0.2), &geo, &one, &cfg).unwrap();
        let s1 = qflow_step(&s0, &geo, &one, &cfg, s0.diagnostics.measure).unwrap();
        assert!(q_evolution_check(&s0, &s1, &geo, &one).unwrap() <= 1e-8);
        let big = FlowState { t: 1.0, ..s1 };
        assert!(matches!(
            q_evolution_check(&s0, &big, &geo, &one),
            Err(Error::StepTooLarge { .. })
        ));
    }
}
