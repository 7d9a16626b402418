// SPDX-License-Identifier: Apache-2.0

//! The boundary prescribed T-curvature flow. The conformal factor is the
//! biharmonic extension `w` of its boundary trace `v`, so `Q ≡ 0` along the
//! flow, and the trace evolves by
//!
//! ```text
//! ∂ₜv = −(e^{−3v}(P3 w + T0) − (T̄/S̄) S).
//! ```
//!
//! `P3` here is the boundary flux of the discrete `P^{4,3}` form, which makes
//! `v ↦ P3(ext v)` symmetric and nonnegative in `L²(dS0)`.

use crate::conformal::{
    area_mean, area_of, background_kappa, check_overflow, check_positive_slice, t_from_p3,
    trace_slice,
};
use crate::diagnostics::DiagnosticsRecord;
use crate::error::{Error, Result};
use crate::functionals::energy_ts;
use crate::geometry::{check_grid, BackgroundGeometry};
use crate::grid::{compensated_sum, BoundaryField, Face, ScalarField};
use crate::operators::{apply_p43, flux_from_operator, p43_diagonal, LinearOperator};
use crate::qflow::{FlowConfig, RunStatus, ACCEPT_SLACK};
use crate::solvers::{conjugate_gradient, extend_slice, interior_residual, CgOptions};

/// State of a T-flow run after an accepted step.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFlowState {
    /// Boundary trace, both faces.
    pub v: BoundaryField,
    /// Biharmonic extension of `v`.
    pub w: ScalarField,
    pub t: f64,
    pub dt: f64,
    pub step_index: usize,
    pub energy: f64,
    pub diagnostics: DiagnosticsRecord,
}

fn check_background(geo: &BackgroundGeometry) -> Result<()> {
    if geo.q0().values().iter().any(|&q| q != 0.0) {
        return Err(Error::Hypothesis("the T-flow requires Q0 = 0".into()));
    }
    Ok(())
}

fn check_faces(geo: &BackgroundGeometry, v: &BoundaryField) -> Result<()> {
    check_grid(geo.grid(), v.grid())?;
    if v.face() != Face::Both {
        return Err(Error::LengthMismatch {
            got: v.values().len(),
            expected: 2 * geo.grid().face_len(),
        });
    }
    Ok(())
}

fn extension_options(tol: f64) -> CgOptions {
    CgOptions {
        tol,
        max_iter: 50_000,
        jacobi: true,
    }
}

fn extend_checked(
    geo: &BackgroundGeometry,
    v: &[f64],
    guess: Option<&[f64]>,
    tol: f64,
) -> Result<Vec<f64>> {
    let (w, report) = extend_slice(geo, v, guess, extension_options(tol))?;
    if !report.converged {
        return Err(Error::SolverDiverged {
            iterations: report.iterations,
            residual: report.final_residual,
        });
    }
    Ok(w)
}

/// Biharmonic extension of `v` (see [`crate::solve_constrained_biharmonic`]).
pub fn extend(v: &BoundaryField, geo: &BackgroundGeometry, tol: f64) -> Result<ScalarField> {
    check_background(geo)?;
    check_faces(geo, v)?;
    let w = extend_checked(geo, v.values(), None, tol)?;
    Ok(ScalarField::from_raw(*geo.grid(), w))
}

/// `P3(ext v)` as a boundary flux.
fn p3_of_extension(geo: &BackgroundGeometry, w: &[f64]) -> Vec<f64> {
    let mut aw = vec![0.0; w.len()];
    apply_p43(geo, w, &mut aw);
    flux_from_operator(geo, &aw)
}

/// `A v = −e^{−3u} P3(ext v)`
pub fn operator_a(
    v: &BoundaryField,
    u_current: &BoundaryField,
    geo: &BackgroundGeometry,
    tol: f64,
) -> Result<BoundaryField> {
    check_faces(geo, v)?;
    check_faces(geo, u_current)?;
    let w = extend(v, geo, tol)?;
    let p3 = p3_of_extension(geo, w.values());
    let out = p3
        .iter()
        .zip(u_current.values())
        .map(|(p, u)| -(-3.0 * u).exp() * p)
        .collect();
    Ok(BoundaryField::from_raw(*geo.grid(), Face::Both, out))
}

struct Eval {
    trace: Vec<f64>,
    t_curv: Vec<f64>,
    area: f64,
    t_bar: f64,
    s_bar: f64,
}

impl Eval {
    fn ratio(&self) -> f64 {
        self.t_bar / self.s_bar
    }

    fn rhs(&self, s: &[f64]) -> Vec<f64> {
        let r = self.ratio();
        self.t_curv
            .iter()
            .zip(s)
            .map(|(t, s)| -(t - r * s))
            .collect()
    }
}

fn evaluate(geo: &BackgroundGeometry, w: &[f64], s: &[f64]) -> Result<Eval> {
    check_overflow(w)?;
    let trace = trace_slice(geo, w);
    let p3 = p3_of_extension(geo, w);
    let t_curv = t_from_p3(geo, &trace, &p3);
    let area = area_of(geo, &trace);
    let t_bar = area_mean(geo, &trace, &t_curv, area);
    let s_bar = area_mean(geo, &trace, s, area);
    Ok(Eval {
        trace,
        t_curv,
        area,
        t_bar,
        s_bar,
    })
}

fn x_of(geo: &BackgroundGeometry, e: &Eval, rhs: &[f64]) -> f64 {
    compensated_sum(
        e.trace
            .iter()
            .zip(rhs)
            .zip(geo.area_weight().values())
            .map(|((v, r), a)| r * r * (3.0 * v).exp() * a),
    )
}

/// `−(e^{−3u}(P3 u + T0) − (T̄/S̄) S)` for the extension stored in `state`.
pub fn tflow_rhs(
    state: &BoundaryFlowState,
    geo: &BackgroundGeometry,
    s: &BoundaryField,
) -> Result<BoundaryField> {
    check_faces(geo, s)?;
    check_positive_slice("S", s.values())?;
    let e = evaluate(geo, state.w.values(), s.values())?;
    Ok(BoundaryField::from_raw(
        *geo.grid(),
        Face::Both,
        e.rhs(s.values()),
    ))
}

#[allow(clippy::too_many_arguments)]
fn record_for(
    geo: &BackgroundGeometry,
    w: &[f64],
    e: &Eval,
    x_t: f64,
    energy: f64,
    step: usize,
    t: f64,
    dt: f64,
    cg_iterations: usize,
    residual: f64,
) -> DiagnosticsRecord {
    let kappa_p3 = compensated_sum(
        e.trace
            .iter()
            .zip(&e.t_curv)
            .zip(geo.area_weight().values())
            .map(|((v, t), a)| t * (3.0 * v).exp() * a),
    );
    let ubar = geo.integrate_slice(w) / geo.volume();
    let mut aw = vec![0.0; w.len()];
    apply_p43(geo, w, &mut aw);
    let quad = geo.inner(w, &aw);
    DiagnosticsRecord {
        step,
        t,
        dt,
        energy,
        measure: e.area,
        mean_curvature: e.t_bar,
        x_t,
        cg_iterations,
        residual,
        ratio: e.ratio(),
        kappa: background_kappa(geo).p4 + kappa_p3,
        max_u: e.trace.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min_u: e.trace.iter().copied().fold(f64::INFINITY, f64::min),
        ubar_g0: ubar,
        h2_norm: quad + ubar * ubar,
        ext_residual: interior_residual(geo, w),
    }
}

/// Initial state: extends `v0` and evaluates diagnostics.
pub fn tflow_initial(
    v0: BoundaryField,
    geo: &BackgroundGeometry,
    s: &BoundaryField,
    config: &FlowConfig,
) -> Result<BoundaryFlowState> {
    check_background(geo)?;
    check_faces(geo, &v0)?;
    check_faces(geo, s)?;
    check_positive_slice("S", s.values())?;
    check_overflow(v0.values())?;
    let w = extend_checked(geo, v0.values(), None, config.extension_tol)?;
    let e = evaluate(geo, &w, s.values())?;
    let rhs = e.rhs(s.values());
    let x_t = x_of(geo, &e, &rhs);
    let wf = ScalarField::from_raw(*geo.grid(), w);
    let energy = energy_ts(&wf, s, geo)?.total;
    let diagnostics = record_for(
        geo,
        wf.values(),
        &e,
        x_t,
        energy,
        0,
        0.0,
        config.dt0,
        0,
        0.0,
    );
    Ok(BoundaryFlowState {
        v: v0,
        w: wf,
        t: 0.0,
        dt: config.dt0,
        step_index: 0,
        energy,
        diagnostics,
    })
}

/// `(dt/2) P^{4,3} + χ_faces a M³ / W` on the full grid. Eliminating the
/// interior leaves `a (M³ + dt K)` on the faces, `K v = P3(ext v)`.
struct CoupledOperator<'a> {
    geo: &'a BackgroundGeometry,
    half_dt: f64,
    /// Face coefficient `a M³ / W` at every grid point, zero in the interior.
    face_mass: Vec<f64>,
    diag: &'a [f64],
}

impl LinearOperator for CoupledOperator<'_> {
    fn dim(&self) -> usize {
        self.face_mass.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        apply_p43(self.geo, x, y);
        for i in 0..x.len() {
            y[i] = self.half_dt * y[i] + self.face_mass[i] * x[i];
        }
    }

    fn weights(&self) -> &[f64] {
        self.geo.cell_weights()
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        Some(
            self.diag
                .iter()
                .zip(&self.face_mass)
                .map(|(d, m)| self.half_dt * d + m)
                .collect(),
        )
    }
}

/// Scatters face values (lower slab first) onto a full-grid vector.
fn scatter_faces(geo: &BackgroundGeometry, faces: &[f64]) -> Vec<f64> {
    let grid = geo.grid();
    let n4 = grid.dims()[3];
    let m = grid.face_len();
    let mut out = vec![0.0; grid.len()];
    for c in 0..m {
        out[c * n4] = faces[c];
        out[c * n4 + n4 - 1] = faces[m + c];
    }
    out
}

/// Solves `(M³ + dt K) δ = rhs_b` through the coupled full-grid system and
/// returns the full-grid `δ` (approximately the extension of its trace).
pub(crate) fn coupled_solve(
    geo: &BackgroundGeometry,
    mass3: &[f64],
    dt: f64,
    rhs_b: &[f64],
    opts: CgOptions,
) -> Result<(Vec<f64>, crate::solvers::SolveReport)> {
    let cell = geo.cell_weights();
    let area = geo.area_weight().values();
    let grid = geo.grid();
    let n4 = grid.dims()[3];
    let m = grid.face_len();
    let a_over_w: Vec<f64> = {
        let mut v = vec![0.0; 2 * m];
        for c in 0..m {
            v[c] = area[c] / cell[c * n4];
            v[m + c] = area[m + c] / cell[c * n4 + n4 - 1];
        }
        v
    };
    let fm: Vec<f64> = mass3.iter().zip(&a_over_w).map(|(m3, r)| m3 * r).collect();
    let face_mass = scatter_faces(geo, &fm);
    let scaled: Vec<f64> = rhs_b.iter().zip(&a_over_w).map(|(b, r)| b * r).collect();
    let b = scatter_faces(geo, &scaled);
    let diag = p43_diagonal(geo);
    let op = CoupledOperator {
        geo,
        half_dt: 0.5 * dt,
        face_mass,
        diag: &diag,
    };
    let guess = vec![0.0; grid.len()];
    conjugate_gradient(&op, &b, &guess, opts)
}

/// One accepted T-flow step with energy-decrease control. The boundary area
/// `reference_area` is restored exactly after the linear update.
pub fn tflow_step(
    state: &BoundaryFlowState,
    geo: &BackgroundGeometry,
    s: &BoundaryField,
    config: &FlowConfig,
    reference_area: f64,
) -> Result<BoundaryFlowState> {
    let sv = s.values();
    let e = evaluate(geo, state.w.values(), sv)?;
    let rhs = e.rhs(sv);
    let mass3: Vec<f64> = e.trace.iter().map(|v| (3.0 * v).exp()).collect();
    let slack = ACCEPT_SLACK * (1.0 + state.energy.abs());
    let mut dt = state.dt.min(config.dt_max);
    loop {
        let rhs_b: Vec<f64> = mass3.iter().zip(&rhs).map(|(m, r)| dt * m * r).collect();
        let (delta, report) = coupled_solve(geo, &mass3, dt, &rhs_b, config.cg())?;
        if !report.converged {
            return Err(Error::SolverDiverged {
                iterations: report.iterations,
                residual: report.final_residual,
            });
        }
        let mut w: Vec<f64> = state
            .w
            .values()
            .iter()
            .zip(&delta)
            .map(|(a, d)| a + d)
            .collect();
        check_overflow(&w)?;
        let trace = trace_slice(geo, &w);
        let shift = (reference_area / area_of(geo, &trace)).ln() / 3.0;
        w.iter_mut().for_each(|x| *x += shift);
        let v_next = trace_slice(geo, &w);
        let w = extend_checked(geo, &v_next, Some(&w), config.extension_tol)?;
        let wf = ScalarField::from_raw(*geo.grid(), w);
        let vf = BoundaryField::from_raw(*geo.grid(), Face::Both, v_next);
        let energy = energy_ts(&wf, s, geo)?.total;
        if energy <= state.energy + slack {
            let en = evaluate(geo, wf.values(), sv)?;
            let rn = en.rhs(sv);
            let x_t = x_of(geo, &en, &rn);
            let t = state.t + dt;
            let step = state.step_index + 1;
            let diagnostics = record_for(
                geo,
                wf.values(),
                &en,
                x_t,
                energy,
                step,
                t,
                dt,
                report.iterations,
                report.final_residual,
            );
            return Ok(BoundaryFlowState {
                v: vf,
                w: wf,
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

/// Result of a completed T-flow run.
#[derive(Debug, Clone)]
pub struct TFlowSummary {
    pub status: RunStatus,
    pub final_state: BoundaryFlowState,
    /// `T∞`
    pub t_final: BoundaryField,
    /// `‖T∞ − (T̄∞/S̄∞) S‖` in `L²(dS_g)`
    pub target_residual: f64,
    pub initial_area: f64,
}

/// Runs the T-flow from `v0` until `x_T(t) ≤ x_tol` or `max_steps`.
pub fn run_tflow(
    v0: BoundaryField,
    geo: &BackgroundGeometry,
    s: &BoundaryField,
    config: &FlowConfig,
    observe: &mut dyn FnMut(&BoundaryFlowState) -> Result<()>,
) -> Result<TFlowSummary> {
    config.validate()?;
    let mut state = tflow_initial(v0, geo, s, config)?;
    let reference_area = state.diagnostics.measure;
    observe(&state)?;
    let status = loop {
        if state.diagnostics.x_t <= config.x_tol {
            break RunStatus::Converged;
        }
        if state.step_index >= config.max_steps {
            break RunStatus::BudgetExhausted;
        }
        state = tflow_step(&state, geo, s, config, reference_area)?;
        observe(&state)?;
    };
    let e = evaluate(geo, state.w.values(), s.values())?;
    Ok(TFlowSummary {
        status,
        target_residual: state.diagnostics.x_t.sqrt(),
        t_final: BoundaryField::from_raw(*geo.grid(), Face::Both, e.t_curv),
        final_state: state,
        initial_area: reference_area,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn flat(n: usize) -> BackgroundGeometry {
        BackgroundGeometry::flat(Grid::unit(n, n, n, n + 1).unwrap())
    }

    fn random_trace(g: Grid, seed: u64) -> BoundaryField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals = (0..2 * g.face_len())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        BoundaryField::from_vec(g, Face::Both, vals).unwrap()
    }

    #[test]
    fn constants_are_fixed() {
        let geo = flat(4);
        let g = *geo.grid();
        let c = BoundaryField::constant(g, Face::Both, 0.4);
        let a = operator_a(&c, &ScalarField::zeros(g).trace(Face::Both), &geo, 1e-12).unwrap();
        assert!(a.max_abs() < 1e-9);
        let s = BoundaryField::constant(g, Face::Both, 1.0);
        let cfg = FlowConfig::default();
        let st = tflow_initial(c, &geo, &s, &cfg).unwrap();
        assert!(tflow_rhs(&st, &geo, &s).unwrap().max_abs() < 1e-9);
        let next = tflow_step(&st, &geo, &s, &cfg, st.diagnostics.measure).unwrap();
        assert!((next.v.max() - 0.4).abs() < 1e-12 && (next.v.min() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn operator_a_symmetric_and_nonpositive() {
        let geo = flat(4);
        let g = *geo.grid();
        let zero = BoundaryField::zeros(g, Face::Both);
        let a = random_trace(g, 1);
        let b = random_trace(g, 2);
        let aa = operator_a(&a, &zero, &geo, 1e-13).unwrap();
        let ab = operator_a(&b, &zero, &geo, 1e-13).unwrap();
        let lhs = geo
            .integrate_boundary(&aa.zip_map(&b, |x, y| x * y))
            .unwrap();
        let rhs = geo
            .integrate_boundary(&ab.zip_map(&a, |x, y| x * y))
            .unwrap();
        assert!((lhs - rhs).abs() <= 1e-8 * lhs.abs().max(rhs.abs()));
        let self_form = geo
            .integrate_boundary(&aa.zip_map(&a, |x, y| x * y))
            .unwrap();
        assert!(-self_form >= -1e-8);
    }

    #[test]
    fn decays_on_cosine_trace() {
        let geo = flat(6);
        let g = *geo.grid();
        let v = BoundaryField::from_fn(g, Face::Both, |x| 0.01 * (2.0 * PI * x[0]).cos());
        let s = BoundaryField::constant(g, Face::Both, 1.0);
        let cfg = FlowConfig {
            dt0: 1e-3,
            ..FlowConfig::default()
        };
        let st = tflow_initial(v.clone(), &geo, &s, &cfg).unwrap();
        let rhs = tflow_rhs(&st, &geo, &s).unwrap();
        let proj = geo
            .integrate_boundary(&rhs.zip_map(&v, |x, y| x * y))
            .unwrap();
        assert!(proj < 0.0);
        let next = tflow_step(&st, &geo, &s, &cfg, st.diagnostics.measure).unwrap();
        assert!(next.energy < st.energy);
        assert!(next.v.max_abs() < v.max_abs() + 1e-3);
        let drift =
            (next.diagnostics.measure - st.diagnostics.measure).abs() / st.diagnostics.measure;
        assert!(drift <= 1e-12);
    }

    #[test]
    fn rejects_nonzero_q0() {
        let g = Grid::unit(4, 4, 4, 5).unwrap();
        let mut f = crate::geometry::SyntheticFields::zeros(g);
        f.q0 = ScalarField::constant(g, 1.0);
        let geo = BackgroundGeometry::synthetic(g, f).unwrap();
        let v = BoundaryField::zeros(g, Face::Both);
        assert!(matches!(extend(&v, &geo, 1e-10), Err(Error::Hypothesis(_))));
    }
}
