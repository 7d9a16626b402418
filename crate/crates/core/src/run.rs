// SPDX-License-Identifier: Apache-2.0

//! Drives a configured flow and writes its outputs:
//!
//! - `diagnostics.csv`, one row per accepted step
//! - `u_NNNNNN.pfld` (Q-flow) or `v_NNNNNN.pfld` (T-flow) every
//!   `snapshot_every` steps, plus final fields
//! - `summary.txt` with `key: value` lines

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::config::{FlowSelect, RunConfig};
use crate::conformal::{background_kappa, evolving_means_with, kappa_invariants_with, P3Closure};
use crate::diagnostics::{CsvSink, FlowKind};
use crate::error::{Error, Result};
use crate::functionals::{energy_qf, energy_ts, mt_ratio, trace_mt_ratio};
use crate::geometry::{BackgroundGeometry, BackgroundKind};
use crate::grid::{BoundaryField, Face, ScalarField};
use crate::operators::{p43_operator, BoundaryConditionSet};
use crate::qflow::{run_qflow, FlowState, RunStatus};
use crate::report::Check;
use crate::snapshot::{read_snapshot_file, write_snapshot_file, Snapshot};
use crate::spectral::lanczos;
use crate::tflow::{extend, run_tflow, BoundaryFlowState};

pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

/// Ordered `key: value` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary(pub Vec<(String, String)>);

impl Summary {
    fn put(&mut self, key: &str, value: impl ToString) {
        self.0.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.0 {
            let _ = writeln!(s, "{k}: {v}");
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: RunStatus,
    /// Rows written to the diagnostics CSV (initial state included).
    pub rows: usize,
    pub diagnostics_path: PathBuf,
    pub summary: Summary,
}

/// Flow hypotheses on the background. `kappa < 4π²` is reported but never
/// fails, so formal backgrounds with larger kappa can still be run.
pub fn hypothesis_checks(geo: &BackgroundGeometry, flow: FlowSelect) -> Vec<Check> {
    let max_abs = |v: &[f64]| v.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
    let mut checks = Vec::new();
    match flow {
        FlowSelect::Q => {
            checks.push(Check::at_most(
                "T0 vanishes",
                max_abs(geo.t0().values()),
                0.0,
                "max |T0|",
            ));
        }
        FlowSelect::T => {
            checks.push(Check::at_most(
                "Q0 vanishes",
                max_abs(geo.q0().values()),
                0.0,
                "max |Q0|",
            ));
        }
    }
    checks.push(Check::at_most(
        "H0 vanishes",
        max_abs(geo.h0().values()),
        0.0,
        "max |H0|",
    ));
    if geo.kind() == BackgroundKind::Synthetic {
        let ritz = lanczos(&p43_operator(geo, BoundaryConditionSet::FLOW), 40, 1);
        checks.push(Check::at_least(
            "P43 nonnegative",
            ritz.min() / ritz.max(),
            -1e-8,
            format!("min Ritz {:.3e}", ritz.min()),
        ));
    }
    checks
}

fn check_hypotheses(geo: &BackgroundGeometry, flow: FlowSelect) -> Result<()> {
    let failed: Vec<String> = hypothesis_checks(geo, flow)
        .into_iter()
        .filter(|c| !c.pass)
        .map(|c| format!("{} ({:e})", c.name, c.measured))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Hypothesis(failed.join(", ")))
    }
}

fn snapshot_name(prefix: &str, step: usize) -> String {
    format!("{prefix}_{step:06}.pfld")
}

fn status_word(status: RunStatus) -> &'static str {
    match status {
        RunStatus::Converged => "converged",
        RunStatus::BudgetExhausted => "budget_exhausted",
    }
}

/// Classifies a run-terminating error for the summary.
pub fn failure_word(e: &Error) -> &'static str {
    match e {
        Error::Overflow(_)
        | Error::SolverDiverged { .. }
        | Error::SolverNaN(_)
        | Error::NonFinite { .. } => "diverged",
        Error::StepUnderflow { .. } => "stuck",
        _ => "error",
    }
}

/// Runs the configured flow, writing all outputs into `out_dir`. When
/// `check_background` is set the flow hypotheses must hold. On a failed run
/// the rows written so far remain and the summary records the failure.
pub fn execute(cfg: &RunConfig, out_dir: &Path, check_background: bool) -> Result<RunOutcome> {
    std::fs::create_dir_all(out_dir)?;
    let geo = cfg.background()?;
    let grid = *geo.grid();
    if check_background {
        check_hypotheses(&geo, cfg.flow)?;
    }
    let kind = match cfg.flow {
        FlowSelect::Q => FlowKind::Q,
        FlowSelect::T => FlowKind::T,
    };
    let diagnostics_path = out_dir.join(DIAGNOSTICS_FILE);
    let mut sink = CsvSink::new(BufWriter::new(File::create(&diagnostics_path)?), kind);
    let every = cfg.flow_config.snapshot_every;
    let fc = &cfg.flow_config;

    let mut summary = Summary::default();
    summary.put(
        "flow",
        if kind == FlowKind::Q {
            "qflow"
        } else {
            "tflow"
        },
    );
    summary.put("grid", {
        let d = grid.dims();
        format!("{}x{}x{}x{}", d[0], d[1], d[2], d[3])
    });
    summary.put("seed", cfg.seed);
    let kappa = background_kappa(&geo).total;
    summary.put("kappa", format!("{kappa:e}"));
    summary.put("kappa_below_4pi2", kappa < 4.0 * PI * PI);

    let result = match cfg.flow {
        FlowSelect::Q => {
            let u0 = cfg.initial_field(grid)?;
            let f = cfg.profile_volume(grid)?;
            let mut observe = |s: &FlowState| -> Result<()> {
                sink.emit(&s.diagnostics)?;
                if every > 0 && s.step_index.is_multiple_of(every) {
                    write_snapshot_file(
                        &out_dir.join(snapshot_name("u", s.step_index)),
                        &Snapshot::Volume(s.u.clone()),
                    )?;
                }
                Ok(())
            };
            run_qflow(u0, &geo, &f, fc, &mut observe).and_then(|run| {
                let st = &run.final_state;
                write_snapshot_file(
                    &out_dir.join("u_final.pfld"),
                    &Snapshot::Volume(st.u.clone()),
                )?;
                write_snapshot_file(
                    &out_dir.join("q_final.pfld"),
                    &Snapshot::Volume(run.q_final.clone()),
                )?;
                summary.put("status", status_word(run.status));
                summary.put("steps", st.step_index);
                summary.put("t_final", format!("{:e}", st.t));
                summary.put("x_final", format!("{:e}", st.diagnostics.x_t));
                summary.put("energy_final", format!("{:e}", st.energy));
                summary.put("volume_initial", format!("{:e}", run.initial_volume));
                summary.put("volume_final", format!("{:e}", st.diagnostics.measure));
                summary.put("qbar_final", format!("{:e}", st.diagnostics.mean_curvature));
                summary.put("target_residual", format!("{:e}", run.target_residual));
                summary.put(
                    "constant_limit",
                    format!("{:e}", 0.25 * (run.initial_volume / geo.volume()).ln()),
                );
                put_field_stats(&mut summary, &st.u, &geo);
                Ok(run.status)
            })
        }
        FlowSelect::T => {
            let v0 = cfg.initial_trace(grid)?;
            let s = cfg.profile_boundary(grid)?;
            let mut observe = |st: &BoundaryFlowState| -> Result<()> {
                sink.emit(&st.diagnostics)?;
                if every > 0 && st.step_index.is_multiple_of(every) {
                    write_snapshot_file(
                        &out_dir.join(snapshot_name("v", st.step_index)),
                        &Snapshot::Boundary(st.v.clone()),
                    )?;
                }
                Ok(())
            };
            run_tflow(v0, &geo, &s, fc, &mut observe).and_then(|run| {
                let st = &run.final_state;
                write_snapshot_file(
                    &out_dir.join("v_final.pfld"),
                    &Snapshot::Boundary(st.v.clone()),
                )?;
                write_snapshot_file(
                    &out_dir.join("w_final.pfld"),
                    &Snapshot::Volume(st.w.clone()),
                )?;
                write_snapshot_file(
                    &out_dir.join("t_final.pfld"),
                    &Snapshot::Boundary(run.t_final.clone()),
                )?;
                summary.put("status", status_word(run.status));
                summary.put("steps", st.step_index);
                summary.put("t_final", format!("{:e}", st.t));
                summary.put("x_final", format!("{:e}", st.diagnostics.x_t));
                summary.put("energy_final", format!("{:e}", st.energy));
                summary.put("area_initial", format!("{:e}", run.initial_area));
                summary.put("area_final", format!("{:e}", st.diagnostics.measure));
                summary.put("tbar_final", format!("{:e}", st.diagnostics.mean_curvature));
                summary.put("target_residual", format!("{:e}", run.target_residual));
                summary.put(
                    "constant_limit",
                    format!("{:e}", (run.initial_area / geo.area()).ln() / 3.0),
                );
                let trace = &st.v;
                summary.put(
                    "v_mean",
                    format!(
                        "{:e}",
                        trace.values().iter().sum::<f64>() / trace.values().len() as f64
                    ),
                );
                summary.put("v_oscillation", format!("{:e}", trace.max() - trace.min()));
                summary.put(
                    "ext_residual_final",
                    format!("{:e}", st.diagnostics.ext_residual),
                );
                Ok(run.status)
            })
        }
    };
    let rows = sink.rows();
    match result {
        Ok(status) => {
            summary.put("rows", rows);
            std::fs::write(out_dir.join(SUMMARY_FILE), summary.to_text())?;
            Ok(RunOutcome {
                status,
                rows,
                diagnostics_path,
                summary,
            })
        }
        Err(e) => {
            summary.put("status", failure_word(&e));
            summary.put("error", e.to_string());
            summary.put("rows", rows);
            std::fs::write(out_dir.join(SUMMARY_FILE), summary.to_text())?;
            Err(e)
        }
    }
}

fn put_field_stats(summary: &mut Summary, u: &ScalarField, geo: &BackgroundGeometry) {
    let mean = geo.integrate_slice(u.values()) / geo.volume();
    summary.put("u_mean", format!("{mean:e}"));
    summary.put("u_oscillation", format!("{:e}", u.max() - u.min()));
}

/// Energies, conformal invariants and Moser-Trudinger ratios of a stored
/// field. A boundary snapshot is first extended biharmonically. The
/// ratios are evaluated at `α = 16π²` (volume) and `α = 12π²` (trace) and
/// are diagnostics only.
pub fn field_invariants(cfg: &RunConfig, snapshot: &Path) -> Result<Summary> {
    let geo = cfg.background()?;
    let grid = *geo.grid();
    let u = match read_snapshot_file(snapshot, grid)? {
        Snapshot::Volume(u) => u,
        Snapshot::Boundary(v) => extend(&v, &geo, cfg.flow_config.extension_tol)?,
    };
    let mut out = Summary::default();
    out.put("snapshot", snapshot.display());
    let (energy, closure) = match cfg.flow {
        FlowSelect::Q => (
            energy_qf(&u, &cfg.profile_volume(grid)?, &geo)?,
            P3Closure::Reflected,
        ),
        FlowSelect::T => (
            energy_ts(&u, &cfg.profile_boundary(grid)?, &geo)?,
            P3Closure::Flux,
        ),
    };
    out.put("energy", format!("{:e}", energy.total));
    out.put("energy_quadratic", format!("{:e}", energy.quadratic));
    out.put("energy_linear", format!("{:e}", energy.linear));
    out.put("energy_log_term", format!("{:e}", energy.log_term));
    out.put("neumann_defect", format!("{:e}", energy.neumann_defect));
    let k = kappa_invariants_with(&u, &geo, closure)?;
    out.put("kappa_p4", format!("{:e}", k.p4));
    out.put("kappa_p3", format!("{:e}", k.p3));
    out.put("kappa", format!("{:e}", k.total));
    out.put(
        "kappa_background",
        format!("{:e}", background_kappa(&geo).total),
    );
    let one_v = ScalarField::constant(grid, 1.0);
    let one_b = BoundaryField::constant(grid, Face::Both, 1.0);
    let means = evolving_means_with(&u, &geo, &one_v, &one_b, closure)?;
    out.put("volume", format!("{:e}", means.volume));
    out.put("area", format!("{:e}", means.area));
    out.put("qbar", format!("{:e}", means.q_bar));
    out.put("tbar", format!("{:e}", means.t_bar));
    match mt_ratio(&u, &geo, 16.0 * PI * PI) {
        Ok(r) => out.put("mt_ratio_16pi2", format!("{r:e}")),
        Err(Error::ConstantField) => out.put("mt_ratio_16pi2", "constant field"),
        Err(e) => return Err(e),
    }
    match trace_mt_ratio(&u, &geo, 12.0 * PI * PI) {
        Ok(r) => out.put("trace_mt_ratio_12pi2", format!("{r:e}")),
        Err(Error::ConstantField) => out.put("trace_mt_ratio_12pi2", "constant field"),
        Err(e) => return Err(e),
    }
    Ok(out)
}
