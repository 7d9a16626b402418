// SPDX-License-Identifier: Apache-2.0

//! Pass/fail checks over a run's diagnostics.

use std::fmt::Write as _;

use crate::diagnostics::{DiagnosticsRecord, FlowKind};
use crate::qflow::ACCEPT_SLACK;

/// One measured quantity against its tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    /// Passes when `measured ≤ tolerance` (NaN fails).
    pub fn at_most(name: &str, measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            measured,
            tolerance,
            pass: measured <= tolerance,
            detail: detail.into(),
        }
    }

    /// Passes when `measured ≥ tolerance` (NaN fails).
    pub fn at_least(name: &str, measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            pass: measured >= tolerance,
            ..Self::at_most(name, measured, tolerance, detail)
        }
    }

    pub fn line(&self) -> String {
        let mut s = format!(
            "{} {:<28} measured {:>12.4e}  tolerance {:>10.3e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance
        );
        if !self.detail.is_empty() {
            let _ = write!(s, "  ({})", self.detail);
        }
        s
    }
}

pub fn checks_text(checks: &[Check]) -> String {
    checks.iter().map(|c| c.line() + "\n").collect()
}

pub fn checks_csv(checks: &[Check]) -> String {
    let mut s = String::from("check,measured,tolerance,pass\n");
    for c in checks {
        let _ = writeln!(
            s,
            "{},{:e},{:e},{}",
            c.name, c.measured, c.tolerance, c.pass
        );
    }
    s
}

/// Tolerances of the invariant report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportTolerances {
    /// Relative drift of volume (Q-flow) or boundary area (T-flow).
    pub measure_drift: f64,
    /// Drift of `Q̄` or `T̄`, relative to `1 + |initial|`.
    pub mean_curvature_drift: f64,
    /// Allowed excursion of `ū_{g0}` from its initial value.
    pub mean_u_excursion: f64,
    pub kappa_drift: f64,
    pub ext_residual: f64,
}

impl Default for ReportTolerances {
    fn default() -> Self {
        Self {
            measure_drift: 1e-6,
            mean_curvature_drift: 1e-6,
            mean_u_excursion: 10.0,
            kappa_drift: 1e-8,
            ext_residual: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InvariantReport {
    /// The diagnostics contain no rows.
    NoData,
    Checked {
        kind: FlowKind,
        steps: usize,
        checks: Vec<Check>,
    },
}

impl InvariantReport {
    pub fn passed(&self) -> bool {
        match self {
            InvariantReport::NoData => false,
            InvariantReport::Checked { checks, .. } => checks.iter().all(|c| c.pass),
        }
    }

    pub fn to_text(&self) -> String {
        match self {
            InvariantReport::NoData => "no data: diagnostics contain no rows\n".to_string(),
            InvariantReport::Checked {
                kind,
                steps,
                checks,
            } => {
                let name = match kind {
                    FlowKind::Q => "qflow",
                    FlowKind::T => "tflow",
                };
                let verdict = if self.passed() {
                    "all invariants pass"
                } else {
                    "invariant failure"
                };
                format!(
                    "{name}: {steps} accepted steps\n{}{verdict}\n",
                    checks_text(checks)
                )
            }
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Evaluates the conservation, monotonicity and decay invariants over the
/// rows of one run (row 0 is the initial state).
pub fn invariant_report(
    kind: FlowKind,
    records: &[DiagnosticsRecord],
    tol: &ReportTolerances,
) -> InvariantReport {
    let Some(first) = records.first() else {
        return InvariantReport::NoData;
    };
    let last = records.last().expect("nonempty");
    let mut checks = Vec::new();

    let finite = records.iter().filter(|r| !r.is_finite()).count();
    checks.push(Check::at_most(
        "finite",
        finite as f64,
        0.0,
        "rows with non-finite values",
    ));

    let measure = match kind {
        FlowKind::Q => "volume drift",
        FlowKind::T => "area drift",
    };
    let drift = records
        .iter()
        .map(|r| rel(r.measure, first.measure))
        .fold(0.0, f64::max);
    checks.push(Check::at_most(
        measure,
        drift,
        tol.measure_drift,
        "max relative",
    ));

    let mean_drift = records
        .iter()
        .map(|r| (r.mean_curvature - first.mean_curvature).abs())
        .fold(0.0, f64::max);
    let mean_name = match kind {
        FlowKind::Q => "qbar conservation",
        FlowKind::T => "tbar conservation",
    };
    checks.push(Check::at_most(
        mean_name,
        mean_drift,
        tol.mean_curvature_drift * (1.0 + first.mean_curvature.abs()),
        "max absolute",
    ));

    let increase = records
        .windows(2)
        .map(|w| (w[1].energy - w[0].energy) / (1.0 + w[0].energy.abs()))
        .fold(0.0, f64::max);
    let bad_steps = records
        .windows(2)
        .filter(|w| w[1].energy > w[0].energy + ACCEPT_SLACK * (1.0 + w[0].energy.abs()))
        .count();
    checks.push(Check::at_most(
        "energy monotone",
        increase,
        ACCEPT_SLACK,
        format!("{bad_steps} increasing steps"),
    ));

    let kappa_drift = records
        .iter()
        .map(|r| (r.kappa - first.kappa).abs() / (1.0 + first.kappa.abs()))
        .fold(0.0, f64::max);
    checks.push(Check::at_most(
        "kappa invariance",
        kappa_drift,
        tol.kappa_drift,
        "max relative",
    ));

    let decay = if first.x_t > 0.0 {
        last.x_t / first.x_t
    } else {
        last.x_t
    };
    checks.push(Check::at_most(
        "x decay",
        decay,
        1.0,
        format!("x0 = {:e}, x_final = {:e}", first.x_t, last.x_t),
    ));

    let excursion = records
        .iter()
        .map(|r| (r.ubar_g0 - first.ubar_g0).abs())
        .fold(0.0, f64::max);
    let h2_max = records.iter().map(|r| r.h2_norm).fold(0.0, f64::max);
    checks.push(Check::at_most(
        "mean of u bounded",
        excursion,
        tol.mean_u_excursion,
        format!("max H2 norm {h2_max:e}"),
    ));

    if kind == FlowKind::T {
        let worst = records.iter().map(|r| r.ext_residual).fold(0.0, f64::max);
        checks.push(Check::at_most(
            "extension residual",
            worst,
            tol.ext_residual,
            "max interior |P4 w|",
        ));
    }

    InvariantReport::Checked {
        kind,
        steps: records.len() - 1,
        checks,
    }
}
