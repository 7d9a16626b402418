// SPDX-License-Identifier: Apache-2.0

//! Conformal Q-curvature and T-curvature flows on `T³ × [0, 1]`.

pub mod config;
pub mod conformal;
pub mod diagnostics;
pub mod error;
pub mod functionals;
pub mod geometry;
pub mod grid;
pub mod operators;
pub mod qflow;
pub mod report;
pub mod run;
pub mod snapshot;
pub mod solvers;
pub mod spectral;
pub mod tflow;
pub mod verify;

pub use config::{parse_config, parse_config_str, FlowSelect, RunConfig};
pub use conformal::{
    evolving_means, kappa_invariants, mean_curvature, q_curvature, t_curvature, EvolvingMeans,
    KappaInvariants, P3Closure,
};
pub use diagnostics::{emit_record, read_csv, CsvSink, DiagnosticsRecord, FlowKind};
pub use error::{Error, Result};
pub use functionals::{energy_qf, energy_ts, mt_ratio, trace_mt_ratio, EnergyBreakdown};
pub use geometry::{BackgroundGeometry, BackgroundKind, SyntheticFields};
pub use grid::{BoundaryField, Face, Grid, ScalarField};
pub use operators::{
    boundary_laplacian, chang_qing_p3, laplacian, normal_derivative, p43_bilinear, p43_operator,
    paneitz_p4, BoundaryConditionSet, LinearOperator, P43Operator,
};
pub use qflow::{run_qflow, FlowConfig, FlowState, RunStatus};
pub use report::{invariant_report, Check, InvariantReport, ReportTolerances};
pub use run::{execute, field_invariants, RunOutcome, Summary};
pub use snapshot::{read_snapshot_file, write_snapshot_file, Snapshot};
pub use solvers::{conjugate_gradient, solve_constrained_biharmonic, CgOptions, SolveReport};
pub use tflow::{run_tflow, BoundaryFlowState};
pub use verify::{verify_operators, VerifyOptions, VerifyReport};
