// SPDX-License-Identifier: Apache-2.0

//! Per-step diagnostics rows and their CSV representation.

use std::fmt::Write as _;
use std::io::Write;

use crate::error::{Error, Result};

/// Which flow produced a record; selects the CSV column names.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowKind {
    Q,
    T,
}

impl FlowKind {
    pub fn header(self) -> &'static str {
        match self {
            FlowKind::Q => Q_HEADER,
            FlowKind::T => T_HEADER,
        }
    }
}

const Q_HEADER: &str = "step,t,dt,energy,volume,qbar,x_t,cg_iters,residual,ratio,kappa,max_u,min_u,ubar_g0,h2_norm,ext_residual";
const T_HEADER: &str = "step,t,dt,energy,area,tbar,x_t,cg_iters,residual,ratio,kappa,max_u,min_u,ubar_g0,h2_norm,ext_residual";

/// One row per accepted step (row 0 is the initial state).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRecord {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub energy: f64,
    /// Volume for the Q-flow, boundary area for the T-flow.
    pub measure: f64,
    /// `Q̄` or `T̄`
    pub mean_curvature: f64,
    pub x_t: f64,
    pub cg_iterations: usize,
    /// Relative residual of the step's linear solve.
    pub residual: f64,
    /// `Q̄/F̄` or `T̄/S̄`
    pub ratio: f64,
    pub kappa: f64,
    pub max_u: f64,
    pub min_u: f64,
    /// Mean of `u` with respect to `dV0`.
    pub ubar_g0: f64,
    /// `<P^{4,3}u, u> + ū_{g0}²`
    pub h2_norm: f64,
    /// Interior `‖P4 w‖∞` of the extension (T-flow), 0 otherwise.
    pub ext_residual: f64,
}

impl DiagnosticsRecord {
    pub fn is_finite(&self) -> bool {
        [
            self.t,
            self.dt,
            self.energy,
            self.measure,
            self.mean_curvature,
            self.x_t,
            self.residual,
            self.ratio,
            self.kappa,
            self.max_u,
            self.min_u,
            self.ubar_g0,
            self.h2_norm,
            self.ext_residual,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    pub fn to_csv_row(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.step,
            self.t,
            self.dt,
            self.energy,
            self.measure,
            self.mean_curvature,
            self.x_t,
            self.cg_iterations,
            self.residual,
            self.ratio,
            self.kappa,
            self.max_u,
            self.min_u,
            self.ubar_g0,
            self.h2_norm,
            self.ext_residual
        );
        s
    }

    pub fn parse_csv_row(line: &str, line_no: usize) -> Result<Self> {
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 16 {
            return Err(Error::Csv(format!(
                "line {line_no}: expected 16 columns, found {}",
                fields.len()
            )));
        }
        let real = |i: usize| -> Result<f64> {
            fields[i]
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Csv(format!("line {line_no}: bad number {:?}", fields[i])))
        };
        let count = |i: usize| -> Result<usize> {
            fields[i]
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::Csv(format!("line {line_no}: bad count {:?}", fields[i])))
        };
        Ok(Self {
            step: count(0)?,
            t: real(1)?,
            dt: real(2)?,
            energy: real(3)?,
            measure: real(4)?,
            mean_curvature: real(5)?,
            x_t: real(6)?,
            cg_iterations: count(7)?,
            residual: real(8)?,
            ratio: real(9)?,
            kappa: real(10)?,
            max_u: real(11)?,
            min_u: real(12)?,
            ubar_g0: real(13)?,
            h2_norm: real(14)?,
            ext_residual: real(15)?,
        })
    }
}

/// Writes the header once, then one flushed row per record.
pub struct CsvSink<W: Write> {
    out: W,
    kind: FlowKind,
    header_written: bool,
    rows: usize,
}

impl<W: Write> CsvSink<W> {
    pub fn new(out: W, kind: FlowKind) -> Self {
        Self {
            out,
            kind,
            header_written: false,
            rows: 0,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn into_inner(self) -> W {
        self.out
    }

    pub fn emit(&mut self, record: &DiagnosticsRecord) -> Result<()> {
        emit_record(record, self)
    }
}

/// Appends one CSV row to `sink`, writing the header first if needed.
pub fn emit_record<W: Write>(record: &DiagnosticsRecord, sink: &mut CsvSink<W>) -> Result<()> {
    if !sink.header_written {
        writeln!(sink.out, "{}", sink.kind.header())?;
        sink.header_written = true;
    }
    writeln!(sink.out, "{}", record.to_csv_row())?;
    sink.out.flush()?;
    sink.rows += 1;
    Ok(())
}

/// Parses a diagnostics CSV produced by [`CsvSink`].
pub fn read_csv(text: &str) -> Result<(FlowKind, Vec<DiagnosticsRecord>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let kind = match lines.next() {
        Some((_, h)) if h.trim() == Q_HEADER => FlowKind::Q,
        Some((_, h)) if h.trim() == T_HEADER => FlowKind::T,
        Some((_, h)) => return Err(Error::Csv(format!("unrecognized header {:?}", h.trim()))),
        None => return Err(Error::Csv("empty file".into())),
    };
    let records = lines
        .map(|(i, l)| DiagnosticsRecord::parse_csv_row(l, i + 1))
        .collect::<Result<Vec<_>>>()?;
    Ok((kind, records))
}
