// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use qtflow_core::config::FlowSelect;
use qtflow_core::{
    execute, field_invariants, invariant_report, parse_config, read_csv, verify_operators,
    BackgroundGeometry, Error, Grid, InvariantReport, ReportTolerances, RunConfig, RunStatus,
    VerifyOptions,
};

const EXIT_BUDGET: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_CONFIG: u8 = 4;
const EXIT_INVARIANT: u8 = 5;
const EXIT_NO_DATA: u8 = 6;

#[derive(Parser)]
#[command(
    name = "qtflow",
    version,
    about = "Prescribed Q- and T-curvature flows on T^3 x [0,1]"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// INI run configuration
    #[arg(long)]
    config: PathBuf,
    /// Output directory
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Seed for random initial data (overrides the config)
    #[arg(long)]
    seed: Option<u64>,
    /// Grid dimensions as n1xn2xn3xn4 (overrides the config)
    #[arg(long, value_parser = parse_dims)]
    grid_override: Option<[usize; 4]>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Q-curvature flow
    RunQflow(Common),
    /// Run the T-curvature flow
    RunTflow(Common),
    /// Check symmetry, kernel, nonnegativity and consistency of P^(4,3)
    VerifyOperators {
        /// Configuration supplying grid and background (default: flat 8x8x8x9)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write verify.txt and verify.csv here
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = parse_dims)]
        grid_override: Option<[usize; 4]>,
        /// Skip the refinement study
        #[arg(long)]
        no_order: bool,
    },
    /// Energies, kappa and Moser-Trudinger ratios of a stored field
    CheckInvariants {
        #[arg(long)]
        config: PathBuf,
        /// Snapshot file (volume field or boundary trace)
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long, value_parser = parse_dims)]
        grid_override: Option<[usize; 4]>,
    },
    /// Invariant report over a diagnostics CSV
    Report {
        /// Run directory containing diagnostics.csv
        #[arg(long, conflicts_with = "diagnostics")]
        out_dir: Option<PathBuf>,
        /// Diagnostics CSV file
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
}

fn parse_dims(s: &str) -> Result<[usize; 4], String> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != 4 {
        return Err(format!("expected n1xn2xn3xn4, found {s:?}"));
    }
    let mut dims = [0; 4];
    for (d, p) in dims.iter_mut().zip(parts) {
        *d = p.parse().map_err(|_| format!("bad dimension {p:?}"))?;
    }
    Ok(dims)
}

fn load(path: &Path, seed: Option<u64>, dims: Option<[usize; 4]>) -> anyhow::Result<RunConfig> {
    let mut cfg = parse_config(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(d) = dims {
        Grid::new(d, cfg.lengths)?;
        cfg.dims = d;
    }
    Ok(cfg)
}

fn exit_code_for(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(
            Error::Overflow(_)
            | Error::SolverDiverged { .. }
            | Error::SolverNaN(_)
            | Error::NonFinite { .. }
            | Error::StepUnderflow { .. },
        ) => EXIT_DIVERGED,
        Some(Error::Io(_)) => 1,
        Some(_) => EXIT_CONFIG,
        None if e.downcast_ref::<std::io::Error>().is_some() => 1,
        None => EXIT_CONFIG,
    }
}

fn run_flow(common: &Common, flow: FlowSelect) -> anyhow::Result<u8> {
    let cfg = load(&common.config, common.seed, common.grid_override)?;
    if cfg.flow != flow {
        let want = if flow == FlowSelect::Q {
            "qflow"
        } else {
            "tflow"
        };
        return Err(anyhow::Error::new(Error::Config {
            path: cfg.path.clone(),
            line: 0,
            message: format!("this subcommand runs {want}; set `flow = {want}` in [flow]"),
        }));
    }
    let outcome = match execute(&cfg, &common.out_dir, true) {
        Ok(o) => o,
        Err(e) => {
            eprintln!(
                "run aborted; partial output in {} (see summary.txt)",
                common.out_dir.display()
            );
            return Err(e.into());
        }
    };
    print!("{}", outcome.summary.to_text());
    let text = std::fs::read_to_string(&outcome.diagnostics_path)?;
    let (kind, records) = read_csv(&text)?;
    let report = invariant_report(kind, &records, &ReportTolerances::default());
    let report_text = report.to_text();
    std::fs::write(common.out_dir.join("report.txt"), &report_text)?;
    print!("{report_text}");
    if !report.passed() {
        return Ok(EXIT_INVARIANT);
    }
    Ok(match outcome.status {
        RunStatus::Converged => 0,
        RunStatus::BudgetExhausted => EXIT_BUDGET,
    })
}

fn verify(
    config: Option<&Path>,
    out_dir: Option<&Path>,
    seed: u64,
    dims: Option<[usize; 4]>,
    no_order: bool,
) -> anyhow::Result<u8> {
    let geo = match config {
        Some(p) => load(p, None, dims)?.background()?,
        None => {
            let d = dims.unwrap_or([8, 8, 8, 9]);
            BackgroundGeometry::flat(Grid::new(d, [1.0; 3])?)
        }
    };
    let opts = VerifyOptions {
        seed,
        order_grids: if no_order {
            &[]
        } else {
            VerifyOptions::default().order_grids
        },
        ..VerifyOptions::default()
    };
    let report = verify_operators(&geo, &opts)?;
    print!("{}", report.to_text());
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("verify.txt"), report.to_text())?;
        std::fs::write(dir.join("verify.csv"), report.to_csv())?;
    }
    Ok(if report.passed() { 0 } else { EXIT_INVARIANT })
}

fn report(out_dir: Option<&Path>, diagnostics: Option<&Path>) -> anyhow::Result<u8> {
    let path = match (out_dir, diagnostics) {
        (_, Some(p)) => p.to_path_buf(),
        (Some(d), None) => d.join("diagnostics.csv"),
        (None, None) => bail!("give --out-dir or --diagnostics"),
    };
    let text =
        std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let (kind, records) = match read_csv(&text) {
        Ok(r) => r,
        Err(Error::Csv(m)) if m == "empty file" => {
            println!("no data: {} is empty", path.display());
            return Ok(EXIT_NO_DATA);
        }
        Err(e) => return Err(e.into()),
    };
    let r = invariant_report(kind, &records, &ReportTolerances::default());
    print!("{}", r.to_text());
    Ok(match r {
        InvariantReport::NoData => EXIT_NO_DATA,
        _ if r.passed() => 0,
        _ => EXIT_INVARIANT,
    })
}

fn dispatch(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::RunQflow(c) => run_flow(&c, FlowSelect::Q),
        Command::RunTflow(c) => run_flow(&c, FlowSelect::T),
        Command::VerifyOperators {
            config,
            out_dir,
            seed,
            grid_override,
            no_order,
        } => verify(
            config.as_deref(),
            out_dir.as_deref(),
            seed,
            grid_override,
            no_order,
        ),
        Command::CheckInvariants {
            config,
            snapshot,
            grid_override,
        } => {
            let cfg = load(&config, None, grid_override)?;
            print!("{}", field_invariants(&cfg, &snapshot)?.to_text());
            Ok(0)
        }
        Command::Report {
            out_dir,
            diagnostics,
        } => report(out_dir.as_deref(), diagnostics.as_deref()),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
