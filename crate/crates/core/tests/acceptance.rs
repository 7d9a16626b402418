//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use qtflow_core::config::{mode_field, random_field};
use qtflow_core::qflow::{
    energy_rate_errors, q_evolution_check, qflow_initial, qflow_step, ACCEPT_SLACK,
};
use qtflow_core::tflow::extend;
use qtflow_core::verify::{consistency_order, observed_orders, VerifyOptions};
use qtflow_core::{
    execute, kappa_invariants, parse_config_str, run_qflow, run_tflow, verify_operators,
    BackgroundGeometry, BoundaryField, DiagnosticsRecord, Face, FlowConfig, Grid, RunStatus,
    ScalarField, SyntheticFields,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn flat(n: usize) -> BackgroundGeometry {
    BackgroundGeometry::flat(Grid::unit(n, n, n, n + 1).unwrap())
}

/// Gauss-Legendre nodes and weights on [0, 1] by Golub-Welsch.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut j = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = k as f64 / ((4 * k * k - 1) as f64).sqrt();
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(j);
    (0..n)
        .map(|i| {
            let x = eig.eigenvalues[i];
            let w = 2.0 * eig.eigenvectors[(0, i)].powi(2);
            (0.5 * (x + 1.0), 0.5 * w)
        })
        .collect()
}

/// `∫ exp(p · g(x1, x4)) dx1 dx4` over the unit square by tensor Gauss-Legendre.
fn gl_2d(g: impl Fn(f64, f64) -> f64, p: f64) -> f64 {
    let q = gauss_legendre(60);
    let mut s = 0.0;
    for &(x1, w1) in &q {
        for &(x4, w4) in &q {
            s += w1 * w4 * (p * g(x1, x4)).exp();
        }
    }
    s
}

fn c1_operator_suite() -> Outcome {
    let geo = flat(8);
    let opts = VerifyOptions {
        order_grids: &[],
        ..VerifyOptions::default()
    };
    let r = verify_operators(&geo, &opts).unwrap();
    let detail = r
        .checks
        .iter()
        .map(|c| format!("{} {:.2e}", c.name, c.measured))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(r.passed(), detail)
}

fn c2_consistency_order() -> Outcome {
    let s = consistency_order(&[8, 12, 16]).unwrap();
    outcome(
        s.min_order() >= 1.8,
        format!(
            "errors {:.3e} {:.3e} {:.3e}, orders {:.3} {:.3}",
            s.errors[0], s.errors[1], s.errors[2], s.orders[0], s.orders[1]
        ),
    )
}

fn c3_kappa_invariance() -> Outcome {
    let ns = [8usize, 12, 16];
    let mut worst = Vec::new();
    for &n in &ns {
        let geo = flat(n);
        let m = (0..10u64)
            .map(|seed| {
                let u = random_field(*geo.grid(), 0.3, seed);
                kappa_invariants(&u, &geo).unwrap().total.abs()
            })
            .fold(0.0, f64::max);
        worst.push(m);
    }
    let h: Vec<f64> = ns.iter().map(|n| 1.0 / *n as f64).collect();
    let orders = observed_orders(&h, &worst);
    let min = orders.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        min >= 1.8,
        format!(
            "max|kappa| {:.3e} {:.3e} {:.3e}, orders {:.3} {:.3}",
            worst[0], worst[1], worst[2], orders[0], orders[1]
        ),
    )
}

fn acceptance_flow_config() -> FlowConfig {
    FlowConfig {
        dt0: 1e-4,
        dt_max: 1e-4,
        x_tol: 1e-8,
        max_steps: 5000,
        ..FlowConfig::default()
    }
}

fn qflow_criteria(f: ScalarField, residual_target: Option<f64>) -> Outcome {
    let geo = flat(12);
    let grid = *geo.grid();
    let u0 = mode_field(grid, 0.1, [1, 0, 0], 1);
    let mut records: Vec<DiagnosticsRecord> = Vec::new();
    let mut observe = |s: &qtflow_core::FlowState| {
        records.push(s.diagnostics);
        Ok(())
    };
    let run = match run_qflow(u0, &geo, &f, &acceptance_flow_config(), &mut observe) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("run failed: {e}")),
    };
    let st = &run.final_state;
    let u = st.u.values();
    let mean = u.iter().sum::<f64>() / u.len() as f64;
    let spread = u.iter().fold(0.0, |m: f64, v| m.max((v - mean).abs()));

    let vol0 = gl_2d(|x1, x4| (2.0 * PI * x1).cos() * (PI * x4).cos(), 0.4);
    let constant = 0.25 * vol0.ln();
    let const_err = u.iter().fold(0.0, |m: f64, v| m.max((v - constant).abs()));

    let v_first = records[0].measure;
    let drift = records
        .iter()
        .map(|r| (r.measure - v_first).abs() / v_first)
        .fold(0.0, f64::max);
    let increases = records
        .windows(2)
        .filter(|w| w[1].energy > w[0].energy + ACCEPT_SLACK * (1.0 + w[0].energy.abs()))
        .count();
    let max_dt = records.iter().map(|r| r.dt).fold(0.0, f64::max);
    let rate_err = energy_rate_errors(&records).into_iter().fold(0.0, f64::max);

    let mut pass = run.status == RunStatus::Converged
        && st.diagnostics.x_t <= 1e-8
        && spread <= 1e-5
        && const_err <= 1e-5
        && drift <= 1e-6
        && increases == 0
        && max_dt <= 1e-3
        && rate_err <= 0.1;
    let mut detail = format!(
        "steps {}, x {:.2e}, spread {:.2e}, |u-c| {:.2e}, vol drift {:.2e}, energy increases {}, dE/dt err {:.3}",
        st.step_index, st.diagnostics.x_t, spread, const_err, drift, increases, rate_err
    );
    if let Some(target) = residual_target {
        pass &= run.target_residual <= target;
        detail.push_str(&format!(", |Q-target| {:.2e}", run.target_residual));
    }
    outcome(pass, detail)
}

fn c4_qflow_flat() -> Outcome {
    let grid = Grid::unit(12, 12, 12, 13).unwrap();
    qflow_criteria(ScalarField::constant(grid, 1.0), None)
}

fn c5_qflow_profile() -> Outcome {
    let grid = Grid::unit(12, 12, 12, 13).unwrap();
    let f = ScalarField::from_fn(grid, |x| 1.0 + 0.5 * (2.0 * PI * x[0]).cos());
    qflow_criteria(f, Some(1e-4))
}

/// Flat `P^{4,3}` assembled densely from its stencil: the reflected
/// second difference in x4, periodic in x1..x3, squared.
fn dense_flat_p43(grid: &Grid) -> DMatrix<f64> {
    let [n1, n2, n3, n4] = grid.dims();
    let h = grid.spacing();
    let n = grid.len();
    let idx = |a: usize, b: usize, c: usize, d: usize| ((a * n2 + b) * n3 + c) * n4 + d;
    let mut l = DMatrix::zeros(n, n);
    for a in 0..n1 {
        for b in 0..n2 {
            for c in 0..n3 {
                for d in 0..n4 {
                    let p = idx(a, b, c, d);
                    let periodic = [
                        (
                            idx((a + 1) % n1, b, c, d),
                            idx((a + n1 - 1) % n1, b, c, d),
                            h[0],
                        ),
                        (
                            idx(a, (b + 1) % n2, c, d),
                            idx(a, (b + n2 - 1) % n2, c, d),
                            h[1],
                        ),
                        (
                            idx(a, b, (c + 1) % n3, d),
                            idx(a, b, (c + n3 - 1) % n3, d),
                            h[2],
                        ),
                    ];
                    for (up, dn, hh) in periodic {
                        l[(p, up)] += 1.0 / (hh * hh);
                        l[(p, dn)] += 1.0 / (hh * hh);
                        l[(p, p)] -= 2.0 / (hh * hh);
                    }
                    let k = 1.0 / (h[3] * h[3]);
                    let up = if d + 1 < n4 { d + 1 } else { d - 1 };
                    let dn = if d > 0 { d - 1 } else { d + 1 };
                    l[(p, idx(a, b, c, up))] += k;
                    l[(p, idx(a, b, c, dn))] += k;
                    l[(p, p)] -= 2.0 * k;
                }
            }
        }
    }
    &l * &l
}

fn c6_extension_oracle() -> Outcome {
    let grid = Grid::unit(4, 4, 4, 5).unwrap();
    let geo = BackgroundGeometry::flat(grid);
    let a = dense_flat_p43(&grid);
    let n4 = grid.dims()[3];
    let n = grid.len();
    let interior: Vec<usize> = (0..n).filter(|p| p % n4 != 0 && p % n4 != n4 - 1).collect();
    let faces: Vec<usize> = (0..n).filter(|p| p % n4 == 0 || p % n4 == n4 - 1).collect();
    let aii = DMatrix::from_fn(interior.len(), interior.len(), |i, j| {
        a[(interior[i], interior[j])]
    });
    let lu = aii.lu();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let v = BoundaryField::from_vec(
            grid,
            Face::Both,
            (0..2 * grid.face_len())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        )
        .unwrap();
        let w = extend(&v, &geo, 1e-14).unwrap();
        let mut full = vec![0.0; n];
        for &p in &faces {
            full[p] = w.values()[p];
        }
        let rhs = DVector::from_fn(interior.len(), |i, _| {
            -faces
                .iter()
                .map(|&q| a[(interior[i], q)] * full[q])
                .sum::<f64>()
        });
        let x = lu.solve(&rhs).expect("nonsingular");
        for (i, &p) in interior.iter().enumerate() {
            worst = worst.max((x[i] - w.values()[p]).abs());
        }
        let lower = v.slab(0);
        for (c, &vc) in lower.iter().enumerate() {
            worst = worst.max((w.values()[c * n4] - vc).abs());
        }
    }
    outcome(worst <= 1e-8, format!("max |w - w_LU| {worst:.3e}"))
}

fn c7_tflow() -> Outcome {
    let geo = flat(12);
    let grid = *geo.grid();
    let v0 = BoundaryField::from_fn(grid, Face::Both, |x| 0.1 * (2.0 * PI * x[0]).cos());
    let s = BoundaryField::constant(grid, Face::Both, 1.0);
    let cfg = FlowConfig {
        dt0: 1e-4,
        dt_max: 1e-2,
        x_tol: 1e-8,
        max_steps: 5000,
        ..FlowConfig::default()
    };
    let mut records: Vec<DiagnosticsRecord> = Vec::new();
    let mut observe = |st: &qtflow_core::BoundaryFlowState| {
        records.push(st.diagnostics);
        Ok(())
    };
    let run = match run_tflow(v0, &geo, &s, &cfg, &mut observe) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("run failed: {e}")),
    };
    let v = run.final_state.v.values();
    // area(v0)/area0: two faces of unit area, trace independent of x2, x3
    let q = gauss_legendre(60);
    let ratio: f64 = q
        .iter()
        .map(|&(x, w)| w * (0.3 * (2.0 * PI * x).cos()).exp())
        .sum();
    let constant = ratio.ln() / 3.0;
    let const_err = v.iter().fold(0.0, |m: f64, x| m.max((x - constant).abs()));
    let a0 = records[0].measure;
    let drift = records
        .iter()
        .map(|r| (r.measure - a0).abs() / a0)
        .fold(0.0, f64::max);
    let increases = records
        .windows(2)
        .filter(|w| w[1].energy > w[0].energy + ACCEPT_SLACK * (1.0 + w[0].energy.abs()))
        .count();
    let ext = records.iter().map(|r| r.ext_residual).fold(0.0, f64::max);
    let x = run.final_state.diagnostics.x_t;
    let pass = run.status == RunStatus::Converged
        && x <= 1e-8
        && const_err <= 1e-5
        && drift <= 1e-6
        && increases == 0
        && ext <= 1e-8;
    outcome(
        pass,
        format!(
            "steps {}, x_T {x:.2e}, |v-c| {const_err:.2e}, area drift {drift:.2e}, energy increases {increases}, max |P4 w| {ext:.2e}",
            run.final_state.step_index
        ),
    )
}

fn c8_q_evolution() -> Outcome {
    let grid = Grid::new([8, 8, 8, 9], [4.0; 3]).unwrap();
    let mut fields = SyntheticFields::zeros(grid);
    fields.q0 = ScalarField::constant(grid, 1.0);
    let geo = BackgroundGeometry::synthetic(grid, fields).unwrap();
    let f = ScalarField::from_fn(grid, |x| 1.0 + 0.5 * (2.0 * PI * x[0] / 4.0).cos());
    let u0 = ScalarField::from_fn(grid, |x| 0.05 * (2.0 * PI * x[1] / 4.0).cos());
    let dts = [1e-3, 5e-4, 2.5e-4];
    let mut residuals = Vec::new();
    let mut taken = Vec::new();
    for dt in dts {
        let cfg = FlowConfig {
            dt0: dt,
            dt_max: dt,
            dt_growth: 1.0,
            ..FlowConfig::default()
        };
        let s0 = qflow_initial(u0.clone(), &geo, &f, &cfg).unwrap();
        let s1 = qflow_step(&s0, &geo, &f, &cfg, s0.diagnostics.measure).unwrap();
        taken.push(s1.t - s0.t);
        residuals.push(q_evolution_check(&s0, &s1, &geo, &f).unwrap());
    }
    let orders = observed_orders(&taken, &residuals);
    let min = orders.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        min >= 0.9,
        format!(
            "residuals {:.3e} {:.3e} {:.3e}, orders {:.3} {:.3}",
            residuals[0], residuals[1], residuals[2], orders[0], orders[1]
        ),
    )
}

fn c9_fixed_point() -> Outcome {
    let grid = Grid::unit(8, 8, 8, 9).unwrap();
    let mut fields = SyntheticFields::zeros(grid);
    fields.q0 = ScalarField::constant(grid, 0.7);
    let geo = BackgroundGeometry::synthetic(grid, fields).unwrap();
    let f = ScalarField::constant(grid, 1.0);
    let mut rows = 0;
    let mut observe = |_: &qtflow_core::FlowState| {
        rows += 1;
        Ok(())
    };
    let run = run_qflow(
        ScalarField::zeros(grid),
        &geo,
        &f,
        &FlowConfig::default(),
        &mut observe,
    )
    .unwrap();
    let x0 = run.final_state.diagnostics.x_t;
    let steps = run.final_state.step_index;
    outcome(
        x0 <= 1e-24 && steps == 0 && rows == 1 && run.status == RunStatus::Converged,
        format!("x(0) {x0:.2e}, steps {steps}"),
    )
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let text = "[grid]\nn1 = 6\nn2 = 6\nn3 = 6\nn4 = 7\n[flow]\nflow = qflow\ninitial = random:0.1\nseed = 42\ndt0 = 1e-4\nmax_steps = 20\n";
    let path = dir.path().join("run.ini");
    std::fs::write(&path, text).unwrap();
    let cfg = parse_config_str(text, &path).unwrap();
    let mut csvs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        execute(&cfg, &out, true).unwrap();
        csvs.push(std::fs::read(out.join("diagnostics.csv")).unwrap());
    }
    let identical = csvs[0] == csvs[1];
    outcome(
        identical && !csvs[0].is_empty(),
        format!("{} bytes, identical {identical}", csvs[0].len()),
    )
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome, Duration);
    let criteria: [Criterion; 10] = [
        (
            "1 operator suite",
            c1_operator_suite,
            Duration::from_secs(30),
        ),
        (
            "2 consistency order",
            c2_consistency_order,
            Duration::from_secs(300),
        ),
        (
            "3 kappa invariance",
            c3_kappa_invariance,
            Duration::from_secs(300),
        ),
        ("4 qflow flat", c4_qflow_flat, Duration::from_secs(600)),
        (
            "5 qflow profile",
            c5_qflow_profile,
            Duration::from_secs(600),
        ),
        (
            "6 extension oracle",
            c6_extension_oracle,
            Duration::from_secs(60),
        ),
        ("7 tflow flat", c7_tflow, Duration::from_secs(900)),
        (
            "8 q-evolution order",
            c8_q_evolution,
            Duration::from_secs(300),
        ),
        ("9 fixed point", c9_fixed_point, Duration::from_secs(60)),
        ("10 determinism", c10_determinism, Duration::from_secs(60)),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, f, budget) in criteria {
        if !filter.is_empty() && !filter.iter().any(|k| name.contains(k.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        let elapsed = start.elapsed();
        let pass = o.pass && elapsed <= budget;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {name}: {} ({:.1}s) {}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            o.detail
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
