use approx::assert_relative_eq;
use proptest::prelude::*;
use qtflow_core::qflow::qflow_rhs;
use qtflow_core::snapshot::{read_snapshot, write_snapshot};
use qtflow_core::tflow::extend;
use qtflow_core::{
    energy_qf, p43_bilinear, p43_operator, BackgroundGeometry, BoundaryConditionSet, BoundaryField,
    Face, Grid, LinearOperator, ScalarField, Snapshot, SyntheticFields,
};

fn grid() -> Grid {
    Grid::new([4, 4, 4, 5], [1.0, 1.5, 2.0]).unwrap()
}

fn field(amp: f64) -> impl Strategy<Value = ScalarField> {
    prop::collection::vec(-amp..amp, grid().len())
        .prop_map(|v| ScalarField::from_vec(grid(), v).unwrap())
}

fn trace(amp: f64) -> impl Strategy<Value = BoundaryField> {
    prop::collection::vec(-amp..amp, 2 * grid().face_len())
        .prop_map(|v| BoundaryField::from_vec(grid(), Face::Both, v).unwrap())
}

fn curved() -> BackgroundGeometry {
    let g = grid();
    let mut f = SyntheticFields::zeros(g);
    f.q0 = ScalarField::constant(g, 0.8);
    f.volume_weight = ScalarField::from_fn(g, |x| {
        f.volume_weight.values()[0] * (1.0 + 0.2 * (6.0 * x[0]).sin())
    });
    BackgroundGeometry::synthetic(g, f).unwrap()
}

fn dot(geo: &BackgroundGeometry, a: &ScalarField, b: &ScalarField) -> f64 {
    geo.integrate_volume(&a.zip_map(b, |x, y| x * y)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn p43_is_linear_and_symmetric(u in field(1.0), v in field(1.0), a in -3.0..3.0f64) {
        let geo = BackgroundGeometry::flat(grid());
        let op = p43_operator(&geo, BoundaryConditionSet::FLOW);
        let pu = op.apply_field(&u).unwrap();
        let pv = op.apply_field(&v).unwrap();
        let pw = op.apply_field(&u.axpy(a, &v)).unwrap();
        let expect = pu.axpy(a, &pv);
        let scale = 1.0 + expect.max_abs();
        for (x, y) in pw.values().iter().zip(expect.values()) {
            prop_assert!((x - y).abs() <= 1e-12 * scale);
        }
        let (l, r) = (dot(&geo, &pu, &v), dot(&geo, &u, &pv));
        prop_assert!((l - r).abs() <= 1e-10 * (1.0 + l.abs()));
        let b = p43_bilinear(&u, &v, &geo).unwrap();
        prop_assert!((l - b).abs() <= 1e-10 * (1.0 + l.abs()));
        prop_assert!(p43_bilinear(&u, &u, &geo).unwrap() >= -1e-10);
    }

    #[test]
    fn integration_is_linear(u in field(2.0), v in field(2.0), a in -3.0..3.0f64) {
        let geo = curved();
        let lhs = geo.integrate_volume(&u.axpy(a, &v)).unwrap();
        let rhs = geo.integrate_volume(&u).unwrap() + a * geo.integrate_volume(&v).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn snapshots_round_trip(u in field(1e3), v in trace(1e3)) {
        for snap in [Snapshot::Volume(u.clone()), Snapshot::Boundary(v.clone())] {
            let mut bytes = Vec::new();
            write_snapshot(&mut bytes, &snap).unwrap();
            let back = read_snapshot(&mut bytes.as_slice(), grid()).unwrap();
            prop_assert_eq!(back.values(), snap.values());
        }
    }

    #[test]
    fn energy_ignores_constants(u in field(0.3), c in -2.0..2.0f64) {
        let geo = curved();
        let f = ScalarField::from_fn(grid(), |x| 1.0 + 0.3 * (2.0 * std::f64::consts::PI * x[1] / 1.5).cos());
        let e0 = energy_qf(&u, &f, &geo).unwrap().total;
        let e1 = energy_qf(&u.map(|x| x + c), &f, &geo).unwrap().total;
        prop_assert!((e0 - e1).abs() <= 1e-9 * (1.0 + e0.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn extension_is_linear(v1 in trace(1.0), v2 in trace(1.0), a in -2.0..2.0f64) {
        let geo = BackgroundGeometry::flat(grid());
        let w1 = extend(&v1, &geo, 1e-13).unwrap();
        let w2 = extend(&v2, &geo, 1e-13).unwrap();
        let w = extend(&v1.axpy(a, &v2), &geo, 1e-13).unwrap();
        let expect = w1.axpy(a, &w2);
        for (x, y) in w.values().iter().zip(expect.values()) {
            prop_assert!((x - y).abs() <= 1e-8);
        }
    }

    /// The flow velocity is minus the W-gradient of the energy, weighted by `4 e^{4u}`.
    #[test]
    fn energy_gradient_matches_flow_velocity(u in field(0.2), phi in field(1.0)) {
        let geo = curved();
        let f = ScalarField::from_fn(grid(), |x| 1.2 + 0.5 * (2.0 * std::f64::consts::PI * x[0]).sin());
        let eps = 1e-5;
        let ep = energy_qf(&u.axpy(eps, &phi), &f, &geo).unwrap().total;
        let em = energy_qf(&u.axpy(-eps, &phi), &f, &geo).unwrap().total;
        let fd = (ep - em) / (2.0 * eps);
        let rhs = qflow_rhs(&u, &geo, &f).unwrap();
        let weighted = rhs.zip_map(&u, |r, v| -4.0 * r * (4.0 * v).exp());
        let exact = dot(&geo, &weighted, &phi);
        prop_assert!((fd - exact).abs() <= 1e-6 * (1.0 + exact.abs()), "fd {} exact {}", fd, exact);
    }
}

#[test]
fn constants_span_the_kernel() {
    let geo = curved();
    let op = p43_operator(&geo, BoundaryConditionSet::FLOW);
    let ones = vec![2.5; op.dim()];
    let mut out = vec![1.0; op.dim()];
    op.apply(&ones, &mut out);
    for v in out {
        assert_relative_eq!(v, 0.0, epsilon = 1e-10);
    }
}

#[test]
fn extension_reproduces_constants() {
    let geo = BackgroundGeometry::flat(grid());
    let w = extend(
        &BoundaryField::constant(grid(), Face::Both, 0.7),
        &geo,
        1e-13,
    )
    .unwrap();
    for v in w.values() {
        assert_relative_eq!(*v, 0.7, epsilon = 1e-9);
    }
}
