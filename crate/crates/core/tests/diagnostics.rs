use lagrom::diagnostics::{aposteriori_indicator, relative_errors, spearman};
use lagrom::fom::{simulate, HydroState, RunOptions, Scheme, TimeControlParams};
use lagrom::linalg::DenseMatrix;
use lagrom::offsets::OffsetKind;
use lagrom::pod::{Field, ReducedBasis};
use lagrom::problems::{setup, ProblemSpec};
use lagrom::rom::{HyperReduction, ProjectionMode, RomModel, RomRunOptions, WindowBases};
use lagrom::time_windows::WindowTable;
use lagrom::training::{assemble_online, query_offsets, train, TrainingSettings};
use proptest::prelude::*;

/// Compensated-summation relative error, an independent norm implementation.
fn kahan_rel(fom: &[f64], rom: &[f64]) -> f64 {
    let ksum = |it: &mut dyn Iterator<Item = f64>| {
        let (mut s, mut c) = (0.0f64, 0.0f64);
        for x in it {
            let y = x - c;
            let t = s + y;
            c = (t - s) - y;
            s = t;
        }
        s
    };
    let num = ksum(&mut fom.iter().zip(rom).map(|(a, b)| (a - b) * (a - b)));
    let den = ksum(&mut fom.iter().map(|a| a * a));
    (num / den).sqrt()
}

fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, n)
}

proptest! {
    #[test]
    fn relative_error_matches_compensated_oracle(
        v in vec_strategy(40), e in vec_strategy(20), x in vec_strategy(40),
        dv in vec_strategy(40), de in vec_strategy(20), dx in vec_strategy(40),
    ) {
        let fom = HydroState { v: v.clone(), e: e.clone(), x: x.clone(), t: 0.0 };
        let add = |a: &[f64], d: &[f64]| a.iter().zip(d).map(|(p, q)| p + 1e-3 * q).collect::<Vec<_>>();
        let rom = HydroState { v: add(&v, &dv), e: add(&e, &de), x: add(&x, &dx), t: 0.0 };
        let r = relative_errors(&fom, &rom).unwrap();
        for (got, (a, b)) in r.iter().zip([(&fom.v, &rom.v), (&fom.e, &rom.e), (&fom.x, &rom.x)]) {
            let want = kahan_rel(a, b);
            prop_assert!((got.value - want).abs() <= 1e-13 * want.max(1e-300));
        }
    }

    #[test]
    fn relative_error_is_scale_invariant(
        v in vec_strategy(10), dv in vec_strategy(10), c in 1e-3f64..1e3,
    ) {
        let e = vec![1.0; 4];
        let x = vec![2.0; 10];
        let fom = HydroState { v: v.clone(), e: e.clone(), x: x.clone(), t: 0.0 };
        let rom = HydroState { v: dv.clone(), e: e.clone(), x: x.clone(), t: 0.0 };
        let s = |a: &[f64]| a.iter().map(|p| c * p).collect::<Vec<_>>();
        let fs = HydroState { v: s(&v), e: s(&e), x: s(&x), t: 0.0 };
        let rs = HydroState { v: s(&dv), e: s(&e), x: s(&x), t: 0.0 };
        let r1 = relative_errors(&fom, &rom).unwrap();
        let r2 = relative_errors(&fs, &rs).unwrap();
        for (a, b) in r1.iter().zip(&r2) {
            prop_assert!((a.value - b.value).abs() <= 1e-12 * a.value.max(1e-300));
        }
    }

    #[test]
    fn spearman_is_invariant_under_monotone_maps(a in vec_strategy(8), b in vec_strategy(8)) {
        if let Some(r) = spearman(&a, &b).unwrap() {
            let mapped: Vec<f64> = a.iter().map(|x| x.exp()).collect();
            let r2 = spearman(&mapped, &b).unwrap().unwrap();
            prop_assert!((r - r2).abs() < 1e-12);
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
        }
    }
}

fn basis(phi: DenseMatrix, offset: Vec<f64>, field: Field) -> ReducedBasis {
    ReducedBasis { phi, offset, field, window: Some(1), epsilon: None, energy_fraction: 1.0, singular_values: Vec::new() }
}

#[test]
fn indicator_vanishes_for_full_bases_and_full_sampling() {
    let (hydro, s0) = setup(&ProblemSpec::sedov(1.0), 6, 6, TimeControlParams::default()).unwrap();
    let (nv, ne) = (hydro.nv(), hydro.ne());
    let bases = WindowBases {
        v: basis(DenseMatrix::identity(nv), vec![0.0; nv], Field::Velocity),
        e: basis(DenseMatrix::identity(ne), vec![0.0; ne], Field::Energy),
        x: basis(DenseMatrix::identity(nv), vec![0.0; nv], Field::Position),
    };
    let t_final = 0.01;
    let table = WindowTable::serial(t_final, &[&[0.0, t_final]]);
    for hyper in [HyperReduction::Galerkin, HyperReduction::sns_full(&hydro, &bases).unwrap()] {
        let mut model = RomModel::build(
            &hydro,
            table.clone(),
            vec![bases.clone()],
            &[hyper],
            ProjectionMode::Orthogonal,
            OffsetKind::Initial,
        )
        .unwrap();
        let y0 = model.project_initial(&hydro, &s0).unwrap();
        let run = model.run(&hydro, &y0, &RomRunOptions::new(t_final)).unwrap();
        let ind = aposteriori_indicator(&hydro, &model, &run).unwrap();
        let scale = {
            let fe = hydro.assemble_force(&s0).unwrap();
            fe.f1(&hydro.mesh).iter().map(|x| x * x).sum::<f64>().sqrt()
        };
        for s in &ind {
            assert!(s.residual_v <= 1e-10 * scale && s.residual_e <= 1e-10 * scale, "{s:?}");
        }
    }
}

#[test]
fn indicator_is_nonnegative_and_cumulative() {
    let (hydro, s0) = setup(&ProblemSpec::sedov(1.0), 10, 10, TimeControlParams::default()).unwrap();
    let (traj, _) = simulate(&hydro, Scheme::Rk2Average, &s0, &RunOptions::new(0.05), None, 1.0).unwrap();
    let table = WindowTable::serial(0.05, &[&traj.step_times]);
    let settings = TrainingSettings { epsilon: 0.99, ..Default::default() };
    let trained = train(&hydro, std::slice::from_ref(&traj), &table, &settings).unwrap();
    let offs = query_offsets(&trained, OffsetKind::Initial, 1.0, &s0).unwrap();
    let mut model = assemble_online(&hydro, &trained, &offs, OffsetKind::Initial, ProjectionMode::Orthogonal).unwrap();
    let y0 = model.project_initial(&hydro, &s0).unwrap();
    let run = model.run(&hydro, &y0, &RomRunOptions::new(0.05)).unwrap();
    let ind = aposteriori_indicator(&hydro, &model, &run).unwrap();
    assert_eq!(ind.len(), run.states.len());
    assert_eq!(ind[0].integral_v, 0.0);
    for p in ind.windows(2) {
        assert!(p[1].residual_v >= 0.0 && p[1].residual_e >= 0.0);
        assert!(p[1].integral_v >= p[0].integral_v && p[1].integral_e >= p[0].integral_e);
    }
    assert!(ind.last().unwrap().integral_v > 0.0);
}
