use dsm_core::problems::{load_problem, ProblemSpec};
use dsm_core::regpath::{divergence_probe, fit_rate, run_path, EpsSchedule, PathConfig, RecordStatus, SolveMethod};
use dsm_core::{Matrix, NormKind, ProblemOp, RegParams, Vector};
use proptest::prelude::*;

fn reg() -> RegParams {
    RegParams::new(0.5, 1.0, 1.0, 1.0).unwrap()
}

fn rate_problems() -> Vec<ProblemOp> {
    vec![
        load_problem(&ProblemSpec::new("linear-diag", 10)).unwrap(),
        load_problem(&ProblemSpec::new("manufactured", 8)).unwrap(),
        load_problem(&ProblemSpec::new("counterexample", 1000).param("beta", 4.0).with_norm(NormKind::Linf)).unwrap(),
    ]
}

#[test]
fn warm_start_does_not_move_the_solution() {
    let sched = EpsSchedule::new(1e-1, 0.1, 4).unwrap();
    for op in rate_problems().into_iter().take(2) {
        let w0 = Vector::zeros(op.dim());
        let mut cfg = PathConfig::new(SolveMethod::Hybrid, reg());
        let warm = run_path(&op, &w0, &sched, &cfg).unwrap();
        cfg.warm_start = false;
        let cold = run_path(&op, &w0, &sched, &cfg).unwrap();
        for (a, b) in warm.records.iter().zip(&cold.records) {
            let gap = op.norm(&(a.v.as_ref().unwrap() - b.v.as_ref().unwrap()));
            assert!(gap <= 10.0 * cfg.contraction.tol, "{} eps {}: {gap:e}", op.name(), a.eps);
        }
    }
}

#[test]
fn fitted_rate_is_linear_for_unit_growth_builtins() {
    let sched = EpsSchedule::spanning(1e-1, 1e-5, 5).unwrap();
    for op in rate_problems() {
        let w0 = Vector::zeros(op.dim());
        let mut path = run_path(&op, &w0, &sched, &PathConfig::new(SolveMethod::Contraction, reg())).unwrap();
        let fit = fit_rate(&mut path).unwrap();
        assert!((0.9..=1.1).contains(&fit.k_hat), "{}: k_hat = {}", op.name(), fit.k_hat);
    }
}

#[test]
fn records_are_sorted_and_within_tolerance() {
    let sched = EpsSchedule::new(1e-1, 0.1, 4).unwrap();
    for method in [SolveMethod::Flow, SolveMethod::Contraction, SolveMethod::Hybrid] {
        for op in rate_problems().into_iter().take(2) {
            let path = run_path(&op, &Vector::zeros(op.dim()), &sched, &PathConfig::new(method, reg())).unwrap();
            assert!(path.records.windows(2).all(|w| w[0].eps > w[1].eps));
            for r in &path.records {
                assert_eq!(r.status, RecordStatus::Ok, "{} {method}: {:?}", op.name(), r.message);
                assert!(r.residual.unwrap() <= r.tolerance);
            }
        }
    }
}

#[test]
fn cubic_flow_path_reaches_the_root() {
    let op = load_problem(&ProblemSpec::new("cubic", 4)).unwrap();
    let sched = EpsSchedule::new(1e-1, 0.1, 4).unwrap();
    let w0 = Vector::from_element(4, 0.5);
    let path = run_path(&op, &w0, &sched, &PathConfig::new(SolveMethod::Flow, reg())).unwrap();
    // The only real root of v + v^3 + εv = 0 is 0; the flow stops at residual δ.
    for r in &path.records {
        assert!(r.error.unwrap() <= 1e-8, "eps {}: {:e}", r.eps, r.error.unwrap());
    }
}

fn diagonal_op(lambda: &[f64], f: &[f64]) -> ProblemOp {
    let m = Matrix::from_diagonal(&Vector::from_column_slice(lambda));
    ProblemOp::linear("diag", m, Vector::from_column_slice(f)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn probe_verdict_ignores_positive_scaling(
        lambda in proptest::collection::vec(1e-6..1.0_f64, 12),
        f in proptest::collection::vec(-1.0..1.0_f64, 12),
        scale in 1e-3..1e3_f64,
    ) {
        let sched = EpsSchedule::new(1e-1, 0.1, 6).unwrap();
        let base = divergence_probe(&diagonal_op(&lambda, &f), &sched, None).unwrap();
        let scaled_f: Vec<f64> = f.iter().map(|x| x * scale).collect();
        let scaled = divergence_probe(&diagonal_op(&lambda, &scaled_f), &sched, None).unwrap();
        prop_assert_eq!(base.verdict, scaled.verdict);
    }
}
