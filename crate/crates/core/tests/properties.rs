use dsm_core::operator::{estimate_derivative_bounds, resolvent_solve};
use dsm_core::problems::{load_problem, ProblemSpec, REGISTRY};
use dsm_core::{Matrix, Vector};
use proptest::prelude::*;

fn matrix(n: usize) -> impl Strategy<Value = Matrix> {
    proptest::collection::vec(-1.0..1.0_f64, n * n).prop_map(move |d| Matrix::from_vec(n, n, d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn resolvent_solves_the_shifted_system(
        (a, rhs) in (2usize..12).prop_flat_map(|n| (matrix(n), proptest::collection::vec(-1.0..1.0_f64, n))),
        eps in 1e-3..1.0_f64,
    ) {
        let n = a.nrows();
        // Shift the spectrum away from -eps so the instance stays well scaled.
        let a = &a * a.transpose() + Matrix::identity(n, n) * 0.1;
        let rhs = Vector::from_vec(rhs);
        let x = resolvent_solve(&a, eps, &rhs).unwrap();
        let back = &a * &x + &x * eps;
        prop_assert!((back - &rhs).norm() <= 1e-10 * (1.0 + rhs.norm()));
    }
}

#[test]
fn derivative_estimates_never_drop_when_samples_double() {
    for info in REGISTRY {
        let op = load_problem(&ProblemSpec::new(info.name, 5)).unwrap();
        let mut previous = None;
        for samples in [25, 50, 100, 200] {
            let b = estimate_derivative_bounds(&op, samples, 11).unwrap();
            if let Some((m1, m2, m3)) = previous {
                assert!(b.m1 >= m1 && b.m2 >= m2 && b.m3 >= m3, "{}: {samples}", info.name);
            }
            previous = Some((b.m1, b.m2, b.m3));
        }
    }
}

#[test]
fn known_roots_are_roots() {
    for info in REGISTRY {
        let op = load_problem(&ProblemSpec::new(info.name, 20)).unwrap();
        if let Some(y) = op.known_solution() {
            let r = op.norm(&op.eval(y).unwrap());
            assert!(r <= 1e-10 * (1.0 + op.norm(y)), "{}: {r:e}", info.name);
        }
    }
}
