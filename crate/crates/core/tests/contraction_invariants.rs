use dsm_core::contraction::{
    contraction_factor, contraction_radius, fixed_point_solve, source_condition_solve, FixedPointOptions,
};
use dsm_core::flow::{integrate_dsm, FlowConfig};
use dsm_core::problems::{load_problem, ProblemSpec};
use dsm_core::{DsmError, ProblemOp, RegParams};
use proptest::prelude::*;

fn manufactured(seed: u64) -> ProblemOp {
    load_problem(&ProblemSpec::new("manufactured", 8).with_seed(seed)).unwrap()
}

fn reg(eps: f64) -> RegParams {
    RegParams::new(eps, 1.0, 1.0, 1.0).unwrap()
}

fn strict() -> FixedPointOptions {
    FixedPointOptions { strict: true, ..FixedPointOptions::default() }
}

#[test]
fn iterates_stay_in_the_ball_and_contract() {
    for seed in [0, 1, 2] {
        let op = manufactured(seed);
        let y = op.known_solution().unwrap();
        let psi = op.known_source().unwrap();
        for eps in [0.1, 0.03, 0.01, 1e-3] {
            let d = fixed_point_solve(&op, y, psi, &reg(eps), &strict()).unwrap();
            assert!(d.certified && d.converged);
            let r = d.r.unwrap();
            let eta = d.eta.unwrap();
            assert!(d.max_iterate_norm <= r, "seed {seed} eps {eps}: {} > {r}", d.max_iterate_norm);
            if let Some(ratio) = d.observed_ratio {
                assert!(ratio <= eta + 0.05, "seed {seed} eps {eps}: {ratio} vs {eta}");
            }
            let m1 = op.constants().m1.unwrap();
            assert!(d.residual <= 10.0 * d.tol * (1.0 + m1), "residual {:e}", d.residual);
        }
    }
}

#[test]
fn fixed_point_agrees_with_flow_limit() {
    let op = manufactured(0);
    let y = op.known_solution().unwrap();
    let psi = op.known_source().unwrap();
    for eps in [0.1, 0.01] {
        let opts = strict();
        let d = fixed_point_solve(&op, y, psi, &reg(eps), &opts).unwrap();
        let cfg = FlowConfig::new(reg(eps));
        let trace = integrate_dsm(&op, y, &cfg).unwrap();
        let gap = op.norm(&(&d.v_eps - &trace.w_inf));
        assert!(gap <= 10.0 * opts.tol.max(cfg.target_residual), "eps {eps}: {gap:e}");
    }
}

#[test]
fn radius_shrinks_along_a_geometric_schedule() {
    let op = manufactured(0);
    let m2 = op.constants().m2.unwrap();
    let psi = source_condition_solve(&op, op.known_solution().unwrap()).unwrap();
    let radii: Vec<f64> = (1..=8)
        .map(|p| contraction_radius(&reg(10f64.powi(-p)), m2, psi.psi_norm).unwrap().r)
        .collect();
    assert!(radii.windows(2).all(|w| w[1] < w[0]), "{radii:?}");
    assert!(*radii.last().unwrap() < 1e-8);
}

#[test]
fn strict_mode_refuses_large_source() {
    let op = load_problem(&ProblemSpec::new("manufactured", 8).param("psi_norm", 0.6)).unwrap();
    let err = fixed_point_solve(&op, op.known_solution().unwrap(), op.known_source().unwrap(), &reg(0.5), &strict());
    assert!(matches!(err, Err(DsmError::Hypothesis { .. })), "{err:?}");
}

proptest! {
    #[test]
    fn radius_solves_the_ball_inequality(
        eps in 1e-6..0.9_f64,
        k in 0.1..1.0_f64,
        c0 in 0.1..10.0_f64,
        m2 in 0.0..5.0_f64,
        frac in 0.0..0.999_f64,
    ) {
        let reg = RegParams::new(eps, 1.0, k, c0).unwrap();
        // Pick |psi| so that rho = frac < 1.
        let psi_norm = if m2 > 0.0 { frac / (2.0 * c0 * m2 * eps.powf(1.0 - k)) } else { frac };
        let rad = contraction_radius(&reg, m2, psi_norm).unwrap();
        let r = rad.r;
        let lhs = c0 * eps.powf(-k) * m2 / 2.0 * r * r + eps * psi_norm;
        prop_assert!(lhs <= r * (1.0 + 1e-10) + 1e-300);
        prop_assert!(eps * psi_norm <= r * (1.0 + 1e-12));
        if m2 > 0.0 {
            prop_assert!(r <= eps.powf(k) / (c0 * m2) * (1.0 + 1e-12));
        }
        let eta = contraction_factor(&reg, m2, 0.0, r).unwrap();
        prop_assert!(eta < 1.0);
    }
}
