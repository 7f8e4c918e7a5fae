//! Fixed-point construction of the regularized solution near a known root.
//!
//! Writing `v = y + z` with `F(y) = 0`, `A = F'(y)` and `y = Aψ`, the equation
//! `F(v) + εv = 0` becomes the fixed-point problem
//!
//! ```text
//! z = T(z) = -(A + εI)⁻¹ (R(z) + εAψ),   R(z) = F(y+z) - F(y) - Az.
//! ```
//!
//! With `‖(A+εI)⁻¹‖ ≤ c0 ε^(-k)` and `‖F''‖ ≤ M2`, `T` maps the ball of radius
//!
//! ```text
//! r = ε^k / (c0 M2) · (1 - sqrt(1 - ρ)),   ρ = 2 c0 M2 ‖ψ‖ ε^(1-k) < 1
//! ```
//!
//! into itself, and contracts there with factor
//! `η = c0 ε^(-k) (M3 r²/6 + M2 r)` whenever `η < 1`. Shifting the equation
//! to `F(p) + ε(p - q) = 0` replaces `y = Aψ` by `y - q = Aψ`; see
//! [`ShiftedProblem`].

use serde::{Deserialize, Serialize};

use crate::error::{DsmError, Result};
use crate::operator::{estimate_derivative_bounds, jacobian, regularized_residual, ProblemOp, RegParams, Resolvent};
use crate::space::{check_dims, check_finite, serde_vector, Matrix, Vector};

/// Advisory threshold for the "small source element" regime.
pub const SMALL_PSI: f64 = 0.1;

const DIVERGENCE_WINDOW: usize = 5;
const DIVERGENCE_GROWTH: f64 = 10.0;
const RATIO_FLOOR: f64 = 1e-10;

/// `F(y+z) - F(y) - F'(y) z`.
pub fn remainder(op: &ProblemOp, y: &Vector, z: &Vector) -> Result<Vector> {
    check_dims(op.dim(), y.len(), "remainder base point")?;
    check_dims(op.dim(), z.len(), "remainder increment")?;
    let v = y + z;
    if !op.in_ball(&v) {
        log::warn!("remainder of '{}' evaluated outside the domain ball", op.name());
    }
    let a = op.jacobian_quiet(y)?;
    let fy = op.eval(y)?;
    remainder_with(op, &fy, &a, y, z)
}

fn remainder_with(op: &ProblemOp, fy: &Vector, a: &Matrix, y: &Vector, z: &Vector) -> Result<Vector> {
    let r = op.eval(&(y + z))? - fy - a * z;
    check_finite(&r, "remainder")?;
    Ok(r)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceElement {
    #[serde(with = "serde_vector")]
    pub psi: Vector,
    pub psi_norm: f64,
    pub warning: Option<String>,
}

fn solve_source(op: &ProblemOp, y: &Vector, target: &Vector) -> Result<SourceElement> {
    let a = jacobian(op, y)?;
    let psi = Resolvent::new(&a, 0.0)
        .and_then(|r| r.solve(target))
        .map_err(|e| match e {
            DsmError::Singular { .. } => DsmError::SourceUnavailable(format!(
                "F'(y) is singular to working precision ({e}); the target may lie outside its range"
            )),
            other => other,
        })?;
    let psi_norm = op.norm(&psi);
    let warning = (psi_norm >= SMALL_PSI).then(|| {
        let msg = format!("|psi| = {psi_norm:.4} is not small (advisory threshold {SMALL_PSI})");
        log::warn!("{msg}");
        msg
    });
    Ok(SourceElement { psi, psi_norm, warning })
}

/// Solves `F'(y) ψ = y` by LU.
pub fn source_condition_solve(op: &ProblemOp, y: &Vector) -> Result<SourceElement> {
    check_dims(op.dim(), y.len(), "source target")?;
    solve_source(op, y, y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Radius {
    pub r: f64,
    pub rho: f64,
}

/// Radius of the invariant ball. `M2 = 0` returns the `M2 → 0` limit
/// `r = ε‖ψ‖` with `ρ = 0`.
pub fn contraction_radius(reg: &RegParams, m2: f64, psi_norm: f64) -> Result<Radius> {
    reg.validate()?;
    if !(m2 >= 0.0 && m2.is_finite()) || !(psi_norm >= 0.0 && psi_norm.is_finite()) {
        return Err(DsmError::input(format!(
            "need finite M2 >= 0 and |psi| >= 0, got M2 = {m2}, |psi| = {psi_norm}"
        )));
    }
    let eps = reg.eps;
    if m2 == 0.0 {
        return Ok(Radius { r: eps * psi_norm, rho: 0.0 });
    }
    let rho = 2.0 * reg.c0 * m2 * psi_norm * eps.powf(1.0 - reg.k);
    if rho >= 1.0 {
        return Err(DsmError::Hypothesis {
            condition: "2 c0 M2 |psi| eps^(1-k) < 1 is required for the invariant ball to exist".into(),
            quantity: "rho",
            value: rho,
        });
    }
    // 1 - sqrt(1 - rho) without cancellation.
    let r = eps.powf(reg.k) / (reg.c0 * m2) * (rho / (1.0 + (1.0 - rho).sqrt()));
    Ok(Radius { r, rho })
}

pub fn contraction_factor(reg: &RegParams, m2: f64, m3: f64, r: f64) -> Result<f64> {
    reg.validate()?;
    if [m2, m3, r].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(DsmError::input(format!(
            "need finite non-negative M2, M3, r; got {m2}, {m3}, {r}"
        )));
    }
    Ok(reg.c0 * reg.eps.powf(-reg.k) * (m3 * r * r / 6.0 + m2 * r))
}

/// The map `T` with everything that does not depend on `z` precomputed.
pub struct TMap<'a> {
    op: &'a ProblemOp,
    y: Vector,
    fy: Vector,
    a: Matrix,
    resolvent: Resolvent,
    forcing: Vector,
}

impl<'a> TMap<'a> {
    pub fn new(op: &'a ProblemOp, y: &Vector, psi: &Vector, eps: f64) -> Result<Self> {
        check_dims(op.dim(), y.len(), "fixed-point base")?;
        check_dims(op.dim(), psi.len(), "source element")?;
        let a = jacobian(op, y)?;
        let resolvent = Resolvent::new(&a, eps)?;
        let forcing = (&a * psi) * eps;
        Ok(TMap {
            op,
            y: y.clone(),
            fy: op.eval(y)?,
            a,
            resolvent,
            forcing,
        })
    }

    pub fn apply(&self, z: &Vector) -> Result<Vector> {
        check_dims(self.op.dim(), z.len(), "fixed-point iterate")?;
        let rhs = remainder_with(self.op, &self.fy, &self.a, &self.y, z)? + &self.forcing;
        Ok(-self.resolvent.solve(&rhs)?)
    }
}

/// One application of `T(z) = -(A + εI)⁻¹ (R(z) + εAψ)`, `A = F'(y)`.
pub fn t_map(op: &ProblemOp, y: &Vector, psi: &Vector, reg: &RegParams, z: &Vector) -> Result<Vector> {
    TMap::new(op, y, psi, reg.eps)?.apply(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstantSource {
    Analytic,
    /// Sampled lower estimates; the gates are not certified.
    Estimated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Fail on `ρ ≥ 1`, `η ≥ 1`, or an iterate leaving the ball.
    pub strict: bool,
    /// Samples and seed for `M2`, `M3` when the problem has no analytic values.
    pub bound_samples: usize,
    pub seed: u64,
    /// Starting iterate; the ball center `z = 0` when absent.
    #[serde(with = "serde_vector::option", default)]
    pub initial: Option<Vector>,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            tol: 1e-12,
            max_iter: 200,
            strict: false,
            bound_samples: 200,
            seed: 0,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContractionDiagnostics {
    pub eps: f64,
    pub c0: f64,
    pub k: f64,
    pub m1: Option<f64>,
    pub m2: f64,
    pub m3: f64,
    pub constants: ConstantSource,
    pub psi_norm: f64,
    /// Invariant-ball radius; absent when `ρ ≥ 1`.
    pub r: Option<f64>,
    pub rho: f64,
    pub eta: Option<f64>,
    /// Contraction bound actually certified (`η` when `ρ < 1` and `η < 1`).
    pub q: Option<f64>,
    /// `1 - ρ`, recorded for comparison with the asymptotic form of `η`.
    pub one_minus_rho: f64,
    pub certified: bool,
    pub strict: bool,
    pub tol: f64,
    pub iterations: usize,
    pub step_norms: Vec<f64>,
    pub final_step_norm: f64,
    /// Largest `‖z_{m+1} - z_m‖ / ‖z_m - z_{m-1}‖` above round-off.
    pub observed_ratio: Option<f64>,
    pub max_iterate_norm: f64,
    pub converged: bool,
    #[serde(with = "serde_vector")]
    pub z_star: Vector,
    #[serde(with = "serde_vector")]
    pub v_eps: Vector,
    /// `‖v_ε - y‖ = ‖z*‖`.
    pub error: f64,
    /// Norm of the (shifted) regularized residual at `v_ε`.
    pub residual: f64,
    #[serde(with = "serde_vector::option")]
    pub shift: Option<Vector>,
    pub warnings: Vec<String>,
}

fn derivative_constants(op: &ProblemOp, opts: &FixedPointOptions) -> Result<(f64, f64, Option<f64>, ConstantSource)> {
    let c = op.constants();
    match (c.m2, c.m3) {
        (Some(m2), Some(m3)) => Ok((m2, m3, c.m1, ConstantSource::Analytic)),
        _ => {
            let b = estimate_derivative_bounds(op, opts.bound_samples.max(1), opts.seed)?;
            Ok((b.m2, b.m3, Some(b.m1), ConstantSource::Estimated))
        }
    }
}

/// Iterates `z_{m+1} = T(z_m)` from `z_0 = 0` and reports the radius and
/// contraction gates alongside the iteration history.
pub fn fixed_point_solve(
    op: &ProblemOp,
    y: &Vector,
    psi: &Vector,
    reg: &RegParams,
    opts: &FixedPointOptions,
) -> Result<ContractionDiagnostics> {
    iterate(op, y, psi, None, reg, opts)
}

fn iterate(
    op: &ProblemOp,
    y: &Vector,
    psi: &Vector,
    shift: Option<&Vector>,
    reg: &RegParams,
    opts: &FixedPointOptions,
) -> Result<ContractionDiagnostics> {
    reg.validate()?;
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(DsmError::input("fixed-point solve needs tol > 0 and max_iter >= 1"));
    }
    let eps = reg.eps;
    let (m2, m3, m1, constants) = derivative_constants(op, opts)?;
    let psi_norm = op.norm(psi);
    let mut warnings = Vec::new();
    if constants == ConstantSource::Estimated {
        warnings.push("M2, M3 are sampled estimates; the gates are not certified".to_string());
    }
    if psi_norm >= SMALL_PSI {
        warnings.push(format!("|psi| = {psi_norm:.4} is not small (advisory threshold {SMALL_PSI})"));
    }

    let (r, rho) = match contraction_radius(reg, m2, psi_norm) {
        Ok(rad) => (Some(rad.r), rad.rho),
        Err(e @ DsmError::Hypothesis { .. }) if opts.strict => return Err(e),
        Err(DsmError::Hypothesis { value, .. }) => {
            warnings.push(format!("rho = {value:.6} >= 1: no invariant ball; iterating uncertified"));
            (None, value)
        }
        Err(e) => return Err(e),
    };
    let eta = r.map(|r| contraction_factor(reg, m2, m3, r)).transpose()?;
    let certified = eta.is_some_and(|e| e < 1.0);
    if let Some(e) = eta.filter(|e| *e >= 1.0) {
        if opts.strict {
            return Err(DsmError::Hypothesis {
                condition: "c0 eps^(-k) (M3 r^2/6 + M2 r) < 1 is required for T to contract on the ball".into(),
                quantity: "eta",
                value: e,
            });
        }
        warnings.push(format!("eta = {e:.6} >= 1: contraction not certified"));
    }

    let map = TMap::new(op, y, psi, eps)?;
    let mut z = match &opts.initial {
        Some(z0) => {
            check_dims(op.dim(), z0.len(), "initial iterate")?;
            z0.clone()
        }
        None => Vector::zeros(op.dim()),
    };
    let mut step_norms: Vec<f64> = Vec::new();
    let mut max_iterate_norm = op.norm(&z);
    let mut observed_ratio: Option<f64> = None;
    let mut converged = false;
    for m in 1..=opts.max_iter {
        let next = map.apply(&z)?;
        let step = op.norm(&(&next - &z));
        if let Some(&prev) = step_norms.last() {
            if prev > RATIO_FLOOR * op.norm(&z) {
                let ratio = step / prev;
                observed_ratio = Some(observed_ratio.map_or(ratio, |o: f64| o.max(ratio)));
            }
        }
        step_norms.push(step);
        z = next;
        let zn = op.norm(&z);
        max_iterate_norm = max_iterate_norm.max(zn);
        if let (true, Some(r)) = (opts.strict, r) {
            if zn > r * (1.0 + 1e-9) {
                return Err(DsmError::Hypothesis {
                    condition: format!("iterate {m} left the invariant ball of radius {r:e}"),
                    quantity: "|z_m|",
                    value: zn,
                });
            }
        }
        if step <= opts.tol {
            converged = true;
            break;
        }
        if step_norms.len() > DIVERGENCE_WINDOW {
            let window = &step_norms[step_norms.len() - DIVERGENCE_WINDOW - 1..];
            let rising = window.windows(2).all(|w| w[1] > w[0]);
            if rising && window[DIVERGENCE_WINDOW] >= DIVERGENCE_GROWTH * window[0] {
                return Err(DsmError::Divergence {
                    iterations: m,
                    step_norms,
                });
            }
        }
    }
    if !converged {
        warnings.push(format!("no convergence within {} iterations", opts.max_iter));
    }

    let v_eps = y + &z;
    let residual_vec = match shift {
        Some(q) => op.eval(&v_eps)? + (&v_eps - q) * eps,
        None => regularized_residual(op, &v_eps, eps)?,
    };
    Ok(ContractionDiagnostics {
        eps,
        c0: reg.c0,
        k: reg.k,
        m1,
        m2,
        m3,
        constants,
        psi_norm,
        r,
        rho,
        eta,
        q: eta.filter(|_| certified),
        one_minus_rho: 1.0 - rho,
        certified,
        strict: opts.strict,
        tol: opts.tol,
        iterations: step_norms.len(),
        final_step_norm: *step_norms.last().unwrap_or(&0.0),
        step_norms,
        observed_ratio,
        max_iterate_norm,
        converged,
        error: op.norm(&z),
        residual: op.norm(&residual_vec),
        z_star: z,
        v_eps,
        shift: shift.cloned(),
        warnings,
    })
}

/// `F(p) + ε(p - q) = 0` around the known root `y`, with `ψ` solving
/// `y - q = F'(y) ψ`.
#[derive(Debug, Clone)]
pub struct ShiftedProblem {
    pub base: ProblemOp,
    pub shift_q: Vector,
    pub psi: Vector,
}

impl ShiftedProblem {
    pub fn new(base: ProblemOp, shift_q: Vector) -> Result<Self> {
        let y = base
            .known_solution()
            .cloned()
            .ok_or_else(|| DsmError::input("the shifted problem needs a known solution y"))?;
        check_dims(base.dim(), shift_q.len(), "shift element")?;
        check_finite(&shift_q, "shift element")?;
        let target = &y - &shift_q;
        let source = solve_source(&base, &y, &target)?;
        let a = base.jacobian_quiet(&y)?;
        let gap = base.norm(&(&target - &a * &source.psi));
        if gap > 1e-8 * (1.0 + base.norm(&y)) {
            return Err(DsmError::Numeric(format!(
                "y - q = A psi holds only to {gap:e}; the shifted source element is unreliable"
            )));
        }
        Ok(ShiftedProblem {
            base,
            shift_q,
            psi: source.psi,
        })
    }

    pub fn solution(&self) -> &Vector {
        self.base.known_solution().expect("checked at construction")
    }
}

/// Same iteration as [`fixed_point_solve`] for the shifted equation; the
/// result's `v_eps` is `p_ε`.
pub fn shifted_fixed_point_solve(
    problem: &ShiftedProblem,
    reg: &RegParams,
    opts: &FixedPointOptions,
) -> Result<ContractionDiagnostics> {
    iterate(
        &problem.base,
        problem.solution(),
        &problem.psi,
        Some(&problem.shift_q),
        reg,
        opts,
    )
}
