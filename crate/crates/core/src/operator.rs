//! Operators `F: Rⁿ → Rⁿ`, their Jacobians, the regularized residual
//! `F(u) + εu`, resolvent solves with `A + εI`, and sampled estimators for
//! the derivative bounds `M_j` and the resolvent growth `‖(A+εI)⁻¹‖ ≤ c0 ε^(-k)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::linalg::LU;
use nalgebra::Dyn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DsmError, Result};
use crate::fit::log_log_fit;
use crate::space::{
    check_dims, check_finite, induced_matrix_norm, is_diagonal, norm_unchecked, random_unit,
    sample_ball, Matrix, NormKind, Vector,
};

pub type EvalFn = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&Vector) -> Matrix + Send + Sync>;

const FD_FIRST_STEP: f64 = 1e-6;
const FD_SECOND_STEP: f64 = 1e-4;
const FD_THIRD_STEP: f64 = 1e-3;
const PIVOT_RATIO: f64 = 1e-14;
const RESIDUAL_RATIO: f64 = 1e-10;
const WELL_POSED_K: f64 = 0.01;

/// Constants a built-in problem knows in closed form. Any of them may be
/// absent, in which case callers fall back to the sampled estimators.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalyticConstants {
    pub m1: Option<f64>,
    pub m2: Option<f64>,
    pub m3: Option<f64>,
    /// Resolvent growth constants valid at the known solution.
    pub c0: Option<f64>,
    pub k: Option<f64>,
}

/// An operator equation `F(u) = 0` together with the data the solvers and
/// diagnostics need: a domain ball, and optionally the exact root `y` and a
/// source element `ψ` with `y = F'(y) ψ`.
#[derive(Clone)]
pub struct ProblemOp {
    name: String,
    dim: usize,
    eval: EvalFn,
    jac: Option<JacobianFn>,
    center: Vector,
    ball_radius: f64,
    known_solution: Option<Vector>,
    known_source: Option<Vector>,
    norm_kind: NormKind,
    constants: AnalyticConstants,
}

impl fmt::Debug for ProblemOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemOp")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("analytic_jacobian", &self.jac.is_some())
            .field("ball_radius", &self.ball_radius)
            .field("norm_kind", &self.norm_kind)
            .field("has_solution", &self.known_solution.is_some())
            .field("has_source", &self.known_source.is_some())
            .finish()
    }
}

impl ProblemOp {
    /// A problem with only an evaluator; the domain ball defaults to the
    /// unit ball around the origin.
    pub fn new<F>(name: impl Into<String>, dim: usize, eval: F) -> Result<Self>
    where
        F: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(DsmError::input("problem dimension must be positive"));
        }
        Ok(ProblemOp {
            name: name.into(),
            dim,
            eval: Arc::new(eval),
            jac: None,
            center: Vector::zeros(dim),
            ball_radius: 1.0,
            known_solution: None,
            known_source: None,
            norm_kind: NormKind::L2,
            constants: AnalyticConstants::default(),
        })
    }

    /// `F(u) = M u - f`, with the constant Jacobian attached.
    pub fn linear(name: impl Into<String>, m: Matrix, f: Vector) -> Result<Self> {
        if !m.is_square() || m.nrows() != f.len() {
            return Err(DsmError::input(format!(
                "linear operator needs a square matrix matching the right-hand side ({}x{} vs {})",
                m.nrows(),
                m.ncols(),
                f.len()
            )));
        }
        let n = f.len();
        let jm = m.clone();
        let mut op = ProblemOp::new(name, n, move |u| &m * u - &f)?;
        op.jac = Some(Arc::new(move |_| jm.clone()));
        op.constants.m2 = Some(0.0);
        op.constants.m3 = Some(0.0);
        Ok(op)
    }

    pub fn with_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&Vector) -> Matrix + Send + Sync + 'static,
    {
        self.jac = Some(Arc::new(jac));
        self
    }

    pub fn with_ball(mut self, center: Vector, radius: f64) -> Result<Self> {
        check_dims(self.dim, center.len(), "ball center")?;
        check_finite(&center, "ball center")?;
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(DsmError::input(format!("ball radius must be positive, got {radius}")));
        }
        self.center = center;
        self.ball_radius = radius;
        Ok(self)
    }

    /// Attaches a known root. Rejects `y` with `‖F(y)‖ > 1e-8 (1 + ‖y‖)`.
    pub fn with_solution(mut self, y: Vector) -> Result<Self> {
        check_dims(self.dim, y.len(), "known solution")?;
        let fy = self.eval(&y)?;
        let (ny, nf) = (norm_unchecked(&y, self.norm_kind), norm_unchecked(&fy, self.norm_kind));
        if nf > 1e-8 * (1.0 + ny) {
            return Err(DsmError::input(format!(
                "attached solution is not a root: |F(y)| = {nf:e}"
            )));
        }
        self.known_solution = Some(y);
        Ok(self)
    }

    pub fn with_source(mut self, psi: Vector) -> Result<Self> {
        check_dims(self.dim, psi.len(), "source element")?;
        check_finite(&psi, "source element")?;
        self.known_source = Some(psi);
        Ok(self)
    }

    pub fn with_norm(mut self, kind: NormKind) -> Self {
        self.norm_kind = kind;
        self
    }

    pub fn with_constants(mut self, constants: AnalyticConstants) -> Self {
        self.constants = constants;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn center(&self) -> &Vector {
        &self.center
    }

    pub fn ball_radius(&self) -> f64 {
        self.ball_radius
    }

    pub fn known_solution(&self) -> Option<&Vector> {
        self.known_solution.as_ref()
    }

    pub fn known_source(&self) -> Option<&Vector> {
        self.known_source.as_ref()
    }

    pub fn norm_kind(&self) -> NormKind {
        self.norm_kind
    }

    pub fn constants(&self) -> &AnalyticConstants {
        &self.constants
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jac.is_some()
    }

    /// Norm in the problem's own geometry.
    pub fn norm(&self, v: &Vector) -> f64 {
        norm_unchecked(v, self.norm_kind)
    }

    pub fn in_ball(&self, u: &Vector) -> bool {
        self.norm(&(u - &self.center)) <= self.ball_radius * (1.0 + 1e-12)
    }

    /// Evaluates `F(u)`, rejecting non-finite output.
    pub fn eval(&self, u: &Vector) -> Result<Vector> {
        check_dims(self.dim, u.len(), "operator argument")?;
        let out = (self.eval)(u);
        check_dims(self.dim, out.len(), "operator output")?;
        check_finite(&out, "F(u) produced non-finite values")?;
        Ok(out)
    }

    pub(crate) fn jacobian_quiet(&self, u: &Vector) -> Result<Matrix> {
        match &self.jac {
            Some(j) => {
                let m = j(u);
                if m.nrows() != self.dim || m.ncols() != self.dim {
                    return Err(DsmError::input("analytic Jacobian has the wrong shape"));
                }
                if m.iter().any(|x| !x.is_finite()) {
                    return Err(DsmError::Numeric("analytic Jacobian is not finite".into()));
                }
                Ok(m)
            }
            None => finite_difference_jacobian(self, u),
        }
    }
}

/// Regularization data `ε`, `ε0`, `k`, `c0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegParams {
    pub eps: f64,
    pub eps0: f64,
    pub k: f64,
    pub c0: f64,
}

impl RegParams {
    pub fn new(eps: f64, eps0: f64, k: f64, c0: f64) -> Result<Self> {
        let p = RegParams { eps, eps0, k, c0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < self.eps0 && self.eps0.is_finite()) {
            return Err(DsmError::input(format!(
                "need 0 < eps < eps0, got eps = {}, eps0 = {}",
                self.eps, self.eps0
            )));
        }
        if !(self.k > 0.0 && self.k <= 1.0) {
            return Err(DsmError::input(format!("k must lie in (0, 1], got {}", self.k)));
        }
        if !(self.c0 > 0.0 && self.c0.is_finite()) {
            return Err(DsmError::input(format!("c0 must be positive, got {}", self.c0)));
        }
        Ok(())
    }

    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        RegParams::new(eps, self.eps0, self.k, self.c0)
    }

    /// The resolvent bound `c0 ε^(-k)`.
    pub fn resolvent_bound(&self) -> f64 {
        self.c0 * self.eps.powf(-self.k)
    }
}

/// `F(u) + εu`. `ε = 0` is allowed and returns `F(u)`.
pub fn regularized_residual(op: &ProblemOp, u: &Vector, eps: f64) -> Result<Vector> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(DsmError::input(format!("eps must be non-negative, got {eps}")));
    }
    check_finite(u, "residual argument")?;
    let mut r = op.eval(u)?;
    r.axpy(eps, u, 1.0);
    check_finite(&r, "regularized residual")?;
    Ok(r)
}

/// `F'(u)`: the analytic Jacobian when the problem has one, else central
/// differences. Logs a warning when `u` lies outside the domain ball.
pub fn jacobian(op: &ProblemOp, u: &Vector) -> Result<Matrix> {
    check_dims(op.dim(), u.len(), "jacobian point")?;
    if !op.in_ball(u) {
        log::warn!(
            "jacobian of '{}' requested outside B(u0, {})",
            op.name(),
            op.ball_radius()
        );
    }
    op.jacobian_quiet(u)
}

/// Central differences with per-coordinate step `1e-6 (1 + |u_j|)`.
pub fn finite_difference_jacobian(op: &ProblemOp, u: &Vector) -> Result<Matrix> {
    let n = op.dim();
    check_dims(n, u.len(), "jacobian point")?;
    let mut jac = Matrix::zeros(n, n);
    let mut probe = u.clone();
    for j in 0..n {
        let h = FD_FIRST_STEP * (1.0 + u[j].abs());
        probe[j] = u[j] + h;
        let fp = op.eval(&probe)?;
        probe[j] = u[j] - h;
        let fm = op.eval(&probe)?;
        probe[j] = u[j];
        let col = (fp - fm) / (2.0 * h);
        check_finite(&col, "difference quotient")?;
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// Agreement between analytic and difference Jacobians at a set of points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JacobianCheck {
    pub points_checked: usize,
    /// Largest entrywise gap divided by `max(1, max |J_ij|)`.
    pub max_rel_diff: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub analytic: bool,
}

pub fn jacobian_self_test(op: &ProblemOp, points: &[Vector], tolerance: f64) -> Result<JacobianCheck> {
    let mut worst: f64 = 0.0;
    if op.has_analytic_jacobian() {
        for p in points {
            let a = op.jacobian_quiet(p)?;
            let fd = finite_difference_jacobian(op, p)?;
            let scale = a.amax().max(1.0);
            worst = worst.max((a - fd).amax() / scale);
        }
    }
    Ok(JacobianCheck {
        points_checked: points.len(),
        max_rel_diff: worst,
        tolerance,
        passed: worst <= tolerance,
        analytic: op.has_analytic_jacobian(),
    })
}

enum Factor {
    Diagonal(Vector),
    Lu(LU<f64, Dyn, Dyn>),
}

/// A factorization of `A + εI`, reusable across right-hand sides.
pub struct Resolvent {
    shifted: Matrix,
    factor: Factor,
    scale: f64,
}

impl Resolvent {
    pub fn new(a: &Matrix, eps: f64) -> Result<Self> {
        if !a.is_square() {
            return Err(DsmError::input("resolvent needs a square matrix"));
        }
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(DsmError::input(format!("eps must be non-negative, got {eps}")));
        }
        let n = a.nrows();
        let mut shifted = a.clone();
        for i in 0..n {
            shifted[(i, i)] += eps;
        }
        if shifted.iter().any(|x| !x.is_finite()) {
            return Err(DsmError::Numeric("A + eps I has non-finite entries".into()));
        }
        let scale = a.amax() + eps;
        let threshold = PIVOT_RATIO * scale;
        let factor = if is_diagonal(&shifted) {
            let d = shifted.diagonal();
            if let Some(p) = d.iter().find(|p| p.abs() <= threshold) {
                return Err(DsmError::Singular { pivot: *p, scale });
            }
            Factor::Diagonal(d)
        } else {
            let lu = shifted.clone().lu();
            let u = lu.u();
            let pivot = u.diagonal().iter().fold(f64::INFINITY, |m, p| m.min(p.abs()));
            if pivot <= threshold {
                return Err(DsmError::Singular { pivot, scale });
            }
            Factor::Lu(lu)
        };
        Ok(Resolvent {
            shifted,
            factor,
            scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.shifted.nrows()
    }

    /// Solves `(A + εI) x = rhs` and verifies the normwise backward error.
    pub fn solve(&self, rhs: &Vector) -> Result<Vector> {
        check_dims(self.dim(), rhs.len(), "resolvent right-hand side")?;
        check_finite(rhs, "resolvent right-hand side")?;
        let x = match &self.factor {
            Factor::Diagonal(d) => rhs.component_div(d),
            Factor::Lu(lu) => lu
                .solve(rhs)
                .ok_or(DsmError::Singular { pivot: 0.0, scale: self.scale })?,
        };
        check_finite(&x, "resolvent solution")?;
        let residual = match &self.factor {
            Factor::Diagonal(d) => (x.component_mul(d) - rhs).amax(),
            Factor::Lu(_) => (&self.shifted * &x - rhs).amax(),
        };
        let allowed = RESIDUAL_RATIO * (1.0 + rhs.amax() + self.row_sum_norm() * x.amax());
        if residual > allowed {
            return Err(DsmError::Numeric(format!(
                "resolvent residual {residual:e} exceeds {allowed:e}"
            )));
        }
        Ok(x)
    }

    fn row_sum_norm(&self) -> f64 {
        self.shifted
            .row_iter()
            .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `(A + εI)⁻¹` assembled column by column.
    pub fn inverse(&self) -> Result<Matrix> {
        let n = self.dim();
        let mut inv = Matrix::zeros(n, n);
        let mut e = Vector::zeros(n);
        for j in 0..n {
            e[j] = 1.0;
            inv.set_column(j, &self.solve(&e)?);
            e[j] = 0.0;
        }
        Ok(inv)
    }
}

/// Solves `(A + εI) x = rhs` by LU with partial pivoting.
pub fn resolvent_solve(a: &Matrix, eps: f64, rhs: &Vector) -> Result<Vector> {
    Resolvent::new(a, eps)?.solve(rhs)
}

/// Sampled lower estimates of `sup ‖F^(j)‖` over the domain ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimates {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub sample_count: usize,
    pub seed: u64,
}

/// Draws `samples` points uniformly in `B(u0, R)`, each paired with one
/// random unit direction `d`, and takes the largest `‖F'(u)‖`,
/// `‖F''(u)[d,d]‖` and `‖F'''(u)[d,d,d]‖` seen. Higher derivatives come from
/// central differences along `t ↦ F(u + t d)`.
///
/// All randomness is drawn sequentially from one seeded stream, so a run
/// with `2N` samples extends the run with `N` and never lowers an estimate.
pub fn estimate_derivative_bounds(op: &ProblemOp, samples: usize, seed: u64) -> Result<BoundEstimates> {
    if samples == 0 {
        return Err(DsmError::input("need at least one sample"));
    }
    let kind = op.norm_kind();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut m1, mut m2, mut m3) = (0.0_f64, 0.0_f64, 0.0_f64);
    for i in 0..samples {
        let u = sample_ball(&mut rng, op.center(), op.ball_radius(), kind);
        let d = random_unit(&mut rng, op.dim(), kind);
        let at = |t: f64| op.eval(&(&u + &d * t));
        let fail = |what: &str| {
            DsmError::Numeric(format!("non-finite {what} estimate at sample {i} (u = {:?})", u.as_slice()))
        };

        let j1 = induced_matrix_norm(&op.jacobian_quiet(&u)?, kind)?;
        if !j1.is_finite() {
            return Err(fail("M1"));
        }

        let h = FD_SECOND_STEP;
        let f0 = op.eval(&u)?;
        let second = (at(h)? - &f0 * 2.0 + at(-h)?) / (h * h);
        let j2 = norm_unchecked(&second, kind);
        if !j2.is_finite() {
            return Err(fail("M2"));
        }

        let h = FD_THIRD_STEP;
        let third = (at(2.0 * h)? - at(h)? * 2.0 + at(-h)? * 2.0 - at(-2.0 * h)?) / (2.0 * h * h * h);
        let j3 = norm_unchecked(&third, kind);
        if !j3.is_finite() {
            return Err(fail("M3"));
        }

        m1 = m1.max(j1);
        m2 = m2.max(j2);
        m3 = m3.max(j3);
    }
    Ok(BoundEstimates {
        m1,
        m2,
        m3,
        sample_count: samples,
        seed,
    })
}

/// Power-law fit `N(ε) ≈ c0 ε^(-k)` of the resolvent norm at one point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolventGrowth {
    pub c0: f64,
    pub k: f64,
    pub residual_of_fit: f64,
    /// `(ε, ‖(A + εI)⁻¹‖)` for each scheduled ε.
    pub samples: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
}

impl ResolventGrowth {
    pub fn bound_at(&self, eps: f64) -> f64 {
        self.c0 * eps.powf(-self.k)
    }
}

pub fn estimate_resolvent_growth(op: &ProblemOp, u: &Vector, eps_schedule: &[f64]) -> Result<ResolventGrowth> {
    let mut distinct: Vec<f64> = eps_schedule.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 || distinct.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(DsmError::input(
            "resolvent growth needs at least three distinct positive eps values",
        ));
    }
    let a = jacobian(op, u)?;
    let mut samples = Vec::with_capacity(eps_schedule.len());
    for &eps in eps_schedule {
        let inv = Resolvent::new(&a, eps)
            .and_then(|r| r.inverse())
            .map_err(|e| DsmError::ResolventAt { eps, source: Box::new(e) })?;
        samples.push((eps, induced_matrix_norm(&inv, op.norm_kind())?));
    }
    let xs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let fit = log_log_fit(&xs, &ys)
        .ok_or_else(|| DsmError::Numeric("resolvent norms are not positive".into()))?;
    let k = -fit.slope;
    let mut warnings = Vec::new();
    if k <= WELL_POSED_K {
        let msg = format!(
            "fitted k = {k:.4} <= {WELL_POSED_K}: the linearization is well-posed at this point (no resolvent growth)"
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(ResolventGrowth {
        c0: fit.intercept.exp(),
        k,
        residual_of_fit: fit.rms,
        samples,
        warnings,
    })
}
