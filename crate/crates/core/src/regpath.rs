//! Solving along a decreasing ε-schedule, fitting `‖v_ε - y‖ ≈ c ε^k`, and
//! probing linear problems for unbounded `‖v_ε‖`.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contraction::{fixed_point_solve, source_condition_solve, FixedPointOptions};
use crate::error::{DsmError, Result};
use crate::fit::log_log_fit;
use crate::flow::{integrate_dsm, FlowConfig};
use crate::operator::{jacobian, regularized_residual, ProblemOp, RegParams, Resolvent};
use crate::space::{random_unit, serde_vector, Vector};

pub const MIN_FIT_POINTS: usize = 3;
pub const DIVERGENCE_RATIO: f64 = 10.0;

/// Geometric schedule `ε_i = eps_start · factor^i`, `i < count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsSchedule {
    pub eps_start: f64,
    pub factor: f64,
    pub count: usize,
}

impl EpsSchedule {
    pub fn new(eps_start: f64, factor: f64, count: usize) -> Result<Self> {
        let s = EpsSchedule { eps_start, factor, count };
        s.validate()?;
        Ok(s)
    }

    /// `count` points from `hi` down to `lo`, both included.
    pub fn spanning(hi: f64, lo: f64, count: usize) -> Result<Self> {
        if !(hi > lo && lo > 0.0) || count < 2 {
            return Err(DsmError::input(format!("cannot span [{lo}, {hi}] with {count} points")));
        }
        Self::new(hi, (lo / hi).powf(1.0 / (count - 1) as f64), count)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_start > 0.0 && self.eps_start.is_finite()) {
            return Err(DsmError::input(format!("eps_start must be positive, got {}", self.eps_start)));
        }
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(DsmError::input(format!("schedule factor must lie in (0, 1), got {}", self.factor)));
        }
        if self.count < 3 {
            return Err(DsmError::input(format!("schedule needs at least 3 points, got {}", self.count)));
        }
        if !(self.last() > 0.0) {
            return Err(DsmError::input("schedule underflows to zero"));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.eps_start * self.factor.powi(i as i32)).collect()
    }

    fn last(&self) -> f64 {
        self.eps_start * self.factor.powi(self.count as i32 - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMethod {
    Flow,
    Contraction,
    /// Flow to the target residual, then fixed-point polish from there.
    Hybrid,
}

impl fmt::Display for SolveMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveMethod::Flow => "flow",
            SolveMethod::Contraction => "contraction",
            SolveMethod::Hybrid => "hybrid",
        })
    }
}

impl FromStr for SolveMethod {
    type Err = DsmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "flow" => Ok(SolveMethod::Flow),
            "contraction" | "contract" => Ok(SolveMethod::Contraction),
            "hybrid" => Ok(SolveMethod::Hybrid),
            _ => Err(DsmError::input(format!("unknown method '{s}' (flow, contraction, hybrid)"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathConfig {
    pub method: SolveMethod,
    /// Flow settings; `flow.reg` supplies `ε0`, `k`, `c0`, its `ε` is replaced per point.
    pub flow: FlowConfig,
    pub contraction: FixedPointOptions,
    /// Start each flow solve from the previous `v_ε`.
    pub warm_start: bool,
    /// Worker threads for independent solves; the global pool when absent.
    pub jobs: Option<usize>,
}

impl PathConfig {
    pub fn new(method: SolveMethod, reg: RegParams) -> Self {
        PathConfig {
            method,
            flow: FlowConfig::new(reg),
            contraction: FixedPointOptions::default(),
            warm_start: true,
            jobs: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordStatus {
    Ok,
    Failed,
}

impl fmt::Display for RecordStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecordStatus::Ok => "ok",
            RecordStatus::Failed => "failed",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathRecord {
    pub eps: f64,
    #[serde(with = "serde_vector::option")]
    pub v: Option<Vector>,
    pub residual: Option<f64>,
    /// `‖v_ε - y‖` when the root is known.
    pub error: Option<f64>,
    /// Accepted flow steps plus fixed-point iterations.
    pub iterations: usize,
    pub method: SolveMethod,
    pub status: RecordStatus,
    /// Residual level the solver was asked to reach.
    pub tolerance: f64,
    pub message: Option<String>,
}

impl PathRecord {
    fn failed(eps: f64, method: SolveMethod, tolerance: f64, err: &DsmError) -> Self {
        PathRecord {
            eps,
            v: None,
            residual: None,
            error: None,
            iterations: 0,
            method,
            status: RecordStatus::Failed,
            tolerance,
            message: Some(err.to_string()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatePathResult {
    pub problem: String,
    pub schedule: EpsSchedule,
    pub config: PathConfig,
    /// Sorted by decreasing ε.
    pub records: Vec<PathRecord>,
    pub k_hat: Option<f64>,
    pub c_hat: Option<f64>,
    pub fit_rms: Option<f64>,
    pub notes: Vec<String>,
}

impl RatePathResult {
    pub fn successes(&self) -> impl Iterator<Item = &PathRecord> {
        self.records.iter().filter(|r| r.status == RecordStatus::Ok)
    }
}

fn fan_out<T, F>(jobs: Option<usize>, count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let run = || (0..count).into_par_iter().map(&f).collect::<Vec<T>>();
    match jobs {
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j.max(1))
                .build()
                .map_err(|e| DsmError::Numeric(format!("cannot start worker pool: {e}")))?;
            Ok(pool.install(run))
        }
        None => Ok(run()),
    }
}

struct Solver<'a> {
    op: &'a ProblemOp,
    cfg: &'a PathConfig,
    y: Option<&'a Vector>,
    psi: Option<Vector>,
}

impl Solver<'_> {
    fn reg(&self, eps: f64) -> Result<RegParams> {
        self.cfg.flow.reg.with_eps(eps)
    }

    fn contraction_tolerance(&self) -> f64 {
        let m1 = self.op.constants().m1.unwrap_or(1.0);
        10.0 * self.cfg.contraction.tol * (1.0 + m1)
    }

    fn tolerance(&self) -> f64 {
        match self.cfg.method {
            SolveMethod::Flow => self.cfg.flow.target_residual,
            SolveMethod::Contraction => self.contraction_tolerance(),
            SolveMethod::Hybrid => self.cfg.flow.target_residual.max(self.contraction_tolerance()),
        }
    }

    fn flow(&self, eps: f64, w0: &Vector) -> Result<(Vector, usize)> {
        let mut cfg = self.cfg.flow;
        cfg.reg = self.reg(eps)?;
        let trace = integrate_dsm(self.op, w0, &cfg)?;
        if !trace.reached_target {
            return Err(DsmError::Numeric(format!(
                "flow stopped at t = {} with residual {:e} above the target",
                trace.final_time(),
                trace.final_residual()
            )));
        }
        Ok((trace.w_inf, trace.accepted_steps))
    }

    fn contract(&self, eps: f64, start: Option<&Vector>) -> Result<(Vector, usize)> {
        let (y, psi) = (self.y.expect("checked"), self.psi.as_ref().expect("checked"));
        let mut opts = self.cfg.contraction.clone();
        if let Some(v) = start {
            opts.initial = Some(v - y);
        }
        let d = fixed_point_solve(self.op, y, psi, &self.reg(eps)?, &opts)?;
        if !d.converged {
            return Err(DsmError::Numeric(format!(
                "fixed-point iteration did not converge in {} iterations",
                d.iterations
            )));
        }
        Ok((d.v_eps, d.iterations))
    }

    fn solve(&self, eps: f64, w0: &Vector) -> PathRecord {
        let method = self.cfg.method;
        let tolerance = self.tolerance();
        let result = match method {
            SolveMethod::Flow => self.flow(eps, w0),
            SolveMethod::Contraction => self.contract(eps, None),
            SolveMethod::Hybrid => self.flow(eps, w0).and_then(|(v, steps)| {
                if self.psi.is_some() {
                    self.contract(eps, Some(&v)).map(|(v, it)| (v, steps + it))
                } else {
                    Ok((v, steps))
                }
            }),
        };
        let (v, iterations) = match result {
            Ok(x) => x,
            Err(e) => {
                log::warn!("solve at eps = {eps:e} failed: {e}");
                return PathRecord::failed(eps, method, tolerance, &e);
            }
        };
        let residual = match regularized_residual(self.op, &v, eps) {
            Ok(r) => self.op.norm(&r),
            Err(e) => return PathRecord::failed(eps, method, tolerance, &e),
        };
        let (status, message) = if residual <= tolerance {
            (RecordStatus::Ok, None)
        } else {
            (
                RecordStatus::Failed,
                Some(format!("residual {residual:e} exceeds the tolerance {tolerance:e}")),
            )
        };
        PathRecord {
            eps,
            error: self.y.map(|y| self.op.norm(&(&v - y))),
            v: Some(v),
            residual: Some(residual),
            iterations,
            method,
            status,
            tolerance,
            message,
        }
    }
}

/// Solves `F(v) + εv = 0` at every point of the schedule. A failure at one ε
/// is recorded and the path continues; only an all-failed path is an error.
pub fn run_path(op: &ProblemOp, w0: &Vector, sched: &EpsSchedule, cfg: &PathConfig) -> Result<RatePathResult> {
    sched.validate()?;
    cfg.flow.validate()?;
    let eps_values = sched.values();
    if eps_values[0] >= cfg.flow.reg.eps0 {
        return Err(DsmError::input(format!(
            "schedule starts at {} but must stay below eps0 = {}",
            eps_values[0], cfg.flow.reg.eps0
        )));
    }
    crate::space::check_dims(op.dim(), w0.len(), "path start")?;
    let mut notes = Vec::new();
    let y = op.known_solution();
    let needs_source = matches!(cfg.method, SolveMethod::Contraction | SolveMethod::Hybrid);
    let psi = match (needs_source, y) {
        (false, _) => None,
        (true, None) if cfg.method == SolveMethod::Hybrid => {
            notes.push("no known root: hybrid runs the flow without the fixed-point polish".into());
            None
        }
        (true, None) => {
            return Err(DsmError::input("the contraction method needs a problem with a known root"));
        }
        (true, Some(y)) => Some(match op.known_source() {
            Some(psi) => psi.clone(),
            None => source_condition_solve(op, y)?.psi,
        }),
    };
    let solver = Solver { op, cfg, y, psi };

    let sequential = cfg.warm_start && cfg.method != SolveMethod::Contraction;
    let records = if sequential {
        let mut start = w0.clone();
        let mut out = Vec::with_capacity(eps_values.len());
        for &eps in &eps_values {
            let rec = solver.solve(eps, &start);
            if let (RecordStatus::Ok, Some(v)) = (rec.status, &rec.v) {
                start = v.clone();
            }
            out.push(rec);
        }
        out
    } else {
        fan_out(cfg.jobs, eps_values.len(), |i| solver.solve(eps_values[i], w0))?
    };

    let failed: Vec<&PathRecord> = records.iter().filter(|r| r.status == RecordStatus::Failed).collect();
    if failed.len() == records.len() {
        return Err(DsmError::PathFailed {
            count: failed.len(),
            first: failed[0].message.clone().unwrap_or_default(),
        });
    }
    if !failed.is_empty() {
        notes.push(format!("{} of {} solves failed", failed.len(), records.len()));
    }
    Ok(RatePathResult {
        problem: op.name().to_string(),
        schedule: *sched,
        config: cfg.clone(),
        records,
        k_hat: None,
        c_hat: None,
        fit_rms: None,
        notes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub k_hat: f64,
    pub c_hat: f64,
    pub fit_rms: f64,
    pub points: usize,
}

/// Least-squares fit of `ln error = ln c + k ln ε` over successful records
/// with positive error. Zero-error records are skipped with a note.
pub fn fit_rate(path: &mut RatePathResult) -> Result<RateFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut zeros = 0;
    for r in path.successes() {
        match r.error {
            Some(e) if e > 0.0 => {
                xs.push(r.eps);
                ys.push(e);
            }
            Some(_) => zeros += 1,
            None => {}
        }
    }
    if zeros > 0 {
        path.notes.push(format!("{zeros} zero-error record(s) excluded from the rate fit"));
    }
    if xs.len() < MIN_FIT_POINTS {
        return Err(DsmError::InsufficientData {
            usable: xs.len(),
            required: MIN_FIT_POINTS,
        });
    }
    let fit = log_log_fit(&xs, &ys).ok_or_else(|| DsmError::Numeric("degenerate rate fit".into()))?;
    let out = RateFit {
        k_hat: fit.slope,
        c_hat: fit.intercept.exp(),
        fit_rms: fit.rms,
        points: xs.len(),
    };
    path.k_hat = Some(out.k_hat);
    path.c_hat = Some(out.c_hat);
    path.fit_rms = Some(out.fit_rms);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Bounded,
    Divergent,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Bounded => "bounded",
            Verdict::Divergent => "divergent",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeResult {
    pub problem: String,
    pub schedule: EpsSchedule,
    /// `(ε, ‖v_ε‖)` by decreasing ε.
    pub points: Vec<(f64, f64)>,
    pub strictly_increasing: bool,
    /// `‖v_ε‖` at the last ε over the first.
    pub ratio: f64,
    pub verdict: Verdict,
}

/// `‖v_ε‖` for `(A + εI) v = f` along the schedule, where `F(u) = Au - f`.
/// Divergent means strictly increasing over the whole schedule with a
/// last-to-first ratio above ten.
pub fn divergence_probe(op: &ProblemOp, sched: &EpsSchedule, jobs: Option<usize>) -> Result<ProbeResult> {
    sched.validate()?;
    let n = op.dim();
    let origin = Vector::zeros(n);
    let a = jacobian(op, &origin)?;
    let f = -op.eval(&origin)?;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let u = op.center() + random_unit(&mut rng, n, op.norm_kind()) * op.ball_radius();
    let fu = op.eval(&u)?;
    let gap = op.norm(&(&fu - (&a * &u - &f)));
    if gap > 1e-8 * (1.0 + op.norm(&fu)) {
        return Err(DsmError::input(format!(
            "divergence probe needs a linear operator; '{}' deviates by {gap:e}",
            op.name()
        )));
    }

    let eps_values = sched.values();
    let norms = fan_out(jobs, eps_values.len(), |i| {
        Resolvent::new(&a, eps_values[i])
            .and_then(|r| r.solve(&f))
            .map(|v| op.norm(&v))
    })?
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;

    let strictly_increasing = norms.windows(2).all(|w| w[1] > w[0]);
    let ratio = norms[norms.len() - 1] / norms[0];
    let verdict = if strictly_increasing && ratio > DIVERGENCE_RATIO {
        Verdict::Divergent
    } else {
        Verdict::Bounded
    };
    Ok(ProbeResult {
        problem: op.name().to_string(),
        schedule: *sched,
        points: eps_values.into_iter().zip(norms).collect(),
        strictly_increasing,
        ratio,
        verdict,
    })
}
