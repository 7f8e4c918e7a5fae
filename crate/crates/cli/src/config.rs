//! The serializable run description. Command-line flags are resolved into a
//! [`RunConfig`] once; execution reads nothing else, so an emitted config
//! replays the run exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dsm_core::contraction::FixedPointOptions;
use dsm_core::flow::FlowConfig;
use dsm_core::operator::AnalyticConstants;
use dsm_core::problems::{load_linear_csv, load_problem, ProblemSpec};
use dsm_core::regpath::{EpsSchedule, PathConfig, SolveMethod};
use dsm_core::{DsmError, NormKind, ProblemOp, RegParams, Result};

use crate::args::{
    CheckArgs, ContractArgs, FixedPointArgs, FlowArgs, FlowTolArgs, Format, PathArgs, ProbeArgs, ProblemArgs, RegArgs,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProblemSource {
    Builtin(ProblemSpec),
    Matrix { path: PathBuf, norm: NormKind },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstantOverrides {
    pub m2: Option<f64>,
    pub m3: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem: ProblemSource,
    #[serde(default)]
    pub overrides: ConstantOverrides,
    pub seed: u64,
    pub format: Format,
    pub out: PathBuf,
    pub task: Task,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Task {
    Flow(FlowTask),
    Path(PathTask),
    Contract(ContractTask),
    Probe(ProbeTask),
    Check(CheckTask),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowTask {
    pub flow: FlowConfig,
    pub w0: Vec<f64>,
    pub h_samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathTask {
    pub schedule: EpsSchedule,
    pub path: PathConfig,
    pub w0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shift {
    Zero,
    Solution,
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContractTask {
    pub eps0: f64,
    pub k: f64,
    pub c0: f64,
    pub eps: Vec<f64>,
    pub options: FixedPointOptions,
    pub shift: Option<Shift>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeTask {
    pub schedule: EpsSchedule,
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckTask {
    pub points: usize,
    pub tolerance: f64,
    pub samples: usize,
    pub eps_schedule: Vec<f64>,
    pub at: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn load_problem(&self) -> Result<ProblemOp> {
        load_source(&self.problem, &self.overrides)
    }

    /// Reads a plain config, a JSON artifact (`{"config": ..}`) or a CSV
    /// artifact with a `# config:` header line.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if text.starts_with('#') {
            let header = dsm_core::report::read_header(&text)?;
            let (_, value) = header
                .into_iter()
                .find(|(k, _)| k == "config")
                .ok_or_else(|| DsmError::input(format!("{} has no '# config:' line", path.display())))?;
            return Ok(serde_json::from_value(value)?);
        }
        let value: serde_json::Value = serde_json::from_str(&text)?;
        match value.get("config") {
            Some(inner) if value.get("result").is_some() => Ok(serde_json::from_value(inner.clone())?),
            _ => Ok(serde_json::from_value(value)?),
        }
    }
}

fn load_source(problem: &ProblemSource, o: &ConstantOverrides) -> Result<ProblemOp> {
    let op = match problem {
        ProblemSource::Builtin(spec) => load_problem(spec)?,
        ProblemSource::Matrix { path, norm } => load_linear_csv(path, *norm)?,
    };
    if o.m2.is_none() && o.m3.is_none() {
        return Ok(op);
    }
    let c = *op.constants();
    let constants = AnalyticConstants {
        m2: o.m2.or(c.m2),
        m3: o.m3.or(c.m3),
        ..c
    };
    Ok(op.with_constants(constants))
}

pub struct Common {
    pub out: PathBuf,
    pub format: Format,
}

fn problem_source(p: &ProblemArgs, extra: &[(String, f64)]) -> ProblemSource {
    match &p.matrix {
        Some(path) => ProblemSource::Matrix {
            path: path.clone(),
            norm: p.norm,
        },
        None => {
            let mut spec = ProblemSpec::new(p.problem.clone(), p.n).with_seed(p.seed).with_norm(p.norm);
            for (k, v) in p.params.iter().chain(extra) {
                spec = spec.param(k.clone(), *v);
            }
            ProblemSource::Builtin(spec)
        }
    }
}

struct Resolved {
    problem: ProblemSource,
    overrides: ConstantOverrides,
    seed: u64,
    op: ProblemOp,
}

impl Resolved {
    fn into_config(self, common: &Common, task: Task) -> RunConfig {
        RunConfig {
            problem: self.problem,
            overrides: self.overrides,
            seed: self.seed,
            format: common.format,
            out: common.out.clone(),
            task,
        }
    }
}

/// Resolves and loads the problem, so that defaults depending on it
/// (dimension, analytic `k` and `c0`) can be filled in.
fn resolve(p: &ProblemArgs, extra: &[(String, f64)]) -> Result<Resolved> {
    if p.m2.is_some_and(|v| !(v >= 0.0)) || p.m3.is_some_and(|v| !(v >= 0.0)) {
        return Err(DsmError::input("--m2 and --m3 must be non-negative"));
    }
    let problem = problem_source(p, extra);
    let overrides = ConstantOverrides { m2: p.m2, m3: p.m3 };
    let op = load_source(&problem, &overrides)?;
    Ok(Resolved {
        problem,
        overrides,
        seed: p.seed,
        op,
    })
}

fn reg_defaults(r: &RegArgs, op: &ProblemOp) -> (f64, f64, f64) {
    let c = op.constants();
    (r.eps0, r.k.or(c.k).unwrap_or(1.0), r.c0.or(c.c0).unwrap_or(1.0))
}

fn state(values: &[f64], n: usize, what: &str) -> Result<Vec<f64>> {
    match values.len() {
        0 => Ok(vec![0.0; n]),
        1 => Ok(vec![values[0]; n]),
        m if m == n => Ok(values.to_vec()),
        m => Err(DsmError::input(format!("{what} has {m} values; expected 1 or {n}"))),
    }
}

fn flow_config(reg: RegParams, t: &FlowTolArgs) -> Result<FlowConfig> {
    let mut cfg = FlowConfig::new(reg).with_target(t.delta).with_tolerances(t.rel_tol, t.abs_tol);
    cfg.t_max = t.t_max;
    cfg.max_steps = t.max_steps;
    cfg.validate()?;
    Ok(cfg)
}

fn fixed_point_options(a: &FixedPointArgs, seed: u64) -> FixedPointOptions {
    FixedPointOptions {
        tol: a.tol,
        max_iter: a.max_iter,
        strict: !a.lenient,
        bound_samples: a.bound_samples,
        seed,
        initial: None,
    }
}

pub fn flow(a: &FlowArgs, common: &Common) -> Result<RunConfig> {
    let r = resolve(&a.problem, &[])?;
    let (eps0, k, c0) = reg_defaults(&a.reg, &r.op);
    let reg = RegParams::new(a.eps, eps0, k, c0)?;
    let task = Task::Flow(FlowTask {
        flow: flow_config(reg, &a.tol)?,
        w0: state(&a.tol.w0, r.op.dim(), "--w0")?,
        h_samples: a.h_samples,
    });
    Ok(r.into_config(common, task))
}

pub fn path(a: &PathArgs, common: &Common) -> Result<RunConfig> {
    let r = resolve(&a.problem, &[])?;
    let (eps0, k, c0) = reg_defaults(&a.reg, &r.op);
    // The per-point eps replaces this placeholder inside the path runner.
    let reg = RegParams::new(eps0 / 2.0, eps0, k, c0)?;
    let schedule = EpsSchedule::new(a.schedule.eps_start, a.schedule.factor, a.schedule.count)?;
    let method: SolveMethod = a.method.parse()?;
    let mut path = PathConfig::new(method, reg);
    path.flow = flow_config(reg, &a.tol)?;
    path.contraction = fixed_point_options(&a.fixed_point, r.seed);
    path.warm_start = !a.cold;
    path.jobs = a.jobs;
    let task = Task::Path(PathTask {
        schedule,
        path,
        w0: state(&a.tol.w0, r.op.dim(), "--w0")?,
    });
    Ok(r.into_config(common, task))
}

fn parse_shift(s: &str, n: usize) -> Result<Shift> {
    match s.trim().to_ascii_lowercase().as_str() {
        "zero" | "0" => Ok(Shift::Zero),
        "solution" | "y" => Ok(Shift::Solution),
        list => {
            let values = list
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|_| DsmError::input(format!("--shift expects zero, solution or numbers; got '{s}'")))?;
            Ok(Shift::Vector(state(&values, n, "--shift")?))
        }
    }
}

pub fn contract(a: &ContractArgs, common: &Common) -> Result<RunConfig> {
    let extra: Vec<(String, f64)> = a.psi_norm.map(|v| ("psi_norm".to_string(), v)).into_iter().collect();
    let r = resolve(&a.problem, &extra)?;
    let (eps0, k, c0) = reg_defaults(&a.reg, &r.op);
    for &eps in &a.eps {
        RegParams::new(eps, eps0, k, c0)?;
    }
    let task = Task::Contract(ContractTask {
        eps0,
        k,
        c0,
        eps: a.eps.clone(),
        options: fixed_point_options(&a.fixed_point, r.seed),
        shift: a.shift.as_deref().map(|s| parse_shift(s, r.op.dim())).transpose()?,
    });
    Ok(r.into_config(common, task))
}

pub fn probe(a: &ProbeArgs, common: &Common) -> Result<RunConfig> {
    let r = resolve(&a.problem, &[])?;
    let task = Task::Probe(ProbeTask {
        schedule: EpsSchedule::new(a.schedule.eps_start, a.schedule.factor, a.schedule.count)?,
        jobs: a.jobs,
    });
    Ok(r.into_config(common, task))
}

pub fn check(a: &CheckArgs, common: &Common) -> Result<RunConfig> {
    let r = resolve(&a.problem, &[])?;
    let at = if a.at.is_empty() {
        None
    } else {
        Some(state(&a.at, r.op.dim(), "--at")?)
    };
    let task = Task::Check(CheckTask {
        points: a.points,
        tolerance: a.tolerance,
        samples: a.samples,
        eps_schedule: a.eps_schedule.clone(),
        at,
    });
    Ok(r.into_config(common, task))
}
