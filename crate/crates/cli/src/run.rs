use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use dsm_core::contraction::{
    fixed_point_solve, shifted_fixed_point_solve, source_condition_solve, ContractionDiagnostics, ShiftedProblem,
};
use dsm_core::flow::{decay_report, integrate_dsm};
use dsm_core::operator::{estimate_derivative_bounds, estimate_resolvent_growth, jacobian_self_test};
use dsm_core::problems::REGISTRY;
use dsm_core::regpath::{divergence_probe, fit_rate, run_path};
use dsm_core::report;
use dsm_core::space::sample_ball;
use dsm_core::{DsmError, ProblemOp, RegParams, Result, Vector};

use crate::args::Format;
use crate::config::{CheckTask, ContractTask, FlowTask, PathTask, ProbeTask, RunConfig, Shift, Task};

/// Files written and a short human summary.
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: Vec<String>,
}

struct Sink<'a> {
    cfg: &'a RunConfig,
    files: Vec<PathBuf>,
}

impl Sink<'_> {
    fn header(&self, extra: Vec<(&'static str, Value)>) -> Result<Vec<(&'static str, Value)>> {
        let mut h = vec![("config", serde_json::to_value(self.cfg)?), ("seed", json!(self.cfg.seed))];
        h.extend(extra);
        Ok(h)
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        std::fs::create_dir_all(&self.cfg.out)?;
        let path = self.cfg.out.join(name);
        let file = File::create(&path)?;
        self.files.push(path);
        Ok(BufWriter::new(file))
    }

    fn json(&mut self, name: &str, result: &Value) -> Result<()> {
        let mut w = self.create(name)?;
        report::write_json(&mut w, self.cfg, result)?;
        w.flush()?;
        Ok(())
    }
}

pub fn execute(cfg: &RunConfig) -> Result<Outcome> {
    let op = cfg.load_problem()?;
    let mut sink = Sink { cfg, files: Vec::new() };
    let summary = match &cfg.task {
        Task::Flow(t) => flow(&op, t, &mut sink)?,
        Task::Path(t) => path(&op, t, &mut sink)?,
        Task::Contract(t) => contract(&op, t, &mut sink)?,
        Task::Probe(t) => probe(&op, t, &mut sink)?,
        Task::Check(t) => check(&op, t, &mut sink)?,
    };
    Ok(Outcome {
        files: sink.files,
        summary,
    })
}

fn flow(op: &ProblemOp, t: &FlowTask, sink: &mut Sink) -> Result<Vec<String>> {
    let w0 = Vector::from_vec(t.w0.clone());
    let trace = integrate_dsm(op, &w0, &t.flow)?;
    let rep = decay_report(op, &trace, &t.flow.reg, t.h_samples, sink.cfg.seed)?;
    match sink.cfg.format {
        Format::Csv => {
            let header = sink.header(vec![])?;
            let mut w = sink.create("flow_trace.csv")?;
            report::write_trace_csv(&mut w, &header, &trace)?;
            w.flush()?;
            let rows = vec![
                ("f0".to_string(), Some(rep.f0)),
                ("final_time".to_string(), Some(trace.final_time())),
                ("final_residual".to_string(), Some(trace.final_residual())),
                ("accepted_steps".to_string(), Some(trace.accepted_steps as f64)),
                ("rejected_steps".to_string(), Some(trace.rejected_steps as f64)),
                ("norm_decay_deviation".to_string(), Some(rep.norm_decay_deviation)),
                ("functional_decay_deviation".to_string(), Some(rep.functional_decay_deviation)),
                ("tail_violations".to_string(), Some(rep.tail_violations as f64)),
                ("drift_violations".to_string(), Some(rep.drift_violations as f64)),
                ("resolvent_bound".to_string(), Some(rep.resolvent_bound)),
            ];
            let mut w = sink.create("flow_report.csv")?;
            report::write_scalars_csv(&mut w, &header, &rows)?;
            w.flush()?;
        }
        Format::Json => sink.json("flow.json", &json!({ "trace": trace, "report": rep }))?,
    }
    Ok(vec![
        format!(
            "flow: F0 = {:e}, residual {:e} at t = {:.4} after {} steps",
            trace.f0,
            trace.final_residual(),
            trace.final_time(),
            trace.accepted_steps
        ),
        format!(
            "decay deviation {:e} (norm), {:e} (functionals); bound violations: {} tail, {} drift",
            rep.norm_decay_deviation, rep.functional_decay_deviation, rep.tail_violations, rep.drift_violations
        ),
    ])
}

fn path(op: &ProblemOp, t: &PathTask, sink: &mut Sink) -> Result<Vec<String>> {
    let w0 = Vector::from_vec(t.w0.clone());
    let mut result = run_path(op, &w0, &t.schedule, &t.path)?;
    let fit_line = match fit_rate(&mut result) {
        Ok(fit) => format!(
            "k_hat = {:.4}, c_hat = {:.4e}, fit rms = {:.2e} over {} points",
            fit.k_hat, fit.c_hat, fit.fit_rms, fit.points
        ),
        Err(e @ DsmError::InsufficientData { .. }) => {
            log::warn!("rate fit skipped: {e}");
            result.notes.push(format!("rate fit skipped: {e}"));
            format!("no rate fit: {e}")
        }
        Err(e) => return Err(e),
    };
    match sink.cfg.format {
        Format::Csv => {
            let fit = json!({
                "schedule": result.schedule,
                "k_hat": result.k_hat,
                "c_hat": result.c_hat,
                "fit_rms": result.fit_rms,
                "notes": result.notes,
            });
            let header = sink.header(vec![("fit", fit)])?;
            let mut w = sink.create("path.csv")?;
            report::write_path_csv(&mut w, &header, &result)?;
            w.flush()?;
        }
        Format::Json => sink.json("path.json", &serde_json::to_value(&result)?)?,
    }
    let ok = result.successes().count();
    Ok(vec![
        format!("path: {ok} of {} solves succeeded", result.records.len()),
        fit_line,
    ])
}

fn contract_one(op: &ProblemOp, t: &ContractTask, eps: f64, source: &Option<Vector>) -> Result<ContractionDiagnostics> {
    let reg = RegParams::new(eps, t.eps0, t.k, t.c0)?;
    match &t.shift {
        Some(shift) => {
            let y = op
                .known_solution()
                .ok_or_else(|| DsmError::input("the shifted construction needs a problem with a known root"))?;
            let q = match shift {
                Shift::Zero => Vector::zeros(op.dim()),
                Shift::Solution => y.clone(),
                Shift::Vector(v) => Vector::from_vec(v.clone()),
            };
            let problem = ShiftedProblem::new(op.clone(), q)?;
            shifted_fixed_point_solve(&problem, &reg, &t.options)
        }
        None => {
            let y = op
                .known_solution()
                .ok_or_else(|| DsmError::input("the fixed-point construction needs a problem with a known root"))?;
            let psi = source.as_ref().expect("resolved with the root");
            fixed_point_solve(op, y, psi, &reg, &t.options)
        }
    }
}

fn contract(op: &ProblemOp, t: &ContractTask, sink: &mut Sink) -> Result<Vec<String>> {
    let source = match (&t.shift, op.known_solution()) {
        (None, Some(y)) => Some(match op.known_source() {
            Some(psi) => psi.clone(),
            None => source_condition_solve(op, y)?.psi,
        }),
        _ => None,
    };
    let rows = t
        .eps
        .iter()
        .map(|&eps| contract_one(op, t, eps, &source))
        .collect::<Result<Vec<_>>>()?;
    match sink.cfg.format {
        Format::Csv => {
            let header = sink.header(vec![])?;
            let mut w = sink.create("contract.csv")?;
            report::write_contraction_csv(&mut w, &header, &rows)?;
            w.flush()?;
        }
        Format::Json => sink.json("contract.json", &serde_json::to_value(&rows)?)?,
    }
    Ok(rows
        .iter()
        .map(|d| {
            let status = if d.certified { "certified" } else { "not certified" };
            format!(
                "eps = {:e}: rho = {:.6}, r = {}, eta = {}, {} iterations, |z*| = {:e} ({status})",
                d.eps,
                d.rho,
                d.r.map_or("-".into(), |r| format!("{r:e}")),
                d.eta.map_or("-".into(), |e| format!("{e:.6}")),
                d.iterations,
                d.error
            )
        })
        .collect())
}

fn probe(op: &ProblemOp, t: &ProbeTask, sink: &mut Sink) -> Result<Vec<String>> {
    let result = divergence_probe(op, &t.schedule, t.jobs)?;
    match sink.cfg.format {
        Format::Csv => {
            let verdict = json!({
                "verdict": result.verdict,
                "ratio": result.ratio,
                "strictly_increasing": result.strictly_increasing,
                "schedule": result.schedule,
            });
            let header = sink.header(vec![("verdict", verdict)])?;
            let mut w = sink.create("probe.csv")?;
            report::write_probe_csv(&mut w, &header, &result)?;
            w.flush()?;
        }
        Format::Json => sink.json("probe.json", &serde_json::to_value(&result)?)?,
    }
    Ok(vec![format!(
        "probe: {} (last/first = {:.4}, strictly increasing: {})",
        result.verdict, result.ratio, result.strictly_increasing
    )])
}

fn check(op: &ProblemOp, t: &CheckTask, sink: &mut Sink) -> Result<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(sink.cfg.seed);
    let points: Vec<Vector> = (0..t.points)
        .map(|_| sample_ball(&mut rng, op.center(), op.ball_radius(), op.norm_kind()))
        .collect();
    let jac = jacobian_self_test(op, &points, t.tolerance)?;
    let bounds = estimate_derivative_bounds(op, t.samples, sink.cfg.seed)?;
    let at = match &t.at {
        Some(v) => Vector::from_vec(v.clone()),
        None => op.known_solution().unwrap_or(op.center()).clone(),
    };
    let growth = estimate_resolvent_growth(op, &at, &t.eps_schedule)?;
    if !jac.passed {
        log::warn!(
            "Jacobian self-test failed: max relative difference {:e} > {:e}",
            jac.max_rel_diff,
            jac.tolerance
        );
    }
    match sink.cfg.format {
        Format::Csv => {
            let header = sink.header(vec![])?;
            let rows = vec![
                ("jacobian_points".to_string(), Some(jac.points_checked as f64)),
                ("jacobian_max_rel_diff".to_string(), Some(jac.max_rel_diff)),
                ("jacobian_passed".to_string(), Some(if jac.passed { 1.0 } else { 0.0 })),
                ("m1".to_string(), Some(bounds.m1)),
                ("m2".to_string(), Some(bounds.m2)),
                ("m3".to_string(), Some(bounds.m3)),
                ("c0".to_string(), Some(growth.c0)),
                ("k".to_string(), Some(growth.k)),
                ("growth_fit_rms".to_string(), Some(growth.residual_of_fit)),
            ];
            let mut w = sink.create("check.csv")?;
            report::write_scalars_csv(&mut w, &header, &rows)?;
            w.flush()?;
        }
        Format::Json => sink.json(
            "check.json",
            &json!({ "jacobian": jac, "bounds": bounds, "resolvent_growth": growth }),
        )?,
    }
    Ok(vec![
        format!(
            "jacobian: {} (max rel diff {:e} over {} points)",
            if jac.passed { "ok" } else { "MISMATCH" },
            jac.max_rel_diff,
            jac.points_checked
        ),
        format!("derivative bounds: M1 = {:e}, M2 = {:e}, M3 = {:e}", bounds.m1, bounds.m2, bounds.m3),
        format!("resolvent growth: c0 = {:e}, k = {:.4}", growth.c0, growth.k),
    ])
}

pub fn list_problems() -> String {
    let mut s = String::new();
    for p in REGISTRY {
        s.push_str(&format!("{}\n    {}\n", p.name, p.summary));
        for param in p.params {
            s.push_str(&format!("    --param {}=...  {} (default {})\n", param.key, param.help, param.default));
        }
    }
    s
}
