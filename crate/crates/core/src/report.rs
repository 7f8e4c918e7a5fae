//! CSV and JSON artifact writers.
//!
//! Every artifact embeds the configuration that produced it. CSV files carry
//! it as leading `# key: <json>` comment lines, JSON files as a `config` member
//! next to the `result`. Floats are written in shortest round-trip form, so
//! numeric columns survive a write/read cycle exactly.

use std::io::Write;

use serde::Serialize;

use crate::contraction::ContractionDiagnostics;
use crate::error::Result;
use crate::flow::FlowTrace;
use crate::regpath::{ProbeResult, RatePathResult};

/// Shortest round-trip text; exponent form outside `[1e-4, 1e16)`.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, fmt_f64)
}

/// Writes `# key: <compact json>` lines.
pub fn write_header<W: Write>(out: &mut W, entries: &[(&str, serde_json::Value)]) -> Result<()> {
    for (key, value) in entries {
        writeln!(out, "# {key}: {}", serde_json::to_string(value)?)?;
    }
    Ok(())
}

/// Parses the `# key: <json>` header written by [`write_header`].
pub fn read_header(text: &str) -> Result<Vec<(String, serde_json::Value)>> {
    let mut out = Vec::new();
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        if let Some((key, json)) = line[1..].trim_start().split_once(": ") {
            out.push((key.to_string(), serde_json::from_str(json)?));
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct Envelope<'a, C: Serialize, T: Serialize> {
    config: &'a C,
    result: &'a T,
}

pub fn write_json<W: Write, C: Serialize, T: Serialize>(out: &mut W, config: &C, result: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, &Envelope { config, result })?;
    writeln!(out)?;
    Ok(())
}

/// Long format: `t,residual,w_0,...,w_{n-1}` per accepted step.
pub fn write_trace_csv<W: Write>(out: &mut W, header: &[(&str, serde_json::Value)], trace: &FlowTrace) -> Result<()> {
    write_header(out, header)?;
    let mut w = csv::Writer::from_writer(out);
    let n = trace.w0.len();
    let mut cols = vec!["t".to_string(), "residual".to_string()];
    cols.extend((0..n).map(|i| format!("w_{i}")));
    w.write_record(&cols)?;
    for ((t, r), state) in trace.times.iter().zip(&trace.residual_norms).zip(&trace.states) {
        let mut row = vec![fmt_f64(*t), fmt_f64(*r)];
        row.extend(state.iter().map(|x| fmt_f64(*x)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `eps,residual,error,iters,method,status`.
pub fn write_path_csv<W: Write>(out: &mut W, header: &[(&str, serde_json::Value)], path: &RatePathResult) -> Result<()> {
    write_header(out, header)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["eps", "residual", "error", "iters", "method", "status"])?;
    for r in &path.records {
        w.write_record([
            fmt_f64(r.eps),
            opt(r.residual),
            opt(r.error),
            r.iterations.to_string(),
            r.method.to_string(),
            r.status.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `eps,r,rho,eta,iters,converged,err`, one row per diagnostics record.
pub fn write_contraction_csv<W: Write>(
    out: &mut W,
    header: &[(&str, serde_json::Value)],
    rows: &[ContractionDiagnostics],
) -> Result<()> {
    write_header(out, header)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["eps", "r", "rho", "eta", "iters", "converged", "err"])?;
    for d in rows {
        w.write_record([
            fmt_f64(d.eps),
            opt(d.r),
            fmt_f64(d.rho),
            opt(d.eta),
            d.iterations.to_string(),
            d.converged.to_string(),
            fmt_f64(d.error),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `eps,v_norm`; the verdict goes into the header.
pub fn write_probe_csv<W: Write>(out: &mut W, header: &[(&str, serde_json::Value)], probe: &ProbeResult) -> Result<()> {
    write_header(out, header)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["eps", "v_norm"])?;
    for (eps, v) in &probe.points {
        w.write_record([fmt_f64(*eps), fmt_f64(*v)])?;
    }
    w.flush()?;
    Ok(())
}

/// `quantity,value` rows for scalar summaries.
pub fn write_scalars_csv<W: Write>(
    out: &mut W,
    header: &[(&str, serde_json::Value)],
    rows: &[(String, Option<f64>)],
) -> Result<()> {
    write_header(out, header)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["quantity", "value"])?;
    for (k, v) in rows {
        w.write_record([k.clone(), opt(*v)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Vector;
    use serde_json::json;

    #[test]
    fn float_text_round_trips() {
        for x in [0.0, 1.0, -2.5e-7, 1e-300, 123456.789, 3e20, f64::MIN_POSITIVE, 1.0 / 3.0] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(2.5e-7), "2.5e-7");
        assert_eq!(fmt_f64(0.5), "0.5");
    }

    #[test]
    fn header_round_trip() {
        let mut buf = Vec::new();
        let entries = [("config", json!({"eps": 0.1, "name": "a: b"})), ("seed", json!(7))];
        write_header(&mut buf, &entries).unwrap();
        buf.extend_from_slice(b"x,y\n1,2\n");
        let parsed = read_header(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].1, entries[0].1);
        assert_eq!(parsed[1], ("seed".to_string(), json!(7)));
    }

    #[test]
    fn trace_csv_round_trips_floats() {
        let trace = FlowTrace {
            eps: 0.1,
            times: vec![0.0, 0.1 + 0.2],
            states: vec![Vector::from_vec(vec![1.0, 1.0 / 3.0]), Vector::from_vec(vec![0.5, 2e-300])],
            residual_norms: vec![2.1, 2.1 * (-0.3f64).exp()],
            f0: 2.1,
            w0: Vector::from_vec(vec![1.0, 1.0 / 3.0]),
            w_inf: Vector::from_vec(vec![0.5, 2e-300]),
            horizon: 1.0,
            accepted_steps: 1,
            rejected_steps: 0,
            reached_target: true,
        };
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &[("config", json!({}))], &trace).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), ["t", "residual", "w_0", "w_1"]);
        let rows: Vec<Vec<f64>> = rdr
            .records()
            .map(|r| r.unwrap().iter().map(|c| c.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows[1], vec![0.1 + 0.2, 2.1 * (-0.3f64).exp(), 0.5, 2e-300]);
        assert_eq!(rows[0][3], 1.0 / 3.0);
    }
}
