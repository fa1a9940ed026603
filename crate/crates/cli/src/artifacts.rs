//! Deterministic CSV/JSON writers. Floats always carry 17 significant digits.

use pseudomode::pipeline::{AuditOutcome, PhaseRow, PointOutcome, Summary};
use pseudomode::synth::FieldSlice;
use serde::Serialize;
use serde_json::Value;
use std::io;
use std::path::Path;

pub const REPORT_COLUMNS: [&str; 13] = [
    "lambda",
    "norm_u_minusN",
    "norm_Pu_nu",
    "norm_u_minusNn",
    "norm_Au0",
    "ratio",
    "residual_expansion",
    "residual_direct",
    "min_im_w0",
    "t0_anchor",
    "usable_lo",
    "usable_hi",
    "wall_ms",
];

pub fn fmt17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Pretty JSON with every float rendered by [`fmt17`]; non-finite floats become null.
pub fn json17(v: &Value) -> String {
    let mut out = String::new();
    write_value(v, 0, &mut out);
    out.push('\n');
    out
}

fn write_value(v: &Value, depth: usize, out: &mut String) {
    let pad = |d: usize, out: &mut String| out.extend(std::iter::repeat("  ").take(d));
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                let f = n.as_f64().unwrap();
                out.push_str(&if f.is_finite() { fmt17(f) } else { "null".into() });
            } else {
                out.push_str(&n.to_string());
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(a) if a.is_empty() => out.push_str("[]"),
        Value::Array(a) => {
            out.push_str("[\n");
            for (i, e) in a.iter().enumerate() {
                pad(depth + 1, out);
                write_value(e, depth + 1, out);
                out.push_str(if i + 1 < a.len() { ",\n" } else { "\n" });
            }
            pad(depth, out);
            out.push(']');
        }
        Value::Object(m) if m.is_empty() => out.push_str("{}"),
        Value::Object(m) => {
            out.push_str("{\n");
            for (i, (k, e)) in m.iter().enumerate() {
                pad(depth + 1, out);
                out.push_str(&Value::String(k.clone()).to_string());
                out.push_str(": ");
                write_value(e, depth + 1, out);
                out.push_str(if i + 1 < m.len() { ",\n" } else { "\n" });
            }
            pad(depth, out);
            out.push('}');
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> io::Result<()> {
    let val = serde_json::to_value(v).map_err(io::Error::other)?;
    std::fs::write(path, json17(&val))
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

pub fn report_csv(points: &[(f64, PointOutcome)]) -> io::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_COLUMNS).map_err(csv_err)?;
    for (_, p) in points {
        let r = &p.report;
        let mut row: Vec<String> = [
            r.lambda,
            r.norms.u_minus_n,
            r.norms.pu_nu,
            r.norms.u_minus_n_minus_n,
            r.norms.au_zero,
            r.ratio,
            r.residual_expansion,
            r.residual_direct,
            r.min_im_w0,
            r.t0_anchor,
            r.usable.0,
            r.usable.1,
        ]
        .iter()
        .map(|&v| fmt17(v))
        .collect();
        row.push(r.wall_ms.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| io::Error::other(e.to_string()))
}

fn indexed(prefix: &str, n: usize) -> Vec<String> {
    if n == 1 {
        vec![prefix.to_string()]
    } else {
        (1..=n).map(|i| format!("{prefix}_{i}")).collect()
    }
}

/// `fiber` is "zeta0" when η₀ ≠ 0 and "eta0" otherwise.
pub fn phase_csv(rows: &[PhaseRow], fiber: &str) -> io::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let (nx, ny) = rows.first().map(|r| (r.x0.len(), r.y0.len())).unwrap_or((1, 1));
    let mut head = vec!["t".to_string(), "re_w0".into(), "im_w0".into()];
    head.extend(indexed("x0", nx));
    head.extend(indexed("xi0", nx));
    head.extend(indexed("y0", ny));
    head.extend(indexed(fiber, ny));
    head.push("eigmin_im_w20".into());
    head.push("eigmin_im_w02".into());
    w.write_record(&head).map_err(csv_err)?;
    for r in rows {
        let mut vals = vec![r.t, r.w0_re, r.w0_im];
        vals.extend(&r.x0);
        vals.extend(&r.xi0);
        vals.extend(&r.y0);
        vals.extend(&r.zeta);
        vals.push(r.eigmin_im_w20);
        vals.push(r.eigmin_im_w02);
        w.write_record(vals.iter().map(|&v| fmt17(v))).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| io::Error::other(e.to_string()))
}

/// |u| on the (t, x) plane through the anchor centre; one row per grid point.
pub fn field_csv(s: &FieldSlice) -> io::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head = vec!["t".to_string(), "x".into()];
    head.extend(indexed("y", s.y.len()));
    head.push("abs_u".into());
    w.write_record(&head).map_err(csv_err)?;
    let nx = s.x.len();
    for (k, a) in s.abs.iter().enumerate() {
        let mut vals = vec![s.t[k / nx], s.x[k % nx]];
        vals.extend(&s.y);
        vals.push(*a);
        w.write_record(vals.iter().map(|&v| fmt17(v))).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| io::Error::other(e.to_string()))
}

/// File-name tag for a λ value: integers print bare, others with 17 digits.
pub fn lambda_tag(l: f64) -> String {
    if l.fract() == 0.0 && l.abs() < 1e15 {
        format!("{}", l as i64)
    } else {
        fmt17(l)
    }
}

pub fn write_audit(dir: &Path, a: &AuditOutcome) -> io::Result<()> {
    write_json(&dir.join("audit.json"), a)
}

pub fn write_summary(dir: &Path, s: &Summary) -> io::Result<()> {
    write_json(&dir.join("summary.json"), s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, 6.02214076e23, -2.5e-300, 1.0] {
            let s = fmt17(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
            let mant = s.split('e').next().unwrap().replace(['-', '.'], "");
            assert_eq!(mant.len(), 17);
        }
    }

    #[test]
    fn json_floats_and_ints() {
        let v = serde_json::json!({"a": 0.5, "b": 3, "c": [f64::NAN], "d": "x\"y"});
        let s = json17(&v);
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["a"].as_f64(), Some(0.5));
        assert_eq!(back["b"].as_i64(), Some(3));
        assert!(back["c"][0].is_null());
        assert_eq!(back["d"], "x\"y");
        assert!(s.contains("5.0000000000000000e-1"));
    }
}
