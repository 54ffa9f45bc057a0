//! Cost-report and point-trace tables with their CSV wire format.
//!
//! Numbers are written with 12 significant digits and a dot decimal
//! separator; rows are newline-terminated. Parsing is strict: the exact
//! header, exactly the declared columns, no quoting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Header of the cost-report CSV.
pub const COST_HEADER: &str = "function,strategy,alpha,replicate,iteration,n,ce,cm";

/// One cost measurement: a strategy row (per replicate and iteration) or a
/// constant-baseline row (`replicate = iteration = n = 0`, no alpha).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub function: String,
    pub strategy: String,
    pub alpha: Option<f64>,
    pub replicate: u32,
    pub iteration: u32,
    pub n: u32,
    pub ce: f64,
    pub cm: f64,
}

/// Reproducibility metadata attached to a report (never part of the CSV, so
/// identical configs yield byte-identical CSVs regardless of wall clock).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub function: String,
    pub seed: u64,
    pub replicates: usize,
    pub iterations: usize,
    pub wall_clock_secs: f64,
    pub version: String,
    /// Diagnostics for replicates that aborted; the others still report.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
}

/// The full experiment result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    pub metadata: RunMetadata,
}

impl CostReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(COST_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.to_csv_line());
            out.push('\n');
        }
        out
    }

    /// Parses a cost-report CSV produced by [`CostReport::to_csv`].
    pub fn parse_csv(text: &str) -> Result<Vec<CostRow>> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == COST_HEADER => {}
            other => {
                return Err(Error::Config(format!(
                    "bad csv header: {:?}",
                    other.unwrap_or("")
                )))
            }
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            rows.push(CostRow::from_csv_line(line).map_err(|e| {
                Error::Config(format!("csv row {}: {e}", i + 2))
            })?);
        }
        Ok(rows)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl CostRow {
    fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.function,
            self.strategy,
            self.alpha.map(|a| fmt_g(a, 12)).unwrap_or_default(),
            self.replicate,
            self.iteration,
            self.n,
            fmt_g(self.ce, 12),
            fmt_g(self.cm, 12),
        )
    }

    fn from_csv_line(line: &str) -> std::result::Result<Self, String> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(format!("expected 8 fields, got {}", fields.len()));
        }
        let name_ok = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_graphic());
        if !name_ok(fields[0]) || !name_ok(fields[1]) {
            return Err("bad function/strategy field".into());
        }
        let alpha = if fields[2].is_empty() {
            None
        } else {
            Some(parse_f64(fields[2])?)
        };
        Ok(CostRow {
            function: fields[0].to_string(),
            strategy: fields[1].to_string(),
            alpha,
            replicate: parse_u32(fields[3])?,
            iteration: parse_u32(fields[4])?,
            n: parse_u32(fields[5])?,
            ce: parse_f64(fields[6])?,
            cm: parse_f64(fields[7])?,
        })
    }
}

fn parse_u32(s: &str) -> std::result::Result<u32, String> {
    s.parse::<u32>().map_err(|e| format!("bad integer {s:?}: {e}"))
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("bad number {s:?}: {e}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite number {s:?}"))
    }
}

/// One added run of a sequential strategy, for profile-trace plots.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: u32,
    pub s: Vec<f64>,
    pub t: Vec<f64>,
    pub lcb: f64,
    pub sd: f64,
}

/// Header of a point-trace CSV: `iteration,s1..sp,t1..tq,L,phi`.
pub fn trace_header(p: usize, q: usize) -> String {
    let mut h = String::from("iteration");
    for i in 1..=p {
        h.push_str(&format!(",s{i}"));
    }
    for i in 1..=q {
        h.push_str(&format!(",t{i}"));
    }
    h.push_str(",L,phi");
    h
}

pub fn trace_to_csv(rows: &[TraceRow], p: usize, q: usize) -> String {
    let mut out = trace_header(p, q);
    out.push('\n');
    for r in rows {
        out.push_str(&r.iteration.to_string());
        for v in r.s.iter().chain(&r.t) {
            out.push(',');
            out.push_str(&fmt_g(*v, 12));
        }
        out.push(',');
        out.push_str(&fmt_g(r.lcb, 12));
        out.push(',');
        out.push_str(&fmt_g(r.sd, 12));
        out.push('\n');
    }
    out
}

/// Formats `x` with `sig` significant digits in the shortest of fixed or
/// scientific notation (printf `%g` semantics, dot decimal).
pub fn fmt_g(x: f64, sig: usize) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".to_string()
        } else if x > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        };
    }
    let sig = sig.max(1);
    let sci = format!("{:.*e}", sig - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if exp < -4 || exp >= sig as i32 {
        format!("{}e{}", trim_zeros(mantissa), exp)
    } else {
        let prec = (sig as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.prec$}"))
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}
