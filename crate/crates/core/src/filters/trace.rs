use serde::{Deserialize, Serialize};

use super::FilterRun;
use crate::error::{Error, Result};
use crate::io::{csv_error, fmt_f64, json_error, parse_f64, Sig17, Sig17Scalar};

/// One row of a serialised step trace. UI estimates are aligned to `u_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub state: Vec<f64>,
    pub ui: Vec<f64>,
    /// `tr P̂_t`.
    pub cov_trace: f64,
    /// `tr P̂⁻_t`.
    pub prior_cov_trace: f64,
    /// `tr P̂ᵘᵘ`.
    pub ui_cov_trace: f64,
    /// Row-major posterior covariance, when full matrices are requested.
    pub cov: Option<Vec<f64>>,
    /// Row-major prior covariance, when full matrices are requested.
    pub prior_cov: Option<Vec<f64>>,
}

fn row_major(m: &crate::numerics::Matrix) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Builds trace rows from a filter run.
pub fn trace_rows(run: &FilterRun, full_matrices: bool) -> Vec<TraceRow> {
    let uis = run.ui_estimates();
    let delay = run.kind.ui_delay();
    let last = run.len().saturating_sub(1);
    run.outputs
        .iter()
        .enumerate()
        .map(|(t, o)| {
            let prior = run.prior_at(t);
            TraceRow {
                t,
                state: o.posterior.mean.as_slice().to_vec(),
                ui: uis[t].as_slice().to_vec(),
                cov_trace: o.posterior.cov.trace(),
                prior_cov_trace: prior.cov.trace(),
                ui_cov_trace: run.outputs[(t + delay).min(last)].ui_cov.trace(),
                cov: full_matrices.then(|| row_major(o.posterior.cov.matrix())),
                prior_cov: full_matrices.then(|| row_major(prior.cov.matrix())),
            }
        })
        .collect()
}

fn check_rows(rows: &[TraceRow]) -> Result<(usize, usize, bool)> {
    let first = rows
        .first()
        .ok_or_else(|| Error::InvalidArgument("trace has no rows".into()))?;
    let (n, d) = (first.state.len(), first.ui.len());
    let full = first.cov.is_some();
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument("trace dimensions must be positive".into()));
    }
    for (k, r) in rows.iter().enumerate() {
        let ok = r.t == k
            && r.state.len() == n
            && r.ui.len() == d
            && r.cov.as_ref().map(Vec::len) == full.then_some(n * n)
            && r.prior_cov.as_ref().map(Vec::len) == full.then_some(n * n);
        if !ok {
            return Err(Error::InvalidArgument(format!("trace row {k} is inconsistent")));
        }
        let scalars = [r.cov_trace, r.prior_cov_trace, r.ui_cov_trace];
        let all = r
            .state
            .iter()
            .chain(&r.ui)
            .chain(&scalars)
            .chain(r.cov.iter().flatten())
            .chain(r.prior_cov.iter().flatten());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("trace row {k}")));
        }
    }
    Ok((n, d, full))
}

fn header(n: usize, d: usize, full: bool) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n).map(|i| format!("xhat{i}")));
    h.extend((1..=d).map(|i| format!("uhat{i}")));
    h.extend(["tr_P", "tr_P_prior", "tr_P_uu"].map(String::from));
    if full {
        for prefix in ["P", "P_prior"] {
            for i in 1..=n {
                h.extend((1..=n).map(|j| format!("{prefix}_{i}_{j}")));
            }
        }
    }
    h
}

/// CSV with header `t, xhat…, uhat…, tr_P, tr_P_prior, tr_P_uu[, P_i_j…, P_prior_i_j…]`.
pub fn write_trace_csv(rows: &[TraceRow]) -> Result<String> {
    let (n, d, full) = check_rows(rows)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header(n, d, full)).map_err(|e| csv_error("trace csv", e))?;
    for r in rows {
        let mut rec = vec![r.t.to_string()];
        let scalars = [r.cov_trace, r.prior_cov_trace, r.ui_cov_trace];
        let vals = r
            .state
            .iter()
            .chain(&r.ui)
            .chain(&scalars)
            .chain(r.cov.iter().flatten())
            .chain(r.prior_cov.iter().flatten());
        rec.extend(vals.map(|v| fmt_f64(*v)));
        w.write_record(&rec).map_err(|e| csv_error("trace csv", e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_trace_csv(text: &str) -> Result<Vec<TraceRow>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let hdr = rd.headers().map_err(|e| csv_error("trace csv header", e))?.clone();
    let count = |prefix: &str| {
        hdr.iter()
            .filter(|h| h.strip_prefix(prefix).is_some_and(|s| s.parse::<usize>().is_ok()))
            .count()
    };
    let (n, d) = (count("xhat"), count("uhat"));
    let full = hdr.len() > 1 + n + d + 3;
    let expected = header(n, d, full);
    if hdr.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Parse {
            what: "trace csv header".into(),
            reason: "unexpected column layout".into(),
        });
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| csv_error("trace csv", e))?;
        if rec.len() != expected.len() {
            return Err(Error::Parse {
                what: "trace csv".into(),
                reason: format!("row has {} fields, expected {}", rec.len(), expected.len()),
            });
        }
        let t = rec[0].trim().parse::<usize>().map_err(|_| Error::Parse {
            what: "trace csv".into(),
            reason: format!("invalid time index `{}`", &rec[0]),
        })?;
        let v = rec
            .iter()
            .skip(1)
            .map(|s| parse_f64(s, "trace csv"))
            .collect::<Result<Vec<_>>>()?;
        let k = n + d;
        rows.push(TraceRow {
            t,
            state: v[..n].to_vec(),
            ui: v[n..k].to_vec(),
            cov_trace: v[k],
            prior_cov_trace: v[k + 1],
            ui_cov_trace: v[k + 2],
            cov: full.then(|| v[k + 3..k + 3 + n * n].to_vec()),
            prior_cov: full.then(|| v[k + 3 + n * n..].to_vec()),
        });
    }
    check_rows(&rows)?;
    Ok(rows)
}

#[derive(Serialize)]
struct JsonRowOut<'a> {
    t: usize,
    state: Sig17<'a>,
    ui: Sig17<'a>,
    cov_trace: Sig17Scalar,
    prior_cov_trace: Sig17Scalar,
    ui_cov_trace: Sig17Scalar,
    #[serde(skip_serializing_if = "Option::is_none")]
    cov: Option<Sig17<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prior_cov: Option<Sig17<'a>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRowIn {
    t: usize,
    state: Vec<f64>,
    ui: Vec<f64>,
    cov_trace: f64,
    prior_cov_trace: f64,
    ui_cov_trace: f64,
    #[serde(default)]
    cov: Option<Vec<f64>>,
    #[serde(default)]
    prior_cov: Option<Vec<f64>>,
}

pub fn write_trace_json(rows: &[TraceRow]) -> Result<String> {
    check_rows(rows)?;
    let out: Vec<JsonRowOut<'_>> = rows
        .iter()
        .map(|r| JsonRowOut {
            t: r.t,
            state: Sig17(&r.state),
            ui: Sig17(&r.ui),
            cov_trace: Sig17Scalar(r.cov_trace),
            prior_cov_trace: Sig17Scalar(r.prior_cov_trace),
            ui_cov_trace: Sig17Scalar(r.ui_cov_trace),
            cov: r.cov.as_deref().map(Sig17),
            prior_cov: r.prior_cov.as_deref().map(Sig17),
        })
        .collect();
    serde_json::to_string(&out).map_err(|e| json_error("trace json", e))
}

pub fn read_trace_json(text: &str) -> Result<Vec<TraceRow>> {
    let raw: Vec<JsonRowIn> = serde_json::from_str(text).map_err(|e| json_error("trace json", e))?;
    let rows: Vec<TraceRow> = raw
        .into_iter()
        .map(|r| TraceRow {
            t: r.t,
            state: r.state,
            ui: r.ui,
            cov_trace: r.cov_trace,
            prior_cov_trace: r.prior_cov_trace,
            ui_cov_trace: r.ui_cov_trace,
            cov: r.cov,
            prior_cov: r.prior_cov,
        })
        .collect();
    check_rows(&rows)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(full: bool) -> Vec<TraceRow> {
        (0..3)
            .map(|t| TraceRow {
                t,
                state: vec![0.1 * t as f64, -1.0 / 3.0],
                ui: vec![10.0],
                cov_trace: 0.5,
                prior_cov_trace: 0.7,
                ui_cov_trace: 35.0,
                cov: full.then(|| vec![0.25, 0.0, 0.0, 0.25]),
                prior_cov: full.then(|| vec![0.35, 0.01, 0.01, 0.35]),
            })
            .collect()
    }

    #[test]
    fn csv_round_trip() {
        for full in [false, true] {
            let r = rows(full);
            let text = write_trace_csv(&r).unwrap();
            assert_eq!(read_trace_csv(&text).unwrap(), r);
        }
    }

    #[test]
    fn json_round_trip() {
        for full in [false, true] {
            let r = rows(full);
            let text = write_trace_json(&r).unwrap();
            assert_eq!(read_trace_json(&text).unwrap(), r);
        }
    }

    #[test]
    fn malformed_traces_rejected() {
        assert!(read_trace_csv("t,xhat1\n0,1\n").is_err());
        assert!(read_trace_json("[]").is_err());
        let mut r = rows(false);
        r[1].t = 5;
        assert!(write_trace_csv(&r).is_err());
    }
}
