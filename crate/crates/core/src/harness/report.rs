use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::artifacts::{self, ArtifactDir};
use super::config::ExperimentConfig;
use super::pipeline::Experiment;
use crate::analysis::{mean_std, MeanStd, TuneReport};
use crate::error::{Error, Result};
use crate::filters::FilterKind;
use crate::io::{csv_error, fmt_f64};
use crate::models::Trajectory;
use crate::numerics::Vector;

/// UI NMSE above which an estimator is reported as not converged ("NC").
pub const NOT_CONVERGED_NMSE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UiStatus {
    Converged,
    NotConverged,
    /// The filter does not estimate the UI.
    NotEstimated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub filter: FilterKind,
    pub nmse_x: MeanStd,
    pub nmse_u: MeanStd,
    pub snr_x_db: MeanStd,
    pub snr_u_db: MeanStd,
    pub ui_status: UiStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    /// In config order.
    pub rows: Vec<TableRow>,
}

impl Report {
    pub fn row(&self, kind: FilterKind) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.filter == kind)
    }

    /// Filter with the lowest mean state NMSE.
    pub fn best_state(&self) -> FilterKind {
        self.rows
            .iter()
            .min_by(|a, b| a.nmse_x.mean.total_cmp(&b.nmse_x.mean))
            .expect("report has rows")
            .filter
    }

    /// UI-estimating filter with the lowest mean UI NMSE.
    pub fn best_ui(&self) -> Option<FilterKind> {
        self.rows
            .iter()
            .filter(|r| r.ui_status != UiStatus::NotEstimated)
            .min_by(|a, b| a.nmse_u.mean.total_cmp(&b.nmse_u.mean))
            .map(|r| r.filter)
    }
}

fn parse_metric(s: &str) -> Result<f64> {
    match s.trim().parse::<f64>() {
        Ok(v) if !v.is_nan() => Ok(v),
        _ => Err(Error::Parse {
            what: artifacts::RUN_METRICS.into(),
            reason: format!("`{s}` is not a metric value"),
        }),
    }
}

type Columns = [Vec<f64>; 4];

fn read_run_metrics(dir: &ArtifactDir, filters: &[FilterKind]) -> Result<HashMap<FilterKind, Columns>> {
    let text = dir.read(artifacts::RUN_METRICS)?;
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let mut out: HashMap<FilterKind, Columns> = HashMap::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| csv_error(artifacts::RUN_METRICS, e))?;
        if rec.len() != 6 {
            return Err(Error::Parse {
                what: artifacts::RUN_METRICS.into(),
                reason: format!("expected 6 fields, found {}", rec.len()),
            });
        }
        let kind: FilterKind = rec[1].parse()?;
        let cols = out.entry(kind).or_default();
        for (c, field) in cols.iter_mut().zip(rec.iter().skip(2)) {
            c.push(parse_metric(field)?);
        }
    }
    if let Some(k) = filters.iter().find(|k| !out.contains_key(k)) {
        return Err(Error::Parse {
            what: artifacts::RUN_METRICS.into(),
            reason: format!("no rows for {k}"),
        });
    }
    Ok(out)
}

/// Post-transient `Σ‖v − v̄‖² / N`, averaged over runs.
fn signal_variance(signals: &[Vec<Vector>], transient: usize) -> f64 {
    let per_run = signals.iter().map(|s| {
        let post = &s[transient..];
        let mean = post.iter().fold(Vector::zeros(post[0].len()), |a, v| a + v) / post.len() as f64;
        post.iter().map(|v| (v - &mean).norm_squared()).sum::<f64>() / post.len() as f64
    });
    per_run.sum::<f64>() / signals.len() as f64
}

fn format_cell(m: &MeanStd) -> String {
    if m.mean.is_infinite() {
        return "inf".into();
    }
    format!("{:.3} ± {:.3}", m.mean, m.std)
}

fn markdown(cfg: &ExperimentConfig, report: &Report, tune: Option<&TuneReport>) -> String {
    let best_x = report.best_state();
    let best_u = report.best_ui();
    let mut md = String::new();
    let _ = writeln!(md, "# Monte-Carlo summary\n");
    let _ = writeln!(
        md,
        "{} runs of {} steps, seed {}; metrics exclude the first {} steps.\n",
        cfg.runs, cfg.steps, cfg.seed, cfg.metrics.transient
    );
    let _ = writeln!(md, "| Filter | State NMSE | UI NMSE | State SNR (dB) | UI SNR (dB) |");
    let _ = writeln!(md, "|---|---|---|---|---|");
    for r in &report.rows {
        let bold = |s: String, on: bool| if on { format!("**{s}**") } else { s };
        let nmse_u = match r.ui_status {
            UiStatus::NotEstimated => "n/a".to_string(),
            UiStatus::NotConverged => format!("NC ({})", format_cell(&r.nmse_u)),
            UiStatus::Converged => bold(format_cell(&r.nmse_u), Some(r.filter) == best_u),
        };
        let snr_u = match r.ui_status {
            UiStatus::NotEstimated => "n/a".to_string(),
            _ => format_cell(&r.snr_u_db),
        };
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} |",
            r.filter,
            bold(format_cell(&r.nmse_x), r.filter == best_x),
            nmse_u,
            format_cell(&r.snr_x_db),
            snr_u
        );
    }
    let _ = writeln!(md, "\nNC: UI NMSE above {NOT_CONVERGED_NMSE}.");
    if let Some(t) = tune {
        let _ = writeln!(
            md,
            "\nError bound: smallest E covering {:.0}% of post-transient steps is {}·I.",
            t.coverage_required * 100.0,
            t.chosen
        );
        for (e, c) in &t.candidates {
            let _ = writeln!(md, "- E = {e}·I: coverage {:.4}", c);
        }
    }
    md
}

/// Builds the summary table and normalized error curves from the
/// artifacts of `estimate` (and `bound`, if present).
pub fn run_report(config: &ExperimentConfig, out: &Path) -> Result<Report> {
    let exp = Experiment::new(config.clone())?;
    let dir = ArtifactDir::new(out, config);
    let filters: Vec<FilterKind> = exp.specs().iter().map(|s| s.kind).collect();
    let cols = read_run_metrics(&dir, &filters)?;

    let rows: Vec<TableRow> = filters
        .iter()
        .map(|k| {
            let c = &cols[k];
            let nmse_u = mean_std(&c[1]);
            let ui_status = if !k.estimates_ui() {
                UiStatus::NotEstimated
            } else if nmse_u.mean > NOT_CONVERGED_NMSE {
                UiStatus::NotConverged
            } else {
                UiStatus::Converged
            };
            TableRow {
                filter: *k,
                nmse_x: mean_std(&c[0]),
                nmse_u,
                snr_x_db: mean_std(&c[2]),
                snr_u_db: mean_std(&c[3]),
                ui_status,
            }
        })
        .collect();
    let report = Report { rows };

    let header: Vec<String> = [
        "filter",
        "nmse_x_mean",
        "nmse_x_std",
        "nmse_u_mean",
        "nmse_u_std",
        "snr_x_db_mean",
        "snr_x_db_std",
        "snr_u_db_mean",
        "snr_u_db_std",
        "ui_status",
    ]
    .map(String::from)
    .to_vec();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(|e| csv_error(artifacts::TABLE_CSV, e))?;
    for r in &report.rows {
        let status = serde_json::to_value(r.ui_status).expect("status serialises");
        let mut rec = vec![r.filter.name().to_string()];
        for m in [&r.nmse_x, &r.nmse_u, &r.snr_x_db, &r.snr_u_db] {
            rec.push(fmt_f64(m.mean));
            rec.push(fmt_f64(m.std));
        }
        rec.push(status.as_str().expect("unit variant").to_string());
        w.write_record(&rec).map_err(|e| csv_error(artifacts::TABLE_CSV, e))?;
    }
    let table = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    dir.write(artifacts::TABLE_CSV, &table)?;

    let tune: Option<TuneReport> = match dir.read(artifacts::TUNE_REPORT) {
        Ok(text) => serde_json::from_str(&text).ok(),
        Err(Error::MissingArtifact { .. }) => None,
        Err(e) => return Err(e),
    };
    dir.write(artifacts::TABLE_MD, markdown(config, &report, tune.as_ref()).as_bytes())?;

    let trajectories = (0..config.runs)
        .map(|run| Trajectory::from_csv(&dir.read(&artifacts::trajectory_file(run))?))
        .collect::<Result<Vec<_>>>()?;
    let var_x = signal_variance(
        &trajectories.iter().map(Trajectory::states).collect::<Vec<_>>(),
        config.metrics.transient,
    );
    let var_u = signal_variance(
        &trajectories.iter().map(Trajectory::inputs).collect::<Vec<_>>(),
        config.metrics.transient,
    );
    let curves = dir.read(artifacts::ERROR_CURVES)?;
    let mut rd = csv::Reader::from_reader(curves.as_bytes());
    let hdr = rd.headers().map_err(|e| csv_error(artifacts::ERROR_CURVES, e))?.clone();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&hdr).map_err(|e| csv_error(artifacts::NMSE_CURVES, e))?;
    for rec in rd.records() {
        let rec = rec.map_err(|e| csv_error(artifacts::ERROR_CURVES, e))?;
        let mut out = vec![rec[0].to_string()];
        for (i, field) in rec.iter().enumerate().skip(1) {
            let v = crate::io::parse_f64(field, artifacts::ERROR_CURVES)?;
            let var = if i % 2 == 1 { var_x } else { var_u };
            out.push(fmt_f64(v / var));
        }
        w.write_record(&out).map_err(|e| csv_error(artifacts::NMSE_CURVES, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    dir.write(artifacts::NMSE_CURVES, &bytes)?;
    dir.write_manifest()?;
    Ok(report)
}
