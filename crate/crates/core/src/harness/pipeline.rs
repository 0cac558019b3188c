use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::artifacts::{self, ArtifactDir, CONFIG_FILE};
use super::config::{ExperimentConfig, InputConfig, UiModelConfig};
use crate::analysis::{
    bound_coverage, bound_for_run, crlb_trace, metrics, tune_e, BoundSettings, EstimateMetrics, TuneReport,
};
use crate::error::{Error, Result};
use crate::filters::{run_filter, trace_rows, write_trace_csv, FilterKind, FilterRun, FilterSpec, GaussianBelief};
use crate::io::{csv_error, fmt_f64, json_error};
use crate::models::{
    quasi_static_residual, simulate, JacobianMode, RigidLink, SquareWave, Trajectory, UiEstimator,
};
use crate::numerics::{split_seed, PsdMatrix, SeededRng, SpdMatrix, Vector};

/// A validated experiment with its model, UI estimator and filters built.
pub struct Experiment {
    config: ExperimentConfig,
    model: RigidLink,
    ui: UiEstimator,
    wave: SquareWave,
    specs: Vec<FilterSpec>,
    init: GaussianBelief,
    q_true: SpdMatrix,
    r_true: SpdMatrix,
    x0: Vector,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let params = config.rigid_link();
        let UiModelConfig::QuasiStatic(opts) = config.ui_model;
        let InputConfig::SquareWave(wave) = config.input;
        let specs = config
            .filters
            .iter()
            .map(|f| config.filter_spec(f))
            .collect::<Result<Vec<_>>>()?;
        let n = config.x0_true.len();
        Ok(Experiment {
            model: RigidLink::new(params)?,
            ui: quasi_static_residual(params, opts),
            wave,
            specs,
            init: config.init_belief()?,
            q_true: super::config::spd(&config.q_true, n, "q_true")?,
            r_true: super::config::spd(&config.r_true, config.r_true.dim(), "r_true")?,
            x0: Vector::from_column_slice(&config.x0_true),
            config,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn model(&self) -> &RigidLink {
        &self.model
    }

    pub fn ui_estimator(&self) -> &UiEstimator {
        &self.ui
    }

    pub fn specs(&self) -> &[FilterSpec] {
        &self.specs
    }

    pub fn init(&self) -> &GaussianBelief {
        &self.init
    }

    /// Simulates run `run` from the seed `split(seed, run)`.
    pub fn simulate_run(&self, run: usize) -> Result<Trajectory> {
        let mut rng = SeededRng::new(split_seed(self.config.seed, run as u64));
        simulate(
            &self.model,
            &|t| self.wave.at(t),
            &self.q_true,
            &self.r_true,
            &self.x0,
            self.config.steps,
            &mut rng,
        )
    }

    pub fn run(&self, spec: &FilterSpec, trajectory: &Trajectory) -> Result<FilterRun> {
        run_filter(spec, &self.model, Some(&self.ui), trajectory, &self.init)
    }
}

/// Runs `f` for every run index on a pool of `jobs` threads (0 = all cores)
/// and returns the results in run order.
fn par_runs<T, F>(runs: usize, jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let results: Vec<Result<T>> =
        pool.install(|| (0..runs).into_par_iter().map(|i| f(i).map_err(|e| e.at_run(i))).collect());
    results.into_iter().collect()
}

fn load_trajectory(dir: &ArtifactDir, run: usize) -> Result<Trajectory> {
    Trajectory::from_csv(&dir.read(&artifacts::trajectory_file(run))?)
}

fn write_config(dir: &ArtifactDir, config: &ExperimentConfig) -> Result<()> {
    let mut text = config.to_json()?;
    text.push('\n');
    dir.write(CONFIG_FILE, text.as_bytes())
}

/// Simulates every Monte-Carlo run and stores the trajectories.
pub fn run_simulate(config: &ExperimentConfig, out: &Path, jobs: usize) -> Result<ArtifactDir> {
    let exp = Experiment::new(config.clone())?;
    let dir = ArtifactDir::new(out, config);
    let csvs = par_runs(config.runs, jobs, |run| exp.simulate_run(run)?.to_csv())?;
    write_config(&dir, config)?;
    for (run, csv) in csvs.iter().enumerate() {
        dir.write(&artifacts::trajectory_file(run), csv.as_bytes())?;
    }
    dir.write_manifest()?;
    Ok(dir)
}

/// Solver and numerical bookkeeping summed over runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterDiagnostics {
    pub ui_solves: usize,
    pub solver_warnings: usize,
    pub jitter_repairs: usize,
    pub singular_steps: usize,
}

/// In-memory result of [`run_estimate`].
#[derive(Debug, Clone)]
pub struct EstimateSummary {
    pub dir: ArtifactDir,
    pub filters: Vec<FilterKind>,
    /// `metrics[run][filter]`.
    pub metrics: Vec<Vec<EstimateMetrics>>,
    pub diagnostics: Vec<FilterDiagnostics>,
    /// Per filter, the per-step squared state error averaged over runs.
    pub state_curves: Vec<Vec<f64>>,
    /// Per filter, the per-step squared UI error averaged over runs.
    pub ui_curves: Vec<Vec<f64>>,
}

struct RunEstimate {
    metrics: Vec<EstimateMetrics>,
    diagnostics: Vec<FilterDiagnostics>,
    err_x: Vec<Vec<f64>>,
    err_u: Vec<Vec<f64>>,
    traces: Vec<String>,
}

fn squared_errors(est: &[Vector], truth: &[Vector]) -> Vec<f64> {
    est.iter().zip(truth).map(|(e, v)| (e - v).norm_squared()).collect()
}

fn estimate_one(exp: &Experiment, dir: &ArtifactDir, run: usize) -> Result<RunEstimate> {
    let cfg = exp.config();
    let traj = load_trajectory(dir, run)?;
    if traj.len() != cfg.steps || traj.state_dim() != exp.init.dim() {
        return Err(Error::Parse {
            what: artifacts::trajectory_file(run),
            reason: "trajectory does not match the config".into(),
        });
    }
    let (states, inputs) = (traj.states(), traj.inputs());
    let mut out = RunEstimate {
        metrics: Vec::new(),
        diagnostics: Vec::new(),
        err_x: Vec::new(),
        err_u: Vec::new(),
        traces: Vec::new(),
    };
    for spec in exp.specs() {
        let fr = exp.run(spec, &traj)?;
        out.metrics.push(metrics(&fr, &traj, cfg.metrics.transient)?);
        let d = fr.diagnostics();
        out.diagnostics.push(FilterDiagnostics {
            ui_solves: d.ui_solves,
            solver_warnings: d.solver_warnings,
            jitter_repairs: d.jitter_repairs,
            singular_steps: fr.outputs.iter().filter(|o| o.diagnostics.singular_least_squares).count(),
        });
        out.err_x.push(squared_errors(&fr.state_estimates(), &states));
        out.err_u.push(squared_errors(&fr.ui_estimates(), &inputs));
        if run < cfg.artifacts.trace_runs {
            out.traces.push(write_trace_csv(&trace_rows(&fr, cfg.artifacts.full_matrices))?);
        }
    }
    Ok(out)
}

fn mean_curves(per_run: &[&Vec<Vec<f64>>], filters: usize, steps: usize) -> Vec<Vec<f64>> {
    let runs = per_run.len() as f64;
    (0..filters)
        .map(|k| {
            let mut acc = vec![0.0; steps];
            for run in per_run {
                for (a, v) in acc.iter_mut().zip(&run[k]) {
                    *a += v;
                }
            }
            acc.into_iter().map(|a| a / runs).collect()
        })
        .collect()
}

fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>, what: &str) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| csv_error(what, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_error(what, e))?;
    }
    w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Runs every configured filter over the stored trajectories.
pub fn run_estimate(config: &ExperimentConfig, out: &Path, jobs: usize) -> Result<EstimateSummary> {
    let exp = Experiment::new(config.clone())?;
    let dir = ArtifactDir::new(out, config);
    let per_run = par_runs(config.runs, jobs, |run| estimate_one(&exp, &dir, run))?;
    let filters: Vec<FilterKind> = exp.specs().iter().map(|s| s.kind).collect();

    for (run, r) in per_run.iter().enumerate() {
        for (kind, trace) in filters.iter().zip(&r.traces) {
            dir.write(&artifacts::trace_file(kind.name(), run), trace.as_bytes())?;
        }
    }

    let header: Vec<String> = ["run", "filter", "nmse_x", "nmse_u", "snr_x_db", "snr_u_db"]
        .map(String::from)
        .to_vec();
    let rows = per_run.iter().enumerate().flat_map(|(run, r)| {
        filters.iter().zip(&r.metrics).map(move |(k, m)| {
            vec![
                run.to_string(),
                k.name().to_string(),
                fmt_f64(m.nmse_x),
                fmt_f64(m.nmse_u),
                fmt_f64(m.snr_x_db),
                fmt_f64(m.snr_u_db),
            ]
        })
    });
    dir.write(artifacts::RUN_METRICS, &csv_bytes(&header, rows, "run metrics")?)?;

    let mut diagnostics = vec![FilterDiagnostics::default(); filters.len()];
    for r in &per_run {
        for (acc, d) in diagnostics.iter_mut().zip(&r.diagnostics) {
            acc.ui_solves += d.ui_solves;
            acc.solver_warnings += d.solver_warnings;
            acc.jitter_repairs += d.jitter_repairs;
            acc.singular_steps += d.singular_steps;
        }
    }
    let header: Vec<String> = ["filter", "ui_solves", "solver_warnings", "jitter_repairs", "singular_steps"]
        .map(String::from)
        .to_vec();
    let rows = filters.iter().zip(&diagnostics).map(|(k, d)| {
        vec![
            k.name().to_string(),
            d.ui_solves.to_string(),
            d.solver_warnings.to_string(),
            d.jitter_repairs.to_string(),
            d.singular_steps.to_string(),
        ]
    });
    dir.write(artifacts::DIAGNOSTICS, &csv_bytes(&header, rows, "diagnostics")?)?;

    let xs: Vec<_> = per_run.iter().map(|r| &r.err_x).collect();
    let us: Vec<_> = per_run.iter().map(|r| &r.err_u).collect();
    let state_curves = mean_curves(&xs, filters.len(), config.steps);
    let ui_curves = mean_curves(&us, filters.len(), config.steps);
    let mut header = vec!["t".to_string()];
    for k in &filters {
        header.push(format!("{}:x", k.name()));
        header.push(format!("{}:u", k.name()));
    }
    let rows = (0..config.steps).map(|t| {
        let mut row = vec![t.to_string()];
        for k in 0..filters.len() {
            row.push(fmt_f64(state_curves[k][t]));
            row.push(fmt_f64(ui_curves[k][t]));
        }
        row
    });
    dir.write(artifacts::ERROR_CURVES, &csv_bytes(&header, rows, "error curves")?)?;
    dir.write_manifest()?;

    Ok(EstimateSummary {
        dir,
        filters,
        metrics: per_run.into_iter().map(|r| r.metrics).collect(),
        diagnostics,
        state_curves,
        ui_curves,
    })
}

/// Bound and empirical error for one candidate `E = e·I`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundCandidate {
    pub e: f64,
    /// `B_t` averaged over runs.
    pub bound: Vec<f64>,
    /// Monte-Carlo mean of `‖x̂_t − x_t‖²`.
    pub empirical: Vec<f64>,
    pub coverage: f64,
}

#[derive(Debug, Clone)]
pub struct BoundSummary {
    pub dir: ArtifactDir,
    pub candidates: Vec<BoundCandidate>,
    /// Monte-Carlo mean of `tr(J_t⁻¹)`.
    pub crlb: Vec<f64>,
    /// `Err(NoFeasibleE)` when no candidate reaches the required coverage.
    pub tune: std::result::Result<TuneReport, String>,
}

/// Traces the error bound over the `E` grid and tunes `E`.
pub fn run_bound(config: &ExperimentConfig, out: &Path, jobs: usize) -> Result<BoundSummary> {
    let exp = Experiment::new(config.clone())?;
    let dir = ArtifactDir::new(out, config);
    let b = config.bound.as_ref().ok_or_else(|| Error::ConfigInvalid {
        path: "bound".into(),
        reason: "the bound subcommand needs a `bound` section".into(),
    })?;
    let spec = exp
        .specs()
        .iter()
        .find(|s| s.kind == b.filter)
        .expect("validated bound filter")
        .clone();
    let init_err = (&exp.x0 - &exp.init.mean).norm_squared();
    let settings = BoundSettings {
        delta_w: b.delta_w,
        delta_v: b.delta_v,
        delta_eps: b.delta_eps,
        initial_error: b.initial_error.unwrap_or(init_err),
    };
    let trajectories = par_runs(config.runs, jobs, |run| load_trajectory(&dir, run))?;
    let transient = config.metrics.transient;

    let mut grid = b.e_grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut candidates = Vec::with_capacity(grid.len());
    for &e in &grid {
        let mut spec = spec.clone();
        spec.params.e = Some(PsdMatrix::scaled_identity(exp.ui.input_dim(), e)?.into());
        let per_run = par_runs(config.runs, jobs, |run| {
            let traj = &trajectories[run];
            let fr = exp.run(&spec, traj)?;
            let trace = bound_for_run(&fr, exp.model(), exp.ui_estimator(), &spec.params, &settings)?;
            Ok((trace.bound, squared_errors(&fr.state_estimates(), &traj.states())))
        })?;
        let runs = per_run.len() as f64;
        let mut bound = vec![0.0; config.steps];
        let mut empirical = vec![0.0; config.steps];
        for (bt, et) in &per_run {
            for t in 0..config.steps {
                bound[t] += bt[t] / runs;
                empirical[t] += et[t] / runs;
            }
        }
        let coverage = bound_coverage(&bound, &empirical, transient)?;
        candidates.push(BoundCandidate {
            e,
            bound,
            empirical,
            coverage,
        });
    }

    let crlbs = par_runs(config.runs, jobs, |run| {
        let traces = crlb_trace(
            exp.model(),
            &trajectories[run],
            &exp.q_true,
            &exp.r_true,
            &exp.init.cov,
            JacobianMode::Auto,
        )?;
        Ok(traces.iter().map(|m| m.trace()).collect::<Vec<f64>>())
    })?;
    let mut crlb = vec![0.0; config.steps];
    for c in &crlbs {
        for (a, v) in crlb.iter_mut().zip(c) {
            *a += v / crlbs.len() as f64;
        }
    }

    let mut header = vec!["t".to_string(), "crlb_trace".to_string()];
    for c in &candidates {
        header.push(format!("bound_E={}", c.e));
        header.push(format!("empirical_E={}", c.e));
    }
    let rows = (0..config.steps).map(|t| {
        let mut row = vec![t.to_string(), fmt_f64(crlb[t])];
        for c in &candidates {
            row.push(fmt_f64(c.bound[t]));
            row.push(fmt_f64(c.empirical[t]));
        }
        row
    });
    dir.write(artifacts::BOUND_TRACE, &csv_bytes(&header, rows, "bound trace")?)?;

    let tune = tune_e(&grid, transient, b.coverage, |e| {
        let c = candidates.iter().find(|c| c.e == e).expect("every grid value was evaluated");
        Ok((c.bound.clone(), c.empirical.clone()))
    });
    let tune = match tune {
        Ok(t) => Ok(t),
        Err(Error::NoFeasibleE) => Err(Error::NoFeasibleE.to_string()),
        Err(e) => return Err(e),
    };
    let json = match &tune {
        Ok(t) => serde_json::to_string_pretty(t),
        Err(msg) => serde_json::to_string_pretty(&serde_json::json!({
            "error": msg,
            "coverage_required": b.coverage,
            "candidates": candidates.iter().map(|c| (c.e, c.coverage)).collect::<Vec<_>>(),
        })),
    }
    .map_err(|e| json_error("tune report", e))?;
    dir.write(artifacts::TUNE_REPORT, format!("{json}\n").as_bytes())?;
    dir.write_manifest()?;
    Ok(BoundSummary {
        dir,
        candidates,
        crlb,
        tune,
    })
}
