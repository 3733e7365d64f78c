//! Run orchestration for every mode and the artifacts each one writes.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;

use crate::analytic::AnalyticState;
use crate::boundary::{
    cbd_norm, compatibility_check, BoundarySource, CompatReport, ConformalBoundaryFamily, ConformalData,
    ConformalTable, ExactBoundary, ExactPoint,
};
use crate::config::{BoundaryChoice, InitialData, Mode, RunConfig};
use crate::data;
use crate::diagnostics::{convergence_rate, record, trace_identity_check, DiagnosticsRecord, CSV_COLUMNS};
use crate::error::{Error, Result};
use crate::evolution::{cfl_dt, step_count, Solver, State};
use crate::grid::{make_grid, Grid, GridSpec, SymTensorField};
use crate::mms::{mms_errors, Mms, MmsErrors};
use crate::output::{csv_line, format_value, write_rates, write_snapshot, DiagnosticsWriter, RateRow};

/// What a finished run reports back to the caller.
#[derive(Clone, Debug, Default)]
pub struct RunSummary {
    pub records: Vec<DiagnosticsRecord>,
    pub rates: Vec<RateRow>,
    pub mms: Vec<MmsErrors>,
    pub compat: Option<CompatReport>,
    pub picard_diffs: Vec<f64>,
    /// Human-readable result lines.
    pub lines: Vec<String>,
}

/// Boundary data of a run.
pub enum Boundary {
    Conformal(ConformalData),
    Exact(Box<dyn BoundarySource>),
}

impl Boundary {
    pub fn source(&self) -> &dyn BoundarySource {
        match self {
            Boundary::Conformal(c) => c,
            Boundary::Exact(b) => b.as_ref(),
        }
    }
}

pub fn analytic_boundary(an: &AnalyticState) -> Boundary {
    let an = an.clone();
    Boundary::Exact(Box::new(ExactBoundary { fields: move |t: f64, x: [f64; 3]| -> ExactPoint { an.exact(t, x) } }))
}

/// Boundary data selected by the configuration.
pub fn boundary_for(cfg: &RunConfig, grid: &Grid) -> Result<Boundary> {
    let both = |f: ConformalBoundaryFamily| ConformalData { inner: f.clone(), outer: f };
    Ok(match (&cfg.boundary, &cfg.initial_data) {
        (BoundaryChoice::Auto, InitialData::Flat) => Boundary::Conformal(both(ConformalBoundaryFamily::Constant)),
        (BoundaryChoice::Auto, InitialData::Perturbed { epsilon, profile }) => {
            Boundary::Conformal(data::perturbed_boundary(*epsilon, *profile)?)
        }
        (BoundaryChoice::Auto, InitialData::Analytic) => analytic_boundary(&AnalyticState::new(cfg.seed)),
        (BoundaryChoice::Auto, InitialData::File(_)) => {
            return Err(Error::config("boundary.family", "file initial data needs an explicit boundary family"))
        }
        (_, InitialData::Analytic) => {
            return Err(Error::config("boundary.family", "analytic initial data takes its boundary data from the solution"))
        }
        (BoundaryChoice::Constant, _) => Boundary::Conformal(both(ConformalBoundaryFamily::Constant)),
        (BoundaryChoice::DiagExp { lambda }, _) => {
            Boundary::Conformal(both(ConformalBoundaryFamily::DiagExp { lambda: *lambda }))
        }
        (BoundaryChoice::File(p), _) => {
            let table = ConformalTable::load(p)?;
            table.covers(grid)?;
            Boundary::Conformal(both(ConformalBoundaryFamily::Tabulated(Arc::new(table))))
        }
    })
}

/// `(g, k)` of the configured initial data; `v` as well for analytic data.
fn initial_fields(cfg: &RunConfig, grid: &Grid) -> Result<(SymTensorField, SymTensorField, Option<SymTensorField>)> {
    Ok(match &cfg.initial_data {
        InitialData::Flat => {
            let (g, k) = data::flat(grid);
            (g, k, None)
        }
        InitialData::Perturbed { epsilon, profile } => {
            let (g, k) = data::perturbed(grid, *epsilon, *profile)?;
            (g, k, None)
        }
        InitialData::File(p) => {
            let (g, k) = data::from_file(grid, p)?;
            (g, k, None)
        }
        InitialData::Analytic => {
            let (g, k, v) = AnalyticState::new(cfg.seed).sample(grid, true);
            (g, k, Some(v))
        }
    })
}

/// Completed initial slice. Analytic data keep their own `v` and exact ghost
/// layers, with only the lapse solved; every other kind gets `v` from the
/// second variation equation.
pub fn initial_state(cfg: &RunConfig, grid: &Grid, solver: &Solver) -> Result<State> {
    let (g, k, v) = initial_fields(cfg, grid)?;
    match v {
        Some(v) => {
            let mut s = State::new(grid, 0.0, g, k, v);
            solver.solve_lapse_pair(&mut s, None)?;
            Ok(s)
        }
        None => solver.initial_state(0.0, g, k),
    }
}

pub fn manifest(cfg: &RunConfig) -> String {
    format!(
        "# maxgauge {}\n# diagnostics.csv schema 1: {}\n# snapshot format 1: FIELD name=<id> shape=<i1,i2,i3> t=<time> + little-endian f64\n{}",
        env!("CARGO_PKG_VERSION"),
        CSV_COLUMNS.join(","),
        cfg.serialize()
    )
}

fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Executes the configured mode. Artifacts go to `cfg.output_dir`.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    write_text(&out_path(cfg, "run_manifest.txt"), &manifest(cfg))?;
    info!("mode {} output {}", cfg.evolve.mode.name(), cfg.output_dir.display());
    match cfg.evolve.mode {
        Mode::Evolve => run_evolve(cfg),
        Mode::Picard => run_picard(cfg),
        Mode::Mms => run_mms(cfg),
        Mode::TraceCheck => run_trace_check(cfg),
        Mode::CompatCheck => run_compat_check(cfg),
        Mode::ConvergenceSuite => run_convergence_suite(cfg),
    }
}

fn c_bd(cfg: &RunConfig, grid: &Grid, bd: &Boundary) -> Result<f64> {
    match bd {
        Boundary::Conformal(c) => cbd_norm(grid, c, cfg.energy_order, cfg.evolve.t_final, cfg.cbd_samples),
        Boundary::Exact(_) => Ok(0.0),
    }
}

/// Fixed-step integration of a completed state to `t_final`. `observe`
/// receives `(state, previous state, step, is_last)`.
fn integrate(
    solver: &Solver,
    initial: State,
    t_final: f64,
    cfl: f64,
    observe: &mut dyn FnMut(&State, Option<&State>, usize, bool) -> Result<()>,
) -> Result<State> {
    let (n, dt) = step_count(cfl_dt(solver.grid, &initial, cfl)?, t_final - initial.t);
    info!("{n} steps of dt = {dt:e}");
    observe(&initial, None, 0, n == 0)?;
    let t0 = initial.t;
    let mut s = initial;
    for m in 1..=n {
        let (mut next, _) = solver.step(&s, dt)?;
        next.t = t0 + m as f64 * dt;
        next.check_finite(solver.grid)?;
        observe(&next, Some(&s), m, m == n)?;
        s = next;
    }
    Ok(s)
}

/// Diagnostics rows at the configured cadence, snapshots as requested.
/// With `r = 1` each row uses the neighbouring step as second slice; the
/// row of step 0 is written once step 1 exists.
fn evolve_with_output(
    cfg: &RunConfig,
    grid: &Grid,
    solver: &Solver,
    bd: &dyn BoundarySource,
    initial: State,
    cbd: f64,
    mut extra: impl FnMut(&State) -> Result<()>,
) -> Result<(State, Vec<DiagnosticsRecord>)> {
    let mut w = DiagnosticsWriter::create(&out_path(cfg, "diagnostics.csv"))?;
    let mut records = Vec::new();
    let r = cfg.energy_order;
    let cadence = cfg.evolve.diagnostics_cadence;
    let snaps = cfg.evolve.snapshot_cadence;
    let mut pending_first: Option<State> = None;
    let last = integrate(solver, initial, cfg.evolve.t_final, cfg.evolve.cfl, &mut |s, prev, m, is_last| {
        let due = m % cadence == 0 || is_last;
        if r == 1 && m == 0 {
            if is_last {
                return Err(Error::config("diagnostics.energy_order", "order 1 needs at least one time step"));
            }
            pending_first = Some(s.clone());
        } else {
            if let Some(first) = pending_first.take() {
                let rec = record(grid, &first, Some(s), r, cbd, bd)?;
                w.write(&rec)?;
                records.push(rec);
                extra(&first)?;
            }
            if due {
                let rec = record(grid, s, if r == 1 { prev } else { None }, r, cbd, bd)?;
                w.write(&rec)?;
                records.push(rec);
                extra(s)?;
            }
        }
        if snaps > 0 && (m % snaps == 0 || is_last) {
            write_snapshot(&out_path(cfg, &format!("snapshot_{m:06}.bin")), grid, s)?;
        }
        Ok(())
    })?;
    w.finish()?;
    Ok((last, records))
}

fn summary_line(rec: &DiagnosticsRecord) -> String {
    format!(
        "t={} ham={} trk_max={} ricci_ij={} energy_k={} bc_max={}",
        format_value(rec.t),
        format_value(rec.ham_norm),
        format_value(rec.trk_max),
        format_value(rec.ricci_ij_l2),
        format_value(rec.energy_k),
        format_value(rec.bc.max())
    )
}

fn run_evolve(cfg: &RunConfig) -> Result<RunSummary> {
    let grid = make_grid(cfg.grid)?;
    let bd = boundary_for(cfg, &grid)?;
    let solver = Solver::new(&grid, bd.source(), cfg.elliptic.clone());
    let s0 = initial_state(cfg, &grid, &solver)?;
    let cbd = c_bd(cfg, &grid, &bd)?;
    let (_, records) = evolve_with_output(cfg, &grid, &solver, bd.source(), s0, cbd, |_| Ok(()))?;
    let mut lines: Vec<String> = records.last().map(summary_line).into_iter().collect();
    if let Some(e0) = records.first().map(|r| r.energy_total) {
        let emax = records.iter().map(|r| r.energy_k).fold(0.0, f64::max);
        lines.push(format!("energy_ratio={}", format_value(emax / (e0 + cbd))));
    }
    Ok(RunSummary { records, lines, ..Default::default() })
}

fn run_picard(cfg: &RunConfig) -> Result<RunSummary> {
    let grid = make_grid(cfg.grid)?;
    let bd = boundary_for(cfg, &grid)?;
    let solver = Solver::new(&grid, bd.source(), cfg.elliptic.clone());
    let s0 = initial_state(cfg, &grid, &solver)?;
    let cbd = c_bd(cfg, &grid, &bd)?;
    let e = &cfg.evolve;
    let result = solver.picard(s0.clone(), e.t_final, e.cfl, e.picard_tol, e.picard_max_iter);
    let (last, report) = match result {
        Ok(x) => x,
        Err(Error::PicardDiverged(diffs)) => {
            write_picard_csv(cfg, &diffs)?;
            return Err(Error::PicardDiverged(diffs));
        }
        Err(err) => return Err(err),
    };
    write_picard_csv(cfg, &report.diffs)?;
    if !report.converged {
        return Err(Error::PicardNotConverged {
            iterations: report.iterations,
            diff: report.diffs.last().copied().unwrap_or(f64::NAN),
        });
    }
    let mut w = DiagnosticsWriter::create(&out_path(cfg, "diagnostics.csv"))?;
    let mut records = Vec::new();
    for s in [&s0, &last] {
        let rec = record(&grid, s, None, 0, cbd, bd.source())?;
        w.write(&rec)?;
        records.push(rec);
    }
    w.finish()?;
    let lines = vec![
        format!("picard_iterations={}", report.iterations),
        format!("picard_final_diff={}", format_value(*report.diffs.last().unwrap_or(&0.0))),
    ];
    Ok(RunSummary { records, picard_diffs: report.diffs, lines, ..Default::default() })
}

fn write_picard_csv(cfg: &RunConfig, diffs: &[f64]) -> Result<()> {
    let mut s = String::from("iteration,difference\n");
    for (i, d) in diffs.iter().enumerate() {
        s.push_str(&format!("{},{}\n", i + 1, format_value(*d)));
    }
    write_text(&out_path(cfg, "picard.csv"), &s)
}

fn check_mms_grid(spec: &GridSpec) -> Result<()> {
    for (key, p) in [("grid.period1", spec.period1), ("grid.period2", spec.period2)] {
        if (p - 2.0 * PI).abs() > 1e-12 {
            return Err(Error::config(key, "the manufactured solution needs period 2π"));
        }
    }
    Ok(())
}

/// One manufactured-solution run on `spec`; errors at every diagnostics row.
fn mms_run(cfg: &RunConfig, spec: GridSpec, write: bool) -> Result<(MmsErrors, RunSummary)> {
    check_mms_grid(&spec)?;
    let grid = make_grid(spec)?;
    let m = Mms::new(grid.x3[0]);
    let bd = m.boundary();
    let solver = Solver::new(&grid, &bd, cfg.elliptic.clone()).with_forcing(&m);
    let mut s0 = m.state(&grid, 0.0);
    solver.complete(&mut s0)?;
    let (n, dt) = step_count(cfl_dt(&grid, &s0, cfg.evolve.cfl)?, cfg.evolve.t_final);
    info!("manufactured solution on {}x{}x{}: {n} steps of dt = {dt:e}", grid.n1, grid.n2, grid.n3);
    let mut errs = Vec::new();
    let mut summary = RunSummary::default();
    let last = if write {
        let (last, records) = evolve_with_output(cfg, &grid, &solver, &bd, s0, 0.0, |s| {
            errs.push((s.t, mms_errors(&grid, s, &m)?));
            Ok(())
        })?;
        summary.records = records;
        last
    } else {
        integrate(&solver, s0, cfg.evolve.t_final, cfg.evolve.cfl, &mut |_, _, _, _| Ok(()))?
    };
    let fin = mms_errors(&grid, &last, &m)?;
    if write {
        let mut s = String::from("t,error_g,error_k,error_phi\n");
        for (t, e) in &errs {
            s.push_str(&csv_line(&[*t, e.g, e.k, e.phi]));
        }
        write_text(&out_path(cfg, "mms_errors.csv"), &s)?;
    }
    summary.mms.push(fin);
    Ok((fin, summary))
}

fn run_mms(cfg: &RunConfig) -> Result<RunSummary> {
    let (e, mut summary) = mms_run(cfg, cfg.grid, true)?;
    summary.lines.push(format!(
        "error_g={} error_k={} error_phi={}",
        format_value(e.g),
        format_value(e.k),
        format_value(e.phi)
    ));
    Ok(summary)
}

fn rate_row(quantity: &str, errors: Vec<f64>) -> RateRow {
    let r = convergence_rate(&errors);
    RateRow { quantity: quantity.to_string(), errors, rates: r.rates, monotone: r.monotone }
}

fn rate_lines(rows: &[RateRow]) -> Vec<String> {
    rows.iter()
        .map(|r| {
            let rates: Vec<String> = r.rates.iter().map(|x| format!("{x:.3}")).collect();
            format!("{} rates {}", r.quantity, rates.join(" "))
        })
        .collect()
}

fn resolutions(cfg: &RunConfig) -> Vec<usize> {
    (0..cfg.levels).map(|j| cfg.level_grid(j).n1).collect()
}

fn run_convergence_suite(cfg: &RunConfig) -> Result<RunSummary> {
    let mut all = Vec::new();
    for j in 0..cfg.levels {
        let (e, _) = mms_run(cfg, cfg.level_grid(j), false)?;
        info!("level {j}: {e:?}");
        all.push(e);
    }
    let rows = vec![
        rate_row("g", all.iter().map(|e| e.g).collect()),
        rate_row("k", all.iter().map(|e| e.k).collect()),
        rate_row("phi", all.iter().map(|e| e.phi).collect()),
    ];
    write_rates(&out_path(cfg, "rates.csv"), &resolutions(cfg), &rows)?;
    Ok(RunSummary { lines: rate_lines(&rows), rates: rows, mms: all, ..Default::default() })
}

fn run_trace_check(cfg: &RunConfig) -> Result<RunSummary> {
    let mut errors = Vec::new();
    for j in 0..cfg.levels {
        let grid = make_grid(cfg.level_grid(j))?;
        let bd = boundary_for(cfg, &grid)?;
        let solver = Solver::new(&grid, bd.source(), cfg.elliptic.clone());
        let s = initial_state(cfg, &grid, &solver)?;
        errors.push(trace_identity_check(&grid, &s)?);
    }
    let rows = vec![rate_row("trace_identity", errors)];
    write_rates(&out_path(cfg, "rates.csv"), &resolutions(cfg), &rows)?;
    Ok(RunSummary { lines: rate_lines(&rows), rates: rows, ..Default::default() })
}

fn run_compat_check(cfg: &RunConfig) -> Result<RunSummary> {
    let grid = make_grid(cfg.grid)?;
    let Boundary::Conformal(data) = boundary_for(cfg, &grid)? else {
        return Err(Error::config("initial_data.kind", "compat-check needs conformal boundary data"));
    };
    let (mut g, mut k, _) = initial_fields(cfg, &grid)?;
    g.extrapolate_ghosts(&grid);
    k.extrapolate_ghosts(&grid);
    let (phi, _) = crate::lapse::solve_lapse(&grid, &g, &k, None, None, &cfg.elliptic)?;
    let report = compatibility_check(&grid, &g, &k, &phi, &data)?;
    let text = format!(
        "conformal,hat,hat_dot,max,tolerance\n{}",
        csv_line(&[report.conformal, report.hat, report.hat_dot, report.max(), cfg.compat_tol])
    );
    write_text(&out_path(cfg, "compat.csv"), &text)?;
    report.check(cfg.compat_tol)?;
    Ok(RunSummary {
        compat: Some(report),
        lines: vec![format!("compat_max={}", format_value(report.max()))],
        ..Default::default()
    })
}
