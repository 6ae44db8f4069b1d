//! The four commands. Each writes its files under the output directory and
//! returns a one-line summary for the terminal.

use std::fmt::Write as _;
use std::path::PathBuf;

use dmfm_core::em::{run_em, EmMode};
use dmfm_core::metrics::{col_space_distance, mse_missing, mse_signal};
use dmfm_core::pe::eigenvalue_ratio_k;
use dmfm_core::sim::{simulate as simulate_panel, MissingPattern};
use dmfm_core::MatrixSeries;
use nalgebra::DMatrix;

use crate::config::{family_name, missing_name, mode_name, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::{fmt_num, parse_panel, parse_sidecar, read_file, render_mask, render_panel, render_series, write_file, Sidecar};
use crate::replicate::{benchmark, render_table, run_table};

pub const PANEL_FILE: &str = "panel.txt";
pub const MASK_FILE: &str = "mask.txt";
pub const TRUTH_FILE: &str = "truth.txt";
pub const REPORT_FILE: &str = "report.txt";
pub const LOGLIK_FILE: &str = "loglik.csv";
pub const S_HAT_FILE: &str = "s_hat.txt";
pub const F_HAT_FILE: &str = "f_hat.txt";
pub const FIGURE_FILE: &str = "loglik_figure.csv";
pub const MIN_REPS: usize = 10;
pub const DEFAULT_REPS: usize = 50;

pub fn simulate(cfg: &RunConfig) -> CliResult<String> {
    let dgp = cfg.dgp()?;
    let truth = simulate_panel(&dgp)?;
    let dir = cfg.out_dir();
    write_file(&dir.join(PANEL_FILE), &render_series(&truth.y))?;
    if dgp.missing != MissingPattern::None {
        write_file(&dir.join(MASK_FILE), &render_mask(&truth.y))?;
    }
    let p = &truth.params;
    let mut side = Sidecar::default();
    side.kv("t", dgp.t)
        .kv("p1", dgp.p1)
        .kv("p2", dgp.p2)
        .kv("k1", dgp.k1)
        .kv("k2", dgp.k2)
        .kv("mu", dgp.mu)
        .kv("delta", dgp.delta)
        .kv("tau", dgp.tau)
        .kv("family", family_name(dgp.family))
        .kv("missing", missing_name(dgp.missing))
        .kv("seed", dgp.seed)
        .kv("nonstationary", dgp.nonstationary())
        .matrix("R", &p.r)
        .matrix("C", &p.c)
        .matrix("A", &p.a)
        .matrix("B", &p.b)
        .series("F", &truth.f)
        .series("S", &truth.s);
    if truth.y.has_missing() {
        side.series("Y", &truth.y_full);
    }
    write_file(&dir.join(TRUTH_FILE), &side.finish())?;
    Ok(format!(
        "simulated T={} p1={} p2={} k1={} k2={} mu={} delta={} tau={} family={} missing={} seed={} missing_cells={} -> {}",
        dgp.t,
        dgp.p1,
        dgp.p2,
        dgp.k1,
        dgp.k2,
        dgp.mu,
        dgp.delta,
        dgp.tau,
        family_name(dgp.family),
        missing_name(dgp.missing),
        dgp.seed,
        truth.y.missing_count(),
        dir.display()
    ))
}

fn panel_path(cfg: &RunConfig) -> PathBuf {
    cfg.panel.clone().unwrap_or_else(|| cfg.out_dir().join(PANEL_FILE))
}

/// Factor counts from the configuration, or the eigenvalue-ratio estimate.
fn factor_counts(cfg: &RunConfig, y: &MatrixSeries) -> CliResult<(usize, usize, &'static str)> {
    match (cfg.k1, cfg.k2) {
        (Some(k1), Some(k2)) => Ok((k1, k2, "given")),
        (None, None) => {
            let limit = y.p1().min(y.p2()).saturating_sub(1);
            let kmax = cfg.kmax.unwrap_or(8).min(limit);
            if y.has_missing() {
                return Err(CliError::Usage("factor counts must be given for a panel with missing entries".into()));
            }
            let (k1, k2) = eigenvalue_ratio_k(y, kmax)?;
            Ok((k1, k2, "eigenvalue-ratio"))
        }
        _ => Err(CliError::Usage("give both k1 and k2 or neither".into())),
    }
}

struct Truth {
    r: DMatrix<f64>,
    c: DMatrix<f64>,
    s: Vec<DMatrix<f64>>,
    y_full: Option<Vec<DMatrix<f64>>>,
}

fn load_truth(path: &std::path::Path, y: &MatrixSeries) -> CliResult<Truth> {
    let doc = parse_sidecar(&read_file(path)?)?;
    let s = doc.series("S", y.len())?;
    let y_full = if doc.sections.contains_key("Y") { Some(doc.series("Y", y.len())?) } else { None };
    let truth = Truth { r: doc.matrix("R")?, c: doc.matrix("C")?, s, y_full };
    if truth.r.nrows() != y.p1() || truth.c.nrows() != y.p2() || truth.s[0].shape() != (y.p1(), y.p2()) {
        return Err(CliError::Format("truth file does not match the panel".into()));
    }
    Ok(truth)
}

fn metric_lines(side: &mut Sidecar, prefix: &str, truth: &Truth, y: &MatrixSeries, r: &DMatrix<f64>, c: &DMatrix<f64>, s: &[DMatrix<f64>]) -> CliResult<f64> {
    let d_r = col_space_distance(&truth.r, r)?;
    side.kv(&format!("{prefix}d_r"), fmt_num(d_r))
        .kv(&format!("{prefix}d_c"), fmt_num(col_space_distance(&truth.c, c)?))
        .kv(&format!("{prefix}mse_s"), fmt_num(mse_signal(&truth.s, s)?));
    if let (Some(w), Some(full)) = (y.mask(), &truth.y_full) {
        side.kv(&format!("{prefix}mse_y0"), fmt_num(mse_missing(full, s, w)?));
    }
    Ok(d_r)
}

pub fn estimate(cfg: &RunConfig) -> CliResult<String> {
    let path = panel_path(cfg);
    let y = parse_panel(&read_file(&path)?)?;
    let (k1, k2, k_source) = factor_counts(cfg, &y)?;
    let em = cfg.em(k1, k2)?;
    let report = run_em(&y, &em)?;
    let theta = &report.theta_hat;

    let mut side = Sidecar::default();
    side.kv("panel", path.display())
        .kv("t", y.len())
        .kv("p1", y.p1())
        .kv("p2", y.p2())
        .kv("missing_cells", y.missing_count())
        .kv("k1", k1)
        .kv("k2", k2)
        .kv("k_source", k_source)
        .kv("mode", mode_name(em.mode))
        .kv("missing_aware", em.missing_aware)
        .kv("separate_mar", em.separate_mar)
        .kv("eps", em.eps)
        .kv("n_max", em.n_max)
        .kv("iterations", report.iterations())
        .kv("n_star", report.n_star)
        .kv("converged", report.converged)
        .kv("loglik_init", fmt_num(report.loglik_path[0]))
        .kv("loglik_final", fmt_num(report.final_loglik()));
    let mut summary = format!(
        "estimated k1={k1} k2={k2} iterations={} converged={} loglik={}",
        report.iterations(),
        report.converged,
        fmt_num(report.final_loglik())
    );
    if let Some(truth_path) = &cfg.truth {
        let truth = load_truth(truth_path, &y)?;
        if (theta.k1(), theta.k2()) != (truth.r.ncols(), truth.c.ncols()) {
            return Err(CliError::Usage("factor counts differ from the truth file".into()));
        }
        let d_r = metric_lines(&mut side, "", &truth, &y, &theta.r, &theta.c, &report.s_hat)?;
        let pe = benchmark(&y, k1, k2)?;
        metric_lines(&mut side, "pe_", &truth, &y, &pe.r0, &pe.c0, &pe.signal())?;
        write!(summary, " D(R)={}", fmt_num(d_r)).unwrap();
    }
    side.kv("warnings", report.warnings.len());
    for w in &report.warnings {
        side.kv("warning", w);
    }
    side.matrix("R", &theta.r)
        .matrix("C", &theta.c)
        .matrix("H", &DMatrix::from_column_slice(y.p1(), 1, theta.h_diag.as_slice()))
        .matrix("K", &DMatrix::from_column_slice(y.p2(), 1, theta.k_diag.as_slice()))
        .matrix("BA", &theta.ba)
        .matrix("QP", &theta.qp);

    let dir = cfg.out_dir();
    write_file(&dir.join(REPORT_FILE), &side.finish())?;
    let mut csv = String::from("iteration,loglik,delta\n");
    for (n, l) in report.loglik_path.iter().enumerate() {
        let d = if n == 0 { String::new() } else { fmt_num(report.delta_path[n - 1]) };
        writeln!(csv, "{n},{},{d}", fmt_num(*l)).unwrap();
    }
    write_file(&dir.join(LOGLIK_FILE), &csv)?;
    write_file(&dir.join(S_HAT_FILE), &render_panel(&report.s_hat, |_, _, _| false))?;
    write_file(&dir.join(F_HAT_FILE), &render_panel(&report.f_hat, |_, _, _| false))?;
    Ok(summary)
}

fn with_threads<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> CliResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker threads: {e}")))?;
    Ok(pool.install(job))
}

pub fn replicate(cfg: &RunConfig) -> CliResult<String> {
    let table = cfg.table.ok_or_else(|| CliError::Usage("replicate needs a table (T1, T2, T3 or T4)".into()))?;
    let reps = cfg.reps.unwrap_or(DEFAULT_REPS);
    if reps < MIN_REPS {
        return Err(CliError::Usage(format!("replicate needs at least {MIN_REPS} replicates, got {reps}")));
    }
    let seed = cfg.seed.unwrap_or(1);
    let plan = cfg.plan();
    let rows = with_threads(cfg.threads, || run_table(table, &plan, reps, seed))?;
    let path = cfg.out_dir().join(format!("table_{table}.csv"));
    write_file(&path, &render_table(table, seed, &rows))?;
    let failed: usize = rows.iter().map(|r| r.failed).sum();
    Ok(format!("replicated {table}: {} rows x {reps} replicates, {failed} failed -> {}", rows.len(), path.display()))
}

pub fn loglik_figure(cfg: &RunConfig) -> CliResult<String> {
    let dgp = cfg.dgp()?;
    let truth = simulate_panel(&dgp)?;
    let base = cfg.em(dgp.k1, dgp.k2)?;
    let stationary = run_em(&truth.y, &with_mode(&base, EmMode::Stationary))?;
    let levels = run_em(&truth.y, &with_mode(&base, EmMode::Levels))?;
    let (a, b) = (&stationary.loglik_path, &levels.loglik_path);
    let mut csv = String::from("iteration,stationary,levels\n");
    for n in 0..a.len().max(b.len()) {
        let cell = |p: &[f64]| p.get(n).map(|&v| fmt_num(v)).unwrap_or_default();
        writeln!(csv, "{n},{},{}", cell(a), cell(b)).unwrap();
    }
    let path = cfg.out_dir().join(FIGURE_FILE);
    write_file(&path, &csv)?;
    Ok(format!(
        "log-likelihood paths: stationary {} iterations, levels {} iterations -> {}",
        stationary.iterations(),
        levels.iterations(),
        path.display()
    ))
}

fn with_mode(base: &dmfm_core::EmConfig, mode: EmMode) -> dmfm_core::EmConfig {
    dmfm_core::EmConfig { mode, ..base.clone() }
}
