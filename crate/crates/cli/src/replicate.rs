//! Monte Carlo comparison of EM against the projected estimator.

use std::fmt::Write as _;
use std::str::FromStr;

use dmfm_core::em::{run_em_from, EmConfig, EmMode, IMPUTE_MAX_ITER, IMPUTE_TOL};
use dmfm_core::metrics::{col_space_distance, mse_missing, mse_signal, MetricSet};
use dmfm_core::pe::{balanced_subpanel_init, imputed_pe, pe_init, PeInit};
use dmfm_core::sim::{simulate, DgpConfig, Family, MissingPattern};
use dmfm_core::Result;
use rayon::prelude::*;

use crate::config::{family_name, missing_name};
use crate::io::fmt_fixed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableId {
    /// Complete panels, stationary and unit-root factors.
    T1,
    /// Randomly and block-wise missing panels.
    T2,
    /// Separately parameterized MAR dynamics.
    T3,
    /// Block-missing panels with balanced sub-panel initialization.
    T4,
}

impl FromStr for TableId {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "T1" => Ok(Self::T1),
            "T2" => Ok(Self::T2),
            "T3" => Ok(Self::T3),
            "T4" => Ok(Self::T4),
            _ => Err(format!("unknown table '{s}' (expected T1, T2, T3 or T4)")),
        }
    }
}

impl std::fmt::Display for TableId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::T1 => "T1",
            Self::T2 => "T2",
            Self::T3 => "T3",
            Self::T4 => "T4",
        })
    }
}

/// How EM is started on masked panels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartRule {
    /// The benchmark estimator itself.
    Benchmark,
    /// The balanced sub-panel route.
    Subpanel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub dgp: DgpConfig,
    pub em: EmConfig,
    pub start: StartRule,
}

/// Shape of a table: which sizes to sweep and how EM is configured.
#[derive(Debug, Clone, PartialEq)]
pub struct TablePlan {
    pub dims: Vec<(usize, usize)>,
    pub horizons: Vec<usize>,
    pub k1: usize,
    pub k2: usize,
    pub eps: f64,
    pub n_max: usize,
    /// Forces one mode on every row; by default unit-root rows use levels.
    pub mode: Option<EmMode>,
}

impl Default for TablePlan {
    fn default() -> Self {
        Self {
            dims: vec![(20, 20), (10, 30)],
            horizons: vec![100, 400],
            k1: 2,
            k2: 2,
            eps: 1e-4,
            n_max: 100,
            mode: None,
        }
    }
}

type Row = (f64, f64, f64, Family, MissingPattern);

fn design(table: TableId) -> Vec<Row> {
    use Family::{MatrixNormal as N, MatrixSkewT4 as St};
    use MissingPattern::{Block, Random};
    match table {
        TableId::T1 => vec![
            (0.7, 0.0, 0.0, N, MissingPattern::None),
            (0.7, 0.7, 0.5, N, MissingPattern::None),
            (0.7, 0.0, 0.0, St, MissingPattern::None),
            (0.7, 0.7, 0.5, St, MissingPattern::None),
            (1.0, 0.0, 0.0, N, MissingPattern::None),
            (1.0, 0.7, 0.5, N, MissingPattern::None),
        ],
        TableId::T2 => [Random(0.25), Random(0.5), Block(0.25), Block(0.5)]
            .into_iter()
            .flat_map(|m| [(0.7, 0.0, 0.0, N, m), (0.7, 0.0, 0.0, St, m)])
            .collect(),
        TableId::T3 => vec![(0.7, 0.0, 0.0, N, MissingPattern::None), (0.7, 0.7, 0.5, N, MissingPattern::None)],
        TableId::T4 => [0.7, 1.0]
            .into_iter()
            .flat_map(|mu| {
                [(N, Block(0.25)), (N, Block(0.5)), (St, Block(0.25)), (St, Block(0.5))]
                    .map(|(fam, m)| (mu, 0.0, 0.0, fam, m))
            })
            .collect(),
    }
}

/// Scenario rows of a table in display order: design rows outermost, then
/// dimensions, then sample sizes.
pub fn scenarios(table: TableId, plan: &TablePlan) -> Vec<Scenario> {
    let mut out = Vec::new();
    for (mu, delta, tau, family, missing) in design(table) {
        for &(p1, p2) in &plan.dims {
            for &t in &plan.horizons {
                let dgp = DgpConfig { t, p1, p2, k1: plan.k1, k2: plan.k2, mu, delta, tau, family, missing, seed: 0 };
                let mode = plan.mode.unwrap_or(if dgp.nonstationary() { EmMode::Levels } else { EmMode::Stationary });
                let em = EmConfig {
                    k1: plan.k1,
                    k2: plan.k2,
                    eps: plan.eps,
                    n_max: plan.n_max,
                    mode,
                    missing_aware: missing != MissingPattern::None,
                    separate_mar: table == TableId::T3,
                };
                let start = if table == TableId::T4 { StartRule::Subpanel } else { StartRule::Benchmark };
                out.push(Scenario { dgp, em, start });
            }
        }
    }
    out
}

/// Metrics of EM and of the benchmark estimator on one simulated panel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicateOutcome {
    pub em: MetricSet,
    pub pe: MetricSet,
}

impl ReplicateOutcome {
    /// EM over benchmark, metric by metric.
    pub fn ratios(&self) -> [Option<f64>; 4] {
        [
            Some(self.em.d_r / self.pe.d_r),
            Some(self.em.d_c / self.pe.d_c),
            Some(self.em.mse_s / self.pe.mse_s),
            self.em.mse_y0.zip(self.pe.mse_y0).map(|(a, b)| a / b),
        ]
    }
}

fn metrics(
    truth: &dmfm_core::sim::SimTruth,
    r: &nalgebra::DMatrix<f64>,
    c: &nalgebra::DMatrix<f64>,
    s: &[nalgebra::DMatrix<f64>],
) -> Result<MetricSet> {
    let mse_y0 = match truth.y.mask() {
        Some(w) => Some(mse_missing(&truth.y_full, s, w)?),
        None => None,
    };
    Ok(MetricSet {
        d_r: col_space_distance(&truth.params.r, r)?,
        d_c: col_space_distance(&truth.params.c, c)?,
        mse_s: mse_signal(&truth.s, s)?,
        mse_y0,
    })
}

/// Benchmark estimator: the projected estimator, on iteratively imputed data
/// when the panel is masked.
pub fn benchmark(y: &dmfm_core::MatrixSeries, k1: usize, k2: usize) -> Result<PeInit> {
    if y.has_missing() {
        imputed_pe(y, k1, k2, IMPUTE_MAX_ITER, IMPUTE_TOL)
    } else {
        pe_init(y, k1, k2)
    }
}

pub fn run_replicate(scenario: &Scenario, seed: u64) -> Result<ReplicateOutcome> {
    let truth = simulate(&DgpConfig { seed, ..scenario.dgp.clone() })?;
    let pe = benchmark(&truth.y, scenario.em.k1, scenario.em.k2)?;
    let start = match scenario.start {
        StartRule::Subpanel if truth.y.has_missing() => balanced_subpanel_init(&truth.y, &scenario.em)?.params(),
        _ => pe.params(),
    };
    let report = run_em_from(&truth.y, &scenario.em, start)?;
    Ok(ReplicateOutcome {
        em: metrics(&truth, &report.theta_hat.r, &report.theta_hat.c, &report.s_hat)?,
        pe: metrics(&truth, &pe.r0, &pe.c0, &pe.signal())?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
}

fn summarize(xs: &[f64]) -> Option<Summary> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    Some(Summary { mean, sd })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowResult {
    pub scenario: Scenario,
    pub reps: usize,
    pub failed: usize,
    /// Mean and sd of the EM/benchmark ratios for D(R), D(C), MSE_S, MSE_Y0.
    pub ratios: [Option<Summary>; 4],
}

/// Runs `reps` replicates with seeds `seed, seed + 1, ...`. Failed replicates
/// are counted and left out of the averages.
pub fn run_row(scenario: &Scenario, reps: usize, seed: u64) -> RowResult {
    let outcomes: Vec<Result<ReplicateOutcome>> =
        (0..reps as u64).into_par_iter().map(|i| run_replicate(scenario, seed + i)).collect();
    let ok: Vec<[Option<f64>; 4]> = outcomes.iter().filter_map(|o| o.as_ref().ok()).map(|o| o.ratios()).collect();
    let ratios = std::array::from_fn(|m| {
        let xs: Vec<f64> = ok.iter().filter_map(|r| r[m]).filter(|x| x.is_finite()).collect();
        summarize(&xs)
    });
    RowResult { scenario: scenario.clone(), reps, failed: reps - ok.len(), ratios }
}

pub fn run_table(table: TableId, plan: &TablePlan, reps: usize, seed: u64) -> Vec<RowResult> {
    scenarios(table, plan).iter().map(|s| run_row(s, reps, seed)).collect()
}

pub const TABLE_HEADER: &str = "mu,delta,tau,family,missing,p1,p2,t,mode,reps,failed,\
d_r_mean,d_r_sd,d_c_mean,d_c_sd,mse_s_mean,mse_s_sd,mse_y0_mean,mse_y0_sd";

/// Renders rows as a CSV table preceded by `key = value` settings.
pub fn render_table(table: TableId, seed: u64, rows: &[RowResult]) -> String {
    let mut out = String::new();
    writeln!(out, "table = {table}").unwrap();
    writeln!(out, "seed = {seed}").unwrap();
    writeln!(out, "ratio = em/pe").unwrap();
    writeln!(out, "[rows]").unwrap();
    writeln!(out, "{TABLE_HEADER}").unwrap();
    for row in rows {
        let d = &row.scenario.dgp;
        let mode = match row.scenario.em.mode {
            EmMode::Stationary => "stationary",
            EmMode::Levels => "levels",
        };
        write!(
            out,
            "{},{},{},{},{},{},{},{},{mode},{},{}",
            d.mu,
            d.delta,
            d.tau,
            family_name(d.family),
            missing_name(d.missing),
            d.p1,
            d.p2,
            d.t,
            row.reps,
            row.failed
        )
        .unwrap();
        for s in &row.ratios {
            match s {
                Some(s) => write!(out, ",{},{}", fmt_fixed(s.mean), fmt_fixed(s.sd)).unwrap(),
                None => out.push_str(",NA,NA"),
            }
        }
        out.push('\n');
    }
    out
}
