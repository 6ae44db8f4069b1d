//! Flat `key = value` run configuration shared by every command.

use std::fmt::Write as _;
use std::path::PathBuf;

use dmfm_core::em::{EmConfig, EmMode};
use dmfm_core::sim::{DgpConfig, Family, MissingPattern};

use crate::error::{CliError, CliResult};
use crate::replicate::{TableId, TablePlan};

/// Every setting is optional; commands fill gaps with their defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub t: Option<usize>,
    pub p1: Option<usize>,
    pub p2: Option<usize>,
    pub k1: Option<usize>,
    pub k2: Option<usize>,
    pub mu: Option<f64>,
    pub delta: Option<f64>,
    pub tau: Option<f64>,
    pub family: Option<Family>,
    pub missing: Option<MissingPattern>,
    pub seed: Option<u64>,
    pub eps: Option<f64>,
    pub n_max: Option<usize>,
    pub mode: Option<EmMode>,
    pub missing_aware: Option<bool>,
    pub separate_mar: Option<bool>,
    pub kmax: Option<usize>,
    pub out: Option<PathBuf>,
    pub reps: Option<usize>,
    pub threads: Option<usize>,
    pub table: Option<TableId>,
    pub dims: Option<Vec<(usize, usize)>>,
    pub horizons: Option<Vec<usize>>,
    pub panel: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

pub const KEYS: &[&str] = &[
    "t", "p1", "p2", "k1", "k2", "mu", "delta", "tau", "family", "missing", "seed", "eps", "n_max", "mode",
    "missing_aware", "separate_mar", "kmax", "out", "reps", "threads", "table", "dims", "horizons", "panel", "truth",
];

pub fn family_name(f: Family) -> &'static str {
    match f {
        Family::MatrixNormal => "normal",
        Family::MatrixSkewT4 => "skewt4",
    }
}

pub fn missing_name(m: MissingPattern) -> String {
    match m {
        MissingPattern::None => "none".into(),
        MissingPattern::Random(p) => format!("random:{p}"),
        MissingPattern::Block(p) => format!("block:{p}"),
    }
}

pub fn mode_name(m: EmMode) -> &'static str {
    match m {
        EmMode::Stationary => "stationary",
        EmMode::Levels => "levels",
    }
}

fn count(v: &str, min: usize) -> Result<usize, String> {
    let n: usize = v.parse().map_err(|_| format!("'{v}' is not a nonnegative integer"))?;
    if n < min {
        return Err(format!("{n} is below the minimum {min}"));
    }
    Ok(n)
}

fn real(v: &str, lo: f64, hi: f64, hi_inclusive: bool, lo_inclusive: bool) -> Result<f64, String> {
    let x: f64 = v.parse().map_err(|_| format!("'{v}' is not a number"))?;
    let above = if lo_inclusive { x >= lo } else { x > lo };
    let below = if hi_inclusive { x <= hi } else { x < hi };
    if !(above && below) {
        let l = if lo_inclusive { '[' } else { '(' };
        let h = if hi_inclusive { ']' } else { ')' };
        return Err(format!("{x} is outside {l}{lo}, {hi}{h}"));
    }
    Ok(x)
}

fn text<T: ToString>(x: &Option<T>) -> Option<String> {
    x.as_ref().map(T::to_string)
}

fn boolean(v: &str) -> Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("'{v}' is not true or false")),
    }
}

pub fn parse_mode(v: &str) -> Result<EmMode, String> {
    match v {
        "stationary" => Ok(EmMode::Stationary),
        "levels" => Ok(EmMode::Levels),
        _ => Err(format!("unknown mode '{v}' (expected stationary or levels)")),
    }
}

fn parse_missing(v: &str) -> Result<MissingPattern, String> {
    if v == "none" {
        return Ok(MissingPattern::None);
    }
    let (kind, share) = v.split_once(':').ok_or_else(|| format!("'{v}' is not none, random:P or block:P"))?;
    match kind {
        "random" => Ok(MissingPattern::Random(real(share, 0.0, 1.0, false, true)?)),
        "block" if share == "0.25" || share == "0.5" => Ok(MissingPattern::Block(share.parse().unwrap())),
        "block" => Err(format!("block share must be 0.25 or 0.5, got '{share}'")),
        _ => Err(format!("unknown missing pattern '{kind}'")),
    }
}

fn parse_dims(v: &str) -> Result<Vec<(usize, usize)>, String> {
    v.split(',')
        .map(|d| {
            let (a, b) = d.trim().split_once('x').ok_or_else(|| format!("'{d}' is not of the form P1xP2"))?;
            Ok((count(a, 1)?, count(b, 1)?))
        })
        .collect()
}

fn parse_list(v: &str, min: usize) -> Result<Vec<usize>, String> {
    v.split(',').map(|x| count(x.trim(), min)).collect()
}

impl RunConfig {
    /// Sets one key from its text value, validating its range.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        if v.is_empty() {
            return Err(format!("{key}: empty value"));
        }
        let wrap = |e: String| format!("{key}: {e}");
        match key {
            "t" => self.t = Some(count(v, 2).map_err(wrap)?),
            "p1" => self.p1 = Some(count(v, 1).map_err(wrap)?),
            "p2" => self.p2 = Some(count(v, 1).map_err(wrap)?),
            "k1" => self.k1 = Some(count(v, 1).map_err(wrap)?),
            "k2" => self.k2 = Some(count(v, 1).map_err(wrap)?),
            "mu" => self.mu = Some(real(v, 0.0, 1.0, true, false).map_err(wrap)?),
            "delta" => self.delta = Some(real(v, 0.0, 1.0, false, true).map_err(wrap)?),
            "tau" => self.tau = Some(real(v, 0.0, 1.0, false, true).map_err(wrap)?),
            "family" => {
                self.family = Some(match v {
                    "normal" => Family::MatrixNormal,
                    "skewt4" => Family::MatrixSkewT4,
                    _ => return Err(wrap(format!("unknown family '{v}' (expected normal or skewt4)"))),
                })
            }
            "missing" => self.missing = Some(parse_missing(v).map_err(wrap)?),
            "seed" => self.seed = Some(v.parse().map_err(|_| wrap(format!("'{v}' is not a seed")))?),
            "eps" => self.eps = Some(real(v, 0.0, f64::INFINITY, false, false).map_err(wrap)?),
            "n_max" => self.n_max = Some(count(v, 1).map_err(wrap)?),
            "mode" => self.mode = Some(parse_mode(v).map_err(wrap)?),
            "missing_aware" => self.missing_aware = Some(boolean(v).map_err(wrap)?),
            "separate_mar" => self.separate_mar = Some(boolean(v).map_err(wrap)?),
            "kmax" => self.kmax = Some(count(v, 1).map_err(wrap)?),
            "out" => self.out = Some(PathBuf::from(v)),
            "reps" => self.reps = Some(count(v, 1).map_err(wrap)?),
            "threads" => self.threads = Some(count(v, 1).map_err(wrap)?),
            "table" => self.table = Some(v.parse().map_err(wrap)?),
            "dims" => self.dims = Some(parse_dims(v).map_err(wrap)?),
            "horizons" => self.horizons = Some(parse_list(v, 2).map_err(wrap)?),
            "panel" => self.panel = Some(PathBuf::from(v)),
            "truth" => self.truth = Some(PathBuf::from(v)),
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key.trim(), value).map_err(|e| CliError::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    /// Keys of `other` that are set replace those of `self`.
    pub fn merge(&mut self, other: RunConfig) {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(
            t, p1, p2, k1, k2, mu, delta, tau, family, missing, seed, eps, n_max, mode, missing_aware, separate_mar,
            kmax, out, reps, threads, table, dims, horizons, panel, truth
        );
    }

    /// Set keys only, in canonical order, so that parsing the result gives
    /// back the same configuration.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                writeln!(out, "{k} = {v}").unwrap();
            }
        };
        put("t", text(&self.t));
        put("p1", text(&self.p1));
        put("p2", text(&self.p2));
        put("k1", text(&self.k1));
        put("k2", text(&self.k2));
        put("mu", text(&self.mu));
        put("delta", text(&self.delta));
        put("tau", text(&self.tau));
        put("family", self.family.map(|f| family_name(f).to_string()));
        put("missing", self.missing.map(missing_name));
        put("seed", text(&self.seed));
        put("eps", text(&self.eps));
        put("n_max", text(&self.n_max));
        put("mode", self.mode.map(|m| mode_name(m).to_string()));
        put("missing_aware", text(&self.missing_aware));
        put("separate_mar", text(&self.separate_mar));
        put("kmax", text(&self.kmax));
        put("out", self.out.as_ref().map(|p| p.display().to_string()));
        put("reps", text(&self.reps));
        put("threads", text(&self.threads));
        put("table", text(&self.table));
        put("dims", self.dims.as_ref().map(|d| d.iter().map(|(a, b)| format!("{a}x{b}")).collect::<Vec<_>>().join(",")));
        put("horizons", self.horizons.as_ref().map(|h| h.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")));
        put("panel", self.panel.as_ref().map(|p| p.display().to_string()));
        put("truth", self.truth.as_ref().map(|p| p.display().to_string()));
        out
    }

    pub fn dgp(&self) -> CliResult<DgpConfig> {
        let d = DgpConfig::default();
        let cfg = DgpConfig {
            t: self.t.unwrap_or(d.t),
            p1: self.p1.unwrap_or(d.p1),
            p2: self.p2.unwrap_or(d.p2),
            k1: self.k1.unwrap_or(d.k1),
            k2: self.k2.unwrap_or(d.k2),
            mu: self.mu.unwrap_or(d.mu),
            delta: self.delta.unwrap_or(d.delta),
            tau: self.tau.unwrap_or(d.tau),
            family: self.family.unwrap_or(d.family),
            missing: self.missing.unwrap_or(d.missing),
            seed: self.seed.unwrap_or(d.seed),
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// EM settings for given factor counts.
    pub fn em(&self, k1: usize, k2: usize) -> CliResult<EmConfig> {
        let d = EmConfig::default();
        let cfg = EmConfig {
            k1,
            k2,
            eps: self.eps.unwrap_or(d.eps),
            n_max: self.n_max.unwrap_or(d.n_max),
            mode: self.mode.unwrap_or(d.mode),
            missing_aware: self.missing_aware.unwrap_or(d.missing_aware),
            separate_mar: self.separate_mar.unwrap_or(d.separate_mar),
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn plan(&self) -> TablePlan {
        let d = TablePlan::default();
        TablePlan {
            dims: self.dims.clone().unwrap_or(d.dims),
            horizons: self.horizons.clone().unwrap_or(d.horizons),
            k1: self.k1.unwrap_or(d.k1),
            k2: self.k2.unwrap_or(d.k2),
            eps: self.eps.unwrap_or(d.eps),
            n_max: self.n_max.unwrap_or(d.n_max),
            mode: self.mode,
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}
