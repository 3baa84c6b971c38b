use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Variant;
use crate::numerics::derive_seed;
use crate::synth::SyntheticPair;

use super::config::ExperimentConfig;
use super::evaluate::{evaluate, report};
use super::train::train;

pub const ABLATE_STREAM: u64 = 0xab1a;

/// Means of one trained-and-evaluated run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunMetrics {
    pub pir: f64,
    pub ir: f64,
    pub fmr: f64,
    pub rr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRun {
    pub variant: String,
    pub seed: u64,
    /// `Err` holds the failure message; the table marks the cell.
    pub result: std::result::Result<RunMetrics, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub phase: bool,
    pub rai: bool,
    pub tri: bool,
    pub topk: bool,
    /// Seed-averaged over successful runs; `None` when every run failed.
    pub mean: Option<RunMetrics>,
    pub rr_per_seed: Vec<Option<f64>>,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderingCheck {
    pub name: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
    pub runs: Vec<AblationRun>,
    pub checks: Vec<OrderingCheck>,
}

/// Seed of the `i`-th ablation replicate; every variant trains from it.
pub fn replicate_seed(base: u64, i: usize) -> u64 {
    derive_seed(derive_seed(base, ABLATE_STREAM), i as u64)
}

fn run_one(cfg: &ExperimentConfig, v: Variant, seed: u64, train_pairs: &[SyntheticPair], test_pairs: &[SyntheticPair]) -> Result<RunMetrics> {
    let mut c = *cfg;
    c.set_variant(v);
    let out = train(&c, train_pairs, seed, None)?;
    let results = evaluate(&out.checkpoint.model, &c, test_pairs, seed, false)?;
    let rep = report(&c, &results);
    if rep.empty {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Ok(RunMetrics {
        pir: rep.pir,
        ir: rep.ir,
        fmr: rep.fmr,
        rr: rep.rr,
    })
}

fn mean(ms: &[RunMetrics]) -> Option<RunMetrics> {
    if ms.is_empty() {
        return None;
    }
    let n = ms.len() as f64;
    let s = |f: fn(&RunMetrics) -> f64| ms.iter().map(f).sum::<f64>() / n;
    Some(RunMetrics {
        pir: s(|m| m.pir),
        ir: s(|m| m.ir),
        fmr: s(|m| m.fmr),
        rr: s(|m| m.rr),
    })
}

/// Trains and evaluates every variant of the grid on `cfg.ablate_seeds`
/// shared seeds.
pub fn ablate(cfg: &ExperimentConfig, train_pairs: &[SyntheticPair], test_pairs: &[SyntheticPair]) -> Result<AblationTable> {
    cfg.validate()?;
    let seeds: Vec<u64> = (0..cfg.ablate_seeds).map(|i| replicate_seed(cfg.seed, i)).collect();
    let jobs: Vec<(&str, Variant, u64)> = Variant::GRID
        .iter()
        .flat_map(|&(name, v)| seeds.iter().map(move |&s| (name, v, s)))
        .collect();
    let runs: Vec<AblationRun> = jobs
        .par_iter()
        .map(|&(name, v, s)| AblationRun {
            variant: name.to_string(),
            seed: s,
            result: run_one(cfg, v, s, train_pairs, test_pairs).map_err(|e| e.to_string()),
        })
        .collect();
    let rows: Vec<AblationRow> = Variant::GRID
        .iter()
        .map(|&(name, v)| {
            let mine: Vec<&AblationRun> = runs.iter().filter(|r| r.variant == name).collect();
            let ok: Vec<RunMetrics> = mine.iter().filter_map(|r| r.result.clone().ok()).collect();
            AblationRow {
                variant: name.to_string(),
                phase: v.phase,
                rai: v.rai,
                tri: v.tri,
                topk: v.topk,
                mean: mean(&ok),
                rr_per_seed: mine.iter().map(|r| r.result.as_ref().ok().map(|m| m.rr)).collect(),
                failed: mine.len() - ok.len(),
            }
        })
        .collect();
    let checks = ordering_checks(&rows);
    Ok(AblationTable {
        seeds,
        rows,
        runs,
        checks,
    })
}

fn row<'a>(rows: &'a [AblationRow], name: &str) -> &'a AblationRow {
    rows.iter().find(|r| r.variant == name).expect("grid variant")
}

/// Seed-averaged RR ordering of the grid and the per-seed gap of the full
/// variant over the baseline. A failed cell fails every check it enters.
pub fn ordering_checks(rows: &[AblationRow]) -> Vec<OrderingCheck> {
    let rr = |n: &str| row(rows, n).mean.map(|m| m.rr);
    let ge = |a: &str, b: &str| matches!((rr(a), rr(b)), (Some(x), Some(y)) if x >= y);
    let (full, base) = (row(rows, "M8"), row(rows, "M1"));
    let gap = full.failed == 0
        && base.failed == 0
        && full
            .rr_per_seed
            .iter()
            .zip(&base.rr_per_seed)
            .all(|(a, b)| matches!((a, b), (Some(x), Some(y)) if x > y));
    vec![
        OrderingCheck {
            name: "rr M8 >= M7".into(),
            pass: ge("M8", "M7"),
        },
        OrderingCheck {
            name: "rr M7 >= M6".into(),
            pass: ge("M7", "M6"),
        },
        OrderingCheck {
            name: "rr M6 >= M1".into(),
            pass: ge("M6", "M1"),
        },
        OrderingCheck {
            name: "rr M8 > M1 in every seed".into(),
            pass: gap,
        },
    ]
}

impl AblationTable {
    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,phase,rai,tri,topk,pir,ir,fmr,rr");
        for i in 0..self.seeds.len() {
            let _ = write!(s, ",rr_seed{i}");
        }
        s.push_str(",failed\n");
        for r in &self.rows {
            let _ = write!(s, "{},{},{},{},{}", r.variant, r.phase, r.rai, r.tri, r.topk);
            match r.mean {
                Some(m) => {
                    let _ = write!(s, ",{},{},{},{}", m.pir, m.ir, m.fmr, m.rr);
                }
                None => s.push_str(",failed,failed,failed,failed"),
            }
            for v in &r.rr_per_seed {
                match v {
                    Some(x) => {
                        let _ = write!(s, ",{x}");
                    }
                    None => s.push_str(",failed"),
                }
            }
            let _ = writeln!(s, ",{}", r.failed);
        }
        for c in &self.checks {
            let _ = writeln!(s, "# check {}: {}", c.name, if c.pass { "pass" } else { "fail" });
        }
        s
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("plain data serializes");
        out.push('\n');
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join("ablation.csv");
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join("ablation.json");
        std::fs::write(&json, self.to_json()).map_err(|e| Error::io(&json, e))
    }
}
