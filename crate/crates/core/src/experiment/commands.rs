//! The five subcommands as library calls.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::checkpoint;
use crate::dataset::{generate_dataset, read_split, write_dataset, Manifest, Split};
use crate::error::{Error, Result};
use crate::eval::MetricReport;
use crate::synth::SyntheticPair;

use super::ablate::{ablate, AblationTable};
use super::config::ExperimentConfig;
use super::evaluate::{evaluate, write_outputs};
use super::train::{log_csv, train};

pub const CHECKPOINT_FILE: &str = "checkpoint.a2ck";
pub const LOG_FILE: &str = "train_log.csv";
pub const CONFIG_FILE: &str = "config.txt";

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn make_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_split(cfg: &ExperimentConfig, data: &Path, split: Split) -> Result<Vec<SyntheticPair>> {
    let manifest = Manifest::read(data)?;
    let pairs = read_split(data, &manifest, split)?;
    if let Some(p) = pairs.first() {
        if p.spec.feature_dim != cfg.scene.feature_dim {
            return Err(Error::Config(format!(
                "dataset features are {}-wide but scene.feature_dim = {}",
                p.spec.feature_dim, cfg.scene.feature_dim
            )));
        }
    }
    Ok(pairs)
}

/// Generates the dataset described by `cfg` under `out`.
pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let (manifest, pairs) = generate_dataset(&cfg.scene, &cfg.data, cfg.seed)?;
    write_dataset(out, &manifest, &pairs)?;
    write_text(&out.join(CONFIG_FILE), &cfg.render())?;
    Ok(manifest)
}

/// Trains on the train split; writes the checkpoint, the log and the
/// resolved config.
pub fn cmd_train(cfg: &ExperimentConfig, data: &Path, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let pairs = load_split(cfg, data, Split::Train)?;
    make_dir(out)?;
    let result = train(cfg, &pairs, cfg.seed, Some(out))?;
    let path = out.join(CHECKPOINT_FILE);
    checkpoint::write(&path, &result.checkpoint)?;
    write_text(&out.join(LOG_FILE), &log_csv(&result.log))?;
    write_text(&out.join(CONFIG_FILE), &cfg.render())?;
    Ok(path)
}

/// Evaluates a checkpoint on the test split.
pub fn cmd_eval(cfg: &ExperimentConfig, ckpt: &Path, data: &Path, out: &Path, oracle_pose: bool) -> Result<MetricReport> {
    cfg.validate()?;
    let ck = checkpoint::read(ckpt)?;
    let pairs = load_split(cfg, data, Split::Test)?;
    let results = evaluate(&ck.model, cfg, &pairs, cfg.seed, oracle_pose)?;
    make_dir(out)?;
    write_outputs(out, cfg, &pairs, &results)
}

pub fn cmd_ablate(cfg: &ExperimentConfig, data: &Path, out: &Path) -> Result<AblationTable> {
    cfg.validate()?;
    let train_pairs = load_split(cfg, data, Split::Train)?;
    let test_pairs = load_split(cfg, data, Split::Test)?;
    let table = ablate(cfg, &train_pairs, &test_pairs)?;
    table.write(out)?;
    write_text(&out.join(CONFIG_FILE), &cfg.render())?;
    Ok(table)
}

fn read_json(path: &Path) -> Result<Option<Value>> {
    match std::fs::read_to_string(path) {
        Ok(text) => serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn num(v: &Value, key: &str) -> String {
    match v.get(key).and_then(Value::as_f64) {
        Some(x) => format!("{:.3}", x),
        None => "failed".into(),
    }
}

/// Plain-text tables of the eval reports and ablation tables found in `dirs`.
pub fn render_report(dirs: &[PathBuf]) -> Result<String> {
    let mut s = String::new();
    for dir in dirs {
        let mut found = false;
        if let Some(v) = read_json(&dir.join("report.json"))? {
            found = true;
            let _ = writeln!(s, "# {}", dir.display());
            let _ = writeln!(s, "{:<16} {:>6} {:>7} {:>7} {:>7} {:>7}", "scene", "pairs", "IR", "FMR", "RR", "PIR");
            let rows = v.get("scenes").and_then(Value::as_array).cloned().unwrap_or_default();
            let mean = v.get("mean").cloned().unwrap_or(Value::Null);
            for (name, r) in rows
                .iter()
                .map(|r| (r.get("scene").and_then(Value::as_str).unwrap_or("?").to_string(), r))
                .chain(std::iter::once(("mean".to_string(), &mean)))
            {
                let _ = writeln!(
                    s,
                    "{:<16} {:>6} {:>7} {:>7} {:>7} {:>7}",
                    name,
                    r.get("pairs").and_then(Value::as_u64).unwrap_or(0),
                    num(r, "ir"),
                    num(r, "fmr"),
                    num(r, "rr"),
                    num(r, "pir")
                );
            }
            if v.get("empty").and_then(Value::as_bool) == Some(true) {
                let _ = writeln!(s, "(empty: no test pairs)");
            }
            s.push('\n');
        }
        if let Some(v) = read_json(&dir.join("ablation.json"))? {
            found = true;
            let _ = writeln!(s, "# {}", dir.display());
            let _ = writeln!(
                s,
                "{:<8} {:>5} {:>5} {:>5} {:>5} {:>7} {:>7} {:>7} {:>7}",
                "variant", "phase", "rai", "tri", "topk", "PIR", "IR", "FMR", "RR"
            );
            for r in v.get("rows").and_then(Value::as_array).cloned().unwrap_or_default() {
                let flag = |k: &str| if r.get(k).and_then(Value::as_bool) == Some(true) { "x" } else { "" };
                let m = r.get("mean").cloned().unwrap_or(Value::Null);
                let _ = writeln!(
                    s,
                    "{:<8} {:>5} {:>5} {:>5} {:>5} {:>7} {:>7} {:>7} {:>7}",
                    r.get("variant").and_then(Value::as_str).unwrap_or("?"),
                    flag("phase"),
                    flag("rai"),
                    flag("tri"),
                    flag("topk"),
                    num(&m, "pir"),
                    num(&m, "ir"),
                    num(&m, "fmr"),
                    num(&m, "rr")
                );
            }
            for c in v.get("checks").and_then(Value::as_array).cloned().unwrap_or_default() {
                let pass = c.get("pass").and_then(Value::as_bool) == Some(true);
                let _ = writeln!(
                    s,
                    "check {}: {}",
                    c.get("name").and_then(Value::as_str).unwrap_or("?"),
                    if pass { "pass" } else { "fail" }
                );
            }
            s.push('\n');
        }
        if !found {
            return Err(Error::Format(format!(
                "{} holds neither report.json nor ablation.json",
                dir.display()
            )));
        }
    }
    Ok(s)
}

/// Renders the tables and, when `out` is given, also writes them to
/// `out/summary.txt`.
pub fn cmd_report(dirs: &[PathBuf], out: Option<&Path>) -> Result<String> {
    let text = render_report(dirs)?;
    if let Some(out) = out {
        make_dir(out)?;
        write_text(&out.join("summary.txt"), &text)?;
    }
    Ok(text)
}
