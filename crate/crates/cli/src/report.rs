//! Aggregates `finetune` output directories into one summary table.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::Value;
use xfer_core::{Error, Result};

use crate::manifest::{io_err, read_text, write_file, RunManifest};

/// One parsed row of a run's `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetric {
    pub task: String,
    pub init_mode: String,
    pub metric: String,
    pub value: f64,
}

fn find_runs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if dir.join("metrics.csv").is_file() && dir.join("manifest.json").is_file() {
        out.push(dir.to_path_buf());
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for e in entries {
        find_runs(&e, out)?;
    }
    Ok(())
}

fn read_run(dir: &Path) -> Result<Vec<RunMetric>> {
    let manifest: Value = serde_json::from_str(&read_text(&dir.join("manifest.json"))?)?;
    let task = manifest["config"]["task"]
        .as_str()
        .unwrap_or("")
        .to_string();
    let path = dir.join("metrics.csv");
    let text = read_text(&path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::Parse {
                line: 1,
                msg: format!("{}: no {name} column", path.display()),
            })
    };
    let (ci, cm, cv) = (col("init_mode")?, col("metric")?, col("value")?);
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Parse {
            line: i + 2,
            msg: format!("{}: malformed row {line:?}", path.display()),
        };
        let value = f
            .get(cv)
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(bad)?;
        rows.push(RunMetric {
            task: task.clone(),
            init_mode: f.get(ci).ok_or_else(bad)?.to_string(),
            metric: f.get(cm).ok_or_else(bad)?.to_string(),
            value,
        });
    }
    Ok(rows)
}

/// `task,init_mode,metric,mean,std,n_runs`, with the sample standard
/// deviation (left empty for a single run).
pub fn summarize(rows: &[RunMetric]) -> String {
    let mut groups: BTreeMap<(&str, &str, &str), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((&r.task, &r.init_mode, &r.metric))
            .or_default()
            .push(r.value);
    }
    let mut out = String::from("task,init_mode,metric,mean,std,n_runs\n");
    for ((task, mode, metric), v) in groups {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() > 1 {
            let ss: f64 = v.iter().map(|x| (x - mean).powi(2)).sum();
            format!("{}", (ss / (n - 1.0)).sqrt())
        } else {
            String::new()
        };
        out.push_str(&format!(
            "{task},{mode},{metric},{mean},{std},{}\n",
            v.len()
        ));
    }
    out
}

pub fn report(dirs: &[PathBuf], out: &Path) -> Result<()> {
    let mut runs = Vec::new();
    for d in dirs {
        if !d.is_dir() {
            return Err(Error::Input(format!("{} is not a directory", d.display())));
        }
        find_runs(d, &mut runs)?;
    }
    if runs.is_empty() {
        return Err(Error::Input("no finished fine-tuning runs found".into()));
    }
    let mut rows = Vec::new();
    for r in &runs {
        rows.extend(read_run(r)?);
    }
    write_file(out, summarize(&rows))?;
    let mut m = RunManifest::new("report", Value::Null);
    for (i, r) in runs.iter().enumerate() {
        let bytes = std::fs::read(r.join("metrics.csv")).map_err(|e| io_err(r, e))?;
        m.input(&format!("run{i}"), &r.join("metrics.csv"), &bytes);
    }
    m.output(out);
    m.write(&crate::manifest::manifest_path(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(mode: &str, v: f64) -> RunMetric {
        RunMetric {
            task: "t".into(),
            init_mode: mode.into(),
            metric: "accuracy".into(),
            value: v,
        }
    }

    #[test]
    fn sample_std_and_grouping() {
        let s = summarize(&[
            row("scratch", 0.5),
            row("scratch", 0.7),
            row("checkpoint", 0.9),
        ]);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[1], "t,checkpoint,accuracy,0.9,,1");
        let f: Vec<&str> = lines[2].split(',').collect();
        assert!((f[3].parse::<f64>().unwrap() - 0.6).abs() < 1e-12);
        assert!((f[4].parse::<f64>().unwrap() - 0.02f64.sqrt()).abs() < 1e-12);
    }
}
