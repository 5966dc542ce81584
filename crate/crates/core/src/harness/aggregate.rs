//! Cross-seed aggregation of finished runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::harness::metrics::{read_metrics, MetricRow};

/// Rows averaged for a run's final score.
pub const FINAL_WINDOW: usize = 10;

pub const CURVE_HEADER: &str = "step,mean,variance,algorithm,env";

/// Trailing moving average; the first `window - 1` entries average the prefix
/// seen so far.
pub fn smooth(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::Config("smoothing window must be at least 1".into()));
    }
    Ok((0..series.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let slice = &series[lo..=i];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect())
}

/// Mean of the last [`FINAL_WINDOW`] evaluation returns (all of them if fewer).
pub fn final_score(rows: &[MetricRow]) -> Option<f64> {
    if rows.is_empty() {
        return None;
    }
    let tail = &rows[rows.len().saturating_sub(FINAL_WINDOW)..];
    Some(tail.iter().map(|r| r.eval_mean).sum::<f64>() / tail.len() as f64)
}

fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (mean, values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub dir: PathBuf,
    pub env: String,
    pub algorithm: String,
    pub rows: Vec<MetricRow>,
}

impl RunRecord {
    pub fn load(dir: &Path) -> Result<Self> {
        let cfg = RunConfig::load(&dir.join("config.resolved"))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            env: cfg.env,
            algorithm: cfg.algo.to_string(),
            rows: read_metrics(&dir.join("metrics.csv"))?,
        })
    }
}

/// Per-step statistics across the seeds of one (env, algorithm) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub env: String,
    pub algorithm: String,
    pub steps: Vec<u64>,
    pub mean: Vec<f64>,
    /// Population variance across seeds.
    pub variance: Vec<f64>,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalScore {
    pub env: String,
    pub algorithm: String,
    pub mean: f64,
    /// Population standard deviation of the per-run scores.
    pub std: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Aggregate {
    pub curves: Vec<Curve>,
    pub scores: Vec<FinalScore>,
}

pub fn aggregate(records: &[RunRecord]) -> Result<Aggregate> {
    let mut groups: BTreeMap<(String, String), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.env.clone(), r.algorithm.clone())).or_default().push(r);
    }
    let mut out = Aggregate::default();
    for ((env, algorithm), runs) in groups {
        let steps: Vec<u64> = runs[0].rows.iter().map(|r| r.step).collect();
        for r in &runs[1..] {
            if r.rows.iter().map(|x| x.step).ne(steps.iter().copied()) {
                return Err(Error::Config(format!(
                    "{env}/{algorithm}: step grid of {} differs from {}",
                    r.dir.display(),
                    runs[0].dir.display()
                )));
            }
        }
        let mut mean = Vec::with_capacity(steps.len());
        let mut variance = Vec::with_capacity(steps.len());
        for i in 0..steps.len() {
            let values: Vec<f64> = runs.iter().map(|r| r.rows[i].eval_mean).collect();
            let (m, v) = mean_and_variance(&values);
            mean.push(m);
            variance.push(v);
        }
        let finals: Vec<f64> = runs.iter().filter_map(|r| final_score(&r.rows)).collect();
        if !finals.is_empty() {
            let (m, v) = mean_and_variance(&finals);
            out.scores.push(FinalScore {
                env: env.clone(),
                algorithm: algorithm.clone(),
                mean: m,
                std: v.sqrt(),
                runs: finals.len(),
            });
        }
        out.curves.push(Curve {
            env,
            algorithm,
            steps,
            mean,
            variance,
            runs: runs.len(),
        });
    }
    Ok(out)
}

pub fn aggregate_dirs(dirs: &[PathBuf]) -> Result<Aggregate> {
    if dirs.is_empty() {
        return Err(Error::Usage("aggregate needs at least one run directory".into()));
    }
    let records = dirs.iter().map(|d| RunRecord::load(d)).collect::<Result<Vec<_>>>()?;
    aggregate(&records)
}

pub fn curves_csv(curves: &[Curve]) -> String {
    let mut out = format!("{CURVE_HEADER}\n");
    for c in curves {
        for i in 0..c.steps.len() {
            let _ = writeln!(out, "{},{},{},{},{}", c.steps[i], c.mean[i], c.variance[i], c.algorithm, c.env);
        }
    }
    out
}

pub fn parse_curves(text: &str) -> Result<Vec<Curve>> {
    let bad = |reason: String| Error::Format {
        what: "aggregate curves",
        reason,
    };
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CURVE_HEADER) {
        return Err(bad("missing or unexpected header".into()));
    }
    let mut curves: Vec<Curve> = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 5 {
            return Err(bad(format!("expected 5 fields in `{line}`")));
        }
        let step: u64 = f[0].parse().map_err(|_| bad(format!("step `{}`", f[0])))?;
        let mean: f64 = f[1].parse().map_err(|_| bad(format!("mean `{}`", f[1])))?;
        let variance: f64 = f[2].parse().map_err(|_| bad(format!("variance `{}`", f[2])))?;
        let same = curves.last().is_some_and(|c| c.algorithm == f[3] && c.env == f[4]);
        if !same {
            curves.push(Curve {
                env: f[4].to_string(),
                algorithm: f[3].to_string(),
                steps: Vec::new(),
                mean: Vec::new(),
                variance: Vec::new(),
                runs: 0,
            });
        }
        let c = curves.last_mut().expect("pushed above");
        c.steps.push(step);
        c.mean.push(mean);
        c.variance.push(variance);
    }
    Ok(curves)
}

/// Final scores laid out with algorithms as rows and environments as columns.
pub fn score_table(scores: &[FinalScore]) -> String {
    let envs: Vec<&str> = {
        let mut e: Vec<&str> = scores.iter().map(|s| s.env.as_str()).collect();
        e.sort_unstable();
        e.dedup();
        e
    };
    let mut algos: Vec<&str> = scores.iter().map(|s| s.algorithm.as_str()).collect();
    algos.sort_unstable();
    algos.dedup();
    let mut out = format!("| algorithm | {} |\n", envs.join(" | "));
    let _ = writeln!(out, "|---|{}", "---|".repeat(envs.len()));
    for a in algos {
        let cells: Vec<String> = envs
            .iter()
            .map(|e| {
                scores
                    .iter()
                    .find(|s| s.algorithm == a && s.env == *e)
                    .map_or("-".to_string(), |s| format!("{:.1} ± {:.1} (n={})", s.mean, s.std, s.runs))
            })
            .collect();
        let _ = writeln!(out, "| {a} | {} |", cells.join(" | "));
    }
    out
}

/// Writes `aggregate.csv`, `final_scores.csv` and `table.md` into `out`.
pub fn write_aggregate(agg: &Aggregate, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let write = |name: &str, text: String| {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("aggregate.csv", curves_csv(&agg.curves))?;
    let mut scores = String::from("algorithm,env,mean,std,runs\n");
    for s in &agg.scores {
        let _ = writeln!(scores, "{},{},{},{},{}", s.algorithm, s.env, s.mean, s.std, s.runs);
    }
    write("final_scores.csv", scores)?;
    write("table.md", score_table(&agg.scores))
}
