//! Per-run evaluation records and their CSV form.
//!
//! `metrics.csv` holds only quantities that are a pure function of the resolved
//! config and seed, so identical runs produce identical files. Wall-clock time
//! goes to `timing.csv` next to it. Missing values (no diagnostics or no loss
//! yet in the interval) are written as `NaN`.

use std::path::Path;

use crate::error::{Error, Result};

pub const SELECTIONS_HEADER: &str = "step,chosen_index,chosen_u,max_u,distance_to_mean";

pub const METRICS_HEADER: &str = "step,eval_mean,eval_variance,horizon,mean_chosen_u,mean_distance,critic_loss,actor_loss,alpha_loss,alpha,model_loss,update_rounds,warmup_skips,selector_fallbacks";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub step: u64,
    pub eval_mean: f64,
    pub eval_variance: f64,
    pub horizon: usize,
    /// Mean uncertainty of executed candidates since the previous row.
    pub mean_chosen_u: f64,
    /// Mean distance between executed action and policy mean since the previous row.
    pub mean_distance: f64,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
    pub model_loss: f64,
    /// Cumulative update rounds performed.
    pub update_rounds: u64,
    /// Cumulative update rounds skipped during warmup.
    pub warmup_skips: u64,
    /// Cumulative steps where a selector fell back to plain sampling.
    pub selector_fallbacks: u64,
}

impl MetricRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.eval_mean,
            self.eval_variance,
            self.horizon,
            self.mean_chosen_u,
            self.mean_distance,
            self.critic_loss,
            self.actor_loss,
            self.alpha_loss,
            self.alpha,
            self.model_loss,
            self.update_rounds,
            self.warmup_skips,
            self.selector_fallbacks
        )
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim().split(',').collect();
        let bad = |reason: String| Error::Format {
            what: "metrics row",
            reason,
        };
        if fields.len() != 14 {
            return Err(bad(format!("expected 14 fields, got {}", fields.len())));
        }
        let f = |i: usize| -> Result<f64> { fields[i].parse().map_err(|_| bad(format!("field {i}: `{}`", fields[i]))) };
        let u = |i: usize| -> Result<u64> { fields[i].parse().map_err(|_| bad(format!("field {i}: `{}`", fields[i]))) };
        Ok(Self {
            step: u(0)?,
            eval_mean: f(1)?,
            eval_variance: f(2)?,
            horizon: u(3)? as usize,
            mean_chosen_u: f(4)?,
            mean_distance: f(5)?,
            critic_loss: f(6)?,
            actor_loss: f(7)?,
            alpha_loss: f(8)?,
            alpha: f(9)?,
            model_loss: f(10)?,
            update_rounds: u(11)?,
            warmup_skips: u(12)?,
            selector_fallbacks: u(13)?,
        })
    }
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == METRICS_HEADER => {}
        _ => {
            return Err(Error::Format {
                what: "metrics file",
                reason: "missing or unexpected header".into(),
            })
        }
    }
    let rows = lines
        .filter(|l| !l.trim().is_empty())
        .map(MetricRow::from_csv)
        .collect::<Result<Vec<_>>>()?;
    if rows.windows(2).any(|w| w[0].step >= w[1].step) {
        return Err(Error::Format {
            what: "metrics file",
            reason: "steps are not strictly increasing".into(),
        });
    }
    Ok(rows)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics(&text)
}
