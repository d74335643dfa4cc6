//! CSV output.
//!
//! Columns: `experiment_id, sweep_value, trial, step, ndcg_cum,
//! unfair_exposure, unfair_impact, exp_ratio_g0.., imp_ratio_g0..`, then the
//! same metric columns suffixed `_sd`, which are filled on aggregate rows
//! only. Aggregate rows carry `mean` in the trial column. Wall time is not
//! written so that output is byte-identical across runs.

use std::io::Write;

use super::{AggregateRow, ExperimentResult, MetricsRow, SweepResult};
use crate::error::Result;

fn metric_names(groups: usize) -> Vec<String> {
    let mut names: Vec<String> = ["ndcg_cum", "unfair_exposure", "unfair_impact"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((0..groups).map(|g| format!("exp_ratio_g{g}")));
    names.extend((0..groups).map(|g| format!("imp_ratio_g{g}")));
    names
}

pub fn header(groups: usize) -> Vec<String> {
    let metrics = metric_names(groups);
    let mut h: Vec<String> = ["experiment_id", "sweep_value", "trial", "step"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(metrics.iter().cloned());
    h.extend(metrics.iter().map(|m| format!("{m}_sd")));
    h
}

fn metric_values(row: &MetricsRow) -> Vec<String> {
    let mut v = vec![
        row.ndcg_cum.to_string(),
        row.unfair_exposure.to_string(),
        row.unfair_impact.to_string(),
    ];
    v.extend(row.exp_ratios.iter().map(f64::to_string));
    v.extend(row.imp_ratios.iter().map(f64::to_string));
    v
}

struct Sink<W: Write> {
    writer: ::csv::Writer<W>,
    groups: usize,
}

impl<W: Write> Sink<W> {
    fn new(out: W, groups: usize) -> Result<Self> {
        let mut writer = ::csv::WriterBuilder::new()
            .terminator(::csv::Terminator::Any(b'\n'))
            .from_writer(out);
        writer.write_record(header(groups))?;
        Ok(Self { writer, groups })
    }

    fn trial_row(&mut self, id: &str, sweep: &str, row: &MetricsRow) -> Result<()> {
        let mut record = vec![
            id.to_string(),
            sweep.to_string(),
            row.trial.to_string(),
            row.step.to_string(),
        ];
        record.extend(metric_values(row));
        record.extend(std::iter::repeat_n(String::new(), 3 + 2 * self.groups));
        self.writer.write_record(record)?;
        Ok(())
    }

    fn aggregate_row(&mut self, id: &str, sweep: &str, row: &AggregateRow) -> Result<()> {
        let mut record = vec![
            id.to_string(),
            sweep.to_string(),
            "mean".to_string(),
            row.step.to_string(),
        ];
        record.extend(metric_values(&row.mean));
        record.extend(metric_values(&row.sd));
        self.writer.write_record(record)?;
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

fn group_count(result: &ExperimentResult) -> usize {
    result.rows.first().map_or(0, |r| r.exp_ratios.len())
}

/// Per-trial rows sorted by (trial, step), then one aggregate row per checkpoint.
pub fn write_csv<W: Write>(result: &ExperimentResult, out: W) -> Result<()> {
    let mut sink = Sink::new(out, group_count(result))?;
    for row in &result.rows {
        sink.trial_row(&result.experiment_id, "", row)?;
    }
    for agg in &result.aggregates {
        sink.aggregate_row(&result.experiment_id, "", agg)?;
    }
    sink.finish()
}

/// Final-checkpoint rows of every block, keyed by the swept value.
pub fn write_sweep_csv<W: Write>(sweep: &SweepResult, out: W) -> Result<()> {
    let groups = sweep.blocks.first().map_or(0, |(_, r)| group_count(r));
    let mut sink = Sink::new(out, groups)?;
    for (value, result) in &sweep.blocks {
        let key = value.to_string();
        let Some(last) = result.final_aggregate() else {
            continue;
        };
        for row in result.rows.iter().filter(|r| r.step == last.step) {
            sink.trial_row(&result.experiment_id, &key, row)?;
        }
        sink.aggregate_row(&result.experiment_id, &key, last)?;
    }
    sink.finish()
}
