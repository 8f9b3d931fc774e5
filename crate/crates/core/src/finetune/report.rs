//! Result tables: one per factor and task, rows are methods (baseline
//! first), columns are language × portion plus their average.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use super::grid::{ExperimentRecord, GridMethod, Scope};
use super::task::{Portion, Task};
use crate::corpus::{Domain, Factor};

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub label: String,
    /// Mean F1 ×100 over seeds, per column.
    pub cells: Vec<Option<f64>>,
    /// Mean of the present cells.
    pub avg: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultTable {
    pub factor: Factor,
    pub task: Task,
    pub columns: Vec<(usize, Portion)>,
    pub rows: Vec<ResultRow>,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct RowKey {
    scope: Scope,
    /// `None` for the domain-independent baseline.
    domain: Option<Domain>,
    method: GridMethod,
}

impl RowKey {
    fn of(r: &ExperimentRecord) -> Self {
        Self {
            scope: r.mono_multi,
            domain: (r.method != GridMethod::None).then_some(r.domain),
            method: r.method,
        }
    }

    fn label(&self) -> String {
        match self.domain {
            None => format!("{} {}", self.scope, self.method.label()),
            Some(d) => format!("{} {}-domain {}", self.scope, d, self.method.label()),
        }
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn tables(records: &[ExperimentRecord]) -> Vec<ResultTable> {
    let mut grouped: BTreeMap<(Factor, Task), Vec<&ExperimentRecord>> = BTreeMap::new();
    for r in records {
        grouped.entry((r.factor, r.task)).or_default().push(r);
    }
    grouped
        .into_iter()
        .map(|((factor, task), rs)| {
            let columns: Vec<(usize, Portion)> = rs
                .iter()
                .map(|r| (r.language, r.portion))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let mut values: BTreeMap<RowKey, BTreeMap<(usize, Portion), Vec<f64>>> = BTreeMap::new();
            for r in &rs {
                values
                    .entry(RowKey::of(r))
                    .or_default()
                    .entry((r.language, r.portion))
                    .or_default()
                    .push(100.0 * r.f1);
            }
            let rows = values
                .into_iter()
                .map(|(key, by_col)| {
                    let cells: Vec<Option<f64>> = columns
                        .iter()
                        .map(|c| by_col.get(c).and_then(|v| mean(v)))
                        .collect();
                    let present: Vec<f64> = cells.iter().flatten().copied().collect();
                    ResultRow {
                        label: key.label(),
                        avg: mean(&present),
                        cells,
                    }
                })
                .collect();
            ResultTable {
                factor,
                task,
                columns,
                rows,
            }
        })
        .collect()
}

fn column_name(factor: Factor, (language, portion): (usize, Portion)) -> String {
    format!("L{language}:{}", portion.label(factor))
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |v| format!("{v:.2}"))
}

pub fn render_text(tables: &[ResultTable]) -> String {
    let mut out = String::from(
        "Test macro F1 (x100), mean over seeds. Avg. is the mean of the cells shown in its row.\n",
    );
    for t in tables {
        let _ = writeln!(out, "\n{} / {}", t.factor, t.task);
        let width = t.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(6);
        let headers: Vec<String> = t.columns.iter().map(|&c| column_name(t.factor, c)).collect();
        let col_w = headers.iter().map(String::len).max().unwrap_or(0).max(6);
        let _ = write!(out, "{:width$}", "");
        for h in &headers {
            let _ = write!(out, " {h:>col_w$}");
        }
        let _ = writeln!(out, " {:>col_w$}", "Avg.");
        for r in &t.rows {
            let _ = write!(out, "{:width$}", r.label);
            for c in &r.cells {
                let _ = write!(out, " {:>col_w$}", fmt_cell(*c));
            }
            let _ = writeln!(out, " {:>col_w$}", fmt_cell(r.avg));
        }
    }
    out
}

pub fn render_csv(tables: &[ResultTable]) -> String {
    let mut out = String::new();
    for t in tables {
        let headers: Vec<String> = t.columns.iter().map(|&c| column_name(t.factor, c)).collect();
        let _ = writeln!(out, "factor,task,row,{},Avg.", headers.join(","));
        for r in &t.rows {
            let cells: Vec<String> = r.cells.iter().map(|c| c.map_or(String::new(), |v| format!("{v:.4}"))).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                t.factor,
                t.task,
                r.label,
                cells.join(","),
                r.avg.map_or(String::new(), |v| format!("{v:.4}"))
            );
        }
    }
    out
}
