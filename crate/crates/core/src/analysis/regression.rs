//! Least-squares meta-regression of F1 on one-hot experiment factors.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::corpus::Factor;
use crate::error::{Error, Result};
use crate::finetune::{ExperimentRecord, Task};

pub const INTERCEPT: &str = "intercept";
pub const DEFAULT_THRESHOLD: f64 = 0.2;

/// Feature groups removed together in an ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FactorGroup {
    Language,
    Method,
    MonoMulti,
    Domain,
    Portion,
}

impl FactorGroup {
    pub fn name(self) -> &'static str {
        match self {
            FactorGroup::Language => "language",
            FactorGroup::Method => "method",
            FactorGroup::MonoMulti => "mono_multi",
            FactorGroup::Domain => "domain",
            FactorGroup::Portion => "portion",
        }
    }

    /// Report column for the ablation without this group.
    pub fn ablation_label(self) -> &'static str {
        match self {
            FactorGroup::Language => "ex-C",
            FactorGroup::Method => "ex-Method",
            FactorGroup::MonoMulti => "ex-M",
            FactorGroup::Domain => "ex-D",
            FactorGroup::Portion => "ex-S",
        }
    }
}

/// Ablations reported next to the full fit, in column order.
pub const ABLATIONS: [FactorGroup; 4] =
    [FactorGroup::Domain, FactorGroup::MonoMulti, FactorGroup::Portion, FactorGroup::Language];

#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    pub columns: Vec<String>,
    /// Owning factor group per column; `None` for the intercept and plain
    /// numeric columns.
    pub groups: Vec<Option<FactorGroup>>,
    /// Row-major `rows × columns`.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl DesignMatrix {
    pub fn new(columns: Vec<String>, groups: Vec<Option<FactorGroup>>, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if groups.len() != columns.len() || x.len() != y.len() * columns.len() {
            return Err(Error::Dimension {
                op: "design matrix",
                lhs: vec![y.len(), columns.len()],
                rhs: vec![x.len(), groups.len()],
            });
        }
        Ok(Self { columns, groups, x, y })
    }

    pub fn rows(&self) -> usize {
        self.y.len()
    }

    /// Intercept plus one indicator per non-reference level of every
    /// categorical feature; the reference is the smallest level.
    pub fn one_hot(features: &[(FactorGroup, Vec<String>)], y: Vec<f64>) -> Result<Self> {
        let n = y.len();
        let mut columns = vec![INTERCEPT.to_string()];
        let mut groups = vec![None];
        let mut indicators: Vec<Vec<f64>> = vec![vec![1.0; n]];
        for (group, values) in features {
            if values.len() != n {
                return Err(Error::Dimension {
                    op: "one_hot",
                    lhs: vec![n],
                    rhs: vec![values.len()],
                });
            }
            let levels: BTreeSet<&String> = values.iter().collect();
            for level in levels.into_iter().skip(1) {
                columns.push(format!("{}={level}", group.name()));
                groups.push(Some(*group));
                indicators.push(values.iter().map(|v| if v == level { 1.0 } else { 0.0 }).collect());
            }
        }
        let k = columns.len();
        let mut x = vec![0.0; n * k];
        for (j, col) in indicators.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                x[i * k + j] = *v;
            }
        }
        Self::new(columns, groups, x, y)
    }

    /// Design for one task × factor slice of the results, F1 scaled to
    /// `[0, 100]`.
    pub fn from_records(records: &[ExperimentRecord]) -> Result<Self> {
        let col = |f: fn(&ExperimentRecord) -> String| records.iter().map(f).collect::<Vec<_>>();
        let features = vec![
            (FactorGroup::Language, col(|r| r.language.to_string())),
            (FactorGroup::Method, col(|r| r.method.to_string())),
            (FactorGroup::MonoMulti, col(|r| r.mono_multi.to_string())),
            (FactorGroup::Domain, col(|r| r.domain.to_string())),
            (FactorGroup::Portion, col(|r| r.portion.to_string())),
        ];
        Self::one_hot(&features, records.iter().map(|r| 100.0 * r.f1).collect())
    }

    /// Copy without the columns of `group`.
    pub fn without(&self, group: FactorGroup) -> Self {
        let keep: Vec<usize> = (0..self.columns.len()).filter(|&j| self.groups[j] != Some(group)).collect();
        let k = self.columns.len();
        let x = (0..self.rows())
            .flat_map(|i| keep.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.x[i * k + j])
            .collect();
        Self {
            columns: keep.iter().map(|&j| self.columns[j].clone()).collect(),
            groups: keep.iter().map(|&j| self.groups[j]).collect(),
            x,
            y: self.y.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionResult {
    pub columns: Vec<String>,
    pub weights: Vec<f64>,
    pub residuals: Vec<f64>,
    pub rmse: f64,
    pub mae: f64,
}

impl RegressionResult {
    pub fn weight(&self, column: &str) -> Option<f64> {
        self.columns.iter().position(|c| c == column).map(|j| self.weights[j])
    }

    pub fn selected_features(&self, threshold: f64) -> Vec<(String, f64)> {
        select_features(self, threshold)
    }
}

/// Ordinary least squares via Householder QR. Columns whose diagonal in R
/// vanishes relative to the largest are reported as collinear.
pub fn fit_ols(design: &DesignMatrix) -> Result<RegressionResult> {
    let (n, k) = (design.rows(), design.columns.len());
    if n < k || k == 0 {
        return Err(Error::RankDeficient(design.columns.clone()));
    }
    let x = DMatrix::from_row_slice(n, k, &design.x);
    let y = DVector::from_column_slice(&design.y);
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = (0..k).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    let tol = scale * 1e-10 * (n.max(k) as f64);
    let collinear: Vec<String> = (0..k)
        .filter(|&j| r[(j, j)].abs() <= tol)
        .map(|j| design.columns[j].clone())
        .collect();
    if !collinear.is_empty() {
        return Err(Error::RankDeficient(collinear));
    }
    let qty = qr.q().transpose() * &y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Numeric("singular triangular factor".into()))?;
    let residuals: Vec<f64> = (&y - &x * &beta).iter().copied().collect();
    let rmse = (residuals.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
    let mae = residuals.iter().map(|e| e.abs()).sum::<f64>() / n as f64;
    debug_assert!(rmse + 1e-12 >= mae);
    Ok(RegressionResult {
        columns: design.columns.clone(),
        weights: beta.iter().copied().collect(),
        residuals,
        rmse,
        mae,
    })
}

/// Refit without one feature group.
pub fn ablate(design: &DesignMatrix, exclude: FactorGroup) -> Result<RegressionResult> {
    fit_ols(&design.without(exclude))
}

/// Non-intercept columns with `|weight| ≥ threshold`, largest first.
pub fn select_features(result: &RegressionResult, threshold: f64) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = result
        .columns
        .iter()
        .zip(&result.weights)
        .filter(|(c, w)| c.as_str() != INTERCEPT && w.abs() >= threshold)
        .map(|(c, w)| (c.clone(), *w))
        .collect();
    out.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then_with(|| a.0.cmp(&b.0)));
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionRow {
    pub task: Task,
    pub factor: Factor,
    pub n_records: usize,
    pub full: std::result::Result<RegressionResult, String>,
    pub ablations: Vec<(FactorGroup, std::result::Result<RegressionResult, String>)>,
}

/// Full and ablated fits for every task × factor slice of the results.
pub fn regression_rows(records: &[ExperimentRecord]) -> Result<Vec<RegressionRow>> {
    let mut slices: BTreeMap<(Task, Factor), Vec<ExperimentRecord>> = BTreeMap::new();
    for r in records {
        slices.entry((r.task, r.factor)).or_default().push(r.clone());
    }
    let mut rows = Vec::new();
    for ((task, factor), rs) in slices {
        let design = DesignMatrix::from_records(&rs)?;
        let full = fit_ols(&design).map_err(|e| e.to_string());
        let ablations = ABLATIONS
            .iter()
            .map(|&g| (g, ablate(&design, g).map_err(|e| e.to_string())))
            .collect();
        rows.push(RegressionRow {
            task,
            factor,
            n_records: rs.len(),
            full,
            ablations,
        });
    }
    Ok(rows)
}

fn metric(r: &std::result::Result<RegressionResult, String>, f: fn(&RegressionResult) -> f64) -> String {
    match r {
        Ok(res) => format!("{:.3}", f(res)),
        Err(_) => "n/a".into(),
    }
}

/// Plain-text table: per task × factor, RMSE and MAE of the full fit and of
/// each ablation, then the selected features with their weights.
pub fn render_regression_report(rows: &[RegressionRow], threshold: f64) -> String {
    let mut out = String::new();
    out.push_str("# Meta-regression of test F1 (scaled to 0-100)\n");
    out.push_str("# encoding: one-hot, smallest level of each factor is the reference; intercept; no regularization\n");
    out.push_str("# errors: in-sample\n");
    let mut header = vec!["task".to_string(), "factor".into(), "n".into()];
    for stat in ["RMSE", "MAE"] {
        header.push(format!("{stat}:in"));
        header.extend(ABLATIONS.iter().map(|g| format!("{stat}:{}", g.ablation_label())));
    }
    header.push("features".into());
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let mut cells = vec![row.task.to_string(), row.factor.to_string(), row.n_records.to_string()];
        for f in [|r: &RegressionResult| r.rmse, |r: &RegressionResult| r.mae] {
            cells.push(metric(&row.full, f));
            cells.extend(row.ablations.iter().map(|(_, r)| metric(r, f)));
        }
        let features = match &row.full {
            Ok(res) => select_features(res, threshold)
                .iter()
                .map(|(c, w)| format!("{c} ({w:.1})"))
                .collect::<Vec<_>>()
                .join("; "),
            Err(e) => format!("fit failed: {e}"),
        };
        cells.push(format!("\"{features}\""));
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}
