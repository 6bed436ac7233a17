//! Validation of a metrics summary against reference statistics.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use super::params::{parse_f64, Entries};
use crate::error::{Error, Result};
use crate::metrics::{MetricsSummary, Stat};
use crate::model::DEFAULT_F_STEP_HZ;

/// Relative tolerance applied to standard-deviation rows.
pub const STD_REL_TOLERANCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    Acg,
    RmsDs,
    Cb,
    Kappa,
    Capacity,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Acg, Metric::RmsDs, Metric::Cb, Metric::Kappa, Metric::Capacity];

    pub fn key(self) -> &'static str {
        match self {
            Metric::Acg => "acg_db",
            Metric::RmsDs => "rms_ds_us",
            Metric::Cb => "cb_khz",
            Metric::Kappa => "kappa_db",
            Metric::Capacity => "capacity_gbps",
        }
    }

    fn measured(self, s: &MetricsSummary) -> Option<Stat> {
        match self {
            Metric::Acg => Some(s.acg_db),
            Metric::RmsDs => Some(s.rms_ds_us),
            Metric::Cb => Some(s.cb_khz),
            Metric::Kappa => s.kappa_db,
            Metric::Capacity => s.capacity_gbps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Statistic {
    Mean,
    Std,
}

impl Statistic {
    pub fn key(self) -> &'static str {
        match self {
            Statistic::Mean => "mean",
            Statistic::Std => "std",
        }
    }
}

/// One reference value. A `None` tolerance makes the row informational.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetRow {
    pub metric: Metric,
    pub stat: Statistic,
    pub value: f64,
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ValidationTarget {
    Table3Synthetic,
    Table3Experimental,
    Table4Siso,
    Table4Mimo2x2,
    Custom(Vec<TargetRow>),
}

impl FromStr for ValidationTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table3-synthetic" => Ok(ValidationTarget::Table3Synthetic),
            "table3-experimental" => Ok(ValidationTarget::Table3Experimental),
            "table4-siso" => Ok(ValidationTarget::Table4Siso),
            "table4-2x2" => Ok(ValidationTarget::Table4Mimo2x2),
            _ => Err(Error::InvalidInput(format!(
                "unknown target {s:?}; expected table3-synthetic, table3-experimental, table4-siso, table4-2x2 or custom"
            ))),
        }
    }
}

/// `(metric, mean, std)` columns; `None` where the table has no entry.
type Column = [(Metric, Option<(f64, f64)>); 5];

fn column(v: [Option<(f64, f64)>; 5]) -> Column {
    [
        (Metric::Acg, v[0]),
        (Metric::RmsDs, v[1]),
        (Metric::Cb, v[2]),
        (Metric::Kappa, v[3]),
        (Metric::Capacity, v[4]),
    ]
}

fn mean_tolerance(metric: Metric, kappa_tol: f64) -> Option<f64> {
    match metric {
        Metric::Acg => Some(1.5),
        Metric::RmsDs => Some(0.03),
        Metric::Cb => Some(DEFAULT_F_STEP_HZ / 1e3),
        Metric::Kappa => Some(kappa_tol),
        Metric::Capacity => None,
    }
}

impl ValidationTarget {
    pub fn label(&self) -> &'static str {
        match self {
            ValidationTarget::Table3Synthetic => "table3-synthetic",
            ValidationTarget::Table3Experimental => "table3-experimental",
            ValidationTarget::Table4Siso => "table4-siso",
            ValidationTarget::Table4Mimo2x2 => "table4-2x2",
            ValidationTarget::Custom(_) => "custom",
        }
    }

    pub fn rows(&self) -> Vec<TargetRow> {
        let (col, kappa_tol) = match self {
            ValidationTarget::Table3Synthetic => (
                column([
                    Some((-43.07, 12.53)),
                    Some((0.335, 0.052)),
                    Some((217.71, 53.76)),
                    Some((14.70, 6.64)),
                    Some((1.49, 0.68)),
                ]),
                1.5,
            ),
            ValidationTarget::Table3Experimental => (
                column([
                    Some((-42.30, 9.93)),
                    Some((0.350, 0.226)),
                    Some((293.22, 324.30)),
                    Some((14.26, 7.25)),
                    Some((1.53, 0.74)),
                ]),
                1.5,
            ),
            ValidationTarget::Table4Siso => (
                column([
                    Some((-40.53, 14.99)),
                    Some((0.332, 0.052)),
                    Some((210.87, 51.01)),
                    None,
                    Some((0.76, 0.40)),
                ]),
                1.5,
            ),
            ValidationTarget::Table4Mimo2x2 => (
                column([
                    Some((-43.12, 14.41)),
                    Some((0.330, 0.055)),
                    Some((219.54, 56.20)),
                    Some((18.74, 9.98)),
                    Some((1.31, 0.66)),
                ]),
                2.0,
            ),
            ValidationTarget::Custom(rows) => return rows.clone(),
        };
        col.iter()
            .filter_map(|&(metric, v)| v.map(|mv| (metric, mv)))
            .flat_map(|(metric, (mean, std))| {
                let informational = metric == Metric::Capacity;
                [
                    TargetRow {
                        metric,
                        stat: Statistic::Mean,
                        value: mean,
                        tolerance: mean_tolerance(metric, kappa_tol),
                    },
                    TargetRow {
                        metric,
                        stat: Statistic::Std,
                        value: std,
                        tolerance: (!informational).then_some(STD_REL_TOLERANCE * std),
                    },
                ]
            })
            .collect()
    }

    /// Reads `<metric>.<mean|std> = value` lines with optional
    /// `<metric>.<mean|std>.tolerance = value`; rows without a tolerance are
    /// informational.
    pub fn parse_custom(text: &str) -> Result<Self> {
        let allowed = |k: &str| {
            let mut parts = k.split('.');
            let metric_ok = parts.next().is_some_and(|m| Metric::ALL.iter().any(|x| x.key() == m));
            let stat_ok = parts.next().is_some_and(|s| s == "mean" || s == "std");
            let tail_ok = match parts.next() {
                None => true,
                Some(t) => t == "tolerance" && parts.next().is_none(),
            };
            metric_ok && stat_ok && tail_ok
        };
        let e = Entries::parse(text, &allowed)?;
        let mut rows = Vec::new();
        for metric in Metric::ALL {
            for stat in [Statistic::Mean, Statistic::Std] {
                let key = format!("{}.{}", metric.key(), stat.key());
                let tol_key = format!("{key}.tolerance");
                if !e.has(&key) {
                    if e.has(&tol_key) {
                        return Err(Error::Parameter(format!("{tol_key} given without {key}")));
                    }
                    continue;
                }
                let tolerance = if e.has(&tol_key) {
                    let (v, line) = e.raw(&tol_key)?;
                    let t = parse_f64(v, line)?;
                    if t < 0.0 {
                        return Err(Error::Parse {
                            line,
                            message: "tolerance must be non-negative".into(),
                        });
                    }
                    Some(t)
                } else {
                    None
                };
                rows.push(TargetRow {
                    metric,
                    stat,
                    value: e.num(&key)?,
                    tolerance,
                });
            }
        }
        if rows.is_empty() {
            return Err(Error::InvalidInput("custom target file defines no rows".into()));
        }
        Ok(ValidationTarget::Custom(rows))
    }

    pub fn read_custom(path: &Path) -> Result<Self> {
        Self::parse_custom(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowStatus {
    Pass,
    Fail,
    /// Reported without a pass/fail decision.
    Informational,
    /// Not evaluated on this grid.
    Skipped,
}

impl fmt::Display for RowStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RowStatus::Pass => "pass",
            RowStatus::Fail => "fail",
            RowStatus::Informational => "info",
            RowStatus::Skipped => "skipped",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub target: TargetRow,
    pub measured: Option<f64>,
    pub status: RowStatus,
    pub note: Option<String>,
}

/// Describes the run that produced the measured values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnvironmentStamp {
    pub seed: Option<u64>,
    pub scheme: String,
    pub n_freq: usize,
    pub f_step_hz: f64,
    pub decimation: usize,
    pub n_realizations: usize,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub target: String,
    pub stamp: EnvironmentStamp,
    pub rows: Vec<ReportRow>,
}

impl ValidationReport {
    /// Compares `summary` with every row of `target`. CB rows are skipped when
    /// the grid is coarser than the reference bin spacing.
    pub fn evaluate(target: &ValidationTarget, summary: &MetricsSummary, stamp: EnvironmentStamp) -> Self {
        let coarse = stamp.f_step_hz > DEFAULT_F_STEP_HZ * (1.0 + 1e-9);
        let rows = target
            .rows()
            .into_iter()
            .map(|t| {
                let measured = t.metric.measured(summary).map(|s| match t.stat {
                    Statistic::Mean => s.mean,
                    Statistic::Std => s.std,
                });
                let (status, note) = if t.metric == Metric::Cb && coarse {
                    (RowStatus::Skipped, Some("grid coarser than the reference bin spacing".to_string()))
                } else {
                    match (measured, t.tolerance) {
                        (None, None) => (RowStatus::Informational, Some("not measured".to_string())),
                        (None, Some(_)) => (RowStatus::Fail, Some("not measured".to_string())),
                        (Some(_), None) => (RowStatus::Informational, None),
                        (Some(m), Some(tol)) if m.is_finite() && (m - t.value).abs() <= tol => {
                            (RowStatus::Pass, None)
                        }
                        (Some(_), Some(_)) => (RowStatus::Fail, None),
                    }
                };
                ReportRow {
                    target: t,
                    measured,
                    status,
                    note,
                }
            })
            .collect();
        ValidationReport {
            target: target.label().to_string(),
            stamp,
            rows,
        }
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.status != RowStatus::Fail)
    }

    pub fn to_text(&self) -> String {
        let s = &self.stamp;
        let mut out = String::new();
        writeln!(out, "validation against {}", self.target).ok();
        let seed = s.seed.map_or("-".to_string(), |v| v.to_string());
        writeln!(
            out,
            "source {} | scheme {} | seed {seed} | realizations {} | bins {} | decimation {}",
            s.source, s.scheme, s.n_realizations, s.n_freq, s.decimation
        )
        .ok();
        writeln!(
            out,
            "{:<20} {:>12} {:>12} {:>12} {:>8}",
            "row", "target", "measured", "tolerance", "status"
        )
        .ok();
        for r in &self.rows {
            let name = format!("{}.{}", r.target.metric.key(), r.target.stat.key());
            let measured = r.measured.map_or("-".to_string(), |m| format!("{m:.4}"));
            let tol = r.target.tolerance.map_or("-".to_string(), |t| format!("±{t:.4}"));
            write!(
                out,
                "{name:<20} {:>12.4} {measured:>12} {tol:>12} {:>8}",
                r.target.value, r.status
            )
            .ok();
            if let Some(n) = &r.note {
                write!(out, "  ({n})").ok();
            }
            out.push('\n');
        }
        writeln!(out, "overall {}", if self.passed() { "PASS" } else { "FAIL" }).ok();
        out
    }

    pub fn to_key_value(&self) -> String {
        let s = &self.stamp;
        let mut out = String::new();
        writeln!(out, "target = {}", self.target).ok();
        writeln!(out, "source = {}", s.source).ok();
        writeln!(out, "scheme = {}", s.scheme).ok();
        if let Some(seed) = s.seed {
            writeln!(out, "seed = {seed}").ok();
        }
        writeln!(out, "n_realizations = {}", s.n_realizations).ok();
        writeln!(out, "n_freq = {}", s.n_freq).ok();
        writeln!(out, "decimation = {}", s.decimation).ok();
        for r in &self.rows {
            let name = format!("{}.{}", r.target.metric.key(), r.target.stat.key());
            writeln!(out, "{name}.target = {:?}", r.target.value).ok();
            if let Some(m) = r.measured {
                writeln!(out, "{name}.measured = {m:?}").ok();
            }
            if let Some(t) = r.target.tolerance {
                writeln!(out, "{name}.tolerance = {t:?}").ok();
            }
            writeln!(out, "{name}.status = {}", r.status).ok();
        }
        writeln!(out, "overall = {}", if self.passed() { "pass" } else { "fail" }).ok();
        out
    }
}
