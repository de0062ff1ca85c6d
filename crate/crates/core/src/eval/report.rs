use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::Metric;
use super::significance::{paired_significance, relative_gain};
use super::MetricResult;
use crate::error::{Error, Result};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

const CSV_HEADER: &str = "method,metric,value,p_value,gain_pct";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub values: Vec<f64>,
    /// Paired test against the reference; `None` for the reference itself.
    pub p_values: Vec<Option<f64>>,
    /// Gain over the reference in whole percent.
    pub gain_pct: Vec<Option<i64>>,
}

/// Mean metrics per method with significance and gains against a reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub metrics: Vec<Metric>,
    pub reference: Option<String>,
    pub rows: Vec<ReportRow>,
}

impl ComparisonReport {
    /// Rows follow the order of `results`. With a single method there is
    /// nothing to compare and no reference is kept.
    pub fn build(results: &[(String, MetricResult)], reference: Option<&str>) -> Result<Self> {
        let (_, first) = results
            .first()
            .ok_or_else(|| Error::invalid("report needs at least one method"))?;
        let metrics = first.metrics.clone();
        for (name, r) in results {
            if r.metrics != metrics {
                return Err(Error::invalid(format!(
                    "{name} was evaluated on different metrics"
                )));
            }
        }
        let reference = if results.len() > 1 { reference } else { None };
        let base = match reference {
            Some(name) => Some(
                results
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, r)| r)
                    .ok_or_else(|| {
                        Error::invalid(format!("reference method {name} was not run"))
                    })?,
            ),
            None => None,
        };
        let mut rows = Vec::with_capacity(results.len());
        for (name, r) in results {
            let mut p_values = vec![None; metrics.len()];
            let mut gain_pct = vec![None; metrics.len()];
            if let (Some(base), Some(ref_name)) = (base, reference) {
                if name != ref_name {
                    if !r.per_user.keys().eq(base.per_user.keys()) {
                        return Err(Error::invalid(format!(
                            "{name} and {ref_name} were evaluated on different users"
                        )));
                    }
                    for (m, metric) in metrics.iter().enumerate() {
                        let a = r.column(*metric).expect("metric present");
                        let b = base.column(*metric).expect("metric present");
                        p_values[m] = if a.len() >= 2 {
                            Some(paired_significance(&a, &b)?)
                        } else {
                            None
                        };
                        gain_pct[m] = match relative_gain(r.means[m], base.means[m]) {
                            Ok(g) => Some(g.round() as i64),
                            Err(_) => {
                                log::warn!(
                                    "{name} {metric}: reference mean is zero, gain undefined"
                                );
                                None
                            }
                        };
                    }
                }
            }
            rows.push(ReportRow {
                method: name.clone(),
                values: r.means.clone(),
                p_values,
                gain_pct,
            });
        }
        Ok(ComparisonReport {
            metrics,
            reference: reference.map(str::to_string),
            rows,
        })
    }

    /// Index of the best row for metric column `m` (first on ties).
    pub fn best(&self, m: usize) -> usize {
        let mut best = 0;
        for (i, row) in self.rows.iter().enumerate() {
            if row.values[m] > self.rows[best].values[m] {
                best = i;
            }
        }
        best
    }

    fn reference_row(&self) -> Option<&ReportRow> {
        let name = self.reference.as_deref()?;
        self.rows.iter().find(|r| r.method == name)
    }

    /// Significantly better than the reference.
    pub fn is_significant(&self, row: usize, m: usize) -> bool {
        let r = &self.rows[row];
        match (r.p_values[m], self.reference_row()) {
            (Some(p), Some(base)) => p < SIGNIFICANCE_LEVEL && r.values[m] > base.values[m],
            _ => false,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for row in &self.rows {
            for (m, metric) in self.metrics.iter().enumerate() {
                let p = row.p_values[m].map(|p| p.to_string()).unwrap_or_default();
                let g = row.gain_pct[m].map(|g| g.to_string()).unwrap_or_default();
                writeln!(out, "{},{metric},{},{p},{g}", row.method, row.values[m]).unwrap();
            }
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Method |");
        for m in &self.metrics {
            write!(out, " {m} |").unwrap();
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(self.metrics.len()));
        out.push('\n');
        let best: Vec<usize> = (0..self.metrics.len()).map(|m| self.best(m)).collect();
        for (i, row) in self.rows.iter().enumerate() {
            write!(out, "| {} |", row.method).unwrap();
            for (m, &b) in best.iter().enumerate() {
                let mut cell = format!("{:.4}", row.values[m]);
                if self.is_significant(i, m) {
                    cell.push('*');
                }
                if b == i {
                    cell = format!("**{cell}**");
                }
                write!(out, " {cell} |").unwrap();
            }
            out.push('\n');
        }
        if let Some(reference) = &self.reference {
            for row in self.rows.iter().filter(|r| &r.method != reference) {
                write!(out, "| Gain of {} vs. {reference} |", row.method).unwrap();
                for g in &row.gain_pct {
                    match g {
                        Some(g) => write!(out, " {g}% |").unwrap(),
                        None => out.push_str(" n/a |"),
                    }
                }
                out.push('\n');
            }
            writeln!(
                out,
                "\n`*` marks p < {SIGNIFICANCE_LEVEL} in a two-sided paired t-test against {reference}; best values in bold."
            )
            .unwrap();
        }
        out
    }

    /// One line per (method, user) with that user's metric values.
    pub fn per_user_csv(results: &[(String, MetricResult)]) -> String {
        let mut out = String::from("method,user_id");
        if let Some((_, r)) = results.first() {
            for m in &r.metrics {
                write!(out, ",{m}").unwrap();
            }
        }
        out.push('\n');
        for (name, r) in results {
            for (user, values) in &r.per_user {
                write!(out, "{name},{user}").unwrap();
                for v in values {
                    write!(out, ",{v}").unwrap();
                }
                out.push('\n');
            }
        }
        out
    }
}

fn parse_opt<T: std::str::FromStr>(cell: &str, line: usize) -> Result<Option<T>> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse()
        .map(Some)
        .map_err(|_| Error::invalid(format!("report line {line}: bad value {cell:?}")))
}

/// Inverse of [`ComparisonReport::to_csv`]. The reference is the row with
/// no p-values when every other row has them. Lines starting with `#` are
/// ignored.
pub fn parse_report_csv(text: &str) -> Result<ComparisonReport> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#'));
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        _ => return Err(Error::invalid("report CSV header missing")),
    }
    let mut metrics: Vec<Metric> = Vec::new();
    let mut rows: Vec<ReportRow> = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 5 {
            return Err(Error::invalid(format!(
                "report line {}: expected 5 fields",
                idx + 1
            )));
        }
        let metric: Metric = cells[1].parse()?;
        let value: f64 = parse_opt(cells[2], idx + 1)?
            .ok_or_else(|| Error::invalid(format!("report line {}: missing value", idx + 1)))?;
        let p = parse_opt(cells[3], idx + 1)?;
        let g = parse_opt(cells[4], idx + 1)?;
        if rows.last().map(|r| r.method != cells[0]).unwrap_or(true) {
            rows.push(ReportRow {
                method: cells[0].to_string(),
                values: Vec::new(),
                p_values: Vec::new(),
                gain_pct: Vec::new(),
            });
        }
        let first = rows.len() == 1;
        let row = rows.last_mut().unwrap();
        if first {
            metrics.push(metric);
        } else if metrics.get(row.values.len()) != Some(&metric) {
            return Err(Error::invalid(format!(
                "report line {}: metric order differs between methods",
                idx + 1
            )));
        }
        row.values.push(value);
        row.p_values.push(p);
        row.gain_pct.push(g);
    }
    let unflagged: Vec<&ReportRow> = rows
        .iter()
        .filter(|r| {
            r.p_values.iter().all(Option::is_none) && r.gain_pct.iter().all(Option::is_none)
        })
        .collect();
    let reference = (rows.len() > 1 && unflagged.len() == 1).then(|| unflagged[0].method.clone());
    Ok(ComparisonReport {
        metrics,
        reference,
        rows,
    })
}

/// Gains of the full model over each ablated variant, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGains {
    pub metrics: Vec<Metric>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

pub fn ablation_gains(results: &[(String, MetricResult)], full: &str) -> Result<AblationGains> {
    let base = results
        .iter()
        .find(|(n, _)| n == full)
        .map(|(_, r)| r)
        .ok_or_else(|| Error::invalid(format!("ablation results lack the {full} variant")))?;
    let rows = results
        .iter()
        .filter(|(n, _)| n != full)
        .map(|(name, r)| {
            let gains = base
                .means
                .iter()
                .zip(&r.means)
                .map(|(&a, &b)| relative_gain(a, b).ok())
                .collect();
            (name.clone(), gains)
        })
        .collect();
    Ok(AblationGains {
        metrics: base.metrics.clone(),
        rows,
    })
}

impl AblationGains {
    /// Gains to one decimal; a variant scoring zero leaves its cell empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant");
        for m in &self.metrics {
            write!(out, ",{m}").unwrap();
        }
        out.push('\n');
        for (name, gains) in &self.rows {
            out.push_str(name);
            for g in gains {
                match g {
                    Some(g) => write!(out, ",{g:.1}").unwrap(),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn result(rows: &[(&str, [f64; 4])]) -> MetricResult {
        let per_user: BTreeMap<String, Vec<f64>> = rows
            .iter()
            .map(|(u, v)| (u.to_string(), v.to_vec()))
            .collect();
        MetricResult::from_per_user(Metric::standard(&[10, 20]), per_user, 0).unwrap()
    }

    fn two_methods() -> Vec<(String, MetricResult)> {
        vec![
            (
                "centric".to_string(),
                result(&[
                    ("u1", [0.1, 0.1, 0.2, 0.2]),
                    ("u2", [0.2, 0.1, 0.3, 0.2]),
                    ("u3", [0.0, 0.0, 0.1, 0.1]),
                ]),
            ),
            (
                "llm-tp".to_string(),
                result(&[
                    ("u1", [0.5, 0.4, 0.6, 0.5]),
                    ("u2", [0.6, 0.5, 0.7, 0.6]),
                    ("u3", [0.4, 0.35, 0.5, 0.45]),
                ]),
            ),
        ]
    }

    #[test]
    fn single_method_has_no_comparison() {
        let results = &two_methods()[..1];
        let report = ComparisonReport::build(results, Some("centric")).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert!(report.reference.is_none());
        assert!(report.rows[0].p_values.iter().all(Option::is_none));
        assert!(!report.to_markdown().contains("Gain"));
    }

    #[test]
    fn two_methods_get_gains_and_flags() {
        let report = ComparisonReport::build(&two_methods(), Some("centric")).unwrap();
        let row = &report.rows[1];
        assert!(row.gain_pct.iter().all(Option::is_some));
        assert!(row.p_values.iter().all(|p| p.unwrap() < SIGNIFICANCE_LEVEL));
        assert!((0..4).all(|m| report.is_significant(1, m) && !report.is_significant(0, m)));
        assert_eq!(report.best(0), 1);
        let md = report.to_markdown();
        assert!(md.contains("| Gain of llm-tp vs. centric |"));
        assert!(md.contains("**0.5000***"));
        assert!(ComparisonReport::build(&two_methods(), Some("mf")).is_err());
    }

    #[test]
    fn csv_round_trip() {
        for reference in [None, Some("centric")] {
            let report = ComparisonReport::build(&two_methods(), reference).unwrap();
            let back = parse_report_csv(&report.to_csv()).unwrap();
            assert_eq!(back, report);
            let stamped = format!("# config abc seed 1\n{}", report.to_csv());
            assert_eq!(parse_report_csv(&stamped).unwrap(), report);
        }
        assert!(parse_report_csv("nope\n").is_err());
    }

    #[test]
    fn per_user_dump_has_a_line_per_user_and_method() {
        let csv = ComparisonReport::per_user_csv(&two_methods());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "method,user_id,Recall@10,NDCG@10,Recall@20,NDCG@20"
        );
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[4], "llm-tp,u1,0.5,0.4,0.6,0.5");
    }

    #[test]
    fn ablation_gain_table_shape() {
        let variants = ["full", "st", "lt", "nots", "dp"];
        let results: Vec<(String, MetricResult)> = variants
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let x = 0.5 - 0.05 * i as f64;
                (v.to_string(), result(&[("u1", [x; 4]), ("u2", [x; 4])]))
            })
            .collect();
        let gains = ablation_gains(&results, "full").unwrap();
        assert_eq!(gains.rows.len(), 4);
        assert!(gains
            .rows
            .iter()
            .all(|(_, g)| g.len() == 4 && g.iter().all(Option::is_some)));
        let csv = gains.to_csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.lines().nth(1).unwrap().starts_with("st,11.1,"));
        assert!(ablation_gains(&results[1..], "full").is_err());
    }
}
