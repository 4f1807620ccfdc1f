use std::fmt::Write;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricMode {
    #[serde(rename = "3d")]
    Volume3d,
    #[serde(rename = "slicewise2d")]
    Slicewise2d,
}

impl MetricMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricMode::Volume3d => "3d",
            MetricMode::Slicewise2d => "slicewise2d",
        }
    }
}

/// Metrics for one label; `None` marks an undefined value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: u8,
    pub dice: Option<f64>,
    pub hd_mm: Option<f64>,
    pub mad_mm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub slice: usize,
    pub label: u8,
    pub dice: f64,
    pub hd_mm: Option<f64>,
    pub mad_mm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: MetricMode,
    pub labels: Vec<LabelMetrics>,
    /// Mean over labels; undefined when any label is undefined.
    pub mean: LabelMetrics,
    pub per_slice: Vec<SliceMetrics>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Option<Vec<f64>> = values.collect();
    vals.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

impl MetricsReport {
    pub fn new(mode: MetricMode, labels: Vec<LabelMetrics>, per_slice: Vec<SliceMetrics>) -> Self {
        let mean = LabelMetrics {
            label: 0,
            dice: mean_of(labels.iter().map(|l| l.dice)),
            hd_mm: mean_of(labels.iter().map(|l| l.hd_mm)),
            mad_mm: mean_of(labels.iter().map(|l| l.mad_mm)),
        };
        Self {
            mode,
            labels,
            mean,
            per_slice,
        }
    }
}

/// One line of the evaluation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub case: String,
    pub method: String,
    /// A label number or `mean`.
    pub label: String,
    pub dice: Option<f64>,
    pub hd_mm: Option<f64>,
    pub mad_mm: Option<f64>,
    pub mode: MetricMode,
}

impl EvalRow {
    pub fn from_report(case: &str, method: &str, report: &MetricsReport) -> Vec<EvalRow> {
        report
            .labels
            .iter()
            .map(|l| (l.label.to_string(), l))
            .chain(std::iter::once(("mean".to_string(), &report.mean)))
            .map(|(label, m)| EvalRow {
                case: case.to_string(),
                method: method.to_string(),
                label,
                dice: m.dice,
                hd_mm: m.hd_mm,
                mad_mm: m.mad_mm,
                mode: report.mode,
            })
            .collect()
    }
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => "undefined".to_string(),
    }
}

pub fn evaluation_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from("case,method,label,dice,hd_mm,mad_mm,mode\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.case,
            r.method,
            r.label,
            cell(r.dice),
            cell(r.hd_mm),
            cell(r.mad_mm),
            r.mode.as_str()
        )
        .expect("writing to a String");
    }
    out
}

/// Metric blocks (DICE, HD, MAD) with one row per method and one column per
/// test group, filled from the `mean` rows. Several cases in one group are
/// averaged.
pub fn evaluation_markdown(rows: &[EvalRow], methods: &[&str], groups: &[(&str, Vec<String>)]) -> String {
    let mut out = String::new();
    write!(out, "| Metric | Method |").unwrap();
    for (g, _) in groups {
        write!(out, " {g} |").unwrap();
    }
    out.push('\n');
    out.push_str("|---|---|");
    for _ in groups {
        out.push_str("---:|");
    }
    out.push('\n');
    let blocks: [(&str, fn(&EvalRow) -> Option<f64>, usize); 3] =
        [("DICE", |r| r.dice, 3), ("HD (mm)", |r| r.hd_mm, 3), ("MAD (mm)", |r| r.mad_mm, 3)];
    for (name, get, prec) in blocks {
        for (mi, m) in methods.iter().enumerate() {
            let label = if mi == 0 { name } else { "" };
            write!(out, "| {label} | {m} |").unwrap();
            for (_, cases) in groups {
                let vals = rows
                    .iter()
                    .filter(|r| r.method == *m && r.label == "mean" && cases.contains(&r.case))
                    .map(get);
                match mean_of(vals) {
                    Some(v) => write!(out, " {v:.prec$} |").unwrap(),
                    None => write!(out, " undefined |").unwrap(),
                }
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_marks_undefined() {
        let report = MetricsReport::new(
            MetricMode::Volume3d,
            vec![LabelMetrics {
                label: 1,
                dice: Some(1.0),
                hd_mm: None,
                mad_mm: None,
            }],
            vec![],
        );
        let csv = evaluation_csv(&EvalRow::from_report("c", "U-Net", &report));
        assert_eq!(
            csv,
            "case,method,label,dice,hd_mm,mad_mm,mode\nc,U-Net,1,1.000000,undefined,undefined,3d\nc,U-Net,mean,1.000000,undefined,undefined,3d\n"
        );
    }

    #[test]
    fn markdown_has_block_per_metric() {
        let report = MetricsReport::new(
            MetricMode::Volume3d,
            vec![LabelMetrics {
                label: 1,
                dice: Some(0.5),
                hd_mm: Some(2.0),
                mad_mm: Some(1.0),
            }],
            vec![],
        );
        let rows = EvalRow::from_report("f", "JLF", &report);
        let md = evaluation_markdown(&rows, &["JLF"], &[("Female", vec!["f".into()])]);
        assert!(md.contains("| DICE | JLF | 0.500 |"));
        assert!(md.contains("| HD (mm) | JLF | 2.000 |"));
        assert!(md.contains("| MAD (mm) | JLF | 1.000 |"));
    }
}
