//! Per-class evaluation reports and their CSV / JSON / text renderings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::distance::DirectedDistances;
use super::mask::BinaryMask;
use super::overlap::{dice, volume_ratio};
use super::stats::{paired_t_test, MeanStd, PairedTTestResult};
use crate::error::{Error, Result};
use crate::volume_io::{LabelVolume, NUM_CLASSES, SEGMENT_NAMES};

pub const FLAG_ABSENT_IN_PREDICTION: &str = "absent_in_prediction";
pub const FLAG_ABSENT_IN_TRUTH: &str = "absent_in_truth";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: u8,
    pub segment: String,
    pub dice: f64,
    /// `None` when either mask is empty.
    pub msd_mm: Option<f64>,
    pub hd95_mm: Option<f64>,
    /// Maximum Hausdorff distance, auxiliary.
    pub hausdorff_mm: Option<f64>,
    /// `None` when the truth mask is empty.
    pub vr: Option<f64>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub dice: Option<MeanStd>,
    pub msd_mm: Option<MeanStd>,
    pub hd95_mm: Option<MeanStd>,
    pub vr: Option<MeanStd>,
}

impl MetricSummary {
    fn from_rows<'a>(rows: impl Iterator<Item = [Option<f64>; 4]> + 'a) -> Self {
        let mut cols: [Vec<f64>; 4] = Default::default();
        for r in rows {
            for (c, v) in cols.iter_mut().zip(r) {
                if let Some(v) = v {
                    c.push(v);
                }
            }
        }
        MetricSummary {
            dice: MeanStd::of(&cols[0]),
            msd_mm: MeanStd::of(&cols[1]),
            hd95_mm: MeanStd::of(&cols[2]),
            vr: MeanStd::of(&cols[3]),
        }
    }

    pub fn get(&self, metric: Metric) -> Option<MeanStd> {
        match metric {
            Metric::Dice => self.dice,
            Metric::Msd => self.msd_mm,
            Metric::Hd95 => self.hd95_mm,
            Metric::Vr => self.vr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Dice,
    Msd,
    Hd95,
    Vr,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Dice, Metric::Msd, Metric::Hd95, Metric::Vr];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Dice => "Dice",
            Metric::Msd => "MSD (mm)",
            Metric::Hd95 => "HD95 (mm)",
            Metric::Vr => "VR",
        }
    }

    fn of(self, c: &ClassMetrics) -> Option<f64> {
        match self {
            Metric::Dice => Some(c.dice),
            Metric::Msd => c.msd_mm,
            Metric::Hd95 => c.hd95_mm,
            Metric::Vr => c.vr,
        }
    }
}

/// Metrics of one predicted volume against its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub case_id: String,
    /// Classes present in at least one of the two volumes, ascending.
    pub classes: Vec<ClassMetrics>,
    /// Classes empty in both volumes.
    pub skipped_classes: Vec<u8>,
    /// Mean ± std over `classes`.
    pub summary: MetricSummary,
}

fn class_metrics(pred: &LabelVolume, truth: &LabelVolume, class: u8) -> Result<ClassMetrics> {
    let x = BinaryMask::from_labels(pred, class);
    let y = BinaryMask::from_labels(truth, class);
    let mut flags = Vec::new();
    let (nx, ny) = (x.count(), y.count());
    if nx == 0 {
        flags.push(FLAG_ABSENT_IN_PREDICTION.to_string());
    }
    if ny == 0 {
        flags.push(FLAG_ABSENT_IN_TRUTH.to_string());
    }
    let vr = match volume_ratio(&x, &y) {
        Ok(v) => Some(v),
        Err(Error::EmptyReference) => None,
        Err(e) => return Err(e),
    };
    let (msd, hd95, hd) = if nx > 0 && ny > 0 {
        let dd = DirectedDistances::compute(&x, &y, truth.spacing())?;
        (
            Some(dd.mean_surface_distance()),
            Some(dd.percentile(95.0)),
            Some(dd.hausdorff()),
        )
    } else {
        (None, None, None)
    };
    Ok(ClassMetrics {
        class,
        segment: SEGMENT_NAMES[class as usize - 1].to_string(),
        dice: dice(&x, &y)?,
        msd_mm: msd,
        hd95_mm: hd95,
        hausdorff_mm: hd,
        vr,
        flags,
    })
}

/// Dice, MSD, HD95 and VR for every foreground class 1..=9.
pub fn build_report(pred: &LabelVolume, truth: &LabelVolume) -> Result<MetricsReport> {
    build_case_report("", pred, truth)
}

pub fn build_case_report(case_id: &str, pred: &LabelVolume, truth: &LabelVolume) -> Result<MetricsReport> {
    pred.same_grid(truth)?;
    let pc = pred.class_counts();
    let tc = truth.class_counts();
    let mut classes = Vec::new();
    let mut skipped = Vec::new();
    for class in 1..NUM_CLASSES as u8 {
        if pc[class as usize] == 0 && tc[class as usize] == 0 {
            skipped.push(class);
        } else {
            classes.push(class_metrics(pred, truth, class)?);
        }
    }
    let summary = MetricSummary::from_rows(classes.iter().map(|c| Metric::ALL.map(|m| m.of(c))));
    Ok(MetricsReport {
        case_id: case_id.to_string(),
        classes,
        skipped_classes: skipped,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class: u8,
    pub segment: String,
    pub metrics: MetricSummary,
}

/// Reports of several cases with per-class and overall mean ± std over cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub cases: Vec<MetricsReport>,
    pub per_class: Vec<ClassSummary>,
    /// Over the per-case class means.
    pub overall: MetricSummary,
}

impl DatasetReport {
    pub fn new(cases: Vec<MetricsReport>) -> Self {
        let per_class = (1..NUM_CLASSES as u8)
            .filter_map(|class| {
                let rows: Vec<&ClassMetrics> = cases
                    .iter()
                    .filter_map(|r| r.classes.iter().find(|c| c.class == class))
                    .collect();
                if rows.is_empty() {
                    return None;
                }
                Some(ClassSummary {
                    class,
                    segment: SEGMENT_NAMES[class as usize - 1].to_string(),
                    metrics: MetricSummary::from_rows(rows.into_iter().map(|c| Metric::ALL.map(|m| m.of(c)))),
                })
            })
            .collect();
        let overall = MetricSummary::from_rows(
            cases
                .iter()
                .map(|r| Metric::ALL.map(|m| r.summary.get(m).map(|s| s.mean))),
        );
        DatasetReport {
            cases,
            per_class,
            overall,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// One row per class plus a summary row; `_std` columns are over cases.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,segment,n_cases,dice,dice_std,msd_mm,msd_std,hd95_mm,hd95_std,vr,vr_std\n");
        let cell = |m: Option<MeanStd>| match m {
            Some(m) => format!("{:.6},{:.6}", m.mean, m.std),
            None => ",".to_string(),
        };
        let mut row = |class: &str, segment: &str, s: &MetricSummary| {
            let n = s.dice.map_or(0, |d| d.n);
            let _ = writeln!(
                out,
                "{class},{segment},{n},{},{},{},{}",
                cell(s.dice),
                cell(s.msd_mm),
                cell(s.hd95_mm),
                cell(s.vr)
            );
        };
        for c in &self.per_class {
            row(&c.class.to_string(), &c.segment, &c.metrics);
        }
        row("summary", "mean", &self.overall);
        out
    }

    /// Aligned "mean ± std" table with three decimals.
    pub fn to_text_table(&self) -> String {
        let cell = |m: Option<MeanStd>| m.map_or_else(|| "n/a".to_string(), |m| m.to_string());
        let mut out = format!("{:<8}", "Segment");
        for m in Metric::ALL {
            let _ = write!(out, "  {:<17}", m.label());
        }
        out = out.trim_end().to_string();
        out.push('\n');
        let mut line = |name: &str, s: &MetricSummary| {
            let mut l = format!("{name:<8}");
            for m in Metric::ALL {
                let _ = write!(l, "  {:<17}", cell(s.get(m)));
            }
            out.push_str(l.trim_end());
            out.push('\n');
        };
        for c in &self.per_class {
            line(&c.segment, &c.metrics);
        }
        line("Mean", &self.overall);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub metric: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub n_pairs: usize,
    pub test: Option<PairedTTestResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// "cases" when paired over shared case IDs, "classes" when paired over the
    /// per-class means of single-case reports.
    pub paired_over: String,
    pub metrics: Vec<MetricComparison>,
}

/// Paired t-tests of each metric between two evaluations of the same cases.
pub fn compare_reports(a: &DatasetReport, b: &DatasetReport) -> Result<Comparison> {
    let shared: Vec<(&MetricsReport, &MetricsReport)> = a
        .cases
        .iter()
        .filter_map(|ra| b.cases.iter().find(|rb| rb.case_id == ra.case_id).map(|rb| (ra, rb)))
        .collect();
    let by_cases = shared.len() >= 2;
    let mut metrics = Vec::new();
    for m in Metric::ALL {
        let pairs: Vec<(f64, f64)> = if by_cases {
            shared
                .iter()
                .filter_map(|(ra, rb)| Some((ra.summary.get(m)?.mean, rb.summary.get(m)?.mean)))
                .collect()
        } else {
            a.per_class
                .iter()
                .filter_map(|ca| {
                    let cb = b.per_class.iter().find(|cb| cb.class == ca.class)?;
                    Some((ca.metrics.get(m)?.mean, cb.metrics.get(m)?.mean))
                })
                .collect()
        };
        let (xa, xb): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
        let test = match paired_t_test(&xa, &xb) {
            Ok(t) => Some(t),
            Err(Error::TooFewPairs(_)) => None,
            Err(e) => return Err(e),
        };
        metrics.push(MetricComparison {
            metric: m.label().to_string(),
            mean_a: mean(&xa),
            mean_b: mean(&xb),
            n_pairs: pairs.len(),
            test,
        });
    }
    Ok(Comparison {
        paired_over: if by_cases { "cases" } else { "classes" }.to_string(),
        metrics,
    })
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<10}  {:>8}  {:>8}  {:>4}  {:>9}  {:>9}\n",
            "Metric", "A", "B", "n", "t", "p"
        );
        for m in &self.metrics {
            let (t, p) = match &m.test {
                Some(t) => (format!("{:.3}", t.t_statistic), format!("{:.4}", t.p_value)),
                None => ("n/a".into(), "n/a".into()),
            };
            let _ = writeln!(
                out,
                "{:<10}  {:>8.3}  {:>8.3}  {:>4}  {:>9}  {:>9}",
                m.metric, m.mean_a, m.mean_b, m.n_pairs, t, p
            );
        }
        let _ = writeln!(out, "paired over {}", self.paired_over);
        out
    }
}
