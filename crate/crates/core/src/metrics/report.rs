//! Per-class and averaged metrics, their presentation, and comparison
//! against reference values.
//!
//! JSON layout of [`MetricsReport`] (all metric values are percentages at
//! full precision, `null` when undefined):
//!
//! ```text
//! {
//!   "classes": [ { "class": "Scab",
//!                  "counts": { "tp": 353, "fp": 15, "fn": 7, "tn": 1585 },
//!                  "accuracy": 98.05…, "precision": 95.92…, "recall": 98.05…,
//!                  "specificity": 99.06…, "f_measure": 96.97… }, … ],
//!   "average": { "accuracy": …, "precision": …, "recall": …, "specificity": …, "f_measure": … },
//!   "overall_accuracy": 96.98…,
//!   "correct": 1901,
//!   "total": 1960,
//!   "notes": [ "…" ]
//! }
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::confusion::{BinaryCounts, ConfusionMatrix};

pub const METRIC_NAMES: [&str; 5] = ["accuracy", "precision", "recall", "specificity", "f_measure"];

/// Largest gap between a presented value and its reference that is not
/// reported as a discrepancy.
pub const DEFAULT_TOLERANCE: f64 = 0.05;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassValues {
    /// Share of this class's samples predicted correctly (TP / row sum).
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub f_measure: Option<f64>,
}

impl ClassValues {
    pub fn get(&self, metric: &str) -> Option<Option<f64>> {
        Some(match metric {
            "accuracy" => self.accuracy,
            "precision" => self.precision,
            "recall" => self.recall,
            "specificity" => self.specificity,
            "f_measure" => self.f_measure,
            _ => return None,
        })
    }

    fn all(&self) -> [Option<f64>; 5] {
        [self.accuracy, self.precision, self.recall, self.specificity, self.f_measure]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    pub counts: BinaryCounts,
    #[serde(flatten)]
    pub values: ClassValues,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<ClassReport>,
    /// Unweighted mean over classes; undefined when any class value is.
    pub average: ClassValues,
    pub overall_accuracy: f64,
    pub correct: u64,
    pub total: u64,
    #[serde(default)]
    pub notes: Vec<String>,
}

fn percent(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

pub fn compute_report(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Validation("confusion matrix is empty (total 0)".into()));
    }
    let mut classes = Vec::with_capacity(cm.num_classes());
    let mut notes = Vec::new();
    for (k, name) in cm.classes().iter().enumerate() {
        let c = cm.binary_counts(k)?;
        let precision = percent(c.tp, c.tp + c.fp);
        let recall = percent(c.tp, c.tp + c.fn_);
        let f_measure = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        let values = ClassValues {
            accuracy: percent(c.tp, cm.row_sum(k)),
            precision,
            recall,
            specificity: percent(c.tn, c.tn + c.fp),
            f_measure,
        };
        for (metric, v) in METRIC_NAMES.iter().zip(values.all()) {
            if v.is_none() {
                notes.push(format!("{name}: {metric} undefined (zero denominator)"));
            }
        }
        classes.push(ClassReport {
            class: name.clone(),
            counts: c,
            values,
        });
    }
    let mean = |pick: fn(&ClassValues) -> Option<f64>| -> Option<f64> {
        let vals: Option<Vec<f64>> = classes.iter().map(|c| pick(&c.values)).collect();
        vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };
    let average = ClassValues {
        accuracy: mean(|v| v.accuracy),
        precision: mean(|v| v.precision),
        recall: mean(|v| v.recall),
        specificity: mean(|v| v.specificity),
        f_measure: mean(|v| v.f_measure),
    };
    let correct = cm.trace();
    Ok(MetricsReport {
        classes,
        average,
        overall_accuracy: 100.0 * correct as f64 / total as f64,
        correct,
        total,
        notes,
    })
}

/// How percentages are cut to one decimal for display.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rounding {
    /// Drop digits past the first decimal (98.06 → 98.0).
    #[default]
    Truncate,
    /// Round half away from zero (98.06 → 98.1).
    Nearest,
}

impl FromStr for Rounding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "truncate" => Ok(Rounding::Truncate),
            "nearest" => Ok(Rounding::Nearest),
            other => Err(Error::Validation(format!(
                "unknown rounding {other:?} (expected truncate or nearest)"
            ))),
        }
    }
}

impl Rounding {
    /// One decimal. Values a hair below a boundary (float noise, < 1e-9)
    /// truncate as if exact.
    pub fn present(self, v: f64) -> f64 {
        let scaled = v * 10.0;
        let cut = match self {
            Rounding::Truncate => (scaled + 1e-9).floor(),
            Rounding::Nearest => scaled.round(),
        };
        cut / 10.0
    }
}

/// Overall accuracy is always shown to two decimals, rounded to nearest.
pub fn present_overall(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn cell(v: Option<f64>, rounding: Rounding) -> String {
    v.map_or_else(|| "n/a".to_owned(), |x| format!("{:.1}", rounding.present(x)))
}

impl MetricsReport {
    pub fn class_values(&self, name: &str) -> Option<&ClassValues> {
        self.classes.iter().find(|c| c.class == name).map(|c| &c.values)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            detail: e.to_string(),
        })
    }

    /// Table with one row per class, the average row, then overall accuracy
    /// and notes.
    pub fn render_text(&self, rounding: Rounding) -> String {
        let width = self
            .classes
            .iter()
            .map(|c| c.class.len())
            .max()
            .unwrap_or(0)
            .max("Average".len());
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>9}  {:>6}  {:>11}  {:>9}",
            "Class", "Accuracy", "Precision", "Recall", "Specificity", "F-measure"
        );
        let mut row = |name: &str, v: &ClassValues| {
            let _ = writeln!(
                out,
                "{:<width$}  {:>8}  {:>9}  {:>6}  {:>11}  {:>9}",
                name,
                cell(v.accuracy, rounding),
                cell(v.precision, rounding),
                cell(v.recall, rounding),
                cell(v.specificity, rounding),
                cell(v.f_measure, rounding),
            );
        };
        for c in &self.classes {
            row(&c.class, &c.values);
        }
        row("Average", &self.average);
        let _ = writeln!(
            out,
            "\nOverall accuracy: {:.2}% ({}/{})",
            present_overall(self.overall_accuracy),
            self.correct,
            self.total
        );
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }

    /// Presented value for a reference key such as `Scab.precision`,
    /// `average.recall` or `overall_accuracy`. `Ok(None)` means undefined.
    pub fn presented(&self, key: &str, rounding: Rounding) -> Result<Option<f64>> {
        if key == "overall_accuracy" {
            return Ok(Some(present_overall(self.overall_accuracy)));
        }
        let unknown = || Error::Validation(format!("unknown metric key {key:?}"));
        let (scope, metric) = key.rsplit_once('.').ok_or_else(unknown)?;
        let values = if scope == "average" {
            &self.average
        } else {
            self.class_values(scope).ok_or_else(unknown)?
        };
        let v = values.get(metric).ok_or_else(unknown)?;
        Ok(v.map(|x| rounding.present(x)))
    }

    /// Compare presented values with `reference`; each gap above
    /// `tolerance` is returned and appended to `notes`.
    pub fn note_discrepancies(
        &mut self,
        reference: &Reference,
        rounding: Rounding,
        tolerance: f64,
    ) -> Result<Vec<Discrepancy>> {
        let mut found = Vec::new();
        for (key, &expected) in &reference.values {
            let got = self.presented(key, rounding)?;
            let d = match got {
                Some(g) if (g - expected).abs() <= tolerance + 1e-9 => continue,
                _ => Discrepancy {
                    key: key.clone(),
                    computed: got,
                    reference: expected,
                },
            };
            self.notes.push(d.to_string());
            found.push(d);
        }
        Ok(found)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discrepancy {
    pub key: String,
    pub computed: Option<f64>,
    pub reference: f64,
}

impl std::fmt::Display for Discrepancy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.computed {
            Some(c) => write!(
                f,
                "{}: computed {} differs from reference {} by {:.2}",
                self.key,
                c,
                self.reference,
                (c - self.reference).abs()
            ),
            None => write!(f, "{}: undefined, reference {}", self.key, self.reference),
        }
    }
}

/// Published or expected values, one `key = value` per line; `#` starts a
/// comment. Keys: `overall_accuracy`, `<class>.<metric>`, `average.<metric>`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Reference {
    pub values: BTreeMap<String, f64>,
}

impl Reference {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |detail: String| Error::Parse { line: i + 1, detail };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            let value: f64 = v
                .parse()
                .ok()
                .filter(|x: &f64| x.is_finite())
                .ok_or_else(|| err(format!("{v:?} is not a number")))?;
            if values.insert(k.to_owned(), value).is_some() {
                return Err(err(format!("duplicate key {k:?}")));
            }
        }
        Ok(Self { values })
    }
}
