//! Confusion matrices and their CSV form.
//!
//! ```text
//! ,Scab,Alternaria,...        header: empty corner cell, then class names
//! Scab,353,2,...              one row per true class, labelled
//! ```
//!
//! The corner cell and the row labels may be omitted together (header of
//! bare class names, rows of bare counts). Blank lines and lines starting
//! with `#` are ignored.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns are predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: Vec<String>,
    counts: Vec<u64>,
}

/// One-vs-rest counts for a single class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl BinaryCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

fn check_names(classes: &[String]) -> Result<()> {
    if classes.is_empty() {
        return Err(Error::Validation("confusion matrix needs at least one class".into()));
    }
    for (i, c) in classes.iter().enumerate() {
        if c.trim().is_empty() {
            return Err(Error::Validation(format!("class {i} has an empty name")));
        }
        if classes[..i].contains(c) {
            return Err(Error::Validation(format!("duplicate class {c:?}")));
        }
    }
    Ok(())
}

impl ConfusionMatrix {
    pub fn zeros(classes: Vec<String>) -> Result<Self> {
        check_names(&classes)?;
        let k = classes.len();
        Ok(Self {
            classes,
            counts: vec![0; k * k],
        })
    }

    pub fn from_rows(classes: Vec<String>, rows: Vec<Vec<u64>>) -> Result<Self> {
        check_names(&classes)?;
        let k = classes.len();
        if rows.len() != k || rows.iter().any(|r| r.len() != k) {
            return Err(Error::Validation(format!(
                "confusion matrix for {k} classes must be {k}×{k}"
            )));
        }
        Ok(Self {
            classes,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.num_classes() + predicted]
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let k = self.num_classes();
        if truth >= k || predicted >= k {
            return Err(Error::Validation(format!(
                "class index ({truth}, {predicted}) out of range for {k} classes"
            )));
        }
        self.counts[truth * k + predicted] += 1;
        Ok(())
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks_exact(self.num_classes())
    }

    pub fn row_sum(&self, k: usize) -> u64 {
        (0..self.num_classes()).map(|j| self.get(k, j)).sum()
    }

    pub fn column_sum(&self, k: usize) -> u64 {
        (0..self.num_classes()).map(|i| self.get(i, k)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|k| self.get(k, k)).sum()
    }

    pub fn binary_counts(&self, k: usize) -> Result<BinaryCounts> {
        if k >= self.num_classes() {
            return Err(Error::Validation(format!(
                "class index {k} out of range for {} classes",
                self.num_classes()
            )));
        }
        let tp = self.get(k, k);
        let fp = self.column_sum(k) - tp;
        let fn_ = self.row_sum(k) - tp;
        let tn = self.total() - tp - fp - fn_;
        Ok(BinaryCounts { tp, fp, fn_, tn })
    }

    /// Reorder classes: new class `i` is old class `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let k = self.num_classes();
        let mut seen = vec![false; k];
        if order.len() != k || order.iter().any(|&o| o >= k || std::mem::replace(&mut seen[o], true)) {
            return Err(Error::Validation(format!("{order:?} is not a permutation of 0..{k}")));
        }
        let classes = order.iter().map(|&o| self.classes[o].clone()).collect();
        let rows = order
            .iter()
            .map(|&i| order.iter().map(|&j| self.get(i, j)).collect())
            .collect();
        Self::from_rows(classes, rows)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push(',');
        out.push_str(&self.classes.join(","));
        out.push('\n');
        for (name, row) in self.classes.iter().zip(self.rows()) {
            out.push_str(name);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut header: Option<(Vec<String>, bool)> = None;
        let mut rows: Vec<Vec<u64>> = Vec::new();
        let mut last_line = 0;
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line() as usize),
                detail: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            last_line = line;
            let fields: Vec<&str> = rec.iter().collect();
            if fields.iter().all(|f| f.is_empty()) {
                continue;
            }
            let err = |detail: String| Error::Parse { line, detail };
            let Some((classes, labelled)) = &header else {
                let labelled = fields[0].is_empty();
                let names: Vec<String> = fields[usize::from(labelled)..].iter().map(|s| s.to_string()).collect();
                check_names(&names).map_err(|e| err(e.to_string()))?;
                header = Some((names, labelled));
                continue;
            };
            let k = classes.len();
            let r = rows.len();
            if r == k {
                return Err(err(format!("more than {k} data rows")));
            }
            let cells = if *labelled {
                if fields[0] != classes[r] {
                    return Err(err(format!(
                        "row label {:?} does not match class {:?} expected at row {}",
                        fields[0],
                        classes[r],
                        r + 1
                    )));
                }
                &fields[1..]
            } else {
                &fields[..]
            };
            if cells.len() != k {
                return Err(err(format!(
                    "row {:?} has {} counts, expected {k}",
                    classes[r],
                    cells.len()
                )));
            }
            let mut row = Vec::with_capacity(k);
            for (j, cell) in cells.iter().enumerate() {
                let cell_name = format!("row {:?}, column {:?}", classes[r], classes[j]);
                if let Ok(v) = cell.parse::<i64>() {
                    if v < 0 {
                        return Err(err(format!("{cell_name}: negative count {v}")));
                    }
                }
                let v = cell
                    .parse::<u64>()
                    .map_err(|_| err(format!("{cell_name}: {cell:?} is not a non-negative integer")))?;
                row.push(v);
            }
            rows.push(row);
        }
        let Some((classes, _)) = header else {
            return Err(Error::Parse {
                line: 1,
                detail: "missing header row of class names".into(),
            });
        };
        if rows.len() != classes.len() {
            return Err(Error::Parse {
                line: last_line,
                detail: format!("expected {} data rows, found {}", classes.len(), rows.len()),
            });
        }
        Self::from_rows(classes, rows)
    }
}
