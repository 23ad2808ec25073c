//! Confusion-matrix segmentation metrics and the line-oriented report.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// `k×k` counts, rows ground truth, columns prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    ignore: u8,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    /// `classes` counts the background, i.e. `C + 1`.
    pub fn new(classes: usize, ignore: u8) -> Self {
        ConfusionMatrix {
            classes,
            ignore,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Counts every pixel whose ground truth is not the ignore value.
    pub fn accumulate(&mut self, pred: &[u8], gt: &[u8]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::Invalid(format!(
                "prediction has {} pixels, ground truth {}",
                pred.len(),
                gt.len()
            )));
        }
        let k = self.classes;
        for (i, (&p, &g)) in pred.iter().zip(gt).enumerate() {
            if g == self.ignore {
                continue;
            }
            if g as usize >= k || p as usize >= k {
                return Err(Error::Invalid(format!(
                    "pixel {i}: label gt={g} pred={p} outside {k} classes"
                )));
            }
            self.counts[g as usize * k + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Invalid("merging confusion matrices of different sizes".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Per-class IoU; `None` where the class never occurs in either map.
    pub fn ious(&self) -> Vec<Option<f64>> {
        let k = self.classes;
        (0..k)
            .map(|c| {
                let d = self.get(c, c);
                let row: u64 = (0..k).map(|j| self.get(c, j)).sum();
                let col: u64 = (0..k).map(|i| self.get(i, c)).sum();
                let union = row + col - d;
                (union > 0).then(|| d as f64 / union as f64)
            })
            .collect()
    }

    pub fn miou(&self) -> Result<f64> {
        let ious: Vec<f64> = self.ious().into_iter().flatten().collect();
        if ious.is_empty() {
            return Err(Error::Invalid("no pixels were counted".into()));
        }
        Ok(ious.iter().sum::<f64>() / ious.len() as f64)
    }

    pub fn pixacc(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Invalid("no pixels were counted".into()));
        }
        let trace: u64 = (0..self.classes).map(|c| self.get(c, c)).sum();
        Ok(trace as f64 / total as f64)
    }
}

/// Metrics as written to and read from the report file.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub ious: Vec<Option<f64>>,
    pub miou: f64,
    pub pixacc: f64,
}

pub const REPORT_HEADER: &str = "class_id, iou";

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

fn round6(v: f64) -> f64 {
    fmt6(v).parse().expect("formatted float parses")
}

impl MetricsReport {
    pub fn from_matrix(cm: &ConfusionMatrix) -> Result<Self> {
        Ok(MetricsReport {
            ious: cm.ious(),
            miou: cm.miou()?,
            pixacc: cm.pixacc()?,
        })
    }

    /// The values as they survive a write/read cycle.
    pub fn rounded(&self) -> Self {
        MetricsReport {
            ious: self.ious.iter().map(|v| v.map(round6)).collect(),
            miou: round6(self.miou),
            pixacc: round6(self.pixacc),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for (c, iou) in self.ious.iter().enumerate() {
            let v = iou.map(fmt6).unwrap_or_else(|| "nan".into());
            writeln!(out, "{c}, {v}").unwrap();
        }
        writeln!(out, "miou, {}", fmt6(self.miou)).unwrap();
        writeln!(out, "pixacc, {}", fmt6(self.pixacc)).unwrap();
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::format("metrics report", msg);
        let mut lines = text.lines();
        if lines.next() != Some(REPORT_HEADER) {
            return Err(bad("missing header".into()));
        }
        let mut ious = Vec::new();
        let (mut miou, mut pixacc) = (None, None);
        for line in lines {
            let (key, value) = line
                .split_once(", ")
                .ok_or_else(|| bad(format!("malformed line `{line}`")))?;
            let number = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("bad value `{v}`")));
            match key {
                "miou" => miou = Some(number(value)?),
                "pixacc" => pixacc = Some(number(value)?),
                id => {
                    let id: usize = id.parse().map_err(|_| bad(format!("bad class id `{id}`")))?;
                    if id != ious.len() || miou.is_some() {
                        return Err(bad(format!("class {id} out of order")));
                    }
                    ious.push(if value == "nan" { None } else { Some(number(value)?) });
                }
            }
        }
        Ok(MetricsReport {
            ious,
            miou: miou.ok_or_else(|| bad("missing miou".into()))?,
            pixacc: pixacc.ok_or_else(|| bad("missing pixacc".into()))?,
        })
    }
}
