//! Classification metrics over per-clip predictions: accuracy, per-class
//! precision / recall / F1, confusion matrices and sparse categorical
//! cross-entropy (natural log).

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ClassLabel;

const K: usize = ClassLabel::COUNT;

/// Probabilities at or below this are floored before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

pub type Confusion = [[u64; K]; K];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRecord {
    pub clip_id: String,
    pub true_label: ClassLabel,
    pub pred_label: ClassLabel,
    probs: Option<[f64; K]>,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(probs: &[f64; K]) -> usize {
    let mut best = 0;
    for k in 1..K {
        if probs[k] > probs[best] {
            best = k;
        }
    }
    best
}

impl PredictionRecord {
    pub fn new(
        clip_id: impl Into<String>,
        true_label: ClassLabel,
        pred_label: ClassLabel,
        probs: Option<[f64; K]>,
    ) -> Result<Self> {
        let clip_id = clip_id.into();
        if let Some(p) = &probs {
            if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::arg(format!("{clip_id}: probabilities must be finite and >= 0")));
            }
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::arg(format!("{clip_id}: probabilities sum to {sum}, expected 1")));
            }
            if argmax(p) != pred_label.index() {
                return Err(Error::arg(format!(
                    "{clip_id}: predicted {pred_label} but probabilities favour {}",
                    ClassLabel::ALL[argmax(p)]
                )));
            }
        }
        Ok(PredictionRecord {
            clip_id,
            true_label,
            pred_label,
            probs,
        })
    }

    /// Record whose prediction is the argmax of `probs`.
    pub fn from_probs(clip_id: impl Into<String>, true_label: ClassLabel, probs: [f64; K]) -> Result<Self> {
        let pred = ClassLabel::ALL[argmax(&probs)];
        PredictionRecord::new(clip_id, true_label, pred, Some(probs))
    }

    pub fn probs(&self) -> Option<&[f64; K]> {
        self.probs.as_ref()
    }

    pub fn is_correct(&self) -> bool {
        self.true_label == self.pred_label
    }
}

fn non_empty(records: &[PredictionRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::arg("no prediction records"));
    }
    Ok(())
}

pub fn accuracy(records: &[PredictionRecord]) -> Result<f64> {
    non_empty(records)?;
    let correct = records.iter().filter(|r| r.is_correct()).count();
    Ok(correct as f64 / records.len() as f64)
}

pub fn confusion_matrix(records: &[PredictionRecord]) -> Result<Confusion> {
    non_empty(records)?;
    let mut m = [[0u64; K]; K];
    for r in records {
        m[r.true_label.index()][r.pred_label.index()] += 1;
    }
    Ok(m)
}

/// Harmonic mean of precision and recall; `(0, true)` when both are zero.
pub fn f1_score(precision: f64, recall: f64) -> (f64, bool) {
    if precision + recall == 0.0 {
        (0.0, true)
    } else {
        (2.0 * precision * recall / (precision + recall), false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub label: ClassLabel,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Some ratio was 0/0 and has been reported as 0.
    pub degenerate: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn class_metrics_from_confusion(m: &Confusion) -> [ClassMetrics; K] {
    std::array::from_fn(|k| {
        let tp = m[k][k];
        let col: u64 = (0..K).map(|r| m[r][k]).sum();
        let row: u64 = m[k].iter().sum();
        let (fp, fn_) = (col - tp, row - tp);
        let (precision, d1) = ratio(tp, tp + fp);
        let (recall, d2) = ratio(tp, tp + fn_);
        let (f1, d3) = f1_score(precision, recall);
        ClassMetrics {
            label: ClassLabel::ALL[k],
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
            degenerate: d1 || d2 || d3,
        }
    })
}

pub fn per_class_prf(records: &[PredictionRecord]) -> Result<[ClassMetrics; K]> {
    Ok(class_metrics_from_confusion(&confusion_matrix(records)?))
}

pub fn sparse_cce(records: &[PredictionRecord]) -> Result<f64> {
    non_empty(records)?;
    let mut sum = 0.0;
    for r in records {
        let p = r
            .probs
            .ok_or_else(|| Error::arg(format!("{}: record has no probabilities", r.clip_id)))?;
        sum += -p[r.true_label.index()].max(PROB_FLOOR).ln();
    }
    Ok(sum / records.len() as f64)
}

/// Additive partial aggregate, so record shards can be tallied separately
/// and merged.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Tally {
    pub confusion: Confusion,
    pub loss_sum: f64,
    pub with_probs: u64,
}

impl Tally {
    pub fn of(records: &[PredictionRecord]) -> Tally {
        let mut t = Tally::default();
        for r in records {
            t.confusion[r.true_label.index()][r.pred_label.index()] += 1;
            if let Some(p) = r.probs {
                t.loss_sum += -p[r.true_label.index()].max(PROB_FLOOR).ln();
                t.with_probs += 1;
            }
        }
        t
    }

    pub fn merge(mut self, other: &Tally) -> Tally {
        for r in 0..K {
            for c in 0..K {
                self.confusion[r][c] += other.confusion[r][c];
            }
        }
        self.loss_sum += other.loss_sum;
        self.with_probs += other.with_probs;
        self
    }

    pub fn n(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn report(&self) -> Result<MetricsReport> {
        let n = self.n();
        if n == 0 {
            return Err(Error::arg("no prediction records"));
        }
        let trace: u64 = (0..K).map(|k| self.confusion[k][k]).sum();
        let loss = (self.with_probs == n).then(|| self.loss_sum / n as f64);
        Ok(MetricsReport {
            n,
            accuracy: trace as f64 / n as f64,
            per_class: class_metrics_from_confusion(&self.confusion),
            confusion: self.confusion,
            loss,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub n: u64,
    pub accuracy: f64,
    pub per_class: [ClassMetrics; K],
    /// Rows are true classes, columns predicted classes.
    pub confusion: Confusion,
    /// `None` unless every record carried probabilities.
    pub loss: Option<f64>,
}

impl MetricsReport {
    pub fn from_records(records: &[PredictionRecord]) -> Result<Self> {
        Tally::of(records).report()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Human-readable report. The class-wise "accuracy" column is the
    /// per-class recall.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<14}{:>10}{:>11}{:>8}{:>10}{:>8}",
            "class", "accuracy", "precision", "recall", "f1", "support"
        );
        for c in &self.per_class {
            let _ = writeln!(
                s,
                "{:<14}{:>10.2}{:>11.2}{:>8.2}{:>10.2}{:>8}{}",
                c.label.name(),
                c.recall,
                c.precision,
                c.recall,
                c.f1,
                c.tp + c.fn_,
                if c.degenerate { "  (0/0 -> 0)" } else { "" }
            );
        }
        let _ = writeln!(s, "\naccuracy {:.4} over {} records", self.accuracy, self.n);
        match self.loss {
            Some(l) => {
                let _ = writeln!(s, "sparse categorical cross-entropy {l:.4}");
            }
            None => {
                let _ = writeln!(s, "sparse categorical cross-entropy n/a (missing probabilities)");
            }
        }
        let _ = writeln!(s, "\nconfusion (rows true, cols predicted)");
        for (k, row) in self.confusion.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:<14}{}",
                ClassLabel::ALL[k].name(),
                row.iter().map(|v| format!("{v:>6}")).collect::<String>()
            );
        }
        s
    }
}

/// Parses `clip_id,true_label,pred_label,p0,p1,p2` lines after a header.
/// Labels may be class names or integers; the three probability fields may
/// all be left empty.
pub fn parse_predictions(text: &str) -> Result<Vec<PredictionRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::arg(format!("predictions: {e}")))?;
        let line = row.position().map_or(0, |p| p.line());
        let ctx = |m: String| Error::arg(format!("predictions line {line}: {m}"));
        if row.len() != 3 + K {
            return Err(ctx(format!("expected {} fields, got {}", 3 + K, row.len())));
        }
        let true_label = row[1].parse::<ClassLabel>().map_err(|e| ctx(e.to_string()))?;
        let pred_label = row[2].parse::<ClassLabel>().map_err(|e| ctx(e.to_string()))?;
        let probs = if row.iter().skip(3).all(str::is_empty) {
            None
        } else {
            let mut p = [0.0; K];
            for (slot, f) in p.iter_mut().zip(row.iter().skip(3)) {
                *slot = f.parse::<f64>().map_err(|_| ctx(format!("bad probability `{f}`")))?;
            }
            Some(p)
        };
        out.push(PredictionRecord::new(&row[0], true_label, pred_label, probs).map_err(|e| ctx(e.to_string()))?);
    }
    if reader.headers().map_or(true, |h| h.is_empty()) {
        return Err(Error::arg("predictions file is empty"));
    }
    Ok(out)
}
