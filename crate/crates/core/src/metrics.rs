//! Calibration and classification metrics plus reliability-bin export.
//!
//! Distribution-level scores measure binned gaps between accuracy and
//! confidence: [`ece`] uses equal-width confidence bins, [`ace`] uses
//! per-class equal-count bins (reported per class, as the minority
//! class's value, and as the unweighted macro mean). Individual-level
//! scores compare one node's confidence against its jackknife
//! uncertainty: [`ice`] for a single node, [`eice`] as the mean.
//!
//! Every function canonicalizes its accumulation order internally, so
//! results are bit-identical under any permutation of the input rows.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::uncertainty::UncertaintyRecord;

/// One reliability-diagram bin over the half-open interval
/// `[lo, hi)`; the last bin also includes 1.0. Empty bins keep zero
/// accuracy and confidence.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub accuracy: f64,
    pub confidence: f64,
}

/// Equal-width reliability bins; counts sum to the scored sample count.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ReliabilityBins {
    pub bins: Vec<ReliabilityBin>,
}

impl ReliabilityBins {
    /// Column-array form used inside report JSON.
    pub fn to_arrays(&self) -> BinArrays {
        BinArrays {
            bin_lo: self.bins.iter().map(|b| b.lo).collect(),
            bin_hi: self.bins.iter().map(|b| b.hi).collect(),
            count: self.bins.iter().map(|b| b.count).collect(),
            accuracy: self.bins.iter().map(|b| b.accuracy).collect(),
            confidence: self.bins.iter().map(|b| b.confidence).collect(),
        }
    }

    /// Write `bin_lo,bin_hi,count,accuracy,confidence` rows.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("bin_lo,bin_hi,count,accuracy,confidence\n");
        for b in &self.bins {
            writeln!(out, "{},{},{},{},{}", b.lo, b.hi, b.count, b.accuracy, b.confidence)
                .expect("string write");
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Reliability bins as parallel columns.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BinArrays {
    pub bin_lo: Vec<f64>,
    pub bin_hi: Vec<f64>,
    pub count: Vec<usize>,
    pub accuracy: Vec<f64>,
    pub confidence: Vec<f64>,
}

/// Classification quality on an evaluation set.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    /// Recall of the minority class.
    pub recall: f64,
    /// Unweighted mean F1 over all classes; empty classes score 0.
    pub macro_f1: f64,
}

/// Everything a scoring run reports, serializable as one JSON object.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CalibrationReport {
    pub ece: f64,
    pub ace_minority: f64,
    pub ace_per_class: Vec<f64>,
    pub macro_ace: f64,
    pub eice: f64,
    pub accuracy: f64,
    pub recall: f64,
    pub macro_f1: f64,
    pub bins: BinArrays,
}

impl CalibrationReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Numeric(format!("report serialization failed: {e}")))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, 1, format!("bad report: {e}")))
    }
}

fn bin_index(confidence: f64, bins: usize) -> usize {
    // Confidence 1.0 belongs to the top bin.
    ((confidence * bins as f64).floor() as usize).min(bins - 1)
}

/// Expected calibration error with equal-width confidence bins.
///
/// A sample with confidence `c` lands in bin `floor(c * bins)`; the
/// score is the sample-weighted mean of per-bin `|accuracy - mean
/// confidence|`. Empty bins contribute nothing.
pub fn ece(confidence: &[f64], correct: &[bool], bins: usize) -> Result<(f64, ReliabilityBins)> {
    if confidence.is_empty() {
        return Err(Error::Domain("ece over an empty sample set".into()));
    }
    if confidence.len() != correct.len() {
        return Err(Error::Shape(format!(
            "{} confidences but {} outcomes",
            confidence.len(),
            correct.len()
        )));
    }
    if bins == 0 {
        return Err(Error::Domain("bin count must be positive".into()));
    }
    if let Some(bad) = confidence.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::Domain(format!("confidence {bad} outside [0, 1]")));
    }

    // Canonical accumulation order: sorted by (confidence, outcome).
    let mut samples: Vec<(f64, bool)> = confidence.iter().copied().zip(correct.iter().copied()).collect();
    samples.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0f64; bins];
    let mut correct_sum = vec![0usize; bins];
    for &(c, ok) in &samples {
        let b = bin_index(c, bins);
        count[b] += 1;
        conf_sum[b] += c;
        correct_sum[b] += usize::from(ok);
    }

    let n = samples.len() as f64;
    let width = 1.0 / bins as f64;
    let mut score = 0.0;
    let mut rows = Vec::with_capacity(bins);
    for b in 0..bins {
        let (acc, conf) = if count[b] > 0 {
            (
                correct_sum[b] as f64 / count[b] as f64,
                conf_sum[b] / count[b] as f64,
            )
        } else {
            (0.0, 0.0)
        };
        if count[b] > 0 {
            score += (count[b] as f64 / n) * (acc - conf).abs();
        }
        rows.push(ReliabilityBin {
            lo: b as f64 * width,
            hi: if b + 1 == bins { 1.0 } else { (b + 1) as f64 * width },
            count: count[b],
            accuracy: acc,
            confidence: conf,
        });
    }
    Ok((score, ReliabilityBins { bins: rows }))
}

/// Per-class adaptive (equal-count) calibration errors.
#[derive(Debug, Clone, PartialEq)]
pub struct AceScores {
    pub per_class: Vec<f64>,
    pub macro_ace: f64,
}

/// Adaptive calibration error with per-class equal-count bins.
///
/// For each class `c`, every sample's predicted probability of `c` is
/// sorted ascending and rank `r` (0-based, `n` samples) goes to bin
/// `floor(r * bins / n)`, which hands the first `n mod bins` bins one
/// extra sample. Per-bin accuracy is the fraction whose true label is
/// `c`; the class score averages `|accuracy - mean probability|` over
/// all `bins` bins. Requires every class to appear in `labels`.
pub fn ace(probs: &Array2<f64>, labels: &[usize], bins: usize) -> Result<AceScores> {
    let n = probs.nrows();
    let class_count = probs.ncols();
    if n == 0 {
        return Err(Error::Domain("ace over an empty sample set".into()));
    }
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} probability rows but {} labels",
            n,
            labels.len()
        )));
    }
    if bins == 0 {
        return Err(Error::Domain("bin count must be positive".into()));
    }
    let mut present = vec![false; class_count];
    for &l in labels {
        if l >= class_count {
            return Err(Error::Bounds(format!(
                "label {l} exceeds class count {class_count}"
            )));
        }
        present[l] = true;
    }
    if let Some(c) = present.iter().position(|p| !p) {
        return Err(Error::Domain(format!(
            "class {c} has no sample in the evaluation set"
        )));
    }

    let mut per_class = Vec::with_capacity(class_count);
    for c in 0..class_count {
        // Canonical order: by (probability, is-class) so ties cannot
        // leak input order across a bin boundary.
        let mut samples: Vec<(f64, bool)> = (0..n)
            .map(|i| (probs[(i, c)], labels[i] == c))
            .collect();
        samples.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut count = vec![0usize; bins];
        let mut prob_sum = vec![0.0f64; bins];
        let mut hit_sum = vec![0usize; bins];
        for (rank, &(p, is_c)) in samples.iter().enumerate() {
            let b = rank * bins / n;
            count[b] += 1;
            prob_sum[b] += p;
            hit_sum[b] += usize::from(is_c);
        }
        let mut total = 0.0;
        for b in 0..bins {
            if count[b] > 0 {
                let acc = hit_sum[b] as f64 / count[b] as f64;
                let conf = prob_sum[b] / count[b] as f64;
                total += (acc - conf).abs();
            }
        }
        per_class.push(total / bins as f64);
    }
    let macro_ace = per_class.iter().sum::<f64>() / class_count as f64;
    Ok(AceScores {
        per_class,
        macro_ace,
    })
}

/// Individual calibration error of one node.
pub fn ice(uncertainty: f64, confidence: f64) -> f64 {
    (uncertainty - confidence).abs()
}

/// Mean individual calibration error over a record set.
pub fn eice(records: &[UncertaintyRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Domain("eice over an empty record set".into()));
    }
    // Canonical accumulation order by node id.
    let mut values: Vec<(usize, f64)> = records
        .iter()
        .map(|r| (r.node_id, ice(r.uncertainty, r.confidence)))
        .collect();
    values.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    Ok(values.iter().map(|(_, v)| v).sum::<f64>() / values.len() as f64)
}

/// Pearson correlation between two paired samples.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "{} versus {} samples",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Domain("correlation needs at least two pairs".into()));
    }
    let n = a.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let (ma, mb) = (mean(a), mean(b));
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Domain("correlation undefined for a constant sample".into()));
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// Accuracy, minority-class recall, and macro F1.
pub fn classification_metrics(
    pred: &[usize],
    labels: &[usize],
    minority: usize,
    class_count: usize,
) -> Result<ClassificationMetrics> {
    if pred.is_empty() {
        return Err(Error::Domain("metrics over an empty sample set".into()));
    }
    if pred.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions but {} labels",
            pred.len(),
            labels.len()
        )));
    }
    if minority >= class_count {
        return Err(Error::Domain(format!(
            "minority class {minority} outside [0, {class_count})"
        )));
    }
    let mut tp = vec![0usize; class_count];
    let mut fp = vec![0usize; class_count];
    let mut fn_ = vec![0usize; class_count];
    let mut correct = 0usize;
    for (&p, &y) in pred.iter().zip(labels) {
        if p >= class_count || y >= class_count {
            return Err(Error::Bounds(format!(
                "prediction {p} or label {y} exceeds class count {class_count}"
            )));
        }
        if p == y {
            correct += 1;
            tp[y] += 1;
        } else {
            fp[p] += 1;
            fn_[y] += 1;
        }
    }
    let f1 = |c: usize| -> f64 {
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        if denom == 0 {
            0.0
        } else {
            2.0 * tp[c] as f64 / denom as f64
        }
    };
    let recall_den = tp[minority] + fn_[minority];
    Ok(ClassificationMetrics {
        accuracy: correct as f64 / pred.len() as f64,
        recall: if recall_den == 0 {
            0.0
        } else {
            tp[minority] as f64 / recall_den as f64
        },
        macro_f1: (0..class_count).map(f1).sum::<f64>() / class_count as f64,
    })
}
