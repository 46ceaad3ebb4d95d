//! Segmentation scores for binary vessel masks: pixel confusion metrics, ROC AUC,
//! the connectivity/area/length family and thin-vessel separation.

pub mod morph;

use std::io::Write;

pub use morph::Mask;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("undefined: {0}")]
    Undefined(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Dilation radius that gives the area and length scores their tolerance.
pub const TOLERANCE_RADIUS: usize = 2;
/// Opening radius separating thin from thick vessels.
pub const THIN_RADIUS: usize = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Tallies inside `eval`, or over the whole frame without one.
pub fn confusion(pred: &Mask, gt: &Mask, eval: Option<&Mask>) -> Result<ConfusionCounts> {
    pred.same_shape(gt)?;
    if let Some(e) = eval {
        e.same_shape(gt)?;
    }
    let mut c = ConfusionCounts::default();
    for i in 0..gt.data.len() {
        if eval.is_some_and(|e| !e.data[i]) {
            continue;
        }
        match (pred.data[i], gt.data[i]) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BasicMetrics {
    pub se: f64,
    pub sp: f64,
    pub f1: f64,
    pub acc: f64,
    pub mcc: f64,
    /// Some denominator was zero and its metric was set to 0.
    pub degenerate: bool,
}

pub fn basic_metrics(c: ConfusionCounts) -> BasicMetrics {
    let [tp, tn, fp, fn_] = [c.tp, c.tn, c.fp, c.fn_].map(|v| v as f64);
    let mut degenerate = false;
    let mut ratio = |n: f64, d: f64| {
        if d == 0.0 {
            degenerate = true;
            0.0
        } else {
            n / d
        }
    };
    let se = ratio(tp, tp + fn_);
    let sp = ratio(tn, tn + fp);
    let precision = ratio(tp, tp + fp);
    let f1 = ratio(2.0 * precision * se, precision + se);
    let acc = ratio(tp + tn, tp + tn + fp + fn_);
    let mcc = ratio(tp * tn - fp * fn_, ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt());
    BasicMetrics { se, sp, f1, acc, mcc, degenerate }
}

/// Area under the ROC curve, trapezoids between distinct score thresholds. Tied scores
/// move both rates at once, so the result equals the rank statistic with ties counted half.
pub fn auc_scores(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let mut pairs: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    if pairs.iter().any(|p| p.0.is_nan()) {
        return Err(Error::Undefined("NaN score"));
    }
    let pos = pairs.iter().filter(|p| p.1).count() as f64;
    let neg = pairs.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(Error::Undefined("AUC needs both classes"));
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let (tp0, fp0) = (tp, fp);
        let s = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == s {
            if pairs[i].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        area += (fp - fp0) * (tp + tp0) / 2.0;
    }
    Ok(area / (pos * neg))
}

pub fn auc(prob: &[f64], gt: &Mask, eval: Option<&Mask>) -> Result<f64> {
    if prob.len() != gt.data.len() {
        return Err(Error::Dimension(format!("{} probabilities for {} pixels", prob.len(), gt.data.len())));
    }
    if let Some(e) = eval {
        e.same_shape(gt)?;
    }
    let keep = |i: &usize| eval.map_or(true, |e| e.data[*i]);
    let idx: Vec<usize> = (0..prob.len()).filter(keep).collect();
    let scores: Vec<f64> = idx.iter().map(|&i| prob[i]).collect();
    let labels: Vec<bool> = idx.iter().map(|&i| gt.data[i]).collect();
    auc_scores(&scores, &labels)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalMetrics {
    pub c: f64,
    pub a: f64,
    pub l: f64,
    pub f: f64,
}

/// Connectivity, overlapping area and length consistency, each tolerant to
/// misplacement within [`TOLERANCE_RADIUS`], and their product.
pub fn cal_metrics(pred: &Mask, gt: &Mask) -> Result<CalMetrics> {
    pred.same_shape(gt)?;
    let n_gt = gt.count();
    if n_gt == 0 {
        return Err(Error::Undefined("empty ground truth"));
    }
    let gap = morph::components(pred).abs_diff(morph::components(gt)) as f64;
    let c = 1.0 - (gap / n_gt as f64).min(1.0);

    let dp = morph::dilate(pred, TOLERANCE_RADIUS);
    let dg = morph::dilate(gt, TOLERANCE_RADIUS);
    let a = dp.and(gt).or(&pred.and(&dg)).count() as f64 / pred.or(gt).count() as f64;

    let sp = morph::skeleton(pred);
    let sg = morph::skeleton(gt);
    let l = sp.and(&dg).or(&dp.and(&sg)).count() as f64 / sp.or(&sg).count() as f64;
    Ok(CalMetrics { c, a, l, f: c * a * l })
}

/// Splits a vessel mask into (thin, thick): thick survives an opening with a disk of
/// radius [`THIN_RADIUS`], thin is the rest.
pub fn separate_thin(gt: &Mask) -> (Mask, Mask) {
    let thick = morph::open(gt, THIN_RADIUS).and(gt);
    (gt.and_not(&thick), thick)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub se: f64,
    pub sp: f64,
    pub f1: f64,
    pub acc: f64,
    /// Absent without a probability map.
    pub auc: Option<f64>,
    pub mcc: f64,
    pub c: f64,
    pub a: f64,
    pub l: f64,
    pub f: f64,
}

pub fn evaluate(pred: &Mask, gt: &Mask, prob: Option<&[f64]>, eval: Option<&Mask>) -> Result<MetricReport> {
    let b = basic_metrics(confusion(pred, gt, eval)?);
    let auc = prob.map(|p| auc(p, gt, eval)).transpose()?;
    let cal = cal_metrics(pred, gt)?;
    Ok(MetricReport {
        se: b.se,
        sp: b.sp,
        f1: b.f1,
        acc: b.acc,
        auc,
        mcc: b.mcc,
        c: cal.c,
        a: cal.a,
        l: cal.l,
        f: cal.f,
    })
}

pub const CSV_HEADER: &str =
    "image,Se,Sp,F1,Acc,AUC,Mcc,Connectivity (C),Overlapping Area (A),Consistency (L),F";
pub const THIN_CSV_HEADER: &str = "image,part,Connectivity (C),Overlapping Area (A),Consistency (L),F";

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"))
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// One row per image and a final `mean` row. Missing AUC prints `NA`.
pub fn write_csv<W: Write>(mut w: W, rows: &[(String, MetricReport)]) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    let fields = |r: &MetricReport| [Some(r.se), Some(r.sp), Some(r.f1), Some(r.acc), r.auc, Some(r.mcc), Some(r.c), Some(r.a), Some(r.l), Some(r.f)];
    for (name, r) in rows {
        let cells: Vec<String> = fields(r).into_iter().map(cell).collect();
        writeln!(w, "{name},{}", cells.join(","))?;
    }
    let cells: Vec<String> = (0..10).map(|k| cell(mean(rows.iter().map(|(_, r)| fields(r)[k])))).collect();
    writeln!(w, "mean,{}", cells.join(","))
}

/// Rows of (image, part, scores) with a mean row per part.
pub fn write_thin_csv<W: Write>(mut w: W, rows: &[(String, &str, CalMetrics)]) -> std::io::Result<()> {
    writeln!(w, "{THIN_CSV_HEADER}")?;
    for (name, part, m) in rows {
        writeln!(w, "{name},{part},{:.6},{:.6},{:.6},{:.6}", m.c, m.a, m.l, m.f)?;
    }
    let mut parts: Vec<&str> = rows.iter().map(|r| r.1).collect();
    parts.sort_unstable();
    parts.dedup();
    for part in parts {
        let sel: Vec<&CalMetrics> = rows.iter().filter(|r| r.1 == part).map(|r| &r.2).collect();
        let n = sel.len() as f64;
        let avg = |f: fn(&CalMetrics) -> f64| sel.iter().map(|m| f(m)).sum::<f64>() / n;
        writeln!(w, "mean,{part},{:.6},{:.6},{:.6},{:.6}", avg(|m| m.c), avg(|m| m.a), avg(|m| m.l), avg(|m| m.f))?;
    }
    Ok(())
}
