//! Binary classification metrics with Traversable as the positive class.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autolabel::{Label, LabelMask};
use crate::error::{Error, Result};
use crate::online::TraversabilityMap;

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::UndefinedMetric(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("NaN score".into()));
    }
    let pos = labels.iter().filter(|l| **l).count();
    Ok((pos, labels.len() - pos))
}

/// Indices sorted by descending score, with the boundaries of tie groups.
fn descending_groups(scores: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ends = Vec::new();
    for i in 0..order.len() {
        if i + 1 == order.len() || scores[order[i + 1]] != scores[order[i]] {
            ends.push(i + 1);
        }
    }
    (order, ends)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both classes".into()));
    }
    let (order, ends) = descending_groups(scores);
    // count, for each positive, the negatives strictly below plus half the tied ones
    let mut neg_above = 0usize;
    let mut wins = 0.0;
    let mut start = 0;
    for end in ends {
        let group = &order[start..end];
        let gp = group.iter().filter(|&&i| labels[i]).count();
        let gn = group.len() - gp;
        let below = neg - neg_above - gn;
        wins += gp as f64 * (below as f64 + 0.5 * gn as f64);
        neg_above += gn;
        start = end;
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// Step-wise area under the precision-recall curve, one step per distinct
/// score.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 {
        return Err(Error::UndefinedMetric("AP needs at least one positive".into()));
    }
    if neg == 0 {
        log::warn!("average precision over positives only is trivially 1");
    }
    let (order, ends) = descending_groups(scores);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut start = 0;
    for end in ends {
        for &i in &order[start..end] {
            if labels[i] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / pos as f64;
        ap += (recall - prev_recall) * tp as f64 / (tp + fp) as f64;
        prev_recall = recall;
        start = end;
    }
    Ok(ap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub tau: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub fpr: f64,
    pub fnr: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn at_counts(tau: f64, tp: usize, fp: usize, pos: usize, neg: usize) -> ThresholdMetrics {
    let fnc = pos - tp;
    let tn = neg - fp;
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, pos);
    // exact ratio of counts so equal F1 values compare equal
    let f1 = ratio(2 * tp, 2 * tp + fp + fnc);
    ThresholdMetrics {
        tau,
        f1,
        precision,
        recall,
        fpr: ratio(fp, fp + tn),
        fnr: ratio(fnc, fnc + tp),
    }
}

/// Threshold (predict positive when `score >= tau`) with the best F1; on
/// equal F1 the higher threshold wins.
pub fn optimal_f1(scores: &[f64], labels: &[bool]) -> Result<ThresholdMetrics> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 {
        return Err(Error::UndefinedMetric("F1 needs at least one positive".into()));
    }
    let (order, ends) = descending_groups(scores);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best: Option<ThresholdMetrics> = None;
    let mut start = 0;
    for end in ends {
        for &i in &order[start..end] {
            if labels[i] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let m = at_counts(scores[order[end - 1]], tp, fp, pos, neg);
        if best.is_none_or(|b| m.f1 > b.f1) {
            best = Some(m);
        }
        start = end;
    }
    Ok(best.unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
    pub precision: f64,
}

/// One point per distinct score, from the highest threshold down.
pub fn curves(scores: &[f64], labels: &[bool]) -> Result<Vec<CurvePoint>> {
    let (pos, neg) = check(scores, labels)?;
    let (order, ends) = descending_groups(scores);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut out = Vec::with_capacity(ends.len());
    let mut start = 0;
    for end in ends {
        for &i in &order[start..end] {
            if labels[i] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        out.push(CurvePoint {
            threshold: scores[order[end - 1]],
            fpr: ratio(fp, neg),
            tpr: ratio(tp, pos),
            precision: ratio(tp, tp + fp),
        });
        start = end;
    }
    Ok(out)
}

pub fn write_curves_csv(path: impl AsRef<Path>, points: &[CurvePoint]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for p in points {
        w.serialize(p).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auroc: f64,
    pub ap: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub tau_star: f64,
    pub positives: usize,
    pub negatives: usize,
    pub frames: usize,
    /// Means over frames where each metric is defined.
    pub macro_auroc: Option<f64>,
    pub macro_ap: Option<f64>,
    pub macro_f1: Option<f64>,
}

impl EvalReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>8}", "metric", "value");
        for (name, v) in [
            ("AUROC", self.auroc),
            ("AP", self.ap),
            ("F1", self.f1),
            ("FPR", self.fpr),
            ("FNR", self.fnr),
            ("Pre.", self.precision),
            ("Rec.", self.recall),
            ("tau*", self.tau_star),
        ] {
            let _ = writeln!(s, "{name:<10} {v:>8.4}");
        }
        let _ = writeln!(
            s,
            "{} frames, {} traversable / {} untraversable cells",
            self.frames, self.positives, self.negatives
        );
        s
    }
}

/// Scores and labels of the cells that carry a ground-truth label.
pub fn participating(map: &TraversabilityMap, gt: &LabelMask) -> Result<(Vec<f64>, Vec<bool>)> {
    if map.height != gt.spec.height_cells || map.width != gt.spec.width_cells || map.values.len() != gt.labels.len() {
        return Err(Error::Config("prediction and ground truth shapes differ".into()));
    }
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (v, l) in map.values.iter().zip(&gt.labels) {
        match l {
            Label::Traversable => {
                scores.push(*v as f64);
                labels.push(true);
            }
            Label::Untraversable => {
                scores.push(*v as f64);
                labels.push(false);
            }
            Label::Unlabeled => {}
        }
    }
    Ok((scores, labels))
}

/// Marks ground-truth cells that were never observed as unlabeled.
pub fn restrict_to_observed(gt: &LabelMask, occupancy: &[bool]) -> Result<LabelMask> {
    if occupancy.len() != gt.labels.len() {
        return Err(Error::Config("occupancy is not aligned with the ground truth".into()));
    }
    let mut out = gt.clone();
    for (l, o) in out.labels.iter_mut().zip(occupancy) {
        if !o {
            *l = Label::Unlabeled;
        }
    }
    Ok(out)
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Pools every labeled cell of every frame into one set of metrics.
pub fn evaluate(maps: &[TraversabilityMap], gts: &[LabelMask]) -> Result<EvalReport> {
    if maps.len() != gts.len() {
        return Err(Error::Config(format!("{} predictions for {} ground-truth frames", maps.len(), gts.len())));
    }
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let (mut per_auc, mut per_ap, mut per_f1) = (Vec::new(), Vec::new(), Vec::new());
    for (m, g) in maps.iter().zip(gts) {
        let (s, l) = participating(m, g)?;
        if let Ok(a) = roc_auc(&s, &l) {
            per_auc.push(a);
        }
        if let Ok(a) = average_precision(&s, &l) {
            per_ap.push(a);
        }
        if let Ok(f) = optimal_f1(&s, &l) {
            per_f1.push(f.f1);
        }
        scores.extend(s);
        labels.extend(l);
    }
    if scores.is_empty() {
        return Err(Error::UndefinedMetric("no labeled cells to evaluate".into()));
    }
    let auroc = roc_auc(&scores, &labels)?;
    let ap = average_precision(&scores, &labels)?;
    let best = optimal_f1(&scores, &labels)?;
    let positives = labels.iter().filter(|l| **l).count();
    Ok(EvalReport {
        auroc,
        ap,
        f1: best.f1,
        precision: best.precision,
        recall: best.recall,
        fpr: best.fpr,
        fnr: best.fnr,
        tau_star: best.tau,
        positives,
        negatives: labels.len() - positives,
        frames: maps.len(),
        macro_auroc: mean(&per_auc),
        macro_ap: mean(&per_ap),
        macro_f1: mean(&per_f1),
    })
}
