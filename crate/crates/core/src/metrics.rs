//! Class-sum probabilities and per-class / macro classification metrics.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// `½ (1 + v / T)` after clamping `v` to `[-T, T]`.
pub fn class_sum_to_probability(class_sum: i64, target: u32) -> f64 {
    let t = target.max(1) as i64;
    0.5 * (1.0 + class_sum.clamp(-t, t) as f64 / t as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

/// `num / den`, zero when the denominator is zero.
fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub class: usize,
    pub confusion: Confusion,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Absent when the class labels are single-valued.
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_avg: MacroMetrics,
    /// Share of samples whose highest-scoring class is labeled, for
    /// multiclass evaluations.
    pub top1_accuracy: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl EvalReport {
    /// One row per class plus a `macro` row.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
        let mut out = String::from("class,tp,fp,tn,fn,accuracy,precision,recall,f1,auroc,auprc\n");
        for m in &self.per_class {
            let name = class_names.get(m.class).cloned().unwrap_or_else(|| m.class.to_string());
            let c = m.confusion;
            let _ = writeln!(
                out,
                "{name},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{},{}",
                c.tp,
                c.fp,
                c.tn,
                c.fn_,
                m.accuracy,
                m.precision,
                m.recall,
                m.f1,
                opt(m.auroc),
                opt(m.auprc)
            );
        }
        let a = &self.macro_avg;
        let _ = writeln!(
            out,
            "macro,,,,,{:.6},{:.6},{:.6},{:.6},{},{}",
            a.accuracy,
            a.precision,
            a.recall,
            a.f1,
            opt(a.auroc),
            opt(a.auprc)
        );
        out
    }

    pub fn log_lines(&self) -> Vec<String> {
        let a = &self.macro_avg;
        let mut lines = vec![
            format!("metric=macro_accuracy value={:.6}", a.accuracy),
            format!("metric=macro_precision value={:.6}", a.precision),
            format!("metric=macro_recall value={:.6}", a.recall),
            format!("metric=macro_f1 value={:.6}", a.f1),
        ];
        if let Some(v) = a.auroc {
            lines.push(format!("metric=macro_auroc value={v:.6}"));
        }
        if let Some(v) = a.auprc {
            lines.push(format!("metric=macro_auprc value={v:.6}"));
        }
        if let Some(v) = self.top1_accuracy {
            lines.push(format!("metric=top1_accuracy value={v:.6}"));
        }
        lines
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. `None` if either group is empty.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // sum over positives of (#negatives below + ½ #negatives tied)
    let mut wins = 0.0;
    let mut neg_below = 0usize;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        let group = &idx[i..j];
        let pos = group.iter().filter(|&&k| labels[k]).count();
        let neg = group.len() - pos;
        wins += pos as f64 * (neg_below as f64 + 0.5 * neg as f64);
        neg_below += neg;
        i = j;
    }
    Some(wins / (n_pos as f64 * n_neg as f64))
}

/// Area under the precision-recall step curve (average precision), with
/// tied scores entering as one step.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == labels.len() {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut area, mut prev_recall) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        tp += idx[i..j].iter().filter(|&&k| labels[k]).count();
        seen += j - i;
        let recall = tp as f64 / n_pos as f64;
        area += (recall - prev_recall) * (tp as f64 / seen as f64);
        prev_recall = recall;
        i = j;
    }
    Some(area)
}

/// Per-class and macro metrics from `scores[sample][class]` and binary
/// `labels[sample][class]`; a class is predicted when its score exceeds
/// `threshold`.
pub fn compute_metrics(scores: &[Vec<f64>], labels: &[Vec<bool>], threshold: f64) -> Result<EvalReport> {
    if scores.len() != labels.len() {
        return Err(Error::Consistency(format!(
            "{} score rows but {} label rows",
            scores.len(),
            labels.len()
        )));
    }
    let k = scores.first().map_or(0, Vec::len);
    if scores.iter().any(|r| r.len() != k) || labels.iter().any(|r| r.len() != k) {
        return Err(Error::Consistency("ragged score or label rows".into()));
    }
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|class| {
            let s: Vec<f64> = scores.iter().map(|r| r[class]).collect();
            let l: Vec<bool> = labels.iter().map(|r| r[class]).collect();
            let mut c = Confusion::default();
            for (&score, &label) in s.iter().zip(&l) {
                match (score > threshold, label) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, false) => c.tn += 1,
                    (false, true) => c.fn_ += 1,
                }
            }
            ClassMetrics {
                class,
                confusion: c,
                accuracy: c.accuracy(),
                precision: c.precision(),
                recall: c.recall(),
                f1: c.f1(),
                auroc: auroc(&s, &l),
                auprc: auprc(&s, &l),
            }
        })
        .collect();
    let macro_avg = MacroMetrics {
        accuracy: mean(per_class.iter().map(|m| m.accuracy)).unwrap_or(0.0),
        precision: mean(per_class.iter().map(|m| m.precision)).unwrap_or(0.0),
        recall: mean(per_class.iter().map(|m| m.recall)).unwrap_or(0.0),
        f1: mean(per_class.iter().map(|m| m.f1)).unwrap_or(0.0),
        auroc: mean(per_class.iter().filter_map(|m| m.auroc)),
        auprc: mean(per_class.iter().filter_map(|m| m.auprc)),
    };
    Ok(EvalReport {
        per_class,
        macro_avg,
        top1_accuracy: None,
    })
}

/// Evaluation from raw class sums: probabilities via [`class_sum_to_probability`], binary labels
/// from label sets, and top-1 accuracy when every sample has one label.
pub fn evaluate_class_sums(class_sums: &[Vec<i64>], label_sets: &[Vec<usize>], target: u32) -> Result<EvalReport> {
    let k = class_sums.first().map_or(0, Vec::len);
    let scores: Vec<Vec<f64>> = class_sums
        .iter()
        .map(|v| v.iter().map(|&x| class_sum_to_probability(x, target)).collect())
        .collect();
    let labels: Vec<Vec<bool>> = label_sets
        .iter()
        .map(|set| (0..k).map(|c| set.contains(&c)).collect())
        .collect();
    let mut report = compute_metrics(&scores, &labels, 0.5)?;
    if label_sets.iter().all(|s| s.len() == 1) && !label_sets.is_empty() {
        let hits = class_sums
            .iter()
            .zip(label_sets)
            .filter(|(v, s)| crate::clause_bank::argmax(v) == s[0])
            .count();
        report.top1_accuracy = Some(hits as f64 / label_sets.len() as f64);
    }
    Ok(report)
}

/// Macro F1 between predicted and true label sets.
pub fn macro_f1_from_sets(predicted: &[Vec<usize>], truth: &[Vec<usize>], n_classes: usize) -> f64 {
    let mut conf = vec![Confusion::default(); n_classes];
    for (p, t) in predicted.iter().zip(truth) {
        for (class, c) in conf.iter_mut().enumerate() {
            match (p.contains(&class), t.contains(&class)) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
    }
    mean(conf.iter().map(Confusion::f1)).unwrap_or(0.0)
}
