//! Online learning for the coalesced clause bank.
//!
//! Each sample step computes clause outputs once, derives a list of
//! per-class feedback assignments (the true class or classes as targets,
//! sampled false classes as negatives), and then lets every clause process
//! those assignments independently with its own random stream.
//!
//! Feedback type depends on the clause's polarity for the class: a clause
//! that votes for a target class (weight `>= 0`) gets Type I, one voting
//! against it gets Type II; for a negative class the roles swap. Type I(a)
//! moves the weight one step away from zero and Type II one step toward it,
//! which for targets is always `+1` and for negatives always `-1`.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clause_bank::{argmax, positive_classes, ClauseBank, ClauseRowMut, Patches};
use crate::codec::BinarizedSample;
use crate::config::Task;
use crate::error::{Error, Result};
use crate::io::Labels;
use crate::metrics;
use crate::par;

/// Seeded randomness for training.
///
/// A control stream drives sample-level decisions (shuffling, negative
/// class sampling, q gates). Each clause gets a fresh stream per update step,
/// keyed by `(step, clause)`, so per-clause work can run in any order.
#[derive(Debug, Clone)]
pub struct TrainRng {
    key: [u8; 32],
    step: u64,
    control: ChaCha8Rng,
}

impl TrainRng {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut key);
        Self {
            key,
            step: 0,
            control: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn control(&mut self) -> &mut ChaCha8Rng {
        &mut self.control
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    fn clause_stream(&self, clause: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        // stream 0 is the control stream
        rng.set_stream(self.step + 1);
        rng.set_word_pos((clause as u128) << 40);
        rng
    }

    fn advance(&mut self) {
        self.step += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackKind {
    TypeIa,
    TypeIb,
    TypeII,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeedbackEvent {
    pub clause_id: usize,
    pub class_id: usize,
    pub kind: FeedbackKind,
    /// Present iff the clause was active.
    pub patch_index: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Target,
    Negative,
}

#[derive(Debug, Clone, Copy)]
struct Assignment {
    class: usize,
    role: Role,
    probability: f64,
}

/// `(T - v) / 2T` with `v` clamped to `[-T, T]`.
pub fn target_probability(class_sum: i64, target: u32) -> f64 {
    let t = target as i64;
    (t - class_sum.clamp(-t, t)) as f64 / (2 * t) as f64
}

/// `(T + v) / 2T` with `v` clamped to `[-T, T]`.
pub fn negative_probability(class_sum: i64, target: u32) -> f64 {
    let t = target as i64;
    (t + class_sum.clamp(-t, t)) as f64 / (2 * t) as f64
}

/// Chance that a false-label class is selected for Type II feedback.
pub fn gate_probability(q: f64, n_classes: usize) -> f64 {
    if n_classes < 2 {
        return 0.0;
    }
    (q / (n_classes - 1) as f64).min(1.0)
}

/// Bernoulli threshold on a 32-bit draw.
#[inline]
fn threshold(p: f64) -> u64 {
    (p.clamp(0.0, 1.0) * 4_294_967_296.0).round() as u64
}

#[inline]
fn hit(rng: &mut ChaCha8Rng, t: u64) -> bool {
    (rng.next_u32() as u64) < t
}

struct LiteralOdds {
    memorize: u64,
    forget: u64,
}

fn type_ia(row: &mut ClauseRowMut<'_>, patch: &[u64], odds: &LiteralOdds, rng: &mut ChaCha8Rng) {
    let f = row.n_features;
    for k in 0..f {
        let (on, off) = if patch[k / 64] >> (k % 64) & 1 == 1 { (k, f + k) } else { (f + k, k) };
        if hit(rng, odds.memorize) {
            row.increment(on);
        }
        if hit(rng, odds.forget) {
            row.decrement(off);
        }
    }
}

fn type_ib(row: &mut ClauseRowMut<'_>, odds: &LiteralOdds, rng: &mut ChaCha8Rng) {
    for l in 0..2 * row.n_features {
        if hit(rng, odds.forget) {
            row.decrement(l);
        }
    }
}

fn type_ii(row: &mut ClauseRowMut<'_>, patch: &[u64]) {
    let f = row.n_features;
    for k in 0..f {
        let off = if patch[k / 64] >> (k % 64) & 1 == 1 { f + k } else { k };
        if !row.is_included(off) {
            row.increment(off);
        }
    }
}

fn apply_feedback(
    bank: &mut ClauseBank,
    patches: &Patches,
    active: &[bool],
    assignments: &[Assignment],
    rng: &TrainRng,
) -> Vec<FeedbackEvent> {
    let s = bank.config().specificity;
    let odds = LiteralOdds {
        memorize: threshold((s - 1.0) / s),
        forget: threshold(1.0 / s),
    };
    let gates: Vec<u64> = assignments.iter().map(|a| threshold(a.probability)).collect();
    let rows = bank.rows_mut();
    let per_clause = par::map_items(rows, |c, mut row| {
        let mut events = Vec::new();
        let mut rng = rng.clause_stream(c);
        let mut matched: Option<Vec<u32>> = None;
        for (a, &gate) in assignments.iter().zip(&gates) {
            if !hit(&mut rng, gate) {
                continue;
            }
            let votes_for = row.weights[a.class] >= 0;
            let type_one = (a.role == Role::Target) == votes_for;
            if !active[c] {
                if type_one {
                    type_ib(&mut row, &odds, &mut rng);
                    events.push(FeedbackEvent {
                        clause_id: c,
                        class_id: a.class,
                        kind: FeedbackKind::TypeIb,
                        patch_index: None,
                    });
                }
                continue;
            }
            let candidates = matched.get_or_insert_with(|| {
                (0..patches.len() as u32)
                    .filter(|&p| row.matches(patches.bits(p as usize)))
                    .collect()
            });
            let p = candidates[rng.random_range(0..candidates.len())] as usize;
            let patch = patches.bits(p);
            let kind = if type_one {
                type_ia(&mut row, patch, &odds, &mut rng);
                FeedbackKind::TypeIa
            } else {
                type_ii(&mut row, patch);
                FeedbackKind::TypeII
            };
            let w = &mut row.weights[a.class];
            *w = match a.role {
                Role::Target => w.saturating_add(1),
                Role::Negative => w.saturating_sub(1),
            };
            row.counts[p] = row.counts[p].saturating_add(1);
            events.push(FeedbackEvent {
                clause_id: c,
                class_id: a.class,
                kind,
                patch_index: Some(p),
            });
        }
        events
    });
    per_clause.into_iter().flatten().collect()
}

fn evaluate(bank: &ClauseBank, sample: &BinarizedSample) -> Result<(Patches, Vec<bool>, Vec<i64>)> {
    let patches = bank.patches(sample)?;
    let active = bank.activations(&patches);
    let sums = bank.class_sums_from_activations(&active);
    Ok((patches, active, sums))
}

/// One multiclass step: Type I path for the true class and Type II path for
/// one uniformly sampled other class.
pub fn update_multiclass(
    bank: &mut ClauseBank,
    sample: &BinarizedSample,
    true_class: usize,
    rng: &mut TrainRng,
) -> Result<Vec<FeedbackEvent>> {
    let k = bank.n_classes();
    if true_class >= k {
        return Err(Error::config(format!("class {true_class} out of range for {k} classes")));
    }
    let (patches, active, sums) = evaluate(bank, sample)?;
    let t = bank.config().target;
    let mut assignments = vec![Assignment {
        class: true_class,
        role: Role::Target,
        probability: target_probability(sums[true_class], t),
    }];
    if k > 1 {
        let mut other = rng.control().random_range(0..k - 1);
        if other >= true_class {
            other += 1;
        }
        assignments.push(Assignment {
            class: other,
            role: Role::Negative,
            probability: negative_probability(sums[other], t),
        });
    }
    let events = apply_feedback(bank, &patches, &active, &assignments, rng);
    rng.advance();
    Ok(events)
}

/// One multilabel step: every listed class is a target; every other class
/// is gated in as a negative with probability `min(1, q / (K - 1))`.
pub fn update_multilabel(
    bank: &mut ClauseBank,
    sample: &BinarizedSample,
    label_set: &[usize],
    rng: &mut TrainRng,
) -> Result<Vec<FeedbackEvent>> {
    let k = bank.n_classes();
    let mut is_label = vec![false; k];
    for &l in label_set {
        if l >= k {
            return Err(Error::config(format!("class {l} out of range for {k} classes")));
        }
        is_label[l] = true;
    }
    let (patches, active, sums) = evaluate(bank, sample)?;
    let t = bank.config().target;
    let gate = gate_probability(bank.config().q, k);
    let mut assignments = Vec::with_capacity(k);
    for (class, &label) in is_label.iter().enumerate() {
        if label {
            assignments.push(Assignment {
                class,
                role: Role::Target,
                probability: target_probability(sums[class], t),
            });
        } else if rng.control().random::<f64>() < gate {
            assignments.push(Assignment {
                class,
                role: Role::Negative,
                probability: negative_probability(sums[class], t),
            });
        }
    }
    let events = apply_feedback(bank, &patches, &active, &assignments, rng);
    rng.advance();
    Ok(events)
}

pub fn record_patch_count(bank: &mut ClauseBank, clause_id: usize, patch_index: usize) -> Result<()> {
    let p = bank.n_patches();
    if clause_id >= bank.n_clauses() || patch_index >= p {
        return Err(Error::Internal(format!(
            "patch count index ({clause_id}, {patch_index}) outside {}x{p}",
            bank.n_clauses()
        )));
    }
    let cell = &mut bank.patch_counts_mut()[clause_id * p + patch_index];
    *cell = cell.saturating_add(1);
    Ok(())
}

/// Patch counts normalized per clause; clauses never counted stay zero.
pub fn get_patch_weights(bank: &ClauseBank) -> Vec<Vec<f64>> {
    (0..bank.n_clauses())
        .map(|c| normalize_counts(bank.clause_patch_counts(c)))
        .collect()
}

pub fn normalize_counts(counts: &[u32]) -> Vec<f64> {
    let total: u64 = counts.iter().map(|&v| v as u64).sum();
    if total == 0 {
        return vec![0.0; counts.len()];
    }
    counts.iter().map(|&v| v as f64 / total as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub metric: &'static str,
    pub value: f64,
}

impl fmt::Display for EpochReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch={} metric={} value={:.6}", self.epoch, self.metric, self.value)
    }
}

pub fn fit(
    bank: &mut ClauseBank,
    samples: &[BinarizedSample],
    labels: &Labels,
    epochs: usize,
    rng: &mut TrainRng,
) -> Result<Vec<EpochReport>> {
    fit_with_progress(bank, samples, labels, epochs, rng, |_| {})
}

/// Runs `epochs` passes in seeded shuffled order, reporting the training-set
/// metric (accuracy for multiclass, macro F1 for multilabel) after each.
pub fn fit_with_progress(
    bank: &mut ClauseBank,
    samples: &[BinarizedSample],
    labels: &Labels,
    epochs: usize,
    rng: &mut TrainRng,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<Vec<EpochReport>> {
    if samples.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    if labels.len() != samples.len() {
        return Err(Error::Consistency(format!(
            "{} samples but {} labels",
            samples.len(),
            labels.len()
        )));
    }
    match (bank.config().task, labels) {
        (Task::Multiclass, Labels::Single(_)) | (Task::Multilabel, Labels::Multi(_)) => {}
        _ => return Err(Error::config("label kind does not match the model task")),
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut reports = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        order.shuffle(rng.control());
        for &i in &order {
            match labels {
                Labels::Single(y) => update_multiclass(bank, &samples[i], y[i], rng)?,
                Labels::Multi(y) => update_multilabel(bank, &samples[i], &y[i], rng)?,
            };
        }
        let report = match labels {
            Labels::Single(y) => {
                let correct = samples
                    .iter()
                    .zip(y)
                    .map(|(s, &t)| bank.class_sums(s).map(|v| usize::from(argmax(&v) == t)))
                    .sum::<Result<usize>>()?;
                EpochReport {
                    epoch,
                    metric: "accuracy",
                    value: correct as f64 / samples.len() as f64,
                }
            }
            Labels::Multi(y) => {
                let predicted = samples
                    .iter()
                    .map(|s| bank.class_sums(s).map(|v| positive_classes(&v)))
                    .collect::<Result<Vec<_>>>()?;
                EpochReport {
                    epoch,
                    metric: "macro_f1",
                    value: metrics::macro_f1_from_sets(&predicted, y, bank.n_classes()),
                }
            }
        };
        on_epoch(&report);
        reports.push(report);
    }
    Ok(reports)
}
