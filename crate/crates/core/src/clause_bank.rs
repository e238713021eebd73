//! Shared clause bank: automaton states, include masks, per-class weights and
//! patch counts, plus convolutional matching and inference.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{unbinarize, BinarizedSample, ContributionMaps, ThermometerCodec};
use crate::config::{LiteralLayout, ModelConfig};
use crate::error::{Error, Result};
use crate::par;

#[inline]
fn get_bit(words: &[u64], k: usize) -> bool {
    words[k / 64] >> (k % 64) & 1 == 1
}

#[inline]
fn set_bit(words: &mut [u64], k: usize) {
    words[k / 64] |= 1 << (k % 64);
}

#[inline]
fn clear_bit(words: &mut [u64], k: usize) {
    words[k / 64] &= !(1 << (k % 64));
}

/// Feature bits of one patch plus its origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchLiteralVector {
    pub bits: Vec<u64>,
    pub n_features: usize,
    pub origin: (usize, usize),
}

impl PatchLiteralVector {
    pub fn feature(&self, k: usize) -> bool {
        get_bit(&self.bits, k)
    }

    /// Value of literal `l`; literals past `n_features` are negations.
    pub fn literal(&self, l: usize) -> bool {
        if l < self.n_features {
            self.feature(l)
        } else {
            !self.feature(l - self.n_features)
        }
    }
}

/// All patches of one sample in row-major origin order, packed contiguously.
#[derive(Debug, Clone)]
pub struct Patches {
    layout: LiteralLayout,
    words: usize,
    data: Vec<u64>,
}

impl Patches {
    pub fn layout(&self) -> &LiteralLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.layout.n_patches()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn bits(&self, p: usize) -> &[u64] {
        &self.data[p * self.words..(p + 1) * self.words]
    }

    pub fn origin(&self, p: usize) -> (usize, usize) {
        self.layout.patch_origin(p)
    }

    pub fn vector(&self, p: usize) -> PatchLiteralVector {
        PatchLiteralVector {
            bits: self.bits(p).to_vec(),
            n_features: self.layout.n_features(),
            origin: self.origin(p),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = PatchLiteralVector> + '_ {
        (0..self.len()).map(|p| self.vector(p))
    }
}

/// Cuts a sample into `W x W` windows with thermometer-coded origins.
pub fn extract_patches(sample: &BinarizedSample, patch_width: usize) -> Result<Patches> {
    if patch_width == 0 || patch_width > sample.rows.min(sample.cols) {
        return Err(Error::config(format!(
            "patch width {patch_width} does not fit a {}x{} sample",
            sample.rows, sample.cols
        )));
    }
    let layout = LiteralLayout::new(
        sample.rows,
        sample.cols,
        sample.channels,
        sample.bits_per_channel,
        patch_width,
    );
    Ok(extract_with_layout(sample, layout))
}

fn extract_with_layout(sample: &BinarizedSample, layout: LiteralLayout) -> Patches {
    let words = layout.words();
    let w = layout.patch_width;
    let depth = layout.depth();
    let mut data = vec![0u64; words * layout.n_patches()];
    for (p, patch) in data.chunks_mut(words.max(1)).take(layout.n_patches()).enumerate() {
        let (m, n) = layout.patch_origin(p);
        for dr in 0..w {
            for dc in 0..w {
                let base = (dr * w + dc) * depth;
                for (plane, &b) in sample.pixel(m + dr, n + dc).iter().enumerate() {
                    if b != 0 {
                        set_bit(patch, base + plane);
                    }
                }
            }
        }
        for j in 0..m {
            set_bit(patch, layout.row_code_offset() + j);
        }
        for j in 0..n {
            set_bit(patch, layout.col_code_offset() + j);
        }
    }
    Patches { layout, words, data }
}

/// `C ∧ X = C` over packed words: included positive literals need a 1,
/// included negated literals need a 0.
#[inline]
pub fn clause_matches_patch(positive: &[u64], negated: &[u64], patch: &[u64]) -> bool {
    positive
        .iter()
        .zip(negated)
        .zip(patch)
        .all(|((&p, &n), &x)| (p & !x) | (n & x) == 0)
}

/// Index of the largest class sum; the lowest index wins ties.
pub fn argmax(class_sums: &[i64]) -> usize {
    let mut best = 0;
    for (i, &v) in class_sums.iter().enumerate() {
        if v > class_sums[best] {
            best = i;
        }
    }
    best
}

/// Classes with a strictly positive class sum.
pub fn positive_classes(class_sums: &[i64]) -> Vec<usize> {
    class_sums
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClauseBank {
    config: ModelConfig,
    layout: LiteralLayout,
    /// `C x 2F` automaton states in `1..=2 * n_states`.
    ta_state: Vec<u16>,
    include_pos: Vec<u64>,
    include_neg: Vec<u64>,
    /// `C x K`.
    weights: Vec<i32>,
    /// `C x P`.
    patch_counts: Vec<u32>,
}

/// Mutable view of one clause, handed out for per-clause feedback.
pub(crate) struct ClauseRowMut<'a> {
    pub n_states: u16,
    pub n_features: usize,
    pub states: &'a mut [u16],
    pub positive: &'a mut [u64],
    pub negated: &'a mut [u64],
    pub weights: &'a mut [i32],
    pub counts: &'a mut [u32],
}

impl ClauseRowMut<'_> {
    #[inline]
    fn sync(&mut self, literal: usize, included: bool) {
        let (mask, k) = if literal < self.n_features {
            (&mut *self.positive, literal)
        } else {
            (&mut *self.negated, literal - self.n_features)
        };
        if included {
            set_bit(mask, k);
        } else {
            clear_bit(mask, k);
        }
    }

    /// One step toward include, saturating at `2 * n_states`.
    #[inline]
    pub fn increment(&mut self, literal: usize) {
        let s = &mut self.states[literal];
        if *s < 2 * self.n_states {
            *s += 1;
            if *s == self.n_states + 1 {
                self.sync(literal, true);
            }
        }
    }

    /// One step toward exclude, saturating at 1.
    #[inline]
    pub fn decrement(&mut self, literal: usize) {
        let s = &mut self.states[literal];
        if *s > 1 {
            *s -= 1;
            if *s == self.n_states {
                self.sync(literal, false);
            }
        }
    }

    #[inline]
    pub fn is_included(&self, literal: usize) -> bool {
        self.states[literal] > self.n_states
    }

    #[inline]
    pub fn matches(&self, patch: &[u64]) -> bool {
        clause_matches_patch(self.positive, self.negated, patch)
    }
}

impl ClauseBank {
    /// Fresh bank: every automaton one step below include, weights `+1` on a
    /// random half of the `(clause, class)` pairs and `-1` elsewhere.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let c = config.n_clauses;
        let k = config.n_classes;
        let pairs = c * k;
        let mut weights: Vec<i32> = (0..pairs).map(|i| if i < pairs / 2 { 1 } else { -1 }).collect();
        weights.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Self {
            ta_state: vec![config.n_states; c * layout.n_literals()],
            include_pos: vec![0; c * layout.words()],
            include_neg: vec![0; c * layout.words()],
            weights,
            patch_counts: vec![0; c * layout.n_patches()],
            layout,
            config,
        })
    }

    /// Rebuilds a bank from stored tensors, recomputing include masks.
    pub fn from_parts(
        config: ModelConfig,
        ta_state: Vec<u16>,
        weights: Vec<i32>,
        patch_counts: Vec<u32>,
    ) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let c = config.n_clauses;
        let check = |name: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::Consistency(format!("{name} has {got} entries, expected {want}")))
            }
        };
        check("ta_state", ta_state.len(), c * layout.n_literals())?;
        check("weights", weights.len(), c * config.n_classes)?;
        check("patch_counts", patch_counts.len(), c * layout.n_patches())?;
        let max = 2 * config.n_states;
        if let Some(bad) = ta_state.iter().find(|&&s| s == 0 || s > max) {
            return Err(Error::Consistency(format!(
                "automaton state {bad} outside 1..={max}"
            )));
        }
        let mut bank = Self {
            ta_state,
            include_pos: vec![0; c * layout.words()],
            include_neg: vec![0; c * layout.words()],
            weights,
            patch_counts,
            layout,
            config,
        };
        bank.rebuild_masks();
        Ok(bank)
    }

    fn rebuild_masks(&mut self) {
        let f = self.layout.n_features();
        let words = self.layout.words();
        let n = self.config.n_states;
        self.include_pos.fill(0);
        self.include_neg.fill(0);
        for c in 0..self.config.n_clauses {
            let states = &self.ta_state[c * 2 * f..(c + 1) * 2 * f];
            let pos = &mut self.include_pos[c * words..(c + 1) * words];
            for k in (0..f).filter(|&k| states[k] > n) {
                set_bit(pos, k);
            }
            let neg = &mut self.include_neg[c * words..(c + 1) * words];
            for k in (0..f).filter(|&k| states[f + k] > n) {
                set_bit(neg, k);
            }
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &LiteralLayout {
        &self.layout
    }

    pub fn n_clauses(&self) -> usize {
        self.config.n_clauses
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    pub fn n_patches(&self) -> usize {
        self.layout.n_patches()
    }

    pub fn ta_states(&self) -> &[u16] {
        &self.ta_state
    }

    pub fn clause_states(&self, clause: usize) -> &[u16] {
        let l = self.layout.n_literals();
        &self.ta_state[clause * l..(clause + 1) * l]
    }

    pub fn weights(&self) -> &[i32] {
        &self.weights
    }

    pub fn clause_weights(&self, clause: usize) -> &[i32] {
        let k = self.config.n_classes;
        &self.weights[clause * k..(clause + 1) * k]
    }

    pub fn weight(&self, clause: usize, class: usize) -> i32 {
        self.weights[clause * self.config.n_classes + class]
    }

    pub fn set_weight(&mut self, clause: usize, class: usize, weight: i32) {
        self.weights[clause * self.config.n_classes + class] = weight;
    }

    pub fn patch_counts(&self) -> &[u32] {
        &self.patch_counts
    }

    pub fn clause_patch_counts(&self, clause: usize) -> &[u32] {
        let p = self.n_patches();
        &self.patch_counts[clause * p..(clause + 1) * p]
    }

    pub(crate) fn patch_counts_mut(&mut self) -> &mut [u32] {
        &mut self.patch_counts
    }

    /// Sets one automaton state, keeping the include mask consistent.
    pub fn set_ta_state(&mut self, clause: usize, literal: usize, state: u16) -> Result<()> {
        let max = 2 * self.config.n_states;
        if state == 0 || state > max {
            return Err(Error::config(format!("state {state} outside 1..={max}")));
        }
        if literal >= self.layout.n_literals() || clause >= self.n_clauses() {
            return Err(Error::config(format!("no literal {literal} in clause {clause}")));
        }
        let l = self.layout.n_literals();
        self.ta_state[clause * l + literal] = state;
        let f = self.layout.n_features();
        let words = self.layout.words();
        let (mask, k) = if literal < f {
            (&mut self.include_pos[clause * words..(clause + 1) * words], literal)
        } else {
            (&mut self.include_neg[clause * words..(clause + 1) * words], literal - f)
        };
        if state > self.config.n_states {
            set_bit(mask, k);
        } else {
            clear_bit(mask, k);
        }
        Ok(())
    }

    /// Moves a literal to the first include state.
    pub fn include_literal(&mut self, clause: usize, literal: usize) -> Result<()> {
        self.set_ta_state(clause, literal, self.config.n_states + 1)
    }

    pub fn is_included(&self, clause: usize, literal: usize) -> bool {
        self.clause_states(clause)[literal] > self.config.n_states
    }

    /// Packed include masks `(positive, negated)` over features.
    pub fn include_masks(&self, clause: usize) -> (&[u64], &[u64]) {
        let w = self.layout.words();
        (
            &self.include_pos[clause * w..(clause + 1) * w],
            &self.include_neg[clause * w..(clause + 1) * w],
        )
    }

    pub fn included_literals(&self, clause: usize) -> Vec<usize> {
        (0..self.layout.n_literals())
            .filter(|&l| self.is_included(clause, l))
            .collect()
    }

    fn feature_flags(&self, clause: usize, features: Range<usize>, negated: bool) -> Vec<bool> {
        let offset = if negated { self.layout.n_features() } else { 0 };
        features.map(|k| self.is_included(clause, offset + k)).collect()
    }

    /// Include flags `(positive, negated)` of the window pixel features.
    pub fn pixel_masks(&self, clause: usize) -> (Vec<bool>, Vec<bool>) {
        let r = 0..self.layout.pixel_features();
        (
            self.feature_flags(clause, r.clone(), false),
            self.feature_flags(clause, r, true),
        )
    }

    /// Origins `(rows, cols)` a clause's coordinate literals allow.
    pub fn feasible_positions(&self, clause: usize) -> (Range<usize>, Range<usize>) {
        let l = &self.layout;
        let decode = |offset: usize, len: usize, resolution: usize| {
            let r = offset..offset + len;
            ThermometerCodec::new(resolution)
                .and_then(|codec| {
                    codec.decode_positions(
                        &self.feature_flags(clause, r.clone(), false),
                        &self.feature_flags(clause, r.clone(), true),
                    )
                })
                .expect("layout-consistent coordinate masks")
        };
        (
            decode(l.row_code_offset(), l.row_code_len(), l.row_positions),
            decode(l.col_code_offset(), l.col_code_len(), l.col_positions),
        )
    }

    /// Inclusion counts of the clause's pixel literals per raw channel.
    pub fn contribution_maps(&self, clause: usize) -> ContributionMaps {
        let (pos, neg) = self.pixel_masks(clause);
        unbinarize(
            &pos,
            &neg,
            self.layout.patch_width,
            self.layout.channels,
            self.layout.bits_per_channel,
        )
        .expect("layout-consistent pixel masks")
    }

    fn check_sample(&self, sample: &BinarizedSample) -> Result<()> {
        let l = &self.layout;
        if (sample.rows, sample.cols, sample.channels, sample.bits_per_channel)
            != (l.rows, l.cols, l.channels, l.bits_per_channel)
        {
            return Err(Error::config(format!(
                "sample is {}x{}x{} with {} bits per channel, model expects {}x{}x{} with {}",
                sample.rows,
                sample.cols,
                sample.channels,
                sample.bits_per_channel,
                l.rows,
                l.cols,
                l.channels,
                l.bits_per_channel
            )));
        }
        Ok(())
    }

    pub fn patches(&self, sample: &BinarizedSample) -> Result<Patches> {
        self.check_sample(sample)?;
        Ok(extract_with_layout(sample, self.layout))
    }

    pub fn clause_matches_patch(&self, clause: usize, patch: &[u64]) -> bool {
        let (pos, neg) = self.include_masks(clause);
        clause_matches_patch(pos, neg, patch)
    }

    /// OR over all patch matches plus the indices that matched.
    pub fn clause_activation(&self, clause: usize, patches: &Patches) -> (bool, Vec<usize>) {
        let matched: Vec<usize> = (0..patches.len())
            .filter(|&p| self.clause_matches_patch(clause, patches.bits(p)))
            .collect();
        (!matched.is_empty(), matched)
    }

    /// Clause output only; stops at the first matching patch.
    pub fn is_active(&self, clause: usize, patches: &Patches) -> bool {
        let (pos, neg) = self.include_masks(clause);
        (0..patches.len()).any(|p| clause_matches_patch(pos, neg, patches.bits(p)))
    }

    pub fn activations(&self, patches: &Patches) -> Vec<bool> {
        par::map_range(self.n_clauses(), |c| self.is_active(c, patches))
    }

    pub fn class_sums_from_activations(&self, active: &[bool]) -> Vec<i64> {
        let k = self.n_classes();
        let mut sums = vec![0i64; k];
        for (c, _) in active.iter().enumerate().filter(|(_, &a)| a) {
            for (s, &w) in sums.iter_mut().zip(self.clause_weights(c)) {
                *s += w as i64;
            }
        }
        sums
    }

    pub fn class_sums(&self, sample: &BinarizedSample) -> Result<Vec<i64>> {
        let patches = self.patches(sample)?;
        Ok(self.class_sums_from_activations(&self.activations(&patches)))
    }

    pub fn predict_multiclass(&self, sample: &BinarizedSample) -> Result<usize> {
        Ok(argmax(&self.class_sums(sample)?))
    }

    pub fn predict_multilabel(&self, sample: &BinarizedSample) -> Result<Vec<usize>> {
        Ok(positive_classes(&self.class_sums(sample)?))
    }

    pub(crate) fn rows_mut(&mut self) -> Vec<ClauseRowMut<'_>> {
        let l = self.layout.n_literals();
        let w = self.layout.words();
        let k = self.config.n_classes;
        let p = self.layout.n_patches();
        let n_states = self.config.n_states;
        let n_features = self.layout.n_features();
        // zero-width rows still need one row per clause
        let chunk = |n: usize| n.max(1);
        self.ta_state
            .chunks_mut(chunk(l))
            .zip(self.include_pos.chunks_mut(chunk(w)))
            .zip(self.include_neg.chunks_mut(chunk(w)))
            .zip(self.weights.chunks_mut(chunk(k)))
            .zip(self.patch_counts.chunks_mut(chunk(p)))
            .map(|((((states, positive), negated), weights), counts)| ClauseRowMut {
                n_states,
                n_features,
                states,
                positive,
                negated,
                weights,
                counts,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{binarize_threshold, RawImage};

    fn sample(rows: usize, cols: usize, on: &[(usize, usize)]) -> BinarizedSample {
        let mut img = RawImage::zeros(rows, cols, 1);
        for &(r, c) in on {
            img.set(r, c, 0, 255);
        }
        binarize_threshold(&img, 0)
    }

    fn small_config() -> ModelConfig {
        let mut c = ModelConfig::new(4, 4, 1, 2);
        c.n_clauses = 3;
        c.patch_width = 3;
        c
    }

    #[test]
    fn patch_counts_and_origins() {
        let s = sample(28, 28, &[]);
        assert_eq!(extract_patches(&s, 10).unwrap().len(), 361);

        let s = sample(4, 4, &[]);
        let p = extract_patches(&s, 3).unwrap();
        let origins: Vec<_> = (0..p.len()).map(|i| p.origin(i)).collect();
        assert_eq!(origins, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);

        let full = extract_patches(&s, 4).unwrap();
        assert_eq!(full.len(), 1);
        assert_eq!(full.origin(0), (0, 0));
        assert_eq!(full.layout().row_code_len() + full.layout().col_code_len(), 0);

        assert!(extract_patches(&s, 5).is_err());
    }

    #[test]
    fn coordinate_codes_are_thermometer() {
        let s = sample(6, 6, &[]);
        let p = extract_patches(&s, 2).unwrap();
        let l = *p.layout();
        for i in 0..p.len() {
            let v = p.vector(i);
            let (m, n) = v.origin;
            for j in 0..l.row_code_len() {
                assert_eq!(v.feature(l.row_code_offset() + j), j < m);
            }
            for j in 0..l.col_code_len() {
                assert_eq!(v.feature(l.col_code_offset() + j), j < n);
            }
        }
    }

    #[test]
    fn table_row_matching() {
        // clause 100100 against X = 111100 / 111000 on a 6-bit feature word
        let clause = [0b001001u64];
        assert!(clause_matches_patch(&clause, &[0], &[0b001111]));
        assert!(!clause_matches_patch(&clause, &[0], &[0b000111]));
        assert!(clause_matches_patch(&[0], &[0], &[0b101010]));
    }

    #[test]
    fn activation_or_aggregation() {
        let mut bank = ClauseBank::new(small_config(), 1).unwrap();
        let s = sample(4, 4, &[(1, 1)]);
        let patches = bank.patches(&s).unwrap();
        // empty clause matches everywhere
        assert_eq!(bank.clause_activation(0, &patches), (true, vec![0, 1, 2, 3]));
        // window-local (0,0) on: only the patch at origin (1,1)
        let lit = bank.layout().pixel_feature(0, 0, 0);
        bank.include_literal(0, lit).unwrap();
        assert_eq!(bank.clause_activation(0, &patches), (true, vec![3]));
        // requiring (0,0) off as well can never match
        let f = bank.layout().n_features();
        bank.include_literal(0, f + lit).unwrap();
        assert_eq!(bank.clause_activation(0, &patches), (false, vec![]));
    }

    #[test]
    fn include_boundary() {
        let mut bank = ClauseBank::new(small_config(), 1).unwrap();
        let n = bank.config().n_states;
        bank.set_ta_state(1, 2, n).unwrap();
        assert!(!bank.is_included(1, 2));
        assert_eq!(bank.include_masks(1).0[0], 0);
        bank.set_ta_state(1, 2, n + 1).unwrap();
        assert!(bank.is_included(1, 2));
        assert_eq!(bank.include_masks(1).0[0], 1 << 2);
    }

    #[test]
    fn initial_weights_balanced() {
        let mut cfg = small_config();
        cfg.n_clauses = 10;
        let bank = ClauseBank::new(cfg, 7).unwrap();
        let plus = bank.weights().iter().filter(|&&w| w == 1).count();
        assert_eq!(plus, 10);
        assert!(bank.weights().iter().all(|&w| w == 1 || w == -1));
        assert_eq!(bank, ClauseBank::new(bank.config().clone(), 7).unwrap());
    }

    #[test]
    fn class_sum_arithmetic() {
        let mut bank = ClauseBank::new(small_config(), 1).unwrap();
        bank.set_weight(0, 0, 3);
        bank.set_weight(1, 0, -2);
        bank.set_weight(2, 1, -5);
        assert_eq!(bank.class_sums_from_activations(&[true, true, false])[0], 1);
        assert_eq!(bank.class_sums_from_activations(&[false, false, false]), vec![0, 0]);
        let only = bank.class_sums_from_activations(&[false, false, true]);
        assert_eq!(only[1], -5);
    }

    #[test]
    fn decisions() {
        assert_eq!(argmax(&[5, -1, 2]), 0);
        assert_eq!(argmax(&[2, 2]), 0);
        assert_eq!(argmax(&[-4, -4, -4]), 0);
        assert_eq!(positive_classes(&[5, -1, 2]), vec![0, 2]);
        assert!(positive_classes(&[0, 0]).is_empty());
        assert!(positive_classes(&[-3]).is_empty());
    }

    #[test]
    fn feasible_positions_follow_coordinate_literals() {
        let mut cfg = ModelConfig::new(10, 10, 1, 2);
        cfg.patch_width = 4; // 7 positions per axis
        cfg.n_clauses = 1;
        let mut bank = ClauseBank::new(cfg, 0).unwrap();
        let l = *bank.layout();
        bank.include_literal(0, l.row_code_offset()).unwrap();
        bank.include_literal(0, l.row_code_offset() + 3).unwrap();
        let f = l.n_features();
        bank.include_literal(0, f + l.col_code_offset() + 2).unwrap();
        assert_eq!(bank.feasible_positions(0), (4..7, 0..3));
    }

    #[test]
    fn rejects_mismatched_sample() {
        let bank = ClauseBank::new(small_config(), 1).unwrap();
        assert!(bank.class_sums(&sample(5, 5, &[])).is_err());
    }
}
