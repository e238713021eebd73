use crate::codec::Binarizer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Multiclass,
    Multilabel,
}

/// Hyperparameters and input geometry of a clause bank.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_clauses: usize,
    /// Class-sum target `T`.
    pub target: u32,
    /// Specificity `s`.
    pub specificity: f64,
    pub patch_width: usize,
    /// Expected number of false-label classes receiving Type II feedback per
    /// sample in multilabel training.
    pub q: f64,
    /// States per automaton action; the automaton has `2 * n_states` states.
    pub n_states: u16,
    pub binarizer: Binarizer,
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub n_classes: usize,
    pub task: Task,
}

impl ModelConfig {
    /// Defaults: 100 clauses, T = 100, s = 10, 3x3 patches, q = 1, 127 states
    /// per action, threshold binarization at 75.
    pub fn new(rows: usize, cols: usize, channels: usize, n_classes: usize) -> Self {
        Self {
            n_clauses: 100,
            target: 100,
            specificity: 10.0,
            patch_width: 3,
            q: 1.0,
            n_states: 127,
            binarizer: Binarizer::Threshold(75),
            rows,
            cols,
            channels,
            n_classes,
            task: Task::Multiclass,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_clauses == 0 {
            return fail("at least one clause is required".into());
        }
        if self.target < 1 {
            return fail("target T must be at least 1".into());
        }
        if self.specificity.is_nan() || self.specificity <= 1.0 {
            return fail(format!("specificity s must exceed 1, got {}", self.specificity));
        }
        if self.q.is_nan() || self.q < 0.0 {
            return fail(format!("q must be non-negative, got {}", self.q));
        }
        if self.n_states == 0 || self.n_states > u16::MAX / 2 {
            return fail(format!("states per action must be in 1..={}", u16::MAX / 2));
        }
        if self.channels == 0 || self.rows == 0 || self.cols == 0 {
            return fail("image dimensions must be positive".into());
        }
        if self.patch_width == 0 || self.patch_width > self.rows.min(self.cols) {
            return fail(format!(
                "patch width {} does not fit a {}x{} image",
                self.patch_width, self.rows, self.cols
            ));
        }
        if self.binarizer.bits_per_channel() == 0 {
            return fail("binarizer must emit at least one bit per channel".into());
        }
        match self.task {
            Task::Multiclass if self.n_classes < 2 => {
                fail("multiclass task needs at least two classes".into())
            }
            Task::Multilabel if self.n_classes < 1 => fail("at least one class is required".into()),
            _ => Ok(()),
        }
    }

    pub fn layout(&self) -> LiteralLayout {
        LiteralLayout::new(
            self.rows,
            self.cols,
            self.channels,
            self.binarizer.bits_per_channel(),
            self.patch_width,
        )
    }
}

/// Where each feature of a patch lives.
///
/// Features are ordered as the `W x W x Z_b` window bits (row-major, plane
/// fastest), then the row-origin thermometer code, then the column-origin
/// code. Literal `k < n_features` is feature `k`; literal `n_features + k` is
/// its negation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LiteralLayout {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub bits_per_channel: usize,
    pub patch_width: usize,
    /// Distinct row origins, `N - W + 1`.
    pub row_positions: usize,
    /// Distinct column origins, `M - W + 1`.
    pub col_positions: usize,
}

/// Decoded meaning of a literal index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature {
    Pixel { dr: usize, dc: usize, plane: usize },
    RowCode(usize),
    ColCode(usize),
}

impl LiteralLayout {
    pub fn new(
        rows: usize,
        cols: usize,
        channels: usize,
        bits_per_channel: usize,
        patch_width: usize,
    ) -> Self {
        Self {
            rows,
            cols,
            channels,
            bits_per_channel,
            patch_width,
            row_positions: rows + 1 - patch_width,
            col_positions: cols + 1 - patch_width,
        }
    }

    pub fn depth(&self) -> usize {
        self.channels * self.bits_per_channel
    }

    pub fn pixel_features(&self) -> usize {
        self.patch_width * self.patch_width * self.depth()
    }

    pub fn row_code_len(&self) -> usize {
        self.row_positions - 1
    }

    pub fn col_code_len(&self) -> usize {
        self.col_positions - 1
    }

    pub fn row_code_offset(&self) -> usize {
        self.pixel_features()
    }

    pub fn col_code_offset(&self) -> usize {
        self.pixel_features() + self.row_code_len()
    }

    pub fn n_features(&self) -> usize {
        self.pixel_features() + self.row_code_len() + self.col_code_len()
    }

    pub fn n_literals(&self) -> usize {
        2 * self.n_features()
    }

    pub fn words(&self) -> usize {
        self.n_features().div_ceil(64)
    }

    pub fn n_patches(&self) -> usize {
        self.row_positions * self.col_positions
    }

    #[inline]
    pub fn pixel_feature(&self, dr: usize, dc: usize, plane: usize) -> usize {
        (dr * self.patch_width + dc) * self.depth() + plane
    }

    /// Patch index of origin `(row, col)`; patches are row-major.
    #[inline]
    pub fn patch_index(&self, row: usize, col: usize) -> usize {
        row * self.col_positions + col
    }

    #[inline]
    pub fn patch_origin(&self, index: usize) -> (usize, usize) {
        (index / self.col_positions, index % self.col_positions)
    }

    /// Feature behind a literal and whether the literal is negated.
    pub fn describe(&self, literal: usize) -> (Feature, bool) {
        let f = self.n_features();
        let (k, negated) = if literal < f { (literal, false) } else { (literal - f, true) };
        let feature = if k < self.pixel_features() {
            let plane = k % self.depth();
            let cell = k / self.depth();
            Feature::Pixel {
                dr: cell / self.patch_width,
                dc: cell % self.patch_width,
                plane,
            }
        } else if k < self.col_code_offset() {
            Feature::RowCode(k - self.row_code_offset())
        } else {
            Feature::ColCode(k - self.col_code_offset())
        };
        (feature, negated)
    }
}
