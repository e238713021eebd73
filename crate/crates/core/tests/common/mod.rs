//! Brute-force oracles and synthetic data shared by the integration tests.
//!
//! Nothing here goes through packed bit masks, `Patches`, `unbinarize` or
//! the interpreter; every oracle works literal by literal.

#![allow(dead_code)]

use std::path::PathBuf;

use cotm::codec::{binarize_threshold, RawImage};
use cotm::{BinarizedSample, Binarizer, ClauseBank, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Value of feature `k` of the patch at origin `(m, n)`, computed from the
/// sample bits and the origin directly.
pub fn feature_value(sample: &BinarizedSample, w: usize, m: usize, n: usize, k: usize) -> bool {
    let depth = sample.channels * sample.bits_per_channel;
    let pixel_features = w * w * depth;
    let row_code = sample.rows - w;
    if k < pixel_features {
        let plane = k % depth;
        let cell = k / depth;
        sample.bit(m + cell / w, n + cell % w, plane)
    } else if k < pixel_features + row_code {
        // thermometer: bit j of the code of m is set iff j < m
        k - pixel_features < m
    } else {
        k - pixel_features - row_code < n
    }
}

/// Conjunction over included literals, evaluated one literal at a time.
pub fn brute_force_match(include: &[bool], features: &[bool]) -> bool {
    let f = features.len();
    include.iter().enumerate().all(|(l, &inc)| {
        if !inc {
            return true;
        }
        if l < f {
            features[l]
        } else {
            !features[l - f]
        }
    })
}

/// Local interpretation straight from the algorithm's loop structure:
/// for each positive-weight clause, each patch it matches, each included
/// pixel literal, add `+w` (positive literal) or `-w` (negated literal) at
/// the covered pixel of the literal's raw channel.
pub fn brute_force_local(bank: &ClauseBank, sample: &BinarizedSample, class: usize) -> Vec<i64> {
    let cfg = bank.config();
    let w = cfg.patch_width;
    let bpc = sample.bits_per_channel;
    let depth = sample.channels * bpc;
    let (rows, cols, z) = (sample.rows, sample.cols, sample.channels);
    let f = w * w * depth + (rows - w) + (cols - w);
    let mut out = vec![0i64; rows * cols * z];
    for c in 0..bank.n_clauses() {
        let weight = bank.weight(c, class) as i64;
        if weight <= 0 {
            continue;
        }
        let include: Vec<bool> = (0..2 * f).map(|l| bank.is_included(c, l)).collect();
        for m in 0..=rows - w {
            for n in 0..=cols - w {
                let features: Vec<bool> = (0..f).map(|k| feature_value(sample, w, m, n, k)).collect();
                if !brute_force_match(&include, &features) {
                    continue;
                }
                for (l, _) in include.iter().enumerate().filter(|(_, &i)| i) {
                    let (k, sign) = if l < f { (l, 1) } else { (l - f, -1) };
                    if k >= w * w * depth {
                        continue;
                    }
                    let plane = k % depth;
                    let cell = k / depth;
                    let (r, col) = (m + cell / w, n + cell % w);
                    out[(r * cols + col) * z + plane / bpc] += sign * weight;
                }
            }
        }
    }
    out
}

/// Values `v` whose `B - 1` bit thermometer code satisfies the included
/// literals, found by trying every value.
pub fn brute_force_decode(include: &[bool], resolution: usize) -> Vec<usize> {
    (0..resolution)
        .filter(|&v| {
            let code: Vec<bool> = (0..resolution - 1).map(|j| j < v).collect();
            brute_force_match(include, &code)
        })
        .collect()
}

/// Random tiny bank (geometry, binarizer, includes and weights) plus a
/// random sample and class to interpret.
pub fn random_micro_bank(rng: &mut ChaCha8Rng) -> (ClauseBank, BinarizedSample, usize) {
    let rows = rng.random_range(2..=6);
    let cols = rng.random_range(2..=6);
    let channels = if rng.random_bool(0.5) { 1 } else { 3 };
    let binarizer = if rng.random_bool(0.5) {
        Binarizer::Threshold(rng.random_range(50..200))
    } else {
        Binarizer::Thermometer {
            levels: rng.random_range(2..=3),
        }
    };
    let n_classes = rng.random_range(2..=3);
    let mut cfg = ModelConfig::new(rows, cols, channels, n_classes);
    cfg.n_clauses = rng.random_range(1..=3);
    cfg.patch_width = rng.random_range(1..=rows.min(cols));
    cfg.binarizer = binarizer;
    let mut bank = ClauseBank::new(cfg.clone(), rng.random()).unwrap();
    let n_literals = bank.layout().n_literals();
    for c in 0..cfg.n_clauses {
        let density = rng.random_range(0.0..0.15);
        for l in 0..n_literals {
            if rng.random_bool(density) {
                bank.include_literal(c, l).unwrap();
            }
        }
        for k in 0..n_classes {
            bank.set_weight(c, k, rng.random_range(-3..=4));
        }
    }
    let data: Vec<u8> = (0..rows * cols * channels).map(|_| rng.random()).collect();
    let img = RawImage::new(rows, cols, channels, data).unwrap();
    let sample = binarizer.apply(&img).unwrap();
    let class = rng.random_range(0..n_classes);
    (bank, sample, class)
}

pub fn sample_from(rows: usize, cols: usize, on: &[(usize, usize)]) -> BinarizedSample {
    let mut img = RawImage::zeros(rows, cols, 1);
    for &(r, c) in on {
        img.set(r, c, 0, 255);
    }
    binarize_threshold(&img, 0)
}

/// Two classes on 4x4 images: class 1 carries a fixed 2x2 checker motif
/// somewhere, class 0 carries the complementary checker. Background noise
/// never forms either motif.
pub fn xor_motif_dataset(n: usize, seed: u64) -> (Vec<BinarizedSample>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let (r, c) = (rng.random_range(0..3), rng.random_range(0..3));
        let on = if class == 1 {
            vec![(r, c), (r + 1, c + 1)]
        } else {
            vec![(r, c + 1), (r + 1, c)]
        };
        samples.push(sample_from(4, 4, &on));
        labels.push(class);
    }
    (samples, labels)
}

const MOTIFS: [[u8; 9]; 4] = [
    [1, 1, 1, 0, 1, 0, 0, 0, 0],
    [1, 1, 1, 0, 0, 0, 1, 0, 0],
    [1, 0, 0, 0, 1, 0, 0, 0, 1],
    [1, 0, 0, 1, 0, 0, 1, 0, 0],
];

/// Four-class multilabel data on 10x10 images. Each class is present with
/// probability 0.35 and stamps its 3x3 motif at a random spot; the motifs
/// share strokes, and absent classes stamp a decoy (their motif missing one
/// pixel) half of the time. Pixel noise flips 2% of the background on.
pub fn overlapping_motif_dataset(n: usize, seed: u64) -> (Vec<BinarizedSample>, Vec<Vec<usize>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut img = RawImage::zeros(10, 10, 1);
        let mut set = Vec::new();
        for (class, motif) in MOTIFS.iter().enumerate() {
            let present = rng.random_bool(0.35);
            let decoy = !present && rng.random_bool(0.5);
            if !(present || decoy) {
                continue;
            }
            if present {
                set.push(class);
            }
            let skip = if decoy {
                let on: Vec<usize> = (0..9).filter(|&i| motif[i] == 1).collect();
                Some(on[rng.random_range(0..on.len())])
            } else {
                None
            };
            let (r, c) = (rng.random_range(0..8), rng.random_range(0..8));
            for (i, &bit) in motif.iter().enumerate() {
                if bit == 1 && Some(i) != skip {
                    img.set(r + i / 3, c + i % 3, 0, 255);
                }
            }
        }
        for r in 0..10 {
            for c in 0..10 {
                if rng.random_bool(0.02) {
                    img.set(r, c, 0, 255);
                }
            }
        }
        samples.push(binarize_threshold(&img, 0));
        labels.push(set);
    }
    (samples, labels)
}

/// MNIST IDX directory: `COTM_MNIST_DIR`, else `/root/data/mnist`, else
/// `data/mnist` under the workspace root.
pub fn mnist_dir() -> Option<PathBuf> {
    let candidates = [
        std::env::var_os("COTM_MNIST_DIR").map(PathBuf::from),
        Some(PathBuf::from("/root/data/mnist")),
        Some(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")),
    ];
    candidates
        .into_iter()
        .flatten()
        .find(|d| d.join("train-images-idx3-ubyte").is_file() && d.join("t10k-labels-idx1-ubyte").is_file())
}
