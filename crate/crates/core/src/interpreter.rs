//! Pixel-level explanations of a trained clause bank.
//!
//! Both explanations place each positive-weight clause's unbinarized literal
//! counts at patch origins and accumulate them scaled by the clause's weight
//! for the class of interest. The local variant uses the origins where the
//! clause matches one input; the global variant uses every origin allowed by
//! the clause's coordinate literals, scaled by the clause's normalized patch
//! counts.

use std::io::Cursor;

use image::{ImageFormat, RgbImage};

use crate::clause_bank::ClauseBank;
use crate::codec::{BinarizedSample, ContributionMaps};
use crate::error::{Error, Result};
use crate::par;
use crate::trainer::normalize_counts;

const CLAUSE_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterpretationKind {
    Local,
    Global,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Values {
    /// Exact integer sums (local interpretation).
    Int(Vec<i64>),
    /// Sums weighted by normalized patch counts (global representation).
    Real(Vec<f64>),
}

/// Signed `rows x cols x channels` map, row-major with channel fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpretation {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub kind: InterpretationKind,
    pub class_id: usize,
    pub values: Values,
    /// Set for global representations of a bank without any patch counts.
    pub counts_missing: bool,
}

impl Interpretation {
    pub fn len(&self) -> usize {
        self.rows * self.cols * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.cols + col) * self.channels + channel
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        let i = self.index(row, col, channel);
        match &self.values {
            Values::Int(v) => v[i] as f64,
            Values::Real(v) => v[i],
        }
    }

    pub fn as_f64(&self) -> Vec<f64> {
        match &self.values {
            Values::Int(v) => v.iter().map(|&x| x as f64).collect(),
            Values::Real(v) => v.clone(),
        }
    }

    pub fn int_values(&self) -> Option<&[i64]> {
        match &self.values {
            Values::Int(v) => Some(v),
            Values::Real(_) => None,
        }
    }

    pub fn is_all_zero(&self) -> bool {
        match &self.values {
            Values::Int(v) => v.iter().all(|&x| x == 0),
            Values::Real(v) => v.iter().all(|&x| x == 0.0),
        }
    }
}

/// Interpretation scaled per channel into `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedInterpretation {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl NormalizedInterpretation {
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.values[(row * self.cols + col) * self.channels + channel]
    }
}

fn check_class(bank: &ClauseBank, class: usize) -> Result<()> {
    if class >= bank.n_classes() {
        return Err(Error::config(format!(
            "class {class} out of range for {} classes",
            bank.n_classes()
        )));
    }
    Ok(())
}

/// Adds `scale * maps` with the window's top-left corner at `(m, n)`.
fn place<T>(out: &mut [T], cols: usize, maps: &ContributionMaps, origin: (usize, usize), scale: T, positive: bool)
where
    T: Copy + std::ops::AddAssign + std::ops::Mul<Output = T> + From<u32>,
{
    let (m, n) = origin;
    let w = maps.width;
    let z = maps.channels;
    let src = if positive { &maps.positive } else { &maps.negative };
    for dr in 0..w {
        for dc in 0..w {
            let s = (dr * w + dc) * z;
            let d = ((m + dr) * cols + (n + dc)) * z;
            for ch in 0..z {
                let count = src[s + ch];
                if count != 0 {
                    out[d + ch] += scale * T::from(count);
                }
            }
        }
    }
}

fn add_into<T: Copy + std::ops::AddAssign>(mut a: Vec<T>, b: Vec<T>) -> Vec<T> {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
    a
}

/// Positive-weight clauses for `target_class`, deconvolved at every patch
/// of `sample` they match.
pub fn local_interpretation(
    bank: &ClauseBank,
    sample: &BinarizedSample,
    target_class: usize,
) -> Result<Interpretation> {
    check_class(bank, target_class)?;
    let patches = bank.patches(sample)?;
    let l = *bank.layout();
    let size = l.rows * l.cols * l.channels;
    // (I+, I-) accumulated per clause as I± += w * tempI±
    let (plus, minus) = par::chunked_fold(
        bank.n_clauses(),
        CLAUSE_CHUNK,
        || (vec![0i64; size], vec![0i64; size]),
        |(mut plus, mut minus), c| {
            let w = bank.weight(c, target_class);
            if w <= 0 {
                return (plus, minus);
            }
            let maps = bank.contribution_maps(c);
            if maps.is_empty() {
                return (plus, minus);
            }
            let (pos, neg) = bank.include_masks(c);
            for p in 0..patches.len() {
                if crate::clause_bank::clause_matches_patch(pos, neg, patches.bits(p)) {
                    let origin = patches.origin(p);
                    place(&mut plus, l.cols, &maps, origin, w as i64, true);
                    place(&mut minus, l.cols, &maps, origin, w as i64, false);
                }
            }
            (plus, minus)
        },
        |(a, b), (c, d)| (add_into(a, c), add_into(b, d)),
    );
    Ok(Interpretation {
        rows: l.rows,
        cols: l.cols,
        channels: l.channels,
        kind: InterpretationKind::Local,
        class_id: target_class,
        values: Values::Int(plus.iter().zip(&minus).map(|(p, m)| p - m).collect()),
        counts_missing: false,
    })
}

/// Positive-weight clauses for `target_class`, placed at every origin their
/// coordinate literals allow and weighted by their normalized patch counts.
pub fn global_class_representation(bank: &ClauseBank, target_class: usize) -> Result<Interpretation> {
    check_class(bank, target_class)?;
    let l = *bank.layout();
    let size = l.rows * l.cols * l.channels;
    let (plus, minus) = par::chunked_fold(
        bank.n_clauses(),
        CLAUSE_CHUNK,
        || (vec![0f64; size], vec![0f64; size]),
        |(mut plus, mut minus), c| {
            let w = bank.weight(c, target_class);
            if w <= 0 {
                return (plus, minus);
            }
            let maps = bank.contribution_maps(c);
            if maps.is_empty() {
                return (plus, minus);
            }
            let v = normalize_counts(bank.clause_patch_counts(c));
            let (rows, cols) = bank.feasible_positions(c);
            let mut temp_plus = vec![0f64; size];
            let mut temp_minus = vec![0f64; size];
            for m in rows {
                for n in cols.clone() {
                    let weight = v[l.patch_index(m, n)];
                    if weight != 0.0 {
                        place(&mut temp_plus, l.cols, &maps, (m, n), weight, true);
                        place(&mut temp_minus, l.cols, &maps, (m, n), weight, false);
                    }
                }
            }
            for (acc, t) in plus.iter_mut().zip(&temp_plus) {
                *acc += w as f64 * t;
            }
            for (acc, t) in minus.iter_mut().zip(&temp_minus) {
                *acc += w as f64 * t;
            }
            (plus, minus)
        },
        |(a, b), (c, d)| (add_into(a, c), add_into(b, d)),
    );
    Ok(Interpretation {
        rows: l.rows,
        cols: l.cols,
        channels: l.channels,
        kind: InterpretationKind::Global,
        class_id: target_class,
        values: Values::Real(plus.iter().zip(&minus).map(|(p, m)| p - m).collect()),
        counts_missing: bank.patch_counts().iter().all(|&c| c == 0),
    })
}

/// Per channel: negatives divided by `|min|`, non-negatives by `max`. A
/// branch whose extremum is zero stays zero.
pub fn normalize_interpretation(interp: &Interpretation) -> NormalizedInterpretation {
    let raw = interp.as_f64();
    let z = interp.channels;
    let mut values = vec![0.0; raw.len()];
    for ch in 0..z {
        let channel = raw.iter().skip(ch).step_by(z.max(1));
        let (min, max) = channel.fold((0.0f64, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        for i in (ch..raw.len()).step_by(z.max(1)) {
            let v = raw[i];
            values[i] = if v < 0.0 {
                -v / min
            } else if max > 0.0 {
                v / max
            } else {
                0.0
            };
        }
    }
    NormalizedInterpretation {
        rows: interp.rows,
        cols: interp.cols,
        channels: z,
        values,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    /// Single channel: red for positive, blue for negative, black for zero.
    Diverging,
    /// Three channels: positive magnitudes per channel, with the negative
    /// magnitudes in a companion sign map.
    Rgb,
}

#[derive(Debug, Clone)]
pub struct RenderedImage {
    pub png: Vec<u8>,
    /// Negative magnitudes per channel (RGB mode only).
    pub sign_map_png: Option<Vec<u8>>,
}

fn intensity(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn render_interpretation(norm: &NormalizedInterpretation, mode: RenderMode) -> Result<RenderedImage> {
    let (w, h) = (norm.cols as u32, norm.rows as u32);
    match (mode, norm.channels) {
        (RenderMode::Diverging, 1) => {
            let img = RgbImage::from_fn(w, h, |x, y| {
                let v = norm.get(y as usize, x as usize, 0);
                image::Rgb([intensity(v), 0, intensity(-v)])
            });
            Ok(RenderedImage {
                png: encode_png(&img)?,
                sign_map_png: None,
            })
        }
        (RenderMode::Rgb, 3) => {
            let channel_img = |sign: f64| {
                RgbImage::from_fn(w, h, |x, y| {
                    let px = |ch| intensity(sign * norm.get(y as usize, x as usize, ch));
                    image::Rgb([px(0), px(1), px(2)])
                })
            };
            Ok(RenderedImage {
                png: encode_png(&channel_img(1.0))?,
                sign_map_png: Some(encode_png(&channel_img(-1.0))?),
            })
        }
        (mode, z) => Err(Error::Usage(format!(
            "{mode:?} rendering does not support {z} channel(s)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn interp(values: Vec<i64>, channels: usize) -> Interpretation {
        Interpretation {
            rows: 1,
            cols: values.len() / channels,
            channels,
            kind: InterpretationKind::Local,
            class_id: 0,
            values: Values::Int(values),
            counts_missing: false,
        }
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_interpretation(&interp(vec![-4, 0, 2], 1)).values, vec![-1.0, 0.0, 1.0]);
        assert_eq!(normalize_interpretation(&interp(vec![0, 0], 1)).values, vec![0.0, 0.0]);
        assert_eq!(normalize_interpretation(&interp(vec![-2, -1], 1)).values, vec![-1.0, -0.5]);
    }

    #[test]
    fn normalization_is_per_channel() {
        // channel 0: [4, -2], channel 1: [1, 3]
        let n = normalize_interpretation(&interp(vec![4, 1, -2, 3], 2));
        assert_eq!(n.values, vec![1.0, 1.0 / 3.0, -1.0, 1.0]);
    }

    fn decode(png: &[u8]) -> RgbImage {
        image::load_from_memory(png).unwrap().to_rgb8()
    }

    #[test]
    fn diverging_colors() {
        let n = NormalizedInterpretation {
            rows: 1,
            cols: 3,
            channels: 1,
            values: vec![1.0, -1.0, 0.0],
        };
        let img = decode(&render_interpretation(&n, RenderMode::Diverging).unwrap().png);
        assert_eq!(img.get_pixel(0, 0).0, [255, 0, 0]);
        assert_eq!(img.get_pixel(1, 0).0, [0, 0, 255]);
        assert_eq!(img.get_pixel(2, 0).0, [0, 0, 0]);
    }

    #[test]
    fn rgb_with_sign_map() {
        let n = NormalizedInterpretation {
            rows: 1,
            cols: 1,
            channels: 3,
            values: vec![1.0, -0.5, 0.0],
        };
        let r = render_interpretation(&n, RenderMode::Rgb).unwrap();
        assert_eq!(decode(&r.png).get_pixel(0, 0).0, [255, 0, 0]);
        assert_eq!(decode(&r.sign_map_png.unwrap()).get_pixel(0, 0).0, [0, 128, 0]);
        assert!(matches!(
            render_interpretation(&n, RenderMode::Diverging),
            Err(Error::Usage(_))
        ));
    }
}
