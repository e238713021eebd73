//! Image binarization and thermometer codes.
//!
//! A thermometer code of resolution `B` represents a value `x` in `0..B` as
//! `B - 1` bits: `x` ones followed by zeros. Both pixel intensities (when the
//! thermometer binarizer is used) and patch coordinates are encoded this way.

use std::ops::Range;

use crate::error::{Error, Result};

/// Unary code over `resolution` values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThermometerCodec {
    resolution: usize,
}

impl ThermometerCodec {
    /// A resolution of 1 is accepted and yields empty codes; it describes a
    /// coordinate axis with a single position.
    pub fn new(resolution: usize) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::config("thermometer resolution must be at least 1"));
        }
        Ok(Self { resolution })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn code_len(&self) -> usize {
        self.resolution - 1
    }

    pub fn encode(&self, value: usize) -> Result<Vec<bool>> {
        let mut out = vec![false; self.code_len()];
        self.encode_into(value, &mut out)?;
        Ok(out)
    }

    pub fn encode_into(&self, value: usize, out: &mut [bool]) -> Result<()> {
        if value >= self.resolution {
            return Err(Error::Range {
                value,
                resolution: self.resolution,
            });
        }
        debug_assert_eq!(out.len(), self.code_len());
        for (j, bit) in out.iter_mut().enumerate() {
            *bit = j < value;
        }
        Ok(())
    }

    /// Values whose code satisfies a clause's coordinate literals.
    ///
    /// `positive[j]` set requires bit `j` to be 1, i.e. `value >= j + 1`;
    /// `negated[j]` set requires bit `j` to be 0, i.e. `value <= j`. The
    /// feasible set is therefore a contiguous range, possibly empty.
    pub fn decode_positions(&self, positive: &[bool], negated: &[bool]) -> Result<Range<usize>> {
        if positive.len() != self.code_len() || negated.len() != self.code_len() {
            return Err(Error::config(format!(
                "coordinate mask has {}+{} bits, expected {} each",
                positive.len(),
                negated.len(),
                self.code_len()
            )));
        }
        let lower = positive.iter().rposition(|&b| b).map_or(0, |j| j + 1);
        let upper = negated
            .iter()
            .position(|&b| b)
            .map_or(self.resolution, |j| j + 1);
        Ok(if lower < upper { lower..upper } else { lower..lower })
    }
}

/// Encodes `value` with resolution `resolution`.
pub fn thermometer_encode(value: usize, resolution: usize) -> Result<Vec<bool>> {
    ThermometerCodec::new(resolution)?.encode(value)
}

/// Decodes a coordinate include mask laid out as `B - 1` positive literals
/// followed by `B - 1` negated literals.
pub fn thermometer_decode_positions(include_mask: &[bool], resolution: usize) -> Result<Range<usize>> {
    let codec = ThermometerCodec::new(resolution)?;
    let n = codec.code_len();
    if include_mask.len() != 2 * n {
        return Err(Error::config(format!(
            "coordinate mask has {} bits, expected {}",
            include_mask.len(),
            2 * n
        )));
    }
    codec.decode_positions(&include_mask[..n], &include_mask[n..])
}

/// Row-major `rows x cols x channels` 8-bit image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl RawImage {
    pub fn new(rows: usize, cols: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::config("image needs at least one channel"));
        }
        if data.len() != rows * cols * channels {
            return Err(Error::Consistency(format!(
                "image buffer has {} bytes, expected {rows}x{cols}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            channels,
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize, channels: usize) -> Self {
        Self {
            rows,
            cols,
            channels,
            data: vec![0; rows * cols * channels],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> u8 {
        self.data[(row * self.cols + col) * self.channels + channel]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: u8) {
        self.data[(row * self.cols + col) * self.channels + channel] = value;
    }
}

/// Bit tensor `rows x cols x (channels * bits_per_channel)`, one byte per bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinarizedSample {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub bits_per_channel: usize,
    bits: Vec<u8>,
}

impl BinarizedSample {
    pub fn from_bits(
        rows: usize,
        cols: usize,
        channels: usize,
        bits_per_channel: usize,
        bits: Vec<bool>,
    ) -> Result<Self> {
        if bits.len() != rows * cols * channels * bits_per_channel {
            return Err(Error::Consistency(format!(
                "bit tensor has {} entries, expected {rows}x{cols}x{}",
                bits.len(),
                channels * bits_per_channel
            )));
        }
        Ok(Self {
            rows,
            cols,
            channels,
            bits_per_channel,
            bits: bits.into_iter().map(u8::from).collect(),
        })
    }

    /// Number of bit planes, `Z_b`.
    pub fn depth(&self) -> usize {
        self.channels * self.bits_per_channel
    }

    #[inline]
    pub fn bit(&self, row: usize, col: usize, plane: usize) -> bool {
        self.bits[(row * self.cols + col) * self.depth() + plane] != 0
    }

    /// Bits of one pixel across all planes.
    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[u8] {
        let d = self.depth();
        let start = (row * self.cols + col) * d;
        &self.bits[start..start + d]
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }
}

/// How raw intensities become bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binarizer {
    /// One bit per channel, set iff the value exceeds the threshold.
    Threshold(u8),
    /// `levels` bits per channel at uniform cuts `(i + 1) * 255 / (levels + 1)`.
    Thermometer { levels: usize },
}

impl Binarizer {
    pub fn bits_per_channel(&self) -> usize {
        match *self {
            Binarizer::Threshold(_) => 1,
            Binarizer::Thermometer { levels } => levels,
        }
    }

    pub fn apply(&self, image: &RawImage) -> Result<BinarizedSample> {
        match *self {
            Binarizer::Threshold(t) => Ok(binarize_threshold(image, t)),
            Binarizer::Thermometer { levels } => binarize_thermometer(image, levels),
        }
    }
}

pub fn binarize_threshold(image: &RawImage, threshold: u8) -> BinarizedSample {
    BinarizedSample {
        rows: image.rows,
        cols: image.cols,
        channels: image.channels,
        bits_per_channel: 1,
        bits: image.data.iter().map(|&v| u8::from(v > threshold)).collect(),
    }
}

pub fn binarize_thermometer(image: &RawImage, levels: usize) -> Result<BinarizedSample> {
    if levels == 0 {
        return Err(Error::config("thermometer binarization needs at least one level"));
    }
    let mut bits = Vec::with_capacity(image.data.len() * levels);
    let scale = levels as u64 + 1;
    for &v in &image.data {
        // v > (i+1)*255/(levels+1)  <=>  v*(levels+1) > (i+1)*255
        let lhs = v as u64 * scale;
        bits.extend((0..levels as u64).map(|i| u8::from(lhs > (i + 1) * 255)));
    }
    Ok(BinarizedSample {
        rows: image.rows,
        cols: image.cols,
        channels: image.channels,
        bits_per_channel: levels,
        bits,
    })
}

/// Per-pixel inclusion counts of one clause, `W x W x Z` each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContributionMaps {
    pub width: usize,
    pub channels: usize,
    pub positive: Vec<u32>,
    pub negative: Vec<u32>,
}

impl ContributionMaps {
    pub fn is_empty(&self) -> bool {
        self.positive.iter().chain(&self.negative).all(|&v| v == 0)
    }
}

/// Folds a clause's pixel literals back to raw channels.
///
/// `positive` and `negated` hold include flags for the `W * W * Z_b` pixel
/// features in window order `(dr, dc, plane)`. Each output cell counts the
/// included literals among the `bits_per_channel` planes of that channel.
pub fn unbinarize(
    positive: &[bool],
    negated: &[bool],
    width: usize,
    channels: usize,
    bits_per_channel: usize,
) -> Result<ContributionMaps> {
    let expected = width * width * channels * bits_per_channel;
    if positive.len() != expected || negated.len() != expected {
        return Err(Error::config(format!(
            "pixel literal masks have {}/{} entries, expected {expected}",
            positive.len(),
            negated.len()
        )));
    }
    let fold = |mask: &[bool]| -> Vec<u32> {
        mask.chunks(bits_per_channel)
            .map(|c| c.iter().filter(|&&b| b).count() as u32)
            .collect()
    };
    Ok(ContributionMaps {
        width,
        channels,
        positive: fold(positive),
        negative: fold(negated),
    })
}
