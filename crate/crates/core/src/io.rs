//! Dataset ingestion (IDX, PNG directories), model files and raw tensor dumps.
//!
//! Model file layout, all integers little-endian:
//!
//! ```text
//! "TMCB" | u32 version
//! u32 n_clauses | u32 target | f64 specificity | u32 patch_width | f64 q
//! u16 n_states | u8 binarizer (0 threshold, 1 thermometer) | u8 task (0 multiclass, 1 multilabel)
//! u32 binarizer parameter (threshold or levels)
//! u32 rows | u32 cols | u32 channels | u32 n_classes
//! u16 ta_state[C * 2F] | i32 weights[C * K] | u32 patch_counts[C * P]
//! ```
//!
//! Tensor dumps are `"TMI1" | u32 N | u32 M | u32 Z` followed by row-major
//! `i32` or `f32` values.

use std::collections::BTreeSet;
use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::clause_bank::ClauseBank;
use crate::codec::{BinarizedSample, Binarizer, RawImage};
use crate::config::{ModelConfig, Task};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"TMCB";
pub const MODEL_VERSION: u32 = 1;
pub const TENSOR_MAGIC: &[u8; 4] = b"TMI1";

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Labels {
    /// One class per sample.
    Single(Vec<usize>),
    /// A class set per sample.
    Multi(Vec<Vec<usize>>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Single(v) => v.len(),
            Labels::Multi(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sets(&self) -> Vec<Vec<usize>> {
        match self {
            Labels::Single(v) => v.iter().map(|&y| vec![y]).collect(),
            Labels::Multi(v) => v.clone(),
        }
    }

    pub fn truncate(&mut self, n: usize) {
        match self {
            Labels::Single(v) => v.truncate(n),
            Labels::Multi(v) => v.truncate(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub images: Vec<RawImage>,
    pub labels: Labels,
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Keeps the first `n` samples.
    pub fn truncate(&mut self, n: usize) {
        self.images.truncate(n);
        self.labels.truncate(n);
    }

    pub fn binarize(&self, binarizer: &Binarizer) -> Result<Vec<BinarizedSample>> {
        self.images.iter().map(|img| binarizer.apply(img)).collect()
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

/// MNIST-style IDX image (`0x803`) and label (`0x801`) files.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let img_bytes = read_file(images_path)?;
    let lbl_bytes = read_file(labels_path)?;
    let header = |what: &str| Error::Corrupt(format!("{what}: truncated IDX header"));

    let mut cur = Cursor::new(&img_bytes[..]);
    let magic = cur.read_u32::<BigEndian>().map_err(|_| header("images"))?;
    if magic != IDX_IMAGES {
        return Err(Error::Format(format!(
            "{}: IDX magic {magic:#010x}, expected {IDX_IMAGES:#010x}",
            images_path.display()
        )));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = cur.read_u32::<BigEndian>().map_err(|_| header("images"))? as usize;
    }
    let [count, rows, cols] = dims;
    let payload = &img_bytes[16..];
    if payload.len() < count * rows * cols {
        return Err(Error::Corrupt(format!(
            "{}: {} image bytes, header promises {count}x{rows}x{cols}",
            images_path.display(),
            payload.len()
        )));
    }

    let mut cur = Cursor::new(&lbl_bytes[..]);
    let magic = cur.read_u32::<BigEndian>().map_err(|_| header("labels"))?;
    if magic != IDX_LABELS {
        return Err(Error::Format(format!(
            "{}: IDX magic {magic:#010x}, expected {IDX_LABELS:#010x}",
            labels_path.display()
        )));
    }
    let n_labels = cur.read_u32::<BigEndian>().map_err(|_| header("labels"))? as usize;
    let label_payload = &lbl_bytes[8..];
    if label_payload.len() < n_labels {
        return Err(Error::Corrupt(format!(
            "{}: {} label bytes, header promises {n_labels}",
            labels_path.display(),
            label_payload.len()
        )));
    }
    if n_labels != count {
        return Err(Error::Consistency(format!(
            "{count} images but {n_labels} labels"
        )));
    }

    let images = payload[..count * rows * cols]
        .chunks(rows * cols)
        .take(count)
        .map(|px| RawImage::new(rows, cols, 1, px.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = label_payload[..count].iter().map(|&b| b as usize).collect();
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    Ok(Dataset {
        images,
        labels: Labels::Single(labels),
        rows,
        cols,
        channels: 1,
        class_names: (0..n_classes).map(|c| c.to_string()).collect(),
    })
}

/// Directory of images plus a CSV of `filename,class;class;...` rows.
///
/// Images are read as RGB. Class indices follow the sorted class names,
/// either those given in `classes` or all names found in the CSV. A file
/// listed twice yields two samples.
pub fn load_image_dir(
    root: impl AsRef<Path>,
    labels_csv: impl AsRef<Path>,
    classes: Option<&[String]>,
) -> Result<Dataset> {
    let root = root.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(labels_csv.as_ref())?;
    let mut rows: Vec<(String, Vec<String>)> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let Some(file) = record.get(0).filter(|f| !f.is_empty()) else {
            continue;
        };
        if rows.is_empty() && file.eq_ignore_ascii_case("filename") {
            continue;
        }
        let names = record
            .get(1)
            .unwrap_or("")
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();
        rows.push((file.to_string(), names));
    }

    let class_names: Vec<String> = match classes {
        Some(c) => {
            let mut sorted = c.to_vec();
            sorted.sort();
            sorted.dedup();
            sorted
        }
        None => rows
            .iter()
            .flat_map(|(_, n)| n.iter().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };

    let mut images = Vec::with_capacity(rows.len());
    let mut label_sets = Vec::with_capacity(rows.len());
    let mut dims: Option<(usize, usize)> = None;
    for (file, names) in &rows {
        let path = root.join(file);
        let img = image::open(&path)
            .map_err(|e| Error::Consistency(format!("cannot read image {}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        match dims {
            None => dims = Some((h, w)),
            Some(d) if d != (h, w) => {
                return Err(Error::Consistency(format!(
                    "{} is {h}x{w}, earlier images are {}x{}",
                    path.display(),
                    d.0,
                    d.1
                )))
            }
            _ => {}
        }
        images.push(RawImage::new(h, w, 3, img.into_raw())?);
        let mut set = names
            .iter()
            .map(|n| {
                class_names.binary_search(n).map_err(|_| {
                    Error::Consistency(format!("{file}: unknown class name {n:?}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        set.sort_unstable();
        set.dedup();
        label_sets.push(set);
    }
    let (rows, cols) = dims.unwrap_or((0, 0));
    Ok(Dataset {
        images,
        labels: Labels::Multi(label_sets),
        rows,
        cols,
        channels: 3,
        class_names,
    })
}

fn write_config(out: &mut Vec<u8>, c: &ModelConfig) -> Result<()> {
    let u32_of = |v: usize, name: &str| {
        u32::try_from(v).map_err(|_| Error::config(format!("{name} {v} does not fit in u32")))
    };
    out.write_u32::<LittleEndian>(u32_of(c.n_clauses, "n_clauses")?)?;
    out.write_u32::<LittleEndian>(c.target)?;
    out.write_f64::<LittleEndian>(c.specificity)?;
    out.write_u32::<LittleEndian>(u32_of(c.patch_width, "patch_width")?)?;
    out.write_f64::<LittleEndian>(c.q)?;
    out.write_u16::<LittleEndian>(c.n_states)?;
    let (kind, param) = match c.binarizer {
        Binarizer::Threshold(t) => (0u8, t as usize),
        Binarizer::Thermometer { levels } => (1u8, levels),
    };
    out.write_u8(kind)?;
    out.write_u8(match c.task {
        Task::Multiclass => 0,
        Task::Multilabel => 1,
    })?;
    out.write_u32::<LittleEndian>(u32_of(param, "binarizer parameter")?)?;
    for (v, name) in [
        (c.rows, "rows"),
        (c.cols, "cols"),
        (c.channels, "channels"),
        (c.n_classes, "n_classes"),
    ] {
        out.write_u32::<LittleEndian>(u32_of(v, name)?)?;
    }
    Ok(())
}

fn read_config(cur: &mut Cursor<&[u8]>) -> std::io::Result<std::result::Result<ModelConfig, String>> {
    let n_clauses = cur.read_u32::<LittleEndian>()? as usize;
    let target = cur.read_u32::<LittleEndian>()?;
    let specificity = cur.read_f64::<LittleEndian>()?;
    let patch_width = cur.read_u32::<LittleEndian>()? as usize;
    let q = cur.read_f64::<LittleEndian>()?;
    let n_states = cur.read_u16::<LittleEndian>()?;
    let kind = cur.read_u8()?;
    let task = cur.read_u8()?;
    let param = cur.read_u32::<LittleEndian>()?;
    let rows = cur.read_u32::<LittleEndian>()? as usize;
    let cols = cur.read_u32::<LittleEndian>()? as usize;
    let channels = cur.read_u32::<LittleEndian>()? as usize;
    let n_classes = cur.read_u32::<LittleEndian>()? as usize;
    let binarizer = match kind {
        0 if param <= 255 => Binarizer::Threshold(param as u8),
        1 => Binarizer::Thermometer {
            levels: param as usize,
        },
        _ => return Ok(Err(format!("unknown binarizer {kind}/{param}"))),
    };
    let task = match task {
        0 => Task::Multiclass,
        1 => Task::Multilabel,
        t => return Ok(Err(format!("unknown task code {t}"))),
    };
    Ok(Ok(ModelConfig {
        n_clauses,
        target,
        specificity,
        patch_width,
        q,
        n_states,
        binarizer,
        rows,
        cols,
        channels,
        n_classes,
        task,
    }))
}

pub fn encode_model(bank: &ClauseBank) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.write_u32::<LittleEndian>(MODEL_VERSION)?;
    write_config(&mut out, bank.config())?;
    for &s in bank.ta_states() {
        out.write_u16::<LittleEndian>(s)?;
    }
    for &w in bank.weights() {
        out.write_i32::<LittleEndian>(w)?;
    }
    for &c in bank.patch_counts() {
        out.write_u32::<LittleEndian>(c)?;
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<ClauseBank> {
    if bytes.len() < 4 || &bytes[..4] != MODEL_MAGIC {
        return Err(Error::Format("not a clause bank file (bad magic)".into()));
    }
    let mut cur = Cursor::new(bytes);
    cur.set_position(4);
    let version = cur
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Corrupt("file truncated in header".into()))?;
    if version != MODEL_VERSION {
        return Err(Error::Version {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let config = read_config(&mut cur)
        .map_err(|_| Error::Corrupt("file truncated in header".into()))?
        .map_err(Error::Corrupt)?;
    config
        .validate()
        .map_err(|e| Error::Corrupt(format!("stored configuration is invalid: {e}")))?;
    let layout = config.layout();
    let c = config.n_clauses;
    let truncated = |t: &str| Error::Corrupt(format!("file truncated in {t} tensor"));

    let mut ta_state = vec![0u16; c * layout.n_literals()];
    cur.read_u16_into::<LittleEndian>(&mut ta_state)
        .map_err(|_| truncated("ta_state"))?;
    let mut weights = vec![0i32; c * config.n_classes];
    cur.read_i32_into::<LittleEndian>(&mut weights)
        .map_err(|_| truncated("weights"))?;
    let mut patch_counts = vec![0u32; c * layout.n_patches()];
    cur.read_u32_into::<LittleEndian>(&mut patch_counts)
        .map_err(|_| truncated("patch_counts"))?;
    let mut rest = Vec::new();
    cur.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Corrupt(format!("{} trailing bytes after patch_counts", rest.len())));
    }
    ClauseBank::from_parts(config, ta_state, weights, patch_counts)
        .map_err(|e| Error::Corrupt(e.to_string()))
}

pub fn save_model(bank: &ClauseBank, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_model(bank)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ClauseBank> {
    decode_model(&read_file(path.as_ref())?)
}

fn tensor_header(out: &mut Vec<u8>, dims: (usize, usize, usize), len: usize) -> Result<()> {
    if dims.0 * dims.1 * dims.2 != len {
        return Err(Error::Consistency(format!(
            "tensor of {len} values does not have shape {}x{}x{}",
            dims.0, dims.1, dims.2
        )));
    }
    out.extend_from_slice(TENSOR_MAGIC);
    for d in [dims.0, dims.1, dims.2] {
        let d = u32::try_from(d).map_err(|_| Error::config("tensor dimension exceeds u32"))?;
        out.write_u32::<LittleEndian>(d)?;
    }
    Ok(())
}

pub fn encode_tensor_i32(dims: (usize, usize, usize), values: &[i32]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + 4 * values.len());
    tensor_header(&mut out, dims, values.len())?;
    for &v in values {
        out.write_i32::<LittleEndian>(v)?;
    }
    Ok(out)
}

pub fn encode_tensor_f32(dims: (usize, usize, usize), values: &[f32]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + 4 * values.len());
    tensor_header(&mut out, dims, values.len())?;
    for &v in values {
        out.write_f32::<LittleEndian>(v)?;
    }
    Ok(out)
}

fn read_tensor_header(cur: &mut Cursor<&[u8]>) -> Result<(usize, usize, usize)> {
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic)
        .map_err(|_| Error::Corrupt("tensor dump truncated in header".into()))?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Format("not a tensor dump (bad magic)".into()));
    }
    let mut d = [0usize; 3];
    for v in &mut d {
        *v = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| Error::Corrupt("tensor dump truncated in header".into()))? as usize;
    }
    Ok((d[0], d[1], d[2]))
}

pub fn decode_tensor_i32(bytes: &[u8]) -> Result<((usize, usize, usize), Vec<i32>)> {
    let mut cur = Cursor::new(bytes);
    let dims = read_tensor_header(&mut cur)?;
    let mut values = vec![0i32; dims.0 * dims.1 * dims.2];
    cur.read_i32_into::<LittleEndian>(&mut values)
        .map_err(|_| Error::Corrupt("tensor dump truncated in values".into()))?;
    Ok((dims, values))
}

pub fn decode_tensor_f32(bytes: &[u8]) -> Result<((usize, usize, usize), Vec<f32>)> {
    let mut cur = Cursor::new(bytes);
    let dims = read_tensor_header(&mut cur)?;
    let mut values = vec![0f32; dims.0 * dims.1 * dims.2];
    cur.read_f32_into::<LittleEndian>(&mut values)
        .map_err(|_| Error::Corrupt("tensor dump truncated in values".into()))?;
    Ok((dims, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(count: u32, rows: u32, cols: u32, payload: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [IDX_IMAGES, count, rows, cols] {
            v.write_u32::<BigEndian>(x).unwrap();
        }
        v.extend_from_slice(payload);
        v
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.write_u32::<BigEndian>(IDX_LABELS).unwrap();
        v.write_u32::<BigEndian>(labels.len() as u32).unwrap();
        v.extend_from_slice(labels);
        v
    }

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn idx_round() {
        let dir = tempfile::tempdir().unwrap();
        let payload: Vec<u8> = (0..2 * 3 * 2).map(|i| i as u8 * 10).collect();
        let i = write(dir.path(), "i", &idx_images(2, 3, 2, &payload));
        let l = write(dir.path(), "l", &idx_labels(&[7, 2]));
        let ds = load_idx(&i, &l).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!((ds.rows, ds.cols, ds.channels), (3, 2, 1));
        assert_eq!(ds.images[1].get(0, 1, 0), 70);
        assert_eq!(ds.labels, Labels::Single(vec![7, 2]));
        assert_eq!(ds.n_classes(), 8);
    }

    #[test]
    fn idx_errors() {
        let dir = tempfile::tempdir().unwrap();
        let i = write(dir.path(), "i", &idx_images(3, 2, 2, &[0; 12]));
        let l2 = write(dir.path(), "l2", &idx_labels(&[1, 2]));
        assert!(matches!(load_idx(&i, &l2), Err(Error::Consistency(_))));

        let short = write(dir.path(), "s", &idx_images(3, 2, 2, &[0; 11]));
        let l3 = write(dir.path(), "l3", &idx_labels(&[1, 2, 3]));
        assert!(matches!(load_idx(&short, &l3), Err(Error::Corrupt(_))));
        assert!(matches!(load_idx(&l3, &l3), Err(Error::Format(_))));

        let empty = write(dir.path(), "e", &idx_images(0, 28, 28, &[]));
        let none = write(dir.path(), "n", &idx_labels(&[]));
        assert!(load_idx(&empty, &none).unwrap().is_empty());
    }

    #[test]
    fn tensor_dump_round() {
        let b = encode_tensor_i32((1, 2, 1), &[-3, 5]).unwrap();
        assert_eq!(&b[..4], b"TMI1");
        assert_eq!(b.len(), 16 + 8);
        assert_eq!(decode_tensor_i32(&b).unwrap(), ((1, 2, 1), vec![-3, 5]));
        let f = encode_tensor_f32((1, 1, 1), &[-0.5]).unwrap();
        assert_eq!(decode_tensor_f32(&f).unwrap().1, vec![-0.5]);
        assert!(decode_tensor_i32(&b[..20]).is_err());
    }
}
