//! Synthetic segmentation data, labeled/unlabeled/test splits, batch
//! sampling, and the `SPCT` tensor file format.
//!
//! # File format
//!
//! A `.spct` file holds one tensor:
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 4    | magic `SPCT`                           |
//! | 4      | 2    | version, u16 LE (currently 1)          |
//! | 6      | 1    | dtype: 0 = f32, 1 = u8                 |
//! | 7      | 1    | rank                                   |
//! | 8      | 4·r  | dims, u32 LE each                      |
//! | 8+4·r  | ...  | payload, row-major, little-endian      |
//!
//! A dataset directory holds `images.spct` (f32 `[N, H, W]`), `masks.spct`
//! (u8 class labels `[N, H, W]`) and `split.txt` (three lines of
//! comma-separated indices: labeled, unlabeled, test).

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::losses::GroundTruthMask;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SPCT";
pub const VERSION: u16 = 1;

/// Standard deviation of the additive pixel noise.
pub const NOISE_SIGMA: f64 = 0.15;
/// Accepted foreground fraction per image.
pub const FOREGROUND_RANGE: (f64, f64) = (0.02, 0.40);
/// Held-out test images generated per training image.
pub const TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad magic at offset 0: found {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported version {version} at offset 4")]
    UnsupportedVersion { version: u16 },
    #[error("unknown dtype code {code} at offset 6")]
    UnknownDtype { code: u8 },
    #[error("truncated at offset {offset}: expected {expected} bytes, found {actual}")]
    Truncated {
        offset: usize,
        expected: usize,
        actual: usize,
    },
    #[error("trailing data at offset {offset}: {extra} extra bytes")]
    Trailing { offset: usize, extra: usize },
    #[error("image size must be at least 16, got {0}")]
    ImageTooSmall(usize),
    #[error("labeled ratio must be in (0, 1), got {0}")]
    BadRatio(f64),
    #[error("labeled ratio {ratio} of {n} images leaves no labeled image")]
    NoLabeled { ratio: f64, n: usize },
    #[error("{split} split is empty")]
    EmptySplit { split: &'static str },
    #[error("batch of {requested} exceeds {split} split of {available}")]
    BatchTooLarge {
        split: &'static str,
        requested: usize,
        available: usize,
    },
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    U8 = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

/// One tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl TensorFile {
    pub fn f32(dims: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), data.len());
        TensorFile {
            dims,
            data: TensorData::F32(data),
        }
    }

    pub fn u8(dims: Vec<usize>, data: Vec<u8>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), data.len());
        TensorFile {
            dims,
            data: TensorData::U8(data),
        }
    }

    /// Narrows an in-memory tensor to f32.
    pub fn from_tensor(t: &Tensor) -> Self {
        Self::f32(t.shape().to_vec(), t.data().iter().map(|&x| x as f32).collect())
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            TensorData::U8(v) => v.iter().map(|&x| f64::from(x)).collect(),
        };
        Tensor::new(self.dims.clone(), data).expect("validated dims")
    }

    pub fn dtype(&self) -> Dtype {
        match self.data {
            TensorData::F32(_) => Dtype::F32,
            TensorData::U8(_) => Dtype::U8,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.dtype() as u8);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            TensorData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let need = |offset: usize, len: usize| -> Result<&[u8]> {
            bytes.get(offset..offset + len).ok_or(DataError::Truncated {
                offset,
                expected: len,
                actual: bytes.len().saturating_sub(offset),
            })
        };
        let magic = need(0, 4)?;
        if magic != MAGIC {
            return Err(DataError::BadMagic { found: magic.to_vec() });
        }
        let version = u16::from_le_bytes(need(4, 2)?.try_into().expect("2 bytes"));
        if version != VERSION {
            return Err(DataError::UnsupportedVersion { version });
        }
        let code = need(6, 1)?[0];
        let dtype = match code {
            0 => Dtype::F32,
            1 => Dtype::U8,
            _ => return Err(DataError::UnknownDtype { code }),
        };
        let rank = need(7, 1)?[0] as usize;
        let dims: Vec<usize> = need(8, 4 * rank)?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
            .collect();
        let offset = 8 + 4 * rank;
        let count: usize = dims.iter().product();
        let width = match dtype {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        };
        let payload = need(offset, count * width)?;
        let end = offset + count * width;
        if bytes.len() > end {
            return Err(DataError::Trailing {
                offset: end,
                extra: bytes.len() - end,
            });
        }
        let data = match dtype {
            Dtype::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
            Dtype::U8 => TensorData::U8(payload.to_vec()),
        };
        Ok(TensorFile { dims, data })
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_tensor(path: &Path, t: &TensorFile) -> Result<()> {
    fs::write(path, t.encode()).map_err(io_err(path))
}

pub fn load_tensor(path: &Path) -> Result<TensorFile> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    TensorFile::decode(&bytes)
}

/// Writes each entry to `<dir>/<name>.spct` and the names, in order, to
/// `<dir>/index.txt`.
pub fn save(dir: &Path, tensors: &[(String, TensorFile)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut index = String::new();
    for (name, t) in tensors {
        save_tensor(&dir.join(format!("{name}.spct")), t)?;
        index.push_str(name);
        index.push('\n');
    }
    let path = dir.join("index.txt");
    fs::write(&path, index).map_err(io_err(&path))
}

pub fn load(dir: &Path) -> Result<Vec<(String, TensorFile)>> {
    let path = dir.join("index.txt");
    let index = fs::read_to_string(&path).map_err(io_err(&path))?;
    index
        .lines()
        .filter(|l| !l.is_empty())
        .map(|name| Ok((name.to_string(), load_tensor(&dir.join(format!("{name}.spct")))?)))
        .collect()
}

/// Disjoint labeled (S), unlabeled (U) and test (T) index sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn to_text(&self) -> String {
        let line = |v: &[usize]| v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",");
        format!("{}\n{}\n{}\n", line(&self.labeled), line(&self.unlabeled), line(&self.test))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut next = |name: &str| -> Result<Vec<usize>> {
            let line = lines
                .next()
                .ok_or_else(|| DataError::Invalid(format!("split.txt is missing the {name} line")))?;
            line.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse()
                        .map_err(|_| DataError::Invalid(format!("bad index {s:?} in {name} line")))
                })
                .collect()
        };
        Ok(Split {
            labeled: next("labeled")?,
            unlabeled: next("unlabeled")?,
            test: next("test")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[1, H, W]` images with values in `[0, 1]`.
    pub images: Vec<Tensor>,
    pub masks: Vec<GroundTruthMask>,
    pub split: Split,
}

/// Number of labeled images for a training pool of `n`.
pub fn labeled_count(n: usize, ratio: f64) -> usize {
    (ratio * n as f64).round() as usize
}

struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn random(rng: &mut ChaCha8Rng, hw: f64) -> Self {
        let angle = rng.random_range(0.0..PI);
        Ellipse {
            cy: rng.random_range(0.2 * hw..0.8 * hw),
            cx: rng.random_range(0.2 * hw..0.8 * hw),
            a: rng.random_range(0.08 * hw..0.25 * hw),
            b: rng.random_range(0.08 * hw..0.25 * hw),
            cos: angle.cos(),
            sin: angle.sin(),
        }
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

fn generate_image(rng: &mut ChaCha8Rng, hw: usize) -> (Tensor, GroundTruthMask) {
    let size = hw as f64;
    let plane = hw * hw;
    let labels = loop {
        let count = rng.random_range(1..=2);
        let shapes: Vec<Ellipse> = (0..count).map(|_| Ellipse::random(rng, size)).collect();
        let labels: Vec<u8> = (0..plane)
            .map(|i| {
                let (y, x) = ((i / hw) as f64 + 0.5, (i % hw) as f64 + 0.5);
                u8::from(shapes.iter().any(|e| e.contains(y, x)))
            })
            .collect();
        let frac = labels.iter().filter(|&&l| l == 1).count() as f64 / plane as f64;
        if (FOREGROUND_RANGE.0..=FOREGROUND_RANGE.1).contains(&frac) {
            break labels;
        }
    };

    // background level, sinusoidal texture, foreground contrast
    let base = rng.random_range(0.2..0.45);
    let contrast = rng.random_range(0.15..0.35);
    let waves: Vec<[f64; 4]> = (0..3)
        .map(|_| {
            [
                rng.random_range(0.02..0.07),
                rng.random_range(-0.8..0.8),
                rng.random_range(-0.8..0.8),
                rng.random_range(0.0..2.0 * PI),
            ]
        })
        .collect();
    let gain = rng.random_range(0.75..1.25);
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let data = (0..plane)
        .map(|i| {
            let (y, x) = ((i / hw) as f64, (i % hw) as f64);
            let texture: f64 = waves.iter().map(|w| w[0] * (w[1] * y + w[2] * x + w[3]).sin()).sum();
            let clean = base + texture + contrast * f64::from(labels[i]);
            let v = 0.5 + gain * (clean - 0.5) + noise.sample(rng);
            // stored as f32 on disk; keep memory and disk identical
            v.clamp(0.0, 1.0) as f32 as f64
        })
        .collect();
    let image = Tensor::new(vec![1, hw, hw], data).expect("plane");
    let mask = GroundTruthMask::from_labels(2, hw, hw, labels).expect("binary labels");
    (image, mask)
}

/// Generates `n` training images (split into labeled and unlabeled by
/// `labeled_ratio`) followed by `round(n * TEST_FRACTION)` test images.
pub fn generate(seed: u64, n: usize, hw: usize, labeled_ratio: f64) -> Result<Dataset> {
    if hw < 16 {
        return Err(DataError::ImageTooSmall(hw));
    }
    if !(labeled_ratio > 0.0 && labeled_ratio < 1.0) {
        return Err(DataError::BadRatio(labeled_ratio));
    }
    let n_labeled = labeled_count(n, labeled_ratio);
    if n_labeled == 0 {
        return Err(DataError::NoLabeled { ratio: labeled_ratio, n });
    }
    let n_test = ((n as f64 * TEST_FRACTION).round() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (images, masks) = (0..n + n_test).map(|_| generate_image(&mut rng, hw)).unzip();

    let mut pool: Vec<usize> = (0..n).collect();
    pool.shuffle(&mut rng);
    let mut labeled = pool[..n_labeled].to_vec();
    let mut unlabeled = pool[n_labeled..].to_vec();
    labeled.sort_unstable();
    unlabeled.sort_unstable();
    Ok(Dataset {
        images,
        masks,
        split: Split {
            labeled,
            unlabeled,
            test: (n..n + n_test).collect(),
        },
    })
}

impl Dataset {
    pub fn image_size(&self) -> (usize, usize) {
        let s = self.images[0].shape();
        (s[1], s[2])
    }

    pub fn classes(&self) -> usize {
        self.masks[0].classes()
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.is_empty() || self.images.len() != self.masks.len() {
            return Err(DataError::Invalid(format!(
                "{} images vs {} masks",
                self.images.len(),
                self.masks.len()
            )));
        }
        let n = self.images.len();
        let mut seen = vec![false; n];
        for &i in self.split.labeled.iter().chain(&self.split.unlabeled).chain(&self.split.test) {
            if i >= n || seen[i] {
                return Err(DataError::Invalid(format!("index {i} out of range or repeated across splits")));
            }
            seen[i] = true;
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let (h, w) = self.image_size();
        let n = self.images.len();
        let images = self
            .images
            .iter()
            .flat_map(|t| t.data().iter().map(|&x| x as f32))
            .collect();
        save_tensor(&dir.join("images.spct"), &TensorFile::f32(vec![n, h, w], images))?;
        let masks = self.masks.iter().flat_map(|m| m.labels().iter().copied()).collect();
        save_tensor(&dir.join("masks.spct"), &TensorFile::u8(vec![n, h, w], masks))?;
        let path = dir.join("split.txt");
        fs::write(&path, self.split.to_text()).map_err(io_err(&path))
    }

    /// Loads a dataset directory; masks are binary (two classes).
    pub fn load(dir: &Path) -> Result<Self> {
        let images = load_tensor(&dir.join("images.spct"))?;
        let masks = load_tensor(&dir.join("masks.spct"))?;
        let path = dir.join("split.txt");
        let split = Split::parse(&fs::read_to_string(&path).map_err(io_err(&path))?)?;
        let (TensorData::F32(img), TensorData::U8(lab)) = (&images.data, &masks.data) else {
            return Err(DataError::Invalid("images must be f32 and masks u8".into()));
        };
        if images.dims.len() != 3 || images.dims != masks.dims {
            return Err(DataError::Invalid(format!(
                "image dims {:?} vs mask dims {:?}",
                images.dims, masks.dims
            )));
        }
        let (n, h, w) = (images.dims[0], images.dims[1], images.dims[2]);
        let plane = h * w;
        let images = (0..n)
            .map(|i| {
                let data = img[i * plane..(i + 1) * plane].iter().map(|&x| f64::from(x)).collect();
                Tensor::new(vec![1, h, w], data).expect("plane")
            })
            .collect();
        let classes = (lab.iter().copied().max().unwrap_or(0) as usize + 1).max(2);
        let masks = (0..n)
            .map(|i| {
                GroundTruthMask::from_labels(classes, h, w, lab[i * plane..(i + 1) * plane].to_vec())
                    .map_err(|e| DataError::Invalid(e.to_string()))
            })
            .collect::<Result<_>>()?;
        let ds = Dataset { images, masks, split };
        ds.validate()?;
        Ok(ds)
    }
}

/// Sampler state: unlabeled images are drawn without replacement within a
/// pass over `U`; labeled images are cycled with reshuffling.
#[derive(Debug, Clone)]
pub struct SamplerState {
    rng: ChaCha8Rng,
    labeled: VecDeque<usize>,
    unlabeled: VecDeque<usize>,
}

impl SamplerState {
    pub fn new(seed: u64) -> Self {
        SamplerState {
            rng: ChaCha8Rng::seed_from_u64(seed),
            labeled: VecDeque::new(),
            unlabeled: VecDeque::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

fn draw(
    queue: &mut VecDeque<usize>,
    pool: &[usize],
    n: usize,
    rng: &mut ChaCha8Rng,
    split: &'static str,
) -> Result<Vec<usize>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if pool.is_empty() {
        return Err(DataError::EmptySplit { split });
    }
    if n > pool.len() {
        return Err(DataError::BatchTooLarge {
            split,
            requested: n,
            available: pool.len(),
        });
    }
    let mut out = Vec::with_capacity(n);
    let mut deferred = Vec::new();
    while out.len() < n {
        if queue.is_empty() {
            let mut order = pool.to_vec();
            order.shuffle(rng);
            queue.extend(order);
        }
        let i = queue.pop_front().expect("refilled");
        // only possible right after a refill: keep it for the next batch
        if out.contains(&i) {
            deferred.push(i);
        } else {
            out.push(i);
        }
    }
    for i in deferred.into_iter().rev() {
        queue.push_front(i);
    }
    Ok(out)
}

pub fn sample_batch(ds: &Dataset, state: &mut SamplerState, n_labeled: usize, n_unlabeled: usize) -> Result<Batch> {
    let labeled = draw(&mut state.labeled, &ds.split.labeled, n_labeled, &mut state.rng, "labeled")?;
    let unlabeled = draw(&mut state.unlabeled, &ds.split.unlabeled, n_unlabeled, &mut state.rng, "unlabeled")?;
    Ok(Batch { labeled, unlabeled })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_follow_rounding() {
        let ds = generate(7, 200, 16, 0.05).unwrap();
        assert_eq!(ds.split.labeled.len(), 10);
        assert_eq!(ds.split.unlabeled.len(), 190);
        assert_eq!(ds.split.test.len(), 40);
        ds.validate().unwrap();
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate(3, 20, 16, 0.1).unwrap(), generate(3, 20, 16, 0.1).unwrap());
        assert_ne!(generate(3, 20, 16, 0.1).unwrap(), generate(4, 20, 16, 0.1).unwrap());
    }

    #[test]
    fn masks_valid_and_foreground_in_range() {
        let ds = generate(1, 40, 24, 0.1).unwrap();
        for (img, m) in ds.images.iter().zip(&ds.masks) {
            assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
            GroundTruthMask::from_one_hot(&m.one_hot()).unwrap();
            let frac = m.foreground() as f64 / (24.0 * 24.0);
            assert!((0.02..=0.40).contains(&frac), "{frac}");
        }
    }

    #[test]
    fn generate_rejects_bad_arguments() {
        assert!(matches!(generate(0, 20, 8, 0.1), Err(DataError::ImageTooSmall(8))));
        assert!(matches!(generate(0, 20, 16, 0.0), Err(DataError::BadRatio(_))));
        assert!(matches!(generate(0, 20, 16, 1.0), Err(DataError::BadRatio(_))));
        assert!(matches!(generate(0, 5, 16, 0.05), Err(DataError::NoLabeled { .. })));
    }

    #[test]
    fn batches_have_requested_sizes_and_cover_u() {
        let ds = generate(2, 40, 16, 0.1).unwrap();
        let mut st = SamplerState::new(9);
        let b = sample_batch(&ds, &mut st, 2, 4).unwrap();
        assert_eq!((b.labeled.len(), b.unlabeled.len()), (2, 4));

        // |U| = 36: nine batches of 4 form one pass
        let mut st = SamplerState::new(9);
        let mut seen: Vec<usize> = (0..9)
            .flat_map(|_| sample_batch(&ds, &mut st, 2, 4).unwrap().unlabeled)
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, ds.split.unlabeled);
    }

    #[test]
    fn straddling_batches_have_no_duplicates() {
        let ds = generate(2, 30, 16, 0.1).unwrap(); // |U| = 27
        let mut st = SamplerState::new(1);
        for _ in 0..50 {
            let mut b = sample_batch(&ds, &mut st, 3, 4).unwrap();
            b.unlabeled.sort_unstable();
            b.unlabeled.dedup();
            assert_eq!(b.unlabeled.len(), 4);
        }
    }

    #[test]
    fn sampler_is_deterministic() {
        let ds = generate(2, 40, 16, 0.1).unwrap();
        let run = || {
            let mut st = SamplerState::new(5);
            (0..30).map(|_| sample_batch(&ds, &mut st, 2, 4).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn sampler_errors() {
        let mut ds = generate(2, 40, 16, 0.1).unwrap();
        let mut st = SamplerState::new(5);
        assert!(matches!(
            sample_batch(&ds, &mut st, 5, 1),
            Err(DataError::BatchTooLarge { split: "labeled", .. })
        ));
        ds.split.unlabeled.clear();
        assert!(matches!(
            sample_batch(&ds, &mut st, 1, 1),
            Err(DataError::EmptySplit { split: "unlabeled" })
        ));
    }

    #[test]
    fn tensor_file_validation() {
        let t = TensorFile::f32(vec![2, 3], vec![1.5, -2.0, 0.0, 3.25, f32::MIN_POSITIVE, 7.0]);
        let bytes = t.encode();
        assert_eq!(&bytes[..4], b"SPCT");
        assert_eq!(bytes.len(), 8 + 8 + 24);
        assert_eq!(TensorFile::decode(&bytes).unwrap(), t);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        let err = TensorFile::decode(&bad).unwrap_err();
        assert!(err.to_string().contains("bad magic"));

        let err = TensorFile::decode(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(
            err,
            DataError::Truncated {
                offset: 16,
                expected: 24,
                actual: 21
            }
        ));

        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(TensorFile::decode(&v2), Err(DataError::UnsupportedVersion { version: 2 })));
        let mut dt = bytes.clone();
        dt[6] = 9;
        assert!(matches!(TensorFile::decode(&dt), Err(DataError::UnknownDtype { code: 9 })));
    }

    #[test]
    fn split_text_round_trip() {
        let s = Split {
            labeled: vec![3, 1],
            unlabeled: vec![],
            test: vec![5, 6],
        };
        assert_eq!(Split::parse(&s.to_text()).unwrap(), s);
        assert!(Split::parse("1,2\n").is_err());
        assert!(Split::parse("1,x\n\n\n").is_err());
    }
}
