use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Tensor};

use super::{read_file, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// `train-images-idx3-ubyte` / `t10k-images-idx3-ubyte` and their label files.
    MnistIdx,
    /// `data_batch_{1..5}.bin` / `test_batch.bin`, 3073-byte records.
    Cifar10Binary,
    /// `{split}_images.irt` / `{split}_labels.irl` as written by [`write_raw_tensor_dir`].
    RawTensorDir,
}

impl std::str::FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" | "mnist_idx" => Ok(DataSource::MnistIdx),
            "cifar10" | "cifar10_binary" => Ok(DataSource::Cifar10Binary),
            "raw" | "raw_tensor_dir" => Ok(DataSource::RawTensorDir),
            other => Err(Error::InvalidArgument(format!(
                "unknown data source '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetHandle {
    pub source: DataSource,
    pub dir: PathBuf,
    pub split: Split,
}

/// Labelled images with pixel values in `[0, 1]`, kept in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Scalar> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.batch() != labels.len() {
            return Err(Error::shape("dataset", &[images.batch()], &[labels.len()]));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: num_classes,
            });
        }
        Ok(Self {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(C, H, W)` of one image.
    pub fn sample_shape(&self) -> [usize; 3] {
        let [_, c, h, w] = self.images.shape();
        [c, h, w]
    }

    pub fn batch(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        (
            self.images.select(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// The first `n` samples (all of them if `n` exceeds the size).
    pub fn take(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        let (images, labels) = self.batch(&idx);
        Self {
            images,
            labels,
            num_classes: self.num_classes,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Tensor<T>, usize)> + '_ {
        (0..self.len()).map(|i| (self.images.sample(i), self.labels[i]))
    }

    /// Adapts images to `(C, H, W)`: a single channel is replicated, spatial
    /// axes are zero-padded or cropped symmetrically (extra pixel at the
    /// end). Used to feed 1x28x28 digits to a 3x32x32 network.
    pub fn conform(&self, target: [usize; 3]) -> Result<Self> {
        let [c, h, w] = self.sample_shape();
        let [tc, th, tw] = target;
        if target == [c, h, w] {
            return Ok(self.clone());
        }
        if c != tc && c != 1 {
            return Err(Error::InvalidArgument(format!(
                "cannot map {c} channels to {tc}"
            )));
        }
        let (dy, dx) = (th as isize - h as isize, tw as isize - w as isize);
        let (oy, ox) = (dy.div_euclid(2), dx.div_euclid(2));
        let src = &self.images;
        let images = Tensor::from_fn([self.len(), tc, th, tw], |[n, ch, y, x]| {
            let sy = y as isize - oy;
            let sx = x as isize - ox;
            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                T::zero()
            } else {
                src.get([n, if c == 1 { 0 } else { ch }, sy as usize, sx as usize])
            }
        });
        Ok(Self {
            images,
            labels: self.labels.clone(),
            num_classes: self.num_classes,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            images: self.images.cast(),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
        }
    }
}

/// Loads a split, keeping at most `limit` samples in file order.
pub fn load_dataset<T: Scalar>(handle: &DatasetHandle, limit: Option<usize>) -> Result<Dataset<T>> {
    if !handle.dir.is_dir() {
        return Err(Error::io(
            &handle.dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "data directory not found"),
        ));
    }
    let limit = limit.unwrap_or(usize::MAX);
    match handle.source {
        DataSource::MnistIdx => load_mnist(&handle.dir, handle.split, limit),
        DataSource::Cifar10Binary => load_cifar(&handle.dir, handle.split, limit),
        DataSource::RawTensorDir => {
            let d = read_raw_dir(&handle.dir, handle.split)?;
            Ok(if d.len() > limit { d.take(limit) } else { d })
        }
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| format_err(path, offset, "file ends inside the header"))
}

fn format_err(path: &Path, offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg: msg.into(),
    }
}

fn to_unit<T: Scalar>(bytes: &[u8]) -> impl Iterator<Item = T> + '_ {
    bytes.iter().map(|&b| T::from_f64_lossy(b as f64 / 255.0))
}

fn load_mnist<T: Scalar>(dir: &Path, split: Split, limit: usize) -> Result<Dataset<T>> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let ipath = dir.join(format!("{prefix}-images-idx3-ubyte"));
    let lpath = dir.join(format!("{prefix}-labels-idx1-ubyte"));
    let ib = read_file(&ipath)?;
    let lb = read_file(&lpath)?;
    let magic = be_u32(&ib, 0, &ipath)?;
    if magic != 0x0000_0803 {
        return Err(format_err(
            &ipath,
            0,
            format!("image magic {magic:#010x}, expected 0x00000803"),
        ));
    }
    let n = be_u32(&ib, 4, &ipath)? as usize;
    let rows = be_u32(&ib, 8, &ipath)? as usize;
    let cols = be_u32(&ib, 12, &ipath)? as usize;
    let need = 16 + n * rows * cols;
    if ib.len() < need {
        return Err(format_err(
            &ipath,
            ib.len(),
            format!("truncated: header promises {need} bytes"),
        ));
    }
    let lmagic = be_u32(&lb, 0, &lpath)?;
    if lmagic != 0x0000_0801 {
        return Err(format_err(
            &lpath,
            0,
            format!("label magic {lmagic:#010x}, expected 0x00000801"),
        ));
    }
    let ln = be_u32(&lb, 4, &lpath)? as usize;
    if ln != n {
        return Err(format_err(&lpath, 4, format!("{ln} labels for {n} images")));
    }
    if lb.len() < 8 + n {
        return Err(format_err(
            &lpath,
            lb.len(),
            format!("truncated: header promises {} bytes", 8 + n),
        ));
    }
    let keep = n.min(limit);
    let mut labels = Vec::with_capacity(keep);
    for (i, &l) in lb[8..8 + keep].iter().enumerate() {
        if l > 9 {
            return Err(format_err(
                &lpath,
                8 + i,
                format!("label {l} outside 0..=9"),
            ));
        }
        labels.push(l as usize);
    }
    let pixels = to_unit(&ib[16..16 + keep * rows * cols]).collect();
    Dataset::new(Tensor::from_vec([keep, 1, rows, cols], pixels)?, labels, 10)
}

const CIFAR_RECORD: usize = 3073;

fn load_cifar<T: Scalar>(dir: &Path, split: Split, limit: usize) -> Result<Dataset<T>> {
    let files: Vec<PathBuf> = match split {
        Split::Train => (1..=5)
            .map(|i| dir.join(format!("data_batch_{i}.bin")))
            .collect(),
        Split::Test => vec![dir.join("test_batch.bin")],
    };
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    'files: for path in files {
        let bytes = read_file(&path)?;
        if bytes.len() % CIFAR_RECORD != 0 {
            let offset = bytes.len() - bytes.len() % CIFAR_RECORD;
            return Err(format_err(&path, offset, "trailing partial record"));
        }
        for (r, rec) in bytes.chunks(CIFAR_RECORD).enumerate() {
            if labels.len() == limit {
                break 'files;
            }
            if rec[0] > 9 {
                return Err(format_err(
                    &path,
                    r * CIFAR_RECORD,
                    format!("label {} outside 0..=9", rec[0]),
                ));
            }
            labels.push(rec[0] as usize);
            pixels.extend(to_unit::<T>(&rec[1..]));
        }
    }
    Dataset::new(
        Tensor::from_vec([labels.len(), 3, 32, 32], pixels)?,
        labels,
        10,
    )
}

const TENSOR_MAGIC: &[u8; 4] = b"IRTN";
const LABEL_MAGIC: &[u8; 4] = b"IRLB";

/// Serializes a tensor as `IRTN`, dtype code, 4 x u64 shape, little-endian data.
pub fn write_raw_tensor<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    let mut out = Vec::with_capacity(37 + t.len() * T::DTYPE.size_of());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(T::DTYPE.code());
    for d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    write_atomic(path, &out)
}

pub fn read_raw_tensor<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = read_file(path)?;
    if bytes.get(..4) != Some(TENSOR_MAGIC.as_slice()) {
        return Err(format_err(path, 0, "missing IRTN magic"));
    }
    let dtype = bytes.get(4).and_then(|&c| DType::from_code(c));
    if dtype != Some(T::DTYPE) {
        return Err(format_err(
            path,
            4,
            format!("dtype {dtype:?}, expected {}", T::DTYPE),
        ));
    }
    let mut shape = [0usize; 4];
    for (i, s) in shape.iter_mut().enumerate() {
        let at = 5 + 8 * i;
        let b = bytes
            .get(at..at + 8)
            .ok_or_else(|| format_err(path, at, "file ends inside the shape"))?;
        *s = u64::from_le_bytes(b.try_into().expect("8 bytes")) as usize;
    }
    let width = T::DTYPE.size_of();
    let body = &bytes[37..];
    let count: usize = shape.iter().product();
    if body.len() != count * width {
        return Err(format_err(
            path,
            37 + body.len().min(count * width),
            "payload length does not match shape",
        ));
    }
    Tensor::from_vec(shape, body.chunks(width).map(T::read_le).collect())
}

/// Writes `{split}_images.irt` and `{split}_labels.irl` into `dir`.
pub fn write_raw_tensor_dir<T: Scalar>(dir: &Path, split: Split, data: &Dataset<T>) -> Result<()> {
    write_raw_tensor(
        &dir.join(format!("{}_images.irt", split.name())),
        &data.images,
    )?;
    let mut out = Vec::with_capacity(16 + 4 * data.len());
    out.extend_from_slice(LABEL_MAGIC);
    out.extend_from_slice(&(data.num_classes as u32).to_le_bytes());
    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
    for &l in &data.labels {
        out.extend_from_slice(&(l as u32).to_le_bytes());
    }
    write_atomic(&dir.join(format!("{}_labels.irl", split.name())), &out)
}

fn read_raw_dir<T: Scalar>(dir: &Path, split: Split) -> Result<Dataset<T>> {
    let images = read_raw_tensor(&dir.join(format!("{}_images.irt", split.name())))?;
    let lpath = dir.join(format!("{}_labels.irl", split.name()));
    let b = read_file(&lpath)?;
    if b.get(..4) != Some(LABEL_MAGIC.as_slice()) {
        return Err(format_err(&lpath, 0, "missing IRLB magic"));
    }
    if b.len() < 16 {
        return Err(format_err(&lpath, b.len(), "file ends inside the header"));
    }
    let classes = u32::from_le_bytes(b[4..8].try_into().expect("4 bytes")) as usize;
    let n = u64::from_le_bytes(b[8..16].try_into().expect("8 bytes")) as usize;
    if b.len() != 16 + 4 * n {
        return Err(format_err(
            &lpath,
            b.len().min(16 + 4 * n),
            format!("expected {n} labels"),
        ));
    }
    let mut labels = Vec::with_capacity(n);
    for (i, c) in b[16..].chunks(4).enumerate() {
        let l = u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize;
        if l >= classes {
            return Err(format_err(
                &lpath,
                16 + 4 * i,
                format!("label {l} outside 0..{classes}"),
            ));
        }
        labels.push(l);
    }
    Dataset::new(images, labels, classes)
}
