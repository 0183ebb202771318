//! Portable data model and on-disk formats.
//!
//! Tensor files are a one-line JSON header followed by raw row-major scalars:
//!
//! ```text
//! {"dtype":"f32","shape":[H,W],"byte_order":"little"}\n<payload>
//! ```
//!
//! Images are stored as little-endian `f32`, masks as `u8` restricted to
//! `{0,1}`; any other mask byte is a parse error. Dataset manifests are JSON
//! documents with an explicit `split` field and `"format_version": 1`:
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "split": "train",
//!   "n_slices": 400,
//!   "entries": [
//!     {"patient_id": "p000", "slices": ["p000/s0.bin"], "masks": null}
//!   ]
//! }
//! ```
//!
//! Paths inside a manifest are resolved relative to the manifest file. Train
//! manifests must not carry masks: the training set is normal-only.

use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TensorIoError {
    #[error("storage error at {path}: {source}")]
    Storage {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed header in {path}: {field}")]
    Header { path: PathBuf, field: String },
    #[error("unsupported dtype \"{dtype}\" in {path}")]
    UnsupportedDtype { path: PathBuf, dtype: String },
    #[error("truncated payload in {path}: expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("invalid mask value {value} in {path}: masks are uint8 {{0,1}}")]
    MaskValue { path: PathBuf, value: u8 },
    #[error("manifest parse error in {path}: {detail}")]
    Manifest { path: PathBuf, detail: String },
}

/// Dense grid of finite `f32` values in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl Image2D {
    /// Panics if the shape is degenerate, the length does not match, or any
    /// value is non-finite.
    pub fn from_vec(height: usize, width: usize, values: Vec<f32>) -> Self {
        assert!(height > 0 && width > 0, "shape components must be >= 1");
        assert_eq!(values.len(), height * width, "value count must match shape");
        assert!(
            values.iter().all(|v| v.is_finite()),
            "image values must be finite"
        );
        Image2D {
            height,
            width,
            values,
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Image2D::from_vec(height, width, vec![0.0; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        assert!(v.is_finite(), "image values must be finite");
        self.values[y * self.width + x] = v;
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Affinely rescales the image onto `[0,1]`; constant images map to 0.
    pub fn normalized(&self) -> Image2D {
        let min = self.values.iter().copied().fold(f32::INFINITY, f32::min);
        let max = self
            .values
            .iter()
            .copied()
            .fold(f32::NEG_INFINITY, f32::max);
        let range = max - min;
        if range <= 0.0 {
            return Image2D::zeros(self.height, self.width);
        }
        Image2D::from_vec(
            self.height,
            self.width,
            self.values.iter().map(|&v| (v - min) / range).collect(),
        )
    }
}

/// Boolean grid annotating an image of the same shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    values: Vec<bool>,
}

impl BinaryMask {
    pub fn from_vec(height: usize, width: usize, values: Vec<bool>) -> Self {
        assert!(height > 0 && width > 0, "shape components must be >= 1");
        assert_eq!(values.len(), height * width, "value count must match shape");
        BinaryMask {
            height,
            width,
            values,
        }
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        BinaryMask::from_vec(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.values[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.values[y * self.width + x] = v;
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn count_true(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Either payload a tensor file can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor2D {
    Image(Image2D),
    Mask(BinaryMask),
}

impl Tensor2D {
    fn dtype(&self) -> &'static str {
        match self {
            Tensor2D::Image(_) => "f32",
            Tensor2D::Mask(_) => "u8",
        }
    }

    fn shape(&self) -> (usize, usize) {
        match self {
            Tensor2D::Image(img) => (img.height(), img.width()),
            Tensor2D::Mask(m) => (m.height(), m.width()),
        }
    }
}

fn storage_err(path: &Path) -> impl FnOnce(io::Error) -> TensorIoError + '_ {
    move |source| TensorIoError::Storage {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes a tensor file: one-line JSON header, then raw row-major scalars.
pub fn write_tensor(path: &Path, tensor: &Tensor2D) -> Result<(), TensorIoError> {
    let (h, w) = tensor.shape();
    let header = format!(
        "{{\"dtype\":\"{}\",\"shape\":[{},{}],\"byte_order\":\"little\"}}\n",
        tensor.dtype(),
        h,
        w
    );
    let mut buf = Vec::with_capacity(header.len() + h * w * 4);
    buf.extend_from_slice(header.as_bytes());
    match tensor {
        Tensor2D::Image(img) => {
            for v in img.values() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Tensor2D::Mask(m) => {
            buf.extend(m.values().iter().map(|&b| b as u8));
        }
    }
    let mut file = fs::File::create(path).map_err(storage_err(path))?;
    file.write_all(&buf).map_err(storage_err(path))?;
    Ok(())
}

pub fn write_image(path: &Path, img: &Image2D) -> Result<(), TensorIoError> {
    write_tensor(path, &Tensor2D::Image(img.clone()))
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<(), TensorIoError> {
    write_tensor(path, &Tensor2D::Mask(mask.clone()))
}

/// Reads back a tensor file written by [`write_tensor`].
pub fn read_tensor(path: &Path) -> Result<Tensor2D, TensorIoError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(storage_err(path))?
        .read_to_end(&mut bytes)
        .map_err(storage_err(path))?;

    let newline = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| {
        TensorIoError::Header {
            path: path.to_path_buf(),
            field: "missing newline-terminated header".into(),
        }
    })?;
    let header: serde_json::Value =
        serde_json::from_slice(&bytes[..newline]).map_err(|e| TensorIoError::Header {
            path: path.to_path_buf(),
            field: format!("invalid JSON: {e}"),
        })?;
    let field_err = |field: &str| TensorIoError::Header {
        path: path.to_path_buf(),
        field: field.to_string(),
    };

    let dtype = header
        .get("dtype")
        .and_then(|v| v.as_str())
        .ok_or_else(|| field_err("dtype"))?
        .to_string();
    let shape = header
        .get("shape")
        .and_then(|v| v.as_array())
        .ok_or_else(|| field_err("shape"))?;
    if shape.len() != 2 {
        return Err(field_err("shape: expected two components"));
    }
    let dims: Vec<u64> = shape
        .iter()
        .map(|v| v.as_u64().filter(|&d| d >= 1))
        .collect::<Option<_>>()
        .ok_or_else(|| field_err("shape: components must be >= 1"))?;
    if let Some(order) = header.get("byte_order") {
        if order.as_str() != Some("little") {
            return Err(field_err("byte_order: expected \"little\""));
        }
    }
    let (h, w) = (dims[0] as usize, dims[1] as usize);
    let n = h * w;
    let payload = &bytes[newline + 1..];

    match dtype.as_str() {
        "f32" => {
            if payload.len() != n * 4 {
                return Err(TensorIoError::Truncated {
                    path: path.to_path_buf(),
                    expected: n * 4,
                    actual: payload.len(),
                });
            }
            let values = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect::<Vec<_>>();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(field_err("payload: non-finite image value"));
            }
            Ok(Tensor2D::Image(Image2D::from_vec(h, w, values)))
        }
        "u8" => {
            if payload.len() != n {
                return Err(TensorIoError::Truncated {
                    path: path.to_path_buf(),
                    expected: n,
                    actual: payload.len(),
                });
            }
            let mut values = Vec::with_capacity(n);
            for &b in payload {
                match b {
                    0 => values.push(false),
                    1 => values.push(true),
                    v => {
                        return Err(TensorIoError::MaskValue {
                            path: path.to_path_buf(),
                            value: v,
                        })
                    }
                }
            }
            Ok(Tensor2D::Mask(BinaryMask::from_vec(h, w, values)))
        }
        other => Err(TensorIoError::UnsupportedDtype {
            path: path.to_path_buf(),
            dtype: other.to_string(),
        }),
    }
}

pub fn read_image(path: &Path) -> Result<Image2D, TensorIoError> {
    match read_tensor(path)? {
        Tensor2D::Image(img) => Ok(img),
        Tensor2D::Mask(_) => Err(TensorIoError::Header {
            path: path.to_path_buf(),
            field: "dtype: expected f32 image".into(),
        }),
    }
}

pub fn read_mask(path: &Path) -> Result<BinaryMask, TensorIoError> {
    match read_tensor(path)? {
        Tensor2D::Mask(m) => Ok(m),
        Tensor2D::Image(_) => Err(TensorIoError::Header {
            path: path.to_path_buf(),
            field: "dtype: expected u8 mask".into(),
        }),
    }
}

/// Per-patient stack of consecutive slices, optionally annotated.
#[derive(Debug, Clone)]
pub struct PseudoVolume {
    pub patient_id: String,
    pub slices: Vec<Image2D>,
    pub masks: Option<Vec<BinaryMask>>,
}

impl PseudoVolume {
    /// Checks the shape invariants: all slices share one shape and, when
    /// present, masks pair up one-to-one with slices.
    pub fn check(&self) -> Result<(), String> {
        let Some(first) = self.slices.first() else {
            return Err(format!("patient {}: no slices", self.patient_id));
        };
        for s in &self.slices {
            if s.height() != first.height() || s.width() != first.width() {
                return Err(format!("patient {}: slice shape mismatch", self.patient_id));
            }
        }
        if let Some(masks) = &self.masks {
            if masks.len() != self.slices.len() {
                return Err(format!(
                    "patient {}: {} masks for {} slices",
                    self.patient_id,
                    masks.len(),
                    self.slices.len()
                ));
            }
            for (m, s) in masks.iter().zip(&self.slices) {
                if m.height() != s.height() || m.width() != s.width() {
                    return Err(format!("patient {}: mask shape mismatch", self.patient_id));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub patient_id: String,
    pub slices: Vec<String>,
    pub masks: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestFile {
    format_version: u32,
    split: Split,
    n_slices: usize,
    entries: Vec<ManifestEntry>,
}

/// A dataset manifest together with the directory its paths resolve against.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub split: Split,
    pub n_slices: usize,
    pub entries: Vec<ManifestEntry>,
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(split: Split, entries: Vec<ManifestEntry>, base_dir: PathBuf) -> Self {
        let n_slices = entries.iter().map(|e| e.slices.len()).sum();
        DatasetManifest {
            split,
            n_slices,
            entries,
            base_dir,
        }
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    /// Returns the list of invariant violations; empty means valid.
    ///
    /// The result is sorted so it does not depend on entry order.
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        if self.n_slices == 0 {
            violations.push("n_slices must be positive".to_string());
        }
        let actual: usize = self.entries.iter().map(|e| e.slices.len()).sum();
        if actual != self.n_slices {
            violations.push(format!(
                "n_slices is {} but entries reference {} slices",
                self.n_slices, actual
            ));
        }
        for entry in &self.entries {
            if self.split == Split::Train && entry.masks.is_some() {
                violations.push(format!("train entry has mask: {}", entry.patient_id));
            }
            if let Some(masks) = &entry.masks {
                if masks.len() != entry.slices.len() {
                    violations.push(format!(
                        "entry {}: {} masks for {} slices",
                        entry.patient_id,
                        masks.len(),
                        entry.slices.len()
                    ));
                }
            }
            let mask_paths = entry.masks.as_deref().unwrap_or(&[]);
            for rel in entry.slices.iter().chain(mask_paths) {
                let path = self.resolve(rel);
                if !path.is_file() {
                    violations.push(format!("missing file {rel}"));
                } else if let Err(e) = read_tensor(&path) {
                    violations.push(format!("unreadable file {rel}: {e}"));
                }
            }
        }
        violations.sort();
        violations
    }

    pub fn save(&self, path: &Path) -> Result<(), TensorIoError> {
        let file = ManifestFile {
            format_version: MANIFEST_FORMAT_VERSION,
            split: self.split,
            n_slices: self.n_slices,
            entries: self.entries.clone(),
        };
        let json = serde_json::to_string_pretty(&file).expect("manifest serialization");
        fs::write(path, json).map_err(storage_err(path))
    }

    /// Loads every referenced tensor into memory as per-patient volumes.
    pub fn load_volumes(&self) -> Result<Vec<PseudoVolume>, TensorIoError> {
        self.entries
            .iter()
            .map(|entry| {
                let slices = entry
                    .slices
                    .iter()
                    .map(|rel| read_image(&self.resolve(rel)))
                    .collect::<Result<Vec<_>, _>>()?;
                let masks = entry
                    .masks
                    .as_ref()
                    .map(|paths| {
                        paths
                            .iter()
                            .map(|rel| read_mask(&self.resolve(rel)))
                            .collect::<Result<Vec<_>, _>>()
                    })
                    .transpose()?;
                Ok(PseudoVolume {
                    patient_id: entry.patient_id.clone(),
                    slices,
                    masks,
                })
            })
            .collect()
    }
}

/// Parses a manifest JSON file. Splits are never inferred from directory
/// names; the explicit `split` field is authoritative.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, TensorIoError> {
    let text = fs::read_to_string(path).map_err(storage_err(path))?;
    let file: ManifestFile =
        serde_json::from_str(&text).map_err(|e| TensorIoError::Manifest {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    if file.format_version != MANIFEST_FORMAT_VERSION {
        return Err(TensorIoError::Manifest {
            path: path.to_path_buf(),
            detail: format!(
                "unsupported format_version {} (expected {})",
                file.format_version, MANIFEST_FORMAT_VERSION
            ),
        });
    }
    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(DatasetManifest {
        split: file.split,
        n_slices: file.n_slices,
        entries: file.entries,
        base_dir,
    })
}
