//! MNIST IDX parsing, augmentation and model persistence.

mod augment;
mod model_io;

pub use augment::{apply_transform, augment, sample_transform, AugmentConfig, Transform};
pub use model_io::{decode_model, encode_model, load_model, save_model, MODEL_FORMAT_VERSION, MODEL_MAGIC};

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::nn::{Image28, IMAGE_PIXELS, IMAGE_SIDE, NUM_CLASSES};

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("label magic in image file (offset 0: expected {IDX_IMAGE_MAGIC:#010x}, found {found:#010x})")]
    LabelMagicInImageFile { found: u32 },
    #[error("image magic in label file (offset 0: expected {IDX_LABEL_MAGIC:#010x}, found {found:#010x})")]
    ImageMagicInLabelFile { found: u32 },
    #[error("bad magic at offset 0: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated IDX data: need {needed} bytes from offset {offset}, only {available} available")]
    Truncated { offset: usize, needed: usize, available: usize },
    #[error("image dimensions {rows}×{cols} at offset 8, expected 28×28")]
    Dimensions { rows: u32, cols: u32 },
    #[error("label out of range: {value} at offset {offset}")]
    LabelOutOfRange { offset: usize, value: u8 },
    #[error("{images} images but {labels} labels")]
    LengthMismatch { images: usize, labels: usize },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("model file: {0}")]
    Model(String),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("unsupported format version {found} (this build reads version {supported})")]
    Version { found: u16, supported: u16 },
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32, DataError> {
    bytes.get(offset..offset + 4).map(|b| u32::from_be_bytes(b.try_into().unwrap())).ok_or(DataError::Truncated {
        offset,
        needed: 4,
        available: bytes.len().saturating_sub(offset),
    })
}

/// Parses an IDX3 image file (big-endian header, one byte per pixel).
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Image28>, DataError> {
    let magic = be_u32(bytes, 0)?;
    match magic {
        IDX_IMAGE_MAGIC => {}
        IDX_LABEL_MAGIC => return Err(DataError::LabelMagicInImageFile { found: magic }),
        found => return Err(DataError::BadMagic { expected: IDX_IMAGE_MAGIC, found }),
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)?;
    let cols = be_u32(bytes, 12)?;
    if rows as usize != IMAGE_SIDE || cols as usize != IMAGE_SIDE {
        return Err(DataError::Dimensions { rows, cols });
    }
    let needed = count * IMAGE_PIXELS;
    let payload = &bytes[16..];
    if payload.len() < needed {
        return Err(DataError::Truncated { offset: 16, needed, available: payload.len() });
    }
    Ok(payload[..needed]
        .chunks_exact(IMAGE_PIXELS)
        .map(|c| Image28::from_bytes(c).expect("chunk has 784 bytes"))
        .collect())
}

/// Parses an IDX1 label file; every label must be a digit class.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    let magic = be_u32(bytes, 0)?;
    match magic {
        IDX_LABEL_MAGIC => {}
        IDX_IMAGE_MAGIC => return Err(DataError::ImageMagicInLabelFile { found: magic }),
        found => return Err(DataError::BadMagic { expected: IDX_LABEL_MAGIC, found }),
    }
    let count = be_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(DataError::Truncated { offset: 8, needed: count, available: payload.len() });
    }
    let labels = payload[..count].to_vec();
    if let Some((i, &value)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= NUM_CLASSES) {
        return Err(DataError::LabelOutOfRange { offset: 8 + i, value });
    }
    Ok(labels)
}

pub fn write_idx_images(images: &[Image28]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * IMAGE_PIXELS);
    for v in [IDX_IMAGE_MAGIC, images.len() as u32, IMAGE_SIDE as u32, IMAGE_SIDE as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in images {
        out.extend(img.to_bytes());
    }
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn file_stem(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

#[derive(Clone, Debug)]
pub struct LabeledDataset {
    pub images: Vec<Image28>,
    pub labels: Vec<u8>,
    pub split: Split,
}

impl LabeledDataset {
    pub fn new(images: Vec<Image28>, labels: Vec<u8>, split: Split) -> Result<Self, DataError> {
        if images.len() != labels.len() {
            return Err(DataError::LengthMismatch { images: images.len(), labels: labels.len() });
        }
        Ok(Self { images, labels, split })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// The first `n` samples.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self { images: self.images[..n].to_vec(), labels: self.labels[..n].to_vec(), split: self.split }
    }

    /// `n` distinct indices drawn with a seeded generator.
    pub fn sample_indices(&self, n: usize, seed: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, self.len(), n.min(self.len())).into_vec()
    }
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

/// Loads `train-*` or `t10k-*` IDX files from `dir` (uncompressed, canonical names).
pub fn load_mnist(dir: &Path, split: Split) -> Result<LabeledDataset, DataError> {
    let stem = split.file_stem();
    let images = parse_idx_images(&read(&dir.join(format!("{stem}-images-idx3-ubyte")))?)?;
    let labels = parse_idx_labels(&read(&dir.join(format!("{stem}-labels-idx1-ubyte")))?)?;
    LabeledDataset::new(images, labels, split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v
    }

    #[test]
    fn all_ones_image() {
        let mut bytes = header(0x803, &[1, 28, 28]);
        bytes.extend(std::iter::repeat_n(0xFF, 784));
        let imgs = parse_idx_images(&bytes).unwrap();
        assert_eq!(imgs.len(), 1);
        assert!(imgs[0].pixels().iter().all(|&p| p == 1.0));
    }

    #[test]
    fn label_magic_in_image_file() {
        let bytes = header(0x801, &[0]);
        let err = parse_idx_images(&bytes).unwrap_err();
        assert!(err.to_string().contains("label magic in image file"), "{err}");
    }

    #[test]
    fn truncated_images() {
        let mut bytes = header(0x803, &[2, 28, 28]);
        bytes.extend(vec![0u8; 784 + 10]);
        match parse_idx_images(&bytes) {
            Err(DataError::Truncated { offset: 16, needed: 1568, available: 794 }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_idx_images(&[0, 0, 8]), Err(DataError::Truncated { .. })));
    }

    #[test]
    fn wrong_dimensions() {
        let bytes = header(0x803, &[0, 32, 28]);
        assert!(matches!(parse_idx_images(&bytes), Err(DataError::Dimensions { rows: 32, cols: 28 })));
    }

    #[test]
    fn labels() {
        assert_eq!(parse_idx_labels(&header(0x801, &[0])).unwrap(), Vec::<u8>::new());
        let mut ok = header(0x801, &[3]);
        ok.extend([0, 9, 4]);
        assert_eq!(parse_idx_labels(&ok).unwrap(), vec![0, 9, 4]);
        let mut bad = header(0x801, &[2]);
        bad.extend([1, 0x0A]);
        let err = parse_idx_labels(&bad).unwrap_err();
        assert!(err.to_string().contains("label out of range"));
        assert!(matches!(err, DataError::LabelOutOfRange { offset: 9, value: 10 }));
        assert!(matches!(parse_idx_labels(&header(0x801, &[5])), Err(DataError::Truncated { .. })));
    }

    proptest! {
        #[test]
        fn idx_round_trip_is_byte_identical(pixels in proptest::collection::vec(any::<u8>(), 0..4 * 784), labels in proptest::collection::vec(0u8..10, 0..50)) {
            let n = pixels.len() / 784;
            let mut bytes = header(0x803, &[n as u32, 28, 28]);
            bytes.extend_from_slice(&pixels[..n * 784]);
            prop_assert_eq!(write_idx_images(&parse_idx_images(&bytes).unwrap()), bytes);
            let lbytes = write_idx_labels(&labels);
            prop_assert_eq!(write_idx_labels(&parse_idx_labels(&lbytes).unwrap()), lbytes);
        }
    }
}
