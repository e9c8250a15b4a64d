//! IDX (MNIST) reader. Big-endian headers: images use magic `0x00000803`
//! followed by count, rows and cols; labels use `0x00000801` followed by count.
//! Pixel bytes are scaled to `[0, 1]`.

use std::path::{Path, PathBuf};

use thiserror::Error;

use super::Dataset;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic number: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("idx contents do not form a dataset: {0}")]
    Invalid(String),
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32, IdxError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(IdxError::Truncated { expected: at + 4, found: bytes.len() })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<(), IdxError> {
    let found = read_u32(bytes, 0)?;
    if found != expected {
        return Err(IdxError::BadMagic { expected, found });
    }
    Ok(())
}

/// Returns `(pixels, rows * cols)` with one row of scaled pixels per image.
pub fn parse_images(bytes: &[u8]) -> Result<(Vec<f64>, usize, usize), IdxError> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let n = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let width = rows * cols;
    let expected = 16 + n * width;
    if bytes.len() < expected {
        return Err(IdxError::Truncated { expected, found: bytes.len() });
    }
    let pixels = bytes[16..expected].iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok((pixels, n, width))
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<usize>, IdxError> {
    check_magic(bytes, LABELS_MAGIC)?;
    let n = read_u32(bytes, 4)? as usize;
    let expected = 8 + n;
    if bytes.len() < expected {
        return Err(IdxError::Truncated { expected, found: bytes.len() });
    }
    Ok(bytes[8..expected].iter().map(|&b| usize::from(b)).collect())
}

/// Builds a dataset from parsed image and label buffers. The class count is
/// `max(label) + 1`, but never below 2.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset, IdxError> {
    let (pixels, n, width) = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if n != labels.len() {
        return Err(IdxError::CountMismatch { images: n, labels: labels.len() });
    }
    let classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    Dataset::new(pixels, labels, width, classes).map_err(|e| IdxError::Invalid(e.to_string()))
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, IdxError> {
    let read = |p: &Path| std::fs::read(p).map_err(|source| IdxError::Io { path: p.to_path_buf(), source });
    parse_idx(&read(images_path)?, &read(labels_path)?)
}

#[cfg(test)]
pub(crate) fn encode_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    for v in [IMAGES_MAGIC, n, rows, cols] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

#[cfg(test)]
pub(crate) fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_small_files_bit_exactly() {
        let images = encode_images(3, 2, 2, &[0, 255, 51, 102, 1, 2, 3, 4, 255, 255, 0, 0]);
        let labels = encode_labels(&[1, 0, 9]);
        let ds = parse_idx(&images, &labels).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dims(), 4);
        assert_eq!(ds.classes(), 10);
        assert_eq!(ds.sample(0), (&[0.0, 1.0, 0.2, 0.4][..], 1));
        assert_eq!(ds.sample(2).1, 9);
    }

    #[test]
    fn header_bytes_are_big_endian() {
        let images = encode_images(1, 1, 1, &[7]);
        assert_eq!(&images[..4], &[0, 0, 8, 3]);
        assert_eq!(&encode_labels(&[0])[..4], &[0, 0, 8, 1]);
    }

    #[test]
    fn bad_magic() {
        let mut images = encode_images(1, 1, 1, &[7]);
        images[3] = 0x01;
        let err = parse_idx(&images, &encode_labels(&[0])).unwrap_err();
        assert!(matches!(err, IdxError::BadMagic { expected: IMAGES_MAGIC, found: 0x801 }), "{err}");

        // labels file passed as images
        let err = parse_images(&encode_labels(&[0])).unwrap_err();
        assert!(matches!(err, IdxError::BadMagic { .. }));
    }

    #[test]
    fn truncated() {
        let images = encode_images(2, 2, 2, &[0; 7]);
        assert!(matches!(parse_images(&images).unwrap_err(), IdxError::Truncated { expected: 24, found: 23 }));
        assert!(matches!(parse_labels(&[0, 0, 8]).unwrap_err(), IdxError::Truncated { .. }));
        let mut labels = encode_labels(&[1, 2]);
        labels.pop();
        assert!(matches!(parse_labels(&labels).unwrap_err(), IdxError::Truncated { .. }));
    }

    #[test]
    fn count_mismatch() {
        let images = encode_images(2, 1, 1, &[0, 1]);
        let err = parse_idx(&images, &encode_labels(&[0, 1, 1])).unwrap_err();
        assert!(matches!(err, IdxError::CountMismatch { images: 2, labels: 3 }));
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = load_idx(Path::new("/nonexistent/imgs"), Path::new("/nonexistent/lbls")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/imgs"));
    }
}
