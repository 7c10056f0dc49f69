//! IDX files (MNIST, Fashion-MNIST).
//!
//! Images: big-endian magic `0x00000803`, count, rows, cols, then one byte per
//! pixel. Labels: magic `0x00000801`, count, then one byte per label.

use std::path::Path;

use super::{DataError, LabeledSet};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| DataError::Truncated {
            path: path.to_path_buf(),
            expected: (at + 4) as u64,
            found: bytes.len() as u64,
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<(), DataError> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(DataError::WrongMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

fn check_len(bytes: &[u8], expected: usize, path: &Path) -> Result<(), DataError> {
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected: expected as u64,
            found: bytes.len() as u64,
        });
    }
    Ok(())
}

/// Loads an IDX image/label pair. Examples have shape `[1, rows, cols]` with
/// pixels scaled to `[0, 1]`; the class count is `max(label) + 1`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledSet, DataError> {
    let images = read(images_path)?;
    check_magic(&images, IDX_IMAGES_MAGIC, images_path)?;
    let n = be_u32(&images, 4, images_path)? as usize;
    let rows = be_u32(&images, 8, images_path)? as usize;
    let cols = be_u32(&images, 12, images_path)? as usize;
    check_len(&images, 16 + n * rows * cols, images_path)?;

    let labels = read(labels_path)?;
    check_magic(&labels, IDX_LABELS_MAGIC, labels_path)?;
    let m = be_u32(&labels, 4, labels_path)? as usize;
    check_len(&labels, 8 + m, labels_path)?;
    if n != m {
        return Err(DataError::CountMismatch { images: n, labels: m });
    }

    let data = images[16..16 + n * rows * cols]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    let labels: Vec<usize> = labels[8..8 + m].iter().map(|&b| usize::from(b)).collect();
    let classes = labels.iter().max().map_or(0, |&l| l + 1);
    LabeledSet::new(vec![1, rows, cols], data, labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v
    }

    fn fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let mut img = header(IDX_IMAGES_MAGIC, &[2, 2, 2]);
        img.extend_from_slice(&[0, 255, 255, 0, 255, 255, 0, 0]);
        let mut lab = header(IDX_LABELS_MAGIC, &[2]);
        lab.extend_from_slice(&[3, 7]);
        let (ip, lp) = (dir.join("img"), dir.join("lab"));
        std::fs::write(&ip, img).unwrap();
        std::fs::write(&lp, lab).unwrap();
        (ip, lp)
    }

    #[test]
    fn parses_two_image_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path());
        let set = load_idx(&ip, &lp).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.example_shape(), &[1, 2, 2]);
        assert_eq!(set.example(0), &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(set.example(1), &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(set.labels(), &[3, 7]);
        assert_eq!(set.classes(), 8);
    }

    #[test]
    fn labels_with_image_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, _) = fixture(dir.path());
        let err = load_idx(&ip, &ip).unwrap_err();
        assert!(matches!(err, DataError::WrongMagic { expected: IDX_LABELS_MAGIC, found: IDX_IMAGES_MAGIC, .. }));
    }

    #[test]
    fn truncated_and_mismatched() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path());
        let img = std::fs::read(&ip).unwrap();
        std::fs::write(&ip, &img[..img.len() - 1]).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(DataError::Truncated { .. })));

        std::fs::write(&ip, &img).unwrap();
        let mut lab = header(IDX_LABELS_MAGIC, &[3]);
        lab.extend_from_slice(&[1, 2, 3]);
        std::fs::write(&lp, lab).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(DataError::CountMismatch { images: 2, labels: 3 })));
    }
}
