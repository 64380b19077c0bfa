//! Dataset ingestion: MNIST-family IDX files, CIFAR-10 binary batches,
//! per-channel normalization, and random-crop augmentation.
//!
//! Raw pixel bytes stay `u8` in memory; batches are normalized (and
//! optionally cropped) into float tensors at assembly time.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::Rng;

use crate::{Error, Real, Result};

/// IDX magic for unsigned-byte image files (type 0x08, 3 dims).
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// IDX magic for unsigned-byte label files (type 0x08, 1 dim).
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

const CIFAR_RECORD: usize = 3073;

/// Decoded IDX container: dimensions plus the raw payload.
#[derive(Clone, Debug)]
pub struct IdxTensor {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parses an IDX file: big-endian magic (two zero bytes, type code,
/// dimension count), one big-endian u32 per dimension, raw payload.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    if bytes.len() < 4 {
        return Err(Error::Data(format!(
            "idx header truncated: {} bytes",
            bytes.len()
        )));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Data(format!(
            "bad idx magic: leading bytes {:02x} {:02x}, expected 00 00",
            bytes[0], bytes[1]
        )));
    }
    let type_code = bytes[2];
    if type_code != 0x08 {
        return Err(Error::Data(format!(
            "unsupported idx type code 0x{type_code:02x} (only unsigned byte 0x08 is supported)"
        )));
    }
    let ndims = bytes[3] as usize;
    let header_len = 4 + 4 * ndims;
    if bytes.len() < header_len {
        return Err(Error::Data(format!(
            "idx header truncated: {} bytes, need {header_len} for {ndims} dims",
            bytes.len()
        )));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let expected: usize = dims.iter().product();
    let actual = bytes.len() - header_len;
    if actual != expected {
        return Err(Error::Data(format!(
            "idx payload truncated: expected {expected} bytes, found {actual}"
        )));
    }
    let magic = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    Ok(IdxTensor { magic, dims, data: bytes[header_len..].to_vec() })
}

/// Parses CIFAR-10 binary batch records (1 label byte + 3072 image
/// bytes, channel-major RGB).
pub fn parse_cifar10_bin(bytes: &[u8]) -> Result<(Vec<u8>, Vec<u8>)> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Data(format!(
            "cifar batch size {} is not a multiple of {CIFAR_RECORD}",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut images = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    let mut labels = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        if rec[0] > 9 {
            return Err(Error::Data(format!("cifar label {} out of range", rec[0])));
        }
        labels.push(rec[0]);
        images.extend_from_slice(&rec[1..]);
    }
    Ok((images, labels))
}

/// Identity of a loaded split.
#[derive(Clone, Debug)]
pub struct DatasetMeta {
    pub name: String,
    pub split: String,
    pub count: usize,
    pub shape: (usize, usize, usize),
}

/// One split held as raw bytes.
#[derive(Clone, Debug)]
pub struct Split {
    pub meta: DatasetMeta,
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.meta.count
    }

    pub fn is_empty(&self) -> bool {
        self.meta.count == 0
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.pixel_len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    fn pixel_len(&self) -> usize {
        let (c, h, w) = self.meta.shape;
        c * h * w
    }
}

/// Reads a file, transparently decoding a `.gz` sibling when the plain
/// file is absent.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    if path.exists() {
        let mut buf = Vec::new();
        File::open(path)?.read_to_end(&mut buf)?;
        return Ok(buf);
    }
    let gz = path.with_extension(extension_plus_gz(path));
    if gz.exists() {
        let mut buf = Vec::new();
        flate2::read::GzDecoder::new(File::open(&gz)?).read_to_end(&mut buf)?;
        return Ok(buf);
    }
    Err(Error::Data(format!(
        "dataset file not found: {} (nor {})",
        path.display(),
        gz.display()
    )))
}

fn extension_plus_gz(path: &Path) -> String {
    match path.extension() {
        Some(e) => format!("{}.gz", e.to_string_lossy()),
        None => "gz".to_string(),
    }
}

/// Loads an MNIST-family split from the standard IDX pair.
pub fn load_idx_split(
    dir: &Path,
    dataset: &str,
    split: &str,
    images_name: &str,
    labels_name: &str,
) -> Result<Split> {
    let images = parse_idx(&read_maybe_gz(&dir.join(images_name))?)?;
    let labels = parse_idx(&read_maybe_gz(&dir.join(labels_name))?)?;
    if images.magic != IDX_IMAGES_MAGIC {
        return Err(Error::Data(format!(
            "{images_name}: magic 0x{:08x}, expected image magic 0x{IDX_IMAGES_MAGIC:08x}",
            images.magic
        )));
    }
    if labels.magic != IDX_LABELS_MAGIC {
        return Err(Error::Data(format!(
            "{labels_name}: magic 0x{:08x}, expected label magic 0x{IDX_LABELS_MAGIC:08x}",
            labels.magic
        )));
    }
    let (n, h, w) = (images.dims[0], images.dims[1], images.dims[2]);
    if labels.dims[0] != n {
        return Err(Error::Data(format!(
            "{dataset}/{split}: {n} images but {} labels",
            labels.dims[0]
        )));
    }
    if let Some(bad) = labels.data.iter().find(|&&l| l > 9) {
        return Err(Error::Data(format!("{dataset}/{split}: label {bad} out of range")));
    }
    Ok(Split {
        meta: DatasetMeta {
            name: dataset.to_string(),
            split: split.to_string(),
            count: n,
            shape: (1, h, w),
        },
        images: images.data,
        labels: labels.data,
    })
}

/// Loads CIFAR-10 train (batches 1-5 concatenated) and test splits.
pub fn load_cifar10(dir: &Path) -> Result<(Split, Split)> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 1..=5 {
        let bytes = read_maybe_gz(&dir.join(format!("data_batch_{i}.bin")))?;
        let (im, la) = parse_cifar10_bin(&bytes)?;
        images.extend(im);
        labels.extend(la);
    }
    let train = Split {
        meta: DatasetMeta {
            name: "cifar10".into(),
            split: "train".into(),
            count: labels.len(),
            shape: (3, 32, 32),
        },
        images,
        labels,
    };
    let bytes = read_maybe_gz(&dir.join("test_batch.bin"))?;
    let (images, labels) = parse_cifar10_bin(&bytes)?;
    let test = Split {
        meta: DatasetMeta {
            name: "cifar10".into(),
            split: "test".into(),
            count: labels.len(),
            shape: (3, 32, 32),
        },
        images,
        labels,
    };
    Ok((train, test))
}

/// Per-channel normalization constants, applied as `(x/255 - mean)/std`.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.mean.len() != channels || self.std.len() != channels {
            return Err(Error::Config(format!(
                "normalization constants cover {} channels, dataset has {channels}",
                self.mean.len()
            )));
        }
        if self.std.iter().any(|&s| s <= 0.0) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("normalization constants must be finite, std > 0".into()));
        }
        Ok(())
    }
}

/// One normalized sample.
#[derive(Clone, Debug)]
pub struct Sample<F> {
    pub pixels: Array3<F>,
    pub label: usize,
}

/// Normalizes raw `u8` pixels into a CHW tensor.
pub fn normalize_pixels<F: Real>(
    raw: &[u8],
    shape: (usize, usize, usize),
    norm: &Normalization,
) -> Array3<F> {
    let (c, h, w) = shape;
    let plane = h * w;
    Array3::from_shape_fn((c, h, w), |(ci, y, x)| {
        let v = raw[ci * plane + y * w + x] as f64 / 255.0;
        F::from_f64((v - norm.mean[ci]) / norm.std[ci])
    })
}

/// Zero-pads by `pad` on every side, then takes a random H x W window.
/// `pad = 0` is the identity.
pub fn random_crop<F: Real, R: Rng>(sample: &Array3<F>, pad: usize, rng: &mut R) -> Array3<F> {
    if pad == 0 {
        return sample.clone();
    }
    let (c, h, w) = sample.dim();
    let oy = rng.gen_range(0..=2 * pad);
    let ox = rng.gen_range(0..=2 * pad);
    Array3::from_shape_fn((c, h, w), |(ci, y, x)| {
        let sy = (y + oy) as isize - pad as isize;
        let sx = (x + ox) as isize - pad as isize;
        if sy >= 0 && (sy as usize) < h && sx >= 0 && (sx as usize) < w {
            sample[(ci, sy as usize, sx as usize)]
        } else {
            F::zero()
        }
    })
}

/// Gathers the given samples into a `(batch, features)` matrix,
/// normalizing and (for training pipelines) cropping each one.
pub fn assemble_batch<F: Real, R: Rng>(
    split: &Split,
    indices: &[usize],
    norm: &Normalization,
    crop: Option<(usize, &mut R)>,
) -> (Array2<F>, Vec<usize>) {
    let flat = split.pixel_len();
    let mut out = Array2::zeros((indices.len(), flat));
    let labels = indices.iter().map(|&i| split.label(i)).collect();
    match crop {
        Some((pad, rng)) => {
            for (row, &i) in indices.iter().enumerate() {
                let img = normalize_pixels::<F>(split.image(i), split.meta.shape, norm);
                let img = random_crop(&img, pad, rng);
                let flat_view = img.view().into_shape(flat).expect("chw row");
                out.row_mut(row).assign(&flat_view);
            }
        }
        None => {
            for (row, &i) in indices.iter().enumerate() {
                let img = normalize_pixels::<F>(split.image(i), split.meta.shape, norm);
                let flat_view = img.view().into_shape(flat).expect("chw row");
                out.row_mut(row).assign(&flat_view);
            }
        }
    }
    (out, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn idx_bytes(magic_type: u8, dims: &[u32], payload: &[u8]) -> Vec<u8> {
        let mut b = vec![0, 0, magic_type, dims.len() as u8];
        for d in dims {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn idx_parses_image_header() {
        let payload: Vec<u8> = (0..2 * 3 * 3).map(|i| i as u8).collect();
        let t = parse_idx(&idx_bytes(0x08, &[2, 3, 3], &payload)).unwrap();
        assert_eq!(t.magic, IDX_IMAGES_MAGIC);
        assert_eq!(t.dims, vec![2, 3, 3]);
        assert_eq!(t.data, payload);
    }

    #[test]
    fn idx_rejects_bad_magic() {
        let mut b = idx_bytes(0x08, &[1], &[0]);
        b[0] = 1;
        let err = parse_idx(&b).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn idx_rejects_unsupported_type() {
        let err = parse_idx(&idx_bytes(0x0D, &[1], &[0, 0, 0, 0])).unwrap_err();
        assert!(err.to_string().contains("type code"), "{err}");
    }

    #[test]
    fn idx_reports_truncation_byte_counts() {
        let b = idx_bytes(0x08, &[10, 28, 28], &[0; 100]);
        let err = parse_idx(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("7840") && msg.contains("100"), "{msg}");
    }

    #[test]
    fn cifar_single_zero_record() {
        let (images, labels) = parse_cifar10_bin(&[0u8; 3073]).unwrap();
        assert_eq!(labels, vec![0]);
        assert_eq!(images.len(), 3072);
        assert!(images.iter().all(|&b| b == 0));
    }

    #[test]
    fn cifar_two_records() {
        let mut bytes = vec![0u8; 3073 * 2];
        bytes[3073] = 7;
        let (_, labels) = parse_cifar10_bin(&bytes).unwrap();
        assert_eq!(labels, vec![0, 7]);
    }

    #[test]
    fn cifar_rejects_partial_record() {
        assert!(parse_cifar10_bin(&[0u8; 3072]).is_err());
    }

    #[test]
    fn cifar_rejects_out_of_range_label() {
        let mut bytes = vec![0u8; 3073];
        bytes[0] = 10;
        assert!(parse_cifar10_bin(&bytes).is_err());
    }

    #[test]
    fn normalize_fixed_points() {
        let norm = Normalization { mean: vec![0.1307], std: vec![0.3081] };
        // Pixel exactly at the mean maps to 0, mean + std to 1.
        let at_mean = (0.1307f64 * 255.0).round() as u8;
        let img = normalize_pixels::<f64>(&[at_mean], (1, 1, 1), &norm);
        assert!(img[(0, 0, 0)].abs() < 0.01);

        let img = normalize_pixels::<f64>(&[255], (1, 1, 1), &norm);
        assert!((img[(0, 0, 0)] - 2.8215).abs() < 1e-3);
    }

    #[test]
    fn crop_zero_pad_is_identity() {
        let x = arr3(&[[[1.0, 2.0], [3.0, 4.0]]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(random_crop(&x, 0, &mut rng), x);
    }

    #[test]
    fn crop_geometry_and_determinism() {
        let x = Array3::<f64>::from_shape_fn((1, 8, 8), |(_, y, xx)| (y * 8 + xx) as f64);
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let a = random_crop(&x, 2, &mut r1);
            let b = random_crop(&x, 2, &mut r2);
            assert_eq!(a.dim(), (1, 8, 8));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn crop_offsets_cover_padded_range() {
        // With pad 1 on a 2x2 image, the corner pixel can land on any of
        // the four output cells or slide out entirely: five outcomes.
        let x = arr3(&[[[1.0, 0.0], [0.0, 0.0]]]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..200 {
            let c = random_crop(&x, 1, &mut rng);
            let pos = c
                .indexed_iter()
                .find(|(_, &v)| v == 1.0)
                .map(|((_, y, xx), _)| (y, xx));
            seen.insert(pos);
        }
        let want: std::collections::HashSet<_> =
            [None, Some((0, 0)), Some((0, 1)), Some((1, 0)), Some((1, 1))]
                .into_iter()
                .collect();
        assert_eq!(seen, want);
    }

    #[test]
    fn split_round_trip_bytes() {
        let payload: Vec<u8> = (0..4 * 2 * 2).map(|i| (i * 7) as u8).collect();
        let images = idx_bytes(0x08, &[4, 2, 2], &payload);
        let labels = idx_bytes(0x08, &[4], &[0, 1, 2, 3]);
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("im-ubyte"), &images).unwrap();
        std::fs::write(dir.path().join("la-ubyte"), &labels).unwrap();
        let split = load_idx_split(dir.path(), "synth", "train", "im-ubyte", "la-ubyte").unwrap();
        assert_eq!(split.len(), 4);
        assert_eq!(split.image(1), &payload[4..8]);
        assert_eq!(split.label(3), 3);

        // Same content through the gz path decodes identically.
        let gz_dir = tempfile::tempdir().unwrap();
        for (name, bytes) in [("im-ubyte.gz", &images), ("la-ubyte.gz", &labels)] {
            let f = File::create(gz_dir.path().join(name)).unwrap();
            let mut enc = flate2::write::GzEncoder::new(f, flate2::Compression::fast());
            std::io::Write::write_all(&mut enc, bytes).unwrap();
            enc.finish().unwrap();
        }
        let gz_split =
            load_idx_split(gz_dir.path(), "synth", "train", "im-ubyte", "la-ubyte").unwrap();
        assert_eq!(gz_split.images, split.images);
        assert_eq!(gz_split.labels, split.labels);
    }

    #[test]
    fn missing_file_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_idx_split(dir.path(), "synth", "train", "nope", "nah").unwrap_err();
        assert!(err.to_string().contains("nope"), "{err}");
    }
}
