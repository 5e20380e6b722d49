//! Dataset loaders: IDX image/label pairs (MNIST family), CIFAR binary
//! records, and the "SPFT" feature-vector format used by transfer-learning
//! runs. Loaders never mutate their inputs; datasets are immutable after load.

use crate::error::{Result, SpelaError};
use crate::linalg::Matrix;
use crate::rng::Rng;
use byteorder::{BigEndian, LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    None,
    PerSampleL2,
    Scale01,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    /// n x dim, row per sample.
    pub samples: Matrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub normalization: Normalization,
    /// Set for image data: (channels, height, width), dim = c*h*w.
    pub image_shape: Option<(usize, usize, usize)>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.samples.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.cols
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        self.samples.row(i)
    }

    pub fn validate(&self) -> Result<()> {
        if self.len() == 0 {
            return Err(SpelaError::Format("empty dataset".into()));
        }
        if self.n_classes == 0 {
            return Err(SpelaError::Format("dataset with zero classes".into()));
        }
        if self.labels.len() != self.len() {
            return Err(SpelaError::Format(format!(
                "{} samples but {} labels",
                self.len(),
                self.labels.len()
            )));
        }
        for &l in &self.labels {
            if l >= self.n_classes {
                return Err(SpelaError::LabelOutOfRange {
                    label: l,
                    n_classes: self.n_classes,
                });
            }
        }
        if !self.samples.is_finite() {
            return Err(SpelaError::NonFinite("dataset samples".into()));
        }
        Ok(())
    }
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Parse a big-endian IDX image/label file pair; pixels scaled to [0, 1].
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let mut f = std::io::BufReader::new(std::fs::File::open(images_path)?);
    let magic = f.read_u32::<BigEndian>()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(SpelaError::Format(format!(
            "bad IDX image magic {magic:#010x} in {}",
            images_path.display()
        )));
    }
    let n = f.read_u32::<BigEndian>()? as usize;
    let rows = f.read_u32::<BigEndian>()? as usize;
    let cols = f.read_u32::<BigEndian>()? as usize;
    let mut pixels = vec![0u8; n * rows * cols];
    f.read_exact(&mut pixels).map_err(|_| {
        SpelaError::Format(format!("truncated IDX image file {}", images_path.display()))
    })?;

    let mut f = std::io::BufReader::new(std::fs::File::open(labels_path)?);
    let magic = f.read_u32::<BigEndian>()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(SpelaError::Format(format!(
            "bad IDX label magic {magic:#010x} in {}",
            labels_path.display()
        )));
    }
    let n_labels = f.read_u32::<BigEndian>()? as usize;
    if n_labels != n {
        return Err(SpelaError::Format(format!(
            "{n} images but {n_labels} labels"
        )));
    }
    let mut raw_labels = vec![0u8; n];
    f.read_exact(&mut raw_labels).map_err(|_| {
        SpelaError::Format(format!("truncated IDX label file {}", labels_path.display()))
    })?;

    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let n_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let data: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let ds = LabeledDataset {
        samples: Matrix {
            rows: n,
            cols: rows * cols,
            data,
        },
        labels,
        n_classes,
        normalization: Normalization::Scale01,
        image_shape: Some((1, rows, cols)),
    };
    ds.validate()?;
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    C10,
    C100,
}

const CIFAR_PIXELS: usize = 3 * 32 * 32;

/// Parse standard CIFAR binary batch files (1 or 2 label bytes + 3072 pixel
/// bytes per record). `paths` are the batch files, in order.
pub fn load_cifar_files(paths: &[std::path::PathBuf], variant: CifarVariant) -> Result<LabeledDataset> {
    let label_bytes = match variant {
        CifarVariant::C10 => 1,
        CifarVariant::C100 => 2,
    };
    let rec = label_bytes + CIFAR_PIXELS;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let bytes = std::fs::read(p)?;
        if bytes.len() % rec != 0 {
            return Err(SpelaError::Format(format!(
                "{}: size {} not a multiple of record size {rec}",
                p.display(),
                bytes.len()
            )));
        }
        for chunk in bytes.chunks(rec) {
            // C100 records carry (coarse, fine); the fine label is last
            labels.push(chunk[label_bytes - 1] as usize);
            data.extend(chunk[label_bytes..].iter().map(|&b| b as f64 / 255.0));
        }
    }
    let n = labels.len();
    let n_classes = match variant {
        CifarVariant::C10 => 10,
        CifarVariant::C100 => 100,
    };
    let ds = LabeledDataset {
        samples: Matrix {
            rows: n,
            cols: CIFAR_PIXELS,
            data,
        },
        labels,
        n_classes,
        normalization: Normalization::Scale01,
        image_shape: Some((3, 32, 32)),
    };
    ds.validate()?;
    Ok(ds)
}

/// Load CIFAR from the conventional binary directory layout.
pub fn load_cifar(dir: &Path, variant: CifarVariant, train: bool) -> Result<LabeledDataset> {
    let paths: Vec<std::path::PathBuf> = match (variant, train) {
        (CifarVariant::C10, true) => (1..=5)
            .map(|i| dir.join(format!("data_batch_{i}.bin")))
            .collect(),
        (CifarVariant::C10, false) => vec![dir.join("test_batch.bin")],
        (CifarVariant::C100, true) => vec![dir.join("train.bin")],
        (CifarVariant::C100, false) => vec![dir.join("test.bin")],
    };
    load_cifar_files(&paths, variant)
}

const FEATURE_MAGIC: &[u8; 4] = b"SPFT";

/// Feature-vector file: "SPFT", u32 n, u32 dim, u32 n_classes, f32 rows,
/// u32 labels. Little-endian throughout.
pub fn load_features(path: &Path) -> Result<LabeledDataset> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != FEATURE_MAGIC {
        return Err(SpelaError::Format(format!(
            "bad feature magic {magic:?} in {}",
            path.display()
        )));
    }
    let n = f.read_u32::<LittleEndian>()? as usize;
    let dim = f.read_u32::<LittleEndian>()? as usize;
    let n_classes = f.read_u32::<LittleEndian>()? as usize;
    if n_classes == 0 {
        return Err(SpelaError::Format("feature file with zero classes".into()));
    }
    let mut data = vec![0.0f64; n * dim];
    for v in data.iter_mut() {
        *v = f.read_f32::<LittleEndian>()? as f64;
    }
    let mut labels = vec![0usize; n];
    for l in labels.iter_mut() {
        *l = f.read_u32::<LittleEndian>()? as usize;
    }
    let ds = LabeledDataset {
        samples: Matrix {
            rows: n,
            cols: dim,
            data,
        },
        labels,
        n_classes,
        normalization: Normalization::None,
        image_shape: None,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn write_features(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(FEATURE_MAGIC)?;
    f.write_u32::<LittleEndian>(ds.len() as u32)?;
    f.write_u32::<LittleEndian>(ds.dim() as u32)?;
    f.write_u32::<LittleEndian>(ds.n_classes as u32)?;
    for v in &ds.samples.data {
        f.write_f32::<LittleEndian>(*v as f32)?;
    }
    for &l in &ds.labels {
        f.write_u32::<LittleEndian>(l as u32)?;
    }
    Ok(())
}

/// Class-stratified subsample; every class keeps ceil-or-floor of its share.
pub fn subsample(ds: &LabeledDataset, fraction: f64, rng: &mut Rng) -> Result<LabeledDataset> {
    if !(0.0..=1.0).contains(&fraction) || fraction <= 0.0 {
        return Err(SpelaError::Config(format!("bad fraction {fraction}")));
    }
    if fraction == 1.0 {
        return Ok(ds.clone());
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut keep = Vec::new();
    for (c, idxs) in by_class.iter().enumerate() {
        if idxs.is_empty() {
            continue;
        }
        let k = (idxs.len() as f64 * fraction).round() as usize;
        if k == 0 {
            return Err(SpelaError::Config(format!(
                "fraction {fraction} keeps zero samples of class {c}"
            )));
        }
        let mut pool = idxs.clone();
        rng.shuffle(&mut pool);
        keep.extend_from_slice(&pool[..k]);
    }
    keep.sort_unstable();
    let dim = ds.dim();
    let mut data = Vec::with_capacity(keep.len() * dim);
    let mut labels = Vec::with_capacity(keep.len());
    for &i in &keep {
        data.extend_from_slice(ds.sample(i));
        labels.push(ds.labels[i]);
    }
    Ok(LabeledDataset {
        samples: Matrix {
            rows: keep.len(),
            cols: dim,
            data,
        },
        labels,
        n_classes: ds.n_classes,
        normalization: ds.normalization,
        image_shape: ds.image_shape,
    })
}

/// FNV-1a over file bytes; logged in run manifests so inputs are replayable.
pub fn file_checksum(path: &Path) -> Result<u64> {
    let bytes = std::fs::read(path)?;
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    Ok(h)
}

/// Gaussian class blobs around random unit centers; linearly separable-ish
/// toy data for tests and smoke runs.
pub fn synthetic_blobs(
    n_per_class: usize,
    dim: usize,
    n_classes: usize,
    spread: f64,
    rng: &mut Rng,
) -> LabeledDataset {
    let mut centers = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        let c: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        centers.push(crate::linalg::normalize(&c));
    }
    let n = n_per_class * n_classes;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..n_classes {
        for _ in 0..n_per_class {
            for j in 0..dim {
                data.push(centers[c][j] + spread * rng.normal());
            }
            labels.push(c);
        }
    }
    LabeledDataset {
        samples: Matrix {
            rows: n,
            cols: dim,
            data,
        },
        labels,
        n_classes,
        normalization: Normalization::None,
        image_shape: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use byteorder::WriteBytesExt;

    fn write_idx_fixture(dir: &Path, pixels: &[[u8; 4]], labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
        let ip = dir.join("imgs.idx3");
        let lp = dir.join("labels.idx1");
        let mut f = std::fs::File::create(&ip).unwrap();
        f.write_u32::<BigEndian>(IDX_IMAGES_MAGIC).unwrap();
        f.write_u32::<BigEndian>(pixels.len() as u32).unwrap();
        f.write_u32::<BigEndian>(2).unwrap();
        f.write_u32::<BigEndian>(2).unwrap();
        for img in pixels {
            f.write_all(img).unwrap();
        }
        let mut f = std::fs::File::create(&lp).unwrap();
        f.write_u32::<BigEndian>(IDX_LABELS_MAGIC).unwrap();
        f.write_u32::<BigEndian>(labels.len() as u32).unwrap();
        f.write_all(labels).unwrap();
        (ip, lp)
    }

    #[test]
    fn idx_fixture_round_trips_exact_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx_fixture(dir.path(), &[[0, 51, 102, 255], [255, 0, 0, 0]], &[1, 0]);
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.labels, vec![1, 0]);
        assert_eq!(ds.sample(0), &[0.0, 51.0 / 255.0, 102.0 / 255.0, 1.0]);
        assert_eq!(ds.sample(1), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn idx_wrong_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx_fixture(dir.path(), &[[1, 2, 3, 4]], &[0]);
        // labels file with image magic
        assert!(load_idx(&lp, &ip).is_err());
        let bad = dir.path().join("bad.idx1");
        let mut f = std::fs::File::create(&bad).unwrap();
        f.write_u32::<BigEndian>(0xdeadbeef).unwrap();
        f.write_u32::<BigEndian>(1).unwrap();
        f.write_all(&[0]).unwrap();
        assert!(load_idx(&ip, &bad).is_err());
    }

    #[test]
    fn idx_count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, _) = write_idx_fixture(dir.path(), &[[1, 2, 3, 4], [5, 6, 7, 8]], &[0, 1]);
        let lp = dir.path().join("short.idx1");
        let mut f = std::fs::File::create(&lp).unwrap();
        f.write_u32::<BigEndian>(IDX_LABELS_MAGIC).unwrap();
        f.write_u32::<BigEndian>(1).unwrap();
        f.write_all(&[0]).unwrap();
        assert!(load_idx(&ip, &lp).is_err());
    }

    #[test]
    fn cifar_fixture_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("data_batch_1.bin");
        let mut bytes = Vec::new();
        for label in [3u8, 7] {
            bytes.push(label);
            bytes.extend((0..CIFAR_PIXELS).map(|i| (i % 251) as u8));
        }
        std::fs::write(&p, &bytes).unwrap();
        let ds = load_cifar_files(&[p.clone()], CifarVariant::C10).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 3072);
        assert_eq!(ds.n_classes, 10);
        assert_eq!(ds.labels, vec![3, 7]);
        assert_eq!(ds.sample(0)[5], 5.0 / 255.0);
        // truncated record
        std::fs::write(&p, &bytes[..100]).unwrap();
        assert!(load_cifar_files(&[p], CifarVariant::C10).is_err());
    }

    #[test]
    fn cifar100_uses_fine_label() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("train.bin");
        let mut bytes = vec![4u8, 77u8]; // coarse, fine
        bytes.extend(std::iter::repeat_n(0u8, CIFAR_PIXELS));
        std::fs::write(&p, &bytes).unwrap();
        let ds = load_cifar_files(&[p], CifarVariant::C100).unwrap();
        assert_eq!(ds.labels, vec![77]);
        assert_eq!(ds.n_classes, 100);
    }

    #[test]
    fn feature_file_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let ds = LabeledDataset {
            samples: Matrix::from_rows(vec![
                vec![0.5, -1.25, 3.0, 0.0],
                vec![1.0, 2.0, -0.5, 4.5],
                vec![0.0, 0.125, 0.25, -8.0],
            ]),
            labels: vec![0, 2, 1],
            n_classes: 3,
            normalization: Normalization::None,
            image_shape: None,
        };
        let p = dir.path().join("f.spft");
        write_features(&ds, &p).unwrap();
        let back = load_features(&p).unwrap();
        assert_eq!(ds, back);
        let p2 = dir.path().join("g.spft");
        write_features(&back, &p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn feature_file_zero_classes_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.spft");
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(FEATURE_MAGIC).unwrap();
        f.write_u32::<LittleEndian>(0).unwrap();
        f.write_u32::<LittleEndian>(4).unwrap();
        f.write_u32::<LittleEndian>(0).unwrap();
        drop(f);
        assert!(load_features(&p).is_err());
    }

    #[test]
    fn subsample_stratified_and_reproducible() {
        let mut rng = Rng::new(1);
        let ds = synthetic_blobs(50, 4, 10, 0.1, &mut rng);
        let full = subsample(&ds, 1.0, &mut Rng::new(2)).unwrap();
        assert_eq!(full, ds);
        let tenth = subsample(&ds, 0.1, &mut Rng::new(2)).unwrap();
        let mut counts = vec![0usize; 10];
        for &l in &tenth.labels {
            counts[l] += 1;
        }
        for c in &counts {
            assert!((*c as i64 - 5).abs() <= 1, "counts={counts:?}");
        }
        let again = subsample(&ds, 0.1, &mut Rng::new(2)).unwrap();
        assert_eq!(tenth, again);
        // fraction leaving some class empty
        assert!(subsample(&ds, 0.001, &mut Rng::new(2)).is_err());
    }
}
