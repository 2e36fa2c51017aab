//! Binary datasets: IDX and SILB ingestion, stochastic binarization, toy
//! distributions with known structure, and a self-describing JSON container.

use std::fs;
use std::io::Write;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::SplitRng;

/// Unsigned-byte IDX array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    /// Number of items along the first dimension.
    pub fn len(&self) -> usize {
        self.dims.first().copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bytes per item.
    pub fn item_size(&self) -> usize {
        self.dims.iter().skip(1).product()
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::format("idx", "bad magic"));
    }
    if bytes[2] != 0x08 {
        return Err(Error::format("idx", format!("unsupported element type 0x{:02x}", bytes[2])));
    }
    let ndims = bytes[3] as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::format("idx", "truncated header"));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|d| u32::from_be_bytes(bytes[4 + 4 * d..8 + 4 * d].try_into().unwrap()) as usize)
        .collect();
    let total = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format("idx", "dimension product overflows"))?;
    let payload = &bytes[header..];
    if payload.len() < total {
        return Err(Error::format(
            "idx",
            format!("truncated payload: dims need {total} bytes, found {}", payload.len()),
        ));
    }
    if payload.len() > total {
        return Err(Error::format("idx", format!("{} trailing bytes", payload.len() - total)));
    }
    Ok(IdxArray {
        dims,
        data: payload.to_vec(),
    })
}

pub fn load_idx(path: &Path) -> Result<IdxArray> {
    parse_idx(&fs::read(path)?)
}

pub fn write_idx(array: &IdxArray) -> Result<Vec<u8>> {
    if array.dims.len() > 255 || array.dims.iter().product::<usize>() != array.data.len() {
        return Err(Error::format("idx", "dimensions do not match payload"));
    }
    let mut out = vec![0, 0, 0x08, array.dims.len() as u8];
    for &d in &array.dims {
        let d = u32::try_from(d).map_err(|_| Error::format("idx", "dimension exceeds u32"))?;
        out.extend(d.to_be_bytes());
    }
    out.extend(&array.data);
    Ok(out)
}

/// Each byte becomes 1 with probability `gray / 255`.
pub fn binarize_bytes(grays: &[u8], rng: &mut SplitRng) -> Vec<u8> {
    grays
        .iter()
        .map(|&g| (rng.uniform() * 255.0 < g as f64) as u8)
        .collect()
}

/// Binarizes every item of an IDX image array once, with a fixed seed.
pub fn stochastic_binarize(images: &IdxArray, seed: u64) -> Vec<Vec<u8>> {
    let mut rng = SplitRng::seed(seed);
    let size = images.item_size();
    images
        .data
        .chunks(size.max(1))
        .map(|item| binarize_bytes(item, &mut rng))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binarization_seed: Option<u64>,
    /// SHA-256 of the source files, hex, in load order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub source_sha256: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryDataset {
    pub n_vis: usize,
    pub train: Vec<Vec<u8>>,
    pub test: Vec<Vec<u8>>,
    pub validation: Vec<Vec<u8>>,
    pub provenance: Provenance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Validation,
}

impl BinaryDataset {
    pub fn new(n_vis: usize, train: Vec<Vec<u8>>, test: Vec<Vec<u8>>, provenance: Provenance) -> Result<Self> {
        let ds = BinaryDataset {
            n_vis,
            train,
            test,
            validation: Vec::new(),
            provenance,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn split(&self, split: Split) -> &[Vec<u8>] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
            Split::Validation => &self.validation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, rows) in [("train", &self.train), ("test", &self.test), ("validation", &self.validation)] {
            for (r, row) in rows.iter().enumerate() {
                if row.len() != self.n_vis {
                    return Err(Error::Shape(format!(
                        "{name} row {r} has length {}, expected {}",
                        row.len(),
                        self.n_vis
                    )));
                }
                if row.iter().any(|&b| b > 1) {
                    return Err(Error::Shape(format!("{name} row {r} is not binary")));
                }
            }
        }
        Ok(())
    }

    /// Moves a seeded random `fraction` of the training rows into the validation split.
    pub fn split_validation(&mut self, fraction: f64, seed: u64) -> Result<()> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::Config(format!("validation fraction {fraction} outside [0,1)")));
        }
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        let mut rng = SplitRng::seed(seed);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.index(i + 1));
        }
        let n_val = (fraction * self.train.len() as f64).round() as usize;
        let mut keep: Vec<usize> = order[n_val..].to_vec();
        let mut val: Vec<usize> = order[..n_val].to_vec();
        keep.sort_unstable();
        val.sort_unstable();
        self.validation.extend(val.iter().map(|&i| self.train[i].clone()));
        self.train = keep.iter().map(|&i| self.train[i].clone()).collect();
        Ok(())
    }

    /// Per-unit means of a split.
    pub fn means(&self, split: Split) -> Vec<f64> {
        let rows = self.split(split);
        let mut means = vec![0.0; self.n_vis];
        for row in rows {
            for (m, &b) in means.iter_mut().zip(row) {
                *m += b as f64;
            }
        }
        let n = rows.len().max(1) as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }
}

/// Loads MNIST-style IDX image files and binarizes them once.
pub fn load_mnist(train_images: &Path, test_images: &Path, seed: u64) -> Result<BinaryDataset> {
    let mut digests = Vec::new();
    let mut splits = Vec::new();
    for (s, path) in [train_images, test_images].into_iter().enumerate() {
        let bytes = fs::read(path)?;
        digests.push(sha256_hex(&bytes));
        let images = parse_idx(&bytes)?;
        // train and test draw from distinct rng streams
        splits.push((images.item_size(), stochastic_binarize(&images, seed.wrapping_add(s as u64))));
    }
    let (n_vis, train) = splits.remove(0);
    let (n_test, test) = splits.remove(0);
    if n_test != n_vis {
        return Err(Error::format("idx", "train and test images differ in size"));
    }
    BinaryDataset::new(
        n_vis,
        train,
        test,
        Provenance {
            source: "idx".into(),
            binarization_seed: Some(seed),
            source_sha256: digests,
        },
    )
}

const SILB_MAGIC: &[u8; 4] = b"SILB";
const SILB_VERSION: u32 = 1;

/// A SILB file: `"SILB"`, then big-endian u32 version, rows, cols, count,
/// then `count·rows·cols` bits packed most-significant-bit first, zero padded
/// to a whole byte.
pub fn write_silb(rows: usize, cols: usize, images: &[Vec<u8>]) -> Result<Vec<u8>> {
    let mut out = SILB_MAGIC.to_vec();
    for x in [SILB_VERSION as usize, rows, cols, images.len()] {
        out.extend(u32::try_from(x).map_err(|_| Error::format("silb", "header field exceeds u32"))?.to_be_bytes());
    }
    for img in images {
        if img.len() != rows * cols {
            return Err(Error::format("silb", "image size does not match rows × cols"));
        }
    }
    out.extend(pack_bits(images.iter().flatten().copied()));
    Ok(out)
}

pub fn parse_silb(bytes: &[u8]) -> Result<(usize, usize, Vec<Vec<u8>>)> {
    if bytes.len() < 20 || &bytes[..4] != SILB_MAGIC {
        return Err(Error::format("silb", "malformed header"));
    }
    let field = |i: usize| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    if field(0) != SILB_VERSION as usize {
        return Err(Error::format("silb", format!("unsupported version {}", field(0))));
    }
    let (rows, cols, count) = (field(1), field(2), field(3));
    let size = rows * cols;
    let bits = size
        .checked_mul(count)
        .ok_or_else(|| Error::format("silb", "header sizes overflow"))?;
    let payload = &bytes[20..];
    if payload.len() != bits.div_ceil(8) {
        return Err(Error::format(
            "silb",
            format!("header declares {count} images but payload holds {} bytes", payload.len()),
        ));
    }
    let flat = unpack_bits(payload, bits);
    Ok((rows, cols, flat.chunks(size.max(1)).map(<[u8]>::to_vec).take(count).collect()))
}

/// Loads one SILB file per split.
pub fn load_silhouettes(train: &Path, test: &Path) -> Result<BinaryDataset> {
    let mut digests = Vec::new();
    let mut parsed = Vec::new();
    for path in [train, test] {
        let bytes = fs::read(path)?;
        digests.push(sha256_hex(&bytes));
        parsed.push(parse_silb(&bytes)?);
    }
    let (r0, c0, train) = parsed.remove(0);
    let (r1, c1, test) = parsed.remove(0);
    if (r0, c0) != (r1, c1) {
        return Err(Error::format("silb", "train and test images differ in shape"));
    }
    BinaryDataset::new(
        r0 * c0,
        train,
        test,
        Provenance {
            source: "silb".into(),
            binarization_seed: None,
            source_sha256: digests,
        },
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ToyKind {
    /// All `height × width` images whose rows are constant or whose columns are constant.
    BarsAndStripes { width: usize, height: usize },
    /// All even-parity strings of length `n`.
    Parity { n: usize },
    /// `count` train and `count` test rows of independent Bernoulli units.
    IndependentBernoulli { probs: Vec<f64>, count: usize },
}

/// Toy datasets. Enumerated kinds use the full pattern set as both train and test.
pub fn toy_dataset(kind: &ToyKind, seed: u64) -> Result<BinaryDataset> {
    let (n_vis, train, test, seeded) = match kind {
        &ToyKind::BarsAndStripes { width, height } => {
            if width == 0 || height == 0 || width + height > 24 {
                return Err(Error::Config(format!("unsupported bars-and-stripes size {width}×{height}")));
            }
            let mut patterns = std::collections::BTreeSet::new();
            for code in 0u32..1 << height {
                patterns.insert((0..height * width).map(|p| ((code >> (p / width)) & 1) as u8).collect::<Vec<_>>());
            }
            for code in 0u32..1 << width {
                patterns.insert((0..height * width).map(|p| ((code >> (p % width)) & 1) as u8).collect::<Vec<_>>());
            }
            let rows: Vec<Vec<u8>> = patterns.into_iter().collect();
            (width * height, rows.clone(), rows, false)
        }
        &ToyKind::Parity { n } => {
            if n == 0 || n > 24 {
                return Err(Error::Config(format!("unsupported parity length {n}")));
            }
            let rows: Vec<Vec<u8>> = (0u32..1 << n)
                .filter(|c| c.count_ones() % 2 == 0)
                .map(|c| (0..n).map(|i| ((c >> (n - 1 - i)) & 1) as u8).collect())
                .collect();
            (n, rows.clone(), rows, false)
        }
        ToyKind::IndependentBernoulli { probs, count } => {
            if probs.is_empty() || probs.iter().any(|p| !(0.0..=1.0).contains(p)) || *count == 0 {
                return Err(Error::Config("independent-bernoulli needs probabilities in [0,1] and count ≥ 1".into()));
            }
            let mut rng = SplitRng::seed(seed);
            let mut draw = || -> Vec<Vec<u8>> {
                (0..*count)
                    .map(|_| probs.iter().map(|&p| rng.bernoulli(p) as u8).collect())
                    .collect()
            };
            let train = draw();
            let test = draw();
            (probs.len(), train, test, true)
        }
    };
    BinaryDataset::new(
        n_vis,
        train,
        test,
        Provenance {
            source: format!("toy:{}", serde_json::to_string(kind)?),
            binarization_seed: seeded.then_some(seed),
            source_sha256: Vec::new(),
        },
    )
}

/// Mean test log-likelihood of the factorized Bernoulli model fit to the
/// training split, with add-½ smoothing of the unit means.
pub fn bernoulli_baseline(dataset: &BinaryDataset) -> f64 {
    let n = dataset.train.len() as f64;
    let probs: Vec<f64> = dataset
        .means(Split::Train)
        .iter()
        .map(|m| (m * n + 0.5) / (n + 1.0))
        .collect();
    let total: f64 = dataset
        .test
        .iter()
        .map(|row| {
            row.iter()
                .zip(&probs)
                .map(|(&b, &p)| if b == 1 { p.ln() } else { (1.0 - p).ln() })
                .sum::<f64>()
        })
        .sum();
    total / dataset.test.len().max(1) as f64
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn pack_bits(bits: impl Iterator<Item = u8>) -> Vec<u8> {
    let mut out = Vec::new();
    for (i, b) in bits.enumerate() {
        if i % 8 == 0 {
            out.push(0);
        }
        if b == 1 {
            *out.last_mut().unwrap() |= 0x80 >> (i % 8);
        }
    }
    out
}

pub(crate) fn unpack_bits(bytes: &[u8], n: usize) -> Vec<u8> {
    (0..n).map(|i| (bytes[i / 8] >> (7 - i % 8)) & 1).collect()
}

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SplitDocument {
    rows: usize,
    bits: String,
}

#[derive(Serialize, Deserialize)]
struct DatasetDocument {
    format_version: u32,
    n_vis: usize,
    provenance: Provenance,
    train: SplitDocument,
    test: SplitDocument,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    validation: Option<SplitDocument>,
    /// SHA-256 over the packed train, test and validation payloads.
    content_sha256: String,
}

fn encode_split(rows: &[Vec<u8>]) -> (SplitDocument, Vec<u8>) {
    let packed = pack_bits(rows.iter().flatten().copied());
    (
        SplitDocument {
            rows: rows.len(),
            bits: BASE64.encode(&packed),
        },
        packed,
    )
}

fn decode_split(doc: &SplitDocument, n_vis: usize) -> Result<(Vec<Vec<u8>>, Vec<u8>)> {
    let packed = BASE64
        .decode(&doc.bits)
        .map_err(|e| Error::format("dataset", format!("bad base64: {e}")))?;
    let bits = doc.rows * n_vis;
    if packed.len() != bits.div_ceil(8) {
        return Err(Error::format("dataset", "split payload does not match its row count"));
    }
    let flat = unpack_bits(&packed, bits);
    let rows = if n_vis == 0 {
        vec![Vec::new(); doc.rows]
    } else {
        flat.chunks(n_vis).map(<[u8]>::to_vec).collect()
    };
    Ok((rows, packed))
}

pub fn dataset_to_json(ds: &BinaryDataset) -> Result<String> {
    ds.validate()?;
    let (train, a) = encode_split(&ds.train);
    let (test, b) = encode_split(&ds.test);
    let (validation, c) = encode_split(&ds.validation);
    let mut hasher = Sha256::new();
    for part in [&a, &b, &c] {
        hasher.update(part);
    }
    let doc = DatasetDocument {
        format_version: DATASET_FORMAT_VERSION,
        n_vis: ds.n_vis,
        provenance: ds.provenance.clone(),
        train,
        test,
        validation: (!ds.validation.is_empty()).then_some(validation),
        content_sha256: hasher.finalize().iter().map(|b| format!("{b:02x}")).collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc)?;
    s.push('\n');
    Ok(s)
}

pub fn dataset_from_json(text: &str) -> Result<BinaryDataset> {
    let doc: DatasetDocument = serde_json::from_str(text)?;
    if doc.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::format("dataset", format!("unsupported format_version {}", doc.format_version)));
    }
    let (train, a) = decode_split(&doc.train, doc.n_vis)?;
    let (test, b) = decode_split(&doc.test, doc.n_vis)?;
    let empty = SplitDocument { rows: 0, bits: String::new() };
    let (validation, c) = decode_split(doc.validation.as_ref().unwrap_or(&empty), doc.n_vis)?;
    let mut hasher = Sha256::new();
    for part in [&a, &b, &c] {
        hasher.update(part);
    }
    let digest: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    if digest != doc.content_sha256 {
        return Err(Error::format("dataset", "content hash mismatch"));
    }
    let ds = BinaryDataset {
        n_vis: doc.n_vis,
        train,
        test,
        validation,
        provenance: doc.provenance,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn save_dataset(ds: &BinaryDataset, path: &Path) -> Result<()> {
    fs::write(path, dataset_to_json(ds)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<BinaryDataset> {
    dataset_from_json(&fs::read_to_string(path)?)
}

/// One row of comma-separated 0/1 values per example.
pub fn write_csv(rows: &[Vec<u8>], sink: &mut dyn Write) -> Result<()> {
    for row in rows {
        let line: Vec<&str> = row.iter().map(|&b| if b == 1 { "1" } else { "0" }).collect();
        writeln!(sink, "{}", line.join(","))?;
    }
    Ok(())
}
