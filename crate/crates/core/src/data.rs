//! Embedding datasets: binary and CSV formats, synthetic generation, label
//! noise injection, and task splitting.
//!
//! Binary layout (little-endian): magic `PICL`, format version u32, N u64,
//! D u32, C u32, then N*D f32 features row-major, then N u32 labels.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::trainer::{Task, TaskStream};
use crate::ClassId;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const DATASET_MAGIC: [u8; 4] = *b"PICL";
pub const DATASET_VERSION: u32 = 1;

/// Labeled embedding vectors. Features are stored as f32 (the wire format)
/// and widened to f64 when batches are built.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    features: Vec<f32>,
    dim: usize,
    num_classes: u32,
    labels: Vec<ClassId>,
}

impl EmbeddingDataset {
    pub fn new(
        features: Vec<f32>,
        dim: usize,
        num_classes: u32,
        labels: Vec<ClassId>,
    ) -> Result<Self> {
        if dim == 0 || labels.is_empty() {
            return Err(Error::DatasetFormat(
                "dataset must have at least one sample and a nonzero dimension".into(),
            ));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::DatasetFormat(format!(
                "feature buffer has {} values, expected {} x {}",
                features.len(),
                labels.len(),
                dim
            )));
        }
        let mut present = vec![false; num_classes as usize];
        for &l in &labels {
            if l >= num_classes {
                return Err(Error::DatasetFormat(format!(
                    "label {l} out of range for {num_classes} classes"
                )));
            }
            present[l as usize] = true;
        }
        if let Some(missing) = present.iter().position(|p| !p) {
            return Err(Error::DatasetFormat(format!(
                "class {missing} has no samples; labels must cover 0..{} contiguously",
                num_classes.saturating_sub(1)
            )));
        }
        if features.iter().any(|f| !f.is_finite()) {
            return Err(Error::DatasetFormat("non-finite feature values".into()));
        }
        Ok(Self {
            features,
            dim,
            num_classes,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> ClassId {
        self.labels[i]
    }

    pub fn feature_row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Gathers the given rows into an f64 batch matrix.
    pub fn rows_to_matrix(&self, indices: &[usize]) -> Matrix {
        let mut m = Matrix::zeros(indices.len(), self.dim);
        for (out, &i) in indices.iter().enumerate() {
            for (dst, src) in m.row_mut(out).iter_mut().zip(self.feature_row(i)) {
                *dst = f64::from(*src);
            }
        }
        m
    }

    pub fn gather_labels(&self, indices: &[usize]) -> Vec<ClassId> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// Indices of every sample whose label is in `classes`.
    pub fn indices_with_labels(&self, classes: &[ClassId]) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| classes.contains(&self.labels[i]))
            .collect()
    }

    /// Binary save (atomic: temp file + rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf =
            Vec::with_capacity(20 + self.features.len() * 4 + self.labels.len() * 4);
        buf.extend_from_slice(&DATASET_MAGIC);
        buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&self.num_classes.to_le_bytes());
        for f in &self.features {
            buf.extend_from_slice(&f.to_le_bytes());
        }
        for l in &self.labels {
            buf.extend_from_slice(&l.to_le_bytes());
        }
        write_atomic(path, &buf)
    }

    fn load_binary(bytes: &[u8]) -> Result<Self> {
        let mut cur = std::io::Cursor::new(bytes);
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic)
            .map_err(|_| Error::DatasetFormat("truncated header".into()))?;
        if magic != DATASET_MAGIC {
            return Err(Error::DatasetFormat(format!(
                "bad magic {magic:?}, expected {DATASET_MAGIC:?}"
            )));
        }
        let mut u32buf = [0u8; 4];
        let mut u64buf = [0u8; 8];
        let mut read_u32 = |cur: &mut std::io::Cursor<&[u8]>| -> Result<u32> {
            cur.read_exact(&mut u32buf)
                .map_err(|_| Error::DatasetFormat("truncated header".into()))?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let version = read_u32(&mut cur)?;
        if version != DATASET_VERSION {
            return Err(Error::DatasetFormat(format!(
                "unsupported dataset version {version}"
            )));
        }
        cur.read_exact(&mut u64buf)
            .map_err(|_| Error::DatasetFormat("truncated header".into()))?;
        let n = u64::from_le_bytes(u64buf) as usize;
        let dim = read_u32(&mut cur)? as usize;
        let num_classes = read_u32(&mut cur)?;
        let need = n
            .checked_mul(dim)
            .and_then(|fd| fd.checked_mul(4))
            .and_then(|fb| fb.checked_add(n * 4))
            .ok_or_else(|| Error::DatasetFormat("header sizes overflow".into()))?;
        let body = &bytes[cur.position() as usize..];
        if body.len() != need {
            return Err(Error::DatasetFormat(format!(
                "truncated body: have {} bytes, need {need}",
                body.len()
            )));
        }
        let mut features = Vec::with_capacity(n * dim);
        for chunk in body[..n * dim * 4].chunks_exact(4) {
            features.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        let mut labels = Vec::with_capacity(n);
        for chunk in body[n * dim * 4..].chunks_exact(4) {
            labels.push(u32::from_le_bytes(chunk.try_into().unwrap()));
        }
        Self::new(features, dim, num_classes, labels)
    }

    /// CSV save with header `label,f0,...,f{D-1}`.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["label".to_string()];
        header.extend((0..self.dim).map(|i| format!("f{i}")));
        wtr.write_record(&header)
            .map_err(|e| Error::DatasetFormat(e.to_string()))?;
        for i in 0..self.len() {
            let mut rec = vec![self.labels[i].to_string()];
            rec.extend(self.feature_row(i).iter().map(|f| f.to_string()));
            wtr.write_record(&rec)
                .map_err(|e| Error::DatasetFormat(e.to_string()))?;
        }
        let bytes = wtr
            .into_inner()
            .map_err(|e| Error::DatasetFormat(e.to_string()))?;
        write_atomic(path, &bytes)
    }

    fn load_csv(bytes: &[u8]) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(bytes);
        let headers = rdr
            .headers()
            .map_err(|e| Error::DatasetFormat(e.to_string()))?
            .clone();
        if headers.get(0) != Some("label") || headers.len() < 2 {
            return Err(Error::DatasetFormat(
                "CSV must start with a `label,f0,...` header".into(),
            ));
        }
        let dim = headers.len() - 1;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::DatasetFormat(e.to_string()))?;
            if rec.len() != dim + 1 {
                return Err(Error::DatasetFormat(format!(
                    "CSV row {row} has {} fields, expected {}",
                    rec.len(),
                    dim + 1
                )));
            }
            let label: ClassId = rec[0]
                .parse()
                .map_err(|_| Error::DatasetFormat(format!("bad label at row {row}")))?;
            labels.push(label);
            for v in rec.iter().skip(1) {
                let f: f32 = v
                    .parse()
                    .map_err(|_| Error::DatasetFormat(format!("bad float at row {row}")))?;
                features.push(f);
            }
        }
        let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
        Self::new(features, dim, num_classes, labels)
    }

    /// Loads a dataset, sniffing the binary magic and falling back to CSV.
    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() >= 4 && bytes[..4] == DATASET_MAGIC {
            Self::load_binary(&bytes)
        } else {
            Self::load_csv(&bytes)
        }
    }
}

/// Writes a file atomically: everything goes to a temp sibling first, and
/// the final name appears only via rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{file_name}.tmp.{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Synthetic dataset parameters: one unit direction per class, samples are
/// direction plus isotropic Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_classes: u32,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub intra_class_stddev: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            dim: 64,
            train_per_class: 200,
            test_per_class: 50,
            intra_class_stddev: 0.1,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig("need at least two classes".into()));
        }
        if self.dim < 2 {
            return Err(Error::InvalidConfig("need dimension >= 2".into()));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::InvalidConfig(
                "train/test samples per class must be positive".into(),
            ));
        }
        if !(self.intra_class_stddev > 0.0) {
            return Err(Error::InvalidConfig("stddev must be positive".into()));
        }
        Ok(())
    }
}

const MAX_DIRECTION_TRIES: usize = 10_000;
/// Class directions are rejected until pairwise cosine similarity is below
/// this, keeping classes angularly separated.
const DIRECTION_MAX_COS: f64 = 0.8;

fn unit_direction<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Generates disjoint train/test splits: per class a unit direction sampled
/// on the sphere (rejection-enforced angular separation), then independent
/// Gaussian draws around it for each split.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(EmbeddingDataset, EmbeddingDataset)> {
    cfg.validate()?;
    let mut dir_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x44495253);
    let mut directions: Vec<Vec<f64>> = Vec::with_capacity(cfg.num_classes as usize);
    for class in 0..cfg.num_classes {
        let mut tries = 0;
        let dir = loop {
            let cand = unit_direction(cfg.dim, &mut dir_rng);
            let ok = directions
                .iter()
                .all(|d| crate::losses::cosine_similarity(d, &cand) < DIRECTION_MAX_COS);
            if ok {
                break cand;
            }
            tries += 1;
            if tries >= MAX_DIRECTION_TRIES {
                return Err(Error::InvalidConfig(format!(
                    "could not place a direction for class {class}: too many classes for dimension {}",
                    cfg.dim
                )));
            }
        };
        directions.push(dir);
    }

    let draw = |split_seed: u64, per_class: usize| -> EmbeddingDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
        let n = cfg.num_classes as usize * per_class;
        let mut features = Vec::with_capacity(n * cfg.dim);
        let mut labels = Vec::with_capacity(n);
        for (class, dir) in directions.iter().enumerate() {
            for _ in 0..per_class {
                for d in dir {
                    let noise: f64 = rng.sample(StandardNormal);
                    features.push((d + cfg.intra_class_stddev * noise) as f32);
                }
                labels.push(class as ClassId);
            }
        }
        EmbeddingDataset::new(features, cfg.dim, cfg.num_classes, labels)
            .expect("generated dataset is valid by construction")
    };

    let train = draw(cfg.seed ^ 0x5452_4149, cfg.train_per_class);
    let test = draw(cfg.seed ^ 0x5445_5354, cfg.test_per_class);
    Ok((train, test))
}

/// Reassigns labels of a seeded random `fraction` of samples to a uniformly
/// chosen different class. Returns the number of flipped labels.
pub fn inject_label_noise(ds: &mut EmbeddingDataset, fraction: f64, seed: u64) -> usize {
    let n = ds.len();
    let flip = ((n as f64) * fraction).floor() as usize;
    if flip == 0 || ds.num_classes < 2 {
        return 0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4e4f_4953);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    for &i in order.iter().take(flip) {
        let old = ds.labels[i];
        let mut new = rng.gen_range(0..ds.num_classes - 1);
        if new >= old {
            new += 1;
        }
        ds.labels[i] = new;
    }
    flip
}

/// How classes are ordered before being split into tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassOrder {
    Ascending,
    Shuffled(u64),
}

impl Default for ClassOrder {
    fn default() -> Self {
        ClassOrder::Ascending
    }
}

impl std::str::FromStr for ClassOrder {
    type Err = Error;

    /// `ascending` or `shuffled:<seed>`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "ascending" {
            return Ok(ClassOrder::Ascending);
        }
        if let Some(seed) = s.strip_prefix("shuffled:") {
            let seed: u64 = seed.parse().map_err(|_| {
                Error::InvalidConfig(format!("bad shuffle seed in class order `{s}`"))
            })?;
            return Ok(ClassOrder::Shuffled(seed));
        }
        Err(Error::InvalidConfig(format!(
            "unknown class order `{s}`; use `ascending` or `shuffled:<seed>`"
        )))
    }
}

/// Partitions classes into a base task plus fixed-size incremental tasks.
/// The class count must divide exactly: base + k * increment = C with k >= 1.
pub fn split_tasks(
    dataset: &EmbeddingDataset,
    base_class_count: usize,
    classes_per_increment: usize,
    order: ClassOrder,
) -> Result<TaskStream> {
    let c = dataset.num_classes() as usize;
    if base_class_count == 0 || base_class_count >= c {
        return Err(Error::TaskStream(format!(
            "base class count {base_class_count} must be in 1..{c}"
        )));
    }
    if classes_per_increment == 0 {
        return Err(Error::TaskStream(
            "classes per increment must be positive".into(),
        ));
    }
    let rest = c - base_class_count;
    if rest % classes_per_increment != 0 {
        return Err(Error::TaskStream(format!(
            "{rest} remaining classes do not divide into increments of {classes_per_increment}"
        )));
    }
    let mut classes: Vec<ClassId> = (0..dataset.num_classes()).collect();
    if let ClassOrder::Shuffled(seed) = order {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4f52_4445);
        classes.shuffle(&mut rng);
    }

    let mut tasks = Vec::new();
    let mut offset = 0;
    let mut index = 1;
    while offset < c {
        let take = if index == 1 {
            base_class_count
        } else {
            classes_per_increment
        };
        let task_classes: Vec<ClassId> = classes[offset..offset + take].to_vec();
        let train_indices = dataset.indices_with_labels(&task_classes);
        if train_indices.is_empty() {
            return Err(Error::TaskStream(format!(
                "task {index} has no training samples"
            )));
        }
        tasks.push(Task {
            index,
            classes: task_classes,
            train_indices,
        });
        offset += take;
        index += 1;
    }
    TaskStream::new(tasks, base_class_count)
}
