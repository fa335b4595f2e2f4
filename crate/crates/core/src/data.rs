//! Corpus model: grade labels derived from mechanical-ventilation duration,
//! image records with provenance, manifest/directory ingestion, train/test
//! splitting, and the one-vs-all domain partition used by the GAN stage.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::img::Image;

/// Side length every ingested image is normalized to.
pub const INGEST_SIZE: usize = 256;

/// Severity grade 1-6, defined by mechanical-ventilation duration bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GradeLabel(u8);

impl GradeLabel {
    pub fn new(value: u8) -> Result<Self> {
        if (1..=6).contains(&value) {
            Ok(GradeLabel(value))
        } else {
            Err(Error::validation(format!(
                "grade must be in 1..=6, got {value}"
            )))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// Zero-based index used for classifier outputs and table rows.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::new(index as u8 + 1)
    }

    pub fn all() -> [GradeLabel; 6] {
        [1, 2, 3, 4, 5, 6].map(GradeLabel)
    }
}

impl fmt::Display for GradeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "grade {}", self.0)
    }
}

/// Map a mechanical-ventilation duration (hours) to its grade band.
///
/// Bands are half-open so every positive duration maps to exactly one grade:
/// `<24h -> 1`, `[24h, 48h] -> 2`, `(48h, 7d] -> 3`, `(7d, 14d] -> 4`,
/// `(14d, 30d] -> 5`, `>30d -> 6`.
pub fn grade_from_ventilation(hours: f64) -> Result<GradeLabel> {
    if !hours.is_finite() || hours <= 0.0 {
        return Err(Error::validation(format!(
            "ventilation hours must be positive and finite, got {hours}"
        )));
    }
    let grade = if hours < 24.0 {
        1
    } else if hours <= 48.0 {
        2
    } else if hours <= 7.0 * 24.0 {
        3
    } else if hours <= 14.0 * 24.0 {
        4
    } else if hours <= 30.0 * 24.0 {
        5
    } else {
        6
    };
    GradeLabel::new(grade)
}

/// Where an image came from within the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Transform,
    CycleGan,
    Cut,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Original => "original",
            Provenance::Transform => "transform",
            Provenance::CycleGan => "cyclegan",
            Provenance::Cut => "cut",
        }
    }

    /// Column heading used by the count and mean-intensity tables.
    pub fn table_heading(self) -> &'static str {
        match self {
            Provenance::Original => "Original",
            Provenance::Transform => "Transformations",
            Provenance::CycleGan => "CycleGAN",
            Provenance::Cut => "CUT",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Provenance::Original),
            "transform" => Ok(Provenance::Transform),
            "cyclegan" => Ok(Provenance::CycleGan),
            "cut" => Ok(Provenance::Cut),
            other => Err(Error::validation(format!("unknown provenance '{other}'"))),
        }
    }

    pub fn all() -> [Provenance; 4] {
        [
            Provenance::Original,
            Provenance::Transform,
            Provenance::CycleGan,
            Provenance::Cut,
        ]
    }
}

/// One labeled RGB image.
#[derive(Debug, Clone)]
pub struct ImageRecord {
    pub patient_id: String,
    pub image: Image,
    pub grade: GradeLabel,
    pub provenance: Provenance,
    pub source_path: PathBuf,
}

impl ImageRecord {
    /// Content hash of the pixel data (not the file encoding).
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.image.raw_bytes());
        hex_string(&hasher.finalize())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// An immutable, ordered collection of image records.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    records: Vec<ImageRecord>,
    per_grade_counts: BTreeMap<GradeLabel, usize>,
}

impl Dataset {
    pub fn new(records: Vec<ImageRecord>) -> Self {
        let mut per_grade_counts = BTreeMap::new();
        for r in &records {
            *per_grade_counts.entry(r.grade).or_insert(0) += 1;
        }
        Dataset {
            records,
            per_grade_counts,
        }
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn per_grade_counts(&self) -> &BTreeMap<GradeLabel, usize> {
        &self.per_grade_counts
    }

    pub fn count_for(&self, grade: GradeLabel) -> usize {
        self.per_grade_counts.get(&grade).copied().unwrap_or(0)
    }

    /// Recount records and confirm the cached per-grade table matches.
    pub fn verify_counts(&self) -> bool {
        let recount = Dataset::new(self.records.clone());
        recount.per_grade_counts == self.per_grade_counts
            && self.per_grade_counts.values().sum::<usize>() == self.records.len()
    }

    pub fn filter_grade(&self, grade: GradeLabel) -> Dataset {
        Dataset::new(
            self.records
                .iter()
                .filter(|r| r.grade == grade)
                .cloned()
                .collect(),
        )
    }

    pub fn concat(&self, other: &Dataset) -> Dataset {
        let mut records = self.records.clone();
        records.extend(other.records.iter().cloned());
        Dataset::new(records)
    }

    pub fn content_hashes(&self) -> Vec<String> {
        self.records.iter().map(|r| r.content_hash()).collect()
    }
}

/// One-vs-all split for GAN training: `train_b` holds the target grade,
/// `train_a` everything else.
#[derive(Debug, Clone)]
pub struct DomainPartition {
    pub target_grade: GradeLabel,
    pub train_a: Dataset,
    pub train_b: Dataset,
}

/// Group a training set into source/target domains for one grade.
pub fn one_vs_all_partition(train: &Dataset, grade: GradeLabel) -> Result<DomainPartition> {
    if train.is_empty() {
        return Err(Error::validation("cannot partition an empty training set"));
    }
    let train_b = train.filter_grade(grade);
    if train_b.is_empty() {
        return Err(Error::validation(format!(
            "no images of {grade}: the target domain would be empty"
        )));
    }
    let train_a = Dataset::new(
        train
            .records()
            .iter()
            .filter(|r| r.grade != grade)
            .cloned()
            .collect(),
    );
    Ok(DomainPartition {
        target_grade: grade,
        train_a,
        train_b,
    })
}

/// Derive a child seed from a root seed and a context tag.
///
/// Hash-based so sub-streams (per grade, per image, per op) are independent
/// of evaluation schedule and platform.
pub fn derive_seed(root: u64, tags: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    for t in tags {
        hasher.update([0xff]);
        hasher.update(t.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn rng_from(root: u64, tags: &[&str]) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(derive_seed(root, tags))
}

/// Deterministic train/test split.
///
/// With `by_patient` set (the default in pipeline configs), whole patients go
/// to one side, preventing leakage. Otherwise images are split individually,
/// stratified per grade, with the train count within one image of
/// `ratio * stratum size`.
pub fn split_dataset(
    ds: &Dataset,
    ratio: f64,
    seed: u64,
    by_patient: bool,
) -> Result<(Dataset, Dataset)> {
    if ds.is_empty() {
        return Err(Error::validation("cannot split an empty dataset"));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::validation(format!(
            "split ratio must be in (0, 1), got {ratio}"
        )));
    }

    let train_idx: Vec<usize> = if by_patient {
        split_by_patient(ds, ratio, seed)
    } else {
        split_by_image(ds, ratio, seed)
    };

    let mut in_train = vec![false; ds.len()];
    for &i in &train_idx {
        in_train[i] = true;
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, r) in ds.records().iter().enumerate() {
        if in_train[i] {
            train.push(r.clone());
        } else {
            test.push(r.clone());
        }
    }
    if test.is_empty() || train.is_empty() {
        log::warn!(
            "split produced an empty side (train {}, test {})",
            train.len(),
            test.len()
        );
    }
    Ok((Dataset::new(train), Dataset::new(test)))
}

fn split_by_patient(ds: &Dataset, ratio: f64, seed: u64) -> Vec<usize> {
    let mut by_patient: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in ds.records().iter().enumerate() {
        by_patient.entry(r.patient_id.as_str()).or_default().push(i);
    }
    let mut patients: Vec<&str> = by_patient.keys().copied().collect();
    let mut rng = rng_from(seed, &["split", "patients"]);
    patients.shuffle(&mut rng);

    let target = ratio * ds.len() as f64;
    let mut train_idx = Vec::new();
    for p in patients {
        if (train_idx.len() as f64) < target {
            train_idx.extend(&by_patient[p]);
        }
    }
    train_idx
}

fn split_by_image(ds: &Dataset, ratio: f64, seed: u64) -> Vec<usize> {
    let mut by_grade: BTreeMap<GradeLabel, Vec<usize>> = BTreeMap::new();
    for (i, r) in ds.records().iter().enumerate() {
        by_grade.entry(r.grade).or_default().push(i);
    }
    let mut train_idx = Vec::new();
    for (grade, mut idx) in by_grade {
        if idx.is_empty() {
            log::warn!("{grade}: empty stratum skipped");
            continue;
        }
        let mut rng = rng_from(seed, &["split", "stratum", &grade.value().to_string()]);
        idx.shuffle(&mut rng);
        let n_train = ((idx.len() as f64) * ratio).round() as usize;
        let n_train = n_train.min(idx.len());
        train_idx.extend(idx.into_iter().take(n_train));
    }
    train_idx
}

/// Columns recognized by [`load_manifest`].
const MANIFEST_COLUMNS: [&str; 5] = [
    "patient_id",
    "image_path",
    "ventilation_hours",
    "grade",
    "split",
];

/// Load a CSV manifest (`patient_id,image_path,ventilation_hours[,grade][,split]`).
///
/// Image paths are resolved relative to the manifest's directory; every image
/// is decoded as RGB and resized to 256x256. The grade comes from an explicit
/// `grade` column when present and non-empty, otherwise from
/// [`grade_from_ventilation`] on `ventilation_hours`.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            row: 0,
            message: e.to_string(),
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    for h in headers.iter() {
        if !MANIFEST_COLUMNS.contains(&h) {
            log::warn!("manifest {}: unknown column '{h}' ignored", path.display());
        }
    }
    let (c_patient, c_path) = match (col("patient_id"), col("image_path")) {
        (Some(p), Some(i)) => (p, i),
        _ => {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                row: 0,
                message: "header must contain patient_id and image_path".into(),
            })
        }
    };
    let c_hours = col("ventilation_hours");
    let c_grade = col("grade");
    if c_hours.is_none() && c_grade.is_none() {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            row: 0,
            message: "need a ventilation_hours or grade column".into(),
        });
    }

    let mut records = Vec::new();
    for (row_idx, row) in reader.records().enumerate() {
        let row_no = row_idx + 1;
        let manifest_err = |message: String| Error::Manifest {
            path: path.to_path_buf(),
            row: row_no,
            message,
        };
        let row = row.map_err(|e| manifest_err(e.to_string()))?;
        let field = |i: usize| row.get(i).unwrap_or("");

        let grade = match c_grade.map(field).filter(|s| !s.is_empty()) {
            Some(g) => {
                let value: u8 = g
                    .parse()
                    .map_err(|_| manifest_err(format!("bad grade '{g}'")))?;
                GradeLabel::new(value).map_err(|e| manifest_err(e.to_string()))?
            }
            None => match c_hours.map(field).filter(|s| !s.is_empty()) {
                Some(h) => {
                    let hours: f64 = h
                        .parse()
                        .map_err(|_| manifest_err(format!("bad ventilation_hours '{h}'")))?;
                    grade_from_ventilation(hours).map_err(|e| manifest_err(e.to_string()))?
                }
                None => {
                    return Err(manifest_err(
                        "row has neither grade nor ventilation_hours".into(),
                    ))
                }
            },
        };

        let rel = field(c_path);
        if rel.is_empty() {
            return Err(manifest_err("empty image_path".into()));
        }
        let img_path = dir.join(rel);
        let image = Image::open(&img_path)
            .map_err(|e| manifest_err(format!("{e}")))?
            .resize_bilinear(INGEST_SIZE, INGEST_SIZE)?;

        records.push(ImageRecord {
            patient_id: field(c_patient).to_string(),
            image,
            grade,
            provenance: Provenance::Original,
            source_path: img_path,
        });
    }

    if records.is_empty() {
        log::warn!("manifest {} contains no data rows", path.display());
    }
    Ok(Dataset::new(records))
}

/// Directory-layout fallback: `<root>/grade_{1..6}/*.png` (or `.jpg`).
/// The file stem doubles as the patient id.
pub fn load_directory(root: &Path) -> Result<Dataset> {
    let mut records = Vec::new();
    for grade in GradeLabel::all() {
        let dir = root.join(format!("grade_{}", grade.value()));
        if !dir.is_dir() {
            continue;
        }
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|s| s.to_str()),
                    Some("png") | Some("jpg") | Some("jpeg")
                )
            })
            .collect();
        entries.sort();
        for p in entries {
            let image = Image::open(&p)?.resize_bilinear(INGEST_SIZE, INGEST_SIZE)?;
            let stem = p
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("unknown")
                .to_string();
            records.push(ImageRecord {
                patient_id: stem,
                image,
                grade,
                provenance: Provenance::Original,
                source_path: p,
            });
        }
    }
    if records.is_empty() {
        log::warn!("no grade_N subdirectories with images under {}", root.display());
    }
    Ok(Dataset::new(records))
}

/// Ingest either a CSV manifest (file path) or a grade-directory tree.
pub fn load_corpus(path: &Path) -> Result<Dataset> {
    if path.is_dir() {
        load_directory(path)
    } else if path.is_file() {
        load_manifest(path)
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        ))
    }
}
