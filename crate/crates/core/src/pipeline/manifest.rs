//! Workspace bookkeeping: content hashing, per-stage manifests recording
//! input/output hashes, and the internal dataset CSV format stages exchange.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Dataset, GradeLabel, ImageRecord, Provenance};
use crate::error::{Error, Result};
use crate::img::Image;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactRef {
    /// Path relative to the workspace root.
    pub path: String,
    pub sha256: String,
}

/// Record of one stage execution; enables exact reruns and provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub inputs: Vec<ArtifactRef>,
    pub outputs: Vec<ArtifactRef>,
}

impl StageManifest {
    pub fn path_for(workspace: &Path, stage: &str) -> PathBuf {
        workspace.join("manifests").join(format!("{stage}.json"))
    }

    pub fn write(&self, workspace: &Path) -> Result<()> {
        let dir = workspace.join("manifests");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = Self::path_for(workspace, &self.stage);
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("manifest encode: {e}")))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn read(workspace: &Path, stage: &str) -> Result<Self> {
        let path = Self::path_for(workspace, stage);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("manifest decode: {e}")))
    }
}

/// Collect sorted (path, hash) refs for a list of workspace-relative files.
pub fn artifact_refs(workspace: &Path, rel_paths: &[String]) -> Result<Vec<ArtifactRef>> {
    let mut refs = Vec::with_capacity(rel_paths.len());
    let mut sorted: Vec<&String> = rel_paths.iter().collect();
    sorted.sort();
    for rel in sorted {
        let sha256 = hash_file(&workspace.join(rel))?;
        refs.push(ArtifactRef {
            path: rel.clone(),
            sha256,
        });
    }
    Ok(refs)
}

/// Require an upstream artifact; names the missing file on failure.
pub fn require_artifact(workspace: &Path, rel: &str) -> Result<PathBuf> {
    let path = workspace.join(rel);
    if !path.exists() {
        return Err(Error::MissingArtifact(format!(
            "{rel} (run the producing stage first)"
        )));
    }
    Ok(path)
}

/// Internal dataset manifest: `patient_id,image_path,grade,provenance`,
/// image paths workspace-relative. Written sorted by path for determinism.
pub fn write_dataset_csv(workspace: &Path, rel_csv: &str, ds: &Dataset) -> Result<()> {
    let mut rows: Vec<String> = ds
        .records()
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{}",
                r.patient_id,
                r.source_path.display(),
                r.grade.value(),
                r.provenance.as_str()
            )
        })
        .collect();
    rows.sort();
    let mut text = String::from("patient_id,image_path,grade,provenance\n");
    for row in rows {
        text.push_str(&row);
        text.push('\n');
    }
    let path = workspace.join(rel_csv);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Load an internal dataset manifest, decoding images from the workspace.
pub fn read_dataset_csv(workspace: &Path, rel_csv: &str) -> Result<Dataset> {
    let path = require_artifact(workspace, rel_csv)?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&path)
        .map_err(|e| Error::Manifest {
            path: path.clone(),
            row: 0,
            message: e.to_string(),
        })?;
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Manifest {
            path: path.clone(),
            row: i + 1,
            message: e.to_string(),
        })?;
        let get = |j: usize| row.get(j).unwrap_or("").to_string();
        let rel_img = get(1);
        let image = Image::open(&workspace.join(&rel_img))?;
        records.push(ImageRecord {
            patient_id: get(0),
            image,
            grade: GradeLabel::new(get(2).parse().map_err(|_| Error::Manifest {
                path: path.clone(),
                row: i + 1,
                message: format!("bad grade '{}'", get(2)),
            })?)?,
            provenance: Provenance::parse(&get(3))?,
            source_path: PathBuf::from(rel_img),
        });
    }
    Ok(Dataset::new(records))
}

/// Per-grade row counts of a dataset CSV without decoding any images.
pub fn count_dataset_csv(
    workspace: &Path,
    rel_csv: &str,
) -> Result<std::collections::BTreeMap<GradeLabel, usize>> {
    let path = require_artifact(workspace, rel_csv)?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&path)
        .map_err(|e| Error::Manifest {
            path: path.clone(),
            row: 0,
            message: e.to_string(),
        })?;
    let mut counts = std::collections::BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Manifest {
            path: path.clone(),
            row: i + 1,
            message: e.to_string(),
        })?;
        let g: u8 = row.get(2).unwrap_or("").parse().map_err(|_| Error::Manifest {
            path: path.clone(),
            row: i + 1,
            message: "bad grade".into(),
        })?;
        *counts.entry(GradeLabel::new(g)?).or_insert(0) += 1;
    }
    Ok(counts)
}

/// Write a dataset's images under the workspace and return a copy whose
/// `source_path`s are the workspace-relative output locations.
pub fn materialize_images(workspace: &Path, rel_dir: &str, ds: &Dataset) -> Result<Dataset> {
    let mut out = Vec::with_capacity(ds.len());
    for r in ds.records() {
        let rel = PathBuf::from(rel_dir).join(&r.source_path);
        let abs = workspace.join(&rel);
        if let Some(parent) = abs.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        r.image.save_png(&abs)?;
        let mut rec = r.clone();
        rec.source_path = rel;
        out.push(rec);
    }
    Ok(Dataset::new(out))
}

/// Per-grade count table by provenance, one method per column.
pub fn counts_csv(sections: &[(Provenance, &Dataset)]) -> String {
    let mut text = String::from("grade");
    for (p, _) in sections {
        text.push(',');
        text.push_str(p.table_heading());
    }
    text.push('\n');
    for g in GradeLabel::all() {
        text.push_str(&format!("grade {}", g.value()));
        for (_, ds) in sections {
            text.push_str(&format!(",{}", ds.count_for(g)));
        }
        text.push('\n');
    }
    text.push_str("total");
    for (_, ds) in sections {
        text.push_str(&format!(",{}", ds.len()));
    }
    text.push('\n');
    text
}
