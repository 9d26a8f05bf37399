use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::container::{read_tensor, write_matrix, write_vector};
use crate::error::{Error, Result};
use crate::{Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Public,
    Ood,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Public => "public",
            Split::Ood => "ood",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "public" => Ok(Split::Public),
            "ood" => Ok(Split::Ood),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

/// Which side of an alignment pair a dataset belongs to. The target space is
/// the one the frozen head lives in (model A), the source is mapped into it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Target,
    Source,
}

/// Sequence-level embeddings of one model over one dataset split.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    pub embeddings: Matrix,
    pub labels: Option<Vec<usize>>,
    pub split: Split,
    pub model_id: String,
    pub dataset_id: String,
}

impl EmbeddingDataset {
    pub fn len(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    /// Checks finiteness, label count and (when given) the class bound.
    pub fn validate(&self, n_classes: Option<usize>) -> Result<()> {
        if self.embeddings.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embeddings"));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.len() {
                return Err(Error::DimMismatch(format!(
                    "{} labels for {} samples",
                    labels.len(),
                    self.len()
                )));
            }
            if let Some(k) = n_classes {
                if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
                    return Err(Error::InvalidArgument(format!("label {bad} outside [0, {k})")));
                }
            }
        }
        Ok(())
    }
}

/// One file reference in a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub role: Role,
    pub split: Split,
    pub path: PathBuf,
    pub model_id: String,
    pub dataset_id: String,
    pub checksum: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_checksum: Option<String>,
    /// Digest of the ordered sample identifiers. Paired entries must agree.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_order: Option<String>,
    /// Row count, recorded at write time so pairing can be checked without
    /// loading payloads.
    pub n_samples: usize,
}

/// A set of embedding files. Relative paths resolve against the manifest's
/// own directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    base_dir: PathBuf,
}

/// Hex-encoded SHA-256 of a file's bytes.
pub fn file_checksum(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex_digest(&bytes))
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl DatasetManifest {
    pub fn new(base_dir: impl Into<PathBuf>) -> Self {
        Self {
            entries: Vec::new(),
            base_dir: base_dir.into(),
        }
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate_pairing()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Writes a dataset's tensors next to the manifest and records the entry.
    /// `stem` names the files (`<stem>.tns`, `<stem>.labels.tns`).
    pub fn add_dataset(
        &mut self,
        role: Role,
        stem: &str,
        ds: &EmbeddingDataset,
        sample_order: Option<String>,
    ) -> Result<()> {
        ds.validate(None)?;
        let rel = PathBuf::from(format!("{stem}.tns"));
        let full = self.resolve(&rel);
        write_matrix(&full, &ds.embeddings)?;
        let checksum = file_checksum(&full)?;
        let (labels_path, labels_checksum) = match &ds.labels {
            Some(labels) => {
                let rel = PathBuf::from(format!("{stem}.labels.tns"));
                let full = self.resolve(&rel);
                let v = Vector::from_iterator(labels.len(), labels.iter().map(|&y| y as f64));
                write_vector(&full, &v)?;
                let sum = file_checksum(&full)?;
                (Some(rel), Some(sum))
            }
            None => (None, None),
        };
        self.entries.push(ManifestEntry {
            role,
            split: ds.split,
            path: rel,
            model_id: ds.model_id.clone(),
            dataset_id: ds.dataset_id.clone(),
            checksum,
            labels_path,
            labels_checksum,
            sample_order,
            n_samples: ds.len(),
        });
        self.validate_pairing()
    }

    /// Target and source entries with the same dataset and split must agree
    /// on sample count and (when recorded) sample ordering.
    pub fn validate_pairing(&self) -> Result<()> {
        let mut seen: HashMap<(String, Split, Role), &ManifestEntry> = HashMap::new();
        for e in &self.entries {
            let key = (e.dataset_id.clone(), e.split, e.role);
            if seen.insert(key, e).is_some() {
                return Err(Error::Manifest(format!(
                    "duplicate {:?} entry for dataset {} split {}",
                    e.role, e.dataset_id, e.split
                )));
            }
        }
        for e in self.entries.iter().filter(|e| e.role == Role::Target) {
            let Some(src) = seen.get(&(e.dataset_id.clone(), e.split, Role::Source)) else {
                continue;
            };
            if src.n_samples != e.n_samples {
                return Err(Error::Manifest(format!(
                    "dataset {} split {}: target has {} samples, source has {}",
                    e.dataset_id, e.split, e.n_samples, src.n_samples
                )));
            }
            if let (Some(a), Some(b)) = (&e.sample_order, &src.sample_order) {
                if a != b {
                    return Err(Error::Manifest(format!(
                        "dataset {} split {}: sample ordering differs between target and source",
                        e.dataset_id, e.split
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn find(&self, role: Role, split: Split, dataset_id: Option<&str>) -> Result<&ManifestEntry> {
        let mut hits = self
            .entries
            .iter()
            .filter(|e| e.role == role && e.split == split)
            .filter(|e| dataset_id.is_none_or(|d| e.dataset_id == d));
        let first = hits
            .next()
            .ok_or_else(|| Error::Manifest(format!("no {role:?} entry for split {split}")))?;
        if hits.next().is_some() {
            return Err(Error::Manifest(format!(
                "several {role:?} entries for split {split}; pass a dataset id"
            )));
        }
        Ok(first)
    }

    /// Loads an entry, verifying its checksums.
    pub fn load_entry(&self, entry: &ManifestEntry) -> Result<EmbeddingDataset> {
        let path = self.resolve(&entry.path);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let actual = hex_digest(&bytes);
        if actual != entry.checksum {
            return Err(Error::Checksum {
                path,
                expected: entry.checksum.clone(),
                actual,
            });
        }
        let embeddings = super::container::Tensor::from_bytes(&bytes)?.into_matrix()?;
        if embeddings.nrows() != entry.n_samples {
            return Err(Error::Manifest(format!(
                "{} holds {} rows, manifest says {}",
                path.display(),
                embeddings.nrows(),
                entry.n_samples
            )));
        }
        let labels = match &entry.labels_path {
            Some(lp) => {
                let lpath = self.resolve(lp);
                if let Some(expected) = &entry.labels_checksum {
                    let actual = file_checksum(&lpath)?;
                    if &actual != expected {
                        return Err(Error::Checksum {
                            path: lpath,
                            expected: expected.clone(),
                            actual,
                        });
                    }
                }
                let v = read_tensor(&lpath)?.into_vector()?;
                let labels = v
                    .iter()
                    .map(|&y| {
                        if y >= 0.0 && y.fract() == 0.0 {
                            Ok(y as usize)
                        } else {
                            Err(Error::Malformed(format!("label {y} is not a class index")))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(labels)
            }
            None => None,
        };
        let ds = EmbeddingDataset {
            embeddings,
            labels,
            split: entry.split,
            model_id: entry.model_id.clone(),
            dataset_id: entry.dataset_id.clone(),
        };
        ds.validate(None)?;
        Ok(ds)
    }

    pub fn load_one(&self, role: Role, split: Split, dataset_id: Option<&str>) -> Result<EmbeddingDataset> {
        let e = self.find(role, split, dataset_id)?;
        self.load_entry(e)
    }

    /// Loads the (target, source) pair for a split.
    pub fn load_pair(&self, split: Split, dataset_id: Option<&str>) -> Result<(EmbeddingDataset, EmbeddingDataset)> {
        let t = self.find(Role::Target, split, dataset_id)?;
        let s = self.find(Role::Source, split, Some(&t.dataset_id))?;
        Ok((self.load_entry(t)?, self.load_entry(s)?))
    }
}
