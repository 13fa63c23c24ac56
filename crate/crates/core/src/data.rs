//! Instance manifests, embedding matrices and the immutable analysis store.
//!
//! Every artifact in the engine indexes instances by their position in the
//! manifest. Latent spaces are dense row-major `f32` matrices whose row `i`
//! belongs to manifest entry `i`.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterAssignment;
use crate::error::{Error, Result};
use crate::projection::Projection;
use crate::scoring::ScoreTable;

/// Magic bytes opening every `.dsem` embedding file.
pub const DSEM_MAGIC: &[u8; 4] = b"DSEM";
/// The only embedding file version understood by this crate.
pub const DSEM_VERSION: u32 = 1;
const DSEM_HEADER_LEN: usize = 4 + 4 + 8 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Parse(format!("unknown split {other:?}"))),
        }
    }
}

/// One image of either collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub split: Split,
    #[serde(rename = "image")]
    pub image_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<BTreeMap<String, u8>>,
}

/// On-disk manifest layout. `image_root` is optional and tells the service
/// where relative image paths are anchored.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_root: Option<String>,
    pub instances: Vec<InstanceRecord>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let manifest: Manifest =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("manifest: {e}")))?;
        validate_records(&manifest.instances)?;
        Ok(manifest)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Parse(format!("manifest: {e}")))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Reads a manifest file and returns its records in file order.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<InstanceRecord>> {
    Manifest::load(path).map(|m| m.instances)
}

fn validate_records(records: &[InstanceRecord]) -> Result<()> {
    let mut seen = HashMap::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        if seen.insert(rec.id.as_str(), i).is_some() {
            return Err(Error::DuplicateId(rec.id.clone()));
        }
        if let Some(attrs) = &rec.attributes {
            if let Some((name, v)) = attrs.iter().find(|(_, v)| **v > 1) {
                return Err(Error::Parse(format!(
                    "attribute {name:?} of {:?} must be 0 or 1, got {v}",
                    rec.id
                )));
            }
        }
    }
    let first = records.first().map(|r| &r.attributes);
    if let Some(first) = first {
        for rec in records {
            let same = match (first, &rec.attributes) {
                (None, None) => true,
                (Some(a), Some(b)) => a.len() == b.len() && a.keys().eq(b.keys()),
                _ => false,
            };
            if !same {
                return Err(Error::AttributeSchemaMismatch { id: rec.id.clone() });
            }
        }
    }
    Ok(())
}

/// A named embedding matrix, one row per manifest instance.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSpace {
    name: String,
    dim: usize,
    data: Vec<f32>,
}

impl LatentSpace {
    /// Builds a space from row-major values. `data.len()` must be a multiple of `dim`.
    pub fn new(name: impl Into<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dim must be positive".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: data.len() % dim,
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Self {
            name: name.into(),
            dim,
            data,
        })
    }

    pub fn from_rows(name: impl Into<String>, rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        Self::new(name, dim, rows.concat())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Reads a DSEM stream.
    pub fn read_from(
        name: impl Into<String>,
        mut reader: impl Read,
        expected_count: usize,
        expected_dim: Option<usize>,
    ) -> Result<Self> {
        let io = |e| Error::Parse(format!("embedding stream: {e}"));
        let mut header = [0u8; DSEM_HEADER_LEN];
        reader.read_exact(&mut header).map_err(io)?;
        if &header[0..4] != DSEM_MAGIC {
            return Err(Error::BadMagic);
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != DSEM_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let count = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(header[16..20].try_into().unwrap()) as usize;
        if count != expected_count {
            return Err(Error::CountMismatch {
                expected: expected_count,
                found: count,
            });
        }
        if let Some(expected) = expected_dim {
            if expected != dim {
                return Err(Error::DimensionMismatch {
                    expected,
                    found: dim,
                });
            }
        }
        let n_values = count
            .checked_mul(dim)
            .ok_or_else(|| Error::Parse("embedding header overflows".into()))?;
        let mut bytes = vec![0u8; n_values * 4];
        reader.read_exact(&mut bytes).map_err(io)?;
        let mut trailing = [0u8; 1];
        if reader.read(&mut trailing).map_err(io)? != 0 {
            return Err(Error::Parse("trailing bytes after embedding payload".into()));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(name, dim, data)
    }

    pub fn write_to(&self, mut writer: impl Write) -> std::io::Result<()> {
        writer.write_all(DSEM_MAGIC)?;
        writer.write_all(&DSEM_VERSION.to_le_bytes())?;
        writer.write_all(&(self.len() as u64).to_le_bytes())?;
        writer.write_all(&(self.dim as u32).to_le_bytes())?;
        for v in &self.data {
            writer.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

/// Loads a `.dsem` file; the header count must equal `expected_count`.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    name: impl Into<String>,
    expected_count: usize,
    expected_dim: Option<usize>,
) -> Result<LatentSpace> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    LatentSpace::read_from(name, BufReader::new(file), expected_count, expected_dim)
}

pub fn write_embeddings(path: impl AsRef<Path>, space: &LatentSpace) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    space
        .write_to(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Instances plus everything computed about them.
///
/// Built once, then only extended with derived artifacts through the
/// consuming `with_*` methods. Instance positions never change.
#[derive(Debug, Clone)]
pub struct AnalysisStore {
    instances: Vec<InstanceRecord>,
    index: HashMap<String, usize>,
    spaces: BTreeMap<String, LatentSpace>,
    train: Vec<usize>,
    test: Vec<usize>,
    pub scores: Option<ScoreTable>,
    pub clusters: Option<ClusterAssignment>,
    pub projection: Option<Projection>,
}

/// Assembles a store, checking that every space has one row per record.
pub fn build_store(records: Vec<InstanceRecord>, spaces: Vec<LatentSpace>) -> Result<AnalysisStore> {
    AnalysisStore::new(records, spaces)
}

impl AnalysisStore {
    pub fn new(records: Vec<InstanceRecord>, spaces: Vec<LatentSpace>) -> Result<Self> {
        validate_records(&records)?;
        let mut map = BTreeMap::new();
        for space in spaces {
            if space.len() != records.len() {
                return Err(Error::RowCountMismatch {
                    space: space.name().to_string(),
                    expected: records.len(),
                    found: space.len(),
                });
            }
            map.insert(space.name().to_string(), space);
        }
        let index = records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.clone(), i))
            .collect();
        let (train, test) = (0..records.len()).partition(|&i| records[i].split == Split::Train);
        Ok(Self {
            instances: records,
            index,
            spaces: map,
            train,
            test,
            scores: None,
            clusters: None,
            projection: None,
        })
    }

    pub fn instances(&self) -> &[InstanceRecord] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instance(&self, index: usize) -> &InstanceRecord {
        &self.instances[index]
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownInstance(id.to_string()))
    }

    pub fn split_of(&self, index: usize) -> Split {
        self.instances[index].split
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train
    }

    pub fn test_indices(&self) -> &[usize] {
        &self.test
    }

    pub fn indices_of(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    /// Fails with `SplitEmpty` unless both splits have members.
    pub fn require_both_splits(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::SplitEmpty("train"));
        }
        if self.test.is_empty() {
            return Err(Error::SplitEmpty("test"));
        }
        Ok(())
    }

    pub fn space(&self, name: &str) -> Result<&LatentSpace> {
        self.spaces
            .get(name)
            .ok_or_else(|| Error::UnknownSpace(name.to_string()))
    }

    pub fn spaces(&self) -> impl Iterator<Item = &LatentSpace> {
        self.spaces.values()
    }

    pub fn has_attributes(&self) -> bool {
        self.instances
            .first()
            .is_some_and(|r| r.attributes.as_ref().is_some_and(|a| !a.is_empty()))
    }

    /// Adds (or replaces) a derived space such as the ratio model's hidden activations.
    pub fn with_space(mut self, space: LatentSpace) -> Result<Self> {
        if space.len() != self.len() {
            return Err(Error::RowCountMismatch {
                space: space.name().to_string(),
                expected: self.len(),
                found: space.len(),
            });
        }
        self.spaces.insert(space.name().to_string(), space);
        Ok(self)
    }

    pub fn with_scores(mut self, scores: ScoreTable) -> Result<Self> {
        if scores.len() != self.len() {
            return Err(Error::ScoreCoverageGap(scores.len().min(self.len())));
        }
        self.scores = Some(scores);
        Ok(self)
    }

    pub fn with_clusters(mut self, clusters: ClusterAssignment) -> Self {
        self.clusters = Some(clusters);
        self
    }

    pub fn with_projection(mut self, projection: Projection) -> Self {
        self.projection = Some(projection);
        self
    }
}
