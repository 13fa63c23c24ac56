//! On-disk store directory shared by the pipeline commands and the service.
//!
//! ```text
//! DIR/manifest.json        instances (plus the image root)
//! DIR/spaces/NAME.dsem     one file per latent space
//! DIR/model.json           trained ratio model
//! DIR/scores.csv           active score table
//! DIR/clusters.csv         test-split cluster labels
//! DIR/projection.csv       2D coordinates
//! DIR/artifacts.json       which space the clusters / projection came from
//! DIR/findings.jsonl       analyst findings journal
//! ```

use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterAssignment;
use crate::data::{load_embeddings, write_embeddings, AnalysisStore, LatentSpace, Manifest};
use crate::dre::TrainedModel;
use crate::error::{Error, Result};
use crate::projection::{Projection, ProjectionMethod};
use crate::scoring::ScoreTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterMeta {
    pub n_clusters: usize,
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ArtifactMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<ClusterArtifact>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection: Option<ProjectionArtifact>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterArtifact {
    pub space: String,
    pub n_clusters: usize,
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionArtifact {
    pub method: ProjectionMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<String>,
}

/// Everything read back from a store directory.
#[derive(Debug, Clone)]
pub struct LoadedStore {
    pub store: AnalysisStore,
    pub model: Option<TrainedModel>,
    pub meta: ArtifactMeta,
    pub image_root: PathBuf,
}

/// Held while a command writes into the store; released on drop.
#[derive(Debug)]
pub struct StoreLock {
    _file: File,
}

#[derive(Debug, Clone)]
pub struct StoreDir {
    root: PathBuf,
}

fn check_space_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && !name.starts_with('.')
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "space name {name:?} must be non-empty ASCII letters, digits, '-', '_' or '.'"
        )))
    }
}

impl StoreDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn spaces_dir(&self) -> PathBuf {
        self.root.join("spaces")
    }

    pub fn space_path(&self, name: &str) -> PathBuf {
        self.spaces_dir().join(format!("{name}.dsem"))
    }

    pub fn model_path(&self) -> PathBuf {
        self.root.join("model.json")
    }

    pub fn scores_path(&self) -> PathBuf {
        self.root.join("scores.csv")
    }

    pub fn clusters_path(&self) -> PathBuf {
        self.root.join("clusters.csv")
    }

    pub fn projection_path(&self) -> PathBuf {
        self.root.join("projection.csv")
    }

    pub fn artifacts_path(&self) -> PathBuf {
        self.root.join("artifacts.json")
    }

    pub fn findings_path(&self) -> PathBuf {
        self.root.join("findings.jsonl")
    }

    pub fn lock_path(&self) -> PathBuf {
        self.root.join(".lock")
    }

    /// Takes the advisory writer lock, failing fast if another process holds it.
    pub fn lock(&self) -> Result<StoreLock> {
        std::fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let path = self.lock_path();
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        match file.try_lock() {
            Ok(()) => Ok(StoreLock { _file: file }),
            Err(std::fs::TryLockError::WouldBlock) => Err(Error::StoreLocked(self.root.clone())),
            Err(std::fs::TryLockError::Error(e)) => Err(Error::io(&path, e)),
        }
    }

    /// Copies a manifest into the store (anchoring its image paths at the
    /// source directory) and adds one embedding space. Re-ingesting with the
    /// same instances only adds or replaces the space.
    pub fn ingest(&self, manifest_path: &Path, embeddings_path: &Path, space_name: &str) -> Result<AnalysisStore> {
        check_space_name(space_name)?;
        let mut manifest = Manifest::load(manifest_path)?;
        let source_dir = manifest_path
            .parent()
            .map(|p| if p.as_os_str().is_empty() { Path::new(".") } else { p })
            .unwrap_or(Path::new("."));
        let source_dir = std::fs::canonicalize(source_dir).map_err(|e| Error::io(source_dir, e))?;
        let root = match manifest.image_root.take() {
            Some(r) if Path::new(&r).is_absolute() => PathBuf::from(r),
            Some(r) => source_dir.join(r),
            None => source_dir,
        };
        manifest.image_root = Some(root.to_string_lossy().into_owned());

        let space = load_embeddings(embeddings_path, space_name, manifest.instances.len(), None)?;
        let store = AnalysisStore::new(manifest.instances.clone(), vec![space.clone()])?;

        let existing = self.manifest_path();
        if existing.exists() {
            let current = Manifest::load(&existing)?;
            if current.instances != manifest.instances {
                return Err(Error::Parse(format!(
                    "store {} already holds a different manifest",
                    self.root.display()
                )));
            }
        }
        std::fs::create_dir_all(self.spaces_dir()).map_err(|e| Error::io(self.spaces_dir(), e))?;
        manifest.save(&existing)?;
        self.save_space(&space)?;
        Ok(store)
    }

    pub fn save_space(&self, space: &LatentSpace) -> Result<()> {
        check_space_name(space.name())?;
        std::fs::create_dir_all(self.spaces_dir()).map_err(|e| Error::io(self.spaces_dir(), e))?;
        write_embeddings(self.space_path(space.name()), space)
    }

    pub fn save_model(&self, model: &TrainedModel) -> Result<()> {
        model.save(self.model_path())
    }

    pub fn save_scores(&self, store: &AnalysisStore, scores: &ScoreTable) -> Result<()> {
        scores.save(store, self.scores_path())
    }

    pub fn save_clusters(&self, store: &AnalysisStore, clusters: &ClusterAssignment, top_k: usize) -> Result<()> {
        clusters.save(store, self.clusters_path())?;
        let mut meta = self.read_meta()?;
        meta.clusters = Some(ClusterArtifact {
            space: clusters.space_name.clone(),
            n_clusters: clusters.n_clusters,
            top_k,
        });
        self.write_meta(&meta)
    }

    pub fn save_projection(&self, store: &AnalysisStore, projection: &Projection, space: Option<&str>) -> Result<()> {
        projection.save(store, self.projection_path())?;
        let mut meta = self.read_meta()?;
        meta.projection = Some(ProjectionArtifact {
            method: projection.method,
            space: space.map(str::to_string),
        });
        self.write_meta(&meta)
    }

    fn read_meta(&self) -> Result<ArtifactMeta> {
        let path = self.artifacts_path();
        if !path.exists() {
            return Ok(ArtifactMeta::default());
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("artifacts.json: {e}")))
    }

    fn write_meta(&self, meta: &ArtifactMeta) -> Result<()> {
        let path = self.artifacts_path();
        let mut text = serde_json::to_string_pretty(meta).expect("meta serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Loads the manifest, every space and whichever artifacts exist.
    pub fn open(&self) -> Result<LoadedStore> {
        let manifest_path = self.manifest_path();
        if !manifest_path.exists() {
            return Err(Error::MissingArtifact("manifest.json (run ingest first)"));
        }
        let manifest = Manifest::load(&manifest_path)?;
        let count = manifest.instances.len();
        let mut spaces = Vec::new();
        let dir = self.spaces_dir();
        if dir.exists() {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
                .map_err(|e| Error::io(&dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "dsem"))
                .collect();
            paths.sort();
            for p in paths {
                let name = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                spaces.push(load_embeddings(&p, name, count, None)?);
            }
        }
        let image_root = manifest
            .image_root
            .clone()
            .map(PathBuf::from)
            .unwrap_or_else(|| self.root.clone());
        let mut store = AnalysisStore::new(manifest.instances, spaces)?;
        let meta = self.read_meta()?;

        let model = if self.model_path().exists() {
            Some(TrainedModel::load(self.model_path())?)
        } else {
            None
        };
        if self.scores_path().exists() {
            let scores = ScoreTable::load(&store, self.scores_path())?;
            store = store.with_scores(scores)?;
        }
        if let (Some(c), true) = (&meta.clusters, self.clusters_path().exists()) {
            let clusters = ClusterAssignment::load(&store, &c.space, self.clusters_path())?;
            store = store.with_clusters(clusters);
        }
        if self.projection_path().exists() {
            let method = meta
                .projection
                .as_ref()
                .map_or(ProjectionMethod::External, |p| p.method);
            let projection = Projection::load(&store, self.projection_path(), method)?;
            store = store.with_projection(projection);
        }
        Ok(LoadedStore {
            store,
            model,
            meta,
            image_root,
        })
    }
}
