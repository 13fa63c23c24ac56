//! JSON bodies. Instances are always referred to by their manifest id.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use shiftscope_core::store::{ClusterArtifact, ProjectionArtifact};
use shiftscope_core::Split;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceInfo {
    pub name: String,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreInfo {
    pub method: String,
    pub space: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub space: String,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub counts: SplitCounts,
    pub spaces: Vec<SpaceInfo>,
    /// Scoring methods with stored results.
    pub methods: Vec<String>,
    pub scores: Option<ScoreInfo>,
    /// Space used by neighbor queries when none is given.
    pub default_space: String,
    pub model: Option<ModelInfo>,
    pub clusters: Option<ClusterArtifact>,
    pub projection: Option<ProjectionArtifact>,
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceItem {
    pub id: String,
    pub split: Split,
    pub suspicion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstancePage {
    pub split: Option<Split>,
    pub sort: String,
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub items: Vec<InstanceItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceScore {
    pub method: String,
    pub space: String,
    pub raw: f64,
    pub ratio: Option<f64>,
    pub suspicion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDetail {
    pub id: String,
    pub split: Split,
    pub image: String,
    pub attributes: Option<BTreeMap<String, u8>>,
    pub score: Option<InstanceScore>,
    pub cluster: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborItem {
    pub id: String,
    pub distance: f64,
    pub suspicion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodPayload {
    pub focus: String,
    pub space: String,
    pub radius: f64,
    pub target: usize,
    pub min: usize,
    pub train: Vec<NeighborItem>,
    pub test: Vec<NeighborItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum SubjectPayload {
    Instance(String),
    Cluster(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinPayload {
    pub lo: f64,
    pub hi: f64,
    /// Descending suspicion.
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramPayload {
    pub subject: SubjectPayload,
    pub space: String,
    pub n_bins: usize,
    /// Highest suspicion interval first.
    pub bins: Vec<BinPayload>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummaryPayload {
    pub cluster_id: usize,
    pub size: usize,
    pub mean_suspicion: f64,
    pub representatives: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterList {
    pub space: String,
    pub n_clusters: usize,
    pub top_k: usize,
    pub clusters: Vec<ClusterSummaryPayload>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointPayload {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FindingRequest {
    pub description: String,
    #[serde(default)]
    pub instance_ids: Option<Vec<String>>,
}

/// One line of the findings journal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub timestamp: String,
    pub description: String,
    pub instance_ids: Vec<String>,
}
