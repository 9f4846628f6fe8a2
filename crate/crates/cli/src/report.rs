//! JSON report documents. Every report embeds the resolved-config hash and
//! no wall-clock data, so report bytes are a deterministic function of the
//! inputs; timing goes to a sidecar log instead.

use std::fs;
use std::path::Path;

use serde::Serialize;

use partcc_core::metrics::EvalReport;
use partcc_core::pseudolabel::IterationReport;

use crate::AppError;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), AppError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| AppError::validation(format!("serializing report: {e}")))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| AppError::io(format!("{}: {e}", path.display())))
}

/// One JSON document per line.
pub fn write_json_lines<T: Serialize>(path: &Path, values: &[T]) -> Result<(), AppError> {
    let mut text = String::new();
    for v in values {
        text.push_str(
            &serde_json::to_string(v)
                .map_err(|e| AppError::validation(format!("serializing report: {e}")))?,
        );
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| AppError::io(format!("{}: {e}", path.display())))
}

#[derive(Debug, Serialize)]
pub struct GenReport {
    pub config_hash: String,
    pub n_items: usize,
    pub n_identities: usize,
    pub n_parts: usize,
    pub dim: usize,
    pub raw_dim: usize,
    pub files: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct ClusterSummary {
    pub config_hash: String,
    pub linkage: String,
    pub distance_threshold: f64,
    pub n_items: usize,
    pub clusters_per_part: Vec<usize>,
    pub partition_files: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct ConsensusReport {
    pub config_hash: String,
    pub n_items: usize,
    pub n_parts: usize,
    pub required_agreement: usize,
    pub distance_threshold: f64,
    pub n_clusters: usize,
    /// Slot `c` counts item pairs co-clustered by exactly `c` partitions.
    pub agreement_histogram: Vec<u64>,
}

#[derive(Debug, Serialize)]
pub struct PseudoLabelReport {
    pub config_hash: String,
    pub n_items: usize,
    pub clusters_per_part: Vec<usize>,
    pub consensus_clusters: usize,
    pub required_agreement: usize,
    pub min_cluster_size: usize,
    pub n_pseudo_labeled: usize,
}

#[derive(Debug, Serialize)]
pub struct TrainReport {
    pub config_hash: String,
    pub n_items: usize,
    pub n_identities: usize,
    pub epochs: usize,
    pub steps: usize,
    /// Mean-reduced losses of the final step; multiply by `batch_size` for
    /// the sum reduction.
    pub final_total: f64,
    pub final_cross_entropy: f64,
    pub final_triplet: f64,
    pub final_part_mixup: f64,
    pub batch_size: usize,
    pub checkpoint: String,
}

#[derive(Debug, Serialize)]
pub struct EvaluateReport {
    pub config_hash: String,
    pub n_query: usize,
    pub n_gallery: usize,
    pub camera_filter: bool,
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    pub rank20: f64,
    pub map: f64,
    pub n_queries_used: usize,
    pub excluded_queries: usize,
    pub cmc: Vec<f64>,
}

impl EvaluateReport {
    pub fn from_eval(
        config_hash: String,
        n_query: usize,
        n_gallery: usize,
        camera_filter: bool,
        report: &EvalReport,
    ) -> Self {
        let at = |r: usize| report.cmc.get(r - 1).copied().unwrap_or(1.0);
        EvaluateReport {
            config_hash,
            n_query,
            n_gallery,
            camera_filter,
            rank1: at(1),
            rank5: at(5),
            rank10: at(10),
            rank20: at(20),
            map: report.map,
            n_queries_used: report.n_queries_used,
            excluded_queries: report.excluded_queries,
            cmc: report.cmc.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct PipelineFinalReport {
    pub config_hash: String,
    pub n_iterations_run: usize,
    pub converged: bool,
    pub n_labeled_items: usize,
    pub n_unlabeled_items: usize,
    pub final_iteration: IterationReport,
}
