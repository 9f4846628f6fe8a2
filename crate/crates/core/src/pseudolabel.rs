//! The pseudo-labeling outer loop: per-iteration model re-initialization,
//! training on labeled plus pseudo-labeled data, per-part clustering,
//! consensus, and rebuilding of the pseudo-labeled subset behind a
//! minimum-cluster-size filter.

use alloc::vec;
use alloc::vec::Vec;

use crate::cluster::{cluster_parts, AgglomerativeConfig};
use crate::consensus::{co_association, consensus_partition_with, AgreementLevel, ConsensusLinkage};
use crate::embedder::{forward, train, EmbedderParams, TrainerConfig};
use crate::metrics::{evaluate_retrieval, pairwise_label_quality, split_query_gallery, RetrievalItem, RetrievalProtocol};
use crate::rng::derive_seed;
use crate::tensor::{LabelTable, Partition};
use crate::{Error, Matrix, Result};

const ITER_TAG: u64 = 0x6974_6572;
const TRAIN_TAG: u64 = 0x7472_6169;

/// The evolving labeled / unlabeled / pseudo-labeled subsets.
///
/// Labeled and unlabeled item sets are disjoint; the pseudo-labeled subset is
/// always a subset of the unlabeled items, and pseudo-identity ids live in a
/// namespace offset past every true labeled identity.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitState {
    labeled: Vec<(usize, u32)>,
    unlabeled: Vec<usize>,
    pseudo_labeled: Vec<(usize, u32)>,
    iteration: usize,
    pseudo_base: u32,
}

impl SplitState {
    pub fn new(mut labeled: Vec<(usize, u32)>, mut unlabeled: Vec<usize>) -> Result<Self> {
        labeled.sort_by_key(|&(item, _)| item);
        unlabeled.sort_unstable();
        for w in labeled.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::DuplicateItem { item: w[0].0 });
            }
        }
        for w in unlabeled.windows(2) {
            if w[0] == w[1] {
                return Err(Error::DuplicateItem { item: w[0] });
            }
        }
        if let Some(&(item, _)) = labeled
            .iter()
            .find(|&&(item, _)| unlabeled.binary_search(&item).is_ok())
        {
            return Err(Error::InvalidParameter {
                name: "split",
                message: alloc::format!("item {item} is both labeled and unlabeled"),
            });
        }
        let pseudo_base = labeled.iter().map(|&(_, id)| id + 1).max().unwrap_or(0);
        Ok(SplitState {
            labeled,
            unlabeled,
            pseudo_labeled: Vec::new(),
            iteration: 0,
            pseudo_base,
        })
    }

    pub fn labeled(&self) -> &[(usize, u32)] {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &[usize] {
        &self.unlabeled
    }

    pub fn pseudo_labeled(&self) -> &[(usize, u32)] {
        &self.pseudo_labeled
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// First id of the pseudo-identity namespace.
    pub fn pseudo_base(&self) -> u32 {
        self.pseudo_base
    }

    /// Discard the current pseudo-labeled subset and install a new one;
    /// advances the iteration counter.
    pub fn replace_pseudo(&self, mut pseudo: Vec<(usize, u32)>) -> Result<Self> {
        pseudo.sort_by_key(|&(item, _)| item);
        for &(item, id) in &pseudo {
            if self.unlabeled.binary_search(&item).is_err() {
                return Err(Error::InvalidParameter {
                    name: "pseudo_labeled",
                    message: alloc::format!("item {item} is not in the unlabeled subset"),
                });
            }
            if id < self.pseudo_base {
                return Err(Error::InvalidParameter {
                    name: "pseudo_labeled",
                    message: alloc::format!(
                        "pseudo id {id} collides with the labeled identity namespace"
                    ),
                });
            }
        }
        Ok(SplitState {
            labeled: self.labeled.clone(),
            unlabeled: self.unlabeled.clone(),
            pseudo_labeled: pseudo,
            iteration: self.iteration + 1,
            pseudo_base: self.pseudo_base,
        })
    }

    /// Labeled instances grouped by identity, ascending ids.
    pub fn labeled_by_identity(&self) -> Vec<(u32, Vec<usize>)> {
        group_by_identity(&self.labeled)
    }

    /// Pseudo-labeled instances grouped by pseudo identity, ascending ids.
    pub fn pseudo_by_identity(&self) -> Vec<(u32, Vec<usize>)> {
        group_by_identity(&self.pseudo_labeled)
    }
}

fn group_by_identity(rows: &[(usize, u32)]) -> Vec<(u32, Vec<usize>)> {
    let mut map: alloc::collections::BTreeMap<u32, Vec<usize>> = alloc::collections::BTreeMap::new();
    for &(item, id) in rows {
        map.entry(id).or_default().push(item);
    }
    map.into_iter().collect()
}

/// Pipeline hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Minimum consensus-cluster size for its members to be pseudo-labeled.
    pub min_cluster_size: usize,
    pub n_iterations: usize,
    /// Required agreeing parts for a consensus merge; `None` means all parts.
    pub agreement: Option<usize>,
    pub consensus_linkage: ConsensusLinkage,
    pub cluster: AgglomerativeConfig,
    pub trainer: TrainerConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            min_cluster_size: 5,
            n_iterations: 5,
            agreement: None,
            consensus_linkage: ConsensusLinkage::Average,
            cluster: AgglomerativeConfig::default(),
            trainer: TrainerConfig::default(),
            seed: 0,
        }
    }
}

/// Retrieval metrics at the standard reporting ranks.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RetrievalSummary {
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    pub rank20: f64,
    pub map: f64,
}

/// What one pseudo-labeling iteration did.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IterationReport {
    pub iteration: usize,
    pub clusters_per_part: Vec<usize>,
    pub consensus_clusters: usize,
    pub n_pseudo_labeled: usize,
    pub pseudo_precision: Option<f64>,
    pub pseudo_recall: Option<f64>,
    pub eval: Option<RetrievalSummary>,
}

/// Held-out evaluation input: features plus labels whose item indices are
/// feature row indices.
#[derive(Debug, Clone, Copy)]
pub struct EvalData<'a> {
    pub features: &'a Matrix,
    pub labels: &'a LabelTable,
    pub camera_filter: bool,
    pub queries_per_identity: usize,
}

/// Everything an iteration consumes. Ground-truth identities of the
/// unlabeled subset ride along in `truth` for reporting only; the training
/// path never sees them.
#[derive(Debug, Clone, Copy)]
pub struct PipelineData<'a> {
    /// `n_items x raw_dim` input features of the training pool.
    pub features: &'a Matrix,
    pub n_parts: usize,
    pub dim: usize,
    pub truth: Option<&'a LabelTable>,
    pub eval: Option<EvalData<'a>>,
}

/// Keep exactly the items whose cluster has at least `min_size` members.
/// Surviving clusters are relabeled densely in order of first appearance.
/// Returns parallel vectors of item positions and pseudo ids.
pub fn filter_clusters(partition: &Partition, min_size: usize) -> Result<(Vec<usize>, Vec<u32>)> {
    if min_size == 0 {
        return Err(Error::InvalidParameter {
            name: "min_cluster_size",
            message: "must be >= 1".into(),
        });
    }
    let sizes = partition.cluster_sizes();
    let mut relabel: Vec<Option<u32>> = vec![None; partition.n_clusters()];
    let mut next = 0u32;
    let mut positions = Vec::new();
    let mut ids = Vec::new();
    for (pos, &cluster) in partition.assignment().iter().enumerate() {
        if sizes[cluster] < min_size {
            continue;
        }
        let id = *relabel[cluster].get_or_insert_with(|| {
            let id = next;
            next += 1;
            id
        });
        positions.push(pos);
        ids.push(id);
    }
    Ok((positions, ids))
}

fn eval_model(params: &EmbedderParams, eval: &EvalData<'_>) -> Result<RetrievalSummary> {
    let tensor = forward(params, eval.features)?;
    let concat = tensor.concat_parts();
    let (query_items, gallery_items) = split_query_gallery(eval.labels, eval.queries_per_identity);
    let item_of = |item: usize| -> Result<RetrievalItem> {
        let row = eval.labels.get(item).ok_or(Error::ItemOutOfRange {
            item,
            n_items: eval.labels.len(),
        })?;
        Ok(RetrievalItem {
            index: row.item,
            identity: row.identity,
            camera: row.camera,
        })
    };
    let protocol = RetrievalProtocol {
        query: query_items.iter().map(|&i| item_of(i)).collect::<Result<_>>()?,
        gallery: gallery_items.iter().map(|&i| item_of(i)).collect::<Result<_>>()?,
        camera_filter: eval.camera_filter,
    };
    let query_emb = concat.gather_rows(&query_items);
    let gallery_emb = concat.gather_rows(&gallery_items);
    let report = evaluate_retrieval(&query_emb, &gallery_emb, &protocol, 20)?;
    Ok(RetrievalSummary {
        rank1: report.cmc[0],
        rank5: report.cmc[4],
        rank10: report.cmc[9],
        rank20: report.cmc[19],
        map: report.map,
    })
}

/// One pass of the outer loop: re-initialize, train, embed the unlabeled
/// subset, cluster per part, build the consensus, and rebuild the
/// pseudo-labeled subset from the size filter.
pub fn run_iteration(
    state: &SplitState,
    data: &PipelineData<'_>,
    config: &PipelineConfig,
) -> Result<(EmbedderParams, SplitState, IterationReport)> {
    let iter = state.iteration() as u64;
    let init_seed = derive_seed(config.seed, &[ITER_TAG, iter]);
    let params = EmbedderParams::init(data.n_parts, data.features.cols(), data.dim, init_seed);
    let mut trainer = config.trainer.clone();
    trainer.seed = derive_seed(config.seed, &[TRAIN_TAG, iter]);
    let trained = train(params, state, data.features, &trainer)?;

    let unlabeled_features = data.features.gather_rows(state.unlabeled());
    let embeddings = forward(&trained, &unlabeled_features)?;
    let parts = cluster_parts(&embeddings, &config.cluster)?;
    let matrix = co_association(&parts)?;
    let level = AgreementLevel::new(config.agreement.unwrap_or(data.n_parts))?;
    let consensus = consensus_partition_with(&matrix, level, config.consensus_linkage)?;
    let (positions, ids) = filter_clusters(&consensus, config.min_cluster_size)?;

    let pseudo: Vec<(usize, u32)> = positions
        .iter()
        .zip(ids.iter())
        .map(|(&pos, &id)| (state.unlabeled()[pos], state.pseudo_base() + id))
        .collect();
    let next = state.replace_pseudo(pseudo)?;

    let (pseudo_precision, pseudo_recall) = match data.truth {
        Some(truth) => {
            let items: Vec<usize> = next.pseudo_labeled().iter().map(|&(i, _)| i).collect();
            let labels: Vec<u32> = next.pseudo_labeled().iter().map(|&(_, l)| l).collect();
            pairwise_label_quality(&items, &labels, truth)?
        }
        None => (None, None),
    };
    let eval = match &data.eval {
        Some(e) => Some(eval_model(&trained, e)?),
        None => None,
    };

    let report = IterationReport {
        iteration: state.iteration() + 1,
        clusters_per_part: parts.iter().map(|p| p.n_clusters()).collect(),
        consensus_clusters: consensus.n_clusters(),
        n_pseudo_labeled: next.pseudo_labeled().len(),
        pseudo_precision,
        pseudo_recall,
        eval,
    };
    Ok((trained, next, report))
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub params: EmbedderParams,
    pub reports: Vec<IterationReport>,
    /// True when the loop exited because the pseudo-label assignment was
    /// identical two iterations in a row.
    pub converged: bool,
}

/// Run the outer loop for up to `n_iterations`, stopping early on
/// convergence of the pseudo-label assignment.
pub fn run_pipeline(
    data: &PipelineData<'_>,
    split: SplitState,
    config: &PipelineConfig,
) -> Result<PipelineOutcome> {
    if config.n_iterations == 0 {
        return Err(Error::InvalidParameter {
            name: "n_iterations",
            message: "must be >= 1".into(),
        });
    }
    let mut state = split;
    let mut reports = Vec::with_capacity(config.n_iterations);
    let mut params = None;
    let mut converged = false;
    for _ in 0..config.n_iterations {
        let previous_pseudo = state.pseudo_labeled().to_vec();
        let (p, next, report) = run_iteration(&state, data, config)?;
        params = Some(p);
        let stop = state.iteration() >= 1 && previous_pseudo == next.pseudo_labeled();
        reports.push(report);
        state = next;
        if stop {
            converged = true;
            break;
        }
    }
    Ok(PipelineOutcome {
        params: params.expect("at least one iteration"),
        reports,
        converged,
    })
}

/// Train once on the labeled subset only (the unlabeled pool is ignored
/// entirely) with the same initialization and trainer as pipeline iteration
/// one, and evaluate if evaluation data is present.
pub fn run_supervised_baseline(
    data: &PipelineData<'_>,
    split: &SplitState,
    config: &PipelineConfig,
) -> Result<(EmbedderParams, Option<RetrievalSummary>)> {
    let baseline_split = SplitState::new(split.labeled().to_vec(), Vec::new())?;
    let init_seed = derive_seed(config.seed, &[ITER_TAG, 0]);
    let params = EmbedderParams::init(data.n_parts, data.features.cols(), data.dim, init_seed);
    let mut trainer = config.trainer.clone();
    trainer.seed = derive_seed(config.seed, &[TRAIN_TAG, 0]);
    let trained = train(params, &baseline_split, data.features, &trainer)?;
    let eval = match &data.eval {
        Some(e) => Some(eval_model(&trained, e)?),
        None => None,
    };
    Ok((trained, eval))
}
