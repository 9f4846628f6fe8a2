//! Evaluation: CMC ranking curve, mean average precision, Rand / adjusted
//! Rand indices, and pairwise pseudo-label quality.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::tensor::{LabelTable, Partition};
use crate::{Error, Matrix, Result};

/// One retrieval item: original index plus identity and camera ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetrievalItem {
    pub index: usize,
    pub identity: u32,
    pub camera: u32,
}

/// Single-query retrieval protocol. With `camera_filter` on, gallery entries
/// sharing both identity and camera with the query are inadmissible for it.
#[derive(Debug, Clone)]
pub struct RetrievalProtocol {
    pub query: Vec<RetrievalItem>,
    pub gallery: Vec<RetrievalItem>,
    pub camera_filter: bool,
}

/// CMC curve and mAP over the used queries.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    /// `cmc[r-1]` is the fraction of queries whose first correct match
    /// appears at rank `<= r`.
    pub cmc: Vec<f64>,
    pub map: f64,
    pub n_queries_used: usize,
    /// Queries with no admissible positive in the gallery.
    pub excluded_queries: usize,
}

/// Rank the admissible gallery by ascending squared Euclidean distance (ties
/// by gallery position) for every query and accumulate CMC and mAP.
pub fn evaluate_retrieval(
    query_emb: &Matrix,
    gallery_emb: &Matrix,
    protocol: &RetrievalProtocol,
    max_rank: usize,
) -> Result<EvalReport> {
    if protocol.gallery.is_empty() {
        return Err(Error::EmptyGallery);
    }
    if query_emb.rows() != protocol.query.len() {
        return Err(Error::ShapeMismatch {
            context: "query embeddings",
            expected: protocol.query.len(),
            found: query_emb.rows(),
        });
    }
    if gallery_emb.rows() != protocol.gallery.len() {
        return Err(Error::ShapeMismatch {
            context: "gallery embeddings",
            expected: protocol.gallery.len(),
            found: gallery_emb.rows(),
        });
    }
    if query_emb.cols() != gallery_emb.cols() {
        return Err(Error::ShapeMismatch {
            context: "embedding width",
            expected: query_emb.cols(),
            found: gallery_emb.cols(),
        });
    }

    let mut cmc_hits = vec![0u64; max_rank];
    let mut ap_sum = 0.0;
    let mut used = 0usize;
    let mut excluded = 0usize;

    for (qi, q) in protocol.query.iter().enumerate() {
        let qrow = query_emb.row(qi);
        let mut ranked: Vec<(f64, usize)> = Vec::with_capacity(protocol.gallery.len());
        let mut n_positives = 0usize;
        for (gi, g) in protocol.gallery.iter().enumerate() {
            if protocol.camera_filter && g.identity == q.identity && g.camera == q.camera {
                continue;
            }
            if g.identity == q.identity {
                n_positives += 1;
            }
            ranked.push((math::sq_dist(qrow, gallery_emb.row(gi)), gi));
        }
        if n_positives == 0 {
            excluded += 1;
            continue;
        }
        ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

        used += 1;
        let mut correct = 0usize;
        let mut ap = 0.0;
        let mut first_hit: Option<usize> = None;
        for (rank0, &(_, gi)) in ranked.iter().enumerate() {
            if protocol.gallery[gi].identity == q.identity {
                correct += 1;
                ap += correct as f64 / (rank0 + 1) as f64;
                if first_hit.is_none() {
                    first_hit = Some(rank0);
                }
            }
        }
        ap /= n_positives as f64;
        ap_sum += ap;
        if let Some(hit) = first_hit {
            for r in hit..max_rank {
                cmc_hits[r] += 1;
            }
        }
    }

    if used == 0 {
        return Ok(EvalReport {
            cmc: vec![0.0; max_rank],
            map: 0.0,
            n_queries_used: 0,
            excluded_queries: excluded,
        });
    }
    Ok(EvalReport {
        cmc: cmc_hits.iter().map(|&h| h as f64 / used as f64).collect(),
        map: ap_sum / used as f64,
        n_queries_used: used,
        excluded_queries: excluded,
    })
}

/// Per-identity query/gallery split: the first `queries_per_identity` items
/// of each identity (ascending item index) become queries, the rest gallery.
/// At least one item per identity always stays in the gallery.
pub fn split_query_gallery(
    labels: &LabelTable,
    queries_per_identity: usize,
) -> (Vec<usize>, Vec<usize>) {
    let mut by_id: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for row in labels.rows() {
        by_id.entry(row.identity).or_default().push(row.item);
    }
    let mut query = Vec::new();
    let mut gallery = Vec::new();
    for items in by_id.values() {
        let n_query = queries_per_identity.min(items.len().saturating_sub(1));
        query.extend_from_slice(&items[..n_query]);
        gallery.extend_from_slice(&items[n_query..]);
    }
    query.sort_unstable();
    gallery.sort_unstable();
    (query, gallery)
}

fn pairs(n: u64) -> u128 {
    (n as u128) * (n.saturating_sub(1) as u128) / 2
}

struct PairCounts {
    /// Pairs co-clustered in both partitions.
    both: u128,
    /// Pairs co-clustered in the first partition.
    pred: u128,
    /// Pairs co-clustered in the second partition.
    truth: u128,
    /// All unordered pairs.
    total: u128,
}

fn contingency_pair_counts(pred: &Partition, truth: &Partition) -> Result<PairCounts> {
    if pred.n_items() != truth.n_items() {
        return Err(Error::PartitionMismatch {
            left: pred.n_items(),
            right: truth.n_items(),
        });
    }
    let mut cells: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for (a, b) in pred.assignment().iter().zip(truth.assignment().iter()) {
        *cells.entry((*a, *b)).or_insert(0) += 1;
    }
    let both = cells.values().map(|&c| pairs(c)).sum();
    let pred_sizes = pred.cluster_sizes();
    let truth_sizes = truth.cluster_sizes();
    Ok(PairCounts {
        both,
        pred: pred_sizes.iter().map(|&c| pairs(c as u64)).sum(),
        truth: truth_sizes.iter().map(|&c| pairs(c as u64)).sum(),
        total: pairs(pred.n_items() as u64),
    })
}

/// Rand index: the fraction of item pairs on which the two partitions agree
/// (co-clustered in both, or separated in both). Defined as 1 when there are
/// no pairs.
pub fn rand_index(pred: &Partition, truth: &Partition) -> Result<f64> {
    let c = contingency_pair_counts(pred, truth)?;
    if c.total == 0 {
        return Ok(1.0);
    }
    let disagreements = c.pred + c.truth - 2 * c.both;
    let agreements = c.total - disagreements;
    Ok(agreements as f64 / c.total as f64)
}

/// Adjusted Rand index via the contingency-table closed form, computed with
/// exact integer arithmetic up to a single final division.
pub fn adjusted_rand_index(pred: &Partition, truth: &Partition) -> Result<f64> {
    let c = contingency_pair_counts(pred, truth)?;
    if pred.n_items() < 2 {
        return Err(Error::InvalidParameter {
            name: "partitions",
            message: "adjusted Rand index needs at least 2 items".into(),
        });
    }
    // ARI = (index - expected) / (max - expected) with
    //   index = both, expected = pred * truth / total,
    //   max = (pred + truth) / 2.
    // Scaling by 2 * total keeps everything integral.
    let num = 2 * (c.total as i128) * (c.both as i128)
        - 2 * (c.pred as i128) * (c.truth as i128);
    let den = (c.total as i128) * (c.pred as i128 + c.truth as i128)
        - 2 * (c.pred as i128) * (c.truth as i128);
    if den == 0 {
        // Both partitions are all-singletons or both are a single cluster;
        // they can only agree.
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}

/// Pairwise precision and recall of a pseudo-label assignment against the
/// ground truth, over pairs within the pseudo-labeled subset. Precision is
/// absent when no pair is predicted co-labeled; recall is absent when no
/// same-identity pair exists in the subset.
pub fn pairwise_label_quality(
    pseudo_items: &[usize],
    pseudo_labels: &[u32],
    truth: &LabelTable,
) -> Result<(Option<f64>, Option<f64>)> {
    if pseudo_items.len() != pseudo_labels.len() {
        return Err(Error::ShapeMismatch {
            context: "pseudo labels",
            expected: pseudo_items.len(),
            found: pseudo_labels.len(),
        });
    }
    if pseudo_items.is_empty() {
        return Ok((None, None));
    }
    let true_ids: Vec<u32> = pseudo_items
        .iter()
        .map(|&item| {
            truth
                .get(item)
                .map(|r| r.identity)
                .ok_or(Error::ItemOutOfRange {
                    item,
                    n_items: truth.len(),
                })
        })
        .collect::<Result<_>>()?;
    let pred = Partition::from_labels(pseudo_labels);
    let actual = Partition::from_labels(&true_ids);
    let c = contingency_pair_counts(&pred, &actual)?;
    let precision = (c.pred > 0).then(|| c.both as f64 / c.pred as f64);
    let recall = (c.truth > 0).then(|| c.both as f64 / c.truth as f64);
    Ok((precision, recall))
}
