//! Metric-learning loss stack: cross-entropy, batch-hard triplet loss,
//! part-mixup loss, and their weighted combination. Every loss returns its
//! value together with the exact analytic gradient.
//!
//! Distances are squared Euclidean over the concatenation of part
//! embeddings, which decomposes as a sum over parts. All per-part sums are
//! accumulated in ascending part order, so a distance computed over a subset
//! of parts can never exceed the distance over a superset, even in floating
//! point.

use alloc::vec::Vec;

use crate::math;
use crate::rng::{derive_seed, Rng};
use crate::tensor::PartEmbeddingTensor;
use crate::{Error, Matrix, Result};

const MIX_TAG: u64 = 0x6d69_78;

/// Weights of the total loss plus the shared triplet / part-mixup margin.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossWeights {
    pub cross_entropy: f64,
    pub triplet: f64,
    pub part_mixup: f64,
    pub margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            cross_entropy: 1.0,
            triplet: 1.0,
            part_mixup: 1.0,
            margin: 0.3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("cross_entropy weight", self.cross_entropy),
            ("triplet weight", self.triplet),
            ("part_mixup weight", self.part_mixup),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter {
                    name: "loss weights",
                    message: alloc::format!("{name} must be a nonnegative finite real"),
                });
            }
        }
        if !(self.margin > 0.0) || !self.margin.is_finite() {
            return Err(Error::InvalidParameter {
                name: "margin",
                message: "must be a positive finite real".into(),
            });
        }
        Ok(())
    }
}

/// A batch of part-embedding rows with identity labels.
///
/// `item_ids` are stable per-sample identifiers (dataset item indices); the
/// part-mixup replace sets are keyed off them, so losses are invariant under
/// batch reordering.
#[derive(Debug, Clone)]
pub struct EmbeddingBatch {
    embeddings: Matrix,
    n_parts: usize,
    dim: usize,
    labels: Vec<u32>,
    item_ids: Vec<u64>,
}

impl EmbeddingBatch {
    pub fn new(
        embeddings: Matrix,
        n_parts: usize,
        dim: usize,
        labels: Vec<u32>,
        item_ids: Vec<u64>,
    ) -> Result<Self> {
        if embeddings.cols() != n_parts * dim {
            return Err(Error::ShapeMismatch {
                context: "batch row width",
                expected: n_parts * dim,
                found: embeddings.cols(),
            });
        }
        if labels.len() != embeddings.rows() {
            return Err(Error::ShapeMismatch {
                context: "batch labels",
                expected: embeddings.rows(),
                found: labels.len(),
            });
        }
        if item_ids.len() != embeddings.rows() {
            return Err(Error::ShapeMismatch {
                context: "batch item ids",
                expected: embeddings.rows(),
                found: item_ids.len(),
            });
        }
        Ok(EmbeddingBatch {
            embeddings,
            n_parts,
            dim,
            labels,
            item_ids,
        })
    }

    pub fn from_tensor(
        tensor: &PartEmbeddingTensor,
        labels: Vec<u32>,
        item_ids: Vec<u64>,
    ) -> Result<Self> {
        EmbeddingBatch::new(
            tensor.concat_parts(),
            tensor.n_parts(),
            tensor.dim(),
            labels,
            item_ids,
        )
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn n_parts(&self) -> usize {
        self.n_parts
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn item_ids(&self) -> &[u64] {
        &self.item_ids
    }

    /// Check the mining preconditions: at least two identities, each with at
    /// least two instances.
    fn check_mining(&self) -> Result<()> {
        let mut distinct: Vec<u32> = self.labels.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(Error::TooFewIdentities {
                found: distinct.len(),
            });
        }
        for &label in &distinct {
            if self.labels.iter().filter(|&&l| l == label).count() < 2 {
                return Err(Error::SingletonIdentity { label });
            }
        }
        Ok(())
    }
}

/// Squared Euclidean distance between two part-embedding rows, accumulated
/// in part order.
pub fn pairwise_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            context: "pairwise distance rows",
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(math::sq_dist(a, b))
}

/// Batch-hard triplet loss (mean over anchors) with its gradient with
/// respect to the embeddings.
pub fn triplet_batch_hard(batch: &EmbeddingBatch, margin: f64) -> Result<(f64, Matrix)> {
    let (terms, picks) = triplet_batch_hard_mined(batch, margin)?;
    let b = batch.len();
    let mut grad = Matrix::zeros(b, batch.embeddings.cols());
    let mut loss = 0.0;
    let inv = 1.0 / b as f64;
    for (a, term) in terms.iter().enumerate() {
        if *term > 0.0 {
            loss += term;
            let (pos, neg) = picks[a];
            accumulate_pair_grad(&mut grad, &batch.embeddings, a, pos, inv);
            accumulate_pair_grad(&mut grad, &batch.embeddings, a, neg, -inv);
        }
    }
    Ok((loss * inv, grad))
}

/// Pre-hinge batch-hard terms per anchor: `margin + max_pos - min_neg`.
pub fn triplet_prehinge_terms(batch: &EmbeddingBatch, margin: f64) -> Result<Vec<f64>> {
    let (terms, _) = triplet_batch_hard_mined(batch, margin)?;
    Ok(terms)
}

/// Per-anchor pre-hinge terms and the chosen (hardest positive, hardest
/// negative) indices. Ties break to the lowest batch index.
fn triplet_batch_hard_mined(
    batch: &EmbeddingBatch,
    margin: f64,
) -> Result<(Vec<f64>, Vec<(usize, usize)>)> {
    batch.check_mining()?;
    let b = batch.len();
    let mut terms = Vec::with_capacity(b);
    let mut picks = Vec::with_capacity(b);
    for a in 0..b {
        let row_a = batch.embeddings.row(a);
        let mut max_pos = f64::NEG_INFINITY;
        let mut pos_idx = usize::MAX;
        let mut min_neg = f64::INFINITY;
        let mut neg_idx = usize::MAX;
        for j in 0..b {
            if j == a {
                continue;
            }
            let d = math::sq_dist(row_a, batch.embeddings.row(j));
            if batch.labels[j] == batch.labels[a] {
                if d > max_pos {
                    max_pos = d;
                    pos_idx = j;
                }
            } else if d < min_neg {
                min_neg = d;
                neg_idx = j;
            }
        }
        terms.push(margin + max_pos - min_neg);
        picks.push((pos_idx, neg_idx));
    }
    Ok((terms, picks))
}

/// Add `scale * d(D(a, other))/d(embeddings)` for the squared distance
/// between rows `a` and `other`.
fn accumulate_pair_grad(grad: &mut Matrix, emb: &Matrix, a: usize, other: usize, scale: f64) {
    let width = emb.cols();
    for c in 0..width {
        let diff = emb.row(a)[c] - emb.row(other)[c];
        grad.row_mut(a)[c] += scale * 2.0 * diff;
        grad.row_mut(other)[c] -= scale * 2.0 * diff;
    }
}

/// Part-mixup sampling parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MixSpec {
    /// Maximum number of parts replaced in a mixed negative (at least one
    /// part is always replaced, so a mixed sample is never a positive).
    pub max_replaced: usize,
    /// Root seed of the per-pair replace-set streams.
    pub seed: u64,
    /// Force this replace set for every pair instead of sampling. Intended
    /// for calibration against the plain triplet loss.
    pub forced_replace: Option<Vec<usize>>,
    /// Apply the hinge `max(0, .)`. Disabling reproduces the unclamped sum.
    pub apply_hinge: bool,
}

impl MixSpec {
    pub fn new(max_replaced: usize, seed: u64) -> Self {
        MixSpec {
            max_replaced,
            seed,
            forced_replace: None,
            apply_hinge: true,
        }
    }

    fn validate(&self, n_parts: usize) -> Result<()> {
        if self.max_replaced == 0 || self.max_replaced > n_parts {
            return Err(Error::InvalidParameter {
                name: "max_replaced",
                message: alloc::format!("must be in 1..={n_parts}"),
            });
        }
        if let Some(set) = &self.forced_replace {
            if set.is_empty() || set.iter().any(|&q| q >= n_parts) {
                return Err(Error::InvalidParameter {
                    name: "forced_replace",
                    message: alloc::format!("part indices must be a nonempty subset of 0..{n_parts}"),
                });
            }
        }
        Ok(())
    }

    /// Replace set for the (anchor, donor) pair, ascending part order.
    fn replace_set(&self, n_parts: usize, anchor_id: u64, donor_id: u64) -> Vec<usize> {
        if let Some(set) = &self.forced_replace {
            let mut s = set.clone();
            s.sort_unstable();
            s.dedup();
            return s;
        }
        let mut rng = Rng::new(derive_seed(self.seed, &[MIX_TAG, anchor_id, donor_id]));
        let r = 1 + rng.next_range(self.max_replaced);
        let mut set = rng.sample_distinct(n_parts, r);
        set.sort_unstable();
        set
    }
}

/// Replace the parts listed in `replace` with the donor's; all indices are
/// zero-based part indices.
pub fn mix_parts(
    anchor: &[f64],
    donor: &[f64],
    n_parts: usize,
    dim: usize,
    replace: &[usize],
) -> Result<Vec<f64>> {
    if anchor.len() != n_parts * dim || donor.len() != n_parts * dim {
        return Err(Error::ShapeMismatch {
            context: "mix_parts rows",
            expected: n_parts * dim,
            found: anchor.len().max(donor.len()),
        });
    }
    if let Some(&q) = replace.iter().find(|&&q| q >= n_parts) {
        return Err(Error::InvalidParameter {
            name: "replace",
            message: alloc::format!("part index {q} out of range for {n_parts} parts"),
        });
    }
    let mut out = anchor.to_vec();
    for &q in replace {
        out[q * dim..(q + 1) * dim].copy_from_slice(&donor[q * dim..(q + 1) * dim]);
    }
    Ok(out)
}

/// Part-mixup loss (mean over anchors) with its gradient with respect to the
/// embeddings. For every anchor, one mixed negative is built from each batch
/// sample of a different identity; the loss hinges the gap between the
/// furthest positive and the closest mixed negative.
pub fn part_mixup_loss(
    batch: &EmbeddingBatch,
    margin: f64,
    spec: &MixSpec,
) -> Result<(f64, Matrix)> {
    let mined = part_mixup_mined(batch, margin, spec)?;
    let b = batch.len();
    let dim = batch.dim;
    let mut grad = Matrix::zeros(b, batch.embeddings.cols());
    let mut loss = 0.0;
    let inv = 1.0 / b as f64;
    for m in &mined {
        let active = if spec.apply_hinge { m.term > 0.0 } else { true };
        loss += if spec.apply_hinge {
            m.term.max(0.0)
        } else {
            m.term
        };
        if !active {
            continue;
        }
        accumulate_pair_grad(&mut grad, &batch.embeddings, m.anchor, m.pos, inv);
        // The mixed-negative distance only involves the replaced parts:
        // d = sum_{q in S} ||anchor_q - donor_q||^2.
        for &q in &m.replace_set {
            for c in q * dim..(q + 1) * dim {
                let diff = batch.embeddings.row(m.anchor)[c] - batch.embeddings.row(m.donor)[c];
                grad.row_mut(m.anchor)[c] -= inv * 2.0 * diff;
                grad.row_mut(m.donor)[c] += inv * 2.0 * diff;
            }
        }
    }
    Ok((loss * inv, grad))
}

/// Pre-hinge part-mixup terms per anchor.
pub fn part_mixup_prehinge_terms(
    batch: &EmbeddingBatch,
    margin: f64,
    spec: &MixSpec,
) -> Result<Vec<f64>> {
    Ok(part_mixup_mined(batch, margin, spec)?
        .iter()
        .map(|m| m.term)
        .collect())
}

struct MixMined {
    anchor: usize,
    pos: usize,
    donor: usize,
    replace_set: Vec<usize>,
    term: f64,
}

fn part_mixup_mined(
    batch: &EmbeddingBatch,
    margin: f64,
    spec: &MixSpec,
) -> Result<Vec<MixMined>> {
    batch.check_mining()?;
    spec.validate(batch.n_parts)?;
    let b = batch.len();
    let dim = batch.dim;
    let mut mined = Vec::with_capacity(b);
    for a in 0..b {
        let row_a = batch.embeddings.row(a);
        let mut max_pos = f64::NEG_INFINITY;
        let mut pos_idx = usize::MAX;
        let mut min_mix = f64::INFINITY;
        let mut donor_idx = usize::MAX;
        let mut donor_set: Vec<usize> = Vec::new();
        for j in 0..b {
            if j == a {
                continue;
            }
            if batch.labels[j] == batch.labels[a] {
                let d = math::sq_dist(row_a, batch.embeddings.row(j));
                if d > max_pos {
                    max_pos = d;
                    pos_idx = j;
                }
            } else {
                let set = spec.replace_set(batch.n_parts, batch.item_ids[a], batch.item_ids[j]);
                let row_j = batch.embeddings.row(j);
                let mut d = 0.0;
                for &q in &set {
                    d += math::sq_dist(&row_a[q * dim..(q + 1) * dim], &row_j[q * dim..(q + 1) * dim]);
                }
                if d < min_mix {
                    min_mix = d;
                    donor_idx = j;
                    donor_set = set;
                }
            }
        }
        mined.push(MixMined {
            anchor: a,
            pos: pos_idx,
            donor: donor_idx,
            replace_set: donor_set,
            term: margin + max_pos - min_mix,
        });
    }
    Ok(mined)
}

/// Check the distance chain `D(a, donor) >= D(a, mix(larger)) >= D(a,
/// mix(smaller))` for nested replace sets `smaller` within `larger`.
///
/// Holds identically for the per-part sum distance: replacing fewer parts
/// keeps more of the anchor, and shared parts contribute exactly zero.
pub fn verify_mix_monotonicity(
    anchor: &[f64],
    donor: &[f64],
    n_parts: usize,
    dim: usize,
    smaller: &[usize],
    larger: &[usize],
) -> Result<bool> {
    if !smaller.iter().all(|q| larger.contains(q)) {
        return Err(Error::InvalidParameter {
            name: "smaller",
            message: "must be a subset of the larger replace set".into(),
        });
    }
    let mixed_small = mix_parts(anchor, donor, n_parts, dim, smaller)?;
    let mixed_large = mix_parts(anchor, donor, n_parts, dim, larger)?;
    let d_full = pairwise_distance(anchor, donor)?;
    let d_large = pairwise_distance(anchor, &mixed_large)?;
    let d_small = pairwise_distance(anchor, &mixed_small)?;
    Ok(d_full >= d_large && d_large >= d_small)
}

/// Mean cross-entropy over the batch with the max-shift stabilization;
/// gradient with respect to the logits is `(softmax - onehot) / batch`.
pub fn cross_entropy(logits: &Matrix, labels: &[u32]) -> Result<(f64, Matrix)> {
    let (b, c) = (logits.rows(), logits.cols());
    if labels.len() != b {
        return Err(Error::ShapeMismatch {
            context: "cross entropy labels",
            expected: b,
            found: labels.len(),
        });
    }
    for &l in labels {
        if l as usize >= c {
            return Err(Error::LabelOutOfRange {
                label: l,
                classes: c,
            });
        }
    }
    let mut grad = Matrix::zeros(b, c);
    let mut loss = 0.0;
    let inv = 1.0 / b.max(1) as f64;
    for i in 0..b {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &x in row {
            denom += math::exp(x - max);
        }
        let log_denom = math::ln(denom);
        let label = labels[i] as usize;
        loss += log_denom - (row[label] - max);
        let g = grad.row_mut(i);
        for j in 0..c {
            g[j] = (math::exp(row[j] - max) / denom) * inv;
        }
        g[label] -= inv;
    }
    Ok((loss * inv, grad))
}

/// Weighted sum of the three loss terms; the gradients (over the same
/// parameter space) combine linearly with the same weights.
pub fn total_loss(
    cross_entropy: (f64, &Matrix),
    triplet: (f64, &Matrix),
    part_mixup: (f64, &Matrix),
    weights: &LossWeights,
) -> Result<(f64, Matrix)> {
    let (ce_v, ce_g) = cross_entropy;
    let (t_v, t_g) = triplet;
    let (pm_v, pm_g) = part_mixup;
    for g in [t_g, pm_g] {
        if g.rows() != ce_g.rows() || g.cols() != ce_g.cols() {
            return Err(Error::ShapeMismatch {
                context: "total loss gradients",
                expected: ce_g.rows() * ce_g.cols(),
                found: g.rows() * g.cols(),
            });
        }
    }
    let value = weights.cross_entropy * ce_v + weights.triplet * t_v + weights.part_mixup * pm_v;
    let mut grad = Matrix::zeros(ce_g.rows(), ce_g.cols());
    let out = grad.data_mut();
    for (i, o) in out.iter_mut().enumerate() {
        *o = weights.cross_entropy * ce_g.data()[i]
            + weights.triplet * t_g.data()[i]
            + weights.part_mixup * pm_g.data()[i];
    }
    Ok((value, grad))
}
