//! Differentiable part embedder: one affine map per part followed by unit
//! normalization, with hand-written backpropagation through the
//! normalization Jacobian and an Adam training loop over PK-sampled batches.

use alloc::vec;
use alloc::vec::Vec;

use crate::losses::{
    cross_entropy, part_mixup_loss, triplet_batch_hard, EmbeddingBatch, LossWeights, MixSpec,
};
use crate::math;
use crate::optim::Adam;
use crate::pseudolabel::SplitState;
use crate::rng::{derive_seed, Rng};
use crate::tensor::PartEmbeddingTensor;
use crate::{Error, Matrix, Result};

const INIT_TAG: u64 = 0x696e_6974;
const HEAD_TAG: u64 = 0x6865_6164;
const BATCH_TAG: u64 = 0x6261_7463;
const MIX_SEED_TAG: u64 = 0x6d73_6565;

/// Minimum pre-normalization norm; anything below is a degenerate embedding.
const NORM_FLOOR: f64 = 1e-8;

/// Trainable parameters: per part, a `raw_dim x dim` weight matrix and a
/// `dim` bias, stored flat (all weight blocks, then all bias blocks).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderParams {
    n_parts: usize,
    raw_dim: usize,
    dim: usize,
    params: Vec<f64>,
    init_seed: u64,
}

impl EmbedderParams {
    /// Fresh random initialization: weights uniform in
    /// `[-1/sqrt(raw_dim), 1/sqrt(raw_dim)]`, biases zero.
    pub fn init(n_parts: usize, raw_dim: usize, dim: usize, seed: u64) -> Self {
        let n_weights = n_parts * raw_dim * dim;
        let n_biases = n_parts * dim;
        let mut params = vec![0.0; n_weights + n_biases];
        let scale = 1.0 / math::sqrt(raw_dim as f64);
        let mut rng = Rng::new(derive_seed(seed, &[INIT_TAG]));
        for w in params[..n_weights].iter_mut() {
            *w = (2.0 * rng.next_f64() - 1.0) * scale;
        }
        EmbedderParams {
            n_parts,
            raw_dim,
            dim,
            params,
            init_seed: seed,
        }
    }

    pub fn from_flat(
        n_parts: usize,
        raw_dim: usize,
        dim: usize,
        params: Vec<f64>,
        init_seed: u64,
    ) -> Result<Self> {
        let expected = n_parts * raw_dim * dim + n_parts * dim;
        if params.len() != expected {
            return Err(Error::ShapeMismatch {
                context: "embedder parameter length",
                expected,
                found: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite {
                what: "embedder parameters",
            });
        }
        Ok(EmbedderParams {
            n_parts,
            raw_dim,
            dim,
            params,
            init_seed,
        })
    }

    pub fn n_parts(&self) -> usize {
        self.n_parts
    }

    pub fn raw_dim(&self) -> usize {
        self.raw_dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn flat(&self) -> &[f64] {
        &self.params
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Row-major `raw_dim x dim` weight block of one part.
    pub fn weight_block(&self, part: usize) -> &[f64] {
        let w = self.raw_dim * self.dim;
        &self.params[part * w..(part + 1) * w]
    }

    pub fn bias_block(&self, part: usize) -> &[f64] {
        let off = self.n_parts * self.raw_dim * self.dim + part * self.dim;
        &self.params[off..off + self.dim]
    }

    fn weight_offset(&self, part: usize) -> usize {
        part * self.raw_dim * self.dim
    }

    fn bias_offset(&self, part: usize) -> usize {
        self.n_parts * self.raw_dim * self.dim + part * self.dim
    }
}

/// Affine classification head over concatenated part embeddings; rebuilt
/// from scratch whenever the training identity set changes.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    in_dim: usize,
    n_classes: usize,
    params: Vec<f64>,
}

impl ClassifierHead {
    pub fn init(in_dim: usize, n_classes: usize, seed: u64) -> Self {
        let mut params = vec![0.0; in_dim * n_classes + n_classes];
        let scale = 1.0 / math::sqrt(in_dim as f64);
        let mut rng = Rng::new(derive_seed(seed, &[HEAD_TAG]));
        for w in params[..in_dim * n_classes].iter_mut() {
            *w = (2.0 * rng.next_f64() - 1.0) * scale;
        }
        ClassifierHead {
            in_dim,
            n_classes,
            params,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn flat(&self) -> &[f64] {
        &self.params
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// `B x n_classes` logits for a batch of embeddings.
    pub fn logits(&self, embeddings: &Matrix) -> Matrix {
        let b = embeddings.rows();
        let c = self.n_classes;
        let mut out = Matrix::zeros(b, c);
        let weights = &self.params[..self.in_dim * c];
        let biases = &self.params[self.in_dim * c..];
        for i in 0..b {
            let z = embeddings.row(i);
            let row = out.row_mut(i);
            row.copy_from_slice(biases);
            for (r, &zr) in z.iter().enumerate() {
                let wrow = &weights[r * c..(r + 1) * c];
                for (j, &w) in wrow.iter().enumerate() {
                    row[j] += zr * w;
                }
            }
        }
        out
    }
}

/// Map raw features to unit-normalized part embeddings.
pub fn forward(params: &EmbedderParams, features: &Matrix) -> Result<PartEmbeddingTensor> {
    if features.cols() != params.raw_dim {
        return Err(Error::ShapeMismatch {
            context: "feature width",
            expected: params.raw_dim,
            found: features.cols(),
        });
    }
    if !features.is_finite() {
        return Err(Error::NonFinite { what: "features" });
    }
    let (z, _norms) = forward_raw(params, features)?;
    PartEmbeddingTensor::new(features.rows(), params.n_parts, params.dim, z.data().to_vec())
}

/// Forward pass keeping the per-part pre-normalization norms for backprop.
fn forward_raw(params: &EmbedderParams, features: &Matrix) -> Result<(Matrix, Matrix)> {
    let n = features.rows();
    let (q_parts, d) = (params.n_parts, params.dim);
    let mut z = Matrix::zeros(n, q_parts * d);
    let mut norms = Matrix::zeros(n, q_parts);
    for i in 0..n {
        let x = features.row(i);
        for q in 0..q_parts {
            let w = params.weight_block(q);
            let b = params.bias_block(q);
            let out = &mut z.row_mut(i)[q * d..(q + 1) * d];
            out.copy_from_slice(b);
            for (r, &xr) in x.iter().enumerate() {
                let wrow = &w[r * d..(r + 1) * d];
                for (c, &wv) in wrow.iter().enumerate() {
                    out[c] += xr * wv;
                }
            }
            let norm = math::norm(out);
            if norm < NORM_FLOOR {
                return Err(Error::DegenerateEmbedding {
                    item: i,
                    part: q,
                    norm,
                });
            }
            for v in out.iter_mut() {
                *v /= norm;
            }
            norms.row_mut(i)[q] = norm;
        }
    }
    Ok((z, norms))
}

/// Per-term loss values of one backward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossComponents {
    pub cross_entropy: f64,
    pub triplet: f64,
    pub part_mixup: f64,
}

#[derive(Debug, Clone)]
pub struct BackwardResult {
    pub loss: f64,
    pub components: LossComponents,
    /// Gradient over `EmbedderParams::flat`.
    pub param_grad: Vec<f64>,
    /// Gradient over `ClassifierHead::flat`.
    pub head_grad: Vec<f64>,
}

/// Analytic gradient of the total loss with respect to the embedder
/// parameters and the classifier head, for one batch.
///
/// `labels` are contiguous class indices (they double as identity labels for
/// the mining losses); `item_ids` key the part-mixup replace sets.
pub fn backward(
    params: &EmbedderParams,
    head: &ClassifierHead,
    features: &Matrix,
    labels: &[u32],
    item_ids: &[u64],
    weights: &LossWeights,
    mix: &MixSpec,
) -> Result<BackwardResult> {
    let b = features.rows();
    let (q_parts, d) = (params.n_parts, params.dim);
    let width = q_parts * d;
    let (z, norms) = forward_raw(params, features)?;

    let mut g_z = Matrix::zeros(b, width);
    let mut head_grad = vec![0.0; head.params.len()];
    let mut components = LossComponents {
        cross_entropy: 0.0,
        triplet: 0.0,
        part_mixup: 0.0,
    };

    if weights.cross_entropy != 0.0 {
        let logits = head.logits(&z);
        let (ce, g_logits) = cross_entropy(&logits, labels)?;
        components.cross_entropy = ce;
        let c = head.n_classes;
        let w_head = &head.params[..head.in_dim * c];
        // dL/dz = g_logits . W^T ; dL/dW = z^T . g_logits ; dL/db = col sums.
        for i in 0..b {
            let gl = g_logits.row(i);
            let zi = z.row(i);
            let gz = g_z.row_mut(i);
            for r in 0..width {
                let wrow = &w_head[r * c..(r + 1) * c];
                let mut acc = 0.0;
                for (j, &w) in wrow.iter().enumerate() {
                    acc += gl[j] * w;
                }
                gz[r] += weights.cross_entropy * acc;
                let hg = &mut head_grad[r * c..(r + 1) * c];
                for (j, &g) in gl.iter().enumerate() {
                    hg[j] += weights.cross_entropy * zi[r] * g;
                }
            }
            let hb = &mut head_grad[head.in_dim * c..];
            for (j, &g) in gl.iter().enumerate() {
                hb[j] += weights.cross_entropy * g;
            }
        }
    }

    if weights.triplet != 0.0 || weights.part_mixup != 0.0 {
        let batch = EmbeddingBatch::new(z.clone(), q_parts, d, labels.to_vec(), item_ids.to_vec())?;
        if weights.triplet != 0.0 {
            let (t, g_t) = triplet_batch_hard(&batch, weights.margin)?;
            components.triplet = t;
            for (o, g) in g_z.data_mut().iter_mut().zip(g_t.data().iter()) {
                *o += weights.triplet * g;
            }
        }
        if weights.part_mixup != 0.0 {
            let (pm, g_pm) = part_mixup_loss(&batch, weights.margin, mix)?;
            components.part_mixup = pm;
            for (o, g) in g_z.data_mut().iter_mut().zip(g_pm.data().iter()) {
                *o += weights.part_mixup * g;
            }
        }
    }

    // Through the normalization: g_v = (g_h - (g_h . h) h) / ||v||, then into
    // the affine parameters.
    let mut param_grad = vec![0.0; params.params.len()];
    let mut g_v = vec![0.0; d];
    for i in 0..b {
        let x = features.row(i);
        for q in 0..q_parts {
            let h = &z.row(i)[q * d..(q + 1) * d];
            let g_h = &g_z.row(i)[q * d..(q + 1) * d];
            let norm = norms.row(i)[q];
            let proj = math::dot(g_h, h);
            for c in 0..d {
                g_v[c] = (g_h[c] - proj * h[c]) / norm;
            }
            let w_off = params.weight_offset(q);
            for (r, &xr) in x.iter().enumerate() {
                if xr == 0.0 {
                    continue;
                }
                let wg = &mut param_grad[w_off + r * d..w_off + (r + 1) * d];
                for c in 0..d {
                    wg[c] += xr * g_v[c];
                }
            }
            let b_off = params.bias_offset(q);
            for c in 0..d {
                param_grad[b_off + c] += g_v[c];
            }
        }
    }

    let loss = weights.cross_entropy * components.cross_entropy
        + weights.triplet * components.triplet
        + weights.part_mixup * components.part_mixup;
    Ok(BackwardResult {
        loss,
        components,
        param_grad,
        head_grad,
    })
}

/// Training hyperparameters for one pseudo-labeling iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Epochs at which the learning rate is multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    /// Identities per batch.
    pub batch_p: usize,
    /// Instances per identity.
    pub batch_k: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weights: LossWeights,
    /// Maximum parts replaced by part-mixup; defaults to `n_parts - 1`.
    pub pm_max_replaced: Option<usize>,
    pub pm_hinge: bool,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            epochs: 100,
            learning_rate: 1e-3,
            decay_epochs: vec![60, 80],
            decay_factor: 0.1,
            batch_p: 20,
            batch_k: 6,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weights: LossWeights::default(),
            pm_max_replaced: None,
            pm_hinge: true,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_p < 2 || self.batch_k < 2 {
            return Err(Error::InvalidParameter {
                name: "batch",
                message: "batch_p and batch_k must both be >= 2".into(),
            });
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter {
                name: "learning_rate",
                message: "must be positive".into(),
            });
        }
        self.weights.validate()
    }

    fn mix_spec(&self, n_parts: usize) -> MixSpec {
        let max_replaced = self
            .pm_max_replaced
            .unwrap_or_else(|| (n_parts - 1).max(1))
            .min(n_parts);
        let mut spec = MixSpec::new(
            max_replaced.max(1),
            derive_seed(self.seed, &[MIX_SEED_TAG]),
        );
        spec.apply_hinge = self.pm_hinge;
        spec
    }
}

/// One PK batch: `p` identities, `k` instances each. When pseudo-labeled
/// identities exist, up to half of the identities come from them; otherwise
/// the batch is entirely labeled data. Identities with fewer than `k`
/// instances are sampled with replacement.
pub fn sample_pk_batch(
    split: &SplitState,
    p: usize,
    k: usize,
    rng: &mut Rng,
) -> Result<(Vec<usize>, Vec<u32>)> {
    let labeled = split.labeled_by_identity();
    let pseudo = split.pseudo_by_identity();
    let total_ids = labeled.len() + pseudo.len();
    if total_ids < 2 {
        return Err(Error::TooFewIdentities { found: total_ids });
    }
    let mut n_pseudo = if pseudo.is_empty() {
        0
    } else {
        (p / 2).min(pseudo.len())
    };
    let n_labeled = (p - n_pseudo).min(labeled.len());
    // Backfill from the pseudo pool when the labeled pool is short.
    n_pseudo += (p - n_pseudo - n_labeled).min(pseudo.len() - n_pseudo);

    let mut items = Vec::with_capacity((n_labeled + n_pseudo) * k);
    let mut labels = Vec::with_capacity((n_labeled + n_pseudo) * k);
    for (pool, take) in [(&labeled, n_labeled), (&pseudo, n_pseudo)] {
        let ids: Vec<u32> = pool.iter().map(|(id, _)| *id).collect();
        for chosen in rng.sample_distinct(ids.len(), take) {
            let (id, instances) = &pool[chosen];
            if instances.len() >= k {
                for pick in rng.sample_distinct(instances.len(), k) {
                    items.push(instances[pick]);
                    labels.push(*id);
                }
            } else {
                for _ in 0..k {
                    items.push(instances[rng.next_range(instances.len())]);
                    labels.push(*id);
                }
            }
        }
    }
    Ok((items, labels))
}

/// One optimizer step's loss record. Values use the mean reduction over
/// anchors; multiply by `batch_size` for the sum reduction.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub batch_size: usize,
    pub total: f64,
    pub cross_entropy: f64,
    pub triplet: f64,
    pub part_mixup: f64,
    /// L2 norm of the gradient over the embedder parameters.
    pub grad_norm: f64,
}

/// Optimize the total loss on the labeled and pseudo-labeled subsets with a
/// fresh classification head sized to the current identity count.
pub fn train(
    params: EmbedderParams,
    split: &SplitState,
    features: &Matrix,
    config: &TrainerConfig,
) -> Result<EmbedderParams> {
    train_logged(params, split, features, config).map(|(p, _)| p)
}

/// As [`train`], additionally returning the per-step loss trace.
pub fn train_logged(
    params: EmbedderParams,
    split: &SplitState,
    features: &Matrix,
    config: &TrainerConfig,
) -> Result<(EmbedderParams, Vec<StepRecord>)> {
    config.validate()?;
    if split.labeled().is_empty() {
        return Err(Error::EmptyLabeledSet);
    }
    let mut params = params;

    // Contiguous class indices over the training labels (true + pseudo).
    let mut classes: Vec<u32> = split
        .labeled()
        .iter()
        .chain(split.pseudo_labeled().iter())
        .map(|&(_, id)| id)
        .collect();
    classes.sort_unstable();
    classes.dedup();
    let class_of = |label: u32| -> u32 {
        classes.binary_search(&label).expect("training label") as u32
    };

    let n_train = split.labeled().len() + split.pseudo_labeled().len();
    let batch_size = config.batch_p * config.batch_k;
    let steps_per_epoch = n_train.div_ceil(batch_size).max(1);

    let head_seed = derive_seed(config.seed, &[HEAD_TAG]);
    let mut head = ClassifierHead::init(params.n_parts * params.dim, classes.len(), head_seed);
    let mut adam_params = Adam::new(
        params.params.len(),
        config.beta1,
        config.beta2,
        config.epsilon,
    );
    let mut adam_head = Adam::new(
        head.params.len(),
        config.beta1,
        config.beta2,
        config.epsilon,
    );
    let mix = config.mix_spec(params.n_parts);
    let mut rng = Rng::new(derive_seed(config.seed, &[BATCH_TAG]));

    let mut trace = Vec::with_capacity(config.epochs * steps_per_epoch);
    for epoch in 0..config.epochs {
        let decays = config.decay_epochs.iter().filter(|&&e| epoch >= e).count();
        let lr = config.learning_rate * libm::pow(config.decay_factor, decays as f64);
        for step in 0..steps_per_epoch {
            let (batch_items, batch_labels) =
                sample_pk_batch(split, config.batch_p, config.batch_k, &mut rng)?;
            let batch_features = features.gather_rows(&batch_items);
            let class_labels: Vec<u32> = batch_labels.iter().map(|&l| class_of(l)).collect();
            let item_ids: Vec<u64> = batch_items.iter().map(|&i| i as u64).collect();
            let result = backward(
                &params,
                &head,
                &batch_features,
                &class_labels,
                &item_ids,
                &config.weights,
                &mix,
            )?;
            adam_params.step(&mut params.params, &result.param_grad, lr);
            adam_head.step(&mut head.params, &result.head_grad, lr);
            trace.push(StepRecord {
                epoch,
                step,
                batch_size: batch_items.len(),
                total: result.loss,
                cross_entropy: result.components.cross_entropy,
                triplet: result.components.triplet,
                part_mixup: result.components.part_mixup,
                grad_norm: math::sqrt(math::dot(&result.param_grad, &result.param_grad)),
            });
        }
    }
    Ok((params, trace))
}
