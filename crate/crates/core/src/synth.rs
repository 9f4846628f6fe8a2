//! Deterministic synthetic identity generator.
//!
//! Every identity gets one unit prototype per part; images are noisy copies
//! of the prototypes re-projected to the sphere. With probability
//! `part_confusion`, an identity's prototype for one part is replaced by
//! another identity's prototype for that part, which confuses that part's
//! clustering without touching the others. Raw input features are a fixed
//! random linear lift of the concatenated prototypes plus noise, so a linear
//! embedder can recover the identity structure.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::pseudolabel::SplitState;
use crate::rng::Rng;
use crate::tensor::{LabelRow, LabelTable, PartEmbeddingTensor};
use crate::{Error, Matrix, Result};

const PROTO_TAG: u64 = 0x7072_6f74;
const BASIS_TAG: u64 = 0x6261_7369;
const CONF_TAG: u64 = 0x636f_6e66;
const DONOR_TAG: u64 = 0x646f_6e6f;
const IMG_TAG: u64 = 0x696d_67;
const RAW_TAG: u64 = 0x7261_77;
const LIFT_TAG: u64 = 0x6c69_6674;
const SPLIT_TAG: u64 = 0x7370_6c69;

const N_CAMERAS: u32 = 6;

/// Identity prototypes live on a per-part latent subspace of this fraction
/// of the embedding dimension, so identities share linear structure that a
/// trained embedder can transfer to unseen identities.
const LATENT_FRACTION: f64 = 0.75;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_identities: usize,
    pub images_per_identity: usize,
    pub n_parts: usize,
    pub dim: usize,
    /// Scale of the isotropic Gaussian perturbation added before
    /// re-normalization; the per-component deviation is
    /// `noise_sigma * sqrt(3 / dim)`, so the perturbation magnitude is
    /// independent of the embedding dimension.
    pub noise_sigma: f64,
    /// Probability, per part, that an identity's prototype for that part is
    /// replaced by its donor identity's prototype. Each identity draws a
    /// single donor, so confused identities resemble their donor in every
    /// confused part.
    pub part_confusion: f64,
    /// Input feature dimension of the raw lift. Raw features receive
    /// per-component Gaussian noise of deviation `noise_sigma * sqrt(3)/2`,
    /// so widening the lift raises the input signal-to-noise ratio.
    pub raw_dim: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_identities: 50,
            images_per_identity: 6,
            n_parts: 6,
            dim: 16,
            noise_sigma: 0.35,
            part_confusion: 0.15,
            raw_dim: 384,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_identities", self.n_identities),
            ("images_per_identity", self.images_per_identity),
            ("n_parts", self.n_parts),
            ("dim", self.dim),
            ("raw_dim", self.raw_dim),
        ] {
            if v == 0 {
                return Err(Error::InvalidParameter {
                    name,
                    message: "must be >= 1".into(),
                });
            }
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidParameter {
                name: "noise_sigma",
                message: "must be a nonnegative finite real".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.part_confusion) {
            return Err(Error::InvalidParameter {
                name: "part_confusion",
                message: "must lie in [0, 1]".into(),
            });
        }
        Ok(())
    }

    pub fn n_items(&self) -> usize {
        self.n_identities * self.images_per_identity
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub embeddings: PartEmbeddingTensor,
    pub labels: LabelTable,
    /// `n_items x raw_dim` input features for the embedder.
    pub raw_features: Matrix,
}

/// Generate the configured set (identities `0..n_identities`).
pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    generate_block(config, 0, config.n_identities)
}

/// Generate `count` identities starting at `identity_offset`, sharing the
/// raw-feature lift with every other block of the same seed. Used to produce
/// held-out evaluation sets disjoint from the training identities.
pub fn generate_block(
    config: &SynthConfig,
    identity_offset: usize,
    count: usize,
) -> Result<SynthOutput> {
    config.validate()?;
    if count == 0 {
        return Err(Error::InvalidParameter {
            name: "count",
            message: "must be >= 1".into(),
        });
    }
    let (q_parts, d) = (config.n_parts, config.dim);
    let latent_dim = ((d as f64 * LATENT_FRACTION) as usize).max(1);

    // One orthonormal latent basis per part, shared by every block of this
    // seed, so prototypes are uniform on a great subsphere.
    let bases: Vec<Matrix> = (0..q_parts as u64)
        .map(|q| {
            let mut rng = Rng::from_tags(config.seed, &[BASIS_TAG, q]);
            orthonormal_basis(&mut rng, d, latent_dim)
        })
        .collect();

    // Per-identity prototypes, before confusion swaps: unit vectors on each
    // part's latent subspace, independent across parts.
    let mut protos: Vec<Vec<f64>> = Vec::with_capacity(count);
    for i in 0..count {
        let ident = (identity_offset + i) as u64;
        let mut rng = Rng::from_tags(config.seed, &[PROTO_TAG, ident]);
        let mut p = vec![0.0; q_parts * d];
        for q in 0..q_parts {
            loop {
                let z: Vec<f64> = (0..latent_dim).map(|_| rng.next_gauss()).collect();
                let dst = &mut p[q * d..(q + 1) * d];
                for (r, out) in dst.iter_mut().enumerate() {
                    *out = math::dot(bases[q].row(r), &z);
                }
                let norm = math::norm(dst);
                if norm >= 1e-9 {
                    for v in dst.iter_mut() {
                        *v /= norm;
                    }
                    break;
                }
            }
        }
        protos.push(p);
    }

    // Confusion: copy the donor's prototype into single parts. One donor per
    // identity, so a confused identity can share several parts with it.
    let mut effective = protos.clone();
    if config.part_confusion > 0.0 && count > 1 {
        for i in 0..count {
            let ident = (identity_offset + i) as u64;
            let mut donor_rng = Rng::from_tags(config.seed, &[DONOR_TAG, ident]);
            let mut donor = donor_rng.next_range(count - 1);
            if donor >= i {
                donor += 1;
            }
            for q in 0..q_parts {
                let mut rng = Rng::from_tags(config.seed, &[CONF_TAG, ident, q as u64]);
                if rng.next_f64() < config.part_confusion {
                    effective[i][q * d..(q + 1) * d]
                        .copy_from_slice(&protos[donor][q * d..(q + 1) * d]);
                }
            }
        }
    }

    // Fixed lift shared by all blocks of this seed.
    let lift = {
        let mut rng = Rng::from_tags(config.seed, &[LIFT_TAG]);
        let scale = 1.0 / math::sqrt((q_parts * d) as f64);
        let mut m = Matrix::zeros(config.raw_dim, q_parts * d);
        for v in m.data_mut() {
            *v = rng.next_gauss() * scale;
        }
        m
    };

    let n_items = count * config.images_per_identity;
    let emb_sigma = config.noise_sigma * math::sqrt(3.0 / d as f64);
    let raw_sigma = config.noise_sigma * math::sqrt(3.0) / 2.0;
    let mut emb = vec![0.0; n_items * q_parts * d];
    let mut raw = Matrix::zeros(n_items, config.raw_dim);
    let mut rows = Vec::with_capacity(n_items);
    for i in 0..count {
        let ident = (identity_offset + i) as u64;
        let mut img_rng = Rng::from_tags(config.seed, &[IMG_TAG, ident]);
        let mut raw_rng = Rng::from_tags(config.seed, &[RAW_TAG, ident]);
        // Noiseless raw projection of this identity's prototypes.
        let mut raw_base = vec![0.0; config.raw_dim];
        for (r, out) in raw_base.iter_mut().enumerate() {
            *out = math::dot(lift.row(r), &effective[i]);
        }
        for j in 0..config.images_per_identity {
            let item = i * config.images_per_identity + j;
            for q in 0..q_parts {
                let dst = &mut emb[(item * q_parts + q) * d..(item * q_parts + q + 1) * d];
                loop {
                    for (c, out) in dst.iter_mut().enumerate() {
                        *out = effective[i][q * d + c] + emb_sigma * img_rng.next_gauss();
                    }
                    let norm = math::norm(dst);
                    if norm >= 1e-9 {
                        for v in dst.iter_mut() {
                            *v /= norm;
                        }
                        break;
                    }
                }
            }
            let camera = (j as u32) % N_CAMERAS;
            let raw_row = raw.row_mut(item);
            for (c, out) in raw_row.iter_mut().enumerate() {
                *out = raw_base[c] + raw_sigma * raw_rng.next_gauss();
            }
            rows.push(LabelRow {
                item,
                identity: (identity_offset + i) as u32,
                camera,
            });
        }
    }

    Ok(SynthOutput {
        embeddings: PartEmbeddingTensor::new(n_items, q_parts, d, emb)?,
        labels: LabelTable::new(rows)?,
        raw_features: raw,
    })
}

/// Random `rows x cols` matrix with orthonormal columns (Gram-Schmidt on
/// Gaussian draws), column-major access via rows.
fn orthonormal_basis(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    debug_assert!(cols <= rows);
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while columns.len() < cols {
        let mut v: Vec<f64> = (0..rows).map(|_| rng.next_gauss()).collect();
        for prev in &columns {
            let proj = math::dot(&v, prev);
            for (x, p) in v.iter_mut().zip(prev.iter()) {
                *x -= proj * p;
            }
        }
        let norm = math::norm(&v);
        if norm < 1e-9 {
            continue;
        }
        for x in v.iter_mut() {
            *x /= norm;
        }
        columns.push(v);
    }
    let mut b = Matrix::zeros(rows, cols);
    for (c, col) in columns.iter().enumerate() {
        for r in 0..rows {
            b.row_mut(r)[c] = col[r];
        }
    }
    b
}

/// Partition the identities (never the images) into labeled and unlabeled
/// subsets: `ceil(fraction * n_identities)` identities become fully labeled,
/// the rest fully unlabeled, and the pseudo-labeled subset starts empty.
pub fn split_labeled(labels: &LabelTable, labeled_fraction: f64, seed: u64) -> Result<SplitState> {
    if !(labeled_fraction > 0.0 && labeled_fraction <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "labeled_fraction",
            message: "must lie in (0, 1]".into(),
        });
    }
    let ids = labels.identities();
    if ids.is_empty() {
        return Err(Error::EmptyLabeledSet);
    }
    // The nudge keeps simple fractions (1/3, 0.1, ...) from rounding up an
    // extra identity through float representation.
    let n_labeled = math::ceil(labeled_fraction * ids.len() as f64 - 1e-9) as usize;
    let n_labeled = n_labeled.clamp(1, ids.len());

    let mut shuffled = ids.clone();
    let mut rng = Rng::from_tags(seed, &[SPLIT_TAG]);
    rng.shuffle(&mut shuffled);
    let labeled_ids: alloc::collections::BTreeSet<u32> =
        shuffled[..n_labeled].iter().copied().collect();

    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    for row in labels.rows() {
        if labeled_ids.contains(&row.identity) {
            labeled.push((row.item, row.identity));
        } else {
            unlabeled.push(row.item);
        }
    }
    SplitState::new(labeled, unlabeled)
}
