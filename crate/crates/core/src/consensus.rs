//! Consensus of per-part partitions through a co-association matrix.
//!
//! The co-association matrix records, for every item pair, the fraction of
//! partitions that co-cluster the pair. The consensus partition is obtained
//! by agglomerative clustering of the complement (one minus co-association)
//! with a threshold placed midway between the achievable agreement levels,
//! so a cut at "k of Q parts" is unambiguous under floating point.

use alloc::vec;
use alloc::vec::Vec;

use crate::cluster::{agglomerate_from_dissimilarity, AgglomerativeConfig, Linkage};
use crate::tensor::Partition;
use crate::{Error, Result};

/// Symmetric `n x n` matrix of agreement fractions with implicit unit
/// diagonal. Entries are exact multiples of `1 / n_parts`; internally the
/// integer agreement counts are stored condensed.
#[derive(Debug, Clone, PartialEq)]
pub struct CoAssociationMatrix {
    n_items: usize,
    n_parts: usize,
    counts: Vec<u32>,
}

impl CoAssociationMatrix {
    pub fn n_items(&self) -> usize {
        self.n_items
    }

    /// Number of partitions aggregated (the Q of the agreement fractions).
    pub fn n_parts(&self) -> usize {
        self.n_parts
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * self.n_items - i * (i + 1) / 2 + (j - i - 1)
    }

    /// Agreement fraction for a pair of items.
    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        if i == j {
            1.0
        } else {
            self.counts[self.idx(i, j)] as f64 / self.n_parts as f64
        }
    }

    /// Number of partitions co-clustering a pair.
    #[inline]
    pub fn agreement_count(&self, i: usize, j: usize) -> u32 {
        if i == j {
            self.n_parts as u32
        } else {
            self.counts[self.idx(i, j)]
        }
    }

    /// Histogram of off-diagonal agreement counts; slot `c` counts the item
    /// pairs with exactly `c` agreeing partitions.
    pub fn agreement_histogram(&self) -> Vec<u64> {
        let mut hist = vec![0u64; self.n_parts + 1];
        for &c in &self.counts {
            hist[c as usize] += 1;
        }
        hist
    }

    /// Condensed `1 - M` dissimilarities (upper triangle, row-major).
    pub fn dissimilarity_condensed(&self) -> Vec<f64> {
        let q = self.n_parts as f64;
        self.counts
            .iter()
            .map(|&c| (self.n_parts as f64 - c as f64) / q)
            .collect()
    }
}

/// Build the co-association matrix of an ensemble of partitions over the
/// same items.
pub fn co_association(partitions: &[Partition]) -> Result<CoAssociationMatrix> {
    let q = partitions.len();
    if q == 0 {
        return Err(Error::InvalidParameter {
            name: "partitions",
            message: "need at least one partition".into(),
        });
    }
    let n = partitions[0].n_items();
    for p in partitions {
        if p.n_items() != n {
            return Err(Error::PartitionMismatch {
                left: n,
                right: p.n_items(),
            });
        }
    }
    let mut counts = vec![0u32; n.saturating_sub(1) * n / 2];
    for p in partitions {
        let a = p.assignment();
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                if a[i] == a[j] {
                    counts[k] += 1;
                }
                k += 1;
            }
        }
    }
    Ok(CoAssociationMatrix {
        n_items: n,
        n_parts: q,
        counts,
    })
}

/// Required number of agreeing partitions for a consensus merge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgreementLevel {
    required_parts: usize,
}

impl AgreementLevel {
    pub fn new(required_parts: usize) -> Result<Self> {
        if required_parts == 0 {
            return Err(Error::InvalidParameter {
                name: "required_parts",
                message: "must be >= 1".into(),
            });
        }
        Ok(AgreementLevel { required_parts })
    }

    pub fn required_parts(&self) -> usize {
        self.required_parts
    }

    fn check_against(&self, n_parts: usize) -> Result<()> {
        if self.required_parts > n_parts {
            return Err(Error::InvalidParameter {
                name: "required_parts",
                message: alloc::format!(
                    "agreement level {} exceeds the number of parts {}",
                    self.required_parts,
                    n_parts
                ),
            });
        }
        Ok(())
    }
}

/// Distance threshold on `1 - M` realizing a k-of-Q agreement cut.
///
/// Placed halfway between the achievable complement values `(Q-k)/Q` and
/// `(Q-k+1)/Q`, so floating-point noise cannot flip a merge decision. For
/// `k = Q` the threshold is `1/(2Q)`, strictly below `1/Q`.
pub fn agreement_threshold(level: AgreementLevel, n_parts: usize) -> Result<f64> {
    level.check_against(n_parts)?;
    let q = n_parts as f64;
    Ok(((n_parts - level.required_parts()) as f64 + 0.5) / q)
}

/// Linkage used on the `1 - M` matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ConsensusLinkage {
    /// A merge requires the required fraction of parts to agree on average
    /// across the two clusters.
    #[default]
    Average,
    /// Transitive closure of pairwise agreement; for `k = Q` this is the
    /// transitive closure of full agreement.
    Single,
}

/// Consensus partition at the default (average) linkage.
pub fn consensus_partition(m: &CoAssociationMatrix, level: AgreementLevel) -> Result<Partition> {
    consensus_partition_with(m, level, ConsensusLinkage::Average)
}

/// Consensus partition with an explicit linkage on `1 - M`.
pub fn consensus_partition_with(
    m: &CoAssociationMatrix,
    level: AgreementLevel,
    linkage: ConsensusLinkage,
) -> Result<Partition> {
    let threshold = agreement_threshold(level, m.n_parts())?;
    let config = AgglomerativeConfig {
        linkage: match linkage {
            ConsensusLinkage::Average => Linkage::Average,
            ConsensusLinkage::Single => Linkage::Single,
        },
        distance_threshold: threshold,
    };
    let (partition, _) =
        agglomerate_from_dissimilarity(m.n_items(), m.dissimilarity_condensed(), &config)?;
    Ok(partition)
}
