//! In-memory containers: part-embedding tensors, label tables, partitions.

use alloc::vec::Vec;

use crate::math;
use crate::{Error, Matrix, Result};

/// Tolerance on `| ||h|| - 1 |` for per-part embedding vectors.
///
/// Wide enough to absorb the rounding of unit vectors through 32-bit file
/// storage, tight enough to catch anything actually unnormalized.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// `n_items x n_parts x dim` tensor of unit-normalized part embeddings,
/// stored row-major in `[item][part][component]` order.
#[derive(Debug, Clone, PartialEq)]
pub struct PartEmbeddingTensor {
    n_items: usize,
    n_parts: usize,
    dim: usize,
    data: Vec<f64>,
}

impl PartEmbeddingTensor {
    /// Build a tensor, verifying shape and per-part unit norms.
    pub fn new(n_items: usize, n_parts: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if n_parts == 0 {
            return Err(Error::InvalidParameter {
                name: "n_parts",
                message: "must be >= 1".into(),
            });
        }
        if dim == 0 {
            return Err(Error::InvalidParameter {
                name: "dim",
                message: "must be >= 1".into(),
            });
        }
        let expected = n_items * n_parts * dim;
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                context: "tensor data length",
                expected,
                found: data.len(),
            });
        }
        let t = PartEmbeddingTensor {
            n_items,
            n_parts,
            dim,
            data,
        };
        t.check_norms(UNIT_NORM_TOL)?;
        Ok(t)
    }

    /// Build a tensor from arbitrary finite data by normalizing each part
    /// vector exactly. Near-zero vectors are rejected.
    pub fn from_unnormalized(
        n_items: usize,
        n_parts: usize,
        dim: usize,
        mut data: Vec<f64>,
    ) -> Result<Self> {
        let expected = n_items * n_parts * dim;
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                context: "tensor data length",
                expected,
                found: data.len(),
            });
        }
        for item in 0..n_items {
            for part in 0..n_parts {
                let off = (item * n_parts + part) * dim;
                let v = &mut data[off..off + dim];
                let n = math::norm(v);
                if !n.is_finite() || n < 1e-12 {
                    return Err(Error::DegenerateEmbedding {
                        item,
                        part,
                        norm: n,
                    });
                }
                for x in v.iter_mut() {
                    *x /= n;
                }
            }
        }
        PartEmbeddingTensor::new(n_items, n_parts, dim, data)
    }

    fn check_norms(&self, tol: f64) -> Result<()> {
        for item in 0..self.n_items {
            for part in 0..self.n_parts {
                let n = math::norm(self.part(item, part));
                if math::abs(n - 1.0) > tol {
                    return Err(Error::NotUnitNorm {
                        item,
                        part,
                        norm: n,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_parts(&self) -> usize {
        self.n_parts
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Embedding vector of one part of one item.
    #[inline]
    pub fn part(&self, item: usize, part: usize) -> &[f64] {
        let off = (item * self.n_parts + part) * self.dim;
        &self.data[off..off + self.dim]
    }

    /// Concatenated part embeddings of one item (contiguous by layout).
    #[inline]
    pub fn item_row(&self, item: usize) -> &[f64] {
        let w = self.n_parts * self.dim;
        &self.data[item * w..(item + 1) * w]
    }

    /// `n_items x dim` matrix holding one part's embeddings.
    pub fn part_matrix(&self, part: usize) -> Matrix {
        let mut m = Matrix::zeros(self.n_items, self.dim);
        for i in 0..self.n_items {
            m.row_mut(i).copy_from_slice(self.part(i, part));
        }
        m
    }

    /// `n_items x (n_parts * dim)` matrix of concatenated part embeddings,
    /// parts in order. Each row has squared norm `n_parts`.
    pub fn concat_parts(&self) -> Matrix {
        let w = self.n_parts * self.dim;
        let mut m = Matrix::zeros(self.n_items, w);
        for i in 0..self.n_items {
            m.row_mut(i).copy_from_slice(self.item_row(i));
        }
        m
    }
}

/// One row of ground-truth annotation: item index, identity id, camera id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LabelRow {
    pub item: usize,
    pub identity: u32,
    pub camera: u32,
}

/// Identity / camera annotations for a set of items, sorted by item index.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTable {
    rows: Vec<LabelRow>,
}

impl LabelTable {
    /// Build a table; item indices must be unique.
    pub fn new(mut rows: Vec<LabelRow>) -> Result<Self> {
        rows.sort_by_key(|r| r.item);
        for w in rows.windows(2) {
            if w[0].item == w[1].item {
                return Err(Error::DuplicateItem { item: w[0].item });
            }
        }
        Ok(LabelTable { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[LabelRow] {
        &self.rows
    }

    /// Row for a given item index, if present.
    pub fn get(&self, item: usize) -> Option<&LabelRow> {
        self.rows
            .binary_search_by_key(&item, |r| r.item)
            .ok()
            .map(|i| &self.rows[i])
    }

    /// Check all item indices fall within a companion tensor of `n_items`.
    pub fn check_items(&self, n_items: usize) -> Result<()> {
        for r in &self.rows {
            if r.item >= n_items {
                return Err(Error::ItemOutOfRange {
                    item: r.item,
                    n_items,
                });
            }
        }
        Ok(())
    }

    /// Distinct identities in ascending order.
    pub fn identities(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.rows.iter().map(|r| r.identity).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Disjoint, covering cluster assignment over `n_items` items.
///
/// Cluster ids are dense: exactly `0..n_clusters-1` with no gaps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    assignment: Vec<usize>,
    n_clusters: usize,
}

impl Partition {
    /// Build from a dense assignment. Every id in `0..max+1` must occur.
    pub fn new(assignment: Vec<usize>) -> Result<Self> {
        let n_clusters = assignment.iter().map(|&c| c + 1).max().unwrap_or(0);
        let mut seen = alloc::vec![false; n_clusters];
        for &c in &assignment {
            seen[c] = true;
        }
        if let Some(id) = seen.iter().position(|&s| !s) {
            return Err(Error::SparseClusterIds { id });
        }
        Ok(Partition {
            assignment,
            n_clusters,
        })
    }

    /// Build from arbitrary labels, relabeling densely in order of first
    /// appearance.
    pub fn from_labels<T: PartialEq + Clone>(labels: &[T]) -> Self {
        let mut distinct: Vec<T> = Vec::new();
        let mut assignment = Vec::with_capacity(labels.len());
        for l in labels {
            let id = match distinct.iter().position(|d| d == l) {
                Some(i) => i,
                None => {
                    distinct.push(l.clone());
                    distinct.len() - 1
                }
            };
            assignment.push(id);
        }
        Partition {
            assignment,
            n_clusters: distinct.len(),
        }
    }

    pub fn n_items(&self) -> usize {
        self.assignment.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    #[inline]
    pub fn cluster_of(&self, item: usize) -> usize {
        self.assignment[item]
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = alloc::vec![0usize; self.n_clusters];
        for &c in &self.assignment {
            sizes[c] += 1;
        }
        sizes
    }
}
