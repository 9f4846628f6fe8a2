//! Hierarchical agglomerative clustering with a distance threshold.
//!
//! The production path is the nearest-neighbor-chain algorithm over a dense
//! dissimilarity matrix, with Lance-Williams updates for Ward, average and
//! single linkage. Initial dissimilarities are plain Euclidean distances and
//! linkage heights stay in those units, so for two singletons the Ward height
//! equals their Euclidean distance. Merging stops at the cut: clusters merge
//! only while the linkage height is strictly below the threshold.
//!
//! The full merge sequence is always computed and returned as a stepwise
//! [`Dendrogram`]; the threshold cut is derived from it.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::tensor::{Partition, PartEmbeddingTensor};
use crate::{Error, Matrix, Result};

/// Merge criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Linkage {
    /// Ward's minimum variance criterion.
    Ward,
    /// Unweighted average of pairwise distances (UPGMA).
    Average,
    /// Minimum pairwise distance.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgglomerativeConfig {
    pub linkage: Linkage,
    /// Clusters merge while their linkage distance is strictly below this.
    pub distance_threshold: f64,
}

impl Default for AgglomerativeConfig {
    fn default() -> Self {
        AgglomerativeConfig {
            linkage: Linkage::Ward,
            distance_threshold: 2.0,
        }
    }
}

/// One merge step: the two cluster ids joined, the linkage distance at which
/// they joined, and the size of the resulting cluster.
///
/// Ids follow the stepwise convention: leaves are `0..n_leaves`, the merge at
/// position `i` creates cluster `n_leaves + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Merge {
    pub cluster_a: usize,
    pub cluster_b: usize,
    pub distance: f64,
    pub size: usize,
}

/// Stepwise dendrogram: the full merge sequence ordered by linkage distance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    n_leaves: usize,
    merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    /// Partition induced by applying every merge with distance strictly below
    /// `threshold`. Cluster ids are assigned in order of first item
    /// appearance.
    pub fn cut(&self, threshold: f64) -> Partition {
        let n = self.n_leaves;
        if n == 0 {
            return Partition::from_labels::<usize>(&[]);
        }
        let mut uf = UnionFind::new(n + self.merges.len());
        for (i, m) in self.merges.iter().enumerate() {
            if m.distance < threshold {
                uf.union(m.cluster_a, n + i);
                uf.union(m.cluster_b, n + i);
            }
        }
        let roots: Vec<usize> = (0..n).map(|i| uf.find(i)).collect();
        Partition::from_labels(&roots)
    }
}

/// Cluster the rows of `points` (Euclidean distances).
pub fn agglomerate(
    points: &Matrix,
    config: &AgglomerativeConfig,
) -> Result<(Partition, Dendrogram)> {
    if !points.is_finite() {
        return Err(Error::NonFinite { what: "points" });
    }
    let n = points.rows();
    let mut condensed = vec![0.0f64; n.saturating_sub(1) * n / 2];
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            condensed[k] = math::sqrt(math::sq_dist(points.row(i), points.row(j)));
            k += 1;
        }
    }
    agglomerate_from_dissimilarity(n, condensed, config)
}

/// Cluster from a precomputed condensed dissimilarity matrix
/// (upper triangle, row-major: entry for `(i, j)` with `i < j`).
pub fn agglomerate_from_dissimilarity(
    n: usize,
    condensed: Vec<f64>,
    config: &AgglomerativeConfig,
) -> Result<(Partition, Dendrogram)> {
    if !(config.distance_threshold > 0.0) || !config.distance_threshold.is_finite() {
        return Err(Error::InvalidParameter {
            name: "distance_threshold",
            message: "must be a positive finite real".into(),
        });
    }
    let expected = n.saturating_sub(1) * n / 2;
    if condensed.len() != expected {
        return Err(Error::ShapeMismatch {
            context: "condensed dissimilarity length",
            expected,
            found: condensed.len(),
        });
    }
    if condensed.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite {
            what: "dissimilarities",
        });
    }
    let dendrogram = nn_chain(n, condensed, config.linkage);
    let partition = dendrogram.cut(config.distance_threshold);
    Ok((partition, dendrogram))
}

/// Cluster every part of a tensor independently, in part order.
pub fn cluster_parts(
    tensor: &PartEmbeddingTensor,
    config: &AgglomerativeConfig,
) -> Result<Vec<Partition>> {
    (0..tensor.n_parts())
        .map(|q| cluster_part(tensor, q, config))
        .collect()
}

/// Cluster a single part's `n_items x dim` slice.
pub fn cluster_part(
    tensor: &PartEmbeddingTensor,
    part: usize,
    config: &AgglomerativeConfig,
) -> Result<Partition> {
    let m = tensor.part_matrix(part);
    agglomerate(&m, config).map(|(p, _)| p)
}

// --- nearest-neighbor chain -------------------------------------------------

struct Condensed {
    n: usize,
    d: Vec<f64>,
}

impl Condensed {
    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j);
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        if i < j {
            self.d[self.idx(i, j)]
        } else {
            self.d[self.idx(j, i)]
        }
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = if i < j { self.idx(i, j) } else { self.idx(j, i) };
        self.d[k] = v;
    }
}

/// NN-chain agglomeration. Returns the stepwise dendrogram with merges
/// sorted by linkage distance (stable, so equal-distance merges keep
/// chain order).
fn nn_chain(n: usize, condensed: Vec<f64>, linkage: Linkage) -> Dendrogram {
    if n == 0 {
        return Dendrogram {
            n_leaves: 0,
            merges: Vec::new(),
        };
    }
    let mut dis = Condensed { n, d: condensed };
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut chain: Vec<usize> = Vec::with_capacity(n);
    // (representative_a, representative_b, height), in merge order.
    let mut raw: Vec<(usize, usize, f64)> = Vec::with_capacity(n.saturating_sub(1));

    for _ in 0..n.saturating_sub(1) {
        if chain.is_empty() {
            let start = (0..n).find(|&i| active[i]).expect("active cluster");
            chain.push(start);
        }
        loop {
            let x = *chain.last().unwrap();
            // Nearest active neighbor of x; prefer the chain predecessor on
            // ties so reciprocal pairs are detected, otherwise the lowest
            // index wins.
            let prev = if chain.len() >= 2 {
                Some(chain[chain.len() - 2])
            } else {
                None
            };
            let (mut y, mut best) = match prev {
                Some(p) => (p, dis.get(x, p)),
                None => (usize::MAX, f64::INFINITY),
            };
            for z in 0..n {
                if z == x || !active[z] || Some(z) == prev {
                    continue;
                }
                let d = dis.get(x, z);
                if d < best {
                    best = d;
                    y = z;
                }
            }
            if prev == Some(y) {
                chain.pop();
                chain.pop();
                merge(&mut dis, &mut size, &mut active, linkage, x, y, best);
                raw.push((x, y, best));
                break;
            }
            chain.push(y);
        }
    }

    // Stable sort by height, then relabel into stepwise ids.
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| raw[a].2.partial_cmp(&raw[b].2).unwrap().then(a.cmp(&b)));

    let mut uf = UnionFind::new(n);
    // label[root] = current stepwise cluster id of the set with that root.
    let mut label: Vec<usize> = (0..n).collect();
    let mut cluster_size = vec![1usize; n];
    let mut merges = Vec::with_capacity(raw.len());
    for (step, &t) in order.iter().enumerate() {
        let (ra, rb, h) = raw[t];
        let root_a = uf.find(ra);
        let root_b = uf.find(rb);
        let (la, lb) = (label[root_a], label[root_b]);
        let new_size = cluster_size[root_a] + cluster_size[root_b];
        let root = {
            uf.union(root_a, root_b);
            uf.find(root_a)
        };
        label[root] = n + step;
        cluster_size[root] = new_size;
        let (cluster_a, cluster_b) = if la < lb { (la, lb) } else { (lb, la) };
        merges.push(Merge {
            cluster_a,
            cluster_b,
            distance: h,
            size: new_size,
        });
    }

    Dendrogram {
        n_leaves: n,
        merges,
    }
}

/// Lance-Williams update of all distances after merging `x` and `y` at
/// height `d_xy`. The merged cluster takes the slot `min(x, y)`.
fn merge(
    dis: &mut Condensed,
    size: &mut [usize],
    active: &mut [bool],
    linkage: Linkage,
    x: usize,
    y: usize,
    d_xy: f64,
) {
    let keep = x.min(y);
    let drop = x.max(y);
    let (sx, sy) = (size[x] as f64, size[y] as f64);
    for z in 0..dis.n {
        if !active[z] || z == x || z == y {
            continue;
        }
        let d_xz = dis.get(x, z);
        let d_yz = dis.get(y, z);
        let updated = match linkage {
            Linkage::Single => d_xz.min(d_yz),
            Linkage::Average => (sx * d_xz + sy * d_yz) / (sx + sy),
            Linkage::Ward => {
                let sz = size[z] as f64;
                let t = 1.0 / (sx + sy + sz);
                let sq = ((sx + sz) * t) * (d_xz * d_xz) + ((sy + sz) * t) * (d_yz * d_yz)
                    - (sz * t) * (d_xy * d_xy);
                math::sqrt(sq.max(0.0))
            }
        };
        dis.set(keep, z, updated);
    }
    size[keep] += size[drop];
    active[drop] = false;
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            // Deterministic: the smaller root becomes the parent.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}
