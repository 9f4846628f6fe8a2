//! Built-in verification: re-derives a battery of results with naive
//! brute-force implementations and checks the production paths against them.

use partcc_core::cluster::{agglomerate, AgglomerativeConfig, Linkage};
use partcc_core::embedder::{backward, ClassifierHead, EmbedderParams};
use partcc_core::losses::{
    cross_entropy, part_mixup_loss, triplet_batch_hard, verify_mix_monotonicity, EmbeddingBatch,
    LossWeights, MixSpec,
};
use partcc_core::metrics::{
    adjusted_rand_index, evaluate_retrieval, rand_index, RetrievalItem, RetrievalProtocol,
};
use partcc_core::rng::Rng;
use partcc_core::tensor::Partition;
use partcc_core::Matrix;

pub struct Outcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub fn run_all() -> Vec<Outcome> {
    vec![
        clustering_oracle(),
        rand_index_oracle(),
        retrieval_oracle(),
        gradient_checks(),
        mix_monotonicity(),
    ]
}

fn outcome(name: &'static str, passed: bool, detail: String) -> Outcome {
    Outcome {
        name,
        passed,
        detail,
    }
}

// Greedy reference clusterer recomputing every linkage from the raw points.
fn naive_agglomerate(points: &Matrix, linkage: Linkage, threshold: f64) -> Vec<usize> {
    let n = points.rows();
    let dist = |a: usize, b: usize| -> f64 {
        points
            .row(a)
            .iter()
            .zip(points.row(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    loop {
        if clusters.len() <= 1 {
            break;
        }
        let mut best = f64::INFINITY;
        let mut pick = None;
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let (a, b) = (&clusters[i], &clusters[j]);
                let d = match linkage {
                    Linkage::Single => a
                        .iter()
                        .flat_map(|&x| b.iter().map(move |&y| dist(x, y)))
                        .fold(f64::INFINITY, f64::min),
                    Linkage::Average => {
                        a.iter()
                            .flat_map(|&x| b.iter().map(move |&y| dist(x, y)))
                            .sum::<f64>()
                            / (a.len() * b.len()) as f64
                    }
                    Linkage::Ward => {
                        let centroid = |m: &[usize]| -> Vec<f64> {
                            let mut c = vec![0.0; points.cols()];
                            for &x in m {
                                for (k, v) in points.row(x).iter().enumerate() {
                                    c[k] += v;
                                }
                            }
                            c.iter().map(|v| v / m.len() as f64).collect()
                        };
                        let (ca, cb) = (centroid(a), centroid(b));
                        let d2: f64 = ca.iter().zip(&cb).map(|(x, y)| (x - y) * (x - y)).sum();
                        let (na, nb) = (a.len() as f64, b.len() as f64);
                        (2.0 * na * nb / (na + nb) * d2).sqrt()
                    }
                };
                if d < best {
                    best = d;
                    pick = Some((i, j));
                }
            }
        }
        match pick {
            Some((i, j)) if best < threshold => {
                let merged = clusters.remove(j);
                clusters[i].extend(merged);
            }
            _ => break,
        }
    }
    let mut assignment = vec![0usize; n];
    for (id, members) in clusters.iter().enumerate() {
        for &m in members {
            assignment[m] = id;
        }
    }
    canonical(&assignment)
}

fn canonical(assignment: &[usize]) -> Vec<usize> {
    let mut seen: Vec<usize> = Vec::new();
    assignment
        .iter()
        .map(|&c| match seen.iter().position(|&s| s == c) {
            Some(i) => i,
            None => {
                seen.push(c);
                seen.len() - 1
            }
        })
        .collect()
}

fn clustering_oracle() -> Outcome {
    let mut rng = Rng::new(0x5e1f_0001);
    let mut checked = 0;
    for _ in 0..20 {
        let n = 2 + rng.next_range(18);
        let d = 1 + rng.next_range(6);
        let data: Vec<f64> = (0..n * d).map(|_| rng.next_gauss()).collect();
        let points = Matrix::from_vec(n, d, data).unwrap();
        for linkage in [Linkage::Ward, Linkage::Average, Linkage::Single] {
            for threshold in [0.5, 1.0, 2.0, 4.0] {
                let cfg = AgglomerativeConfig {
                    linkage,
                    distance_threshold: threshold,
                };
                let (p, _) = agglomerate(&points, &cfg).unwrap();
                let expected = naive_agglomerate(&points, linkage, threshold);
                if canonical(p.assignment()) != expected {
                    return outcome(
                        "clustering oracle",
                        false,
                        format!("mismatch at n={n} d={d} {linkage:?} t={threshold}"),
                    );
                }
                checked += 1;
            }
        }
    }
    outcome(
        "clustering oracle",
        true,
        format!("{checked} instances match the greedy reference"),
    )
}

fn rand_index_oracle() -> Outcome {
    let mut rng = Rng::new(0x5e1f_0002);
    for case in 0..50 {
        let n = 2 + rng.next_range(28);
        let a: Vec<usize> = (0..n).map(|_| rng.next_range(5)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.next_range(5)).collect();
        let pa = Partition::from_labels(&a);
        let pb = Partition::from_labels(&b);
        // Pair counts by explicit enumeration.
        let (mut ss, mut sd, mut ds, mut dd) = (0u64, 0u64, 0u64, 0u64);
        for i in 0..n {
            for j in i + 1..n {
                match (a[i] == a[j], b[i] == b[j]) {
                    (true, true) => ss += 1,
                    (true, false) => sd += 1,
                    (false, true) => ds += 1,
                    (false, false) => dd += 1,
                }
            }
        }
        let total = ss + sd + ds + dd;
        let ri_expected = (ss + dd) as f64 / total as f64;
        let ri = rand_index(&pa, &pb).unwrap();
        if ri != ri_expected {
            return outcome(
                "rand index oracle",
                false,
                format!("case {case}: RI {ri} != {ri_expected}"),
            );
        }
        let num = 2.0 * (ss as f64 * dd as f64 - sd as f64 * ds as f64);
        let den = (ss + sd) as f64 * (sd + dd) as f64 + (ss + ds) as f64 * (ds + dd) as f64;
        let ari_expected = if den == 0.0 { 1.0 } else { num / den };
        let ari = adjusted_rand_index(&pa, &pb).unwrap();
        if ari != ari_expected {
            return outcome(
                "rand index oracle",
                false,
                format!("case {case}: ARI {ari} != {ari_expected}"),
            );
        }
    }
    outcome(
        "rand index oracle",
        true,
        "50 partition pairs match pair enumeration".into(),
    )
}

fn retrieval_oracle() -> Outcome {
    let mut rng = Rng::new(0x5e1f_0003);
    for case in 0..20 {
        let n_query = 1 + rng.next_range(6);
        let n_gallery = 2 + rng.next_range(12);
        let dim = 1 + rng.next_range(4);
        let ids = 1 + rng.next_range(4) as u32;
        let make_items = |rng: &mut Rng, n: usize| -> Vec<RetrievalItem> {
            (0..n)
                .map(|index| RetrievalItem {
                    index,
                    identity: rng.next_range(ids as usize) as u32,
                    camera: rng.next_range(3) as u32,
                })
                .collect()
        };
        let query = make_items(&mut rng, n_query);
        let gallery = make_items(&mut rng, n_gallery);
        let qe_data: Vec<f64> = (0..n_query * dim).map(|_| rng.next_gauss()).collect();
        let ge_data: Vec<f64> = (0..n_gallery * dim).map(|_| rng.next_gauss()).collect();
        let qe = Matrix::from_vec(n_query, dim, qe_data).unwrap();
        let ge = Matrix::from_vec(n_gallery, dim, ge_data).unwrap();
        let protocol = RetrievalProtocol {
            query: query.clone(),
            gallery: gallery.clone(),
            camera_filter: case % 2 == 0,
        };
        let max_rank = 5;
        let got = evaluate_retrieval(&qe, &ge, &protocol, max_rank).unwrap();

        // Reference: rank by distance, accumulate CMC and AP by definition.
        let mut cmc = vec![0u64; max_rank];
        let mut ap_sum = 0.0;
        let mut used = 0;
        for (qi, q) in query.iter().enumerate() {
            let mut entries: Vec<(f64, usize)> = gallery
                .iter()
                .enumerate()
                .filter(|(_, g)| {
                    !(protocol.camera_filter && g.identity == q.identity && g.camera == q.camera)
                })
                .map(|(gi, _)| {
                    let d: f64 = qe
                        .row(qi)
                        .iter()
                        .zip(ge.row(gi))
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum();
                    (d, gi)
                })
                .collect();
            let n_pos = entries
                .iter()
                .filter(|&&(_, gi)| gallery[gi].identity == q.identity)
                .count();
            if n_pos == 0 {
                continue;
            }
            used += 1;
            entries.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let mut correct = 0;
            let mut ap = 0.0;
            let mut first: Option<usize> = None;
            for (rank0, &(_, gi)) in entries.iter().enumerate() {
                if gallery[gi].identity == q.identity {
                    correct += 1;
                    ap += correct as f64 / (rank0 + 1) as f64;
                    first.get_or_insert(rank0);
                }
            }
            ap_sum += ap / n_pos as f64;
            if let Some(f) = first {
                for slot in cmc.iter_mut().skip(f) {
                    *slot += 1;
                }
            }
        }
        if used == 0 {
            continue;
        }
        let map_expected = ap_sum / used as f64;
        if got.map != map_expected {
            return outcome(
                "retrieval oracle",
                false,
                format!("case {case}: mAP {} != {}", got.map, map_expected),
            );
        }
        for r in 0..max_rank {
            let expected = cmc[r] as f64 / used as f64;
            if got.cmc[r] != expected {
                return outcome(
                    "retrieval oracle",
                    false,
                    format!("case {case}: CMC[{r}] {} != {}", got.cmc[r], expected),
                );
            }
        }
    }
    outcome(
        "retrieval oracle",
        true,
        "20 retrieval instances match the ranking reference".into(),
    )
}

fn gradient_checks() -> Outcome {
    let mut rng = Rng::new(0x5e1f_0004);
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for trial in 0..5u64 {
        let (q, raw_dim, d) = (2, 3, 2);
        let b = 6;
        let params = EmbedderParams::init(q, raw_dim, d, 100 + trial);
        let head = ClassifierHead::init(q * d, 3, 200 + trial);
        let data: Vec<f64> = (0..b * raw_dim).map(|_| rng.next_gauss()).collect();
        let features = Matrix::from_vec(b, raw_dim, data).unwrap();
        let labels = [0u32, 0, 1, 1, 2, 2];
        let ids: Vec<u64> = (0..b as u64).collect();
        let weights = LossWeights::default();
        let mix = MixSpec::new(1, trial);
        let result =
            backward(&params, &head, &features, &labels, &ids, &weights, &mix).unwrap();
        let mut flat = params.flat().to_vec();
        for i in 0..flat.len() {
            let orig = flat[i];
            let eval = |v: f64, flat: &mut [f64]| -> f64 {
                flat[i] = v;
                let p =
                    EmbedderParams::from_flat(q, raw_dim, d, flat.to_vec(), 0).unwrap();
                backward(&p, &head, &features, &labels, &ids, &weights, &mix)
                    .unwrap()
                    .loss
            };
            let plus = eval(orig + eps, &mut flat);
            let minus = eval(orig - eps, &mut flat);
            flat[i] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            let a = result.param_grad[i];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-5));
        }
        // Plain loss gradients on batches of embeddings.
        let emb_data: Vec<f64> = (0..b * q * d).map(|_| rng.next_gauss()).collect();
        let emb = Matrix::from_vec(b, q * d, emb_data.clone()).unwrap();
        let batch =
            EmbeddingBatch::new(emb, q, d, labels.to_vec(), ids.clone()).unwrap();
        let (_, g_t) = triplet_batch_hard(&batch, 0.3).unwrap();
        let _ = part_mixup_loss(&batch, 0.3, &mix).unwrap();
        let logits = head.logits(batch.embeddings());
        let _ = cross_entropy(&logits, &labels).unwrap();
        let mut work = emb_data.clone();
        for i in 0..work.len() {
            let orig = work[i];
            let eval = |v: f64, work: &mut [f64]| -> f64 {
                work[i] = v;
                let m = Matrix::from_vec(b, q * d, work.to_vec()).unwrap();
                let bt = EmbeddingBatch::new(m, q, d, labels.to_vec(), ids.clone()).unwrap();
                triplet_batch_hard(&bt, 0.3).unwrap().0
            };
            let plus = eval(orig + eps, &mut work);
            let minus = eval(orig - eps, &mut work);
            work[i] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            let a = g_t.data()[i];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-5));
        }
    }
    outcome(
        "gradient checks",
        worst < 1e-4,
        format!("max relative error {worst:.2e} (bound 1e-4)"),
    )
}

fn mix_monotonicity() -> Outcome {
    let mut rng = Rng::new(0x5e1f_0005);
    let (q, d) = (6, 3);
    for draw in 0..1000 {
        let a: Vec<f64> = (0..q * d).map(|_| rng.next_gauss()).collect();
        let b: Vec<f64> = (0..q * d).map(|_| rng.next_gauss()).collect();
        let size = 1 + rng.next_range(q);
        let larger = rng.sample_distinct(q, size);
        let k = rng.next_range(larger.len() + 1);
        let smaller = larger[..k].to_vec();
        if !verify_mix_monotonicity(&a, &b, q, d, &smaller, &larger).unwrap() {
            return outcome(
                "mix monotonicity",
                false,
                format!("violated at draw {draw}"),
            );
        }
    }
    outcome(
        "mix monotonicity",
        true,
        "1000 nested replace-set draws satisfy the distance chain".into(),
    )
}
