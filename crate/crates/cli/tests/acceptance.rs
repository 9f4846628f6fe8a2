//! Acceptance suite: one test per criterion, every tolerance pinned in code.
//! Each test prints a `PASS criterion N` line with the measured values.

use std::fs;
use std::process::Command;

use partcc_core::cluster::{agglomerate, cluster_parts, AgglomerativeConfig, Linkage};
use partcc_core::consensus::{co_association, consensus_partition, AgreementLevel};
use partcc_core::embedder::{backward, ClassifierHead, EmbedderParams};
use partcc_core::losses::{
    cross_entropy, part_mixup_loss, part_mixup_prehinge_terms, triplet_batch_hard,
    triplet_prehinge_terms, verify_mix_monotonicity, EmbeddingBatch, LossWeights, MixSpec,
};
use partcc_core::metrics::{
    adjusted_rand_index, evaluate_retrieval, pairwise_label_quality, rand_index, RetrievalItem,
    RetrievalProtocol,
};
use partcc_core::pseudolabel::{
    filter_clusters, run_iteration, run_pipeline, run_supervised_baseline, EvalData,
    PipelineConfig, PipelineData,
};
use partcc_core::rng::Rng;
use partcc_core::synth::{generate, generate_block, split_labeled, SynthConfig};
use partcc_core::tensor::Partition;
use partcc_core::Matrix;

// --- shared helpers ---------------------------------------------------------

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

/// Greedy reference clusterer: every step recomputes all linkages from the
/// raw points (per-step centroid and member bookkeeping, no incremental
/// update formulas), merges the global minimum while strictly below the
/// threshold.
fn naive_agglomerate(points: &Matrix, linkage: Linkage, threshold: f64) -> Vec<usize> {
    let n = points.rows();
    let d = points.cols();
    let mut pair = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for c in 0..d {
                let diff = points.row(i)[c] - points.row(j)[c];
                acc += diff * diff;
            }
            pair[i * n + j] = acc.sqrt();
        }
    }
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    while clusters.len() > 1 {
        // Fresh centroids for this step (Ward only).
        let centroids: Vec<Vec<f64>> = if linkage == Linkage::Ward {
            clusters
                .iter()
                .map(|members| {
                    let mut c = vec![0.0; d];
                    for &m in members {
                        for (k, v) in points.row(m).iter().enumerate() {
                            c[k] += v;
                        }
                    }
                    for v in &mut c {
                        *v /= members.len() as f64;
                    }
                    c
                })
                .collect()
        } else {
            Vec::new()
        };
        let mut best = f64::INFINITY;
        let mut pick = None;
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let dist = match linkage {
                    Linkage::Single => {
                        let mut m = f64::INFINITY;
                        for &x in &clusters[i] {
                            for &y in &clusters[j] {
                                m = m.min(pair[x * n + y]);
                            }
                        }
                        m
                    }
                    Linkage::Average => {
                        let mut s = 0.0;
                        for &x in &clusters[i] {
                            for &y in &clusters[j] {
                                s += pair[x * n + y];
                            }
                        }
                        s / (clusters[i].len() * clusters[j].len()) as f64
                    }
                    Linkage::Ward => {
                        let mut d2 = 0.0;
                        for k in 0..d {
                            let diff = centroids[i][k] - centroids[j][k];
                            d2 += diff * diff;
                        }
                        let (na, nb) = (clusters[i].len() as f64, clusters[j].len() as f64);
                        (2.0 * na * nb / (na + nb) * d2).sqrt()
                    }
                };
                if dist < best {
                    best = dist;
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

fn truth_partition(labels: &partcc_core::tensor::LabelTable) -> Partition {
    Partition::from_labels(&labels.rows().iter().map(|r| r.identity).collect::<Vec<_>>())
}

fn benchmark_eval_data<'a>(
    eval: &'a partcc_core::synth::SynthOutput,
) -> EvalData<'a> {
    EvalData {
        features: &eval.raw_features,
        labels: &eval.labels,
        camera_filter: true,
        queries_per_identity: 2,
    }
}

// --- criteria ----------------------------------------------------------------

#[test]
fn acceptance_01_clustering_oracle() {
    let mut rng = Rng::new(0xacc1);
    let mut instances = 0;
    while instances < 200 {
        let n = 2 + rng.next_range(63);
        let d = 1 + rng.next_range(16);
        let scale = [0.3, 1.0, 3.0][instances % 3];
        let data: Vec<f64> = (0..n * d).map(|_| rng.next_gauss() * scale).collect();
        let points = Matrix::from_vec(n, d, data).unwrap();
        for linkage in [Linkage::Ward, Linkage::Average, Linkage::Single] {
            for threshold in [0.5, 1.0, 2.0, 4.0] {
                let cfg = AgglomerativeConfig {
                    linkage,
                    distance_threshold: threshold,
                };
                let (partition, _) = agglomerate(&points, &cfg).unwrap();
                let expected = naive_agglomerate(&points, linkage, threshold);
                assert_eq!(
                    canonical(partition.assignment()),
                    expected,
                    "instance {instances}: n={n} d={d} {linkage:?} t={threshold}"
                );
            }
        }
        instances += 1;
    }
    println!("PASS criterion 1: 200 instances x 3 linkages x 4 thresholds match the naive oracle exactly");
}

#[test]
fn acceptance_02_consensus_dominance() {
    let n_seeds = 10;
    let (mut consensus_sum, mut part_sum, mut concat_sum) = (0.0, 0.0, 0.0);
    for seed in 0..n_seeds {
        let config = SynthConfig {
            seed,
            ..SynthConfig::default()
        };
        assert_eq!(
            (config.n_identities, config.images_per_identity, config.n_parts, config.dim),
            (50, 6, 6, 16)
        );
        assert_eq!((config.noise_sigma, config.part_confusion), (0.35, 0.15));
        let out = generate(&config).unwrap();
        let truth = truth_partition(&out.labels);
        let cluster_cfg = AgglomerativeConfig::default();
        let parts = cluster_parts(&out.embeddings, &cluster_cfg).unwrap();
        let matrix = co_association(&parts).unwrap();
        let consensus =
            consensus_partition(&matrix, AgreementLevel::new(config.n_parts).unwrap()).unwrap();
        consensus_sum += adjusted_rand_index(&consensus, &truth).unwrap();
        part_sum += parts
            .iter()
            .map(|p| adjusted_rand_index(p, &truth).unwrap())
            .fold(f64::MIN, f64::max);
        let (concat, _) = agglomerate(&out.embeddings.concat_parts(), &cluster_cfg).unwrap();
        concat_sum += adjusted_rand_index(&concat, &truth).unwrap();
    }
    let n = n_seeds as f64;
    let (consensus, max_part, concat) = (consensus_sum / n, part_sum / n, concat_sum / n);
    assert!(
        consensus > max_part + 0.01,
        "consensus {consensus:.4} does not beat max per-part {max_part:.4} by 0.01"
    );
    assert!(
        consensus > concat + 0.01,
        "consensus {consensus:.4} does not beat concatenated {concat:.4} by 0.01"
    );
    println!(
        "PASS criterion 2: ARI consensus {consensus:.4} > concat {concat:.4} and > max part {max_part:.4} (margins {:.4} / {:.4})",
        consensus - concat,
        consensus - max_part
    );
}

#[test]
fn acceptance_03_agreement_sweep() {
    let n_seeds = 10;
    let levels = [6usize, 5, 4, 3];
    let mut precision_means = vec![0.0f64; levels.len()];
    for seed in 0..n_seeds {
        let config = SynthConfig {
            seed,
            ..SynthConfig::default()
        };
        let out = generate(&config).unwrap();
        let parts = cluster_parts(&out.embeddings, &AgglomerativeConfig::default()).unwrap();
        let matrix = co_association(&parts).unwrap();
        for (slot, &k) in levels.iter().enumerate() {
            let consensus =
                consensus_partition(&matrix, AgreementLevel::new(k).unwrap()).unwrap();
            let (items, ids) = filter_clusters(&consensus, 5).unwrap();
            let (precision, _) = pairwise_label_quality(&items, &ids, &out.labels).unwrap();
            precision_means[slot] +=
                precision.expect("pseudo-label pairs exist at this scale") / n_seeds as f64;
        }
    }
    for w in precision_means.windows(2) {
        assert!(
            w[0] >= w[1],
            "precision is not non-increasing over k=6,5,4,3: {precision_means:?}"
        );
    }
    println!(
        "PASS criterion 3: pseudo-label precision non-increasing over agreement 6,5,4,3: {:?}",
        precision_means
            .iter()
            .map(|p| (p * 1e4).round() / 1e4)
            .collect::<Vec<_>>()
    );
}

#[test]
fn acceptance_04_mix_monotonicity() {
    let mut rng = Rng::new(0xacc4);
    let (q, d) = (6, 4);
    for draw in 0..10_000 {
        let anchor: Vec<f64> = (0..q * d).map(|_| rng.next_gauss()).collect();
        let donor: Vec<f64> = (0..q * d).map(|_| rng.next_gauss()).collect();
        let size = 1 + rng.next_range(q);
        let larger = rng.sample_distinct(q, size);
        let k = rng.next_range(larger.len() + 1);
        let smaller = larger[..k].to_vec();
        assert!(
            verify_mix_monotonicity(&anchor, &donor, q, d, &smaller, &larger).unwrap(),
            "distance chain violated at draw {draw}"
        );
    }
    println!("PASS criterion 4: 10000 nested replace-set draws satisfy the distance chain exactly");
}

#[test]
fn acceptance_05_part_mixup_hardness() {
    let mut rng = Rng::new(0xacc5);
    for batch_idx in 0..500u64 {
        let n_ids = 2 + rng.next_range(4);
        let k = 2 + rng.next_range(2);
        let q = 2 + rng.next_range(5);
        let d = 1 + rng.next_range(4);
        let b = n_ids * k;
        let data: Vec<f64> = (0..b * q * d).map(|_| rng.next_gauss()).collect();
        let emb = Matrix::from_vec(b, q * d, data).unwrap();
        let labels: Vec<u32> = (0..b).map(|i| (i / k) as u32).collect();
        let ids: Vec<u64> = (0..b as u64).collect();
        let batch = EmbeddingBatch::new(emb, q, d, labels, ids).unwrap();
        let spec = MixSpec::new((q - 1).max(1), batch_idx);
        let pm = part_mixup_prehinge_terms(&batch, 0.3, &spec).unwrap();
        let tr = triplet_prehinge_terms(&batch, 0.3).unwrap();
        for (a, (p, t)) in pm.iter().zip(tr.iter()).enumerate() {
            assert!(
                p >= t,
                "batch {batch_idx}, anchor {a}: part-mixup term {p} < triplet term {t}"
            );
        }
    }
    println!("PASS criterion 5: 500 batches, every pre-hinge part-mixup term >= the batch-hard term");
}

#[test]
fn acceptance_06_gradient_checks() {
    const EPS: f64 = 1e-5;
    const BOUND: f64 = 1e-4;
    let rel = |a: f64, f: f64| (a - f).abs() / a.abs().max(f.abs()).max(1e-5);
    let mut worst = 0.0f64;
    let mut rng = Rng::new(0xacc6);

    for config_idx in 0..100u64 {
        match config_idx % 4 {
            // Cross-entropy over logits.
            0 => {
                let b = 2 + rng.next_range(5);
                let c = 2 + rng.next_range(6);
                let data: Vec<f64> = (0..b * c).map(|_| rng.next_gauss() * 2.0).collect();
                let logits = Matrix::from_vec(b, c, data.clone()).unwrap();
                let labels: Vec<u32> = (0..b).map(|_| rng.next_range(c) as u32).collect();
                let (_, grad) = cross_entropy(&logits, &labels).unwrap();
                let mut work = data;
                for i in 0..work.len() {
                    let orig = work[i];
                    let mut eval = |v: f64, work: &mut Vec<f64>| {
                        work[i] = v;
                        let l = Matrix::from_vec(b, c, work.clone()).unwrap();
                        cross_entropy(&l, &labels).unwrap().0
                    };
                    let fd = (eval(orig + EPS, &mut work) - eval(orig - EPS, &mut work))
                        / (2.0 * EPS);
                    work[i] = orig;
                    worst = worst.max(rel(grad.data()[i], fd));
                }
            }
            // Batch-hard triplet / part-mixup over embeddings.
            1 | 2 => {
                let (q, d) = (2 + rng.next_range(3), 1 + rng.next_range(3));
                let (n_ids, k) = (3, 2);
                let b = n_ids * k;
                let data: Vec<f64> = (0..b * q * d).map(|_| rng.next_gauss()).collect();
                let labels: Vec<u32> = (0..b).map(|i| (i / k) as u32).collect();
                let ids: Vec<u64> = (0..b as u64).collect();
                let spec = MixSpec::new((q - 1).max(1), config_idx);
                let use_pm = config_idx % 4 == 2;
                let loss_of = |raw: &[f64]| {
                    let emb = Matrix::from_vec(b, q * d, raw.to_vec()).unwrap();
                    let batch =
                        EmbeddingBatch::new(emb, q, d, labels.clone(), ids.clone()).unwrap();
                    if use_pm {
                        part_mixup_loss(&batch, 0.3, &spec).unwrap().0
                    } else {
                        triplet_batch_hard(&batch, 0.3).unwrap().0
                    }
                };
                let emb = Matrix::from_vec(b, q * d, data.clone()).unwrap();
                let batch = EmbeddingBatch::new(emb, q, d, labels.clone(), ids.clone()).unwrap();
                let grad = if use_pm {
                    part_mixup_loss(&batch, 0.3, &spec).unwrap().1
                } else {
                    triplet_batch_hard(&batch, 0.3).unwrap().1
                };
                let mut work = data;
                for i in 0..work.len() {
                    let orig = work[i];
                    work[i] = orig + EPS;
                    let plus = loss_of(&work);
                    work[i] = orig - EPS;
                    let minus = loss_of(&work);
                    work[i] = orig;
                    worst = worst.max(rel(grad.data()[i], (plus - minus) / (2.0 * EPS)));
                }
            }
            // Full backward through the normalization into the parameters.
            _ => {
                let (q, raw_dim, d) = (2, 3, 2);
                let b = 6;
                let params = EmbedderParams::init(q, raw_dim, d, 50 + config_idx);
                let head = ClassifierHead::init(q * d, 3, 90 + config_idx);
                let data: Vec<f64> = (0..b * raw_dim).map(|_| rng.next_gauss()).collect();
                let features = Matrix::from_vec(b, raw_dim, data).unwrap();
                let labels = [0u32, 0, 1, 1, 2, 2];
                let ids: Vec<u64> = (0..b as u64).collect();
                let weights = LossWeights::default();
                let mix = MixSpec::new(1, config_idx);
                let result =
                    backward(&params, &head, &features, &labels, &ids, &weights, &mix).unwrap();
                let mut flat = params.flat().to_vec();
                for i in 0..flat.len() {
                    let orig = flat[i];
                    let mut eval = |v: f64, flat: &mut Vec<f64>| {
                        flat[i] = v;
                        let p = EmbedderParams::from_flat(q, raw_dim, d, flat.clone(), 0).unwrap();
                        backward(&p, &head, &features, &labels, &ids, &weights, &mix)
                            .unwrap()
                            .loss
                    };
                    let fd = (eval(orig + EPS, &mut flat) - eval(orig - EPS, &mut flat))
                        / (2.0 * EPS);
                    flat[i] = orig;
                    worst = worst.max(rel(result.param_grad[i], fd));
                }
            }
        }
    }
    assert!(worst < BOUND, "max relative gradient error {worst:.3e} >= {BOUND:.0e}");
    println!("PASS criterion 6: 100 gradient configurations, max relative error {worst:.3e} < 1e-4");
}

#[test]
fn acceptance_07_pipeline_beats_supervised_baseline() {
    let n_seeds = 5;
    let mut baseline_mean = 0.0;
    let mut iter_means = [0.0f64; 3];
    let mut coverage_means = [0.0f64; 3];
    for seed in 0..n_seeds {
        let config = SynthConfig {
            seed,
            ..SynthConfig::default()
        };
        let train_out = generate(&config).unwrap();
        let eval_out = generate_block(&config, config.n_identities, 80).unwrap();
        let split = split_labeled(&train_out.labels, 1.0 / 3.0, seed).unwrap();
        let data = PipelineData {
            features: &train_out.raw_features,
            n_parts: config.n_parts,
            dim: config.dim,
            truth: Some(&train_out.labels),
            eval: Some(benchmark_eval_data(&eval_out)),
        };
        let pipeline_config = PipelineConfig {
            n_iterations: 3,
            seed,
            ..PipelineConfig::default()
        };
        let (_, baseline_eval) =
            run_supervised_baseline(&data, &split, &pipeline_config).unwrap();
        baseline_mean += baseline_eval.unwrap().rank1 / n_seeds as f64;
        let outcome = run_pipeline(&data, split, &pipeline_config).unwrap();
        assert_eq!(outcome.reports.len(), 3, "seed {seed} stopped early");
        for (slot, report) in outcome.reports.iter().enumerate() {
            iter_means[slot] += report.eval.as_ref().unwrap().rank1 / n_seeds as f64;
            coverage_means[slot] += report.n_pseudo_labeled as f64 / n_seeds as f64;
        }
    }
    assert!(
        iter_means[2] > baseline_mean,
        "final rank-1 {:.4} does not exceed the supervised baseline {baseline_mean:.4}",
        iter_means[2]
    );
    for t in 1..3 {
        assert!(
            iter_means[t] > iter_means[0],
            "iteration {} rank-1 {:.4} does not exceed iteration 1 ({:.4})",
            t + 1,
            iter_means[t],
            iter_means[0]
        );
    }
    println!(
        "PASS criterion 7: rank-1 baseline {baseline_mean:.4}, iterations {:.4} / {:.4} / {:.4} (mean pseudo-labels {:.1} / {:.1} / {:.1})",
        iter_means[0], iter_means[1], iter_means[2],
        coverage_means[0], coverage_means[1], coverage_means[2]
    );
}

#[test]
fn acceptance_08_zero_noise_exactness() {
    let config = SynthConfig {
        noise_sigma: 0.0,
        part_confusion: 0.0,
        seed: 5,
        ..SynthConfig::default()
    };
    let out = generate(&config).unwrap();
    let split = split_labeled(&out.labels, 1.0 / 3.0, 5).unwrap();
    let n_unlabeled = split.unlabeled().len();
    let data = PipelineData {
        features: &out.raw_features,
        n_parts: config.n_parts,
        dim: config.dim,
        truth: Some(&out.labels),
        eval: None,
    };
    let pipeline_config = PipelineConfig {
        n_iterations: 1,
        seed: 5,
        ..PipelineConfig::default()
    };
    let (_, next, report) = run_iteration(&split, &data, &pipeline_config).unwrap();
    assert_eq!(
        report.n_pseudo_labeled, n_unlabeled,
        "not every unlabeled image was pseudo-labeled"
    );
    assert_eq!(next.pseudo_labeled().len(), n_unlabeled);
    assert_eq!(report.pseudo_precision, Some(1.0));
    assert_eq!(report.pseudo_recall, Some(1.0));
    println!(
        "PASS criterion 8: zero-noise iteration 1 pseudo-labels all {n_unlabeled} unlabeled images with precision and recall exactly 1.0"
    );
}

#[test]
fn acceptance_09_metric_oracles() {
    let mut rng = Rng::new(0xacc9);
    // Rand / adjusted Rand against explicit pair enumeration.
    for case in 0..200 {
        let n = 2 + rng.next_range(28);
        let a: Vec<usize> = (0..n).map(|_| rng.next_range(6)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.next_range(6)).collect();
        let pa = Partition::from_labels(&a);
        let pb = Partition::from_labels(&b);
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
        assert_eq!(
            rand_index(&pa, &pb).unwrap(),
            (ss + dd) as f64 / total as f64,
            "RI mismatch at case {case}"
        );
        let num = 2.0 * (ss as f64 * dd as f64 - sd as f64 * ds as f64);
        let den = (ss + sd) as f64 * (sd + dd) as f64 + (ss + ds) as f64 * (ds + dd) as f64;
        let expected_ari = if den == 0.0 { 1.0 } else { num / den };
        assert_eq!(
            adjusted_rand_index(&pa, &pb).unwrap(),
            expected_ari,
            "ARI mismatch at case {case}"
        );
    }

    // CMC / mAP against a brute-force ranking oracle.
    let mut checked = 0;
    for case in 0..120 {
        let n_query = 1 + rng.next_range(5);
        let n_gallery = 2 + rng.next_range(10);
        let dim = 1 + rng.next_range(4);
        let ids = 1 + rng.next_range(4);
        let item = |rng: &mut Rng, index: usize| RetrievalItem {
            index,
            identity: rng.next_range(ids) as u32,
            camera: rng.next_range(3) as u32,
        };
        let query: Vec<RetrievalItem> = (0..n_query).map(|i| item(&mut rng, i)).collect();
        let gallery: Vec<RetrievalItem> = (0..n_gallery).map(|i| item(&mut rng, i)).collect();
        let qe = Matrix::from_vec(
            n_query,
            dim,
            (0..n_query * dim).map(|_| rng.next_gauss()).collect(),
        )
        .unwrap();
        let ge = Matrix::from_vec(
            n_gallery,
            dim,
            (0..n_gallery * dim).map(|_| rng.next_gauss()).collect(),
        )
        .unwrap();
        let protocol = RetrievalProtocol {
            query: query.clone(),
            gallery: gallery.clone(),
            camera_filter: case % 2 == 0,
        };
        let max_rank = 5;
        let got = evaluate_retrieval(&qe, &ge, &protocol, max_rank).unwrap();

        let mut cmc = vec![0u64; max_rank];
        let mut ap_sum = 0.0;
        let mut used = 0usize;
        for (qi, q) in query.iter().enumerate() {
            let mut entries: Vec<(f64, usize)> = gallery
                .iter()
                .enumerate()
                .filter(|(_, g)| {
                    !(protocol.camera_filter && g.identity == q.identity && g.camera == q.camera)
                })
                .map(|(gi, _)| {
                    let mut acc = 0.0;
                    for c in 0..dim {
                        let diff = qe.row(qi)[c] - ge.row(gi)[c];
                        acc += diff * diff;
                    }
                    (acc, gi)
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
            entries.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
            let mut correct = 0usize;
            let mut ap = 0.0;
            let mut first = None;
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
            assert_eq!(got.n_queries_used, 0);
            continue;
        }
        checked += 1;
        assert_eq!(got.map, ap_sum / used as f64, "mAP mismatch at case {case}");
        for r in 0..max_rank {
            assert_eq!(
                got.cmc[r],
                cmc[r] as f64 / used as f64,
                "CMC[{r}] mismatch at case {case}"
            );
        }
        if checked >= 100 {
            break;
        }
    }
    assert!(checked >= 100, "only {checked} usable retrieval instances");
    println!(
        "PASS criterion 9: RI/ARI exact on 200 partition pairs; CMC/mAP exact on {checked} retrieval instances"
    );
}

#[test]
fn acceptance_10_pipeline_determinism() {
    let dir = std::env::temp_dir().join(format!("partcc-acc10-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    let config_path = dir.join("config.json");
    fs::write(
        &config_path,
        r#"{
  "seed": 77,
  "synth": {"n_identities": 12, "images_per_identity": 6, "dim": 8, "raw_dim": 64},
  "trainer": {"epochs": 8, "batch_p": 4, "batch_k": 3},
  "pseudolabel": {"n_iterations": 2},
  "eval": {"n_identities": 8}
}"#,
    )
    .unwrap();
    let run_once = |out_dir: &std::path::Path| {
        let out = Command::new(env!("CARGO_BIN_EXE_partcc"))
            .args([
                "pipeline",
                "--config",
                config_path.to_str().unwrap(),
                "--output",
                out_dir.to_str().unwrap(),
            ])
            .output()
            .expect("pipeline runs");
        assert!(
            out.status.success(),
            "pipeline failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    let d1 = dir.join("run1");
    let d2 = dir.join("run2");
    run_once(&d1);
    run_once(&d2);
    for f in ["reports.jsonl", "final.json", "resolved_config.json"] {
        assert_eq!(
            fs::read(d1.join(f)).unwrap(),
            fs::read(d2.join(f)).unwrap(),
            "{f} differs between identical runs"
        );
    }
    println!("PASS criterion 10: two pipeline runs with identical config and seed produced byte-identical reports");
}
