//! Subcommand implementations. Every command reads its inputs, writes its
//! artifacts under the output directory, and leaves inputs untouched.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use partcc_core::cluster::cluster_part;
use partcc_core::consensus::{
    co_association, consensus_partition_with, AgreementLevel, ConsensusLinkage,
};
use partcc_core::embedder::{train_logged, EmbedderParams};
use partcc_core::metrics::{evaluate_retrieval, RetrievalItem, RetrievalProtocol};
use partcc_core::pseudolabel::{filter_clusters, run_pipeline, PipelineData, EvalData, SplitState};
use partcc_core::synth::{generate, generate_block, split_labeled};
use partcc_core::tensor::{LabelTable, PartEmbeddingTensor, Partition};

use crate::config::RunConfig;
use crate::report::{
    write_json, write_json_lines, ClusterSummary, ConsensusReport, EvaluateReport, GenReport,
    PipelineFinalReport, PseudoLabelReport, TrainReport,
};
use crate::{checkpoint, pet, tables, AppError};

/// Dense co-association matrices bound the consensus path to desk scale.
const MAX_CONSENSUS_ITEMS: usize = 20_000;

fn ensure_dir(dir: &Path) -> Result<(), AppError> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(format!("{}: {e}", dir.display())))
}

fn log_timing(dir: &Path, command: &str, started: Instant) {
    // Wall-clock only; reports stay timestamp-free so their bytes are
    // deterministic.
    let line = format!("{command} {} ms\n", started.elapsed().as_millis());
    if let Ok(mut f) = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(dir.join("timing.log"))
    {
        let _ = f.write_all(line.as_bytes());
    }
}

fn check_consensus_scale(n_items: usize) -> Result<(), AppError> {
    if n_items > MAX_CONSENSUS_ITEMS {
        return Err(AppError::validation(format!(
            "{n_items} items exceed the dense co-association limit of {MAX_CONSENSUS_ITEMS}; \
             split the input or raise the limit in a custom build"
        )));
    }
    Ok(())
}

fn agreement_for(agree: Option<usize>, q_parts: usize) -> Result<AgreementLevel, AppError> {
    let k = agree.unwrap_or(q_parts);
    if k == 0 || k > q_parts {
        return Err(AppError::validation(format!(
            "--agree {k} is out of bounds: must be between 1 and the number of parts ({q_parts})"
        )));
    }
    Ok(AgreementLevel::new(k)?)
}

fn load_embeddings(path: &Path) -> Result<PartEmbeddingTensor, AppError> {
    let (tensor, report) = pet::read_embeddings(path)?;
    if report.renormalized > 0 {
        eprintln!(
            "note: re-normalized {} drifted part vectors while loading {}",
            report.renormalized,
            path.display()
        );
    }
    Ok(tensor)
}

pub fn gen(config: &RunConfig, output: &Path) -> Result<(), AppError> {
    let started = Instant::now();
    ensure_dir(output)?;
    let synth = config.synth.to_core(config.seed);
    let out = generate(&synth)?;
    pet::write_embeddings(&output.join("embeddings.pet"), &out.embeddings)?;
    tables::write_labels(&output.join("labels.csv"), &out.labels)?;
    pet::write_raw(&output.join("raw_features.pet"), &out.raw_features)?;
    config.write_resolved(output)?;
    write_json(
        &output.join("gen_report.json"),
        &GenReport {
            config_hash: config.hash(),
            n_items: out.embeddings.n_items(),
            n_identities: out.labels.identities().len(),
            n_parts: synth.n_parts,
            dim: synth.dim,
            raw_dim: synth.raw_dim,
            files: vec![
                "embeddings.pet".into(),
                "labels.csv".into(),
                "raw_features.pet".into(),
            ],
        },
    )?;
    println!(
        "wrote {} items ({} identities) under {}",
        out.embeddings.n_items(),
        out.labels.identities().len(),
        output.display()
    );
    log_timing(output, "gen", started);
    Ok(())
}

pub fn cluster(config: &RunConfig, output: &Path, tensor_path: &Path) -> Result<(), AppError> {
    let started = Instant::now();
    let tensor = load_embeddings(tensor_path)?;
    check_consensus_scale(tensor.n_items())?;
    ensure_dir(output)?;
    let cfg = config.cluster.to_core();
    let partitions: Vec<Partition> = (0..tensor.n_parts())
        .into_par_iter()
        .map(|q| cluster_part(&tensor, q, &cfg))
        .collect::<Result<_, _>>()?;
    let mut files = Vec::new();
    for (q, p) in partitions.iter().enumerate() {
        let name = format!("part_{q:03}.csv");
        tables::write_partition(&output.join(&name), p)?;
        files.push(name);
    }
    config.write_resolved(output)?;
    write_json(
        &output.join("cluster_summary.json"),
        &ClusterSummary {
            config_hash: config.hash(),
            linkage: format!("{:?}", cfg.linkage).to_lowercase(),
            distance_threshold: cfg.distance_threshold,
            n_items: tensor.n_items(),
            clusters_per_part: partitions.iter().map(|p| p.n_clusters()).collect(),
            partition_files: files,
        },
    )?;
    println!(
        "clusters per part: {:?}",
        partitions.iter().map(|p| p.n_clusters()).collect::<Vec<_>>()
    );
    log_timing(output, "cluster", started);
    Ok(())
}

pub fn consensus(
    config: &RunConfig,
    output: &Path,
    partition_paths: &[PathBuf],
    agree: Option<usize>,
    linkage: Option<ConsensusLinkage>,
) -> Result<(), AppError> {
    let started = Instant::now();
    let partitions: Vec<Partition> = partition_paths
        .iter()
        .map(|p| tables::read_partition(p).map_err(AppError::from))
        .collect::<Result<_, _>>()?;
    let q_parts = partitions.len();
    if let Some(first) = partitions.first() {
        check_consensus_scale(first.n_items())?;
    }
    let level = agreement_for(agree.or(config.consensus.agree), q_parts)?;
    let linkage = linkage.unwrap_or(config.consensus.linkage);
    let matrix = co_association(&partitions)?;
    let result = consensus_partition_with(&matrix, level, linkage)?;
    let threshold =
        partcc_core::consensus::agreement_threshold(level, q_parts)?;

    ensure_dir(output)?;
    tables::write_partition(&output.join("consensus.csv"), &result)?;
    config.write_resolved(output)?;
    write_json(
        &output.join("consensus_report.json"),
        &ConsensusReport {
            config_hash: config.hash(),
            n_items: matrix.n_items(),
            n_parts: q_parts,
            required_agreement: level.required_parts(),
            distance_threshold: threshold,
            n_clusters: result.n_clusters(),
            agreement_histogram: matrix.agreement_histogram(),
        },
    )?;
    println!(
        "consensus of {} partitions over {} items: {} clusters",
        q_parts,
        matrix.n_items(),
        result.n_clusters()
    );
    log_timing(output, "consensus", started);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn pseudolabel(
    config: &RunConfig,
    output: &Path,
    tensor_path: &Path,
    agree: Option<usize>,
    min_cluster_size: Option<usize>,
) -> Result<(), AppError> {
    let started = Instant::now();
    let tensor = load_embeddings(tensor_path)?;
    check_consensus_scale(tensor.n_items())?;
    let cfg = config.cluster.to_core();
    let level = agreement_for(agree.or(config.consensus.agree), tensor.n_parts())?;
    let min_size = min_cluster_size.unwrap_or(config.pseudolabel.min_cluster_size);

    let partitions: Vec<Partition> = (0..tensor.n_parts())
        .into_par_iter()
        .map(|q| cluster_part(&tensor, q, &cfg))
        .collect::<Result<_, _>>()?;
    let matrix = co_association(&partitions)?;
    let consensus = consensus_partition_with(&matrix, level, config.consensus.linkage)?;
    let (items, ids) = filter_clusters(&consensus, min_size)?;

    ensure_dir(output)?;
    tables::write_partition_subset(&output.join("pseudo_labels.csv"), &items, &ids)?;
    config.write_resolved(output)?;
    write_json(
        &output.join("pseudolabel_report.json"),
        &PseudoLabelReport {
            config_hash: config.hash(),
            n_items: tensor.n_items(),
            clusters_per_part: partitions.iter().map(|p| p.n_clusters()).collect(),
            consensus_clusters: consensus.n_clusters(),
            required_agreement: level.required_parts(),
            min_cluster_size: min_size,
            n_pseudo_labeled: items.len(),
        },
    )?;
    println!(
        "pseudo-labeled {} of {} items into {} clusters",
        items.len(),
        tensor.n_items(),
        ids.iter().map(|&i| i + 1).max().unwrap_or(0)
    );
    log_timing(output, "pseudolabel", started);
    Ok(())
}

fn check_trainer(config: &RunConfig) -> Result<(), AppError> {
    if config.trainer.epochs == 0 {
        return Err(AppError::validation("trainer.epochs must be >= 1"));
    }
    Ok(())
}

pub fn train(
    config: &RunConfig,
    output: &Path,
    features_path: &Path,
    labels_path: &Path,
    dump_losses: bool,
) -> Result<(), AppError> {
    let started = Instant::now();
    check_trainer(config)?;
    let features = pet::read_raw(features_path)?;
    let labels = read_labels_for(&features, labels_path)?;
    let labeled: Vec<(usize, u32)> = labels.rows().iter().map(|r| (r.item, r.identity)).collect();
    let split = SplitState::new(labeled, Vec::new())?;

    let trainer = config.trainer_config(config.seed, config.synth.n_parts);
    let params = EmbedderParams::init(
        config.synth.n_parts,
        features.cols(),
        config.synth.dim,
        config.seed,
    );
    let (trained, trace) = train_logged(params, &split, &features, &trainer)?;

    ensure_dir(output)?;
    let ckpt_dir = output.join("checkpoint");
    checkpoint::save(&ckpt_dir, &trained)?;
    if dump_losses {
        write_json_lines(&output.join("losses.jsonl"), &trace)?;
    }
    config.write_resolved(output)?;
    let last = trace.last();
    write_json(
        &output.join("train_report.json"),
        &TrainReport {
            config_hash: config.hash(),
            n_items: features.rows(),
            n_identities: labels.identities().len(),
            epochs: trainer.epochs,
            steps: trace.len(),
            final_total: last.map_or(0.0, |r| r.total),
            final_cross_entropy: last.map_or(0.0, |r| r.cross_entropy),
            final_triplet: last.map_or(0.0, |r| r.triplet),
            final_part_mixup: last.map_or(0.0, |r| r.part_mixup),
            batch_size: last.map_or(0, |r| r.batch_size),
            checkpoint: "checkpoint".into(),
        },
    )?;
    println!(
        "trained {} steps; final loss {:.6}",
        trace.len(),
        last.map_or(0.0, |r| r.total)
    );
    log_timing(output, "train", started);
    Ok(())
}

fn read_labels_for(features: &partcc_core::Matrix, path: &Path) -> Result<LabelTable, AppError> {
    let labels = tables::read_labels(path)?;
    labels.check_items(features.rows())?;
    if labels.len() != features.rows() {
        return Err(AppError::validation(format!(
            "{}: {} label rows for {} feature rows",
            path.display(),
            labels.len(),
            features.rows()
        )));
    }
    Ok(labels)
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    config: &RunConfig,
    output: &Path,
    query_path: &Path,
    query_labels_path: &Path,
    gallery_path: &Path,
    gallery_labels_path: &Path,
    camera_filter: bool,
    max_rank: usize,
) -> Result<(), AppError> {
    let started = Instant::now();
    let query = load_embeddings(query_path)?;
    let gallery = load_embeddings(gallery_path)?;
    let query_emb = query.concat_parts();
    let gallery_emb = gallery.concat_parts();
    let query_labels = read_labels_for(&query_emb, query_labels_path)?;
    let gallery_labels = read_labels_for(&gallery_emb, gallery_labels_path)?;

    let items = |table: &LabelTable| -> Vec<RetrievalItem> {
        table
            .rows()
            .iter()
            .map(|r| RetrievalItem {
                index: r.item,
                identity: r.identity,
                camera: r.camera,
            })
            .collect()
    };
    let protocol = RetrievalProtocol {
        query: items(&query_labels),
        gallery: items(&gallery_labels),
        camera_filter,
    };
    let report = evaluate_retrieval(&query_emb, &gallery_emb, &protocol, max_rank)?;

    ensure_dir(output)?;
    config.write_resolved(output)?;
    let doc = EvaluateReport::from_eval(
        config.hash(),
        query_emb.rows(),
        gallery_emb.rows(),
        camera_filter,
        &report,
    );
    write_json(&output.join("eval_report.json"), &doc)?;
    println!(
        "rank-1 {:.4}  rank-5 {:.4}  rank-10 {:.4}  rank-20 {:.4}  mAP {:.4}  ({} queries used, {} excluded)",
        doc.rank1, doc.rank5, doc.rank10, doc.rank20, doc.map, doc.n_queries_used,
        doc.excluded_queries
    );
    log_timing(output, "evaluate", started);
    Ok(())
}

pub fn pipeline(config: &RunConfig, output: &Path) -> Result<(), AppError> {
    let started = Instant::now();
    check_trainer(config)?;
    let synth = config.synth.to_core(config.seed);

    // Training pool: from files when both paths are configured, otherwise
    // generated synthetically.
    let (features, labels) = match (&config.data.features, &config.data.labels) {
        (Some(f), Some(l)) => {
            let features = pet::read_raw(Path::new(f))?;
            let labels = read_labels_for(&features, Path::new(l))?;
            (features, labels)
        }
        (None, None) => {
            let out = generate(&synth)?;
            (out.raw_features, out.labels)
        }
        _ => {
            return Err(AppError::validation(
                "data.features and data.labels must be set together",
            ))
        }
    };
    // Held-out evaluation split: configured files, or a generated identity
    // block disjoint from the training identities.
    let eval_files = match (&config.data.eval_features, &config.data.eval_labels) {
        (Some(f), Some(l)) => {
            let features = pet::read_raw(Path::new(f))?;
            let labels = read_labels_for(&features, Path::new(l))?;
            Some((features, labels))
        }
        (None, None) => None,
        _ => {
            return Err(AppError::validation(
                "data.eval_features and data.eval_labels must be set together",
            ))
        }
    };
    let eval_generated = if eval_files.is_none()
        && config.data.features.is_none()
        && config.eval.n_identities > 0
    {
        let block = generate_block(&synth, synth.n_identities, config.eval.n_identities)?;
        Some((block.raw_features, block.labels))
    } else {
        None
    };
    let eval_pair = eval_files.as_ref().or(eval_generated.as_ref());

    let split = split_labeled(&labels, config.split.labeled_fraction, config.seed)?;
    check_consensus_scale(split.unlabeled().len())?;

    let eval = eval_pair.map(|(f, l)| EvalData {
        features: f,
        labels: l,
        camera_filter: config.eval.camera_filter,
        queries_per_identity: config.eval.queries_per_identity,
    });
    let data = PipelineData {
        features: &features,
        n_parts: synth.n_parts,
        dim: synth.dim,
        truth: Some(&labels),
        eval,
    };
    let pipeline_config = config.pipeline_config(synth.n_parts);
    let n_labeled = split.labeled().len();
    let n_unlabeled = split.unlabeled().len();
    let outcome = run_pipeline(&data, split, &pipeline_config)?;

    ensure_dir(output)?;
    write_json_lines(&output.join("reports.jsonl"), &outcome.reports)?;
    config.write_resolved(output)?;
    let final_iteration = outcome.reports.last().expect("at least one report").clone();
    write_json(
        &output.join("final.json"),
        &PipelineFinalReport {
            config_hash: config.hash(),
            n_iterations_run: outcome.reports.len(),
            converged: outcome.converged,
            n_labeled_items: n_labeled,
            n_unlabeled_items: n_unlabeled,
            final_iteration: final_iteration.clone(),
        },
    )?;
    checkpoint::save(&output.join("checkpoint"), &outcome.params)?;
    for r in &outcome.reports {
        let eval_str = r
            .eval
            .as_ref()
            .map(|e| format!("rank-1 {:.4} mAP {:.4}", e.rank1, e.map))
            .unwrap_or_else(|| "no eval".into());
        println!(
            "iteration {}: {} pseudo-labels, {} consensus clusters, {}",
            r.iteration, r.n_pseudo_labeled, r.consensus_clusters, eval_str
        );
    }
    if outcome.converged {
        println!("pseudo-label assignment converged");
    }
    log_timing(output, "pipeline", started);
    Ok(())
}

pub fn selftest() -> Result<(), AppError> {
    let outcomes = crate::selftest::run_all();
    let mut failed = false;
    for o in &outcomes {
        let status = if o.passed { "ok" } else { "FAILED" };
        println!("{status:>6}  {} - {}", o.name, o.detail);
        failed |= !o.passed;
    }
    if failed {
        return Err(AppError::validation("selftest failed"));
    }
    Ok(())
}
