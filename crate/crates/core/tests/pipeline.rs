//! Outer-loop behavior: iteration mechanics, convergence, pseudo-label
//! rebuild semantics, zero-noise exactness.

use partcc_core::embedder::TrainerConfig;
use partcc_core::pseudolabel::{
    run_iteration, run_pipeline, PipelineConfig, PipelineData, SplitState,
};
use partcc_core::synth::{generate, split_labeled, SynthConfig};

fn zero_noise_setup(seed: u64) -> (SynthConfig, partcc_core::synth::SynthOutput) {
    let config = SynthConfig {
        n_identities: 12,
        images_per_identity: 6,
        n_parts: 3,
        dim: 8,
        noise_sigma: 0.0,
        part_confusion: 0.0,
        raw_dim: 48,
        seed,
    };
    let out = generate(&config).unwrap();
    (config, out)
}

fn fast_trainer(seed: u64) -> TrainerConfig {
    TrainerConfig {
        epochs: 15,
        batch_p: 4,
        batch_k: 3,
        seed,
        ..TrainerConfig::default()
    }
}

fn pipeline_config(seed: u64, n_iterations: usize) -> PipelineConfig {
    PipelineConfig {
        n_iterations,
        trainer: fast_trainer(seed),
        seed,
        ..PipelineConfig::default()
    }
}

#[test]
fn single_iteration_gives_single_report() {
    let (config, out) = zero_noise_setup(3);
    let split = split_labeled(&out.labels, 0.5, 3).unwrap();
    let data = PipelineData {
        features: &out.raw_features,
        n_parts: config.n_parts,
        dim: config.dim,
        truth: Some(&out.labels),
        eval: None,
    };
    let outcome = run_pipeline(&data, split, &pipeline_config(3, 1)).unwrap();
    assert_eq!(outcome.reports.len(), 1);
    assert!(!outcome.converged);
}

#[test]
fn identical_pseudo_labels_trigger_early_stop() {
    // Zero-noise data pseudo-labels everything identically at every
    // iteration, so a 5-iteration budget stops at the second.
    let (config, out) = zero_noise_setup(4);
    let split = split_labeled(&out.labels, 0.5, 4).unwrap();
    let data = PipelineData {
        features: &out.raw_features,
        n_parts: config.n_parts,
        dim: config.dim,
        truth: Some(&out.labels),
        eval: None,
    };
    let outcome = run_pipeline(&data, split, &pipeline_config(4, 5)).unwrap();
    assert!(outcome.converged);
    assert!(outcome.reports.len() < 5);
    let last = outcome.reports.last().unwrap();
    let prev = &outcome.reports[outcome.reports.len() - 2];
    assert_eq!(last.n_pseudo_labeled, prev.n_pseudo_labeled);
}

#[test]
fn empty_unlabeled_set_behaves_as_supervised_training() {
    let (config, out) = zero_noise_setup(5);
    let split = split_labeled(&out.labels, 1.0, 5).unwrap();
    assert!(split.unlabeled().is_empty());
    let data = PipelineData {
        features: &out.raw_features,
        n_parts: config.n_parts,
        dim: config.dim,
        truth: Some(&out.labels),
        eval: None,
    };
    let (_, next, report) = run_iteration(&split, &data, &pipeline_config(5, 1)).unwrap();
    assert!(next.pseudo_labeled().is_empty());
    assert_eq!(report.n_pseudo_labeled, 0);
    assert_eq!(report.consensus_clusters, 0);
}

#[test]
fn empty_labeled_set_is_an_error() {
    let (config, out) = zero_noise_setup(6);
    let split = SplitState::new(vec![], (0..out.labels.len()).collect()).unwrap();
    let data = PipelineData {
        features: &out.raw_features,
        n_parts: config.n_parts,
        dim: config.dim,
        truth: None,
        eval: None,
    };
    assert!(matches!(
        run_iteration(&split, &data, &pipeline_config(6, 1)),
        Err(partcc_core::Error::EmptyLabeledSet)
    ));
}

#[test]
fn zero_noise_iteration_pseudo_labels_everything_exactly() {
    let (config, out) = zero_noise_setup(7);
    let split = split_labeled(&out.labels, 0.5, 7).unwrap();
    let n_unlabeled = split.unlabeled().len();
    let data = PipelineData {
        features: &out.raw_features,
        n_parts: config.n_parts,
        dim: config.dim,
        truth: Some(&out.labels),
        eval: None,
    };
    let (_, next, report) = run_iteration(&split, &data, &pipeline_config(7, 1)).unwrap();
    assert_eq!(report.n_pseudo_labeled, n_unlabeled);
    assert_eq!(report.pseudo_precision, Some(1.0));
    assert_eq!(report.pseudo_recall, Some(1.0));
    assert_eq!(next.pseudo_labeled().len(), n_unlabeled);
}

#[test]
fn pseudo_subset_is_rebuilt_not_accumulated() {
    let (config, out) = zero_noise_setup(8);
    let split = split_labeled(&out.labels, 0.5, 8).unwrap();
    let data = PipelineData {
        features: &out.raw_features,
        n_parts: config.n_parts,
        dim: config.dim,
        truth: Some(&out.labels),
        eval: None,
    };
    // Seed the state with a deliberately wrong partial pseudo assignment;
    // the iteration must discard it entirely.
    let item = split.unlabeled()[0];
    let fake = split
        .replace_pseudo(vec![(item, split.pseudo_base() + 500)])
        .unwrap();
    let (_, next, _) = run_iteration(&fake, &data, &pipeline_config(8, 1)).unwrap();
    assert_eq!(next.pseudo_labeled().len(), fake.unlabeled().len());
    assert!(next
        .pseudo_labeled()
        .iter()
        .all(|&(_, id)| id < split.pseudo_base() + 500));
}

#[test]
fn reports_are_deterministic_across_runs() {
    let (config, out) = zero_noise_setup(9);
    let data = PipelineData {
        features: &out.raw_features,
        n_parts: config.n_parts,
        dim: config.dim,
        truth: Some(&out.labels),
        eval: None,
    };
    let run = || {
        let split = split_labeled(&out.labels, 0.5, 9).unwrap();
        run_pipeline(&data, split, &pipeline_config(9, 2)).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.reports, b.reports);
    assert_eq!(a.params.flat(), b.params.flat());
}
