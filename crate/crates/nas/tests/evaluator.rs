use litese_core::complexity;
use litese_core::nn::BlockType;
use litese_core::training::{SyntheticConfig, TrainConfig};
use litese_core::{ArchitectureSpec, Model};
use litese_nas::evaluator::{Evaluator, TrainingEvalConfig};
use litese_nas::search::score;
use litese_nas::{PesqEvaluator, RewardConfig, SearchSpace, TrainingEvaluator};

fn quick() -> TrainingEvaluator {
    TrainingEvaluator::new(TrainingEvalConfig {
        train: TrainConfig {
            steps: 6,
            batch: 1,
            segment: 2048,
            constant_lr: Some(5e-3),
            valid_every: 2,
            ..TrainConfig::default()
        },
        data: SyntheticConfig {
            pairs: 2,
            length: 4096,
            snr_db: (0.0, 5.0),
        },
        valid_pairs: 1,
        ..TrainingEvalConfig::default()
    })
}

#[test]
fn training_score_is_deterministic_and_costed_by_the_counter() {
    let spec = ArchitectureSpec::prototype(BlockType::Dws, 8);
    let ev = quick();
    let a = ev.evaluate(&spec, 3).unwrap();
    let b = ev.evaluate(&spec, 3).unwrap();
    assert_eq!(a, b);
    assert!((1.0..=3.0).contains(&a.q));
    let model = Model::assemble(&spec, 3).unwrap();
    assert_eq!(a.macs, complexity::count_macs(&model));
}

#[test]
fn unbuildable_candidates_are_flagged() {
    // A one-channel bottleneck cannot be split into two recurrent groups
    // of paired directions.
    let space = SearchSpace {
        blocks: 5,
        types: vec![BlockType::XDws],
        strides: vec![2],
        groups: vec![1],
        channels: vec![1],
        kernels: vec![(1, 5)],
    };
    let c = score(&space, &[0; 25], &quick(), &RewardConfig::default(), 0).unwrap();
    assert!(c.failure.is_some(), "expected a construction failure");
    assert_eq!((c.q, c.reward, c.macs), (1.0, 0.0, None));
}

#[test]
fn external_tool_scores_are_averaged() {
    let ev = PesqEvaluator::new(quick(), "echo score: 2.75").unwrap();
    let spec = ArchitectureSpec::prototype(BlockType::Dws, 8);
    let s = ev.evaluate(&spec, 1).unwrap();
    assert_eq!(s.q, 2.75);

    let broken = PesqEvaluator::new(quick(), "false").unwrap();
    assert!(broken.evaluate(&spec, 1).is_err());
    assert!(PesqEvaluator::new(quick(), "  ").is_err());
}
