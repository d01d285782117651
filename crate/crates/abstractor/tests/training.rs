use endorse_abstractor::checkpoint::Checkpoint;
use endorse_abstractor::model::loss;
use endorse_abstractor::synthetic::CopyTaskSpec;
use endorse_abstractor::train::train;
use endorse_abstractor::{EndorsedInput, Example, ModelConfig, ModelError, Parameters, TrainConfig};
use endorse_core::rng::{stream, Stream};

fn small(vocab: usize) -> ModelConfig {
    ModelConfig {
        num_layers: 1,
        model_dim: 16,
        num_heads: 2,
        head_dim: 8,
        ffn_dim: 32,
        vocab_size: vocab,
        max_positions: 16,
        tau_max: 2,
        lambdas: vec![0.8, 0.1, 0.1],
        dropout: 0.0,
    }
}

#[test]
fn initial_loss_is_near_uniform() {
    let spec = CopyTaskSpec::default();
    let cfg = ModelConfig::tiny(spec.vocab_size());
    let p = Parameters::init(&cfg, 3).unwrap();
    let mut rng = stream(3, Stream::Synthetic);
    let data = spec.dataset(&mut rng, 20);
    let tc = TrainConfig {
        epochs: 1,
        batch_size: 20,
        ..Default::default()
    };
    let mut q = p.clone();
    let report = train(&mut q, &data, &tc).unwrap();
    let uniform = (cfg.vocab_size as f64).ln();
    let first = report.step_losses[0];
    assert!((first - uniform).abs() < 0.1 * uniform, "{first} vs {uniform}");
}

#[test]
fn memorizes_one_example() {
    let ex = Example {
        input: EndorsedInput::new(vec![3, 4, 5, 6, 7], vec![0, 1, 2, 1, 0]).unwrap(),
        target: vec![4, 5, 6, 2],
    };
    let mut p = Parameters::init(&small(8), 1).unwrap();
    let tc = TrainConfig {
        epochs: 300,
        batch_size: 1,
        learning_rate: 1e-2,
        ..Default::default()
    };
    let report = train(&mut p, std::slice::from_ref(&ex), &tc).unwrap();
    assert_eq!(report.epoch_losses.len(), 300);
    assert!(loss(&p, &ex).unwrap() < 0.01);
}

#[test]
fn training_is_deterministic_with_dropout() {
    let spec = CopyTaskSpec::default();
    let mut rng = stream(5, Stream::Synthetic);
    let data = spec.dataset(&mut rng, 24);
    let cfg = ModelConfig {
        dropout: 0.1,
        ..small(spec.vocab_size())
    };
    let tc = TrainConfig {
        epochs: 2,
        batch_size: 8,
        learning_rate: 1e-3,
        ..Default::default()
    };
    let run = || {
        let mut p = Parameters::init(&cfg, 2).unwrap();
        let r = train(&mut p, &data, &tc).unwrap();
        (p, r)
    };
    let (p1, r1) = run();
    let (p2, r2) = run();
    assert_eq!(r1, r2);
    assert_eq!(p1.values, p2.values);
}

#[test]
fn pruned_levels_stay_zero() {
    let spec = CopyTaskSpec::default();
    let mut rng = stream(5, Stream::Synthetic);
    let data = spec.dataset(&mut rng, 16);
    let cfg = ModelConfig {
        lambdas: vec![1.0, 0.0, 0.0],
        ..small(spec.vocab_size())
    };
    let mut p = Parameters::init(&cfg, 2).unwrap();
    let tc = TrainConfig {
        epochs: 2,
        batch_size: 4,
        learning_rate: 1e-2,
        ..Default::default()
    };
    train(&mut p, &data, &tc).unwrap();
    for s in p.layout.companion_slots() {
        assert!(p.values[p.layout.slots[s].range()].iter().all(|&v| v == 0.0));
    }
}

#[test]
fn divergence_is_reported() {
    let ex = Example {
        input: EndorsedInput::new(vec![3, 4], vec![1, 0]).unwrap(),
        target: vec![3, 2],
    };
    let mut p = Parameters::init(&small(8), 1).unwrap();
    let emb = p.layout.slot_named("token_embeddings").unwrap();
    p.mat_mut(emb)[[3, 0]] = f64::NAN;
    let err = train(&mut p, &[ex], &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, ModelError::Diverged { step: 0, .. }));
    assert!(train(&mut p, &[], &TrainConfig::default()).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let spec = CopyTaskSpec::default();
    let p = Parameters::init(&small(spec.vocab_size()), 9).unwrap();
    let ck = Checkpoint {
        params: p,
        vocab: spec.vocab(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.vocab.id("t3"), ck.vocab.id("t3"));

    let text = std::fs::read_to_string(&path).unwrap();
    let broken = text.replace("\"format_version\": 1", "\"format_version\": 9");
    assert!(Checkpoint::from_json(&broken).is_err());
}
