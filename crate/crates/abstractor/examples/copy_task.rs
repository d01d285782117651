//! Train the tiny model on the copy-endorsed-span task and report held-out
//! next-token accuracy, with and without companion heads.

use std::time::Instant;

use endorse_abstractor::synthetic::CopyTaskSpec;
use endorse_abstractor::train::{mean_loss, next_token_accuracy, train};
use endorse_abstractor::{ModelConfig, Parameters, TrainConfig};
use endorse_core::rng::{stream, Stream};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let seed = 17;
    let spec = CopyTaskSpec::default();
    let mut rng = stream(seed, Stream::Synthetic);
    let train_set = spec.dataset(&mut rng, 2000);
    let held_out = spec.dataset(&mut rng, 300);
    let tc = TrainConfig {
        epochs,
        batch_size: 16,
        learning_rate: lr,
        seed,
        ..Default::default()
    };
    for lambdas in [vec![0.8, 0.1, 0.1], vec![1.0, 0.0, 0.0]] {
        let cfg = ModelConfig {
            lambdas: lambdas.clone(),
            ..ModelConfig::tiny(spec.vocab_size())
        };
        let mut p = Parameters::init(&cfg, seed).unwrap();
        let start = Instant::now();
        let report = train(&mut p, &train_set, &tc).unwrap();
        let acc = next_token_accuracy(&p, &held_out).unwrap();
        println!(
            "lambdas {:?}: epoch losses {:?} held-out loss {:.4} accuracy {:.4} in {:.1}s",
            lambdas,
            report.epoch_losses.iter().map(|l| (l * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            mean_loss(&p, &held_out).unwrap(),
            acc,
            start.elapsed().as_secs_f64()
        );
    }
}
