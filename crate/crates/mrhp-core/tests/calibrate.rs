//! Temporary calibration harness for the synthetic end-to-end criterion.

use mrhp_core::config::{ContrastiveMode, TrainConfig};
use mrhp_core::dataset::{generate_synthetic, Dataset, SyntheticSpec};
use mrhp_core::harness::{evaluate, train, EvalOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn synth_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n_products: 200,
        reviews_per_product: 10,
        vocab_size: 120,
        l_p: 6,
        l_r: 6,
        m: 1,
        dim: 8,
        signal_strength: 1.0,
        label_distribution: [1.0; 5],
        seed,
    }
}

fn full_config(seed: u64, mode: ContrastiveMode) -> TrainConfig {
    TrainConfig {
        hidden_dim: 128,
        embed_dim: 48,
        cm_layers: 5,
        batch_size: 32,
        learning_rate: 2e-3,
        epochs: 10,
        heads: 4,
        seed,
        pairs_per_product: 4,
        contrastive: mode,
        ..TrainConfig::default()
    }
}

fn split(dataset: Dataset, train_products: usize) -> (Dataset, Dataset) {
    let mut train_set = dataset.clone();
    let mut test_set = dataset;
    test_set.products = train_set.products.split_off(train_products);
    (train_set, test_set)
}

fn random_baseline_map(test: &Dataset, tau: u8, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rankings = Vec::new();
    for product in &test.products {
        let mut scored: Vec<(f64, u8)> = product
            .reviews
            .iter()
            .map(|r| (rng.gen::<f64>(), r.label))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        rankings.push(scored.into_iter().map(|(_, l)| l).collect::<Vec<u8>>());
    }
    mrhp_core::harness::map_metric(&rankings, tau).unwrap()
}

#[test]
#[ignore]
fn calibrate_one_seed() {
    let seed = 1u64;
    let data = generate_synthetic(&synth_spec(100 + seed)).unwrap();
    let (train_set, test_set) = split(data, 160);

    let start = Instant::now();
    let outcome = train(&full_config(seed, ContrastiveMode::Adaptive), &train_set).unwrap();
    let train_time = start.elapsed();

    let report = evaluate(&outcome.model, &test_set, &EvalOptions::default()).unwrap();
    let baseline = random_baseline_map(&test_set, 3, 999 + seed);
    println!(
        "seed {seed}: trained {} steps in {train_time:?}; test MAP {:.4} NDCG@3 {:.4} NDCG@5 {:.4}; random baseline MAP {baseline:.4}",
        outcome.step, report.map, report.ndcg3, report.ndcg5
    );
    let epochs: Vec<f64> = (0..10)
        .map(|e| {
            let xs: Vec<f64> = outcome
                .losses
                .iter()
                .filter(|l| l.epoch == e)
                .map(|l| l.ranking / l.pairs as f64)
                .collect();
            xs.iter().sum::<f64>() / xs.len().max(1) as f64
        })
        .collect();
    println!("per-epoch mean ranking loss/pair: {epochs:?}");
}
