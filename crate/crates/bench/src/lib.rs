//! Seeded inputs shared by the benchmarks under `benches/`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use temporec_core::scorer::LabeledPair;
use temporec_core::{EmbeddingVector, UserInput};

pub fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<EmbeddingVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| EmbeddingVector((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()))
        .collect()
}

pub fn pair_inputs(n: usize, dim: usize, seed: u64) -> Vec<UserInput> {
    let short = random_vectors(n, dim, seed);
    let long = random_vectors(n, dim, seed + 1);
    short
        .into_iter()
        .zip(long)
        .map(|(short, long)| UserInput::Pair { short, long })
        .collect()
}

/// One positive followed by four negatives per draw, over `n_users × n_items`.
pub fn labeled_batch(size: usize, n_users: usize, n_items: usize, seed: u64) -> Vec<LabeledPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size)
        .map(|n| LabeledPair {
            user: rng.gen_range(0..n_users),
            item: rng.gen_range(0..n_items),
            label: if n % 5 == 0 { 1.0 } else { 0.0 },
        })
        .collect()
}

pub fn item_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("item{i:04}")).collect()
}
