//! Fixed-seed inputs shared by the benchmarks.

use dualmoco::datagen::{Split, World, WorldConfig};
use dualmoco::numerics::{l2_normalize, DenseMatrix};
use dualmoco::{DualMocoState, TokenSequence, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `rows` random unit vectors of dimension `dim`.
pub fn unit_rows(rows: usize, dim: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vs: Vec<_> = (0..rows)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            l2_normalize(&v).expect("nonzero draw")
        })
        .collect();
    DenseMatrix::from_rows(&vs, dim).expect("consistent rows")
}

/// Default world, its training sides, and a freshly initialized state.
pub struct Fixture {
    pub config: TrainConfig,
    pub batch_a: Vec<TokenSequence>,
    pub batch_b: Vec<TokenSequence>,
    pub state: DualMocoState,
}

pub fn fixture() -> Fixture {
    let world = World::generate(&WorldConfig::default()).expect("default world");
    let config = TrainConfig::default();
    let (a, b) = world.parallel.sides(Split::Train);
    let vocab = world.lexicon.vocab_size();
    let (enc_a, enc_b) = dualmoco::trainer::init_encoders(&config, vocab, vocab).expect("init");
    let state = DualMocoState::new(
        enc_a,
        enc_b,
        config.effective_momentum(),
        config.queue_capacity,
        config.temperature,
    )
    .expect("state");
    Fixture {
        batch_a: a[..config.batch_size].to_vec(),
        batch_b: b[..config.batch_size].to_vec(),
        config,
        state,
    }
}

/// Runs steps until both queues are full, so later steps contrast against
/// all K negatives.
pub fn fill_queues(f: &mut Fixture) {
    let steps = f.config.queue_capacity.div_ceil(f.config.batch_size);
    for _ in 0..steps {
        f.state
            .moco_step(&f.batch_a, &f.batch_b, f.config.pooling)
            .expect("warm-up step");
    }
}
