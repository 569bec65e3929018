use dualmoco::datagen::{Split, World, WorldConfig};
use dualmoco::formats::{load_checkpoint, save_checkpoint};
use dualmoco::trainer::{EvalData, TrainData};
use dualmoco::{train, TrainConfig};

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn loss_decreases_on_default_config() {
    let world = World::generate(&WorldConfig::default()).unwrap();
    let config = TrainConfig::default();
    let data = TrainData {
        vocab_a: world.lexicon.vocab_size(),
        vocab_b: world.lexicon.vocab_size(),
        corpus: &world.parallel,
        nli: None,
        eval: EvalData::default(),
    };
    let outcome = train(&config, &data).unwrap();
    let losses: Vec<f64> = outcome.log.steps().map(|s| s.loss_total).collect();
    let n_train = world.parallel.split(Split::Train).len();
    assert_eq!(losses.len(), config.epochs * config.steps_per_epoch(n_train));
    assert!(losses.iter().all(|l| l.is_finite()));
    let early = mean(losses[..50].iter().copied());
    let late = mean(losses[losses.len() - 50..].iter().copied());
    assert!(late < early, "early {early}, late {late}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.dmc");
    save_checkpoint(&path, &outcome.state.base_a, &outcome.state.base_b).unwrap();
    let (a, b) = load_checkpoint(&path).unwrap();
    assert_eq!(a, outcome.state.base_a);
    assert_eq!(b, outcome.state.base_b);
}
