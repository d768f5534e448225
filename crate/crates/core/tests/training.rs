use eleatt::bptt::NetworkSpec;
use eleatt::cells::{CellKind, GateMode};
use eleatt::data::{PlantedTask, Sample, SequenceBatch};
use eleatt::training::{evaluate, fit, stream_rng, Stream, TrainConfig};
use rand::seq::SliceRandom;

fn planted_spec(task: &PlantedTask, hidden: usize) -> NetworkSpec {
    NetworkSpec::stacked(
        CellKind::Gru,
        GateMode::Element,
        task.dim,
        hidden,
        1,
        2,
        0.0,
        0,
    )
}

#[test]
fn noiseless_planted_task_is_learned_perfectly() {
    let task = PlantedTask {
        noise_sigma: 0.0,
        ..PlantedTask::default()
    };
    let data = task.generate(200, 1).unwrap();
    let spec = planted_spec(&task, 16);
    let cfg = TrainConfig {
        dropout_p: 0.0,
        max_epochs: 15,
        batch_size: 16,
        seed: 1,
        ..TrainConfig::default()
    };
    let out = fit(&spec, &cfg, &data.split.train, &data.split.val, |_| {}).unwrap();
    let (_, acc) = evaluate(&spec, &out.last, &data.split.train).unwrap();
    assert_eq!(acc, 1.0);
}

#[test]
fn shuffled_labels_give_chance_accuracy() {
    let task = PlantedTask::default();
    let data = task.generate(1000, 2).unwrap();
    let mut labels = data.split.train.labels();
    labels.shuffle(&mut stream_rng(2, Stream::Data));
    let shuffled: Vec<Sample> = data
        .split
        .train
        .samples()
        .iter()
        .zip(labels)
        .map(|(s, label)| Sample {
            seq: s.seq.clone(),
            label,
        })
        .collect();
    let train = SequenceBatch::new(shuffled, 2).unwrap();
    let spec = planted_spec(&task, 16);
    let cfg = TrainConfig {
        dropout_p: 0.0,
        max_epochs: 5,
        seed: 2,
        ..TrainConfig::default()
    };
    let out = fit(&spec, &cfg, &train, &data.split.val, |_| {}).unwrap();
    let (_, acc) = evaluate(&spec, &out.last, &data.split.test).unwrap();
    assert!((0.38..=0.62).contains(&acc), "test accuracy {acc}");
}

#[test]
fn best_checkpoint_tracks_validation_accuracy() {
    let task = PlantedTask::default();
    let data = task.generate(300, 3).unwrap();
    let spec = planted_spec(&task, 8);
    let cfg = TrainConfig {
        max_epochs: 4,
        seed: 3,
        ..TrainConfig::default()
    };
    let out = fit(&spec, &cfg, &data.split.train, &data.split.val, |_| {}).unwrap();
    assert_eq!(out.logs.len(), 4);
    let best = out
        .logs
        .iter()
        .map(|l| l.val_acc)
        .fold(f64::NEG_INFINITY, f64::max);
    let first_best = out.logs.iter().position(|l| l.val_acc == best).unwrap() + 1;
    assert_eq!(out.best_epoch, first_best);
    let (_, acc) = evaluate(&spec, &out.best, &data.split.val).unwrap();
    assert_eq!(acc, best);
    assert!(out.logs.windows(2).all(|w| w[1].lr <= w[0].lr));
}
