use mambular::data::generate_synthetic_ordering_dataset;
use mambular::encoding::{EncodedData, PleConfig, Preprocessor, TreeCriterion};
use mambular::model::{InputLayout, Mambular, ModelConfig};
use mambular::train::{
    load_checkpoint, save_checkpoint, train, write_history, TrainConfig, FORMAT_VERSION, MAGIC,
};
use mambular::Error;

fn config() -> ModelConfig {
    ModelConfig {
        d: 16,
        layers: 1,
        state: 8,
        max_bins: Some(8),
        ..ModelConfig::default()
    }
}

struct Setup {
    model: Mambular,
    pre: Preprocessor,
    train: EncodedData,
    val: EncodedData,
}

fn setup(rows: usize) -> Setup {
    let (data, _) = generate_synthetic_ordering_dataset(9);
    let cfg = config();
    let train_rows: Vec<usize> = (0..rows).collect();
    let val_rows: Vec<usize> = (rows..rows + rows / 4).collect();
    let train_set = data.subset(&train_rows);
    let pre = Preprocessor::fit(
        &train_set,
        &PleConfig {
            max_bins: cfg.max_bins(),
            min_leaf: cfg.min_leaf,
            criterion: TreeCriterion::SquaredError,
        },
    )
    .unwrap();
    let model = Mambular::new(cfg, InputLayout::of(&pre), 4).unwrap();
    Setup {
        train: pre.transform(&train_set).unwrap(),
        val: pre.transform(&data.subset(&val_rows)).unwrap(),
        model,
        pre,
    }
}

fn quick() -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        batch_size: 64,
        max_epochs: 4,
        seed: 1,
        ..TrainConfig::default()
    }
}

#[test]
fn training_improves_validation_loss() {
    let mut s = setup(512);
    let before = s.model.evaluate_loss(&s.val).unwrap();
    let report = train(&mut s.model, &s.train, &s.val, &quick()).unwrap();
    assert_eq!(report.history.len(), 4);
    assert!(report.best_val_loss < before, "{} vs {before}", report.best_val_loss);
    // The returned parameters are the best snapshot.
    let after = s.model.evaluate_loss(&s.val).unwrap();
    assert_eq!(after, report.best_val_loss);
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let mut s = setup(256);
        let r = train(&mut s.model, &s.train, &s.val, &quick()).unwrap();
        (r.history, s.model.params)
    };
    let (h1, p1) = run();
    let (h2, p2) = run();
    assert_eq!(h1, h2);
    for ((_, _, a), (_, _, b)) in p1.iter().zip(p2.iter()) {
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn zero_epochs_keep_the_initial_model() {
    let mut s = setup(128);
    let init = s.model.params.clone();
    let report = train(
        &mut s.model,
        &s.train,
        &s.val,
        &TrainConfig {
            max_epochs: 0,
            ..quick()
        },
    )
    .unwrap();
    assert!(report.history.is_empty());
    assert_eq!(report.best_epoch, 0);
    for ((_, _, a), (_, _, b)) in init.iter().zip(s.model.params.iter()) {
        assert_eq!(a, b);
    }
}

#[test]
fn diverging_learning_rate_is_reported() {
    let mut s = setup(128);
    let err = train(
        &mut s.model,
        &s.train,
        &s.val,
        &TrainConfig {
            lr: 1e200,
            ..quick()
        },
    )
    .unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { .. }), "{err}");
}

#[test]
fn history_csv_has_one_row_per_epoch() {
    let mut s = setup(128);
    let report = train(&mut s.model, &s.train, &s.val, &quick()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("history.csv");
    write_history(&path, &report.history).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_loss,lr");
    assert_eq!(lines.len(), report.history.len() + 1);
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let (data, _) = generate_synthetic_ordering_dataset(10);
    let s = setup(256);
    let rows: Vec<usize> = (0..1000).collect();
    let subset = data.subset(&rows);
    let enc = s.pre.transform(&subset).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.bin");
    save_checkpoint(&path, &s.model, &s.pre).unwrap();
    let back = load_checkpoint(&path).unwrap();
    let a = s.model.raw_outputs(&enc).unwrap();
    let b = back.model.raw_outputs(&back.preprocessor.transform(&subset).unwrap()).unwrap();
    let bits = |t: &mambular::numerics::Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let s = setup(128);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.bin");
    save_checkpoint(&path, &s.model, &s.pre).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], MAGIC);

    let write = |b: &[u8]| {
        let p = dir.path().join("bad.bin");
        std::fs::write(&p, b).unwrap();
        load_checkpoint(&p)
    };
    let truncated = write(&bytes[..bytes.len() - 5]).unwrap_err();
    assert!(truncated.to_string().contains("truncated"), "{truncated}");

    let mut versioned = bytes.clone();
    versioned[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    assert!(write(&versioned).unwrap_err().to_string().contains("version"));

    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(write(&trailing).unwrap_err().to_string().contains("trailing"));

    let mut magic = bytes;
    magic[0] = b'X';
    assert!(write(&magic).is_err());
}
