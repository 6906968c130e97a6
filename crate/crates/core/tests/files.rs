use mmncd_core::datagen::{generate_dataset, load_dataset, save_dataset, DataError, GeneratorConfig};
use mmncd_core::trainer::{TrainConfig, TrainError, Trainer};
use tempfile::TempDir;

fn small() -> GeneratorConfig {
    GeneratorConfig {
        num_labeled_classes: 2,
        num_novel_classes: 2,
        samples_per_class: 12,
        ..GeneratorConfig::default()
    }
}

#[test]
fn dataset_file_round_trip() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("nested").join("data.ds");
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    let ds = generate_dataset(&small()).unwrap();
    save_dataset(&ds, &path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), ds);
    // no temporary file is left beside the target
    assert_eq!(std::fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
}

#[test]
fn missing_dataset_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    assert!(matches!(load_dataset(&dir.path().join("absent.ds")), Err(DataError::Io(_))));
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = TempDir::new().unwrap();
    let ds = generate_dataset(&small()).unwrap();
    let view = ds.training_view();
    let config = TrainConfig {
        pretrain_epochs: 1,
        train_epochs: 1,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(config, &view).unwrap();
    trainer.run_epoch(&view, None).unwrap();
    let path = dir.path().join("run.ckpt");
    trainer.save_checkpoint(&path).unwrap();
    let restored = Trainer::load_checkpoint(&path, &view).unwrap();
    assert_eq!(restored.checkpoint_bytes(), trainer.checkpoint_bytes());

    let other = generate_dataset(&GeneratorConfig {
        modality_dims: vec![5, 6],
        ..small()
    })
    .unwrap();
    assert!(matches!(
        Trainer::load_checkpoint(&path, &other.training_view()),
        Err(TrainError::Incompatible(_))
    ));
}
