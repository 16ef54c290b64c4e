//! Interrupts training halfway, saves a checkpoint, resumes from it and
//! shows that the result matches an uninterrupted run.

use attentive_lstm::datasynth::{generate_dataset, DatasetConfig};
use attentive_lstm::model::{Model, ModelConfig};
use attentive_lstm::training::{examples_from_samples, load_checkpoint, save_checkpoint, Example, Session, TrainConfig};

fn main() -> attentive_lstm::Result<()> {
    let ds = generate_dataset(&DatasetConfig {
        train_per_class: 1,
        test_per_class: 0,
        ..DatasetConfig::default()
    })?;
    let data: Vec<Example<f32>> = examples_from_samples(&ds.train)?;
    let train = TrainConfig {
        epochs1: 4,
        epochs2: 4,
        ..TrainConfig::desk()
    };
    let fresh = || Session::new(Model::<f32>::new(ModelConfig::desk(), 3)?, train.clone());

    let mut whole = fresh()?;
    whole.run(&data)?;

    let mut first = fresh()?;
    for _ in 0..5 {
        first.run_epoch(&data)?;
    }
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("checkpoint.astc");
    save_checkpoint(&first, &path)?;
    println!("saved after epoch 5: {} bytes", std::fs::metadata(&path)?.len());

    let mut resumed: Session<f32> = load_checkpoint(&path)?;
    resumed.run(&data)?;
    let same = resumed.model.store.value_bytes(|_| true) == whole.model.store.value_bytes(|_| true);
    println!("final loss {}", resumed.state.history.last().unwrap().loss);
    println!("parameters identical to the uninterrupted run: {same}");
    Ok(())
}
