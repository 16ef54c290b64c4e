//! Trains on vector clips and reports held-out accuracy, optionally with one
//! component switched off.
//!
//! Usage: cargo run --release --example train_vector -- [full|no-attention|unreversed|no-repr]

use attentive_lstm::datasynth::{generate_dataset, DatasetConfig};
use attentive_lstm::model::{Model, ModelConfig};
use attentive_lstm::training::{evaluate, examples_from_samples, Example, Session, TrainConfig};

fn main() -> attentive_lstm::Result<()> {
    let variant = std::env::args().nth(1).unwrap_or_else(|| "full".into());
    let mut model_cfg = ModelConfig::desk();
    let mut train_cfg = TrainConfig::desk();
    match variant.as_str() {
        "full" => {}
        "no-attention" => model_cfg.attention_enabled = false,
        "unreversed" => model_cfg.reverse_enabled = false,
        "no-repr" => train_cfg.representation_enabled = false,
        other => return Err(attentive_lstm::Error::Config(format!("unknown variant {other}"))),
    }

    let ds = generate_dataset(&DatasetConfig::default())?;
    let train: Vec<Example<f32>> = examples_from_samples(&ds.train)?;
    let test: Vec<Example<f32>> = examples_from_samples(&ds.test)?;
    let mut session = Session::new(Model::new(model_cfg, 0)?, train_cfg)?;
    while let Some(record) = session.run_epoch(&train)? {
        println!("{record}");
    }
    println!("{variant}: {}", evaluate(&session.model, &test)?);
    Ok(())
}
