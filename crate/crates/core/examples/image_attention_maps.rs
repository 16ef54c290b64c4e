//! Trains the convolutional model on image clips and writes one attention
//! overlay per frame of the first test clip.
//!
//! Usage: cargo run --release --example image_attention_maps -- [OUT_DIR]

use attentive_lstm::datasynth::{generate_dataset, ClipData, DatasetConfig, Mode, SynthConfig};
use attentive_lstm::model::{Model, ModelConfig};
use attentive_lstm::training::{examples_from_samples, Example, Session, TrainConfig};
use attentive_lstm::viz::{clip_attention, export_pgm, mask_contrast};

fn main() -> attentive_lstm::Result<()> {
    let dir = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "viz".into()));
    let ds = generate_dataset(&DatasetConfig {
        synth: SynthConfig {
            mode: Mode::Image,
            image_size: 32,
            noise_level: 0.5,
            ..SynthConfig::default()
        },
        train_per_class: 4,
        test_per_class: 1,
        ..DatasetConfig::default()
    })?;
    let train: Vec<Example<f32>> = examples_from_samples(&ds.train)?;
    let model_cfg = ModelConfig {
        extractor: Some(vec![8, 16]),
        ..ModelConfig::desk()
    };
    let mut session = Session::new(Model::new(model_cfg, 0)?, TrainConfig::desk_image())?;
    while let Some(record) = session.run_epoch(&train)? {
        println!("{record}");
    }

    let sample = &ds.test[0];
    let ClipData::Image { masks, .. } = &sample.data else {
        unreachable!("image mode")
    };
    std::fs::create_dir_all(&dir)?;
    for m in clip_attention(&session.model, &Example::from_sample(sample)?)? {
        let c = mask_contrast(&m.overlay, &masks[m.frame])?;
        let path = dir.join(format!("map_{:03}.pgm", m.frame));
        export_pgm(&m.overlay, &path)?;
        println!("{} inside {:.3} outside {:.3}", path.display(), c.inside, c.outside);
    }
    Ok(())
}
