//! Extracts per-frame features of an image clip with the convolutional
//! front-end and round-trips them through a feature file.

use attentive_lstm::autodiff::ParamStore;
use attentive_lstm::datasynth::{generate_dataset, ClipData, DatasetConfig, Mode, SynthConfig};
use attentive_lstm::features::{extract, load_features, save_features, ExtractorConfig, FeatureSequence, TinyConv};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> attentive_lstm::Result<()> {
    let ds = generate_dataset(&DatasetConfig {
        synth: SynthConfig {
            mode: Mode::Image,
            image_size: 32,
            ..SynthConfig::default()
        },
        train_per_class: 1,
        test_per_class: 0,
        ..DatasetConfig::default()
    })?;
    let ClipData::Image { volume, .. } = &ds.train[0].data else {
        unreachable!("image mode")
    };

    let mut store = ParamStore::<f32>::new();
    let cfg = ExtractorConfig {
        output_dim: 64,
        widths: vec![8, 16],
        ..ExtractorConfig::default()
    };
    let net = TinyConv::register(&mut store, "extractor", &cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    let seq = extract(&store, &net, volume, true)?;
    println!(
        "{} frames -> {} features each, maps {:?}",
        seq.len(),
        seq.dim(),
        seq.map_extents()
    );

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("clip.astf");
    save_features(&seq, &path)?;
    let back: FeatureSequence<f32> = load_features(&path)?;
    println!("{} bytes on disk, identical after reload: {}", std::fs::metadata(&path)?.len(), back == seq);
    Ok(())
}
