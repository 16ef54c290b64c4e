//! Generates the synthetic dataset and writes it next to a manifest.
//!
//! Usage: cargo run --example generate_dataset -- [OUT_DIR] [vector|image]

use attentive_lstm::datasynth::{generate_dataset, write_dataset, DatasetConfig, Mode, SynthConfig};

fn main() -> attentive_lstm::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "data".into());
    let mode: Mode = args.next().as_deref().unwrap_or("vector").parse()?;
    let cfg = DatasetConfig {
        synth: SynthConfig {
            mode,
            image_size: 32,
            ..SynthConfig::default()
        },
        ..DatasetConfig::default()
    };
    let ds = generate_dataset(&cfg)?;
    let manifest = write_dataset(&ds, dir.as_ref())?;
    println!("{} train, {} test clips -> {}", ds.train.len(), ds.test.len(), manifest.display());
    for line in ds.table.to_text().lines().take(6) {
        println!("  {line}");
    }
    Ok(())
}
