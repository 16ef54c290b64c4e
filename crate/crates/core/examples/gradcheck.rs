//! Finite-difference check of every parameter of the tiny model, once as
//! built and once with a deliberately detached term.

use attentive_lstm::model::ModelConfig;
use attentive_lstm::training::{check_model_gradients, Fault};

fn main() -> attentive_lstm::Result<()> {
    let cfg = ModelConfig::tiny();
    let report = check_model_gradients(&cfg, 0, Fault::None)?;
    println!("{report}");
    let faulty = check_model_gradients(&cfg, 0, Fault::DetachedTerm)?;
    for p in faulty.failures() {
        println!("fault caught in {} (max relative error {:.3e})", p.name, p.max_relative_error);
    }
    Ok(())
}
