//! Finite-difference check of every model parameter under one combined loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{finite_diff_check, GradCheckConfig, GradCheckReport, Tape, Var};
use crate::error::Result;
use crate::model::{Labels, Model, ModelConfig, Phase};
use crate::tensor::Tensor;

/// Deliberate gradient bugs for exercising the checker itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Adds a term that reads the first encoder weight through a constant,
    /// so its analytic gradient misses a contribution.
    DetachedTerm,
}

/// Checks all parameters of a dropout-free model on `L_r + L_class` for one
/// random clip.
pub fn check_model_gradients(cfg: &ModelConfig, seed: u64, fault: Fault) -> Result<GradCheckReport> {
    let cfg = ModelConfig {
        dropout_rate: 0.0,
        ..cfg.clone()
    };
    let mut model = Model::<f64>::new(cfg.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let feats: Vec<Tensor<f64>> = (0..cfg.num_frames)
        .map(|_| Tensor::vector((0..cfg.feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect();
    let labels = Labels {
        class: rng.random_range(0..cfg.class_count),
        attributes: std::array::from_fn(|k| rng.random_range(0..cfg.attribute_arities[k])),
    };
    let probe = model.store.iter().next().map(|(id, _)| id);
    finite_diff_check(
        &mut model,
        |m: &Model<f64>, t: &mut Tape<f64>| -> Result<Var> {
            let f = m.feature_vars(t, &feats)?;
            let out = m.forward(t, &f, &labels, Phase::Representation, None)?;
            let logits = m.classify(t, &out.representations, None)?;
            let class = m.class_loss(t, logits, labels.class)?;
            let total = t.add(out.loss.expect("labelled forward has a loss"), class)?;
            match (fault, probe) {
                (Fault::DetachedTerm, Some(id)) => {
                    let detached = t.constant(m.store.value(id).clone())?;
                    let live = t.param(&m.store, id);
                    let prod = t.hadamard(detached, live)?;
                    let term = t.sum(prod)?;
                    t.add(total, term)
                }
                _ => Ok(total),
            }
        },
        &GradCheckConfig::default(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_model_passes_and_fault_is_caught() {
        let cfg = ModelConfig::tiny();
        let ok = check_model_gradients(&cfg, 1, Fault::None).unwrap();
        assert!(ok.passed(), "{ok}");
        let model = Model::<f64>::new(cfg.clone(), 1).unwrap();
        assert_eq!(ok.params.len(), model.store.len());
        let names: Vec<&str> = ok.params.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, model.store.names().collect::<Vec<_>>());

        let bad = check_model_gradients(&cfg, 1, Fault::DetachedTerm).unwrap();
        assert!(!bad.passed());
        assert_eq!(bad.failures().count(), 1);
    }
}
