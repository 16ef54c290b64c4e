//! Clip-level top-1 accuracy, per-class accuracy and confusion counts.

use std::fmt;

use super::trainer::Example;
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::model::{argmax, Model};
use crate::tensor::Real;

/// Eval-mode outputs for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub class_logits: Vec<f64>,
    pub attributes: [usize; 4],
}

/// Runs one clip with dropout off.
pub fn predict<T: Real>(model: &Model<T>, ex: &Example<T>) -> Result<Prediction> {
    let mut tape = Tape::new();
    let inputs = model.input_vars(&mut tape, &ex.input)?;
    let out = model.backbone(&mut tape, &inputs.features, None)?;
    let logits = model.classify(&mut tape, &out.representations, None)?;
    let attr = model.attribute_logits(&mut tape, &out.representations, None)?;
    let class_logits = tape.value(logits).to_f64_vec();
    Ok(Prediction {
        class: argmax(&class_logits),
        attributes: attr.map(|v| argmax(&tape.value(v).to_f64_vec())),
        class_logits,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// `None` for classes without samples.
    pub per_class: Vec<Option<f64>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub attribute_accuracy: [f64; 4],
}

impl EvalReport {
    /// Accumulates `(true class, prediction)` pairs.
    pub fn from_predictions(
        classes: usize,
        pairs: impl IntoIterator<Item = (usize, [usize; 4], Prediction)>,
    ) -> Result<Self> {
        let mut confusion = vec![vec![0usize; classes]; classes];
        let mut attr_hits = [0usize; 4];
        let mut count = 0;
        for (truth, attributes, pred) in pairs {
            if truth >= classes || pred.class >= classes {
                return Err(Error::Label {
                    label: truth.max(pred.class),
                    classes,
                });
            }
            confusion[truth][pred.class] += 1;
            for k in 0..4 {
                attr_hits[k] += (pred.attributes[k] == attributes[k]) as usize;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::contract("nothing to evaluate"));
        }
        let correct = (0..classes).map(|k| confusion[k][k]).sum();
        let per_class = confusion
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let total: usize = row.iter().sum();
                (total > 0).then(|| row[k] as f64 / total as f64)
            })
            .collect();
        Ok(Self {
            count,
            correct,
            accuracy: correct as f64 / count as f64,
            per_class,
            confusion,
            attribute_accuracy: attr_hits.map(|h| h as f64 / count as f64),
        })
    }

    /// Largest off-diagonal confusion entries, most frequent first, ties by index.
    pub fn top_confusions(&self, limit: usize) -> Vec<(usize, usize, usize)> {
        let mut off: Vec<(usize, usize, usize)> = self
            .confusion
            .iter()
            .enumerate()
            .flat_map(|(t, row)| {
                row.iter()
                    .enumerate()
                    .filter(move |&(p, &n)| p != t && n > 0)
                    .map(move |(p, &n)| (t, p, n))
            })
            .collect();
        off.sort_by(|a, b| b.2.cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
        off.truncate(limit);
        off
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "accuracy {:.4} ({}/{})",
            self.accuracy, self.correct, self.count
        )?;
        let a = self.attribute_accuracy;
        writeln!(
            f,
            "attributes takeoff {:.4} somersault {:.4} twist {:.4} flight {:.4}",
            a[0], a[1], a[2], a[3]
        )?;
        let seen = self.per_class.iter().flatten().count();
        let perfect = self.per_class.iter().flatten().filter(|&&v| v == 1.0).count();
        writeln!(f, "classes {seen} evaluated, {perfect} fully correct")?;
        for (t, p, n) in self.top_confusions(5) {
            writeln!(f, "confused {t} -> {p}: {n}")?;
        }
        Ok(())
    }
}

/// Evaluates every example in eval mode.
pub fn evaluate<T: Real>(model: &Model<T>, data: &[Example<T>]) -> Result<EvalReport> {
    let mut pairs = Vec::with_capacity(data.len());
    for ex in data {
        pairs.push((ex.labels.class, ex.labels.attributes, predict(model, ex)?));
    }
    EvalReport::from_predictions(model.cfg.class_count, pairs)
}
