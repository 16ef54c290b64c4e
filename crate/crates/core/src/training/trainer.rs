//! Two-phase training: attribute heads first, then the class head on a frozen backbone.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::{clip_grad_norm, AdamConfig, AdamState};
use crate::autodiff::Tape;
use crate::datasynth::{ClipData, Sample};
use crate::error::{Error, Result};
use crate::model::{argmax, ClipInput, Labels, Model, Phase};
use crate::tensor::{Real, Tensor};

/// Epoch budget, batching and optimizer settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs1: usize,
    pub epochs2: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// When false, the attribute phase is skipped and the whole network is
    /// trained on the class loss for `epochs1 + epochs2` epochs.
    pub representation_enabled: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs1: 30,
            epochs2: 15,
            batch_size: 8,
            seed: 0,
            grad_clip: None,
            representation_enabled: true,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Defaults for the small synthetic tasks, with a learning rate that
    /// converges within the default epoch budget.
    pub fn desk() -> Self {
        Self {
            adam: AdamConfig {
                lr: DESK_LR,
                ..AdamConfig::default()
            },
            ..Self::default()
        }
    }

    /// [`TrainConfig::desk`] for models that learn from frames.
    pub fn desk_image() -> Self {
        Self {
            adam: AdamConfig {
                lr: DESK_IMAGE_LR,
                ..AdamConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && a.eps > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        [
            ("epochs1", self.epochs1.to_string()),
            ("epochs2", self.epochs2.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("grad_clip", self.grad_clip.map_or("none".into(), |c| format!("{c:?}"))),
            ("representation_enabled", self.representation_enabled.to_string()),
            ("lr", format!("{:?}", self.adam.lr)),
            ("beta1", format!("{:?}", self.adam.beta1)),
            ("beta2", format!("{:?}", self.adam.beta2)),
            ("eps", format!("{:?}", self.adam.eps)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Sets one field from text; returns false for keys this config does not own.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<bool> {
        fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
        }
        match key {
            "epochs1" => self.epochs1 = parse(key, value)?,
            "epochs2" => self.epochs2 = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "grad_clip" => {
                self.grad_clip = match value.trim() {
                    "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "representation_enabled" => self.representation_enabled = parse(key, value)?,
            "lr" => self.adam.lr = parse(key, value)?,
            "beta1" => self.adam.beta1 = parse(key, value)?,
            "beta2" => self.adam.beta2 = parse(key, value)?,
            "eps" => self.adam.eps = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Learning rate of [`TrainConfig::desk`].
pub const DESK_LR: f64 = 0.02;

/// Learning rate of [`TrainConfig::desk_image`]; end-to-end convolution
/// diverges at [`DESK_LR`].
pub const DESK_IMAGE_LR: f64 = 3e-3;

/// Where a training run stands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainPhase {
    /// Attribute heads, all other parameters trainable.
    Representation,
    /// Class head only.
    Class,
    /// Class loss over every parameter, used when the attribute phase is skipped.
    Joint,
    Done,
}

impl fmt::Display for TrainPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainPhase::Representation => "repr",
            TrainPhase::Class => "class",
            TrainPhase::Joint => "joint",
            TrainPhase::Done => "done",
        })
    }
}

impl FromStr for TrainPhase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "repr" => TrainPhase::Representation,
            "class" => TrainPhase::Class,
            "joint" => TrainPhase::Joint,
            "done" => TrainPhase::Done,
            other => return Err(Error::Config(format!("unknown phase `{other}`"))),
        })
    }
}

/// Metrics of one finished epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// Counted from 1 across phases.
    pub epoch: usize,
    pub phase: TrainPhase,
    /// Mean per-sample loss over the epoch.
    pub loss: f64,
    /// Fraction of samples predicted correctly during the epoch: the class in
    /// class phases, the full attribute tuple in the attribute phase.
    pub accuracy: f64,
    /// Per-attribute accuracy, attribute phase only.
    pub attribute_accuracy: Option<[f64; 4]>,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.epoch, self.phase, self.loss, self.accuracy)?;
        if let Some(acc) = self.attribute_accuracy {
            for a in acc {
                write!(f, " {a}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for EpochRecord {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad metrics record `{s}`"));
        let fields: Vec<&str> = s.split_whitespace().collect();
        if fields.len() != 4 && fields.len() != 8 {
            return Err(bad());
        }
        let num = |i: usize| fields[i].parse::<f64>().map_err(|_| bad());
        let attribute_accuracy = if fields.len() == 8 {
            Some([num(4)?, num(5)?, num(6)?, num(7)?])
        } else {
            None
        };
        Ok(Self {
            epoch: fields[0].parse().map_err(|_| bad())?,
            phase: fields[1].parse()?,
            loss: num(2)?,
            accuracy: num(3)?,
            attribute_accuracy,
        })
    }
}

/// Header line of a metrics log.
pub const METRICS_HEADER: &str = "# epoch phase loss acc [takeoff somersault twist flight]";

pub fn format_metrics(history: &[EpochRecord]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in history {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    out
}

/// One clip ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<T> {
    pub clip_id: u64,
    pub input: ClipInput<T>,
    pub labels: Labels,
}

impl<T: Real> Example<T> {
    pub fn from_sample(sample: &Sample) -> Result<Self> {
        let input = match &sample.data {
            ClipData::Vector(seq) => ClipInput::Features(
                seq.vectors
                    .iter()
                    .map(|v| Tensor::from_f64(v.shape(), &v.to_f64_vec()))
                    .collect::<Result<_>>()?,
            ),
            ClipData::Image { volume, .. } => {
                ClipInput::Frames(volume.frames.iter().map(|f| f.to_chw()).collect())
            }
        };
        Ok(Self {
            clip_id: sample.clip_id,
            input,
            labels: sample.labels,
        })
    }
}

pub fn examples_from_samples<T: Real>(samples: &[Sample]) -> Result<Vec<Example<T>>> {
    samples.iter().map(Example::from_sample).collect()
}

/// Optimizer, rng and progress of a run; everything a checkpoint needs to resume.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub phase: TrainPhase,
    /// Epochs finished in the current phase.
    pub epoch_in_phase: usize,
    pub adam: AdamState<T>,
    pub rng: ChaCha8Rng,
    pub history: Vec<EpochRecord>,
}

/// A model together with its training progress.
#[derive(Debug, Clone)]
pub struct Session<T> {
    pub model: Model<T>,
    pub cfg: TrainConfig,
    pub state: TrainState<T>,
    /// Eval-mode representations of the training clips, reused while only the
    /// class head moves.
    cache: Option<Vec<Vec<Tensor<T>>>>,
}

impl<T: Real> Session<T> {
    pub fn new(mut model: Model<T>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let phase = if cfg.representation_enabled {
            TrainPhase::Representation
        } else {
            TrainPhase::Joint
        };
        apply_trainable(&mut model, phase);
        let state = TrainState {
            phase,
            epoch_in_phase: 0,
            adam: AdamState::new(cfg.adam, &model.store),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            history: Vec::new(),
        };
        Ok(Self {
            model,
            cfg,
            state,
            cache: None,
        })
    }

    /// Rebuilds a session from saved parts; trainable flags follow the phase.
    pub fn from_parts(mut model: Model<T>, cfg: TrainConfig, state: TrainState<T>) -> Result<Self> {
        cfg.validate()?;
        apply_trainable(&mut model, state.phase);
        Ok(Self {
            model,
            cfg,
            state,
            cache: None,
        })
    }

    /// Epoch budget of `phase`.
    pub fn phase_epochs(&self, phase: TrainPhase) -> usize {
        match phase {
            TrainPhase::Representation => self.cfg.epochs1,
            TrainPhase::Class => self.cfg.epochs2,
            TrainPhase::Joint => self.cfg.epochs1 + self.cfg.epochs2,
            TrainPhase::Done => 0,
        }
    }

    pub fn is_done(&self) -> bool {
        self.state.phase == TrainPhase::Done
    }

    /// Moves past every phase whose budget is used up.
    fn advance(&mut self) {
        while self.state.phase != TrainPhase::Done
            && self.state.epoch_in_phase >= self.phase_epochs(self.state.phase)
        {
            let next = match self.state.phase {
                TrainPhase::Representation => TrainPhase::Class,
                _ => TrainPhase::Done,
            };
            self.state.phase = next;
            self.state.epoch_in_phase = 0;
            self.cache = None;
            if next != TrainPhase::Done {
                apply_trainable(&mut self.model, next);
                self.state.adam = AdamState::new(self.cfg.adam, &self.model.store);
            }
        }
    }

    /// Runs one epoch of the current phase, or returns `None` once training is over.
    pub fn run_epoch(&mut self, data: &[Example<T>]) -> Result<Option<EpochRecord>> {
        self.advance();
        if self.is_done() {
            return Ok(None);
        }
        if data.is_empty() {
            return Err(Error::contract("training set is empty"));
        }
        let phase = self.state.phase;
        if phase == TrainPhase::Class && self.cache.is_none() {
            self.cache = Some(
                data.iter()
                    .map(|ex| representations(&self.model, &ex.input))
                    .collect::<Result<_>>()?,
            );
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.state.rng);
        let mut stats = EpochStats::default();
        for batch in order.chunks(self.cfg.batch_size) {
            for &i in batch {
                let mut drop_rng = ChaCha8Rng::seed_from_u64(self.state.rng.next_u64());
                let cached = self.cache.as_ref().map(|c| c[i].as_slice());
                let (tape, loss, step) = sample_forward(&self.model, phase, &data[i], cached, &mut drop_rng)?;
                tape.backward(loss, &mut self.model.store)?;
                stats.add(&step);
            }
            self.model.store.scale_grads(T::from_f64(1.0 / batch.len() as f64));
            if let Some(max) = self.cfg.grad_clip {
                clip_grad_norm(&mut self.model.store, max);
            }
            self.state.adam.step(&mut self.model.store)?;
        }
        self.state.epoch_in_phase += 1;
        let record = stats.finish(self.state.history.len() + 1, phase, data.len());
        self.state.history.push(record.clone());
        Ok(Some(record))
    }

    /// Trains until every phase is finished and returns the full history.
    pub fn run(&mut self, data: &[Example<T>]) -> Result<&[EpochRecord]> {
        while self.run_epoch(data)?.is_some() {}
        Ok(&self.state.history)
    }
}

struct StepOutcome {
    loss: f64,
    correct: bool,
    attributes: Option<[bool; 4]>,
}

#[derive(Default)]
struct EpochStats {
    loss: f64,
    correct: usize,
    attributes: [usize; 4],
}

impl EpochStats {
    fn add(&mut self, step: &StepOutcome) {
        self.loss += step.loss;
        self.correct += step.correct as usize;
        if let Some(a) = step.attributes {
            for (n, hit) in self.attributes.iter_mut().zip(a) {
                *n += hit as usize;
            }
        }
    }

    fn finish(self, epoch: usize, phase: TrainPhase, count: usize) -> EpochRecord {
        let n = count as f64;
        EpochRecord {
            epoch,
            phase,
            loss: self.loss / n,
            accuracy: self.correct as f64 / n,
            attribute_accuracy: (phase == TrainPhase::Representation)
                .then(|| self.attributes.map(|c| c as f64 / n)),
        }
    }
}

/// Forward pass with the loss of `phase` for one clip. The tape is returned
/// so the caller can run backward into the store.
fn sample_forward<T: Real>(
    model: &Model<T>,
    phase: TrainPhase,
    ex: &Example<T>,
    cached: Option<&[Tensor<T>]>,
    rng: &mut ChaCha8Rng,
) -> Result<(Tape<T>, crate::autodiff::Var, StepOutcome)> {
    let mut tape = Tape::new();
    let (loss, correct, attributes) = match phase {
        TrainPhase::Representation => {
            let inputs = model.input_vars(&mut tape, &ex.input)?;
            let out = model.forward(&mut tape, &inputs.features, &ex.labels, Phase::Representation, Some(rng))?;
            let logits = out.attribute_logits.expect("attribute phase yields attribute logits");
            let hits: [bool; 4] = std::array::from_fn(|k| {
                argmax(&tape.value(logits[k]).to_f64_vec()) == ex.labels.attributes[k]
            });
            (out.loss.expect("forward with labels yields a loss"), hits.iter().all(|&h| h), Some(hits))
        }
        TrainPhase::Class | TrainPhase::Joint => {
            let (logits, loss) = match cached {
                Some(reps) => {
                    let reps = reps
                        .iter()
                        .map(|r| tape.constant(r.clone()))
                        .collect::<Result<Vec<_>>>()?;
                    let logits = model.classify(&mut tape, &reps, Some(rng))?;
                    (logits, model.class_loss(&mut tape, logits, ex.labels.class)?)
                }
                None => {
                    let inputs = model.input_vars(&mut tape, &ex.input)?;
                    let out = model.forward(&mut tape, &inputs.features, &ex.labels, Phase::Class, Some(rng))?;
                    (
                        out.class_logits.expect("class phase yields class logits"),
                        out.loss.expect("forward with labels yields a loss"),
                    )
                }
            };
            let correct = argmax(&tape.value(logits).to_f64_vec()) == ex.labels.class;
            (loss, correct, None)
        }
        TrainPhase::Done => return Err(Error::contract("training is already finished")),
    };
    let outcome = StepOutcome {
        loss: tape.value(loss).item().as_f64(),
        correct,
        attributes,
    };
    Ok((tape, loss, outcome))
}

/// Eval-mode decoder representations of one clip.
pub fn representations<T: Real>(model: &Model<T>, input: &ClipInput<T>) -> Result<Vec<Tensor<T>>> {
    let mut tape = Tape::new();
    let inputs = model.input_vars(&mut tape, input)?;
    let out = model.backbone(&mut tape, &inputs.features, None)?;
    Ok(out.representations.iter().map(|&r| tape.value(r).clone()).collect())
}

/// Trainable flags for `phase`: the class phase moves only the class head.
pub fn apply_trainable<T: Real>(model: &mut Model<T>, phase: TrainPhase) {
    match phase {
        TrainPhase::Representation => model.store.set_trainable_where(|n| !Model::<T>::is_class_head(n)),
        TrainPhase::Class => model.store.set_trainable_where(Model::<T>::is_class_head),
        TrainPhase::Joint => model.store.set_all_trainable(true),
        TrainPhase::Done => {}
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::Rng;

    /// `count` random clips for the tiny configuration, classes cycling.
    pub(crate) fn tiny_examples(count: usize, seed: u64) -> Vec<Example<f64>> {
        let cfg = ModelConfig::tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|i| {
                let class = i % cfg.class_count;
                let frames = (0..cfg.num_frames)
                    .map(|_| Tensor::vector((0..cfg.feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
                    .collect();
                Example {
                    clip_id: i as u64,
                    input: ClipInput::Features(frames),
                    labels: Labels {
                        class,
                        attributes: [class % 2, class / 2, (class + 1) % 2, 0],
                    },
                }
            })
            .collect()
    }

    pub(crate) fn tiny_session(train: TrainConfig, dropout: f64) -> Session<f64> {
        let cfg = ModelConfig {
            dropout_rate: dropout,
            ..ModelConfig::tiny()
        };
        Session::new(Model::new(cfg, train.seed).unwrap(), train).unwrap()
    }

    fn quick(epochs1: usize, epochs2: usize) -> TrainConfig {
        TrainConfig {
            epochs1,
            epochs2,
            batch_size: 2,
            seed: 3,
            adam: AdamConfig {
                lr: 0.01,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn representation_loss_falls_on_a_single_clip() {
        let data = tiny_examples(1, 0);
        let mut s = tiny_session(TrainConfig { batch_size: 1, ..quick(20, 0) }, 0.0);
        let losses: Vec<f64> = (0..20).map(|_| s.run_epoch(&data).unwrap().unwrap().loss).collect();
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "{losses:?}");
        }
    }

    #[test]
    fn class_phase_fits_a_single_clip() {
        let data = tiny_examples(1, 1);
        let mut s = tiny_session(
            TrainConfig {
                batch_size: 1,
                adam: AdamConfig {
                    lr: 0.05,
                    ..AdamConfig::default()
                },
                ..quick(0, 200)
            },
            0.0,
        );
        let last = s.run(&data).unwrap().last().unwrap().clone();
        assert_eq!(last.phase, TrainPhase::Class);
        let mut tape = Tape::new();
        let reps = representations(&s.model, &data[0].input).unwrap();
        let reps: Vec<_> = reps.into_iter().map(|r| tape.constant(r).unwrap()).collect();
        let logits = s.model.classify(&mut tape, &reps, None).unwrap();
        let loss = s.model.class_loss(&mut tape, logits, data[0].labels.class).unwrap();
        assert!(tape.value(loss).item() < 0.01, "{}", tape.value(loss).item());
    }

    #[test]
    fn zero_epochs_leave_the_model_untouched() {
        let data = tiny_examples(4, 2);
        for repr in [true, false] {
            let mut s = tiny_session(TrainConfig { representation_enabled: repr, ..quick(0, 0) }, 0.2);
            let before = s.model.store.value_bytes(|_| true);
            assert!(s.run(&data).unwrap().is_empty());
            assert!(s.is_done());
            assert_eq!(s.model.store.value_bytes(|_| true), before);
        }
    }

    #[test]
    fn class_phase_moves_only_the_class_head() {
        let data = tiny_examples(6, 3);
        let mut s = tiny_session(quick(2, 3), 0.2);
        s.run_epoch(&data).unwrap();
        s.run_epoch(&data).unwrap();
        let frozen = |n: &str| !Model::<f64>::is_class_head(n);
        let before = s.model.store.value_bytes(frozen);
        let head_before = s.model.store.value_bytes(Model::<f64>::is_class_head);
        s.run(&data).unwrap();
        assert_eq!(s.state.history.len(), 5);
        assert!(s.state.history[2..].iter().all(|r| r.phase == TrainPhase::Class));
        assert_eq!(s.model.store.value_bytes(frozen), before);
        assert_ne!(s.model.store.value_bytes(Model::<f64>::is_class_head), head_before);
    }

    #[test]
    fn skipping_the_attribute_phase_trains_everything_on_the_class_loss() {
        let data = tiny_examples(4, 4);
        let mut s = tiny_session(TrainConfig { representation_enabled: false, ..quick(1, 1) }, 0.2);
        assert_eq!(s.state.phase, TrainPhase::Joint);
        assert_eq!(s.model.store.trainable_count(), s.model.store.len());
        let enc_before = s.model.store.value_bytes(|n| n.starts_with("encoder"));
        let history = s.run(&data).unwrap().to_vec();
        assert_eq!(history.len(), 2);
        assert!(history.iter().all(|r| r.phase == TrainPhase::Joint && r.attribute_accuracy.is_none()));
        assert_ne!(s.model.store.value_bytes(|n| n.starts_with("encoder")), enc_before);
    }

    #[test]
    fn fixed_seed_gives_identical_runs() {
        let data = tiny_examples(6, 5);
        let run = || {
            let mut s = tiny_session(quick(2, 2), 0.2);
            s.run(&data).unwrap();
            (s.state.history.clone(), s.model.store.value_bytes(|_| true))
        };
        let (h1, p1) = run();
        let (h2, p2) = run();
        assert_eq!(h1, h2);
        assert_eq!(p1, p2);
        assert_eq!(h1.len(), 4);
        assert!(h1[0].attribute_accuracy.is_some() && h1[3].attribute_accuracy.is_none());
    }

    #[test]
    fn metrics_records_roundtrip_through_text() {
        let records = vec![
            EpochRecord {
                epoch: 1,
                phase: TrainPhase::Representation,
                loss: 2.0 / 3.0,
                accuracy: 0.125,
                attribute_accuracy: Some([0.5, 0.25, 1.0, 0.1]),
            },
            EpochRecord {
                epoch: 2,
                phase: TrainPhase::Class,
                loss: 1e-7,
                accuracy: 1.0,
                attribute_accuracy: None,
            },
        ];
        let text = format_metrics(&records);
        assert!(text.starts_with(METRICS_HEADER));
        let back: Vec<EpochRecord> = text.lines().skip(1).map(|l| l.parse().unwrap()).collect();
        assert_eq!(back, records);
        assert!("1 repr 0.5".parse::<EpochRecord>().is_err());
    }

    #[test]
    fn config_text_roundtrip() {
        let cfg = TrainConfig {
            grad_clip: Some(2.5),
            representation_enabled: false,
            ..TrainConfig::desk()
        };
        let mut back = TrainConfig::default();
        for (k, v) in cfg.to_kv() {
            assert!(back.apply_kv(&k, &v).unwrap());
        }
        assert_eq!(back, cfg);
        assert!(!back.apply_kv("depth", "2").unwrap());
        assert!(back.apply_kv("batch_size", "x").is_err());
        assert!(TrainConfig { batch_size: 0, ..cfg }.validate().is_err());
    }
}
