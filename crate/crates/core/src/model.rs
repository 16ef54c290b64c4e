//! Encoder, attention network and decoder, plus the class and attribute heads.
//!
//! Data flow for one clip of `N` feature vectors `f_1..f_N`:
//!
//! 1. The encoder runs forward from a zero state; its final state is the context.
//! 2. The attention stack starts from the context and reads the features in
//!    consumption order (reversed by default). Each top hidden state goes
//!    through dropout, a fully connected layer and an activation to give
//!    `a_t ∈ R^m`, and the gated input is `f ⊙ a_t`.
//! 3. The decoder starts from the projected context and reads the gated
//!    vectors in the same order, producing representations `f^r_n`.
//! 4. Every head computes `Σ_n w_n · fc(dropout(f^r_n))`.

use std::cell::RefCell;
use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{HasParams, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::features::{ExtractorConfig, ExtractorKind, TinyConv};
use crate::recurrent::{
    glorot, project_state, run_sequence, InitScheme, LstmState, Order, SequenceStep, StackedLstm,
    StateProjection,
};
use crate::tensor::{Real, Tensor};

/// Optional randomness for dropout; `None` means evaluation mode.
pub type DropoutRng<'a> = Option<&'a mut (dyn RngCore + 'static)>;

/// Parameter name prefixes. Checkpoints and freezing rely on these.
pub mod names {
    pub const EXTRACTOR: &str = "extractor";
    pub const ENCODER: &str = "encoder";
    pub const ATTENTION: &str = "attention";
    pub const DECODER: &str = "decoder";
    pub const CLASS_HEAD: &str = "head.class";
    pub const ATTR_HEAD: &str = "head.attr";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FinalActivation {
    #[default]
    Softmax,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionActivation {
    #[default]
    Sigmoid,
    Linear,
}

macro_rules! keyword_enum {
    ($ty:ty { $($variant:path => $word:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $word),+ })
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($word => Ok($variant),)+
                    other => Err(Error::Config(format!(
                        "unknown {} `{other}`", stringify!($ty)
                    ))),
                }
            }
        }
    };
}

keyword_enum!(FinalActivation {
    FinalActivation::Softmax => "softmax",
    FinalActivation::Sigmoid => "sigmoid",
});
keyword_enum!(AttentionActivation {
    AttentionActivation::Sigmoid => "sigmoid",
    AttentionActivation::Linear => "linear",
});

/// Model shape and switches.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub encoder_hidden: usize,
    pub attention_hidden: usize,
    pub decoder_hidden: usize,
    /// Layer count shared by all three stacks.
    pub depth: usize,
    pub num_frames: usize,
    pub class_count: usize,
    pub attribute_arities: [usize; 4],
    pub dropout_rate: f64,
    pub attention_enabled: bool,
    pub reverse_enabled: bool,
    pub final_activation: FinalActivation,
    pub attention_activation: AttentionActivation,
    pub forget_bias: f64,
    /// Channel widths of a convolutional front-end that turns frames into
    /// features. `None` means the model consumes feature vectors directly.
    pub extractor: Option<Vec<usize>>,
}

impl Default for ModelConfig {
    /// Full-size configuration: 1024-d features, 512/512/256 hidden units, 64 frames.
    fn default() -> Self {
        Self {
            feature_dim: 1024,
            encoder_hidden: 512,
            attention_hidden: 512,
            decoder_hidden: 256,
            depth: 2,
            num_frames: 64,
            class_count: 48,
            attribute_arities: [4, 8, 8, 4],
            dropout_rate: 0.2,
            attention_enabled: true,
            reverse_enabled: true,
            final_activation: FinalActivation::Softmax,
            attention_activation: AttentionActivation::Sigmoid,
            forget_bias: 1.0,
            extractor: None,
        }
    }
}

impl ModelConfig {
    /// Small configuration that trains on the synthetic data in seconds.
    pub fn desk() -> Self {
        Self {
            feature_dim: 16,
            encoder_hidden: 32,
            attention_hidden: 32,
            decoder_hidden: 16,
            num_frames: 8,
            ..Self::default()
        }
    }

    /// Smallest configuration, used for gradient checking.
    pub fn tiny() -> Self {
        Self {
            feature_dim: 8,
            encoder_hidden: 8,
            attention_hidden: 8,
            decoder_hidden: 8,
            num_frames: 5,
            class_count: 4,
            attribute_arities: [2, 2, 2, 2],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("feature_dim", self.feature_dim),
            ("encoder_hidden", self.encoder_hidden),
            ("attention_hidden", self.attention_hidden),
            ("decoder_hidden", self.decoder_hidden),
            ("depth", self.depth),
            ("num_frames", self.num_frames),
            ("class_count", self.class_count),
        ];
        for (name, v) in extents {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.extractor.as_ref().is_some_and(|w| w.is_empty() || w.contains(&0)) {
            return Err(Error::Config("extractor widths must be positive".into()));
        }
        if self.attribute_arities.contains(&0) {
            return Err(Error::Config("attribute arities must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn extractor_config(&self) -> Option<ExtractorConfig> {
        self.extractor.as_ref().map(|widths| ExtractorConfig {
            kind: ExtractorKind::TinyConv,
            output_dim: self.feature_dim,
            widths: widths.clone(),
        })
    }

    /// Consumption order for the attention network and decoder.
    pub fn order(&self) -> Order {
        if self.reverse_enabled {
            Order::Reversed
        } else {
            Order::Forward
        }
    }

    /// `key=value` lines, one per field.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let a = self.attribute_arities;
        [
            ("feature_dim", self.feature_dim.to_string()),
            ("encoder_hidden", self.encoder_hidden.to_string()),
            ("attention_hidden", self.attention_hidden.to_string()),
            ("decoder_hidden", self.decoder_hidden.to_string()),
            ("depth", self.depth.to_string()),
            ("num_frames", self.num_frames.to_string()),
            ("class_count", self.class_count.to_string()),
            ("attribute_arities", format!("{},{},{},{}", a[0], a[1], a[2], a[3])),
            ("dropout_rate", format!("{:?}", self.dropout_rate)),
            ("attention_enabled", self.attention_enabled.to_string()),
            ("reverse_enabled", self.reverse_enabled.to_string()),
            ("final_activation", self.final_activation.to_string()),
            ("attention_activation", self.attention_activation.to_string()),
            ("forget_bias", format!("{:?}", self.forget_bias)),
            (
                "extractor",
                match &self.extractor {
                    None => "none".to_string(),
                    Some(w) => w.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
                },
            ),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Applies one `key=value` pair. Returns `Ok(false)` for keys this type does not own.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<bool> {
        fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
        }
        match key {
            "feature_dim" => self.feature_dim = parse(key, value)?,
            "encoder_hidden" => self.encoder_hidden = parse(key, value)?,
            "attention_hidden" => self.attention_hidden = parse(key, value)?,
            "decoder_hidden" => self.decoder_hidden = parse(key, value)?,
            "depth" => self.depth = parse(key, value)?,
            "num_frames" => self.num_frames = parse(key, value)?,
            "class_count" => self.class_count = parse(key, value)?,
            "attribute_arities" => {
                let parts: Vec<usize> = value
                    .split(',')
                    .map(|p| parse(key, p))
                    .collect::<Result<_>>()?;
                self.attribute_arities = parts
                    .try_into()
                    .map_err(|_| Error::Config("attribute_arities needs exactly 4 entries".into()))?;
            }
            "dropout_rate" => self.dropout_rate = parse(key, value)?,
            "attention_enabled" => self.attention_enabled = parse(key, value)?,
            "reverse_enabled" => self.reverse_enabled = parse(key, value)?,
            "final_activation" => self.final_activation = value.trim().parse()?,
            "attention_activation" => self.attention_activation = value.trim().parse()?,
            "forget_bias" => self.forget_bias = parse(key, value)?,
            "extractor" => {
                self.extractor = match value.trim() {
                    "none" => None,
                    list => Some(list.split(',').map(|p| parse(key, p)).collect::<Result<_>>()?),
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Fully connected layer `W x + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    fn register<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        out: usize,
        input: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add(format!("{prefix}.w"), glorot(rng, out, input))?,
            b: store.add(format!("{prefix}.b"), Tensor::zeros(&[out]))?,
        })
    }

    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let wx = tape.matmul(w, x)?;
        tape.add(wx, b)
    }
}

/// A head `Σ_n w_n · fc(dropout(f^r_n))`.
#[derive(Debug, Clone, Copy)]
pub struct AggregateHead {
    pub fc: Linear,
    /// One weight per decoder step.
    pub weights: ParamId,
}

impl AggregateHead {
    fn register<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        out: usize,
        cfg: &ModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let fc = Linear::register(store, &format!("{prefix}.fc"), out, cfg.decoder_hidden, rng)?;
        let n = cfg.num_frames;
        let weights = store.add(
            format!("{prefix}.w"),
            Tensor::full(&[n], T::from_f64(1.0 / n as f64)),
        )?;
        Ok(Self { fc, weights })
    }

    pub fn apply<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        reps: &[Var],
        dropout_rate: f64,
        mut rng: DropoutRng<'_>,
    ) -> Result<Var> {
        let n = store.value(self.weights).len();
        if reps.len() != n {
            return Err(Error::dim("aggregate_head", &[reps.len()], &[n]));
        }
        let mut per_step = Vec::with_capacity(n);
        for &r in reps {
            let dropped = tape.dropout(r, dropout_rate, rng.as_deref_mut())?;
            per_step.push(self.fc.apply(tape, store, dropped)?);
        }
        let w = tape.param(store, self.weights);
        tape.weighted_sum(w, &per_step)
    }
}

#[derive(Debug, Clone)]
pub struct AttentionNet {
    pub stack: StackedLstm,
    pub handoff: StateProjection,
    pub fc: Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Attribute heads, loss is the sum of four cross-entropies.
    Representation,
    /// Class head only.
    Class,
}

/// Labels of one clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Labels {
    pub class: usize,
    pub attributes: [usize; 4],
}

/// Per-step attention outputs, in decoder consumption order.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// `a_t`, extent `m`.
    pub a: Vec<Var>,
    /// `f ⊙ a_t`.
    pub gated: Vec<Var>,
    /// Feature variable fed to the attention stack at each step.
    pub consumed: Vec<Var>,
}

/// Everything a forward pass produced.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub context: LstmState,
    pub attention: Option<AttentionOutput>,
    /// Inputs the decoder consumed, step by step.
    pub decoder_inputs: Vec<Var>,
    /// `f^r_n` in decoder step order.
    pub representations: Vec<Var>,
    pub class_logits: Option<Var>,
    pub attribute_logits: Option<[Var; 4]>,
    pub loss: Option<Var>,
}

/// Wraps a step function and records each input it is given.
pub struct Recording<'a, S> {
    pub inner: &'a S,
    pub seen: RefCell<Vec<Var>>,
}

impl<'a, S> Recording<'a, S> {
    pub fn new(inner: &'a S) -> Self {
        Self {
            inner,
            seen: RefCell::new(Vec::new()),
        }
    }

    pub fn into_seen(self) -> Vec<Var> {
        self.seen.into_inner()
    }
}

impl<T: Real, S: SequenceStep<T>> SequenceStep<T> for Recording<'_, S> {
    fn step(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        prev: &LstmState,
    ) -> Result<(Var, LstmState)> {
        self.seen.borrow_mut().push(x);
        self.inner.step(tape, store, x, prev)
    }
}

/// One clip as the model consumes it.
#[derive(Debug, Clone, PartialEq)]
pub enum ClipInput<T> {
    /// Feature vectors `f_1..f_N`.
    Features(Vec<Tensor<T>>),
    /// `[3, H, W]` frames for the convolutional front-end.
    Frames(Vec<Tensor<T>>),
}

impl<T> ClipInput<T> {
    pub fn len(&self) -> usize {
        match self {
            ClipInput::Features(v) | ClipInput::Frames(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Feature variables of one clip, plus the spatial maps when frames were given.
#[derive(Debug, Clone)]
pub struct InputVars {
    pub features: Vec<Var>,
    /// Per frame, `[m, h', w']`.
    pub maps: Option<Vec<Var>>,
}

/// The full network and its parameters.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub cfg: ModelConfig,
    pub store: ParamStore<T>,
    pub extractor: Option<TinyConv>,
    pub encoder: StackedLstm,
    pub attention: Option<AttentionNet>,
    pub decoder: StackedLstm,
    pub decoder_handoff: StateProjection,
    pub class_head: AggregateHead,
    pub attribute_heads: [AggregateHead; 4],
}

impl<T: Real> HasParams<T> for Model<T> {
    fn params(&self) -> &ParamStore<T> {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }
}

impl<T: Real> Model<T> {
    /// Builds and initialises every parameter from `seed`.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = InitScheme {
            forget_bias: cfg.forget_bias,
        };
        let mut store = ParamStore::new();
        let (m, depth) = (cfg.feature_dim, cfg.depth);
        let extractor = match cfg.extractor_config() {
            Some(ext) => Some(TinyConv::register(&mut store, names::EXTRACTOR, &ext, &mut rng)?),
            None => None,
        };

        let encoder = StackedLstm::register(
            &mut store,
            names::ENCODER,
            m,
            cfg.encoder_hidden,
            depth,
            &init,
            &mut rng,
        )?;
        let attention = if cfg.attention_enabled {
            let prefix = names::ATTENTION;
            let stack = StackedLstm::register(
                &mut store,
                prefix,
                m,
                cfg.attention_hidden,
                depth,
                &init,
                &mut rng,
            )?;
            let handoff = StateProjection::register(
                &mut store,
                &format!("{prefix}.handoff"),
                cfg.encoder_hidden,
                cfg.attention_hidden,
                depth,
                &mut rng,
            )?;
            let fc = Linear::register(&mut store, &format!("{prefix}.fc"), m, cfg.attention_hidden, &mut rng)?;
            Some(AttentionNet { stack, handoff, fc })
        } else {
            None
        };
        let decoder = StackedLstm::register(
            &mut store,
            names::DECODER,
            m,
            cfg.decoder_hidden,
            depth,
            &init,
            &mut rng,
        )?;
        let decoder_handoff = StateProjection::register(
            &mut store,
            &format!("{}.handoff", names::DECODER),
            cfg.encoder_hidden,
            cfg.decoder_hidden,
            depth,
            &mut rng,
        )?;
        let class_head =
            AggregateHead::register(&mut store, names::CLASS_HEAD, cfg.class_count, &cfg, &mut rng)?;
        let mut attrs = Vec::with_capacity(4);
        for (i, &arity) in cfg.attribute_arities.iter().enumerate() {
            attrs.push(AggregateHead::register(
                &mut store,
                &format!("{}{}", names::ATTR_HEAD, i + 1),
                arity,
                &cfg,
                &mut rng,
            )?);
        }
        Ok(Self {
            cfg,
            store,
            extractor,
            encoder,
            attention,
            decoder,
            decoder_handoff,
            class_head,
            attribute_heads: attrs.try_into().unwrap(),
        })
    }

    /// True for parameters that phase-two training updates.
    pub fn is_class_head(name: &str) -> bool {
        name.starts_with(names::CLASS_HEAD)
    }

    /// Runs the encoder from a zero state and returns its final state.
    pub fn encode(&self, tape: &mut Tape<T>, features: &[Var]) -> Result<LstmState> {
        self.check_features(tape, features)?;
        let init = self.encoder.zero_state(tape)?;
        let (_, context) = run_sequence(&self.encoder, tape, &self.store, features, init, Order::Forward)?;
        Ok(context)
    }

    /// Attention vectors and gated features, in consumption order.
    pub fn attend(
        &self,
        tape: &mut Tape<T>,
        features: &[Var],
        context: &LstmState,
        mut rng: DropoutRng<'_>,
    ) -> Result<AttentionOutput> {
        let net = self
            .attention
            .as_ref()
            .ok_or_else(|| Error::contract("attention network is disabled"))?;
        self.check_features(tape, features)?;
        let init = project_state(tape, &self.store, &net.handoff, context)?;
        let order = self.cfg.order();
        let recorder = Recording::new(&net.stack);
        let (tops, _) = run_sequence(&recorder, tape, &self.store, features, init, order)?;
        let consumed = recorder.into_seen();
        let mut a = Vec::with_capacity(tops.len());
        let mut gated = Vec::with_capacity(tops.len());
        for (&top, &f) in tops.iter().zip(&consumed) {
            let dropped = tape.dropout(top, self.cfg.dropout_rate, rng.as_deref_mut())?;
            let pre = net.fc.apply(tape, &self.store, dropped)?;
            let a_t = match self.cfg.attention_activation {
                AttentionActivation::Sigmoid => tape.sigmoid(pre)?,
                AttentionActivation::Linear => pre,
            };
            gated.push(tape.hadamard(f, a_t)?);
            a.push(a_t);
        }
        Ok(AttentionOutput { a, gated, consumed })
    }

    /// Runs the decoder over `inputs`, already in consumption order.
    ///
    /// Returns the representations and the inputs the decoder actually read.
    pub fn decode(
        &self,
        tape: &mut Tape<T>,
        inputs: &[Var],
        context: &LstmState,
    ) -> Result<(Vec<Var>, Vec<Var>)> {
        let init = project_state(tape, &self.store, &self.decoder_handoff, context)?;
        let recorder = Recording::new(&self.decoder);
        let (reps, _) = run_sequence(&recorder, tape, &self.store, inputs, init, Order::Forward)?;
        Ok((reps, recorder.into_seen()))
    }

    /// Encoder, attention and decoder. The class and attribute heads are not applied.
    pub fn backbone(
        &self,
        tape: &mut Tape<T>,
        features: &[Var],
        mut rng: DropoutRng<'_>,
    ) -> Result<ForwardOutput> {
        let context = self.encode(tape, features)?;
        let (attention, decoder_feed) = if self.attention.is_some() {
            let att = self.attend(tape, features, &context, rng.as_deref_mut())?;
            let feed = att.gated.clone();
            (Some(att), feed)
        } else {
            let feed = self
                .cfg
                .order()
                .indices(features.len())
                .into_iter()
                .map(|i| features[i])
                .collect();
            (None, feed)
        };
        let (representations, decoder_inputs) = self.decode(tape, &decoder_feed, &context)?;
        Ok(ForwardOutput {
            context,
            attention,
            decoder_inputs,
            representations,
            class_logits: None,
            attribute_logits: None,
            loss: None,
        })
    }

    /// Class logits `ô = Σ_n w_n^r fc(dropout(f^r_n))`.
    pub fn classify(&self, tape: &mut Tape<T>, reps: &[Var], rng: DropoutRng<'_>) -> Result<Var> {
        self.class_head
            .apply(tape, &self.store, reps, self.cfg.dropout_rate, rng)
    }

    /// The four attribute logit vectors.
    pub fn attribute_logits(
        &self,
        tape: &mut Tape<T>,
        reps: &[Var],
        mut rng: DropoutRng<'_>,
    ) -> Result<[Var; 4]> {
        let mut out = [reps[0]; 4];
        for (slot, head) in out.iter_mut().zip(&self.attribute_heads) {
            *slot = head.apply(tape, &self.store, reps, self.cfg.dropout_rate, rng.as_deref_mut())?;
        }
        Ok(out)
    }

    /// Class loss under the configured final activation.
    pub fn class_loss(&self, tape: &mut Tape<T>, logits: Var, class: usize) -> Result<Var> {
        match self.cfg.final_activation {
            FinalActivation::Softmax => tape.softmax_cross_entropy(logits, class),
            FinalActivation::Sigmoid => tape.sigmoid_cross_entropy(logits, class),
        }
    }

    /// Full forward pass with the loss for `phase`.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        features: &[Var],
        labels: &Labels,
        phase: Phase,
        mut rng: DropoutRng<'_>,
    ) -> Result<ForwardOutput> {
        let mut out = self.backbone(tape, features, rng.as_deref_mut())?;
        match phase {
            Phase::Representation => {
                let logits = self.attribute_logits(tape, &out.representations, rng)?;
                out.loss = Some(representation_loss(tape, &logits, &labels.attributes)?);
                out.attribute_logits = Some(logits);
            }
            Phase::Class => {
                let logits = self.classify(tape, &out.representations, rng)?;
                out.loss = Some(self.class_loss(tape, logits, labels.class)?);
                out.class_logits = Some(logits);
            }
        }
        Ok(out)
    }

    /// Places `features` on the tape as constants.
    pub fn feature_vars(&self, tape: &mut Tape<T>, features: &[Tensor<T>]) -> Result<Vec<Var>> {
        features.iter().map(|f| tape.constant(f.clone())).collect()
    }

    /// Feature variables for a clip, running the front-end on frames.
    pub fn input_vars(&self, tape: &mut Tape<T>, input: &ClipInput<T>) -> Result<InputVars> {
        match (input, &self.extractor) {
            (ClipInput::Features(f), None) => Ok(InputVars {
                features: self.feature_vars(tape, f)?,
                maps: None,
            }),
            (ClipInput::Frames(frames), Some(net)) => {
                let mut features = Vec::with_capacity(frames.len());
                let mut maps = Vec::with_capacity(frames.len());
                for frame in frames {
                    let x = tape.constant(frame.clone())?;
                    let out = net.forward(tape, &self.store, x)?;
                    features.push(out.vector);
                    maps.push(out.maps);
                }
                Ok(InputVars {
                    features,
                    maps: Some(maps),
                })
            }
            (ClipInput::Features(_), Some(_)) => Err(Error::Config(
                "model expects frames but was given feature vectors".into(),
            )),
            (ClipInput::Frames(_), None) => Err(Error::Config(
                "model expects feature vectors but was given frames".into(),
            )),
        }
    }

    /// Class probabilities under the configured final activation.
    pub fn probabilities(&self, logits: &Tensor<T>) -> Vec<f64> {
        let z = logits.to_f64_vec();
        match self.cfg.final_activation {
            FinalActivation::Softmax => {
                let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|v| v / s).collect()
            }
            FinalActivation::Sigmoid => z.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect(),
        }
    }

    fn check_features(&self, tape: &Tape<T>, features: &[Var]) -> Result<()> {
        if features.is_empty() {
            return Err(Error::contract("feature sequence is empty"));
        }
        for &f in features {
            if tape.shape(f) != [self.cfg.feature_dim] {
                return Err(Error::dim("features", tape.shape(f), &[self.cfg.feature_dim]));
            }
        }
        Ok(())
    }
}

/// `Σ_i CE(logits_i, label_i)` over the four attribute heads.
pub fn representation_loss<T: Real>(
    tape: &mut Tape<T>,
    logits: &[Var; 4],
    labels: &[usize; 4],
) -> Result<Var> {
    let mut total = tape.softmax_cross_entropy(logits[0], labels[0])?;
    for i in 1..4 {
        let term = tape.softmax_cross_entropy(logits[i], labels[i])?;
        total = tape.add(total, term)?;
    }
    Ok(total)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
