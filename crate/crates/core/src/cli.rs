//! Command-line entry point: data generation, training, evaluation, gradient
//! checking and attention-map export.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{paths, RunConfig};
use crate::datasynth::{generate_dataset, read_dataset, ClipData, Mode, Sample, Split};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::netpbm;
use crate::tensor::{Precision, Real};
use crate::training::{
    check_model_gradients, decode_checkpoint, evaluate, examples_from_samples, format_metrics, peek_precision,
    save_checkpoint, Example, Fault, Session,
};
use crate::viz::{clip_attention, export_pgm, mask_contrast, side_by_side};

#[derive(Debug, Parser)]
#[command(name = "attentive-lstm", version, about = "Attention-guided LSTM for compositional clip classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its manifest.
    GenData(Common),
    /// Train on the train split of a manifest.
    Train(TrainArgs),
    /// Report accuracy of a checkpoint on one split.
    Eval(EvalArgs),
    /// Finite-difference check of every parameter of the tiny model.
    Gradcheck(GradcheckArgs),
    /// Write per-frame attention maps of an image-mode checkpoint.
    Visualize(VisualizeArgs),
}

/// Flags every command understands.
#[derive(Debug, Args, Default)]
pub struct Common {
    /// Flat key=value settings file; flags override it.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    /// Drop the attention network; features go to the decoder ungated.
    #[arg(long)]
    pub no_attention: bool,
    /// Feed the attention network and decoder in temporal order.
    #[arg(long)]
    pub no_reverse: bool,
    /// Skip the attribute phase and train everything on the class loss.
    #[arg(long)]
    pub no_repr: bool,
    #[arg(long, value_name = "N")]
    pub epochs1: Option<usize>,
    #[arg(long, value_name = "N")]
    pub epochs2: Option<usize>,
    #[arg(long, value_name = "N")]
    pub batch: Option<usize>,
    #[arg(long, value_name = "N")]
    pub frames: Option<usize>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = parse_precision)]
    pub precision: Option<Precision>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    /// Corrupts one analytic gradient, to show the check catches it.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Debug, Args)]
pub struct VisualizeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    /// Number of clips to render.
    #[arg(long, default_value_t = 1)]
    pub clips: usize,
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_precision(s: &str) -> std::result::Result<Precision, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl Common {
    /// Flag settings in `key=value` form, applied after the config file.
    fn overrides(&self) -> Vec<(String, String)> {
        let mut kv = Vec::new();
        let mut put = |k: &str, v: String| kv.push((k.to_string(), v));
        if let Some(m) = self.mode {
            put("mode", m.to_string());
        }
        if let Some(s) = self.seed {
            put("seed", s.to_string());
        }
        if self.no_attention {
            put("attention_enabled", "false".into());
        }
        if self.no_reverse {
            put("reverse_enabled", "false".into());
        }
        if self.no_repr {
            put("representation_enabled", "false".into());
        }
        if let Some(n) = self.epochs1 {
            put("epochs1", n.to_string());
        }
        if let Some(n) = self.epochs2 {
            put("epochs2", n.to_string());
        }
        if let Some(n) = self.batch {
            put("batch_size", n.to_string());
        }
        if let Some(n) = self.frames {
            put("frames", n.to_string());
        }
        if let Some(p) = self.precision {
            put("precision", p.to_string());
        }
        kv
    }

    fn run_config(&self, fallback: Mode) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides(), fallback)
    }

    fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code: 0 success, 1 runtime or numeric failure, 2 usage error.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::GenData(c) => cmd_gen_data(&c, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Gradcheck(a) => cmd_gradcheck(&a, out),
        Command::Visualize(a) => cmd_visualize(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        _ => 1,
    }
}

fn io<T>(r: std::io::Result<T>) -> Result<T> {
    r.map_err(Error::from)
}

pub fn cmd_gen_data(c: &Common, out: &mut dyn Write) -> Result<i32> {
    let cfg = c.run_config(Mode::Vector)?;
    let dir = c.out_or(paths::DATA_DIR);
    let ds = generate_dataset(&cfg.data)?;
    let manifest = crate::datasynth::write_dataset(&ds, &dir)?;
    fs::write(dir.join(paths::CLASS_TABLE), ds.table.to_text())?;
    io(writeln!(
        out,
        "{} {} clips ({} train, {} test)",
        cfg.mode(),
        ds.len(),
        ds.train.len(),
        ds.test.len()
    ))?;
    io(writeln!(out, "manifest {}", manifest.display()))?;
    Ok(0)
}

fn manifest_path(given: &Option<PathBuf>) -> PathBuf {
    given
        .clone()
        .unwrap_or_else(|| Path::new(paths::DATA_DIR).join(crate::datasynth::MANIFEST_NAME))
}

fn dataset_mode(samples: &[Sample]) -> Mode {
    match samples.first().map(|s| &s.data) {
        Some(ClipData::Image { .. }) => Mode::Image,
        _ => Mode::Vector,
    }
}

/// Checks that `samples` fit `cfg` before any training starts.
fn check_fit(cfg: &ModelConfig, samples: &[Sample]) -> Result<()> {
    for s in samples {
        let (frames, ok) = match &s.data {
            ClipData::Vector(seq) => (seq.len(), cfg.extractor.is_none() && seq.dim() == cfg.feature_dim),
            ClipData::Image { volume, .. } => (volume.len(), cfg.extractor.is_some()),
        };
        if !ok {
            return Err(Error::Config(format!(
                "clip {} does not fit the model (mode or feature dimension differs)",
                s.clip_id
            )));
        }
        if frames != cfg.num_frames {
            return Err(Error::Config(format!(
                "clip {} has {frames} frames, model expects {}",
                s.clip_id, cfg.num_frames
            )));
        }
        if s.labels.class >= cfg.class_count {
            return Err(Error::Config(format!("clip {} has class {} out of range", s.clip_id, s.labels.class)));
        }
    }
    Ok(())
}

fn split_of(samples: Vec<Sample>, split: Split) -> Vec<Sample> {
    samples.into_iter().filter(|s| s.split == split).collect()
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let samples = read_dataset(&manifest_path(&a.manifest))?;
    let cfg = a.common.run_config(dataset_mode(&samples))?;
    let train = split_of(samples, Split::Train);
    if train.is_empty() {
        return Err(Error::Config("manifest has no training clips".into()));
    }
    check_fit(&cfg.model, &train)?;
    let dir = a.common.out_or(paths::RUN_DIR);
    fs::create_dir_all(&dir)?;
    match cfg.precision {
        Precision::Standard => train_at::<f32>(&cfg, &train, &dir, out),
        Precision::High => train_at::<f64>(&cfg, &train, &dir, out),
    }
}

fn train_at<T: Real>(cfg: &RunConfig, train: &[Sample], dir: &Path, out: &mut dyn Write) -> Result<i32> {
    let data: Vec<Example<T>> = examples_from_samples(train)?;
    let model = Model::<T>::new(cfg.model.clone(), cfg.train.seed)?;
    let mut session = Session::new(model, cfg.train.clone())?;
    while let Some(record) = session.run_epoch(&data)? {
        io(writeln!(out, "{record}"))?;
    }
    let metrics = dir.join(paths::METRICS);
    fs::write(&metrics, format_metrics(&session.state.history))?;
    let checkpoint = dir.join(paths::CHECKPOINT);
    save_checkpoint(&session, &checkpoint)?;
    let report = evaluate(&session.model, &data)?;
    io(writeln!(out, "train accuracy {:.4}", report.accuracy))?;
    io(writeln!(out, "checkpoint {}", checkpoint.display()))?;
    io(writeln!(out, "metrics {}", metrics.display()))?;
    Ok(0)
}

fn checkpoint_path(given: &Option<PathBuf>) -> PathBuf {
    given
        .clone()
        .unwrap_or_else(|| Path::new(paths::RUN_DIR).join(paths::CHECKPOINT))
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let bytes = fs::read(checkpoint_path(&a.checkpoint))?;
    let samples = split_of(read_dataset(&manifest_path(&a.manifest))?, a.split);
    if samples.is_empty() {
        return Err(Error::Config(format!("the {} split is empty", a.split)));
    }
    match peek_precision(&bytes)? {
        Precision::Standard => eval_at::<f32>(&bytes, &samples, out),
        Precision::High => eval_at::<f64>(&bytes, &samples, out),
    }
}

fn eval_at<T: Real>(bytes: &[u8], samples: &[Sample], out: &mut dyn Write) -> Result<i32> {
    let session = decode_checkpoint::<T>(bytes)?;
    check_fit(&session.model.cfg, samples).map_err(|e| Error::format(0, format!("checkpoint does not match data: {e}")))?;
    let data: Vec<Example<T>> = examples_from_samples(samples)?;
    let report = evaluate(&session.model, &data)?;
    io(writeln!(out, "accuracy {:.4} ({}/{})", report.accuracy, report.correct, report.count))?;
    if session.cfg.representation_enabled {
        let a = report.attribute_accuracy;
        io(writeln!(
            out,
            "attributes takeoff {:.4} somersault {:.4} twist {:.4} flight {:.4}",
            a[0], a[1], a[2], a[3]
        ))?;
    }
    let seen = report.per_class.iter().flatten().count();
    let perfect = report.per_class.iter().flatten().filter(|&&v| v == 1.0).count();
    io(writeln!(out, "classes {seen} evaluated, {perfect} fully correct"))?;
    for (t, p, n) in report.top_confusions(5) {
        io(writeln!(out, "confused {t} -> {p}: {n}"))?;
    }
    Ok(0)
}

pub fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let mut cfg = ModelConfig::tiny();
    cfg.attention_enabled = !a.common.no_attention;
    cfg.reverse_enabled = !a.common.no_reverse;
    let fault = if a.inject_fault { Fault::DetachedTerm } else { Fault::None };
    let report = check_model_gradients(&cfg, a.common.seed.unwrap_or(0), fault)?;
    io(writeln!(out, "{report}"))?;
    let mut groups: Vec<(String, bool, f64)> = Vec::new();
    for p in &report.params {
        let group = p.name.split('.').take(2).collect::<Vec<_>>().join(".");
        match groups.iter_mut().find(|g| g.0 == group) {
            Some(g) => {
                g.1 &= p.passed;
                g.2 = g.2.max(p.max_relative_error);
            }
            None => groups.push((group, p.passed, p.max_relative_error)),
        }
    }
    for (name, passed, worst) in groups {
        io(writeln!(out, "group {name} {} max_rel_err={worst:.3e}", if passed { "PASS" } else { "FAIL" }))?;
    }
    Ok(if report.passed() { 0 } else { 1 })
}

pub fn cmd_visualize(a: &VisualizeArgs, out: &mut dyn Write) -> Result<i32> {
    let bytes = fs::read(checkpoint_path(&a.checkpoint))?;
    match peek_precision(&bytes)? {
        Precision::Standard => visualize_at::<f32>(a, &bytes, out),
        Precision::High => visualize_at::<f64>(a, &bytes, out),
    }
}

fn visualize_at<T: Real>(a: &VisualizeArgs, bytes: &[u8], out: &mut dyn Write) -> Result<i32> {
    let session = decode_checkpoint::<T>(bytes)?;
    let model = &session.model;
    if model.extractor.is_none() {
        return Err(Error::Config(
            "checkpoint was trained on feature vectors; attention maps need an image-mode model".into(),
        ));
    }
    if model.attention.is_none() {
        return Err(Error::Config("checkpoint was trained without attention".into()));
    }
    let samples = split_of(read_dataset(&manifest_path(&a.manifest))?, a.split);
    if samples.is_empty() {
        return Err(Error::Config(format!("the {} split is empty", a.split)));
    }
    check_fit(&model.cfg, &samples)?;
    let dir = a.common.out_or(paths::VIZ_DIR);
    let digits = (model.cfg.num_frames.saturating_sub(1)).to_string().len().max(3);
    let (mut frames, mut hits) = (0, 0);
    for sample in samples.iter().take(a.clips) {
        let ClipData::Image { volume, masks } = &sample.data else {
            unreachable!("check_fit admits only image clips here")
        };
        let ex = Example::<T>::from_sample(sample)?;
        let clip_dir = dir.join(format!("clip_{:05}", sample.clip_id));
        fs::create_dir_all(&clip_dir)?;
        for m in clip_attention(model, &ex)? {
            export_pgm(&m.overlay, clip_dir.join(format!("map_{:0digits$}.pgm", m.frame)))?;
            let strip = side_by_side(&volume.frames[m.frame], &m.overlay)?;
            netpbm::write_ppm(&strip, clip_dir.join(format!("strip_{:0digits$}.ppm", m.frame)))?;
            frames += 1;
            hits += mask_contrast(&m.overlay, &masks[m.frame])?.hit() as usize;
        }
        io(writeln!(out, "clip {} -> {}", sample.clip_id, clip_dir.display()))?;
    }
    io(writeln!(out, "frames {frames}, attention higher on the blob in {hits}"))?;
    Ok(0)
}
