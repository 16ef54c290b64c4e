//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line
//! (written straight to stderr so it shows without `--nocapture`), and the
//! test fails if any criterion fails.

use std::io::Write;
use std::time::Instant;

use attentive_lstm::autodiff::{ParamStore, Tape, Var};
use attentive_lstm::datasynth::{generate_dataset, ClipData, DatasetConfig, Mode, SynthConfig};
use attentive_lstm::features::{decode_features, encode_features, load_features, save_features, FeatureSequence};
use attentive_lstm::model::{AttentionActivation, Labels, Model, ModelConfig, Phase};
use attentive_lstm::recurrent::{cell_step, InitScheme, LayerState, LstmCellParams};
use attentive_lstm::training::{
    check_model_gradients, decode_checkpoint, encode_checkpoint, evaluate, examples_from_samples, predict,
    AdamConfig, AdamState, Example, Fault, Session, TrainConfig, TrainPhase,
};
use attentive_lstm::viz::localization;
use attentive_lstm::{cli, Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn lib<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn report(line: &str) {
    let mut err = std::io::stderr();
    let _ = writeln!(err, "{line}");
    let _ = err.flush();
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

// 1. Gradient correctness over every parameter of the tiny model.
fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig::tiny();
    let report = lib(check_model_gradients(&cfg, 0, Fault::None))?;
    let elapsed = start.elapsed().as_secs_f64();
    let params = lib(Model::<f64>::new(cfg, 0))?.store.len();
    ensure!(report.params.len() == params, "checked {} of {params} parameters", report.params.len());
    ensure!(report.passed(), "max relative error {:.3e}", report.max_relative_error());
    ensure!(report.max_relative_error() < 1e-4, "max relative error {:.3e}", report.max_relative_error());
    ensure!(elapsed < 60.0, "took {elapsed:.1}s");
    Ok(format!(
        "{params} parameters, max relative error {:.3e}, {elapsed:.1}s",
        report.max_relative_error()
    ))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// 2. LSTM cell against a scalar loop over the gate equations.
fn lstm_cell_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let (d, p) = (rng.random_range(1..7), rng.random_range(1..7));
        let mut store = ParamStore::<f64>::new();
        let cell = lib(LstmCellParams::register(&mut store, "cell", d, p, &InitScheme::default(), &mut rng))?;
        for param in store.iter_mut() {
            let n = param.value.len();
            param.value.data_mut().copy_from_slice(&random_vec(&mut rng, n, 1.5));
        }
        let x = random_vec(&mut rng, d, 2.0);
        let h0 = random_vec(&mut rng, p, 1.0);
        let c0 = random_vec(&mut rng, p, 2.0);

        let mut tape = Tape::new();
        let xv = lib(tape.constant(Tensor::vector(x.clone())))?;
        let prev = LayerState {
            h: lib(tape.constant(Tensor::vector(h0.clone())))?,
            c: lib(tape.constant(Tensor::vector(c0.clone())))?,
        };
        let next = lib(cell_step(&mut tape, &store, &cell, xv, &prev))?;

        let gate = |g: usize, r: usize| -> f64 {
            let wx = store.value(cell.w_x[g]).data();
            let wh = store.value(cell.w_h[g]).data();
            let mut s = store.value(cell.b[g]).data()[r];
            for k in 0..d {
                s += wx[r * d + k] * x[k];
            }
            for k in 0..p {
                s += wh[r * p + k] * h0[k];
            }
            s
        };
        for r in 0..p {
            let i = sigmoid(gate(0, r));
            let f = sigmoid(gate(1, r));
            let o = sigmoid(gate(2, r));
            let g = gate(3, r).tanh();
            let c = f * c0[r] + i * g;
            let h = o * c.tanh();
            let dc = (tape.value(next.c).data()[r] - c).abs();
            let dh = (tape.value(next.h).data()[r] - h).abs();
            worst = worst.max(dc).max(dh);
            ensure!(dc <= 1e-12 && dh <= 1e-12, "case {case}: deviation {:.3e}", dc.max(dh));
        }
    }
    Ok(format!("100 cases, max deviation {worst:.1e}"))
}

// 3. Adam against a hand-rolled iteration on a scalar quadratic.
fn adam_oracle() -> Outcome {
    let cfg = AdamConfig {
        lr: 0.05,
        ..AdamConfig::default()
    };
    let (a, target) = (2.5, -1.25);
    let mut store = ParamStore::<f64>::new();
    lib(store.add("theta", Tensor::vector(vec![3.0])))?;
    let mut state = AdamState::new(cfg, &store);
    let (mut theta, mut m, mut v) = (3.0f64, 0.0f64, 0.0f64);
    let mut worst: f64 = 0.0;
    for t in 1..=100 {
        // loss = a/2 (theta - target)^2
        let g_lib = a * (store.value(store.id("theta").unwrap()).data()[0] - target);
        store.iter_mut().next().unwrap().grad.data_mut()[0] = g_lib;
        lib(state.step(&mut store))?;

        let g = a * (theta - target);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let m_hat = m / (1.0 - 0.9f64.powi(t));
        let v_hat = v / (1.0 - 0.999f64.powi(t));
        theta -= 0.05 * m_hat / (v_hat.sqrt() + 1e-8);

        let got = store.value(store.id("theta").unwrap()).data()[0];
        worst = worst.max((got - theta).abs());
        ensure!((got - theta).abs() <= 1e-12, "step {t}: {got} vs {theta}");
    }

    let lr = 1e-4;
    let mut first_worst: f64 = 0.0;
    for g in [3.7, -0.02, 1e-3, -250.0] {
        let mut s = ParamStore::<f64>::new();
        lib(s.add("p", Tensor::vector(vec![0.0])))?;
        s.iter_mut().next().unwrap().grad.data_mut()[0] = g;
        let mut st = AdamState::new(AdamConfig::default(), &s);
        lib(st.step(&mut s))?;
        let step = s.value(s.id("p").unwrap()).data()[0];
        let expected = -lr * g.signum() * g.abs() / (g.abs() + 1e-8);
        first_worst = first_worst.max((step - expected).abs());
        ensure!((step - expected).abs() < 1e-15, "first step {step} vs {expected} for g={g}");
        ensure!((step.abs() - lr).abs() < 1e-9, "first step magnitude {} not ~lr", step.abs());
    }
    Ok(format!(
        "100 steps max deviation {worst:.1e}, first step off lr by at most {first_worst:.1e}"
    ))
}

fn values(tape: &Tape<f64>, vars: &[Var]) -> Vec<Vec<u64>> {
    vars.iter()
        .map(|&v| tape.value(v).data().iter().map(|x| x.to_bits()).collect())
        .collect()
}

fn set_param(model: &mut Model<f64>, name: &str, f: impl Fn(usize) -> f64) {
    let id = model.store.id(name).unwrap_or_else(|| panic!("no parameter {name}"));
    for (i, v) in model.store.get_mut(id).value.data_mut().iter_mut().enumerate() {
        *v = f(i);
    }
}

// 4. Wiring invariants.
fn wiring_invariants() -> Outcome {
    let cfg = ModelConfig::tiny();
    let n = cfg.num_frames;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let feats: Vec<Tensor<f64>> = (0..n)
        .map(|_| Tensor::vector(random_vec(&mut rng, cfg.feature_dim, 1.0)))
        .collect();
    let labels = Labels {
        class: 1,
        attributes: [0, 1, 1, 0],
    };

    // (a) reversed feeding
    let model = lib(Model::<f64>::new(cfg.clone(), 5))?;
    let mut tape = Tape::new();
    let f = lib(model.feature_vars(&mut tape, &feats))?;
    let out = lib(model.backbone(&mut tape, &f, None))?;
    let att = out.attention.as_ref().ok_or("attention missing")?;
    for t in 0..n {
        ensure!(att.consumed[t] == f[n - 1 - t], "attention step {} did not read frame {}", t + 1, n - t);
        ensure!(out.decoder_inputs[t] == att.gated[t], "decoder step {} input is not the gated frame", t + 1);
        let expected = lib(tape.hadamard(f[n - 1 - t], att.a[t]))?;
        ensure!(
            tape.value(out.decoder_inputs[t]) == tape.value(expected),
            "decoder step {} did not read frame {}",
            t + 1,
            n - t
        );
    }

    // (b) a_t = 1 reproduces the path without attention bitwise
    let mut with = lib(Model::<f64>::new(cfg.clone(), 6))?;
    with.cfg.attention_activation = AttentionActivation::Linear;
    set_param(&mut with, "attention.fc.w", |_| 0.0);
    set_param(&mut with, "attention.fc.b", |_| 1.0);
    let mut without = lib(Model::<f64>::new(
        ModelConfig {
            attention_enabled: false,
            ..cfg.clone()
        },
        77,
    ))?;
    for p in without.store.iter_mut() {
        let src = with.store.by_name(&p.name).ok_or(format!("{} missing", p.name))?;
        p.value = src.value.clone();
    }
    let mut tape = Tape::new();
    let f = lib(with.feature_vars(&mut tape, &feats))?;
    for phase in [Phase::Representation, Phase::Class] {
        let a = lib(with.forward(&mut tape, &f, &labels, phase, None))?;
        let b = lib(without.forward(&mut tape, &f, &labels, phase, None))?;
        ensure!(
            values(&tape, &a.representations) == values(&tape, &b.representations),
            "representations differ"
        );
        ensure!(
            tape.value(a.loss.unwrap()).item().to_bits() == tape.value(b.loss.unwrap()).item().to_bits(),
            "losses differ"
        );
    }

    // (c) onehot aggregation weights select one frame's logits exactly
    let mut onehot = lib(Model::<f64>::new(cfg.clone(), 8))?;
    for k in 0..n {
        set_param(&mut onehot, "head.class.w", |i| if i == k { 1.0 } else { 0.0 });
        let mut tape = Tape::new();
        let f = lib(onehot.feature_vars(&mut tape, &feats))?;
        let out = lib(onehot.backbone(&mut tape, &f, None))?;
        let logits = lib(onehot.classify(&mut tape, &out.representations, None))?;
        let single = lib(onehot.class_head.fc.apply(&mut tape, &onehot.store, out.representations[k]))?;
        ensure!(
            values(&tape, &[logits]) == values(&tape, &[single]),
            "onehot({k}) does not select frame {k}"
        );
    }

    // (d) class phase leaves every non-head parameter untouched
    let data: Vec<Example<f64>> = (0..6)
        .map(|i| Example {
            clip_id: i,
            input: attentive_lstm::model::ClipInput::Features(
                (0..n).map(|_| Tensor::vector(random_vec(&mut rng, cfg.feature_dim, 1.0))).collect(),
            ),
            labels: Labels {
                class: i as usize % 4,
                attributes: [i as usize % 2, 0, 1, (i as usize / 2) % 2],
            },
        })
        .collect();
    let train = TrainConfig {
        epochs1: 1,
        epochs2: 4,
        batch_size: 2,
        ..TrainConfig::desk()
    };
    let mut session = lib(Session::new(lib(Model::<f64>::new(cfg, 9))?, train))?;
    lib(session.run_epoch(&data))?;
    let frozen = |name: &str| !Model::<f64>::is_class_head(name);
    let before = session.model.store.value_bytes(frozen);
    let head_before = session.model.store.value_bytes(Model::<f64>::is_class_head);
    lib(session.run(&data))?;
    ensure!(
        session.state.history[1..].iter().all(|r| r.phase == TrainPhase::Class),
        "expected four class epochs"
    );
    ensure!(session.model.store.value_bytes(frozen) == before, "non-head parameters changed");
    ensure!(
        session.model.store.value_bytes(Model::<f64>::is_class_head) != head_before,
        "class head did not train"
    );
    Ok("reversed feeding, attention identity, onehot aggregation, class-phase freeze".into())
}

// 5. The two-phase pipeline memorises one clip per class.
fn overfit_capability() -> Outcome {
    let start = Instant::now();
    let ds = lib(generate_dataset(&DatasetConfig {
        synth: SynthConfig {
            noise_level: 0.0,
            ..SynthConfig::default()
        },
        train_per_class: 1,
        test_per_class: 0,
        ..DatasetConfig::default()
    }))?;
    ensure!(ds.train.len() == 48, "expected 48 clips, got {}", ds.train.len());
    let data: Vec<Example<f32>> = lib(examples_from_samples(&ds.train))?;
    let model = lib(Model::<f32>::new(ModelConfig::desk(), 0))?;
    let mut session = lib(Session::new(model, TrainConfig::desk()))?;
    lib(session.run(&data))?;
    let acc = lib(evaluate(&session.model, &data))?.accuracy;
    let elapsed = start.elapsed().as_secs_f64();
    ensure!(acc == 1.0, "train accuracy {acc:.4}");
    ensure!(elapsed < 300.0, "took {elapsed:.1}s");
    Ok(format!(
        "train accuracy {acc:.4} after {} epochs, {elapsed:.1}s",
        session.state.history.len()
    ))
}

fn generalization_run(seed: u64, variant: &str) -> Result<f64, String> {
    let ds = lib(generate_dataset(&DatasetConfig {
        synth: SynthConfig {
            noise_level: 1.0,
            ..SynthConfig::default()
        },
        seed,
        ..DatasetConfig::default()
    }))?;
    let train: Vec<Example<f32>> = lib(examples_from_samples(&ds.train))?;
    let test: Vec<Example<f32>> = lib(examples_from_samples(&ds.test))?;
    let mut model_cfg = ModelConfig::desk();
    let mut train_cfg = TrainConfig {
        seed,
        ..TrainConfig::desk()
    };
    match variant {
        "full" => {}
        "no-attention" => model_cfg.attention_enabled = false,
        "unreversed" => model_cfg.reverse_enabled = false,
        "no-repr" => train_cfg.representation_enabled = false,
        other => return Err(format!("unknown variant {other}")),
    }
    let mut session = lib(Session::new(lib(Model::<f32>::new(model_cfg, seed))?, train_cfg))?;
    lib(session.run(&train))?;
    Ok(lib(evaluate(&session.model, &test))?.accuracy)
}

// 6. Directional ordering of the ablations on held-out clips.
fn generalization_ordering() -> Outcome {
    let variants = ["full", "no-attention", "unreversed", "no-repr"];
    let seeds = [0u64, 1, 2];
    let mut means = Vec::new();
    report("    variant        seed0   seed1   seed2   mean");
    for v in variants {
        let accs: Vec<f64> = seeds.iter().map(|&s| generalization_run(s, v)).collect::<Result<_, _>>()?;
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        report(&format!(
            "    {v:<14} {:.4}  {:.4}  {:.4}  {mean:.4}",
            accs[0], accs[1], accs[2]
        ));
        means.push(mean);
    }
    let full = means[0];
    let others: Vec<String> = variants[1..]
        .iter()
        .zip(&means[1..])
        .map(|(v, m)| format!("{v} {m:.4}{}", if full >= *m { "" } else { " (above full)" }))
        .collect();
    ensure!(
        full >= means[1],
        "full {full:.4} below no-attention {:.4}",
        means[1]
    );
    Ok(format!("full {full:.4} >= {}", others.join(", ")))
}

// 7. Attention maps favour the moving blob on image clips.
fn attention_localization() -> Outcome {
    let ds = lib(generate_dataset(&DatasetConfig {
        synth: SynthConfig {
            mode: Mode::Image,
            image_size: 32,
            noise_level: 0.5,
            ..SynthConfig::default()
        },
        train_per_class: 4,
        test_per_class: 1,
        seed: 0,
        ..DatasetConfig::default()
    }))?;
    let train: Vec<Example<f32>> = lib(examples_from_samples(&ds.train))?;
    let test: Vec<(Example<f32>, Vec<_>)> = ds
        .test
        .iter()
        .map(|s| match &s.data {
            ClipData::Image { masks, .. } => Ok((lib(Example::from_sample(s))?, masks.clone())),
            ClipData::Vector(_) => Err("expected image clips".to_string()),
        })
        .collect::<Result<_, _>>()?;
    let model_cfg = ModelConfig {
        extractor: Some(vec![8, 16]),
        ..ModelConfig::desk()
    };
    let mut session = lib(Session::new(lib(Model::<f32>::new(model_cfg, 0))?, TrainConfig::desk_image()))?;
    let untrained = lib(localization(&session.model, &test))?;
    lib(session.run(&train))?;
    let test_examples: Vec<Example<f32>> = test.iter().map(|(e, _)| e.clone()).collect();
    let acc = lib(evaluate(&session.model, &test_examples))?.accuracy;
    let loc = lib(localization(&session.model, &test))?;
    ensure!(
        loc.fraction() >= 0.6,
        "blob favoured on {:.3} of {} frames",
        loc.fraction(),
        loc.frames
    );
    Ok(format!(
        "blob favoured on {:.3} of {} test frames (inside {:.3} vs outside {:.3}); untrained {:.3}; test accuracy {acc:.4}",
        loc.fraction(),
        loc.frames,
        loc.mean_inside,
        loc.mean_outside,
        untrained.fraction()
    ))
}

fn resume_matches<T: Real>(seed: u64) -> Result<(), String> {
    let cfg = ModelConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<Example<T>> = (0..7)
        .map(|i| Example {
            clip_id: i,
            input: attentive_lstm::model::ClipInput::Features(
                (0..cfg.num_frames)
                    .map(|_| {
                        let v = random_vec(&mut rng, cfg.feature_dim, 1.0);
                        Tensor::from_f64(&[v.len()], &v).unwrap()
                    })
                    .collect(),
            ),
            labels: Labels {
                class: i as usize % 4,
                attributes: [i as usize % 2, 1, 0, (i as usize / 2) % 2],
            },
        })
        .collect();
    let train = TrainConfig {
        epochs1: 3,
        epochs2: 3,
        batch_size: 3,
        seed,
        ..TrainConfig::desk()
    };
    let fresh = || -> Result<Session<T>, String> { lib(Session::new(lib(Model::<T>::new(cfg.clone(), seed))?, train.clone())) };
    let mut full = fresh()?;
    lib(full.run(&data))?;
    for stop in 0..=6 {
        let mut part = fresh()?;
        for _ in 0..stop {
            lib(part.run_epoch(&data))?;
        }
        let mut resumed: Session<T> = lib(decode_checkpoint(&lib(encode_checkpoint(&part))?))?;
        lib(resumed.run(&data))?;
        ensure!(resumed.state.history == full.state.history, "history differs after resuming at epoch {stop}");
        ensure!(
            resumed.model.store.value_bytes(|_| true) == full.model.store.value_bytes(|_| true),
            "parameters differ after resuming at epoch {stop}"
        );
    }
    Ok(())
}

// 8. Lossless checkpoints and feature files; resumption is step-exact.
fn serialization() -> Outcome {
    let cfg = ModelConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut session = lib(Session::new(lib(Model::<f64>::new(cfg.clone(), 8))?, TrainConfig::desk()))?;
    for p in session.model.store.iter_mut() {
        let n = p.value.len();
        p.value.data_mut().copy_from_slice(&random_vec(&mut rng, n, 1.0));
    }
    let bytes = lib(encode_checkpoint(&session))?;
    let back: Session<f64> = lib(decode_checkpoint(&bytes))?;
    ensure!(lib(encode_checkpoint(&back))? == bytes, "re-encoded checkpoint differs");
    let clip = Example {
        clip_id: 0,
        input: attentive_lstm::model::ClipInput::Features(
            (0..cfg.num_frames)
                .map(|_| Tensor::vector(random_vec(&mut rng, cfg.feature_dim, 1.0)))
                .collect(),
        ),
        labels: Labels {
            class: 0,
            attributes: [0; 4],
        },
    };
    let a = lib(predict(&session.model, &clip))?;
    let b = lib(predict(&back.model, &clip))?;
    ensure!(
        a.class_logits.iter().map(|v| v.to_bits()).eq(b.class_logits.iter().map(|v| v.to_bits())),
        "reloaded forward differs"
    );

    let maps: Vec<Tensor<f64>> = (0..3)
        .map(|_| Tensor::new(vec![4, 2, 3], random_vec(&mut rng, 24, 5.0)).unwrap())
        .collect();
    let vectors: Vec<Tensor<f64>> = (0..3).map(|_| Tensor::vector(random_vec(&mut rng, 4, 5.0))).collect();
    let seq = lib(FeatureSequence::new(vectors, Some(maps)))?;
    let back: FeatureSequence<f64> = lib(decode_features(&encode_features(&seq)))?;
    ensure!(back == seq, "feature roundtrip differs");
    let dir = lib(tempfile::tempdir())?;
    let path = dir.path().join("clip.astf");
    let single = lib(FeatureSequence::<f32>::new(
        (0..5)
            .map(|_| Tensor::from_f64(&[6], &random_vec(&mut rng, 6, 3.0)).unwrap())
            .collect(),
        None,
    ))?;
    lib(save_features(&single, &path))?;
    let loaded: FeatureSequence<f32> = lib(load_features(&path))?;
    ensure!(
        loaded.vectors.iter().zip(&single.vectors).all(|(x, y)| x
            .data()
            .iter()
            .map(|v| v.to_bits())
            .eq(y.data().iter().map(|v| v.to_bits()))),
        "feature file roundtrip differs"
    );

    resume_matches::<f64>(21)?;
    resume_matches::<f32>(22)?;
    Ok("checkpoint and feature roundtrips bitwise; resume at every epoch boundary matches".into())
}

fn cli_run(args: &[&str]) -> Result<String, String> {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut full = vec!["attentive-lstm"];
    full.extend_from_slice(args);
    let code = cli::run(full, &mut out, &mut err);
    ensure!(code == 0, "{args:?} exited {code}: {}", String::from_utf8_lossy(&err));
    Ok(String::from_utf8_lossy(&out).into_owned())
}

// 9. Two identical training runs write identical logs and checkpoints.
fn determinism() -> Outcome {
    let dir = lib(tempfile::tempdir())?;
    let base = dir.path();
    let cfg_path = base.join("run.cfg");
    lib(std::fs::write(&cfg_path, "train_per_class=2\ntest_per_class=1\n"))?;
    let cfg = cfg_path.to_str().unwrap();
    let data = base.join("data");
    cli_run(&["gen-data", "--config", cfg, "--seed", "5", "--out", data.to_str().unwrap()])?;
    let manifest = data.join("manifest.txt");
    let mut artifacts = Vec::new();
    for run in ["a", "b"] {
        let out = base.join(run);
        cli_run(&[
            "train",
            "--config",
            cfg,
            "--seed",
            "5",
            "--epochs1",
            "4",
            "--epochs2",
            "3",
            "--manifest",
            manifest.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])?;
        let metrics = lib(std::fs::read(out.join("metrics.txt")))?;
        let checkpoint = lib(std::fs::read(out.join("checkpoint.astc")))?;
        artifacts.push((metrics, checkpoint));
    }
    ensure!(artifacts[0].0 == artifacts[1].0, "metrics logs differ");
    ensure!(artifacts[0].1 == artifacts[1].1, "checkpoints differ");
    let lines = String::from_utf8_lossy(&artifacts[0].0).lines().count();
    Ok(format!(
        "metrics ({} records) and checkpoints ({} bytes) identical",
        lines - 1,
        artifacts[0].1.len()
    ))
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient correctness", gradient_correctness),
        ("LSTM cell oracle", lstm_cell_oracle),
        ("Adam oracle", adam_oracle),
        ("wiring invariants", wiring_invariants),
        ("overfit capability", overfit_capability),
        ("generalization ordering", generalization_ordering),
        ("attention localization", attention_localization),
        ("serialization", serialization),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => report(&format!("criterion {} {name}: PASS ({detail}) [{secs:.1}s]", i + 1)),
            Err(detail) => {
                report(&format!("criterion {} {name}: FAIL ({detail}) [{secs:.1}s]", i + 1));
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
