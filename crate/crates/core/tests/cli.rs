use std::fs;
use std::path::Path;

use attentive_lstm::cli;
use attentive_lstm::datasynth::{read_dataset, Split};
use attentive_lstm::model::Model;
use attentive_lstm::netpbm::read_pgm;
use attentive_lstm::training::{evaluate, examples_from_samples, load_checkpoint, Example};
use attentive_lstm::viz::clip_attention;

struct Run {
    code: i32,
    out: String,
    err: String,
}

fn run(args: &[&str]) -> Run {
    let mut full = vec!["attentive-lstm"];
    full.extend_from_slice(args);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = cli::run(full, &mut out, &mut err);
    Run {
        code,
        out: String::from_utf8(out).unwrap(),
        err: String::from_utf8(err).unwrap(),
    }
}

fn ok(args: &[&str]) -> String {
    let r = run(args);
    assert_eq!(r.code, 0, "{args:?} failed: {}", r.err);
    r.out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a small dataset with one train and one test clip per class.
fn small_data(dir: &Path, extra: &str) -> std::path::PathBuf {
    let cfg = dir.join("small.cfg");
    fs::write(&cfg, format!("train_per_class=1\ntest_per_class=1\n{extra}")).unwrap();
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&dir.join("data"))]);
    dir.join("data").join("manifest.txt")
}

#[test]
fn gen_data_is_reproducible_and_defaults_to_480_clips() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out = ok(&["gen-data", "--seed", "3", "--out", s(&a)]);
    ok(&["gen-data", "--seed", "3", "--out", s(&b)]);
    assert!(out.contains("480 clips"), "{out}");
    let ma = fs::read(a.join("manifest.txt")).unwrap();
    assert_eq!(ma, fs::read(b.join("manifest.txt")).unwrap());
    assert_eq!(read_dataset(&a.join("manifest.txt")).unwrap().len(), 480);
    assert_eq!(
        fs::read(a.join("class_table.txt")).unwrap(),
        fs::read(b.join("class_table.txt")).unwrap()
    );
}

#[test]
fn class_table_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen-data", "--seed", "0", "--out", s(&data)]);
    let golden = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/class_table.txt")).unwrap();
    assert_eq!(fs::read_to_string(data.join("class_table.txt")).unwrap(), golden);
}

#[test]
fn bad_arguments_exit_with_usage_code() {
    assert_eq!(run(&["gen-data", "--mode", "audio"]).code, 2);
    assert_eq!(run(&["frobnicate"]).code, 2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "no_such_key=1\n").unwrap();
    let r = run(&["gen-data", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(r.code, 2);
    assert!(r.err.contains("no_such_key"), "{}", r.err);
}

#[test]
fn zero_epochs_store_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_data(dir.path(), "");
    let run_dir = dir.path().join("run");
    ok(&[
        "train", "--manifest", s(&manifest), "--seed", "11", "--epochs1", "0", "--epochs2", "0", "--out",
        s(&run_dir),
    ]);
    let session = load_checkpoint::<f32>(run_dir.join("checkpoint.astc")).unwrap();
    let fresh = Model::<f32>::new(session.model.cfg.clone(), 11).unwrap();
    assert_eq!(session.model.store.value_bytes(|_| true), fresh.store.value_bytes(|_| true));
    assert!(session.state.history.is_empty());
}

#[test]
fn no_attention_checkpoint_has_no_attention_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_data(dir.path(), "");
    let run_dir = dir.path().join("run");
    ok(&[
        "train", "--manifest", s(&manifest), "--no-attention", "--epochs1", "1", "--epochs2", "1", "--out",
        s(&run_dir),
    ]);
    let session = load_checkpoint::<f32>(run_dir.join("checkpoint.astc")).unwrap();
    assert!(session.model.attention.is_none());
    assert!(session.model.store.iter().all(|(_, p)| !p.name.starts_with("attention")));
}

#[test]
fn eval_is_stable_and_rejects_empty_splits() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_data(dir.path(), "");
    let run_dir = dir.path().join("run");
    let train_out = ok(&["train", "--manifest", s(&manifest), "--out", s(&run_dir)]);
    assert!(train_out.contains("train accuracy 1.0000"), "{train_out}");
    let ckpt = run_dir.join("checkpoint.astc");
    let eval = |split: &str| run(&["eval", "--manifest", s(&manifest), "--checkpoint", s(&ckpt), "--split", split]);

    let first = eval("test");
    assert_eq!(first.code, 0, "{}", first.err);
    assert_eq!(first.out, eval("test").out);
    assert!(first.out.starts_with("accuracy "), "{}", first.out);
    assert!(eval("train").out.starts_with("accuracy 1.0000 (48/48)"));

    let session = load_checkpoint::<f32>(&ckpt).unwrap();
    let test: Vec<_> = read_dataset(&manifest).unwrap().into_iter().filter(|s| s.split == Split::Test).collect();
    let report = evaluate(&session.model, &examples_from_samples::<f32>(&test).unwrap()).unwrap();
    assert!(first.out.starts_with(&format!("accuracy {:.4} ", report.accuracy)));

    let train_only = tempfile::tempdir().unwrap();
    let cfg = train_only.path().join("t.cfg");
    fs::write(&cfg, "train_per_class=1\ntest_per_class=0\n").unwrap();
    ok(&["gen-data", "--config", s(&cfg), "--out", s(train_only.path())]);
    let empty = run(&[
        "eval", "--manifest", s(&train_only.path().join("manifest.txt")), "--checkpoint", s(&ckpt),
    ]);
    assert_eq!(empty.code, 2, "{}", empty.err);
}

#[test]
fn gradcheck_lists_each_parameter_once() {
    let r = run(&["gradcheck"]);
    assert_eq!(r.code, 0, "{}", r.out);
    let model = Model::<f64>::new(attentive_lstm::model::ModelConfig::tiny(), 0).unwrap();
    for (_, p) in model.store.iter() {
        let hits = r.out.lines().filter(|l| l.split_whitespace().nth(1) == Some(p.name.as_str())).count();
        assert_eq!(hits, 1, "{} listed {hits} times", p.name);
    }
    assert!(r.out.lines().any(|l| l.starts_with("group attention.fc PASS")));

    let faulty = run(&["gradcheck", "--inject-fault"]);
    assert_eq!(faulty.code, 1);
    assert!(faulty.out.contains("FAIL"));
}

#[test]
fn visualize_writes_the_library_maps() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_data(dir.path(), "mode=image\nimage_size=16\nframes=6\n");
    let run_dir = dir.path().join("run");
    ok(&[
        "train", "--manifest", s(&manifest), "--frames", "6", "--epochs1", "1", "--epochs2", "1", "--out",
        s(&run_dir),
    ]);
    let ckpt = run_dir.join("checkpoint.astc");
    let viz = dir.path().join("viz");
    ok(&[
        "visualize", "--manifest", s(&manifest), "--checkpoint", s(&ckpt), "--clips", "2", "--out", s(&viz),
    ]);

    let session = load_checkpoint::<f32>(&ckpt).unwrap();
    let test: Vec<_> = read_dataset(&manifest).unwrap().into_iter().filter(|s| s.split == Split::Test).collect();
    for sample in &test[..2] {
        let clip_dir = viz.join(format!("clip_{:05}", sample.clip_id));
        let mut names: Vec<String> = fs::read_dir(&clip_dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n.starts_with("map_"))
            .collect();
        names.sort();
        let expected: Vec<String> = (0..6).map(|i| format!("map_{i:03}.pgm")).collect();
        assert_eq!(names, expected);
        let maps = clip_attention(&session.model, &Example::from_sample(sample).unwrap()).unwrap();
        for m in maps {
            let written = read_pgm(clip_dir.join(format!("map_{:03}.pgm", m.frame))).unwrap();
            assert_eq!(written, m.overlay.to_gray());
        }
    }
    assert_eq!(fs::read_dir(&viz).unwrap().count(), 2);
}

#[test]
fn visualize_rejects_vector_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_data(dir.path(), "");
    let run_dir = dir.path().join("run");
    ok(&["train", "--manifest", s(&manifest), "--epochs1", "1", "--epochs2", "0", "--out", s(&run_dir)]);
    let r = run(&[
        "visualize", "--manifest", s(&manifest), "--checkpoint", s(&run_dir.join("checkpoint.astc")), "--out",
        s(&dir.path().join("viz")),
    ]);
    assert_eq!(r.code, 2);
}
