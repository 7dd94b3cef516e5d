use std::path::Path;
use std::process::{Command, Output};

use ragcap::cli::params_table;
use ragcap::datastore::Datastore;
use ragcap::model::{count_trainable_params, save_checkpoint, ModelConfig, ModelParams, Seeds};
use ragcap::vector_index::write_vectors;

fn ragcap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ragcap"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = ragcap(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

/// Synthetic corpus plus a datastore and a matching untrained model.
fn workspace() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("a.toml"),
        "name = \"coco\"\nn_topics = 4\nembedding_dim = 32\nnoise_std = 0.2\nn_examples = 60\nseed = 9\n",
    )
    .unwrap();
    std::fs::write(
        dir.join("b.toml"),
        "name = \"vizwiz\"\nn_topics = 4\nembedding_dim = 32\nnoise_std = 0.2\nn_examples = 30\nseed = 10\n",
    )
    .unwrap();
    ok(dir, &["synth", "--spec", "a.toml", "--out", "a", "--val", "10"]);
    ok(dir, &["synth", "--spec", "b.toml", "--out", "b"]);
    ok(
        dir,
        &["store", "build", "--records", "a/records.tsv", "--vocab-from", "a/records.tsv", "--vocab-from", "b/records.tsv", "--out", "store"],
    );
    let (_, tok) = Datastore::load(&dir.join("store")).unwrap();
    let params = ModelParams::init(ModelConfig::toy(1, 2, 16, 4, tok.len()), Seeds { backbone: 1, theta: 2 }).unwrap();
    save_checkpoint(&dir.join("model.ckpt"), &params, Some(&tok)).unwrap();
    tmp
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&ragcap(tmp.path(), &["frobnicate"])), 2);
    assert_eq!(code(&ragcap(tmp.path(), &["caption", "--images", "x.bin"])), 2);
    assert_eq!(code(&ragcap(tmp.path(), &["count-params", "--d", "0"])), 2);
}

#[test]
fn missing_or_corrupt_artifacts_exit_3() {
    let ws = workspace();
    let dir = ws.path();
    assert_eq!(code(&ragcap(dir, &["store", "stats", "--store", "nowhere"])), 3);
    std::fs::write(dir.join("bad.ckpt"), b"RAGCAPCK garbage").unwrap();
    let out = ragcap(
        dir,
        &["caption", "--images", "a/val_images.bin", "--store", "store", "--model", "bad.ckpt", "--out", "c.txt"],
    );
    assert_eq!(code(&out), 3);
}

#[test]
fn caption_rejects_k_zero_and_dimension_mismatch() {
    let ws = workspace();
    let dir = ws.path();
    let k0 = ragcap(
        dir,
        &["caption", "--images", "a/val_images.bin", "--store", "store", "--model", "model.ckpt", "--out", "c.txt", "--k", "0"],
    );
    assert_eq!(code(&k0), 2);
    assert!(String::from_utf8_lossy(&k0.stderr).contains("--no-retrieval"));

    write_vectors(&dir.join("narrow.bin"), 16, &[vec![1.0; 16]]).unwrap();
    let narrow = ragcap(
        dir,
        &["caption", "--images", "narrow.bin", "--store", "store", "--model", "model.ckpt", "--out", "c.txt"],
    );
    assert_eq!(code(&narrow), 3);
}

#[test]
fn caption_writes_one_line_per_image_and_sources() {
    let ws = workspace();
    let dir = ws.path();
    let stdout = ok(
        dir,
        &["caption", "--images", "a/val_images.bin", "--store", "store", "--model", "model.ckpt", "--out", "c.txt", "--show-prompt", "--beam", "2", "--max-new", "6"],
    );
    let captions = std::fs::read_to_string(dir.join("c.txt")).unwrap();
    assert_eq!(captions.lines().count(), 10);
    assert_eq!(stdout.lines().count(), 10);
    let first: serde_json::Value = serde_json::from_str(stdout.lines().next().unwrap()).unwrap();
    assert!(first["prompt"].as_str().unwrap().starts_with("Similar images show\n\n"));
    let sources: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("c.txt.sources.json")).unwrap()).unwrap();
    assert_eq!(sources["coco"], 1.0);
    assert!(dir.join("c.txt.manifest.json").exists());

    ok(dir, &["caption", "--images", "a/val_images.bin", "--model", "model.ckpt", "--out", "n.txt", "--no-retrieval", "--max-new", "4"]);
    assert_eq!(std::fs::read_to_string(dir.join("n.txt")).unwrap().lines().count(), 10);
    assert!(!dir.join("n.txt.sources.json").exists());
}

#[test]
fn empty_image_file_gives_empty_output() {
    let ws = workspace();
    let dir = ws.path();
    write_vectors(&dir.join("none.bin"), 32, &[]).unwrap();
    ok(dir, &["caption", "--images", "none.bin", "--store", "store", "--model", "model.ckpt", "--out", "e.txt"]);
    assert_eq!(std::fs::read(dir.join("e.txt")).unwrap(), b"");
}

#[test]
fn swap_and_augment_change_sources() {
    let ws = workspace();
    let dir = ws.path();
    let before = ok(dir, &["store", "stats", "--store", "store"]);
    assert!(before.contains("records\t50\n"));
    assert!(before.contains("source\tcoco\t50\n"));

    ok(dir, &["store", "swap", "--store", "store", "--records", "b/records.tsv", "--out", "swapped"]);
    let swapped = ok(dir, &["store", "stats", "--store", "swapped"]);
    assert!(swapped.contains("source\tvizwiz\t30\n"));
    assert!(!swapped.contains("coco"));

    ok(dir, &["store", "augment", "--store", "store", "--records", "b/records.tsv", "--out", "both"]);
    let (both, _) = Datastore::load(&dir.join("both")).unwrap();
    assert_eq!(both.len(), 80);
    assert_eq!(both.ids(), (0..80).collect::<Vec<u64>>());
    assert_eq!(both.get(50).unwrap().source, "vizwiz");
}

#[test]
fn eval_scores_and_rejects_misaligned_files() {
    let ws = workspace();
    let dir = ws.path();
    let report = ok(dir, &["eval", "--hyp", "a/val_references.txt", "--refs", "a/val_references.txt", "--out", "r.txt"]);
    assert!(report.contains("examples\t10"));
    assert!(report.contains("bleu4\t1.000000"));
    assert!(report.contains("cider\t"));
    assert_eq!(std::fs::read_to_string(dir.join("r.txt")).unwrap(), report);
    let bad = ragcap(dir, &["eval", "--hyp", "a/val_references.txt", "--refs", "a/references.txt"]);
    assert_eq!(code(&bad), 3);
}

#[test]
fn count_params_prints_full_scale_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["count-params", "--d", "4,8,16,64"]);
    let counts: Vec<&str> = out.lines().skip(1).map(|l| l.rsplit('\t').next().unwrap()).collect();
    assert_eq!(counts, ["1769472", "3538944", "7077888", "28311552"]);
}

#[test]
fn report_tables_missing_markers_and_idempotence() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    std::fs::create_dir(&run).unwrap();
    std::fs::write(run.join("config.json"), r#"{"ablation": {"grid": [4, 8, 16, 32, 64]}}"#).unwrap();
    let partial = ok(tmp.path(), &["report", "--run", "run"]);
    assert_eq!(partial.matches("missing").count(), 3);

    std::fs::write(
        run.join("ablation.json"),
        r#"{"model": {"layers": 12, "heads": 12, "d_model": 768, "d_encoder": 768},
            "rows": [{"d": 4, "val_loss_retrieval": 0.5, "val_loss_no_retrieval": 0.75, "cider_retrieval": null, "cider_no_retrieval": null}],
            "blank_image": []}"#,
    )
    .unwrap();
    ok(tmp.path(), &["report", "--run", "run"]);
    let first = std::fs::read_to_string(run.join("report.txt")).unwrap();
    ok(tmp.path(), &["report", "--run", "run"]);
    assert_eq!(std::fs::read_to_string(run.join("report.txt")).unwrap(), first);

    let table = params_table(12, 12, 768, 768, &[4, 8, 16, 32, 64]).unwrap();
    assert!(first.contains(&table));
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 5);
    for (row, d) in rows.iter().zip([4, 8, 16, 32, 64]) {
        let cfg = ModelConfig::gpt2_base(d);
        assert!(row.ends_with(&format!("\t{}", count_trainable_params(&cfg))));
    }
    assert!(first.contains("4\t0.5000\t0.7500\tmissing\tmissing\tmissing"));
    assert!(first.contains("== retrieved caption sources ==\nmissing"));

    assert_eq!(code(&ragcap(tmp.path(), &["report", "--run", "absent"])), 2);
}
