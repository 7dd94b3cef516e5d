//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p ragcap --test acceptance`.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use proptest::collection::vec as pvec;
use proptest::test_runner::{Config, TestRunner};
use rand::RngExt;

use ragcap::caption::{CaptionSettings, Captioner};
use ragcap::datastore::{ingest, Datastore, IndexPolicy, IngestOptions};
use ragcap::evaluation::metrics::{bleu4, cider, modified_precision};
use ragcap::evaluation::{evaluate, evaluate_retrieval_only, retrieval_only_baseline, EvalExample};
use ragcap::model::{count_trainable_params, theta_shapes, GradMode, ModelConfig, ModelParams, Seeds, Theta};
use ragcap::prompt::build_prompt;
use ragcap::synth::{demonstration_docs, domain_transfer_experiment, function_words, generate, DomainSpec, SynthCorpus};
use ragcap::tokenizer::Tokenizer;
use ragcap::training::{
    ablation_compare, prepare, mean_loss, pretrain_decoder, train, PretrainConfig, TrainExample, TrainInputs,
    TrainingConfig,
};
use ragcap::vector_index::{train_ivf, FlatIndex, DEFAULT_KMEANS_ITERS};

type Check = Result<String, String>;

struct Criterion {
    name: &'static str,
    limit: Duration,
    outcome: Check,
    elapsed: Duration,
}

fn run(name: &'static str, limit_secs: u64, f: impl FnOnce() -> Check) -> Criterion {
    let start = Instant::now();
    let outcome = f();
    Criterion {
        name,
        limit: Duration::from_secs(limit_secs),
        outcome,
        elapsed: start.elapsed(),
    }
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn parameter_counts() -> Check {
    let mut notes = Vec::new();
    for (d, expected) in [(16, 7_077_888u64), (8, 3_538_944), (4, 1_769_472), (64, 28_311_552)] {
        let cfg = ModelConfig::gpt2_base(d);
        let closed = count_trainable_params(&cfg);
        let enumerated: u64 = theta_shapes(&cfg).iter().map(|(_, s)| (s[0] * s[1]) as u64).sum();
        ensure(closed == expected, format!("d={d}: closed form {closed} != {expected}"))?;
        ensure(enumerated == expected, format!("d={d}: enumeration {enumerated} != {expected}"))?;
        notes.push(format!("d={d}:{closed}"));
    }
    let allocated = Theta::init(&ModelConfig::gpt2_base(4), 0).element_count();
    ensure(allocated == 1_769_472, format!("allocated θ at d=4 has {allocated} entries"))?;
    Ok(notes.join(" "))
}

fn index_oracle() -> Check {
    let data = common::random_vectors(1000, 32, 1);
    let queries = common::random_vectors(50, 32, 2);
    let items = || data.iter().enumerate().map(|(i, v)| (i as u64, v.as_slice()));
    let flat = FlatIndex::build(32, items()).map_err(e2s)?;
    let ivf = train_ivf(items(), 16, 3, DEFAULT_KMEANS_ITERS).map_err(e2s)?;
    for (qi, q) in queries.iter().enumerate() {
        let got = flat.search(q, 10).map_err(e2s)?;
        let ids: Vec<u64> = got.iter().map(|h| h.id).collect();
        ensure(ids == common::exhaustive_top_k(&data, q, 10), format!("flat differs from scan on query {qi}"))?;
        ensure(ivf.search(q, 10, 16).map_err(e2s)? == got, format!("ivf(all cells) differs on query {qi}"))?;
    }

    let dim = 16;
    let big = common::random_vectors(5000, dim, 4);
    let qs = common::random_vectors(200, dim, 5);
    let items = || big.iter().enumerate().map(|(i, v)| (i as u64, v.as_slice()));
    let flat = FlatIndex::build(dim, items()).map_err(e2s)?;
    let ivf = train_ivf(items(), 64, 6, DEFAULT_KMEANS_ITERS).map_err(e2s)?;
    let mut found = 0;
    for q in &qs {
        let exact: Vec<u64> = flat.search(q, 4).map_err(e2s)?.iter().map(|h| h.id).collect();
        let approx: Vec<u64> = ivf.search(q, 4, 16).map_err(e2s)?.iter().map(|h| h.id).collect();
        found += exact.iter().filter(|id| approx.contains(id)).count();
    }
    let recall = found as f64 / (4 * qs.len()) as f64;
    ensure(recall >= 0.9, format!("recall@4 {recall:.3} < 0.9"))?;
    Ok(format!("50/50 queries exact; recall@4 {recall:.3} (dim {dim}, 64 cells, nprobe 16)"))
}

fn gradient_check() -> Check {
    let cfg = ModelConfig::toy(2, 2, 32, 4, 50);
    let params = ModelParams::init(cfg, Seeds { backbone: 7, theta: 8 }).map_err(e2s)?;
    let mut r = common::rng(9);
    let image: Vec<f64> = (0..32).map(|_| r.random_range(-1.0..1.0)).collect();
    let enc = params.encode_image(&image).map_err(e2s)?;
    let inputs: Vec<u32> = (0..14).map(|_| r.random_range(4..50)).collect();
    let targets: Vec<u32> = (0..14).map(|_| r.random_range(4..50)).collect();
    let mask: Vec<bool> = (0..14).map(|i| i >= 5).collect();
    let (_, grads) = params
        .loss_and_grad(&enc, &inputs, &targets, &mask, GradMode::CrossAttention)
        .map_err(e2s)?;
    let analytic: Vec<Vec<f64>> = grads.theta.tensors().iter().map(|(_, g)| g.iter().copied().collect()).collect();
    let eps = 1e-5;
    let (mut worst, mut checked) = (0.0f64, 0);
    for (ti, g) in analytic.iter().enumerate() {
        for _ in 0..8 {
            let idx = r.random_range(0..g.len());
            let mut p = params.clone();
            let bump = |p: &mut ModelParams, delta: f64| {
                let mut ts = p.theta.tensors_mut();
                ts[ti].as_slice_mut().unwrap()[idx] += delta;
            };
            bump(&mut p, eps);
            let up = p.loss(&enc, &inputs, &targets, &mask).map_err(e2s)?;
            bump(&mut p, -2.0 * eps);
            let down = p.loss(&enc, &inputs, &targets, &mask).map_err(e2s)?;
            let numeric = (up - down) / (2.0 * eps);
            let scale = numeric.abs().max(g[idx].abs());
            if scale > 0.0 {
                worst = worst.max((numeric - g[idx]).abs() / scale);
            }
            checked += 1;
        }
    }
    ensure(checked >= 100, format!("only {checked} entries checked"))?;
    ensure(worst < 1e-4, format!("max relative error {worst:.2e} over {checked} entries"))?;
    Ok(format!("max relative error {worst:.2e} over {checked} entries"))
}

fn small_corpus(seed: u64, n: usize) -> (DomainSpec, SynthCorpus, Tokenizer) {
    let spec = DomainSpec::new("toy", 8, 32, 0.3, n, seed);
    let corpus = generate(&spec).unwrap();
    let tok = Tokenizer::from_corpus(corpus.captions.iter().map(|c| c.text.as_str()));
    (spec, corpus, tok)
}

fn examples(corpus: &SynthCorpus, range: std::ops::Range<usize>, self_ids: bool) -> Vec<TrainExample> {
    range
        .map(|i| TrainExample {
            image: corpus.examples[i].image.clone(),
            reference: corpus.examples[i].caption.clone(),
            record_id: self_ids.then_some(i as u64),
        })
        .collect()
}

fn freeze_guarantee() -> Check {
    let (_, corpus, tok) = small_corpus(21, 60);
    let store = Datastore::build(
        32,
        ingest(&corpus.captions[..50], &tok, &IngestOptions::default()).map_err(e2s)?.records,
        IndexPolicy::default(),
    )
    .map_err(e2s)?;
    let params = ModelParams::init(ModelConfig::toy(2, 4, 64, 8, tok.len()), Seeds { backbone: 3, theta: 4 })
        .map_err(e2s)?;
    let before = params.frozen_digest();
    let (train_ex, val_ex) = (examples(&corpus, 0..50, true), examples(&corpus, 50..60, false));
    let inputs = TrainInputs {
        params: &params,
        tokenizer: &tok,
        store: Some(&store),
        train: &train_ex,
        val: &val_ex,
    };
    let cfg = TrainingConfig {
        learning_rate: 1e-3,
        batch_size: 4,
        epochs: 100,
        max_steps: Some(200),
        ..TrainingConfig::default()
    };
    let out = train(&inputs, &cfg, None).map_err(e2s)?;
    ensure(out.steps == 200, format!("{} steps taken", out.steps))?;
    let after = out.params.frozen_digest();
    ensure(before == after, "frozen digest changed")?;
    let same = params
        .backbone
        .tensors()
        .iter()
        .zip(out.params.backbone.tensors())
        .all(|(a, b)| a.2.iter().zip(b.2).all(|(x, y)| x.to_bits() == y.to_bits()));
    ensure(same, "backbone tensors differ bitwise")?;
    let mut delta = out.params.theta.clone();
    delta.add_scaled(&params.theta, -1.0);
    ensure(delta.max_abs() > 0.0, "θ did not change")?;
    Ok(format!("sha256 {}… unchanged; max |Δθ| {:.3e}", &after[..12], delta.max_abs()))
}

fn prompt_fidelity() -> Check {
    let caps = ["a dog on a couch", "two cats", "a man riding a horse", "a plate of food"];
    let expected = "Similar images show\n\na dog on a couch\n\ntwo cats\n\na man riding a horse\n\na plate of food.\n\nThis image shows";
    ensure(build_prompt(&caps) == expected, "template mismatch")?;

    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = (pvec("[a-zA-Z0-9 ,.'!?-]{0,30}", 1..8), pvec("[a-zA-Z0-9 ,.'!?-]{0,30}", 1..8));
    runner
        .run(&strategy, |(a, b)| {
            let pa = build_prompt(&a);
            let body = pa
                .strip_prefix("Similar images show\n\n")
                .and_then(|s| s.strip_suffix(".\n\nThis image shows"))
                .expect("template frame");
            let recovered: Vec<&str> = body.split("\n\n").collect();
            proptest::prop_assert_eq!(&recovered, &a);
            if a != b {
                proptest::prop_assert_ne!(pa, build_prompt(&b));
            }
            Ok(())
        })
        .map_err(e2s)?;
    Ok("template exact; 1000 random lists preserved and distinct".into())
}

fn overfit() -> Check {
    let spec = DomainSpec::new("toy", 20, 32, 0.3, 20, 5);
    let corpus = generate(&spec).map_err(e2s)?;
    let tok = Tokenizer::from_corpus(corpus.captions.iter().map(|c| c.text.as_str()));
    let params = ModelParams::init(ModelConfig::toy(2, 4, 64, 16, 200), Seeds { backbone: 1, theta: 2 })
        .map_err(e2s)?;
    let ex = examples(&corpus, 0..20, false);
    let inputs = TrainInputs {
        params: &params,
        tokenizer: &tok,
        store: None,
        train: &ex,
        val: &ex,
    };
    let cfg = TrainingConfig {
        learning_rate: 1e-2,
        batch_size: 20,
        epochs: 500,
        retrieval_enabled: false,
        ..TrainingConfig::default()
    };
    let out = train(&inputs, &cfg, None).map_err(e2s)?;
    ensure(out.steps <= 500, format!("{} steps", out.steps))?;
    let data = prepare(&out.params, &tok, None, &ex, &cfg).map_err(e2s)?;
    let loss = mean_loss(&out.params, &data).map_err(e2s)?;
    let target = 0.5 * 200f64.ln();
    ensure(loss < target, format!("loss {loss:.3} ≥ {target:.3}"))?;
    Ok(format!("loss {loss:.3} < {target:.3} after {} steps", out.steps))
}

/// Pretrained decoder, stores and splits shared by the retrieval experiments.
struct Experiment {
    spec_a: DomainSpec,
    spec_b: DomainSpec,
    corpus_b: SynthCorpus,
    tok: Tokenizer,
    params: ModelParams,
    store_a: Datastore,
    train: Vec<TrainExample>,
    val: Vec<TrainExample>,
    config: TrainingConfig,
}

impl Experiment {
    fn build() -> Result<Self, String> {
        let spec_a = DomainSpec::new("coco", 8, 32, 0.3, 600, 11);
        let mut spec_b = DomainSpec::new("vizwiz", 8, 32, 0.3, 200, 12);
        spec_b.anchor_offset = 0;
        let corpus_a = generate(&spec_a).map_err(e2s)?;
        let corpus_b = generate(&spec_b).map_err(e2s)?;
        let words: Vec<String> = spec_a
            .vocab()
            .into_iter()
            .chain(spec_b.vocab())
            .chain(function_words().into_iter().map(String::from))
            .collect();
        let tok = Tokenizer::from_corpus(words.iter().map(String::as_str));
        let mut params = ModelParams::init(ModelConfig::toy(2, 4, 64, 16, tok.len()), Seeds { backbone: 1, theta: 2 })
            .map_err(e2s)?;
        let docs = demonstration_docs(&[spec_a.clone(), spec_b.clone()], 3000, 4, 0.15, 3).map_err(e2s)?;
        let pre = PretrainConfig {
            learning_rate: 3e-3,
            batch_size: 16,
            epochs: 2,
            seed: 0,
        };
        pretrain_decoder(&mut params, &tok, &docs, &pre).map_err(e2s)?;
        let records = ingest(&corpus_a.captions[..500], &tok, &IngestOptions::default()).map_err(e2s)?.records;
        let store_a = Datastore::build(32, records, IndexPolicy::default()).map_err(e2s)?;
        Ok(Self {
            train: examples(&corpus_a, 0..500, true),
            val: examples(&corpus_a, 500..600, false),
            spec_a,
            spec_b,
            corpus_b,
            tok,
            params,
            store_a,
            config: TrainingConfig {
                learning_rate: 1e-3,
                epochs: 5,
                ..TrainingConfig::default()
            },
        })
    }

    fn inputs<'a>(&'a self, params: &'a ModelParams) -> TrainInputs<'a> {
        TrainInputs {
            params,
            tokenizer: &self.tok,
            store: Some(&self.store_a),
            train: &self.train,
            val: &self.val,
        }
    }

    fn trained(&self, d: usize) -> Result<ModelParams, String> {
        let fresh = self.params.with_cross_dim(d, 2).map_err(e2s)?;
        Ok(train(&self.inputs(&fresh), &self.config, None).map_err(e2s)?.params)
    }
}

fn retrieval_benefit(x: &Experiment) -> Check {
    let rows = ablation_compare(&x.inputs(&x.params), &[4, 16], &x.config).map_err(e2s)?;
    let mut notes = Vec::new();
    for r in &rows {
        ensure(
            r.val_loss_retrieval < r.val_loss_no_retrieval,
            format!("d={}: retrieval {:.4} ≥ no-retrieval {:.4}", r.d, r.val_loss_retrieval, r.val_loss_no_retrieval),
        )?;
        notes.push(format!("d={}: {:.4} < {:.4}", r.d, r.val_loss_retrieval, r.val_loss_no_retrieval));
    }
    Ok(notes.join("; "))
}

fn domain_transfer(x: &Experiment, model: &ModelParams) -> Check {
    let records = ingest(&x.corpus_b.captions[..100], &x.tok, &IngestOptions::default()).map_err(e2s)?.records;
    let store_b = x.store_a.swap(records).map_err(e2s)?;
    let images: Vec<Vec<f64>> = x.corpus_b.examples[100..200].iter().map(|e| e.image.clone()).collect();
    let report = domain_transfer_experiment(
        model,
        &x.tok,
        &CaptionSettings::default(),
        &x.store_a,
        &store_b,
        &x.spec_a,
        &x.spec_b,
        &images,
    )
    .map_err(e2s)?;
    ensure(
        report.share_increased >= 0.8,
        format!("B-vocabulary share rose on only {:.0}% of images", 100.0 * report.share_increased),
    )?;
    Ok(format!(
        "B-vocabulary share rose on {:.0}% of {} images",
        100.0 * report.share_increased,
        images.len()
    ))
}

fn metric_correctness() -> Check {
    let perfect = ["a man rides a brown horse", "two dogs play in the snow", "a red bus on the street"];
    let refs: Vec<Vec<&str>> = perfect.iter().map(|s| vec![*s]).collect();
    let b = bleu4(&common::to_tokens(&perfect), &common::to_ref_tokens(&refs)).map_err(e2s)?;
    ensure(b == 1.0, format!("perfect BLEU-4 {b}"))?;

    let hyp = common::to_tokens(&["the the the the the the the"]);
    let clip_refs = common::to_ref_tokens(&[vec!["the cat is on the mat", "there is a cat on the mat"]]);
    let p1 = modified_precision(&hyp[0], &clip_refs[0], 1);
    ensure(p1 == (2, 7), format!("clipped unigram precision {}/{}", p1.0, p1.1))?;

    let c = cider(&common::to_tokens(&perfect), &common::to_ref_tokens(&refs)).map_err(e2s)?;
    ensure((c - 10.0).abs() < 1e-9, format!("perfect-match CIDEr {c}"))?;

    let hyps = ["a man riding a horse on a beach", "a dog in the snow", "a bus parked on the street"];
    let refs3 = vec![
        vec!["a man rides a horse on the beach", "a person on a horse near the sea"],
        vec!["two dogs play in the snow", "a dog runs through snow", "a puppy in the snow"],
        vec!["a red bus on the street", "a bus stopped on a city street"],
    ];
    let got = cider(&common::to_tokens(&hyps), &common::to_ref_tokens(&refs3)).map_err(e2s)?;
    let oracle = common::cider_oracle(&hyps, &refs3);
    ensure((got - oracle).abs() < 1e-9, format!("CIDEr {got} vs oracle {oracle}"))?;
    Ok(format!("BLEU hand cases exact; CIDEr {got:.6} matches oracle; perfect corpus 10"))
}

fn baseline_wiring(x: &Experiment, model: &ModelParams) -> Check {
    for q in common::random_vectors(100, 32, 31) {
        let top = x.store_a.retrieve(&q, 1).map_err(e2s)?[0].0.text.clone();
        ensure(retrieval_only_baseline(&x.store_a, &q).map_err(e2s)? == top, "baseline differs from top-1")?;
    }
    let eval: Vec<EvalExample> = x
        .val
        .iter()
        .map(|e| EvalExample {
            image: e.image.clone(),
            references: vec![e.reference.clone()],
        })
        .collect();
    let captioner = Captioner::new(model, &x.tok, Some(&x.store_a), CaptionSettings::default()).map_err(e2s)?;
    let (report, _) = evaluate(&captioner, &eval).map_err(e2s)?;
    let (_, cider_ret) = evaluate_retrieval_only(&x.store_a, &eval).map_err(e2s)?;
    ensure(
        report.cider > cider_ret,
        format!("generated CIDEr {:.3} ≤ retrieval-only {cider_ret:.3}", report.cider),
    )?;
    Ok(format!("100/100 top-1 equal; CIDEr generated {:.3} > retrieval-only {cider_ret:.3}", report.cider))
}

fn ragcap(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ragcap"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(e2s)?;
    ensure(
        out.status.success(),
        format!("ragcap {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)),
    )
}

fn snapshot(root: &Path, paths: &[PathBuf]) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack: Vec<PathBuf> = paths.iter().map(|p| root.join(p)).collect();
    while let Some(p) = stack.pop() {
        if p.is_dir() {
            stack.extend(std::fs::read_dir(&p).unwrap().map(|e| e.unwrap().path()));
        } else if !p.to_string_lossy().ends_with("manifest.json") {
            files.push((p.clone(), std::fs::read(&p).unwrap()));
        }
    }
    files.sort();
    files
}

fn cli_determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(e2s)?;
    let dir = tmp.path();
    std::fs::write(
        dir.join("a.toml"),
        "name = \"coco\"\nn_topics = 4\nembedding_dim = 16\nnoise_std = 0.3\nn_examples = 120\nseed = 3\n",
    )
    .map_err(e2s)?;
    std::fs::write(
        dir.join("run.toml"),
        r#"store = "store"
train_images = "a/images.bin"
train_references = "a/references.txt"
val_images = "a/val_images.bin"
val_references = "a/val_references.txt"
out = "run"

[model]
layers = 1
heads = 2
d_model = 32
d_cross = 4

[pretrain]
records = ["a/records.tsv"]
docs = 100
epochs = 1

[training]
learning_rate = 1e-3
epochs = 2
batch_size = 8

[ablation]
grid = [4]
"#,
    )
    .map_err(e2s)?;
    let steps: &[&[&str]] = &[
        &["synth", "--spec", "a.toml", "--out", "a", "--val", "20"],
        &["store", "build", "--records", "a/records.tsv", "--out", "store"],
        &["store", "stats", "--store", "store", "--out", "stats.txt"],
        &["index", "build", "--vectors", "a/images.bin", "--out", "idx.bin", "--kind", "ivf", "--clusters", "4"],
        &["index", "query", "--index", "idx.bin", "--queries", "a/val_images.bin", "--k", "3", "--nprobe", "2", "--out", "hits.tsv"],
        &["train", "--config", "run.toml"],
        &["caption", "--images", "a/val_images.bin", "--store", "store", "--model", "run/model.ckpt", "--out", "caps.txt"],
        &["eval", "--hyp", "caps.txt", "--refs", "a/val_references.txt", "--out", "eval.txt"],
    ];
    let manifests = [
        "a/manifest.json",
        "store/manifest.json",
        "stats.txt.manifest.json",
        "idx.bin.manifest.json",
        "hits.tsv.manifest.json",
        "run/manifest.json",
        "caps.txt.manifest.json",
        "eval.txt.manifest.json",
    ];
    for s in steps {
        ragcap(dir, s)?;
    }
    let mut files = 0;
    for m in manifests {
        let text = std::fs::read_to_string(dir.join(m)).map_err(|e| format!("{m}: {e}"))?;
        let manifest: serde_json::Value = serde_json::from_str(&text).map_err(e2s)?;
        let outputs: Vec<PathBuf> = serde_json::from_value(manifest["outputs"].clone()).map_err(e2s)?;
        let before = snapshot(dir, &outputs);
        ensure(!before.is_empty(), format!("{m} lists no outputs"))?;
        ragcap(dir, &["replay", "--manifest", m])?;
        let after = snapshot(dir, &outputs);
        ensure(before == after, format!("replay of {m} changed its outputs"))?;
        files += before.len();
    }
    Ok(format!("{} manifests replayed, {files} output files byte-identical", manifests.len()))
}

fn main() {
    let mut results = vec![
        run("parameter counts", 1, parameter_counts),
        run("index oracle equivalence", 10, index_oracle),
        run("gradient correctness", 30, gradient_check),
        run("freeze guarantee", 60, freeze_guarantee),
        run("prompt fidelity", 60, prompt_fidelity),
        run("overfit sanity", 300, overfit),
        run("metric correctness", 1, metric_correctness),
    ];

    let setup_start = Instant::now();
    let experiment = Experiment::build();
    let setup = setup_start.elapsed();
    match &experiment {
        Ok(x) => {
            let mut benefit = run("retrieval benefit", 1200, || retrieval_benefit(x));
            benefit.elapsed += setup;
            results.push(benefit);
            let train_start = Instant::now();
            let model = x.trained(16);
            let training = train_start.elapsed();
            match model {
                Ok(m) => {
                    let mut transfer = run("domain transfer", 300, || domain_transfer(x, &m));
                    transfer.elapsed += training;
                    results.push(transfer);
                    results.push(run("retrieval-only baseline", 300, || baseline_wiring(x, &m)));
                }
                Err(e) => {
                    for name in ["domain transfer", "retrieval-only baseline"] {
                        results.push(run(name, 300, || Err(format!("training failed: {e}"))));
                    }
                }
            }
        }
        Err(e) => {
            for name in ["retrieval benefit", "domain transfer", "retrieval-only baseline"] {
                results.push(run(name, 1200, || Err(format!("setup failed: {e}"))));
            }
        }
    }
    results.push(run("cli determinism", 300, cli_determinism));

    let mut failed = 0;
    for c in &results {
        let secs = c.elapsed.as_secs_f64();
        let (tag, detail) = match &c.outcome {
            Ok(d) if c.elapsed <= c.limit => ("PASS", d.clone()),
            Ok(d) => ("FAIL", format!("{d}; took {secs:.1}s, limit {}s", c.limit.as_secs())),
            Err(d) => ("FAIL", d.clone()),
        };
        if tag == "FAIL" {
            failed += 1;
        }
        println!("{tag} {:<26} {detail} ({secs:.2}s)", c.name);
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", results.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", results.len());
}
