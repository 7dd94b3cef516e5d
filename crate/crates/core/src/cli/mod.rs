//! The `ragcap` command line.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

pub mod args;
pub mod config;
pub mod manifest;
mod report;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde_json::json;

pub use args::Cli;
use args::{CaptionArgs, Command, ConfigArgs, CountParamsArgs, EvalArgs, IndexBuildKind, IndexCommand, IndexKindArg,
    RecordsInput, StoreCommand, SynthArgs};
use config::RunConfig;
use manifest::{beside, RunManifest};

use crate::caption::{CaptionSettings, Captioner};
use crate::datastore::records::{escape, format_line, unescape, HEADER};
use crate::datastore::{
    ingest, read_raw, source_distribution, Datastore, IndexChoice, IndexPolicy, IngestOptions, RawCaption,
    RetrievalLog,
};
use crate::error::{Error, Result};
use crate::evaluation::{score_texts, EvalReport};
use crate::model::checkpoint::{load_checkpoint, save_checkpoint};
use crate::model::{count_trainable_params, ModelConfig, ModelParams, Seeds};
use crate::synth::{generate, DomainSpec};
use crate::tokenizer::Tokenizer;
use crate::training::{
    ablation_compare, pretrain_decoder, pretrain_docs_from_captions, train, TrainExample, TrainInputs,
    TrainingConfig,
};
use crate::vector_index::{load_index, read_vectors, save_index, train_ivf, write_vectors, AnyIndex, FlatIndex};

/// Parses `argv` (program name first) and runs it; returns the exit code.
pub fn main_with(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli, argv: &[String]) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a, argv),
        Command::Store(c) => cmd_store(c, argv),
        Command::Index(c) => cmd_index(c, argv),
        Command::Train(a) => cmd_train(a, argv),
        Command::Caption(a) => cmd_caption(a, argv),
        Command::Eval(a) => cmd_eval(a, argv),
        Command::CountParams(a) => cmd_count_params(a),
        Command::Ablate(a) => cmd_ablate(a, argv),
        Command::Report(a) => report::cmd_report(&a.run),
        Command::Replay(a) => {
            let m = RunManifest::load(&a.manifest)?;
            if m.argv.get(1).map(String::as_str) == Some("replay") {
                return Err(Error::InvalidArgument("a manifest cannot replay a replay".into()));
            }
            let cli = Cli::try_parse_from(&m.argv).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            run(cli, &m.argv)
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads one caption per line, undoing tab/newline escapes.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines().map(unescape).collect()
}

fn lines_text<S: AsRef<str>>(lines: &[S]) -> String {
    lines.iter().map(|l| escape(l.as_ref()) + "\n").collect()
}

fn cmd_synth(a: SynthArgs, argv: &[String]) -> Result<()> {
    let text = std::fs::read_to_string(&a.spec).map_err(|e| Error::io(&a.spec, e))?;
    let mut spec: DomainSpec =
        toml::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", a.spec.display())))?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if a.val > spec.n_examples {
        return Err(Error::InvalidArgument(format!(
            "--val {} exceeds n_examples {}",
            a.val, spec.n_examples
        )));
    }
    let corpus = generate(&spec)?;
    let n_train = spec.n_examples - a.val;
    create_dir(&a.out)?;
    let mut m = RunManifest::new("synth", argv, serde_json::to_value(&spec).unwrap(), Some(spec.seed));
    m.input(&a.spec);

    let mut records = format!("{HEADER}\n");
    for (i, c) in corpus.captions[..n_train].iter().enumerate() {
        records.push_str(&format_line(i as u64, &c.text, &c.source, &c.embedding));
        records.push('\n');
    }
    let out = |name: &str| a.out.join(name);
    write_text(&out("records.tsv"), &records)?;
    let split = |range: std::ops::Range<usize>, images: &str, refs: &str, m: &mut RunManifest| -> Result<()> {
        let ex = &corpus.examples[range];
        let rows: Vec<Vec<f64>> = ex.iter().map(|e| e.image.clone()).collect();
        write_vectors(&out(images), spec.embedding_dim, &rows)?;
        let caps: Vec<&str> = ex.iter().map(|e| e.caption.as_str()).collect();
        write_text(&out(refs), &lines_text(&caps))?;
        m.output(&out(images));
        m.output(&out(refs));
        Ok(())
    };
    m.output(&out("records.tsv"));
    split(0..n_train, "images.bin", "references.txt", &mut m)?;
    if a.val > 0 {
        split(n_train..spec.n_examples, "val_images.bin", "val_references.txt", &mut m)?;
    }
    m.save(&out("manifest.json"))
}

fn load_raw(input: &RecordsInput) -> Result<Vec<RawCaption>> {
    let vectors = match &input.vectors {
        Some(p) => Some(read_vectors(p)?.1),
        None => None,
    };
    read_raw(&input.records, vectors.as_deref())
}

fn ingest_opts(input: &RecordsInput, first_id: u64) -> IngestOptions {
    IngestOptions {
        max_tokens: input.max_tokens,
        dedup: input.dedup,
        first_id,
    }
}

fn report_ingest(dropped_long: usize, dropped_duplicate: usize) {
    if dropped_long + dropped_duplicate > 0 {
        eprintln!("dropped {dropped_long} over-long and {dropped_duplicate} duplicate captions");
    }
}

fn cmd_store(c: StoreCommand, argv: &[String]) -> Result<()> {
    match c {
        StoreCommand::Build {
            input,
            out,
            vocab_from,
            index,
            clusters,
            nprobe,
            seed,
        } => {
            let raw = load_raw(&input)?;
            let mut texts: Vec<String> = Vec::new();
            if vocab_from.is_empty() {
                texts.extend(raw.iter().map(|r| r.text.clone()));
            } else {
                for p in &vocab_from {
                    texts.extend(read_raw(p, None)?.into_iter().map(|r| r.text));
                }
            }
            let tokenizer = Tokenizer::from_corpus(texts.iter().map(String::as_str));
            let ing = ingest(&raw, &tokenizer, &ingest_opts(&input, 0))?;
            report_ingest(ing.dropped_long, ing.dropped_duplicate);
            let policy = IndexPolicy {
                kind: match index {
                    IndexKindArg::Auto => IndexChoice::Auto,
                    IndexKindArg::Flat => IndexChoice::Flat,
                    IndexKindArg::Ivf => IndexChoice::Ivf,
                },
                n_clusters: clusters,
                nprobe,
                seed,
                ..IndexPolicy::default()
            };
            let dim = ing.records[0].embedding.len();
            let store = Datastore::build(dim, ing.records, policy.clone())?;
            store.save(&out, &tokenizer)?;
            let mut m = RunManifest::new(
                "store build",
                argv,
                json!({"policy": policy, "max_tokens": input.max_tokens, "dedup": input.dedup}),
                Some(seed),
            );
            m.input(&input.records);
            vocab_from.iter().for_each(|p| m.input(p));
            m.output(&out);
            m.save(&out.join("manifest.json"))
        }
        StoreCommand::Swap { store, input, out } => {
            let (old, tokenizer) = Datastore::load(&store)?;
            let ing = ingest(&load_raw(&input)?, &tokenizer, &ingest_opts(&input, 0))?;
            report_ingest(ing.dropped_long, ing.dropped_duplicate);
            let new = old.swap(ing.records)?;
            new.save(&out, &tokenizer)?;
            let mut m = RunManifest::new("store swap", argv, json!({"policy": new.policy()}), None);
            m.input(&store);
            m.input(&input.records);
            m.output(&out);
            m.save(&out.join("manifest.json"))
        }
        StoreCommand::Augment { store, input, out } => {
            let (old, tokenizer) = Datastore::load(&store)?;
            let first = old.ids().last().map_or(0, |i| i + 1);
            let ing = ingest(&load_raw(&input)?, &tokenizer, &ingest_opts(&input, first))?;
            report_ingest(ing.dropped_long, ing.dropped_duplicate);
            let new = old.augment(ing.records)?;
            new.save(&out, &tokenizer)?;
            let mut m = RunManifest::new("store augment", argv, json!({"policy": new.policy()}), None);
            m.input(&store);
            m.input(&input.records);
            m.output(&out);
            m.save(&out.join("manifest.json"))
        }
        StoreCommand::Stats { store, out } => {
            let (s, tokenizer) = Datastore::load(&store)?;
            let mut text = String::new();
            writeln!(text, "records\t{}", s.len()).unwrap();
            writeln!(text, "dim\t{}", s.dim()).unwrap();
            let kind = match s.index() {
                AnyIndex::Flat(_) => "flat".to_string(),
                AnyIndex::Ivf(i) => format!("ivf\t{} clusters\tnprobe {}", i.n_clusters(), s.policy().nprobe),
            };
            writeln!(text, "index\t{kind}").unwrap();
            writeln!(text, "vocabulary\t{}", tokenizer.len()).unwrap();
            for (src, n) in s.source_counts() {
                writeln!(text, "source\t{src}\t{n}").unwrap();
            }
            print!("{text}");
            if let Some(o) = out {
                write_text(&o, &text)?;
                let mut m = RunManifest::new("store stats", argv, json!({}), None);
                m.input(&store);
                m.output(&o);
                m.save(&beside(&o))?;
            }
            Ok(())
        }
    }
}

fn cmd_index(c: IndexCommand, argv: &[String]) -> Result<()> {
    match c {
        IndexCommand::Build {
            vectors,
            out,
            kind,
            clusters,
            seed,
            iters,
        } => {
            let (dim, rows) = read_vectors(&vectors)?;
            let items = rows.iter().enumerate().map(|(i, v)| (i as u64, v.as_slice()));
            let index = match kind {
                IndexBuildKind::Flat => AnyIndex::Flat(FlatIndex::build(dim, items)?),
                IndexBuildKind::Ivf => AnyIndex::Ivf(train_ivf(items, clusters, seed, iters)?),
            };
            save_index(&index, &out)?;
            let kind = match kind {
                IndexBuildKind::Flat => "flat",
                IndexBuildKind::Ivf => "ivf",
            };
            let mut m = RunManifest::new(
                "index build",
                argv,
                json!({"kind": kind, "clusters": clusters, "iters": iters}),
                Some(seed),
            );
            m.input(&vectors);
            m.output(&out);
            m.save(&beside(&out))
        }
        IndexCommand::Query {
            index,
            queries,
            k,
            nprobe,
            out,
        } => {
            let idx = load_index(&index)?;
            let (_, rows) = read_vectors(&queries)?;
            let mut text = String::new();
            for (i, q) in rows.iter().enumerate() {
                let hits = idx.search(q, k, nprobe)?;
                let cols: Vec<String> = hits.iter().map(|h| format!("{}:{}", h.id, h.score)).collect();
                writeln!(text, "{i}\t{}", cols.join(" ")).unwrap();
            }
            write_text(&out, &text)?;
            let mut m = RunManifest::new("index query", argv, json!({"k": k, "nprobe": nprobe}), None);
            m.input(&index);
            m.input(&queries);
            m.output(&out);
            m.save(&beside(&out))
        }
    }
}

/// Everything `train` and `ablate` share: the store, data and a decoder
/// (pretrained when the config asks for it).
struct Prepared {
    cfg: RunConfig,
    store: Datastore,
    tokenizer: Tokenizer,
    params: ModelParams,
    train: Vec<TrainExample>,
    val: Vec<TrainExample>,
    pretrain_losses: Vec<f64>,
}

fn load_examples(images: &Path, refs: &Path, exclusion: Option<&Datastore>) -> Result<Vec<TrainExample>> {
    let (_, rows) = read_vectors(images)?;
    let texts = read_lines(refs)?;
    if rows.len() != texts.len() {
        return Err(Error::format(
            "dataset",
            format!("{} images but {} references", rows.len(), texts.len()),
        ));
    }
    rows.into_iter()
        .zip(texts)
        .enumerate()
        .map(|(i, (image, reference))| {
            let record_id = match exclusion {
                Some(store) => {
                    let id = i as u64;
                    if store.get(id).map(|r| r.text.as_str()) != Some(reference.as_str()) {
                        return Err(Error::format(
                            "dataset",
                            format!("self_exclusion: store record {id} is not training caption {i}"),
                        ));
                    }
                    Some(id)
                }
                None => None,
            };
            Ok(TrainExample {
                image,
                reference,
                record_id,
            })
        })
        .collect()
}

fn prepare_run(a: &ConfigArgs) -> Result<Prepared> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.training.seed = s;
    }
    let (store, tokenizer) = Datastore::load(&cfg.store)?;
    let train = load_examples(
        &cfg.train_images,
        &cfg.train_references,
        cfg.self_exclusion.then_some(&store),
    )?;
    let val = load_examples(&cfg.val_images, &cfg.val_references, None)?;
    let model = cfg.model.to_config(tokenizer.len(), store.dim());
    let mut params = ModelParams::init(
        model,
        Seeds {
            backbone: cfg.model.backbone_seed,
            theta: cfg.model.theta_seed,
        },
    )?;
    let mut pretrain_losses = Vec::new();
    if let Some(p) = &cfg.pretrain {
        let mut captions = Vec::new();
        for path in &p.records {
            captions.extend(read_raw(path, None)?);
        }
        let docs = pretrain_docs_from_captions(&captions, p.docs, p.max_k, p.seed)?;
        pretrain_losses = pretrain_decoder(&mut params, &tokenizer, &docs, &p.optimizer())?;
    }
    Ok(Prepared {
        cfg,
        store,
        tokenizer,
        params,
        train,
        val,
        pretrain_losses,
    })
}

fn run_manifest(sub: &str, argv: &[String], a: &ConfigArgs, p: &Prepared) -> RunManifest {
    let mut m = RunManifest::new(sub, argv, serde_json::to_value(&p.cfg).unwrap(), Some(p.cfg.training.seed));
    m.input(&a.config);
    m.input(&p.cfg.store);
    for path in [
        &p.cfg.train_images,
        &p.cfg.train_references,
        &p.cfg.val_images,
        &p.cfg.val_references,
    ] {
        m.input(path);
    }
    m
}

fn cmd_train(a: ConfigArgs, argv: &[String]) -> Result<()> {
    let p = prepare_run(&a)?;
    let out = &p.cfg.out;
    let epochs_dir = out.join("epochs");
    create_dir(&epochs_dir)?;
    let inputs = TrainInputs {
        params: &p.params,
        tokenizer: &p.tokenizer,
        store: Some(&p.store),
        train: &p.train,
        val: &p.val,
    };
    let outcome = train(&inputs, &p.cfg.training, Some(&epochs_dir))?;
    let model_path = out.join("model.ckpt");
    save_checkpoint(&model_path, &outcome.params, Some(&p.tokenizer))?;
    let log_path = out.join("training_log.jsonl");
    write_text(&log_path, &outcome.log.to_jsonl())?;
    let summary = json!({
        "best_epoch": outcome.best_epoch,
        "steps": outcome.steps,
        "pretrain_losses": p.pretrain_losses,
        "trainable_params": outcome.params.config.trainable_params(),
        "frozen_digest": outcome.params.frozen_digest(),
    });
    let summary_path = out.join("summary.json");
    write_text(&summary_path, &(serde_json::to_string_pretty(&summary).unwrap() + "\n"))?;
    let mut m = run_manifest("train", argv, &a, &p);
    m.output(&model_path);
    m.output(&log_path);
    m.output(&summary_path);
    m.output(&epochs_dir);
    m.save(&out.join("manifest.json"))
}

fn cmd_ablate(a: ConfigArgs, argv: &[String]) -> Result<()> {
    let p = prepare_run(&a)?;
    let out = &p.cfg.out;
    create_dir(out)?;
    let config_path = out.join("config.json");
    write_text(&config_path, &(serde_json::to_string_pretty(&p.cfg).unwrap() + "\n"))?;
    let inputs = TrainInputs {
        params: &p.params,
        tokenizer: &p.tokenizer,
        store: Some(&p.store),
        train: &p.train,
        val: &p.val,
    };
    let rows = ablation_compare(&inputs, &p.cfg.ablation.grid, &p.cfg.training)?;
    let mut blank = Vec::new();
    if p.cfg.ablation.blank_image_variant {
        for &d in &p.cfg.ablation.grid {
            let params = p.params.with_cross_dim(d, p.params.seeds.theta)?;
            let cfg = TrainingConfig {
                blank_image: true,
                retrieval_enabled: true,
                ..p.cfg.training.clone()
            };
            let o = train(&TrainInputs { params: &params, ..inputs }, &cfg, None)?;
            let best = o.log.epochs.iter().find(|e| e.epoch == o.best_epoch);
            blank.push(json!({"d": d, "val_loss": best.map(|e| e.val_loss), "val_metric": best.and_then(|e| e.val_metric)}));
        }
    }
    let result = json!({
        "model": {
            "layers": p.params.config.n_layers,
            "heads": p.params.config.n_heads,
            "d_model": p.params.config.d_model,
            "d_encoder": p.params.config.d_encoder,
        },
        "grid": p.cfg.ablation.grid,
        "rows": rows,
        "blank_image": blank,
        "pretrain_losses": p.pretrain_losses,
    });
    let result_path = out.join("ablation.json");
    write_text(&result_path, &(serde_json::to_string_pretty(&result).unwrap() + "\n"))?;
    let mut m = run_manifest("ablate", argv, &a, &p);
    m.output(&config_path);
    m.output(&result_path);
    m.save(&out.join("manifest.json"))
}

fn cmd_caption(a: CaptionArgs, argv: &[String]) -> Result<()> {
    if !a.no_retrieval && a.k == 0 {
        return Err(Error::InvalidArgument(
            "--k 0 is not a valid prompt; use --no-retrieval for the prompt without captions".into(),
        ));
    }
    let ckpt = load_checkpoint(&a.model)?;
    let tokenizer = ckpt
        .tokenizer
        .ok_or_else(|| Error::format("checkpoint", "no vocabulary section"))?;
    let store = match (&a.store, a.no_retrieval) {
        (_, true) => None,
        (Some(dir), false) => Some(Datastore::load(dir)?.0),
        (None, false) => {
            return Err(Error::InvalidArgument("--store is required unless --no-retrieval is given".into()))
        }
    };
    let settings = CaptionSettings {
        k: a.k,
        beam: a.beam,
        max_new: a.max_new,
        retrieval: !a.no_retrieval,
        blank_image: a.blank_image,
    };
    let captioner = Captioner::new(&ckpt.params, &tokenizer, store.as_ref(), settings.clone())?;
    let (dim, rows) = read_vectors(&a.images)?;
    if !rows.is_empty() && dim != ckpt.params.config.image_dim {
        return Err(Error::DimensionMismatch {
            expected: ckpt.params.config.image_dim,
            found: dim,
        });
    }
    let mut stdout = std::io::stdout().lock();
    let mut log = RetrievalLog::new();
    let mut captions = Vec::with_capacity(rows.len());
    for (i, img) in rows.iter().enumerate() {
        let c = captioner.caption_logged(i as u64, img, Some(&mut log))?;
        if a.show_prompt {
            let _ = writeln!(stdout, "{}", json!({"index": i, "prompt": c.prompt, "caption": c.text}));
        }
        captions.push(c.text);
    }
    write_text(&a.out, &lines_text(&captions))?;
    let mut m = RunManifest::new("caption", argv, serde_json::to_value(&settings).unwrap(), None);
    m.input(&a.images);
    m.input(&a.model);
    if let Some(s) = &a.store {
        m.input(s);
    }
    m.output(&a.out);
    if !log.is_empty() {
        let dist = source_distribution(&log)?;
        let mut path = a.out.clone().into_os_string();
        path.push(".sources.json");
        let path = PathBuf::from(path);
        write_text(&path, &(serde_json::to_string_pretty(&dist).unwrap() + "\n"))?;
        m.output(&path);
    }
    m.save(&beside(&a.out))
}

fn cmd_eval(a: EvalArgs, argv: &[String]) -> Result<()> {
    let hyps = read_lines(&a.hyp)?;
    let ref_files = a.refs.iter().map(|p| read_lines(p)).collect::<Result<Vec<_>>>()?;
    for (p, r) in a.refs.iter().zip(&ref_files) {
        if r.len() != hyps.len() {
            return Err(Error::format(
                "reference file",
                format!("{} has {} lines, hypotheses have {}", p.display(), r.len(), hyps.len()),
            ));
        }
    }
    let refs: Vec<Vec<String>> = (0..hyps.len())
        .map(|i| ref_files.iter().map(|f| f[i].clone()).collect())
        .collect();
    let (bleu4, cider) = score_texts(&hyps, &refs)?;
    let report = EvalReport {
        bleu4,
        cider,
        n_examples: hyps.len(),
        source_distribution: BTreeMap::new(),
        config: json!({
            "hyp": a.hyp.display().to_string(),
            "refs": a.refs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        }),
    };
    let text = report.to_text();
    print!("{text}");
    if let Some(o) = &a.out {
        write_text(o, &text)?;
        let mut m = RunManifest::new("eval", argv, report.config.clone(), None);
        m.input(&a.hyp);
        a.refs.iter().for_each(|p| m.input(p));
        m.output(o);
        m.save(&beside(o))?;
    }
    Ok(())
}

/// Plain-text table of trainable parameter counts per `d`.
pub fn params_table(layers: usize, heads: usize, d_model: usize, d_encoder: usize, ds: &[usize]) -> Result<String> {
    let mut s = String::from("d\tlayers\theads\td_model\td_encoder\ttrainable_params\n");
    for &d in ds {
        let cfg = ModelConfig {
            d_cross: d,
            d_encoder,
            ..ModelConfig::toy(layers, heads, d_model, d, 50257)
        };
        cfg.validate()?;
        writeln!(s, "{d}\t{layers}\t{heads}\t{d_model}\t{d_encoder}\t{}", count_trainable_params(&cfg)).unwrap();
    }
    Ok(s)
}

fn cmd_count_params(a: CountParamsArgs) -> Result<()> {
    print!("{}", params_table(a.layers, a.heads, a.dmodel, a.denc, &a.d)?);
    Ok(())
}
