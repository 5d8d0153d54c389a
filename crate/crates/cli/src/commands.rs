use std::io::Read as _;
use std::path::{Path, PathBuf};

use mambasum::bench::{bench_attention_baseline, bench_markdown, bench_scan, emit_bench_report, fit_scaling};
use mambasum::corpus::{
    kmeans_sample, load_jsonl, segment_sentences, split, synthetic_corpus, write_jsonl, write_manifest, Corpus, Document,
    SyntheticSpec,
};
use mambasum::encoder::load_precomputed_embeddings;
use mambasum::eval::{
    evaluate, paired_t_test, read_scores_csv, summarize_report, EvalReport, ScoreRow, SignificanceResult, Summarizer,
};
use mambasum::model::{
    load_checkpoint, model_grad_check, save_checkpoint, select_sentences, train as train_model, EmbeddingTable, Model,
    ModelConfig, GRAD_CHECK_EPS, GRAD_CHECK_TOL,
};
use mambasum::nn::OpKind;
use mambasum::rouge::label_corpus;
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

pub const SPLITS: [&str; 3] = ["train", "val", "test"];
pub const MODEL_ID: &str = "mambasum";

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

/// `path` itself when it is a file, otherwise `path/<name>.jsonl`.
fn split_file(path: &Path, name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(format!("{name}.jsonl"))
    } else {
        path.to_path_buf()
    }
}

fn load_split(cfg: &RunConfig, name: &str) -> Result<Corpus, CliError> {
    let mut corpus = load_jsonl(split_file(cfg.corpus()?, name))?;
    corpus.tokenize(cfg.model.encoder.vocab_size, cfg.model.encoder.max_len);
    Ok(corpus)
}

fn load_embeddings(cfg: &RunConfig, d_model: usize) -> Result<Option<EmbeddingTable>, CliError> {
    match &cfg.embeddings {
        Some(path) => Ok(Some(load_precomputed_embeddings(path, d_model)?)),
        None => Ok(None),
    }
}

fn checkpoint_path(cfg: &RunConfig) -> Result<&Path, CliError> {
    cfg.checkpoint
        .as_deref()
        .ok_or_else(|| CliError::usage(format!("{} requires --checkpoint", cfg.command)))
}

pub fn prepare(cfg: &RunConfig) -> Result<(), CliError> {
    let p = &cfg.prepare;
    let out = cfg.out_dir()?;
    let source = match p.synthetic {
        Some(n_docs) => synthetic_corpus(SyntheticSpec { n_docs, ..Default::default() }, cfg.seed),
        None => load_jsonl(cfg.corpus()?)?,
    };
    let sampled = kmeans_sample(&source, p.clusters, p.n_select, cfg.model.encoder.vocab_size, cfg.seed)?;
    let (tr, va, te) = split(&sampled, p.n_train, p.n_val, p.n_test, cfg.seed)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    write_jsonl(&sampled, out.join("corpus.jsonl"))?;
    for (name, part) in SPLITS.iter().zip([&tr, &va, &te]) {
        write_jsonl(part, out.join(format!("{name}.jsonl")))?;
        write_manifest(part, out)?;
    }
    cfg.echo(out)?;
    println!(
        "sampled {} of {} documents; train {} val {} test {}",
        sampled.len(),
        source.len(),
        tr.len(),
        va.len(),
        te.len()
    );
    Ok(())
}

pub fn label(cfg: &RunConfig) -> Result<(), CliError> {
    let input = cfg.corpus()?;
    let out = cfg.out_dir()?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let files: Vec<(PathBuf, PathBuf)> = if input.is_dir() {
        let mut files = Vec::new();
        for name in SPLITS {
            let src = input.join(format!("{name}.jsonl"));
            if src.is_file() {
                files.push((src, out.join(format!("{name}.jsonl"))));
            }
            let manifest = input.join(format!("{name}_ids.txt"));
            let copy = out.join(format!("{name}_ids.txt"));
            if manifest.is_file() && manifest != copy {
                std::fs::copy(&manifest, &copy).map_err(|e| CliError::io(&manifest, e))?;
            }
        }
        if files.is_empty() {
            return Err(CliError::usage(format!("{}: no train/val/test.jsonl found", input.display())));
        }
        files
    } else {
        let name = input.file_name().ok_or_else(|| CliError::usage("--corpus has no file name"))?;
        vec![(input.to_path_buf(), out.join(name))]
    };
    for (src, dst) in files {
        let corpus = load_jsonl(&src)?;
        let labeled = label_corpus(&corpus, cfg.max_label_sents)?;
        write_jsonl(&labeled, &dst)?;
        let positives: usize = labeled.documents.iter().flat_map(|d| d.labels.iter().flatten()).map(|&l| l as usize).sum();
        println!("{}: {} documents, {} positive sentences", dst.display(), labeled.len(), positives);
    }
    cfg.echo(out)
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    let train_set = load_split(cfg, "train")?;
    let val_set = load_split(cfg, "val")?;
    let embeddings = load_embeddings(cfg, cfg.model.ssm.d_model)?;
    let model = Model::<f32>::new(cfg.model.clone(), cfg.seed)?;
    let outcome = train_model(model, &train_set, &val_set, &cfg.train, embeddings.as_ref())?;
    cfg.echo(out)?;
    save_checkpoint(&outcome.last, out.join("checkpoint.bin"))?;
    save_checkpoint(&outcome.best, out.join("best.bin"))?;
    write_json(&out.join("metrics.json"), &outcome.metrics)?;
    for m in &outcome.metrics {
        let train_loss = m.train_loss.map_or_else(|| "-".to_string(), |l| format!("{l:.4}"));
        println!(
            "epoch {} train_loss {} val_loss {:.4} val_rouge1 {:.4} steps {}",
            m.epoch, train_loss, m.val_loss, m.val_rouge1, m.optimizer_steps
        );
    }
    println!("best epoch {}", outcome.best.epoch);
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    reports: &'a [EvalReport],
    significance: &'a [(String, SignificanceResult)],
}

pub fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    let ckpt = load_checkpoint(checkpoint_path(cfg)?)?;
    let mut run = cfg.clone();
    run.model = ckpt.model.config.clone();
    let test = load_split(&run, "test")?;
    let embeddings = load_embeddings(&run, run.model.ssm.d_model)?;
    let summarizers = [
        Summarizer::Lead,
        Summarizer::Random { seed: cfg.seed },
        Summarizer::Oracle { max_selected: cfg.max_label_sents },
        Summarizer::Model { model: &ckpt.model, embeddings: embeddings.as_ref(), name: MODEL_ID },
    ];
    let reports = summarizers.iter().map(|s| evaluate(s, &test, cfg.k)).collect::<Result<Vec<_>, _>>()?;
    let model_r1 = reports[3].r1_f1();
    let mut significance = Vec::new();
    for baseline in &reports[..2] {
        // identical score vectors have no defined t statistic
        if let Ok(s) = paired_t_test(&model_r1, &baseline.r1_f1()) {
            significance.push((format!("{MODEL_ID} vs {}", baseline.model_id), s));
        }
    }
    let md = summarize_report(&reports, &significance, out)?;
    write_json(&out.join("report.json"), &EvalOutput { reports: &reports, significance: &significance })?;
    cfg.echo(out)?;
    let table = std::fs::read_to_string(&md).map_err(|e| CliError::io(&md, e))?;
    print!("{table}");
    Ok(())
}

fn read_input(path: &Path) -> Result<String, CliError> {
    if path.as_os_str() == "-" {
        let mut text = String::new();
        std::io::stdin().read_to_string(&mut text).map_err(|e| CliError::io(path, e))?;
        Ok(text)
    } else {
        std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
    }
}

pub fn summarize(cfg: &RunConfig, input: Option<&Path>, doc_id: Option<&str>) -> Result<(), CliError> {
    let ckpt = load_checkpoint(checkpoint_path(cfg)?)?;
    let enc = &ckpt.model.config.encoder;
    let mut embeddings = None;
    let mut doc = match (input, doc_id) {
        (Some(path), _) => {
            let sentences = segment_sentences(&read_input(path)?);
            if sentences.is_empty() {
                return Err(CliError::runtime("corpus", "input has no sentences"));
            }
            Document { id: "input".into(), sentences, reference: Vec::new(), labels: None }
        }
        (None, Some(id)) => {
            let corpus = load_jsonl(cfg.corpus()?)?;
            embeddings = load_embeddings(cfg, ckpt.model.config.ssm.d_model)?;
            corpus
                .get(id)
                .cloned()
                .ok_or_else(|| CliError::runtime("corpus", format!("document {id:?} not found")))?
        }
        (None, None) => return Err(CliError::usage("summarize requires --input or --doc-id")),
    };
    doc.tokenize(enc.vocab_size, enc.max_len);
    let probs = ckpt.model.forward_document(&doc, embeddings.as_ref())?;
    for i in select_sentences(&probs, cfg.k) {
        println!("{}", doc.sentences[i].text);
    }
    Ok(())
}

pub fn bench(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    let d = cfg.model.ssm.d_model;
    let b = &cfg.bench;
    let scan = bench_scan(&b.lengths, d, b.repeats)?;
    let attention = bench_attention_baseline(&b.lengths, d, b.repeats)?;
    let scan_fit = fit_scaling(&scan)?;
    let attention_fit = fit_scaling(&attention)?;
    emit_bench_report(&scan, &attention, &scan_fit, &attention_fit, out)?;
    cfg.echo(out)?;
    print!("{}", bench_markdown(&scan, &attention, &scan_fit, &attention_fit));
    Ok(())
}

/// Three-sentence document whose first sentence is the positive.
pub fn gradcheck_document(vocab_size: usize) -> Document {
    let mut doc = Document::new(
        "gradcheck",
        &["Officials confirmed the new budget.", "The weather stayed mild.", "A dog barked twice."],
        &["Officials confirmed the budget."],
    );
    doc.tokenize(vocab_size, 32);
    doc.set_labels(vec![1, 0, 0]).expect("three labels");
    doc
}

pub fn gradcheck(cfg: &RunConfig, d_model: Option<usize>, inject_fault: bool) -> Result<(), CliError> {
    let mut mc = ModelConfig::tiny();
    if let Some(d) = d_model {
        mc.encoder.d_model = d;
        mc.ssm.d_model = d;
    }
    let model = Model::<f32>::new(mc, cfg.seed)?.cast::<f64>();
    let doc = gradcheck_document(model.config.encoder.vocab_size);
    let fault = inject_fault.then_some(OpKind::LayerNorm);
    let err = model_grad_check(&model, &doc, None, GRAD_CHECK_EPS, None, fault)?;
    println!("max relative error {err:.3e} (eps {GRAD_CHECK_EPS:e}, tolerance {GRAD_CHECK_TOL:e})");
    if err >= GRAD_CHECK_TOL {
        return Err(CliError::runtime("gradcheck", format!("relative error {err:.3e} exceeds {GRAD_CHECK_TOL:e}")));
    }
    Ok(())
}

fn metric_of(row: &ScoreRow, metric: &str) -> f64 {
    match metric {
        "r1" => row.r1_f,
        "r2" => row.r2_f,
        _ => row.rl_f,
    }
}

pub fn stats(_cfg: &RunConfig, a: &Path, b: &Path, metric: &str) -> Result<(), CliError> {
    if !matches!(metric, "r1" | "r2" | "rl") {
        return Err(CliError::usage(format!("--metric must be r1, r2 or rl, got {metric:?}")));
    }
    let rows_a = read_scores_csv(a)?;
    let rows_b = read_scores_csv(b)?;
    let mut xs = Vec::with_capacity(rows_a.len());
    let mut ys = Vec::with_capacity(rows_a.len());
    for ra in &rows_a {
        let rb = rows_b.iter().find(|r| r.doc_id == ra.doc_id).ok_or_else(|| {
            CliError::runtime("stats", format!("document {:?} missing from {}", ra.doc_id, b.display()))
        })?;
        xs.push(metric_of(ra, metric));
        ys.push(metric_of(rb, metric));
    }
    if rows_b.len() != rows_a.len() {
        return Err(CliError::runtime("stats", "score files cover different documents"));
    }
    let result = paired_t_test(&xs, &ys)?;
    println!("{}", serde_json::to_string_pretty(&result).expect("result serializes"));
    Ok(())
}
