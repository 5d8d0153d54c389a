//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero when any criterion fails.

use std::collections::{HashMap, HashSet};
use std::time::Instant;

use mambasum::bench::{bench_attention_baseline, bench_scan, fit_scaling, TimingRow, DEFAULT_LENGTHS, MIN_REPEATS};
use mambasum::corpus::{split, synthetic_corpus, Corpus, Document, SyntheticSpec};
use mambasum::eval::{evaluate, paired_t_test, student_t_two_sided_p, Summarizer};
use mambasum::model::{
    load_checkpoint, model_grad_check, save_checkpoint, train, Model, ModelConfig, TrainConfig, GRAD_CHECK_EPS,
    GRAD_CHECK_TOL,
};
use mambasum::nn::{seeded_rng, OpKind, Scalar};
use mambasum::rouge::{greedy_label, label_corpus, lcs_len, normalize, rouge_l, rouge_n};
use mambasum::ssm::{selective_scan_chunked, selective_scan_seq, ScanInputs};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn scan_inputs<T: Scalar>(rng: &mut impl Rng, l: usize, di: usize, ds: usize) -> [Vec<T>; 6] {
    let mut v = |n: usize, lo: f64, hi: f64| -> Vec<T> { (0..n).map(|_| T::from(rng.gen_range(lo..hi)).unwrap()).collect() };
    [v(l * di, -1.0, 1.0), v(l * di, 1e-3, 0.5), v(di * ds, -4.0, -0.1), v(l * ds, -1.0, 1.0), v(l * ds, -1.0, 1.0), v(di, -1.0, 1.0)]
}

fn scan_gap<T: Scalar>(rng: &mut impl Rng, l: usize, di: usize, ds: usize, chunk: usize) -> f64 {
    let [x, delta, a, b, c, d] = scan_inputs::<T>(rng, l, di, ds);
    let inp = ScanInputs { len: l, d_inner: di, d_state: ds, x: &x, delta: &delta, a: &a, b: &b, c: &c, d: &d };
    let seq = selective_scan_seq(&inp).unwrap();
    let chunked = selective_scan_chunked(&inp, chunk).unwrap();
    seq.iter().zip(&chunked).map(|(p, q)| (*p - *q).abs().to_f64().unwrap()).fold(0.0, f64::max)
}

fn scan_equivalence() -> Outcome {
    let mut rng = seeded_rng(2024);
    let (mut worst32, mut worst64) = (0.0f64, 0.0f64);
    let configs = 120;
    for _ in 0..configs {
        let l = rng.gen_range(1..=512);
        let di = rng.gen_range(1..=8);
        let ds = rng.gen_range(1..=16);
        let chunk = rng.gen_range(1..=l + 8);
        worst32 = worst32.max(scan_gap::<f32>(&mut rng, l, di, ds, chunk));
        worst64 = worst64.max(scan_gap::<f64>(&mut rng, l, di, ds, chunk));
    }
    check(
        worst32 <= 1e-5 && worst64 <= 1e-10,
        format!("{configs} configs, max-abs f32 {worst32:.2e}, f64 {worst64:.2e}"),
    )
}

fn gradient_fidelity() -> Outcome {
    let model = Model::<f32>::new(ModelConfig::tiny(), 42).unwrap().cast::<f64>();
    let mut doc = Document::new(
        "gradcheck",
        &["Officials confirmed the new budget.", "The weather stayed mild.", "A dog barked twice."],
        &["Officials confirmed the budget."],
    );
    doc.tokenize(model.config.encoder.vocab_size, 32);
    doc.set_labels(vec![1, 0, 0]).unwrap();
    let clean = model_grad_check(&model, &doc, None, GRAD_CHECK_EPS, None, None).map_err(|e| e.to_string())?;
    let faulty =
        model_grad_check(&model, &doc, None, GRAD_CHECK_EPS, None, Some(OpKind::LayerNorm)).map_err(|e| e.to_string())?;
    check(
        clean < GRAD_CHECK_TOL && faulty > 1e-2,
        format!("d_model 16, d_state 4, 3 sentences: clean {clean:.2e}, corrupted LayerNorm backward {faulty:.2e}"),
    )
}

fn rouge_fixtures() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    let (c, r) = (normalize("the cat sat"), normalize("the cat ran"));
    let r1 = rouge_n(&c, &r, 1);
    let r2 = rouge_n(&c, &r, 2);
    let (lc, lr) = (normalize("the cat sat on mat"), normalize("the cat on the mat"));
    let rl = rouge_l(&lc, &lr);
    let ok = close(r1.precision, 2.0 / 3.0)
        && close(r1.recall, 2.0 / 3.0)
        && close(r1.f1, 2.0 / 3.0)
        && close(r2.precision, 0.5)
        && close(r2.recall, 0.5)
        && close(r2.f1, 0.5)
        && lcs_len(&lc, &lr) == 4
        && close(rl.precision, 0.8)
        && close(rl.recall, 0.8)
        && close(rl.f1, 0.8);
    check(ok, format!("R1 {:.15} R2 {:.15} RL {:.15}", r1.f1, r2.f1, rl.f1))
}

fn bigram_f1(cand: &[String], reference: &[String]) -> f64 {
    let count = |t: &[String]| {
        let mut m: HashMap<(String, String), usize> = HashMap::new();
        for w in t.windows(2) {
            *m.entry((w[0].clone(), w[1].clone())).or_default() += 1;
        }
        m
    };
    let (cc, rc) = (count(cand), count(reference));
    let overlap: usize = cc.iter().map(|(g, n)| (*n).min(rc.get(g).copied().unwrap_or(0))).sum();
    let (ct, rt) = (cand.len().saturating_sub(1), reference.len().saturating_sub(1));
    if overlap == 0 || ct == 0 || rt == 0 {
        return 0.0;
    }
    let (p, r) = (overlap as f64 / ct as f64, overlap as f64 / rt as f64);
    2.0 * p * r / (p + r)
}

fn subset_f1(sents: &[Vec<String>], reference: &[String], mask: impl Fn(usize) -> bool) -> f64 {
    let cand: Vec<String> = sents.iter().enumerate().filter(|(i, _)| mask(*i)).flat_map(|(_, s)| s.clone()).collect();
    bigram_f1(&cand, reference)
}

fn greedy_friendly_fixtures() -> Vec<Document> {
    vec![
        Document::new(
            "friendly-1",
            &["The council approved the new budget.", "Rain is expected tomorrow.", "Schools reopen on monday morning."],
            &["The council approved the new budget.", "Schools reopen on monday morning."],
        ),
        Document::new(
            "friendly-2",
            &["Stocks rose sharply today.", "Analysts were surprised.", "The central bank held rates steady.", "Fans cheered."],
            &["The central bank held rates steady."],
        ),
    ]
}

fn oracle_soundness() -> Outcome {
    let spec = SyntheticSpec { n_docs: 40, min_sentences: 4, max_sentences: 12, ..Default::default() };
    let mut docs = synthetic_corpus(spec, 5).documents;
    let friendly: HashSet<String> = greedy_friendly_fixtures().into_iter().map(|d| d.id).collect();
    docs.extend(greedy_friendly_fixtures());
    let (mut checked, mut gaps) = (0, 0);
    for doc in docs.iter().filter(|d| d.len() <= 12) {
        let sents: Vec<Vec<String>> = doc.sentences.iter().map(|s| normalize(&s.text)).collect();
        let reference = normalize(&doc.reference_text());
        let set = greedy_label(doc, None).map_err(|e| e.to_string())?;
        let greedy = subset_f1(&sents, &reference, |i| set.labels[i] == 1);
        let best = (0u32..1 << doc.len())
            .map(|m| subset_f1(&sents, &reference, |i| m >> i & 1 == 1))
            .fold(0.0, f64::max);
        if greedy > best + 1e-12 {
            return Err(format!("{}: greedy {greedy} above brute force {best}", doc.id));
        }
        if friendly.contains(&doc.id) && (greedy - best).abs() > 1e-12 {
            return Err(format!("{}: greedy {greedy} below brute force {best} on a greedy-friendly fixture", doc.id));
        }
        if greedy < best - 1e-12 {
            gaps += 1;
        }
        let mut prev = 0.0;
        for step in 1..=set.selected_order.len() {
            let prefix = &set.selected_order[..step];
            let f = subset_f1(&sents, &reference, |i| prefix.contains(&i));
            if f <= prev {
                return Err(format!("{}: greedy step {step} did not increase F1 ({prev} -> {f})", doc.id));
            }
            prev = f;
        }
        checked += 1;
    }
    Ok(format!("{checked} documents, greedy below optimum on {gaps}, all steps strictly increasing"))
}

fn labeled_splits(n_docs: usize, sizes: (usize, usize, usize), vocab: usize, seed: u64) -> (Corpus, Corpus, Corpus) {
    let corpus = synthetic_corpus(SyntheticSpec { n_docs, ..Default::default() }, seed);
    let (tr, va, te) = split(&corpus, sizes.0, sizes.1, sizes.2, seed).unwrap();
    let prep = |c: Corpus| {
        let mut c = label_corpus(&c, None).unwrap();
        c.tokenize(vocab, 128);
        c
    };
    (prep(tr), prep(va), prep(te))
}

fn learning_signal() -> Outcome {
    let cfg = ModelConfig::default();
    let (tr, va, te) = labeled_splits(200, (120, 40, 40), cfg.encoder.vocab_size, 42);
    let tc = TrainConfig { lr: 1e-3, epochs: 2, grad_accum_steps: 8, clip_max_norm: 1.0, dropout: 0.2, seed: 42, ..Default::default() };
    let model = Model::<f32>::new(cfg, 42).map_err(|e| e.to_string())?;
    let out = train(model, &tr, &va, &tc, None).map_err(|e| e.to_string())?;
    let trained = Summarizer::Model { model: &out.last.model, embeddings: None, name: "mambasum" };
    let k = tc.k;
    let model_r1 = evaluate(&trained, &te, k).map_err(|e| e.to_string())?.mean.r1.f1;
    let random_r1 = evaluate(&Summarizer::Random { seed: 42 }, &te, k).map_err(|e| e.to_string())?.mean.r1.f1;
    let val: Vec<f64> = out.metrics.iter().map(|m| m.val_loss).collect();
    let decreasing = val.windows(2).all(|w| w[1] < w[0]);
    check(
        model_r1 - random_r1 >= 0.10 && decreasing,
        format!("test R1 {model_r1:.4} vs random-k {random_r1:.4}, val loss {val:.4?}"),
    )
}

fn statistics() -> Outcome {
    let s = paired_t_test(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).map_err(|e| e.to_string())?;
    let t_ok = (s.t - 2.0 * 3f64.sqrt()).abs() < 1e-12 && s.df == 2 && (s.cohens_d - 2.0).abs() < 1e-12;
    let p0 = student_t_two_sided_p(0.0, 2);
    let ts: Vec<f64> = (0..200).map(|i| i as f64 * 0.05).collect();
    let monotone = ts.windows(2).all(|w| {
        student_t_two_sided_p(w[1], 2) < student_t_two_sided_p(w[0], 2)
            && student_t_two_sided_p(-w[1], 2) == student_t_two_sided_p(w[1], 2)
    });
    check(
        t_ok && (p0 - 1.0).abs() < 1e-12 && monotone,
        format!("t {:.15} df {} d {:.15} p(0) {p0} monotone {monotone}", s.t, s.df, s.cohens_d),
    )
}

fn scaling() -> Outcome {
    let scan = bench_scan(&DEFAULT_LENGTHS, 64, MIN_REPEATS).map_err(|e| e.to_string())?;
    let attention = bench_attention_baseline(&DEFAULT_LENGTHS, 64, MIN_REPEATS).map_err(|e| e.to_string())?;
    let sf = fit_scaling(&scan).map_err(|e| e.to_string())?;
    let af = fit_scaling(&attention).map_err(|e| e.to_string())?;
    let synthetic = |p: i32| -> Vec<TimingRow> {
        DEFAULT_LENGTHS
            .iter()
            .map(|&n| TimingRow { n, median_seconds: 3e-9 * (n as f64).powi(p), iqr_seconds: 0.0, repeats: MIN_REPEATS })
            .collect()
    };
    let lin = fit_scaling(&synthetic(1)).map_err(|e| e.to_string())?.exponent;
    let quad = fit_scaling(&synthetic(2)).map_err(|e| e.to_string())?.exponent;
    check(
        sf.exponent < 1.3 && af.exponent > 1.7 && (lin - 1.0).abs() < 1e-9 && (quad - 2.0).abs() < 1e-9,
        format!("ssm exponent {:.3}, attention exponent {:.3}, synthetic fits {lin:.12} {quad:.12}", sf.exponent, af.exponent),
    )
}

fn determinism() -> Outcome {
    let cfg = ModelConfig::with_d_model(16);
    let (tr, va, te) = labeled_splits(30, (16, 6, 8), cfg.encoder.vocab_size, 42);
    let tc = TrainConfig { lr: 1e-3, epochs: 2, grad_accum_steps: 4, seed: 42, ..Default::default() };
    let run = || -> Result<Vec<u8>, String> {
        let model = Model::<f32>::new(cfg.clone(), 42).map_err(|e| e.to_string())?;
        Ok(train(model, &tr, &va, &tc, None).map_err(|e| e.to_string())?.last.to_bytes())
    };
    let (a, b) = (run()?, run()?);
    let identical = a == b;

    let model = Model::<f32>::new(cfg.clone(), 42).map_err(|e| e.to_string())?;
    let out = train(model, &tr, &va, &tc, None).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("checkpoint.bin");
    save_checkpoint(&out.last, &path).map_err(|e| e.to_string())?;
    let loaded = load_checkpoint(&path).map_err(|e| e.to_string())?;
    let mut bit_exact = true;
    for doc in &te.documents {
        let p = out.last.model.forward_document(doc, None).map_err(|e| e.to_string())?;
        let q = loaded.model.forward_document(doc, None).map_err(|e| e.to_string())?;
        bit_exact &= p.iter().zip(&q).all(|(x, y)| x.to_bits() == y.to_bits()) && p.len() == q.len();
    }

    let corpus = synthetic_corpus(SyntheticSpec { n_docs: 50, ..Default::default() }, 3);
    let mut disjoint = true;
    for seed in 0..100 {
        let (x, y, z) = split(&corpus, 30, 10, 10, seed).map_err(|e| e.to_string())?;
        let ids: Vec<&str> = x.ids().into_iter().chain(y.ids()).chain(z.ids()).collect();
        let unique: HashSet<&str> = ids.iter().copied().collect();
        disjoint &= ids.len() == 50 && unique.len() == 50;
    }
    check(
        identical && bit_exact && disjoint,
        format!("checkpoints identical {identical} ({} bytes), reload bit-exact {bit_exact}, 100 seeds disjoint {disjoint}", a.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("scan oracle equivalence", scan_equivalence),
        ("gradient fidelity", gradient_fidelity),
        ("ROUGE correctness", rouge_fixtures),
        ("oracle labeling soundness", oracle_soundness),
        ("learning signal", learning_signal),
        ("statistics correctness", statistics),
        ("linear vs quadratic scaling", scaling),
        ("determinism and persistence", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {}. {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}. {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
