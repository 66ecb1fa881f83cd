//! Acceptance suite: one pass/fail line per criterion, non-zero exit on failure.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use mtdistill_core::backend::{Backend, GenRequest, MockBackend, ScoreRequest, SCORER_METRICX_QE};
use mtdistill_core::corpus::{LangPair, SourcePool};
use mtdistill_core::distill::{self, DistillConfig, GenContext, QeHandle};
use mtdistill_core::evalprep::{
    aggregate, chunk_document, mark_row_minimum, AnnotationRecord, Domain, EvalDocument, EvalManifest, ManifestChunk,
    MAX_CHUNK_SENTENCES,
};
use mtdistill_core::metrics::{chrf, mqm_score, rescale, ChrFConfig, MqmWeightTable, RescaleTransform};
use mtdistill_core::mixture::{self, Measure, MixtureEntry, MixtureSpec, SourceExample};
use mtdistill_core::prompting::{render_prompt, Registry};
use mtdistill_core::rewards::{
    batch_normalize, broadcast_sequence_reward, combine, compute_advantages, spans_to_token_rewards, AdvantageBatch,
    RewardInput, RewardSpec, RewardsConfig, SequenceReward, Severity, SpanAnnotation, TokenAlignment, TokenReward,
};
use mtdistill_core::tokenize::{CharSpan, WhitespacePunctTokenizer};
use mtdistill_core::jsonl;
use rand::Rng;

use common::{chrf_oracle, mean_std, random_text, rng, segments};

type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("chrf matches brute-force oracle", c1_chrf),
        ("rescaling fidelity", c2_rescale),
        ("advantage math", c3_advantages),
        ("worked two-sequence advantage example", c4_worked_example),
        ("mock pipeline end to end", c5_pipeline),
        ("prompt golden files", c6_prompt),
        ("chunking fixtures", c7_chunking),
        ("mixture tolerance", c8_mixture),
        ("MQM table fixture", c9_mqm_table),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let res = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let ms = t.elapsed().as_millis();
        match res {
            Ok(()) => println!("criterion {}: PASS  {name} ({ms} ms)", i + 1),
            Err(e) => {
                failed += 1;
                println!("criterion {}: FAIL  {name} ({ms} ms): {e}", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn c1_chrf() -> Check {
    let start = Instant::now();
    let cfg = ChrFConfig::default();
    let mut r = rng(11);
    let mut pairs: Vec<(String, String)> = (0..100)
        .map(|_| (random_text(&mut r, 0, 30), random_text(&mut r, 1, 30)))
        .collect();
    for (h, rf) in [
        ("the cat sat on the mat", "the cat sat on the mat"),
        ("the cat", "a dog barked loudly"),
        ("abcd", "abce"),
        ("", "reference"),
        ("a", "a b c"),
        ("Grüße aus Köln", "Grüsse aus Koeln"),
        ("  spaced   out ", "spacedout"),
        ("xyz", "xyzxyz"),
        ("日本語のテキスト", "日本語テキスト"),
        ("Hello, world!", "hello world"),
    ] {
        pairs.push((h.to_string(), rf.to_string()));
    }
    for (h, rf) in &pairs {
        let got = chrf(h, rf, &cfg).map_err(|e| e.to_string())?;
        let want = chrf_oracle(h, rf, 6, 2.0);
        ensure!((got - want).abs() <= 1e-9, "chrf({h:?}, {rf:?}) = {got}, oracle {want}");
    }
    let same = chrf("identical text", "identical text", &cfg).map_err(|e| e.to_string())?;
    ensure!(same == 100.0, "identical strings scored {same}");
    let disjoint = chrf("abc", "xyz", &cfg).map_err(|e| e.to_string())?;
    ensure!(disjoint == 0.0, "disjoint strings scored {disjoint}");
    ensure!(start.elapsed() < Duration::from_secs(1), "took {:?}", start.elapsed());
    Ok(())
}

fn c2_rescale() -> Check {
    ensure!(rescale(0.0, RescaleTransform::MetricxQe) == 5.0, "metricx_qe(0) != 5");
    ensure!(rescale(25.0, RescaleTransform::MetricxQe) == -20.0, "metricx_qe(25) != -20");
    ensure!(rescale(37.5, RescaleTransform::Chrf) == 75.0, "chrf transform does not double");
    let mut r = rng(22);
    for trial in 0..1000 {
        let n = r.gen_range(1..40);
        let raw: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..25.0)).collect();
        let mut argmin = 0;
        for (i, &v) in raw.iter().enumerate() {
            if v < raw[argmin] {
                argmin = i;
            }
        }
        let best = distill::select_best(
            raw.iter().enumerate().map(|(i, &v)| (i, rescale(v, RescaleTransform::MetricxQe))),
        );
        ensure!(best == Some(argmin), "trial {trial}: argmax rescaled {best:?} vs argmin raw {argmin}");
    }
    Ok(())
}

fn span(start: usize, end: usize, severity: Severity, category: &str) -> SpanAnnotation {
    SpanAnnotation {
        start,
        end,
        severity,
        category: category.into(),
        source_judge: String::new(),
    }
}

fn c3_advantages() -> Check {
    let mut r = rng(33);
    let weights = MqmWeightTable::default();
    for b in 0..100 {
        let seqs = r.gen_range(1..6);
        let mut combined = Vec::new();
        for s in 0..seqs {
            let t = r.gen_range(1..30);
            let seq_rewards: Vec<SequenceReward> = (0..r.gen_range(0..3))
                .map(|k| SequenceReward {
                    source_id: format!("seq{k}"),
                    value: r.gen_range(-20.0..5.0),
                    weight: r.gen_range(0.0..2.0),
                })
                .collect();
            let tok_rewards: Vec<TokenReward> = (0..r.gen_range(0..3))
                .map(|k| TokenReward {
                    source_id: format!("tok{k}"),
                    values: (0..t).map(|_| r.gen_range(-5.0..0.0)).collect(),
                    weight: r.gen_range(0.0..2.0),
                })
                .collect();
            let spec = RewardSpec {
                sequence_rewards: seq_rewards.clone(),
                token_rewards: tok_rewards.clone(),
            };
            let got = combine(&spec, t).map_err(|e| e.to_string())?;
            for i in 0..t {
                let want: f64 = seq_rewards.iter().map(|x| x.weight * x.value).sum::<f64>()
                    + tok_rewards.iter().map(|x| x.weight * x.values[i]).sum::<f64>();
                ensure!((got[i] - want).abs() <= 1e-12, "batch {b} seq {s} token {i}: {} vs {want}", got[i]);
            }
            combined.push(got);
        }
        let flat: Vec<f64> = combined.iter().flatten().copied().collect();
        let constant = flat.iter().all(|&x| x == flat[0]);
        let norm = batch_normalize(&AdvantageBatch::new(combined)).map_err(|e| e.to_string())?;
        let out: Vec<f64> = norm.sequences.iter().flatten().copied().collect();
        if constant {
            ensure!(out.iter().all(|&x| x == 0.0), "batch {b}: constant batch not zeroed");
        } else {
            let (m, sd) = mean_std(&out);
            ensure!(m.abs() < 1e-9 && (sd - 1.0).abs() < 1e-6, "batch {b}: mean {m}, std {sd}");
        }
    }
    let flat = batch_normalize(&AdvantageBatch::new(vec![vec![2.5; 4], vec![2.5; 3]])).map_err(|e| e.to_string())?;
    ensure!(flat.sequences.iter().flatten().all(|&x| x == 0.0), "explicit constant batch not zeroed");

    let severities = [
        (Severity::Major, "accuracy/mistranslation"),
        (Severity::Minor, "fluency/grammar"),
        (Severity::Minor, "fluency/punctuation"),
        (Severity::NonTranslation, "non-translation"),
    ];
    for trial in 0..200 {
        let words = r.gen_range(1..15);
        let text = (0..words).map(|_| random_text(&mut r, 1, 6).replace(' ', "w")).collect::<Vec<_>>().join(" ");
        let len = text.chars().count();
        let align = TokenAlignment::from_text(&text, &WhitespacePunctTokenizer);
        let mut spans: Vec<SpanAnnotation> = (0..r.gen_range(0..4))
            .map(|_| {
                let a = r.gen_range(0..len);
                let b = r.gen_range(a + 1..=len);
                let (sev, cat) = &severities[r.gen_range(0..severities.len())];
                span(a, b, sev.clone(), cat)
            })
            .collect();
        if trial % 2 == 0 {
            spans.retain(|s| s.severity != Severity::NonTranslation);
        }
        let tr = spans_to_token_rewards(&spans, &align, &weights).map_err(|e| e.to_string())?;
        let total: f64 = tr.values.iter().sum();
        let mqm = mqm_score(&spans, &weights).map_err(|e| e.to_string())?;
        ensure!((total + mqm).abs() <= 1e-9, "trial {trial}: token sum {total} vs -mqm {}", -mqm);
    }
    Ok(())
}

/// Two hypotheses, one sequence-level reward each, one major span on the
/// first. Values below are worked out by hand.
fn c4_worked_example() -> Check {
    // "Der Hund bellt ." -> tokens [0,3) [4,8) [9,14) [15,16); major span on "Hund".
    // "Es regnet ."      -> tokens [0,2) [3,9) [10,11); no spans.
    let tok = |v: &[(usize, usize)]| v.iter().map(|&(start, end)| CharSpan { start, end }).collect::<Vec<_>>();
    let inputs = vec![
        RewardInput {
            sequence_id: "s1".into(),
            tokens: tok(&[(0, 3), (4, 8), (9, 14), (15, 16)]),
            text_len: Some(16),
            spans: vec![span(4, 8, Severity::Major, "accuracy/mistranslation")],
            sequence_rewards: vec![SequenceReward { source_id: "metricx".into(), value: 3.2, weight: 1.0 }],
            token_rewards: vec![],
        },
        RewardInput {
            sequence_id: "s2".into(),
            tokens: tok(&[(0, 2), (3, 9), (10, 11)]),
            text_len: Some(11),
            spans: vec![],
            sequence_rewards: vec![SequenceReward { source_id: "metricx".into(), value: -1.5, weight: 1.0 }],
            token_rewards: vec![],
        },
    ];
    let cfg = RewardsConfig { normalize: false, ..RewardsConfig::default() };
    let out = compute_advantages(&inputs, &cfg).map_err(|e| e.to_string())?;
    let want = [vec![3.2, 3.2 - 5.0, 3.2, 3.2], vec![-1.5, -1.5, -1.5]];
    for (o, w) in out.iter().zip(&want) {
        ensure!(o.advantages.len() == w.len(), "{}: length {} vs {}", o.sequence_id, o.advantages.len(), w.len());
        for (a, b) in o.advantages.iter().zip(w) {
            ensure!((a - b).abs() <= 1e-12, "{}: {:?} vs {w:?}", o.sequence_id, o.advantages);
        }
    }
    ensure!(
        broadcast_sequence_reward(3.2, 4).map_err(|e| e.to_string())? == vec![3.2; 4],
        "broadcast is not uniform"
    );

    // With normalization on, the same batch maps through pooled moments.
    let flat: Vec<f64> = want.iter().flatten().copied().collect();
    let (m, sd) = mean_std(&flat);
    let norm = compute_advantages(&inputs, &RewardsConfig::default()).map_err(|e| e.to_string())?;
    for (o, w) in norm.iter().zip(&want) {
        for (a, b) in o.advantages.iter().zip(w) {
            let e = (b - m) / (sd + 1e-8);
            ensure!((a - e).abs() <= 1e-12, "normalized {a} vs {e}");
        }
    }
    Ok(())
}

fn c5_pipeline() -> Check {
    let start = Instant::now();
    let registry = Registry::builtin();
    let pair = LangPair::new("en-US", "de-DE");
    let backend = MockBackend::new(5);
    let ctx = GenContext { registry: &registry, lang_pair: &pair, temperature: 1.0, max_tokens: 256 };
    let qe = QeHandle::metricx(&backend);
    let segs = segments(50, 55);
    let pool = SourcePool { lang_pair: pair.clone(), segments: segs.clone(), seed: 55, target_size: 50 };

    let k = 20;
    let pre = distill::prefilter(&pool, &ctx, &qe, k, 4).map_err(|e| e.to_string())?;
    let mut brute: Vec<(f64, String)> = Vec::new();
    for s in &segs {
        let prompt = ctx.prompt(&s.text).map_err(|e| e.to_string())?;
        let first = |req: GenRequest| backend.generate(&req).unwrap().remove(0).unwrap();
        let g = first(GenRequest::greedy(&prompt, 256));
        let x = first(GenRequest::sampled(&prompt, 1.0, 1, 256));
        let score = |h: &str| backend.score(&ScoreRequest::qe(&s.text, h, SCORER_METRICX_QE)).unwrap();
        // delta on the rescaled scale: (5 - raw_s) - (5 - raw_g)
        brute.push((score(&g) - score(&x), s.id.clone()));
    }
    brute.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    let want: Vec<String> = brute.into_iter().take(k).map(|x| x.1).collect();
    ensure!(pre.selected == want, "prefilter top-k differs from brute force");

    let cfg = DistillConfig { n: 128, cap_per_pair: 50, ..DistillConfig::default() };
    let run = |dir: &Path| -> Result<Vec<distill::AuditRecord>, String> {
        let audit = distill::run_selection(&segs, &ctx, &backend, &cfg, 4).map_err(|e| e.to_string())?;
        jsonl::write(&dir.join("audit.jsonl"), &audit).map_err(|e| e.to_string())?;
        let records = distill::replay_audit(&audit).map_err(|e| e.to_string())?;
        distill::emit_dataset(records, cfg.cap_per_pair, 16, &dir.join("data")).map_err(|e| e.to_string())?;
        Ok(audit)
    };
    let d1 = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d2 = tempfile::tempdir().map_err(|e| e.to_string())?;
    let audit = run(d1.path())?;
    run(d2.path())?;

    for rec in &audit {
        ensure!(rec.candidates.len() == 128, "{}: {} candidates", rec.segment_id, rec.candidates.len());
        let seg = segs.iter().find(|s| s.id == rec.segment_id).unwrap();
        let prompt = ctx.prompt(&seg.text).map_err(|e| e.to_string())?;
        let samples = backend.generate(&GenRequest::sampled(prompt, 1.0, 128, 256)).map_err(|e| e.to_string())?;
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in samples.iter().enumerate() {
            if let Ok(t) = s {
                let raw = backend.score(&ScoreRequest::qe(&seg.text, t, SCORER_METRICX_QE)).map_err(|e| e.to_string())?;
                if best.is_none_or(|(_, b)| raw < b) {
                    best = Some((i, raw));
                }
            }
        }
        ensure!(rec.selected == best.map(|b| b.0), "{}: selected {:?}, brute {:?}", rec.segment_id, rec.selected, best);
    }

    let files = |root: &Path| -> BTreeMap<String, Vec<u8>> {
        let mut out = BTreeMap::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(p) = stack.pop() {
            for e in std::fs::read_dir(&p).unwrap() {
                let e = e.unwrap().path();
                if e.is_dir() {
                    stack.push(e);
                } else {
                    out.insert(e.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&e).unwrap());
                }
            }
        }
        out
    };
    let (a, b) = (files(d1.path()), files(d2.path()));
    ensure!(a.len() > 2, "expected audit plus shards, found {:?}", a.keys().collect::<Vec<_>>());
    ensure!(a == b, "reruns differ");
    ensure!(start.elapsed() < Duration::from_secs(30), "took {:?}", start.elapsed());
    Ok(())
}

fn c6_prompt() -> Check {
    let registry = Registry::builtin();
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    for (tgt, text) in [
        ("de-DE", "The weather is nice today."),
        ("ja-JP", "Where is the station?"),
        ("sw-KE", "First line.\nSecond line with {braces}."),
    ] {
        let req = registry.request("en-US", tgt, text).map_err(|e| e.to_string())?;
        let got = render_prompt(&req).map_err(|e| e.to_string())?;
        let want = std::fs::read(golden.join(format!("en-US_{tgt}.txt"))).map_err(|e| e.to_string())?;
        ensure!(got.as_bytes() == want.as_slice(), "en-US -> {tgt} differs from golden file");
        ensure!(got.contains(":\n\n\n"), "missing triple newline separator");
    }
    Ok(())
}

fn doc(id: &str, domain: Domain, sizes: &[usize]) -> EvalDocument {
    EvalDocument {
        doc_id: id.into(),
        domain,
        paragraphs: sizes
            .iter()
            .enumerate()
            .map(|(p, &n)| (0..n).map(|s| format!("P{p} S{s}.")).collect())
            .collect(),
    }
}

fn c7_chunking() -> Check {
    // (document, expected chunks as lists of paragraph indices, expected skip count)
    let cases: Vec<(EvalDocument, Vec<Vec<usize>>, usize)> = vec![
        (doc("news-a", Domain::News, &[3, 4, 5, 2]), vec![vec![0, 1, 2]], 0),
        (doc("news-b", Domain::News, &[12, 1]), vec![vec![0]], 0),
        (doc("social-a", Domain::Social, &[2, 11]), vec![vec![0]], 0),
        (doc("news-c", Domain::News, &[13, 2]), vec![], 1),
        (doc("lit-a", Domain::Literary, &[5, 5, 5, 5]), vec![vec![0, 1], vec![2, 3]], 0),
        (doc("lit-b", Domain::Literary, &[12, 1, 11, 6, 6]), vec![vec![0], vec![1, 2], vec![3, 4]], 0),
        (doc("lit-c", Domain::Literary, &[3, 20, 4, 9]), vec![vec![0], vec![2], vec![3]], 1),
        (doc("lit-d", Domain::Literary, &[1]), vec![vec![0]], 0),
    ];
    for (d, want, skips) in &cases {
        let c = chunk_document(d).map_err(|e| e.to_string())?;
        let got: Vec<Vec<usize>> = c
            .chunks
            .iter()
            .map(|ch| (ch.first_paragraph..ch.first_paragraph + ch.paragraphs.len()).collect())
            .collect();
        ensure!(&got == want, "{}: chunks {got:?}, expected {want:?}", d.doc_id);
        ensure!(c.skips.len() == *skips, "{}: {} skips, expected {skips}", d.doc_id, c.skips.len());
        for ch in &c.chunks {
            ensure!(ch.sentence_count <= MAX_CHUNK_SENTENCES, "{} exceeds the sentence cap", ch.id());
            let expect: Vec<Vec<String>> = d.paragraphs[ch.first_paragraph..ch.first_paragraph + ch.paragraphs.len()].to_vec();
            ensure!(ch.paragraphs == expect, "{}: paragraphs not copied verbatim", ch.id());
        }
    }
    Ok(())
}

fn c8_mixture() -> Check {
    let spec = MixtureSpec {
        entries: vec![
            MixtureEntry { name: "instruction".into(), fraction: 0.30, shards: vec![] },
            MixtureEntry { name: "distill-sentence".into(), fraction: 0.45, shards: vec![] },
            MixtureEntry { name: "distill-blob".into(), fraction: 0.25, shards: vec![] },
        ],
        measure: Measure::ModelTokens,
        seed: 8,
        tolerance: 0.01,
    };
    let mut r = rng(88);
    let sources: Vec<Vec<SourceExample>> = [(2000, 10, 120), (3000, 5, 60), (300, 100, 512)]
        .iter()
        .enumerate()
        .map(|(s, &(n, lo, hi))| {
            (0..n)
                .map(|i| {
                    let tokens = r.gen_range(lo..=hi);
                    SourceExample {
                        record: serde_json::json!({"id": format!("{s}-{i}"), "token_count": tokens}),
                        tokens,
                    }
                })
                .collect()
        })
        .collect();
    let total = 150_000;
    let a = mixture::compose(&spec, &sources, total).map_err(|e| e.to_string())?;
    let b = mixture::compose(&spec, &sources, total).map_err(|e| e.to_string())?;
    ensure!(a.report.total_tokens >= 100_000, "only {} tokens", a.report.total_tokens);
    ensure!(a.report.max_deviation() <= 0.01, "deviation {}", a.report.max_deviation());
    let stream_sum: usize = a.stream.iter().map(|x| x.token_count).sum();
    let report_sum: usize = a.report.sources.iter().map(|s| s.tokens).sum();
    ensure!(stream_sum == a.report.total_tokens && report_sum == stream_sum, "token totals not conserved");
    let audited = mixture::audit(&spec, &a.stream, &a.report, &WhitespacePunctTokenizer).map_err(|e| e.to_string())?;
    ensure!(audited == a.report, "audit disagrees with report");
    let bytes = |o: &mixture::MixOutput| {
        let mut v = Vec::new();
        jsonl::to_writer(&mut v, &o.stream).unwrap();
        v
    };
    ensure!(bytes(&a) == bytes(&b), "same seed gave different streams");
    Ok(())
}

fn c9_mqm_table() -> Check {
    let manifest = EvalManifest {
        systems: vec!["A".into(), "B".into(), "C".into()],
        chunks: vec![
            ManifestChunk { chunk_id: "doc1#0".into(), lang_pair: "en->de".into(), segments: 3 },
            ManifestChunk { chunk_id: "doc2#0".into(), lang_pair: "en->de".into(), segments: 1 },
            ManifestChunk { chunk_id: "doc3#0".into(), lang_pair: "en->ja".into(), segments: 2 },
        ],
    };
    let ann = |chunk: &str, sys: &str, seg: usize, spans: Vec<SpanAnnotation>| AnnotationRecord {
        chunk_id: chunk.into(),
        system: sys.into(),
        segment_index: seg,
        spans,
    };
    let records = vec![
        // en->de, 4 segments. A: major + minor = 6 -> 1.5
        ann("doc1#0", "A", 0, vec![span(0, 4, Severity::Major, "accuracy/mistranslation")]),
        ann("doc2#0", "A", 0, vec![span(2, 5, Severity::Minor, "fluency/grammar")]),
        // B: punctuation 0.1 -> 0.025
        ann("doc1#0", "B", 2, vec![span(0, 1, Severity::Minor, "fluency/punctuation")]),
        // C: non-translation (25) plus a major that it absorbs -> 6.25
        ann(
            "doc1#0",
            "C",
            1,
            vec![
                span(0, 9, Severity::NonTranslation, "non-translation"),
                span(1, 2, Severity::Major, "accuracy/addition"),
            ],
        ),
        // en->ja, 2 segments. A: 2 minors = 2 -> 1.0; B: major 5 -> 2.5; C clean -> 0
        ann("doc3#0", "A", 0, vec![span(0, 1, Severity::Minor, "style"), span(3, 4, Severity::Minor, "style")]),
        ann("doc3#0", "B", 1, vec![span(0, 3, Severity::Major, "accuracy/omission")]),
        // excluded: unknown chunk, unknown system, index out of range
        ann("doc9#0", "A", 0, vec![]),
        ann("doc1#0", "Z", 0, vec![]),
        ann("doc2#0", "C", 4, vec![]),
    ];
    let report = aggregate(&records, &manifest, &MqmWeightTable::default());
    let expect: [(&str, [f64; 3], &str); 2] = [("en->ja", [1.0, 2.5, 0.0], "C"), ("en->de", [1.5, 0.025, 6.25], "B")];
    ensure!(report.rows.len() == 2, "{} rows", report.rows.len());
    for (row, (pair, scores, best)) in report.rows.iter().zip(expect) {
        ensure!(row.lang_pair == pair, "row order: got {}, expected {pair}", row.lang_pair);
        for (g, w) in row.scores.iter().zip(scores) {
            ensure!((g - w).abs() <= 1e-12, "{pair}: {:?} vs {scores:?}", row.scores);
        }
        ensure!(row.best == vec![best.to_string()], "{pair}: best {:?}", row.best);
    }
    ensure!(report.exclusions.len() == 3, "{} exclusions", report.exclusions.len());

    let marks = mark_row_minimum(&[2.252, 3.177, 2.158]);
    ensure!(marks == vec![false, false, true], "marking {marks:?}");
    let text = report.render_text();
    ensure!(text.contains("0.025*") && text.contains("0.000*"), "rendered table lacks best markers:\n{text}");
    Ok(())
}
