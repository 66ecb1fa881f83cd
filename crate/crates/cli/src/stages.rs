use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mtdistill_core::backend::{serve, Backend, HttpBackend, MockBackend};
use mtdistill_core::corpus::{
    self, bucket_by_length, default_boundaries, derive_seed, validate_boundaries, IngestMode, LangPair, LengthBucket,
    Quota, Segment, SourcePool,
};
use mtdistill_core::distill::{
    self, format_filter, AuditRecord, GenContext, JudgeHandle, QeHandle,
};
use mtdistill_core::evalprep::{self, AnnotationRecord, EvalDocument, EvalManifest, ManifestChunk};
use mtdistill_core::jsonl;
use mtdistill_core::mixture::{self, MixtureSpec};
use mtdistill_core::prompting::Registry;
use mtdistill_core::rewards::{compute_advantages, RewardInput};
use mtdistill_core::{Error, WhitespacePunctTokenizer};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{self, BackendKind, CorpusSection, Loaded};
use crate::{Cli, CliError, Command};

type Result<T> = std::result::Result<T, CliError>;

struct Ctx {
    loaded: Loaded,
    out: PathBuf,
    jobs: usize,
    seed: u64,
    dry_run: bool,
}

#[derive(Serialize)]
struct Plan {
    stage: &'static str,
    reads: Vec<PathBuf>,
    writes: Vec<PathBuf>,
    params: Value,
}

impl Ctx {
    fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.out.join(rel)
    }

    /// Prints the plan on `--dry-run` and reports whether to stop there.
    fn plan(&self, plan: Plan) -> Result<bool> {
        if !self.dry_run {
            log::info!("{}: writing {:?}", plan.stage, plan.writes);
            return Ok(false);
        }
        let missing: Vec<&PathBuf> = plan.reads.iter().filter(|p| !p.exists()).collect();
        let text = serde_json::to_string_pretty(&json!({"plan": plan, "missing_inputs": missing}))
            .map_err(|e| CliError::Stage(e.to_string()))?;
        println!("{text}");
        Ok(true)
    }

    fn corpus(&self) -> Result<&CorpusSection> {
        self.loaded.require(&self.loaded.config.corpus, "corpus")
    }

    fn pairs(&self) -> Result<Vec<LangPair>> {
        let c = self.corpus()?;
        Ok(c.target_langs
            .iter()
            .map(|t| LangPair::new(c.source_lang.clone(), t.clone()))
            .collect())
    }

    fn registry(&self) -> Result<Registry> {
        match &self.loaded.config.prompting.languages {
            Some(p) => Ok(Registry::load(&self.loaded.resolve(p))?),
            None => Ok(Registry::builtin()),
        }
    }

    fn backend(&self) -> Result<Arc<dyn Backend>> {
        let b = &self.loaded.config.backend;
        Ok(match b.kind {
            BackendKind::Mock => Arc::new(MockBackend::new(b.mock_seed.unwrap_or(self.seed))),
            BackendKind::Http => Arc::new(HttpBackend::new(b.http.clone().with_env()?)),
        })
    }
}

fn mkparent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn write_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    mkparent(path)?;
    Ok(jsonl::write(path, items)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    mkparent(path)?;
    Ok(jsonl::write_json(path, value)?)
}

fn config_err(key: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        key: Some(key.into()),
        message: message.into(),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let loaded = config::load(cli.global.config.as_deref())?;
    let cfg = &loaded.config;
    let jobs = cli
        .global
        .jobs
        .or(cfg.jobs)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from));
    if jobs == 0 {
        return Err(config_err("jobs", "jobs must be >= 1"));
    }
    let ctx = Ctx {
        out: cli.global.out.clone().or_else(|| cfg.out.as_ref().map(|p| loaded.resolve(p))).unwrap_or_else(|| "out".into()),
        seed: cli.global.seed.unwrap_or(cfg.seed),
        jobs,
        dry_run: cli.global.dry_run,
        loaded,
    };
    match cli.command {
        Command::Ingest { inputs, lang, mode, blob_cap } => ingest(&ctx, inputs, lang, mode, blob_cap),
        Command::Bucket { boundaries } => bucket(&ctx, boundaries),
        Command::Sample { quota, target_size } => sample(&ctx, quota, target_size),
        Command::Prefilter { k } => prefilter(&ctx, k),
        Command::Distill { n, temperature } => distill_stage(&ctx, n, temperature),
        Command::Filter { judge } => filter(&ctx, judge),
        Command::Emit { cap, shard_size } => emit(&ctx, cap, shard_size),
        Command::Mix { total_tokens } => mix(&ctx, total_tokens),
        Command::Rewards { input, no_normalize } => rewards(&ctx, &input, no_normalize),
        Command::Evalprep { documents, lang_pair, systems, raters } => evalprep(&ctx, &documents, lang_pair, systems, raters),
        Command::Report { annotations, manifests } => report(&ctx, &annotations, &manifests),
        Command::MockServe { addr, workers } => mock_serve(&ctx, &addr, workers),
    }
}

#[derive(Serialize)]
struct RecordError {
    path: PathBuf,
    line: usize,
    message: String,
}

fn ingest(ctx: &Ctx, inputs: Vec<PathBuf>, lang: Option<String>, mode: Option<String>, blob_cap: Option<usize>) -> Result<()> {
    let corpus = ctx.loaded.config.corpus.as_ref();
    let inputs: Vec<PathBuf> = if inputs.is_empty() {
        corpus.map(|c| c.inputs.iter().map(|p| ctx.loaded.resolve(p)).collect()).unwrap_or_default()
    } else {
        inputs
    };
    if inputs.is_empty() {
        return Err(config_err("corpus.inputs", "no input files given"));
    }
    let lang = lang
        .or_else(|| corpus.map(|c| c.source_lang.clone()))
        .ok_or_else(|| config_err("corpus.source_lang", "source language not set"))?;
    let mode: IngestMode = match mode {
        Some(m) => m.parse()?,
        None => corpus.map_or(IngestMode::Sentence, |c| c.mode),
    };
    let cap = blob_cap.or(corpus.and_then(|c| c.blob_cap)).unwrap_or(corpus::BLOB_TOKEN_CAP);
    let out = ctx.path("segments.jsonl");
    let report = ctx.path("ingest-report.json");
    if ctx.plan(Plan {
        stage: "ingest",
        reads: inputs.clone(),
        writes: vec![out.clone(), report.clone()],
        params: json!({"lang": lang, "mode": mode, "blob_cap": cap}),
    })? {
        return Ok(());
    }

    let tok = WhitespacePunctTokenizer;
    let mut segments: Vec<Segment> = Vec::new();
    let mut errors = Vec::new();
    for path in &inputs {
        for item in corpus::ingest(path, &lang, mode, &tok)?.with_blob_cap(cap) {
            match item {
                Ok(mut seg) => {
                    // ids restart per file; keep them unique across inputs
                    seg.id = format!("{lang}-{:07}", segments.len());
                    segments.push(seg);
                }
                Err(Error::Record { path, line, message }) => {
                    log::warn!("{}:{line}: {message}", path.display());
                    errors.push(RecordError { path, line, message });
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    write_lines(&out, &segments)?;
    write_json(&report, &json!({"segments": segments.len(), "skipped": errors}))?;
    println!("ingested {} segments ({} lines skipped)", segments.len(), errors.len());
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct BucketFile {
    boundaries: Vec<usize>,
    buckets: Vec<LengthBucket>,
}

fn parse_boundaries(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| config_err("corpus.boundaries", format!("bad boundary `{p}`"))))
        .collect()
}

fn bucket(ctx: &Ctx, boundaries: Option<String>) -> Result<()> {
    let boundaries = match boundaries {
        Some(s) => parse_boundaries(&s)?,
        None => ctx
            .loaded
            .config
            .corpus
            .as_ref()
            .and_then(|c| c.boundaries.clone())
            .unwrap_or_else(default_boundaries),
    };
    validate_boundaries(&boundaries).map_err(|e| config_err("corpus.boundaries", e.to_string()))?;
    let input = ctx.path("segments.jsonl");
    let out = ctx.path("buckets.json");
    if ctx.plan(Plan {
        stage: "bucket",
        reads: vec![input.clone()],
        writes: vec![out.clone()],
        params: json!({"boundaries": boundaries}),
    })? {
        return Ok(());
    }
    let segments: Vec<Segment> = jsonl::read(&input)?;
    let buckets = bucket_by_length(&segments, &boundaries)?;
    for b in &buckets {
        let upper = b.upper.map_or("inf".to_string(), |u| u.to_string());
        println!("[{}, {upper}): {}", b.lower, b.members.len());
    }
    write_json(&out, &BucketFile { boundaries, buckets })
}

fn sample(ctx: &Ctx, quota: Option<String>, target_size: Option<usize>) -> Result<()> {
    let corpus = ctx.corpus()?;
    let quota_text = quota.unwrap_or_else(|| corpus.quota.clone());
    let quota: Quota = quota_text.parse().map_err(|e: Error| config_err("corpus.quota", e.to_string()))?;
    let target_size = target_size.unwrap_or(corpus.target_size);
    let pairs = ctx.pairs()?;
    let reads = vec![ctx.path("segments.jsonl"), ctx.path("buckets.json")];
    let writes = pairs
        .iter()
        .flat_map(|p| [ctx.path(format!("pools/{}.jsonl", p.slug())), ctx.path(format!("pools/{}.meta.json", p.slug()))])
        .collect();
    if ctx.plan(Plan {
        stage: "sample",
        reads: reads.clone(),
        writes,
        params: json!({"quota": quota_text, "target_size": target_size, "seed": ctx.seed}),
    })? {
        return Ok(());
    }
    let segments: Vec<Segment> = jsonl::read(&reads[0])?;
    let bf: BucketFile = jsonl::read_json(&reads[1])?;
    for pair in pairs {
        let seed = derive_seed(ctx.seed, &pair.slug());
        let sampled = corpus::sample_pool(&bf.buckets, &segments, &quota, seed, target_size, pair.clone())?;
        let meta = sampled.metadata(&bf.boundaries, &WhitespacePunctTokenizer);
        for s in &sampled.shortfalls {
            log::warn!("{pair}: bucket {} short by {}", s.bucket, s.missing);
        }
        write_lines(&ctx.path(format!("pools/{}.jsonl", pair.slug())), &sampled.pool.segments)?;
        write_json(&ctx.path(format!("pools/{}.meta.json", pair.slug())), &meta)?;
        println!("{pair}: {} segments", sampled.pool.segments.len());
    }
    Ok(())
}

fn load_pool(ctx: &Ctx, pair: &LangPair) -> Result<SourcePool> {
    let segments: Vec<Segment> = jsonl::read(&ctx.path(format!("pools/{}.jsonl", pair.slug())))?;
    let meta: corpus::PoolMetadata = jsonl::read_json(&ctx.path(format!("pools/{}.meta.json", pair.slug())))?;
    Ok(SourcePool {
        lang_pair: pair.clone(),
        segments,
        seed: meta.seed,
        target_size: meta.target_size,
    })
}

fn prefilter(ctx: &Ctx, k: Option<usize>) -> Result<()> {
    let dc = &ctx.loaded.config.distill;
    let k = k.unwrap_or_else(|| dc.effective_k());
    let pairs = ctx.pairs()?;
    if ctx.plan(Plan {
        stage: "prefilter",
        reads: pairs.iter().map(|p| ctx.path(format!("pools/{}.jsonl", p.slug()))).collect(),
        writes: pairs
            .iter()
            .flat_map(|p| [ctx.path(format!("prefilter/{}.jsonl", p.slug())), ctx.path(format!("prefilter/{}.selected.json", p.slug()))])
            .collect(),
        params: json!({"k": k, "scorer_id": dc.scorer_id, "temperature": dc.temperature, "jobs": ctx.jobs}),
    })? {
        return Ok(());
    }
    let registry = ctx.registry()?;
    let backend = ctx.backend()?;
    let qe = QeHandle {
        backend: &*backend,
        scorer_id: &dc.scorer_id,
        transform: dc.transform,
    };
    for pair in &pairs {
        let pool = load_pool(ctx, pair)?;
        let gen = GenContext {
            registry: &registry,
            lang_pair: pair,
            temperature: dc.temperature,
            max_tokens: dc.max_tokens,
        };
        let outcome = distill::prefilter(&pool, &gen, &qe, k, ctx.jobs)?;
        let failed = outcome.records.iter().filter(|r| r.error.is_some()).count();
        write_lines(&ctx.path(format!("prefilter/{}.jsonl", pair.slug())), &outcome.records)?;
        write_json(&ctx.path(format!("prefilter/{}.selected.json", pair.slug())), &outcome.selected)?;
        println!("{pair}: kept {} of {} segments ({failed} failed)", outcome.selected.len(), outcome.records.len());
    }
    Ok(())
}

fn distill_stage(ctx: &Ctx, n: Option<usize>, temperature: Option<f64>) -> Result<()> {
    let mut dc = ctx.loaded.config.distill.clone();
    if let Some(n) = n {
        dc.n = n;
    }
    if let Some(t) = temperature {
        dc.temperature = t;
    }
    if let Some(c) = &ctx.loaded.config.corpus {
        dc.mode = c.mode;
    }
    let pairs = ctx.pairs()?;
    if ctx.plan(Plan {
        stage: "distill",
        reads: pairs
            .iter()
            .flat_map(|p| [ctx.path(format!("pools/{}.jsonl", p.slug())), ctx.path(format!("prefilter/{}.selected.json", p.slug()))])
            .collect(),
        writes: pairs.iter().map(|p| ctx.path(format!("audit/{}.jsonl", p.slug()))).collect(),
        params: json!({"n": dc.n, "temperature": dc.temperature, "scorer_id": dc.scorer_id, "jobs": ctx.jobs}),
    })? {
        return Ok(());
    }
    let registry = ctx.registry()?;
    let backend = ctx.backend()?;
    for pair in &pairs {
        let pool = load_pool(ctx, pair)?;
        let selected_path = ctx.path(format!("prefilter/{}.selected.json", pair.slug()));
        let segments: Vec<Segment> = if selected_path.exists() {
            let keep: Vec<String> = jsonl::read_json(&selected_path)?;
            let keep: std::collections::HashSet<String> = keep.into_iter().collect();
            pool.segments.into_iter().filter(|s| keep.contains(&s.id)).collect()
        } else {
            log::warn!("{pair}: no prefilter output, distilling the whole pool");
            pool.segments
        };
        let gen = GenContext {
            registry: &registry,
            lang_pair: pair,
            temperature: dc.temperature,
            max_tokens: dc.max_tokens,
        };
        let audit = distill::run_selection(&segments, &gen, &*backend, &dc, ctx.jobs)?;
        let accepted = audit.iter().filter(|a| a.dataset_record().is_some()).count();
        write_lines(&ctx.path(format!("audit/{}.jsonl", pair.slug())), &audit)?;
        println!("{pair}: {accepted} of {} segments accepted", audit.len());
    }
    Ok(())
}

fn filter(ctx: &Ctx, judge: Option<String>) -> Result<()> {
    let dc = &ctx.loaded.config.distill;
    let judge_id = judge.or_else(|| dc.judge_scorer_id.clone());
    let pairs = ctx.pairs()?;
    if ctx.plan(Plan {
        stage: "filter",
        reads: pairs.iter().map(|p| ctx.path(format!("audit/{}.jsonl", p.slug()))).collect(),
        writes: pairs.iter().map(|p| ctx.path(format!("filtered/{}.jsonl", p.slug()))).collect(),
        params: json!({"judge": judge_id, "filter": dc.filter}),
    })? {
        return Ok(());
    }
    let registry = ctx.registry()?;
    let backend = ctx.backend()?;
    let judge = judge_id.as_deref().map(|id| JudgeHandle {
        backend: &*backend,
        scorer_id: id,
    });
    for pair in &pairs {
        let mut audit: Vec<AuditRecord> = jsonl::read(&ctx.path(format!("audit/{}.jsonl", pair.slug())))?;
        let gen = GenContext {
            registry: &registry,
            lang_pair: pair,
            temperature: dc.temperature,
            max_tokens: dc.max_tokens,
        };
        let mut rejected = 0;
        for rec in &mut audit {
            let Some(i) = rec.selected else { continue };
            let text = rec.candidates.get(i).and_then(|c| c.text.clone()).unwrap_or_default();
            let prompt = gen.prompt(&rec.source_text)?;
            let outcome = format_filter(&text, &rec.source_text, &prompt, judge.as_ref(), &dc.filter);
            for w in &outcome.warnings {
                log::warn!("{}: {w}", rec.segment_id);
            }
            if !outcome.verdict.is_pass() {
                rejected += 1;
            }
            rec.verdict = Some(outcome.verdict);
        }
        write_lines(&ctx.path(format!("filtered/{}.jsonl", pair.slug())), &audit)?;
        println!("{pair}: {rejected} of {} rejected", audit.len());
    }
    Ok(())
}

fn emit(ctx: &Ctx, cap: Option<usize>, shard_size: Option<usize>) -> Result<()> {
    let dc = &ctx.loaded.config.distill;
    let cap = cap.unwrap_or(dc.cap_per_pair);
    let shard_size = shard_size.unwrap_or(dc.shard_size);
    let pairs = ctx.pairs()?;
    let source = |p: &LangPair| {
        let f = ctx.path(format!("filtered/{}.jsonl", p.slug()));
        if f.exists() {
            f
        } else {
            ctx.path(format!("audit/{}.jsonl", p.slug()))
        }
    };
    let data = ctx.path("data");
    if ctx.plan(Plan {
        stage: "emit",
        reads: pairs.iter().map(source).collect(),
        writes: vec![data.clone()],
        params: json!({"cap_per_pair": cap, "shard_size": shard_size}),
    })? {
        return Ok(());
    }
    let mut records = Vec::new();
    for pair in &pairs {
        let audit: Vec<AuditRecord> = jsonl::read(&source(pair))?;
        records.extend(distill::replay_audit(&audit)?);
    }
    std::fs::create_dir_all(&data).map_err(|e| Error::io(&data, e))?;
    let report = distill::emit_dataset(records, cap, shard_size, &data)?;
    for p in &report.pairs {
        if p.shortfall > 0 {
            log::warn!("{}: {} examples short of the cap", p.lang_pair, p.shortfall);
        }
        println!("{}: wrote {} examples in {} shards", p.lang_pair, p.written, p.shards.len());
    }
    write_json(&ctx.path("emit-report.json"), &report)
}

fn mix(ctx: &Ctx, total_tokens: Option<usize>) -> Result<()> {
    let section = ctx.loaded.require(&ctx.loaded.config.mixture, "mixture")?;
    let total = total_tokens.unwrap_or(section.total_tokens);
    let spec = MixtureSpec {
        entries: section.entries.clone(),
        measure: Default::default(),
        seed: ctx.seed,
        tolerance: section.tolerance.unwrap_or(mixture::DEFAULT_TOLERANCE),
    };
    spec.validate().map_err(|e| config_err("mixture.entries", e.to_string()))?;
    let stream_path = ctx.path("mix/stream.jsonl");
    let report_path = ctx.path("mix/report.json");
    if ctx.plan(Plan {
        stage: "mix",
        reads: spec.entries.iter().flat_map(|e| e.shards.iter().map(|s| ctx.loaded.resolve(Path::new(s)))).collect(),
        writes: vec![stream_path.clone(), report_path.clone()],
        params: json!({"total_tokens": total, "seed": ctx.seed, "entries": spec.entries}),
    })? {
        return Ok(());
    }
    let tok = WhitespacePunctTokenizer;
    let sources = mixture::load_sources(&spec, &ctx.loaded.base, &tok)?;
    let out = mixture::compose(&spec, &sources, total)?;
    for w in &out.warnings {
        log::warn!("{w}");
    }
    mixture::audit(&spec, &out.stream, &out.report, &tok)?;
    write_lines(&stream_path, &out.stream)?;
    write_json(&report_path, &out.report)?;
    for s in &out.report.sources {
        println!("{}: {} tokens, realized {:.4} (target {:.4})", s.name, s.tokens, s.fraction, s.target_fraction);
    }
    Ok(())
}

fn rewards(ctx: &Ctx, input: &Path, no_normalize: bool) -> Result<()> {
    let mut rc = ctx.loaded.config.rewards.clone();
    if no_normalize {
        rc.normalize = false;
    }
    let out = ctx.path("rewards/advantages.jsonl");
    if ctx.plan(Plan {
        stage: "rewards",
        reads: vec![input.to_path_buf()],
        writes: vec![out.clone()],
        params: serde_json::to_value(&rc).map_err(|e| CliError::Stage(e.to_string()))?,
    })? {
        return Ok(());
    }
    let inputs: Vec<RewardInput> = jsonl::read(input)?;
    let outputs = compute_advantages(&inputs, &rc)?;
    write_lines(&out, &outputs)?;
    println!("wrote advantages for {} sequences", outputs.len());
    Ok(())
}

fn evalprep(ctx: &Ctx, documents: &Path, lang_pair: Option<String>, systems: Vec<String>, raters: Vec<String>) -> Result<()> {
    let section = ctx.loaded.config.evalprep.as_ref();
    let lang_pair = lang_pair
        .or_else(|| section.map(|s| s.lang_pair.clone()))
        .ok_or_else(|| config_err("evalprep.lang_pair", "language pair not set"))?;
    let pick = |flag: Vec<String>, from: fn(&config::EvalprepSection) -> &Vec<String>, key: &str| -> Result<Vec<String>> {
        let v = if flag.is_empty() { section.map(|s| from(s).clone()).unwrap_or_default() } else { flag };
        if v.is_empty() {
            return Err(config_err(key, format!("{key} is empty")));
        }
        Ok(v)
    };
    let systems = pick(systems, |s| &s.systems, "evalprep.systems")?;
    let raters = pick(raters, |s| &s.raters, "evalprep.raters")?;
    let dir = ctx.path(format!("evalprep/{}", lang_pair.replace("->", "_").replace(['/', ' '], "_")));
    if ctx.plan(Plan {
        stage: "evalprep",
        reads: vec![documents.to_path_buf()],
        writes: ["chunks.jsonl", "skips.jsonl", "assignment.json", "manifest.json"].iter().map(|f| dir.join(f)).collect(),
        params: json!({"lang_pair": lang_pair, "systems": systems, "raters": raters, "seed": ctx.seed}),
    })? {
        return Ok(());
    }
    let docs: Vec<EvalDocument> = jsonl::read(documents)?;
    let mut chunks = Vec::new();
    let mut skips = Vec::new();
    for d in &docs {
        let c = evalprep::chunk_document(d)?;
        chunks.extend(c.chunks);
        skips.extend(c.skips);
    }
    let assignment = evalprep::assign_raters(&chunks, &systems, &raters, ctx.seed)?;
    let manifest = EvalManifest {
        systems: systems.clone(),
        chunks: chunks
            .iter()
            .map(|c| ManifestChunk {
                chunk_id: c.id(),
                lang_pair: lang_pair.clone(),
                segments: c.sentence_count,
            })
            .collect(),
    };
    write_lines(&dir.join("chunks.jsonl"), &chunks)?;
    write_lines(&dir.join("skips.jsonl"), &skips)?;
    write_json(&dir.join("assignment.json"), &assignment)?;
    write_json(&dir.join("manifest.json"), &manifest)?;
    println!("{} chunks from {} documents, {} skipped", chunks.len(), docs.len(), skips.len());
    for (rater, n) in assignment.loads() {
        println!("  {rater}: {n} chunks");
    }
    Ok(())
}

fn report(ctx: &Ctx, annotations: &Path, manifests: &[PathBuf]) -> Result<()> {
    let txt = ctx.path("report/mqm.txt");
    let js = ctx.path("report/mqm.json");
    let mut reads = vec![annotations.to_path_buf()];
    reads.extend(manifests.iter().cloned());
    if ctx.plan(Plan {
        stage: "report",
        reads,
        writes: vec![txt.clone(), js.clone()],
        params: json!({}),
    })? {
        return Ok(());
    }
    let mut merged = EvalManifest { systems: Vec::new(), chunks: Vec::new() };
    let mut seen = BTreeMap::new();
    for m in manifests {
        let part: EvalManifest = jsonl::read_json(m)?;
        for s in part.systems {
            if !merged.systems.contains(&s) {
                merged.systems.push(s);
            }
        }
        for c in part.chunks {
            if seen.insert(c.chunk_id.clone(), ()).is_some() {
                return Err(CliError::Stage(format!("chunk {} appears in more than one manifest", c.chunk_id)));
            }
            merged.chunks.push(c);
        }
    }
    let ann: Vec<AnnotationRecord> = jsonl::read(annotations)?;
    let rep = evalprep::aggregate(&ann, &merged, &ctx.loaded.config.metrics.mqm);
    let text = rep.render_text();
    print!("{text}");
    mkparent(&txt)?;
    std::fs::write(&txt, &text).map_err(|e| Error::io(&txt, e))?;
    write_json(&js, &rep)
}

fn mock_serve(ctx: &Ctx, addr: &str, workers: usize) -> Result<()> {
    if ctx.plan(Plan {
        stage: "mock-serve",
        reads: vec![],
        writes: vec![],
        params: json!({"addr": addr, "workers": workers, "seed": ctx.seed}),
    })? {
        return Ok(());
    }
    let seed = ctx.loaded.config.backend.mock_seed.unwrap_or(ctx.seed);
    let server = serve(Arc::new(MockBackend::new(seed)), addr, workers)?;
    println!("listening on {}", server.base_url());
    use std::io::Write;
    let _ = std::io::stdout().flush();
    server.join();
    Ok(())
}
