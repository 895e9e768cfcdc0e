use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use admelabel::annotator::{import_manual, Annotator, LabeledParagraph};
use admelabel::config::PipelineConfig;
use admelabel::corpus::{read_corpus, read_jsonl, write_jsonl};
use admelabel::encoder::{
    init_params, pretrain_mlm, train_subword_vocab, write_metrics_log, Checkpoint, Encoding, InitScheme,
    PretrainConfig,
};
use admelabel::eval::{evaluate_unseen, learning_curve as run_curve, run_cv, stratified_kfold, EvalReport, Example, Trainer};
use admelabel::introspect::{attention_drift, sample_per_class, AttentionView};
use admelabel::models::{trainer_for, BasicTrainer, EncoderTrainer, ModelArtifact, ModelKind};
use admelabel::rng::derive_seed;
use admelabel::spl::{
    extract_pk_section, fetch_label_index, parse_spl, segment_paragraphs, select_labels, FetchOptions,
    HttpIndexSource, IndexSource, LabelIndexEntry, LocalIndexSource, RawSegment, SplDocument,
};
use admelabel::{synth, Error, Topic};

use crate::support::{
    load_config, parse_layer_list, read_lines, revalidate, write_bytes, write_json, CmdResult, Failure, Meta,
};
use crate::{
    AblateArgs, AblationInit, AblationMode, AnnotateArgs, AttentionDiffArgs, EncoderInputs, EvaluateArgs,
    IngestArgs, LearningCurveArgs, PredictArgs, PretrainArgs, SynthArgs, TrainArgs,
};

/// One selected label in the ingest manifest. `line` is the 1-based line of
/// its segments in `store`, a path relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub set_id: String,
    pub application_number: Option<String>,
    pub version: u32,
    pub segments: usize,
    pub store: String,
    pub line: usize,
}

/// Segmented pharmacokinetics section of one label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredDocument {
    pub set_id: String,
    pub application_number: Option<String>,
    pub version: u32,
    pub segments: Vec<RawSegment>,
}

fn parse_file(path: &Path) -> CmdResult<SplDocument> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_spl(&bytes).map_err(|e| Failure::from(e).in_file(path))
}

fn documents_from_dir(dir: &Path) -> CmdResult<(Vec<LabelIndexEntry>, HashMap<String, SplDocument>)> {
    let listing = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = listing
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("xml")))
        .collect();
    files.sort();
    let mut entries = Vec::new();
    let mut docs = HashMap::new();
    for path in files {
        let doc = parse_file(&path)?;
        entries.push(LabelIndexEntry {
            set_id: doc.set_id.clone(),
            application_number: doc.application_number.clone(),
            version: doc.version,
            published: String::new(),
        });
        docs.insert(doc.set_id.clone(), doc);
    }
    Ok((entries, docs))
}

fn documents_from_index(
    source: &dyn IndexSource,
    opts: &FetchOptions,
) -> CmdResult<(Vec<LabelIndexEntry>, HashMap<String, SplDocument>)> {
    let entries = fetch_label_index(source, opts)?;
    let mut docs = HashMap::new();
    for e in &entries {
        if docs.contains_key(&e.set_id) {
            continue;
        }
        let bytes = source.fetch_document(&e.set_id)?;
        let doc = parse_spl(&bytes).map_err(|err| {
            let f = Failure::from(err);
            Failure::input(format!("document {}: {}", e.set_id, f.message()))
        })?;
        docs.insert(e.set_id.clone(), doc);
    }
    Ok((entries, docs))
}

pub fn ingest(a: IngestArgs) -> CmdResult {
    let cfg = load_config(&a.common)?;
    let meta = Meta::start("ingest", cfg.seed);
    let opts = FetchOptions {
        page_limit: a.page_limit.or(cfg.ingest.page_limit),
        page_size: cfg.ingest.page_size,
        retries: cfg.ingest.retries,
        max_parallel: cfg.ingest.max_parallel,
    };
    let (entries, docs) = if let Some(dir) = &a.input {
        documents_from_dir(dir)?
    } else if let Some(index) = &a.index {
        let source = LocalIndexSource::open(index, a.documents.clone())?;
        documents_from_index(&source, &opts)?
    } else if let Some(url) = &a.endpoint {
        let source = HttpIndexSource::new(
            url.clone(),
            cfg.ingest.document_url.clone(),
            Duration::from_secs(cfg.ingest.timeout_secs),
        );
        documents_from_index(&source, &opts)?
    } else {
        return Err(Failure::usage("one of --input, --index or --endpoint is required"));
    };

    let selected = select_labels(&entries, &docs);
    let store = a.store.clone().unwrap_or_else(|| {
        let stem = a.out.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        a.out.with_file_name(format!("{stem}.segments.jsonl"))
    });
    let store_name = relative_to(&store, a.out.parent());
    let mut stored = Vec::new();
    let mut manifest = Vec::new();
    for doc in &selected {
        let segments = segment_paragraphs(&extract_pk_section(doc));
        manifest.push(ManifestEntry {
            set_id: doc.set_id.clone(),
            application_number: doc.application_number.clone(),
            version: doc.version,
            segments: segments.len(),
            store: store_name.clone(),
            line: stored.len() + 1,
        });
        stored.push(StoredDocument {
            set_id: doc.set_id.clone(),
            application_number: doc.application_number.clone(),
            version: doc.version,
            segments,
        });
    }
    ensure_parent(&a.out)?;
    ensure_parent(&store)?;
    write_jsonl(&store, &stored)?;
    write_jsonl(&a.out, &manifest)?;
    eprintln!("{} index entries, {} labels selected", entries.len(), manifest.len());
    meta.finish(
        &a.out,
        &[&a.out, &store],
        serde_json::json!({ "index_entries": entries.len(), "selected": manifest.len() }),
    )
}

fn ensure_parent(path: &Path) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn relative_to(path: &Path, base: Option<&Path>) -> String {
    let base = base.filter(|b| !b.as_os_str().is_empty());
    match base.and_then(|b| path.strip_prefix(b).ok()) {
        Some(rel) => rel.display().to_string(),
        None if base.is_none() => path.display().to_string(),
        None => std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf()).display().to_string(),
    }
}

pub fn annotate(a: AnnotateArgs) -> CmdResult {
    let cfg = load_config(&a.common)?;
    let meta = Meta::start("annotate", cfg.seed);
    let annotator = Annotator::new(cfg.annotator.clone())?;
    let manifest: Vec<ManifestEntry> = read_jsonl(&a.manifest)?;
    let base = a.manifest.parent().unwrap_or(Path::new(""));
    let mut stores: HashMap<String, Vec<StoredDocument>> = HashMap::new();
    let mut out = Vec::new();
    for (i, entry) in manifest.iter().enumerate() {
        if !stores.contains_key(&entry.store) {
            let path = base.join(&entry.store);
            stores.insert(entry.store.clone(), read_jsonl(&path)?);
        }
        let docs = &stores[&entry.store];
        let doc = entry
            .line
            .checked_sub(1)
            .and_then(|l| docs.get(l))
            .filter(|d| d.set_id == entry.set_id)
            .ok_or_else(|| Error::Validation {
                line: Some(i + 1),
                message: format!(
                    "{}: {} line {} does not hold {}",
                    a.manifest.display(),
                    entry.store,
                    entry.line,
                    entry.set_id
                ),
            })?;
        out.extend(annotator.annotate_document(&doc.segments, &doc.set_id, doc.application_number.as_deref()));
    }
    ensure_parent(&a.out)?;
    write_jsonl(&a.out, &out)?;
    let mut counts = serde_json::Map::new();
    for t in Topic::ALL {
        counts.insert(t.to_string(), out.iter().filter(|p| p.topic == t).count().into());
    }
    eprintln!("{} paragraphs from {} labels", out.len(), manifest.len());
    meta.finish(&a.out, &[&a.out], serde_json::json!({ "paragraphs": out.len(), "per_class": counts }))
}

fn load_examples(path: &Path) -> CmdResult<Vec<Example>> {
    let corpus = read_corpus(path).map_err(|e| Failure::from(e).in_file(path))?;
    Ok(corpus.iter().map(Example::from).collect())
}

fn labels(data: &[Example]) -> Vec<Topic> {
    data.iter().map(|e| e.label).collect()
}

/// Apply the fine-tuning flags to the configuration.
fn apply_encoder_flags(cfg: &mut PipelineConfig, inputs: &EncoderInputs) -> CmdResult {
    let ft = &mut cfg.encoder.finetune;
    if let Some(e) = inputs.epochs {
        ft.epochs = e;
    }
    if let Some(lr) = inputs.learning_rate {
        ft.learning_rate = lr;
    }
    if let Some(b) = inputs.batch_size {
        ft.batch_size = b;
    }
    if inputs.epochs == Some(0) || inputs.batch_size == Some(0) {
        return Err(Failure::usage("--epochs and --batch-size must be positive"));
    }
    if inputs.learning_rate.is_some_and(|lr| !(lr > 0.0 && lr.is_finite())) {
        return Err(Failure::usage("--learning-rate must be positive"));
    }
    revalidate(cfg)
}

/// A checkpoint file or an encoder model artifact.
fn load_encoder_checkpoint(path: &Path) -> CmdResult<Checkpoint> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)).into());
    }
    match Checkpoint::load(path) {
        Ok(ck) => Ok(ck),
        Err(ck_err) => match ModelArtifact::load(path) {
            Ok(ModelArtifact::Encoder { checkpoint }) => Ok(*checkpoint),
            Ok(other) => Err(Failure::input(format!(
                "{}: expected an encoder, found a {} model",
                path.display(),
                other.kind_name()
            ))),
            Err(_) => Err(ck_err.into()),
        },
    }
}

/// Checkpoint and unlabeled texts for encoder trainers.
fn encoder_inputs(inputs: &EncoderInputs) -> CmdResult<(Option<Checkpoint>, Vec<String>)> {
    let pretrained = inputs.pretrained.as_deref().map(load_encoder_checkpoint).transpose()?;
    let unlabeled = match &inputs.unlabeled {
        Some(p) => read_lines(p)?,
        None => Vec::new(),
    };
    Ok((pretrained, unlabeled))
}

fn make_trainer(kind: ModelKind, cfg: &PipelineConfig, inputs: &EncoderInputs) -> CmdResult<Box<dyn Trainer>> {
    let (pretrained, unlabeled) = if kind == ModelKind::Encoder {
        encoder_inputs(inputs)?
    } else {
        (None, Vec::new())
    };
    Ok(trainer_for(kind, cfg, pretrained, unlabeled))
}

pub fn train(a: TrainArgs) -> CmdResult {
    let mut cfg = load_config(&a.common)?;
    apply_encoder_flags(&mut cfg, &a.encoder)?;
    let meta = Meta::start("train", cfg.seed);
    let data = load_examples(&a.corpus)?;
    if data.is_empty() {
        return Err(Failure::input(format!("{}: corpus is empty", a.corpus.display())));
    }
    let artifact = if a.model == ModelKind::Encoder {
        let (pretrained, unlabeled) = encoder_inputs(&a.encoder)?;
        let trainer = EncoderTrainer {
            settings: cfg.encoder.clone(),
            pretrained,
            unlabeled,
        };
        // Validation is fold 0 of the configured k-fold split when every class
        // is large enough; otherwise train on everything.
        let (train, val): (Vec<Example>, Vec<Example>) = match stratified_kfold(&labels(&data), cfg.eval.k, cfg.seed) {
            Ok(plan) => {
                let mut tr = Vec::new();
                let mut va = Vec::new();
                for (e, &f) in data.iter().zip(&plan.assignments) {
                    if f == 0 { va.push(e.clone()) } else { tr.push(e.clone()) }
                }
                (tr, va)
            }
            Err(_) => (data.clone(), Vec::new()),
        };
        ModelArtifact::Encoder {
            checkpoint: Box::new(trainer.fit_checkpoint(&train, &val, cfg.seed)?),
        }
    } else {
        BasicTrainer::new(a.model, &cfg).fit_artifact(&data, cfg.seed)?
    };
    ensure_parent(&a.out)?;
    artifact.save(&a.out)?;
    meta.finish(
        &a.out,
        &[&a.out],
        serde_json::json!({ "model": a.model, "examples": data.len(), "config": cfg.snapshot() }),
    )
}

#[derive(Serialize)]
struct Prediction<'a> {
    id: &'a str,
    text: &'a str,
    gold: Topic,
    predicted: Topic,
}

pub fn predict(a: PredictArgs) -> CmdResult {
    let cfg = load_config(&a.common)?;
    let meta = Meta::start("predict", cfg.seed);
    let model = ModelArtifact::load(&a.model_file)?;
    let corpus: Vec<LabeledParagraph> = read_corpus(&a.corpus).map_err(|e| Failure::from(e).in_file(&a.corpus))?;
    let texts: Vec<String> = corpus.iter().map(|p| p.text.clone()).collect();
    let preds = model.predict_texts(&texts)?;
    let rows: Vec<Prediction> = corpus
        .iter()
        .zip(&preds)
        .map(|(p, &predicted)| Prediction {
            id: &p.id,
            text: &p.text,
            gold: p.topic,
            predicted,
        })
        .collect();
    ensure_parent(&a.out)?;
    write_jsonl(&a.out, &rows)?;
    meta.finish(&a.out, &[&a.out], serde_json::json!({ "model": model.kind_name(), "paragraphs": rows.len() }))
}

fn override_k(cfg: &mut PipelineConfig, k: Option<usize>) -> CmdResult {
    if let Some(k) = k {
        cfg.eval.k = k;
    }
    revalidate(cfg)
}

fn cross_validate(trainer: &dyn Trainer, data: &[Example], cfg: &PipelineConfig) -> CmdResult<EvalReport> {
    let plan = stratified_kfold(&labels(data), cfg.eval.k, cfg.seed)?;
    run_cv(trainer, data, &plan, cfg.snapshot()).map_err(|e| {
        let done = e.completed.len();
        let mut f = Failure::from(Error::from(e));
        if done > 0 {
            f = Failure::from(Error::Fit(format!("{} ({done} runs completed)", f.message())));
        }
        f
    })
}

pub fn evaluate(a: EvaluateArgs) -> CmdResult {
    let mut cfg = load_config(&a.common)?;
    override_k(&mut cfg, a.k)?;
    apply_encoder_flags(&mut cfg, &a.encoder)?;
    let meta = Meta::start("evaluate", cfg.seed);
    let data = load_examples(&a.corpus)?;
    let unseen: Option<Vec<Example>> = a
        .unseen
        .as_deref()
        .map(|p| -> CmdResult<_> {
            let ps = import_manual(p).map_err(|e| Failure::from(e).in_file(p))?;
            Ok(ps.iter().map(Example::from).collect())
        })
        .transpose()?;
    let trainer = make_trainer(a.model, &cfg, &a.encoder)?;
    let mut report = cross_validate(trainer.as_ref(), &data, &cfg)?;
    if let Some(unseen) = &unseen {
        let plan = stratified_kfold(&labels(&data), cfg.eval.k, cfg.seed)?;
        report.unseen = Some(evaluate_unseen(trainer.as_ref(), &data, &plan, unseen)?);
    }
    write_json(&a.out, &report)?;
    println!(
        "{}: macro-F1 {:.4} ± {:.4} over {} folds",
        report.model, report.aggregate.f1.mean, report.aggregate.f1.std, report.k
    );
    if let Some(u) = &report.unseen {
        println!("unseen ({} paragraphs): macro-F1 {:.4}", u.size, u.metrics.f1);
    }
    meta.finish(&a.out, &[&a.out], serde_json::json!({ "f1_mean": report.aggregate.f1.mean }))
}

#[derive(Serialize)]
struct AblationRow {
    top_n: usize,
    report: EvalReport,
}

#[derive(Serialize)]
struct AblationReport {
    mode: AblationMode,
    init: AblationInit,
    num_layers: usize,
    config: serde_json::Value,
    rows: Vec<AblationRow>,
}

pub fn ablate(a: AblateArgs) -> CmdResult {
    let mut cfg = load_config(&a.common)?;
    override_k(&mut cfg, a.k)?;
    apply_encoder_flags(&mut cfg, &a.encoder)?;
    let meta = Meta::start("ablate", cfg.seed);
    let num_layers = cfg.encoder.architecture.num_layers;
    let top_ns = parse_layer_list(&a.top_n)?;
    if let Some(&n) = top_ns.iter().find(|&&n| n > num_layers) {
        return Err(Failure::usage(format!("--top-n {n} exceeds the {num_layers} encoder layers")));
    }
    let init = match (a.mode, a.init) {
        (_, Some(i)) => i,
        (AblationMode::Freeze, None) => AblationInit::Pretrained,
        (AblationMode::Reinit, None) => AblationInit::TruncatedNormal,
    };
    let scheme = match init {
        AblationInit::TruncatedNormal => Some(InitScheme::TruncatedNormal),
        AblationInit::Uniform => Some(InitScheme::Uniform),
        AblationInit::Pretrained => None,
    };
    match (a.mode, &scheme) {
        (AblationMode::Reinit, None) => {
            return Err(Failure::usage("--init pretrained is not a re-initialization scheme"));
        }
        (AblationMode::Reinit, Some(s)) => cfg.encoder.reinit_scheme = s.clone(),
        // Freezing a randomly initialized encoder: no pretraining.
        (AblationMode::Freeze, Some(s)) => {
            cfg.encoder.init = s.clone();
            cfg.encoder.pretrain = None;
        }
        (AblationMode::Freeze, None) => {}
    }
    let data = load_examples(&a.corpus)?;
    let (pretrained, unlabeled) = encoder_inputs(&a.encoder)?;
    if let Some(ck) = &pretrained {
        if ck.config.num_layers != num_layers {
            return Err(Failure::usage(format!(
                "pretrained checkpoint has {} layers, configuration has {num_layers}",
                ck.config.num_layers
            )));
        }
    }
    let pretrained = if a.mode == AblationMode::Freeze && scheme.is_some() { None } else { pretrained };
    let mut rows = Vec::new();
    for &n in &top_ns {
        let mut c = cfg.clone();
        match a.mode {
            AblationMode::Freeze => c.encoder.finetune.freeze_top_n = Some(n),
            AblationMode::Reinit => c.encoder.reinit_top_n = Some(n),
        }
        let trainer = EncoderTrainer {
            settings: c.encoder.clone(),
            pretrained: pretrained.clone(),
            unlabeled: unlabeled.clone(),
        };
        let report = cross_validate(&trainer, &data, &c)?;
        println!("top_n {n}: macro-F1 {:.4} ± {:.4}", report.aggregate.f1.mean, report.aggregate.f1.std);
        rows.push(AblationRow { top_n: n, report });
    }
    let report = AblationReport {
        mode: a.mode,
        init,
        num_layers,
        config: cfg.snapshot(),
        rows,
    };
    write_json(&a.out, &report)?;
    meta.finish(&a.out, &[&a.out], serde_json::json!({ "top_n": top_ns }))
}

#[derive(Serialize)]
struct DriftOutput {
    config: serde_json::Value,
    before: String,
    after: String,
    view: AttentionView,
}

pub fn attention_diff(a: AttentionDiffArgs) -> CmdResult {
    let cfg = load_config(&a.common)?;
    let meta = Meta::start("attention-diff", cfg.seed);
    let before = load_encoder_checkpoint(&a.before)?;
    let after = load_encoder_checkpoint(&a.after)?;
    if before.vocab != after.vocab {
        return Err(Failure::usage("checkpoints use different vocabularies"));
    }
    let corpus = read_corpus(&a.corpus).map_err(|e| Failure::from(e).in_file(&a.corpus))?;
    let items: Vec<(String, Topic)> = corpus.iter().map(|p| (p.text.clone(), p.topic)).collect();
    let per_class = a.samples.unwrap_or(cfg.drift.per_class);
    let texts = sample_per_class(&items, per_class, cfg.seed);
    let merged = a.merged || cfg.drift.merged;
    let drift = attention_drift(&before.params(), &after.params(), &after.vocab, &texts, merged)?;
    println!(
        "lowest similarity {:.6} at layer {}, head {} ({} texts)",
        drift.min_value, drift.argmin.0, drift.argmin.1, drift.samples
    );
    let out = DriftOutput {
        config: cfg.snapshot(),
        before: a.before.display().to_string(),
        after: a.after.display().to_string(),
        view: AttentionView::new(None, Some(drift)),
    };
    write_json(&a.out, &out)?;
    meta.finish(&a.out, &[&a.out], serde_json::Value::Null)
}

pub fn learning_curve(a: LearningCurveArgs) -> CmdResult {
    let mut cfg = load_config(&a.common)?;
    apply_encoder_flags(&mut cfg, &a.encoder)?;
    if let Some(h) = a.holdout {
        cfg.eval.holdout_per_class = h;
    }
    if let Some(s) = &a.sizes {
        cfg.eval.sizes = s.clone();
    }
    if a.models.is_empty() {
        return Err(Failure::usage("--models needs at least one model"));
    }
    let meta = Meta::start("learning-curve", cfg.seed);
    let data = load_examples(&a.corpus)?;
    let trainers: Vec<Box<dyn Trainer>> = a
        .models
        .iter()
        .map(|&k| make_trainer(k, &cfg, &a.encoder))
        .collect::<CmdResult<_>>()?;
    let refs: Vec<&dyn Trainer> = trainers.iter().map(|t| t.as_ref()).collect();
    let curve = run_curve(&refs, &data, &cfg.eval.sizes, cfg.eval.holdout_per_class, cfg.seed)?;
    for w in &curve.warnings {
        eprintln!("warning: {w}");
    }
    write_bytes(&a.out, curve.to_csv().as_bytes())?;
    let json_path = a.out.with_extension("json");
    write_json(&json_path, &serde_json::json!({ "config": cfg.snapshot(), "curve": curve }))?;
    meta.finish(&a.out, &[&a.out, &json_path], serde_json::json!({ "rows": curve.rows.len() }))
}

pub fn pretrain(a: PretrainArgs) -> CmdResult {
    let cfg = load_config(&a.common)?;
    let meta = Meta::start("pretrain", cfg.seed);
    let mut texts = Vec::new();
    if let Some(p) = &a.corpus {
        texts.extend(read_corpus(p).map_err(|e| Failure::from(e).in_file(p))?.into_iter().map(|r| r.text));
    }
    if let Some(p) = &a.unlabeled {
        texts.extend(read_lines(p)?);
    }
    if a.corpus.is_none() && a.unlabeled.is_none() {
        return Err(Failure::usage("pretraining needs --corpus or --unlabeled"));
    }
    if texts.is_empty() {
        return Err(Failure::input("no pretraining text"));
    }
    let s = &cfg.encoder;
    let vocab = train_subword_vocab(&texts, s.vocab_size)?;
    let mut arch = s.architecture.clone();
    arch.vocab_size = vocab.len();
    let init = match &s.init {
        InitScheme::Load(_) => return Err(Failure::usage("pretraining starts from a sampled initialization")),
        other => other.clone(),
    };
    let params = init_params(&arch, &init, derive_seed(cfg.seed, 1))?;
    let mut pc = s.pretrain.clone().unwrap_or_default();
    if let Some(e) = a.epochs {
        pc.epochs = e;
    }
    let pc = PretrainConfig {
        seed: derive_seed(cfg.seed, 2),
        ..pc
    };
    let corpus: Vec<Encoding> = texts.iter().map(|t| vocab.encode(t, arch.max_seq_len)).collect();
    let (params, history) = pretrain_mlm(&params, &corpus, &pc)?;
    ensure_parent(&a.out)?;
    Checkpoint::new(&params, &vocab, None)?.save(&a.out)?;
    let mut outputs: Vec<&Path> = vec![&a.out];
    if let Some(m) = &a.metrics {
        ensure_parent(m)?;
        write_metrics_log(m, &history)?;
        outputs.push(m);
    }
    if let Some(last) = history.epoch_loss.last() {
        println!("final masked-LM loss {last:.4} after {} epochs", history.epoch_loss.len());
    }
    meta.finish(
        &a.out,
        &outputs,
        serde_json::json!({ "texts": texts.len(), "epoch_loss": history.epoch_loss, "config": cfg.snapshot() }),
    )
}

pub fn synth(a: SynthArgs) -> CmdResult {
    let mut cfg = load_config(&a.common)?;
    if let Some(n) = a.paragraphs {
        cfg.synth.paragraphs = n;
    }
    if let Some(n) = a.unlabeled {
        cfg.synth.unlabeled = n;
    }
    revalidate(&cfg)?;
    let meta = Meta::start("synth", cfg.seed);
    let corpus = synth::generate(&cfg.synth, cfg.seed)?;
    ensure_parent(&a.out)?;
    write_jsonl(&a.out, &corpus.paragraphs())?;
    let mut outputs: Vec<&Path> = vec![&a.out];
    if let Some(u) = &a.unlabeled_out {
        let mut text = corpus.unlabeled.join("\n");
        text.push('\n');
        write_bytes(u, text.as_bytes())?;
        outputs.push(u);
    }
    meta.finish(
        &a.out,
        &outputs,
        serde_json::json!({ "labeled": corpus.labeled.len(), "unlabeled": corpus.unlabeled.len() }),
    )
}
