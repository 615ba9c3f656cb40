use std::collections::HashMap;
use std::convert::Infallible;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use medsum::metrics::{evaluate_corpus, CorpusEvaluation, RougeReport};
use medsum::model::{beam_decode, greedy_decode, mlm_pretrain_step, ModelConfig, ModelParams};
use medsum::rng::Lcg;
use medsum::text::{
    build_vocabulary, decode_ids, encode, extend_vocabulary, load_corpus, split_dataset, DocumentRecord, Preprocessor,
    TokenSequence, Vocabulary,
};
use medsum::training::{
    cross_validate, distill, load_checkpoint, lr_schedule, save_checkpoint, sgd_momentum_step, train_from, Checkpoint, Example,
    TrainAbort, TrainOutcome, Velocity,
};

use crate::config::{RunConfig, Source};
use crate::error::CliError;
use crate::plot;

pub const TABLE_HEADER: &str = "model,rouge1,rouge2,rougeL,recall";
const SPLITS: [&str; 3] = ["train", "validation", "test"];

/// The `--out` directory. Every file a command writes goes through here.
pub struct Output {
    dir: PathBuf,
}

impl Output {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        let path = self.path(name);
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))
    }
}

fn load_records(path: &Path, cfg: &RunConfig) -> Result<Vec<DocumentRecord>, CliError> {
    let records = load_corpus(path)?;
    if records.is_empty() {
        return Err(CliError::Data(format!("{}: no records", path.display())));
    }
    Ok(if cfg.title_task() {
        records.iter().map(DocumentRecord::title_task).collect()
    } else {
        records
    })
}

fn records_jsonl(records: &[DocumentRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let line = serde_json::json!({"id": r.id, "title": r.title, "body": r.source, "reference": r.reference});
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

fn examples_jsonl(examples: &[Example]) -> String {
    let mut out = String::new();
    for ex in examples {
        let line = serde_json::json!({"id": ex.id, "source": ex.source, "target": ex.target});
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

fn report_row(name: &str, r: &RougeReport) -> String {
    format!("{},{},{},{},{}", medsum::metrics::csv_field(name), r.rouge1.f1, r.rouge2.f1, r.rouge_l.f1, r.recall)
}

pub fn preprocess(corpus: &Path, cfg: &RunConfig, out: &Output) -> Result<String, CliError> {
    let records = load_records(corpus, cfg)?;
    let pre = cfg.preprocessor()?;
    let split = split_dataset(&records, cfg.split_ratios(), cfg.seed())?;
    let vocab = build_vocabulary(&split.train, &pre, cfg.min_freq(), cfg.max_vocab())?;
    let vocab = extend_vocabulary(&vocab, &cfg.domain_terms()?);
    let model = cfg.model_config(vocab.len())?;

    let mut stats = String::from("split,records,source_tokens,reference_tokens,oov_rate\n");
    for (name, part) in SPLITS.iter().zip([&split.train, &split.validation, &split.test]) {
        let (mut src, mut refs, mut oov) = (0, 0, 0);
        for r in part.iter() {
            let s = pre.tokens(&r.source);
            let t = pre.tokens(&r.reference);
            src += s.len();
            refs += t.len();
            oov += s.iter().chain(&t).filter(|w| !vocab.contains(w)).count();
        }
        let total = src + refs;
        let rate = if total == 0 { 0.0 } else { oov as f64 / total as f64 };
        let _ = writeln!(stats, "{name},{},{src},{refs},{rate}", part.len());
        out.write(&format!("{name}.jsonl"), records_jsonl(part))?;
        out.write(&format!("{name}.ids.jsonl"), examples_jsonl(&Example::from_records(part, &pre, &vocab, &model)))?;
    }
    let vocab_json = serde_json::to_string_pretty(&vocab).map_err(|e| CliError::Data(e.to_string()))?;
    out.write("vocab.json", vocab_json + "\n")?;
    out.write("stats.csv", &stats)?;
    out.write("run_config.txt", cfg.render())?;
    Ok(format!("vocabulary: {} tokens\n{stats}", vocab.len()))
}

/// A preprocessed dataset directory.
pub struct Dataset {
    pub vocab: Vocabulary,
    pub train: Vec<DocumentRecord>,
    pub validation: Vec<DocumentRecord>,
    pub test: Vec<DocumentRecord>,
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, CliError> {
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))
    };
    let vocab: Vocabulary = serde_json::from_str(&read("vocab.json")?).map_err(|e| CliError::Data(format!("vocab.json: {e}")))?;
    let part = |name: &str| -> Result<Vec<DocumentRecord>, CliError> {
        Ok(medsum::text::parse_corpus(&read(&format!("{name}.jsonl"))?)?)
    };
    Ok(Dataset {
        vocab,
        train: part("train")?,
        validation: part("validation")?,
        test: part("test")?,
    })
}

/// Masked-token pretraining over the training sources, cycling through them
/// `batch_size` at a time. Returns the per-step losses.
fn pretrain(params: &mut ModelParams<f32>, sources: &[TokenSequence], model: &ModelConfig, cfg: &RunConfig) -> Result<Vec<f64>, CliError> {
    let steps = cfg.mlm_steps();
    let tcfg = cfg.train_config()?;
    let seqs: Vec<&TokenSequence> = sources.iter().filter(|s| !s.is_empty()).collect();
    if steps == 0 || seqs.is_empty() {
        return Ok(Vec::new());
    }
    let mut vel = Velocity::zeros_like(params);
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let batch: Vec<TokenSequence> = (0..tcfg.batch_size).map(|j| seqs[(step * tcfg.batch_size + j) % seqs.len()].clone()).collect();
        let seed = Lcg::derive(cfg.seed(), step as u64).next_u64();
        losses.push(mlm_pretrain_step(&batch, params, model, cfg.mlm_mask_prob(), seed)?);
        let lr = lr_schedule(step + 1, tcfg.base_lr, tcfg.warmup_steps);
        sgd_momentum_step(params, &mut vel, lr, tcfg.momentum, tcfg.clip_norm, step + 1)?;
    }
    Ok(losses)
}

fn summarize_outcome(outcome: &TrainOutcome) -> String {
    let mut s = String::new();
    if let Some(best) = outcome.history.best() {
        let _ = writeln!(s, "best epoch {} of {}, val_loss {}", best.epoch, outcome.history.rows.len(), best.val_loss);
        let _ = writeln!(s, "{TABLE_HEADER}");
        let _ = writeln!(s, "validation,{},{},{},{}", best.rouge1, best.rouge2, best.rouge_l, best.recall);
    }
    s
}

/// Writes history (also after an abort), plot and checkpoint.
fn finish_run(result: Result<TrainOutcome, TrainAbort>, cfg: &RunConfig, out: &Output, checkpoint_name: &str) -> Result<TrainOutcome, CliError> {
    let history = match &result {
        Ok(o) => &o.history,
        Err(a) => &a.history,
    };
    out.write("history.csv", history.to_csv())?;
    if cfg.plot() {
        let series = |f: fn(&medsum::training::EpochRecord) -> f64| history.rows.iter().map(|r| (r.epoch as f64, f(r))).collect();
        let losses = plot::line_chart("loss", &[("train_loss", series(|r| r.train_loss)), ("val_loss", series(|r| r.val_loss))]);
        out.write("loss.svg", losses)?;
        let scores = plot::line_chart(
            "validation scores",
            &[
                ("rouge1", series(|r| r.rouge1)),
                ("rouge2", series(|r| r.rouge2)),
                ("rougeL", series(|r| r.rouge_l)),
                ("recall", series(|r| r.recall)),
            ],
        );
        out.write("scores.svg", scores)?;
    }
    let outcome = result.map_err(|a| CliError::from(a.error))?;
    save_checkpoint(&outcome.checkpoint, &out.path(checkpoint_name))?;
    Ok(outcome)
}

struct Prepared {
    model: ModelConfig,
    train: Vec<Example>,
    validation: Vec<Example>,
}

fn prepare(ds: &Dataset, cfg: &RunConfig) -> Result<Prepared, CliError> {
    let pre = cfg.preprocessor()?;
    let model = cfg.model_config(ds.vocab.len())?;
    Ok(Prepared {
        train: Example::from_records(&ds.train, &pre, &ds.vocab, &model),
        validation: Example::from_records(&ds.validation, &pre, &ds.vocab, &model),
        model,
    })
}

fn train_variant(ds: &Dataset, cfg: &RunConfig, teacher: Option<&Checkpoint>) -> Result<Result<TrainOutcome, TrainAbort>, CliError> {
    let p = prepare(ds, cfg)?;
    let tcfg = cfg.train_config()?;
    Ok(match teacher {
        Some(t) => distill(t, &p.model, &p.train, &p.validation, &ds.vocab, &tcfg),
        None => {
            let mut params = ModelParams::init(&p.model);
            let sources: Vec<TokenSequence> = p.train.iter().map(|e| e.source.clone()).collect();
            pretrain(&mut params, &sources, &p.model, cfg)?;
            train_from(params, &p.train, &p.validation, &ds.vocab, &p.model, &tcfg)
        }
    })
}

pub fn train(data: &Path, cfg: &RunConfig, out: &Output) -> Result<String, CliError> {
    let ds = load_dataset(data)?;
    out.write("run_config.txt", cfg.render())?;
    let result = train_variant(&ds, cfg, None)?;
    let outcome = finish_run(result, cfg, out, "checkpoint.msum")?;
    Ok(summarize_outcome(&outcome))
}

pub fn distill_cmd(teacher: &Path, data: &Path, cfg: &RunConfig, out: &Output) -> Result<String, CliError> {
    let teacher_ckpt = load_checkpoint(teacher)?;
    let ds = load_dataset(data)?;
    out.write("run_config.txt", cfg.render())?;
    let result = train_variant(&ds, cfg, Some(&teacher_ckpt))?;
    let outcome = finish_run(result, cfg, out, "student.msum")?;
    let size = |p: &Path| fs::metadata(p).map(|m| m.len()).unwrap_or(0);
    let mut s = summarize_outcome(&outcome);
    let _ = writeln!(s, "teacher {} bytes, student {} bytes", size(teacher), size(&out.path("student.msum")));
    Ok(s)
}

/// The checkpoint's model config, with the beam width replaced when one was given.
fn decode_config(ckpt: &Checkpoint, cfg: &RunConfig) -> ModelConfig {
    let mut model = ckpt.config.clone();
    if cfg.source("beam_width") != Source::Default {
        model.beam_width = cfg.beam_width();
    }
    model
}

fn decode_text(ckpt: &Checkpoint, model: &ModelConfig, pre: &Preprocessor, text: &str) -> Result<String, CliError> {
    let mut src = encode(&pre.tokens(text), &ckpt.vocabulary, false);
    src.ids.truncate(model.max_source_len);
    let out = if model.beam_width == 1 {
        greedy_decode(&src, &ckpt.params, model)?
    } else {
        beam_decode(&src, &ckpt.params, model, model.beam_width)?
    };
    Ok(decode_ids(&out, &ckpt.vocabulary)?)
}

pub fn summarize(checkpoint: &Path, text: &str, cfg: &RunConfig) -> Result<String, CliError> {
    if text.trim().is_empty() {
        return Err(CliError::Usage("input text is empty".into()));
    }
    let ckpt = load_checkpoint(checkpoint)?;
    let pre = cfg.preprocessor()?;
    decode_text(&ckpt, &decode_config(&ckpt, cfg), &pre, text)
}

fn evaluate_checkpoint(ckpt: &Checkpoint, records: &[DocumentRecord], cfg: &RunConfig) -> Result<CorpusEvaluation, CliError> {
    let pre = cfg.preprocessor()?;
    let model = decode_config(ckpt, cfg);
    Ok(evaluate_corpus(|r| decode_text(ckpt, &model, &pre, &r.source), records, &pre))
}

fn report_failures(eval: &CorpusEvaluation) {
    for (id, msg) in &eval.failures {
        eprintln!("warning: {id}: {msg}");
    }
}

pub fn evaluate(checkpoint: Option<&Path>, test: &Path, name: Option<&str>, identity: bool, cfg: &RunConfig, out: &Output) -> Result<String, CliError> {
    let records = load_records(test, cfg)?;
    let (eval, label) = if identity {
        let pre = cfg.preprocessor()?;
        let eval = evaluate_corpus(|r| Ok::<_, Infallible>(r.reference.clone()), &records, &pre);
        (eval, "identity".to_string())
    } else {
        let path = checkpoint.ok_or_else(|| CliError::Usage("--checkpoint is required unless --identity is given".into()))?;
        let ckpt = load_checkpoint(path)?;
        let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
        (evaluate_checkpoint(&ckpt, &records, cfg)?, label)
    };
    report_failures(&eval);
    let table = format!("{TABLE_HEADER}\n{}\n", report_row(name.unwrap_or(&label), &eval.report));
    out.write("evaluate.csv", &table)?;
    out.write("audit.csv", eval.audit_csv())?;
    Ok(table)
}

/// One row of a comparison: a name, config overrides and an optional teacher
/// (an earlier variant's name).
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub overrides: Vec<(String, String)>,
    pub teacher: Option<String>,
}

/// `name` or `name:key=value,key=value`; `teacher=<variant>` distills from an earlier row.
pub fn parse_variant(spec: &str) -> Result<Variant, CliError> {
    let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let name = name.trim();
    if name.is_empty() {
        return Err(CliError::Usage(format!("variant {spec:?} has no name")));
    }
    let mut v = Variant {
        name: name.to_string(),
        overrides: Vec::new(),
        teacher: None,
    };
    for item in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, val) = item
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("variant {name}: expected key=value, got {item:?}")))?;
        if k.trim() == "teacher" {
            v.teacher = Some(val.trim().to_string());
        } else {
            RunConfig::default().set(k.trim(), val.trim(), Source::Flag)?;
            v.overrides.push((k.trim().to_string(), val.trim().to_string()));
        }
    }
    Ok(v)
}

/// Plain recurrent baseline, attention, deeper encoder, +masked-token
/// pretraining, +distillation from the pretrained model.
pub fn ladder(cfg: &RunConfig) -> Vec<Variant> {
    let layers = cfg.raw("encoder_layers").parse::<usize>().expect("validated") + 1;
    let mlm = cfg.mlm_steps().max(200);
    let v = |name: &str, o: &[(&str, String)], teacher: Option<&str>| Variant {
        name: name.to_string(),
        overrides: o.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        teacher: teacher.map(str::to_string),
    };
    vec![
        v("seq2seq", &[("attention", "off".into()), ("mlm_steps", "0".into())], None),
        v("attention", &[("mlm_steps", "0".into())], None),
        v("deeper", &[("encoder_layers", layers.to_string()), ("mlm_steps", "0".into())], None),
        v("pretrained", &[("encoder_layers", layers.to_string()), ("mlm_steps", mlm.to_string())], None),
        v("distilled", &[("mlm_steps", "0".into())], Some("pretrained")),
    ]
}

pub fn compare(data: &Path, variants: &[Variant], cfg: &RunConfig, out: &Output) -> Result<String, CliError> {
    if variants.len() < 2 {
        return Err(CliError::Usage("compare needs at least two variants".into()));
    }
    let ds = load_dataset(data)?;
    if ds.test.is_empty() {
        return Err(CliError::Data("test split is empty".into()));
    }
    out.write("run_config.txt", cfg.render())?;
    let mut table = format!("{TABLE_HEADER}\n");
    let mut bars = Vec::new();
    let mut trained: HashMap<String, Checkpoint> = HashMap::new();
    for v in variants {
        let run = || -> Result<(Checkpoint, RougeReport), CliError> {
            let mut vcfg = cfg.clone();
            for (k, val) in &v.overrides {
                vcfg.set(k, val, Source::Flag)?;
            }
            let teacher = match &v.teacher {
                Some(t) => Some(trained.get(t).ok_or_else(|| CliError::Usage(format!("variant {}: teacher {t:?} is not an earlier successful variant", v.name)))?),
                None => None,
            };
            let outcome = train_variant(&ds, &vcfg, teacher)?.map_err(|a| CliError::from(a.error))?;
            let eval = evaluate_checkpoint(&outcome.checkpoint, &ds.test, &vcfg)?;
            report_failures(&eval);
            Ok((outcome.checkpoint, eval.report))
        };
        match run() {
            Ok((ckpt, report)) => {
                let _ = writeln!(table, "{}", report_row(&v.name, &report));
                bars.push((v.name.clone(), report.rouge1.f1));
                trained.insert(v.name.clone(), ckpt);
            }
            Err(e) => {
                eprintln!("variant {} failed: {e}", v.name);
                let _ = writeln!(table, "{},,,,", medsum::metrics::csv_field(&v.name));
                bars.push((v.name.clone(), f64::NAN));
            }
        }
    }
    out.write("compare.csv", &table)?;
    if cfg.plot() {
        out.write("compare.svg", plot::bar_chart("ROUGE-1 F1", &bars))?;
    }
    Ok(table)
}

pub fn crossval(corpus: &Path, cfg: &RunConfig, out: &Output) -> Result<String, CliError> {
    let records = load_records(corpus, cfg)?;
    let pre = cfg.preprocessor()?;
    let vocab = build_vocabulary(&records, &pre, cfg.min_freq(), cfg.max_vocab())?;
    let vocab = extend_vocabulary(&vocab, &cfg.domain_terms()?);
    let model = cfg.model_config(vocab.len())?;
    let tcfg = cfg.train_config()?;
    let examples = Example::from_records(&records, &pre, &vocab, &model);
    out.write("run_config.txt", cfg.render())?;
    let report = cross_validate(&examples, cfg.folds(), &vocab, &model, &tcfg)?;
    for r in report.rows.iter().filter(|r| r.error.is_some()) {
        eprintln!("fold {} failed: {}", r.fold, r.error.as_deref().unwrap_or_default());
    }
    let table = report.to_csv();
    out.write("crossval.csv", &table)?;
    let mut folds = String::from("fold,id\n");
    for r in &report.rows {
        for id in &r.validation_ids {
            let _ = writeln!(folds, "{},{}", r.fold, medsum::metrics::csv_field(id));
        }
    }
    out.write("folds.csv", folds)?;
    let mut summary = String::from("statistic,val_loss,rouge1,rouge2,rougeL,recall\n");
    for (label, v) in [("mean", report.mean), ("stddev", report.stddev)] {
        let _ = writeln!(summary, "{label},{},{},{},{},{}", v[0], v[1], v[2], v[3], v[4]);
    }
    out.write("crossval_summary.csv", &summary)?;
    Ok(table)
}
