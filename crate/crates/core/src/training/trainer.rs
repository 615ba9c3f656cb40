use super::loss::{batch_loss_with, DistillTerm, SoftTargets};
use super::{lr_schedule, sgd_momentum_step, Checkpoint, EpochRecord, Example, TrainConfig, TrainError, TrainHistory, Velocity};
use crate::metrics::{PairScores, RougeReport};
use crate::model::{greedy_decode, ModelConfig, ModelParams, Network};
use crate::numeric::ParameterSet;
use crate::rng::Lcg;
use crate::text::{Vocabulary, UNK};

/// Best-validation checkpoint plus the full per-epoch history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
}

/// A failed run with the epochs completed before the failure.
#[derive(Debug, Clone)]
pub struct TrainAbort {
    pub error: TrainError,
    pub history: TrainHistory,
}

impl From<TrainError> for TrainAbort {
    fn from(error: TrainError) -> Self {
        Self {
            error,
            history: TrainHistory::default(),
        }
    }
}

/// Halt iff the earliest lowest validation loss lies more than `patience`
/// epochs before the latest one.
pub fn early_stop_check(val_losses: &[f64], patience: usize) -> bool {
    let Some(best) = val_losses
        .iter()
        .enumerate()
        .reduce(|b, x| if x.1 < b.1 { x } else { b })
        .map(|(i, _)| i)
    else {
        return false;
    };
    val_losses.len() - 1 - best > patience
}

/// Greedy-decodes every example and scores content ids against the target
/// (ROUGE on token ids; every non-UNK id counts as a content word).
pub fn evaluate_examples(params: &ModelParams<f32>, config: &ModelConfig, examples: &[Example]) -> Result<RougeReport, TrainError> {
    let mut scores = Vec::with_capacity(examples.len());
    for ex in examples {
        let out = greedy_decode(&ex.source, params, config)?;
        scores.push(PairScores::score(&out.content(), &ex.target.content(), |&id| id != UNK));
    }
    Ok(RougeReport::mean(&scores))
}

fn validate_sets(train: &[Example], val: &[Example]) -> Result<(), TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyData("training set"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptyData("validation set"));
    }
    Ok(())
}

struct Teacher {
    targets: Vec<SoftTargets>,
    temperature: f64,
    mix: f64,
}

fn validation_loss(params: &ModelParams<f32>, config: &ModelConfig, val: &[Example]) -> Result<f64, TrainError> {
    super::compute_loss(val, params, config)
}

fn fit(
    mut params: ModelParams<f32>,
    train: &[Example],
    val: &[Example],
    vocab: &Vocabulary,
    model: &ModelConfig,
    cfg: &TrainConfig,
    teacher: Option<&Teacher>,
) -> Result<TrainOutcome, TrainAbort> {
    let mut history = TrainHistory::default();
    let abort = |error: TrainError, history: &TrainHistory| TrainAbort {
        error,
        history: history.clone(),
    };
    let mut velocity = Velocity::zeros_like(&params);
    let mut best: Option<(f64, ModelParams<f32>)> = None;
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        Lcg::derive(cfg.seed, epoch as u64).shuffle(&mut order);
        let (mut loss_sum, mut positions, mut lr) = (0.0, 0usize, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            lr = lr_schedule(step, cfg.base_lr, cfg.warmup_steps);
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let soft: Vec<&SoftTargets> = match teacher {
                Some(t) => chunk.iter().map(|&i| &t.targets[i]).collect(),
                None => Vec::new(),
            };
            let result = (|| {
                let mut net = Network::new(&params, model);
                let distill = teacher.map(|t| DistillTerm {
                    targets: &soft,
                    temperature: t.temperature,
                    mix: t.mix,
                });
                let (loss, parts) = batch_loss_with(&mut net, &batch, distill)?;
                net.tape.backward_into(loss, &mut params)?;
                Ok::<_, TrainError>((net.tape.scalar(loss) as f64, parts.positions))
            })();
            let (value, n) = result.map_err(|e| {
                params.zero_grads();
                abort(e, &history)
            })?;
            sgd_momentum_step(&mut params, &mut velocity, lr, cfg.momentum, cfg.clip_norm, step).map_err(|e| abort(e, &history))?;
            loss_sum += value * n as f64;
            positions += n;
        }
        let val_loss = validation_loss(&params, model, val).map_err(|e| abort(e, &history))?;
        let report = evaluate_examples(&params, model, val).map_err(|e| abort(e, &history))?;
        history.rows.push(EpochRecord {
            epoch,
            train_loss: loss_sum / positions as f64,
            val_loss,
            rouge1: report.rouge1.f1,
            rouge2: report.rouge2.f1,
            rouge_l: report.rouge_l.f1,
            recall: report.recall,
            lr,
        });
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, params.clone()));
        }
        if early_stop_check(&history.val_losses(), cfg.early_stop_patience) {
            break;
        }
    }
    let (_, best_params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: model.clone(),
            vocabulary: vocab.clone(),
            params: best_params,
        },
        history,
    })
}

fn check_configs(vocab: &Vocabulary, model: &ModelConfig, cfg: &TrainConfig) -> Result<(), TrainError> {
    cfg.validate()?;
    model.validate()?;
    if model.vocab_size != vocab.len() {
        return Err(TrainError::InvalidConfig(format!(
            "vocab_size {} disagrees with vocabulary of {} tokens",
            model.vocab_size,
            vocab.len()
        )));
    }
    Ok(())
}

/// Trains from `ModelParams::init(model)`. Minibatches are reshuffled every
/// epoch from `cfg.seed`; the returned checkpoint is the one with the lowest
/// validation loss.
pub fn train(train: &[Example], val: &[Example], vocab: &Vocabulary, model: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome, TrainAbort> {
    train_from(ModelParams::init(model), train, val, vocab, model, cfg)
}

/// Like [`train`], starting from given parameters (e.g. after pretraining).
pub fn train_from(
    params: ModelParams<f32>,
    train: &[Example],
    val: &[Example],
    vocab: &Vocabulary,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainAbort> {
    check_configs(vocab, model, cfg)?;
    validate_sets(train, val)?;
    fit(params, train, val, vocab, model, cfg, None)
}

/// Trains a fresh student against the frozen teacher's softened outputs,
/// blended with gold cross-entropy by `cfg.distill_mix`.
pub fn distill(
    teacher: &Checkpoint,
    student: &ModelConfig,
    train: &[Example],
    val: &[Example],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainAbort> {
    check_configs(vocab, student, cfg)?;
    validate_sets(train, val)?;
    if teacher.vocabulary != *vocab || teacher.config.vocab_size != student.vocab_size {
        return Err(TrainError::VocabMismatch.into());
    }
    let t = &teacher.config;
    for (name, s, tv) in [
        ("embed_dim", student.embed_dim, t.embed_dim),
        ("hidden_dim", student.hidden_dim, t.hidden_dim),
        ("attention_dim", student.attention_dim, t.attention_dim),
        ("encoder_layers", student.encoder_layers, t.encoder_layers),
    ] {
        if s > tv {
            return Err(TrainError::StudentTooLarge(format!("{name} {s} > {tv}")).into());
        }
    }
    let params = ModelParams::init(student);
    if cfg.distill_mix >= 1.0 {
        return fit(params, train, val, vocab, student, cfg, None);
    }
    let targets = train
        .iter()
        .map(|ex| SoftTargets::from_teacher(&teacher.params, &teacher.config, ex, cfg.distill_temperature))
        .collect::<Result<Vec<_>, _>>()
        .map_err(TrainError::from)?;
    let term = Teacher {
        targets,
        temperature: cfg.distill_temperature,
        mix: cfg.distill_mix,
    };
    fit(params, train, val, vocab, student, cfg, Some(&term))
}
