//! Mini-batch training with AdamW, plus shared-normalization training over
//! retrieved contexts.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{backward, example_loss, forward, predict_span, ModelParams, ObjectiveKind, Vocab};
use crate::data::{ContextSet, Example, Passage, PassageRecord};
use crate::error::{Error, Result};
use crate::evaluation::evaluate;
use crate::numerics::MaskPolicy;
use crate::objectives::{
    shared_norm_loss, Boundary, LossResult, SharedNormGrads, SharedNormTarget, SpanTarget,
};
use crate::optim::{AdamW, AdamWConfig};
use crate::similarity::SimilarityKind;

/// Which factors of the compound loss are pooled across the context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DssScope {
    /// Start, end and joint scores each get one shared softmax.
    #[default]
    AllFactors,
    /// Only the joint scores are pooled; start/end terms stay per passage.
    JointOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub objective: ObjectiveKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mask: MaskPolicy,
    /// Passages per question under shared normalization.
    pub context_size: usize,
    pub dss_scope: DssScope,
    pub d_emb: usize,
    pub similarity: SimilarityKind,
    /// Beam width for joint-conditional decoding.
    pub beam: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let opt = AdamWConfig::default();
        Self {
            objective: ObjectiveKind::Compound,
            lr: opt.lr,
            weight_decay: opt.weight_decay,
            beta1: opt.beta1,
            beta2: opt.beta2,
            eps: opt.eps,
            batch_size: 16,
            epochs: 20,
            seed: 0,
            mask: MaskPolicy::ValidSpans,
            context_size: 2,
            dss_scope: DssScope::AllFactors,
            d_emb: 32,
            similarity: SimilarityKind::Dot,
            beam: crate::decoding::DEFAULT_BEAM,
        }
    }
}

impl TrainConfig {
    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer().validate()?;
        let positive = [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("context_size", self.context_size),
            ("d_emb", self.d_emb),
            ("beam", self.beam),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Parameters, optimizer moments and progress; enough to resume exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub optimizer: AdamW,
    pub epochs_done: usize,
}

impl TrainState {
    pub fn new(vocab_size: usize, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(vocab_size, config.d_emb, config.similarity, config.seed)?;
        let optimizer = AdamW::new(config.optimizer(), &params.block_sizes());
        Ok(Self {
            params,
            optimizer,
            epochs_done: 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_em: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Contexts dropped because no passage carried an answer.
    pub skipped: usize,
}

/// One question with its retrieved passages and their GT spans.
#[derive(Debug, Clone, PartialEq)]
pub struct DssInstance {
    pub id: String,
    pub question: Vec<usize>,
    pub passages: Vec<Vec<usize>>,
    pub gt: Vec<Vec<SpanTarget>>,
}

impl DssInstance {
    pub fn has_supervision(&self) -> bool {
        self.gt.iter().any(|g| !g.is_empty())
    }
}

/// Joins contexts with their questions and passage texts.
pub fn dss_instances(
    examples: &[Example],
    contexts: &[ContextSet],
    passages: &[PassageRecord],
    vocab: &Vocab,
) -> Result<Vec<DssInstance>> {
    let by_id: HashMap<&str, &Example> = examples.iter().map(|e| (e.id.as_str(), e)).collect();
    let texts: HashMap<&str, &str> = passages
        .iter()
        .map(|p| (p.id.as_str(), p.text.as_str()))
        .collect();
    contexts
        .iter()
        .map(|c| {
            let ex = by_id.get(c.question_id.as_str()).ok_or_else(|| {
                Error::Format(format!("context for unknown question {}", c.question_id))
            })?;
            let mut ps = Vec::with_capacity(c.passages.len());
            let mut gt = Vec::with_capacity(c.passages.len());
            for cp in &c.passages {
                let text = texts.get(cp.passage_id.as_str()).ok_or_else(|| {
                    Error::Format(format!(
                        "context refers to unknown passage {}",
                        cp.passage_id
                    ))
                })?;
                ps.push(vocab.encode(&Passage::new(*text)));
                gt.push(cp.gt.clone());
            }
            Ok(DssInstance {
                id: c.question_id.clone(),
                question: vocab.encode(&ex.question),
                passages: ps,
                gt,
            })
        })
        .collect()
}

/// A unit of training data.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainItem {
    Single {
        question: Vec<usize>,
        passage: Vec<usize>,
        target: SpanTarget,
    },
    Context(DssInstance),
}

fn sum_into(total: &mut Option<ModelParams>, g: ModelParams) {
    match total {
        Some(t) => t.add_scaled(&g, 1.0),
        None => *total = Some(g),
    }
}

/// Compound loss with shared normalization over the instance's passages.
pub fn dss_loss(
    params: &ModelParams,
    inst: &DssInstance,
    scope: DssScope,
    policy: MaskPolicy,
) -> Result<(f64, ModelParams)> {
    if inst.passages.len() != inst.gt.len() || inst.passages.is_empty() {
        return Err(Error::InvalidInput(format!(
            "context {} has {} passages and {} GT sets",
            inst.id,
            inst.passages.len(),
            inst.gt.len()
        )));
    }
    let caches = inst
        .passages
        .iter()
        .map(|p| forward(params, &inst.question, p, policy))
        .collect::<Result<Vec<_>>>()?;
    let starts: Vec<_> = caches.iter().map(|c| c.start.clone()).collect();
    let ends: Vec<_> = caches.iter().map(|c| c.end.clone()).collect();
    let joints: Vec<_> = caches.iter().map(|c| c.joint.clone()).collect();
    let pooled = |b: Boundary| SharedNormTarget::from_spans(b, &starts, &ends, &joints, &inst.gt);

    let joint = shared_norm_loss(&pooled(Boundary::Joint))?;
    let SharedNormGrads::Spans(g_joint) = joint.grads else {
        unreachable!("joint target yields span gradients")
    };
    let n = caches.len();
    let mut g_start: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut g_end: Vec<Option<Vec<f64>>> = vec![None; n];
    let aux = match scope {
        DssScope::AllFactors => {
            let s = shared_norm_loss(&pooled(Boundary::Start))?;
            let e = shared_norm_loss(&pooled(Boundary::End))?;
            for (p, (gs, ge)) in positions(s.grads)
                .into_iter()
                .zip(positions(e.grads))
                .enumerate()
            {
                g_start[p] = Some(gs);
                g_end[p] = Some(ge);
            }
            s.loss + e.loss
        }
        DssScope::JointOnly => {
            let mut total = 0.0;
            for p in (0..n).filter(|&p| !inst.gt[p].is_empty()) {
                let single = |b: Boundary| {
                    SharedNormTarget::from_spans(
                        b,
                        &starts[p..=p],
                        &ends[p..=p],
                        &joints[p..=p],
                        &inst.gt[p..=p],
                    )
                };
                let s = shared_norm_loss(&single(Boundary::Start))?;
                let e = shared_norm_loss(&single(Boundary::End))?;
                total += s.loss + e.loss;
                g_start[p] = positions(s.grads).pop();
                g_end[p] = positions(e.grads).pop();
            }
            total
        }
    };

    let mut grads = None;
    for (p, (cache, gj)) in caches.iter().zip(g_joint).enumerate() {
        let r = LossResult {
            loss: 0.0,
            grad_start: g_start[p].take(),
            grad_end: g_end[p].take(),
            grad_joint: Some(gj),
        };
        sum_into(&mut grads, backward(params, cache, &r, None)?);
    }
    Ok((joint.loss + aux, grads.expect("at least one passage")))
}

fn positions(g: SharedNormGrads) -> Vec<Vec<f64>> {
    match g {
        SharedNormGrads::Positions(v) => v,
        SharedNormGrads::Spans(_) => unreachable!("position target yields position gradients"),
    }
}

fn item_loss(
    params: &ModelParams,
    item: &TrainItem,
    config: &TrainConfig,
) -> Result<(f64, ModelParams)> {
    match item {
        TrainItem::Single {
            question,
            passage,
            target,
        } => example_loss(
            params,
            question,
            passage,
            *target,
            config.objective,
            config.mask,
        ),
        TrainItem::Context(inst) => dss_loss(params, inst, config.dss_scope, config.mask),
    }
}

/// One optimizer step on the mean gradient of `batch`; returns the mean loss.
pub fn train_step(
    state: &mut TrainState,
    batch: &[&TrainItem],
    config: &TrainConfig,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let mut grads = None;
    let mut loss = 0.0;
    for item in batch {
        let (l, g) = item_loss(&state.params, item, config)?;
        if !l.is_finite() {
            return Err(Error::Divergence(format!("non-finite loss {l}")));
        }
        loss += l;
        sum_into(&mut grads, g);
    }
    let mut grads = grads.expect("non-empty batch");
    let scale = 1.0 / batch.len() as f64;
    grads.scale(scale);
    if !grads.is_finite() {
        return Err(Error::Divergence("non-finite gradient".into()));
    }
    state
        .optimizer
        .update(&mut state.params.blocks_mut(), &grads.blocks())?;
    if !state.params.is_finite() {
        return Err(Error::Divergence(
            "non-finite parameters after update".into(),
        ));
    }
    Ok(loss * scale)
}

fn dev_metrics(
    params: &ModelParams,
    vocab: &Vocab,
    dev: &[Example],
    config: &TrainConfig,
) -> Result<(f64, f64)> {
    let preds = dev
        .iter()
        .map(|ex| {
            let span = predict_span(
                params,
                vocab,
                ex,
                config.objective,
                config.mask,
                config.beam,
            )?;
            Ok(ex.passage.span_text(span).to_string())
        })
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate(
        dev.iter()
            .zip(&preds)
            .map(|(ex, p)| (ex.id.as_str(), p.as_str(), ex.answers.as_slice())),
    )?;
    Ok((report.em, report.f1))
}

fn run(
    items: &[TrainItem],
    dev: &[Example],
    vocab: &Vocab,
    config: &TrainConfig,
    resume: Option<TrainState>,
) -> Result<(TrainState, TrainLog)> {
    config.validate()?;
    if items.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let mut state = match resume {
        Some(s) => s,
        None => TrainState::new(vocab.len(), config)?,
    };
    if state.params.vocab_size() != vocab.len() {
        return Err(Error::Config(format!(
            "model vocabulary {} does not match {}",
            state.params.vocab_size(),
            vocab.len()
        )));
    }
    let mut log = TrainLog::default();
    for epoch in state.epochs_done..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&TrainItem> = chunk.iter().map(|&i| &items[i]).collect();
            let loss = train_step(&mut state, &batch, config).map_err(|e| match e {
                Error::Divergence(msg) => {
                    Error::Divergence(format!("epoch {epoch}, batch {b}: {msg}"))
                }
                other => other,
            })?;
            total += loss * batch.len() as f64;
        }
        state.epochs_done = epoch + 1;
        let (dev_em, dev_f1) = if dev.is_empty() {
            (None, None)
        } else {
            let (em, f1) = dev_metrics(&state.params, vocab, dev, config)?;
            (Some(em), Some(f1))
        };
        log.epochs.push(EpochLog {
            epoch,
            loss: total / items.len() as f64,
            dev_em,
            dev_f1,
        });
    }
    Ok((state, log))
}

/// Trains on gold spans with `config.objective`, evaluating on `dev` after
/// every epoch. `resume` continues from a saved state up to `config.epochs`.
pub fn train(
    train: &[Example],
    dev: &[Example],
    vocab: &Vocab,
    config: &TrainConfig,
    resume: Option<TrainState>,
) -> Result<(TrainState, TrainLog)> {
    let items: Vec<TrainItem> = train
        .iter()
        .map(|ex| TrainItem::Single {
            question: vocab.encode(&ex.question),
            passage: vocab.encode(&ex.passage),
            target: ex.gold,
        })
        .collect();
    run(&items, dev, vocab, config, resume)
}

/// Shared-normalization training; contexts without any GT span are skipped
/// and counted in the log.
pub fn train_dss(
    instances: &[DssInstance],
    dev: &[Example],
    vocab: &Vocab,
    config: &TrainConfig,
    resume: Option<TrainState>,
) -> Result<(TrainState, TrainLog)> {
    let items: Vec<TrainItem> = instances
        .iter()
        .filter(|i| i.has_supervision())
        .cloned()
        .map(TrainItem::Context)
        .collect();
    let skipped = instances.len() - items.len();
    if items.is_empty() {
        return Err(Error::NoSupervision(format!(
            "all {skipped} contexts lack an answer-bearing passage"
        )));
    }
    let (state, mut log) = run(&items, dev, vocab, config, resume)?;
    log.skipped = skipped;
    Ok((state, log))
}
