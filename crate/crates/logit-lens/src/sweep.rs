//! Gold-position sweeps over a multi-document QA dataset.
//!
//! Work units are `(position, run, instance)`. Each unit builds its prompt
//! with the seed `derive_seed(config.seed, run, instance.id)`, so one run
//! uses the same distractors and order at every gold position. Units are
//! independent and evaluated in parallel; results are collected in
//! `(position, run, instance id)` order, so the output does not depend on
//! scheduling or worker count.

use logit_lens_core::lens::lens_logits_by_layer;
use logit_lens_core::math::argmax;
use logit_lens_core::qa::{build_prompt, derive_seed, evaluate_answer, PromptTemplate};
use logit_lens_core::refinement::{aggregate_present, refinement_profile, AggregateStat};
use logit_lens_core::{Model, QAInstance, SweepConfig, TokenSequence};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::Tokenizer;

pub const SWEEP_SCHEMA: &str = "logit-lens/sweep-v1";

/// Mean and confidence interval, rounded to f32 so the JSON form is exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    /// Values that entered the statistic.
    pub n: usize,
    /// Records without a value (e.g. the gold token never became top-1).
    pub n_missing: usize,
    pub mean: Option<f32>,
    pub ci_low: Option<f32>,
    pub ci_high: Option<f32>,
}

impl StatSummary {
    fn from_values(values: &[Option<f64>], confidence: f64) -> Result<Self> {
        let (stat, n_missing) = aggregate_present(values, confidence)?;
        Ok(match stat {
            Some(AggregateStat {
                mean,
                ci_low,
                ci_high,
                n,
                ..
            }) => Self {
                n,
                n_missing,
                mean: Some(mean as f32),
                ci_low: Some(ci_low as f32),
                ci_high: Some(ci_high as f32),
            },
            None => Self {
                n: 0,
                n_missing,
                mean: None,
                ci_low: None,
                ci_high: None,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementStats {
    pub first_correct_layer: StatSummary,
    pub stabilization_layer: StatSummary,
    pub depth: StatSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionSummary {
    pub position: usize,
    /// Over per-run accuracies.
    pub accuracy: StatSummary,
    /// Pooled over every scored instance of every run.
    pub all: RefinementStats,
    /// Same, restricted to correctly answered instances.
    pub answered: RefinementStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub position: usize,
    pub run: usize,
    pub n_scored: usize,
    pub n_correct: usize,
    /// `None` when every instance of the run was skipped.
    pub accuracy: Option<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub position: usize,
    pub run: usize,
    pub instance_id: usize,
    pub seed: u64,
    pub prompt_tokens: usize,
    pub gold_token: u32,
    pub answer: String,
    pub correct: bool,
    pub top1_by_layer: Vec<u32>,
    pub first_correct_layer: Option<usize>,
    pub stabilization_layer: Option<usize>,
    pub depth: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRecord {
    pub position: usize,
    pub run: usize,
    pub instance_id: usize,
    pub reason: String,
}

/// The resolved sweep parameters as stored in results and manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfigRecord {
    pub k_documents: usize,
    pub gold_positions: Vec<usize>,
    pub n_runs: usize,
    pub seed: u64,
    pub max_answer_tokens: usize,
    pub confidence: f64,
    pub template_version: String,
}

impl SweepConfigRecord {
    pub fn new(config: &SweepConfig, template: &PromptTemplate) -> Self {
        Self {
            k_documents: config.k_documents,
            gold_positions: config.gold_positions.clone(),
            n_runs: config.n_runs,
            seed: config.seed,
            max_answer_tokens: config.max_answer_tokens,
            confidence: config.confidence,
            template_version: template.version.clone(),
        }
    }

    pub fn to_config(&self) -> SweepConfig {
        SweepConfig {
            k_documents: self.k_documents,
            gold_positions: self.gold_positions.clone(),
            n_runs: self.n_runs,
            seed: self.seed,
            max_answer_tokens: self.max_answer_tokens,
            confidence: self.confidence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub schema: String,
    pub config: SweepConfigRecord,
    pub n_layers: usize,
    pub n_instances: usize,
    /// One entry per requested position, in request order.
    pub positions: Vec<PositionSummary>,
    pub runs: Vec<RunSummary>,
    pub instances: Vec<InstanceRecord>,
    pub skipped: Vec<SkippedRecord>,
}

/// The id the model has to emit first: the first answer token in
/// continuation context (`prompt + " " + answer`). Only the primary (first)
/// answer is used.
pub fn gold_first_token(tokenizer: &Tokenizer, instance: &QAInstance, prompt: &str) -> Result<u32> {
    let answer = instance.primary_answer()?.trim();
    let alone = tokenizer.encode(&format!(" {answer}"))?;
    let prompt_ids = tokenizer.encode(prompt)?;
    let joined = tokenizer.encode(&format!("{prompt} {answer}"))?;
    if joined.ids().starts_with(prompt_ids.ids()) && joined.len() > prompt_ids.len() {
        return Ok(joined.ids()[prompt_ids.len()]);
    }
    alone
        .ids()
        .first()
        .copied()
        .ok_or_else(|| Error::InvalidInput("answer encodes to no tokens".into()))
}

/// Generated answer text: drops end-of-text and stops at the first newline.
pub fn extract_answer(tokenizer: &Tokenizer, generated: &[u32]) -> Result<String> {
    let kept: Vec<u32> = generated
        .iter()
        .copied()
        .filter(|&t| Some(t) != tokenizer.end_of_text())
        .collect();
    let text = tokenizer.decode(&kept)?;
    Ok(text.split('\n').next().unwrap_or("").trim().to_string())
}

/// Everything a sweep needs besides the data.
#[derive(Clone, Copy)]
pub struct SweepContext<'a> {
    pub model: &'a Model,
    pub tokenizer: &'a Tokenizer,
    pub template: &'a PromptTemplate,
}

enum Outcome {
    Scored(InstanceRecord),
    Skipped(SkippedRecord),
}

fn evaluate_unit(
    ctx: SweepContext<'_>,
    config: &SweepConfig,
    instance: &QAInstance,
    position: usize,
    run: usize,
) -> Result<Outcome> {
    let seed = derive_seed(config.seed, run as u64, instance.id as u64);
    let skip = |reason: String| {
        Ok(Outcome::Skipped(SkippedRecord {
            position,
            run,
            instance_id: instance.id,
            reason,
        }))
    };
    let prompt = match build_prompt(instance, config.k_documents, position, seed, ctx.template) {
        Ok(p) => p,
        Err(e) => return skip(e.to_string()),
    };
    let gold = match gold_first_token(ctx.tokenizer, instance, &prompt.text) {
        Ok(g) => g,
        Err(e) => return skip(e.to_string()),
    };
    let tokens: TokenSequence = ctx.tokenizer.encode(&prompt.text)?;
    let max_context = ctx.model.config().max_context;
    if tokens.len() + config.max_answer_tokens > max_context {
        return skip(format!(
            "prompt of {} tokens plus {} answer tokens exceeds the context of {max_context}",
            tokens.len(),
            config.max_answer_tokens
        ));
    }

    let (stream, output) = ctx.model.generate_with_stream(
        &tokens,
        config.max_answer_tokens,
        |t| ctx.tokenizer.is_stop_token(t),
    )?;
    let last = tokens.len() - 1;
    let top1_by_layer: Vec<u32> = lens_logits_by_layer(ctx.model, &stream, last)?
        .iter()
        .map(|logits| argmax(logits) as u32)
        .collect();
    let profile = refinement_profile(&top1_by_layer, gold)?;
    let answer = extract_answer(ctx.tokenizer, &output.ids()[tokens.len()..])?;
    let correct = evaluate_answer(&answer, &instance.answers);
    Ok(Outcome::Scored(InstanceRecord {
        position,
        run,
        instance_id: instance.id,
        seed,
        prompt_tokens: tokens.len(),
        gold_token: gold,
        answer,
        correct,
        top1_by_layer,
        first_correct_layer: profile.first_correct_layer,
        stabilization_layer: profile.stabilization_layer,
        depth: profile.depth,
    }))
}

/// Runs the sweep on `workers` threads (all cores when `None`).
pub fn run_sweep(
    ctx: SweepContext<'_>,
    dataset: &[QAInstance],
    config: &SweepConfig,
    workers: Option<usize>,
) -> Result<SweepResult> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidInput("dataset is empty".into()));
    }
    let mut ids: Vec<usize> = dataset.iter().map(|i| i.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidInput("instance ids are not unique".into()));
    }

    let mut order: Vec<&QAInstance> = dataset.iter().collect();
    order.sort_by_key(|i| i.id);
    let mut units = Vec::with_capacity(config.gold_positions.len() * config.n_runs * order.len());
    for &p in &config.gold_positions {
        for r in 0..config.n_runs {
            units.extend(order.iter().map(|&inst| (p, r, inst)));
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    let outcomes: Vec<Outcome> = pool.install(|| {
        units
            .par_iter()
            .map(|&(p, r, inst)| evaluate_unit(ctx, config, inst, p, r))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut instances = Vec::new();
    let mut skipped = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Scored(rec) => instances.push(rec),
            Outcome::Skipped(s) => {
                log::warn!(
                    "skipped instance {} (position {}, run {}): {}",
                    s.instance_id,
                    s.position,
                    s.run,
                    s.reason
                );
                skipped.push(s);
            }
        }
    }
    let record = SweepConfigRecord::new(config, ctx.template);
    summarize(record, ctx.model.config().n_layers, dataset.len(), instances, skipped)
}

/// Builds the aggregate tables from instance-level records. Also used to
/// re-derive a stored result from its own records.
pub fn summarize(
    config: SweepConfigRecord,
    n_layers: usize,
    n_instances: usize,
    instances: Vec<InstanceRecord>,
    skipped: Vec<SkippedRecord>,
) -> Result<SweepResult> {
    let mut runs = Vec::new();
    let mut positions = Vec::new();
    for &position in &config.gold_positions {
        let mut run_acc = Vec::with_capacity(config.n_runs);
        for run in 0..config.n_runs {
            let recs = instances.iter().filter(|r| r.position == position && r.run == run);
            let (n_scored, n_correct) = recs.fold((0, 0), |(n, c), r| (n + 1, c + r.correct as usize));
            let accuracy = (n_scored > 0).then(|| n_correct as f64 / n_scored as f64);
            run_acc.push(accuracy);
            runs.push(RunSummary {
                position,
                run,
                n_scored,
                n_correct,
                accuracy: accuracy.map(|a| a as f32),
            });
        }
        let at_pos: Vec<&InstanceRecord> = instances.iter().filter(|r| r.position == position).collect();
        let answered: Vec<&InstanceRecord> = at_pos.iter().copied().filter(|r| r.correct).collect();
        positions.push(PositionSummary {
            position,
            accuracy: StatSummary::from_values(&run_acc, config.confidence)?,
            all: refinement_stats(&at_pos, config.confidence)?,
            answered: refinement_stats(&answered, config.confidence)?,
        });
    }
    Ok(SweepResult {
        schema: SWEEP_SCHEMA.into(),
        config,
        n_layers,
        n_instances,
        positions,
        runs,
        instances,
        skipped,
    })
}

fn refinement_stats(records: &[&InstanceRecord], confidence: f64) -> Result<RefinementStats> {
    let pick = |f: fn(&InstanceRecord) -> Option<usize>| -> Vec<Option<f64>> {
        records.iter().map(|r| f(r).map(|v| v as f64)).collect()
    };
    Ok(RefinementStats {
        first_correct_layer: StatSummary::from_values(&pick(|r| r.first_correct_layer), confidence)?,
        stabilization_layer: StatSummary::from_values(&pick(|r| r.stabilization_layer), confidence)?,
        depth: StatSummary::from_values(&pick(|r| r.depth), confidence)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok() -> Tokenizer {
        Tokenizer::gpt2().unwrap()
    }

    fn instance(answers: &[&str]) -> QAInstance {
        QAInstance {
            id: 0,
            question: "q".into(),
            answers: answers.iter().map(|s| s.to_string()).collect(),
            gold_document: logit_lens_core::Document {
                title: "t".into(),
                text: "x".into(),
            },
            distractor_pool: vec![],
        }
    }

    #[test]
    fn gold_token_uses_leading_space_and_first_alias() {
        let t = tok();
        let prompt = "Question: capital of France?\nAnswer:";
        assert_eq!(gold_first_token(&t, &instance(&["Paris"]), prompt).unwrap(), 6342);
        assert_eq!(gold_first_token(&t, &instance(&["Paris", "Lyon"]), prompt).unwrap(), 6342);
        let multi = gold_first_token(&t, &instance(&["Albert Einstein"]), prompt).unwrap();
        assert_eq!(multi, t.encode(" Albert").unwrap().ids()[0]);
        assert!(gold_first_token(&t, &instance(&[""]), prompt).is_err());
    }

    #[test]
    fn answer_extraction() {
        let t = tok();
        let ids = t.encode(" Paris, France\nQuestion").unwrap();
        assert_eq!(extract_answer(&t, ids.ids()).unwrap(), "Paris, France");
        let mut ids = t.encode(" Paris").unwrap().into_inner();
        ids.push(50256);
        assert_eq!(extract_answer(&t, &ids).unwrap(), "Paris");
    }
}
