//! Prefix value models and guided decoding.
//!
//! A prefix value model scores a partial response along one dimension
//! (safety, value, knowledge). At decode time a rule-based gate turns the
//! prompt into routing weights, the policy proposes a pool of short
//! continuations, and the continuation whose extended prefix maximizes the
//! weighted score is kept.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{sample_continuation, PolicyParams, Prompt, Response, SamplerConfig, Token};
use crate::reward::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dimension {
    Safety,
    Value,
    Knowledge,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Dimension::Safety, Dimension::Value, Dimension::Knowledge];
}

pub trait PrefixScorer: Sync {
    fn dimension(&self) -> Dimension;

    /// Score in `[0, 1]` of `prefix` as a partial response to `context`.
    fn score(&self, context: &[Token], prefix: &[Token]) -> Result<f64>;
}

/// Table of logits indexed by the last `window` tokens of context plus
/// prefix, squashed through a sigmoid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixValueModel {
    dimension: Dimension,
    window: usize,
    vocab_size: usize,
    logits: Vec<f64>,
}

impl PrefixValueModel {
    pub fn zeros(dimension: Dimension, window: usize, vocab_size: usize) -> Result<Self> {
        let states = table_size(window, vocab_size)?;
        Ok(Self {
            dimension,
            window,
            vocab_size,
            logits: vec![0.0; states],
        })
    }

    pub fn from_logits(
        dimension: Dimension,
        window: usize,
        vocab_size: usize,
        logits: Vec<f64>,
    ) -> Result<Self> {
        let states = table_size(window, vocab_size)?;
        if logits.len() != states {
            return Err(Error::Params(format!(
                "expected {states} logits, got {}",
                logits.len()
            )));
        }
        Ok(Self {
            dimension,
            window,
            vocab_size,
            logits,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// Table index for the prefix `prefix` of a response to `context`.
    pub fn state(&self, context: &[Token], prefix: &[Token]) -> Result<usize> {
        if context.len() + prefix.len() < self.window {
            return Err(Error::ContextTooShort {
                len: context.len() + prefix.len(),
                order: self.window,
            });
        }
        let mut state = 0usize;
        let from_prefix = self.window.min(prefix.len());
        let from_context = self.window - from_prefix;
        let tail = context[context.len() - from_context..]
            .iter()
            .chain(&prefix[prefix.len() - from_prefix..]);
        for &t in tail {
            if t as usize >= self.vocab_size {
                return Err(Error::TokenOutOfRange {
                    token: t,
                    size: self.vocab_size,
                });
            }
            state = state * self.vocab_size + t as usize;
        }
        Ok(state)
    }

    pub fn value_at(&self, state: usize) -> f64 {
        sigmoid(self.logits[state])
    }
}

fn table_size(window: usize, vocab_size: usize) -> Result<usize> {
    if vocab_size == 0 {
        return Err(Error::Params("value model vocabulary is empty".into()));
    }
    u32::try_from(window)
        .ok()
        .and_then(|w| vocab_size.checked_pow(w))
        .filter(|&n| n <= 1 << 20)
        .ok_or_else(|| Error::Params(format!("value table {vocab_size}^{window} is too large")))
}

impl PrefixScorer for PrefixValueModel {
    fn dimension(&self) -> Dimension {
        self.dimension
    }

    fn score(&self, context: &[Token], prefix: &[Token]) -> Result<f64> {
        Ok(self.value_at(self.state(context, prefix)?))
    }
}

/// Scores 0 for any prefix containing an unsafe token, 1 otherwise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleSafetyScorer {
    pub unsafe_tokens: BTreeSet<Token>,
}

impl PrefixScorer for OracleSafetyScorer {
    fn dimension(&self) -> Dimension {
        Dimension::Safety
    }

    fn score(&self, _context: &[Token], prefix: &[Token]) -> Result<f64> {
        Ok(if prefix.iter().any(|t| self.unsafe_tokens.contains(t)) {
            0.0
        } else {
            1.0
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantScorer(pub Dimension, pub f64);

impl PrefixScorer for ConstantScorer {
    fn dimension(&self) -> Dimension {
        self.0
    }

    fn score(&self, _context: &[Token], _prefix: &[Token]) -> Result<f64> {
        Ok(self.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvmExample {
    pub prompt: Prompt,
    pub response: Response,
    pub reward: f64,
}

/// Mean over examples of `(1/|y|) sum_t (V(p, y_<t) - r)^2`, and its
/// gradient with respect to the logits when `with_grad`.
pub fn pvm_loss(
    model: &PrefixValueModel,
    data: &[PvmExample],
    with_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::Empty("value model dataset"));
    }
    let mut grad = if with_grad {
        vec![0.0; model.logits.len()]
    } else {
        Vec::new()
    };
    let n = data.len() as f64;
    let mut loss = 0.0;
    for ex in data {
        let y = &ex.response.tokens;
        if y.is_empty() {
            return Err(Error::EmptyResponse);
        }
        let inv_len = 1.0 / y.len() as f64;
        for t in 0..y.len() {
            let s = model.state(&ex.prompt.context, &y[..t])?;
            let v = model.value_at(s);
            let err = v - ex.reward;
            loss += err * err * inv_len / n;
            if with_grad {
                grad[s] += 2.0 * err * v * (1.0 - v) * inv_len / n;
            }
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PvmTraining {
    pub model: PrefixValueModel,
    /// Loss before each gradient step, then the final loss.
    pub losses: Vec<f64>,
}

/// Full-batch gradient descent from a zero table.
pub fn pvm_train(
    data: &[PvmExample],
    dimension: Dimension,
    window: usize,
    vocab_size: usize,
    epochs: usize,
    lr: f64,
) -> Result<PvmTraining> {
    if data.is_empty() {
        return Err(Error::Empty("value model dataset"));
    }
    if let Some(ex) = data.iter().find(|ex| !(0.0..=1.0).contains(&ex.reward)) {
        return Err(Error::Config(format!(
            "reward {} is outside [0, 1]",
            ex.reward
        )));
    }
    let mut model = PrefixValueModel::zeros(dimension, window, vocab_size)?;
    let mut losses = Vec::with_capacity(epochs + 1);
    for _ in 0..epochs {
        let (loss, grad) = pvm_loss(&model, data, true)?;
        losses.push(loss);
        for (w, g) in model.logits.iter_mut().zip(&grad) {
            *w -= lr * g;
        }
    }
    losses.push(pvm_loss(&model, data, false)?.0);
    Ok(PvmTraining { model, losses })
}

/// Nonnegative weights over (safety, value, knowledge), summing to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct RoutingVector([f64; 3]);

impl RoutingVector {
    pub fn new(weights: [f64; 3]) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!(
                "routing weights {weights:?} must be finite and nonnegative"
            )));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Config("routing weights are all zero".into()));
        }
        Ok(Self(weights.map(|w| w / total)))
    }

    pub fn uniform() -> Self {
        Self([1.0 / 3.0; 3])
    }

    pub fn weights(&self) -> [f64; 3] {
        self.0
    }

    pub fn combine(&self, scores: &[f64; 3]) -> f64 {
        self.0[0] * scores[0] + self.0[1] * scores[1] + self.0[2] * scores[2]
    }
}

impl TryFrom<[f64; 3]> for RoutingVector {
    type Error = Error;

    fn try_from(w: [f64; 3]) -> Result<Self> {
        Self::new(w)
    }
}

impl From<RoutingVector> for [f64; 3] {
    fn from(r: RoutingVector) -> Self {
        r.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateCondition {
    Risky,
    Tag(String),
}

impl GateCondition {
    pub fn matches(&self, prompt: &Prompt) -> bool {
        match self {
            GateCondition::Risky => prompt.risk_flag,
            GateCondition::Tag(tag) => prompt.has_tag(tag),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateRule {
    pub when: GateCondition,
    pub routing: RoutingVector,
}

/// First matching rule wins; `default` applies otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateRules {
    pub rules: Vec<GateRule>,
    pub default: RoutingVector,
}

impl Default for GateRules {
    fn default() -> Self {
        Self {
            rules: vec![
                GateRule {
                    when: GateCondition::Risky,
                    routing: RoutingVector([0.8, 0.1, 0.1]),
                },
                GateRule {
                    when: GateCondition::Tag("knowledge".into()),
                    routing: RoutingVector([0.1, 0.1, 0.8]),
                },
            ],
            default: RoutingVector::uniform(),
        }
    }
}

pub fn gate(prompt: &Prompt, rules: &GateRules) -> RoutingVector {
    rules
        .rules
        .iter()
        .find(|r| r.when.matches(prompt))
        .map_or(rules.default, |r| r.routing)
}

/// The three scorers in (safety, value, knowledge) order.
pub struct ScorerSet<'a> {
    pub scorers: [&'a dyn PrefixScorer; 3],
}

impl<'a> ScorerSet<'a> {
    pub fn new(
        safety: &'a dyn PrefixScorer,
        value: &'a dyn PrefixScorer,
        knowledge: &'a dyn PrefixScorer,
    ) -> Result<Self> {
        for (s, d) in [safety, value, knowledge].iter().zip(Dimension::ALL) {
            if s.dimension() != d {
                return Err(Error::Config(format!(
                    "scorer for {:?} is in the {d:?} slot",
                    s.dimension()
                )));
            }
        }
        Ok(Self {
            scorers: [safety, value, knowledge],
        })
    }

    pub fn score(&self, context: &[Token], prefix: &[Token]) -> Result<[f64; 3]> {
        Ok([
            self.scorers[0].score(context, prefix)?,
            self.scorers[1].score(context, prefix)?,
            self.scorers[2].score(context, prefix)?,
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub index: usize,
    pub candidate: Vec<Token>,
    pub scores: [f64; 3],
    pub combined: f64,
}

fn score_candidate(
    scorers: &ScorerSet<'_>,
    routing: &RoutingVector,
    context: &[Token],
    prefix: &[Token],
    index: usize,
    candidate: &[Token],
) -> Result<CandidateScore> {
    let mut extended = prefix.to_vec();
    extended.extend_from_slice(candidate);
    let scores = scorers.score(context, &extended)?;
    Ok(CandidateScore {
        index,
        candidate: candidate.to_vec(),
        scores,
        combined: routing.combine(&scores),
    })
}

/// Highest combined score wins; ties go to the lowest candidate index.
pub fn select_step(
    candidates: &[Vec<Token>],
    scorers: &ScorerSet<'_>,
    routing: &RoutingVector,
    context: &[Token],
    prefix: &[Token],
) -> Result<CandidateScore> {
    let mut best: Option<CandidateScore> = None;
    for (i, c) in candidates.iter().enumerate() {
        let scored = score_candidate(scorers, routing, context, prefix, i, c)?;
        if best.as_ref().is_none_or(|b| scored.combined > b.combined) {
            best = Some(scored);
        }
    }
    best.ok_or(Error::Empty("candidate pool"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    /// Maximum number of guided steps.
    pub lookahead_steps: usize,
    pub pool_size: usize,
    pub beam_width: usize,
    /// Tokens per candidate continuation.
    pub chunk_len: usize,
    pub sampler: SamplerConfig,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            lookahead_steps: 100,
            pool_size: 4,
            beam_width: 1,
            chunk_len: 4,
            sampler: SamplerConfig::default(),
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lookahead_steps == 0
            || self.pool_size == 0
            || self.beam_width == 0
            || self.chunk_len == 0
        {
            return Err(Error::Config(format!(
                "lookahead, pool, beam and chunk must be positive: {self:?}"
            )));
        }
        self.sampler.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub step: usize,
    /// Beam the pool was drawn for.
    pub beam: usize,
    pub routing: [f64; 3],
    pub candidates: Vec<CandidateScore>,
    /// Candidate indices kept for the next step.
    pub selected: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidedOutput {
    pub response: Response,
    pub audit: Vec<AuditEntry>,
}

impl GuidedOutput {
    /// One JSON object per line.
    pub fn audit_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for entry in &self.audit {
            out.push_str(&serde_json::to_string(entry)?);
            out.push('\n');
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
struct Beam {
    tokens: Vec<Token>,
    terminated: bool,
    score: f64,
}

/// Step-level guided decoding. Each step draws `pool_size` chunks per live
/// beam, scores every extended prefix, and keeps the best `beam_width`
/// prefixes (stable order on ties). Stops when every beam has ended, the
/// step budget is spent, or the sampler's length limit is reached.
pub fn guided_decode<R: Rng + ?Sized>(
    params: &PolicyParams,
    prompt: &Prompt,
    scorers: &ScorerSet<'_>,
    rules: &GateRules,
    cfg: &DecodeConfig,
    rng: &mut R,
) -> Result<GuidedOutput> {
    cfg.validate()?;
    let routing = gate(prompt, rules);
    let context = &prompt.context;
    let max_len = cfg.sampler.max_length;
    let mut beams = vec![Beam {
        tokens: Vec::new(),
        terminated: false,
        score: f64::NEG_INFINITY,
    }];
    let mut audit = Vec::new();
    for step in 0..cfg.lookahead_steps {
        if beams
            .iter()
            .all(|b| b.terminated || b.tokens.len() >= max_len)
        {
            break;
        }
        // (beam, candidate) pairs in stable order.
        let mut pool: Vec<(Beam, usize, usize)> = Vec::new();
        for (bi, beam) in beams.iter().enumerate() {
            if beam.terminated || beam.tokens.len() >= max_len {
                pool.push((beam.clone(), bi, usize::MAX));
                continue;
            }
            let budget = cfg.chunk_len.min(max_len - beam.tokens.len());
            let mut beam_context = context.clone();
            beam_context.extend_from_slice(&beam.tokens);
            let mut candidates = Vec::with_capacity(cfg.pool_size);
            let mut ended = Vec::with_capacity(cfg.pool_size);
            for _ in 0..cfg.pool_size {
                let (chunk, terminated) =
                    sample_continuation(params, &beam_context, budget, &cfg.sampler, rng)?;
                candidates.push(chunk);
                ended.push(terminated);
            }
            let scored = candidates
                .iter()
                .enumerate()
                .map(|(i, c)| score_candidate(scorers, &routing, context, &beam.tokens, i, c))
                .collect::<Result<Vec<_>>>()?;
            for (sc, terminated) in scored.iter().zip(&ended) {
                let mut tokens = beam.tokens.clone();
                tokens.extend_from_slice(&sc.candidate);
                pool.push((
                    Beam {
                        tokens,
                        terminated: *terminated,
                        score: sc.combined,
                    },
                    bi,
                    sc.index,
                ));
            }
            audit.push(AuditEntry {
                step,
                beam: bi,
                routing: routing.weights(),
                candidates: scored,
                selected: Vec::new(),
            });
        }
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.sort_by(|&a, &b| pool[b].0.score.total_cmp(&pool[a].0.score).then(a.cmp(&b)));
        order.truncate(cfg.beam_width);
        order.sort_unstable();
        let first_entry = audit.len() - audit.iter().rev().take_while(|e| e.step == step).count();
        for &k in &order {
            let (_, bi, ci) = &pool[k];
            if *ci != usize::MAX {
                if let Some(entry) = audit[first_entry..].iter_mut().find(|e| e.beam == *bi) {
                    entry.selected.push(*ci);
                }
            }
        }
        beams = order.into_iter().map(|k| pool[k].0.clone()).collect();
    }
    let best = beams
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.score.total_cmp(&b.score).then(j.cmp(i)))
        .map(|(_, b)| b.clone())
        .expect("at least one beam survives");
    Ok(GuidedOutput {
        response: Response::new(best.tokens, best.terminated),
        audit,
    })
}

/// Token ids of the adversarial decoding scenario.
pub mod adversarial {
    use crate::policy::Token;
    pub const EOS: Token = 0;
    pub const SAFE: Token = 1;
    pub const UNSAFE: Token = 2;
    pub const QUERY: Token = 3;
    pub const VOCAB: usize = 4;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversarialConfig {
    pub prompts: usize,
    pub decode: DecodeConfig,
    /// Unguided samples used to fit the value and knowledge models.
    pub train_samples: usize,
    pub train_epochs: usize,
    pub train_lr: f64,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        Self {
            prompts: 500,
            decode: DecodeConfig {
                lookahead_steps: 3,
                pool_size: 4,
                beam_width: 1,
                chunk_len: 1,
                sampler: SamplerConfig::exact(3, Some(adversarial::EOS)),
            },
            train_samples: 256,
            train_epochs: 300,
            train_lr: 5.0,
        }
    }
}

/// Risky prompts answered by a policy that usually emits an unsafe token,
/// an oracle safety scorer, and value and knowledge models fitted to
/// unguided samples (value: share of safe tokens; knowledge: whether the
/// response terminated).
#[derive(Debug, Clone)]
pub struct AdversarialScenario {
    pub params: PolicyParams,
    pub prompts: Vec<Prompt>,
    pub rules: GateRules,
    pub safety: OracleSafetyScorer,
    pub value: PrefixValueModel,
    pub knowledge: PrefixValueModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptOutcome {
    pub guided_unsafe: usize,
    pub unguided_unsafe: usize,
    pub guided_len: usize,
    pub unguided_len: usize,
    /// Every pool the guided decoder saw had a candidate the safety scorer
    /// passed.
    pub clean_pools: bool,
}

impl AdversarialScenario {
    pub fn build(cfg: &AdversarialConfig, seed: u64) -> Result<Self> {
        use adversarial::*;
        cfg.decode.validate()?;
        if cfg.prompts == 0 || cfg.train_samples == 0 {
            return Err(Error::Config(
                "adversarial scenario needs prompts and training samples".into(),
            ));
        }
        let mut params = PolicyParams::zeros(1, VOCAB)?;
        let rows: [(Token, [f64; 4]); 4] = [
            (EOS, [0.0, 0.0, 0.0, -8.0]),
            (SAFE, [0.5, 0.5, 1.0, -8.0]),
            (UNSAFE, [0.0, 0.0, 1.5, -8.0]),
            (QUERY, [-1.0, 1.0, 1.2, -8.0]),
        ];
        for (state, row) in rows {
            params.row_mut(state as usize).copy_from_slice(&row);
        }
        let mut rng = crate::seed::stream(seed, "adversarial-prompts", 0);
        let prompts = (0..cfg.prompts)
            .map(|i| {
                let lead = rng.gen_range(0..4);
                let mut context: Vec<Token> = (0..lead)
                    .map(|_| if rng.gen_bool(0.5) { SAFE } else { QUERY })
                    .collect();
                context.push(QUERY);
                Ok(Prompt::new(format!("adv-{i}"), context)?.risky(true))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut value_data = Vec::with_capacity(cfg.train_samples);
        let mut knowledge_data = Vec::with_capacity(cfg.train_samples);
        let mut rng = crate::seed::stream(seed, "pvm-train-samples", 0);
        for i in 0..cfg.train_samples {
            let prompt = &prompts[i % prompts.len()];
            let response = crate::policy::sample(&params, prompt, &cfg.decode.sampler, &mut rng)?;
            if response.is_empty() {
                continue;
            }
            let safe_share = response.tokens.iter().filter(|&&t| t == SAFE).count() as f64
                / response.len() as f64;
            let terminated = if response.terminated { 1.0 } else { 0.0 };
            value_data.push(PvmExample {
                prompt: prompt.clone(),
                response: response.clone(),
                reward: safe_share,
            });
            knowledge_data.push(PvmExample {
                prompt: prompt.clone(),
                response,
                reward: terminated,
            });
        }
        let value = pvm_train(
            &value_data,
            Dimension::Value,
            1,
            VOCAB,
            cfg.train_epochs,
            cfg.train_lr,
        )?
        .model;
        let knowledge = pvm_train(
            &knowledge_data,
            Dimension::Knowledge,
            1,
            VOCAB,
            cfg.train_epochs,
            cfg.train_lr,
        )?
        .model;
        Ok(Self {
            params,
            prompts,
            rules: GateRules::default(),
            safety: OracleSafetyScorer {
                unsafe_tokens: BTreeSet::from([UNSAFE]),
            },
            value,
            knowledge,
        })
    }

    pub fn scorers(&self) -> ScorerSet<'_> {
        ScorerSet {
            scorers: [&self.safety, &self.value, &self.knowledge],
        }
    }

    /// Guided and unguided decoding of prompt `index`, each from its own
    /// seed stream.
    pub fn decode_prompt(
        &self,
        cfg: &AdversarialConfig,
        seed: u64,
        index: usize,
    ) -> Result<(PromptOutcome, GuidedOutput)> {
        let prompt = &self.prompts[index];
        let mut rng = crate::seed::stream(seed, "guided-decode", index as u64);
        let guided = guided_decode(
            &self.params,
            prompt,
            &self.scorers(),
            &self.rules,
            &cfg.decode,
            &mut rng,
        )?;
        let mut rng = crate::seed::stream(seed, "unguided-decode", index as u64);
        let unguided = crate::policy::sample(&self.params, prompt, &cfg.decode.sampler, &mut rng)?;
        let count_unsafe = |r: &Response| {
            r.tokens
                .iter()
                .filter(|t| self.safety.unsafe_tokens.contains(t))
                .count()
        };
        let clean_pools = guided
            .audit
            .iter()
            .all(|e| e.candidates.iter().any(|c| c.scores[0] == 1.0));
        Ok((
            PromptOutcome {
                guided_unsafe: count_unsafe(&guided.response),
                unguided_unsafe: count_unsafe(&unguided),
                guided_len: guided.response.len(),
                unguided_len: unguided.len(),
                clean_pools,
            },
            guided,
        ))
    }

    /// Decodes every prompt in parallel; results are in prompt order.
    pub fn run(
        &self,
        cfg: &AdversarialConfig,
        seed: u64,
    ) -> Result<Vec<(PromptOutcome, GuidedOutput)>> {
        use rayon::prelude::*;
        (0..self.prompts.len())
            .into_par_iter()
            .map(|i| self.decode_prompt(cfg, seed, i))
            .collect()
    }
}
