//! Tabular softmax policies over a small token vocabulary.
//!
//! A policy of order `m` conditions each next-token distribution on the last
//! `m` tokens of (prompt context ++ response so far). The logits table has one
//! row per possible window, `vocab_size^m` rows in total, which keeps exact
//! log-probabilities and score-function gradients cheap to compute.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Token = u32;

/// Roles that reserve a token id in a [`Vocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Marker {
    ThinkOpen,
    ThinkClose,
    Answer,
    Eos,
    Refusal,
    Separator,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VocabularyDoc {
    size: usize,
    #[serde(default)]
    markers: BTreeMap<Marker, Token>,
    #[serde(default)]
    unsafe_tokens: BTreeSet<Token>,
}

/// Token alphabet with reserved marker ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyDoc", into = "VocabularyDoc")]
pub struct Vocabulary {
    size: usize,
    markers: BTreeMap<Marker, Token>,
    unsafe_tokens: BTreeSet<Token>,
}

impl TryFrom<VocabularyDoc> for Vocabulary {
    type Error = Error;

    fn try_from(doc: VocabularyDoc) -> Result<Self> {
        Vocabulary::new(doc.size, doc.markers, doc.unsafe_tokens)
    }
}

impl From<Vocabulary> for VocabularyDoc {
    fn from(v: Vocabulary) -> Self {
        VocabularyDoc {
            size: v.size,
            markers: v.markers,
            unsafe_tokens: v.unsafe_tokens,
        }
    }
}

impl Vocabulary {
    pub fn new(
        size: usize,
        markers: BTreeMap<Marker, Token>,
        unsafe_tokens: BTreeSet<Token>,
    ) -> Result<Self> {
        if size < 4 {
            return Err(Error::Vocabulary(format!(
                "size {size} is below the minimum of 4"
            )));
        }
        let mut seen = BTreeSet::new();
        let reserved = markers.values().chain(unsafe_tokens.iter());
        for &id in reserved {
            if id as usize >= size {
                return Err(Error::Vocabulary(format!(
                    "reserved id {id} is outside a vocabulary of size {size}"
                )));
            }
            if !seen.insert(id) {
                return Err(Error::Vocabulary(format!("reserved id {id} is used twice")));
            }
        }
        Ok(Self {
            size,
            markers,
            unsafe_tokens,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn marker(&self, marker: Marker) -> Option<Token> {
        self.markers.get(&marker).copied()
    }

    pub fn eos(&self) -> Option<Token> {
        self.marker(Marker::Eos)
    }

    pub fn is_unsafe(&self, token: Token) -> bool {
        self.unsafe_tokens.contains(&token)
    }

    pub fn unsafe_tokens(&self) -> &BTreeSet<Token> {
        &self.unsafe_tokens
    }

    pub fn contains(&self, token: Token) -> bool {
        (token as usize) < self.size
    }
}

/// A query together with its optional reference answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    pub context: Vec<Token>,
    #[serde(default)]
    pub reference_answer: Option<Vec<Token>>,
    #[serde(default)]
    pub risk_flag: bool,
    /// Free-form labels consulted by gating rules (e.g. `"knowledge"`).
    #[serde(default)]
    pub tags: Vec<String>,
}

impl Prompt {
    pub fn new(id: impl Into<String>, context: Vec<Token>) -> Result<Self> {
        let id = id.into();
        if context.is_empty() {
            return Err(Error::Prompt {
                id,
                reason: "context is empty".into(),
            });
        }
        Ok(Self {
            id,
            context,
            reference_answer: None,
            risk_flag: false,
            tags: Vec::new(),
        })
    }

    pub fn with_reference(mut self, answer: Vec<Token>) -> Self {
        self.reference_answer = Some(answer);
        self
    }

    pub fn risky(mut self, flag: bool) -> Self {
        self.risk_flag = flag;
        self
    }

    pub fn tagged(mut self, tag: impl Into<String>) -> Self {
        self.tags.push(tag.into());
        self
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }

    /// Checks the prompt against a vocabulary.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        let bad = |reason: String| Error::Prompt {
            id: self.id.clone(),
            reason,
        };
        if self.context.is_empty() {
            return Err(bad("context is empty".into()));
        }
        if let Some(&t) = self.context.iter().find(|&&t| !vocab.contains(t)) {
            return Err(bad(format!("context token {t} is outside the vocabulary")));
        }
        if let (Some(answer), Some(eos)) = (&self.reference_answer, vocab.eos()) {
            if answer.contains(&eos) {
                return Err(bad(
                    "reference answer contains the end-of-sequence marker".into()
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub tokens: Vec<Token>,
    /// True when generation ended on the end-of-sequence token rather than
    /// the length cap.
    pub terminated: bool,
}

impl Response {
    pub fn new(tokens: Vec<Token>, terminated: bool) -> Self {
        Self { tokens, terminated }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: usize,
    pub max_length: usize,
    /// Token that ends generation. It is kept as the last response token.
    pub eos: Option<Token>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            temperature: 0.6,
            top_p: 0.9,
            top_k: 50,
            max_length: 64,
            eos: None,
        }
    }
}

impl SamplerConfig {
    /// Untempered, unfiltered sampling: draws come from exactly the
    /// distribution that [`log_prob`] scores. Used for training rollouts.
    pub fn exact(max_length: usize, eos: Option<Token>) -> Self {
        Self {
            temperature: 1.0,
            top_p: 1.0,
            top_k: usize::MAX,
            max_length,
            eos,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.temperature > 0.0
            && self.temperature.is_finite()
            && self.top_p > 0.0
            && self.top_p <= 1.0
            && self.top_k >= 1
            && self.max_length >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid sampler settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SnapshotDoc {
    order: usize,
    vocab_size: usize,
    logits: Vec<f64>,
}

/// Logits table of an order-`m` Markov token policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SnapshotDoc", into = "SnapshotDoc")]
pub struct PolicyParams {
    order: usize,
    vocab_size: usize,
    logits: Vec<f64>,
}

impl TryFrom<SnapshotDoc> for PolicyParams {
    type Error = Error;

    fn try_from(doc: SnapshotDoc) -> Result<Self> {
        PolicyParams::new(doc.order, doc.vocab_size, doc.logits)
    }
}

impl From<PolicyParams> for SnapshotDoc {
    fn from(p: PolicyParams) -> Self {
        SnapshotDoc {
            order: p.order,
            vocab_size: p.vocab_size,
            logits: p.logits,
        }
    }
}

/// Largest table the dense representation is meant for.
const MAX_TABLE_ENTRIES: usize = 1 << 20;

fn state_count(order: usize, vocab_size: usize) -> Option<usize> {
    let mut n: usize = 1;
    for _ in 0..order {
        n = n.checked_mul(vocab_size)?;
    }
    Some(n)
}

impl PolicyParams {
    pub fn new(order: usize, vocab_size: usize, logits: Vec<f64>) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::Params(format!("vocab size {vocab_size} is below 2")));
        }
        let states = state_count(order, vocab_size)
            .filter(|&s| s.saturating_mul(vocab_size) <= MAX_TABLE_ENTRIES)
            .ok_or_else(|| {
                Error::Params(format!(
                    "order {order} over {vocab_size} tokens is too large"
                ))
            })?;
        if logits.len() != states * vocab_size {
            return Err(Error::Params(format!(
                "expected {} logits ({states} states x {vocab_size} tokens), got {}",
                states * vocab_size,
                logits.len()
            )));
        }
        if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
            return Err(Error::Params(format!("logit {i} is not finite")));
        }
        Ok(Self {
            order,
            vocab_size,
            logits,
        })
    }

    pub fn zeros(order: usize, vocab_size: usize) -> Result<Self> {
        let states = state_count(order, vocab_size).unwrap_or(usize::MAX);
        Self::new(
            order,
            vocab_size,
            vec![0.0; states.saturating_mul(vocab_size)],
        )
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn num_states(&self) -> usize {
        self.logits.len() / self.vocab_size
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn row(&self, state: usize) -> &[f64] {
        let v = self.vocab_size;
        &self.logits[state * v..(state + 1) * v]
    }

    pub fn row_mut(&mut self, state: usize) -> &mut [f64] {
        let v = self.vocab_size;
        &mut self.logits[state * v..(state + 1) * v]
    }

    pub fn set(&mut self, state: usize, token: Token, value: f64) {
        self.row_mut(state)[token as usize] = value;
    }

    /// `self += scale * delta`, with `delta` laid out like the logits table.
    pub fn add_scaled(&mut self, delta: &[f64], scale: f64) {
        assert_eq!(delta.len(), self.logits.len(), "gradient shape mismatch");
        for (l, d) in self.logits.iter_mut().zip(delta) {
            *l += scale * d;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.logits.iter().all(|v| v.is_finite())
    }

    /// Row index of a window of exactly `order` tokens, oldest first.
    pub fn state_index(&self, window: &[Token]) -> usize {
        debug_assert_eq!(window.len(), self.order);
        window
            .iter()
            .fold(0usize, |s, &t| s * self.vocab_size + t as usize)
    }

    /// Row index after appending `token` to the window behind `state`.
    pub fn next_state(&self, state: usize, token: Token) -> usize {
        if self.order == 0 {
            return 0;
        }
        let states = self.num_states();
        (state * self.vocab_size + token as usize) % states
    }

    /// Row index for the last `order` tokens of `context`.
    pub fn initial_state(&self, context: &[Token]) -> Result<usize> {
        if context.len() < self.order {
            return Err(Error::ContextTooShort {
                len: context.len(),
                order: self.order,
            });
        }
        self.check_tokens(context)?;
        Ok(self.state_index(&context[context.len() - self.order..]))
    }

    pub fn probs(&self, state: usize) -> Vec<f64> {
        softmax(self.row(state))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Order-independent content fingerprint, used to tie rollouts to the
    /// snapshot that produced them.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::with_capacity(16 + self.logits.len() * 8);
        bytes.extend_from_slice(&(self.order as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.vocab_size as u64).to_le_bytes());
        for v in &self.logits {
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        crate::seed::fnv1a64(&bytes)
    }

    fn check_tokens(&self, tokens: &[Token]) -> Result<()> {
        match tokens.iter().find(|&&t| t as usize >= self.vocab_size) {
            Some(&token) => Err(Error::TokenOutOfRange {
                token,
                size: self.vocab_size,
            }),
            None => Ok(()),
        }
    }

    /// Row indices visited while emitting each response token.
    pub fn trajectory_states(&self, context: &[Token], response: &[Token]) -> Result<Vec<usize>> {
        self.check_tokens(response)?;
        let mut state = self.initial_state(context)?;
        let mut states = Vec::with_capacity(response.len());
        for &t in response {
            states.push(state);
            state = self.next_state(state, t);
        }
        Ok(states)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `ln softmax(logits)[index]` without forming the full distribution.
pub fn log_softmax_at(logits: &[f64], index: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln() + max;
    logits[index] - lse
}

/// Lowest id among the highest logits.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Support and renormalized probabilities after temperature, top-k and
/// nucleus filtering. Entries are ordered by descending probability, ties
/// by ascending token id.
pub fn filtered_distribution(logits: &[f64], cfg: &SamplerConfig) -> Vec<(Token, f64)> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits
        .iter()
        .map(|&l| ((l - max) / cfg.temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return vec![(argmax(logits) as Token, 1.0)];
    }
    let mut ranked: Vec<(Token, f64)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| (i as Token, w / total))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    // Both filters keep a prefix of `ranked`, so their intersection is the
    // shorter prefix.
    let mut nucleus = 0;
    let mut mass = 0.0;
    for (_, p) in &ranked {
        nucleus += 1;
        mass += p;
        if mass >= cfg.top_p - 1e-12 {
            break;
        }
    }
    let keep = nucleus.min(cfg.top_k).max(1);
    ranked.truncate(keep);
    let kept: f64 = ranked.iter().map(|(_, p)| p).sum();
    if !(kept.is_finite() && kept > 0.0) {
        return vec![(argmax(logits) as Token, 1.0)];
    }
    for entry in &mut ranked {
        entry.1 /= kept;
    }
    ranked
}

/// Draws one token from the filtered distribution of `logits`.
pub fn sample_token<R: Rng + ?Sized>(logits: &[f64], cfg: &SamplerConfig, rng: &mut R) -> Token {
    let support = filtered_distribution(logits, cfg);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(token, p) in &support {
        acc += p;
        if u < acc {
            return token;
        }
    }
    support[support.len() - 1].0
}

/// Continues `context` token by token, at most `budget` tokens, stopping
/// after the end-of-sequence token. Returns the emitted tokens and whether
/// the end-of-sequence token was produced.
pub fn sample_continuation<R: Rng + ?Sized>(
    params: &PolicyParams,
    context: &[Token],
    budget: usize,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<(Vec<Token>, bool)> {
    let mut state = params.initial_state(context)?;
    let mut out = Vec::with_capacity(budget);
    for _ in 0..budget {
        let token = sample_token(params.row(state), cfg, rng);
        out.push(token);
        if Some(token) == cfg.eos {
            return Ok((out, true));
        }
        state = params.next_state(state, token);
    }
    Ok((out, false))
}

/// Samples a full response to `prompt`.
pub fn sample<R: Rng + ?Sized>(
    params: &PolicyParams,
    prompt: &Prompt,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Response> {
    let (tokens, terminated) =
        sample_continuation(params, &prompt.context, cfg.max_length, cfg, rng)?;
    Ok(Response::new(tokens, terminated))
}

/// `ln pi(response | prompt)` under the untempered policy.
pub fn log_prob(params: &PolicyParams, prompt: &Prompt, response: &Response) -> Result<f64> {
    if response.is_empty() {
        return Err(Error::EmptyResponse);
    }
    let states = params.trajectory_states(&prompt.context, &response.tokens)?;
    Ok(states
        .iter()
        .zip(&response.tokens)
        .map(|(&s, &t)| log_softmax_at(params.row(s), t as usize))
        .sum())
}

/// Per-token `ln pi(y_t | s_t)` along a response.
pub fn token_log_probs(
    params: &PolicyParams,
    prompt: &Prompt,
    response: &Response,
) -> Result<Vec<f64>> {
    if response.is_empty() {
        return Err(Error::EmptyResponse);
    }
    let states = params.trajectory_states(&prompt.context, &response.tokens)?;
    Ok(states
        .iter()
        .zip(&response.tokens)
        .map(|(&s, &t)| log_softmax_at(params.row(s), t as usize))
        .collect())
}

/// Gradient of [`log_prob`] with respect to every logit, laid out like the
/// logits table. Entry `(s, a)` is the sum over steps taken from state `s`
/// of `1{y_t = a} - softmax(s)[a]`.
pub fn grad_log_prob(
    params: &PolicyParams,
    prompt: &Prompt,
    response: &Response,
) -> Result<Vec<f64>> {
    if response.is_empty() {
        return Err(Error::EmptyResponse);
    }
    let states = params.trajectory_states(&prompt.context, &response.tokens)?;
    let mut grad = vec![0.0; params.logits().len()];
    for (&s, &t) in states.iter().zip(&response.tokens) {
        accumulate_score(params, s, t, 1.0, &mut grad);
    }
    Ok(grad)
}

/// `grad[s, :] += weight * (onehot(token) - softmax(s))`.
pub(crate) fn accumulate_score(
    params: &PolicyParams,
    state: usize,
    token: Token,
    weight: f64,
    grad: &mut [f64],
) {
    let v = params.vocab_size();
    let probs = params.probs(state);
    let row = &mut grad[state * v..(state + 1) * v];
    for (a, (g, p)) in row.iter_mut().zip(&probs).enumerate() {
        let hit = if a == token as usize { 1.0 } else { 0.0 };
        *g += weight * (hit - p);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream;

    fn prompt(ctx: Vec<Token>) -> Prompt {
        Prompt::new("p", ctx).unwrap()
    }

    #[test]
    fn vocabulary_rejects_bad_markers() {
        let mut m = BTreeMap::new();
        m.insert(Marker::Eos, 0);
        m.insert(Marker::Answer, 0);
        assert!(Vocabulary::new(5, m, BTreeSet::new()).is_err());
        let mut m = BTreeMap::new();
        m.insert(Marker::Eos, 7);
        assert!(Vocabulary::new(5, m, BTreeSet::new()).is_err());
        assert!(Vocabulary::new(3, BTreeMap::new(), BTreeSet::new()).is_err());
        let mut m = BTreeMap::new();
        m.insert(Marker::Eos, 0);
        assert!(Vocabulary::new(5, m, [0].into()).is_err());
    }

    #[test]
    fn prompt_validation() {
        assert!(Prompt::new("x", vec![]).is_err());
        let mut m = BTreeMap::new();
        m.insert(Marker::Eos, 0);
        let vocab = Vocabulary::new(4, m, BTreeSet::new()).unwrap();
        let p = prompt(vec![1]).with_reference(vec![2, 0]);
        assert!(p.validate(&vocab).is_err());
        assert!(prompt(vec![1])
            .with_reference(vec![2])
            .validate(&vocab)
            .is_ok());
        assert!(prompt(vec![9]).validate(&vocab).is_err());
    }

    #[test]
    fn params_shape_checks() {
        assert!(PolicyParams::new(1, 3, vec![0.0; 8]).is_err());
        assert!(PolicyParams::new(1, 3, vec![f64::NAN; 9]).is_err());
        let p = PolicyParams::zeros(2, 3).unwrap();
        assert_eq!(p.num_states(), 9);
        assert_eq!(p.state_index(&[2, 1]), 7);
        assert_eq!(p.next_state(7, 0), 3);
    }

    #[test]
    fn order_zero_has_one_state() {
        let p = PolicyParams::new(0, 2, vec![0.0, 0.0]).unwrap();
        let lp = log_prob(&p, &prompt(vec![1]), &Response::new(vec![1], false)).unwrap();
        assert_eq!(lp, 0.5f64.ln());
    }

    #[test]
    fn log_prob_shift_invariance() {
        let base =
            PolicyParams::new(1, 3, vec![0.1, -0.4, 1.2, 0.0, 0.3, -2.0, 0.7, 0.7, 0.1]).unwrap();
        let mut shifted = base.clone();
        for (s, c) in [(0, 3.0), (1, -1.5), (2, 10.0)] {
            for v in shifted.row_mut(s) {
                *v += c;
            }
        }
        let r = Response::new(vec![2, 0, 1, 1], false);
        let a = log_prob(&base, &prompt(vec![0]), &r).unwrap();
        let b = log_prob(&shifted, &prompt(vec![0]), &r).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn log_prob_errors() {
        let p = PolicyParams::zeros(1, 3).unwrap();
        assert!(matches!(
            log_prob(&p, &prompt(vec![0]), &Response::new(vec![], true)),
            Err(Error::EmptyResponse)
        ));
        assert!(matches!(
            log_prob(&p, &prompt(vec![0]), &Response::new(vec![5], true)),
            Err(Error::TokenOutOfRange { .. })
        ));
        let p2 = PolicyParams::zeros(2, 3).unwrap();
        assert!(matches!(
            log_prob(&p2, &prompt(vec![0]), &Response::new(vec![1], true)),
            Err(Error::ContextTooShort { .. })
        ));
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let p =
            PolicyParams::new(1, 3, vec![0.1, -0.4, 1.2, 0.0, 0.3, -2.0, 0.7, 0.7, 0.1]).unwrap();
        let g = grad_log_prob(
            &p,
            &prompt(vec![1]),
            &Response::new(vec![2, 2, 0, 1], false),
        )
        .unwrap();
        for row in g.chunks(3) {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_policy_has_vanishing_gradient() {
        let mut p = PolicyParams::zeros(1, 3).unwrap();
        for s in 0..3 {
            p.set(s, 1, 30.0);
        }
        let g = grad_log_prob(&p, &prompt(vec![0]), &Response::new(vec![1, 1, 1], false)).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn untouched_rows_have_zero_gradient() {
        let p = PolicyParams::new(1, 3, vec![0.3; 9]).unwrap();
        let g = grad_log_prob(&p, &prompt(vec![0]), &Response::new(vec![0, 0], false)).unwrap();
        assert!(g[3..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn top_k_one_with_uniform_logits_repeats_lowest_id() {
        let p = PolicyParams::zeros(1, 4).unwrap();
        let cfg = SamplerConfig {
            top_k: 1,
            max_length: 7,
            eos: Some(3),
            ..SamplerConfig::default()
        };
        let r = sample(&p, &prompt(vec![2]), &cfg, &mut stream(1, "t", 0)).unwrap();
        assert_eq!(r.tokens, vec![0; 7]);
        assert!(!r.terminated);
    }

    #[test]
    fn near_zero_temperature_is_argmax() {
        let p =
            PolicyParams::new(1, 3, vec![0.0, 0.2, 0.1, 0.5, 0.0, 0.4, -1.0, 2.0, 1.9]).unwrap();
        let cfg = SamplerConfig {
            temperature: 1e-9,
            top_p: 1.0,
            max_length: 5,
            ..SamplerConfig::default()
        };
        for seed in 0..5 {
            let r = sample(&p, &prompt(vec![0]), &cfg, &mut stream(seed, "t", 0)).unwrap();
            // row 0 prefers 1, row 1 prefers 0
            assert_eq!(r.tokens, vec![1, 0, 1, 0, 1]);
        }
    }

    #[test]
    fn empty_nucleus_keeps_top_token() {
        let cfg = SamplerConfig {
            temperature: 1.0,
            top_p: 1e-9,
            top_k: 3,
            ..SamplerConfig::default()
        };
        let d = filtered_distribution(&[0.0, 1.0, 1.0], &cfg);
        assert_eq!(d, vec![(1, 1.0)]);
    }

    #[test]
    fn nucleus_and_top_k_intersect() {
        let logits = [3.0f64.ln(), 2.0f64.ln(), 1.0f64.ln(), 4.0f64.ln()];
        let cfg = SamplerConfig {
            temperature: 1.0,
            top_p: 0.65,
            top_k: 3,
            ..SamplerConfig::default()
        };
        // Probabilities 0.3, 0.2, 0.1, 0.4: the nucleus is {3, 0}.
        let d = filtered_distribution(&logits, &cfg);
        assert_eq!(d.iter().map(|e| e.0).collect::<Vec<_>>(), vec![3, 0]);
        let cfg = SamplerConfig { top_k: 1, ..cfg };
        assert_eq!(filtered_distribution(&logits, &cfg), vec![(3, 1.0)]);
    }

    #[test]
    fn snapshot_round_trip() {
        let p = PolicyParams::new(1, 2, vec![0.1, 1.0 / 3.0, -2.5e-7, 1e10]).unwrap();
        let back = PolicyParams::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(p, back);
        assert!(PolicyParams::from_json(r#"{"order":1,"vocab_size":2,"logits":[0,0,0]}"#).is_err());
    }
}
