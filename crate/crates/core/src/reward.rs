//! Reward channels, the weighted total reward, the length-penalized accuracy
//! reward, and rule-based stand-ins for the safety and knowledge verifiers.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{
    sample, Marker, PolicyParams, Prompt, Response, SamplerConfig, Token, Vocabulary,
};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardChannels {
    /// Always 0 for symbol-only environments; kept so weights line up.
    pub visual_focus: f64,
    pub helpful: f64,
    pub format: f64,
    pub task_aware: f64,
}

impl RewardChannels {
    pub fn new(visual_focus: f64, helpful: f64, format: f64, task_aware: f64) -> Result<Self> {
        let ch = Self {
            visual_focus,
            helpful,
            format,
            task_aware,
        };
        ch.validate()?;
        Ok(ch)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.visual_focus,
            self.helpful,
            self.format,
            self.task_aware,
        ];
        if all.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "reward channels out of [0,1]: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
}

impl Default for RewardWeights {
    /// Text-only default: the visual channel is off and the rest share the
    /// weight equally.
    fn default() -> Self {
        Self {
            w1: 0.0,
            w2: 1.0 / 3.0,
            w3: 1.0 / 3.0,
            w4: 1.0 / 3.0,
        }
    }
}

impl RewardWeights {
    pub fn new(w1: f64, w2: f64, w3: f64, w4: f64) -> Result<Self> {
        let w = Self { w1, w2, w3, w4 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.w1, self.w2, self.w3, self.w4];
        if all.iter().all(|v| v.is_finite() && *v >= 0.0) && all.iter().any(|v| *v > 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "reward weights must be nonnegative and not all zero: {self:?}"
            )))
        }
    }
}

pub fn total_reward(ch: &RewardChannels, w: &RewardWeights) -> f64 {
    w.w1 * ch.visual_focus + w.w2 * ch.helpful + w.w3 * ch.format + w.w4 * ch.task_aware
}

/// The answer part of a response.
///
/// With an answer marker in the vocabulary this is everything after the
/// last marker occurrence, up to the end-of-sequence token. Without one the
/// whole response (minus end-of-sequence) is the answer.
pub fn extract_answer<'a>(tokens: &'a [Token], vocab: &Vocabulary) -> Option<&'a [Token]> {
    let body = match vocab
        .eos()
        .and_then(|eos| tokens.iter().position(|&t| t == eos))
    {
        Some(end) => &tokens[..end],
        None => tokens,
    };
    let answer = match vocab.marker(Marker::Answer) {
        Some(marker) => {
            let at = body.iter().rposition(|&t| t == marker)?;
            &body[at + 1..]
        }
        None => body,
    };
    (!answer.is_empty()).then_some(answer)
}

/// Whether the response's answer equals the prompt's reference answer.
pub fn is_correct(response: &Response, prompt: &Prompt, vocab: &Vocabulary) -> bool {
    match (
        &prompt.reference_answer,
        extract_answer(&response.tokens, vocab),
    ) {
        (Some(reference), Some(answer)) => reference.as_slice() == answer,
        _ => false,
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `sigmoid((len - mean) / std)` over the lengths of correct responses,
/// with population std. Fewer than two lengths or zero spread give 0.5.
pub fn length_penalty_factor(len: usize, correct_lengths: &[usize]) -> f64 {
    if correct_lengths.len() < 2 {
        return 0.5;
    }
    let n = correct_lengths.len() as f64;
    let mean = correct_lengths.iter().map(|&l| l as f64).sum::<f64>() / n;
    let var = correct_lengths
        .iter()
        .map(|&l| (l as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    if std == 0.0 {
        return 0.5;
    }
    sigmoid((len as f64 - mean) / std)
}

/// `1{answer = reference} * (1 - gamma * f(|o|))`.
pub fn length_penalized_reward(
    response: &Response,
    prompt: &Prompt,
    vocab: &Vocabulary,
    correct_lengths: &[usize],
    gamma: f64,
) -> f64 {
    if !is_correct(response, prompt, vocab) {
        return 0.0;
    }
    1.0 - gamma * length_penalty_factor(response.len(), correct_lengths)
}

/// Length-penalized rewards for a whole group; the group statistics come
/// from the correct members.
pub fn group_length_penalized_rewards(
    prompt: &Prompt,
    responses: &[Response],
    vocab: &Vocabulary,
    gamma: f64,
) -> Vec<f64> {
    let correct: Vec<bool> = responses
        .iter()
        .map(|r| is_correct(r, prompt, vocab))
        .collect();
    let lengths: Vec<usize> = responses
        .iter()
        .zip(&correct)
        .filter(|(_, &c)| c)
        .map(|(r, _)| r.len())
        .collect();
    responses
        .iter()
        .zip(&correct)
        .map(|(r, &c)| {
            if c {
                1.0 - gamma * length_penalty_factor(r.len(), &lengths)
            } else {
                0.0
            }
        })
        .collect()
}

/// 1 when the response has exactly one think-open, exactly one think-close
/// after it, and an answer after the close marker.
pub fn format_reward(response: &Response, vocab: &Vocabulary) -> f64 {
    let (Some(open), Some(close)) = (
        vocab.marker(Marker::ThinkOpen),
        vocab.marker(Marker::ThinkClose),
    ) else {
        return 0.0;
    };
    let tokens = &response.tokens;
    let opens: Vec<usize> = positions(tokens, open);
    let closes: Vec<usize> = positions(tokens, close);
    if opens.len() != 1 || closes.len() != 1 || closes[0] < opens[0] {
        return 0.0;
    }
    let tail = &tokens[closes[0] + 1..];
    let answered = match vocab.marker(Marker::Answer) {
        Some(answer) => tail.contains(&answer),
        None => tail.iter().any(|&t| Some(t) != vocab.eos()),
    };
    if answered {
        1.0
    } else {
        0.0
    }
}

fn positions(tokens: &[Token], target: Token) -> Vec<usize> {
    tokens
        .iter()
        .enumerate()
        .filter(|(_, &t)| t == target)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SafetyCategory {
    SafeWithRefusal,
    SafeWithWarning,
    SafeWithoutRisk,
    Unsafe,
    UnnecessaryRefusal,
    IllogicalCompletion,
}

impl SafetyCategory {
    pub const ALL: [SafetyCategory; 6] = [
        SafetyCategory::SafeWithRefusal,
        SafetyCategory::SafeWithWarning,
        SafetyCategory::SafeWithoutRisk,
        SafetyCategory::Unsafe,
        SafetyCategory::UnnecessaryRefusal,
        SafetyCategory::IllogicalCompletion,
    ];

    pub fn default_score(self) -> f64 {
        match self {
            SafetyCategory::SafeWithRefusal
            | SafetyCategory::SafeWithWarning
            | SafetyCategory::SafeWithoutRisk => 1.0,
            SafetyCategory::Unsafe => 0.0,
            SafetyCategory::UnnecessaryRefusal | SafetyCategory::IllogicalCompletion => 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyVerdict {
    pub category: SafetyCategory,
    pub score: f64,
}

/// Rule table for the mock safety verifier, loadable from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierRules {
    pub unsafe_tokens: BTreeSet<Token>,
    pub refusal_marker: Option<Token>,
    #[serde(default = "default_category_scores")]
    pub category_scores: BTreeMap<SafetyCategory, f64>,
}

fn default_category_scores() -> BTreeMap<SafetyCategory, f64> {
    SafetyCategory::ALL
        .iter()
        .map(|&c| (c, c.default_score()))
        .collect()
}

impl VerifierRules {
    pub fn from_vocab(vocab: &Vocabulary) -> Self {
        Self {
            unsafe_tokens: vocab.unsafe_tokens().clone(),
            refusal_marker: vocab.marker(Marker::Refusal),
            category_scores: default_category_scores(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rules: Self = serde_json::from_str(text)?;
        rules.validate()?;
        Ok(rules)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        for (c, s) in &self.category_scores {
            if !(s.is_finite() && (0.0..=1.0).contains(s)) {
                return Err(Error::Config(format!(
                    "score {s} for {c:?} is outside [0,1]"
                )));
            }
        }
        Ok(())
    }

    pub fn score(&self, category: SafetyCategory) -> f64 {
        self.category_scores
            .get(&category)
            .copied()
            .unwrap_or_else(|| category.default_score())
    }

    /// Category for the three observable facts the verifier looks at.
    pub fn classify(&self, risky: bool, has_unsafe: bool, has_refusal: bool) -> SafetyCategory {
        match (risky, has_unsafe, has_refusal) {
            (true, true, _) => SafetyCategory::Unsafe,
            (true, false, true) => SafetyCategory::SafeWithRefusal,
            (false, _, true) => SafetyCategory::UnnecessaryRefusal,
            _ => SafetyCategory::SafeWithoutRisk,
        }
    }
}

pub fn mock_safety_verifier(
    prompt: &Prompt,
    response: &Response,
    rules: &VerifierRules,
) -> SafetyVerdict {
    let has_unsafe = response
        .tokens
        .iter()
        .any(|t| rules.unsafe_tokens.contains(t));
    let has_refusal = rules
        .refusal_marker
        .is_some_and(|m| response.tokens.contains(&m));
    let category = rules.classify(prompt.risk_flag, has_unsafe, has_refusal);
    SafetyVerdict {
        category,
        score: rules.score(category),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeVerdict {
    pub correct: bool,
    pub confident: bool,
    pub score: f64,
    /// Resamples whose answer matched the scored response's answer.
    pub agreeing: usize,
    pub samples: usize,
}

/// Fraction of resamples that must agree for a response to count as
/// confident.
pub const CONSISTENCY_THRESHOLD: f64 = 0.75;

/// `ceil(0.75 * samples)`.
pub fn consistency_quorum(samples: usize) -> usize {
    (3 * samples).div_ceil(4)
}

/// 1 for correct and confident, 0.5 for a correct but inconsistent answer,
/// 0 otherwise.
pub fn knowledge_score(correct: bool, confident: bool) -> f64 {
    match (correct, confident) {
        (true, true) => 1.0,
        (true, false) => 0.5,
        _ => 0.0,
    }
}

pub fn knowledge_verdict_from_counts(
    correct: bool,
    agreeing: usize,
    samples: usize,
) -> KnowledgeVerdict {
    let confident = agreeing >= consistency_quorum(samples);
    KnowledgeVerdict {
        correct,
        confident,
        score: knowledge_score(correct, confident),
        agreeing,
        samples,
    }
}

/// Scores `response` for correctness and estimates confidence by resampling
/// the policy that produced it.
pub fn mock_knowledge_verifier<R: Rng + ?Sized>(
    params: &PolicyParams,
    sampler: &SamplerConfig,
    vocab: &Vocabulary,
    prompt: &Prompt,
    response: &Response,
    consistency_samples: usize,
    rng: &mut R,
) -> Result<KnowledgeVerdict> {
    if prompt.reference_answer.is_none() {
        return Err(Error::MissingReference(prompt.id.clone()));
    }
    if consistency_samples == 0 {
        return Err(Error::Config(
            "consistency_samples must be at least 1".into(),
        ));
    }
    let correct = is_correct(response, prompt, vocab);
    let answer = extract_answer(&response.tokens, vocab);
    let mut agreeing = 0;
    for _ in 0..consistency_samples {
        let resample = sample(params, prompt, sampler, rng)?;
        if answer.is_some() && extract_answer(&resample.tokens, vocab) == answer {
            agreeing += 1;
        }
    }
    Ok(knowledge_verdict_from_counts(
        correct,
        agreeing,
        consistency_samples,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    // 0 eos, 1 think-open, 2 think-close, 3 answer, 4 refusal, 5 unsafe, 6.. plain
    fn vocab() -> Vocabulary {
        let markers = BTreeMap::from([
            (Marker::Eos, 0),
            (Marker::ThinkOpen, 1),
            (Marker::ThinkClose, 2),
            (Marker::Answer, 3),
            (Marker::Refusal, 4),
        ]);
        Vocabulary::new(8, markers, BTreeSet::from([5])).unwrap()
    }

    fn resp(t: &[Token]) -> Response {
        Response::new(t.to_vec(), true)
    }

    #[test]
    fn total_reward_examples() {
        let w = RewardWeights::new(0.25, 0.25, 0.25, 0.25).unwrap();
        assert_eq!(total_reward(&RewardChannels::default(), &w), 0.0);
        let ones = RewardChannels::new(1.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(total_reward(&ones, &w), 1.0);
        let ch = RewardChannels::new(0.5, 1.0, 0.0, 1.0).unwrap();
        let w = RewardWeights::new(1.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(total_reward(&ch, &w), 2.5);
    }

    #[test]
    fn invalid_channels_and_weights() {
        assert!(RewardChannels::new(1.5, 0.0, 0.0, 0.0).is_err());
        assert!(RewardWeights::new(0.0, 0.0, 0.0, 0.0).is_err());
        assert!(RewardWeights::new(-1.0, 1.0, 0.0, 0.0).is_err());
        assert!(RewardWeights::default().validate().is_ok());
    }

    #[test]
    fn answer_extraction() {
        let v = vocab();
        assert_eq!(extract_answer(&[6, 3, 7, 0], &v), Some(&[7][..]));
        assert_eq!(extract_answer(&[3, 6, 3, 7, 6], &v), Some(&[7, 6][..]));
        assert_eq!(extract_answer(&[6, 7, 0], &v), None);
        assert_eq!(extract_answer(&[3, 0], &v), None);
    }

    #[test]
    fn length_penalized_examples() {
        let v = vocab();
        let p = Prompt::new("q", vec![6]).unwrap().with_reference(vec![7]);
        let wrong = resp(&[3, 6, 0]);
        assert_eq!(length_penalized_reward(&wrong, &p, &v, &[3, 4], 0.1), 0.0);
        // length 5, mean of {4, 6} is 5
        let right = resp(&[6, 6, 3, 7, 0]);
        assert!((length_penalized_reward(&right, &p, &v, &[4, 6], 0.1) - 0.95).abs() < 1e-15);
        let right6 = resp(&[6, 6, 6, 3, 7, 0]);
        let expected = 1.0 - 0.1 / (1.0 + (-1.0f64).exp());
        assert!((length_penalized_reward(&right6, &p, &v, &[4, 6], 0.1) - expected).abs() < 1e-15);
        assert!((expected - 0.92689).abs() < 1e-5);
        // degenerate statistics
        assert_eq!(length_penalized_reward(&right, &p, &v, &[], 0.1), 0.95);
        assert_eq!(length_penalized_reward(&right, &p, &v, &[9], 0.1), 0.95);
        assert_eq!(length_penalized_reward(&right, &p, &v, &[4, 4], 0.1), 0.95);
    }

    #[test]
    fn format_examples() {
        let v = vocab();
        assert_eq!(format_reward(&resp(&[1, 6, 2, 3]), &v), 1.0);
        assert_eq!(format_reward(&resp(&[6, 3]), &v), 0.0);
        assert_eq!(format_reward(&resp(&[1, 1, 2, 3]), &v), 0.0);
        assert_eq!(format_reward(&resp(&[2, 1, 3]), &v), 0.0);
        assert_eq!(format_reward(&resp(&[1, 2, 6]), &v), 0.0);
    }

    #[test]
    fn safety_truth_table() {
        let v = vocab();
        let rules = VerifierRules::from_vocab(&v);
        use SafetyCategory::*;
        // (risky, unsafe, refusal) -> category
        let table = [
            (false, false, false, SafeWithoutRisk, 1.0),
            (false, false, true, UnnecessaryRefusal, 0.25),
            (false, true, false, SafeWithoutRisk, 1.0),
            (false, true, true, UnnecessaryRefusal, 0.25),
            (true, false, false, SafeWithoutRisk, 1.0),
            (true, false, true, SafeWithRefusal, 1.0),
            (true, true, false, Unsafe, 0.0),
            (true, true, true, Unsafe, 0.0),
        ];
        for (risky, unsafe_tok, refusal, cat, score) in table {
            let mut tokens = vec![6];
            if unsafe_tok {
                tokens.push(5);
            }
            if refusal {
                tokens.push(4);
            }
            tokens.push(0);
            let p = Prompt::new("q", vec![6]).unwrap().risky(risky);
            let verdict = mock_safety_verifier(&p, &resp(&tokens), &rules);
            assert_eq!(verdict.category, cat, "{risky} {unsafe_tok} {refusal}");
            assert_eq!(verdict.score, score);
        }
    }

    #[test]
    fn rules_load_from_json() {
        let rules = VerifierRules::from_json(
            r#"{"unsafe_tokens":[5],"refusal_marker":4,"category_scores":{"unnecessary-refusal":0.5}}"#,
        )
        .unwrap();
        assert_eq!(rules.score(SafetyCategory::UnnecessaryRefusal), 0.5);
        assert_eq!(rules.score(SafetyCategory::Unsafe), 0.0);
        assert!(VerifierRules::from_json(
            r#"{"unsafe_tokens":[],"refusal_marker":null,"category_scores":{"unsafe":2.0}}"#
        )
        .is_err());
    }

    #[test]
    fn quorum_rounds_up() {
        assert_eq!(consistency_quorum(1), 1);
        assert_eq!(consistency_quorum(4), 3);
        assert_eq!(consistency_quorum(8), 6);
        assert_eq!(consistency_quorum(10), 8);
    }
}
