//! Toy sequence-generation environments for the policy-gradient trainers.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{
    sample, Marker, PolicyParams, Prompt, Response, SamplerConfig, Token, Vocabulary,
};
use crate::reward::{
    format_reward, group_length_penalized_rewards, is_correct, mock_safety_verifier, total_reward,
    RewardChannels, RewardWeights, VerifierRules,
};

/// Everything a trainer needs from an environment.
pub trait TextEnv: Sync {
    fn vocab(&self) -> &Vocabulary;
    fn prompts(&self) -> &[Prompt];
    /// Sampler used for rollouts.
    fn sampler(&self) -> SamplerConfig;
    fn initial_params(&self) -> Result<PolicyParams>;
    /// Rewards for a group of responses to one prompt, aligned with
    /// `responses`.
    fn score_group(&self, prompt: &Prompt, responses: &[Response]) -> Result<Vec<f64>>;

    fn is_correct(&self, prompt: &Prompt, response: &Response) -> bool {
        is_correct(response, prompt, self.vocab())
    }
}

/// Single-step bandit: the response is one token and exactly one token is
/// rewarded.
#[derive(Debug, Clone)]
pub struct BanditTask {
    vocab: Vocabulary,
    prompts: Vec<Prompt>,
}

impl BanditTask {
    pub fn new(vocab_size: usize, rewarded_token: Token) -> Result<Self> {
        let vocab = Vocabulary::new(vocab_size, BTreeMap::new(), BTreeSet::new())?;
        if !vocab.contains(rewarded_token) {
            return Err(Error::Config(format!(
                "rewarded token {rewarded_token} is outside the vocabulary"
            )));
        }
        let prompt = Prompt::new("bandit", vec![0])?.with_reference(vec![rewarded_token]);
        Ok(Self {
            vocab,
            prompts: vec![prompt],
        })
    }
}

impl TextEnv for BanditTask {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn prompts(&self) -> &[Prompt] {
        &self.prompts
    }

    fn sampler(&self) -> SamplerConfig {
        SamplerConfig::exact(1, None)
    }

    fn initial_params(&self) -> Result<PolicyParams> {
        PolicyParams::zeros(1, self.vocab.size())
    }

    fn score_group(&self, prompt: &Prompt, responses: &[Response]) -> Result<Vec<f64>> {
        Ok(responses
            .iter()
            .map(|r| {
                if is_correct(r, prompt, &self.vocab) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect())
    }
}

/// Token ids of [`DualLengthTask`].
pub mod dual {
    use crate::policy::Token;
    pub const EOS: Token = 0;
    pub const ANSWER: Token = 1;
    pub const FILLER: Token = 2;
    pub const CORRECT: Token = 3;
    pub const WRONG: Token = 4;
    pub const QUERY: Token = 5;
    pub const VOCAB: usize = 6;
}

/// Responses have the shape `FILLER^k ANSWER x EOS`. Any number of filler
/// tokens is acceptable, so short and long responses are both rewarded when
/// `x` is correct; the only length pressure comes from the length penalty
/// and the advantage estimator.
#[derive(Debug, Clone)]
pub struct DualLengthTask {
    vocab: Vocabulary,
    prompts: Vec<Prompt>,
    gamma: f64,
    max_length: usize,
    continue_logit: f64,
}

impl DualLengthTask {
    pub fn new(gamma: f64, max_length: usize, continue_logit: f64) -> Result<Self> {
        use dual::*;
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("gamma {gamma} must be nonnegative")));
        }
        if max_length < 3 {
            return Err(Error::Config("max_length must allow ANSWER x EOS".into()));
        }
        let markers = BTreeMap::from([(Marker::Eos, EOS), (Marker::Answer, ANSWER)]);
        let vocab = Vocabulary::new(VOCAB, markers, BTreeSet::new())?;
        let prompt = Prompt::new("dual-length", vec![QUERY])?.with_reference(vec![CORRECT]);
        Ok(Self {
            vocab,
            prompts: vec![prompt],
            gamma,
            max_length,
            continue_logit,
        })
    }
}

impl TextEnv for DualLengthTask {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn prompts(&self) -> &[Prompt] {
        &self.prompts
    }

    fn sampler(&self) -> SamplerConfig {
        SamplerConfig::exact(self.max_length, Some(dual::EOS))
    }

    fn initial_params(&self) -> Result<PolicyParams> {
        use dual::*;
        let mut p = PolicyParams::new(1, VOCAB, vec![-4.0; VOCAB * VOCAB])?;
        for s in [QUERY, FILLER] {
            p.set(s as usize, FILLER, self.continue_logit);
            p.set(s as usize, ANSWER, 0.0);
        }
        p.set(ANSWER as usize, CORRECT, 0.0);
        p.set(ANSWER as usize, WRONG, 0.0);
        for s in [CORRECT, WRONG, EOS] {
            p.set(s as usize, EOS, 3.0);
        }
        Ok(p)
    }

    fn score_group(&self, prompt: &Prompt, responses: &[Response]) -> Result<Vec<f64>> {
        Ok(group_length_penalized_rewards(
            prompt,
            responses,
            &self.vocab,
            self.gamma,
        ))
    }
}

/// Token ids of [`ReasoningTask`].
pub mod reasoning {
    use crate::policy::Token;
    pub const EOS: Token = 0;
    pub const THINK_OPEN: Token = 1;
    pub const THINK_CLOSE: Token = 2;
    pub const ANSWER: Token = 3;
    pub const REFUSAL: Token = 4;
    pub const UNSAFE: Token = 5;
    pub const FILLER: Token = 6;
    pub const CORRECT: Token = 7;
    pub const WRONG: Token = 8;
    pub const BENIGN_QUERY: Token = 9;
    pub const RISKY_QUERY: Token = 10;
    pub const VOCAB: usize = 11;
}

/// Multi-channel task: a benign query that should be answered inside the
/// think/answer format and a risky query that should be refused. Rewards
/// combine the helpful (safety verifier), format and task-aware
/// (length-penalized correctness, or the safety score for risky prompts)
/// channels with [`total_reward`].
#[derive(Debug, Clone)]
pub struct ReasoningTask {
    vocab: Vocabulary,
    prompts: Vec<Prompt>,
    rules: VerifierRules,
    weights: RewardWeights,
    gamma: f64,
    max_length: usize,
}

impl ReasoningTask {
    pub fn new(weights: RewardWeights, gamma: f64, max_length: usize) -> Result<Self> {
        use reasoning::*;
        weights.validate()?;
        let markers = BTreeMap::from([
            (Marker::Eos, EOS),
            (Marker::ThinkOpen, THINK_OPEN),
            (Marker::ThinkClose, THINK_CLOSE),
            (Marker::Answer, ANSWER),
            (Marker::Refusal, REFUSAL),
        ]);
        let vocab = Vocabulary::new(VOCAB, markers, BTreeSet::from([UNSAFE]))?;
        let prompts = vec![
            Prompt::new("benign", vec![BENIGN_QUERY])?.with_reference(vec![CORRECT]),
            Prompt::new("risky", vec![RISKY_QUERY])?.risky(true),
        ];
        let rules = VerifierRules::from_vocab(&vocab);
        Ok(Self {
            vocab,
            prompts,
            rules,
            weights,
            gamma,
            max_length,
        })
    }

    pub fn channels(
        &self,
        prompt: &Prompt,
        response: &Response,
        correctness: f64,
    ) -> RewardChannels {
        let safety = mock_safety_verifier(prompt, response, &self.rules).score;
        RewardChannels {
            visual_focus: 0.0,
            helpful: safety,
            format: format_reward(response, &self.vocab),
            task_aware: if prompt.risk_flag {
                safety
            } else {
                correctness
            },
        }
    }
}

impl TextEnv for ReasoningTask {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn prompts(&self) -> &[Prompt] {
        &self.prompts
    }

    fn sampler(&self) -> SamplerConfig {
        SamplerConfig::exact(self.max_length, Some(reasoning::EOS))
    }

    fn initial_params(&self) -> Result<PolicyParams> {
        PolicyParams::zeros(1, reasoning::VOCAB)
    }

    fn score_group(&self, prompt: &Prompt, responses: &[Response]) -> Result<Vec<f64>> {
        let correctness = if prompt.reference_answer.is_some() {
            group_length_penalized_rewards(prompt, responses, &self.vocab, self.gamma)
        } else {
            vec![0.0; responses.len()]
        };
        Ok(responses
            .iter()
            .zip(correctness)
            .map(|(r, c)| total_reward(&self.channels(prompt, r, c), &self.weights))
            .collect())
    }

    fn is_correct(&self, prompt: &Prompt, response: &Response) -> bool {
        if prompt.risk_flag {
            mock_safety_verifier(prompt, response, &self.rules).score >= 1.0
        } else {
            is_correct(response, prompt, &self.vocab)
        }
    }
}

/// Serializable choice of environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaskSpec {
    Bandit {
        #[serde(default = "default_bandit_vocab")]
        vocab_size: usize,
        #[serde(default = "default_rewarded")]
        rewarded_token: Token,
    },
    DualLength {
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default = "default_dual_max_length")]
        max_length: usize,
        #[serde(default = "default_continue_logit")]
        continue_logit: f64,
    },
    Reasoning {
        #[serde(default)]
        weights: Option<RewardWeights>,
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default = "default_reasoning_max_length")]
        max_length: usize,
    },
}

fn default_bandit_vocab() -> usize {
    4
}
fn default_rewarded() -> Token {
    2
}
fn default_gamma() -> f64 {
    0.1
}
fn default_dual_max_length() -> usize {
    16
}
fn default_continue_logit() -> f64 {
    1.0
}
fn default_reasoning_max_length() -> usize {
    12
}

impl TaskSpec {
    pub fn build(&self) -> Result<Box<dyn TextEnv>> {
        Ok(match self {
            TaskSpec::Bandit {
                vocab_size,
                rewarded_token,
            } => Box::new(BanditTask::new(*vocab_size, *rewarded_token)?),
            TaskSpec::DualLength {
                gamma,
                max_length,
                continue_logit,
            } => Box::new(DualLengthTask::new(*gamma, *max_length, *continue_logit)?),
            TaskSpec::Reasoning {
                weights,
                gamma,
                max_length,
            } => Box::new(ReasoningTask::new(
                weights.unwrap_or_default(),
                *gamma,
                *max_length,
            )?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean_length: f64,
    pub accuracy: f64,
    pub samples: usize,
}

/// Monte Carlo length and accuracy of `params` on every prompt of `env`.
pub fn evaluate<R: Rng + ?Sized>(
    env: &dyn TextEnv,
    params: &PolicyParams,
    samples_per_prompt: usize,
    rng: &mut R,
) -> Result<EvalSummary> {
    let sampler = env.sampler();
    let mut total_len = 0usize;
    let mut correct = 0usize;
    let mut n = 0usize;
    for prompt in env.prompts() {
        for _ in 0..samples_per_prompt {
            let r = sample(params, prompt, &sampler, rng)?;
            total_len += r.len();
            correct += usize::from(env.is_correct(prompt, &r));
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("evaluation samples"));
    }
    Ok(EvalSummary {
        mean_length: total_len as f64 / n as f64,
        accuracy: correct as f64 / n as f64,
        samples: n,
    })
}
