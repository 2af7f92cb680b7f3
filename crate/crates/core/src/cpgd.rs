//! Clipped policy gradient with policy drift.
//!
//! The surrogate clips the per-token log-ratio `ln pi/pi_old` to
//! `[ln(1-eps), ln(1+eps)]`, takes the pessimistic minimum against the
//! unclipped term, and subtracts a k3 estimate of `KL(pi_old || pi)`
//! computed on the rollouts. Per-response terms are averaged over tokens,
//! then over responses.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::advantage::{baseline_advantages, length_correction, SampleGroup};
use crate::error::{Error, Result};
use crate::policy::{accumulate_score, log_softmax_at, sample, PolicyParams, Prompt, Response};
use crate::seed;
use crate::tasks::TextEnv;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvantageMode {
    /// Reward minus group mean.
    GroupBaseline,
    /// Same estimator as `GroupBaseline`; kept as its own name because the
    /// length-conditioned mode is defined as a correction on top of it.
    Drgrpo,
    /// `Drgrpo` plus the length-conditioned correction with `cale_alpha`.
    Cale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlAggregation {
    TokenMean,
    TokenSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpgdConfig {
    pub clip_epsilon: f64,
    /// Weight of the KL drift penalty.
    pub kl_drift_coeff: f64,
    pub learning_rate: f64,
    pub group_size: usize,
    pub steps: usize,
    pub advantage_mode: AdvantageMode,
    /// Efficiency weight of the length-conditioned correction. Only read in
    /// `Cale` mode.
    pub cale_alpha: f64,
    /// Gradient steps taken on each rollout batch before re-sampling.
    pub inner_epochs: usize,
    pub kl_aggregation: KlAggregation,
    /// Record elapsed seconds in the metrics. Off by default so that metric
    /// logs are reproducible byte for byte.
    pub wall_clock: bool,
}

impl Default for CpgdConfig {
    fn default() -> Self {
        Self {
            clip_epsilon: 0.2,
            kl_drift_coeff: 0.01,
            learning_rate: 0.1,
            group_size: 8,
            steps: 100,
            advantage_mode: AdvantageMode::Drgrpo,
            cale_alpha: 0.05,
            inner_epochs: 4,
            kl_aggregation: KlAggregation::TokenMean,
            wall_clock: false,
        }
    }
}

impl CpgdConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad(format!(
                "clip_epsilon {} must lie in (0,1)",
                self.clip_epsilon
            ));
        }
        if !(self.kl_drift_coeff >= 0.0 && self.kl_drift_coeff.is_finite()) {
            return bad(format!(
                "kl_drift_coeff {} must be nonnegative",
                self.kl_drift_coeff
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate {} must be nonnegative",
                self.learning_rate
            ));
        }
        if self.group_size < 2 {
            return bad(format!("group_size {} is below 2", self.group_size));
        }
        if self.steps == 0 || self.inner_epochs == 0 {
            return bad("steps and inner_epochs must be positive".into());
        }
        if !(self.cale_alpha >= 0.0 && self.cale_alpha.is_finite()) {
            return bad(format!(
                "cale_alpha {} must be nonnegative",
                self.cale_alpha
            ));
        }
        Ok(())
    }
}

/// Per-response advantages for one group under the chosen mode.
pub fn compute_advantages(
    group: &SampleGroup,
    mode: AdvantageMode,
    cale_alpha: f64,
) -> Result<Vec<f64>> {
    let base = baseline_advantages(&group.rewards)?;
    match mode {
        AdvantageMode::GroupBaseline | AdvantageMode::Drgrpo => Ok(base),
        AdvantageMode::Cale => {
            let correction = length_correction(&group.lengths(), &group.rewards, cale_alpha)?;
            Ok(base.iter().zip(&correction).map(|(b, p)| b + p).collect())
        }
    }
}

/// A group tagged with its advantages and the fingerprint of the snapshot
/// that sampled it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredGroup {
    pub group: SampleGroup,
    pub advantages: Vec<f64>,
    pub snapshot: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpgdMetrics {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_length: f64,
    pub kl_estimate: f64,
    pub loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: PolicyParams,
    pub old_params: PolicyParams,
    pub old_snapshot: u64,
    pub step: usize,
    pub metrics: Vec<CpgdMetrics>,
}

impl TrainState {
    pub fn new(params: PolicyParams) -> Self {
        let old_snapshot = params.fingerprint();
        Self {
            old_params: params.clone(),
            params,
            old_snapshot,
            step: 0,
            metrics: Vec::new(),
        }
    }

    /// Makes the current parameters the sampling snapshot.
    pub fn refresh_snapshot(&mut self) {
        self.old_params = self.params.clone();
        self.old_snapshot = self.old_params.fingerprint();
    }
}

/// `min(lr * A, clip(lr, ln(1-eps), ln(1+eps)) * A)`.
pub fn clipped_term(log_ratio: f64, advantage: f64, eps: f64) -> f64 {
    let clipped = log_ratio.clamp((1.0 - eps).ln(), (1.0 + eps).ln());
    (log_ratio * advantage).min(clipped * advantage)
}

/// Derivative of [`clipped_term`] in `log_ratio`: `A` where the unclipped branch
/// is the minimum, 0 where the clipped constant is.
pub fn clipped_slope(log_ratio: f64, advantage: f64, eps: f64) -> f64 {
    let clipped = log_ratio.clamp((1.0 - eps).ln(), (1.0 + eps).ln());
    if log_ratio * advantage <= clipped * advantage {
        advantage
    } else {
        0.0
    }
}

/// `r - 1 - ln r` for `r = exp(log_ratio)`.
pub fn k3(log_ratio: f64) -> f64 {
    (log_ratio.exp_m1() - log_ratio).max(0.0)
}

struct TokenTerms {
    states: Vec<usize>,
    log_ratios: Vec<f64>,
}

fn token_terms(
    params: &PolicyParams,
    old: &PolicyParams,
    prompt: &Prompt,
    response: &Response,
) -> Result<TokenTerms> {
    if response.is_empty() {
        return Err(Error::EmptyResponse);
    }
    let states = params.trajectory_states(&prompt.context, &response.tokens)?;
    let log_ratios = states
        .iter()
        .zip(&response.tokens)
        .map(|(&s, &t)| {
            log_softmax_at(params.row(s), t as usize) - log_softmax_at(old.row(s), t as usize)
        })
        .collect();
    Ok(TokenTerms { states, log_ratios })
}

fn kl_weight(len: usize, aggregation: KlAggregation) -> f64 {
    match aggregation {
        KlAggregation::TokenMean => 1.0 / len as f64,
        KlAggregation::TokenSum => 1.0,
    }
}

/// k3 estimate of `KL(pi_old || pi)` on responses sampled from `old_params`:
/// per-response token mean, then the mean over responses.
pub fn kl_k3_estimate(
    params: &PolicyParams,
    old_params: &PolicyParams,
    prompt: &Prompt,
    responses: &[Response],
) -> Result<f64> {
    if responses.is_empty() {
        return Err(Error::Empty("responses"));
    }
    let mut total = 0.0;
    for r in responses {
        let terms = token_terms(params, old_params, prompt, r)?;
        total += terms.log_ratios.iter().map(|&lr| k3(lr)).sum::<f64>() / r.len() as f64;
    }
    Ok(total / responses.len() as f64)
}

/// Value of the surrogate objective and its breakdown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub value: f64,
    pub surrogate: f64,
    pub kl: f64,
}

/// Objective value and its gradient with respect to `params`.
pub fn objective_and_grad(
    params: &PolicyParams,
    old: &PolicyParams,
    groups: &[ScoredGroup],
    cfg: &CpgdConfig,
    with_grad: bool,
) -> Result<(Objective, Vec<f64>)> {
    let count: usize = groups.iter().map(|g| g.group.size()).sum();
    if count == 0 {
        return Err(Error::Empty("groups"));
    }
    let per_group: Vec<(f64, f64, Vec<f64>)> = groups
        .par_iter()
        .map(|g| group_terms(params, old, g, cfg, count, with_grad))
        .collect::<Result<_>>()?;
    // Ordered reduction keeps the result independent of thread count.
    let mut surrogate = 0.0;
    let mut kl = 0.0;
    let mut grad = vec![0.0; if with_grad { params.logits().len() } else { 0 }];
    for (s, k, g) in per_group {
        surrogate += s;
        kl += k;
        for (acc, v) in grad.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    let value = surrogate - cfg.kl_drift_coeff * kl;
    Ok((
        Objective {
            value,
            surrogate,
            kl,
        },
        grad,
    ))
}

fn group_terms(
    params: &PolicyParams,
    old: &PolicyParams,
    g: &ScoredGroup,
    cfg: &CpgdConfig,
    count: usize,
    with_grad: bool,
) -> Result<(f64, f64, Vec<f64>)> {
    if g.advantages.len() != g.group.size() {
        return Err(Error::Misaligned(format!(
            "{} advantages for a group of {}",
            g.advantages.len(),
            g.group.size()
        )));
    }
    let n = count as f64;
    let eps = cfg.clip_epsilon;
    let mut surrogate = 0.0;
    let mut kl = 0.0;
    let mut grad = vec![0.0; if with_grad { params.logits().len() } else { 0 }];
    for (response, &adv) in g.group.responses.iter().zip(&g.advantages) {
        let terms = token_terms(params, old, &g.group.prompt, response)?;
        let len = response.len();
        let tok_w = 1.0 / len as f64;
        let kl_w = kl_weight(len, cfg.kl_aggregation);
        surrogate += terms
            .log_ratios
            .iter()
            .map(|&lr| clipped_term(lr, adv, eps))
            .sum::<f64>()
            * tok_w
            / n;
        kl += terms.log_ratios.iter().map(|&lr| k3(lr)).sum::<f64>() * kl_w / n;
        if with_grad {
            for ((&s, &t), &lr) in terms
                .states
                .iter()
                .zip(&response.tokens)
                .zip(&terms.log_ratios)
            {
                // d/dlr of the clipped term, and of k3: exp(lr) - 1.
                let w = (clipped_slope(lr, adv, eps) * tok_w
                    - cfg.kl_drift_coeff * lr.exp_m1() * kl_w)
                    / n;
                if w != 0.0 {
                    accumulate_score(params, s, t, w, &mut grad);
                }
            }
        }
    }
    Ok((surrogate, kl, grad))
}

fn check_snapshots(state: &TrainState, groups: &[ScoredGroup]) -> Result<()> {
    match groups.iter().find(|g| g.snapshot != state.old_snapshot) {
        Some(g) => Err(Error::StaleSnapshot {
            expected: state.old_snapshot,
            found: g.snapshot,
        }),
        None => Ok(()),
    }
}

/// Surrogate objective to maximize, evaluated at `state.params`.
pub fn cpgd_loss(state: &TrainState, groups: &[ScoredGroup], cfg: &CpgdConfig) -> Result<f64> {
    check_snapshots(state, groups)?;
    Ok(
        objective_and_grad(&state.params, &state.old_params, groups, cfg, false)?
            .0
            .value,
    )
}

pub fn cpgd_loss_grad(
    state: &TrainState,
    groups: &[ScoredGroup],
    cfg: &CpgdConfig,
) -> Result<(f64, Vec<f64>)> {
    check_snapshots(state, groups)?;
    let (obj, grad) = objective_and_grad(&state.params, &state.old_params, groups, cfg, true)?;
    Ok((obj.value, grad))
}

/// Samples `group_size` responses for every prompt of `env` under `params`.
/// Prompt `p` at step `step` draws from its own seed stream.
pub fn rollout_groups(
    env: &dyn TextEnv,
    params: &PolicyParams,
    cfg: &CpgdConfig,
    seed: u64,
    step: usize,
) -> Result<Vec<ScoredGroup>> {
    let prompts = env.prompts();
    let sampler = env.sampler();
    let snapshot = params.fingerprint();
    prompts
        .par_iter()
        .enumerate()
        .map(|(p, prompt)| {
            let index = (step * prompts.len() + p) as u64;
            let mut rng = seed::stream(seed, "rollout", index);
            let responses = (0..cfg.group_size)
                .map(|_| sample(params, prompt, &sampler, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let rewards = env.score_group(prompt, &responses)?;
            let group = SampleGroup::new(prompt.clone(), responses, rewards)?;
            let advantages = compute_advantages(&group, cfg.advantage_mode, cfg.cale_alpha)?;
            Ok(ScoredGroup {
                group,
                advantages,
                snapshot,
            })
        })
        .collect()
}

/// One outer step: snapshot, roll out, score, then `inner_epochs` ascent
/// steps on the surrogate.
pub fn train_step(
    state: &mut TrainState,
    env: &dyn TextEnv,
    cfg: &CpgdConfig,
    seed: u64,
) -> Result<CpgdMetrics> {
    let started = Instant::now();
    state.refresh_snapshot();
    let groups = rollout_groups(env, &state.old_params, cfg, seed, state.step)?;
    for _ in 0..cfg.inner_epochs {
        let (_, grad) = cpgd_loss_grad(state, &groups, cfg)?;
        state.params.add_scaled(&grad, cfg.learning_rate);
    }
    if !state.params.all_finite() {
        return Err(Error::NonFinite(format!(
            "policy logits at step {}",
            state.step
        )));
    }
    let (obj, _) = objective_and_grad(&state.params, &state.old_params, &groups, cfg, false)?;
    let responses = groups.iter().flat_map(|g| g.group.responses.iter());
    let count = groups.iter().map(|g| g.group.size()).sum::<usize>() as f64;
    let mean_length = responses.map(|r| r.len() as f64).sum::<f64>() / count;
    let mean_reward = groups
        .iter()
        .flat_map(|g| g.group.rewards.iter())
        .sum::<f64>()
        / count;
    let metrics = CpgdMetrics {
        step: state.step,
        mean_reward,
        mean_length,
        kl_estimate: obj.kl,
        loss: obj.value,
        seconds: if cfg.wall_clock {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        },
    };
    let finite = [
        metrics.mean_reward,
        metrics.mean_length,
        metrics.kl_estimate,
        metrics.loss,
    ];
    if finite.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("metrics at step {}", state.step)));
    }
    state.metrics.push(metrics.clone());
    state.step += 1;
    Ok(metrics)
}

pub fn cpgd_train(env: &dyn TextEnv, cfg: &CpgdConfig, seed: u64) -> Result<TrainState> {
    cfg.validate()?;
    let mut state = TrainState::new(env.initial_params()?);
    for _ in 0..cfg.steps {
        train_step(&mut state, env, cfg, seed)?;
    }
    Ok(state)
}
