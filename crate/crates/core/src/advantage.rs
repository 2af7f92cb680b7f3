//! Group-relative advantages and the length-conditioned correction.
//!
//! The base advantage is the reward minus the group mean (no std
//! normalization). The length-conditioned correction sorts a group by
//! response length, hands the shorter half a bonus of `alpha/2` times the
//! longer half's mean reward, and taxes each longer response by `alpha/2`
//! times its own reward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{Prompt, Response};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleGroup {
    pub prompt: Prompt,
    pub responses: Vec<Response>,
    pub rewards: Vec<f64>,
}

impl SampleGroup {
    pub fn new(prompt: Prompt, responses: Vec<Response>, rewards: Vec<f64>) -> Result<Self> {
        if responses.len() != rewards.len() {
            return Err(Error::Misaligned(format!(
                "{} responses but {} rewards",
                responses.len(),
                rewards.len()
            )));
        }
        if responses.len() < 2 {
            return Err(Error::GroupTooSmall(responses.len()));
        }
        Ok(Self {
            prompt,
            responses,
            rewards,
        })
    }

    pub fn size(&self) -> usize {
        self.responses.len()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.responses.iter().map(Response::len).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthSplit {
    /// Indices of the `floor(G/2)` shortest responses.
    pub shorter: Vec<usize>,
    /// Everything else; holds the extra member when `G` is odd.
    pub longer: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageRecord {
    pub base: Vec<f64>,
    pub correction: Vec<f64>,
    pub cale: Vec<f64>,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// `R_i - mean(R)`.
pub fn baseline_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::GroupTooSmall(rewards.len()));
    }
    let m = mean(rewards);
    Ok(rewards.iter().map(|r| r - m).collect())
}

pub fn group_baseline_advantage(group: &SampleGroup) -> Result<Vec<f64>> {
    baseline_advantages(&group.rewards)
}

/// Stable sort by length, then the first `floor(G/2)` indices are the
/// shorter half. Both halves are returned in ascending index order.
pub fn split_by_length(lengths: &[usize]) -> LengthSplit {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&i| (lengths[i], i));
    let cut = lengths.len() / 2;
    let mut shorter = order[..cut].to_vec();
    let mut longer = order[cut..].to_vec();
    shorter.sort_unstable();
    longer.sort_unstable();
    LengthSplit { shorter, longer }
}

pub fn length_split(group: &SampleGroup) -> LengthSplit {
    split_by_length(&group.lengths())
}

/// The correction term for every member, given lengths and rewards.
pub fn length_correction(lengths: &[usize], rewards: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if lengths.len() != rewards.len() {
        return Err(Error::Misaligned(format!(
            "{} lengths but {} rewards",
            lengths.len(),
            rewards.len()
        )));
    }
    if lengths.len() < 2 {
        return Err(Error::GroupTooSmall(lengths.len()));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!(
            "alpha must be a finite nonnegative number, got {alpha}"
        )));
    }
    let split = split_by_length(lengths);
    let longer_rewards: Vec<f64> = split.longer.iter().map(|&i| rewards[i]).collect();
    let bonus = 0.5 * alpha * mean(&longer_rewards);
    let mut correction = vec![0.0; lengths.len()];
    for &i in &split.shorter {
        correction[i] = bonus;
    }
    for &i in &split.longer {
        correction[i] = 0.0 - 0.5 * alpha * rewards[i];
    }
    Ok(correction)
}

pub fn cale_advantage(group: &SampleGroup, alpha: f64, base: &[f64]) -> Result<AdvantageRecord> {
    if base.len() != group.size() {
        return Err(Error::Misaligned(format!(
            "{} base advantages for a group of {}",
            base.len(),
            group.size()
        )));
    }
    let correction = length_correction(&group.lengths(), &group.rewards, alpha)?;
    let cale = base.iter().zip(&correction).map(|(b, p)| b + p).collect();
    Ok(AdvantageRecord {
        base: base.to_vec(),
        correction,
        cale,
    })
}
