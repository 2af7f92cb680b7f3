//! Deliberative search with a calibration constraint.
//!
//! An agent answers questions in a small document world by taking THINK,
//! SEARCH and READ actions before it ANSWERs, emitting a confidence with
//! every action. Training maximizes the Lagrangian `R + lambda * (U - eta)`:
//! primal ascent on the policy, then a multiplicative update of `lambda`
//! from the utility measured under the new policy.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{softmax, Prompt, Token};
use crate::reward::sigmoid;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Action {
    Think,
    Search,
    Read,
    Answer,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Think, Action::Search, Action::Read, Action::Answer];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub prompt: Prompt,
    pub answer: Token,
    /// Answers a guesser chooses between; contains `answer`.
    pub candidates: Vec<Token>,
}

impl Question {
    /// The query token the index is keyed on.
    pub fn key(&self) -> Token {
        *self
            .prompt
            .context
            .last()
            .expect("prompt context is never empty")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WorldDoc {
    documents: BTreeMap<String, Vec<Token>>,
    index: BTreeMap<Token, Vec<String>>,
    questions: Vec<Question>,
}

/// Documents hold facts as adjacent `(query, answer)` token pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WorldDoc", into = "WorldDoc")]
pub struct SearchWorld {
    documents: BTreeMap<String, Vec<Token>>,
    index: BTreeMap<Token, Vec<String>>,
    questions: Vec<Question>,
}

impl TryFrom<WorldDoc> for SearchWorld {
    type Error = Error;

    fn try_from(doc: WorldDoc) -> Result<Self> {
        SearchWorld::new(doc.documents, doc.index, doc.questions)
    }
}

impl From<SearchWorld> for WorldDoc {
    fn from(w: SearchWorld) -> Self {
        WorldDoc {
            documents: w.documents,
            index: w.index,
            questions: w.questions,
        }
    }
}

impl SearchWorld {
    pub fn new(
        documents: BTreeMap<String, Vec<Token>>,
        index: BTreeMap<Token, Vec<String>>,
        questions: Vec<Question>,
    ) -> Result<Self> {
        for (key, ids) in &index {
            if let Some(id) = ids.iter().find(|id| !documents.contains_key(*id)) {
                return Err(Error::World(format!(
                    "index entry {key} names missing document {id}"
                )));
            }
        }
        if questions.is_empty() {
            return Err(Error::World("no questions".into()));
        }
        let world = Self {
            documents,
            index,
            questions,
        };
        for q in &world.questions {
            if !q.candidates.contains(&q.answer) {
                return Err(Error::World(format!(
                    "question {} lists no correct candidate",
                    q.prompt.id
                )));
            }
            let answerable = world
                .documents
                .values()
                .any(|d| fact_in(d, q.key()) == Some(q.answer));
            if !answerable {
                return Err(Error::World(format!(
                    "question {} is not answered by any document",
                    q.prompt.id
                )));
            }
        }
        Ok(world)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading world file {}", path.display()), e))?;
        Self::from_json(&text)
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn document(&self, id: &str) -> Option<&[Token]> {
        self.documents.get(id).map(Vec::as_slice)
    }

    pub fn search(&self, query: Token) -> &[String] {
        self.index.get(&query).map(Vec::as_slice).unwrap_or(&[])
    }

    /// `n` questions, each answered by its own indexed document, with one
    /// wrong candidate per question. Guessing is right half the time,
    /// reading first is always right.
    pub fn read_then_answer(n: usize) -> Result<Self> {
        let mut documents = BTreeMap::new();
        let mut index = BTreeMap::new();
        let mut questions = Vec::new();
        for i in 0..n as Token {
            let query = 10 + i;
            let answer = 100 + 2 * i;
            let id = format!("doc-{i}");
            documents.insert(id.clone(), vec![query, answer]);
            index.insert(query, vec![id]);
            questions.push(Question {
                prompt: Prompt::new(format!("q{i}"), vec![query])?,
                answer,
                candidates: vec![answer, answer + 1],
            });
        }
        Self::new(documents, index, questions)
    }
}

/// Token that follows `key` in `doc`, if any.
fn fact_in(doc: &[Token], key: Token) -> Option<Token> {
    doc.windows(2).find(|w| w[0] == key).map(|w| w[1])
}

/// What the agent has accomplished so far in an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SearchState {
    pub searched: bool,
    /// A read document stated the answer to the question.
    pub informed: bool,
}

impl SearchState {
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        usize::from(self.searched) * 2 + usize::from(self.informed)
    }

    pub fn from_index(i: usize) -> Self {
        Self {
            searched: i & 2 != 0,
            informed: i & 1 != 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Observation {
    Thought,
    SearchResults {
        ids: Vec<String>,
    },
    Document {
        id: Option<String>,
        tokens: Vec<Token>,
    },
    Answer {
        token: Option<Token>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub action: Action,
    pub state: SearchState,
    pub observation: Observation,
    pub confidence: f64,
    /// Set on the ANSWER the step cap forces on a non-answering agent.
    pub forced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub question: usize,
    pub steps: Vec<StepRecord>,
    pub reward: f64,
    pub utility: f64,
}

impl TrajectoryRecord {
    pub fn final_confidence(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.confidence)
    }

    pub fn truncated(&self) -> bool {
        self.steps.last().is_some_and(|s| s.forced)
    }
}

/// Information available to an agent when it decides.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeView<'a> {
    pub question: &'a Question,
    pub state: SearchState,
    pub step: usize,
    pub results: &'a [String],
    /// Answer stated by a read document.
    pub known_answer: Option<Token>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: Action,
    pub confidence: f64,
    /// Answer token for ANSWER; `None` lets the world pick (known answer or
    /// a uniform guess among the candidates).
    pub answer: Option<Token>,
}

pub trait SearchAgent: Sync {
    fn decide(&self, view: &EpisodeView<'_>, rng: &mut dyn RngCore) -> Decision;
}

/// Confidence recorded on an ANSWER forced by the step cap.
pub const FORCED_CONFIDENCE: f64 = 0.0;

/// Runs one episode for `question` of `world`.
pub fn rollout(
    agent: &dyn SearchAgent,
    world: &SearchWorld,
    question: usize,
    rng: &mut dyn RngCore,
    step_cap: usize,
    utility: UtilityMode,
) -> Result<TrajectoryRecord> {
    if step_cap == 0 {
        return Err(Error::Config("step_cap must be at least 1".into()));
    }
    let q = world
        .questions
        .get(question)
        .ok_or_else(|| Error::World(format!("no question {question}")))?;
    let mut state = SearchState {
        searched: false,
        informed: false,
    };
    let mut results: Vec<String> = Vec::new();
    let mut read: Vec<String> = Vec::new();
    let mut known_answer = None;
    let mut steps = Vec::new();
    let mut reward = 0.0;
    let mut answered = false;
    for step in 0..step_cap {
        let view = EpisodeView {
            question: q,
            state,
            step,
            results: &results,
            known_answer,
        };
        let decision = agent.decide(&view, rng);
        let confidence = decision.confidence.clamp(0.0, 1.0);
        let before = state;
        let observation = match decision.action {
            Action::Think => Observation::Thought,
            Action::Search => {
                let ids = world.search(q.key()).to_vec();
                for id in &ids {
                    if !results.contains(id) {
                        results.push(id.clone());
                    }
                }
                state.searched = true;
                Observation::SearchResults { ids }
            }
            Action::Read => match results.iter().find(|id| !read.contains(id)).cloned() {
                Some(id) => {
                    let tokens = world.document(&id).unwrap_or(&[]).to_vec();
                    if let Some(fact) = fact_in(&tokens, q.key()) {
                        known_answer = Some(fact);
                        state.informed = true;
                    }
                    read.push(id.clone());
                    Observation::Document {
                        id: Some(id),
                        tokens,
                    }
                }
                None => Observation::Document {
                    id: None,
                    tokens: Vec::new(),
                },
            },
            Action::Answer => {
                let token = match decision.answer.or(known_answer) {
                    Some(t) => t,
                    None => q.candidates[rng.gen_range(0..q.candidates.len())],
                };
                reward = if token == q.answer { 1.0 } else { 0.0 };
                answered = true;
                Observation::Answer { token: Some(token) }
            }
        };
        steps.push(StepRecord {
            action: decision.action,
            state: before,
            observation,
            confidence,
            forced: false,
        });
        if answered {
            break;
        }
    }
    if !answered {
        steps.push(StepRecord {
            action: Action::Answer,
            state,
            observation: Observation::Answer { token: None },
            confidence: FORCED_CONFIDENCE,
            forced: true,
        });
    }
    let mut record = TrajectoryRecord {
        question,
        steps,
        reward,
        utility: 0.0,
    };
    record.utility = trajectory_utility(&record, utility);
    Ok(record)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UtilityMode {
    /// `1 - |final confidence - reward|`.
    Calibration,
    /// Sum of per-step confidences.
    ConfidenceSum,
}

pub fn trajectory_utility(traj: &TrajectoryRecord, mode: UtilityMode) -> f64 {
    match mode {
        UtilityMode::Calibration => 1.0 - (traj.final_confidence() - traj.reward).abs(),
        UtilityMode::ConfidenceSum => traj.steps.iter().map(|s| s.confidence).sum(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagrangianState {
    pub lambdas: Vec<f64>,
    pub etas: Vec<f64>,
    pub primal_step: f64,
    pub dual_step: f64,
}

impl LagrangianState {
    pub fn single(lambda0: f64, eta: f64, primal_step: f64, dual_step: f64) -> Result<Self> {
        if !(lambda0 > 0.0 && lambda0.is_finite()) {
            return Err(Error::Config(format!(
                "initial multiplier {lambda0} must be positive"
            )));
        }
        Ok(Self {
            lambdas: vec![lambda0],
            etas: vec![eta],
            primal_step,
            dual_step,
        })
    }
}

/// `lambda_i <- lambda_i * exp(beta * (eta_i - U_i))`.
pub fn dual_step(state: &LagrangianState, measured_utility: &[f64]) -> LagrangianState {
    assert_eq!(
        measured_utility.len(),
        state.lambdas.len(),
        "one utility per constraint"
    );
    let lambdas = state
        .lambdas
        .iter()
        .zip(&state.etas)
        .zip(measured_utility)
        .map(|((&l, &eta), &u)| l * (state.dual_step * (eta - u)).exp())
        .collect();
    LagrangianState {
        lambdas,
        ..state.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMetrics {
    pub accuracy: f64,
    pub reliability: f64,
    /// Fraction of wrong answers given with confidence at or above the
    /// certainty threshold.
    pub fc_rate: f64,
}

pub fn calibration_metrics(
    trajectories: &[TrajectoryRecord],
    certainty_threshold: f64,
) -> Result<CalibrationMetrics> {
    let pairs: Vec<(f64, f64)> = trajectories
        .iter()
        .map(|t| (t.final_confidence(), t.reward))
        .collect();
    calibration_from_pairs(&pairs, certainty_threshold)
}

/// Same as [`calibration_metrics`] on raw `(confidence, reward)` pairs.
pub fn calibration_from_pairs(
    pairs: &[(f64, f64)],
    certainty_threshold: f64,
) -> Result<CalibrationMetrics> {
    if pairs.is_empty() {
        return Err(Error::Empty("trajectories"));
    }
    let n = pairs.len() as f64;
    let mut correct = 0usize;
    let mut reliable = 0usize;
    let mut false_certain = 0usize;
    for &(c, r) in pairs {
        let right = r == 1.0;
        let certain = c >= certainty_threshold;
        correct += usize::from(right);
        reliable += usize::from(certain == right);
        false_certain += usize::from(certain && !right);
    }
    Ok(CalibrationMetrics {
        accuracy: correct as f64 / n,
        reliability: reliable as f64 / n,
        fc_rate: false_certain as f64 / n,
    })
}

/// Softmax action head and sigmoid confidence head, one row per
/// [`SearchState`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularSearchPolicy {
    pub action_logits: Vec<[f64; 4]>,
    pub confidence_logits: Vec<f64>,
}

impl Default for TabularSearchPolicy {
    fn default() -> Self {
        Self {
            action_logits: vec![[0.0; 4]; SearchState::COUNT],
            confidence_logits: vec![0.0; SearchState::COUNT],
        }
    }
}

impl TabularSearchPolicy {
    pub fn action_probs(&self, state: SearchState) -> Vec<f64> {
        softmax(&self.action_logits[state.index()])
    }

    pub fn confidence(&self, state: SearchState) -> f64 {
        sigmoid(self.confidence_logits[state.index()])
    }

    pub fn all_finite(&self) -> bool {
        self.action_logits.iter().flatten().all(|v| v.is_finite())
            && self.confidence_logits.iter().all(|v| v.is_finite())
    }

    fn add_scaled(&mut self, grad: &PolicyGradient, scale: f64) {
        for (row, g) in self.action_logits.iter_mut().zip(&grad.action) {
            for (v, d) in row.iter_mut().zip(g) {
                *v += scale * d;
            }
        }
        for (v, d) in self.confidence_logits.iter_mut().zip(&grad.confidence) {
            *v += scale * d;
        }
    }
}

impl SearchAgent for TabularSearchPolicy {
    fn decide(&self, view: &EpisodeView<'_>, rng: &mut dyn RngCore) -> Decision {
        let probs = self.action_probs(view.state);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut action = Action::Answer;
        for (a, p) in Action::ALL.iter().zip(&probs) {
            acc += p;
            if u < acc {
                action = *a;
                break;
            }
        }
        Decision {
            action,
            confidence: self.confidence(view.state),
            answer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGradient {
    pub action: Vec<[f64; 4]>,
    pub confidence: Vec<f64>,
}

impl PolicyGradient {
    fn zeros() -> Self {
        Self {
            action: vec![[0.0; 4]; SearchState::COUNT],
            confidence: vec![0.0; SearchState::COUNT],
        }
    }
}

/// Derivative of the utility with respect to each step's confidence.
fn utility_confidence_slopes(traj: &TrajectoryRecord, mode: UtilityMode) -> Vec<f64> {
    let n = traj.steps.len();
    match mode {
        UtilityMode::Calibration => {
            let mut slopes = vec![0.0; n];
            let c = traj.final_confidence();
            slopes[n - 1] = if c < traj.reward {
                1.0
            } else if c > traj.reward {
                -1.0
            } else {
                0.0
            };
            slopes
        }
        UtilityMode::ConfidenceSum => vec![1.0; n],
    }
}

/// Gradient estimate of `R + sum_i lambda_i U_i` over a batch: score
/// function on the combined return with a batch-mean baseline, plus the
/// pathwise term of the utility through the confidence head.
pub fn primal_gradient(
    policy: &TabularSearchPolicy,
    batch: &[TrajectoryRecord],
    lambdas: &[f64],
    mode: UtilityMode,
) -> PolicyGradient {
    let lambda: f64 = lambdas.iter().sum();
    let n = batch.len() as f64;
    let returns: Vec<f64> = batch
        .iter()
        .map(|t| t.reward + lambda * t.utility)
        .collect();
    let baseline = returns.iter().sum::<f64>() / n;
    let mut grad = PolicyGradient::zeros();
    for (traj, g) in batch.iter().zip(&returns) {
        let adv = (g - baseline) / n;
        for step in traj.steps.iter().filter(|s| !s.forced) {
            let s = step.state.index();
            let probs = policy.action_probs(step.state);
            for (a, p) in probs.iter().enumerate() {
                let hit = if a == step.action.index() { 1.0 } else { 0.0 };
                grad.action[s][a] += adv * (hit - p);
            }
        }
        for (step, slope) in traj.steps.iter().zip(utility_confidence_slopes(traj, mode)) {
            if step.forced || slope == 0.0 {
                continue;
            }
            let c = step.confidence;
            grad.confidence[step.state.index()] += lambda * slope * c * (1.0 - c) / n;
        }
    }
    grad
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstrainedConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Primal step size.
    pub primal_step: f64,
    /// Dual step size (the multiplicative-weights rate).
    pub dual_step: f64,
    pub lambda0: f64,
    pub eta: f64,
    pub step_cap: usize,
    pub utility_mode: UtilityMode,
    pub certainty_threshold: f64,
    pub wall_clock: bool,
}

impl Default for ConstrainedConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 32,
            primal_step: 1.0,
            dual_step: 0.05,
            lambda0: 0.01,
            eta: 0.9,
            step_cap: 6,
            utility_mode: UtilityMode::Calibration,
            certainty_threshold: 0.5,
            wall_clock: false,
        }
    }
}

impl ConstrainedConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.steps > 0
            && self.batch_size > 0
            && self.step_cap > 0
            && self.primal_step.is_finite()
            && self.primal_step >= 0.0
            && self.dual_step.is_finite()
            && self.dual_step >= 0.0
            && self.lambda0 > 0.0
            && self.lambda0.is_finite()
            && self.eta.is_finite()
            && (0.0..=1.0).contains(&self.certainty_threshold);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid constrained training config {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedMetrics {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_utility: f64,
    pub lambda: f64,
    pub accuracy: f64,
    pub reliability: f64,
    pub fc_rate: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedRun {
    pub policy: TabularSearchPolicy,
    pub lagrangian: LagrangianState,
    pub metrics: Vec<ConstrainedMetrics>,
}

/// Rolls out `batch_size` episodes, cycling through the questions; episode
/// `j` of batch `k` uses its own seed stream.
pub fn rollout_batch(
    policy: &TabularSearchPolicy,
    world: &SearchWorld,
    cfg: &ConstrainedConfig,
    seed: u64,
    batch: usize,
) -> Result<Vec<TrajectoryRecord>> {
    let questions = world.questions().len();
    (0..cfg.batch_size)
        .into_par_iter()
        .map(|j| {
            let mut rng = seed::stream(seed, "search-rollout", (batch * cfg.batch_size + j) as u64);
            rollout(
                policy,
                world,
                j % questions,
                &mut rng,
                cfg.step_cap,
                cfg.utility_mode,
            )
        })
        .collect()
}

fn mean_of(batch: &[TrajectoryRecord], f: impl Fn(&TrajectoryRecord) -> f64) -> f64 {
    batch.iter().map(f).sum::<f64>() / batch.len() as f64
}

/// Alternating primal/dual training. Each step ascends on the current batch
/// with the current multiplier, draws the next batch from the updated
/// policy, and uses that batch's mean utility for the dual update.
pub fn constrained_train(
    world: &SearchWorld,
    cfg: &ConstrainedConfig,
    seed: u64,
) -> Result<ConstrainedRun> {
    constrained_train_from(world, cfg, seed, TabularSearchPolicy::default())
}

pub fn constrained_train_from(
    world: &SearchWorld,
    cfg: &ConstrainedConfig,
    seed: u64,
    mut policy: TabularSearchPolicy,
) -> Result<ConstrainedRun> {
    cfg.validate()?;
    let mut lagrangian =
        LagrangianState::single(cfg.lambda0, cfg.eta, cfg.primal_step, cfg.dual_step)?;
    let mut batch = rollout_batch(&policy, world, cfg, seed, 0)?;
    let mut metrics = Vec::with_capacity(cfg.steps);
    for k in 0..cfg.steps {
        let started = Instant::now();
        let grad = primal_gradient(&policy, &batch, &lagrangian.lambdas, cfg.utility_mode);
        policy.add_scaled(&grad, lagrangian.primal_step);
        if !policy.all_finite() {
            return Err(Error::NonFinite(format!("search policy at step {k}")));
        }
        batch = rollout_batch(&policy, world, cfg, seed, k + 1)?;
        let utility = mean_of(&batch, |t| t.utility);
        lagrangian = dual_step(&lagrangian, &[utility]);
        if !lagrangian.lambdas[0].is_finite() {
            return Err(Error::NonFinite(format!("multiplier at step {k}")));
        }
        let cal = calibration_metrics(&batch, cfg.certainty_threshold)?;
        metrics.push(ConstrainedMetrics {
            step: k,
            mean_reward: mean_of(&batch, |t| t.reward),
            mean_utility: utility,
            lambda: lagrangian.lambdas[0],
            accuracy: cal.accuracy,
            reliability: cal.reliability,
            fc_rate: cal.fc_rate,
            seconds: if cfg.wall_clock {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        });
    }
    Ok(ConstrainedRun {
        policy,
        lagrangian,
        metrics,
    })
}
