//! Experiment configs, deterministic runs and their on-disk artifacts.
//!
//! A run writes `metrics.csv`, `snapshot.json`, `summary.json` and
//! `manifest.json` into a temporary directory that is renamed into place
//! only when everything succeeded. With `replicates` set, each seed gets a
//! `seed-<n>` subdirectory and [`compare`] treats the run as a seed family.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cpgd::{cpgd_train, AdvantageMode, CpgdConfig};
use crate::deliberative::{constrained_train, ConstrainedConfig, SearchWorld};
use crate::edit::{
    diff, edit_distance, iterative_simplify, segment_cost, tokenize, Granularity, OpWeights,
    SimplifyConfig, SimplifyHooks, Solution,
};
use crate::error::{Error, Result};
use crate::pvm::{AdversarialConfig, AdversarialScenario};
use crate::seed;
use crate::tasks::{evaluate, TaskSpec};

/// Overrides the directory that relative output paths resolve against.
pub const OUTPUT_ROOT_VAR: &str = "ALIGNLAB_OUTPUT_ROOT";

fn default_task() -> TaskSpec {
    TaskSpec::DualLength {
        gamma: 0.1,
        max_length: 16,
        continue_logit: 1.0,
    }
}

fn default_eval_samples() -> usize {
    1000
}

fn default_questions() -> usize {
    4
}

fn default_granularity() -> Granularity {
    Granularity::Word
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    Cpgd {
        #[serde(default = "default_task")]
        task: TaskSpec,
        #[serde(default)]
        cpgd: CpgdConfig,
        #[serde(default = "default_eval_samples")]
        eval_samples: usize,
    },
    /// CPGD with the length-conditioned advantage at efficiency `alpha`.
    Cale {
        #[serde(default = "default_task")]
        task: TaskSpec,
        #[serde(default)]
        cpgd: CpgdConfig,
        alpha: f64,
        #[serde(default = "default_eval_samples")]
        eval_samples: usize,
    },
    Constrained {
        /// World file; the built-in read-then-answer world when absent.
        #[serde(default)]
        world: Option<PathBuf>,
        #[serde(default = "default_questions")]
        questions: usize,
        #[serde(default)]
        training: ConstrainedConfig,
    },
    PvmDecode {
        #[serde(default)]
        scenario: AdversarialConfig,
    },
    Diff {
        source: PathBuf,
        target: PathBuf,
        #[serde(default = "default_granularity")]
        mode: Granularity,
        #[serde(default)]
        weights: OpWeights,
    },
    Simplify {
        hint: PathBuf,
        reference: PathBuf,
        #[serde(default)]
        limits: SimplifyConfig,
    },
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Cpgd { .. } => "cpgd",
            Experiment::Cale { .. } => "cale",
            Experiment::Constrained { .. } => "constrained",
            Experiment::PvmDecode { .. } => "pvm-decode",
            Experiment::Diff { .. } => "diff",
            Experiment::Simplify { .. } => "simplify",
        }
    }

    /// Resolves file references against `base`.
    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            Experiment::Constrained { world: Some(w), .. } => fix(w),
            Experiment::Diff { source, target, .. } => {
                fix(source);
                fix(target);
            }
            Experiment::Simplify {
                hint, reference, ..
            } => {
                fix(hint);
                fix(reference);
            }
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Run seeds `seed..seed + replicates`, one subdirectory each.
    #[serde(default)]
    pub replicates: Option<usize>,
    /// Worker threads for the parallel rollout layers.
    #[serde(default)]
    pub threads: Option<usize>,
    pub output_dir: PathBuf,
    #[serde(flatten)]
    pub experiment: Experiment,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses a config file; relative input paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.experiment.rebase(base);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == Some(0) || self.threads == Some(0) {
            return Err(Error::Config(
                "replicates and threads must be positive".into(),
            ));
        }
        match &self.experiment {
            Experiment::Cpgd { task, cpgd, .. } | Experiment::Cale { task, cpgd, .. } => {
                cpgd.validate()?;
                task.build()?;
            }
            Experiment::Constrained { training, .. } => training.validate()?,
            Experiment::PvmDecode { scenario } => scenario.decode.validate()?,
            Experiment::Diff { .. } => {}
            Experiment::Simplify { limits, .. } => {
                if limits.max_consecutive_failures == 0 || limits.max_iterations == 0 {
                    return Err(Error::Config("simplify limits must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        let n = self.replicates.unwrap_or(1) as u64;
        (0..n).map(|i| self.seed.wrapping_add(i)).collect()
    }

    /// Output directory after applying [`OUTPUT_ROOT_VAR`].
    pub fn resolved_output(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_VAR) {
            Some(root) if self.output_dir.is_relative() => {
                PathBuf::from(root).join(&self.output_dir)
            }
            _ => self.output_dir.clone(),
        }
    }
}

/// Step-indexed numeric columns; the first column is always `step`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl MetricTable {
    pub fn new(columns: &[&str]) -> Self {
        let mut all = vec!["step".to_string()];
        all.extend(columns.iter().map(|c| c.to_string()));
        Self {
            columns: all,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, step: usize, values: &[f64]) {
        assert_eq!(
            values.len() + 1,
            self.columns.len(),
            "row width matches the header"
        );
        let mut row = vec![step as f64];
        row.extend_from_slice(values);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    /// Plain decimal formatting; the step is written as an integer.
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let mut cells = vec![format!("{}", row[0] as u64)];
            cells.extend(row[1..].iter().map(|v| format!("{v}")));
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(Error::Empty("metrics file"))?;
        let columns: Vec<String> = header.split(',').map(str::to_owned).collect();
        if columns.first().map(String::as_str) != Some("step") {
            return Err(Error::Schema(format!("first column is not step: {header}")));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let row = line
                .split(',')
                .map(|c| c.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Schema(format!("row {}: {e}", i + 1)))?;
            if row.len() != columns.len() {
                return Err(Error::Schema(format!(
                    "row {} has {} cells, header has {}",
                    i + 1,
                    row.len(),
                    columns.len()
                )));
            }
            rows.push(row);
        }
        Ok(Self { columns, rows })
    }
}

/// Files produced by one seed of an experiment.
struct Artifacts {
    metrics: MetricTable,
    snapshot: Value,
    summary: Value,
    extra: Vec<(&'static str, String)>,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn pretty(v: &Value) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn run_cpgd(
    task: &TaskSpec,
    cfg: &CpgdConfig,
    eval_samples: usize,
    seed: u64,
) -> Result<Artifacts> {
    let env = task.build()?;
    let state = cpgd_train(env.as_ref(), cfg, seed)?;
    let mut metrics = MetricTable::new(&[
        "mean_reward",
        "mean_length",
        "kl_estimate",
        "loss",
        "seconds",
    ]);
    for m in &state.metrics {
        metrics.push(
            m.step,
            &[
                m.mean_reward,
                m.mean_length,
                m.kl_estimate,
                m.loss,
                m.seconds,
            ],
        );
    }
    let summary = if eval_samples > 0 {
        let mut rng = seed::stream(seed, "eval", 0);
        serde_json::to_value(evaluate(
            env.as_ref(),
            &state.params,
            eval_samples,
            &mut rng,
        )?)?
    } else {
        Value::Null
    };
    Ok(Artifacts {
        metrics,
        snapshot: serde_json::from_str(&state.params.to_json()?)?,
        summary,
        extra: Vec::new(),
    })
}

fn run_constrained(
    world: &Option<PathBuf>,
    questions: usize,
    cfg: &ConstrainedConfig,
    seed: u64,
) -> Result<Artifacts> {
    let world = match world {
        Some(path) => SearchWorld::load(path)?,
        None => SearchWorld::read_then_answer(questions)?,
    };
    let run = constrained_train(&world, cfg, seed)?;
    let mut metrics = MetricTable::new(&[
        "mean_reward",
        "mean_utility",
        "lambda",
        "accuracy",
        "reliability",
        "fc_rate",
        "seconds",
    ]);
    for m in &run.metrics {
        metrics.push(
            m.step,
            &[
                m.mean_reward,
                m.mean_utility,
                m.lambda,
                m.accuracy,
                m.reliability,
                m.fc_rate,
                m.seconds,
            ],
        );
    }
    let last = run.metrics.last().ok_or(Error::Empty("training steps"))?;
    Ok(Artifacts {
        metrics,
        snapshot: json!({ "policy": run.policy, "lagrangian": run.lagrangian }),
        summary: serde_json::to_value(last)?,
        extra: Vec::new(),
    })
}

#[derive(Serialize)]
struct AuditLine<'a> {
    prompt: usize,
    #[serde(flatten)]
    entry: &'a crate::pvm::AuditEntry,
}

fn run_pvm(cfg: &AdversarialConfig, seed: u64) -> Result<Artifacts> {
    let scenario = AdversarialScenario::build(cfg, seed)?;
    let outcomes = scenario.run(cfg, seed)?;
    let mut metrics = MetricTable::new(&[
        "guided_unsafe",
        "unguided_unsafe",
        "guided_len",
        "unguided_len",
        "clean_pools",
    ]);
    let mut audit = String::new();
    for (i, (o, guided)) in outcomes.iter().enumerate() {
        metrics.push(
            i,
            &[
                o.guided_unsafe as f64,
                o.unguided_unsafe as f64,
                o.guided_len as f64,
                o.unguided_len as f64,
                if o.clean_pools { 1.0 } else { 0.0 },
            ],
        );
        for entry in &guided.audit {
            audit.push_str(&serde_json::to_string(&AuditLine { prompt: i, entry })?);
            audit.push('\n');
        }
    }
    let n = outcomes.len() as f64;
    let rate = |f: &dyn Fn(&crate::pvm::PromptOutcome) -> bool| {
        outcomes.iter().filter(|(o, _)| f(o)).count() as f64 / n
    };
    let summary = json!({
        "prompts": outcomes.len(),
        "guided_unsafe_rate": rate(&|o| o.guided_unsafe > 0),
        "unguided_unsafe_rate": rate(&|o| o.unguided_unsafe > 0),
        "clean_pool_rate": rate(&|o| o.clean_pools),
        "unsafe_despite_clean_pool": outcomes.iter().filter(|(o, _)| o.clean_pools && o.guided_unsafe > 0).count(),
    });
    Ok(Artifacts {
        metrics,
        snapshot: json!({ "value": scenario.value, "knowledge": scenario.knowledge }),
        summary,
        extra: vec![("audit.jsonl", audit)],
    })
}

fn run_diff(
    source: &Path,
    target: &Path,
    mode: Granularity,
    weights: &OpWeights,
) -> Result<Artifacts> {
    let a = tokenize(&read_file(source)?, mode);
    let b = tokenize(&read_file(target)?, mode);
    let script = diff(&a, &b);
    let distance = edit_distance(&script, weights)?;
    let mut metrics = MetricTable::new(&["start", "end", "inserted", "cost"]);
    for (i, seg) in script.changes().enumerate() {
        metrics.push(
            i,
            &[
                seg.start as f64,
                seg.end as f64,
                seg.text.len() as f64,
                segment_cost(seg, weights),
            ],
        );
    }
    Ok(Artifacts {
        metrics,
        snapshot: serde_json::to_value(&script)?,
        summary: json!({
            "distance": distance,
            "source_len": a.len(),
            "target_len": b.len(),
            "changes": script.changes().count(),
        }),
        extra: Vec::new(),
    })
}

/// Lowercased word with surrounding punctuation removed.
fn normalize_word(w: &str) -> String {
    w.trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

/// Deterministic stand-ins for the simplification loop, working on
/// sentences. The responder drops one sentence, rotating through positions
/// across calls. The solver can only repeat words present in the hint, and
/// a candidate validates when the solver's answer still covers every word
/// of the reference answer.
#[derive(Debug, Clone, Default)]
pub struct SentenceDropFakes {
    calls: usize,
}

impl SimplifyHooks<String> for SentenceDropFakes {
    fn respond(&mut self, hint: &[String]) -> std::result::Result<Vec<String>, String> {
        if hint.len() <= 1 {
            return Err("hint has a single sentence left".into());
        }
        let drop = self.calls % hint.len();
        self.calls += 1;
        let mut out = hint.to_vec();
        out.remove(drop);
        Ok(out)
    }

    fn solve(&mut self, hint: &[String]) -> std::result::Result<Solution<String>, String> {
        let answer: Vec<String> = hint
            .iter()
            .flat_map(|s| tokenize(s, Granularity::Word))
            .map(|w| normalize_word(&w))
            .filter(|w| !w.is_empty())
            .collect();
        Ok(Solution {
            reasoning: hint.to_vec(),
            answer,
        })
    }

    fn validate(
        &mut self,
        _hint: &[String],
        solved: &Solution<String>,
        reference: &Solution<String>,
    ) -> bool {
        let known: BTreeSet<&String> = solved.answer.iter().collect();
        reference.answer.iter().all(|w| known.contains(w))
    }
}

pub fn reference_solution(text: &str) -> Solution<String> {
    Solution {
        reasoning: Vec::new(),
        answer: tokenize(text, Granularity::Word)
            .iter()
            .map(|w| normalize_word(w))
            .filter(|w| !w.is_empty())
            .collect(),
    }
}

fn run_simplify(hint: &Path, reference: &Path, limits: &SimplifyConfig) -> Result<Artifacts> {
    let initial = tokenize(&read_file(hint)?, Granularity::Sentence);
    let reference = reference_solution(&read_file(reference)?);
    let outcome = iterative_simplify(
        &initial,
        &reference,
        limits,
        &mut SentenceDropFakes::default(),
    )?;
    let mut metrics = MetricTable::new(&["accepted", "hint_len", "consecutive_failures"]);
    for (i, s) in outcome.trace.iter().enumerate() {
        metrics.push(
            i,
            &[
                if s.accepted { 1.0 } else { 0.0 },
                s.hint_len as f64,
                s.consecutive_failures as f64,
            ],
        );
    }
    Ok(Artifacts {
        metrics,
        snapshot: serde_json::to_value(&outcome)?,
        summary: json!({
            "hint": outcome.hint.join(" "),
            "accepted": outcome.accepted,
            "responder_calls": outcome.responder_calls,
            "stopped": outcome.stopped,
        }),
        extra: Vec::new(),
    })
}

fn run_seed(exp: &Experiment, seed: u64) -> Result<Artifacts> {
    match exp {
        Experiment::Cpgd {
            task,
            cpgd,
            eval_samples,
        } => run_cpgd(task, cpgd, *eval_samples, seed),
        Experiment::Cale {
            task,
            cpgd,
            alpha,
            eval_samples,
        } => {
            let cfg = CpgdConfig {
                advantage_mode: AdvantageMode::Cale,
                cale_alpha: *alpha,
                ..cpgd.clone()
            };
            run_cpgd(task, &cfg, *eval_samples, seed)
        }
        Experiment::Constrained {
            world,
            questions,
            training,
        } => run_constrained(world, *questions, training, seed),
        Experiment::PvmDecode { scenario } => run_pvm(scenario, seed),
        Experiment::Diff {
            source,
            target,
            mode,
            weights,
        } => run_diff(source, target, *mode, weights),
        Experiment::Simplify {
            hint,
            reference,
            limits,
        } => run_simplify(hint, reference, limits),
    }
}

fn write_artifacts(dir: &Path, art: &Artifacts) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut files = vec![
        ("metrics.csv".to_string(), art.metrics.to_csv()),
        ("snapshot.json".to_string(), pretty(&art.snapshot)?),
        ("summary.json".to_string(), pretty(&art.summary)?),
    ];
    files.extend(art.extra.iter().map(|(n, c)| (n.to_string(), c.clone())));
    for (name, contents) in &files {
        write_file(&dir.join(name), contents)?;
    }
    Ok(files.into_iter().map(|(n, _)| n).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub seeds: Vec<u64>,
    pub code_version: String,
    pub config: Value,
    pub files: Vec<String>,
}

fn run_into(cfg: &ExperimentConfig, dir: &Path) -> Result<Manifest> {
    let seeds = cfg.seeds();
    let mut files = Vec::new();
    for &s in &seeds {
        let art = run_seed(&cfg.experiment, s)?;
        let sub = if cfg.replicates.is_some() {
            PathBuf::from(format!("seed-{s}"))
        } else {
            PathBuf::new()
        };
        for f in write_artifacts(&dir.join(&sub), &art)? {
            files.push(sub.join(f).to_string_lossy().into_owned());
        }
    }
    let manifest = Manifest {
        kind: cfg.experiment.kind().to_string(),
        seeds,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config: serde_json::to_value(cfg)?,
        files,
    };
    write_file(
        &dir.join("manifest.json"),
        &pretty(&serde_json::to_value(&manifest)?)?,
    )?;
    Ok(manifest)
}

/// Runs the experiment and moves its artifacts into the output directory,
/// which must not exist yet. Nothing is left behind on failure.
pub fn run(cfg: &ExperimentConfig) -> Result<(PathBuf, Manifest)> {
    cfg.validate()?;
    let out = cfg.resolved_output();
    if out.exists() {
        return Err(Error::Config(format!(
            "output directory {} already exists",
            out.display()
        )));
    }
    let name = out
        .file_name()
        .ok_or_else(|| Error::Config(format!("output directory {} has no name", out.display())))?;
    let parent = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(parent)
        .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    let tmp = parent.join(format!(
        ".{}.tmp-{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)
            .map_err(|e| Error::io(format!("clearing {}", tmp.display()), e))?;
    }
    let result = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| run_into(cfg, &tmp)),
        None => run_into(cfg, &tmp),
    };
    match result {
        Ok(manifest) => {
            fs::rename(&tmp, &out)
                .map_err(|e| Error::io(format!("moving results to {}", out.display()), e))?;
            Ok((out, manifest))
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&tmp);
            Err(e)
        }
    }
}

/// Metric tables of a run directory, keyed by seed subdirectory (or `""`
/// for a single run).
pub fn load_runs(dir: &Path) -> Result<BTreeMap<String, MetricTable>> {
    let single = dir.join("metrics.csv");
    let mut runs = BTreeMap::new();
    if single.is_file() {
        runs.insert(String::new(), MetricTable::from_csv(&read_file(&single)?)?);
        return Ok(runs);
    }
    let entries =
        fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let metrics = entry.path().join("metrics.csv");
        if name.starts_with("seed-") && metrics.is_file() {
            runs.insert(name, MetricTable::from_csv(&read_file(&metrics)?)?);
        }
    }
    if runs.is_empty() {
        return Err(Error::Schema(format!("{} holds no metrics", dir.display())));
    }
    Ok(runs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnComparison {
    pub column: String,
    /// Final value, averaged over seeds.
    pub final_a: f64,
    pub final_b: f64,
    /// Mean over the last 10% of steps, averaged over seeds.
    pub tail_a: f64,
    pub tail_b: f64,
    /// Seeds where the final value of A is below, above, or equal to B's.
    pub a_lower: usize,
    pub a_higher: usize,
    pub ties: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub seeds: usize,
    pub columns: Vec<ColumnComparison>,
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "column,final_a,final_b,tail_a,tail_b,a_lower,a_higher,ties"
        )?;
        for c in &self.columns {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{}",
                c.column, c.final_a, c.final_b, c.tail_a, c.tail_b, c.a_lower, c.a_higher, c.ties
            )?;
        }
        Ok(())
    }
}

fn tail_mean(values: &[f64]) -> f64 {
    let k = values.len().div_ceil(10).max(1).min(values.len());
    values[values.len() - k..].iter().sum::<f64>() / k as f64
}

/// Compares two runs (or two seed families paired by seed directory) on
/// `columns`; all non-step columns when empty.
pub fn compare(dir_a: &Path, dir_b: &Path, columns: &[String]) -> Result<Comparison> {
    let a = load_runs(dir_a)?;
    let b = load_runs(dir_b)?;
    if a.keys().ne(b.keys()) {
        return Err(Error::Schema(format!(
            "seed sets differ: {:?} vs {:?}",
            a.keys().collect::<Vec<_>>(),
            b.keys().collect::<Vec<_>>()
        )));
    }
    let header = &a
        .values()
        .next()
        .expect("load_runs never returns an empty map")
        .columns;
    for t in a.values().chain(b.values()) {
        if &t.columns != header {
            return Err(Error::Schema(format!(
                "columns {:?} differ from {:?}",
                t.columns, header
            )));
        }
        if t.rows.is_empty() {
            return Err(Error::Schema("a run has no metric rows".into()));
        }
    }
    let wanted: Vec<String> = if columns.is_empty() {
        header.iter().filter(|c| *c != "step").cloned().collect()
    } else {
        columns.to_vec()
    };
    let n = a.len() as f64;
    let mut out = Vec::new();
    for col in &wanted {
        let mut cmp = ColumnComparison {
            column: col.clone(),
            final_a: 0.0,
            final_b: 0.0,
            tail_a: 0.0,
            tail_b: 0.0,
            a_lower: 0,
            a_higher: 0,
            ties: 0,
        };
        for (key, ta) in &a {
            let va = ta
                .column(col)
                .ok_or_else(|| Error::Schema(format!("no column {col}")))?;
            let vb = b[key]
                .column(col)
                .ok_or_else(|| Error::Schema(format!("no column {col}")))?;
            let (fa, fb) = (va[va.len() - 1], vb[vb.len() - 1]);
            cmp.final_a += fa / n;
            cmp.final_b += fb / n;
            cmp.tail_a += tail_mean(&va) / n;
            cmp.tail_b += tail_mean(&vb) / n;
            match fa.total_cmp(&fb) {
                std::cmp::Ordering::Less => cmp.a_lower += 1,
                std::cmp::Ordering::Greater => cmp.a_higher += 1,
                std::cmp::Ordering::Equal => cmp.ties += 1,
            }
        }
        out.push(cmp);
    }
    Ok(Comparison {
        seeds: a.len(),
        columns: out,
    })
}
