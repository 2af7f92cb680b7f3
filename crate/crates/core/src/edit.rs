//! Edit tracking for corrected reasoning traces.
//!
//! Texts are tokenized at word or sentence granularity and diffed with the
//! greedy Myers algorithm into merged opcode segments. The segments give a
//! weighted edit distance normalized by the source length and the
//! pre-edit / edit / post-edit split used to recompose the next query.
//! [`iterative_simplify`] runs the accept/reject loop that shortens a hint
//! while a solver still reaches the reference answer.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{Prompt, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    Word,
    Sentence,
}

/// Word mode splits on whitespace runs. Sentence mode ends a sentence at
/// `.`, `!` or `?` followed by whitespace.
pub fn tokenize(text: &str, mode: Granularity) -> Vec<String> {
    match mode {
        Granularity::Word => text.split_whitespace().map(str::to_owned).collect(),
        Granularity::Sentence => {
            let mut out = Vec::new();
            let mut start = 0;
            let mut chars = text.char_indices().peekable();
            while let Some((i, c)) = chars.next() {
                let at_break = matches!(c, '.' | '!' | '?')
                    && chars.peek().is_some_and(|(_, next)| next.is_whitespace());
                if at_break {
                    let end = i + c.len_utf8();
                    push_trimmed(&mut out, &text[start..end]);
                    start = end;
                }
            }
            push_trimmed(&mut out, &text[start..]);
            out
        }
    }
}

fn push_trimmed(out: &mut Vec<String>, piece: &str) {
    let piece = piece.trim();
    if !piece.is_empty() {
        out.push(piece.to_owned());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditOp {
    Equal,
    Delete,
    Insert,
    Replace,
}

/// `start..end` is a range of the source; `text` is what replaces it
/// (empty for equal and delete segments).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditSegment<T> {
    pub start: usize,
    pub end: usize,
    pub op: EditOp,
    pub text: Vec<T>,
}

impl<T> EditSegment<T> {
    pub fn span(&self) -> usize {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditScript<T> {
    pub segments: Vec<EditSegment<T>>,
    pub source_len: usize,
}

impl<T> EditScript<T> {
    pub fn changes(&self) -> impl Iterator<Item = &EditSegment<T>> {
        self.segments.iter().filter(|s| s.op != EditOp::Equal)
    }

    pub fn has_changes(&self) -> bool {
        self.changes().next().is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Move {
    Keep,
    Delete,
    Insert,
}

/// Shortest edit path between `a` and `b` as a sequence of moves.
fn myers_moves<T: Eq>(a: &[T], b: &[T]) -> Vec<Move> {
    let n = a.len() as isize;
    let m = b.len() as isize;
    let max = (n + m) as usize;
    let offset = max as isize + 1;
    let mut v = vec![0isize; 2 * max + 3];
    let mut trace: Vec<Vec<isize>> = Vec::new();
    'search: for d in 0..=max as isize {
        trace.push(v.clone());
        let mut k = -d;
        while k <= d {
            let idx = (k + offset) as usize;
            let mut x = if k == -d || (k != d && v[idx - 1] < v[idx + 1]) {
                v[idx + 1]
            } else {
                v[idx - 1] + 1
            };
            let mut y = x - k;
            while x < n && y < m && a[x as usize] == b[y as usize] {
                x += 1;
                y += 1;
            }
            v[idx] = x;
            if x >= n && y >= m {
                break 'search;
            }
            k += 2;
        }
    }

    let mut moves = Vec::with_capacity(max);
    let (mut x, mut y) = (n, m);
    for (d, v) in trace.iter().enumerate().rev() {
        let d = d as isize;
        let k = x - y;
        let idx = (k + offset) as usize;
        let prev_k = if k == -d || (k != d && v[idx - 1] < v[idx + 1]) {
            k + 1
        } else {
            k - 1
        };
        let prev_x = v[(prev_k + offset) as usize];
        let prev_y = prev_x - prev_k;
        while x > prev_x && y > prev_y {
            moves.push(Move::Keep);
            x -= 1;
            y -= 1;
        }
        if d > 0 {
            moves.push(if x == prev_x {
                Move::Insert
            } else {
                Move::Delete
            });
        }
        x = prev_x;
        y = prev_y;
    }
    moves.reverse();
    moves
}

/// Myers diff of `source` against `target`. Runs of changes between two
/// equal stretches collapse into one delete, insert or replace segment.
pub fn diff<T: Eq + Clone>(source: &[T], target: &[T]) -> EditScript<T> {
    let moves = myers_moves(source, target);
    let mut segments: Vec<EditSegment<T>> = Vec::new();
    let (mut x, mut y) = (0usize, 0usize);
    let mut i = 0;
    while i < moves.len() {
        if moves[i] == Move::Keep {
            let start = x;
            while i < moves.len() && moves[i] == Move::Keep {
                x += 1;
                y += 1;
                i += 1;
            }
            segments.push(EditSegment {
                start,
                end: x,
                op: EditOp::Equal,
                text: Vec::new(),
            });
            continue;
        }
        let start = x;
        let mut text = Vec::new();
        while i < moves.len() && moves[i] != Move::Keep {
            match moves[i] {
                Move::Delete => x += 1,
                Move::Insert => {
                    text.push(target[y].clone());
                    y += 1;
                }
                Move::Keep => unreachable!(),
            }
            i += 1;
        }
        let op = match (x > start, !text.is_empty()) {
            (true, true) => EditOp::Replace,
            (true, false) => EditOp::Delete,
            _ => EditOp::Insert,
        };
        segments.push(EditSegment {
            start,
            end: x,
            op,
            text,
        });
    }
    EditScript {
        segments,
        source_len: source.len(),
    }
}

/// Rebuilds the target from the source and a script.
pub fn apply<T: Clone>(script: &EditScript<T>, source: &[T]) -> Result<Vec<T>> {
    if source.len() != script.source_len {
        return Err(Error::Misaligned(format!(
            "script is for a source of {} tokens, got {}",
            script.source_len,
            source.len()
        )));
    }
    let mut out = Vec::with_capacity(source.len());
    let mut cursor = 0;
    for seg in &script.segments {
        if seg.start != cursor || seg.end < seg.start || seg.end > source.len() {
            return Err(Error::Misaligned(format!(
                "segment {}..{} does not continue at {cursor}",
                seg.start, seg.end
            )));
        }
        match seg.op {
            EditOp::Equal => out.extend_from_slice(&source[seg.start..seg.end]),
            EditOp::Delete => {}
            EditOp::Insert | EditOp::Replace => out.extend_from_slice(&seg.text),
        }
        cursor = seg.end;
    }
    if cursor != source.len() {
        return Err(Error::Misaligned(format!(
            "script stops at {cursor} of {}",
            source.len()
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpWeights {
    pub insert: f64,
    pub delete: f64,
    pub replace: f64,
}

impl Default for OpWeights {
    fn default() -> Self {
        Self {
            insert: 1.0,
            delete: 1.0,
            replace: 2.0,
        }
    }
}

/// Weighted cost of one segment. Deletes and replaces are measured on the
/// source span, inserts by the number of inserted tokens.
pub fn segment_cost<T>(seg: &EditSegment<T>, w: &OpWeights) -> f64 {
    match seg.op {
        EditOp::Equal => 0.0,
        EditOp::Delete => seg.span() as f64 * w.delete,
        EditOp::Replace => seg.span() as f64 * w.replace,
        EditOp::Insert => seg.text.len() as f64 * w.insert,
    }
}

/// Unnormalized weighted cost of every change in the script.
pub fn script_cost<T>(script: &EditScript<T>, w: &OpWeights) -> f64 {
    script.changes().map(|s| segment_cost(s, w)).sum()
}

/// Weighted cost divided by the source length.
pub fn edit_distance<T>(script: &EditScript<T>, w: &OpWeights) -> Result<f64> {
    if [w.insert, w.delete, w.replace]
        .iter()
        .any(|x| !(x.is_finite() && *x >= 0.0))
    {
        return Err(Error::Config(format!(
            "edit weights must be nonnegative: {w:?}"
        )));
    }
    if !script.has_changes() {
        return Ok(0.0);
    }
    if script.source_len == 0 {
        return Err(Error::EmptySource);
    }
    Ok(script_cost(script, w) / script.source_len as f64)
}

/// Source ranges before, across and after the edited region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intervention {
    pub pre: Range<usize>,
    pub edit: Range<usize>,
    pub post: Range<usize>,
}

pub fn locate_intervention<T>(script: &EditScript<T>) -> Result<Intervention> {
    let first = script.changes().next().ok_or(Error::NoEdits)?;
    let last = script.changes().last().ok_or(Error::NoEdits)?;
    Ok(Intervention {
        pre: 0..first.start,
        edit: first.start..last.end,
        post: last.end..script.source_len,
    })
}

/// Original context, then `separator`, then the edited reasoning; any
/// earlier history is dropped.
pub fn compose_next_query(original: &Prompt, edited: &[Token], separator: Token) -> Prompt {
    let mut next = original.clone();
    next.context.push(separator);
    next.context.extend_from_slice(edited);
    next
}

/// Bijection between token ids and whitespace-free words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Lexicon {
    words: Vec<String>,
    ids: BTreeMap<String, Token>,
}

impl TryFrom<Vec<String>> for Lexicon {
    type Error = Error;

    fn try_from(words: Vec<String>) -> Result<Self> {
        Self::new(words)
    }
}

impl From<Lexicon> for Vec<String> {
    fn from(lex: Lexicon) -> Self {
        lex.words
    }
}

impl Lexicon {
    pub fn new(words: Vec<String>) -> Result<Self> {
        let mut ids = BTreeMap::new();
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::Vocabulary(format!(
                    "word {w:?} is empty or contains whitespace"
                )));
            }
            if ids.insert(w.clone(), i as Token).is_some() {
                return Err(Error::Vocabulary(format!("word {w:?} appears twice")));
            }
        }
        Ok(Self { words, ids })
    }

    /// Grows the lexicon with every unseen word of `text`.
    pub fn extend_from(&mut self, text: &str) -> Vec<Token> {
        tokenize(text, Granularity::Word)
            .into_iter()
            .map(|w| match self.ids.get(&w) {
                Some(&id) => id,
                None => {
                    let id = self.words.len() as Token;
                    self.ids.insert(w.clone(), id);
                    self.words.push(w);
                    id
                }
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn render(&self, tokens: &[Token]) -> Result<String> {
        let words = tokens
            .iter()
            .map(|&t| {
                self.words
                    .get(t as usize)
                    .map(String::as_str)
                    .ok_or(Error::TokenOutOfRange {
                        token: t,
                        size: self.words.len(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(words.join(" "))
    }

    pub fn parse(&self, text: &str) -> Result<Vec<Token>> {
        tokenize(text, Granularity::Word)
            .iter()
            .map(|w| {
                self.ids
                    .get(w)
                    .copied()
                    .ok_or_else(|| Error::Vocabulary(format!("unknown word {w:?}")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Solution<T> {
    pub reasoning: Vec<T>,
    pub answer: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimplifyConfig {
    pub max_consecutive_failures: usize,
    /// Total loop iterations allowed, accepted or not.
    pub max_iterations: usize,
}

impl Default for SimplifyConfig {
    fn default() -> Self {
        Self {
            max_consecutive_failures: 4,
            max_iterations: 64,
        }
    }
}

/// Callables driving [`iterative_simplify`]. Errors from the responder or
/// solver count as rejected candidates.
pub trait SimplifyHooks<T> {
    fn respond(&mut self, hint: &[T]) -> std::result::Result<Vec<T>, String>;

    fn solve(&mut self, hint: &[T]) -> std::result::Result<Solution<T>, String>;

    fn validate(&mut self, hint: &[T], solved: &Solution<T>, reference: &Solution<T>) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Failures,
    IterationCap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimplifyOutcome<T> {
    pub hint: Vec<T>,
    pub accepted: usize,
    pub responder_calls: usize,
    pub stopped: StopReason,
    /// Messages from failed responder or solver calls, in order.
    pub errors: Vec<String>,
    pub trace: Vec<SimplifyStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimplifyStep {
    pub accepted: bool,
    /// Length of the current hint after this iteration.
    pub hint_len: usize,
    pub consecutive_failures: usize,
}

/// Repeatedly asks for a simpler hint and keeps it when the solver's
/// answer from that hint validates against the reference. Stops after
/// `max_consecutive_failures` rejections in a row or `max_iterations`
/// iterations.
pub fn iterative_simplify<T: Clone>(
    initial: &[T],
    reference: &Solution<T>,
    cfg: &SimplifyConfig,
    hooks: &mut dyn SimplifyHooks<T>,
) -> Result<SimplifyOutcome<T>> {
    if cfg.max_consecutive_failures == 0 || cfg.max_iterations == 0 {
        return Err(Error::Config(format!(
            "simplify limits must be positive: {cfg:?}"
        )));
    }
    let mut current = initial.to_vec();
    let mut failures = 0;
    let mut accepted = 0;
    let mut calls = 0;
    let mut errors = Vec::new();
    let mut trace = Vec::new();
    while failures < cfg.max_consecutive_failures {
        if calls == cfg.max_iterations {
            return Ok(SimplifyOutcome {
                hint: current,
                accepted,
                responder_calls: calls,
                stopped: StopReason::IterationCap,
                errors,
                trace,
            });
        }
        calls += 1;
        let ok = match hooks.respond(&current) {
            Ok(candidate) => match hooks.solve(&candidate) {
                Ok(solved) => hooks
                    .validate(&candidate, &solved, reference)
                    .then_some(candidate),
                Err(e) => {
                    errors.push(e);
                    None
                }
            },
            Err(e) => {
                errors.push(e);
                None
            }
        };
        let took = ok.is_some();
        match ok {
            Some(candidate) => {
                current = candidate;
                accepted += 1;
                failures = 0;
            }
            None => failures += 1,
        }
        trace.push(SimplifyStep {
            accepted: took,
            hint_len: current.len(),
            consecutive_failures: failures,
        });
    }
    Ok(SimplifyOutcome {
        hint: current,
        accepted,
        responder_calls: calls,
        stopped: StopReason::Failures,
        errors,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<String> {
        tokenize(s, Granularity::Word)
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(words("a b  c"), vec!["a", "b", "c"]);
        assert_eq!(
            tokenize("Hi. Go!", Granularity::Sentence),
            vec!["Hi.", "Go!"]
        );
        assert_eq!(
            tokenize("x=1.5 is fine? Yes.\nDone", Granularity::Sentence),
            vec!["x=1.5 is fine?", "Yes.", "Done"]
        );
        assert!(tokenize("", Granularity::Word).is_empty());
        assert!(tokenize("  ", Granularity::Sentence).is_empty());
    }

    #[test]
    fn diff_examples() {
        let s = diff(&words("the cat sat"), &words("the dog sat"));
        let ops: Vec<_> = s.segments.iter().map(|g| (g.start, g.end, g.op)).collect();
        assert_eq!(
            ops,
            vec![
                (0, 1, EditOp::Equal),
                (1, 2, EditOp::Replace),
                (2, 3, EditOp::Equal)
            ]
        );
        assert_eq!(s.segments[1].text, vec!["dog"]);
        let d = edit_distance(&s, &OpWeights::default()).unwrap();
        assert!((d - 2.0 / 3.0).abs() < 1e-15);

        let same = diff(&[1, 2, 3], &[1, 2, 3]);
        assert_eq!(same.segments.len(), 1);
        assert_eq!(same.segments[0].op, EditOp::Equal);
        assert_eq!(edit_distance(&same, &OpWeights::default()).unwrap(), 0.0);

        let from_empty = diff(&[], &[4, 5]);
        assert_eq!(from_empty.segments.len(), 1);
        assert_eq!(from_empty.segments[0].op, EditOp::Insert);
        assert_eq!(from_empty.segments[0].text, vec![4, 5]);
        assert!(matches!(
            edit_distance(&from_empty, &OpWeights::default()),
            Err(Error::EmptySource)
        ));
        assert_eq!(
            edit_distance(&diff::<u32>(&[], &[]), &OpWeights::default()).unwrap(),
            0.0
        );

        let all_gone = diff(&[1, 2, 3, 4], &[]);
        assert_eq!(
            edit_distance(&all_gone, &OpWeights::default()).unwrap(),
            1.0
        );
    }

    #[test]
    fn apply_rejects_mismatched_source() {
        let s = diff(&[1, 2], &[2]);
        assert!(apply(&s, &[1, 2, 3]).is_err());
        assert_eq!(apply(&s, &[1, 2]).unwrap(), vec![2]);
    }

    #[test]
    fn intervention_examples() {
        let s = diff(&[1, 2, 3], &[1, 9, 3]);
        let i = locate_intervention(&s).unwrap();
        assert_eq!((i.pre, i.edit, i.post), (0..1, 1..2, 2..3));
        let s = diff(&[1, 2, 3], &[9, 2, 3]);
        assert_eq!(locate_intervention(&s).unwrap().pre, 0..0);
        let s = diff(&[1, 2, 3, 4, 5], &[1, 8, 3, 9, 5]);
        let i = locate_intervention(&s).unwrap();
        assert_eq!((i.pre, i.edit, i.post), (0..1, 1..4, 4..5));
        assert!(matches!(
            locate_intervention(&diff(&[1], &[1])),
            Err(Error::NoEdits)
        ));
    }

    #[test]
    fn next_query_composition() {
        let q = Prompt::new("q", vec![7]).unwrap();
        assert_eq!(compose_next_query(&q, &[], 0).context, vec![7, 0]);
        assert_eq!(compose_next_query(&q, &[3, 4], 0).context, vec![7, 0, 3, 4]);
    }

    #[test]
    fn lexicon_round_trip() {
        let mut lex = Lexicon::new(vec!["<sep>".into()]).unwrap();
        let q = lex.extend_from("what is two plus two");
        let hint = lex.extend_from("two plus two is four");
        let prompt = Prompt::new("q", q).unwrap();
        let next = compose_next_query(&prompt, &hint, 0);
        let text = lex.render(&next.context).unwrap();
        assert_eq!(text, "what is two plus two <sep> two plus two is four");
        assert_eq!(lex.parse(&text).unwrap(), next.context);
        assert!(Lexicon::new(vec!["a b".into()]).is_err());
        assert!(Lexicon::new(vec!["a".into(), "a".into()]).is_err());
    }

    struct Fakes<R, V> {
        respond: R,
        validate: V,
        calls: usize,
    }

    impl<R, V> SimplifyHooks<u32> for Fakes<R, V>
    where
        R: FnMut(&[u32]) -> std::result::Result<Vec<u32>, String>,
        V: FnMut(&[u32]) -> bool,
    {
        fn respond(&mut self, hint: &[u32]) -> std::result::Result<Vec<u32>, String> {
            self.calls += 1;
            (self.respond)(hint)
        }

        fn solve(&mut self, hint: &[u32]) -> std::result::Result<Solution<u32>, String> {
            Ok(Solution {
                reasoning: hint.to_vec(),
                answer: vec![1],
            })
        }

        fn validate(
            &mut self,
            hint: &[u32],
            _solved: &Solution<u32>,
            _reference: &Solution<u32>,
        ) -> bool {
            (self.validate)(hint)
        }
    }

    fn reference() -> Solution<u32> {
        Solution {
            reasoning: vec![],
            answer: vec![1],
        }
    }

    #[test]
    fn simplify_never_accepts() {
        let mut f = Fakes {
            respond: |h: &[u32]| Ok(h[1..].to_vec()),
            validate: |_: &[u32]| false,
            calls: 0,
        };
        let out = iterative_simplify(&[1, 2, 3], &reference(), &SimplifyConfig::default(), &mut f)
            .unwrap();
        assert_eq!(out.hint, vec![1, 2, 3]);
        assert_eq!((out.accepted, out.responder_calls, f.calls), (0, 4, 4));
        assert_eq!(out.stopped, StopReason::Failures);
    }

    #[test]
    fn simplify_drops_tokens_until_too_short() {
        let mut f = Fakes {
            respond: |h: &[u32]| Ok(h[..h.len() - 1].to_vec()),
            validate: |h: &[u32]| h.len() >= 2,
            calls: 0,
        };
        let out = iterative_simplify(
            &[1, 2, 3, 4, 5],
            &reference(),
            &SimplifyConfig::default(),
            &mut f,
        )
        .unwrap();
        assert_eq!(out.hint, vec![1, 2]);
        assert_eq!((out.accepted, out.responder_calls), (3, 7));
    }

    #[test]
    fn simplify_stationary_responder_hits_cap() {
        let mut f = Fakes {
            respond: |h: &[u32]| Ok(h.to_vec()),
            validate: |_: &[u32]| true,
            calls: 0,
        };
        let out =
            iterative_simplify(&[1, 2], &reference(), &SimplifyConfig::default(), &mut f).unwrap();
        assert_eq!(out.stopped, StopReason::IterationCap);
        assert_eq!((out.accepted, out.responder_calls), (64, 64));
    }

    #[test]
    fn simplify_counts_responder_errors_as_failures() {
        let mut f = Fakes {
            respond: |_: &[u32]| Err("unavailable".to_string()),
            validate: |_: &[u32]| true,
            calls: 0,
        };
        let out =
            iterative_simplify(&[1], &reference(), &SimplifyConfig::default(), &mut f).unwrap();
        assert_eq!(out.hint, vec![1]);
        assert_eq!(out.errors.len(), 4);
    }
}
