//! Recovering structured answers from model text, and scoring them.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::entity::{EntityClass, EntityMap, Intent, UnknownEntityClass};
use crate::text::{fold, tokens};

/// Published Macro-F1 figures, kept for side-by-side report comparison.
/// These come from fine-tuning runs this crate does not perform.
pub mod reference {
    /// Fine-tuned 3B model, entity extraction.
    pub const FINETUNED_ENTITY_MACRO_F1: f64 = 1.0;
    /// Base 3B model with a system prompt, entity extraction.
    pub const BASE_ENTITY_MACRO_F1: f64 = 0.9753;
    /// `bert-base-NER`, entity extraction (span-based, not directly comparable).
    pub const BERT_BASE_NER_MACRO_F1: f64 = 0.2191;
    /// `roberta-movie-w-title`, entity extraction (span-based, not directly comparable).
    pub const ROBERTA_MOVIE_MACRO_F1: f64 = 0.3253;
    /// Fine-tuned 3B model, intent routing.
    pub const FINETUNED_INTENT_MACRO_F1: f64 = 0.9935;
    /// Base 3B model, intent routing.
    pub const BASE_INTENT_MACRO_F1: f64 = 0.9805;
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("gold has {gold} entries but predictions have {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("empty input")]
    EmptyInput,
    #[error(transparent)]
    UnknownEntityClass(#[from] UnknownEntityClass),
    #[error("invalid entity payload: {0}")]
    BadEntityPayload(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum JsonRecoveryError {
    #[error("no JSON object found")]
    NoJsonFound,
    #[error("JSON could not be repaired (byte {0})")]
    UnrepairableJson(usize),
}

/// Which repairs [`extract_json_lenient`] may apply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LenientJsonOptions {
    pub allow_code_fences: bool,
    pub allow_single_quotes: bool,
    pub allow_trailing_commas: bool,
    pub allow_unquoted_keys: bool,
    /// alias → canonical key, applied to object keys at every depth.
    pub key_aliases: BTreeMap<String, String>,
}

impl LenientJsonOptions {
    pub fn strict() -> Self {
        Self {
            allow_code_fences: false,
            allow_single_quotes: false,
            allow_trailing_commas: false,
            allow_unquoted_keys: false,
            key_aliases: BTreeMap::new(),
        }
    }

    pub fn lenient() -> Self {
        Self {
            allow_code_fences: true,
            allow_single_quotes: true,
            allow_trailing_commas: true,
            allow_unquoted_keys: true,
            key_aliases: BTreeMap::new(),
        }
    }

    pub fn with_alias(mut self, alias: impl Into<String>, canonical: impl Into<String>) -> Self {
        self.key_aliases.insert(alias.into(), canonical.into());
        self
    }
}

impl Default for LenientJsonOptions {
    fn default() -> Self {
        Self::lenient()
    }
}

/// Bodies of ``` fenced blocks as (byte offset, text). An unterminated fence
/// runs to the end of the input.
fn fenced_blocks(text: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(open) = text[from..].find("```") {
        let after = from + open + 3;
        // Skip an info string such as `json` up to the end of the line.
        let body_start = match text[after..].find('\n') {
            Some(nl) if text[after..after + nl].chars().all(|c| c.is_alphanumeric() || c == '_' || c == '-' || c == ' ') => after + nl + 1,
            _ => after,
        };
        match text[body_start..].find("```") {
            Some(close) => {
                out.push((body_start, &text[body_start..body_start + close]));
                from = body_start + close + 3;
            }
            None => {
                out.push((body_start, &text[body_start..]));
                break;
            }
        }
    }
    out
}

/// End (exclusive) of the balanced group opening at `start`, if it closes.
fn balanced_end(s: &str, start: usize, single_quotes: bool) -> Option<usize> {
    let mut depth = 0usize;
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for (i, c) in s[start..].char_indices() {
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == q {
                quote = None;
            }
            continue;
        }
        match c {
            '"' => quote = Some('"'),
            '\'' if single_quotes => quote = Some('\''),
            '{' | '[' => depth += 1,
            '}' | ']' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(start + i + c.len_utf8());
                }
            }
            _ => {}
        }
    }
    None
}

/// Rewrites a candidate region into strict JSON. Returns the text and, per
/// output byte, the source byte it came from.
fn repair(region: &str, opts: &LenientJsonOptions) -> (String, Vec<usize>) {
    let chars: Vec<(usize, char)> = region.char_indices().collect();
    let mut out = String::with_capacity(region.len());
    let mut map = Vec::with_capacity(region.len());
    let push = |out: &mut String, map: &mut Vec<usize>, c: char, src: usize| {
        out.push(c);
        map.extend(std::iter::repeat_n(src, c.len_utf8()));
    };
    let next_significant = |from: usize| chars[from..].iter().map(|(_, c)| *c).find(|c| !c.is_whitespace());

    let mut i = 0;
    while i < chars.len() {
        let (at, c) = chars[i];
        match c {
            '"' => {
                push(&mut out, &mut map, c, at);
                i += 1;
                let mut escaped = false;
                while i < chars.len() {
                    let (at, c) = chars[i];
                    push(&mut out, &mut map, c, at);
                    i += 1;
                    if escaped {
                        escaped = false;
                    } else if c == '\\' {
                        escaped = true;
                    } else if c == '"' {
                        break;
                    }
                }
                continue;
            }
            '\'' if opts.allow_single_quotes => {
                push(&mut out, &mut map, '"', at);
                i += 1;
                while i < chars.len() {
                    let (at, c) = chars[i];
                    i += 1;
                    match c {
                        '\\' if i < chars.len() => {
                            let (at2, next) = chars[i];
                            i += 1;
                            if next == '\'' {
                                push(&mut out, &mut map, '\'', at2);
                            } else {
                                push(&mut out, &mut map, '\\', at);
                                push(&mut out, &mut map, next, at2);
                            }
                        }
                        '\'' => {
                            push(&mut out, &mut map, '"', at);
                            break;
                        }
                        '"' => {
                            push(&mut out, &mut map, '\\', at);
                            push(&mut out, &mut map, '"', at);
                        }
                        c => push(&mut out, &mut map, c, at),
                    }
                }
                continue;
            }
            ',' if opts.allow_trailing_commas && matches!(next_significant(i + 1), Some('}' | ']')) => {
                i += 1;
                continue;
            }
            c if opts.allow_unquoted_keys && (c.is_alphabetic() || c == '_' || c == '$') => {
                let start = i;
                while i < chars.len() && (chars[i].1.is_alphanumeric() || matches!(chars[i].1, '_' | '$' | '-')) {
                    i += 1;
                }
                let ident: String = chars[start..i].iter().map(|(_, c)| *c).collect();
                let is_key = next_significant(i) == Some(':') && !matches!(ident.as_str(), "true" | "false" | "null");
                if is_key {
                    push(&mut out, &mut map, '"', at);
                }
                for &(a, c) in &chars[start..i] {
                    push(&mut out, &mut map, c, a);
                }
                if is_key {
                    push(&mut out, &mut map, '"', chars[i - 1].0);
                }
                continue;
            }
            c => push(&mut out, &mut map, c, at),
        }
        i += 1;
    }
    (out, map)
}

fn apply_aliases(v: Value, aliases: &BTreeMap<String, String>) -> Value {
    match v {
        Value::Object(obj) => {
            let mut out = serde_json::Map::new();
            for (k, v) in obj {
                let key = aliases.get(&k).cloned().unwrap_or(k);
                let v = apply_aliases(v, aliases);
                out.entry(key).or_insert(v);
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(|x| apply_aliases(x, aliases)).collect()),
        other => other,
    }
}

/// Byte offset of serde_json's (line, column) in `s`.
fn offset_of(s: &str, line: usize, column: usize) -> usize {
    let line_start: usize = s.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(s.len().saturating_sub(1))
}

/// Finds the first `{...}` region in `text` that parses (after the enabled
/// repairs) and returns it as a strict JSON value with aliased keys renamed.
///
/// With code fences allowed, fenced blocks are searched before the raw text.
pub fn extract_json_lenient(text: &str, opts: &LenientJsonOptions) -> Result<Value, JsonRecoveryError> {
    let mut spaces: Vec<(usize, &str)> = Vec::new();
    if opts.allow_code_fences {
        spaces.extend(fenced_blocks(text));
    }
    spaces.push((0, text));

    let mut first_error: Option<usize> = None;
    for (base, space) in spaces {
        for (start, _) in space.char_indices().filter(|(_, c)| *c == '{') {
            let Some(end) = balanced_end(space, start, opts.allow_single_quotes) else {
                continue;
            };
            let region = &space[start..end];
            let (fixed, map) = repair(region, opts);
            match serde_json::from_str::<Value>(&fixed) {
                Ok(v) => return Ok(apply_aliases(v, &opts.key_aliases)),
                Err(e) => {
                    let at = map.get(offset_of(&fixed, e.line(), e.column())).copied().unwrap_or(0);
                    first_error.get_or_insert(base + start + at);
                }
            }
        }
    }
    Err(match first_error {
        Some(at) => JsonRecoveryError::UnrepairableJson(at),
        None => JsonRecoveryError::NoJsonFound,
    })
}

/// Reads `{"intent": "<label>"}` out of model text. Anything else is a parse failure.
pub fn parse_intent_output(raw: &str, opts: &LenientJsonOptions) -> Option<Intent> {
    let v = extract_json_lenient(raw, opts).ok()?;
    v.get("intent")?.as_str()?.trim().parse().ok()
}

/// Converts a JSON object of class → array (or single string) into an entity map.
/// Unknown classes are an error unless `drop_unknown` is set.
pub fn entity_map_from_json(v: &Value, drop_unknown: bool) -> Result<EntityMap, EvalError> {
    let obj = v
        .as_object()
        .ok_or_else(|| EvalError::BadEntityPayload("expected a JSON object".into()))?;
    let mut out = EntityMap::new();
    for (k, val) in obj {
        let class: EntityClass = match k.parse() {
            Ok(c) => c,
            Err(_) if drop_unknown => continue,
            Err(e) => return Err(e.into()),
        };
        let values: Vec<String> = match val {
            Value::String(s) => vec![s.clone()],
            Value::Array(items) => items
                .iter()
                .map(|x| {
                    x.as_str()
                        .map(str::to_owned)
                        .ok_or_else(|| EvalError::BadEntityPayload(format!("`{k}` holds a non-string")))
                })
                .collect::<Result<_, _>>()?,
            Value::Null => Vec::new(),
            _ => return Err(EvalError::BadEntityPayload(format!("`{k}` is not an array"))),
        };
        out.entry(class).or_default().extend(values);
    }
    Ok(out)
}

/// Entity payload out of model text; unknown classes are dropped.
pub fn parse_entity_output(raw: &str, opts: &LenientJsonOptions) -> Option<EntityMap> {
    let v = extract_json_lenient(raw, opts).ok()?;
    entity_map_from_json(&v, true).ok()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ClassCounts {
    /// 2tp / (2tp + fp + fn), 0 when the denominator is 0.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Additive tallies. Shards scored separately and merged give the same
/// report as scoring everything at once.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub per_class: BTreeMap<String, ClassCounts>,
    /// Classes that enter the macro average.
    pub included: BTreeSet<String>,
    pub n_examples: u64,
    pub n_parse_failures: u64,
}

impl ConfusionCounts {
    pub fn merge(&mut self, other: &ConfusionCounts) {
        for (class, c) in &other.per_class {
            let mine = self.per_class.entry(class.clone()).or_default();
            mine.tp += c.tp;
            mine.fp += c.fp;
            mine.fn_ += c.fn_;
        }
        self.included.extend(other.included.iter().cloned());
        self.n_examples += other.n_examples;
        self.n_parse_failures += other.n_parse_failures;
    }

    fn class(&mut self, name: &str) -> &mut ClassCounts {
        self.per_class.entry(name.to_owned()).or_default()
    }

    pub fn report(&self) -> EvalReport {
        let per_class: BTreeMap<String, ClassScore> = self
            .included
            .iter()
            .map(|name| {
                let c = self.per_class.get(name).copied().unwrap_or_default();
                (
                    name.clone(),
                    ClassScore {
                        tp: c.tp,
                        fp: c.fp,
                        fn_: c.fn_,
                        precision: c.precision(),
                        recall: c.recall(),
                        f1: c.f1(),
                    },
                )
            })
            .collect();
        let macro_f1 = if per_class.is_empty() {
            let any_fp = self.per_class.values().any(|c| c.fp > 0);
            if any_fp {
                0.0
            } else {
                1.0
            }
        } else {
            per_class.values().map(|s| s.f1).sum::<f64>() / per_class.len() as f64
        };
        EvalReport {
            per_class,
            macro_f1,
            n_examples: self.n_examples,
            n_parse_failures: self.n_parse_failures,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: BTreeMap<String, ClassScore>,
    pub macro_f1: f64,
    pub n_examples: u64,
    pub n_parse_failures: u64,
}

impl EvalReport {
    /// Plain-text table, optionally with a reference Macro-F1 line.
    pub fn table(&self, reference: Option<(&str, f64)>) -> String {
        let width = self.per_class.keys().map(String::len).max().unwrap_or(5).max(5);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:>6} {:>6} {:>6}  {:>9} {:>6} {:>6}", "class", "tp", "fp", "fn", "precision", "recall", "f1");
        for (name, c) in &self.per_class {
            let _ = writeln!(
                s,
                "{:<width$}  {:>6} {:>6} {:>6}  {:>9.4} {:>6.4} {:>6.4}",
                name, c.tp, c.fp, c.fn_, c.precision, c.recall, c.f1
            );
        }
        let _ = writeln!(s, "macro_f1 {:.4}  (n={}, parse_failures={})", self.macro_f1, self.n_examples, self.n_parse_failures);
        if let Some((label, value)) = reference {
            let _ = writeln!(s, "reference {label}: {value:.4}");
        }
        s
    }
}

fn check_lengths(gold: usize, pred: usize) -> Result<(), EvalError> {
    if gold != pred {
        return Err(EvalError::LengthMismatch { gold, pred });
    }
    if gold == 0 {
        return Err(EvalError::EmptyInput);
    }
    Ok(())
}

/// Tallies single-label predictions. `None` is a parse failure: a false
/// negative for the gold class and a false positive for nothing.
pub fn intent_counts<G: AsRef<str>, P: AsRef<str>>(gold: &[G], pred: &[Option<P>]) -> Result<ConfusionCounts, EvalError> {
    check_lengths(gold.len(), pred.len())?;
    let mut counts = ConfusionCounts::default();
    for (g, p) in gold.iter().zip(pred) {
        let g = g.as_ref();
        counts.n_examples += 1;
        counts.included.insert(g.to_owned());
        match p {
            None => {
                counts.n_parse_failures += 1;
                counts.class(g).fn_ += 1;
            }
            Some(p) => {
                let p = p.as_ref();
                counts.included.insert(p.to_owned());
                if p == g {
                    counts.class(g).tp += 1;
                } else {
                    counts.class(p).fp += 1;
                    counts.class(g).fn_ += 1;
                }
            }
        }
    }
    Ok(counts)
}

/// Macro-F1 over every class seen in gold or predictions.
pub fn macro_f1<G: AsRef<str>, P: AsRef<str>>(gold: &[G], pred: &[Option<P>]) -> Result<EvalReport, EvalError> {
    Ok(intent_counts(gold, pred)?.report())
}

fn entity_pairs(m: &EntityMap) -> HashSet<(EntityClass, String)> {
    m.iter()
        .flat_map(|(c, vs)| vs.iter().map(move |v| (*c, fold(v))))
        .filter(|(_, v)| !v.is_empty())
        .collect()
}

/// Set-based tallies over (class, normalized value) pairs per example.
pub fn entity_counts(gold: &[EntityMap], pred: &[Option<EntityMap>]) -> Result<ConfusionCounts, EvalError> {
    check_lengths(gold.len(), pred.len())?;
    let mut counts = ConfusionCounts::default();
    for (g, p) in gold.iter().zip(pred) {
        counts.n_examples += 1;
        let gold_pairs = entity_pairs(g);
        for (class, _) in &gold_pairs {
            counts.included.insert(class.as_str().to_owned());
        }
        let pred_pairs = match p {
            Some(p) => entity_pairs(p),
            None => {
                counts.n_parse_failures += 1;
                HashSet::new()
            }
        };
        for (class, v) in &gold_pairs {
            let c = counts.class(class.as_str());
            if pred_pairs.contains(&(*class, v.clone())) {
                c.tp += 1;
            } else {
                c.fn_ += 1;
            }
        }
        for pair in pred_pairs.difference(&gold_pairs) {
            counts.class(pair.0.as_str()).fp += 1;
        }
    }
    Ok(counts)
}

/// Macro-F1 over entity classes that occur in gold.
pub fn entity_macro_f1(gold: &[EntityMap], pred: &[Option<EntityMap>]) -> Result<EvalReport, EvalError> {
    Ok(entity_counts(gold, pred)?.report())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub n_prompts: usize,
    pub total_tokens: usize,
    /// Unique unigrams / total unigrams; absent when there are no tokens.
    pub distinct_1: Option<f64>,
    /// Unique bigrams / total bigrams; absent when no prompt has two tokens.
    pub distinct_2: Option<f64>,
    pub vocab_size: usize,
    /// Mean characters per token.
    pub mean_token_length: f64,
    /// Shannon entropy (bits) of the template id distribution.
    pub template_entropy: Option<f64>,
}

/// Lexical diversity of a prompt set. Bigrams do not cross prompt boundaries.
pub fn diversity<S: AsRef<str>>(prompts: &[S], template_ids: Option<&[u32]>) -> Result<DiversityReport, EvalError> {
    if prompts.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut unigrams: HashSet<String> = HashSet::new();
    let mut bigrams: HashSet<(String, String)> = HashSet::new();
    let (mut n_uni, mut n_bi, mut chars) = (0usize, 0usize, 0usize);
    for p in prompts {
        let toks = tokens(p.as_ref());
        n_uni += toks.len();
        chars += toks.iter().map(|t| t.chars().count()).sum::<usize>();
        for w in toks.windows(2) {
            n_bi += 1;
            bigrams.insert((w[0].clone(), w[1].clone()));
        }
        unigrams.extend(toks);
    }
    let template_entropy = match template_ids {
        None => None,
        Some(ids) => {
            check_lengths(prompts.len(), ids.len())?;
            let mut freq: HashMap<u32, usize> = HashMap::new();
            for id in ids {
                *freq.entry(*id).or_default() += 1;
            }
            let n = ids.len() as f64;
            let h: f64 = freq
                .values()
                .map(|&c| {
                    let p = c as f64 / n;
                    -p * p.log2()
                })
                .sum();
            Some(h.max(0.0))
        }
    };
    Ok(DiversityReport {
        n_prompts: prompts.len(),
        total_tokens: n_uni,
        distinct_1: (n_uni > 0).then(|| unigrams.len() as f64 / n_uni as f64),
        distinct_2: (n_bi > 0).then(|| bigrams.len() as f64 / n_bi as f64),
        vocab_size: unigrams.len(),
        mean_token_length: if n_uni == 0 { 0.0 } else { chars as f64 / n_uni as f64 },
        template_entropy,
    })
}

/// One line of a predictions file: model text or a pre-parsed payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub example_id: String,
    #[serde(default)]
    pub raw_output: Option<String>,
    #[serde(default)]
    pub pred: Option<Value>,
}

/// Lines with a `pred` payload of the wrong shape count as parse failures;
/// ids with no line at all do too.
pub fn align_intent_predictions(
    gold_ids: &[String],
    lines: &[PredictionLine],
    opts: &LenientJsonOptions,
) -> Vec<Option<Intent>> {
    let by_id: HashMap<&str, &PredictionLine> = lines.iter().map(|l| (l.example_id.as_str(), l)).collect();
    gold_ids
        .iter()
        .map(|id| {
            let line = by_id.get(id.as_str())?;
            match (&line.pred, &line.raw_output) {
                (Some(Value::String(s)), _) => s.parse().ok(),
                (Some(v @ Value::Object(_)), _) => v.get("intent")?.as_str()?.parse().ok(),
                (Some(_), _) => None,
                (None, Some(raw)) => parse_intent_output(raw, opts),
                (None, None) => None,
            }
        })
        .collect()
}

/// A pre-parsed `pred` with an unknown class is an error; raw text is parsed
/// leniently and unknown classes in it are dropped.
pub fn align_entity_predictions(
    gold_ids: &[String],
    lines: &[PredictionLine],
    opts: &LenientJsonOptions,
) -> Result<Vec<Option<EntityMap>>, EvalError> {
    let by_id: HashMap<&str, &PredictionLine> = lines.iter().map(|l| (l.example_id.as_str(), l)).collect();
    gold_ids
        .iter()
        .map(|id| {
            let Some(line) = by_id.get(id.as_str()) else {
                return Ok(None);
            };
            match (&line.pred, &line.raw_output) {
                (Some(v), _) => entity_map_from_json(v, false).map(Some),
                (None, Some(raw)) => Ok(parse_entity_output(raw, opts)),
                (None, None) => Ok(None),
            }
        })
        .collect()
}
