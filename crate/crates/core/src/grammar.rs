//! Slot grammar for synthetic prompt templates.
//!
//! ```text
//! [name]              slot; `[name, hint]` keeps the hint as an annotation
//! {a|b|c}             alternation (at least two non-empty branches)
//! (?text)             optional
//! \x                  literal x (escapes any meta character)
//! ```
//!
//! A `(` that is not followed by `?`, a `|` outside an alternation and a `)`
//! outside an optional are plain text. Groups nest at most [`MAX_DEPTH`] deep.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::entity::{EntityClass, Intent};
use crate::kg::SeedTuple;
use crate::kv::KvDocument;

pub const MAX_DEPTH: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GrammarError {
    #[error("unbalanced bracket at byte {0}")]
    UnbalancedBracket(usize),
    #[error("empty slot name at byte {0}")]
    EmptySlotName(usize),
    #[error("empty alternation branch at byte {0}")]
    EmptyAlternationBranch(usize),
    #[error("alternation at byte {0} needs at least two branches")]
    TooFewBranches(usize),
    #[error("empty optional group at byte {0}")]
    EmptyOptional(usize),
    #[error("groups nested deeper than {MAX_DEPTH} at byte {0}")]
    NestingTooDeep(usize),
    #[error("dangling escape at byte {0}")]
    DanglingEscape(usize),
    #[error("slot `{0}` is not registered")]
    UnregisteredSlot(String),
    #[error("slot `{0}` is graph-backed and has no finite domain")]
    UnboundedSlot(String),
    #[error("no value for slot `{0}`")]
    MissingSlotValue(String),
    #[error("expansion count overflows")]
    CardinalityOverflow,
    #[error("invalid slot domain for `{slot}`: {message}")]
    BadSlotDomain { slot: String, message: String },
    #[error("template pack line {line}: {message}")]
    Pack { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Slot {
    pub name: String,
    pub annotation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Node {
    Literal(String),
    Slot(Slot),
    Alternation(Vec<Vec<Node>>),
    Optional(Vec<Node>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TemplateAst {
    pub nodes: Vec<Node>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Context {
    Top,
    Alternation,
    Optional,
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    /// Parses until a terminator of `ctx` (left unconsumed) or end of input.
    fn sequence(&mut self, ctx: Context, depth: usize) -> Result<Vec<Node>, GrammarError> {
        let mut nodes = Vec::new();
        let mut text = String::new();
        let flush = |text: &mut String, nodes: &mut Vec<Node>| {
            if !text.is_empty() {
                nodes.push(Node::Literal(std::mem::take(text)));
            }
        };
        while let Some(c) = self.peek() {
            let at = self.pos;
            match c {
                '|' | '}' if ctx == Context::Alternation => break,
                ')' if ctx == Context::Optional => break,
                '\\' => {
                    self.bump();
                    let escaped = self.bump().ok_or(GrammarError::DanglingEscape(at))?;
                    text.push(escaped);
                }
                '[' => {
                    flush(&mut text, &mut nodes);
                    nodes.push(Node::Slot(self.slot()?));
                }
                ']' | '}' => return Err(GrammarError::UnbalancedBracket(at)),
                '{' => {
                    flush(&mut text, &mut nodes);
                    if depth + 1 > MAX_DEPTH {
                        return Err(GrammarError::NestingTooDeep(at));
                    }
                    nodes.push(self.alternation(depth + 1)?);
                }
                '(' if self.src[at + 1..].starts_with('?') => {
                    flush(&mut text, &mut nodes);
                    if depth + 1 > MAX_DEPTH {
                        return Err(GrammarError::NestingTooDeep(at));
                    }
                    self.pos += 2;
                    let inner = self.sequence(Context::Optional, depth + 1)?;
                    if self.bump() != Some(')') {
                        return Err(GrammarError::UnbalancedBracket(at));
                    }
                    if inner.is_empty() {
                        return Err(GrammarError::EmptyOptional(at));
                    }
                    nodes.push(Node::Optional(inner));
                }
                _ => {
                    self.bump();
                    text.push(c);
                }
            }
        }
        flush(&mut text, &mut nodes);
        Ok(nodes)
    }

    fn slot(&mut self) -> Result<Slot, GrammarError> {
        let open = self.pos;
        self.bump();
        let start = self.pos;
        loop {
            match self.bump() {
                Some(']') => break,
                Some('[') | None => return Err(GrammarError::UnbalancedBracket(open)),
                Some(_) => {}
            }
        }
        let body = &self.src[start..self.pos - 1];
        let (name, annotation) = match body.split_once(',') {
            Some((n, a)) => (n.trim(), Some(a.trim()).filter(|a| !a.is_empty())),
            None => (body.trim(), None),
        };
        if name.is_empty() {
            return Err(GrammarError::EmptySlotName(open));
        }
        Ok(Slot {
            name: name.to_owned(),
            annotation: annotation.map(str::to_owned),
        })
    }

    fn alternation(&mut self, depth: usize) -> Result<Node, GrammarError> {
        let open = self.pos;
        self.bump();
        let mut branches = Vec::new();
        loop {
            let branch_at = self.pos;
            let branch = self.sequence(Context::Alternation, depth)?;
            if branch.is_empty() {
                return Err(match self.peek() {
                    None => GrammarError::UnbalancedBracket(open),
                    Some(_) => GrammarError::EmptyAlternationBranch(branch_at),
                });
            }
            branches.push(branch);
            match self.bump() {
                Some('|') => continue,
                Some('}') => break,
                _ => return Err(GrammarError::UnbalancedBracket(open)),
            }
        }
        if branches.len() < 2 {
            return Err(GrammarError::TooFewBranches(open));
        }
        Ok(Node::Alternation(branches))
    }
}

pub fn parse_template(src: &str) -> Result<TemplateAst, GrammarError> {
    let mut p = Parser { src, pos: 0 };
    let nodes = p.sequence(Context::Top, 0)?;
    debug_assert_eq!(p.pos, src.len());
    Ok(TemplateAst { nodes })
}

impl FromStr for TemplateAst {
    type Err = GrammarError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_template(s)
    }
}

const META: &[char] = &['\\', '[', ']', '{', '}', '(', ')', '|'];

fn render_nodes(nodes: &[Node], out: &mut String) {
    for node in nodes {
        match node {
            Node::Literal(text) => {
                for c in text.chars() {
                    if META.contains(&c) {
                        out.push('\\');
                    }
                    out.push(c);
                }
            }
            Node::Slot(slot) => {
                out.push('[');
                out.push_str(&slot.name);
                if let Some(a) = &slot.annotation {
                    out.push_str(", ");
                    out.push_str(a);
                }
                out.push(']');
            }
            Node::Alternation(branches) => {
                out.push('{');
                for (i, b) in branches.iter().enumerate() {
                    if i > 0 {
                        out.push('|');
                    }
                    render_nodes(b, out);
                }
                out.push('}');
            }
            Node::Optional(inner) => {
                out.push_str("(?");
                render_nodes(inner, out);
                out.push(')');
            }
        }
    }
}

/// Canonical source form; `parse_template(ast.to_string()) == ast`.
impl fmt::Display for TemplateAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        render_nodes(&self.nodes, &mut out);
        f.write_str(&out)
    }
}

impl TemplateAst {
    /// Every slot occurrence, in source order (all branches included).
    pub fn slots(&self) -> Vec<&Slot> {
        fn walk<'a>(nodes: &'a [Node], out: &mut Vec<&'a Slot>) {
            for n in nodes {
                match n {
                    Node::Slot(s) => out.push(s),
                    Node::Alternation(bs) => bs.iter().for_each(|b| walk(b, out)),
                    Node::Optional(inner) => walk(inner, out),
                    Node::Literal(_) => {}
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.nodes, &mut out);
        out
    }

    /// Distinct slot names, sorted.
    pub fn slot_names(&self) -> BTreeSet<&str> {
        self.slots().into_iter().map(|s| s.name.as_str()).collect()
    }
}

/// Where a slot's values come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SlotDomain {
    /// Sampled from the knowledge graph, grounded on an anchor title.
    Graph(EntityClass),
    /// Explicit finite value list.
    Literal(Vec<String>),
}

impl FromStr for SlotDomain {
    type Err = String;

    /// `graph:<class>` or `literal:a|b|c`.
    fn from_str(s: &str) -> Result<Self, String> {
        if let Some(class) = s.strip_prefix("graph:") {
            return class.trim().parse().map(SlotDomain::Graph).map_err(|e| e.to_string());
        }
        if let Some(values) = s.strip_prefix("literal:") {
            let mut seen = BTreeSet::new();
            let vals: Vec<String> = values
                .split('|')
                .map(str::trim)
                .filter(|v| !v.is_empty() && seen.insert(*v))
                .map(str::to_owned)
                .collect();
            if vals.is_empty() {
                return Err("literal domain has no values".into());
            }
            return Ok(SlotDomain::Literal(vals));
        }
        Err(format!("expected `graph:<class>` or `literal:a|b`, got `{s}`"))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SlotRegistry {
    slots: BTreeMap<String, SlotDomain>,
}

impl SlotRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, domain: SlotDomain) -> &mut Self {
        self.slots.insert(name.into(), domain);
        self
    }

    pub fn get(&self, name: &str) -> Option<&SlotDomain> {
        self.slots.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &SlotDomain)> {
        self.slots.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Reads `slot.<name> = graph:<class>` / `slot.<name> = literal:a|b` keys.
    pub fn from_kv(doc: &KvDocument) -> Result<Self, GrammarError> {
        let mut reg = SlotRegistry::new();
        for (name, value) in doc.with_prefix("slot.") {
            let domain = value.parse().map_err(|message| GrammarError::BadSlotDomain {
                slot: name.to_owned(),
                message,
            })?;
            reg.insert(name.trim(), domain);
        }
        Ok(reg)
    }

    /// Slots the bundled template pack uses.
    pub fn builtin() -> Self {
        let mut reg = SlotRegistry::new();
        reg.insert("movie title", SlotDomain::Graph(EntityClass::Title))
            .insert("title", SlotDomain::Graph(EntityClass::Title))
            .insert("genre", SlotDomain::Graph(EntityClass::Genre))
            .insert("plot theme", SlotDomain::Graph(EntityClass::Theme))
            .insert("theme", SlotDomain::Graph(EntityClass::Theme))
            .insert("plot keyword", SlotDomain::Graph(EntityClass::Plot))
            .insert("actor", SlotDomain::Graph(EntityClass::Actor))
            .insert("director", SlotDomain::Graph(EntityClass::Director))
            .insert(
                "specific setting",
                SlotDomain::Literal(
                    [
                        "a post-apocalyptic world",
                        "a small coastal town",
                        "outer space",
                        "Victorian London",
                        "a haunted house",
                        "a high school",
                        "the Wild West",
                        "a snowy mountain village",
                    ]
                    .map(str::to_owned)
                    .to_vec(),
                ),
            )
            .insert(
                "mood",
                SlotDomain::Literal(
                    ["uplifting", "dark", "cozy", "tense", "bittersweet", "lighthearted"]
                        .map(str::to_owned)
                        .to_vec(),
                ),
            );
        reg
    }

    /// Fails on the first slot of `ast` that is not registered.
    pub fn check(&self, ast: &TemplateAst) -> Result<(), GrammarError> {
        match ast.slot_names().into_iter().find(|n| !self.slots.contains_key(*n)) {
            Some(n) => Err(GrammarError::UnregisteredSlot(n.to_owned())),
            None => Ok(()),
        }
    }
}

fn literal_domain<'r>(reg: &'r SlotRegistry, name: &str) -> Result<&'r [String], GrammarError> {
    match reg.get(name) {
        None => Err(GrammarError::UnregisteredSlot(name.to_owned())),
        Some(SlotDomain::Graph(_)) => Err(GrammarError::UnboundedSlot(name.to_owned())),
        Some(SlotDomain::Literal(values)) => Ok(values),
    }
}

/// Number of exhaustive expansions: sequences multiply, alternations sum their
/// branches, an optional adds one (the omitted case), a slot contributes its
/// domain size.
pub fn expansion_cardinality(ast: &TemplateAst, reg: &SlotRegistry) -> Result<u128, GrammarError> {
    fn seq(nodes: &[Node], reg: &SlotRegistry) -> Result<u128, GrammarError> {
        nodes.iter().try_fold(1u128, |acc, n| {
            let c = match n {
                Node::Literal(_) => 1,
                Node::Slot(s) => literal_domain(reg, &s.name)?.len() as u128,
                Node::Alternation(bs) => bs.iter().try_fold(0u128, |sum, b| {
                    sum.checked_add(seq(b, reg)?).ok_or(GrammarError::CardinalityOverflow)
                })?,
                Node::Optional(inner) => seq(inner, reg)?
                    .checked_add(1)
                    .ok_or(GrammarError::CardinalityOverflow)?,
            };
            acc.checked_mul(c).ok_or(GrammarError::CardinalityOverflow)
        })
    }
    seq(&ast.nodes, reg)
}

/// Every expansion of a template whose slots all have literal domains, one per
/// derivation (so ambiguous templates can yield repeated strings). Fails with
/// `CardinalityOverflow` above `limit` expansions.
pub fn expand_all(ast: &TemplateAst, reg: &SlotRegistry, limit: usize) -> Result<Vec<String>, GrammarError> {
    fn seq(nodes: &[Node], reg: &SlotRegistry, limit: usize) -> Result<Vec<String>, GrammarError> {
        let mut acc = vec![String::new()];
        for n in nodes {
            let options: Vec<String> = match n {
                Node::Literal(t) => vec![t.clone()],
                Node::Slot(s) => literal_domain(reg, &s.name)?.to_vec(),
                Node::Alternation(bs) => {
                    let mut all = Vec::new();
                    for b in bs {
                        all.extend(seq(b, reg, limit)?);
                    }
                    all
                }
                Node::Optional(inner) => {
                    let mut all = vec![String::new()];
                    all.extend(seq(inner, reg, limit)?);
                    all
                }
            };
            if acc.len().saturating_mul(options.len()) > limit {
                return Err(GrammarError::CardinalityOverflow);
            }
            acc = acc
                .iter()
                .flat_map(|prefix| options.iter().map(move |o| format!("{prefix}{o}")))
                .collect();
        }
        Ok(acc)
    }
    seq(&ast.nodes, reg, limit)
}

/// Substitutes slot values from `seed` and resolves alternations and optionals
/// with `rng`. All slots, including those in branches that end up unused, must
/// have a value.
pub fn fill<R: Rng + ?Sized>(ast: &TemplateAst, seed: &SeedTuple, rng: &mut R) -> Result<String, GrammarError> {
    fill_traced(ast, seed, rng).map(|(text, _)| text)
}

/// Like [`fill`], also returning the names of slots that appear in the output.
pub fn fill_traced<R: Rng + ?Sized>(
    ast: &TemplateAst,
    seed: &SeedTuple,
    rng: &mut R,
) -> Result<(String, BTreeSet<String>), GrammarError> {
    if let Some(missing) = ast.slot_names().into_iter().find(|n| !seed.assignments.contains_key(*n)) {
        return Err(GrammarError::MissingSlotValue(missing.to_owned()));
    }
    fn walk<R: Rng + ?Sized>(nodes: &[Node], seed: &SeedTuple, rng: &mut R, out: &mut String, used: &mut BTreeSet<String>) {
        for n in nodes {
            match n {
                Node::Literal(t) => out.push_str(t),
                Node::Slot(s) => {
                    out.push_str(&seed.assignments[&s.name]);
                    used.insert(s.name.clone());
                }
                Node::Alternation(bs) => {
                    let pick = rng.random_range(0..bs.len());
                    walk(&bs[pick], seed, rng, out, used);
                }
                Node::Optional(inner) => {
                    if rng.random_bool(0.5) {
                        walk(inner, seed, rng, out, used);
                    }
                }
            }
        }
    }
    let mut out = String::new();
    let mut used = BTreeSet::new();
    walk(&ast.nodes, seed, rng, &mut out, &mut used);
    Ok((out, used))
}

/// One template of a pack. `id` is the 1-based index among template lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackTemplate {
    pub id: u32,
    pub intent: Intent,
    pub ast: TemplateAst,
}

/// Reads a template pack: one `<intent>: <template>` per line, where intent is
/// `rec` or `non_rec`. `#` lines and blank lines are skipped and do not count
/// toward template ids.
pub fn parse_pack(src: &str) -> Result<Vec<PackTemplate>, GrammarError> {
    let mut out = Vec::new();
    for (i, raw) in src.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let (label, body) = line.split_once(':').ok_or_else(|| GrammarError::Pack {
            line: line_no,
            message: "expected `<rec|non_rec>: <template>`".into(),
        })?;
        let intent: Intent = label.trim().parse().map_err(|message| GrammarError::Pack { line: line_no, message })?;
        let body = body.strip_prefix(' ').unwrap_or(body);
        let ast = parse_template(body).map_err(|e| GrammarError::Pack {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(PackTemplate {
            id: out.len() as u32 + 1,
            intent,
            ast,
        });
    }
    Ok(out)
}

pub const BUILTIN_PACK: &str = include_str!("../data/default_templates.txt");

pub fn builtin_pack() -> Vec<PackTemplate> {
    parse_pack(BUILTIN_PACK).expect("bundled template pack parses")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lit(s: &str) -> Node {
        Node::Literal(s.to_owned())
    }

    fn slot(s: &str) -> Node {
        Node::Slot(Slot {
            name: s.to_owned(),
            annotation: None,
        })
    }

    fn seed(pairs: &[(&str, &str)]) -> SeedTuple {
        SeedTuple {
            assignments: pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            anchor_title: None,
        }
    }

    fn literal_reg(pairs: &[(&str, &[&str])]) -> SlotRegistry {
        let mut r = SlotRegistry::new();
        for (name, vals) in pairs {
            r.insert(*name, SlotDomain::Literal(vals.iter().map(|v| v.to_string()).collect()));
        }
        r
    }

    #[test]
    fn parses_first_example() {
        let ast = parse_template("I loved [movie title]. Any recommendations along those lines?").unwrap();
        assert_eq!(
            ast.nodes,
            vec![lit("I loved "), slot("movie title"), lit(". Any recommendations along those lines?")]
        );
    }

    #[test]
    fn keeps_slot_hint_as_annotation() {
        let ast = parse_template("Can you recommend a movie about [plot theme, e.g., time travel, friendship]?").unwrap();
        assert_eq!(
            ast.nodes[1],
            Node::Slot(Slot {
                name: "plot theme".into(),
                annotation: Some("e.g., time travel, friendship".into())
            })
        );
        assert_eq!(parse_template(&ast.to_string()).unwrap(), ast);
    }

    #[test]
    fn parses_alternation_then_slot() {
        let ast = parse_template("{Hi|Hey} [genre]").unwrap();
        assert_eq!(
            ast.nodes,
            vec![Node::Alternation(vec![vec![lit("Hi")], vec![lit("Hey")]]), lit(" "), slot("genre")]
        );
        assert_eq!(parse_template("Hello.").unwrap().nodes, vec![lit("Hello.")]);
        assert!(parse_template("Hello.").unwrap().slots().is_empty());
    }

    #[test]
    fn plain_parentheses_and_escapes() {
        let ast = parse_template(r"a (b) c\[d\] \{e\}|f").unwrap();
        assert_eq!(ast.nodes, vec![lit("a (b) c[d] {e}|f")]);
        assert_eq!(parse_template(&ast.to_string()).unwrap(), ast);
        let opt = parse_template("(?really )good").unwrap();
        assert_eq!(opt.nodes, vec![Node::Optional(vec![lit("really ")]), lit("good")]);
    }

    #[test]
    fn parse_errors_carry_positions() {
        assert_eq!(parse_template("a [b"), Err(GrammarError::UnbalancedBracket(2)));
        assert_eq!(parse_template("a ]"), Err(GrammarError::UnbalancedBracket(2)));
        assert_eq!(parse_template("{a|b"), Err(GrammarError::UnbalancedBracket(0)));
        assert_eq!(parse_template("x }"), Err(GrammarError::UnbalancedBracket(2)));
        assert_eq!(parse_template("(?abc"), Err(GrammarError::UnbalancedBracket(0)));
        assert_eq!(parse_template("[ , hint]"), Err(GrammarError::EmptySlotName(0)));
        assert_eq!(parse_template("{a||b}"), Err(GrammarError::EmptyAlternationBranch(3)));
        assert_eq!(parse_template("{|b}"), Err(GrammarError::EmptyAlternationBranch(1)));
        assert_eq!(parse_template("{a}"), Err(GrammarError::TooFewBranches(0)));
        assert_eq!(parse_template("x(?)"), Err(GrammarError::EmptyOptional(1)));
        assert_eq!(parse_template("ab\\"), Err(GrammarError::DanglingEscape(2)));
    }

    #[test]
    fn nesting_limit() {
        assert!(parse_template("{a|{b|{c|{d|e}}}}").is_ok());
        assert_eq!(parse_template("{a|{b|{c|{d|(?e)}}}}"), Err(GrammarError::NestingTooDeep(12)));
    }

    #[test]
    fn cardinality_examples() {
        let reg = literal_reg(&[("g", &["a", "b", "c"])]);
        assert_eq!(expansion_cardinality(&parse_template("Hello.").unwrap(), &reg), Ok(1));
        let hi = parse_template("{Hi|Hey} [g]").unwrap();
        assert_eq!(expansion_cardinality(&hi, &reg), Ok(6));
        let all = expand_all(&hi, &reg, 100).unwrap();
        assert_eq!(all.iter().collect::<BTreeSet<_>>().len(), 6);
        let opt = parse_template("(?really )good").unwrap();
        assert_eq!(expansion_cardinality(&opt, &reg), Ok(2));
        assert_eq!(expand_all(&opt, &reg, 10).unwrap(), vec!["good", "really good"]);
    }

    #[test]
    fn cardinality_errors() {
        let mut reg = SlotRegistry::new();
        reg.insert("t", SlotDomain::Graph(EntityClass::Title));
        let ast = parse_template("[t] and [u]").unwrap();
        assert_eq!(expansion_cardinality(&ast, &reg), Err(GrammarError::UnboundedSlot("t".into())));
        let ast = parse_template("[u]").unwrap();
        assert_eq!(expansion_cardinality(&ast, &reg), Err(GrammarError::UnregisteredSlot("u".into())));
    }

    #[test]
    fn fill_substitutes_slots() {
        let ast = parse_template("I loved [movie title]. Any recommendations along those lines?").unwrap();
        let out = fill(&ast, &seed(&[("movie title", "Forrest Gump")]), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out, "I loved Forrest Gump. Any recommendations along those lines?");
        let plain = parse_template("  Hello,  world.  ").unwrap();
        assert_eq!(fill(&plain, &seed(&[]), &mut ChaCha8Rng::seed_from_u64(0)).unwrap(), "  Hello,  world.  ");
        assert_eq!(
            fill(&ast, &seed(&[]), &mut ChaCha8Rng::seed_from_u64(0)),
            Err(GrammarError::MissingSlotValue("movie title".into()))
        );
    }

    #[test]
    fn fill_is_seed_stable() {
        let ast = parse_template("{Hi|Hey}").unwrap();
        let a = fill(&ast, &seed(&[]), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = fill(&ast, &seed(&[]), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        assert!(a == "Hi" || a == "Hey");
        let seen: BTreeSet<String> = (0..64)
            .map(|s| fill(&ast, &seed(&[]), &mut ChaCha8Rng::seed_from_u64(s)).unwrap())
            .collect();
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn registry_from_kv() {
        let doc = KvDocument::parse("slot.movie title = graph:title\nslot.mood = literal: dark | cozy |dark\n").unwrap();
        let reg = SlotRegistry::from_kv(&doc).unwrap();
        assert_eq!(reg.get("movie title"), Some(&SlotDomain::Graph(EntityClass::Title)));
        assert_eq!(reg.get("mood"), Some(&SlotDomain::Literal(vec!["dark".into(), "cozy".into()])));
        let bad = KvDocument::parse("slot.x = graph:studio\n").unwrap();
        assert!(matches!(SlotRegistry::from_kv(&bad), Err(GrammarError::BadSlotDomain { .. })));
    }

    #[test]
    fn pack_ids_skip_comments() {
        let pack = parse_pack("# header\n\nrec: I loved [movie title].\n# mid\nnon_rec: Who directed [movie title]?\n").unwrap();
        assert_eq!(pack.len(), 2);
        assert_eq!((pack[0].id, pack[0].intent), (1, Intent::Rec));
        assert_eq!((pack[1].id, pack[1].intent), (2, Intent::NonRec));
        assert!(matches!(parse_pack("maybe: hi"), Err(GrammarError::Pack { line: 1, .. })));
        assert!(matches!(parse_pack("rec: [oops"), Err(GrammarError::Pack { line: 1, .. })));
    }

    #[test]
    fn builtin_pack_is_registered() {
        let pack = builtin_pack();
        let reg = SlotRegistry::builtin();
        assert!(pack.len() >= 20);
        for t in &pack {
            reg.check(&t.ast).unwrap();
        }
        assert!(pack.iter().any(|t| t.intent == Intent::Rec));
        assert!(pack.iter().any(|t| t.intent == Intent::NonRec));
    }
}
