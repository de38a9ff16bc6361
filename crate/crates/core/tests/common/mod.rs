//! Fixtures and independent reference implementations shared by the
//! integration tests. Nothing here calls the code it is used to check.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::path::{Path, PathBuf};

use cinesynth::catalog::{parse_catalog, sources_from_kv, MediaRecord};
use cinesynth::grammar::{Node, Slot, SlotDomain, SlotRegistry, TemplateAst};
use cinesynth::kg::{build_graph, KnowledgeGraph, StopWordExtractor};
use cinesynth::kv::KvDocument;
use cinesynth::EntityMap;
use num_rational::Ratio;
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// The ten records of `movies.csv`, read through the `main` source descriptor.
pub fn fixture_records() -> Vec<MediaRecord> {
    let doc = KvDocument::load(&fixture("sources.kv")).unwrap();
    let sources = sources_from_kv(&doc, &fixture("")).unwrap();
    let main = sources.iter().find(|s| s.descriptor.source_id() == "main").unwrap();
    let (records, issues) = parse_catalog(File::open(&main.path).unwrap(), &main.descriptor).unwrap();
    assert!(issues.is_empty(), "{issues:?}");
    assert_eq!(records.len(), 10);
    records
}

const ADJECTIVES: &[&str] = &[
    "silent", "broken", "golden", "hidden", "last", "crimson", "distant", "frozen", "wild", "hollow", "bright",
    "lost", "iron", "velvet", "burning", "quiet", "savage", "paper", "glass", "midnight", "northern", "secret",
    "electric", "forgotten", "endless", "lonely", "restless", "scarlet", "shattered", "wandering", "ancient",
    "bitter", "brave", "cold", "dark", "faded", "fallen", "gentle", "heavy", "lucky", "narrow", "pale", "rapid",
    "rusty", "sacred", "shallow", "sleeping", "stolen", "twisted", "wicked",
];
const NOUNS: &[&str] = &[
    "river", "harbor", "empire", "garden", "signal", "kingdom", "station", "forest", "mirror", "horizon",
    "letter", "valley", "tower", "island", "shadow", "engine", "orchard", "frontier", "lantern", "canyon",
    "citadel", "compass", "desert", "echo", "feather", "fortress", "glacier", "highway", "journey", "labyrinth",
    "meadow", "monsoon", "nebula", "ocean", "passage", "prairie", "quarry", "reef", "saloon", "summit", "tide",
    "tundra", "vault", "voyage", "whisper", "winter", "workshop", "crown", "bridge", "circus",
];
const GENRES: &[&str] = &[
    "drama", "comedy", "thriller", "horror", "romance", "fantasy", "science fiction", "western", "animation",
    "documentary", "crime", "mystery", "adventure", "war",
];
const THEMES: &[&str] = &[
    "loyalty", "survival", "betrayal", "redemption", "friendship", "grief", "ambition", "identity", "revenge",
    "family", "freedom", "memory", "sacrifice", "justice", "love", "isolation", "greed", "hope",
];
const FIRST: &[&str] = &[
    "Ada", "Ben", "Cora", "Dev", "Elena", "Farid", "Gwen", "Hiro", "Iris", "Jonah", "Kira", "Luis", "Mara",
    "Nico", "Olga", "Pavel", "Quinn", "Rosa", "Sami", "Tess",
];
const LAST: &[&str] = &[
    "Abbott", "Brandt", "Castell", "Dorsey", "Ekwueme", "Falk", "Grieve", "Holm", "Ibarra", "Jansen", "Kowal",
    "Lund", "Moreau", "Nakamura", "Osei", "Petrov",
];
const PLOT_WORDS: &[&str] = &[
    "smuggler", "detective", "orphan", "pilot", "lighthouse", "heist", "dragon", "robot", "carnival", "storm",
    "treasure", "village", "prison", "election", "submarine", "wolves", "vineyard", "circus", "comet",
    "monastery", "railway", "volcano", "archive", "tournament",
];

/// `n` (≤ 2500) distinct records with unique titles, built from word lists.
pub fn synthetic_records(n: usize, rng: &mut impl Rng) -> Vec<MediaRecord> {
    assert!(n <= ADJECTIVES.len() * NOUNS.len());
    let person = |rng: &mut dyn rand::RngCore| {
        format!(
            "{} {}",
            FIRST[rng.random_range(0..FIRST.len())],
            LAST[rng.random_range(0..LAST.len())]
        )
    };
    (0..n)
        .map(|i| {
            let adj = ADJECTIVES[i % ADJECTIVES.len()];
            let noun = NOUNS[(i / ADJECTIVES.len()) % NOUNS.len()];
            let title = format!("The {}{} {}{}", adj[..1].to_uppercase(), &adj[1..], noun[..1].to_uppercase(), &noun[1..]);
            let mut r = MediaRecord::new(format!("syn:{}", i + 1), title, "syn");
            r.year = Some(1950 + rng.random_range(0..70));
            for _ in 0..rng.random_range(1..=2) {
                r.genres.insert(GENRES[rng.random_range(0..GENRES.len())].to_owned());
            }
            for _ in 0..rng.random_range(1..=3) {
                r.themes.insert(THEMES[rng.random_range(0..THEMES.len())].to_owned());
            }
            for _ in 0..rng.random_range(1..=3) {
                let p = person(rng);
                if !r.cast.contains(&p) {
                    r.cast.push(p);
                }
            }
            r.directors.push(person(rng));
            let words: Vec<&str> = (0..3).map(|_| PLOT_WORDS[rng.random_range(0..PLOT_WORDS.len())]).collect();
            r.plot = Some(format!("A {} meets a {} near the {}.", words[0], words[1], words[2]));
            r
        })
        .collect()
}

pub fn graph_of(records: &[MediaRecord]) -> KnowledgeGraph {
    build_graph(records, &StopWordExtractor::default())
}

// ---------------------------------------------------------------- metrics

pub type Counts = BTreeMap<String, (u64, u64, u64)>;

fn macro_of(counts: &Counts, classes: &BTreeSet<String>) -> Ratio<i64> {
    // Nothing to find: perfect unless something was predicted anyway.
    if classes.is_empty() {
        let any_fp = counts.values().any(|c| c.1 > 0);
        return Ratio::from_integer(if any_fp { 0 } else { 1 });
    }
    let mut sum = Ratio::from_integer(0);
    for c in classes {
        let (tp, fp, fn_) = counts.get(c).copied().unwrap_or((0, 0, 0));
        let den = 2 * tp + fp + fn_;
        if den > 0 {
            sum += Ratio::new(2 * tp as i64, den as i64);
        }
    }
    sum / Ratio::from_integer(classes.len() as i64)
}

/// Single-label scorer written from the definitions, one class at a time.
pub fn oracle_intent(gold: &[String], pred: &[Option<String>]) -> (Counts, Ratio<i64>) {
    let mut classes: BTreeSet<String> = gold.iter().cloned().collect();
    classes.extend(pred.iter().flatten().cloned());
    let mut counts = Counts::new();
    for c in &classes {
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        for i in 0..gold.len() {
            let g = &gold[i] == c;
            let p = pred[i].as_ref() == Some(c);
            match (g, p) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
        counts.insert(c.clone(), (tp, fp, fn_));
    }
    let m = macro_of(&counts, &classes);
    (counts, m)
}

fn oracle_norm(s: &str) -> String {
    let mut out = String::new();
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&word.to_lowercase());
    }
    out
}

fn pairs(m: &EntityMap) -> Vec<(String, String)> {
    let mut v: Vec<(String, String)> = Vec::new();
    for (c, values) in m {
        for value in values {
            let p = (c.as_str().to_owned(), oracle_norm(value));
            if !p.1.is_empty() && !v.contains(&p) {
                v.push(p);
            }
        }
    }
    v
}

/// Set-based entity scorer over (class, normalized value) pairs.
pub fn oracle_entity(gold: &[EntityMap], pred: &[Option<EntityMap>]) -> (Counts, Ratio<i64>) {
    let mut counts = Counts::new();
    let mut classes = BTreeSet::new();
    for i in 0..gold.len() {
        let g = pairs(&gold[i]);
        let p = pred[i].as_ref().map(pairs).unwrap_or_default();
        for (c, _) in &g {
            classes.insert(c.clone());
        }
        for x in &g {
            let e = counts.entry(x.0.clone()).or_default();
            if p.contains(x) {
                e.0 += 1;
            } else {
                e.2 += 1;
            }
        }
        for x in &p {
            if !g.contains(x) {
                counts.entry(x.0.clone()).or_default().1 += 1;
            }
        }
    }
    let m = macro_of(&counts, &classes);
    (counts, m)
}

pub fn ratio_f64(r: Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

// ---------------------------------------------------------------- dedupe

fn oracle_tokens(s: &str) -> Vec<String> {
    let cleaned: String = s
        .chars()
        .flat_map(char::to_lowercase)
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    cleaned.split_whitespace().map(String::from).collect()
}

/// The dedupe predicate, evaluated directly: equal normalized text, or token
/// 3-gram Jaccard of at least 9/10.
pub fn oracle_near_duplicate(a: &str, b: &str) -> bool {
    let (ta, tb) = (oracle_tokens(a), oracle_tokens(b));
    if ta == tb {
        return true;
    }
    let grams = |t: &[String]| -> BTreeSet<Vec<String>> { t.windows(3).map(|w| w.to_vec()).collect() };
    let (ga, gb) = (grams(&ta), grams(&tb));
    let union = ga.union(&gb).count();
    if union == 0 || ga.is_empty() || gb.is_empty() {
        return false;
    }
    let inter = ga.intersection(&gb).count();
    Ratio::new(inter as i64, union as i64) >= Ratio::new(9, 10)
}

// ---------------------------------------------------------------- grammar

const LIT_CHARS: &[char] = &['a', 'b', 'x', ' ', ',', '?', '(', ')', '[', ']', '{', '}', '|', '\\', 'é'];
const NAME_CHARS: &[char] = &['a', 'b', 'c', ' ', '-', '(', '{', '|', '\\', '?'];

fn random_text(rng: &mut impl Rng, alphabet: &[char], len: std::ops::RangeInclusive<usize>) -> String {
    let n = rng.random_range(len);
    (0..n).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
}

fn random_name(rng: &mut impl Rng) -> String {
    loop {
        let s = random_text(rng, NAME_CHARS, 1..=6);
        if s.trim() == s && !s.is_empty() {
            return s;
        }
    }
}

/// Random AST in the parser's normal form: no empty or adjacent literals,
/// alternations with at least two non-empty branches, non-empty optionals.
pub fn random_ast(rng: &mut impl Rng, max_depth: usize) -> TemplateAst {
    TemplateAst {
        nodes: random_seq(rng, max_depth, 0),
    }
}

fn random_seq(rng: &mut impl Rng, max_depth: usize, depth: usize) -> Vec<Node> {
    let len = rng.random_range(if depth == 0 { 0..=5 } else { 1..=3 });
    let mut nodes: Vec<Node> = Vec::new();
    for _ in 0..len {
        let kind = if depth < max_depth { rng.random_range(0..4) } else { rng.random_range(0..2) };
        let node = match kind {
            0 => Node::Literal(random_text(rng, LIT_CHARS, 1..=5)),
            1 => Node::Slot(Slot {
                name: random_name(rng),
                annotation: rng.random_bool(0.3).then(|| random_name(rng)),
            }),
            2 => Node::Alternation((0..rng.random_range(2..=3)).map(|_| random_seq(rng, max_depth, depth + 1)).collect()),
            _ => Node::Optional(random_seq(rng, max_depth, depth + 1)),
        };
        match (nodes.last_mut(), node) {
            (Some(Node::Literal(prev)), Node::Literal(next)) => prev.push_str(&next),
            (_, node) => nodes.push(node),
        }
    }
    nodes
}

/// Random template over slots `s0..s3` with literal domains of 1 to 3 values.
pub fn random_literal_template(rng: &mut impl Rng) -> (TemplateAst, SlotRegistry) {
    let mut reg = SlotRegistry::new();
    for i in 0..4 {
        let n = rng.random_range(1..=3);
        reg.insert(format!("s{i}"), SlotDomain::Literal((0..n).map(|v| format!("v{i}_{v}")).collect()));
    }
    fn seq(rng: &mut impl Rng, depth: usize) -> Vec<Node> {
        (0..rng.random_range(1..=3))
            .map(|_| match if depth < 3 { rng.random_range(0..4) } else { rng.random_range(0..2) } {
                0 => Node::Literal(format!("w{} ", rng.random_range(0..5))),
                1 => Node::Slot(Slot {
                    name: format!("s{}", rng.random_range(0..4)),
                    annotation: None,
                }),
                2 => Node::Alternation((0..rng.random_range(2..=3)).map(|_| seq(rng, depth + 1)).collect()),
                _ => Node::Optional(seq(rng, depth + 1)),
            })
            .collect()
    }
    (TemplateAst { nodes: seq(rng, 0) }, reg)
}

/// Every derivation of a literal-slot template, by direct recursion.
pub fn enumerate(nodes: &[Node], reg: &SlotRegistry) -> Vec<String> {
    let Some((head, rest)) = nodes.split_first() else {
        return vec![String::new()];
    };
    let heads: Vec<String> = match head {
        Node::Literal(t) => vec![t.clone()],
        Node::Slot(s) => match reg.get(&s.name) {
            Some(SlotDomain::Literal(vs)) => vs.clone(),
            _ => panic!("oracle only handles literal slots"),
        },
        Node::Alternation(bs) => bs.iter().flat_map(|b| enumerate(b, reg)).collect(),
        Node::Optional(inner) => {
            let mut v = vec![String::new()];
            v.extend(enumerate(inner, reg));
            v
        }
    };
    let tails = enumerate(rest, reg);
    let mut out = Vec::new();
    for h in &heads {
        for t in &tails {
            out.push(format!("{h}{t}"));
        }
    }
    out
}

/// Derivation count without materializing strings, used to bound generation.
pub fn count_derivations(nodes: &[Node], reg: &SlotRegistry) -> u128 {
    nodes
        .iter()
        .map(|n| match n {
            Node::Literal(_) => 1,
            Node::Slot(s) => match reg.get(&s.name) {
                Some(SlotDomain::Literal(vs)) => vs.len() as u128,
                _ => 0,
            },
            Node::Alternation(bs) => bs.iter().map(|b| count_derivations(b, reg)).sum(),
            Node::Optional(inner) => 1 + count_derivations(inner, reg),
        })
        .fold(1u128, |a, b| a.saturating_mul(b))
}

// ---------------------------------------------------------------- retrieval

fn oracle_fnv(bytes: &[u8]) -> u64 {
    let mut h: u64 = 14695981039346656037;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(1099511628211);
    }
    h
}

/// Signed hashed bag of words, normalized; written out separately from the library.
pub fn oracle_embed(text: &str, d: usize) -> Vec<f64> {
    let mut v = vec![0.0f64; d];
    for t in oracle_tokens(text) {
        let h = oracle_fnv(t.as_bytes());
        v[(h % d as u64) as usize] += if h & (1 << 63) != 0 { -1.0 } else { 1.0 };
    }
    let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        return v;
    }
    v.into_iter().map(|x| x / n).collect()
}

/// Full scan: every record scored, sorted by score then id.
pub fn oracle_rank(docs: &[(String, String)], query: &str, d: usize, k: usize) -> Vec<(String, f64)> {
    let q = oracle_embed(query, d);
    let mut all: Vec<(String, f64)> = docs
        .iter()
        .map(|(id, text)| {
            let v = oracle_embed(text, d);
            (id.clone(), q.iter().zip(&v).map(|(a, b)| a * b).sum())
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}
