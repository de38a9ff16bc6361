//! Entity knowledge graph built from the catalog, and grounded seed sampling.
//!
//! Titles are the hubs: people point at titles (`acted_in`, `directed`) and
//! titles point at their genres, themes and plot keywords. A [`SeedTuple`]
//! only ever combines values that hang off one anchor title, so generated
//! prompts never pair attributes from unrelated works.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::MediaRecord;
use crate::entity::EntityClass;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum KgError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("no title supports the slot signature [{0}]")]
    Unsatisfiable(String),
    #[error("graph line {line}: {message}")]
    Format { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Title,
    Person,
    Genre,
    Theme,
    PlotKeyword,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Title => "title",
            NodeKind::Person => "person",
            NodeKind::Genre => "genre",
            NodeKind::Theme => "theme",
            NodeKind::PlotKeyword => "plot_keyword",
        }
    }
}

impl FromStr for NodeKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "title" => NodeKind::Title,
            "person" => NodeKind::Person,
            "genre" => NodeKind::Genre,
            "theme" => NodeKind::Theme,
            "plot_keyword" => NodeKind::PlotKeyword,
            _ => return Err(format!("unknown node kind `{s}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    HasGenre,
    HasTheme,
    ActedIn,
    Directed,
    HasPlotKeyword,
}

impl EdgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::HasGenre => "has_genre",
            EdgeKind::HasTheme => "has_theme",
            EdgeKind::ActedIn => "acted_in",
            EdgeKind::Directed => "directed",
            EdgeKind::HasPlotKeyword => "has_plot_keyword",
        }
    }

    /// (source kind, target kind) this edge kind connects.
    pub fn endpoints(self) -> (NodeKind, NodeKind) {
        match self {
            EdgeKind::ActedIn | EdgeKind::Directed => (NodeKind::Person, NodeKind::Title),
            EdgeKind::HasGenre => (NodeKind::Title, NodeKind::Genre),
            EdgeKind::HasTheme => (NodeKind::Title, NodeKind::Theme),
            EdgeKind::HasPlotKeyword => (NodeKind::Title, NodeKind::PlotKeyword),
        }
    }
}

impl FromStr for EdgeKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "has_genre" => EdgeKind::HasGenre,
            "has_theme" => EdgeKind::HasTheme,
            "acted_in" => EdgeKind::ActedIn,
            "directed" => EdgeKind::Directed,
            "has_plot_keyword" => EdgeKind::HasPlotKeyword,
            _ => return Err(format!("unknown edge kind `{s}`")),
        })
    }
}

/// Node kind an entity class lives on, and the edge linking it to its title.
/// `None` for the title class itself.
pub fn class_binding(class: EntityClass) -> (NodeKind, Option<EdgeKind>) {
    match class {
        EntityClass::Title => (NodeKind::Title, None),
        EntityClass::Actor => (NodeKind::Person, Some(EdgeKind::ActedIn)),
        EntityClass::Director => (NodeKind::Person, Some(EdgeKind::Directed)),
        EntityClass::Genre => (NodeKind::Genre, Some(EdgeKind::HasGenre)),
        EntityClass::Theme => (NodeKind::Theme, Some(EdgeKind::HasTheme)),
        EntityClass::Plot => (NodeKind::PlotKeyword, Some(EdgeKind::HasPlotKeyword)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EntityNode {
    pub node_id: NodeId,
    pub kind: NodeKind,
    pub value: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub kind: EdgeKind,
}

/// Turns free-text plots into keyword values.
pub trait KeywordExtractor {
    fn keywords(&self, text: &str) -> Vec<String>;
}

/// Lowercase alphanumeric tokens of at least four characters that are not in
/// a fixed English stop-word list. Duplicates are dropped, first occurrence kept.
#[derive(Debug, Clone)]
pub struct StopWordExtractor {
    stop_words: HashSet<&'static str>,
    min_len: usize,
}

const STOP_WORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "almost", "along", "also", "although",
    "always", "among", "an", "and", "another", "any", "are", "around", "as", "at", "away", "back",
    "be", "became", "because", "become", "becomes", "been", "before", "begins", "being", "below",
    "between", "both", "but", "by", "came", "can", "come", "comes", "could", "did", "does", "doing",
    "down", "during", "each", "either", "even", "ever", "every", "find", "finds", "first", "for",
    "from", "further", "gets", "getting", "goes", "going", "had", "has", "have", "having", "he",
    "her", "here", "hers", "herself", "him", "himself", "his", "how", "however", "into", "is",
    "it", "its", "itself", "just", "last", "later", "like", "made", "make", "makes", "many",
    "more", "most", "much", "must", "never", "next", "only", "onto", "other", "others", "over",
    "own", "same", "should", "since", "some", "soon", "still", "such", "take", "takes", "than",
    "that", "their", "theirs", "them", "themselves", "then", "there", "these", "they", "this",
    "those", "through", "thus", "together", "under", "until", "upon", "very", "want", "wants",
    "was", "were", "what", "when", "where", "whether", "which", "while", "whose", "will", "with",
    "within", "without", "would", "year", "years", "your", "yours", "yourself",
];

impl Default for StopWordExtractor {
    fn default() -> Self {
        Self {
            stop_words: STOP_WORDS.iter().copied().collect(),
            min_len: 4,
        }
    }
}

impl KeywordExtractor for StopWordExtractor {
    fn keywords(&self, text: &str) -> Vec<String> {
        let lower = text.to_lowercase();
        let mut seen = HashSet::new();
        lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| t.chars().count() >= self.min_len && !self.stop_words.contains(t))
            .filter(|t| seen.insert(*t))
            .map(str::to_owned)
            .collect()
    }
}

/// Immutable entity graph. Node ids are dense and assigned in build order.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    nodes: Vec<EntityNode>,
    index: HashMap<(NodeKind, String), NodeId>,
    edges: BTreeSet<Edge>,
    // (edge kind, neighbour) for both directions.
    adjacency: Vec<Vec<(EdgeKind, NodeId)>>,
}

/// Graphs are equal when their node lists and edge sets are.
impl PartialEq for KnowledgeGraph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.edges == other.edges
    }
}

impl Eq for KnowledgeGraph {}

/// Value of a record's title node. Titles that occur with several years are
/// qualified as `Title (Year)` so distinct works stay distinct nodes.
fn title_values(records: &[MediaRecord]) -> Vec<String> {
    let mut years: HashMap<&str, BTreeSet<Option<i32>>> = HashMap::new();
    for r in records {
        years.entry(r.title.as_str()).or_default().insert(r.year);
    }
    records
        .iter()
        .map(|r| match r.year {
            Some(y) if years[r.title.as_str()].len() > 1 => format!("{} ({y})", r.title),
            _ => r.title.clone(),
        })
        .collect()
}

pub fn build_graph(records: &[MediaRecord], extractor: &dyn KeywordExtractor) -> KnowledgeGraph {
    let mut g = KnowledgeGraph::default();
    for (rec, title) in records.iter().zip(title_values(records)) {
        let t = g.intern(NodeKind::Title, &title);
        for name in &rec.directors {
            let p = g.intern(NodeKind::Person, name);
            g.link(p, t, EdgeKind::Directed);
        }
        for name in &rec.cast {
            let p = g.intern(NodeKind::Person, name);
            g.link(p, t, EdgeKind::ActedIn);
        }
        for genre in &rec.genres {
            let n = g.intern(NodeKind::Genre, genre);
            g.link(t, n, EdgeKind::HasGenre);
        }
        for theme in &rec.themes {
            let n = g.intern(NodeKind::Theme, theme);
            g.link(t, n, EdgeKind::HasTheme);
        }
        if let Some(plot) = &rec.plot {
            for kw in extractor.keywords(plot) {
                let n = g.intern(NodeKind::PlotKeyword, &kw);
                g.link(t, n, EdgeKind::HasPlotKeyword);
            }
        }
    }
    g
}

/// Grounded slot assignment: every graph-backed value hangs off `anchor_title`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedTuple {
    pub assignments: BTreeMap<String, String>,
    pub anchor_title: Option<NodeId>,
}

impl KnowledgeGraph {
    fn intern(&mut self, kind: NodeKind, value: &str) -> NodeId {
        if let Some(&id) = self.index.get(&(kind, value.to_owned())) {
            return id;
        }
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(EntityNode {
            node_id: id,
            kind,
            value: value.to_owned(),
        });
        self.index.insert((kind, value.to_owned()), id);
        self.adjacency.push(Vec::new());
        id
    }

    fn link(&mut self, from: NodeId, to: NodeId, kind: EdgeKind) {
        if self.edges.insert(Edge { from, to, kind }) {
            self.adjacency[from.0 as usize].push((kind, to));
            self.adjacency[to.0 as usize].push((kind, from));
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[EntityNode] {
        &self.nodes
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter()
    }

    pub fn node(&self, id: NodeId) -> Result<&EntityNode, KgError> {
        self.nodes.get(id.0 as usize).ok_or(KgError::UnknownNode(id))
    }

    pub fn lookup(&self, kind: NodeKind, value: &str) -> Option<NodeId> {
        self.index.get(&(kind, value.to_owned())).copied()
    }

    pub fn degree(&self, id: NodeId) -> usize {
        self.adjacency.get(id.0 as usize).map_or(0, Vec::len)
    }

    pub fn titles(&self) -> impl Iterator<Item = &EntityNode> {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Title)
    }

    /// Nodes joined to `node` by an edge of `kind` (either direction), sorted by value.
    pub fn neighbors(&self, node: NodeId, kind: EdgeKind) -> Result<Vec<&EntityNode>, KgError> {
        let adj = self
            .adjacency
            .get(node.0 as usize)
            .ok_or(KgError::UnknownNode(node))?;
        let mut out: Vec<&EntityNode> = adj
            .iter()
            .filter(|(k, _)| *k == kind)
            .map(|(_, n)| &self.nodes[n.0 as usize])
            .collect();
        out.sort_by(|a, b| a.value.cmp(&b.value).then(a.node_id.cmp(&b.node_id)));
        Ok(out)
    }

    /// Values a title offers for `class`, sorted. The title class yields the title itself.
    pub fn incident_values(&self, title: NodeId, class: EntityClass) -> Result<Vec<&str>, KgError> {
        let node = self.node(title)?;
        match class_binding(class).1 {
            None => Ok(vec![node.value.as_str()]),
            Some(edge) => Ok(self
                .neighbors(title, edge)?
                .into_iter()
                .map(|n| n.value.as_str())
                .collect()),
        }
    }

    /// True when `value` of `class` hangs off `title` in this graph.
    pub fn supports(&self, title: NodeId, class: EntityClass, value: &str) -> bool {
        let Ok(node) = self.node(title) else {
            return false;
        };
        if node.kind != NodeKind::Title {
            return false;
        }
        let (kind, edge) = class_binding(class);
        match edge {
            None => node.value == value,
            Some(edge) => match self.lookup(kind, value) {
                Some(target) => {
                    let (from, to) = if kind == NodeKind::Person { (target, title) } else { (title, target) };
                    self.edges.contains(&Edge { from, to, kind: edge })
                }
                None => false,
            },
        }
    }

    /// Titles with at least one value for every class in the signature, in id order.
    pub fn qualifying_titles(&self, classes: &[EntityClass]) -> Vec<NodeId> {
        self.titles()
            .filter(|t| {
                classes.iter().all(|&c| match class_binding(c).1 {
                    None => true,
                    Some(edge) => self.adjacency[t.node_id.0 as usize].iter().any(|(k, _)| *k == edge),
                })
            })
            .map(|t| t.node_id)
            .collect()
    }

    /// Draws an anchor uniformly from `candidates`, then one value per slot.
    /// `candidates` must come from [`Self::qualifying_titles`] for the same classes.
    pub fn sample_from<R: Rng + ?Sized>(
        &self,
        candidates: &[NodeId],
        signature: &[(String, EntityClass)],
        rng: &mut R,
    ) -> Result<SeedTuple, KgError> {
        if signature.is_empty() {
            return Ok(SeedTuple::default());
        }
        if candidates.is_empty() {
            return Err(KgError::Unsatisfiable(describe(signature)));
        }
        let anchor = candidates[rng.random_range(0..candidates.len())];
        let mut assignments = BTreeMap::new();
        for (slot, class) in signature {
            let values = self.incident_values(anchor, *class)?;
            if values.is_empty() {
                return Err(KgError::Unsatisfiable(describe(signature)));
            }
            let pick = values[rng.random_range(0..values.len())];
            assignments.insert(slot.clone(), pick.to_owned());
        }
        Ok(SeedTuple {
            assignments,
            anchor_title: Some(anchor),
        })
    }

    /// Samples a grounded tuple for `signature` (slot name, class).
    pub fn sample_seed_tuple<R: Rng + ?Sized>(
        &self,
        signature: &[(String, EntityClass)],
        rng: &mut R,
    ) -> Result<SeedTuple, KgError> {
        let classes: Vec<EntityClass> = signature.iter().map(|(_, c)| *c).collect();
        let candidates = self.qualifying_titles(&classes);
        self.sample_from(&candidates, signature, rng)
    }

    /// Line format: `N<TAB>kind<TAB>value` for nodes (ids are the 0-based order
    /// of N lines) and `E<TAB>from<TAB>to<TAB>kind` for edges. Tabs, newlines
    /// and backslashes in values are backslash-escaped.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for n in &self.nodes {
            writeln!(w, "N\t{}\t{}", n.kind.as_str(), escape(&n.value))?;
        }
        for e in &self.edges {
            writeln!(w, "E\t{}\t{}\t{}", e.from.0, e.to.0, e.kind.as_str())?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self, KgError> {
        let mut g = KnowledgeGraph::default();
        for (i, line) in r.lines().enumerate() {
            let line_no = i + 1;
            let err = |message: String| KgError::Format { line: line_no, message };
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            match parts.as_slice() {
                ["N", kind, value] => {
                    let kind: NodeKind = kind.parse().map_err(err)?;
                    let value = unescape(value).map_err(err)?;
                    if value.is_empty() {
                        return Err(err("empty node value".into()));
                    }
                    if g.lookup(kind, &value).is_some() {
                        return Err(err(format!("duplicate node {} `{value}`", kind.as_str())));
                    }
                    g.intern(kind, &value);
                }
                ["E", from, to, kind] => {
                    let parse_id = |s: &str| -> Result<NodeId, KgError> {
                        let id = NodeId(s.parse().map_err(|_| err(format!("bad node id `{s}`")))?);
                        g.node(id).map_err(|_| err(format!("edge references unknown node {id}")))?;
                        Ok(id)
                    };
                    let from = parse_id(from)?;
                    let to = parse_id(to)?;
                    let kind: EdgeKind = kind.parse().map_err(err)?;
                    let (fk, tk) = kind.endpoints();
                    if g.nodes[from.0 as usize].kind != fk || g.nodes[to.0 as usize].kind != tk {
                        return Err(err(format!("{} must connect {} to {}", kind.as_str(), fk.as_str(), tk.as_str())));
                    }
                    if g.edges.contains(&Edge { from, to, kind }) {
                        return Err(err("duplicate edge".into()));
                    }
                    g.link(from, to, kind);
                }
                _ => return Err(err("expected an N or E record".into())),
            }
        }
        Ok(g)
    }
}

fn describe(signature: &[(String, EntityClass)]) -> String {
    signature
        .iter()
        .map(|(s, c)| format!("{s}:{c}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => return Err(format!("bad escape `\\{}`", other.map(String::from).unwrap_or_default())),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(title: &str, genres: &[&str], themes: &[&str], plot: Option<&str>) -> MediaRecord {
        let mut r = MediaRecord::new(title, title, "t");
        r.genres = genres.iter().map(|s| s.to_string()).collect();
        r.themes = themes.iter().map(|s| s.to_string()).collect();
        r.plot = plot.map(str::to_owned);
        r
    }

    #[test]
    fn shared_genre_is_one_node() {
        let recs = vec![rec("Dune", &["fantasy"], &[], None), rec("Stardust", &["fantasy"], &[], None)];
        let g = build_graph(&recs, &StopWordExtractor::default());
        // 2 titles + 1 genre; 2 has_genre edges
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edge_count(), 2);
        let fantasy = g.lookup(NodeKind::Genre, "fantasy").unwrap();
        assert_eq!(g.degree(fantasy), 2);
    }

    #[test]
    fn empty_and_plotless() {
        assert!(build_graph(&[], &StopWordExtractor::default()).is_empty());
        let g = build_graph(&[rec("Heat", &[], &[], None)], &StopWordExtractor::default());
        let t = g.lookup(NodeKind::Title, "Heat").unwrap();
        assert!(g.neighbors(t, EdgeKind::HasPlotKeyword).unwrap().is_empty());
    }

    #[test]
    fn neighbors_sorted_and_errors() {
        let g = build_graph(&[rec("Dune", &["sci-fi", "adventure"], &[], None)], &StopWordExtractor::default());
        let t = g.lookup(NodeKind::Title, "Dune").unwrap();
        let vals: Vec<_> = g.neighbors(t, EdgeKind::HasGenre).unwrap().iter().map(|n| n.value.clone()).collect();
        assert_eq!(vals, vec!["adventure", "sci-fi"]);
        let adv = g.lookup(NodeKind::Genre, "adventure").unwrap();
        assert!(g.neighbors(adv, EdgeKind::ActedIn).unwrap().is_empty());
        assert_eq!(g.neighbors(NodeId(99), EdgeKind::HasGenre).unwrap_err(), KgError::UnknownNode(NodeId(99)));
    }

    #[test]
    fn keywords_drop_stop_words_and_short_tokens() {
        let kw = StopWordExtractor::default().keywords("The dire wolves of the North, and their loyalty; wolves again.");
        assert_eq!(kw, vec!["dire", "wolves", "north", "loyalty"]);
    }

    #[test]
    fn people_edges_point_at_titles() {
        let mut r = rec("Forrest Gump", &[], &[], None);
        r.directors = vec!["Robert Zemeckis".into()];
        r.cast = vec!["Tom Hanks".into()];
        let g = build_graph(&[r], &StopWordExtractor::default());
        let t = g.lookup(NodeKind::Title, "Forrest Gump").unwrap();
        let p = g.lookup(NodeKind::Person, "Robert Zemeckis").unwrap();
        assert!(g.edges().any(|e| *e == Edge { from: p, to: t, kind: EdgeKind::Directed }));
        assert!(g.supports(t, EntityClass::Director, "Robert Zemeckis"));
        assert!(!g.supports(t, EntityClass::Actor, "Robert Zemeckis"));
        assert!(g.supports(t, EntityClass::Actor, "Tom Hanks"));
    }

    #[test]
    fn remakes_get_qualified_titles() {
        let mut a = rec("Dune", &[], &[], None);
        a.year = Some(1984);
        let mut b = rec("Dune", &[], &[], None);
        b.year = Some(2021);
        let g = build_graph(&[a, b], &StopWordExtractor::default());
        assert!(g.lookup(NodeKind::Title, "Dune (1984)").is_some());
        assert!(g.lookup(NodeKind::Title, "Dune (2021)").is_some());
    }

    #[test]
    fn only_one_title_qualifies() {
        let recs = vec![
            rec("Game of Thrones", &["fantasy"], &["loyalty"], None),
            rec("Heat", &["crime"], &[], None),
            rec("Arrival", &[], &["language"], None),
        ];
        let g = build_graph(&recs, &StopWordExtractor::default());
        let sig = vec![("genre".to_owned(), EntityClass::Genre), ("theme".to_owned(), EntityClass::Theme)];
        for seed in 0..20 {
            let t = g.sample_seed_tuple(&sig, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(g.node(t.anchor_title.unwrap()).unwrap().value, "Game of Thrones");
            assert_eq!(t.assignments["genre"], "fantasy");
            assert_eq!(t.assignments["theme"], "loyalty");
        }
        let empty = g.sample_seed_tuple(&[], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(empty, SeedTuple::default());
    }

    #[test]
    fn theme_free_graph_is_unsatisfiable() {
        let g = build_graph(&[rec("Heat", &["crime"], &[], None)], &StopWordExtractor::default());
        let sig = vec![("theme".to_owned(), EntityClass::Theme)];
        assert!(matches!(
            g.sample_seed_tuple(&sig, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(KgError::Unsatisfiable(_))
        ));
    }

    #[test]
    fn tsv_round_trip_and_validation() {
        let mut r = rec("Tab\tTitle", &["drama"], &["grief"], Some("A widow mourns"));
        r.cast = vec!["Back\\slash".into()];
        let g = build_graph(&[r], &StopWordExtractor::default());
        let mut buf = Vec::new();
        g.write_tsv(&mut buf).unwrap();
        assert_eq!(KnowledgeGraph::read_tsv(buf.as_slice()).unwrap(), g);

        let bad = "N\ttitle\tX\nN\tgenre\tY\nE\t1\t0\thas_genre\n";
        assert!(matches!(KnowledgeGraph::read_tsv(bad.as_bytes()), Err(KgError::Format { line: 3, .. })));
        assert!(KnowledgeGraph::read_tsv("N\ttitle\tX\nE\t0\t5\thas_genre\n".as_bytes()).is_err());
        assert!(KnowledgeGraph::read_tsv("Q\tx\n".as_bytes()).is_err());
    }

    // Brute-force node/edge count straight from the records.
    fn oracle_counts(recs: &[MediaRecord]) -> (usize, usize) {
        let ex = StopWordExtractor::default();
        let mut nodes: HashSet<(u8, String)> = HashSet::new();
        let mut edges: HashSet<(String, String, u8)> = HashSet::new();
        for r in recs {
            nodes.insert((0, r.title.clone()));
            for p in r.cast.iter() {
                nodes.insert((1, p.clone()));
                edges.insert((p.clone(), r.title.clone(), 0));
            }
            for p in r.directors.iter() {
                nodes.insert((1, p.clone()));
                edges.insert((p.clone(), r.title.clone(), 1));
            }
            for x in &r.genres {
                nodes.insert((2, x.clone()));
                edges.insert((r.title.clone(), x.clone(), 2));
            }
            for x in &r.themes {
                nodes.insert((3, x.clone()));
                edges.insert((r.title.clone(), x.clone(), 3));
            }
            for x in r.plot.iter().flat_map(|p| ex.keywords(p)) {
                nodes.insert((4, x.clone()));
                edges.insert((r.title.clone(), x, 4));
            }
        }
        (nodes.len(), edges.len())
    }

    fn arb_records() -> impl Strategy<Value = Vec<MediaRecord>> {
        let pool = |v: &'static [&'static str]| proptest::sample::subsequence(v.to_vec(), 0..v.len());
        proptest::collection::vec(
            (
                pool(&["Alpha", "Beta", "Gamma", "Delta", "Omega"]),
                pool(&["drama", "crime", "fantasy"]),
                pool(&["loyalty", "grief", "survival"]),
                pool(&["Ann", "Bob", "Cy"]),
                pool(&["Dee", "Bob"]),
                proptest::option::of("(wolves|frozen|the|river|city|and| ){0,6}"),
            ),
            0..=5,
        )
        .prop_map(|rows| {
            let mut seen = HashSet::new();
            rows.into_iter()
                .filter_map(|(t, g, th, cast, dirs, plot)| {
                    let title = t.first().copied().unwrap_or("Untitled").to_owned();
                    if !seen.insert(title.clone()) {
                        return None;
                    }
                    let mut r = MediaRecord::new(&title, &title, "p");
                    r.genres = g.into_iter().map(str::to_owned).collect();
                    r.themes = th.into_iter().map(str::to_owned).collect();
                    r.cast = cast.into_iter().map(str::to_owned).collect();
                    r.directors = dirs.into_iter().map(str::to_owned).collect();
                    r.plot = plot;
                    Some(r)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn counts_match_oracle(recs in arb_records()) {
            let g = build_graph(&recs, &StopWordExtractor::default());
            prop_assert_eq!((g.node_count(), g.edge_count()), oracle_counts(&recs));
            prop_assert_eq!(&build_graph(&recs, &StopWordExtractor::default()), &g);
        }

        #[test]
        fn samples_are_grounded(recs in arb_records(), classes in proptest::collection::vec(proptest::sample::select(EntityClass::ALL.to_vec()), 0..4), seed in any::<u64>()) {
            let g = build_graph(&recs, &StopWordExtractor::default());
            let sig: Vec<_> = classes.iter().enumerate().map(|(i, c)| (format!("s{i}"), *c)).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            match g.sample_seed_tuple(&sig, &mut rng) {
                Ok(t) => {
                    prop_assert_eq!(t.assignments.len(), sig.len());
                    if let Some(anchor) = t.anchor_title {
                        let title = &g.node(anchor).unwrap().value;
                        let rec = recs.iter().find(|r| &r.title == title).unwrap();
                        let ex = StopWordExtractor::default();
                        for (slot, class) in &sig {
                            let v = &t.assignments[slot];
                            let ok = match class {
                                EntityClass::Title => v == title,
                                EntityClass::Genre => rec.genres.contains(v),
                                EntityClass::Theme => rec.themes.contains(v),
                                EntityClass::Actor => rec.cast.contains(v),
                                EntityClass::Director => rec.directors.contains(v),
                                EntityClass::Plot => rec.plot.iter().flat_map(|p| ex.keywords(p)).any(|k| &k == v),
                            };
                            prop_assert!(ok, "{} {:?} not on {}", v, class, title);
                        }
                    } else {
                        prop_assert!(sig.is_empty());
                    }
                    let again = g.sample_seed_tuple(&sig, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                    prop_assert_eq!(again, t);
                }
                Err(KgError::Unsatisfiable(_)) => {
                    prop_assert!(g.qualifying_titles(&classes).is_empty());
                }
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }
    }
}
