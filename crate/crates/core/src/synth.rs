//! Dataset generation: seed sampling, template filling, optional paraphrase
//! through an LLM transport, grounding check, dedupe, JSONL output.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::entity::{EntityClass, EntityMap, Intent};
use crate::grammar::{fill_traced, GrammarError, PackTemplate, SlotDomain, SlotRegistry};
use crate::http::{join_url, HttpError, JsonClient};
use crate::kg::{KnowledgeGraph, NodeId, SeedTuple};
use crate::promptkit::{
    build_entity_record_typed, build_intent_record, find_reserved, ChatTurn, PromptError, Role, Task, TrainingLine,
};
use crate::text::{collapse_whitespace, normalize_prompt};

/// Instruction sent with every paraphrase request.
pub const PARAPHRASE_INSTRUCTION: &str = "Rewrite the user's message about movies so it sounds like a different person asked it. \
Keep its meaning and keep every movie title, person name, genre, theme and plot detail exactly as written. \
Reply with the rewritten message only, without quotes or commentary.";
pub const PARAPHRASE_TEMPERATURE: f64 = 0.7;
pub const PARAPHRASE_MAX_TOKENS: u32 = 256;
pub const DEFAULT_MODEL: &str = "meta-llama/Llama-3.1-405B-Instruct";

/// Sampling attempts allowed per requested example.
pub const ATTEMPTS_PER_EXAMPLE: usize = 20;
pub const TRANSPORT_ATTEMPTS: u32 = 3;
pub const TRANSPORT_BACKOFF: Duration = Duration::from_millis(500);

/// Near-duplicate threshold on token 3-gram Jaccard similarity, as a fraction.
pub const JACCARD_NUM: usize = 9;
pub const JACCARD_DEN: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("transient transport error: {0}")]
    Transient(String),
    #[error("transport error: {0}")]
    Permanent(String),
    #[error("no recorded response for request {0}")]
    MissingRecording(String),
}

impl From<HttpError> for TransportError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::Transient(m) => TransportError::Transient(m),
            HttpError::Permanent(m) => TransportError::Permanent(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid job: {0}")]
    InvalidJob(String),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("template {template_id} cannot be satisfied: {reason}")]
    Unsatisfiable { template_id: u32, reason: String },
    #[error("gave up after {attempts} attempts with {emitted} of {target} examples")]
    BudgetExhausted { attempts: usize, emitted: usize, target: usize },
    #[error("transport failed: {0}")]
    TransportFailure(TransportError),
    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for SynthError {
    fn from(e: std::io::Error) -> Self {
        SynthError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self {
            model: DEFAULT_MODEL.to_owned(),
            temperature: PARAPHRASE_TEMPERATURE,
            max_tokens: PARAPHRASE_MAX_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub messages: Vec<ChatTurn>,
    pub params: CompletionParams,
}

impl ChatRequest {
    pub fn paraphrase(prompt: &str, params: &CompletionParams) -> Self {
        Self {
            messages: vec![ChatTurn::system(PARAPHRASE_INSTRUCTION), ChatTurn::user(prompt)],
            params: params.clone(),
        }
    }

    /// Chat-completions request body. Keys are sorted, so equal requests
    /// serialize to equal bytes.
    pub fn body(&self) -> Value {
        let messages: Vec<Value> = self
            .messages
            .iter()
            .map(|t| json!({"role": t.role.as_str(), "content": t.content}))
            .collect();
        json!({
            "model": self.params.model,
            "messages": messages,
            "temperature": self.params.temperature,
            "max_tokens": self.params.max_tokens,
        })
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        self.body().to_string().into_bytes()
    }

    /// Lowercase hex SHA-256 of [`Self::canonical_bytes`]; the cassette key.
    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_bytes()))
    }

    fn last_user(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|t| t.role == Role::User)
            .map_or("", |t| t.content.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportMode {
    Live,
    Mock,
    Replay,
}

impl std::str::FromStr for TransportMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "live" => Ok(TransportMode::Live),
            "mock" => Ok(TransportMode::Mock),
            "replay" => Ok(TransportMode::Replay),
            other => Err(format!("unknown transport `{other}` (expected live, mock or replay)")),
        }
    }
}

pub trait Transport: Send + Sync {
    fn mode(&self) -> TransportMode;
    fn complete(&self, req: &ChatRequest) -> Result<String, TransportError>;
}

/// Offline stand-in: prepends one of a few fixed openers, chosen by the
/// request hash, to the user message. Entities are never touched.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockTransport;

const MOCK_OPENERS: [&str; 4] = ["", "Quick question: ", "Hey, ", "Hi there. "];

impl Transport for MockTransport {
    fn mode(&self) -> TransportMode {
        TransportMode::Mock
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, TransportError> {
        let digest = Sha256::digest(req.canonical_bytes());
        let opener = MOCK_OPENERS[digest[0] as usize % MOCK_OPENERS.len()];
        Ok(format!("{opener}{}", req.last_user()))
    }
}

/// One cassette line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recording {
    pub request_sha256: String,
    pub response_text: String,
}

/// Serves responses recorded by request hash.
#[derive(Debug, Clone, Default)]
pub struct ReplayTransport {
    responses: HashMap<String, String>,
}

impl ReplayTransport {
    pub fn new(recordings: impl IntoIterator<Item = Recording>) -> Self {
        Self {
            responses: recordings
                .into_iter()
                .map(|r| (r.request_sha256, r.response_text))
                .collect(),
        }
    }

    /// Reads a JSON-lines cassette. Blank lines are skipped; later lines win.
    pub fn from_jsonl<R: BufRead>(r: R) -> Result<Self, SynthError> {
        let mut recs = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Recording = serde_json::from_str(&line)
                .map_err(|e| SynthError::InvalidJob(format!("cassette line {}: {e}", i + 1)))?;
            recs.push(rec);
        }
        Ok(Self::new(recs))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl Transport for ReplayTransport {
    fn mode(&self) -> TransportMode {
        TransportMode::Replay
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, TransportError> {
        let key = req.sha256();
        self.responses
            .get(&key)
            .cloned()
            .ok_or(TransportError::MissingRecording(key))
    }
}

/// OpenAI-compatible chat completions at `{base_url}/v1/chat/completions`.
#[derive(Debug, Clone)]
pub struct LiveTransport {
    url: String,
    client: JsonClient,
}

impl LiveTransport {
    /// Bearer token from `LLM_API_KEY`.
    pub fn new(base_url: &str) -> Self {
        Self::with_client(base_url, JsonClient::from_env(Duration::from_secs(120)))
    }

    pub fn with_client(base_url: &str, client: JsonClient) -> Self {
        Self {
            url: join_url(base_url, "v1/chat/completions"),
            client,
        }
    }
}

impl Transport for LiveTransport {
    fn mode(&self) -> TransportMode {
        TransportMode::Live
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, TransportError> {
        let resp = self.client.post_json(&self.url, &req.body())?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| TransportError::Permanent("response has no choices[0].message.content".into()))
    }
}

/// Retries transient failures with exponential backoff.
pub struct Retrying<T> {
    inner: T,
    attempts: u32,
    backoff: Duration,
}

impl<T: Transport> Retrying<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            attempts: TRANSPORT_ATTEMPTS,
            backoff: TRANSPORT_BACKOFF,
        }
    }

    pub fn with_policy(inner: T, attempts: u32, backoff: Duration) -> Self {
        Self {
            inner,
            attempts: attempts.max(1),
            backoff,
        }
    }
}

impl<T: Transport> Transport for Retrying<T> {
    fn mode(&self) -> TransportMode {
        self.inner.mode()
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, TransportError> {
        let mut delay = self.backoff;
        let mut attempt = 1;
        loop {
            match self.inner.complete(req) {
                Err(TransportError::Transient(_)) if attempt < self.attempts => {
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub template_id: u32,
    pub seed: SeedTuple,
    pub paraphrased: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub example_id: String,
    pub prompt: String,
    pub intent: Intent,
    pub entities: EntityMap,
    pub provenance: Provenance,
}

/// Structural checks on one dataset line: non-empty id and prompt, non-empty
/// entity values, each of which is one of the seed assignments.
pub fn validate_example(ex: &LabeledExample) -> Result<(), String> {
    if ex.example_id.is_empty() {
        return Err("empty example_id".into());
    }
    if ex.prompt.trim().is_empty() {
        return Err(format!("{}: empty prompt", ex.example_id));
    }
    let seeded: HashSet<&str> = ex.provenance.seed.assignments.values().map(String::as_str).collect();
    for (class, values) in &ex.entities {
        if values.is_empty() {
            return Err(format!("{}: empty list for {class}", ex.example_id));
        }
        if let Some(v) = values.iter().find(|v| v.trim().is_empty() || !seeded.contains(v.as_str())) {
            return Err(format!("{}: {class} value `{v}` is not in the seed tuple", ex.example_id));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Anchor title value, if the example has a resolvable anchor.
    pub anchor: Option<String>,
    pub class: EntityClass,
    pub value: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.anchor {
            Some(a) => write!(f, "{} `{}` is not linked to `{a}`", self.class, self.value),
            None => write!(f, "{} `{}` has no anchor title", self.class, self.value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Grounding {
    Pass,
    Violation(Violation),
}

impl Grounding {
    pub fn is_pass(&self) -> bool {
        matches!(self, Grounding::Pass)
    }
}

/// Passes when every entity value hangs off the example's anchor title in `g`.
pub fn ground_check(ex: &LabeledExample, g: &KnowledgeGraph) -> Grounding {
    let anchor = ex.provenance.seed.anchor_title;
    let anchor_value = anchor.and_then(|a| g.node(a).ok()).map(|n| n.value.clone());
    for (class, values) in &ex.entities {
        for value in values {
            let ok = anchor.is_some_and(|a| g.supports(a, *class, value));
            if !ok {
                return Grounding::Violation(Violation {
                    anchor: anchor_value,
                    class: *class,
                    value: value.clone(),
                });
            }
        }
    }
    Grounding::Pass
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DedupeVerdict {
    Kept,
    ExactDuplicate,
    NearDuplicate,
}

/// Streaming near-duplicate filter. A prompt is dropped when its normalized
/// form equals a kept one, or when the Jaccard similarity of token 3-gram sets
/// with a kept prompt reaches 0.9. Prompts under three tokens have no 3-grams
/// and are compared by the exact rule only.
///
/// Candidates are found with a prefix filter: 3-grams are ordered by
/// descending intern id (a fixed total order that tends to put rare 3-grams
/// first), and only each kept set's prefix is indexed.
#[derive(Debug, Default)]
pub struct Deduper {
    exact: HashSet<String>,
    vocab: HashMap<String, u32>,
    kept: Vec<Vec<u32>>,
    postings: HashMap<u32, Vec<u32>>,
    stamp: Vec<u32>,
    probe: u32,
}

fn prefix_len(n: usize) -> usize {
    // n - ceil(t n) + 1
    n - (JACCARD_NUM * n).div_ceil(JACCARD_DEN) + 1
}

fn near(a: &[u32], b: &[u32]) -> bool {
    let (mut i, mut j, mut inter) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
            // Descending order.
            std::cmp::Ordering::Greater => i += 1,
            std::cmp::Ordering::Less => j += 1,
        }
    }
    let union = a.len() + b.len() - inter;
    union > 0 && inter * JACCARD_DEN >= JACCARD_NUM * union
}

impl Deduper {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn kept_count(&self) -> usize {
        self.kept.len()
    }

    fn shingles(&mut self, norm: &str) -> Vec<u32> {
        let toks: Vec<&str> = norm.split(' ').filter(|t| !t.is_empty()).collect();
        let mut ids: Vec<u32> = toks
            .windows(3)
            .map(|w| {
                let key = w.join(" ");
                let next = self.vocab.len() as u32;
                *self.vocab.entry(key).or_insert(next)
            })
            .collect();
        ids.sort_unstable_by(|a, b| b.cmp(a));
        ids.dedup();
        ids
    }

    /// Records `prompt` unless it duplicates a kept one.
    pub fn admit(&mut self, prompt: &str) -> DedupeVerdict {
        let norm = normalize_prompt(prompt);
        if self.exact.contains(&norm) {
            return DedupeVerdict::ExactDuplicate;
        }
        let ids = self.shingles(&norm);
        if !ids.is_empty() {
            self.probe += 1;
            let n = ids.len();
            for s in &ids[..prefix_len(n)] {
                let Some(list) = self.postings.get(s) else { continue };
                for &k in list {
                    let k = k as usize;
                    if self.stamp[k] == self.probe {
                        continue;
                    }
                    self.stamp[k] = self.probe;
                    let other = &self.kept[k];
                    let (lo, hi) = (n.min(other.len()), n.max(other.len()));
                    if lo * JACCARD_DEN >= JACCARD_NUM * hi && near(&ids, other) {
                        return DedupeVerdict::NearDuplicate;
                    }
                }
            }
        }
        let idx = self.kept.len() as u32;
        for s in &ids[..if ids.is_empty() { 0 } else { prefix_len(ids.len()) }] {
            self.postings.entry(*s).or_default().push(idx);
        }
        self.exact.insert(norm);
        self.kept.push(ids);
        self.stamp.push(0);
        DedupeVerdict::Kept
    }
}

/// Everything one generation run needs.
pub struct GenerationJob<'a> {
    pub templates: &'a [PackTemplate],
    pub registry: &'a SlotRegistry,
    pub graph: &'a KnowledgeGraph,
    pub target_count: usize,
    pub rng_seed: u64,
    pub paraphrase: bool,
    pub transport: &'a dyn Transport,
    pub params: CompletionParams,
    pub max_in_flight: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityReport {
    pub target_count: usize,
    pub emitted: usize,
    pub attempts: usize,
    pub rejected_grounding: usize,
    pub rejected_exact_duplicate: usize,
    pub rejected_near_duplicate: usize,
    pub paraphrase_requests: usize,
    /// Paraphrases discarded because they lost an entity or were unusable.
    pub paraphrase_fallbacks: usize,
    /// Emitted examples per template id.
    pub per_template: BTreeMap<u32, usize>,
}

struct Prepared<'a> {
    template: &'a PackTemplate,
    graph_slots: Vec<(String, EntityClass)>,
    literal_slots: Vec<(String, &'a [String])>,
    anchors: Vec<NodeId>,
}

struct Candidate {
    template_id: u32,
    intent: Intent,
    prompt: String,
    entities: EntityMap,
    seed: SeedTuple,
    paraphrased: bool,
}

fn prepare<'a>(job: &GenerationJob<'a>) -> Result<Vec<Prepared<'a>>, SynthError> {
    if job.templates.is_empty() {
        return Err(SynthError::InvalidJob("template pack is empty".into()));
    }
    if job.target_count == 0 {
        return Err(SynthError::InvalidJob("target count must be at least 1".into()));
    }
    if job.max_in_flight == 0 {
        return Err(SynthError::InvalidJob("max_in_flight must be at least 1".into()));
    }
    job.templates
        .iter()
        .map(|t| {
            job.registry.check(&t.ast)?;
            let mut graph_slots = Vec::new();
            let mut literal_slots = Vec::new();
            for name in t.ast.slot_names() {
                match job.registry.get(name) {
                    Some(SlotDomain::Graph(c)) => graph_slots.push((name.to_owned(), *c)),
                    Some(SlotDomain::Literal(vs)) => literal_slots.push((name.to_owned(), vs.as_slice())),
                    None => unreachable!("checked above"),
                }
            }
            let classes: Vec<EntityClass> = graph_slots.iter().map(|(_, c)| *c).collect();
            let anchors = job.graph.qualifying_titles(&classes);
            if !graph_slots.is_empty() && anchors.is_empty() {
                let wanted: Vec<&str> = classes.iter().map(|c| c.as_str()).collect();
                return Err(SynthError::Unsatisfiable {
                    template_id: t.id,
                    reason: format!("no title has values for all of [{}]", wanted.join(", ")),
                });
            }
            Ok(Prepared {
                template: t,
                graph_slots,
                literal_slots,
                anchors,
            })
        })
        .collect()
}

fn draw(p: &Prepared, graph: &KnowledgeGraph, rng: &mut ChaCha8Rng) -> Result<Candidate, SynthError> {
    let mut seed = graph
        .sample_from(&p.anchors, &p.graph_slots, rng)
        .map_err(|e| SynthError::Unsatisfiable {
            template_id: p.template.id,
            reason: e.to_string(),
        })?;
    for (name, values) in &p.literal_slots {
        let v = &values[rng.random_range(0..values.len())];
        seed.assignments.insert(name.clone(), v.clone());
    }
    let (text, used) = fill_traced(&p.template.ast, &seed, rng)?;
    let mut entities = EntityMap::new();
    for (slot, class) in &p.graph_slots {
        if !used.contains(slot) {
            continue;
        }
        let v = &seed.assignments[slot];
        let list = entities.entry(*class).or_default();
        if !list.contains(v) {
            list.push(v.clone());
        }
    }
    Ok(Candidate {
        template_id: p.template.id,
        intent: p.template.intent,
        prompt: collapse_whitespace(&text),
        entities,
        seed,
        paraphrased: false,
    })
}

/// Usable paraphrase text, or `None` if the original should be kept.
fn accept_paraphrase(original: &Candidate, response: &str) -> Option<String> {
    let mut text = response.trim();
    if text.len() >= 2 && text.starts_with('"') && text.ends_with('"') {
        text = &text[1..text.len() - 1];
    }
    let text = collapse_whitespace(text);
    if text.is_empty() || find_reserved(&text).is_some() {
        return None;
    }
    let lower = text.to_lowercase();
    let keeps_all = original
        .entities
        .values()
        .flatten()
        .all(|v| lower.contains(&v.to_lowercase()));
    (keeps_all && text != original.prompt).then_some(text)
}

fn paraphrase_batch(job: &GenerationJob, batch: &mut [Candidate], report: &mut QualityReport) -> Result<(), SynthError> {
    let requests: Vec<ChatRequest> = batch
        .iter()
        .map(|c| ChatRequest::paraphrase(&c.prompt, &job.params))
        .collect();
    report.paraphrase_requests += requests.len();
    let responses: Vec<Result<String, TransportError>> = if requests.len() == 1 {
        vec![job.transport.complete(&requests[0])]
    } else {
        thread::scope(|s| {
            let handles: Vec<_> = requests
                .iter()
                .map(|r| s.spawn(move || job.transport.complete(r)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(TransportError::Permanent("transport thread panicked".into()))))
                .collect()
        })
    };
    for (c, resp) in batch.iter_mut().zip(responses) {
        let resp = resp.map_err(SynthError::TransportFailure)?;
        match accept_paraphrase(c, &resp) {
            Some(text) => {
                c.prompt = text;
                c.paraphrased = true;
            }
            None => report.paraphrase_fallbacks += 1,
        }
    }
    Ok(())
}

/// Generates the dataset, writing one JSON object per line to `out` as
/// examples are accepted. Output depends only on the job, never on transport
/// timing: candidates are drawn and accepted in generation order.
pub fn run_job<W: Write>(job: &GenerationJob, mut out: W) -> Result<QualityReport, SynthError> {
    let prepared = prepare(job)?;
    let mut rng = ChaCha8Rng::seed_from_u64(job.rng_seed);
    let mut dedupe = Deduper::new();
    let budget = job.target_count.saturating_mul(ATTEMPTS_PER_EXAMPLE);
    let mut report = QualityReport {
        target_count: job.target_count,
        ..QualityReport::default()
    };
    let mut drawn = 0usize;

    while report.emitted < job.target_count {
        if report.attempts >= budget {
            return Err(SynthError::BudgetExhausted {
                attempts: report.attempts,
                emitted: report.emitted,
                target: job.target_count,
            });
        }
        // Never draw more candidates than could still be needed, so replay
        // cassettes only need responses for requests that matter.
        let n = if job.paraphrase {
            job.max_in_flight
                .min(job.target_count - report.emitted)
                .min(budget - report.attempts)
        } else {
            1
        };
        let mut batch = Vec::with_capacity(n);
        for _ in 0..n {
            batch.push(draw(&prepared[drawn % prepared.len()], job.graph, &mut rng)?);
            drawn += 1;
        }
        if job.paraphrase {
            paraphrase_batch(job, &mut batch, &mut report)?;
        }
        for c in batch {
            report.attempts += 1;
            let ex = LabeledExample {
                example_id: format!("ex{:06}", report.emitted),
                prompt: c.prompt,
                intent: c.intent,
                entities: c.entities,
                provenance: Provenance {
                    template_id: c.template_id,
                    seed: c.seed,
                    paraphrased: c.paraphrased,
                },
            };
            if !ground_check(&ex, job.graph).is_pass() {
                report.rejected_grounding += 1;
                continue;
            }
            match dedupe.admit(&ex.prompt) {
                DedupeVerdict::ExactDuplicate => {
                    report.rejected_exact_duplicate += 1;
                    continue;
                }
                DedupeVerdict::NearDuplicate => {
                    report.rejected_near_duplicate += 1;
                    continue;
                }
                DedupeVerdict::Kept => {}
            }
            serde_json::to_writer(&mut out, &ex).map_err(|e| SynthError::Io(e.to_string()))?;
            out.write_all(b"\n")?;
            report.emitted += 1;
            *report.per_template.entry(ex.provenance.template_id).or_default() += 1;
        }
    }
    out.flush()?;
    Ok(report)
}

/// Runs a job in memory and parses the output back.
pub fn run_job_collect(job: &GenerationJob) -> Result<(Vec<LabeledExample>, QualityReport), SynthError> {
    let mut buf = Vec::new();
    let report = run_job(job, &mut buf)?;
    let examples = read_dataset(buf.as_slice())?;
    Ok((examples, report))
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<Vec<LabeledExample>, SynthError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| SynthError::InvalidJob(format!("dataset line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

/// Training line for one example in the chat format.
pub fn training_line(ex: &LabeledExample, task: Task) -> Result<TrainingLine, PromptError> {
    let (record, label, entities) = match task {
        Task::Intent => (build_intent_record(&ex.prompt, ex.intent)?, Some(ex.intent), None),
        Task::Entity => (build_entity_record_typed(&ex.prompt, &ex.entities)?, None, Some(ex.entities.clone())),
    };
    Ok(TrainingLine {
        task,
        prompt: ex.prompt.clone(),
        label,
        entities,
        rendered: record.rendered,
        template_id: ex.provenance.template_id,
        seed: ex.provenance.seed.assignments.clone(),
    })
}

/// Classes with at least one labeled value anywhere in `examples`.
pub fn classes_present(examples: &[LabeledExample]) -> BTreeSet<EntityClass> {
    examples.iter().flat_map(|e| e.entities.keys().copied()).collect()
}
