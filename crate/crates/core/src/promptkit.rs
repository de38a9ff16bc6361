//! Llama chat-frame rendering, task training records and fine-tune configs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::entity::{EntityClass, EntityMap, Intent, UnknownEntityClass};
use crate::kv::{KvDocument, KvError};

pub const BEGIN_OF_TEXT: &str = "<|begin_of_text|>";
pub const START_HEADER: &str = "<|start_header_id|>";
pub const END_HEADER: &str = "<|end_header_id|>";
pub const EOT: &str = "<|eot_id|>";
pub const END_OF_TEXT: &str = "<|end_of_text|>";

pub const RESERVED_TOKENS: [&str; 5] = [BEGIN_OF_TEXT, START_HEADER, END_HEADER, EOT, END_OF_TEXT];

/// System instruction of the intent-routing task, verbatim including the
/// trailing newline.
pub const INTENT_SYSTEM_PROMPT: &str = "You will receive User prompt with questions about Movies. Your task is to classify the intent among items in list [\"rec\", \"non_rec\"].Where 'rec' means the prompt is asking for recommendations and 'non_rec' means the prompt is asking about non-recommendations general information about movie related stuff for example:Who directed 'Forrest Gump' and what other films has he made?.Respond in json for example: {\"intent\": \"non_rec\"}\n";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PromptError {
    #[error("turn {turn} contains reserved token {token}")]
    ReservedTokenInContent { turn: usize, token: &'static str },
    #[error("turn {turn} breaks the system?, user, assistant, user, ... order")]
    BadTurnOrder { turn: usize },
    #[error("malformed chat frame at byte {0}")]
    MalformedFrame(usize),
    #[error("empty prompt")]
    EmptyPrompt,
    #[error(transparent)]
    UnknownEntityClass(#[from] UnknownEntityClass),
    #[error("entity class `{0}` has an empty value")]
    EmptyEntityValue(EntityClass),
    #[error("invalid target layer `{name}`; legal layers are {}", legal.join(", "))]
    InvalidLayerName { name: String, legal: Vec<&'static str> },
    #[error("target layer `{0}` listed twice")]
    DuplicateLayer(String),
    #[error("target layer list is empty")]
    EmptyLayerList,
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("invalid answer payload: {0}")]
    BadAnswer(String),
    #[error(transparent)]
    Config(#[from] KvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

impl FromStr for Role {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "system" => Ok(Role::System),
            "user" => Ok(Role::User),
            "assistant" => Ok(Role::Assistant),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub content: String,
}

impl ChatTurn {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Role::Assistant, content)
    }
}

/// First reserved token found in `s`, if any.
pub fn find_reserved(s: &str) -> Option<(usize, &'static str)> {
    RESERVED_TOKENS
        .iter()
        .filter_map(|t| s.find(t).map(|at| (at, *t)))
        .min_by_key(|(at, _)| *at)
}

/// Index of the first turn out of order, if any.
fn order_violation(turns: &[ChatTurn]) -> Option<usize> {
    let body_start = usize::from(turns.first().is_some_and(|t| t.role == Role::System));
    turns[body_start..]
        .iter()
        .enumerate()
        .find(|(i, t)| t.role != if i % 2 == 0 { Role::User } else { Role::Assistant })
        .map(|(i, _)| i + body_start)
}

/// Renders turns as a Llama 3 training string:
/// `<|begin_of_text|>` + per turn `<|start_header_id|>{role}<|end_header_id|>\n{content}<|eot_id|>\n`
/// + `<|end_of_text|>`.
pub fn render_llama(turns: &[ChatTurn]) -> Result<String, PromptError> {
    for (i, t) in turns.iter().enumerate() {
        if let Some((_, token)) = find_reserved(&t.content) {
            return Err(PromptError::ReservedTokenInContent { turn: i, token });
        }
    }
    if let Some(turn) = order_violation(turns) {
        return Err(PromptError::BadTurnOrder { turn });
    }
    let mut out = String::from(BEGIN_OF_TEXT);
    for t in turns {
        out.push_str(START_HEADER);
        out.push_str(t.role.as_str());
        out.push_str(END_HEADER);
        out.push('\n');
        out.push_str(&t.content);
        out.push_str(EOT);
        out.push('\n');
    }
    out.push_str(END_OF_TEXT);
    Ok(out)
}

/// Exact inverse of [`render_llama`]; anything outside its image is rejected.
pub fn parse_llama(rendered: &str) -> Result<Vec<ChatTurn>, PromptError> {
    let bad = PromptError::MalformedFrame;
    if !rendered.starts_with(BEGIN_OF_TEXT) {
        return Err(bad(0));
    }
    let mut pos = BEGIN_OF_TEXT.len();
    let mut turns = Vec::new();
    loop {
        let rest = &rendered[pos..];
        if rest.starts_with(END_OF_TEXT) {
            if rest.len() != END_OF_TEXT.len() {
                return Err(bad(pos + END_OF_TEXT.len()));
            }
            break;
        }
        if !rest.starts_with(START_HEADER) {
            return Err(bad(pos));
        }
        let turn_at = pos;
        pos += START_HEADER.len();
        let header_len = rendered[pos..].find(END_HEADER).ok_or(bad(pos))?;
        let role: Role = rendered[pos..pos + header_len].parse().map_err(|_| bad(pos))?;
        pos += header_len + END_HEADER.len();
        if !rendered[pos..].starts_with('\n') {
            return Err(bad(pos));
        }
        pos += 1;
        let content_len = rendered[pos..].find(EOT).ok_or(bad(pos))?;
        let content = &rendered[pos..pos + content_len];
        if let Some((at, _)) = find_reserved(content) {
            return Err(bad(pos + at));
        }
        pos += content_len + EOT.len();
        if !rendered[pos..].starts_with('\n') {
            return Err(bad(pos));
        }
        pos += 1;
        turns.push((turn_at, ChatTurn::new(role, content)));
    }
    let (offsets, turns): (Vec<usize>, Vec<ChatTurn>) = turns.into_iter().unzip();
    if let Some(i) = order_violation(&turns) {
        return Err(bad(offsets[i]));
    }
    Ok(turns)
}

/// Writes JSON with `", "` and `": "` separators, matching the answer payloads
/// models are trained to emit (`{"intent": "rec"}`).
struct SpacedFormatter;

impl serde_json::ser::Formatter for SpacedFormatter {
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        if first {
            Ok(())
        } else {
            w.write_all(b", ")
        }
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        if first {
            Ok(())
        } else {
            w.write_all(b", ")
        }
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        w.write_all(b": ")
    }
}

pub fn to_spaced_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SpacedFormatter);
    value.serialize(&mut ser).expect("in-memory serialization");
    String::from_utf8(buf).expect("serde_json writes UTF-8")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Intent,
    Entity,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingRecord {
    pub task: Task,
    pub transcript: Vec<ChatTurn>,
    pub rendered: String,
}

impl TrainingRecord {
    fn new(task: Task, system: String, prompt: &str, answer: String) -> Result<Self, PromptError> {
        if prompt.trim().is_empty() {
            return Err(PromptError::EmptyPrompt);
        }
        let transcript = vec![ChatTurn::system(system), ChatTurn::user(prompt), ChatTurn::assistant(answer)];
        let rendered = render_llama(&transcript)?;
        Ok(Self {
            task,
            transcript,
            rendered,
        })
    }

    pub fn answer(&self) -> &str {
        &self.transcript[2].content
    }
}

pub fn intent_answer(label: Intent) -> String {
    to_spaced_json(&BTreeMap::from([("intent", label.as_str())]))
}

pub fn build_intent_record(prompt: &str, label: Intent) -> Result<TrainingRecord, PromptError> {
    TrainingRecord::new(Task::Intent, INTENT_SYSTEM_PROMPT.to_owned(), prompt, intent_answer(label))
}

/// Instruction for the entity task, listing exactly `classes` in sorted order.
pub fn entity_system_prompt(classes: &BTreeSet<EntityClass>) -> String {
    let list = classes
        .iter()
        .map(|c| format!("\"{}\"", c.as_str()))
        .collect::<Vec<_>>()
        .join(", ");
    format!(
        "You will receive a User prompt about Movies. Extract the entities it mentions for the classes in list [{list}]. \
Copy each value as it appears in the prompt. Respond in json with one array of strings per class and no other text, \
for example: {{\"genre\": [\"fantasy\"], \"theme\": [\"loyalty\"]}}\n"
    )
}

pub fn entity_answer(entities: &EntityMap) -> String {
    to_spaced_json(entities)
}

pub fn build_entity_record_typed(prompt: &str, entities: &EntityMap) -> Result<TrainingRecord, PromptError> {
    for (class, values) in entities {
        if values.iter().any(|v| v.trim().is_empty()) {
            return Err(PromptError::EmptyEntityValue(*class));
        }
    }
    // The instruction always lists every class so it does not hint at the answer.
    let classes = EntityClass::ALL.into_iter().collect();
    TrainingRecord::new(Task::Entity, entity_system_prompt(&classes), prompt, entity_answer(entities))
}

/// Validates class names, then builds the entity-task record. The answer is a
/// JSON object with one array per class, keys sorted.
pub fn build_entity_record(prompt: &str, entities: &BTreeMap<String, Vec<String>>) -> Result<TrainingRecord, PromptError> {
    let mut typed = EntityMap::new();
    for (class, values) in entities {
        typed.insert(class.parse()?, values.clone());
    }
    build_entity_record_typed(prompt, &typed)
}

/// Checks an assistant payload is strict JSON in the task's answer schema.
pub fn validate_answer(task: Task, content: &str) -> Result<(), PromptError> {
    let v: Value = serde_json::from_str(content).map_err(|e| PromptError::BadAnswer(e.to_string()))?;
    let obj = v.as_object().ok_or_else(|| PromptError::BadAnswer("not an object".into()))?;
    match task {
        Task::Intent => match (obj.len(), obj.get("intent").and_then(Value::as_str)) {
            (1, Some(label)) => label.parse::<Intent>().map(|_| ()).map_err(PromptError::BadAnswer),
            _ => Err(PromptError::BadAnswer("expected exactly {\"intent\": <label>}".into())),
        },
        Task::Entity => {
            for (k, v) in obj {
                k.parse::<EntityClass>()?;
                let arr = v
                    .as_array()
                    .ok_or_else(|| PromptError::BadAnswer(format!("`{k}` is not an array")))?;
                if !arr.iter().all(|x| x.as_str().is_some_and(|s| !s.trim().is_empty())) {
                    return Err(PromptError::BadAnswer(format!("`{k}` must hold non-empty strings")));
                }
            }
            Ok(())
        }
    }
}

/// One line of a rendered training dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLine {
    pub task: Task,
    pub prompt: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label: Option<Intent>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub entities: Option<EntityMap>,
    pub rendered: String,
    pub template_id: u32,
    pub seed: BTreeMap<String, String>,
}

/// Adapter layers that may receive low-rank updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProjectionLayer {
    QProj,
    KProj,
    VProj,
    OProj,
    UpProj,
    DownProj,
    GateProj,
}

impl ProjectionLayer {
    pub const ALL: [ProjectionLayer; 7] = [
        ProjectionLayer::QProj,
        ProjectionLayer::KProj,
        ProjectionLayer::VProj,
        ProjectionLayer::OProj,
        ProjectionLayer::UpProj,
        ProjectionLayer::DownProj,
        ProjectionLayer::GateProj,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProjectionLayer::QProj => "q_proj",
            ProjectionLayer::KProj => "k_proj",
            ProjectionLayer::VProj => "v_proj",
            ProjectionLayer::OProj => "o_proj",
            ProjectionLayer::UpProj => "up_proj",
            ProjectionLayer::DownProj => "down_proj",
            ProjectionLayer::GateProj => "gate_proj",
        }
    }

    pub fn legal_names() -> Vec<&'static str> {
        Self::ALL.iter().map(|l| l.as_str()).collect()
    }
}

impl FromStr for ProjectionLayer {
    type Err = PromptError;
    fn from_str(s: &str) -> Result<Self, PromptError> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| PromptError::InvalidLayerName {
                name: s.to_owned(),
                legal: Self::legal_names(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantization {
    None,
    FourBit,
}

impl Quantization {
    pub fn as_str(self) -> &'static str {
        match self {
            Quantization::None => "none",
            Quantization::FourBit => "four_bit",
        }
    }
}

impl FromStr for Quantization {
    type Err = PromptError;
    fn from_str(s: &str) -> Result<Self, PromptError> {
        match s {
            "none" => Ok(Quantization::None),
            "four_bit" => Ok(Quantization::FourBit),
            _ => Err(PromptError::InvalidHyperparameter(format!("quantization `{s}`"))),
        }
    }
}

/// Adapter fine-tune settings. Layer names stay strings until validated by
/// [`emit_finetune_config`] so bad names surface with the legal set.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub base_model_id: String,
    pub target_layers: Vec<String>,
    pub rank: u32,
    pub alpha: f64,
    pub dropout: f64,
    pub quantization: Quantization,
}

/// Rank, alpha, dropout and quantization defaults are project choices; only the
/// target layer set has a published best value.
impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            base_model_id: "meta-llama/Llama-3.2-3B-Instruct".into(),
            target_layers: vec!["q_proj".into(), "v_proj".into(), "o_proj".into()],
            rank: 16,
            alpha: 32.0,
            dropout: 0.05,
            quantization: Quantization::FourBit,
        }
    }
}

impl FinetuneConfig {
    /// Overlays keys of a config document on the defaults.
    pub fn from_kv(doc: &KvDocument) -> Result<Self, PromptError> {
        let mut cfg = Self::default();
        if let Some(m) = doc.get("base_model") {
            cfg.base_model_id = m.to_owned();
        }
        if let Some(layers) = doc.get("target_layers") {
            cfg.target_layers = split_layers(layers);
        }
        if let Some(r) = doc.get_parsed("rank")? {
            cfg.rank = r;
        }
        if let Some(a) = doc.get_parsed("alpha")? {
            cfg.alpha = a;
        }
        if let Some(d) = doc.get_parsed("dropout")? {
            cfg.dropout = d;
        }
        if let Some(q) = doc.get("quantization") {
            cfg.quantization = q.parse()?;
        }
        Ok(cfg)
    }

    pub fn validated_layers(&self) -> Result<Vec<ProjectionLayer>, PromptError> {
        if self.target_layers.is_empty() {
            return Err(PromptError::EmptyLayerList);
        }
        let mut seen = BTreeSet::new();
        self.target_layers
            .iter()
            .map(|name| {
                let layer: ProjectionLayer = name.parse()?;
                if !seen.insert(name.as_str()) {
                    return Err(PromptError::DuplicateLayer(name.clone()));
                }
                Ok(layer)
            })
            .collect()
    }
}

pub fn split_layers(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned).collect()
}

impl fmt::Display for Quantization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Validates and serializes the config as a flat key/value document with a
/// fixed key order; layers keep their given order.
pub fn emit_finetune_config(cfg: &FinetuneConfig) -> Result<String, PromptError> {
    let layers = cfg.validated_layers()?;
    if cfg.base_model_id.trim().is_empty() {
        return Err(PromptError::InvalidHyperparameter("empty base_model".into()));
    }
    if cfg.rank == 0 {
        return Err(PromptError::InvalidHyperparameter("rank must be positive".into()));
    }
    if !(cfg.alpha.is_finite() && cfg.alpha > 0.0) {
        return Err(PromptError::InvalidHyperparameter("alpha must be positive".into()));
    }
    if !(0.0..1.0).contains(&cfg.dropout) {
        return Err(PromptError::InvalidHyperparameter("dropout must be in [0, 1)".into()));
    }
    let mut doc = KvDocument::new();
    doc.set("base_model", cfg.base_model_id.trim());
    doc.set(
        "target_layers",
        layers.iter().map(|l| l.as_str()).collect::<Vec<_>>().join(","),
    );
    doc.set("rank", cfg.rank.to_string());
    doc.set("alpha", cfg.alpha.to_string());
    doc.set("dropout", cfg.dropout.to_string());
    doc.set("quantization", cfg.quantization.as_str());
    Ok(doc.to_string())
}
