//! Ingest heterogeneous movie/TV source files into canonical, deduplicated records.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::kv::{KvDocument, KvError};
use crate::text::{collapse_whitespace, fold};

pub const MIN_YEAR: i32 = 1870;
pub const MAX_YEAR: i32 = 2100;

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("source has no header row")]
    MissingHeader,
    #[error("field `{field}` is mapped to column `{column}`, which is not in the header")]
    MappingMismatch { field: CanonicalField, column: String },
    #[error("record `{0}` has an empty title after normalization")]
    EmptyTitle(String),
    #[error("invalid source descriptor: {0}")]
    InvalidDescriptor(String),
    #[error(transparent)]
    Config(#[from] KvError),
    #[error("catalog line {line}: {message}")]
    BadCatalogLine { line: usize, message: String },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CanonicalField {
    Title,
    Year,
    Genres,
    Cast,
    Directors,
    Plot,
    Themes,
}

impl CanonicalField {
    pub const ALL: [CanonicalField; 7] = [
        CanonicalField::Title,
        CanonicalField::Year,
        CanonicalField::Genres,
        CanonicalField::Cast,
        CanonicalField::Directors,
        CanonicalField::Plot,
        CanonicalField::Themes,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CanonicalField::Title => "title",
            CanonicalField::Year => "year",
            CanonicalField::Genres => "genres",
            CanonicalField::Cast => "cast",
            CanonicalField::Directors => "directors",
            CanonicalField::Plot => "plot",
            CanonicalField::Themes => "themes",
        }
    }
}

impl fmt::Display for CanonicalField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CanonicalField {
    type Err = CatalogError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| CatalogError::InvalidDescriptor(format!("unknown canonical field `{s}`")))
    }
}

/// Column layout of one source file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceDescriptor {
    source_id: String,
    field_mapping: BTreeMap<CanonicalField, String>,
    list_delimiter: char,
    field_delimiter: u8,
}

impl SourceDescriptor {
    /// Comma-separated cells, `,` as the multi-value delimiter.
    pub fn new(
        source_id: impl Into<String>,
        field_mapping: BTreeMap<CanonicalField, String>,
    ) -> Result<Self, CatalogError> {
        let source_id = source_id.into();
        if source_id.trim().is_empty() {
            return Err(CatalogError::InvalidDescriptor("empty source_id".into()));
        }
        if !field_mapping.contains_key(&CanonicalField::Title) {
            return Err(CatalogError::InvalidDescriptor(format!(
                "source `{source_id}` does not map the title field"
            )));
        }
        Ok(Self {
            source_id,
            field_mapping,
            list_delimiter: ',',
            field_delimiter: b',',
        })
    }

    pub fn with_list_delimiter(mut self, c: char) -> Self {
        self.list_delimiter = c;
        self
    }

    /// Cell separator of the file itself (`,` for CSV, `\t` for TSV).
    pub fn with_field_delimiter(mut self, b: u8) -> Self {
        self.field_delimiter = b;
        self
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn list_delimiter(&self) -> char {
        self.list_delimiter
    }

    pub fn column(&self, field: CanonicalField) -> Option<&str> {
        self.field_mapping.get(&field).map(String::as_str)
    }
}

/// One source file named in a sources config document.
#[derive(Debug, Clone)]
pub struct SourceEntry {
    pub descriptor: SourceDescriptor,
    pub path: PathBuf,
}

/// Reads `source.<id>.*` keys:
///
/// ```text
/// source.tmdb.path = tmdb.csv
/// source.tmdb.delimiter = tab
/// source.tmdb.list_delimiter = |
/// source.tmdb.field.title = original_title
/// ```
///
/// Relative paths resolve against `base_dir`. Sources come back sorted by id.
pub fn sources_from_kv(doc: &KvDocument, base_dir: &Path) -> Result<Vec<SourceEntry>, CatalogError> {
    let mut grouped: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
    for (rest, value) in doc.with_prefix("source.") {
        let (id, key) = rest.split_once('.').ok_or_else(|| {
            CatalogError::InvalidDescriptor(format!("malformed key `source.{rest}`"))
        })?;
        grouped
            .entry(id.to_owned())
            .or_default()
            .push((key.to_owned(), value.to_owned()));
    }
    if grouped.is_empty() {
        return Err(CatalogError::InvalidDescriptor("no `source.<id>.*` keys found".into()));
    }
    let mut out = Vec::new();
    for (id, keys) in grouped {
        let mut mapping = BTreeMap::new();
        let mut path = None;
        let mut list_delim = ',';
        let mut field_delim = b',';
        for (key, value) in keys {
            match key.as_str() {
                "path" => path = Some(base_dir.join(&value)),
                "list_delimiter" => list_delim = parse_single_char(&id, &value)?,
                "delimiter" => {
                    let c = parse_single_char(&id, &value)?;
                    if !c.is_ascii() {
                        return Err(CatalogError::InvalidDescriptor(format!(
                            "source `{id}`: delimiter must be ASCII"
                        )));
                    }
                    field_delim = c as u8;
                }
                other => match other.strip_prefix("field.") {
                    Some(field) => {
                        mapping.insert(field.parse()?, value);
                    }
                    None => {
                        return Err(CatalogError::InvalidDescriptor(format!(
                            "source `{id}`: unknown key `{other}`"
                        )))
                    }
                },
            }
        }
        let path = path.ok_or_else(|| {
            CatalogError::InvalidDescriptor(format!("source `{id}` has no path"))
        })?;
        let descriptor = SourceDescriptor::new(id, mapping)?
            .with_list_delimiter(list_delim)
            .with_field_delimiter(field_delim);
        out.push(SourceEntry { descriptor, path });
    }
    Ok(out)
}

fn parse_single_char(id: &str, value: &str) -> Result<char, CatalogError> {
    if value == "tab" || value == "\\t" {
        return Ok('\t');
    }
    let mut chars = value.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => Ok(c),
        _ => Err(CatalogError::InvalidDescriptor(format!(
            "source `{id}`: expected a single character, got `{value}`"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaRecord {
    pub record_id: String,
    pub title: String,
    #[serde(default)]
    pub year: Option<i32>,
    #[serde(default)]
    pub genres: BTreeSet<String>,
    #[serde(default)]
    pub cast: Vec<String>,
    #[serde(default)]
    pub directors: Vec<String>,
    #[serde(default)]
    pub plot: Option<String>,
    #[serde(default)]
    pub themes: BTreeSet<String>,
    pub source_id: String,
}

impl MediaRecord {
    pub fn new(record_id: impl Into<String>, title: impl Into<String>, source_id: impl Into<String>) -> Self {
        Self {
            record_id: record_id.into(),
            title: title.into(),
            year: None,
            genres: BTreeSet::new(),
            cast: Vec::new(),
            directors: Vec::new(),
            plot: None,
            themes: BTreeSet::new(),
            source_id: source_id.into(),
        }
    }

    /// Merge key: case-folded, whitespace-collapsed title plus year.
    pub fn merge_key(&self) -> (String, Option<i32>) {
        (fold(&self.title), self.year)
    }
}

/// A data row that could not be fully ingested. `fatal` rows produced no record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowIssue {
    /// 1-based data row number (the header is not counted).
    pub row: usize,
    pub field: Option<CanonicalField>,
    pub reason: String,
    pub fatal: bool,
}

/// Parses one delimited source. Per-row problems become [`RowIssue`]s; only a
/// missing header or a mapping that names absent columns aborts the parse.
pub fn parse_catalog<R: Read>(
    raw: R,
    desc: &SourceDescriptor,
) -> Result<(Vec<MediaRecord>, Vec<RowIssue>), CatalogError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(desc.field_delimiter)
        .quote(b'"')
        .has_headers(true)
        .flexible(true)
        .from_reader(raw);

    let header: Vec<String> = match reader.headers() {
        Ok(h) if !h.is_empty() && !(h.len() == 1 && h[0].trim().is_empty()) => h
            .iter()
            .map(|c| c.trim_start_matches('\u{feff}').trim().to_owned())
            .collect(),
        _ => return Err(CatalogError::MissingHeader),
    };

    let mut columns: BTreeMap<CanonicalField, usize> = BTreeMap::new();
    for (field, column) in &desc.field_mapping {
        let idx = header
            .iter()
            .position(|h| h == column.trim())
            .ok_or_else(|| CatalogError::MappingMismatch {
                field: *field,
                column: column.clone(),
            })?;
        columns.insert(*field, idx);
    }

    let mut records = Vec::new();
    let mut issues = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                issues.push(RowIssue {
                    row: row_no,
                    field: None,
                    reason: format!("unreadable row: {e}"),
                    fatal: true,
                });
                continue;
            }
        };
        let cell = |field: CanonicalField| -> &str {
            columns
                .get(&field)
                .and_then(|&idx| row.get(idx))
                .unwrap_or("")
                .trim()
        };

        let title = collapse_whitespace(cell(CanonicalField::Title));
        if title.is_empty() {
            issues.push(RowIssue {
                row: row_no,
                field: Some(CanonicalField::Title),
                reason: "missing or empty title".into(),
                fatal: true,
            });
            continue;
        }

        let mut rec = MediaRecord::new(format!("{}:{row_no}", desc.source_id), title, &desc.source_id);
        let year_cell = cell(CanonicalField::Year);
        if !year_cell.is_empty() {
            match parse_year(year_cell) {
                Some(y) if (MIN_YEAR..=MAX_YEAR).contains(&y) => rec.year = Some(y),
                Some(y) => issues.push(RowIssue {
                    row: row_no,
                    field: Some(CanonicalField::Year),
                    reason: format!("year {y} outside [{MIN_YEAR}, {MAX_YEAR}]; dropped"),
                    fatal: false,
                }),
                None => issues.push(RowIssue {
                    row: row_no,
                    field: Some(CanonicalField::Year),
                    reason: format!("unparsed year `{year_cell}`; dropped"),
                    fatal: false,
                }),
            }
        }
        let split = |field| split_list(cell(field), desc.list_delimiter);
        rec.genres = split(CanonicalField::Genres).into_iter().collect();
        rec.themes = split(CanonicalField::Themes).into_iter().collect();
        rec.cast = split(CanonicalField::Cast);
        rec.directors = split(CanonicalField::Directors);
        let plot = cell(CanonicalField::Plot);
        if !plot.is_empty() {
            rec.plot = Some(plot.to_owned());
        }
        match normalize_record(rec) {
            Ok(r) => records.push(r),
            Err(e) => issues.push(RowIssue {
                row: row_no,
                field: Some(CanonicalField::Title),
                reason: e.to_string(),
                fatal: true,
            }),
        }
    }
    Ok((records, issues))
}

/// Accepts a bare integer year or an ISO date starting with one (`1994-07-06`).
fn parse_year(cell: &str) -> Option<i32> {
    if let Ok(y) = cell.parse::<i32>() {
        return Some(y);
    }
    let head = cell.split(['-', '/']).next()?;
    if head.len() == 4 && cell.len() > 4 {
        return head.parse().ok();
    }
    None
}

fn split_list(cell: &str, delim: char) -> Vec<String> {
    cell.split(delim)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Collapses title whitespace, case-folds genres and themes, trims names.
/// Idempotent.
pub fn normalize_record(r: MediaRecord) -> Result<MediaRecord, CatalogError> {
    let title = collapse_whitespace(&r.title);
    if title.is_empty() {
        return Err(CatalogError::EmptyTitle(r.record_id));
    }
    let fold_set = |set: BTreeSet<String>| -> BTreeSet<String> {
        set.iter().map(|g| fold(g)).filter(|g| !g.is_empty()).collect()
    };
    let names = |list: Vec<String>| -> Vec<String> {
        let mut seen = HashSet::new();
        list.iter()
            .map(|n| collapse_whitespace(n))
            .filter(|n| !n.is_empty() && seen.insert(n.clone()))
            .collect()
    };
    Ok(MediaRecord {
        record_id: r.record_id,
        title,
        year: r.year.filter(|y| (MIN_YEAR..=MAX_YEAR).contains(y)),
        genres: fold_set(r.genres),
        cast: names(r.cast),
        directors: names(r.directors),
        plot: r.plot.map(|p| p.trim().to_owned()).filter(|p| !p.is_empty()),
        themes: fold_set(r.themes),
        source_id: r.source_id,
    })
}

/// Merges records sharing (case-folded title, year) across sources.
///
/// Output is sorted by folded title, then year (absent years first). A merged
/// record keeps the smallest member `record_id`, the union of all list fields
/// and the longest plot; its `source_id` lists member sources joined by `+`.
/// The result does not depend on the order of the inputs.
pub fn merge_catalogs(catalogs: &[Vec<MediaRecord>]) -> Vec<MediaRecord> {
    let mut groups: BTreeMap<(String, Option<i32>), Vec<MediaRecord>> = BTreeMap::new();
    for rec in catalogs.iter().flatten() {
        let Ok(rec) = normalize_record(rec.clone()) else {
            continue;
        };
        groups.entry(rec.merge_key()).or_default().push(rec);
    }

    let mut used_ids: HashSet<String> = HashSet::new();
    let mut out = Vec::with_capacity(groups.len());
    for (_, mut members) in groups {
        members.sort_by(|a, b| {
            (&a.record_id, &a.source_id, &a.title, &a.plot).cmp(&(&b.record_id, &b.source_id, &b.title, &b.plot))
        });
        let mut merged = members[0].clone();
        for other in &members[1..] {
            merged.genres.extend(other.genres.iter().cloned());
            merged.themes.extend(other.themes.iter().cloned());
            for name in &other.cast {
                if !merged.cast.contains(name) {
                    merged.cast.push(name.clone());
                }
            }
            for name in &other.directors {
                if !merged.directors.contains(name) {
                    merged.directors.push(name.clone());
                }
            }
            merged.plot = match (merged.plot.take(), &other.plot) {
                (Some(a), Some(b)) if b.len() > a.len() || (b.len() == a.len() && *b < a) => Some(b.clone()),
                (Some(a), _) => Some(a),
                (None, b) => b.clone(),
            };
        }
        let sources: BTreeSet<&str> = members.iter().map(|m| m.source_id.as_str()).collect();
        merged.source_id = sources.into_iter().collect::<Vec<_>>().join("+");

        let base = merged.record_id.clone();
        let mut id = base.clone();
        let mut n = 2;
        while !used_ids.insert(id.clone()) {
            id = format!("{base}#{n}");
            n += 1;
        }
        merged.record_id = id;
        out.push(merged);
    }
    out
}

/// Writes a catalog as JSON lines, one record per line.
pub fn write_catalog<W: Write>(mut w: W, records: &[MediaRecord]) -> Result<(), CatalogError> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_catalog<R: BufRead>(r: R) -> Result<Vec<MediaRecord>, CatalogError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MediaRecord = serde_json::from_str(&line).map_err(|e| CatalogError::BadCatalogLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(normalize_record(rec)?);
    }
    Ok(out)
}
