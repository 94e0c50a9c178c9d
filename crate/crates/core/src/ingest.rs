//! Corpus ingestion: loading pre-extracted documents, recursive chunk
//! splitting, table views and incremental directory sync.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::text::{char_len, sha256_hex};

/// Separator hierarchy for recursive splitting, coarsest first. The empty
/// separator means a hard character split.
pub const SEPARATORS: [&str; 5] = ["\n\n", "\n", ". ", " ", ""];

/// Joins rendered blocks when a document body is flattened to one string.
const BLOCK_JOINER: &str = "\n\n";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate doc_id: {}", .0.join(", "))]
    DuplicateDocIds(Vec<String>),
    #[error(
        "invalid chunking config: max_chunk_chars ({max}) must exceed overlap_chars ({overlap})"
    )]
    InvalidConfig { max: usize, overlap: usize },
    #[error("document {doc_id}: table block {block} is not rectangular")]
    NonRectangular { doc_id: String, block: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    #[serde(default)]
    pub header: Vec<String>,
    #[serde(default)]
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: Vec<String>, rows: Vec<Vec<String>>) -> Self {
        Self { header, rows }
    }

    pub fn column_count(&self) -> usize {
        if self.header.is_empty() {
            self.rows.first().map_or(0, Vec::len)
        } else {
            self.header.len()
        }
    }

    pub fn is_rectangular(&self) -> bool {
        let cols = self.column_count();
        self.rows.iter().all(|r| r.len() == cols)
    }

    fn header_cell(&self, col: usize) -> String {
        self.header
            .get(col)
            .cloned()
            .unwrap_or_else(|| format!("column {}", col + 1))
    }

    /// Pipe-delimited rendering with the header line first.
    pub fn render(&self) -> String {
        let mut lines = Vec::with_capacity(self.rows.len() + 1);
        if !self.header.is_empty() {
            lines.push(self.header.join(" | "));
        }
        lines.extend(self.rows.iter().map(|r| r.join(" | ")));
        lines.join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Text(String),
    Table(Table),
}

impl Block {
    fn render(&self) -> String {
        match self {
            Block::Text(t) => t.clone(),
            Block::Table(t) => t.render(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDocument {
    pub doc_id: String,
    pub title: String,
    pub blocks: Vec<Block>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl SourceDocument {
    pub fn from_text(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        let doc_id = doc_id.into();
        Self {
            title: doc_id.clone(),
            doc_id,
            blocks: vec![Block::Text(text.into())],
            metadata: BTreeMap::new(),
        }
    }

    /// The flattened body that chunk `char_span`s index into.
    pub fn body(&self) -> String {
        self.blocks
            .iter()
            .map(Block::render)
            .collect::<Vec<_>>()
            .join(BLOCK_JOINER)
    }

    /// Content digest used by directory sync.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("document serializes");
        sha256_hex(&canonical)
    }

    fn validate(&self) -> Result<(), IngestError> {
        for (i, block) in self.blocks.iter().enumerate() {
            if let Block::Table(t) = block {
                if !t.is_rectangular() {
                    return Err(IngestError::NonRectangular {
                        doc_id: self.doc_id.clone(),
                        block: i,
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkKind {
    Prose,
    Table,
    TableAggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub kind: ChunkKind,
    pub text: String,
    /// Character offsets `[start, end)` into [`SourceDocument::body`].
    pub char_span: (usize, usize),
    pub seq: u32,
    /// Set on table chunks longer than `max_chunk_chars`; tables are never split.
    #[serde(default)]
    pub oversize: bool,
}

pub fn chunk_id(doc_id: &str, seq: u32) -> String {
    format!("{doc_id}:{seq}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkingConfig {
    pub max_chunk_chars: usize,
    pub overlap_chars: usize,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self {
            max_chunk_chars: 1600,
            overlap_chars: 200,
        }
    }
}

impl ChunkingConfig {
    fn validate(&self) -> Result<(), IngestError> {
        if self.max_chunk_chars > self.overlap_chars {
            Ok(())
        } else {
            Err(IngestError::InvalidConfig {
                max: self.max_chunk_chars,
                overlap: self.overlap_chars,
            })
        }
    }
}

/// Splits a document into index-ready chunks.
///
/// Prose blocks go through recursive splitting; each table block yields a
/// whole-table chunk plus row and column aggregates. `seq` runs across the
/// whole document so chunk ids are stable for a given `(doc, cfg)`.
pub fn chunk_document(
    doc: &SourceDocument,
    cfg: &ChunkingConfig,
) -> Result<Vec<Chunk>, IngestError> {
    cfg.validate()?;
    doc.validate()?;
    let mut chunks = Vec::new();
    let mut seq = 0u32;
    let mut base = 0usize;
    for (i, block) in doc.blocks.iter().enumerate() {
        if i > 0 {
            base += char_len(BLOCK_JOINER);
        }
        let rendered = block.render();
        let len = char_len(&rendered);
        match block {
            Block::Text(text) => {
                if !text.trim().is_empty() {
                    for (start, end) in split_spans(text, cfg) {
                        chunks.push(Chunk {
                            chunk_id: chunk_id(&doc.doc_id, seq),
                            doc_id: doc.doc_id.clone(),
                            kind: ChunkKind::Prose,
                            text: char_slice(text, start, end).to_string(),
                            char_span: (base + start, base + end),
                            seq,
                            oversize: false,
                        });
                        seq += 1;
                    }
                }
            }
            Block::Table(table) => {
                let views = extract_table_views(
                    &doc.doc_id,
                    table,
                    seq,
                    (base, base + len),
                    cfg.max_chunk_chars,
                );
                seq += views.len() as u32;
                chunks.extend(views);
            }
        }
        base += len;
    }
    Ok(chunks)
}

/// Emits the whole-table chunk, then one aggregate per row and per column.
/// Tables with no rows or no columns produce only the whole-table chunk.
pub fn extract_table_views(
    doc_id: &str,
    table: &Table,
    first_seq: u32,
    span: (usize, usize),
    max_chunk_chars: usize,
) -> Vec<Chunk> {
    let mut texts = vec![(ChunkKind::Table, table.render())];
    let cols = table.column_count();
    if !table.rows.is_empty() && cols > 0 {
        for row in &table.rows {
            let pairs: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, v)| format!("{}: {}", table.header_cell(c), v))
                .collect();
            texts.push((ChunkKind::TableAggregate, pairs.join(" | ")));
        }
        for c in 0..cols {
            let cells: Vec<&str> = table.rows.iter().map(|r| r[c].as_str()).collect();
            texts.push((
                ChunkKind::TableAggregate,
                format!("{}: {}", table.header_cell(c), cells.join(" | ")),
            ));
        }
    }
    texts
        .into_iter()
        .enumerate()
        .map(|(i, (kind, text))| {
            let seq = first_seq + i as u32;
            Chunk {
                chunk_id: chunk_id(doc_id, seq),
                doc_id: doc_id.to_string(),
                kind,
                oversize: char_len(&text) > max_chunk_chars,
                text,
                char_span: span,
                seq,
            }
        })
        .collect()
}

/// Character spans of the prose chunks of `text`.
///
/// The text is first cut into pieces of at most `max - overlap` characters
/// along the separator hierarchy, the pieces are packed greedily into
/// segments that tile the text, and every chunk after the first is its segment
/// prefixed by exactly `overlap` preceding characters.
fn split_spans(text: &str, cfg: &ChunkingConfig) -> Vec<(usize, usize)> {
    let total = char_len(text);
    let (max, overlap) = (cfg.max_chunk_chars, cfg.overlap_chars);
    if total <= max {
        return vec![(0, total)];
    }
    let mut pieces = Vec::new();
    split_pieces(text, &SEPARATORS, max - overlap, &mut pieces);

    let mut segments: Vec<(usize, usize)> = Vec::new();
    let mut cursor = 0usize;
    let (mut seg_start, mut seg_len) = (0usize, 0usize);
    for piece in pieces {
        let len = char_len(piece);
        let budget = if segments.is_empty() {
            max
        } else {
            max - overlap
        };
        if seg_len > 0 && seg_len + len > budget {
            segments.push((seg_start, seg_start + seg_len));
            seg_start = cursor;
            seg_len = 0;
        }
        seg_len += len;
        cursor += len;
    }
    if seg_len > 0 {
        segments.push((seg_start, seg_start + seg_len));
    }
    segments
        .into_iter()
        .enumerate()
        .map(|(i, (s, e))| if i == 0 { (s, e) } else { (s - overlap, e) })
        .collect()
}

fn split_pieces<'a>(text: &'a str, seps: &[&str], limit: usize, out: &mut Vec<&'a str>) {
    if char_len(text) <= limit {
        out.push(text);
        return;
    }
    let Some(idx) = seps.iter().position(|s| s.is_empty() || text.contains(s)) else {
        hard_split(text, limit, out);
        return;
    };
    let sep = seps[idx];
    if sep.is_empty() {
        hard_split(text, limit, out);
        return;
    }
    for part in text.split_inclusive(sep) {
        if char_len(part) <= limit {
            out.push(part);
        } else {
            split_pieces(part, &seps[idx + 1..], limit, out);
        }
    }
}

fn hard_split<'a>(text: &'a str, limit: usize, out: &mut Vec<&'a str>) {
    let mut rest = text;
    while !rest.is_empty() {
        let cut = rest
            .char_indices()
            .nth(limit)
            .map_or(rest.len(), |(b, _)| b);
        out.push(&rest[..cut]);
        rest = &rest[cut..];
    }
}

fn char_slice(text: &str, start: usize, end: usize) -> &str {
    let byte = |n: usize| text.char_indices().nth(n).map_or(text.len(), |(b, _)| b);
    &text[byte(start)..byte(end)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    Jsonl,
    MarkdownDir,
}

impl std::str::FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(Self::Jsonl),
            "markdown-dir" | "markdown" | "md" => Ok(Self::MarkdownDir),
            other => Err(format!(
                "unknown corpus format `{other}` (expected jsonl or markdown-dir)"
            )),
        }
    }
}

/// Loads every document under `path`. A jsonl path may be a single file or a
/// directory of `*.jsonl` files; a markdown path is a directory of `*.md` files.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<SourceDocument>, IngestError> {
    let files = if path.is_file() {
        vec![path.to_path_buf()]
    } else {
        let ext = match format {
            CorpusFormat::Jsonl => "jsonl",
            CorpusFormat::MarkdownDir => "md",
        };
        list_files(path, &[ext])?
    };
    let mut docs = Vec::new();
    for file in &files {
        docs.extend(load_file(file, path)?);
    }
    check_unique(&docs)?;
    Ok(docs)
}

fn check_unique(docs: &[SourceDocument]) -> Result<(), IngestError> {
    let mut seen = BTreeSet::new();
    let mut dups = BTreeSet::new();
    for d in docs {
        if !seen.insert(d.doc_id.as_str()) {
            dups.insert(d.doc_id.clone());
        }
    }
    if dups.is_empty() {
        Ok(())
    } else {
        Err(IngestError::DuplicateDocIds(dups.into_iter().collect()))
    }
}

/// Recursively lists files with one of `exts`, sorted by path.
fn list_files(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>, IngestError> {
    let io = |source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(io)? {
            let p = entry.map_err(io)?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| exts.contains(&e))
            {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Loads one file; the format is picked from its extension. `root` anchors
/// the doc ids derived from file paths.
pub fn load_file(file: &Path, root: &Path) -> Result<Vec<SourceDocument>, IngestError> {
    let content = fs::read_to_string(file).map_err(|source| IngestError::Io {
        path: file.to_path_buf(),
        source,
    })?;
    let docs = match file.extension().and_then(|e| e.to_str()) {
        Some("md") => vec![parse_markdown(file, root, &content)?],
        _ => parse_jsonl(file, &content)?,
    };
    check_unique(&docs)?;
    Ok(docs)
}

const RESERVED_KEYS: [&str; 4] = ["doc_id", "title", "text", "body_blocks"];

fn parse_jsonl(file: &Path, content: &str) -> Result<Vec<SourceDocument>, IngestError> {
    let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("doc");
    let mut docs = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| IngestError::Malformed {
            path: file.to_path_buf(),
            line: line_no,
            message,
        };
        let value: Value = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        let Value::Object(obj) = value else {
            return Err(malformed("record is not a JSON object".into()));
        };
        let doc_id = match obj.get("doc_id") {
            Some(Value::String(s)) if !s.is_empty() => s.clone(),
            Some(_) => return Err(malformed("doc_id must be a non-empty string".into())),
            None => format!("{stem}-{line_no}"),
        };
        let mut used_context = false;
        let blocks = if let Some(raw) = obj.get("body_blocks") {
            parse_blocks(raw).map_err(malformed)?
        } else if let Some(Value::String(t)) = obj.get("text") {
            vec![Block::Text(t.clone())]
        } else if let Some(Value::String(t)) = obj.get("context") {
            used_context = true;
            vec![Block::Text(t.clone())]
        } else {
            return Err(malformed(
                "record needs a \"text\" or \"body_blocks\" field".into(),
            ));
        };
        let title = match obj.get("title") {
            Some(Value::String(s)) => s.clone(),
            _ => doc_id.clone(),
        };
        let metadata = obj
            .iter()
            .filter(|(k, _)| {
                !RESERVED_KEYS.contains(&k.as_str()) && !(used_context && *k == "context")
            })
            .map(|(k, v)| (metadata_key(k), value_to_string(v)))
            .collect();
        let doc = SourceDocument {
            doc_id,
            title,
            blocks,
            metadata,
        };
        doc.validate().map_err(|e| malformed(e.to_string()))?;
        docs.push(doc);
    }
    Ok(docs)
}

/// Metadata keys are kept verbatim, except the QA-record alias `filed on`.
fn metadata_key(key: &str) -> String {
    if key == "filed on" {
        "filed_on".to_string()
    } else {
        key.to_string()
    }
}

fn value_to_string(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn parse_blocks(raw: &Value) -> Result<Vec<Block>, String> {
    let Value::Array(items) = raw else {
        return Err("body_blocks must be an array".into());
    };
    items
        .iter()
        .enumerate()
        .map(|(i, item)| match item {
            Value::String(s) => Ok(Block::Text(s.clone())),
            Value::Object(o) if o.contains_key("table") => {
                serde_json::from_value::<Table>(o["table"].clone())
                    .map(Block::Table)
                    .map_err(|e| format!("body_blocks[{i}]: bad table: {e}"))
            }
            Value::Object(o) => match o.get("text") {
                Some(Value::String(s)) => Ok(Block::Text(s.clone())),
                _ => Err(format!("body_blocks[{i}]: expected text or table block")),
            },
            _ => Err(format!("body_blocks[{i}]: expected string or object")),
        })
        .collect()
}

fn parse_markdown(file: &Path, root: &Path, content: &str) -> Result<SourceDocument, IngestError> {
    let rel = file.strip_prefix(root).unwrap_or(file);
    let doc_id = rel
        .with_extension("")
        .to_string_lossy()
        .replace(std::path::MAIN_SEPARATOR, "/");
    let doc_id = if doc_id.is_empty() {
        file.file_stem()
            .map_or_else(|| "doc".into(), |s| s.to_string_lossy().into_owned())
    } else {
        doc_id
    };

    let lines: Vec<&str> = content.lines().collect();
    let mut metadata = BTreeMap::new();
    let mut i = 0;
    if lines.first().map(|l| l.trim()) == Some("---") {
        if let Some(end) = lines.iter().skip(1).position(|l| l.trim() == "---") {
            for l in &lines[1..=end] {
                if let Some((k, v)) = l.split_once(':') {
                    metadata.insert(metadata_key(k.trim()), v.trim().to_string());
                }
            }
            i = end + 2;
        }
    }

    let mut title = None;
    let mut blocks = Vec::new();
    let mut prose: Vec<&str> = Vec::new();
    let flush = |prose: &mut Vec<&str>, blocks: &mut Vec<Block>| {
        let text = prose.join("\n");
        let text = text.trim_matches('\n');
        if !text.trim().is_empty() {
            blocks.push(Block::Text(text.to_string()));
        }
        prose.clear();
    };
    while i < lines.len() {
        let line = lines[i];
        if title.is_none() && line.starts_with("# ") {
            title = Some(line[2..].trim().to_string());
            i += 1;
            continue;
        }
        let is_table_start = line.trim_start().starts_with('|')
            && lines.get(i + 1).is_some_and(|next| is_separator_row(next));
        if is_table_start {
            flush(&mut prose, &mut blocks);
            let header = split_row(line);
            let start_line = i + 1;
            i += 2;
            let mut rows = Vec::new();
            while i < lines.len() && lines[i].trim_start().starts_with('|') {
                rows.push(split_row(lines[i]));
                i += 1;
            }
            let table = Table::new(header, rows);
            if !table.is_rectangular() {
                return Err(IngestError::Malformed {
                    path: file.to_path_buf(),
                    line: start_line,
                    message: "table rows differ in column count".into(),
                });
            }
            blocks.push(Block::Table(table));
            continue;
        }
        prose.push(line);
        i += 1;
    }
    flush(&mut prose, &mut blocks);

    Ok(SourceDocument {
        title: title.unwrap_or_else(|| doc_id.clone()),
        doc_id,
        blocks,
        metadata,
    })
}

fn is_separator_row(line: &str) -> bool {
    let t = line.trim();
    t.starts_with('|') && t.contains('-') && t.chars().all(|c| matches!(c, '|' | '-' | ':' | ' '))
}

fn split_row(line: &str) -> Vec<String> {
    let t = line.trim();
    let t = t.strip_prefix('|').unwrap_or(t);
    let t = t.strip_suffix('|').unwrap_or(t);
    t.split('|').map(|c| c.trim().to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub doc_id: String,
    pub digest: String,
    pub ingested_at: String,
}

/// Previously ingested documents and their content digests.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: BTreeMap<String, ManifestEntry>,
}

impl Manifest {
    /// Reads a jsonl manifest; a missing file is an empty manifest.
    pub fn read(path: &Path) -> Result<Self, IngestError> {
        let content = match fs::read_to_string(path) {
            Ok(c) => c,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Self::default()),
            Err(source) => {
                return Err(IngestError::Io {
                    path: path.to_path_buf(),
                    source,
                })
            }
        };
        let mut entries = BTreeMap::new();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: ManifestEntry =
                serde_json::from_str(line).map_err(|e| IngestError::Malformed {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
            entries.insert(e.doc_id.clone(), e);
        }
        Ok(Self { entries })
    }

    pub fn write(&self, path: &Path) -> Result<(), IngestError> {
        let mut out = String::new();
        for e in self.entries.values() {
            out.push_str(&serde_json::to_string(e).expect("manifest entry serializes"));
            out.push('\n');
        }
        fs::write(path, out).map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeSet {
    pub added: Vec<String>,
    pub removed: Vec<String>,
    pub modified: Vec<String>,
}

impl ChangeSet {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.modified.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct SyncReport {
    pub changes: ChangeSet,
    pub skipped: Vec<SkippedFile>,
    /// Documents to (re-)index: everything in `added` and `modified`.
    pub documents: Vec<SourceDocument>,
    /// Manifest describing the directory after the changes are applied.
    pub manifest: Manifest,
}

/// Diffs the documents under `dir` against `previous` by content digest.
///
/// Files that cannot be read or parsed are reported in `skipped` and their
/// documents are left out of the diff entirely (neither added nor removed).
pub fn sync_corpus(dir: &Path, previous: &Manifest) -> Result<SyncReport, IngestError> {
    let files = list_files(dir, &["jsonl", "md"])?;
    let mut current: BTreeMap<String, SourceDocument> = BTreeMap::new();
    let mut skipped = Vec::new();
    let mut shielded: BTreeSet<String> = BTreeSet::new();
    for file in files {
        match load_file(&file, dir) {
            Ok(docs) => {
                if let Some(dup) = docs.iter().find(|d| current.contains_key(&d.doc_id)) {
                    skipped.push(SkippedFile {
                        path: file,
                        reason: format!("duplicate doc_id {}", dup.doc_id),
                    });
                    continue;
                }
                for d in docs {
                    current.insert(d.doc_id.clone(), d);
                }
            }
            Err(e) => {
                // a broken file must not look like a deletion of what it held
                if file.extension().is_some_and(|e| e == "md") {
                    shielded.insert(doc_id_for_markdown(&file, dir));
                }
                skipped.push(SkippedFile {
                    path: file,
                    reason: e.to_string(),
                });
            }
        }
    }

    let now = chrono::Utc::now().to_rfc3339();
    let mut changes = ChangeSet::default();
    let mut documents = Vec::new();
    let mut manifest = Manifest::default();
    for (id, doc) in &current {
        let digest = doc.digest();
        let entry = match previous.entries.get(id) {
            None => {
                changes.added.push(id.clone());
                documents.push(doc.clone());
                ManifestEntry {
                    doc_id: id.clone(),
                    digest,
                    ingested_at: now.clone(),
                }
            }
            Some(prev) if prev.digest != digest => {
                changes.modified.push(id.clone());
                documents.push(doc.clone());
                ManifestEntry {
                    doc_id: id.clone(),
                    digest,
                    ingested_at: now.clone(),
                }
            }
            Some(prev) => prev.clone(),
        };
        manifest.entries.insert(id.clone(), entry);
    }
    for (id, prev) in &previous.entries {
        if current.contains_key(id) {
            continue;
        }
        if shielded.contains(id) {
            manifest.entries.insert(id.clone(), prev.clone());
        } else {
            changes.removed.push(id.clone());
        }
    }
    Ok(SyncReport {
        changes,
        skipped,
        documents,
        manifest,
    })
}

fn doc_id_for_markdown(file: &Path, root: &Path) -> String {
    file.strip_prefix(root)
        .unwrap_or(file)
        .with_extension("")
        .to_string_lossy()
        .replace(std::path::MAIN_SEPARATOR, "/")
}
