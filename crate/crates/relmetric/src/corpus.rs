//! Corpus ingestion: tokenization, the canonical line-delimited record
//! format, adapters for the two public corpus layouts, dependency-parse
//! sidecars, and deterministic k-fold assignment.
//!
//! Canonical format: one JSON object per line with fields
//!   id        string (optional; line number used when absent)
//!   text      string
//!   tokens    optional array of [char_start, char_end) pairs
//!   entities  array of {type, char_start, char_end}
//!   relations array of {subject, object, predicate} where subject/object
//!             index into the entities array
//!
//! Dependency sidecar: one block per sentence in corpus order, blank-line
//! separated. A non-empty block has exactly n−1 rows `head dep tag` with
//! 0-based token indices (a tree over n tokens); `#` lines are comments.
//! An empty block means "no parse" and yields zero edges.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One token: surface plus [start, end) character offsets into the text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Entity annotation after token alignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanEntity {
    pub etype: String,
    pub char_start: usize,
    pub char_end: usize,
    pub tok_start: usize,
    pub tok_end: usize,
}

/// Directed relation between entities of one sentence, by entity index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationAnn {
    pub subject: usize,
    pub object: usize,
    pub predicate: String,
}

/// Undirected dependency edge with its syntactic tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepEdge {
    pub head: usize,
    pub dep: usize,
    pub tag: String,
}

/// A fully ingested sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceExample {
    pub id: String,
    pub text: String,
    pub tokens: Vec<Token>,
    pub entities: Vec<SpanEntity>,
    pub relations: Vec<RelationAnn>,
    #[serde(default)]
    pub dep_edges: Vec<DepEdge>,
}

impl SentenceExample {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Supported input layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Canonical,
    Conll04,
    Ade,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical" => Ok(CorpusFormat::Canonical),
            "conll04" => Ok(CorpusFormat::Conll04),
            "ade" => Ok(CorpusFormat::Ade),
            other => Err(Error::config(format!(
                "unknown corpus format '{}' (expected canonical, conll04, or ade)",
                other
            ))),
        }
    }
}

/// What to do when a single record cannot be ingested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OnRecordError {
    #[default]
    Abort,
    SkipAndLog,
}

// ---- tokenization ----------------------------------------------------

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
}

/// Splits on whitespace, then peels leading and trailing punctuation
/// characters into their own tokens. Offsets are character (not byte)
/// positions, so surfaces plus gaps reconstruct the text exactly.
pub fn tokenize(text: &str) -> Result<Vec<Token>> {
    if text.trim().is_empty() {
        return Err(Error::ingest("cannot tokenize empty text"));
    }
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let end = i;
        // Leading punctuation, one token per character.
        let mut a = start;
        while a < end && is_punct(chars[a]) {
            push_token(&mut tokens, &chars, a, a + 1);
            a += 1;
        }
        // Trailing punctuation run (emitted after the core).
        let mut b = end;
        while b > a && is_punct(chars[b - 1]) {
            b -= 1;
        }
        if a < b {
            push_token(&mut tokens, &chars, a, b);
        }
        for p in b..end {
            push_token(&mut tokens, &chars, p, p + 1);
        }
    }
    Ok(tokens)
}

fn push_token(tokens: &mut Vec<Token>, chars: &[char], start: usize, end: usize) {
    tokens.push(Token {
        text: chars[start..end].iter().collect(),
        start,
        end,
    });
}

/// Maps a character span onto a token span. Exact boundary matches are
/// required unless `repair` is set, in which case the span is extended to
/// the covering tokens with a logged warning.
pub fn align_span(
    tokens: &[Token],
    char_start: usize,
    char_end: usize,
    repair: bool,
) -> Result<(usize, usize)> {
    if char_start >= char_end {
        return Err(Error::ingest(format!(
            "empty entity span {}..{}",
            char_start, char_end
        )));
    }
    let mut first = None;
    let mut last = None;
    for (i, t) in tokens.iter().enumerate() {
        if t.end > char_start && t.start < char_end {
            if first.is_none() {
                first = Some(i);
            }
            last = Some(i);
        }
    }
    let (Some(a), Some(b)) = (first, last) else {
        return Err(Error::ingest(format!(
            "entity span {}..{} covers no token",
            char_start, char_end
        )));
    };
    let exact = tokens[a].start == char_start && tokens[b].end == char_end;
    if !exact {
        if !repair {
            return Err(Error::ingest(format!(
                "entity span {}..{} does not align to token boundaries",
                char_start, char_end
            )));
        }
        log::warn!(
            "entity span {}..{} extended to covering tokens {}..{}",
            char_start,
            char_end,
            tokens[a].start,
            tokens[b].end
        );
    }
    Ok((a, b))
}

// ---- canonical format --------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct RawEntity {
    #[serde(rename = "type")]
    etype: String,
    char_start: usize,
    char_end: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    #[serde(default)]
    id: Option<String>,
    text: String,
    #[serde(default)]
    tokens: Option<Vec<(usize, usize)>>,
    #[serde(default)]
    entities: Vec<RawEntity>,
    #[serde(default)]
    relations: Vec<RelationAnn>,
}

fn record_to_example(raw: RawRecord, fallback_id: String, repair: bool) -> Result<SentenceExample> {
    let id = raw.id.unwrap_or(fallback_id);
    let chars: Vec<char> = raw.text.chars().collect();
    let tokens = match raw.tokens {
        Some(spans) => {
            let mut ts = Vec::with_capacity(spans.len());
            let mut prev_end = 0;
            for (s, e) in spans {
                if s >= e || e > chars.len() || s < prev_end {
                    return Err(Error::ingest(format!(
                        "record {}: bad token span {}..{}",
                        id, s, e
                    )));
                }
                prev_end = e;
                ts.push(Token {
                    text: chars[s..e].iter().collect(),
                    start: s,
                    end: e,
                });
            }
            if ts.is_empty() {
                return Err(Error::ingest(format!("record {}: no tokens", id)));
            }
            ts
        }
        None => tokenize(&raw.text)
            .map_err(|e| Error::ingest(format!("record {}: {}", id, e)))?,
    };
    let mut entities = Vec::with_capacity(raw.entities.len());
    for ent in raw.entities {
        let (a, b) = align_span(&tokens, ent.char_start, ent.char_end, repair)
            .map_err(|e| Error::ingest(format!("record {}: {}", id, e)))?;
        entities.push(SpanEntity {
            etype: ent.etype,
            char_start: tokens[a].start,
            char_end: tokens[b].end,
            tok_start: a,
            tok_end: b,
        });
    }
    for rel in &raw.relations {
        if rel.subject >= entities.len() || rel.object >= entities.len() {
            return Err(Error::ingest(format!(
                "record {}: relation references entity index {} of {}",
                id,
                rel.subject.max(rel.object),
                entities.len()
            )));
        }
    }
    Ok(SentenceExample {
        id,
        text: raw.text,
        tokens,
        entities,
        relations: raw.relations,
        dep_edges: Vec::new(),
    })
}

/// Reads a corpus file in the declared format.
pub fn parse_corpus(path: &Path, format: CorpusFormat, on_error: OnRecordError) -> Result<Vec<SentenceExample>> {
    let content = fs::read_to_string(path)
        .map_err(|e| Error::ingest(format!("cannot read {}: {}", path.display(), e)))?;
    parse_corpus_str(&content, format, on_error)
}

pub fn parse_corpus_str(
    content: &str,
    format: CorpusFormat,
    on_error: OnRecordError,
) -> Result<Vec<SentenceExample>> {
    match format {
        CorpusFormat::Canonical => parse_canonical(content, on_error),
        CorpusFormat::Conll04 => parse_conll04(content, on_error),
        CorpusFormat::Ade => parse_ade(content, on_error),
    }
}

fn handle_record_error(err: Error, on_error: OnRecordError) -> Result<()> {
    match on_error {
        OnRecordError::Abort => Err(err),
        OnRecordError::SkipAndLog => {
            log::warn!("skipping record: {}", err);
            Ok(())
        }
    }
}

fn parse_canonical(content: &str, on_error: OnRecordError) -> Result<Vec<SentenceExample>> {
    let mut out = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                handle_record_error(
                    Error::ingest(format!("line {}: {}", lineno + 1, e)),
                    on_error,
                )?;
                continue;
            }
        };
        match record_to_example(raw, format!("line-{}", lineno + 1), true) {
            Ok(ex) => out.push(ex),
            Err(e) => handle_record_error(e, on_error)?,
        }
    }
    Ok(out)
}

/// Writes examples back out in canonical form (tokens included).
pub fn write_canonical(examples: &[SentenceExample], path: &Path) -> Result<()> {
    let mut buf = String::new();
    for ex in examples {
        let raw = RawRecord {
            id: Some(ex.id.clone()),
            text: ex.text.clone(),
            tokens: Some(ex.tokens.iter().map(|t| (t.start, t.end)).collect()),
            entities: ex
                .entities
                .iter()
                .map(|e| RawEntity {
                    etype: e.etype.clone(),
                    char_start: e.char_start,
                    char_end: e.char_end,
                })
                .collect(),
            relations: ex.relations.clone(),
        };
        buf.push_str(&serde_json::to_string(&raw).expect("serializable record"));
        buf.push('\n');
    }
    fs::write(path, buf)?;
    Ok(())
}

// ---- CoNLL04 adapter ---------------------------------------------------

/// The public CoNLL04 layout: per sentence, one block of 9-column token
/// rows (`sent tag row O POS word O O O`), a blank line, relation rows
/// (`arg1 arg2 type`), and another blank line. Multi-token entities appear
/// as a single row whose word field joins surfaces with `/`; `COMMA`
/// escapes a literal comma.
fn parse_conll04(content: &str, on_error: OnRecordError) -> Result<Vec<SentenceExample>> {
    let mut out = Vec::new();
    let mut lines = content.lines().peekable();
    let mut sent_no = 0;
    while lines.peek().is_some() {
        // Token rows until a blank line.
        let mut rows: Vec<(String, Vec<String>)> = Vec::new(); // (etype, surfaces)
        for line in lines.by_ref() {
            let line = line.trim_end();
            if line.is_empty() {
                break;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() < 6 {
                handle_record_error(
                    Error::ingest(format!(
                        "conll04 sentence {}: token row has {} columns",
                        sent_no,
                        cols.len()
                    )),
                    on_error,
                )?;
                continue;
            }
            let etype = cols[1].to_string();
            let surfaces: Vec<String> = cols[5]
                .split('/')
                .map(|w| if w == "COMMA" { ",".to_string() } else { w.to_string() })
                .collect();
            rows.push((etype, surfaces));
        }
        if rows.is_empty() {
            continue;
        }
        // Relation rows until the next blank line (or EOF).
        let mut rels: Vec<(usize, usize, String)> = Vec::new();
        for line in lines.by_ref() {
            let line = line.trim_end();
            if line.is_empty() {
                break;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 3 {
                handle_record_error(
                    Error::ingest(format!(
                        "conll04 sentence {}: relation row '{}'",
                        sent_no, line
                    )),
                    on_error,
                )?;
                continue;
            }
            let (Ok(a), Ok(b)) = (cols[0].parse::<usize>(), cols[1].parse::<usize>()) else {
                handle_record_error(
                    Error::ingest(format!(
                        "conll04 sentence {}: bad relation indices '{}'",
                        sent_no, line
                    )),
                    on_error,
                )?;
                continue;
            };
            rels.push((a, b, cols[2].to_string()));
        }

        match conll04_block_to_example(sent_no, &rows, &rels) {
            Ok(ex) => out.push(ex),
            Err(e) => handle_record_error(e, on_error)?,
        }
        sent_no += 1;
    }
    Ok(out)
}

fn conll04_block_to_example(
    sent_no: usize,
    rows: &[(String, Vec<String>)],
    rels: &[(usize, usize, String)],
) -> Result<SentenceExample> {
    // Rebuild text with single spaces; record char offsets as we go.
    let mut text = String::new();
    let mut tokens = Vec::new();
    let mut entities = Vec::new();
    let mut row_entity: HashMap<usize, usize> = HashMap::new();
    let mut cursor = 0usize; // char offset
    for (row_idx, (etype, surfaces)) in rows.iter().enumerate() {
        let tok_start = tokens.len();
        for s in surfaces {
            if !text.is_empty() {
                text.push(' ');
                cursor += 1;
            }
            let start = cursor;
            text.push_str(s);
            cursor += s.chars().count();
            tokens.push(Token {
                text: s.clone(),
                start,
                end: cursor,
            });
        }
        let tok_end = tokens.len() - 1;
        if etype != "O" {
            row_entity.insert(row_idx, entities.len());
            entities.push(SpanEntity {
                etype: etype.clone(),
                char_start: tokens[tok_start].start,
                char_end: tokens[tok_end].end,
                tok_start,
                tok_end,
            });
        }
    }
    let mut relations = Vec::new();
    for (a, b, pred) in rels {
        let (Some(&sa), Some(&sb)) = (row_entity.get(a), row_entity.get(b)) else {
            return Err(Error::ingest(format!(
                "conll04 sentence {}: relation ({}, {}, {}) references a non-entity row",
                sent_no, a, b, pred
            )));
        };
        relations.push(RelationAnn {
            subject: sa,
            object: sb,
            predicate: pred.clone(),
        });
    }
    Ok(SentenceExample {
        id: format!("conll04-{}", sent_no),
        text,
        tokens,
        entities,
        relations,
        dep_edges: Vec::new(),
    })
}

// ---- ADE adapter ---------------------------------------------------------

/// The public ADE layout: one pipe-separated line per (effect, drug) pair,
/// `pmid|sentence|effect|e_start|e_end|drug|d_start|d_end`. Sentences are
/// duplicated per pair and collapsed here; pairs whose two spans nest or
/// overlap are removed, as are cross-pair overlaps (later file order loses).
fn parse_ade(content: &str, on_error: OnRecordError) -> Result<Vec<SentenceExample>> {
    struct Pair {
        effect: (usize, usize),
        drug: (usize, usize),
    }
    struct Sentence {
        id: String,
        text: String,
        pairs: Vec<Pair>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut sentences: HashMap<String, Sentence> = HashMap::new();

    for (lineno, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('|').collect();
        if cols.len() != 8 {
            handle_record_error(
                Error::ingest(format!(
                    "ade line {}: expected 8 pipe-separated fields, got {}",
                    lineno + 1,
                    cols.len()
                )),
                on_error,
            )?;
            continue;
        }
        let (pmid, text) = (cols[0], cols[1]);
        let parse_span = |s: &str, e: &str, surface: &str| -> Result<(usize, usize)> {
            let (s, e) = (
                s.trim().parse::<usize>().map_err(|_| {
                    Error::ingest(format!("ade line {}: bad offset '{}'", lineno + 1, s))
                })?,
                e.trim().parse::<usize>().map_err(|_| {
                    Error::ingest(format!("ade line {}: bad offset '{}'", lineno + 1, e))
                })?,
            );
            locate_span(text, surface, s, e).ok_or_else(|| {
                Error::ingest(format!(
                    "ade line {}: annotation '{}' not found in sentence",
                    lineno + 1,
                    surface
                ))
            })
        };
        let effect = match parse_span(cols[3], cols[4], cols[2]) {
            Ok(v) => v,
            Err(e) => {
                handle_record_error(e, on_error)?;
                continue;
            }
        };
        let drug = match parse_span(cols[6], cols[7], cols[5]) {
            Ok(v) => v,
            Err(e) => {
                handle_record_error(e, on_error)?;
                continue;
            }
        };
        let entry = sentences.entry(text.to_string()).or_insert_with(|| {
            order.push(text.to_string());
            Sentence {
                id: format!("ade-{}-{}", pmid, order.len()),
                text: text.to_string(),
                pairs: Vec::new(),
            }
        });
        if !entry
            .pairs
            .iter()
            .any(|q| q.effect == effect && q.drug == drug)
        {
            entry.pairs.push(Pair { effect, drug });
        }
    }

    let overlaps =
        |a: (usize, usize), b: (usize, usize)| -> bool { a.0 < b.1 && b.0 < a.1 };

    let mut out = Vec::new();
    let mut nested_removed = 0usize;
    for text in &order {
        let sent = &sentences[text];
        // Nested pair (e.g. "lithium" inside "lithium intoxication"): drop.
        let mut kept: Vec<&Pair> = Vec::new();
        for p in &sent.pairs {
            if overlaps(p.effect, p.drug) {
                nested_removed += 1;
                continue;
            }
            // Cross-pair overlap with an already kept span of the other kind.
            let clashes = kept.iter().any(|q| {
                (overlaps(p.effect, q.drug) && p.effect != q.drug)
                    || (overlaps(p.drug, q.effect) && p.drug != q.effect)
                    || (overlaps(p.effect, q.effect) && p.effect != q.effect)
                    || (overlaps(p.drug, q.drug) && p.drug != q.drug)
            });
            if clashes {
                nested_removed += 1;
                continue;
            }
            kept.push(p);
        }
        let tokens = match tokenize(text) {
            Ok(t) => t,
            Err(e) => {
                handle_record_error(Error::ingest(format!("{}: {}", sent.id, e)), on_error)?;
                continue;
            }
        };
        let mut entities: Vec<SpanEntity> = Vec::new();
        let mut relations = Vec::new();
        let mut failed = false;
        {
            let mut index_of = |etype: &str, span: (usize, usize)| -> Result<usize> {
                if let Some(i) = entities
                    .iter()
                    .position(|e| e.char_start == span.0 && e.char_end == span.1)
                {
                    return Ok(i);
                }
                let (a, b) = align_span(&tokens, span.0, span.1, true)
                    .map_err(|e| Error::ingest(format!("{}: {}", sent.id, e)))?;
                entities.push(SpanEntity {
                    etype: etype.to_string(),
                    char_start: tokens[a].start,
                    char_end: tokens[b].end,
                    tok_start: a,
                    tok_end: b,
                });
                Ok(entities.len() - 1)
            };
            for p in &kept {
                let d = match index_of("Drug", p.drug) {
                    Ok(v) => v,
                    Err(e) => {
                        handle_record_error(e, on_error)?;
                        failed = true;
                        break;
                    }
                };
                let ef = match index_of("Disease", p.effect) {
                    Ok(v) => v,
                    Err(e) => {
                        handle_record_error(e, on_error)?;
                        failed = true;
                        break;
                    }
                };
                relations.push(RelationAnn {
                    subject: d,
                    object: ef,
                    predicate: "Adverse-Effect".to_string(),
                });
            }
        }
        if failed {
            continue;
        }
        out.push(SentenceExample {
            id: sent.id.clone(),
            text: sent.text.clone(),
            tokens,
            entities,
            relations,
            dep_edges: Vec::new(),
        });
    }
    if nested_removed > 0 {
        log::info!("ade: removed {} nested/overlapping relation pairs", nested_removed);
    }
    Ok(out)
}

/// Validates a span against its annotated surface, searching the sentence
/// for the surface when the given offsets do not line up (the public file
/// carries document-level offsets).
fn locate_span(text: &str, surface: &str, start: usize, end: usize) -> Option<(usize, usize)> {
    let chars: Vec<char> = text.chars().collect();
    let surf: Vec<char> = surface.chars().collect();
    if surf.is_empty() || surf.len() > chars.len() {
        return None;
    }
    let matches_at = |s: usize| s + surf.len() <= chars.len() && chars[s..s + surf.len()] == surf[..];
    if end > start && end - start == surf.len() && matches_at(start) {
        return Some((start, end));
    }
    (0..=chars.len() - surf.len())
        .find(|&s| matches_at(s))
        .map(|s| (s, s + surf.len()))
}

// ---- dependency sidecar ---------------------------------------------------

/// Attaches dependency parses to examples, block-by-block in order.
pub fn attach_parses(
    examples: &mut [SentenceExample],
    sidecar: &str,
    on_error: OnRecordError,
) -> Result<()> {
    let mut blocks: Vec<Vec<(usize, usize, String)>> = Vec::new();
    let mut current: Vec<(usize, usize, String)> = Vec::new();
    let mut saw_content = false;
    for (lineno, line) in sidecar.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            if saw_content {
                blocks.push(std::mem::take(&mut current));
                saw_content = false;
            } else {
                blocks.push(Vec::new());
            }
            continue;
        }
        if line.starts_with('#') {
            saw_content = true;
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 3 {
            return Err(Error::ingest(format!(
                "sidecar line {}: expected 'head dep tag'",
                lineno + 1
            )));
        }
        let (Ok(h), Ok(d)) = (cols[0].parse::<usize>(), cols[1].parse::<usize>()) else {
            return Err(Error::ingest(format!(
                "sidecar line {}: bad indices",
                lineno + 1
            )));
        };
        current.push((h, d, cols[2].to_string()));
        saw_content = true;
    }
    if saw_content {
        blocks.push(current);
    }

    for (i, ex) in examples.iter_mut().enumerate() {
        let Some(block) = blocks.get(i) else {
            log::warn!("no dependency parse for sentence {}; using zero edges", ex.id);
            continue;
        };
        if block.is_empty() {
            log::warn!("empty dependency parse for sentence {}; using zero edges", ex.id);
            continue;
        }
        let n = ex.tokens.len();
        let valid = block.len() == n.saturating_sub(1)
            && block.iter().all(|&(h, d, _)| h < n && d < n);
        if !valid {
            let err = Error::ingest(format!(
                "sidecar block {} does not align with sentence {} ({} rows for {} tokens)",
                i,
                ex.id,
                block.len(),
                n
            ));
            match on_error {
                OnRecordError::Abort => return Err(err),
                OnRecordError::SkipAndLog => {
                    log::warn!("{}; using zero edges", err);
                    continue;
                }
            }
        }
        ex.dep_edges = block
            .iter()
            .map(|(h, d, tag)| DepEdge {
                head: *h,
                dep: *d,
                tag: tag.clone(),
            })
            .collect();
    }
    Ok(())
}

// ---- splits -----------------------------------------------------------------

/// Deterministic fold id for a sentence: SHA-256 of the seed and the
/// sentence id, reduced modulo `k`. Stable across runs and platforms.
pub fn fold_of(id: &str, seed: u64, k: usize) -> usize {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(id.as_bytes());
    let digest = hasher.finalize();
    let mut x = [0u8; 8];
    x.copy_from_slice(&digest[..8]);
    (u64::from_le_bytes(x) % k as u64) as usize
}

/// Partitions examples into k folds by `fold_of`.
pub fn assign_folds(examples: &[SentenceExample], seed: u64, k: usize) -> Vec<usize> {
    examples.iter().map(|e| fold_of(&e.id, seed, k)).collect()
}
