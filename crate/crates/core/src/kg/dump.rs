//! Line-oriented streaming parser for Wikidata-style JSON entity dumps.
//!
//! Accepts either one entity object per line, or the dump convention of an
//! opening `[` line, one object per line with a trailing comma, and a closing
//! `]` line. Buffer growth is bounded by the longest line.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom};
use std::ops::Range;
use std::path::Path;

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::model::{ClaimValue, Entity, EntityId, PropertyId};

#[derive(Debug, Clone, Copy)]
pub struct DumpOptions {
    pub tolerate_array_wrapper: bool,
    /// Lines longer than this are skipped with a diagnostic instead of buffered.
    pub max_line_len: Option<usize>,
}

impl Default for DumpOptions {
    fn default() -> Self {
        DumpOptions {
            tolerate_array_wrapper: true,
            max_line_len: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseDiagnostic {
    /// 1-based, relative to the start of the parsed range.
    pub line: u64,
    pub byte_offset: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DumpItem {
    Entity(Box<Entity>),
    Diagnostic(ParseDiagnostic),
}

impl DumpItem {
    pub fn entity(self) -> Option<Entity> {
        match self {
            DumpItem::Entity(e) => Some(*e),
            DumpItem::Diagnostic(_) => None,
        }
    }
}

/// Streaming iterator over a dump. Yields `Err` only for I/O failures of the
/// underlying reader; everything else becomes a [`ParseDiagnostic`].
pub struct DumpParser<R> {
    reader: R,
    opts: DumpOptions,
    buf: Vec<u8>,
    line_no: u64,
    offset: u64,
    peak_buffer: usize,
    done: bool,
}

pub fn parse_dump_stream<R: BufRead>(reader: R, opts: DumpOptions) -> DumpParser<R> {
    DumpParser::new(reader, opts, 0)
}

enum RawLine {
    Eof,
    Line,
    TooLong(usize),
}

impl<R: BufRead> DumpParser<R> {
    fn new(reader: R, opts: DumpOptions, base_offset: u64) -> Self {
        DumpParser {
            reader,
            opts,
            buf: Vec::new(),
            line_no: 0,
            offset: base_offset,
            peak_buffer: 0,
            done: false,
        }
    }

    /// Largest capacity the line buffer reached so far.
    pub fn peak_buffer(&self) -> usize {
        self.peak_buffer
    }

    fn read_line(&mut self) -> io::Result<RawLine> {
        self.buf.clear();
        let limit = self.opts.max_line_len.unwrap_or(usize::MAX);
        let mut total = 0usize;
        let mut overflow = false;
        loop {
            let chunk = match self.reader.fill_buf() {
                Ok(c) => c,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e),
            };
            if chunk.is_empty() {
                break;
            }
            let (take, found) = match chunk.iter().position(|&b| b == b'\n') {
                Some(i) => (i + 1, true),
                None => (chunk.len(), false),
            };
            if !overflow {
                if total + take > limit.saturating_add(1) {
                    overflow = true;
                    self.buf.clear();
                } else {
                    self.buf.extend_from_slice(&chunk[..take]);
                }
            }
            total += take;
            self.reader.consume(take);
            if found {
                break;
            }
        }
        self.peak_buffer = self.peak_buffer.max(self.buf.capacity());
        if total == 0 {
            return Ok(RawLine::Eof);
        }
        self.line_no += 1;
        self.offset += total as u64;
        if overflow {
            Ok(RawLine::TooLong(total))
        } else {
            Ok(RawLine::Line)
        }
    }

    fn diagnostic(&self, line_start: u64, reason: impl Into<String>) -> DumpItem {
        DumpItem::Diagnostic(ParseDiagnostic {
            line: self.line_no,
            byte_offset: line_start,
            reason: reason.into(),
        })
    }
}

impl<R: BufRead> Iterator for DumpParser<R> {
    type Item = io::Result<DumpItem>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            let line_start = self.offset;
            match self.read_line() {
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
                Ok(RawLine::Eof) => {
                    self.done = true;
                    return None;
                }
                Ok(RawLine::TooLong(n)) => {
                    return Some(Ok(self.diagnostic(line_start, format!("line of {n} bytes exceeds limit"))));
                }
                Ok(RawLine::Line) => {}
            }
            let mut line = trim_ascii(&self.buf);
            if line.is_empty() {
                continue;
            }
            if self.opts.tolerate_array_wrapper {
                if line == b"[" || line == b"]" {
                    continue;
                }
                if let Some(stripped) = line.strip_suffix(b",") {
                    line = trim_ascii(stripped);
                }
            }
            let item = match parse_entity_line(line) {
                Ok(entity) => DumpItem::Entity(Box::new(entity)),
                Err(reason) => self.diagnostic(line_start, reason),
            };
            return Some(Ok(item));
        }
        None
    }
}

fn trim_ascii(mut s: &[u8]) -> &[u8] {
    while let [first, rest @ ..] = s {
        if first.is_ascii_whitespace() {
            s = rest;
        } else {
            break;
        }
    }
    while let [rest @ .., last] = s {
        if last.is_ascii_whitespace() {
            s = rest;
        } else {
            break;
        }
    }
    s
}

// ---- raw dump shapes ----

/// PHP-serialized dumps emit `[]` for empty objects.
fn map_or_empty<'de, D, T>(d: D) -> Result<BTreeMap<String, T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Either<T> {
        Map(BTreeMap<String, T>),
        Seq(Vec<de::IgnoredAny>),
    }
    match Option::<Either<T>>::deserialize(d)? {
        Some(Either::Map(m)) => Ok(m),
        Some(Either::Seq(v)) if v.is_empty() => Ok(BTreeMap::new()),
        Some(Either::Seq(_)) => Err(de::Error::custom("expected object, found non-empty array")),
        None => Ok(BTreeMap::new()),
    }
}

#[derive(Deserialize)]
struct RawEntity {
    id: String,
    #[serde(default, deserialize_with = "map_or_empty")]
    labels: BTreeMap<String, RawTerm>,
    #[serde(default, deserialize_with = "map_or_empty")]
    descriptions: BTreeMap<String, RawTerm>,
    #[serde(default, deserialize_with = "map_or_empty")]
    aliases: BTreeMap<String, Vec<RawTerm>>,
    #[serde(default, deserialize_with = "map_or_empty")]
    claims: BTreeMap<String, Vec<RawStatement>>,
    #[serde(default, deserialize_with = "map_or_empty")]
    sitelinks: BTreeMap<String, RawSitelink>,
}

#[derive(Deserialize)]
struct RawTerm {
    value: String,
}

#[derive(Deserialize)]
struct RawSitelink {
    title: String,
}

#[derive(Deserialize)]
struct RawStatement {
    mainsnak: RawSnak,
    #[serde(default)]
    rank: Option<String>,
}

#[derive(Deserialize)]
struct RawSnak {
    #[serde(default)]
    snaktype: Option<String>,
    #[serde(default)]
    datavalue: Option<RawDataValue>,
}

#[derive(Deserialize)]
struct RawDataValue {
    #[serde(rename = "type")]
    kind: String,
    value: Value,
}

fn entity_from_uri(s: &str) -> Option<EntityId> {
    let tail = s.rsplit('/').next()?;
    EntityId::new(tail).ok()
}

fn convert_value(dv: RawDataValue) -> Result<ClaimValue, String> {
    let other = |v: &RawDataValue| ClaimValue::Other {
        raw: serde_json::json!({"type": v.kind, "value": v.value}).to_string(),
    };
    let v = &dv.value;
    let out = match dv.kind.as_str() {
        "wikibase-entityid" => {
            let is_item = v
                .get("entity-type")
                .and_then(Value::as_str)
                .is_none_or(|t| t == "item");
            let id = v.get("id").and_then(Value::as_str).map(str::to_owned).or_else(|| {
                v.get("numeric-id").and_then(Value::as_u64).map(|n| format!("Q{n}"))
            });
            match (is_item, id) {
                (true, Some(id)) => ClaimValue::EntityRef {
                    id: EntityId::new(id).map_err(|e| e.to_string())?,
                },
                _ => other(&dv),
            }
        }
        "string" => match v.as_str() {
            Some(s) => ClaimValue::Text { text: s.to_owned() },
            None => return Err("string datavalue is not a string".into()),
        },
        "monolingualtext" => match v.get("text").and_then(Value::as_str) {
            Some(s) => ClaimValue::Text { text: s.to_owned() },
            None => return Err("monolingualtext without text".into()),
        },
        "quantity" => {
            let amount = v
                .get("amount")
                .and_then(Value::as_str)
                .ok_or("quantity without amount")?;
            let amount = amount.strip_prefix('+').unwrap_or(amount).to_owned();
            let unit = v.get("unit").and_then(Value::as_str).and_then(entity_from_uri);
            ClaimValue::Quantity { amount, unit }
        }
        "time" => {
            let time = v.get("time").and_then(Value::as_str).ok_or("time without time")?;
            let precision = v.get("precision").and_then(Value::as_u64).unwrap_or(11);
            ClaimValue::Time {
                time: time.to_owned(),
                precision: precision.min(u8::MAX as u64) as u8,
            }
        }
        "globecoordinate" => {
            let lat = v.get("latitude").and_then(Value::as_f64).ok_or("coordinate without latitude")?;
            let lon = v.get("longitude").and_then(Value::as_f64).ok_or("coordinate without longitude")?;
            ClaimValue::Coordinate { lat, lon }
        }
        _ => other(&dv),
    };
    Ok(out)
}

/// Parse one JSON entity object into the normalized model.
pub fn parse_entity_line(line: &[u8]) -> Result<Entity, String> {
    let raw: RawEntity = serde_json::from_slice(line).map_err(|e| format!("json: {e}"))?;
    let id = EntityId::new(raw.id).map_err(|e| format!("not an item: {e}"))?;
    let mut entity = Entity::new(id);
    entity.labels = raw.labels.into_iter().map(|(k, t)| (k, t.value)).collect();
    entity.descriptions = raw.descriptions.into_iter().map(|(k, t)| (k, t.value)).collect();
    entity.aliases = raw
        .aliases
        .into_iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(k, ts)| (k, ts.into_iter().map(|t| t.value).collect()))
        .collect();
    entity.sitelinks = raw.sitelinks.into_iter().map(|(k, s)| (k, s.title)).collect();
    for (p, statements) in raw.claims {
        let pid = PropertyId::new(p).map_err(|e| e.to_string())?;
        let mut values = Vec::with_capacity(statements.len());
        for st in statements {
            if st.rank.as_deref() == Some("deprecated") {
                continue;
            }
            if st.mainsnak.snaktype.as_deref().is_some_and(|t| t != "value") {
                continue;
            }
            let Some(dv) = st.mainsnak.datavalue else { continue };
            values.push(convert_value(dv).map_err(|e| format!("claim {pid}: {e}"))?);
        }
        if !values.is_empty() {
            entity.claims.insert(pid, values);
        }
    }
    entity.validate().map_err(|e| format!("invariant: {e}"))?;
    Ok(entity)
}

/// Split a file into `n` byte ranges whose boundaries fall just after a newline.
pub fn line_aligned_shards(path: &Path, n: usize) -> io::Result<Vec<Range<u64>>> {
    let mut file = File::open(path)?;
    let len = file.metadata()?.len();
    let n = n.max(1) as u64;
    let mut cuts = vec![0u64];
    for i in 1..n {
        let guess = len * i / n;
        let prev = *cuts.last().expect("non-empty");
        if guess <= prev {
            continue;
        }
        file.seek(SeekFrom::Start(guess - 1))?;
        let mut reader = BufReader::new(&mut file);
        let mut skipped = Vec::new();
        let read = reader.read_until(b'\n', &mut skipped)? as u64;
        let cut = (guess - 1 + read).min(len);
        if cut > prev && cut < len {
            cuts.push(cut);
        }
    }
    cuts.push(len);
    cuts.dedup();
    Ok(cuts.windows(2).map(|w| w[0]..w[1]).collect())
}

/// Parse one line-aligned byte range of a dump file.
pub fn parse_dump_range(
    path: &Path,
    range: Range<u64>,
    opts: DumpOptions,
) -> io::Result<DumpParser<BufReader<io::Take<File>>>> {
    let mut file = File::open(path)?;
    file.seek(SeekFrom::Start(range.start))?;
    let reader = BufReader::with_capacity(1 << 16, file.take(range.end - range.start));
    Ok(DumpParser::new(reader, opts, range.start))
}

pub fn open_dump(path: &Path, opts: DumpOptions) -> io::Result<DumpParser<BufReader<File>>> {
    let file = File::open(path)?;
    Ok(parse_dump_stream(BufReader::with_capacity(1 << 16, file), opts))
}
