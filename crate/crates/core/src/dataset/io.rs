use std::io::{self, BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DatasetRecord, RecordInvariant};

#[derive(Debug, Error)]
pub enum WriteError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Invalid(#[from] RecordInvariant),
}

/// One JSON object per line, `\n` terminated. Each line is a single
/// `write_all`, so a crash leaves at most one unterminated final line.
pub fn write_records<'a, I, W>(records: I, mut sink: W) -> Result<usize, WriteError>
where
    I: IntoIterator<Item = &'a DatasetRecord>,
    W: Write,
{
    let mut n = 0;
    for r in records {
        r.validate()?;
        let mut line = serde_json::to_string(r).map_err(io::Error::other)?;
        line.push('\n');
        sink.write_all(line.as_bytes())?;
        n += 1;
    }
    sink.flush()?;
    Ok(n)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordDiagnostic {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
    /// The final line had no terminator and did not parse.
    pub truncated_tail: bool,
}

// records are the common case; boxing them would only add an allocation each
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReadItem {
    Record(DatasetRecord),
    Diagnostic(RecordDiagnostic),
}

impl ReadItem {
    pub fn record(self) -> Option<DatasetRecord> {
        match self {
            ReadItem::Record(r) => Some(r),
            ReadItem::Diagnostic(_) => None,
        }
    }
}

pub struct RecordReader<R> {
    reader: R,
    line: usize,
    buf: Vec<u8>,
    done: bool,
}

/// Streaming mirror of [`write_records`]. Bad lines become diagnostics; only
/// I/O failures surface as errors. Blank lines are skipped.
pub fn read_records<R: BufRead>(reader: R) -> RecordReader<R> {
    RecordReader { reader, line: 0, buf: Vec::new(), done: false }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = io::Result<ReadItem>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            self.buf.clear();
            let n = match self.reader.read_until(b'\n', &mut self.buf) {
                Ok(n) => n,
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            };
            if n == 0 {
                self.done = true;
                break;
            }
            self.line += 1;
            let terminated = self.buf.last() == Some(&b'\n');
            let body = self.buf.trim_ascii();
            if body.is_empty() {
                continue;
            }
            let item = match serde_json::from_slice::<DatasetRecord>(body) {
                Ok(r) => match r.validate() {
                    Ok(()) => ReadItem::Record(r),
                    Err(e) => ReadItem::Diagnostic(RecordDiagnostic { line: self.line, reason: e.to_string(), truncated_tail: false }),
                },
                Err(e) => ReadItem::Diagnostic(RecordDiagnostic {
                    line: self.line,
                    reason: if terminated { e.to_string() } else { format!("truncated final line: {e}") },
                    truncated_tail: !terminated,
                }),
            };
            return Some(Ok(item));
        }
        None
    }
}

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Strict line-delimited JSON reader; blank
/// lines are skipped, the first bad line is an error.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| JsonlError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}
