use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::tokenize_surface;
use crate::error::{Error, Result};
use crate::types::CharSpan;

/// A named entity found in a sentence. Categories are backend-defined
/// strings such as `PERSON`, `GPE` or `DATE`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub text: String,
    pub label: String,
    pub char_span: CharSpan,
}

/// Named-entity recognizer. Implementations return non-overlapping spans
/// sorted by start offset.
pub trait NerBackend: Send + Sync {
    fn entities(&self, text: &str) -> Result<Vec<EntitySpan>>;

    /// Whether concurrent calls are safe without external serialization.
    fn concurrency_safe(&self) -> bool {
        true
    }
}

/// Runs the backend and rejects output that breaks the span contract.
pub(crate) fn checked_entities(ner: &dyn NerBackend, text: &str) -> Result<Vec<EntitySpan>> {
    let ents = ner.entities(text)?;
    let mut prev_end = 0;
    for e in &ents {
        if e.char_span.is_empty() || e.char_span.start < prev_end {
            return Err(Error::Backend(format!(
                "NER spans must be non-empty, sorted and non-overlapping: {:?}",
                e.char_span
            )));
        }
        if e.char_span.slice(text) != Some(e.text.as_str()) {
            return Err(Error::Backend(format!(
                "NER span {:?} does not cover {:?}",
                e.char_span, e.text
            )));
        }
        prev_end = e.char_span.end;
    }
    Ok(ents)
}

/// Entity lookup against the spans of a known sentence: the category of
/// the entity overlapping `span`, if any.
pub fn entity_label_at(
    ner: &dyn NerBackend,
    text: &str,
    span: CharSpan,
) -> Result<Option<String>> {
    Ok(checked_entities(ner, text)?
        .into_iter()
        .find(|e| e.char_span.overlaps(&span))
        .map(|e| e.label))
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct LexiconEntry {
    tokens: Vec<String>,
    label: String,
}

/// Gazetteer tagger: exact, case-sensitive matches of known surface forms
/// on token boundaries, longest entry first. Four-digit numbers are tagged
/// `DATE` unless the rule is switched off.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconNer {
    entries: Vec<LexiconEntry>,
    year_rule: bool,
}

impl Default for LexiconNer {
    fn default() -> Self {
        LexiconNer {
            entries: Vec::new(),
            year_rule: true,
        }
    }
}

#[derive(Deserialize)]
struct LexiconRecord {
    text: String,
    label: String,
}

impl LexiconNer {
    pub fn new<I, S, L>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, L)>,
        S: AsRef<str>,
        L: Into<String>,
    {
        let mut entries: Vec<LexiconEntry> = entries
            .into_iter()
            .map(|(s, l)| LexiconEntry {
                tokens: tokenize_surface(s.as_ref())
                    .into_iter()
                    .map(|t| t.text)
                    .collect(),
                label: l.into(),
            })
            .filter(|e| !e.tokens.is_empty())
            .collect();
        // stable: equal lengths keep insertion order
        entries.sort_by_key(|e| std::cmp::Reverse(e.tokens.len()));
        LexiconNer {
            entries,
            year_rule: true,
        }
    }

    pub fn without_year_rule(mut self) -> Self {
        self.year_rule = false;
        self
    }

    /// Loads `{"text": ..., "label": ...}` records, one per line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: LexiconRecord = serde_json::from_str(&line).map_err(|e| Error::Record {
                line: i + 1,
                message: e.to_string(),
            })?;
            entries.push((rec.text, rec.label));
        }
        Ok(Self::new(entries))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn is_year(token: &str) -> bool {
    token.len() == 4 && token.bytes().all(|b| b.is_ascii_digit())
}

impl NerBackend for LexiconNer {
    fn entities(&self, text: &str) -> Result<Vec<EntitySpan>> {
        let tokens = tokenize_surface(text);
        let mut out = Vec::new();
        let mut i = 0;
        'scan: while i < tokens.len() {
            for entry in &self.entries {
                let n = entry.tokens.len();
                if i + n <= tokens.len()
                    && tokens[i..i + n]
                        .iter()
                        .zip(&entry.tokens)
                        .all(|(t, e)| &t.text == e)
                {
                    let span = CharSpan::new(tokens[i].span.start, tokens[i + n - 1].span.end);
                    out.push(EntitySpan {
                        text: span.slice(text).unwrap_or_default().to_string(),
                        label: entry.label.clone(),
                        char_span: span,
                    });
                    i += n;
                    continue 'scan;
                }
            }
            if self.year_rule && is_year(&tokens[i].text) {
                out.push(EntitySpan {
                    text: tokens[i].text.clone(),
                    label: "DATE".into(),
                    char_span: tokens[i].span,
                });
            }
            i += 1;
        }
        Ok(out)
    }
}

#[derive(Serialize)]
struct StreamRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct StreamResponse {
    entities: Vec<EntitySpan>,
}

struct StreamIo {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
}

/// Adapter for an external NER service speaking line-delimited JSON:
/// `{"text": ...}` in, `{"entities": [{text, label, char_span}]}` out.
/// Requests are serialized through an internal lock.
pub struct StreamNer {
    io: Mutex<StreamIo>,
    child: Option<Mutex<Child>>,
}

impl StreamNer {
    pub fn new(reader: impl BufRead + Send + 'static, writer: impl Write + Send + 'static) -> Self {
        StreamNer {
            io: Mutex::new(StreamIo {
                reader: Box::new(reader),
                writer: Box::new(writer),
            }),
            child: None,
        }
    }

    /// Spawns `command` and talks to it over stdin/stdout.
    pub fn spawn(command: &mut Command) -> Result<Self> {
        let mut child = command
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Backend(format!("cannot spawn NER process: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut ner = Self::new(BufReader::new(stdout), BufWriter::new(stdin));
        ner.child = Some(Mutex::new(child));
        Ok(ner)
    }
}

impl NerBackend for StreamNer {
    fn entities(&self, text: &str) -> Result<Vec<EntitySpan>> {
        let mut io = self
            .io
            .lock()
            .map_err(|_| Error::Backend("NER stream lock poisoned".into()))?;
        let broken = |e: std::io::Error| Error::Backend(format!("NER stream: {e}"));
        serde_json::to_writer(&mut io.writer, &StreamRequest { text })?;
        io.writer.write_all(b"\n").map_err(broken)?;
        io.writer.flush().map_err(broken)?;
        let mut line = String::new();
        if io.reader.read_line(&mut line).map_err(broken)? == 0 {
            return Err(Error::Backend("NER stream closed".into()));
        }
        let resp: StreamResponse = serde_json::from_str(&line)
            .map_err(|e| Error::Backend(format!("bad NER response: {e}")))?;
        Ok(resp.entities)
    }
}

impl Drop for StreamNer {
    fn drop(&mut self) {
        if let Some(child) = self.child.take() {
            if let Ok(mut c) = child.into_inner() {
                let _ = c.kill();
                let _ = c.wait();
            }
        }
    }
}

#[cfg(test)]
pub(crate) struct FixedNer(pub Vec<EntitySpan>);

#[cfg(test)]
impl NerBackend for FixedNer {
    fn entities(&self, _text: &str) -> Result<Vec<EntitySpan>> {
        Ok(self.0.clone())
    }
}
