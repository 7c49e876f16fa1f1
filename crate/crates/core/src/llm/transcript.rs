//! JSON Lines transcripts: line 0 is a header, every following line one
//! recorded response.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError};

pub const TRANSCRIPT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Header {
    kind: String,
    schema_version: u32,
}

impl Header {
    fn current() -> Self {
        Self {
            kind: "veribtot-transcript".into(),
            schema_version: TRANSCRIPT_SCHEMA_VERSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub index: usize,
    pub request_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    pub response: ChatResponse,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub records: Vec<TranscriptRecord>,
}

impl Transcript {
    pub fn push(&mut self, request: &ChatRequest, response: ChatResponse) {
        self.records.push(TranscriptRecord {
            index: self.records.len(),
            request_digest: request.digest(),
            tag: Some(request.tag.clone()),
            response,
        });
    }

    pub fn parse(text: &str) -> Result<Self, LlmError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Header = match lines.next() {
            Some(l) => serde_json::from_str(l)
                .map_err(|e| LlmError::Transcript(format!("bad header: {e}")))?,
            None => return Err(LlmError::Transcript("empty transcript".into())),
        };
        if header.schema_version != TRANSCRIPT_SCHEMA_VERSION {
            return Err(LlmError::Transcript(format!(
                "unsupported transcript schema {}",
                header.schema_version
            )));
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let rec: TranscriptRecord = serde_json::from_str(line)
                .map_err(|e| LlmError::Transcript(format!("record {i}: {e}")))?;
            if rec.index != i {
                return Err(LlmError::Transcript(format!(
                    "record {i} carries index {}",
                    rec.index
                )));
            }
            records.push(rec);
        }
        Ok(Self { records })
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = fs::read_to_string(path)
            .map_err(|e| LlmError::Transcript(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&Header::current()).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), LlmError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn total_usage(&self) -> (u64, u64) {
        self.records.iter().fold((0, 0), |(p, c), r| {
            (p + r.response.prompt_tokens, c + r.response.completion_tokens)
        })
    }
}

/// Serves recorded responses in index order. Each run owns its own cursor.
pub struct ReplayBackend {
    transcript: Transcript,
    cursor: Mutex<usize>,
    strict: bool,
}

impl ReplayBackend {
    pub fn new(transcript: Transcript) -> Self {
        Self {
            transcript,
            cursor: Mutex::new(0),
            strict: false,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        Ok(Self::new(Transcript::load(path)?))
    }

    /// In strict mode each request's digest must equal the recorded one.
    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    pub fn position(&self) -> usize {
        *self.cursor.lock().expect("cursor poisoned")
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let mut cursor = self.cursor.lock().expect("cursor poisoned");
        let rec = self
            .transcript
            .records
            .get(*cursor)
            .ok_or(LlmError::ReplayExhausted {
                records: self.transcript.records.len(),
            })?;
        if self.strict {
            let actual = request.digest();
            if actual != rec.request_digest {
                return Err(LlmError::ReplayDigestMismatch {
                    index: rec.index,
                    expected: rec.request_digest.clone(),
                    actual,
                });
            }
        }
        *cursor += 1;
        Ok(rec.response.clone())
    }
}

/// Delegates to an inner backend and appends every exchange to a transcript
/// file as it happens.
pub struct RecordingBackend {
    inner: Arc<dyn ChatBackend>,
    state: Mutex<RecordState>,
}

struct RecordState {
    next_index: usize,
    out: BufWriter<File>,
}

impl RecordingBackend {
    pub fn create(inner: Arc<dyn ChatBackend>, path: &Path) -> Result<Self, LlmError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut out, &Header::current())
            .map_err(|e| LlmError::Transcript(e.to_string()))?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(Self {
            inner,
            state: Mutex::new(RecordState { next_index: 0, out }),
        })
    }
}

impl ChatBackend for RecordingBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let response = self.inner.complete(request)?;
        let mut state = self.state.lock().expect("recorder poisoned");
        let rec = TranscriptRecord {
            index: state.next_index,
            request_digest: request.digest(),
            tag: Some(request.tag.clone()),
            response: response.clone(),
        };
        serde_json::to_writer(&mut state.out, &rec)
            .map_err(|e| LlmError::Transcript(e.to_string()))?;
        state.out.write_all(b"\n")?;
        state.out.flush()?;
        state.next_index += 1;
        Ok(response)
    }
}
