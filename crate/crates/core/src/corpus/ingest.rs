//! Line-delimited JSON corpus files.
//!
//! One record per line with the fields `text`, `language`, `domain`,
//! `group`, `sentiment` and `topic`:
//!
//! ```text
//! {"text":"l0d0w3 l0g0m1","language":0,"domain":"in","group":"F","sentiment":"positive","topic":2}
//! ```
//!
//! `group` is one of `F`, `M`, `<35`, `>45` (first label of each factor is
//! group 0), `sentiment` one of `negative`, `neutral`, `positive`, `domain`
//! one of `in`, `out`, and `topic` an integer in `0..5`.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::vocab::Vocabulary;
use super::{Domain, Factor, Review, NUM_TOPICS, SENTIMENT_LABELS};
use crate::error::{Error, Result};

const FIELDS: [&str; 6] = ["text", "language", "domain", "group", "sentiment", "topic"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub text: String,
    pub language: usize,
    pub domain: String,
    pub group: String,
    pub sentiment: String,
    pub topic: usize,
}

impl CorpusRecord {
    pub fn from_review(review: &Review, vocab: &Vocabulary, factor: Factor) -> Self {
        Self {
            text: vocab.decode(&review.tokens),
            language: review.language,
            domain: review.domain.as_str().to_string(),
            group: factor.group_labels()[review.group].to_string(),
            sentiment: SENTIMENT_LABELS[review.sentiment].to_string(),
            topic: review.topic,
        }
    }
}

fn group_index(label: &str) -> Option<usize> {
    Factor::ALL
        .iter()
        .find_map(|f| f.group_labels().iter().position(|g| *g == label))
}

fn parse_line(line: &str, lineno: usize, vocab: &Vocabulary, max_len: usize, id: u64) -> Result<Review> {
    let value: Value = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: lineno,
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| Error::Parse {
        line: lineno,
        message: "record is not an object".into(),
    })?;
    if let Some(missing) = FIELDS.iter().find(|f| !obj.contains_key(**f)) {
        return Err(Error::Parse {
            line: lineno,
            message: format!("missing field `{missing}`"),
        });
    }
    let record: CorpusRecord = serde_json::from_value(value).map_err(|e| Error::Parse {
        line: lineno,
        message: e.to_string(),
    })?;
    let schema = |message: String| Error::Schema { line: lineno, message };

    let domain = Domain::parse(&record.domain).ok_or_else(|| schema(format!("unknown domain {:?}", record.domain)))?;
    let group = group_index(&record.group).ok_or_else(|| schema(format!("unknown group {:?}", record.group)))?;
    let sentiment = SENTIMENT_LABELS
        .iter()
        .position(|s| *s == record.sentiment)
        .ok_or_else(|| schema(format!("unknown sentiment {:?}", record.sentiment)))?;
    if record.topic >= NUM_TOPICS {
        return Err(schema(format!("topic {} outside 0..{NUM_TOPICS}", record.topic)));
    }
    let mut tokens = vocab.encode(&record.text);
    tokens.truncate(max_len);
    Ok(Review {
        id,
        tokens,
        language: record.language,
        domain,
        group,
        sentiment,
        topic: record.topic,
    })
}

/// Parses corpus text; blank lines are skipped and ids are assigned in
/// record order starting at `first_id`.
pub fn ingest_str(text: &str, vocab: &Vocabulary, max_len: usize, first_id: u64) -> Result<Vec<Review>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(line, i + 1, vocab, max_len, first_id + out.len() as u64)?);
    }
    Ok(out)
}

pub fn ingest(path: &Path, vocab: &Vocabulary, max_len: usize) -> Result<Vec<Review>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&line, i + 1, vocab, max_len, out.len() as u64)?);
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, reviews: &[Review], vocab: &Vocabulary, factor: Factor) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in reviews {
        let line = serde_json::to_string(&CorpusRecord::from_review(r, vocab, factor))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
