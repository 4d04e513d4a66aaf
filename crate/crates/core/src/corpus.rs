//! JSON-lines dialog corpora.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::DialogPair;

/// Utterances kept from the end of each context.
pub const CONTEXT_TURNS: usize = 2;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed record on line {line}")]
    Malformed { line: usize, source: serde_json::Error },
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One line of a corpus file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub context_utterances: Vec<String>,
    #[serde(default)]
    pub context_image_features: Vec<Vec<f64>>,
    pub response: String,
}

impl CorpusRecord {
    /// Keeps the last two utterances and tokenizes.
    pub fn to_pair(&self) -> DialogPair {
        let start = self.context_utterances.len().saturating_sub(CONTEXT_TURNS);
        DialogPair::new(&self.context_utterances[start..], self.context_image_features.clone(), &self.response)
    }
}

pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<CorpusRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord =
            serde_json::from_str(&line).map_err(|source| CorpusError::Malformed { line: i + 1, source })?;
        if rec.response.trim().is_empty() {
            return Err(CorpusError::Invalid { line: i + 1, reason: "empty response".into() });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_pairs<R: BufRead>(reader: R) -> Result<Vec<DialogPair>, CorpusError> {
    Ok(read_records(reader)?.iter().map(CorpusRecord::to_pair).collect())
}

pub fn write_records<W: Write>(mut writer: W, records: &[CorpusRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_window() {
        let recs = vec![
            CorpusRecord {
                context_utterances: vec!["One.".into(), "Two?".into(), "Three!".into()],
                context_image_features: vec![vec![0.5, 0.25]],
                response: "Four.".into(),
            },
            CorpusRecord { context_utterances: vec![], context_image_features: vec![], response: "ok".into() },
        ];
        let mut buf = Vec::new();
        write_records(&mut buf, &recs).unwrap();
        let back = read_records(&buf[..]).unwrap();
        assert_eq!(back, recs);
        let pair = back[0].to_pair();
        assert_eq!(pair.context.text_tokens, vec!["two", "?", "three", "!"]);
        assert_eq!(pair.response, vec!["four", "."]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = "{\"context_utterances\": [], \"response\": \"a\"}\n{oops}\n";
        match read_records(bad.as_bytes()) {
            Err(CorpusError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let empty = "{\"context_utterances\": [\"x\"], \"response\": \" \"}\n";
        assert!(matches!(read_records(empty.as_bytes()), Err(CorpusError::Invalid { line: 1, .. })));
        let unknown = "{\"context_utterances\": [], \"response\": \"a\", \"extra\": 1}\n";
        assert!(read_records(unknown.as_bytes()).is_err());
    }
}
