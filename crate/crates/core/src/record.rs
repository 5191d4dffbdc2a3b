//! Task records and their JSONL encoding.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Symbol,
    Completion,
    Lm,
}

/// One evaluation item. Exactly the gold field matching `kind` is present:
/// `gold_symbols` for symbol tasks, `gold_next_line` for completion, none
/// for language modelling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: String,
    pub kind: TaskKind,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_symbols: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_next_line: Option<String>,
    pub token_length: u64,
    #[serde(default)]
    pub repo: String,
    #[serde(default)]
    pub path: String,
    /// Identifies the prompt template used to build `prompt`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
}

impl TaskRecord {
    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            TaskKind::Symbol => self.gold_symbols.is_some() && self.gold_next_line.is_none(),
            TaskKind::Completion => self.gold_next_line.is_some() && self.gold_symbols.is_none(),
            TaskKind::Lm => self.gold_symbols.is_none() && self.gold_next_line.is_none(),
        };
        if !ok {
            return Err(Error::MalformedTask(format!(
                "record {:?}: gold payload does not match kind {:?}",
                self.id, self.kind
            )));
        }
        Ok(())
    }
}

pub fn write_jsonl<W: Write>(mut out: W, records: &[TaskRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<TaskRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TaskRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        record.validate()?;
        records.push(record);
    }
    Ok(records)
}

/// A model answer keyed by record id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub output: String,
}

pub fn read_predictions<R: BufRead>(input: R) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn symbol_record(id: &str, gold: Vec<String>) -> TaskRecord {
        TaskRecord {
            id: id.into(),
            kind: TaskKind::Symbol,
            prompt: "p".into(),
            gold_symbols: Some(gold),
            gold_next_line: None,
            token_length: 3,
            repo: "r".into(),
            path: "a.py".into(),
            template: None,
        }
    }

    #[test]
    fn kind_mismatch_rejected() {
        let mut r = symbol_record("x", vec![]);
        r.gold_next_line = Some("y".into());
        assert!(r.validate().is_err());
        let line = r#"{"id":"a","kind":"lm","prompt":"","gold_symbols":["f"],"token_length":0}"#;
        assert!(read_jsonl(line.as_bytes()).is_err());
    }

    #[test]
    fn field_names_on_the_wire() {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &[symbol_record("id0", vec!["f".into()])]).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        for key in ["id", "kind", "prompt", "gold_symbols", "token_length", "repo", "path"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert!(v.get("gold_next_line").is_none());
    }

    proptest! {
        #[test]
        fn jsonl_round_trip(
            ids in proptest::collection::vec("[a-z0-9/_.]{1,12}", 0..6),
            prompt in "\\PC{0,40}",
            names in proptest::collection::vec("[A-Za-z_][A-Za-z0-9_]{0,8}", 0..5),
            len in 0u64..100_000,
        ) {
            let records: Vec<TaskRecord> = ids
                .iter()
                .map(|id| TaskRecord { prompt: prompt.clone(), token_length: len, ..symbol_record(id, names.clone()) })
                .collect();
            let mut buf = Vec::new();
            write_jsonl(&mut buf, &records).unwrap();
            prop_assert_eq!(read_jsonl(buf.as_slice()).unwrap(), records);
        }
    }
}
