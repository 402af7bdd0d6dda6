//! JSONL readers and writers plus atomic file replacement.

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::TokenScoreSequence;

/// Writes `bytes` to a temporary sibling of `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp-{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("jsonl serialize"));
        out.push('\n');
    }
    out
}

/// Parses JSONL, skipping blank lines; errors carry the 1-based line number.
pub fn from_jsonl<T: DeserializeOwned>(content: &str) -> Result<Vec<T>> {
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Jsonl {
                line: i + 1,
                source: Box::new(Error::Json(e)),
            })
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    write_atomic(path, to_jsonl(items).as_bytes())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_jsonl(&content)
}

/// Reads token score sequences and checks every record's invariants.
pub fn read_score_file(path: &Path) -> Result<Vec<TokenScoreSequence>> {
    let seqs: Vec<TokenScoreSequence> = read_jsonl(path)?;
    for (i, s) in seqs.iter().enumerate() {
        s.validate().map_err(|e| Error::Jsonl {
            line: i + 1,
            source: Box::new(e),
        })?;
    }
    Ok(seqs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Role;

    #[test]
    fn score_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/scores.jsonl");
        let seqs = vec![
            TokenScoreSequence::from_raw("a", "m", Role::DOri, vec![1, 2], &[-0.1, -2.0]).unwrap(),
            TokenScoreSequence::from_raw("b", "m", Role::DAd1, vec![4], &[f64::NEG_INFINITY])
                .unwrap(),
        ];
        write_jsonl(&path, &seqs).unwrap();
        assert_eq!(read_score_file(&path).unwrap(), seqs);
    }

    #[test]
    fn bad_line_reports_line_number() {
        let content = "{\"sequence_id\":\"a\",\"model_id\":\"m\",\"role\":\"other\",\"token_ids\":[1],\"logprobs\":[-1]}\nnot json\n";
        match from_jsonl::<TokenScoreSequence>(content) {
            Err(Error::Jsonl { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let empty: Vec<TokenScoreSequence> = from_jsonl("").unwrap();
        assert!(empty.is_empty());
    }
}
