//! Minimal `key = value` config parser used by the synthetic-scene and
//! planner-backend config files. Lines starting with `#` and blank lines are
//! ignored; duplicate keys are errors.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KvError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    BadLine { line: usize, text: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
}

pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, KvError> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or_else(|| KvError::BadLine {
            line,
            text: trimmed.to_string(),
        })?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(KvError::BadLine {
                line,
                text: trimmed.to_string(),
            });
        }
        if map.contains_key(&key) {
            return Err(KvError::DuplicateKey { line, key });
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_trims() {
        let map = parse_key_values("# comment\n\n a = 1 \nb=two\n").unwrap();
        assert_eq!(map["a"], "1");
        assert_eq!(map["b"], "two");
        assert_eq!(map.len(), 2);
    }

    #[test]
    fn rejects_bad_lines_and_duplicates() {
        assert!(matches!(
            parse_key_values("novalue\n"),
            Err(KvError::BadLine { line: 1, .. })
        ));
        assert!(matches!(
            parse_key_values("a=1\na=2\n"),
            Err(KvError::DuplicateKey { line: 2, .. })
        ));
    }
}
