//! `key<TAB>payload` lists: the input of the embedding exporters.

use indexmap::IndexMap;

use super::IngestError;

/// Parses one pair per line. Blank lines are skipped; keys must be unique
/// and the payload may be empty but must be present.
pub fn parse_key_tsv(text: &str) -> Result<Vec<(String, String)>, IngestError> {
    let mut seen = IndexMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let (key, payload) = line
            .split_once('\t')
            .ok_or_else(|| IngestError::parse(i + 1, "expected key<TAB>payload"))?;
        if seen.insert(key.to_string(), payload.to_string()).is_some() {
            return Err(IngestError::parse(i + 1, format!("duplicate key {key:?}")));
        }
    }
    Ok(seen.into_iter().collect())
}

/// Inverse of [`parse_key_tsv`]. Keys may not contain tabs or line breaks;
/// line breaks and tabs in payloads become spaces.
pub fn to_key_tsv<K: AsRef<str>, P: AsRef<str>>(pairs: &[(K, P)]) -> Result<String, IngestError> {
    let mut out = String::new();
    let mut seen = std::collections::HashSet::new();
    for (i, (k, p)) in pairs.iter().enumerate() {
        let k = k.as_ref();
        if k.is_empty() || k.contains(['\t', '\n', '\r']) {
            return Err(IngestError::parse(
                i + 1,
                format!("key {k:?} is empty or has a tab or line break"),
            ));
        }
        if !seen.insert(k) {
            return Err(IngestError::parse(i + 1, format!("duplicate key {k:?}")));
        }
        let p: String = p
            .as_ref()
            .chars()
            .map(|c| if matches!(c, '\t' | '\n' | '\r') { ' ' } else { c })
            .collect();
        out.push_str(k);
        out.push('\t');
        out.push_str(&p);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let pairs = vec![("a b", "first\tline\nsecond"), ("c", "")];
        let text = to_key_tsv(&pairs).unwrap();
        assert_eq!(text, "a b\tfirst line second\nc\t\n");
        let back = parse_key_tsv(&text).unwrap();
        assert_eq!(
            back,
            [
                ("a b".to_string(), "first line second".to_string()),
                ("c".into(), "".into())
            ]
        );
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(matches!(
            parse_key_tsv("a\tx\nnotab\n"),
            Err(IngestError::Parse { line: 2, .. })
        ));
        assert!(parse_key_tsv("a\tx\n\na\ty\n").is_err());
        assert!(to_key_tsv(&[("a\tb", "x")]).is_err());
        assert!(to_key_tsv(&[("a", "x"), ("a", "y")]).is_err());
    }
}
