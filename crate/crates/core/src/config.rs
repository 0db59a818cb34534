//! Flat `key=value` configuration files.
//!
//! One pair per line, `#` starts a comment, blank lines ignored. Keys are
//! unique; later code maps them onto typed fields and rejects unknown
//! names so typos fail loudly instead of silently using a default.

use std::path::Path;

use crate::error::{Error, Result};

/// Parse `key=value` lines. Whitespace around keys and values is trimmed;
/// values may contain `=`. Duplicate keys are an error.
pub fn parse_key_values(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::format(path, lineno, format!("expected key=value, got {line:?}"))
        })?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(Error::format(path, lineno, "empty key"));
        }
        if pairs.iter().any(|(k, _)| k == key) {
            return Err(Error::format(
                path,
                lineno,
                format!("duplicate key {key:?}"),
            ));
        }
        pairs.push((key.to_string(), value.to_string()));
    }
    Ok(pairs)
}

/// Read and parse a config file.
pub fn load_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_key_values(&text, path)
}

/// Render pairs back to the canonical one-per-line form.
pub fn render_key_values(pairs: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        s.push_str(k);
        s.push('=');
        s.push_str(v);
        s.push('\n');
    }
    s
}

/// Typed field parsers with uniform error wording.
pub fn parse_field<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for key {key:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(text: &str) -> Result<Vec<(String, String)>> {
        parse_key_values(text, Path::new("test.cfg"))
    }

    #[test]
    fn parses_pairs_comments_and_blanks() {
        let got = p("# header\n\nalpha = 3\nname=hello world # trailing\npath=a=b\n").unwrap();
        assert_eq!(
            got,
            vec![
                ("alpha".into(), "3".into()),
                ("name".into(), "hello world".into()),
                ("path".into(), "a=b".into()),
            ]
        );
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(p("no equals sign\n").is_err());
        assert!(p("=value\n").is_err());
        let err = p("a=1\na=2\n").unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
        assert!(err.contains("test.cfg:2"), "{err}");
    }

    #[test]
    fn round_trips_through_render() {
        let pairs = p("a=1\nb=two words\n").unwrap();
        assert_eq!(render_key_values(&pairs), "a=1\nb=two words\n");
    }

    #[test]
    fn typed_parse_reports_key() {
        let v: Result<usize> = parse_field("epochs", "ten");
        assert!(v.unwrap_err().to_string().contains("epochs"));
        let v: usize = parse_field("epochs", "10").unwrap();
        assert_eq!(v, 10);
    }
}
