//! Run-config loading. Every struct rejects unknown keys; syntax and schema
//! errors carry the line and column reported by the JSON parser.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;

use crate::error::{CliError, CliResult};

/// A parsed config and the file it came from.
pub struct Loaded<T> {
    pub path: PathBuf,
    pub value: T,
}

impl<T> Loaded<T> {
    /// Wraps a semantic error about this file as a config error.
    pub fn invalid(&self, at: &str, message: impl std::fmt::Display) -> CliError {
        CliError::invalid(&self.path, format!("{at}: {message}"))
    }
}

pub fn load<T: DeserializeOwned>(path: &Path) -> CliResult<Loaded<T>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::invalid(path, format!("cannot read config: {e}")))?;
    parse(path, &text).map(|value| Loaded {
        path: path.to_path_buf(),
        value,
    })
}

pub fn parse<T: DeserializeOwned>(path: &Path, text: &str) -> CliResult<T> {
    serde_json::from_str(text).map_err(|e| {
        let full = e.to_string();
        let message = match full.rsplit_once(" at line ") {
            Some((head, _)) => head.to_string(),
            None => full,
        };
        CliError::Syntax {
            path: path.display().to_string(),
            line: e.line(),
            column: e.column(),
            message,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Probe {
        #[allow(dead_code)]
        t: f64,
    }

    #[test]
    fn syntax_errors_report_line_and_column() {
        let err = parse::<Probe>(Path::new("c.json"), "{\n  \"t\": 1.0,\n}").unwrap_err();
        match err {
            CliError::Syntax { line, column, .. } => assert_eq!((line, column), (3, 1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let err = parse::<Probe>(Path::new("c.json"), "{\"t\": 1.0,\n \"x\": 2}").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let text = err.to_string();
        assert!(text.starts_with("c.json:2:"), "{text}");
        assert!(text.contains("unknown field `x`"), "{text}");
    }
}
