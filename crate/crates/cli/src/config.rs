//! Flat TOML run configuration with `key=value` overrides.
//!
//! Keys are the fields of [`ExperimentConfig`]; unknown keys are rejected.
//! Relative `ratings_csv` and `features_csv` paths in a file are resolved
//! against the directory holding that file.

use std::fs;
use std::path::{Path, PathBuf};

use ncalg::experiment::ExperimentConfig;
use toml::{Table, Value};

use crate::error::{CliError, Result};

const PATH_KEYS: [&str; 2] = ["ratings_csv", "features_csv"];

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| ncalg::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut table: Table = text.parse().map_err(|e: toml::de::Error| CliError::Config {
        path: path.to_path_buf(),
        line: e.span().map_or(1, |s| line_of(&text, s.start)),
        message: e.message().to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    for key in PATH_KEYS {
        if let Some(Value::String(p)) = table.get(key) {
            let resolved = base.join(p);
            table.insert(key.into(), Value::String(resolved.display().to_string()));
        }
    }
    Ok(table)
}

/// Parses `key=value`; the value is read as a TOML literal and falls back
/// to a bare string.
fn parse_override(item: &str) -> Result<(String, Value)> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Override(item.to_string()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::Override(item.to_string()));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

/// Merges the optional config file with overrides, later entries winning.
pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut table = match path {
        Some(p) => read_table(p)?,
        None => Table::new(),
    };
    for item in overrides {
        let (key, value) = parse_override(item)?;
        table.insert(key, value);
    }
    let json = serde_json::to_value(&table).map_err(|e| CliError::Schema(e.to_string()))?;
    let cfg: ExperimentConfig = serde_json::from_value(json).map_err(|e| CliError::Schema(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Output directory, created on demand.
pub fn out_dir(out: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out).map_err(|e| ncalg::Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    Ok(out.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_literals_and_bare_words() {
        assert_eq!(parse_override("epochs=3").unwrap().1, Value::Integer(3));
        assert_eq!(parse_override("noise = 0.5").unwrap().1, Value::Float(0.5));
        assert_eq!(
            parse_override("normalization=row").unwrap().1,
            Value::String("row".into())
        );
        assert!(matches!(parse_override("seeds=[1, 2]").unwrap().1, Value::Array(_)));
        assert!(parse_override("epochs").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = resolve(None, &["epoch=3".into()]).unwrap_err();
        assert!(err.to_string().contains("unknown field"), "{err}");
    }

    #[test]
    fn paths_resolve_against_the_config_directory() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "ratings_csv = \"data/r.csv\"\nepochs = 2\n").unwrap();
        let cfg = resolve(Some(&path), &[]).unwrap();
        assert_eq!(cfg.ratings_csv.unwrap(), dir.path().join("data/r.csv"));
        assert_eq!(cfg.epochs, 2);
    }

    #[test]
    fn toml_errors_carry_a_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        fs::write(&path, "epochs = 2\nnoise = = 1\n").unwrap();
        match resolve(Some(&path), &[]).unwrap_err() {
            CliError::Config { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
    }
}
