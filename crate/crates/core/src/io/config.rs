//! Flat run configuration: one `key = value` per line, `#` starts a comment
//! line, blank lines are ignored. Keys are CLI flag names without the dashes.

use std::path::Path;

use crate::error::{Error, Result};

use super::read_file;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigEntry {
    pub key: String,
    pub value: String,
    /// 1-based source line.
    pub line: usize,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
}

/// Entries in file order; repeated keys are kept (later ones take precedence
/// when applied).
pub fn parse_config(text: &str) -> Result<Vec<ConfigEntry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let Some((k, v)) = t.split_once('=') else {
            return Err(Error::Config {
                line,
                msg: format!("expected `key = value`, got {:?}", t),
            });
        };
        let key = k.trim();
        if !valid_key(key) {
            return Err(Error::Config {
                line,
                msg: format!("invalid key {:?}", key),
            });
        }
        out.push(ConfigEntry {
            key: key.to_string(),
            value: v.trim().to_string(),
            line,
        });
    }
    Ok(out)
}

pub fn read_config(path: &Path) -> Result<Vec<ConfigEntry>> {
    let text = String::from_utf8(read_file(path)?).map_err(|_| Error::Config {
        line: 0,
        msg: format!("{} is not UTF-8", path.display()),
    })?;
    parse_config(&text)
}

/// Renders pairs so that [`parse_config`] returns them unchanged.
pub fn format_config<K: AsRef<str>, V: AsRef<str>>(pairs: &[(K, V)]) -> Result<String> {
    let mut out = String::new();
    for (k, v) in pairs {
        let (k, v) = (k.as_ref(), v.as_ref());
        if !valid_key(k) {
            return Err(Error::param(format!("invalid config key {:?}", k)));
        }
        if v.contains('\n') || v.contains('\r') || v.trim() != v {
            return Err(Error::param(format!("config value for {} cannot be represented", k)));
        }
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(v);
        out.push('\n');
    }
    Ok(out)
}
