//! Prediction text normalization: lowercase, shorthand expansion, punctuation
//! stripping, whitespace collapsing.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExpansionMapError {
    #[error("failed to read expansion map {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse expansion map {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("shorthand key `{0}` must be a non-empty lowercase alphanumeric token")]
    BadKey(String),
    #[error("expansion for `{0}` is empty")]
    EmptyValue(String),
    #[error("expansion for `{key}` contains shorthand `{conflicting}` as a whole word; the map would re-expand its own output")]
    SelfTriggering { key: String, conflicting: String },
}

/// Shorthand-to-expansion map applied to whole-word occurrences of each key,
/// where a word is a maximal run of alphanumeric characters.
///
/// Keys are single alphanumeric tokens, and no expansion text may contain a
/// shorthand as a whole word (checked under both punctuation modes). Those
/// two rules are what make normalization idempotent.
#[derive(Debug, Clone)]
pub struct ExpansionMap {
    entries: BTreeMap<String, String>,
}

impl ExpansionMap {
    pub fn new(entries: BTreeMap<String, String>) -> Result<Self, ExpansionMapError> {
        for (key, value) in &entries {
            if key.is_empty() || !key.chars().all(|c| c.is_alphanumeric() && !c.is_uppercase()) {
                return Err(ExpansionMapError::BadKey(key.clone()));
            }
            if value.trim().is_empty() {
                return Err(ExpansionMapError::EmptyValue(key.clone()));
            }
        }
        for (key, value) in &entries {
            for strict in [false, true] {
                let cleaned = collapse(&strip_non_alphanumeric(&value.to_lowercase(), strict));
                for word in cleaned.split(' ') {
                    if entries.contains_key(word) {
                        return Err(ExpansionMapError::SelfTriggering {
                            key: key.clone(),
                            conflicting: word.to_string(),
                        });
                    }
                }
            }
        }
        Ok(ExpansionMap { entries })
    }

    /// The built-in shorthands.
    pub fn default_map() -> Self {
        let mut entries = BTreeMap::new();
        entries.insert("chf".to_string(), "congestive heart failure".to_string());
        entries.insert(
            "gerd".to_string(),
            "gastroesophageal reflux disease".to_string(),
        );
        Self::new(entries).expect("default map is valid")
    }

    /// Load a JSON object of shorthand -> expansion.
    pub fn load(path: &Path) -> Result<Self, ExpansionMapError> {
        let text = std::fs::read_to_string(path).map_err(|source| ExpansionMapError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let entries: BTreeMap<String, String> =
            serde_json::from_str(&text).map_err(|source| ExpansionMapError::Parse {
                path: path.display().to_string(),
                source,
            })?;
        Self::new(entries)
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    /// Replace every maximal alphanumeric run equal to a shorthand with its
    /// expansion. Expansions are inserted verbatim and never rescanned.
    fn expand(&self, text: &str) -> String {
        let mut out = String::with_capacity(text.len());
        let mut token = String::new();
        for c in text.chars() {
            if c.is_alphanumeric() {
                token.push(c);
            } else {
                self.flush_token(&mut out, &mut token);
                out.push(c);
            }
        }
        self.flush_token(&mut out, &mut token);
        out
    }

    fn flush_token(&self, out: &mut String, token: &mut String) {
        if token.is_empty() {
            return;
        }
        match self.entries.get(token.as_str()) {
            Some(value) => out.push_str(value),
            None => out.push_str(token),
        }
        token.clear();
    }
}

impl Default for ExpansionMap {
    fn default() -> Self {
        Self::default_map()
    }
}

fn strip_non_alphanumeric(text: &str, strict_removal: bool) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        if c.is_alphanumeric() {
            out.push(c);
        } else if c.is_whitespace() || !strict_removal {
            out.push(' ');
        }
        // strict_removal: non-alphanumeric, non-whitespace chars vanish,
        // fusing adjacent tokens ("type-2" -> "type2").
    }
    out
}

fn collapse(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// The normalization pipeline with its two configuration points.
#[derive(Debug, Clone, Default)]
pub struct TextNormalizer {
    map: ExpansionMap,
    /// Delete punctuation instead of replacing it with a space.
    strict_removal: bool,
}

impl TextNormalizer {
    pub fn new(map: ExpansionMap, strict_removal: bool) -> Self {
        TextNormalizer {
            map,
            strict_removal,
        }
    }

    /// lowercase -> whole-word shorthand expansion -> punctuation to space
    /// (or deletion under strict removal) -> collapse whitespace -> trim.
    ///
    /// Idempotent under the default mode. Strict removal can fuse punctuated
    /// tokens into a shorthand ("c-h-f" -> "chf"), which a second pass would
    /// then expand, so idempotence is only guaranteed for the default
    /// pipeline.
    pub fn normalize(&self, text: &str) -> String {
        let lowered = text.to_lowercase();
        let expanded = self.map.expand(&lowered);
        collapse(&strip_non_alphanumeric(&expanded, self.strict_removal))
    }
}

/// Normalize with an explicit map and the default space-replacement mode.
pub fn normalize(text: &str, map: &ExpansionMap) -> String {
    let mut out = map.expand(&text.to_lowercase());
    out = strip_non_alphanumeric(&out, false);
    collapse(&out)
}
