//! Translation prompt rendering and the language registry.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_TABLE: &str = include_str!("../data/languages.csv");

/// Language codes of the 55 WMT24++ English-source pairs.
pub const WMT24PP_TARGETS: [&str; 55] = [
    "ar-EG", "ar-SA", "bg-BG", "bn-IN", "ca-ES", "cs-CZ", "da-DK", "de-DE", "el-GR", "es-MX",
    "et-EE", "fa-IR", "fi-FI", "fil-PH", "fr-CA", "fr-FR", "gu-IN", "he-IL", "hi-IN", "hr-HR",
    "hu-HU", "id-ID", "is-IS", "it-IT", "ja-JP", "kn-IN", "ko-KR", "lt-LT", "lv-LV", "ml-IN",
    "mr-IN", "nl-NL", "no-NO", "pa-IN", "pl-PL", "pt-BR", "pt-PT", "ro-RO", "ru-RU", "sk-SK",
    "sl-SI", "sr-RS", "sv-SE", "sw-KE", "sw-TZ", "ta-IN", "te-IN", "th-TH", "tr-TR", "uk-UA",
    "ur-PK", "vi-VN", "zh-CN", "zh-TW", "zu-ZA",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LangEntry {
    pub code: String,
    pub display_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptRequest {
    pub source: LangEntry,
    pub target: LangEntry,
    pub text: String,
}

#[derive(Debug, Clone, Default)]
pub struct Registry {
    entries: BTreeMap<String, LangEntry>,
}

#[derive(Debug, Deserialize)]
struct Row {
    code: String,
    name: String,
}

impl Registry {
    /// The bundled table: WMT24++ targets plus the wider SFT language list.
    pub fn builtin() -> Self {
        Self::from_reader(DEFAULT_TABLE.as_bytes()).expect("bundled language table is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file)
    }

    /// Parses a `code,name` CSV table. A header row is optional.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut entries = BTreeMap::new();
        for (i, rec) in rdr.deserialize::<Row>().enumerate() {
            let row = rec.map_err(|e| Error::Registry(format!("row {}: {e}", i + 1)))?;
            if i == 0 && row.code == "code" && row.name == "name" {
                continue;
            }
            if row.code.is_empty() || row.name.is_empty() {
                return Err(Error::Registry(format!("row {}: empty code or name", i + 1)));
            }
            if entries.contains_key(&row.code) {
                return Err(Error::Registry(format!("duplicate language code `{}`", row.code)));
            }
            entries.insert(
                row.code.clone(),
                LangEntry {
                    code: row.code,
                    display_name: row.name,
                },
            );
        }
        Ok(Self { entries })
    }

    pub fn lookup(&self, code: &str) -> Result<&LangEntry> {
        self.entries
            .get(code)
            .ok_or_else(|| Error::UnknownLanguage(code.to_string()))
    }

    pub fn contains(&self, code: &str) -> bool {
        self.entries.contains_key(code)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LangEntry> {
        self.entries.values()
    }

    /// Builds a request by resolving both codes against the registry.
    pub fn request(&self, source: &str, target: &str, text: impl Into<String>) -> Result<PromptRequest> {
        Ok(PromptRequest {
            source: self.lookup(source)?.clone(),
            target: self.lookup(target)?.clone(),
            text: text.into(),
        })
    }
}

/// Renders the translation prompt. The user text follows three newlines and
/// is never scanned for placeholders.
pub fn render_prompt(req: &PromptRequest) -> Result<String> {
    if req.text.is_empty() {
        return Err(Error::Validation("prompt text must not be empty".into()));
    }
    let src = &req.source.display_name;
    let src_code = &req.source.code;
    let tgt = &req.target.display_name;
    let tgt_code = &req.target.code;
    Ok(format!(
        "You are a professional {src} ({src_code}) to {tgt} ({tgt_code}) translator. \
         Your goal is to accurately convey the meaning and nuances of the original {src} text \
         while adhering to {tgt} grammar, vocabulary, and cultural sensitivities. \
         Produce only the {tgt} translation, without any additional explanations or commentary. \
         Please translate the following {src} text into {tgt}:\n\n\n{}",
        req.text
    ))
}

/// Recovers the user text from a rendered prompt.
pub fn prompt_text(prompt: &str) -> &str {
    prompt.split_once("\n\n\n").map_or(prompt, |(_, text)| text)
}
