use std::path::{Path, PathBuf};

use mtdistill_core::backend::BackendSettings;
use mtdistill_core::corpus::IngestMode;
use mtdistill_core::distill::DistillConfig;
use mtdistill_core::metrics::{ChrFConfig, MqmWeightTable};
use mtdistill_core::mixture::MixtureEntry;
use mtdistill_core::rewards::RewardsConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub corpus: Option<CorpusSection>,
    #[serde(default)]
    pub prompting: PromptingSection,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub distill: DistillConfig,
    #[serde(default)]
    pub rewards: RewardsConfig,
    pub mixture: Option<MixtureSection>,
    pub evalprep: Option<EvalprepSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub source_lang: String,
    pub target_langs: Vec<String>,
    #[serde(default)]
    pub inputs: Vec<PathBuf>,
    #[serde(default = "sentence")]
    pub mode: IngestMode,
    pub blob_cap: Option<usize>,
    pub boundaries: Option<Vec<usize>>,
    #[serde(default = "proportional")]
    pub quota: String,
    pub target_size: usize,
}

fn sentence() -> IngestMode {
    IngestMode::Sentence
}

fn proportional() -> String {
    "proportional".into()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptingSection {
    /// `code,name` CSV replacing the built-in language table.
    pub languages: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    #[serde(default)]
    pub kind: BackendKind,
    /// Seed of the in-process mock; defaults to the global seed.
    pub mock_seed: Option<u64>,
    #[serde(default)]
    pub http: BackendSettings,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    #[serde(default)]
    pub chrf: ChrFConfig,
    #[serde(default)]
    pub mqm: MqmWeightTable,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSection {
    pub total_tokens: usize,
    pub entries: Vec<MixtureEntry>,
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalprepSection {
    pub lang_pair: String,
    pub systems: Vec<String>,
    pub raters: Vec<String>,
}

/// A parsed config plus the directory relative paths resolve against.
#[derive(Debug, Clone, Default)]
pub struct Loaded {
    pub config: PipelineConfig,
    pub base: PathBuf,
}

impl Loaded {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }
}

fn key_of(path: &str, message: &str) -> String {
    // serde reports the missing or unknown field only in the message text.
    let field = ["missing field `", "unknown field `"]
        .iter()
        .find_map(|p| message.split_once(p))
        .and_then(|(_, rest)| rest.split_once('`'))
        .map(|(f, _)| f);
    match (path, field) {
        (".", Some(f)) | ("", Some(f)) => f.to_string(),
        (p, Some(f)) if message.starts_with("missing") => format!("{p}.{f}"),
        (p, Some(f)) => {
            if p.ends_with(f) {
                p.to_string()
            } else {
                format!("{p}.{f}")
            }
        }
        (p, None) => p.to_string(),
    }
}

pub fn parse(text: &str) -> Result<PipelineConfig, CliError> {
    let de = toml::Deserializer::new(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let message = e.inner().message().trim().to_string();
        CliError::Config {
            key: Some(key_of(&path, &message)),
            message,
        }
    })
}

pub fn load(path: Option<&Path>) -> Result<Loaded, CliError> {
    let Some(path) = path else {
        return Ok(Loaded {
            config: PipelineConfig::default(),
            base: PathBuf::from("."),
        });
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
        key: None,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    let config = parse(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let loaded = Loaded { config, base };
    loaded.validate()?;
    Ok(loaded)
}

impl Loaded {
    fn validate(&self) -> Result<(), CliError> {
        let c = &self.config;
        let bad = |key: String, message: String| CliError::Config { key: Some(key), message };
        if let Some(corpus) = &c.corpus {
            for (i, p) in corpus.inputs.iter().enumerate() {
                let full = self.resolve(p);
                if !full.exists() {
                    return Err(bad(format!("corpus.inputs[{i}]"), format!("{} does not exist", full.display())));
                }
            }
            if corpus.target_langs.is_empty() {
                return Err(bad("corpus.target_langs".into(), "at least one target language is required".into()));
            }
        }
        if let Some(p) = &c.prompting.languages {
            if !self.resolve(p).exists() {
                return Err(bad("prompting.languages".into(), format!("{} does not exist", p.display())));
            }
        }
        if c.jobs == Some(0) {
            return Err(bad("jobs".into(), "jobs must be >= 1".into()));
        }
        c.metrics
            .mqm
            .validate()
            .map_err(|e| bad("metrics.mqm".into(), e.to_string()))?;
        Ok(())
    }

    /// A section that the chosen stage cannot run without.
    pub fn require<'a, T>(&self, section: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        section.as_ref().ok_or_else(|| CliError::Config {
            key: Some(name.to_string()),
            message: format!("missing [{name}] section"),
        })
    }
}
