//! Versioned rule tables: classifier patterns and weights, the permissive
//! identifier list, the licence restrictiveness index, canonical licence
//! templates, card-parser vocabularies and the passthrough-licence family.
//!
//! The shipped tables are embedded in the binary; a rules directory given via
//! `--rules-dir` (or `LINEAGE_RULES_DIR`) overrides them file by file, so a
//! deployment can extend one table without copying the rest.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassWeights {
    pub policy_reference: f64,
    pub hard_base: f64,
    pub hard_step: f64,
    pub hard_cap: f64,
    pub soft_step: f64,
    pub soft_cap: f64,
    pub brand: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierRules {
    pub schema_version: u32,
    pub restriction_frames: Vec<String>,
    pub policy_references: Vec<String>,
    pub section_hints: Vec<String>,
    pub hard_domains: Vec<String>,
    pub soft_domains: Vec<String>,
    pub brands: Vec<String>,
    pub brand_context_terms: Vec<String>,
    pub exclusions: Vec<String>,
    pub weights: ClassWeights,
    pub section_window_chars: usize,
    pub threshold: f64,
    /// `false`: restrictive when total >= threshold ("at least 1.0");
    /// `true`: restrictive only when total > threshold ("exceeds 1.0").
    pub strict_threshold: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LriEntry {
    pub licence_name: String,
    pub lri: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LriFile {
    schema_version: u32,
    entries: Vec<LriEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NameListFile {
    schema_version: u32,
    names: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateFile {
    schema_version: u32,
    templates: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProsePattern {
    pub pattern: String,
    pub edge_type: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParserRules {
    pub schema_version: u32,
    pub benchmark_headers: Vec<String>,
    pub prose_patterns: Vec<ProsePattern>,
    pub quantization_suffixes: Vec<String>,
    pub official_orgs: Vec<String>,
    pub tag_operators: BTreeMap<String, String>,
}

/// All rule tables bundled together.
#[derive(Debug, Clone)]
pub struct RuleTables {
    pub classifier: ClassifierRules,
    /// Normalized permissive identifiers (the LRI-0.0 names).
    pub permissive: BTreeSet<String>,
    pub lri: Vec<LriEntry>,
    /// Normalized licence name -> canonical template text.
    pub templates: BTreeMap<String, String>,
    pub parser: ParserRules,
    /// Normalized passthrough-restrictive (OpenRAIL-family) licence names.
    pub passthrough: BTreeSet<String>,
}

const CLASSIFIER_JSON: &str = include_str!("../data/classifier_rules.json");
const PERMISSIVE_JSON: &str = include_str!("../data/permissive_licences.json");
const LRI_JSON: &str = include_str!("../data/lri_table.json");
const TEMPLATES_JSON: &str = include_str!("../data/licence_templates.json");
const PARSER_JSON: &str = include_str!("../data/parser_rules.json");
const PASSTHROUGH_JSON: &str = include_str!("../data/passthrough_licences.json");

pub const CLASSIFIER_FILE: &str = "classifier_rules.json";
pub const PERMISSIVE_FILE: &str = "permissive_licences.json";
pub const LRI_FILE: &str = "lri_table.json";
pub const TEMPLATES_FILE: &str = "licence_templates.json";
pub const PARSER_FILE: &str = "parser_rules.json";
pub const PASSTHROUGH_FILE: &str = "passthrough_licences.json";

/// Normalize a licence identifier for table lookups: trim + casefold.
pub fn normalize_licence_name(name: &str) -> String {
    name.trim().to_lowercase()
}

fn check_version(version: u32, what: &str) -> Result<()> {
    if version != SCHEMA_VERSION {
        return Err(Error::Rules(format!(
            "{what}: unsupported schema_version {version} (expected {SCHEMA_VERSION})"
        )));
    }
    Ok(())
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Rules(format!("{what}: {e}")))
}

fn read_override(dir: Option<&Path>, file: &str, builtin: &'static str) -> Result<String> {
    match dir {
        Some(d) => {
            let path = d.join(file);
            if path.is_file() {
                std::fs::read_to_string(&path).map_err(|e| Error::IoAt {
                    path: path.display().to_string(),
                    source: e,
                })
            } else {
                Ok(builtin.to_string())
            }
        }
        None => Ok(builtin.to_string()),
    }
}

impl RuleTables {
    /// The shipped tables.
    pub fn builtin() -> RuleTables {
        Self::load(None).expect("embedded rule tables are valid")
    }

    /// Load tables, overriding individual files from `dir` when present.
    pub fn load(dir: Option<&Path>) -> Result<RuleTables> {
        let classifier: ClassifierRules = parse_json(
            &read_override(dir, CLASSIFIER_FILE, CLASSIFIER_JSON)?,
            CLASSIFIER_FILE,
        )?;
        check_version(classifier.schema_version, CLASSIFIER_FILE)?;

        let permissive: NameListFile = parse_json(
            &read_override(dir, PERMISSIVE_FILE, PERMISSIVE_JSON)?,
            PERMISSIVE_FILE,
        )?;
        check_version(permissive.schema_version, PERMISSIVE_FILE)?;

        let lri: LriFile = parse_json(&read_override(dir, LRI_FILE, LRI_JSON)?, LRI_FILE)?;
        check_version(lri.schema_version, LRI_FILE)?;
        for e in &lri.entries {
            if !(0.0..=1.0).contains(&e.lri) {
                return Err(Error::Rules(format!(
                    "{LRI_FILE}: {} has lri {} outside [0,1]",
                    e.licence_name, e.lri
                )));
            }
        }

        let templates: TemplateFile = parse_json(
            &read_override(dir, TEMPLATES_FILE, TEMPLATES_JSON)?,
            TEMPLATES_FILE,
        )?;
        check_version(templates.schema_version, TEMPLATES_FILE)?;

        let parser: ParserRules =
            parse_json(&read_override(dir, PARSER_FILE, PARSER_JSON)?, PARSER_FILE)?;
        check_version(parser.schema_version, PARSER_FILE)?;

        let passthrough: NameListFile = parse_json(
            &read_override(dir, PASSTHROUGH_FILE, PASSTHROUGH_JSON)?,
            PASSTHROUGH_FILE,
        )?;
        check_version(passthrough.schema_version, PASSTHROUGH_FILE)?;

        Ok(RuleTables {
            classifier,
            permissive: permissive
                .names
                .iter()
                .map(|n| normalize_licence_name(n))
                .collect(),
            lri: lri.entries,
            templates: templates
                .templates
                .iter()
                .map(|(k, v)| (normalize_licence_name(k), v.clone()))
                .collect(),
            parser,
            passthrough: passthrough
                .names
                .iter()
                .map(|n| normalize_licence_name(n))
                .collect(),
        })
    }

    /// Template text for the first name that has one.
    pub fn template_for(&self, names: &[String]) -> Option<&str> {
        names
            .iter()
            .find_map(|n| self.templates.get(&normalize_licence_name(n)))
            .map(String::as_str)
    }

    pub fn is_passthrough_name(&self, name: &str) -> bool {
        self.passthrough.contains(&normalize_licence_name(name))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_tables_load() {
        let t = RuleTables::builtin();
        assert_eq!(t.lri.len(), 63);
        assert_eq!(t.permissive.len(), 33);
        assert_eq!(t.passthrough.len(), 4);
        assert!(t.templates.contains_key("mit"));
        assert!(!t.classifier.strict_threshold);
    }

    #[test]
    fn override_dir_replaces_single_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join(PASSTHROUGH_FILE),
            r#"{"schema_version":1,"names":["openrail","custom-rail"]}"#,
        )
        .unwrap();
        let t = RuleTables::load(Some(dir.path())).unwrap();
        assert!(t.is_passthrough_name("Custom-RAIL"));
        // untouched tables still come from the builtin set
        assert_eq!(t.lri.len(), 63);
    }

    #[test]
    fn bad_schema_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join(PERMISSIVE_FILE),
            r#"{"schema_version":9,"names":[]}"#,
        )
        .unwrap();
        assert!(RuleTables::load(Some(dir.path())).is_err());
    }
}
