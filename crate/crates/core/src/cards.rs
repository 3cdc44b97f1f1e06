//! Derivation-edge extraction from repository metadata: YAML front-matter and
//! tags, README prose/links/tables, and repository-name patterns, followed by
//! entity resolution, edge typing with tier-aware conflict resolution, and
//! noise filtering.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{family_of, DerivationEdge, EdgeEvidence, EdgeType, Family};
use crate::rules::ParserRules;

/// A candidate reference before entity resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawReference {
    pub source_repo: String,
    pub target_string: String,
    pub evidence_source: EdgeEvidence,
    pub suggested_type: Option<EdgeType>,
    /// Dataset references are parsed but excluded from edge typing.
    pub is_dataset: bool,
    /// Found in a bullet-list context (sibling-noise candidate).
    pub list_context: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseWarning {
    pub repo: String,
    pub message: String,
}

/// A reference whose target resolved to a canonical id in the universe.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedReference {
    pub child: String,
    pub parent: String,
    pub evidence_source: EdgeEvidence,
    pub suggested_type: Option<EdgeType>,
    pub is_dataset: bool,
    pub list_context: bool,
}

/// Read-only id index used for resolution; built once, shared by all
/// per-repository parses.
#[derive(Debug, Clone)]
pub struct Universe {
    lower_to_canonical: HashMap<String, String>,
    /// normalized basename -> canonical ids, official orgs only
    official_basenames: HashMap<String, Vec<String>>,
    quant_suffixes: Vec<String>,
}

impl Universe {
    pub fn new<I, S>(ids: I, rules: &ParserRules) -> Universe
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let official: BTreeSet<String> =
            rules.official_orgs.iter().map(|o| o.to_lowercase()).collect();
        let quant_suffixes: Vec<String> = rules
            .quantization_suffixes
            .iter()
            .map(|s| s.to_lowercase())
            .collect();
        let mut lower_to_canonical = HashMap::new();
        let mut official_basenames: HashMap<String, Vec<String>> = HashMap::new();
        for id in ids {
            let id = id.as_ref();
            let lower = id.to_lowercase();
            lower_to_canonical
                .entry(lower.clone())
                .or_insert_with(|| id.to_string());
            if let Some((org, base)) = lower.split_once('/') {
                if official.contains(org) {
                    let norm = strip_quant_suffixes(base, &quant_suffixes);
                    let entry = official_basenames.entry(norm).or_default();
                    if !entry.iter().any(|e| e == id) {
                        entry.push(id.to_string());
                    }
                }
            }
        }
        for v in official_basenames.values_mut() {
            v.sort();
        }
        Universe {
            lower_to_canonical,
            official_basenames,
            quant_suffixes,
        }
    }

    pub fn contains(&self, id: &str) -> bool {
        self.lower_to_canonical.contains_key(&id.to_lowercase())
    }

    pub fn canonical(&self, id: &str) -> Option<&str> {
        self.lower_to_canonical
            .get(&id.to_lowercase())
            .map(String::as_str)
    }
}

fn strip_quant_suffixes(base: &str, suffixes: &[String]) -> String {
    let mut b = base.to_lowercase();
    let mut changed = true;
    while changed {
        changed = false;
        for s in suffixes {
            if b.len() > s.len() && b.ends_with(s.as_str()) {
                b.truncate(b.len() - s.len());
                changed = true;
            }
        }
    }
    b
}

/// Exact match against the universe, then fuzzy match restricted to
/// official-organization repositories under case folding and quantization
/// suffix stripping. Ambiguous fuzzy candidates stay unresolved.
pub fn resolve_entity(target: &str, universe: &Universe) -> Option<String> {
    let cleaned = clean_target(target);
    if cleaned.is_empty() {
        return None;
    }
    if let Some(c) = universe.canonical(&cleaned) {
        return Some(c.to_string());
    }
    let base = cleaned.rsplit('/').next().unwrap_or(&cleaned);
    let norm = strip_quant_suffixes(base, &universe.quant_suffixes);
    match universe.official_basenames.get(&norm) {
        Some(hits) if hits.len() == 1 => Some(hits[0].clone()),
        _ => None,
    }
}

fn clean_target(target: &str) -> String {
    let mut t = target.trim();
    for prefix in [
        "https://huggingface.co/",
        "http://huggingface.co/",
        "https://hf.co/",
    ] {
        if let Some(rest) = t.strip_prefix(prefix) {
            t = rest;
        }
    }
    let t = t.trim_matches(|c: char| c == '`' || c == '<' || c == '>' || c == '"' || c == '\'');
    // keep only org/name from deeper URL paths
    let mut segments = t.split('/');
    let out = match (segments.next(), segments.next()) {
        (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => format!("{a}/{b}"),
        _ => t.to_string(),
    };
    out.trim_end_matches(['.', ',', ';', ':', ')']).to_string()
}

/// Compiled card-parsing vocabulary.
pub struct CardParser {
    rules: ParserRules,
    prose: Vec<(Regex, EdgeType)>,
    link_re: Regex,
    id_re: Regex,
    benchmark_headers: Vec<String>,
}

impl CardParser {
    pub fn new(rules: &ParserRules) -> Result<CardParser> {
        let mut prose = Vec::new();
        for p in &rules.prose_patterns {
            let re = Regex::new(&format!(r"(?i)\b{}\b", p.pattern))
                .map_err(|e| Error::Rules(format!("prose pattern {:?}: {e}", p.pattern)))?;
            prose.push((re, EdgeType::parse(&p.edge_type)?));
        }
        Ok(CardParser {
            prose,
            link_re: Regex::new(r"\[[^\]]*\]\(\s*<?([^)\s>]+)").expect("static regex"),
            id_re: Regex::new(r"\b[A-Za-z0-9][A-Za-z0-9_.\-]*/[A-Za-z0-9][A-Za-z0-9_.\-]*")
                .expect("static regex"),
            benchmark_headers: rules
                .benchmark_headers
                .iter()
                .map(|h| h.to_lowercase())
                .collect(),
            rules: rules.clone(),
        })
    }

    /// YAML front-matter fields and repository tags. Malformed YAML degrades
    /// to tag-only extraction with a warning record.
    pub fn parse_structured(
        &self,
        yaml_text: &str,
        tags: &[String],
        self_id: &str,
    ) -> (Vec<RawReference>, Vec<ParseWarning>) {
        let mut refs = Vec::new();
        let mut warnings = Vec::new();

        if !yaml_text.trim().is_empty() {
            match serde_yaml::from_str::<serde_yaml::Value>(yaml_text) {
                Ok(value) => {
                    for key in ["base_model", "base_models"] {
                        for target in yaml_strings(value.get(key)) {
                            refs.push(RawReference {
                                source_repo: self_id.to_string(),
                                target_string: target,
                                evidence_source: EdgeEvidence::YamlField,
                                suggested_type: None,
                                is_dataset: false,
                                list_context: false,
                            });
                        }
                    }
                    for key in ["datasets", "dataset"] {
                        for target in yaml_strings(value.get(key)) {
                            refs.push(RawReference {
                                source_repo: self_id.to_string(),
                                target_string: target,
                                evidence_source: EdgeEvidence::YamlField,
                                suggested_type: None,
                                is_dataset: true,
                                list_context: false,
                            });
                        }
                    }
                }
                Err(e) => warnings.push(ParseWarning {
                    repo: self_id.to_string(),
                    message: format!("yaml front-matter unparseable, tags only: {e}"),
                }),
            }
        }

        for tag in tags {
            let parts: Vec<&str> = tag.splitn(3, ':').collect();
            match parts.as_slice() {
                ["base_model", op, target] if !target.is_empty() => {
                    let suggested = self
                        .rules
                        .tag_operators
                        .get(&op.to_lowercase())
                        .and_then(|t| EdgeType::parse(t).ok());
                    refs.push(RawReference {
                        source_repo: self_id.to_string(),
                        target_string: (*target).to_string(),
                        evidence_source: EdgeEvidence::Tag,
                        suggested_type: suggested,
                        is_dataset: false,
                        list_context: false,
                    });
                }
                ["base_model", target] if target.contains('/') => {
                    refs.push(RawReference {
                        source_repo: self_id.to_string(),
                        target_string: (*target).to_string(),
                        evidence_source: EdgeEvidence::Tag,
                        suggested_type: None,
                        is_dataset: false,
                        list_context: false,
                    });
                }
                ["dataset", target] | ["datasets", target] if !target.is_empty() => {
                    refs.push(RawReference {
                        source_repo: self_id.to_string(),
                        target_string: (*target).to_string(),
                        evidence_source: EdgeEvidence::Tag,
                        suggested_type: None,
                        is_dataset: true,
                        list_context: false,
                    });
                }
                _ => {}
            }
        }

        refs.retain(|r| !r.target_string.eq_ignore_ascii_case(self_id));
        (refs, warnings)
    }

    /// README body: inline links, typed prose patterns, markdown tables with
    /// benchmark-table skipping and self-row targeting, and list-context
    /// tracking for the sibling-noise filter.
    pub fn parse_readme(&self, markdown: &str, self_id: &str) -> Vec<RawReference> {
        let body = strip_front_matter(markdown);
        let lines = classify_lines(body);
        let mut refs: Vec<RawReference> = Vec::new();

        // tables: benchmark check on the header row, then self-row targeting
        let mut t = 0;
        while t < lines.len() {
            if lines[t].kind != LineKind::Table {
                t += 1;
                continue;
            }
            let start = t;
            while t < lines.len() && lines[t].kind == LineKind::Table {
                t += 1;
            }
            let block = &lines[start..t];
            let header_cells: Vec<String> = split_cells(block[0].text);
            let is_benchmark = header_cells.iter().any(|c| {
                self.benchmark_headers
                    .iter()
                    .any(|h| c.to_lowercase().contains(h))
            });
            if is_benchmark {
                continue; // benchmark tables contribute nothing
            }
            let self_lower = self_id.to_lowercase();
            for row in &block[1..] {
                if is_separator_row(row.text) {
                    continue;
                }
                if !row.text.to_lowercase().contains(&self_lower) {
                    continue; // only rows naming the current repository
                }
                for target in self.targets_in(row.text) {
                    refs.push(RawReference {
                        source_repo: self_id.to_string(),
                        target_string: target,
                        evidence_source: EdgeEvidence::ReadmeTable,
                        suggested_type: None,
                        is_dataset: false,
                        list_context: false,
                    });
                }
            }
        }

        // links and typed prose outside tables
        for line in &lines {
            match line.kind {
                LineKind::Table => continue,
                LineKind::List | LineKind::Text => {}
            }
            let list_context = line.kind == LineKind::List;
            for cap in self.link_re.captures_iter(line.text) {
                let url = cap.get(1).unwrap().as_str();
                if let Some((target, is_dataset)) = hf_link_target(url) {
                    refs.push(RawReference {
                        source_repo: self_id.to_string(),
                        target_string: target,
                        evidence_source: EdgeEvidence::ReadmeLink,
                        suggested_type: None,
                        is_dataset,
                        list_context,
                    });
                }
            }
            for (re, edge_type) in &self.prose {
                for m in re.find_iter(line.text) {
                    let mut window_end = (m.end() + 160).min(line.text.len());
                    while !line.text.is_char_boundary(window_end) {
                        window_end -= 1;
                    }
                    let window = &line.text[m.end()..window_end];
                    if let Some(target) = self.first_target_in(window) {
                        refs.push(RawReference {
                            source_repo: self_id.to_string(),
                            target_string: target,
                            evidence_source: EdgeEvidence::ReadmeProse,
                            suggested_type: Some(*edge_type),
                            is_dataset: false,
                            list_context,
                        });
                    }
                }
            }
        }

        refs.retain(|r| !r.target_string.eq_ignore_ascii_case(self_id));
        refs
    }

    fn targets_in(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut link_spans = Vec::new();
        for cap in self.link_re.captures_iter(text) {
            let whole = cap.get(0).unwrap();
            link_spans.push((whole.start(), whole.end()));
            if let Some((target, false)) = hf_link_target(cap.get(1).unwrap().as_str()) {
                out.push(target);
            }
        }
        for m in self.id_re.find_iter(text) {
            if link_spans.iter().any(|&(s, e)| m.start() >= s && m.start() < e) {
                continue; // already captured via the link
            }
            let cleaned = clean_target(m.as_str());
            if looks_like_model_id(&cleaned) {
                out.push(cleaned);
            }
        }
        out
    }

    fn first_target_in(&self, window: &str) -> Option<String> {
        let link = self
            .link_re
            .captures(window)
            .and_then(|c| hf_link_target(c.get(1).unwrap().as_str()))
            .and_then(|(t, is_dataset)| (!is_dataset).then_some(t));
        let link_pos = self
            .link_re
            .find(window)
            .map(|m| m.start())
            .unwrap_or(usize::MAX);
        let bare = self
            .id_re
            .find(window)
            .map(|m| (m.start(), clean_target(m.as_str())));
        match (link, bare) {
            (Some(l), Some((bpos, b))) => {
                if bpos < link_pos && looks_like_model_id(&b) {
                    Some(b)
                } else {
                    Some(l)
                }
            }
            (Some(l), None) => Some(l),
            (None, Some((_, b))) if looks_like_model_id(&b) => Some(b),
            _ => None,
        }
    }

    /// Quantization-suffix candidates: `org/model-GGUF` suggests a
    /// quantization edge toward the suffix-stripped name.
    pub fn name_pattern_refs(&self, repo_id: &str, universe: &Universe) -> Vec<RawReference> {
        let Some((org, base)) = repo_id.split_once('/') else {
            return Vec::new();
        };
        let lower = base.to_lowercase();
        let stripped = strip_quant_suffixes(&lower, &universe.quant_suffixes);
        if stripped == lower {
            return Vec::new(); // no quantization suffix
        }
        let candidate = format!("{org}/{stripped}");
        if resolve_entity(&candidate, universe).is_none() {
            return Vec::new();
        }
        vec![RawReference {
            source_repo: repo_id.to_string(),
            target_string: candidate,
            evidence_source: EdgeEvidence::NamePattern,
            suggested_type: Some(EdgeType::Quantization),
            is_dataset: false,
            list_context: false,
        }]
    }
}

fn yaml_strings(value: Option<&serde_yaml::Value>) -> Vec<String> {
    match value {
        Some(serde_yaml::Value::String(s)) if !s.trim().is_empty() => vec![s.trim().to_string()],
        Some(serde_yaml::Value::Sequence(seq)) => seq
            .iter()
            .filter_map(|v| v.as_str())
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().to_string())
            .collect(),
        _ => Vec::new(),
    }
}

fn strip_front_matter(markdown: &str) -> &str {
    let trimmed = markdown.trim_start();
    if let Some(rest) = trimmed.strip_prefix("---") {
        if let Some(end) = rest.find("\n---") {
            let after = &rest[end + 4..];
            return after.trim_start_matches(['-']).trim_start_matches('\n');
        }
    }
    markdown
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LineKind {
    Table,
    List,
    Text,
}

struct Line<'a> {
    text: &'a str,
    kind: LineKind,
}

fn classify_lines(body: &str) -> Vec<Line<'_>> {
    body.lines()
        .map(|l| {
            let t = l.trim_start();
            let kind = if t.starts_with('|') {
                LineKind::Table
            } else if t.starts_with("- ")
                || t.starts_with("* ")
                || t.starts_with("+ ")
                || is_ordered_item(t)
            {
                LineKind::List
            } else {
                LineKind::Text
            };
            Line { text: l, kind }
        })
        .collect()
}

fn is_ordered_item(t: &str) -> bool {
    let digits: String = t.chars().take_while(|c| c.is_ascii_digit()).collect();
    !digits.is_empty()
        && t[digits.len()..].starts_with('.')
        && t[digits.len() + 1..].starts_with(' ')
}

fn split_cells(row: &str) -> Vec<String> {
    row.trim()
        .trim_matches('|')
        .split('|')
        .map(|c| c.trim().to_string())
        .collect()
}

fn is_separator_row(row: &str) -> bool {
    row.chars().all(|c| matches!(c, '|' | '-' | ':' | ' ' | '\t'))
}

/// Interpret a link URL: `Some((org/name, is_dataset))` for Hugging Face
/// model/dataset paths, `None` for anything else.
fn hf_link_target(url: &str) -> Option<(String, bool)> {
    let path = url
        .strip_prefix("https://huggingface.co/")
        .or_else(|| url.strip_prefix("http://huggingface.co/"))
        .or_else(|| url.strip_prefix("https://www.huggingface.co/"))
        .or_else(|| url.strip_prefix("https://hf.co/"))?;
    let mut segments = path.split('/').filter(|s| !s.is_empty());
    let first = segments.next()?;
    match first {
        "datasets" => {
            let org = segments.next()?;
            let name = segments.next()?;
            Some((format!("{org}/{name}"), true))
        }
        "spaces" | "collections" | "blog" | "docs" | "papers" | "tasks" | "models" => None,
        org => {
            let name = segments.next()?;
            let cleaned = clean_target(&format!("{org}/{name}"));
            looks_like_model_id(&cleaned).then_some((cleaned, false))
        }
    }
}

fn looks_like_model_id(s: &str) -> bool {
    let Some((org, name)) = s.split_once('/') else {
        return false;
    };
    !org.is_empty()
        && !name.is_empty()
        && !name.contains('/')
        && s.chars().any(|c| c.is_ascii_alphabetic())
}

/// Resolve raw references against the universe; unresolvable targets are
/// discarded, as are self-references.
pub fn resolve_references(refs: &[RawReference], universe: &Universe) -> Vec<ResolvedReference> {
    let mut out = Vec::new();
    for r in refs {
        let Some(parent) = resolve_entity(&r.target_string, universe) else {
            continue;
        };
        if parent.eq_ignore_ascii_case(&r.source_repo) {
            continue;
        }
        out.push(ResolvedReference {
            child: r.source_repo.clone(),
            parent,
            evidence_source: r.evidence_source,
            suggested_type: r.suggested_type,
            is_dataset: r.is_dataset,
            list_context: r.list_context,
        });
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct TypingOptions {
    /// Evidence-tier dominance before type priority (yaml/tag over readme
    /// over name patterns). When false, type priority applies across tiers.
    pub tier_first: bool,
}

impl Default for TypingOptions {
    fn default() -> Self {
        TypingOptions { tier_first: true }
    }
}

/// Collapse the reference multiset into one typed edge per (child, parent)
/// pair. Dataset references never become edges. The result is independent of
/// input order.
pub fn type_edges(refs: &[ResolvedReference], opts: &TypingOptions) -> Vec<DerivationEdge> {
    let mut groups: BTreeMap<(&str, &str), Vec<&ResolvedReference>> = BTreeMap::new();
    for r in refs {
        if r.is_dataset || r.child == r.parent {
            continue;
        }
        groups
            .entry((r.child.as_str(), r.parent.as_str()))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((child, parent), candidates)| {
            let tier_cut = if opts.tier_first {
                candidates
                    .iter()
                    .map(|r| r.evidence_source.tier())
                    .min()
                    .unwrap()
            } else {
                u8::MAX
            };
            let winner = candidates
                .iter()
                .filter(|r| !opts.tier_first || r.evidence_source.tier() == tier_cut)
                .min_by_key(|r| {
                    (
                        r.suggested_type.unwrap_or(EdgeType::BaseModel),
                        r.evidence_source,
                    )
                })
                .unwrap();
            DerivationEdge {
                child: child.to_string(),
                parent: parent.to_string(),
                edge_type: winner.suggested_type.unwrap_or(EdgeType::BaseModel),
                evidence_source: winner.evidence_source,
            }
        })
        .collect()
}

/// Normalized Levenshtein similarity on casefolded ids.
pub fn string_similarity(a: &str, b: &str) -> f64 {
    let a = a.to_lowercase();
    let b = b.to_lowercase();
    let max_len = a.chars().count().max(b.chars().count());
    if max_len == 0 {
        return 1.0;
    }
    1.0 - strsim::levenshtein(&a, &b) as f64 / max_len as f64
}

/// Noise filtering: a quantization child keeps only its highest-similarity
/// parent among quantization-typed candidates; sibling or same-family
/// references supported only by list-context readme evidence are dropped.
pub fn filter_noise(
    edges: Vec<DerivationEdge>,
    refs: &[ResolvedReference],
    _universe: &Universe,
) -> Vec<DerivationEdge> {
    // evidence summary per pair for corroboration checks
    let mut has_metadata: BTreeSet<(&str, &str)> = BTreeSet::new();
    let mut has_non_list: BTreeSet<(&str, &str)> = BTreeSet::new();
    for r in refs {
        if r.is_dataset {
            continue;
        }
        let key = (r.child.as_str(), r.parent.as_str());
        if r.evidence_source.tier() == 0 {
            has_metadata.insert(key);
        }
        if !r.list_context {
            has_non_list.insert(key);
        }
    }

    let mut edges: Vec<DerivationEdge> = edges
        .into_iter()
        .filter(|e| {
            let key = (e.child.as_str(), e.parent.as_str());
            if has_metadata.contains(&key) || has_non_list.contains(&key) {
                return true;
            }
            // list-context only: drop siblings and same-family references
            !is_sibling_or_same_family(&e.child, &e.parent)
        })
        .collect();

    // quantization children: retain only the highest string-similarity parent
    let mut best: BTreeMap<&str, (f64, &str)> = BTreeMap::new();
    for e in &edges {
        if e.edge_type != EdgeType::Quantization {
            continue;
        }
        let sim = string_similarity(&e.child, &e.parent);
        best.entry(e.child.as_str())
            .and_modify(|cur| {
                if sim > cur.0 || (sim == cur.0 && e.parent.as_str() < cur.1) {
                    *cur = (sim, e.parent.as_str());
                }
            })
            .or_insert((sim, e.parent.as_str()));
    }
    let keep: BTreeMap<String, String> = best
        .into_iter()
        .map(|(c, (_, p))| (c.to_string(), p.to_string()))
        .collect();
    edges.retain(|e| {
        e.edge_type != EdgeType::Quantization
            || keep.get(&e.child).is_some_and(|p| p == &e.parent)
    });
    edges
}

fn is_sibling_or_same_family(child: &str, parent: &str) -> bool {
    let corg = child.split('/').next().unwrap_or("");
    let porg = parent.split('/').next().unwrap_or("");
    if corg.eq_ignore_ascii_case(porg) {
        return true;
    }
    let cf = family_of(child);
    cf != Family::Other && cf == family_of(parent)
}

/// The full per-repository pipeline: parse all three evidence layers,
/// resolve, type, and filter.
pub fn extract_edges(
    parser: &CardParser,
    universe: &Universe,
    repo_id: &str,
    yaml_text: &str,
    tags: &[String],
    readme_text: &str,
    opts: &TypingOptions,
) -> (Vec<DerivationEdge>, Vec<ParseWarning>) {
    let (mut refs, warnings) = parser.parse_structured(yaml_text, tags, repo_id);
    refs.extend(parser.parse_readme(readme_text, repo_id));
    refs.extend(parser.name_pattern_refs(repo_id, universe));
    let resolved = resolve_references(&refs, universe);
    let edges = type_edges(&resolved, opts);
    (filter_noise(edges, &resolved, universe), warnings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::RuleTables;

    fn setup() -> (CardParser, Universe) {
        let tables = RuleTables::builtin();
        let parser = CardParser::new(&tables.parser).unwrap();
        let universe = Universe::new(
            [
                "meta-llama/Llama-3-8B",
                "org/base",
                "org/m",
                "other/model",
                "TheBloke/Llama-2-7B-GGUF",
                "meta-llama/Llama-2-7B",
                "mlx/ModelA",
                "mlx/ModelAB",
                "self/repo",
            ],
            &tables.parser,
        );
        (parser, universe)
    }

    fn raw(target: &str, src: EdgeEvidence, t: Option<EdgeType>) -> ResolvedReference {
        ResolvedReference {
            child: "self/repo".into(),
            parent: target.into(),
            evidence_source: src,
            suggested_type: t,
            is_dataset: false,
            list_context: false,
        }
    }

    #[test]
    fn tag_with_operator_extracts_typed_reference() {
        let (parser, _) = setup();
        let tags = vec!["base_model:finetune:meta-llama/Llama-3-8B".to_string()];
        let (refs, warnings) = parser.parse_structured("", &tags, "self/repo");
        assert!(warnings.is_empty());
        assert_eq!(refs.len(), 1);
        assert_eq!(refs[0].target_string, "meta-llama/Llama-3-8B");
        assert_eq!(refs[0].suggested_type, Some(EdgeType::Finetune));
        assert_eq!(refs[0].evidence_source, EdgeEvidence::Tag);
    }

    #[test]
    fn yaml_scalar_and_list_fields() {
        let (parser, _) = setup();
        let (refs, w) = parser.parse_structured("base_model: org/m\n", &[], "self/repo");
        assert!(w.is_empty());
        assert_eq!(refs.len(), 1);
        assert_eq!(refs[0].target_string, "org/m");
        assert_eq!(refs[0].suggested_type, None);

        let yaml = "base_models:\n  - org/m\n  - org/base\ndatasets:\n  - openai/gsm8k\n";
        let (refs, _) = parser.parse_structured(yaml, &[], "self/repo");
        assert_eq!(refs.len(), 3);
        assert!(refs.iter().any(|r| r.is_dataset && r.target_string == "openai/gsm8k"));
    }

    #[test]
    fn empty_inputs_give_empty_output() {
        let (parser, _) = setup();
        let (refs, w) = parser.parse_structured("", &[], "self/repo");
        assert!(refs.is_empty() && w.is_empty());
        assert!(parser.parse_readme("", "self/repo").is_empty());
    }

    #[test]
    fn malformed_yaml_degrades_to_tags_with_warning() {
        let (parser, _) = setup();
        let tags = vec!["base_model:quantized:org/m".to_string()];
        let (refs, w) = parser.parse_structured("base_model: [unclosed\n  bad: {", &tags, "self/repo");
        assert_eq!(w.len(), 1);
        assert_eq!(refs.len(), 1);
        assert_eq!(refs[0].suggested_type, Some(EdgeType::Quantization));
    }

    #[test]
    fn prose_pattern_with_link_suggests_finetune() {
        let (parser, _) = setup();
        let md = "This model was fine-tuned from [org/base](https://huggingface.co/org/base).";
        let refs = parser.parse_readme(md, "self/repo");
        assert!(refs
            .iter()
            .any(|r| r.target_string == "org/base"
                && r.suggested_type == Some(EdgeType::Finetune)
                && r.evidence_source == EdgeEvidence::ReadmeProse));
    }

    #[test]
    fn benchmark_tables_are_skipped_entirely() {
        let (parser, _) = setup();
        let md = "\
| Model | MMLU | F1 |
|---|---|---|
| self/repo | 70.1 | 0.88 |
| org/base | 65.0 | 0.82 |
";
        assert!(parser.parse_readme(md, "self/repo").is_empty());
    }

    #[test]
    fn derivation_table_uses_self_row_targeting() {
        let (parser, _) = setup();
        let md = "\
| Model | Built From |
|---|---|
| self/repo | [org/base](https://huggingface.co/org/base) |
| unrelated/x | org/m |
";
        let refs = parser.parse_readme(md, "self/repo");
        assert_eq!(refs.len(), 1);
        assert_eq!(refs[0].target_string, "org/base");
        assert_eq!(refs[0].evidence_source, EdgeEvidence::ReadmeTable);
    }

    #[test]
    fn self_references_are_excluded() {
        let (parser, _) = setup();
        let md = "See [self/repo](https://huggingface.co/self/repo) for details.";
        assert!(parser.parse_readme(md, "self/repo").is_empty());
    }

    #[test]
    fn non_hf_links_are_ignored() {
        let (parser, _) = setup();
        let md = "Code at [github](https://github.com/org/base).";
        assert!(parser.parse_readme(md, "self/repo").is_empty());
    }

    #[test]
    fn list_items_are_marked_list_context() {
        let (parser, _) = setup();
        let md = "Family models:\n- [org/base](https://huggingface.co/org/base)\n";
        let refs = parser.parse_readme(md, "self/repo");
        assert_eq!(refs.len(), 1);
        assert!(refs[0].list_context);
    }

    #[test]
    fn gguf_suffix_resolves_through_official_org() {
        let (parser, universe) = setup();
        // stripped "TheBloke/Llama-2-7B" is not in the universe, but the
        // basename resolves uniquely under the official org
        let refs = parser.name_pattern_refs("TheBloke/Llama-2-7B-GGUF", &universe);
        assert_eq!(refs.len(), 1);
        assert_eq!(refs[0].suggested_type, Some(EdgeType::Quantization));
        let resolved = resolve_references(&refs, &universe);
        assert_eq!(resolved.len(), 1);
        assert_eq!(resolved[0].parent, "meta-llama/Llama-2-7B");
    }

    #[test]
    fn gguf_without_stripped_match_is_empty() {
        let (parser, universe) = setup();
        assert!(parser.name_pattern_refs("someone/unknown-GGUF", &universe).is_empty());
        assert!(parser.name_pattern_refs("org/m", &universe).is_empty());
    }

    #[test]
    fn resolve_exact_fuzzy_and_unresolved() {
        let (_, universe) = setup();
        assert_eq!(
            resolve_entity("meta-llama/Llama-3-8B", &universe),
            Some("meta-llama/Llama-3-8B".into())
        );
        // bare name, unique under official prefixes
        assert_eq!(
            resolve_entity("Llama-3-8B", &universe),
            Some("meta-llama/Llama-3-8B".into())
        );
        assert_eq!(resolve_entity("totally/unknown-model", &universe), None);
    }

    #[test]
    fn fuzzy_match_requires_uniqueness() {
        let tables = RuleTables::builtin();
        let mut rules = tables.parser.clone();
        rules.official_orgs.push("dup".into());
        let universe = Universe::new(["dup/Model-X", "dup2/thing"], &rules);
        assert_eq!(
            resolve_entity("Model-X", &universe),
            Some("dup/Model-X".into())
        );
        let universe2 = Universe::new(["dup/Model-X", "dup/Model-X-GGUF"], &rules);
        // both map to the same normalized basename -> ambiguous
        assert_eq!(resolve_entity("Model-X", &universe2), None);
    }

    #[test]
    fn tier_dominance_and_type_priority() {
        let opts = TypingOptions::default();
        // {finetune(tag), base_model(readme)} -> finetune
        let edges = type_edges(
            &[
                raw("org/base", EdgeEvidence::Tag, Some(EdgeType::Finetune)),
                raw("org/base", EdgeEvidence::ReadmeLink, None),
            ],
            &opts,
        );
        assert_eq!(edges[0].edge_type, EdgeType::Finetune);

        // {quantization(name_pattern), finetune(tag)} -> finetune (tier wins)
        let edges = type_edges(
            &[
                raw("org/base", EdgeEvidence::NamePattern, Some(EdgeType::Quantization)),
                raw("org/base", EdgeEvidence::Tag, Some(EdgeType::Finetune)),
            ],
            &opts,
        );
        assert_eq!(edges[0].edge_type, EdgeType::Finetune);
        // with type-priority-first the quantization suggestion wins instead
        let edges = type_edges(
            &[
                raw("org/base", EdgeEvidence::NamePattern, Some(EdgeType::Quantization)),
                raw("org/base", EdgeEvidence::Tag, Some(EdgeType::Finetune)),
            ],
            &TypingOptions { tier_first: false },
        );
        assert_eq!(edges[0].edge_type, EdgeType::Quantization);

        // {quantization(tag), merge(tag)} same tier -> quantization
        let edges = type_edges(
            &[
                raw("org/base", EdgeEvidence::Tag, Some(EdgeType::Quantization)),
                raw("org/base", EdgeEvidence::Tag, Some(EdgeType::Merge)),
            ],
            &opts,
        );
        assert_eq!(edges[0].edge_type, EdgeType::Quantization);
    }

    #[test]
    fn typing_is_order_invariant() {
        let refs = vec![
            raw("org/base", EdgeEvidence::Tag, Some(EdgeType::Finetune)),
            raw("org/base", EdgeEvidence::ReadmeProse, Some(EdgeType::Merge)),
            raw("org/m", EdgeEvidence::YamlField, None),
            raw("org/base", EdgeEvidence::NamePattern, Some(EdgeType::Quantization)),
        ];
        let opts = TypingOptions::default();
        let base = type_edges(&refs, &opts);
        // a few permutations
        let perms: Vec<Vec<usize>> = vec![vec![3, 2, 1, 0], vec![1, 3, 0, 2], vec![2, 0, 3, 1]];
        for p in perms {
            let shuffled: Vec<ResolvedReference> = p.iter().map(|&i| refs[i].clone()).collect();
            assert_eq!(type_edges(&shuffled, &opts), base);
        }
    }

    #[test]
    fn quantization_child_keeps_highest_similarity_parent() {
        let (_, universe) = setup();
        let refs = vec![
            ResolvedReference {
                child: "mlx/ModelA-GGUF".into(),
                parent: "mlx/ModelA".into(),
                evidence_source: EdgeEvidence::NamePattern,
                suggested_type: Some(EdgeType::Quantization),
                is_dataset: false,
                list_context: false,
            },
            ResolvedReference {
                child: "mlx/ModelA-GGUF".into(),
                parent: "other/model".into(),
                evidence_source: EdgeEvidence::ReadmeLink,
                suggested_type: Some(EdgeType::Quantization),
                is_dataset: false,
                list_context: false,
            },
        ];
        let edges = type_edges(&refs, &TypingOptions::default());
        assert_eq!(edges.len(), 2);
        let filtered = filter_noise(edges, &refs, &universe);
        assert_eq!(filtered.len(), 1);
        assert_eq!(filtered[0].parent, "mlx/ModelA");
    }

    #[test]
    fn sibling_list_reference_dropped_unless_corroborated() {
        let (_, universe) = setup();
        let list_only = ResolvedReference {
            child: "mlx/ModelA".into(),
            parent: "mlx/ModelAB".into(),
            evidence_source: EdgeEvidence::ReadmeLink,
            suggested_type: None,
            is_dataset: false,
            list_context: true,
        };
        let edges = type_edges(std::slice::from_ref(&list_only), &TypingOptions::default());
        let filtered = filter_noise(edges, std::slice::from_ref(&list_only), &universe);
        assert!(filtered.is_empty(), "uncorroborated sibling must drop");

        // metadata corroboration retains the edge
        let mut refs = vec![list_only.clone()];
        refs.push(ResolvedReference {
            evidence_source: EdgeEvidence::Tag,
            list_context: false,
            ..list_only
        });
        let edges = type_edges(&refs, &TypingOptions::default());
        let filtered = filter_noise(edges, &refs, &universe);
        assert_eq!(filtered.len(), 1);
    }

    #[test]
    fn dataset_references_never_become_edges() {
        let r = ResolvedReference {
            child: "self/repo".into(),
            parent: "openai/gsm8k".into(),
            evidence_source: EdgeEvidence::YamlField,
            suggested_type: None,
            is_dataset: true,
            list_context: false,
        };
        assert!(type_edges(&[r], &TypingOptions::default()).is_empty());
    }

    #[test]
    fn similarity_is_normalized_levenshtein() {
        assert_eq!(string_similarity("abc", "abc"), 1.0);
        assert!((string_similarity("abcd", "abce") - 0.75).abs() < 1e-12);
        assert_eq!(string_similarity("", ""), 1.0);
    }
}
