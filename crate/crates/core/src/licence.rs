//! Ethical-use restriction classification of licence evidence.
//!
//! The classifier scores normalized licence text additively over four
//! contributing rule classes (policy references, hard harm domains, soft harm
//! domains, brand-plus-policy context). Harm-domain terms count only inside a
//! restriction context: the same sentence as a prohibition frame, or the
//! fixed-width window opened by a section hint. Brand evidence is suppressed
//! when an exclusion phrase appears anywhere in the text.

use std::collections::{BTreeMap, BTreeSet};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rules::{normalize_licence_name, ClassifierRules, LriEntry, RuleTables};

/// Where the licence evidence came from; determines how it may be scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceSource {
    OwnFile,
    CanonicalTemplate,
    NameOnly,
    Absent,
}

#[derive(Debug, Clone)]
pub struct LicenceEvidence {
    pub source: EvidenceSource,
    pub licence_names: Vec<String>,
    pub full_text: Option<String>,
}

impl LicenceEvidence {
    pub fn absent() -> Self {
        LicenceEvidence {
            source: EvidenceSource::Absent,
            licence_names: Vec::new(),
            full_text: None,
        }
    }

    pub fn own_file(licence_names: Vec<String>, text: String) -> Self {
        LicenceEvidence {
            source: EvidenceSource::OwnFile,
            licence_names,
            full_text: Some(text),
        }
    }

    pub fn canonical_template(licence_names: Vec<String>, template_text: String) -> Self {
        LicenceEvidence {
            source: EvidenceSource::CanonicalTemplate,
            licence_names,
            full_text: Some(template_text),
        }
    }

    pub fn name_only(licence_names: Vec<String>) -> Self {
        LicenceEvidence {
            source: EvidenceSource::NameOnly,
            licence_names,
            full_text: None,
        }
    }

    /// Build evidence from raw record fields, substituting the canonical
    /// template text when only a recognized name is available.
    pub fn from_parts(
        licence_names: Vec<String>,
        own_text: Option<String>,
        tables: &RuleTables,
    ) -> Self {
        match own_text {
            Some(t) => Self::own_file(licence_names, t),
            None if licence_names.is_empty() => Self::absent(),
            None => match tables.template_for(&licence_names) {
                Some(t) => Self::canonical_template(licence_names, t.to_string()),
                None => Self::name_only(licence_names),
            },
        }
    }
}

/// Per-node licence intent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intent {
    Restrictive,
    Permissive,
    Unknown,
}

impl Intent {
    pub fn as_str(self) -> &'static str {
        match self {
            Intent::Restrictive => "restrictive",
            Intent::Permissive => "permissive",
            Intent::Unknown => "unknown",
        }
    }

    pub fn parse(s: &str) -> Result<Intent> {
        match s {
            "restrictive" | "R" | "r" => Ok(Intent::Restrictive),
            "permissive" | "P" | "p" => Ok(Intent::Permissive),
            "unknown" | "U" | "u" => Ok(Intent::Unknown),
            other => Err(Error::Config(format!("unknown intent {other:?}"))),
        }
    }
}

impl std::fmt::Display for Intent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleClass {
    RestrictionFrame,
    PolicyReference,
    SectionHint,
    HardDomain,
    SoftDomain,
    Brand,
    Exclusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedRule {
    pub class: RuleClass,
    pub pattern: String,
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RestrictionScore {
    pub total: f64,
    pub components: BTreeMap<RuleClass, f64>,
    pub matched_rules: Vec<MatchedRule>,
}

/// Lowercase, standardize punctuation variants, collapse whitespace.
/// Idempotent: applying it twice gives the same text.
pub fn normalize_licence_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut last_space = true; // leading whitespace is trimmed
    for ch in raw.chars() {
        let mapped: char = match ch {
            '\u{2018}' | '\u{2019}' | '\u{201a}' | '\u{201b}' => '\'',
            '\u{201c}' | '\u{201d}' | '\u{201e}' | '\u{201f}' => '"',
            '\u{2013}' | '\u{2014}' | '\u{2015}' | '\u{2212}' => '-',
            '\u{00a0}' | '\u{2007}' | '\u{202f}' => ' ',
            c if c.is_whitespace() && c != '\n' => ' ',
            c => c,
        };
        // newlines survive normalization: they are sentence boundaries
        if mapped == ' ' {
            if !last_space {
                out.push(' ');
            }
            last_space = true;
        } else if mapped == '\n' {
            while out.ends_with(' ') {
                out.pop();
            }
            if !out.ends_with('\n') && !out.is_empty() {
                out.push('\n');
            }
            last_space = true;
        } else {
            for lc in mapped.to_lowercase() {
                out.push(lc);
            }
            last_space = false;
        }
    }
    while out.ends_with(' ') || out.ends_with('\n') {
        out.pop();
    }
    out
}

struct PatternSet {
    patterns: Vec<(String, Regex)>,
}

impl PatternSet {
    fn compile(patterns: &[String], what: &str) -> Result<PatternSet> {
        let mut out = Vec::with_capacity(patterns.len());
        for p in patterns {
            let norm = normalize_licence_text(p);
            let re = Regex::new(&format!(r"\b{}\b", regex::escape(&norm)))
                .map_err(|e| Error::Rules(format!("{what}: bad pattern {p:?}: {e}")))?;
            out.push((norm, re));
        }
        Ok(PatternSet { patterns: out })
    }

    fn find_all(&self, text: &str, class: RuleClass, into: &mut Vec<MatchedRule>) {
        for (pat, re) in &self.patterns {
            for m in re.find_iter(text) {
                into.push(MatchedRule {
                    class,
                    pattern: pat.clone(),
                    offset: m.start(),
                });
            }
        }
    }
}

/// Compiled form of [`ClassifierRules`].
pub struct Classifier {
    pub rules: ClassifierRules,
    frames: PatternSet,
    policies: PatternSet,
    hints: PatternSet,
    hard: PatternSet,
    soft: PatternSet,
    brands: PatternSet,
    brand_ctx: PatternSet,
    exclusions: PatternSet,
}

impl Classifier {
    pub fn new(rules: &ClassifierRules) -> Result<Classifier> {
        Ok(Classifier {
            frames: PatternSet::compile(&rules.restriction_frames, "restriction_frames")?,
            policies: PatternSet::compile(&rules.policy_references, "policy_references")?,
            hints: PatternSet::compile(&rules.section_hints, "section_hints")?,
            hard: PatternSet::compile(&rules.hard_domains, "hard_domains")?,
            soft: PatternSet::compile(&rules.soft_domains, "soft_domains")?,
            brands: PatternSet::compile(&rules.brands, "brands")?,
            brand_ctx: PatternSet::compile(&rules.brand_context_terms, "brand_context_terms")?,
            exclusions: PatternSet::compile(&rules.exclusions, "exclusions")?,
            rules: rules.clone(),
        })
    }

    /// Score licence evidence. Errors with [`Error::MissingEvidence`] when no
    /// text is available; the caller maps that to intent Unknown.
    pub fn score_restriction(&self, evidence: &LicenceEvidence) -> Result<RestrictionScore> {
        let text = evidence
            .full_text
            .as_deref()
            .ok_or(Error::MissingEvidence)?;
        Ok(self.score_text(text))
    }

    pub fn score_text(&self, raw: &str) -> RestrictionScore {
        let text = normalize_licence_text(raw);
        let sentences = sentence_spans(&text);

        let mut matched: Vec<MatchedRule> = Vec::new();
        self.frames.find_all(&text, RuleClass::RestrictionFrame, &mut matched);
        self.policies.find_all(&text, RuleClass::PolicyReference, &mut matched);
        self.hints.find_all(&text, RuleClass::SectionHint, &mut matched);
        self.hard.find_all(&text, RuleClass::HardDomain, &mut matched);
        self.soft.find_all(&text, RuleClass::SoftDomain, &mut matched);
        self.brands.find_all(&text, RuleClass::Brand, &mut matched);
        self.exclusions.find_all(&text, RuleClass::Exclusion, &mut matched);

        // context machinery
        let frame_sentences: BTreeSet<usize> = matched
            .iter()
            .filter(|m| m.class == RuleClass::RestrictionFrame)
            .map(|m| sentence_of(&sentences, m.offset))
            .collect();
        let windows: Vec<(usize, usize)> = matched
            .iter()
            .filter(|m| m.class == RuleClass::SectionHint)
            .map(|m| (m.offset, m.offset + self.rules.section_window_chars))
            .collect();
        let in_context = |offset: usize| {
            frame_sentences.contains(&sentence_of(&sentences, offset))
                || windows.iter().any(|&(s, e)| offset >= s && offset < e)
        };

        // brand context: same sentence as a context term or a URL marker
        let mut ctx_matches = Vec::new();
        self.brand_ctx.find_all(&text, RuleClass::Brand, &mut ctx_matches);
        let mut ctx_sentences: BTreeSet<usize> = ctx_matches
            .iter()
            .map(|m| sentence_of(&sentences, m.offset))
            .collect();
        for (i, &(s, e)) in sentences.iter().enumerate() {
            let sent = &text[s..e];
            if sent.contains("http") || sent.contains("www.") {
                ctx_sentences.insert(i);
            }
        }

        let has_exclusion = matched.iter().any(|m| m.class == RuleClass::Exclusion);
        let policy_hit = matched.iter().any(|m| m.class == RuleClass::PolicyReference);
        let hard_hits = distinct_in_context(&matched, RuleClass::HardDomain, &in_context);
        let soft_hits = distinct_in_context(&matched, RuleClass::SoftDomain, &in_context);
        let brand_hit = !has_exclusion
            && matched.iter().any(|m| {
                m.class == RuleClass::Brand
                    && ctx_sentences.contains(&sentence_of(&sentences, m.offset))
            });

        let w = &self.rules.weights;
        let mut components = BTreeMap::new();
        if policy_hit {
            components.insert(RuleClass::PolicyReference, w.policy_reference);
        }
        if hard_hits > 0 {
            let v = w.hard_base + w.hard_step * (hard_hits - 1) as f64;
            components.insert(RuleClass::HardDomain, v.min(w.hard_cap));
        }
        if soft_hits > 0 {
            let v = w.soft_step * soft_hits as f64;
            components.insert(RuleClass::SoftDomain, v.min(w.soft_cap));
        }
        if brand_hit {
            components.insert(RuleClass::Brand, w.brand);
        }

        matched.sort_by(|a, b| (a.offset, a.class, &a.pattern).cmp(&(b.offset, b.class, &b.pattern)));
        RestrictionScore {
            total: components.values().sum(),
            components,
            matched_rules: matched,
        }
    }

    /// Restriction decision on a computed score.
    pub fn classify_restrictive(&self, score: &RestrictionScore) -> bool {
        if self.rules.strict_threshold {
            score.total > self.rules.threshold
        } else {
            score.total >= self.rules.threshold
        }
    }
}

fn distinct_in_context(
    matched: &[MatchedRule],
    class: RuleClass,
    in_context: &impl Fn(usize) -> bool,
) -> usize {
    matched
        .iter()
        .filter(|m| m.class == class && in_context(m.offset))
        .map(|m| m.pattern.as_str())
        .collect::<BTreeSet<_>>()
        .len()
}

/// Byte spans of sentences; boundaries are '.', ';' and '\n'.
fn sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0usize;
    for (i, ch) in text.char_indices() {
        if ch == '.' || ch == ';' || ch == '\n' {
            spans.push((start, i));
            start = i + ch.len_utf8();
        }
    }
    spans.push((start, text.len()));
    spans
}

fn sentence_of(spans: &[(usize, usize)], offset: usize) -> usize {
    // spans are contiguous and ordered
    match spans.binary_search_by(|&(s, e)| {
        if offset < s {
            std::cmp::Ordering::Greater
        } else if offset > e {
            std::cmp::Ordering::Less
        } else {
            std::cmp::Ordering::Equal
        }
    }) {
        Ok(i) => i,
        Err(i) => i.min(spans.len() - 1),
    }
}

/// Tri-valued intent: restrictive beats permissive beats unknown.
/// Evaluation order is fixed: classifier first, then the permissive list.
pub fn assign_intent(
    evidence: &LicenceEvidence,
    classifier: &Classifier,
    tables: &RuleTables,
) -> Intent {
    evaluate_evidence(evidence, classifier, tables).0
}

/// Intent plus the restriction score when text was available.
pub fn evaluate_evidence(
    evidence: &LicenceEvidence,
    classifier: &Classifier,
    tables: &RuleTables,
) -> (Intent, Option<RestrictionScore>) {
    let score = classifier.score_restriction(evidence).ok();
    if let Some(s) = &score {
        if classifier.classify_restrictive(s) {
            return (Intent::Restrictive, score);
        }
    }
    let permissive = evidence
        .licence_names
        .iter()
        .any(|n| tables.permissive.contains(&normalize_licence_name(n)));
    if permissive {
        (Intent::Permissive, score)
    } else {
        (Intent::Unknown, score)
    }
}

/// Precomputed licence restrictiveness index with the lookup order of the
/// comparator pipeline: exact match on the normalized name, then the longest
/// table name contained in the input (ties broken lexicographically).
pub struct LriIndex {
    exact: BTreeMap<String, f64>,
    by_length: Vec<(String, f64)>,
}

impl LriIndex {
    pub fn new(entries: &[LriEntry]) -> LriIndex {
        let exact: BTreeMap<String, f64> = entries
            .iter()
            .map(|e| (normalize_licence_name(&e.licence_name), e.lri))
            .collect();
        let mut by_length: Vec<(String, f64)> =
            exact.iter().map(|(k, v)| (k.clone(), *v)).collect();
        by_length.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));
        LriIndex { exact, by_length }
    }

    pub fn lookup(&self, licence_name: &str) -> Option<f64> {
        let norm = normalize_licence_name(licence_name);
        if norm.is_empty() {
            return None;
        }
        if let Some(&v) = self.exact.get(&norm) {
            return Some(v);
        }
        self.by_length
            .iter()
            .find(|(name, _)| norm.contains(name.as_str()))
            .map(|&(_, v)| v)
    }
}

/// One-shot LRI lookup; `None` signals exclusion, not failure.
pub fn lri_lookup(licence_name: &str, table: &[LriEntry]) -> Option<f64> {
    LriIndex::new(table).lookup(licence_name)
}
