//! File formats: repository records and node snapshots as JSONL, edges and
//! report tables as CSV, plus DOT export. All outputs are UTF-8 and written
//! in deterministic order with fixed numeric formatting.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::audit::{AuditState, CompositionRow};
use crate::causal::{EffectEstimate, SmdRow};
use crate::comparator::{ComparatorSeries, ReleaseRecord};
use crate::error::{Error, Result};
use crate::graph::{DerivationEdge, EdgeEvidence, EdgeType, LineageGraph, ModelNode};
use crate::horizon::HopSeriesCi;
use crate::intervention::{format_h_value, SimulationResult};
use crate::licence::Intent;

/// One repository as ingested: identifier, timestamps, card metadata and the
/// licence evidence layers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RepoRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub yaml_text: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub readme_text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub licence_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub licence_text: Option<String>,
    #[serde(default)]
    pub downloads: u64,
    #[serde(default)]
    pub likes: u64,
}

impl RepoRecord {
    pub fn created_epoch(&self) -> Option<i64> {
        self.created_at
            .as_deref()
            .and_then(|s| DateTime::parse_from_rfc3339(s).ok())
            .map(|t| t.timestamp())
    }

    /// All licence names: the explicit field, `license:` tags and the YAML
    /// `license` field.
    pub fn effective_licence_names(&self) -> Vec<String> {
        let mut names = self.licence_names.clone();
        for tag in &self.tags {
            if let Some(name) = tag.strip_prefix("license:") {
                if !name.is_empty() {
                    names.push(name.to_string());
                }
            }
        }
        if !self.yaml_text.trim().is_empty() {
            if let Ok(value) = serde_yaml::from_str::<serde_yaml::Value>(&self.yaml_text) {
                if let Some(name) = value.get("license").and_then(|v| v.as_str()) {
                    names.push(name.to_string());
                }
            }
        }
        names.dedup();
        let mut seen = std::collections::BTreeSet::new();
        names.retain(|n| seen.insert(n.to_lowercase()));
        names
    }
}

/// Classify records into graph nodes: evidence assembly, intent assignment
/// and restriction scoring, in parallel over a read-only rule set.
pub fn nodes_from_records(
    records: &[RepoRecord],
    classifier: &crate::licence::Classifier,
    tables: &crate::rules::RuleTables,
) -> Vec<ModelNode> {
    crate::exec::map_indexed(records.len(), |i| {
        let rec = &records[i];
        let evidence = crate::licence::LicenceEvidence::from_parts(
            rec.effective_licence_names(),
            rec.licence_text.clone(),
            tables,
        );
        let (intent, score) = crate::licence::evaluate_evidence(&evidence, classifier, tables);
        ModelNode {
            id: rec.id.clone(),
            created_at: rec.created_epoch(),
            intent,
            restriction_score: score.map(|s| s.total),
            licence_names: evidence.licence_names,
            downloads: rec.downloads,
            likes: rec.likes,
            family: crate::graph::family_of(&rec.id),
        }
    })
}

pub fn epoch_to_rfc3339(epoch: i64) -> String {
    Utc.timestamp_opt(epoch, 0)
        .single()
        .map(|t| t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
        .unwrap_or_else(|| "1970-01-01T00:00:00Z".to_string())
}

fn open_err(path: &Path, e: std::io::Error) -> Error {
    Error::IoAt {
        path: path.display().to_string(),
        source: e,
    }
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| open_err(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| open_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item: T = serde_json::from_str(&line).map_err(|e| {
            Error::Config(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut file = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| open_err(path, e))?,
    );
    for item in items {
        serde_json::to_writer(&mut file, item)?;
        file.write_all(b"\n").map_err(|e| open_err(path, e))?;
    }
    file.flush().map_err(|e| open_err(path, e))?;
    Ok(())
}

pub fn read_repo_records(path: &Path) -> Result<Vec<RepoRecord>> {
    read_jsonl(path)
}

pub fn read_releases(path: &Path) -> Result<Vec<ReleaseRecord>> {
    read_jsonl(path)
}

// ---------------------------------------------------------------------------
// edges CSV: child,parent,edge_type,evidence_source
// ---------------------------------------------------------------------------

pub fn write_edges_csv(path: &Path, edges: &[DerivationEdge]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["child", "parent", "edge_type", "evidence_source"])?;
    let mut sorted: Vec<&DerivationEdge> = edges.iter().collect();
    sorted.sort_by(|a, b| (&a.child, &a.parent).cmp(&(&b.child, &b.parent)));
    for e in sorted {
        w.write_record([
            e.child.as_str(),
            e.parent.as_str(),
            e.edge_type.as_str(),
            e.evidence_source.as_str(),
        ])?;
    }
    w.flush().map_err(|e| open_err(path, e))?;
    Ok(())
}

/// Accepts the 3-column (child,parent,edge_type) form as well; the evidence
/// source then defaults to yaml_field.
pub fn read_edges_csv(path: &Path) -> Result<Vec<DerivationEdge>> {
    let mut r = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() < 3 {
            return Err(Error::Config(format!(
                "{}: edge rows need at least child,parent,edge_type",
                path.display()
            )));
        }
        out.push(DerivationEdge {
            child: rec[0].to_string(),
            parent: rec[1].to_string(),
            edge_type: EdgeType::parse(&rec[2])?,
            evidence_source: rec
                .get(3)
                .map(EdgeEvidence::parse)
                .transpose()?
                .unwrap_or(EdgeEvidence::YamlField),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// graph snapshot: nodes JSONL + edges CSV
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeRow {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
    pub intent: Intent,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restriction_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub licence_names: Vec<String>,
    #[serde(default)]
    pub downloads: u64,
    #[serde(default)]
    pub likes: u64,
}

pub fn save_graph(dir: &Path, g: &LineageGraph) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| open_err(dir, e))?;
    let rows: Vec<NodeRow> = g
        .nodes()
        .iter()
        .map(|n| NodeRow {
            id: n.id.clone(),
            created_at: n.created_at.map(epoch_to_rfc3339),
            intent: n.intent,
            restriction_score: n.restriction_score,
            licence_names: n.licence_names.clone(),
            downloads: n.downloads,
            likes: n.likes,
        })
        .collect();
    write_jsonl(&dir.join("nodes.jsonl"), &rows)?;
    let edges: Vec<DerivationEdge> = g
        .iter_edges()
        .map(|(c, e)| DerivationEdge {
            child: g.id(c).to_string(),
            parent: g.id(e.parent).to_string(),
            edge_type: e.edge_type,
            evidence_source: e.evidence_source,
        })
        .collect();
    write_edges_csv(&dir.join("edges.csv"), &edges)
}

pub fn load_graph_nodes(path: &Path) -> Result<Vec<ModelNode>> {
    let rows: Vec<NodeRow> = read_jsonl(path)?;
    Ok(rows
        .into_iter()
        .map(|r| {
            let created_at = r
                .created_at
                .as_deref()
                .and_then(|s| DateTime::parse_from_rfc3339(s).ok())
                .map(|t| t.timestamp());
            let family = crate::graph::family_of(&r.id);
            ModelNode {
                id: r.id,
                created_at,
                intent: r.intent,
                restriction_score: r.restriction_score,
                licence_names: r.licence_names,
                downloads: r.downloads,
                likes: r.likes,
                family,
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// report tables
// ---------------------------------------------------------------------------

fn fmt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.6}")
    }
}

/// Per-node state CSV: id, hop, state, reason.
pub fn write_states_csv(
    path: &Path,
    g: &LineageGraph,
    states: &[AuditState],
    hops: &[Option<u32>],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "hop", "state", "reason"])?;
    for i in 0..g.len() {
        let hop = hops[i].map(|h| h.to_string()).unwrap_or_default();
        w.write_record([
            g.id(i as u32),
            &hop,
            states[i].state.as_str(),
            states[i].reason.as_str(),
        ])?;
    }
    w.flush().map_err(|e| open_err(path, e))?;
    Ok(())
}

pub fn write_composition_csv(path: &Path, rows: &[CompositionRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "hop",
        "n",
        "decidable",
        "inconsistent",
        "undecidable_missing",
        "undecidable_ambiguous",
    ])?;
    for r in rows {
        w.write_record([
            r.hop.to_string(),
            r.n.to_string(),
            fmt(r.decidable),
            fmt(r.inconsistent),
            fmt(r.undecidable_missing),
            fmt(r.undecidable_ambiguous),
        ])?;
    }
    w.flush().map_err(|e| open_err(path, e))?;
    Ok(())
}

/// Per-hop series CSV: hop, value, count, ci_low, ci_high.
pub fn write_hop_series_csv(path: &Path, series: &HopSeriesCi) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["hop", "value", "count", "ci_low", "ci_high"])?;
    for i in 0..series.series.len() {
        w.write_record([
            series.series.hops[i].to_string(),
            fmt(series.series.values[i]),
            series.series.counts[i].to_string(),
            fmt(series.ci_low[i]),
            fmt(series.ci_high[i]),
        ])?;
    }
    w.flush().map_err(|e| open_err(path, e))?;
    Ok(())
}

/// Intervention sweep CSV mirroring the simulation summary table.
pub fn write_interventions_csv(path: &Path, results: &[SimulationResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "design",
        "rate",
        "point",
        "mc_mean",
        "ci_low",
        "ci_high",
        "censored_fraction",
    ])?;
    for r in results {
        w.write_record([
            r.design.as_str().to_string(),
            format!("{:.2}", r.enforcement_rate),
            format_h_value(r.point.value(), r.window),
            format_h_value(r.mc_mean, r.window),
            format_h_value(r.ci_low, r.window),
            format_h_value(r.ci_high, r.window),
            fmt(r.censored_fraction),
        ])?;
    }
    w.flush().map_err(|e| open_err(path, e))?;
    Ok(())
}

pub fn write_effects_csv(path: &Path, effects: &[EffectEstimate]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "estimator",
        "estimate",
        "bootstrap_mean",
        "ci_low",
        "ci_high",
        "n_treated",
        "n_control",
        "resamples",
        "p_value",
    ])?;
    for e in effects {
        w.write_record([
            e.estimator.as_str().to_string(),
            fmt(e.estimate),
            fmt(e.bootstrap_mean),
            fmt(e.ci_low),
            fmt(e.ci_high),
            e.n_treated.to_string(),
            e.n_control.to_string(),
            e.resamples.to_string(),
            e.p_value.map(fmt).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| open_err(path, e))?;
    Ok(())
}

/// Balance table: covariate, smd_pre, smd_post.
pub fn write_balance_csv(path: &Path, pre: &[SmdRow], post: &[SmdRow]) -> Result<()> {
    let post_by: BTreeMap<&str, f64> = post.iter().map(|r| (r.covariate.as_str(), r.smd)).collect();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["covariate", "smd_pre", "smd_post"])?;
    for r in pre {
        w.write_record([
            r.covariate.clone(),
            fmt(r.smd),
            post_by.get(r.covariate.as_str()).map(|v| fmt(*v)).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| open_err(path, e))?;
    Ok(())
}

pub fn write_propensity_hist_csv(path: &Path, bins: &[(f64, f64, u64, u64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin_low", "bin_high", "treated", "control"])?;
    for &(lo, hi, t, c) in bins {
        w.write_record([fmt(lo), fmt(hi), t.to_string(), c.to_string()])?;
    }
    w.flush().map_err(|e| open_err(path, e))?;
    Ok(())
}

pub fn write_comparator_csv(path: &Path, series: &ComparatorSeries) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["hop", "n", "mean_lri", "ci_low", "ci_high"])?;
    for r in &series.rows {
        w.write_record([
            r.hop.to_string(),
            r.n.to_string(),
            fmt(r.mean_lri),
            fmt(r.ci_low),
            fmt(r.ci_high),
        ])?;
    }
    w.flush().map_err(|e| open_err(path, e))?;
    Ok(())
}

/// Intent CSV: id, intent, restriction_score.
pub fn write_intents_csv(path: &Path, rows: &[(String, Intent, Option<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "intent", "restriction_score"])?;
    for (id, intent, score) in rows {
        w.write_record([
            id.clone(),
            intent.as_str().to_string(),
            score.map(fmt).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| open_err(path, e))?;
    Ok(())
}

pub fn read_intents_csv(path: &Path) -> Result<Vec<(String, Intent, Option<f64>)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let score = match rec.get(2) {
            Some("") | None => None,
            Some(s) => Some(s.parse::<f64>().map_err(|e| {
                Error::Config(format!("{}: bad score {s:?}: {e}", path.display()))
            })?),
        };
        out.push((rec[0].to_string(), Intent::parse(&rec[1])?, score));
    }
    Ok(out)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| open_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repo_record_roundtrip_and_licence_merge() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("repos.jsonl");
        let rec = RepoRecord {
            id: "org/model".into(),
            created_at: Some("2024-05-01T12:00:00Z".into()),
            tags: vec!["license:mit".into(), "base_model:finetune:org/base".into()],
            yaml_text: "license: apache-2.0\n".into(),
            readme_text: String::new(),
            licence_names: vec!["MIT".into()],
            licence_text: None,
            downloads: 10,
            likes: 2,
        };
        write_jsonl(&path, std::slice::from_ref(&rec)).unwrap();
        let back = read_repo_records(&path).unwrap();
        assert_eq!(back, vec![rec.clone()]);
        // MIT (field), mit (tag, deduped case-insensitively), apache-2.0 (yaml)
        assert_eq!(rec.effective_licence_names(), vec!["MIT", "apache-2.0"]);
        assert_eq!(rec.created_epoch(), Some(1_714_564_800));
    }

    #[test]
    fn edges_csv_roundtrip_and_three_column_form() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edges.csv");
        let edges = vec![DerivationEdge {
            child: "b/b".into(),
            parent: "a/a".into(),
            edge_type: EdgeType::Quantization,
            evidence_source: EdgeEvidence::NamePattern,
        }];
        write_edges_csv(&path, &edges).unwrap();
        assert_eq!(read_edges_csv(&path).unwrap(), edges);

        std::fs::write(&path, "child,parent,edge_type\nb/b,a/a,merge\n").unwrap();
        let e = read_edges_csv(&path).unwrap();
        assert_eq!(e[0].edge_type, EdgeType::Merge);
        assert_eq!(e[0].evidence_source, EdgeEvidence::YamlField);
    }

    #[test]
    fn graph_snapshot_roundtrip() {
        use crate::graph::{build_graph, BuildMode};
        let dir = tempfile::tempdir().unwrap();
        let mut n1 = ModelNode::new("a/a");
        n1.intent = Intent::Restrictive;
        n1.restriction_score = Some(2.0);
        n1.created_at = Some(1_700_000_000);
        let n2 = ModelNode::new("b/b");
        let edges = vec![DerivationEdge {
            child: "b/b".into(),
            parent: "a/a".into(),
            edge_type: EdgeType::Finetune,
            evidence_source: EdgeEvidence::Tag,
        }];
        let g = build_graph(&edges, vec![n1, n2], BuildMode::Strict).unwrap();
        save_graph(dir.path(), &g).unwrap();
        let nodes = load_graph_nodes(&dir.path().join("nodes.jsonl")).unwrap();
        let edges2 = read_edges_csv(&dir.path().join("edges.csv")).unwrap();
        let g2 = build_graph(&edges2, nodes, BuildMode::Strict).unwrap();
        assert_eq!(g2.len(), g.len());
        assert_eq!(g2.node(0).intent, Intent::Restrictive);
        assert_eq!(g2.node(0).restriction_score, Some(2.0));
        assert_eq!(g2.node(0).created_at, Some(1_700_000_000));
        assert_eq!(g2.edge_count(), 1);
    }
}
