//! Seeded synthetic lineage ecosystems with known ground truth: layered DAGs
//! with per-generation restriction restatement, merge second-parents, orphan
//! Unknown components, and an optional confounded causal cohort for the
//! effect-estimator checks. Output is byte-identical for identical spec and
//! seed.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{DerivationEdge, EdgeEvidence, EdgeType};
use crate::io::{epoch_to_rfc3339, RepoRecord};
use crate::stats::logistic;

/// Licence text planted on restatement: scores policy-reference + frame +
/// hard-domain, well above the restriction threshold.
pub const RESTRICTIVE_TEXT: &str = "acme responsible ai licence. use is subject to the \
acceptable use policy. you agree not to use this model for military purposes or weapon \
development.";

/// Licence text planted on non-restating nodes: permissive, scores zero.
pub const PERMISSIVE_TEXT: &str = "permission is hereby granted, free of charge, to any \
person obtaining a copy of this software, to deal in the software without restriction. \
the software is provided as is, without warranty of any kind.";

const BASE_EPOCH: i64 = 1_704_067_200; // 2024-01-01T00:00:00Z
const CAUSAL_REFERENCE_EPOCH: i64 = 1_759_276_800; // 2025-10-01T00:00:00Z

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CausalSpec {
    pub n_cases: usize,
    pub true_ate: f64,
    /// Coefficient of the parent missing-rate confounder in the treatment
    /// model (logistic in the case covariates, so the propensity model is
    /// correctly specified).
    pub confounder_strength: f64,
    /// Baseline outcome probability for the untreated arm.
    pub base_rate: f64,
}

impl Default for CausalSpec {
    fn default() -> Self {
        CausalSpec {
            n_cases: 20_000,
            true_ate: 0.03,
            confounder_strength: 2.5,
            base_rate: 0.04,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n_roots: usize,
    pub generations: usize,
    /// Mean children per node: layer g has round(width(g-1) * branching)
    /// nodes.
    pub branching: f64,
    /// Probability that a child restates its parent's restriction evidence.
    pub restatement_prob: f64,
    /// Probability that a non-root node gets a second (merge) parent.
    pub merge_prob: f64,
    /// Disconnected all-Unknown 3-node chains with no P/R ancestor.
    pub orphan_component_count: usize,
    /// Probability that a non-root node hides its licence evidence entirely.
    pub missing_prob: f64,
    /// Probability that a child attaches to the head of the previous layer
    /// (skewed reuse) instead of a uniform parent.
    #[serde(default)]
    pub hub_bias: f64,
    #[serde(default)]
    pub causal: Option<CausalSpec>,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            n_roots: 4,
            generations: 6,
            branching: 2.0,
            restatement_prob: 0.5,
            merge_prob: 0.1,
            orphan_component_count: 0,
            missing_prob: 0.0,
            hub_bias: 0.0,
            causal: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseTruth {
    pub child_id: String,
    pub treated: bool,
    pub outcome: bool,
    pub y0: bool,
    pub y1: bool,
    pub p0: f64,
    pub p1: f64,
    pub propensity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CausalTruth {
    pub true_ate: f64,
    pub reference_epoch: i64,
    pub cases: Vec<CaseTruth>,
}

/// Everything needed to recompute the oracle checks without re-running the
/// generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: GeneratorSpec,
    /// node id -> generation index (hop distance from the roots).
    pub layer: BTreeMap<String, u32>,
    /// node id -> whether restriction evidence was restated.
    pub restated: BTreeMap<String, bool>,
    /// node id -> intended intent ("restrictive"/"permissive"/"unknown").
    pub intended_intent: BTreeMap<String, String>,
    pub orphan_roots: Vec<String>,
    pub causal: Option<CausalTruth>,
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub records: Vec<RepoRecord>,
    pub edges: Vec<DerivationEdge>,
    pub truth: GroundTruth,
}

const FAMILY_ORGS: [(&str, &str); 4] = [
    ("meta-llama", "llama"),
    ("mistralai", "mistral"),
    ("Qwen", "qwen"),
    ("acme", "plain"),
];

struct NodePlan {
    id: String,
    created_at: i64,
    restated: bool,
    missing: bool,
}

pub fn generate(spec: &GeneratorSpec) -> Generated {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records: Vec<RepoRecord> = Vec::new();
    let mut edges: Vec<DerivationEdge> = Vec::new();
    let mut layer_map = BTreeMap::new();
    let mut restated_map = BTreeMap::new();
    let mut intent_map = BTreeMap::new();

    // layered lineage part
    let mut prev_layer: Vec<NodePlan> = Vec::new();
    if spec.n_roots > 0 {
        for i in 0..spec.n_roots {
            let (org, fam) = FAMILY_ORGS[i % FAMILY_ORGS.len()];
            prev_layer.push(NodePlan {
                id: format!("{org}/{fam}-base-{i:05}"),
                created_at: BASE_EPOCH + i as i64,
                restated: true,
                missing: false,
            });
        }
        emit_layer(&prev_layer, &mut records, &mut rng);

        let mut width = spec.n_roots as f64;
        for g in 1..=spec.generations {
            width = (width * spec.branching).round().max(1.0);
            let mut layer: Vec<NodePlan> = Vec::with_capacity(width as usize);
            for i in 0..width as usize {
                let p0 = pick_parent(&prev_layer, spec.hub_bias, &mut rng);
                let parent0 = &prev_layer[p0];
                let fam = parent0
                    .id
                    .rsplit('/')
                    .next()
                    .and_then(|n| n.split('-').next())
                    .unwrap_or("plain")
                    .to_string();
                let id = format!("hub{g:02}/{fam}-g{g:02}-n{i:05}");
                let restated = parent0.restated && rng.gen::<f64>() < spec.restatement_prob;
                let missing = rng.gen::<f64>() < spec.missing_prob;
                edges.push(DerivationEdge {
                    child: id.clone(),
                    parent: parent0.id.clone(),
                    edge_type: EdgeType::Finetune,
                    evidence_source: EdgeEvidence::Tag,
                });
                if prev_layer.len() > 1 && rng.gen::<f64>() < spec.merge_prob {
                    let mut p1 = pick_parent(&prev_layer, spec.hub_bias, &mut rng);
                    if p1 == p0 {
                        p1 = (p1 + 1) % prev_layer.len();
                    }
                    edges.push(DerivationEdge {
                        child: id.clone(),
                        parent: prev_layer[p1].id.clone(),
                        edge_type: EdgeType::Merge,
                        evidence_source: EdgeEvidence::Tag,
                    });
                }
                layer.push(NodePlan {
                    id,
                    created_at: BASE_EPOCH + g as i64 * 2_592_000 + i as i64,
                    restated,
                    missing,
                });
            }
            emit_layer(&layer, &mut records, &mut rng);
            prev_layer = layer;
        }
    }

    // orphan components: disconnected single Unknown nodes, so each is
    // exactly one condensed-DAG component with no P/R ancestor
    let mut orphan_roots = Vec::new();
    for k in 0..spec.orphan_component_count {
        let id = format!("orphan{k:03}/n0");
        orphan_roots.push(id.clone());
        records.push(RepoRecord {
            id,
            created_at: Some(epoch_to_rfc3339(BASE_EPOCH + k as i64)),
            downloads: rng.gen_range(0..100),
            likes: rng.gen_range(0..10),
            ..RepoRecord::default()
        });
    }

    // confounded causal cohort
    let causal = spec.causal.as_ref().map(|cs| {
        let mut cases = Vec::with_capacity(cs.n_cases);
        for i in 0..cs.n_cases {
            let case = gen_case(cs, i, &mut rng, &mut records, &mut edges);
            cases.push(case);
        }
        CausalTruth {
            true_ate: cs.true_ate,
            reference_epoch: CAUSAL_REFERENCE_EPOCH,
            cases,
        }
    });

    // ground-truth maps from the emitted records
    for rec in &records {
        let intent = if rec.licence_text.is_none() && rec.licence_names.is_empty() {
            "unknown"
        } else if rec.licence_text.as_deref() == Some(RESTRICTIVE_TEXT) {
            "restrictive"
        } else {
            "permissive"
        };
        intent_map.insert(rec.id.clone(), intent.to_string());
    }
    collect_layers(&records, &mut layer_map, &mut restated_map);

    records.sort_by(|a, b| a.id.cmp(&b.id));
    edges.sort_by(|a, b| (&a.child, &a.parent).cmp(&(&b.child, &b.parent)));

    Generated {
        records,
        edges,
        truth: GroundTruth {
            spec: spec.clone(),
            layer: layer_map,
            restated: restated_map,
            intended_intent: intent_map,
            orphan_roots,
            causal,
        },
    }
}

fn pick_parent(prev: &[NodePlan], hub_bias: f64, rng: &mut ChaCha8Rng) -> usize {
    if hub_bias > 0.0 && rng.gen::<f64>() < hub_bias {
        let hubs = (prev.len() / 10).max(1);
        rng.gen_range(0..hubs)
    } else {
        rng.gen_range(0..prev.len())
    }
}

fn emit_layer(layer: &[NodePlan], records: &mut Vec<RepoRecord>, rng: &mut ChaCha8Rng) {
    for p in layer {
        let (names, text): (Vec<String>, Option<String>) = if p.missing {
            (Vec::new(), None)
        } else if p.restated {
            (vec!["acme-rail".into()], Some(RESTRICTIVE_TEXT.into()))
        } else {
            (vec!["mit".into()], Some(PERMISSIVE_TEXT.into()))
        };
        records.push(RepoRecord {
            id: p.id.clone(),
            created_at: Some(epoch_to_rfc3339(p.created_at)),
            licence_names: names,
            licence_text: text,
            downloads: rng.gen_range(0..10_000),
            likes: rng.gen_range(0..500),
            ..RepoRecord::default()
        });
    }
}

fn collect_layers(
    records: &[RepoRecord],
    layers: &mut BTreeMap<String, u32>,
    restated: &mut BTreeMap<String, bool>,
) {
    for rec in records {
        let layer = if let Some(rest) = rec.id.strip_prefix("hub") {
            rest.split('/').next().and_then(|g| g.parse::<u32>().ok())
        } else if rec.id.contains("-base-") {
            Some(0)
        } else {
            None
        };
        if let Some(l) = layer {
            layers.insert(rec.id.clone(), l);
            restated.insert(
                rec.id.clone(),
                rec.licence_text.as_deref() == Some(RESTRICTIVE_TEXT),
            );
        }
    }
}

/// One confounded merge case: a child with `np` merge parents of which `m`
/// are unscored, treatment drawn from a logistic in the covariates, and an
/// additive treatment effect on the outcome probability.
fn gen_case(
    cs: &CausalSpec,
    index: usize,
    rng: &mut ChaCha8Rng,
    records: &mut Vec<RepoRecord>,
    edges: &mut Vec<DerivationEdge>,
) -> CaseTruth {
    let np = rng.gen_range(2..=6usize);
    let m = rng.gen_range(0..=np - 2);
    let scored = np - m;
    let age_days = 30.0 + rng.gen::<f64>() * 1000.0;
    let chain_len = rng.gen_range(0..=15usize);

    let missing_rate = m as f64 / np as f64;
    let z = cs.confounder_strength * (missing_rate - 0.25) + 0.12 * (np as f64 - 4.0) + 0.45;
    let propensity = logistic(z);
    let treated = rng.gen::<f64>() < propensity;

    let p0 = (cs.base_rate + 0.15 * missing_rate).clamp(0.0, 1.0 - cs.true_ate);
    let p1 = p0 + cs.true_ate;
    let y0 = rng.gen::<f64>() < p0;
    let y1 = rng.gen::<f64>() < p1;
    let outcome = if treated { y1 } else { y0 };

    let prefix = format!("case{index:06}");
    let child_id = format!("{prefix}/child");
    let child_created = CAUSAL_REFERENCE_EPOCH - (age_days * 86_400.0) as i64;
    let parent_created = child_created - 40 * 86_400;

    // scored parents: all restrictive for controls, mixed for treated
    let restrictive_count = if treated {
        1 + rng.gen_range(0..scored - 1)
    } else {
        scored
    };
    let mut parent_ids = Vec::with_capacity(np);
    for j in 0..scored {
        let pid = format!("{prefix}/sp{j}");
        let restrictive = j < restrictive_count;
        records.push(RepoRecord {
            id: pid.clone(),
            created_at: Some(epoch_to_rfc3339(parent_created)),
            licence_names: vec![if restrictive { "acme-rail" } else { "mit" }.into()],
            licence_text: Some(if restrictive { RESTRICTIVE_TEXT } else { PERMISSIVE_TEXT }.into()),
            ..RepoRecord::default()
        });
        parent_ids.push(pid);
    }
    for j in 0..m {
        let pid = format!("{prefix}/mp{j}");
        records.push(RepoRecord {
            id: pid.clone(),
            created_at: Some(epoch_to_rfc3339(parent_created)),
            ..RepoRecord::default()
        });
        parent_ids.push(pid);
    }
    for pid in &parent_ids {
        edges.push(DerivationEdge {
            child: child_id.clone(),
            parent: pid.clone(),
            edge_type: EdgeType::Merge,
            evidence_source: EdgeEvidence::Tag,
        });
    }
    // ancestor chain above the first scored parent sets the lineage size
    let mut upper = parent_ids[0].clone();
    for d in 0..chain_len {
        let aid = format!("{prefix}/anc{d:02}");
        records.push(RepoRecord {
            id: aid.clone(),
            created_at: Some(epoch_to_rfc3339(parent_created - (d as i64 + 1) * 86_400)),
            licence_names: vec!["mit".into()],
            licence_text: Some(PERMISSIVE_TEXT.into()),
            ..RepoRecord::default()
        });
        edges.push(DerivationEdge {
            child: upper,
            parent: aid.clone(),
            edge_type: EdgeType::Finetune,
            evidence_source: EdgeEvidence::Tag,
        });
        upper = aid;
    }

    records.push(RepoRecord {
        id: child_id.clone(),
        created_at: Some(epoch_to_rfc3339(child_created)),
        licence_names: if outcome { vec!["mit".into()] } else { Vec::new() },
        licence_text: outcome.then(|| PERMISSIVE_TEXT.into()),
        ..RepoRecord::default()
    });

    CaseTruth {
        child_id,
        treated,
        outcome,
        y0,
        y1,
        p0,
        p1,
        propensity,
    }
}
