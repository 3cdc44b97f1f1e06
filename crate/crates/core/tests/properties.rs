//! Property tests for the cross-cutting invariants.

use proptest::prelude::*;

use lineage_audit_core::audit::{
    assign_states, node_states, state_composition, AuditConfig,
};
use lineage_audit_core::graph::{
    build_graph, condense, ethical_sources, hop_distances, lineage_depth, BuildMode,
    DerivationEdge, EdgeEvidence, EdgeType, IntentAggregation, ModelNode, DEPTH_HOP_CAP,
    DEPTH_STEP_CAP,
};
use lineage_audit_core::horizon::{
    auditable_proportion, bootstrap_horizon, governance_horizon, HopSeries,
};
use lineage_audit_core::licence::{normalize_licence_text, Classifier, Intent, RuleClass};
use lineage_audit_core::rules::RuleTables;
use std::collections::BTreeSet;

fn classifier() -> Classifier {
    Classifier::new(&RuleTables::builtin().classifier).unwrap()
}

proptest! {
    #[test]
    fn normalize_is_idempotent(raw in "\\PC{0,200}") {
        let once = normalize_licence_text(&raw);
        prop_assert_eq!(normalize_licence_text(&once), once);
    }

    #[test]
    fn score_components_respect_caps_and_sum(text in "[a-z .;]{0,160}") {
        let c = classifier();
        let score = c.score_text(&text);
        let caps = [
            (RuleClass::PolicyReference, 1.0),
            (RuleClass::HardDomain, 2.5),
            (RuleClass::SoftDomain, 1.2),
            (RuleClass::Brand, 0.8),
        ];
        for (class, cap) in caps {
            if let Some(v) = score.components.get(&class) {
                prop_assert!(*v <= cap + 1e-12, "{class:?} = {v} above cap {cap}");
                prop_assert!(*v > 0.0);
            }
        }
        let sum: f64 = score.components.values().sum();
        prop_assert_eq!(score.total, sum);
    }

    #[test]
    fn appending_policy_reference_never_decreases_total(text in "\\PC{0,120}") {
        let c = classifier();
        let before = c.score_text(&text).total;
        let appended = format!("{text}. use is subject to the acceptable use policy.");
        let after = c.score_text(&appended).total;
        prop_assert!(after + 1e-12 >= before, "{before} -> {after}");
    }

    #[test]
    fn horizon_monotone_in_alpha(values in proptest::collection::vec(0.0f64..=1.0, 1..12)) {
        let series = HopSeries {
            hops: (0..values.len() as u32).collect(),
            counts: vec![10; values.len()],
            values,
        };
        let mut last = u32::MAX;
        for alpha in [0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9] {
            let h = governance_horizon(&series, alpha, 11).hop;
            prop_assert!(h <= last);
            last = h;
        }
    }
}

fn chain(ids: &[(&str, Intent)], edges: &[(usize, usize)]) -> lineage_audit_core::graph::LineageGraph {
    let nodes: Vec<ModelNode> = ids
        .iter()
        .map(|(id, intent)| ModelNode {
            intent: *intent,
            ..ModelNode::new(id)
        })
        .collect();
    let e: Vec<DerivationEdge> = edges
        .iter()
        .map(|&(c, p)| DerivationEdge {
            child: ids[c].0.to_string(),
            parent: ids[p].0.to_string(),
            edge_type: EdgeType::Finetune,
            evidence_source: EdgeEvidence::Tag,
        })
        .collect();
    build_graph(&e, nodes, BuildMode::Strict).unwrap()
}

#[test]
fn composition_complement_identity_holds_exactly() {
    // D(h) + UM(h) + UA(h) + I(h) = 1 and the auditable proportion is the
    // exact complement of the undecidable mass
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5150);
    for _ in 0..100 {
        let n = rng.gen_range(3..25usize);
        let mut ids = Vec::new();
        let intents = [Intent::Restrictive, Intent::Permissive, Intent::Unknown];
        for i in 0..n {
            ids.push((format!("p/n{i:02}"), intents[rng.gen_range(0..3)]));
        }
        let id_refs: Vec<(&str, Intent)> = ids.iter().map(|(s, i)| (s.as_str(), *i)).collect();
        let mut edges = Vec::new();
        for c in 1..n {
            for p in 0..c {
                if rng.gen_bool(0.25) {
                    edges.push((c, p));
                }
            }
        }
        let g = chain(&id_refs, &edges);
        let dag = condense(&g, IntentAggregation::RestrictiveFirst, &BTreeSet::new());
        let out = assign_states(&dag, &AuditConfig::default()).unwrap();
        let states = node_states(&dag, &out);
        let sources = ethical_sources(&g);
        if sources.is_empty() {
            continue;
        }
        let hops = hop_distances(&g, &sources, 10);
        let comp = state_composition(&states, &hops, 10);
        let d = auditable_proportion(&comp);
        for (i, row) in comp.iter().enumerate() {
            let total = row.decidable
                + row.inconsistent
                + row.undecidable_missing
                + row.undecidable_ambiguous;
            assert!((total - 1.0).abs() < 1e-12);
            let undecidable = row.undecidable_missing + row.undecidable_ambiguous;
            assert!((d.values[i] - (1.0 - undecidable)).abs() < 1e-12);
        }
    }
}

#[test]
fn lineage_depth_dominates_shortest_path() {
    use rand::{Rng, SeedableRng};
    use std::collections::VecDeque;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(91);
    for _ in 0..60 {
        let n = rng.gen_range(2..12usize);
        let ids: Vec<(String, Intent)> = (0..n)
            .map(|i| (format!("d/n{i:02}"), Intent::Unknown))
            .collect();
        let id_refs: Vec<(&str, Intent)> = ids.iter().map(|(s, i)| (s.as_str(), *i)).collect();
        let mut edges = Vec::new();
        for c in 0..n {
            for p in 0..n {
                if c != p && rng.gen_bool(0.25) {
                    edges.push((c, p));
                }
            }
        }
        let g = chain(&id_refs, &edges);
        let root = 0u32;
        let res = lineage_depth(&g, root, DEPTH_HOP_CAP, DEPTH_STEP_CAP);

        // upstream BFS for shortest distances
        let mut dist = vec![None::<u32>; g.len()];
        let mut q = VecDeque::new();
        dist[root as usize] = Some(0);
        q.push_back(root);
        while let Some(v) = q.pop_front() {
            for e in g.parents_of(v) {
                if dist[e.parent as usize].is_none() {
                    dist[e.parent as usize] = Some(dist[v as usize].unwrap() + 1);
                    q.push_back(e.parent);
                }
            }
        }
        for (i, d) in dist.iter().enumerate() {
            let Some(shortest) = d else { continue };
            if i as u32 == root {
                continue;
            }
            let depth = res.depths[g.id(i as u32)];
            assert!(
                depth >= *shortest,
                "depth {depth} < shortest {shortest} for {}",
                g.id(i as u32)
            );
        }
    }
}

#[test]
fn node_and_edge_counts_conserved_modulo_dedup() {
    let ids = [
        ("c/a", Intent::Restrictive),
        ("c/b", Intent::Permissive),
        ("c/c", Intent::Unknown),
    ];
    // duplicate (b <- a) pair collapses to one edge
    let nodes: Vec<ModelNode> = ids
        .iter()
        .map(|(id, intent)| ModelNode {
            intent: *intent,
            ..ModelNode::new(id)
        })
        .collect();
    let mk = |t: EdgeType, s: EdgeEvidence| DerivationEdge {
        child: "c/b".into(),
        parent: "c/a".into(),
        edge_type: t,
        evidence_source: s,
    };
    let edges = vec![
        mk(EdgeType::BaseModel, EdgeEvidence::ReadmeLink),
        mk(EdgeType::Finetune, EdgeEvidence::Tag),
        DerivationEdge {
            child: "c/c".into(),
            parent: "c/b".into(),
            edge_type: EdgeType::Merge,
            evidence_source: EdgeEvidence::YamlField,
        },
    ];
    let g = build_graph(&edges, nodes, BuildMode::Strict).unwrap();
    assert_eq!(g.len(), 3);
    assert_eq!(g.edge_count(), 2); // 3 input edges, 1 duplicate pair
}

#[test]
fn bootstrap_concentrates_with_large_counts() {
    // per-hop n = 1e4: the bootstrap distribution of H* collapses onto the
    // point estimate (spread below 0.1 hops)
    let mut obs = Vec::new();
    for h in 0..=10u32 {
        // D(h) = 1 - 0.12h: crosses 0.2 at h = 7 (0.16)
        let d = 1.0 - 0.12 * f64::from(h);
        let n = 10_000u32;
        let auditable = (d * f64::from(n)).round() as u32;
        for i in 0..n {
            obs.push((h, i < auditable));
        }
    }
    let est = bootstrap_horizon(&obs, 0.2, 10, 300, 21).unwrap();
    assert_eq!(est.point.hop, 7);
    assert!((est.bootstrap_mean - 7.0).abs() < 0.1, "mean {}", est.bootstrap_mean);
    assert!(est.ci_high - est.ci_low < 0.1, "spread {}", est.ci_high - est.ci_low);
}

#[test]
fn tau_and_reconciliation_inert_without_mixed_merges() {
    // the sensitivity-sweep collapse: on graphs with no mixed-parent merge
    // products, output is invariant to tau and reconciliation
    use lineage_audit_core::audit::{Reconciliation, UpstreamMissing};
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(333);
    for _ in 0..50 {
        let n = rng.gen_range(3..15usize);
        let ids: Vec<(String, Intent)> = (0..n)
            .map(|i| {
                let intent = if rng.gen_bool(0.3) {
                    Intent::Unknown
                } else if rng.gen_bool(0.5) {
                    Intent::Restrictive
                } else {
                    Intent::Permissive
                };
                (format!("t/n{i:02}"), intent)
            })
            .collect();
        let id_refs: Vec<(&str, Intent)> = ids.iter().map(|(s, i)| (s.as_str(), *i)).collect();
        // single-parent chains only: no multi-parent, no merge-typed edges
        let edges: Vec<(usize, usize)> = (1..n).map(|c| (c, rng.gen_range(0..c))).collect();
        let g = chain(&id_refs, &edges);
        let dag = condense(&g, IntentAggregation::RestrictiveFirst, &BTreeSet::new());

        let mut reference = None;
        for tau in 1..=4u8 {
            for recon in [Reconciliation::Strict, Reconciliation::Lenient, Reconciliation::None] {
                let cfg = AuditConfig {
                    tau,
                    reconciliation: recon,
                    upstream_missing: UpstreamMissing::Ambiguous,
                    ..AuditConfig::default()
                };
                let states = node_states(&dag, &assign_states(&dag, &cfg).unwrap());
                match &reference {
                    None => reference = Some(states),
                    Some(r) => assert_eq!(r, &states, "tau={tau} recon={recon:?}"),
                }
            }
        }
    }
}
