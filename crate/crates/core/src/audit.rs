//! Four-state audit assignment over the condensed lineage DAG.
//!
//! States are assigned in topological order under a fixed priority:
//! 1. own intent Unknown -> Undecidable-Missing;
//! 2. merge product with mixed R/P parent intents and evidence below the
//!    threshold -> Undecidable-Ambiguous (merge conflict);
//! 3. any ancestor Undecidable-Missing -> UA or UM depending on the
//!    upstream-missingness propagation policy;
//! 4. own intent Permissive below a passthrough-restrictive ancestor ->
//!    Inconsistent;
//! 5. otherwise Decidable.
//!
//! Rule 2 reads the parents' declared (aggregated) intents, not their
//! post-reconciliation effective intents; this keeps the state assignment
//! monotone in the merge-evidence threshold. Reconciliation therefore only
//! affects the exported effective intent of resolved conflicts, except for
//! the `none` policy, under which conflicts are never resolved.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CondensedDag;
use crate::licence::Intent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reconciliation {
    Strict,
    Lenient,
    None,
}

impl Reconciliation {
    pub fn as_str(self) -> &'static str {
        match self {
            Reconciliation::Strict => "strict",
            Reconciliation::Lenient => "lenient",
            Reconciliation::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(Reconciliation::Strict),
            "lenient" => Ok(Reconciliation::Lenient),
            "none" => Ok(Reconciliation::None),
            other => Err(Error::Config(format!("unknown reconciliation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpstreamMissing {
    /// A UM ancestor makes downstream nodes Undecidable-Ambiguous.
    Ambiguous,
    /// A UM ancestor is coded as missing downstream as well.
    Missing,
}

impl UpstreamMissing {
    pub fn as_str(self) -> &'static str {
        match self {
            UpstreamMissing::Ambiguous => "ambiguous",
            UpstreamMissing::Missing => "missing",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ambiguous" => Ok(UpstreamMissing::Ambiguous),
            "missing" => Ok(UpstreamMissing::Missing),
            other => Err(Error::Config(format!(
                "unknown upstream-missing policy {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditConfig {
    /// Merge-evidence threshold; a mixed-parent merge with fewer distinct
    /// evidence signals stays Undecidable-Ambiguous.
    pub tau: u8,
    pub reconciliation: Reconciliation,
    pub upstream_missing: UpstreamMissing,
    pub max_hop: u32,
    pub alpha: f64,
}

impl Default for AuditConfig {
    /// The main-analysis configuration: strict reconciliation, upstream
    /// missingness treated as ambiguous, 10-hop window, alpha 0.20.
    fn default() -> Self {
        AuditConfig {
            tau: 2,
            reconciliation: Reconciliation::Strict,
            upstream_missing: UpstreamMissing::Ambiguous,
            max_hop: 10,
            alpha: 0.20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    Decidable,
    Inconsistent,
    UndecidableMissing,
    UndecidableAmbiguous,
}

impl StateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StateKind::Decidable => "decidable",
            StateKind::Inconsistent => "inconsistent",
            StateKind::UndecidableMissing => "undecidable_missing",
            StateKind::UndecidableAmbiguous => "undecidable_ambiguous",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "decidable" => Ok(StateKind::Decidable),
            "inconsistent" => Ok(StateKind::Inconsistent),
            "undecidable_missing" => Ok(StateKind::UndecidableMissing),
            "undecidable_ambiguous" => Ok(StateKind::UndecidableAmbiguous),
            other => Err(Error::Config(format!("unknown audit state {other:?}"))),
        }
    }

    /// Auditable means a governance determination is supported: Decidable or
    /// Inconsistent.
    pub fn is_auditable(self) -> bool {
        matches!(self, StateKind::Decidable | StateKind::Inconsistent)
    }
}

impl std::fmt::Display for StateKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    OwnMissing,
    MergeConflict,
    UpstreamMissing,
    PassthroughViolation,
    Clean,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::OwnMissing => "own_missing",
            Reason::MergeConflict => "merge_conflict",
            Reason::UpstreamMissing => "upstream_missing",
            Reason::PassthroughViolation => "passthrough_violation",
            Reason::Clean => "clean",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "own_missing" => Ok(Reason::OwnMissing),
            "merge_conflict" => Ok(Reason::MergeConflict),
            "upstream_missing" => Ok(Reason::UpstreamMissing),
            "passthrough_violation" => Ok(Reason::PassthroughViolation),
            "clean" => Ok(Reason::Clean),
            other => Err(Error::Config(format!("unknown reason {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditState {
    pub state: StateKind,
    pub reason: Reason,
}

impl AuditState {
    fn new(state: StateKind, reason: Reason) -> Self {
        AuditState { state, reason }
    }
}

/// Per-component states plus the effective intents used for reporting.
#[derive(Debug, Clone)]
pub struct AuditOutcome {
    pub states: Vec<AuditState>,
    pub effective_intents: Vec<Intent>,
}

/// Assign audit states with the DAG's own intents.
pub fn assign_states(dag: &CondensedDag, cfg: &AuditConfig) -> Result<AuditOutcome> {
    assign_states_with(dag, cfg, &dag.intents, None)
}

/// Assign audit states with an overridden intent map (used by the
/// intervention simulator). `ua_flagged` components were marked terminally
/// ambiguous by an auto-propagation intervention and classify as UA before
/// any other rule fires.
pub fn assign_states_with(
    dag: &CondensedDag,
    cfg: &AuditConfig,
    intents: &[Intent],
    ua_flagged: Option<&[bool]>,
) -> Result<AuditOutcome> {
    let nc = dag.len();
    if dag.topo.len() != nc {
        return Err(Error::NotADag(nc - dag.topo.len()));
    }
    let mut states: Vec<Option<AuditState>> = vec![None; nc];
    let mut effective: Vec<Intent> = intents.to_vec();
    let mut um_anc = vec![false; nc];
    let mut pass_anc = vec![false; nc];

    for &c in &dag.topo {
        let ci = c as usize;
        for &p in &dag.parents[ci] {
            let pi = p as usize;
            let p_state = states[pi].expect("parents precede children in topo order");
            if p_state.state == StateKind::UndecidableMissing || um_anc[pi] {
                um_anc[ci] = true;
            }
            if dag.passthrough[pi] || pass_anc[pi] {
                pass_anc[ci] = true;
            }
        }

        let mut has_r_parent = false;
        let mut has_p_parent = false;
        for &p in &dag.parents[ci] {
            match intents[p as usize] {
                Intent::Restrictive => has_r_parent = true,
                Intent::Permissive => has_p_parent = true,
                Intent::Unknown => {}
            }
        }
        let mixed = has_r_parent && has_p_parent;
        let conflict = dag.is_merge[ci] && mixed;
        let unresolved = conflict
            && (cfg.reconciliation == Reconciliation::None || dag.evidence_count[ci] < cfg.tau);

        let flagged = ua_flagged.is_some_and(|f| f[ci]);
        let state = if flagged {
            AuditState::new(StateKind::UndecidableAmbiguous, Reason::MergeConflict)
        } else if intents[ci] == Intent::Unknown {
            AuditState::new(StateKind::UndecidableMissing, Reason::OwnMissing)
        } else if unresolved {
            AuditState::new(StateKind::UndecidableAmbiguous, Reason::MergeConflict)
        } else if um_anc[ci] {
            match cfg.upstream_missing {
                UpstreamMissing::Ambiguous => {
                    AuditState::new(StateKind::UndecidableAmbiguous, Reason::UpstreamMissing)
                }
                UpstreamMissing::Missing => {
                    AuditState::new(StateKind::UndecidableMissing, Reason::UpstreamMissing)
                }
            }
        } else if intents[ci] == Intent::Permissive && pass_anc[ci] {
            AuditState::new(StateKind::Inconsistent, Reason::PassthroughViolation)
        } else {
            AuditState::new(StateKind::Decidable, Reason::Clean)
        };
        states[ci] = Some(state);

        // resolved conflicts adopt an effective intent per the reconciliation
        // policy; reporting-level only (see module docs)
        if conflict && !unresolved && cfg.reconciliation == Reconciliation::Strict {
            effective[ci] = Intent::Restrictive;
        }
    }

    Ok(AuditOutcome {
        states: states.into_iter().map(Option::unwrap).collect(),
        effective_intents: effective,
    })
}

/// Expand component states to node level.
pub fn node_states(dag: &CondensedDag, outcome: &AuditOutcome) -> Vec<AuditState> {
    dag.member_of
        .iter()
        .map(|&c| outcome.states[c as usize])
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionRow {
    pub hop: u32,
    pub n: u64,
    pub decidable: f64,
    pub inconsistent: f64,
    pub undecidable_missing: f64,
    pub undecidable_ambiguous: f64,
}

fn composition_impl(
    states: &[AuditState],
    hops: &[Option<u32>],
    max_hop: u32,
    include: impl Fn(&AuditState) -> bool,
) -> Vec<CompositionRow> {
    let mut counts = vec![[0u64; 4]; (max_hop + 1) as usize];
    for (i, hop) in hops.iter().enumerate() {
        let Some(h) = hop else { continue };
        if *h > max_hop {
            continue;
        }
        let st = &states[i];
        if !include(st) {
            continue;
        }
        let k = match st.state {
            StateKind::Decidable => 0,
            StateKind::Inconsistent => 1,
            StateKind::UndecidableMissing => 2,
            StateKind::UndecidableAmbiguous => 3,
        };
        counts[*h as usize][k] += 1;
    }
    counts
        .iter()
        .enumerate()
        .filter_map(|(h, c)| {
            let n: u64 = c.iter().sum();
            if n == 0 {
                return None; // hops with zero nodes are omitted
            }
            let f = |x: u64| x as f64 / n as f64;
            Some(CompositionRow {
                hop: h as u32,
                n,
                decidable: f(c[0]),
                inconsistent: f(c[1]),
                undecidable_missing: f(c[2]),
                undecidable_ambiguous: f(c[3]),
            })
        })
        .collect()
}

/// Per-hop fractions of the four states; fractions sum to 1 per row.
pub fn state_composition(
    states: &[AuditState],
    hops: &[Option<u32>],
    max_hop: u32,
) -> Vec<CompositionRow> {
    composition_impl(states, hops, max_hop, |_| true)
}

/// Same, restricted to nodes whose local evidence is present (reason is not
/// own-missing).
pub fn conditional_composition(
    states: &[AuditState],
    hops: &[Option<u32>],
    max_hop: u32,
) -> Vec<CompositionRow> {
    composition_impl(states, hops, max_hop, |st| st.reason != Reason::OwnMissing)
}
