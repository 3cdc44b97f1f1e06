//! Platform-intervention simulation: three counterfactual designs for
//! resolving Undecidable-Missing components under stochastic enforcement.
//!
//! Stochasticity comes only from per-component Bernoulli draws over which
//! Unknown-intent components are targeted; the graph and SCC structure stay
//! fixed. Each realization derives its own RNG from (seed, realization
//! index), so results are independent of thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audit::{assign_states_with, AuditConfig};
use crate::error::{Error, Result};
use crate::exec;
use crate::graph::{ethical_sources, hop_distances, CondensedDag, LineageGraph};
use crate::hash::derive_seed;
use crate::horizon::{governance_horizon, series_from_observations, Horizon};
use crate::licence::Intent;
use crate::stats::{mean, percentile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    /// Targeted U inherits the strictest available upstream intent; orphans
    /// stay U.
    InheritStrictest,
    /// Inheritance only when all P/R ancestors agree; mixed ancestries are
    /// flagged terminally ambiguous; orphans stay U.
    AutoPropagate,
    /// Every targeted U receives a definite intent: inherited when available,
    /// else the platform default (Restrictive).
    MandatoryDeclaration,
}

impl Design {
    pub fn as_str(self) -> &'static str {
        match self {
            Design::InheritStrictest => "inherit_strictest",
            Design::AutoPropagate => "auto_propagate",
            Design::MandatoryDeclaration => "mandatory_declaration",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "inherit_strictest" | "inherit" | "strictest" => Ok(Design::InheritStrictest),
            "auto_propagate" | "auto" => Ok(Design::AutoPropagate),
            "mandatory_declaration" | "mandatory" => Ok(Design::MandatoryDeclaration),
            other => Err(Error::Config(format!("unknown design {other:?}"))),
        }
    }
}

impl std::fmt::Display for Design {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterventionPolicy {
    pub design: Design,
    pub enforcement_rate: f64,
    /// Fallback intent for mandatory declaration on orphan components.
    pub default_intent: Intent,
    /// Evaluation window in hops; H* beyond it is right-censored.
    pub window: u32,
    pub realizations: u32,
    pub seed: u64,
    /// Resolutions cascade: a resolved component's new intent is inheritable
    /// by its descendants within the same realization.
    pub cascade: bool,
}

impl InterventionPolicy {
    pub fn new(design: Design) -> Self {
        InterventionPolicy {
            design,
            enforcement_rate: 1.0,
            default_intent: Intent::Restrictive,
            window: 30,
            realizations: 500,
            seed: 0,
            cascade: true,
        }
    }
}

/// Modified intent map for one enforcement realization.
#[derive(Debug, Clone)]
pub struct InterventionOutcome {
    pub intents: Vec<Intent>,
    /// Components flagged terminally ambiguous by auto-propagation.
    pub ua_flagged: Vec<bool>,
}

/// Apply one stochastic enforcement realization in topological order.
/// "Ancestor" means any ancestor in the condensed DAG, not only parents.
pub fn apply_intervention(
    dag: &CondensedDag,
    policy: &InterventionPolicy,
    realization_seed: u64,
) -> InterventionOutcome {
    let nc = dag.len();
    let mut rng = ChaCha8Rng::seed_from_u64(realization_seed);
    let mut intents = dag.intents.clone();
    let mut ua_flagged = vec![false; nc];

    // ancestor intent summaries, updated as the pass walks the topo order;
    // with cascade off they are computed from the baseline intents instead
    let mut anc_r = vec![false; nc];
    let mut anc_p = vec![false; nc];

    for &c in &dag.topo {
        let ci = c as usize;
        for &p in &dag.parents[ci] {
            let pi = p as usize;
            let p_intent = if policy.cascade {
                intents[pi]
            } else {
                dag.intents[pi]
            };
            anc_r[ci] |= anc_r[pi] || p_intent == Intent::Restrictive;
            anc_p[ci] |= anc_p[pi] || p_intent == Intent::Permissive;
        }

        if dag.intents[ci] != Intent::Unknown {
            continue;
        }
        // one Bernoulli draw per baseline-U component, in topo order
        let targeted = rng.gen::<f64>() < policy.enforcement_rate;
        if !targeted {
            continue;
        }
        match policy.design {
            Design::InheritStrictest => {
                if anc_r[ci] {
                    intents[ci] = Intent::Restrictive;
                } else if anc_p[ci] {
                    intents[ci] = Intent::Permissive;
                } // orphan: remains U
            }
            Design::AutoPropagate => {
                if anc_r[ci] && anc_p[ci] {
                    ua_flagged[ci] = true;
                } else if anc_r[ci] {
                    intents[ci] = Intent::Restrictive;
                } else if anc_p[ci] {
                    intents[ci] = Intent::Permissive;
                } // orphan: remains U
            }
            Design::MandatoryDeclaration => {
                if anc_r[ci] {
                    intents[ci] = Intent::Restrictive;
                } else if anc_p[ci] {
                    intents[ci] = Intent::Permissive;
                } else {
                    intents[ci] = policy.default_intent;
                }
            }
        }
    }

    InterventionOutcome { intents, ua_flagged }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationResult {
    pub design: Design,
    pub enforcement_rate: f64,
    /// H* of the canonical realization (sub-seed 0).
    pub point: Horizon,
    /// Censored realizations enter the mean as window + 1.
    pub mc_mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub censored_fraction: f64,
    pub window: u32,
    pub realizations: u32,
    /// Per-realization count of components left with intent Unknown.
    pub residual_unknown: Vec<u32>,
}

/// Run the full Monte-Carlo simulation: for each realization apply the
/// intervention, re-run the audit pass, rebuild D(h) over the window and take
/// H*(alpha). Sources and hop distances are the baseline ones; the
/// intervention changes audit evidence, not the lineage graph.
pub fn simulate(
    g: &LineageGraph,
    dag: &CondensedDag,
    policy: &InterventionPolicy,
    audit_cfg: &AuditConfig,
) -> Result<SimulationResult> {
    let sources = ethical_sources(g);
    if sources.is_empty() {
        return Err(Error::NoSources);
    }
    let hops = hop_distances(g, &sources, policy.window);
    let in_window: Vec<(u32, u32)> = hops
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.map(|h| (i as u32, h)))
        .collect();

    let outcomes: Vec<Result<(f64, bool, u32)>> =
        exec::map_indexed(policy.realizations as usize, |r| {
            let outcome = apply_intervention(dag, policy, derive_seed(policy.seed, r as u64));
            let audit =
                assign_states_with(dag, audit_cfg, &outcome.intents, Some(&outcome.ua_flagged))?;
            let obs: Vec<(u32, bool)> = in_window
                .iter()
                .map(|&(node, hop)| {
                    let comp = dag.member_of[node as usize] as usize;
                    (hop, audit.states[comp].state.is_auditable())
                })
                .collect();
            let d = series_from_observations(&obs, policy.window);
            let h = governance_horizon(&d, audit_cfg.alpha, policy.window);
            let residual = outcome
                .intents
                .iter()
                .filter(|&&i| i == Intent::Unknown)
                .count() as u32;
            Ok((h.value(), h.censored, residual))
        });

    let mut h_values = Vec::with_capacity(outcomes.len());
    let mut censored = 0usize;
    let mut residual_unknown = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        let (h, c, residual) = o?;
        h_values.push(h);
        if c {
            censored += 1;
        }
        residual_unknown.push(residual);
    }

    let point_value = h_values[0];
    Ok(SimulationResult {
        design: policy.design,
        enforcement_rate: policy.enforcement_rate,
        point: Horizon {
            hop: point_value as u32,
            censored: point_value > f64::from(policy.window),
        },
        mc_mean: mean(&h_values),
        ci_low: percentile(&h_values, 2.5),
        ci_high: percentile(&h_values, 97.5),
        censored_fraction: censored as f64 / h_values.len() as f64,
        window: policy.window,
        realizations: policy.realizations,
        residual_unknown,
    })
}

/// Render an H* value against a window: values beyond the window print as
/// ">window" (right-censoring notation).
pub fn format_h_value(value: f64, window: u32) -> String {
    if value > f64::from(window) {
        format!(">{window}")
    } else if (value - value.round()).abs() < 1e-9 {
        format!("{}", value.round() as i64)
    } else {
        format!("{value:.3}")
    }
}
