//! Stage implementations shared by the subcommands and the `run` pipeline.
//! Every stage reports the files it read and wrote so the pipeline manifest
//! can record digests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use lineage_audit_core::audit::{
    assign_states, conditional_composition, node_states, state_composition, AuditConfig,
    Reconciliation, UpstreamMissing,
};
use lineage_audit_core::cards::{extract_edges, CardParser, TypingOptions, Universe};
use lineage_audit_core::causal::{
    aipw_ate, build_cases, fit_propensity, ipw_ate, propensity_histogram, psm_att, raw_difference,
    smd, EffectEstimate, PsmOptions, WeightingOptions, DEFAULT_MAX_ITER, DEFAULT_RIDGE,
    DEFAULT_TOL,
};
use lineage_audit_core::comparator::{comparator_curve, stratified_sample};
use lineage_audit_core::graph::{
    build_graph, condense, dot_neighborhood, ethical_sources, hop_distances, BuildMode,
    CondensedDag, IntentAggregation, LineageGraph, ModelNode,
};
use lineage_audit_core::hash::derive_seed;
use lineage_audit_core::horizon::{
    auditable_proportion, bootstrap_horizon, family_curves, fit_exponential, governance_horizon,
    retention_curve, with_binomial_ci, HopSeriesCi, RetentionUnit,
};
use lineage_audit_core::intervention::{simulate, Design, InterventionPolicy};
use lineage_audit_core::io::{
    self, nodes_from_records, read_edges_csv, read_intents_csv, read_releases, read_repo_records,
    RepoRecord,
};
use lineage_audit_core::licence::{Classifier, Intent};
use lineage_audit_core::rules::RuleTables;
use lineage_audit_core::synth::{generate, GeneratorSpec};

pub struct Ctx {
    pub tables: RuleTables,
    pub classifier: Classifier,
}

impl Ctx {
    pub fn new(rules_dir: Option<&Path>, strict_threshold: bool) -> Result<Ctx> {
        let mut tables = RuleTables::load(rules_dir)?;
        if strict_threshold {
            tables.classifier.strict_threshold = true;
        }
        let classifier = Classifier::new(&tables.classifier)?;
        Ok(Ctx { tables, classifier })
    }
}

/// Files a stage touched.
#[derive(Debug, Default)]
pub struct StageIo {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl StageIo {
    fn input(&mut self, p: impl Into<PathBuf>) -> &mut Self {
        self.inputs.push(p.into());
        self
    }
    fn output(&mut self, p: impl Into<PathBuf>) -> &mut Self {
        self.outputs.push(p.into());
        self
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)
                .with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// shared audit knobs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, clap::Args)]
#[serde(deny_unknown_fields, default)]
pub struct AuditKnobs {
    /// Merge-evidence threshold (distinct signal kinds).
    #[arg(long, default_value_t = 2)]
    pub tau: u8,
    /// strict | lenient | none
    #[arg(long, default_value = "strict")]
    pub reconciliation: String,
    /// ambiguous | missing
    #[arg(long = "upstream-missing", default_value = "ambiguous")]
    pub upstream_missing: String,
    #[arg(long = "max-hop", default_value_t = 10)]
    pub max_hop: u32,
    #[arg(long, default_value_t = 0.20)]
    pub alpha: f64,
    /// Component intent aggregation: restrictive_first | permissive_first
    #[arg(long, default_value = "restrictive_first")]
    pub aggregation: String,
}

impl Default for AuditKnobs {
    fn default() -> Self {
        AuditKnobs {
            tau: 2,
            reconciliation: "strict".into(),
            upstream_missing: "ambiguous".into(),
            max_hop: 10,
            alpha: 0.20,
            aggregation: "restrictive_first".into(),
        }
    }
}

impl AuditKnobs {
    pub fn config(&self) -> Result<AuditConfig> {
        if self.tau < 1 {
            bail!("tau must be >= 1");
        }
        if !(0.0..1.0).contains(&self.alpha) {
            bail!("alpha must be in (0, 1)");
        }
        Ok(AuditConfig {
            tau: self.tau,
            reconciliation: Reconciliation::parse(&self.reconciliation)?,
            upstream_missing: UpstreamMissing::parse(&self.upstream_missing)?,
            max_hop: self.max_hop,
            alpha: self.alpha,
        })
    }

    pub fn aggregation_order(&self) -> Result<IntentAggregation> {
        match self.aggregation.as_str() {
            "restrictive_first" => Ok(IntentAggregation::RestrictiveFirst),
            "permissive_first" => Ok(IntentAggregation::PermissiveFirst),
            other => bail!("unknown aggregation {other:?}"),
        }
    }
}

fn load_graph(ctx: &Ctx, dir: &Path, io_rec: &mut StageIo) -> Result<(LineageGraph, CondensedDag)> {
    let nodes_path = dir.join("nodes.jsonl");
    let edges_path = dir.join("edges.csv");
    io_rec.input(&nodes_path).input(&edges_path);
    let nodes = io::load_graph_nodes(&nodes_path)?;
    let edges = read_edges_csv(&edges_path)?;
    let g = build_graph(&edges, nodes, BuildMode::Strict)
        .with_context(|| format!("loading graph from {}", dir.display()))?;
    // aggregation order is resolved per stage; the default DAG uses R-first
    let dag = condense(&g, IntentAggregation::RestrictiveFirst, &ctx.tables.passthrough);
    Ok((g, dag))
}

// ---------------------------------------------------------------------------
// classify
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyStage {
    pub repos: PathBuf,
    pub out: PathBuf,
}

pub fn run_classify(ctx: &Ctx, st: &ClassifyStage) -> Result<StageIo> {
    let mut io_rec = StageIo::default();
    io_rec.input(&st.repos).output(&st.out);
    let mut records = read_repo_records(&st.repos)?;
    records.sort_by(|a, b| a.id.cmp(&b.id));
    let nodes = nodes_from_records(&records, &ctx.classifier, &ctx.tables);
    let rows: Vec<(String, Intent, Option<f64>)> = nodes
        .into_iter()
        .map(|n| (n.id, n.intent, n.restriction_score))
        .collect();
    ensure_parent(&st.out)?;
    io::write_intents_csv(&st.out, &rows)?;
    Ok(io_rec)
}

// ---------------------------------------------------------------------------
// parse-cards
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParseCardsStage {
    pub repos: PathBuf,
    pub out: PathBuf,
    #[serde(default)]
    pub warnings: Option<PathBuf>,
    /// Type priority across evidence tiers instead of tier-first dominance.
    #[serde(default)]
    pub type_priority_first: bool,
}

pub fn run_parse_cards(ctx: &Ctx, st: &ParseCardsStage) -> Result<StageIo> {
    let mut io_rec = StageIo::default();
    io_rec.input(&st.repos).output(&st.out);
    let mut records = read_repo_records(&st.repos)?;
    records.sort_by(|a, b| a.id.cmp(&b.id));
    let universe = Universe::new(records.iter().map(|r| r.id.as_str()), &ctx.tables.parser);
    let parser = CardParser::new(&ctx.tables.parser)?;
    let opts = TypingOptions {
        tier_first: !st.type_priority_first,
    };
    let per_repo = lineage_audit_core::exec::map_indexed(records.len(), |i| {
        let r = &records[i];
        extract_edges(
            &parser, &universe, &r.id, &r.yaml_text, &r.tags, &r.readme_text, &opts,
        )
    });
    let mut edges = Vec::new();
    let mut warnings = Vec::new();
    for (e, w) in per_repo {
        edges.extend(e);
        warnings.extend(w);
    }
    ensure_parent(&st.out)?;
    io::write_edges_csv(&st.out, &edges)?;
    if let Some(wpath) = &st.warnings {
        ensure_parent(wpath)?;
        io::write_jsonl(wpath, &warnings)?;
        io_rec.output(wpath);
    }
    Ok(io_rec)
}

// ---------------------------------------------------------------------------
// build-graph
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildGraphStage {
    pub repos: PathBuf,
    pub edges: PathBuf,
    #[serde(default)]
    pub intents: Option<PathBuf>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub strict: bool,
    #[serde(default)]
    pub dot_center: Option<String>,
    #[serde(default)]
    pub dot_radius: Option<u32>,
}

pub fn run_build_graph(ctx: &Ctx, st: &BuildGraphStage) -> Result<StageIo> {
    let mut io_rec = StageIo::default();
    io_rec.input(&st.repos).input(&st.edges);
    let mut records = read_repo_records(&st.repos)?;
    records.sort_by(|a, b| a.id.cmp(&b.id));

    let nodes: Vec<ModelNode> = match &st.intents {
        Some(intents_path) => {
            io_rec.input(intents_path);
            let intents: BTreeMap<String, (Intent, Option<f64>)> = read_intents_csv(intents_path)?
                .into_iter()
                .map(|(id, i, s)| (id, (i, s)))
                .collect();
            records
                .iter()
                .map(|r: &RepoRecord| {
                    let (intent, score) = intents
                        .get(&r.id)
                        .copied()
                        .unwrap_or((Intent::Unknown, None));
                    ModelNode {
                        id: r.id.clone(),
                        created_at: r.created_epoch(),
                        intent,
                        restriction_score: score,
                        licence_names: r.effective_licence_names(),
                        downloads: r.downloads,
                        likes: r.likes,
                        family: lineage_audit_core::graph::family_of(&r.id),
                    }
                })
                .collect()
        }
        None => nodes_from_records(&records, &ctx.classifier, &ctx.tables),
    };

    let edges = read_edges_csv(&st.edges)?;
    let mode = if st.strict {
        BuildMode::Strict
    } else {
        BuildMode::Lenient
    };
    let g = build_graph(&edges, nodes, mode)?;
    std::fs::create_dir_all(&st.out_dir)?;
    io::save_graph(&st.out_dir, &g)?;
    io_rec
        .output(st.out_dir.join("nodes.jsonl"))
        .output(st.out_dir.join("edges.csv"));

    let diagnostics = serde_json::json!({
        "nodes": g.len(),
        "edges": g.edge_count(),
        "stub_nodes": g.stub_ids.len(),
        "stub_sample": g.stub_ids.iter().take(100).collect::<Vec<_>>(),
    });
    let diag_path = st.out_dir.join("diagnostics.json");
    io::write_text(&diag_path, &serde_json::to_string_pretty(&diagnostics)?)?;
    io_rec.output(diag_path);

    if let Some(center) = &st.dot_center {
        let idx = g
            .lookup(center)
            .with_context(|| format!("dot center {center:?} not in graph"))?;
        let dot = dot_neighborhood(&g, idx, st.dot_radius.unwrap_or(2));
        let dot_path = st.out_dir.join("neighborhood.dot");
        io::write_text(&dot_path, &dot)?;
        io_rec.output(dot_path);
    }
    Ok(io_rec)
}

// ---------------------------------------------------------------------------
// audit
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditStage {
    pub graph: PathBuf,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub knobs: AuditKnobs,
    /// Also write the 24-combination tau/reconciliation/propagation sweep.
    #[serde(default)]
    pub sweep: bool,
}

pub fn run_audit(ctx: &Ctx, st: &AuditStage) -> Result<StageIo> {
    let mut io_rec = StageIo::default();
    let (g, _) = load_graph(ctx, &st.graph, &mut io_rec)?;
    let dag = condense(&g, st.knobs.aggregation_order()?, &ctx.tables.passthrough);
    let cfg = st.knobs.config()?;

    let outcome = assign_states(&dag, &cfg)?;
    let states = node_states(&dag, &outcome);
    let sources = ethical_sources(&g);
    let hops = hop_distances(&g, &sources, cfg.max_hop);

    std::fs::create_dir_all(&st.out_dir)?;
    let states_path = st.out_dir.join("states.csv");
    io::write_states_csv(&states_path, &g, &states, &hops)?;
    let comp = state_composition(&states, &hops, cfg.max_hop);
    let comp_path = st.out_dir.join("composition.csv");
    io::write_composition_csv(&comp_path, &comp)?;
    let cond = conditional_composition(&states, &hops, cfg.max_hop);
    let cond_path = st.out_dir.join("conditional_composition.csv");
    io::write_composition_csv(&cond_path, &cond)?;
    io_rec.output(states_path).output(comp_path).output(cond_path);

    if st.sweep {
        let path = st.out_dir.join("governance_tau_robustness_summary.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["tau", "reconciliation", "upstream_missing", "h_star", "d6"])?;
        for tau in 1..=4u8 {
            for recon in [Reconciliation::Strict, Reconciliation::Lenient, Reconciliation::None] {
                for policy in [UpstreamMissing::Ambiguous, UpstreamMissing::Missing] {
                    let cfg = AuditConfig {
                        tau,
                        reconciliation: recon,
                        upstream_missing: policy,
                        ..cfg.clone()
                    };
                    let outcome = assign_states(&dag, &cfg)?;
                    let states = node_states(&dag, &outcome);
                    let comp = state_composition(&states, &hops, cfg.max_hop);
                    let d = auditable_proportion(&comp);
                    let h = governance_horizon(&d, cfg.alpha, cfg.max_hop);
                    let d6 = d
                        .hops
                        .iter()
                        .position(|&h| h == 6)
                        .map(|i| format!("{:.6}", d.values[i]))
                        .unwrap_or_default();
                    w.write_record([
                        tau.to_string(),
                        recon.as_str().to_string(),
                        policy.as_str().to_string(),
                        h.to_string(),
                        d6,
                    ])?;
                }
            }
        }
        w.flush()?;
        io_rec.output(path);
    }
    Ok(io_rec)
}

// ---------------------------------------------------------------------------
// horizon
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonStage {
    pub graph: PathBuf,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub knobs: AuditKnobs,
    #[serde(default = "default_resamples")]
    pub resamples: u32,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Additional thresholds for the alpha-sweep table.
    #[serde(default)]
    pub alpha_sweep: Vec<f64>,
    /// Weight the exponential fit by per-hop counts.
    #[serde(default)]
    pub weighted: bool,
    /// pair | node
    #[serde(default = "default_unit")]
    pub unit: String,
}

fn default_resamples() -> u32 {
    500
}

fn default_unit() -> String {
    "pair".into()
}

pub fn run_horizon(ctx: &Ctx, st: &HorizonStage, fallback_seed: u64) -> Result<StageIo> {
    let mut io_rec = StageIo::default();
    let (g, _) = load_graph(ctx, &st.graph, &mut io_rec)?;
    let dag = condense(&g, st.knobs.aggregation_order()?, &ctx.tables.passthrough);
    let cfg = st.knobs.config()?;
    let seed = st.seed.unwrap_or(fallback_seed);
    let unit = match st.unit.as_str() {
        "pair" => RetentionUnit::Pair,
        "node" => RetentionUnit::Node,
        other => bail!("unknown retention unit {other:?}"),
    };

    let outcome = assign_states(&dag, &cfg)?;
    let states = node_states(&dag, &outcome);
    let sources = ethical_sources(&g);
    let hops = hop_distances(&g, &sources, cfg.max_hop);
    let comp = state_composition(&states, &hops, cfg.max_hop);
    let d = auditable_proportion(&comp);

    std::fs::create_dir_all(&st.out_dir)?;
    let d_path = st.out_dir.join("auditable_proportion.csv");
    io::write_hop_series_csv(&d_path, &with_binomial_ci(d.clone()))?;
    io_rec.output(&d_path);

    let observations: Vec<(u32, bool)> = hops
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.map(|h| (h, states[i].state.is_auditable())))
        .collect();
    let estimate = bootstrap_horizon(&observations, cfg.alpha, cfg.max_hop, st.resamples, seed)?;

    let retention = retention_curve(&g, &sources, cfg.max_hop, unit)?;
    let r_path = st.out_dir.join("retention.csv");
    io::write_hop_series_csv(&r_path, &with_binomial_ci(retention.clone()))?;
    io_rec.output(&r_path);

    let fit = fit_exponential(&retention, false, st.weighted);
    let fams = family_curves(&g, &sources, cfg.max_hop);
    let fam_path = st.out_dir.join("families.csv");
    {
        let mut w = csv::Writer::from_path(&fam_path)?;
        w.write_record(["family", "hop", "value", "count", "ci_low", "ci_high"])?;
        for (fam, curve) in &fams {
            let HopSeriesCi {
                series,
                ci_low,
                ci_high,
            } = curve;
            for i in 0..series.len() {
                w.write_record([
                    fam.as_str().to_string(),
                    series.hops[i].to_string(),
                    format!("{:.6}", series.values[i]),
                    series.counts[i].to_string(),
                    format!("{:.6}", ci_low[i]),
                    format!("{:.6}", ci_high[i]),
                ])?;
            }
        }
        w.flush()?;
    }
    io_rec.output(&fam_path);

    if !st.alpha_sweep.is_empty() {
        let path = st.out_dir.join("horizon_alpha_sweep.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["alpha", "h_star", "bootstrap_mean", "ci_low", "ci_high"])?;
        for &alpha in &st.alpha_sweep {
            let est = bootstrap_horizon(&observations, alpha, cfg.max_hop, st.resamples, seed)?;
            w.write_record([
                format!("{alpha:.2}"),
                est.point.to_string(),
                format!("{:.3}", est.bootstrap_mean),
                format!("{:.3}", est.ci_low),
                format!("{:.3}", est.ci_high),
            ])?;
        }
        w.flush()?;
        io_rec.output(path);
    }

    let summary = serde_json::json!({
        "alpha": cfg.alpha,
        "max_hop": cfg.max_hop,
        "h_star": estimate.point.to_string(),
        "censored": estimate.point.censored,
        "bootstrap_mean": estimate.bootstrap_mean,
        "ci_low": estimate.ci_low,
        "ci_high": estimate.ci_high,
        "resamples": st.resamples,
        "seed": seed,
        "retention_unit": st.unit,
        "retention_fit": match &fit {
            Ok(f) => serde_json::json!({
                "amplitude": f.amplitude,
                "rate": f.rate,
                "half_life": f.half_life,
                "r_squared": f.r_squared,
            }),
            Err(e) => serde_json::json!({ "error": e.to_string() }),
        },
    });
    let s_path = st.out_dir.join("horizon_summary.json");
    io::write_text(&s_path, &serde_json::to_string_pretty(&summary)?)?;
    io_rec.output(s_path);
    Ok(io_rec)
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateStage {
    pub graph: PathBuf,
    pub out: PathBuf,
    /// Comma-separated designs: inherit_strictest, auto_propagate,
    /// mandatory_declaration (or inherit/auto/mandatory).
    pub designs: String,
    /// Enforcement rates, e.g. "0,0.25,0.5,0.75,1.0".
    pub rates: String,
    #[serde(default = "default_realizations")]
    pub realizations: u32,
    #[serde(default = "default_window")]
    pub window: u32,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub no_cascade: bool,
    #[serde(default)]
    pub knobs: AuditKnobs,
}

fn default_realizations() -> u32 {
    500
}

fn default_window() -> u32 {
    30
}

pub fn run_simulate(ctx: &Ctx, st: &SimulateStage, fallback_seed: u64) -> Result<StageIo> {
    let mut io_rec = StageIo::default();
    let (g, _) = load_graph(ctx, &st.graph, &mut io_rec)?;
    let dag = condense(&g, st.knobs.aggregation_order()?, &ctx.tables.passthrough);
    let cfg = st.knobs.config()?;
    let seed = st.seed.unwrap_or(fallback_seed);

    let designs: Vec<Design> = st
        .designs
        .split(',')
        .map(|s| Design::parse(s.trim()))
        .collect::<lineage_audit_core::Result<_>>()?;
    let rates: Vec<f64> = st
        .rates
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .with_context(|| format!("bad rate {s:?}"))
        })
        .collect::<Result<_>>()?;
    for &r in &rates {
        if !(0.0..=1.0).contains(&r) {
            bail!("enforcement rate {r} outside [0, 1]");
        }
    }

    let mut results = Vec::new();
    for design in &designs {
        for &rate in &rates {
            // the same base seed across (design, rate) pairs the Bernoulli
            // draws, which makes rate sweeps comparable realization by
            // realization
            let policy = InterventionPolicy {
                design: *design,
                enforcement_rate: rate,
                window: st.window,
                realizations: st.realizations,
                seed,
                cascade: !st.no_cascade,
                ..InterventionPolicy::new(*design)
            };
            results.push(simulate(&g, &dag, &policy, &cfg)?);
        }
    }
    ensure_parent(&st.out)?;
    io::write_interventions_csv(&st.out, &results)?;
    io_rec.output(&st.out);
    Ok(io_rec)
}

// ---------------------------------------------------------------------------
// merge-stats
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeStatsStage {
    pub graph: PathBuf,
    pub out_dir: PathBuf,
    /// Comma-separated: raw,psm,ipw,aipw
    #[serde(default = "default_estimators")]
    pub estimators: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_raw_resamples")]
    pub raw_resamples: u32,
    #[serde(default = "default_psm_resamples")]
    pub psm_resamples: u32,
    #[serde(default = "default_weighting_resamples")]
    pub weighting_resamples: u32,
    #[serde(default = "default_caliper")]
    pub caliper: f64,
    #[serde(default)]
    pub caliper_logit_sd: bool,
    #[serde(default = "default_k")]
    pub k: usize,
    /// RFC3339 reference time for model ages; default: newest node.
    #[serde(default)]
    pub reference_time: Option<String>,
}

fn default_estimators() -> String {
    "raw,psm,ipw,aipw".into()
}
fn default_raw_resamples() -> u32 {
    2000
}
fn default_psm_resamples() -> u32 {
    2000
}
fn default_weighting_resamples() -> u32 {
    800
}
fn default_caliper() -> f64 {
    0.20
}
fn default_k() -> usize {
    3
}

pub fn run_merge_stats(ctx: &Ctx, st: &MergeStatsStage, fallback_seed: u64) -> Result<StageIo> {
    let mut io_rec = StageIo::default();
    let (g, _) = load_graph(ctx, &st.graph, &mut io_rec)?;
    let seed = st.seed.unwrap_or(fallback_seed);
    let reference = st
        .reference_time
        .as_deref()
        .map(|s| {
            chrono::DateTime::parse_from_rfc3339(s)
                .map(|t| t.timestamp())
                .with_context(|| format!("bad reference time {s:?}"))
        })
        .transpose()?;

    let cases = build_cases(
        &g,
        &ctx.tables.permissive,
        ctx.tables.classifier.threshold,
        reference,
    );
    if cases.is_empty() {
        bail!("no merge cases in graph");
    }

    let wanted: Vec<&str> = st.estimators.split(',').map(str::trim).collect();
    let mut effects: Vec<EffectEstimate> = Vec::new();
    let mut psm_weights: Option<Vec<f64>> = None;

    let model = fit_propensity(&cases, DEFAULT_RIDGE, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    for est in &wanted {
        match *est {
            "raw" => effects.push(raw_difference(&cases, st.raw_resamples, derive_seed(seed, 1))?),
            "psm" => {
                let res = psm_att(
                    &cases,
                    &model,
                    &PsmOptions {
                        k: st.k,
                        caliper: st.caliper,
                        caliper_logit_sd: st.caliper_logit_sd,
                        resamples: st.psm_resamples,
                        seed: derive_seed(seed, 2),
                    },
                )?;
                psm_weights = Some(res.weights.clone());
                effects.push(res.estimate);
            }
            "ipw" => effects.push(ipw_ate(
                &cases,
                &WeightingOptions {
                    resamples: st.weighting_resamples,
                    seed: derive_seed(seed, 3),
                    ..WeightingOptions::default()
                },
            )?),
            "aipw" => effects.push(aipw_ate(
                &cases,
                &WeightingOptions {
                    resamples: st.weighting_resamples,
                    seed: derive_seed(seed, 4),
                    ..WeightingOptions::default()
                },
            )?),
            other => bail!("unknown estimator {other:?}"),
        }
    }

    std::fs::create_dir_all(&st.out_dir)?;
    let effects_path = st.out_dir.join("effect_estimates.csv");
    io::write_effects_csv(&effects_path, &effects)?;
    io_rec.output(&effects_path);

    let pre = smd(&cases, None);
    let post = match &psm_weights {
        Some(w) => smd(&cases, Some(w)),
        None => pre.clone(),
    };
    let balance_path = st.out_dir.join("balance.csv");
    io::write_balance_csv(&balance_path, &pre, &post)?;
    io_rec.output(&balance_path);

    let hist = propensity_histogram(&cases, &model, 20);
    let hist_path = st.out_dir.join("propensity_hist.csv");
    io::write_propensity_hist_csv(&hist_path, &hist)?;
    io_rec.output(&hist_path);
    Ok(io_rec)
}

// ---------------------------------------------------------------------------
// comparator
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparatorStage {
    pub releases: PathBuf,
    pub out: PathBuf,
    #[serde(default = "default_cutoff")]
    pub cutoff: u32,
}

fn default_cutoff() -> u32 {
    6
}

pub fn run_comparator(ctx: &Ctx, st: &ComparatorStage) -> Result<StageIo> {
    let mut io_rec = StageIo::default();
    io_rec.input(&st.releases).output(&st.out);
    let releases = read_releases(&st.releases)?;
    let sampled = stratified_sample(&releases);
    let series = comparator_curve(&sampled, &ctx.tables.lri, st.cutoff)?;
    ensure_parent(&st.out)?;
    io::write_comparator_csv(&st.out, &series)?;
    Ok(io_rec)
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateStage {
    /// Path to a GeneratorSpec JSON document; `spec_inline` wins if both set.
    #[serde(default)]
    pub spec: Option<PathBuf>,
    #[serde(default)]
    pub spec_inline: Option<GeneratorSpec>,
    pub out_dir: PathBuf,
}

pub fn run_generate(st: &GenerateStage) -> Result<StageIo> {
    let mut io_rec = StageIo::default();
    let spec: GeneratorSpec = match (&st.spec_inline, &st.spec) {
        (Some(inline), _) => inline.clone(),
        (None, Some(path)) => {
            io_rec.input(path);
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        (None, None) => bail!("generate stage needs spec or spec_inline"),
    };
    let out = generate(&spec);
    std::fs::create_dir_all(&st.out_dir)?;
    let repos = st.out_dir.join("repos.jsonl");
    let edges = st.out_dir.join("edges.csv");
    let truth = st.out_dir.join("ground_truth.json");
    io::write_jsonl(&repos, &out.records)?;
    io::write_edges_csv(&edges, &out.edges)?;
    io::write_text(&truth, &serde_json::to_string_pretty(&out.truth)?)?;
    io_rec.output(repos).output(edges).output(truth);
    Ok(io_rec)
}

// ---------------------------------------------------------------------------
// pipeline plumbing
// ---------------------------------------------------------------------------

/// One pipeline stage, as it appears in the `run` config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Stage {
    Generate(GenerateStage),
    Classify(ClassifyStage),
    ParseCards(ParseCardsStage),
    BuildGraph(BuildGraphStage),
    Audit(AuditStage),
    Horizon(HorizonStage),
    Simulate(SimulateStage),
    MergeStats(MergeStatsStage),
    Comparator(ComparatorStage),
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Generate(_) => "generate",
            Stage::Classify(_) => "classify",
            Stage::ParseCards(_) => "parse-cards",
            Stage::BuildGraph(_) => "build-graph",
            Stage::Audit(_) => "audit",
            Stage::Horizon(_) => "horizon",
            Stage::Simulate(_) => "simulate",
            Stage::MergeStats(_) => "merge-stats",
            Stage::Comparator(_) => "comparator",
        }
    }

    pub fn execute(&self, ctx: &Ctx, stage_seed: u64) -> Result<StageIo> {
        match self {
            Stage::Generate(st) => run_generate(st),
            Stage::Classify(st) => run_classify(ctx, st),
            Stage::ParseCards(st) => run_parse_cards(ctx, st),
            Stage::BuildGraph(st) => run_build_graph(ctx, st),
            Stage::Audit(st) => run_audit(ctx, st),
            Stage::Horizon(st) => run_horizon(ctx, st, stage_seed),
            Stage::Simulate(st) => run_simulate(ctx, st, stage_seed),
            Stage::MergeStats(st) => run_merge_stats(ctx, st, stage_seed),
            Stage::Comparator(st) => run_comparator(ctx, st),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub rules_dir: Option<PathBuf>,
    #[serde(default)]
    pub strict_threshold: bool,
    #[serde(default = "default_manifest")]
    pub manifest: PathBuf,
    pub stages: Vec<Stage>,
}

fn default_manifest() -> PathBuf {
    PathBuf::from("run_manifest.json")
}
