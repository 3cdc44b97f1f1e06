//! Lineage graph storage, SCC condensation and the hop/depth traversals.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::licence::Intent;

/// Derivation operators, ordered by conflict priority: when multiple types are
/// assigned to the same (child, parent) pair the most specific wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeType {
    Quantization,
    Adapter,
    Finetune,
    Merge,
    Distillation,
    Pruning,
    Conversion,
    BaseModel,
}

impl EdgeType {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeType::Quantization => "quantization",
            EdgeType::Adapter => "adapter",
            EdgeType::Finetune => "finetune",
            EdgeType::Merge => "merge",
            EdgeType::Distillation => "distillation",
            EdgeType::Pruning => "pruning",
            EdgeType::Conversion => "conversion",
            EdgeType::BaseModel => "base_model",
        }
    }

    pub fn parse(s: &str) -> Result<EdgeType> {
        match s {
            "quantization" => Ok(EdgeType::Quantization),
            "adapter" => Ok(EdgeType::Adapter),
            "finetune" | "fine-tune" | "finetuning" => Ok(EdgeType::Finetune),
            "merge" => Ok(EdgeType::Merge),
            "distillation" => Ok(EdgeType::Distillation),
            "pruning" => Ok(EdgeType::Pruning),
            "conversion" => Ok(EdgeType::Conversion),
            "base_model" => Ok(EdgeType::BaseModel),
            other => Err(Error::Config(format!("unknown edge type {other:?}"))),
        }
    }
}

impl std::fmt::Display for EdgeType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which evidence layer produced an edge. Metadata beats readme beats
/// name-pattern when edge typing resolves conflicting suggestions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeEvidence {
    YamlField,
    Tag,
    ReadmeLink,
    ReadmeProse,
    ReadmeTable,
    NamePattern,
}

impl EdgeEvidence {
    /// 0 = structured metadata, 1 = readme, 2 = name pattern.
    pub fn tier(self) -> u8 {
        match self {
            EdgeEvidence::YamlField | EdgeEvidence::Tag => 0,
            EdgeEvidence::ReadmeLink | EdgeEvidence::ReadmeProse | EdgeEvidence::ReadmeTable => 1,
            EdgeEvidence::NamePattern => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeEvidence::YamlField => "yaml_field",
            EdgeEvidence::Tag => "tag",
            EdgeEvidence::ReadmeLink => "readme_link",
            EdgeEvidence::ReadmeProse => "readme_prose",
            EdgeEvidence::ReadmeTable => "readme_table",
            EdgeEvidence::NamePattern => "name_pattern",
        }
    }

    pub fn parse(s: &str) -> Result<EdgeEvidence> {
        match s {
            "yaml_field" => Ok(EdgeEvidence::YamlField),
            "tag" => Ok(EdgeEvidence::Tag),
            "readme_link" => Ok(EdgeEvidence::ReadmeLink),
            "readme_prose" => Ok(EdgeEvidence::ReadmeProse),
            "readme_table" => Ok(EdgeEvidence::ReadmeTable),
            "name_pattern" => Ok(EdgeEvidence::NamePattern),
            other => Err(Error::Config(format!("unknown evidence source {other:?}"))),
        }
    }
}

impl std::fmt::Display for EdgeEvidence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A typed child -> parent derivation relation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivationEdge {
    pub child: String,
    pub parent: String,
    pub edge_type: EdgeType,
    pub evidence_source: EdgeEvidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Llama,
    Mistral,
    Qwen,
    Other,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Llama => "llama",
            Family::Mistral => "mistral",
            Family::Qwen => "qwen",
            Family::Other => "other",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Family from the official-org prefix, then canonical name substrings.
pub fn family_of(id: &str) -> Family {
    let lower = id.to_lowercase();
    let org = lower.split('/').next().unwrap_or("");
    match org {
        "meta-llama" => return Family::Llama,
        "mistralai" => return Family::Mistral,
        "qwen" => return Family::Qwen,
        _ => {}
    }
    for (needle, fam) in [
        ("llama", Family::Llama),
        ("mistral", Family::Mistral),
        ("qwen", Family::Qwen),
    ] {
        if lower.contains(needle) {
            return fam;
        }
    }
    Family::Other
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelNode {
    pub id: String,
    /// Unix seconds; `None` when the snapshot lacks a timestamp.
    pub created_at: Option<i64>,
    pub intent: Intent,
    pub restriction_score: Option<f64>,
    pub licence_names: Vec<String>,
    pub downloads: u64,
    pub likes: u64,
    pub family: Family,
}

impl ModelNode {
    pub fn new(id: &str) -> ModelNode {
        ModelNode {
            id: id.to_string(),
            created_at: None,
            intent: Intent::Unknown,
            restriction_score: None,
            licence_names: Vec::new(),
            downloads: 0,
            likes: 0,
            family: family_of(id),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParentEdge {
    pub parent: u32,
    pub edge_type: EdgeType,
    pub evidence_source: EdgeEvidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuildMode {
    /// Unknown endpoints become stub nodes with intent Unknown.
    Lenient,
    /// Unknown endpoints reject the build.
    Strict,
}

#[derive(Debug, Clone)]
pub struct LineageGraph {
    nodes: Vec<ModelNode>,
    index: HashMap<String, u32>,
    parents: Vec<Vec<ParentEdge>>,
    children: Vec<Vec<u32>>,
    /// ids auto-created for dangling edge endpoints (lenient mode).
    pub stub_ids: Vec<String>,
}

impl LineageGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, i: u32) -> &ModelNode {
        &self.nodes[i as usize]
    }

    pub fn node_mut(&mut self, i: u32) -> &mut ModelNode {
        &mut self.nodes[i as usize]
    }

    pub fn id(&self, i: u32) -> &str {
        &self.nodes[i as usize].id
    }

    pub fn lookup(&self, id: &str) -> Option<u32> {
        self.index.get(id).copied()
    }

    pub fn parents_of(&self, i: u32) -> &[ParentEdge] {
        &self.parents[i as usize]
    }

    pub fn children_of(&self, i: u32) -> &[u32] {
        &self.children[i as usize]
    }

    pub fn nodes(&self) -> &[ModelNode] {
        &self.nodes
    }

    pub fn edge_count(&self) -> usize {
        self.parents.iter().map(Vec::len).sum()
    }

    pub fn iter_edges(&self) -> impl Iterator<Item = (u32, &ParentEdge)> + '_ {
        self.parents
            .iter()
            .enumerate()
            .flat_map(|(c, ps)| ps.iter().map(move |p| (c as u32, p)))
    }
}

/// Assemble the graph. Node order is sorted by id so every downstream artefact
/// is byte-stable. Duplicate (child, parent) edges are deduplicated keeping
/// the higher-priority type, then the higher evidence tier.
pub fn build_graph(
    edges: &[DerivationEdge],
    nodes: Vec<ModelNode>,
    mode: BuildMode,
) -> Result<LineageGraph> {
    let mut by_id: BTreeMap<String, ModelNode> = BTreeMap::new();
    for n in nodes {
        by_id.insert(n.id.clone(), n);
    }
    let mut stub_ids = Vec::new();
    let mut unknown = 0usize;
    let mut first_unknown = String::new();
    for e in edges {
        for id in [&e.child, &e.parent] {
            if !by_id.contains_key(id.as_str()) {
                match mode {
                    BuildMode::Lenient => {
                        stub_ids.push(id.clone());
                        by_id.insert(id.clone(), ModelNode::new(id));
                    }
                    BuildMode::Strict => {
                        if unknown == 0 {
                            first_unknown = id.clone();
                        }
                        unknown += 1;
                    }
                }
            }
        }
    }
    if unknown > 0 {
        return Err(Error::UnknownEndpoint {
            count: unknown,
            first: first_unknown,
        });
    }

    let nodes: Vec<ModelNode> = by_id.into_values().collect();
    let index: HashMap<String, u32> = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.clone(), i as u32))
        .collect();

    // best edge per (child, parent)
    let mut best: BTreeMap<(u32, u32), (EdgeType, EdgeEvidence)> = BTreeMap::new();
    for e in edges {
        let c = index[&e.child];
        let p = index[&e.parent];
        if c == p {
            continue; // self-loops never enter the graph
        }
        let cand = (e.edge_type, e.evidence_source);
        best.entry((c, p))
            .and_modify(|cur| {
                if (cand.0, cand.1.tier()) < (cur.0, cur.1.tier()) {
                    *cur = cand;
                }
            })
            .or_insert(cand);
    }

    let n = nodes.len();
    let mut parents: Vec<Vec<ParentEdge>> = vec![Vec::new(); n];
    let mut children: Vec<Vec<u32>> = vec![Vec::new(); n];
    for (&(c, p), &(edge_type, evidence_source)) in &best {
        parents[c as usize].push(ParentEdge {
            parent: p,
            edge_type,
            evidence_source,
        });
        children[p as usize].push(c);
    }
    for list in &mut parents {
        list.sort_by_key(|e| e.parent);
    }
    for list in &mut children {
        list.sort_unstable();
    }

    stub_ids.sort();
    stub_ids.dedup();
    Ok(LineageGraph {
        nodes,
        index,
        parents,
        children,
        stub_ids,
    })
}

/// In-degree-zero nodes carrying ethical-use restriction evidence.
pub fn ethical_sources(g: &LineageGraph) -> Vec<u32> {
    (0..g.len() as u32)
        .filter(|&i| g.parents_of(i).is_empty() && g.node(i).intent == Intent::Restrictive)
        .collect()
}

/// Multi-source downstream BFS; `None` beyond the cutoff or unreachable.
pub fn hop_distances(g: &LineageGraph, sources: &[u32], cutoff: u32) -> Vec<Option<u32>> {
    let mut hops: Vec<Option<u32>> = vec![None; g.len()];
    let mut queue = VecDeque::new();
    for &s in sources {
        if hops[s as usize].is_none() {
            hops[s as usize] = Some(0);
            queue.push_back(s);
        }
    }
    while let Some(v) = queue.pop_front() {
        let h = hops[v as usize].unwrap();
        if h >= cutoff {
            continue;
        }
        for &c in g.children_of(v) {
            if hops[c as usize].is_none() {
                hops[c as usize] = Some(h + 1);
                queue.push_back(c);
            }
        }
    }
    hops
}

pub const DEPTH_HOP_CAP: u32 = 30;
pub const DEPTH_STEP_CAP: u64 = 500_000;

#[derive(Debug, Clone)]
pub struct DepthResult {
    /// ancestor id -> longest-path distance from the root.
    pub depths: BTreeMap<String, u32>,
    pub truncated: bool,
}

/// Longest-path distance from `root` to each reachable ancestor, following
/// parent edges with a per-path visit set so cycles terminate. The traversal
/// aborts at `hop_cap` hops or `step_cap` edge traversals and flags the
/// result truncated; partial depths are still returned.
pub fn lineage_depth(g: &LineageGraph, root: u32, hop_cap: u32, step_cap: u64) -> DepthResult {
    let mut depths: HashMap<u32, u32> = HashMap::new();
    let mut on_path = vec![false; g.len()];
    let mut steps = 0u64;
    let mut truncated = false;

    // iterative DFS over simple paths; stack holds (node, next parent index)
    // and the current depth is stack.len() - 1
    let mut stack: Vec<(u32, usize)> = vec![(root, 0)];
    on_path[root as usize] = true;
    while let Some(&(v, next)) = stack.last() {
        let depth = (stack.len() - 1) as u32;
        let parents = g.parents_of(v);
        if next >= parents.len() || depth >= hop_cap {
            if depth >= hop_cap && next < parents.len() {
                truncated = true; // hop cap cut this path short
            }
            on_path[v as usize] = false;
            stack.pop();
            continue;
        }
        stack.last_mut().unwrap().1 = next + 1;
        let p = parents[next].parent;
        if on_path[p as usize] {
            continue; // per-path visit set: skip cycles
        }
        steps += 1;
        if steps > step_cap {
            truncated = true;
            break;
        }
        let nd = depth + 1;
        let d = depths.entry(p).or_insert(0);
        if nd > *d {
            *d = nd;
        }
        on_path[p as usize] = true;
        stack.push((p, 0));
    }

    DepthResult {
        depths: depths
            .into_iter()
            .map(|(i, d)| (g.id(i).to_string(), d))
            .collect(),
        truncated,
    }
}

/// Aggregation order for component intent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntentAggregation {
    /// R beats P beats U (the conservative default).
    RestrictiveFirst,
    /// P beats R beats U (sensitivity runs).
    PermissiveFirst,
}

pub fn aggregate_intent(members: impl Iterator<Item = Intent>, order: IntentAggregation) -> Intent {
    let mut has_r = false;
    let mut has_p = false;
    for i in members {
        match i {
            Intent::Restrictive => has_r = true,
            Intent::Permissive => has_p = true,
            Intent::Unknown => {}
        }
    }
    match order {
        IntentAggregation::RestrictiveFirst => {
            if has_r {
                Intent::Restrictive
            } else if has_p {
                Intent::Permissive
            } else {
                Intent::Unknown
            }
        }
        IntentAggregation::PermissiveFirst => {
            if has_p {
                Intent::Permissive
            } else if has_r {
                Intent::Restrictive
            } else {
                Intent::Unknown
            }
        }
    }
}

/// Merge-evidence signal kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MergeSignal {
    MergeTag,
    MultiParent,
    MergeYaml,
    ReadmeMention,
}

#[derive(Debug, Clone, Default)]
pub struct MergeEvidence {
    pub signals: BTreeSet<MergeSignal>,
}

impl MergeEvidence {
    pub fn count(&self) -> u8 {
        self.signals.len() as u8
    }

    /// Merge-product status: merge tags, multiple parents, or merge YAML.
    /// A readme mention contributes to the evidence count only.
    pub fn is_merge_product(&self) -> bool {
        self.signals.contains(&MergeSignal::MergeTag)
            || self.signals.contains(&MergeSignal::MultiParent)
            || self.signals.contains(&MergeSignal::MergeYaml)
    }
}

pub fn merge_evidence_of(g: &LineageGraph, node: u32) -> MergeEvidence {
    let mut ev = MergeEvidence::default();
    let parents = g.parents_of(node);
    if parents.len() >= 2 {
        ev.signals.insert(MergeSignal::MultiParent);
    }
    for e in parents {
        if e.edge_type == EdgeType::Merge {
            match e.evidence_source {
                EdgeEvidence::Tag => {
                    ev.signals.insert(MergeSignal::MergeTag);
                }
                EdgeEvidence::YamlField => {
                    ev.signals.insert(MergeSignal::MergeYaml);
                }
                EdgeEvidence::ReadmeLink
                | EdgeEvidence::ReadmeProse
                | EdgeEvidence::ReadmeTable => {
                    ev.signals.insert(MergeSignal::ReadmeMention);
                }
                EdgeEvidence::NamePattern => {}
            }
        }
    }
    ev
}

/// The SCC-condensed acyclic view of a lineage graph.
#[derive(Debug, Clone)]
pub struct CondensedDag {
    /// Sorted member node indices per component.
    pub members: Vec<Vec<u32>>,
    /// node index -> component index
    pub member_of: Vec<u32>,
    /// Aggregated declared intent per component.
    pub intents: Vec<Intent>,
    pub is_merge: Vec<bool>,
    pub evidence_count: Vec<u8>,
    /// Any member carries a passthrough-restrictive licence name.
    pub passthrough: Vec<bool>,
    pub parents: Vec<Vec<u32>>,
    pub children: Vec<Vec<u32>>,
    /// Parents-before-children order over components.
    pub topo: Vec<u32>,
}

impl CondensedDag {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Iterative Tarjan SCC; avoids recursion so deep chains cannot overflow.
fn tarjan_scc(n: usize, succ: impl Fn(usize) -> Vec<usize>) -> Vec<Vec<usize>> {
    #[derive(Clone)]
    struct NodeState {
        index: Option<u32>,
        low: u32,
        on_stack: bool,
    }
    let mut st = vec![
        NodeState {
            index: None,
            low: 0,
            on_stack: false
        };
        n
    ];
    let mut comps = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    let mut counter = 0u32;

    for start in 0..n {
        if st[start].index.is_some() {
            continue;
        }
        // work stack: (node, iterator position)
        let mut work: Vec<(usize, usize)> = vec![(start, 0)];
        while let Some(&(v, pos)) = work.last() {
            if pos == 0 {
                st[v].index = Some(counter);
                st[v].low = counter;
                counter += 1;
                stack.push(v);
                st[v].on_stack = true;
            }
            let nexts = succ(v);
            if pos < nexts.len() {
                work.last_mut().unwrap().1 += 1;
                let w = nexts[pos];
                if st[w].index.is_none() {
                    work.push((w, 0));
                } else if st[w].on_stack {
                    st[v].low = st[v].low.min(st[w].index.unwrap());
                }
            } else {
                work.pop();
                if let Some(&(parent, _)) = work.last() {
                    let low = st[v].low;
                    if low < st[parent].low {
                        st[parent].low = low;
                    }
                }
                if st[v].low == st[v].index.unwrap() {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().unwrap();
                        st[w].on_stack = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comps.push(comp);
                }
            }
        }
    }
    comps
}

/// Collapse strongly connected components; aggregate intent, merge status and
/// passthrough licences at component level; compute a deterministic
/// parents-before-children order.
pub fn condense(
    g: &LineageGraph,
    order: IntentAggregation,
    passthrough_names: &BTreeSet<String>,
) -> CondensedDag {
    let n = g.len();
    // DFS follows child -> parent direction; the component sets are the same
    // whichever direction is used.
    let comps_raw = tarjan_scc(n, |v| {
        g.parents_of(v as u32)
            .iter()
            .map(|e| e.parent as usize)
            .collect()
    });

    // deterministic component numbering: sort by smallest member index
    let mut comps: Vec<Vec<u32>> = comps_raw
        .into_iter()
        .map(|mut c| {
            c.sort_unstable();
            c.into_iter().map(|v| v as u32).collect()
        })
        .collect();
    comps.sort_by_key(|c| c[0]);

    let mut member_of = vec![0u32; n];
    for (ci, comp) in comps.iter().enumerate() {
        for &v in comp {
            member_of[v as usize] = ci as u32;
        }
    }

    let nc = comps.len();
    let mut parent_sets: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); nc];
    let mut child_sets: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); nc];
    for (c, e) in g.iter_edges() {
        let cc = member_of[c as usize];
        let cp = member_of[e.parent as usize];
        if cc != cp {
            parent_sets[cc as usize].insert(cp);
            child_sets[cp as usize].insert(cc);
        }
    }

    let mut intents = Vec::with_capacity(nc);
    let mut is_merge = Vec::with_capacity(nc);
    let mut evidence_count = Vec::with_capacity(nc);
    let mut passthrough = Vec::with_capacity(nc);
    for comp in &comps {
        intents.push(aggregate_intent(
            comp.iter().map(|&v| g.node(v).intent),
            order,
        ));
        let mut ev = MergeEvidence::default();
        for &v in comp {
            ev.signals.extend(merge_evidence_of(g, v).signals);
        }
        is_merge.push(ev.is_merge_product());
        evidence_count.push(ev.count());
        passthrough.push(comp.iter().any(|&v| {
            g.node(v)
                .licence_names
                .iter()
                .any(|name| passthrough_names.contains(&crate::rules::normalize_licence_name(name)))
        }));
    }

    // Kahn order over components, stable by component index
    let mut indeg: Vec<usize> = parent_sets.iter().map(BTreeSet::len).collect();
    let mut ready: BTreeSet<u32> = indeg
        .iter()
        .enumerate()
        .filter(|&(_, &d)| d == 0)
        .map(|(i, _)| i as u32)
        .collect();
    let mut topo = Vec::with_capacity(nc);
    while let Some(&c) = ready.iter().next() {
        ready.remove(&c);
        topo.push(c);
        for &child in &child_sets[c as usize] {
            indeg[child as usize] -= 1;
            if indeg[child as usize] == 0 {
                ready.insert(child);
            }
        }
    }
    debug_assert_eq!(topo.len(), nc, "condensation must be acyclic");

    CondensedDag {
        members: comps,
        member_of,
        intents,
        is_merge,
        evidence_count,
        passthrough,
        parents: parent_sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        children: child_sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        topo,
    }
}

/// DOT rendering of the radius-`radius` neighborhood around `center`.
pub fn dot_neighborhood(g: &LineageGraph, center: u32, radius: u32) -> String {
    let mut keep: BTreeSet<u32> = BTreeSet::new();
    let mut frontier = vec![center];
    keep.insert(center);
    for _ in 0..radius {
        let mut next = Vec::new();
        for &v in &frontier {
            for e in g.parents_of(v) {
                if keep.insert(e.parent) {
                    next.push(e.parent);
                }
            }
            for &c in g.children_of(v) {
                if keep.insert(c) {
                    next.push(c);
                }
            }
        }
        frontier = next;
    }
    let mut out = String::from("digraph lineage {\n  rankdir=BT;\n");
    for &v in &keep {
        let node = g.node(v);
        out.push_str(&format!(
            "  \"{}\" [label=\"{}\\n{}\"];\n",
            node.id, node.id, node.intent
        ));
    }
    for &v in &keep {
        for e in g.parents_of(v) {
            if keep.contains(&e.parent) {
                out.push_str(&format!(
                    "  \"{}\" -> \"{}\" [label=\"{}\"];\n",
                    g.id(v),
                    g.id(e.parent),
                    e.edge_type
                ));
            }
        }
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: &str, intent: Intent) -> ModelNode {
        ModelNode {
            intent,
            ..ModelNode::new(id)
        }
    }

    fn edge(child: &str, parent: &str, t: EdgeType, src: EdgeEvidence) -> DerivationEdge {
        DerivationEdge {
            child: child.into(),
            parent: parent.into(),
            edge_type: t,
            evidence_source: src,
        }
    }

    fn chain_graph() -> LineageGraph {
        let nodes = vec![
            node("a/a", Intent::Restrictive),
            node("b/b", Intent::Restrictive),
            node("c/c", Intent::Permissive),
        ];
        let edges = vec![
            edge("b/b", "a/a", EdgeType::Finetune, EdgeEvidence::Tag),
            edge("c/c", "b/b", EdgeType::Finetune, EdgeEvidence::Tag),
        ];
        build_graph(&edges, nodes, BuildMode::Strict).unwrap()
    }

    #[test]
    fn adjacency_is_mutually_consistent() {
        let g = chain_graph();
        let c = g.lookup("c/c").unwrap();
        let a = g.lookup("a/a").unwrap();
        let b = g.lookup("b/b").unwrap();
        assert_eq!(g.parents_of(c), &[ParentEdge { parent: b, edge_type: EdgeType::Finetune, evidence_source: EdgeEvidence::Tag }]);
        assert_eq!(g.children_of(a), &[b]);
    }

    #[test]
    fn duplicate_edges_keep_priority_type() {
        let nodes = vec![node("a/a", Intent::Unknown), node("b/b", Intent::Unknown)];
        let edges = vec![
            edge("b/b", "a/a", EdgeType::BaseModel, EdgeEvidence::ReadmeLink),
            edge("b/b", "a/a", EdgeType::Finetune, EdgeEvidence::Tag),
        ];
        let g = build_graph(&edges, nodes, BuildMode::Strict).unwrap();
        let b = g.lookup("b/b").unwrap();
        assert_eq!(g.parents_of(b).len(), 1);
        assert_eq!(g.parents_of(b)[0].edge_type, EdgeType::Finetune);
    }

    #[test]
    fn empty_edge_list_gives_isolated_nodes() {
        let g = build_graph(&[], vec![node("a/a", Intent::Unknown)], BuildMode::Strict).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn strict_mode_rejects_unknown_endpoints_lenient_stubs() {
        let edges = vec![edge("b/b", "ghost/x", EdgeType::Finetune, EdgeEvidence::Tag)];
        let nodes = vec![node("b/b", Intent::Unknown)];
        assert!(build_graph(&edges, nodes.clone(), BuildMode::Strict).is_err());
        let g = build_graph(&edges, nodes, BuildMode::Lenient).unwrap();
        assert_eq!(g.stub_ids, vec!["ghost/x".to_string()]);
        let stub = g.lookup("ghost/x").unwrap();
        assert_eq!(g.node(stub).intent, Intent::Unknown);
    }

    #[test]
    fn sources_are_restrictive_roots_only() {
        let g = chain_graph();
        let sources = ethical_sources(&g);
        assert_eq!(sources, vec![g.lookup("a/a").unwrap()]);
    }

    #[test]
    fn hop_distances_nearest_source_and_cutoff() {
        let g = chain_graph();
        let s = vec![g.lookup("a/a").unwrap()];
        let hops = hop_distances(&g, &s, 10);
        assert_eq!(hops[g.lookup("a/a").unwrap() as usize], Some(0));
        assert_eq!(hops[g.lookup("b/b").unwrap() as usize], Some(1));
        assert_eq!(hops[g.lookup("c/c").unwrap() as usize], Some(2));
        let hops1 = hop_distances(&g, &s, 1);
        assert_eq!(hops1[g.lookup("c/c").unwrap() as usize], None);
    }

    #[test]
    fn hop_triangle_property_on_random_graphs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.gen_range(2..20usize);
            let mut nodes = Vec::new();
            for i in 0..n {
                let intent = if rng.gen_bool(0.4) {
                    Intent::Restrictive
                } else {
                    Intent::Permissive
                };
                nodes.push(node(&format!("t/n{i:02}"), intent));
            }
            let mut edges = Vec::new();
            for c in 1..n {
                for p in 0..c {
                    if rng.gen_bool(0.3) {
                        edges.push(edge(
                            &format!("t/n{c:02}"),
                            &format!("t/n{p:02}"),
                            EdgeType::Finetune,
                            EdgeEvidence::Tag,
                        ));
                    }
                }
            }
            let g = build_graph(&edges, nodes, BuildMode::Strict).unwrap();
            let sources = ethical_sources(&g);
            let hops = hop_distances(&g, &sources, 10);
            for (c, e) in g.iter_edges() {
                if let (Some(hc), Some(hp)) = (hops[c as usize], hops[e.parent as usize]) {
                    assert!(hc <= hp + 1, "triangle violated");
                }
            }
        }
    }

    #[test]
    fn lineage_depth_diamond_takes_longest_path() {
        // root's parents: a, c; a's parent: c  => depth(c) = 2
        let nodes = vec![
            node("x/root", Intent::Unknown),
            node("x/a", Intent::Unknown),
            node("x/c", Intent::Unknown),
        ];
        let edges = vec![
            edge("x/root", "x/a", EdgeType::Finetune, EdgeEvidence::Tag),
            edge("x/root", "x/c", EdgeType::Finetune, EdgeEvidence::Tag),
            edge("x/a", "x/c", EdgeType::Finetune, EdgeEvidence::Tag),
        ];
        let g = build_graph(&edges, nodes, BuildMode::Strict).unwrap();
        let root = g.lookup("x/root").unwrap();
        let res = lineage_depth(&g, root, DEPTH_HOP_CAP, DEPTH_STEP_CAP);
        assert!(!res.truncated);
        assert_eq!(res.depths.get("x/c"), Some(&2));
        assert_eq!(res.depths.get("x/a"), Some(&1));
    }

    #[test]
    fn lineage_depth_root_without_parents_is_empty() {
        let g = build_graph(&[], vec![node("a/a", Intent::Unknown)], BuildMode::Strict).unwrap();
        let res = lineage_depth(&g, 0, DEPTH_HOP_CAP, DEPTH_STEP_CAP);
        assert!(res.depths.is_empty());
        assert!(!res.truncated);
    }

    #[test]
    fn lineage_depth_terminates_on_cycles_and_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        // brute-force longest simple path on tiny graphs, cycles allowed
        fn brute(adj: &[Vec<usize>], root: usize) -> BTreeMap<usize, u32> {
            fn rec(
                adj: &[Vec<usize>],
                v: usize,
                used: &mut Vec<bool>,
                depth: u32,
                best: &mut BTreeMap<usize, u32>,
            ) {
                for &p in &adj[v] {
                    if used[p] {
                        continue;
                    }
                    let e = best.entry(p).or_insert(0);
                    if depth + 1 > *e {
                        *e = depth + 1;
                    }
                    used[p] = true;
                    rec(adj, p, used, depth + 1, best);
                    used[p] = false;
                }
            }
            let mut best = BTreeMap::new();
            let mut used = vec![false; adj.len()];
            used[root] = true;
            rec(adj, root, &mut used, 0, &mut best);
            best
        }

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..60 {
            let n = rng.gen_range(2..=8usize);
            let mut nodes = Vec::new();
            for i in 0..n {
                nodes.push(node(&format!("z/n{i}"), Intent::Unknown));
            }
            let mut edges = Vec::new();
            let mut adj = vec![Vec::new(); n];
            for c in 0..n {
                for p in 0..n {
                    if c != p && rng.gen_bool(0.25) {
                        edges.push(edge(
                            &format!("z/n{c}"),
                            &format!("z/n{p}"),
                            EdgeType::Finetune,
                            EdgeEvidence::Tag,
                        ));
                        adj[c].push(p);
                    }
                }
            }
            for a in &mut adj {
                a.sort_unstable();
            }
            let g = build_graph(&edges, nodes, BuildMode::Strict).unwrap();
            let root = g.lookup("z/n0").unwrap();
            let res = lineage_depth(&g, root, DEPTH_HOP_CAP, DEPTH_STEP_CAP);
            let expect = brute(&adj, 0);
            let got: BTreeMap<usize, u32> = res
                .depths
                .iter()
                .map(|(id, &d)| (id.trim_start_matches("z/n").parse::<usize>().unwrap(), d))
                .collect();
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn condense_two_cycle_aggregates_restrictive_first() {
        // all 9 two-member intent pairs against the R > P > U rule
        let intents = [Intent::Restrictive, Intent::Permissive, Intent::Unknown];
        for &ia in &intents {
            for &ib in &intents {
                let nodes = vec![node("p/a", ia), node("p/b", ib)];
                let edges = vec![
                    edge("p/a", "p/b", EdgeType::Adapter, EdgeEvidence::Tag),
                    edge("p/b", "p/a", EdgeType::Adapter, EdgeEvidence::Tag),
                ];
                let g = build_graph(&edges, nodes, BuildMode::Strict).unwrap();
                let dag = condense(&g, IntentAggregation::RestrictiveFirst, &BTreeSet::new());
                assert_eq!(dag.len(), 1);
                let expect = aggregate_intent(
                    [ia, ib].into_iter(),
                    IntentAggregation::RestrictiveFirst,
                );
                assert_eq!(dag.intents[0], expect);
                let brute = if ia == Intent::Restrictive || ib == Intent::Restrictive {
                    Intent::Restrictive
                } else if ia == Intent::Permissive || ib == Intent::Permissive {
                    Intent::Permissive
                } else {
                    Intent::Unknown
                };
                assert_eq!(dag.intents[0], brute);
            }
        }
    }

    #[test]
    fn condense_acyclic_graph_is_isomorphic() {
        let g = chain_graph();
        let dag = condense(&g, IntentAggregation::RestrictiveFirst, &BTreeSet::new());
        assert_eq!(dag.len(), g.len());
        assert!(dag.members.iter().all(|m| m.len() == 1));
        assert_eq!(dag.topo.len(), 3);
    }

    #[test]
    fn condense_cycle_of_three_unknowns() {
        let nodes = vec![
            node("c/a", Intent::Unknown),
            node("c/b", Intent::Unknown),
            node("c/c", Intent::Unknown),
        ];
        let edges = vec![
            edge("c/a", "c/b", EdgeType::Adapter, EdgeEvidence::Tag),
            edge("c/b", "c/c", EdgeType::Adapter, EdgeEvidence::Tag),
            edge("c/c", "c/a", EdgeType::Adapter, EdgeEvidence::Tag),
        ];
        let g = build_graph(&edges, nodes, BuildMode::Strict).unwrap();
        let dag = condense(&g, IntentAggregation::RestrictiveFirst, &BTreeSet::new());
        assert_eq!(dag.len(), 1);
        assert_eq!(dag.intents[0], Intent::Unknown);
    }

    #[test]
    fn condensation_is_idempotent() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..30 {
            let n = rng.gen_range(2..15usize);
            let mut nodes = Vec::new();
            for i in 0..n {
                nodes.push(node(&format!("i/n{i:02}"), Intent::Unknown));
            }
            let mut edges = Vec::new();
            for c in 0..n {
                for p in 0..n {
                    if c != p && rng.gen_bool(0.2) {
                        edges.push(edge(
                            &format!("i/n{c:02}"),
                            &format!("i/n{p:02}"),
                            EdgeType::Finetune,
                            EdgeEvidence::Tag,
                        ));
                    }
                }
            }
            let g = build_graph(&edges, nodes, BuildMode::Strict).unwrap();
            let dag = condense(&g, IntentAggregation::RestrictiveFirst, &BTreeSet::new());
            // rebuild a graph whose nodes are the components and re-condense
            let mut nodes2 = Vec::new();
            for ci in 0..dag.len() {
                nodes2.push(node(&format!("q/c{ci:03}"), Intent::Unknown));
            }
            let mut edges2 = Vec::new();
            for (ci, ps) in dag.parents.iter().enumerate() {
                for &p in ps {
                    edges2.push(edge(
                        &format!("q/c{ci:03}"),
                        &format!("q/c{p:03}"),
                        EdgeType::Finetune,
                        EdgeEvidence::Tag,
                    ));
                }
            }
            let g2 = build_graph(&edges2, nodes2, BuildMode::Strict).unwrap();
            let dag2 = condense(&g2, IntentAggregation::RestrictiveFirst, &BTreeSet::new());
            assert_eq!(dag2.len(), dag.len());
            assert!(dag2.members.iter().all(|m| m.len() == 1));
            let e1: usize = dag.parents.iter().map(Vec::len).sum();
            let e2: usize = dag2.parents.iter().map(Vec::len).sum();
            assert_eq!(e1, e2);
        }
    }

    #[test]
    fn merge_evidence_signals() {
        let nodes = vec![
            node("m/child", Intent::Permissive),
            node("m/p1", Intent::Restrictive),
            node("m/p2", Intent::Permissive),
        ];
        let edges = vec![
            edge("m/child", "m/p1", EdgeType::Merge, EdgeEvidence::Tag),
            edge("m/child", "m/p2", EdgeType::Merge, EdgeEvidence::YamlField),
        ];
        let g = build_graph(&edges, nodes, BuildMode::Strict).unwrap();
        let ev = merge_evidence_of(&g, g.lookup("m/child").unwrap());
        assert_eq!(ev.count(), 3); // tag + yaml + multi-parent
        assert!(ev.is_merge_product());
    }

    #[test]
    fn family_assignment() {
        assert_eq!(family_of("meta-llama/Llama-3-8B"), Family::Llama);
        assert_eq!(family_of("TheBloke/Mistral-7B-GGUF"), Family::Mistral);
        assert_eq!(family_of("Qwen/Qwen2-7B"), Family::Qwen);
        assert_eq!(family_of("org/model"), Family::Other);
    }
}
