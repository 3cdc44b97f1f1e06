//! Package-registry comparator: time-stratified release sampling, a
//! package-level dependency graph, and the hop-indexed mean licence
//! restrictiveness from strong-copyleft roots.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::fnv1a64;
use crate::licence::LriIndex;
use crate::rules::LriEntry;
use crate::stats::{mean, sample_sd};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseRecord {
    pub package_name: String,
    pub version: String,
    pub year: i32,
    #[serde(default)]
    pub declared_deps: Vec<String>,
    #[serde(default)]
    pub licence_name: Option<String>,
}

/// At most one release per (package, calendar year): the survivor is the one
/// with the smallest FNV-1a 64 hash of "name|year|version", so selection is
/// reproducible bit-for-bit and independent of input order.
pub fn stratified_sample(releases: &[ReleaseRecord]) -> Vec<ReleaseRecord> {
    let mut best: BTreeMap<(&str, i32), (u64, &ReleaseRecord)> = BTreeMap::new();
    for r in releases {
        let h = fnv1a64(format!("{}|{}|{}", r.package_name, r.year, r.version).as_bytes());
        best.entry((r.package_name.as_str(), r.year))
            .and_modify(|cur| {
                if (h, r.version.as_str()) < (cur.0, cur.1.version.as_str()) {
                    *cur = (h, r);
                }
            })
            .or_insert((h, r));
    }
    best.into_values().map(|(_, r)| r.clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparatorRow {
    pub hop: u32,
    pub n: u64,
    pub mean_lri: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparatorSeries {
    pub rows: Vec<ComparatorRow>,
}

/// Build the package-level dependency graph from the sampled releases
/// (edges point upstream dependency -> downstream dependant), take
/// in-degree-zero packages with LRI 1.0 as roots, BFS to the cutoff, and
/// report the per-hop mean LRI over packages with a resolvable licence.
/// Packages without a resolvable licence stay in the graph for traversal but
/// are excluded from the means.
pub fn comparator_curve(
    sampled: &[ReleaseRecord],
    lri_table: &[LriEntry],
    cutoff: u32,
) -> Result<ComparatorSeries> {
    let lri = LriIndex::new(lri_table);

    // package -> LRI from its latest sampled release (ties by version)
    let mut latest: HashMap<&str, (&ReleaseRecord, i32)> = HashMap::new();
    let mut packages: BTreeSet<&str> = BTreeSet::new();
    for r in sampled {
        packages.insert(&r.package_name);
        for d in &r.declared_deps {
            packages.insert(d.as_str());
        }
        latest
            .entry(r.package_name.as_str())
            .and_modify(|cur| {
                if (r.year, r.version.as_str()) > (cur.1, cur.0.version.as_str()) {
                    *cur = (r, r.year);
                }
            })
            .or_insert((r, r.year));
    }

    let idx: HashMap<&str, usize> = packages.iter().enumerate().map(|(i, p)| (*p, i)).collect();
    let n = packages.len();
    let mut downstream: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut indegree = vec![0usize; n];
    let mut seen_edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for r in sampled {
        let child = idx[r.package_name.as_str()];
        for d in &r.declared_deps {
            let dep = idx[d.as_str()];
            if dep != child && seen_edges.insert((dep, child)) {
                downstream[dep].push(child);
                indegree[child] += 1;
            }
        }
    }
    for list in &mut downstream {
        list.sort_unstable();
    }

    let lri_of: Vec<Option<f64>> = packages
        .iter()
        .map(|p| {
            latest
                .get(*p)
                .and_then(|(r, _)| r.licence_name.as_deref())
                .and_then(|name| lri.lookup(name))
        })
        .collect();

    // roots: in-degree zero with LRI exactly 1.0 (strong copyleft)
    let roots: Vec<usize> = (0..n)
        .filter(|&i| indegree[i] == 0 && lri_of[i] == Some(1.0))
        .collect();
    if roots.is_empty() {
        return Err(Error::NoSources);
    }

    let mut hop = vec![None::<u32>; n];
    let mut queue = VecDeque::new();
    for &r in &roots {
        hop[r] = Some(0);
        queue.push_back(r);
    }
    while let Some(v) = queue.pop_front() {
        let h = hop[v].unwrap();
        if h >= cutoff {
            continue;
        }
        for &c in &downstream[v] {
            if hop[c].is_none() {
                hop[c] = Some(h + 1);
                queue.push_back(c);
            }
        }
    }

    let mut values: Vec<Vec<f64>> = vec![Vec::new(); (cutoff + 1) as usize];
    for i in 0..n {
        if let (Some(h), Some(v)) = (hop[i], lri_of[i]) {
            values[h as usize].push(v);
        }
    }
    let rows = values
        .iter()
        .enumerate()
        .filter(|(_, vs)| !vs.is_empty())
        .map(|(h, vs)| {
            let m = mean(vs);
            let half = if vs.len() > 1 {
                1.96 * sample_sd(vs) / (vs.len() as f64).sqrt()
            } else {
                0.0
            };
            ComparatorRow {
                hop: h as u32,
                n: vs.len() as u64,
                mean_lri: m,
                ci_low: m - half,
                ci_high: m + half,
            }
        })
        .collect();
    Ok(ComparatorSeries { rows })
}
