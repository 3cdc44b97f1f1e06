//! Retention curves, the auditable proportion D(h), the governance horizon
//! H*(alpha) with right-censoring and bootstrap intervals, and exponential
//! decay fits.

use std::collections::BTreeMap;
use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audit::CompositionRow;
use crate::error::{Error, Result};
use crate::exec;
use crate::graph::{hop_distances, Family, LineageGraph};
use crate::hash::derive_seed;
use crate::licence::Intent;
use crate::stats::{mean, percentile};

/// A hop-indexed series of proportions with per-hop sample sizes.
/// Hops are strictly increasing; rows exist only where counts > 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopSeries {
    pub hops: Vec<u32>,
    pub values: Vec<f64>,
    pub counts: Vec<u64>,
}

impl HopSeries {
    pub fn from_rows(rows: &[(u32, f64, u64)]) -> HopSeries {
        HopSeries {
            hops: rows.iter().map(|r| r.0).collect(),
            values: rows.iter().map(|r| r.1).collect(),
            counts: rows.iter().map(|r| r.2).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetentionUnit {
    /// (source, descendant) lineage observations, binned at the descendant's
    /// shortest hop to any ethical source.
    Pair,
    /// unique descendants.
    Node,
}

/// Proportion of hop-h descendants that still carry restriction evidence
/// (intent Restrictive). Hop 0 covers the sources themselves, so the curve
/// starts at 1 by construction.
pub fn retention_curve(
    g: &LineageGraph,
    sources: &[u32],
    cutoff: u32,
    unit: RetentionUnit,
) -> Result<HopSeries> {
    if sources.is_empty() {
        return Err(Error::NoSources);
    }
    let hops = hop_distances(g, sources, cutoff);
    let mut restrictive = vec![0u64; (cutoff + 1) as usize];
    let mut total = vec![0u64; (cutoff + 1) as usize];

    let mut tally = |node: u32| {
        let Some(h) = hops[node as usize] else { return };
        total[h as usize] += 1;
        if g.node(node).intent == Intent::Restrictive {
            restrictive[h as usize] += 1;
        }
    };

    match unit {
        RetentionUnit::Node => {
            for i in 0..g.len() as u32 {
                tally(i);
            }
        }
        RetentionUnit::Pair => {
            // one observation per (source, descendant) pair where the
            // descendant is reachable from that source within the cutoff
            for &s in sources {
                let mut seen = vec![false; g.len()];
                let mut queue = VecDeque::new();
                seen[s as usize] = true;
                queue.push_back((s, 0u32));
                while let Some((v, d)) = queue.pop_front() {
                    tally(v);
                    if d >= cutoff {
                        continue;
                    }
                    for &c in g.children_of(v) {
                        if !seen[c as usize] {
                            seen[c as usize] = true;
                            queue.push_back((c, d + 1));
                        }
                    }
                }
            }
        }
    }

    let rows: Vec<(u32, f64, u64)> = (0..=cutoff)
        .filter(|&h| total[h as usize] > 0)
        .map(|h| {
            let n = total[h as usize];
            (h, restrictive[h as usize] as f64 / n as f64, n)
        })
        .collect();
    Ok(HopSeries::from_rows(&rows))
}

/// D(h) = Decidable(h) + Inconsistent(h) = 1 - (UM(h) + UA(h)), exactly.
pub fn auditable_proportion(composition: &[CompositionRow]) -> HopSeries {
    let rows: Vec<(u32, f64, u64)> = composition
        .iter()
        .map(|r| (r.hop, r.decidable + r.inconsistent, r.n))
        .collect();
    HopSeries::from_rows(&rows)
}

/// H*: the smallest hop at which the series falls to or below alpha.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Horizon {
    pub hop: u32,
    /// Right-censored at max_hop + 1: the series never crossed alpha.
    pub censored: bool,
}

impl Horizon {
    pub fn value(self) -> f64 {
        f64::from(self.hop)
    }
}

impl std::fmt::Display for Horizon {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.censored {
            write!(f, ">{}", self.hop - 1)
        } else {
            write!(f, "{}", self.hop)
        }
    }
}

/// Scan hops 0..=max_hop in order; gaps in the series are skipped. A tie
/// D(h) = alpha counts as crossing.
pub fn governance_horizon(d: &HopSeries, alpha: f64, max_hop: u32) -> Horizon {
    for (i, &h) in d.hops.iter().enumerate() {
        if h > max_hop {
            break;
        }
        if d.values[i] <= alpha {
            return Horizon {
                hop: h,
                censored: false,
            };
        }
    }
    Horizon {
        hop: max_hop + 1,
        censored: true,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HorizonEstimate {
    pub point: Horizon,
    pub bootstrap_mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub alpha: f64,
    pub max_hop: u32,
    pub resamples: u32,
}

/// Bootstrap the node-level (hop, auditable) observations with replacement;
/// censored resamples are coded max_hop + 1. Deterministic given the seed:
/// resample r draws from a generator seeded by (seed, r).
pub fn bootstrap_horizon(
    observations: &[(u32, bool)],
    alpha: f64,
    max_hop: u32,
    resamples: u32,
    seed: u64,
) -> Result<HorizonEstimate> {
    if observations.is_empty() {
        return Err(Error::NoObservations);
    }
    let n = observations.len();
    let point = governance_horizon(&series_from_observations(observations, max_hop), alpha, max_hop);

    let h_values: Vec<f64> = exec::map_indexed(resamples as usize, |r| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, r as u64));
        let mut auditable = vec![0u64; (max_hop + 2) as usize];
        let mut total = vec![0u64; (max_hop + 2) as usize];
        for _ in 0..n {
            let (hop, ok) = observations[rng.gen_range(0..n)];
            let h = hop.min(max_hop + 1) as usize;
            total[h] += 1;
            if ok {
                auditable[h] += 1;
            }
        }
        for h in 0..=max_hop {
            let t = total[h as usize];
            if t == 0 {
                continue; // hops absent from the resample are skipped
            }
            if auditable[h as usize] as f64 / t as f64 <= alpha {
                return f64::from(h);
            }
        }
        f64::from(max_hop + 1)
    });

    Ok(HorizonEstimate {
        point,
        bootstrap_mean: mean(&h_values),
        ci_low: percentile(&h_values, 2.5),
        ci_high: percentile(&h_values, 97.5),
        alpha,
        max_hop,
        resamples,
    })
}

/// D(h) series from raw (hop, auditable) observations.
pub fn series_from_observations(observations: &[(u32, bool)], max_hop: u32) -> HopSeries {
    let mut auditable = vec![0u64; (max_hop + 1) as usize];
    let mut total = vec![0u64; (max_hop + 1) as usize];
    for &(hop, ok) in observations {
        if hop > max_hop {
            continue;
        }
        total[hop as usize] += 1;
        if ok {
            auditable[hop as usize] += 1;
        }
    }
    let rows: Vec<(u32, f64, u64)> = (0..=max_hop)
        .filter(|&h| total[h as usize] > 0)
        .map(|h| {
            let n = total[h as usize];
            (h, auditable[h as usize] as f64 / n as f64, n)
        })
        .collect();
    HopSeries::from_rows(&rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayFit {
    pub amplitude: f64,
    pub rate: f64,
    pub half_life: f64,
    pub r_squared: f64,
    pub iterations: u32,
}

/// Least-squares fit of y = A exp(-rate h) on the original scale.
/// `anchored` forces A = 1. Initialization by log-linear regression over the
/// positive values, refinement by damped Gauss-Newton. R-squared is computed
/// on the original scale; with `weighted`, residuals and R-squared use the
/// per-hop counts as weights.
pub fn fit_exponential(series: &HopSeries, anchored: bool, weighted: bool) -> Result<DecayFit> {
    let pts: Vec<(f64, f64, f64)> = series
        .hops
        .iter()
        .zip(&series.values)
        .zip(&series.counts)
        .filter(|((_, _), &c)| c > 0)
        .map(|((&h, &y), &c)| (f64::from(h), y, if weighted { c as f64 } else { 1.0 }))
        .collect();
    if pts.len() < 3 {
        return Err(Error::TooFewPoints {
            need: 3,
            got: pts.len(),
        });
    }

    // log-linear seed over positive values
    let logs: Vec<(f64, f64, f64)> = pts
        .iter()
        .filter(|&&(_, y, _)| y > 0.0)
        .map(|&(h, y, w)| (h, y.ln(), w))
        .collect();
    let (mut a, mut rate) = if logs.len() >= 2 {
        if anchored {
            // regression through the origin of -ln y on h
            let num: f64 = logs.iter().map(|&(h, ly, w)| w * h * (-ly)).sum();
            let den: f64 = logs.iter().map(|&(h, _, w)| w * h * h).sum();
            (1.0, if den > 0.0 { num / den } else { 0.0 })
        } else {
            let sw: f64 = logs.iter().map(|&(_, _, w)| w).sum();
            let mh: f64 = logs.iter().map(|&(h, _, w)| w * h).sum::<f64>() / sw;
            let ml: f64 = logs.iter().map(|&(_, ly, w)| w * ly).sum::<f64>() / sw;
            let cov: f64 = logs.iter().map(|&(h, ly, w)| w * (h - mh) * (ly - ml)).sum();
            let var: f64 = logs.iter().map(|&(h, _, w)| w * (h - mh) * (h - mh)).sum();
            let slope = if var > 0.0 { cov / var } else { 0.0 };
            ((ml - slope * mh).exp(), -slope)
        }
    } else {
        (1.0, std::f64::consts::LN_2)
    };
    if !rate.is_finite() {
        rate = std::f64::consts::LN_2;
    }
    if !a.is_finite() || a <= 0.0 {
        a = 1.0;
    }

    let sse = |a: f64, rate: f64| -> f64 {
        pts.iter()
            .map(|&(h, y, w)| {
                let r = y - a * (-rate * h).exp();
                w * r * r
            })
            .sum()
    };

    const MAX_ITER: u32 = 200;
    const REL_TOL: f64 = 1e-10;
    let mut current = sse(a, rate);
    let mut iterations = 0;
    for _ in 0..MAX_ITER {
        iterations += 1;
        // residuals r = y - f; J columns: df/dA = e, df/drate = -A h e
        let (mut jtj, mut jtr) = ([[0.0f64; 2]; 2], [0.0f64; 2]);
        for &(h, y, w) in &pts {
            let e = (-rate * h).exp();
            let r = y - a * e;
            let ja = if anchored { 0.0 } else { e };
            let jl = -a * h * e;
            jtj[0][0] += w * ja * ja;
            jtj[0][1] += w * ja * jl;
            jtj[1][1] += w * jl * jl;
            jtr[0] += w * ja * r;
            jtr[1] += w * jl * r;
        }
        jtj[1][0] = jtj[0][1];

        let (da, dl) = if anchored {
            if jtj[1][1].abs() < 1e-300 {
                break;
            }
            (0.0, jtr[1] / jtj[1][1])
        } else {
            let det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[1][0];
            if det.abs() < 1e-300 {
                break;
            }
            (
                (jtr[0] * jtj[1][1] - jtj[0][1] * jtr[1]) / det,
                (jtj[0][0] * jtr[1] - jtj[1][0] * jtr[0]) / det,
            )
        };

        // damped step
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let na = a + step * da;
            let nl = rate + step * dl;
            let ns = sse(na, nl);
            if ns.is_finite() && ns <= current {
                let improved = (current - ns) > REL_TOL * current.max(1e-300);
                a = na;
                rate = nl;
                current = ns;
                accepted = improved;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    if rate <= 0.0 || !rate.is_finite() || !a.is_finite() {
        return Err(Error::DegenerateFit(format!(
            "rate {rate:.3e} (amplitude {a:.3e}); series does not decay"
        )));
    }

    let sw: f64 = pts.iter().map(|&(_, _, w)| w).sum();
    let my: f64 = pts.iter().map(|&(_, y, w)| w * y).sum::<f64>() / sw;
    let ss_tot: f64 = pts.iter().map(|&(_, y, w)| w * (y - my) * (y - my)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - current / ss_tot
    } else if current == 0.0 {
        1.0
    } else {
        f64::NEG_INFINITY
    };

    Ok(DecayFit {
        amplitude: a,
        rate,
        half_life: std::f64::consts::LN_2 / rate,
        r_squared,
        iterations,
    })
}

/// Per-hop series with normal-approximation confidence half-widths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HopSeriesCi {
    pub series: HopSeries,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
}

pub fn with_binomial_ci(series: HopSeries) -> HopSeriesCi {
    let mut ci_low = Vec::with_capacity(series.len());
    let mut ci_high = Vec::with_capacity(series.len());
    for (&p, &n) in series.values.iter().zip(&series.counts) {
        let half = binomial_ci_half_width(p, n);
        ci_low.push((p - half).max(0.0));
        ci_high.push((p + half).min(1.0));
    }
    HopSeriesCi {
        series,
        ci_low,
        ci_high,
    }
}

/// 1.96 * sqrt(p (1-p) / n)
pub fn binomial_ci_half_width(p: f64, n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    1.96 * (p * (1.0 - p) / n as f64).sqrt()
}

/// Family-stratified retention: pair observations grouped by the family of
/// the source model. Families with no sources are omitted.
pub fn family_curves(
    g: &LineageGraph,
    sources: &[u32],
    cutoff: u32,
) -> BTreeMap<Family, HopSeriesCi> {
    let mut by_family: BTreeMap<Family, Vec<u32>> = BTreeMap::new();
    for &s in sources {
        by_family.entry(g.node(s).family).or_default().push(s);
    }
    by_family
        .into_iter()
        .filter_map(|(fam, srcs)| {
            retention_curve(g, &srcs, cutoff, RetentionUnit::Pair)
                .ok()
                .map(|series| (fam, with_binomial_ci(series)))
        })
        .collect()
}
