//! Merge-conflict causal analysis (raw difference, PSM, IPW, AIPW), balance
//! diagnostics, and the evaluation metrics used across the pipeline.

use std::collections::BTreeSet;
use std::collections::{HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::graph::{EdgeType, LineageGraph};
use crate::hash::derive_seed;
use crate::rules::normalize_licence_name;
use crate::stats::{logistic, mean, normal_sf, percentile};

pub const NCOV: usize = 9;

pub const COVARIATE_NAMES: [&str; NCOV] = [
    "num_parents",
    "parent_missing_rate",
    "log_age",
    "log_lineage_size",
    "num_parents_sq",
    "parent_missing_rate_sq",
    "log_age_sq",
    "log_lineage_size_sq",
    "missing_rate_x_num_parents",
];

/// One unit of the merge-conflict analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeCase {
    pub child_id: String,
    /// Conflict: restriction-scored parents mix restrictive and
    /// non-restrictive intents.
    pub treated: bool,
    /// Permissive relicensing: the child carries a recognized permissive
    /// licence name. Missing child licences code as false.
    pub outcome: bool,
    pub covariates: [f64; NCOV],
}

/// Pre-treatment covariate vector. Log transforms are log(1+x) so zero ages
/// and sizes stay finite.
pub fn covariates_from(
    num_parents: f64,
    parent_missing_rate: f64,
    age_days: f64,
    lineage_size: f64,
) -> [f64; NCOV] {
    let log_age = age_days.max(0.0).ln_1p();
    let log_lineage = lineage_size.max(0.0).ln_1p();
    [
        num_parents,
        parent_missing_rate,
        log_age,
        log_lineage,
        num_parents * num_parents,
        parent_missing_rate * parent_missing_rate,
        log_age * log_age,
        log_lineage * log_lineage,
        parent_missing_rate * num_parents,
    ]
}

/// Extract merge cases from the graph: children with at least one direct
/// merge edge and at least one scored parent carrying restriction evidence
/// (score >= threshold). Parents without a score do not define treatment but
/// enter the parent missing-rate covariate.
pub fn build_cases(
    g: &LineageGraph,
    permissive: &BTreeSet<String>,
    restrictive_threshold: f64,
    reference_epoch: Option<i64>,
) -> Vec<MergeCase> {
    let reference = reference_epoch.unwrap_or_else(|| {
        g.nodes()
            .iter()
            .filter_map(|n| n.created_at)
            .max()
            .unwrap_or(0)
    });

    let mut cases = Vec::new();
    for child in 0..g.len() as u32 {
        let parents = g.parents_of(child);
        if parents.is_empty() || !parents.iter().any(|e| e.edge_type == EdgeType::Merge) {
            continue;
        }
        let mut scored_restrictive = 0usize;
        let mut scored_nonrestrictive = 0usize;
        let mut missing = 0usize;
        for e in parents {
            match g.node(e.parent).restriction_score {
                Some(s) if s >= restrictive_threshold => scored_restrictive += 1,
                Some(_) => scored_nonrestrictive += 1,
                None => missing += 1,
            }
        }
        if scored_restrictive == 0 {
            continue; // needs at least one restriction-scored parent
        }
        let treated = scored_nonrestrictive > 0;

        let node = g.node(child);
        let outcome = node
            .licence_names
            .iter()
            .any(|n| permissive.contains(&normalize_licence_name(n)));
        let age_days = node
            .created_at
            .map(|t| ((reference - t).max(0)) as f64 / 86_400.0)
            .unwrap_or(0.0);
        let covariates = covariates_from(
            parents.len() as f64,
            missing as f64 / parents.len() as f64,
            age_days,
            ancestor_count(g, child) as f64,
        );
        cases.push(MergeCase {
            child_id: node.id.clone(),
            treated,
            outcome,
            covariates,
        });
    }
    // node iteration order is sorted by id already; keep it explicit
    cases.sort_by(|a, b| a.child_id.cmp(&b.child_id));
    cases
}

fn ancestor_count(g: &LineageGraph, node: u32) -> usize {
    let mut seen: HashMap<u32, ()> = HashMap::new();
    let mut queue = VecDeque::new();
    queue.push_back(node);
    while let Some(v) = queue.pop_front() {
        for e in g.parents_of(v) {
            if e.parent != node && seen.insert(e.parent, ()).is_none() {
                queue.push_back(e.parent);
            }
        }
    }
    seen.len()
}

// ---------------------------------------------------------------------------
// logistic regression
// ---------------------------------------------------------------------------

/// Scaled logistic regression: features are standardized before fitting and a
/// small ridge penalty keeps separable data finite. Predictions are clipped
/// to [0.001, 0.999].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogisticModel {
    /// Intercept followed by one coefficient per standardized feature.
    pub coefficients: Vec<f64>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: u32,
}

pub const PREDICTION_CLIP: (f64, f64) = (0.001, 0.999);

impl LogisticModel {
    pub fn predict(&self, covariates: &[f64; NCOV]) -> f64 {
        let mut z = self.coefficients[0];
        for j in 0..NCOV {
            z += self.coefficients[j + 1] * (covariates[j] - self.means[j]) / self.scales[j];
        }
        logistic(z).clamp(PREDICTION_CLIP.0, PREDICTION_CLIP.1)
    }
}

/// Newton-Raphson MLE with ridge `ridge` on the non-intercept coefficients.
/// Convergence by gradient max-norm; step-halving guards the objective.
pub fn fit_logistic(
    features: &[[f64; NCOV]],
    labels: &[bool],
    ridge: f64,
    tol: f64,
    max_iter: u32,
) -> Result<LogisticModel> {
    assert_eq!(features.len(), labels.len());
    let n = features.len();
    if n == 0 {
        return Err(Error::NoObservations);
    }

    let mut means = [0.0f64; NCOV];
    let mut scales = [1.0f64; NCOV];
    for j in 0..NCOV {
        let m = features.iter().map(|x| x[j]).sum::<f64>() / n as f64;
        let var = features.iter().map(|x| (x[j] - m) * (x[j] - m)).sum::<f64>() / n as f64;
        means[j] = m;
        scales[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let std: Vec<[f64; NCOV]> = features
        .iter()
        .map(|x| {
            let mut z = [0.0; NCOV];
            for j in 0..NCOV {
                z[j] = (x[j] - means[j]) / scales[j];
            }
            z
        })
        .collect();

    const K: usize = NCOV + 1;
    let nll = |beta: &[f64; K]| -> f64 {
        let mut total = 0.0;
        for (x, &y) in std.iter().zip(labels) {
            let mut z = beta[0];
            for j in 0..NCOV {
                z += beta[j + 1] * x[j];
            }
            // -log-likelihood via log1p for stability
            total += if y {
                (-z).max(0.0) + (-(-z).abs()).exp().ln_1p()
            } else {
                z.max(0.0) + (-z.abs()).exp().ln_1p()
            };
        }
        for b in &beta[1..] {
            total += 0.5 * ridge * b * b;
        }
        total
    };

    let mut beta = [0.0f64; K];
    let mut current = nll(&beta);
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    // tolerance applies to the per-observation gradient: the absolute
    // gradient of the summed objective scales with n
    let threshold = tol * n as f64;
    while iterations < max_iter {
        iterations += 1;
        let mut grad = [0.0f64; K];
        let mut hess = [[0.0f64; K]; K];
        for (x, &y) in std.iter().zip(labels) {
            let mut z = beta[0];
            for j in 0..NCOV {
                z += beta[j + 1] * x[j];
            }
            let p = logistic(z);
            let r = p - if y { 1.0 } else { 0.0 };
            let w = (p * (1.0 - p)).max(1e-12);
            let mut xi = [0.0f64; K];
            xi[0] = 1.0;
            xi[1..].copy_from_slice(x);
            for a in 0..K {
                grad[a] += r * xi[a];
                for b in a..K {
                    hess[a][b] += w * xi[a] * xi[b];
                }
            }
        }
        for a in 1..K {
            grad[a] += ridge * beta[a];
            hess[a][a] += ridge;
        }
        for a in 0..K {
            for b in 0..a {
                hess[a][b] = hess[b][a];
            }
        }
        grad_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if grad_norm <= threshold {
            break;
        }
        let Some(delta) = solve(hess, grad) else { break };
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..30 {
            let mut cand = beta;
            for a in 0..K {
                cand[a] -= step * delta[a];
            }
            let c = nll(&cand);
            if c.is_finite() && c <= current {
                beta = cand;
                current = c;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    if grad_norm > threshold && iterations >= max_iter {
        return Err(Error::NoConvergence {
            iterations,
            grad_norm,
        });
    }

    Ok(LogisticModel {
        coefficients: beta.to_vec(),
        means: means.to_vec(),
        scales: scales.to_vec(),
        log_likelihood: -current,
        iterations,
    })
}

/// Gaussian elimination with partial pivoting for the Newton step.
fn solve<const K: usize>(mut a: [[f64; K]; K], mut b: [f64; K]) -> Option<[f64; K]> {
    for col in 0..K {
        let mut pivot = col;
        for row in col + 1..K {
            if a[row][col].abs() > a[pivot][col].abs() {
                pivot = row;
            }
        }
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..K {
            let f = a[row][col] / a[col][col];
            for c in col..K {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0f64; K];
    for col in (0..K).rev() {
        let mut s = b[col];
        for c in col + 1..K {
            s -= a[col][c] * x[c];
        }
        x[col] = s / a[col][col];
    }
    Some(x)
}

/// Propensity model on the nine pre-treatment covariates.
pub fn fit_propensity(
    cases: &[MergeCase],
    ridge: f64,
    tol: f64,
    max_iter: u32,
) -> Result<LogisticModel> {
    let (t, c) = arm_counts(cases);
    if t < 2 || c < 2 {
        return Err(Error::EmptyArm {
            treated: t,
            control: c,
        });
    }
    let x: Vec<[f64; NCOV]> = cases.iter().map(|c| c.covariates).collect();
    let y: Vec<bool> = cases.iter().map(|c| c.treated).collect();
    fit_logistic(&x, &y, ridge, tol, max_iter)
}

pub const DEFAULT_RIDGE: f64 = 1e-6;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: u32 = 500;

fn arm_counts(cases: &[MergeCase]) -> (usize, usize) {
    let t = cases.iter().filter(|c| c.treated).count();
    (t, cases.len() - t)
}

// ---------------------------------------------------------------------------
// estimators
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Raw,
    PsmAtt,
    IpwAte,
    AipwAte,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Raw => "raw",
            EstimatorKind::PsmAtt => "psm_att",
            EstimatorKind::IpwAte => "ipw_ate",
            EstimatorKind::AipwAte => "aipw_ate",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub estimator: EstimatorKind,
    pub estimate: f64,
    pub bootstrap_mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_treated: usize,
    pub n_control: usize,
    pub resamples: u32,
    /// Two-sided z-test p-value (raw estimator only).
    pub p_value: Option<f64>,
    /// Bootstrap resamples skipped because an arm emptied or a fit failed.
    pub failed_resamples: u32,
}

/// Raw proportion difference with a two-sided z-test and a seeded percentile
/// bootstrap CI.
pub fn raw_difference(cases: &[MergeCase], resamples: u32, seed: u64) -> Result<EffectEstimate> {
    let (nt, nc) = arm_counts(cases);
    if nt == 0 || nc == 0 {
        return Err(Error::EmptyArm {
            treated: nt,
            control: nc,
        });
    }
    let delta = raw_delta(cases).expect("arms verified nonempty");

    // two-sided z-test for two proportions
    let suc_t = cases.iter().filter(|c| c.treated && c.outcome).count() as f64;
    let suc_c = cases.iter().filter(|c| !c.treated && c.outcome).count() as f64;
    let pooled = (suc_t + suc_c) / (nt + nc) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / nt as f64 + 1.0 / nc as f64)).sqrt();
    let p_value = if se > 0.0 {
        2.0 * normal_sf((delta / se).abs())
    } else {
        1.0
    };

    let n = cases.len();
    let draws: Vec<Option<f64>> = exec::map_indexed(resamples as usize, |r| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, r as u64));
        let sample: Vec<MergeCase> = (0..n).map(|_| cases[rng.gen_range(0..n)].clone()).collect();
        raw_delta(&sample)
    });
    let (values, failed) = collect_draws(draws);

    Ok(EffectEstimate {
        estimator: EstimatorKind::Raw,
        estimate: delta,
        bootstrap_mean: mean(&values),
        ci_low: percentile(&values, 2.5),
        ci_high: percentile(&values, 97.5),
        n_treated: nt,
        n_control: nc,
        resamples,
        p_value: Some(p_value),
        failed_resamples: failed,
    })
}

fn raw_delta(cases: &[MergeCase]) -> Option<f64> {
    let (mut st, mut nt, mut sc, mut nc) = (0.0, 0usize, 0.0, 0usize);
    for c in cases {
        if c.treated {
            nt += 1;
            if c.outcome {
                st += 1.0;
            }
        } else {
            nc += 1;
            if c.outcome {
                sc += 1.0;
            }
        }
    }
    if nt == 0 || nc == 0 {
        return None;
    }
    Some(st / nt as f64 - sc / nc as f64)
}

fn collect_draws(draws: Vec<Option<f64>>) -> (Vec<f64>, u32) {
    let mut failed = 0u32;
    let values: Vec<f64> = draws
        .into_iter()
        .filter_map(|d| {
            if d.is_none() {
                failed += 1;
            }
            d
        })
        .collect();
    (values, failed)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsmOptions {
    /// Controls matched per treated unit.
    pub k: usize,
    pub caliper: f64,
    /// Interpret the caliper on the logit scale in SD units instead of the
    /// propensity-score scale.
    pub caliper_logit_sd: bool,
    pub resamples: u32,
    pub seed: u64,
}

impl Default for PsmOptions {
    fn default() -> Self {
        PsmOptions {
            k: 3,
            caliper: 0.20,
            caliper_logit_sd: false,
            resamples: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsmResult {
    pub estimate: EffectEstimate,
    pub matched_treated: usize,
    /// Treated units with no in-caliper control.
    pub dropped_treated: usize,
    pub unique_controls: usize,
    /// Per-case matching weights (treated 1, controls accumulate 1/k per
    /// match) for post-matching balance diagnostics.
    pub weights: Vec<f64>,
}

/// 1:k nearest-neighbour propensity matching with caliper and replacement;
/// ATT with a bootstrap clustered on treated units. Treated units are
/// processed in case-id order and distance ties break by control case id.
pub fn psm_att(cases: &[MergeCase], model: &LogisticModel, opts: &PsmOptions) -> Result<PsmResult> {
    let (nt, nc) = arm_counts(cases);
    if nt == 0 || nc == 0 {
        return Err(Error::EmptyArm {
            treated: nt,
            control: nc,
        });
    }
    let scores: Vec<f64> = cases.iter().map(|c| model.predict(&c.covariates)).collect();
    let scale: Vec<f64> = if opts.caliper_logit_sd {
        scores.iter().map(|&e| (e / (1.0 - e)).ln()).collect()
    } else {
        scores.clone()
    };
    let caliper = if opts.caliper_logit_sd {
        opts.caliper * crate::stats::sample_sd(&scale)
    } else {
        opts.caliper
    };

    // controls sorted by (score, id) for deterministic tie-breaking
    let mut controls: Vec<usize> = (0..cases.len()).filter(|&i| !cases[i].treated).collect();
    controls.sort_by(|&a, &b| {
        scale[a]
            .partial_cmp(&scale[b])
            .unwrap()
            .then_with(|| cases[a].child_id.cmp(&cases[b].child_id))
    });
    let mut treated: Vec<usize> = (0..cases.len()).filter(|&i| cases[i].treated).collect();
    treated.sort_by(|&a, &b| cases[a].child_id.cmp(&cases[b].child_id));

    let mut diffs = Vec::with_capacity(treated.len());
    let mut weights = vec![0.0f64; cases.len()];
    let mut used_controls: BTreeSet<usize> = BTreeSet::new();
    let mut dropped = 0usize;

    for &t in &treated {
        let target = scale[t];
        let pos = controls.partition_point(|&c| scale[c] < target);
        let mut lo = pos;
        let mut hi = pos;
        let mut picked: Vec<usize> = Vec::with_capacity(opts.k);
        while picked.len() < opts.k && (lo > 0 || hi < controls.len()) {
            let left = lo.checked_sub(1).map(|i| controls[i]);
            let right = controls.get(hi).copied();
            let take_left = match (left, right) {
                (Some(l), Some(r)) => {
                    let dl = (target - scale[l]).abs();
                    let dr = (scale[r] - target).abs();
                    dl < dr || (dl == dr && cases[l].child_id < cases[r].child_id)
                }
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => break,
            };
            let cand = if take_left {
                lo -= 1;
                controls[lo]
            } else {
                hi += 1;
                controls[hi - 1]
            };
            if (scale[cand] - target).abs() > caliper {
                // sorted order: once one side exceeds the caliper that side
                // is exhausted; mark by clamping its pointer
                if take_left {
                    lo = 0;
                    if hi < controls.len() && (scale[controls[hi]] - target).abs() > caliper {
                        break;
                    }
                } else {
                    hi = controls.len();
                    if lo > 0 && (target - scale[controls[lo - 1]]).abs() > caliper {
                        break;
                    }
                }
                continue;
            }
            picked.push(cand);
        }
        if picked.is_empty() {
            dropped += 1;
            continue;
        }
        let m = picked
            .iter()
            .map(|&c| if cases[c].outcome { 1.0 } else { 0.0 })
            .sum::<f64>()
            / picked.len() as f64;
        diffs.push((if cases[t].outcome { 1.0 } else { 0.0 }) - m);
        weights[t] = 1.0;
        for &c in &picked {
            weights[c] += 1.0 / picked.len() as f64;
            used_controls.insert(c);
        }
    }
    if diffs.is_empty() {
        return Err(Error::EmptyArm {
            treated: 0,
            control: nc,
        });
    }

    let att = mean(&diffs);
    // cluster bootstrap: resample treated units with their matched sets
    let nd = diffs.len();
    let draws: Vec<Option<f64>> = exec::map_indexed(opts.resamples as usize, |r| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, r as u64));
        let s: f64 = (0..nd).map(|_| diffs[rng.gen_range(0..nd)]).sum();
        Some(s / nd as f64)
    });
    let (values, failed) = collect_draws(draws);

    Ok(PsmResult {
        estimate: EffectEstimate {
            estimator: EstimatorKind::PsmAtt,
            estimate: att,
            bootstrap_mean: mean(&values),
            ci_low: percentile(&values, 2.5),
            ci_high: percentile(&values, 97.5),
            n_treated: diffs.len(),
            n_control: used_controls.len(),
            resamples: opts.resamples,
            p_value: None,
            failed_resamples: failed,
        },
        matched_treated: diffs.len(),
        dropped_treated: dropped,
        unique_controls: used_controls.len(),
        weights,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightingOptions {
    pub trim: (f64, f64),
    pub resamples: u32,
    pub seed: u64,
    pub ridge: f64,
    pub tol: f64,
    pub max_iter: u32,
}

impl Default for WeightingOptions {
    fn default() -> Self {
        WeightingOptions {
            trim: (0.05, 0.95),
            resamples: 800,
            seed: 0,
            ridge: DEFAULT_RIDGE,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

fn trimmed_sample<'a>(cases: &'a [MergeCase], opts: &WeightingOptions) -> Result<Vec<&'a MergeCase>> {
    let model = fit_propensity(cases, opts.ridge, opts.tol, opts.max_iter)?;
    let kept: Vec<&MergeCase> = cases
        .iter()
        .filter(|c| {
            let e = model.predict(&c.covariates);
            e >= opts.trim.0 && e <= opts.trim.1
        })
        .collect();
    let t = kept.iter().filter(|c| c.treated).count();
    if t < 2 || kept.len() - t < 2 {
        return Err(Error::EmptyArm {
            treated: t,
            control: kept.len() - t,
        });
    }
    Ok(kept)
}

fn ipw_point(cases: &[MergeCase], opts: &WeightingOptions) -> Result<f64> {
    let kept = trimmed_sample(cases, opts)?;
    let owned: Vec<MergeCase> = kept.iter().map(|c| (*c).clone()).collect();
    // propensity refit on the trimmed sample
    let refit = fit_propensity(&owned, opts.ridge, opts.tol, opts.max_iter)?;
    let (mut num_t, mut den_t, mut num_c, mut den_c) = (0.0, 0.0, 0.0, 0.0);
    for c in &owned {
        let e = refit.predict(&c.covariates);
        let y = if c.outcome { 1.0 } else { 0.0 };
        if c.treated {
            let w = 1.0 / e;
            num_t += w * y;
            den_t += w;
        } else {
            let w = 1.0 / (1.0 - e);
            num_c += w * y;
            den_c += w;
        }
    }
    // Hajek normalization keeps estimates bounded under thin overlap
    Ok(num_t / den_t - num_c / den_c)
}

/// IPW ATE with common-support trimming and propensity refit; the bootstrap
/// refits every model on every resample.
pub fn ipw_ate(cases: &[MergeCase], opts: &WeightingOptions) -> Result<EffectEstimate> {
    bootstrap_weighting(cases, opts, EstimatorKind::IpwAte, ipw_point)
}

fn aipw_point(cases: &[MergeCase], opts: &WeightingOptions) -> Result<f64> {
    let kept = trimmed_sample(cases, opts)?;
    let owned: Vec<MergeCase> = kept.iter().map(|c| (*c).clone()).collect();
    let refit = fit_propensity(&owned, opts.ridge, opts.tol, opts.max_iter)?;

    // separate outcome regressions for treated and control on the trimmed
    // sample, same nine features
    let fit_arm = |arm: bool| -> Result<LogisticModel> {
        let x: Vec<[f64; NCOV]> = owned
            .iter()
            .filter(|c| c.treated == arm)
            .map(|c| c.covariates)
            .collect();
        let y: Vec<bool> = owned
            .iter()
            .filter(|c| c.treated == arm)
            .map(|c| c.outcome)
            .collect();
        fit_logistic(&x, &y, opts.ridge, opts.tol, opts.max_iter)
    };
    let m1 = fit_arm(true)?;
    let m0 = fit_arm(false)?;

    let treated: Vec<bool> = owned.iter().map(|c| c.treated).collect();
    let outcome: Vec<f64> = owned
        .iter()
        .map(|c| if c.outcome { 1.0 } else { 0.0 })
        .collect();
    let e: Vec<f64> = owned.iter().map(|c| refit.predict(&c.covariates)).collect();
    let p1: Vec<f64> = owned.iter().map(|c| m1.predict(&c.covariates)).collect();
    let p0: Vec<f64> = owned.iter().map(|c| m0.predict(&c.covariates)).collect();
    Ok(aipw_from_components(&treated, &outcome, &e, &p1, &p0))
}

/// The doubly robust AIPW estimate from externally supplied components:
/// mean of m1 - m0 + T (y - m1) / e - (1 - T) (y - m0) / (1 - e).
pub fn aipw_from_components(
    treated: &[bool],
    outcome: &[f64],
    propensity: &[f64],
    m1: &[f64],
    m0: &[f64],
) -> f64 {
    let n = treated.len();
    let mut total = 0.0;
    for i in 0..n {
        let t = if treated[i] { 1.0 } else { 0.0 };
        total += m1[i] - m0[i] + t * (outcome[i] - m1[i]) / propensity[i]
            - (1.0 - t) * (outcome[i] - m0[i]) / (1.0 - propensity[i]);
    }
    total / n as f64
}

/// AIPW ATE: doubly robust combination of the propensity model and per-arm
/// outcome regressions; the bootstrap refits all three models per resample.
pub fn aipw_ate(cases: &[MergeCase], opts: &WeightingOptions) -> Result<EffectEstimate> {
    bootstrap_weighting(cases, opts, EstimatorKind::AipwAte, aipw_point)
}

fn bootstrap_weighting(
    cases: &[MergeCase],
    opts: &WeightingOptions,
    kind: EstimatorKind,
    point: fn(&[MergeCase], &WeightingOptions) -> Result<f64>,
) -> Result<EffectEstimate> {
    let estimate = point(cases, opts)?;
    let (nt, nc) = arm_counts(cases);
    let n = cases.len();
    let draws: Vec<Option<f64>> = exec::map_indexed(opts.resamples as usize, |r| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, r as u64));
        let sample: Vec<MergeCase> = (0..n).map(|_| cases[rng.gen_range(0..n)].clone()).collect();
        point(&sample, opts).ok()
    });
    let (values, failed) = collect_draws(draws);
    Ok(EffectEstimate {
        estimator: kind,
        estimate,
        bootstrap_mean: mean(&values),
        ci_low: percentile(&values, 2.5),
        ci_high: percentile(&values, 97.5),
        n_treated: nt,
        n_control: nc,
        resamples: opts.resamples,
        p_value: None,
        failed_resamples: failed,
    })
}

// ---------------------------------------------------------------------------
// balance diagnostics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmdRow {
    pub covariate: String,
    pub smd: f64,
}

/// Standardized mean differences per covariate, optionally under matching
/// weights (per-case weights; zero excludes a case). Zero pooled variance
/// yields 0 when the means agree and an infinity flag otherwise.
pub fn smd(cases: &[MergeCase], weights: Option<&[f64]>) -> Vec<SmdRow> {
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let mut rows = Vec::with_capacity(NCOV);
    for j in 0..NCOV {
        let stats = |arm: bool| -> (f64, f64) {
            let mut sw = 0.0;
            let mut m = 0.0;
            for (i, c) in cases.iter().enumerate() {
                if c.treated == arm {
                    sw += w(i);
                    m += w(i) * c.covariates[j];
                }
            }
            if sw == 0.0 {
                return (f64::NAN, f64::NAN);
            }
            m /= sw;
            let mut var = 0.0;
            for (i, c) in cases.iter().enumerate() {
                if c.treated == arm {
                    var += w(i) * (c.covariates[j] - m) * (c.covariates[j] - m);
                }
            }
            (m, var / sw)
        };
        let (mt, vt) = stats(true);
        let (mc, vc) = stats(false);
        let pooled = ((vt + vc) / 2.0).sqrt();
        let value = if pooled > 0.0 {
            (mt - mc) / pooled
        } else if (mt - mc).abs() < 1e-15 {
            0.0
        } else {
            f64::INFINITY * (mt - mc).signum()
        };
        rows.push(SmdRow {
            covariate: COVARIATE_NAMES[j].to_string(),
            smd: value,
        });
    }
    rows
}

/// Histogram of propensity scores per arm for overlap plots.
pub fn propensity_histogram(
    cases: &[MergeCase],
    model: &LogisticModel,
    bins: usize,
) -> Vec<(f64, f64, u64, u64)> {
    let mut out = vec![(0.0, 0.0, 0u64, 0u64); bins];
    for (b, slot) in out.iter_mut().enumerate() {
        slot.0 = b as f64 / bins as f64;
        slot.1 = (b + 1) as f64 / bins as f64;
    }
    for c in cases {
        let e = model.predict(&c.covariates);
        let b = ((e * bins as f64) as usize).min(bins - 1);
        if c.treated {
            out[b].2 += 1;
        } else {
            out[b].3 += 1;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// evaluation metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub agreement: f64,
    /// `None` when expected agreement is 1 (kappa undefined).
    pub kappa: Option<f64>,
}

/// Observed agreement and Cohen's kappa with marginal-product expected
/// agreement.
pub fn agreement_metrics<T: Ord>(a: &[T], b: &[T]) -> Agreement {
    assert_eq!(a.len(), b.len(), "label lists must have equal length");
    let n = a.len() as f64;
    let observed = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut ca: std::collections::BTreeMap<&T, f64> = Default::default();
    let mut cb: std::collections::BTreeMap<&T, f64> = Default::default();
    for x in a {
        *ca.entry(x).or_default() += 1.0;
    }
    for y in b {
        *cb.entry(y).or_default() += 1.0;
    }
    let expected: f64 = ca
        .iter()
        .map(|(k, &na)| na / n * cb.get(k).copied().unwrap_or(0.0) / n)
        .sum();
    let kappa = if (1.0 - expected).abs() < 1e-15 {
        None
    } else {
        Some((observed - expected) / (1.0 - expected))
    };
    Agreement {
        agreement: observed,
        kappa,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

pub fn classification_metrics(c: &Confusion) -> ClassMetrics {
    let precision = c.tp as f64 / (c.tp + c.fp) as f64;
    let recall = c.tp as f64 / (c.tp + c.fn_) as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let accuracy = (c.tp + c.tn) as f64 / (c.tp + c.fp + c.fn_ + c.tn) as f64;
    ClassMetrics {
        precision,
        recall,
        f1,
        accuracy,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HtStratum {
    /// Estimated population size of the stratum.
    pub population: u64,
    /// Sampled size.
    pub sampled: u64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HtMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Horvitz-Thompson expansion: each sampled unit in stratum s carries weight
/// N_s / n_s; weighted confusion counts aggregate across strata before the
/// micro metrics.
pub fn ht_micro_metrics(strata: &[HtStratum]) -> HtMetrics {
    let (mut tp, mut fp, mut fn_) = (0.0f64, 0.0f64, 0.0f64);
    for s in strata {
        assert!(s.sampled > 0, "stratum with zero sampled units");
        assert!(s.population >= s.sampled, "population smaller than sample");
        let w = s.population as f64 / s.sampled as f64;
        tp += w * s.tp as f64;
        fp += w * s.fp as f64;
        fn_ += w * s.fn_ as f64;
    }
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 1.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 1.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    HtMetrics {
        precision,
        recall,
        f1,
    }
}
