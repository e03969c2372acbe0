//! Support-recovery metrics reconciled over column matchings.
//!
//! Under any matching of estimated to true columns (unmatched columns are
//! paired with an empty column) the symmetric difference of the supports is
//! `|Â| + |A| - 2 Σ |â_a ∩ a_b|` over matched pairs, so both the Hamming
//! distance and the F₁ score reduce to a maximum-weight bipartite matching
//! on column-overlap counts. That matching is solved exactly with the
//! Hungarian method on each connected component of the overlap graph.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Structure;

/// Largest `max(d̂, d)` accepted by [`brute_force_metric`].
pub const BRUTE_FORCE_MAX_D: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub hd: usize,
    pub f1: f64,
    /// For each estimated column, the matched true column (`None` when the
    /// estimated column is paired with padding).
    pub best_permutation: Vec<Option<usize>>,
    pub d_hat: usize,
    pub d_true: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Hd,
    F1,
}

/// Minimum-cost perfect assignment on a square cost matrix.
///
/// Returns `assign[row] = col`. Shortest augmenting path formulation with
/// row and column potentials, `O(n³)`.
pub fn min_cost_assignment(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    const INF: i64 = i64::MAX / 4;
    // 1-based arrays; index 0 is a sentinel
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if col_owner[j] > 0 {
            assign[col_owner[j] - 1] = j - 1;
        }
    }
    assign
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    let mut y = x;
    while parent[y] != r {
        let next = parent[y];
        parent[y] = r;
        y = next;
    }
    r
}

/// Maximum total overlap over column matchings, with the matching.
fn max_overlap_matching(est: &Structure, truth: &Structure) -> (usize, Vec<Option<usize>>) {
    let (dh, dt) = (est.d(), truth.d());
    let est_parents = est.parent_sets();
    let true_parents = truth.parent_sets();
    let mut overlap: HashMap<(usize, usize), i64> = HashMap::new();
    for i in 0..est.p() {
        for &a in &est_parents[i] {
            for &b in &true_parents[i] {
                *overlap.entry((a, b)).or_default() += 1;
            }
        }
    }

    // components of the overlap graph; nodes 0..dh are estimated columns
    let mut parent: Vec<usize> = (0..dh + dt).collect();
    for &(a, b) in overlap.keys() {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, dh + b));
        if ra != rb {
            parent[ra] = rb;
        }
    }
    let mut groups: HashMap<usize, (Vec<usize>, Vec<usize>)> = HashMap::new();
    for a in 0..dh {
        groups.entry(find(&mut parent, a)).or_default().0.push(a);
    }
    for b in 0..dt {
        groups.entry(find(&mut parent, dh + b)).or_default().1.push(b);
    }

    let mut matching = vec![None; dh];
    let mut total = 0usize;
    for (cols_e, cols_t) in groups.into_values() {
        if cols_e.is_empty() || cols_t.is_empty() {
            continue;
        }
        let n = cols_e.len().max(cols_t.len());
        let cost: Vec<Vec<i64>> = (0..n)
            .map(|r| {
                (0..n)
                    .map(|c| match (cols_e.get(r), cols_t.get(c)) {
                        (Some(&a), Some(&b)) => -overlap.get(&(a, b)).copied().unwrap_or(0),
                        _ => 0,
                    })
                    .collect()
            })
            .collect();
        let assign = min_cost_assignment(&cost);
        for (r, &c) in assign.iter().enumerate() {
            if let (Some(&a), Some(&b)) = (cols_e.get(r), cols_t.get(c)) {
                let w = overlap.get(&(a, b)).copied().unwrap_or(0);
                if w > 0 {
                    matching[a] = Some(b);
                    total += w as usize;
                }
            }
        }
    }
    (total, matching)
}

fn check_dims(est: &Structure, truth: &Structure) -> Result<()> {
    if est.p() != truth.p() {
        return Err(Error::DimensionMismatch(format!(
            "estimated structure has p = {}, truth has p = {}",
            est.p(),
            truth.p()
        )));
    }
    Ok(())
}

/// HD and F₁ with the HD-optimal matching.
pub fn evaluate(est: &Structure, truth: &Structure) -> Result<MetricReport> {
    check_dims(est, truth)?;
    let (overlap, matching) = max_overlap_matching(est, truth);
    let total = est.len() + truth.len();
    Ok(MetricReport {
        hd: total - 2 * overlap,
        f1: f1_from(overlap, total),
        best_permutation: matching,
        d_hat: est.d(),
        d_true: truth.d(),
    })
}

fn f1_from(overlap: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        2.0 * overlap as f64 / total as f64
    }
}

/// Minimum over column matchings of `|Â P △ A|`.
pub fn hamming_distance(est: &Structure, truth: &Structure) -> Result<usize> {
    Ok(evaluate(est, truth)?.hd)
}

/// Maximum over column matchings of `2|∩| / (2|∩| + |△|)`.
pub fn f1_score(est: &Structure, truth: &Structure) -> Result<f64> {
    check_dims(est, truth)?;
    let (overlap, _) = max_overlap_matching(est, truth);
    Ok(f1_from(overlap, est.len() + truth.len()))
}

fn next_permutation(a: &mut [usize]) -> bool {
    if a.len() < 2 {
        return false;
    }
    let mut i = a.len() - 1;
    while i > 0 && a[i - 1] >= a[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = a.len() - 1;
    while a[j] <= a[i - 1] {
        j -= 1;
    }
    a.swap(i - 1, j);
    a[i..].reverse();
    true
}

/// Enumerates every padded permutation of the estimated columns and
/// evaluates the metric on the relabeled supports directly.
pub fn brute_force_metric(est: &Structure, truth: &Structure, which: Metric) -> Result<f64> {
    check_dims(est, truth)?;
    let n = est.d().max(truth.d());
    if n > BRUTE_FORCE_MAX_D {
        return Err(Error::TooLarge { size: n, limit: BRUTE_FORCE_MAX_D });
    }
    let target: &BTreeSet<(usize, usize)> = truth.support();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = match which {
        Metric::Hd => f64::INFINITY,
        Metric::F1 => f64::NEG_INFINITY,
    };
    loop {
        // estimated column k becomes column perm[k]; labels >= d are padding
        let relabeled: BTreeSet<(usize, usize)> = est.support().iter().map(|&(i, k)| (i, perm[k])).collect();
        let inter = relabeled.intersection(target).count();
        let sym = relabeled.symmetric_difference(target).count();
        best = match which {
            Metric::Hd => best.min(sym as f64),
            Metric::F1 => {
                let denom = 2 * inter + sym;
                let f = if denom == 0 { 0.0 } else { 2.0 * inter as f64 / denom as f64 };
                best.max(f)
            }
        };
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok(best)
}
