//! Score distribution summaries and the Wilcoxon-Mann-Whitney rank-sum test.

use serde::Serialize;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RunStats {
    pub count: usize,
    pub min: f64,
    pub p5: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub p95: f64,
    pub max: f64,
    pub iqr: f64,
    pub mean: f64,
    pub stddev: f64,
    /// Seconds.
    pub mean_time_per_run: f64,
}

/// Nearest-rank percentile: the `ceil(p/100 * n)`-th smallest value.
fn nearest_rank(sorted: &[f64], percent: usize) -> f64 {
    let n = sorted.len();
    let rank = ((percent * n).div_ceil(100)).max(1);
    sorted[rank - 1]
}

pub fn summarize(scores: &[f64], times: &[f64]) -> Result<RunStats> {
    if scores.is_empty() {
        return Err(Error::Parameter("cannot summarize an empty score list".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Parameter("scores contain NaN".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let stddev = if sorted.len() > 1 {
        (sorted.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let q1 = nearest_rank(&sorted, 25);
    let q3 = nearest_rank(&sorted, 75);
    Ok(RunStats {
        count: sorted.len(),
        min: sorted[0],
        p5: nearest_rank(&sorted, 5),
        q1,
        median: nearest_rank(&sorted, 50),
        q3,
        p95: nearest_rank(&sorted, 95),
        max: sorted[sorted.len() - 1],
        iqr: q3 - q1,
        mean,
        stddev,
        mean_time_per_run: if times.is_empty() {
            0.0
        } else {
            times.iter().sum::<f64>() / times.len() as f64
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    Exact,
    Normal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RankSumResult {
    /// Mann-Whitney U of the first sample: pairs `(x, y)` with `x > y`,
    /// ties counting one half.
    pub u: f64,
    /// `min(U_a, U_b)`.
    pub u_min: f64,
    /// Two-sided.
    pub p_value: f64,
    pub method: PValueMethod,
}

/// Largest sample size (for both samples) that uses exact enumeration.
pub const EXACT_LIMIT: usize = 8;

/// Doubled midranks of the pooled sample, so ties stay integral.
fn doubled_midranks(pooled: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0u64; pooled.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1, doubled midrank = i + j + 2
        for &k in &order[i..=j] {
            ranks[k] = (i + j + 2) as u64;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

/// Two-sided rank-sum test with midranks. Exact enumeration over all
/// splits of the pooled ranks when both samples have at most
/// [`EXACT_LIMIT`] values, otherwise the normal approximation with tie and
/// continuity corrections.
pub fn rank_sum_test(a: &[f64], b: &[f64]) -> Result<RankSumResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Parameter("rank-sum test needs two non-empty samples".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::Parameter("samples contain NaN".into()));
    }
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = doubled_midranks(&pooled);
    let ra2: u64 = ranks[..na].iter().sum();
    // U_a = R_a - na(na+1)/2, kept doubled
    let ua2 = ra2 as i64 - (na * (na + 1)) as i64;
    let u = ua2 as f64 / 2.0;
    let u_min = u.min((na * nb) as f64 - u);
    // doubled expected rank sum: na(n+1)
    let center2 = (na * (n + 1)) as i64;
    let observed = (ra2 as i64 - center2).abs();

    if na <= EXACT_LIMIT && nb <= EXACT_LIMIT {
        let mut extreme = 0u64;
        let mut total = 0u64;
        let mut chosen = Vec::with_capacity(na);
        enumerate_sums(&ranks, na, 0, 0, &mut chosen, &mut |sum| {
            total += 1;
            if (sum as i64 - center2).abs() >= observed {
                extreme += 1;
            }
        });
        return Ok(RankSumResult {
            u,
            u_min,
            p_value: extreme as f64 / total as f64,
            method: PValueMethod::Exact,
        });
    }

    let (naf, nbf, nf) = (na as f64, nb as f64, n as f64);
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (nf * (nf - 1.0));
    let variance = naf * nbf / 12.0 * ((nf + 1.0) - tie_term);
    let p_value = if variance <= 0.0 {
        1.0
    } else {
        let z = ((u - naf * nbf / 2.0).abs() - 0.5).max(0.0) / variance.sqrt();
        erfc(z / std::f64::consts::SQRT_2).min(1.0)
    };
    Ok(RankSumResult {
        u,
        u_min,
        p_value,
        method: PValueMethod::Normal,
    })
}

fn enumerate_sums(
    ranks: &[u64],
    k: usize,
    start: usize,
    sum: u64,
    chosen: &mut Vec<usize>,
    visit: &mut impl FnMut(u64),
) {
    if chosen.len() == k {
        visit(sum);
        return;
    }
    let need = k - chosen.len();
    for i in start..=ranks.len() - need {
        chosen.push(i);
        enumerate_sums(ranks, k, i + 1, sum + ranks[i], chosen, visit);
        chosen.pop();
    }
}
