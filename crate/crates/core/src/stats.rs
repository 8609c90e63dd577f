//! Run-summary statistics: five-number summaries for repeated runs,
//! relative improvement between configurations, and a one-sided
//! Mann–Whitney U test for comparing two groups of outcomes.

use statrs::function::erf::erfc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("{which} sample is empty")]
    Empty { which: &'static str },
    #[error("{which} sample contains a non-finite value {value}")]
    NonFinite { which: &'static str, value: f64 },
    #[error("all pooled values are identical; ranks carry no information")]
    Degenerate,
    #[error("{which} median {median} must be positive")]
    NonPositiveMedian { which: &'static str, median: f64 },
}

/// Five-number summary of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

fn check_sample(values: &[f64], which: &'static str) -> Result<(), StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty { which });
    }
    for &v in values {
        if !v.is_finite() {
            return Err(StatsError::NonFinite { which, value: v });
        }
    }
    Ok(())
}

// Linearly interpolated quantile of an ascending sample at position (n-1)q.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn summarize(values: &[f64]) -> Result<Summary, StatsError> {
    check_sample(values, "input")?;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(Summary {
        median: quantile_sorted(&sorted, 0.5),
        q1: quantile_sorted(&sorted, 0.25),
        q3: quantile_sorted(&sorted, 0.75),
        min: sorted[0],
        max: *sorted.last().unwrap(),
    })
}

/// Relative change of the treatment median over the baseline median, as a
/// fraction. Both medians must be positive for the ratio to be meaningful.
pub fn relative_improvement(baseline: &[f64], treatment: &[f64]) -> Result<f64, StatsError> {
    check_sample(baseline, "baseline")?;
    check_sample(treatment, "treatment")?;
    let base = summarize(baseline)?.median;
    let treat = summarize(treatment)?.median;
    if base <= 0.0 {
        return Err(StatsError::NonPositiveMedian {
            which: "baseline",
            median: base,
        });
    }
    if treat <= 0.0 {
        return Err(StatsError::NonPositiveMedian {
            which: "treatment",
            median: treat,
        });
    }
    Ok((treat - base) / base)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MwuMethod {
    /// Exact tail probability by enumeration over the tie pattern.
    Exact,
    /// Normal approximation with tie-corrected variance and continuity
    /// correction.
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MwuResult {
    /// The U statistic of the first sample (pairs where first > second,
    /// ties counting one half).
    pub u: f64,
    /// One-sided p-value for the alternative "first tends larger":
    /// P(U >= observed) under the null.
    pub p: f64,
    pub method: MwuMethod,
}

/// Work bound for the exact method: enumerate when n·m is at most this.
pub const MWU_EXACT_LIMIT: usize = 400;

/// Tie groups of the pooled sample in ascending value order: total
/// multiplicity and how many members come from the first sample.
fn tie_groups(first: &[f64], second: &[f64]) -> Vec<(usize, usize)> {
    let mut pooled: Vec<(f64, bool)> = first
        .iter()
        .map(|&v| (v, true))
        .chain(second.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut groups = Vec::new();
    let mut i = 0;
    while i < pooled.len() {
        let mut count = 0usize;
        let mut from_first = 0usize;
        let v = pooled[i].0;
        while i < pooled.len() && pooled[i].0 == v {
            count += 1;
            if pooled[i].1 {
                from_first += 1;
            }
            i += 1;
        }
        groups.push((count, from_first));
    }
    groups
}

// Observed 2·U of the first sample from its midrank sum: with B elements
// before a tie group of size c, each member has midrank B + (c+1)/2.
fn observed_two_u(groups: &[(usize, usize)], n: usize) -> usize {
    let mut before = 0usize;
    let mut two_r1 = 0usize;
    for &(count, from_first) in groups {
        two_r1 += from_first * (2 * before + count + 1);
        before += count;
    }
    two_r1 - n * (n + 1)
}

// Null distribution of 2·U for a designated sample of size `n_dp`, as
// integer weights over 0..=2·n_dp·m_other plus the total C(N, n_dp).
// Every way of choosing which pooled positions belong to the sample is
// equally likely; within a tie group the split contributes binomially.
fn exact_two_u_weights(groups: &[(usize, usize)], n_dp: usize, m_other: usize) -> Vec<u128> {
    let total_n: usize = groups.iter().map(|g| g.0).sum();
    let max_two_u = 2 * n_dp * m_other;

    // Pascal triangle, columns clamped to n_dp (the largest split we draw).
    let mut binom = vec![vec![0u128; n_dp + 1]; total_n + 1];
    for row in binom.iter_mut() {
        row[0] = 1;
    }
    for c in 1..=total_n {
        for a in 1..=n_dp.min(c) {
            let prev = &binom[c - 1];
            let left = prev[a - 1];
            let right = if a <= c - 1 { prev[a] } else { 0 };
            binom[c][a] = left + right;
        }
    }

    // dp[s][t]: weight of partial assignments using s sample members with
    // partial 2U equal to t.
    let mut dp = vec![vec![0u128; max_two_u + 1]; n_dp + 1];
    dp[0][0] = 1;
    let mut before = 0usize;
    let mut placed_max = 0usize;
    for &(count, _) in groups {
        let mut next = vec![vec![0u128; max_two_u + 1]; n_dp + 1];
        for s in 0..=placed_max {
            for t in 0..=max_two_u {
                let w = dp[s][t];
                if w == 0 {
                    continue;
                }
                for a in 0..=count.min(n_dp - s) {
                    // a members here see (before - s) opposite-sample values
                    // strictly below and tie with (count - a) of them.
                    let others_below = before - s;
                    let delta = 2 * a * others_below + a * (count - a);
                    next[s + a][t + delta] += w * binom[count][a];
                }
            }
        }
        dp = next;
        before += count;
        placed_max = (placed_max + count).min(n_dp);
    }
    dp.swap_remove(n_dp)
}

fn validated_groups(
    first: &[f64],
    second: &[f64],
) -> Result<Vec<(usize, usize)>, StatsError> {
    check_sample(first, "first")?;
    check_sample(second, "second")?;
    let groups = tie_groups(first, second);
    if groups.len() == 1 {
        return Err(StatsError::Degenerate);
    }
    Ok(groups)
}

fn exact_p(groups: &[(usize, usize)], n: usize, m: usize, two_u_obs: usize) -> f64 {
    // Run the enumeration over the smaller sample; convert the tail through
    // U_first + U_second = n·m.
    let (weights, tail_from): (Vec<u128>, Box<dyn Fn(usize) -> bool>) = if n <= m {
        let w = exact_two_u_weights(groups, n, m);
        (w, Box::new(move |t: usize| t >= two_u_obs))
    } else {
        let flipped: Vec<(usize, usize)> =
            groups.iter().map(|&(c, a)| (c, c - a)).collect();
        let w = exact_two_u_weights(&flipped, m, n);
        let bound = 2 * n * m - two_u_obs;
        (w, Box::new(move |t: usize| t <= bound))
    };
    let total: u128 = weights.iter().sum();
    let tail: u128 = weights
        .iter()
        .enumerate()
        .filter(|(t, _)| tail_from(*t))
        .map(|(_, &w)| w)
        .sum();
    tail as f64 / total as f64
}

fn approx_p(groups: &[(usize, usize)], n: usize, m: usize, two_u_obs: usize) -> f64 {
    let big_n = (n + m) as f64;
    let tie_term: f64 = groups
        .iter()
        .map(|&(c, _)| {
            let c = c as f64;
            c * c * c - c
        })
        .sum();
    let nm = (n * m) as f64;
    let var = nm / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
    let u = two_u_obs as f64 / 2.0;
    let z = (u - nm / 2.0 - 0.5) / var.sqrt();
    // Upper-tail normal probability via erfc keeps precision for large z;
    // clamp away exact zero so callers can rely on p > 0.
    (0.5 * erfc(z / std::f64::consts::SQRT_2)).max(f64::MIN_POSITIVE)
}

/// One-sided Mann–Whitney U test with the alternative "the first sample
/// tends larger". Uses exact enumeration when `n·m <= MWU_EXACT_LIMIT`, the
/// tie-corrected normal approximation otherwise.
pub fn mann_whitney_u_one_sided(first: &[f64], second: &[f64]) -> Result<MwuResult, StatsError> {
    if first.len() * second.len() <= MWU_EXACT_LIMIT {
        mann_whitney_u_exact(first, second)
    } else {
        mann_whitney_u_normal(first, second)
    }
}

/// Exact-enumeration variant, regardless of sample size. Cost grows with
/// `min(n,m)² · n · m`; intended for small samples.
pub fn mann_whitney_u_exact(first: &[f64], second: &[f64]) -> Result<MwuResult, StatsError> {
    let groups = validated_groups(first, second)?;
    let (n, m) = (first.len(), second.len());
    let two_u = observed_two_u(&groups, n);
    Ok(MwuResult {
        u: two_u as f64 / 2.0,
        p: exact_p(&groups, n, m, two_u),
        method: MwuMethod::Exact,
    })
}

/// Normal-approximation variant, regardless of sample size.
pub fn mann_whitney_u_normal(first: &[f64], second: &[f64]) -> Result<MwuResult, StatsError> {
    let groups = validated_groups(first, second)?;
    let (n, m) = (first.len(), second.len());
    let two_u = observed_two_u(&groups, n);
    Ok(MwuResult {
        u: two_u as f64 / 2.0,
        p: approx_p(&groups, n, m, two_u),
        method: MwuMethod::NormalApprox,
    })
}

#[cfg(test)]
pub(crate) fn exact_point_mass(first: &[f64], second: &[f64]) -> f64 {
    let groups = validated_groups(first, second).unwrap();
    let (n, m) = (first.len(), second.len());
    let two_u = observed_two_u(&groups, n);
    let (weights, idx) = if n <= m {
        (exact_two_u_weights(&groups, n, m), two_u)
    } else {
        let flipped: Vec<(usize, usize)> = groups.iter().map(|&(c, a)| (c, c - a)).collect();
        (exact_two_u_weights(&flipped, m, n), 2 * n * m - two_u)
    };
    let total: u128 = weights.iter().sum();
    weights[idx] as f64 / total as f64
}
