//! Per-instance marginal label weights under the joint assignment
//! distribution of a bag.
//!
//! Given a bag with label multiset `S` and per-instance label-weight rows
//! `w_1..w_K`, the joint distribution over ordered assignments compatible
//! with `S` is `prod_l w_l(y_l) / Z`, with `Z` the sum of those products over
//! all distinct permutations of `S`. The per-instance marginals of that
//! joint are the coefficients of every weighted training loss here.
//!
//! Three routes are provided:
//!
//! - **exact**: a forward/backward dynamic program over remaining-count
//!   states. The state space is `prod_c (counts[c] + 1)`, so bags far larger
//!   than anything full enumeration could handle remain exact; enumeration
//!   survives only as a test oracle.
//! - **approximate**: the leave-one-out bag likelihood is replaced by a
//!   tempered softmax over candidate multisets scored by
//!   `p_{S\y}^T log(mean of the other rows)`, which is exact at `K = 2`
//!   with temperature 1.
//! - **constant**: the remainder term is dropped entirely, leaving
//!   `m_k(y) ∝ count_S(y) · w_k(y)`.

use crate::error::{Error, Result};
use crate::multiset::LabelMultiset;

/// Default cap on the number of remaining-count states the exact DP allows.
pub const DEFAULT_STATE_CAP: u128 = 10_000_000;

/// Entrywise floor applied before taking logarithms.
pub const LOG_CLAMP: f64 = 1e-12;

/// Per-instance marginal rows: `rows[k][y]` is the probability that instance
/// `k` carries label `y`. Each row sums to 1 and is zero off the bag support.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalWeights {
    rows: Vec<Vec<f64>>,
}

impl MarginalWeights {
    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k]
    }

    pub fn into_rows(self) -> Vec<Vec<f64>> {
        self.rows
    }
}

/// Mixed-radix indexing over remaining-count vectors restricted to the
/// support of the multiset.
struct StateSpace {
    support: Vec<usize>,
    radices: Vec<u32>,
    strides: Vec<usize>,
    len: usize,
}

impl StateSpace {
    fn new(s: &LabelMultiset, cap: u128) -> Result<Self> {
        let support: Vec<usize> = s.support().collect();
        let radices: Vec<u32> = support.iter().map(|&c| s.count(c) + 1).collect();
        let mut states: u128 = 1;
        for &r in &radices {
            states = states.saturating_mul(u128::from(r));
        }
        if states > cap {
            return Err(Error::StateSpaceExceeded { states, cap });
        }
        let mut strides = vec![1usize; support.len()];
        for i in 1..support.len() {
            strides[i] = strides[i - 1] * radices[i - 1] as usize;
        }
        Ok(Self {
            len: states as usize,
            support,
            radices,
            strides,
        })
    }

    fn index_of_full(&self) -> usize {
        self.radices
            .iter()
            .zip(&self.strides)
            .map(|(&r, &st)| (r as usize - 1) * st)
            .sum()
    }
}

fn check_rows(s: &LabelMultiset, rows: &[Vec<f64>]) -> Result<()> {
    if rows.len() != s.size() {
        return Err(Error::ShapeMismatch(format!(
            "{} weight rows for a bag of size {}",
            rows.len(),
            s.size()
        )));
    }
    for (k, row) in rows.iter().enumerate() {
        if row.len() != s.num_classes() {
            return Err(Error::ShapeMismatch(format!(
                "row {k} has {} entries, expected {}",
                row.len(),
                s.num_classes()
            )));
        }
        if row.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(Error::ShapeMismatch(format!(
                "row {k} has a negative or non-finite entry"
            )));
        }
    }
    Ok(())
}

/// Backward DP table: `bwd[l][state]` is the total weight of assigning the
/// instances `l..K` exactly the remaining counts encoded by `state`.
fn backward_table(s: &LabelMultiset, rows: &[Vec<f64>], space: &StateSpace) -> Vec<Vec<f64>> {
    let k = s.size();
    let mut bwd = vec![vec![0.0; space.len]; k + 1];
    bwd[k][0] = 1.0;
    for l in (0..k).rev() {
        let (head, tail) = bwd.split_at_mut(l + 1);
        let cur = &mut head[l];
        let next = &tail[0];
        // Walk every state; the ones unreachable at this level stay zero.
        for (state, slot) in cur.iter_mut().enumerate() {
            let mut acc = 0.0;
            let mut digits = state;
            for (i, (&radix, &stride)) in space.radices.iter().zip(&space.strides).enumerate() {
                let digit = digits % radix as usize;
                digits /= radix as usize;
                if digit > 0 {
                    acc += rows[l][space.support[i]] * next[state - stride];
                }
            }
            *slot = acc;
        }
    }
    bwd
}

/// Sum over all distinct label assignments of `S` of the product of
/// per-instance weights, computed by dynamic programming over
/// remaining-count states.
pub fn partition_function(s: &LabelMultiset, rows: &[Vec<f64>], state_cap: u128) -> Result<f64> {
    check_rows(s, rows)?;
    let space = StateSpace::new(s, state_cap)?;
    let bwd = backward_table(s, rows, &space);
    Ok(bwd[0][space.index_of_full()])
}

/// Exact per-instance marginals of the joint assignment distribution:
/// `m_k(y) = w_k(y) · Z(S \ y; other rows) / Z(S; all rows)`.
///
/// Errors with [`Error::ZeroPartition`] when every assignment has zero
/// weight; callers fall back to count-proportional rows.
pub fn exact_marginals(
    s: &LabelMultiset,
    rows: &[Vec<f64>],
    state_cap: u128,
) -> Result<MarginalWeights> {
    check_rows(s, rows)?;
    let space = StateSpace::new(s, state_cap)?;
    let k = s.size();
    let c = s.num_classes();
    let bwd = backward_table(s, rows, &space);
    let z = bwd[0][space.index_of_full()];
    if z == 0.0 {
        return Err(Error::ZeroPartition);
    }

    // Forward table: fwd[state] after l instances is the total weight of
    // prefixes that leave `state` remaining.
    let mut fwd = vec![0.0; space.len];
    let mut next = vec![0.0; space.len];
    fwd[space.index_of_full()] = 1.0;

    let mut out = vec![vec![0.0; c]; k];
    for l in 0..k {
        // m_l(y) = sum over states with a y remaining of
        //          fwd[state] * w_l(y) * bwd[l + 1][state - e_y], / Z.
        for state in 0..space.len {
            let weight = fwd[state];
            if weight == 0.0 {
                continue;
            }
            let mut digits = state;
            for (i, (&radix, &stride)) in space.radices.iter().zip(&space.strides).enumerate() {
                let digit = digits % radix as usize;
                digits /= radix as usize;
                if digit > 0 {
                    let y = space.support[i];
                    out[l][y] += weight * rows[l][y] * bwd[l + 1][state - stride];
                }
            }
        }
        if l + 1 < k {
            // Advance the forward table one instance.
            next.iter_mut().for_each(|x| *x = 0.0);
            for state in 0..space.len {
                let weight = fwd[state];
                if weight == 0.0 {
                    continue;
                }
                let mut digits = state;
                for (i, (&radix, &stride)) in space.radices.iter().zip(&space.strides).enumerate() {
                    let digit = digits % radix as usize;
                    digits /= radix as usize;
                    if digit > 0 {
                        next[state - stride] += weight * rows[l][space.support[i]];
                    }
                }
            }
            std::mem::swap(&mut fwd, &mut next);
        }
        let row_sum: f64 = out[l].iter().sum();
        if row_sum > 0.0 {
            out[l].iter_mut().for_each(|x| *x /= row_sum);
        } else {
            // Individual row wiped out by underflow; count-proportional is
            // the only defensible stand-in.
            out[l] = s.proportions();
        }
    }
    Ok(MarginalWeights { rows: out })
}

/// Temperature `1/(K-1)` as the approximation derives it; 1 for `K <= 1`
/// where the candidate set is a singleton and the value is irrelevant.
pub fn default_temperature(k: usize) -> f64 {
    if k > 1 {
        1.0 / (k as f64 - 1.0)
    } else {
        1.0
    }
}

/// Leave-one-out means of the weight rows: entry `k` is the average of all
/// rows except `k`. For `K = 1` the (empty) mean is taken uniform so its
/// logarithm stays finite; it is multiplied by an all-zero proportion vector
/// downstream.
pub fn leave_one_out_means(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if k == 1 {
        return vec![vec![1.0 / c as f64; c]];
    }
    let mut total = vec![0.0; c];
    for row in rows {
        for (t, &x) in total.iter_mut().zip(row) {
            *t += x;
        }
    }
    rows.iter()
        .map(|row| {
            total
                .iter()
                .zip(row)
                .map(|(&t, &x)| (t - x) / (k as f64 - 1.0))
                .collect()
        })
        .collect()
}

/// Probability over leave-one-out candidate multisets: a softmax with
/// temperature `t` of `p_candidate^T log(loo_mean)`, the cross-entropy
/// likelihood score of each candidate bag.
pub fn candidate_bag_probs(
    candidates: &[LabelMultiset],
    loo_mean: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let log_mean: Vec<f64> = loo_mean.iter().map(|&x| x.max(LOG_CLAMP).ln()).collect();
    let scores: Vec<f64> = candidates
        .iter()
        .map(|cand| {
            let p = cand.proportions();
            if p.len() != log_mean.len() {
                return Err(Error::ShapeMismatch(format!(
                    "candidate over {} classes, mean prediction over {}",
                    p.len(),
                    log_mean.len()
                )));
            }
            Ok(p.iter().zip(&log_mean).map(|(&a, &b)| a * b).sum::<f64>() / t)
        })
        .collect::<Result<_>>()?;
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Approximate marginals:
/// `m_k(y) ∝ count_S(y) · w_k(y) · P(S \ y | other instances)`,
/// normalized per instance over the bag support.
///
/// The candidate-bag probability comes from [`candidate_bag_probs`]; the
/// count factor is the number of leave-one-out assignments that put label
/// `y` on instance `k`, the same multiplicity that reduces the
/// constant-remainder case to [`const_marginals`]. With identical weight
/// rows the marginals collapse to `count_S(y) / K`, matching the exact
/// path.
pub fn approx_marginals(
    s: &LabelMultiset,
    rows: &[Vec<f64>],
    loo_means: &[Vec<f64>],
    t: f64,
) -> Result<MarginalWeights> {
    check_rows(s, rows)?;
    if loo_means.len() != rows.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} leave-one-out means for {} rows",
            loo_means.len(),
            rows.len()
        )));
    }
    let support: Vec<usize> = s.support().collect();
    let candidates: Vec<LabelMultiset> = support
        .iter()
        .map(|&y| s.remove_label(y))
        .collect::<Result<_>>()?;

    let c = s.num_classes();
    let mut out = Vec::with_capacity(rows.len());
    for (row, loo_mean) in rows.iter().zip(loo_means) {
        let cand_probs = candidate_bag_probs(&candidates, loo_mean, t)?;
        let mut m = vec![0.0; c];
        let mut norm = 0.0;
        for (&y, &p) in support.iter().zip(&cand_probs) {
            m[y] = f64::from(s.count(y)) * row[y] * p;
            norm += m[y];
        }
        if norm < 1e-30 {
            m = s.proportions();
        } else {
            m.iter_mut().for_each(|x| *x /= norm);
        }
        out.push(m);
    }
    Ok(MarginalWeights { rows: out })
}

/// Constant-remainder marginals `m_k(y) ∝ count_S(y) · w_k(y)`. A vanishing
/// normalizer falls back to the count-proportional row.
pub fn const_marginals(s: &LabelMultiset, rows: &[Vec<f64>]) -> Result<MarginalWeights> {
    check_rows(s, rows)?;
    let counts = s.counts();
    let out = rows
        .iter()
        .map(|row| {
            let mut m: Vec<f64> = row
                .iter()
                .zip(counts)
                .map(|(&w, &n)| w * f64::from(n))
                .collect();
            let norm: f64 = m.iter().sum();
            if norm < 1e-30 {
                s.proportions()
            } else {
                m.iter_mut().for_each(|x| *x /= norm);
                m
            }
        })
        .collect();
    Ok(MarginalWeights { rows: out })
}
