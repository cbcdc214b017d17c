//! Independent verification oracles.
//!
//! Everything here re-derives its answer from first principles — exhaustive
//! enumeration over small finite worlds, direct summation, central finite
//! differences — sharing nothing with the dynamic-programming and loss paths
//! beyond primitive arithmetic. The checks:
//!
//! - the weighted-risk identity: rewriting the classification risk as an
//!   expectation over (bag, label-multiset) pairs leaves its value unchanged;
//! - the risk-gap bound: replacing the true per-instance posterior with any
//!   model posterior moves the weighted risk by at most `M * eps / |S^K|`,
//!   where `eps` is the total variation of the normalized assignment
//!   weights and `M` bounds the (clipped) loss;
//! - exactness of the tempered leave-one-out approximation at `K = 2`;
//! - analytic gradients against central finite differences.
//!
//! The [`run_all`] suite backs the `llp verify` subcommand.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::loss::{
    dllp_loss, proden_loss, rc_approx_loss, rc_const_loss, rc_loss, supervised_loss, LossKind,
};
use crate::marginals::{
    approx_marginals, candidate_bag_probs, const_marginals, default_temperature, exact_marginals,
    leave_one_out_means, partition_function, DEFAULT_STATE_CAP,
};
use crate::model::{ModelParams, ParamGrads};
use crate::multiset::LabelMultiset;

/// Hard cap on enumerated (bag, multiset, assignment) triples.
const ENUMERATION_CAP: f64 = 1e8;

/// A fully enumerable world: `m` abstract instances with base probabilities
/// and a strictly positive conditional label table, bagged `K` at a time
/// with i.i.d. draws.
#[derive(Debug, Clone)]
pub struct FiniteWorld {
    instance_probs: Vec<f64>,
    label_probs: Vec<Vec<f64>>,
    bag_size: usize,
}

impl FiniteWorld {
    pub fn new(
        instance_probs: Vec<f64>,
        label_probs: Vec<Vec<f64>>,
        bag_size: usize,
    ) -> Result<Self> {
        if instance_probs.is_empty() || bag_size == 0 {
            return Err(Error::Config("empty world".into()));
        }
        if label_probs.len() != instance_probs.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} conditional rows for {} instances",
                label_probs.len(),
                instance_probs.len()
            )));
        }
        let sum: f64 = instance_probs.iter().sum();
        if instance_probs.iter().any(|&p| p <= 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(
                "instance probabilities not a distribution".into(),
            ));
        }
        let c = label_probs[0].len();
        if c < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        for row in &label_probs {
            let sum: f64 = row.iter().sum();
            if row.len() != c || row.iter().any(|&p| p <= 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(
                    "conditional label rows must be strictly positive distributions".into(),
                ));
            }
        }
        Ok(Self {
            instance_probs,
            label_probs,
            bag_size,
        })
    }

    pub fn random(m: usize, c: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        let raw: Vec<f64> = (0..m).map(|_| rng.gen_range(0.2..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        let instance_probs = raw.into_iter().map(|p| p / sum).collect();
        let label_probs = (0..m)
            .map(|_| {
                let raw: Vec<f64> = (0..c).map(|_| rng.gen_range(0.1..1.0)).collect();
                let sum: f64 = raw.iter().sum();
                raw.into_iter().map(|p| p / sum).collect()
            })
            .collect();
        Self {
            instance_probs,
            label_probs,
            bag_size: k,
        }
    }

    pub fn num_instances(&self) -> usize {
        self.instance_probs.len()
    }

    pub fn num_classes(&self) -> usize {
        self.label_probs[0].len()
    }

    pub fn bag_size(&self) -> usize {
        self.bag_size
    }

    /// Random strictly positive perturbation of the conditional table.
    pub fn perturbed_conditionals(&self, magnitude: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        self.label_probs
            .iter()
            .map(|row| {
                let raw: Vec<f64> = row
                    .iter()
                    .map(|&p| (p + rng.gen_range(-magnitude..magnitude)).max(0.02))
                    .collect();
                let sum: f64 = raw.iter().sum();
                raw.into_iter().map(|p| p / sum).collect()
            })
            .collect()
    }

    fn guard_enumeration(&self) -> Result<()> {
        let m = self.num_instances() as f64;
        let c = self.num_classes() as f64;
        let k = self.bag_size as i32;
        let work = m.powi(k) * c.powi(k) * c.powi(k);
        if work > ENUMERATION_CAP {
            return Err(Error::EnumerationTooLarge {
                work,
                cap: ENUMERATION_CAP,
            });
        }
        Ok(())
    }
}

/// All length-`len` tuples over `0..options`, in odometer order.
fn all_tuples(options: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(options.pow(len as u32));
    let mut current = vec![0usize; len];
    loop {
        out.push(current.clone());
        let mut pos = len;
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            current[pos] += 1;
            if current[pos] < options {
                break;
            }
            current[pos] = 0;
        }
    }
}

/// All count vectors of `k` items over `c` classes (the multiset space).
fn all_count_vectors(k: u32, c: usize) -> Vec<Vec<u32>> {
    fn rec(k: u32, c: usize, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if c == 1 {
            prefix.push(k);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for n in 0..=k {
            prefix.push(n);
            rec(k - n, c - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(k, c, &mut Vec::new(), &mut out);
    out
}

fn count_vector_of(labels: &[usize], c: usize) -> Vec<u32> {
    let mut counts = vec![0u32; c];
    for &y in labels {
        counts[y] += 1;
    }
    counts
}

/// Plain cross-entropy, written independently of the production losses.
fn naive_ce(scores: &[f64], y: usize) -> f64 {
    let total: f64 = scores.iter().map(|&v| v.exp()).sum();
    total.ln() - scores[y]
}

/// Outcome of the risk-identity oracle.
#[derive(Debug, Clone, Copy)]
pub struct RiskIdentity {
    /// Direct expectation over labeled instances.
    pub supervised: f64,
    /// Exhaustive bag/multiset/assignment expectation, with the
    /// `1/(K |S^K|)` prefactor.
    pub weighted: f64,
    pub gap: f64,
}

/// Computes the classification risk two ways for an arbitrary scorer
/// (`scores[x]` holds the logits of instance `x`) and reports the gap,
/// which is zero up to rounding.
pub fn brute_force_risk_identity(world: &FiniteWorld, scores: &[Vec<f64>]) -> Result<RiskIdentity> {
    world.guard_enumeration()?;
    let m = world.num_instances();
    let c = world.num_classes();
    let k = world.bag_size;
    if scores.len() != m || scores.iter().any(|row| row.len() != c) {
        return Err(Error::ShapeMismatch(
            "scorer table has the wrong shape".into(),
        ));
    }

    let supervised: f64 = (0..m)
        .map(|x| {
            world.instance_probs[x]
                * (0..c)
                    .map(|y| world.label_probs[x][y] * naive_ce(&scores[x], y))
                    .sum::<f64>()
        })
        .sum();

    let multisets = all_count_vectors(k as u32, c);
    let space_size = multisets.len() as f64;
    let assignments = all_tuples(c, k);
    let mut weighted = 0.0;
    for bag in all_tuples(m, k) {
        let p_bag: f64 = bag.iter().map(|&x| world.instance_probs[x]).product();
        // Joint label weights and total losses for every assignment.
        let per_assignment: Vec<(Vec<u32>, f64, f64)> = assignments
            .iter()
            .map(|labels| {
                let p: f64 = labels
                    .iter()
                    .zip(&bag)
                    .map(|(&y, &x)| world.label_probs[x][y])
                    .product();
                let loss: f64 = labels
                    .iter()
                    .zip(&bag)
                    .map(|(&y, &x)| naive_ce(&scores[x], y))
                    .sum();
                (count_vector_of(labels, c), p, loss)
            })
            .collect();
        for s in &multisets {
            let p_s: f64 = per_assignment
                .iter()
                .filter(|(key, _, _)| key == s)
                .map(|&(_, p, _)| p)
                .sum();
            if p_s == 0.0 {
                continue;
            }
            let inner: f64 = per_assignment
                .iter()
                .map(|&(_, p, loss)| p / p_s * loss)
                .sum();
            weighted += p_bag * p_s * inner;
        }
    }
    weighted /= k as f64 * space_size;
    Ok(RiskIdentity {
        supervised,
        weighted,
        gap: (supervised - weighted).abs(),
    })
}

/// Outcome of the risk-gap bound check.
#[derive(Debug, Clone, Copy)]
pub struct RiskGapBound {
    /// |weighted risk under the true posterior - under the model posterior|.
    pub lhs: f64,
    /// `M * eps / |S^K|`.
    pub rhs: f64,
    pub epsilon: f64,
    pub pass: bool,
}

/// Checks the posterior-perturbation bound by full enumeration. Both risks
/// use assignment weights normalized over the label sets consistent with
/// each multiset (the only form in which the bound is a theorem), the loss
/// is clipped at `loss_bound`, and the expectation is always under the true
/// world.
pub fn risk_gap_bound_check(
    world: &FiniteWorld,
    model_conditionals: &[Vec<f64>],
    scores: &[Vec<f64>],
    loss_bound: f64,
) -> Result<RiskGapBound> {
    world.guard_enumeration()?;
    let m = world.num_instances();
    let c = world.num_classes();
    let k = world.bag_size;
    if model_conditionals.len() != m || model_conditionals.iter().any(|r| r.len() != c) {
        return Err(Error::ShapeMismatch(
            "conditional table has the wrong shape".into(),
        ));
    }
    if model_conditionals
        .iter()
        .any(|r| r.iter().any(|&p| p <= 0.0))
    {
        return Err(Error::Config(
            "model conditionals must be strictly positive".into(),
        ));
    }

    let multisets = all_count_vectors(k as u32, c);
    let space_size = multisets.len() as f64;
    let assignments = all_tuples(c, k);
    let clip = |v: f64| v.min(loss_bound);

    let mut risk_true = 0.0;
    let mut risk_model = 0.0;
    let mut epsilon = 0.0;
    for bag in all_tuples(m, k) {
        let p_bag: f64 = bag.iter().map(|&x| world.instance_probs[x]).product();
        let per_assignment: Vec<(Vec<u32>, f64, f64, f64)> = assignments
            .iter()
            .map(|labels| {
                let p: f64 = labels
                    .iter()
                    .zip(&bag)
                    .map(|(&y, &x)| world.label_probs[x][y])
                    .product();
                let q: f64 = labels
                    .iter()
                    .zip(&bag)
                    .map(|(&y, &x)| model_conditionals[x][y])
                    .product();
                let loss: f64 = labels
                    .iter()
                    .zip(&bag)
                    .map(|(&y, &x)| clip(naive_ce(&scores[x], y)))
                    .sum();
                (count_vector_of(labels, c), p, q, loss)
            })
            .collect();
        for s in &multisets {
            let members: Vec<&(Vec<u32>, f64, f64, f64)> = per_assignment
                .iter()
                .filter(|(key, _, _, _)| key == s)
                .collect();
            let p_s: f64 = members.iter().map(|&&(_, p, _, _)| p).sum();
            let q_s: f64 = members.iter().map(|&&(_, _, q, _)| q).sum();
            if p_s == 0.0 {
                continue;
            }
            let mut true_term = 0.0;
            let mut model_term = 0.0;
            let mut tv = 0.0;
            for &&(_, p, q, loss) in &members {
                let p_norm = p / p_s;
                let q_norm = q / q_s;
                true_term += p_norm * loss;
                model_term += q_norm * loss;
                tv += (p_norm - q_norm).abs();
            }
            risk_true += p_bag * p_s * true_term;
            risk_model += p_bag * p_s * model_term;
            epsilon += p_bag * p_s * tv;
        }
    }
    let norm = k as f64 * space_size;
    risk_true /= norm;
    risk_model /= norm;
    let lhs = (risk_true - risk_model).abs();
    let rhs = loss_bound * epsilon / space_size;
    Ok(RiskGapBound {
        lhs,
        rhs,
        epsilon,
        pass: lhs <= rhs + 1e-12,
    })
}

/// Central finite differences of `loss` around `params`, compared with the
/// provided analytic gradient. Returns the maximum relative error over
/// coordinates whose analytic magnitude exceeds 1e-8.
pub fn finite_difference_check(
    loss: impl Fn(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    step: f64,
) -> f64 {
    let mut max_rel: f64 = 0.0;
    let mut point = params.to_vec();
    for i in 0..params.len() {
        point[i] = params[i] + step;
        let up = loss(&point);
        point[i] = params[i] - step;
        let down = loss(&point);
        point[i] = params[i];
        let fd = (up - down) / (2.0 * step);
        if analytic[i].abs() > 1e-8 {
            max_rel = max_rel.max((fd - analytic[i]).abs() / analytic[i].abs());
        }
    }
    max_rel
}

/// Maximum absolute difference between approximate and exact marginals over
/// random two-instance bags, at the given temperature.
pub fn k2_exactness_check(trials: usize, temperature: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_diff: f64 = 0.0;
    for _ in 0..trials {
        let c = rng.gen_range(2..=6);
        let labels: Vec<usize> = (0..2).map(|_| rng.gen_range(0..c)).collect();
        let s = LabelMultiset::from_labels(&labels, c).unwrap();
        let rows: Vec<Vec<f64>> = (0..2)
            .map(|_| {
                let raw: Vec<f64> = (0..c).map(|_| rng.gen::<f64>() + 0.01).collect();
                let sum: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / sum).collect()
            })
            .collect();
        let exact = exact_marginals(&s, &rows, DEFAULT_STATE_CAP).unwrap();
        let loo = leave_one_out_means(&rows);
        let approx = approx_marginals(&s, &rows, &loo, temperature).unwrap();
        for (er, ar) in exact.rows().iter().zip(approx.rows()) {
            for (&e, &a) in er.iter().zip(ar) {
                max_diff = max_diff.max((e - a).abs());
            }
        }
    }
    max_diff
}

/// One named verification with a human-readable measurement.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn measured(name: &'static str, pass: bool, detail: String) -> Self {
        Self { name, pass, detail }
    }
}

fn random_multiset(rng: &mut ChaCha8Rng, k: usize, c: usize) -> LabelMultiset {
    let labels: Vec<usize> = (0..k).map(|_| rng.gen_range(0..c)).collect();
    LabelMultiset::from_labels(&labels, c).unwrap()
}

fn random_rows(rng: &mut ChaCha8Rng, k: usize, c: usize, floor: f64) -> Vec<Vec<f64>> {
    (0..k)
        .map(|_| {
            let raw: Vec<f64> = (0..c).map(|_| rng.gen::<f64>() + floor).collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / sum).collect()
        })
        .collect()
}

/// Partition function and marginals by filtering every label tuple, written
/// with no reference to the production enumeration or DP.
fn oracle_partition_and_marginals(s: &LabelMultiset, rows: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
    let k = s.size();
    let c = s.num_classes();
    let key: Vec<u32> = s.counts().to_vec();
    let mut z = 0.0;
    let mut marginals = vec![vec![0.0; c]; k];
    for labels in all_tuples(c, k) {
        if count_vector_of(&labels, c) != key {
            continue;
        }
        let w: f64 = labels
            .iter()
            .enumerate()
            .map(|(l, &y)| rows[l][y])
            .product();
        z += w;
        for (l, &y) in labels.iter().enumerate() {
            marginals[l][y] += w;
        }
    }
    for row in &mut marginals {
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    (z, marginals)
}

/// DP partition function and marginals against exhaustive enumeration.
pub fn check_dp_vs_enumeration(cases: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let k = rng.gen_range(1..=6);
        let c = rng.gen_range(2..=4);
        let s = random_multiset(&mut rng, k, c);
        let rows = random_rows(&mut rng, k, c, 0.01);
        let (z_oracle, m_oracle) = oracle_partition_and_marginals(&s, &rows);
        let z_dp = partition_function(&s, &rows, DEFAULT_STATE_CAP).unwrap();
        worst = worst.max((z_dp - z_oracle).abs() / z_oracle.abs());
        let m_dp = exact_marginals(&s, &rows, DEFAULT_STATE_CAP).unwrap();
        for (dr, or) in m_dp.rows().iter().zip(&m_oracle) {
            for (&d, &o) in dr.iter().zip(or) {
                let scale = o.abs().max(1.0);
                worst = worst.max((d - o).abs() / scale);
            }
        }
    }
    CheckOutcome::measured(
        "dp-vs-enumeration",
        worst <= 1e-10,
        format!("max relative difference {worst:.3e} over {cases} cases (tolerance 1e-10)"),
    )
}

/// Candidate-bag probabilities sum to one for arbitrary temperatures.
pub fn check_candidate_prob_sums(cases: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let k = rng.gen_range(1..=10);
        let c = rng.gen_range(2..=6);
        let s = random_multiset(&mut rng, k, c);
        let candidates: Vec<_> = s.support().map(|y| s.remove_label(y).unwrap()).collect();
        let mean = random_rows(&mut rng, 1, c, 0.0).pop().unwrap();
        let t = 10f64.powf(rng.gen_range(-3.0..3.0));
        let probs = candidate_bag_probs(&candidates, &mean, t).unwrap();
        worst = worst.max((probs.iter().sum::<f64>() - 1.0).abs());
    }
    CheckOutcome::measured(
        "candidate-probability-sums",
        worst <= 1e-12,
        format!("max |sum - 1| = {worst:.3e} over {cases} cases (tolerance 1e-12)"),
    )
}

/// The approximation is exact at K = 2 with temperature 1, and measurably
/// inexact at other temperatures.
pub fn check_k2_exactness(trials: usize, seed: u64) -> Vec<CheckOutcome> {
    let exact = k2_exactness_check(trials, 1.0, seed);
    let control = k2_exactness_check(trials.min(100), 2.0, seed);
    vec![
        CheckOutcome::measured(
            "k2-exactness",
            exact <= 1e-12,
            format!("max |approx - exact| = {exact:.3e} over {trials} trials (tolerance 1e-12)"),
        ),
        CheckOutcome::measured(
            "k2-negative-control",
            control > 1e-6,
            format!("temperature 2 deviates by {control:.3e} (must exceed 1e-6)"),
        ),
    ]
}

/// Every marginal route emits rows that sum to one and carry zero mass off
/// the bag support.
pub fn check_marginal_normalization(cases: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_sum: f64 = 0.0;
    let mut off_support: f64 = 0.0;
    for _ in 0..cases {
        let k = rng.gen_range(1..=8);
        let c = rng.gen_range(2..=5);
        let s = random_multiset(&mut rng, k, c);
        let rows = random_rows(&mut rng, k, c, 0.0);
        let loo = leave_one_out_means(&rows);
        let t = default_temperature(k) * 10f64.powf(rng.gen_range(-2.0..2.0));
        let exact = exact_marginals(&s, &rows, DEFAULT_STATE_CAP).unwrap();
        let approx = approx_marginals(&s, &rows, &loo, t).unwrap();
        let constant = const_marginals(&s, &rows).unwrap();
        for m in [exact.rows(), approx.rows(), constant.rows()] {
            for row in m {
                worst_sum = worst_sum.max((row.iter().sum::<f64>() - 1.0).abs());
                for (class, &x) in row.iter().enumerate() {
                    if !s.contains(class) {
                        off_support = off_support.max(x.abs());
                    }
                }
            }
        }
    }
    CheckOutcome::measured(
        "marginal-row-normalization",
        worst_sum <= 1e-9 && off_support == 0.0,
        format!(
            "max |row sum - 1| = {worst_sum:.3e} (tolerance 1e-9), \
             max off-support mass {off_support:.1e} over {cases} cases"
        ),
    )
}

/// Identical weight rows force count-proportional marginals.
pub fn check_symmetric_rows(cases: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let k = rng.gen_range(1..=7);
        let c = rng.gen_range(2..=5);
        let s = random_multiset(&mut rng, k, c);
        let shared = random_rows(&mut rng, 1, c, 0.05).pop().unwrap();
        let rows = vec![shared; k];
        let m = exact_marginals(&s, &rows, DEFAULT_STATE_CAP).unwrap();
        let expect = s.proportions();
        for row in m.rows() {
            for (&a, &b) in row.iter().zip(&expect) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    CheckOutcome::measured(
        "symmetric-rows-marginals",
        worst <= 1e-12,
        format!("max |marginal - count/K| = {worst:.3e} over {cases} cases (tolerance 1e-12)"),
    )
}

/// Risk identity on the canonical small world with random scorers.
pub fn check_risk_identity(scorers: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let world = FiniteWorld::random(3, 2, 2, &mut rng);
    let mut worst: f64 = 0.0;
    for _ in 0..scorers {
        let scores: Vec<Vec<f64>> = (0..world.num_instances())
            .map(|_| {
                (0..world.num_classes())
                    .map(|_| rng.gen_range(-3.0..3.0))
                    .collect()
            })
            .collect();
        let identity = brute_force_risk_identity(&world, &scores).unwrap();
        worst = worst.max(identity.gap);
    }
    CheckOutcome::measured(
        "risk-identity",
        worst <= 1e-10,
        format!("max |R - R_weighted| = {worst:.3e} over {scorers} scorers (tolerance 1e-10)"),
    )
}

/// Risk-gap bound over random posterior perturbations plus an adversarial
/// mass flip.
pub fn check_risk_gap_bound(perturbations: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let world = FiniteWorld::random(3, 2, 2, &mut rng);
    let scores: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let loss_bound = 20.0;
    let mut violations = 0usize;
    let mut min_slack = f64::INFINITY;
    let mut run = |q: Vec<Vec<f64>>| {
        let bound = risk_gap_bound_check(&world, &q, &scores, loss_bound).unwrap();
        if !bound.pass {
            violations += 1;
        }
        min_slack = min_slack.min(bound.rhs - bound.lhs);
    };
    for _ in 0..perturbations {
        let magnitude = rng.gen_range(0.01..0.5);
        let q = world.perturbed_conditionals(magnitude, &mut rng);
        run(q);
    }
    // Adversarial: reverse every conditional row.
    let flipped: Vec<Vec<f64>> = world
        .label_probs
        .iter()
        .map(|row| row.iter().rev().cloned().collect())
        .collect();
    run(flipped);
    CheckOutcome::measured(
        "risk-gap-bound",
        violations == 0,
        format!(
            "{violations} violations over {} trials, min slack {min_slack:.3e}",
            perturbations + 1
        ),
    )
}

/// Composed loss-through-model gradients against finite differences, for
/// every loss kind on both model shapes.
pub fn check_gradient_finite_differences(seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut worst_case = String::new();
    let kinds = [
        LossKind::Rc,
        LossKind::RcApprox,
        LossKind::RcConst,
        LossKind::Proden,
        LossKind::Dllp,
        LossKind::Supervised,
    ];
    for mlp in [false, true] {
        let d = 5;
        let c = 3;
        let k = 3;
        let model = if mlp {
            ModelParams::mlp(d, &[6, 4], c, &mut rng)
        } else {
            ModelParams::linear(d, c, &mut rng)
        };
        let xs: Vec<Vec<f32>> = (0..k)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let labels: Vec<usize> = (0..k).map(|_| rng.gen_range(0..c)).collect();
        let s = LabelMultiset::from_labels(&labels, c).unwrap();
        let rows = random_rows(&mut rng, k, c, 0.05);
        let rows: Vec<Vec<f64>> = rows
            .into_iter()
            .map(|r| crate::weights::renormalize_over_support(&r, &s).unwrap())
            .collect();
        let t = default_temperature(k);

        for kind in kinds {
            let apply = |m: &ModelParams| -> f64 {
                let logits: Vec<Vec<f64>> = xs.iter().map(|x| m.logits(x).unwrap()).collect();
                match kind {
                    LossKind::Rc => rc_loss(&s, &rows, &logits, DEFAULT_STATE_CAP).unwrap().loss,
                    LossKind::RcApprox => rc_approx_loss(&s, &rows, &logits, t).unwrap().loss,
                    LossKind::RcConst => rc_const_loss(&s, &rows, &logits).unwrap().loss,
                    LossKind::Proden => proden_loss(&rows, &logits).unwrap().loss,
                    LossKind::Dllp => dllp_loss(&s, &logits).unwrap().loss,
                    LossKind::Supervised => supervised_loss(&labels, &logits).unwrap().loss,
                }
            };
            // Analytic gradient through the model.
            let mut grads = ParamGrads::zeros_like(&model);
            let mut logits = Vec::with_capacity(k);
            let mut caches = Vec::with_capacity(k);
            for x in &xs {
                let (l, cache) = model.forward(x).unwrap();
                logits.push(l);
                caches.push(cache);
            }
            let result = match kind {
                LossKind::Rc => rc_loss(&s, &rows, &logits, DEFAULT_STATE_CAP).unwrap(),
                LossKind::RcApprox => rc_approx_loss(&s, &rows, &logits, t).unwrap(),
                LossKind::RcConst => rc_const_loss(&s, &rows, &logits).unwrap(),
                LossKind::Proden => proden_loss(&rows, &logits).unwrap(),
                LossKind::Dllp => dllp_loss(&s, &logits).unwrap(),
                LossKind::Supervised => supervised_loss(&labels, &logits).unwrap(),
            };
            for (cache, dlogits) in caches.iter().zip(&result.logit_grads) {
                model.backward_into(cache, dlogits, &mut grads).unwrap();
            }
            let mut analytic = Vec::new();
            for l in &grads.layers {
                analytic.extend_from_slice(&l.weight);
                analytic.extend_from_slice(&l.bias);
            }
            let flat = model.flatten();
            let loss_at = |p: &[f64]| {
                let mut m = model.clone();
                m.assign_flat(p).unwrap();
                apply(&m)
            };
            let rel = finite_difference_check(loss_at, &flat, &analytic, 1e-6);
            if rel > worst {
                worst = rel;
                worst_case = format!("{kind:?} on {}", if mlp { "mlp" } else { "linear" });
            }
        }
    }
    CheckOutcome::measured(
        "gradient-finite-differences",
        worst <= 1e-5,
        format!("max relative error {worst:.3e} ({worst_case}), tolerance 1e-5"),
    )
}

/// The full oracle suite behind `llp verify`.
pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    let mut outcomes = vec![
        check_dp_vs_enumeration(200, seed),
        check_candidate_prob_sums(500, seed.wrapping_add(1)),
        check_marginal_normalization(200, seed.wrapping_add(7)),
    ];
    outcomes.extend(check_k2_exactness(1000, seed.wrapping_add(2)));
    outcomes.push(check_symmetric_rows(100, seed.wrapping_add(3)));
    outcomes.push(check_risk_identity(50, seed.wrapping_add(4)));
    outcomes.push(check_risk_gap_bound(100, seed.wrapping_add(5)));
    outcomes.push(check_gradient_finite_differences(seed.wrapping_add(6)));
    outcomes
}
