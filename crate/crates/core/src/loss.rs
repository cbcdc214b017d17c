//! Per-bag training losses and their logit gradients.
//!
//! Every weighted method reduces to the same shape: a marginal row `m_k`
//! per instance feeding `(1/K) sum_k sum_y m_k(y) * ce(logits_k, y)`, whose
//! logit gradient is `(softmax(logits_k) - m_k) / K`. The methods differ
//! only in how the marginals are produced. Marginal rows are constants
//! during backpropagation; no gradient flows through them.

use crate::error::{Error, Result};
use crate::marginals::{
    approx_marginals, const_marginals, exact_marginals, leave_one_out_means, LOG_CLAMP,
};
use crate::model::{log_sum_exp, softmax};
use crate::multiset::LabelMultiset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Rc,
    RcApprox,
    RcConst,
    Proden,
    Dllp,
    Supervised,
}

/// Loss value and per-instance logit gradients for one bag.
#[derive(Debug, Clone)]
pub struct BagLossResult {
    pub loss: f64,
    pub logit_grads: Vec<Vec<f64>>,
    pub kind: LossKind,
}

fn check_logits(logits: &[Vec<f64>], num_classes: usize) -> Result<()> {
    if logits.is_empty() {
        return Err(Error::ShapeMismatch("empty bag".into()));
    }
    for (k, row) in logits.iter().enumerate() {
        if row.len() != num_classes {
            return Err(Error::ShapeMismatch(format!(
                "logit row {k} has {} entries, expected {num_classes}",
                row.len()
            )));
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::ShapeMismatch(format!("logit row {k} is not finite")));
        }
    }
    Ok(())
}

/// `(1/K) sum_k sum_y m_k(y) ce(logits_k, y)` with softmax cross-entropy,
/// marginals held constant.
pub fn weighted_instance_loss(
    logits: &[Vec<f64>],
    marginal_rows: &[Vec<f64>],
    kind: LossKind,
) -> Result<BagLossResult> {
    let k = logits.len();
    if marginal_rows.len() != k {
        return Err(Error::ShapeMismatch(format!(
            "{} marginal rows for {k} logit rows",
            marginal_rows.len()
        )));
    }
    let c = marginal_rows.first().map_or(0, Vec::len);
    check_logits(logits, c)?;
    for (i, m) in marginal_rows.iter().enumerate() {
        let sum: f64 = m.iter().sum();
        if m.iter().any(|&x| !x.is_finite() || x < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::ShapeMismatch(format!(
                "marginal row {i} is not a distribution (sum {sum})"
            )));
        }
    }

    let k_f = k as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(k);
    for (row, m) in logits.iter().zip(marginal_rows) {
        let lse = log_sum_exp(row);
        let weighted_logit: f64 = m.iter().zip(row).map(|(&w, &l)| w * l).sum();
        loss += (lse - weighted_logit) / k_f;
        let probs = softmax(row);
        grads.push(probs.iter().zip(m).map(|(&p, &w)| (p - w) / k_f).collect());
    }
    Ok(BagLossResult {
        loss,
        logit_grads: grads,
        kind,
    })
}

/// Exact joint-assignment marginals. A vanished partition function falls
/// back to count-proportional rows; an infeasible state space propagates so
/// the harness can abort rather than silently degrade.
pub fn rc_loss(
    s: &LabelMultiset,
    weight_rows: &[Vec<f64>],
    logits: &[Vec<f64>],
    state_cap: u128,
) -> Result<BagLossResult> {
    let rows = match exact_marginals(s, weight_rows, state_cap) {
        Ok(m) => m.into_rows(),
        Err(Error::ZeroPartition) => {
            log::warn!("partition function vanished; using count-proportional rows");
            vec![s.proportions(); s.size()]
        }
        Err(e) => return Err(e),
    };
    weighted_instance_loss(logits, &rows, LossKind::Rc)
}

/// Tempered leave-one-out approximation of the exact marginals.
pub fn rc_approx_loss(
    s: &LabelMultiset,
    weight_rows: &[Vec<f64>],
    logits: &[Vec<f64>],
    temperature: f64,
) -> Result<BagLossResult> {
    let loo = leave_one_out_means(weight_rows);
    let m = approx_marginals(s, weight_rows, &loo, temperature)?;
    weighted_instance_loss(logits, m.rows(), LossKind::RcApprox)
}

/// Constant-remainder marginals `m_k(y) ∝ count_S(y) w_k(y)`.
pub fn rc_const_loss(
    s: &LabelMultiset,
    weight_rows: &[Vec<f64>],
    logits: &[Vec<f64>],
) -> Result<BagLossResult> {
    let m = const_marginals(s, weight_rows)?;
    weighted_instance_loss(logits, m.rows(), LossKind::RcConst)
}

/// Per-instance weights with no bag coupling: the table rows are the
/// marginals.
pub fn proden_loss(weight_rows: &[Vec<f64>], logits: &[Vec<f64>]) -> Result<BagLossResult> {
    weighted_instance_loss(logits, weight_rows, LossKind::Proden)
}

/// Bag-level baseline: cross-entropy between the bag's label proportions and
/// the mean predicted distribution. The gradient reaches every instance
/// through the mean.
pub fn dllp_loss(s: &LabelMultiset, logits: &[Vec<f64>]) -> Result<BagLossResult> {
    let c = s.num_classes();
    check_logits(logits, c)?;
    if logits.len() != s.size() {
        return Err(Error::ShapeMismatch(format!(
            "{} logit rows for a bag of size {}",
            logits.len(),
            s.size()
        )));
    }
    let k = logits.len();
    let inv_k = 1.0 / k as f64;
    let probs: Vec<Vec<f64>> = logits.iter().map(|row| softmax(row)).collect();
    let mut mean = vec![0.0; c];
    for p in &probs {
        for (m, &x) in mean.iter_mut().zip(p) {
            *m += x * inv_k;
        }
    }
    let target = s.proportions();
    let mut loss = 0.0;
    // d loss / d mean; zero where the clamp is active (loss is flat there).
    let mut dmean = vec![0.0; c];
    for ((&t, &m), g) in target.iter().zip(&mean).zip(dmean.iter_mut()) {
        loss -= t * m.max(LOG_CLAMP).ln();
        if t > 0.0 && m > LOG_CLAMP {
            *g = -t / m;
        }
    }
    let grads = probs
        .iter()
        .map(|p| {
            let inner: f64 = dmean.iter().zip(p).map(|(&g, &x)| g * x).sum();
            p.iter()
                .zip(&dmean)
                .map(|(&x, &g)| x * (g - inner) * inv_k)
                .collect()
        })
        .collect();
    Ok(BagLossResult {
        loss,
        logit_grads: grads,
        kind: LossKind::Dllp,
    })
}

/// Ordinary supervised softmax cross-entropy, averaged over the bag.
pub fn supervised_loss(labels: &[usize], logits: &[Vec<f64>]) -> Result<BagLossResult> {
    let c = logits.first().map_or(0, Vec::len);
    check_logits(logits, c)?;
    if labels.len() != logits.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.len()
        )));
    }
    let k_f = logits.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (&y, row) in labels.iter().zip(logits) {
        if y >= c {
            return Err(Error::LabelOutOfRange {
                label: y,
                num_classes: c,
            });
        }
        loss += (log_sum_exp(row) - row[y]) / k_f;
        let mut g = softmax(row);
        g[y] -= 1.0;
        g.iter_mut().for_each(|x| *x /= k_f);
        grads.push(g);
    }
    Ok(BagLossResult {
        loss,
        logit_grads: grads,
        kind: LossKind::Supervised,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marginals::default_temperature;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn ms(counts: &[u32]) -> LabelMultiset {
        LabelMultiset::new(counts.to_vec()).unwrap()
    }

    fn random_logits(rng: &mut ChaCha8Rng, k: usize, c: usize) -> Vec<Vec<f64>> {
        (0..k)
            .map(|_| (0..c).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect()
    }

    fn random_rows(rng: &mut ChaCha8Rng, k: usize, c: usize) -> Vec<Vec<f64>> {
        (0..k)
            .map(|_| {
                let raw: Vec<f64> = (0..c).map(|_| rng.gen::<f64>() + 0.02).collect();
                let sum: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / sum).collect()
            })
            .collect()
    }

    /// Central finite differences of `f` over the flattened logits.
    fn fd_logit_grads(
        f: impl Fn(&[Vec<f64>]) -> f64,
        logits: &[Vec<f64>],
        h: f64,
    ) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(logits.len());
        for k in 0..logits.len() {
            let mut row = Vec::with_capacity(logits[k].len());
            for c in 0..logits[k].len() {
                let mut plus = logits.to_vec();
                plus[k][c] += h;
                let mut minus = logits.to_vec();
                minus[k][c] -= h;
                row.push((f(&plus) - f(&minus)) / (2.0 * h));
            }
            out.push(row);
        }
        out
    }

    fn assert_grads_close(analytic: &[Vec<f64>], fd: &[Vec<f64>], tol: f64) {
        for (ar, fr) in analytic.iter().zip(fd) {
            for (&a, &f) in ar.iter().zip(fr) {
                if a.abs() > 1e-8 {
                    assert!((a - f).abs() / a.abs() < tol, "analytic {a} vs fd {f}");
                } else {
                    assert!((a - f).abs() < 1e-6, "analytic {a} vs fd {f}");
                }
            }
        }
    }

    #[test]
    fn one_hot_marginals_reduce_to_supervised_ce() {
        let logits = vec![vec![0.4, -0.3, 1.2]];
        let m = vec![vec![0.0, 1.0, 0.0]];
        let r = weighted_instance_loss(&logits, &m, LossKind::Rc).unwrap();
        let expect = log_sum_exp(&logits[0]) - logits[0][1];
        assert!((r.loss - expect).abs() < 1e-15);
    }

    #[test]
    fn uniform_logits_cost_log_c() {
        let logits = vec![vec![0.0; 4]; 2];
        let m = vec![vec![0.25; 4], vec![0.7, 0.1, 0.1, 0.1]];
        let r = weighted_instance_loss(&logits, &m, LossKind::Rc).unwrap();
        assert!((r.loss - 4.0f64.ln()).abs() < 1e-12);

        let s = supervised_loss(&[2, 0], &logits).unwrap();
        assert!((s.loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn weighted_gradient_is_softmax_minus_marginal_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let logits = random_logits(&mut rng, 3, 4);
        let m = random_rows(&mut rng, 3, 4);
        let r = weighted_instance_loss(&logits, &m, LossKind::Rc).unwrap();
        for k in 0..3 {
            let probs = softmax(&logits[k]);
            for c in 0..4 {
                let expect = (probs[c] - m[k][c]) / 3.0;
                assert_eq!(r.logit_grads[k][c], expect);
            }
        }
    }

    #[test]
    fn weighted_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logits = random_logits(&mut rng, 3, 4);
        let m = random_rows(&mut rng, 3, 4);
        let r = weighted_instance_loss(&logits, &m, LossKind::Rc).unwrap();
        let fd = fd_logit_grads(
            |l| weighted_instance_loss(l, &m, LossKind::Rc).unwrap().loss,
            &logits,
            1e-6,
        );
        assert_grads_close(&r.logit_grads, &fd, 1e-5);
    }

    #[test]
    fn rc_collapses_to_supervised_on_forced_bags() {
        // K = 1.
        let s = ms(&[0, 1, 0]);
        let logits = vec![vec![0.2, -1.0, 0.5]];
        let rows = vec![vec![0.0, 1.0, 0.0]];
        let rc = rc_loss(&s, &rows, &logits, 1 << 20).unwrap();
        let sup = supervised_loss(&[1], &logits).unwrap();
        assert_eq!(rc.loss, sup.loss);
        assert_eq!(rc.logit_grads, sup.logit_grads);

        // Pure bag of two.
        let s = ms(&[2, 0]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let logits = random_logits(&mut rng, 2, 2);
        let rows = vec![vec![1.0, 0.0]; 2];
        let rc = rc_loss(&s, &rows, &logits, 1 << 20).unwrap();
        let sup = supervised_loss(&[0, 0], &logits).unwrap();
        assert!((rc.loss - sup.loss).abs() < 1e-15);
    }

    #[test]
    fn rc_two_instance_mixed_bag_matches_enumeration() {
        let s = ms(&[1, 1]);
        let rows = vec![vec![0.9, 0.1], vec![0.5, 0.5]];
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let logits = random_logits(&mut rng, 2, 2);
        let r = rc_loss(&s, &rows, &logits, 1 << 20).unwrap();
        let ce = |k: usize, y: usize| log_sum_exp(&logits[k]) - logits[k][y];
        // Joint weights: (a,b) -> 0.45, (b,a) -> 0.05; normalized 0.9 / 0.1.
        let expect = 0.5 * (0.9 * ce(0, 0) + 0.1 * ce(0, 1) + 0.1 * ce(1, 0) + 0.9 * ce(1, 1));
        assert!((r.loss - expect).abs() < 1e-12);
    }

    #[test]
    fn rc_approx_equals_rc_at_k2() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..300 {
            let c = rng.gen_range(2..=4);
            let labels: Vec<usize> = (0..2).map(|_| rng.gen_range(0..c)).collect();
            let s = LabelMultiset::from_labels(&labels, c).unwrap();
            let rows = random_rows(&mut rng, 2, c);
            let logits = random_logits(&mut rng, 2, c);
            let exact = rc_loss(&s, &rows, &logits, 1 << 20).unwrap();
            let approx = rc_approx_loss(&s, &rows, &logits, 1.0).unwrap();
            assert!((exact.loss - approx.loss).abs() < 1e-12);
            for (er, ar) in exact.logit_grads.iter().zip(&approx.logit_grads) {
                for (&e, &a) in er.iter().zip(ar) {
                    assert!((e - a).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rc_approx_gradient_passes_finite_differences_at_k8() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let c = 4;
        let labels: Vec<usize> = (0..8).map(|_| rng.gen_range(0..c)).collect();
        let s = LabelMultiset::from_labels(&labels, c).unwrap();
        let rows = random_rows(&mut rng, 8, c);
        let logits = random_logits(&mut rng, 8, c);
        let t = default_temperature(8);
        let r = rc_approx_loss(&s, &rows, &logits, t).unwrap();
        assert!(r.loss.is_finite() && r.loss >= 0.0);
        let fd = fd_logit_grads(
            |l| rc_approx_loss(&s, &rows, l, t).unwrap().loss,
            &logits,
            1e-6,
        );
        assert_grads_close(&r.logit_grads, &fd, 1e-5);
    }

    #[test]
    fn rc_const_known_cases() {
        // Distinct labels: identical to proden.
        let s = ms(&[1, 1, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let rows = random_rows(&mut rng, 3, 3);
        let logits = random_logits(&mut rng, 3, 3);
        let konst = rc_const_loss(&s, &rows, &logits).unwrap();
        let prod = proden_loss(&rows, &logits).unwrap();
        assert!((konst.loss - prod.loss).abs() < 1e-12);

        // Duplicate counts weight the row.
        let s = ms(&[2, 1]);
        let rows = vec![vec![0.5, 0.5]; 3];
        let logits = random_logits(&mut rng, 3, 2);
        let konst = rc_const_loss(&s, &rows, &logits).unwrap();
        let expect_rows = vec![vec![2.0 / 3.0, 1.0 / 3.0]; 3];
        let direct = weighted_instance_loss(&logits, &expect_rows, LossKind::RcConst).unwrap();
        assert!((konst.loss - direct.loss).abs() < 1e-12);
    }

    #[test]
    fn proden_uniform_support_pair_averages_the_two_ce() {
        let logits = vec![vec![0.3, -0.7, 0.1]];
        let rows = vec![vec![0.5, 0.5, 0.0]];
        let r = proden_loss(&rows, &logits).unwrap();
        let ce = |y: usize| log_sum_exp(&logits[0]) - logits[0][y];
        assert!((r.loss - 0.5 * (ce(0) + ce(1))).abs() < 1e-15);

        let fd = fd_logit_grads(|l| proden_loss(&rows, l).unwrap().loss, &logits, 1e-6);
        assert_grads_close(&r.logit_grads, &fd, 1e-5);
    }

    #[test]
    fn dllp_closed_forms() {
        // Mean prediction equals the label fraction: loss is its entropy.
        let s = ms(&[1, 1]);
        let logits = vec![vec![0.7, 0.7], vec![-0.2, -0.2]];
        let r = dllp_loss(&s, &logits).unwrap();
        assert!((r.loss - std::f64::consts::LN_2).abs() < 1e-12);

        // One-hot fraction against mean probability 0.8.
        let s = ms(&[1, 0]);
        let logits = vec![vec![0.8f64.ln(), 0.2f64.ln()]];
        let r = dllp_loss(&s, &logits).unwrap();
        assert!((r.loss + 0.8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dllp_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let c = 4;
        let labels: Vec<usize> = (0..5).map(|_| rng.gen_range(0..c)).collect();
        let s = LabelMultiset::from_labels(&labels, c).unwrap();
        let logits = random_logits(&mut rng, 5, c);
        let r = dllp_loss(&s, &logits).unwrap();
        let fd = fd_logit_grads(|l| dllp_loss(&s, l).unwrap().loss, &logits, 1e-6);
        assert_grads_close(&r.logit_grads, &fd, 1e-5);
    }

    #[test]
    fn dllp_loss_dominates_the_proportion_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let c = rng.gen_range(2..=5);
            let k = rng.gen_range(1..=6);
            let labels: Vec<usize> = (0..k).map(|_| rng.gen_range(0..c)).collect();
            let s = LabelMultiset::from_labels(&labels, c).unwrap();
            let logits = random_logits(&mut rng, k, c);
            let r = dllp_loss(&s, &logits).unwrap();
            let entropy: f64 = s
                .proportions()
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| -p * p.ln())
                .sum();
            assert!(r.loss - entropy >= -1e-12);
        }
    }

    #[test]
    fn all_methods_coincide_on_pure_bags() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let s = ms(&[0, 3, 0, 0]);
        let logits = random_logits(&mut rng, 3, 4);
        let rows = vec![vec![0.0, 1.0, 0.0, 0.0]; 3];
        let sup = supervised_loss(&[1, 1, 1], &logits).unwrap();
        let variants = [
            rc_loss(&s, &rows, &logits, 1 << 20).unwrap(),
            rc_approx_loss(&s, &rows, &logits, default_temperature(3)).unwrap(),
            rc_const_loss(&s, &rows, &logits).unwrap(),
            proden_loss(&rows, &logits).unwrap(),
        ];
        for v in &variants {
            assert!((v.loss - sup.loss).abs() < 1e-12, "{:?}", v.kind);
        }
    }

    #[test]
    fn supervised_loss_shrinks_with_margin() {
        let mut last = f64::INFINITY;
        for margin in [0.0, 1.0, 5.0, 20.0] {
            let logits = vec![vec![margin, 0.0]];
            let r = supervised_loss(&[0], &logits).unwrap();
            assert!(r.loss <= last);
            last = r.loss;
        }
        assert!(last < 1e-8);
    }

    #[test]
    fn error_paths() {
        assert!(matches!(
            supervised_loss(&[7], &[vec![0.0; 3]]),
            Err(Error::LabelOutOfRange { label: 7, .. })
        ));
        let s = ms(&[1, 1]);
        assert!(dllp_loss(&s, &vec![vec![0.0; 3]; 2]).is_err());
        assert!(weighted_instance_loss(&[vec![0.0; 2]], &[vec![0.9, 0.9]], LossKind::Rc).is_err());
        // Exact path refusal propagates.
        let big = ms(&[40, 40, 40, 40]);
        let rows = vec![vec![0.25; 4]; 160];
        let logits = vec![vec![0.0; 4]; 160];
        assert!(matches!(
            rc_loss(&big, &rows, &logits, 1000),
            Err(Error::StateSpaceExceeded { .. })
        ));
    }

    #[test]
    fn losses_are_nonnegative_and_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..100 {
            let c = rng.gen_range(2..=5);
            let k = rng.gen_range(1..=5);
            let labels: Vec<usize> = (0..k).map(|_| rng.gen_range(0..c)).collect();
            let s = LabelMultiset::from_labels(&labels, c).unwrap();
            let rows: Vec<Vec<f64>> = (0..k)
                .map(|_| {
                    crate::weights::renormalize_over_support(&random_rows(&mut rng, 1, c)[0], &s)
                        .unwrap()
                })
                .collect();
            let logits = random_logits(&mut rng, k, c);
            for r in [
                rc_loss(&s, &rows, &logits, 1 << 24).unwrap(),
                rc_approx_loss(&s, &rows, &logits, default_temperature(k)).unwrap(),
                rc_const_loss(&s, &rows, &logits).unwrap(),
                proden_loss(&rows, &logits).unwrap(),
                dllp_loss(&s, &logits).unwrap(),
                supervised_loss(&labels, &logits).unwrap(),
            ] {
                assert!(r.loss.is_finite() && r.loss >= 0.0, "{:?}", r.kind);
                for row in &r.logit_grads {
                    assert!(row.iter().all(|x| x.is_finite()));
                }
            }
        }
    }
}
