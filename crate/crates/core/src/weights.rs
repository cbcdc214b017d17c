//! Per-instance label-weight tables.
//!
//! The table holds one probability row per (bag, instance): the current
//! estimate of that instance's label distribution, restricted to the bag's
//! support. The training loop reads rows as constants when assembling a
//! minibatch loss and rewrites them from fresh model predictions after the
//! optimizer step.

use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::multiset::LabelMultiset;

/// Mass threshold below which a support restriction is considered degenerate.
pub const DEGENERATE_MASS: f64 = 1e-30;

/// Floor applied to denominators when computing KL divergences.
const KL_CLAMP: f64 = 1e-12;

/// Restricts a probability row to the support of `s` and renormalizes.
///
/// Errors with [`Error::DegenerateSupport`] when the mass on the support is
/// below [`DEGENERATE_MASS`]; the table falls back to the initialization row
/// in that case.
pub fn renormalize_over_support(probs: &[f64], s: &LabelMultiset) -> Result<Vec<f64>> {
    if probs.len() != s.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "{} probabilities for {} classes",
            probs.len(),
            s.num_classes()
        )));
    }
    let mass: f64 = s.support().map(|c| probs[c]).sum();
    // NaN mass is degenerate too.
    if mass < DEGENERATE_MASS || mass.is_nan() {
        return Err(Error::DegenerateSupport { mass });
    }
    let mut row = vec![0.0; probs.len()];
    for c in s.support() {
        row[c] = probs[c] / mass;
    }
    Ok(row)
}

#[derive(Debug, Clone, PartialEq)]
struct BagWeights {
    multiset: LabelMultiset,
    rows: Vec<Vec<f64>>,
}

/// Label-weight rows for every instance of every bag.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    bags: Vec<BagWeights>,
}

impl WeightTable {
    /// One count-proportional row per instance: `row[y] = count_S(y) / K`.
    /// Coincides with a uniform split over the bag's labels when they are
    /// distinct and stays a valid distribution when they are not.
    pub fn init(multisets: &[LabelMultiset]) -> Self {
        let bags = multisets
            .iter()
            .map(|s| BagWeights {
                rows: vec![s.proportions(); s.size()],
                multiset: s.clone(),
            })
            .collect();
        Self { bags }
    }

    pub fn num_bags(&self) -> usize {
        self.bags.len()
    }

    pub fn num_rows(&self) -> usize {
        self.bags.iter().map(|b| b.rows.len()).sum()
    }

    pub fn bag_rows(&self, bag: usize) -> &[Vec<f64>] {
        &self.bags[bag].rows
    }

    pub fn bag_multiset(&self, bag: usize) -> &LabelMultiset {
        &self.bags[bag].multiset
    }

    /// Rewrites one bag's rows from model probabilities, renormalized over
    /// the bag support. Returns how many instances fell back to the
    /// initialization row because the support mass was degenerate.
    pub fn update_bag(&mut self, bag: usize, probs: &[Vec<f64>]) -> Result<usize> {
        let entry = &mut self.bags[bag];
        if probs.len() != entry.rows.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} probability rows for a bag of size {}",
                probs.len(),
                entry.rows.len()
            )));
        }
        for (k, p) in probs.iter().enumerate() {
            let sum: f64 = p.iter().sum();
            if p.iter().any(|&x| !x.is_finite() || x < 0.0) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::ShapeMismatch(format!(
                    "instance {k}: probabilities do not form a distribution (sum {sum})"
                )));
            }
        }
        let mut fallbacks = 0;
        for (k, p) in probs.iter().enumerate() {
            match renormalize_over_support(p, &entry.multiset) {
                Ok(row) => entry.rows[k] = row,
                Err(Error::DegenerateSupport { mass }) => {
                    log::warn!(
                        "bag {bag} instance {k}: support mass {mass:.3e} degenerate, \
                         reset to count-proportional row"
                    );
                    entry.rows[k] = entry.multiset.proportions();
                    fallbacks += 1;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(fallbacks)
    }

    /// Mean over all instance rows of `KL(self row || prev row)`, the
    /// epoch-over-epoch weight-update magnitude. Terms with a zero numerator
    /// contribute nothing; denominators are floored at 1e-12.
    pub fn epoch_kl(&self, prev: &WeightTable) -> Result<f64> {
        if self.bags.len() != prev.bags.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} bags vs {}",
                self.bags.len(),
                prev.bags.len()
            )));
        }
        let mut total = 0.0;
        let mut rows = 0usize;
        for (b, (cur, old)) in self.bags.iter().zip(&prev.bags).enumerate() {
            if cur.rows.len() != old.rows.len() || cur.multiset != old.multiset {
                return Err(Error::ShapeMismatch(format!("bag {b} structure differs")));
            }
            for (new_row, old_row) in cur.rows.iter().zip(&old.rows) {
                let mut kl = 0.0;
                for (&p, &q) in new_row.iter().zip(old_row) {
                    if p > 0.0 {
                        kl += p * (p / q.max(KL_CLAMP)).ln();
                    }
                }
                // Negative values can only be rounding residue.
                total += kl.max(0.0);
                rows += 1;
            }
        }
        Ok(total / rows as f64)
    }

    /// Debug dump: one line per instance (bags in order), one column per
    /// class, space separated.
    pub fn dump(&self, mut w: impl Write) -> io::Result<()> {
        for bag in &self.bags {
            for row in &bag.rows {
                let mut first = true;
                for x in row {
                    if !first {
                        write!(w, " ")?;
                    }
                    write!(w, "{x}")?;
                    first = false;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}
