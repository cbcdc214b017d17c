//! Multiset algebra for bag label sets.
//!
//! A bag of `K` instances is annotated with a [`LabelMultiset`]: per-class
//! counts of the true labels inside the bag, which is the only supervision
//! available. This module provides exact counting (arbitrary precision, the
//! space of size-`K` multisets over `C` classes overflows `u64` well before
//! `K = 128`, `C = 10`), enumeration of the distinct label assignments
//! compatible with a multiset, and proportion vectors.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};

use crate::error::{Error, Result};

/// Default cap on the number of tuples [`LabelMultiset::enumerate_assignments`]
/// will materialize before refusing.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

/// Per-class counts of the labels in one bag.
///
/// `counts[c]` is the number of instances of class `c`; the bag size `K` is
/// the sum. A freshly constructed multiset is non-empty; the one degenerate
/// empty state (`K = 0`) can only be reached through [`Self::remove_label`],
/// which leave-one-out computations rely on.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMultiset {
    counts: Vec<u32>,
    total: u32,
}

impl LabelMultiset {
    /// Builds a multiset from per-class counts. Requires at least two classes
    /// and a non-empty support.
    pub fn new(counts: Vec<u32>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::InvalidMultiset(format!(
                "need at least 2 classes, got {}",
                counts.len()
            )));
        }
        let total: u32 = counts.iter().sum();
        if total == 0 {
            return Err(Error::InvalidMultiset("empty label multiset".into()));
        }
        Ok(Self { counts, total })
    }

    /// Builds the multiset of a label list over `num_classes` classes.
    pub fn from_labels(labels: &[usize], num_classes: usize) -> Result<Self> {
        let mut counts = vec![0u32; num_classes];
        for &y in labels {
            if y >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    num_classes,
                });
            }
            counts[y] += 1;
        }
        Self::new(counts)
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn count(&self, class: usize) -> u32 {
        self.counts[class]
    }

    /// Bag size `K`.
    pub fn size(&self) -> usize {
        self.total as usize
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Classes with a positive count, ascending.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(c, _)| c)
    }

    pub fn contains(&self, class: usize) -> bool {
        class < self.counts.len() && self.counts[class] > 0
    }

    /// Removes one occurrence of `class`. The result may be empty when the
    /// last label is removed; that degenerate state is valid only as a
    /// leave-one-out intermediate.
    pub fn remove_label(&self, class: usize) -> Result<LabelMultiset> {
        if !self.contains(class) {
            return Err(Error::AbsentLabel { class });
        }
        let mut counts = self.counts.clone();
        counts[class] -= 1;
        Ok(LabelMultiset {
            counts,
            total: self.total - 1,
        })
    }

    /// Class-proportion vector `counts / K`. The degenerate empty multiset
    /// yields all zeros.
    pub fn proportions(&self) -> Vec<f64> {
        if self.total == 0 {
            return vec![0.0; self.counts.len()];
        }
        let k = f64::from(self.total);
        self.counts.iter().map(|&n| f64::from(n) / k).collect()
    }

    /// Number of distinct ordered label tuples whose multiset is `self`:
    /// the multinomial coefficient `K! / prod_c counts[c]!`.
    pub fn assignment_count(&self) -> BigUint {
        let mut result = BigUint::one();
        let mut placed = 0u32;
        // prod over classes of C(placed + count_c, count_c)
        for &n in &self.counts {
            for i in 1..=n {
                placed += 1;
                result = result * BigUint::from(placed) / BigUint::from(i);
            }
        }
        result
    }

    /// Enumerates the distinct permutations of the multiset's labels in
    /// lexicographic order, without duplicates.
    ///
    /// Refuses with [`Error::CapExceeded`] when the assignment count is above
    /// `cap`; callers switch to the dynamic-programming or approximate path.
    pub fn enumerate_assignments_with_cap(&self, cap: u64) -> Result<Vec<Vec<usize>>> {
        let count = self.assignment_count();
        if count > BigUint::from(cap) {
            return Err(Error::CapExceeded {
                count: count.to_string(),
                cap,
            });
        }
        let mut out = Vec::with_capacity(count.to_usize().unwrap_or(0));
        let mut remaining = self.counts.clone();
        let mut prefix = Vec::with_capacity(self.size());
        fill_assignments(&mut remaining, &mut prefix, self.size(), &mut out);
        Ok(out)
    }

    /// [`Self::enumerate_assignments_with_cap`] with [`DEFAULT_ENUMERATION_CAP`].
    pub fn enumerate_assignments(&self) -> Result<Vec<Vec<usize>>> {
        self.enumerate_assignments_with_cap(DEFAULT_ENUMERATION_CAP)
    }
}

fn fill_assignments(
    remaining: &mut [u32],
    prefix: &mut Vec<usize>,
    k: usize,
    out: &mut Vec<Vec<usize>>,
) {
    if prefix.len() == k {
        out.push(prefix.clone());
        return;
    }
    // Trying classes in ascending order yields lexicographic output.
    for c in 0..remaining.len() {
        if remaining[c] > 0 {
            remaining[c] -= 1;
            prefix.push(c);
            fill_assignments(remaining, prefix, k, out);
            prefix.pop();
            remaining[c] += 1;
        }
    }
}

/// Number of size-`k` label multisets over `c` classes:
/// `(k + c - 1)! / (k! (c - 1)!)`, computed exactly.
pub fn multiset_space_size(k: usize, c: usize) -> Result<BigUint> {
    if k == 0 {
        return Err(Error::InvalidMultiset("bag size K must be positive".into()));
    }
    if c < 2 {
        return Err(Error::InvalidMultiset(format!(
            "need at least 2 classes, got {c}"
        )));
    }
    // C(k + c - 1, c - 1) by the multiplicative rule; every partial quotient
    // is an exact integer.
    let mut result = BigUint::one();
    for i in 1..=(c - 1) {
        result = result * BigUint::from(k + i) / BigUint::from(i);
    }
    Ok(result)
}
