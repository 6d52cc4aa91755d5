//! Symmetric-group machinery in one-line notation with 1-based slots.
//!
//! `T_i` acting on a permutation interchanges the entries in slots `i` and
//! `i + 1`. Transposition words apply rightmost factor first.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{AsepError, Result};

/// A permutation of `1..=N`; `entries[i - 1]` is `σ(i)`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation {
    entries: Vec<usize>,
}

impl Permutation {
    pub fn new(entries: Vec<usize>) -> Result<Self> {
        let n = entries.len();
        let mut seen = vec![false; n];
        for &e in &entries {
            if e == 0 || e > n || seen[e - 1] {
                return Err(AsepError::InvalidPermutation(entries));
            }
            seen[e - 1] = true;
        }
        Ok(Self { entries })
    }

    pub fn identity(n: usize) -> Self {
        Self { entries: (1..=n).collect() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[usize] {
        &self.entries
    }

    pub fn is_identity(&self) -> bool {
        self.entries.iter().enumerate().all(|(i, &e)| e == i + 1)
    }

    /// `σ(i)` for a 1-based slot `i`.
    #[inline]
    pub fn at(&self, i: usize) -> usize {
        self.entries[i - 1]
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.len()];
        for (slot, &e) in self.entries.iter().enumerate() {
            inv[e - 1] = slot + 1;
        }
        Self { entries: inv }
    }

    /// `(self ∘ other)(i) = self(other(i))`.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        if self.len() != other.len() {
            return Err(AsepError::SizeMismatch { expected: self.len(), got: other.len() });
        }
        Ok(Self { entries: other.entries.iter().map(|&i| self.at(i)).collect() })
    }

    /// `T_i σ`: entries in slots `i` and `i + 1` interchanged.
    pub fn swap_slots(&self, i: usize) -> Result<Self> {
        self.check_adjacent(i)?;
        let mut entries = self.entries.clone();
        entries.swap(i - 1, i);
        Ok(Self { entries })
    }

    pub(crate) fn check_adjacent(&self, i: usize) -> Result<()> {
        if i == 0 || i >= self.len() {
            return Err(AsepError::IndexOutOfRange { index: i, max: self.len().saturating_sub(1) });
        }
        Ok(())
    }

    /// Pairs `(i, j)` with `i > j` and `σ⁻¹(i) < σ⁻¹(j)`, sorted.
    pub fn inversions(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for a in 0..self.len() {
            for b in a + 1..self.len() {
                let (i, j) = (self.entries[a], self.entries[b]);
                if i > j {
                    out.push((i, j));
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Coxeter length (number of inversions).
    pub fn length(&self) -> usize {
        let mut count = 0;
        for a in 0..self.len() {
            for b in a + 1..self.len() {
                if self.entries[a] > self.entries[b] {
                    count += 1;
                }
            }
        }
        count
    }

    /// `ι(k) = #{j < k : σ⁻¹(j) > σ⁻¹(k)}`, the number of inversions `(k, j)`.
    pub fn iota(&self, k: usize) -> Result<usize> {
        if k == 0 || k > self.len() {
            return Err(AsepError::IndexOutOfRange { index: k, max: self.len() });
        }
        let inv = self.inverse();
        Ok((1..k).filter(|&j| inv.at(j) > inv.at(k)).count())
    }

    /// Reduced word obtained by bringing `1, 2, …` to their slots in turn.
    ///
    /// The block for `k` is the descending run `ℓ_k, ℓ_k − 1, …, k` with
    /// `ℓ_k = σ⁻¹(k) + ι(k) − 1`; blocks for larger `k` sit further right.
    pub fn canonical_word(&self) -> TranspositionWord {
        let n = self.len();
        let inv = self.inverse();
        let mut indices = Vec::with_capacity(self.length());
        for k in 1..n {
            let iota = (1..k).filter(|&j| inv.at(j) > inv.at(k)).count();
            let top = inv.at(k) + iota - 1;
            indices.extend((k..=top).rev());
        }
        TranspositionWord { indices }
    }

    /// All permutations of `1..=n` in lexicographic order of one-line notation.
    pub fn all(n: usize) -> LexPermutations {
        LexPermutations { next: Some((1..=n).collect()) }
    }

    /// Position of this permutation in [`Permutation::all`] (Lehmer code).
    pub fn lex_rank(&self) -> usize {
        let n = self.len();
        let mut rank = 0;
        for a in 0..n {
            let smaller = self.entries[a + 1..].iter().filter(|&&e| e < self.entries[a]).count();
            rank = rank * (n - a) + smaller;
        }
        rank
    }
}

impl fmt::Debug for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, e) in self.entries.iter().enumerate() {
            if k > 0 {
                write!(f, " ")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, ")")
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = AsepError;

    fn try_from(entries: Vec<usize>) -> Result<Self> {
        Self::new(entries)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.entries
    }
}

pub struct LexPermutations {
    next: Option<Vec<usize>>,
}

impl Iterator for LexPermutations {
    type Item = Permutation;

    fn next(&mut self) -> Option<Permutation> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        let n = succ.len();
        if n >= 2 {
            if let Some(a) = (0..n - 1).rev().find(|&a| succ[a] < succ[a + 1]) {
                let b = (a + 1..n).rev().find(|&b| succ[b] > succ[a]).unwrap();
                succ.swap(a, b);
                succ[a + 1..].reverse();
                self.next = Some(succ);
            }
        }
        Some(Permutation { entries: current })
    }
}

pub fn factorial(n: usize) -> usize {
    (1..=n).product()
}

/// A product `T_{j_1} T_{j_2} ⋯ T_{j_m}` of adjacent transpositions.
///
/// Applied to a permutation, `T_{j_m}` acts first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TranspositionWord {
    pub indices: Vec<usize>,
}

impl TranspositionWord {
    pub fn new(indices: Vec<usize>) -> Self {
        Self { indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Applies the word to `start`, rightmost factor first.
    pub fn apply_to(&self, start: &Permutation) -> Result<Permutation> {
        let mut p = start.clone();
        for &i in self.indices.iter().rev() {
            p = p.swap_slots(i)?;
        }
        Ok(p)
    }

    /// The permutation `T_{j_1} ⋯ T_{j_m} e` in `𝕊_n`.
    pub fn evaluate(&self, n: usize) -> Result<Permutation> {
        self.apply_to(&Permutation::identity(n))
    }

    pub fn is_reduced(&self, n: usize) -> Result<bool> {
        Ok(self.evaluate(n)?.length() == self.len())
    }
}

/// Partitions `{σ ∈ 𝕊_n : σ(n) ≠ n}` by the set `B` of `i` such that `(n, i)`
/// is an inversion of `σ`.
pub fn classify_by_b(n: usize) -> Result<BTreeMap<BTreeSet<usize>, Vec<Permutation>>> {
    if n < 2 {
        return Err(AsepError::Precondition(format!("classification needs N >= 2, got {n}")));
    }
    let mut classes: BTreeMap<BTreeSet<usize>, Vec<Permutation>> = BTreeMap::new();
    for sigma in Permutation::all(n) {
        if sigma.at(n) == n {
            continue;
        }
        classes.entry(b_set(&sigma)).or_default().push(sigma);
    }
    Ok(classes)
}

/// `B(σ) = {i : (N, i) is an inversion of σ}`.
pub fn b_set(sigma: &Permutation) -> BTreeSet<usize> {
    let n = sigma.len();
    let pos_n = sigma.inverse().at(n);
    sigma.entries()[pos_n..].iter().copied().collect()
}
